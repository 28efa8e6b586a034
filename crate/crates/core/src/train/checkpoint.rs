//! Self-describing binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "SKYSEGCK"
//! version   u32      currently 1
//! spec      u32 len + UTF-8 network spec document (TOML)
//! epoch     u32
//! params    u32 count, then per array:
//!             u16 name len + UTF-8 name
//!             u8 ndim + u32 dims...
//!             f32 data (little-endian, row-major)
//! buffers   same encoding (batch-norm running statistics)
//! optimizer u8 present flag; if 1: same encoding (momentum buffers)
//! history   u32 len + UTF-8 training history CSV
//! ```
//!
//! Save -> load round-trips are bitwise identical for every array.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, ArrayViewMutD, IxDyn};

use super::sgd::SgdState;
use super::TrainHistory;
use crate::error::{Error, Result};
use crate::model::{Network, NetworkSpec};
use crate::nn::param::{BufferVisitor, ParamVisitor, Parametrized};

const MAGIC: &[u8; 8] = b"SKYSEGCK";
const VERSION: u32 = 1;

#[derive(Clone)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl std::fmt::Debug for NamedArray {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NamedArray")
            .field("name", &self.name)
            .field("shape", &self.shape)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub epoch: u32,
    pub params: Vec<NamedArray>,
    pub buffers: Vec<NamedArray>,
    pub velocity: Option<Vec<NamedArray>>,
    pub history_csv: String,
}

struct Collector(Vec<NamedArray>);

impl ParamVisitor<f32> for Collector {
    fn visit(&mut self, name: &str, value: ArrayViewMutD<'_, f32>, _: ArrayViewMutD<'_, f32>) {
        self.0.push(NamedArray {
            name: name.to_string(),
            shape: value.shape().to_vec(),
            data: value.iter().copied().collect(),
        });
    }
}

impl BufferVisitor<f32> for Collector {
    fn visit(&mut self, name: &str, value: ArrayViewMutD<'_, f32>) {
        self.0.push(NamedArray {
            name: name.to_string(),
            shape: value.shape().to_vec(),
            data: value.iter().copied().collect(),
        });
    }
}

impl Checkpoint {
    /// Snapshots the network (and optionally the optimizer) into a container.
    pub fn capture(
        net: &mut Network<f32>,
        epoch: u32,
        history: &TrainHistory,
        state: Option<&SgdState<f32>>,
    ) -> Checkpoint {
        let mut params = Collector(Vec::new());
        net.visit_params("", &mut params);
        let mut buffers = Collector(Vec::new());
        net.visit_buffers("", &mut buffers);
        let velocity = state.map(|s| {
            s.velocity
                .iter()
                .map(|(name, v)| NamedArray {
                    name: name.clone(),
                    shape: v.shape().to_vec(),
                    data: v.iter().copied().collect(),
                })
                .collect()
        });
        Checkpoint {
            spec: net.spec.clone(),
            epoch,
            params: params.0,
            buffers: buffers.0,
            velocity,
            history_csv: history.to_csv(),
        }
    }

    /// Rebuilds the network (and optimizer state, when present) from the
    /// embedded spec and arrays. Any unknown, missing or misshapen array is
    /// a [`Error::CheckpointMismatch`].
    pub fn restore(&self) -> Result<(Network<f32>, Option<SgdState<f32>>)> {
        let mut net = Network::<f32>::from_spec(self.spec.clone(), 0)?;
        let mut filler = Filler::new("parameter", &self.params);
        net.visit_params("", &mut filler);
        filler.finish()?;
        let mut filler = Filler::new("buffer", &self.buffers);
        net.visit_buffers("", &mut filler);
        filler.finish()?;
        let state = match &self.velocity {
            None => None,
            Some(vel) => {
                let velocity = vel
                    .iter()
                    .map(|na| {
                        let arr =
                            ArrayD::from_shape_vec(IxDyn(&na.shape), na.data.clone()).map_err(
                                |e| {
                                    Error::CheckpointMismatch(format!(
                                        "velocity {}: {e}",
                                        na.name
                                    ))
                                },
                            )?;
                        Ok((na.name.clone(), arr))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(SgdState { velocity })
            }
        };
        Ok((net, state))
    }

    pub fn history(&self) -> Result<TrainHistory> {
        TrainHistory::from_csv(&self.history_csv)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        let spec_text = self.spec.to_toml();
        write_bytes(&mut buf, spec_text.as_bytes());
        buf.extend_from_slice(&self.epoch.to_le_bytes());
        write_section(&mut buf, &self.params);
        write_section(&mut buf, &self.buffers);
        match &self.velocity {
            Some(vel) => {
                buf.push(1);
                write_section(&mut buf, vel);
            }
            None => buf.push(0),
        }
        write_bytes(&mut buf, self.history_csv.as_bytes());
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&buf).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::io(path, e))?
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        let mut r = Reader {
            bytes: &bytes,
            at: 0,
        };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(Error::CorruptCheckpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::CorruptCheckpoint(format!(
                "unsupported version {version}"
            )));
        }
        let spec_text = r.string32()?;
        let spec = NetworkSpec::from_toml(&spec_text)
            .map_err(|e| Error::CorruptCheckpoint(format!("embedded spec: {e}")))?;
        let epoch = r.u32()?;
        let params = read_section(&mut r)?;
        let buffers = read_section(&mut r)?;
        let velocity = match r.u8()? {
            0 => None,
            1 => Some(read_section(&mut r)?),
            other => {
                return Err(Error::CorruptCheckpoint(format!(
                    "bad optimizer flag {other}"
                )))
            }
        };
        let history_csv = r.string32()?;
        if r.at != bytes.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.at
            )));
        }
        Ok(Checkpoint {
            spec,
            epoch,
            params,
            buffers,
            velocity,
            history_csv,
        })
    }
}

/// Writes a network-state checkpoint in one call.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

struct Filler<'a> {
    what: &'static str,
    arrays: &'a [NamedArray],
    index: usize,
    error: Option<Error>,
}

impl<'a> Filler<'a> {
    fn new(what: &'static str, arrays: &'a [NamedArray]) -> Self {
        Filler {
            what,
            arrays,
            index: 0,
            error: None,
        }
    }

    fn fill(&mut self, name: &str, mut value: ArrayViewMutD<'_, f32>) {
        if self.error.is_some() {
            return;
        }
        let Some(na) = self.arrays.get(self.index) else {
            self.error = Some(Error::CheckpointMismatch(format!(
                "network expects {} {name} but the container has only {} {}s",
                self.what,
                self.arrays.len(),
                self.what
            )));
            return;
        };
        if na.name != name || na.shape != value.shape() {
            self.error = Some(Error::CheckpointMismatch(format!(
                "{} {} in container is {:?} {:?}, network expects {name:?} {:?}",
                self.what,
                self.index,
                na.name,
                na.shape,
                value.shape()
            )));
            return;
        }
        for (dst, &src) in value.iter_mut().zip(na.data.iter()) {
            *dst = src;
        }
        self.index += 1;
    }

    fn finish(self) -> Result<()> {
        if let Some(e) = self.error {
            return Err(e);
        }
        if self.index != self.arrays.len() {
            return Err(Error::CheckpointMismatch(format!(
                "container has {} {}s but the network consumed {}",
                self.arrays.len(),
                self.what,
                self.index
            )));
        }
        Ok(())
    }
}

impl ParamVisitor<f32> for Filler<'_> {
    fn visit(&mut self, name: &str, value: ArrayViewMutD<'_, f32>, _: ArrayViewMutD<'_, f32>) {
        self.fill(name, value);
    }
}

impl BufferVisitor<f32> for Filler<'_> {
    fn visit(&mut self, name: &str, value: ArrayViewMutD<'_, f32>) {
        self.fill(name, value);
    }
}

fn write_bytes(buf: &mut Vec<u8>, bytes: &[u8]) {
    buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(bytes);
}

fn write_section(buf: &mut Vec<u8>, arrays: &[NamedArray]) {
    buf.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for na in arrays {
        buf.extend_from_slice(&(na.name.len() as u16).to_le_bytes());
        buf.extend_from_slice(na.name.as_bytes());
        buf.push(na.shape.len() as u8);
        for &d in &na.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &na.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.at
            )));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string32(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|e| Error::CorruptCheckpoint(format!("invalid UTF-8: {e}")))
    }
}

fn read_section(r: &mut Reader<'_>) -> Result<Vec<NamedArray>> {
    let count = r.u32()? as usize;
    let mut arrays = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|e| Error::CorruptCheckpoint(format!("invalid UTF-8 name: {e}")))?;
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = r.take(len * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        arrays.push(NamedArray { name, shape, data });
    }
    Ok(arrays)
}
