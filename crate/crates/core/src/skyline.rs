//! Skyline extraction from binary sky masks.
//!
//! A skyline is the upper boundary between sky (mask value 1) and non-sky
//! (mask value 0), stored as one row index per image column. Columns that
//! contain no non-sky pixel are undefined and carry an explicit sentinel,
//! never a fake row index; the CSV encoding writes them as `-1`.
//!
//! Two extraction routes exist and agree on clean masks: a direct
//! per-column scan, and edge detection (Sobel or Canny) followed by a
//! topmost-edge-pixel scan. Edge maps are canonicalized to the non-sky side
//! of the boundary so that both routes report the same row.

use std::str::FromStr;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Per-column skyline row indices. `None` marks an all-sky column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkylineVector {
    rows: Vec<Option<u32>>,
    height: u32,
}

impl SkylineVector {
    pub fn from_rows(rows: Vec<Option<u32>>, height: u32) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data("skyline vector must have positive width".into()));
        }
        if let Some(bad) = rows.iter().flatten().find(|&&r| r >= height) {
            return Err(Error::Data(format!(
                "skyline row {bad} outside image of height {height}"
            )));
        }
        Ok(SkylineVector { rows, height })
    }

    pub fn width(&self) -> usize {
        self.rows.len()
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn rows(&self) -> &[Option<u32>] {
        &self.rows
    }

    pub fn get(&self, column: usize) -> Option<u32> {
        self.rows.get(column).copied().flatten()
    }

    pub fn defined_count(&self) -> usize {
        self.rows.iter().filter(|r| r.is_some()).count()
    }

    /// Mirror left-right; flipping the mask columns flips the skyline.
    pub fn flip_lr(&self) -> SkylineVector {
        let mut rows = self.rows.clone();
        rows.reverse();
        SkylineVector {
            rows,
            height: self.height,
        }
    }

    /// One CSV record: `width,height,r0,...,r{W-1}` with `-1` for undefined.
    pub fn to_csv_record(&self) -> String {
        let mut out = format!("{},{}", self.width(), self.height);
        for r in &self.rows {
            match r {
                Some(v) => out.push_str(&format!(",{v}")),
                None => out.push_str(",-1"),
            }
        }
        out
    }

    pub fn from_csv_record(line: &str) -> Result<Self> {
        let mut fields = line.trim().split(',');
        let parse = |s: Option<&str>, what: &str| -> Result<i64> {
            s.ok_or_else(|| Error::Data(format!("skyline record missing {what}")))?
                .trim()
                .parse::<i64>()
                .map_err(|e| Error::Data(format!("skyline record: bad {what}: {e}")))
        };
        let width = parse(fields.next(), "width")?;
        let height = parse(fields.next(), "height")?;
        if width <= 0 || height <= 0 {
            return Err(Error::Data("skyline record: non-positive dims".into()));
        }
        let mut rows = Vec::with_capacity(width as usize);
        for _ in 0..width {
            let v = parse(fields.next(), "column entry")?;
            rows.push(if v < 0 { None } else { Some(v as u32) });
        }
        if fields.next().is_some() {
            return Err(Error::Data("skyline record: trailing fields".into()));
        }
        SkylineVector::from_rows(rows, height as u32)
    }
}

/// Edge extraction algorithm applied to a mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeMethod {
    Canny,
    Sobel,
}

impl FromStr for EdgeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canny" => Ok(EdgeMethod::Canny),
            "sobel" => Ok(EdgeMethod::Sobel),
            other => Err(Error::Config(format!(
                "unknown edge method {other:?}; expected canny or sobel"
            ))),
        }
    }
}

/// How to turn a mask into a skyline vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkylineMethod {
    /// Direct per-column scan for the first non-sky pixel.
    Scan,
    Sobel,
    Canny,
}

impl FromStr for SkylineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scan" => Ok(SkylineMethod::Scan),
            "sobel" => Ok(SkylineMethod::Sobel),
            "canny" => Ok(SkylineMethod::Canny),
            other => Err(Error::Config(format!(
                "unknown skyline method {other:?}; expected scan, sobel or canny"
            ))),
        }
    }
}

/// Thresholds for the edge detectors, on unit-normalized gradient magnitude.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EdgeParams {
    /// Gaussian blur width for Canny.
    pub sigma: f64,
    /// Canny hysteresis low threshold.
    pub low: f64,
    /// Canny hysteresis high threshold.
    pub high: f64,
    /// Sobel magnitude threshold.
    pub sobel_threshold: f64,
}

impl Default for EdgeParams {
    fn default() -> Self {
        EdgeParams {
            sigma: 1.0,
            low: 0.1,
            high: 0.2,
            sobel_threshold: 0.1,
        }
    }
}

/// Binary edge image; set pixels lie on the non-sky side of the boundary.
#[derive(Debug, Clone)]
pub struct EdgeMap {
    pub map: Array2<u8>,
    pub method: EdgeMethod,
}

fn check_binary(mask: &Array2<u8>) -> Result<()> {
    if mask.is_empty() {
        return Err(Error::Data("mask must be non-empty".into()));
    }
    if mask.iter().any(|&v| v > 1) {
        return Err(Error::Data(
            "mask must be binary (values 0 and 1 only)".into(),
        ));
    }
    Ok(())
}

/// First non-sky row per column, scanning from the top. All-sky columns are
/// undefined; columns whose topmost pixel is already non-sky report 0.
pub fn skyline_from_mask(mask: &Array2<u8>) -> Result<SkylineVector> {
    check_binary(mask)?;
    let (h, w) = mask.dim();
    if w == 0 || h == 0 {
        return Err(Error::Data("mask must be non-empty".into()));
    }
    let rows = (0..w)
        .map(|c| (0..h).find(|&r| mask[[r, c]] == 0).map(|r| r as u32))
        .collect();
    SkylineVector::from_rows(rows, h as u32)
}

/// Topmost edge pixel per column; columns without edge pixels are undefined.
pub fn skyline_from_edges(edges: &EdgeMap) -> SkylineVector {
    let (h, w) = edges.map.dim();
    let rows = (0..w)
        .map(|c| (0..h).find(|&r| edges.map[[r, c]] == 1).map(|r| r as u32))
        .collect();
    SkylineVector::from_rows(rows, h as u32).expect("edge map has valid dims")
}

/// Extracts the skyline by the requested route.
pub fn skyline_via(
    mask: &Array2<u8>,
    method: SkylineMethod,
    params: &EdgeParams,
) -> Result<SkylineVector> {
    match method {
        SkylineMethod::Scan => skyline_from_mask(mask),
        SkylineMethod::Sobel => Ok(skyline_from_edges(&edge_map(
            mask,
            EdgeMethod::Sobel,
            params,
        )?)),
        SkylineMethod::Canny => Ok(skyline_from_edges(&edge_map(
            mask,
            EdgeMethod::Canny,
            params,
        )?)),
    }
}

/// Marks sky/non-sky transition pixels. Both methods report the transition
/// on the non-sky side, so a clean mask yields the same boundary columns
/// from either.
pub fn edge_map(mask: &Array2<u8>, method: EdgeMethod, params: &EdgeParams) -> Result<EdgeMap> {
    check_binary(mask)?;
    let map = match method {
        EdgeMethod::Sobel => sobel_edges(mask, params.sobel_threshold),
        EdgeMethod::Canny => canny_edges(mask, params),
    };
    Ok(EdgeMap { map, method })
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i - 1
    } else if i >= n {
        2 * n - i - 1
    } else {
        i
    };
    r.clamp(0, n - 1) as usize
}

fn sobel_gradients(img: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = img.dim();
    let mut gx = Array2::<f64>::zeros((h, w));
    let mut gy = Array2::<f64>::zeros((h, w));
    let at = |r: isize, c: isize| img[[reflect(r, h), reflect(c, w)]];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let (tl, tc, tr) = (at(r - 1, c - 1), at(r - 1, c), at(r - 1, c + 1));
            let (ml, mr) = (at(r, c - 1), at(r, c + 1));
            let (bl, bc, br) = (at(r + 1, c - 1), at(r + 1, c), at(r + 1, c + 1));
            gx[[r as usize, c as usize]] = (tr + 2.0 * mr + br) - (tl + 2.0 * ml + bl);
            gy[[r as usize, c as usize]] = (bl + 2.0 * bc + br) - (tl + 2.0 * tc + tr);
        }
    }
    (gx, gy)
}

/// Sobel magnitude thresholding, restricted to non-sky pixels. For a 0/1
/// mask the maximum single-axis response is 4, so magnitude is normalized
/// by `4 * sqrt(2)`.
fn sobel_edges(mask: &Array2<u8>, threshold: f64) -> Array2<u8> {
    let img = mask.mapv(|v| v as f64);
    let (gx, gy) = sobel_gradients(&img);
    let norm = 4.0 * std::f64::consts::SQRT_2;
    let (h, w) = mask.dim();
    let mut edges = Array2::<u8>::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mag = gx[[r, c]].hypot(gy[[r, c]]) / norm;
            if mag >= threshold && mask[[r, c]] == 0 {
                edges[[r, c]] = 1;
            }
        }
    }
    edges
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn blur_separable(img: &Array2<f64>, kernel: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let radius = kernel.len() / 2;
    let mut tmp = Array2::<f64>::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                let cc = reflect(c as isize + i as isize - radius as isize, w);
                acc += kv * img[[r, cc]];
            }
            tmp[[r, c]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                let rr = reflect(r as isize + i as isize - radius as isize, h);
                acc += kv * tmp[[rr, c]];
            }
            out[[r, c]] = acc;
        }
    }
    out
}

/// Canny on a binary mask: blur, gradient, plateau-keeping non-maximum
/// suppression, hysteresis, then restriction to the non-sky side. The
/// plateau rule (`>=` against both neighbors) keeps both pixels of the
/// symmetric step response so the non-sky one survives the final filter.
fn canny_edges(mask: &Array2<u8>, params: &EdgeParams) -> Array2<u8> {
    let (h, w) = mask.dim();
    let img = mask.mapv(|v| v as f64);
    let blurred = blur_separable(&img, &gaussian_kernel(params.sigma));
    let (gx, gy) = sobel_gradients(&blurred);
    let mut mag = Array2::<f64>::zeros((h, w));
    let mut max_mag = 0.0f64;
    for r in 0..h {
        for c in 0..w {
            let m = gx[[r, c]].hypot(gy[[r, c]]);
            mag[[r, c]] = m;
            max_mag = max_mag.max(m);
        }
    }
    let mut edges = Array2::<u8>::zeros((h, w));
    if max_mag <= 0.0 {
        return edges;
    }
    mag.mapv_inplace(|m| m / max_mag);

    // Non-maximum suppression with direction quantized to 4 sectors.
    let get = |m: &Array2<f64>, r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            m[[r as usize, c as usize]]
        }
    };
    let mut ridge = Array2::<f64>::zeros((h, w));
    for r in 0..h as isize {
        for c in 0..w as isize {
            let m = get(&mag, r, c);
            if m <= 0.0 {
                continue;
            }
            let angle = gy[[r as usize, c as usize]].atan2(gx[[r as usize, c as usize]]);
            let sector = ((angle + std::f64::consts::PI) / (std::f64::consts::PI / 4.0)).round()
                as i32
                % 4;
            let (dr, dc) = match sector.rem_euclid(4) {
                0 => (0, 1),  // horizontal gradient -> compare left/right
                1 => (1, 1),  // diagonal
                2 => (1, 0),  // vertical gradient -> compare up/down
                _ => (1, -1), // anti-diagonal
            };
            if m >= get(&mag, r + dr, c + dc) && m >= get(&mag, r - dr, c - dc) {
                ridge[[r as usize, c as usize]] = m;
            }
        }
    }

    // Hysteresis: grow 8-connected weak edges out of strong seeds.
    let mut state = Array2::<u8>::zeros((h, w)); // 0 none, 1 weak, 2 strong
    let mut stack = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let m = ridge[[r, c]];
            if m >= params.high {
                state[[r, c]] = 2;
                stack.push((r, c));
            } else if m >= params.low {
                state[[r, c]] = 1;
            }
        }
    }
    while let Some((r, c)) = stack.pop() {
        for dr in -1isize..=1 {
            for dc in -1isize..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (rr, cc) = (r as isize + dr, c as isize + dc);
                if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                    continue;
                }
                let (rr, cc) = (rr as usize, cc as usize);
                if state[[rr, cc]] == 1 {
                    state[[rr, cc]] = 2;
                    stack.push((rr, cc));
                }
            }
        }
    }
    for r in 0..h {
        for c in 0..w {
            if state[[r, c]] == 2 && mask[[r, c]] == 0 {
                edges[[r, c]] = 1;
            }
        }
    }
    edges
}

/// Segment with the network, then scan the predicted mask: equivalent to
/// `skyline_from_mask(predict_mask(net, image, threshold))`.
pub fn skyline_from_prediction(
    net: &crate::model::Network<f32>,
    image: &ndarray::Array3<f32>,
    threshold: f64,
) -> Result<SkylineVector> {
    let mask = crate::train::predict_mask(net, image, threshold)?;
    skyline_from_mask(&mask)
}
