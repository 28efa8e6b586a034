//! Evaluation report containers and their CSV / JSON / plain-text renderings.

use serde::Serialize;

use crate::metrics::{PadAggregate, PadResult, SegmentationCounts, SegmentationMetrics};

#[derive(Debug, Clone, Serialize)]
pub struct PerImageSeg {
    pub name: String,
    pub counts: SegmentationCounts,
    pub metrics: SegmentationMetrics,
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentationReport {
    /// Micro-average: counts summed over every pixel of every image.
    pub counts: SegmentationCounts,
    pub metrics: SegmentationMetrics,
    pub per_image: Vec<PerImageSeg>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerImagePad {
    pub name: String,
    pub result: PadResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct SkylineReport {
    /// `None` when every image was excluded.
    pub aggregate: Option<PadAggregate>,
    pub per_image: Vec<PerImagePad>,
    /// Images with no mutually defined skyline column.
    pub excluded: Vec<String>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn opt_pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.3}", x * 100.0))
        .unwrap_or_else(|| "--".into())
}

impl SegmentationReport {
    pub fn per_image_csv(&self) -> String {
        let mut out =
            String::from("name,tp,fp,tn,fn,accuracy,precision,recall,dice,iou,mcr\n");
        for row in &self.per_image {
            let c = &row.counts;
            let m = &row.metrics;
            out.push_str(&format!(
                "{},{},{},{},{},{:.6},{},{},{},{},{:.6}\n",
                row.name,
                c.tp,
                c.fp,
                c.tn,
                c.fn_,
                m.accuracy,
                opt(m.precision),
                opt(m.recall),
                opt(m.dice),
                opt(m.iou),
                m.mcr
            ));
        }
        out
    }

    /// Plain-text table with the usual segmentation column headers.
    pub fn text_table(&self, label: &str) -> String {
        let m = &self.metrics;
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {:>12} {:>13} {:>10} {:>14} {:>8}\n",
            "Method", "Accuracy(%)", "Precision(%)", "Recall(%)", "Dice-Score(%)", "IoU"
        ));
        out.push_str(&format!(
            "{:<16} {:>12} {:>13} {:>10} {:>14} {:>8}\n",
            label,
            format!("{:.3}", m.accuracy * 100.0),
            opt_pct(m.precision),
            opt_pct(m.recall),
            opt_pct(m.dice),
            m.iou.map(|v| format!("{v:.4}")).unwrap_or_else(|| "--".into())
        ));
        out
    }
}

impl SkylineReport {
    pub fn per_image_csv(&self) -> String {
        let mut out = String::from("name,pad,evaluated_columns,skipped_columns\n");
        for row in &self.per_image {
            out.push_str(&format!(
                "{},{:.6},{},{}\n",
                row.name, row.result.e, row.result.evaluated_columns, row.result.skipped_columns
            ));
        }
        for name in &self.excluded {
            out.push_str(&format!("{name},excluded,,\n"));
        }
        out
    }

    pub fn text_table(&self, label: &str) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {:>8} {:>8} {:>8} {:>8}\n",
            "Method", "mu", "sigma", "Min", "Max"
        ));
        match &self.aggregate {
            Some(a) => out.push_str(&format!(
                "{:<16} {:>8.2} {:>8.2} {:>8.2} {:>8.2}\n",
                label, a.mu, a.sigma, a.min, a.max
            )),
            None => out.push_str(&format!(
                "{label:<16} all {} images excluded (no overlapping columns)\n",
                self.excluded.len()
            )),
        }
        if !self.excluded.is_empty() {
            out.push_str(&format!("excluded images: {}\n", self.excluded.len()));
        }
        out
    }
}

/// Flat JSON summary combining the two evaluations. Keys:
/// `accuracy, precision, recall, dice, iou, mcr` for segmentation and
/// `mu, sigma, min, max` for skyline distance, plus bookkeeping counts.
pub fn summary_json(
    seg: Option<&SegmentationReport>,
    sky: Option<&SkylineReport>,
) -> serde_json::Value {
    let mut map = serde_json::Map::new();
    let num = |v: f64| serde_json::json!(v);
    let opt_num =
        |v: Option<f64>| v.map(|x| serde_json::json!(x)).unwrap_or(serde_json::Value::Null);
    if let Some(seg) = seg {
        let m = &seg.metrics;
        map.insert("accuracy".into(), num(m.accuracy));
        map.insert("precision".into(), opt_num(m.precision));
        map.insert("recall".into(), opt_num(m.recall));
        map.insert("dice".into(), opt_num(m.dice));
        map.insert("iou".into(), opt_num(m.iou));
        map.insert("mcr".into(), num(m.mcr));
        map.insert("images".into(), serde_json::json!(seg.per_image.len()));
    }
    if let Some(sky) = sky {
        let agg = sky.aggregate.as_ref();
        map.insert("mu".into(), opt_num(agg.map(|a| a.mu)));
        map.insert("sigma".into(), opt_num(agg.map(|a| a.sigma)));
        map.insert("min".into(), opt_num(agg.map(|a| a.min)));
        map.insert("max".into(), opt_num(agg.map(|a| a.max)));
        map.insert(
            "evaluated_images".into(),
            serde_json::json!(sky.per_image.len()),
        );
        map.insert(
            "excluded_images".into(),
            serde_json::json!(sky.excluded.len()),
        );
    }
    serde_json::Value::Object(map)
}
