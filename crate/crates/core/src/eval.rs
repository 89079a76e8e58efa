//! BEV detection metrics: center-distance AP, mAP over classes × radii and
//! the three-condition summary.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{GroundTruthBox, ScoredBox};
use crate::error::{Error, Result};
use crate::fusion::ModalityMask;

/// Match radii in meters.
pub const RADII: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

/// Predictions and ground truth of one scene.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalScene {
    pub scene_id: u64,
    pub preds: Vec<ScoredBox>,
    pub gts: Vec<GroundTruthBox>,
}

/// AP of one class at one match radius over a set of scenes.
///
/// Predictions are visited in descending score order (ties by scene, then
/// position); each takes the nearest unmatched ground truth of its class in
/// its scene within `radius`. The PR curve is integrated with all-points
/// interpolation.
pub fn average_precision(scenes: &[EvalScene], class: usize, radius: f64) -> Result<f64> {
    if !(radius >= 0.0) {
        return Err(Error::contract(format!("match radius must be non-negative, got {radius}")));
    }
    let mut order: Vec<(f64, usize, usize)> = Vec::new();
    let mut n_gt = 0;
    for (si, s) in scenes.iter().enumerate() {
        n_gt += s.gts.iter().filter(|g| g.class_id == class).count();
        for (pi, p) in s.preds.iter().enumerate() {
            if p.class == class {
                if !p.score.is_finite() {
                    return Err(Error::NumericInput { op: "average_precision" });
                }
                order.push((p.score, si, pi));
            }
        }
    }
    if n_gt == 0 {
        return Ok(if order.is_empty() { 1.0 } else { 0.0 });
    }
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut taken: Vec<Vec<bool>> = scenes.iter().map(|s| vec![false; s.gts.len()]).collect();
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(order.len());
    for (k, &(_, si, pi)) in order.iter().enumerate() {
        let p = &scenes[si].preds[pi];
        let mut best: Option<(f64, usize)> = None;
        for (gi, g) in scenes[si].gts.iter().enumerate() {
            if g.class_id != class || taken[si][gi] {
                continue;
            }
            let d = (p.x - g.center[0]).hypot(p.y - g.center[1]);
            if d <= radius && best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, gi));
            }
        }
        if let Some((_, gi)) = best {
            taken[si][gi] = true;
            tp += 1;
        }
        curve.push((tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64));
    }
    // precision envelope from the right, then sum over recall steps
    let mut ap = 0.0;
    let mut env = 0.0f64;
    let mut prev_recall = curve.last().map_or(0.0, |c| c.0);
    for &(r, p) in curve.iter().rev() {
        if r < prev_recall {
            ap += (prev_recall - r) * env;
            prev_recall = r;
        }
        env = env.max(p);
    }
    ap += prev_recall * env;
    Ok(ap)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApEntry {
    pub class: usize,
    pub radius: f64,
    pub ap: f64,
}

/// AP table over `classes × radii` and its arithmetic mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApTable {
    pub entries: Vec<ApEntry>,
    pub map: f64,
}

pub fn mean_ap(scenes: &[EvalScene], radii: &[f64], classes: usize) -> Result<ApTable> {
    if radii.is_empty() || classes == 0 {
        return Err(Error::contract("mean_ap needs at least one class and one radius"));
    }
    let cells: Vec<(usize, f64)> = (0..classes).flat_map(|c| radii.iter().map(move |&r| (c, r))).collect();
    let entries = cells
        .par_iter()
        .map(|&(class, radius)| Ok(ApEntry { class, radius, ap: average_precision(scenes, class, radius)? }))
        .collect::<Result<Vec<_>>>()?;
    let map = entries.iter().map(|e| e.ap).sum::<f64>() / entries.len() as f64;
    Ok(ApTable { entries, map })
}

/// Mean of the three per-condition scores. Units are whatever the inputs use.
pub fn summary_metric(m_lc: f64, m_l: f64, m_c: f64) -> f64 {
    (m_lc + m_l + m_c) / 3.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// `lc`, `l` or `c`.
    pub condition: String,
    pub map: f64,
    pub table: Vec<ApEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub map_lc: f64,
    pub map_l: f64,
    pub map_c: f64,
    pub summary_map: f64,
    pub conditions: Vec<ConditionReport>,
    pub seed: u64,
    /// Echo of the configuration that produced the report.
    pub config: serde_json::Value,
}

impl MetricsReport {
    /// Builds the report from per-condition evaluation scenes for the masks
    /// both, LiDAR-only and camera-only.
    pub fn from_conditions(
        per_condition: &[(ModalityMask, Vec<EvalScene>)],
        classes: usize,
        seed: u64,
        config: serde_json::Value,
    ) -> Result<Self> {
        let mut conditions = Vec::new();
        let mut maps = [None; 3];
        for (mask, scenes) in per_condition {
            let t = mean_ap(scenes, &RADII, classes)?;
            let slot = match *mask {
                ModalityMask::BOTH => 0,
                ModalityMask::LIDAR_ONLY => 1,
                ModalityMask::CAMERA_ONLY => 2,
                _ => return Err(Error::contract("cannot evaluate with no modality")),
            };
            maps[slot] = Some(t.map);
            conditions.push(ConditionReport { condition: mask.label().into(), map: t.map, table: t.entries });
        }
        let [Some(lc), Some(l), Some(c)] = maps else {
            return Err(Error::contract("report needs the lc, l and c conditions"));
        };
        Ok(MetricsReport {
            map_lc: lc,
            map_l: l,
            map_c: c,
            summary_map: summary_metric(lc, l, c),
            conditions,
            seed,
            config,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("condition,class,radius,AP,mAP,summary\n");
        for c in &self.conditions {
            for e in &c.table {
                s.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    c.condition, e.class, e.radius, e.ap, c.map, self.summary_map
                ));
            }
        }
        s
    }

    /// Writes `metrics.json` and `metrics.csv` into `dir`. The CSV starts with
    /// `#` lines carrying the seed and the config echo.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(self)? + "\n")?;
        let mut f = std::fs::File::create(dir.join("metrics.csv"))?;
        writeln!(f, "# seed {}", self.seed)?;
        writeln!(f, "# config {}", serde_json::to_string(&self.config)?)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}
