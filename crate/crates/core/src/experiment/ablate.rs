use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::evaluate::evaluate_checkpoint;
use super::train::train;
use crate::bev::QueryMode;
use crate::error::Result;
use crate::fusion::FusionKind;

/// MD axis: LiDAR-only share of the dropped iterations.
pub const P_L_SWEEP: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Fusion,
    Md,
    Queries,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Fusion => "fusion",
            Axis::Md => "md",
            Axis::Queries => "queries",
        }
    }

    /// `(label, config)` for every run on this axis.
    pub fn variants(self, base: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
        let with = |f: &dyn Fn(&mut ExperimentConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c
        };
        match self {
            Axis::Fusion => FusionKind::ALL
                .iter()
                .map(|&k| (k.name().to_string(), with(&|c| c.model.fusion = k)))
                .collect(),
            Axis::Md => P_L_SWEEP
                .iter()
                .map(|&p| (format!("p_l={p}"), with(&|c| c.md.p_l = p)))
                .collect(),
            Axis::Queries => [QueryMode::Shared, QueryMode::Separate]
                .iter()
                .map(|&q| (q.name().to_string(), with(&|c| c.model.queries = q)))
                .collect(),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fusion" => Ok(Axis::Fusion),
            "md" => Ok(Axis::Md),
            "queries" => Ok(Axis::Queries),
            _ => Err(format!("unknown ablation axis {s:?} (expected fusion, md or queries)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub map_lc: f64,
    pub map_l: f64,
    pub map_c: f64,
    pub summary: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: Axis,
    pub seed: u64,
    pub config: serde_json::Value,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# seed {}\n# config {}\nvariant,L+C,L,C,summary\n",
            self.seed,
            serde_json::to_string(&self.config).expect("json")
        );
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{}\n", r.variant, r.map_lc, r.map_l, r.map_c, r.summary));
        }
        s
    }

    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }
}

/// Trains and evaluates every variant of `axis` on the shared dataset. Each
/// run lives in `out/<axis>/<variant>`; finished runs are reused.
pub fn ablate(base: &ExperimentConfig, axis: Axis, out: &Path, verbose: bool) -> Result<AblationTable> {
    base.validate()?;
    let variants = axis.variants(base);
    for (_, cfg) in &variants {
        cfg.validate()?;
    }
    let mut rows = Vec::new();
    for (label, cfg) in variants {
        let dir = out.join(axis.name()).join(&label);
        if verbose {
            eprintln!("ablate {axis}: {label}");
        }
        let t = train(&cfg, &dir, verbose)?;
        let r = evaluate_checkpoint(&t.checkpoint, None, &dir)?;
        rows.push(AblationRow {
            variant: label,
            map_lc: r.map_lc,
            map_l: r.map_l,
            map_c: r.map_c,
            summary: r.summary_map,
        });
    }
    let table = AblationTable { axis, seed: base.seed, config: base.to_json_value(), rows };
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(format!("ablate_{axis}.csv")), table.to_csv())?;
    std::fs::write(out.join(format!("ablate_{axis}.json")), serde_json::to_string_pretty(&table)? + "\n")?;
    Ok(table)
}
