use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::evaluate::check_params;
use super::train::{build_model, RunState};
use crate::error::{Error, Result};
use crate::fusion::ModalityMask;
use crate::synth::{Dataset, Split};
use crate::tensor::{Binder, Tape, Tensor};

/// Population variance across channels for every row of `[cells, N]`.
pub fn channel_variance(map: &Tensor) -> Vec<f64> {
    let n = map.last_dim();
    map.data()
        .chunks(n)
        .map(|row| {
            let mean = row.iter().sum::<f64>() / n as f64;
            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64
        })
        .collect()
}

/// Binary 8-bit PGM of `values` (`h × w`, row-major), min-max normalized.
/// A constant map is all zeros.
pub fn to_pgm(values: &[f64], h: usize, w: usize, comments: &[String]) -> Vec<u8> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = b"P5\n".to_vec();
    for c in comments {
        out.extend_from_slice(format!("# {c}\n").as_bytes());
    }
    out.extend_from_slice(format!("{w} {h}\n255\n").as_bytes());
    out.extend(values.iter().map(|&v| {
        if hi > lo {
            ((v - lo) / (hi - lo) * 255.0).round() as u8
        } else {
            0
        }
    }));
    out
}

/// CNW weight table sorted by descending LiDAR weight (ties by channel),
/// followed by a row with both sums.
pub fn weights_csv(w_cam: &[f64], w_lidar: &[f64], comments: &[String]) -> String {
    let mut idx: Vec<usize> = (0..w_cam.len()).collect();
    idx.sort_by(|&a, &b| w_lidar[b].total_cmp(&w_lidar[a]).then(a.cmp(&b)));
    let mut s: String = comments.iter().map(|c| format!("# {c}\n")).collect();
    s.push_str("channel,w_cam,w_lidar\n");
    for i in idx {
        s.push_str(&format!("{i},{},{}\n", w_cam[i], w_lidar[i]));
    }
    s.push_str(&format!("sum,{},{}\n", w_cam.iter().sum::<f64>(), w_lidar.iter().sum::<f64>()));
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct InspectOutput {
    pub cam_pgm: PathBuf,
    pub lidar_pgm: PathBuf,
    pub weights_csv: Option<PathBuf>,
    pub notice: Option<String>,
    pub cam_variance: Vec<f64>,
    pub lidar_variance: Vec<f64>,
}

/// Dumps per-modality BEV variance maps of validation scene `scene` and, for
/// CNW models, the learned channel weights.
pub fn inspect(checkpoint: &Path, dataset: Option<&Path>, scene: usize, out: &Path) -> Result<InspectOutput> {
    let state = RunState::load(checkpoint)?;
    let mut cfg: ExperimentConfig = state.config.clone();
    if let Some(d) = dataset {
        cfg.dataset = d.to_path_buf();
    }
    let ds = Dataset::open(&cfg.dataset)?;
    let model = build_model(&cfg, Some(&ds.manifest))?;
    check_params(&model, &state.store)?;
    if scene >= ds.len(Split::Val) {
        return Err(Error::Data(format!("scene {scene} is outside the {} validation scenes", ds.len(Split::Val))));
    }
    let sample = ds.load(Split::Val, scene)?;
    let tape = Tape::new();
    let bind = Binder::frozen(&state.store, &tape);
    let (cam, lidar) = model.bev_maps(&bind, &sample, ModalityMask::BOTH)?;
    let cam_variance = channel_variance(&cam.expect("camera map").value());
    let lidar_variance = channel_variance(&lidar.expect("lidar map").value());

    std::fs::create_dir_all(out)?;
    let comments = vec![
        format!("seed {}", cfg.seed),
        format!("scene {} (validation index {scene})", sample.scene.scene_id),
        format!("config {}", cfg.to_json_line()),
    ];
    let (h, w) = (cfg.grid.h, cfg.grid.w);
    let cam_pgm = out.join(format!("bev_variance_cam_{scene}.pgm"));
    let lidar_pgm = out.join(format!("bev_variance_lidar_{scene}.pgm"));
    std::fs::write(&cam_pgm, to_pgm(&cam_variance, h, w, &comments))?;
    std::fs::write(&lidar_pgm, to_pgm(&lidar_variance, h, w, &comments))?;

    let (weights_csv, notice) = match model.fusion.normalized(&state.store, ModalityMask::BOTH)? {
        Some((wc, wl)) => {
            let path = out.join("cnw_weights.csv");
            let header = [comments[0].clone(), comments[2].clone()];
            std::fs::write(&path, weights_csv(&wc, &wl, &header))?;
            (Some(path), None)
        }
        None => (
            None,
            Some(format!(
                "{} fusion has no channel weights; cnw_weights.csv not written",
                cfg.model.fusion.name()
            )),
        ),
    };
    Ok(InspectOutput { cam_pgm, lidar_pgm, weights_csv, notice, cam_variance, lidar_variance })
}
