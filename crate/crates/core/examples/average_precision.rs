//! Center-distance AP and mAP on a handful of scored detections.

use bevfuse::detection::{GroundTruthBox, ScoredBox};
use bevfuse::eval::{average_precision, mean_ap, summary_metric, EvalScene, RADII};

fn det(x: f64, y: f64, class: usize, score: f64) -> ScoredBox {
    ScoredBox { x, y, w: 1.0, l: 1.0, yaw: 0.0, class, score }
}

fn gt(x: f64, y: f64, class: usize) -> GroundTruthBox {
    GroundTruthBox { center: [x, y], size: [1.0, 1.0], yaw: 0.0, class_id: class }
}

fn main() -> bevfuse::Result<()> {
    let scenes = vec![
        EvalScene {
            scene_id: 0,
            preds: vec![det(0.2, 0.1, 0, 0.9), det(5.0, 5.0, 0, 0.8), det(3.1, -2.0, 1, 0.7)],
            gts: vec![gt(0.0, 0.0, 0), gt(3.0, -2.0, 1)],
        },
        EvalScene {
            scene_id: 1,
            preds: vec![det(-4.0, 1.5, 0, 0.6), det(8.0, 0.0, 1, 0.95)],
            gts: vec![gt(-4.8, 1.5, 0), gt(2.0, 2.0, 1)],
        },
    ];
    for r in RADII {
        println!(
            "radius {r:>3} m: AP class 0 {:.3}, class 1 {:.3}",
            average_precision(&scenes, 0, r)?,
            average_precision(&scenes, 1, r)?
        );
    }
    let table = mean_ap(&scenes, &RADII, 2)?;
    println!("mAP over classes and radii {:.4}", table.map);
    println!("summary of (64.2, 58.2, 35.0) = {:.2}", summary_metric(64.2, 58.2, 35.0));
    Ok(())
}
