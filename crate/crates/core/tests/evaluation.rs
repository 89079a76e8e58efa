use bevfuse::detection::{GroundTruthBox, ScoredBox};
use bevfuse::eval::*;
use bevfuse::fusion::ModalityMask;
use bevfuse::geometry::BevGridSpec;
use bevfuse::synth::{sample_scene, SceneParams};
use bevfuse::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn gt(x: f64, y: f64, class_id: usize) -> GroundTruthBox {
    GroundTruthBox { center: [x, y], size: [1.8, 4.0], yaw: 0.0, class_id }
}

fn pred(x: f64, y: f64, class: usize, score: f64) -> ScoredBox {
    ScoredBox { x, y, w: 1.8, l: 4.0, yaw: 0.0, class, score }
}

fn scene(preds: Vec<ScoredBox>, gts: Vec<GroundTruthBox>) -> EvalScene {
    EvalScene { scene_id: 0, preds, gts }
}

/// Each true positive adds `1 / n_gt` recall at the best precision reached
/// at or after it.
fn oracle_ap(scenes: &[EvalScene], class: usize, radius: f64) -> f64 {
    let n_gt: usize = scenes.iter().map(|s| s.gts.iter().filter(|g| g.class_id == class).count()).sum();
    let mut flat: Vec<(usize, usize)> = scenes
        .iter()
        .enumerate()
        .flat_map(|(si, s)| (0..s.preds.len()).map(move |pi| (si, pi)))
        .filter(|&(si, pi)| scenes[si].preds[pi].class == class)
        .collect();
    if n_gt == 0 {
        return if flat.is_empty() { 1.0 } else { 0.0 };
    }
    flat.sort_by(|a, b| {
        let (pa, pb) = (&scenes[a.0].preds[a.1], &scenes[b.0].preds[b.1]);
        pb.score.partial_cmp(&pa.score).unwrap().then(a.cmp(b))
    });
    let mut used = std::collections::HashSet::new();
    let mut is_tp = Vec::new();
    for &(si, pi) in &flat {
        let p = &scenes[si].preds[pi];
        let hit = scenes[si]
            .gts
            .iter()
            .enumerate()
            .filter(|(gi, g)| g.class_id == class && !used.contains(&(si, *gi)))
            .map(|(gi, g)| ((p.x - g.center[0]).powi(2) + (p.y - g.center[1]).powi(2)).sqrt().to_bits() as u128 * 1000 + gi as u128)
            .min();
        let hit = hit.filter(|k| f64::from_bits((k / 1000) as u64) <= radius);
        if let Some(k) = hit {
            used.insert((si, (k % 1000) as usize));
        }
        is_tp.push(hit.is_some());
    }
    let prec: Vec<f64> = is_tp
        .iter()
        .scan(0usize, |tp, &t| {
            *tp += t as usize;
            Some(*tp)
        })
        .enumerate()
        .map(|(k, tp)| tp as f64 / (k + 1) as f64)
        .collect();
    (0..prec.len())
        .filter(|&i| is_tp[i])
        .map(|i| prec[i..].iter().cloned().fold(0.0, f64::max) / n_gt as f64)
        .sum()
}

#[test]
fn perfect_predictions_score_one() {
    let gts = vec![gt(1.0, 2.0, 0), gt(-4.0, 3.0, 1), gt(5.0, -5.0, 0)];
    let preds = gts.iter().map(|g| pred(g.center[0], g.center[1], g.class_id, 1.0)).collect();
    let s = [scene(preds, gts)];
    for r in RADII {
        assert_eq!(average_precision(&s, 0, r).unwrap(), 1.0);
        assert_eq!(average_precision(&s, 1, r).unwrap(), 1.0);
    }
    assert_eq!(mean_ap(&s, &RADII, 2).unwrap().map, 1.0);
}

#[test]
fn degenerate_inputs() {
    let only_gt = [scene(vec![], vec![gt(0.0, 0.0, 0)])];
    assert_eq!(average_precision(&only_gt, 0, 1.0).unwrap(), 0.0);
    let empty = [scene(vec![], vec![])];
    assert_eq!(average_precision(&empty, 0, 1.0).unwrap(), 1.0);
    let only_pred = [scene(vec![pred(0.0, 0.0, 0, 0.4)], vec![])];
    assert_eq!(average_precision(&only_pred, 0, 1.0).unwrap(), 0.0);
    assert!(matches!(average_precision(&empty, 0, -0.1), Err(Error::Contract(_))));
}

#[test]
fn hand_computed_pr_area() {
    // ranks: TP (p=1, r=1/2), FP (p=1/2, r=1/2), TP (p=2/3, r=1)
    // area = 1/2 · 1 + 1/2 · 2/3
    let s = [scene(
        vec![pred(0.1, 0.0, 0, 0.9), pred(8.0, 8.0, 0, 0.8), pred(10.0, 0.3, 0, 0.7)],
        vec![gt(0.0, 0.0, 0), gt(10.0, 0.0, 0)],
    )];
    let ap = average_precision(&s, 0, 1.0).unwrap();
    assert!((ap - 5.0 / 6.0).abs() < 1e-12, "{ap}");
    // at 0.2 m the third prediction misses: one TP out of two gts
    assert!((average_precision(&s, 0, 0.2).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn map_is_mean_of_table() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let scenes: Vec<EvalScene> = (0..10).map(|_| random_scene(&mut rng, 3)).collect();
    let t = mean_ap(&scenes, &RADII, 3).unwrap();
    assert_eq!(t.entries.len(), 12);
    let mean = t.entries.iter().map(|e| e.ap).sum::<f64>() / 12.0;
    assert_eq!(t.map, mean);
    for e in &t.entries {
        assert_eq!(e.ap, average_precision(&scenes, e.class, e.radius).unwrap());
    }
}

fn random_scene(rng: &mut impl Rng, classes: usize) -> EvalScene {
    let n_gt = rng.gen_range(0..5);
    let gts: Vec<_> = (0..n_gt)
        .map(|_| gt(rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0), rng.gen_range(0..classes)))
        .collect();
    let mut preds = Vec::new();
    for g in &gts {
        if rng.gen_bool(0.7) {
            let c = if rng.gen_bool(0.8) { g.class_id } else { rng.gen_range(0..classes) };
            preds.push(pred(g.center[0] + rng.gen_range(-2.0..2.0), g.center[1] + rng.gen_range(-2.0..2.0), c, rng.gen()));
        }
    }
    for _ in 0..rng.gen_range(0..4) {
        preds.push(pred(rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0), rng.gen_range(0..classes), rng.gen()));
    }
    EvalScene { scene_id: 0, preds, gts }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ap_matches_oracle(seed in any::<u64>(), n in 1usize..6, r in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scenes: Vec<EvalScene> = (0..n).map(|_| random_scene(&mut rng, 2)).collect();
        for class in 0..2 {
            let ap = average_precision(&scenes, class, RADII[r]).unwrap();
            let want = oracle_ap(&scenes, class, RADII[r]);
            prop_assert!((ap - want).abs() < 1e-12, "{} vs {}", ap, want);
            prop_assert!((0.0..=1.0).contains(&ap));
        }
    }

    #[test]
    fn adding_top_true_positive_never_lowers_ap(seed in any::<u64>(), n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scenes: Vec<EvalScene> = (0..n).map(|_| random_scene(&mut rng, 1)).collect();
        let old = average_precision(&scenes, 0, 1.0).unwrap();
        // a new object far from everything, detected above every other score
        scenes[0].gts.push(gt(100.0, 100.0, 0));
        scenes[0].preds.push(pred(100.0, 100.0, 0, 2.0));
        let new = average_precision(&scenes, 0, 1.0).unwrap();
        prop_assert!(new >= old - 1e-15, "{} < {}", new, old);
    }

    #[test]
    fn ap_ignores_positive_score_scaling(seed in any::<u64>(), k in -4i32..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scenes: Vec<EvalScene> = (0..4).map(|_| random_scene(&mut rng, 2)).collect();
        let c = 2f64.powi(k) * 1.5;
        let scaled: Vec<EvalScene> = scenes
            .iter()
            .map(|s| EvalScene { preds: s.preds.iter().map(|p| ScoredBox { score: p.score * c, ..*p }).collect(), ..s.clone() })
            .collect();
        for class in 0..2 {
            prop_assert_eq!(average_precision(&scenes, class, 2.0).unwrap(), average_precision(&scaled, class, 2.0).unwrap());
        }
    }

    #[test]
    fn summary_is_permutation_invariant_mean(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
        let s = summary_metric(a, b, c);
        for (x, y, z) in [(a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)] {
            prop_assert!((summary_metric(x, y, z) - s).abs() < 1e-15);
        }
        prop_assert!((s - (a + b + c) / 3.0).abs() < 1e-15);
    }
}

#[test]
fn summary_examples() {
    assert!((summary_metric(64.2, 58.2, 35.0) - 52.5).abs() <= 0.05);
    assert!((summary_metric(63.8, 57.6, 34.4) - 51.9).abs() <= 0.05);
    for x in [0.0, 0.3, 1.0, 47.25] {
        assert_eq!(summary_metric(x, x, x), x);
    }
}

#[test]
fn random_score_detector_lands_in_sanity_band() {
    let spec = BevGridSpec::default();
    let params = SceneParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let jitter = Normal::new(0.0, 0.8).unwrap();
    let scenes: Vec<EvalScene> = (0..50)
        .map(|id| {
            let s = sample_scene(&mut rng, &params, &spec, id).unwrap();
            let mut preds: Vec<ScoredBox> = s
                .boxes
                .iter()
                .map(|b| {
                    let class = if rng.gen_bool(0.6) { b.gt.class_id } else { rng.gen_range(0..3) };
                    let (dx, dy) = (jitter.sample(&mut rng), jitter.sample(&mut rng));
                    pred(b.gt.center[0] + dx, b.gt.center[1] + dy, class, rng.gen())
                })
                .collect();
            for _ in 0..4 {
                preds.push(pred(rng.gen_range(-15.0..15.0), rng.gen_range(-15.0..15.0), rng.gen_range(0..3), rng.gen()));
            }
            EvalScene { scene_id: id, preds, gts: s.ground_truth() }
        })
        .collect();
    let m = mean_ap(&scenes, &RADII, 3).unwrap().map;
    assert!((0.01..=0.9).contains(&m), "mAP {m}");
}

fn report_for(per: Vec<(ModalityMask, Vec<EvalScene>)>) -> MetricsReport {
    MetricsReport::from_conditions(&per, 3, 7, serde_json::json!({"fusion": "cnw", "seed": 7})).unwrap()
}

#[test]
fn silent_model_scores_equally_everywhere() {
    let gts = vec![gt(1.0, 1.0, 0), gt(5.0, 0.0, 2)];
    let empty = vec![EvalScene { scene_id: 3, preds: vec![], gts }];
    let r = report_for(vec![
        (ModalityMask::BOTH, empty.clone()),
        (ModalityMask::LIDAR_ONLY, empty.clone()),
        (ModalityMask::CAMERA_ONLY, empty),
    ]);
    assert_eq!(r.map_lc, r.map_l);
    assert_eq!(r.map_l, r.map_c);
    // class 1 has neither gts nor predictions and counts as solved
    assert!((r.map_lc - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn report_invariants_and_files() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let per: Vec<_> = [ModalityMask::BOTH, ModalityMask::LIDAR_ONLY, ModalityMask::CAMERA_ONLY]
        .into_iter()
        .map(|m| (m, (0..8).map(|_| random_scene(&mut rng, 3)).collect::<Vec<_>>()))
        .collect();
    let r = report_for(per);
    assert!((r.summary_map - (r.map_lc + r.map_l + r.map_c) / 3.0).abs() < 1e-12);
    assert_eq!(r.conditions.iter().map(|c| c.condition.as_str()).collect::<Vec<_>>(), ["lc", "l", "c"]);

    let dir = tempfile::tempdir().unwrap();
    r.write(dir.path()).unwrap();
    assert_eq!(MetricsReport::read_json(&dir.path().join("metrics.json")).unwrap(), r);
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "# seed 7");
    assert!(lines[1].starts_with("# config {"));
    assert_eq!(lines[2], "condition,class,radius,AP,mAP,summary");
    assert_eq!(lines.len(), 3 + 3 * 3 * 4);
    let row: Vec<&str> = lines[3].split(',').collect();
    assert_eq!(row[0], "lc");
    assert_eq!(row[4].parse::<f64>().unwrap(), r.map_lc);
    assert_eq!(row[5].parse::<f64>().unwrap(), r.summary_map);
}

#[test]
fn report_needs_all_three_conditions() {
    let per = vec![(ModalityMask::BOTH, vec![]), (ModalityMask::LIDAR_ONLY, vec![])];
    assert!(MetricsReport::from_conditions(&per, 3, 0, serde_json::Value::Null).is_err());
}
