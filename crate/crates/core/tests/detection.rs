mod common;

use bevfuse::detection::{
    decode, hungarian_match, set_loss, Decoder, DecoderConfig, DecoderOutput, GroundTruthBox, LossConfig,
    PredictionRecord,
};
use bevfuse::geometry::BevGridSpec;
use bevfuse::tensor::{gradcheck, Binder, ParamStore, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::oracles::{brute_force, total};

#[test]
fn hungarian_hand_cases() {
    let c = vec![vec![1.0, 10.0], vec![10.0, 1.0]];
    let a = hungarian_match(&c).unwrap();
    assert_eq!(a, vec![0, 1]);
    assert_eq!(total(&c, &a), 2.0);
    assert_eq!(hungarian_match(&[vec![3.5]]).unwrap(), vec![0]);
    let flat = vec![vec![2.0; 3]; 5];
    assert_eq!(hungarian_match(&flat).unwrap(), vec![0, 1, 2]);
    assert!(hungarian_match(&[vec![1.0, 2.0]]).is_err());
    assert_eq!(hungarian_match(&[vec![], vec![]]).unwrap(), Vec::<usize>::new());
}

#[test]
fn hungarian_equals_brute_force_on_200_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for trial in 0..200 {
        let n_gt = rng.gen_range(1..=6);
        let n_obj = rng.gen_range(n_gt..=7);
        // every other trial uses small integers so ties are common
        let cost: Vec<Vec<f64>> = (0..n_obj)
            .map(|_| {
                (0..n_gt)
                    .map(|_| if trial % 2 == 0 { rng.gen_range(0.0..10.0) } else { rng.gen_range(0..3) as f64 })
                    .collect()
            })
            .collect();
        let got = hungarian_match(&cost).unwrap();
        let (want, best) = brute_force(&cost);
        assert!((total(&cost, &got) - best).abs() < 1e-9, "trial {trial}");
        assert_eq!(got, want, "trial {trial}");
    }
}

fn tiny_decoder(n: usize, n_obj: usize, self_attn: bool) -> (Decoder, BevGridSpec) {
    let spec = BevGridSpec { h: 2, w: 3, d: 1, extent: (-3.0, 3.0, -2.0, 2.0), z_range: (0.0, 1.0) };
    let cfg = DecoderConfig { channels: n, layers: 2, n_obj, classes: 3, ffn_hidden: 2 * n, query_self_attn: self_attn };
    (Decoder::new(cfg, spec), spec)
}

#[test]
fn zeroed_heads_decode_to_extent_center() {
    let (dec, _) = tiny_decoder(4, 5, true);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    dec.init(&mut store, &mut rng).unwrap();
    for name in [
        "decoder.cls.weight",
        "decoder.cls.bias",
        "decoder.box.fc2.weight",
        "decoder.box.fc2.bias",
        "decoder.layer1.cross.k.weight",
        "decoder.layer1.cross.k.bias",
    ] {
        store.get_mut(name).unwrap().data_mut().fill(0.0);
    }
    let tape = Tape::new();
    let bind = Binder::frozen(&store, &tape);
    let fused = tape.constant(Tensor::from_fn(&[6, 4], |_| rng.gen_range(-1.0..1.0)));
    let boxes = decode(&dec.forward(&bind, fused).unwrap());
    assert_eq!(boxes.len(), 5);
    for b in boxes {
        // extent center is (0, 0)
        assert!(b.center[0].abs() < 1e-12 && b.center[1].abs() < 1e-12, "{:?}", b.center);
        assert_eq!(b.size, [1.0, 1.0]);
        assert_eq!(b.yaw, 0.0);
        assert_eq!(b.class_logits, vec![0.0; 3]);
    }
}

#[test]
fn decoder_rejects_wrong_width() {
    let (dec, _) = tiny_decoder(4, 2, false);
    let mut store = ParamStore::new();
    dec.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let tape = Tape::new();
    let bind = Binder::frozen(&store, &tape);
    let r = dec.forward(&bind, tape.constant(Tensor::zeros(&[6, 5])));
    assert!(matches!(r, Err(bevfuse::Error::Dimension { .. })));
}

#[test]
fn decoded_boxes_honor_invariants_for_random_weights() {
    for seed in 0..10 {
        let (dec, spec) = tiny_decoder(4, 7, seed % 2 == 0);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        dec.init(&mut store, &mut rng).unwrap();
        let tape = Tape::new();
        let bind = Binder::frozen(&store, &tape);
        let fused = tape.constant(Tensor::from_fn(&[6, 4], |_| rng.gen_range(-3.0..3.0)));
        let boxes = decode(&dec.forward(&bind, fused).unwrap());
        assert_eq!(boxes.len(), 7);
        for b in boxes {
            assert!(b.size[0] > 0.0 && b.size[1] > 0.0);
            assert!(b.yaw > -std::f64::consts::PI && b.yaw <= std::f64::consts::PI);
            assert!(spec.contains(b.center[0], b.center[1]));
            assert_eq!(b.class_logits.len(), 3);
        }
    }
}

fn gts() -> Vec<GroundTruthBox> {
    vec![
        GroundTruthBox { center: [1.0, -0.5], size: [2.0, 4.0], yaw: 0.3, class_id: 0 },
        GroundTruthBox { center: [-2.0, 1.5], size: [1.0, 1.5], yaw: -2.0, class_id: 1 },
    ]
}

fn constant_output<'t>(tape: &'t Tape, logits: Tensor, centers: Tensor, shape: Tensor) -> DecoderOutput<'t> {
    DecoderOutput { logits: tape.constant(logits), centers: tape.constant(centers), shape: tape.constant(shape) }
}

#[test]
fn perfect_prediction_has_zero_box_loss() {
    let g = gts();
    let tape = Tape::new();
    let mut logits = vec![-10.0, -10.0, 10.0, -10.0, -10.0, 10.0, -10.0, -10.0, 10.0];
    logits[0] = 10.0;
    logits[2] = -10.0;
    logits[4] = 10.0;
    logits[5] = -10.0;
    let centers: Vec<f64> = g.iter().flat_map(|b| b.center).chain([0.0, 0.0]).collect();
    let shape: Vec<f64> = g
        .iter()
        .flat_map(|b| [b.size[0].ln(), b.size[1].ln(), b.yaw.sin(), b.yaw.cos()])
        .chain([0.0; 4])
        .collect();
    let out = constant_output(
        &tape,
        Tensor::new(&[3, 3], logits).unwrap(),
        Tensor::new(&[3, 2], centers).unwrap(),
        Tensor::new(&[3, 4], shape).unwrap(),
    );
    let r = set_loss(&out, &g, &LossConfig::default()).unwrap();
    assert_eq!(r.assignment, vec![0, 1]);
    let ce = out.logits.cross_entropy(&[0, 1, 2]).unwrap().item();
    assert!(ce < 0.01);
    assert!((r.loss.item() - ce).abs() < 1e-12);
}

#[test]
fn empty_scene_is_pure_background_classification() {
    let tape = Tape::new();
    let logits = Tensor::new(&[2, 3], vec![0.5, -1.0, 0.2, 2.0, 0.0, -0.3]).unwrap();
    let out = constant_output(&tape, logits.clone(), Tensor::zeros(&[2, 2]), Tensor::zeros(&[2, 4]));
    let r = set_loss(&out, &[], &LossConfig::default()).unwrap();
    let mean_bg: f64 = logits
        .data()
        .chunks(3)
        .map(|row| {
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            lse - row[2]
        })
        .sum::<f64>()
        / 2.0;
    assert!((r.loss.item() - mean_bg).abs() < 1e-12);
    assert!(r.assignment.is_empty());
}

#[test]
fn loss_matches_scripted_scalar_computation() {
    let tape = Tape::new();
    let logits = [0.2, -0.4, 0.1, 1.5, 0.3, -0.2, -0.5, 0.9, 0.0];
    let centers = [-1.8, 1.2, 0.7, -0.1, 3.0, 3.0];
    let shape = [0.1, 0.4, -0.8, -0.3, 0.6, 1.2, 0.2, 0.9, 0.0, 0.0, 0.5, 0.5];
    let out = constant_output(
        &tape,
        Tensor::new(&[3, 3], logits.to_vec()).unwrap(),
        Tensor::new(&[3, 2], centers.to_vec()).unwrap(),
        Tensor::new(&[3, 4], shape.to_vec()).unwrap(),
    );
    let cfg = LossConfig { lambda_cls: 1.0, lambda_box: 2.0, center_unit: 2.0 };
    let r = set_loss(&out, &gts(), &cfg).unwrap();

    // scripted: probabilities, costs for all 6 injective maps, then the loss
    let prob = |p: usize, c: usize| {
        let row = &logits[p * 3..p * 3 + 3];
        row[c].exp() / row.iter().map(|v| v.exp()).sum::<f64>()
    };
    let l1 = |p: usize, g: &GroundTruthBox| {
        (centers[2 * p] / 2.0 - g.center[0] / 2.0).abs()
            + (centers[2 * p + 1] / 2.0 - g.center[1] / 2.0).abs()
            + (shape[4 * p] - g.size[0].ln()).abs()
            + (shape[4 * p + 1] - g.size[1].ln()).abs()
            + (shape[4 * p + 2] - g.yaw.sin()).abs()
            + (shape[4 * p + 3] - g.yaw.cos()).abs()
    };
    let g = gts();
    let cost = |p: usize, k: usize| -prob(p, g[k].class_id) + 2.0 * l1(p, &g[k]);
    let mut best = (f64::INFINITY, (0, 0));
    for a in 0..3 {
        for b in 0..3 {
            if a != b && cost(a, 0) + cost(b, 1) < best.0 {
                best = (cost(a, 0) + cost(b, 1), (a, b));
            }
        }
    }
    let (a, b) = best.1;
    assert_eq!(r.assignment, vec![a, b]);
    let mut targets = [2usize; 3];
    targets[a] = 0;
    targets[b] = 1;
    let ce: f64 = (0..3).map(|p| -prob(p, targets[p]).ln()).sum::<f64>() / 3.0;
    let expected = ce + 2.0 * (l1(a, &g[0]) + l1(b, &g[1])) / 2.0;
    assert!((r.loss.item() - expected).abs() < 1e-12, "{} vs {expected}", r.loss.item());
}

#[test]
fn loss_is_invariant_to_ground_truth_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let tape = Tape::new();
        let mut t = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.gen_range(-2.0..2.0));
        let out = constant_output(&tape, t(&[4, 3]), t(&[4, 2]), t(&[4, 4]));
        let g = gts();
        let rev: Vec<_> = g.iter().rev().copied().collect();
        let a = set_loss(&out, &g, &LossConfig::default()).unwrap().loss.item();
        let b = set_loss(&out, &rev, &LossConfig::default()).unwrap().loss.item();
        assert!((a - b).abs() < 1e-12);
        assert!(a >= 0.0);
    }
}

#[test]
fn decode_and_loss_pass_gradcheck() {
    let (dec, _) = tiny_decoder(4, 3, true);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    dec.init(&mut store, &mut rng).unwrap();
    let fused = Tensor::from_fn(&[6, 4], |_| rng.gen_range(-1.0..1.0));
    let g = gts();
    let report = gradcheck::check_with_params(&store, &[fused], 1e-5, Some(8), |bind, x| {
        let out = dec.forward(bind, x[0])?;
        Ok(set_loss(&out, &g, &LossConfig::default())?.loss)
    })
    .unwrap();
    assert!(report.passes(1e-4), "{report:?}");
}

#[test]
fn prediction_records_round_trip_as_json_lines() {
    let tape = Tape::new();
    let out = constant_output(
        &tape,
        Tensor::new(&[1, 3], vec![2.0, 0.0, -1.0]).unwrap(),
        Tensor::new(&[1, 2], vec![1.5, -2.5]).unwrap(),
        Tensor::new(&[1, 4], vec![0.0, 1.0, 1.0, 0.0]).unwrap(),
    );
    let boxes: Vec<_> = decode(&out).iter().map(|b| b.scored()).collect();
    assert_eq!(boxes[0].class, 0);
    assert!((boxes[0].yaw - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    let rec = PredictionRecord { scene_id: 7, boxes };
    let line = serde_json::to_string(&rec).unwrap();
    assert!(!line.contains('\n'));
    assert_eq!(serde_json::from_str::<PredictionRecord>(&line).unwrap(), rec);
}

proptest! {
    #[test]
    fn hungarian_total_is_never_beaten_by_greedy(costs in prop::collection::vec(0.0f64..5.0, 12)) {
        let cost: Vec<Vec<f64>> = costs.chunks(3).map(|c| c.to_vec()).collect();
        let a = hungarian_match(&cost).unwrap();
        let mut used = vec![false; 4];
        let mut greedy = 0.0;
        for g in 0..3 {
            let p = (0..4).filter(|&p| !used[p]).min_by(|&x, &y| cost[x][g].total_cmp(&cost[y][g])).unwrap();
            used[p] = true;
            greedy += cost[p][g];
        }
        prop_assert!(total(&cost, &a) <= greedy + 1e-12);
    }
}
