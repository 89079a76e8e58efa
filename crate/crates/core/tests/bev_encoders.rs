use bevfuse::bev::{
    encode_camera_bev, encode_lidar_bev, BevEncoder, BevEncoderConfig, BevQueries, Modality, Projection, QueryMode,
    SensorView,
};
use bevfuse::geometry::{BevGridSpec, CameraModel, ReferenceGrid};
use bevfuse::tensor::{gradcheck, Adam, AdamConfig, Binder, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

fn spec(h: usize, w: usize, d: usize) -> BevGridSpec {
    BevGridSpec {
        h,
        w,
        d,
        extent: (-2.0, 2.0, -2.0, 2.0),
        z_range: (-1.0, 1.0),
    }
}

fn config(channels: usize, source_channels: usize, heads: usize, points: usize, layers: usize) -> BevEncoderConfig {
    BevEncoderConfig {
        channels,
        source_channels,
        heads,
        points,
        layers,
        ffn_hidden: 2 * channels,
        self_spread: 0.6,
        cross_spread: 0.6,
        normalize_hits: false,
    }
}

/// Straight-down camera high above the grid; every reference is visible.
fn overhead_camera() -> CameraModel {
    CameraModel::looking([0.0, 0.0, 20.0], 0.0, std::f64::consts::FRAC_PI_2, 20.0, 20.0, 3.5, 3.5, 8, 8)
}

fn sample_ref(f: &Tensor, r: f64, c: f64) -> Vec<f64> {
    let (h, w, ch) = (f.shape()[0] as i64, f.shape()[1] as i64, f.shape()[2]);
    let (r0, c0) = (r.floor() as i64, c.floor() as i64);
    let (dr, dc) = (r - r0 as f64, c - c0 as f64);
    let mut out = vec![0.0; ch];
    for (rr, cc, wt) in [
        (r0, c0, (1.0 - dr) * (1.0 - dc)),
        (r0, c0 + 1, (1.0 - dr) * dc),
        (r0 + 1, c0, dr * (1.0 - dc)),
        (r0 + 1, c0 + 1, dr * dc),
    ] {
        if rr >= 0 && cc >= 0 && rr < h && cc < w {
            for (k, o) in out.iter_mut().enumerate() {
                *o += wt * f.get(&[rr as usize, cc as usize, k]);
            }
        }
    }
    out
}

fn set_identity(store: &mut ParamStore, prefix: &str, n: usize) {
    let eye = Tensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 });
    *store.get_mut(&format!("{prefix}.output_proj.weight")).unwrap() = eye.clone();
    *store.get_mut(&format!("{prefix}.value_proj.weight")).unwrap() = eye.reshaped(&[1, n, n]).unwrap();
}

#[test]
fn degenerate_camera_cross_attention_reads_projected_feature() {
    let refs = ReferenceGrid::build(spec(4, 4, 1)).unwrap();
    let enc = BevEncoder::new("encoder.cam", Modality::Camera, config(3, 3, 1, 1, 1), refs.clone());
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut c = enc.config;
    c.cross_spread = 0.0;
    let enc = BevEncoder { config: c, ..enc };
    enc.init(&mut store, &mut rng).unwrap();
    set_identity(&mut store, "encoder.cam.layer0.cross_attn", 3);

    let cam = overhead_camera();
    let f = rand_tensor(&mut rng, &[8, 8, 3], 1.0);
    let tape = Tape::new();
    let bind = Binder::frozen(&store, &tape);
    let views = [SensorView { features: tape.constant(f.clone()), projection: Projection::Camera(cam.clone()) }];
    let sources = enc.sources(&views).unwrap();
    assert!(sources[0].valid.iter().all(|&v| v));
    let q = tape.constant(rand_tensor(&mut rng, &[16, 3], 1.0));
    let out = enc.layers[0].cross_attn.forward(&bind, q, &sources, false).unwrap().value();
    for (i, p) in refs.points.iter().enumerate() {
        let ([u, v], _) = cam.project_point(*p);
        let s = sample_ref(&f, v, u);
        for ch in 0..3 {
            assert!((out.get(&[i, ch]) - s[ch]).abs() < 1e-12);
        }
    }
}

#[test]
fn degenerate_lidar_cross_attention_reads_own_cell() {
    let refs = ReferenceGrid::build(spec(4, 4, 1)).unwrap();
    let mut c = config(2, 2, 1, 1, 1);
    c.cross_spread = 0.0;
    let enc = BevEncoder::new("encoder.lidar", Modality::Lidar, c, refs);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    enc.init(&mut store, &mut rng).unwrap();
    set_identity(&mut store, "encoder.lidar.layer0.cross_attn", 2);
    let f = rand_tensor(&mut rng, &[4, 4, 2], 1.0);
    let tape = Tape::new();
    let bind = Binder::frozen(&store, &tape);
    let views = [SensorView { features: tape.constant(f.clone()), projection: Projection::Grid }];
    let sources = enc.sources(&views).unwrap();
    let q = tape.constant(rand_tensor(&mut rng, &[16, 2], 1.0));
    let out = enc.layers[0].cross_attn.forward(&bind, q, &sources, false).unwrap().value();
    for h in 0..4 {
        for w in 0..4 {
            for ch in 0..2 {
                assert_eq!(out.get(&[h * 4 + w, ch]), f.get(&[h, w, ch]));
            }
        }
    }
}

fn doubling(d: usize) -> (Tensor, Tensor) {
    let refs = ReferenceGrid::build(spec(4, 4, d)).unwrap();
    let enc = BevEncoder::new("encoder.cam", Modality::Camera, config(4, 3, 2, 2, 1), refs);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    enc.init(&mut store, &mut rng).unwrap();
    let tape = Tape::new();
    let bind = Binder::frozen(&store, &tape);
    let view = SensorView {
        features: tape.constant(rand_tensor(&mut rng, &[8, 8, 3], 1.0)),
        projection: Projection::Camera(overhead_camera()),
    };
    let q = tape.constant(rand_tensor(&mut rng, &[16, 4], 1.0));
    let attn = &enc.layers[0].cross_attn;
    let one = attn.forward(&bind, q, &enc.sources(&[view.clone()]).unwrap(), false).unwrap().value();
    let two = attn.forward(&bind, q, &enc.sources(&[view.clone(), view]).unwrap(), false).unwrap().value();
    ((*one).clone(), (*two).clone())
}

#[test]
fn cell_seen_by_two_views_doubles_cross_term() {
    let (one, two) = doubling(1);
    for (a, b) in one.data().iter().zip(two.data()) {
        assert_eq!(2.0 * a, *b);
    }
    // with several levels the summation order differs, so only up to rounding
    let (one, two) = doubling(2);
    for (a, b) in one.data().iter().zip(two.data()) {
        assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn cell_invisible_in_every_view_gets_zero_cross_term() {
    let refs = ReferenceGrid::build(spec(4, 4, 2)).unwrap();
    let enc = BevEncoder::new("encoder.cam", Modality::Camera, config(4, 3, 2, 2, 1), refs);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    enc.init(&mut store, &mut rng).unwrap();
    let tape = Tape::new();
    let bind = Binder::frozen(&store, &tape);
    // at the origin looking along +x: cells with x < 0 are behind the camera
    let cam = CameraModel::looking([0.0, 0.0, 0.5], 0.0, 0.0, 4.0, 4.0, 7.5, 7.5, 16, 16);
    let view = SensorView {
        features: tape.constant(rand_tensor(&mut rng, &[16, 16, 3], 1.0)),
        projection: Projection::Camera(cam),
    };
    let sources = enc.sources(&[view]).unwrap();
    let q = tape.constant(rand_tensor(&mut rng, &[16, 4], 1.0));
    let out = enc.layers[0].cross_attn.forward(&bind, q, &sources, false).unwrap().value();
    let mut zero_rows = 0;
    for cell in 0..16 {
        let seen = sources.iter().any(|s| s.valid[cell]);
        let row = &out.data()[cell * 4..cell * 4 + 4];
        if !seen {
            assert!(row.iter().all(|&v| v == 0.0));
            zero_rows += 1;
        } else {
            assert!(row.iter().any(|&v| v != 0.0));
        }
    }
    // the 8 cells behind the camera plus 2 outside its field of view
    assert_eq!(zero_rows, 10);
}

#[test]
fn camera_path_with_grid_projection_equals_lidar_encoder() {
    let refs = ReferenceGrid::build(spec(4, 4, 2)).unwrap();
    let cfg = config(4, 3, 2, 2, 3);
    let lidar = BevEncoder::new("encoder.lidar", Modality::Lidar, cfg, refs.clone());
    let cam = BevEncoder::new("encoder.cam", Modality::Camera, cfg, refs);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    lidar.init(&mut store, &mut rng).unwrap();
    let copies: Vec<(String, Tensor)> = store
        .iter()
        .map(|(n, t)| (n.replacen("encoder.lidar", "encoder.cam", 1), t.clone()))
        .collect();
    for (n, t) in copies {
        store.insert(n, t).unwrap();
    }
    let f = rand_tensor(&mut rng, &[6, 5, 3], 1.0);
    let q = rand_tensor(&mut rng, &[16, 4], 1.0);
    let tape = Tape::new();
    let bind = Binder::frozen(&store, &tape);
    let fl = tape.constant(f);
    let a = encode_lidar_bev(&bind, &lidar, tape.constant(q.clone()), fl).unwrap().value();
    let views = [SensorView { features: fl, projection: Projection::Grid }];
    let b = encode_camera_bev(&bind, &cam, tape.constant(q), &views).unwrap().value();
    assert_eq!(a.data(), b.data());
}

#[test]
fn output_shape_ignores_lidar_resolution() {
    let refs = ReferenceGrid::build(spec(4, 4, 2)).unwrap();
    let enc = BevEncoder::new("encoder.lidar", Modality::Lidar, config(4, 3, 2, 2, 1), refs);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    enc.init(&mut store, &mut rng).unwrap();
    for (hl, wl) in [(4, 4), (8, 8), (3, 7)] {
        let tape = Tape::new();
        let bind = Binder::frozen(&store, &tape);
        let f = tape.constant(rand_tensor(&mut rng, &[hl, wl, 3], 1.0));
        let q = tape.constant(rand_tensor(&mut rng, &[16, 4], 1.0));
        assert_eq!(encode_lidar_bev(&bind, &enc, q, f).unwrap().shape(), vec![16, 4]);
    }
}

#[test]
fn camera_encoder_without_views_is_a_contract_error() {
    let refs = ReferenceGrid::build(spec(2, 2, 1)).unwrap();
    let enc = BevEncoder::new("encoder.cam", Modality::Camera, config(2, 2, 1, 1, 1), refs);
    let mut store = ParamStore::new();
    enc.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let tape = Tape::new();
    let bind = Binder::frozen(&store, &tape);
    let r = encode_camera_bev(&bind, &enc, tape.constant(Tensor::zeros(&[4, 2])), &[]);
    assert!(matches!(r, Err(bevfuse::Error::Contract(_))));
}

fn coupling(mode: QueryMode) -> (bool, bool) {
    let refs = ReferenceGrid::build(spec(2, 2, 1)).unwrap();
    let cfg = config(2, 2, 1, 1, 1);
    let cam = BevEncoder::new("encoder.cam", Modality::Camera, cfg, refs);
    let queries = BevQueries { mode, cells: 4, channels: 2 };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    queries.init(&mut store, &mut rng).unwrap();
    cam.init(&mut store, &mut rng).unwrap();
    let feats = rand_tensor(&mut rng, &[8, 8, 2], 1.0);
    let target = rand_tensor(&mut rng, &[4, 2], 1.0);
    let lidar_before = store.get(&queries.param_name(Modality::Lidar)).unwrap().clone();
    let cam_before = store.get(&queries.param_name(Modality::Camera)).unwrap().clone();

    let tape = Tape::new();
    let bind = Binder::trainable(&store, &tape);
    let q = queries.get(&bind, Modality::Camera).unwrap();
    let views = [SensorView { features: tape.constant(feats), projection: Projection::Camera(overhead_camera()) }];
    let out = encode_camera_bev(&bind, &cam, q, &views).unwrap();
    let loss = out.mul(tape.constant(target)).unwrap().sum();
    let mut grads = tape.backward(loss).unwrap();
    let g = bind.collect_grads(&mut grads);
    drop(bind);
    Adam::new(AdamConfig::default()).step(&mut store, g).unwrap();
    (
        store.get(&queries.param_name(Modality::Lidar)).unwrap() != &lidar_before,
        store.get(&queries.param_name(Modality::Camera)).unwrap() != &cam_before,
    )
}

#[test]
fn shared_queries_couple_camera_loss_into_lidar_input() {
    assert_eq!(coupling(QueryMode::Shared), (true, true));
    assert_eq!(coupling(QueryMode::Separate), (false, true));
}

#[test]
fn separate_queries_are_disjoint_parameters() {
    let q = BevQueries { mode: QueryMode::Separate, cells: 4, channels: 2 };
    let mut store = ParamStore::new();
    q.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_ne!(q.param_name(Modality::Camera), q.param_name(Modality::Lidar));
    assert_eq!(store.len(), 2);
    let shared = BevQueries { mode: QueryMode::Shared, ..q };
    assert_eq!(shared.param_name(Modality::Camera), shared.param_name(Modality::Lidar));
}

#[test]
fn lidar_encoder_passes_gradcheck() {
    let refs = ReferenceGrid::build(spec(2, 2, 2)).unwrap();
    let mut cfg = config(2, 2, 1, 2, 2);
    cfg.self_spread = 0.37;
    cfg.cross_spread = 0.41;
    let enc = BevEncoder::new("encoder.lidar", Modality::Lidar, cfg, refs);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    enc.init(&mut store, &mut rng).unwrap();
    let q = rand_tensor(&mut rng, &[4, 2], 1.0);
    let f = rand_tensor(&mut rng, &[3, 3, 2], 1.0);
    let w = rand_tensor(&mut rng, &[4, 2], 1.0);
    let report = gradcheck::check_with_params(&store, &[q, f], 1e-5, Some(12), |bind, x| {
        let out = encode_lidar_bev(bind, &enc, x[0], x[1])?;
        Ok(out.mul(bind.tape().constant(w.clone()))?.sum())
    })
    .unwrap();
    assert!(report.passes(1e-4), "{report:?}");
}

#[test]
fn camera_encoder_passes_gradcheck() {
    let refs = ReferenceGrid::build(spec(2, 2, 2)).unwrap();
    let mut cfg = config(2, 2, 1, 2, 1);
    cfg.self_spread = 0.37;
    cfg.cross_spread = 0.41;
    let enc = BevEncoder::new("encoder.cam", Modality::Camera, cfg, refs);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    enc.init(&mut store, &mut rng).unwrap();
    let q = rand_tensor(&mut rng, &[4, 2], 1.0);
    let f = rand_tensor(&mut rng, &[8, 8, 2], 1.0);
    let w = rand_tensor(&mut rng, &[4, 2], 1.0);
    let report = gradcheck::check_with_params(&store, &[q, f], 1e-5, Some(12), |bind, x| {
        let views = [SensorView { features: x[1], projection: Projection::Camera(overhead_camera()) }];
        let out = encode_camera_bev(bind, &enc, x[0], &views)?;
        Ok(out.mul(bind.tape().constant(w.clone()))?.sum())
    })
    .unwrap();
    assert!(report.passes(1e-4), "{report:?}");
}
