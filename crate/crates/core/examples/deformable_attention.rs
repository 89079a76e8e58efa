//! Deformable attention over a single feature map: with zeroed offsets and
//! identity value/output projections every query reads the feature vector at
//! its own reference point.

use bevfuse::deform_attn::{AttnSource, DeformAttn, DeformAttnConfig};
use bevfuse::tensor::{Binder, ParamStore, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> bevfuse::Result<()> {
    let cfg = DeformAttnConfig { channels: 4, value_channels: 4, heads: 2, points: 3 };
    let attn = DeformAttn::new("demo", cfg);
    let mut store = ParamStore::new();
    attn.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0), 1.0)?;

    // Zero offsets, identity projections.
    store.insert("demo.offset_proj.bias", Tensor::zeros(&[cfg.heads * cfg.points * 2]))?;
    let hd = cfg.head_dim();
    store.insert(
        "demo.value_proj.weight",
        Tensor::from_fn(&[cfg.heads, 4, hd], |i| {
            let (m, c, j) = (i / (4 * hd), (i / hd) % 4, i % hd);
            if c == m * hd + j { 1.0 } else { 0.0 }
        }),
    )?;
    store.insert("demo.output_proj.weight", Tensor::from_fn(&[4, 4], |i| if i % 5 == 0 { 1.0 } else { 0.0 }))?;
    store.insert("demo.output_proj.bias", Tensor::zeros(&[4]))?;

    // A 3×3 map whose channel c at (r, col) holds 100·c + 10·r + col.
    let features = Tensor::from_fn(&[3, 3, 4], |i| {
        let (r, col, c) = (i / 12, (i / 4) % 3, i % 4);
        (100 * c + 10 * r + col) as f64
    });
    let refs = vec![[0.0, 0.0], [1.0, 2.0], [2.5, 1.0]];
    let tape = Tape::new();
    let bind = Binder::frozen(&store, &tape);
    let src = AttnSource { features: tape.constant(features), refs: refs.clone(), valid: vec![true; 3] };
    let queries = tape.constant(Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.37).sin()));
    let out = attn.forward(&bind, queries, &[src], true)?.value();
    for (q, r) in refs.iter().enumerate() {
        println!("query {q} at (row {}, col {}): {:?}", r[0], r[1], &out.data()[q * 4..q * 4 + 4]);
    }
    println!("(the last reference sits between rows 2 and 3; row 3 is zero padding)");
    Ok(())
}
