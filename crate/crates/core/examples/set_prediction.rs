//! Bipartite matching between predictions and ground truth, and the set loss
//! of a freshly initialized decoder.

use bevfuse::detection::{decode, hungarian_match, matching_cost, set_loss, Decoder, DecoderConfig, GroundTruthBox, LossConfig};
use bevfuse::geometry::BevGridSpec;
use bevfuse::tensor::{Binder, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> bevfuse::Result<()> {
    let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0], vec![0.5, 6.0, 1.0]];
    let assign = hungarian_match(&cost)?;
    let total: f64 = assign.iter().enumerate().map(|(g, &p)| cost[p][g]).sum();
    println!("cost rows = predictions, columns = ground truth");
    println!("assignment gt -> prediction {assign:?}, total cost {total}");

    let spec = BevGridSpec { h: 4, w: 4, d: 1, extent: (-8.0, 8.0, -8.0, 8.0), z_range: (0.0, 2.0) };
    let dcfg = DecoderConfig { channels: 8, layers: 2, n_obj: 5, classes: 3, ffn_hidden: 16, query_self_attn: true };
    let dec = Decoder::new(dcfg, spec);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    dec.init(&mut store, &mut rng)?;
    let tape = Tape::new();
    let bind = Binder::frozen(&store, &tape);
    let fused = tape.constant(Tensor::from_fn(&[16, 8], |_| rng.gen_range(-1.0..1.0)));
    let out = dec.forward(&bind, fused)?;
    let gts = vec![
        GroundTruthBox { center: [2.0, -1.0], size: [1.8, 4.2], yaw: 0.4, class_id: 0 },
        GroundTruthBox { center: [-5.0, 3.0], size: [0.8, 1.2], yaw: -1.2, class_id: 2 },
    ];
    let loss_cfg = LossConfig::default();
    let c = matching_cost(&out, &gts, &loss_cfg);
    println!("decoder matches gt -> query {:?}", hungarian_match(&c)?);
    let loss = set_loss(&out, &gts, &loss_cfg)?;
    println!("set loss at initialization {:.4}", loss.loss.item());
    for (q, b) in decode(&out).iter().enumerate() {
        let s = b.scored();
        println!("query {q}: class {} score {:.3} center ({:+.2}, {:+.2})", s.class, s.score, s.x, s.y);
    }
    Ok(())
}
