//! The three fusion operators on toy BEV maps, the CNW weight normalization,
//! and the frequencies of modality-dropout masks.

use bevfuse::fusion::{fuse_avg, fuse_cnw, fuse_concat, normalize_weights, sample_modality_mask, MdConfig, ModalityMask};
use bevfuse::tensor::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> bevfuse::Result<()> {
    let tape = Tape::new();
    let cam = tape.constant(Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])?);
    let lidar = tape.constant(Tensor::new(&[2, 3], vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0])?);
    let a_cam = [0.0, 2.0, -2.0];
    let a_lidar = [0.0, -2.0, 2.0];

    let (wc, wl) = normalize_weights(&a_cam, &a_lidar, ModalityMask::BOTH)?;
    println!("normalized weights cam {wc:.3?} lidar {wl:.3?}");
    let (ac, al) = (tape.constant(Tensor::new(&[3], a_cam.to_vec())?), tape.constant(Tensor::new(&[3], a_lidar.to_vec())?));
    println!("cnw     {:?}", fuse_cnw(Some(cam), Some(lidar), ac, al)?.value().data());
    println!("avg     {:?}", fuse_avg(Some(cam), Some(lidar))?.value().data());
    println!("concat  {:?}", fuse_concat(Some(cam), Some(lidar))?.value().data());
    println!("cnw, camera missing  {:?}", fuse_cnw(None, Some(lidar), ac, al)?.value().data());
    println!("concat, camera missing {:?}", fuse_concat(None, Some(lidar))?.value().data());

    let md = MdConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 100_000;
    let mut counts = [0usize; 3];
    for _ in 0..n {
        let m = sample_modality_mask(&md, &mut rng);
        counts[match (m.use_cam, m.use_lidar) {
            (true, true) => 0,
            (false, true) => 1,
            _ => 2,
        }] += 1;
    }
    println!(
        "p_md={} p_l={}: L+C {:.3}  L {:.3}  C {:.3} over {n} draws",
        md.p_md,
        md.p_l,
        counts[0] as f64 / n as f64,
        counts[1] as f64 / n as f64,
        counts[2] as f64 / n as f64
    );
    Ok(())
}
