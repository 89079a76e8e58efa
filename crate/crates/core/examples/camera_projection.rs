//! Projects the pillar reference points of a BEV grid into a forward camera
//! and reports which cells each camera of the default rig can see.

use bevfuse::geometry::{BevGridSpec, ReferenceGrid};
use bevfuse::synth::RigConfig;

fn main() -> bevfuse::Result<()> {
    let spec = BevGridSpec { h: 8, w: 8, d: 2, extent: (-16.0, 16.0, -16.0, 16.0), z_range: (0.0, 2.4) };
    let refs = ReferenceGrid::build(spec)?;
    let rig = RigConfig::default();
    let cams = rig.cameras();

    let front = &cams[0];
    for (h, w) in [(4, 6), (4, 7), (2, 5)] {
        for z in 0..spec.d {
            let p = refs.point(z, h, w);
            let (uv, depth) = front.project_point(p);
            println!(
                "cell ({h},{w}) level {z} world ({:+.1}, {:+.1}, {:.1}) -> uv ({:6.2}, {:6.2}) depth {:5.2}",
                p[0], p[1], p[2], uv[0], uv[1], depth
            );
        }
    }

    println!("\nvisibility of each BEV cell (any level), one digit per camera that sees it:");
    let proj: Vec<_> = cams.iter().map(|c| c.project_grid(&refs)).collect();
    for h in 0..spec.h {
        let row: String = (0..spec.w)
            .map(|w| {
                let n = proj
                    .iter()
                    .filter(|p| (0..spec.d).any(|z| p.visible[refs.index(z, h, w)]))
                    .count();
                char::from_digit(n as u32, 10).unwrap()
            })
            .collect();
        println!("{row}");
    }
    Ok(())
}
