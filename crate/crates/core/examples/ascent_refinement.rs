//! Finite-difference ascent on a re-weight scale and on an injected map.

use coadapt::edit::{ascend_map, ascend_scale, AscentConfig};
use coadapt::linalg::Matrix;

fn main() -> coadapt::Result<()> {
    // Scale: a concave reward peaked at c = 1.
    let c = ascend_scale(-1.5, |c| -(c - 1.0).powi(2), 0.5, 40)?;
    println!("scale ascent from -1.5 ends at {c:.5}");
    // A reward that keeps rising past the clamp stops at the boundary.
    let c = ascend_scale(1.0, |c| c, 0.5, 10)?;
    println!("monotone reward clamps at {c}");

    // Map: pull a uniform 4x3 map toward a row-stochastic target.
    let target = Matrix::from_rows(&[
        vec![0.7, 0.2, 0.1],
        vec![0.1, 0.8, 0.1],
        vec![0.3, 0.3, 0.4],
        vec![0.0, 0.5, 0.5],
    ])?;
    let start = Matrix::from_vec(4, 3, vec![1.0 / 3.0; 12])?;
    let cfg = AscentConfig { coords: 12, ..AscentConfig::default() };
    let mut m = start;
    for step in 0..5 {
        m = ascend_map(&m, |x| -x.dist2(&target), 0.25, 4, cfg.map_sampling())?;
        println!("after {:>2} steps: distance {:.5}", (step + 1) * 4, m.dist2(&target).sqrt());
    }
    Ok(())
}
