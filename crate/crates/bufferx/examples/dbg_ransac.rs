use nalgebra::Vector3;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..20 {
        let pairs: Vec<(Vector3<f64>, Vector3<f64>)> = (0..60)
            .map(|_| {
                (
                    Vector3::new(rng.gen::<f64>() * 10.0, rng.gen::<f64>() * 10.0, rng.gen::<f64>() * 10.0),
                    Vector3::new(rng.gen::<f64>() * 10.0, rng.gen::<f64>() * 10.0, rng.gen::<f64>() * 10.0),
                )
            })
            .collect();
        let seed: u64 = rng.gen();
        match bufferx::solver::ransac(&pairs, 0.02, 2_000, seed) {
            Ok(res) => eprintln!("trial {trial}: ok, inliers {}", res.inliers.len()),
            Err(e) => eprintln!("trial {trial}: ERR {e} (seed {seed})"),
        }
    }
}
