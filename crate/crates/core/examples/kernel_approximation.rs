// How closely random Fourier features reproduce the Gaussian kernel as the
// feature count grows.

use leand::fourier::{gaussian_kernel, sample_rff};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> leand::Result<()> {
    let (m, gamma, pairs) = (4, 1.0, 200);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = Array2::from_shape_fn((2 * pairs, m), |_| StandardNormal.sample(&mut rng));

    println!("{:>6} {:>10} {:>10}", "D", "mean_err", "max_err");
    for d in [50, 250, 1000, 2000] {
        let map = sample_rff(m, d, gamma, 3)?;
        let phi = map.phi_matrix(&x)?;
        let mut errs = Vec::with_capacity(pairs);
        for i in 0..pairs {
            let (a, b) = (2 * i, 2 * i + 1);
            let approx = phi.row(a).dot(&phi.row(b));
            let exact = gaussian_kernel(x.row(a), x.row(b), gamma)?;
            errs.push((approx - exact).abs());
        }
        let mean = errs.iter().sum::<f64>() / pairs as f64;
        let max = errs.iter().cloned().fold(0.0, f64::max);
        println!("{d:>6} {mean:>10.5} {max:>10.5}");
    }
    Ok(())
}
