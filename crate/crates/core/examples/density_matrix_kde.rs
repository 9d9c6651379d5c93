// A density matrix built from normalized Fourier features against an exact
// Gaussian KDE on a one-dimensional mixture.

use leand::density::{build_rho, density_full, exact_kde, factorize_features, density_lowrank, Normalization};
use leand::fourier::sample_rff;
use ndarray::{array, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> leand::Result<()> {
    let gamma = 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let left = Normal::new(-2.0, 0.5).expect("valid normal");
    let right = Normal::new(1.5, 0.8).expect("valid normal");
    let train = Array2::from_shape_fn((300, 1), |(i, _)| {
        if i % 3 == 0 { left.sample(&mut rng) } else { right.sample(&mut rng) }
    });

    // the feature kernel must be the square root of the target kernel
    let map = sample_rff(1, 2000, gamma / 2.0, 9)?;
    let feats = map.normalized_matrix(&train)?;
    let rho = build_rho(&feats)?;
    let norm = Normalization::gaussian(gamma, 1)?;
    let low = factorize_features(&feats, 30, norm)?;
    println!("trace(rho) = {:.12}, rank-30 model keeps {} components", rho.trace(), low.rank());

    println!("{:>6} {:>10} {:>10} {:>10}", "x", "kde", "full", "rank30");
    for q in [-3.0, -2.0, -1.0, 0.0, 1.0, 1.5, 3.0] {
        let phi = map.normalized_matrix(&array![[q]])?;
        let exact = exact_kde(&train, array![q].view(), gamma)?;
        let full = density_full(&rho, phi.row(0), norm)?;
        let approx = density_lowrank(&low, phi.row(0))?;
        println!("{q:>6.1} {exact:>10.4} {full:>10.4} {approx:>10.4}");
    }
    Ok(())
}
