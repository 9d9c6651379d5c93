//! Gaussian kernel, random Fourier features and their adaptive fine-tuning.
//!
//! A map `φ(x)ⱼ = s·√2·cos(wⱼ·x + bⱼ)` with `wⱼ ~ N(0, 2γI)`, `bⱼ ~ U[0, 2π)`
//! and `s = 1/√D` satisfies `E⟨φ(x), φ(y)⟩ = exp(−γ‖x − y‖²)`.

use std::f64::consts::{PI, SQRT_2};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::seeded;
use crate::{Error, Result};

/// `exp(−γ‖x − y‖²)`.
pub fn gaussian_kernel(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    Error::check_dim(x.len(), y.len())?;
    let d2: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((-gamma * d2).exp())
}

/// Explicit feature map `x ↦ s·√2·cos(Wx + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    /// `D × m` projection, one frequency vector per row.
    pub weights: Array2<f64>,
    /// Length-`D` phase offsets.
    pub offsets: Array1<f64>,
    pub scaling: f64,
    /// Bandwidth of the kernel the map approximates.
    pub gamma: f64,
}

/// Draw a random Fourier feature map for `exp(−γ‖x − y‖²)` on `m`-vectors.
pub fn sample_rff(m: usize, d: usize, gamma: f64, seed: u64) -> Result<FeatureMap> {
    if m == 0 || d == 0 {
        return Err(Error::invalid(format!("feature map needs m >= 1 and D >= 1 (got m={m}, D={d})")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    let mut rng = seeded(seed);
    let normal = Normal::new(0.0, (2.0 * gamma).sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
    let weights = Array2::from_shape_fn((d, m), |_| normal.sample(&mut rng));
    let offsets = Array1::from_shape_fn(d, |_| rng.random_range(0.0..2.0 * PI));
    Ok(FeatureMap {
        weights,
        offsets,
        scaling: 1.0 / (d as f64).sqrt(),
        gamma,
    })
}

impl FeatureMap {
    /// Number of features `D`.
    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    /// Input dimension `m`.
    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn phi(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        Error::check_dim(self.input_dim(), x.len())?;
        let k = self.scaling * SQRT_2;
        Ok((self.weights.dot(&x) + &self.offsets).mapv(|u| k * u.cos()))
    }

    /// Features of every row of `x`, as an `N × D` matrix.
    pub fn phi_matrix(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Error::check_dim(self.input_dim(), x.ncols())?;
        let k = self.scaling * SQRT_2;
        let mut u = x.dot(&self.weights.t());
        u += &self.offsets.view().insert_axis(Axis(0));
        u.mapv_inplace(|v| k * v.cos());
        Ok(u)
    }

    /// Normalized features of every row; fails on a zero feature vector.
    pub fn normalized_matrix(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let mut f = self.phi_matrix(x)?;
        for (i, mut row) in f.outer_iter_mut().enumerate() {
            let n = row.dot(&row).sqrt();
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::Numerical(format!("feature vector of row {i} has norm {n}")));
            }
            row /= n;
        }
        Ok(f)
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.offsets.len()
    }

    /// `W` row-major, then `b`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.weights.iter().chain(self.offsets.iter()).copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let nw = self.weights.len();
        for (w, v) in self.weights.iter_mut().zip(&flat[..nw]) {
            *w = *v;
        }
        for (b, v) in self.offsets.iter_mut().zip(&flat[nw..]) {
            *b = *v;
        }
    }

    /// Backpropagate `∂L/∂φ(x)` to `∂L/∂x`: `∂φⱼ/∂x = −s√2·sin(uⱼ)·wⱼ`.
    pub(crate) fn input_gradient(&self, x: ArrayView1<'_, f64>, d_phi: ArrayView1<'_, f64>) -> Array1<f64> {
        let k = self.scaling * SQRT_2;
        let u = self.weights.dot(&x) + &self.offsets;
        let coef = Array1::from_shape_fn(u.len(), |j| -k * u[j].sin() * d_phi[j]);
        self.weights.t().dot(&coef)
    }

    /// Accumulate `∂L/∂W, ∂L/∂b` (flat layout) given `∂L/∂φ(x)`.
    pub(crate) fn param_gradient(&self, x: ArrayView1<'_, f64>, d_phi: ArrayView1<'_, f64>, out: &mut [f64]) {
        let k = self.scaling * SQRT_2;
        let m = self.input_dim();
        let d = self.dim();
        let u = self.weights.dot(&x) + &self.offsets;
        for j in 0..d {
            let c = -k * u[j].sin() * d_phi[j];
            for t in 0..m {
                out[j * m + t] += c * x[t];
            }
            out[d * m + j] += c;
        }
    }
}

/// `v / ‖v‖`.
pub fn normalize_phi(v: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    let n = v.dot(&v).sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Numerical(format!("cannot normalize a vector of norm {n}")));
    }
    Ok(&v / n)
}

/// Mean of `(⟨φ(xᵢ), φ(xⱼ)⟩ − k_γ(xᵢ, xⱼ))²` over `pairs`, with `γ` the map's bandwidth.
pub fn pair_loss(map: &FeatureMap, x: &Array2<f64>, pairs: &[(usize, usize)]) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let f = map.phi_matrix(x)?;
    let mut total = 0.0;
    for &(i, j) in pairs {
        let k = gaussian_kernel(x.row(i), x.row(j), map.gamma)?;
        total += (f.row(i).dot(&f.row(j)) - k).powi(2);
    }
    Ok(total / pairs.len() as f64)
}

/// Pair loss and its gradient with respect to the flat `(W, b)` parameters.
///
/// With `uⱼ = wⱼ·x + bⱼ`, `vⱼ = wⱼ·y + bⱼ` and residual `r`:
/// `∂/∂wⱼ = 2r·2s²(−sin uⱼ cos vⱼ·x − cos uⱼ sin vⱼ·y)`,
/// `∂/∂bⱼ = −2r·2s²·sin(uⱼ + vⱼ)`.
pub fn pair_loss_grad(map: &FeatureMap, x: &Array2<f64>, pairs: &[(usize, usize)]) -> Result<(f64, Vec<f64>)> {
    Error::check_dim(map.input_dim(), x.ncols())?;
    let (d, m) = (map.dim(), map.input_dim());
    let mut grad = vec![0.0; map.num_params()];
    if pairs.is_empty() {
        return Ok((0.0, grad));
    }
    let mut u = x.dot(&map.weights.t());
    u += &map.offsets.view().insert_axis(Axis(0));
    let cos = u.mapv(f64::cos);
    let sin = u.mapv(f64::sin);
    let s2 = 2.0 * map.scaling * map.scaling;
    let mut total = 0.0;
    for &(i, j) in pairs {
        let k = gaussian_kernel(x.row(i), x.row(j), map.gamma)?;
        let approx = s2 * cos.row(i).dot(&cos.row(j));
        let r = approx - k;
        total += r * r;
        let c = 2.0 * r * s2;
        let (xi, xj) = (x.row(i), x.row(j));
        for l in 0..d {
            let a = -c * sin[[i, l]] * cos[[j, l]];
            let b = -c * cos[[i, l]] * sin[[j, l]];
            let row = &mut grad[l * m..(l + 1) * m];
            for t in 0..m {
                row[t] += a * xi[t] + b * xj[t];
            }
            grad[d * m + l] += a + b;
        }
    }
    let n = pairs.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((total / n, grad))
}

/// Draw `count` distinct unordered pairs `(i < j)` out of `n` points.
pub fn sample_pairs(n: usize, count: usize, seed: u64) -> Vec<(usize, usize)> {
    let total = n * n.saturating_sub(1) / 2;
    let count = count.min(total);
    let mut rng = seeded(seed);
    let mut picks = sample(&mut rng, total, count).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|k| unrank_pair(n, k)).collect()
}

/// Inverse of the row-major enumeration of the strict upper triangle.
fn unrank_pair(n: usize, k: usize) -> (usize, usize) {
    // rows before i hold i·n − i(i+1)/2 pairs
    let before = |i: usize| i * n - i * (i + 1) / 2;
    let nf = n as f64;
    let guess = ((2.0 * nf - 1.0 - ((2.0 * nf - 1.0).powi(2) - 8.0 * k as f64).max(0.0).sqrt()) / 2.0).floor();
    let mut i = (guess.max(0.0) as usize).min(n.saturating_sub(2));
    while i > 0 && before(i) > k {
        i -= 1;
    }
    while before(i + 1) <= k {
        i += 1;
    }
    (i, i + 1 + k - before(i))
}

/// Settings for the kernel-matching stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Total pair count; `None` means `min(10·N, 50000)`.
    pub pairs: Option<usize>,
    /// Share of pairs held out to select the best map.
    pub holdout_fraction: f64,
}

impl Default for AffConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 1e-3,
            batch_size: 256,
            optimizer: OptimizerKind::Adam,
            pairs: None,
            holdout_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AffOutcome {
    pub map: FeatureMap,
    /// Held-out pair loss: entry 0 for the initial map, then one per epoch.
    pub holdout_losses: Vec<f64>,
    /// Epoch whose map was kept (0 = the initial map).
    pub best_epoch: usize,
}

impl AffOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.holdout_losses[0]
    }

    pub fn best_loss(&self) -> f64 {
        self.holdout_losses[self.best_epoch]
    }
}

/// Fit `(W, b)` so that `⟨φ(x), φ(y)⟩` matches the Gaussian kernel on pairs of
/// `latents`. The returned map is the one with the lowest held-out pair loss,
/// so it never does worse than the starting map on that set.
pub fn train_aff(map: &FeatureMap, latents: &Array2<f64>, cfg: &AffConfig, seed: u64) -> Result<AffOutcome> {
    let n = latents.nrows();
    if n < 2 {
        return Err(Error::invalid("kernel matching needs at least two latents"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    if !(0.0..1.0).contains(&cfg.holdout_fraction) {
        return Err(Error::invalid("holdout_fraction must lie in [0, 1)"));
    }
    let count = cfg.pairs.unwrap_or_else(|| (10 * n).min(50_000));
    let mut pairs = sample_pairs(n, count, seed);
    let mut rng = seeded(crate::derive_seed(seed, 1));
    pairs.shuffle(&mut rng);
    let n_hold = ((pairs.len() as f64) * cfg.holdout_fraction).round() as usize;
    let n_hold = if cfg.holdout_fraction > 0.0 { n_hold.clamp(1, pairs.len() - 1) } else { 0 };
    let (hold, fit_pairs) = pairs.split_at(n_hold);
    let hold = if hold.is_empty() { fit_pairs } else { hold };
    let mut fit_pairs = fit_pairs.to_vec();

    let mut current = map.clone();
    let mut flat = current.to_flat();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, flat.len());
    let mut best = current.clone();
    let mut holdout_losses = vec![pair_loss(&current, latents, hold)?];
    let mut best_epoch = 0;
    for epoch in 1..=cfg.epochs {
        fit_pairs.shuffle(&mut rng);
        for batch in fit_pairs.chunks(cfg.batch_size) {
            let (_, g) = pair_loss_grad(&current, latents, batch)?;
            opt.step(&mut flat, &g);
            current.set_flat(&flat);
        }
        let loss = pair_loss(&current, latents, hold)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("kernel matching diverged at epoch {epoch}")));
        }
        if loss < holdout_losses[best_epoch] {
            best = current.clone();
            best_epoch = epoch;
        }
        holdout_losses.push(loss);
    }
    Ok(AffOutcome {
        map: best,
        holdout_losses,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use ndarray::array;
    use proptest::prelude::*;
    use rand_distr::StandardNormal;

    fn random_points(n: usize, m: usize, seed: u64) -> Array2<f64> {
        let mut rng = seeded(seed);
        Array2::from_shape_fn((n, m), |_| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn kernel_values() {
        let x = array![1.0, 2.0];
        assert_eq!(gaussian_kernel(x.view(), x.view(), 3.0).unwrap(), 1.0);
        let k = gaussian_kernel(array![0.0].view(), array![1.0].view(), 1.0).unwrap();
        assert!((k - (-1.0f64).exp()).abs() < 1e-15);
        assert!((k - 0.3679).abs() < 1e-4);
        assert!(gaussian_kernel(x.view(), x.view(), 0.0).is_err());
        let pts = random_points(20, 3, 1);
        for i in 0..19 {
            let a = gaussian_kernel(pts.row(i), pts.row(i + 1), 0.7).unwrap();
            let b = gaussian_kernel(pts.row(i + 1), pts.row(i), 0.7).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn constant_map_has_norm_two() {
        let d = 10;
        let map = FeatureMap {
            weights: Array2::zeros((d, 3)),
            offsets: Array1::zeros(d),
            scaling: 1.0 / (d as f64).sqrt(),
            gamma: 1.0,
        };
        let f = map.phi(array![1.0, -4.0, 2.0].view()).unwrap();
        for v in f.iter() {
            assert!((v - SQRT_2 / (d as f64).sqrt()).abs() < 1e-15);
        }
        assert!((f.dot(&f) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rff_is_seeded_and_shaped() {
        let a = sample_rff(4, 50, 0.5, 9).unwrap();
        assert_eq!(a, sample_rff(4, 50, 0.5, 9).unwrap());
        assert_eq!(a.weights.dim(), (50, 4));
        assert!(a.offsets.iter().all(|b| (0.0..2.0 * PI).contains(b)));
        assert!(sample_rff(0, 5, 1.0, 0).is_err());
        assert!(sample_rff(3, 5, -1.0, 0).is_err());
    }

    #[test]
    fn one_feature_map_stays_finite() {
        let map = sample_rff(3, 1, 1.0, 2).unwrap();
        let f = map.phi(array![10.0, -3.0, 0.5].view()).unwrap();
        assert!(f.iter().all(|v| v.is_finite() && v.abs() <= SQRT_2));
    }

    #[test]
    fn rff_inner_products_approximate_the_kernel() {
        let gamma = 1.0;
        let map = sample_rff(4, 2000, gamma, 3).unwrap();
        let x = random_points(200, 4, 4);
        let y = random_points(200, 4, 5);
        let fx = map.phi_matrix(&x).unwrap();
        let fy = map.phi_matrix(&y).unwrap();
        let mut mean = 0.0;
        for i in 0..200 {
            let exact = gaussian_kernel(x.row(i), y.row(i), gamma).unwrap();
            mean += (fx.row(i).dot(&fy.row(i)) - exact).abs() / 200.0;
        }
        assert!(mean < 0.02, "mean error {mean}");
    }

    #[test]
    fn phi_matrix_agrees_with_phi() {
        let map = sample_rff(3, 17, 0.3, 1).unwrap();
        let x = random_points(5, 3, 2);
        let f = map.phi_matrix(&x).unwrap();
        for i in 0..5 {
            let r = map.phi(x.row(i)).unwrap();
            for (a, b) in r.iter().zip(f.row(i).iter()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn normalization() {
        let v = normalize_phi(array![3.0, 4.0].view()).unwrap();
        assert_eq!(v.to_vec(), vec![0.6, 0.8]);
        assert_eq!(normalize_phi(v.view()).unwrap(), v);
        assert!(normalize_phi(array![0.0, 0.0].view()).is_err());
    }

    #[test]
    fn pairs_are_distinct_and_ordered() {
        let p = sample_pairs(30, 200, 1);
        assert_eq!(p.len(), 200);
        let mut s = p.clone();
        s.dedup();
        assert_eq!(s.len(), 200);
        assert!(p.iter().all(|&(i, j)| i < j && j < 30));
        assert_eq!(sample_pairs(4, 100, 0).len(), 6);
    }

    #[test]
    fn unrank_enumerates_every_pair() {
        for n in 2..12 {
            let mut k = 0;
            for i in 0..n {
                for j in i + 1..n {
                    assert_eq!(unrank_pair(n, k), (i, j));
                    k += 1;
                }
            }
        }
    }

    #[test]
    fn pair_loss_gradient_matches_finite_differences() {
        let map = sample_rff(3, 8, 0.8, 6).unwrap();
        let x = random_points(10, 3, 7);
        let pairs = sample_pairs(10, 20, 8);
        let (loss, g) = pair_loss_grad(&map, &x, &pairs).unwrap();
        assert!((loss - pair_loss(&map, &x, &pairs).unwrap()).abs() < 1e-14);
        let f = |theta: &[f64]| {
            let mut m = map.clone();
            m.set_flat(theta);
            pair_loss(&m, &x, &pairs).unwrap()
        };
        let r = gradcheck::check(f, &map.to_flat(), &g, 1e-5, 1e-4);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn input_and_param_gradients_match_finite_differences() {
        let map = sample_rff(3, 8, 0.8, 6).unwrap();
        let x = array![0.3, -0.7, 1.2];
        let c = Array1::linspace(-1.0, 1.0, 8);
        let gx = map.input_gradient(x.view(), c.view());
        let fx = |v: &[f64]| c.dot(&map.phi(Array1::from(v.to_vec()).view()).unwrap());
        assert!(gradcheck::check(fx, &x.to_vec(), &gx.to_vec(), 1e-6, 1e-6).passed());
        let mut gp = vec![0.0; map.num_params()];
        map.param_gradient(x.view(), c.view(), &mut gp);
        let fp = |theta: &[f64]| {
            let mut m = map.clone();
            m.set_flat(theta);
            c.dot(&m.phi(x.view()).unwrap())
        };
        assert!(gradcheck::check(fp, &map.to_flat(), &gp, 1e-6, 1e-6).passed());
    }

    #[test]
    fn aff_never_worse_on_holdout() {
        let x = random_points(60, 4, 9);
        let map = sample_rff(4, 32, 0.5, 10).unwrap();
        let cfg = AffConfig {
            epochs: 10,
            lr: 5e-3,
            ..AffConfig::default()
        };
        let out = train_aff(&map, &x, &cfg, 11).unwrap();
        assert!(out.best_loss() <= out.initial_loss());
        assert!(out.best_loss() < out.initial_loss(), "{:?}", out.holdout_losses);
    }

    #[test]
    fn aff_zero_lr_keeps_map() {
        let x = random_points(20, 2, 9);
        let map = sample_rff(2, 16, 0.5, 10).unwrap();
        let cfg = AffConfig {
            epochs: 3,
            lr: 0.0,
            ..AffConfig::default()
        };
        assert_eq!(train_aff(&map, &x, &cfg, 1).unwrap().map, map);
    }

    proptest! {
        #[test]
        fn normalized_vectors_have_unit_norm(
            v in proptest::collection::vec(-100.0f64..100.0, 1..20),
            c in 0.01f64..100.0,
        ) {
            let a = Array1::from(v);
            prop_assume!(a.dot(&a) > 1e-6);
            let u = normalize_phi(a.view()).unwrap();
            prop_assert!((u.dot(&u).sqrt() - 1.0).abs() < 1e-12);
            let w = normalize_phi((&a * c).view()).unwrap();
            for (p, q) in u.iter().zip(w.iter()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }
    }
}
