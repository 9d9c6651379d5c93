//! Density matrices over normalized Fourier features.
//!
//! With unit feature vectors `φ̄`, the matrix `ρ = (1/N) Σ φ̄ᵢφ̄ᵢᵀ` turns the
//! kernel density estimate into a quadratic form,
//! `f̂(x) = φ̄(x)ᵀρφ̄(x) / M_γ`. Storing `ρ ≈ VᵀΛV` with `r` rows in `V` makes
//! a query cost `O(rD)` and lets `V` and `Λ` be trained by maximum likelihood.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::optim::{Optimizer, StageConfig};
use crate::rng::seeded;
use crate::{Error, Result};

/// Lower bound applied to the quadratic form before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

const UNIT_TOL: f64 = 1e-6;

/// Dense `D × D` density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FullDensityMatrix {
    rho: Array2<f64>,
}

impl FullDensityMatrix {
    pub fn rho(&self) -> &Array2<f64> {
        &self.rho
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.rho.diag().sum()
    }

    /// All eigenvalues, descending.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let (vals, _) = sorted_eigen(&self.rho)?;
        Ok(vals)
    }
}

fn check_unit_rows(features: &Array2<f64>) -> Result<()> {
    for (i, row) in features.outer_iter().enumerate() {
        let n = row.dot(&row).sqrt();
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::invalid(format!("feature vector {i} has norm {n}, expected 1")));
        }
    }
    Ok(())
}

/// `ρ = (1/N) Σ φ̄ᵢφ̄ᵢᵀ` over unit-norm rows.
pub fn build_rho(features: &Array2<f64>) -> Result<FullDensityMatrix> {
    if features.nrows() == 0 {
        return Err(Error::invalid("density matrix needs at least one feature vector"));
    }
    check_unit_rows(features)?;
    let rho = features.t().dot(features) / features.nrows() as f64;
    Ok(FullDensityMatrix { rho })
}

/// Gaussian kernel normalizer `M_γ = (π/γ)^{m/2}`, kept in log form because it
/// overflows quickly in the latent dimensions used in practice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub gamma: f64,
    pub log_norm: f64,
}

impl Normalization {
    pub fn gaussian(gamma: f64, m: usize) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
        }
        Ok(Self {
            gamma,
            log_norm: 0.5 * m as f64 * (PI / gamma).ln(),
        })
    }

    /// `M = 1`: densities are raw quadratic forms.
    pub fn unit(gamma: f64) -> Self {
        Self { gamma, log_norm: 0.0 }
    }

    pub fn m_gamma(&self) -> f64 {
        self.log_norm.exp()
    }
}

/// Low-rank factorization `ρ ≈ VᵀΛV`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityModel {
    eigvecs: Array2<f64>,
    eigenvalues: Array1<f64>,
    norm: Normalization,
}

fn to_nalgebra(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Symmetric eigendecomposition with eigenvalues sorted descending and
/// eigenvectors returned as rows.
fn sorted_eigen(a: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = a.nrows();
    let eig = SymmetricEigen::try_new(to_nalgebra(a), 1e-14, 10_000)
        .ok_or_else(|| Error::Eigen(format!("no convergence on a {n}x{n} matrix")))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = Array2::from_shape_fn((n, n), |(k, c)| eig.eigenvectors[(c, order[k])]);
    Ok((vals, vecs))
}

/// Top-`r` eigenpairs of `ρ`. Eigenvalues are returned as computed (clamped at
/// zero), so `VᵀΛV` is the best rank-`r` approximation of `ρ`.
pub fn eig_factorize(rho: &FullDensityMatrix, r: usize, norm: Normalization) -> Result<DensityModel> {
    let d = rho.dim();
    if r == 0 || r > d {
        return Err(Error::invalid(format!("rank must lie in 1..={d}, got {r}")));
    }
    let (vals, vecs) = sorted_eigen(&rho.rho)?;
    Ok(DensityModel {
        eigvecs: vecs.slice(ndarray::s![..r, ..]).to_owned(),
        eigenvalues: Array1::from_iter(vals.into_iter().take(r).map(|v| v.max(0.0))),
        norm,
    })
}

/// Build the density matrix of `features` and factorize it at rank
/// `min(r, N, D)`, then rescale `Λ` to sum to one.
///
/// When `N < D` the decomposition goes through the `N × N` Gram matrix
/// `ΦΦᵀ/N`, which shares its nonzero spectrum with `ρ`; eigenvectors are
/// recovered as `v = Φᵀu / √(Nμ)`.
pub fn factorize_features(features: &Array2<f64>, r: usize, norm: Normalization) -> Result<DensityModel> {
    let (n, d) = features.dim();
    if n == 0 || r == 0 {
        return Err(Error::invalid("factorization needs features and a positive rank"));
    }
    check_unit_rows(features)?;
    let mut model = if n < d {
        let gram = features.dot(&features.t()) / n as f64;
        let (vals, vecs) = sorted_eigen(&gram)?;
        let top = vals[0].max(0.0);
        let keep = vals
            .iter()
            .take(r.min(n))
            .take_while(|&&v| v > top * 1e-12)
            .count()
            .max(1);
        let mut eigvecs = Array2::zeros((keep, d));
        for k in 0..keep {
            let v = features.t().dot(&vecs.row(k)) / (n as f64 * vals[k]).sqrt();
            eigvecs.row_mut(k).assign(&v);
        }
        DensityModel {
            eigvecs,
            eigenvalues: Array1::from_iter(vals.into_iter().take(keep)),
            norm,
        }
    } else {
        eig_factorize(&build_rho(features)?, r.min(d), norm)?
    };
    let total = model.eigenvalues.sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("density matrix has no positive eigenvalue".into()));
    }
    model.eigenvalues /= total;
    Ok(model)
}

impl DensityModel {
    pub fn new(eigvecs: Array2<f64>, eigenvalues: Array1<f64>, norm: Normalization) -> Result<Self> {
        Error::check_dim(eigvecs.nrows(), eigenvalues.len())?;
        if eigenvalues.iter().any(|&l| !(l >= 0.0)) {
            return Err(Error::invalid("eigenvalues must be nonnegative"));
        }
        Ok(Self {
            eigvecs,
            eigenvalues,
            norm,
        })
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn dim(&self) -> usize {
        self.eigvecs.ncols()
    }

    pub fn eigvecs(&self) -> &Array2<f64> {
        &self.eigvecs
    }

    pub fn eigenvalues(&self) -> &Array1<f64> {
        &self.eigenvalues
    }

    pub fn normalization(&self) -> Normalization {
        self.norm
    }

    pub fn with_normalization(mut self, norm: Normalization) -> Self {
        self.norm = norm;
        self
    }

    /// `VᵀΛV`.
    pub fn reconstruct(&self) -> Array2<f64> {
        let scaled = &self.eigvecs * &self.eigenvalues.view().insert_axis(Axis(1));
        self.eigvecs.t().dot(&scaled)
    }

    /// `Σₖ Λₖ (vₖ·φ)²`, the density before dividing by `M_γ`.
    pub fn quadratic(&self, phi: ArrayView1<'_, f64>) -> Result<f64> {
        Error::check_dim(self.dim(), phi.len())?;
        let proj = self.eigvecs.dot(&phi);
        Ok(proj.iter().zip(self.eigenvalues.iter()).map(|(p, l)| l * p * p).sum())
    }

    /// Quadratic forms of every row of `phis`.
    pub fn quadratic_batch(&self, phis: &Array2<f64>) -> Result<Array1<f64>> {
        Error::check_dim(self.dim(), phis.ncols())?;
        let proj = phis.dot(&self.eigvecs.t());
        Ok(proj.mapv(|p| p * p).dot(&self.eigenvalues))
    }

    /// `√Λ`, the training-time parameterization of the eigenvalues.
    pub fn amplitudes(&self) -> Array1<f64> {
        self.eigenvalues.mapv(f64::sqrt)
    }

    /// Set `Λ = a² / Σa²`.
    pub fn set_amplitudes(&mut self, a: ArrayView1<'_, f64>) -> Result<()> {
        Error::check_dim(self.rank(), a.len())?;
        let s: f64 = a.dot(&a);
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Numerical(format!("amplitude norm {s} cannot be renormalized")));
        }
        self.eigenvalues = a.mapv(|v| v * v / s);
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.eigvecs.len() + self.rank()
    }

    /// `V` row-major, then the amplitudes `√Λ`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.eigvecs.iter().copied().chain(self.amplitudes()).collect()
    }

    /// Inverse of [`DensityModel::to_flat`]; the amplitudes are renormalized.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        Error::check_dim(self.num_params(), flat.len())?;
        let nv = self.eigvecs.len();
        for (v, x) in self.eigvecs.iter_mut().zip(&flat[..nv]) {
            *v = *x;
        }
        self.set_amplitudes(ArrayView1::from(&flat[nv..]))
    }

    /// Gradient of `ln max(q, floor)` with respect to the unit feature vector.
    /// Zero when the floor is active.
    pub(crate) fn log_quadratic_grad_phi(&self, phi: ArrayView1<'_, f64>) -> Array1<f64> {
        let proj = self.eigvecs.dot(&phi);
        let q: f64 = proj.iter().zip(self.eigenvalues.iter()).map(|(p, l)| l * p * p).sum();
        if q <= LOG_FLOOR {
            return Array1::zeros(phi.len());
        }
        let coef = Array1::from_shape_fn(self.rank(), |k| 2.0 * self.eigenvalues[k] * proj[k] / q);
        self.eigvecs.t().dot(&coef)
    }

    /// Accumulate `∂ ln max(q, floor)/∂(V, a)` (flat layout) scaled by `weight`.
    /// With `pₖ = (vₖ·φ)²` and `S = Σa²`:
    /// `∂/∂vₖ = 2Λₖ(vₖ·φ)/q · φ` and `∂/∂aₖ = (2aₖ/S)(pₖ/q − 1)`.
    pub(crate) fn accumulate_log_grad(&self, phi: ArrayView1<'_, f64>, weight: f64, out: &mut [f64]) {
        let proj = self.eigvecs.dot(&phi);
        let q: f64 = proj.iter().zip(self.eigenvalues.iter()).map(|(p, l)| l * p * p).sum();
        if q <= LOG_FLOOR {
            return;
        }
        let d = self.dim();
        let amps = self.amplitudes();
        let s: f64 = amps.dot(&amps);
        for k in 0..self.rank() {
            let c = weight * 2.0 * self.eigenvalues[k] * proj[k] / q;
            let row = &mut out[k * d..(k + 1) * d];
            for (o, p) in row.iter_mut().zip(phi.iter()) {
                *o += c * p;
            }
            out[self.rank() * d + k] += weight * (2.0 * amps[k] / s) * (proj[k] * proj[k] / q - 1.0);
        }
    }
}

/// `φ̄ᵀρφ̄ / M_γ`.
pub fn density_full(rho: &FullDensityMatrix, phi: ArrayView1<'_, f64>, norm: Normalization) -> Result<f64> {
    Error::check_dim(rho.dim(), phi.len())?;
    let q = phi.dot(&rho.rho.dot(&phi));
    Ok(q.max(0.0) * (-norm.log_norm).exp())
}

/// `‖Λ^{1/2}Vφ̄‖² / M_γ`.
pub fn density_lowrank(model: &DensityModel, phi: ArrayView1<'_, f64>) -> Result<f64> {
    Ok(model.quadratic(phi)? * (-model.norm.log_norm).exp())
}

/// `ln max(q, 10⁻¹²) − ln M_γ`. The floor acts on the quadratic form so that
/// it keeps its meaning whatever the size of the normalizer.
pub fn log_density(model: &DensityModel, phi: ArrayView1<'_, f64>) -> Result<f64> {
    Ok(model.quadratic(phi)?.max(LOG_FLOOR).ln() - model.norm.log_norm)
}

/// `−Σᵢ ln f̂(xᵢ)` over the rows of `phis`.
pub fn nll(model: &DensityModel, phis: &Array2<f64>) -> Result<f64> {
    let q = model.quadratic_batch(phis)?;
    Ok(q.iter().map(|v| model.norm.log_norm - v.max(LOG_FLOOR).ln()).sum())
}

/// [`nll`] and its gradient in the flat `(V, a)` layout.
pub fn nll_grad(model: &DensityModel, phis: &Array2<f64>) -> Result<(f64, Vec<f64>)> {
    let value = nll(model, phis)?;
    let mut grad = vec![0.0; model.num_params()];
    for row in phis.outer_iter() {
        model.accumulate_log_grad(row, -1.0, &mut grad);
    }
    Ok((value, grad))
}

#[derive(Debug, Clone)]
pub struct DensityTrainOutcome {
    pub model: DensityModel,
    /// Mean nll over the training rows: entry 0 before training, then per epoch.
    pub losses: Vec<f64>,
}

/// Minimize the mean nll of `phis` over `(V, a)` by mini-batch descent,
/// renormalizing `Λ` to a probability vector after every step.
pub fn train_density(model: &DensityModel, phis: &Array2<f64>, cfg: &StageConfig, seed: u64) -> Result<DensityTrainOutcome> {
    let n = phis.nrows();
    if n == 0 {
        return Err(Error::invalid("density training needs at least one row"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    let mut model = model.clone();
    let amps = model.amplitudes();
    model.set_amplitudes(amps.view())?;
    let mut flat = model.to_flat();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, flat.len());
    let mut rng = seeded(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = vec![nll(&model, phis)? / n as f64];
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut g = vec![0.0; flat.len()];
            let w = -1.0 / batch.len() as f64;
            for &i in batch {
                model.accumulate_log_grad(phis.row(i), w, &mut g);
            }
            opt.step(&mut flat, &g);
            model.set_flat(&flat)?;
            flat = model.to_flat();
        }
        let loss = nll(&model, phis)? / n as f64;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("density training diverged at epoch {}", epoch + 1)));
        }
        losses.push(loss);
        if cfg.converged(&losses) {
            break;
        }
    }
    Ok(DensityTrainOutcome { model, losses })
}

/// `(1/(N·M_γ)) Σᵢ exp(−γ‖xᵢ − x‖²)` with `M_γ = (π/γ)^{m/2}`.
pub fn exact_kde(train: &Array2<f64>, query: ArrayView1<'_, f64>, gamma: f64) -> Result<f64> {
    let norm = Normalization::gaussian(gamma, train.ncols())?;
    let mean = kernel_density(train, query, KernelFamily::Gaussian, gamma)?;
    Ok(mean * (-norm.log_norm).exp())
}

/// Kernel shapes for classic KDE scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    #[default]
    Gaussian,
    Tophat,
    Exponential,
}

impl std::str::FromStr for KernelFamily {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(KernelFamily::Gaussian),
            "tophat" => Ok(KernelFamily::Tophat),
            "exponential" => Ok(KernelFamily::Exponential),
            other => Err(format!("unknown kernel '{other}'")),
        }
    }
}

/// Unnormalized kernel average `(1/N) Σᵢ k(xᵢ, x)`. With `h = 1/√(2γ)`:
/// gaussian `exp(−γd²)`, tophat `1[d < h]`, exponential `exp(−d/h)`.
pub fn kernel_density(train: &Array2<f64>, query: ArrayView1<'_, f64>, family: KernelFamily, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    if train.nrows() == 0 {
        return Err(Error::invalid("kernel density needs at least one training point"));
    }
    Error::check_dim(train.ncols(), query.len())?;
    let h = 1.0 / (2.0 * gamma).sqrt();
    let total: f64 = train
        .outer_iter()
        .map(|row| {
            let d2: f64 = row.iter().zip(query.iter()).map(|(a, b)| (a - b).powi(2)).sum();
            match family {
                KernelFamily::Gaussian => (-gamma * d2).exp(),
                KernelFamily::Tophat => f64::from(d2.sqrt() < h),
                KernelFamily::Exponential => (-d2.sqrt() / h).exp(),
            }
        })
        .sum();
    Ok(total / train.nrows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::sample_rff;
    use crate::gradcheck;
    use ndarray::array;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn unit_rows(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = seeded(seed);
        let mut a: Array2<f64> = Array2::from_shape_fn((n, d), |_| StandardNormal.sample(&mut rng));
        for mut row in a.outer_iter_mut() {
            let nr = row.dot(&row).sqrt();
            row /= nr;
        }
        a
    }

    fn frob(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        (a - b).mapv(|v| v * v).sum().sqrt()
    }

    /// Largest eigenpairs by power iteration with deflation.
    fn power_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
        let n = a.nrows();
        let mut m = a.clone();
        let mut out = Vec::new();
        for k in 0..n {
            let mut v = Array1::from_shape_fn(n, |i| 1.0 + (i + k) as f64 * 0.37);
            let mut lambda = 0.0;
            for _ in 0..5000 {
                let w = m.dot(&v);
                let nw = w.dot(&w).sqrt();
                if nw == 0.0 {
                    break;
                }
                lambda = v.dot(&w) / v.dot(&v);
                v = w / nw;
            }
            out.push(lambda);
            let vv = v.view().insert_axis(Axis(1));
            m = &m - &(vv.dot(&vv.t()) * lambda);
        }
        out
    }

    #[test]
    fn rank_one_and_orthogonal_pairs() {
        let e1 = array![[1.0, 0.0, 0.0]];
        let r = build_rho(&e1).unwrap();
        assert_eq!(r.rho(), &array![[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        assert_eq!(r.trace(), 1.0);
        let two = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert_eq!(build_rho(&two).unwrap().rho(), &Array2::from_diag(&array![0.5, 0.5, 0.0]));
        assert!(build_rho(&array![[2.0, 0.0]]).is_err());
    }

    #[test]
    fn rho_trace_and_psd() {
        let f = unit_rows(40, 12, 1);
        let r = build_rho(&f).unwrap();
        assert!((r.trace() - 1.0).abs() < 1e-10);
        let rho = r.rho();
        assert!(frob(rho, &rho.t().to_owned()) < 1e-12);
        assert!(*r.eigenvalues().unwrap().last().unwrap() >= -1e-8);
    }

    #[test]
    fn full_rank_factorization_is_exact() {
        let r = build_rho(&unit_rows(30, 8, 2)).unwrap();
        let m = eig_factorize(&r, 8, Normalization::unit(1.0)).unwrap();
        assert!(frob(&m.reconstruct(), r.rho()) < 1e-8);
        let vvt = m.eigvecs().dot(&m.eigvecs().t());
        assert!(frob(&vvt, &Array2::eye(8)) < 1e-8);
        assert!(m.eigenvalues().windows(2).into_iter().all(|w| w[0] >= w[1]));
        assert!(eig_factorize(&r, 9, Normalization::unit(1.0)).is_err());
    }

    #[test]
    fn rank_one_recovers_the_vector() {
        let v = array![0.6, 0.0, 0.8];
        let r = build_rho(&v.clone().insert_axis(Axis(0))).unwrap();
        let m = eig_factorize(&r, 1, Normalization::unit(1.0)).unwrap();
        assert!((m.eigenvalues()[0] - 1.0).abs() < 1e-12);
        let dot = m.eigvecs().row(0).dot(&v);
        assert!((dot.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigenvalues_match_power_iteration() {
        let a = array![
            [4.0, 1.0, 0.5, 0.0],
            [1.0, 3.0, 0.2, 0.1],
            [0.5, 0.2, 2.0, 0.3],
            [0.0, 0.1, 0.3, 1.0]
        ];
        let oracle = power_eigenvalues(&a);
        let got = FullDensityMatrix { rho: a }.eigenvalues().unwrap();
        for (g, o) in got.iter().zip(&oracle) {
            assert!((g - o).abs() < 1e-8, "{got:?} vs {oracle:?}");
        }
    }

    #[test]
    fn reconstruction_error_shrinks_with_rank() {
        let r = build_rho(&unit_rows(20, 10, 3)).unwrap();
        let mut prev = f64::INFINITY;
        for k in 1..=10 {
            let e = frob(&eig_factorize(&r, k, Normalization::unit(1.0)).unwrap().reconstruct(), r.rho());
            assert!(e <= prev + 1e-12);
            prev = e;
        }
        assert!(prev < 1e-8);
    }

    #[test]
    fn gram_route_matches_direct_route() {
        let f = unit_rows(6, 15, 4);
        let norm = Normalization::unit(1.0);
        let gram = factorize_features(&f, 50, norm).unwrap();
        assert_eq!(gram.rank(), 6);
        let direct = eig_factorize(&build_rho(&f).unwrap(), 6, norm).unwrap();
        assert!(frob(&gram.reconstruct(), &direct.reconstruct()) < 1e-8);
        let vvt = gram.eigvecs().dot(&gram.eigvecs().t());
        assert!(frob(&vvt, &Array2::eye(6)) < 1e-8);
        assert!((gram.eigenvalues().sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_and_lowrank_densities_agree() {
        let f = unit_rows(25, 8, 5);
        let r = build_rho(&f).unwrap();
        let norm = Normalization::gaussian(0.5, 3).unwrap();
        let m = eig_factorize(&r, 8, norm).unwrap();
        for q in unit_rows(10, 8, 6).outer_iter() {
            let a = density_full(&r, q, norm).unwrap();
            let b = density_lowrank(&m, q).unwrap();
            assert!((a - b).abs() < 1e-8 * norm.m_gamma().recip().max(1.0));
        }
    }

    #[test]
    fn self_projection_and_orthogonal_query() {
        let v = array![[0.0, 1.0, 0.0]];
        let r = build_rho(&v).unwrap();
        assert!((density_full(&r, v.row(0), Normalization::unit(1.0)).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(density_full(&r, array![1.0, 0.0, 0.0].view(), Normalization::unit(1.0)).unwrap(), 0.0);
    }

    #[test]
    fn zero_eigenvalues_give_zero_density() {
        let m = DensityModel::new(Array2::eye(3), Array1::zeros(3), Normalization::unit(1.0)).unwrap();
        assert_eq!(density_lowrank(&m, array![0.6, 0.8, 0.0].view()).unwrap(), 0.0);
        assert!(DensityModel::new(Array2::eye(2), array![0.5, -0.1], Normalization::unit(1.0)).is_err());
    }

    #[test]
    fn exact_kde_closed_forms() {
        let one = array![[0.0]];
        let v = exact_kde(&one, array![0.0].view(), 1.0).unwrap();
        assert!((v - (1.0 / PI).sqrt()).abs() < 1e-12);
        assert!((v - 0.5642).abs() < 1e-4);
        assert!(exact_kde(&one, array![40.0].view(), 1.0).unwrap() < 1e-300);
        assert!(exact_kde(&one, array![0.0].view(), 0.0).is_err());
    }

    #[test]
    fn exact_kde_integrates_to_one() {
        let pts = array![[-1.0], [0.3], [2.5]];
        let (lo, hi, n) = (-15.0, 15.0, 30_001);
        let h = (hi - lo) / (n - 1) as f64;
        let ys: Vec<f64> = (0..n)
            .map(|i| exact_kde(&pts, array![lo + i as f64 * h].view(), 0.7).unwrap())
            .collect();
        let integral = h * (ys.iter().sum::<f64>() - 0.5 * (ys[0] + ys[n - 1]));
        assert!((integral - 1.0).abs() < 0.01, "{integral}");
    }

    #[test]
    fn dmkde_matches_kde_on_two_points() {
        let gamma = 1.0;
        let pts = array![[0.0], [1.5]];
        let map = sample_rff(1, 2000, gamma / 2.0, 7).unwrap();
        let f = map.normalized_matrix(&pts).unwrap();
        let r = build_rho(&f).unwrap();
        let norm = Normalization::gaussian(gamma, 1).unwrap();
        let q = f.row(0);
        let approx = density_full(&r, q, norm).unwrap();
        let exact = exact_kde(&pts, pts.row(0), gamma).unwrap();
        assert!(((approx - exact) / exact).abs() < 0.1, "{approx} vs {exact}");
    }

    #[test]
    fn nll_values_and_floor() {
        let m = DensityModel::new(array![[1.0, 0.0], [0.0, 1.0]], array![1.0, 0.0], Normalization::unit(1.0)).unwrap();
        assert_eq!(nll(&m, &array![[1.0, 0.0], [1.0, 0.0]]).unwrap(), 0.0);
        let v = nll(&m, &array![[0.0, 1.0]]).unwrap();
        assert!((v + LOG_FLOOR.ln()).abs() < 1e-12);
        assert!((log_density(&m, array![0.0, 1.0].view()).unwrap() - LOG_FLOOR.ln()).abs() < 1e-12);
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let f = unit_rows(20, 6, 8);
        let model = factorize_features(&f, 3, Normalization::gaussian(0.5, 2).unwrap()).unwrap();
        // move V off the eigenbasis so no gradient is trivially zero
        let mut model = model;
        let mut flat = model.to_flat();
        let mut rng = seeded(9);
        for v in flat.iter_mut().take(18) {
            let g: f64 = StandardNormal.sample(&mut rng);
            *v += 0.1 * g;
        }
        model.set_flat(&flat).unwrap();
        let batch = unit_rows(7, 6, 10);
        let (_, g) = nll_grad(&model, &batch).unwrap();
        let theta = model.to_flat();
        let fun = |t: &[f64]| {
            let mut m = model.clone();
            m.set_flat(t).unwrap();
            nll(&m, &batch).unwrap()
        };
        let r = gradcheck::check(fun, &theta, &g, 1e-5, 1e-4);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn phi_gradient_matches_finite_differences() {
        let model = factorize_features(&unit_rows(10, 5, 1), 3, Normalization::unit(1.0)).unwrap();
        let phi = unit_rows(1, 5, 2).row(0).to_owned();
        let g = model.log_quadratic_grad_phi(phi.view());
        let fun = |v: &[f64]| model.quadratic(ArrayView1::from(v)).unwrap().ln();
        let r = gradcheck::check(fun, &phi.to_vec(), &g.to_vec(), 1e-6, 1e-5);
        assert!(r.passed(), "{r:?}");
    }

    fn bimodal(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = seeded(seed);
        Array2::from_shape_fn((n, 1), |(i, _)| {
            let g: f64 = StandardNormal.sample(&mut rng);
            0.4 * g + if i % 2 == 0 { -2.0 } else { 2.0 }
        })
    }

    #[test]
    fn training_keeps_lambda_a_probability_vector() {
        let x = bimodal(80, 1);
        let map = sample_rff(1, 64, 0.5, 2).unwrap();
        let f = map.normalized_matrix(&x).unwrap();
        let model = factorize_features(&f, 8, Normalization::gaussian(1.0, 1).unwrap()).unwrap();
        let cfg = StageConfig {
            epochs: 200,
            lr: 1e-2,
            batch_size: 80,
            patience: 0,
            ..StageConfig::default()
        };
        let out = train_density(&model, &f, &cfg, 3).unwrap();
        assert_eq!(out.losses.len(), 201);
        let l = out.model.eigenvalues();
        assert!(l.iter().all(|&v| v >= 0.0));
        assert!((l.sum() - 1.0).abs() < 1e-6);
        assert!(out.losses.last().unwrap() <= &out.losses[0]);
    }

    #[test]
    fn trained_density_prefers_modes_over_valley() {
        let x = bimodal(200, 4);
        let map = sample_rff(1, 200, 0.5, 5).unwrap();
        let f = map.normalized_matrix(&x).unwrap();
        let model = factorize_features(&f, 20, Normalization::gaussian(1.0, 1).unwrap()).unwrap();
        let cfg = StageConfig {
            epochs: 30,
            lr: 1e-3,
            ..StageConfig::default()
        };
        let heldout = map.normalized_matrix(&bimodal(100, 6)).unwrap();
        let before = nll(&model, &heldout).unwrap();
        let out = train_density(&model, &f, &cfg, 7).unwrap();
        assert!(nll(&out.model, &heldout).unwrap() <= before);
        let probe = map.normalized_matrix(&array![[-2.0], [0.0], [2.0]]).unwrap();
        let d: Vec<f64> = probe.outer_iter().map(|p| density_lowrank(&out.model, p).unwrap()).collect();
        assert!(d[0] > d[1] && d[2] > d[1], "{d:?}");
        let exact: Vec<f64> = [-2.0, 0.0, 2.0]
            .iter()
            .map(|&q| exact_kde(&x, array![q].view(), 1.0).unwrap())
            .collect();
        assert!(exact[0] > exact[1] && exact[2] > exact[1]);
    }

    #[test]
    fn zero_lr_keeps_model() {
        let f = unit_rows(10, 6, 1);
        let model = factorize_features(&f, 3, Normalization::unit(1.0)).unwrap();
        let cfg = StageConfig {
            epochs: 3,
            lr: 0.0,
            ..StageConfig::default()
        };
        let out = train_density(&model, &f, &cfg, 1).unwrap();
        for (a, b) in out.model.to_flat().iter().zip(model.to_flat()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_families() {
        let t = array![[0.0], [3.0]];
        let g = 0.5; // h = 1
        assert_eq!(kernel_density(&t, array![0.5].view(), KernelFamily::Tophat, g).unwrap(), 0.5);
        let e = kernel_density(&t, array![0.0].view(), KernelFamily::Exponential, g).unwrap();
        assert!((e - 0.5 * (1.0 + (-3.0f64).exp())).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn lowrank_density_is_nonnegative(seed in 0u64..500, r in 1usize..6) {
            let f = unit_rows(8, 6, seed);
            let m = factorize_features(&f, r, Normalization::unit(1.0)).unwrap();
            for q in unit_rows(4, 6, seed + 1).outer_iter() {
                prop_assert!(density_lowrank(&m, q).unwrap() >= 0.0);
            }
        }
    }
}
