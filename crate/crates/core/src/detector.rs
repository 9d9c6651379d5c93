//! End-to-end detector: autoencoder pretraining, kernel matching, joint
//! likelihood training and threshold calibration.

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{self, measure_gradients, Activation, Architecture, AutoencoderParams};
use crate::dataset::{outlier_rate, DataTable, Label, Scaler, Scaling};
use crate::density::{factorize_features, DensityModel, Normalization, LOG_FLOOR};
use crate::fourier::{sample_rff, train_aff, AffConfig, FeatureMap};
use crate::optim::{Optimizer, OptimizerKind, StageConfig};
use crate::rng::{derive_seed, seeded};
use crate::{Error, Result};

/// Everything needed to fit a [`LeandModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeandConfig {
    pub seed: u64,
    pub scaling: Scaling,
    /// Encoder widths ending at the latent size.
    pub architecture: Vec<usize>,
    pub activation: Activation,
    /// Accept a latent at least as wide as the input.
    pub allow_overcomplete: bool,
    /// Kernel width; the bandwidth is `γ = 1/(2σ²)` unless `gamma` is set.
    pub sigma: f64,
    pub gamma: Option<f64>,
    /// Number of Fourier features `D`.
    pub rff_dim: usize,
    /// Requested rank `r` of the density factorization.
    pub rank: usize,
    /// Weight of the log-likelihood term in the joint loss.
    pub alpha: f64,
    /// Weight of the reconstruction term in the joint loss.
    pub recon_weight: f64,
    /// Expected anomaly share; `None` uses the labelled rate of the training rows.
    pub anomaly_rate: Option<f64>,
    /// Fit on the normal training rows only.
    pub normal_only: bool,
    /// Let the joint stage update the Fourier map as well.
    pub train_map_jointly: bool,
    pub pretrain: StageConfig,
    pub aff: AffConfig,
    pub joint: StageConfig,
}

impl Default for LeandConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            scaling: Scaling::Zscore,
            architecture: vec![32, 16, 4],
            activation: Activation::Relu,
            allow_overcomplete: false,
            sigma: 1.0,
            gamma: None,
            rff_dim: 500,
            rank: 100,
            alpha: 0.5,
            recon_weight: 1.0,
            anomaly_rate: None,
            normal_only: false,
            train_map_jointly: false,
            pretrain: StageConfig {
                epochs: 100,
                lr: 1e-3,
                batch_size: 32,
                optimizer: OptimizerKind::Adam,
                tolerance: 1e-5,
                patience: 10,
            },
            aff: AffConfig::default(),
            joint: StageConfig {
                epochs: 50,
                lr: 1e-3,
                batch_size: 32,
                optimizer: OptimizerKind::Adam,
                tolerance: 1e-5,
                patience: 10,
            },
        }
    }
}

impl LeandConfig {
    /// Kernel bandwidth of the target density estimate.
    pub fn bandwidth(&self) -> Result<f64> {
        let g = match self.gamma {
            Some(g) => g,
            None => {
                if !(self.sigma > 0.0) {
                    return Err(Error::invalid(format!("sigma must be positive, got {}", self.sigma)));
                }
                1.0 / (2.0 * self.sigma * self.sigma)
            }
        };
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::invalid(format!("gamma must be positive, got {g}")));
        }
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        self.bandwidth()?;
        if self.rff_dim == 0 || self.rank == 0 {
            return Err(Error::invalid("rff_dim and rank must be positive"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.recon_weight >= 0.0) {
            return Err(Error::invalid("recon_weight must be nonnegative"));
        }
        if let Some(r) = self.anomaly_rate {
            check_rate(r)?;
        }
        Ok(())
    }

    fn architecture_for(&self, d: usize) -> Result<Architecture> {
        let sizes = self.architecture.clone();
        if self.allow_overcomplete {
            Architecture::overcomplete(d, sizes, self.activation)
        } else {
            Architecture::new(d, sizes, self.activation)
        }
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if rate > 0.0 && rate < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("anomaly rate must lie in (0, 1), got {rate}")))
    }
}

/// Score and label of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub score: f64,
    pub label: Label,
}

/// A fitted detector.
#[derive(Debug, Clone, PartialEq)]
pub struct LeandModel {
    pub(crate) scaler: Scaler,
    pub(crate) autoencoder: AutoencoderParams,
    pub(crate) feature_map: FeatureMap,
    pub(crate) density: DensityModel,
    pub(crate) alpha: f64,
    pub(crate) anomaly_rate: f64,
    pub(crate) tau: f64,
}

/// Losses recorded while fitting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub train_rows: usize,
    pub gamma: f64,
    pub effective_rank: usize,
    pub anomaly_rate: f64,
    pub tau: f64,
    pub pretrain_losses: Vec<f64>,
    pub aff_holdout_losses: Vec<f64>,
    pub aff_best_epoch: usize,
    pub joint_losses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: LeandModel,
    pub report: FitReport,
}

/// Weights of the joint objective
/// `L = w·mean‖x − x̂‖² − α·mean ln f̂(o)` over a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointObjective {
    pub recon_weight: f64,
    pub alpha: f64,
    pub train_map: bool,
}

/// Gradient of [`JointObjective`] split by parameter group.
#[derive(Debug, Clone)]
pub struct JointGrad {
    pub autoencoder: Vec<f64>,
    pub density: Vec<f64>,
    pub map: Option<Vec<f64>>,
}

impl JointGrad {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.autoencoder.clone();
        v.extend(&self.density);
        if let Some(m) = &self.map {
            v.extend(m);
        }
        v
    }
}

impl JointObjective {
    pub fn loss(
        &self,
        ae: &AutoencoderParams,
        map: &FeatureMap,
        density: &DensityModel,
        x: &Array2<f64>,
        rows: &[usize],
    ) -> Result<f64> {
        let mut recon = 0.0;
        let mut loglik = 0.0;
        for &i in rows {
            let xi = x.row(i);
            let o = autoencoder::augmented_output(ae, xi)?;
            recon += o.euclid_err;
            let phi = crate::fourier::normalize_phi(map.phi(o.to_vec().view())?.view())?;
            loglik += density.quadratic(phi.view())?.max(LOG_FLOOR).ln() - density.normalization().log_norm;
        }
        let b = rows.len().max(1) as f64;
        Ok(self.recon_weight * recon / b - self.alpha * loglik / b)
    }

    pub fn loss_grad(
        &self,
        ae: &AutoencoderParams,
        map: &FeatureMap,
        density: &DensityModel,
        x: &Array2<f64>,
        rows: &[usize],
    ) -> Result<(f64, JointGrad)> {
        let b = rows.len().max(1) as f64;
        let p = ae.architecture().latent_dim();
        let mut ae_grads = ae.zero_grads();
        let mut d_grad = vec![0.0; density.num_params()];
        let mut m_grad = self.train_map.then(|| vec![0.0; map.num_params()]);
        let mut recon = 0.0;
        let mut loglik = 0.0;
        for &i in rows {
            let xi = x.row(i);
            let trace = ae.forward(xi)?;
            let xh = trace.output();
            let meas = autoencoder::reconstruction_measures(xi, xh.view())?;
            recon += meas.euclid_err;
            let mut o = trace.latent().to_vec();
            o.push(meas.euclid_err);
            o.push(meas.cos_sim);
            let o = Array1::from(o);
            let phi = map.phi(o.view())?;
            let norm = phi.dot(&phi).sqrt();
            if !(norm > 0.0) {
                return Err(Error::Numerical("zero feature vector in joint loss".into()));
            }
            let phib = &phi / norm;
            let q = density.quadratic(phib.view())?;
            loglik += q.max(LOG_FLOOR).ln() - density.normalization().log_norm;

            let (d_euclid, d_cos) = measure_gradients(xi, xh.view());
            let mut d_out = &d_euclid * (self.recon_weight / b);
            let mut d_latent = None;
            if self.alpha != 0.0 && q > LOG_FLOOR {
                density.accumulate_log_grad(phib.view(), -self.alpha / b, &mut d_grad);
                // through the normalization φ̄ = φ/‖φ‖
                let g = density.log_quadratic_grad_phi(phib.view());
                let d_phi = (&g - &(&phib * g.dot(&phib))) / norm * (-self.alpha / b);
                if let Some(mg) = m_grad.as_mut() {
                    map.param_gradient(o.view(), d_phi.view(), mg);
                }
                let d_o = map.input_gradient(o.view(), d_phi.view());
                d_out = d_out + &d_euclid * d_o[p] + &d_cos * d_o[p + 1];
                d_latent = Some(d_o.slice(ndarray::s![..p]).to_owned());
            }
            ae.backward(&trace, d_out.view(), d_latent.as_ref().map(|v| v.view()), &mut ae_grads);
        }
        let loss = self.recon_weight * recon / b - self.alpha * loglik / b;
        Ok((
            loss,
            JointGrad {
                autoencoder: ae_grads.to_flat(),
                density: d_grad,
                map: m_grad,
            },
        ))
    }
}

/// Lower-tail quantile of `scores` at `rate`, interpolating linearly between
/// order statistics.
pub fn calibrate_threshold(scores: &[f64], rate: f64) -> Result<f64> {
    check_rate(rate)?;
    if scores.is_empty() {
        return Err(Error::invalid("threshold calibration needs at least one score"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numerical("NaN score during calibration".into()));
    }
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = rate * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    Ok(match s.get(lo + 1) {
        Some(&hi) if frac > 0.0 => s[lo] + frac * (hi - s[lo]),
        _ => s[lo],
    })
}

/// Fit the full pipeline on `train`. Labels are used only to derive the
/// default anomaly rate and for the optional normal-only filter.
pub fn fit(train: &DataTable, cfg: &LeandConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    let anomaly_rate = match cfg.anomaly_rate {
        Some(r) => r,
        None => {
            let r = outlier_rate(train);
            check_rate(r).map_err(|_| {
                Error::invalid("training rows carry no usable anomaly rate; set anomaly_rate explicitly")
            })?;
            r
        }
    };
    let rows = if cfg.normal_only { train.normal_rows() } else { train.clone() };
    if rows.count() < 2 {
        return Err(Error::invalid("fitting needs at least two training rows"));
    }
    let gamma = cfg.bandwidth()?;
    let scaler = Scaler::fit_with(rows.features(), cfg.scaling)?;
    let x = scaler.transform(rows.features())?;
    let arch = cfg.architecture_for(x.ncols())?;
    let p = arch.latent_dim();

    let ae0 = autoencoder::init(&arch, derive_seed(cfg.seed, 1));
    let pre = autoencoder::pretrain(&ae0, &x, &cfg.pretrain, derive_seed(cfg.seed, 2))?;
    let mut ae = pre.params;

    let latents = autoencoder::augmented_matrix(&ae, &x)?;
    // squared normalized features pick up twice the map's bandwidth
    let map0 = sample_rff(p + 2, cfg.rff_dim, gamma / 2.0, derive_seed(cfg.seed, 3))?;
    let (mut map, aff_losses, aff_best) = if cfg.aff.epochs > 0 {
        let out = train_aff(&map0, &latents, &cfg.aff, derive_seed(cfg.seed, 4))?;
        let best = out.best_epoch;
        (out.map, out.holdout_losses, best)
    } else {
        (map0, Vec::new(), 0)
    };

    let norm = Normalization::gaussian(gamma, p + 2)?;
    let phis = map.normalized_matrix(&latents)?;
    let mut density = factorize_features(&phis, cfg.rank, norm)?;

    let objective = JointObjective {
        recon_weight: cfg.recon_weight,
        alpha: cfg.alpha,
        train_map: cfg.train_map_jointly,
    };
    let joint_losses = joint_train(&objective, &mut ae, &mut map, &mut density, &x, &cfg.joint, derive_seed(cfg.seed, 5))?;

    let mut model = LeandModel {
        scaler,
        autoencoder: ae,
        feature_map: map,
        density,
        alpha: cfg.alpha,
        anomaly_rate,
        tau: 0.0,
    };
    let scores = model.score_standardized(&x)?;
    model.tau = calibrate_threshold(scores.as_slice().expect("contiguous"), anomaly_rate)?;
    if !model.tau.is_finite() {
        return Err(Error::Numerical(format!("threshold is {}", model.tau)));
    }
    let report = FitReport {
        train_rows: rows.count(),
        gamma,
        effective_rank: model.density.rank(),
        anomaly_rate,
        tau: model.tau,
        pretrain_losses: pre.losses,
        aff_holdout_losses: aff_losses,
        aff_best_epoch: aff_best,
        joint_losses,
    };
    Ok(FitOutcome { model, report })
}

fn joint_train(
    objective: &JointObjective,
    ae: &mut AutoencoderParams,
    map: &mut FeatureMap,
    density: &mut DensityModel,
    x: &Array2<f64>,
    cfg: &StageConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    let n = x.nrows();
    let all: Vec<usize> = (0..n).collect();
    let (na, nd) = (ae.num_params(), density.num_params());
    let mut flat = ae.to_flat();
    flat.extend(density.to_flat());
    if objective.train_map {
        flat.extend(map.to_flat());
    }
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, flat.len());
    let mut rng = seeded(seed);
    let mut order = all.clone();
    let mut losses = vec![objective.loss(ae, map, density, x, &all)?];
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (_, g) = objective.loss_grad(ae, map, density, x, batch)?;
            opt.step(&mut flat, &g.to_flat());
            ae.set_flat(&flat[..na]);
            density.set_flat(&flat[na..na + nd])?;
            if objective.train_map {
                map.set_flat(&flat[na + nd..]);
            }
            // keep the optimizer's copy on the renormalized amplitudes
            flat[na..na + nd].copy_from_slice(&density.to_flat());
        }
        let loss = objective.loss(ae, map, density, x, &all)?;
        if !loss.is_finite() || !ae.is_finite() {
            return Err(Error::Numerical(format!("joint training diverged at epoch {} (loss {loss})", epoch + 1)));
        }
        losses.push(loss);
        if cfg.converged(&losses) {
            break;
        }
    }
    Ok(losses)
}

impl LeandModel {
    /// Assemble a model from parts, checking that the dimensions chain.
    pub fn from_parts(
        scaler: Scaler,
        autoencoder: AutoencoderParams,
        feature_map: FeatureMap,
        density: DensityModel,
        alpha: f64,
        anomaly_rate: f64,
        tau: f64,
    ) -> Result<Self> {
        Error::check_dim(autoencoder.architecture().input_dim(), scaler.dim())?;
        Error::check_dim(autoencoder.architecture().latent_dim() + 2, feature_map.input_dim())?;
        Error::check_dim(feature_map.dim(), density.dim())?;
        Ok(Self {
            scaler,
            autoencoder,
            feature_map,
            density,
            alpha,
            anomaly_rate,
            tau,
        })
    }

    pub fn scaler(&self) -> &Scaler {
        &self.scaler
    }

    pub fn autoencoder(&self) -> &AutoencoderParams {
        &self.autoencoder
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.feature_map
    }

    pub fn density(&self) -> &DensityModel {
        &self.density
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn anomaly_rate(&self) -> f64 {
        self.anomaly_rate
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn input_dim(&self) -> usize {
        self.scaler.dim()
    }

    fn score_standardized(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        let latents = autoencoder::augmented_matrix(&self.autoencoder, x)?;
        let phis = self.feature_map.normalized_matrix(&latents)?;
        let q = self.density.quadratic_batch(&phis)?;
        let inv_m = (-self.density.normalization().log_norm).exp();
        Ok(q.mapv(|v| v.max(0.0) * inv_m))
    }

    /// Density `f̂(o)` of the augmented latent of a raw sample.
    pub fn score(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        let xs = self.scaler.transform_row(x)?;
        let m = xs.insert_axis(ndarray::Axis(0));
        Ok(self.score_standardized(&m)?[0])
    }

    /// Scores of every row of a raw feature matrix.
    pub fn score_matrix(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        self.score_standardized(&self.scaler.transform(x)?)
    }

    pub fn score_table(&self, table: &DataTable) -> Result<Array1<f64>> {
        self.score_matrix(table.features())
    }

    pub fn classify(&self, score: f64) -> Label {
        if score >= self.tau {
            Label::Normal
        } else {
            Label::Anomaly
        }
    }

    pub fn predict(&self, x: ArrayView1<'_, f64>) -> Result<Prediction> {
        let score = self.score(x)?;
        Ok(Prediction {
            score,
            label: self.classify(score),
        })
    }

    pub fn predict_table(&self, table: &DataTable) -> Result<Vec<Prediction>> {
        Ok(self
            .score_table(table)?
            .iter()
            .map(|&score| Prediction {
                score,
                label: self.classify(score),
            })
            .collect())
    }

    /// Set a new threshold, e.g. after re-calibrating on other scores.
    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }
}
