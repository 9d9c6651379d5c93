//! Metrics, grid search, the ablation harness and the Friedman statistic.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::autoencoder::{self, Architecture};
use crate::dataset::{DataTable, Label, Scaler};
use crate::density::{kernel_density, KernelFamily};
use crate::detector::{calibrate_threshold, fit, LeandConfig};
use crate::rng::{derive_seed, seeded};
use crate::optim::StageConfig;
use crate::{Error, Result};

/// 2×2 confusion counts with "anomaly" as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Confusion {
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tp: usize,
}

impl Confusion {
    pub fn from_labels(truth: &[Label], pred: &[Label]) -> Result<Self> {
        Error::check_dim(truth.len(), pred.len())?;
        if truth.is_empty() {
            return Err(Error::invalid("metrics need at least one label"));
        }
        let mut c = Confusion::default();
        for (t, p) in truth.iter().zip(pred) {
            match (t, p) {
                (Label::Normal, Label::Normal) => c.tn += 1,
                (Label::Normal, Label::Anomaly) => c.fp += 1,
                (Label::Anomaly, Label::Normal) => c.fn_ += 1,
                (Label::Anomaly, Label::Anomaly) => c.tp += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tn + self.fp + self.fn_ + self.tp
    }

    fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    }

    pub fn f1_anomaly(&self) -> f64 {
        Self::f1(self.tp, self.fp, self.fn_)
    }

    pub fn f1_normal(&self) -> f64 {
        Self::f1(self.tn, self.fn_, self.fp)
    }

    /// Support-weighted mean of the two per-class F1 scores.
    pub fn f1_weighted(&self) -> f64 {
        let n_anom = (self.tp + self.fn_) as f64;
        let n_norm = (self.tn + self.fp) as f64;
        (n_norm * self.f1_normal() + n_anom * self.f1_anomaly()) / (n_anom + n_norm)
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }
}

pub fn f1_weighted(truth: &[Label], pred: &[Label]) -> Result<f64> {
    Ok(Confusion::from_labels(truth, pred)?.f1_weighted())
}

pub fn accuracy(truth: &[Label], pred: &[Label]) -> Result<f64> {
    Ok(Confusion::from_labels(truth, pred)?.accuracy())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub f1_weighted: f64,
    pub accuracy: f64,
    pub f1_anomaly: f64,
    pub f1_normal: f64,
    pub confusion: Confusion,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auc_roc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auc_pr: Option<f64>,
}

impl MetricReport {
    pub fn from_labels(truth: &[Label], pred: &[Label]) -> Result<Self> {
        let c = Confusion::from_labels(truth, pred)?;
        Ok(Self {
            f1_weighted: c.f1_weighted(),
            accuracy: c.accuracy(),
            f1_anomaly: c.f1_anomaly(),
            f1_normal: c.f1_normal(),
            confusion: c,
            auc_roc: None,
            auc_pr: None,
        })
    }

    /// Attach ranking metrics for `scores` where lower means more anomalous.
    pub fn with_auc(mut self, truth: &[Label], scores: &[f64]) -> Result<Self> {
        self.auc_roc = Some(auc_roc(truth, scores)?);
        self.auc_pr = Some(average_precision(truth, scores)?);
        Ok(self)
    }
}

/// Area under the ROC curve with anomaly as positive and lower score as more
/// anomalous (Mann–Whitney statistic, ties counted as one half).
pub fn auc_roc(truth: &[Label], scores: &[f64]) -> Result<f64> {
    Error::check_dim(truth.len(), scores.len())?;
    let pos: Vec<f64> = truth.iter().zip(scores).filter(|(t, _)| t.is_anomaly()).map(|(_, s)| *s).collect();
    let neg: Vec<f64> = truth.iter().zip(scores).filter(|(t, _)| !t.is_anomaly()).map(|(_, s)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::invalid("AUC needs both classes"));
    }
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            wins += if p < n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(wins / (pos.len() * neg.len()) as f64)
}

/// Average precision of ranking samples from lowest to highest score.
pub fn average_precision(truth: &[Label], scores: &[f64]) -> Result<f64> {
    Error::check_dim(truth.len(), scores.len())?;
    let total_pos = truth.iter().filter(|t| t.is_anomaly()).count();
    if total_pos == 0 {
        return Err(Error::invalid("average precision needs anomalies"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut tp, mut ap) = (0usize, 0.0);
    let mut i = 0;
    while i < idx.len() {
        // consume one group of tied scores at a time
        let mut j = i;
        let mut group_pos = 0;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            group_pos += usize::from(truth[idx[j]].is_anomaly());
            j += 1;
        }
        tp += group_pos;
        ap += (group_pos as f64 / total_pos as f64) * (tp as f64 / j as f64);
        i = j;
    }
    Ok(ap)
}

/// One point of a hyperparameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub sigma: f64,
    pub architecture: Vec<usize>,
    pub rff_dim: usize,
    pub rank: usize,
    pub alpha: f64,
    pub anomaly_rate: Option<f64>,
}

impl GridPoint {
    pub fn apply(&self, base: &LeandConfig) -> LeandConfig {
        LeandConfig {
            sigma: self.sigma,
            gamma: None,
            architecture: self.architecture.clone(),
            rff_dim: self.rff_dim,
            rank: self.rank,
            alpha: self.alpha,
            anomaly_rate: self.anomaly_rate.or(base.anomaly_rate),
            ..base.clone()
        }
    }
}

impl fmt::Display for GridPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let arch: Vec<String> = self.architecture.iter().map(ToString::to_string).collect();
        write!(
            f,
            "sigma={} arch=({}) D={} r={} alpha={}",
            self.sigma,
            arch.join(","),
            self.rff_dim,
            self.rank,
            self.alpha
        )?;
        if let Some(r) = self.anomaly_rate {
            write!(f, " rate={r}")?;
        }
        Ok(())
    }
}

/// Parameter lists whose Cartesian product is searched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub sigma: Vec<f64>,
    pub architecture: Vec<Vec<usize>>,
    pub rff_dim: Vec<usize>,
    pub rank: Vec<usize>,
    pub alpha: Vec<f64>,
    /// Empty means "use the base configuration's rate".
    pub anomaly_rate: Vec<f64>,
    /// Maximum number of runs; larger grids are shuffled and truncated.
    pub cap: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            sigma: vec![1.0],
            architecture: vec![vec![64, 32, 16]],
            rff_dim: vec![500],
            rank: vec![100],
            alpha: vec![0.5],
            anomaly_rate: Vec::new(),
            cap: 100,
        }
    }
}

impl GridSpec {
    /// The full published search ranges. `true_rate` seeds the anomaly-rate
    /// axis with the true value and five neighbours on each side in steps
    /// of 0.01.
    pub fn published(true_rate: f64) -> Self {
        let mut rates = vec![true_rate];
        for k in 1..=5 {
            for r in [true_rate - 0.01 * k as f64, true_rate + 0.01 * k as f64] {
                if r > 0.0 && r < 1.0 {
                    rates.push((r * 1e6).round() / 1e6);
                }
            }
        }
        Self {
            sigma: (-5..=9).map(|e| 2f64.powi(e)).collect(),
            architecture: vec![vec![64, 32, 16], vec![128, 64, 32, 8], vec![128, 32, 2], vec![64, 20, 10, 4]],
            rff_dim: vec![250, 500, 1000, 2000],
            rank: vec![12, 25, 50, 100, 125, 200, 250, 400, 500, 1000, 2000],
            alpha: vec![0.0, 0.01, 0.1, 0.5, 0.9, 0.99, 1.0],
            anomaly_rate: rates,
            cap: 100,
        }
    }

    pub fn size(&self) -> usize {
        self.sigma.len()
            * self.architecture.len()
            * self.rff_dim.len()
            * self.rank.len()
            * self.alpha.len()
            * self.anomaly_rate.len().max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size() == 0 {
            return Err(Error::Config("every grid axis needs at least one value".into()));
        }
        if self.cap == 0 {
            return Err(Error::Config("grid cap must be positive".into()));
        }
        Ok(())
    }

    /// Cartesian product in lexicographic order, or a seeded sample of `cap`
    /// points (in shuffled order) when the product is larger than `cap`.
    pub fn points(&self, seed: u64) -> Result<Vec<GridPoint>> {
        self.validate()?;
        let rates: Vec<Option<f64>> = if self.anomaly_rate.is_empty() {
            vec![None]
        } else {
            self.anomaly_rate.iter().copied().map(Some).collect()
        };
        let mut out = Vec::with_capacity(self.size());
        for &sigma in &self.sigma {
            for arch in &self.architecture {
                for &rff_dim in &self.rff_dim {
                    for &rank in &self.rank {
                        for &alpha in &self.alpha {
                            for &anomaly_rate in &rates {
                                out.push(GridPoint {
                                    sigma,
                                    architecture: arch.clone(),
                                    rff_dim,
                                    rank,
                                    alpha,
                                    anomaly_rate,
                                });
                            }
                        }
                    }
                }
            }
        }
        if out.len() > self.cap {
            out.shuffle(&mut seeded(seed));
            out.truncate(self.cap);
        }
        Ok(out)
    }
}

/// Result of one grid run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    /// Position of the point in [`GridSpec::points`].
    pub index: usize,
    pub point: GridPoint,
    /// Metrics on the split used for ranking.
    pub selection: Option<MetricReport>,
    /// Metrics on an untouched holdout split, when one was given.
    pub holdout: Option<MetricReport>,
    pub error: Option<String>,
}

impl GridRow {
    pub fn f1(&self) -> Option<f64> {
        self.selection.as_ref().map(|m| m.f1_weighted)
    }
}

/// Data for a grid search: fit on `train`, rank on `selection`, and report
/// `holdout` alongside without using it for ranking.
#[derive(Debug, Clone, Copy)]
pub struct GridData<'a> {
    pub train: &'a DataTable,
    pub selection: &'a DataTable,
    pub holdout: Option<&'a DataTable>,
}

/// Train a fresh model per grid point (all with the base seed) and rank the
/// runs by weighted F1, best first. Failed runs are kept at the end.
pub fn grid_search(data: GridData<'_>, base: &LeandConfig, grid: &GridSpec, seed: u64, workers: usize) -> Result<Vec<GridRow>> {
    let points = grid.points(seed)?;
    let run = |(index, point): (usize, GridPoint)| -> GridRow {
        let cfg = point.apply(base);
        let result = fit(data.train, &cfg).and_then(|out| {
            let sel = evaluate(&out.model, data.selection)?;
            let hold = data.holdout.map(|h| evaluate(&out.model, h)).transpose()?;
            Ok((sel, hold))
        });
        match result {
            Ok((sel, hold)) => GridRow {
                index,
                point,
                selection: Some(sel),
                holdout: hold,
                error: None,
            },
            Err(e) => GridRow {
                index,
                point,
                selection: None,
                holdout: None,
                error: Some(e.to_string()),
            },
        }
    };
    let jobs: Vec<(usize, GridPoint)> = points.into_iter().enumerate().collect();
    let mut rows: Vec<GridRow> = if workers <= 1 {
        jobs.into_iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
        pool.install(|| jobs.into_par_iter().map(run).collect())
    };
    rows.sort_by(|a, b| match (a.f1(), b.f1()) {
        (Some(x), Some(y)) => y.total_cmp(&x).then(a.index.cmp(&b.index)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.index.cmp(&b.index),
    });
    Ok(rows)
}

/// Metrics of a fitted model on a labelled table, with ranking metrics.
pub fn evaluate(model: &crate::detector::LeandModel, table: &DataTable) -> Result<MetricReport> {
    let preds = model.predict_table(table)?;
    let labels: Vec<Label> = preds.iter().map(|p| p.label).collect();
    let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
    let report = MetricReport::from_labels(table.labels(), &labels)?;
    if table.anomaly_count() > 0 && table.anomaly_count() < table.count() {
        report.with_auc(table.labels(), &scores)
    } else {
        Ok(report)
    }
}

/// Ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Classic kernel density estimate on the standardized inputs.
    Kde,
    /// Autoencoder alone; reconstruction error is the anomaly score.
    Ae,
    /// Full pipeline with the reconstruction term removed from the joint loss.
    NoRecon,
    /// Full pipeline.
    Leand,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Kde, Variant::Ae, Variant::NoRecon, Variant::Leand];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Kde => "kde",
            Variant::Ae => "ae",
            Variant::NoRecon => "norecon",
            Variant::Leand => "leand",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}' (expected kde, ae, norecon or leand)")))
    }
}

/// Candidate kernels and widths for the classic-KDE variant; the best pair on
/// the evaluation split is reported, as with the grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdeSearch {
    pub families: Vec<KernelFamily>,
    /// Empty means "the base configuration's sigma".
    pub sigmas: Vec<f64>,
}

impl Default for KdeSearch {
    fn default() -> Self {
        Self {
            families: vec![KernelFamily::Gaussian, KernelFamily::Tophat, KernelFamily::Exponential],
            sigmas: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub report: MetricReport,
    /// Setting chosen for the variant, when it has a choice to make.
    pub detail: String,
}

fn resolved_rate(train: &DataTable, cfg: &LeandConfig) -> Result<f64> {
    let rate = cfg.anomaly_rate.unwrap_or_else(|| crate::dataset::outlier_rate(train));
    if rate > 0.0 && rate < 1.0 {
        Ok(rate)
    } else {
        Err(Error::invalid("ablation needs an anomaly rate in (0, 1)"))
    }
}

fn kde_variant(train: &DataTable, test: &DataTable, cfg: &LeandConfig, search: &KdeSearch) -> Result<AblationRow> {
    let rate = resolved_rate(train, cfg)?;
    let fit_rows = if cfg.normal_only { train.normal_rows() } else { train.clone() };
    let scaler = Scaler::fit_with(fit_rows.features(), cfg.scaling)?;
    let xtr = scaler.transform(fit_rows.features())?;
    let xte = scaler.transform(test.features())?;
    let sigmas = if search.sigmas.is_empty() { vec![cfg.sigma] } else { search.sigmas.clone() };
    let mut best: Option<AblationRow> = None;
    for &family in &search.families {
        for &sigma in &sigmas {
            let gamma = 1.0 / (2.0 * sigma * sigma);
            let tr: Vec<f64> = xtr
                .outer_iter()
                .map(|r| kernel_density(&xtr, r, family, gamma))
                .collect::<Result<_>>()?;
            let tau = calibrate_threshold(&tr, rate)?;
            let te: Vec<f64> = xte
                .outer_iter()
                .map(|r| kernel_density(&xtr, r, family, gamma))
                .collect::<Result<_>>()?;
            let pred: Vec<Label> = te.iter().map(|&s| if s >= tau { Label::Normal } else { Label::Anomaly }).collect();
            let report = MetricReport::from_labels(test.labels(), &pred)?;
            let better = best.as_ref().is_none_or(|b| report.f1_weighted > b.report.f1_weighted);
            if better {
                best = Some(AblationRow {
                    variant: Variant::Kde,
                    report,
                    detail: format!("kernel={family:?} sigma={sigma}").to_lowercase(),
                });
            }
        }
    }
    best.ok_or_else(|| Error::Config("kde search has no kernel family".into()))
}

fn ae_variant(train: &DataTable, test: &DataTable, cfg: &LeandConfig) -> Result<AblationRow> {
    let rate = resolved_rate(train, cfg)?;
    let fit_rows = if cfg.normal_only { train.normal_rows() } else { train.clone() };
    let scaler = Scaler::fit_with(fit_rows.features(), cfg.scaling)?;
    let xtr = scaler.transform(fit_rows.features())?;
    let xte = scaler.transform(test.features())?;
    let arch = if cfg.allow_overcomplete {
        Architecture::overcomplete(xtr.ncols(), cfg.architecture.clone(), cfg.activation)?
    } else {
        Architecture::new(xtr.ncols(), cfg.architecture.clone(), cfg.activation)?
    };
    let ae0 = autoencoder::init(&arch, derive_seed(cfg.seed, 1));
    // same number of autoencoder epochs as the full model gets over both stages
    let stage = StageConfig {
        epochs: cfg.pretrain.epochs + cfg.joint.epochs,
        ..cfg.pretrain.clone()
    };
    let ae = autoencoder::pretrain(&ae0, &xtr, &stage, derive_seed(cfg.seed, 2))?.params;
    let errors = |x: &ndarray::Array2<f64>| -> Result<Vec<f64>> {
        x.outer_iter()
            .map(|r| autoencoder::augmented_output(&ae, r).map(|o| o.euclid_err))
            .collect()
    };
    let tau = reconstruction_threshold(&errors(&xtr)?, rate)?;
    let pred: Vec<Label> = errors(&xte)?.iter().map(|&e| ae_label(e, tau)).collect();
    Ok(AblationRow {
        variant: Variant::Ae,
        report: MetricReport::from_labels(test.labels(), &pred)?,
        detail: String::new(),
    })
}

/// Upper-tail cut on reconstruction errors: the `1 − rate` quantile.
pub fn reconstruction_threshold(errors: &[f64], rate: f64) -> Result<f64> {
    calibrate_threshold(errors, 1.0 - rate)
}

/// Larger reconstruction error is more anomalous.
pub fn ae_label(error: f64, tau: f64) -> Label {
    if error > tau {
        Label::Anomaly
    } else {
        Label::Normal
    }
}

/// Configuration used by the [`Variant::NoRecon`] run.
pub fn norecon_config(cfg: &LeandConfig) -> LeandConfig {
    LeandConfig {
        recon_weight: 0.0,
        alpha: 1.0,
        ..cfg.clone()
    }
}

/// Run one ablation variant: fit on `train`, report metrics on `test`.
pub fn ablation_variant(variant: Variant, train: &DataTable, test: &DataTable, cfg: &LeandConfig, kde: &KdeSearch) -> Result<AblationRow> {
    match variant {
        Variant::Kde => kde_variant(train, test, cfg, kde),
        Variant::Ae => ae_variant(train, test, cfg),
        Variant::NoRecon | Variant::Leand => {
            let c = if variant == Variant::NoRecon { norecon_config(cfg) } else { cfg.clone() };
            let model = fit(train, &c)?.model;
            Ok(AblationRow {
                variant,
                report: evaluate(&model, test)?,
                detail: String::new(),
            })
        }
    }
}

/// All four variants, in [`Variant::ALL`] order.
pub fn ablation(train: &DataTable, test: &DataTable, cfg: &LeandConfig, kde: &KdeSearch) -> Result<Vec<AblationRow>> {
    Variant::ALL
        .into_iter()
        .map(|v| ablation_variant(v, train, test, cfg, kde))
        .collect()
}

/// Friedman test over a `datasets × algorithms` matrix of scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Friedman {
    pub q: f64,
    pub p_value: f64,
    /// Sum of ranks of each algorithm over the datasets (rank 1 = best).
    pub rank_sums: Vec<f64>,
    pub mean_ranks: Vec<f64>,
}

/// Ranks `1..=k` with rank 1 for the largest value; ties share the average rank.
pub fn average_ranks(row: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
    let mut ranks = vec![0.0; row.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && row[idx[j + 1]] == row[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// `Q = 12/(Nk(k+1)) Σⱼ Rⱼ² − 3N(k+1)` where `Rⱼ` is the rank sum of
/// algorithm `j` over `N` datasets; the p-value is the χ²(k−1) upper tail.
pub fn friedman(matrix: &[Vec<f64>]) -> Result<Friedman> {
    let n = matrix.len();
    let k = matrix.first().map_or(0, Vec::len);
    if n < 2 || k < 2 {
        return Err(Error::invalid(format!("need at least 2 datasets and 2 algorithms, got {n}x{k}")));
    }
    let mut rank_sums = vec![0.0; k];
    for row in matrix {
        Error::check_dim(k, row.len())?;
        if row.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("NaN in score matrix"));
        }
        for (s, r) in rank_sums.iter_mut().zip(average_ranks(row)) {
            *s += r;
        }
    }
    let (nf, kf) = (n as f64, k as f64);
    let sum_sq: f64 = rank_sums.iter().map(|r| r * r).sum();
    let q = 12.0 / (nf * kf * (kf + 1.0)) * sum_sq - 3.0 * nf * (kf + 1.0);
    // rounding can leave a tiny negative value for fully tied inputs
    let q = if q.abs() < 1e-9 { 0.0 } else { q };
    let chi = ChiSquared::new(kf - 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(Friedman {
        q,
        p_value: chi.sf(q),
        mean_ranks: rank_sums.iter().map(|r| r / nf).collect(),
        rank_sums,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Label::{Anomaly as A, Normal as N};

    #[test]
    fn perfect_and_all_wrong() {
        let t = vec![N, N, A, N, A];
        assert_eq!(f1_weighted(&t, &t).unwrap(), 1.0);
        assert_eq!(accuracy(&t, &t).unwrap(), 1.0);
        let flipped: Vec<Label> = t.iter().map(|l| if *l == N { A } else { N }).collect();
        assert_eq!(accuracy(&t, &flipped).unwrap(), 0.0);
        assert!(f1_weighted(&t, &t[..3]).is_err());
    }

    #[test]
    fn all_normal_predictions_on_ninety_ten() {
        let mut t = vec![N; 90];
        t.extend(vec![A; 10]);
        let p = vec![N; 100];
        let f1n = 2.0 * 0.9 / 1.9;
        let w = f1_weighted(&t, &p).unwrap();
        assert!((w - 0.9 * f1n).abs() < 1e-12);
        assert!((w - 0.853).abs() < 1e-3);
    }

    fn oracle_weighted_f1(t: &[Label], p: &[Label]) -> f64 {
        let mut total = 0.0;
        for class in [N, A] {
            let tp = t.iter().zip(p).filter(|(a, b)| **a == class && **b == class).count() as f64;
            let pred = p.iter().filter(|b| **b == class).count() as f64;
            let sup = t.iter().filter(|a| **a == class).count() as f64;
            let prec = if pred > 0.0 { tp / pred } else { 0.0 };
            let rec = if sup > 0.0 { tp / sup } else { 0.0 };
            let f = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
            total += f * sup;
        }
        total / t.len() as f64
    }

    #[test]
    fn auc_of_perfect_ranking() {
        let t = vec![A, N, N, A, N];
        let s = vec![0.1, 0.9, 0.8, 0.2, 0.7];
        assert_eq!(auc_roc(&t, &s).unwrap(), 1.0);
        assert_eq!(average_precision(&t, &s).unwrap(), 1.0);
        let rev: Vec<f64> = s.iter().map(|v| -v).collect();
        assert_eq!(auc_roc(&t, &rev).unwrap(), 0.0);
    }

    #[test]
    fn grid_points_and_cap() {
        let g = GridSpec::default();
        assert_eq!(g.points(1).unwrap().len(), 1);
        let big = GridSpec {
            sigma: (0..10).map(f64::from).collect(),
            alpha: (0..20).map(|a| a as f64 / 20.0).collect(),
            cap: 100,
            ..GridSpec::default()
        };
        assert_eq!(big.size(), 200);
        let pts = big.points(3).unwrap();
        assert_eq!(pts.len(), 100);
        assert_eq!(pts, big.points(3).unwrap());
        let mut uniq = pts.iter().map(|p| format!("{p}")).collect::<Vec<_>>();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 100);
    }

    #[test]
    fn published_grid_shape() {
        let g = GridSpec::published(0.042);
        assert_eq!(g.sigma.first(), Some(&(1.0 / 32.0)));
        assert_eq!(g.sigma.last(), Some(&512.0));
        assert_eq!(g.sigma.len(), 15);
        assert_eq!(g.anomaly_rate.len(), 10);
        assert_eq!(g.points(0).unwrap().len(), 100);
        assert_eq!(GridSpec::published(0.1).anomaly_rate.len(), 11);
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[0.9, 0.5, 0.7]), vec![1.0, 3.0, 2.0]);
        assert_eq!(average_ranks(&[0.5, 0.5, 0.1]), vec![1.5, 1.5, 3.0]);
        assert_eq!(average_ranks(&[1.0, 1.0, 1.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn friedman_all_tied_is_zero() {
        let m = vec![vec![0.5; 4]; 5];
        let f = friedman(&m).unwrap();
        assert_eq!(f.q, 0.0);
        assert!((f.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn friedman_dominant_algorithm() {
        // algorithm 0 always best, 1 second, 2 third: R = (3, 6, 9)
        let m = vec![vec![0.9, 0.8, 0.1], vec![0.7, 0.6, 0.5], vec![1.0, 0.2, 0.0]];
        let f = friedman(&m).unwrap();
        assert_eq!(f.rank_sums, vec![3.0, 6.0, 9.0]);
        // 12/(3·3·4)·(9 + 36 + 81) − 3·3·4 = 42 − 36 = 6
        assert!((f.q - 6.0).abs() < 1e-12);
        assert!((f.p_value - (-3.0f64).exp()).abs() < 1e-12);
        assert!(friedman(&m[..1]).is_err());
    }

    #[test]
    fn friedman_two_algorithms() {
        // a wins on 3 of 4 datasets: R = (5, 7)
        let m = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let f = friedman(&m).unwrap();
        let direct = 12.0 / (4.0 * 2.0 * 3.0) * (25.0 + 49.0) - 3.0 * 4.0 * 3.0;
        assert!((f.q - direct).abs() < 1e-12);
        assert!((f.q - 1.0).abs() < 1e-12);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("knn".parse::<Variant>().is_err());
    }

    #[test]
    fn ae_scoring_is_monotone_in_error() {
        let tau = 2.0;
        for (small, large) in [(0.5, 3.0), (1.9, 2.1), (2.0, 2.5)] {
            if ae_label(small, tau) == A {
                assert_eq!(ae_label(large, tau), A);
            }
        }
        assert_eq!(ae_label(2.0, tau), N);
    }

    fn labels_strategy() -> impl Strategy<Value = (Vec<Label>, Vec<Label>)> {
        (1usize..60).prop_flat_map(|n| {
            let l = proptest::collection::vec(prop_oneof![Just(N), Just(A)], n);
            (l.clone(), l)
        })
    }

    proptest! {
        #[test]
        fn weighted_f1_matches_oracle((t, p) in labels_strategy()) {
            let got = f1_weighted(&t, &p).unwrap();
            prop_assert!((got - oracle_weighted_f1(&t, &p)).abs() < 1e-12);
            let acc = t.iter().zip(&p).filter(|(a, b)| a == b).count() as f64 / t.len() as f64;
            prop_assert!((accuracy(&t, &p).unwrap() - acc).abs() < 1e-15);
            let c = Confusion::from_labels(&t, &p).unwrap();
            prop_assert_eq!(c.total(), t.len());
            prop_assert_eq!(got == 1.0, t == p);
        }

        #[test]
        fn friedman_ignores_monotone_transforms(
            m in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 4), 3..8),
        ) {
            let a = friedman(&m).unwrap();
            let t: Vec<Vec<f64>> = m.iter().map(|r| r.iter().map(|v| (3.0 * v).exp() - 7.0).collect()).collect();
            let b = friedman(&t).unwrap();
            prop_assert!((a.q - b.q).abs() < 1e-9);
        }
    }
}
