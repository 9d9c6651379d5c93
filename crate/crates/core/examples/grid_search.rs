// Rank a small hyperparameter grid in parallel, with a holdout split kept
// out of the ranking.

use leand::dataset::{split, DataTable, Label, SplitSpec};
use leand::detector::LeandConfig;
use leand::evaluation::{grid_search, GridData, GridSpec};
use leand::optim::StageConfig;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> leand::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = Normal::new(0.0, 1.0).expect("valid normal");
    let labels: Vec<Label> = (0..300).map(|i| if i % 15 == 0 { Label::Anomaly } else { Label::Normal }).collect();
    let x = Array2::from_shape_fn((300, 3), |(i, _)| {
        let s = g.sample(&mut rng);
        if labels[i].is_anomaly() { 4.0 + s } else { 0.5 * s }
    });
    let table = DataTable::new("blobs", x, labels)?;

    let (train, rest) = split(&table, &SplitSpec::new(1, 0.6))?;
    let (selection, holdout) = split(&rest, &SplitSpec::new(2, 0.5))?;

    let base = LeandConfig {
        allow_overcomplete: true,
        pretrain: StageConfig { epochs: 10, ..Default::default() },
        joint: StageConfig { epochs: 5, ..Default::default() },
        ..LeandConfig::default()
    };
    let grid = GridSpec {
        sigma: vec![0.5, 1.0, 2.0],
        architecture: vec![vec![8, 2], vec![8, 4, 2]],
        rff_dim: vec![128],
        rank: vec![16],
        alpha: vec![0.0, 0.5],
        anomaly_rate: Vec::new(),
        cap: 8,
    };
    let data = GridData { train: &train, selection: &selection, holdout: Some(&holdout) };
    let rows = grid_search(data, &base, &grid, 42, 2)?;

    println!("{} of {} combinations run", rows.len(), grid.size());
    for row in &rows {
        let f1 = |m: &Option<leand::evaluation::MetricReport>| m.as_ref().map_or(f64::NAN, |m| m.f1_weighted);
        println!("#{:<2} sel={:.3} hold={:.3}  {}", row.index, f1(&row.selection), f1(&row.holdout), row.point);
    }
    Ok(())
}
