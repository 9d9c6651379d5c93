// Compare the full detector against its KDE-only, autoencoder-only and
// likelihood-only variants on one dataset.
//
// ```text
// cargo run --release --example ablation -- data/lympho.csv
// ```

use leand::dataset::{load_csv, split, CsvOptions, DataTable, Label, SplitSpec};
use leand::detector::LeandConfig;
use leand::evaluation::{ablation, KdeSearch};
use leand::optim::StageConfig;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn ring() -> leand::Result<DataTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let jitter = Normal::new(0.0, 0.1).expect("valid normal");
    let labels: Vec<Label> = (0..300).map(|i| if i % 25 == 0 { Label::Anomaly } else { Label::Normal }).collect();
    let x = Array2::from_shape_fn((300, 2), |(i, j)| {
        let t = i as f64 * 0.7;
        let r = if labels[i].is_anomaly() { 0.2 } else { 2.0 };
        let v = if j == 0 { r * t.cos() } else { r * t.sin() };
        v + jitter.sample(&mut rng)
    });
    DataTable::new("ring", x, labels)
}

fn main() -> leand::Result<()> {
    let table = match std::env::args().nth(1) {
        Some(path) => load_csv(path, &CsvOptions::default())?,
        None => ring()?,
    };
    let (train, test) = split(&table, &SplitSpec::new(42, 0.7))?;
    let cfg = LeandConfig {
        architecture: vec![8, 4],
        allow_overcomplete: true,
        rff_dim: 250,
        rank: 50,
        pretrain: StageConfig { epochs: 20, ..Default::default() },
        joint: StageConfig { epochs: 10, ..Default::default() },
        ..LeandConfig::default()
    };
    let kde = KdeSearch { sigmas: vec![0.5, 1.0, 2.0], ..KdeSearch::default() };
    for row in ablation(&train, &test, &cfg, &kde)? {
        println!("{:<8} f1={:.3} acc={:.3} {}", row.variant, row.report.f1_weighted, row.report.accuracy, row.detail);
    }
    Ok(())
}
