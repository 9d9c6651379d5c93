// Fit the full detector on a CSV dataset and report test-split metrics.
//
// ```text
// cargo run --release --example detect_anomalies -- data/glass.csv
// ```
//
// Without an argument a synthetic two-cluster set with 5% outliers is used.

use leand::dataset::{load_csv, split, CsvOptions, DataTable, Label, SplitSpec};
use leand::detector::{fit, LeandConfig};
use leand::evaluation::evaluate;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

fn synthetic() -> leand::Result<DataTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let noise = Normal::new(0.0, 0.4).expect("valid normal");
    let wide = Uniform::new(-6.0, 6.0).expect("valid range");
    let n = 400;
    let labels: Vec<Label> = (0..n).map(|i| if i % 20 == 0 { Label::Anomaly } else { Label::Normal }).collect();
    let x = Array2::from_shape_fn((n, 4), |(i, j)| {
        if labels[i].is_anomaly() {
            wide.sample(&mut rng)
        } else {
            let centre = if i % 2 == 0 { 1.5 } else { -1.5 };
            centre * if j % 2 == 0 { 1.0 } else { -1.0 } + noise.sample(&mut rng)
        }
    });
    DataTable::new("synthetic", x, labels)
}

fn main() -> leand::Result<()> {
    let table = match std::env::args().nth(1) {
        Some(path) => load_csv(path, &CsvOptions::default())?,
        None => synthetic()?,
    };
    let (train, test) = split(&table, &SplitSpec::new(42, 0.7))?;
    let cfg = LeandConfig {
        architecture: vec![16, 8, 2],
        allow_overcomplete: true,
        rff_dim: 250,
        rank: 50,
        pretrain: leand::optim::StageConfig {
            epochs: 30,
            ..Default::default()
        },
        joint: leand::optim::StageConfig {
            epochs: 20,
            ..Default::default()
        },
        ..LeandConfig::default()
    };
    let out = fit(&train, &cfg)?;
    let r = &out.report;
    println!(
        "{}: {} train rows, gamma={} rank={} tau={:e}",
        table.name(),
        r.train_rows,
        r.gamma,
        r.effective_rank,
        r.tau
    );
    let m = evaluate(&out.model, &test)?;
    println!("test: f1_weighted={:.3} accuracy={:.3} {:?}", m.f1_weighted, m.accuracy, m.confusion);
    Ok(())
}
