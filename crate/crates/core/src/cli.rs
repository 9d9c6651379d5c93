//! Command-line front end: `train`, `eval`, `gridsearch` and `ablation`.
//!
//! Every command reads its inputs, validates them, and only then creates the
//! output directory, so a bad invocation leaves nothing behind.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dataset::{load_csv, split, DataTable, SplitSpec};
use crate::detector::fit;
use crate::evaluation::{ablation_variant, evaluate, grid_search, GridData, Variant};
use crate::{derive_seed, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "leand", version, about = "Latent density anomaly detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model on the train split and write a checkpoint.
    Train(CommonArgs),
    /// Score a labelled CSV with a checkpoint.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Rank the grid in the config's [grid] table.
    Gridsearch {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Compare kde, ae, norecon and leand on one split.
    Ablation {
        #[command(flatten)]
        common: CommonArgs,
        /// Run a single variant instead of all four.
        #[arg(long)]
        variant: Option<String>,
    },
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// Dataset CSV; overrides `data` in the config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Label column name or index.
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Flat TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

impl CommonArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.data {
            cfg.data = Some(d.clone());
        }
        if let Some(l) = &self.label {
            cfg.label = l.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_data(cfg: &RunConfig) -> Result<DataTable> {
    let path = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset given (use --data or set `data` in the config)".into()))?;
    load_csv(path, &cfg.csv_options())
}

fn split_data(cfg: &RunConfig, table: &DataTable) -> Result<(DataTable, DataTable)> {
    split(table, &SplitSpec::new(cfg.seed, cfg.train_fraction))
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: PathBuf, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(e.to_string()))?;
    s.push('\n');
    write_text(path, &s)
}

/// Exit status for an error: 2 configuration, 3 numerical, 4 input/output.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) | Error::DimensionMismatch { .. } => 2,
        Error::Numerical(_) | Error::Eigen(_) => 3,
        Error::Io { .. } | Error::Csv(_) | Error::NoDataRows | Error::BadRow { .. } | Error::Label(_) | Error::Checkpoint(_) => 4,
    }
}

pub fn cmd_train(args: &CommonArgs) -> Result<String> {
    let cfg = args.resolve()?;
    let table = load_data(&cfg)?;
    let (train, test) = split_data(&cfg, &table)?;
    let out = fit(&train, &cfg.leand_config()?)?;
    create_out(&args.out)?;
    Checkpoint {
        model: out.model.clone(),
        seed: cfg.seed,
    }
    .save(args.out.join("model.ckpt"))?;
    write_json(args.out.join("train_report.json"), &out.report)?;
    write_text(args.out.join("config.toml"), &cfg.to_toml_string()?)?;
    test.write_csv(args.out.join("test.csv"))?;
    let r = &out.report;
    Ok(format!(
        "trained on {} rows: tau={:e} rank={} pretrain {:.4}->{:.4} joint {:.4}->{:.4}\nwrote {}",
        r.train_rows,
        r.tau,
        r.effective_rank,
        r.pretrain_losses.first().copied().unwrap_or(f64::NAN),
        r.pretrain_losses.last().copied().unwrap_or(f64::NAN),
        r.joint_losses.first().copied().unwrap_or(f64::NAN),
        r.joint_losses.last().copied().unwrap_or(f64::NAN),
        args.out.display()
    ))
}

pub fn cmd_eval(args: &CommonArgs, checkpoint: &Path) -> Result<String> {
    let mut cfg = match &args.config {
        Some(_) => args.resolve()?,
        None => RunConfig::default(),
    };
    if let Some(d) = &args.data {
        cfg.data = Some(d.clone());
    }
    if let Some(l) = &args.label {
        cfg.label = l.clone();
    }
    let ckpt = Checkpoint::load(checkpoint)?;
    let table = load_data(&cfg)?;
    let preds = ckpt.model.predict_table(&table)?;
    let report = evaluate(&ckpt.model, &table)?;
    let mut csv = String::from("row_index,score,label\n");
    for (i, p) in preds.iter().enumerate() {
        writeln!(csv, "{i},{:e},{}", p.score, p.label.as_u8()).expect("string write");
    }
    create_out(&args.out)?;
    write_json(args.out.join("metrics.json"), &report)?;
    write_text(args.out.join("predictions.csv"), &csv)?;
    Ok(format!(
        "f1_weighted={:.4} accuracy={:.4} f1_anomaly={:.4} on {} rows",
        report.f1_weighted,
        report.accuracy,
        report.f1_anomaly,
        table.count()
    ))
}

pub fn cmd_gridsearch(args: &CommonArgs, workers: usize) -> Result<String> {
    let cfg = args.resolve()?;
    let grid = cfg
        .grid
        .clone()
        .ok_or_else(|| Error::Config("gridsearch needs a [grid] table in the config".into()))?;
    let table = load_data(&cfg)?;
    let (train, test) = split_data(&cfg, &table)?;
    let (selection, holdout) = if cfg.holdout_fraction > 0.0 {
        let (s, h) = split(&test, &SplitSpec::new(derive_seed(cfg.seed, 7), 1.0 - cfg.holdout_fraction))?;
        (s, Some(h))
    } else {
        (test, None)
    };
    let data = GridData {
        train: &train,
        selection: &selection,
        holdout: holdout.as_ref(),
    };
    let rows = grid_search(data, &cfg.leand_config()?, &grid, cfg.seed, workers)?;
    let mut csv = String::from(
        "rank,index,sigma,architecture,rff_dim,density_rank,alpha,anomaly_rate,f1_weighted,accuracy,f1_anomaly,holdout_f1_weighted,holdout_accuracy,error\n",
    );
    for (pos, r) in rows.iter().enumerate() {
        let p = &r.point;
        let arch = p.architecture.iter().map(ToString::to_string).collect::<Vec<_>>().join("-");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let sel = r.selection.as_ref();
        let hold = r.holdout.as_ref();
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            pos + 1,
            r.index,
            p.sigma,
            arch,
            p.rff_dim,
            p.rank,
            p.alpha,
            opt(p.anomaly_rate),
            opt(sel.map(|m| m.f1_weighted)),
            opt(sel.map(|m| m.accuracy)),
            opt(sel.map(|m| m.f1_anomaly)),
            opt(hold.map(|m| m.f1_weighted)),
            opt(hold.map(|m| m.accuracy)),
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        )
        .expect("string write");
    }
    create_out(&args.out)?;
    write_text(args.out.join("rankings.csv"), &csv)?;
    write_text(args.out.join("config.toml"), &cfg.to_toml_string()?)?;
    let best = rows.first().and_then(|r| r.f1().map(|f| (f, r.point.to_string())));
    Ok(match best {
        Some((f, p)) => format!("{} runs; best f1_weighted={f:.4} at {p}", rows.len()),
        None => format!("{} runs; none succeeded", rows.len()),
    })
}

pub fn cmd_ablation(args: &CommonArgs, variant: Option<&str>) -> Result<String> {
    let cfg = args.resolve()?;
    let variants = match variant {
        Some(v) => vec![v.parse::<Variant>()?],
        None => Variant::ALL.to_vec(),
    };
    let table = load_data(&cfg)?;
    let (train, test) = split_data(&cfg, &table)?;
    let lc = cfg.leand_config()?;
    let kde = cfg.kde_search();
    let rows = variants
        .iter()
        .map(|&v| ablation_variant(v, &train, &test, &lc, &kde))
        .collect::<Result<Vec<_>>>()?;
    let mut csv = String::from("variant,f1_weighted,accuracy,f1_anomaly,tn,fp,fn,tp,detail\n");
    let mut summary = String::new();
    for r in &rows {
        let m = &r.report;
        let c = m.confusion;
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            r.variant, m.f1_weighted, m.accuracy, m.f1_anomaly, c.tn, c.fp, c.fn_, c.tp, r.detail
        )
        .expect("string write");
        writeln!(summary, "{:<8} f1_weighted={:.4}", r.variant.name(), m.f1_weighted).expect("string write");
    }
    create_out(&args.out)?;
    write_text(args.out.join("ablation.csv"), &csv)?;
    write_text(args.out.join("config.toml"), &cfg.to_toml_string()?)?;
    Ok(summary.trim_end().to_string())
}

/// Parse `argv`, run the command, print its summary, and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval { common, checkpoint } => cmd_eval(common, checkpoint),
        Command::Gridsearch { common, workers } => cmd_gridsearch(common, *workers),
        Command::Ablation { common, variant } => cmd_ablation(common, variant.as_deref()),
    };
    match result {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Numerical("x".into())), 3);
        assert_eq!(exit_code(&Error::NoDataRows), 4);
    }

    #[test]
    fn missing_dataset_is_a_usage_error_without_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let code = run(["leand", "train", "--out", out.to_str().unwrap()]);
        assert_eq!(code, 2);
        assert!(!out.exists());
        let code = run(["leand", "train", "--data", "/nonexistent.csv", "--out", out.to_str().unwrap()]);
        assert_eq!(code, 4);
        assert!(!out.exists());
    }

    #[test]
    fn unknown_subcommand_is_rejected() {
        assert_eq!(run(["leand", "frobnicate"]), 2);
        assert_eq!(run(["leand", "ablation", "--variant", "knn", "--data", "x.csv"]), 2);
    }
}
