//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use pong::data::{Dataset, RegimeSpec, Rule, RuleSpec, Split};
use pong::geometry::Geometry;
use pong::layers::TcnMode;
use pong::manifest::Manifest;
use pong::model::{gradcheck_model, load_checkpoint, param_count, Ablation, ModelConfig, Pong};
use pong::seed::derive_seed;
use pong::tensor::tolerance;
use pong::train::{evaluate, train, MetricReport, TrainConfig, CHECKPOINT_DIR};
use pong::{Error, Result};

use crate::config::{key, Key, RunConfig};

pub const GENERATE: &[Key] = &[
    key("geometry", Some("rpm3x3"), "rpm3x3, vap2x3 or a2x2"),
    key("regime", Some("auto"), "iid, held-out, or auto (held-out when --holdout is given)"),
    key("holdout", Some(""), "comma-separated rule:attribute pairs kept out of train and val"),
    key("rules", Some(""), "comma-separated rules to draw from (default: all)"),
    key("n-train", Some("10000"), "training instances"),
    key("n-val", Some("2000"), "validation instances"),
    key("n-test", Some("2000"), "test instances"),
    key("seed", Some("0"), "root seed"),
    key("out", None, "output directory"),
];

pub const TRAIN: &[Key] = &[
    key("data", None, "directory holding train/, val/ and optionally test/"),
    key("seed", Some("0"), "root seed for initialization and shuffling"),
    key("batch-size", Some("128"), "minibatch size"),
    key("epochs", Some("100"), "maximum epochs"),
    key("lr", Some("0.001"), "initial learning rate"),
    key("beta", Some("25"), "weight of the aggregate rule loss"),
    key("gamma", Some("5"), "weight of the target-conditioned rule loss"),
    key("ablate", Some(""), "comma-separated subset of p1p2, p3p4, tcn"),
    key("tcn-mode", Some("within-group"), "within-group or across-groups"),
    key("eval-batch-size", Some("64"), "batch size for validation and test"),
    key("out", None, "output directory"),
];

pub const EVAL: &[Key] = &[
    key("checkpoint", None, "checkpoint directory"),
    key("data", None, "dataset split directory"),
    key("batch-size", Some("64"), "evaluation batch size"),
    key("out", None, "output directory"),
];

pub const GRADCHECK: &[Key] = &[
    key("samples", Some("50"), "parameter coordinates to check"),
    key("seed", Some("0"), "seed of the model, batch and coordinate draw"),
    key("geometry", Some("rpm3x3"), "rpm3x3, vap2x3 or a2x2"),
    key("d-r", Some("40"), "rule vector length"),
    key("tcn-mode", Some("within-group"), "within-group or across-groups"),
    key("out", Some("."), "directory for the config echo"),
];

pub const PARAMS: &[Key] = &[
    key("geometry", Some("rpm3x3"), "rpm3x3, vap2x3 or a2x2"),
    key("d-r", Some("40"), "rule vector length"),
    key("ablate", Some(""), "comma-separated subset of p1p2, p3p4, tcn"),
    key("tcn-mode", Some("within-group"), "within-group or across-groups"),
    key("out", Some("."), "directory for the config echo"),
];

/// Command outcome beyond errors.
pub enum Outcome {
    Ok,
    /// The command ran but its check failed.
    CheckFailed,
}

fn tcn_mode(c: &RunConfig) -> Result<TcnMode> {
    let v = c.raw("tcn-mode");
    TcnMode::parse(v).ok_or_else(|| Error::Config(format!("invalid --tcn-mode '{v}'")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io { context: format!("writing {}", path.display()), source: e })
}

pub fn generate(c: &RunConfig) -> Result<Outcome> {
    let geometry: Geometry = c.get("geometry")?;
    let held_out = RuleSpec::parse_list(c.raw("holdout"))?;
    let rules = Rule::parse_list(c.raw("rules"))?;
    match (c.raw("regime"), held_out.is_empty()) {
        ("auto", _) | ("iid", true) | ("held-out", false) => {}
        ("iid", false) => return Err(Error::Config("--regime iid cannot hold out pairs".into())),
        ("held-out", true) => return Err(Error::Config("--regime held-out needs --holdout".into())),
        (other, _) => return Err(Error::Config(format!("unknown regime '{other}' (expected iid, held-out or auto)"))),
    }
    let regime = RegimeSpec::new(geometry, held_out, rules)?;
    let seed: u64 = c.get("seed")?;
    let counts = [
        (Split::Train, c.get::<usize>("n-train")?),
        (Split::Val, c.get::<usize>("n-val")?),
        (Split::Test, c.get::<usize>("n-test")?),
    ];
    if let Some((s, _)) = counts.iter().find(|(_, n)| *n == 0) {
        return Err(Error::Config(format!("--n-{s} must be positive")));
    }
    let out = PathBuf::from(c.raw("out"));
    c.write_echo(&out)?;
    let mut m = Manifest::new();
    m.push("geometry", geometry);
    m.push("regime", if regime.is_iid() { "iid" } else { "held-out" });
    for (k, v) in regime.to_pairs() {
        m.push(k, v);
    }
    m.push("seed", seed);
    for (split, n) in counts {
        m.push(format!("n-{split}"), n);
        info!("generating {n} {split} instances");
        Dataset::generate(&regime, split, seed, n)?.write(&out.join(split.as_str()))?;
    }
    m.write(&out.join("regime"))?;
    println!("wrote {} under {}", counts.map(|(s, n)| format!("{n} {s}")).join(", "), out.display());
    Ok(Outcome::Ok)
}

pub fn train_cmd(c: &RunConfig) -> Result<Outcome> {
    let data = PathBuf::from(c.raw("data"));
    let seed: u64 = c.get("seed")?;
    let cfg = TrainConfig {
        seed,
        batch_size: c.get("batch-size")?,
        max_epochs: c.get("epochs")?,
        lr: c.get("lr")?,
        eval_batch_size: c.get("eval-batch-size")?,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let ablation = Ablation::parse(c.raw("ablate"))?;
    let (beta, gamma): (f64, f64) = (c.get("beta")?, c.get("gamma")?);
    let tcn = tcn_mode(c)?;
    let out = PathBuf::from(c.raw("out"));

    let train_data = Dataset::read(&data.join("train"))?;
    let val_data = Dataset::read(&data.join("val"))?;
    let model_cfg = ModelConfig {
        beta,
        gamma,
        ablation,
        tcn_mode: tcn,
        ..ModelConfig::for_geometry(train_data.geometry(), train_data.rule_dim)
    };
    model_cfg.validate()?;
    c.write_echo(&out)?;
    let mut model = Pong::<f32>::new(model_cfg, derive_seed(seed, "init", 0))?;
    info!("training {} parameters on {} instances", model.param_count(), train_data.len());
    let report = train(&mut model, &train_data, &val_data, &cfg, Some(&out))?;
    println!(
        "best epoch {} of {}: val loss {:.4}{}",
        report.best_epoch,
        report.epochs.len(),
        report.best_val_loss,
        if report.stopped_early { " (stopped early)" } else { "" }
    );
    let test_dir = data.join("test");
    if test_dir.join("manifest").is_file() {
        let test = Dataset::read(&test_dir)?;
        let (mut best, _) = load_checkpoint::<f32>(&out.join(CHECKPOINT_DIR))?;
        let r = evaluate(&mut best, &test, cfg.eval_batch_size)?;
        print!("test metrics (best checkpoint)\n{}", r.table());
        write_text(&out.join("test-metrics.csv"), &r.csv())?;
    }
    Ok(Outcome::Ok)
}

pub fn eval(c: &RunConfig) -> Result<Outcome> {
    let batch: usize = c.get("batch-size")?;
    if batch == 0 {
        return Err(Error::Config("--batch-size must be positive".into()));
    }
    let out = PathBuf::from(c.raw("out"));
    let (mut model, _) = load_checkpoint::<f32>(Path::new(c.raw("checkpoint")))?;
    let data = Dataset::read(Path::new(c.raw("data")))?;
    c.write_echo(&out)?;
    let r: MetricReport = evaluate(&mut model, &data, batch)?;
    print!("{}", r.table());
    println!();
    print!("{}", r.csv());
    write_text(&out.join("eval-metrics.csv"), &r.csv())?;
    Ok(Outcome::Ok)
}

pub fn gradcheck(c: &RunConfig) -> Result<Outcome> {
    let samples: usize = c.get("samples")?;
    if samples == 0 {
        return Err(Error::Config("--samples must be positive".into()));
    }
    let model_cfg = ModelConfig {
        tcn_mode: tcn_mode(c)?,
        ..ModelConfig::for_geometry(c.get("geometry")?, c.get("d-r")?)
    };
    model_cfg.validate()?;
    c.write_echo(Path::new(c.raw("out")))?;
    let report = gradcheck_model(&model_cfg, 2, samples, c.get("seed")?)?;
    println!("{:<48} {:>14} {:>14} {:>10}", "parameter", "analytic", "numeric", "rel.err");
    for p in &report.probes {
        println!(
            "{:<48} {:>14.6e} {:>14.6e} {:>10.2e}",
            format!("{}[{}]", p.name, p.index),
            p.analytic,
            p.numeric,
            p.error
        );
    }
    let tol = tolerance::GRAD_CHECK_F64;
    let passed = report.passed(tol);
    println!(
        "max relative error {:.3e} over {} parameters (tolerance {tol:e}): {}",
        report.max_error,
        report.probes.len(),
        if passed { "PASS" } else { "FAIL" }
    );
    Ok(if passed { Outcome::Ok } else { Outcome::CheckFailed })
}

pub fn params(c: &RunConfig) -> Result<Outcome> {
    let model_cfg = ModelConfig {
        ablation: Ablation::parse(c.raw("ablate"))?,
        tcn_mode: tcn_mode(c)?,
        ..ModelConfig::for_geometry(c.get("geometry")?, c.get("d-r")?)
    };
    model_cfg.validate()?;
    c.write_echo(Path::new(c.raw("out")))?;
    let n = param_count(&model_cfg)?;
    println!("parameters: {n} (≈{:.1}M)", n as f64 / 1e6);
    Ok(Outcome::Ok)
}
