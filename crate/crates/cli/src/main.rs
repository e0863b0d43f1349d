mod config;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use ssctl::data::{generate_with_report, load_csv, split, write_csv, Dataset, FeatureSchema};
use ssctl::isct::{partition, pseudo_label, read_pseudo, write_pseudo, GaussianWeightState};
use ssctl::train::{
    classifier_from_checkpoint, classifier_to_checkpoint, evaluate, fit_classifier,
    model_from_checkpoint, model_to_checkpoint, prepare, read_baseline, reference_gradcheck, rimp,
    soft_partition, write_metrics_line, Checkpoint, ClassifierSummary, MetricsReport, Trainer,
};

const DATA_CSV: &str = "data.csv";
const SCHEMA_JSON: &str = "schema.json";
const PROVENANCE_JSON: &str = "provenance.json";
const STATE_CKPT: &str = "state.ckpt";
const MODEL_CKPT: &str = "model.ckpt";
const METRICS_JSONL: &str = "metrics.jsonl";
const REPORT_JSON: &str = "report.json";
const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("gradient check failed for: {}", .0.join(", "))]
    CheckFailed(Vec<String>),
}

#[derive(Parser)]
#[command(
    name = "ssctl",
    version,
    about = "Multi-domain CTR training with pseudo-domain augmentation"
)]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-domain click log.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and freeze the domain classifier on non-dominant training rows.
    TrainClassifier {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign a pseudo domain and confidence to every dominant-domain row.
    PseudoLabel {
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the CTR model; without --classifier this is the backbone alone.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long, requires = "classifier")]
        pseudo: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Save state and exit once this many epochs are done.
        #[arg(long, hide = true)]
        stop_after_epochs: Option<usize>,
    },
    /// Per-domain test AUC of a saved model, with RImp against a baseline.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Finite-difference check of every gradient on a small seeded model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Multiply analytic gradients by this factor before comparing.
        #[arg(long, hide = true, default_value_t = 1.0)]
        corrupt_grad: f64,
    },
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes through a temporary sibling so an interrupted save never leaves a torn file.
fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    ckpt.save(&tmp)
        .with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))
}

fn load_data(dir: &Path) -> Result<Dataset> {
    let schema_path = dir.join(SCHEMA_JSON);
    let text = fs::read_to_string(&schema_path)
        .with_context(|| format!("reading {}", schema_path.display()))?;
    let schema: FeatureSchema = serde_json::from_str(&text)
        .map_err(ssctl::Error::from)
        .with_context(|| format!("in {}", schema_path.display()))?;
    let csv = dir.join(DATA_CSV);
    load_csv(&csv, &schema).with_context(|| format!("in {}", csv.display()))
}

fn check_schema(expected: &FeatureSchema, found: &FeatureSchema, what: &str) -> Result<()> {
    let fields = |s: &FeatureSchema| -> Vec<(String, usize)> {
        s.feature_fields()
            .chain(std::iter::once(&s.domain_field))
            .map(|f| (f.name.clone(), f.vocab))
            .collect()
    };
    let (a, b) = (fields(expected), fields(found));
    for (x, y) in a.iter().zip(&b) {
        if x != y {
            return Err(ssctl::Error::config(
                &x.0,
                format!(
                    "{what} expects `{}` with vocabulary {}, data has `{}` with {}",
                    x.0, x.1, y.0, y.1
                ),
            )
            .into());
        }
    }
    if a.len() != b.len() {
        return Err(ssctl::Error::config(
            "schema",
            format!("{what} has {} fields, data has {}", a.len(), b.len()),
        )
        .into());
    }
    Ok(())
}

fn gen_data(config: &Path, out: &Path) -> Result<()> {
    let cfg = config::synthetic_config(config)?;
    let (ds, report) = generate_with_report(&cfg)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let csv = out.join(DATA_CSV);
    write_csv(&ds, &csv).with_context(|| format!("writing {}", csv.display()))?;
    write_json(&out.join(SCHEMA_JSON), &ds.schema)?;
    let counts = ds.domain_counts();
    write_json(
        &out.join(PROVENANCE_JSON),
        &json!({
            "generator": env!("CARGO_PKG_VERSION"),
            "config": cfg,
            "config_hash": cfg.hash(),
            "seed": cfg.seed,
            "rows": ds.len(),
            "domain_counts": counts,
            "domain_shares": counts.iter().map(|&c| c as f64 / ds.len() as f64).collect::<Vec<_>>(),
            "positive_rate": ds.positive_rate(),
            "realised_overlap": report,
            "data_sha256": sha256_file(&csv)?,
        }),
    )?;
    println!(
        "wrote {} rows over {} domains to {}",
        ds.len(),
        counts.len(),
        out.display()
    );
    Ok(())
}

fn train_classifier_cmd(data: &Path, config: &Path, out: &Path) -> Result<()> {
    let cfg = config::train_config(config)?;
    let ds = load_data(data)?;
    let (train, _, _) = split(&ds, &cfg.split)?;
    let (clf, report) = fit_classifier(&ds, &train, &cfg)?;
    save_checkpoint(&classifier_to_checkpoint(&clf)?, out)?;
    let mut report_path = out.as_os_str().to_owned();
    report_path.push(".accuracy.json");
    write_json(Path::new(&report_path), &report)?;
    println!(
        "held-out accuracy {:.4} on {} rows",
        report.accuracy, report.holdout_rows
    );
    for d in &report.per_domain {
        match d.accuracy {
            Some(a) => println!("  domain {}: {a:.4} ({} rows)", d.domain, d.n),
            None => println!("  domain {}: no held-out rows", d.domain),
        }
    }
    Ok(())
}

fn pseudo_label_cmd(classifier: &Path, data: &Path, out: &Path) -> Result<()> {
    let clf = classifier_from_checkpoint(&load_checkpoint(classifier)?)?;
    let ds = load_data(data)?;
    check_schema(&clf.schema, &ds.schema, "classifier")?;
    let (x_d, _) = partition(&ds);
    let state = GaussianWeightState::new(ds.schema.n_domains(), 0.0)?;
    let records = pseudo_label(&clf, &ds, &x_d, &state)?;
    let file = fs::File::create(out).with_context(|| format!("writing {}", out.display()))?;
    write_pseudo(&records, BufWriter::new(file))?;
    println!("labelled {} dominant-domain rows", records.len());
    Ok(())
}

fn write_metrics(path: &Path, trainer: &Trainer) -> Result<()> {
    let mut out = BufWriter::new(
        fs::File::create(path).with_context(|| format!("writing {}", path.display()))?,
    );
    for s in &trainer.history {
        for r in s.metrics_records() {
            write_metrics_line(&mut out, &r)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn train_cmd(
    data: &Path,
    config: &Path,
    classifier: Option<&Path>,
    pseudo: Option<&Path>,
    out: &Path,
    stop_after: Option<usize>,
) -> Result<()> {
    let mut cfg = config::train_config(config)?;
    let ds = load_data(data)?;
    let clf = match classifier {
        Some(p) => {
            let c = classifier_from_checkpoint(&load_checkpoint(p)?)?;
            check_schema(&c.schema, &ds.schema, "classifier")?;
            Some(c)
        }
        None => {
            info!("no classifier given: training the backbone alone");
            cfg = cfg.backbone();
            None
        }
    };
    let records = match pseudo {
        Some(p) => {
            let state = GaussianWeightState::new(ds.schema.n_domains(), cfg.ema_momentum)?;
            let file = fs::File::open(p).with_context(|| format!("reading {}", p.display()))?;
            Some(
                read_pseudo(file, ds.schema.n_domains(), &state)
                    .with_context(|| format!("in {}", p.display()))?,
            )
        }
        None => None,
    };
    let clf_summary = clf.as_ref().map(|c| ClassifierSummary {
        accuracy: None,
        param_hash: c.param_hash(),
    });
    let (train_data, clf, _) = prepare(&ds, &cfg, clf, records)?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let state_path = out.join(STATE_CKPT);
    let mut trainer = if state_path.exists() {
        let t = Trainer::from_checkpoint(&load_checkpoint(&state_path)?)?;
        if t.config != cfg {
            return Err(ssctl::Error::config(
                "config",
                format!(
                    "{} was written with a different configuration",
                    state_path.display()
                ),
            )
            .into());
        }
        info!("resuming at epoch {}", t.epoch);
        t
    } else {
        Trainer::new(cfg.clone(), &ds.schema)?
    };
    let metrics_path = out.join(METRICS_JSONL);
    let until = stop_after.unwrap_or(cfg.epochs);
    trainer.fit(&train_data, until, |t, s| {
        save_checkpoint(&t.to_checkpoint()?, &state_path)
            .map_err(|e| ssctl::Error::Internal(format!("{e:#}")))?;
        write_metrics(&metrics_path, t).map_err(|e| ssctl::Error::Internal(format!("{e:#}")))?;
        println!(
            "epoch {}: loss {:.6}, validation sparse-domain AUC {:?}",
            s.epoch, s.loss, s.val_score
        );
        Ok(())
    })?;
    write_metrics(&metrics_path, &trainer)?;

    let mut provenance = json!({
        "config": cfg,
        "lambda": cfg.lambda,
        "mode": if clf.is_some() { "full" } else { "backbone" },
        "epochs_completed": trainer.epoch,
        "data_sha256": sha256_file(&data.join(DATA_CSV))?,
        "classifier_hash": clf.as_ref().map(|c| c.param_hash()),
        "pseudo_sha256": pseudo.map(sha256_file).transpose()?,
        "pseudo_rows": train_data.pseudo.len(),
    });
    if trainer.epoch < cfg.epochs {
        provenance["stopped_early"] = json!(true);
        write_json(&out.join(PROVENANCE_JSON), &provenance)?;
        println!(
            "stopped after {} of {} epochs; rerun to resume",
            trainer.epoch, cfg.epochs
        );
        return Ok(());
    }
    write_json(&out.join(PROVENANCE_JSON), &provenance)?;
    save_checkpoint(
        &model_to_checkpoint(trainer.best_model(), &cfg, clf.as_ref())?,
        &out.join(MODEL_CKPT),
    )?;
    let report = MetricsReport::from_trainer(&trainer, clf_summary);
    write_json(&out.join(REPORT_JSON), &report)?;
    println!("best epoch {:?}", report.best_epoch);
    for d in &report.domains {
        println!(
            "  domain {}: test AUC {} ({} rows)",
            d.domain,
            fmt_opt(d.auc),
            d.n
        );
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}"))
}

#[derive(Serialize)]
struct EvalLine {
    domain: usize,
    n: usize,
    auc: Option<f64>,
    baseline_auc: Option<f64>,
    rimp: Option<f64>,
}

fn eval_cmd(model: &Path, data: &Path, report: &Path, baseline: Option<&Path>) -> Result<()> {
    let (model, meta, clf) = model_from_checkpoint(&load_checkpoint(model)?)?;
    let ds = load_data(data)?;
    check_schema(&meta.schema, &ds.schema, "model")?;
    let base = match baseline {
        Some(p) => {
            let file = fs::File::open(p).with_context(|| format!("reading {}", p.display()))?;
            read_baseline(file).with_context(|| format!("in {}", p.display()))?
        }
        None => Vec::new(),
    };
    let (_, _, test) = split(&ds, &meta.train.split)?;
    let soft = match (&clf, model.config.sddn) {
        (Some(c), true) => Some(soft_partition(c, &ds)?),
        _ => None,
    };
    let evals = evaluate(&model, &ds, &test, soft.as_ref())?;
    let mut out = BufWriter::new(
        fs::File::create(report).with_context(|| format!("writing {}", report.display()))?,
    );
    for e in evals {
        let b = base.iter().find(|(d, _)| *d == e.domain).map(|&(_, a)| a);
        let r = match (e.auc, b) {
            (Some(a), Some(b)) => Some(rimp(a, b)?),
            _ => None,
        };
        if e.auc.is_none() {
            warn!("domain {}: AUC undefined on {} test rows", e.domain, e.n);
        }
        let line = EvalLine {
            domain: e.domain,
            n: e.n,
            auc: e.auc,
            baseline_auc: b,
            rimp: r,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
        let rimp_text = r.map(|v| format!(", RImp {v:+.2}%")).unwrap_or_default();
        println!(
            "domain {}: AUC {} ({} rows){rimp_text}",
            e.domain,
            fmt_opt(e.auc),
            e.n
        );
    }
    out.flush()?;
    Ok(())
}

fn gradcheck_cmd(seed: u64, corruption: f64) -> Result<()> {
    let report = reference_gradcheck(seed, corruption)?;
    for (group, err) in &report.groups {
        println!("{group}\t{err:.3e}");
    }
    println!(
        "max relative error {:.3e} (tolerance {GRAD_TOLERANCE:e})",
        report.max_rel_err
    );
    let failing = report.failing(GRAD_TOLERANCE);
    if failing.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(failing.into_iter().map(String::from).collect()).into())
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out } => gen_data(&config, &out),
        Command::TrainClassifier { data, config, out } => {
            train_classifier_cmd(&data, &config, &out)
        }
        Command::PseudoLabel {
            classifier,
            data,
            out,
        } => pseudo_label_cmd(&classifier, &data, &out),
        Command::Train {
            data,
            config,
            classifier,
            pseudo,
            out,
            stop_after_epochs,
        } => {
            if stop_after_epochs == Some(0) {
                return Err(CliError::Usage("--stop-after-epochs must be positive".into()).into());
            }
            train_cmd(
                &data,
                &config,
                classifier.as_deref(),
                pseudo.as_deref(),
                &out,
                stop_after_epochs,
            )
        }
        Command::Eval {
            model,
            data,
            report,
            baseline,
        } => eval_cmd(&model, &data, &report, baseline.as_deref()),
        Command::Gradcheck { seed, corrupt_grad } => gradcheck_cmd(seed, corrupt_grad),
    }
}

/// 2 for usage and configuration problems, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(CliError::Usage(_)) = cause.downcast_ref::<CliError>() {
            return 2;
        }
        if let Some(ssctl::Error::Config { .. } | ssctl::Error::Json(_)) =
            cause.downcast_ref::<ssctl::Error>()
        {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
