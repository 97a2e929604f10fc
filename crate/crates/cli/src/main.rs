use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use argn_core::audit::{run_audit, ArgnGenerator};
use argn_core::metrics::{dcr, dcr_cdf_integral, evaluate, MixedDistanceSpec, MixedTable};
use argn_core::model::resolve_order;
use argn_core::persist::{load_model, save_model};
use argn_core::pipeline::{fit_model, RunConfig};
use argn_core::sampler::{encode_conditions, synthesize, GenerationRequest};
use argn_core::schema::{infer_schema, write_csv, RawTable};

#[derive(Parser)]
#[command(name = "argn", version, about = "Any-order autoregressive synthetic data for tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a CSV file.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sample synthetic rows from a saved model.
    Generate {
        #[arg(long)]
        model: PathBuf,
        #[arg(short = 'n')]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// Fix a column, e.g. `--condition city=Vienna`. Repeatable.
        #[arg(long = "condition", value_name = "COL=VAL")]
        conditions: Vec<String>,
        /// Generation order as a comma-separated list of columns or sub-columns.
        #[arg(long, value_delimiter = ',')]
        order: Option<Vec<String>>,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fidelity, utility and (with a holdout) DCR metrics as JSON.
    Evaluate {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        syn: PathBuf,
        #[arg(long)]
        holdout: Option<PathBuf>,
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        report: PathBuf,
        /// Optional run config for column overrides and the delimiter.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// DCR CDF comparison of train→syn against train→test; writes plot data.
    Dcr {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        syn: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long = "out-cdf")]
        out_cdf: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Membership-inference audit with shadow models.
    Audit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Attack the N rows with the highest Achilles scores.
        #[arg(long = "auto-target")]
        auto_target: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn parse_condition(s: &str) -> Result<(String, String)> {
    match s.split_once('=') {
        Some((c, v)) if !c.is_empty() => Ok((c.to_string(), v.to_string())),
        _ => bail!("condition '{s}' is not of the form column=value"),
    }
}

fn read_tables(cfg: &RunConfig, paths: &[&Path]) -> Result<Vec<RawTable>> {
    paths
        .iter()
        .map(|p| cfg.read_data(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train { data, config, out, seed } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg = cfg.with_seed(s);
            }
            let raw = cfg.read_data(&data).with_context(|| format!("reading {}", data.display()))?;
            let model = fit_model(&raw, &cfg)?;
            save_model(&model, &out).with_context(|| format!("writing {}", out.display()))?;
            log::info!(
                "trained {} epochs (best {}, validation loss {:.4}); model written to {}",
                model.meta.epochs_run,
                model.meta.best_epoch,
                model.meta.best_val_loss,
                out.display()
            );
        }
        Command::Generate { model, n, out, conditions, order, temperature, seed } => {
            let model = load_model(&model).with_context(|| format!("loading {}", model.display()))?;
            let pairs: Vec<(String, String)> = conditions.iter().map(|c| parse_condition(c)).collect::<Result<_>>()?;
            let mut req = GenerationRequest::new(n, seed);
            req.temperature = temperature;
            req.conditions = encode_conditions(&model, &pairs)?;
            if let Some(names) = order {
                req.order = Some(resolve_order(&model.sub_columns, &names)?);
            }
            let table = synthesize(&model, &req)?;
            write_csv(&table, &out, b',').with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Evaluate { real, syn, holdout, target, report, config, seed } => {
            let cfg = load_config(config.as_deref())?;
            let mut tables = read_tables(&cfg, &[&real, &syn])?;
            let syn_t = tables.pop().unwrap();
            let real_t = tables.pop().unwrap();
            let hold = match &holdout {
                Some(h) => Some(read_tables(&cfg, &[h])?.remove(0)),
                None => None,
            };
            let schema = infer_schema(&real_t, &cfg.overrides)?;
            let r = evaluate(&real_t, &syn_t, &schema, hold.as_ref(), target.as_deref(), seed)?;
            write_json(&report, &serde_json::to_value(&r)?)?;
        }
        Command::Dcr { train, syn, test, out_cdf, config } => {
            let cfg = load_config(config.as_deref())?;
            let t = read_tables(&cfg, &[&train, &syn, &test])?;
            let schema = infer_schema(&t[0], &cfg.overrides)?;
            let m: Vec<MixedTable> = t.iter().map(|x| MixedTable::from_raw(x, &schema)).collect::<Result<_, _>>()?;
            let spec = MixedDistanceSpec::default();
            let summary = dcr_cdf_integral(&dcr(&m[0], &m[1], &spec)?, &dcr(&m[0], &m[2], &spec)?)?;
            let mut w = csv::Writer::from_path(&out_cdf).with_context(|| format!("writing {}", out_cdf.display()))?;
            w.write_record(["distance", "cdf_syn", "cdf_test"])?;
            for (d, s, te) in &summary.curve {
                w.write_record([d.to_string(), s.to_string(), te.to_string()])?;
            }
            w.flush()?;
            let mut out: BTreeMap<&str, serde_json::Value> = BTreeMap::new();
            out.insert("integral", summary.integral.into());
            out.insert("q98", summary.q98.into());
            out.insert("risk", u8::from(summary.risk).into());
            writeln!(std::io::stdout(), "{}", serde_json::to_string(&out)?)?;
        }
        Command::Audit { data, config, report, auto_target, seed } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg = cfg.with_seed(s);
            }
            if let Some(n) = auto_target {
                cfg.audit.target_indices.clear();
                cfg.audit.auto_targets = n;
            }
            let raw = cfg.read_data(&data).with_context(|| format!("reading {}", data.display()))?;
            let schema = infer_schema(&raw, &cfg.overrides)?;
            let audit_cfg = cfg.audit.clone();
            let generator = ArgnGenerator { schema: schema.clone(), config: cfg };
            let r = run_audit(&raw, &schema, &generator, &audit_cfg)?;
            for s in &r.summary {
                log::info!("{:?}: AUC {:.3}, accuracy {:.3}", s.attack, s.auc, s.accuracy);
            }
            write_json(&report, &serde_json::to_value(&r)?)?;
        }
    }
    Ok(())
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("ARGN_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| format!("ARGN_THREADS must be a non-negative integer, got '{v}'"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
