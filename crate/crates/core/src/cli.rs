//! The `rar` command line: track, train, eval, gradcheck and synth.
//!
//! Exit codes: 0 success, 1 numerical or check failure, 2 usage, config or
//! I/O error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionConfig, AttentionParams};
use crate::bench::otb::GROUNDTRUTH_FILE;
use crate::bench::{
    aggregate, evaluate, read_rects, synth_sequence, write_otb_sequence, write_report, Sequence,
    SynthKind, SynthParams,
};
use crate::error::{Error, Result};
use crate::graddesc::gradcheck::{run_all, GradcheckOptions, GradcheckReport};
use crate::graddesc::{write_log, LogRow, TrainConfig, Trainer};
use crate::raft;
use crate::tracker::{track_sequence_with, TrackerConfig};

#[derive(Debug, Parser)]
#[command(name = "rar", version, about = "Attentional correlation-filter tracking toolkit")]
pub struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track one OTB sequence, or every sequence under a dataset directory.
    Track(TrackArgs),
    /// Train the attention weights on sequence pairs.
    Train(TrainArgs),
    /// Score tracking results against ground truth.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Render a synthetic sequence in OTB layout.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[arg(long)]
    pub seq: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Attention checkpoint; random weights from the config seed otherwise.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Also write every frame's response maps as a RAFT file.
    #[arg(long)]
    pub dump_responses: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// OTB sequences to sample pairs from; synthetic sequences if omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory holding `<sequence>.txt` trajectories.
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    pub size: usize,
    #[arg(long, default_value_t = 2)]
    pub channels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, hide = true, default_value_t = 0.0)]
    pub perturb: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub kind: SynthKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub length: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// The JSON configuration shared by all subcommands. Flags override the
/// matching fields.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub tracker: TrackerConfig,
    pub train: TrainConfig,
    /// Weight layout used when tracking without a checkpoint.
    pub attention: AttentionConfig,
    pub synth: SynthParams,
    /// Sequence or dataset directory.
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    /// Overrides every seed in the document when set.
    pub seed: Option<u64>,
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn load_or_default(path: Option<&PathBuf>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = cfg.seed {
            cfg.attention.seed = s;
            cfg.train.seed = s;
            cfg.train.attention.seed = s;
        }
        Ok(cfg)
    }

    /// Writes the effective configuration to `dir/config.json`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        let path = dir.join("config.json");
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&path, e))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn required(v: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    v.ok_or_else(|| Error::Config(format!("missing {what} (flag or config field)")))
}

/// A directory holding a ground-truth file is one sequence; otherwise every
/// subdirectory that holds one is.
pub fn discover_sequences(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join(GROUNDTRUTH_FILE).is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.join(GROUNDTRUTH_FILE).is_file() {
            found.push(p);
        }
    }
    if found.is_empty() {
        return Err(Error::Data(format!(
            "{}: no sequences (no {GROUNDTRUTH_FILE} found)",
            dir.display()
        )));
    }
    found.sort();
    Ok(found)
}

/// Parses `args`, runs the command and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}

/// Runs a parsed command; `Ok(1)` signals a failed check.
pub fn run(cli: Cli) -> Result<u8> {
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(j) = cli.jobs {
            if j == 0 {
                return Err(Error::Config("--jobs must be >= 1".into()));
            }
            b = b.num_threads(j);
        }
        b.build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
    };
    pool.install(|| match cli.command {
        Command::Track(a) => cmd_track(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Synth(a) => cmd_synth(a),
    })
}

fn cmd_track(a: TrackArgs) -> Result<u8> {
    let mut cfg = CliConfig::load_or_default(a.config.as_ref())?;
    if a.seq.is_some() {
        cfg.dataset = a.seq;
    }
    if a.out.is_some() {
        cfg.out = a.out;
    }
    if a.weights.is_some() {
        cfg.weights = a.weights;
    }
    let data = required(cfg.dataset.clone(), "--seq")?;
    let out = required(cfg.out.clone(), "--out")?;
    cfg.tracker.validate()?;
    let params = match &cfg.weights {
        Some(w) => AttentionParams::load(w)?.0,
        None => AttentionParams::init(&cfg.attention),
    };
    let dirs = discover_sequences(&data)?;
    cfg.echo(&out)?;
    dirs.par_iter()
        .map(|dir| {
            let seq = Sequence::open(dir)?;
            let name = seq.spec.name.clone();
            let mut maps = Vec::new();
            let traj = track_sequence_with(&seq, &cfg.tracker, &params, |_, step| {
                if a.dump_responses {
                    maps.extend(step.responses.iter().map(|r| r.plane.clone()));
                }
                Ok(())
            })?;
            traj.write(
                out.join(format!("{name}.txt")),
                out.join(format!("{name}_confidence.csv")),
            )?;
            if a.dump_responses {
                raft::write_tensors(out.join(format!("{name}_responses.raft")), &maps)?;
            }
            info!("{name}: {} frames tracked", traj.rects.len());
            Ok(())
        })
        .collect::<Result<Vec<()>>>()?;
    Ok(0)
}

fn synthetic_sources(p: &SynthParams, seed: u64) -> Result<Vec<Sequence>> {
    [SynthKind::Translate, SynthKind::Zoom, SynthKind::Static, SynthKind::Occlude]
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let (frames, spec) = synth_sequence(*k, 40, p, seed.wrapping_add(i as u64))?;
            Sequence::in_memory(frames, spec)
        })
        .collect()
}

fn cmd_train(a: TrainArgs) -> Result<u8> {
    let mut cfg = CliConfig::load_or_default(a.config.as_ref())?;
    if a.data.is_some() {
        cfg.dataset = a.data;
    }
    if a.out.is_some() {
        cfg.out = a.out;
    }
    let out = required(cfg.out.clone(), "--out")?;
    cfg.train.validate()?;
    let sources = match &cfg.dataset {
        Some(d) => discover_sequences(d)?
            .iter()
            .map(Sequence::open)
            .collect::<Result<Vec<_>>>()?,
        None => synthetic_sources(&cfg.synth, cfg.train.seed)?,
    };
    cfg.echo(&out)?;
    let mut trainer = match &a.resume {
        Some(ckpt) => Trainer::resume(cfg.train.clone(), sources, ckpt)?,
        None => Trainer::new(cfg.train.clone(), sources)?,
    };
    let log_path = out.join("log.csv");
    let mut rows: Vec<LogRow> = Vec::new();
    if a.resume.is_some() && log_path.is_file() {
        rows = read_log(&log_path)?
            .into_iter()
            .filter(|r| r.step < trainer.step_index())
            .collect();
    }
    let result = trainer.run(Some(&out));
    // keep whatever was logged even when a step fails
    let ok = match result {
        Ok(new) => {
            rows.extend(new);
            None
        }
        Err(e) => Some(e),
    };
    write_log(&log_path, &rows)?;
    if let Some(e) = ok {
        return Err(e);
    }
    if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
        println!(
            "trained {} steps: loss {:.6e} -> {:.6e}",
            rows.len(),
            first.loss,
            last.loss
        );
    }
    Ok(0)
}

/// Reads a log written by [`write_log`].
pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let bad = || Error::Parse(format!("{}: line {}: malformed log row", path.display(), i + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        rows.push(LogRow {
            step: f[0].parse().map_err(|_| bad())?,
            lr: num(f[1])?,
            loss: num(f[2])?,
            grad_norm: num(f[3])?,
        });
    }
    Ok(rows)
}

fn cmd_eval(a: EvalArgs) -> Result<u8> {
    let dirs = discover_sequences(&a.dataset)?;
    let results = dirs
        .par_iter()
        .map(|dir| {
            let seq = Sequence::open(dir)?;
            let path = a.results.join(format!("{}.txt", seq.spec.name));
            if !path.is_file() {
                return Err(Error::Data(format!(
                    "missing results for {}: {}",
                    seq.spec.name,
                    path.display()
                )));
            }
            let (rects, _) = read_rects(&path)?;
            evaluate(&rects, &seq.spec)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = aggregate(results);
    write_report(&a.out, &report)?;
    CliConfig {
        dataset: Some(a.dataset.clone()),
        out: Some(a.out.clone()),
        ..CliConfig::default()
    }
    .echo(&a.out)?;
    println!(
        "{} sequences: DP@20 {:.4}  AUC {:.4}",
        report.overall.sequences, report.overall.dp20, report.overall.auc
    );
    Ok(0)
}

fn print_gradcheck(report: &GradcheckReport) {
    println!("{:<18} {:<36} {:>6} {:>11} {:>8}  result", "module", "group", "n", "rel. error", "tol");
    for g in &report.groups {
        println!(
            "{:<18} {:<36} {:>6} {:>11.3e} {:>8.0e}  {}",
            g.module,
            g.name,
            g.count,
            g.rel_error,
            g.tolerance,
            if g.passed() { "pass" } else { "FAIL" }
        );
    }
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<u8> {
    if !a.size.is_power_of_two() || a.size < 4 || a.size > 16 {
        return Err(Error::Config(format!(
            "--size must be a power of two in 4..=16, got {}",
            a.size
        )));
    }
    if a.channels == 0 {
        return Err(Error::Config("--channels must be >= 1".into()));
    }
    let report = run_all(&GradcheckOptions {
        seed: a.seed,
        size: a.size,
        channels: a.channels,
        perturb: a.perturb,
        ..GradcheckOptions::default()
    })?;
    println!(
        "gradcheck: size {} channels {} seed {}",
        a.size, a.channels, a.seed
    );
    print_gradcheck(&report);
    let failed = report.groups.iter().filter(|g| !g.passed()).count();
    if failed > 0 {
        println!("{failed} of {} groups failed", report.groups.len());
        return Ok(1);
    }
    println!("all {} groups passed", report.groups.len());
    Ok(0)
}

fn cmd_synth(a: SynthArgs) -> Result<u8> {
    let mut cfg = CliConfig::load_or_default(a.config.as_ref())?;
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    cfg.seed = Some(seed);
    cfg.out = Some(a.out.clone());
    let (frames, mut spec) = synth_sequence(a.kind, a.length, &cfg.synth, seed)?;
    spec.name = a
        .out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| a.kind.name().into());
    write_otb_sequence(&a.out, &frames, &spec)?;
    cfg.echo(&a.out)?;
    println!("{} frames of {} written to {}", a.length, a.kind.name(), a.out.display());
    Ok(0)
}
