//! `gdca-sim`: reproducible alignment experiments from the command line.
//!
//! Exit codes: 0 on success, 1 when an experiment ran but failed, 2 on usage
//! or I/O errors.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gdca::attention::{alignment_csv, alignment_pgm, Convention, Mechanism, StepOptions, WindowShape};
use gdca::eval::{self, ScoreSetup};
use gdca::gradcheck::{self, Corruption, Target};
use gdca::score::{
    expand_to_phonemes, parse_musicxml, parse_score_native, serialize_native, FrameSpec, Lexicon,
    PhonemeSequence, Score,
};
use gdca::simulate::{run_simulation, EnergyMode, SimConfig, StopRule, SynthEnergySpec};
use gdca::tokens::{
    oracle_tokens, sweep_dataset, train_encoder, DurationEncoder, DurationFeatures, TrainConfig,
    Q_MIN,
};

#[derive(Parser)]
#[command(name = "gdca-sim", version, about = "Duration-controlled alignment experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the canonical native form of a score.
    Parse {
        score: PathBuf,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Print per-phoneme transition tokens as CSV.
    Tokens {
        #[command(flatten)]
        input: ScoreInput,
        #[arg(long, value_enum, default_value = "oracle")]
        source: TokenSource,
        /// Encoder parameters written by `train-encoder`.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Decode one score and write report.json, alignment.csv and alignment.pgm.
    Simulate {
        #[command(flatten)]
        input: ScoreInput,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-time a score at several tempos and compare decoded lengths.
    Sweep {
        #[command(flatten)]
        input: ScoreInput,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, value_delimiter = ',', default_value = "60,120,180")]
        tempos: Vec<f64>,
        /// Directory for sweep.csv and one alignment CSV per tempo.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run the six-way mechanism ablation on one score.
    Compare {
        #[command(flatten)]
        input: ScoreInput,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long)]
        json: bool,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Finite-difference checks of the analytic gradients.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "all")]
        which: Which,
        /// Scale one analytic gradient entry before comparing (`index:factor`).
        #[arg(long, hide = true, value_parser = parse_corruption)]
        corrupt: Option<Corruption>,
    },
    /// Fit the duration encoder to closed-form tokens over a synthetic sweep.
    TrainEncoder {
        #[arg(long, default_value_t = 300)]
        epochs: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 16)]
        hidden: usize,
        #[arg(long)]
        out: PathBuf,
        /// Loss-history CSV; defaults to `<out>.loss.csv`.
        #[arg(long)]
        history: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Native,
    Musicxml,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TokenSource {
    Oracle,
    Encoder,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Energies,
    Encoder,
    Lattice,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum StopKind {
    LastDwell,
    Parked,
    Fixed,
}

#[derive(Args)]
struct ScoreInput {
    score: PathBuf,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Syllable-to-phoneme lexicon with duration ratios.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = 0.010)]
    frame_shift: f64,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, default_value = "gdca", value_parser = parse_from_str::<Mechanism>)]
    mechanism: Mechanism,
    /// Enable the dynamic filter (the argmax window for LA).
    #[arg(long)]
    filter: bool,
    /// Filter window width.
    #[arg(long = "L", default_value_t = gdca::attention::DEFAULT_WINDOW)]
    window: usize,
    #[arg(long, default_value = "rectangular", value_parser = parse_from_str::<WindowShape>)]
    window_shape: WindowShape,
    #[arg(long, default_value = "move", value_parser = parse_from_str::<Convention>)]
    convention: Convention,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "oracle", value_parser = parse_from_str::<EnergyMode>)]
    energy: EnergyMode,
    #[arg(long, default_value_t = 2.0)]
    sharpness: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    /// Spike schedule as `step:phoneme` pairs separated by commas.
    #[arg(long, value_delimiter = ',', value_parser = parse_spike)]
    spikes: Vec<(usize, usize)>,
    #[arg(long, default_value_t = 0.0)]
    spike_magnitude: f64,
    #[arg(long, value_enum, default_value = "last-dwell")]
    stop: StopKind,
    /// Consecutive parked steps for the dwell and parked rules.
    #[arg(long, default_value_t = 3)]
    stop_consecutive: usize,
    /// Step count for `--stop fixed`.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 10_000)]
    max_steps: usize,
}

fn parse_from_str<T: std::str::FromStr<Err = String>>(s: &str) -> Result<T, String> {
    s.parse()
}

fn parse_spike(s: &str) -> Result<(usize, usize), String> {
    let (step, phoneme) = s
        .split_once(':')
        .ok_or_else(|| format!("spike `{s}` is not step:phoneme"))?;
    let num = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("spike `{s}`: {e}"));
    Ok((num(step)?, num(phoneme)?))
}

fn parse_corruption(s: &str) -> Result<Corruption, String> {
    let (index, factor) = s
        .split_once(':')
        .ok_or_else(|| format!("corruption `{s}` is not index:factor"))?;
    Ok(Corruption {
        index: index.parse().map_err(|e| format!("{e}"))?,
        factor: factor.parse().map_err(|e| format!("{e}"))?,
    })
}

enum Failure {
    Usage(String),
    Experiment(String),
}

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Usage(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> CmdResult {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let fail = |e: std::io::Error| usage(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))
}

fn load_score(path: &Path, format: Option<Format>) -> Result<Score, Failure> {
    let text = read(path)?;
    let format = format.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some("xml" | "musicxml") => Format::Musicxml,
        _ => Format::Native,
    });
    let score = match format {
        Format::Native => parse_score_native(&text),
        Format::Musicxml => parse_musicxml(&text),
    };
    score.map_err(|e| usage(format!("{}: {e}", path.display())))
}

impl ScoreInput {
    fn frames(&self) -> Result<FrameSpec, Failure> {
        Ok(FrameSpec::new(self.frame_shift)?)
    }

    fn lexicon(&self) -> Result<Lexicon, Failure> {
        match &self.lexicon {
            Some(p) => Lexicon::parse(&read(p)?).map_err(|e| usage(format!("{}: {e}", p.display()))),
            None => Ok(Lexicon::default()),
        }
    }

    fn load(&self) -> Result<(Score, Lexicon, FrameSpec), Failure> {
        Ok((load_score(&self.score, self.format)?, self.lexicon()?, self.frames()?))
    }

    fn sequence(&self) -> Result<PhonemeSequence, Failure> {
        let (score, lexicon, frames) = self.load()?;
        let seq = expand_to_phonemes(&score, &lexicon, frames)?;
        for w in &seq.warnings {
            eprintln!(
                "warning: note {} has {} frames for {} phonemes; each phoneme gets one frame",
                w.note_index, w.budget, w.phonemes
            );
        }
        Ok(seq)
    }
}

impl SimArgs {
    fn config(&self) -> Result<SimConfig, Failure> {
        let stop = match self.stop {
            StopKind::LastDwell => StopRule::LastDwell { consecutive: self.stop_consecutive },
            StopKind::Parked => StopRule::ArgmaxParked { consecutive: self.stop_consecutive },
            StopKind::Fixed => StopRule::Fixed {
                steps: self.steps.ok_or_else(|| usage("--stop fixed needs --steps"))?,
            },
        };
        let cfg = SimConfig {
            opts: StepOptions {
                mechanism: self.mechanism,
                filter_enabled: self.filter,
                window_width: self.window,
                window_shape: self.window_shape,
                convention: self.convention,
            },
            energy: SynthEnergySpec {
                mode: self.energy,
                noise_sigma: self.noise_sigma,
                spike_magnitude: self.spike_magnitude,
                spike_schedule: self.spikes.clone(),
                sharpness: self.sharpness,
            },
            seed: self.seed,
            max_steps: self.max_steps,
            stop,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn cmd_parse(path: &Path, format: Option<Format>) -> CmdResult {
    print!("{}", serialize_native(&load_score(path, format)?));
    Ok(())
}

fn cmd_tokens(input: &ScoreInput, source: TokenSource, params: Option<&Path>) -> CmdResult {
    // Check the flag combination before touching the score.
    if source == TokenSource::Encoder && params.is_none() {
        return Err(usage("--source encoder needs --params"));
    }
    let seq = input.sequence()?;
    let tokens = match params {
        Some(p) if source == TokenSource::Encoder => {
            let enc = DurationEncoder::from_text(&read(p)?)?;
            enc.forward(&DurationFeatures::from_sequence(&seq))?
        }
        _ => oracle_tokens(&seq, Q_MIN),
    };
    print!("{}", tokens.to_csv(&seq));
    Ok(())
}

fn cmd_simulate(input: &ScoreInput, sim: &SimArgs, out: &Path) -> CmdResult {
    let cfg = sim.config()?;
    let seq = input.sequence()?;
    let q = oracle_tokens(&seq, Q_MIN);
    let res = run_simulation(&seq, &q, &cfg)?;
    let targets = seq.targets();
    let metrics = eval::run_metrics(&res, &targets).map_err(|e| usage(e.to_string()))?;
    let report = eval::sim_report_json(&res, &targets).map_err(|e| usage(e.to_string()))?;

    ensure_dir(out)?;
    write_atomic(&out.join("report.json"), report.as_bytes())?;
    write_atomic(&out.join("alignment.csv"), alignment_csv(&res.alignment).as_bytes())?;
    write_atomic(&out.join("alignment.pgm"), &alignment_pgm(&res.alignment))?;
    println!(
        "{}: stop_step {} monotonicity {:.4} duration_rel_err {:.4}",
        res.label(),
        res.stop_step,
        metrics.monotonicity_score,
        metrics.duration_rel_err
    );
    if metrics.failed {
        return Err(Failure::Experiment(format!(
            "{} failed: stopped_by {:?}, monotonicity {:.4}",
            res.label(),
            res.stopped_by,
            metrics.monotonicity_score
        )));
    }
    Ok(())
}

fn cmd_sweep(input: &ScoreInput, sim: &SimArgs, tempos: &[f64], out: Option<&Path>, jobs: usize) -> CmdResult {
    let cfg = sim.config()?;
    let (score, lexicon, frames) = input.load()?;
    let setup = ScoreSetup { score: &score, lexicon: &lexicon, frames };
    let (sweep, runs) = eval::tempo_sweep(&setup, tempos, &cfg, jobs).map_err(|e| usage(e.to_string()))?;
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_atomic(&dir.join("sweep.csv"), sweep.to_csv().as_bytes())?;
        for (row, run) in sweep.rows.iter().zip(&runs) {
            let name = format!("alignment_tempo_{}.csv", row.tempo_bpm);
            write_atomic(&dir.join(name), alignment_csv(&run.alignment).as_bytes())?;
        }
    }
    print!("{}", sweep.to_text());
    if sweep.rows.iter().any(|r| r.failed) {
        return Err(Failure::Experiment("a tempo run hit max steps".into()));
    }
    Ok(())
}

fn cmd_compare(input: &ScoreInput, sim: &SimArgs, json: bool, jobs: usize) -> CmdResult {
    let cfg = sim.config()?;
    let seq = input.sequence()?;
    let q = oracle_tokens(&seq, Q_MIN);
    let report = eval::compare_mechanisms_jobs(&seq, &q, &cfg, jobs).map_err(|e| usage(e.to_string()))?;
    if json {
        print!("{}", report.to_json());
    } else {
        print!("{}", report.to_text());
    }
    Ok(())
}

fn cmd_gradcheck(seed: u64, which: Which, corrupt: Option<Corruption>) -> CmdResult {
    let targets: Vec<Target> = match which {
        Which::Energies => vec![Target::Energies],
        Which::Encoder => vec![Target::Encoder],
        Which::Lattice => vec![Target::Lattice],
        Which::All => Target::ALL.to_vec(),
    };
    let reports: Vec<_> = targets.into_iter().map(|t| gradcheck::run(t, seed, corrupt)).collect();
    println!("{}", serde_json::to_string_pretty(&reports).expect("report serializes"));
    if let Some(bad) = reports.iter().find(|r| !r.passed) {
        return Err(Failure::Experiment(format!(
            "gradient check failed for {:?}: relative error {:e}",
            bad.target, bad.relative_error
        )));
    }
    Ok(())
}

fn cmd_train(cfg: TrainConfig, out: &Path, history: Option<&Path>) -> CmdResult {
    let data = sweep_dataset(2..=100, &[60.0, 90.0, 120.0, 150.0, 180.0], FrameSpec::default().frame_shift_s);
    let outcome = train_encoder(&data, &cfg)?;
    let history = history
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(format!("{}.loss.csv", out.display())));
    write_atomic(out, outcome.encoder.to_text().as_bytes())?;
    write_atomic(&history, outcome.loss_csv().as_bytes())?;
    let last = outcome.loss_history.last().copied().unwrap_or(f64::NAN);
    println!("trained {} epochs, final loss {last:e}", outcome.loss_history.len());
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Parse { score, format } => cmd_parse(&score, format),
        Command::Tokens { input, source, params } => cmd_tokens(&input, source, params.as_deref()),
        Command::Simulate { input, sim, out } => cmd_simulate(&input, &sim, &out),
        Command::Sweep { input, sim, tempos, out, jobs } => {
            cmd_sweep(&input, &sim, &tempos, out.as_deref(), jobs)
        }
        Command::Compare { input, sim, json, jobs } => cmd_compare(&input, &sim, json, jobs),
        Command::Gradcheck { seed, which, corrupt } => cmd_gradcheck(seed, which, corrupt),
        Command::TrainEncoder { epochs, lr, seed, batch_size, hidden, out, history } => {
            let cfg = TrainConfig {
                learning_rate: lr,
                epochs,
                batch_size,
                seed,
                hidden,
                ..Default::default()
            };
            cmd_train(cfg, &out, history.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Experiment(msg)) => {
            eprintln!("gdca-sim: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("gdca-sim: {msg}");
            ExitCode::from(2)
        }
    }
}
