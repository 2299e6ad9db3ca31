//! Command line front end. Every command resolves a [`RunConfig`], writes its
//! outputs into a fresh run directory and finishes with `manifest.txt`, from
//! which `replay` can re-execute it.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::baselines::{default_threshold_grids, default_x0_grid, optimize_mnd_x0, optimize_thresholds};
use crate::bench::{
    best_of_seeds, boundary_grid, evaluate, sweep_with, time_trace, write_sweep_csv, write_trace_csv,
    EvalReport, PolicySpec, SweepPoint,
};
use crate::config::{manifest_command, parse_pairs, BaselineChoice, RunConfig};
use crate::error::{Error, Result};
use crate::physics::RatchetParams;
use crate::policy::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::ppo::{train, TrainSpec, METRICS_HEADER};

pub const MANIFEST: &str = "manifest.txt";
/// Environment fallback for `--threads`.
pub const THREADS_ENV: &str = "RATCHET_THREADS";

#[derive(Parser, Debug)]
#[command(name = "ratchet", version, about = "Feedback control of a collective flashing ratchet")]
pub struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Evaluate a baseline (or a checkpoint) on an ensemble.
    Simulate(RunArgs),
    /// Train policy and value networks with PPO.
    Train(RunArgs),
    /// Evaluate a trained checkpoint.
    Eval(RunArgs),
    /// Evaluate one policy over a grid of particle counts and delays.
    Sweep(RunArgs),
    /// Tabulate p_on over one- or two-particle configurations.
    Boundary(RunArgs),
    /// Record the decisions of one deterministic rollout.
    Trace(RunArgs),
    /// Pick the best of several training runs by evaluated current.
    BestOf {
        /// Training run directories (each holding best.ckpt, directly or in
        /// per-seed subdirectories).
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Re-run a finished run from its manifest and compare the outputs.
    Replay {
        /// Run directory or manifest file.
        source: PathBuf,
        /// Directory for the new run.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// Config file of key=value lines; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory; must not exist yet.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Any config key, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long)]
    pub tau: Option<String>,
    #[arg(long)]
    pub potential: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub duration: Option<String>,
    #[arg(long)]
    pub ensemble: Option<String>,
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<String>,
    #[arg(long = "n-list")]
    pub n_list: Option<String>,
    #[arg(long = "tau-list")]
    pub tau_list: Option<String>,
    #[arg(long)]
    pub resolution: Option<String>,
    #[arg(long = "t-on")]
    pub t_on: Option<String>,
    #[arg(long = "t-off")]
    pub t_off: Option<String>,
    #[arg(long = "u-on")]
    pub u_on: Option<String>,
    #[arg(long = "u-off")]
    pub u_off: Option<String>,
    #[arg(long)]
    pub x0: Option<String>,
}

impl RunArgs {
    /// Flags as config pairs, in command line precedence order.
    fn pairs(&self) -> Result<Vec<(String, String)>> {
        let named = [
            ("policy", &self.policy),
            ("n", &self.n),
            ("tau", &self.tau),
            ("potential", &self.potential),
            ("seed", &self.seed),
            ("seeds", &self.seeds),
            ("duration", &self.duration),
            ("ensemble", &self.ensemble),
            ("arch", &self.arch),
            ("epochs", &self.epochs),
            ("checkpoint", &self.checkpoint),
            ("n_list", &self.n_list),
            ("tau_list", &self.tau_list),
            ("resolution", &self.resolution),
            ("t_on", &self.t_on),
            ("t_off", &self.t_off),
            ("u_on", &self.u_on),
            ("u_off", &self.u_off),
            ("x0", &self.x0),
        ];
        let mut out = Vec::new();
        for s in &self.set {
            let (k, v) =
                s.split_once('=').ok_or_else(|| Error::config(s.clone(), "--set expects KEY=VALUE"))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        for (k, v) in named {
            if let Some(v) = v {
                out.push((k.to_string(), v.clone()));
            }
        }
        Ok(out)
    }

    fn resolve(&self, extra: &[(String, String)]) -> Result<RunConfig> {
        let file = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                parse_pairs(&text)?
            }
            None => Vec::new(),
        };
        let mut flags = self.pairs()?;
        flags.extend_from_slice(extra);
        RunConfig::resolve(&file, &flags)
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<PathBuf>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::config("arguments", e.to_string()))?;
    run(cli)
}

/// Runs a parsed command; returns the run directory.
pub fn run(cli: Cli) -> Result<PathBuf> {
    let threads = init_threads(cli.threads)?;
    match cli.command {
        Command::Simulate(a) => execute("simulate", &a, &[], threads),
        Command::Train(a) => execute("train", &a, &[], threads),
        Command::Eval(a) => execute("eval", &a, &[("policy".into(), "network".into())], threads),
        Command::Sweep(a) => execute("sweep", &a, &[], threads),
        Command::Boundary(a) => execute("boundary", &a, &[], threads),
        Command::Trace(a) => execute("trace", &a, &[], threads),
        Command::BestOf { runs, args } => {
            let joined = runs.iter().map(|p| p.to_string_lossy().into_owned()).collect::<Vec<_>>().join(",");
            execute("best-of", &args, &[("runs".into(), joined)], threads)
        }
        Command::Replay { source, out } => replay(&source, out, threads),
    }
}

/// Sizes the global worker pool once per process; later calls keep the first
/// pool.
fn init_threads(flag: Option<usize>) -> Result<usize> {
    let requested = match flag {
        Some(t) => Some(t),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim().parse().map_err(|_| Error::config(THREADS_ENV, format!("cannot parse {v:?}")))?,
            ),
            Err(_) => None,
        },
    };
    if requested == Some(0) {
        return Err(Error::config("threads", "must be >= 1"));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = requested {
        builder = builder.num_threads(t);
    }
    // an already initialized pool is not an error: results do not depend on it
    let _ = builder.build_global();
    Ok(rayon::current_num_threads())
}

fn execute(command: &str, args: &RunArgs, extra: &[(String, String)], threads: usize) -> Result<PathBuf> {
    let cfg = args.resolve(extra)?;
    let dir = fresh_run_dir(args.out.as_deref(), command)?;
    run_command(command, &cfg, &dir, threads)?;
    Ok(dir)
}

fn run_command(command: &str, cfg: &RunConfig, dir: &Path, threads: usize) -> Result<()> {
    let start = Instant::now();
    let notes = match command {
        "simulate" | "eval" => cmd_simulate(cfg, dir)?,
        "train" => cmd_train(cfg, dir)?,
        "sweep" => cmd_sweep(cfg, dir)?,
        "boundary" => cmd_boundary(cfg, dir)?,
        "trace" => cmd_trace(cfg, dir)?,
        "best-of" => cmd_best_of(cfg, dir)?,
        other => return Err(Error::config("command", format!("unknown command {other:?}"))),
    };
    let mut comments = vec![
        ("version", env!("CARGO_PKG_VERSION").to_string()),
        ("threads", threads.to_string()),
        ("wall_time_s", format!("{:.3}", start.elapsed().as_secs_f64())),
    ];
    comments.extend(notes.iter().map(|(k, v)| (k.as_str(), v.clone())));
    let text = cfg.to_manifest(command, &comments);
    write_file(&dir.join(MANIFEST), text.as_bytes())?;
    println!("run directory: {}", dir.display());
    Ok(())
}

/// Run directories are never reused: an explicit `--out` must not exist, and
/// the default picks the first free `runs/<command>-NNN`.
fn fresh_run_dir(out: Option<&Path>, command: &str) -> Result<PathBuf> {
    let dir = match out {
        Some(p) => {
            if p.exists() {
                return Err(Error::config(
                    "out",
                    format!("{} already exists; runs are immutable, pick a new directory", p.display()),
                ));
            }
            p.to_path_buf()
        }
        None => (1..)
            .map(|k| PathBuf::from("runs").join(format!("{command}-{k:03}")))
            .find(|p| !p.exists())
            .expect("unbounded search"),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

type Notes = Vec<(String, String)>;

/// Policy named by the config at one `(n, tau)`, running baseline searches
/// when parameters are `auto`.
fn resolve_policy(
    cfg: &RunConfig,
    n: usize,
    tau: f64,
    params: &RatchetParams,
    notes: &mut Notes,
) -> Result<(PolicySpec, Option<Checkpoint>)> {
    let tag = |key: &str| format!("resolved_{key}[n={n},tau={tau}]");
    Ok(match cfg.baseline()? {
        BaselineChoice::Fixed(spec) => (spec, None),
        BaselineChoice::SearchX0 => {
            let (x0, current) = optimize_mnd_x0(n, tau, params, &default_x0_grid(), &cfg.search_budget()?)?;
            notes.push((tag("x0"), format!("{x0} (search current {current})")));
            (PolicySpec::Mnd { x0 }, None)
        }
        BaselineChoice::SearchThresholds => {
            let (on, off) = default_threshold_grids();
            let ((u_on, u_off), current) =
                optimize_thresholds(n, tau, params, &on, &off, &cfg.search_budget()?)?;
            notes.push((tag("u_on/u_off"), format!("{u_on}/{u_off} (search current {current})")));
            (PolicySpec::Threshold { u_on, u_off }, None)
        }
        BaselineChoice::Network => {
            let path = cfg
                .checkpoint()
                .ok_or_else(|| Error::config("checkpoint", "a network policy needs a checkpoint"))?;
            let ck = load_checkpoint(&path)?;
            ck.check_compatible(n, tau, params)?;
            (PolicySpec::network(ck.policy.clone()), Some(ck))
        }
    })
}

fn print_report(r: &EvalReport) {
    println!(
        "{} N={} tau={}: current {:.4} ± {:.4} (std {:.4}, ensemble {})",
        r.policy,
        r.n,
        r.tau,
        r.current_mean,
        r.std_error(),
        r.current_std,
        r.ensemble
    );
}

fn cmd_simulate(cfg: &RunConfig, dir: &Path) -> Result<Notes> {
    let mut notes = Notes::new();
    let (n, tau, params) = (cfg.n()?, cfg.tau()?, cfg.params()?);
    let (spec, _) = resolve_policy(cfg, n, tau, &params, &mut notes)?;
    let report = evaluate(&spec, n, tau, &params, &cfg.budget()?)?;
    print_report(&report);
    let path = dir.join("report.csv");
    let mut w = create(&path)?;
    write_sweep_csv(std::slice::from_ref(&report), &mut w).map_err(io_at(&path))?;
    w.flush().map_err(io_at(&path))?;
    let path = dir.join("currents.csv");
    let mut w = create(&path)?;
    writeln!(w, "member,current").map_err(io_at(&path))?;
    for (m, c) in report.currents.iter().enumerate() {
        writeln!(w, "{m},{c}").map_err(io_at(&path))?;
    }
    w.flush().map_err(io_at(&path))?;
    Ok(notes)
}

fn cmd_sweep(cfg: &RunConfig, dir: &Path) -> Result<Notes> {
    let mut notes = Notes::new();
    let params = cfg.params()?;
    let ns = cfg.n_list()?.unwrap_or(vec![cfg.n()?]);
    let taus = cfg.tau_list()?.unwrap_or(vec![cfg.tau()?]);
    let points: Vec<SweepPoint> =
        ns.iter().flat_map(|&n| taus.iter().map(move |&tau| SweepPoint { n, tau })).collect();
    let reports = sweep_with(&points, &cfg.budget()?, |p, budget| {
        let (spec, _) = resolve_policy(cfg, p.n, p.tau, &params, &mut notes)?;
        let r = evaluate(&spec, p.n, p.tau, &params, budget)?;
        print_report(&r);
        Ok(r)
    })?;
    let path = dir.join("sweep.csv");
    let mut w = create(&path)?;
    write_sweep_csv(&reports, &mut w).map_err(io_at(&path))?;
    w.flush().map_err(io_at(&path))?;
    Ok(notes)
}

fn cmd_boundary(cfg: &RunConfig, dir: &Path) -> Result<Notes> {
    let mut notes = Notes::new();
    let (n, params) = (cfg.n()?, cfg.params()?);
    let (spec, _) = resolve_policy(cfg, n, cfg.tau()?, &params, &mut notes)?;
    let grid = boundary_grid(&spec, n, cfg.resolution()?, &params)?;
    if n == 2 {
        println!("transpose asymmetry: {:e}", grid.transpose_asymmetry());
        notes.push(("transpose_asymmetry".into(), format!("{:e}", grid.transpose_asymmetry())));
    }
    let path = dir.join("boundary.csv");
    let mut w = create(&path)?;
    grid.write_csv(&mut w).map_err(io_at(&path))?;
    w.flush().map_err(io_at(&path))?;
    Ok(notes)
}

fn cmd_trace(cfg: &RunConfig, dir: &Path) -> Result<Notes> {
    let mut notes = Notes::new();
    let (n, tau, params) = (cfg.n()?, cfg.tau()?, cfg.params()?);
    let (spec, ck) = resolve_policy(cfg, n, tau, &params, &mut notes)?;
    let value = ck.as_ref().and_then(|c| c.value.as_ref());
    let trace = time_trace(&spec, value, n, tau, &params, cfg.get("duration")?, cfg.seed()?)?;
    let on = trace.iter().filter(|p| p.alpha.is_on()).count();
    println!("{} steps, potential on for {on}", trace.len());
    let path = dir.join("trace.csv");
    let mut w = create(&path)?;
    write_trace_csv(&trace, &mut w).map_err(io_at(&path))?;
    w.flush().map_err(io_at(&path))?;
    Ok(notes)
}

fn cmd_train(cfg: &RunConfig, dir: &Path) -> Result<Notes> {
    let seeds = cfg.seeds()?;
    let base = cfg.seed()?;
    let spec =
        TrainSpec { arch: cfg.arch()?, tau: cfg.tau()?, params: cfg.params()?, cfg: cfg.ppo()?, seed: base };
    for k in 0..seeds as u64 {
        let seed = base.wrapping_add(k);
        let run_dir = if seeds == 1 {
            dir.to_path_buf()
        } else {
            let d = dir.join(format!("seed-{seed}"));
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
            d
        };
        train_one(&TrainSpec { seed, ..spec }, &run_dir)?;
    }
    Ok(Notes::new())
}

fn train_one(spec: &TrainSpec, dir: &Path) -> Result<()> {
    let path = dir.join("metrics.csv");
    let mut w = create(&path)?;
    writeln!(w, "{METRICS_HEADER}").map_err(io_at(&path))?;
    w.flush().map_err(io_at(&path))?;
    let outcome = train(spec, |m| {
        m.write_csv_row(&mut w).map_err(io_at(&path))?;
        // flushed per epoch so long runs can be followed
        w.flush().map_err(io_at(&path))?;
        println!(
            "seed {} epoch {}: current estimate {:.4}, {} policy steps, KL {:.4}, value MSE {:.3e}",
            spec.seed, m.epoch, m.mean_current_estimate, m.policy_steps, m.kld_at_stop, m.value_mse
        );
        Ok(())
    })?;
    save_checkpoint(&outcome.best, &dir.join("best.ckpt"))?;
    save_checkpoint(&outcome.last, &dir.join("last.ckpt"))?;
    Ok(())
}

/// `best.ckpt` files in each run directory or its immediate subdirectories,
/// in sorted order.
fn find_checkpoints(runs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    for run in runs {
        let direct = run.join("best.ckpt");
        if direct.is_file() {
            found.push(direct);
            continue;
        }
        let mut subs: Vec<PathBuf> = fs::read_dir(run)
            .map_err(|e| Error::io(run, e))?
            .filter_map(|e| e.ok().map(|e| e.path().join("best.ckpt")))
            .filter(|p| p.is_file())
            .collect();
        if subs.is_empty() {
            return Err(Error::config("runs", format!("no best.ckpt under {}", run.display())));
        }
        subs.sort();
        found.extend(subs);
    }
    Ok(found)
}

fn cmd_best_of(cfg: &RunConfig, dir: &Path) -> Result<Notes> {
    let runs = cfg.runs().ok_or_else(|| Error::config("runs", "no run directories given"))?;
    let paths = find_checkpoints(&runs)?;
    let cks = paths.iter().map(|p| load_checkpoint(p)).collect::<Result<Vec<_>>>()?;
    let (n, tau, params) = (cfg.n()?, cfg.tau()?, cfg.params()?);
    let (best, reports) = best_of_seeds(&cks, n, tau, &params, &cfg.budget()?)?;
    let path = dir.join("best_of.csv");
    let mut w = create(&path)?;
    writeln!(w, "checkpoint,current,current_std,ensemble,selected").map_err(io_at(&path))?;
    for (i, (p, r)) in paths.iter().zip(&reports).enumerate() {
        print_report(r);
        writeln!(
            w,
            "{},{},{},{},{}",
            p.display(),
            r.current_mean,
            r.current_std,
            r.ensemble,
            u8::from(i == best)
        )
        .map_err(io_at(&path))?;
    }
    w.flush().map_err(io_at(&path))?;
    save_checkpoint(&cks[best], &dir.join("selected.ckpt"))?;
    println!("selected {}", paths[best].display());
    Ok(vec![("selected".into(), paths[best].display().to_string())])
}

/// Columns excluded when comparing a replay: wall-clock timings.
const VOLATILE_COLUMNS: [&str; 1] = ["wall_time_s"];

fn replay(source: &Path, out: Option<PathBuf>, threads: usize) -> Result<PathBuf> {
    let (src_dir, manifest) = if source.is_dir() {
        (source.to_path_buf(), source.join(MANIFEST))
    } else {
        (source.parent().unwrap_or(Path::new(".")).to_path_buf(), source.to_path_buf())
    };
    let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let command = manifest_command(&text)
        .ok_or_else(|| Error::config("command", format!("{} has no command line", manifest.display())))?;
    let cfg = RunConfig::from_text(&text)?;
    let default_out = {
        let name = src_dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        src_dir.with_file_name(format!("{name}-replay"))
    };
    let dir = fresh_run_dir(Some(out.as_deref().unwrap_or(&default_out)), &command)?;
    run_command(&command, &cfg, &dir, threads)?;
    let diffs = compare_runs(&src_dir, &dir)?;
    if diffs.is_empty() {
        println!("replay matches {}", src_dir.display());
        Ok(dir)
    } else {
        Err(Error::Incompatible(format!("replay differs in: {}", diffs.join(", "))))
    }
}

/// Relative paths of output files whose contents differ between two runs,
/// ignoring the manifest and timing columns.
pub fn compare_runs(a: &Path, b: &Path) -> Result<Vec<String>> {
    let mut files = Vec::new();
    collect_files(a, a, &mut files)?;
    collect_files(b, b, &mut files)?;
    files.sort();
    files.dedup();
    let mut diffs = Vec::new();
    for rel in files.iter().filter(|f| f.as_str() != MANIFEST) {
        let (pa, pb) = (a.join(rel), b.join(rel));
        let same = match (fs::read_to_string(&pa), fs::read_to_string(&pb)) {
            (Ok(x), Ok(y)) => strip_volatile(&x) == strip_volatile(&y),
            _ => false,
        };
        if !same {
            diffs.push(rel.clone());
        }
    }
    Ok(diffs)
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if let Ok(rel) = path.strip_prefix(root) {
            out.push(rel.to_string_lossy().into_owned());
        }
    }
    Ok(())
}

/// Drops volatile CSV columns, keyed by the header line.
fn strip_volatile(text: &str) -> String {
    let mut lines = text.lines();
    let Some(header) = lines.next() else { return String::new() };
    let drop: Vec<usize> =
        header.split(',').enumerate().filter(|(_, h)| VOLATILE_COLUMNS.contains(h)).map(|(i, _)| i).collect();
    if drop.is_empty() {
        return text.to_string();
    }
    std::iter::once(header)
        .chain(lines)
        .map(|l| {
            l.split(',')
                .enumerate()
                .filter(|(i, _)| !drop.contains(i))
                .map(|(_, f)| f)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volatile_columns_are_ignored() {
        let a = "epoch,mean_reward,wall_time_s\n0,0.5,1.25\n1,0.6,2.5\n";
        let b = "epoch,mean_reward,wall_time_s\n0,0.5,9.0\n1,0.6,11.0\n";
        assert_eq!(strip_volatile(a), strip_volatile(b));
        let c = "epoch,mean_reward,wall_time_s\n0,0.5,1.25\n1,0.7,2.5\n";
        assert_ne!(strip_volatile(a), strip_volatile(c));
        assert_eq!(strip_volatile("x,y\n1,2\n"), "x,y\n1,2\n");
    }

    #[test]
    fn flags_become_config_pairs() {
        let args = RunArgs {
            n: Some("4".into()),
            set: vec!["T=10".into(), "gamma = 0.9".into()],
            ..RunArgs::default()
        };
        let pairs = args.pairs().unwrap();
        assert!(pairs.contains(&("n".into(), "4".into())));
        assert!(pairs.contains(&("gamma".into(), "0.9".into())));
        let bad = RunArgs { set: vec!["novalue".into()], ..RunArgs::default() };
        assert!(bad.pairs().is_err());
    }

    #[test]
    fn explicit_out_must_be_new() {
        let tmp = tempfile::tempdir().unwrap();
        let err = fresh_run_dir(Some(tmp.path()), "simulate").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "out"));
        let fresh = tmp.path().join("a");
        assert_eq!(fresh_run_dir(Some(&fresh), "simulate").unwrap(), fresh);
        assert!(fresh.is_dir());
    }
}
