use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::algos::{TrainConfig, Trainer};
use crate::envs::make_env;
use crate::error::{Error, Result};
use crate::harness::config::{apply_entries, load_config_file, RunManifest};
use crate::harness::metrics::MetricsWriter;
use crate::harness::{eval_seeds, evaluate};
use crate::nets::checkpoint::Checkpoint;
use crate::oracle::checks::run_all;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const EVAL_FILE: &str = "eval.txt";

#[derive(Parser, Debug)]
#[command(name = "msac", version, about = "Decomposed multi-agent soft actor-critic on toy cooperative games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one agent team and write manifest, metrics and checkpoint.
    ///
    /// Any configuration key can also be given as `--key=value` or `--key value`.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint.
    Eval(EvalArgs),
    /// Run the exact-enumeration and gradient checks.
    Check(CheckArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// msac, mcsac, mcac or qmix
    #[arg(long)]
    algo: Option<String>,
    /// matrix or gather
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Flat key=value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory for the report (defaults to the checkpoint's directory)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of evaluation episodes (defaults to the training setting)
    #[arg(long)]
    episodes: Option<usize>,
    /// Seed for evaluation episodes (defaults to the training seed)
    #[arg(long)]
    seed: Option<u64>,
    /// Sample actions instead of acting greedily
    #[arg(long)]
    stochastic: bool,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long, default_value_t = 200)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Keys with a dedicated flag; everything else in [`TrainConfig::KEYS`] is
/// pulled out of the argument list before clap sees it.
const DEDICATED: [&str; 4] = ["algo", "env", "seed", "episodes"];

fn split_overrides(args: Vec<OsString>) -> Result<(Vec<OsString>, Vec<(String, String)>)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter().peekable();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.to_str().and_then(|s| s.strip_prefix("--")) else {
            rest.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.replace('-', "_"), Some(v.to_string())),
            None => (flag.replace('-', "_"), None),
        };
        if !TrainConfig::KEYS.contains(&name.as_str()) || DEDICATED.contains(&name.as_str()) {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .and_then(|v| v.into_string().ok())
                .ok_or_else(|| Error::Config(format!("--{name} needs a value")))?,
        };
        overrides.push((name, value));
    }
    Ok((rest, overrides))
}

fn resolve_config(args: &TrainArgs, overrides: &[(String, String)]) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &args.config {
        load_config_file(&mut cfg, path)?;
    }
    apply_entries(&mut cfg, overrides)?;
    if let Some(a) = &args.algo {
        cfg.set("algo", a)?;
    }
    if let Some(e) = &args.env {
        cfg.set("env", e)?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.episodes {
        cfg.episodes = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(args: &TrainArgs, overrides: &[(String, String)]) -> Result<()> {
    let cfg = resolve_config(args, overrides)?;
    fs::create_dir_all(&args.out)?;
    let manifest = RunManifest::new(cfg.clone());
    fs::write(args.out.join(MANIFEST_FILE), manifest.to_text())?;
    info!("training {} on {} with seed {}", cfg.algo, cfg.env.name(), cfg.seed);

    let mut trainer = Trainer::new(cfg)?;
    let mut writer = MetricsWriter::new(BufWriter::new(File::create(args.out.join(METRICS_FILE))?))?;
    trainer.run(|m| {
        if let Some(e) = &m.eval {
            info!("episode {}: eval return {:.3}, win rate {:.2}", m.episode, e.mean_return, e.win_rate);
        }
        writer.write(m)
    })?;
    writer.finish()?;
    trainer.checkpoint().save(&args.out.join(CHECKPOINT_FILE))?;
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    if !args.checkpoint.is_file() {
        return Err(Error::Checkpoint(format!("no checkpoint at {}", args.checkpoint.display())));
    }
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let trainer = Trainer::from_checkpoint(&ckpt)?;
    let cfg = trainer.config();
    let n = args.episodes.unwrap_or(cfg.eval_episodes);
    let seed = args.seed.unwrap_or(cfg.seed);
    let round = (cfg.episodes / cfg.eval_period.max(1)) as u64;
    let mut env = make_env(cfg.env, &cfg.gather)?;
    let rec = evaluate(&trainer.policy(), env.as_mut(), &eval_seeds(seed, round, n), !args.stochastic, cfg.episodes)?;

    let dir = match &args.out {
        Some(d) => d.clone(),
        None => args.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    fs::create_dir_all(&dir)?;
    let report = format!(
        "checkpoint={}\nalgo={}\nenv={}\nseed={seed}\nepisode={}\nn_episodes={}\ngreedy={}\nmean_return={:.8e}\nwin_rate={:.8e}\nmean_length={:.8e}\n",
        args.checkpoint.display(),
        cfg.algo,
        cfg.env.name(),
        rec.episode,
        rec.n_episodes,
        rec.greedy,
        rec.mean_return,
        rec.win_rate,
        rec.mean_length,
    );
    fs::write(dir.join(EVAL_FILE), &report)?;
    print!("{report}");
    Ok(())
}

fn check(args: &CheckArgs) -> bool {
    let reports = run_all(args.instances, args.seed);
    for r in &reports {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    reports.iter().all(|r| r.passed)
}

/// Parses `args` (program name first) and runs the chosen subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let is_train = args.get(1).and_then(|a| a.to_str()) == Some("train");
    let (rest, overrides) = if is_train {
        match split_overrides(args) {
            Ok(split) => split,
            Err(e) => {
                eprintln!("error: {e}");
                return 2;
            }
        }
    } else {
        (args, Vec::new())
    };
    let cli = match Cli::try_parse_from(rest) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Train(a) => train(a, &overrides).map(|_| true),
        Command::Eval(a) => eval(a).map(|_| true),
        Command::Check(a) => Ok(check(a)),
    };
    match outcome {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::METRICS_HEADER;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn overrides_are_split_out() {
        let (rest, ov) = split_overrides(os(&[
            "msac", "train", "--algo", "qmix", "--gamma=0.9", "--hidden-dim", "16", "--out", "x",
        ]))
        .unwrap();
        assert_eq!(rest, os(&["msac", "train", "--algo", "qmix", "--out", "x"]));
        assert_eq!(ov, vec![("gamma".into(), "0.9".into()), ("hidden_dim".into(), "16".into())]);
        assert!(split_overrides(os(&["msac", "train", "--gamma"])).is_err());
    }

    #[test]
    fn cli_beats_file_beats_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        fs::write(&path, "# test\ngamma=0.5\nbatch_size=8\nseed=3\n").unwrap();
        let args = TrainArgs {
            algo: None,
            env: None,
            seed: Some(9),
            episodes: None,
            config: Some(path),
            out: dir.path().into(),
        };
        let cfg = resolve_config(&args, &[("gamma".into(), "0.7".into())]).unwrap();
        assert_eq!(cfg.gamma, 0.7);
        assert_eq!(cfg.batch_size, 8);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.learning_rate, TrainConfig::default().learning_rate);
    }

    #[test]
    fn bad_invocations_exit_nonzero() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_ne!(run(["msac", "train", "--bogus", "1", "--out", out]), 0);
        assert_ne!(run(["msac", "train", "--config", "/nonexistent/file", "--out", out]), 0);
        assert_ne!(run(["msac", "train", "--algo", "nope", "--out", out]), 0);
        assert_ne!(run(["msac", "eval", "--checkpoint", "/nonexistent/ckpt"]), 0);
        assert_ne!(run(["msac", "fly"]), 0);
    }

    fn train_matrix(out: &Path, extra: &[&str]) -> i32 {
        let out = out.to_str().unwrap();
        let mut args = vec!["msac", "train", "--algo", "msac", "--env", "matrix", "--seed", "1", "--episodes", "200", "--out", out];
        args.extend_from_slice(extra);
        run(args)
    }

    #[test]
    fn train_writes_one_row_per_episode_and_two_evals() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(train_matrix(dir.path(), &[]), 0);
        let text = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines.len(), 201);
        let evals: Vec<&str> = lines[1..].iter().copied().filter(|l| !l.ends_with(",,")).collect();
        assert_eq!(evals.len(), 2);
        assert!(evals[0].starts_with("100,") && evals[1].starts_with("200,"));
        for l in &lines[1..] {
            let alpha: f64 = l.split(',').nth(4).unwrap().parse().unwrap();
            assert!(alpha > 0.0);
        }
        assert!(dir.path().join(MANIFEST_FILE).is_file());
        assert!(dir.path().join(CHECKPOINT_FILE).is_file());
    }

    #[test]
    fn same_command_gives_identical_metrics() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        assert_eq!(train_matrix(a.path(), &["--gamma=0.9"]), 0);
        assert_eq!(train_matrix(b.path(), &["--gamma", "0.9"]), 0);
        let ma = fs::read(a.path().join(METRICS_FILE)).unwrap();
        assert_eq!(ma, fs::read(b.path().join(METRICS_FILE)).unwrap());
        let manifest = fs::read_to_string(a.path().join(MANIFEST_FILE)).unwrap();
        assert!(manifest.contains("\ngamma=0.9\n"));
    }

    #[test]
    fn eval_reloads_the_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(train_matrix(dir.path(), &[]), 0);
        let ckpt = dir.path().join(CHECKPOINT_FILE);
        assert_eq!(run(["msac", "eval", "--checkpoint", ckpt.to_str().unwrap()]), 0);
        let report = fs::read_to_string(dir.path().join(EVAL_FILE)).unwrap();
        assert!(report.contains("n_episodes=20\n"));
        assert!(report.contains("greedy=true\n"));
        // The final in-training evaluation used the same seeds and parameters.
        let metrics = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        let last = metrics.lines().last().unwrap();
        let win_rate = last.rsplit(',').next().unwrap();
        assert!(report.contains(&format!("win_rate={win_rate}\n")));
    }

    #[test]
    fn config_file_feeds_training() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, "# short qmix run\nalgo = qmix\nenv = gather\nepisodes = 5\nhidden_dim = 8\neval_period = 5\neval_episodes = 2\n").unwrap();
        let out = dir.path().join("out");
        assert_eq!(run(["msac", "train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);
        let text = fs::read_to_string(out.join(METRICS_FILE)).unwrap();
        assert_eq!(text.lines().count(), 6);
        // qmix has no actor, temperature or policy entropy.
        let row: Vec<&str> = text.lines().nth(5).unwrap().split(',').collect();
        assert_eq!((row[3], row[4], row[5]), ("", "", ""));
        assert!(!row[6].is_empty());
    }

    #[test]
    fn check_passes_on_a_correct_build() {
        assert_eq!(run(["msac", "check", "--instances", "20", "--seed", "3"]), 0);
    }
}
