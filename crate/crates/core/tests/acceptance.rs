//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::fs;
use std::time::{Duration, Instant};

use msac::algos::{train, TrainConfig, Variant};
use msac::envs::EnvKind;
use msac::harness::{run, METRICS_FILE};
use msac::oracle::checks::{
    alpha_dynamics, counterfactual_baseline, entropy_identities, epsilon_endpoints, expectation_identity,
    gradient_oracle, monotonicity, reward_standardization, variant_wiring, CheckReport,
};

const SEED: u64 = 20;

const MATRIX_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const MATRIX_EPISODES: usize = 5000;

const GATHER_SEEDS: [u64; 3] = [1, 2, 3];
const GATHER_EPISODES: usize = 2000;
const GATHER_HIDDEN: usize = 32;

struct Outcome {
    passed: bool,
    detail: String,
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut out = f();
    let took = start.elapsed();
    out.detail = format!("{} [{:.1}s]", out.detail, took.as_secs_f64());
    if let Some(limit) = limit {
        if took > limit {
            out.passed = false;
            out.detail.push_str(&format!(" exceeds {}s", limit.as_secs()));
        }
    }
    out
}

fn from_report(r: CheckReport) -> Outcome {
    Outcome {
        passed: r.passed,
        detail: r.detail,
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite win rates"));
    v[v.len() / 2]
}

fn final_win_rate(cfg: TrainConfig) -> Result<f64, String> {
    let (_, records) = train(cfg).map_err(|e| e.to_string())?;
    records
        .iter()
        .rev()
        .find_map(|r| r.eval.as_ref().map(|e| e.win_rate))
        .ok_or_else(|| "no evaluation recorded".to_string())
}

fn matrix_learning() -> Outcome {
    let mut rates = Vec::new();
    let mut slow = false;
    for seed in MATRIX_SEEDS {
        let mut cfg = TrainConfig::default();
        cfg.algo = Variant::Msac;
        cfg.env = EnvKind::Matrix;
        cfg.seed = seed;
        cfg.episodes = MATRIX_EPISODES;
        let start = Instant::now();
        match final_win_rate(cfg) {
            Ok(r) => rates.push(r),
            Err(e) => {
                return Outcome {
                    passed: false,
                    detail: format!("seed {seed}: {e}"),
                }
            }
        }
        slow |= start.elapsed() > Duration::from_secs(300);
    }
    let good = rates.iter().filter(|&&r| r >= 0.95).count();
    Outcome {
        passed: good >= 4 && !slow,
        detail: format!("final greedy (0,0) rates {rates:?}; {good}/5 seeds at >= 0.95"),
    }
}

fn gather_comparison() -> Outcome {
    let mut per_algo = Vec::new();
    for algo in [Variant::Msac, Variant::Mcac] {
        let mut rates = Vec::new();
        for seed in GATHER_SEEDS {
            let mut cfg = TrainConfig::default();
            cfg.algo = algo;
            cfg.env = EnvKind::Gather;
            cfg.seed = seed;
            cfg.episodes = GATHER_EPISODES;
            cfg.hidden_dim = GATHER_HIDDEN;
            match final_win_rate(cfg) {
                Ok(r) => rates.push(r),
                Err(e) => {
                    return Outcome {
                        passed: false,
                        detail: format!("{algo} seed {seed}: {e}"),
                    }
                }
            }
        }
        per_algo.push(rates);
    }
    let (msac, mcac) = (median(per_algo[0].clone()), median(per_algo[1].clone()));
    Outcome {
        passed: msac >= mcac,
        detail: format!(
            "median final win rate msac {msac:.2} {:?} vs mcac {mcac:.2} {:?} after {GATHER_EPISODES} episodes",
            per_algo[0], per_algo[1]
        ),
    }
}

fn determinism() -> Outcome {
    let run_once = |args: &[&str]| -> Result<Vec<u8>, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let out = dir.path().to_str().ok_or("non-utf8 temp path")?.to_string();
        let mut argv = vec!["msac", "train"];
        argv.extend_from_slice(args);
        argv.extend_from_slice(&["--out", &out]);
        if run(argv) != 0 {
            return Err(format!("train {args:?} failed"));
        }
        fs::read(dir.path().join(METRICS_FILE)).map_err(|e| e.to_string())
    };
    let cases: [&[&str]; 3] = [
        &["--algo", "msac", "--env", "matrix", "--seed", "1", "--episodes", "200"],
        &["--algo", "mcsac", "--env", "gather", "--seed", "4", "--episodes", "30", "--eval_period=10", "--hidden_dim=16"],
        &["--algo", "qmix", "--env", "gather", "--seed", "4", "--episodes", "30", "--eval_period=10", "--hidden_dim=16"],
    ];
    for case in cases {
        match (run_once(case), run_once(case)) {
            (Ok(a), Ok(b)) if a == b => {}
            (Ok(_), Ok(_)) => {
                return Outcome {
                    passed: false,
                    detail: format!("metrics differ for {case:?}"),
                }
            }
            (Err(e), _) | (_, Err(e)) => return Outcome { passed: false, detail: e },
        }
    }
    Outcome {
        passed: true,
        detail: "byte-identical metrics.csv for msac/matrix, mcsac/gather and qmix/gather".into(),
    }
}

fn main() {
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome>)> = vec![
        (
            "decomposition expectation identity",
            Box::new(|| timed(Some(Duration::from_secs(10)), || from_report(expectation_identity(300, SEED)))),
        ),
        (
            "entropy pull-through and dual mixing",
            Box::new(|| timed(None, || from_report(entropy_identities(300, SEED)))),
        ),
        (
            "gradient oracle",
            Box::new(|| timed(Some(Duration::from_secs(60)), || from_report(gradient_oracle(SEED)))),
        ),
        (
            "counterfactual baseline",
            Box::new(|| timed(None, || from_report(counterfactual_baseline(150, SEED)))),
        ),
        (
            "monotonicity",
            Box::new(|| timed(None, || from_report(monotonicity(2000, SEED)))),
        ),
        ("alpha dynamics", Box::new(|| timed(None, || from_report(alpha_dynamics(SEED))))),
        ("variant matrix", Box::new(|| timed(None, || from_report(variant_wiring())))),
        ("matrix game learning", Box::new(|| timed(None, matrix_learning))),
        (
            "gather gridworld msac vs mcac",
            Box::new(|| timed(Some(Duration::from_secs(30 * 60)), gather_comparison)),
        ),
        ("determinism", Box::new(|| timed(None, determinism))),
        ("epsilon schedule endpoints", Box::new(|| timed(None, || from_report(epsilon_endpoints())))),
        (
            "reward standardization",
            Box::new(|| timed(None, || from_report(reward_standardization(SEED)))),
        ),
    ];

    let mut failed = 0;
    for (k, (name, check)) in criteria.into_iter().enumerate() {
        let out = check();
        if !out.passed {
            failed += 1;
        }
        println!("{} {:>2} {name}: {}", if out.passed { "PASS" } else { "FAIL" }, k + 1, out.detail);
    }
    println!("{failed} of 12 criteria failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
