//! Acceptance run: one line per criterion, nonzero exit if any fails.

use std::process::ExitCode;
use std::time::Instant;

use pudding::harness::{
    crash_tolerance, determinism, g2_impersonation, g3_registration, g4_membership, handshake_runs, latency_model,
    latency_ordering, surb_agreement, tamper_sweep, HarnessError, ScenarioConfig, Verdict,
};

const SEED: u64 = 2024;

fn both(a: Verdict, b: Verdict) -> Verdict {
    Verdict { name: format!("{} + {}", a.name, b.name), pass: a.pass && b.pass, evidence: format!("{} | {}", a.evidence, b.evidence) }
}

fn criteria() -> Vec<(&'static str, Box<dyn Fn() -> Result<Verdict, HarnessError>>)> {
    let games = ScenarioConfig { n: vec![4], seed: SEED, ..ScenarioConfig::default() };
    let scenario = ScenarioConfig {
        n: vec![4, 7, 10],
        clients: 20,
        duration_s: 120.0,
        drain_s: 120.0,
        repetitions: 1,
        seed: SEED,
        ..ScenarioConfig::default()
    };
    let small = ScenarioConfig { n: vec![4], clients: 6, duration_s: 60.0, drain_s: 60.0, repetitions: 2, ..scenario.clone() };
    let g = games.clone();
    let g2 = games.clone();
    let g3 = games.clone();
    let g4 = games.clone();
    vec![
        ("1 deterministic SURB agreement", Box::new(|| surb_agreement(SEED, 1000, &[4, 7, 10]))),
        ("2 fault-tolerance arithmetic", Box::new(|| crash_tolerance(SEED, 100, &[4, 7, 10]))),
        ("3 G2 impersonation", Box::new(move || g2_impersonation(&g, 1))),
        ("4 G3 registration", Box::new(move || g3_registration(&g2, 1000))),
        ("5 G4 membership unobservability", Box::new(move || g4_membership(&g3, 1000))),
        ("6 handshake correctness", Box::new(move || Ok(both(handshake_runs(&g4, 1000)?, tamper_sweep(&g4, 6)?)))),
        (
            "7 latency model",
            Box::new(move || Ok(both(latency_model(SEED, 10_000, 0.05, 3)?, latency_ordering(&scenario)?))),
        ),
        ("8 determinism", Box::new(move || determinism(&small))),
    ]
}

fn main() -> ExitCode {
    // Optional criterion numbers select a subset, e.g. `-- 2 6`.
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut all = true;
    for (label, check) in criteria() {
        if !only.is_empty() && !only.iter().any(|o| label.split(' ').next() == Some(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match check() {
            Ok(v) => (v.pass, v.evidence),
            Err(e) => (false, format!("error: {e}")),
        };
        all &= pass;
        let secs = start.elapsed().as_secs_f64();
        println!("{} criterion {label} ({secs:.1} s): {detail}", if pass { "PASS" } else { "FAIL" });
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
