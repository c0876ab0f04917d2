//! Scenario runner and security games on top of the simulated deployment.

mod checks;
mod config;
mod games;
mod report;
mod scenario;
mod world;

pub use checks::{
    crash_tolerance, determinism, handshake_runs, latency_model, latency_ordering, surb_agreement, tamper_sweep,
};
pub use config::{FaultConfig, FaultKind, ScenarioConfig, Workload};
pub use games::{g1_format, g2_impersonation, g3_registration, g4_membership, run_game, Game, Verdict};
pub use report::{emit_report, summarize, write_csv, write_json, write_table, Format, Summary, CSV_HEADER};
pub use scenario::{run_scenario, run_single, scenario_name, world_spec, OpRow, RunOutput, ScenarioOutput};
pub use world::{
    actor_rng, build_world, decode_delivery, flip_field_bit, handshake_fields, schedule, username_of, Adversary, Byzantine,
    EmailForgery, LogEntry, OpRecord, Outcome, Tamper, World, WorldEvent, WorldSpec, ADVERSARY_DOMAIN, NODE_DOMAIN,
};

use crate::sim::SimError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },
    #[error("simulator: {0}")]
    Sim(#[from] SimError),
    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Maps `f` over `items` on up to `threads` scoped threads, keeping order.
pub(crate) fn parallel_map<T: Sync, R: Send>(threads: usize, items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = threads.min(items.len()).max(1);
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(move || c.iter().map(f).collect::<Vec<R>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

impl HarnessError {
    pub fn config(path: &str, msg: impl Into<String>) -> Self {
        HarnessError::Config { path: path.to_string(), msg: msg.into() }
    }
}
