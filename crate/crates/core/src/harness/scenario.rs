use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use super::{build_world, parallel_map, schedule, FaultKind, HarnessError, Outcome, ScenarioConfig, Workload, WorldEvent, WorldSpec};
use crate::client::IdentityChoice;
use crate::sim::{FaultMode, FaultSpec, SimConfig, SimReport};
use crate::sphinx::NodeId;
use crate::time::{SimDuration, SimTime};

/// One operation, as a CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpRow {
    pub scenario: String,
    pub repetition: usize,
    pub operation: &'static str,
    pub start_s: f64,
    pub end_s: Option<f64>,
    pub latency_s: Option<f64>,
    pub outcome: &'static str,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub workload: Workload,
    pub n: usize,
    pub repetition: usize,
    pub seed: u64,
    pub rows: Vec<OpRow>,
    pub report: SimReport,
}

#[derive(Debug, Clone, Default)]
pub struct ScenarioOutput {
    pub runs: Vec<RunOutput>,
}

impl ScenarioOutput {
    pub fn rows(&self) -> impl Iterator<Item = &OpRow> {
        self.runs.iter().flat_map(|r| r.rows.iter())
    }
}

pub fn scenario_name(workload: Workload, n: usize) -> String {
    format!("{}_n{n}", workload.as_str())
}

fn run_seed(base: u64, n: usize, workload: Workload, repetition: usize) -> u64 {
    let mut rng = ChaCha20Rng::seed_from_u64(base);
    rng.set_stream(((n as u64) << 32) | ((workload as u64) << 16) | repetition as u64);
    rng.next_u64()
}

/// Runs every (n, workload, repetition) combination. With `threads > 1` the
/// runs are spread over worker threads; results keep their sequential order.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutput, HarnessError> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for &n in &cfg.n {
        for &w in &cfg.workloads {
            for r in 0..cfg.repetitions {
                jobs.push((n, w, r));
            }
        }
    }
    let results = parallel_map(cfg.threads, &jobs, |&(n, w, r)| run_single(cfg, n, w, r));
    let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(ScenarioOutput { runs })
}

pub fn world_spec(cfg: &ScenarioConfig, n: usize, seed: u64) -> WorldSpec {
    WorldSpec {
        n,
        f: cfg.f,
        clients: cfg.clients,
        layers: cfg.layers,
        mixes_per_layer: cfg.mixes_per_layer,
        providers: cfg.providers,
        domains: cfg.email_domains,
        sim: SimConfig { mu: cfg.mu, lambda_send: cfg.lambda_send, transit: SimDuration::from_millis(cfg.transit_ms) },
        email_delay: SimDuration::from_millis(cfg.email_delay_ms),
        grace: SimDuration::from_secs_f64(cfg.grace_s),
        client: None,
        adversary: cfg.faults.iter().any(|f| f.kind == FaultKind::Byzantine),
        seed,
    }
}

pub fn run_single(cfg: &ScenarioConfig, n: usize, workload: Workload, repetition: usize) -> Result<RunOutput, HarnessError> {
    let seed = run_seed(cfg.seed, n, workload, repetition);
    let mut sim = build_world(&world_spec(cfg, n, seed))?;
    let discovery = sim.topology().discovery.clone();
    for fault in &cfg.faults {
        let Some(&node) = discovery.get(fault.node) else {
            return Err(HarnessError::config("faults", format!("node index {} out of range", fault.node)));
        };
        let mode = match fault.kind {
            FaultKind::Crash => FaultMode::Crash,
            FaultKind::Byzantine => FaultMode::Byzantine(fault.behavior),
        };
        let to = fault.to_s.map_or(SimTime(u64::MAX), SimTime::from_secs_f64);
        sim.inject_fault(FaultSpec { node, mode, from: SimTime::from_secs_f64(fault.from_s), to });
    }
    if workload != Workload::Register {
        sim.app.preload_all();
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let devices: Vec<(NodeId, String)> = sim.app.devices.iter().map(|(&id, d)| (id, d.username.clone())).collect();
    let interval = 1.0 / cfg.lambda_send;
    for (i, (id, name)) in devices.iter().enumerate() {
        let pause: f64 = rng.gen_range(0.0..30.0);
        let mut k = 0usize;
        loop {
            let t = pause + k as f64 * interval;
            if t >= cfg.duration_s {
                break;
            }
            let event = match workload {
                Workload::Register => WorldEvent::Register { username: name.replacen('@', &format!("+r{k}@"), 1) },
                Workload::DiscoverAnonymous | Workload::DiscoverNamed => {
                    let mut j = rng.gen_range(0..devices.len() - 1);
                    if j >= i {
                        j += 1;
                    }
                    let mode = if workload == Workload::DiscoverNamed {
                        IdentityChoice::Named
                    } else {
                        IdentityChoice::Anonymous
                    };
                    WorldEvent::Discover { target: devices[j].1.clone(), mode, codeword: cfg.codeword.clone() }
                }
            };
            schedule(&mut sim, SimTime::from_secs_f64(t), *id, event);
            k += 1;
        }
    }
    sim.run_until(SimTime::from_secs_f64(cfg.duration_s + cfg.drain_s));
    let scenario = scenario_name(workload, n);
    let mut ops: Vec<_> = sim.app.ops.iter().collect();
    ops.sort_by_key(|((actor, op), r)| (r.start, *actor, *op));
    let rows = ops
        .into_iter()
        .map(|(_, r)| {
            let start_s = r.start.as_secs_f64();
            let (end_s, latency_s, outcome) = match &r.end {
                Some((end, o)) => (
                    Some(end.as_secs_f64()),
                    Some(end.saturating_since(r.start).as_secs_f64()),
                    match o {
                        Outcome::Success => "success",
                        Outcome::Failure(_) => "failure",
                    },
                ),
                None => (None, None, "incomplete"),
            };
            OpRow { scenario: scenario.clone(), repetition, operation: r.kind.as_str(), start_s, end_s, latency_s, outcome }
        })
        .collect();
    Ok(RunOutput { workload, n, repetition, seed, rows, report: sim.report().clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(workloads: Vec<Workload>) -> ScenarioConfig {
        ScenarioConfig {
            n: vec![4],
            clients: 4,
            duration_s: 60.0,
            drain_s: 60.0,
            repetitions: 1,
            workloads,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn register_rows_are_successful() {
        let out = run_scenario(&small(vec![Workload::Register])).unwrap();
        let rows: Vec<&OpRow> = out.rows().collect();
        // Each of 4 clients starts 2 registrations within 60 s.
        assert_eq!(rows.len(), 8);
        assert!(rows.iter().all(|r| r.outcome == "success" && r.operation == "register"));
    }

    #[test]
    fn discovery_rows_cover_both_operations() {
        let out = run_scenario(&small(vec![Workload::DiscoverNamed])).unwrap();
        let ok = |op: &str| out.rows().filter(|r| r.operation == op && r.outcome == "success").count();
        assert_eq!(ok("lookup"), 8);
        assert_eq!(ok("contact_init_add_friend"), 8);
    }

    #[test]
    fn threads_do_not_change_results() {
        let mut cfg = small(vec![Workload::DiscoverAnonymous]);
        cfg.repetitions = 3;
        let a = run_scenario(&cfg).unwrap();
        cfg.threads = 3;
        let b = run_scenario(&cfg).unwrap();
        let rows = |o: &ScenarioOutput| o.rows().cloned().collect::<Vec<_>>();
        assert_eq!(rows(&a), rows(&b));
    }
}
