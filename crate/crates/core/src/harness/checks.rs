//! End-to-end property checks over the simulated deployment.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::games::{contact_outcomes, device_ids, discover, game_spec, mode_of, settled, sub_seed};
use super::{
    build_world, decode_delivery, handshake_fields, parallel_map, run_scenario, schedule, summarize, write_csv, Game, HarnessError,
    Outcome, ScenarioConfig, Tamper, Verdict, WorldEvent, WorldSpec,
};
use crate::client::{ClientConfig, IdentityChoice};
use crate::effect::{Env, OpKind, Trace};
use crate::sim::{FaultMode, FaultSpec, OutboundPacket, Recorder, SimConfig, Simulator, Topology, TopologySpec};
use crate::sphinx::{build_packet, ContactInfo, NodeId};
use crate::time::SimTime;
use crate::wire::WireMessage;

/// All honest nodes derive identical (surb, bpk) for the same (username,
/// nonce), and responses for registered and unregistered names have one length.
pub fn surb_agreement(seed: u64, pairs: usize, ns: &[usize]) -> Result<Verdict, HarnessError> {
    let mut mismatches = 0usize;
    let mut lengths = BTreeSet::new();
    let mut checked = 0usize;
    for &n in ns {
        let mut sim = build_world(&WorldSpec { n, clients: 2, seed: sub_seed(seed, 10, n as u64), ..WorldSpec::default() })?;
        let mut rng = ChaCha20Rng::seed_from_u64(sub_seed(seed, 11, n as u64));
        let contacts: Vec<ContactInfo> = sim.app.devices.values().map(|d| d.contact).collect();
        let mut queries = Vec::with_capacity(pairs);
        for i in 0..pairs {
            let name = format!("u{:016x}@d{}.test", rng.next_u64(), i % 3);
            let mut nonce = [0u8; 16];
            rng.fill_bytes(&mut nonce);
            if i % 2 == 0 {
                let c = contacts[i % contacts.len()];
                for node in sim.app.nodes.values_mut() {
                    node.preload(&name, c);
                }
            }
            queries.push((name, nonce));
        }
        let env = Env { now: SimTime::ZERO, topology: sim.topology(), mu: sim.config().mu, dkim: &sim.app.dkim };
        for (name, nonce) in &queries {
            let mut outputs = BTreeSet::new();
            for node in sim.app.nodes.values() {
                let ans = node.answer_lookup(&env, name, nonce).map_err(|e| HarnessError::config("n", e.to_string()))?;
                lengths.insert(ans.response.encode().len());
                if let WireMessage::LookupResponse { surb, bpk, .. } = ans.response {
                    outputs.insert((surb, bpk));
                }
            }
            checked += 1;
            if outputs.len() != 1 {
                mismatches += 1;
            }
        }
    }
    let pass = mismatches == 0 && lengths.len() == 1;
    let evidence = format!(
        "{checked} (username, nonce) queries over n = {ns:?}: {mismatches} disagreements, response lengths {lengths:?}"
    );
    Ok(Verdict::new("surb agreement", pass, evidence))
}

/// Registration with one set of f nodes crashed, then lookup with another.
/// Every pair of f-subsets at n = 4; `random_subsets` random pairs above.
pub fn crash_tolerance(seed: u64, random_subsets: usize, ns: &[usize]) -> Result<Verdict, HarnessError> {
    let mut cases = Vec::new();
    for &n in ns {
        let f = (n - 1) / 3;
        if n == 4 {
            for r in 0..n {
                for l in 0..n {
                    cases.push((n, vec![r], vec![l]));
                }
            }
        } else {
            let mut rng = ChaCha20Rng::seed_from_u64(sub_seed(seed, 12, n as u64));
            for _ in 0..random_subsets {
                let r = sample(&mut rng, n, f).into_vec();
                let l = sample(&mut rng, n, f).into_vec();
                cases.push((n, r, l));
            }
        }
    }
    let mut failures = Vec::new();
    let (mut registered, mut looked_up, mut befriended) = (0usize, 0usize, 0usize);
    for (i, (n, reg_down, lookup_down)) in cases.iter().enumerate() {
        let spec = WorldSpec { n: *n, clients: 2, seed: sub_seed(seed, 13, i as u64), ..WorldSpec::default() };
        let one_way = spec.mean_one_way();
        let mut sim = build_world(&spec)?;
        let nodes = sim.topology().discovery.clone();
        let switch = SimTime::ZERO + one_way * 400;
        for &k in reg_down {
            sim.inject_fault(FaultSpec { node: nodes[k], mode: FaultMode::Crash, from: SimTime::ZERO, to: switch });
        }
        for &k in lookup_down {
            sim.inject_fault(FaultSpec { node: nodes[k], mode: FaultMode::Crash, from: switch, to: SimTime(u64::MAX) });
        }
        let ids = device_ids(&sim);
        let (a, b) = (ids[0], ids[1]);
        let name = sim.app.devices[&a].username.clone();
        schedule(&mut sim, SimTime::ZERO, a, WorldEvent::Register { username: name.clone() });
        sim.run_until(switch);
        schedule(&mut sim, switch, b, WorldEvent::Discover { target: name, mode: IdentityChoice::Anonymous, codeword: None });
        sim.run_while(switch + one_way * 400, |w| !(settled(w) && w.ops.values().any(|o| o.actor == b)));
        let ok = |actor: NodeId, kind: OpKind| {
            sim.app.ops.values().any(|o| o.actor == actor && o.kind == kind && matches!(o.end, Some((_, Outcome::Success))))
        };
        let (r, l) = (ok(a, OpKind::Register), ok(b, OpKind::Lookup));
        registered += usize::from(r);
        looked_up += usize::from(l);
        befriended += usize::from(ok(b, OpKind::ContactInitAddFriend));
        if !(r && l) {
            failures.push(format!("n={n} register-down {reg_down:?} lookup-down {lookup_down:?}"));
        }
    }
    let mut evidence = format!(
        "{} crash schedules: {registered} registrations and {looked_up} lookups succeeded, {befriended} handshakes completed",
        cases.len()
    );
    if let Some(f) = failures.first() {
        evidence.push_str(&format!("; first failure: {f}"));
    }
    Ok(Verdict::new("crash tolerance", failures.is_empty(), evidence))
}

fn handshake_spec(cfg: &ScenarioConfig, seed: u64) -> WorldSpec {
    game_spec(cfg, 4, 2, false, seed)
}

/// Honest discoveries alternating identity modes; both ends must hold one
/// friend record with the same key.
pub fn handshake_runs(cfg: &ScenarioConfig, runs: usize) -> Result<Verdict, HarnessError> {
    let idx: Vec<usize> = (0..runs).collect();
    let results = parallel_map(cfg.threads, &idx, |&i| -> Result<bool, HarnessError> {
        let spec = handshake_spec(cfg, sub_seed(cfg.seed, 14, i as u64));
        let mut sim = build_world(&spec)?;
        sim.app.preload_all();
        let ids = device_ids(&sim);
        discover(&mut sim, ids[0], ids[1], mode_of(i));
        sim.run_while(SimTime::ZERO + spec.mean_one_way() * 400, |w| !settled(w));
        let (a, b) = (&sim.app.devices[&ids[0]].friends, &sim.app.devices[&ids[1]].friends);
        Ok(a.len() == 1 && b.len() == 1 && a[0].k_s == b[0].k_s)
    });
    let mut agreed = 0usize;
    for r in results {
        agreed += usize::from(r?);
    }
    let evidence = format!("{agreed}/{runs} handshakes (half anonymous, half named) ended with equal keys at both ends");
    Ok(Verdict::new("handshake agreement", agreed == runs, evidence))
}

/// Flips single bits in every field of every handshake message: the first,
/// the last and `extra_bits` random positions per field, in both modes.
/// A run passes when the searcher never completes and no two friend records
/// disagree on a key.
pub fn tamper_sweep(cfg: &ScenarioConfig, extra_bits: usize) -> Result<Verdict, HarnessError> {
    let kinds = ["contact_init", "add_friend_reply", "add_friend_finish", "key_confirm"];
    let mut jobs = Vec::new();
    let mut rng = ChaCha20Rng::seed_from_u64(sub_seed(cfg.seed, 15, 0));
    for mode in [IdentityChoice::Anonymous, IdentityChoice::Named] {
        let seed = sub_seed(cfg.seed, 16, mode as u64);
        // An untampered run of the same seed shows every field and its length.
        let spec = handshake_spec(cfg, seed);
        let mut sim = build_world(&spec)?;
        sim.app.preload_all();
        let ids = device_ids(&sim);
        sim.app.observe.extend(ids.iter().copied());
        discover(&mut sim, ids[0], ids[1], mode);
        sim.run_while(SimTime::ZERO + spec.mean_one_way() * 400, |w| !settled(w));
        let delivered: Vec<WireMessage> = sim.app.observed.iter().filter_map(|(_, _, p)| decode_delivery(p)).collect();
        for kind in kinds {
            let Some(msg) = delivered.iter().find(|m| m.kind() == kind) else {
                return Ok(Verdict::new("tamper sweep", false, format!("reference run never delivered {kind}")));
            };
            for (field, len) in handshake_fields(msg) {
                let bits = len * 8;
                let mut picks = BTreeSet::from([0, bits - 1]);
                while picks.len() < (2 + extra_bits).min(bits) {
                    picks.insert(rng.gen_range(0..bits));
                }
                for bit in picks {
                    jobs.push((mode, seed, kind, field, bit));
                }
            }
        }
    }
    let results = parallel_map(cfg.threads, &jobs, |&(mode, seed, kind, field, bit)| -> Result<_, HarnessError> {
        let base = handshake_spec(cfg, seed);
        let client = ClientConfig { max_discovery_restarts: 0, ..ClientConfig::from_one_way(base.mean_one_way()) };
        let spec = WorldSpec { client: Some(client), ..base };
        let mut sim = build_world(&spec)?;
        sim.app.preload_all();
        sim.app.tamper = Some(Tamper { kind, field, bit, applied: false });
        let ids = device_ids(&sim);
        discover(&mut sim, ids[0], ids[1], mode);
        sim.run_while(SimTime::ZERO + spec.mean_one_way() * 400, |w| !settled(w));
        let applied = sim.app.tamper.as_ref().is_some_and(|t| t.applied);
        let (fa, fb) = (&sim.app.devices[&ids[0]].friends, &sim.app.devices[&ids[1]].friends);
        let mismatched = fa.iter().any(|x| !fb.iter().any(|y| y.k_s == x.k_s));
        let outcomes = contact_outcomes(&sim.app, ids[0]);
        let failed = !outcomes.is_empty() && outcomes.iter().all(|o| matches!(o, Some(Outcome::Failure(_))));
        let explicit = sim.app.log.iter().any(|e| matches!(e.trace, Trace::Abort { .. }));
        Ok((applied, fa.is_empty() && failed && !mismatched, explicit))
    });
    let (mut applied, mut aborted, mut explicit) = (0usize, 0usize, 0usize);
    let mut failures = Vec::new();
    for (job, r) in jobs.iter().zip(results) {
        let (was_applied, ok, loud) = r?;
        if !was_applied {
            failures.push(format!("{}.{} bit {} never applied", job.2, job.3, job.4));
            continue;
        }
        applied += 1;
        if ok {
            aborted += 1;
            explicit += usize::from(loud);
        } else {
            failures.push(format!("{:?} {}.{} bit {}", job.0, job.2, job.3, job.4));
        }
    }
    let mut evidence = format!(
        "{applied} single-bit tampers: {aborted} ended the handshake without a searcher friend record \
         ({explicit} by an explicit abort, {} by silently discarding the message until the searcher timed out)",
        aborted - explicit
    );
    if let Some(f) = failures.first() {
        evidence.push_str(&format!("; first failure: {f}"));
    }
    Ok(Verdict::new("tamper sweep", failures.is_empty(), evidence))
}

/// Mean one-way latency of `messages` packets against the closed form.
pub fn latency_model(seed: u64, messages: usize, mu: f64, layers: usize) -> Result<Verdict, HarnessError> {
    let tspec = TopologySpec { layers, mixes_per_layer: 3, providers: 3, discovery_nodes: 0, clients: 10 };
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (topology, keys) = Topology::generate(&tspec, &mut rng)?;
    let config = SimConfig { mu, ..SimConfig::default() };
    let mut sim = Simulator::new(topology, keys, config, Recorder::default())?;
    let clients = sim.topology().clients.clone();
    let pks: Vec<_> = clients.iter().map(|_| crate::crypto::KeyPair::generate(&mut rng).pk).collect();
    for i in 0..messages {
        let from = rng.gen_range(0..clients.len());
        let to = (from + rng.gen_range(1..clients.len())) % clients.len();
        let dest = sim.topology().contact_for(clients[to], pks[to]).expect("attached");
        let route = sim.topology().random_route(&mut rng, &dest, mu)?;
        let packet = build_packet(&route, &(i as u64).to_be_bytes(), &mut rng).map_err(|e| HarnessError::config("layers", e.to_string()))?;
        sim.submit(clients[from], OutboundPacket { first_hop: route.hops[0].node, packet })?;
    }
    sim.run_until(SimTime(u64::MAX));
    let report = sim.report();
    let delivered = report.deliveries.len();
    let mean = report.deliveries.iter().map(|d| d.delivered_at.saturating_since(d.submitted_at).as_secs_f64()).sum::<f64>()
        / delivered.max(1) as f64;
    let expected = WorldSpec { layers, sim: config, ..WorldSpec::default() }.mean_one_way().as_secs_f64();
    let err = (mean - expected).abs() / expected;
    let pass = delivered == messages && err <= 0.03;
    let evidence = format!(
        "{delivered}/{messages} delivered, mean {mean:.4} s vs closed form {expected:.4} s ({:.2}% off)",
        100.0 * err
    );
    Ok(Verdict::new("latency model", pass, evidence))
}

/// Lookup is faster than registration and anonymous discovery faster than
/// named, for every configured n.
pub fn latency_ordering(cfg: &ScenarioConfig) -> Result<Verdict, HarnessError> {
    let out = run_scenario(cfg)?;
    let sums = summarize(&out);
    let mean = |workload: Option<&str>, n: usize, op: &str| -> Option<f64> {
        let picked: Vec<_> =
            sums.iter().filter(|s| s.n == n && s.operation == op && workload.is_none_or(|w| s.workload == w)).collect();
        let count: usize = picked.iter().map(|s| s.successes).sum();
        (count > 0).then(|| picked.iter().map(|s| s.mean_s.unwrap_or(0.0) * s.successes as f64).sum::<f64>() / count as f64)
    };
    let mut lines = Vec::new();
    let mut pass = true;
    for &n in &cfg.n {
        let reg = mean(Some("register"), n, "register");
        let look = mean(None, n, "lookup");
        let anon = mean(Some("discover_anonymous"), n, "contact_init_add_friend");
        let named = mean(Some("discover_named"), n, "contact_init_add_friend");
        let ok = matches!((look, reg), (Some(l), Some(r)) if l < r) && matches!((anon, named), (Some(a), Some(b)) if a < b);
        pass &= ok;
        let f = |v: Option<f64>| v.map_or("-".into(), |x| format!("{x:.2}"));
        lines.push(format!("n={n}: lookup {} < register {}, anonymous {} < named {}", f(look), f(reg), f(anon), f(named)));
    }
    let incomplete = out.rows().filter(|r| r.outcome != "success").count();
    let total = out.rows().count();
    Ok(Verdict::new("latency ordering", pass, format!("{}; {incomplete}/{total} operations unsuccessful", lines.join("; "))))
}

/// Runs a scenario and a game twice with the same seed and compares bytes.
pub fn determinism(cfg: &ScenarioConfig) -> Result<Verdict, HarnessError> {
    let csv = |out: &super::ScenarioOutput| -> Result<Vec<u8>, HarnessError> {
        let mut buf = Vec::new();
        write_csv(out.rows().cloned(), &mut buf)?;
        Ok(buf)
    };
    let reports = |out: &super::ScenarioOutput| out.runs.iter().map(|r| r.report.to_json()).collect::<Vec<_>>();
    let (a, b) = (run_scenario(cfg)?, run_scenario(cfg)?);
    let same_csv = csv(&a)? == csv(&b)?;
    let same_reports = reports(&a) == reports(&b);
    let game_cfg = ScenarioConfig { trials: 4, ..cfg.clone() };
    let same_game = super::run_game(Game::G4, &game_cfg)? == super::run_game(Game::G4, &game_cfg)?
        && super::run_game(Game::G3, &game_cfg)? == super::run_game(Game::G3, &game_cfg)?;
    let rows = a.rows().count();
    let pass = same_csv && same_reports && same_game && rows > 0;
    let evidence = format!(
        "{rows} CSV rows identical: {same_csv}; {} simulator reports identical: {same_reports}; game verdicts identical: {same_game}",
        a.runs.len()
    );
    Ok(Verdict::new("determinism", pass, evidence))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surb_agreement_small() {
        let v = surb_agreement(1, 10, &[4, 7]).unwrap();
        assert!(v.pass, "{v}");
    }

    #[test]
    fn latency_model_small() {
        let v = latency_model(2, 2000, 0.05, 3).unwrap();
        assert!(v.evidence.starts_with("2000/2000"), "{v}");
    }
}
