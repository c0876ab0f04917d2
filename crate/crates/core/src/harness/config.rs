use serde::{Deserialize, Serialize};

use super::{Byzantine, HarnessError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Workload {
    Register,
    DiscoverAnonymous,
    DiscoverNamed,
}

impl Workload {
    pub fn as_str(self) -> &'static str {
        match self {
            Workload::Register => "register",
            Workload::DiscoverAnonymous => "discover_anonymous",
            Workload::DiscoverNamed => "discover_named",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Workload::Register, Workload::DiscoverAnonymous, Workload::DiscoverNamed]
            .into_iter()
            .find(|w| w.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    Crash,
    Byzantine,
}

/// One entry of the fault schedule. `node` indexes the discovery nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultConfig {
    pub node: usize,
    pub kind: FaultKind,
    #[serde(default)]
    pub from_s: f64,
    #[serde(default)]
    pub to_s: Option<f64>,
    #[serde(default)]
    pub behavior: Byzantine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Discovery-node counts to run, one configuration each.
    pub n: Vec<usize>,
    pub f: Option<usize>,
    pub clients: usize,
    pub layers: usize,
    pub mixes_per_layer: usize,
    pub providers: usize,
    pub email_domains: usize,
    /// Mean per-hop delay, seconds.
    pub mu: f64,
    /// Requests per second per client.
    pub lambda_send: f64,
    pub transit_ms: u64,
    pub email_delay_ms: u64,
    pub grace_s: f64,
    /// Window in which requests start.
    pub duration_s: f64,
    /// Extra time for in-flight operations to finish.
    pub drain_s: f64,
    pub repetitions: usize,
    pub seed: u64,
    pub threads: usize,
    pub workloads: Vec<Workload>,
    pub codeword: Option<String>,
    pub faults: Vec<FaultConfig>,
    /// Attempts or paired trials per security game.
    pub trials: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n: vec![4, 7, 10],
            f: None,
            clients: 20,
            layers: 3,
            mixes_per_layer: 3,
            providers: 2,
            email_domains: 4,
            mu: 0.05,
            lambda_send: 1.0 / 30.0,
            transit_ms: 10,
            email_delay_ms: 500,
            grace_s: 5.0,
            duration_s: 600.0,
            drain_s: 120.0,
            repetitions: 6,
            seed: 1,
            threads: 1,
            workloads: vec![Workload::Register, Workload::DiscoverAnonymous, Workload::DiscoverNamed],
            codeword: None,
            faults: Vec::new(),
            trials: 1000,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |p: &str, m: &str| HarnessError::config(p, m);
        if self.n.is_empty() {
            return Err(err("n", "list is empty"));
        }
        for (i, &n) in self.n.iter().enumerate() {
            let f = self.f.unwrap_or(n.saturating_sub(1) / 3);
            if n == 0 || 3 * f + 1 > n {
                return Err(err(&format!("n[{i}]"), &format!("{n} nodes cannot tolerate f = {f}")));
            }
            for (j, fault) in self.faults.iter().enumerate() {
                if fault.node >= n {
                    return Err(err(&format!("faults[{j}].node"), &format!("index {} out of range for n = {n}", fault.node)));
                }
            }
        }
        if self.clients < 2 {
            return Err(err("clients", "need at least two clients"));
        }
        if !(3..=4).contains(&self.layers) {
            return Err(err("layers", "must be 3 or 4"));
        }
        if self.mixes_per_layer == 0 {
            return Err(err("mixes_per_layer", "must be positive"));
        }
        if self.providers == 0 {
            return Err(err("providers", "must be positive"));
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(err("mu", "must be positive and finite"));
        }
        if !(self.lambda_send.is_finite() && self.lambda_send > 0.0) {
            return Err(err("lambda_send", "must be positive and finite"));
        }
        for (name, v) in [("grace_s", self.grace_s), ("duration_s", self.duration_s), ("drain_s", self.drain_s)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(err(name, "must be a non-negative number"));
            }
        }
        if self.repetitions == 0 {
            return Err(err("repetitions", "must be positive"));
        }
        if self.trials == 0 {
            return Err(err("trials", "must be positive"));
        }
        if self.threads == 0 {
            return Err(err("threads", "must be positive"));
        }
        if self.workloads.is_empty() {
            return Err(err("workloads", "list is empty"));
        }
        if self.codeword.as_ref().is_some_and(|c| c.len() > crate::client::MAX_CODEWORD_LEN) {
            return Err(err("codeword", "longer than 64 bytes"));
        }
        for (j, fault) in self.faults.iter().enumerate() {
            if !(fault.from_s.is_finite() && fault.from_s >= 0.0) || fault.to_s.is_some_and(|t| !(t >= fault.from_s)) {
                return Err(err(&format!("faults[{j}]"), "window must satisfy 0 <= from_s <= to_s"));
            }
        }
        Ok(())
    }
}
