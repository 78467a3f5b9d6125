use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::mechanism::{BranchingMechanism, CompetitionMechanism};

/// Which simulator produces a replica's values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Simulator {
    /// ψ-CSBP flow; values Y_t(v).
    CsbpFlow,
    /// Flow with competition; values Z_t(v).
    CompetitionFlow,
    /// Frozen-drift grid flow; values Z^{ε,δ}_t(v).
    GridFlow,
    /// Lamperti time change of a Lévy path; values V_t started from each level.
    Lamperti,
    /// Brownian tree with the configured pruner; values L^a_{T_x}.
    Tree,
    /// |Z^{ε,δ}_t(v) − Z_t(v)| on one noise field.
    FlowGridDeviation,
    /// |L^a_{T_x}(ε,δ) − L^a_{T_x}(m*)| on one path and mark set.
    TreeGridDeviation,
}

impl Simulator {
    pub fn is_tree(self) -> bool {
        matches!(self, Simulator::Tree | Simulator::TreeGridDeviation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Pruner {
    #[default]
    None,
    Constant {
        theta: f64,
    },
    Grid,
    FixedPoint,
}

/// Map applied to every observed value before it is recorded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Transform {
    #[default]
    Identity,
    /// e^{−θ·value}.
    Laplace { theta: f64 },
}

impl Transform {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Transform::Identity => v,
            Transform::Laplace { theta } => (-theta * v).exp(),
        }
    }
}

fn d_scenario() -> String {
    "experiment".into()
}
fn d_one() -> f64 {
    1.0
}
fn d_dt() -> f64 {
    1e-3
}
fn d_ds() -> f64 {
    1e-4
}
fn d_eps() -> f64 {
    0.1
}
fn d_horizon() -> f64 {
    100.0
}
fn d_replicas() -> usize {
    1000
}
fn d_tol() -> f64 {
    1e-6
}
fn d_max_iter() -> usize {
    200
}

/// Everything one experiment needs. All fields except `simulator` and
/// `mechanism` have defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "d_scenario")]
    pub scenario: String,
    pub simulator: Simulator,
    /// Second simulator for `compare`.
    #[serde(default)]
    pub reference: Option<Simulator>,
    pub mechanism: BranchingMechanism,
    /// g; defaults to g ≡ 0.
    #[serde(default)]
    pub competition: Option<CompetitionMechanism>,
    #[serde(default)]
    pub pruner: Pruner,
    #[serde(default)]
    pub transform: Transform,
    /// Root mass of the tree; default flow level.
    #[serde(default = "d_one")]
    pub x: f64,
    /// Initial masses of the flow tracks; defaults to [x].
    #[serde(default)]
    pub levels: Vec<f64>,
    /// Observation points: times for flows, heights for trees. Defaults to [t_end].
    #[serde(default)]
    pub observe: Vec<f64>,
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "d_dt")]
    pub du: f64,
    /// Mass range of the flow noise; defaults to 8 × the largest level.
    #[serde(default)]
    pub nu_max: Option<f64>,
    #[serde(default = "d_ds")]
    pub ds: f64,
    /// Local-time bin; defaults to √ds.
    #[serde(default)]
    pub eps_l: Option<f64>,
    #[serde(default = "d_eps")]
    pub eps: f64,
    #[serde(default = "d_eps")]
    pub delta: f64,
    #[serde(default = "d_one")]
    pub t_end: f64,
    #[serde(default)]
    pub height_cap: Option<f64>,
    /// Exploration horizon of the height process.
    #[serde(default = "d_horizon")]
    pub horizon: f64,
    /// Internal step of the Lamperti clock; defaults to dt.
    #[serde(default)]
    pub lamperti_dt: Option<f64>,
    #[serde(default = "d_tol")]
    pub tol: f64,
    #[serde(default = "d_max_iter")]
    pub max_iter: usize,
    #[serde(default = "d_replicas")]
    pub replicas: usize,
    #[serde(default)]
    pub seed: u64,
    /// (ε, δ) points for `sweep`.
    #[serde(default)]
    pub sweep: Vec<(f64, f64)>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(simulator: Simulator, mechanism: BranchingMechanism) -> Self {
        ExperimentConfig {
            scenario: d_scenario(),
            simulator,
            reference: None,
            mechanism,
            competition: None,
            pruner: Pruner::None,
            transform: Transform::Identity,
            x: 1.0,
            levels: Vec::new(),
            observe: Vec::new(),
            dt: d_dt(),
            du: d_dt(),
            nu_max: None,
            ds: d_ds(),
            eps_l: None,
            eps: d_eps(),
            delta: d_eps(),
            t_end: 1.0,
            height_cap: None,
            horizon: d_horizon(),
            lamperti_dt: None,
            tol: d_tol(),
            max_iter: d_max_iter(),
            replicas: d_replicas(),
            seed: 0,
            sweep: Vec::new(),
            out: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn levels(&self) -> Vec<f64> {
        if self.levels.is_empty() {
            vec![self.x]
        } else {
            self.levels.clone()
        }
    }

    pub fn observe(&self) -> Vec<f64> {
        if self.observe.is_empty() {
            vec![self.t_end]
        } else {
            self.observe.clone()
        }
    }

    pub fn competition(&self) -> CompetitionMechanism {
        self.competition
            .clone()
            .unwrap_or_else(|| CompetitionMechanism::constant(0.0).expect("g = 0 is valid"))
    }

    pub fn nu_max(&self) -> f64 {
        self.nu_max
            .unwrap_or_else(|| 8.0 * self.levels().iter().copied().fold(1.0, f64::max))
    }

    /// Reject anything that would fail only after simulation started.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("du", self.du),
            ("ds", self.ds),
            ("eps", self.eps),
            ("delta", self.delta),
            ("tol", self.tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [("eps_l", self.eps_l), ("lamperti_dt", self.lamperti_dt), ("nu_max", self.nu_max)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(config(format!("{name} must be > 0, got {v}")));
                }
            }
        }
        if self.replicas == 0 {
            return Err(config("replicas must be >= 1"));
        }
        if !(self.t_end >= 0.0 && self.x >= 0.0 && self.horizon > 0.0) {
            return Err(config("t_end and x must be >= 0 and horizon > 0"));
        }
        if self.observe().iter().any(|&a| !(a >= 0.0 && a.is_finite())) {
            return Err(config("observation points must be finite and >= 0"));
        }
        let levels = self.levels();
        if levels.windows(2).any(|w| !(w[0] <= w[1])) || levels[0] < 0.0 {
            return Err(config("levels must be sorted and nonnegative"));
        }
        for (eps, delta) in &self.sweep {
            if !(*eps > 0.0 && *delta > 0.0) {
                return Err(config("sweep points need eps, delta > 0"));
            }
        }
        if let Pruner::Constant { theta } = self.pruner {
            if !(theta >= 0.0 && theta.is_finite()) {
                return Err(config(format!("constant pruning needs theta >= 0, got {theta}")));
            }
        }
        if let Transform::Laplace { theta } = self.transform {
            if !(theta >= 0.0) {
                return Err(config("Laplace transform needs theta >= 0"));
            }
        }
        for sim in std::iter::once(self.simulator).chain(self.reference) {
            if !sim.is_tree() {
                for t in self.observe().into_iter().chain([self.t_end]) {
                    let r = t / self.dt;
                    if (r - r.round()).abs() > 1e-6 * r.max(1.0) {
                        return Err(config(format!("flow time {t} is not a whole multiple of dt = {}", self.dt)));
                    }
                }
            }
            if sim.is_tree() {
                if !self.mechanism.jumps().is_empty() || !(self.mechanism.sigma() > 0.0) {
                    return Err(config("tree simulators need a Brownian mechanism with sigma > 0"));
                }
                if !(self.x > 0.0) {
                    return Err(config("tree simulators need x > 0"));
                }
            }
        }
        Ok(())
    }
}
