//! Built-in scenarios.

use nalgebra::DVector;
use sensmpc::lq::LinearQuadratic;
use sensmpc::ocp::Ocp;
use sensmpc::polyhedral::Polyhedron;
use sensmpc::uav::{self, UavParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    /// UAV benchmark.
    UavDefault,
    /// Double integrator with input and speed limits.
    LqSmoke,
    /// UAV benchmark with the thrust lower bound listed twice.
    LicqDup,
}

impl std::str::FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uav_default" => Ok(ScenarioKind::UavDefault),
            "lq_smoke" => Ok(ScenarioKind::LqSmoke),
            "licq_dup" => Ok(ScenarioKind::LicqDup),
            other => Err(format!(
                "unknown scenario `{other}` (expected uav_default, lq_smoke or licq_dup)"
            )),
        }
    }
}

impl ScenarioKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::UavDefault => "uav_default",
            ScenarioKind::LqSmoke => "lq_smoke",
            ScenarioKind::LicqDup => "licq_dup",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            ScenarioKind::LqSmoke => 2,
            _ => uav::STATE_DIM,
        }
    }

    pub fn min_horizon(&self) -> usize {
        match self {
            ScenarioKind::LqSmoke => 1,
            _ => 2,
        }
    }
}

/// Sampling time of the double-integrator scenario.
pub const LQ_TS: f64 = 0.1;

/// An instantiated scenario: the OCP plus naming and unit conversions for output.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub ocp: Ocp,
    pub ts: f64,
    pub state_names: Vec<String>,
    pub input_names: Vec<String>,
    /// Added to the OCP input to get the physical input.
    pub input_offset: DVector<f64>,
}

impl Scenario {
    pub fn build(kind: ScenarioKind, horizon: usize) -> sensmpc::Result<Self> {
        let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        match kind {
            ScenarioKind::UavDefault | ScenarioKind::LicqDup => {
                let params = UavParams::default();
                let ocp = if kind == ScenarioKind::UavDefault {
                    uav::build_uav_ocp(&params, horizon)?
                } else {
                    uav::build_uav_ocp_duplicated_thrust(&params, horizon)?
                };
                Ok(Self {
                    kind,
                    ocp,
                    ts: params.ts,
                    state_names: names(&[
                        "p1", "p2", "p3", "v1", "v2", "v3", "theta1", "theta2", "theta3", "omega1",
                        "omega2", "omega3",
                    ]),
                    input_names: names(&["T", "tau1", "tau2", "tau3"]),
                    input_offset: params.hover_input(),
                })
            }
            ScenarioKind::LqSmoke => {
                let ocp = LinearQuadratic::double_integrator(LQ_TS).into_ocp(
                    horizon,
                    Polyhedron::from_box(&[-0.7], &[0.7])?,
                    Polyhedron::from_box(&[-10.0, -1.0, -0.7], &[10.0, 1.0, 0.7])?,
                    Polyhedron::whole_space(2),
                )?;
                Ok(Self {
                    kind,
                    ocp,
                    ts: LQ_TS,
                    state_names: names(&["x1", "x2"]),
                    input_names: names(&["u"]),
                    input_offset: DVector::zeros(1),
                })
            }
        }
    }

    /// Nominal plant: the OCP's own discrete dynamics.
    pub fn plant(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.ocp.model().dynamics(x, u)
    }

    pub fn physical_input(&self, u: &DVector<f64>) -> DVector<f64> {
        u + &self.input_offset
    }
}
