//! Step sizes `γ_t`, their decrement constants, and the step ceiling.

use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::analysis::{step_cap, MkInputs, StepCap};
use crate::problems::ConstantsBundle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StepRule {
    /// `γ_t = a0/√(t + a1)`.
    Decaying { a0: f64, a1: f64 },
    /// `γ_t = gamma`, the `a1 → ∞` limit.
    Constant { gamma: f64 },
}

impl StepRule {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            StepRule::Decaying { a0, a1 } => a0 / (t as f64 + a1).sqrt(),
            StepRule::Constant { gamma } => gamma,
        }
    }

    fn validate(&self) -> Result<(), EngineError> {
        match *self {
            StepRule::Decaying { a0, a1 } if !(a0 > 0.0 && a0.is_finite()) || !(a1 >= 1.0 && a1.is_finite()) => {
                Err(EngineError::Config(format!("need a0 > 0 and a1 >= 1, got a0 = {a0}, a1 = {a1}")))
            }
            StepRule::Constant { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
                Err(EngineError::Config(format!("constant step must be positive, got {gamma}")))
            }
            _ => Ok(()),
        }
    }
}

/// What to do with the step ceiling computed from the constants.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapMode {
    /// Do not compute it.
    Off,
    /// Compute it and warn when the steps exceed it.
    #[default]
    Check,
    /// Clip the steps to it.
    Enforce,
}

/// `γ_0, …, γ_{T+1}` with `â = sup (γ_t − γ_{t+1})/γ_t²` and
/// `a = sup γ_t/γ_{t+1}` over `t ≤ T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepSchedule {
    rule: StepRule,
    horizon: usize,
    gammas: Vec<f64>,
    a_hat: f64,
    a_ratio: f64,
    cap: Option<StepCap>,
    clipped: bool,
    warning: Option<String>,
}

fn decrement_constants(g: &[f64]) -> (f64, f64) {
    let mut a_hat = 0.0f64;
    let mut a_ratio = 1.0f64;
    for w in g.windows(2) {
        a_hat = a_hat.max((w[0] - w[1]) / (w[0] * w[0]));
        a_ratio = a_ratio.max(w[0] / w[1]);
    }
    (a_hat, a_ratio)
}

impl StepSchedule {
    /// Uncapped schedule over `t = 0..=horizon + 1`.
    pub fn new(rule: StepRule, horizon: usize) -> Result<Self, EngineError> {
        rule.validate()?;
        let gammas: Vec<f64> = (0..=horizon + 1).map(|t| rule.at(t)).collect();
        let (a_hat, a_ratio) = decrement_constants(&gammas);
        Ok(Self { rule, horizon, gammas, a_hat, a_ratio, cap: None, clipped: false, warning: None })
    }

    pub fn rule(&self) -> StepRule {
        self.rule
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `γ_t` for `t ≤ horizon + 1`.
    pub fn gamma(&self, t: usize) -> f64 {
        self.gammas[t]
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn a_hat(&self) -> f64 {
        self.a_hat
    }

    pub fn a_ratio(&self) -> f64 {
        self.a_ratio
    }

    pub fn gamma_max(&self) -> f64 {
        self.gammas.iter().copied().fold(0.0, f64::max)
    }

    /// `0 ≤ γ_t − γ_{t+1} ≤ â γ_t²` over the horizon.
    pub fn decrement_holds(&self) -> bool {
        self.gammas.windows(2).all(|w| {
            let dec = w[0] - w[1];
            dec >= 0.0 && dec <= self.a_hat * w[0] * w[0] * (1.0 + 1e-12)
        }) && self.gammas.iter().all(|&g| g > 0.0)
    }

    pub fn cap(&self) -> Option<StepCap> {
        self.cap
    }

    /// Steps were clipped to the ceiling.
    pub fn clipped(&self) -> bool {
        self.clipped
    }

    pub fn warning(&self) -> Option<&str> {
        self.warning.as_deref()
    }

    /// The ceiling is known and every step respects it.
    pub fn within_cap(&self) -> bool {
        self.cap.is_some_and(|c| self.gamma_max() <= c.value * (1.0 + 1e-12))
    }

    /// `Σ_{t=0}^{T} γ_{t+1}`.
    pub fn step_mass(&self) -> f64 {
        self.gammas[1..].iter().sum()
    }
}

/// Builds the schedule and, unless `mode` is `Off`, evaluates the ceiling
/// `min{1, ρ̄/(2σₒ), c0/(2C̃)}` from `constants`.
///
/// Under `Enforce` the steps are clipped to the ceiling computed from the
/// unclipped decrement constants. Clipping can only lower `â` and `a`, which
/// lowers `C̃` and raises the ceiling, so the clipped schedule also satisfies
/// the ceiling recomputed from its own constants; that recomputed value is
/// the one stored.
pub fn make_step_schedule(
    rule: StepRule,
    horizon: usize,
    constants: Option<&ConstantsBundle>,
    mode: CapMode,
) -> Result<StepSchedule, EngineError> {
    let mut sched = StepSchedule::new(rule, horizon)?;
    let Some(constants) = constants.filter(|_| mode != CapMode::Off) else {
        return Ok(sched);
    };
    let inputs = MkInputs::from_bundle(constants).map_err(|e| EngineError::Config(e.to_string()))?;
    let cap = step_cap(&inputs, sched.a_hat, sched.a_ratio);
    if !(cap.value > 0.0) {
        return Err(EngineError::Config(format!(
            "step ceiling is {} (c0 = {}, rho_bar = {}); no positive step satisfies it",
            cap.value, inputs.c0, inputs.rho_bar
        )));
    }
    let exceeds = sched.gamma_max() > cap.value;
    match mode {
        CapMode::Enforce if exceeds => {
            sched.gammas.iter_mut().for_each(|g| *g = g.min(cap.value));
            let (a_hat, a_ratio) = decrement_constants(&sched.gammas);
            sched.a_hat = a_hat;
            sched.a_ratio = a_ratio;
            sched.cap = Some(step_cap(&inputs, a_hat, a_ratio));
            sched.clipped = true;
            sched.warning = Some(format!("step ceiling binds: steps clipped at {:.6e}", cap.value));
            log::warn!("step ceiling binds: steps clipped at {:.6e}", cap.value);
        }
        _ => {
            sched.cap = Some(cap);
            if exceeds {
                let msg = format!(
                    "largest step {:.6e} exceeds the ceiling {:.6e}; certificates are non-binding",
                    sched.gamma_max(),
                    cap.value
                );
                log::warn!("{msg}");
                sched.warning = Some(msg);
            }
        }
    }
    Ok(sched)
}
