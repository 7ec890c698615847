//! Synthetic observing networks, observation operators and the unknown
//! model-error shocks applied to the nature run.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Error variance of direct observations (K^2).
pub const LINEAR_ERROR_VAR: f64 = 1.0;

/// Error variance of arctangent observations: `0.01 x` the linear one.
pub const ARCTAN_ERROR_VAR: f64 = 0.01 * LINEAR_ERROR_VAR;

/// Observation operator applied to the selected state components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObsKind {
    /// `h(x) = x`
    Linear,
    /// `h(x) = arctan(x)`, elementwise
    Arctan,
}

impl ObsKind {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ObsKind::Linear => x,
            ObsKind::Arctan => x.atan(),
        }
    }

    /// `dh/dx` at `x`.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            ObsKind::Linear => 1.0,
            ObsKind::Arctan => 1.0 / (1.0 + x * x),
        }
    }

    pub fn default_error_var(self) -> f64 {
        match self {
            ObsKind::Linear => LINEAR_ERROR_VAR,
            ObsKind::Arctan => ARCTAN_ERROR_VAR,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "linear-identity" | "identity" => Ok(ObsKind::Linear),
            "arctan" | "selected-arctan" => Ok(ObsKind::Arctan),
            other => Err(Error::Config(format!("unknown observation kind `{other}`"))),
        }
    }
}

/// Observed values together with the network that produced them.
///
/// A network without values (`values` empty) is a skeleton produced by
/// [`make_network`]; [`observe`] fills it in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationBatch {
    pub values: Vec<f64>,
    /// Flattened state indices, one per observation.
    pub indices: Vec<usize>,
    pub kind: ObsKind,
    /// Per-observation error variance.
    pub error_var: Vec<f64>,
    pub state_dim: usize,
}

impl ObservationBatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// True when only part of the state is observed.
    pub fn is_selected(&self) -> bool {
        self.indices.len() < self.state_dim
    }

    /// Label in the `linear-identity | arctan | selected-arctan` vocabulary.
    pub fn label(&self) -> &'static str {
        match (self.kind, self.is_selected()) {
            (ObsKind::Linear, false) => "linear-identity",
            (ObsKind::Linear, true) => "selected-linear",
            (ObsKind::Arctan, false) => "arctan",
            (ObsKind::Arctan, true) => "selected-arctan",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.error_var.len() != self.indices.len() {
            return Err(Error::Dimension {
                expected: self.indices.len(),
                found: self.error_var.len(),
            });
        }
        if !self.values.is_empty() {
            check_dim(self.indices.len(), self.values.len())?;
            if self.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain("observation values must be finite".into()));
            }
        }
        if self.error_var.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Domain("observation error variances must be positive".into()));
        }
        let mut seen = vec![false; self.state_dim];
        for &i in &self.indices {
            if i >= self.state_dim || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Domain(format!(
                    "observation index {i} duplicated or outside state of size {}",
                    self.state_dim
                )));
            }
        }
        Ok(())
    }
}

/// Draws the observing network for one cycle.
///
/// Full coverage observes every component in order; partial coverage draws
/// `round(coverage * state_dim)` distinct indices uniformly, fresh on every
/// call. `error_var` overrides the kind's default variance.
pub fn make_network<R: Rng + ?Sized>(
    kind: ObsKind,
    coverage: f64,
    state_dim: usize,
    error_var: Option<f64>,
    rng: &mut R,
) -> Result<ObservationBatch> {
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(Error::Config(format!("obs.coverage must lie in (0, 1], got {coverage}")));
    }
    let count = (coverage * state_dim as f64).round() as usize;
    if count == 0 {
        return Err(Error::Config(format!(
            "coverage {coverage} observes nothing in a state of size {state_dim}"
        )));
    }
    let indices = if count >= state_dim {
        (0..state_dim).collect()
    } else {
        let mut idx = sample(rng, state_dim, count).into_vec();
        idx.sort_unstable();
        idx
    };
    let var = error_var.unwrap_or_else(|| kind.default_error_var());
    if !(var > 0.0) {
        return Err(Error::Config(format!("obs.error_var must be positive, got {var}")));
    }
    Ok(ObservationBatch {
        values: Vec::new(),
        error_var: vec![var; indices.len()],
        indices,
        kind,
        state_dim,
    })
}

/// `h(member[indices])`, without noise.
pub fn predicted_obs(member: &[f64], net: &ObservationBatch) -> Result<Vec<f64>> {
    check_dim(net.state_dim, member.len())?;
    Ok(net.indices.iter().map(|&i| net.kind.apply(member[i])).collect())
}

/// Synthesizes observations of `truth` on the network with Gaussian errors.
pub fn observe<R: Rng + ?Sized>(
    truth: &[f64],
    net: &ObservationBatch,
    rng: &mut R,
) -> Result<ObservationBatch> {
    observe_with_noise_scale(truth, net, 1.0, rng)
}

/// Like [`observe`], with the noise standard deviation multiplied by
/// `noise_scale` (0 gives perfect observations).
pub fn observe_with_noise_scale<R: Rng + ?Sized>(
    truth: &[f64],
    net: &ObservationBatch,
    noise_scale: f64,
    rng: &mut R,
) -> Result<ObservationBatch> {
    let mut values = predicted_obs(truth, net)?;
    for (v, var) in values.iter_mut().zip(&net.error_var) {
        let e: f64 = rng.sample(StandardNormal);
        *v += noise_scale * var.sqrt() * e;
    }
    let out = ObservationBatch {
        values,
        ..net.clone()
    };
    out.validate()?;
    Ok(out)
}

/// Composite stochastic shock: independent `(probability, amplitude)` pairs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ShockProcess {
    pub pairs: Vec<(f64, f64)>,
}

impl ShockProcess {
    pub fn new(pairs: Vec<(f64, f64)>) -> Result<Self> {
        for &(p, a) in &pairs {
            if !(0.0..=1.0).contains(&p) || !(a > 0.0) {
                return Err(Error::Config(format!(
                    "shock pair ({p}, {a}) needs 0 <= p <= 1 and a > 0"
                )));
            }
        }
        Ok(Self { pairs })
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Applies the shock processes to a truth state.
///
/// Each process fires with its own probability; a firing process adds
/// independent zero-mean Gaussian noise with standard deviation
/// `amplitude * |truth_i|` to every component. Returns the shocked state and
/// the number of processes that fired.
pub fn apply_shocks<R: Rng + ?Sized>(
    truth: &[f64],
    proc: &ShockProcess,
    rng: &mut R,
) -> (Vec<f64>, usize) {
    let mut out = truth.to_vec();
    let mut fired = 0;
    for &(p, a) in &proc.pairs {
        let fire = Bernoulli::new(p).expect("validated probability").sample(rng);
        if !fire {
            continue;
        }
        fired += 1;
        for (o, t) in out.iter_mut().zip(truth) {
            let e: f64 = rng.sample(StandardNormal);
            *o += a * t.abs() * e;
        }
    }
    (out, fired)
}
