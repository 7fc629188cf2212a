//! Discrete-time leaky integrate-and-fire dynamics for one layer.
//!
//! One step advances every neuron of a layer as
//!
//! ```text
//! I[n+1] = beta * I[n] + ff_drive + rec_drive + i_ext
//! U[n+1] = alpha * U[n] + I[n] - r * S[n]
//! S[n+1] = 1 if U[n+1] >= threshold else 0
//! ```
//!
//! with `alpha = exp(-dt / tau_mem)`, `beta = exp(-dt / tau_syn)` and `r` the
//! reset magnitude (1 for [`ResetMode::SubtractSpike`], the threshold for
//! [`ResetMode::SubtractThreshold`]). The weighted input sums are computed by
//! the caller and handed in as drives.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum ResetMode {
    /// Subtract the spike itself (magnitude 1) from the membrane.
    #[default]
    SubtractSpike,
    /// Subtract the firing threshold from the membrane on a spike.
    SubtractThreshold,
}

impl ResetMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ResetMode::SubtractSpike => "subtract-spike",
            ResetMode::SubtractThreshold => "subtract-threshold",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "subtract-spike" => Some(ResetMode::SubtractSpike),
            "subtract-threshold" => Some(ResetMode::SubtractThreshold),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeuronConfig {
    pub tau_mem: f64,
    pub tau_syn: f64,
    pub dt: f64,
    pub threshold: f64,
    pub i_ext: f64,
    pub reset_mode: ResetMode,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        Self { tau_mem: 32.0, tau_syn: 4.0, dt: 1.0, threshold: 1.25, i_ext: 0.0, reset_mode: ResetMode::SubtractSpike }
    }
}

impl NeuronConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.dt) {
            return Err(Error::InvalidConfig(format!("dt must be > 0, got {}", self.dt)));
        }
        if !positive(self.tau_mem) {
            return Err(Error::InvalidConfig(format!("tau_mem must be > 0, got {}", self.tau_mem)));
        }
        if !positive(self.tau_syn) {
            return Err(Error::InvalidConfig(format!("tau_syn must be > 0, got {}", self.tau_syn)));
        }
        if !positive(self.threshold) {
            return Err(Error::NonPositiveThreshold(self.threshold));
        }
        if !self.i_ext.is_finite() {
            return Err(Error::InvalidConfig("i_ext must be finite".into()));
        }
        Ok(())
    }

    /// Amount subtracted from the membrane after a spike.
    pub fn reset_magnitude(&self) -> f64 {
        match self.reset_mode {
            ResetMode::SubtractSpike => 1.0,
            ResetMode::SubtractThreshold => self.threshold,
        }
    }
}

/// Membrane and synaptic decay factors `(alpha, beta)`.
pub fn decay_constants(cfg: &NeuronConfig) -> Result<(f64, f64)> {
    for (name, v) in [("dt", cfg.dt), ("tau_mem", cfg.tau_mem), ("tau_syn", cfg.tau_syn)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
        }
    }
    Ok(((-cfg.dt / cfg.tau_mem).exp(), (-cfg.dt / cfg.tau_syn).exp()))
}

/// Returns a copy of `cfg` with a new firing threshold.
pub fn set_threshold(cfg: &NeuronConfig, phi: f64) -> Result<NeuronConfig> {
    if !(phi.is_finite() && phi > 0.0) {
        return Err(Error::NonPositiveThreshold(phi));
    }
    Ok(NeuronConfig { threshold: phi, ..*cfg })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    pub u: Vec<f64>,
    pub i: Vec<f64>,
    pub s: Vec<f64>,
}

impl LayerState {
    pub fn zeros(n: usize) -> Self {
        Self { u: vec![0.0; n], i: vec![0.0; n], s: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// Advances the state one step in place, given the summed feed-forward and
    /// recurrent drive. Same arithmetic, in the same order, as
    /// [`step_current`] followed by [`step_membrane`].
    pub fn advance(&mut self, dyn_: &Dynamics, drive: &[f64]) {
        self.advance_with(dyn_, drive, heaviside);
    }

    /// Like [`advance`](Self::advance) but with a custom spike function of
    /// `(u_next, threshold)`. Used for the smoothed relaxation in gradient checks.
    #[allow(clippy::needless_range_loop)]
    pub fn advance_with(&mut self, dyn_: &Dynamics, drive: &[f64], spike: impl Fn(f64, f64) -> f64) {
        debug_assert_eq!(drive.len(), self.len());
        let Dynamics { alpha, beta, threshold, reset, i_ext } = *dyn_;
        for k in 0..self.u.len() {
            let i_now = self.i[k];
            let u_next = alpha * self.u[k] + i_now - reset * self.s[k];
            self.i[k] = beta * i_now + drive[k] + i_ext;
            self.u[k] = u_next;
            self.s[k] = spike(u_next, threshold);
        }
    }
}

/// Spike emission rule: fires when the membrane reaches the threshold.
#[inline]
pub fn heaviside(u: f64, threshold: f64) -> f64 {
    if u >= threshold {
        1.0
    } else {
        0.0
    }
}

/// Scalars needed per step, resolved once from a [`NeuronConfig`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dynamics {
    pub alpha: f64,
    pub beta: f64,
    pub threshold: f64,
    pub reset: f64,
    pub i_ext: f64,
}

impl Dynamics {
    pub fn from_config(cfg: &NeuronConfig) -> Result<Self> {
        cfg.validate()?;
        let (alpha, beta) = decay_constants(cfg)?;
        Ok(Self { alpha, beta, threshold: cfg.threshold, reset: cfg.reset_magnitude(), i_ext: cfg.i_ext })
    }
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::LengthMismatch { expected, actual });
    }
    Ok(())
}

/// Next synaptic current `beta * I[n] + ff_drive + rec_drive + i_ext`.
pub fn step_current(state: &LayerState, cfg: &NeuronConfig, ff_drive: &[f64], rec_drive: &[f64]) -> Result<Vec<f64>> {
    let n = state.len();
    check_len(n, state.i.len())?;
    check_len(n, ff_drive.len())?;
    check_len(n, rec_drive.len())?;
    let (_, beta) = decay_constants(cfg)?;
    Ok(state
        .i
        .iter()
        .zip(ff_drive.iter().zip(rec_drive))
        .map(|(&i, (&ff, &rec))| beta * i + (ff + rec) + cfg.i_ext)
        .collect())
}

/// Next membrane potential and spikes. The membrane integrates the current of
/// the present step, `I[n]`, stored in `state`.
pub fn step_membrane(state: &LayerState, cfg: &NeuronConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = state.len();
    check_len(n, state.i.len())?;
    check_len(n, state.s.len())?;
    let (alpha, _) = decay_constants(cfg)?;
    let reset = cfg.reset_magnitude();
    let mut u_next = Vec::with_capacity(n);
    let mut s_next = Vec::with_capacity(n);
    for k in 0..n {
        let u = alpha * state.u[k] + state.i[k] - reset * state.s[k];
        u_next.push(u);
        s_next.push(heaviside(u, cfg.threshold));
    }
    Ok((u_next, s_next))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg_with(alpha: f64, beta: f64, threshold: f64) -> NeuronConfig {
        // dt = 1 so tau = -1 / ln(decay)
        NeuronConfig {
            tau_mem: -1.0 / alpha.ln(),
            tau_syn: -1.0 / beta.ln(),
            dt: 1.0,
            threshold,
            i_ext: 0.0,
            reset_mode: ResetMode::SubtractSpike,
        }
    }

    #[test]
    fn decay_constants_unit_taus() {
        let cfg = NeuronConfig { tau_mem: 1.0, tau_syn: 1.0, dt: 1.0, ..Default::default() };
        let (a, b) = decay_constants(&cfg).unwrap();
        assert!((a - 0.36788).abs() < 1e-5);
        assert!((b - 0.36788).abs() < 1e-5);
    }

    #[test]
    fn decay_constants_small_dt() {
        let cfg = NeuronConfig { tau_mem: 1.0, tau_syn: 1.0, dt: 1e-9, ..Default::default() };
        let (a, b) = decay_constants(&cfg).unwrap();
        assert!((a - 1.0).abs() < 1e-8 && a < 1.0);
        assert!((b - 1.0).abs() < 1e-8 && b < 1.0);
    }

    #[test]
    fn decay_constants_mixed_taus() {
        let cfg = NeuronConfig { tau_mem: 10.0, tau_syn: 2.0, dt: 1.0, ..Default::default() };
        let (a, b) = decay_constants(&cfg).unwrap();
        // exp(-0.1), exp(-0.5) to 15 digits
        assert!((a - 0.904_837_418_035_960).abs() < 1e-14);
        assert!((b - 0.606_530_659_712_633).abs() < 1e-14);
    }

    #[test]
    fn decay_constants_reject_non_positive() {
        for cfg in [
            NeuronConfig { dt: 0.0, ..Default::default() },
            NeuronConfig { tau_mem: -1.0, ..Default::default() },
            NeuronConfig { tau_syn: 0.0, ..Default::default() },
        ] {
            assert!(matches!(decay_constants(&cfg), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn current_zero_fixed_point() {
        let st = LayerState::zeros(3);
        let i = step_current(&st, &NeuronConfig::default(), &[0.0; 3], &[0.0; 3]).unwrap();
        assert_eq!(i, vec![0.0; 3]);
    }

    #[test]
    fn current_hand_simulated() {
        let cfg = cfg_with(0.9, 0.5, 1.25);
        let st = LayerState { u: vec![0.0], i: vec![2.0], s: vec![0.0] };
        let i = step_current(&st, &cfg, &[1.0], &[0.0]).unwrap();
        assert!((i[0] - 2.0).abs() < 1e-12);

        let cfg = NeuronConfig { i_ext: 0.1, ..cfg };
        let st = LayerState::zeros(1);
        let i = step_current(&st, &cfg, &[0.0], &[0.0]).unwrap();
        assert!((i[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn current_length_mismatch() {
        let st = LayerState::zeros(3);
        let err = step_current(&st, &NeuronConfig::default(), &[0.0; 2], &[0.0; 3]).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { expected: 3, actual: 2 }));
    }

    #[test]
    fn membrane_resting_is_silent() {
        let st = LayerState::zeros(4);
        let (u, s) = step_membrane(&st, &NeuronConfig::default()).unwrap();
        assert_eq!(u, vec![0.0; 4]);
        assert_eq!(s, vec![0.0; 4]);
    }

    #[test]
    fn membrane_hand_simulated() {
        let cfg = cfg_with(0.9, 0.5, 1.25);
        let st = LayerState { u: vec![1.0], i: vec![0.5], s: vec![0.0] };
        let (u, s) = step_membrane(&st, &cfg).unwrap();
        assert!((u[0] - 1.4).abs() < 1e-12);
        assert_eq!(s[0], 1.0);

        let st = LayerState { s: vec![1.0], ..st };
        let (u, s) = step_membrane(&st, &cfg).unwrap();
        assert!((u[0] - 0.4).abs() < 1e-12);
        assert_eq!(s[0], 0.0);
    }

    #[test]
    fn membrane_spikes_at_equality() {
        let cfg = NeuronConfig { threshold: 1.0, ..Default::default() };
        let st = LayerState { u: vec![0.0], i: vec![1.0], s: vec![0.0] };
        let (u, s) = step_membrane(&st, &cfg).unwrap();
        assert_eq!(u[0], 1.0);
        assert_eq!(s[0], 1.0);
    }

    #[test]
    fn subtract_threshold_reset() {
        let cfg = NeuronConfig { threshold: 5.0, reset_mode: ResetMode::SubtractThreshold, ..cfg_with(0.9, 0.5, 5.0) };
        let st = LayerState { u: vec![6.0], i: vec![0.0], s: vec![1.0] };
        let (u, _) = step_membrane(&st, &cfg).unwrap();
        assert!((u[0] - (0.9 * 6.0 - 5.0)).abs() < 1e-12);
    }

    #[test]
    fn threshold_setting() {
        let base = NeuronConfig::default();
        assert_eq!(base.threshold, 1.25);
        let raised = set_threshold(&base, 5.0).unwrap();
        assert_eq!(raised.threshold, 5.0);
        assert_eq!(NeuronConfig { threshold: 1.25, ..raised }, base);
        assert_eq!(set_threshold(&base, 1.25).unwrap(), base);
        let trip = set_threshold(&set_threshold(&base, 10.0).unwrap(), 1.25).unwrap();
        assert_eq!(trip, base);
        assert!(matches!(set_threshold(&base, 0.0), Err(Error::NonPositiveThreshold(_))));
        assert!(matches!(set_threshold(&base, -2.0), Err(Error::NonPositiveThreshold(_))));
    }

    #[test]
    fn advance_matches_pure_steps() {
        let cfg = NeuronConfig { i_ext: 0.03, ..Default::default() };
        let dynamics = Dynamics::from_config(&cfg).unwrap();
        let mut st = LayerState { u: vec![1.3, 0.2], i: vec![0.4, -0.1], s: vec![1.0, 0.0] };
        let ff = [0.7, 0.05];
        let zero = [0.0, 0.0];
        let i_next = step_current(&st, &cfg, &ff, &zero).unwrap();
        let (u_next, s_next) = step_membrane(&st, &cfg).unwrap();
        st.advance(&dynamics, &ff);
        assert_eq!(st.i, i_next);
        assert_eq!(st.u, u_next);
        assert_eq!(st.s, s_next);
    }

    #[test]
    fn leak_decay_without_drive() {
        let cfg = NeuronConfig { threshold: 100.0, ..Default::default() };
        let dynamics = Dynamics::from_config(&cfg).unwrap();
        let mut st = LayerState { u: vec![2.0], i: vec![0.0], s: vec![0.0] };
        let mut expected = 2.0;
        for _ in 0..50 {
            st.advance(&dynamics, &[0.0]);
            expected *= dynamics.alpha;
            assert_eq!(st.u[0], expected);
        }
    }
}
