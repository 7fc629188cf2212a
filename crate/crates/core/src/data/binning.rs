use super::aer::{Event, SENSOR_HEIGHT, SENSOR_WIDTH};
use crate::spikes::SpikeTensor;

/// Number of input features per step: 2 polarities x 34 x 34 pixels.
pub const NMNIST_FEATURES: usize = 2 * SENSOR_WIDTH * SENSOR_HEIGHT;

/// Time discretization of an event stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Binning {
    pub t_steps: usize,
    pub bin_width_us: u32,
}

impl Binning {
    /// Binning covering `window_us` with bins of `bin_width_us` (last bin may be partial).
    pub fn for_window(window_us: u32, bin_width_us: u32) -> Self {
        assert!(bin_width_us > 0);
        Self { t_steps: window_us.div_ceil(bin_width_us) as usize, bin_width_us }
    }

    pub fn window_us(&self) -> u64 {
        self.t_steps as u64 * u64::from(self.bin_width_us)
    }
}

/// Bins events into a binary tensor; bins saturate at 1 and events past the
/// last bin are dropped.
pub fn bin_events(events: &[Event], t_steps: usize, bin_width_us: u32) -> SpikeTensor {
    assert!(t_steps >= 1, "t_steps must be at least 1");
    assert!(bin_width_us > 0, "bin width must be positive");
    let mut active: Vec<Vec<u32>> = vec![Vec::new(); t_steps];
    for ev in events {
        let bin = (ev.t_us / bin_width_us) as usize;
        if bin < t_steps {
            active[bin].push(ev.feature_index() as u32);
        }
    }
    SpikeTensor::from_active(NMNIST_FEATURES, active, bin_width_us)
}
