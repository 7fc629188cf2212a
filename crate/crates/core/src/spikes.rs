/// Binary spike trains over `features` inputs and `t_steps` time steps.
///
/// Stored sparsely: for each step, the sorted list of features that spiked.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpikeTensor {
    features: usize,
    active: Vec<Vec<u32>>,
    bin_width_us: u32,
}

impl SpikeTensor {
    pub fn zeros(features: usize, t_steps: usize, bin_width_us: u32) -> Self {
        Self { features, active: vec![Vec::new(); t_steps], bin_width_us }
    }

    /// Builds a tensor from per-step active feature lists. Lists are sorted and
    /// deduplicated; out-of-range indices panic.
    pub fn from_active(features: usize, mut active: Vec<Vec<u32>>, bin_width_us: u32) -> Self {
        for step in &mut active {
            step.sort_unstable();
            step.dedup();
            if let Some(&last) = step.last() {
                assert!((last as usize) < features, "feature {last} out of range {features}");
            }
        }
        Self { features, active, bin_width_us }
    }

    /// Builds a tensor from a dense `t_steps x features` 0/1 matrix (row per step).
    pub fn from_dense(features: usize, dense: &[Vec<u8>], bin_width_us: u32) -> Self {
        let active = dense
            .iter()
            .map(|row| {
                assert_eq!(row.len(), features);
                row.iter().enumerate().filter(|(_, &v)| v != 0).map(|(k, _)| k as u32).collect()
            })
            .collect();
        Self { features, active, bin_width_us }
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn t_steps(&self) -> usize {
        self.active.len()
    }

    pub fn bin_width_us(&self) -> u32 {
        self.bin_width_us
    }

    /// Features that spiked at `step`, ascending.
    pub fn active(&self, step: usize) -> &[u32] {
        &self.active[step]
    }

    pub fn get(&self, feature: usize, step: usize) -> bool {
        self.active[step].binary_search(&(feature as u32)).is_ok()
    }

    pub fn set(&mut self, feature: usize, step: usize) {
        assert!(feature < self.features);
        let row = &mut self.active[step];
        if let Err(pos) = row.binary_search(&(feature as u32)) {
            row.insert(pos, feature as u32);
        }
    }

    pub fn count_ones(&self) -> usize {
        self.active.iter().map(Vec::len).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        self.active
            .iter()
            .map(|row| {
                let mut dense = vec![0u8; self.features];
                for &k in row {
                    dense[k as usize] = 1;
                }
                dense
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_round_trip() {
        let dense = vec![vec![0, 1, 0, 1], vec![0, 0, 0, 0], vec![1, 1, 1, 1]];
        let t = SpikeTensor::from_dense(4, &dense, 1000);
        assert_eq!(t.t_steps(), 3);
        assert_eq!(t.count_ones(), 6);
        assert_eq!(t.to_dense(), dense);
        assert!(t.get(3, 0));
        assert!(!t.get(2, 0));
    }

    #[test]
    fn from_active_dedups() {
        let t = SpikeTensor::from_active(5, vec![vec![4, 1, 1, 0]], 1);
        assert_eq!(t.active(0), &[0, 1, 4]);
    }

    #[test]
    fn set_is_idempotent() {
        let mut t = SpikeTensor::zeros(3, 2, 1);
        t.set(2, 1);
        t.set(2, 1);
        t.set(0, 1);
        assert_eq!(t.active(1), &[0, 2]);
        assert_eq!(t.count_ones(), 2);
    }
}
