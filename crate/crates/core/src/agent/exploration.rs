use serde::{Deserialize, Serialize};

/// Exponentially decaying exploration rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSchedule {
    pub eps_start: f64,
    pub eps_end: f64,
    /// Decay constant in environment steps.
    pub eps_decay: f64,
}

impl Default for ExplorationSchedule {
    fn default() -> Self {
        Self { eps_start: 0.9, eps_end: 0.05, eps_decay: 2000.0 }
    }
}

impl ExplorationSchedule {
    /// `eps_end + (eps_start - eps_end) * exp(-steps / eps_decay)`.
    pub fn epsilon_at(&self, steps_done: u64) -> f64 {
        self.eps_end + (self.eps_start - self.eps_end) * (-(steps_done as f64) / self.eps_decay).exp()
    }

    pub fn validate(&self) -> Result<(), String> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.eps_start) || !in_unit(self.eps_end) || self.eps_end > self.eps_start {
            return Err(format!("need 0 <= eps_end <= eps_start <= 1, got {} and {}", self.eps_end, self.eps_start));
        }
        if !(self.eps_decay > 0.0 && self.eps_decay.is_finite()) {
            return Err(format!("eps_decay must be positive, got {}", self.eps_decay));
        }
        Ok(())
    }
}

/// Free-function form of [`ExplorationSchedule::epsilon_at`].
pub fn epsilon_at(schedule: &ExplorationSchedule, steps_done: u64) -> f64 {
    schedule.epsilon_at(steps_done)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_examples() {
        let s = ExplorationSchedule::default();
        assert_eq!(s.epsilon_at(0), 0.9);
        assert!((s.epsilon_at(2000) - (0.05 + 0.85 / std::f64::consts::E)).abs() < 1e-12);
        assert!((s.epsilon_at(u64::MAX) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn non_increasing_and_bounded() {
        let s = ExplorationSchedule::default();
        let mut prev = f64::INFINITY;
        for sd in (0..100_000).step_by(37) {
            let e = s.epsilon_at(sd);
            assert!(e <= prev && (0.05..=0.9).contains(&e));
            prev = e;
        }
    }

    #[test]
    fn rejects_inverted_bounds() {
        let s = ExplorationSchedule { eps_start: 0.1, eps_end: 0.5, eps_decay: 10.0 };
        assert!(s.validate().is_err());
    }
}
