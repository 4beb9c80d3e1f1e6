/// Reduce-on-plateau learning-rate schedule.
///
/// The rate is always `initial_lr · factor^k`, recomputed from the
/// reduction count rather than multiplied in place.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauState {
    pub initial_lr: f64,
    pub factor: f64,
    pub patience: usize,
    /// Minimum decrease that counts as an improvement.
    pub delta: f64,
    pub best: f64,
    /// Epochs since the last improvement or reduction.
    pub counter: usize,
    pub reductions: u32,
}

impl PlateauState {
    pub fn new(initial_lr: f64) -> Self {
        PlateauState {
            initial_lr,
            factor: 0.2,
            patience: 20,
            delta: 1e-6,
            best: f64::INFINITY,
            counter: 0,
            reductions: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.initial_lr * self.factor.powi(self.reductions as i32)
    }

    /// Records one epoch's metric and returns the learning rate for the next.
    pub fn step(&mut self, metric: f64) -> f64 {
        if metric < self.best - self.delta {
            self.best = metric;
            self.counter = 0;
        } else {
            self.counter += 1;
            if self.counter > self.patience {
                self.reductions += 1;
                self.counter = 0;
                log::info!("validation plateau, learning rate now {:e}", self.lr());
            }
        }
        self.lr()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twenty_one_flat_epochs_reduce_once() {
        let mut s = PlateauState::new(1e-3);
        s.step(0.5);
        for _ in 0..20 {
            assert_eq!(s.step(0.5), 1e-3);
        }
        assert_eq!(s.step(0.5), 2e-4);
        assert_eq!(s.counter, 0);
    }

    #[test]
    fn improvement_resets_counter() {
        let mut s = PlateauState::new(1e-3);
        s.step(1.0);
        for _ in 0..19 {
            s.step(1.0);
        }
        assert_eq!(s.step(0.5), 1e-3);
        assert_eq!(s.counter, 0);
    }

    #[test]
    fn sub_delta_gain_is_not_improvement() {
        let mut s = PlateauState::new(1e-3);
        s.step(1.0);
        s.step(1.0 - 5e-7);
        assert_eq!(s.counter, 1);
    }

    #[test]
    fn strictly_improving_run_keeps_rate() {
        let mut s = PlateauState::new(1e-3);
        for k in 0..100 {
            assert_eq!(s.step(1.0 - k as f64 * 1e-3), 1e-3);
        }
    }
}
