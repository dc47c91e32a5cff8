//! Fixed-memory online quantile tracking.
//!
//! A binner keeps one control value (CV) and nudges it once per laser cycle
//! from the counts of photons that arrived before (early) and at or after
//! (late) the CV. Two stepping rules are provided:
//!
//! * fixed stepping: move a constant amount toward the side with the deficit;
//! * optimized proportional stepping: the signed quantile error
//!   `target - early / (early + late)` is smoothed twice with exponential
//!   moving averages, scaled by `k_pct` percent of the bin count and damped
//!   by a temporal decay `gamma^n` that stops shrinking after
//!   `decay_freeze_cycle` cycles.
//!
//! State is a handful of scalars regardless of how many photons are seen.

use crate::error::{Error, Result};

/// Tuning of the optimized proportional step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    /// Scaling factor K, a percentage of the bin count.
    pub k_pct: f64,
    /// Temporal decay per cycle.
    pub gamma: f64,
    /// Smoothing of the raw quantile error.
    pub beta1: f64,
    /// Smoothing of the step.
    pub beta2: f64,
    /// Cycle after which the decay multiplier is held constant.
    pub decay_freeze_cycle: u64,
    /// Optional bound on `|step|` as a fraction of the bin count.
    pub clip: Option<f64>,
}

impl Default for StepParams {
    fn default() -> Self {
        StepParams {
            k_pct: 3.0,
            gamma: 0.99902,
            beta1: 0.95,
            beta2: 0.8,
            decay_freeze_cycle: 4000,
            clip: None,
        }
    }
}

impl StepParams {
    /// Plain proportional stepping `S_n = K/100 * B * delta_n`.
    pub fn unsmoothed(k_pct: f64) -> Self {
        StepParams {
            k_pct,
            gamma: 1.0,
            beta1: 0.0,
            beta2: 0.0,
            ..StepParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma = {} not in (0, 1]", self.gamma));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad(format!("beta1 = {} not in [0, 1)", self.beta1));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("beta2 = {} not in [0, 1)", self.beta2));
        }
        if !(self.k_pct > 0.0 && self.k_pct.is_finite()) {
            return bad(format!("k_pct = {} must be positive", self.k_pct));
        }
        if let Some(clip) = self.clip {
            if !(clip > 0.0) {
                return bad(format!("clip = {clip} must be positive"));
            }
        }
        Ok(())
    }

    /// Also checks the freeze cycle against the exposure length.
    pub fn validate_for(&self, cycles: usize) -> Result<()> {
        self.validate()?;
        if self.decay_freeze_cycle > cycles as u64 {
            return Err(Error::InvalidParams(format!(
                "decay_freeze_cycle = {} exceeds {cycles} cycles",
                self.decay_freeze_cycle
            )));
        }
        Ok(())
    }

    /// Decay multiplier applied at cycle `n`.
    pub fn decay(&self, n: u64) -> f64 {
        let exp = n.min(self.decay_freeze_cycle);
        self.gamma.powi(exp.min(i32::MAX as u64) as i32)
    }
}

/// Early/late photon counts for one cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CycleObservation {
    pub early: u32,
    pub late: u32,
}

/// Splits a sorted cycle at `cv`; a photon exactly at the CV counts as late.
pub fn observe(cv: f64, cycle: &[f64]) -> CycleObservation {
    let early = cycle.partition_point(|&t| t < cv);
    CycleObservation {
        early: early as u32,
        late: (cycle.len() - early) as u32,
    }
}

/// Like [`observe`], ignoring photons outside `[lo, hi)`.
pub fn observe_within(cv: f64, cycle: &[f64], lo: f64, hi: f64) -> CycleObservation {
    let start = cycle.partition_point(|&t| t < lo);
    let end = cycle.partition_point(|&t| t < hi);
    let split = cycle.partition_point(|&t| t < cv).clamp(start, end);
    CycleObservation {
        early: (split - start) as u32,
        late: (end - split) as u32,
    }
}

/// Signed quantile error `target - early / (early + late)`, zero for an
/// empty cycle.
pub fn delta(target_frac: f64, obs: CycleObservation) -> f64 {
    let n = obs.early + obs.late;
    if n == 0 {
        return 0.0;
    }
    target_frac - obs.early as f64 / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stepping {
    Optimized(StepParams),
    Fixed { step: f64 },
}

/// One quantile tracker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinnerState {
    pub cv: f64,
    pub target_frac: f64,
    pub s_prev: f64,
    pub delta_tilde_prev: f64,
    /// Cycles consumed so far.
    pub n: u64,
    pub stepping: Stepping,
    /// Number of time bins; the scale of the proportional step.
    pub bins: f64,
    /// CV range, `[0, bins]` unless confined to a sub-interval.
    pub lo: f64,
    pub hi: f64,
}

impl BinnerState {
    /// Binner tracking quantile `target_frac` over `[0, bins]`, starting at
    /// `target_frac * bins`.
    pub fn new(target_frac: f64, bins: usize, stepping: Stepping) -> Self {
        let b = bins as f64;
        Self::confined(target_frac, bins, 0.0, b, target_frac * b, stepping)
    }

    /// Binner whose CV stays inside `[lo, hi]` and which only counts photons
    /// in `[lo, hi)`, starting at `start`.
    pub fn confined(
        target_frac: f64,
        bins: usize,
        lo: f64,
        hi: f64,
        start: f64,
        stepping: Stepping,
    ) -> Self {
        debug_assert!(target_frac > 0.0 && target_frac < 1.0);
        debug_assert!(0.0 <= lo && lo <= hi && hi <= bins as f64);
        BinnerState {
            cv: start.clamp(lo, hi),
            target_frac,
            s_prev: 0.0,
            delta_tilde_prev: 0.0,
            n: 0,
            stepping,
            bins: bins as f64,
            lo,
            hi,
        }
    }

    /// Optimized proportional step for one observation.
    pub fn optimized_step(&mut self, params: &StepParams, obs: CycleObservation) {
        let d = delta(self.target_frac, obs);
        let smoothed = params.beta1 * self.delta_tilde_prev + (1.0 - params.beta1) * d;
        let scale = params.k_pct / 100.0 * self.bins;
        let mut step = params.beta2 * self.s_prev
            + (1.0 - params.beta2) * scale * params.decay(self.n) * smoothed;
        if let Some(clip) = params.clip {
            let limit = clip * self.bins;
            step = step.clamp(-limit, limit);
        }
        self.delta_tilde_prev = smoothed;
        self.s_prev = step;
        self.cv = (self.cv + step).clamp(self.lo, self.hi);
        self.n += 1;
    }

    /// Fixed-size step toward the deficit side; no move on a balanced cycle.
    pub fn fixed_step(&mut self, step_size: f64, obs: CycleObservation) {
        let d = delta(self.target_frac, obs);
        let dir = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.cv = (self.cv + step_size * dir).clamp(self.lo, self.hi);
        self.n += 1;
    }

    /// Applies this binner's stepping rule to a precomputed observation.
    pub fn step(&mut self, obs: CycleObservation) {
        match self.stepping {
            Stepping::Optimized(params) => self.optimized_step(&params, obs),
            Stepping::Fixed { step } => self.fixed_step(step, obs),
        }
    }

    /// Observes one sorted cycle and steps.
    pub fn update(&mut self, cycle: &[f64]) -> CycleObservation {
        let obs = if self.is_confined() {
            observe_within(self.cv, cycle, self.lo, self.hi)
        } else {
            observe(self.cv, cycle)
        };
        self.step(obs);
        obs
    }

    pub fn is_confined(&self) -> bool {
        self.lo > 0.0 || self.hi < self.bins
    }
}

/// Runs one binner over every cycle of `stream` and returns its final state.
pub fn track(mut state: BinnerState, stream: &crate::transient::PhotonStream) -> BinnerState {
    for cycle in stream.cycles() {
        state.update(cycle);
    }
    state
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obs(early: u32, late: u32) -> CycleObservation {
        CycleObservation { early, late }
    }

    #[test]
    fn delta_examples() {
        assert_eq!(delta(0.5, obs(3, 1)), -0.25);
        assert_eq!(delta(0.5, obs(2, 2)), 0.0);
        assert_eq!(delta(0.25, obs(0, 4)), 0.25);
        assert_eq!(delta(0.3, obs(0, 0)), 0.0);
    }

    #[test]
    fn observe_examples() {
        assert_eq!(observe(512.0, &[100.2, 600.7]), obs(1, 1));
        assert_eq!(observe(512.0, &[]), obs(0, 0));
        assert_eq!(observe(0.0, &[0.0, 3.0, 9.0]), obs(0, 3));
        // tie counts as late
        assert_eq!(observe(3.0, &[1.0, 3.0, 9.0]), obs(1, 2));
    }

    #[test]
    fn observe_within_ignores_outside() {
        let cycle = [1.0, 5.0, 6.0, 9.0, 20.0];
        assert_eq!(observe_within(5.5, &cycle, 4.0, 10.0), obs(1, 2));
        assert_eq!(observe_within(4.0, &cycle, 4.0, 10.0), obs(0, 3));
        assert_eq!(observe_within(10.0, &cycle, 4.0, 10.0), obs(3, 0));
    }

    #[test]
    fn unsmoothed_step_is_scaled_delta() {
        let p = StepParams {
            k_pct: 1.0,
            ..StepParams::unsmoothed(1.0)
        };
        let mut b = BinnerState::new(0.5, 1024, Stepping::Optimized(p));
        let before = b.cv;
        b.optimized_step(&p, obs(3, 1));
        assert!((b.s_prev - -2.56).abs() < 1e-12);
        assert!((before - b.cv - 2.56).abs() < 1e-12);
    }

    #[test]
    fn fixed_point_without_signal() {
        let p = StepParams::default();
        let mut b = BinnerState::new(0.5, 1024, Stepping::Optimized(p));
        b.optimized_step(&p, obs(2, 2));
        b.optimized_step(&p, obs(0, 0));
        assert_eq!(b.cv, 512.0);
    }

    #[test]
    fn first_default_step_by_hand() {
        // delta_tilde = 0.05 * 0.5 = 0.025; S = 0.2 * 30.72 * 1 * 0.025
        let p = StepParams::default();
        let mut b = BinnerState::new(0.5, 1024, Stepping::Optimized(p));
        b.optimized_step(&p, obs(0, 2));
        assert!((b.delta_tilde_prev - 0.025).abs() < 1e-15);
        assert!((b.s_prev - 0.1536).abs() < 1e-12);
        assert!((b.cv - 512.1536).abs() < 1e-12);
    }

    #[test]
    fn fixed_step_examples() {
        let fixed = Stepping::Fixed { step: 1.0 };
        let mut b = BinnerState::new(0.5, 1024, fixed);
        b.fixed_step(1.0, obs(3, 1));
        assert_eq!(b.cv, 511.0);
        b.fixed_step(1.0, obs(2, 2));
        assert_eq!(b.cv, 511.0);
        let mut edge = BinnerState::confined(0.5, 1024, 0.0, 1024.0, 0.3, fixed);
        edge.fixed_step(1.0, obs(1, 0));
        assert_eq!(edge.cv, 0.0);
    }

    #[test]
    fn decay_freezes() {
        let p = StepParams::default();
        let frozen = p.decay(4000);
        assert_eq!(p.decay(4001), frozen);
        assert_eq!(p.decay(10_000), frozen);
        assert!(p.decay(3999) > frozen);
        assert_eq!(p.decay(0), 1.0);
    }

    #[test]
    fn clip_limits_step() {
        let p = StepParams {
            clip: Some(0.001),
            ..StepParams::unsmoothed(10.0)
        };
        let mut b = BinnerState::new(0.5, 1000, Stepping::Optimized(p));
        b.optimized_step(&p, obs(0, 5));
        assert!((b.cv - 501.0).abs() < 1e-12);
    }

    #[test]
    fn params_validation() {
        assert!(StepParams::default().validate_for(5000).is_ok());
        assert!(StepParams::default().validate_for(3000).is_err());
        for bad in [
            StepParams {
                gamma: 0.0,
                ..StepParams::default()
            },
            StepParams {
                gamma: 1.01,
                ..StepParams::default()
            },
            StepParams {
                beta1: 1.0,
                ..StepParams::default()
            },
            StepParams {
                beta2: -0.1,
                ..StepParams::default()
            },
            StepParams {
                k_pct: 0.0,
                ..StepParams::default()
            },
            StepParams {
                clip: Some(0.0),
                ..StepParams::default()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn deterministic_single_timestamp_converges() {
        let p = StepParams::unsmoothed(1.0);
        let target = 700.25;
        let mut b = BinnerState::new(0.5, 1024, Stepping::Optimized(p));
        let mut gap = (b.cv - target).abs();
        for _ in 0..2000 {
            let prev_gap = gap;
            b.update(&[target]);
            gap = (b.cv - target).abs();
            if b.s_prev.abs() < prev_gap {
                assert!(gap <= prev_gap, "{gap} > {prev_gap}");
            }
        }
        // steps are +-5.12 bins around the photon
        assert!(gap <= 5.12 + 1e-9);
    }

    #[test]
    fn median_of_uniform_draws() {
        use rand::{Rng, SeedableRng};
        let p = StepParams::default();
        let mut hits = 0;
        for seed in 0..100u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut b = BinnerState::new(0.5, 1024, Stepping::Optimized(p));
            for _ in 0..5000 {
                // triangular on [200, 400], median 300
                let mut cycle = [
                    200.0 + 100.0 * (rng.gen::<f64>() + rng.gen::<f64>()),
                    200.0 + 100.0 * (rng.gen::<f64>() + rng.gen::<f64>()),
                ];
                cycle.sort_by(f64::total_cmp);
                b.update(&cycle);
            }
            if (b.cv - 300.0).abs() < 5.0 {
                hits += 1;
            }
        }
        assert!(hits >= 95, "{hits}");
    }

    proptest! {
        #[test]
        fn delta_is_bounded(target in 0.01f64..0.99, e in 0u32..1000, l in 0u32..1000) {
            let d = delta(target, obs(e, l));
            prop_assert!(d.abs() <= target.max(1.0 - target));
            prop_assert!(d.abs() < 1.0);
        }

        #[test]
        fn cv_stays_clamped(
            target in 0.01f64..0.99,
            k in 0.1f64..200.0,
            seq in proptest::collection::vec((0u32..20, 0u32..20), 1..200),
        ) {
            let p = StepParams { k_pct: k, ..StepParams::default() };
            let mut b = BinnerState::new(target, 1024, Stepping::Optimized(p));
            let mut f = BinnerState::new(target, 1024, Stepping::Fixed { step: 7.0 });
            for (e, l) in seq {
                b.step(obs(e, l));
                f.step(obs(e, l));
                prop_assert!((0.0..=1024.0).contains(&b.cv));
                prop_assert!((0.0..=1024.0).contains(&f.cv));
            }
        }

        #[test]
        fn smoothed_path_reduces_to_basic_step(
            target in 0.01f64..0.99,
            k in 0.1f64..10.0,
            seq in proptest::collection::vec((0u32..20, 0u32..20), 1..100),
        ) {
            let p = StepParams::unsmoothed(k);
            let mut b = BinnerState::new(target, 1024, Stepping::Optimized(p));
            let mut cv = target * 1024.0;
            for (e, l) in seq {
                b.step(obs(e, l));
                cv = (cv + k / 100.0 * 1024.0 * delta(target, obs(e, l))).clamp(0.0, 1024.0);
                prop_assert_eq!(b.cv, cv);
            }
        }
    }
}
