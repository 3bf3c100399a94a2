//! Open-loop rollout estimator, expected network-induced error as a function
//! of age, and the per-link value-of-information.
//!
//! The same [`EstimatorView`] type is used for the controller and for the
//! base station; the base station simply receives samples earlier.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::SubSystemParams;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EstimationError {
    #[error("no sample has been received yet")]
    PreGenesis,
    #[error("sample of step {step} is not newer than the held step {held}")]
    StaleSample { step: u64, held: i64 },
    #[error("sample of step {step} lies in the future of step {current}")]
    FutureSample { step: u64, current: u64 },
}

// ============================================================================
// Information-set summary
// ============================================================================

/// Summary of an information set: newest received sample, its step, the
/// inputs applied since then and the receiver's current step.
///
/// Before the first reception the view behaves as if a zero observation had
/// been received at step -1, so the estimate is the prior mean and the age is
/// `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorView {
    latest_sample: Option<DVector<f64>>,
    /// Step of `latest_sample`, -1 before the first reception.
    latest_step: i64,
    /// Inputs `u[max(latest_step, 0) .. current_step - 1]`, oldest first.
    inputs: VecDeque<DVector<f64>>,
    current_step: u64,
    /// Rollout estimate for `current_step`, kept in sync incrementally.
    estimate: DVector<f64>,
}

impl EstimatorView {
    /// Empty view at step 0.
    pub fn new(state_dim: usize) -> Self {
        Self {
            latest_sample: None,
            latest_step: -1,
            inputs: VecDeque::new(),
            current_step: 0,
            estimate: DVector::zeros(state_dim),
        }
    }

    /// Builds a view directly from its parts; mostly useful for tests and
    /// for what-if evaluations. `inputs` are `u[latest_step .. current_step-1]`.
    pub fn from_parts(
        latest_sample: DVector<f64>,
        latest_step: u64,
        inputs: Vec<DVector<f64>>,
        p: &SubSystemParams,
    ) -> Self {
        let current_step = latest_step + inputs.len() as u64;
        let mut view = Self {
            estimate: latest_sample.clone(),
            latest_sample: Some(latest_sample),
            latest_step: latest_step as i64,
            inputs: inputs.into(),
            current_step,
        };
        view.estimate = estimate_state(&view, p).expect("sample present");
        view
    }

    pub fn latest_sample(&self) -> Option<&DVector<f64>> {
        self.latest_sample.as_ref()
    }

    /// Step of the newest received sample, `None` before the first reception.
    pub fn latest_step(&self) -> Option<u64> {
        u64::try_from(self.latest_step).ok()
    }

    /// Step of the newest sample, -1 standing for the virtual genesis one.
    pub fn latest_step_or_genesis(&self) -> i64 {
        self.latest_step
    }

    pub fn current_step(&self) -> u64 {
        self.current_step
    }

    pub fn input_history(&self) -> impl ExactSizeIterator<Item = &DVector<f64>> {
        self.inputs.iter()
    }

    /// Age of the information set in control steps.
    pub fn aoi(&self) -> u64 {
        (self.current_step as i64 - self.latest_step) as u64
    }

    /// Current state estimate. Equals [`estimate_state`] when a sample is
    /// held and the prior-mean rollout otherwise.
    pub fn estimate(&self) -> &DVector<f64> {
        &self.estimate
    }

    /// Incorporates a sample of step `step` taken at or before the current
    /// step. Only strictly newer samples are accepted.
    pub fn receive(
        &mut self,
        step: u64,
        sample: DVector<f64>,
        p: &SubSystemParams,
    ) -> Result<(), EstimationError> {
        if step as i64 <= self.latest_step {
            return Err(EstimationError::StaleSample {
                step,
                held: self.latest_step,
            });
        }
        if step > self.current_step {
            return Err(EstimationError::FutureSample {
                step,
                current: self.current_step,
            });
        }
        let history_start = self.latest_step.max(0) as u64;
        let drop = (step - history_start) as usize;
        self.inputs.drain(..drop);
        self.latest_step = step as i64;
        self.latest_sample = Some(sample);
        self.estimate = estimate_state(self, p)?;
        Ok(())
    }

    /// Moves to the next control step after input `u` was applied.
    pub fn advance(&mut self, u: DVector<f64>, p: &SubSystemParams) {
        self.estimate = p.a() * &self.estimate + p.b() * &u;
        self.inputs.push_back(u);
        self.current_step += 1;
    }
}

/// Newest-sample rollout `A^D z + sum_{q=1..D} A^{q-1} B u[k-q]`.
pub fn estimate_state(
    view: &EstimatorView,
    p: &SubSystemParams,
) -> Result<DVector<f64>, EstimationError> {
    let z = view.latest_sample.as_ref().ok_or(EstimationError::PreGenesis)?;
    let mut power = DMatrix::<f64>::identity(p.state_dim(), p.state_dim());
    let mut input_part = DVector::<f64>::zeros(p.state_dim());
    // inputs are stored oldest first, so u[k-q] is the q-th from the back
    for u in view.inputs.iter().rev() {
        input_part += &power * (p.b() * u);
        power = p.a() * power;
    }
    Ok(power * z + input_part)
}

pub fn aoi_of(view: &EstimatorView) -> u64 {
    view.aoi()
}

// ============================================================================
// Expected error growth
// ============================================================================

/// `E||e||^2` for age `aoi`: zero for a fresh sample, otherwise
/// `sum_{r=0}^{aoi-1} tr((A^r)^T A^r W)`.
pub fn expected_error_sq(aoi: u64, p: &SubSystemParams) -> f64 {
    let mut growth = ErrorGrowth::new(p);
    growth.value(aoi)
}

/// Cached partial sums of [`expected_error_sq`] for one loop.
///
/// The table only grows; powers of `A` are carried forward so each new entry
/// costs one matrix product.
#[derive(Debug, Clone)]
pub struct ErrorGrowth {
    a: DMatrix<f64>,
    w: DMatrix<f64>,
    next_power: DMatrix<f64>,
    table: Vec<f64>,
}

impl ErrorGrowth {
    pub fn new(p: &SubSystemParams) -> Self {
        let n = p.state_dim();
        Self {
            a: p.a().clone(),
            w: p.w().clone(),
            next_power: DMatrix::identity(n, n),
            table: vec![0.0],
        }
    }

    pub fn value(&mut self, aoi: u64) -> f64 {
        let aoi = aoi as usize;
        while self.table.len() <= aoi {
            let term = (self.next_power.transpose() * &self.next_power * &self.w).trace();
            let last = *self.table.last().expect("table starts with g(0)");
            self.table.push(last + term);
            self.next_power = &self.a * &self.next_power;
        }
        self.table[aoi]
    }
}

// ============================================================================
// Errors and value of information
// ============================================================================

/// Network-induced estimation error `x_true - x_hat`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSample {
    pub e: DVector<f64>,
    pub squared_norm: f64,
}

impl ErrorSample {
    pub fn norm(&self) -> f64 {
        self.squared_norm.sqrt()
    }
}

pub fn estimation_error(x_true: &DVector<f64>, x_hat: &DVector<f64>) -> ErrorSample {
    let e = x_true - x_hat;
    let squared_norm = e.dot(&e);
    ErrorSample { e, squared_norm }
}

/// Expected squared-error reduction at the base station if the sensor's
/// current sample were delivered. Sensor-side error is zero, so this is
/// `g` evaluated at the base station's age.
pub fn voi_uplink(bs_view: &EstimatorView, growth: &mut ErrorGrowth) -> f64 {
    growth.value(bs_view.aoi())
}

/// Squared gap between the base-station and controller estimates.
pub fn voi_downlink(x_hat_bs: &DVector<f64>, x_hat_ctrl: &DVector<f64>) -> f64 {
    x_hat_bs
        .iter()
        .zip(x_hat_ctrl.iter())
        .map(|(b, c)| (b - c) * (b - c))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn scalar(a: f64, w: f64) -> SubSystemParams {
        SubSystemParams::scalar(0, a, 1.0, w, a, 10, 0).unwrap()
    }

    #[test]
    fn estimate_examples() {
        let p = scalar(2.0, 1.0);
        let fresh = EstimatorView::from_parts(v(3.7), 4, vec![], &p);
        assert_eq!(estimate_state(&fresh, &p).unwrap()[0], 3.7);

        // inputs listed oldest first: u[k-2] = -1, u[k-1] = 0.5
        let view = EstimatorView::from_parts(v(1.0), 3, vec![v(-1.0), v(0.5)], &p);
        assert_eq!(view.aoi(), 2);
        assert_relative_eq!(estimate_state(&view, &p).unwrap()[0], 2.5);
        assert_relative_eq!(view.estimate()[0], 2.5);

        let p = scalar(0.75, 1.0);
        let view = EstimatorView::from_parts(v(4.0), 0, vec![v(0.0)], &p);
        assert_relative_eq!(estimate_state(&view, &p).unwrap()[0], 3.0);
    }

    #[test]
    fn pre_genesis_view() {
        let p = scalar(1.5, 1.0);
        let mut view = EstimatorView::new(1);
        assert_eq!(estimate_state(&view, &p), Err(EstimationError::PreGenesis));
        assert_eq!(view.estimate()[0], 0.0);
        assert_eq!(view.aoi(), 1);
        for _ in 0..3 {
            view.advance(v(0.0), &p);
        }
        assert_eq!(aoi_of(&view), 4);
        assert_eq!(view.latest_step(), None);
    }

    #[test]
    fn aoi_examples() {
        let p = scalar(1.0, 1.0);
        let mut view = EstimatorView::new(1);
        for _ in 0..4 {
            view.advance(v(0.0), &p);
        }
        view.receive(4, v(1.0), &p).unwrap();
        assert_eq!(view.aoi(), 0);
        view.advance(v(0.0), &p);
        view.advance(v(0.0), &p);
        assert_eq!(view.aoi(), 2);
        assert_eq!(view.input_history().len(), 2);
    }

    #[test]
    fn receive_rejects_stale_and_future() {
        let p = scalar(1.0, 1.0);
        let mut view = EstimatorView::new(1);
        view.advance(v(0.0), &p);
        view.advance(v(0.0), &p);
        view.receive(1, v(2.0), &p).unwrap();
        assert!(matches!(view.receive(1, v(2.0), &p), Err(EstimationError::StaleSample { .. })));
        assert!(matches!(view.receive(5, v(2.0), &p), Err(EstimationError::FutureSample { .. })));
    }

    #[test]
    fn receive_trims_history_and_matches_incremental_estimate() {
        let p = scalar(1.25, 1.0);
        let mut view = EstimatorView::new(1);
        for k in 0..6 {
            view.advance(v(k as f64 * 0.3 - 1.0), &p);
        }
        view.receive(2, v(0.9), &p).unwrap();
        assert_eq!(view.input_history().len(), 4);
        let mut forward = 0.9;
        for u in view.input_history() {
            forward = 1.25 * forward + u[0];
        }
        assert_relative_eq!(view.estimate()[0], forward, max_relative = 1e-12);
        view.advance(v(0.2), &p);
        view.advance(v(-0.7), &p);
        assert_relative_eq!(
            view.estimate()[0],
            estimate_state(&view, &p).unwrap()[0],
            max_relative = 1e-12
        );
    }

    #[test]
    fn expected_error_examples() {
        assert_eq!(expected_error_sq(0, &scalar(1.5, 1.0)), 0.0);
        assert_relative_eq!(expected_error_sq(5, &scalar(1.0, 1.0)), 5.0);
        assert_relative_eq!(expected_error_sq(2, &scalar(1.5, 1.0)), 3.25);
        assert_relative_eq!(expected_error_sq(500, &scalar(0.75, 1.0)), 16.0 / 7.0, epsilon = 1e-12);
    }

    #[test]
    fn error_growth_matches_direct_sum() {
        let p = SubSystemParams::new(
            0,
            DMatrix::from_row_slice(2, 2, &[1.1, 0.2, -0.3, 0.8]),
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5]),
            DMatrix::identity(2, 2),
            10,
            0,
        )
        .unwrap();
        let mut growth = ErrorGrowth::new(&p);
        for aoi in [7u64, 3, 12, 0, 1] {
            let mut direct = 0.0;
            for r in 0..aoi {
                let ar = p.a().pow(r as u32);
                direct += (ar.transpose() * &ar * p.w()).trace();
            }
            assert_relative_eq!(growth.value(aoi), direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn error_sample_examples() {
        let s = estimation_error(&v(2.0), &v(2.0));
        assert_eq!(s.squared_norm, 0.0);
        let s = estimation_error(&v(2.0), &v(0.5));
        assert_eq!(s.e[0], 1.5);
        assert_eq!(s.squared_norm, 2.25);
        let s = estimation_error(
            &DVector::from_vec(vec![1.0, 0.0]),
            &DVector::from_vec(vec![0.0, 1.0]),
        );
        assert_eq!(s.squared_norm, 2.0);
        assert_relative_eq!(s.norm(), 2f64.sqrt());
    }

    #[test]
    fn voi_examples() {
        let p = scalar(1.25, 1.0);
        let mut growth = ErrorGrowth::new(&p);
        let current = EstimatorView::from_parts(v(1.0), 3, vec![], &p);
        assert_eq!(voi_uplink(&current, &mut growth), 0.0);
        let aged = EstimatorView::from_parts(v(1.0), 3, vec![v(0.0), v(0.0)], &p);
        assert_relative_eq!(voi_uplink(&aged, &mut growth), 2.5625);

        let p = scalar(1.0, 1.0);
        let mut growth = ErrorGrowth::new(&p);
        let aged = EstimatorView::from_parts(v(1.0), 0, vec![v(0.0); 3], &p);
        assert_relative_eq!(voi_uplink(&aged, &mut growth), 3.0);

        assert_eq!(voi_downlink(&v(1.3), &v(1.3)), 0.0);
        assert_eq!(voi_downlink(&v(2.0), &v(0.5)), 2.25);
        assert_eq!(
            voi_downlink(&DVector::from_vec(vec![1.0, 0.0]), &DVector::from_vec(vec![0.0, 1.0])),
            2.0
        );
    }

    #[test]
    fn voi_scales_with_noise() {
        let mut base = ErrorGrowth::new(&scalar(1.25, 1.0));
        let mut scaled = ErrorGrowth::new(&scalar(1.25, 3.5));
        for aoi in 0..30 {
            assert_relative_eq!(scaled.value(aoi), 3.5 * base.value(aoi), max_relative = 1e-12);
        }
    }

    #[test]
    fn growth_monotone_and_bounded() {
        for a in [0.75, 1.0, 1.25, 1.5, -0.9] {
            let mut g = ErrorGrowth::new(&scalar(a, 1.0));
            for aoi in 1..60 {
                assert!(g.value(aoi) > g.value(aoi - 1));
                if f64::abs(a) < 1.0 {
                    assert!(g.value(aoi) <= 1.0 / (1.0 - a * a) + 1e-12);
                }
            }
        }
        // singular A: only non-strict monotonicity
        let mut g = ErrorGrowth::new(&scalar(0.0, 1.0));
        assert_eq!(g.value(1), 1.0);
        assert_eq!(g.value(5), 1.0);
    }
}
