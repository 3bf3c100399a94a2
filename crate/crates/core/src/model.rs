//! Sub-system description, true-plant evolution, control law, slot/step
//! mapping and the seeded random streams that drive noise and offsets.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Tolerance used when checking symmetry / semi-definiteness of `W`.
const COVARIANCE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("loop {loop_id}: {what} has shape {found_rows}x{found_cols}, expected {expected_rows}x{expected_cols}")]
    DimensionMismatch {
        loop_id: usize,
        what: &'static str,
        expected_rows: usize,
        expected_cols: usize,
        found_rows: usize,
        found_cols: usize,
    },
    #[error("loop {loop_id}: sampling period must be at least one slot")]
    ZeroPeriod { loop_id: usize },
    #[error("loop {loop_id}: offset {offset} is not below the sampling period {period}")]
    OffsetOutOfRange { loop_id: usize, offset: u64, period: u64 },
    #[error("loop {loop_id}: noise covariance is not symmetric")]
    AsymmetricCovariance { loop_id: usize },
    #[error("loop {loop_id}: noise covariance has negative variance {value} on axis {axis}")]
    NegativeVariance { loop_id: usize, axis: usize, value: f64 },
    #[error("loop {loop_id}: noise covariance is not positive semi-definite (eigenvalue {eigenvalue})")]
    NotPositiveSemiDefinite { loop_id: usize, eigenvalue: f64 },
    #[error("loop {loop_id}: {what} contains a non-finite entry")]
    NonFinite { loop_id: usize, what: &'static str },
}

// ============================================================================
// Sub-system parameters
// ============================================================================

/// Static description of one control loop.
///
/// Dimensions are checked once here so that the per-step arithmetic never has
/// to re-validate them.
#[derive(Debug, Clone, PartialEq)]
pub struct SubSystemParams {
    id: usize,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    w: DMatrix<f64>,
    l: DMatrix<f64>,
    period: u64,
    offset: u64,
    noise_std: DVector<f64>,
}

impl SubSystemParams {
    pub fn new(
        id: usize,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        w: DMatrix<f64>,
        l: DMatrix<f64>,
        period: u64,
        offset: u64,
    ) -> Result<Self, ModelError> {
        let n = a.nrows();
        let m = b.ncols();
        check_shape(id, "A", &a, n, n)?;
        check_shape(id, "B", &b, n, m)?;
        check_shape(id, "W", &w, n, n)?;
        check_shape(id, "L", &l, m, n)?;
        for (what, mat) in [("A", &a), ("B", &b), ("W", &w), ("L", &l)] {
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite { loop_id: id, what });
            }
        }
        if period == 0 {
            return Err(ModelError::ZeroPeriod { loop_id: id });
        }
        if offset >= period {
            return Err(ModelError::OffsetOutOfRange {
                loop_id: id,
                offset,
                period,
            });
        }
        let noise_std = noise_std_from_covariance(id, &w)?;
        Ok(Self {
            id,
            a,
            b,
            w,
            l,
            period,
            offset,
            noise_std,
        })
    }

    /// Scalar loop, the shape used by the reference experiments.
    pub fn scalar(
        id: usize,
        a: f64,
        b: f64,
        w: f64,
        l: f64,
        period: u64,
        offset: u64,
    ) -> Result<Self, ModelError> {
        let one = |v| DMatrix::from_element(1, 1, v);
        Self::new(id, one(a), one(b), one(w), one(l), period, offset)
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// Sampling period `T_s` in slots.
    pub fn period(&self) -> u64 {
        self.period
    }

    /// Slot of the first sample, `T_o`.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Per-axis standard deviations of the noise (square roots of diag W).
    pub fn noise_std(&self) -> &DVector<f64> {
        &self.noise_std
    }

    /// Control step of this loop at slot `t`, `None` before the first sample.
    pub fn step_at(&self, t: u64) -> Option<u64> {
        map_slot_to_step(t, self.offset, self.period)
    }

    /// True when `t` is the first slot of a control step (a sampling instant).
    pub fn is_sampling_slot(&self, t: u64) -> bool {
        t >= self.offset && (t - self.offset).is_multiple_of(self.period)
    }

    /// True when `t` is the last slot of a control step.
    pub fn is_step_end(&self, t: u64) -> bool {
        t >= self.offset && (t - self.offset + 1).is_multiple_of(self.period)
    }

    /// First slot of control step `k`.
    pub fn step_start(&self, k: u64) -> u64 {
        self.offset + k * self.period
    }
}

fn check_shape(
    loop_id: usize,
    what: &'static str,
    m: &DMatrix<f64>,
    rows: usize,
    cols: usize,
) -> Result<(), ModelError> {
    if m.nrows() != rows || m.ncols() != cols || rows == 0 {
        return Err(ModelError::DimensionMismatch {
            loop_id,
            what,
            expected_rows: rows,
            expected_cols: cols,
            found_rows: m.nrows(),
            found_cols: m.ncols(),
        });
    }
    Ok(())
}

fn noise_std_from_covariance(loop_id: usize, w: &DMatrix<f64>) -> Result<DVector<f64>, ModelError> {
    let n = w.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let scale = w[(i, j)].abs().max(w[(j, i)].abs()).max(1.0);
            if (w[(i, j)] - w[(j, i)]).abs() > COVARIANCE_TOL * scale {
                return Err(ModelError::AsymmetricCovariance { loop_id });
            }
        }
    }
    for (axis, &value) in w.diagonal().iter().enumerate() {
        if value < 0.0 {
            return Err(ModelError::NegativeVariance {
                loop_id,
                axis,
                value,
            });
        }
    }
    if n > 1 {
        let min_eig = w.clone().symmetric_eigenvalues().min();
        let scale = w.diagonal().max().max(1.0);
        if min_eig < -COVARIANCE_TOL * scale {
            return Err(ModelError::NotPositiveSemiDefinite {
                loop_id,
                eigenvalue: min_eig,
            });
        }
    }
    Ok(w.diagonal().map(f64::sqrt))
}

// ============================================================================
// Plant state and dynamics
// ============================================================================

/// True state of one loop together with its current control step.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub x: DVector<f64>,
    pub k: u64,
}

impl PlantState {
    /// State at step 0, which is a pure noise draw.
    pub fn genesis(x0: DVector<f64>) -> Self {
        Self { x: x0, k: 0 }
    }

    /// Commits `x[k+1] = A x[k] + B u[k] + w[k]` and advances the step.
    pub fn advance(&mut self, u: &DVector<f64>, w: &DVector<f64>, p: &SubSystemParams) {
        self.x = plant_step(&self.x, u, w, p);
        self.k += 1;
    }
}

/// Maps slot `t` to the control step `floor((t - T_o) / T_s)`.
///
/// Returns `None` before the loop's first sampling instant; such a loop is
/// inactive and must not take part in sampling, scheduling or metrics.
pub fn map_slot_to_step(t: u64, offset: u64, period: u64) -> Option<u64> {
    debug_assert!(period >= 1);
    t.checked_sub(offset).map(|elapsed| elapsed / period)
}

pub fn plant_step(
    x: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
    p: &SubSystemParams,
) -> DVector<f64> {
    p.a() * x + p.b() * u + w
}

/// Stationary state feedback `u = -L x_hat`.
pub fn control_input(x_hat: &DVector<f64>, l: &DMatrix<f64>) -> DVector<f64> {
    -(l * x_hat)
}

// ============================================================================
// Random streams
// ============================================================================

/// Role of a random substream. Each loop owns its own noise and offset
/// streams so that adding loops never changes the draws of existing ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Substream {
    Noise(usize),
    Offset(usize),
    Scheduler,
}

impl Substream {
    pub fn id(self) -> u64 {
        match self {
            Substream::Noise(i) => 2 * i as u64,
            Substream::Offset(i) => 2 * i as u64 + 1,
            Substream::Scheduler => u64::MAX,
        }
    }
}

/// Seeded ChaCha8 stream; `(master_seed, substream)` fully determines the
/// sequence on every platform.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    substream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, substream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(substream);
        Self {
            master_seed,
            substream,
            rng,
        }
    }

    pub fn for_role(master_seed: u64, role: Substream) -> Self {
        Self::new(master_seed, role.id())
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn substream(&self) -> u64 {
        self.substream
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform integer in `0..upper`.
    pub fn index_below(&mut self, upper: usize) -> usize {
        self.rng.random_range(0..upper)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Draws `w ~ N(0, diag(W))`, one independent component per axis.
///
/// One normal is consumed per axis even for zero variance so the stream stays
/// aligned between configurations that differ only in `W`.
pub fn sample_noise(stream: &mut RngStream, noise_std: &DVector<f64>) -> DVector<f64> {
    noise_std.map(|sd| {
        let z = stream.standard_normal();
        if sd == 0.0 {
            0.0
        } else {
            sd * z
        }
    })
}

/// Discrete uniform offset in `{0, ..., T_s - 1}`.
pub fn draw_offset(stream: &mut RngStream, period: u64) -> u64 {
    assert!(period >= 1, "sampling period must be positive");
    stream.rng.random_range(0..period)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar(a: f64, b: f64) -> SubSystemParams {
        SubSystemParams::scalar(0, a, b, 1.0, a, 10, 0).unwrap()
    }

    #[test]
    fn slot_to_step_examples() {
        assert_eq!(map_slot_to_step(3, 3, 10), Some(0));
        assert_eq!(map_slot_to_step(12, 3, 10), Some(0));
        assert_eq!(map_slot_to_step(13, 3, 10), Some(1));
        assert_eq!(map_slot_to_step(2, 3, 10), None);
    }

    #[test]
    fn plant_step_examples() {
        let v = |x: f64| DVector::from_element(1, x);
        let p = scalar(1.5, 1.0);
        assert_eq!(plant_step(&v(2.0), &v(-3.0), &v(0.1), &p)[0], 1.5 * 2.0 - 3.0 + 0.1);
        assert_eq!(plant_step(&v(0.0), &v(0.0), &v(0.0), &p)[0], 0.0);
        let p = scalar(0.75, 1.0);
        assert_eq!(plant_step(&v(4.0), &v(0.0), &v(1.0), &p)[0], 4.0);
    }

    #[test]
    fn control_input_examples() {
        let u = control_input(&DVector::from_element(1, 2.0), &DMatrix::from_element(1, 1, 1.5));
        assert_eq!(u[0], -3.0);
        let u = control_input(&DVector::zeros(1), &DMatrix::from_element(1, 1, 1.5));
        assert_eq!(u[0], 0.0);
        let u = control_input(&DVector::from_vec(vec![1.0, 2.0]), &DMatrix::identity(2, 2));
        assert_eq!(u, DVector::from_vec(vec![-1.0, -2.0]));
    }

    #[test]
    fn rejects_bad_configuration() {
        assert!(matches!(
            SubSystemParams::scalar(3, 1.0, 1.0, 1.0, 1.0, 0, 0),
            Err(ModelError::ZeroPeriod { loop_id: 3 })
        ));
        assert!(matches!(
            SubSystemParams::scalar(0, 1.0, 1.0, 1.0, 1.0, 10, 10),
            Err(ModelError::OffsetOutOfRange { .. })
        ));
        assert!(matches!(
            SubSystemParams::scalar(0, 1.0, 1.0, -0.5, 1.0, 10, 0),
            Err(ModelError::NegativeVariance { .. })
        ));
        let bad_b = SubSystemParams::new(
            0,
            DMatrix::identity(2, 2),
            DMatrix::zeros(3, 1),
            DMatrix::identity(2, 2),
            DMatrix::zeros(1, 2),
            10,
            0,
        );
        assert!(matches!(bad_b, Err(ModelError::DimensionMismatch { what: "B", .. })));
        let asym = SubSystemParams::new(
            0,
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
            DMatrix::identity(2, 2),
            10,
            0,
        );
        assert!(matches!(asym, Err(ModelError::AsymmetricCovariance { .. })));
        let indefinite = SubSystemParams::new(
            0,
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
            DMatrix::identity(2, 2),
            10,
            0,
        );
        assert!(matches!(indefinite, Err(ModelError::NotPositiveSemiDefinite { .. })));
    }

    #[test]
    fn zero_covariance_gives_zero_noise() {
        let mut s = RngStream::new(7, 0);
        let sd = DVector::zeros(3);
        for _ in 0..100 {
            assert!(sample_noise(&mut s, &sd).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn unit_noise_moments() {
        let mut s = RngStream::new(2024, Substream::Noise(0).id());
        let sd = DVector::from_element(1, 1.0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_noise(&mut s, &sd)[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((0.97..=1.03).contains(&var), "variance {var}");
    }

    #[test]
    fn offset_draws() {
        let mut s = RngStream::new(1, 1);
        assert!((0..50).all(|_| draw_offset(&mut s, 1) == 0));

        let mut counts = [0u64; 10];
        let n = 100_000;
        for _ in 0..n {
            counts[draw_offset(&mut s, 10) as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0));
        let expected = n as f64 / 10.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 99.9th percentile of chi-square with 9 degrees of freedom.
        assert!(chi2 < 27.877, "chi2 {chi2}");
    }

    #[test]
    fn deadbeat_leaves_only_noise() {
        let p = scalar(1.25, 1.0);
        let x = DVector::from_element(1, 3.7);
        let w = DVector::from_element(1, -0.4);
        let u = control_input(&x, p.l());
        assert_eq!(plant_step(&x, &u, &w, &p), w);
    }

    proptest! {
        #[test]
        fn step_of_sampling_instant_is_index(k in 0u64..10_000, period in 1u64..50, off in 0u64..50) {
            let offset = off % period;
            prop_assert_eq!(map_slot_to_step(offset + k * period, offset, period), Some(k));
        }

        #[test]
        fn slot_to_step_monotone(t in 0u64..100_000, period in 1u64..50, off in 0u64..50) {
            let offset = off % period;
            let a = map_slot_to_step(t, offset, period);
            let b = map_slot_to_step(t + 1, offset, period);
            prop_assert!(a <= b);
        }

        #[test]
        fn plant_step_is_linear(
            entries in proptest::collection::vec(-2.0f64..2.0, 12),
            s in -3.0f64..3.0,
            r in -3.0f64..3.0,
        ) {
            let p = SubSystemParams::new(
                0,
                DMatrix::from_row_slice(2, 2, &entries[0..4]),
                DMatrix::from_row_slice(2, 1, &entries[4..6]),
                DMatrix::identity(2, 2),
                DMatrix::from_row_slice(1, 2, &entries[6..8]),
                10,
                0,
            ).unwrap();
            let x1 = DVector::from_row_slice(&entries[8..10]);
            let x2 = DVector::from_row_slice(&entries[10..12]);
            let u1 = DVector::from_element(1, entries[0] + entries[5]);
            let u2 = DVector::from_element(1, entries[3] - entries[7]);
            let w1 = DVector::from_row_slice(&[entries[1], entries[9]]);
            let w2 = DVector::from_row_slice(&[entries[2], entries[11]]);
            let lhs = plant_step(&(&x1 * s + &x2 * r), &(&u1 * s + &u2 * r), &(&w1 * s + &w2 * r), &p);
            let rhs = plant_step(&x1, &u1, &w1, &p) * s + plant_step(&x2, &u2, &w2, &p) * r;
            prop_assert!((lhs - rhs).amax() < 1e-9);
        }

        #[test]
        fn streams_are_reproducible(seed in any::<u64>(), sub in any::<u64>()) {
            let mut a = RngStream::new(seed, sub);
            let mut b = RngStream::new(seed, sub);
            for _ in 0..16 {
                prop_assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
            }
        }
    }
}
