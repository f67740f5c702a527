//! Plant models, the augmented tracking system and fixed-step integration.
//!
//! A plant is `ẋ = f(x) + g(x)u + k(x)d` with a reference generated by
//! `ṙ = h_d(r)`. Tracking is recast as regulation of the augmented state
//! `X = [e_d; r]` with `e_d = x − r`:
//!
//! ```text
//! Ẋ = F(X) + G(X)u + K(X)d
//! F = [f(e_d + r) − h_d(r); h_d(r)],  G = [g(e_d + r); 0],  K = [k(e_d + r); 0]
//! ```

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};

/// Half-width of the box `‖X‖∞ ≤ OPERATING_BOX` used by sanity checks.
pub const OPERATING_BOX: f64 = 10.0;

/// A control-affine plant together with its reference command generator.
///
/// Implementations must be pure: the same argument always yields the same
/// value. Custom models enter the library through this trait.
pub trait SystemModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn disturbance_dim(&self) -> usize;

    /// `f(x)`
    fn drift(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `g(x)`, an `n × m` matrix.
    fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// `k(x)`, an `n × q` matrix.
    fn disturbance_matrix(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// `h_d(r)`
    fn reference_generator(&self, r: &DVector<f64>) -> DVector<f64>;
}

/// Checks `f(0) = 0` and `h_d(0) = 0`.
pub fn check_origin(model: &dyn SystemModel) -> Result<()> {
    let zero = DVector::zeros(model.state_dim());
    let f0 = model.drift(&zero);
    let h0 = model.reference_generator(&zero);
    check_dim("drift output", model.state_dim(), f0.len())?;
    check_dim("reference generator output", model.state_dim(), h0.len())?;
    if f0.iter().chain(h0.iter()).any(|v| *v != 0.0) {
        return Err(Error::InvalidConfig("model maps must vanish at the origin (f(0) = 0, h_d(0) = 0)".into()));
    }
    Ok(())
}

/// Spot-checks that every model map is finite on `samples` seeded points of
/// the operating box.
pub fn check_operating_box(model: &dyn SystemModel, samples: usize, seed: u64) -> Result<()> {
    let n = model.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let x = DVector::from_fn(n, |_, _| rng.random_range(-OPERATING_BOX..=OPERATING_BOX));
        let finite = model.drift(&x).iter().all(|v| v.is_finite())
            && model.input_matrix(&x).iter().all(|v| v.is_finite())
            && model.disturbance_matrix(&x).iter().all(|v| v.is_finite())
            && model.reference_generator(&x).iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("model maps on the operating box"));
        }
    }
    Ok(())
}

/// `X = [e_d; r] ∈ ℝ^{2n}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState(DVector<f64>);

impl AugmentedState {
    pub fn new(x: DVector<f64>) -> Result<Self> {
        if !x.len().is_multiple_of(2) || x.is_empty() {
            return Err(Error::DimensionMismatch {
                context: "augmented state (must be 2n)",
                expected: x.len() + x.len() % 2,
                actual: x.len(),
            });
        }
        Ok(Self(x))
    }

    pub fn from_parts(e_d: &DVector<f64>, r: &DVector<f64>) -> Result<Self> {
        check_dim("reference", e_d.len(), r.len())?;
        let n = e_d.len();
        Ok(Self(DVector::from_fn(2 * n, |i, _| if i < n { e_d[i] } else { r[i - n] })))
    }

    /// Builds `X` from the plant state and the reference: `e_d = x − r`.
    pub fn from_plant(x: &DVector<f64>, r: &DVector<f64>) -> Result<Self> {
        check_dim("reference", x.len(), r.len())?;
        Self::from_parts(&(x - r), r)
    }

    pub fn half_dim(&self) -> usize {
        self.0.len() / 2
    }

    pub fn e_d(&self) -> DVector<f64> {
        self.0.rows(0, self.half_dim()).into_owned()
    }

    pub fn r(&self) -> DVector<f64> {
        let n = self.half_dim();
        self.0.rows(n, n).into_owned()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }
}

fn split_augmented(model: &dyn SystemModel, x_aug: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = model.state_dim();
    check_dim("augmented state", 2 * n, x_aug.len())?;
    let r = x_aug.rows(n, n).into_owned();
    let x = x_aug.rows(0, n) + &r;
    Ok((x, r))
}

/// `F(X) = [f(e_d + r) − h_d(r); h_d(r)]`
pub fn augmented_drift(model: &dyn SystemModel, x_aug: &DVector<f64>) -> Result<DVector<f64>> {
    let n = model.state_dim();
    let (x, r) = split_augmented(model, x_aug)?;
    let hd = model.reference_generator(&r);
    let f = model.drift(&x);
    check_dim("drift output", n, f.len())?;
    check_dim("reference generator output", n, hd.len())?;
    let mut out = DVector::zeros(2 * n);
    out.rows_mut(0, n).copy_from(&(f - &hd));
    out.rows_mut(n, n).copy_from(&hd);
    Ok(out)
}

/// `G(X) = [g(e_d + r); 0]`
pub fn augmented_input_matrix(model: &dyn SystemModel, x_aug: &DVector<f64>) -> Result<DMatrix<f64>> {
    let (x, _) = split_augmented(model, x_aug)?;
    stack_over_zero(model.state_dim(), model.control_dim(), model.input_matrix(&x), "input matrix")
}

/// `K(X) = [k(e_d + r); 0]`
pub fn augmented_disturbance_matrix(model: &dyn SystemModel, x_aug: &DVector<f64>) -> Result<DMatrix<f64>> {
    let (x, _) = split_augmented(model, x_aug)?;
    stack_over_zero(model.state_dim(), model.disturbance_dim(), model.disturbance_matrix(&x), "disturbance matrix")
}

fn stack_over_zero(n: usize, cols: usize, top: DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    check_dim(context, n * cols, top.nrows() * top.ncols())?;
    check_dim(context, n, top.nrows())?;
    let mut out = DMatrix::zeros(2 * n, cols);
    out.view_mut((0, 0), (n, cols)).copy_from(&top);
    Ok(out)
}

/// `Ẋ = F(X) + G(X)u + K(X)d`
pub fn augmented_derivative(
    model: &dyn SystemModel,
    x_aug: &DVector<f64>,
    u: &DVector<f64>,
    d: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dim("control input", model.control_dim(), u.len())?;
    check_dim("disturbance input", model.disturbance_dim(), d.len())?;
    let n = model.state_dim();
    let (x, _) = split_augmented(model, x_aug)?;
    let mut out = augmented_drift(model, x_aug)?;
    let forced = model.input_matrix(&x) * u + model.disturbance_matrix(&x) * d;
    check_dim("forced response", n, forced.len())?;
    out.rows_mut(0, n).zip_apply(&forced, |o, v| *o += v);
    Ok(out)
}

/// Joint plant/reference derivative on `[x; r]` (not the error coordinates).
pub fn plant_reference_derivative(
    model: &dyn SystemModel,
    state: &DVector<f64>,
    u: &DVector<f64>,
    d: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = model.state_dim();
    check_dim("plant/reference state", 2 * n, state.len())?;
    check_dim("control input", model.control_dim(), u.len())?;
    check_dim("disturbance input", model.disturbance_dim(), d.len())?;
    let x = state.rows(0, n).into_owned();
    let r = state.rows(n, n).into_owned();
    let xdot = model.drift(&x) + model.input_matrix(&x) * u + model.disturbance_matrix(&x) * d;
    let rdot = model.reference_generator(&r);
    let mut out = DVector::zeros(2 * n);
    out.rows_mut(0, n).copy_from(&xdot);
    out.rows_mut(n, n).copy_from(&rdot);
    Ok(out)
}

/// Uniform time grid `t0, t0 + h, …, t_end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationGrid {
    t0: f64,
    step: f64,
    steps: usize,
}

impl SimulationGrid {
    pub fn new(t0: f64, t_end: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::InvalidConfig(format!("step must be positive, got {step}")));
        }
        let ratio = (t_end - t0) / step;
        let steps = ratio.round();
        if !(steps >= 1.0) || (ratio - steps).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::InvalidConfig(format!("(t_end − t0)/h = {ratio} is not a positive integer")));
        }
        Ok(Self { t0, step, steps: steps as usize })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Number of integration steps; the grid has `steps() + 1` points.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.step
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.steps)
    }
}

/// One classical fourth-order Runge–Kutta step.
pub fn rk4_step<F>(mut derivative: F, t: f64, x: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let mut eval = |tau: f64, state: &DVector<f64>| -> Result<DVector<f64>> {
        let v = derivative(tau, state)?;
        if v.iter().all(|c| c.is_finite()) {
            Ok(v)
        } else {
            Err(Error::Integration { t: tau })
        }
    };
    let half = 0.5 * h;
    let k1 = eval(t, x)?;
    let k2 = eval(t + half, &(x + &k1 * half))?;
    let k3 = eval(t + half, &(x + &k2 * half))?;
    let k4 = eval(t + h, &(x + &k3 * h))?;
    Ok(x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0))
}

/// A grid sample of a simulated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub state: DVector<f64>,
    pub u: DVector<f64>,
    pub d: DVector<f64>,
}

/// Simulates the augmented system under open-loop input signals.
///
/// The signals are evaluated at every RK stage time; the recorded `u`, `d`
/// are their values at the grid nodes.
pub fn simulate_trajectory<U, D>(
    model: &dyn SystemModel,
    x0: &AugmentedState,
    u_signal: U,
    d_signal: D,
    grid: &SimulationGrid,
) -> Result<Vec<TrajectorySample>>
where
    U: Fn(f64) -> DVector<f64>,
    D: Fn(f64) -> DVector<f64>,
{
    check_dim("initial state", 2 * model.state_dim(), x0.as_vector().len())?;
    let mut out = Vec::with_capacity(grid.steps() + 1);
    let mut state = x0.as_vector().clone();
    for k in 0..=grid.steps() {
        let t = grid.time(k);
        out.push(TrajectorySample { t, state: state.clone(), u: u_signal(t), d: d_signal(t) });
        if k == grid.steps() {
            break;
        }
        state =
            rk4_step(|tau, s| augmented_derivative(model, s, &u_signal(tau), &d_signal(tau)), t, &state, grid.step())?;
    }
    Ok(out)
}

/// The nonlinear oscillator benchmark tracking a 1.5 rad/s sinusoid:
///
/// ```text
/// ẋ1 = x2
/// ẋ2 = −x1³ − 0.5 x2 + u + d
/// ṙ  = [0 1; −2.25 0] r
/// ```
#[derive(Debug, Clone, Copy, Default)]
pub struct Benchmark;

impl SystemModel for Benchmark {
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn disturbance_dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(&[x[1], -x[0].powi(3) - 0.5 * x[1]])
    }
    fn input_matrix(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[0.0, 1.0])
    }
    fn disturbance_matrix(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[0.0, 1.0])
    }
    fn reference_generator(&self, r: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(&[r[1], -2.25 * r[0]])
    }
}

/// Scalar linear plant `ẋ = a x + b u + k d` with a zero reference generator.
#[derive(Debug, Clone, Copy)]
pub struct ScalarLinear {
    pub a: f64,
    pub b: f64,
    pub k: f64,
}

impl Default for ScalarLinear {
    fn default() -> Self {
        Self { a: -1.0, b: 1.0, k: 1.0 }
    }
}

impl SystemModel for ScalarLinear {
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn disturbance_dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        x * self.a
    }
    fn input_matrix(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.b)
    }
    fn disturbance_matrix(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.k)
    }
    fn reference_generator(&self, r: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(r.len())
    }
}
