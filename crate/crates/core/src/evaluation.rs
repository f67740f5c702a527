//! Closed-loop evaluation of a learned controller.
//!
//! The plant and the reference generator are integrated jointly in plant
//! coordinates `[x; r]`. The control is computed from `X = [x − r; r]` at each
//! fine-grid node and held over the step; the disturbance is an exogenous
//! signal evaluated at the RK stage times.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{plant_reference_derivative, rk4_step, SimulationGrid, SystemModel};
use crate::error::{check_dim, Error, Result};
use crate::learner::TrainConfig;
use crate::quadrature::DiscountedRule;

/// Disturbance energy below which the attenuation ratio is left undefined.
pub const ENERGY_GUARD: f64 = 1e-12;

/// Start of the tail window for the tracking metric, in seconds.
pub const TAIL_START: f64 = 20.0;

/// `d(t) = 1.55 e^{−0.08t} cos(0.3t)`, the decaying test disturbance.
pub fn decaying_cosine(t: f64) -> f64 {
    1.55 * (-0.08 * t).exp() * (0.3 * t).cos()
}

/// Weights of the evaluation costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub alpha: f64,
    pub gamma: f64,
    /// `Q` (n × n), applied to `e_d`.
    pub q_weight: DMatrix<f64>,
    pub r_diag: Vec<f64>,
}

impl From<&TrainConfig> for CostWeights {
    fn from(cfg: &TrainConfig) -> Self {
        Self { alpha: cfg.alpha, gamma: cfg.gamma, q_weight: cfg.q_weight.clone(), r_diag: cfg.r_diag.clone() }
    }
}

impl CostWeights {
    fn quad_u(&self, u: &DVector<f64>) -> f64 {
        u.iter().zip(&self.r_diag).map(|(v, r)| r * v * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub t: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub r: Vec<DVector<f64>>,
    pub e_d: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub d: Vec<DVector<f64>>,
    /// `∫₀ᵗ e^{−ατ}(e_dᵀQe_d + uᵀRu) dτ` at every node.
    pub cost_numerator: Vec<f64>,
    /// `∫₀ᵗ e^{−ατ} dᵀd dτ` at every node.
    pub disturbance_energy: Vec<f64>,
    /// `max ‖e_d(t)‖∞` over `t ≥ TAIL_START`; `None` if the run ends earlier.
    pub tail_max_error: Option<f64>,
    pub weights: CostWeights,
}

impl EvaluationReport {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn final_ratio(&self) -> Option<f64> {
        attenuation_ratio(self).last().copied().flatten()
    }
}

/// Runs `u_policy` in closed loop against `d_signal` from `(x0, r0)`.
pub fn closed_loop_run<P, D>(
    model: &dyn SystemModel,
    u_policy: P,
    d_signal: D,
    x0: &DVector<f64>,
    r0: &DVector<f64>,
    grid: &SimulationGrid,
    weights: &CostWeights,
) -> Result<EvaluationReport>
where
    P: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    D: Fn(f64) -> DVector<f64>,
{
    let (n, m, q) = (model.state_dim(), model.control_dim(), model.disturbance_dim());
    check_dim("initial plant state", n, x0.len())?;
    check_dim("initial reference", n, r0.len())?;
    check_dim("Q", n, weights.q_weight.nrows())?;
    check_dim("R diagonal", m, weights.r_diag.len())?;

    let steps = grid.steps();
    let mut report = EvaluationReport {
        t: Vec::with_capacity(steps + 1),
        x: Vec::with_capacity(steps + 1),
        r: Vec::with_capacity(steps + 1),
        e_d: Vec::with_capacity(steps + 1),
        u: Vec::with_capacity(steps + 1),
        d: Vec::with_capacity(steps + 1),
        cost_numerator: Vec::new(),
        disturbance_energy: Vec::new(),
        tail_max_error: None,
        weights: weights.clone(),
    };
    let mut z = DVector::zeros(2 * n);
    z.rows_mut(0, n).copy_from(x0);
    z.rows_mut(n, n).copy_from(r0);
    let mut aug = DVector::zeros(2 * n);
    for k in 0..=steps {
        let t = grid.time(k);
        let x = z.rows(0, n).into_owned();
        let r = z.rows(n, n).into_owned();
        let e = &x - &r;
        aug.rows_mut(0, n).copy_from(&e);
        aug.rows_mut(n, n).copy_from(&r);
        let u = u_policy(&aug)?;
        check_dim("policy output", m, u.len())?;
        if !u.iter().all(|v| v.is_finite()) {
            return Err(Error::Integration { t });
        }
        let d = d_signal(t);
        check_dim("disturbance signal", q, d.len())?;
        if k < steps {
            z = rk4_step(|tau, s| plant_reference_derivative(model, s, &u, &d_signal(tau)), t, &z, grid.step())?;
        }
        report.t.push(t);
        report.x.push(x);
        report.r.push(r);
        report.e_d.push(e);
        report.u.push(u);
        report.d.push(d);
    }

    let rule = DiscountedRule::new(weights.alpha, grid.step(), steps)?;
    let numerator: Vec<f64> = report
        .e_d
        .iter()
        .zip(&report.u)
        .map(|(e, u)| (e.transpose() * &weights.q_weight * e)[0] + weights.quad_u(u))
        .collect();
    let energy: Vec<f64> = report.d.iter().map(|d| d.norm_squared()).collect();
    report.cost_numerator = rule.cumulative(&numerator)?;
    report.disturbance_energy = rule.cumulative(&energy)?;
    report.tail_max_error = report
        .t
        .iter()
        .zip(&report.e_d)
        .filter(|(t, _)| **t >= TAIL_START - 1e-9)
        .map(|(_, e)| e.amax())
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
    Ok(report)
}

/// `ratio(t)`, absent where the disturbance energy is at most [`ENERGY_GUARD`].
pub fn attenuation_ratio(report: &EvaluationReport) -> Vec<Option<f64>> {
    report
        .cost_numerator
        .iter()
        .zip(&report.disturbance_energy)
        .map(|(num, den)| (*den > ENERGY_GUARD).then(|| num / den))
        .collect()
}

/// `J = ∫₀^{t_end} e^{−ατ}(XᵀQ_T X + uᵀRu − γ²dᵀd) dτ`.
pub fn performance_index(report: &EvaluationReport) -> Result<f64> {
    if report.len() < 2 {
        return Err(Error::InvalidConfig("performance index needs at least 2 samples".into()));
    }
    let w = &report.weights;
    let h = report.t[1] - report.t[0];
    let rule = DiscountedRule::new(w.alpha, h, report.len() - 1)?;
    let g2 = w.gamma * w.gamma;
    let values: Vec<f64> = (0..report.len())
        .map(|k| {
            let e = &report.e_d[k];
            (e.transpose() * &w.q_weight * e)[0] + w.quad_u(&report.u[k]) - g2 * report.d[k].norm_squared()
        })
        .collect();
    rule.integrate(&values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Benchmark, ScalarLinear};
    use approx::assert_abs_diff_eq;

    fn weights() -> CostWeights {
        CostWeights { alpha: 0.1, gamma: 5.0, q_weight: DMatrix::identity(2, 2) * 10.0, r_diag: vec![1.0] }
    }

    fn zero_u(_: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::zeros(1))
    }

    #[test]
    fn reference_follows_closed_form() {
        let grid = SimulationGrid::new(0.0, 10.0, 0.001).unwrap();
        let r0 = DVector::from_column_slice(&[0.0, 1.5]);
        let rep = closed_loop_run(&Benchmark, zero_u, |_| DVector::zeros(1), &r0, &r0, &grid, &weights()).unwrap();
        for (t, r) in rep.t.iter().zip(&rep.r) {
            assert_abs_diff_eq!(r[0], (1.5 * t).sin(), epsilon = 1e-6);
            assert_abs_diff_eq!(r[1], 1.5 * (1.5 * t).cos(), epsilon = 1e-6);
        }
    }

    #[test]
    fn benchmark_scenario_starts_on_reference() {
        let grid = SimulationGrid::new(0.0, 1.0, 0.001).unwrap();
        let x0 = DVector::from_column_slice(&[0.0, 1.5]);
        let rep = closed_loop_run(
            &Benchmark,
            zero_u,
            |t| DVector::from_element(1, decaying_cosine(t)),
            &x0,
            &x0,
            &grid,
            &weights(),
        )
        .unwrap();
        assert_eq!(rep.e_d[0].amax(), 0.0);
        assert_eq!(rep.d[0][0], 1.55);
        assert!(rep.tail_max_error.is_none());
        assert!(attenuation_ratio(&rep)[0].is_none());
    }

    #[test]
    fn ratio_zero_without_error_or_effort() {
        let grid = SimulationGrid::new(0.0, 1.0, 0.01).unwrap();
        let zero = DVector::zeros(1);
        let w = CostWeights { q_weight: DMatrix::identity(1, 1), ..weights() };
        let mut rep =
            closed_loop_run(&ScalarLinear::default(), zero_u, |_| DVector::zeros(1), &zero, &zero, &grid, &w).unwrap();
        assert!(attenuation_ratio(&rep).iter().all(Option::is_none));
        // same zero error and effort, unit disturbance energy rate
        let rule = DiscountedRule::new(0.1, 0.01, 100).unwrap();
        rep.disturbance_energy = rule.cumulative(&[1.0; 101]).unwrap();
        let ratios = attenuation_ratio(&rep);
        assert!(ratios[0].is_none());
        assert!(ratios[1..].iter().all(|r| *r == Some(0.0)));
    }

    #[test]
    fn denominator_scales_quadratically() {
        let grid = SimulationGrid::new(0.0, 5.0, 0.001).unwrap();
        let x0 = DVector::from_column_slice(&[0.0, 1.5]);
        let rep = closed_loop_run(
            &Benchmark,
            |x: &DVector<f64>| Ok(DVector::from_element(1, -2.0 * x[1])),
            |t| DVector::from_element(1, decaying_cosine(t)),
            &x0,
            &x0,
            &grid,
            &weights(),
        )
        .unwrap();
        let rule = DiscountedRule::new(0.1, 0.001, grid.steps()).unwrap();
        let scaled: Vec<f64> = rep.d.iter().map(|d| (d * 3.0).norm_squared()).collect();
        let den = rule.cumulative(&scaled).unwrap();
        for (a, b) in den.iter().zip(&rep.disturbance_energy) {
            assert_abs_diff_eq!(*a, 9.0 * b, epsilon = 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn performance_index_cases() {
        let grid = SimulationGrid::new(0.0, 50.0, 0.001).unwrap();
        let zero = DVector::zeros(2);
        let rep = closed_loop_run(&Benchmark, zero_u, |_| DVector::zeros(1), &zero, &zero, &grid, &weights()).unwrap();
        assert_eq!(performance_index(&rep).unwrap(), 0.0);

        // u ≡ 0, e_d ≡ 0 by construction, d = decaying cosine: J < 0
        let mut rep2 = rep.clone();
        for (t, d) in rep2.t.iter().zip(rep2.d.iter_mut()) {
            d[0] = decaying_cosine(*t);
        }
        assert!(performance_index(&rep2).unwrap() < 0.0);

        // constant integrand c: e_d = (1, 0) gives c = 10
        let mut rep3 = rep.clone();
        for e in rep3.e_d.iter_mut() {
            e[0] = 1.0;
        }
        let exact = 10.0 * (1.0 - (-0.1f64 * 50.0).exp()) / 0.1;
        assert_abs_diff_eq!(performance_index(&rep3).unwrap(), exact, epsilon = 1e-6);
    }

    #[test]
    fn policy_dimension_checked() {
        let grid = SimulationGrid::new(0.0, 0.1, 0.01).unwrap();
        let zero = DVector::zeros(2);
        let bad = |_: &DVector<f64>| Ok(DVector::zeros(2));
        assert!(matches!(
            closed_loop_run(&Benchmark, bad, |_| DVector::zeros(1), &zero, &zero, &grid, &weights()),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
