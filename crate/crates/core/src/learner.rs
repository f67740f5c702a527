//! δ-policy iteration.
//!
//! Each iteration solves the damped (generalized) tracking Bellman equation
//! for the next value function and policies. With step size `δ ∈ (0, 1]`
//! the update is a damped Newton step on the HJI equation; `δ = 1` is plain
//! policy iteration.
//!
//! The off-policy learner works only from a [`WindowDataset`]. For window
//! `[t, t+T]` and iterate `(W_c, W_a, W_d)` it assembles one linear equation
//! `λ(t) = Wᵀω(t)` in the stacked unknown
//! `W = [W_c; W_a[:,1]; …; W_a[:,m]; W_d[:,1]; …; W_d[:,q]]`, with
//!
//! ```text
//! ω = [ e^{−αT}ρ(X(t+T)) − ρ(X(t));
//!       2 r_j ∫e^{−α(τ−t)} φ(X) (u − u_i)_j dτ        (j = 1..m);
//!      −2γ² ∫e^{−α(τ−t)} ϕ(X) (d − d_i)_k dτ          (k = 1..q) ]
//!
//! λ = −δ ∫e^{−α(τ−t)} [XᵀQ_T X + u_iᵀR u_i − γ² d_iᵀd_i] dτ
//!     + (1−δ) [e^{−αT}V_i(X(t+T)) − V_i(X(t))]
//!     + (1−δ) ∫e^{−α(τ−t)} 2 u_iᵀR (u − u_i) dτ
//!     − (1−δ) ∫e^{−α(τ−t)} 2γ² d_iᵀ(d − d_i) dτ
//! ```
//!
//! and solves the stacked system in the least-squares sense.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSet, MonomialTable};
use crate::collection::{augmented_weight, WindowDataset, WindowStatistics};
use crate::dynamics::{
    augmented_derivative, augmented_disturbance_matrix, augmented_drift, augmented_input_matrix, rk4_step, SystemModel,
};
use crate::error::{check_dim, Error, Result};
use crate::quadrature::DiscountedRule;

/// Critic and actor weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    /// `W_c ∈ ℝ^{L1}`
    pub critic: DVector<f64>,
    /// `W_a ∈ ℝ^{L2×m}`
    pub actor_u: DMatrix<f64>,
    /// `W_d ∈ ℝ^{L3×q}`
    pub actor_d: DMatrix<f64>,
}

impl WeightSet {
    pub fn zeros(basis: &BasisSet, m: usize, q: usize) -> Self {
        Self {
            critic: DVector::zeros(basis.critic.len()),
            actor_u: DMatrix::zeros(basis.actor_u.len(), m),
            actor_d: DMatrix::zeros(basis.actor_d.len(), q),
        }
    }

    pub fn control_dim(&self) -> usize {
        self.actor_u.ncols()
    }

    pub fn disturbance_dim(&self) -> usize {
        self.actor_d.ncols()
    }

    pub fn len(&self) -> usize {
        self.critic.len() + self.actor_u.len() + self.actor_d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check_against(&self, basis: &BasisSet) -> Result<()> {
        check_dim("critic weights", basis.critic.len(), self.critic.len())?;
        check_dim("control actor weights", basis.actor_u.len(), self.actor_u.nrows())?;
        check_dim("disturbance actor weights", basis.actor_d.len(), self.actor_d.nrows())?;
        if !self.stack().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("weights"));
        }
        Ok(())
    }

    /// `[W_c; W_a columns; W_d columns]`
    pub fn stack(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.critic.iter().chain(self.actor_u.iter()).chain(self.actor_d.iter()).copied(),
        )
    }

    pub fn unstack(stacked: &DVector<f64>, basis: &BasisSet, m: usize, q: usize) -> Result<Self> {
        let (l1, l2, l3) = (basis.critic.len(), basis.actor_u.len(), basis.actor_d.len());
        check_dim("stacked weights", l1 + m * l2 + q * l3, stacked.len())?;
        Ok(Self {
            critic: stacked.rows(0, l1).into_owned(),
            actor_u: DMatrix::from_column_slice(l2, m, stacked.rows(l1, m * l2).as_slice()),
            actor_d: DMatrix::from_column_slice(l3, q, stacked.rows(l1 + m * l2, q * l3).as_slice()),
        })
    }
}

/// How rank deficiency of the regressor stack is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankPolicy {
    /// Truncate singular values below `rcond·σ_max` and return the
    /// minimum-norm solution.
    #[default]
    MinimumNorm,
    /// Fail with [`Error::SingularRegressor`] unless the stack has full
    /// numerical column rank.
    Strict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Newton step size `δ ∈ (0, 1]`.
    pub delta: f64,
    /// Attenuation level `γ`.
    pub gamma: f64,
    /// Discount rate `α`.
    pub alpha: f64,
    /// Diagonal of `R`.
    pub r_diag: Vec<f64>,
    /// State weight `Q` (n × n).
    pub q_weight: DMatrix<f64>,
    pub stop_tol: f64,
    pub max_iters: usize,
    pub ridge: f64,
    pub rcond: f64,
    pub rank_policy: RankPolicy,
}

impl TrainConfig {
    /// `δ`, `γ`, `α`, `Q`, `R` given; solver settings at their defaults.
    pub fn new(delta: f64, gamma: f64, alpha: f64, q_weight: DMatrix<f64>, r_diag: Vec<f64>) -> Self {
        Self {
            delta,
            gamma,
            alpha,
            r_diag,
            q_weight,
            stop_tol: 1e-7,
            max_iters: 500,
            ridge: 0.0,
            rcond: 1e-9,
            rank_policy: RankPolicy::MinimumNorm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad(format!("δ must lie in (0, 1], got {}", self.delta));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return bad(format!("γ must be positive, got {}", self.gamma));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return bad(format!("α must be ≥ 0, got {}", self.alpha));
        }
        if self.r_diag.is_empty() || self.r_diag.iter().any(|r| !(*r > 0.0)) {
            return bad(format!("R must be positive diagonal, got {:?}", self.r_diag));
        }
        if !self.q_weight.is_square()
            || self.q_weight.nrows() == 0
            || (&self.q_weight - self.q_weight.transpose()).amax() > 1e-12 * self.q_weight.amax().max(1.0)
            || self.q_weight.clone().cholesky().is_none()
        {
            return bad("Q must be symmetric positive definite".into());
        }
        if !(self.stop_tol > 0.0) || self.max_iters == 0 {
            return bad("stop_tol must be positive and max_iters ≥ 1".into());
        }
        if !(self.ridge >= 0.0) || !(self.rcond >= 0.0 && self.rcond < 1.0) {
            return bad("ridge must be ≥ 0 and rcond in [0, 1)".into());
        }
        Ok(())
    }

    fn gamma_sq(&self) -> f64 {
        self.gamma * self.gamma
    }
}

/// Regressor `ω(t)` and target `λ(t)` of one window.
pub fn assemble_row(
    window: &WindowStatistics,
    w_prev: &WeightSet,
    cfg: &TrainConfig,
    period: f64,
) -> Result<(DVector<f64>, f64)> {
    let (m, q) = (w_prev.control_dim(), w_prev.disturbance_dim());
    check_dim("critic weights", window.rho_start.len(), w_prev.critic.len())?;
    check_dim("control actor weights", window.i_phi_phi.nrows(), w_prev.actor_u.nrows())?;
    check_dim("disturbance actor weights", window.i_vphi_vphi.nrows(), w_prev.actor_d.nrows())?;
    check_dim("control channels", window.i_phi_u.ncols(), m)?;
    check_dim("disturbance channels", window.i_vphi_d.ncols(), q)?;
    check_dim("R diagonal", m, cfg.r_diag.len())?;

    let (l1, l2, l3) = (w_prev.critic.len(), w_prev.actor_u.nrows(), w_prev.actor_d.nrows());
    let g2 = cfg.gamma_sq();
    let delta = cfg.delta;
    let rho_diff = &window.rho_end * (-cfg.alpha * period).exp() - &window.rho_start;

    let mut omega = DVector::zeros(l1 + m * l2 + q * l3);
    omega.rows_mut(0, l1).copy_from(&rho_diff);

    // Reinforcement integral under the evaluated policies.
    let mut running_cost = window.i_q;
    // ∫ 2u_iᵀR(u − u_i) − 2γ² d_iᵀ(d − d_i)
    let mut cross = 0.0;
    for j in 0..m {
        let wa = w_prev.actor_u.column(j);
        // ∫ φ (u − u_i)_j
        let a = window.i_phi_u.column(j) - &window.i_phi_phi * wa;
        let r = cfg.r_diag[j];
        running_cost += r * wa.dot(&(&window.i_phi_phi * wa));
        cross += 2.0 * r * wa.dot(&a);
        omega.rows_mut(l1 + j * l2, l2).copy_from(&(a * (2.0 * r)));
    }
    for k in 0..q {
        let wd = w_prev.actor_d.column(k);
        // ∫ ϕ (d − d_i)_k
        let b = window.i_vphi_d.column(k) - &window.i_vphi_vphi * wd;
        running_cost -= g2 * wd.dot(&(&window.i_vphi_vphi * wd));
        cross -= 2.0 * g2 * wd.dot(&b);
        omega.rows_mut(l1 + m * l2 + k * l3, l3).copy_from(&(b * (-2.0 * g2)));
    }

    let lambda = -delta * running_cost + (1.0 - delta) * (w_prev.critic.dot(&rho_diff) + cross);
    Ok((omega, lambda))
}

/// `ω(t)` for one window.
pub fn assemble_regressor(
    window: &WindowStatistics,
    w_prev: &WeightSet,
    cfg: &TrainConfig,
    period: f64,
) -> Result<DVector<f64>> {
    Ok(assemble_row(window, w_prev, cfg, period)?.0)
}

/// `λ(t)` for one window.
pub fn assemble_target(window: &WindowStatistics, w_prev: &WeightSet, cfg: &TrainConfig, period: f64) -> Result<f64> {
    Ok(assemble_row(window, w_prev, cfg, period)?.1)
}

/// Diagnostics of one least-squares solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveInfo {
    /// `‖ΩW − Λ‖₂` over the data rows (ridge rows excluded).
    pub residual_norm: f64,
    /// `σ_max/σ_min` of the (ridge-augmented) regressor stack.
    pub condition: f64,
    pub rank: usize,
}

/// Least-squares solution of `rows · w ≈ targets` via QR followed by an SVD
/// of the triangular factor. `ridge > 0` adds `ridge·‖w‖²` to the objective.
pub fn least_squares(
    rows: &DMatrix<f64>,
    targets: &DVector<f64>,
    ridge: f64,
    rcond: f64,
    policy: RankPolicy,
) -> Result<(DVector<f64>, SolveInfo)> {
    let (n_rows, p) = rows.shape();
    check_dim("least-squares targets", n_rows, targets.len())?;
    if rows.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regressor or target"));
    }
    let (a, b) = if ridge > 0.0 {
        let mut a = DMatrix::zeros(n_rows + p, p);
        a.view_mut((0, 0), (n_rows, p)).copy_from(rows);
        a.view_mut((n_rows, 0), (p, p)).fill_diagonal(ridge.sqrt());
        let mut b = DVector::zeros(n_rows + p);
        b.rows_mut(0, n_rows).copy_from(targets);
        (a, b)
    } else {
        (rows.clone(), targets.clone())
    };
    let singular = |rank, condition| Error::SingularRegressor { rank, unknowns: p, condition };
    if a.nrows() < p {
        return Err(singular(a.nrows(), f64::INFINITY));
    }

    let qr = a.qr();
    let mut qtb = b;
    qr.q_tr_mul(&mut qtb);
    let r = qr.r();
    let svd = r.svd(true, true);
    let sigma = &svd.singular_values;
    let s_max = sigma.max();
    let s_min = sigma.min();
    let condition = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };
    let cutoff = rcond * s_max;
    let rank = sigma.iter().filter(|s| **s > cutoff).count();
    if rank == 0 || (policy == RankPolicy::Strict && rank < p) {
        return Err(singular(rank, condition));
    }
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested Vᵀ");
    let utb = u.tr_mul(&qtb.rows(0, p));
    let mut coeffs = DVector::zeros(p);
    for i in 0..p {
        if sigma[i] > cutoff {
            coeffs[i] = utb[i] / sigma[i];
        }
    }
    let w = v_t.tr_mul(&coeffs);
    let residual_norm = (rows * &w - targets).norm();
    Ok((w, SolveInfo { residual_norm, condition, rank }))
}

fn check_fingerprint(dataset: &WindowDataset, basis: &BasisSet, cfg: &TrainConfig) -> Result<()> {
    let fp = &dataset.fingerprint;
    if fp.basis_hash != basis.ordering_hash() {
        return Err(Error::Fingerprint(format!(
            "basis ordering hash {} does not match {}",
            fp.basis_hash,
            basis.ordering_hash()
        )));
    }
    if fp.alpha != cfg.alpha {
        return Err(Error::Fingerprint(format!("dataset α = {} but training α = {}", fp.alpha, cfg.alpha)));
    }
    let q: Vec<f64> = cfg.q_weight.transpose().iter().copied().collect();
    if fp.q_weight != q {
        return Err(Error::Fingerprint("dataset Q differs from training Q".into()));
    }
    if fp.control_dim != cfg.r_diag.len() {
        return Err(Error::Fingerprint(format!(
            "dataset has {} control channels but R has {} entries",
            fp.control_dim,
            cfg.r_diag.len()
        )));
    }
    Ok(())
}

/// One off-policy δ-PI update: the least-squares solution of the stacked
/// window equations around `w_prev`.
pub fn solve_weights(
    dataset: &WindowDataset,
    basis: &BasisSet,
    w_prev: &WeightSet,
    cfg: &TrainConfig,
) -> Result<(WeightSet, SolveInfo)> {
    w_prev.check_against(basis)?;
    let p = w_prev.len();
    let mut rows = DMatrix::zeros(dataset.len(), p);
    let mut targets = DVector::zeros(dataset.len());
    for (i, window) in dataset.windows.iter().enumerate() {
        let (omega, lambda) = assemble_row(window, w_prev, cfg, dataset.fingerprint.period)?;
        rows.row_mut(i).tr_copy_from(&omega);
        targets[i] = lambda;
    }
    let (w, info) = least_squares(&rows, &targets, cfg.ridge, cfg.rcond, cfg.rank_policy)?;
    let weights = WeightSet::unstack(&w, basis, w_prev.control_dim(), w_prev.disturbance_dim())?;
    Ok((weights, info))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    /// 1-based iteration index.
    pub iter: usize,
    /// `‖W^{i+1} − W^i‖₂` on the stacked weights.
    pub delta_w_norm: f64,
    pub ls_residual: f64,
    pub cond_estimate: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    /// Stacked weights after each iteration.
    pub history: Vec<DVector<f64>>,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub weights: WeightSet,
    pub trace: IterationTrace,
    pub converged: bool,
}

impl TrainOutcome {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }
}

/// Off-policy δ-PI from `W⁰ = 0`, reusing one dataset for every iteration.
pub fn offpolicy_train(dataset: &WindowDataset, basis: &BasisSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let start = WeightSet::zeros(basis, dataset.fingerprint.control_dim, dataset.fingerprint.disturbance_dim);
    offpolicy_train_from(dataset, basis, cfg, start)
}

/// Off-policy δ-PI from a given initial iterate.
pub fn offpolicy_train_from(
    dataset: &WindowDataset,
    basis: &BasisSet,
    cfg: &TrainConfig,
    start: WeightSet,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_fingerprint(dataset, basis, cfg)?;
    dataset.check_rank_condition(basis)?;
    let mut weights = start;
    let mut stacked = weights.stack();
    let mut trace = IterationTrace::default();
    for iter in 1..=cfg.max_iters {
        let (next, info) = solve_weights(dataset, basis, &weights, cfg)?;
        let next_stacked = next.stack();
        let delta_w_norm = (&next_stacked - &stacked).norm();
        trace.records.push(IterationRecord {
            iter,
            delta_w_norm,
            ls_residual: info.residual_norm,
            cond_estimate: info.condition,
            rank: info.rank,
        });
        trace.history.push(next_stacked.clone());
        weights = next;
        stacked = next_stacked;
        if delta_w_norm < cfg.stop_tol {
            return Ok(TrainOutcome { weights, trace, converged: true });
        }
    }
    Ok(TrainOutcome { weights, trace, converged: false })
}

/// `X ↦ Wᵀψ(X)` for a feature table `ψ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy {
    table: MonomialTable,
    weights: DMatrix<f64>,
}

impl LinearPolicy {
    pub fn new(table: MonomialTable, weights: DMatrix<f64>) -> Result<Self> {
        check_dim("policy weights", table.len(), weights.nrows())?;
        Ok(Self { table, weights })
    }

    pub fn output_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.weights.tr_mul(&self.table.eval(x)?))
    }
}

/// `û(X) = W_aᵀφ(X)` and `d̂(X) = W_dᵀϕ(X)`.
pub fn extract_policies(weights: &WeightSet, basis: &BasisSet) -> Result<(LinearPolicy, LinearPolicy)> {
    Ok((
        LinearPolicy::new(basis.actor_u.clone(), weights.actor_u.clone())?,
        LinearPolicy::new(basis.actor_d.clone(), weights.actor_d.clone())?,
    ))
}

/// `∂V̂/∂X = (∂ρ/∂X)ᵀ W_c`
fn value_gradient(critic: &MonomialTable, w_c: &DVector<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(critic.jacobian(x)?.tr_mul(w_c))
}

/// Model-based policies implied by a critic:
/// `u = −½R⁻¹Gᵀ∇V̂`, `d = (1/2γ²)Kᵀ∇V̂`.
#[derive(Clone, Copy)]
pub struct CriticPolicies<'a> {
    pub model: &'a dyn SystemModel,
    pub critic: &'a MonomialTable,
    pub w_c: &'a DVector<f64>,
    pub r_diag: &'a [f64],
    pub gamma: f64,
}

impl CriticPolicies<'_> {
    pub fn control(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let grad = value_gradient(self.critic, self.w_c, x)?;
        let g = augmented_input_matrix(self.model, x)?;
        let mut u = g.tr_mul(&grad) * -0.5;
        for (uj, r) in u.iter_mut().zip(self.r_diag) {
            *uj /= r;
        }
        Ok(u)
    }

    pub fn disturbance(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let grad = value_gradient(self.critic, self.w_c, x)?;
        let k = augmented_disturbance_matrix(self.model, x)?;
        Ok(k.tr_mul(&grad) / (2.0 * self.gamma * self.gamma))
    }
}

/// Tracking HJI residual of the critic `V̂ = W_cᵀρ` at `X`:
///
/// `XᵀQ_T X − αV̂ + ∇V̂ᵀF − ¼∇V̂ᵀGR⁻¹Gᵀ∇V̂ + (1/4γ²)∇V̂ᵀKKᵀ∇V̂`
pub fn hji_residual(
    model: &dyn SystemModel,
    w_c: &DVector<f64>,
    basis: &BasisSet,
    cfg: &TrainConfig,
    x: &DVector<f64>,
) -> Result<f64> {
    check_dim("critic weights", basis.critic.len(), w_c.len())?;
    check_dim("R diagonal", model.control_dim(), cfg.r_diag.len())?;
    let q_aug = augmented_weight(&cfg.q_weight);
    check_dim("Q_T", x.len(), q_aug.nrows())?;
    let value = w_c.dot(&basis.critic.eval(x)?);
    let grad = value_gradient(&basis.critic, w_c, x)?;
    let f = augmented_drift(model, x)?;
    let gt_grad = augmented_input_matrix(model, x)?.tr_mul(&grad);
    let kt_grad = augmented_disturbance_matrix(model, x)?.tr_mul(&grad);
    let control_term: f64 = gt_grad.iter().zip(&cfg.r_diag).map(|(g, r)| g * g / r).sum();
    Ok((x.transpose() * &q_aug * x)[0] - cfg.alpha * value + grad.dot(&f) - 0.25 * control_term
        + kt_grad.norm_squared() / (4.0 * cfg.gamma_sq()))
}

/// Root-mean-square HJI residual over `points`.
pub fn rms_hji_residual(
    model: &dyn SystemModel,
    w_c: &DVector<f64>,
    basis: &BasisSet,
    cfg: &TrainConfig,
    points: &[DVector<f64>],
) -> Result<f64> {
    let mut acc = 0.0;
    for x in points {
        acc += hji_residual(model, w_c, basis, cfg, x)?.powi(2);
    }
    Ok((acc / points.len().max(1) as f64).sqrt())
}

/// Data generation for the on-policy learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSpec {
    pub n_initial_states: usize,
    pub windows_per_state: usize,
    /// Sampling period `T`.
    pub period: f64,
    /// Fine steps per window `M`.
    pub substeps: usize,
    /// Box for the seeded initial augmented states.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub seed: u64,
}

impl EpisodeSpec {
    /// 20 initial states × 10 windows, uniform in `[−1, 1]^{2n}`.
    pub fn standard(state_dim: usize, period: f64, substeps: usize, seed: u64) -> Self {
        Self {
            n_initial_states: 20,
            windows_per_state: 10,
            period,
            substeps,
            lower: vec![-1.0; 2 * state_dim],
            upper: vec![1.0; 2 * state_dim],
            seed,
        }
    }

    fn initial_states(&self) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(ON_POLICY_STREAM);
        (0..self.n_initial_states)
            .map(|_| {
                DVector::from_iterator(
                    self.lower.len(),
                    self.lower.iter().zip(&self.upper).map(|(&l, &u)| if l == u { l } else { rng.random_range(l..u) }),
                )
            })
            .collect()
    }
}

/// Stream id for on-policy initial states.
pub const ON_POLICY_STREAM: u64 = (1 << 32) + 1;

/// Bound on `‖X‖∞` beyond which an on-policy rollout counts as divergent.
pub const DIVERGENCE_BOUND: f64 = 1e3;

struct Rollout {
    regressor: DVector<f64>,
    running_cost: f64,
    states: Vec<DVector<f64>>,
}

fn rollout_windows(
    model: &dyn SystemModel,
    basis: &BasisSet,
    cfg: &TrainConfig,
    episode: &EpisodeSpec,
    policies: &CriticPolicies<'_>,
    q_aug: &DMatrix<f64>,
    rule: &DiscountedRule,
) -> Result<Vec<Rollout>> {
    let h = episode.period / episode.substeps as f64;
    let discount = (-cfg.alpha * episode.period).exp();
    let g2 = cfg.gamma_sq();
    let running = |x: &DVector<f64>| -> Result<f64> {
        let u = policies.control(x)?;
        let d = policies.disturbance(x)?;
        let ru: f64 = u.iter().zip(&cfg.r_diag).map(|(v, r)| r * v * v).sum();
        Ok((x.transpose() * q_aug * x)[0] + ru - g2 * d.norm_squared())
    };
    let field = |_t: f64, x: &DVector<f64>| -> Result<DVector<f64>> {
        augmented_derivative(model, x, &policies.control(x)?, &policies.disturbance(x)?)
    };

    let mut out = Vec::with_capacity(episode.n_initial_states * episode.windows_per_state);
    for x0 in episode.initial_states() {
        let mut state = x0;
        let mut t = 0.0;
        for _ in 0..episode.windows_per_state {
            let mut states = Vec::with_capacity(episode.substeps + 1);
            states.push(state.clone());
            for _ in 0..episode.substeps {
                state = rk4_step(field, t, &state, h)?;
                t += h;
                let norm = state.amax();
                if !norm.is_finite() || norm > DIVERGENCE_BOUND {
                    return Err(Error::Diverged { t, norm });
                }
                states.push(state.clone());
            }
            let costs: Vec<f64> = states.iter().map(running).collect::<Result<_>>()?;
            let rho_start = basis.critic.eval(&states[0])?;
            let rho_end = basis.critic.eval(&states[episode.substeps])?;
            out.push(Rollout {
                regressor: rho_end * discount - rho_start,
                running_cost: rule.integrate(&costs)?,
                states,
            });
        }
    }
    Ok(out)
}

/// Model-based on-policy δ-PI.
///
/// Every iteration re-simulates the augmented system under the current
/// critic-implied policies from the episode's seeded initial states, solves
/// the discrete generalized Bellman equation for `W_c` alone, and takes the
/// next policies analytically from `∇V̂`. On return the actor weights hold
/// least-squares projections of the final analytic policies onto the actor
/// bases over all visited states, so [`extract_policies`] applies.
pub fn onpolicy_train(
    model: &dyn SystemModel,
    basis: &BasisSet,
    cfg: &TrainConfig,
    episode: &EpisodeSpec,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (n, m, q) = (model.state_dim(), model.control_dim(), model.disturbance_dim());
    check_dim("basis variables", 2 * n, basis.n_vars())?;
    check_dim("R diagonal", m, cfg.r_diag.len())?;
    check_dim("episode lower bound", 2 * n, episode.lower.len())?;
    check_dim("episode upper bound", 2 * n, episode.upper.len())?;
    if episode.substeps < 2 || !(episode.period > 0.0) {
        return Err(Error::InvalidConfig("episode needs T > 0 and M ≥ 2".into()));
    }
    let windows = episode.n_initial_states * episode.windows_per_state;
    if windows <= basis.critic.len() {
        return Err(Error::RankCondition { windows, unknowns: basis.critic.len() });
    }

    let q_aug = augmented_weight(&cfg.q_weight);
    let rule = DiscountedRule::new(cfg.alpha, episode.period / episode.substeps as f64, episode.substeps)?;
    let mut w_c = DVector::zeros(basis.critic.len());
    let mut trace = IterationTrace::default();
    let mut converged = false;
    for iter in 1..=cfg.max_iters {
        let policies =
            CriticPolicies { model, critic: &basis.critic, w_c: &w_c, r_diag: &cfg.r_diag, gamma: cfg.gamma };
        let rollouts = rollout_windows(model, basis, cfg, episode, &policies, &q_aug, &rule)?;
        let mut rows = DMatrix::zeros(rollouts.len(), basis.critic.len());
        let mut targets = DVector::zeros(rollouts.len());
        for (i, r) in rollouts.iter().enumerate() {
            rows.row_mut(i).tr_copy_from(&r.regressor);
            targets[i] = -cfg.delta * r.running_cost + (1.0 - cfg.delta) * w_c.dot(&r.regressor);
        }
        let (next, info) = least_squares(&rows, &targets, cfg.ridge, cfg.rcond, cfg.rank_policy)?;
        let delta_w_norm = (&next - &w_c).norm();
        trace.records.push(IterationRecord {
            iter,
            delta_w_norm,
            ls_residual: info.residual_norm,
            cond_estimate: info.condition,
            rank: info.rank,
        });
        trace.history.push(next.clone());
        w_c = next;
        if delta_w_norm < cfg.stop_tol {
            converged = true;
            break;
        }
    }

    let policies = CriticPolicies { model, critic: &basis.critic, w_c: &w_c, r_diag: &cfg.r_diag, gamma: cfg.gamma };
    let visited: Vec<DVector<f64>> = rollout_windows(model, basis, cfg, episode, &policies, &q_aug, &rule)?
        .into_iter()
        .flat_map(|r| r.states)
        .collect();
    let actor_u = project_policy(&basis.actor_u, &visited, m, |x| policies.control(x), cfg.rcond)?;
    let actor_d = project_policy(&basis.actor_d, &visited, q, |x| policies.disturbance(x), cfg.rcond)?;
    Ok(TrainOutcome { weights: WeightSet { critic: w_c, actor_u, actor_d }, trace, converged })
}

fn project_policy<F>(
    table: &MonomialTable,
    states: &[DVector<f64>],
    outputs: usize,
    policy: F,
    rcond: f64,
) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut features = DMatrix::zeros(states.len(), table.len());
    let mut values = DMatrix::zeros(states.len(), outputs);
    for (i, x) in states.iter().enumerate() {
        features.row_mut(i).tr_copy_from(&table.eval(x)?);
        values.row_mut(i).tr_copy_from(&policy(x)?);
    }
    let mut weights = DMatrix::zeros(table.len(), outputs);
    for j in 0..outputs {
        let (w, _) = least_squares(&features, &values.column(j).into_owned(), 0.0, rcond, RankPolicy::MinimumNorm)?;
        weights.set_column(j, &w);
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Benchmark, ScalarLinear};
    use approx::assert_abs_diff_eq;

    fn basis4() -> BasisSet {
        BasisSet::polynomial(4).unwrap()
    }

    fn cfg(delta: f64) -> TrainConfig {
        TrainConfig::new(delta, 5.0, 0.1, DMatrix::identity(2, 2) * 10.0, vec![1.0])
    }

    fn random_window(seed: u64, basis: &BasisSet) -> WindowStatistics {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = |rows, cols| DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
        let pp = r(basis.actor_u.len(), basis.actor_u.len());
        let vv = r(basis.actor_d.len(), basis.actor_d.len());
        WindowStatistics {
            state_start: r(4, 1).column(0).into_owned(),
            state_end: r(4, 1).column(0).into_owned(),
            rho_start: r(basis.critic.len(), 1).column(0).into_owned(),
            rho_end: r(basis.critic.len(), 1).column(0).into_owned(),
            i_q: 0.37,
            i_phi_u: r(basis.actor_u.len(), 1),
            i_phi_phi: &pp * pp.transpose(),
            i_vphi_d: r(basis.actor_d.len(), 1),
            i_vphi_vphi: &vv * vv.transpose(),
        }
    }

    fn random_weights(seed: u64, basis: &BasisSet) -> WeightSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stacked = DVector::from_fn(basis.unknowns(1, 1), |_, _| rng.random_range(-1.0..1.0));
        WeightSet::unstack(&stacked, basis, 1, 1).unwrap()
    }

    #[test]
    fn stack_roundtrip_and_order() {
        let basis = basis4();
        let w = random_weights(1, &basis);
        let s = w.stack();
        assert_eq!(s.rows(0, 45), w.critic.rows(0, 45));
        assert_eq!(s[45], w.actor_u[(0, 0)]);
        assert_eq!(s[69], w.actor_d[(0, 0)]);
        assert_eq!(WeightSet::unstack(&s, &basis, 1, 1).unwrap(), w);
        assert!(WeightSet::unstack(&DVector::zeros(92), &basis, 1, 1).is_err());
    }

    #[test]
    fn zero_iterate_regressor_and_target() {
        let basis = basis4();
        let win = random_window(3, &basis);
        let w0 = WeightSet::zeros(&basis, 1, 1);
        let (omega, lambda) = assemble_row(&win, &w0, &cfg(0.3), 0.1).unwrap();
        let disc = (-0.01f64).exp();
        assert_abs_diff_eq!(omega.rows(0, 45).into_owned(), &win.rho_end * disc - &win.rho_start, epsilon = 1e-15);
        assert_abs_diff_eq!(omega.rows(45, 24).into_owned(), win.i_phi_u.column(0) * 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(omega.rows(69, 24).into_owned(), win.i_vphi_d.column(0) * -50.0, epsilon = 1e-13);
        assert_abs_diff_eq!(lambda, -0.3 * 0.37, epsilon = 1e-15);
    }

    #[test]
    fn zero_statistics_give_zero_regressor() {
        let basis = basis4();
        let win = WindowStatistics {
            state_start: DVector::zeros(4),
            state_end: DVector::zeros(4),
            rho_start: DVector::zeros(45),
            rho_end: DVector::zeros(45),
            i_q: 0.0,
            i_phi_u: DMatrix::zeros(24, 1),
            i_phi_phi: DMatrix::zeros(24, 24),
            i_vphi_d: DMatrix::zeros(24, 1),
            i_vphi_vphi: DMatrix::zeros(24, 24),
        };
        let (omega, lambda) = assemble_row(&win, &random_weights(4, &basis), &cfg(0.3), 0.1).unwrap();
        assert!(omega.iter().all(|v| *v == 0.0));
        assert_eq!(lambda, 0.0);
    }

    #[test]
    fn unit_delta_drops_damping_terms() {
        let basis = basis4();
        let win = random_window(5, &basis);
        let w = random_weights(6, &basis);
        let lambda = assemble_target(&win, &w, &cfg(1.0), 0.1).unwrap();
        let wa = w.actor_u.column(0);
        let wd = w.actor_d.column(0);
        let expected = -(win.i_q + wa.dot(&(&win.i_phi_phi * wa)) - 25.0 * wd.dot(&(&win.i_vphi_vphi * wd)));
        assert_abs_diff_eq!(lambda, expected, epsilon = 1e-12);
    }

    #[test]
    fn target_is_affine_in_delta() {
        let basis = basis4();
        let win = random_window(7, &basis);
        let w = random_weights(8, &basis);
        let (omega, l1) = assemble_row(&win, &w, &cfg(1.0), 0.1).unwrap();
        let l_half = assemble_target(&win, &w, &cfg(0.5), 0.1).unwrap();
        let fixed_point = w.stack().dot(&omega);
        assert_abs_diff_eq!(l_half, 0.5 * l1 + 0.5 * fixed_point, epsilon = 1e-10);
    }

    #[test]
    fn least_squares_identity_and_mean() {
        let y = DVector::from_column_slice(&[1.0, -2.0, 3.5]);
        let (w, info) = least_squares(&DMatrix::identity(3, 3), &y, 0.0, 1e-12, RankPolicy::Strict).unwrap();
        assert_abs_diff_eq!(w, y, epsilon = 1e-14);
        assert_eq!(info.rank, 3);

        let a = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let (w, info) =
            least_squares(&a, &DVector::from_column_slice(&[0.0, 2.0]), 0.0, 1e-12, RankPolicy::Strict).unwrap();
        assert_abs_diff_eq!(w[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(info.residual_norm, 2f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn least_squares_rank_handling() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let b = DVector::from_column_slice(&[2.0, 4.0, 6.0]);
        assert!(matches!(
            least_squares(&a, &b, 0.0, 1e-9, RankPolicy::Strict),
            Err(Error::SingularRegressor { rank: 1, unknowns: 2, .. })
        ));
        let (w, info) = least_squares(&a, &b, 0.0, 1e-9, RankPolicy::MinimumNorm).unwrap();
        assert_eq!(info.rank, 1);
        assert_abs_diff_eq!(w, DVector::from_column_slice(&[1.0, 1.0]), epsilon = 1e-12);
        // ridge restores full rank
        let (_, info) = least_squares(&a, &b, 1e-3, 1e-9, RankPolicy::Strict).unwrap();
        assert_eq!(info.rank, 2);
        assert!(matches!(
            least_squares(&DMatrix::zeros(3, 2), &b, 0.0, 1e-9, RankPolicy::MinimumNorm),
            Err(Error::SingularRegressor { rank: 0, .. })
        ));
        let mut nan = a.clone();
        nan[(0, 0)] = f64::NAN;
        assert!(matches!(least_squares(&nan, &b, 0.0, 1e-9, RankPolicy::MinimumNorm), Err(Error::NonFinite(_))));
    }

    #[test]
    fn policies_from_weights() {
        let basis = basis4();
        let zero = WeightSet::zeros(&basis, 1, 1);
        let (u, d) = extract_policies(&zero, &basis).unwrap();
        let x = DVector::from_column_slice(&[0.3, -0.2, 0.9, 1.1]);
        assert_eq!(u.eval(&x).unwrap()[0], 0.0);
        assert_eq!(d.eval(&x).unwrap()[0], 0.0);

        let w = random_weights(9, &basis);
        let (u, d) = extract_policies(&w, &basis).unwrap();
        assert_eq!(u.eval(&DVector::zeros(4)).unwrap()[0], 0.0);
        assert_eq!(d.eval(&DVector::zeros(4)).unwrap()[0], 0.0);

        let mut unit = WeightSet::zeros(&basis, 1, 1);
        unit.actor_u[(1, 0)] = 1.0; // feature X2
        let (u, _) = extract_policies(&unit, &basis).unwrap();
        assert_eq!(u.eval(&x).unwrap()[0], -0.2);
    }

    #[test]
    fn hji_residual_special_cases() {
        let basis = basis4();
        let c = cfg(0.3);
        let x = DVector::from_column_slice(&[0.5, -1.0, 0.3, 0.7]);
        let r0 = hji_residual(&Benchmark, &DVector::zeros(45), &basis, &c, &x).unwrap();
        assert_abs_diff_eq!(r0, 10.0 * (0.25 + 1.0), epsilon = 1e-12);
        let w = random_weights(10, &basis);
        let at_origin = hji_residual(&Benchmark, &w.critic, &basis, &c, &DVector::zeros(4)).unwrap();
        assert_eq!(at_origin, 0.0);
    }

    #[test]
    fn scalar_riccati_root_has_zero_residual() {
        let critic = MonomialTable::from_exponents(2, vec![vec![2, 0]]).unwrap();
        let actor = MonomialTable::from_exponents(2, vec![vec![1, 0]]).unwrap();
        let basis = BasisSet::new(critic, actor.clone(), actor).unwrap();
        let (q, r, g, a) = (1.0, 1.0, 5.0, 0.1);
        let c = TrainConfig::new(1.0, g, a, DMatrix::from_element(1, 1, q), vec![r]);
        // (1/γ² − 1/r)p² − (α + 2)p + q = 0
        let qa = 1.0 / (g * g) - 1.0 / r;
        let qb = -(a + 2.0);
        let p = (-qb - (qb * qb - 4.0 * qa * q).sqrt()) / (2.0 * qa);
        assert!(p > 0.0);
        for i in 0..=20 {
            let x = DVector::from_column_slice(&[-1.0 + 0.1 * i as f64, 0.0]);
            let res = hji_residual(&ScalarLinear::default(), &DVector::from_element(1, p), &basis, &c, &x).unwrap();
            assert!(res.abs() < 1e-12, "{res}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0.0).validate().is_err());
        assert!(cfg(1.5).validate().is_err());
        cfg(1.0).validate().unwrap();
        let mut c = cfg(0.3);
        c.r_diag = vec![0.0];
        assert!(c.validate().is_err());
        let mut c = cfg(0.3);
        c.q_weight = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(c.validate().is_err());
    }
}
