//! Behavior-signal excitation and per-window sufficient statistics.
//!
//! Each sampling window `[t, t+T]` is compressed into discounted integrals
//! that do not depend on the policy iterate. Since `u − u_i = u − W_aᵀφ(X)`
//! and `d − d_i = d − W_dᵀϕ(X)` are linear in the weights, every integral
//! the learner needs expands into these stored terms:
//!
//! | field          | value                                  |
//! |----------------|----------------------------------------|
//! | `rho_start`    | `ρ(X(t))`                              |
//! | `rho_end`      | `ρ(X(t+T))`                            |
//! | `i_q`          | `∫ e^{−α(τ−t)} Xᵀ Q_T X dτ`            |
//! | `i_phi_u`      | `∫ e^{−α(τ−t)} φ(X) u_j dτ`, column j  |
//! | `i_phi_phi`    | `∫ e^{−α(τ−t)} φ(X) φ(X)ᵀ dτ`          |
//! | `i_vphi_d`     | `∫ e^{−α(τ−t)} ϕ(X) d_k dτ`, column k  |
//! | `i_vphi_vphi`  | `∫ e^{−α(τ−t)} ϕ(X) ϕ(X)ᵀ dτ`          |
//!
//! Inputs are zero-order held over each fine step of width `h = T/M`.
//!
//! # Random streams
//!
//! All randomness derives from ChaCha8 generators keyed by a 64-bit seed.
//! Channel `c` (control channels `0..m`, then disturbance channels
//! `m..m+q`) draws its sinusoid frequencies and phases from stream `2c`
//! and its per-step noise from stream `2c + 1`, addressed by step index,
//! so any step's value can be regenerated independently. Restart-mode
//! initial states come from stream [`RESTART_STREAM`].

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::dynamics::{augmented_derivative, rk4_step, AugmentedState, SystemModel};
use crate::error::{check_dim, Error, Result};
use crate::quadrature::DiscountedRule;

pub use crate::quadrature::discounted_quadrature;

/// Stream id for restart-mode initial states.
pub const RESTART_STREAM: u64 = 1 << 32;

/// Sum-of-sinusoids plus piecewise-constant uniform noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorSignalSpec {
    pub amplitude: f64,
    pub n_sinusoids: usize,
    /// `[low, high]` in rad/s.
    pub freq_range: [f64; 2],
    pub noise_amplitude: f64,
    pub seed: u64,
}

impl BehaviorSignalSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0) || !(self.noise_amplitude >= 0.0) {
            return Err(Error::InvalidConfig("behavior amplitudes must be ≥ 0".into()));
        }
        if !(self.freq_range[0] < self.freq_range[1]) {
            return Err(Error::InvalidConfig(format!(
                "behavior frequency range {:?} must satisfy low < high",
                self.freq_range
            )));
        }
        if self.amplitude > 0.0 && self.n_sinusoids == 0 {
            return Err(Error::InvalidConfig("nonzero amplitude with no sinusoids".into()));
        }
        Ok(())
    }

    /// Same spec with both amplitudes zero.
    pub fn silent(seed: u64) -> Self {
        Self { amplitude: 0.0, n_sinusoids: 1, freq_range: [0.1, 10.0], noise_amplitude: 0.0, seed }
    }
}

/// A realized behavior signal for one input channel.
#[derive(Debug, Clone)]
pub struct BehaviorSignal {
    amplitude: f64,
    noise_amplitude: f64,
    freqs: Vec<f64>,
    phases: Vec<f64>,
    noise_rng: ChaCha8Rng,
    h: f64,
}

impl BehaviorSignal {
    pub fn new(spec: &BehaviorSignalSpec, channel: u64, h: f64) -> Result<Self> {
        spec.validate()?;
        if !(h > 0.0) {
            return Err(Error::InvalidConfig(format!("fine step must be positive, got {h}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(2 * channel);
        let [lo, hi] = spec.freq_range;
        let mut freqs = Vec::with_capacity(spec.n_sinusoids);
        let mut phases = Vec::with_capacity(spec.n_sinusoids);
        for _ in 0..spec.n_sinusoids {
            freqs.push(rng.random_range(lo..hi));
            phases.push(rng.random_range(0.0..std::f64::consts::TAU));
        }
        let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        noise_rng.set_stream(2 * channel + 1);
        Ok(Self { amplitude: spec.amplitude, noise_amplitude: spec.noise_amplitude, freqs, phases, noise_rng, h })
    }

    fn sinusoids(&self, t: f64) -> f64 {
        if self.freqs.is_empty() || self.amplitude == 0.0 {
            return 0.0;
        }
        let sum: f64 = self.freqs.iter().zip(&self.phases).map(|(w, p)| (w * t + p).sin()).sum();
        self.amplitude * sum / self.freqs.len() as f64
    }

    /// `η_k ∈ [−1, 1]`, the noise sample held over fine step `k`.
    pub fn noise(&self, step: u64) -> f64 {
        let mut rng = self.noise_rng.clone();
        rng.set_word_pos(2 * step as u128);
        rng.random_range(-1.0..=1.0)
    }

    /// Value held over fine step `k` (evaluated at `t = k·h`).
    pub fn at_step(&self, step: u64) -> f64 {
        let noise = if self.noise_amplitude == 0.0 { 0.0 } else { self.noise_amplitude * self.noise(step) };
        self.sinusoids(step as f64 * self.h) + noise
    }

    /// Value at an arbitrary `t ≥ 0`; the noise is that of the step
    /// containing `t`.
    pub fn value(&self, t: f64) -> f64 {
        let noise = if self.noise_amplitude == 0.0 {
            0.0
        } else {
            let step = ((t / self.h) + 1e-9).floor().max(0.0) as u64;
            self.noise_amplitude * self.noise(step)
        };
        self.sinusoids(t) + noise
    }
}

/// `behavior_signal(t, spec)` for channel 0 with fine step `h`.
pub fn behavior_signal(t: f64, spec: &BehaviorSignalSpec, h: f64) -> Result<f64> {
    Ok(BehaviorSignal::new(spec, 0, h)?.value(t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CollectionMode {
    /// One continuous trajectory of duration `N·T` sliced into windows.
    SingleTrajectory,
    /// Every window starts from an independent state drawn uniformly from
    /// the box `[lower, upper]` (per augmented coordinate).
    Restart { lower: Vec<f64>, upper: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectionConfig {
    /// Sampling period `T`.
    pub period: f64,
    /// Fine steps per window `M`.
    pub substeps: usize,
    pub alpha: f64,
    /// State weight `Q` (n × n); `Q_T = blkdiag(Q, 0)`.
    pub q_weight: DMatrix<f64>,
    pub n_windows: usize,
    pub mode: CollectionMode,
    pub seed: u64,
}

impl CollectionConfig {
    pub fn fine_step(&self) -> f64 {
        self.period / self.substeps as f64
    }

    fn validate(&self, model: &dyn SystemModel) -> Result<()> {
        if !(self.period > 0.0) {
            return Err(Error::InvalidConfig(format!("T must be positive, got {}", self.period)));
        }
        if self.substeps < 2 {
            return Err(Error::InvalidConfig(format!("M must be ≥ 2, got {}", self.substeps)));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::InvalidConfig(format!("α must be ≥ 0, got {}", self.alpha)));
        }
        let n = model.state_dim();
        check_dim("Q rows", n, self.q_weight.nrows())?;
        check_dim("Q columns", n, self.q_weight.ncols())?;
        if let CollectionMode::Restart { lower, upper } = &self.mode {
            check_dim("restart lower bound", 2 * n, lower.len())?;
            check_dim("restart upper bound", 2 * n, upper.len())?;
            if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
                return Err(Error::InvalidConfig("restart box needs lower ≤ upper".into()));
            }
        }
        Ok(())
    }
}

/// `Q_T = [Q 0; 0 0]`
pub fn augmented_weight(q_weight: &DMatrix<f64>) -> DMatrix<f64> {
    let n = q_weight.nrows();
    let mut qt = DMatrix::zeros(2 * n, 2 * n);
    qt.view_mut((0, 0), (n, n)).copy_from(q_weight);
    qt
}

/// Discounted sufficient statistics of one sampling window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowStatistics {
    pub state_start: DVector<f64>,
    pub state_end: DVector<f64>,
    pub rho_start: DVector<f64>,
    pub rho_end: DVector<f64>,
    pub i_q: f64,
    /// `L2 × m`
    pub i_phi_u: DMatrix<f64>,
    /// `L2 × L2`
    pub i_phi_phi: DMatrix<f64>,
    /// `L3 × q`
    pub i_vphi_d: DMatrix<f64>,
    /// `L3 × L3`
    pub i_vphi_vphi: DMatrix<f64>,
}

impl WindowStatistics {
    pub fn is_finite(&self) -> bool {
        [&self.state_start, &self.state_end, &self.rho_start, &self.rho_end]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
            && self.i_q.is_finite()
            && [&self.i_phi_u, &self.i_phi_phi, &self.i_vphi_d, &self.i_vphi_vphi]
                .iter()
                .all(|m| m.iter().all(|x| x.is_finite()))
    }
}

/// The fine-grid record of a window: `M + 1` states and `M` held inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRecord {
    pub t0: f64,
    pub h: f64,
    pub states: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub d: Vec<DVector<f64>>,
}

impl WindowRecord {
    /// Computes the window's statistics with the given quadrature rule.
    pub fn statistics(
        &self,
        basis: &BasisSet,
        q_aug: &DMatrix<f64>,
        rule: &DiscountedRule,
    ) -> Result<WindowStatistics> {
        let steps = self.u.len();
        check_dim("window steps", rule.steps(), steps)?;
        check_dim("window states", steps + 1, self.states.len())?;
        let m = self.u.first().map_or(0, |u| u.len());
        let q = self.d.first().map_or(0, |d| d.len());

        let phi: Vec<DVector<f64>> = self.states.iter().map(|x| basis.actor_u.eval(x)).collect::<Result<_>>()?;
        let vphi: Vec<DVector<f64>> = self.states.iter().map(|x| basis.actor_d.eval(x)).collect::<Result<_>>()?;

        let mut i_q = 0.0;
        let mut i_phi_phi = DMatrix::zeros(basis.actor_u.len(), basis.actor_u.len());
        let mut i_vphi_vphi = DMatrix::zeros(basis.actor_d.len(), basis.actor_d.len());
        for (k, &w) in rule.node_weights().iter().enumerate() {
            let x = &self.states[k];
            i_q += w * (x.transpose() * q_aug * x)[0];
            i_phi_phi.syger(w, &phi[k], &phi[k], 1.0);
            i_vphi_vphi.syger(w, &vphi[k], &vphi[k], 1.0);
        }
        i_phi_phi.fill_upper_triangle_with_lower_triangle();
        i_vphi_vphi.fill_upper_triangle_with_lower_triangle();

        let mut i_phi_u = DMatrix::zeros(basis.actor_u.len(), m);
        let mut i_vphi_d = DMatrix::zeros(basis.actor_d.len(), q);
        for (k, &(a, b)) in rule.step_weights().iter().enumerate() {
            let phi_step = &phi[k] * a + &phi[k + 1] * b;
            let vphi_step = &vphi[k] * a + &vphi[k + 1] * b;
            for j in 0..m {
                i_phi_u.column_mut(j).axpy(self.u[k][j], &phi_step, 1.0);
            }
            for j in 0..q {
                i_vphi_d.column_mut(j).axpy(self.d[k][j], &vphi_step, 1.0);
            }
        }

        let stats = WindowStatistics {
            state_start: self.states[0].clone(),
            state_end: self.states[steps].clone(),
            rho_start: basis.critic.eval(&self.states[0])?,
            rho_end: basis.critic.eval(&self.states[steps])?,
            i_q,
            i_phi_u,
            i_phi_phi,
            i_vphi_d,
            i_vphi_vphi,
        };
        if !stats.is_finite() {
            return Err(Error::NonFinite("window statistics"));
        }
        Ok(stats)
    }
}

/// Identifies the settings a dataset was collected under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub period: f64,
    pub substeps: usize,
    pub alpha: f64,
    /// Row-major `Q`.
    pub q_weight: Vec<f64>,
    pub seed: u64,
    pub basis_hash: String,
    pub state_dim: usize,
    pub control_dim: usize,
    pub disturbance_dim: usize,
    pub mode: CollectionMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowDataset {
    pub windows: Vec<WindowStatistics>,
    pub fingerprint: DatasetFingerprint,
}

impl WindowDataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Number of stacked unknowns implied by the fingerprint and `basis`.
    pub fn check_rank_condition(&self, basis: &BasisSet) -> Result<()> {
        rank_condition(self.len(), basis.unknowns(self.fingerprint.control_dim, self.fingerprint.disturbance_dim))
    }
}

fn rank_condition(windows: usize, unknowns: usize) -> Result<()> {
    if windows > unknowns {
        Ok(())
    } else {
        Err(Error::RankCondition { windows, unknowns })
    }
}

/// A collected dataset plus, on request, its fine-grid records.
#[derive(Debug, Clone)]
pub struct Collection {
    pub dataset: WindowDataset,
    pub records: Option<Vec<WindowRecord>>,
}

/// Simulates the augmented system under behavior signals and compresses
/// each window into [`WindowStatistics`].
pub fn collect_dataset(
    model: &dyn SystemModel,
    basis: &BasisSet,
    u_specs: &[BehaviorSignalSpec],
    d_specs: &[BehaviorSignalSpec],
    x0: &AugmentedState,
    cfg: &CollectionConfig,
    keep_records: bool,
) -> Result<Collection> {
    cfg.validate(model)?;
    let (n, m, q) = (model.state_dim(), model.control_dim(), model.disturbance_dim());
    check_dim("control behavior channels", m, u_specs.len())?;
    check_dim("disturbance behavior channels", q, d_specs.len())?;
    check_dim("initial augmented state", 2 * n, x0.as_vector().len())?;
    check_dim("basis variables", 2 * n, basis.n_vars())?;
    rank_condition(cfg.n_windows, basis.unknowns(m, q))?;

    let h = cfg.fine_step();
    let u_signals: Vec<BehaviorSignal> =
        u_specs.iter().enumerate().map(|(j, s)| BehaviorSignal::new(s, j as u64, h)).collect::<Result<_>>()?;
    let d_signals: Vec<BehaviorSignal> =
        d_specs.iter().enumerate().map(|(k, s)| BehaviorSignal::new(s, (m + k) as u64, h)).collect::<Result<_>>()?;

    let rule = DiscountedRule::new(cfg.alpha, h, cfg.substeps)?;
    let q_aug = augmented_weight(&cfg.q_weight);
    let mut restart_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    restart_rng.set_stream(RESTART_STREAM);

    let mut windows = Vec::with_capacity(cfg.n_windows);
    let mut records = keep_records.then(|| Vec::with_capacity(cfg.n_windows));
    let mut state = x0.as_vector().clone();
    for w in 0..cfg.n_windows {
        if let CollectionMode::Restart { lower, upper } = &cfg.mode {
            state = DVector::from_fn(2 * n, |i, _| {
                if lower[i] == upper[i] {
                    lower[i]
                } else {
                    restart_rng.random_range(lower[i]..upper[i])
                }
            });
        }
        let first_step = (w * cfg.substeps) as u64;
        let mut record = WindowRecord {
            t0: first_step as f64 * h,
            h,
            states: Vec::with_capacity(cfg.substeps + 1),
            u: Vec::with_capacity(cfg.substeps),
            d: Vec::with_capacity(cfg.substeps),
        };
        record.states.push(state.clone());
        for s in 0..cfg.substeps as u64 {
            let step = first_step + s;
            let u = DVector::from_iterator(m, u_signals.iter().map(|sig| sig.at_step(step)));
            let d = DVector::from_iterator(q, d_signals.iter().map(|sig| sig.at_step(step)));
            let t = step as f64 * h;
            state = rk4_step(|_, x| augmented_derivative(model, x, &u, &d), t, &state, h)?;
            record.states.push(state.clone());
            record.u.push(u);
            record.d.push(d);
        }
        windows.push(record.statistics(basis, &q_aug, &rule)?);
        if let Some(records) = records.as_mut() {
            records.push(record);
        }
    }

    Ok(Collection {
        dataset: WindowDataset {
            windows,
            fingerprint: DatasetFingerprint {
                period: cfg.period,
                substeps: cfg.substeps,
                alpha: cfg.alpha,
                q_weight: cfg.q_weight.transpose().iter().copied().collect(),
                seed: cfg.seed,
                basis_hash: basis.ordering_hash(),
                state_dim: n,
                control_dim: m,
                disturbance_dim: q,
                mode: cfg.mode.clone(),
            },
        },
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Benchmark;

    fn spec(amplitude: f64, noise: f64, n: usize, seed: u64) -> BehaviorSignalSpec {
        BehaviorSignalSpec { amplitude, n_sinusoids: n, freq_range: [0.1, 10.0], noise_amplitude: noise, seed }
    }

    fn small_cfg(n_windows: usize) -> CollectionConfig {
        CollectionConfig {
            period: 0.1,
            substeps: 10,
            alpha: 0.1,
            q_weight: DMatrix::identity(2, 2) * 10.0,
            n_windows,
            mode: CollectionMode::SingleTrajectory,
            seed: 7,
        }
    }

    #[test]
    fn silent_signal_is_zero() {
        let sig = BehaviorSignal::new(&spec(0.0, 0.0, 10, 3), 0, 0.01).unwrap();
        assert!((0..500).all(|k| sig.at_step(k) == 0.0));
        assert_eq!(behavior_signal(1.234, &spec(0.0, 0.0, 10, 3), 0.01).unwrap(), 0.0);
    }

    #[test]
    fn signal_is_deterministic() {
        let a = BehaviorSignal::new(&spec(2.0, 0.5, 10, 42), 1, 0.01).unwrap();
        let b = BehaviorSignal::new(&spec(2.0, 0.5, 10, 42), 1, 0.01).unwrap();
        let sa: Vec<f64> = (0..1000).map(|k| a.at_step(k)).collect();
        let sb: Vec<f64> = (0..1000).map(|k| b.at_step(k)).collect();
        assert_eq!(sa, sb);
        let c = BehaviorSignal::new(&spec(2.0, 0.5, 10, 42), 2, 0.01).unwrap();
        assert_ne!(sa[..10], (0..10).map(|k| c.at_step(k)).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn single_sinusoid_is_bounded() {
        let sig = BehaviorSignal::new(&spec(1.0, 0.0, 1, 5), 0, 0.01).unwrap();
        assert!((0..20_000).all(|k| sig.value(k as f64 * 0.0037).abs() <= 1.0));
    }

    #[test]
    fn noise_is_held_over_steps() {
        let sig = BehaviorSignal::new(&spec(0.0, 1.0, 1, 5), 0, 0.01).unwrap();
        assert_eq!(sig.value(0.031), sig.value(0.039));
        assert_eq!(sig.value(0.03), sig.at_step(3));
        let etas: Vec<f64> = (0..1000).map(|k| sig.noise(k)).collect();
        assert!(etas.iter().all(|e| (-1.0..=1.0).contains(e)));
        let mean = etas.iter().sum::<f64>() / etas.len() as f64;
        assert!(mean.abs() < 0.1);
    }

    #[test]
    fn spec_validation() {
        assert!(spec(-1.0, 0.0, 1, 0).validate().is_err());
        let mut s = spec(1.0, 0.0, 1, 0);
        s.freq_range = [2.0, 1.0];
        assert!(s.validate().is_err());
    }

    #[test]
    fn rank_condition_is_enforced() {
        let basis = BasisSet::polynomial(4).unwrap();
        let x0 = AugmentedState::new(DVector::zeros(4)).unwrap();
        let err = collect_dataset(
            &Benchmark,
            &basis,
            &[spec(1.0, 0.0, 3, 0)],
            &[spec(1.0, 0.0, 3, 1)],
            &x0,
            &small_cfg(93),
            false,
        );
        assert!(matches!(err, Err(Error::RankCondition { windows: 93, unknowns: 93 })));
    }

    #[test]
    fn zero_excitation_from_origin_gives_zero_statistics() {
        let basis = BasisSet::polynomial(4).unwrap();
        let x0 = AugmentedState::new(DVector::zeros(4)).unwrap();
        let c = collect_dataset(
            &Benchmark,
            &basis,
            &[BehaviorSignalSpec::silent(0)],
            &[BehaviorSignalSpec::silent(1)],
            &x0,
            &small_cfg(100),
            false,
        )
        .unwrap();
        for w in &c.dataset.windows {
            assert_eq!(w.i_q, 0.0);
            assert!(w.rho_start.iter().chain(w.rho_end.iter()).all(|v| *v == 0.0));
            assert!(w.i_phi_u.iter().chain(w.i_phi_phi.iter()).all(|v| *v == 0.0));
            assert!(w.i_vphi_d.iter().chain(w.i_vphi_vphi.iter()).all(|v| *v == 0.0));
        }
    }

    #[test]
    fn windows_share_boundaries() {
        let basis = BasisSet::polynomial(4).unwrap();
        let x0 = AugmentedState::new(DVector::from_column_slice(&[-1.0, 1.0, 1.0, 0.0])).unwrap();
        let c = collect_dataset(
            &Benchmark,
            &basis,
            &[spec(2.0, 0.5, 10, 0)],
            &[spec(1.0, 0.25, 10, 0)],
            &x0,
            &small_cfg(120),
            false,
        )
        .unwrap();
        for pair in c.dataset.windows.windows(2) {
            assert_eq!(pair[0].rho_end, pair[1].rho_start);
            assert_eq!(pair[0].state_end, pair[1].state_start);
        }
        for w in &c.dataset.windows {
            assert_eq!(w.i_phi_phi, w.i_phi_phi.transpose());
        }
    }

    #[test]
    fn restart_mode_draws_within_box() {
        let basis = BasisSet::polynomial(4).unwrap();
        let x0 = AugmentedState::new(DVector::zeros(4)).unwrap();
        let mut cfg = small_cfg(100);
        cfg.mode = CollectionMode::Restart { lower: vec![-1.0, -1.0, 0.5, 0.0], upper: vec![1.0, 1.0, 0.5, 0.0] };
        let c = collect_dataset(&Benchmark, &basis, &[spec(1.0, 0.1, 4, 0)], &[spec(1.0, 0.1, 4, 0)], &x0, &cfg, false)
            .unwrap();
        for w in &c.dataset.windows {
            assert!(w.state_start[0].abs() <= 1.0 && w.state_start[1].abs() <= 1.0);
            assert_eq!(w.state_start[2], 0.5);
            assert_eq!(w.state_start[3], 0.0);
        }
    }
}
