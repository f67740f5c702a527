//! WebAssembly bindings for the demo page in `www/`.
//!
//! Every operation is a plain Rust function returning a serializable
//! result, wrapped by a `#[wasm_bindgen]` export that hands it to the page
//! as a JSON string.

use hinf_dpi::basis::BasisSet;
use hinf_dpi::collection::{collect_dataset, BehaviorSignalSpec, CollectionConfig, CollectionMode};
use hinf_dpi::dynamics::{AugmentedState, Benchmark, ScalarLinear, SimulationGrid};
use hinf_dpi::evaluation::{attenuation_ratio, closed_loop_run, decaying_cosine, CostWeights};
use hinf_dpi::learner::{offpolicy_train, onpolicy_train, EpisodeSpec, LinearPolicy, TrainConfig};
use hinf_dpi::{DMatrix, DVector, Error, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const PERIOD: f64 = 0.1;
const SUBSTEPS: usize = 10;
const ALPHA: f64 = 0.1;
const BENCHMARK_WINDOWS: usize = 1000;

fn benchmark_q() -> DMatrix<f64> {
    DMatrix::identity(2, 2) * 10.0
}

fn signal(amplitude: f64, seed: u64) -> BehaviorSignalSpec {
    BehaviorSignalSpec { amplitude, n_sinusoids: 10, freq_range: [0.1, 10.0], noise_amplitude: amplitude / 4.0, seed }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainResult {
    pub converged: bool,
    pub iterations: usize,
    /// `‖ΔW‖` per iteration.
    pub delta_w_norm: Vec<f64>,
    pub critic_labels: Vec<String>,
    pub critic: Vec<f64>,
    /// Control actor weights, fed back into [`simulate_tracking`].
    pub actor_u: Vec<f64>,
}

/// Collects the benchmark dataset with `seed` and runs off-policy training.
pub fn train_benchmark(delta: f64, gamma: f64, seed: u64) -> Result<TrainResult> {
    let basis = BasisSet::polynomial(4)?;
    let collection = CollectionConfig {
        period: PERIOD,
        substeps: SUBSTEPS,
        alpha: ALPHA,
        q_weight: benchmark_q(),
        n_windows: BENCHMARK_WINDOWS,
        mode: CollectionMode::SingleTrajectory,
        seed,
    };
    let x0 = AugmentedState::new(DVector::from_column_slice(&[-1.0, 1.0, 1.0, 0.0]))?;
    let data =
        collect_dataset(&Benchmark, &basis, &[signal(10.0, seed)], &[signal(5.0, seed)], &x0, &collection, false)?;
    let cfg = TrainConfig::new(delta, gamma, ALPHA, benchmark_q(), vec![1.0]);
    let out = offpolicy_train(&data.dataset, &basis, &cfg)?;
    Ok(TrainResult {
        converged: out.converged,
        iterations: out.iterations(),
        delta_w_norm: out.trace.records.iter().map(|r| r.delta_w_norm).collect(),
        critic_labels: basis.critic.labels(),
        critic: out.weights.critic.iter().copied().collect(),
        actor_u: out.weights.actor_u.iter().copied().collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TrackingResult {
    pub t: Vec<f64>,
    pub x1: Vec<f64>,
    pub r1: Vec<f64>,
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
    pub u: Vec<f64>,
    pub d: Vec<f64>,
    /// Discounted attenuation ratio; `null` where undefined.
    pub ratio: Vec<Option<f64>>,
    pub gamma_sq: f64,
    pub tail_max_error: Option<f64>,
}

/// Closed-loop benchmark run under the decaying-cosine disturbance, keeping
/// every `stride`-th sample.
pub fn simulate_tracking(actor_u: &[f64], gamma: f64, t_end: f64, stride: usize) -> Result<TrackingResult> {
    let basis = BasisSet::polynomial(4)?;
    if actor_u.len() != basis.actor_u.len() {
        return Err(Error::DimensionMismatch {
            context: "actor_u weights",
            expected: basis.actor_u.len(),
            actual: actor_u.len(),
        });
    }
    let policy = LinearPolicy::new(basis.actor_u.clone(), DMatrix::from_column_slice(actor_u.len(), 1, actor_u))?;
    let weights = CostWeights { alpha: ALPHA, gamma, q_weight: benchmark_q(), r_diag: vec![1.0] };
    let start = DVector::from_column_slice(&[0.0, 1.5]);
    let rep = closed_loop_run(
        &Benchmark,
        |x| policy.eval(x),
        |t| DVector::from_element(1, decaying_cosine(t)),
        &start,
        &start,
        &SimulationGrid::new(0.0, t_end, 0.001)?,
        &weights,
    )?;
    let ratio = attenuation_ratio(&rep);
    let stride = stride.max(1);
    let keep: Vec<usize> = (0..rep.len()).step_by(stride).collect();
    let pick = |f: &dyn Fn(usize) -> f64| keep.iter().map(|&k| f(k)).collect::<Vec<f64>>();
    Ok(TrackingResult {
        t: pick(&|k| rep.t[k]),
        x1: pick(&|k| rep.x[k][0]),
        r1: pick(&|k| rep.r[k][0]),
        e1: pick(&|k| rep.e_d[k][0]),
        e2: pick(&|k| rep.e_d[k][1]),
        u: pick(&|k| rep.u[k][0]),
        d: pick(&|k| rep.d[k][0]),
        ratio: keep.iter().map(|&k| ratio[k]).collect(),
        gamma_sq: gamma * gamma,
        tail_max_error: rep.tail_max_error,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalarSweep {
    /// Positive root of the scalar game Riccati equation.
    pub riccati_root: f64,
    pub runs: Vec<ScalarRun>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalarRun {
    pub delta: f64,
    pub converged: bool,
    /// Critic weight `p_i`, starting from the zero initial critic.
    pub p: Vec<f64>,
}

/// Positive root of `(1/γ² − 1/r)p² − (α + 2)p + q = 0` for `ẋ = −x + u + d`.
pub fn scalar_riccati_root(q: f64, r: f64, gamma: f64, alpha: f64) -> f64 {
    let a = 1.0 / (gamma * gamma) - 1.0 / r;
    let b = -(alpha + 2.0);
    let disc = (b * b - 4.0 * a * q).sqrt();
    [(-b + disc) / (2.0 * a), (-b - disc) / (2.0 * a)].into_iter().filter(|p| *p > 0.0).fold(f64::NAN, f64::min)
}

/// On-policy learning on the scalar game for each damping factor.
pub fn scalar_sweep(deltas: &[f64], gamma: f64, seed: u64) -> Result<ScalarSweep> {
    let model = ScalarLinear::default();
    let basis = BasisSet::new(
        hinf_dpi::basis::MonomialTable::from_exponents(2, vec![vec![2, 0]])?,
        hinf_dpi::basis::MonomialTable::from_exponents(2, vec![vec![1, 0]])?,
        hinf_dpi::basis::MonomialTable::from_exponents(2, vec![vec![1, 0]])?,
    )?;
    let episode = EpisodeSpec {
        lower: vec![-1.0, 0.0],
        upper: vec![1.0, 0.0],
        ..EpisodeSpec::standard(1, PERIOD, SUBSTEPS, seed)
    };
    let runs = deltas
        .iter()
        .map(|&delta| {
            let cfg = TrainConfig::new(delta, gamma, ALPHA, DMatrix::identity(1, 1), vec![1.0]);
            let out = onpolicy_train(&model, &basis, &cfg, &episode)?;
            let mut p = vec![0.0];
            p.extend(out.trace.history.iter().map(|w| w[0]));
            Ok(ScalarRun { delta, converged: out.converged, p })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScalarSweep { riccati_root: scalar_riccati_root(1.0, 1.0, gamma, ALPHA), runs })
}

fn to_js<T: Serialize>(result: Result<T>) -> Result<String, JsError> {
    let value = result.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = trainBenchmark)]
pub fn train_benchmark_js(delta: f64, gamma: f64, seed: u32) -> Result<String, JsError> {
    to_js(train_benchmark(delta, gamma, seed.into()))
}

#[wasm_bindgen(js_name = simulateTracking)]
pub fn simulate_tracking_js(actor_u: Vec<f64>, gamma: f64, t_end: f64, stride: u32) -> Result<String, JsError> {
    to_js(simulate_tracking(&actor_u, gamma, t_end, stride as usize))
}

#[wasm_bindgen(js_name = scalarSweep)]
pub fn scalar_sweep_js(deltas: Vec<f64>, gamma: f64, seed: u32) -> Result<String, JsError> {
    to_js(scalar_sweep(&deltas, gamma, seed.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_sweep_reaches_root() {
        let sweep = scalar_sweep(&[0.3, 1.0], 5.0, 7).unwrap();
        assert_eq!(sweep.runs.len(), 2);
        for run in &sweep.runs {
            assert!(run.converged);
            assert_eq!(run.p[0], 0.0);
            assert!((run.p.last().unwrap() - sweep.riccati_root).abs() < 1e-3, "{run:?}");
        }
        assert!(sweep.runs[0].p.len() > sweep.runs[1].p.len());
    }

    #[test]
    fn trained_weights_drive_tracking() {
        let trained = train_benchmark(1.0, 5.0, 1).unwrap();
        assert!(trained.converged);
        assert_eq!(trained.delta_w_norm.len(), trained.iterations);
        let run = simulate_tracking(&trained.actor_u, 5.0, 5.0, 100).unwrap();
        assert_eq!(run.t.len(), 51);
        assert_eq!(run.ratio[0], None);
        assert!(run.e1.iter().all(|e| e.is_finite()));
        assert!(run.tail_max_error.is_none());
    }

    #[test]
    fn tracking_rejects_wrong_weight_count() {
        assert!(simulate_tracking(&[1.0, 2.0], 5.0, 1.0, 10).is_err());
    }

    #[test]
    fn json_shape() {
        let json = to_js(scalar_sweep(&[0.5], 5.0, 1)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!(v["riccati_root"].as_f64().unwrap() > 0.0);
        assert_eq!(v["runs"][0]["delta"], 0.5);
    }
}
