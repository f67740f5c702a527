//! CSV traces and the JSON weights report.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use hinf_dpi::basis::{BasisSet, MonomialTable};
use hinf_dpi::collection::WindowRecord;
use hinf_dpi::evaluation::{attenuation_ratio, EvaluationReport};
use hinf_dpi::learner::{IterationTrace, RankPolicy, TrainConfig, TrainOutcome, WeightSet};
use hinf_dpi::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::Method;
use crate::error::{CliError, Result};

pub const DATASET: &str = "dataset.bin";
pub const COLLECTION_TRACE: &str = "collection_trace.csv";
pub const TRAINING_TRACE: &str = "training_trace.csv";
pub const WEIGHT_HISTORY: &str = "weight_history.csv";
pub const WEIGHTS: &str = "weights.json";
pub const EVALUATION_TRACE: &str = "evaluation_trace.csv";
pub const ATTENUATION: &str = "attenuation.csv";

/// Shortest round-trip decimal, switching to exponent form for very small
/// or very large magnitudes.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn channel_names(prefix: &str, count: usize) -> Vec<String> {
    if count == 1 {
        vec![prefix.to_string()]
    } else {
        (1..=count).map(|i| format!("{prefix}{i}")).collect()
    }
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// `t, X1..X{2n}, u, d` on the fine grid; inputs are the values held from
/// each node to the next.
pub fn write_collection_trace(path: &Path, records: &[WindowRecord]) -> Result<()> {
    let Some(first) = records.first() else {
        return Ok(());
    };
    let dim = first.states[0].len();
    let m = first.u.first().map_or(0, |u| u.len());
    let q = first.d.first().map_or(0, |d| d.len());
    let mut w = writer(path)?;
    let mut header: Vec<String> = vec!["t".into()];
    header.extend((1..=dim).map(|i| format!("X{i}")));
    header.extend(channel_names("u", m));
    header.extend(channel_names("d", q));
    w.write_record(&header)?;
    for (i, rec) in records.iter().enumerate() {
        let steps = rec.u.len();
        let last_node = if i + 1 == records.len() { steps } else { steps - 1 };
        for k in 0..=last_node {
            let held = k.min(steps - 1);
            let mut row = vec![fmt_f64(rec.t0 + k as f64 * rec.h)];
            row.extend(rec.states[k].iter().map(|v| fmt_f64(*v)));
            row.extend(rec.u[held].iter().map(|v| fmt_f64(*v)));
            row.extend(rec.d[held].iter().map(|v| fmt_f64(*v)));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_training_trace(path: &Path, trace: &IterationTrace) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["iter", "delta_w_norm", "ls_residual", "cond_estimate"])?;
    for r in &trace.records {
        w.write_record([
            r.iter.to_string(),
            fmt_f64(r.delta_w_norm),
            fmt_f64(r.ls_residual),
            fmt_f64(r.cond_estimate),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// `iter, w1..wP`: stacked weights after every iteration.
pub fn write_weight_history(path: &Path, trace: &IterationTrace) -> Result<()> {
    let mut w = writer(path)?;
    let p = trace.history.first().map_or(0, |h| h.len());
    let mut header = vec!["iter".to_string()];
    header.extend((1..=p).map(|i| format!("w{i}")));
    w.write_record(&header)?;
    for (r, h) in trace.records.iter().zip(&trace.history) {
        let mut row = vec![r.iter.to_string()];
        row.extend(h.iter().map(|v| fmt_f64(*v)));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// `t, x.., r.., ed.., u, d`.
pub fn write_evaluation_trace(path: &Path, rep: &EvaluationReport) -> Result<()> {
    let n = rep.x.first().map_or(0, |x| x.len());
    let m = rep.u.first().map_or(0, |u| u.len());
    let q = rep.d.first().map_or(0, |d| d.len());
    let mut w = writer(path)?;
    let mut header = vec!["t".to_string()];
    for prefix in ["x", "r", "ed"] {
        header.extend((1..=n).map(|i| format!("{prefix}{i}")));
    }
    header.extend(channel_names("u", m));
    header.extend(channel_names("d", q));
    w.write_record(&header)?;
    for k in 0..rep.len() {
        let mut row = vec![fmt_f64(rep.t[k])];
        for v in [&rep.x[k], &rep.r[k], &rep.e_d[k], &rep.u[k], &rep.d[k]] {
            row.extend(v.iter().map(|x| fmt_f64(*x)));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// `t, ratio, gamma_sq`; the ratio field is empty where it is undefined.
pub fn write_attenuation(path: &Path, rep: &EvaluationReport) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["t", "ratio", "gamma_sq"])?;
    let g2 = fmt_f64(rep.weights.gamma * rep.weights.gamma);
    for (t, ratio) in rep.t.iter().zip(attenuation_ratio(rep)) {
        w.write_record([fmt_f64(*t), ratio.map(fmt_f64).unwrap_or_default(), g2.clone()])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableReport {
    pub labels: Vec<String>,
    pub exponents: Vec<Vec<u32>>,
}

impl TableReport {
    fn of(table: &MonomialTable) -> Self {
        Self { labels: table.labels(), exponents: table.exponents().to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisReport {
    pub n_vars: usize,
    pub critic: TableReport,
    pub actor_u: TableReport,
    pub actor_d: TableReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainEcho {
    pub method: Method,
    pub delta: f64,
    pub gamma: f64,
    pub alpha: f64,
    /// Row-major `Q`.
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub stop_tol: f64,
    pub max_iters: usize,
    pub ridge: f64,
    pub rcond: f64,
    pub rank_policy: RankPolicy,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsReport {
    pub basis_hash: String,
    pub basis: BasisReport,
    pub critic: Vec<f64>,
    /// One entry per control channel.
    pub actor_u: Vec<Vec<f64>>,
    /// One entry per disturbance channel.
    pub actor_d: Vec<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub final_delta_w_norm: f64,
    pub config: TrainEcho,
}

fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

impl WeightsReport {
    pub fn new(basis: &BasisSet, outcome: &TrainOutcome, cfg: &TrainConfig, method: Method, seed: u64) -> Self {
        let w = &outcome.weights;
        Self {
            basis_hash: basis.ordering_hash(),
            basis: BasisReport {
                n_vars: basis.n_vars(),
                critic: TableReport::of(&basis.critic),
                actor_u: TableReport::of(&basis.actor_u),
                actor_d: TableReport::of(&basis.actor_d),
            },
            critic: w.critic.iter().copied().collect(),
            actor_u: columns(&w.actor_u),
            actor_d: columns(&w.actor_d),
            converged: outcome.converged,
            iterations: outcome.iterations(),
            final_delta_w_norm: outcome.trace.records.last().map_or(f64::NAN, |r| r.delta_w_norm),
            config: TrainEcho {
                method,
                delta: cfg.delta,
                gamma: cfg.gamma,
                alpha: cfg.alpha,
                q: cfg.q_weight.transpose().iter().copied().collect(),
                r: cfg.r_diag.clone(),
                stop_tol: cfg.stop_tol,
                max_iters: cfg.max_iters,
                ridge: cfg.ridge,
                rcond: cfg.rcond,
                rank_policy: cfg.rank_policy,
                seed,
            },
        }
    }

    /// Weights, after checking that the report was trained on `basis`.
    pub fn weights(&self, basis: &BasisSet) -> Result<WeightSet> {
        if self.basis_hash != basis.ordering_hash() {
            return Err(hinf_dpi::Error::Fingerprint(format!(
                "weights were trained on basis {} but the config gives {}",
                self.basis_hash,
                basis.ordering_hash()
            ))
            .into());
        }
        let matrix = |cols: &[Vec<f64>], rows: usize| -> Result<DMatrix<f64>> {
            if cols.iter().any(|c| c.len() != rows) {
                return Err(CliError::Config("actor weight column has the wrong length".into()));
            }
            Ok(DMatrix::from_fn(rows, cols.len(), |i, j| cols[j][i]))
        };
        let w = WeightSet {
            critic: hinf_dpi::DVector::from_vec(self.critic.clone()),
            actor_u: matrix(&self.actor_u, basis.actor_u.len())?,
            actor_d: matrix(&self.actor_d, basis.actor_d.len())?,
        };
        w.check_against(basis)?;
        Ok(w)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))?;
        text.push('\n');
        File::create(path).and_then(|mut f| f.write_all(text.as_bytes())).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Parse { path: path.to_owned(), message: e.to_string() })
    }
}
