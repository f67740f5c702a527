//! Subcommand implementations. Each writes its artifacts into `out_dir` and
//! returns a summary that the binary prints as one JSON line.

use std::path::{Path, PathBuf};

use hinf_dpi::archive;
use hinf_dpi::collection::{collect_dataset, WindowDataset};
use hinf_dpi::evaluation::{closed_loop_run, decaying_cosine, performance_index, CostWeights};
use hinf_dpi::learner::{extract_policies, offpolicy_train, onpolicy_train, rms_hji_residual};
use hinf_dpi::DVector;
use serde::Serialize;

use crate::artifacts::{self, WeightsReport};
use crate::config::{Config, DisturbancePreset, Method};
use crate::error::{CliError, Result};

/// Number of dataset states used for the HJI residual diagnostic.
pub const HJI_POINTS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollectSummary {
    pub command: &'static str,
    pub windows: usize,
    pub unknowns: usize,
    pub dataset: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub command: &'static str,
    pub method: Method,
    pub converged: bool,
    pub iterations: usize,
    pub final_delta_w_norm: f64,
    /// RMS HJI residual of the trained critic over dataset states, relative
    /// to the zero critic. Absent for on-policy training.
    pub hji_residual_ratio: Option<f64>,
    pub weights: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluateSummary {
    pub command: &'static str,
    pub final_attenuation_ratio: Option<f64>,
    pub gamma_sq: f64,
    pub tail_max_tracking_error: Option<f64>,
    pub performance_index: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineSummary {
    pub command: &'static str,
    pub collect: Option<CollectSummary>,
    pub train: TrainSummary,
    pub evaluate: EvaluateSummary,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn collect(cfg: &Config, out_dir: &Path) -> Result<CollectSummary> {
    ensure_dir(out_dir)?;
    let model = cfg.model()?;
    let basis = cfg.basis()?;
    let (u_specs, d_specs) = cfg.signal_specs();
    let collection = collect_dataset(
        model.as_ref(),
        &basis,
        &u_specs,
        &d_specs,
        &cfg.initial_state()?,
        &cfg.collection_config()?,
        true,
    )?;
    let dataset_path = out_dir.join(artifacts::DATASET);
    archive::write_dataset(&dataset_path, &collection.dataset)?;
    artifacts::write_collection_trace(
        &out_dir.join(artifacts::COLLECTION_TRACE),
        collection.records.as_deref().unwrap_or_default(),
    )?;
    Ok(CollectSummary {
        command: "collect",
        windows: collection.dataset.len(),
        unknowns: basis.unknowns(model.control_dim(), model.disturbance_dim()),
        dataset: dataset_path,
    })
}

/// Evenly spaced window start states.
fn diagnostic_states(dataset: &WindowDataset) -> Vec<DVector<f64>> {
    let stride = (dataset.len() / HJI_POINTS).max(1);
    dataset.windows.iter().step_by(stride).take(HJI_POINTS).map(|w| w.state_start.clone()).collect()
}

pub fn train(cfg: &Config, dataset: Option<&Path>, out_dir: &Path) -> Result<TrainSummary> {
    ensure_dir(out_dir)?;
    let model = cfg.model()?;
    let basis = cfg.basis()?;
    let train_cfg = cfg.train_config()?;
    let method = cfg.training.method;
    let (outcome, hji_residual_ratio) = match method {
        Method::OffPolicy => {
            let path = dataset.ok_or_else(|| CliError::Config("off-policy training needs --dataset".into()))?;
            let data = archive::read_dataset(path)?;
            archive::check_fingerprint(&data, &basis, &cfg.expected_fingerprint()?)?;
            let outcome = offpolicy_train(&data, &basis, &train_cfg)?;
            let points = diagnostic_states(&data);
            let zero = DVector::zeros(basis.critic.len());
            let before = rms_hji_residual(model.as_ref(), &zero, &basis, &train_cfg, &points)?;
            let after = rms_hji_residual(model.as_ref(), &outcome.weights.critic, &basis, &train_cfg, &points)?;
            let ratio = (before > 0.0).then(|| after / before);
            (outcome, ratio)
        }
        Method::OnPolicy => (onpolicy_train(model.as_ref(), &basis, &train_cfg, &cfg.episode()?)?, None),
    };
    artifacts::write_training_trace(&out_dir.join(artifacts::TRAINING_TRACE), &outcome.trace)?;
    artifacts::write_weight_history(&out_dir.join(artifacts::WEIGHT_HISTORY), &outcome.trace)?;
    let report = WeightsReport::new(&basis, &outcome, &train_cfg, method, cfg.collection.seed);
    let weights_path = out_dir.join(artifacts::WEIGHTS);
    report.write(&weights_path)?;
    Ok(TrainSummary {
        command: "train",
        method,
        converged: outcome.converged,
        iterations: outcome.iterations(),
        final_delta_w_norm: report.final_delta_w_norm,
        hji_residual_ratio,
        weights: weights_path,
    })
}

pub fn evaluate(cfg: &Config, weights: &Path, out_dir: &Path) -> Result<EvaluateSummary> {
    ensure_dir(out_dir)?;
    let model = cfg.model()?;
    let basis = cfg.basis()?;
    let report = WeightsReport::read(weights)?;
    let w = report.weights(&basis)?;
    let (u_policy, _) = extract_policies(&w, &basis)?;
    let q = model.disturbance_dim();
    let preset = cfg.evaluation.disturbance;
    let d_signal = move |t: f64| match preset {
        DisturbancePreset::DecayingCosine => DVector::from_element(q, decaying_cosine(t)),
        DisturbancePreset::None => DVector::zeros(q),
    };
    let train_cfg = cfg.train_config()?;
    let weights = CostWeights::from(&train_cfg);
    let rep = closed_loop_run(
        model.as_ref(),
        |x| u_policy.eval(x),
        d_signal,
        &DVector::from_vec(cfg.evaluation.x0.clone()),
        &DVector::from_vec(cfg.evaluation.r0.clone()),
        &cfg.evaluation_grid()?,
        &weights,
    )?;
    artifacts::write_evaluation_trace(&out_dir.join(artifacts::EVALUATION_TRACE), &rep)?;
    artifacts::write_attenuation(&out_dir.join(artifacts::ATTENUATION), &rep)?;
    Ok(EvaluateSummary {
        command: "evaluate",
        final_attenuation_ratio: rep.final_ratio(),
        gamma_sq: train_cfg.gamma * train_cfg.gamma,
        tail_max_tracking_error: rep.tail_max_error,
        performance_index: performance_index(&rep)?,
    })
}

/// collect → train → evaluate. Collection is skipped for on-policy
/// training. Stops with [`CliError::NotConverged`] after writing the
/// training artifacts if training does not converge.
pub fn pipeline(cfg: &Config, out_dir: &Path) -> Result<PipelineSummary> {
    let collect_summary = match cfg.training.method {
        Method::OffPolicy => Some(collect(cfg, out_dir)?),
        Method::OnPolicy => None,
    };
    let dataset = collect_summary.as_ref().map(|c| c.dataset.clone());
    let train_summary = train(cfg, dataset.as_deref(), out_dir)?;
    if !train_summary.converged {
        return Err(CliError::NotConverged {
            iterations: train_summary.iterations,
            last: train_summary.final_delta_w_norm,
        });
    }
    let evaluate_summary = evaluate(cfg, &train_summary.weights, out_dir)?;
    Ok(PipelineSummary {
        command: "pipeline",
        collect: collect_summary,
        train: train_summary,
        evaluate: evaluate_summary,
    })
}

/// Maps a non-converged training summary to its error.
pub fn require_converged(summary: &TrainSummary) -> Result<()> {
    if summary.converged {
        Ok(())
    } else {
        Err(CliError::NotConverged { iterations: summary.iterations, last: summary.final_delta_w_norm })
    }
}
