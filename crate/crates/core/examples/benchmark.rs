//! Collects, trains and evaluates on the built-in benchmark.
//!
//! `cargo run --release -p hinf-dpi --example benchmark [seed] [delta]`

use std::time::Instant;

use hinf_dpi::basis::BasisSet;
use hinf_dpi::collection::{collect_dataset, BehaviorSignalSpec, CollectionConfig, CollectionMode};
use hinf_dpi::dynamics::{AugmentedState, Benchmark, SimulationGrid};
use hinf_dpi::evaluation::{closed_loop_run, decaying_cosine, CostWeights};
use hinf_dpi::learner::{extract_policies, offpolicy_train, TrainConfig};
use hinf_dpi::{DMatrix, DVector};

fn main() -> hinf_dpi::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed"));
    let delta: f64 = args.next().map_or(0.3, |s| s.parse().expect("delta"));

    let basis = BasisSet::polynomial(4)?;
    let q = DMatrix::identity(2, 2) * 10.0;
    let spec = |amplitude: f64, seed| BehaviorSignalSpec {
        amplitude,
        n_sinusoids: 10,
        freq_range: [0.1, 10.0],
        noise_amplitude: amplitude / 4.0,
        seed,
    };
    let cfg = CollectionConfig {
        period: 0.1,
        substeps: 10,
        alpha: 0.1,
        q_weight: q.clone(),
        n_windows: 1000,
        mode: CollectionMode::SingleTrajectory,
        seed,
    };
    let x0 = AugmentedState::new(DVector::from_column_slice(&[-1.0, 1.0, 1.0, 0.0]))?;
    let start = Instant::now();
    let data = collect_dataset(&Benchmark, &basis, &[spec(10.0, seed)], &[spec(5.0, seed + 1)], &x0, &cfg, false)?;
    println!("collected {} windows in {:.2?}", data.dataset.len(), start.elapsed());

    let train = TrainConfig::new(delta, 5.0, 0.1, q, vec![1.0]);
    let start = Instant::now();
    let out = offpolicy_train(&data.dataset, &basis, &train)?;
    let last = out.trace.records.last().expect("one iteration");
    println!(
        "converged={} after {} iterations in {:.2?} (rank {}, cond {:.3e})",
        out.converged,
        out.iterations(),
        start.elapsed(),
        last.rank,
        last.cond_estimate
    );

    let (u, _) = extract_policies(&out.weights, &basis)?;
    let grid = SimulationGrid::new(0.0, 50.0, 0.001)?;
    let x0 = DVector::from_column_slice(&[0.0, 1.5]);
    let rep = closed_loop_run(
        &Benchmark,
        |x| u.eval(x),
        |t| DVector::from_element(1, decaying_cosine(t)),
        &x0,
        &x0,
        &grid,
        &CostWeights::from(&train),
    )?;
    println!(
        "final attenuation ratio {:.4}, tail max |e_d| {:.4}",
        rep.final_ratio().unwrap_or(f64::NAN),
        rep.tail_max_error.unwrap_or(f64::NAN)
    );
    Ok(())
}
