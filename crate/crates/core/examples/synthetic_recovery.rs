//! Sample from the generative model, fit, and score how well the fitted
//! exposure matches the truth.

use expomf::data::{init_model, Hyperparameters, PriorInit};
use expomf::em::{train, TrainConfig};
use expomf::ingest::{split, SplitProportions};
use expomf::synthetic::{recovery_report, sample_dataset, ExposureProcess, ObservationMode, SyntheticSpec};

fn main() -> expomf::error::Result<()> {
    let spec = SyntheticSpec {
        n_users: 300,
        n_items: 200,
        k: 4,
        lambda_theta: 1.0,
        lambda_beta: 1.0,
        lambda_y: 1.0,
        exposure: ExposureProcess::Popularity { alpha1: 1.0, alpha2: 4.0 },
        observation: ObservationMode::Binarized { density: 0.05 },
        seed: 3,
    };
    let sample = sample_dataset(&spec)?;
    let data = split(&sample.y, SplitProportions::default(), 3)?;
    println!("{} truly exposed pairs, {} clicks", sample.truth.exposed.len(), sample.y.nnz());

    let hyper = Hyperparameters { k: 4, lambda_theta: 1.0, lambda_beta: 1.0, ..Default::default() };
    let fitted = train(init_model(300, 200, &hyper, PriorInit::per_item())?, &data, &TrainConfig { max_iters: 15, ..Default::default() })?.state;

    println!("fitted model: {}", recovery_report(&fitted, &sample.truth, &data)?.to_json());
    let oracle = sample.truth.oracle_state();
    println!("true params:  {}", recovery_report(&oracle, &sample.truth, &data)?.to_json());
    Ok(())
}
