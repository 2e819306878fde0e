//! Fit a per-item exposure model on simulated clicks and print the
//! held-out metrics.
//!
//!     cargo run --release --example quickstart

use expomf::data::{init_model, Hyperparameters, PriorInit};
use expomf::em::{train, TrainConfig};
use expomf::eval::{evaluate, rank_items, EvalConfig, PredictionRule};
use expomf::ingest::{split, SplitProportions};
use expomf::synthetic::{sample_dataset, ExposureProcess, ObservationMode, SyntheticSpec};

fn main() -> expomf::error::Result<()> {
    let spec = SyntheticSpec {
        n_users: 400,
        n_items: 300,
        k: 5,
        lambda_theta: 1.0,
        lambda_beta: 1.0,
        lambda_y: 1.0,
        exposure: ExposureProcess::Popularity { alpha1: 1.0, alpha2: 5.0 },
        observation: ObservationMode::Binarized { density: 0.04 },
        seed: 1,
    };
    let clicks = sample_dataset(&spec)?.y;
    let data = split(&clicks, SplitProportions::default(), 1)?;
    println!(
        "{} users x {} items, {} training clicks",
        data.n_users(),
        data.n_items(),
        data.train.nnz()
    );

    let hyper = Hyperparameters { k: 10, lambda_theta: 1.0, lambda_beta: 1.0, ..Default::default() };
    let model = init_model(data.n_users(), data.n_items(), &hyper, PriorInit::per_item())?;
    let outcome = train(model, &data, &TrainConfig { max_iters: 20, ..Default::default() })?;
    for rec in &outcome.log {
        println!("iter {:>2}  validation NDCG@100 {:.4}", rec.iteration, rec.validation_ndcg.unwrap_or(f64::NAN));
    }
    println!("kept iteration {}", outcome.best_iteration);

    let report = evaluate(&outcome.state, &data, &EvalConfig::default())?;
    print!("{}", report.grid());

    // top five unseen items for user 0
    let seen = data.train.user_items(0);
    let top = rank_items(&outcome.state, 0, seen, PredictionRule::Dot)?;
    println!("user 0 -> {:?}", &top.items[..5]);
    Ok(())
}
