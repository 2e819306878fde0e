//! Weighted MF next to exposure MF on the same split.
//!
//! WMF is the same coordinate ascent with the exposure posterior replaced
//! by fixed confidences, so both go through `em::train`.

use expomf::data::{init_model, Hyperparameters, PriorInit};
use expomf::em::{train, TrainConfig};
use expomf::eval::{evaluate, EvalConfig};
use expomf::ingest::{split, SplitProportions};
use expomf::synthetic::{sample_dataset, ExposureProcess, ObservationMode, SyntheticSpec};
use expomf::wmf::{wmf_fit, WmfConfig};

fn main() -> expomf::error::Result<()> {
    let spec = SyntheticSpec {
        n_users: 500,
        n_items: 400,
        k: 5,
        lambda_theta: 1.0,
        lambda_beta: 1.0,
        lambda_y: 1.0,
        exposure: ExposureProcess::Popularity { alpha1: 0.5, alpha2: 4.0 },
        observation: ObservationMode::Binarized { density: 0.03 },
        seed: 7,
    };
    let data = split(&sample_dataset(&spec)?.y, SplitProportions::default(), 7)?;
    let tc = TrainConfig { max_iters: 20, ..Default::default() };
    let eval = EvalConfig::default();

    let wmf = WmfConfig { k: 10, lambda_theta: 1.0, lambda_beta: 1.0, c0: 0.01, c1: 1.0, ..Default::default() };
    let wmf_model = wmf_fit(&data, &wmf, &tc)?.state;

    let hyper = Hyperparameters { k: 10, lambda_theta: 1.0, lambda_beta: 1.0, ..Default::default() };
    let expo = train(init_model(500, 400, &hyper, PriorInit::per_item())?, &data, &tc)?.state;

    for (name, model) in [("wmf", &wmf_model), ("expomf", &expo)] {
        let r = evaluate(model, &data, &eval)?;
        println!(
            "{name:<8} recall@20 {:.4}  recall@50 {:.4}  ndcg@100 {:.4}  map@100 {:.4}",
            r.recall[0], r.recall[1], r.ndcg, r.map_standard
        );
    }
    Ok(())
}
