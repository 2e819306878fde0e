//! Exposure driven by item topics.
//!
//! Items carry a 10-dimensional topic mix and each user reads mostly one
//! topic. The covariate prior learns a per-user topic preference for
//! exposure; the per-item prior can only learn popularity.

use expomf::data::{init_model, seeded_rng, Hyperparameters, PriorInit};
use expomf::em::{train, TrainConfig};
use expomf::eval::{evaluate, EvalConfig};
use expomf::exposure::{CovariateSettings, ExposurePrior};
use expomf::ingest::{split, SplitProportions};
use expomf::synthetic::{sample_dataset, ExposureProcess, ObservationMode, SyntheticSpec};

fn main() -> expomf::error::Result<()> {
    let mut rng = seeded_rng(11);
    let exposure = ExposureProcess::separated_regions(500, 400, 10, 0.6, 0.02, &mut rng)?;
    let spec = SyntheticSpec {
        n_users: 500,
        n_items: 400,
        k: 5,
        lambda_theta: 1.0,
        lambda_beta: 1.0,
        lambda_y: 1.0,
        exposure,
        observation: ObservationMode::Binarized { density: 0.03 },
        seed: 11,
    };
    let sample = sample_dataset(&spec)?;
    let topics = sample.truth.covariates().expect("covariate process");
    let data = split(&sample.y, SplitProportions::default(), 11)?;

    let hyper = Hyperparameters { k: 5, lambda_theta: 1.0, lambda_beta: 1.0, ..Default::default() };
    let tc = TrainConfig { max_iters: 20, ..Default::default() };
    let covariate = PriorInit::Covariate {
        covariates: topics,
        settings: CovariateSettings::default(),
        initial_mu: 0.01,
    };
    let with_topics = train(init_model(500, 400, &hyper, covariate)?, &data, &tc)?.state;
    let per_item = train(init_model(500, 400, &hyper, PriorInit::per_item())?, &data, &tc)?.state;

    let eval = EvalConfig::default();
    println!("covariate prior  NDCG@100 {:.4}", evaluate(&with_topics, &data, &eval)?.ndcg);
    println!("per-item prior   NDCG@100 {:.4}", evaluate(&per_item, &data, &eval)?.ndcg);

    if let ExposurePrior::Covariate(prior) = &with_topics.exposure {
        let psi = prior.psi.row(0);
        let best = (0..psi.len()).max_by(|&a, &b| psi[a].total_cmp(&psi[b])).unwrap();
        println!("user 0 is most exposed to topic {best} (psi = {:.2})", psi[best]);
    }
    Ok(())
}
