use expomf::checkpoint::{load_checkpoint, save_checkpoint};
use expomf::data::{init_model, Hyperparameters, PriorInit};
use expomf::em::em_step;
use expomf::synthetic::{sample_dataset, ExposureProcess, ObservationMode, SyntheticSpec};

fn main() -> expomf::error::Result<()> {
    let spec = SyntheticSpec {
        n_users: 100,
        n_items: 80,
        k: 3,
        lambda_theta: 1.0,
        lambda_beta: 1.0,
        lambda_y: 1.0,
        exposure: ExposureProcess::Constant { mu: 0.2 },
        observation: ObservationMode::Binarized { density: 0.05 },
        seed: 5,
    };
    let y = sample_dataset(&spec)?.y;
    let hyper = Hyperparameters { k: 3, ..Default::default() };
    let mut model = init_model(100, 80, &hyper, PriorInit::per_item())?;
    for _ in 0..3 {
        em_step(&mut model, &y)?;
    }

    let path = std::env::temp_dir().join("expomf-example.ckpt");
    save_checkpoint(&model, &path)?;
    let back = load_checkpoint(&path)?;
    assert_eq!(back, model);
    println!(
        "{} bytes, iteration {}, prior {}",
        std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0),
        back.iteration,
        back.exposure.variant_name()
    );

    // corrupt one byte of the header and watch it get rejected
    let mut bytes = std::fs::read(&path).expect("read");
    bytes[8] ^= 0xff;
    std::fs::write(&path, bytes).expect("write");
    println!("corrupted: {}", load_checkpoint(&path).unwrap_err());
    Ok(())
}
