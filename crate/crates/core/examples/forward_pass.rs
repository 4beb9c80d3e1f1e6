//! One eval-mode forward pass of the full-size model on random inputs.

use matnet::data::BranchInputs;
use matnet::{Model, ModelConfig, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let config = ModelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = Model::new(config.clone(), &mut rng)?;
    println!(
        "d_model {}, {} heads of width {}, {} parameters",
        config.d_model,
        config.heads,
        config.head_dim(),
        model.params.num_scalars()
    );

    let w = config.weather_width;
    let inputs = BranchInputs {
        pv: Tensor::from_fn(&[24, 1], |_| rng.gen()),
        hw: Tensor::from_fn(&[24, w], |_| rng.gen()),
        fw: Tensor::from_fn(&[24, w], |_| rng.gen()),
    };
    let out = model.predict(&inputs)?;
    println!(
        "{} outputs, all in (0, 1): {}",
        out.len(),
        out.iter().all(|v| *v > 0.0 && *v < 1.0)
    );
    Ok(())
}
