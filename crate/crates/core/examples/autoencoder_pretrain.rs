// Pretrain a small autoencoder and inspect the augmented latent
// `[z, squared error, cosine]` of a normal and an unusual sample.

use leand::autoencoder::{self, Activation, Architecture};
use leand::optim::StageConfig;
use ndarray::{array, Array2};

fn main() -> leand::Result<()> {
    // points near a 2-D plane inside 5-D space
    let x = Array2::from_shape_fn((200, 5), |(i, j)| {
        let (u, v) = ((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos());
        match j {
            0 => u,
            1 => v,
            2 => u + v,
            3 => u - v,
            _ => 0.5 * u,
        }
    });
    let arch = Architecture::new(5, vec![8, 2], Activation::Tanh)?;
    let init = autoencoder::init(&arch, 1);
    let cfg = StageConfig {
        epochs: 150,
        lr: 5e-3,
        ..StageConfig::default()
    };
    let out = autoencoder::pretrain(&init, &x, &cfg, 2)?;
    println!(
        "{} params, loss {:.4} -> {:.4} over {} epochs",
        init.num_params(),
        out.losses[0],
        out.losses[out.losses.len() - 1],
        out.losses.len() - 1
    );

    for (name, q) in [("typical", x.row(17).to_owned()), ("unusual", array![1.0, -1.0, 1.0, 1.0, -2.0])] {
        let o = autoencoder::augmented_output(&out.params, q.view())?;
        println!("{name}: z={:.3} err={:.4} cos={:.4}", o.z, o.euclid_err, o.cos_sim);
    }
    Ok(())
}
