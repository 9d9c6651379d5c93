// Central-difference check of the autoencoder reconstruction gradient.

use leand::autoencoder::{self, Activation, Architecture};
use leand::gradcheck;
use ndarray::Array2;

fn main() -> leand::Result<()> {
    let arch = Architecture::new(4, vec![5, 2], Activation::Tanh)?;
    let params = autoencoder::init(&arch, 3);
    let x = Array2::from_shape_fn((6, 4), |(i, j)| ((i * 5 + j * 3) % 7) as f64 / 3.0 - 1.0);
    let rows: Vec<usize> = (0..x.nrows()).collect();

    let (loss, grads) = autoencoder::reconstruction_loss_grad(&params, &x, &rows)?;
    let loss_at = |theta: &[f64]| {
        let mut p = params.clone();
        p.set_flat(theta);
        autoencoder::reconstruction_loss(&p, &x).expect("finite loss")
    };
    let report = gradcheck::check(loss_at, &params.to_flat(), &grads.to_flat(), 1e-5, 1e-4);
    println!(
        "loss {loss:.5}: {} params, max rel err {:.2e}, max abs err {:.2e} -> {}",
        report.checked,
        report.max_rel_err,
        report.max_abs_err,
        if report.passed() { "ok" } else { "MISMATCH" }
    );
    Ok(())
}
