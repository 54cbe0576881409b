// SPDX-License-Identifier: Apache-2.0

//! Generalized cross-entropy next to plain cross-entropy, and the two
//! gradient checks on a small network.
//!
//! ```bash
//! cargo run --example gce_loss
//! ```

use biasamp::gce::{ce_loss, gce_grad_check, gce_loss, logit_grad, GradRoute, LossMode};
use biasamp::nn::{softmax, Architecture, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> biasamp::Result<()> {
    println!("{:>6} {:>10} {:>10} {:>10} {:>10}", "p_y", "CE", "q=0.3", "q=0.7", "q=1");
    for p in [0.01, 0.1, 0.3, 0.5, 0.9, 0.99] {
        let probs = [p, 1.0 - p];
        println!(
            "{p:>6} {:>10.5} {:>10.5} {:>10.5} {:>10.5}",
            ce_loss(&probs, 0)?,
            gce_loss(&probs, 0, 0.3)?,
            gce_loss(&probs, 0, 0.7)?,
            gce_loss(&probs, 0, 1.0)?
        );
    }

    // GCE weights each sample's CE gradient by p_y^q, so easy samples
    // dominate training.
    let probs = softmax(&[2.0, 0.5, -1.0]);
    let ce = logit_grad(LossMode::Ce, &probs, 0, 0.7);
    let gce = logit_grad(LossMode::Gce, &probs, 0, 0.7);
    println!("\np_y = {:.4}, p_y^0.7 = {:.4}", probs[0], probs[0].powf(0.7));
    println!("CE  logit grad {ce:.4?}");
    println!("GCE logit grad {gce:.4?}");

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = Network::new(Architecture::Mlp { hidden: 6 }, 4, 3, 5)?;
    let batch: Vec<(Vec<f64>, usize)> = (0..8)
        .map(|i| ((0..net.input_len()).map(|_| rng.random_range(0.0..1.0)).collect(), i % 3))
        .collect();
    for route in [GradRoute::Jacobian, GradRoute::FiniteDifference { step: 1e-6 }] {
        let report = gce_grad_check(&net, &batch, 0.7, route)?;
        println!(
            "{route:?}: {} params, max relative deviation {:.2e}",
            report.num_params,
            report.max_relative_deviation()
        );
    }
    Ok(())
}
