//! Compare reverse-mode gradients of a dense network against central
//! finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streamsched::diff::{Activation, DenseNet, Params};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = DenseNet::new(vec![5, 32, 16, 8, 1], 0, Activation::LeakyRelu);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = Params::zeros(net.param_count());
    net.init(&mut params, &mut rng);
    let input: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();

    let (out, tape, y) = net.eval(&params, &input)?;
    let grads = tape.backward(&params, y, &[1.0])?;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let orig = params.values()[i];
        params.set(i, orig + h);
        let up = net.eval(&params, &input)?.0[0];
        params.set(i, orig - h);
        let down = net.eval(&params, &input)?.0[0];
        params.set(i, orig);
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads.values()[i];
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3));
    }
    println!(
        "output {:.6}, {} parameters, worst relative error {worst:.2e}",
        out[0],
        params.len()
    );
    Ok(())
}
