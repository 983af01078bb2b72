// Checks the hand-written backward pass of both Q-network families against
// central finite differences.

use bsplace::nn::{backward, ArchConfig, QNetwork};
use bsplace::rng::substream;
use rand::Rng;

pub fn run_example() -> bsplace::Result<()> {
    let cfg = ArchConfig::default();
    for mut net in [QNetwork::proposed(19, 24, &cfg)?, QNetwork::traditional(&cfg)?] {
        let mut rng = substream(3, "example");
        net.init_uniform(&mut rng);
        let x: Vec<f64> = (0..net.input_shape().len()).map(|_| rng.random_range(0.0..1.0)).collect();
        let (action, target) = (1, 0.5);
        let grads = backward(&net, &x, action, target)?;
        let loss = |n: &QNetwork| -> bsplace::Result<f64> { Ok((target - n.forward(&x)?[action]).powi(2)) };

        let h = 1e-4;
        let mut worst = 0.0f64;
        let stride = (net.param_count() / 300).max(1);
        for i in (0..net.param_count()).step_by(stride) {
            let mut probe = net.clone();
            probe.params_mut()[i] += h;
            let up = loss(&probe)?;
            probe.params_mut()[i] -= 2.0 * h;
            let down = loss(&probe)?;
            let numeric = (up - down) / (2.0 * h);
            let scale = numeric.abs().max(grads[i].abs());
            if scale > 0.0 {
                worst = worst.max((numeric - grads[i]).abs() / scale);
            }
        }
        println!("{}: {} parameters, max relative error {worst:.2e}", net.arch(), net.param_count());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> bsplace::Result<()> {
    run_example()
}
