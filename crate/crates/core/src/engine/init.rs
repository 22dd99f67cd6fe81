use rand::{Rng, SeedableRng};

use super::network::Network;
use super::SeededRng;

/// He-uniform fan-in initialization: weights in `±sqrt(6 / fan_in)`, zero biases.
pub fn he_uniform(net: &mut Network, seed: u64) {
    let mut rng = SeededRng::seed_from_u64(seed);
    he_uniform_with(net, &mut rng, |_| true);
}

/// Re-initializes only the parameters accepted by `select`, drawing from `rng`.
pub fn he_uniform_with(net: &mut Network, rng: &mut SeededRng, select: impl Fn(&str) -> bool) {
    let fan_ins: Vec<Option<usize>> = net
        .graph()
        .nodes
        .iter()
        .filter(|n| !n.layer.param_shapes().is_empty())
        .map(|n| n.layer.fan_in())
        .collect();
    for (i, p) in net.params_mut().iter_mut().enumerate() {
        if !select(&p.name) {
            continue;
        }
        p.tensor.clear_grad();
        let data = p.tensor.data_mut();
        if i % 2 == 1 {
            data.fill(0.0);
            continue;
        }
        let bound = (6.0 / fan_ins[i / 2].unwrap_or(1) as f64).sqrt();
        for v in data.iter_mut() {
            *v = rng.gen_range(-bound..bound);
        }
    }
}
