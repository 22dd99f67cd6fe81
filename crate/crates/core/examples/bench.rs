use std::time::Instant;

use sdds_core::engine::{loss, LossKind, Mode, SeededRng, Tensor, OptimizerState};
use sdds_core::models::{build_model, ModelSpec};
use rand::{Rng, SeedableRng};

fn main() {
    let mut rng = SeededRng::seed_from_u64(0);
    let x = Tensor::new(vec![16, 64, 64, 1], (0..16 * 4096).map(|_| rng.gen::<f64>()).collect()).unwrap();
    for spec in [ModelSpec::binary(64), ModelSpec::segmentation(64, 3)] {
        let mut m = build_model(&spec, 0).unwrap();
        let mut opt = OptimizerState::adam(1e-3);
        let t = Instant::now();
        let reps = 5;
        for _ in 0..reps {
            let y = m.forward(&x, Mode::Train, Some(&mut rng)).unwrap();
            let tgt = Tensor::new(y.shape().to_vec(), y.data().iter().enumerate().map(|(i, _)| if i % y.shape().last().unwrap() == 0 { 1.0 } else { 0.0 }).collect()).unwrap();
            let kind = if y.shape().len() == 4 { LossKind::PixelwiseCe } else { LossKind::Bce };
            let (_, g) = loss(kind, &y, &tgt).unwrap();
            m.backward(&g).unwrap();
            opt.step(m.network_mut()).unwrap();
        }
        println!("{:?}: {:.1} ms per batch of 16 (params {})", spec.head, t.elapsed().as_secs_f64() * 1000.0 / reps as f64, m.param_count());
    }
}
