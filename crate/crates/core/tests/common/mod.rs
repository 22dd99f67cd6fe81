#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use sdds_core::engine::{he_uniform, loss, Graph, LayerSpec, LossKind, Mode, Network, SeededRng, Tensor};

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a small absolute floor so that gradients that are
/// zero analytically do not divide by zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn random_tensor(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Objective used for checks: either a weighted sum of the head output, or a
/// real loss against fixed targets.
pub enum Objective {
    Weighted(Tensor),
    Loss(LossKind, Tensor),
}

impl Objective {
    fn eval(&self, out: &Tensor) -> (f64, Tensor) {
        match self {
            Objective::Weighted(w) => {
                let v = out.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
                (v, w.clone())
            }
            Objective::Loss(kind, t) => loss(*kind, out, t).unwrap(),
        }
    }
}

fn objective_value(net: &mut Network, x: &Tensor, obj: &Objective, dropout_seed: u64) -> f64 {
    let mut rng = SeededRng::seed_from_u64(dropout_seed);
    let out = net.forward(x, Mode::Train, Some(&mut rng)).unwrap();
    obj.eval(&out).0
}

/// Maximum relative error between analytic and central-difference gradients
/// over every parameter entry and every input entry.
pub fn gradcheck(graph: Graph, batch: usize, seed: u64, objective: impl Fn(&[usize], &mut SeededRng) -> Objective) -> f64 {
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut net = Network::new(graph.clone()).unwrap();
    he_uniform(&mut net, seed);
    // Non-zero biases so every bias path is exercised.
    for p in net.params_mut() {
        if p.name.ends_with(".bias") {
            for v in p.tensor.data_mut() {
                *v = rng.gen_range(-0.1..0.1);
            }
        }
    }
    let in_shape: Vec<usize> = [&[batch], graph.input_shape.as_slice()].concat();
    let x = random_tensor(&in_shape, &mut rng);
    let out_shape: Vec<usize> = [&[batch], graph.validate().unwrap().as_slice()].concat();
    let obj = objective(&out_shape, &mut rng);
    let dropout_seed = seed ^ 0xD0;

    let mut drng = SeededRng::seed_from_u64(dropout_seed);
    let out = net.forward(&x, Mode::Train, Some(&mut drng)).unwrap();
    let (_, g) = obj.eval(&out);
    let input_grad = net.backward_from(graph.nodes.len() - 1, &g).unwrap();
    let analytic: Vec<Vec<f64>> = net.params().iter().map(|p| p.tensor.grad().unwrap().to_vec()).collect();

    let mut worst: f64 = 0.0;
    for pi in 0..net.params().len() {
        for j in 0..net.params()[pi].tensor.numel() {
            let orig = net.params()[pi].tensor.data()[j];
            net.params_mut()[pi].tensor.data_mut()[j] = orig + FD_STEP;
            let up = objective_value(&mut net, &x, &obj, dropout_seed);
            net.params_mut()[pi].tensor.data_mut()[j] = orig - FD_STEP;
            let dn = objective_value(&mut net, &x, &obj, dropout_seed);
            net.params_mut()[pi].tensor.data_mut()[j] = orig;
            let fd = (up - dn) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(fd, analytic[pi][j]));
        }
    }
    for j in 0..x.numel() {
        let mut xp = x.clone();
        xp.data_mut()[j] += FD_STEP;
        let up = objective_value(&mut net, &xp, &obj, dropout_seed);
        let mut xm = x.clone();
        xm.data_mut()[j] -= FD_STEP;
        let dn = objective_value(&mut net, &xm, &obj, dropout_seed);
        let fd = (up - dn) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(fd, input_grad.data()[j]));
    }
    worst
}

pub fn weighted(shape: &[usize], rng: &mut SeededRng) -> Objective {
    Objective::Weighted(random_tensor(shape, rng))
}

/// One small graph per layer kind, each ending in something that makes the
/// layer's gradient non-trivial. Spatial size ≤ 6×6, channels ≤ 4.
pub fn layer_cases() -> Vec<(&'static str, Graph)> {
    let conv = |cin, cout, k, s, p| LayerSpec::Conv2d { in_channels: cin, out_channels: cout, kernel: k, stride: s, padding: p };
    let mut cases = Vec::new();

    let mut g = Graph::new(vec![5, 5, 2]);
    g.push("c", conv(2, 3, 3, 1, 1));
    cases.push(("conv2d same", g));

    let mut g = Graph::new(vec![6, 6, 1]);
    g.push("c", conv(1, 2, 3, 2, 0));
    cases.push(("conv2d strided valid", g));

    let mut g = Graph::new(vec![6, 6, 3]);
    g.push("p", LayerSpec::MaxPool2d { size: 2 });
    cases.push(("maxpool2d", g));

    let mut g = Graph::new(vec![5, 5, 4]);
    g.push("gap", LayerSpec::GlobalAvgPool);
    cases.push(("globalavgpool", g));

    let mut g = Graph::new(vec![5, 5, 1]);
    g.push("fc", LayerSpec::Dense { inputs: 25, outputs: 3 });
    cases.push(("dense", g));

    let mut g = Graph::new(vec![5, 5, 2]);
    g.push("r", LayerSpec::Relu);
    cases.push(("relu", g));

    let mut g = Graph::new(vec![4]);
    g.push("s", LayerSpec::Sigmoid);
    cases.push(("sigmoid", g));

    let mut g = Graph::new(vec![4]);
    g.push("s", LayerSpec::Softmax);
    cases.push(("softmax", g));

    let mut g = Graph::new(vec![5, 5, 2]);
    g.push("d", LayerSpec::Dropout { rate: 0.5 });
    cases.push(("dropout", g));

    let mut g = Graph::new(vec![3, 3, 2]);
    g.push("u", LayerSpec::Upsample2d { factor: 2 });
    cases.push(("upsample2d", g));

    let mut g = Graph::new(vec![4, 4, 1]);
    let a = g.push("c1", conv(1, 2, 3, 1, 1));
    let b = g.push("c2", conv(2, 2, 3, 1, 1));
    g.push_with("cat", LayerSpec::ConcatSkip, vec![b, a]);
    cases.push(("concat-skip", g));

    cases
}

/// Graphs ending in each head activation, paired with the loss they feed.
pub fn loss_cases() -> Vec<(&'static str, Graph, LossKind)> {
    let mut out = Vec::new();

    let mut g = Graph::new(vec![5, 5, 1]);
    g.push("c", LayerSpec::Conv2d { in_channels: 1, out_channels: 2, kernel: 3, stride: 1, padding: 1 });
    g.push("gap", LayerSpec::GlobalAvgPool);
    g.push("fc", LayerSpec::Dense { inputs: 2, outputs: 1 });
    g.push("sig", LayerSpec::Sigmoid);
    out.push(("bce", g, LossKind::Bce));

    let mut g = Graph::new(vec![5, 5, 1]);
    g.push("c", LayerSpec::Conv2d { in_channels: 1, out_channels: 2, kernel: 3, stride: 1, padding: 1 });
    g.push("gap", LayerSpec::GlobalAvgPool);
    g.push("fc", LayerSpec::Dense { inputs: 2, outputs: 3 });
    g.push("sm", LayerSpec::Softmax);
    out.push(("ce", g, LossKind::Ce));

    let mut g = Graph::new(vec![4, 4, 1]);
    g.push("c", LayerSpec::Conv2d { in_channels: 1, out_channels: 3, kernel: 3, stride: 1, padding: 1 });
    g.push("sm", LayerSpec::Softmax);
    out.push(("pixelwise_ce", g, LossKind::PixelwiseCe));

    out
}

/// Random one-hot (or {0,1} for a single column) targets of `shape`.
pub fn random_targets(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    let k = *shape.last().unwrap();
    let rows = shape.iter().product::<usize>() / k;
    let mut data = vec![0.0; rows * k];
    for r in 0..rows {
        if k == 1 {
            data[r] = f64::from(rng.gen_bool(0.5));
        } else {
            data[r * k + rng.gen_range(0..k)] = 1.0;
        }
    }
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Worst absolute difference between the conv layer and a direct
/// seven-deep loop over several geometries.
pub fn conv_oracle_max_err(seed: u64) -> f64 {
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for (h, w, cin, cout, k, s, p) in [(6, 6, 2, 3, 3, 1, 1), (7, 5, 1, 2, 3, 2, 0), (5, 5, 3, 2, 1, 1, 0), (8, 8, 2, 2, 5, 2, 2)] {
        let mut g = Graph::new(vec![h, w, cin]);
        g.push("c", LayerSpec::Conv2d { in_channels: cin, out_channels: cout, kernel: k, stride: s, padding: p });
        let mut net = Network::new(g).unwrap();
        let wt = random_tensor(&[k, k, cin, cout], &mut rng);
        let bias = random_tensor(&[cout], &mut rng);
        *net.param_mut("c.weight").unwrap() = wt.clone();
        *net.param_mut("c.bias").unwrap() = bias.clone();
        let x = random_tensor(&[2, h, w, cin], &mut rng);
        let y = net.predict(&x).unwrap();
        let (ho, wo) = ((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1);
        assert_eq!(y.shape(), &[2, ho, wo, cout]);
        for n in 0..2 {
            for oy in 0..ho {
                for ox in 0..wo {
                    for co in 0..cout {
                        let mut acc = bias.data()[co];
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                for ci in 0..cin {
                                    let xv = x.data()[((n * h + iy as usize) * w + ix as usize) * cin + ci];
                                    acc += xv * wt.data()[((ky * k + kx) * cin + ci) * cout + co];
                                }
                            }
                        }
                        let got = y.data()[((n * ho + oy) * wo + ox) * cout + co];
                        worst = worst.max((got - acc).abs());
                    }
                }
            }
        }
    }
    worst
}

/// Precision, recall and F1 of one class from raw counts, zero when undefined.
fn prf(tp: usize, fp: usize, fneg: usize) -> (f64, f64, f64) {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// Accuracy, precision, recall and F1 by counting matches directly.
/// `classes == 2` uses class 1 as the positive class; otherwise macro means.
pub fn metrics_oracle(pred: &[u8], labels: &[u8], classes: usize, binary: bool) -> [f64; 4] {
    let n = labels.len();
    let correct = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    let acc = if n == 0 { 0.0 } else { correct as f64 / n as f64 };
    let class_scores = |c: u8| {
        let tp = pred.iter().zip(labels).filter(|&(&p, &y)| p == c && y == c).count();
        let fp = pred.iter().zip(labels).filter(|&(&p, &y)| p == c && y != c).count();
        let fneg = pred.iter().zip(labels).filter(|&(&p, &y)| p != c && y == c).count();
        prf(tp, fp, fneg)
    };
    if binary {
        let (p, r, f) = class_scores(1);
        return [acc, p, r, f];
    }
    let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
    for c in 0..classes as u8 {
        let (p, r, f) = class_scores(c);
        sp += p;
        sr += r;
        sf += f;
    }
    let k = classes as f64;
    [acc, sp / k, sr / k, sf / k]
}

/// Random instances checked against [`metrics_oracle`]; returns descriptions
/// of every instance that differs in any bit.
pub fn metrics_mismatches(instances: usize, seed: u64) -> Vec<String> {
    use sdds_core::evaluation::{metrics, Averaging};
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut bad = Vec::new();
    for i in 0..instances {
        let binary = rng.gen_bool(0.5);
        let k = if binary { 2 } else { rng.gen_range(2..=6) };
        let n = rng.gen_range(1..60);
        // Skewed draws make empty rows and columns common.
        let draw = |rng: &mut SeededRng| if rng.gen_bool(0.3) { 0 } else { rng.gen_range(0..k as u8) };
        let labels: Vec<u8> = (0..n).map(|_| draw(&mut rng)).collect();
        let pred: Vec<u8> = (0..n).map(|_| draw(&mut rng)).collect();
        let avg = if binary { Averaging::Binary } else { Averaging::Macro { classes: k } };
        let got = metrics(&pred, &labels, avg).unwrap();
        let want = metrics_oracle(&pred, &labels, k, binary);
        let got = [got.accuracy, got.precision, got.recall, got.f1];
        if got.iter().zip(&want).any(|(a, b)| a.to_bits() != b.to_bits()) {
            bad.push(format!("instance {i}: got {got:?}, oracle {want:?}"));
        }
    }
    bad
}

/// Best `(threshold, accuracy)` by trying every candidate: below all sums,
/// between each pair of adjacent distinct sums, above all sums. Ties go to
/// the smallest threshold.
pub fn threshold_oracle(sums: &[f64], labels: &[u8]) -> (f64, f64) {
    let mut distinct: Vec<f64> = Vec::new();
    for &s in sums {
        if !distinct.contains(&s) {
            distinct.push(s);
        }
    }
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut cands = vec![distinct[0] - 1.0];
    for i in 1..distinct.len() {
        cands.push((distinct[i - 1] + distinct[i]) / 2.0);
    }
    cands.push(distinct[distinct.len() - 1] + 1.0);
    let mut best = (f64::NAN, -1.0);
    for t in cands {
        let mut correct = 0;
        for (s, y) in sums.iter().zip(labels) {
            let verdict = if *s > t { 1 } else { 0 };
            if verdict == *y {
                correct += 1;
            }
        }
        let acc = correct as f64 / sums.len() as f64;
        if acc > best.1 {
            best = (t, acc);
        }
    }
    best
}

pub fn threshold_mismatches(instances: usize, seed: u64) -> Vec<String> {
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut bad = Vec::new();
    for i in 0..instances {
        let n = rng.gen_range(1..50);
        // Integer-valued sums half the time so ties are frequent.
        let ties = rng.gen_bool(0.5);
        let sums: Vec<f64> =
            (0..n).map(|_| if ties { rng.gen_range(0..8) as f64 } else { rng.gen_range(0.0..400.0) }).collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.5))).collect();
        let got = sdds_core::evaluation::optimize_threshold_sums(&sums, &labels).unwrap();
        let want = threshold_oracle(&sums, &labels);
        if got.0.to_bits() != want.0.to_bits() || got.1.to_bits() != want.1.to_bits() {
            bad.push(format!("instance {i}: got {got:?}, sweep {want:?}"));
        }
    }
    bad
}

/// Small 32-pixel rubber corpus for fast end-to-end tests.
pub fn tiny_corpus(parts: usize, seed: u64) -> sdds_core::data::CorpusConfig {
    sdds_core::data::CorpusConfig {
        segments_per_part: 8,
        segment_size: 32,
        defect_size: (5, 8),
        ..sdds_core::data::CorpusConfig::target(parts, seed)
    }
}

/// Balanced train/validation/test splits of [`tiny_corpus`].
pub fn tiny_splits(parts: usize, seed: u64) -> [sdds_core::data::Dataset; 3] {
    let data = sdds_core::data::generate_corpus(&tiny_corpus(parts, seed)).unwrap();
    let data = sdds_core::data::balance_undersample(&data, 1).unwrap();
    sdds_core::data::split_by_part(&data, [0.6, 0.2, 0.2], 2).unwrap()
}

/// Desk-default grid shrunk to 32-pixel corpora, one seed and a few epochs.
pub fn tiny_grid() -> sdds_core::harness::GridConfig {
    use sdds_core::data::{CorpusConfig, GenericCorpusConfig, TextureFamily};
    use sdds_core::harness::{CorpusSource, GridConfig};
    let mut cfg = GridConfig::desk_default();
    cfg.corpora.target = CorpusSource::Generate(tiny_corpus(12, 11));
    cfg.corpora.industrial = Some(CorpusSource::Generate(CorpusConfig {
        name: "industrial".into(),
        family: TextureFamily::Metal,
        ..tiny_corpus(10, 12)
    }));
    cfg.corpora.generic = Some(CorpusSource::Generate(GenericCorpusConfig { size: 32, ..GenericCorpusConfig::new(8, 5) }));
    cfg.seeds = vec![1];
    cfg.train.max_epochs = 3;
    cfg.train.batch_size = 8;
    cfg.source_train.max_epochs = 2;
    cfg.early_stopping.patience = 1;
    cfg.panel_samples = 2;
    cfg
}

pub fn mapped(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect()).unwrap()
}

/// Label-only view of a corpus, enough for balancing at full scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Keys(pub Vec<(u32, u8)>);

impl sdds_core::data::LabeledSet for Keys {
    fn keys(&self) -> Vec<(u32, u8)> {
        self.0.clone()
    }
    fn select(&self, indices: &[usize]) -> Self {
        Keys(indices.iter().map(|&i| self.0[i]).collect())
    }
}

pub fn defective(k: &Keys) -> usize {
    k.0.iter().filter(|x| x.1 > 0).count()
}

/// 324 parts of 135 segments, rendered part by part and reduced to labels.
pub fn paper_scale_keys(seed: u64) -> Keys {
    let cfg = sdds_core::data::CorpusConfig { segments_per_part: 135, ..sdds_core::data::CorpusConfig::target(324, seed) };
    let mut keys = Vec::new();
    for spec in cfg.part_specs() {
        let part = sdds_core::data::generate_part(&spec).unwrap();
        keys.extend(part.segments.iter().map(|s| (s.part_id, s.label)));
    }
    Keys(keys)
}

/// The same 324 x 135 geometry with exactly `n` defective segments spread
/// evenly, which is the count the reported final size implies for n = 640.
pub fn keys_with_defectives(n: usize) -> Keys {
    let mut keys = Keys((0..324u32).flat_map(|p| (0..135).map(move |_| (p, 0u8))).collect());
    let stride = keys.0.len() / n;
    for i in 0..n {
        keys.0[i * stride + 13].1 = 1 + (i % 3) as u8;
    }
    keys
}
