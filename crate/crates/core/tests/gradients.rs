//! Finite-difference checks for every layer kind, the memory and the whole
//! model.

use pvad::lora::LoraDense;
use pvad::memory::{memory_backward, memory_forward, PeriodicMemoryBank, SoftmaxAxis};
use pvad::model::{ModelConfig, ModelProbe, PhaseOverride, VadModel};
use pvad::nn::{
    grad_check, grad_check_input, Activation, ActivationKind, Attention, Conv2d, ConvTranspose2d, Dense, Embedding,
    Fragment, Layer, LayerNorm, LayerProbe, Param, Projection,
};
use pvad::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;
const INSTANCES: u64 = 20;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Randomizes every parameter so zero-initialized biases are exercised too.
fn jitter<L: Layer<f64>>(layer: &mut L, rng: &mut ChaCha8Rng) {
    for p in layer.params_mut() {
        for v in p.value.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
}

fn check_layer<L: Layer<f64> + Clone>(make: impl Fn(&mut ChaCha8Rng) -> (L, Vec<usize>)) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut layer, in_shape) = make(&mut rng);
        jitter(&mut layer, &mut rng);
        let x = random(&in_shape, &mut rng);
        let y = layer.infer(&x).unwrap();
        let target = random(y.shape(), &mut rng);
        let mut probe = LayerProbe { layer, target };
        let p = grad_check(&mut probe, &x, EPS).unwrap();
        let i = grad_check_input(&probe, &x, EPS).unwrap();
        worst = worst.max(p.max_relative_error).max(i.max_relative_error);
    }
    worst
}

#[test]
fn dense() {
    let e = check_layer(|r| (Dense::new("d", 5, 4, r), vec![3, 5]));
    assert!(e < TOL, "{e}");
}

#[test]
fn conv2d() {
    let e = check_layer(|r| (Conv2d::new("c", 2, 3, 3, 2, r), vec![2, 2, 7, 7]));
    assert!(e < TOL, "{e}");
}

#[test]
fn conv_transpose2d() {
    let e = check_layer(|r| (ConvTranspose2d::new("t", 2, 3, 3, 2, r), vec![2, 2, 3, 3]));
    assert!(e < TOL, "{e}");
}

#[test]
fn attention() {
    let e = check_layer(|r| (Attention::new("a", 6, r), vec![5, 6]));
    assert!(e < TOL, "{e}");
}

#[test]
fn adapted_attention() {
    let e = check_layer(|r| {
        let mut a = Attention::new("a", 6, r);
        for p in [&mut a.q, &mut a.v] {
            let Projection::Plain(d) = p else { unreachable!() };
            let mut l = LoraDense::wrap(d.clone(), 2, 4.0, r).unwrap();
            l.base.weight.trainable = true;
            l.base.bias.trainable = true;
            *p = Projection::Adapted(l);
        }
        (a, vec![4, 6])
    });
    assert!(e < TOL, "{e}");
}

#[test]
fn layernorm() {
    let e = check_layer(|_| (LayerNorm::new("n", 7), vec![4, 7]));
    assert!(e < TOL, "{e}");
}

#[test]
fn embedding() {
    let e = check_layer(|r| (Embedding::new("p", 4, 5, r), vec![4, 5]));
    assert!(e < TOL, "{e}");
}

#[test]
fn activations() {
    for kind in [ActivationKind::Tanh, ActivationKind::Sigmoid] {
        let e = check_layer(|_| (Activation(kind), vec![3, 4]));
        assert!(e < TOL, "{kind:?}: {e}");
    }
}

#[test]
fn dense_layernorm_stack() {
    struct Stack {
        d: Dense<f64>,
        n: LayerNorm<f64>,
    }
    impl Fragment<f64> for Stack {
        fn params(&self) -> Vec<&Param<f64>> {
            let mut p = self.d.params();
            p.extend(self.n.params());
            p
        }
        fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
            let mut p = self.d.params_mut();
            p.extend(self.n.params_mut());
            p
        }
        fn evaluate(&self, x: &Tensor<f64>) -> pvad::Result<(f64, Vec<Tensor<f64>>, Tensor<f64>)> {
            let (h, dc) = self.d.forward(x)?;
            let (y, nc) = self.n.forward(&h)?;
            let loss: f64 = y.data().iter().enumerate().map(|(i, v)| v * (i as f64 * 0.3).cos()).sum();
            let dy = Tensor::from_vec(y.shape(), (0..y.len()).map(|i| (i as f64 * 0.3).cos()).collect())?;
            let mut g: Vec<Tensor<f64>> = self.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            let (gd, gn) = g.split_at_mut(2);
            let dh = self.n.backward(&nc, &dy, gn)?;
            let dx = self.d.backward(&dc, &dh, gd)?;
            Ok((loss, g, dx))
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut s = Stack {
        d: Dense::new("d", 4, 6, &mut rng),
        n: LayerNorm::new("n", 6),
    };
    let x = random(&[3, 4], &mut rng);
    let r = grad_check(&mut s, &x, EPS).unwrap();
    assert!(r.max_relative_error < TOL, "{r:?}");
}

struct MemoryProbe {
    bank: PeriodicMemoryBank<f64>,
    phase: usize,
    scores: Vec<f64>,
    target: Tensor<f64>,
}

impl Fragment<f64> for MemoryProbe {
    fn params(&self) -> Vec<&Param<f64>> {
        vec![&self.bank.items]
    }
    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        vec![&mut self.bank.items]
    }
    fn evaluate(&self, x: &Tensor<f64>) -> pvad::Result<(f64, Vec<Tensor<f64>>, Tensor<f64>)> {
        let (out, trace) = memory_forward(x, &self.bank, self.phase, &self.scores)?;
        let mut d = out.clone();
        let mut loss = 0.0;
        for (v, &t) in d.data_mut().iter_mut().zip(self.target.data()) {
            *v -= t;
            loss += 0.5 * *v * *v;
        }
        let (dx, dm) = memory_backward(&trace, &self.bank, &d)?;
        Ok((loss, vec![dm], dx))
    }
}

#[test]
fn memory_composition() {
    for axis in [SoftmaxAxis::Column, SoftmaxAxis::Row] {
        for seed in 0..INSTANCES {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let bank = PeriodicMemoryBank::new(5, 4, 10, axis, &mut rng).unwrap();
            let mut scores: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..1.0)).collect();
            let z: f64 = scores.iter().sum();
            scores.iter_mut().for_each(|s| *s /= z);
            let mut probe = MemoryProbe {
                bank,
                phase: rng.random_range(0..10),
                scores,
                target: random(&[3, 4], &mut rng),
            };
            let x = random(&[3, 4], &mut rng);
            let p = grad_check(&mut probe, &x, EPS).unwrap();
            let i = grad_check_input(&probe, &x, EPS).unwrap();
            assert!(p.max_relative_error < TOL && i.max_relative_error < TOL, "{axis:?} seed {seed}: {p:?} {i:?}");
        }
    }
}

fn tiny_probe(seed: u64, use_memory: bool) -> (ModelProbe, Tensor<f64>) {
    let cfg = ModelConfig {
        clip_len: 4,
        frame_size: 16,
        conv_channels: 4,
        dim: 8,
        slots: 16,
        t_max: 8,
        use_memory,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = VadModel::<f64>::new(cfg, &mut rng).unwrap();
    let clip = Tensor::from_vec(&cfg.clip_shape(), (0..4 * 256).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let (_, phase, _) = model.reconstruct(&clip).unwrap();
    let probe = ModelProbe {
        fixed: PhaseOverride {
            phase: phase.phase,
            boost_factor: 1.0 + phase.confidence(),
        },
        model,
        label: rng.random_range(0..8),
        lambda_period: 1.0,
    };
    (probe, clip)
}

#[test]
fn full_model_tiny_configuration() {
    for seed in 0..3 {
        let (mut probe, clip) = tiny_probe(seed, true);
        let r = grad_check(&mut probe, &clip, EPS).unwrap();
        assert!(r.max_relative_error < TOL, "seed {seed}: {r:?}");
        assert!(r.checked > 1500, "{}", r.checked);
        let i = grad_check_input(&probe, &clip, EPS).unwrap();
        assert!(i.max_relative_error < TOL, "seed {seed}: {i:?}");
    }
}

#[test]
fn full_model_without_memory() {
    let (mut probe, clip) = tiny_probe(7, false);
    let r = grad_check(&mut probe, &clip, EPS).unwrap();
    assert!(r.max_relative_error < TOL, "{r:?}");
}
