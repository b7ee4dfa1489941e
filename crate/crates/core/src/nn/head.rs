use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::ParamSlot;
use crate::tensor::{matmul, matmul_at, matmul_bt, Tensor};

/// How the classifier weights `W ∈ R^{N×D}` are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum InitMode {
    /// Every element set to `epsilon` (0 by default).
    Zero {
        #[serde(default)]
        epsilon: f64,
    },
    /// I.i.d. `N(0, std²)`.
    Normal { std: f64 },
    /// `N(0, 2/D)`.
    KaimingFanIn,
    /// `N(0, 2/N)`.
    KaimingFanOut,
    /// Symmetric uniform with variance `1/(6D)`.
    XavierUniform,
}

impl InitMode {
    pub const ZERO: InitMode = InitMode::Zero { epsilon: 0.0 };

    pub fn is_zero(&self) -> bool {
        matches!(self, InitMode::Zero { .. })
    }

    pub fn label(&self) -> String {
        match self {
            InitMode::Zero { epsilon } if *epsilon == 0.0 => "zero".into(),
            InitMode::Zero { epsilon } => format!("zero({epsilon:e})"),
            InitMode::Normal { std } => format!("normal({std:e})"),
            InitMode::KaimingFanIn => "kaiming_fan_in".into(),
            InitMode::KaimingFanOut => "kaiming_fan_out".into(),
            InitMode::XavierUniform => "xavier_uniform".into(),
        }
    }
}

/// The parametric softmax classifier head: `Z = A Wᵀ`, no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    weight: Tensor,
    grad: Tensor,
    init: InitMode,
}

impl ClassifierHead {
    pub fn new(classes: usize, features: usize, init: InitMode, seed: u64) -> Self {
        let mut head = Self {
            weight: Tensor::zeros(&[classes, features]),
            grad: Tensor::zeros(&[classes, features]),
            init,
        };
        head.init(init, seed);
        head
    }

    pub fn from_weight(weight: Tensor, init: InitMode) -> Result<Self> {
        if weight.shape().len() != 2 {
            return Err(Error::shape("ClassifierHead", format!("{:?}", weight.shape())));
        }
        let grad = Tensor::zeros(weight.shape());
        Ok(Self { weight, grad, init })
    }

    pub fn classes(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn init_mode(&self) -> InitMode {
        self.init
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut Tensor {
        &mut self.weight
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }

    /// Re-draws `W` according to `mode`; reproducible per seed.
    pub fn init(&mut self, mode: InitMode, seed: u64) {
        let (n, d) = (self.classes(), self.features());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = self.weight.data_mut();
        match mode {
            InitMode::Zero { epsilon } => data.iter_mut().for_each(|w| *w = epsilon),
            InitMode::Normal { std } => fill_normal(data, std, &mut rng),
            InitMode::KaimingFanIn => fill_normal(data, (2.0 / d as f64).sqrt(), &mut rng),
            InitMode::KaimingFanOut => fill_normal(data, (2.0 / n as f64).sqrt(), &mut rng),
            InitMode::XavierUniform => {
                // Uniform(-a, a) has variance a²/3.
                let bound = (3.0 / (6.0 * d as f64)).sqrt();
                data.iter_mut()
                    .for_each(|w| *w = rng.gen_range(-bound..=bound));
            }
        }
        self.grad.fill(0.0);
        self.init = mode;
    }

    pub fn forward(&self, a: &Tensor) -> Result<Tensor> {
        if a.shape().len() != 2 || a.cols() != self.features() {
            return Err(Error::shape(
                "head_forward",
                format!("features {:?} vs W {:?}", a.shape(), self.weight.shape()),
            ));
        }
        matmul_bt(a, &self.weight)
    }

    /// Returns `(∂ℓ/∂W, ∂ℓ/∂A) = (−(1/M)Δᵀ A, −(1/M)Δ W)` for the batch-mean loss.
    pub fn backward(&self, a: &Tensor, delta: &Tensor) -> Result<(Tensor, Tensor)> {
        let m = a.rows();
        if delta.shape() != [m, self.classes()] || a.shape() != [m, self.features()] {
            return Err(Error::shape(
                "head_backward",
                format!("A {:?}, Δ {:?}, W {:?}", a.shape(), delta.shape(), self.weight.shape()),
            ));
        }
        let scale = -1.0 / m as f64;
        let grad_w = matmul_at(delta, a)?.scale(scale);
        let grad_a = matmul(delta, &self.weight)?.scale(scale);
        Ok((grad_w, grad_a))
    }

    /// Runs [`backward`](Self::backward), stores `∂ℓ/∂W` for the optimizer and returns `∂ℓ/∂A`.
    pub fn backward_store(&mut self, a: &Tensor, delta: &Tensor) -> Result<Tensor> {
        let (grad_w, grad_a) = self.backward(a, delta)?;
        self.grad = grad_w;
        Ok(grad_a)
    }

    pub fn param_slot(&mut self) -> ParamSlot<'_> {
        ParamSlot::new(self.weight.data_mut(), self.grad.data())
    }
}

fn fill_normal<R: Rng>(data: &mut [f64], std: f64, rng: &mut R) {
    if std == 0.0 {
        data.iter_mut().for_each(|w| *w = 0.0);
        return;
    }
    let normal = Normal::new(0.0, std).expect("finite std");
    data.iter_mut().for_each(|w| *w = normal.sample(rng));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{frobenius_norm, one_hot, prediction_error, softmax_rows};

    fn sample_variance(v: &[f64]) -> f64 {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (v.len() - 1) as f64
    }

    #[test]
    fn zero_head_gives_uniform_predictions() {
        let head = ClassifierHead::new(4, 3, InitMode::ZERO, 1);
        let a = Tensor::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.5, 9.0]]).unwrap();
        let z = head.forward(&a).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let p = softmax_rows(&z, 1.0).unwrap();
        assert!(p.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn head_forward_hand_cases() {
        let head = ClassifierHead::from_weight(Tensor::identity(3), InitMode::ZERO).unwrap();
        let a = Tensor::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(head.forward(&a).unwrap().data(), &[0.0, 1.0, 0.0]);

        let w = Tensor::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let head = ClassifierHead::from_weight(w, InitMode::ZERO).unwrap();
        let a = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(head.forward(&a).unwrap().data(), &[11.0, 17.0]);
        assert!(head.forward(&Tensor::zeros(&[1, 3])).is_err());
    }

    #[test]
    fn zero_head_stalls_feature_gradient() {
        let head = ClassifierHead::new(3, 2, InitMode::ZERO, 0);
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]).unwrap();
        let delta = Tensor::from_rows(&[vec![0.3, -0.1, -0.2], vec![-0.5, 0.9, -0.4]]).unwrap();
        let (_, grad_a) = head.backward(&a, &delta).unwrap();
        assert!(grad_a.data().iter().all(|&v| v == 0.0));
        let (gw, ga) = head.backward(&a, &Tensor::zeros(&[2, 3])).unwrap();
        assert!(gw.data().iter().chain(ga.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn first_sgd_update_matches_prototype_decomposition() {
        // M = 2, N = D = 2, A = I, Y = I, W = 0, α = 1.
        let head = ClassifierHead::new(2, 2, InitMode::ZERO, 0);
        let a = Tensor::identity(2);
        let y = one_hot(&[0, 1], 2).unwrap();
        let y_hat = softmax_rows(&head.forward(&a).unwrap(), 1.0).unwrap();
        let delta = prediction_error(&y, &y_hat).unwrap();
        let (grad_w, _) = head.backward(&a, &delta).unwrap();
        let w1: Vec<f64> = head
            .weight()
            .data()
            .iter()
            .zip(grad_w.data())
            .map(|(w, g)| w - g)
            .collect();
        assert_eq!(w1, vec![0.25, -0.25, -0.25, 0.25]);

        // (α/M) Y_{:,n}ᵀ A − (α/(M N)) 1ᵀ A, row by row.
        let (m, n) = (2.0, 2.0);
        for class in 0..2 {
            for d in 0..2 {
                let class_sum: f64 = (0..2)
                    .map(|r| y.row(r)[class] * a.row(r)[d])
                    .sum();
                let batch_sum: f64 = (0..2).map(|r| a.row(r)[d]).sum();
                let expected = class_sum / m - batch_sum / (m * n);
                assert_eq!(w1[class * 2 + d], expected);
            }
        }
    }

    #[test]
    fn zero_epsilon_bound() {
        let head = ClassifierHead::new(5, 7, InitMode::Zero { epsilon: 1e-3 }, 0);
        assert!(frobenius_norm(head.weight()) <= 1e-3 * (35f64).sqrt() + 1e-15);
        let head = ClassifierHead::new(5, 7, InitMode::ZERO, 0);
        assert_eq!(frobenius_norm(head.weight()), 0.0);
    }

    #[test]
    fn kaiming_fan_in_variance() {
        let head = ClassifierHead::new(20, 512, InitMode::KaimingFanIn, 3);
        let var = sample_variance(head.weight().data());
        let target = 2.0 / 512.0;
        assert!((var - target).abs() < 0.1 * target, "variance {var}");
    }

    #[test]
    fn kaiming_fan_out_and_xavier_variance() {
        let head = ClassifierHead::new(20, 512, InitMode::KaimingFanOut, 3);
        let var = sample_variance(head.weight().data());
        assert!((var - 0.1).abs() < 0.01, "variance {var}");
        let head = ClassifierHead::new(20, 512, InitMode::XavierUniform, 3);
        let var = sample_variance(head.weight().data());
        let target = 1.0 / (6.0 * 512.0);
        assert!((var - target).abs() < 0.1 * target, "variance {var}");
    }

    #[test]
    fn tiny_normal_init_is_nearly_uniform() {
        use rand::SeedableRng;
        let head = ClassifierHead::new(10, 64, InitMode::Normal { std: 1e-8 }, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let feats: Vec<f64> = (0..32 * 64).map(|_| normal.sample(&mut rng)).collect();
        let a = Tensor::new(vec![32, 64], feats).unwrap();
        let p = softmax_rows(&head.forward(&a).unwrap(), 1.0).unwrap();
        let worst = p.data().iter().map(|v| (v - 0.1).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-6, "max deviation {worst}");
    }

    #[test]
    fn init_is_reproducible() {
        let a = ClassifierHead::new(5, 64, InitMode::KaimingFanIn, 42);
        let b = ClassifierHead::new(5, 64, InitMode::KaimingFanIn, 42);
        let c = ClassifierHead::new(5, 64, InitMode::KaimingFanIn, 43);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
