//! First-order optimizers over named parameter groups.
//!
//! Each group carries its own learning rate, so the classifier head (rate α)
//! and the feature extractor (rate β) can move at different speeds. Momentum
//! SGD defaults to the exponential-moving-average form
//! `V ← M·V + (1−M)·(−lr·g); p ← p + V`; the accumulating form
//! `V ← M·V − lr·g` is available for comparison.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{matmul_at, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    SgdMomentum,
    Nesterov,
    Adam,
    Radam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentumForm {
    #[default]
    Ema,
    Accumulating,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub momentum: f64,
    pub momentum_form: MomentumForm,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::SgdMomentum,
            momentum: 0.9,
            momentum_form: MomentumForm::Ema,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(momentum: f64) -> Self {
        Self {
            momentum,
            ..Self::default()
        }
    }

    pub fn adam() -> Self {
        Self {
            algorithm: Algorithm::Adam,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Optimizer(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Optimizer("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Optimizer("eps must be positive".into()));
        }
        Ok(())
    }
}

/// A mutable view of one parameter tensor and an immutable view of its gradient.
pub struct ParamSlot<'a> {
    value: &'a mut [f64],
    grad: &'a [f64],
}

impl<'a> ParamSlot<'a> {
    pub fn new(value: &'a mut [f64], grad: &'a [f64]) -> Self {
        assert_eq!(value.len(), grad.len(), "parameter and gradient lengths differ");
        Self { value, grad }
    }
}

pub struct ParamGroup<'a> {
    pub name: &'static str,
    pub lr: f64,
    pub params: Vec<ParamSlot<'a>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupState {
    /// Number of updates applied to this group (bias correction uses it).
    pub updates: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step: u64,
    pub groups: BTreeMap<String, GroupState>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            groups: BTreeMap::new(),
        })
    }

    /// Applies one update to every group with a positive learning rate.
    /// Groups with `lr == 0` are left bit-identical and their buffers untouched.
    pub fn step(&mut self, groups: &mut [ParamGroup<'_>]) -> Result<()> {
        for (i, g) in groups.iter().enumerate() {
            if !(g.lr >= 0.0 && g.lr.is_finite()) {
                return Err(Error::Optimizer(format!(
                    "learning rate for group {:?} must be non-negative, got {}",
                    g.name, g.lr
                )));
            }
            if groups[..i].iter().any(|other| other.name == g.name) {
                return Err(Error::Optimizer(format!("group {:?} listed twice", g.name)));
            }
            if let Some(state) = self.groups.get(g.name) {
                let lens: Vec<usize> = g.params.iter().map(|p| p.value.len()).collect();
                let buffered: Vec<usize> = state.first.iter().map(Vec::len).collect();
                if lens != buffered {
                    return Err(Error::Optimizer(format!(
                        "buffers for group {:?} do not match its parameters",
                        g.name
                    )));
                }
            }
        }

        let cfg = self.config;
        for group in groups.iter_mut() {
            if group.lr == 0.0 {
                continue;
            }
            let state = self
                .groups
                .entry(group.name.to_string())
                .or_insert_with(|| GroupState {
                    updates: 0,
                    first: group.params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
                    second: match cfg.algorithm {
                        Algorithm::Adam | Algorithm::Radam => {
                            group.params.iter().map(|p| vec![0.0; p.value.len()]).collect()
                        }
                        _ => Vec::new(),
                    },
                });
            state.updates += 1;
            let t = state.updates;
            for (k, slot) in group.params.iter_mut().enumerate() {
                let first = &mut state.first[k];
                match cfg.algorithm {
                    Algorithm::SgdMomentum | Algorithm::Nesterov => {
                        momentum_update(&cfg, group.lr, slot, first)
                    }
                    Algorithm::Adam => adam_update(&cfg, group.lr, t, slot, first, &mut state.second[k]),
                    Algorithm::Radam => radam_update(&cfg, group.lr, t, slot, first, &mut state.second[k]),
                }
            }
        }
        self.step += 1;
        Ok(())
    }
}

fn momentum_update(cfg: &OptimizerConfig, lr: f64, slot: &mut ParamSlot<'_>, velocity: &mut [f64]) {
    let m = cfg.momentum;
    let nesterov = cfg.algorithm == Algorithm::Nesterov;
    for ((p, &g), v) in slot.value.iter_mut().zip(slot.grad).zip(velocity.iter_mut()) {
        let raw = -lr * g;
        let scaled = match cfg.momentum_form {
            MomentumForm::Ema => (1.0 - m) * raw,
            MomentumForm::Accumulating => raw,
        };
        *v = m * *v + scaled;
        *p += if nesterov { m * *v + scaled } else { *v };
    }
}

fn adam_update(
    cfg: &OptimizerConfig,
    lr: f64,
    t: u64,
    slot: &mut ParamSlot<'_>,
    m: &mut [f64],
    s: &mut [f64],
) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for (((p, &g), mv), sv) in slot.value.iter_mut().zip(slot.grad).zip(m.iter_mut()).zip(s.iter_mut()) {
        *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * g;
        *sv = cfg.beta2 * *sv + (1.0 - cfg.beta2) * g * g;
        let m_hat = *mv / bc1;
        let s_hat = *sv / bc2;
        *p -= lr * m_hat / (s_hat.sqrt() + cfg.eps);
    }
}

/// Rectified Adam as in the authors' reference implementation: the adaptive
/// term is used once the length of the approximated SMA reaches 5, before that
/// the update degenerates to bias-corrected momentum SGD.
fn radam_update(
    cfg: &OptimizerConfig,
    lr: f64,
    t: u64,
    slot: &mut ParamSlot<'_>,
    m: &mut [f64],
    s: &mut [f64],
) {
    let beta2_t = cfg.beta2.powi(t as i32);
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let rho_inf = 2.0 / (1.0 - cfg.beta2) - 1.0;
    let rho_t = rho_inf - 2.0 * t as f64 * beta2_t / (1.0 - beta2_t);
    let rectified = rho_t >= 5.0;
    let step_size = if rectified {
        ((1.0 - beta2_t) * (rho_t - 4.0) / (rho_inf - 4.0) * (rho_t - 2.0) / rho_t * rho_inf
            / (rho_inf - 2.0))
            .sqrt()
            / bc1
    } else {
        1.0 / bc1
    };
    for (((p, &g), mv), sv) in slot.value.iter_mut().zip(slot.grad).zip(m.iter_mut()).zip(s.iter_mut()) {
        *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * g;
        *sv = cfg.beta2 * *sv + (1.0 - cfg.beta2) * g * g;
        if rectified {
            *p -= lr * step_size * *mv / (sv.sqrt() + cfg.eps);
        } else {
            *p -= lr * step_size * *mv;
        }
    }
}

/// The head velocity `V_W = (α/M) Δᵀ A`, i.e. `−α·∂ℓ/∂W` for plain SGD.
pub fn velocity_of_w(delta: &Tensor, a: &Tensor, alpha: f64) -> Result<Tensor> {
    if delta.rows() != a.rows() || delta.shape().len() != 2 || a.shape().len() != 2 {
        return Err(Error::shape(
            "velocity_of_w",
            format!("Δ {:?} vs A {:?}", delta.shape(), a.shape()),
        ));
    }
    let m = delta.rows() as f64;
    Ok(matmul_at(delta, a)?.scale(alpha / m))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_scalar(state: &mut OptimizerState, p: &mut [f64], g: &[f64], lr: f64) {
        let mut groups = [ParamGroup {
            name: "head",
            lr,
            params: vec![ParamSlot::new(p, g)],
        }];
        state.step(&mut groups).unwrap();
    }

    #[test]
    fn momentum_free_is_vanilla_sgd() {
        let mut state = OptimizerState::new(OptimizerConfig::sgd(0.0)).unwrap();
        let mut p = [1.0, -2.0];
        step_scalar(&mut state, &mut p, &[0.5, 4.0], 0.1);
        assert_eq!(p, [1.0 - 0.05, -2.0 - 0.4]);
    }

    #[test]
    fn ema_momentum_hand_unroll() {
        let mut state = OptimizerState::new(OptimizerConfig::sgd(0.9)).unwrap();
        let mut p = [0.0];
        step_scalar(&mut state, &mut p, &[1.0], 0.1);
        assert!((p[0] - -0.01).abs() < 1e-15);
        let before = p[0];
        step_scalar(&mut state, &mut p, &[1.0], 0.1);
        assert!((p[0] - before - -0.019).abs() < 1e-15);
        assert_eq!(state.step, 2);
    }

    #[test]
    fn accumulating_momentum_hand_unroll() {
        let cfg = OptimizerConfig {
            momentum_form: MomentumForm::Accumulating,
            ..OptimizerConfig::sgd(0.9)
        };
        let mut state = OptimizerState::new(cfg).unwrap();
        let mut p = [0.0];
        step_scalar(&mut state, &mut p, &[1.0], 0.1);
        assert!((p[0] - -0.1).abs() < 1e-15);
        step_scalar(&mut state, &mut p, &[1.0], 0.1);
        assert!((p[0] - -0.29).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_freezes_group_bitwise() {
        for algorithm in [Algorithm::SgdMomentum, Algorithm::Nesterov, Algorithm::Adam, Algorithm::Radam] {
            let cfg = OptimizerConfig {
                algorithm,
                ..OptimizerConfig::default()
            };
            let mut state = OptimizerState::new(cfg).unwrap();
            let mut head = [0.5, -0.0, 3.0];
            let mut theta = [-0.0, 1.25, -7.5];
            let original = theta;
            let g = [1.0, -2.0, 0.5];
            for _ in 0..3 {
                let mut groups = [
                    ParamGroup {
                        name: "head",
                        lr: 0.1,
                        params: vec![ParamSlot::new(&mut head, &g)],
                    },
                    ParamGroup {
                        name: "extractor",
                        lr: 0.0,
                        params: vec![ParamSlot::new(&mut theta, &g)],
                    },
                ];
                state.step(&mut groups).unwrap();
            }
            assert_eq!(
                theta.map(f64::to_bits),
                original.map(f64::to_bits),
                "{algorithm:?}"
            );
        }
    }

    #[test]
    fn negative_lr_is_rejected_before_any_mutation() {
        let mut state = OptimizerState::new(OptimizerConfig::sgd(0.9)).unwrap();
        let mut a = [1.0];
        let mut b = [1.0];
        let g = [1.0];
        let mut groups = [
            ParamGroup {
                name: "head",
                lr: 0.1,
                params: vec![ParamSlot::new(&mut a, &g)],
            },
            ParamGroup {
                name: "extractor",
                lr: -0.1,
                params: vec![ParamSlot::new(&mut b, &g)],
            },
        ];
        assert!(state.step(&mut groups).is_err());
        assert_eq!(a, [1.0]);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn buffer_mismatch_is_an_error() {
        let mut state = OptimizerState::new(OptimizerConfig::sgd(0.9)).unwrap();
        let mut p = [0.0, 0.0];
        step_scalar(&mut state, &mut p, &[1.0, 1.0], 0.1);
        let mut q = [0.0];
        let g = [1.0];
        let mut groups = [ParamGroup {
            name: "head",
            lr: 0.1,
            params: vec![ParamSlot::new(&mut q, &g)],
        }];
        assert!(matches!(state.step(&mut groups), Err(Error::Optimizer(_))));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut state = OptimizerState::new(OptimizerConfig::adam()).unwrap();
        let mut p = [0.0, 0.0];
        step_scalar(&mut state, &mut p, &[3.0, -0.2], 0.01);
        assert!((p[0] + 0.01).abs() < 1e-9);
        assert!((p[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn radam_warms_up_as_momentum_sgd() {
        let cfg = OptimizerConfig {
            algorithm: Algorithm::Radam,
            ..OptimizerConfig::default()
        };
        let mut state = OptimizerState::new(cfg).unwrap();
        let mut p = [0.0];
        // rho_t < 5 for the first few steps: update = lr * m_hat = lr * g.
        step_scalar(&mut state, &mut p, &[2.0], 0.1);
        assert!((p[0] + 0.2).abs() < 1e-12);
        for _ in 0..10 {
            step_scalar(&mut state, &mut p, &[2.0], 0.1);
        }
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn velocity_of_w_cases() {
        let a = Tensor::identity(2);
        let delta = Tensor::from_rows(&[vec![0.5, -0.5], vec![-0.5, 0.5]]).unwrap();
        let v = velocity_of_w(&delta, &a, 1.0).unwrap();
        assert_eq!(v.data(), &[0.25, -0.25, -0.25, 0.25]);
        let v2 = velocity_of_w(&delta, &a, 2.0).unwrap();
        assert_eq!(v2.data(), v.scale(2.0).data());
        let zero = velocity_of_w(&Tensor::zeros(&[2, 2]), &a, 1.0).unwrap();
        assert!(zero.data().iter().all(|&x| x == 0.0));
        assert!(velocity_of_w(&Tensor::zeros(&[3, 2]), &a, 1.0).is_err());
    }

    #[test]
    fn state_round_trips_through_json() {
        let mut state = OptimizerState::new(OptimizerConfig::adam()).unwrap();
        let mut p = [0.1, 0.2, 0.3];
        for _ in 0..3 {
            step_scalar(&mut state, &mut p, &[0.123_456_789, -1.0 / 3.0, 1e-9], 0.01);
        }
        let json = serde_json::to_string(&state).unwrap();
        let back: OptimizerState = serde_json::from_str(&json).unwrap();
        assert_eq!(back, state);
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
    }
}
