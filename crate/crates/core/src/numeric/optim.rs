use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Grads, ParamSet, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for each trainable parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor> {
        self.first.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor> {
        self.second.get(name)
    }
}

/// One bias-corrected Adam update of every trainable parameter in place.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &Grads,
    state: &mut AdamState,
    lr: f32,
    cfg: &AdamConfig,
) -> Result<()> {
    let trainable = params.trainable_names();
    for name in &trainable {
        let g = grads.get(name).ok_or_else(|| Error::MissingGradient(name.clone()))?;
        if g.shape() != params.tensor(name)?.shape() {
            return Err(Error::shape("adam_step", format!("gradient for {name}: {:?}", g.shape())));
        }
    }
    if let Some(extra) = grads.keys().find(|k| !trainable.contains(k)) {
        return Err(Error::shape("adam_step", format!("gradient supplied for non-trainable `{extra}`")));
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
    let bc1 = (1.0 - cfg.beta1.powi(t)) as f32;
    let bc2 = (1.0 - cfg.beta2.powi(t)) as f32;
    let eps = cfg.eps as f32;
    for name in trainable {
        let g = &grads[&name];
        let shape = g.shape().to_vec();
        let m = state.first.entry(name.clone()).or_insert_with(|| Tensor::zeros(&shape));
        let v = state.second.entry(name.clone()).or_insert_with(|| Tensor::zeros(&shape));
        let p = params.tensor_mut(&name)?;
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for i in 0..pd.len() {
            let gi = g.data()[i];
            md[i] = b1 * md[i] + (1.0 - b1) * gi;
            vd[i] = b2 * vd[i] + (1.0 - b2) * gi * gi;
            let mhat = md[i] / bc1;
            let vhat = vd[i] / bc2;
            pd[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Linear warm-up from 0 to `base_lr` over `warmup_steps`, constant afterwards.
pub fn warmup_lr(step: u64, base_lr: f64, warmup_steps: u64) -> f64 {
    let w = warmup_steps.max(1);
    if step >= w {
        base_lr
    } else {
        base_lr * step as f64 / w as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cosine {
    pub value: f32,
    /// Set when either input had zero norm; `value` is then 0.
    pub zero_norm: bool,
}

/// Cosine similarity with the zero-norm convention (value 0, flagged).
pub fn cosine_sim(x: &[f32], y: &[f32]) -> Result<Cosine> {
    if x.len() != y.len() {
        return Err(Error::shape("cosine_sim", format!("{} vs {}", x.len(), y.len())));
    }
    let (mut dot, mut nx, mut ny) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in x.iter().zip(y) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nx += a * a;
        ny += b * b;
    }
    if nx == 0.0 || ny == 0.0 {
        log::warn!("cosine_sim: zero-norm input, defined as 0");
        return Ok(Cosine { value: 0.0, zero_norm: true });
    }
    let v = (dot / (nx.sqrt() * ny.sqrt())).clamp(-1.0, 1.0);
    Ok(Cosine { value: v as f32, zero_norm: false })
}

/// One optimisation step of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f32,
}

/// Loss curve as CSV with columns `step,lr,loss`.
pub fn curve_csv(records: &[LossRecord]) -> String {
    let mut s = String::from("step,lr,loss\n");
    for r in records {
        s.push_str(&format!("{},{:e},{}\n", r.step, r.lr, r.loss));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f32) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(v), true).unwrap();
        p
    }

    fn grad(v: f32) -> Grads {
        let mut g = Grads::new();
        g.insert("w".into(), Tensor::scalar(v));
        g
    }

    #[test]
    fn zero_gradient_leaves_params_but_counts_step() {
        let mut p = scalar_param(1.5);
        let mut s = AdamState::new();
        adam_step(&mut p, &grad(0.0), &mut s, 0.1, &AdamConfig::default()).unwrap();
        assert_eq!(p.tensor("w").unwrap().data(), &[1.5]);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar_param(0.0);
        let mut s = AdamState::new();
        adam_step(&mut p, &grad(1.0), &mut s, 0.1, &AdamConfig::default()).unwrap();
        let w = p.tensor("w").unwrap().data()[0];
        assert!((w + 0.1).abs() < 1e-6, "{w}");
    }

    #[test]
    fn two_steps_follow_the_recurrence() {
        // Hand recurrence in f64 for g = 0.5 twice, lr = 0.01.
        let (b1, b2, eps, lr, g) = (0.9f64, 0.999f64, 1e-8f64, 0.01f64, 0.5f64);
        let (mut m, mut v, mut w) = (0.0, 0.0, 2.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        let mut p = scalar_param(2.0);
        let mut s = AdamState::new();
        for _ in 0..2 {
            adam_step(&mut p, &grad(0.5), &mut s, 0.01, &AdamConfig::default()).unwrap();
        }
        let got = p.tensor("w").unwrap().data()[0] as f64;
        assert!((got - w).abs() < 1e-6, "{got} vs {w}");
        assert!((s.first_moment("w").unwrap().data()[0] as f64 - m).abs() < 1e-7);
        assert!((s.second_moment("w").unwrap().data()[0] as f64 - v).abs() < 1e-4 * v);
        assert_eq!(s.step(), 2);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = scalar_param(0.0);
        let mut s = AdamState::new();
        let err = adam_step(&mut p, &Grads::new(), &mut s, 0.1, &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, Error::MissingGradient(n) if n == "w"));
        assert_eq!(s.step(), 0);
    }

    #[test]
    fn frozen_params_do_not_move() {
        let mut p = scalar_param(1.0);
        p.insert("frozen", Tensor::scalar(3.0), false).unwrap();
        let mut s = AdamState::new();
        adam_step(&mut p, &grad(1.0), &mut s, 0.1, &AdamConfig::default()).unwrap();
        assert_eq!(p.tensor("frozen").unwrap().data(), &[3.0]);
    }

    #[test]
    fn warmup_schedule() {
        assert_eq!(warmup_lr(10_000, 1e-4, 10_000), 1e-4);
        assert_eq!(warmup_lr(0, 1e-4, 10_000), 0.0);
        assert!((warmup_lr(5_000, 1e-4, 10_000) - 5e-5).abs() < 1e-18);
        assert_eq!(warmup_lr(50_000, 1e-4, 10_000), 1e-4);
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 2.0]).unwrap().value, 0.0);
        let c = cosine_sim(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((c.value - 0.707_106_78).abs() < 1e-7);
        let x = [0.3, -1.2, 4.0];
        assert!((cosine_sim(&x, &x).unwrap().value - 1.0).abs() < 1e-7);
        let z = cosine_sim(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(z, Cosine { value: 0.0, zero_norm: true });
        assert!(cosine_sim(&[1.0], &[1.0, 2.0]).is_err());
    }
}
