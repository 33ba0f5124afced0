use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// First/second moments per parameter, in store order.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value().dims())).collect();
        Self {
            config,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Rebuild from persisted moments.
    pub fn from_parts(config: AdamConfig, t: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Result<Self> {
        if m.len() != v.len() {
            return Err(Error::contract("adam moment lists differ in length"));
        }
        if let Some(i) = v.iter().position(|t| t.data().iter().any(|&x| x < 0.0)) {
            return Err(Error::contract(format!("adam second moment {i} has negative entries")));
        }
        Ok(Self { config, t, m, v })
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn bit_eq(&self, other: &AdamState) -> bool {
        self.t == other.t
            && self.m.len() == other.m.len()
            && self.m.iter().zip(&other.m).all(|(a, b)| a.bit_eq(b))
            && self.v.iter().zip(&other.v).all(|(a, b)| a.bit_eq(b))
    }
}

/// One bias-corrected Adam update of every parameter in `store`.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::contract(format!(
            "adam state tracks {} parameters, store has {}",
            state.m.len(),
            store.len()
        )));
    }
    for id in store.ids() {
        let p = store.get(id);
        match p.grad() {
            None => return Err(Error::contract(format!("parameter `{}` has no gradient", p.name()))),
            Some(g) if g.dims() != p.value().dims() || state.m[id.index()].dims() != p.value().dims() => {
                return Err(Error::DimMismatch {
                    name: p.name().to_string(),
                    expected: p.value().dims().to_vec(),
                    found: g.dims().to_vec(),
                })
            }
            Some(_) => {}
        }
    }
    state.t += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for id in store.ids() {
        let g = store.grad(id).expect("checked above").data().to_vec();
        let m = state.m[id.index()].data_mut();
        let v = state.v[id.index()].data_mut();
        let theta = store.value_mut(id).data_mut();
        for i in 0..g.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            theta[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(vec![v])).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        for g in [0.5, -3.0, 100.0] {
            let mut s = store_with(1.0);
            let id = s.id("w").unwrap();
            s.set_grad(id, Tensor::vector(vec![g])).unwrap();
            let mut st = AdamState::new(AdamConfig::with_lr(1e-3), &s);
            adam_step(&mut s, &mut st).unwrap();
            let delta = 1.0 - s.value(id).data()[0];
            // m̂ = g, v̂ = g², so the step is lr·g/(|g|+eps)
            let expected = 1e-3 * g / (g.abs() + 1e-8);
            assert!((delta - expected).abs() < 1e-15, "{delta} vs {expected}");
            assert_eq!(st.step_count(), 1);
        }
    }

    #[test]
    fn zero_grad_is_identity_for_many_steps() {
        let mut s = store_with(0.123);
        let id = s.id("w").unwrap();
        let mut st = AdamState::new(AdamConfig::default(), &s);
        for k in 1..=50 {
            s.zero_grad();
            adam_step(&mut s, &mut st).unwrap();
            assert_eq!(s.value(id).data()[0].to_bits(), 0.123f64.to_bits());
            assert_eq!(st.step_count(), k);
        }
    }

    #[test]
    fn missing_grad_is_contract_violation() {
        let mut s = store_with(1.0);
        let mut st = AdamState::new(AdamConfig::default(), &s);
        assert!(matches!(adam_step(&mut s, &mut st), Err(Error::Contract(_))));
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut s = store_with(0.7);
            let id = s.id("w").unwrap();
            let mut st = AdamState::new(AdamConfig::default(), &s);
            for k in 0..20 {
                let w = s.value(id).data()[0];
                s.set_grad(id, Tensor::vector(vec![2.0 * w - 0.1 * k as f64])).unwrap();
                adam_step(&mut s, &mut st).unwrap();
            }
            (s, st)
        };
        let (s1, a1) = run();
        let (s2, a2) = run();
        assert!(s1.bit_eq(&s2));
        assert!(a1.bit_eq(&a2));
        assert!(a1.second_moments()[0].data()[0] >= 0.0);
    }
}
