//! Central finite-difference verification of analytic gradients.

use std::fmt;

use super::params::{ParamId, ParamStore};
use super::rng::Rng;
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so that coordinates whose true
/// gradient is ~0 are compared absolutely instead of amplifying rounding.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Worst coordinate found for one parameter.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tol
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "  {:<28} rel-err {:.3e} at [{}] (analytic {:.6e}, numeric {:.6e}, {} coords)",
                p.name, p.max_rel_err, p.worst_index, p.analytic, p.numeric, p.coords_checked
            )?;
        }
        write!(
            f,
            "  max rel-err {:.3e} vs tol {:.1e}: {}",
            self.max_rel_err(),
            self.tol,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Relative error after discounting `resolution`, the rounding error of the
/// central difference itself.
pub fn rel_err(analytic: f64, numeric: f64, resolution: f64) -> f64 {
    let diff = ((analytic - numeric).abs() - resolution).max(0.0);
    diff / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// One-ulp rounding bound of `(plus - minus) / 2eps`.
pub fn fd_resolution(plus: f64, minus: f64, eps: f64) -> f64 {
    f64::EPSILON * plus.abs().max(minus.abs()) / eps
}

/// Compare the gradients already stored in `store` against central
/// differences `(f(x+eps) - f(x-eps)) / 2eps` of `f` at every coordinate.
pub fn finite_diff_check<F>(f: F, store: &mut ParamStore, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    check_impl(f, store, eps, tol, None)
}

/// Like [`finite_diff_check`] but probes at most `max_coords` randomly chosen
/// coordinates per parameter.
pub fn finite_diff_check_sampled<F>(
    f: F,
    store: &mut ParamStore,
    eps: f64,
    tol: f64,
    max_coords: usize,
    rng: &mut Rng,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    check_impl(f, store, eps, tol, Some((max_coords, rng)))
}

fn check_impl<F>(
    mut f: F,
    store: &mut ParamStore,
    eps: f64,
    tol: f64,
    mut sample: Option<(usize, &mut Rng)>,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::contract(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    let ids: Vec<ParamId> = store.ids().collect();
    let mut params = Vec::with_capacity(ids.len());
    for id in ids {
        let analytic = match store.grad(id) {
            Some(g) => g.data().to_vec(),
            None => {
                return Err(Error::contract(format!(
                    "parameter `{}` has no gradient to check",
                    store.get(id).name()
                )))
            }
        };
        let n = analytic.len();
        let coords: Vec<usize> = match sample.as_mut() {
            Some((k, rng)) if *k < n => {
                let mut all: Vec<usize> = (0..n).collect();
                rng.shuffle(&mut all);
                all.truncate(*k);
                all.sort_unstable();
                all
            }
            _ => (0..n).collect(),
        };
        let mut worst = ParamCheck {
            name: store.get(id).name().to_string(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            coords_checked: coords.len(),
        };
        for &i in &coords {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + eps;
            let plus = f(store);
            store.value_mut(id).data_mut()[i] = orig - eps;
            let minus = f(store);
            store.value_mut(id).data_mut()[i] = orig;
            let (plus, minus) = (plus?, minus?);
            let numeric = (plus - minus) / (2.0 * eps);
            let e = rel_err(analytic[i], numeric, fd_resolution(plus, minus, eps));
            if e > worst.max_rel_err || !e.is_finite() {
                worst.max_rel_err = if e.is_finite() { e } else { f64::INFINITY };
                worst.worst_index = i;
                worst.analytic = analytic[i];
                worst.numeric = numeric;
            }
        }
        params.push(worst);
    }
    Ok(GradCheckReport { tol, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::graph::{reverse_grad, Graph};
    use crate::numerics::tensor::Tensor;

    fn sigmoid_loss(store: &ParamStore) -> (Graph, crate::numerics::graph::Var) {
        let mut g = Graph::new();
        let x = g.param(store, store.id("x").unwrap());
        let s = g.sigmoid(x);
        let l = g.sum(s);
        (g, l)
    }

    #[test]
    fn sigmoid_at_zero_has_quarter_slope() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::vector(vec![0.0])).unwrap();
        let (g, l) = sigmoid_loss(&store);
        reverse_grad(&g, l, &mut store).unwrap();
        assert!((store.grad(x).unwrap().data()[0] - 0.25).abs() < 1e-15);
        let rep = finite_diff_check(
            |s| {
                let (g, l) = sigmoid_loss(s);
                Ok(g.scalar(l))
            },
            &mut store,
            DEFAULT_EPS,
            1e-8,
        )
        .unwrap();
        assert!(rep.passed(), "{rep}");
    }

    #[test]
    fn corrupted_gradient_fails() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::vector(vec![0.3, -1.2, 2.0])).unwrap();
        let (g, l) = sigmoid_loss(&store);
        reverse_grad(&g, l, &mut store).unwrap();
        store.grad_mut(x).unwrap().data_mut()[1] *= 1.01;
        let rep = finite_diff_check(
            |s| {
                let (g, l) = sigmoid_loss(s);
                Ok(g.scalar(l))
            },
            &mut store,
            DEFAULT_EPS,
            1e-4,
        )
        .unwrap();
        assert!(!rep.passed());
        assert_eq!(rep.params[0].worst_index, 1);
    }

    #[test]
    fn resolution_only_discounts_rounding() {
        assert_eq!(rel_err(1.0, 1.0 + 1e-9, 2e-9), 0.0);
        assert!((rel_err(1.0, 1.01, 1e-9) - (0.01 - 1e-9) / 1.01).abs() < 1e-15);
    }

    #[test]
    fn non_positive_eps_rejected() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::scalar(1.0)).unwrap();
        store.zero_grad();
        for eps in [0.0, -1e-5, f64::NAN] {
            assert!(matches!(
                finite_diff_check(|_| Ok(0.0), &mut store, eps, 1e-4),
                Err(Error::Contract(_))
            ));
        }
    }

    #[test]
    fn perturbation_restores_values_bitwise() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::vector(vec![0.1, -0.3, 0.7])).unwrap();
        let before = store.value(x).clone();
        let (g, l) = sigmoid_loss(&store);
        reverse_grad(&g, l, &mut store).unwrap();
        finite_diff_check(
            |s| {
                let (g, l) = sigmoid_loss(s);
                Ok(g.scalar(l))
            },
            &mut store,
            DEFAULT_EPS,
            1e-6,
        )
        .unwrap();
        assert!(store.value(x).bit_eq(&before));
    }
}
