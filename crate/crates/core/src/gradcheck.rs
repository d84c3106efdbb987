//! Finite-difference validation of reverse-mode gradients.
//!
//! The checker re-evaluates the loss twice up front and demands bitwise
//! equality, so a non-deterministic loss cannot masquerade as a gradient
//! bug. It then compares each analytic derivative against a central
//! difference `(f(θ+h) − f(θ−h)) / 2h` with a relative-error floor.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::graph::Graph;
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Absolute floor in the relative-error denominator, so derivatives that
/// are legitimately ~0 do not divide by ~0.
pub const REL_ERR_FLOOR: f64 = 1e-8;

/// Permitted finite-difference step range.
pub const H_RANGE: (f64, f64) = (1e-6, 1e-4);

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error over all checked coordinates.
    pub max_rel_err: f64,
    /// Parameter name and flat coordinate where it occurred.
    pub worst: (String, usize),
    /// Total coordinates compared.
    pub checked: usize,
}

/// Checks `d loss / d θ` for every parameter in `ids`.
///
/// `build` must construct the loss for the current store contents and
/// return its graph variable; it is called once per function evaluation.
/// For parameters longer than `max_coords` a seeded subset of
/// coordinates is checked, so cost stays bounded on wide weights.
pub fn grad_check<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    mut build: F,
    h: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Graph) -> Result<crate::graph::Var>,
{
    if !(h >= H_RANGE.0 && h <= H_RANGE.1) {
        return Err(CoreError::InvalidArgument {
            op: "grad_check",
            detail: format!("step {h} outside [{}, {}]", H_RANGE.0, H_RANGE.1),
        });
    }
    if max_coords == 0 {
        return Err(CoreError::InvalidArgument { op: "grad_check", detail: "max_coords must be positive".into() });
    }

    fn eval_loss<F>(store: &ParamStore, build: &mut F) -> Result<f64>
    where
        F: FnMut(&ParamStore, &mut Graph) -> Result<crate::graph::Var>,
    {
        let mut g = Graph::new();
        let loss = build(store, &mut g)?;
        g.val(loss).item()
    }

    // Determinism gate: two evaluations of the same point must agree bitwise.
    let f1 = eval_loss(store, &mut build)?;
    let f2 = eval_loss(store, &mut build)?;
    if f1.to_bits() != f2.to_bits() {
        return Err(CoreError::NonDeterministic {
            detail: format!("loss evaluated twice gave {f1:?} and {f2:?}"),
        });
    }

    // Analytic gradients, one backward pass.
    let mut g = Graph::new();
    let loss = build(store, &mut g)?;
    let mut param_vars = Vec::with_capacity(ids.len());
    for &id in ids {
        // `param` returns the cached leaf if the loss already used it.
        param_vars.push(g.param(store, id)?);
    }
    g.backward(loss)?;

    let mut rng = Rng::new(seed);
    let mut report =
        GradCheckReport { max_rel_err: 0.0, worst: (String::new(), 0), checked: 0 };

    for (slot, &id) in ids.iter().enumerate() {
        if !store.is_trainable(id) {
            return Err(CoreError::InvalidArgument {
                op: "grad_check",
                detail: format!("parameter {:?} is frozen", store.name(id)),
            });
        }
        let n = store.value(id).len();
        let analytic: Option<Tensor> = g.grad(param_vars[slot]).cloned();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            rng.choose_distinct(n, max_coords)
        };
        for &c in &coords {
            let a = analytic.as_ref().map_or(0.0, |t| t.data()[c]);
            let base = store.value(id).data()[c];

            let mut bumped = store.value(id).clone();
            bumped.data_mut()[c] = base + h;
            store.set_value(id, bumped)?;
            let fp = eval_loss(store, &mut build)?;

            let mut bumped = store.value(id).clone();
            bumped.data_mut()[c] = base - h;
            store.set_value(id, bumped)?;
            let fm = eval_loss(store, &mut build)?;

            let mut restored = store.value(id).clone();
            restored.data_mut()[c] = base;
            store.set_value(id, restored)?;

            let fd = (fp - fm) / (2.0 * h);
            let rel = libm::fabs(a - fd) / libm::fabs(a).max(libm::fabs(fd)).max(REL_ERR_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (store.name(id).to_string(), c);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn quadratic_gradient_verifies() {
        let mut store = ParamStore::new();
        let id = store
            .register("x", Tensor::new(&[4], vec![0.3, -1.2, 2.0, 0.7]).unwrap(), true)
            .unwrap();
        // loss = Σ (x − 1)²
        let report = grad_check(
            &mut store,
            &[id],
            |s, g| {
                let x = g.param(s, s.id("x")?)?;
                let d = g.add_scalar(x, -1.0)?;
                let sq = g.pow_scalar(d, 2.0)?;
                g.sum_all(sq)
            },
            1e-5,
            16,
            0,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-8, "rel err {}", report.max_rel_err);
        assert_eq!(report.checked, 4);
    }

    #[test]
    fn composite_nonlinear_gradient_verifies() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::new(&[2, 2], vec![0.5, -0.3, 0.8, 0.1]).unwrap(), true).unwrap();
        let ids = vec![store.id("w").unwrap()];
        let report = grad_check(
            &mut store,
            &ids,
            |s, g| {
                let w = g.param(s, s.id("w")?)?;
                let x = g.leaf(Tensor::new(&[3, 2], vec![1.0, 2.0, -1.0, 0.5, 0.2, -0.7]).unwrap())?;
                let y = g.matmul(x, w)?;
                let y = g.gelu(y)?;
                let y = g.sigmoid(y)?;
                g.sum_all(y)
            },
            1e-5,
            16,
            1,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn step_outside_range_rejected() {
        let mut store = ParamStore::new();
        let id = store.register("x", Tensor::scalar(1.0), true).unwrap();
        let r = grad_check(&mut store, &[id], |s, g| {
            let x = g.param(s, s.id("x")?)?;
            g.sum_all(x)
        }, 1e-3, 4, 0);
        assert!(matches!(r, Err(CoreError::InvalidArgument { .. })));
    }

    #[test]
    fn frozen_parameter_rejected() {
        let mut store = ParamStore::new();
        let id = store.register("x", Tensor::scalar(1.0), false).unwrap();
        let r = grad_check(&mut store, &[id], |s, g| {
            let x = g.param(s, s.id("x")?)?;
            g.sum_all(x)
        }, 1e-5, 4, 0);
        assert!(matches!(r, Err(CoreError::InvalidArgument { .. })));
    }
}
