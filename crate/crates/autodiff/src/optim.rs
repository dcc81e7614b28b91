//! Plain stochastic gradient descent.

use crate::error::{AutodiffError, Result};
use crate::params::ParamStore;
use crate::real::Real;

/// `p <- p - lr * grad(p)` for every parameter. No momentum, no weight decay.
///
/// Every parameter must hold a gradient; nothing is updated otherwise.
pub fn sgd_step<T: Real>(params: &mut ParamStore<T>, lr: T) -> Result<()> {
    if let Some((_, p)) = params.iter().find(|(_, p)| p.grad.is_none()) {
        return Err(AutodiffError::ContractViolation(format!(
            "parameter {} has no gradient",
            p.name
        )));
    }
    for p in params.iter_mut() {
        let grad = p.grad.as_ref().expect("checked above");
        for (v, &g) in p.value.data_mut().iter_mut().zip(grad.data()) {
            *v -= lr * g;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::tensor::Tensor;

    fn single(value: f64, grad: Option<f64>) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        let id = store.push("p", Tensor::scalar(value));
        if let Some(g) = grad {
            store.accumulate(&[(id, vec![g])]);
        }
        store
    }

    #[test]
    fn step_moves_against_gradient() {
        let mut store = single(1.0, Some(0.5));
        sgd_step(&mut store, 0.1).unwrap();
        assert!((store.value(crate::ParamId(0)).data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_is_a_no_op() {
        let mut store = single(1.25, Some(-3.0));
        sgd_step(&mut store, 0.0).unwrap();
        assert_eq!(store.value(crate::ParamId(0)).data()[0], 1.25);
    }

    #[test]
    fn missing_gradient_is_rejected() {
        let mut store = single(1.0, None);
        assert!(matches!(
            sgd_step(&mut store, 0.1),
            Err(AutodiffError::ContractViolation(_))
        ));
    }

    #[test]
    fn one_step_on_quadratic() {
        // loss = (p - 3)^2 through the graph, p = 0.
        let mut store = single(0.0, None);
        let pid = crate::ParamId(0);
        let grads = {
            let mut g = Graph::new(&store);
            let p = g.param(pid);
            let three = g.input(Tensor::scalar(3.0));
            let loss = g.mse_loss(p, three).unwrap();
            g.backward(loss).unwrap()
        };
        store.accumulate(grads.params());
        sgd_step(&mut store, 0.1).unwrap();
        assert!((store.value(pid).data()[0] - 0.6).abs() < 1e-12);
    }
}
