use super::{Array, Gradients, Tape, Var};
use crate::Scalar;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient for parameter '{name}' (first bad index {index})")]
    NonFiniteGrad { name: String, index: usize },
}

/// Ordered collection of named trainable arrays. Parameters live here between
/// batches; [`ParamStore::bind`] re-introduces them as tape leaves.
#[derive(Clone, Debug)]
pub struct ParamStore<S> {
    names: Vec<String>,
    values: Vec<Array<S>>,
}

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Tape leaves for every parameter of a store, in store order.
pub struct BoundParams<'t, S: Scalar> {
    vars: Vec<Var<'t, S>>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array<S>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array<S> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array<S> {
        &mut self.values[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array<S>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter())
    }

    pub fn total_scalars(&self) -> usize {
        self.values.iter().map(Array::numel).sum()
    }

    /// Introduce every parameter as a leaf on the tape.
    pub fn bind<'t>(&self, tape: &'t Tape<S>) -> BoundParams<'t, S> {
        BoundParams { vars: self.values.iter().map(|v| tape.leaf(v.clone())).collect() }
    }
}

impl<'t, S: Scalar> BoundParams<'t, S> {
    pub fn var(&self, id: ParamId) -> Var<'t, S> {
        self.vars[id.0]
    }

    /// Gradients for every parameter, in store order (zeros when absent).
    pub fn collect_grads(&self, grads: &Gradients<S>) -> Vec<Array<S>> {
        self.vars.iter().map(|v| grads.get_or_zeros(*v)).collect()
    }
}

/// Adam with bias correction.
pub struct Adam<S> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    t: u64,
    m: Vec<Array<S>>,
    v: Vec<Array<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: S, beta1: S, beta2: S, eps: S) -> Self {
        Adam { lr, beta1, beta2, eps, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// Standard settings with the given learning rate.
    pub fn with_lr(lr: S) -> Self {
        Self::new(
            lr,
            S::from_f64_lossy(0.9),
            S::from_f64_lossy(0.999),
            S::from_f64_lossy(1e-8),
        )
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over every parameter in the store. Gradients must be in
    /// store order. A non-finite gradient aborts before touching any state.
    pub fn step(&mut self, params: &mut ParamStore<S>, grads: &[Array<S>]) -> Result<(), OptimError> {
        assert_eq!(grads.len(), params.len(), "adam: {} grads for {} params", grads.len(), params.len());
        for (i, g) in grads.iter().enumerate() {
            if let Some(bad) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(OptimError::NonFiniteGrad {
                    name: params.names[i].clone(),
                    index: bad,
                });
            }
        }
        if self.m.is_empty() {
            self.m = params.values.iter().map(|p| Array::zeros(p.shape())).collect();
            self.v = params.values.iter().map(|p| Array::zeros(p.shape())).collect();
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = S::one() - self.beta1.powi(t);
        let bc2 = S::one() - self.beta2.powi(t);
        for i in 0..params.len() {
            let p = params.values[i].data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let g = grads[i].data();
            assert_eq!(p.len(), g.len(), "adam: grad shape mismatch for '{}'", params.names[i]);
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (S::one() - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (S::one() - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] = p[j] - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Array::from_f64(&[2], &[1.0, -2.0]));
        let mut adam = Adam::with_lr(0.1);
        adam.step(&mut store, &[Array::zeros(&[2])]).unwrap();
        assert_eq!(store.value(id).data(), &[1.0, -2.0]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // Bias-corrected first step with g=1: theta -= lr * 1/(1+eps).
        let mut store = ParamStore::<f64>::new();
        let id = store.add("theta", Array::scalar(0.0));
        let mut adam = Adam::with_lr(0.05);
        adam.step(&mut store, &[Array::scalar(1.0)]).unwrap();
        let expected = -0.05 / (1.0 + 1e-8);
        assert!((store.value(id).data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn quadratic_descent_reaches_near_zero() {
        // 100 steps on f(theta) = theta^2 from theta=1 with lr=0.1.
        let mut store = ParamStore::<f64>::new();
        let id = store.add("theta", Array::scalar(1.0));
        let mut adam = Adam::with_lr(0.1);
        for _ in 0..100 {
            let g = Array::scalar(2.0 * store.value(id).data()[0]);
            adam.step(&mut store, &[g]).unwrap();
        }
        assert!(store.value(id).data()[0].abs() < 0.05, "theta = {}", store.value(id).data()[0]);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut store = ParamStore::<f64>::new();
        store.add("kernel.0", Array::scalar(1.0));
        let mut adam = Adam::with_lr(0.1);
        let err = adam.step(&mut store, &[Array::scalar(f64::NAN)]).unwrap_err();
        assert!(err.to_string().contains("kernel.0"), "{err}");
    }
}
