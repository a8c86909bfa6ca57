use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{ParamKind, ParamStore, Scalar, Shape};

/// Half-width of the uniform weight initializer.
pub const INIT_RANGE: f64 = 0.1;
pub const ADAGRAD_EPS: f64 = 1e-8;

/// Fresh store with weights drawn i.i.d. from U[-0.1, 0.1] in declaration
/// order and biases at zero.
pub fn init_params<T: Scalar>(shapes: &[(String, Shape, ParamKind)], seed: u64) -> Result<ParamStore<T>> {
    let mut store = ParamStore::new();
    for (name, shape, kind) in shapes {
        store.insert_zeros(name, *shape, *kind)?;
    }
    reinit_uniform(&mut store, seed);
    Ok(store)
}

/// Re-draws every weight of an existing store in place; biases are zeroed.
pub fn reinit_uniform<T: Scalar>(store: &mut ParamStore<T>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in store.iter_mut() {
        match p.kind {
            ParamKind::Weight => {
                for v in &mut p.value {
                    *v = T::lit(rng.random_range(-INIT_RANGE..=INIT_RANGE));
                }
            }
            ParamKind::Bias => p.value.iter_mut().for_each(|v| *v = T::zero()),
        }
        p.accum.iter_mut().for_each(|a| *a = T::zero());
        p.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaGrad {
    pub lr: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdaGrad {
    fn default() -> Self {
        Self {
            lr: 0.01,
            weight_decay: 1e-4,
            eps: ADAGRAD_EPS,
        }
    }
}

impl AdaGrad {
    pub fn step<T: Scalar>(&self, params: &mut ParamStore<T>) -> Result<()> {
        adagrad_step(params, self.lr, self.weight_decay, self.eps)
    }
}

/// One AdaGrad update from the stored gradients, which are cleared afterwards.
///
/// Weight decay adds `weight_decay·θ` to the gradient of weight tensors only.
pub fn adagrad_step<T: Scalar>(params: &mut ParamStore<T>, lr: f64, weight_decay: f64, eps: f64) -> Result<()> {
    if let Some(p) = params.iter().find(|p| p.grad.iter().any(|g| !g.is_finite())) {
        return Err(Error::Numerical(format!("non-finite gradient in {}", p.name)));
    }
    let (lr, wd, eps) = (T::lit(lr), T::lit(weight_decay), T::lit(eps));
    for p in params.iter_mut() {
        let decay = p.kind == ParamKind::Weight && wd != T::zero();
        for ((v, g), a) in p.value.iter_mut().zip(p.grad.iter_mut()).zip(p.accum.iter_mut()) {
            let mut g_eff = *g;
            if decay {
                g_eff = g_eff + wd * *v;
            }
            *a = *a + g_eff * g_eff;
            if *a > T::zero() {
                *v = *v - lr * g_eff / (a.sqrt() + eps);
            }
            *g = T::zero();
        }
    }
    Ok(())
}
