use crate::error::{Error, Result};
use crate::numerics::params::{Gradients, ParamId, ParamStore};
use crate::numerics::Scalar;

/// Central-difference gradient of `loss` with respect to every scalar in
/// `params`: `(loss(θ + h·e_i) − loss(θ − h·e_i)) / 2h`.
///
/// Each coordinate is restored to its exact original value after probing.
pub fn finite_diff_grad<T, F>(loss: F, params: &mut ParamStore<T>, h: T) -> Result<Gradients<T>>
where
    T: Scalar,
    F: FnMut(&ParamStore<T>) -> Result<T>,
{
    stencil_grad(loss, params, h, &[(1.0, 1.0), (-1.0, -1.0)], 2.0)
}

/// Five-point stencil
/// `(−f(θ+2h) + 8f(θ+h) − 8f(θ−h) + f(θ−2h)) / 12h`, fourth-order accurate,
/// so a larger `h` can be used and rounding noise in the loss matters less.
pub fn finite_diff_grad_five_point<T, F>(loss: F, params: &mut ParamStore<T>, h: T) -> Result<Gradients<T>>
where
    T: Scalar,
    F: FnMut(&ParamStore<T>) -> Result<T>,
{
    stencil_grad(loss, params, h, &[(2.0, -1.0), (1.0, 8.0), (-1.0, -8.0), (-2.0, 1.0)], 12.0)
}

/// `Σ_k c_k·loss(θ + o_k·h·e_i) / (d·h)` for `(o_k, c_k)` in `taps`.
fn stencil_grad<T, F>(mut loss: F, params: &mut ParamStore<T>, h: T, taps: &[(f64, f64)], d: f64) -> Result<Gradients<T>>
where
    T: Scalar,
    F: FnMut(&ParamStore<T>) -> Result<T>,
{
    if !(h > T::zero()) {
        return Err(Error::Input(format!("finite-difference step must be positive, got {h}")));
    }
    let mut out = Gradients::new(params.len());
    let denom = T::lit(d) * h;
    for pi in 0..params.len() {
        let id = ParamId(pi);
        let n = params.get(id).value.len();
        let mut g = vec![T::zero(); n];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = params.get(id).value[i];
            let mut acc = T::zero();
            for &(offset, coef) in taps {
                params.get_mut(id).value[i] = orig + T::lit(offset) * h;
                let v = loss(params);
                params.get_mut(id).value[i] = orig;
                let v = v?;
                if !v.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite loss while probing {}[{i}]",
                        params.get(id).name
                    )));
                }
                acc = acc + T::lit(coef) * v;
            }
            *gi = acc / denom;
        }
        *out.slot(id, n) = g;
    }
    Ok(out)
}

/// `|a − b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::params::{ParamKind, Shape};

    #[test]
    fn square_derivative() {
        let mut s = ParamStore::<f64>::new();
        let id = s.insert("t", Shape::Vector(1), ParamKind::Weight, vec![3.0]).unwrap();
        let g = finite_diff_grad(|p| Ok(p.get(id).value[0].powi(2)), &mut s, 1e-5).unwrap();
        assert!((g.get(id).unwrap()[0] - 6.0).abs() < 1e-5);
        assert_eq!(s.get(id).value[0], 3.0);
    }

    #[test]
    fn constant_and_linear_losses() {
        let mut s = ParamStore::<f64>::new();
        let id = s.insert("t", Shape::Vector(3), ParamKind::Weight, vec![0.3, -2.0, 7.5]).unwrap();
        let g = finite_diff_grad(|_| Ok(4.2), &mut s, 1e-5).unwrap();
        assert!(g.get(id).unwrap().iter().all(|&v| v == 0.0));
        let g = finite_diff_grad(|p| Ok(p.get(id).value.iter().sum()), &mut s, 1e-5).unwrap();
        assert!(g.get(id).unwrap().iter().all(|&v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn non_finite_loss_names_the_parameter() {
        let mut s = ParamStore::<f64>::new();
        s.insert("bad", Shape::Vector(1), ParamKind::Weight, vec![0.0]).unwrap();
        let err = finite_diff_grad(|_| Ok(f64::NAN), &mut s, 1e-5).unwrap_err();
        assert!(err.to_string().contains("bad[0]"), "{err}");
        assert!(finite_diff_grad(|_| Ok(0.0), &mut s, 0.0).is_err());
    }

    #[test]
    fn five_point_is_exact_on_quartics() {
        let mut s = ParamStore::<f64>::new();
        let id = s.insert("t", Shape::Vector(1), ParamKind::Weight, vec![0.7]).unwrap();
        let g = finite_diff_grad_five_point(|p| Ok(p.get(id).value[0].powi(4)), &mut s, 1e-2).unwrap();
        assert!((g.get(id).unwrap()[0] - 4.0 * 0.7f64.powi(3)).abs() < 1e-12);
        assert_eq!(s.get(id).value[0], 0.7);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.0001) - 0.0001 / 2.0001).abs() < 1e-15);
    }
}
