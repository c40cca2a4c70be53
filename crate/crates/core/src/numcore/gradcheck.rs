//! Central-difference gradient checking.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{Param, Scalar};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: Scalar,
    /// Coordinates sampled per tensor; tensors at or below this size are swept fully.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-4, max_coords: 256, seed: 0x5eed }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: Scalar,
    /// Parameter name and flat index of the worst coordinate.
    pub worst_param: Option<(String, usize)>,
    pub per_param_errors: BTreeMap<String, Scalar>,
    pub coords_checked: BTreeMap<String, usize>,
}

pub fn relative_error(analytic: Scalar, numeric: Scalar) -> Scalar {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Compares the gradient buffers already stored in `params` with central differences of `loss_fn`.
///
/// Parameters without a gradient buffer are frozen and skipped. Each perturbed
/// value is restored bitwise before moving on.
pub fn grad_check<F>(params: &mut [Param], mut loss_fn: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: FnMut(&[Param]) -> Result<Scalar>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    for pi in 0..params.len() {
        let analytic: Vec<Scalar> = match params[pi].tensor.grad() {
            Some(g) => g.to_vec(),
            None => continue,
        };
        let n = analytic.len();
        let coords: Vec<usize> = if n <= opts.max_coords {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.max_coords).into_vec();
            c.sort_unstable();
            c
        };
        let mut worst: Scalar = 0.0;
        let mut worst_idx = coords.first().copied().unwrap_or(0);
        for &i in &coords {
            let orig = params[pi].tensor.data()[i];
            params[pi].tensor.data_mut()[i] = orig + opts.eps;
            let plus = loss_fn(params)?;
            params[pi].tensor.data_mut()[i] = orig - opts.eps;
            let minus = loss_fn(params)?;
            params[pi].tensor.data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss while perturbing {}[{i}]",
                    params[pi].name
                )));
            }
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let err = relative_error(analytic[i], numeric);
            if err > worst {
                worst = err;
                worst_idx = i;
            }
        }
        let name = params[pi].name.clone();
        if worst >= report.max_rel_error {
            if report.worst_param.is_none() || worst > report.max_rel_error {
                report.worst_param = Some((name.clone(), worst_idx));
            }
            report.max_rel_error = worst;
        }
        report.coords_checked.insert(name.clone(), coords.len());
        report.per_param_errors.insert(name, worst);
    }
    Ok(report)
}

#[cfg(all(test, not(feature = "single")))]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    #[test]
    fn quadratic_loss_is_exact() {
        let mut t = Tensor::new(vec![5], vec![0.3, -1.2, 2.0, 0.0, 4.5]).unwrap();
        t.enable_grad();
        let g: Vec<Scalar> = t.data().to_vec();
        t.grad_mut().unwrap().copy_from_slice(&g);
        let mut params = vec![Param::new("p", t)];
        let report = grad_check(
            &mut params,
            |ps| Ok(0.5 * ps[0].tensor.data().iter().map(|x| x * x).sum::<Scalar>()),
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn frozen_params_are_excluded() {
        let mut a = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        a.enable_grad();
        a.grad_mut().unwrap().copy_from_slice(&[1.0, 2.0]);
        let b = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        let mut params = vec![Param::new("a", a), Param::new("frozen", b)];
        let report = grad_check(
            &mut params,
            |ps| {
                Ok(0.5 * ps[0].tensor.data().iter().map(|x| x * x).sum::<Scalar>()
                    + ps[1].tensor.data().iter().sum::<Scalar>())
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.per_param_errors.contains_key("a"));
        assert!(!report.per_param_errors.contains_key("frozen"));
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut a = Tensor::new(vec![1], vec![0.0]).unwrap();
        a.enable_grad();
        let mut params = vec![Param::new("a", a)];
        let r = grad_check(&mut params, |_| Ok(Scalar::NAN), &GradCheckOptions::default());
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn params_restored_after_check() {
        let mut a = Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap();
        a.enable_grad();
        let before = a.data().to_vec();
        let mut params = vec![Param::new("a", a)];
        grad_check(&mut params, |ps| Ok(ps[0].tensor.data().iter().sum()), &GradCheckOptions::default()).unwrap();
        assert_eq!(params[0].tensor.data(), &before[..]);
    }
}
