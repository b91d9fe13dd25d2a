//! Finite-difference gradient checking used by the test suites.

use crate::error::{Error, Result};
use crate::numerics::rng::Rng;
use crate::numerics::Tensor;

/// Result of a gradient check: the largest relative error seen and the
/// flat index where it occurred.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares an analytic gradient against central differences of `f`.
///
/// `f` evaluates the scalar objective at the given parameter tensor.
/// `params` is the point to check at and `analytic` the gradient claimed
/// there, of identical shape. At most `max_coords` coordinates are probed;
/// when the tensor is larger, a deterministic sample drawn from `rng` is
/// used. Any non-finite objective value fails the check outright.
pub fn grad_check<F>(
    mut f: F,
    params: &Tensor,
    analytic: &Tensor,
    max_coords: usize,
    rng: &mut Rng,
) -> Result<GradCheckReport>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if params.shape() != analytic.shape() {
        return Err(Error::shape("grad_check", params.shape(), analytic.shape()));
    }
    let n = params.len();
    let coords: Vec<usize> = if n <= max_coords {
        (0..n).collect()
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut idx);
        idx.truncate(max_coords);
        idx
    };

    let h = 1e-5;
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: 0,
        checked: coords.len(),
    };
    let mut point = params.clone();
    for &i in &coords {
        let orig = point.data()[i];
        point.data_mut()[i] = orig + h;
        let up = f(&point)?;
        point.data_mut()[i] = orig - h;
        let down = f(&point)?;
        point.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::domain(format!(
                "non-finite objective during gradient check at index {i}"
            )));
        }
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / f64::max(1.0, f64::max(a.abs(), numeric.abs()));
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_index = i;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_passes() {
        // f(x) = sum(x^2), grad = 2x
        let x = Tensor::vector(vec![0.5, -1.25, 2.0]);
        let g = Tensor::vector(x.data().iter().map(|&v| 2.0 * v).collect());
        let mut rng = Rng::new(7);
        let rep = grad_check(
            |p| Ok(p.data().iter().map(|&v| v * v).sum()),
            &x,
            &g,
            16,
            &mut rng,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-8, "rel err {}", rep.max_rel_err);
        assert_eq!(rep.checked, 3);
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let bad = Tensor::vector(vec![0.0, 0.0]);
        let mut rng = Rng::new(7);
        let rep = grad_check(
            |p| Ok(p.data().iter().map(|&v| v * v).sum()),
            &x,
            &bad,
            16,
            &mut rng,
        )
        .unwrap();
        assert!(rep.max_rel_err > 1e-2);
    }

    #[test]
    fn coordinate_sampling_respects_cap() {
        let x = Tensor::vector(vec![0.1; 100]);
        let g = Tensor::vector(vec![0.2; 100]);
        let mut rng = Rng::new(3);
        let rep = grad_check(
            |p| Ok(p.data().iter().map(|&v| v * v).sum()),
            &x,
            &g,
            10,
            &mut rng,
        )
        .unwrap();
        assert_eq!(rep.checked, 10);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let x = Tensor::vector(vec![1.0]);
        let g = Tensor::vector(vec![1.0]);
        let mut rng = Rng::new(3);
        let res = grad_check(|_| Ok(f64::NAN), &x, &g, 4, &mut rng);
        assert!(res.is_err());
    }
}
