use super::array::Tensor;

/// Central-difference estimate of the gradient of a scalar function.
pub fn finite_diff_grad(f: impl Fn(&Tensor<f64>) -> f64, x: &Tensor<f64>, eps: f64) -> Tensor<f64> {
    assert!(eps > 0.0, "finite_diff_grad: eps must be positive");
    let mut probe = x.clone();
    let grad = (0..x.numel())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + eps;
            let plus = f(&probe);
            probe.data_mut()[i] = orig - eps;
            let minus = f(&probe);
            probe.data_mut()[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect();
    Tensor::new(x.shape(), grad).expect("gradient has the input's shape")
}

/// Largest element-wise relative error, with the denominator floored at
/// `floor` so that near-zero gradients are compared absolutely.
pub fn max_rel_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "max_rel_error shapes");
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::new(&[2, 3], vec![0.3, -1.0, 2.0, 5.0, 0.0, 1.5]).unwrap();
        let g = finite_diff_grad(|t| t.sum(), &x, 1e-4);
        assert!(g.data().iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn square_at_three() {
        let x = Tensor::scalar(3.0);
        let g = finite_diff_grad(|t| t.item() * t.item(), &x, 1e-4);
        assert!((g.item() - 6.0).abs() <= 1e-7);
    }
}
