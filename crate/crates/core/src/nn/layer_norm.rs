use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};

/// Variance floor used by every layer-normalized network in the crate.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `gain ⊙ (x − mean(x)) / sqrt(var(x) + eps) + shift`, population variance.
pub fn layer_norm_forward(x: &[f64], gain: &[f64], shift: &[f64], eps: f64) -> Result<Vec<f64>> {
    check_dim("layer_norm gain", x.len(), gain.len())?;
    check_dim("layer_norm shift", x.len(), shift.len())?;
    if !(eps > 0.0) {
        return Err(Error::contract("layer_norm eps must be positive"));
    }
    if x.is_empty() {
        return Ok(Vec::new());
    }
    let mut normed = x.to_vec();
    normalize_in_place(&mut normed, eps);
    Ok(normed
        .iter()
        .zip(gain)
        .zip(shift)
        .map(|((n, g), s)| g * n + s)
        .collect())
}

/// Replaces `x` by its standardized values and returns `1 / sqrt(var + eps)`.
#[inline]
pub(crate) fn normalize_in_place(x: &mut [f64], eps: f64) -> f64 {
    let len = x.len() as f64;
    let mean = x.iter().sum::<f64>() / len;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len;
    let inv_std = 1.0 / libm::sqrt(var + eps);
    for v in x.iter_mut() {
        *v = (*v - mean) * inv_std;
    }
    inv_std
}

#[inline]
pub(crate) fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_maps_to_zero() {
        let y = layer_norm_forward(&[3.0; 5], &[1.0; 5], &[0.0; 5], LAYER_NORM_EPS).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn already_normalized_pair() {
        let y = layer_norm_forward(&[-1.0, 1.0], &[1.0, 1.0], &[0.0, 0.0], LAYER_NORM_EPS).unwrap();
        assert!((y[0] + 1.0).abs() < 1e-4 && (y[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn output_is_centered() {
        use rand::Rng;
        let mut rng = crate::rng_from_seed(11);
        for _ in 0..50 {
            let x: Vec<f64> = (0..17).map(|_| rng.random_range(-5.0..5.0)).collect();
            let y = layer_norm_forward(&x, &[1.0; 17], &[0.0; 17], LAYER_NORM_EPS).unwrap();
            assert!(mean(&y).abs() < 1e-6);
            let var = y.iter().map(|v| v * v).sum::<f64>() / 17.0;
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn gain_and_shift_apply() {
        let y = layer_norm_forward(&[-1.0, 1.0], &[2.0, 3.0], &[0.5, -0.5], LAYER_NORM_EPS).unwrap();
        let base = layer_norm_forward(&[-1.0, 1.0], &[1.0; 2], &[0.0; 2], LAYER_NORM_EPS).unwrap();
        assert!((y[0] - (2.0 * base[0] + 0.5)).abs() < 1e-15);
        assert!((y[1] - (3.0 * base[1] - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_is_contract_violation() {
        let err = layer_norm_forward(&[1.0, 2.0], &[1.0], &[0.0, 0.0], 1e-5).unwrap_err();
        assert!(err.is_contract_violation());
        let err = layer_norm_forward(&[1.0], &[1.0], &[0.0], 0.0).unwrap_err();
        assert!(err.is_contract_violation());
    }
}
