use crate::error::{Error, Result};
use crate::model::Real;

const LOG_CLAMP: f64 = 1e-12;

/// Mean of squared element differences.
pub fn mse_loss<T: Real>(reconstruction: &[T], target: &[T]) -> Result<f64> {
    if reconstruction.len() != target.len() {
        return Err(Error::Dimension(format!(
            "mse over {} vs {} elements",
            reconstruction.len(),
            target.len()
        )));
    }
    if target.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = reconstruction
        .iter()
        .zip(target)
        .map(|(a, b)| {
            let d = a.to_f64_lossy() - b.to_f64_lossy();
            d * d
        })
        .sum();
    Ok(s / target.len() as f64)
}

/// `d mse / d reconstruction`.
pub fn mse_grad<T: Real>(reconstruction: &[T], target: &[T]) -> Vec<T> {
    let scale = T::from_f64_lossy(2.0 / target.len().max(1) as f64);
    reconstruction.iter().zip(target).map(|(&a, &b)| (a - b) * scale).collect()
}

/// Categorical cross-entropy `−Σ yᵢ log ŷᵢ` with `log` clamped at 1e-12.
pub fn cross_entropy_loss(prediction: &[f64], label: &[f64]) -> Result<f64> {
    if prediction.len() != label.len() {
        return Err(Error::Dimension(format!(
            "prediction has {} classes, label has {}",
            prediction.len(),
            label.len()
        )));
    }
    Ok(-prediction
        .iter()
        .zip(label)
        .map(|(&p, &y)| if y == 0.0 { 0.0 } else { y * p.max(LOG_CLAMP).ln() })
        .sum::<f64>())
}

pub fn one_hot(class: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[class] = 1.0;
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[0.3f64, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[1.0f64; 12], &[0.0; 12]).unwrap(), 1.0);
        assert_eq!(mse_loss(&[1.0f64, 1.0], &[0.0, 1.0]).unwrap(), 0.5);
        assert!(matches!(mse_loss(&[1.0f64], &[0.0, 1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy_loss(&[0.0, 1.0, 0.0], &[0.0, 1.0, 0.0]).unwrap(), 0.0);
        for n in 2..6 {
            let u = vec![1.0 / n as f64; n];
            let ce = cross_entropy_loss(&u, &one_hot(n - 1, n)).unwrap();
            assert!((ce - (n as f64).ln()).abs() < 1e-12);
        }
        let ce = cross_entropy_loss(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((ce - 0.6931).abs() < 1e-4);
        // zero probability on the true class hits the clamp, not infinity
        let ce = cross_entropy_loss(&[0.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((ce - 1e-12f64.ln().abs()).abs() < 1e-9);
        assert!(cross_entropy_loss(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn mse_grad_matches_difference_quotient() {
        let a = [0.2f64, 0.9, 0.4];
        let b = [0.1f64, 0.5, 0.8];
        let g = mse_grad(&a, &b);
        for i in 0..3 {
            let mut hi = a;
            let mut lo = a;
            hi[i] += 1e-6;
            lo[i] -= 1e-6;
            let num = (mse_loss(&hi, &b).unwrap() - mse_loss(&lo, &b).unwrap()) / 2e-6;
            assert!((num - g[i]).abs() < 1e-8);
        }
    }
}
