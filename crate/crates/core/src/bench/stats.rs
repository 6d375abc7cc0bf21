//! Replicate statistics.

use statrs::distribution::{ContinuousCDF, StudentsT};

/// Two-sided 95% Student-t quantile for `dof` degrees of freedom.
pub fn t_quantile_975(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64)
        .expect("dof ≥ 1")
        .inverse_cdf(0.975)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator).
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Half-width of the 95% confidence interval of the mean. Zero for a
/// single replicate.
pub fn ci95_half_width(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let s = sample_std(xs);
    if s == 0.0 {
        return 0.0;
    }
    t_quantile_975(xs.len() - 1) * s / (xs.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_table_values() {
        // two-sided 95% critical values from standard tables
        for (dof, t) in [(1, 12.706), (4, 2.776), (9, 2.262), (30, 2.042)] {
            assert!((t_quantile_975(dof) - t).abs() < 1e-3, "{dof}");
        }
    }

    #[test]
    fn ci_of_constant_is_zero() {
        assert_eq!(ci95_half_width(&[3.0; 5]), 0.0);
        assert_eq!(ci95_half_width(&[3.0]), 0.0);
    }

    #[test]
    fn ci_reference() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        // s = sqrt(2.5), n = 5
        let expected = 2.776_445 * 2.5f64.sqrt() / 5f64.sqrt();
        assert!((ci95_half_width(&xs) - expected).abs() < 1e-5);
    }
}
