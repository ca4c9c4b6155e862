use crate::error::{Error, Result};

fn check_pair(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::Shape(format!("{} targets against {} predictions", y.len(), yhat.len())));
    }
    if y.len() < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 values, got {}", y.len())));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `1 - SS_res / SS_tot` around the mean of `y`. Can be negative.
pub fn explained_variance(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let m = mean(y);
    let ss_tot: f64 = y.iter().map(|v| (v - m).powi(2)).sum();
    if ss_tot <= 0.0 {
        return Err(Error::Degenerate("targets have zero variance".into()));
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Sample Pearson correlation.
pub fn pearson(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let (my, mh) = (mean(y), mean(yhat));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in y.iter().zip(yhat) {
        sxy += (a - my) * (b - mh);
        sxx += (a - my).powi(2);
        syy += (b - mh).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::Degenerate("correlation needs positive variance in both inputs".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::stream_rng;
    use rand::Rng;

    #[test]
    fn ev_examples() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(explained_variance(&y, &y).unwrap(), 1.0);
        assert_eq!(explained_variance(&y, &[2.0; 3]).unwrap(), 0.0);
        assert!((explained_variance(&y, &[1.0, 2.0, 4.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(explained_variance(&[1.0, 2.0], &[5.0, -5.0]).unwrap() < 0.0);
        assert!(matches!(explained_variance(&[2.0; 3], &y), Err(Error::Degenerate(_))));
    }

    #[test]
    fn pearson_examples() {
        let y = [1.0, 2.0, 3.0];
        assert!((pearson(&y, &y).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&y, &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((pearson(&y, &[1.0, 1.0, 2.0]).unwrap() - 3f64.sqrt() / 2.0).abs() < 1e-12);
        assert!(pearson(&y, &[1.0; 3]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    /// Two-pass definitions written out independently of the functions above.
    #[test]
    fn agree_with_textbook_formulas() {
        let mut rng = stream_rng(4, 0);
        for _ in 0..1000 {
            let n = rng.random_range(2..40);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let h: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let nf = n as f64;
            let my = y.iter().sum::<f64>() / nf;
            let mh = h.iter().sum::<f64>() / nf;
            let var_y = y.iter().map(|v| (v - my) * (v - my)).sum::<f64>() / (nf - 1.0);
            let var_h = h.iter().map(|v| (v - mh) * (v - mh)).sum::<f64>() / (nf - 1.0);
            let cov = (0..n).map(|i| (y[i] - my) * (h[i] - mh)).sum::<f64>() / (nf - 1.0);
            let mse = (0..n).map(|i| (y[i] - h[i]).powi(2)).sum::<f64>() / nf;
            let ev = 1.0 - mse / (var_y * (nf - 1.0) / nf);
            assert!((explained_variance(&y, &h).unwrap() - ev).abs() < 1e-9);
            assert!((pearson(&y, &h).unwrap() - cov / (var_y * var_h).sqrt()).abs() < 1e-9);
        }
    }
}
