use super::Objective;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            epochs: 1000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("adam learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument("adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Runs `cfg.epochs` full-gradient Adam steps from `theta0` and returns the
/// final iterate.
///
/// A non-finite objective value or gradient aborts the run.
pub fn adam<O: Objective>(objective: &mut O, theta0: &[f64], cfg: &AdamConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = theta0.len();
    let mut theta = theta0.to_vec();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let (mut b1t, mut b2t) = (1.0, 1.0);
    for epoch in 0..cfg.epochs {
        let (f, g) = objective.eval(&theta)?;
        if !f.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("adam epoch {epoch}: objective {f}")));
        }
        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        for k in 0..n {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let mhat = m[k] / (1.0 - b1t);
            let vhat = v[k] / (1.0 - b2t);
            theta[k] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shifted_quadratic(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = x[0] - 3.0;
        Ok((0.5 * d * d, vec![d]))
    }

    #[test]
    fn converges_to_analytic_minimizer() {
        let cfg = AdamConfig {
            learning_rate: 0.01,
            epochs: 2000,
            ..AdamConfig::default()
        };
        let th = adam(&mut shifted_quadratic, &[0.0], &cfg).unwrap();
        assert!((th[0] - 3.0).abs() <= 1e-3, "got {}", th[0]);
    }

    #[test]
    fn stays_put_at_a_stationary_start() {
        let th = adam(&mut shifted_quadratic, &[3.0], &AdamConfig::default()).unwrap();
        assert_eq!(th, vec![3.0]);
    }

    #[test]
    fn is_deterministic() {
        let cfg = AdamConfig {
            epochs: 50,
            ..AdamConfig::default()
        };
        let a = adam(&mut shifted_quadratic, &[-1.0], &cfg).unwrap();
        let b = adam(&mut shifted_quadratic, &[-1.0], &cfg).unwrap();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut bad = |_: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((f64::NAN, vec![0.0])) };
        assert!(matches!(
            adam(&mut bad, &[0.0], &AdamConfig::default()),
            Err(Error::NonFinite(_))
        ));
    }
}
