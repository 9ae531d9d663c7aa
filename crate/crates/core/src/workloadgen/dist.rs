//! Duration and inter-arrival distributions, in seconds.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("cannot parse distribution {0:?}: {1}")]
    Parse(String, String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DistributionSpec {
    Normal { mu: f64, sigma: f64 },
    ExpWeibull { k: f64, lambda: f64, alpha: f64 },
    JohnsonSu { gamma: f64, delta: f64, xi: f64, lambda: f64 },
    Empirical(Vec<f64>),
}

fn positive(name: &str, v: f64) -> Result<(), DistError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(DistError::Param(format!("{name} must be a positive number, got {v}")))
    }
}

fn finite(name: &str, v: f64) -> Result<(), DistError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(DistError::Param(format!("{name} must be finite")))
    }
}

/// Inverse CDF of the exponentiated Weibull distribution.
pub fn exp_weibull_quantile(k: f64, lambda: f64, alpha: f64, u: f64) -> f64 {
    lambda * (-(1.0 - u.powf(1.0 / alpha)).ln()).powf(1.0 / k)
}

impl DistributionSpec {
    pub fn normal(mu: f64, sigma: f64) -> Result<Self, DistError> {
        let d = DistributionSpec::Normal { mu, sigma };
        d.validate()?;
        Ok(d)
    }

    pub fn exp_weibull(k: f64, lambda: f64, alpha: f64) -> Result<Self, DistError> {
        let d = DistributionSpec::ExpWeibull { k, lambda, alpha };
        d.validate()?;
        Ok(d)
    }

    pub fn johnson_su(gamma: f64, delta: f64, xi: f64, lambda: f64) -> Result<Self, DistError> {
        let d = DistributionSpec::JohnsonSu { gamma, delta, xi, lambda };
        d.validate()?;
        Ok(d)
    }

    pub fn empirical(samples: Vec<f64>) -> Result<Self, DistError> {
        let d = DistributionSpec::Empirical(samples);
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), DistError> {
        match *self {
            DistributionSpec::Normal { mu, sigma } => {
                finite("mu", mu)?;
                positive("sigma", sigma)?;
                // Resampling to positive values must terminate in practice.
                if mu / sigma < -6.0 {
                    return Err(DistError::Param("normal puts almost no mass above zero".into()));
                }
                Ok(())
            }
            DistributionSpec::ExpWeibull { k, lambda, alpha } => {
                positive("shape k", k)?;
                positive("scale lambda", lambda)?;
                positive("exponent alpha", alpha)
            }
            DistributionSpec::JohnsonSu { gamma, delta, xi, lambda } => {
                finite("gamma", gamma)?;
                finite("xi", xi)?;
                positive("delta", delta)?;
                positive("lambda", lambda)?;
                // P(X > 0) must not be vanishing.
                let z0 = gamma + delta * (-xi / lambda).asinh();
                if z0 > 6.0 {
                    return Err(DistError::Param("johnson_su puts almost no mass above zero".into()));
                }
                Ok(())
            }
            DistributionSpec::Empirical(ref s) => {
                if s.is_empty() {
                    return Err(DistError::Param("empirical needs at least one sample".into()));
                }
                for &v in s {
                    positive("empirical sample", v)?;
                }
                Ok(())
            }
        }
    }

    /// One strictly positive draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let x = match self {
                DistributionSpec::Normal { mu, sigma } => {
                    let z: f64 = rng.sample(StandardNormal);
                    mu + sigma * z
                }
                DistributionSpec::ExpWeibull { k, lambda, alpha } => {
                    exp_weibull_quantile(*k, *lambda, *alpha, rng.random::<f64>())
                }
                DistributionSpec::JohnsonSu { gamma, delta, xi, lambda } => {
                    let z: f64 = rng.sample(StandardNormal);
                    xi + lambda * ((z - gamma) / delta).sinh()
                }
                DistributionSpec::Empirical(s) => s[rng.random_range(0..s.len())],
            };
            if x > 0.0 && x.is_finite() {
                return x;
            }
        }
    }

    /// Parses literals such as `exp_weibull(0.9, 300, 2.1)` or
    /// `empirical(120, 300, 610)`.
    pub fn parse(text: &str) -> Result<Self, DistError> {
        let err = |why: &str| DistError::Parse(text.to_string(), why.to_string());
        let t = text.trim();
        let open = t.find('(').ok_or_else(|| err("expected name(args)"))?;
        if !t.ends_with(')') {
            return Err(err("missing closing parenthesis"));
        }
        let name = t[..open].trim();
        let args: Vec<f64> = t[open + 1..t.len() - 1]
            .split(',')
            .map(str::trim)
            .filter(|a| !a.is_empty())
            .map(|a| a.parse::<f64>().map_err(|_| err(&format!("bad number {a:?}"))))
            .collect::<Result<_, _>>()?;
        let want = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(err(&format!("{name} takes {n} parameters, got {}", args.len())))
            }
        };
        let d = match name {
            "normal" => {
                want(2)?;
                DistributionSpec::normal(args[0], args[1])
            }
            "exp_weibull" => {
                want(3)?;
                DistributionSpec::exp_weibull(args[0], args[1], args[2])
            }
            "johnson_su" => {
                want(4)?;
                DistributionSpec::johnson_su(args[0], args[1], args[2], args[3])
            }
            "empirical" => DistributionSpec::empirical(args),
            other => return Err(err(&format!("unknown distribution {other:?}"))),
        };
        d.map_err(|e| err(&e.to_string()))
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistributionSpec::Normal { mu, sigma } => write!(f, "normal({mu}, {sigma})"),
            DistributionSpec::ExpWeibull { k, lambda, alpha } => write!(f, "exp_weibull({k}, {lambda}, {alpha})"),
            DistributionSpec::JohnsonSu { gamma, delta, xi, lambda } => {
                write!(f, "johnson_su({gamma}, {delta}, {xi}, {lambda})")
            }
            DistributionSpec::Empirical(s) => {
                let parts: Vec<String> = s.iter().map(|v| v.to_string()).collect();
                write!(f, "empirical({})", parts.join(", "))
            }
        }
    }
}

/// Builds an empirical resampler, optionally rescaled so its mean equals
/// `target_mean` (shape is kept since scaling is multiplicative).
pub fn fit_empirical(samples: &[f64], target_mean: Option<f64>) -> Result<DistributionSpec, DistError> {
    DistributionSpec::empirical(samples.to_vec())?;
    let mut out = samples.to_vec();
    if let Some(target) = target_mean {
        positive("target mean", target)?;
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let factor = target / mean;
        for v in &mut out {
            *v *= factor;
        }
    }
    DistributionSpec::empirical(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exponential_special_case() {
        assert_relative_eq!(exp_weibull_quantile(1.0, 1.0, 1.0, 0.5), 0.5f64.ln().abs(), epsilon = 1e-12);
    }

    #[test]
    fn parse_and_display_round_trip() {
        for lit in ["normal(1800, 600)", "exp_weibull(0.9, 300, 2.1)", "johnson_su(0, 1, 7, 3)", "empirical(1, 2.5)"] {
            let d = DistributionSpec::parse(lit).unwrap();
            assert_eq!(d.to_string(), lit);
        }
        assert!(DistributionSpec::parse("normal(1)").is_err());
        assert!(DistributionSpec::parse("normal(1, -2)").is_err());
        assert!(DistributionSpec::parse("gamma(1, 2)").is_err());
        assert!(DistributionSpec::parse("empirical()").is_err());
        assert!(DistributionSpec::parse("empirical(3, 0)").is_err());
        assert!(DistributionSpec::parse("exp_weibull 1 2 3").is_err());
    }

    #[test]
    fn draws_are_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = DistributionSpec::normal(1.0, 5.0).unwrap();
        assert!((0..10_000).all(|_| d.sample(&mut rng) > 0.0));
        let j = DistributionSpec::johnson_su(0.0, 1.0, 1.0, 3.0).unwrap();
        assert!((0..10_000).all(|_| j.sample(&mut rng) > 0.0));
    }

    #[test]
    fn empirical_scaling() {
        assert_eq!(fit_empirical(&[600.0], Some(600.0)).unwrap(), DistributionSpec::Empirical(vec![600.0]));
        assert_eq!(
            fit_empirical(&[100.0, 300.0], Some(600.0)).unwrap(),
            DistributionSpec::Empirical(vec![300.0, 900.0])
        );
        assert_eq!(fit_empirical(&[5.0, 7.0], None).unwrap(), DistributionSpec::Empirical(vec![5.0, 7.0]));
        assert!(fit_empirical(&[1.0, -1.0], Some(10.0)).is_err());
        assert!(fit_empirical(&[], None).is_err());
    }
}
