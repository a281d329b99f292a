//! Synthetic calibrated streams.
//!
//! Each instance draws `p_k = σ(logit(base_rate) + heterogeneity · z_k)` with
//! `z_k ~ N(0, 1)`, clamped to `[0.001, 0.999]`, and labels
//! `y_k ~ Bernoulli(p_k)` independently across classes. With a
//! miscalibration factor `m` the emitted probability is `clamp(m · p_k)`
//! while labels still follow `p_k`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::set_functions::{LabelSet, Sample, MAX_CLASSES};

pub const PROB_MIN: f64 = 0.001;
pub const PROB_MAX: f64 = 0.999;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    #[serde(alias = "k")]
    pub num_classes: usize,
    #[serde(default = "default_base_rate")]
    pub base_rate: f64,
    #[serde(default = "default_heterogeneity")]
    pub heterogeneity: f64,
    /// Multiplicative distortion of the emitted probabilities.
    #[serde(default)]
    pub miscalibration: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    pub n: usize,
}

fn default_base_rate() -> f64 {
    0.4
}

fn default_heterogeneity() -> f64 {
    2.0
}

impl GeneratorConfig {
    pub fn new(num_classes: usize, n: usize, seed: u64) -> Self {
        GeneratorConfig {
            num_classes,
            base_rate: default_base_rate(),
            heterogeneity: default_heterogeneity(),
            miscalibration: None,
            seed,
            n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.num_classes > MAX_CLASSES {
            return Err(Error::TooManyClasses {
                count: self.num_classes,
                limit: MAX_CLASSES,
            });
        }
        if !(self.base_rate > 0.0 && self.base_rate < 1.0) {
            return Err(Error::InvalidInput(format!(
                "base rate {} must lie in (0, 1)",
                self.base_rate
            )));
        }
        if !(self.heterogeneity.is_finite() && self.heterogeneity >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "heterogeneity {} must be finite and non-negative",
                self.heterogeneity
            )));
        }
        if let Some(m) = self.miscalibration {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "miscalibration factor {m} must be positive"
                )));
            }
        }
        Ok(())
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_MIN, PROB_MAX)
}

/// Infinite-length deterministic sample source.
#[derive(Debug, Clone)]
pub struct Generator {
    config: GeneratorConfig,
    center: f64,
    rng: ChaCha8Rng,
}

impl Generator {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Generator {
            center: logit(config.base_rate),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
        })
    }

    pub fn next_sample(&mut self) -> Sample {
        let k = self.config.num_classes;
        let mut probs = Vec::with_capacity(k);
        let mut labels = LabelSet::EMPTY;
        for class in 0..k {
            let p = if self.config.heterogeneity == 0.0 {
                self.config.base_rate
            } else {
                let z: f64 = self.rng.sample(StandardNormal);
                clamp_prob(sigmoid(self.center + self.config.heterogeneity * z))
            };
            if self.rng.random::<f64>() < p {
                labels = labels.with(class);
            }
            probs.push(match self.config.miscalibration {
                Some(m) => clamp_prob(m * p),
                None => p,
            });
        }
        Sample { probs, labels }
    }
}

impl Iterator for Generator {
    type Item = Sample;

    fn next(&mut self) -> Option<Sample> {
        Some(self.next_sample())
    }
}

/// The first `config.n` samples of the stream.
pub fn generate(config: &GeneratorConfig) -> Result<Vec<Sample>> {
    Ok(Generator::new(config.clone())?.take(config.n).collect())
}

/// `w_k = k` with class 0 counted as `K`.
pub fn default_class_weights(num_classes: usize) -> Vec<f64> {
    (0..num_classes)
        .map(|k| if k == 0 { num_classes as f64 } else { k as f64 })
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    #[test]
    fn weights() {
        let w = default_class_weights(10);
        assert_eq!(w, vec![10.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        assert_eq!(w[0], 10.0);
        assert_eq!(w[5], 5.0);
        assert_eq!(w.iter().sum::<f64>(), 55.0);
    }

    #[test]
    fn homogeneous_stream_has_expected_label_count() {
        let mut cfg = GeneratorConfig::new(10, 10_000, 3);
        cfg.heterogeneity = 0.0;
        let samples = generate(&cfg).unwrap();
        assert!(samples.iter().all(|s| s.probs == vec![0.4; 10]));
        let sizes: Vec<f64> = samples.iter().map(|s| s.labels.len() as f64).collect();
        let n = sizes.len() as f64;
        let mean = sizes.iter().sum::<f64>() / n;
        let var = sizes.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!((mean - 4.0).abs() <= 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn deterministic() {
        let cfg = GeneratorConfig::new(5, 500, 17);
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = GeneratorConfig {
            seed: 18,
            ..cfg.clone()
        };
        assert_ne!(generate(&cfg).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn probabilities_clamped() {
        let mut cfg = GeneratorConfig::new(8, 2000, 5);
        cfg.heterogeneity = 8.0;
        cfg.miscalibration = Some(3.0);
        for s in generate(&cfg).unwrap() {
            assert!(s.probs.iter().all(|&p| (PROB_MIN..=PROB_MAX).contains(&p)));
        }
    }

    /// Binomial check: within each decile of emitted probability the label
    /// frequency is within 3 standard errors of the mean emitted probability.
    pub(crate) fn decile_calibration_holds(samples: &[Sample]) -> bool {
        let mut buckets = vec![(0usize, 0.0f64, 0usize); 10];
        for s in samples {
            for (k, &p) in s.probs.iter().enumerate() {
                let b = ((p * 10.0) as usize).min(9);
                buckets[b].0 += 1;
                buckets[b].1 += p;
                buckets[b].2 += usize::from(s.labels.contains(k));
            }
        }
        buckets
            .iter()
            .filter(|b| b.0 >= 30)
            .all(|&(n, psum, hits)| {
                let n = n as f64;
                let pbar = psum / n;
                let se = (pbar * (1.0 - pbar) / n).sqrt();
                (hits as f64 / n - pbar).abs() <= 3.0 * se
            })
    }

    #[test]
    fn calibrated_by_decile() {
        let samples = generate(&GeneratorConfig::new(10, 10_000, 21)).unwrap();
        assert!(decile_calibration_holds(&samples));
    }

    #[test]
    fn miscalibration_breaks_decile_check() {
        let mut cfg = GeneratorConfig::new(10, 10_000, 21);
        cfg.miscalibration = Some(0.5);
        assert!(!decile_calibration_holds(&generate(&cfg).unwrap()));
    }

    #[test]
    fn rejects_bad_configs() {
        let base = GeneratorConfig::new(10, 10, 0);
        for bad in [
            GeneratorConfig {
                base_rate: 0.0,
                ..base.clone()
            },
            GeneratorConfig {
                base_rate: 1.0,
                ..base.clone()
            },
            GeneratorConfig {
                heterogeneity: -1.0,
                ..base.clone()
            },
            GeneratorConfig {
                miscalibration: Some(0.0),
                ..base.clone()
            },
            GeneratorConfig {
                num_classes: 0,
                ..base.clone()
            },
            GeneratorConfig {
                num_classes: 65,
                ..base
            },
        ] {
            assert!(generate(&bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn config_json_defaults() {
        let cfg: GeneratorConfig = serde_json::from_str(r#"{"k": 3, "n": 10}"#).unwrap();
        assert_eq!(cfg, GeneratorConfig::new(3, 10, 0));
    }
}
