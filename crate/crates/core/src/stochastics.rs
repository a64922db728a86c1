//! Duration distributions over positive integer cycles, fitted to a first and
//! second moment, and reproducible random streams to sample them from.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const MOMENT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("mean {0} must be at least 1 cycle")]
    MeanBelowOne(f64),
    #[error("second moment {second_moment} is below mean^2 = {}", .mean * .mean)]
    NegativeVariance { mean: f64, second_moment: f64 },
    #[error("no distribution on positive integers has mean {mean} and second moment {second_moment}")]
    Infeasible { mean: f64, second_moment: f64 },
}

/// First two moments of a duration, in cycles and cycles².
///
/// When the second moment is left out the duration is geometric with the
/// given mean, so its implied second moment is `2m² − m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentPair {
    pub mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub second_moment: Option<f64>,
}

impl MomentPair {
    pub fn new(mean: f64, second_moment: f64) -> Self {
        Self { mean, second_moment: Some(second_moment) }
    }

    /// Mean only; the geometric family supplies the second moment.
    pub fn mean_only(mean: f64) -> Self {
        Self { mean, second_moment: None }
    }

    pub fn second_moment(&self) -> f64 {
        self.second_moment
            .unwrap_or(2.0 * self.mean * self.mean - self.mean)
    }

    pub fn variance(&self) -> f64 {
        self.second_moment() - self.mean * self.mean
    }

    pub fn validate(&self) -> Result<(), FitError> {
        if !(self.mean >= 1.0) || !self.mean.is_finite() {
            return Err(FitError::MeanBelowOne(self.mean));
        }
        let m2 = self.second_moment();
        if !m2.is_finite() || m2 < self.mean * self.mean * (1.0 - MOMENT_EPS) {
            return Err(FitError::NegativeVariance { mean: self.mean, second_moment: m2 });
        }
        Ok(())
    }
}

impl<'de> Deserialize<'de> for MomentPair {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Full {
            mean: f64,
            #[serde(default)]
            second_moment: Option<f64>,
        }
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Mean(f64),
            Full(Full),
        }
        Ok(match Repr::deserialize(de)? {
            Repr::Mean(mean) => MomentPair::mean_only(mean),
            Repr::Full(f) => MomentPair { mean: f.mean, second_moment: f.second_moment },
        })
    }
}

/// A distribution over durations `1, 2, 3, ...` cycles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DurationDistribution {
    Deterministic { value: u64 },
    /// `P(k) = (1 − p)^(k−1) p` for `k ≥ 1`; mean `1/p`.
    Geometric { p: f64 },
    /// `low` with probability `p_low`, otherwise `high`.
    TwoPointMixture { low: u64, high: u64, p_low: f64 },
}

impl DurationDistribution {
    pub fn geometric(mean: f64) -> Result<Self, FitError> {
        if !(mean >= 1.0) {
            return Err(FitError::MeanBelowOne(mean));
        }
        Ok(Self::Geometric { p: 1.0 / mean })
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Deterministic { value } => value as f64,
            Self::Geometric { p } => 1.0 / p,
            Self::TwoPointMixture { low, high, p_low } => {
                p_low * low as f64 + (1.0 - p_low) * high as f64
            }
        }
    }

    pub fn second_moment(&self) -> f64 {
        match *self {
            Self::Deterministic { value } => (value * value) as f64,
            Self::Geometric { p } => (2.0 - p) / (p * p),
            Self::TwoPointMixture { low, high, p_low } => {
                p_low * (low * low) as f64 + (1.0 - p_low) * (high * high) as f64
            }
        }
    }

    /// Per-cycle completion probability when the distribution is memoryless.
    ///
    /// A point mass at one cycle is the geometric law with `p = 1`.
    pub fn completion_probability(&self) -> Option<f64> {
        match *self {
            Self::Geometric { p } => Some(p),
            Self::Deterministic { value: 1 } => Some(1.0),
            _ => None,
        }
    }

    pub fn sample(&self, stream: &mut RngStream) -> u64 {
        match *self {
            Self::Deterministic { value } => value,
            Self::Geometric { p } => {
                if p >= 1.0 {
                    1
                } else {
                    // Counts failures before the first success.
                    let g = Geometric::new(p).expect("validated geometric parameter");
                    g.sample(&mut stream.rng) + 1
                }
            }
            Self::TwoPointMixture { low, high, p_low } => {
                if stream.rng.random::<f64>() < p_low {
                    low
                } else {
                    high
                }
            }
        }
    }
}

/// Result of [`fit_two_moment`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fit {
    pub distribution: DurationDistribution,
    /// Fitted second moment minus target; zero for exact fits.
    pub second_moment_error: f64,
}

impl Fit {
    pub fn is_exact(&self) -> bool {
        self.second_moment_error.abs() <= MOMENT_EPS * (1.0 + self.distribution.second_moment())
    }
}

fn near_integer(x: f64) -> Option<u64> {
    let r = x.round();
    ((x - r).abs() <= MOMENT_EPS * x.abs().max(1.0) && r >= 1.0).then_some(r as u64)
}

/// Fits a distribution on positive integers with the requested mean.
///
/// Zero variance gives a point mass, the geometric relation `m2 = 2m² − m`
/// gives a geometric law, and everything else a two-point mixture `{a, b}`
/// with `a < m < b`. The lowest feasible `a` is preferred, so `{1, b}` is used
/// whenever `b` comes out integral. If no integral pair matches both moments
/// the mean is still matched exactly and the closest second moment is
/// returned together with its error.
pub fn fit_two_moment(m: &MomentPair) -> Result<Fit, FitError> {
    m.validate()?;
    let mean = m.mean;
    let m2 = m.second_moment();
    let var = (m2 - mean * mean).max(0.0);
    let tol = MOMENT_EPS * m2.max(1.0);

    if var <= tol {
        return match near_integer(mean) {
            Some(value) => Ok(Fit {
                distribution: DurationDistribution::Deterministic { value },
                second_moment_error: (value * value) as f64 - m2,
            }),
            None => Err(FitError::Infeasible { mean, second_moment: m2 }),
        };
    }
    if (m2 - (2.0 * mean * mean - mean)).abs() <= tol {
        let distribution = DurationDistribution::geometric(mean)?;
        return Ok(Fit {
            second_moment_error: distribution.second_moment() - m2,
            distribution,
        });
    }
    if mean <= 1.0 + MOMENT_EPS {
        // Any law on {1, 2, ...} with mean 1 is the point mass at 1.
        return Err(FitError::Infeasible { mean, second_moment: m2 });
    }

    // For a pair {a, b} around the mean, w(a) = (b − m)/(b − a) and the
    // variance is (m − a)(b − m).
    let pair = |low: u64, high: u64| {
        let p_low = (high as f64 - mean) / (high - low) as f64;
        DurationDistribution::TwoPointMixture { low, high, p_low }
    };
    let lows = 1..(mean.ceil() as u64).max(2);
    for low in lows.clone() {
        if low as f64 >= mean {
            break;
        }
        let high = mean + var / (mean - low as f64);
        if let Some(high) = near_integer(high) {
            if high as f64 > mean {
                let distribution = pair(low, high);
                return Ok(Fit {
                    second_moment_error: distribution.second_moment() - m2,
                    distribution,
                });
            }
        }
    }

    let mut best: Option<Fit> = None;
    for low in lows {
        if low as f64 >= mean {
            break;
        }
        let ideal = mean + var / (mean - low as f64);
        let candidates = [ideal.floor() as u64, ideal.ceil() as u64];
        for high in candidates {
            if (high as f64) <= mean {
                continue;
            }
            let distribution = pair(low, high);
            let err = distribution.second_moment() - m2;
            if best.is_none_or(|b| err.abs() < b.second_moment_error.abs()) {
                best = Some(Fit { distribution, second_moment_error: err });
            }
        }
    }
    best.ok_or(FitError::Infeasible { mean, second_moment: m2 })
}

/// What a stream's draws are used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Compute = 0,
    LocalConnect = 1,
    GlobalConnect = 2,
    RequestKind = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub pe: usize,
    pub purpose: Purpose,
}

impl StreamId {
    fn word(&self) -> u64 {
        (self.pe as u64) << 8 | self.purpose as u64
    }
}

/// Independent ChaCha stream keyed by a run seed and a `(pe, purpose)` id.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    id: StreamId,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id.word());
        Self { seed, id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.rng.random::<f64>() < p
    }
}

/// SplitMix64 finaliser, used to derive per-point seeds from a run seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
