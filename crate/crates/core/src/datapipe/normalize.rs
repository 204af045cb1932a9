use serde::{Deserialize, Serialize};

use super::{ChargeSegment, DomainDataset, CHANNEL_NAMES, N_CHANNELS};
use crate::error::{Result, SkdanError};

/// Per-channel min-max statistics of one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: [f64; N_CHANNELS],
    pub max: [f64; N_CHANNELS],
    /// Channels with `max == min`; they are mapped to zeros.
    pub constant: [bool; N_CHANNELS],
}

impl NormStats {
    pub fn fit(samples: &[ChargeSegment]) -> Result<Self> {
        if samples.is_empty() {
            return Err(SkdanError::Data("cannot normalize an empty domain".into()));
        }
        let mut min = [f64::INFINITY; N_CHANNELS];
        let mut max = [f64::NEG_INFINITY; N_CHANNELS];
        for s in samples {
            for c in 0..N_CHANNELS {
                for &x in s.channel(c) {
                    if !x.is_finite() {
                        return Err(SkdanError::Data(format!(
                            "non-finite {} value in battery {} cycle {}",
                            CHANNEL_NAMES[c], s.battery_id, s.cycle_index
                        )));
                    }
                    min[c] = min[c].min(x);
                    max[c] = max[c].max(x);
                }
            }
        }
        let constant = std::array::from_fn(|c| !(max[c] > min[c]));
        Ok(Self { min, max, constant })
    }

    pub fn scale(&self, c: usize, x: f64) -> f64 {
        if self.constant[c] {
            0.0
        } else {
            (x - self.min[c]) / (self.max[c] - self.min[c])
        }
    }

    pub fn unscale(&self, c: usize, x: f64) -> f64 {
        if self.constant[c] {
            self.min[c]
        } else {
            x * (self.max[c] - self.min[c]) + self.min[c]
        }
    }

    pub fn apply(&self, segment: &ChargeSegment) -> ChargeSegment {
        let mut out = segment.clone();
        for c in 0..N_CHANNELS {
            for x in out.channel_mut(c).iter_mut() {
                *x = self.scale(c, *x);
            }
        }
        out
    }

    pub fn invert(&self, segment: &ChargeSegment) -> ChargeSegment {
        let mut out = segment.clone();
        for c in 0..N_CHANNELS {
            for x in out.channel_mut(c).iter_mut() {
                *x = self.unscale(c, *x);
            }
        }
        out
    }
}

/// Min-max scales every channel over all samples of the domain.
///
/// A constant channel becomes all zeros and is flagged in the returned
/// statistics.
pub fn normalize_domain(dataset: &DomainDataset) -> Result<DomainDataset> {
    let stats = NormStats::fit(&dataset.samples)?;
    normalize_with(dataset, stats)
}

/// Applies precomputed statistics, e.g. fitted on a training subset only.
pub fn normalize_with(dataset: &DomainDataset, stats: NormStats) -> Result<DomainDataset> {
    if dataset.is_normalized() {
        return Err(SkdanError::Data("dataset is already normalized".into()));
    }
    for (c, name) in CHANNEL_NAMES.iter().enumerate() {
        if stats.constant[c] {
            log::warn!(
                "channel {name} is constant ({}); scaled to zeros",
                stats.min[c]
            );
        }
    }
    Ok(DomainDataset {
        samples: dataset.samples.iter().map(|s| stats.apply(s)).collect(),
        labeled: dataset.labeled,
        stats: Some(stats),
        meta: dataset.meta.clone(),
    })
}
