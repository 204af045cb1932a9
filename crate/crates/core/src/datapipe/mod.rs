//! Charge-curve data pipeline.
//!
//! Raw cycling logs go through four stages:
//!
//! 1. [`parse_cycling_csv`] groups rows into [`CycleRecord`]s and tags the
//!    constant-current charge phase.
//! 2. [`segment_cycles`] cuts the CC phase into SOC windows of a fixed depth.
//! 3. [`resample_segment`] puts each window on a 160-point grid.
//! 4. [`compute_features`] derives the `v`, `Δv`, `Δq` and IC channels.
//!
//! Segments from one domain are then min-max scaled per channel by
//! [`normalize_domain`].

pub(crate) mod bundle;
mod corpus;
mod ingest;
mod kde;
mod normalize;
mod segment;

use diffcore::Tensor;
use serde::{Deserialize, Serialize};

pub use bundle::{read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use corpus::{discover_batteries, load_domain, BatteryFiles};
pub use ingest::{
    parse_cycling_csv, read_labels, read_meta, write_cycling_csv, write_labels, write_meta,
    BatteryMeta,
};
pub use kde::{
    kde_density, kde_export, silverman_bandwidth, write_kde_csv, KdeCurve, MIN_KDE_GRID,
};
pub use normalize::{normalize_domain, normalize_with, NormStats};
pub use segment::{
    build_segments, compute_features, resample_segment, segment_cycles, FeatureChannels,
    PipelineConfig, RawSegment,
};

/// Points per resampled charge segment.
pub const SEGMENT_LEN: usize = 160;
/// Feature channels per point: `v`, `Δv`, `Δq`, IC.
pub const N_CHANNELS: usize = 4;
pub const CHANNEL_NAMES: [&str; N_CHANNELS] = ["v", "dv", "dq", "ic"];

/// Relative deviation from the median charge current tolerated in the CC phase.
pub const CC_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    ChargeCc,
    ChargeCv,
    Discharge,
    Rest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleSample {
    pub time_s: f64,
    pub voltage_v: f64,
    pub current_a: f64,
}

/// All logged samples of one cycle, in time order, with a phase tag each.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub cycle_index: i64,
    pub samples: Vec<CycleSample>,
    pub phases: Vec<Phase>,
}

impl CycleRecord {
    /// Tags phases from the current sign and its spread around the median
    /// charge current.
    pub fn new(cycle_index: i64, samples: Vec<CycleSample>) -> Self {
        let phases = tag_phases(&samples);
        Self {
            cycle_index,
            samples,
            phases,
        }
    }

    /// Longest contiguous run of CC-charge samples (first one on ties).
    pub fn cc_range(&self) -> Option<std::ops::Range<usize>> {
        let mut best: Option<std::ops::Range<usize>> = None;
        let mut i = 0;
        while i < self.phases.len() {
            if self.phases[i] != Phase::ChargeCc {
                i += 1;
                continue;
            }
            let start = i;
            while i < self.phases.len() && self.phases[i] == Phase::ChargeCc {
                i += 1;
            }
            if best.as_ref().is_none_or(|b| i - start > b.len()) {
                best = Some(start..i);
            }
        }
        best
    }

    pub fn cc_samples(&self) -> &[CycleSample] {
        self.cc_range().map_or(&[], |r| &self.samples[r])
    }
}

fn tag_phases(samples: &[CycleSample]) -> Vec<Phase> {
    let mut charging: Vec<f64> = samples
        .iter()
        .map(|s| s.current_a)
        .filter(|&i| i > 0.0)
        .collect();
    let median = if charging.is_empty() {
        0.0
    } else {
        charging.sort_by(f64::total_cmp);
        let n = charging.len();
        if n % 2 == 1 {
            charging[n / 2]
        } else {
            0.5 * (charging[n / 2 - 1] + charging[n / 2])
        }
    };
    samples
        .iter()
        .map(|s| {
            if s.current_a > 0.0 {
                if ((s.current_a - median) / median).abs() < CC_TOLERANCE {
                    Phase::ChargeCc
                } else {
                    Phase::ChargeCv
                }
            } else if s.current_a < 0.0 {
                Phase::Discharge
            } else {
                Phase::Rest
            }
        })
        .collect()
}

/// One resampled charge window with its four feature channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeSegment {
    pub v: Vec<f64>,
    pub dv: Vec<f64>,
    pub dq: Vec<f64>,
    pub ic: Vec<f64>,
    /// SOC window in percent.
    pub soc_window: (f64, f64),
    pub cycle_index: i64,
    pub battery_id: u32,
    pub soh_label: Option<f64>,
}

impl ChargeSegment {
    pub fn channel(&self, c: usize) -> &[f64] {
        match c {
            0 => &self.v,
            1 => &self.dv,
            2 => &self.dq,
            3 => &self.ic,
            _ => panic!("channel index {c} out of range"),
        }
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut Vec<f64> {
        match c {
            0 => &mut self.v,
            1 => &mut self.dv,
            2 => &mut self.dq,
            3 => &mut self.ic,
            _ => panic!("channel index {c} out of range"),
        }
    }

    /// `160×4` input matrix, one row per point.
    pub fn to_input(&self) -> Tensor {
        let n = self.v.len();
        let mut data = Vec::with_capacity(n * N_CHANNELS);
        for t in 0..n {
            data.extend_from_slice(&[self.v[t], self.dv[t], self.dq[t], self.ic[t]]);
        }
        Tensor::new(vec![n, N_CHANNELS], data).expect("channels share a length")
    }
}

/// Operating conditions shared by every sample of a domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainMeta {
    pub soc_range: (f64, f64),
    pub temperature_c: f64,
    pub discharge_rate_c: f64,
    pub dataset_name: String,
}

impl Default for DomainMeta {
    fn default() -> Self {
        Self {
            soc_range: (0.0, 100.0),
            temperature_c: 25.0,
            discharge_rate_c: 0.5,
            dataset_name: String::new(),
        }
    }
}

/// Source (labeled) or target (unlabeled) collection of segments.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub samples: Vec<ChargeSegment>,
    pub labeled: bool,
    /// Present once the dataset has been normalized.
    pub stats: Option<NormStats>,
    pub meta: DomainMeta,
}

impl DomainDataset {
    pub fn new(
        samples: Vec<ChargeSegment>,
        labeled: bool,
        meta: DomainMeta,
    ) -> crate::Result<Self> {
        if labeled {
            if let Some(s) = samples.iter().find(|s| s.soh_label.is_none()) {
                return Err(crate::SkdanError::Data(format!(
                    "labeled domain has an unlabeled sample (battery {}, cycle {})",
                    s.battery_id, s.cycle_index
                )));
            }
        }
        Ok(Self {
            samples,
            labeled,
            stats: None,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.stats.is_some()
    }

    /// Model inputs only; labels never leave through this path.
    pub fn inputs(&self) -> Vec<Tensor> {
        self.samples.iter().map(ChargeSegment::to_input).collect()
    }

    pub fn labels(&self) -> Option<Vec<f64>> {
        self.samples.iter().map(|s| s.soh_label).collect()
    }

    /// Copy with every label removed.
    pub fn without_labels(&self) -> Self {
        let mut out = self.clone();
        out.labeled = false;
        for s in &mut out.samples {
            s.soh_label = None;
        }
        out
    }

    /// Copy with `labels` attached in sample order.
    pub fn with_labels(&self, labels: &[f64]) -> crate::Result<Self> {
        if labels.len() != self.samples.len() {
            return Err(crate::SkdanError::Data(format!(
                "{} labels for {} samples",
                labels.len(),
                self.samples.len()
            )));
        }
        let mut out = self.clone();
        out.labeled = true;
        for (s, &y) in out.samples.iter_mut().zip(labels) {
            s.soh_label = Some(y);
        }
        Ok(out)
    }

    /// Sub-dataset of the given sample indices (statistics kept).
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            labeled: self.labeled,
            stats: self.stats.clone(),
            meta: self.meta.clone(),
        }
    }

    /// Distinct battery ids in ascending order.
    pub fn battery_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.samples.iter().map(|s| s.battery_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// All values of one channel across every sample.
    pub fn channel_values(&self, c: usize) -> Vec<f64> {
        self.samples
            .iter()
            .flat_map(|s| s.channel(c).iter().copied())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(t: f64, i: f64) -> CycleSample {
        CycleSample {
            time_s: t,
            voltage_v: 3.7,
            current_a: i,
        }
    }

    #[test]
    fn phases_from_current() {
        let rec = CycleRecord::new(
            1,
            vec![
                s(0.0, 0.75),
                s(1.0, 0.76),
                s(2.0, 0.74),
                s(3.0, 0.3),
                s(4.0, 0.0),
                s(5.0, -0.7),
            ],
        );
        assert_eq!(
            rec.phases,
            vec![
                Phase::ChargeCc,
                Phase::ChargeCc,
                Phase::ChargeCc,
                Phase::ChargeCv,
                Phase::Rest,
                Phase::Discharge
            ]
        );
        assert_eq!(rec.cc_range(), Some(0..3));
    }

    #[test]
    fn labeled_domain_requires_labels() {
        let seg = ChargeSegment {
            v: vec![0.0; 2],
            dv: vec![0.0; 2],
            dq: vec![0.0; 2],
            ic: vec![0.0; 2],
            soc_window: (0.0, 100.0),
            cycle_index: 1,
            battery_id: 0,
            soh_label: None,
        };
        assert!(DomainDataset::new(vec![seg.clone()], true, DomainMeta::default()).is_err());
        let d = DomainDataset::new(vec![seg], false, DomainMeta::default()).unwrap();
        assert!(d.labels().is_none());
        let l = d.with_labels(&[0.9]).unwrap();
        assert_eq!(l.labels(), Some(vec![0.9]));
        assert!(l.without_labels().samples[0].soh_label.is_none());
    }
}
