//! Synthetic cycling data with controllable degradation and domain shift.
//!
//! Each logged cycle is a constant-current charge across the battery's SOC
//! window. Open-circuit voltage follows a logistic template in SOC; the
//! measured voltage adds the ohmic drop `I·R` (resistance grows as the cell
//! fades), a fixed offset and Gaussian sensor noise. Fade shrinks usable
//! capacity, so the same SOC window takes less charge and less time.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datapipe::{
    build_segments, normalize_domain, write_cycling_csv, write_labels, write_meta, BatteryFiles,
    BatteryMeta, CycleRecord, CycleSample, DomainDataset, DomainMeta, PipelineConfig,
};
use crate::error::{Result, SkdanError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    /// Last cycle index; cycles `log_every, 2·log_every, …` up to it are logged.
    pub n_cycles: usize,
    pub log_every: usize,
    /// SOC range the battery is cycled over, percent.
    pub soc_window: (f64, f64),
    /// SOH(cycle) = 1 − fade_a · cycle^fade_b
    pub fade_a: f64,
    pub fade_b: f64,
    /// Standard deviation of additive voltage noise, volts.
    pub noise_std: f64,
    pub resistance_ohm: f64,
    /// Relative resistance increase per unit of lost SOH.
    pub resistance_growth: f64,
    pub nominal_capacity_ah: f64,
    /// Charge current as a multiple of nominal capacity.
    pub charge_rate_c: f64,
    pub voltage_range: (f64, f64),
    /// Slope of the logistic voltage template.
    pub steepness: f64,
    pub voltage_offset: f64,
    pub sample_period_s: f64,
    pub temperature_c: f64,
    pub discharge_rate_c: f64,
    pub dataset_name: String,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_cycles: 600,
            log_every: 20,
            soc_window: (0.0, 100.0),
            fade_a: 2e-4,
            fade_b: 1.0,
            noise_std: 1e-3,
            resistance_ohm: 0.05,
            resistance_growth: 2.0,
            nominal_capacity_ah: 1.5,
            charge_rate_c: 0.5,
            voltage_range: (3.4, 4.1),
            steepness: 6.0,
            voltage_offset: 0.0,
            sample_period_s: 30.0,
            temperature_c: 25.0,
            discharge_rate_c: 0.5,
            dataset_name: "synthetic".into(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn soh(&self, cycle: usize) -> f64 {
        1.0 - self.fade_a * (cycle as f64).powf(self.fade_b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fade_a >= 0.0) {
            return Err(SkdanError::Spec(format!(
                "fade coefficient must be ≥ 0, got {}",
                self.fade_a
            )));
        }
        if !(self.fade_b > 0.0) {
            return Err(SkdanError::Spec(format!(
                "fade exponent must be > 0, got {}",
                self.fade_b
            )));
        }
        if !(self.noise_std >= 0.0) {
            return Err(SkdanError::Spec(format!(
                "noise_std must be ≥ 0, got {}",
                self.noise_std
            )));
        }
        if self.n_cycles == 0 || self.log_every == 0 {
            return Err(SkdanError::Spec(
                "n_cycles and log_every must be positive".into(),
            ));
        }
        let (a, b) = self.soc_window;
        if !(0.0..=100.0).contains(&a) || !(0.0..=100.0).contains(&b) || a >= b {
            return Err(SkdanError::Spec(format!("invalid SOC window ({a}, {b})")));
        }
        if !(self.nominal_capacity_ah > 0.0
            && self.charge_rate_c > 0.0
            && self.sample_period_s > 0.0)
        {
            return Err(SkdanError::Spec(
                "capacity, charge rate and sample period must be positive".into(),
            ));
        }
        let end = self.soh(self.n_cycles);
        if !(end > 0.0) {
            return Err(SkdanError::Spec(format!(
                "SOH reaches {end} by cycle {}; it must stay above 0",
                self.n_cycles
            )));
        }
        Ok(())
    }

    pub fn meta(&self) -> BatteryMeta {
        BatteryMeta {
            nominal_capacity_ah: self.nominal_capacity_ah,
            voltage_range: [self.voltage_range.0, self.voltage_range.1],
            soc_range: [self.soc_window.0, self.soc_window.1],
            temperature_c: self.temperature_c,
            discharge_rate_c: self.discharge_rate_c,
            dataset_name: self.dataset_name.clone(),
        }
    }

    pub fn domain_meta(&self) -> DomainMeta {
        DomainMeta {
            soc_range: self.soc_window,
            temperature_c: self.temperature_c,
            discharge_rate_c: self.discharge_rate_c,
            dataset_name: self.dataset_name.clone(),
        }
    }

    /// Noise-free terminal voltage at `soc ∈ [0,1]` for a cell at `soh`.
    pub fn voltage(&self, soc: f64, soh: f64) -> f64 {
        let (vmin, vmax) = self.voltage_range;
        let current = self.charge_rate_c * self.nominal_capacity_ah;
        let r = self.resistance_ohm * (1.0 + self.resistance_growth * (1.0 - soh));
        vmin + (vmax - vmin) * logistic(self.steepness * (soc - 0.5))
            + current * r
            + self.voltage_offset
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Raw charge logs for one synthetic battery.
#[derive(Debug, Clone)]
pub struct SynthBattery {
    pub records: Vec<CycleRecord>,
    /// SOH per logged cycle.
    pub soh: BTreeMap<i64, f64>,
    pub meta: BatteryMeta,
}

impl SynthBattery {
    /// Writes `<prefix>.csv`, `<prefix>.meta.json` and `<prefix>.labels.csv`.
    pub fn write(&self, prefix: impl AsRef<Path>) -> Result<()> {
        let files = BatteryFiles::new(prefix);
        write_cycling_csv(&files.csv, &self.records)?;
        write_meta(&files.meta, &self.meta)?;
        write_labels(&files.labels, &self.soh, self.meta.nominal_capacity_ah)
    }
}

pub fn synth_battery(spec: &SynthSpec) -> Result<SynthBattery> {
    spec.validate()?;
    let mut rng = diffcore::rng::stream(spec.seed, 0x5e_17);
    let current = spec.charge_rate_c * spec.nominal_capacity_ah;
    let (w0, w1) = (spec.soc_window.0 / 100.0, spec.soc_window.1 / 100.0);
    let mut records = Vec::new();
    let mut soh = BTreeMap::new();
    for cycle in (spec.log_every..=spec.n_cycles).step_by(spec.log_every) {
        let s = spec.soh(cycle);
        let capacity = s * spec.nominal_capacity_ah;
        let duration_s = capacity * (w1 - w0) / current * 3600.0;
        let steps = (duration_s / spec.sample_period_s).floor() as usize;
        let mut times: Vec<f64> = (0..=steps)
            .map(|k| k as f64 * spec.sample_period_s)
            .collect();
        if duration_s - times[times.len() - 1] > 1e-6 * spec.sample_period_s {
            times.push(duration_s);
        } else {
            *times.last_mut().unwrap() = duration_s;
        }
        let noise = diffcore::rng::standard_normal(&mut rng, times.len());
        let samples = times
            .iter()
            .zip(noise)
            .map(|(&t, z)| {
                let soc = w0 + current * t / 3600.0 / capacity;
                CycleSample {
                    time_s: t,
                    voltage_v: spec.voltage(soc, s) + spec.noise_std * z,
                    current_a: current,
                }
            })
            .collect();
        records.push(CycleRecord::new(cycle as i64, samples));
        soh.insert(cycle as i64, s);
    }
    Ok(SynthBattery {
        records,
        soh,
        meta: spec.meta(),
    })
}

/// Labeled, normalized domain with one window per logged cycle spanning
/// the whole SOC range.
pub fn synth_domain(spec: &SynthSpec) -> Result<DomainDataset> {
    synth_domain_with(spec, &PipelineConfig::default(), 0)
}

pub fn synth_domain_with(
    spec: &SynthSpec,
    cfg: &PipelineConfig,
    battery_id: u32,
) -> Result<DomainDataset> {
    let raw = synth_raw_domain(spec, cfg, battery_id)?;
    normalize_domain(&raw)
}

fn synth_raw_domain(
    spec: &SynthSpec,
    cfg: &PipelineConfig,
    battery_id: u32,
) -> Result<DomainDataset> {
    let battery = synth_battery(spec)?;
    let segments = build_segments(
        &battery.records,
        &battery.meta,
        battery_id,
        Some(&battery.soh),
        cfg,
    )?;
    DomainDataset::new(segments, true, spec.domain_meta())
}

/// Source and target domains for an adaptation experiment.
#[derive(Debug, Clone)]
pub struct TransferPair {
    pub source: DomainDataset,
    pub target: DomainDataset,
    /// Target SOH in sample order, kept out of `target` for evaluation only.
    pub hidden_target_labels: Vec<f64>,
}

impl TransferPair {
    pub fn labeled_target(&self) -> Result<DomainDataset> {
        self.target.with_labels(&self.hidden_target_labels)
    }
}

/// Full-range labeled source cut into windows as deep as the target's SOC
/// span, and an unlabeled target.
pub fn synth_transfer_pair(
    source_spec: &SynthSpec,
    target_spec: &SynthSpec,
) -> Result<TransferPair> {
    source_spec.validate()?;
    target_spec.validate()?;
    if source_spec.soc_window != (0.0, 100.0) {
        return Err(SkdanError::Spec(format!(
            "source must cycle over the full range, got {:?}",
            source_spec.soc_window
        )));
    }
    let depth = target_spec.soc_window.1 - target_spec.soc_window.0;
    let source_cfg = PipelineConfig {
        window_dod: Some(depth),
        ..PipelineConfig::default()
    };
    let source = synth_domain_with(source_spec, &source_cfg, 0)?;
    let raw_target = synth_raw_domain(target_spec, &PipelineConfig::default(), 1)?;
    let hidden_target_labels = raw_target.labels().expect("synthetic target is labeled");
    let target = normalize_domain(&raw_target.without_labels())?;
    Ok(TransferPair {
        source,
        target,
        hidden_target_labels,
    })
}
