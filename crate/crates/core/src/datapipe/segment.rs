use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{BatteryMeta, ChargeSegment, CycleRecord, SEGMENT_LEN};
use crate::error::{Result, SkdanError};

/// Below this voltage step the IC quotient is considered degenerate.
const IC_MIN_DV: f64 = 1e-9;
const SOC_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Window depth in percent SOC; `None` uses the battery's whole SOC span.
    pub window_dod: Option<f64>,
    /// Window step in percent SOC.
    pub step: f64,
    /// Centered 5-point moving average on the IC channel.
    pub ic_smoothing: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window_dod: None,
            step: 10.0,
            ic_smoothing: false,
        }
    }
}

/// A slice of the CC phase covering one SOC window, before resampling.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSegment {
    pub time_s: Vec<f64>,
    pub voltage_v: Vec<f64>,
    /// Charge accumulated since the start of the CC phase, Ah.
    pub charge_ah: Vec<f64>,
    pub soc_window: (f64, f64),
    pub cycle_index: i64,
}

/// Splits the CC phase of a cycle into sliding SOC windows.
///
/// Position along the curve is the fraction of CC charge delivered so far,
/// mapped linearly onto `soc_range` (percent). Windows start at
/// `soc_range.0` and advance by `step` while they fit inside the range.
pub fn segment_cycles(
    record: &CycleRecord,
    soc_range: (f64, f64),
    window_dod: f64,
    step: f64,
) -> Result<Vec<RawSegment>> {
    if !(window_dod > 0.0 && window_dod <= 100.0) {
        return Err(SkdanError::Config(format!(
            "window depth {window_dod} outside (0, 100]"
        )));
    }
    if !(step > 0.0) {
        return Err(SkdanError::Config(format!(
            "window step must be positive, got {step}"
        )));
    }
    let cc = record.cc_samples();
    if cc.len() < 2 {
        return Ok(Vec::new());
    }
    let mut charge = Vec::with_capacity(cc.len());
    charge.push(0.0);
    for w in cc.windows(2) {
        let dt_h = (w[1].time_s - w[0].time_s) / 3600.0;
        let prev = *charge.last().unwrap();
        charge.push(prev + 0.5 * (w[0].current_a + w[1].current_a) * dt_h);
    }
    let total = *charge.last().unwrap();
    if !(total > 0.0) {
        return Ok(Vec::new());
    }
    let (s0, s1) = soc_range;
    let soc: Vec<f64> = charge.iter().map(|q| s0 + q / total * (s1 - s0)).collect();

    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let start = s0 + k as f64 * step;
        let end = start + window_dod;
        if end > s1 + SOC_EPS {
            break;
        }
        let end = end.min(s1);
        let mut seg = RawSegment {
            time_s: Vec::new(),
            voltage_v: Vec::new(),
            charge_ah: Vec::new(),
            soc_window: (start, end),
            cycle_index: record.cycle_index,
        };
        let mut push = |t: f64, v: f64, q: f64| {
            seg.time_s.push(t);
            seg.voltage_v.push(v);
            seg.charge_ah.push(q);
        };
        // boundary points are interpolated so each window spans exactly [start, end]
        let at = |target: f64| -> (f64, f64, f64) {
            let j = soc.partition_point(|&s| s < target).clamp(1, soc.len() - 1);
            let (a, b) = (soc[j - 1], soc[j]);
            let f = if b > a {
                ((target - a) / (b - a)).clamp(0.0, 1.0)
            } else {
                1.0
            };
            let lerp = |x: f64, y: f64| x + f * (y - x);
            (
                lerp(cc[j - 1].time_s, cc[j].time_s),
                lerp(cc[j - 1].voltage_v, cc[j].voltage_v),
                lerp(charge[j - 1], charge[j]),
            )
        };
        let first = if (start - s0).abs() < SOC_EPS {
            (cc[0].time_s, cc[0].voltage_v, 0.0)
        } else {
            at(start)
        };
        push(first.0, first.1, first.2);
        for (i, &s) in soc.iter().enumerate() {
            if s > start + SOC_EPS && s < end - SOC_EPS {
                push(cc[i].time_s, cc[i].voltage_v, charge[i]);
            }
        }
        let last = if (end - s1).abs() < SOC_EPS {
            let i = cc.len() - 1;
            (cc[i].time_s, cc[i].voltage_v, charge[i])
        } else {
            at(end)
        };
        if last.0 > first.0 {
            push(last.0, last.1, last.2);
        }
        out.push(seg);
        k += 1;
    }
    Ok(out)
}

/// Linear interpolation of voltage and charge onto 160 points uniform in
/// normalized time. First and last values are copied exactly.
pub fn resample_segment(raw: &RawSegment) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = raw.time_s.len();
    if n < 2 {
        return Err(SkdanError::Data(format!(
            "cycle {}: segment {:?} has {n} sample(s), need at least 2",
            raw.cycle_index, raw.soc_window
        )));
    }
    let t0 = raw.time_s[0];
    let span = raw.time_s[n - 1] - t0;
    if !(span > 0.0) {
        return Err(SkdanError::Data(format!(
            "cycle {}: segment {:?} has zero duration",
            raw.cycle_index, raw.soc_window
        )));
    }
    let tau: Vec<f64> = raw.time_s.iter().map(|t| (t - t0) / span).collect();
    let mut v = vec![0.0; SEGMENT_LEN];
    let mut q = vec![0.0; SEGMENT_LEN];
    let mut j = 1;
    for i in 0..SEGMENT_LEN {
        let g = i as f64 / (SEGMENT_LEN - 1) as f64;
        while j < n - 1 && tau[j] < g {
            j += 1;
        }
        let (a, b) = (tau[j - 1], tau[j]);
        let f = if b > a {
            ((g - a) / (b - a)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        v[i] = raw.voltage_v[j - 1] + f * (raw.voltage_v[j] - raw.voltage_v[j - 1]);
        q[i] = raw.charge_ah[j - 1] + f * (raw.charge_ah[j] - raw.charge_ah[j - 1]);
    }
    v[0] = raw.voltage_v[0];
    q[0] = raw.charge_ah[0];
    v[SEGMENT_LEN - 1] = raw.voltage_v[n - 1];
    q[SEGMENT_LEN - 1] = raw.charge_ah[n - 1];
    Ok((v, q))
}

/// The four per-point feature channels of a segment.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureChannels {
    pub v: Vec<f64>,
    pub dv: Vec<f64>,
    pub dq: Vec<f64>,
    pub ic: Vec<f64>,
}

/// Builds `Δv`, `Δq` and the incremental-capacity curve from a resampled
/// voltage / cumulative-charge pair.
///
/// Where the voltage step is below 1e-9 V the previous IC value is carried
/// forward (0 at the second point).
pub fn compute_features(v: &[f64], q: &[f64], ic_smoothing: bool) -> FeatureChannels {
    assert_eq!(v.len(), q.len(), "voltage and charge must align");
    let n = v.len();
    let dv: Vec<f64> = v.iter().map(|x| x - v[0]).collect();
    let dq: Vec<f64> = q.iter().map(|x| x - q[0]).collect();
    let mut ic = vec![0.0; n];
    for j in 1..n {
        let step_v = dv[j] - dv[j - 1];
        ic[j] = if step_v.abs() < IC_MIN_DV {
            ic[j - 1]
        } else {
            (dq[j] - dq[j - 1]) / step_v
        };
    }
    if ic_smoothing {
        ic = moving_average(&ic, 5);
        ic[0] = 0.0;
    }
    FeatureChannels {
        v: v.to_vec(),
        dv,
        dq,
        ic,
    }
}

/// Centered moving average; the window shrinks at the edges.
fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(x.len());
            x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Runs segmentation, resampling and feature construction over every cycle
/// of one battery. With `labels`, each segment gets its cycle's SOH.
pub fn build_segments(
    records: &[CycleRecord],
    meta: &BatteryMeta,
    battery_id: u32,
    labels: Option<&BTreeMap<i64, f64>>,
    cfg: &PipelineConfig,
) -> Result<Vec<ChargeSegment>> {
    let soc_range = (meta.soc_range[0], meta.soc_range[1]);
    let window = cfg.window_dod.unwrap_or(soc_range.1 - soc_range.0);
    let mut out = Vec::new();
    for rec in records {
        let label = match labels {
            Some(map) => Some(*map.get(&rec.cycle_index).ok_or_else(|| {
                SkdanError::Data(format!(
                    "no label for cycle {} of battery {battery_id}",
                    rec.cycle_index
                ))
            })?),
            None => None,
        };
        for raw in segment_cycles(rec, soc_range, window, cfg.step)? {
            let (v, q) = resample_segment(&raw)?;
            let f = compute_features(&v, &q, cfg.ic_smoothing);
            out.push(ChargeSegment {
                v: f.v,
                dv: f.dv,
                dq: f.dq,
                ic: f.ic,
                soc_window: raw.soc_window,
                cycle_index: rec.cycle_index,
                battery_id,
                soh_label: label,
            });
        }
    }
    Ok(out)
}
