use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CycleRecord, CycleSample};
use crate::error::{Result, SkdanError};

const COLUMNS: [&str; 4] = ["cycle_index", "time_s", "voltage_V", "current_A"];

/// Per-battery metadata file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryMeta {
    #[serde(rename = "nominal_capacity_Ah")]
    pub nominal_capacity_ah: f64,
    pub voltage_range: [f64; 2],
    pub soc_range: [f64; 2],
    #[serde(rename = "temperature_C")]
    pub temperature_c: f64,
    #[serde(rename = "discharge_rate_C")]
    pub discharge_rate_c: f64,
    pub dataset_name: String,
}

impl BatteryMeta {
    pub fn validate(&self) -> Result<()> {
        if !(self.nominal_capacity_ah > 0.0) {
            return Err(SkdanError::Config(format!(
                "nominal capacity must be positive, got {}",
                self.nominal_capacity_ah
            )));
        }
        let [a, b] = self.soc_range;
        if !(0.0..=100.0).contains(&a) || !(0.0..=100.0).contains(&b) || a >= b {
            return Err(SkdanError::Config(format!("invalid soc_range [{a}, {b}]")));
        }
        Ok(())
    }
}

pub fn read_meta(path: impl AsRef<Path>) -> Result<BatteryMeta> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| SkdanError::io(path, e))?;
    let meta: BatteryMeta = serde_json::from_str(&text)?;
    meta.validate()?;
    Ok(meta)
}

pub fn write_meta(path: impl AsRef<Path>, meta: &BatteryMeta) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(meta)?;
    std::fs::write(path, text + "\n").map_err(|e| SkdanError::io(path, e))
}

/// Reads a cycling log with header `cycle_index,time_s,voltage_V,current_A`.
///
/// Records come back ordered by cycle index. Within a cycle, rows must
/// appear with strictly increasing time.
pub fn parse_cycling_csv(path: impl AsRef<Path>) -> Result<Vec<CycleRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| SkdanError::io(path, e))?;
    parse_cycling_reader(file)
}

pub fn parse_cycling_reader<R: Read>(reader: R) -> Result<Vec<CycleRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 4];
    for (slot, name) in idx.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SkdanError::Schema(format!("missing column `{name}`")))?;
    }

    let mut cycles: BTreeMap<i64, Vec<CycleSample>> = BTreeMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| -> Result<&str> {
            rec.get(idx[k]).ok_or_else(|| {
                SkdanError::Schema(format!(
                    "row {}: missing value for `{}`",
                    row + 2,
                    COLUMNS[k]
                ))
            })
        };
        let num = |k: usize| -> Result<f64> {
            let s = field(k)?;
            s.parse::<f64>().map_err(|_| {
                SkdanError::Data(format!(
                    "row {}: `{}` is not a number: {s:?}",
                    row + 2,
                    COLUMNS[k]
                ))
            })
        };
        let cycle: i64 = field(0)?
            .parse()
            .map_err(|_| SkdanError::Data(format!("row {}: bad cycle_index", row + 2)))?;
        let sample = CycleSample {
            time_s: num(1)?,
            voltage_v: num(2)?,
            current_a: num(3)?,
        };
        let list = cycles.entry(cycle).or_default();
        if let Some(prev) = list.last() {
            if !(sample.time_s > prev.time_s) {
                return Err(SkdanError::Data(format!(
                    "cycle {cycle}: time not strictly increasing ({} after {})",
                    sample.time_s, prev.time_s
                )));
            }
        }
        list.push(sample);
    }
    Ok(cycles
        .into_iter()
        .map(|(cycle, samples)| CycleRecord::new(cycle, samples))
        .collect())
}

pub fn write_cycling_csv(path: impl AsRef<Path>, records: &[CycleRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(COLUMNS)?;
    for rec in records {
        for s in &rec.samples {
            wtr.write_record([
                rec.cycle_index.to_string(),
                s.time_s.to_string(),
                s.voltage_v.to_string(),
                s.current_a.to_string(),
            ])?;
        }
    }
    wtr.flush().map_err(|e| SkdanError::io(path, e))
}

/// Reads `cycle_index,calibrated_capacity_Ah` and converts capacities to SOH.
pub fn read_labels(path: impl AsRef<Path>, nominal_capacity_ah: f64) -> Result<BTreeMap<i64, f64>> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SkdanError::Schema(format!("labels file missing column `{name}`")))
    };
    let (ci, cap) = (col("cycle_index")?, col("calibrated_capacity_Ah")?);
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let cycle: i64 = rec[ci]
            .parse()
            .map_err(|_| SkdanError::Data(format!("bad cycle_index {:?} in labels", &rec[ci])))?;
        let c: f64 = rec[cap]
            .parse()
            .map_err(|_| SkdanError::Data(format!("bad capacity {:?} in labels", &rec[cap])))?;
        out.insert(cycle, c / nominal_capacity_ah);
    }
    Ok(out)
}

pub fn write_labels(
    path: impl AsRef<Path>,
    soh: &BTreeMap<i64, f64>,
    nominal_capacity_ah: f64,
) -> Result<()> {
    let path = path.as_ref();
    let mut file = File::create(path).map_err(|e| SkdanError::io(path, e))?;
    let mut text = String::from("cycle_index,calibrated_capacity_Ah\n");
    for (c, s) in soh {
        text.push_str(&format!("{c},{}\n", s * nominal_capacity_ah));
    }
    file.write_all(text.as_bytes())
        .map_err(|e| SkdanError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::Phase;

    #[test]
    fn single_constant_current_cycle() {
        let csv =
            "cycle_index,time_s,voltage_V,current_A\n1,0,3.0,0.75\n1,10,3.1,0.75\n1,20,3.2,0.75\n";
        let recs = parse_cycling_reader(csv.as_bytes()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].samples.len(), 3);
        assert!(recs[0].phases.iter().all(|&p| p == Phase::ChargeCc));
        assert_eq!(recs[0].cc_range(), Some(0..3));
    }

    #[test]
    fn interleaved_cycles_come_back_sorted() {
        let csv =
            "cycle_index,time_s,voltage_V,current_A\n2,0,3.0,1\n1,0,3.0,1\n2,5,3.1,1\n1,5,3.1,1\n";
        let recs = parse_cycling_reader(csv.as_bytes()).unwrap();
        let order: Vec<i64> = recs.iter().map(|r| r.cycle_index).collect();
        assert_eq!(order, vec![1, 2]);
        assert_eq!(recs[1].samples[1].time_s, 5.0);
    }

    #[test]
    fn backwards_time_names_the_cycle() {
        let csv = "cycle_index,time_s,voltage_V,current_A\n5,0,3.0,1\n5,10,3.1,1\n5,9,3.2,1\n";
        match parse_cycling_reader(csv.as_bytes()) {
            Err(SkdanError::Data(msg)) => assert!(msg.contains("cycle 5"), "{msg}"),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let csv = "cycle_index,time_s,current_A\n1,0,1\n";
        match parse_cycling_reader(csv.as_bytes()) {
            Err(SkdanError::Schema(msg)) => assert!(msg.contains("voltage_V"), "{msg}"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn columns_may_be_reordered() {
        let csv = "current_A,voltage_V,time_s,cycle_index\n1.5,3.3,0,7\n1.5,3.4,1,7\n";
        let recs = parse_cycling_reader(csv.as_bytes()).unwrap();
        assert_eq!(recs[0].cycle_index, 7);
        assert_eq!(recs[0].samples[1].voltage_v, 3.4);
    }

    #[test]
    fn meta_round_trip_uses_documented_keys() {
        let meta = BatteryMeta {
            nominal_capacity_ah: 1.5,
            voltage_range: [2.7, 4.2],
            soc_range: [20.0, 80.0],
            temperature_c: 25.0,
            discharge_rate_c: 0.5,
            dataset_name: "demo".into(),
        };
        let json = serde_json::to_value(&meta).unwrap();
        assert_eq!(json["nominal_capacity_Ah"], 1.5);
        assert_eq!(json["temperature_C"], 25.0);
        let bad = BatteryMeta {
            soc_range: [80.0, 20.0],
            ..meta
        };
        assert!(bad.validate().is_err());
    }
}
