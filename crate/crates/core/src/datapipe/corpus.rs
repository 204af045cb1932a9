//! Batteries on disk as `<prefix>.csv`, `<prefix>.meta.json` and, when
//! labeled, `<prefix>.labels.csv`.

use std::path::{Path, PathBuf};

use super::{
    build_segments, parse_cycling_csv, read_labels, read_meta, DomainDataset, DomainMeta,
    PipelineConfig,
};
use crate::error::{Result, SkdanError};

/// The three files belonging to one battery prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatteryFiles {
    pub csv: PathBuf,
    pub meta: PathBuf,
    pub labels: PathBuf,
}

impl BatteryFiles {
    pub fn new(prefix: impl AsRef<Path>) -> Self {
        let p = prefix.as_ref().as_os_str().to_owned();
        let with = |ext: &str| {
            let mut s = p.clone();
            s.push(ext);
            PathBuf::from(s)
        };
        Self {
            csv: with(".csv"),
            meta: with(".meta.json"),
            labels: with(".labels.csv"),
        }
    }
}

/// Prefixes of every battery in `dir` (a `<p>.csv` next to `<p>.meta.json`),
/// sorted by path.
pub fn discover_batteries(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| SkdanError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| SkdanError::io(dir, e))?.path();
        let Some(stem) = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_suffix(".csv"))
        else {
            continue;
        };
        if stem.ends_with(".labels") {
            continue;
        }
        let prefix = path.with_file_name(stem);
        if BatteryFiles::new(&prefix).meta.is_file() {
            out.push(prefix);
        }
    }
    out.sort();
    Ok(out)
}

/// Segments every battery (ids in argument order) into one raw domain.
///
/// With `labeled`, each battery must have a labels file. All batteries must
/// share the SOC range of the first.
pub fn load_domain(
    prefixes: &[PathBuf],
    cfg: &PipelineConfig,
    labeled: bool,
) -> Result<DomainDataset> {
    if prefixes.is_empty() {
        return Err(SkdanError::Config("no battery files given".into()));
    }
    let mut samples = Vec::new();
    let mut domain_meta: Option<DomainMeta> = None;
    for (id, prefix) in prefixes.iter().enumerate() {
        let files = BatteryFiles::new(prefix);
        let meta = read_meta(&files.meta)?;
        let records = parse_cycling_csv(&files.csv)?;
        let labels = if labeled {
            Some(read_labels(&files.labels, meta.nominal_capacity_ah)?)
        } else {
            None
        };
        let this = DomainMeta {
            soc_range: (meta.soc_range[0], meta.soc_range[1]),
            temperature_c: meta.temperature_c,
            discharge_rate_c: meta.discharge_rate_c,
            dataset_name: meta.dataset_name.clone(),
        };
        match &domain_meta {
            Some(first) if first.soc_range != this.soc_range => {
                return Err(SkdanError::Data(format!(
                    "battery {} has SOC range {:?}, expected {:?}",
                    prefix.display(),
                    this.soc_range,
                    first.soc_range
                )))
            }
            Some(_) => {}
            None => domain_meta = Some(this),
        }
        samples.extend(build_segments(
            &records,
            &meta,
            id as u32,
            labels.as_ref(),
            cfg,
        )?);
    }
    DomainDataset::new(samples, labeled, domain_meta.expect("at least one battery"))
}
