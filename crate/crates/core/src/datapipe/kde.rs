use std::path::Path;

use crate::error::{Result, SkdanError};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Gaussian kernel density estimate of `values` evaluated on `grid`.
///
/// With `bandwidth = None` the bandwidth follows Silverman's rule.
pub fn kde_density(values: &[f64], grid: &[f64], bandwidth: Option<f64>) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(SkdanError::Data("kernel density of an empty sample".into()));
    }
    let h = match bandwidth {
        Some(h) => h,
        None => silverman_bandwidth(values)?,
    };
    if !(h > 0.0) {
        return Err(SkdanError::Config(format!(
            "bandwidth must be positive, got {h}"
        )));
    }
    let norm = INV_SQRT_2PI / (h * values.len() as f64);
    Ok(grid
        .iter()
        .map(|&g| {
            values
                .iter()
                .map(|&x| {
                    let u = (g - x) / h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect())
}

/// `0.9 · min(σ, IQR/1.34) · n^(-1/5)`, falling back to whichever spread
/// measure is non-zero, then to 1e-3 for a constant sample.
pub fn silverman_bandwidth(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(SkdanError::Data(format!(
            "bandwidth rule needs at least 2 values, got {n}"
        )));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = (quantile(&sorted, 0.75) - quantile(&sorted, 0.25)) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => return Ok(1e-3),
    };
    Ok(0.9 * spread * (n as f64).powf(-0.2))
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// A density curve ready for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl KdeCurve {
    /// Trapezoid-rule integral of the density over the grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(g, d)| 0.5 * (g[1] - g[0]) * (d[0] + d[1]))
            .sum()
    }
}

/// Smallest grid accepted by [`kde_export`].
pub const MIN_KDE_GRID: usize = 16;

/// Density on `n_grid` points spanning the sample range widened by four
/// bandwidths each side.
///
/// The bandwidth is never narrower than one grid step: a sharper kernel would
/// fall between grid points and the curve would no longer integrate to one.
pub fn kde_export(values: &[f64], n_grid: usize) -> Result<KdeCurve> {
    if n_grid < MIN_KDE_GRID {
        return Err(SkdanError::Config(format!(
            "density grid needs at least {MIN_KDE_GRID} points, got {n_grid}"
        )));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // step = (span + 8h) / (n - 1) ≤ h  ⇔  h ≥ span / (n - 9)
    let h = silverman_bandwidth(values)?.max((max - min) / (n_grid - 9) as f64);
    let lo = min - 4.0 * h;
    let hi = max + 4.0 * h;
    let grid: Vec<f64> = (0..n_grid)
        .map(|i| lo + (hi - lo) * i as f64 / (n_grid - 1) as f64)
        .collect();
    let density = kde_density(values, &grid, Some(h))?;
    Ok(KdeCurve {
        grid,
        density,
        bandwidth: h,
    })
}

/// Writes `grid_value,density` rows.
pub fn write_kde_csv(path: impl AsRef<Path>, curve: &KdeCurve) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("grid_value,density\n");
    for (g, d) in curve.grid.iter().zip(&curve.density) {
        text.push_str(&format!("{g},{d}\n"));
    }
    std::fs::write(path, text).map_err(|e| SkdanError::io(path, e))
}
