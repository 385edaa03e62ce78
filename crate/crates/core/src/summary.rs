//! Correlation summaries of completed data and plot-ready density grids.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{BlockSpec, ImputedDataset};
use crate::error::{FusionError, Result};
use crate::stats::{mean_cov, pearson};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    /// "all" or a label; with several Y or Z columns, suffixed ":y~z".
    pub group: String,
    pub rho_yz: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub groups: Vec<GroupSummary>,
    pub columns: Vec<String>,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

pub fn summarize(imputed: &ImputedDataset, labels: Option<&[String]>) -> Result<Summary> {
    summarize_values(&imputed.values, &imputed.spec, labels)
}

/// ρ̂_YZ over all rows and within each label group (groups in sorted order),
/// plus the column means and 1/n covariance of the whole table.
pub fn summarize_values(values: &DMatrix<f64>, spec: &BlockSpec, labels: Option<&[String]>) -> Result<Summary> {
    let dims = spec.dims();
    if values.ncols() != dims.d() {
        return Err(FusionError::Dimension(format!("{} columns for {} variables", values.ncols(), dims.d())));
    }
    if let Some((i, j)) = (0..values.nrows())
        .flat_map(|i| (0..values.ncols()).map(move |j| (i, j)))
        .find(|&(i, j)| !values[(i, j)].is_finite())
    {
        return Err(FusionError::Schema(format!(
            "non-finite value at row {}, column `{}`",
            i + 1,
            spec.columns()[j]
        )));
    }
    let mut sets: Vec<(String, Vec<usize>)> = vec![("all".into(), (0..values.nrows()).collect())];
    if let Some(l) = labels {
        if l.len() != values.nrows() {
            return Err(FusionError::Dimension(format!("{} labels for {} rows", l.len(), values.nrows())));
        }
        let mut by: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, g) in l.iter().enumerate() {
            by.entry(g.as_str()).or_default().push(i);
        }
        sets.extend(by.into_iter().map(|(k, v)| (k.to_string(), v)));
    }
    let single = dims.y == 1 && dims.z == 1;
    let mut groups = Vec::new();
    for (name, rows) in sets {
        if rows.len() < 3 {
            return Err(FusionError::InsufficientRows(format!(
                "group {name} has {} rows, at least 3 needed",
                rows.len()
            )));
        }
        for (a, yj) in dims.yr().enumerate() {
            for (b, zk) in dims.zr().enumerate() {
                let y: Vec<f64> = rows.iter().map(|&i| values[(i, yj)]).collect();
                let z: Vec<f64> = rows.iter().map(|&i| values[(i, zk)]).collect();
                let group = if single {
                    name.clone()
                } else {
                    format!("{name}:{}~{}", spec.y()[a], spec.z()[b])
                };
                groups.push(GroupSummary {
                    group,
                    rho_yz: pearson(&y, &z),
                    n: rows.len(),
                });
            }
        }
    }
    let (mean, cov) = mean_cov(values);
    Ok(Summary {
        groups,
        columns: spec.columns(),
        mean: mean.iter().copied().collect(),
        covariance: cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
    })
}

pub fn write_summary_csv(summary: &Summary, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["group", "rho_yz", "n"])?;
    for g in &summary.groups {
        w.write_record([g.group.clone(), format!("{:.16e}", g.rho_yz), g.n.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_json(summary: &Summary, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(summary)?)?;
    Ok(())
}

/// 2-D histogram normalised to a density: counts / (n · cell area).
#[derive(Clone, Debug, PartialEq)]
pub struct Grid2D {
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    /// bins_x × bins_y
    pub density: DMatrix<f64>,
}

fn edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    (0..=bins).map(|k| lo + (hi - lo) * k as f64 / bins as f64).collect()
}

fn bin_of(v: f64, lo: f64, hi: f64, bins: usize) -> Option<usize> {
    if v < lo || v > hi {
        return None;
    }
    Some((((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1))
}

/// Square-binned histogram over the data range, or over `range` when given
/// ((x_lo, x_hi), (y_lo, y_hi)). Points outside `range` are dropped.
pub fn histogram2d(x: &[f64], y: &[f64], bins: usize, range: Option<((f64, f64), (f64, f64))>) -> Grid2D {
    assert_eq!(x.len(), y.len());
    assert!(bins >= 1);
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, lo + 0.5)
        }
    };
    let ((xl, xh), (yl, yh)) = range.unwrap_or_else(|| (span(x), span(y)));
    let mut density = DMatrix::zeros(bins, bins);
    for (&a, &b) in x.iter().zip(y) {
        if let (Some(i), Some(j)) = (bin_of(a, xl, xh, bins), bin_of(b, yl, yh, bins)) {
            density[(i, j)] += 1.0;
        }
    }
    let area = (xh - xl) * (yh - yl) / (bins * bins) as f64;
    density /= x.len().max(1) as f64 * area;
    Grid2D {
        x_edges: edges(xl, xh, bins),
        y_edges: edges(yl, yh, bins),
        density,
    }
}

impl Grid2D {
    /// One pass of a 3×3 box filter; edge cells average their in-grid neighbours.
    pub fn smoothed(&self) -> Grid2D {
        let (r, c) = self.density.shape();
        let d = DMatrix::from_fn(r, c, |i, j| {
            let (mut s, mut k) = (0.0, 0.0);
            for a in i.saturating_sub(1)..=(i + 1).min(r - 1) {
                for b in j.saturating_sub(1)..=(j + 1).min(c - 1) {
                    s += self.density[(a, b)];
                    k += 1.0;
                }
            }
            s / k
        });
        Grid2D {
            x_edges: self.x_edges.clone(),
            y_edges: self.y_edges.clone(),
            density: d,
        }
    }

    /// Cells strictly above all eight neighbours and at least `min_rel` times
    /// the grid maximum.
    pub fn local_maxima(&self, min_rel: f64) -> Vec<(usize, usize)> {
        let (r, c) = self.density.shape();
        let top = self.density.max();
        let mut out = Vec::new();
        for i in 0..r {
            for j in 0..c {
                let v = self.density[(i, j)];
                if v <= 0.0 || v < min_rel * top {
                    continue;
                }
                let mut peak = true;
                'nb: for a in i.saturating_sub(1)..=(i + 1).min(r - 1) {
                    for b in j.saturating_sub(1)..=(j + 1).min(c - 1) {
                        if (a, b) != (i, j) && self.density[(a, b)] >= v {
                            peak = false;
                            break 'nb;
                        }
                    }
                }
                if peak {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x_center", "y_center", "density"])?;
        let (r, c) = self.density.shape();
        for i in 0..r {
            let xc = 0.5 * (self.x_edges[i] + self.x_edges[i + 1]);
            for j in 0..c {
                let yc = 0.5 * (self.y_edges[j] + self.y_edges[j + 1]);
                w.write_record([
                    format!("{xc:.16e}"),
                    format!("{yc:.16e}"),
                    format!("{:.16e}", self.density[(i, j)]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Grid settings that resolve the separated clusters of a few thousand
/// points without splitting them.
pub const MODE_BINS: usize = 30;
pub const MODE_SMOOTH: usize = 2;
pub const MODE_MIN_REL: f64 = 0.1;

/// Mode count of a scatter: histogram, `smooth` box-filter passes, then
/// local maxima above `min_rel` of the peak.
pub fn count_modes(x: &[f64], y: &[f64], bins: usize, smooth: usize, min_rel: f64) -> usize {
    let mut g = histogram2d(x, y, bins, None);
    for _ in 0..smooth {
        g = g.smoothed();
    }
    g.local_maxima(min_rel).len()
}
