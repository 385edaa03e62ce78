//! The two-file matching layout: dataset A observes (X, Y), dataset B observes
//! (X, Z), and both are stacked into one n×d matrix with an explicit mask.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};

/// Block sizes only; enough to partition vectors and matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDims {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl BlockDims {
    pub fn new(x: usize, y: usize, z: usize) -> Self {
        BlockDims { x, y, z }
    }

    pub fn d(&self) -> usize {
        self.x + self.y + self.z
    }

    pub fn xr(&self) -> Range<usize> {
        0..self.x
    }

    pub fn yr(&self) -> Range<usize> {
        self.x..self.x + self.y
    }

    pub fn zr(&self) -> Range<usize> {
        self.x + self.y..self.d()
    }

    /// Column indices observed in a dataset: X then the dataset's own block.
    pub fn observed_indices(&self, side: Side) -> Vec<usize> {
        let own = match side {
            Side::A => self.yr(),
            Side::B => self.zr(),
        };
        self.xr().chain(own).collect()
    }

    pub fn missing_range(&self, side: Side) -> Range<usize> {
        match side {
            Side::A => self.zr(),
            Side::B => self.yr(),
        }
    }
}

/// Which of the two source files a row came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn tag(self) -> char {
        match self {
            Side::A => 'A',
            Side::B => 'B',
        }
    }
}

/// Column names of the X, Y and Z blocks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    x: Vec<String>,
    y: Vec<String>,
    z: Vec<String>,
}

impl BlockSpec {
    pub fn new<S: Into<String>>(
        x: impl IntoIterator<Item = S>,
        y: impl IntoIterator<Item = S>,
        z: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        let x: Vec<String> = x.into_iter().map(Into::into).collect();
        let y: Vec<String> = y.into_iter().map(Into::into).collect();
        let z: Vec<String> = z.into_iter().map(Into::into).collect();
        for (name, block) in [("X", &x), ("Y", &y), ("Z", &z)] {
            if block.is_empty() {
                return Err(FusionError::InvalidBlocks(format!("block {name} is empty")));
            }
        }
        let mut seen = HashSet::new();
        for c in x.iter().chain(&y).chain(&z) {
            if !seen.insert(c.as_str()) {
                return Err(FusionError::InvalidBlocks(format!("column `{c}` appears twice")));
            }
        }
        Ok(BlockSpec { x, y, z })
    }

    /// Names `x1.., y1.., z1..` for the given sizes.
    pub fn generic(dims: BlockDims) -> Self {
        let names = |p: &str, k: usize| (1..=k).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
        BlockSpec {
            x: names("x", dims.x),
            y: names("y", dims.y),
            z: names("z", dims.z),
        }
    }

    pub fn dims(&self) -> BlockDims {
        BlockDims::new(self.x.len(), self.y.len(), self.z.len())
    }

    pub fn x(&self) -> &[String] {
        &self.x
    }

    pub fn y(&self) -> &[String] {
        &self.y
    }

    pub fn z(&self) -> &[String] {
        &self.z
    }

    /// All columns in canonical (X, Y, Z) order.
    pub fn columns(&self) -> Vec<String> {
        self.x.iter().chain(&self.y).chain(&self.z).cloned().collect()
    }

    /// Columns a dataset file must provide, in canonical order.
    pub fn side_columns(&self, side: Side) -> Vec<String> {
        let own = match side {
            Side::A => &self.y,
            Side::B => &self.z,
        };
        self.x.iter().chain(own).cloned().collect()
    }
}

/// A named numeric table as read from one input file.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub values: DMatrix<f64>,
}

impl Table {
    pub fn new(columns: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if columns.len() != values.ncols() {
            return Err(FusionError::Dimension(format!(
                "{} column names for {} columns",
                columns.len(),
                values.ncols()
            )));
        }
        Ok(Table { columns, values })
    }

    /// Columns rearranged to `order`; every name must be present.
    fn reordered(&self, order: &[String], side: Side) -> Result<DMatrix<f64>> {
        if self.columns.len() != order.len() {
            return Err(FusionError::ColumnMismatch(format!(
                "dataset {} has columns {:?}, expected {:?}",
                side.tag(),
                self.columns,
                order
            )));
        }
        let mut idx = Vec::with_capacity(order.len());
        for name in order {
            match self.columns.iter().position(|c| c == name) {
                Some(j) => idx.push(j),
                None => {
                    return Err(FusionError::ColumnMismatch(format!(
                        "dataset {} lacks column `{name}`",
                        side.tag()
                    )))
                }
            }
        }
        Ok(self.values.select_columns(&idx))
    }
}

/// Rows of A followed by rows of B over the canonical (X, Y, Z) columns.
/// Cells outside the observed pattern hold 0.0 and are flagged in `mask`.
#[derive(Clone, Debug)]
pub struct StackedDataset {
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
    n_a: usize,
    n_b: usize,
    spec: BlockSpec,
    rows: Vec<f64>,
}

impl StackedDataset {
    /// Stack two tables whose columns match the block names, in any order.
    pub fn stack(a: &Table, b: &Table, spec: &BlockSpec) -> Result<Self> {
        let va = a.reordered(&spec.side_columns(Side::A), Side::A)?;
        let vb = b.reordered(&spec.side_columns(Side::B), Side::B)?;
        Self::from_canonical(&va, &vb, spec)
    }

    /// Stack matrices already in canonical column order: A is (X, Y), B is (X, Z).
    pub fn from_canonical(a: &DMatrix<f64>, b: &DMatrix<f64>, spec: &BlockSpec) -> Result<Self> {
        let dims = spec.dims();
        if a.nrows() == 0 {
            return Err(FusionError::EmptyDataset { dataset: 'A' });
        }
        if b.nrows() == 0 {
            return Err(FusionError::EmptyDataset { dataset: 'B' });
        }
        if a.ncols() != dims.x + dims.y {
            return Err(FusionError::ColumnMismatch(format!(
                "dataset A has {} columns, expected {}",
                a.ncols(),
                dims.x + dims.y
            )));
        }
        if b.ncols() != dims.x + dims.z {
            return Err(FusionError::ColumnMismatch(format!(
                "dataset B has {} columns, expected {}",
                b.ncols(),
                dims.x + dims.z
            )));
        }
        let (n_a, n_b, d) = (a.nrows(), b.nrows(), dims.d());
        let n = n_a + n_b;
        let mut values = DMatrix::zeros(n, d);
        let mut mask = DMatrix::from_element(n, d, false);
        for (side, src, offset) in [(Side::A, a, 0), (Side::B, b, n_a)] {
            let cols = dims.observed_indices(side);
            let names = spec.side_columns(side);
            for i in 0..src.nrows() {
                for (k, &j) in cols.iter().enumerate() {
                    let v = src[(i, k)];
                    if !v.is_finite() {
                        return Err(FusionError::NonFinite {
                            dataset: side.tag(),
                            row: i + 1,
                            column: names[k].clone(),
                        });
                    }
                    values[(offset + i, j)] = v;
                    mask[(offset + i, j)] = true;
                }
            }
        }
        let rows = values.transpose().as_slice().to_vec();
        Ok(StackedDataset {
            values,
            mask,
            n_a,
            n_b,
            spec: spec.clone(),
            rows,
        })
    }

    /// The observed tables back in canonical column order.
    pub fn unstack(&self) -> (Table, Table) {
        let dims = self.dims();
        let take = |side: Side, rows: Range<usize>| {
            let cols = dims.observed_indices(side);
            let m = self.values.rows(rows.start, rows.len()).select_columns(&cols);
            Table {
                columns: self.spec.side_columns(side),
                values: m,
            }
        };
        (take(Side::A, 0..self.n_a), take(Side::B, self.n_a..self.n()))
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn is_observed(&self, row: usize, col: usize) -> bool {
        self.mask[(row, col)]
    }

    pub fn n_a(&self) -> usize {
        self.n_a
    }

    pub fn n_b(&self) -> usize {
        self.n_b
    }

    pub fn n(&self) -> usize {
        self.n_a + self.n_b
    }

    pub fn spec(&self) -> &BlockSpec {
        &self.spec
    }

    pub fn dims(&self) -> BlockDims {
        self.spec.dims()
    }

    pub fn side(&self, row: usize) -> Side {
        if row < self.n_a {
            Side::A
        } else {
            Side::B
        }
    }

    pub fn rows_of(&self, side: Side) -> Range<usize> {
        match side {
            Side::A => 0..self.n_a,
            Side::B => self.n_a..self.n(),
        }
    }

    /// Row `i` as a contiguous slice of length d (missing cells read 0.0).
    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dims().d();
        &self.rows[i * d..(i + 1) * d]
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.row(i)[self.dims().xr()]
    }

    /// The non-X observed block of row i (Y for A rows, Z for B rows).
    pub fn own(&self, i: usize) -> &[f64] {
        let dims = self.dims();
        match self.side(i) {
            Side::A => &self.row(i)[dims.yr()],
            Side::B => &self.row(i)[dims.zr()],
        }
    }
}

/// How an output cell came to hold its value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellTag {
    Observed,
    Nn,
    Parametric,
}

impl CellTag {
    pub fn as_str(self) -> &'static str {
        match self {
            CellTag::Observed => "observed",
            CellTag::Nn => "nn",
            CellTag::Parametric => "parametric",
        }
    }
}

/// Run metadata carried alongside imputed values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputationMeta {
    pub method: String,
    pub family: Option<String>,
    pub seed: Option<u64>,
    pub draw_mode: Option<String>,
}

/// A completed n×d table with per-cell provenance.
#[derive(Clone, Debug)]
pub struct ImputedDataset {
    pub values: DMatrix<f64>,
    pub tags: DMatrix<CellTag>,
    pub spec: BlockSpec,
    pub n_a: usize,
    /// Donor row (stacked index) for nearest-neighbour rows.
    pub donors: Vec<Option<usize>>,
    /// Mixture component used for a parametric row, when one was drawn.
    pub components: Vec<Option<usize>>,
    pub meta: ImputationMeta,
}

impl ImputedDataset {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn side(&self, row: usize) -> Side {
        if row < self.n_a {
            Side::A
        } else {
            Side::B
        }
    }
}

fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Read one dataset file, selecting the `BlockSpec` columns by header name. Extra
/// columns are ignored. Rows are numbered from 1 in errors, excluding the header.
pub fn load_csv(path: &Path, spec: &BlockSpec, side: Side) -> Result<Table> {
    read_columns(path, &spec.side_columns(side), side.tag())
}

/// Read a completed table written by [`emit_csv`].
pub fn load_full(path: &Path, spec: &BlockSpec) -> Result<Table> {
    read_columns(path, &spec.columns(), '-')
}

fn read_columns(path: &Path, wanted: &[String], tag: char) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let mut idx = Vec::with_capacity(wanted.len());
    for name in wanted {
        match headers.iter().position(|h| h.trim() == name) {
            Some(j) => idx.push(j),
            None => {
                return Err(FusionError::MissingColumn {
                    path: path.to_path_buf(),
                    column: name.clone(),
                })
            }
        }
    }
    let mut data = Vec::new();
    let mut nrows = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (k, &j) in idx.iter().enumerate() {
            let raw = rec.get(j).unwrap_or("").trim();
            let v: f64 = raw.parse().map_err(|_| FusionError::Parse {
                path: path.to_path_buf(),
                row: r + 1,
                column: wanted[k].clone(),
                value: raw.to_string(),
            })?;
            if !v.is_finite() {
                return Err(FusionError::NonFinite {
                    dataset: tag,
                    row: r + 1,
                    column: wanted[k].clone(),
                });
            }
            data.push(v);
        }
        nrows += 1;
    }
    let values = DMatrix::from_row_slice(nrows, wanted.len(), &data);
    Table::new(wanted.to_vec(), values)
}

/// Write a canonical-order matrix with a header row.
pub fn write_matrix(path: &Path, columns: &[String], values: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(columns)?;
    for i in 0..values.nrows() {
        w.write_record((0..values.ncols()).map(|j| fmt_num(values[(i, j)])))?;
    }
    w.flush()?;
    Ok(())
}

/// Write the completed table to `path` and a provenance sidecar to
/// `provenance`: one line per row naming the filled block, its tag and, for
/// nearest-neighbour rows, the donor's stacked row index.
pub fn emit_csv(imp: &ImputedDataset, path: &Path, provenance: &Path) -> Result<()> {
    write_matrix(path, &imp.spec.columns(), &imp.values)?;
    let dims = imp.spec.dims();
    let mut w = BufWriter::new(File::create(provenance)?);
    writeln!(w, "row,column,tag,donor_row")?;
    for i in 0..imp.n() {
        let side = imp.side(i);
        let block = match side {
            Side::A => imp.spec.z(),
            Side::B => imp.spec.y(),
        };
        let tag = imp.tags[(i, dims.missing_range(side).start)];
        let donor = imp.donors[i].map(|d| d.to_string()).unwrap_or_default();
        writeln!(w, "{i},{},{},{donor}", block.join(";"), tag.as_str())?;
    }
    w.flush()?;
    Ok(())
}

/// One line of a provenance sidecar.
#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
pub struct ProvenanceRecord {
    pub row: usize,
    pub column: String,
    pub tag: String,
    pub donor_row: Option<usize>,
}

pub fn read_provenance(path: &Path) -> Result<Vec<ProvenanceRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}
