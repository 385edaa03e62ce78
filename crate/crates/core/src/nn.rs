//! Nearest-neighbour hot-deck matching on the X block.
//!
//! Distances are squared Euclidean summed in coordinate order, and a donor
//! beats another when its (distance, index) pair is lexicographically smaller.
//! The kd-tree only prunes a subtree when the splitting plane is strictly
//! farther than the current best, so it returns exactly the brute-force donor.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CellTag, ImputationMeta, ImputedDataset, Side, StackedDataset};
use crate::error::{FusionError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Search {
    BruteForce,
    #[default]
    KdTree,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NNConfig {
    /// Divide each X column by its pooled standard deviation first.
    pub standardize: bool,
    pub search: Search,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

#[inline]
fn better(d: f64, i: usize, best: (f64, usize)) -> bool {
    d < best.0 || (d == best.0 && i < best.1)
}

/// Exhaustive scan; returns the index into `donors`.
pub fn nearest_brute(query: &[f64], donors: &[Vec<f64>]) -> usize {
    let mut best = (f64::INFINITY, usize::MAX);
    for (i, p) in donors.iter().enumerate() {
        let d = sq_dist(query, p);
        if better(d, i, best) {
            best = (d, i);
        }
    }
    best.1
}

const LEAF: usize = 8;

enum Node {
    Leaf(Vec<usize>),
    Split {
        dim: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

pub struct KdTree<'a> {
    points: &'a [Vec<f64>],
    root: Node,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Vec<f64>]) -> Self {
        let idx: Vec<usize> = (0..points.len()).collect();
        let root = Self::build(points, idx);
        KdTree { points, root }
    }

    fn build(points: &[Vec<f64>], mut idx: Vec<usize>) -> Node {
        if idx.len() <= LEAF {
            return Node::Leaf(idx);
        }
        let k = points[idx[0]].len();
        let mut dim = 0;
        let mut spread = -1.0;
        for j in 0..k {
            let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                (lo.min(points[i][j]), hi.max(points[i][j]))
            });
            if hi - lo > spread {
                spread = hi - lo;
                dim = j;
            }
        }
        if spread <= 0.0 {
            return Node::Leaf(idx);
        }
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| points[a][dim].total_cmp(&points[b][dim]).then(a.cmp(&b)));
        let value = points[idx[mid]][dim];
        let right = idx.split_off(mid);
        Node::Split {
            dim,
            value,
            left: Box::new(Self::build(points, idx)),
            right: Box::new(Self::build(points, right)),
        }
    }

    pub fn nearest(&self, query: &[f64]) -> usize {
        let mut best = (f64::INFINITY, usize::MAX);
        self.search(&self.root, query, &mut best);
        best.1
    }

    fn search(&self, node: &Node, q: &[f64], best: &mut (f64, usize)) {
        match node {
            Node::Leaf(idx) => {
                for &i in idx {
                    let d = sq_dist(q, &self.points[i]);
                    if better(d, i, *best) {
                        *best = (d, i);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                // Left holds coordinates ≤ value, right holds ≥ value.
                let diff = q[*dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff <= best.0 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

/// Index (into `donors`) of each query's nearest donor.
pub fn nearest_donors(queries: &[Vec<f64>], donors: &[Vec<f64>], search: Search) -> Vec<usize> {
    match search {
        Search::BruteForce => queries.par_iter().map(|q| nearest_brute(q, donors)).collect(),
        Search::KdTree => {
            let tree = KdTree::new(donors);
            queries.par_iter().map(|q| tree.nearest(q)).collect()
        }
    }
}

fn x_points(ds: &StackedDataset, side: Side, scale: &[f64]) -> Vec<Vec<f64>> {
    ds.rows_of(side)
        .map(|i| ds.x(i).iter().zip(scale).map(|(v, s)| v / s).collect())
        .collect()
}

/// Fill each A row's Z from its nearest B row in X, and each B row's Y from
/// its nearest A row. Donation is with replacement.
pub fn impute_nn(ds: &StackedDataset, cfg: &NNConfig) -> Result<ImputedDataset> {
    if ds.n_a() == 0 || ds.n_b() == 0 {
        return Err(FusionError::InsufficientRows("empty donor pool".into()));
    }
    let dims = ds.dims();
    let scale: Vec<f64> = if cfg.standardize {
        let n = ds.n() as f64;
        (0..dims.x)
            .map(|j| {
                let mean = (0..ds.n()).map(|i| ds.x(i)[j]).sum::<f64>() / n;
                let var = (0..ds.n()).map(|i| (ds.x(i)[j] - mean).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect()
    } else {
        vec![1.0; dims.x]
    };
    let pa = x_points(ds, Side::A, &scale);
    let pb = x_points(ds, Side::B, &scale);
    let donors_for_a = nearest_donors(&pa, &pb, cfg.search);
    let donors_for_b = nearest_donors(&pb, &pa, cfg.search);

    let mut values = ds.values().clone();
    let tags = ds.mask().map(|o| if o { CellTag::Observed } else { CellTag::Nn });
    let mut donors = vec![None; ds.n()];
    let n_a = ds.n_a();
    for (i, &k) in donors_for_a.iter().enumerate() {
        let donor = n_a + k;
        for j in dims.zr() {
            values[(i, j)] = ds.values()[(donor, j)];
        }
        donors[i] = Some(donor);
    }
    for (i, &k) in donors_for_b.iter().enumerate() {
        let row = n_a + i;
        for j in dims.yr() {
            values[(row, j)] = ds.values()[(k, j)];
        }
        donors[row] = Some(k);
    }
    Ok(ImputedDataset {
        values,
        tags,
        spec: ds.spec().clone(),
        n_a,
        donors,
        components: vec![None; ds.n()],
        meta: ImputationMeta {
            method: "nn".into(),
            family: None,
            seed: None,
            draw_mode: None,
        },
    })
}
