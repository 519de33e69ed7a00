//! Finite representations of state-space regions.
//!
//! A [`Region`] is either a union of axis-aligned boxes (exact set algebra by
//! box splitting) or a boolean mask over a rectangular lattice. Both support
//! the one-step predecessor operator that drives backward reachability:
//! `exists` mode collects states with some admissible input mapping into the
//! region, `forall` mode those for which every sampled input does.

use crate::dynamics::{Dynamics, InputGrid};
use crate::error::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const EPS: f64 = 1e-9;

/// Closed axis-aligned box, `lo[d] <= x[d] <= hi[d]` in every dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(
            lo.iter().zip(&hi).all(|(l, h)| l <= h),
            "box has lo > hi: {lo:?} {hi:?}"
        );
        AxisBox { lo, hi }
    }

    /// Box given per-dimension `[lo, hi]` pairs.
    pub fn from_intervals(iv: &[[f64; 2]]) -> Self {
        Self::new(iv.iter().map(|p| p[0]).collect(), iv.iter().map(|p| p[1]).collect())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *v >= l - EPS && *v <= h + EPS)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn halfwidths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (h - l)).collect()
    }

    pub fn intersect(&self, other: &AxisBox) -> Option<AxisBox> {
        let mut lo = Vec::with_capacity(self.dim());
        let mut hi = Vec::with_capacity(self.dim());
        for d in 0..self.dim() {
            let l = self.lo[d].max(other.lo[d]);
            let h = self.hi[d].min(other.hi[d]);
            if l > h + EPS {
                return None;
            }
            lo.push(l);
            hi.push(h.max(l));
        }
        Some(AxisBox { lo, hi })
    }

    pub fn is_subset_of(&self, other: &AxisBox) -> bool {
        (0..self.dim()).all(|d| self.lo[d] >= other.lo[d] - EPS && self.hi[d] <= other.hi[d] + EPS)
    }

    /// Minkowski dilation by a symmetric per-axis radius (negative erodes).
    pub fn dilate(&self, radius: &[f64]) -> Option<AxisBox> {
        let mut lo = Vec::with_capacity(self.dim());
        let mut hi = Vec::with_capacity(self.dim());
        for d in 0..self.dim() {
            let l = self.lo[d] - radius[d];
            let h = self.hi[d] + radius[d];
            if l > h + EPS {
                return None;
            }
            lo.push(l);
            hi.push(h);
        }
        Some(AxisBox { lo, hi })
    }

    /// Set difference `self \ other` as a list of disjoint boxes.
    pub fn subtract(&self, other: &AxisBox) -> Vec<AxisBox> {
        let Some(overlap) = self.intersect(other) else {
            return vec![self.clone()];
        };
        if self.is_subset_of(&overlap) {
            return Vec::new();
        }
        let mut pieces = Vec::new();
        let mut core = self.clone();
        for d in 0..self.dim() {
            if overlap.lo[d] > core.lo[d] + EPS {
                let mut b = core.clone();
                b.hi[d] = overlap.lo[d];
                pieces.push(b);
                core.lo[d] = overlap.lo[d];
            }
            if overlap.hi[d] < core.hi[d] - EPS {
                let mut b = core.clone();
                b.lo[d] = overlap.hi[d];
                pieces.push(b);
                core.hi[d] = overlap.hi[d];
            }
        }
        pieces
    }

    /// Signed sup-norm distance to the box boundary (positive inside).
    pub fn signed_distance_inf(&self, x: &[f64]) -> f64 {
        let c = self.center();
        let w = self.halfwidths();
        let mut worst = f64::INFINITY;
        for d in 0..self.dim() {
            worst = worst.min(w[d] - (x[d] - c[d]).abs());
        }
        worst
    }

    fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }
}

/// Union of axis-aligned boxes, kept canonical: no member box is contained in
/// another. Overlaps are allowed; exact queries go through box subtraction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoxUnion {
    pub dim: usize,
    pub boxes: Vec<AxisBox>,
}

impl BoxUnion {
    pub fn empty(dim: usize) -> Self {
        BoxUnion { dim, boxes: Vec::new() }
    }

    pub fn from_boxes(dim: usize, boxes: Vec<AxisBox>) -> Self {
        let mut bu = BoxUnion { dim, boxes };
        bu.canonicalize();
        bu
    }

    pub fn single(b: AxisBox) -> Self {
        BoxUnion { dim: b.dim(), boxes: vec![b] }
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.boxes.iter().any(|b| b.contains(x))
    }

    fn canonicalize(&mut self) {
        self.boxes.retain(|b| b.lo.iter().zip(&b.hi).all(|(l, h)| l <= h));
        // Merge boxes that agree on all but one dimension and touch there.
        let mut merged = true;
        while merged {
            merged = false;
            'outer: for i in 0..self.boxes.len() {
                for j in i + 1..self.boxes.len() {
                    if let Some(m) = try_merge(&self.boxes[i], &self.boxes[j]) {
                        self.boxes[i] = m;
                        self.boxes.swap_remove(j);
                        merged = true;
                        break 'outer;
                    }
                }
            }
        }
        // Drop boxes contained in another.
        let mut keep: Vec<AxisBox> = Vec::new();
        let mut order: Vec<usize> = (0..self.boxes.len()).collect();
        order.sort_by(|a, b| {
            self.boxes[*b]
                .volume()
                .partial_cmp(&self.boxes[*a].volume())
                .unwrap()
        });
        for idx in order {
            let b = &self.boxes[idx];
            if !keep.iter().any(|k| b.is_subset_of(k)) {
                keep.push(b.clone());
            }
        }
        self.boxes = keep;
    }

    pub fn union(&self, other: &BoxUnion) -> BoxUnion {
        let mut boxes = self.boxes.clone();
        boxes.extend(other.boxes.iter().cloned());
        BoxUnion::from_boxes(self.dim, boxes)
    }

    pub fn intersect(&self, other: &BoxUnion) -> BoxUnion {
        let mut out = Vec::new();
        for a in &self.boxes {
            for b in &other.boxes {
                if let Some(c) = a.intersect(b) {
                    out.push(c);
                }
            }
        }
        BoxUnion::from_boxes(self.dim, out)
    }

    pub fn subtract(&self, other: &BoxUnion) -> BoxUnion {
        let mut pieces = self.boxes.clone();
        for b in &other.boxes {
            pieces = pieces.iter().flat_map(|p| p.subtract(b)).collect();
        }
        BoxUnion::from_boxes(self.dim, pieces)
    }

    /// Complement relative to `universe`.
    pub fn complement(&self, universe: &AxisBox) -> BoxUnion {
        BoxUnion::single(universe.clone()).subtract(self)
    }

    pub fn dilate(&self, radius: &[f64]) -> BoxUnion {
        let boxes = self.boxes.iter().filter_map(|b| b.dilate(radius)).collect();
        BoxUnion::from_boxes(self.dim, boxes)
    }

    /// Minkowski erosion by a symmetric box radius, exact via the duality
    /// `erode(S) = ¬ dilate(¬S)` evaluated inside a padded universe.
    pub fn erode(&self, radius: &[f64], universe: &AxisBox) -> BoxUnion {
        let pad = universe.dilate(&radius.iter().map(|r| r + 1.0).collect::<Vec<_>>()).unwrap();
        let comp = BoxUnion::single(pad.clone()).subtract(self);
        let grown = comp.dilate(radius);
        BoxUnion::single(universe.clone()).subtract(&grown)
    }

    pub fn is_subset_of(&self, other: &BoxUnion) -> bool {
        self.subtract(other).is_empty()
    }

    pub fn set_eq(&self, other: &BoxUnion) -> bool {
        self.is_subset_of(other) && other.is_subset_of(self)
    }
}

fn try_merge(a: &AxisBox, b: &AxisBox) -> Option<AxisBox> {
    let mut diff_dim = None;
    for d in 0..a.dim() {
        if (a.lo[d] - b.lo[d]).abs() > EPS || (a.hi[d] - b.hi[d]).abs() > EPS {
            if diff_dim.is_some() {
                return None;
            }
            diff_dim = Some(d);
        }
    }
    let Some(d) = diff_dim else { return Some(a.clone()) };
    if a.lo[d] <= b.hi[d] + EPS && b.lo[d] <= a.hi[d] + EPS {
        let mut m = a.clone();
        m.lo[d] = a.lo[d].min(b.lo[d]);
        m.hi[d] = a.hi[d].max(b.hi[d]);
        Some(m)
    } else {
        None
    }
}

/// Rectangular lattice: dimension `d` spans `lo[d] .. lo[d] + cells[d]*step[d]`.
/// Wrapped dimensions (heading angles) identify the two ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub lo: Vec<f64>,
    pub step: Vec<f64>,
    pub cells: Vec<usize>,
    pub wrap: Vec<bool>,
}

impl Lattice {
    pub fn new(lo: Vec<f64>, step: Vec<f64>, cells: Vec<usize>, wrap: Vec<bool>) -> Self {
        assert!(step.iter().all(|s| *s > 0.0) && cells.iter().all(|c| *c > 0));
        Lattice { lo, step, cells, wrap }
    }

    /// Uniform-resolution lattice covering `bbox`.
    pub fn covering(bbox: &AxisBox, res: f64) -> Self {
        let cells: Vec<usize> = (0..bbox.dim())
            .map(|d| (((bbox.hi[d] - bbox.lo[d]) / res) - EPS).ceil().max(1.0) as usize)
            .collect();
        Lattice::new(bbox.lo.clone(), vec![res; bbox.dim()], cells, vec![false; bbox.dim()])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hi(&self) -> Vec<f64> {
        (0..self.dim()).map(|d| self.lo[d] + self.step[d] * self.cells[d] as f64).collect()
    }

    /// Cell holding `x`; boundary ties go to the lower-index cell.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0usize;
        for d in 0..self.dim() {
            let span = self.step[d] * self.cells[d] as f64;
            let mut v = x[d] - self.lo[d];
            if self.wrap[d] {
                v = v.rem_euclid(span);
            }
            if v < -EPS || v > span + EPS {
                return None;
            }
            let rel = v / self.step[d];
            let mut i = rel.floor() as i64;
            if rel - rel.floor() < EPS && i > 0 {
                i -= 1; // tie on a cell boundary: lower cell wins
            }
            let i = (i.max(0) as usize).min(self.cells[d] - 1);
            idx = idx * self.cells[d] + i;
        }
        Some(idx)
    }

    pub fn cell_center(&self, mut flat: usize) -> Vec<f64> {
        let mut coords = vec![0usize; self.dim()];
        for d in (0..self.dim()).rev() {
            coords[d] = flat % self.cells[d];
            flat /= self.cells[d];
        }
        (0..self.dim())
            .map(|d| self.lo[d] + (coords[d] as f64 + 0.5) * self.step[d])
            .collect()
    }

    pub fn cell_corners(&self, flat: usize) -> Vec<Vec<f64>> {
        let c = self.cell_center(flat);
        let n = self.dim();
        (0..1usize << n)
            .map(|bits| {
                (0..n)
                    .map(|d| c[d] + if bits >> d & 1 == 1 { 0.5 } else { -0.5 } * self.step[d])
                    .collect()
            })
            .collect()
    }
}

/// Boolean occupancy mask over a [`Lattice`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMask {
    pub lattice: Lattice,
    pub mask: Vec<bool>,
}

impl GridMask {
    pub fn empty(lattice: Lattice) -> Self {
        let n = lattice.len();
        GridMask { lattice, mask: vec![false; n] }
    }

    pub fn full(lattice: Lattice) -> Self {
        let n = lattice.len();
        GridMask { lattice, mask: vec![true; n] }
    }

    /// Rasterize a box union: a cell is set when its center lies inside
    /// (plus all 2^n corners when `conservative`).
    pub fn rasterize(lattice: Lattice, bu: &BoxUnion, conservative: bool) -> Self {
        let mask = (0..lattice.len())
            .into_par_iter()
            .map(|i| {
                let inside = bu.contains(&lattice.cell_center(i));
                if inside && conservative {
                    lattice.cell_corners(i).iter().all(|corner| bu.contains(corner))
                } else {
                    inside
                }
            })
            .collect();
        GridMask { lattice, mask }
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|b| **b).count()
    }

    fn check_lattice(&self, other: &GridMask) -> Result<()> {
        if self.lattice != other.lattice {
            return Err(Error::LatticeMismatch);
        }
        Ok(())
    }

    pub fn zip(&self, other: &GridMask, f: impl Fn(bool, bool) -> bool + Sync) -> Result<GridMask> {
        self.check_lattice(other)?;
        let mask = self.mask.iter().zip(&other.mask).map(|(a, b)| f(*a, *b)).collect();
        Ok(GridMask { lattice: self.lattice.clone(), mask })
    }

    pub fn complement(&self) -> GridMask {
        GridMask {
            lattice: self.lattice.clone(),
            mask: self.mask.iter().map(|b| !b).collect(),
        }
    }
}

/// A subset of the state space.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Region {
    Boxes(BoxUnion),
    Grid(GridMask),
}

impl Region {
    pub fn empty_boxes(dim: usize) -> Region {
        Region::Boxes(BoxUnion::empty(dim))
    }

    pub fn from_box(b: AxisBox) -> Region {
        Region::Boxes(BoxUnion::single(b))
    }

    pub fn dim(&self) -> usize {
        match self {
            Region::Boxes(b) => b.dim,
            Region::Grid(g) => g.lattice.dim(),
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Region::Boxes(b) => b.is_empty(),
            Region::Grid(g) => g.count() == 0,
        }
    }

    /// Membership test. Grid masks reject states outside the bounding box.
    pub fn member(&self, x: &[f64]) -> Result<bool> {
        match self {
            Region::Boxes(b) => Ok(b.contains(x)),
            Region::Grid(g) => {
                let idx = g.lattice.locate(x).ok_or_else(|| Error::OutOfDomain(x.to_vec()))?;
                Ok(g.mask[idx])
            }
        }
    }

    pub fn union(&self, other: &Region) -> Result<Region> {
        binop(self, other, BoxUnion::union, |a, b| a.zip(b, |x, y| x || y))
    }

    pub fn intersect(&self, other: &Region) -> Result<Region> {
        binop(self, other, BoxUnion::intersect, |a, b| a.zip(b, |x, y| x && y))
    }

    pub fn difference(&self, other: &Region) -> Result<Region> {
        binop(self, other, BoxUnion::subtract, |a, b| a.zip(b, |x, y| x && !y))
    }

    /// Complement relative to the workspace bounding box (ignored for grids,
    /// whose lattice already fixes the universe).
    pub fn complement(&self, universe: &AxisBox) -> Region {
        match self {
            Region::Boxes(b) => Region::Boxes(b.complement(universe)),
            Region::Grid(g) => Region::Grid(g.complement()),
        }
    }

    pub fn is_subset_of(&self, other: &Region) -> Result<bool> {
        match (self, other) {
            (Region::Boxes(a), Region::Boxes(b)) => Ok(a.is_subset_of(b)),
            (Region::Grid(a), Region::Grid(b)) => {
                a.check_lattice(b)?;
                Ok(a.mask.iter().zip(&b.mask).all(|(x, y)| !*x || *y))
            }
            _ => Err(Error::LatticeMismatch),
        }
    }

    pub fn set_eq(&self, other: &Region) -> Result<bool> {
        Ok(self.is_subset_of(other)? && other.is_subset_of(self)?)
    }

    pub fn as_boxes(&self) -> Option<&BoxUnion> {
        match self {
            Region::Boxes(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_grid(&self) -> Option<&GridMask> {
        match self {
            Region::Grid(g) => Some(g),
            _ => None,
        }
    }

    /// The single box of a one-box region, if it is one.
    pub fn single_box(&self) -> Option<&AxisBox> {
        match self {
            Region::Boxes(b) if b.boxes.len() == 1 => Some(&b.boxes[0]),
            _ => None,
        }
    }
}

fn binop(
    a: &Region,
    b: &Region,
    boxes: impl Fn(&BoxUnion, &BoxUnion) -> BoxUnion,
    grids: impl Fn(&GridMask, &GridMask) -> Result<GridMask>,
) -> Result<Region> {
    match (a, b) {
        (Region::Boxes(x), Region::Boxes(y)) => Ok(Region::Boxes(boxes(x, y))),
        (Region::Grid(x), Region::Grid(y)) => Ok(Region::Grid(grids(x, y)?)),
        _ => Err(Error::LatticeMismatch),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredMode {
    Exists,
    Forall,
}

/// Cached cell-to-cell transition table for one (dynamics, lattice, inputs)
/// triple. Backward steps become pure index gathers.
pub struct GridContext {
    pub lattice: Lattice,
    n_inputs: usize,
    /// `targets[cell * n_inputs + j]`: destination cell, `u32::MAX` = exits.
    targets: Vec<u32>,
}

impl GridContext {
    pub fn new(dynamics: &Dynamics, lattice: Lattice, inputs: &InputGrid) -> Self {
        let n_inputs = inputs.samples.len();
        let targets: Vec<u32> = (0..lattice.len())
            .into_par_iter()
            .flat_map_iter(|i| {
                let x = lattice.cell_center(i);
                let lat = &lattice;
                let dynamics = dynamics.clone();
                inputs.samples.iter().map(move |u| {
                    let next = dynamics.step(&x, u);
                    lat.locate(&next).map(|c| c as u32).unwrap_or(u32::MAX)
                })
            })
            .collect();
        GridContext { lattice, n_inputs, targets }
    }

    pub fn pred(&self, region: &GridMask, mode: PredMode) -> Result<GridMask> {
        if region.lattice != self.lattice {
            return Err(Error::LatticeMismatch);
        }
        let mask: Vec<bool> = (0..self.lattice.len())
            .into_par_iter()
            .map(|i| {
                let row = &self.targets[i * self.n_inputs..(i + 1) * self.n_inputs];
                let hit = |t: &u32| *t != u32::MAX && region.mask[*t as usize];
                match mode {
                    PredMode::Exists => row.iter().any(hit),
                    PredMode::Forall => row.iter().all(hit),
                }
            })
            .collect();
        Ok(GridMask { lattice: self.lattice.clone(), mask })
    }
}

/// One-step predecessor r(R): `exists` returns `{x | ∃u: f(x,u) ∈ R}`,
/// `forall` returns `{x | ∀u: f(x,u) ∈ R}`.
///
/// Box unions take the exact Minkowski fast path for translation-invariant
/// dynamics (dilation for `exists`, erosion for `forall`); anything else must
/// be rasterized first. Grid masks are evaluated cell-center-wise.
pub fn one_step_pred(
    dynamics: &Dynamics,
    region: &Region,
    inputs: &InputGrid,
    mode: PredMode,
    workspace: &AxisBox,
) -> Result<Region> {
    match region {
        Region::Boxes(b) => {
            if !dynamics.translation_invariant() {
                return Err(Error::UnsupportedFastPath);
            }
            let radius = dynamics.input_step_radius();
            Ok(Region::Boxes(match mode {
                PredMode::Exists => b.dilate(&radius),
                PredMode::Forall => b.erode(&radius, workspace),
            }))
        }
        Region::Grid(g) => {
            let ctx = GridContext::new(dynamics, g.lattice.clone(), inputs);
            Ok(Region::Grid(ctx.pred(g, mode)?))
        }
    }
}
