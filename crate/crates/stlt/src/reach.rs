//! Windowed maximal/minimal reachable sets by backward value iteration, and
//! the satisfying-set constructors for single temporal operators.

use crate::dynamics::{Dynamics, InputGrid};
use crate::error::Result;
use crate::formula::TimeWindow;
use crate::sets::{one_step_pred, AxisBox, GridContext, PredMode, Region};

/// Shared context for a batch of reachability computations: fixed dynamics,
/// input samples, workspace bounding box, and (for grid regions) a cached
/// cell transition table.
pub struct Reachability {
    pub dynamics: Dynamics,
    pub inputs: InputGrid,
    pub workspace: AxisBox,
    grid: Option<GridContext>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TemporalOp {
    Eventually,
    Always,
    Until,
}

impl Reachability {
    pub fn new(dynamics: Dynamics, inputs: InputGrid, workspace: AxisBox) -> Self {
        Reachability { dynamics, inputs, workspace, grid: None }
    }

    /// Precompute the transition table for a lattice so grid pullbacks become
    /// index gathers.
    pub fn with_lattice(mut self, lattice: crate::sets::Lattice) -> Self {
        self.grid = Some(GridContext::new(&self.dynamics, lattice, &self.inputs));
        self
    }

    pub fn grid_context(&self) -> Option<&GridContext> {
        self.grid.as_ref()
    }

    pub fn pred(&self, region: &Region, mode: PredMode) -> Result<Region> {
        match (region, &self.grid) {
            (Region::Grid(g), Some(ctx)) => Ok(Region::Grid(ctx.pred(g, mode)?)),
            _ => one_step_pred(&self.dynamics, region, &self.inputs, mode, &self.workspace),
        }
    }

    /// Maximal reachable set `ℛᴹ(target, [a,b])`: states from which some
    /// input signal reaches the target at some step in the window.
    pub fn max_reach(&self, target: &Region, window: TimeWindow) -> Result<Region> {
        self.pullback(target, window, PredMode::Exists)
    }

    /// Minimal reachable set `ℛᵐ(target, [a,b])`: states that reach the
    /// target at some step in the window no matter what input is applied.
    pub fn min_reach(&self, target: &Region, window: TimeWindow) -> Result<Region> {
        self.pullback(target, window, PredMode::Forall)
    }

    fn pullback(&self, target: &Region, window: TimeWindow, mode: PredMode) -> Result<Region> {
        let mut v = target.clone();
        for k in (0..window.b).rev() {
            let mut next = self.pred(&v, mode)?;
            if k >= window.a {
                next = next.union(target)?;
            }
            v = next;
        }
        Ok(v)
    }

    /// Constrained maximal reach for Until: hit `target` within the window
    /// while every earlier step (and the hit itself) stays in `constraint`.
    pub fn constrained_max_reach(
        &self,
        constraint: &Region,
        target: &Region,
        window: TimeWindow,
    ) -> Result<Region> {
        let hit = constraint.intersect(target)?;
        let mut v = hit.clone();
        for k in (0..window.b).rev() {
            let mut next = self.pred(&v, PredMode::Exists)?;
            if k >= window.a {
                next = next.union(&hit)?;
            }
            v = next.intersect(constraint)?;
        }
        Ok(v)
    }

    /// Satisfying set of one temporal operator applied to region arguments:
    /// `F[a,b] S`, `G[a,b] S`, or `S1 U[a,b] S2`.
    pub fn satisfying_set(
        &self,
        op: TemporalOp,
        window: TimeWindow,
        arg1: &Region,
        arg2: Option<&Region>,
    ) -> Result<Region> {
        match op {
            TemporalOp::Eventually => self.max_reach(arg1, window),
            TemporalOp::Always => {
                let comp = arg1.complement(&self.workspace);
                let m = self.min_reach(&comp, window)?;
                Ok(m.complement(&self.workspace))
            }
            TemporalOp::Until => {
                let target = arg2.expect("Until takes two region arguments");
                self.constrained_max_reach(arg1, target, window)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::{Formula, Predicate};
    use crate::sets::{GridMask, Lattice};
    use std::collections::BTreeMap;

    fn integrator() -> Reachability {
        let dynamics = Dynamics::integrator2d(1.0, [1.0, 1.0]);
        let inputs = InputGrid::axis_grid(&dynamics.input_bounds(), 3);
        let ws = AxisBox::from_intervals(&[[-18.5, 18.5], [-18.5, 18.5]]);
        Reachability::new(dynamics, inputs, ws)
    }

    fn walk(lo: f64, hi: f64) -> Reachability {
        let dynamics = Dynamics::walk1d(lo, hi);
        let inputs = InputGrid::axis_grid(&dynamics.input_bounds(), 3);
        let ws = AxisBox::from_intervals(&[[lo - 0.5, hi + 0.5]]);
        Reachability::new(dynamics, inputs, ws)
    }

    fn walk_cells(lo: f64, hi: f64) -> Lattice {
        let n = (hi - lo) as usize + 1;
        Lattice::new(vec![lo - 0.5], vec![1.0], vec![n], vec![false])
    }

    fn cells_to_region(lat: &Lattice, cells: &[i64], lo: f64) -> Region {
        let mut m = GridMask::empty(lat.clone());
        for c in cells {
            let idx = lat.locate(&[*c as f64]).unwrap();
            m.mask[idx] = true;
        }
        let _ = lo;
        Region::Grid(m)
    }

    /// All trajectories of the walk under every input sequence of length `n`.
    fn enumerate_walk(dynamics: &Dynamics, start: f64, n: usize) -> Vec<Vec<Vec<f64>>> {
        let mut out = Vec::new();
        for seq in 0..3usize.pow(n as u32) {
            let mut s = seq;
            let mut traj = vec![vec![start]];
            for _ in 0..n {
                let u = (s % 3) as f64 - 1.0;
                s /= 3;
                traj.push(dynamics.step(traj.last().unwrap(), &[u]));
            }
            out.push(traj);
        }
        out
    }

    #[test]
    fn eq22_style_dilation() {
        let r = integrator();
        let target = Region::from_box(AxisBox::from_intervals(&[[1.5, 4.5], [-4.5, -1.5]]));
        let got = r.max_reach(&target, TimeWindow { a: 0, b: 14 }).unwrap();
        let want = Region::from_box(AxisBox::from_intervals(&[[-12.5, 18.5], [-18.5, 12.5]]));
        assert!(got.set_eq(&want).unwrap());
    }

    #[test]
    fn zero_window_is_identity() {
        let r = integrator();
        let target = Region::from_box(AxisBox::from_intervals(&[[0.0, 1.0], [0.0, 1.0]]));
        for f in [Reachability::max_reach, Reachability::min_reach] {
            let got = f(&r, &target, TimeWindow { a: 0, b: 0 }).unwrap();
            assert!(got.set_eq(&target).unwrap());
        }
    }

    #[test]
    fn walk_max_reach_matches_brute_force() {
        let r = walk(-5.0, 5.0);
        let lat = walk_cells(-5.0, 5.0);
        let target = cells_to_region(&lat, &[2], -5.0);
        let got = r.max_reach(&target, TimeWindow { a: 1, b: 2 }).unwrap();
        // brute force over all input sequences of length 2
        let mut want = GridMask::empty(lat.clone());
        for start in -5..=5 {
            let reached = enumerate_walk(&r.dynamics, start as f64, 2).iter().any(|traj| {
                (1..=2).any(|t| traj[t][0] == 2.0)
            });
            if reached {
                want.mask[lat.locate(&[start as f64]).unwrap()] = true;
            }
        }
        assert!(got.set_eq(&Region::Grid(want)).unwrap());
        // spec example: {0,1,2,3,4}
        for x in -5..=5 {
            assert_eq!(
                got.member(&[x as f64]).unwrap(),
                (0..=4).contains(&x),
                "state {x}"
            );
        }
    }

    #[test]
    fn min_reach_erosion_and_duality() {
        let r = integrator();
        let target = Region::from_box(AxisBox::from_intervals(&[[-3.0, 3.0], [-3.0, 3.0]]));
        let got = r.min_reach(&target, TimeWindow { a: 1, b: 1 }).unwrap();
        let want = Region::from_box(AxisBox::from_intervals(&[[-2.0, 2.0], [-2.0, 2.0]]));
        assert!(got.set_eq(&want).unwrap());

        // trap case: the whole workspace is inescapable for the clamped walk
        let w = walk(-3.0, 3.0);
        let lat = walk_cells(-3.0, 3.0);
        let all = Region::Grid(GridMask::full(lat));
        let got = w.min_reach(&all, TimeWindow { a: 0, b: 2 }).unwrap();
        assert!(got.set_eq(&all).unwrap());
    }

    #[test]
    fn satisfying_sets_reproduce_printed_values() {
        let r = integrator();
        let mu1 = Region::from_box(AxisBox::from_intervals(&[[-4.5, -1.5], [-4.5, -1.5]]));
        let x3 = r
            .satisfying_set(TemporalOp::Eventually, TimeWindow { a: 2, b: 10 }, &mu1, None)
            .unwrap();
        let want = Region::from_box(AxisBox::from_intervals(&[[-14.5, 8.5], [-14.5, 8.5]]));
        assert!(x3.set_eq(&want).unwrap());

        // the F-set is controlled-invariant, so the G-set equals it
        let x1 = r
            .satisfying_set(TemporalOp::Always, TimeWindow { a: 0, b: 16 }, &x3, None)
            .unwrap();
        assert!(x1.set_eq(&want).unwrap());
    }

    #[test]
    fn until_satisfying_set_brute_force() {
        let r = walk(-5.0, 5.0);
        let lat = walk_cells(-5.0, 5.0);
        let s1 = cells_to_region(&lat, &[0, 1, 2, 3, 4], -5.0);
        let s2 = cells_to_region(&lat, &[4], -5.0);
        let got = r
            .satisfying_set(TemporalOp::Until, TimeWindow { a: 1, b: 2 }, &s1, Some(&s2))
            .unwrap();
        // oracle: direct U semantics over all length-2 input sequences
        let table: BTreeMap<String, Predicate> = [
            ("s1".to_string(), Predicate::new_box("s1", &[[0.0, 4.0]])),
            ("s2".to_string(), Predicate::new_box("s2", &[[4.0, 4.0]])),
        ]
        .into();
        let phi = Formula::parse("s1 U[1,2] s2", &table).unwrap();
        for start in -5..=5 {
            let sat = enumerate_walk(&r.dynamics, start as f64, 2)
                .iter()
                .any(|traj| phi.holds_at(traj, 0));
            assert_eq!(
                got.member(&[start as f64]).unwrap(),
                sat,
                "state {start}"
            );
        }
    }

    #[test]
    fn g_subsets_f_at_zero_anchor() {
        let r = integrator();
        for (lo, hi) in [(-4.0, -1.0), (0.5, 3.5), (-2.0, 2.0)] {
            let s = Region::from_box(AxisBox::from_intervals(&[[lo, hi], [lo, hi]]));
            let w = TimeWindow { a: 0, b: 5 };
            let f = r.satisfying_set(TemporalOp::Eventually, w, &s, None).unwrap();
            let g = r.satisfying_set(TemporalOp::Always, w, &s, None).unwrap();
            assert!(g.is_subset_of(&f).unwrap());
        }
    }

    #[test]
    fn max_reach_monotone_in_target_and_window() {
        let r = integrator();
        let small = Region::from_box(AxisBox::from_intervals(&[[0.0, 1.0], [0.0, 1.0]]));
        let big = Region::from_box(AxisBox::from_intervals(&[[-1.0, 2.0], [-1.0, 2.0]]));
        let w1 = TimeWindow { a: 1, b: 3 };
        let w2 = TimeWindow { a: 0, b: 5 };
        let rs = r.max_reach(&small, w1).unwrap();
        let rb = r.max_reach(&big, w1).unwrap();
        let rw = r.max_reach(&small, w2).unwrap();
        assert!(rs.is_subset_of(&rb).unwrap());
        assert!(rs.is_subset_of(&rw).unwrap());
    }

    #[test]
    fn box_fast_path_agrees_with_grid() {
        let dynamics = Dynamics::integrator2d(1.0, [1.0, 1.0]);
        let inputs = InputGrid::axis_grid(&dynamics.input_bounds(), 3);
        let ws = AxisBox::from_intervals(&[[-18.5, 18.5], [-18.5, 18.5]]);
        let lat = Lattice::covering(&ws, 0.25);
        let boxes = Region::from_box(AxisBox::from_intervals(&[[-4.5, -1.5], [-4.5, -1.5]]));
        let grid = Region::Grid(GridMask::rasterize(
            lat.clone(),
            boxes.as_boxes().unwrap(),
            false,
        ));
        let rb = Reachability::new(dynamics.clone(), inputs.clone(), ws.clone());
        let rg = Reachability::new(dynamics, inputs, ws.clone()).with_lattice(lat.clone());
        let w = TimeWindow { a: 2, b: 10 };
        let want = rb.max_reach(&boxes, w).unwrap();
        let got = rg.max_reach(&grid, w).unwrap();
        // grid result within one cell of the exact box answer
        let g = got.as_grid().unwrap();
        let exact = want.as_boxes().unwrap();
        let grown = exact.dilate(&[0.25, 0.25]);
        let shrunk = exact.erode(&[0.25, 0.25], &ws);
        for i in 0..lat.len() {
            let c = lat.cell_center(i);
            if g.mask[i] {
                assert!(grown.contains(&c), "stray cell at {c:?}");
            } else {
                assert!(!shrunk.contains(&c), "missing cell at {c:?}");
            }
        }
    }
}
