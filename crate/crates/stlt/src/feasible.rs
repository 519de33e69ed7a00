//! Offline computation of fault-tolerant feasible set tables: for every step
//! `t` and every potential set `I'` of still-unsatisfied fragment indices,
//! the set of states from which the remaining obligations can still be met.
//!
//! The backward recursion unions, over the valid successor index sets `I''`,
//! the consistent region of the transition intersected with the one-step
//! predecessor of the next entry. Index-set bookkeeping follows the latching
//! semantics the oracle tests pin down: a satisfied U/F fragment stays
//! satisfied, an effective G fragment stays obligated, and a U/F fragment
//! must still be unsatisfied when its window opens.

use crate::error::{Error, Result};
use crate::formula::{FlatFragment, FragmentOp};
use crate::reach::Reachability;
use crate::sets::{PredMode, Region};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub type IndexMask = u32;

pub fn mask_contains(mask: IndexMask, i: usize) -> bool {
    mask >> i & 1 == 1
}

/// Fragment indices effective at `t` (window contains `t`).
pub fn effective_at(fragments: &[FlatFragment], t: usize) -> IndexMask {
    fragments
        .iter()
        .filter(|f| f.window.a <= t && t <= f.window.b)
        .fold(0, |m, f| m | 1 << f.index)
}

pub fn expired_before(fragments: &[FlatFragment], t: usize) -> IndexMask {
    fragments.iter().filter(|f| f.window.b < t).fold(0, |m, f| m | 1 << f.index)
}

pub fn future_after(fragments: &[FlatFragment], t: usize) -> IndexMask {
    fragments.iter().filter(|f| f.window.a > t).fold(0, |m, f| m | 1 << f.index)
}

fn until_or_eventually(fragments: &[FlatFragment]) -> IndexMask {
    fragments
        .iter()
        .filter(|f| matches!(f.op, FragmentOp::Until | FragmentOp::Eventually))
        .fold(0, |m, f| m | 1 << f.index)
}

/// All potential index sets at step `t`: no expired fragment remains, all
/// future fragments remain, effective G fragments remain, and effective U/F
/// fragments are forced to remain exactly when their window opens.
pub fn potential_index_sets(fragments: &[FlatFragment], t: usize) -> Vec<IndexMask> {
    let n = fragments.len();
    let expired = expired_before(fragments, t);
    let mut forced = future_after(fragments, t);
    let mut free = 0u32;
    for f in fragments {
        if f.window.a <= t && t <= f.window.b {
            match f.op {
                FragmentOp::Always => forced |= 1 << f.index,
                FragmentOp::Until | FragmentOp::Eventually => {
                    if f.window.a == t {
                        forced |= 1 << f.index;
                    } else {
                        free |= 1 << f.index;
                    }
                }
            }
        }
    }
    (0..(1u32 << n))
        .filter(|mask| mask & expired == 0 && mask & forced == forced && mask & !(forced | free) == 0)
        .collect()
}

/// Valid successor sets of `i_prime` at the `t → t+1` transition: members of
/// the next step's potential sets in which no already-satisfied U/F fragment
/// reappears.
pub fn successors(i_prime: IndexMask, t: usize, fragments: &[FlatFragment]) -> Vec<IndexMask> {
    let next_eff = effective_at(fragments, t + 1);
    let uf = until_or_eventually(fragments);
    potential_index_sets(fragments, t + 1)
        .into_iter()
        .filter(|i_next| i_next & next_eff & uf & !i_prime == 0)
        .collect()
}

/// Fragments discharged on the `t → t+1` transition: remaining U/F fragments
/// effective at `t` that do not carry over.
pub fn sat_set(
    i_prime: IndexMask,
    i_next: IndexMask,
    t: usize,
    fragments: &[FlatFragment],
) -> IndexMask {
    i_prime & effective_at(fragments, t) & until_or_eventually(fragments) & !i_next
}

/// Consistent region of a transition: intersection over remaining effective
/// fragments of the hit region `H¹ ∩ H²` (discharged now), the hold region
/// for G, or the deferral region `H¹ \ H²` for U/F staying unsatisfied.
pub fn consistent_region(
    i_prime: IndexMask,
    i_next: IndexMask,
    t: usize,
    fragments: &[FlatFragment],
    universe: &Region,
) -> Result<Region> {
    let sat = sat_set(i_prime, i_next, t, fragments);
    let eff = effective_at(fragments, t);
    let mut region = universe.clone();
    for f in fragments {
        if !mask_contains(i_prime & eff, f.index) {
            continue;
        }
        let h = if mask_contains(sat, f.index) {
            f.h1.intersect(&f.h2)?
        } else {
            match f.op {
                FragmentOp::Always => f.h1.clone(),
                FragmentOp::Until | FragmentOp::Eventually => f.h1.difference(&f.h2)?,
            }
        };
        region = region.intersect(&h)?;
    }
    Ok(region)
}

/// The `(t, I')`-indexed family of fault-tolerant feasible sets.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeasibleTable {
    pub horizon: usize,
    pub entries: Vec<BTreeMap<IndexMask, Region>>,
}

impl FeasibleTable {
    /// Entry lookup. Index sets that are not potential at `t` (some fragment
    /// expired unsatisfied) have failed; `None` stands for their empty set.
    pub fn get(&self, t: usize, mask: IndexMask) -> Result<Option<&Region>> {
        if t >= self.entries.len() {
            return Err(Error::TableMissing { step: t, mask });
        }
        Ok(self.entries[t].get(&mask))
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let index = serde_json::json!({
            "horizon": self.horizon,
            "steps": self.entries.iter()
                .map(|e| e.keys().copied().collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        });
        std::fs::write(dir.join("index.json"), serde_json::to_string_pretty(&index)?)?;
        for (t, step) in self.entries.iter().enumerate() {
            std::fs::write(dir.join(format!("step_{t:03}.json")), serde_json::to_string(step)?)?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<FeasibleTable> {
        let index: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("index.json"))?)?;
        let horizon = index["horizon"]
            .as_u64()
            .ok_or_else(|| Error::Scenario("bad table index".into()))? as usize;
        let mut entries = Vec::with_capacity(horizon + 1);
        for t in 0..=horizon {
            let f = dir.join(format!("step_{t:03}.json"));
            entries.push(serde_json::from_str(&std::fs::read_to_string(f)?)?);
        }
        Ok(FeasibleTable { horizon, entries })
    }
}

/// Backward recursion over `[0, T]`: the terminal entry intersects the hit
/// regions of everything still remaining, earlier entries union consistent
/// regions with one-step predecessors over valid successors.
pub fn compute_table(
    fragments: &[FlatFragment],
    reach: &Reachability,
    horizon: usize,
    universe: &Region,
) -> Result<FeasibleTable> {
    let mut entries: Vec<BTreeMap<IndexMask, Region>> = vec![BTreeMap::new(); horizon + 1];
    for i_prime in potential_index_sets(fragments, horizon) {
        let mut region = universe.clone();
        for f in fragments {
            if !mask_contains(i_prime, f.index) {
                continue;
            }
            let h = match f.op {
                FragmentOp::Always => f.h1.clone(),
                FragmentOp::Until | FragmentOp::Eventually => f.h1.intersect(&f.h2)?,
            };
            region = region.intersect(&h)?;
        }
        entries[horizon].insert(i_prime, region);
    }
    for t in (0..horizon).rev() {
        // one predecessor computation per successor set, shared across I'
        let mut preds: BTreeMap<IndexMask, Region> = BTreeMap::new();
        for (mask, region) in &entries[t + 1] {
            preds.insert(*mask, reach.pred(region, PredMode::Exists)?);
        }
        for i_prime in potential_index_sets(fragments, t) {
            let mut x = universe.difference(universe)?;
            for i_next in successors(i_prime, t, fragments) {
                let Some(pre) = preds.get(&i_next) else { continue };
                let h = consistent_region(i_prime, i_next, t, fragments, universe)?;
                x = x.union(&h.intersect(pre)?)?;
            }
            entries[t].insert(i_prime, x);
        }
    }
    Ok(FeasibleTable { horizon, entries })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dynamics::{Dynamics, InputGrid};
    use crate::formula::TimeWindow;
    use crate::sets::{AxisBox, GridMask, Lattice};

    pub(crate) fn walk_setup(k: i64) -> (Dynamics, Reachability, Lattice) {
        let dynamics = Dynamics::walk1d(-(k as f64), k as f64);
        let inputs = InputGrid::axis_grid(&dynamics.input_bounds(), 3);
        let ws = AxisBox::from_intervals(&[[-(k as f64) - 0.5, k as f64 + 0.5]]);
        let lat =
            Lattice::new(vec![-(k as f64) - 0.5], vec![1.0], vec![2 * k as usize + 1], vec![false]);
        let reach = Reachability::new(dynamics.clone(), inputs, ws).with_lattice(lat.clone());
        (dynamics, reach, lat)
    }

    pub(crate) fn cells(lat: &Lattice, xs: &[i64]) -> Region {
        let mut m = GridMask::empty(lat.clone());
        for x in xs {
            m.mask[lat.locate(&[*x as f64]).unwrap()] = true;
        }
        Region::Grid(m)
    }

    pub(crate) fn frag(
        index: usize,
        op: FragmentOp,
        a: usize,
        b: usize,
        h1: Region,
        h2: Region,
    ) -> FlatFragment {
        FlatFragment { index, op, window: TimeWindow { a, b }, h1, h2 }
    }

    /// Brute-force remaining-formula feasibility: enumerate every input
    /// sequence from (t, x) and test each remaining fragment on the suffix.
    pub(crate) fn oracle_feasible(
        fragments: &[FlatFragment],
        dynamics: &Dynamics,
        horizon: usize,
        t: usize,
        mask: IndexMask,
        x: f64,
    ) -> bool {
        if mask & expired_before(fragments, t) != 0 {
            return false;
        }
        let n = horizon - t;
        for seq in 0..3usize.pow(n as u32) {
            let mut s = seq;
            let mut states = vec![vec![x]; t + 1];
            for _ in 0..n {
                let u = (s % 3) as f64 - 1.0;
                s /= 3;
                states.push(dynamics.step(states.last().unwrap(), &[u]));
            }
            let ok = fragments
                .iter()
                .filter(|f| mask_contains(mask, f.index))
                .all(|f| f.suffix_satisfied(&states, t));
            if ok {
                return true;
            }
        }
        false
    }

    #[test]
    fn potential_sets_examples() {
        let (_, _, lat) = walk_setup(3);
        let all = cells(&lat, &[-3, -2, -1, 0, 1, 2, 3]);
        let target = cells(&lat, &[2]);
        // both windows start later: exactly one potential set, I' = I
        let frags = vec![
            frag(0, FragmentOp::Always, 1, 3, all.clone(), all.clone()),
            frag(1, FragmentOp::Eventually, 2, 4, all.clone(), target.clone()),
        ];
        assert_eq!(potential_index_sets(&frags, 0), vec![0b11]);
        // past the G window it may not remain; the F is still effective
        assert_eq!(potential_index_sets(&frags, 4), vec![0b00, 0b10]);
        // {G[0,4], F[2,6]} at t=3: G forced in, F free
        let frags = vec![
            frag(0, FragmentOp::Always, 0, 4, all.clone(), all.clone()),
            frag(1, FragmentOp::Eventually, 2, 6, all.clone(), target.clone()),
        ];
        assert_eq!(potential_index_sets(&frags, 3), vec![0b01, 0b11]);
        // at the F window opening the F fragment is forced in
        assert_eq!(potential_index_sets(&frags, 2), vec![0b11]);
    }

    #[test]
    fn successor_examples() {
        let (_, _, lat) = walk_setup(3);
        let all = cells(&lat, &[-3, -2, -1, 0, 1, 2, 3]);
        let t2 = cells(&lat, &[2]);
        let t0 = cells(&lat, &[0]);
        let frags = vec![
            frag(0, FragmentOp::Until, 0, 3, all.clone(), t2.clone()),
            frag(1, FragmentOp::Eventually, 1, 3, all.clone(), t0.clone()),
        ];
        // unsatisfied U and F fragments still effective may stay or latch
        let succ = successors(0b11, 1, &frags);
        assert_eq!(succ, vec![0b00, 0b01, 0b10, 0b11]);
        // a satisfied U fragment never reappears
        let succ = successors(0b10, 1, &frags);
        assert_eq!(succ, vec![0b00, 0b10]);
        // nothing effective at t+1: the single successor is empty
        let late = vec![frag(0, FragmentOp::Eventually, 0, 1, all.clone(), t2.clone())];
        assert_eq!(successors(0b0, 1, &late), vec![0b0]);
    }

    #[test]
    fn consistent_region_cases() {
        let (_, _, lat) = walk_setup(3);
        let all = cells(&lat, &[-3, -2, -1, 0, 1, 2, 3]);
        let s1 = cells(&lat, &[0, 1, 2]);
        let s2 = cells(&lat, &[2, 3]);
        // single G fragment: the G region itself, whatever the transition
        let g = vec![frag(0, FragmentOp::Always, 0, 3, s1.clone(), s1.clone())];
        let r = consistent_region(0b1, 0b1, 1, &g, &all).unwrap();
        assert!(r.set_eq(&s1).unwrap());
        // single U fragment satisfied now: H¹ ∩ H²
        let u = vec![frag(0, FragmentOp::Until, 0, 3, s1.clone(), s2.clone())];
        let r = consistent_region(0b1, 0b0, 1, &u, &all).unwrap();
        assert!(r.set_eq(&s1.intersect(&s2).unwrap()).unwrap());
        // single F fragment deferred: workspace \ target
        let f = vec![frag(0, FragmentOp::Eventually, 0, 3, all.clone(), s2.clone())];
        let r = consistent_region(0b1, 0b1, 1, &f, &all).unwrap();
        assert!(r.set_eq(&all.difference(&s2).unwrap()).unwrap());
    }

    #[test]
    fn table_matches_oracle_on_fixed_gridworld() {
        // F[0,2]{x=3} ∧ G[0,2]{x≥0} on states -5..5
        let (dynamics, reach, lat) = walk_setup(5);
        let all_region = Region::Grid(GridMask::full(lat.clone()));
        let goal = cells(&lat, &[3]);
        let nonneg = cells(&lat, &[0, 1, 2, 3, 4, 5]);
        let frags = vec![
            frag(0, FragmentOp::Eventually, 0, 2, all_region.clone(), goal),
            frag(1, FragmentOp::Always, 0, 2, nonneg.clone(), nonneg),
        ];
        let table = compute_table(&frags, &reach, 2, &all_region).unwrap();
        for t in 0..=2 {
            for mask in potential_index_sets(&frags, t) {
                let region = table.get(t, mask).unwrap().unwrap();
                for x in -5..=5 {
                    let got = region.member(&[x as f64]).unwrap();
                    let want = oracle_feasible(&frags, &dynamics, 2, t, mask, x as f64);
                    assert_eq!(got, want, "t={t} mask={mask:#b} x={x}");
                }
            }
        }
    }

    #[test]
    fn expired_unsatisfied_fragment_means_failed() {
        let (_, reach, lat) = walk_setup(3);
        let all = Region::Grid(GridMask::full(lat.clone()));
        let goal = cells(&lat, &[2]);
        // F window closes at 1, table horizon 3
        let frags = vec![frag(0, FragmentOp::Eventually, 0, 1, all.clone(), goal)];
        let table = compute_table(&frags, &reach, 3, &all).unwrap();
        // at t=2 the mask {0} is no longer potential: lookup yields None
        assert!(table.get(2, 0b1).unwrap().is_none());
        assert!(table.get(2, 0b0).unwrap().is_some());
        assert!(matches!(table.get(7, 0b0), Err(Error::TableMissing { .. })));
    }

    #[test]
    fn anti_monotone_in_obligations() {
        let (_, reach, lat) = walk_setup(4);
        let all = Region::Grid(GridMask::full(lat.clone()));
        let s1 = cells(&lat, &[-1, 0, 1, 2, 3, 4]);
        let goal = cells(&lat, &[3, 4]);
        let frags = vec![
            frag(0, FragmentOp::Eventually, 0, 3, all.clone(), goal),
            frag(1, FragmentOp::Always, 0, 3, s1.clone(), s1),
        ];
        let table = compute_table(&frags, &reach, 3, &all).unwrap();
        for t in 0..=3 {
            let masks = potential_index_sets(&frags, t);
            for a in &masks {
                for b in &masks {
                    if a & b == *a && a != b {
                        let xa = table.get(t, *a).unwrap().unwrap();
                        let xb = table.get(t, *b).unwrap().unwrap();
                        assert!(xb.is_subset_of(xa).unwrap(), "t={t}: X^{b:#b} ⊄ X^{a:#b}");
                    }
                }
            }
        }
    }

    #[test]
    fn nonempty_entries_lie_inside_effective_g_regions() {
        let (_, reach, lat) = walk_setup(4);
        let all = Region::Grid(GridMask::full(lat.clone()));
        let hold = cells(&lat, &[0, 1, 2, 3]);
        let goal = cells(&lat, &[2]);
        let frags = vec![
            frag(0, FragmentOp::Always, 1, 3, hold.clone(), hold.clone()),
            frag(1, FragmentOp::Eventually, 0, 4, all.clone(), goal),
        ];
        let table = compute_table(&frags, &reach, 4, &all).unwrap();
        for t in 1..=3 {
            for (mask, region) in &table.entries[t] {
                if mask_contains(*mask, 0) {
                    assert!(region.is_subset_of(&hold).unwrap(), "t={t} mask={mask:#b}");
                }
            }
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let (_, reach, lat) = walk_setup(3);
        let all = Region::Grid(GridMask::full(lat.clone()));
        let goal = cells(&lat, &[2]);
        let frags = vec![frag(0, FragmentOp::Eventually, 0, 2, all.clone(), goal)];
        let table = compute_table(&frags, &reach, 2, &all).unwrap();
        let dir = std::env::temp_dir().join(format!("stlt-table-{}", std::process::id()));
        table.save_dir(&dir).unwrap();
        let back = FeasibleTable::load_dir(&dir).unwrap();
        assert_eq!(back.horizon, table.horizon);
        for t in 0..=2 {
            for (mask, region) in &table.entries[t] {
                assert!(back.entries[t][mask].set_eq(region).unwrap());
            }
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
