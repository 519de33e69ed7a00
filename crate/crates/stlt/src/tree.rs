//! Signal temporal logic trees: set nodes linked by operator nodes, built
//! bottom-up from a normalized formula by backward reachability.
//!
//! Set-node regions are satisfying sets — the root region collects every
//! initial state from which the formula is satisfiable. Complete paths from
//! root to leaf carry time codings; a trajectory satisfies the tree when some
//! disjunction branch has all of its paths satisfied under some coding.

use crate::error::{Error, Result};
use crate::formula::{FlatFragment, Formula, FragmentOp, TimeWindow};
use crate::reach::{Reachability, TemporalOp};
use crate::sets::{GridMask, Region};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpKind {
    And,
    Or,
    Eventually(TimeWindow),
    Always(TimeWindow),
}

impl OpKind {
    pub fn window(&self) -> Option<TimeWindow> {
        match self {
            OpKind::Eventually(w) | OpKind::Always(w) => Some(*w),
            _ => None,
        }
    }

    fn symbol(&self) -> String {
        match self {
            OpKind::And => "&".into(),
            OpKind::Or => "|".into(),
            OpKind::Eventually(w) => format!("F{w}"),
            OpKind::Always(w) => format!("G{w}"),
        }
    }
}

/// Start interval, duration, and end time of a set node, in steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCoding {
    pub start_lo: usize,
    pub start_hi: usize,
    pub dur: usize,
    pub t_end: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SetNode {
    pub id: usize,
    pub region: Region,
    /// Child operator node, `None` for leaves.
    pub child: Option<usize>,
    /// Parent operator node, `None` for the root.
    pub parent: Option<usize>,
    pub coding: Option<NodeCoding>,
    /// Start time pinned by an online event.
    pub frozen: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OpNode {
    pub id: usize,
    pub kind: OpKind,
    pub parent: usize,
    pub children: Vec<usize>,
}

/// Which start-time/duration table the encoding reproduces.
///
/// `Formula` follows the per-operator definitions literally (`F` start
/// `[a,b]` with zero duration, `G` start `[a,a]` with duration `b−a`).
/// `PaperTable` reproduces the printed case-study table, which spreads the
/// hold window of a top-level `G` into its start interval and pins operators
/// nested under a `G` to the obligation start with the window length kept as
/// duration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Convention {
    Formula,
    PaperTable,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Stlt {
    pub nodes: Vec<SetNode>,
    pub ops: Vec<OpNode>,
    pub root: usize,
    pub horizon: usize,
    pub convention: Option<Convention>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompletePath {
    /// Set node ids, root first.
    pub nodes: Vec<usize>,
    /// Operator node ids between consecutive set nodes.
    pub ops: Vec<usize>,
}

impl Stlt {
    /// Bottom-up construction. `phi` must be Until-free (`rewrite_until`
    /// upstream); leaf regions are predicate sets, operator parents their
    /// satisfying sets, and ∧/∨ parents intersections/unions.
    pub fn build(phi: &Formula, reach: &Reachability, grid: bool) -> Result<Stlt> {
        assert!(!phi.has_until(), "rewrite Until before building the tree");
        let mut builder = Builder { reach, grid, nodes: Vec::new(), ops: Vec::new() };
        let root = builder.node(phi)?;
        let mut tree = Stlt {
            nodes: builder.nodes,
            ops: builder.ops,
            root,
            horizon: phi.horizon(),
            convention: None,
        };
        tree.renumber_bfs();
        Ok(tree)
    }

    /// Relabel set nodes in breadth-first order so ids match the usual
    /// X0..Xn figure labels.
    fn renumber_bfs(&mut self) {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut queue = VecDeque::from([self.root]);
        while let Some(id) = queue.pop_front() {
            order.push(id);
            if let Some(op) = self.nodes[id].child {
                queue.extend(self.ops[op].children.iter().copied());
            }
        }
        let mut remap = vec![0usize; self.nodes.len()];
        for (new, old) in order.iter().enumerate() {
            remap[*old] = new;
        }
        let mut nodes = self.nodes.clone();
        nodes.sort_by_key(|n| remap[n.id]);
        for n in &mut nodes {
            n.id = remap[n.id];
        }
        for op in &mut self.ops {
            op.parent = remap[op.parent];
            for c in &mut op.children {
                *c = remap[*c];
            }
        }
        self.nodes = nodes;
        self.root = remap[self.root];
    }

    pub fn set_node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaves(&self) -> Vec<usize> {
        self.nodes.iter().filter(|n| n.child.is_none()).map(|n| n.id).collect()
    }

    /// All root-to-leaf alternations of set and operator nodes.
    pub fn complete_paths(&self) -> Vec<CompletePath> {
        let mut out = Vec::new();
        let mut stack = vec![(self.root, Vec::new(), Vec::new())];
        while let Some((id, nodes, ops)) = stack.pop() {
            let mut nodes: Vec<usize> = nodes;
            nodes.push(id);
            match self.nodes[id].child {
                None => out.push(CompletePath { nodes, ops }),
                Some(op) => {
                    for child in self.ops[op].children.iter().rev() {
                        let mut ops: Vec<usize> = ops.clone();
                        ops.push(op);
                        stack.push((*child, nodes.clone(), ops));
                    }
                }
            }
        }
        out
    }

    /// Group complete paths by their choices at ∨ nodes: one group per
    /// selection of a child at every ∨, containing the paths consistent with
    /// it. Satisfying the tree means satisfying every path of some group.
    pub fn or_groups(&self) -> Vec<Vec<usize>> {
        let paths = self.complete_paths();
        let or_ops: Vec<usize> =
            self.ops.iter().filter(|o| o.kind == OpKind::Or).map(|o| o.id).collect();
        if or_ops.is_empty() {
            return vec![(0..paths.len()).collect()];
        }
        // the branch path p takes at or-node o, if p passes through o
        let choice = |p: &CompletePath, o: usize| -> Option<usize> {
            p.ops.iter().position(|x| *x == o).map(|i| p.nodes[i + 1])
        };
        let mut selections: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new()];
        for o in &or_ops {
            let mut next = Vec::new();
            for sel in &selections {
                for child in &self.ops[*o].children {
                    let mut s = sel.clone();
                    s.insert(*o, *child);
                    next.push(s);
                }
            }
            selections = next;
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for sel in &selections {
            let members: Vec<usize> = paths
                .iter()
                .enumerate()
                .filter(|(_, p)| {
                    or_ops.iter().all(|o| match choice(p, *o) {
                        Some(c) => sel[o] == c,
                        None => true,
                    })
                })
                .map(|(i, _)| i)
                .collect();
            if !members.is_empty() && !groups.contains(&members) {
                groups.push(members);
            }
        }
        groups
    }

    /// Nearest temporal operator strictly above `op` (∧/∨ are transparent).
    fn temporal_ancestor(&self, op: usize) -> Option<OpKind> {
        let mut cur = self.ops[op].parent;
        loop {
            let parent_op = self.nodes[cur].parent?;
            match self.ops[parent_op].kind {
                k @ (OpKind::Eventually(_) | OpKind::Always(_)) => return Some(k),
                _ => cur = self.ops[parent_op].parent,
            }
        }
    }

    /// Annotate every set node with start interval, duration, and end time.
    pub fn encode_times(&mut self, convention: Convention) {
        self.convention = Some(convention);
        for n in &mut self.nodes {
            n.frozen = false;
        }
        self.nodes[self.root].coding =
            Some(NodeCoding { start_lo: 0, start_hi: 0, dur: 0, t_end: 0 });
        self.encode_subtree(self.root);
    }

    /// Recompute codings below `node` from its current coding. Frozen
    /// descendants keep their pinned start times.
    fn encode_subtree(&mut self, node: usize) {
        let Some(op) = self.nodes[node].child else { return };
        let parent = self.nodes[node].coding.expect("parent must be coded");
        let kind = self.ops[op].kind;
        let anc = self.temporal_ancestor(op);
        let convention = self.convention.expect("encode_times first");
        for child in self.ops[op].children.clone() {
            if !self.nodes[child].frozen {
                self.nodes[child].coding = Some(child_coding(convention, kind, anc, parent));
            }
            self.encode_subtree(child);
        }
    }

    /// Event trigger: pin the start time of every unfrozen node whose
    /// uncertain start interval contains `t` and whose region the state has
    /// entered. Triggers are evaluated simultaneously against the pre-event
    /// codings, then descendants of fired nodes are recomputed. Returns the
    /// nodes that fired.
    pub fn on_event(&mut self, x: &[f64], t: usize) -> Vec<usize> {
        let fired: Vec<usize> = self
            .nodes
            .iter()
            .filter(|n| {
                n.coding.is_some_and(|c| {
                    !n.frozen
                        && c.start_lo != c.start_hi
                        && t >= c.start_lo
                        && t <= c.start_hi
                        && n.region.member(x).unwrap_or(false)
                })
            })
            .map(|n| n.id)
            .collect();
        for id in &fired {
            let c = self.nodes[*id].coding.unwrap();
            let n = &mut self.nodes[*id];
            n.frozen = true;
            n.coding =
                Some(NodeCoding { start_lo: t, start_hi: t, dur: c.dur, t_end: t + c.dur });
        }
        for id in &fired {
            self.encode_subtree(*id);
        }
        fired
    }

    /// Satisfaction over states sampled on the step grid: some ∨ group has
    /// every one of its complete paths admitting a time coding under which
    /// the state stays inside each node's region over the coded interval.
    pub fn check_satisfaction(&self, states: &[Vec<f64>]) -> Result<bool> {
        if states.len() <= self.horizon {
            return Err(Error::HorizonTooShort { have: states.len(), need: self.horizon + 1 });
        }
        let paths = self.complete_paths();
        for group in self.or_groups() {
            if group.iter().all(|p| self.path_satisfied(&paths[*p], states, 0, 0, 0)) {
                return Ok(true);
            }
        }
        Ok(false)
    }

    fn path_satisfied(
        &self,
        path: &CompletePath,
        states: &[Vec<f64>],
        depth: usize,
        lo: usize,
        hi: usize,
    ) -> bool {
        let node = &self.nodes[path.nodes[depth]];
        for t in lo..=hi {
            if t >= states.len() || !node.region.member(&states[t]).unwrap_or(false) {
                return false;
            }
        }
        if depth == path.ops.len() {
            return true;
        }
        match self.ops[path.ops[depth]].kind {
            OpKind::And | OpKind::Or => self.path_satisfied(path, states, depth + 1, lo, hi),
            OpKind::Always(w) => self.path_satisfied(path, states, depth + 1, lo + w.a, hi + w.b),
            OpKind::Eventually(w) => {
                (w.a..=w.b).any(|s| self.path_satisfied(path, states, depth + 1, lo + s, hi + s))
            }
        }
    }

    /// Flat monitor fragments per ∨ group, windows taken from the node
    /// codings: one fragment per (temporal operator, set node) pair along the
    /// group's paths.
    pub fn monitor_fragments(&self, universe: &Region) -> Vec<Vec<FlatFragment>> {
        let paths = self.complete_paths();
        self.or_groups()
            .iter()
            .map(|group| {
                let mut seen = Vec::new();
                let mut frags = Vec::new();
                for p in group {
                    let path = &paths[*p];
                    for (i, op) in path.ops.iter().enumerate() {
                        let node = path.nodes[i + 1];
                        if seen.contains(&(*op, node)) {
                            continue;
                        }
                        seen.push((*op, node));
                        let c = self.nodes[node].coding.expect("encode_times first");
                        let window = TimeWindow { a: c.start_lo, b: c.t_end };
                        let region = self.nodes[node].region.clone();
                        match self.ops[*op].kind {
                            OpKind::Always(_) => frags.push(FlatFragment {
                                index: frags.len(),
                                op: FragmentOp::Always,
                                window,
                                h1: region.clone(),
                                h2: region,
                            }),
                            OpKind::Eventually(_) => frags.push(FlatFragment {
                                index: frags.len(),
                                op: FragmentOp::Eventually,
                                window,
                                h1: universe.clone(),
                                h2: region,
                            }),
                            _ => {}
                        }
                    }
                }
                frags
            })
            .collect()
    }

    /// Human-readable listing of nodes, codings, and paths.
    pub fn listing(&self) -> String {
        let mut s = String::new();
        for n in &self.nodes {
            let kind = match n.child {
                Some(op) => self.ops[op].kind.symbol(),
                None => "leaf".into(),
            };
            let region = match &n.region {
                Region::Boxes(b) => format!(
                    "boxes {:?}",
                    b.boxes
                        .iter()
                        .map(|bx| {
                            bx.lo.iter().zip(&bx.hi).map(|(l, h)| (*l, *h)).collect::<Vec<_>>()
                        })
                        .collect::<Vec<_>>()
                ),
                Region::Grid(g) => format!("grid {} / {} cells", g.count(), g.lattice.len()),
            };
            let coding = match n.coding {
                Some(c) => {
                    format!(" start [{},{}] dur {} end {}", c.start_lo, c.start_hi, c.dur, c.t_end)
                }
                None => String::new(),
            };
            s.push_str(&format!("X{} ({kind}){coding}: {region}\n", n.id));
        }
        for (i, p) in self.complete_paths().iter().enumerate() {
            let mut line = format!("p{}: X{}", i + 1, p.nodes[0]);
            for (op, node) in p.ops.iter().zip(p.nodes.iter().skip(1)) {
                line.push_str(&format!(" {} X{}", self.ops[*op].kind.symbol(), node));
            }
            s.push_str(&line);
            s.push('\n');
        }
        s
    }
}

fn child_coding(
    convention: Convention,
    kind: OpKind,
    anc: Option<OpKind>,
    parent: NodeCoding,
) -> NodeCoding {
    let (lo, hi, dur, dur_in_spread) = match (convention, kind) {
        (_, OpKind::And | OpKind::Or) => (parent.start_lo, parent.start_hi, 0, false),
        (Convention::Formula, OpKind::Eventually(w)) => {
            (parent.start_lo + w.a, parent.start_hi + w.b, 0, false)
        }
        (Convention::Formula, OpKind::Always(w)) => {
            (parent.start_lo + w.a, parent.start_hi + w.a, w.b - w.a, false)
        }
        (Convention::PaperTable, OpKind::Always(w)) => match anc {
            // top-level G: the printed table spreads the hold window into the
            // start interval, so the end time is the interval's end
            None => (parent.start_lo + w.a, parent.start_hi + w.b, w.b - w.a, true),
            Some(_) => (parent.start_lo + w.a, parent.start_hi + w.a, w.b - w.a, false),
        },
        (Convention::PaperTable, OpKind::Eventually(w)) => match anc {
            // recurrent F under G: start pinned to the obligation start, the
            // window length kept as duration
            Some(OpKind::Always(_)) => {
                (parent.start_lo + w.a, parent.start_hi + w.a, w.b - w.a, false)
            }
            _ => (parent.start_lo + w.a, parent.start_hi + w.b, 0, false),
        },
    };
    NodeCoding { start_lo: lo, start_hi: hi, dur, t_end: if dur_in_spread { hi } else { hi + dur } }
}

struct Builder<'a> {
    reach: &'a Reachability,
    grid: bool,
    nodes: Vec<SetNode>,
    ops: Vec<OpNode>,
}

impl<'a> Builder<'a> {
    fn universe(&self) -> Region {
        if self.grid {
            let lat = self
                .reach
                .grid_context()
                .expect("grid build needs a lattice on the reachability context")
                .lattice
                .clone();
            Region::Grid(GridMask::full(lat))
        } else {
            Region::from_box(self.reach.workspace.clone())
        }
    }

    fn leaf_region(&self, region: Region) -> Region {
        if self.grid {
            let lat = self.reach.grid_context().unwrap().lattice.clone();
            match region {
                Region::Boxes(b) => Region::Grid(GridMask::rasterize(lat, &b, false)),
                g => g,
            }
        } else {
            region
        }
    }

    fn push_leaf(&mut self, region: Region) -> usize {
        let id = self.nodes.len();
        self.nodes.push(SetNode {
            id,
            region,
            child: None,
            parent: None,
            coding: None,
            frozen: false,
        });
        id
    }

    fn push_parent(&mut self, region: Region, kind: OpKind, children: Vec<usize>) -> usize {
        let id = self.push_leaf(region);
        let op = self.ops.len();
        self.ops.push(OpNode { id: op, kind, parent: id, children: children.clone() });
        self.nodes[id].child = Some(op);
        for c in children {
            self.nodes[c].parent = Some(op);
        }
        id
    }

    fn node(&mut self, phi: &Formula) -> Result<usize> {
        let ws = self.reach.workspace.clone();
        match phi {
            Formula::True => Ok(self.push_leaf(self.universe())),
            Formula::Pred(p) => {
                let r = self.leaf_region(p.region(&ws));
                Ok(self.push_leaf(r))
            }
            Formula::NotPred(p) => {
                let r = self.leaf_region(p.region(&ws)).complement(&ws);
                Ok(self.push_leaf(r))
            }
            Formula::And(cs) => {
                let children: Vec<usize> =
                    cs.iter().map(|c| self.node(c)).collect::<Result<_>>()?;
                let mut region = self.nodes[children[0]].region.clone();
                for c in &children[1..] {
                    region = region.intersect(&self.nodes[*c].region)?;
                }
                Ok(self.push_parent(region, OpKind::And, children))
            }
            Formula::Or(cs) => {
                let children: Vec<usize> =
                    cs.iter().map(|c| self.node(c)).collect::<Result<_>>()?;
                let mut region = self.nodes[children[0]].region.clone();
                for c in &children[1..] {
                    region = region.union(&self.nodes[*c].region)?;
                }
                Ok(self.push_parent(region, OpKind::Or, children))
            }
            Formula::Eventually(c, w) => {
                let child = self.node(c)?;
                let region = self.reach.satisfying_set(
                    TemporalOp::Eventually,
                    *w,
                    &self.nodes[child].region,
                    None,
                )?;
                Ok(self.push_parent(region, OpKind::Eventually(*w), vec![child]))
            }
            Formula::Always(c, w) => {
                let child = self.node(c)?;
                let region = self.reach.satisfying_set(
                    TemporalOp::Always,
                    *w,
                    &self.nodes[child].region,
                    None,
                )?;
                Ok(self.push_parent(region, OpKind::Always(*w), vec![child]))
            }
            Formula::Until(..) => unreachable!("checked by build"),
        }
    }
}

/// The set-node constructors exactly as printed in the worked example of the
/// source preliminaries, which contradict the satisfying-set lemma (the F
/// node via a complemented maximal reach and the top G node via a plain
/// minimal reach). Exposed for side-by-side comparison: the F-node formula
/// collapses to the empty set, supporting the presumed-typo reading.
pub fn example_literal_nodes(reach: &Reachability, mu1: &Region) -> Result<Vec<(String, Region)>> {
    let ws = &reach.workspace;
    let not_x5 = mu1.complement(ws);
    let x3 = reach.max_reach(&not_x5, TimeWindow { a: 2, b: 10 })?.complement(ws);
    let x1 = reach.min_reach(&x3, TimeWindow { a: 0, b: 16 })?;
    Ok(vec![("X3_literal".into(), x3), ("X1_literal".into(), x1)])
}
