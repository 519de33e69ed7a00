//! Controller synthesis: one time-varying sup-norm barrier per temporal
//! fragment of the tree, fixed-time convergence parameters, the low-level
//! CBF quadratic program, and the MPC reference planner with its reset map.

use crate::error::{Error, Result};
use crate::qp::{solve_qp, QpProblem, QpStatus};
use crate::tree::{NodeCoding, OpKind, Stlt};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// An (operator node, set node) pair of the tree that gets its own barrier.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TemporalFragment {
    pub id: usize,
    pub op_node: usize,
    pub set_node: usize,
    pub is_always: bool,
    /// Fragment id of the nearest temporal fragment above on a complete
    /// path; `None` for top-layer fragments.
    pub predecessor: Option<usize>,
    pub coding: NodeCoding,
    /// Barrier activation domain `[t_lb, t_ub]` in steps: starts when the
    /// predecessor's activity ends or at the earliest own start, whichever
    /// comes first; ends at the node end time.
    pub t_lb: usize,
    pub t_ub: usize,
    /// Complete-path group indices this fragment serves.
    pub branches: Vec<usize>,
}

/// Fragments in path order with predecessor links and activation domains.
/// The tree must be time-encoded.
pub fn fragments_of(tree: &Stlt) -> Vec<TemporalFragment> {
    let paths = tree.complete_paths();
    let groups = tree.or_groups();
    let mut frags: Vec<TemporalFragment> = Vec::new();
    for (pi, path) in paths.iter().enumerate() {
        let branch = groups.iter().position(|g| g.contains(&pi)).unwrap_or(0);
        let mut prev: Option<usize> = None;
        for (i, op) in path.ops.iter().enumerate() {
            let set_node = path.nodes[i + 1];
            let is_always = match tree.ops[*op].kind {
                OpKind::Always(_) => true,
                OpKind::Eventually(_) => false,
                _ => continue,
            };
            if let Some(f) = frags.iter_mut().find(|f| f.op_node == *op && f.set_node == set_node)
            {
                if !f.branches.contains(&branch) {
                    f.branches.push(branch);
                }
                prev = Some(f.id);
                continue;
            }
            let coding = tree.nodes[set_node].coding.expect("encode_times before fragments_of");
            let t_lb = match prev {
                Some(p) => {
                    let pred_end = frags[p].coding.t_end;
                    pred_end.min(coding.start_lo)
                }
                None => coding.start_lo,
            };
            let id = frags.len();
            frags.push(TemporalFragment {
                id,
                op_node: *op,
                set_node,
                is_always,
                predecessor: prev,
                coding,
                t_lb,
                t_ub: coding.t_end,
                branches: vec![branch],
            });
            prev = Some(id);
        }
    }
    frags
}

/// The printed per-fragment table: set node, start interval, duration, and
/// the barrier time domain written as `[start_lo, t_end]`.
pub fn paper_bullets(tree: &Stlt) -> Vec<(usize, (usize, usize), usize, (usize, usize))> {
    fragments_of(tree)
        .iter()
        .map(|f| {
            let c = f.coding;
            (f.set_node, (c.start_lo, c.start_hi), c.dur, (c.start_lo, c.t_end))
        })
        .collect()
}

/// Piecewise-linear barrier radius: `ρ(t) = intercept + slope·t` on
/// `[t0, t1]`, time in steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierPiece {
    pub t0: f64,
    pub t1: f64,
    pub intercept: f64,
    pub slope: f64,
}

/// Time-varying sup-norm barrier `b(x,t) = ρ(t)² − max_i |x_i − c_i|²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierSpec {
    pub fragment: usize,
    pub center: Vec<f64>,
    pub pieces: Vec<BarrierPiece>,
}

impl BarrierSpec {
    fn piece_at(&self, t: f64) -> &BarrierPiece {
        let t = t.max(self.pieces[0].t0);
        self.pieces
            .iter()
            .find(|p| t <= p.t1)
            .unwrap_or_else(|| self.pieces.last().unwrap())
    }

    /// Radius at `t`; beyond the last piece it holds the final value.
    pub fn rho(&self, t: f64) -> f64 {
        let p = self.piece_at(t);
        let tc = t.clamp(p.t0, p.t1);
        p.intercept + p.slope * tc
    }

    pub fn rho_dot(&self, t: f64) -> f64 {
        let p = self.piece_at(t);
        if t < p.t0 || t > p.t1 {
            0.0
        } else {
            p.slope
        }
    }

    /// Face ties break toward the lowest axis.
    pub fn active_face(&self, x: &[f64]) -> usize {
        let mut best = 0usize;
        let mut val = f64::NEG_INFINITY;
        for (d, c) in self.center.iter().enumerate() {
            let v = (x[d] - c).abs();
            if v > val + 1e-15 {
                val = v;
                best = d;
            }
        }
        best
    }

    pub fn value(&self, x: &[f64], t: f64) -> f64 {
        let j = self.active_face(x);
        let m = (x[j] - self.center[j]).abs();
        let r = self.rho(t);
        r * r - m * m
    }

    /// Spatial gradient on the active face.
    pub fn grad_x(&self, x: &[f64]) -> Vec<f64> {
        let j = self.active_face(x);
        let mut g = vec![0.0; self.center.len()];
        g[j] = -2.0 * (x[j] - self.center[j]);
        g
    }

    /// Explicit time derivative `∂b/∂t = 2 ρ ρ̇`, per step.
    pub fn dt_term(&self, t: f64) -> f64 {
        2.0 * self.rho(t) * self.rho_dot(t)
    }

    pub fn active_window(&self) -> (f64, f64) {
        (self.pieces[0].t0, self.pieces.last().unwrap().t1)
    }
}

/// Barriers for every fragment of a box-region tree.
///
/// Top-layer G fragments funnel from the full node radius at the earliest
/// start; top-layer F fragments shrink to the node radius at the latest
/// start. A successor sharing its predecessor's center continues the
/// predecessor's funnel and holds a static tail of radius `tail_radius`
/// (default twice the node halfwidth); successors with a new center funnel
/// down to the tail radius at their latest start. Shrink speed is the
/// per-axis input bound times the sampling period.
pub fn build_barriers(
    tree: &Stlt,
    fragments: &[TemporalFragment],
    speed: f64,
    tail_radius: Option<f64>,
) -> Result<Vec<BarrierSpec>> {
    let mut out: Vec<BarrierSpec> = Vec::new();
    for f in fragments {
        let node_box =
            tree.nodes[f.set_node].region.single_box().ok_or(Error::NonBoxFragment)?;
        let w = f64::max(
            node_box.halfwidths().iter().cloned().fold(0.0, f64::max),
            0.0,
        );
        let center = node_box.center();
        let tau = tail_radius.unwrap_or(2.0 * w);
        let c = f.coding;
        let (lo, hi) = (c.start_lo as f64, c.start_hi as f64);
        let pred_center_matches = f.predecessor.is_some_and(|p| {
            out[p].center.iter().zip(&center).all(|(a, b)| (a - b).abs() < 1e-9)
        });
        let pieces = if let (Some(p), true) = (f.predecessor, pred_center_matches) {
            // continue the predecessor's funnel, then hold the tail radius
            let lead = &out[p].pieces[0];
            let tail_end = if f.is_always { c.start_lo + c.dur } else { c.start_hi + c.dur };
            let mut ps = vec![BarrierPiece {
                t0: lo,
                t1: hi,
                intercept: lead.intercept,
                slope: lead.slope,
            }];
            if (tail_end as f64) > hi {
                ps.push(BarrierPiece { t0: hi, t1: tail_end as f64, intercept: tau, slope: 0.0 });
            }
            ps
        } else {
            let (anchor_t, anchor_r) = match (f.predecessor, f.is_always) {
                (None, true) => (lo, w),
                (None, false) => (hi, w),
                (Some(_), _) => (hi, tau),
            };
            if lo == hi {
                vec![BarrierPiece { t0: lo, t1: hi, intercept: anchor_r, slope: 0.0 }]
            } else {
                // ρ(anchor_t) = anchor_r with slope −speed
                let t1 = if f.is_always && f.predecessor.is_none() { hi } else { hi };
                vec![BarrierPiece {
                    t0: lo,
                    t1,
                    intercept: anchor_r + speed * anchor_t,
                    slope: -speed,
                }]
            }
        };
        out.push(BarrierSpec { fragment: f.id, center, pieces });
    }
    Ok(out)
}

/// Fixed-time convergence parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FixedTimeParams {
    pub mu: f64,
    pub k: f64,
    pub r: f64,
    pub t_prime: f64,
    pub alpha: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

pub fn fixed_time_params(t_prime: f64, mu: f64, k: f64, r: f64) -> Result<FixedTimeParams> {
    if !(mu > 1.0) {
        return Err(Error::Domain(format!("mu = {mu} must exceed 1")));
    }
    if !(0.0 < k && k < 1.0) {
        return Err(Error::Domain(format!("k = {k} must lie in (0,1)")));
    }
    if !(0.0 < r && r < 1.0) {
        return Err(Error::Domain(format!("r = {r} must lie in (0,1)")));
    }
    if !(t_prime > 0.0) {
        return Err(Error::Domain(format!("T' = {t_prime} must be positive")));
    }
    let alpha = f64::max(
        mu * k / ((1.0 - k) * t_prime),
        mu * std::f64::consts::PI / (t_prime * (1.0 - r * r).sqrt()),
    );
    Ok(FixedTimeParams { mu, k, r, t_prime, alpha, gamma1: 1.0 + 1.0 / mu, gamma2: 1.0 - 1.0 / mu })
}

/// Slack bound of the low-level QP under which the fixed-time guarantees
/// hold, from the tube radii.
pub fn slack_ratio_bound(params: &FixedTimeParams, d: f64, c: f64) -> f64 {
    let base = ((d * d - c * c) / 2.0).powf(1.0 / params.mu);
    base / (2.0 * params.k) + params.k / (2.0 * base)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DoaRegion {
    /// The whole state space.
    All,
    /// Sub-level threshold: `{x | b(x) ≥ value}`.
    LevelAbove(f64),
}

/// Domain of attraction and settling-time bound for a fixed-time barrier at
/// dual ratio `r = δ/(2α)`. The printed table covers `r ≤ 0` and `r ≥ 1`;
/// between them the planning period stands in as the design bound.
pub fn doa(ratio: f64, params: &FixedTimeParams) -> (DoaRegion, f64) {
    let region = if ratio < 1.0 {
        DoaRegion::All
    } else {
        let v = -params.k.powf(params.mu) * (ratio - (ratio * ratio - 1.0).sqrt()).powf(params.mu);
        DoaRegion::LevelAbove(v)
    };
    let time = if ratio <= 0.0 {
        params.mu * std::f64::consts::PI / (2.0 * ratio)
    } else if ratio >= 1.0 {
        params.mu * params.k / (params.alpha * (1.0 - params.k))
    } else {
        params.t_prime
    };
    (region, time)
}

/// One CBF inequality for the low-level program: `lf + lg·u ≥ −δ b + forcing`.
#[derive(Clone, Debug)]
pub struct CbfRow {
    pub lf: f64,
    pub lg: Vec<f64>,
    pub value: f64,
}

/// Solve the low-level program: minimize `½‖u_l‖² + ½δ² + w_δ δ` subject to
/// the input box on `u_m + u_l` and the fixed-time CBF rows, `δ ≥ 0`.
pub fn low_level(
    u_m: &[f64],
    rows: &[CbfRow],
    params: &FixedTimeParams,
    input_bounds: &[[f64; 2]],
    slack_weight: f64,
) -> (Vec<f64>, f64, QpStatus) {
    let m = u_m.len();
    let nv = m + 1;
    let h = DMatrix::identity(nv, nv);
    let mut g = DVector::zeros(nv);
    g[m] = slack_weight;
    let mut a_rows: Vec<Vec<f64>> = Vec::new();
    let mut b_vals: Vec<f64> = Vec::new();
    for (i, [lo, hi]) in input_bounds.iter().enumerate() {
        let mut row = vec![0.0; nv];
        row[i] = 1.0;
        a_rows.push(row.clone());
        b_vals.push(hi - u_m[i]);
        row[i] = -1.0;
        a_rows.push(row);
        b_vals.push(u_m[i] - lo);
    }
    for r in rows {
        let forcing = params.alpha * f64::max(0.0, -r.value).powf(params.gamma1)
            + params.alpha * f64::max(0.0, -r.value).powf(params.gamma2);
        let mut row = vec![0.0; nv];
        for (i, l) in r.lg.iter().enumerate() {
            row[i] = -l;
        }
        row[m] = -r.value;
        a_rows.push(row);
        let lg_um: f64 = r.lg.iter().zip(u_m).map(|(l, u)| l * u).sum();
        b_vals.push(r.lf + lg_um - forcing);
    }
    // δ ≥ 0
    let mut row = vec![0.0; nv];
    row[m] = -1.0;
    a_rows.push(row);
    b_vals.push(0.0);

    let na = a_rows.len();
    let a = DMatrix::from_fn(na, nv, |i, j| a_rows[i][j]);
    let b = DVector::from_vec(b_vals);
    let sol = solve_qp(&QpProblem::new(h, g, a, b));
    (sol.x.as_slice()[..m].to_vec(), sol.x[m], sol.status)
}

/// Discretize `ż = Az + Bu` over one period via the augmented matrix
/// exponential: `exp([[A, B], [0, 0]] T')` carries both `Ā` and `B̄`.
pub fn discretize(a: &DMatrix<f64>, b: &DMatrix<f64>, t_prime: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let m = b.ncols();
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(a);
    aug.view_mut((0, n), (n, m)).copy_from(b);
    let e = expm(&(aug * t_prime));
    (e.view((0, 0), (n, n)).into(), e.view((0, n), (n, m)).into())
}

/// Scaling-and-squaring Taylor matrix exponential, plenty for the small
/// reference models here.
fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = m.amax();
    let s = norm.log2().ceil().max(0.0) as u32 + 1;
    let scaled = m / 2f64.powi(s as i32);
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..24 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    let mut out = sum;
    for _ in 0..s {
        out = &out * &out;
    }
    out
}

/// MPC data in the goal-shifted frame: regulate to the origin subject to the
/// reset-map coupling `z₀ − x ∈ C`, per-step spacing, state/input boxes, and
/// the terminal box.
#[derive(Clone, Debug)]
pub struct MpcSetup {
    pub a_bar: DMatrix<f64>,
    pub b_bar: DMatrix<f64>,
    pub n_horizon: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q_f: DMatrix<f64>,
    /// State box (shifted frame) for z_0..z_{N−1}.
    pub state_box: Vec<[f64; 2]>,
    /// Input box for v_k.
    pub input_box: Vec<[f64; 2]>,
    /// Terminal box halfwidth around the shifted origin.
    pub terminal_halfwidth: f64,
    /// Per-step 2-norm spacing bound `d − c`.
    pub spacing: f64,
    /// Reset-map capture radius `c`.
    pub capture: f64,
}

/// Unit directions of the polyhedral inner approximation of the 2-norm ball
/// (an octagon in 2-D, an interval in 1-D) and the facet-offset factor.
fn ball_directions(dim: usize) -> (Vec<Vec<f64>>, f64) {
    match dim {
        1 => (vec![vec![1.0], vec![-1.0]], 1.0),
        2 => {
            let dirs = (0..8)
                .map(|k| {
                    let a = k as f64 * std::f64::consts::FRAC_PI_4;
                    vec![a.cos(), a.sin()]
                })
                .collect();
            (dirs, (std::f64::consts::PI / 8.0).cos())
        }
        _ => panic!("reference models here are 1-D or 2-D"),
    }
}

/// Solve the finite-time optimal control problem at state `x_now` (shifted
/// frame). Returns the input sequence, the planned states z_0..z_N, and the
/// solver status. The optimized z_0 realizes the reset map.
pub fn mpc_solve(
    setup: &MpcSetup,
    x_now: &[f64],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, QpStatus) {
    let n = setup.a_bar.nrows();
    let m = setup.b_bar.ncols();
    let nh = setup.n_horizon;
    let nv = n + nh * m;
    // z_k = phi_k z0 + gamma_k v
    let mut phis: Vec<DMatrix<f64>> = vec![DMatrix::identity(n, n)];
    let mut gammas: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, nh * m)];
    for k in 0..nh {
        let phi = &setup.a_bar * &phis[k];
        let mut gamma = &setup.a_bar * &gammas[k];
        gamma.view_mut((0, k * m), (n, m)).copy_from(&setup.b_bar);
        phis.push(phi);
        gammas.push(gamma);
    }
    let stage = |k: usize| -> DMatrix<f64> {
        let mut s = DMatrix::zeros(n, nv);
        s.view_mut((0, 0), (n, n)).copy_from(&phis[k]);
        s.view_mut((0, n), (n, nh * m)).copy_from(&gammas[k]);
        s
    };
    let mut h = DMatrix::zeros(nv, nv);
    for k in 0..nh {
        let s = stage(k);
        h += 2.0 * s.transpose() * &setup.q * s;
    }
    let sn = stage(nh);
    h += 2.0 * sn.transpose() * &setup.q_f * &sn;
    for k in 0..nh {
        let i0 = n + k * m;
        for i in 0..m {
            for j in 0..m {
                h[(i0 + i, i0 + j)] += 2.0 * setup.r[(i, j)];
            }
        }
    }
    // keep the reduced Hessian comfortably positive definite
    h += DMatrix::identity(nv, nv) * 1e-8;
    let g = DVector::zeros(nv);

    let mut a_rows: Vec<DVector<f64>> = Vec::new();
    let mut b_vals: Vec<f64> = Vec::new();
    let mut push_row = |row: DVector<f64>, b: f64| {
        a_rows.push(row);
        b_vals.push(b);
    };
    // state boxes for z_0..z_{N-1}
    for k in 0..nh {
        let s = stage(k);
        for d in 0..n {
            push_row(s.row(d).transpose(), setup.state_box[d][1]);
            push_row(-s.row(d).transpose(), -setup.state_box[d][0]);
        }
    }
    // terminal box
    for d in 0..n {
        push_row(sn.row(d).transpose(), setup.terminal_halfwidth);
        push_row(-sn.row(d).transpose(), setup.terminal_halfwidth);
    }
    // input boxes
    for k in 0..nh {
        for i in 0..m {
            let mut row = DVector::zeros(nv);
            row[n + k * m + i] = 1.0;
            push_row(row.clone(), setup.input_box[i][1]);
            push_row(-row, -setup.input_box[i][0]);
        }
    }
    // spacing between consecutive planned states, octagonal inner hull
    let (dirs, facet) = ball_directions(n);
    for k in 0..nh {
        let diff = stage(k + 1) - stage(k);
        for dir in &dirs {
            let d = DVector::from_vec(dir.clone());
            push_row((d.transpose() * &diff).transpose(), setup.spacing * facet);
        }
    }
    // reset map: z0 − x_now in the capture ball
    for dir in &dirs {
        let mut row = DVector::zeros(nv);
        for d in 0..n {
            row[d] = dir[d];
        }
        let dx: f64 = dir.iter().zip(x_now).map(|(a, b)| a * b).sum();
        push_row(row, setup.capture * facet + dx);
    }

    let na = a_rows.len();
    let a = DMatrix::from_fn(na, nv, |i, j| a_rows[i][j]);
    let b = DVector::from_vec(b_vals);
    let sol = solve_qp(&QpProblem::new(h, g, a, b));

    let xi = &sol.x;
    let mut vs = Vec::with_capacity(nh);
    for k in 0..nh {
        vs.push(xi.as_slice()[n + k * m..n + (k + 1) * m].to_vec());
    }
    let mut zs = Vec::with_capacity(nh + 1);
    for k in 0..=nh {
        let z = stage(k) * xi;
        zs.push(z.as_slice().to_vec());
    }
    (vs, zs, sol.status)
}

/// Controller block of a scenario file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CtrlConfig {
    pub t_prime: f64,
    pub mu: f64,
    pub k: f64,
    pub r: f64,
    pub d: f64,
    pub c: f64,
    pub n_horizon: usize,
    pub q: f64,
    pub r_weight: f64,
    pub q_f: f64,
    pub planner_rate: f64,
    pub lowlevel_rate: f64,
    /// Fraction of input authority reserved for the planner.
    pub u_m_fraction: f64,
    /// Static tail radius of successor barriers; twice the node halfwidth
    /// when unset.
    pub tail_radius: Option<f64>,
    /// Linear slack weight in the low-level cost; defaults to `c`.
    pub slack_weight: Option<f64>,
    /// Look-ahead distance of the tracked output point for nonholonomic
    /// plants; zero tracks the state itself.
    pub offset_point: f64,
}

impl Default for CtrlConfig {
    fn default() -> Self {
        CtrlConfig {
            t_prime: 0.2,
            mu: 2.0,
            k: 0.5,
            r: 0.5,
            d: 0.6,
            c: 0.005,
            n_horizon: 5,
            q: 1.0,
            r_weight: 1.0,
            q_f: 10.0,
            planner_rate: 5.0,
            lowlevel_rate: 100.0,
            u_m_fraction: 0.8,
            tail_radius: None,
            slack_weight: None,
            offset_point: 0.0,
        }
    }
}

/// Per-substep controller log row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CtrlRow {
    pub t: f64,
    pub u_m: Vec<f64>,
    pub u_l: Vec<f64>,
    pub u: Vec<f64>,
    pub slack: f64,
    pub active_fragment: Option<usize>,
    pub barrier_value: f64,
    pub mpc_status: Option<QpStatus>,
    pub qp_status: QpStatus,
    pub z_ref: Vec<f64>,
    pub z_end: Vec<f64>,
    pub tube_err: f64,
}

/// Two-layer policy: an MPC reference planner ticking at `1/T'` with a reset
/// map pulling the reference onto the plant, and a fixed-time CBF program
/// tracking the planned waypoint between ticks. Nonholonomic plants are
/// planned through a look-ahead output point, which the planar reference
/// model steers exactly.
pub struct HierarchicalController {
    pub cfg: CtrlConfig,
    pub params: FixedTimeParams,
    pub fragments: Vec<TemporalFragment>,
    pub barriers: Vec<BarrierSpec>,
    pub branch: usize,
    dynamics: crate::dynamics::Dynamics,
    period: f64,
    workspace: AxisBox,
    goals: Vec<(usize, Vec<f64>)>,
    a_bar: DMatrix<f64>,
    b_bar: DMatrix<f64>,
    w_max: f64,
    // runtime state
    z_ref: Vec<f64>,
    u_m_world: Vec<f64>,
    z_end: Vec<f64>,
    ticks: usize,
    pub captures: Vec<(f64, f64)>,
    pub mpc_infeasible: usize,
    pub lowlevel_infeasible: usize,
    pub max_slack_ratio: f64,
    pub slack_bound: f64,
    pub slack_violations: usize,
}

impl HierarchicalController {
    /// `tree` is the time-encoded box tree in planner (position) space;
    /// `period` the formula sampling period in seconds.
    pub fn new(
        cfg: CtrlConfig,
        dynamics: crate::dynamics::Dynamics,
        tree: &Stlt,
        workspace: AxisBox,
        x0: &[f64],
        period: f64,
        branch_override: Option<usize>,
    ) -> Result<Self> {
        if (cfg.planner_rate * cfg.t_prime - 1.0).abs() > 1e-6 {
            return Err(Error::Domain(format!(
                "planner rate {} must be 1/T' = {}",
                cfg.planner_rate,
                1.0 / cfg.t_prime
            )));
        }
        let params = fixed_time_params(cfg.t_prime, cfg.mu, cfg.k, cfg.r)?;
        let fragments = fragments_of(tree);
        let speed = dynamics
            .input_bounds()
            .iter()
            .map(|[lo, hi]| hi.abs().min(lo.abs()))
            .fold(f64::INFINITY, f64::min)
            * period;
        let barriers = build_barriers(tree, &fragments, speed / period, cfg.tail_radius)?;

        // branch choice: first disjunction group whose branch root holds x0
        let groups = tree.or_groups();
        let paths = tree.complete_paths();
        let pos = &x0[..workspace.dim()];
        let branch = branch_override.unwrap_or_else(|| {
            groups
                .iter()
                .position(|g| {
                    let head = &paths[g[0]];
                    let node = if head.nodes.len() > 1 { head.nodes[1] } else { head.nodes[0] };
                    tree.nodes[node].region.member(pos).unwrap_or(false)
                })
                .unwrap_or(0)
        });
        // goal schedule: barrier centers of the branch fragments by start
        let mut goals: Vec<(usize, Vec<f64>)> = fragments
            .iter()
            .filter(|f| f.branches.contains(&branch))
            .map(|f| (f.coding.start_lo, barriers[f.id].center.clone()))
            .collect();
        goals.sort_by_key(|(s, _)| *s);
        if goals.is_empty() {
            return Err(Error::Scenario("no temporal fragments to steer toward".into()));
        }

        let n = workspace.dim();
        let (a_bar, b_bar) =
            discretize(&DMatrix::zeros(n, n), &DMatrix::identity(n, n), cfg.t_prime);
        let w_max = match &dynamics {
            crate::dynamics::Dynamics::Unicycle { v_bound, w_bound, .. } => {
                cfg.u_m_fraction * v_bound.min(cfg.offset_point * w_bound)
            }
            _ => {
                cfg.u_m_fraction
                    * dynamics.input_bounds().iter().map(|[_, hi]| *hi).fold(f64::INFINITY, f64::min)
            }
        };

        let y0 = tracked_output(&dynamics, cfg.offset_point, x0);
        let slack_bound = slack_ratio_bound(&params, cfg.d, cfg.c);
        Ok(HierarchicalController {
            cfg,
            params,
            fragments,
            barriers,
            branch,
            dynamics,
            period,
            workspace,
            goals,
            a_bar,
            b_bar,
            w_max,
            z_ref: y0.clone(),
            u_m_world: vec![0.0; n],
            z_end: y0,
            ticks: 0,
            captures: Vec::new(),
            mpc_infeasible: 0,
            lowlevel_infeasible: 0,
            max_slack_ratio: 0.0,
            slack_bound,
            slack_violations: 0,
        })
    }

    pub fn tracked_output(&self, x: &[f64]) -> Vec<f64> {
        tracked_output(&self.dynamics, self.cfg.offset_point, x)
    }

    fn goal_at(&self, step: f64) -> &[f64] {
        let mut g = &self.goals[0].1;
        for (s, c) in &self.goals {
            if (*s as f64) <= step {
                g = c;
            }
        }
        g
    }

    /// Deepest fragment of the active branch whose activation domain holds
    /// `step`.
    pub fn active_fragment(&self, step: f64) -> Option<usize> {
        self.fragments
            .iter()
            .filter(|f| {
                f.branches.contains(&self.branch)
                    && (f.t_lb as f64) <= step
                    && step <= f.t_ub as f64
            })
            .last()
            .map(|f| f.id)
    }

    fn plan(&mut self, y: &[f64], t: f64) -> QpStatus {
        let step = t / self.period;
        let mut goal = self.goal_at(step).to_vec();
        if let crate::dynamics::Dynamics::Unicycle { .. } = self.dynamics {
            // park the plant, not the look-ahead point, on the goal
            let th = self.last_theta;
            goal[0] += self.cfg.offset_point * th.cos();
            goal[1] += self.cfg.offset_point * th.sin();
        }
        let n = y.len();
        // receding carrot keeps the terminal set reachable within N steps
        let reach = 0.95 * self.cfg.n_horizon as f64 * self.w_max * self.cfg.t_prime;
        let dist: f64 = goal.iter().zip(y).map(|(g, v)| (g - v) * (g - v)).sum::<f64>().sqrt();
        let carrot: Vec<f64> = if dist <= reach {
            goal
        } else {
            goal.iter().zip(y).map(|(g, v)| v + (g - v) * reach / dist).collect()
        };
        let margin = self.cfg.d + self.cfg.c;
        let setup = MpcSetup {
            a_bar: self.a_bar.clone(),
            b_bar: self.b_bar.clone(),
            n_horizon: self.cfg.n_horizon,
            q: DMatrix::identity(n, n) * self.cfg.q,
            r: DMatrix::identity(n, n) * self.cfg.r_weight,
            q_f: DMatrix::identity(n, n) * self.cfg.q_f,
            state_box: (0..n)
                .map(|d| {
                    [self.workspace.lo[d] + margin - carrot[d],
                     self.workspace.hi[d] - margin - carrot[d]]
                })
                .collect(),
            input_box: vec![[-self.w_max, self.w_max]; n],
            terminal_halfwidth: self.cfg.d - self.cfg.c,
            spacing: self.cfg.d - self.cfg.c,
            capture: self.cfg.c,
        };
        let x_shift: Vec<f64> = y.iter().zip(&carrot).map(|(v, c)| v - c).collect();
        let (vs, zs, status) = mpc_solve(&setup, &x_shift);
        if status == QpStatus::Optimal {
            self.u_m_world = vs[0].clone();
            self.z_ref = zs[0].iter().zip(&carrot).map(|(z, c)| z + c).collect();
            self.z_end = zs[1].iter().zip(&carrot).map(|(z, c)| z + c).collect();
        } else {
            self.mpc_infeasible += 1;
            self.u_m_world = vec![0.0; n];
            self.z_ref = y.to_vec();
            self.z_end = y.to_vec();
        }
        status
    }

    /// One low-level step at absolute time `t`: runs the planner on tick
    /// boundaries, then solves the CBF program. Returns the commanded input
    /// in the plant's own input coordinates.
    pub fn control(&mut self, x: &[f64], t: f64) -> CtrlRow {
        self.last_theta = if x.len() > 2 { x[2] } else { 0.0 };
        let y = self.tracked_output(x);
        let mut mpc_status = None;
        if t + 1e-9 >= self.ticks as f64 * self.cfg.t_prime {
            if self.ticks > 0 {
                let err = norm2(&sub(&y, &self.z_end));
                self.captures.push((t, err));
            }
            mpc_status = Some(self.plan(&y, t));
            self.ticks += 1;
        }

        let step = t / self.period;
        let e = sub(&y, &self.z_end);
        let b_tube = 0.5 * self.cfg.c * self.cfg.c - 0.5 * e.iter().map(|v| v * v).sum::<f64>();
        let active = self.active_fragment(step);
        let (u_m_body, mut rows) = match &self.dynamics {
            crate::dynamics::Dynamics::Unicycle { .. } => {
                let th = x[2];
                let (et, ep) = ((th.cos(), th.sin()), (-th.sin(), th.cos()));
                let l = self.cfg.offset_point;
                let w = &self.u_m_world;
                let u_m = vec![w[0] * et.0 + w[1] * et.1, (w[0] * ep.0 + w[1] * ep.1) / l];
                let lg = vec![-(e[0] * et.0 + e[1] * et.1), -l * (e[0] * ep.0 + e[1] * ep.1)];
                (u_m, vec![CbfRow { lf: 0.0, lg, value: b_tube }])
            }
            _ => (
                self.u_m_world.clone(),
                vec![CbfRow { lf: 0.0, lg: e.iter().map(|v| -v).collect(), value: b_tube }],
            ),
        };
        let mut barrier_value = f64::INFINITY;
        if let Some(fid) = active {
            let bar = &self.barriers[fid];
            let pos = &x[..2.min(x.len())];
            let b = bar.value(pos, step);
            barrier_value = b;
            let grad = bar.grad_x(pos);
            let lf = bar.dt_term(step) / self.period;
            let lg = match &self.dynamics {
                crate::dynamics::Dynamics::Unicycle { .. } => {
                    let th = x[2];
                    vec![grad[0] * th.cos() + grad[1] * th.sin(), 0.0]
                }
                _ => grad,
            };
            rows.push(CbfRow { lf, lg, value: b });
        }
        let slack_weight = self.cfg.slack_weight.unwrap_or(self.cfg.c);
        let (u_l, slack, qp_status) = low_level(
            &u_m_body,
            &rows,
            &self.params,
            &self.dynamics.input_bounds(),
            slack_weight,
        );
        if qp_status != QpStatus::Optimal {
            self.lowlevel_infeasible += 1;
        }
        let ratio = slack / (2.0 * self.params.alpha);
        if ratio > self.max_slack_ratio {
            self.max_slack_ratio = ratio;
        }
        if ratio > self.slack_bound {
            self.slack_violations += 1;
        }
        let u: Vec<f64> = u_m_body.iter().zip(&u_l).map(|(a, b)| a + b).collect();
        let dt_low = 1.0 / self.cfg.lowlevel_rate;
        let row = CtrlRow {
            t,
            u_m: u_m_body,
            u_l,
            u,
            slack,
            active_fragment: active,
            barrier_value,
            mpc_status,
            qp_status,
            z_ref: self.z_ref.clone(),
            z_end: self.z_end.clone(),
            tube_err: norm2(&e),
        };
        // the reference integrates the held planner input between ticks
        for (z, w) in self.z_ref.iter_mut().zip(&self.u_m_world) {
            *z += w * dt_low;
        }
        row
    }
}

fn tracked_output(dynamics: &crate::dynamics::Dynamics, l: f64, x: &[f64]) -> Vec<f64> {
    match dynamics {
        crate::dynamics::Dynamics::Unicycle { .. } => {
            vec![x[0] + l * x[2].cos(), x[1] + l * x[2].sin()]
        }
        _ => x.to_vec(),
    }
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn norm2(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}
