//! System models: discrete-time step maps for reachability plus the
//! continuous-time vector fields the simulator integrates.

use serde::{Deserialize, Serialize};

/// Admissible input samples drawn from the compact input set.
#[derive(Clone, Debug)]
pub struct InputGrid {
    pub samples: Vec<Vec<f64>>,
    pub bounds: Vec<[f64; 2]>,
}

impl InputGrid {
    /// Uniform grid with `per_axis` samples per axis, endpoints included.
    pub fn axis_grid(bounds: &[[f64; 2]], per_axis: usize) -> Self {
        assert!(per_axis >= 1);
        let axes: Vec<Vec<f64>> = bounds
            .iter()
            .map(|[lo, hi]| {
                if per_axis == 1 {
                    vec![0.5 * (lo + hi)]
                } else {
                    (0..per_axis)
                        .map(|i| lo + (hi - lo) * i as f64 / (per_axis - 1) as f64)
                        .collect()
                }
            })
            .collect();
        let mut samples = vec![Vec::new()];
        for axis in &axes {
            samples = samples
                .iter()
                .flat_map(|s| {
                    axis.iter().map(move |v| {
                        let mut t = s.clone();
                        t.push(*v);
                        t
                    })
                })
                .collect();
        }
        InputGrid { samples, bounds: bounds.to_vec() }
    }

    pub fn from_samples(samples: Vec<Vec<f64>>, bounds: Vec<[f64; 2]>) -> Self {
        assert!(!samples.is_empty());
        for s in &samples {
            assert!(s
                .iter()
                .zip(&bounds)
                .all(|(v, [lo, hi])| *v >= *lo - 1e-12 && *v <= *hi + 1e-12));
        }
        InputGrid { samples, bounds }
    }
}

/// Discrete-time plant `x_{k+1} = f(x_k, u_k)` with its sampling period.
#[derive(Clone)]
pub enum Dynamics {
    /// Velocity-controlled planar integrator, exact step `x+ = x + dt·u`.
    Integrator2d { dt: f64, bound: [f64; 2] },
    /// Kinematic unicycle `(x, y, θ)` with inputs `(v, ω)`; the discrete map
    /// is the exact constant-input arc over one period.
    Unicycle { dt: f64, v_bound: f64, w_bound: f64 },
    /// 1-D integer lattice walk with inputs {-1, 0, 1}, clamped to `[lo, hi]`.
    Walk1d { lo: f64, hi: f64 },
    /// Arbitrary step map for tests.
    Custom {
        dim: usize,
        input_dim: usize,
        dt: f64,
        bounds: Vec<[f64; 2]>,
        step: fn(&[f64], &[f64], f64) -> Vec<f64>,
    },
}

impl std::fmt::Debug for Dynamics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Dynamics::Integrator2d { dt, bound } => {
                write!(f, "Integrator2d {{ dt: {dt}, bound: {bound:?} }}")
            }
            Dynamics::Unicycle { dt, v_bound, w_bound } => {
                write!(f, "Unicycle {{ dt: {dt}, v: {v_bound}, w: {w_bound} }}")
            }
            Dynamics::Walk1d { lo, hi } => write!(f, "Walk1d {{ lo: {lo}, hi: {hi} }}"),
            Dynamics::Custom { dim, .. } => write!(f, "Custom {{ dim: {dim} }}"),
        }
    }
}

impl Dynamics {
    pub fn integrator2d(dt: f64, bound: [f64; 2]) -> Self {
        Dynamics::Integrator2d { dt, bound }
    }

    pub fn unicycle(dt: f64, v_bound: f64, w_bound: f64) -> Self {
        Dynamics::Unicycle { dt, v_bound, w_bound }
    }

    pub fn walk1d(lo: f64, hi: f64) -> Self {
        Dynamics::Walk1d { lo, hi }
    }

    pub fn dim(&self) -> usize {
        match self {
            Dynamics::Integrator2d { .. } => 2,
            Dynamics::Unicycle { .. } => 3,
            Dynamics::Walk1d { .. } => 1,
            Dynamics::Custom { dim, .. } => *dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Dynamics::Integrator2d { .. } | Dynamics::Unicycle { .. } => 2,
            Dynamics::Walk1d { .. } => 1,
            Dynamics::Custom { input_dim, .. } => *input_dim,
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            Dynamics::Integrator2d { dt, .. }
            | Dynamics::Unicycle { dt, .. }
            | Dynamics::Custom { dt, .. } => *dt,
            Dynamics::Walk1d { .. } => 1.0,
        }
    }

    pub fn input_bounds(&self) -> Vec<[f64; 2]> {
        match self {
            Dynamics::Integrator2d { bound, .. } => {
                vec![[-bound[0], bound[0]], [-bound[1], bound[1]]]
            }
            Dynamics::Unicycle { v_bound, w_bound, .. } => {
                vec![[-v_bound, *v_bound], [-w_bound, *w_bound]]
            }
            Dynamics::Walk1d { .. } => vec![[-1.0, 1.0]],
            Dynamics::Custom { bounds, .. } => bounds.clone(),
        }
    }

    /// One sampling period of the discrete map.
    pub fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        match self {
            Dynamics::Integrator2d { dt, .. } => vec![x[0] + dt * u[0], x[1] + dt * u[1]],
            Dynamics::Unicycle { dt, .. } => unicycle_arc(x, u, *dt),
            Dynamics::Walk1d { lo, hi } => vec![(x[0] + u[0].round()).clamp(*lo, *hi)],
            Dynamics::Custom { step, dt, .. } => step(x, u, *dt),
        }
    }

    /// Continuous-time vector field for the simulator (RK4). The lattice walk
    /// has none and moves in discrete jumps.
    pub fn deriv(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        match self {
            Dynamics::Integrator2d { .. } => vec![u[0], u[1]],
            Dynamics::Unicycle { .. } => vec![u[0] * x[2].cos(), u[0] * x[2].sin(), u[1]],
            Dynamics::Walk1d { .. } => vec![0.0],
            Dynamics::Custom { .. } => panic!("custom dynamics have no continuous field"),
        }
    }

    /// The box-union fast path needs the one-step reachable offset to be a
    /// state-independent box.
    pub fn translation_invariant(&self) -> bool {
        matches!(self, Dynamics::Integrator2d { .. })
    }

    /// Per-axis Minkowski radius of one step for translation-invariant
    /// dynamics.
    pub fn input_step_radius(&self) -> Vec<f64> {
        match self {
            Dynamics::Integrator2d { dt, bound } => vec![bound[0] * dt, bound[1] * dt],
            _ => panic!("no fast-path radius for {self:?}"),
        }
    }

    /// Which state dimensions wrap around (the unicycle heading).
    pub fn wrap_dims(&self) -> Vec<bool> {
        match self {
            Dynamics::Unicycle { .. } => vec![false, false, true],
            _ => vec![false; self.dim()],
        }
    }
}

fn unicycle_arc(x: &[f64], u: &[f64], dt: f64) -> Vec<f64> {
    let (v, w) = (u[0], u[1]);
    let th = x[2];
    let th1 = th + w * dt;
    if w.abs() < 1e-9 {
        vec![x[0] + v * dt * th.cos(), x[1] + v * dt * th.sin(), th1]
    } else {
        vec![
            x[0] + v / w * (th1.sin() - th.sin()),
            x[1] - v / w * (th1.cos() - th.cos()),
            th1,
        ]
    }
}

/// Serializable dynamics description used by scenario files.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DynamicsSpec {
    Integrator2d { bound: [f64; 2] },
    Unicycle { v_bound: f64, w_bound: f64 },
    Walk1d { lo: f64, hi: f64 },
}

impl DynamicsSpec {
    pub fn build(&self, dt: f64) -> Dynamics {
        match self {
            DynamicsSpec::Integrator2d { bound } => Dynamics::integrator2d(dt, *bound),
            DynamicsSpec::Unicycle { v_bound, w_bound } => {
                Dynamics::unicycle(dt, *v_bound, *w_bound)
            }
            DynamicsSpec::Walk1d { lo, hi } => Dynamics::walk1d(*lo, *hi),
        }
    }
}
