//! Explicit leapfrog solver for the scaled scalar wave equation
//!
//! ```text
//! gamma rho0 u_tt - div(gamma rho0 c0^2 grad u) = psi(t) delta(x - xs)
//! ```
//!
//! with homogeneous Neumann conditions on all four sides and a quiescent
//! start. The spatial operator is assembled edge by edge: every grid edge
//! carries a stiffness `rho0 c0^2 H(gamma_a, gamma_b) w_e / l_e^2`, where `H`
//! is the harmonic mean of the end-node scalings and `w_e` the edge's share of
//! the dual cell area. Boundary nodes and edges get half (corner: quarter)
//! weights, which is the same operator as mirroring ghost nodes across the
//! boundary. The resulting stiffness matrix is symmetric, so the adjoint
//! problem is the same scheme run on reversed sources.

use std::f64::consts::PI;
use std::path::Path;

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::field::{GridSpec, ScalarField};

const TRACE_MAGIC: &[u8; 4] = b"WFT1";
const BLOWUP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct MaterialModel {
    pub rho0: f64,
    pub c0: f64,
    gamma: ScalarField,
}

impl MaterialModel {
    pub fn new(rho0: f64, c0: f64, gamma: ScalarField) -> Result<Self> {
        if !(rho0 > 0.0 && c0 > 0.0) {
            return Err(Error::InvalidInput(format!(
                "density and wave speed must be positive, got rho0={rho0} c0={c0}"
            )));
        }
        if let Some(v) = gamma.values().iter().find(|&&v| !(v > 0.0 && v <= 1.0)) {
            return Err(Error::InvalidInput(format!(
                "scaling value {v} outside (0, 1]"
            )));
        }
        Ok(Self { rho0, c0, gamma })
    }

    pub fn gamma(&self) -> &ScalarField {
        &self.gamma
    }

    pub fn grid(&self) -> &GridSpec {
        self.gamma.grid()
    }
}

/// Harmonic mean of two edge-end scalings.
#[inline]
pub(crate) fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Partial derivative of [`harmonic`] with respect to its first argument.
#[inline]
pub(crate) fn harmonic_da(a: f64, b: f64) -> f64 {
    let s = a + b;
    2.0 * b * b / (s * s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceSpec {
    xs: f64,
    ys: f64,
    node: (usize, usize),
    pub psi0: f64,
    pub f_psi: f64,
    pub nc: u32,
}

impl SourceSpec {
    /// Places the source at the grid node nearest to `(x, y)`.
    pub fn new(grid: &GridSpec, x: f64, y: f64, psi0: f64, f_psi: f64, nc: u32) -> Result<Self> {
        if !(f_psi > 0.0) || nc == 0 || !psi0.is_finite() {
            return Err(Error::InvalidInput(format!(
                "burst needs f > 0 and at least one cycle, got f={f_psi} nc={nc}"
            )));
        }
        let node = grid.nearest_node(x, y);
        Ok(Self {
            xs: grid.x(node.0),
            ys: grid.y(node.1),
            node,
            psi0,
            f_psi,
            nc,
        })
    }

    pub fn position(&self) -> (f64, f64) {
        (self.xs, self.ys)
    }

    pub fn node(&self) -> (usize, usize) {
        self.node
    }

    pub fn omega(&self) -> f64 {
        2.0 * PI * self.f_psi
    }

    pub fn with_amplitude(mut self, psi0: f64) -> Self {
        self.psi0 = psi0;
        self
    }

    /// Duration of the burst, `2 pi nc / omega`.
    pub fn duration(&self) -> f64 {
        self.nc as f64 / self.f_psi
    }
}

/// Sine burst with `nc` cycles under a half-sine envelope; zero afterwards.
pub fn burst(t: f64, s: &SourceSpec) -> f64 {
    if t < 0.0 || t > s.duration() {
        return 0.0;
    }
    let w = s.omega();
    s.psi0 * (w * t).sin() * (w * t / (2.0 * s.nc as f64)).sin()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeSpec {
    pub dt: f64,
    pub nt: usize,
}

impl TimeSpec {
    pub fn new(dt: f64, nt: usize) -> Result<Self> {
        if !(dt > 0.0) || nt == 0 {
            return Err(Error::InvalidInput(format!(
                "time axis needs dt > 0 and nt >= 1, got dt={dt} nt={nt}"
            )));
        }
        Ok(Self { dt, nt })
    }

    pub fn duration(&self) -> f64 {
        self.nt as f64 * self.dt
    }
}

/// Largest stable leapfrog step for the 2D five-point stencil, scaled by `safety`.
pub fn stable_dt(grid: &GridSpec, c0: f64, safety: f64) -> f64 {
    safety * grid.hx().min(grid.hy()) / (c0 * 2f64.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorArray {
    nodes: Vec<(usize, usize)>,
    positions: Vec<(f64, f64)>,
}

impl SensorArray {
    /// Snaps each position to its nearest node; the snapped nodes must be distinct.
    pub fn new(grid: &GridSpec, positions: &[(f64, f64)]) -> Result<Self> {
        let nodes: Vec<_> = positions
            .iter()
            .map(|&(x, y)| grid.nearest_node(x, y))
            .collect();
        Self::from_nodes(grid, nodes)
    }

    pub fn from_nodes(grid: &GridSpec, nodes: Vec<(usize, usize)>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidInput("at least one sensor required".into()));
        }
        for (k, n) in nodes.iter().enumerate() {
            if n.0 >= grid.nx() || n.1 >= grid.ny() {
                return Err(Error::InvalidInput(format!("sensor {k} at {n:?} is off the grid")));
            }
            if nodes[..k].contains(n) {
                return Err(Error::InvalidInput(format!(
                    "sensor {k} duplicates node {n:?}"
                )));
            }
        }
        let positions = nodes.iter().map(|&(i, j)| (grid.x(i), grid.y(j))).collect();
        Ok(Self { nodes, positions })
    }

    /// `count` sensors evenly spaced along the top boundary at `lx*k/(count+1)`.
    pub fn top_boundary(grid: &GridSpec, count: usize) -> Result<Self> {
        let positions: Vec<_> = (1..=count)
            .map(|k| (grid.lx() * k as f64 / (count + 1) as f64, grid.ly()))
            .collect();
        Self::new(grid, &positions)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[(usize, usize)] {
        &self.nodes
    }

    pub fn positions(&self) -> &[(f64, f64)] {
        &self.positions
    }
}

/// Per-sensor time series, sensor-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorTraces {
    n_sensors: usize,
    nt: usize,
    dt: f64,
    data: Vec<f64>,
}

impl SensorTraces {
    pub fn new(n_sensors: usize, nt: usize, dt: f64, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_sensors * nt {
            return Err(Error::Shape(format!(
                "{} samples for {n_sensors} sensors x {nt} steps",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite trace sample".into()));
        }
        Ok(Self { n_sensors, nt, dt, data })
    }

    pub fn zeros(n_sensors: usize, nt: usize, dt: f64) -> Self {
        Self {
            n_sensors,
            nt,
            dt,
            data: vec![0.0; n_sensors * nt],
        }
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn trace(&self, sensor: usize) -> &[f64] {
        &self.data[sensor * self.nt..(sensor + 1) * self.nt]
    }

    pub fn same_shape(&self, other: &SensorTraces) -> bool {
        self.n_sensors == other.n_sensors && self.nt == other.nt && self.dt == other.dt
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.magic(TRACE_MAGIC);
        w.u32(self.n_sensors as u32);
        w.u32(self.nt as u32);
        w.f64(self.dt);
        w.f64s(&self.data);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.expect_magic(TRACE_MAGIC)?;
        let n = r.u32()? as usize;
        let nt = r.u32()? as usize;
        let dt = r.f64()?;
        let data = r.f64s(n * nt)?;
        r.finish()?;
        Self::new(n, nt, dt, data).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }
}

/// Full wavefield history, one snapshot of `grid.len()` values per step.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    grid: GridSpec,
    nt: usize,
    data: Vec<f64>,
}

impl SpaceTimeField {
    pub fn new(grid: GridSpec, nt: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() * nt {
            return Err(Error::Shape(format!(
                "history has {} values, expected {} snapshots of {}",
                data.len(),
                nt,
                grid.len()
            )));
        }
        Ok(Self { grid, nt, data })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn snapshot(&self, n: usize) -> &[f64] {
        let len = self.grid.len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// A nodal point force with one amplitude per time step.
pub(crate) struct PointForce<'a> {
    pub node: usize,
    pub amplitude: &'a [f64],
}

/// Precomputed leapfrog update coefficients, `dt^2 k_e / m_j` for each of the
/// four neighbours and `dt^2 / m_j` for the nodal force.
struct Stencil {
    nx: usize,
    ny: usize,
    left: Vec<f64>,
    right: Vec<f64>,
    down: Vec<f64>,
    up: Vec<f64>,
    force: Vec<f64>,
}

/// Edge weight `w_e / l_e^2` of the x-edge starting at node `(i, j)`.
pub(crate) fn x_edge_weight(grid: &GridSpec, j: usize) -> f64 {
    let half = if j == 0 || j == grid.ny() - 1 { 0.5 } else { 1.0 };
    half * grid.hy() / grid.hx()
}

/// Edge weight `w_e / l_e^2` of the y-edge starting at node `(i, j)`.
pub(crate) fn y_edge_weight(grid: &GridSpec, i: usize) -> f64 {
    let half = if i == 0 || i == grid.nx() - 1 { 0.5 } else { 1.0 };
    half * grid.hx() / grid.hy()
}

impl Stencil {
    fn new(m: &MaterialModel, dt: f64) -> Self {
        let grid = m.grid();
        let (nx, ny) = (grid.nx(), grid.ny());
        let g = m.gamma().values();
        let stiff = m.rho0 * m.c0 * m.c0;
        let n = grid.len();
        let mut s = Stencil {
            nx,
            ny,
            left: vec![0.0; n],
            right: vec![0.0; n],
            down: vec![0.0; n],
            up: vec![0.0; n],
            force: vec![0.0; n],
        };
        let dt2 = dt * dt;
        for j in 0..ny {
            for i in 0..nx {
                let k = grid.index(i, j);
                let inv_m = dt2 / (m.rho0 * g[k] * grid.node_area(i, j));
                s.force[k] = inv_m;
                if i > 0 {
                    s.left[k] = inv_m * stiff * harmonic(g[k], g[k - 1]) * x_edge_weight(grid, j);
                }
                if i + 1 < nx {
                    s.right[k] = inv_m * stiff * harmonic(g[k], g[k + 1]) * x_edge_weight(grid, j);
                }
                if j > 0 {
                    s.down[k] = inv_m * stiff * harmonic(g[k], g[k - nx]) * y_edge_weight(grid, i);
                }
                if j + 1 < ny {
                    s.up[k] = inv_m * stiff * harmonic(g[k], g[k + nx]) * y_edge_weight(grid, i);
                }
            }
        }
        s
    }

    /// `next = 2 cur - prev + dt^2 M^{-1} (-K cur)`; returns the largest |next|.
    fn step(&self, prev: &[f64], cur: &[f64], next: &mut [f64]) -> f64 {
        let nx = self.nx;
        let mut peak = 0.0f64;
        for j in 0..self.ny {
            let row = j * nx;
            for i in 0..nx {
                let k = row + i;
                let u = cur[k];
                let ul = if i > 0 { cur[k - 1] } else { u };
                let ur = if i + 1 < nx { cur[k + 1] } else { u };
                let ud = if j > 0 { cur[k - nx] } else { u };
                let uu = if j + 1 < self.ny { cur[k + nx] } else { u };
                let lap = (self.left[k] * (ul - u) + self.right[k] * (ur - u))
                    + self.down[k] * (ud - u)
                    + self.up[k] * (uu - u);
                let v = 2.0 * u - prev[k] + lap;
                next[k] = v;
                // NaN fails the comparison and poisons the peak
                peak = if v.abs() <= peak { peak } else { v.abs() };
            }
        }
        peak
    }
}

pub(crate) struct Propagation {
    pub traces: Vec<f64>,
    pub history: Option<SpaceTimeField>,
}

/// Runs `nt` leapfrog steps from rest under the given point forces, recording
/// the nodes in `record` at every step (record-major output).
pub(crate) fn propagate(
    m: &MaterialModel,
    ts: &TimeSpec,
    forces: &[PointForce<'_>],
    record: &[usize],
    keep_field: bool,
    stage: &'static str,
) -> Result<Propagation> {
    let grid = *m.grid();
    let n = grid.len();
    let nt = ts.nt;
    let stencil = Stencil::new(m, ts.dt);
    let mut prev = vec![0.0; n];
    let mut cur = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut traces = vec![0.0; record.len() * nt];
    let mut history = if keep_field {
        let mut h = Vec::with_capacity(n * nt);
        h.extend_from_slice(&cur);
        Some(h)
    } else {
        None
    };

    // snapshot 0 is the quiescent state; snapshot s+1 is produced by step s
    for s in 0..nt.saturating_sub(1) {
        let mut peak = stencil.step(&prev, &cur, &mut next);
        for f in forces {
            let a = f.amplitude[s];
            if a != 0.0 {
                next[f.node] += stencil.force[f.node] * a;
                peak = peak.max(next[f.node].abs());
            }
        }
        if !(peak <= BLOWUP) {
            return Err(Error::Divergence { stage, step: s + 1 });
        }
        for (r, &node) in record.iter().enumerate() {
            traces[r * nt + s + 1] = next[node];
        }
        if let Some(h) = history.as_mut() {
            h.extend_from_slice(&next);
        }
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
    }

    Ok(Propagation {
        traces,
        history: history.map(|h| SpaceTimeField { grid, nt, data: h }),
    })
}

pub(crate) fn check_time_step(m: &MaterialModel, ts: &TimeSpec) -> Result<()> {
    let limit = stable_dt(m.grid(), m.c0, 1.0);
    if ts.dt > limit {
        return Err(Error::InvalidInput(format!(
            "dt={} exceeds the stability limit {limit}",
            ts.dt
        )));
    }
    Ok(())
}

/// Integrates the wave equation driven by the sine-burst source and samples
/// the wavefield at every sensor node on every step.
pub fn solve_forward(
    m: &MaterialModel,
    s: &SourceSpec,
    ts: &TimeSpec,
    sensors: &SensorArray,
    keep_field: bool,
) -> Result<(SensorTraces, Option<SpaceTimeField>)> {
    check_time_step(m, ts)?;
    let grid = m.grid();
    let (si, sj) = s.node();
    if si >= grid.nx() || sj >= grid.ny() {
        return Err(Error::InvalidInput("source node off the grid".into()));
    }
    let amplitude: Vec<f64> = (0..ts.nt).map(|n| burst(n as f64 * ts.dt, s)).collect();
    let forces = [PointForce {
        node: grid.index(si, sj),
        amplitude: &amplitude,
    }];
    let record: Vec<usize> = sensors
        .nodes()
        .iter()
        .map(|&(i, j)| grid.index(i, j))
        .collect();
    let out = propagate(m, ts, &forces, &record, keep_field, "forward")?;
    let traces = SensorTraces {
        n_sensors: sensors.len(),
        nt: ts.nt,
        dt: ts.dt,
        data: out.traces,
    };
    Ok((traces, out.history))
}
