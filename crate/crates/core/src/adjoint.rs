//! Measurement misfit, adjoint wavefield and the sensitivity of the misfit
//! with respect to the nodal scaling field.
//!
//! The adjoint field is obtained by running the forward scheme on the
//! time-reversed residuals injected at the sensor nodes. The physical-time
//! adjoint is the negated, time-reversed result of that solve,
//! `p(t_n) = -v(tau_{nt-1-n})`, and the kernel correlates it with the forward
//! field using staggered time differences and edge-wise spatial differences.
//! With that pairing the assembled gradient is the exact derivative of the
//! discrete misfit, which the finite-difference tests check directly.

use crate::error::{Error, Result};
use crate::field::{GridSpec, ScalarField};
use crate::solver::{
    check_time_step, harmonic_da, propagate, solve_forward, x_edge_weight, y_edge_weight,
    MaterialModel, PointForce, SensorArray, SensorTraces, SourceSpec, SpaceTimeField, TimeSpec,
};

/// Sensor-major residuals `pred - meas`.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals(SensorTraces);

impl Residuals {
    pub fn between(pred: &SensorTraces, meas: &SensorTraces) -> Result<Self> {
        check_shapes(pred, meas)?;
        let data = pred
            .data()
            .iter()
            .zip(meas.data())
            .map(|(p, m)| p - m)
            .collect();
        Ok(Residuals(SensorTraces::new(
            pred.n_sensors(),
            pred.nt(),
            pred.dt(),
            data,
        )?))
    }

    pub fn traces(&self) -> &SensorTraces {
        &self.0
    }
}

fn check_shapes(pred: &SensorTraces, meas: &SensorTraces) -> Result<()> {
    if !pred.same_shape(meas) {
        return Err(Error::Shape(format!(
            "predicted traces {}x{} (dt={}) vs measured {}x{} (dt={})",
            pred.n_sensors(),
            pred.nt(),
            pred.dt(),
            meas.n_sensors(),
            meas.nt(),
            meas.dt()
        )));
    }
    Ok(())
}

/// `1/2 sum_i sum_n (pred - meas)^2 dt`, rectangle rule in time.
pub fn measurement_loss(pred: &SensorTraces, meas: &SensorTraces) -> Result<f64> {
    check_shapes(pred, meas)?;
    let ss: f64 = pred
        .data()
        .iter()
        .zip(meas.data())
        .map(|(p, m)| (p - m) * (p - m))
        .sum();
    Ok(0.5 * ss * pred.dt())
}

/// Solves the adjoint problem in reversed time `tau = T - t`; the returned
/// history is indexed by `tau`.
pub fn solve_adjoint(
    m: &MaterialModel,
    res: &Residuals,
    ts: &TimeSpec,
    sensors: &SensorArray,
) -> Result<SpaceTimeField> {
    check_time_step(m, ts)?;
    let r = res.traces();
    if r.n_sensors() != sensors.len() || r.nt() != ts.nt || r.dt() != ts.dt {
        return Err(Error::Shape(format!(
            "residuals {}x{} do not match {} sensors x {} steps",
            r.n_sensors(),
            r.nt(),
            sensors.len(),
            ts.nt
        )));
    }
    let grid = m.grid();
    let reversed: Vec<Vec<f64>> = (0..r.n_sensors())
        .map(|i| r.trace(i).iter().rev().copied().collect())
        .collect();
    let forces: Vec<PointForce<'_>> = sensors
        .nodes()
        .iter()
        .zip(&reversed)
        .map(|(&(i, j), amp)| PointForce {
            node: grid.index(i, j),
            amplitude: amp,
        })
        .collect();
    let out = propagate(m, ts, &forces, &[], true, "adjoint")?;
    Ok(out.history.expect("history requested"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrechetKernel {
    pub field: ScalarField,
}

/// Assembles the sensitivity density
/// `K(x) = sum_n [ -rho0 p_t u_t + rho0 c0^2 grad p . grad u ] dt`.
///
/// Time derivatives are taken on half steps, `(u^{n+1} - u^n)/dt`. The
/// spatial product is accumulated on the edges touching each node, weighted
/// by the derivative of the edge's harmonic-mean scaling with respect to the
/// node, and normalised by the nodal area.
pub fn frechet_kernel(
    u: &SpaceTimeField,
    u_adj: &SpaceTimeField,
    m: &MaterialModel,
    ts: &TimeSpec,
) -> Result<FrechetKernel> {
    let grid = *m.grid();
    if u.grid() != &grid || u_adj.grid() != &grid {
        return Err(Error::Shape("wavefields and material live on different grids".into()));
    }
    if u.nt() != ts.nt || u_adj.nt() != ts.nt {
        return Err(Error::Shape(format!(
            "wavefields have {} and {} snapshots, time axis has {}",
            u.nt(),
            u_adj.nt(),
            ts.nt
        )));
    }
    let (nx, ny) = (grid.nx(), grid.ny());
    let n = grid.len();
    let nt = ts.nt;
    let dt = ts.dt;
    // p^n = -v^{nt-1-n}; sign folded into the accumulations below
    let adj = |step: usize| u_adj.snapshot(nt - 1 - step);

    // sum_n (p^{n+1}-p^n)(u^{n+1}-u^n)
    let mut time_acc = vec![0.0; n];
    // sum_n (p_b - p_a)(u_b - u_a) per edge, x-edges and y-edges
    let mut xedge = vec![0.0; n];
    let mut yedge = vec![0.0; n];

    for step in 0..nt {
        let us = u.snapshot(step);
        let vs = adj(step);
        if step + 1 < nt {
            let un = u.snapshot(step + 1);
            let vn = adj(step + 1);
            for k in 0..n {
                // (p^{n+1}-p^n) = -(v_next - v_cur)
                time_acc[k] -= (vn[k] - vs[k]) * (un[k] - us[k]);
            }
        }
        for j in 0..ny {
            let row = j * nx;
            for i in 0..nx - 1 {
                let k = row + i;
                // p = -v on both ends, so the product picks up one minus sign
                xedge[k] -= (vs[k + 1] - vs[k]) * (us[k + 1] - us[k]);
            }
        }
        for j in 0..ny - 1 {
            let row = j * nx;
            for i in 0..nx {
                let k = row + i;
                yedge[k] -= (vs[k + nx] - vs[k]) * (us[k + nx] - us[k]);
            }
        }
    }

    let g = m.gamma().values();
    let stiff = m.rho0 * m.c0 * m.c0;
    let mut values = vec![0.0; n];
    for j in 0..ny {
        for i in 0..nx {
            let k = grid.index(i, j);
            let area = grid.node_area(i, j);
            let mut acc = -m.rho0 * area * time_acc[k] / dt;
            let mut edges = 0.0;
            if i > 0 {
                edges += harmonic_da(g[k], g[k - 1]) * x_edge_weight(&grid, j) * xedge[k - 1];
            }
            if i + 1 < nx {
                edges += harmonic_da(g[k], g[k + 1]) * x_edge_weight(&grid, j) * xedge[k];
            }
            if j > 0 {
                edges += harmonic_da(g[k], g[k - nx]) * y_edge_weight(&grid, i) * yedge[k - nx];
            }
            if j + 1 < ny {
                edges += harmonic_da(g[k], g[k + nx]) * y_edge_weight(&grid, i) * yedge[k];
            }
            acc += stiff * dt * edges;
            values[k] = acc / area;
        }
    }
    Ok(FrechetKernel {
        field: ScalarField::new(grid, values)?,
    })
}

/// Nodal gradient `g_j = K(x_j) A_j` with the boundary-aware nodal area.
pub fn gamma_gradient(k: &FrechetKernel, grid: &GridSpec) -> ScalarField {
    let values = k
        .field
        .values()
        .iter()
        .zip(grid.node_areas())
        .map(|(kv, a)| kv * a)
        .collect();
    ScalarField::new(*grid, values).expect("kernel is finite")
}

/// Result of one forward + adjoint evaluation of the misfit.
#[derive(Debug, Clone)]
pub struct MisfitGradient {
    pub loss: f64,
    pub predicted: SensorTraces,
    pub gradient: ScalarField,
}

/// Forward solve, misfit, adjoint solve and kernel assembly for one material.
pub fn misfit_gradient(
    m: &MaterialModel,
    s: &SourceSpec,
    ts: &TimeSpec,
    sensors: &SensorArray,
    meas: &SensorTraces,
) -> Result<MisfitGradient> {
    let (pred, field) = solve_forward(m, s, ts, sensors, true)?;
    let loss = measurement_loss(&pred, meas)?;
    let res = Residuals::between(&pred, meas)?;
    let adj = solve_adjoint(m, &res, ts, sensors)?;
    let kernel = frechet_kernel(&field.expect("history requested"), &adj, m, ts)?;
    Ok(MisfitGradient {
        loss,
        predicted: pred,
        gradient: gamma_gradient(&kernel, m.grid()),
    })
}
