//! Explicit leapfrog evolution of the equivariant wave map flow
//! u_tt = u_rr + u_r/r - k^2 sin(2u)/(2 r^2).
//!
//! Kick-drift-kick with the acceleration cached between steps, so each
//! step costs one stencil sweep. The outer node holds its initial trace,
//! which is homogeneous Dirichlet for data vanishing at r_max; runs
//! shorter than the light-crossing time are reflection free, longer runs
//! accept the reflected tail as part of the measured signal. Collapse is
//! detected, not resolved: once a concentrating scale falls under the
//! grid the kinetic guard halts the run.

use std::sync::Arc;

use crate::ansatz::{self, AnsatzParams};
use crate::error::Error;
use crate::field::{RadialField, StatePair};
use crate::grid::RadialGrid;
use crate::ops;
use crate::profiles::ProfileSet;
use crate::Result;

/// Treatment of the last grid node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OuterBc {
    /// Freeze the initial trace (zero velocity at r_max).
    #[default]
    DirichletZero,
}

#[derive(Debug, Clone, Copy)]
pub struct EvolveConfig {
    /// Explicit time step; None picks cfl * (minimal node spacing).
    pub dt: Option<f64>,
    pub t_end: f64,
    /// Courant factor, at most 1/2.
    pub cfl: f64,
    /// Snapshot stride in steps; 0 keeps roughly 256 frames.
    pub record_every: usize,
    pub outer_bc: OuterBc,
}

impl EvolveConfig {
    /// Stable configuration for index k: Courant factor 10% under the
    /// von Neumann limit 2/sqrt(4 + k^2) set by the innermost node,
    /// capped at the contract bound 1/2.
    pub fn for_k(k: u32, t_end: f64) -> Self {
        let kf = k as f64;
        let cfl = (0.9 * 2.0 / (4.0 + kf * kf).sqrt()).min(0.5);
        EvolveConfig {
            dt: None,
            t_end,
            cfl,
            record_every: 0,
            outer_bc: OuterBc::DirichletZero,
        }
    }

    /// Resolved step size, after the Courant check against h_min.
    fn resolve_dt(&self, h_min: f64) -> Result<f64> {
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(Error::InvalidArgument(format!("t_end = {}", self.t_end)));
        }
        if !(self.cfl > 0.0 && self.cfl <= 0.5) {
            return Err(Error::InvalidArgument(format!(
                "Courant factor {} outside (0, 1/2]",
                self.cfl
            )));
        }
        let dt = self.dt.unwrap_or(self.cfl * h_min);
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("dt = {dt}")));
        }
        if dt > self.cfl * h_min * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "dt = {dt:.3e} violates the Courant bound cfl * h_min = {:.3e}",
                self.cfl * h_min
            )));
        }
        Ok(dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvolveStatus {
    Completed,
    /// The kinetic norm crossed the blow-up guard and the run halted.
    ConcentrationDetected { t: f64 },
}

#[derive(Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StatePair>,
    pub energies: Vec<f64>,
    pub status: EvolveStatus,
    pub dt: f64,
    pub steps: usize,
}

impl Trajectory {
    /// max |E(t) - E(0)| / |E(0)| over the recorded frames.
    pub fn energy_drift(&self) -> f64 {
        let e0 = self.energies[0];
        let worst = self
            .energies
            .iter()
            .map(|e| (e - e0).abs())
            .fold(0.0, f64::max);
        worst / e0.abs().max(1e-300)
    }

    pub fn last_state(&self) -> &StatePair {
        self.states.last().expect("trajectory records frame 0")
    }
}

/// First-order form of the flow: (u, v) -> (v, Delta u - k^2 sin(2u)/(2 r^2)).
/// The outer node follows the frozen-trace convention (zero acceleration).
pub fn rhs(k: u32, s: &StatePair) -> Result<StatePair> {
    let grid = s.grid().clone();
    let n = grid.len();
    let u = s.u.values();
    for (name, w) in [("u", s.u.values()), ("udot", s.udot.values())] {
        if let Some(i) = w.iter().position(|x| !x.is_finite()) {
            return Err(Error::NumericalFailure(format!(
                "non-finite {name} at node {i}"
            )));
        }
    }
    let d1 = grid.deriv1(u);
    let d2 = grid.deriv2(u);
    let k2 = (k as f64).powi(2);
    let mut acc = vec![0.0; n];
    for i in 0..n - 1 {
        let r = grid.nodes()[i];
        acc[i] = d2[i] + d1[i] / r - k2 * (2.0 * u[i]).sin() / (2.0 * r * r);
    }
    if let Some(i) = acc.iter().position(|x| !x.is_finite()) {
        return Err(Error::NumericalFailure(format!(
            "non-finite acceleration at node {i} (r = {:.3e})",
            grid.nodes()[i]
        )));
    }
    StatePair::new(s.udot.clone(), RadialField::from_values(&grid, acc)?)
}

pub fn evolve(k: u32, s0: &StatePair, cfg: &EvolveConfig) -> Result<Trajectory> {
    let grid = s0.grid().clone();
    let n = grid.len();
    let dt0 = cfg.resolve_dt(grid.h_min())?;
    // Land on t_end exactly; shrinking dt keeps the Courant bound.
    let steps = ((cfg.t_end / dt0).ceil() as usize).max(1);
    let dt = cfg.t_end / steps as f64;
    let stride = if cfg.record_every == 0 {
        (steps / 256).max(1)
    } else {
        cfg.record_every
    };

    let mut u: Vec<f64> = s0.u.values().to_vec();
    let mut v: Vec<f64> = s0.udot.values().to_vec();
    for (name, w) in [("u", &u), ("udot", &v)] {
        if let Some(i) = w.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite initial {name} at node {i}"
            )));
        }
    }
    let OuterBc::DirichletZero = cfg.outer_bc;
    v[n - 1] = 0.0;

    // Fused interior stencil: d2 + d1/r per node, plus the sine prefactor.
    let nodes = grid.nodes();
    let d1c = grid.d1_coeffs();
    let d2c = grid.d2_coeffs();
    let k2 = (k as f64).powi(2);
    let mut cw = vec![[0.0f64; 3]; n];
    let mut pot = vec![0.0f64; n];
    for i in 0..n - 1 {
        let r = nodes[i];
        cw[i] = [
            d2c[i][0] + d1c[i][0] / r,
            d2c[i][1] + d1c[i][1] / r,
            d2c[i][2] + d1c[i][2] / r,
        ];
        pot[i] = k2 / (2.0 * r * r);
    }

    let accel = |u: &[f64], acc: &mut [f64]| {
        acc[0] = cw[0][1] * u[0] + cw[0][2] * u[1] - pot[0] * (2.0 * u[0]).sin();
        for i in 1..n - 1 {
            acc[i] = cw[i][0] * u[i - 1] + cw[i][1] * u[i] + cw[i][2] * u[i + 1]
                - pot[i] * (2.0 * u[i]).sin();
        }
        acc[n - 1] = 0.0;
    };

    let snapshot = |u: &[f64], v: &[f64]| -> Result<(StatePair, f64)> {
        let su = RadialField::from_values(&grid, u.to_vec())?;
        let sv = RadialField::from_values(&grid, v.to_vec())?;
        let state = StatePair::new(su, sv)?;
        let e = ops::energy(&state, k);
        Ok((state, e))
    };

    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut energies = Vec::new();
    let (s, e) = snapshot(&u, &v)?;
    // Guard floor 1.0 keeps data started at (or near) rest from tripping
    // on ordinary oscillation.
    let guard = 1e3 * ops::l2_norm_sq(&s.udot).sqrt().max(1.0);
    times.push(0.0);
    states.push(s);
    energies.push(e);

    let mut acc = vec![0.0; n];
    accel(&u, &mut acc);

    let mut status = EvolveStatus::Completed;
    let mut done = 0usize;
    for step in 1..=steps {
        for i in 0..n - 1 {
            v[i] += 0.5 * dt * acc[i];
            u[i] += dt * v[i];
        }
        accel(&u, &mut acc);
        for i in 0..n - 1 {
            v[i] += 0.5 * dt * acc[i];
        }
        done = step;
        if step % stride == 0 || step == steps {
            let t = step as f64 * dt;
            for (name, w) in [("u", &u), ("udot", &v)] {
                if let Some(i) = w.iter().position(|x| !x.is_finite()) {
                    return Err(Error::NumericalFailure(format!(
                        "non-finite {name} at node {i}, t = {t:.6e}"
                    )));
                }
            }
            let (s, e) = snapshot(&u, &v)?;
            let vnorm = ops::l2_norm_sq(&s.udot).sqrt();
            times.push(t);
            states.push(s);
            energies.push(e);
            if vnorm > guard {
                status = EvolveStatus::ConcentrationDetected { t };
                break;
            }
        }
    }

    Ok(Trajectory {
        times,
        states,
        energies,
        status,
        dt,
        steps: done,
    })
}

/// Quintic ramp: 1 below x0, 0 above x1, C^2 across.
fn ramp_down(x: f64, x0: f64, x1: f64) -> f64 {
    if x <= x0 {
        1.0
    } else if x >= x1 {
        0.0
    } else {
        let s = (x - x0) / (x1 - x0);
        1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }
}

/// Cut the far tail with a C^2 ramp on [0.85, 0.97] r_max so the state
/// meets the frozen outer node exactly. Two-bubble fields decay like
/// r^{-k} there, so the surgery is O(r_max^{-k}) in amplitude.
pub fn taper_tail(s: &StatePair) -> Result<StatePair> {
    let grid = s.grid().clone();
    let x0 = 0.85 * grid.r_max();
    let x1 = 0.97 * grid.r_max();
    let cut = |f: &RadialField| -> Result<RadialField> {
        let vals = grid
            .nodes()
            .iter()
            .zip(f.values())
            .map(|(r, v)| v * ramp_down(*r, x0, x1))
            .collect();
        RadialField::from_values(&grid, vals)
    };
    StatePair::new(cut(&s.u)?, cut(&s.udot)?)
}

/// Assemble the modeled two-bubble state, taper its tail onto the frozen
/// boundary, and run the flow.
pub fn evolve_ansatz(
    ps: &ProfileSet,
    grid: &Arc<RadialGrid>,
    p: AnsatzParams,
    cfg: &EvolveConfig,
) -> Result<Trajectory> {
    let state = ansatz::phi(ps, grid, p)?;
    let state = taper_tail(&state)?;
    evolve(ps.k, &state, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{apply, OperatorSample};
    use crate::profiles::q_profile;

    fn q_state(k: u32, grid: &Arc<RadialGrid>) -> StatePair {
        let u = RadialField::from_fn(grid, |r| q_profile(k, r));
        StatePair::new(u, RadialField::zeros(grid)).unwrap()
    }

    fn bump(grid: &Arc<RadialGrid>, center: f64, width: f64, amp: f64) -> RadialField {
        RadialField::from_fn(grid, |r| {
            let s = (r - center) / width;
            if s.abs() >= 1.0 {
                0.0
            } else {
                amp * (1.0 - s * s).powi(5)
            }
        })
    }

    fn h_dist(a: &StatePair, b: &StatePair, k: u32) -> f64 {
        let du = a.u.sub(&b.u).unwrap();
        let dv = a.udot.sub(&b.udot).unwrap();
        (ops::h_norm_sq(&du, k) + ops::l2_norm_sq(&dv)).sqrt()
    }

    #[test]
    fn rhs_of_the_harmonic_map_is_numerically_static() {
        let grid = RadialGrid::uniform(8192, 16.0).unwrap();
        let k = 4;
        let s = q_state(k, &grid);
        let out = rhs(k, &s).unwrap();
        assert_eq!(out.u.values(), s.udot.values());
        // Scale of the balanced terms in the equation.
        let k2 = (k as f64).powi(2);
        let pot = RadialField::from_fn(&grid, |r| {
            k2 * (2.0 * q_profile(k, r)).sin() / (2.0 * r * r)
        });
        let rel = ops::l2_norm_sq(&out.udot).sqrt() / ops::l2_norm_sq(&pot).sqrt();
        assert!(rel < 1e-3, "relative static residual {rel:.3e}");
    }

    #[test]
    fn rhs_of_pure_velocity_data_transports_it() {
        let grid = RadialGrid::uniform(512, 8.0).unwrap();
        let v = bump(&grid, 3.0, 1.0, 0.2);
        let s = StatePair::new(RadialField::zeros(&grid), v.clone()).unwrap();
        let out = rhs(4, &s).unwrap();
        assert_eq!(out.u.values(), v.values());
        assert!(out.udot.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rhs_linearizes_to_minus_the_linearized_operator() {
        let grid = RadialGrid::uniform(4096, 12.0).unwrap();
        let k = 4;
        let q = q_state(k, &grid);
        let phi = bump(&grid, 1.5, 0.8, 1.0);
        let lphi = apply(&OperatorSample::LinearizedAboutQ { k, scale: 1.0 }, &phi).unwrap();
        let base = rhs(k, &q).unwrap();
        let gap = |eps: f64| -> f64 {
            let up = q.u.axpy(eps, &phi).unwrap();
            let sp = StatePair::new(up, RadialField::zeros(&grid)).unwrap();
            let out = rhs(k, &sp).unwrap();
            let diff = out
                .udot
                .sub(&base.udot)
                .unwrap()
                .scale(1.0 / eps)
                .add(&lphi)
                .unwrap();
            ops::l2_norm_sq(&diff).sqrt()
        };
        let g1 = gap(1e-3);
        let g2 = gap(5e-4);
        let ratio = g1 / g2;
        assert!(
            (1.6..2.4).contains(&ratio),
            "first-order remainder should halve with eps: {g1:.3e} / {g2:.3e} = {ratio:.3}"
        );
    }

    #[test]
    fn zero_data_stays_zero() {
        let grid = RadialGrid::uniform(512, 8.0).unwrap();
        let s0 = StatePair::new(RadialField::zeros(&grid), RadialField::zeros(&grid)).unwrap();
        let traj = evolve(4, &s0, &EvolveConfig::for_k(4, 1.0)).unwrap();
        assert_eq!(traj.status, EvolveStatus::Completed);
        for s in &traj.states {
            assert!(s.u.values().iter().all(|&x| x == 0.0));
            assert!(s.udot.values().iter().all(|&x| x == 0.0));
        }
        assert!(traj.energies.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn static_bubble_holds_in_the_energy_norm() {
        let grid = RadialGrid::uniform(8192, 20.0).unwrap();
        let k = 4;
        let s0 = q_state(k, &grid);
        let traj = evolve(k, &s0, &EvolveConfig::for_k(k, 5.0)).unwrap();
        assert_eq!(traj.status, EvolveStatus::Completed);
        let worst = traj
            .states
            .iter()
            .map(|s| h_dist(s, &s0, k))
            .fold(0.0, f64::max);
        assert!(worst < 1e-3, "drift from the bubble in H x L2: {worst:.3e}");
        assert!(
            traj.energy_drift() < 1e-4,
            "energy drift {:.3e}",
            traj.energy_drift()
        );
    }

    #[test]
    fn time_reversal_retraces_the_discrete_orbit() {
        let grid = RadialGrid::uniform(1024, 8.0).unwrap();
        let k = 4;
        let u = bump(&grid, 2.5, 1.0, 0.3);
        let v = bump(&grid, 3.5, 0.7, 0.1);
        let s0 = StatePair::new(u, v).unwrap();
        let cfg = EvolveConfig::for_k(k, 1.0);
        let fwd = evolve(k, &s0, &cfg).unwrap();
        let end = fwd.last_state();
        let flipped = StatePair::new(end.u.clone(), end.udot.scale(-1.0)).unwrap();
        let back = evolve(k, &flipped, &cfg).unwrap();
        let ret = back.last_state();
        let recovered = StatePair::new(ret.u.clone(), ret.udot.scale(-1.0)).unwrap();
        // Kick-drift-kick is reversible; only rounding is left, far below
        // the O(dt^2) the scheme guarantees.
        let scale = (ops::state_norm_sq(&s0, k)).sqrt();
        let err = h_dist(&recovered, &s0, k);
        assert!(err < 1e-9 * scale, "reversal error {err:.3e} vs scale {scale:.3e}");
    }

    #[test]
    fn field_error_shrinks_fourfold_per_grid_doubling() {
        let k = 4;
        let r_max = 8.0;
        let t_end = 1.0;
        let run = |n: usize| -> Vec<f64> {
            let grid = RadialGrid::uniform(n, r_max).unwrap();
            let u = bump(&grid, 3.0, 1.0, 0.5);
            let s0 = StatePair::new(u, RadialField::zeros(&grid)).unwrap();
            let traj = evolve(k, &s0, &EvolveConfig::for_k(k, t_end)).unwrap();
            traj.last_state().u.values().to_vec()
        };
        let n_ref = 4096;
        let reference = run(n_ref);
        let err = |n: usize| -> f64 {
            let u = run(n);
            let m = n_ref / n;
            let grid = RadialGrid::uniform(n, r_max).unwrap();
            let mut num = 0.0;
            for i in 0..n {
                let d = u[i] - reference[m * (i + 1) - 1];
                num += grid.weights()[i] * d * d;
            }
            num.sqrt()
        };
        let e1 = err(512);
        let e2 = err(1024);
        let ratio = e1 / e2;
        assert!(
            (3.0..6.0).contains(&ratio),
            "convergence ratio {ratio:.2} (errors {e1:.3e}, {e2:.3e})"
        );
    }

    #[test]
    fn signals_stay_inside_the_light_cone() {
        let grid = RadialGrid::uniform(4096, 8.0).unwrap();
        let k = 4;
        let u = bump(&grid, 1.0, 1.0, 0.5); // support r <= 2
        let s0 = StatePair::new(u, RadialField::zeros(&grid)).unwrap();
        let t_end = 2.0;
        let traj = evolve(k, &s0, &EvolveConfig::for_k(k, t_end)).unwrap();
        let front = 2.0 + t_end + 0.2;
        for s in &traj.states {
            for (r, val) in grid.nodes().iter().zip(s.u.values()) {
                if *r > front {
                    assert!(
                        val.abs() < 1e-8,
                        "leak {val:.3e} at r = {r:.3} > {front:.3}"
                    );
                }
            }
        }
    }

    #[test]
    fn small_bump_amplitude_decays_after_the_crossing_time() {
        let grid = RadialGrid::uniform(8192, 24.0).unwrap();
        let k = 4;
        let u = bump(&grid, 3.0, 1.0, 0.05); // support r <= 4
        let s0 = StatePair::new(u, RadialField::zeros(&grid)).unwrap();
        let traj = evolve(k, &s0, &EvolveConfig::for_k(k, 16.0)).unwrap();
        assert_eq!(traj.status, EvolveStatus::Completed);
        let sups: Vec<f64> = traj
            .times
            .iter()
            .zip(&traj.states)
            .filter(|(t, _)| **t >= 8.0)
            .map(|(_, s)| s.u.values().iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .collect();
        assert!(sups.len() > 20);
        for w in sups.windows(2) {
            assert!(
                w[1] <= w[0] * (1.0 + 1e-9),
                "sup grew after the crossing time: {} -> {}",
                w[0],
                w[1]
            );
        }
        // Outgoing cylindrical waves decay like t^{-1/2}: doubling the
        // elapsed time from t = 8 to 16 buys roughly 1/sqrt(2).
        assert!(sups.last().unwrap() < &(0.75 * sups[0]));
    }

    #[test]
    fn bad_step_configurations_are_rejected() {
        let grid = RadialGrid::uniform(128, 4.0).unwrap();
        let s0 = StatePair::new(RadialField::zeros(&grid), RadialField::zeros(&grid)).unwrap();
        let mut cfg = EvolveConfig::for_k(4, 1.0);
        cfg.cfl = 0.6;
        assert!(matches!(
            evolve(4, &s0, &cfg),
            Err(Error::InvalidArgument(_))
        ));
        let mut cfg = EvolveConfig::for_k(4, 1.0);
        cfg.dt = Some(grid.h_min());
        assert!(matches!(
            evolve(4, &s0, &cfg),
            Err(Error::InvalidArgument(_))
        ));
        let mut cfg = EvolveConfig::for_k(4, 1.0);
        cfg.t_end = -1.0;
        assert!(matches!(
            evolve(4, &s0, &cfg),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn kinetic_guard_halts_a_runaway_before_the_end_time() {
        // Data started at rest whose gradient energy converts to a kinetic
        // norm far above the resting guard floor; the run must halt with
        // the detection status instead of completing.
        let grid = RadialGrid::uniform(256, 4.0).unwrap();
        let u = bump(&grid, 1.2, 1.0, 2000.0);
        let s0 = StatePair::new(u, RadialField::zeros(&grid)).unwrap();
        let traj = evolve(4, &s0, &EvolveConfig::for_k(4, 6.0)).unwrap();
        match traj.status {
            EvolveStatus::ConcentrationDetected { t } => {
                assert!(t > 0.0 && t < 6.0);
                assert!(*traj.times.last().unwrap() < 6.0 - 1e-9);
            }
            EvolveStatus::Completed => panic!("runaway run completed silently"),
        }
    }

    #[test]
    fn tapered_two_bubble_conserves_energy() {
        let k = 4;
        let ps = ProfileSet::build(k, &ansatz::default_study_grid()).unwrap();
        let grid = RadialGrid::uniform(8192, 10.0).unwrap();
        let p = AnsatzParams {
            lam: 0.05,
            mu: 1.0,
            b: 0.0,
            a: 0.0,
        };
        let traj = evolve_ansatz(&ps, &grid, p, &EvolveConfig::for_k(k, 1.0)).unwrap();
        assert_eq!(traj.status, EvolveStatus::Completed);
        assert!(
            traj.energy_drift() < 1e-4,
            "energy drift {:.3e}",
            traj.energy_drift()
        );
        // The tapered assembly still carries close to the two-bubble energy.
        let e = traj.energies[0];
        let target = 8.0 * std::f64::consts::PI * k as f64;
        assert!(
            (e - target).abs() < 0.02 * target,
            "tapered energy {e:.4} vs {target:.4}"
        );
    }
}
