//! Truncated virial profile p and the transport operators built from it.
//!
//! The profile is constructed in the log radius v = ln(r/R) through
//! q(v) := Delta p. Inside (v <= 0) q = 2 exactly, matching p = r^2/2.
//! Outside, q descends from 2 to 0 at slope 0.98c with C^4 ramps, so the
//! derivative bounds |r d_r Delta p| <= c and friends hold with margin;
//! the slow descent also keeps p'/r adiabatically slaved to q/2, which
//! is what the two remaining first-order bounds need. A tiny C^4 bump
//! past the descent, with amplitude solved linearly, closes the moment
//! integral of q so that r p' lands on exactly zero: p is constant,
//! not merely flat, beyond the plateau radius.
//!
//! p'/r solves m' = q - 2m in v; integrating this form keeps every
//! intermediate quantity O(1) even though p itself spans ~60 e-folds.

use crate::error::Error;
use crate::field::RadialField;
use crate::grid::RadialGrid;
use crate::ops;
use crate::Result;

/// C^4 smoothstep on [0,1] and its derivatives.
fn s4(x: f64) -> f64 {
    x * x * x * x * x * (126.0 + x * (-420.0 + x * (540.0 + x * (-315.0 + x * 70.0))))
}
fn s4d1(x: f64) -> f64 {
    let y = x * (1.0 - x);
    630.0 * y * y * y * y
}
fn s4d2(x: f64) -> f64 {
    let y = x * (1.0 - x);
    2520.0 * y * y * y * (1.0 - 2.0 * x)
}
fn s4d3(x: f64) -> f64 {
    let y = x * (1.0 - x);
    let z = 1.0 - 2.0 * x;
    2520.0 * y * y * (3.0 * z * z - 2.0 * y)
}
fn s4d4(x: f64) -> f64 {
    let y = x * (1.0 - x);
    let z = 1.0 - 2.0 * x;
    2520.0 * z * (2.0 * y * (3.0 * z * z - 2.0 * y) - 14.0 * y * y)
}
/// Integral of s4 from 0 to x; equals 1/2 at x = 1.
fn s4int(x: f64) -> f64 {
    let x6 = x.powi(6);
    x6 * (21.0 + x * (-60.0 + x * (67.5 + x * (-35.0 + x * 7.0))))
}

/// Uniformly tabulated function of v with linear interpolation.
struct VTable {
    v0: f64,
    dv: f64,
    vals: Vec<f64>,
}

impl VTable {
    fn at(&self, v: f64) -> f64 {
        let n = self.vals.len();
        let x = (v - self.v0) / self.dv;
        if x <= 0.0 {
            return self.vals[0];
        }
        if x >= (n - 1) as f64 {
            return self.vals[n - 1];
        }
        let i = x.floor() as usize;
        let f = x - i as f64;
        self.vals[i] * (1.0 - f) + self.vals[i + 1] * f
    }
}

pub struct VirialProfile {
    /// Smallness parameter of the derivative bounds.
    pub c: f64,
    /// p = r^2/2 holds up to this radius.
    pub r_inner: f64,
    /// p is constant from this radius on.
    pub r_plateau: f64,
    /// Samples of p, p', p'' on the dedicated dense grid.
    pub p: RadialField,
    pub p1: RadialField,
    pub p2: RadialField,
    s0: f64,
    delta: f64,
    l_bump: f64,
    /// Descent end / bump start in v.
    v_d: f64,
    v_end: f64,
    beta: f64,
    m_desc: VTable,
    m_bump: VTable,
    pint_desc: VTable,
    pint_bump: VTable,
}

impl VirialProfile {
    /// Delta p as a function of v = ln(r/R); piecewise analytic.
    fn q_at(&self, v: f64) -> f64 {
        let (s0, d) = (self.s0, self.delta);
        if v <= 1.0 {
            2.0
        } else if v <= 1.0 + d {
            2.0 - s0 * d * s4int((v - 1.0) / d)
        } else if v <= self.v_d - d {
            2.0 - s0 * d / 2.0 - s0 * (v - 1.0 - d)
        } else if v <= self.v_d {
            s0 * d * s4int((self.v_d - v) / d)
        } else if v < self.v_end {
            -self.beta * self.bump((v - self.v_d) / self.l_bump)
        } else {
            0.0
        }
    }

    /// dq/dv, which is r d_r(Delta p).
    fn q1_at(&self, v: f64) -> f64 {
        let (s0, d) = (self.s0, self.delta);
        if v <= 1.0 || v >= self.v_end {
            0.0
        } else if v <= 1.0 + d {
            -s0 * s4((v - 1.0) / d)
        } else if v <= self.v_d - d {
            -s0
        } else if v <= self.v_d {
            -s0 * s4((self.v_d - v) / d)
        } else {
            -self.beta / self.l_bump * self.bump_d1((v - self.v_d) / self.l_bump)
        }
    }

    fn q2_at(&self, v: f64) -> f64 {
        let (s0, d) = (self.s0, self.delta);
        if v <= 1.0 || v >= self.v_end {
            0.0
        } else if v <= 1.0 + d {
            -s0 / d * s4d1((v - 1.0) / d)
        } else if v <= self.v_d - d {
            0.0
        } else if v <= self.v_d {
            s0 / d * s4d1((self.v_d - v) / d)
        } else {
            -self.beta / self.l_bump.powi(2) * self.bump_d2((v - self.v_d) / self.l_bump)
        }
    }

    fn q3_at(&self, v: f64) -> f64 {
        let (s0, d) = (self.s0, self.delta);
        if v <= 1.0 || v >= self.v_end {
            0.0
        } else if v <= 1.0 + d {
            -s0 / (d * d) * s4d2((v - 1.0) / d)
        } else if v <= self.v_d - d {
            0.0
        } else if v <= self.v_d {
            -s0 / (d * d) * s4d2((self.v_d - v) / d)
        } else {
            -self.beta / self.l_bump.powi(3) * self.bump_d3((v - self.v_d) / self.l_bump)
        }
    }

    fn q4_at(&self, v: f64) -> f64 {
        let (s0, d) = (self.s0, self.delta);
        if v <= 1.0 || v >= self.v_end {
            0.0
        } else if v <= 1.0 + d {
            -s0 / d.powi(3) * s4d3((v - 1.0) / d)
        } else if v <= self.v_d - d {
            0.0
        } else if v <= self.v_d {
            s0 / d.powi(3) * s4d3((self.v_d - v) / d)
        } else {
            -self.beta / self.l_bump.powi(4) * self.bump_d4((v - self.v_d) / self.l_bump)
        }
    }

    /// Symmetric C^4 bump on [0,1], peak 1 in the middle.
    fn bump(&self, x: f64) -> f64 {
        if x <= 0.5 {
            s4(2.0 * x)
        } else {
            s4(2.0 - 2.0 * x)
        }
    }
    fn bump_d1(&self, x: f64) -> f64 {
        if x <= 0.5 {
            2.0 * s4d1(2.0 * x)
        } else {
            -2.0 * s4d1(2.0 - 2.0 * x)
        }
    }
    fn bump_d2(&self, x: f64) -> f64 {
        if x <= 0.5 {
            4.0 * s4d2(2.0 * x)
        } else {
            4.0 * s4d2(2.0 - 2.0 * x)
        }
    }
    fn bump_d3(&self, x: f64) -> f64 {
        if x <= 0.5 {
            8.0 * s4d3(2.0 * x)
        } else {
            -8.0 * s4d3(2.0 - 2.0 * x)
        }
    }
    fn bump_d4(&self, x: f64) -> f64 {
        if x <= 0.5 {
            16.0 * s4d4(2.0 * x)
        } else {
            16.0 * s4d4(2.0 - 2.0 * x)
        }
    }

    /// m = p'/r as a function of v.
    fn m_at(&self, v: f64) -> f64 {
        if v <= 0.0 {
            1.0
        } else if v >= self.v_end {
            0.0
        } else if v <= self.v_d {
            self.m_desc.at(v)
        } else {
            self.m_bump.at(v)
        }
    }

    pub fn p1_at(&self, rho: f64) -> f64 {
        if rho <= 0.0 {
            return 0.0;
        }
        let v = (rho / self.r_inner).ln();
        if v <= 0.0 {
            rho
        } else if v >= self.v_end {
            0.0
        } else {
            self.m_at(v) * rho
        }
    }

    pub fn p2_at(&self, rho: f64) -> f64 {
        if rho <= 0.0 {
            return 1.0;
        }
        let v = (rho / self.r_inner).ln();
        if v <= 0.0 {
            1.0
        } else if v >= self.v_end {
            0.0
        } else {
            self.q_at(v) - self.m_at(v)
        }
    }

    /// Delta p at radius rho.
    pub fn dp_at(&self, rho: f64) -> f64 {
        if rho <= 0.0 {
            return 2.0;
        }
        self.q_at((rho / self.r_inner).ln())
    }

    pub fn p_at(&self, rho: f64) -> f64 {
        if rho <= 0.0 {
            return 0.0;
        }
        let v = (rho / self.r_inner).ln();
        if v <= 0.0 {
            return rho * rho / 2.0;
        }
        let r2 = self.r_inner * self.r_inner;
        let pint = if v <= self.v_d {
            self.pint_desc.at(v)
        } else if v < self.v_end {
            self.pint_bump.at(v)
        } else {
            self.pint_bump.vals[self.pint_bump.vals.len() - 1]
        };
        r2 * (0.5 + pint)
    }

    /// One bullet checked at one point; returns the violation if any.
    fn bullet_violation(&self, r: f64) -> Option<(u8, f64)> {
        let c = self.c;
        let v = (r / self.r_inner).ln();
        let m = self.m_at(v);
        let q = self.q_at(v);
        let p1 = self.p1_at(r);
        let p2 = self.p2_at(r);
        if p1.abs() > 3.0 * r || p2.abs() > 3.0 {
            return Some((3, p2));
        }
        if p2 < -c || m < -c {
            return Some((4, p2.min(m)));
        }
        let q1 = self.q1_at(v);
        if q1.abs() > c {
            return Some((5, q1));
        }
        let q2 = self.q2_at(v);
        if q2 > c {
            return Some((6, q2));
        }
        let d3 = self.q4_at(v) - 4.0 * self.q3_at(v) + 4.0 * q2;
        if d3 < -c {
            return Some((7, d3));
        }
        let e = q - 2.0 * m;
        if e.abs() > c {
            return Some((8, e));
        }
        let e1 = q1 - 2.0 * e;
        if e1.abs() > c {
            return Some((9, e1));
        }
        None
    }
}

/// Integrate m' = q(v) - 2m with RK4 at the table resolution, storing
/// every step. `q` is passed as a closure so the unit-amplitude bump
/// solve can reuse it.
fn integrate_m(q: impl Fn(f64) -> f64, v0: f64, v1: f64, m0: f64) -> VTable {
    let steps = ((v1 - v0) / 1e-3).ceil() as usize;
    let dv = (v1 - v0) / steps as f64;
    let mut vals = Vec::with_capacity(steps + 1);
    let mut m = m0;
    vals.push(m);
    let f = |v: f64, m: f64| q(v) - 2.0 * m;
    for i in 0..steps {
        let v = v0 + i as f64 * dv;
        let k1 = f(v, m);
        let k2 = f(v + dv / 2.0, m + dv / 2.0 * k1);
        let k3 = f(v + dv / 2.0, m + dv / 2.0 * k2);
        let k4 = f(v + dv, m + dv * k3);
        m += dv / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        vals.push(m);
    }
    VTable { v0, dv, vals }
}

/// Cumulative trapezoid of m e^{2v} over a VTable, offset by `base`.
fn cumulative_pint(m: &VTable, base: f64) -> VTable {
    let n = m.vals.len();
    let mut vals = Vec::with_capacity(n);
    let mut acc = base;
    vals.push(acc);
    for i in 1..n {
        let va = m.v0 + (i - 1) as f64 * m.dv;
        let vb = m.v0 + i as f64 * m.dv;
        let fa = m.vals[i - 1] * (2.0 * va).exp();
        let fb = m.vals[i] * (2.0 * vb).exp();
        acc += 0.5 * (fa + fb) * m.dv;
        vals.push(acc);
    }
    VTable { v0: m.v0, dv: m.dv, vals }
}

pub fn make_virial_profile(c: f64, r_inner: f64) -> Result<VirialProfile> {
    if !(c > 0.0 && c <= 0.1) {
        return Err(Error::InvalidArgument(format!(
            "smallness parameter c = {c} outside (0, 0.1]"
        )));
    }
    if !(r_inner >= 1.0) || !r_inner.is_finite() {
        return Err(Error::InvalidArgument(format!("inner radius {r_inner} < 1")));
    }
    let s0 = 0.98 * c;
    let delta = 20.0;
    let l_bump = 6.0;
    // Ramp pair plus linear stretch descending q from 2 to 0.
    let v_d = 1.0 + 2.0 / s0 + delta;
    let v_end = v_d + l_bump;

    let mut vp = VirialProfile {
        c,
        r_inner,
        r_plateau: r_inner * v_end.exp(),
        p: RadialField::zeros(&RadialGrid::uniform(4, 1.0)?),
        p1: RadialField::zeros(&RadialGrid::uniform(4, 1.0)?),
        p2: RadialField::zeros(&RadialGrid::uniform(4, 1.0)?),
        s0,
        delta,
        l_bump,
        v_d,
        v_end,
        beta: 0.0,
        m_desc: VTable { v0: 0.0, dv: 1.0, vals: vec![0.0] },
        m_bump: VTable { v0: 0.0, dv: 1.0, vals: vec![0.0] },
        pint_desc: VTable { v0: 0.0, dv: 1.0, vals: vec![0.0] },
        pint_bump: VTable { v0: 0.0, dv: 1.0, vals: vec![0.0] },
    };

    // Slaved first-order quantity m = p'/r across the descent.
    vp.m_desc = integrate_m(|v| vp.q_at(v), 0.0, v_d, 1.0);
    let m_f = *vp.m_desc.vals.last().unwrap();

    // Unit-amplitude bump solve: y(s) = m_hat(v_end - s) runs backward
    // from the exact zero at the far end and solves y' = bump + 2y.
    let bump_at = |v: f64| vp.bump((v - v_d) / l_bump);
    let steps = (l_bump / 1e-3).ceil() as usize;
    let dv = l_bump / steps as f64;
    let mut y = 0.0f64;
    let mut yvals = Vec::with_capacity(steps + 1);
    yvals.push(y);
    let fy = |s: f64, y: f64| bump_at(v_end - s) + 2.0 * y;
    for i in 0..steps {
        let s = i as f64 * dv;
        let k1 = fy(s, y);
        let k2 = fy(s + dv / 2.0, y + dv / 2.0 * k1);
        let k3 = fy(s + dv / 2.0, y + dv / 2.0 * k2);
        let k4 = fy(s + dv, y + dv * k3);
        y += dv / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        yvals.push(y);
    }
    let m_hat_at_vd = y;
    if !(m_hat_at_vd > 0.0) {
        return Err(Error::ConstructionFailed(
            "closure bump has no positive mass".into(),
        ));
    }
    vp.beta = m_f / m_hat_at_vd;
    // m on the bump segment: beta * m_hat, stored forward in v.
    let mvals: Vec<f64> = (0..=steps)
        .map(|i| vp.beta * yvals[steps - i])
        .collect();
    vp.m_bump = VTable { v0: v_d, dv, vals: mvals };

    vp.pint_desc = cumulative_pint(&vp.m_desc, 0.0);
    vp.pint_bump = cumulative_pint(&vp.m_bump, *vp.pint_desc.vals.last().unwrap());

    // Dedicated dense grid spanning origin behavior through the plateau.
    let dense = RadialGrid::geometric(10_000, r_inner * (-8.0f64).exp(), vp.r_plateau * (2.0f64).exp())?;
    vp.p = RadialField::from_fn(&dense, |r| vp.p_at(r));
    vp.p1 = RadialField::from_fn(&dense, |r| vp.p1_at(r));
    vp.p2 = RadialField::from_fn(&dense, |r| vp.p2_at(r));

    // Verify the nine derivative bullets, not assume them: sweep the
    // dense radial nodes and a finer uniform sweep in v.
    let check = |r: f64| -> Result<()> {
        if let Some((bullet, val)) = vp.bullet_violation(r) {
            return Err(Error::ConstructionFailed(format!(
                "bullet {bullet} violated at r = {r:.6e} (value {val:.3e}, budget {c})"
            )));
        }
        Ok(())
    };
    for &r in dense.nodes() {
        check(r)?;
    }
    let sweep = 200_000usize;
    for i in 0..=sweep {
        let v = -0.5 + (v_end + 1.0 + 0.5) * i as f64 / sweep as f64;
        check(r_inner * v.exp())?;
    }
    // Exactness of the two structural regions.
    let probe = 0.37 * r_inner;
    if vp.p_at(probe) != probe * probe / 2.0 || vp.p1_at(probe) != probe {
        return Err(Error::ConstructionFailed(
            "inner region is not exactly r^2/2".into(),
        ));
    }
    if vp.p1_at(vp.r_plateau * 1.5) != 0.0 {
        return Err(Error::ConstructionFailed(
            "p fails to be constant beyond the plateau".into(),
        ));
    }
    Ok(vp)
}

/// Shared core of the antisymmetric transport operators:
/// (1/2)[P (Dw) - omega^{-1} D^T (omega P w)] with D the grid derivative
/// and omega the quadrature weights. Antisymmetry in the weighted inner
/// product holds exactly by construction; consistency with
/// P w' + (1/2)(P' + P/r) w is O(h^2).
fn antisym_transport(grid: &RadialGrid, pvals: &[f64], w: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let d1 = grid.d1_coeffs();
    let wts = grid.weights();
    let dw = grid.deriv1(w);
    let z: Vec<f64> = (0..n).map(|i| wts[i] * pvals[i] * w[i]).collect();
    let mut adj = vec![0.0; n];
    let c = d1[0];
    adj[0] += c[1] * z[0];
    adj[1] += c[2] * z[0];
    for j in 1..n - 1 {
        let c = d1[j];
        adj[j - 1] += c[0] * z[j];
        adj[j] += c[1] * z[j];
        adj[j + 1] += c[2] * z[j];
    }
    let c = d1[n - 1];
    adj[n - 3] += c[0] * z[n - 1];
    adj[n - 2] += c[1] * z[n - 1];
    adj[n - 1] += c[2] * z[n - 1];
    (0..n)
        .map(|i| 0.5 * (pvals[i] * dw[i] - adj[i] / wts[i]))
        .collect()
}

/// Discrete antisymmetrization of the scaling generator 1 + r d_r; the
/// inner region of every virial operator reduces to (1/lambda) times it.
pub fn lambda0_antisym(w: &RadialField) -> RadialField {
    let grid = w.grid().clone();
    let pvals: Vec<f64> = grid.nodes().to_vec();
    let vals = antisym_transport(&grid, &pvals, w.values());
    RadialField::from_values(&grid, vals).expect("same grid")
}

/// Pure transport operator p'(r/lambda) d_r.
pub fn apply_a(vp: &VirialProfile, lam: f64, w: &RadialField) -> Result<RadialField> {
    if !(lam > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda = {lam}")));
    }
    let grid = w.grid().clone();
    let dw = grid.deriv1(w.values());
    let vals: Vec<f64> = grid
        .nodes()
        .iter()
        .zip(&dw)
        .map(|(r, d)| vp.p1_at(r / lam) * d)
        .collect();
    RadialField::from_values(&grid, vals)
}

/// Antisymmetric virial operator with coefficient p'(r/lambda); its
/// zeroth-order part converges to p''(r/lambda)/(2 lambda) + p'/(2r).
pub fn apply_a0(vp: &VirialProfile, lam: f64, w: &RadialField) -> Result<RadialField> {
    if !(lam > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda = {lam}")));
    }
    let grid = w.grid().clone();
    let pvals: Vec<f64> = grid.nodes().iter().map(|r| vp.p1_at(r / lam)).collect();
    let vals = antisym_transport(&grid, &pvals, w.values());
    RadialField::from_values(&grid, vals)
}

/// Pointwise-coefficient form of the same operator, used to pin the
/// discretization against the analytic one.
pub fn apply_a0_pointwise(vp: &VirialProfile, lam: f64, w: &RadialField) -> Result<RadialField> {
    if !(lam > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda = {lam}")));
    }
    let grid = w.grid().clone();
    let dw = grid.deriv1(w.values());
    let vals: Vec<f64> = (0..grid.len())
        .map(|i| {
            let r = grid.nodes()[i];
            let p1 = vp.p1_at(r / lam);
            p1 * dw[i] + (vp.p2_at(r / lam) / (2.0 * lam) + p1 / (2.0 * r)) * w.values()[i]
        })
        .collect();
    RadialField::from_values(&grid, vals)
}

/// Virial pairing against the free operator: returns
/// (<A0(lam) w | L0 w>, (1/lam) * inner-region H-mass of w). The
/// certified inequality is lhs >= inner_mass/lam - (c0/lam) ||w||_H^2,
/// with c0 measured through `pohozaev_implied_c0`.
pub fn pohozaev_check(
    k: u32,
    vp: &VirialProfile,
    lam: f64,
    w: &RadialField,
) -> Result<(f64, f64)> {
    if !(lam > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda = {lam}")));
    }
    let a0w = apply_a0(vp, lam, w)?;
    let l0w = ops::apply(&ops::OperatorSample::L0 { k }, w)?;
    let lhs = ops::inner(&a0w, &l0w)?;
    let grid = w.grid();
    let dw = grid.deriv1(w.values());
    let k2 = (k as f64).powi(2);
    let cut = vp.r_inner * lam;
    let mut mass = 0.0;
    for i in 0..grid.len() {
        let r = grid.nodes()[i];
        if r <= cut {
            let wi = w.values()[i];
            mass += grid.weights()[i] * (dw[i] * dw[i] + k2 * wi * wi / (r * r));
        }
    }
    Ok((lhs, mass / lam))
}

/// Smallest c0 >= 0 certifying the Pohozaev lower bound for this field.
pub fn pohozaev_implied_c0(k: u32, vp: &VirialProfile, lam: f64, w: &RadialField) -> Result<f64> {
    let (lhs, inner_mass) = pohozaev_check(k, vp, lam, w)?;
    let h2 = ops::h_norm_sq(w, k);
    if h2 == 0.0 {
        return Ok(0.0);
    }
    Ok(((inner_mass - lhs) * lam / h2).max(0.0))
}
