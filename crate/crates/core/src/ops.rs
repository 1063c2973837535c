//! Differential operators, inner products, norms, and the conserved
//! energy for the k-equivariant wave map problem.
//!
//! Conventions: the radial Laplacian is D = d_rr + (1/r) d_r, the scaling
//! generators are Lambda = r d_r and Lambda_0 = 1 + r d_r, the free
//! operator is L_0 = -D + k^2/r^2, and every inner product is
//! <f|g> = int f g r dr.

use crate::error::Error;
use crate::field::{RadialField, StatePair};
use crate::grid::RadialGrid;
use crate::profiles::{cos2_q_scaled, potential_diff};
use crate::Result;
use std::f64::consts::PI;
use std::sync::Arc;

/// <f|g> = int f g r dr on the shared grid.
pub fn inner(f: &RadialField, g: &RadialField) -> Result<f64> {
    f.check_same_grid(g)?;
    Ok(inner_values(f.grid(), f.values(), g.values()))
}

pub(crate) fn inner_values(grid: &RadialGrid, f: &[f64], g: &[f64]) -> f64 {
    grid.weights()
        .iter()
        .zip(f.iter().zip(g))
        .map(|(w, (a, b))| w * a * b)
        .sum()
}

pub fn l2_norm_sq(f: &RadialField) -> f64 {
    inner_values(f.grid(), f.values(), f.values())
}

/// ||f||_H^2 = int (f_r^2 + k^2 f^2 / r^2) r dr.
pub fn h_norm_sq(f: &RadialField, k: u32) -> f64 {
    let grid = f.grid();
    let d = grid.deriv1(f.values());
    let k2 = (k as f64).powi(2);
    grid.weights()
        .iter()
        .zip(grid.nodes())
        .zip(d.iter().zip(f.values()))
        .map(|((w, r), (fr, fv))| w * (fr * fr + k2 * fv * fv / (r * r)))
        .sum()
}

/// ||f||_{H^2}^2 realized as <L_0 f | L_0 f>.
pub fn h2_norm_sq(f: &RadialField, k: u32) -> f64 {
    let lf = apply_l0_values(f.grid(), k, f.values());
    inner_values(f.grid(), &lf, &lf)
}

/// || (u, u_t) ||_{H x L^2}^2.
pub fn state_norm_sq(s: &StatePair, k: u32) -> f64 {
    h_norm_sq(&s.u, k) + l2_norm_sq(&s.udot)
}

/// || (Lambda u, Lambda_0 u_t) ||_{H x L^2}^2, the norm in which the pair
/// is measured after undoing one power of scaling.
pub fn weighted_state_norm_sq(s: &StatePair, k: u32) -> f64 {
    let grid = s.u.grid();
    let du = grid.deriv1(s.u.values());
    let lam_u: Vec<f64> = grid
        .nodes()
        .iter()
        .zip(&du)
        .map(|(r, d)| r * d)
        .collect();
    let dv = grid.deriv1(s.udot.values());
    let lam0_v: Vec<f64> = grid
        .nodes()
        .iter()
        .zip(s.udot.values().iter().zip(&dv))
        .map(|(r, (v, d))| v + r * d)
        .collect();
    let lam_u = RadialField::from_values(grid, lam_u).expect("same grid");
    h_norm_sq(&lam_u, k) + inner_values(grid, &lam0_v, &lam0_v)
}

/// Static part of the energy,
/// 2 pi int (1/2)(u_r^2 + k^2 sin^2 u / r^2) r dr.
pub fn static_energy(u: &RadialField, k: u32) -> f64 {
    let grid = u.grid();
    let d = grid.deriv1(u.values());
    let k2 = (k as f64).powi(2);
    let integral: f64 = grid
        .weights()
        .iter()
        .zip(grid.nodes())
        .zip(d.iter().zip(u.values()))
        .map(|((w, r), (ur, uv))| {
            let s = uv.sin();
            w * 0.5 * (ur * ur + k2 * s * s / (r * r))
        })
        .sum();
    2.0 * PI * integral
}

/// Conserved energy of the pair.
pub fn energy(s: &StatePair, k: u32) -> f64 {
    static_energy(&s.u, k) + PI * l2_norm_sq(&s.udot)
}

/// Least-squares slope of ln|y| against ln x; the measured exponent of an
/// approximate power law. Points with y = 0 or x <= 0 are rejected.
pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "power-law fit needs >= 2 matched points, got {} / {}",
            xs.len(),
            ys.len()
        )));
    }
    let mut lx = Vec::with_capacity(xs.len());
    let mut ly = Vec::with_capacity(xs.len());
    for (&x, &y) in xs.iter().zip(ys) {
        if !(x > 0.0) || y == 0.0 || !y.is_finite() {
            return Err(Error::InsufficientData(format!(
                "point ({x}, {y}) has no logarithm"
            )));
        }
        lx.push(x.ln());
        ly.push(y.abs().ln());
    }
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in lx.iter().zip(&ly) {
        num += (a - mx) * (b - my);
        den += (a - mx) * (a - mx);
    }
    if den == 0.0 {
        return Err(Error::InsufficientData("degenerate abscissa".into()));
    }
    Ok(num / den)
}

/// Power-law exponent of a sampled field over the radial window
/// [r_lo, r_hi].
pub fn log_slope_on_window(
    grid: &RadialGrid,
    values: &[f64],
    r_lo: f64,
    r_hi: f64,
) -> Result<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&r, &v) in grid.nodes().iter().zip(values) {
        if r >= r_lo && r <= r_hi {
            xs.push(r);
            ys.push(v);
        }
    }
    fit_power_law(&xs, &ys)
}

/// Operators the laboratory samples pointwise on a grid.
#[derive(Debug, Clone)]
pub enum OperatorSample {
    /// D = d_rr + (1/r) d_r.
    Laplacian,
    /// Lambda = r d_r.
    Lambda,
    /// Lambda_0 = 1 + r d_r.
    Lambda0,
    /// L_0 = -D + k^2 / r^2.
    L0 { k: u32 },
    /// L = -D + k^2 cos(2 Q(r/scale)) / r^2, the linearization about the
    /// rescaled bubble.
    LinearizedAboutQ { k: u32, scale: f64 },
    /// Same linearization about an arbitrary background field.
    LinearizedAbout { k: u32, background: RadialField },
    /// Multiplication by P(r/scale)/scale^2 where P = k^2 (cos 2Q - 1)/r^2
    /// is the potential difference L - L_0.
    PotentialP { k: u32, scale: f64 },
}

pub fn apply(op: &OperatorSample, f: &RadialField) -> Result<RadialField> {
    let grid = f.grid();
    let n = grid.len();
    let values = match op {
        OperatorSample::Laplacian => {
            let d1 = grid.deriv1(f.values());
            let d2 = grid.deriv2(f.values());
            (0..n)
                .map(|i| d2[i] + d1[i] / grid.nodes()[i])
                .collect()
        }
        OperatorSample::Lambda => {
            let d1 = grid.deriv1(f.values());
            (0..n).map(|i| grid.nodes()[i] * d1[i]).collect()
        }
        OperatorSample::Lambda0 => {
            let d1 = grid.deriv1(f.values());
            (0..n)
                .map(|i| f.values()[i] + grid.nodes()[i] * d1[i])
                .collect()
        }
        OperatorSample::L0 { k } => apply_l0_values(grid, *k, f.values()),
        OperatorSample::LinearizedAboutQ { k, scale } => {
            if !(scale > &0.0) {
                return Err(Error::InvalidArgument(format!("scale = {scale}")));
            }
            let d1 = grid.deriv1(f.values());
            let d2 = grid.deriv2(f.values());
            let k2 = (*k as f64).powi(2);
            (0..n)
                .map(|i| {
                    let r = grid.nodes()[i];
                    -(d2[i] + d1[i] / r)
                        + k2 * cos2_q_scaled(*k, r, *scale) * f.values()[i] / (r * r)
                })
                .collect()
        }
        OperatorSample::LinearizedAbout { k, background } => {
            f.check_same_grid(background)?;
            let d1 = grid.deriv1(f.values());
            let d2 = grid.deriv2(f.values());
            let k2 = (*k as f64).powi(2);
            (0..n)
                .map(|i| {
                    let r = grid.nodes()[i];
                    -(d2[i] + d1[i] / r)
                        + k2 * (2.0 * background.values()[i]).cos() * f.values()[i] / (r * r)
                })
                .collect()
        }
        OperatorSample::PotentialP { k, scale } => {
            if !(scale > &0.0) {
                return Err(Error::InvalidArgument(format!("scale = {scale}")));
            }
            (0..n)
                .map(|i| {
                    let r = grid.nodes()[i];
                    potential_diff(*k, r / scale) / (scale * scale) * f.values()[i]
                })
                .collect()
        }
    };
    RadialField::from_values(grid, values)
}

pub(crate) fn apply_l0_values(grid: &Arc<RadialGrid>, k: u32, v: &[f64]) -> Vec<f64> {
    let d1 = grid.deriv1(v);
    let d2 = grid.deriv2(v);
    let k2 = (k as f64).powi(2);
    (0..grid.len())
        .map(|i| {
            let r = grid.nodes()[i];
            -(d2[i] + d1[i] / r) + k2 * v[i] / (r * r)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::RadialGrid;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn l0_annihilates_r_squared_for_k2() {
        // r^2 is in the kernel of L_0 at k = 2, and the 3-point stencils
        // are exact on quadratics (including the origin ghost and the
        // one-sided last node), so this holds to rounding.
        let grid = RadialGrid::geometric(200, 0.01, 5.0).unwrap();
        let f = RadialField::from_fn(&grid, |r| r * r);
        let lf = apply(&OperatorSample::L0 { k: 2 }, &f).unwrap();
        for (i, v) in lf.values().iter().enumerate() {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-8 * (1.0 + f.values()[i]));
        }
    }

    #[test]
    fn scaling_generators_on_monomials() {
        let grid = RadialGrid::uniform(500, 2.0).unwrap();
        let f = RadialField::from_fn(&grid, |r| r * r);
        let lam = apply(&OperatorSample::Lambda, &f).unwrap();
        let lam0 = apply(&OperatorSample::Lambda0, &f).unwrap();
        for i in 0..grid.len() {
            let r = grid.nodes()[i];
            assert_relative_eq!(lam.values()[i], 2.0 * r * r, max_relative = 1e-10);
            assert_relative_eq!(lam0.values()[i], 3.0 * r * r, max_relative = 1e-10);
        }
    }

    #[test]
    fn integration_by_parts_for_lambda() {
        // <Lambda f | g> = -<f | Lambda g> - 2 <f|g> for decaying data.
        let grid = RadialGrid::uniform(20_000, 12.0).unwrap();
        let f = RadialField::from_fn(&grid, |r| r * r * (-(r - 3.0).powi(2)).exp());
        let g = RadialField::from_fn(&grid, |r| r * (-(r - 4.0).powi(2)).exp());
        let lam_f = apply(&OperatorSample::Lambda, &f).unwrap();
        let lam_g = apply(&OperatorSample::Lambda, &g).unwrap();
        let lhs = inner(&lam_f, &g).unwrap();
        let rhs = -inner(&f, &lam_g).unwrap() - 2.0 * inner(&f, &g).unwrap();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-6);
    }

    #[test]
    fn lambda0_is_antisymmetric() {
        let grid = RadialGrid::uniform(20_000, 12.0).unwrap();
        let f = RadialField::from_fn(&grid, |r| r * r * (-(r - 3.0).powi(2)).exp());
        let g = RadialField::from_fn(&grid, |r| r * (-(r - 4.0).powi(2)).exp());
        let l0f = apply(&OperatorSample::Lambda0, &f).unwrap();
        let l0g = apply(&OperatorSample::Lambda0, &g).unwrap();
        let lhs = inner(&l0f, &g).unwrap();
        let rhs = -inner(&f, &l0g).unwrap();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-6);
    }

    #[test]
    fn h_norm_matches_l0_quadratic_form() {
        // ||f||_H^2 = <L_0 f | f> after integrating by parts; the two
        // discretizations agree to the stencil order.
        let grid = RadialGrid::uniform(20_000, 12.0).unwrap();
        let f = RadialField::from_fn(&grid, |r| r * r * (-r * r / 4.0).exp());
        let k = 2;
        let lf = apply(&OperatorSample::L0 { k }, &f).unwrap();
        let via_l0 = inner(&lf, &f).unwrap();
        assert_relative_eq!(h_norm_sq(&f, k), via_l0, max_relative = 1e-6);
    }

    #[test]
    fn potential_difference_value_at_one() {
        // P(1) = -2 k^2.
        let grid = RadialGrid::uniform(100, 2.0).unwrap();
        let ones = RadialField::from_fn(&grid, |_| 1.0);
        let p = apply(&OperatorSample::PotentialP { k: 4, scale: 1.0 }, &ones).unwrap();
        let i = grid.node_nearest(1.0);
        assert_relative_eq!(p.values()[i], -32.0, max_relative = 1e-12);
    }

    #[test]
    fn energy_of_free_wave_profile() {
        // Pure kinetic data (0, v): energy = pi ||v||_{L^2}^2.
        let grid = RadialGrid::uniform(2000, 10.0).unwrap();
        let u = RadialField::zeros(&grid);
        let v = RadialField::from_fn(&grid, |r| r * (-r * r).exp());
        let s = StatePair::new(u, v.clone()).unwrap();
        assert_relative_eq!(
            energy(&s, 4),
            PI * l2_norm_sq(&v),
            max_relative = 1e-12
        );
    }
}
