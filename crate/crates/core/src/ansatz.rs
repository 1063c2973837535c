//! Two-bubble ansatz: the field
//!
//! ```text
//! Phi = [Q + b^2 A + nu^k B](r/lam) - [Q + a^2 A + nu^k B~](r/mu)
//! ```
//!
//! with nu = lam/mu, its time derivative under the modulation flow
//! lam' = -b, mu' = a, b' = -gamma_k nu^k / lam, a' = -gamma~_k nu^k / mu,
//! and the static residual of the ansatz split into three bracket terms
//! whose smallness in nu is the content of the construction. The brackets
//! are evaluated through factored trigonometric identities: the raw
//! differences cancel to O(nu^{2k}) ~ 1e-14 and would drown in rounding.

use crate::error::Error;
use crate::field::{RadialField, StatePair};
use crate::grid::RadialGrid;
use crate::ops;
use crate::profiles::{lam_q, q_profile, q_scaled, ProfileSet};
use crate::Result;
use std::sync::Arc;

/// Modulation parameters of the two-bubble family: scales 0 < lam < mu
/// and the conjugate velocity parameters b (inner bubble) and a (outer).
#[derive(Debug, Clone, Copy)]
pub struct AnsatzParams {
    pub lam: f64,
    pub mu: f64,
    pub b: f64,
    pub a: f64,
}

impl AnsatzParams {
    pub fn nu(&self) -> f64 {
        self.lam / self.mu
    }

    /// Validity region of the expansion: well-separated scales and small
    /// velocity parameters, boundary included.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lam", self.lam), ("mu", self.mu), ("b", self.b), ("a", self.a)] {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} = {v}")));
            }
        }
        if !(self.lam > 0.0 && self.mu > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "scales must be positive: lam = {}, mu = {}",
                self.lam, self.mu
            )));
        }
        let nu = self.nu();
        if nu > 0.1 {
            return Err(Error::InvalidRegime(format!(
                "nu = lam/mu = {nu:.4}: the ansatz expansion needs scale separation nu <= 0.1"
            )));
        }
        if self.b.abs() > 0.1 || self.a.abs() > 0.1 {
            return Err(Error::InvalidRegime(format!(
                "velocity parameters b = {}, a = {} outside |.| <= 0.1",
                self.b, self.a
            )));
        }
        Ok(())
    }
}

/// The uncorrected difference Q(r/lam) - Q(r/mu). Equal scales give the
/// zero map; an inner scale above the outer one is rejected.
pub fn two_bubble(k: u32, grid: &Arc<RadialGrid>, lam: f64, mu: f64) -> Result<RadialField> {
    if !(lam > 0.0 && mu > 0.0 && lam.is_finite() && mu.is_finite()) {
        return Err(Error::InvalidArgument(format!("scales lam = {lam}, mu = {mu}")));
    }
    if lam > mu {
        return Err(Error::InvalidRegime(format!(
            "inner scale above outer: lam = {lam} > mu = {mu}"
        )));
    }
    let ki = k as i32;
    let values = grid
        .nodes()
        .iter()
        .map(|&r| q_scaled(k, r, lam) - q_scaled(k, r, mu))
        .collect();
    Ok(RadialField::from_values(grid, values)?.with_exponents(Some(ki), Some(-ki)))
}

/// Grid the residual scaling studies run on: geometric, resolving bubble
/// scales down to lam ~ 1e-2 with four decades of margin below.
pub fn default_study_grid() -> Arc<RadialGrid> {
    RadialGrid::geometric(32_768, 1e-4, 1e2).expect("valid grid parameters")
}

/// Assemble the ansatz pair (Phi, Phi_t) on the grid.
pub fn phi(ps: &ProfileSet, grid: &Arc<RadialGrid>, p: AnsatzParams) -> Result<StatePair> {
    p.validate()?;
    let k = ps.k;
    let kf = k as f64;
    let nu = p.nu();
    let nu_k = nu.powi(k as i32);
    let (g, gt) = (ps.constants.gamma_k, ps.constants.tilde_gamma_k);

    let rho_l: Vec<f64> = grid.nodes().iter().map(|&r| r / p.lam).collect();
    let rho_m: Vec<f64> = grid.nodes().iter().map(|&r| r / p.mu).collect();
    let inner = ps.sample(&rho_l);
    let outer = ps.sample(&rho_m);

    let n = grid.len();
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let b2 = p.b * p.b;
    let a2 = p.a * p.a;
    for i in 0..n {
        u[i] = q_profile(k, rho_l[i]) + b2 * inner.a[i] + nu_k * inner.b[i]
            - q_profile(k, rho_m[i])
            - a2 * outer.a[i]
            - nu_k * outer.b_tilde[i];
        // d/dt of the ansatz along lam' = -b, mu' = a, b' = -g nu^k/lam,
        // a' = -g~ nu^k/mu; twelve terms, six per bubble.
        let inner_bracket = p.b * lam_q(k, rho_l[i])
            + p.b * b2 * inner.lam_a[i]
            - 2.0 * g * p.b * nu_k * inner.a[i]
            + p.b * nu_k * inner.lam_b[i]
            - kf * p.b * nu_k * inner.b[i]
            - kf * p.a * nu_k * nu * inner.b[i];
        let outer_bracket = p.a * lam_q(k, rho_m[i])
            + p.a * a2 * outer.lam_a[i]
            + 2.0 * gt * p.a * nu_k * outer.a[i]
            + p.a * nu_k * outer.lam_b_tilde[i]
            + kf * p.b * nu_k / nu * outer.b_tilde[i]
            + kf * p.a * nu_k * outer.b_tilde[i];
        v[i] = inner_bracket / p.lam + outer_bracket / p.mu;
    }

    let ki = k as i32;
    let u = RadialField::from_values(grid, u)?.with_exponents(Some(ki), Some(-ki));
    let v = RadialField::from_values(grid, v)?.with_exponents(Some(ki), Some(-ki));
    StatePair::new(u, v)
}

/// The source terms the modulation equations are built to cancel:
/// gamma_k nu^k [LamQ]_lam + gamma~_k nu^k [LamQ]_mu minus the
/// Lambda_0 LamQ terms carrying b^2 and a^2 (amplitude-rescaled).
pub fn modeled_sources(ps: &ProfileSet, grid: &Arc<RadialGrid>, p: AnsatzParams) -> Result<RadialField> {
    p.validate()?;
    let k = ps.k;
    let nu_k = p.nu().powi(k as i32);
    let (g, gt) = (ps.constants.gamma_k, ps.constants.tilde_gamma_k);
    let il2 = 1.0 / (p.lam * p.lam);
    let im2 = 1.0 / (p.mu * p.mu);
    let values = grid
        .nodes()
        .iter()
        .map(|&r| {
            let rl = r / p.lam;
            let rm = r / p.mu;
            g * nu_k * il2 * lam_q(k, rl) - p.b * p.b * il2 * lambda0_lam_q_local(k, rl)
                + gt * nu_k * im2 * lam_q(k, rm)
                + p.a * p.a * im2 * lambda0_lam_q_local(k, rm)
        })
        .collect();
    RadialField::from_values(grid, values)
}

fn lambda0_lam_q_local(k: u32, r: f64) -> f64 {
    crate::profiles::lambda0_lam_q(k, r)
}

/// The three bracket terms of the static residual,
///
/// ```text
/// -D Phi + f(Phi)/r^2 = sources - r^{-2} (bracket1 + bracket2 + bracket3),
/// ```
///
/// each with its weighted norm || bracket / r ||_{L^2(r dr)}, plus the
/// combined residual field -r^{-2} (bracket1 + bracket2 + bracket3).
#[derive(Debug, Clone)]
pub struct StaticResidual {
    pub bracket1: RadialField,
    pub bracket2: RadialField,
    pub bracket3: RadialField,
    pub total: RadialField,
    pub norm1: f64,
    pub norm2: f64,
    pub norm3: f64,
}

/// sin x - x without cancellation for small x.
fn sin_minus_x(x: f64) -> f64 {
    if x.abs() >= 0.25 {
        return x.sin() - x;
    }
    let x2 = x * x;
    // -x^3/6 (1 - x^2/20 (1 - x^2/42 (1 - x^2/72)))
    -x * x2 / 6.0 * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0 * (1.0 - x2 / 72.0)))
}

/// t^3 (3 + t^2) / (1 + t^2)^2, stable for large t.
fn interaction_factor_far(t: f64) -> f64 {
    if t <= 1.0 {
        t * t * t * (3.0 + t * t) / (1.0 + t * t).powi(2)
    } else {
        let w = 1.0 / t;
        (3.0 * w * w + 1.0) / (w * (w * w + 1.0).powi(2))
    }
}

/// (1 + 3 t^2) / (t (1 + t^2)^2), stable for large t.
fn interaction_factor_near(t: f64) -> f64 {
    if t <= 1.0 {
        (1.0 + 3.0 * t * t) / (t * (1.0 + t * t).powi(2))
    } else {
        let z = 1.0 / t;
        z * z * z * (z * z + 3.0) / ((z * z + 1.0).powi(2))
    }
}

pub fn static_residual(
    ps: &ProfileSet,
    grid: &Arc<RadialGrid>,
    p: AnsatzParams,
) -> Result<StaticResidual> {
    p.validate()?;
    let k = ps.k;
    let ki = k as i32;
    let kf = k as f64;
    let k2 = kf * kf;
    let nu = p.nu();
    let nu_k = nu.powi(ki);
    let b2 = p.b * p.b;
    let a2 = p.a * p.a;

    let rho_l: Vec<f64> = grid.nodes().iter().map(|&r| r / p.lam).collect();
    let rho_m: Vec<f64> = grid.nodes().iter().map(|&r| r / p.mu).collect();
    let inner = ps.sample(&rho_l);
    let outer = ps.sample(&rho_m);

    let n = grid.len();
    let mut br1 = vec![0.0; n];
    let mut br2 = vec![0.0; n];
    let mut br3 = vec![0.0; n];
    for i in 0..n {
        let (rl, rm) = (rho_l[i], rho_m[i]);
        let sl = lam_q(k, rl) / kf;
        let sm = lam_q(k, rm) / kf;
        let cl = crate::profiles::cos_q(k, rl);
        let cm = crate::profiles::cos_q(k, rm);
        let tl = rl.powi(ki);
        let tm = rm.powi(ki);

        // Pure bubble-bubble interaction with the two modeled pieces
        // removed; positive by construction.
        br1[i] = k2
            * (4.0 * sl * sl * interaction_factor_far(tm)
                + 4.0 * sm * sm * interaction_factor_near(tl));

        let t_l = b2 * inner.a[i] + nu_k * inner.b[i];
        let t_m = a2 * outer.a[i] + nu_k * outer.b_tilde[i];
        let t = t_l - t_m;

        // Quadratic remainder in the corrections:
        // -[f(Psi + T) - f(Psi) - f'(Psi) T].
        let sin_psi = sl * cm - cl * sm;
        let cos_psi = cl * cm + sl * sm;
        let sin2psi = 2.0 * sin_psi * cos_psi;
        let cos2psi = 1.0 - 2.0 * sin_psi * sin_psi;
        let st = t.sin();
        br2[i] = k2 / 2.0 * (2.0 * sin2psi * st * st - cos2psi * sin_minus_x(2.0 * t));

        // Mixed linear term: the linearization about Psi differs from the
        // per-bubble linearizations where the other bubble is felt.
        let sin_2l_m = 2.0 * sl * cl * cm - (1.0 - 2.0 * sl * sl) * sm;
        let sin_l_2m = sl * (1.0 - 2.0 * sm * sm) - 2.0 * cl * sm * cm;
        br3[i] = -2.0 * k2 * (sin_2l_m * sm * t_l + sl * sin_l_2m * t_m);
    }

    let weighted_norm = |v: &[f64]| -> f64 {
        grid.weights()
            .iter()
            .zip(grid.nodes())
            .zip(v)
            .map(|((w, r), x)| w * (x / r) * (x / r))
            .sum::<f64>()
            .sqrt()
    };
    let norm1 = weighted_norm(&br1);
    let norm2 = weighted_norm(&br2);
    let norm3 = weighted_norm(&br3);
    let total: Vec<f64> = (0..n)
        .map(|i| {
            let r = grid.nodes()[i];
            -(br1[i] + br2[i] + br3[i]) / (r * r)
        })
        .collect();
    Ok(StaticResidual {
        bracket1: RadialField::from_values(grid, br1)?,
        bracket2: RadialField::from_values(grid, br2)?,
        bracket3: RadialField::from_values(grid, br3)?,
        total: RadialField::from_values(grid, total)?,
        norm1,
        norm2,
        norm3,
    })
}

/// u-component of the energy gradient at the assembled ansatz,
/// -D Phi + f(Phi)/r^2.
///
/// The Laplacian of each piece is assembled analytically: Q satisfies the
/// static equation, and the corrections carry Laplacian tables read off
/// their own equations (differencing the C^1 interpolants on a foreign
/// grid would instead measure interpolation curvature noise). An actual
/// finite-difference verification of each table happens on its native grid
/// in the profile tests.
pub fn static_gradient(
    ps: &ProfileSet,
    grid: &Arc<RadialGrid>,
    p: AnsatzParams,
) -> Result<RadialField> {
    let state = phi(ps, grid, p)?;
    let k = ps.k;
    let kf = k as f64;
    let k2 = kf * kf;
    let nu_k = p.nu().powi(k as i32);
    let b2 = p.b * p.b;
    let a2 = p.a * p.a;
    let il2 = 1.0 / (p.lam * p.lam);
    let im2 = 1.0 / (p.mu * p.mu);

    let rho_l: Vec<f64> = grid.nodes().iter().map(|&r| r / p.lam).collect();
    let rho_m: Vec<f64> = grid.nodes().iter().map(|&r| r / p.mu).collect();
    let inner = ps.sample(&rho_l);
    let outer = ps.sample(&rho_m);

    // Laplacian of a pure bubble via its equation: D Q = f(Q)/rho^2.
    let lap_q = |rho: f64| {
        let s = lam_q(k, rho) / kf;
        let c = crate::profiles::cos_q(k, rho);
        k2 * s * c / (rho * rho)
    };

    let vals: Vec<f64> = (0..grid.len())
        .map(|i| {
            let r = grid.nodes()[i];
            let (rl, rm) = (rho_l[i], rho_m[i]);
            let lap_phi = il2 * (lap_q(rl) + b2 * inner.lap_a[i] + nu_k * inner.lap_b[i])
                - im2 * (lap_q(rm) + a2 * outer.lap_a[i] + nu_k * outer.lap_b_tilde[i]);
            -lap_phi + k2 * (2.0 * state.u.values()[i]).sin() / (2.0 * r * r)
        })
        .collect();
    RadialField::from_values(grid, vals)
}

/// Independent check of the residual identity: apply -D + f(.)/r^2 to the
/// assembled Phi and compare against sources + the combined bracket field.
/// Returns the relative L^2 gap.
pub fn residual_identity_gap(
    ps: &ProfileSet,
    grid: &Arc<RadialGrid>,
    p: AnsatzParams,
) -> Result<f64> {
    let lhs_field = static_gradient(ps, grid, p)?;
    let res = static_residual(ps, grid, p)?;
    let sources = modeled_sources(ps, grid, p)?;

    let mut gap_sq = 0.0;
    let mut ref_sq = 0.0;
    for i in 0..grid.len() {
        let lhs = lhs_field.values()[i];
        let rhs = sources.values()[i] + res.total.values()[i];
        gap_sq += grid.weights()[i] * (lhs - rhs) * (lhs - rhs);
        ref_sq += grid.weights()[i] * rhs * rhs;
    }
    Ok((gap_sq / ref_sq).sqrt())
}

/// One interaction cross norm: || r^{-1} X ||_{L^2(r dr)} for a triple
/// product X of rescaled profiles. The group number ties the entry to its
/// decay law: groups 1 and 4 decay like nu^k, group 3 like nu^{k-2}, and
/// group 2 like nu^k up to a logarithm. At k = 4 the two squared-inner
/// entries of group 4 pick up logarithmic middle-region mass as well
/// (their clean power 2k - 4 coincides with k), so only groups 1 and 3
/// have sharp fitted exponents on short nu ranges.
#[derive(Debug, Clone)]
pub struct CrossTermNorm {
    pub label: &'static str,
    pub group: u8,
    pub expected_exponent: f64,
    pub norm: f64,
}

/// The interaction norms controlling the ansatz error budget. Each entry
/// depends on the scales only through nu = lam/mu.
pub fn cross_term_norms(
    ps: &ProfileSet,
    grid: &Arc<RadialGrid>,
    lam: f64,
    mu: f64,
) -> Result<Vec<CrossTermNorm>> {
    let nu = lam / mu;
    if !(nu > 0.0 && nu <= 0.1) {
        return Err(Error::InvalidRegime(format!("nu = {nu}")));
    }
    let k = ps.k;
    let kf = k as f64;
    let rho_l: Vec<f64> = grid.nodes().iter().map(|&r| r / lam).collect();
    let rho_m: Vec<f64> = grid.nodes().iter().map(|&r| r / mu).collect();
    let inner = ps.sample(&rho_l);
    let outer = ps.sample(&rho_m);
    let ql: Vec<f64> = rho_l.iter().map(|&x| lam_q(k, x)).collect();
    let qm: Vec<f64> = rho_m.iter().map(|&x| lam_q(k, x)).collect();

    let norm = |f: &dyn Fn(usize) -> f64| -> f64 {
        grid.weights()
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let v = f(i) / grid.nodes()[i];
                w * v * v
            })
            .sum::<f64>()
            .sqrt()
    };

    Ok(vec![
        CrossTermNorm {
            label: "lamq_in^2 * lamq_out",
            group: 1,
            expected_exponent: kf,
            norm: norm(&|i| ql[i] * ql[i] * qm[i]),
        },
        CrossTermNorm {
            label: "lamq_in * lamq_out^2",
            group: 1,
            expected_exponent: kf,
            norm: norm(&|i| ql[i] * qm[i] * qm[i]),
        },
        CrossTermNorm {
            label: "lamq_in^2 * a_out",
            group: 1,
            expected_exponent: kf,
            norm: norm(&|i| ql[i] * ql[i] * outer.a[i]),
        },
        CrossTermNorm {
            label: "lamq_in^2 * btilde_out",
            group: 2,
            expected_exponent: kf,
            norm: norm(&|i| ql[i] * ql[i] * outer.b_tilde[i]),
        },
        CrossTermNorm {
            label: "lamq_out^2 * a_in",
            group: 3,
            expected_exponent: kf - 2.0,
            norm: norm(&|i| qm[i] * qm[i] * inner.a[i]),
        },
        CrossTermNorm {
            label: "lamq_out^2 * b_in",
            group: 3,
            expected_exponent: kf - 2.0,
            norm: norm(&|i| qm[i] * qm[i] * inner.b[i]),
        },
        CrossTermNorm {
            label: "lamq_in * a_out^2",
            group: 4,
            expected_exponent: kf,
            norm: norm(&|i| ql[i] * outer.a[i] * outer.a[i]),
        },
        CrossTermNorm {
            label: "lamq_in * btilde_out^2",
            group: 4,
            expected_exponent: kf,
            norm: norm(&|i| ql[i] * outer.b_tilde[i] * outer.b_tilde[i]),
        },
        CrossTermNorm {
            label: "lamq_out * a_in^2",
            group: 4,
            expected_exponent: kf,
            norm: norm(&|i| qm[i] * inner.a[i] * inner.a[i]),
        },
        CrossTermNorm {
            label: "lamq_out * b_in^2",
            group: 4,
            expected_exponent: kf,
            norm: norm(&|i| qm[i] * inner.b[i] * inner.b[i]),
        },
    ])
}

/// Energy of the two-bubble configuration; near twice the bubble energy
/// 8 pi k once the scales separate.
pub fn two_bubble_energy(ps: &ProfileSet, grid: &Arc<RadialGrid>, p: AnsatzParams) -> Result<f64> {
    let state = phi(ps, grid, p)?;
    Ok(ops::energy(&state, ps.k))
}

/// Leading potential felt by the inner bubble from the outer one; kept
/// for diagnostics of the sign conventions (repulsive interaction).
pub fn interaction_sign(ps: &ProfileSet) -> f64 {
    // gamma_k > 0 with b' = -gamma_k nu^k / lam: a bubble at rest starts
    // contracting its own scale derivative, lam'' = gamma_k nu^k / lam > 0
    // through lam' = -b; the scales are pushed apart.
    ps.constants.gamma_k.signum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::ProfileSet;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn setup() -> (ProfileSet, Arc<RadialGrid>) {
        let pgrid = RadialGrid::geometric(16_384, 1e-4, 1e4).unwrap();
        let ps = ProfileSet::build(4, &pgrid).unwrap();
        let grid = RadialGrid::geometric(16_384, 1e-4, 1e2).unwrap();
        (ps, grid)
    }

    #[test]
    fn resting_two_bubble_has_zero_velocity_and_twice_the_energy() {
        let (ps, grid) = setup();
        let p = AnsatzParams { lam: 0.01, mu: 1.0, b: 0.0, a: 0.0 };
        let state = phi(&ps, &grid, p).unwrap();
        assert!(state.udot.values().iter().all(|&v| v == 0.0));
        let e = ops::energy(&state, 4);
        assert_relative_eq!(e, 2.0 * 4.0 * PI * 4.0, max_relative = 1e-4);
    }

    #[test]
    fn ansatz_rejects_merged_scales_and_large_velocities() {
        let (ps, grid) = setup();
        let p = AnsatzParams { lam: 0.9, mu: 1.0, b: 0.0, a: 0.0 };
        match phi(&ps, &grid, p) {
            Err(Error::InvalidRegime(_)) => {}
            other => panic!("expected regime error, got {:?}", other.map(|_| ())),
        }
        let p = AnsatzParams { lam: 0.01, mu: 1.0, b: 0.3, a: 0.0 };
        assert!(matches!(phi(&ps, &grid, p), Err(Error::InvalidRegime(_))));
    }

    #[test]
    fn plain_two_bubble_norm_splits_into_two_single_bubble_halves() {
        // The H-norm of Q_lam - Q_mu concentrates one bubble-sized
        // quadratic form around each scale; by the r -> 1/r symmetry of Q
        // the two halves are equal, so the whole norm is twice the inner
        // half, up to cross terms suppressed by the separation.
        let grid = RadialGrid::geometric(32_768, 1e-6, 1e4).unwrap();
        let k = 4u32;
        let diff = two_bubble(k, &grid, 0.01, 1.0).unwrap();
        let direct = ops::h_norm_sq(&diff, k);

        // Inner half: the standard bubble's H-form out to the geometric
        // midpoint separation sqrt(100) = 10.
        let half_grid = RadialGrid::geometric(16_384, 1e-6, 10.0).unwrap();
        let q = RadialField::from_fn(&half_grid, |r| q_profile(k, r));
        let half = ops::h_norm_sq(&q, k);
        assert_relative_eq!(direct, 2.0 * half, max_relative = 1e-2);

        // Tail: the two pi-limits cancel and the difference decays like
        // r^{-k}.
        let slope = ops::log_slope_on_window(&grid, diff.values(), 20.0, 80.0).unwrap();
        assert!((slope + 4.0).abs() < 0.1, "tail slope {slope:.3}");

        // Equal scales give the zero map; inverted scales are rejected.
        let zero = two_bubble(k, &grid, 1.0, 1.0).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
        assert!(matches!(
            two_bubble(k, &grid, 2.0, 1.0),
            Err(Error::InvalidRegime(_))
        ));
    }

    #[test]
    fn velocity_norm_is_controlled_by_the_parameters() {
        // ||Phi_t||_{L^2} tracks sqrt(a^2 + b^2) ||LamQ||, so the ratio to
        // |a| + |b| stays within a factor 2 of ||LamQ||_{L^2}.
        let (ps, grid) = setup();
        let lamq_norm = ps.constants.lam_q_norm_sq.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let mu = rng.gen_range(0.5..2.0);
            let nu = rng.gen_range(0.01..0.1);
            let b = rng.gen_range(0.01..0.1) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let a = rng.gen_range(0.01..0.1) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let p = AnsatzParams { lam: nu * mu, mu, b, a };
            let state = phi(&ps, &grid, p).unwrap();
            let ratio = ops::l2_norm_sq(&state.udot).sqrt() / (a.abs() + b.abs());
            assert!(
                ratio < 2.0 * lamq_norm && ratio > lamq_norm / 2.0,
                "ratio {ratio:.3} vs ||LamQ|| = {lamq_norm:.3}"
            );
        }
    }

    #[test]
    fn velocity_pairing_reads_off_b() {
        // <LamQ_lam (L2-rescaled) | Phi_t> / ||LamQ||^2 recovers b up to
        // cubic self-corrections and cross terms.
        let (ps, grid) = setup();
        let p = AnsatzParams { lam: 0.01, mu: 1.0, b: 0.01, a: 0.005 };
        let state = phi(&ps, &grid, p).unwrap();
        let pairing: f64 = grid
            .weights()
            .iter()
            .zip(grid.nodes())
            .zip(state.udot.values())
            .map(|((w, &r), &v)| w * lam_q(4, r / p.lam) / p.lam * v)
            .sum();
        let read = pairing / ps.constants.lam_q_norm_sq;
        assert_relative_eq!(read, p.b, max_relative = 0.1);
    }

    #[test]
    fn residual_identity_between_assembly_and_equation() {
        let (ps, grid) = setup();
        for p in [
            AnsatzParams { lam: 0.1, mu: 1.0, b: 0.1, a: 0.05 },
            AnsatzParams { lam: 0.1, mu: 1.0, b: 0.1, a: 0.0 },
            AnsatzParams { lam: 0.05, mu: 1.0, b: 0.0, a: 0.0 },
        ] {
            let gap = residual_identity_gap(&ps, &grid, p).unwrap();
            assert!(
                gap < 1e-3,
                "relative identity gap {gap:.3e} at b = {}, a = {}",
                p.b,
                p.a
            );
        }
    }

    #[test]
    fn resting_residual_norm_vanishes_with_the_separation() {
        let (ps, grid) = setup();
        let total_norm = |nu: f64| {
            let res = static_residual(&ps, &grid, AnsatzParams { lam: nu, mu: 1.0, b: 0.0, a: 0.0 })
                .unwrap();
            res.norm1 + res.norm2 + res.norm3
        };
        let coarse = total_norm(0.08);
        let fine = total_norm(0.04);
        assert!(fine < coarse, "residual grew: {fine:.3e} vs {coarse:.3e}");
        assert!(coarse < 1e-3, "resting residual {coarse:.3e}");
    }

    #[test]
    fn bracket1_norm_follows_nu_to_the_2k() {
        let (ps, grid) = setup();
        let at = |nu: f64| {
            static_residual(&ps, &grid, AnsatzParams { lam: nu, mu: 1.0, b: 0.0, a: 0.0 })
                .unwrap()
                .norm1
        };
        let slope = (at(0.08) / at(0.04)).ln() / 2f64.ln();
        assert!((slope - 8.0).abs() < 0.5, "bracket1 slope {slope:.3}");
    }

    #[test]
    fn bracket2_norm_is_quartic_in_b() {
        let (ps, grid) = setup();
        let at = |b: f64| {
            static_residual(&ps, &grid, AnsatzParams { lam: 0.01, mu: 1.0, b, a: 0.0 })
                .unwrap()
                .norm2
        };
        let ratio = at(0.1) / at(0.05);
        assert!((ratio - 16.0).abs() < 4.0, "b-quartic ratio {ratio:.2}");
    }

    #[test]
    fn bracket3_norm_is_quadratic_in_b_and_scales_like_nu_to_km2() {
        // At fixed b the third bracket is dominated by the inner
        // correction's r^{2-k} tail felt at the outer scale, so its norm
        // runs like b^2 nu^{k-2}.
        let (ps, grid) = setup();
        let at = |nu: f64, b: f64| {
            static_residual(&ps, &grid, AnsatzParams { lam: nu, mu: 1.0, b, a: 0.0 })
                .unwrap()
                .norm3
        };
        let ratio = at(0.04, 0.1) / at(0.04, 0.05);
        assert!((ratio - 4.0).abs() < 1.0, "b-quadratic ratio {ratio:.2}");
        let slope = (at(0.08, 0.1) / at(0.04, 0.1)).ln() / 2f64.ln();
        assert!((slope - 2.0).abs() < 0.5, "bracket3 nu-slope {slope:.3}");
    }

    #[test]
    fn bracket2_norm_is_bounded_by_the_quartic_budget() {
        // ||br2 / r|| stays below a uniform multiple of
        // b^4 + a^4 + nu^{2k} across the corner cases of the regime.
        let (ps, grid) = setup();
        let mut worst: f64 = 0.0;
        for (nu, b, a) in [
            (0.05, 0.1, 0.0),
            (0.05, 0.0, 0.1),
            (0.08, 0.0, 0.0),
            (0.04, 0.05, 0.05),
            (0.02, 0.1, 0.1),
        ] {
            let res =
                static_residual(&ps, &grid, AnsatzParams { lam: nu, mu: 1.0, b, a }).unwrap();
            let budget = b.powi(4) + a.powi(4) + nu.powi(8);
            worst = worst.max(res.norm2 / budget);
        }
        // The constant carries squared correction amplitudes (the B tail
        // coefficient is ~9.6 at k = 4), so it lands near 100.
        assert!(worst < 500.0, "quartic budget constant {worst:.2}");
    }

    #[test]
    fn quadratic_remainder_about_phi_is_controlled_by_the_h_norm() {
        // || r^{-1} (f(Phi + w) - f(Phi) - f'(Phi) w) || <= C ||w||_H^2
        // with one C across randomly placed bumps.
        let (ps, grid) = setup();
        let p = AnsatzParams { lam: 0.05, mu: 1.0, b: 0.05, a: 0.02 };
        let state = phi(&ps, &grid, p).unwrap();
        let k2 = 16.0;
        let f = |u: f64| k2 * (2.0 * u).sin() / 2.0;
        let fp = |u: f64| k2 * (2.0 * u).cos();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut cs = Vec::new();
        for _ in 0..10 {
            let center = rng.gen_range(-3.0..3.0);
            let width = rng.gen_range(0.3..1.0);
            let amp = rng.gen_range(0.01..0.2);
            let w = RadialField::from_fn(&grid, |r| {
                let u = (r.ln() - center) / width;
                amp * (-u * u).exp()
            });
            let wnorm_sq = ops::h_norm_sq(&w, 4);
            let resid: f64 = grid
                .weights()
                .iter()
                .zip(grid.nodes())
                .enumerate()
                .map(|(i, (wt, &r))| {
                    let u = state.u.values()[i];
                    let v = w.values()[i];
                    let q = (f(u + v) - f(u) - fp(u) * v) / r;
                    wt * q * q
                })
                .sum::<f64>()
                .sqrt();
            cs.push(resid / wnorm_sq);
        }
        let cmax = cs.iter().cloned().fold(0.0f64, f64::max);
        let cmin = cs.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(cmax < 10.0, "quadratic remainder constant {cmax:.3}");
        assert!(cmax / cmin < 30.0, "constant unstable: [{cmin:.3}, {cmax:.3}]");
    }

    #[test]
    fn cross_norm_groups_one_and_three_fit_their_exponents() {
        // Three-point log-log fit over nu in {0.02, 0.04, 0.08}. Only the
        // plain-power groups are gated; the squared-inner-correction
        // entries of group 4 carry logarithmic corrections at k = 4 and
        // are checked for decay only.
        let (ps, grid) = setup();
        let nus = [0.02, 0.04, 0.08];
        let tables: Vec<_> = nus
            .iter()
            .map(|&nu| cross_term_norms(&ps, &grid, nu, 1.0).unwrap())
            .collect();
        for j in 0..tables[0].len() {
            let ys: Vec<f64> = tables.iter().map(|t| t[j].norm).collect();
            let slope = ops::fit_power_law(&nus, &ys).unwrap();
            let entry = &tables[0][j];
            match entry.group {
                1 | 3 => assert!(
                    (slope - entry.expected_exponent).abs() < 0.5,
                    "{}: slope {slope:.3}, expected {}",
                    entry.label,
                    entry.expected_exponent
                ),
                _ => assert!(
                    slope > entry.expected_exponent - 1.2,
                    "{}: slope {slope:.3} decays too slowly",
                    entry.label
                ),
            }
        }
    }

    #[test]
    fn cross_norm_short_fit_examples() {
        // Two-point variants at nu = 0.05, 0.1 for one clean entry of each
        // gated group, plus finiteness of the whole table at nu = 0.1.
        let (ps, grid) = setup();
        let lo = cross_term_norms(&ps, &grid, 0.05, 1.0).unwrap();
        let hi = cross_term_norms(&ps, &grid, 0.1, 1.0).unwrap();
        assert!(hi.iter().all(|e| e.norm.is_finite() && e.norm > 0.0));
        let slope = |j: usize| (hi[j].norm / lo[j].norm).ln() / 2f64.ln();
        let s0 = slope(0);
        assert!((s0 - 4.0).abs() < 0.5, "lamq_in^2 * lamq_out slope {s0:.3}");
        let s5 = slope(5);
        assert!((s5 - 2.0).abs() < 0.5, "lamq_out^2 * b_in slope {s5:.3}");
    }

    #[test]
    fn energy_excess_is_controlled_by_the_parameters() {
        // |E(Phi) - 16 pi k| <= C (nu^k + a^2 + b^2) with a stable C under
        // halving nu.
        let (ps, grid) = setup();
        let excess = |nu: f64, b: f64, a: f64| {
            let e = two_bubble_energy(&ps, &grid, AnsatzParams { lam: nu, mu: 1.0, b, a })
                .unwrap();
            (e - 2.0 * 4.0 * PI * 4.0).abs()
        };
        let c1 = excess(0.08, 0.05, 0.02) / (0.08f64.powi(4) + 0.05f64.powi(2) + 0.02f64.powi(2));
        let c2 = excess(0.04, 0.05, 0.02) / (0.04f64.powi(4) + 0.05f64.powi(2) + 0.02f64.powi(2));
        assert!(c1 > 0.0 && c2 > 0.0);
        let ratio = c1 / c2;
        assert!(
            ratio > 0.5 && ratio < 2.0,
            "energy excess constant moved: {c1:.3} vs {c2:.3}"
        );
    }

    #[test]
    fn scale_covariance_of_the_ansatz() {
        // Doubling both scales maps Phi(r) to Phi(r/2) up to interpolation
        // error in the correction profiles.
        let (ps, grid) = setup();
        let p1 = AnsatzParams { lam: 0.05, mu: 0.5, b: 0.1, a: 0.02 };
        let p2 = AnsatzParams { lam: 0.1, mu: 1.0, b: 0.1, a: 0.02 };
        let s1 = phi(&ps, &grid, p1).unwrap();
        let s2 = phi(&ps, &grid, p2).unwrap();
        let interp = s2.u.interpolant().unwrap();
        for idx in (2000..14_000).step_by(997) {
            let r = grid.nodes()[idx];
            assert_relative_eq!(
                s1.u.values()[idx],
                interp.eval(2.0 * r),
                max_relative = 1e-5,
                epsilon = 1e-10
            );
        }
    }
}
