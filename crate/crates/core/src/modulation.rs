//! Parameter extraction along evolved states and the instability
//! functional built on top of it.
//!
//! A state near the two-bubble family is decomposed as u = Phi_ref(mu,
//! sigma) + g with (mu, sigma) pinned by two orthogonality conditions:
//! the u-component of g is L^2-orthogonal to the scale direction
//! (1/s) LamQ(r/s) at both bubble scales s = mu and s = mu sigma. The
//! reference family slaves the remaining ansatz parameters to sigma,
//! with velocities riding the formal collapse rates, so two scalars
//! describe the whole configuration.
//!
//! The same 2x2 response matrix that drives the Newton solve is the
//! near-identity modulation matrix: its diagonal approaches
//! (+||LamQ||^2, -||LamQ||^2) as sigma -> 0 and g -> 0, which is the
//! sign structure that lets the scale equations be solved for (mu',
//! sigma').

use std::io::Write;
use std::sync::Arc;

use crate::ansatz::{self, AnsatzParams};
use crate::error::Error;
use crate::evolve::Trajectory;
use crate::field::{RadialField, StatePair};
use crate::grid::RadialGrid;
use crate::ops;
use crate::profiles::{gamma_closed_form, lam_q, lambda0_lam_q, q_rate_closed_form, ProfileSet};
use crate::virial::{apply_a0, VirialProfile};
use crate::Result;

/// Separation values above this sit too close to the ansatz regime
/// boundary for the slaved family to be assembled.
const SIGMA_WALL: f64 = 0.0993;

/// Slaved corrections at scale ratio sigma: the outer scale contracts
/// by mu_hat while the velocity coefficients ride the formal collapse
/// rates (b_hat, a_hat).
pub fn slaved_drifts(ps: &ProfileSet, sigma: f64) -> (f64, f64, f64) {
    let kf = ps.k as f64;
    let rho = ps.constants.rho_k;
    let mu_hat = 1.0 - kf / (2.0 * (kf + 2.0)) * sigma * sigma;
    let b_hat = rho * sigma.powf(kf / 2.0);
    let a_hat = kf * rho / (kf + 2.0) * sigma.powf((kf + 2.0) / 2.0);
    (mu_hat, b_hat, a_hat)
}

/// Ansatz parameters of the two-scalar reference family.
pub fn reference_params(ps: &ProfileSet, mu: f64, sigma: f64) -> AnsatzParams {
    let (mu_hat, b_hat, a_hat) = slaved_drifts(ps, sigma);
    AnsatzParams {
        lam: mu * sigma,
        mu: mu * mu_hat,
        b: b_hat,
        a: a_hat,
    }
}

/// The reference pair Phi_ref(mu, sigma) sampled on the grid.
pub fn phi_ref(ps: &ProfileSet, grid: &Arc<RadialGrid>, mu: f64, sigma: f64) -> Result<StatePair> {
    if !(mu > 0.0 && mu.is_finite() && sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "reference scales mu = {mu}, sigma = {sigma}"
        )));
    }
    ansatz::phi(ps, grid, reference_params(ps, mu, sigma))
}

/// L^2-normalized scale direction (1/s) LamQ(r/s).
fn scale_direction(k: u32, grid: &Arc<RadialGrid>, s: f64) -> RadialField {
    RadialField::from_fn(grid, |r| lam_q(k, r / s) / s)
}

fn scaling_of_direction(k: u32, grid: &Arc<RadialGrid>, s: f64) -> RadialField {
    RadialField::from_fn(grid, |r| lambda0_lam_q(k, r / s) / s)
}

/// Both orthogonality residuals and the remainder pair at (mu, sigma).
fn ortho_residuals(
    ps: &ProfileSet,
    s: &StatePair,
    mu: f64,
    sigma: f64,
) -> Result<([f64; 2], StatePair)> {
    let uref = phi_ref(ps, s.grid(), mu, sigma)?;
    let g = StatePair::new(s.u.sub(&uref.u)?, s.udot.sub(&uref.udot)?)?;
    let t_mu = scale_direction(ps.k, s.grid(), mu);
    let t_lam = scale_direction(ps.k, s.grid(), mu * sigma);
    Ok((
        [ops::inner(&t_mu, &g.u)?, ops::inner(&t_lam, &g.u)?],
        g,
    ))
}

/// Modulation matrix at (mu, sigma) with remainder u-component g_u. The
/// family derivatives are finite differences of Phi_ref; the remaining
/// terms pair the moving test directions against g.
pub fn modulation_matrix(
    ps: &ProfileSet,
    grid: &Arc<RadialGrid>,
    mu: f64,
    sigma: f64,
    g_u: &RadialField,
) -> Result<[[f64; 2]; 2]> {
    let h_m = 1e-5 * mu;
    let h_s = 1e-5 * sigma;
    let du_dmu = phi_ref(ps, grid, mu + h_m, sigma)?
        .u
        .sub(&phi_ref(ps, grid, mu - h_m, sigma)?.u)?
        .scale(1.0 / (2.0 * h_m));
    let du_dsig = phi_ref(ps, grid, mu, sigma + h_s)?
        .u
        .sub(&phi_ref(ps, grid, mu, sigma - h_s)?.u)?
        .scale(1.0 / (2.0 * h_s));

    let lam = mu * sigma;
    let t_mu = scale_direction(ps.k, grid, mu);
    let t_lam = scale_direction(ps.k, grid, lam);
    let l0_mu = scaling_of_direction(ps.k, grid, mu);
    let l0_lam = scaling_of_direction(ps.k, grid, lam);

    let m11 = ops::inner(&t_mu, &du_dmu)? + ops::inner(&l0_mu, g_u)? / mu;
    let m12 = ops::inner(&t_mu, &du_dsig)? / mu;
    let m21 = ops::inner(&t_lam, &du_dmu)? + ops::inner(&l0_lam, g_u)? / mu;
    let m22 = ops::inner(&t_lam, &du_dsig)? / mu + ops::inner(&l0_lam, g_u)? / lam;
    Ok([[m11, m12], [m21, m22]])
}

#[derive(Debug, Clone)]
pub struct Extraction {
    pub mu: f64,
    pub sigma: f64,
    pub g: StatePair,
    pub m_matrix: [[f64; 2]; 2],
    /// Orthogonality residuals at the accepted point.
    pub ortho: [f64; 2],
    pub iterations: usize,
}

/// Solve the two orthogonality conditions for (mu, sigma) by Newton in
/// log-scales, warm-started from the guesses (expected within a factor
/// of two). The Jacobian is the modulation matrix with its columns
/// rescaled, so convergence is quadratic down to the quadrature floor.
pub fn extract(
    ps: &ProfileSet,
    s: &StatePair,
    mu_guess: f64,
    sigma_guess: f64,
) -> Result<Extraction> {
    if !(mu_guess > 0.0 && mu_guess.is_finite()) {
        return Err(Error::InvalidArgument(format!("mu guess {mu_guess}")));
    }
    if !(sigma_guess > 0.0) || sigma_guess >= 0.12 {
        return Err(Error::InvalidRegime(format!(
            "separation guess {sigma_guess} outside (0, 0.12)"
        )));
    }
    let mut mu = mu_guess;
    let mut sigma = sigma_guess.min(SIGMA_WALL);
    let mut wall = false;
    let mut iterations = 0;
    let (mut f, mut g) = ortho_residuals(ps, s, mu, sigma)?;

    for iter in 0..50 {
        iterations = iter + 1;
        let fmax = f[0].abs().max(f[1].abs());
        if fmax < 5e-14 {
            break;
        }
        let m = modulation_matrix(ps, s.grid(), mu, sigma, &g.u)?;
        // dF/d(ln mu, ln sigma) = -[[mu m11, sigma mu m12],
        //                           [mu m21, sigma mu m22]]
        let j = [
            [-mu * m[0][0], -sigma * mu * m[0][1]],
            [-mu * m[1][0], -sigma * mu * m[1][1]],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let scale = j[0][0].abs().max(j[0][1].abs()) * j[1][0].abs().max(j[1][1].abs());
        if det.abs() < 1e-12 * scale.max(1e-300) {
            return Err(Error::ExtractionFailed(
                "degenerate modulation response".into(),
            ));
        }
        let mut d0 = (-f[0] * j[1][1] + f[1] * j[0][1]) / det;
        let mut d1 = (-f[1] * j[0][0] + f[0] * j[1][0]) / det;
        d0 = d0.clamp(-0.25, 0.25);
        d1 = d1.clamp(-0.25, 0.25);
        mu = (mu * d0.exp()).clamp(0.05, 20.0);
        sigma = sigma * d1.exp();
        if sigma > SIGMA_WALL {
            sigma = SIGMA_WALL;
            wall = true;
        }
        if sigma < 1e-5 {
            sigma = 1e-5;
        }
        let step = d0.abs().max(d1.abs());
        let (f_new, g_new) = ortho_residuals(ps, s, mu, sigma)?;
        f = f_new;
        g = g_new;
        if step < 1e-13 {
            break;
        }
    }

    let fmax = f[0].abs().max(f[1].abs());
    if fmax >= 1e-10 {
        if wall {
            return Err(Error::InvalidRegime(format!(
                "separation pinned at the regime wall, residual {fmax:.3e}"
            )));
        }
        return Err(Error::ExtractionFailed(format!(
            "orthogonality residual {fmax:.3e} after {iterations} iterations"
        )));
    }
    let m_matrix = modulation_matrix(ps, s.grid(), mu, sigma, &g.u)?;
    Ok(Extraction {
        mu,
        sigma,
        g,
        m_matrix,
        ortho: f,
        iterations,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct BSample {
    /// The instability functional.
    pub b: f64,
    /// <DE(Phi_ref) | g> over both components.
    pub de_pair: f64,
    /// Leading pairing <(1/lam) LamQ(r/lam) | g_t>.
    pub lead_pair: f64,
}

/// The virial-corrected instability functional at one decomposed state:
/// the energy-gradient pairing normalized by the formal collapse rate,
/// plus the antisymmetric transport pairing <A0(mu sigma) g | g_t>.
pub fn b_sample(
    ps: &ProfileSet,
    vp: &VirialProfile,
    mu: f64,
    sigma: f64,
    g: &StatePair,
) -> Result<BSample> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma = {sigma}")));
    }
    let grid = g.grid();
    let p = reference_params(ps, mu, sigma);
    let de_u = ansatz::static_gradient(ps, grid, p)?;
    let uref = ansatz::phi(ps, grid, p)?;
    let de_pair = ops::inner(&de_u, &g.u)? + ops::inner(&uref.udot, &g.udot)?;
    let kf = ps.k as f64;
    let xi = ps.constants.rho_k * sigma.powf(kf / 2.0);
    let lam = mu * sigma;
    let a0g = apply_a0(vp, lam, &g.u)?;
    let b = de_pair / xi + ops::inner(&a0g, &g.udot)?;
    let t_lam = scale_direction(ps.k, grid, lam);
    let lead_pair = ops::inner(&t_lam, &g.udot)?;
    Ok(BSample { b, de_pair, lead_pair })
}

pub fn b_functional(
    ps: &ProfileSet,
    vp: &VirialProfile,
    mu: f64,
    sigma: f64,
    g: &StatePair,
) -> Result<f64> {
    Ok(b_sample(ps, vp, mu, sigma, g)?.b)
}

/// Decomposition series along a trajectory.
#[derive(Debug, Clone)]
pub struct ModTrack {
    pub times: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Velocity read-offs against the scale directions, normalized by
    /// ||LamQ||^2.
    pub a_slaved: Vec<f64>,
    pub b_slaved: Vec<f64>,
    pub g_h: Vec<f64>,
    pub gdot_l2: Vec<f64>,
    pub b_func: Vec<f64>,
    pub ortho1: Vec<f64>,
    pub ortho2: Vec<f64>,
    pub lead_pair: Vec<f64>,
    pub de_pair: Vec<f64>,
    pub m_matrices: Vec<[[f64; 2]; 2]>,
    pub k: u32,
    pub rho_k: f64,
    pub lam_q_norm_sq: f64,
    /// Set when tracking halted before the trajectory's last frame:
    /// the first unprocessed time and the reason.
    pub stopped: Option<(f64, String)>,
}

impl ModTrack {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Decompose every recorded frame of a trajectory, warm-starting each
/// extraction from the previous frame. Enforces the orthogonality gate
/// at every accepted step: residuals must sit below
/// 1e-8 ||LamQ||_{L^2} ||g||_{H x L^2} whenever g is above noise.
///
/// A frame whose extraction fails, leaves the valid regime, or breaks
/// the gate does not poison the whole series: tracking stops there and
/// the partial track records the stop in `stopped`. Only a first-frame
/// failure is an error.
pub fn track_trajectory(
    ps: &ProfileSet,
    vp: &VirialProfile,
    traj: &Trajectory,
    mu_guess: f64,
    sigma_guess: f64,
) -> Result<ModTrack> {
    if traj.times.is_empty() {
        return Err(Error::InsufficientData("empty trajectory".into()));
    }
    let mut track = ModTrack {
        times: Vec::new(),
        mu: Vec::new(),
        sigma: Vec::new(),
        a_slaved: Vec::new(),
        b_slaved: Vec::new(),
        g_h: Vec::new(),
        gdot_l2: Vec::new(),
        b_func: Vec::new(),
        ortho1: Vec::new(),
        ortho2: Vec::new(),
        lead_pair: Vec::new(),
        de_pair: Vec::new(),
        m_matrices: Vec::new(),
        k: ps.k,
        rho_k: ps.constants.rho_k,
        lam_q_norm_sq: ps.constants.lam_q_norm_sq,
        stopped: None,
    };
    let norm_sq = ps.constants.lam_q_norm_sq;
    let (mut gm, mut gs) = (mu_guess, sigma_guess);
    for (i, &t) in traj.times.iter().enumerate() {
        let state = &traj.states[i];
        let ex = match extract(ps, state, gm, gs) {
            Ok(ex) => ex,
            Err(e) if i == 0 => return Err(e),
            Err(e) => {
                track.stopped = Some((t, e.to_string()));
                break;
            }
        };
        gm = ex.mu;
        gs = ex.sigma;
        let g_h = ops::h_norm_sq(&ex.g.u, ps.k).sqrt();
        let gdot_l2 = ops::l2_norm_sq(&ex.g.udot).sqrt();
        let g_norm = (g_h * g_h + gdot_l2 * gdot_l2).sqrt();
        let gate = 1e-8 * norm_sq.sqrt() * g_norm;
        if g_norm > 1e-6 && (ex.ortho[0].abs() > gate || ex.ortho[1].abs() > gate) {
            track.stopped = Some((
                t,
                format!(
                    "orthogonality drift: residuals ({:.3e}, {:.3e}) above gate {gate:.3e}",
                    ex.ortho[0], ex.ortho[1]
                ),
            ));
            break;
        }
        let bs = b_sample(ps, vp, ex.mu, ex.sigma, &ex.g)?;
        let lam = ex.mu * ex.sigma;
        let t_mu = scale_direction(ps.k, state.grid(), ex.mu);
        let t_lam = scale_direction(ps.k, state.grid(), lam);
        track.times.push(t);
        track.mu.push(ex.mu);
        track.sigma.push(ex.sigma);
        track
            .a_slaved
            .push(ops::inner(&t_mu, &state.udot)? / norm_sq);
        track
            .b_slaved
            .push(ops::inner(&t_lam, &state.udot)? / norm_sq);
        track.g_h.push(g_h);
        track.gdot_l2.push(gdot_l2);
        track.b_func.push(bs.b);
        track.ortho1.push(ex.ortho[0]);
        track.ortho2.push(ex.ortho[1]);
        track.lead_pair.push(bs.lead_pair);
        track.de_pair.push(bs.de_pair);
        track.m_matrices.push(ex.m_matrix);
    }
    Ok(track)
}

pub fn write_modtrack_csv<W: Write>(track: &ModTrack, mut out: W) -> Result<()> {
    writeln!(out, "t,mu,sigma,a,b_slaved,gH,gdotL2,b_func,ortho1,ortho2")?;
    for i in 0..track.len() {
        writeln!(
            out,
            "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            track.times[i],
            track.mu[i],
            track.sigma[i],
            track.a_slaved[i],
            track.b_slaved[i],
            track.g_h[i],
            track.gdot_l2[i],
            track.b_func[i],
            track.ortho1[i],
            track.ortho2[i],
        )?;
    }
    Ok(())
}

/// Differential-inequality audit of the instability functional.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BPrimeReport {
    pub n_samples: usize,
    /// Fraction of interior samples where b' stays below the structural
    /// rate plus half a unit of slack.
    pub fraction_satisfied: f64,
    /// 90th percentile of the slack multiplier needed per sample.
    pub measured_c0: f64,
    /// Largest coercivity constant compatible with the energy-expansion
    /// sign at every sample; negative if the sign ever fails.
    pub measured_c1: f64,
}

/// Check b' <= (k rho_k / (2 mu sigma)) sigma^{k/2} b + c0 z with slack
/// z = (|b| sigma^{k/2} + ||g||^2) / (mu sigma), at c0 = 1/2, across the
/// track. b' is a centered difference of the recorded series.
pub fn monitor_b(track: &ModTrack) -> Result<BPrimeReport> {
    let n = track.len();
    if n < 10 {
        return Err(Error::InsufficientData(format!(
            "need at least 10 samples to audit b', got {n}"
        )));
    }
    let kf = track.k as f64;
    let mut required = Vec::with_capacity(n - 2);
    let mut satisfied = 0usize;
    for i in 1..n - 1 {
        let dt = track.times[i + 1] - track.times[i - 1];
        let bprime = (track.b_func[i + 1] - track.b_func[i - 1]) / dt;
        let lam = track.mu[i] * track.sigma[i];
        let sk2 = track.sigma[i].powf(kf / 2.0);
        let b = track.b_func[i];
        let structural = kf * track.rho_k / (2.0 * lam) * sk2 * b;
        let g_sq = track.g_h[i] * track.g_h[i] + track.gdot_l2[i] * track.gdot_l2[i];
        let z = (b.abs() * sk2 + g_sq) / lam;
        if bprime <= structural + 0.5 * z {
            satisfied += 1;
        }
        required.push(((bprime - structural) / z).max(0.0));
    }
    required.sort_by(|x, y| x.partial_cmp(y).expect("finite slack"));
    let idx = ((required.len() as f64 - 1.0) * 0.9).floor() as usize;
    let measured_c0 = required[idx];

    let mut measured_c1 = f64::INFINITY;
    for i in 0..n {
        let g_sq = track.g_h[i] * track.g_h[i] + track.gdot_l2[i] * track.gdot_l2[i];
        if g_sq > 1e-20 {
            measured_c1 = measured_c1.min(-2.0 * track.de_pair[i] / g_sq);
        }
    }
    if !measured_c1.is_finite() {
        measured_c1 = 0.0;
    }
    Ok(BPrimeReport {
        n_samples: n,
        fraction_satisfied: satisfied as f64 / (n - 2) as f64,
        measured_c0,
        measured_c1,
    })
}

pub fn write_bprime_report<W: Write>(report: &BPrimeReport, mut out: W) -> Result<()> {
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::NumericalFailure(format!("report serialization: {e}")))?;
    out.write_all(text.as_bytes())?;
    out.write_all(b"\n")?;
    Ok(())
}

/// |b - lead| / ||g|| at the recorded samples nearest the given
/// separation levels; the ratio should shrink as sigma does.
pub fn leading_order_ratios(track: &ModTrack, levels: &[f64]) -> Result<Vec<f64>> {
    if track.is_empty() {
        return Err(Error::InsufficientData("empty track".into()));
    }
    let mut out = Vec::with_capacity(levels.len());
    for &level in levels {
        let mut best = 0usize;
        let mut gap = f64::INFINITY;
        for i in 0..track.len() {
            let d = (track.sigma[i] - level).abs();
            if d < gap {
                gap = d;
                best = i;
            }
        }
        let g_norm = (track.g_h[best] * track.g_h[best]
            + track.gdot_l2[best] * track.gdot_l2[best])
            .sqrt();
        if g_norm == 0.0 {
            return Err(Error::InsufficientData(format!(
                "no remainder at sigma level {level}"
            )));
        }
        out.push((track.b_func[best] - track.lead_pair[best]).abs() / g_norm);
    }
    Ok(out)
}

/// Worst ratios of the measured scale drifts to their modeled bounds:
/// |mu'| against ||g_t|| + sigma^{k/2} ||g||_H, and the combination
/// mu sigma' + rho_k sigma^{k/2} + lead/||LamQ||^2 against the same.
#[derive(Debug, Clone, Copy)]
pub struct DriftCheck {
    pub worst_mu: f64,
    pub worst_sigma: f64,
}

pub fn modulation_drift_check(track: &ModTrack) -> Result<DriftCheck> {
    let n = track.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 samples, got {n}"
        )));
    }
    let kf = track.k as f64;
    let mut worst_mu = 0.0f64;
    let mut worst_sigma = 0.0f64;
    for i in 1..n - 1 {
        let dt = track.times[i + 1] - track.times[i - 1];
        let mu_dot = (track.mu[i + 1] - track.mu[i - 1]) / dt;
        let lam_dot = (track.mu[i + 1] * track.sigma[i + 1]
            - track.mu[i - 1] * track.sigma[i - 1])
            / dt;
        let mu_sigma_dot = lam_dot - mu_dot * track.sigma[i];
        let sk2 = track.sigma[i].powf(kf / 2.0);
        let bound = track.gdot_l2[i] + sk2 * track.g_h[i];
        if bound == 0.0 {
            continue;
        }
        worst_mu = worst_mu.max(mu_dot.abs() / bound);
        let expr = mu_sigma_dot + track.rho_k * sk2 + track.lead_pair[i] / track.lam_q_norm_sq;
        worst_sigma = worst_sigma.max(expr.abs() / bound);
    }
    Ok(DriftCheck { worst_mu, worst_sigma })
}

#[derive(Debug, Clone, PartialEq)]
pub enum OdeStatus {
    Completed,
    /// The inner scale reached zero inside the horizon.
    ConcentrationComplete { t: f64 },
}

/// Trajectory of the reduced parameter system
/// lam' = -b, mu' = a, b' = -gamma_k lam^{k-1}/mu^k,
/// a' = -gamma_k lam^k/mu^{k+1}.
#[derive(Debug, Clone)]
pub struct OdeTrack {
    pub times: Vec<f64>,
    pub lam: Vec<f64>,
    pub mu: Vec<f64>,
    pub b: Vec<f64>,
    pub a: Vec<f64>,
    pub status: OdeStatus,
}

impl OdeTrack {
    /// Index of the recorded time nearest t.
    pub fn nearest(&self, t: f64) -> usize {
        let mut best = 0usize;
        let mut gap = f64::INFINITY;
        for (i, &ti) in self.times.iter().enumerate() {
            let d = (ti - t).abs();
            if d < gap {
                gap = d;
                best = i;
            }
        }
        best
    }
}

pub fn reduced_ode(k: u32, p0: AnsatzParams, t0: f64, t1: f64, dt: f64) -> Result<OdeTrack> {
    if k < 3 {
        return Err(Error::InvalidArgument(format!("k = {k} < 3")));
    }
    p0.validate()?;
    if !(t1 > t0 && t0.is_finite() && t1.is_finite() && dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "time window [{t0}, {t1}] with step {dt}"
        )));
    }
    let gamma = gamma_closed_form(k);
    let ki = k as i32;
    let rhs = |y: &[f64; 4]| -> [f64; 4] {
        let [lam, mu, b, a] = *y;
        [
            -b,
            a,
            -gamma * lam.powi(ki - 1) / mu.powi(ki),
            -gamma * lam.powi(ki) / mu.powi(ki + 1),
        ]
    };
    let mut y = [p0.lam, p0.mu, p0.b, p0.a];
    let mut t = t0;
    let mut track = OdeTrack {
        times: vec![t0],
        lam: vec![y[0]],
        mu: vec![y[1]],
        b: vec![y[2]],
        a: vec![y[3]],
        status: OdeStatus::Completed,
    };
    let span = t1 - t0;
    while t < t1 - 1e-12 * span {
        let h = dt.min(t1 - t);
        let k1 = rhs(&y);
        let y2 = [
            y[0] + 0.5 * h * k1[0],
            y[1] + 0.5 * h * k1[1],
            y[2] + 0.5 * h * k1[2],
            y[3] + 0.5 * h * k1[3],
        ];
        let k2 = rhs(&y2);
        let y3 = [
            y[0] + 0.5 * h * k2[0],
            y[1] + 0.5 * h * k2[1],
            y[2] + 0.5 * h * k2[2],
            y[3] + 0.5 * h * k2[3],
        ];
        let k3 = rhs(&y3);
        let y4 = [
            y[0] + h * k3[0],
            y[1] + h * k3[1],
            y[2] + h * k3[2],
            y[3] + h * k3[3],
        ];
        let k4 = rhs(&y4);
        for j in 0..4 {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        t += h;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(format!(
                "reduced system left the finite regime at t = {t}"
            )));
        }
        if y[0] <= 0.0 {
            track.status = OdeStatus::ConcentrationComplete { t };
            break;
        }
        track.times.push(t);
        track.lam.push(y[0]);
        track.mu.push(y[1]);
        track.b.push(y[2]);
        track.a.push(y[3]);
    }
    Ok(track)
}

/// Leading collapse asymptotics as explicit parameter values at time t.
pub fn formal_parameters(k: u32, t: f64) -> Result<AnsatzParams> {
    if k < 3 {
        return Err(Error::InvalidArgument(format!("k = {k} < 3")));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("t = {t}")));
    }
    let kf = k as f64;
    let q = q_rate_closed_form(k);
    let e = 2.0 / (kf - 2.0);
    Ok(AnsatzParams {
        lam: q * t.powf(-e),
        mu: 1.0 - kf / (2.0 * (kf + 2.0)) * q * q * t.powf(-2.0 * e),
        b: e * q * t.powf(-kf / (kf - 2.0)),
        a: 2.0 * kf / ((kf - 2.0) * (kf + 2.0)) * q * q * t.powf(-(kf + 2.0) / (kf - 2.0)),
    })
}
