//! Inter-site permittivity that keeps the hopping rate uniform after the
//! lattice is deformed.
//!
//! A 1D cavity of width `w` and permittivity `eps_a`, embedded in a medium of
//! permittivity `eps_b`, has the field profile
//!
//! ```text
//! |E(x)| = A |cos(alpha x)|                                  |x| < w/2
//! |E(x)| = A |cos(alpha w/2)| exp(beta (w/2 - |x|))          |x| > w/2
//! alpha = sqrt(eps_a) omega / c,  beta = sqrt(eps_b) omega / c
//! ```
//!
//! normalized so that `int eps(x) |E|^2 dx = 1`. Two such cavities a distance
//! `d` apart couple at
//!
//! ```text
//! kappa = omega/2 (eps_a - eps_b) int_{-w/2}^{w/2} |E(x)| |E(x - d)| dx.
//! ```
//!
//! Changing `eps_b` moves the prefactor, the normalization and the decay
//! constant together; every solve below recomputes the whole profile.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{Lattice, SiteId};
use crate::quadrature;

/// Vacuum speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;

/// Upper end of the `eps_b` search bracket sits this far below `eps_a`.
pub const EPS_B_MARGIN: f64 = 1e-6;

const QUAD_REL_TOL: f64 = 1e-14;
const QUAD_MAX_SEGMENTS: usize = 4000;
const MONOTONE_SAMPLES: usize = 65;

/// Cavity parameters that stay fixed while `eps_b` is tuned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityParams {
    /// Optical angular frequency, rad/s.
    pub omega: f64,
    /// In-cavity relative permittivity.
    pub eps_a: f64,
    /// Cavity width, m.
    pub width: f64,
}

impl CavityParams {
    pub fn new(omega: f64, eps_a: f64, width: f64) -> Result<Self> {
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::invalid("omega", format!("must be positive, got {omega}")));
        }
        if !(eps_a > 1.0 && eps_a.is_finite()) {
            return Err(Error::invalid("permittivity.eps_a", format!("must exceed 1, got {eps_a}")));
        }
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::invalid("permittivity.w_over_lambda", format!("cavity width must be positive, got {width}")));
        }
        Ok(CavityParams { omega, eps_a, width })
    }

    /// `omega = 2 pi c / lambda`, `w = w_over_lambda * lambda`.
    pub fn from_wavelength(lambda: f64, eps_a: f64, w_over_lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid("permittivity.lambda_m", format!("must be positive, got {lambda}")));
        }
        CavityParams::new(2.0 * PI * SPEED_OF_LIGHT / lambda, eps_a, w_over_lambda * lambda)
    }

    pub fn with_eps_b(&self, eps_b: f64) -> Result<CavityStack> {
        CavityStack::new(self.omega, self.eps_a, eps_b, self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityStack {
    pub omega: f64,
    pub eps_a: f64,
    pub eps_b: f64,
    pub width: f64,
}

impl CavityStack {
    pub fn new(omega: f64, eps_a: f64, eps_b: f64, width: f64) -> Result<Self> {
        let base = CavityParams::new(omega, eps_a, width)?;
        if !(eps_b >= 1.0 && eps_b < eps_a) {
            return Err(Error::invalid(
                "eps_b",
                format!("need 1 <= eps_b < eps_a = {}, got {eps_b}", base.eps_a),
            ));
        }
        Ok(CavityStack { omega, eps_a, eps_b, width })
    }

    pub fn params(&self) -> CavityParams {
        CavityParams { omega: self.omega, eps_a: self.eps_a, width: self.width }
    }

    /// In-cavity wavenumber `sqrt(eps_a) omega / c`.
    pub fn alpha(&self) -> f64 {
        self.eps_a.sqrt() * self.omega / SPEED_OF_LIGHT
    }

    /// Evanescent decay constant `sqrt(eps_b) omega / c`.
    pub fn beta(&self) -> f64 {
        self.eps_b.sqrt() * self.omega / SPEED_OF_LIGHT
    }
}

/// Normalized cavity mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeProfile {
    pub stack: CavityStack,
    /// Normalization constant `A`.
    pub amplitude: f64,
}

/// `int eps |E|^2 dx / A^2` in closed form: a cosine-squared core plus two
/// exponential tails.
fn unit_normalization(stack: &CavityStack) -> f64 {
    let (alpha, beta, w) = (stack.alpha(), stack.beta(), stack.width);
    let core = w / 2.0 + (alpha * w).sin() / (2.0 * alpha);
    let edge = (alpha * w / 2.0).cos();
    stack.eps_a * core + stack.eps_b * edge * edge / beta
}

pub fn normalize_mode(stack: CavityStack) -> ModeProfile {
    ModeProfile { stack, amplitude: 1.0 / unit_normalization(&stack).sqrt() }
}

/// Mode amplitude `|E(x)|` at position `x` (m) from the cavity center.
pub fn cavity_mode(x: f64, m: &ModeProfile) -> f64 {
    let s = &m.stack;
    let half = s.width / 2.0;
    let ax = x.abs();
    if ax < half {
        m.amplitude * (s.alpha() * ax).cos().abs()
    } else {
        m.amplitude * (s.alpha() * half).cos().abs() * (s.beta() * (half - ax)).exp()
    }
}

/// Zeros of `cos(alpha x)` strictly inside `(lo, hi)`.
fn cosine_zeros(alpha: f64, lo: f64, hi: f64) -> Vec<f64> {
    let first = ((alpha * lo - PI / 2.0) / PI).ceil() as i64;
    let last = ((alpha * hi - PI / 2.0) / PI).floor() as i64;
    (first..=last)
        .map(|n| (PI / 2.0 + n as f64 * PI) / alpha)
        .filter(|&x| x > lo && x < hi)
        .collect()
}

impl ModeProfile {
    /// `int eps |E|^2 dx` from the closed form; equals 1 up to rounding.
    pub fn normalization_integral(&self) -> f64 {
        self.amplitude * self.amplitude * unit_normalization(&self.stack)
    }

    /// The same integral by adaptive quadrature, with the tails truncated where
    /// `exp(-2 beta x)` drops below `1e-40`.
    pub fn normalization_integral_quadrature(&self) -> f64 {
        let s = &self.stack;
        let half = s.width / 2.0;
        let tail = half + 46.0 / s.beta();
        let f = |x: f64| {
            let eps = if x.abs() < half { s.eps_a } else { s.eps_b };
            let e = cavity_mode(x, self);
            eps * e * e
        };
        let (core, _) = quadrature::integrate(f, -half, half, &[], 0.0, QUAD_REL_TOL, QUAD_MAX_SEGMENTS);
        let (right, _) = quadrature::integrate(f, half, tail, &[], 0.0, QUAD_REL_TOL, QUAD_MAX_SEGMENTS);
        core + 2.0 * right
    }

    fn prefactor(&self) -> f64 {
        0.5 * self.stack.omega * (self.stack.eps_a - self.stack.eps_b)
    }
}

/// Closed-form coupling for `d > w`, where the neighbour's field is purely
/// evanescent across the integration window:
/// `I = A^2 |cos(alpha w/2)| exp(beta (w/2 - d)) int |cos(alpha x)| exp(beta x) dx`.
pub fn coupling_rate_closed_form(m: &ModeProfile, d: f64) -> Option<f64> {
    let s = &m.stack;
    if !(d > s.width) {
        return None;
    }
    let (alpha, beta, half) = (s.alpha(), s.beta(), s.width / 2.0);
    let antiderivative = |x: f64| (beta * x).exp() * (beta * (alpha * x).cos() + alpha * (alpha * x).sin());
    let mut edges = vec![-half];
    edges.extend(cosine_zeros(alpha, -half, half));
    edges.push(half);
    let window: f64 = edges
        .windows(2)
        .map(|e| {
            let sign = (alpha * 0.5 * (e[0] + e[1])).cos().signum();
            sign * (antiderivative(e[1]) - antiderivative(e[0]))
        })
        .sum::<f64>()
        / (alpha * alpha + beta * beta);
    let overlap = m.amplitude * m.amplitude * (alpha * half).cos().abs() * (beta * (half - d)).exp() * window;
    Some(m.prefactor() * overlap)
}

/// Coupling by adaptive quadrature of the overlap integrand, split at every
/// kink of either mode inside the window. Valid for any `d > 0`.
pub fn coupling_rate_quadrature(m: &ModeProfile, d: f64) -> f64 {
    let s = &m.stack;
    let (alpha, half) = (s.alpha(), s.width / 2.0);
    let mut cuts = cosine_zeros(alpha, -half, half);
    cuts.extend(cosine_zeros(alpha, -half - d, half - d).into_iter().map(|z| z + d));
    cuts.push(d - half);
    cuts.push(d + half);
    let f = |x: f64| cavity_mode(x, m) * cavity_mode(x - d, m);
    let (overlap, _) = quadrature::integrate(f, -half, half, &cuts, 0.0, QUAD_REL_TOL, QUAD_MAX_SEGMENTS);
    m.prefactor() * overlap
}

/// Nearest-neighbour coupling (rad/s) at center separation `d` (m).
pub fn coupling_rate(m: &ModeProfile, d: f64) -> f64 {
    coupling_rate_closed_form(m, d).unwrap_or_else(|| coupling_rate_quadrature(m, d))
}

fn kappa_at(params: &CavityParams, eps_b: f64, d: f64) -> Result<f64> {
    Ok(coupling_rate(&normalize_mode(params.with_eps_b(eps_b)?), d))
}

fn check_target(kappa_target: f64) -> Result<()> {
    if kappa_target > 0.0 && kappa_target.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("permittivity.kappa_target", format!("must be positive, got {kappa_target}")))
    }
}

/// Bisect the sign change of `f(x) - target` on `[lo, hi]` with `f(lo) >= target > f(hi)`
/// or the reverse.
fn bisect<F: FnMut(f64) -> Result<f64>>(mut f: F, mut lo: f64, mut hi: f64, target: f64) -> Result<f64> {
    let above_at_lo = f(lo)? >= target;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (f(mid)? >= target) == above_at_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Largest cavity separation `d` (m) at which the coupling equals
/// `kappa_target`.
///
/// Beyond `w` the coupling decays monotonically, so when `kappa(w)` exceeds the
/// target the root is bracketed on the tail. Otherwise the search steps
/// inward from `w` through the overlap region and takes the outermost
/// crossing, below which the tight-binding picture stops being meaningful.
pub fn solve_baseline_spacing(stack: CavityStack, kappa_target: f64) -> Result<f64> {
    check_target(kappa_target)?;
    let m = normalize_mode(stack);
    let w = stack.width;
    let kappa = |d: f64| Ok(coupling_rate(&m, d));
    let at_w = coupling_rate(&m, w);
    let (lo, hi) = if at_w >= kappa_target {
        let mut hi = 2.0 * w;
        let mut doublings = 0;
        while coupling_rate(&m, hi) >= kappa_target {
            hi *= 2.0;
            doublings += 1;
            if doublings > 60 {
                return Err(Error::NoRoot(format!("coupling stays above {kappa_target:e} rad/s at every spacing")));
            }
        }
        (w, hi)
    } else {
        let step = w / 512.0;
        let mut d = w;
        loop {
            let next = d - step;
            if next <= step / 2.0 {
                return Err(Error::NoRoot(format!(
                    "target {kappa_target:e} rad/s exceeds the coupling at every admissible spacing"
                )));
            }
            if coupling_rate(&m, next) >= kappa_target {
                break (next, d);
            }
            d = next;
        }
    };
    bisect(kappa, lo, hi, kappa_target)
}

/// Which way `eps_b` would have to leave the admissible bracket to reach the
/// target coupling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unreachable {
    /// The target needs `eps_b` below the lower bracket end (1).
    NeedsLowerEps,
    /// The target needs `eps_b` above `eps_a - margin`.
    NeedsHigherEps,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsSolve {
    Solved(f64),
    Unreachable(Unreachable),
}

/// Solve for `eps_b` at separation `d` (m), reporting unreachable targets
/// as a value instead of an error.
pub fn try_solve_epsilon_b(params: &CavityParams, d: f64, kappa_target: f64) -> Result<EpsSolve> {
    check_target(kappa_target)?;
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::invalid("d", format!("separation must be positive, got {d}")));
    }
    let lower = 1.0;
    let upper = params.eps_a - EPS_B_MARGIN;
    if !(upper > lower) {
        return Err(Error::invalid("permittivity.eps_a", "bracket (1, eps_a - margin) is empty"));
    }
    let grid: Vec<f64> = (0..MONOTONE_SAMPLES)
        .map(|k| lower + (upper - lower) * k as f64 / (MONOTONE_SAMPLES - 1) as f64)
        .collect();
    let samples: Vec<f64> = grid.iter().map(|&e| kappa_at(params, e, d)).collect::<Result<_>>()?;
    let increasing = samples.windows(2).all(|w| w[1] > w[0]);
    let decreasing = samples.windows(2).all(|w| w[1] < w[0]);
    if !(increasing || decreasing) {
        return Err(Error::NonMonotonicBracket { lower, upper });
    }
    let (k_lo, k_hi) = (samples[0], samples[MONOTONE_SAMPLES - 1]);
    let (min, max) = if decreasing { (k_hi, k_lo) } else { (k_lo, k_hi) };
    if kappa_target > max {
        return Ok(EpsSolve::Unreachable(if decreasing { Unreachable::NeedsLowerEps } else { Unreachable::NeedsHigherEps }));
    }
    if kappa_target < min {
        return Ok(EpsSolve::Unreachable(if decreasing { Unreachable::NeedsHigherEps } else { Unreachable::NeedsLowerEps }));
    }
    let cell = samples
        .windows(2)
        .position(|w| (w[0] - kappa_target) * (w[1] - kappa_target) <= 0.0)
        .expect("target lies within the sampled range");
    let eps = bisect(|e| kappa_at(params, e, d), grid[cell], grid[cell + 1], kappa_target)?;
    Ok(EpsSolve::Solved(eps))
}

/// `eps_b` at which two cavities `d` metres apart couple at `kappa_target`.
pub fn solve_epsilon_b(params: &CavityParams, d: f64, kappa_target: f64) -> Result<f64> {
    match try_solve_epsilon_b(params, d, kappa_target)? {
        EpsSolve::Solved(e) => Ok(e),
        EpsSolve::Unreachable(dir) => {
            let side = match dir {
                Unreachable::NeedsLowerEps => "below 1 (bond too stretched)",
                Unreachable::NeedsHigherEps => "above eps_a (bond too compressed)",
            };
            Err(Error::NoRoot(format!(
                "coupling {kappa_target:e} rad/s at d = {d:e} m would need eps_b {side}"
            )))
        }
    }
}

/// Inter-site permittivity of one bond.
#[derive(Debug, Clone, PartialEq)]
pub struct BondPermittivity {
    pub sites: (SiteId, SiteId),
    /// Distance of the bond midpoint from the cloak center, in lattice units.
    pub midpoint_radius: f64,
    /// Bond length in lattice units.
    pub length: f64,
    /// Bond length in metres.
    pub length_m: f64,
    pub outcome: EpsSolve,
    /// Set when the cavities overlap (`length_m <= w`).
    pub overlapping: bool,
}

impl BondPermittivity {
    pub fn eps_b(&self) -> Option<f64> {
        match self.outcome {
            EpsSolve::Solved(e) => Some(e),
            EpsSolve::Unreachable(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermittivityMap {
    /// `eps_b` of an undeformed bond (length exactly one lattice unit).
    pub baseline: f64,
    pub center: [f64; 2],
    pub entries: Vec<BondPermittivity>,
}

impl PermittivityMap {
    pub fn unreachable(&self) -> Vec<(u32, u32)> {
        self.entries
            .iter()
            .filter(|e| e.eps_b().is_none())
            .map(|e| (e.sites.0 .0, e.sites.1 .0))
            .collect()
    }

    /// Fail with every unreachable bond listed.
    pub fn require_all(self) -> Result<Self> {
        let bad = self.unreachable();
        if bad.is_empty() {
            Ok(self)
        } else {
            Err(Error::UnreachableBonds(bad))
        }
    }
}

/// Per-bond `eps_b` for a (transformed) lattice. One lattice unit is
/// `d_physical` metres. Bonds of unit length get the baseline value without a
/// solve. Midpoint radii are measured from `center`, defaulting to the
/// lattice's cloak center.
pub fn permittivity_map(
    lat: &Lattice,
    params: &CavityParams,
    kappa_target: f64,
    d_physical: f64,
    center: Option<[f64; 2]>,
) -> Result<PermittivityMap> {
    if !(d_physical > 0.0 && d_physical.is_finite()) {
        return Err(Error::invalid("permittivity.d_physical_m", format!("must be positive, got {d_physical}")));
    }
    let baseline = solve_epsilon_b(params, d_physical, kappa_target)?;
    let center = center
        .or_else(|| lat.cloak().map(|c| c.center()))
        .unwrap_or_else(|| {
            let (lo, hi) = lat.reference_bounds();
            [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])]
        });
    let entries = lat
        .bonds()
        .par_iter()
        .map(|&b| {
            let p = lat.positions()[b.i];
            let q = lat.positions()[b.j];
            let mid = [0.5 * (p[0] + q[0]) - center[0], 0.5 * (p[1] + q[1]) - center[1]];
            let length = lat.bond_length(b);
            let length_m = length * d_physical;
            let outcome = if (length - 1.0).abs() <= 1e-12 {
                EpsSolve::Solved(baseline)
            } else {
                try_solve_epsilon_b(params, length_m, kappa_target)?
            };
            Ok(BondPermittivity {
                sites: (lat.ids()[b.i], lat.ids()[b.j]),
                midpoint_radius: mid[0].hypot(mid[1]),
                length,
                length_m,
                outcome,
                overlapping: length_m <= params.width,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PermittivityMap { baseline, center, entries })
}

/// Reference parameter set: silicon cavities at 1.5 um, `eps_a = 11.7`,
/// `w = lambda / 2`, baseline `eps_b = 2.3`, target coupling `1e14` rad/s.
pub mod case_study {
    pub const LAMBDA_M: f64 = 1.5e-6;
    pub const EPS_A: f64 = 11.7;
    pub const EPS_B: f64 = 2.3;
    pub const KAPPA_TARGET: f64 = 1e14;
    pub const W_OVER_LAMBDA: f64 = 0.5;

    pub fn params() -> super::CavityParams {
        super::CavityParams::from_wavelength(LAMBDA_M, EPS_A, W_OVER_LAMBDA).expect("case-study constants are valid")
    }

    pub fn stack() -> super::CavityStack {
        params().with_eps_b(EPS_B).expect("case-study constants are valid")
    }
}
