//! Band structure of the uniform square lattice and the two source states.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hamiltonian::WaveState;
use crate::lattice::Lattice;
use crate::C64;

/// On-site frequency `omega`, hopping `kappa` and spacing `d` (hbar = 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandParams {
    pub omega: f64,
    pub kappa: f64,
    pub spacing: f64,
}

impl BandParams {
    pub fn new(omega: f64, kappa: f64, spacing: f64) -> Result<Self> {
        if !omega.is_finite() {
            return Err(Error::invalid("physics.omega", "must be finite"));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::invalid("physics.kappa", format!("must be positive, got {kappa}")));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::invalid("spacing", format!("must be positive, got {spacing}")));
        }
        Ok(BandParams { omega, kappa, spacing })
    }

    /// Simulation units: `omega = 0`, `kappa = d = 1`.
    pub fn unit() -> Self {
        BandParams { omega: 0.0, kappa: 1.0, spacing: 1.0 }
    }

    /// Open band `(omega - 4 kappa, omega + 4 kappa)`.
    pub fn band(&self) -> (f64, f64) {
        (self.omega - 4.0 * self.kappa, self.omega + 4.0 * self.kappa)
    }
}

/// Crystal momentum folded into the first Brillouin zone `(-pi/d, pi/d]^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveVector {
    pub kx: f64,
    pub ky: f64,
}

fn fold(k: f64, spacing: f64) -> f64 {
    let zone = PI / spacing;
    if k > -zone && k <= zone {
        return k;
    }
    zone - (zone - k).rem_euclid(2.0 * zone)
}

impl WaveVector {
    pub fn new(kx: f64, ky: f64, spacing: f64) -> Self {
        WaveVector { kx: fold(kx, spacing), ky: fold(ky, spacing) }
    }
}

/// `E = omega - 2 kappa [cos(kx d) + cos(ky d)]`.
pub fn band_energy(k: WaveVector, p: &BandParams) -> f64 {
    p.omega - 2.0 * p.kappa * ((k.kx * p.spacing).cos() + (k.ky * p.spacing).cos())
}

/// `grad_k E = 2 kappa d [sin(kx d), sin(ky d)]`.
pub fn group_velocity(k: WaveVector, p: &BandParams) -> [f64; 2] {
    let s = 2.0 * p.kappa * p.spacing;
    [s * (k.kx * p.spacing).sin(), s * (k.ky * p.spacing).sin()]
}

/// One contour point along the ray at polar angle `theta` about the contour
/// center.
///
/// With `u = (cos theta, sin theta)`, `g(s) = cos(s ux) + cos(s uy)` decreases
/// strictly from 2 at `s = 0` to 0 on the diamond `|kx| + |ky| = pi`, so the
/// crossing with `|target|` is unique and bisection is safe. Contours above the
/// band center are the reflection `k -> (pi, pi) - k` of the one below.
fn contour_point(target: f64, theta: f64, spacing: f64) -> WaveVector {
    let (uy, ux) = theta.sin_cos();
    let goal = target.abs();
    let g = |s: f64| (s * ux).cos() + (s * uy).cos();
    let mut lo = 0.0;
    let mut hi = PI / (ux.abs() + uy.abs());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-15 {
            break;
        }
        if g(mid) > goal {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = 0.5 * (lo + hi);
    let (kx, ky) = if target >= 0.0 { (s * ux, s * uy) } else { (PI - s * ux, PI - s * uy) };
    WaveVector::new(kx / spacing, ky / spacing, spacing)
}

fn contour_target(e0: f64, p: &BandParams) -> Result<f64> {
    let (lo, hi) = p.band();
    if !(e0 > lo && e0 < hi) {
        return Err(Error::EnergyOutsideBand { energy: e0, lower: lo, upper: hi });
    }
    Ok((p.omega - e0) / (2.0 * p.kappa))
}

/// `n` points of the isofrequency contour `E(k) = e0`, at equally spaced
/// polar angles about `(0, 0)` for `e0 <= omega` and about `(pi/d, pi/d)`
/// otherwise.
pub fn isofrequency_contour(e0: f64, p: &BandParams, n: usize) -> Result<Vec<WaveVector>> {
    if n < 3 {
        return Err(Error::invalid("n", format!("need at least 3 contour samples, got {n}")));
    }
    let target = contour_target(e0, p)?;
    Ok((0..n)
        .into_par_iter()
        .map(|m| contour_point(target, 2.0 * PI * m as f64 / n as f64, p.spacing))
        .collect())
}

/// Equal-weight superposition of `n_modes` contour modes at `e0`, localized by
/// a Gaussian envelope of width `sigma` about `center`. Built on the reference
/// (untransformed) site positions.
pub fn make_point_source(
    lat: &Lattice,
    p: &BandParams,
    e0: f64,
    center: [f64; 2],
    sigma: f64,
    n_modes: usize,
) -> Result<WaveState> {
    if !(sigma > 0.0) {
        return Err(Error::invalid("source.sigma", format!("must be positive, got {sigma}")));
    }
    if n_modes == 0 {
        return Err(Error::invalid("source.n_modes", "need at least one mode"));
    }
    let target = contour_target(e0, p)?;
    let modes: Vec<WaveVector> = (0..n_modes)
        .map(|m| contour_point(target, 2.0 * PI * m as f64 / n_modes as f64, p.spacing))
        .collect();
    let d = p.spacing;
    let amplitudes = lat
        .reference_positions()
        .par_iter()
        .map(|r| {
            let dx = (r[0] - center[0]) * d;
            let dy = (r[1] - center[1]) * d;
            let envelope = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma * d * d)).exp();
            let sum: C64 = modes.iter().map(|k| C64::from_polar(1.0, k.kx * dx + k.ky * dy)).sum();
            sum * envelope
        })
        .collect();
    WaveState::new(amplitudes).normalized()
}

/// Gaussian pulse in a single Bloch mode:
/// `exp(i k.r) exp(-|r - center|^2 / (2 sigma^2))` on the reference positions.
/// `k` is in units of `1/d`. An infinite `sigma` gives the bare plane wave and
/// skips the support check.
pub fn make_gaussian_packet(lat: &Lattice, k: WaveVector, center: [f64; 2], sigma: f64) -> Result<WaveState> {
    if !(sigma > 0.0) {
        return Err(Error::invalid("source.sigma", format!("must be positive, got {sigma}")));
    }
    if sigma.is_finite() {
        let (lo, hi) = lat.reference_bounds();
        let reach = 3.0 * sigma;
        let inside = (0..2).all(|a| center[a] - reach >= lo[a] && center[a] + reach <= hi[a]);
        if !inside {
            return Err(Error::PacketOutsideLattice { x: center[0], y: center[1], support: reach });
        }
    }
    let amplitudes = lat
        .reference_positions()
        .par_iter()
        .map(|r| {
            let dx = r[0] - center[0];
            let dy = r[1] - center[1];
            let envelope = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            C64::from_polar(envelope, k.kx * r[0] + k.ky * r[1])
        })
        .collect();
    WaveState::new(amplitudes).normalized()
}
