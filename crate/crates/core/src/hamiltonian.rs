//! Single-excitation tight-binding Hamiltonian and its time evolution.
//!
//! In the one-photon manifold the operator `w sum a_i^+ a_i - k sum_<ij> a_i^+ a_j`
//! is an `N x N` real symmetric matrix over site basis states: `w` on the
//! diagonal, `-k` on every bonded pair. Time evolution `psi' = -i H psi` is
//! carried out with a Chebyshev expansion of `exp(-i H t)` whose order is
//! picked from an a-priori Bessel tail bound.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dispersion::BandParams;
use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::C64;

/// Largest lattice the dense eigendecomposition reference accepts.
pub const DENSE_SITE_CAP: usize = 400;

const PARALLEL_ROWS: usize = 8192;

/// Complex amplitude per site (lattice order) at a given evolution time.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    pub amplitudes: Vec<C64>,
    pub time: f64,
}

impl WaveState {
    pub fn new(amplitudes: Vec<C64>) -> Self {
        WaveState { amplitudes, time: 0.0 }
    }

    /// Basis state `|site>`.
    pub fn localized(n: usize, site: usize) -> Self {
        let mut amplitudes = vec![C64::new(0.0, 0.0); n];
        amplitudes[site] = C64::new(1.0, 0.0);
        WaveState::new(amplitudes)
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Scale to unit norm; fails if the norm is zero or not finite.
    pub fn normalized(mut self) -> Result<Self> {
        let n = self.norm();
        if !(n > 1e-300 && n.is_finite()) {
            return Err(Error::NormUnderflow(n));
        }
        let inv = 1.0 / n;
        for a in self.amplitudes.iter_mut() {
            *a *= inv;
        }
        Ok(self)
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn inner(&self, other: &WaveState) -> C64 {
        self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| a.conj() * b).sum()
    }

    /// Largest per-site modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &WaveState) -> f64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Sparse symmetric operator in CSR form with the diagonal kept apart.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianOp {
    diagonal: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

pub fn build_hamiltonian(lat: &Lattice, p: &BandParams) -> Result<HamiltonianOp> {
    if lat.is_empty() {
        return Err(Error::EmptyLattice);
    }
    let n = lat.len();
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
    for b in lat.bonds() {
        rows[b.i].push(b.j);
        rows[b.j].push(b.i);
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(2 * lat.bonds().len());
    row_ptr.push(0);
    for row in rows.iter_mut() {
        row.sort_unstable();
        cols.extend_from_slice(row);
        row_ptr.push(cols.len());
    }
    let vals = vec![-p.kappa; cols.len()];
    Ok(HamiltonianOp { diagonal: vec![p.omega; n], row_ptr, cols, vals })
}

impl HamiltonianOp {
    pub fn dimension(&self) -> usize {
        self.diagonal.len()
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    /// Off-diagonal entries `(row, col, value)` in row-major order; each bond
    /// appears twice.
    pub fn offdiagonal(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dimension()).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.cols[k], self.vals[k]))
        })
    }

    fn row_value(&self, r: usize, x: &[C64]) -> C64 {
        let mut acc = x[r] * self.diagonal[r];
        for k in self.row_ptr[r]..self.row_ptr[r + 1] {
            acc += x[self.cols[k]] * self.vals[k];
        }
        acc
    }

    /// `out = H x`.
    pub fn apply_into(&self, x: &[C64], out: &mut [C64]) -> Result<()> {
        let n = self.dimension();
        if x.len() != n || out.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: x.len().min(out.len()) });
        }
        if n >= PARALLEL_ROWS {
            out.par_iter_mut().enumerate().for_each(|(r, o)| *o = self.row_value(r, x));
        } else {
            for (r, o) in out.iter_mut().enumerate() {
                *o = self.row_value(r, x);
            }
        }
        Ok(())
    }

    pub fn apply(&self, psi: &WaveState) -> Result<WaveState> {
        let mut out = vec![C64::new(0.0, 0.0); psi.len()];
        self.apply_into(&psi.amplitudes, &mut out)?;
        Ok(WaveState { amplitudes: out, time: psi.time })
    }

    /// `<psi|H|psi>`.
    pub fn expectation(&self, psi: &WaveState) -> Result<f64> {
        Ok(psi.inner(&self.apply(psi)?).re)
    }

    /// Gershgorin interval; every eigenvalue lies inside it.
    pub fn spectral_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for r in 0..self.dimension() {
            let radius: f64 = self.vals[self.row_ptr[r]..self.row_ptr[r + 1]].iter().map(|v| v.abs()).sum();
            lo = lo.min(self.diagonal[r] - radius);
            hi = hi.max(self.diagonal[r] + radius);
        }
        (lo, hi)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dimension();
        let mut m = DMatrix::zeros(n, n);
        for (r, d) in self.diagonal.iter().enumerate() {
            m[(r, r)] = *d;
        }
        for (r, c, v) in self.offdiagonal() {
            m[(r, c)] += v;
        }
        m
    }

    /// One fused Chebyshev step on the rescaled operator `S = (H - shift)/scale`:
    /// `prev <- 2 S cur - prev`, then `acc += coeff * prev`.
    fn chebyshev_step(&self, shift: f64, scale: f64, cur: &[C64], prev: &mut [C64], acc: &mut [C64], coeff: C64) {
        let two_over = 2.0 / scale;
        let kernel = |r: usize, p: &mut C64, a: &mut C64| {
            let hx = self.row_value(r, cur) - cur[r] * shift;
            let next = hx * two_over - *p;
            *p = next;
            *a += coeff * next;
        };
        if self.dimension() >= PARALLEL_ROWS {
            prev.par_iter_mut()
                .zip(acc.par_iter_mut())
                .enumerate()
                .for_each(|(r, (p, a))| kernel(r, p, a));
        } else {
            for (r, (p, a)) in prev.iter_mut().zip(acc.iter_mut()).enumerate() {
                kernel(r, p, a);
            }
        }
    }
}

/// Accuracy and work limits for [`evolve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagatorConfig {
    /// Bound on the 2-norm truncation error of a single substep.
    pub step_tolerance: f64,
    /// Largest Chebyshev order allowed in one substep.
    pub max_order: usize,
    /// Largest rescaled time `(Emax - Emin)/2 * dt` per substep.
    pub max_substep_argument: f64,
}

impl Default for PropagatorConfig {
    fn default() -> Self {
        PropagatorConfig { step_tolerance: 1e-12, max_order: 4096, max_substep_argument: 40.0 }
    }
}

/// Smallest order whose Bessel tail bound meets `tol`.
fn chebyshev_order(x: f64, tol: f64, cap: usize) -> Result<usize> {
    let mut order = 1usize;
    while 2.0 * crate::special::bessel_tail_bound(order, x) > tol {
        order += 1;
        if order > cap {
            // Keep counting far enough to report what would be needed.
            let mut need = order;
            while 2.0 * crate::special::bessel_tail_bound(need, x) > tol && need < 64 * cap + 1024 {
                need += 1;
            }
            return Err(Error::AccuracyUnreachable { required: need, cap });
        }
    }
    Ok(order)
}

/// Chebyshev propagator over a fixed operator.
pub struct Propagator<'a> {
    h: &'a HamiltonianOp,
    shift: f64,
    scale: f64,
    config: PropagatorConfig,
    buf_prev: Vec<C64>,
    buf_cur: Vec<C64>,
}

impl<'a> Propagator<'a> {
    pub fn new(h: &'a HamiltonianOp, config: PropagatorConfig) -> Result<Self> {
        if !(config.step_tolerance > 0.0) || config.max_order == 0 || !(config.max_substep_argument > 0.0) {
            return Err(Error::invalid("propagator", "tolerance, order cap and substep argument must be positive"));
        }
        let (lo, hi) = h.spectral_bounds();
        let n = h.dimension();
        Ok(Propagator {
            h,
            shift: 0.5 * (lo + hi),
            scale: 0.5 * (hi - lo),
            config,
            buf_prev: vec![C64::new(0.0, 0.0); n],
            buf_cur: vec![C64::new(0.0, 0.0); n],
        })
    }

    /// Advance `psi` in place by `dt >= 0`.
    pub fn advance(&mut self, psi: &mut WaveState, dt: f64) -> Result<()> {
        let n = self.h.dimension();
        if psi.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: psi.len() });
        }
        if !(dt >= 0.0) || !dt.is_finite() {
            return Err(Error::invalid("dt", format!("time step must be finite and non-negative, got {dt}")));
        }
        if dt == 0.0 {
            return Ok(());
        }
        let substeps = if self.scale > 0.0 {
            ((self.scale * dt) / self.config.max_substep_argument).ceil().max(1.0) as usize
        } else {
            1
        };
        let tau = dt / substeps as f64;
        for _ in 0..substeps {
            self.substep(&mut psi.amplitudes, tau)?;
        }
        psi.time += dt;
        Ok(())
    }

    fn substep(&mut self, amps: &mut [C64], tau: f64) -> Result<()> {
        let phase = C64::from_polar(1.0, -self.shift * tau);
        if self.scale == 0.0 {
            for a in amps.iter_mut() {
                *a *= phase;
            }
            return Ok(());
        }
        let x = self.scale * tau;
        let order = chebyshev_order(x, self.config.step_tolerance, self.config.max_order)?;
        let bessel = crate::special::bessel_j_sequence(order, x);
        // (-i)^k cycles through 1, -i, -1, i.
        let minus_i_pow = [C64::new(1.0, 0.0), C64::new(0.0, -1.0), C64::new(-1.0, 0.0), C64::new(0.0, 1.0)];
        let coeff = |k: usize| {
            let w = if k == 0 { 1.0 } else { 2.0 };
            minus_i_pow[k % 4] * (w * bessel[k]) * phase
        };

        // T_0 psi = psi, T_1 psi = S psi.
        self.buf_prev.copy_from_slice(amps);
        self.h.apply_into(&self.buf_prev, &mut self.buf_cur)?;
        let (shift, scale) = (self.shift, self.scale);
        let c0 = coeff(0);
        let c1 = coeff(1);
        for (r, a) in amps.iter_mut().enumerate() {
            let t1 = (self.buf_cur[r] - self.buf_prev[r] * shift) / scale;
            self.buf_cur[r] = t1;
            *a = c0 * self.buf_prev[r] + c1 * t1;
        }
        for k in 2..=order {
            let ck = coeff(k);
            self.h.chebyshev_step(shift, scale, &self.buf_cur, &mut self.buf_prev, amps, ck);
            std::mem::swap(&mut self.buf_cur, &mut self.buf_prev);
        }
        Ok(())
    }
}

/// Evolve `psi0` to `t_final`, emitting the initial state, a state every
/// `dump_interval`, and always the state at `t_final`.
pub fn evolve(h: &HamiltonianOp, psi0: &WaveState, t_final: f64, dump_interval: f64) -> Result<Vec<WaveState>> {
    let mut out = Vec::new();
    evolve_with(h, psi0, t_final, dump_interval, PropagatorConfig::default(), |s| {
        out.push(s.clone());
        Ok(())
    })?;
    Ok(out)
}

/// Dump instants `0, dt, 2 dt, ..., t_final`.
pub fn dump_times(t_final: f64, dump_interval: f64) -> Result<Vec<f64>> {
    if !(t_final >= 0.0) || !t_final.is_finite() {
        return Err(Error::invalid("evolve.t_final", format!("must be finite and non-negative, got {t_final}")));
    }
    if !(dump_interval > 0.0) || !dump_interval.is_finite() {
        return Err(Error::invalid("evolve.dump_interval", format!("must be positive, got {dump_interval}")));
    }
    let mut times = vec![0.0];
    let mut k = 1u64;
    loop {
        let t = k as f64 * dump_interval;
        // Snap to t_final when within rounding of it.
        if t >= t_final * (1.0 - 1e-12) {
            break;
        }
        times.push(t);
        k += 1;
    }
    if t_final > 0.0 {
        times.push(t_final);
    }
    Ok(times)
}

/// Streaming form of [`evolve`]: every emitted state is handed to `sink`.
pub fn evolve_with<F>(
    h: &HamiltonianOp,
    psi0: &WaveState,
    t_final: f64,
    dump_interval: f64,
    config: PropagatorConfig,
    mut sink: F,
) -> Result<()>
where
    F: FnMut(&WaveState) -> Result<()>,
{
    if psi0.len() != h.dimension() {
        return Err(Error::DimensionMismatch { expected: h.dimension(), actual: psi0.len() });
    }
    let times = dump_times(t_final, dump_interval)?;
    let mut prop = Propagator::new(h, config)?;
    let mut psi = psi0.clone();
    let t0 = psi.time;
    sink(&psi)?;
    let mut last = 0.0;
    for &t in &times[1..] {
        prop.advance(&mut psi, t - last)?;
        psi.time = t0 + t;
        last = t;
        sink(&psi)?;
    }
    Ok(())
}

/// `exp(-i H t) psi0` by dense eigendecomposition; test oracle for small lattices.
pub fn dense_expm_reference(h: &HamiltonianOp, psi0: &WaveState, t: f64) -> Result<WaveState> {
    let n = h.dimension();
    if n > DENSE_SITE_CAP {
        return Err(Error::DenseCapExceeded { cap: DENSE_SITE_CAP, actual: n });
    }
    if psi0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: psi0.len() });
    }
    let eig = h.to_dense().symmetric_eigen();
    let v = &eig.eigenvectors;
    let re = DVector::from_iterator(n, psi0.amplitudes.iter().map(|a| a.re));
    let im = DVector::from_iterator(n, psi0.amplitudes.iter().map(|a| a.im));
    let pre = v.tr_mul(&re);
    let pim = v.tr_mul(&im);
    let mut rot_re = DVector::zeros(n);
    let mut rot_im = DVector::zeros(n);
    for k in 0..n {
        let c = C64::new(pre[k], pim[k]) * C64::from_polar(1.0, -eig.eigenvalues[k] * t);
        rot_re[k] = c.re;
        rot_im[k] = c.im;
    }
    let out_re = v * rot_re;
    let out_im = v * rot_im;
    Ok(WaveState {
        amplitudes: (0..n).map(|k| C64::new(out_re[k], out_im[k])).collect(),
        time: psi0.time + t,
    })
}

/// Sorted eigenvalues of the dense matrix (small lattices only).
pub fn dense_eigenvalues(h: &HamiltonianOp) -> Result<Vec<f64>> {
    let n = h.dimension();
    if n > DENSE_SITE_CAP {
        return Err(Error::DenseCapExceeded { cap: DENSE_SITE_CAP, actual: n });
    }
    let mut ev: Vec<f64> = h.to_dense().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(ev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{apply_cloak_transform, build_square_lattice, grid_center, Bond, CloakSpec, Lattice, SiteId};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn params(omega: f64, kappa: f64) -> BandParams {
        BandParams::new(omega, kappa, 1.0).unwrap()
    }

    fn random_state(n: usize, seed: u64) -> WaveState {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        WaveState::new((0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect())
            .normalized()
            .unwrap()
    }

    fn pair() -> Lattice {
        Lattice::from_parts(vec![SiteId(0), SiteId(1)], vec![[0.0, 0.0], [1.0, 0.0]], vec![Bond::new(0, 1)], (2, 1))
            .unwrap()
    }

    #[test]
    fn single_site_matrix() {
        let l = build_square_lattice(1, 1).unwrap();
        let h = build_hamiltonian(&l, &params(0.7, 1.0)).unwrap();
        assert_eq!(h.to_dense(), DMatrix::from_element(1, 1, 0.7));
        assert_eq!(h.spectral_bounds(), (0.7, 0.7));
    }

    #[test]
    fn two_site_eigenvalues() {
        let h = build_hamiltonian(&pair(), &params(0.0, 1.0)).unwrap();
        let ev = dense_eigenvalues(&h).unwrap();
        assert!((ev[0] + 1.0).abs() < 1e-14 && (ev[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn open_spectrum_inside_band() {
        let l = build_square_lattice(10, 10).unwrap();
        let p = params(0.3, 1.0);
        let h = build_hamiltonian(&l, &p).unwrap();
        let ev = dense_eigenvalues(&h).unwrap();
        assert!(ev[0] > 0.3 - 4.0 && *ev.last().unwrap() < 0.3 + 4.0);
        let (lo, hi) = h.spectral_bounds();
        assert!(lo <= ev[0] && hi >= *ev.last().unwrap());
        assert_eq!((lo, hi), (0.3 - 4.0, 0.3 + 4.0));
    }

    #[test]
    fn pattern_matches_bonds() {
        let l = build_square_lattice(4, 3).unwrap();
        let h = build_hamiltonian(&l, &params(0.0, 2.5)).unwrap();
        let mut entries: Vec<(usize, usize)> = h.offdiagonal().map(|(r, c, v)| {
            assert_eq!(v, -2.5);
            (r.min(c), r.max(c))
        }).collect();
        entries.sort();
        entries.dedup();
        let mut bonds: Vec<(usize, usize)> = l.bonds().iter().map(|b| (b.i, b.j)).collect();
        bonds.sort();
        assert_eq!(entries, bonds);
        let dense = h.to_dense();
        assert_eq!(dense.transpose(), dense);
    }

    #[test]
    fn cloak_leaves_operator_unchanged() {
        let l = build_square_lattice(30, 30).unwrap();
        let spec = CloakSpec::new(5.0, 10.0, grid_center(30, 30)).unwrap();
        let t = apply_cloak_transform(&l, &spec).unwrap();
        let p = params(0.0, 1.0);
        assert_eq!(build_hamiltonian(&l, &p).unwrap(), build_hamiltonian(&t, &p).unwrap());
    }

    #[test]
    fn apply_examples() {
        let l = Lattice::from_parts(vec![SiteId(0), SiteId(1), SiteId(2)], vec![[0.0; 2]; 3], vec![], (3, 1)).unwrap();
        let h = build_hamiltonian(&l, &params(1.5, 1.0)).unwrap();
        let psi = random_state(3, 1);
        let out = h.apply(&psi).unwrap();
        for (a, b) in out.amplitudes.iter().zip(&psi.amplitudes) {
            assert!((a - b * 1.5).norm() < 1e-15);
        }

        let l = build_square_lattice(10, 10).unwrap();
        let h = build_hamiltonian(&l, &params(0.2, 1.0)).unwrap();
        let psi = random_state(100, 2);
        let sparse = h.apply(&psi).unwrap();
        let dense = h.to_dense();
        for r in 0..100 {
            let mut acc = C64::new(0.0, 0.0);
            for c in 0..100 {
                acc += psi.amplitudes[c] * dense[(r, c)];
            }
            assert!((acc - sparse.amplitudes[r]).norm() < 1e-13);
        }
        assert!(matches!(h.apply(&random_state(99, 3)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn hermiticity() {
        let l = build_square_lattice(12, 9).unwrap();
        let h = build_hamiltonian(&l, &params(0.4, 1.3)).unwrap();
        for seed in 0..10 {
            let phi = random_state(l.len(), seed);
            let psi = random_state(l.len(), seed + 100);
            let lhs = phi.inner(&h.apply(&psi).unwrap());
            let rhs = h.apply(&phi).unwrap().inner(&psi);
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_time_is_identity() {
        let l = build_square_lattice(5, 5).unwrap();
        let h = build_hamiltonian(&l, &params(0.0, 1.0)).unwrap();
        let psi = random_state(25, 4);
        let out = evolve(&h, &psi, 0.0, 1.0).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0], psi);
        assert!(dense_expm_reference(&h, &psi, 0.0).unwrap().max_abs_diff(&psi) < 1e-13);
    }

    #[test]
    fn scalar_phase() {
        let l = build_square_lattice(1, 1).unwrap();
        let h = build_hamiltonian(&l, &params(0.8, 1.0)).unwrap();
        let out = evolve(&h, &WaveState::localized(1, 0), 3.7, 1.0).unwrap();
        let last = out.last().unwrap();
        assert_eq!(last.time, 3.7);
        assert!((last.amplitudes[0] - C64::from_polar(1.0, -0.8 * 3.7)).norm() < 1e-14);
    }

    #[test]
    fn diagonal_dense_reference_is_phases() {
        let l = Lattice::from_parts(vec![SiteId(0), SiteId(1)], vec![[0.0; 2]; 2], vec![], (2, 1)).unwrap();
        let h = build_hamiltonian(&l, &params(-0.5, 1.0)).unwrap();
        let psi = random_state(2, 7);
        let out = dense_expm_reference(&h, &psi, 2.0).unwrap();
        for (o, p) in out.amplitudes.iter().zip(&psi.amplitudes) {
            assert!((o - p * C64::from_polar(1.0, 1.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn rabi_oscillation() {
        let h = build_hamiltonian(&pair(), &params(0.0, 1.0)).unwrap();
        let out = evolve(&h, &WaveState::localized(2, 0), 10.0, 0.25).unwrap();
        assert_eq!(out.len(), 41);
        for s in &out {
            let p2 = s.amplitudes[1].norm_sqr();
            assert!((p2 - s.time.sin().powi(2)).abs() < 1e-10, "t = {}", s.time);
        }
    }

    #[test]
    fn matches_dense_reference() {
        let l = build_square_lattice(10, 10).unwrap();
        let h = build_hamiltonian(&l, &params(0.0, 1.0)).unwrap();
        let psi = random_state(100, 11);
        let out = evolve(&h, &psi, 20.0, 2.5).unwrap();
        for s in &out {
            let reference = dense_expm_reference(&h, &psi, s.time).unwrap();
            assert!(s.max_abs_diff(&reference) < 1e-8);
        }
    }

    #[test]
    fn dump_time_grid() {
        assert_eq!(dump_times(1.0, 0.25).unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(dump_times(1.0, 0.3).unwrap().last(), Some(&1.0));
        assert_eq!(dump_times(1.0, 0.3).unwrap().len(), 5);
        assert_eq!(dump_times(0.5, 2.0).unwrap(), vec![0.0, 0.5]);
        assert!(dump_times(1.0, 0.0).is_err());
        assert!(dump_times(-1.0, 0.1).is_err());
    }

    #[test]
    fn order_cap_is_enforced() {
        let l = build_square_lattice(4, 4).unwrap();
        let h = build_hamiltonian(&l, &params(0.0, 1.0)).unwrap();
        let cfg = PropagatorConfig { step_tolerance: 1e-12, max_order: 5, max_substep_argument: 40.0 };
        let r = evolve_with(&h, &WaveState::localized(16, 0), 10.0, 10.0, cfg, |_| Ok(()));
        assert!(matches!(r, Err(Error::AccuracyUnreachable { cap: 5, .. })));
    }

    #[test]
    fn dense_cap() {
        let l = build_square_lattice(21, 20).unwrap();
        let h = build_hamiltonian(&l, &params(0.0, 1.0)).unwrap();
        assert!(matches!(
            dense_expm_reference(&h, &WaveState::localized(420, 0), 1.0),
            Err(Error::DenseCapExceeded { .. })
        ));
    }

    #[test]
    fn energy_is_conserved() {
        let l = build_square_lattice(20, 20).unwrap();
        let h = build_hamiltonian(&l, &params(0.1, 1.0)).unwrap();
        let psi = random_state(400, 5);
        let e0 = h.expectation(&psi).unwrap();
        let out = evolve(&h, &psi, 100.0, 10.0).unwrap();
        for s in &out {
            assert!((h.expectation(s).unwrap() - e0).abs() < 1e-7);
            assert!((s.norm() - 1.0).abs() < 1e-8);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn evolve_matches_oracle_on_small_lattices(nx in 1usize..9, ny in 1usize..9, t in 0.0f64..15.0, omega in -1.0f64..1.0, seed in 0u64..1000) {
            let l = build_square_lattice(nx, ny).unwrap();
            let h = build_hamiltonian(&l, &params(omega, 1.0)).unwrap();
            let psi = random_state(l.len(), seed);
            let out = evolve(&h, &psi, t, t.max(1e-3)).unwrap();
            let last = out.last().unwrap();
            let reference = dense_expm_reference(&h, &psi, t).unwrap();
            prop_assert!(last.max_abs_diff(&reference) < 1e-8);
            prop_assert!((last.norm() - 1.0).abs() < 1e-8);
        }
    }
}
