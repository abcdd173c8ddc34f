//! Cloaking scenarios, field dumps and the metrics that compare them.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use log::warn;

use crate::dispersion::{make_gaussian_packet, make_point_source, BandParams, WaveVector};
use crate::error::{Error, Result};
use crate::hamiltonian::{build_hamiltonian, evolve_with, PropagatorConfig, WaveState};
use crate::lattice::{apply_cloak_transform, build_square_lattice, grid_center, punch_hole, CloakSpec, Lattice, SiteId};
use crate::C64;

/// What is done to the square lattice before propagation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Geometry {
    Uniform,
    /// Cloak with hidden radius `inner` and outer radius `outer`.
    Cloak { inner: f64, outer: f64 },
    /// Bare hole: sites within `radius` removed, nothing relocated.
    Hole { radius: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSpec {
    pub nx: usize,
    pub ny: usize,
    /// Cloak or hole center; the grid center when unset.
    pub center: Option<[f64; 2]>,
    pub geometry: Geometry,
}

impl LatticeSpec {
    pub fn center(&self) -> [f64; 2] {
        self.center.unwrap_or_else(|| grid_center(self.nx, self.ny))
    }

    /// Radius outside of which cloak and uniform geometries coincide.
    pub fn outer_radius(&self) -> Option<f64> {
        match self.geometry {
            Geometry::Uniform => None,
            Geometry::Cloak { outer, .. } => Some(outer),
            Geometry::Hole { radius } => Some(radius),
        }
    }

    pub fn build(&self) -> Result<Lattice> {
        let lat = build_square_lattice(self.nx, self.ny)?;
        match self.geometry {
            Geometry::Uniform => Ok(lat),
            Geometry::Cloak { inner, outer } => {
                let spec = CloakSpec::new(inner, outer, self.center())?;
                apply_cloak_transform(&lat, &spec)
            }
            Geometry::Hole { radius } => punch_hole(&lat, radius, self.center()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    /// Superposition of contour modes at `energy` under a Gaussian envelope.
    PointSource { energy: f64, sigma: f64, n_modes: usize, center: [f64; 2] },
    /// Gaussian pulse in the single mode `k` (units of `1/d`).
    GaussianPacket { k: [f64; 2], sigma: f64, center: [f64; 2] },
}

impl SourceSpec {
    pub fn center(&self) -> [f64; 2] {
        match self {
            SourceSpec::PointSource { center, .. } | SourceSpec::GaussianPacket { center, .. } => *center,
        }
    }

    pub fn sigma(&self) -> f64 {
        match self {
            SourceSpec::PointSource { sigma, .. } | SourceSpec::GaussianPacket { sigma, .. } => *sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolveSpec {
    /// Final time; the boundary limit when unset.
    pub t_final: Option<f64>,
    pub dump_interval: f64,
    /// Allow `t_final` past the boundary limit (logged as a warning).
    pub override_boundary: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub band: BandParams,
    pub lattice: LatticeSpec,
    pub source: SourceSpec,
    pub evolve: EvolveSpec,
    pub propagator: PropagatorConfig,
    /// Carried into output metadata; the scenario pipeline itself is deterministic.
    pub seed: u64,
}

/// Largest group speed the wavefront bound assumes, `4 kappa d`.
pub fn max_front_speed(p: &BandParams) -> f64 {
    4.0 * p.kappa * p.spacing
}

impl Scenario {
    /// Quasi-point source beside an `a = 5, b = 10` cloak on a 60 x 60
    /// lattice, at the nearly circular contour `E = omega - 3.5 kappa`.
    pub fn point_source_demo() -> Self {
        let (nx, ny) = (60, 60);
        let (inner, outer) = (5.0, 10.0);
        let sigma = 3.0;
        let c = grid_center(nx, ny);
        let band = BandParams::unit();
        Scenario {
            band,
            lattice: LatticeSpec { nx, ny, center: None, geometry: Geometry::Cloak { inner, outer } },
            source: SourceSpec::PointSource {
                energy: band.omega - 3.5 * band.kappa,
                sigma,
                n_modes: 64,
                center: [c[0] - outer - 3.0 * sigma, c[1]],
            },
            evolve: EvolveSpec { t_final: Some(20.0), dump_interval: 0.5, override_boundary: true },
            propagator: PropagatorConfig::default(),
            seed: 0,
        }
    }

    /// Normally incident Gaussian beam at `k = (pi/2d, 0)` on the square
    /// band-center contour. Reduced scale is `a = 12, b = 24` on 120 x 120;
    /// paper scale is `a = 50, b = 100` on 240 x 240.
    pub fn beam_demo(paper_scale: bool) -> Self {
        let (n, inner, outer, sigma, t_final, dump) =
            if paper_scale { (240, 50.0, 100.0, 3.0, 120.0, 1.2) } else { (120, 12.0, 24.0, 5.0, 40.0, 0.4) };
        Self::beam(n, inner, outer, sigma, t_final, dump)
    }

    /// Beam scenario on the 60 x 60, `a = 5, b = 10` lattice.
    pub fn small_beam_demo() -> Self {
        Self::beam(60, 5.0, 10.0, 3.0, 20.0, 0.5)
    }

    fn beam(n: usize, inner: f64, outer: f64, sigma: f64, t_final: f64, dump_interval: f64) -> Self {
        let c = grid_center(n, n);
        Scenario {
            band: BandParams::unit(),
            lattice: LatticeSpec { nx: n, ny: n, center: None, geometry: Geometry::Cloak { inner, outer } },
            source: SourceSpec::GaussianPacket {
                k: [FRAC_PI_2, 0.0],
                sigma,
                center: [c[0] - outer - 3.0 * sigma, c[1]],
            },
            evolve: EvolveSpec { t_final: Some(t_final), dump_interval, override_boundary: true },
            propagator: PropagatorConfig::default(),
            seed: 0,
        }
    }

    /// Same scenario with a different geometry.
    pub fn with_geometry(&self, geometry: Geometry) -> Self {
        let mut s = self.clone();
        s.lattice.geometry = geometry;
        s
    }

    /// The uniform, cloaked and bare-hole variants. The hole has the cloak's
    /// inner radius. Fails if the scenario carries no cloak.
    pub fn variants(&self) -> Result<(Scenario, Scenario, Scenario)> {
        let Geometry::Cloak { inner, .. } = self.lattice.geometry else {
            return Err(Error::invalid("lattice.cloak", "comparison needs a cloak geometry"));
        };
        Ok((
            self.with_geometry(Geometry::Uniform),
            self.clone(),
            self.with_geometry(Geometry::Hole { radius: inner }),
        ))
    }

    pub fn initial_state(&self, lat: &Lattice) -> Result<WaveState> {
        match &self.source {
            SourceSpec::PointSource { energy, sigma, n_modes, center } => {
                make_point_source(lat, &self.band, *energy, *center, *sigma, *n_modes)
            }
            SourceSpec::GaussianPacket { k, sigma, center } => {
                make_gaussian_packet(lat, WaveVector::new(k[0], k[1], self.band.spacing), *center, *sigma)
            }
        }
    }

    /// Latest time at which a front leaving the source's `3 sigma` support at
    /// `4 kappa d` is still inside the lattice.
    pub fn boundary_time_limit(&self) -> f64 {
        let c = self.source.center();
        let (nx, ny) = (self.lattice.nx as f64, self.lattice.ny as f64);
        let gap = [c[0], nx - 1.0 - c[0], c[1], ny - 1.0 - c[1]]
            .into_iter()
            .fold(f64::INFINITY, f64::min)
            - 3.0 * self.source.sigma();
        (gap * self.band.spacing).max(0.0) / max_front_speed(&self.band)
    }

    /// Resolved final time: checks the boundary rule.
    pub fn t_final(&self) -> Result<(f64, bool)> {
        let limit = self.boundary_time_limit();
        match self.evolve.t_final {
            None => Ok((limit, false)),
            Some(t) if t <= limit => Ok((t, false)),
            Some(t) if self.evolve.override_boundary => Ok((t, true)),
            Some(t) => Err(Error::invalid(
                "evolve.t_final",
                format!("{t} exceeds the boundary limit {limit:.4}; set evolve.override_boundary to run anyway"),
            )),
        }
    }
}

/// Snapshot of the field on a lattice. Site ids and positions are shared
/// between the dumps of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDump {
    pub time: f64,
    pub ids: Arc<[SiteId]>,
    pub positions: Arc<[[f64; 2]]>,
    /// `|psi|^2` per site. Sums to 1 for a single-time dump.
    pub prob: Vec<f64>,
    pub amplitudes: Option<Vec<C64>>,
}

impl FieldDump {
    pub fn from_state(state: &WaveState, ids: Arc<[SiteId]>, positions: Arc<[[f64; 2]]>) -> Self {
        FieldDump {
            time: state.time,
            ids,
            positions,
            prob: state.probabilities(),
            amplitudes: Some(state.amplitudes.clone()),
        }
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    pub fn total_probability(&self) -> f64 {
        self.prob.iter().sum()
    }

    /// Probability-weighted mean position.
    pub fn centroid(&self) -> [f64; 2] {
        let total = self.total_probability();
        let mut c = [0.0; 2];
        for (p, w) in self.positions.iter().zip(&self.prob) {
            c[0] += p[0] * w;
            c[1] += p[1] * w;
        }
        [c[0] / total, c[1] / total]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub t_final: f64,
    pub boundary_limit: f64,
    pub boundary_overridden: bool,
    pub dumps: usize,
}

/// Run a scenario, handing each dump to `sink` as it is produced.
pub fn run_scenario_with<F>(s: &Scenario, mut sink: F) -> Result<RunSummary>
where
    F: FnMut(FieldDump) -> Result<()>,
{
    let (t_final, overridden) = s.t_final()?;
    let limit = s.boundary_time_limit();
    if overridden {
        warn!("t_final = {t_final} passes the boundary limit {limit:.4}; wavefront reaches the hard walls");
    }
    let lat = s.lattice.build()?;
    let h = build_hamiltonian(&lat, &s.band)?;
    let psi0 = s.initial_state(&lat)?;
    let ids: Arc<[SiteId]> = lat.ids().into();
    let positions: Arc<[[f64; 2]]> = lat.positions().into();
    let mut dumps = 0;
    evolve_with(&h, &psi0, t_final, s.evolve.dump_interval, s.propagator, |state| {
        dumps += 1;
        sink(FieldDump::from_state(state, ids.clone(), positions.clone()))
    })?;
    Ok(RunSummary { t_final, boundary_limit: limit, boundary_overridden: overridden, dumps })
}

pub fn run_scenario(s: &Scenario) -> Result<Vec<FieldDump>> {
    let mut out = Vec::new();
    run_scenario_with(s, |d| {
        out.push(d);
        Ok(())
    })?;
    Ok(out)
}

/// Per-site `sum_t |psi(t)|^2`, not renormalized. The result carries the last
/// dump's time and no amplitudes.
pub fn accumulate_intensity(dumps: &[FieldDump]) -> Result<FieldDump> {
    let first = dumps.first().ok_or_else(|| Error::DumpMismatch("no dumps to accumulate".into()))?;
    let mut prob = vec![0.0; first.len()];
    for d in dumps {
        if !Arc::ptr_eq(&d.ids, &first.ids) && d.ids != first.ids {
            return Err(Error::DumpMismatch(format!("site set differs at t = {}", d.time)));
        }
        for (acc, p) in prob.iter_mut().zip(&d.prob) {
            *acc += p;
        }
    }
    Ok(FieldDump {
        time: dumps.last().map(|d| d.time).unwrap_or(0.0),
        ids: first.ids.clone(),
        positions: first.positions.clone(),
        prob,
        amplitudes: None,
    })
}

fn check_times(test: &[FieldDump], reference: &[FieldDump]) -> Result<()> {
    if test.len() != reference.len() {
        return Err(Error::DumpMismatch(format!("{} test dumps vs {} reference dumps", test.len(), reference.len())));
    }
    if test.is_empty() {
        return Err(Error::DumpMismatch("no dumps".into()));
    }
    for (a, b) in test.iter().zip(reference) {
        if (a.time - b.time).abs() > 1e-12 * b.time.abs().max(1.0) {
            return Err(Error::DumpMismatch(format!("dump times {} and {} differ", a.time, b.time)));
        }
    }
    Ok(())
}

/// Matching of test sites to reference sites by id, restricted to reference
/// sites farther than `radius` from `center`.
fn region_pairs(test: &FieldDump, reference: &FieldDump, center: [f64; 2], radius: f64) -> Vec<(usize, usize)> {
    let index: HashMap<SiteId, usize> = test.ids.iter().enumerate().map(|(k, id)| (*id, k)).collect();
    reference
        .ids
        .iter()
        .enumerate()
        .filter(|(k, _)| {
            let p = reference.positions[*k];
            (p[0] - center[0]).hypot(p[1] - center[1]) > radius
        })
        .filter_map(|(k, id)| index.get(id).map(|&t| (t, k)))
        .collect()
}

/// Largest relative L2 difference of `|psi|^2` outside `radius` over all dump
/// pairs: `max_t ||P_test - P_ref|| / ||P_ref||`.
pub fn cloak_residual(test: &[FieldDump], reference: &[FieldDump], center: [f64; 2], radius: f64) -> Result<f64> {
    check_times(test, reference)?;
    let pairs = region_pairs(&test[0], &reference[0], center, radius);
    if pairs.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let mut worst = 0.0f64;
    for (t, r) in test.iter().zip(reference) {
        let (mut diff, mut norm) = (0.0, 0.0);
        for &(it, ir) in &pairs {
            let d = t.prob[it] - r.prob[ir];
            diff += d * d;
            norm += r.prob[ir] * r.prob[ir];
        }
        let ratio = if diff == 0.0 {
            0.0
        } else if norm == 0.0 {
            f64::INFINITY
        } else {
            (diff / norm).sqrt()
        };
        worst = worst.max(ratio);
    }
    Ok(worst)
}

/// Largest per-site amplitude difference, matched by site id, over all dumps.
pub fn max_state_difference(test: &[FieldDump], reference: &[FieldDump]) -> Result<f64> {
    check_times(test, reference)?;
    let pairs = region_pairs(&test[0], &reference[0], [0.0, 0.0], f64::NEG_INFINITY);
    if pairs.len() != reference[0].len() || pairs.len() != test[0].len() {
        return Err(Error::DumpMismatch("site sets differ".into()));
    }
    let mut worst = 0.0f64;
    for (t, r) in test.iter().zip(reference) {
        let (Some(ta), Some(ra)) = (&t.amplitudes, &r.amplitudes) else {
            return Err(Error::DumpMismatch("dumps carry no amplitudes".into()));
        };
        for &(it, ir) in &pairs {
            worst = worst.max((ta[it] - ra[ir]).norm());
        }
    }
    Ok(worst)
}

/// Least-squares slope of the intensity centroid against time.
pub fn centroid_velocity(dumps: &[FieldDump]) -> Result<[f64; 2]> {
    if dumps.len() < 2 {
        return Err(Error::DumpMismatch("need at least two dumps".into()));
    }
    let n = dumps.len() as f64;
    let t_mean = dumps.iter().map(|d| d.time).sum::<f64>() / n;
    let var: f64 = dumps.iter().map(|d| (d.time - t_mean).powi(2)).sum();
    if !(var > 0.0) {
        return Err(Error::DumpMismatch("dump times are degenerate".into()));
    }
    let centroids: Vec<[f64; 2]> = dumps.iter().map(FieldDump::centroid).collect();
    let mut v = [0.0; 2];
    for a in 0..2 {
        let c_mean = centroids.iter().map(|c| c[a]).sum::<f64>() / n;
        v[a] = dumps.iter().zip(&centroids).map(|(d, c)| (d.time - t_mean) * (c[a] - c_mean)).sum::<f64>() / var;
    }
    Ok(v)
}

/// Relative spread of the probability-weighted mean radius about `center`
/// across `sectors` equal angular sectors. Zero for a perfectly isotropic
/// ring. Sectors start half a width off the x axis so that sites on the axes
/// and diagonals never sit on an edge.
pub fn radial_asymmetry(dump: &FieldDump, center: [f64; 2], sectors: usize) -> f64 {
    let mut mass = vec![0.0; sectors];
    let mut moment = vec![0.0; sectors];
    for (p, w) in dump.positions.iter().zip(&dump.prob) {
        let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
        let offset = std::f64::consts::PI / sectors as f64;
        let angle = (dy.atan2(dx) + offset).rem_euclid(std::f64::consts::TAU);
        let s = ((angle / std::f64::consts::TAU * sectors as f64) as usize).min(sectors - 1);
        mass[s] += w;
        moment[s] += w * dx.hypot(dy);
    }
    let radii: Vec<f64> = mass.iter().zip(&moment).map(|(m, r)| r / m).collect();
    let mean = radii.iter().sum::<f64>() / sectors as f64;
    let rms = (radii.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / sectors as f64).sqrt();
    rms / mean
}

/// Uniform, cloaked and bare-hole runs of one scenario and how they differ
/// outside the cloak.
#[derive(Debug, Clone, PartialEq)]
pub struct CloakComparison {
    pub cloak_residual: f64,
    pub hole_residual: f64,
    /// Per-site amplitude difference between cloaked and uniform runs.
    pub cloak_state_difference: f64,
    pub dumps: usize,
}

/// Run the three variants of a cloak scenario in parallel and compare each
/// against the uniform run over `r > b`.
pub fn compare_cloak(s: &Scenario) -> Result<CloakComparison> {
    let (uniform, cloak, hole) = s.variants()?;
    let (u, c, h) = std::thread::scope(|scope| {
        let u = scope.spawn(|| run_scenario(&uniform));
        let c = scope.spawn(|| run_scenario(&cloak));
        let h = scope.spawn(|| run_scenario(&hole));
        (u.join(), c.join(), h.join())
    });
    let (u, c, h) = (
        u.expect("uniform run panicked")?,
        c.expect("cloak run panicked")?,
        h.expect("hole run panicked")?,
    );
    let center = s.lattice.center();
    let b = s.lattice.outer_radius().expect("cloak geometry has an outer radius");
    Ok(CloakComparison {
        cloak_residual: cloak_residual(&c, &u, center, b)?,
        hole_residual: cloak_residual(&h, &u, center, b)?,
        cloak_state_difference: max_state_difference(&c, &u)?,
        dumps: u.len(),
    })
}
