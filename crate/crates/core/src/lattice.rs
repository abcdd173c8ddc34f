//! Square cavity lattices and the circular-cloak coordinate map.
//!
//! Positions are measured in units of the baseline spacing `d`. A lattice
//! keeps two geometries: the reference (as-built, untransformed) positions
//! and the current positions. The cloak transform moves only the current
//! positions; the bond graph, and hence the Hamiltonian, never changes.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};

/// Default upper bound on the number of sites a lattice may have.
pub const DEFAULT_SITE_CAP: usize = 1 << 22;

/// Stable site identifier. For square lattices the id of grid point `(i, j)`
/// is `i + j * nx`; ids survive both the cloak transform and hole punching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SiteId(pub u32);

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Unordered bond between two sites, stored as indices into the lattice's
/// site arrays with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
}

impl Bond {
    pub fn new(a: usize, b: usize) -> Self {
        if a < b {
            Bond { i: a, j: b }
        } else {
            Bond { i: b, j: a }
        }
    }
}

/// Circular cloak: the disk `r < outer` about `center` is compressed into the
/// annulus `inner < r < outer`, leaving the disk `r < inner` empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloakSpec {
    inner: f64,
    outer: f64,
    center: [f64; 2],
}

impl CloakSpec {
    pub fn new(inner: f64, outer: f64, center: [f64; 2]) -> Result<Self> {
        if !(inner > 0.0 && inner.is_finite()) {
            return Err(Error::invalid("cloak.a", format!("inner radius must be positive, got {inner}")));
        }
        if !(outer > inner && outer.is_finite()) {
            return Err(Error::invalid(
                "cloak.a, cloak.b",
                format!("need 0 < a < b, got a = {inner}, b = {outer}"),
            ));
        }
        if !center.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("lattice.center", "center must be finite"));
        }
        Ok(CloakSpec { inner, outer, center })
    }

    /// Hidden-region radius `a`.
    pub fn inner(&self) -> f64 {
        self.inner
    }

    /// Outer cloak radius `b`.
    pub fn outer(&self) -> f64 {
        self.outer
    }

    pub fn center(&self) -> [f64; 2] {
        self.center
    }

    /// Radial map `r -> (b - a)/b * r + a` for `r < b`, identity beyond.
    pub fn map_radius(&self, r: f64) -> f64 {
        if r < self.outer {
            (self.outer - self.inner) / self.outer * r + self.inner
        } else {
            r
        }
    }

    /// Image of a point under the cloak map. The center itself goes to
    /// radius `a` at polar angle 0.
    pub fn map_point(&self, p: [f64; 2]) -> [f64; 2] {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let r = dx.hypot(dy);
        if r >= self.outer {
            return p;
        }
        let r_new = self.map_radius(r);
        let phi = if r == 0.0 { 0.0 } else { dy.atan2(dx) };
        [self.center[0] + r_new * phi.cos(), self.center[1] + r_new * phi.sin()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    ids: Vec<SiteId>,
    reference: Vec<[f64; 2]>,
    positions: Vec<[f64; 2]>,
    bonds: Vec<Bond>,
    spacing: f64,
    extent: (usize, usize),
    cloak: Option<CloakSpec>,
}

/// Default cloak center for an `nx` by `ny` grid: the geometric center, which
/// falls between sites when a dimension is even.
pub fn grid_center(nx: usize, ny: usize) -> [f64; 2] {
    [(nx as f64 - 1.0) / 2.0, (ny as f64 - 1.0) / 2.0]
}

/// Square lattice with open boundaries and the default site cap.
pub fn build_square_lattice(nx: usize, ny: usize) -> Result<Lattice> {
    build_square_lattice_capped(nx, ny, DEFAULT_SITE_CAP)
}

pub fn build_square_lattice_capped(nx: usize, ny: usize, cap: usize) -> Result<Lattice> {
    if nx == 0 || ny == 0 {
        return Err(Error::invalid("lattice.nx, lattice.ny", format!("need nx, ny >= 1, got {nx} x {ny}")));
    }
    let n = nx
        .checked_mul(ny)
        .ok_or(Error::TooManySites { requested: usize::MAX, cap })?;
    if n > cap || n > u32::MAX as usize {
        return Err(Error::TooManySites { requested: n, cap });
    }
    let mut ids = Vec::with_capacity(n);
    let mut positions = Vec::with_capacity(n);
    for j in 0..ny {
        for i in 0..nx {
            ids.push(SiteId((i + j * nx) as u32));
            positions.push([i as f64, j as f64]);
        }
    }
    let mut bonds = Vec::with_capacity(2 * n);
    for j in 0..ny {
        for i in 0..nx {
            let s = i + j * nx;
            if i + 1 < nx {
                bonds.push(Bond::new(s, s + 1));
            }
            if j + 1 < ny {
                bonds.push(Bond::new(s, s + nx));
            }
        }
    }
    Ok(Lattice {
        ids,
        reference: positions.clone(),
        positions,
        bonds,
        spacing: 1.0,
        extent: (nx, ny),
        cloak: None,
    })
}

/// Relocate every site inside the outer cloak radius; bonds are untouched.
pub fn apply_cloak_transform(lat: &Lattice, spec: &CloakSpec) -> Result<Lattice> {
    if lat.cloak.is_some() {
        return Err(Error::AlreadyTransformed);
    }
    let mut out = lat.clone();
    for p in out.positions.iter_mut() {
        *p = spec.map_point(*p);
    }
    out.cloak = Some(*spec);
    Ok(out)
}

/// Remove all sites closer than `radius` to `center` (current positions),
/// together with their bonds. Surviving ids are preserved.
pub fn punch_hole(lat: &Lattice, radius: f64, center: [f64; 2]) -> Result<Lattice> {
    if !(radius > 0.0) {
        return Err(Error::invalid("hole.radius", format!("radius must be positive, got {radius}")));
    }
    let keep: Vec<bool> = lat
        .positions
        .iter()
        .map(|p| (p[0] - center[0]).hypot(p[1] - center[1]) >= radius)
        .collect();
    lat.retain_sites(&keep)
}

/// Euclidean length of every bond from current positions, in units of `d`.
pub fn bond_lengths(lat: &Lattice) -> Vec<(Bond, f64)> {
    lat.bonds.iter().map(|&b| (b, lat.bond_length(b))).collect()
}

impl Lattice {
    /// Assemble a lattice from explicit parts. Positions double as the
    /// reference geometry. Used for loaded files and custom graphs.
    pub fn from_parts(
        ids: Vec<SiteId>,
        positions: Vec<[f64; 2]>,
        bonds: Vec<Bond>,
        extent: (usize, usize),
    ) -> Result<Self> {
        if ids.len() != positions.len() {
            return Err(Error::DimensionMismatch { expected: ids.len(), actual: positions.len() });
        }
        let mut seen_ids = std::collections::HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen_ids.insert(*id) {
                return Err(Error::invalid("sites", format!("duplicate site id {id}")));
            }
        }
        let mut seen = std::collections::HashSet::with_capacity(bonds.len());
        let mut normalized = Vec::with_capacity(bonds.len());
        for b in bonds {
            let b = Bond::new(b.i, b.j);
            if b.i == b.j {
                return Err(Error::invalid("bonds", format!("self bond on site index {}", b.i)));
            }
            if b.j >= ids.len() {
                return Err(Error::invalid("bonds", format!("bond references missing site index {}", b.j)));
            }
            if !seen.insert(b) {
                return Err(Error::invalid("bonds", format!("duplicate bond ({}, {})", ids[b.i], ids[b.j])));
            }
            normalized.push(b);
        }
        Ok(Lattice {
            ids,
            reference: positions.clone(),
            positions,
            bonds: normalized,
            spacing: 1.0,
            extent,
            cloak: None,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[SiteId] {
        &self.ids
    }

    /// Current (possibly cloak-transformed) site positions.
    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    /// As-built positions before any cloak transform.
    pub fn reference_positions(&self) -> &[[f64; 2]] {
        &self.reference
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn bond_ids(&self) -> impl Iterator<Item = (SiteId, SiteId)> + '_ {
        self.bonds.iter().map(|b| (self.ids[b.i], self.ids[b.j]))
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn extent(&self) -> (usize, usize) {
        self.extent
    }

    /// The cloak applied to this lattice, if any.
    pub fn cloak(&self) -> Option<&CloakSpec> {
        self.cloak.as_ref()
    }

    pub fn bond_length(&self, b: Bond) -> f64 {
        let p = self.positions[b.i];
        let q = self.positions[b.j];
        (p[0] - q[0]).hypot(p[1] - q[1])
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.len()];
        for b in &self.bonds {
            deg[b.i] += 1;
            deg[b.j] += 1;
        }
        deg
    }

    /// Index of a site id. Ids are kept in ascending order.
    pub fn index_of(&self, id: SiteId) -> Option<usize> {
        self.ids.binary_search(&id).ok().or_else(|| self.ids.iter().position(|&x| x == id))
    }

    /// Axis-aligned bounding box of the reference geometry: `(min, max)`.
    pub fn reference_bounds(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.reference {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    fn retain_sites(&self, keep: &[bool]) -> Result<Lattice> {
        if !keep.iter().any(|&k| k) {
            return Err(Error::EmptyLattice);
        }
        let mut remap = vec![usize::MAX; self.len()];
        let mut out = Lattice {
            ids: Vec::new(),
            reference: Vec::new(),
            positions: Vec::new(),
            bonds: Vec::new(),
            spacing: self.spacing,
            extent: self.extent,
            cloak: self.cloak,
        };
        for (idx, &k) in keep.iter().enumerate() {
            if k {
                remap[idx] = out.ids.len();
                out.ids.push(self.ids[idx]);
                out.reference.push(self.reference[idx]);
                out.positions.push(self.positions[idx]);
            }
        }
        out.bonds = self
            .bonds
            .iter()
            .filter(|b| keep[b.i] && keep[b.j])
            .map(|b| Bond::new(remap[b.i], remap[b.j]))
            .collect();
        Ok(out)
    }
}

/// Polar angle in `[0, 2pi)` of `p` about `center`.
pub fn polar_angle(p: [f64; 2], center: [f64; 2]) -> f64 {
    let a = (p[1] - center[1]).atan2(p[0] - center[0]);
    if a < 0.0 {
        a + 2.0 * PI
    } else {
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::{BTreeSet, HashSet};

    fn brute_force_bond_count(nx: usize, ny: usize) -> usize {
        let mut n = 0;
        for a in 0..nx * ny {
            for b in (a + 1)..nx * ny {
                let (ai, aj) = ((a % nx) as i64, (a / nx) as i64);
                let (bi, bj) = ((b % nx) as i64, (b / nx) as i64);
                if (ai - bi).abs() + (aj - bj).abs() == 1 {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn small_lattices() {
        let l = build_square_lattice(1, 1).unwrap();
        assert_eq!((l.len(), l.bonds().len()), (1, 0));
        let l = build_square_lattice(2, 2).unwrap();
        assert_eq!((l.len(), l.bonds().len()), (4, 4));
    }

    #[test]
    fn bond_count_formula_matches_enumeration() {
        for nx in 1..7 {
            for ny in 1..7 {
                let l = build_square_lattice(nx, ny).unwrap();
                assert_eq!(l.bonds().len(), brute_force_bond_count(nx, ny));
                assert_eq!(l.bonds().len(), 2 * nx * ny - nx - ny);
            }
        }
        let l = build_square_lattice(200, 200).unwrap();
        assert_eq!(l.len(), 40_000);
        assert_eq!(l.bonds().len(), 79_600);
    }

    #[test]
    fn rejects_empty_and_oversized() {
        assert!(build_square_lattice(0, 3).is_err());
        assert!(matches!(
            build_square_lattice_capped(100, 100, 9_999),
            Err(Error::TooManySites { requested: 10_000, .. })
        ));
    }

    #[test]
    fn interior_degree_is_four() {
        let l = build_square_lattice(6, 5).unwrap();
        let deg = l.degrees();
        for (idx, p) in l.positions().iter().enumerate() {
            let interior = p[0] > 0.0 && p[0] < 5.0 && p[1] > 0.0 && p[1] < 4.0;
            if interior {
                assert_eq!(deg[idx], 4);
            }
        }
    }

    #[test]
    fn cloak_spec_validation() {
        assert!(CloakSpec::new(5.0, 10.0, [0.0, 0.0]).is_ok());
        assert!(CloakSpec::new(10.0, 5.0, [0.0, 0.0]).is_err());
        assert!(CloakSpec::new(0.0, 5.0, [0.0, 0.0]).is_err());
        assert!(CloakSpec::new(5.0, 5.0, [0.0, 0.0]).is_err());
    }

    #[test]
    fn cloak_map_points() {
        let s = CloakSpec::new(5.0, 10.0, [0.0, 0.0]).unwrap();
        assert_eq!(s.map_point([0.0, 0.0]), [5.0, 0.0]);
        let p = s.map_point([10.0, 0.0]);
        assert_eq!(p, [10.0, 0.0]);
        let p = s.map_point([4.0, 0.0]);
        assert!((p[0] - 7.0).abs() < 1e-15 && p[1].abs() < 1e-15);
        assert_eq!(s.map_radius(0.0), 5.0);
        assert_eq!(s.map_radius(10.0), 10.0);
    }

    #[test]
    fn transform_rejects_second_application() {
        let l = build_square_lattice(5, 5).unwrap();
        let s = CloakSpec::new(1.0, 2.0, [2.0, 2.0]).unwrap();
        let t = apply_cloak_transform(&l, &s).unwrap();
        assert!(matches!(apply_cloak_transform(&t, &s), Err(Error::AlreadyTransformed)));
    }

    #[test]
    fn transformed_bond_lengths() {
        // Center chosen so that the grid points (4, 0) and (5, 0) straddle r = 4..5.
        let l = build_square_lattice(21, 21).unwrap();
        let spec = CloakSpec::new(5.0, 10.0, [0.0, 0.0]).unwrap();
        let t = apply_cloak_transform(&l, &spec).unwrap();
        let lengths = bond_lengths(&t);
        let find = |a: [f64; 2], b: [f64; 2]| {
            let ia = l.positions().iter().position(|p| *p == a).unwrap();
            let ib = l.positions().iter().position(|p| *p == b).unwrap();
            lengths.iter().find(|(bd, _)| *bd == Bond::new(ia, ib)).unwrap().1
        };
        assert!((find([4.0, 0.0], [5.0, 0.0]) - 0.5).abs() < 1e-14);
        // (0,1)-(1,1) is not a tangential pair; check the chord between the
        // images of (0,1) and (1,0) directly through the map instead.
        let p1 = spec.map_point([0.0, 1.0]);
        let p2 = spec.map_point([1.0, 0.0]);
        let chord = (p1[0] - p2[0]).hypot(p1[1] - p2[1]);
        assert!((chord - 5.5 * 2f64.sqrt()).abs() < 1e-12);
        assert!((chord - 7.778).abs() < 1e-3);

        for (_, len) in bond_lengths(&l) {
            assert_eq!(len, 1.0);
        }
    }

    #[test]
    fn punch_hole_examples() {
        let l = build_square_lattice(3, 3).unwrap();
        let h = punch_hole(&l, 0.5, [1.0, 1.0]).unwrap();
        assert_eq!((h.len(), h.bonds().len()), (8, 8));

        let h = punch_hole(&l, 1e-9, [0.37, 1.91]).unwrap();
        assert_eq!(h, l);

        let l = build_square_lattice(21, 21).unwrap();
        let brute = (0..21)
            .flat_map(|i| (0..21).map(move |j| (i, j)))
            .filter(|&(i, j)| ((i as f64 - 10.0).powi(2) + (j as f64 - 10.0).powi(2)).sqrt() < 5.0)
            .count();
        assert_eq!(brute, 69);
        let h = punch_hole(&l, 5.0, [10.0, 10.0]).unwrap();
        assert_eq!(l.len() - h.len(), 69);

        assert!(matches!(punch_hole(&l, 100.0, [10.0, 10.0]), Err(Error::EmptyLattice)));
        assert!(punch_hole(&l, 0.0, [10.0, 10.0]).is_err());
    }

    #[test]
    fn punch_hole_3x3_center_bonds() {
        // 12 bonds in a 3x3 grid, the center site carries 4 of them.
        let l = build_square_lattice(3, 3).unwrap();
        assert_eq!(l.bonds().len(), 12);
        let h = punch_hole(&l, 0.5, [1.0, 1.0]).unwrap();
        assert_eq!(h.bonds().len(), 8);
        assert!(!h.ids().contains(&SiteId(4)));
    }

    #[test]
    fn hole_degrees_match_brute_force() {
        for n in [5usize, 11, 20] {
            let l = build_square_lattice(n, n).unwrap();
            let c = grid_center(n, n);
            let r = n as f64 / 4.0;
            let h = punch_hole(&l, r, c).unwrap();
            let removed: HashSet<SiteId> = l
                .ids()
                .iter()
                .zip(l.positions())
                .filter(|(_, p)| (p[0] - c[0]).hypot(p[1] - c[1]) < r)
                .map(|(id, _)| *id)
                .collect();
            let orig_deg = l.degrees();
            let hole_deg = h.degrees();
            for (hidx, id) in h.ids().iter().enumerate() {
                let oidx = l.index_of(*id).unwrap();
                let lost = l
                    .bond_ids()
                    .filter(|(a, b)| (a == id && removed.contains(b)) || (b == id && removed.contains(a)))
                    .count();
                assert_eq!(hole_deg[hidx], orig_deg[oidx] - lost);
            }
        }
    }

    #[test]
    fn from_parts_rejects_bad_bonds() {
        let ids = vec![SiteId(0), SiteId(1)];
        let pos = vec![[0.0, 0.0], [1.0, 0.0]];
        assert!(Lattice::from_parts(ids.clone(), pos.clone(), vec![Bond { i: 0, j: 0 }], (2, 1)).is_err());
        assert!(Lattice::from_parts(ids.clone(), pos.clone(), vec![Bond::new(0, 1), Bond::new(1, 0)], (2, 1)).is_err());
        assert!(Lattice::from_parts(ids.clone(), pos.clone(), vec![Bond::new(0, 2)], (2, 1)).is_err());
        assert!(Lattice::from_parts(ids, pos, vec![Bond::new(0, 1)], (2, 1)).is_ok());
    }

    fn radius(p: [f64; 2], c: [f64; 2]) -> f64 {
        (p[0] - c[0]).hypot(p[1] - c[1])
    }

    proptest! {
        #[test]
        fn transform_keeps_topology_and_order(
            nx in 4usize..24, ny in 4usize..24,
            a in 0.5f64..6.0, width in 0.5f64..8.0,
            cx in -2.0f64..25.0, cy in -2.0f64..25.0,
        ) {
            let l = build_square_lattice(nx, ny).unwrap();
            let spec = CloakSpec::new(a, a + width, [cx, cy]).unwrap();
            let t = apply_cloak_transform(&l, &spec).unwrap();
            let before: BTreeSet<_> = l.bonds().iter().copied().collect();
            let after: BTreeSet<_> = t.bonds().iter().copied().collect();
            prop_assert_eq!(before, after);
            prop_assert_eq!(l.ids(), t.ids());

            let c = spec.center();
            let b = spec.outer();
            for (p, q) in l.positions().iter().zip(t.positions()) {
                let r = radius(*p, c);
                let rq = radius(*q, c);
                prop_assert!(rq >= a - 1e-12);
                if r >= b {
                    prop_assert_eq!(p, q);
                } else {
                    prop_assert!((rq - spec.map_radius(r)).abs() < 1e-12);
                    prop_assert!(((rq - r) - a * (1.0 - r / b)).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn radial_map_is_monotone(a in 0.1f64..10.0, width in 0.1f64..10.0, r1 in 0.0f64..1.0, r2 in 0.0f64..1.0) {
            let spec = CloakSpec::new(a, a + width, [0.0, 0.0]).unwrap();
            let b = spec.outer();
            let (lo, hi) = if r1 < r2 { (r1 * b, r2 * b) } else { (r2 * b, r1 * b) };
            prop_assume!(lo < hi && hi < b);
            prop_assert!(spec.map_radius(lo) < spec.map_radius(hi));
        }

        #[test]
        fn boundary_continuity(a in 0.1f64..10.0, width in 0.1f64..10.0, eps in 0.0f64..1e-6) {
            let spec = CloakSpec::new(a, a + width, [0.0, 0.0]).unwrap();
            let b = spec.outer();
            let r = b - eps;
            prop_assume!(r < b);
            prop_assert!((spec.map_radius(r) - r).abs() <= a / b * 1e-6 + 1e-13);
        }
    }
}
