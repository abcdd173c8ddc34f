// Wave packets move at the band's group velocity: the fitted centroid drift
// of a broad packet against `grad_k E`.

use camcloak::dispersion::{group_velocity, BandParams, WaveVector};
use camcloak::experiments::{centroid_velocity, run_scenario, EvolveSpec, Geometry, LatticeSpec, Scenario, SourceSpec};
use camcloak::hamiltonian::PropagatorConfig;
use std::f64::consts::FRAC_PI_2;

/// Fitted and predicted velocity for a `sigma = 8` packet at `k` on a
/// lattice large enough to hold it for `t_final`.
pub fn measure(k: [f64; 2], t_final: f64) -> camcloak::Result<([f64; 2], [f64; 2])> {
    let band = BandParams::unit();
    let v = group_velocity(WaveVector::new(k[0], k[1], 1.0), &band);
    let sigma = 8.0;
    let n = 180;
    // Start far enough back that the packet stays centered in the lattice.
    let start = |vi: f64| 89.5 - 0.5 * vi * t_final;
    let scenario = Scenario {
        band,
        lattice: LatticeSpec { nx: n, ny: n, center: None, geometry: Geometry::Uniform },
        source: SourceSpec::GaussianPacket { k, sigma, center: [start(v[0]), start(v[1])] },
        evolve: EvolveSpec { t_final: Some(t_final), dump_interval: t_final / 20.0, override_boundary: false },
        propagator: PropagatorConfig::default(),
        seed: 0,
    };
    Ok((centroid_velocity(&run_scenario(&scenario)?)?, v))
}

pub fn run() -> camcloak::Result<()> {
    for k in [[FRAC_PI_2, 0.0], [FRAC_PI_2, FRAC_PI_2], [1.0, 0.3]] {
        let (fit, v) = measure(k, 12.0)?;
        println!(
            "k = ({:.3}, {:.3}): fitted ({:.4}, {:.4}), predicted ({:.4}, {:.4})",
            k[0], k[1], fit[0], fit[1], v[0], v[1]
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> camcloak::Result<()> {
    run()
}
