// Chebyshev propagation against a dense eigendecomposition, and norm
// conservation over a long run.

use camcloak::dispersion::BandParams;
use camcloak::hamiltonian::{build_hamiltonian, dense_expm_reference, Propagator, PropagatorConfig, WaveState};
use camcloak::lattice::build_square_lattice;

pub fn run() -> camcloak::Result<()> {
    let p = BandParams::unit();
    let lat = build_square_lattice(10, 10)?;
    let h = build_hamiltonian(&lat, &p)?;
    let psi0 = WaveState::localized(lat.len(), 44);
    for t in [1.0, 5.0, 20.0] {
        let mut psi = psi0.clone();
        Propagator::new(&h, PropagatorConfig::default())?.advance(&mut psi, t)?;
        let exact = dense_expm_reference(&h, &psi0, t)?;
        println!("t = {t:4}: max |chebyshev - dense| = {:.2e}", psi.max_abs_diff(&exact));
    }

    let lat = build_square_lattice(60, 60)?;
    let h = build_hamiltonian(&lat, &p)?;
    let mut psi = WaveState::localized(lat.len(), 30 * 60 + 30);
    let mut prop = Propagator::new(&h, PropagatorConfig::default())?;
    for _ in 0..50 {
        prop.advance(&mut psi, 10.0)?;
    }
    println!("norm drift after t = 500 on 60 x 60: {:.2e}", (psi.norm() - 1.0).abs());
    Ok(())
}

#[allow(dead_code)]
fn main() -> camcloak::Result<()> {
    run()
}
