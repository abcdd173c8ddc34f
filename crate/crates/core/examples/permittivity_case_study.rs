// Designing inter-site permittivity for silicon cavities at 1.5 um: the
// baseline spacing, then `eps_b` per bond of the `a = 5, b = 10` cloak.

use camcloak::lattice::{apply_cloak_transform, build_square_lattice, grid_center, CloakSpec};
use camcloak::permittivity::{
    case_study, coupling_rate, normalize_mode, permittivity_map, solve_baseline_spacing, solve_epsilon_b,
};

pub fn run() -> camcloak::Result<()> {
    let params = case_study::params();
    let stack = case_study::stack();
    let d = solve_baseline_spacing(stack, case_study::KAPPA_TARGET)?;
    let w = params.width;
    println!("w = {w:.4e} m, baseline spacing d = {d:.6e} m (d/w = {:.4})", d / w);
    println!("coupling at d: {:.6e} rad/s", coupling_rate(&normalize_mode(stack), d));
    println!("eps_b back from d: {:.6}", solve_epsilon_b(&params, d, case_study::KAPPA_TARGET)?);

    let lat = build_square_lattice(60, 60)?;
    let lat = apply_cloak_transform(&lat, &CloakSpec::new(5.0, 10.0, grid_center(60, 60))?)?;
    let map = permittivity_map(&lat, &params, case_study::KAPPA_TARGET, d, None)?;
    let deformed: Vec<_> = map.entries.iter().filter(|e| (e.length - 1.0).abs() > 1e-12).collect();
    let solved: Vec<f64> = deformed.iter().filter_map(|e| e.eps_b()).collect();
    println!(
        "{} deformed bonds: {} solved (eps_b in [{:.3}, {:.3}]), {} need eps_b below 1",
        deformed.len(),
        solved.len(),
        solved.iter().cloned().fold(f64::INFINITY, f64::min),
        solved.iter().cloned().fold(0.0, f64::max),
        map.unreachable().len()
    );

    // Radial profile: mean eps_b of solved bonds per unit-width shell.
    for shell in 5..10 {
        let vals: Vec<f64> = deformed
            .iter()
            .filter(|e| e.midpoint_radius >= shell as f64 && e.midpoint_radius < shell as f64 + 1.0)
            .filter_map(|e| e.eps_b())
            .collect();
        if !vals.is_empty() {
            println!("  r in [{shell}, {}): mean eps_b {:.4} over {}", shell + 1, vals.iter().sum::<f64>() / vals.len() as f64, vals.len());
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> camcloak::Result<()> {
    run()
}
