// Normally incident Gaussian beam through a cloak, with the uniform and
// bare-hole runs for comparison. Pass `--paper-scale` for the 240 x 240
// lattice with `a = 50, b = 100`.

use std::time::Instant;

use camcloak::experiments::{accumulate_intensity, compare_cloak, run_scenario, Scenario};

pub fn run(paper_scale: bool) -> camcloak::Result<()> {
    let scenario = if paper_scale { Scenario::beam_demo(true) } else { Scenario::small_beam_demo() };
    let start = Instant::now();
    let dumps = run_scenario(&scenario)?;
    let acc = accumulate_intensity(&dumps)?;
    println!(
        "{} sites, {} dumps to t = {} in {:.2?}",
        acc.len(),
        dumps.len(),
        dumps.last().map(|d| d.time).unwrap_or(0.0),
        start.elapsed()
    );

    // Where did the beam go? Centroid of the accumulated intensity on the far side.
    let c = scenario.lattice.center();
    let b = scenario.lattice.outer_radius().unwrap_or(0.0);
    let (mut mass, mut y) = (0.0, 0.0);
    for (p, w) in acc.positions.iter().zip(&acc.prob) {
        if p[0] > c[0] + b {
            mass += w;
            y += w * (p[1] - c[1]);
        }
    }
    println!("beyond the cloak: weight {mass:.4}, mean offset {:.3e}", y / mass);

    if !paper_scale {
        let cmp = compare_cloak(&scenario)?;
        println!("cloak residual   {:.3e}", cmp.cloak_residual);
        println!("hole residual    {:.3e}", cmp.hole_residual);
        println!("state difference {:.3e}", cmp.cloak_state_difference);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> camcloak::Result<()> {
    run(std::env::args().any(|a| a == "--paper-scale"))
}
