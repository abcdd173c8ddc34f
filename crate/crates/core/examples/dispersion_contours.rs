// Isofrequency contours of the square-lattice band: nearly circular near
// the band bottom, the square `|kx| + |ky| = pi` at the band center.

use camcloak::dispersion::{band_energy, group_velocity, isofrequency_contour, BandParams};

pub fn run() -> camcloak::Result<()> {
    let p = BandParams::unit();
    for e0 in [-3.5, -2.0, 0.0, 2.0] {
        let contour = isofrequency_contour(e0, &p, 256)?;
        let radii: Vec<f64> = contour.iter().map(|k| k.kx.hypot(k.ky)).collect();
        let (lo, hi) = radii.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(*r), hi.max(*r)));
        let worst = contour.iter().map(|k| (band_energy(*k, &p) - e0).abs()).fold(0.0, f64::max);
        let speed = contour.iter().map(|k| {
            let v = group_velocity(*k, &p);
            v[0].hypot(v[1])
        });
        let vmax = speed.fold(0.0, f64::max);
        println!("E0 = {e0:5.1}: |k| in [{lo:.4}, {hi:.4}], max |v_g| = {vmax:.4}, residual {worst:.1e}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> camcloak::Result<()> {
    run()
}
