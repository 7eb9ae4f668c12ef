// Spin rotor `H(n) = n . S` on the sphere.
//
// Every level of a half-integer spin is a rank-1 band with an odd Chern
// number; the numbers add up to zero.
//
// ```sh
// cargo run --example rotor_spin
// ```

use phasetop::invariants::{analyze_field, Tolerances};
use phasetop::models::{build, ModelSpec};
use phasetop::phasespace::{Grid, Manifold};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let grid = Grid::build(Manifold::Sphere, 32, 64)?;
    for two_j in [1, 3] {
        let field = build(&ModelSpec::RotorSpin {
            two_j,
            epsilon: 0.0,
            seed: 0,
        })?;
        let analysis = analyze_field(&field, &grid, &Tolerances::default())?;
        println!("spin {two_j}/2:");
        for g in &analysis.groups {
            let r = &g.report;
            println!(
                "  band {:?}  c = {:+}  (winding {:+})  parity ok: {}",
                r.bands, r.c_plaquette, r.c_winding, r.parity_ok
            );
            assert_eq!(r.c_plaquette, r.c_winding);
            assert!(r.c_plaquette % 2 != 0);
        }
        println!("  sum of c = {:?}", analysis.chern_sum);
        assert_eq!(analysis.chern_sum, Some(0));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
