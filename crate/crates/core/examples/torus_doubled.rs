// A Chern insulator and its time-reversed copy on the torus.
//
// Time reversal pairs the levels at `p = 0, pi` (Kramers degeneracy), so
// only even-rank groups appear, with even Chern numbers.

use phasetop::invariants::{analyze_field, Tolerances};
use phasetop::models::{build, ModelSpec};
use phasetop::phasespace::{Grid, Manifold};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let grid = Grid::build(Manifold::Torus, 32, 64)?;
    for mass in [1.0, -1.0, 3.0] {
        let field = build(&ModelSpec::TorusDoubledChern {
            mass,
            epsilon: 0.0,
            seed: 0,
        })?;
        let analysis = analyze_field(&field, &grid, &Tolerances::default())?;
        println!(
            "mass {mass:+}: Kramers residual {:.1e}",
            analysis.kramers_residual.unwrap_or(f64::NAN)
        );
        for g in &analysis.groups {
            let r = &g.report;
            println!(
                "  bands {:?} (rank {}): c = {:+}, k = {:?}",
                r.bands, r.rank, r.c_plaquette, r.k
            );
            assert!(r.rank % 2 == 0 && r.c_plaquette % 2 == 0);
        }
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
