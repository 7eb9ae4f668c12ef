// Kane-Mele index of a rank-2 band on the sphere.
//
// The index is computed twice: as the winding of `pf M` around the
// equator, and by counting the zeros of `pf M` in the northern hemisphere.
// Both equal half the Chern number.

use phasetop::invariants::{analyze_field, Tolerances};
use phasetop::models::{build, ModelSpec};
use phasetop::phasespace::{Grid, Manifold};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let grid = Grid::build(Manifold::Sphere, 32, 64)?;
    for epsilon in [0.0, 0.1] {
        let field = build(&ModelSpec::KramersPairSphere { epsilon, seed: 0 })?;
        let analysis = analyze_field(&field, &grid, &Tolerances::default())?;
        println!("epsilon = {epsilon}");
        for g in analysis
            .groups
            .iter()
            .chain(&analysis.composites)
            .filter(|g| g.report.rank == 2)
        {
            let r = &g.report;
            println!(
                "  bands {:?}: c = {:+}, k = {:?}, zero count = {:?} from {} zeros",
                r.bands, r.c_plaquette, r.k, r.k_census, r.census_zeros
            );
            if let Some(census) = &g.census {
                for z in &census.entries {
                    println!(
                        "    zero near (lat {}, lon {}) with index {:+}",
                        z.lat, z.lon, z.index
                    );
                }
            }
            assert_eq!(r.k.map(|k| 2 * k), Some(r.c_plaquette));
            assert_eq!(r.k, r.k_census);
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
