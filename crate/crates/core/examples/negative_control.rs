// Adding a term that is odd under time reversal.
//
// The symmetry check fails, the Kramers index is not reported and the
// curvature is no longer even under the involution.

use phasetop::invariants::{analyze_field, Tolerances};
use phasetop::models::{build, ModelSpec};
use phasetop::phasespace::{Grid, Manifold};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let grid = Grid::build(Manifold::Sphere, 32, 64)?;
    let spec = ModelSpec::TriBrokenControl {
        base: Box::new(ModelSpec::KramersPairSphere {
            epsilon: 0.0,
            seed: 0,
        }),
        breaking_strength: 0.3,
    };
    let analysis = analyze_field(&build(&spec)?, &grid, &Tolerances::default())?;
    println!(
        "TRI residual {:.3} (pass: {})",
        analysis.tri.max_residual, analysis.tri.pass
    );
    for b in &analysis.broken {
        println!(
            "  bands {:?}: c = {:?}, evenness residual {:?}, evenness ok {:?}",
            b.bands, b.c_plaquette, b.curvature_evenness, b.evenness_ok
        );
    }
    assert!(!analysis.tri.pass);
    assert!(analysis.groups.is_empty());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
