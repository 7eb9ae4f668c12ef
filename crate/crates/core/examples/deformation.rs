// Linear TRI paths between models.
//
// Along a path that stays gapped the Chern number cannot change. Between
// bands of different Chern number the gap has to close somewhere.

use std::sync::Arc;

use phasetop::bands::HamiltonianField;
use phasetop::invariants::Tolerances;
use phasetop::models::{build, tri_path, ModelSpec, PathVerdict};
use phasetop::phasespace::{Grid, Manifold};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let grid = Grid::build(Manifold::Sphere, 16, 32)?;
    let tol = Tolerances::default();

    let a = build(&ModelSpec::RotorSpin {
        two_j: 1,
        epsilon: 0.0,
        seed: 0,
    })?;
    let b = build(&ModelSpec::RotorSpin {
        two_j: 1,
        epsilon: 0.2,
        seed: 3,
    })?;
    let same = tri_path(&a, &b, 0, 0, 9, &grid, &tol)?;
    println!("spin-1/2 to perturbed spin-1/2: {:?}", same.verdict);
    for s in &same.samples {
        println!("  s = {:.3}  gap = {:.3}  c = {:?}", s.s, s.gap, s.c);
    }
    assert_eq!(same.verdict, PathVerdict::GappedConstantC);

    // -n.S is time-reversal invariant too, with the lower band at c = -1
    let eval = a.evaluator();
    let negated =
        HamiltonianField::new(Manifold::Sphere, a.tr.clone(), Arc::new(move |x| -eval(x)));
    let flip = tri_path(&a, &negated, 0, 0, 9, &grid, &tol)?;
    println!(
        "c = +1 to c = -1: {:?}, closing in {:?}",
        flip.verdict, flip.bracket
    );
    assert_eq!(flip.verdict, PathVerdict::GapCloses);

    // the c = 2 doublet cannot be deformed into a flat one
    let pair = build(&ModelSpec::KramersPairSphere {
        epsilon: 0.0,
        seed: 0,
    })?;
    let flat = build(&ModelSpec::ConstantTri {
        manifold: Manifold::Sphere,
        n_a: 4,
    })?;
    let closing = tri_path(&pair, &flat, 0, 1, 9, &grid, &tol)?;
    println!(
        "Kramers doublet to flat doublet: {:?}, closing in {:?}",
        closing.verdict, closing.bracket
    );
    assert_eq!(closing.verdict, PathVerdict::GapCloses);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
