// The building blocks one at a time: smooth frame, `M(x)`, its Pfaffian,
// and the phase winding of `pf M` around the equator.

use phasetop::bands::{smooth_frame, spectrum_on_grid, BandGroup};
use phasetop::invariants::{km_boundary, km_census, m_field, pfaffian_edges};
use phasetop::models::{build, ModelSpec};
use phasetop::numkit::{c64, cis, determinant, pfaffian, winding_number, CMatrix, PhaseLoop};
use phasetop::phasespace::{Grid, Manifold};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    // pf of a 4x4 skew matrix is a12 a34 - a13 a24 + a14 a23
    let mut a = CMatrix::zeros(4, 4);
    for (i, j) in [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)] {
        a[(i, j)] = c64((i + 2 * j) as f64, j as f64 - 1.0);
        a[(j, i)] = -a[(i, j)];
    }
    let pf = pfaffian(&a)?;
    let by_hand = a[(0, 1)] * a[(2, 3)] - a[(0, 2)] * a[(1, 3)] + a[(0, 3)] * a[(1, 2)];
    println!(
        "pf = {pf:.3}, by hand {by_hand:.3}; pf^2 = {:.3}, det = {:.3}",
        pf * pf,
        determinant(&a)
    );

    let samples: Vec<_> = (0..64)
        .map(|k| cis(3.0 * std::f64::consts::TAU * k as f64 / 64.0))
        .collect();
    println!(
        "winding of e^(3i phi): {}",
        winding_number(&PhaseLoop::new(samples)?)?
    );

    let grid = Grid::build(Manifold::Sphere, 32, 64)?;
    let field = build(&ModelSpec::KramersPairSphere {
        epsilon: 0.05,
        seed: 2,
    })?;
    let spectrum = spectrum_on_grid(&field, &grid)?;
    let frame = smooth_frame(&spectrum, &grid, &BandGroup::measured(&spectrum, 0, 1)?)?;
    let m = m_field(&frame, &field, 1e-6)?;
    println!(
        "M skew residual {:.1e}, min |pf M| {:?}",
        m.skew_residual,
        m.min_abs_pfaffian()
    );
    let edges = pfaffian_edges(&m, &frame, &field, &grid);
    let k = km_boundary(&edges, &grid)?;
    let census = km_census(&edges, &grid)?;
    println!(
        "k from the equator winding = {k}, from {} zeros = {}",
        census.entries.len(),
        census.total
    );
    assert_eq!(k, census.total);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
