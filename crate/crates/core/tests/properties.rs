use std::f64::consts::TAU;

use phasetop::bands::{AntiUnitary, TransitionLoop};
use phasetop::gauge::{
    normal_form_loop, skew_block, skew_normal_form, solve_equator_gauge, winding_obstruction,
    NormalFormSpec,
};
use phasetop::invariants::{analyze_field, FieldAnalysis, Tolerances};
use phasetop::models::{build, spin_matrices, ModelSpec};
use phasetop::numkit::{
    c64, cis, determinant, expm_skew_hermitian, max_abs, pfaffian, winding_number, CMatrix, C64,
};
use phasetop::phasespace::{Grid, Manifold};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const SAMPLES: usize = 128;

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
    CMatrix::from_fn(n, n, |_, _| {
        c64(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

fn hermitian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> CMatrix {
    let a = gaussian(rng, n);
    (&a + a.adjoint()).scale(0.5 * scale)
}

/// Smooth unitary loop whose determinant winds `m` times.
fn unitary_loop(seed: u64, n: usize, m: i64) -> Vec<CMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes: Vec<(CMatrix, CMatrix)> = (0..3)
        .map(|_| (hermitian(&mut rng, n, 0.4), hermitian(&mut rng, n, 0.4)))
        .collect();
    let base =
        expm_skew_hermitian(&hermitian(&mut rng, n, 1.0).scale(1.0).map(|z| z * C64::i())).unwrap();
    (0..SAMPLES)
        .map(|l| {
            let phi = TAU * l as f64 / SAMPLES as f64;
            let h = modes
                .iter()
                .enumerate()
                .fold(CMatrix::zeros(n, n), |acc, (k, (a, b))| {
                    acc + a.scale((k as f64 * phi).cos()) + b.scale(((k + 1) as f64 * phi).sin())
                });
            let mut wind = CMatrix::identity(n, n);
            wind[(0, 0)] = cis(m as f64 * phi);
            &base * expm_skew_hermitian(&h.map(|z| z * C64::i())).unwrap() * wind
        })
        .collect()
}

fn det_winding(lp: &TransitionLoop) -> i64 {
    winding_number(&lp.det_loop().unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pfaffian_under_congruence(seed in 0u64..1000, half in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 2 * half;
        let a = gaussian(&mut rng, n);
        let s = &a - a.transpose();
        let b = gaussian(&mut rng, n);
        let lhs = pfaffian(&(b.transpose() * &s * &b)).unwrap();
        let rhs = determinant(&b) * pfaffian(&s).unwrap();
        prop_assert!((lhs - rhs).norm() <= 1e-8 * rhs.norm().max(1.0));
    }

    #[test]
    fn spin_reversal_flips_spin(k in 0u32..5) {
        let two_j = 2 * k + 1;
        let tr = AntiUnitary::spin_reversal(two_j).unwrap();
        for s in spin_matrices(two_j) {
            prop_assert!(max_abs(&(tr.conjugate(&s) + &s)) < 1e-12);
        }
        let j = tr.matrix();
        let n = tr.dim();
        prop_assert!(max_abs(&(j * j.map(|z| z.conj()) + CMatrix::identity(n, n))) < 1e-12);
    }

    #[test]
    fn normal_form_is_antisymmetric_with_winding_c(half_c in -3i64..=3, rank in 1usize..=4) {
        let c = 2 * half_c + rank as i64 % 2;
        let v = normal_form_loop(NormalFormSpec { c, rank, samples: SAMPLES }).unwrap();
        prop_assert!(v.antipodal_residual() < 1e-12);
        prop_assert!(v.unitarity_residual() < 1e-12);
        prop_assert_eq!(det_winding(&v), c);
    }

    #[test]
    fn equator_gauge_winding_is_half_the_difference(seed in 0u64..1000, rank in 1usize..=3, m in -2i64..=2, half_c in -1i64..=1) {
        let c = 2 * half_c + rank as i64 % 2;
        let u = normal_form_loop(NormalFormSpec { c, rank, samples: SAMPLES }).unwrap();
        let g = unitary_loop(seed, rank, m);
        let h = SAMPLES / 2;
        // G(phi + pi)^t U(phi) G(phi) keeps U(phi + pi)^t = -U(phi)
        let moved = TransitionLoop {
            samples: (0..SAMPLES).map(|l| g[(l + h) % SAMPLES].transpose() * &u.samples[l] * &g[l]).collect(),
        };
        prop_assert!(moved.antipodal_residual() < 1e-10);
        prop_assert_eq!(det_winding(&moved), c + 2 * m);

        let w = solve_equator_gauge(&moved, &u).unwrap();
        prop_assert!(w.continuity_pi.max(w.continuity_two_pi) < 1e-8);
        prop_assert_eq!(winding_obstruction(&w).unwrap(), -m);
    }

    #[test]
    fn skew_normal_form_reaches_blocks(seed in 0u64..1000, pairs in 1usize..=2, m_plus in -1i64..=1, m_minus in -1i64..=1) {
        let n = 2 * pairs;
        let s0 = skew_block(&vec![0.0; pairs]);
        let skew = |g: Vec<CMatrix>| TransitionLoop { samples: g.iter().map(|g| g.transpose() * &s0 * g).collect() };
        let plus = skew(unitary_loop(seed, n, m_plus));
        let minus = skew(unitary_loop(seed + 7919, n, m_minus));
        let c = det_winding(&plus) - det_winding(&minus);
        prop_assert_eq!(c, 2 * (m_plus - m_minus));

        let nf = skew_normal_form(&plus, &minus, c).unwrap();
        prop_assert!(nf.residual < 1e-8);
        prop_assert!(nf.windings.bookkeeping_ok());
        prop_assert_eq!(nf.windings.obstruction(), 0);

        let off = skew_normal_form(&plus, &minus, c + 2).unwrap();
        prop_assert!(off.windings.bookkeeping_ok());
        prop_assert_eq!(off.windings.obstruction().abs(), 1);
    }
}

/// Analysis at the default grid. Draws that stay under-resolved after the
/// automatic refinement are rejected rather than failed.
fn analyzed(manifold: Manifold, seed: u64) -> Result<FieldAnalysis, TestCaseError> {
    let grid = Grid::build(manifold, 32, 64).unwrap();
    let field = build(&ModelSpec::RandomTri {
        manifold,
        n_a: 4,
        frequency_cutoff: 2,
        seed,
    })
    .unwrap();
    match analyze_field(&field, &grid, &Tolerances::default()) {
        Ok(a) => Ok(a),
        Err(e) if e.is_resolution() => Err(TestCaseError::reject(e.to_string())),
        Err(e) => Err(TestCaseError::fail(e.to_string())),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn random_sphere_models_obey_parity(seed in 1000u64..100_000) {
        let a = analyzed(Manifold::Sphere, seed)?;
        prop_assert!(a.tri.pass);
        for g in a.groups.iter().chain(&a.composites) {
            let r = &g.report;
            prop_assert_eq!((r.c_plaquette - r.rank as i64).rem_euclid(2), 0);
            prop_assert_eq!(r.c_plaquette, r.c_winding);
            prop_assert!(r.residuals.curvature_evenness <= r.residuals.evenness_tol);
            if r.rank % 2 == 0 {
                prop_assert_eq!(r.k.map(|k| 2 * k), Some(r.c_plaquette));
            }
        }
        prop_assert!(a.chern_sum.is_none_or(|s| s == 0));
    }

    #[test]
    fn random_torus_models_are_even(seed in 1000u64..100_000) {
        let a = analyzed(Manifold::Torus, seed)?;
        prop_assert!(a.kramers_residual.unwrap() < 1e-10);
        for g in a.groups.iter().chain(&a.composites) {
            let r = &g.report;
            prop_assert_eq!(r.rank % 2, 0);
            prop_assert_eq!(r.c_plaquette % 2, 0);
            prop_assert_eq!(r.k.map(|k| 2 * k), Some(r.c_plaquette));
            prop_assert_eq!(r.k_census, r.k);
        }
    }
}
