//! Dense complex linear algebra used throughout the crate.
//!
//! Matrices are `nalgebra::DMatrix<Complex64>`. The Hermitian eigensolver,
//! SVD and Schur factorizations come from nalgebra; the Pfaffian and the loop
//! winding number are implemented here.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, Schur, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

/// Hermiticity tolerance accepted by [`eigh`].
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Smallest singular value accepted by [`polar_unitary`].
pub const SINGULAR_FLOOR: f64 = 1e-10;
/// Skew-symmetry tolerance accepted by [`pfaffian`].
pub const SKEW_TOL: f64 = 1e-9;
/// Default modulus floor for [`PhaseLoop`] samples.
pub const MAGNITUDE_FLOOR: f64 = 1e-10;
/// Largest sample count a refining caller may request for a loop.
pub const MAX_LOOP_SAMPLES: usize = 1 << 14;

pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn cis(angle: f64) -> C64 {
    C64::from_polar(1.0, angle)
}

/// Largest entry modulus.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn conj(m: &CMatrix) -> CMatrix {
    m.map(|z| z.conj())
}

pub fn hermiticity_residual(h: &CMatrix) -> f64 {
    max_abs(&(h - h.adjoint()))
}

/// `max |U^dagger U - I|`, entrywise.
pub fn unitarity_residual(u: &CMatrix) -> f64 {
    let n = u.ncols();
    max_abs(&(u.adjoint() * u - CMatrix::identity(n, n)))
}

pub fn skew_residual(s: &CMatrix) -> f64 {
    max_abs(&(s + s.transpose()))
}

pub fn spectral_norm(m: &CMatrix) -> f64 {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0_f64, |acc, &s| acc.max(s))
}

/// Largest eigenphase of `a^dagger b` for unitaries `a`, `b`, in radians.
pub fn unitary_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    let d = spectral_norm(&(a - b)).min(2.0);
    2.0 * (d / 2.0).asin()
}

pub fn determinant(m: &CMatrix) -> C64 {
    m.clone().determinant()
}

/// Hermitian eigendecomposition with deterministic output.
///
/// Eigenvalues come back ascending. Each eigenvector is phase-fixed so that its
/// first component of non-negligible modulus is real and positive.
#[derive(Clone, Debug)]
pub struct Eigh {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl Eigh {
    /// Columns `lo..=hi` of the eigenvector matrix.
    pub fn columns(&self, lo: usize, hi: usize) -> CMatrix {
        self.vectors.columns(lo, hi - lo + 1).into_owned()
    }
}

pub fn eigh(h: &CMatrix) -> Result<Eigh> {
    if !h.is_square() {
        return Err(Error::Domain(format!(
            "eigh needs a square matrix, got {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    let scale = max_abs(h).max(1.0);
    let res = hermiticity_residual(h);
    if res > HERMITIAN_TOL * scale {
        return Err(Error::Domain(format!(
            "eigh input is not Hermitian (residual {res:.3e})"
        )));
    }
    if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Domain("eigh input has non-finite entries".into()));
    }
    let sym = (h + h.adjoint()).scale(0.5);
    let dec = SymmetricEigen::new(sym);
    let n = h.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dec.eigenvalues[a].total_cmp(&dec.eigenvalues[b]));

    let mut vectors = CMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        values.push(dec.eigenvalues[src]);
        let mut col = dec.eigenvectors.column(src).into_owned();
        let norm = col.norm();
        col.unscale_mut(norm);
        if let Some(lead) = col.iter().find(|z| z.norm() > 1e-8).copied() {
            let phase = lead.conj() / lead.norm();
            col *= phase;
        }
        vectors.set_column(dst, &col);
    }
    Ok(Eigh { values, vectors })
}

/// Unitary factor `U` of the polar decomposition `A = U P`.
pub fn polar_unitary(a: &CMatrix) -> Result<CMatrix> {
    if !a.is_square() {
        return Err(Error::Domain("polar_unitary needs a square matrix".into()));
    }
    polar_isometry(a)
}

/// Closest matrix with orthonormal columns to a tall (or square) `a`.
pub fn polar_isometry(a: &CMatrix) -> Result<CMatrix> {
    if a.nrows() < a.ncols() {
        return Err(Error::Domain("polar factor needs rows >= cols".into()));
    }
    let svd = a.clone().svd(true, true);
    let smin = svd
        .singular_values
        .iter()
        .fold(f64::INFINITY, |acc, &s| acc.min(s));
    if smin <= SINGULAR_FLOOR {
        return Err(Error::Singular(smin));
    }
    let u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    Ok(u * v_t)
}

/// Pfaffian of an even-dimensional skew-symmetric matrix.
///
/// Skew-symmetric Gaussian elimination with partial pivoting (Parlett-Reid
/// `L T L^t` reduction). O(n^3).
pub fn pfaffian(s: &CMatrix) -> Result<C64> {
    let n = s.nrows();
    if !s.is_square() || !n.is_multiple_of(2) {
        return Err(Error::Domain(format!(
            "pfaffian needs an even square matrix, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    let scale = max_abs(s).max(1.0);
    let res = skew_residual(s);
    if res > SKEW_TOL * scale {
        return Err(Error::Domain(format!(
            "pfaffian input is not skew-symmetric (residual {res:.3e})"
        )));
    }
    let mut a = (s - s.transpose()).scale(0.5);
    let mut pf = C64::new(1.0, 0.0);
    for k in (0..n.saturating_sub(1)).step_by(2) {
        let mut kp = k + 1;
        let mut best = a[(k + 1, k)].norm();
        for r in (k + 2)..n {
            let v = a[(r, k)].norm();
            if v > best {
                best = v;
                kp = r;
            }
        }
        if kp != k + 1 {
            a.swap_rows(k + 1, kp);
            a.swap_columns(k + 1, kp);
            pf = -pf;
        }
        let pivot = a[(k, k + 1)];
        if pivot == C64::new(0.0, 0.0) {
            return Ok(C64::new(0.0, 0.0));
        }
        pf *= pivot;
        if k + 2 < n {
            let tau: Vec<C64> = ((k + 2)..n).map(|c| a[(k, c)] / pivot).collect();
            let col: Vec<C64> = ((k + 2)..n).map(|r| a[(r, k + 1)]).collect();
            for (i, r) in ((k + 2)..n).enumerate() {
                for (j, c) in ((k + 2)..n).enumerate() {
                    a[(r, c)] += tau[i] * col[j] - col[i] * tau[j];
                }
            }
        }
    }
    Ok(pf)
}

/// Samples of a nonvanishing complex function on a closed loop.
///
/// Sample `i` sits at angle `2 pi i / len`; the last sample connects back to
/// the first.
#[derive(Clone, Debug)]
pub struct PhaseLoop {
    samples: Vec<C64>,
}

impl PhaseLoop {
    pub fn new(samples: Vec<C64>) -> Result<Self> {
        Self::with_floor(samples, MAGNITUDE_FLOOR)
    }

    pub fn with_floor(samples: Vec<C64>, floor: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Domain("phase loop has no samples".into()));
        }
        if let Some((i, z)) = samples
            .iter()
            .enumerate()
            .find(|(_, z)| z.norm().is_nan() || z.norm() <= floor)
        {
            return Err(Error::Degenerate(format!(
                "loop sample {i} has modulus {:.3e} below floor {floor:.1e}",
                z.norm()
            )));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[C64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Principal-value phase increments, one per loop edge.
    pub fn increments(&self) -> Vec<f64> {
        let n = self.samples.len();
        (0..n)
            .map(|i| (self.samples[(i + 1) % n] / self.samples[i]).arg())
            .collect()
    }

    /// Pointwise product with another loop sampled at the same angles.
    pub fn product(&self, other: &PhaseLoop) -> Result<PhaseLoop> {
        if self.len() != other.len() {
            return Err(Error::Domain(
                "loops sampled at different resolutions".into(),
            ));
        }
        PhaseLoop::with_floor(
            self.samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| a * b)
                .collect(),
            0.0,
        )
    }
}

/// Largest phase step a loop may take between consecutive samples.
pub const MAX_PHASE_STEP: f64 = PI / 2.0;

/// Degree of a sampled loop: the sum of principal-value phase increments over
/// `2 pi`. Fails if any step reaches `pi/2`.
pub fn winding_number(lp: &PhaseLoop) -> Result<i64> {
    let mut total = 0.0;
    for (i, d) in lp.increments().into_iter().enumerate() {
        if d.abs() >= MAX_PHASE_STEP {
            return Err(Error::Resolution(format!(
                "phase step {d:.3} rad at loop sample {i} of {}",
                lp.len()
            )));
        }
        total += d;
    }
    Ok((total / TAU).round() as i64)
}

/// Winding number of a loop produced by `sampler(count)`, doubling `count` on
/// resolution errors until [`MAX_LOOP_SAMPLES`] is exceeded.
pub fn winding_refined<F>(mut sampler: F, start: usize) -> Result<(i64, usize)>
where
    F: FnMut(usize) -> Result<PhaseLoop>,
{
    let mut count = start.max(4);
    loop {
        let lp = sampler(count)?;
        match winding_number(&lp) {
            Ok(w) => return Ok((w, count)),
            Err(e) if e.is_resolution() && count * 2 <= MAX_LOOP_SAMPLES => count *= 2,
            Err(e) => return Err(e),
        }
    }
}

/// Eigenvalues and Schur vectors of a unitary matrix (normal, so the Schur
/// form is diagonal up to rounding).
fn unitary_spectrum(u: &CMatrix) -> (CMatrix, Vec<C64>) {
    let (q, t) = Schur::new(u.clone()).unpack();
    let eig = t.diagonal().iter().map(|z| z / z.norm()).collect();
    (q, eig)
}

/// Principal logarithm of a unitary: anti-Hermitian `L` with `exp(L) = u` and
/// eigenphases in `(-pi, pi)`.
pub fn unitary_log(u: &CMatrix) -> Result<CMatrix> {
    log_with_cut(u, PI)
}

/// Logarithm of a unitary with the branch cut placed in the widest gap of its
/// eigenphase spectrum. Always succeeds for unitary input.
pub fn unitary_log_any(u: &CMatrix) -> Result<CMatrix> {
    let (_, eig) = unitary_spectrum(u);
    let mut phases: Vec<f64> = eig.iter().map(|z| z.arg()).collect();
    phases.sort_by(f64::total_cmp);
    let n = phases.len();
    let mut cut = PI;
    let mut widest = -1.0;
    for i in 0..n {
        let a = phases[i];
        let b = if i + 1 < n {
            phases[i + 1]
        } else {
            phases[0] + TAU
        };
        if b - a > widest {
            widest = b - a;
            cut = a + 0.5 * (b - a);
        }
    }
    log_with_cut(u, cut)
}

fn log_with_cut(u: &CMatrix, cut: f64) -> Result<CMatrix> {
    let (q, eig) = unitary_spectrum(u);
    let n = eig.len();
    let mut d = CMatrix::zeros(n, n);
    for (i, z) in eig.iter().enumerate() {
        // phase measured in (cut - 2pi, cut)
        let mut ph = (z * cis(-cut)).arg() + cut;
        if ph >= cut {
            ph -= TAU;
        }
        if (ph - cut).abs() < 1e-9 || (ph - (cut - TAU)).abs() < 1e-9 {
            return Err(Error::Branch(format!(
                "eigenphase {ph:.6} sits on the branch cut at {cut:.6}"
            )));
        }
        d[(i, i)] = C64::new(0.0, ph);
    }
    Ok(&q * d * q.adjoint())
}

/// `exp(a)` for anti-Hermitian `a`.
pub fn expm_skew_hermitian(a: &CMatrix) -> Result<CMatrix> {
    // a = -i h with h Hermitian
    let h = a * C64::new(0.0, 1.0);
    let dec = eigh(&((&h + h.adjoint()).scale(0.5)))?;
    let n = a.nrows();
    let mut d = CMatrix::zeros(n, n);
    for (i, &l) in dec.values.iter().enumerate() {
        d[(i, i)] = cis(-l);
    }
    Ok(&dec.vectors * d * dec.vectors.adjoint())
}

/// Embed a list of diagonal entries.
pub fn diag(entries: &[C64]) -> CMatrix {
    let n = entries.len();
    CMatrix::from_fn(n, n, |i, j| {
        if i == j {
            entries[i]
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Pauli matrices `[I, x, y, z]`.
pub fn pauli() -> [CMatrix; 4] {
    let z = C64::new(0.0, 0.0);
    let o = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    [
        CMatrix::from_row_slice(2, 2, &[o, z, z, o]),
        CMatrix::from_row_slice(2, 2, &[z, o, o, z]),
        CMatrix::from_row_slice(2, 2, &[z, -i, i, z]),
        CMatrix::from_row_slice(2, 2, &[o, z, z, -o]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut impl Rng, n: usize) -> CMatrix {
        CMatrix::from_fn(n, n, |_, _| {
            c64(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn random_hermitian(rng: &mut impl Rng, n: usize) -> CMatrix {
        let a = random_matrix(rng, n);
        (&a + a.adjoint()).scale(0.5)
    }

    fn random_skew(rng: &mut impl Rng, n: usize) -> CMatrix {
        let a = random_matrix(rng, n);
        (&a - a.transpose()).scale(0.5)
    }

    #[test]
    fn eigh_diagonal_sorts_ascending() {
        let h = diag(&[c64(2.0, 0.0), c64(1.0, 0.0)]);
        let e = eigh(&h).unwrap();
        assert_eq!(e.values, vec![1.0, 2.0]);
        assert!((e.vectors[(1, 0)] - c64(1.0, 0.0)).norm() < 1e-14);
        assert!((e.vectors[(0, 1)] - c64(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn eigh_pauli_x() {
        let [_, sx, _, _] = pauli();
        let e = eigh(&sx).unwrap();
        assert!((e.values[0] + 1.0).abs() < 1e-14 && (e.values[1] - 1.0).abs() < 1e-14);
        let r = 0.5f64.sqrt();
        assert!((e.vectors[(0, 0)] - c64(r, 0.0)).norm() < 1e-12);
        assert!((e.vectors[(1, 0)] + c64(r, 0.0)).norm() < 1e-12);
        assert!((e.vectors[(0, 1)] - c64(r, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn eigh_random_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_hermitian(&mut rng, 8);
        let e = eigh(&h).unwrap();
        let lam = diag(&e.values.iter().map(|&l| c64(l, 0.0)).collect::<Vec<_>>());
        let resid = max_abs(&(&h * &e.vectors - &e.vectors * lam));
        assert!(resid <= 1e-10 * max_abs(&h), "residual {resid}");
        assert!(unitarity_residual(&e.vectors) <= 1e-12);
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn eigh_rejects_non_hermitian() {
        let m =
            CMatrix::from_row_slice(2, 2, &[c64(0., 0.), c64(1., 0.), c64(0., 0.), c64(0., 0.)]);
        assert!(matches!(eigh(&m), Err(Error::Domain(_))));
    }

    #[test]
    fn polar_of_identity_and_scaled_unitary() {
        let id = CMatrix::identity(3, 3);
        assert!(max_abs(&(polar_unitary(&id).unwrap() - &id)) < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = polar_unitary(&random_matrix(&mut rng, 4)).unwrap();
        let u = polar_unitary(&q.scale(2.0)).unwrap();
        assert!(max_abs(&(u - &q)) < 1e-12);
    }

    #[test]
    fn polar_matches_brute_force_nearest_unitary() {
        // U(2) = e^{i a} [[e^{i b} cos t, -e^{-i c} sin t], [e^{i c} sin t, e^{-i b} cos t]]
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_matrix(&mut rng, 2) + CMatrix::identity(2, 2).scale(1.5);
        let param = |x: [f64; 4]| {
            let g = cis(x[0]);
            CMatrix::from_row_slice(
                2,
                2,
                &[
                    g * cis(x[1]) * x[3].cos(),
                    -g * cis(-x[2]) * x[3].sin(),
                    g * cis(x[2]) * x[3].sin(),
                    g * cis(-x[1]) * x[3].cos(),
                ],
            )
        };
        let dist = |x: [f64; 4]| (&a - param(x)).norm();
        let mut best = ([0.0; 4], f64::INFINITY);
        let steps = 24;
        for i in 0..steps {
            for j in 0..steps {
                for k in 0..steps {
                    for l in 0..steps {
                        let x = [
                            TAU * i as f64 / steps as f64,
                            PI * j as f64 / steps as f64,
                            PI * k as f64 / steps as f64,
                            PI * l as f64 / steps as f64,
                        ];
                        let d = dist(x);
                        if d < best.1 {
                            best = (x, d);
                        }
                    }
                }
            }
        }
        // local coordinate descent from the best grid point
        let (mut x, mut d) = best;
        let mut h = 0.1;
        while h > 1e-10 {
            let mut moved = false;
            for c in 0..4 {
                for s in [-1.0, 1.0] {
                    let mut y = x;
                    y[c] += s * h;
                    let dy = dist(y);
                    if dy < d {
                        x = y;
                        d = dy;
                        moved = true;
                    }
                }
            }
            if !moved {
                h *= 0.5;
            }
        }
        let u = polar_unitary(&a).unwrap();
        assert!((&a - &u).norm() <= d + 1e-9);
        assert!(max_abs(&(u - param(x))) < 1e-6);
    }

    #[test]
    fn polar_rejects_singular() {
        let m = CMatrix::zeros(2, 2);
        assert!(matches!(polar_unitary(&m), Err(Error::Singular(_))));
    }

    #[test]
    fn pfaffian_small_cases() {
        let a = c64(0.3, -1.2);
        let s = CMatrix::from_row_slice(2, 2, &[c64(0., 0.), a, -a, c64(0., 0.)]);
        assert!((pfaffian(&s).unwrap() - a).norm() < 1e-15);
        let b =
            CMatrix::from_row_slice(2, 2, &[c64(0., 0.), c64(1., 0.), c64(-1., 0.), c64(0., 0.)]);
        let blocks = CMatrix::identity(2, 2).kronecker(&b);
        assert!((pfaffian(&blocks).unwrap() - c64(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn pfaffian_squares_to_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for n in [2, 4, 6, 8, 10, 12] {
            let s = random_skew(&mut rng, n);
            let pf = pfaffian(&s).unwrap();
            let det = determinant(&s);
            assert!((pf * pf - det).norm() <= 1e-8 * det.norm(), "n={n}");
        }
    }

    #[test]
    fn pfaffian_rejects_bad_input() {
        assert!(pfaffian(&CMatrix::zeros(3, 3)).is_err());
        assert!(pfaffian(&CMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn winding_examples() {
        let n = 64;
        let angles = (0..n).map(|i| TAU * i as f64 / n as f64);
        let constant = PhaseLoop::new(vec![c64(1.0, 0.0); n]).unwrap();
        assert_eq!(winding_number(&constant).unwrap(), 0);
        let fundamental = PhaseLoop::new(angles.clone().map(cis).collect()).unwrap();
        assert_eq!(winding_number(&fundamental).unwrap(), 1);
        let triple =
            PhaseLoop::new(angles.map(|t| cis(3.0 * t) * (2.0 + t.cos())).collect()).unwrap();
        assert_eq!(winding_number(&triple).unwrap(), 3);
    }

    #[test]
    fn winding_detects_under_resolution() {
        let lp = PhaseLoop::new((0..6).map(|i| cis(2.0 * TAU * i as f64 / 6.0)).collect()).unwrap();
        assert!(matches!(winding_number(&lp), Err(Error::Resolution(_))));
        let (w, count) = winding_refined(
            |n| {
                PhaseLoop::new(
                    (0..n)
                        .map(|i| cis(5.0 * TAU * i as f64 / n as f64))
                        .collect(),
                )
            },
            8,
        )
        .unwrap();
        assert_eq!(w, 5);
        assert_eq!(count, 32);
    }

    #[test]
    fn unitary_log_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let u = polar_unitary(&random_matrix(&mut rng, 4)).unwrap();
        let l = unitary_log(&u).unwrap();
        assert!(max_abs(&(&l + l.adjoint())) < 1e-10);
        assert!(max_abs(&(expm_skew_hermitian(&l).unwrap() - &u)) < 1e-10);
        let l2 = unitary_log_any(&u).unwrap();
        assert!(max_abs(&(expm_skew_hermitian(&l2).unwrap() - &u)) < 1e-10);
    }

    #[test]
    fn unitary_log_branch_failure_and_fallback() {
        let u = diag(&[c64(-1.0, 0.0), c64(1.0, 0.0)]);
        assert!(matches!(unitary_log(&u), Err(Error::Branch(_))));
        let l = unitary_log_any(&u).unwrap();
        assert!(max_abs(&(expm_skew_hermitian(&l).unwrap() - &u)) < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn loop_from(coeffs: &[(f64, f64)], n: usize, wind: i64) -> Vec<C64> {
            (0..n)
                .map(|i| {
                    let t = TAU * i as f64 / n as f64;
                    let smooth: C64 = coeffs
                        .iter()
                        .enumerate()
                        .map(|(k, &(a, b))| c64(a, b) * cis((k as f64 + 1.0) * t) * 0.2)
                        .sum();
                    cis(wind as f64 * t) * (c64(1.0, 0.0) + smooth)
                })
                .collect()
        }

        proptest! {
            #[test]
            fn winding_is_additive(
                a in -3i64..=3, b in -3i64..=3,
                ca in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2),
                cb in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2),
            ) {
                let n = 256;
                let f = PhaseLoop::new(loop_from(&ca, n, a)).unwrap();
                let g = PhaseLoop::new(loop_from(&cb, n, b)).unwrap();
                let fg = f.product(&g).unwrap();
                prop_assert_eq!(winding_number(&fg).unwrap(),
                    winding_number(&f).unwrap() + winding_number(&g).unwrap());
            }

            #[test]
            fn winding_ignores_positive_factors(
                w in -4i64..=4,
                amp in proptest::collection::vec(0.1f64..5.0, 128),
            ) {
                let n = amp.len();
                let base: Vec<C64> = (0..n).map(|i| cis(w as f64 * TAU * i as f64 / n as f64)).collect();
                let scaled: Vec<C64> = base.iter().zip(&amp).map(|(z, &r)| z * r).collect();
                prop_assert_eq!(
                    winding_number(&PhaseLoop::new(scaled).unwrap()).unwrap(),
                    winding_number(&PhaseLoop::new(base).unwrap()).unwrap()
                );
            }

            #[test]
            fn pfaffian_square_is_determinant(seed in 0u64..500, half in 1usize..=6) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let s = random_skew(&mut rng, 2 * half);
                let pf = pfaffian(&s).unwrap();
                let det = determinant(&s);
                prop_assert!((pf * pf - det).norm() <= 1e-8 * det.norm().max(1e-300));
            }
        }
    }
}
