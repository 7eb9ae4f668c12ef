//! Model zoo: spin rotors, a Kramers-pair sphere model, a doubled Chern
//! insulator on the torus, random TRI ensembles, TRI-broken controls and
//! linear TRI deformation paths.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bands::{spectrum_on_grid, AntiUnitary, BandGroup, Evaluator, HamiltonianField};
use crate::error::{Error, Result};
use crate::invariants::{chern_plaquette, Tolerances};
use crate::numkit::{c64, eigh, kron, max_abs, pauli, CMatrix, C64};
use crate::phasespace::{Grid, Manifold, PhasePoint};

fn default_cutoff() -> u32 {
    2
}

/// A model and its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum ModelSpec {
    /// `H(n) = n . S` for spin `two_j / 2` on the sphere.
    RotorSpin {
        two_j: u32,
        #[serde(default)]
        epsilon: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Four levels on the sphere with two exactly degenerate doublets,
    /// lower doublet of Chern number 2.
    KramersPairSphere {
        #[serde(default)]
        epsilon: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Chern insulator block and its time-reversed copy on the torus.
    TorusDoubledChern {
        mass: f64,
        #[serde(default)]
        epsilon: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Symmetrized random low-frequency field.
    RandomTri {
        manifold: Manifold,
        n_a: usize,
        #[serde(default = "default_cutoff")]
        frequency_cutoff: u32,
        seed: u64,
    },
    /// Position-independent TRI Hamiltonian with flat doublets.
    ConstantTri { manifold: Manifold, n_a: usize },
    /// `base` plus a constant term odd under time reversal.
    TriBrokenControl {
        base: Box<ModelSpec>,
        breaking_strength: f64,
    },
}

impl ModelSpec {
    pub fn manifold(&self) -> Manifold {
        match self {
            ModelSpec::RotorSpin { .. } | ModelSpec::KramersPairSphere { .. } => Manifold::Sphere,
            ModelSpec::TorusDoubledChern { .. } => Manifold::Torus,
            ModelSpec::RandomTri { manifold, .. } | ModelSpec::ConstantTri { manifold, .. } => {
                *manifold
            }
            ModelSpec::TriBrokenControl { base, .. } => base.manifold(),
        }
    }

    pub fn is_control(&self) -> bool {
        matches!(self, ModelSpec::TriBrokenControl { .. })
    }

    /// Same model with its seed replaced, where it has one.
    pub fn with_seed(&self, new_seed: u64) -> ModelSpec {
        let mut m = self.clone();
        match &mut m {
            ModelSpec::RotorSpin { seed, .. }
            | ModelSpec::KramersPairSphere { seed, .. }
            | ModelSpec::TorusDoubledChern { seed, .. }
            | ModelSpec::RandomTri { seed, .. } => *seed = new_seed,
            ModelSpec::ConstantTri { .. } => {}
            ModelSpec::TriBrokenControl { base, .. } => **base = base.with_seed(new_seed),
        }
        m
    }
}

fn check_even_dim(n_a: usize) -> Result<()> {
    if n_a < 2 || !n_a.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "n_a must be even and positive, got {n_a}"
        )));
    }
    Ok(())
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(Error::Config(format!(
            "{name} must be finite and non-negative, got {v}"
        )));
    }
    Ok(())
}

/// Time reversal used by the generic models: `i sigma_y (x) I` on the
/// sphere, `(x, y) -> (-conj y, conj x)` on the torus.
pub fn default_tr(manifold: Manifold, n_a: usize) -> Result<AntiUnitary> {
    check_even_dim(n_a)?;
    match manifold {
        Manifold::Sphere => AntiUnitary::kramers(n_a),
        Manifold::Torus => AntiUnitary::block_swap(n_a),
    }
}

/// Spin matrices `(S_x, S_y, S_z)` in the basis `m = j, j - 1, ..., -j`.
pub fn spin_matrices(two_j: u32) -> [CMatrix; 3] {
    let n = two_j as usize + 1;
    let j = two_j as f64 / 2.0;
    let mut plus = CMatrix::zeros(n, n);
    let mut sz = CMatrix::zeros(n, n);
    for k in 0..n {
        let m = j - k as f64;
        sz[(k, k)] = c64(m, 0.0);
        if k > 0 {
            plus[(k - 1, k)] = c64((j * (j + 1.0) - m * (m + 1.0)).sqrt(), 0.0);
        }
    }
    let minus = plus.adjoint();
    let sx = (&plus + &minus).scale(0.5);
    let sy = (&plus - &minus) * c64(0.0, -0.5);
    [sx, sy, sz]
}

fn random_hermitian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> CMatrix {
    let x = CMatrix::from_fn(n, n, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        c64(re, im)
    });
    (&x + x.adjoint()).scale(0.5 * scale / (n as f64).sqrt())
}

/// Random Hermitian field of low frequency: a polynomial of degree
/// `cutoff` in the unit vector on the sphere, a trigonometric polynomial
/// on the torus. Higher harmonics are damped by `1 / (1 + degree)`.
pub fn random_field(manifold: Manifold, n_a: usize, cutoff: u32, seed: u64) -> Evaluator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = cutoff as i32;
    match manifold {
        Manifold::Sphere => {
            let mut terms: Vec<([i32; 3], CMatrix)> = Vec::new();
            for deg in 0..=f {
                for a in 0..=deg {
                    for b in 0..=deg - a {
                        let c = deg - a - b;
                        terms.push((
                            [a, b, c],
                            random_hermitian(&mut rng, n_a, 1.0 / (1.0 + deg as f64)),
                        ));
                    }
                }
            }
            Arc::new(move |x| {
                let n = x.unit_vector().unwrap_or([0.0, 0.0, 1.0]);
                let mut h = CMatrix::zeros(n_a, n_a);
                for (pw, m) in &terms {
                    let w = n[0].powi(pw[0]) * n[1].powi(pw[1]) * n[2].powi(pw[2]);
                    h += m.scale(w);
                }
                h
            })
        }
        Manifold::Torus => {
            let mut terms: Vec<(i32, i32, CMatrix, CMatrix)> = Vec::new();
            for a in 0..=f {
                for b in -f..=f {
                    if a == 0 && b < 0 {
                        continue;
                    }
                    let damp = 1.0 / (1.0 + (a.abs() + b.abs()) as f64);
                    let cos = random_hermitian(&mut rng, n_a, damp);
                    let sin = random_hermitian(&mut rng, n_a, damp);
                    terms.push((a, b, cos, sin));
                }
            }
            Arc::new(move |x| {
                let (q, p) = x.coords();
                let mut h = CMatrix::zeros(n_a, n_a);
                for (a, b, cos, sin) in &terms {
                    let t = *a as f64 * q + *b as f64 * p;
                    h += cos.scale(t.cos());
                    if *a != 0 || *b != 0 {
                        h += sin.scale(t.sin());
                    }
                }
                h
            })
        }
    }
}

fn perturbed(base: HamiltonianField, epsilon: f64, seed: u64) -> HamiltonianField {
    if epsilon == 0.0 {
        return base;
    }
    let cutoff = match base.manifold {
        Manifold::Sphere => 2,
        Manifold::Torus => 1,
    };
    let raw = random_field(base.manifold, base.n_a(), cutoff, seed);
    let sym = crate::bands::symmetrize_tri(raw, base.manifold, base.tr.clone());
    base.plus(sym.evaluator(), epsilon)
}

/// Constant anti-symmetric part of `diag(1..n)` under time reversal,
/// scaled to unit max-norm. Adding `b` times it breaks TRI by exactly `2b`.
pub fn tr_odd_term(tr: &AntiUnitary) -> CMatrix {
    let n = tr.dim();
    // diagonal alone can leave the eigenvectors symmetric, so mix the levels too
    let z = CMatrix::from_fn(n, n, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Equal => c64(i as f64 + 1.0, 0.0),
        std::cmp::Ordering::Less => c64(0.5, 0.25 * (j - i) as f64),
        std::cmp::Ordering::Greater => c64(0.5, -0.25 * (i - j) as f64),
    });
    let k = (&z - tr.conjugate(&z)).scale(0.5);
    let m = max_abs(&k);
    k.scale(1.0 / m)
}

fn kramers_pair_sphere() -> Result<HamiltonianField> {
    let [id, sx, sy, sz] = pauli();
    let raw = [0.3f64, 0.5, 0.8];
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let m = raw.map(|v| v / norm);
    let pairing = kron(&(sx.scale(m[0]) + sy.scale(m[1]) + sz.scale(m[2])), &sy).scale(0.4);
    let splitting = kron(&id, &sz).scale(0.3);
    let (sx, sy, sz, id) = (sx.clone(), sy.clone(), sz.clone(), id.clone());
    let eval: Evaluator = Arc::new(move |x| {
        let n = x.unit_vector().unwrap_or([0.0, 0.0, 1.0]);
        let spin = sx.scale(n[0]) + sy.scale(n[1]) + sz.scale(n[2]);
        let h = kron(&spin, &id) + &splitting + &pairing;
        // flatten: the lower doublet at -1, the upper at +1
        match eigh(&h) {
            Ok(e) => {
                let v = e.columns(0, 1);
                CMatrix::identity(4, 4) - (&v * v.adjoint()).scale(2.0)
            }
            Err(_) => CMatrix::from_element(4, 4, C64::new(f64::NAN, 0.0)),
        }
    });
    Ok(HamiltonianField::new(
        Manifold::Sphere,
        AntiUnitary::kramers(4)?,
        eval,
    ))
}

fn torus_doubled(mass: f64) -> Result<HamiltonianField> {
    let [_, sx, sy, sz] = pauli();
    let block = move |q: f64, p: f64| {
        sx.scale(q.sin()) + sy.scale(p.sin()) + sz.scale(mass - q.cos() - p.cos())
    };
    let eval: Evaluator = Arc::new(move |x| {
        let (q, p) = x.coords();
        let a = block(q, p);
        let b = crate::numkit::conj(&block(q, -p));
        let mut h = CMatrix::zeros(4, 4);
        h.view_mut((0, 0), (2, 2)).copy_from(&a);
        h.view_mut((2, 2), (2, 2)).copy_from(&b);
        h
    });
    Ok(HamiltonianField::new(
        Manifold::Torus,
        AntiUnitary::block_swap(4)?,
        eval,
    ))
}

/// Hamiltonian field of a model.
pub fn build(spec: &ModelSpec) -> Result<HamiltonianField> {
    match spec {
        ModelSpec::RotorSpin {
            two_j,
            epsilon,
            seed,
        } => {
            check_nonneg("epsilon", *epsilon)?;
            if two_j % 2 == 0 {
                return Err(Error::Config(format!(
                    "two_j = {two_j}: the rotor spin must be half-integer (odd two_j)"
                )));
            }
            let tr = AntiUnitary::spin_reversal(*two_j)?;
            let [sx, sy, sz] = spin_matrices(*two_j);
            let eval: Evaluator = Arc::new(move |x| {
                let n = x.unit_vector().unwrap_or([0.0, 0.0, 1.0]);
                sx.scale(n[0]) + sy.scale(n[1]) + sz.scale(n[2])
            });
            Ok(perturbed(
                HamiltonianField::new(Manifold::Sphere, tr, eval),
                *epsilon,
                *seed,
            ))
        }
        ModelSpec::KramersPairSphere { epsilon, seed } => {
            check_nonneg("epsilon", *epsilon)?;
            Ok(perturbed(kramers_pair_sphere()?, *epsilon, *seed))
        }
        ModelSpec::TorusDoubledChern {
            mass,
            epsilon,
            seed,
        } => {
            check_nonneg("epsilon", *epsilon)?;
            if !mass.is_finite() {
                return Err(Error::Config(format!("mass must be finite, got {mass}")));
            }
            Ok(perturbed(torus_doubled(*mass)?, *epsilon, *seed))
        }
        ModelSpec::RandomTri {
            manifold,
            n_a,
            frequency_cutoff,
            seed,
        } => {
            check_even_dim(*n_a)?;
            if *frequency_cutoff > 6 {
                return Err(Error::Config(format!(
                    "frequency_cutoff {frequency_cutoff} exceeds 6"
                )));
            }
            let raw = random_field(*manifold, *n_a, *frequency_cutoff, *seed);
            Ok(crate::bands::symmetrize_tri(
                raw,
                *manifold,
                default_tr(*manifold, *n_a)?,
            ))
        }
        ModelSpec::ConstantTri { manifold, n_a } => {
            let tr = default_tr(*manifold, *n_a)?;
            let half = n_a / 2;
            let levels: Vec<C64> = (0..half)
                .map(|k| c64(2.0 * k as f64 - (half as f64 - 1.0), 0.0))
                .collect();
            let h = kron(&CMatrix::identity(2, 2), &crate::numkit::diag(&levels));
            let eval: Evaluator = Arc::new(move |_| h.clone());
            Ok(HamiltonianField::new(*manifold, tr, eval))
        }
        ModelSpec::TriBrokenControl {
            base,
            breaking_strength,
        } => {
            if !(breaking_strength.is_finite() && *breaking_strength > 0.0) {
                return Err(Error::Config(format!(
                    "breaking_strength must be positive, got {breaking_strength}"
                )));
            }
            let field = build(base)?;
            let k = tr_odd_term(&field.tr);
            Ok(field.plus(Arc::new(move |_| k.clone()), *breaking_strength))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PathVerdict {
    #[serde(rename = "GAPPED-CONSTANT-C")]
    GappedConstantC,
    #[serde(rename = "GAP-CLOSES")]
    GapCloses,
}

#[derive(Clone, Debug, Serialize)]
pub struct PathSample {
    pub s: f64,
    pub gap: f64,
    /// `None` where the gap is closed or the flux is unresolved.
    pub c: Option<i64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TriPath {
    pub bands: [usize; 2],
    pub samples: Vec<PathSample>,
    pub verdict: PathVerdict,
    /// Interval of `s` containing the closing.
    pub bracket: Option<[f64; 2]>,
    /// Smallest gap seen, including bisection samples.
    pub min_gap: f64,
    /// Largest TRI residual over the path samples.
    pub tri_residual: f64,
}

fn sample_at(
    h0: &HamiltonianField,
    h1: &HamiltonianField,
    s: f64,
    lo: usize,
    hi: usize,
    grid: &Grid,
    tol: &Tolerances,
) -> Result<(PathSample, f64)> {
    let hs = h0.interpolate(h1, s)?;
    let tri = crate::bands::check_tri(&hs, grid, tol.tri_tol)?.max_residual;
    let spectrum = spectrum_on_grid(&hs, grid)?;
    let group = BandGroup::measured(&spectrum, lo, hi)?;
    let c = if group.min_gap > tol.gap_floor {
        match chern_plaquette(&spectrum, grid, &group) {
            Ok((_, c)) => Some(c),
            Err(e) if e.is_resolution() || matches!(e, Error::GapClosed(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok((
        PathSample {
            s,
            gap: group.min_gap,
            c,
        },
        tri,
    ))
}

/// Scan of the linear path `(1 - s) H0 + s H1` for bands `lo..=hi`.
pub fn tri_path(
    h0: &HamiltonianField,
    h1: &HamiltonianField,
    lo: usize,
    hi: usize,
    steps: usize,
    grid: &Grid,
    tol: &Tolerances,
) -> Result<TriPath> {
    if steps < 2 {
        return Err(Error::Config(format!(
            "a path needs at least 2 samples, got {steps}"
        )));
    }
    h0.interpolate(h1, 0.0)?;
    let raw: Result<Vec<(PathSample, f64)>> = (0..steps)
        .into_par_iter()
        .map(|i| sample_at(h0, h1, i as f64 / (steps - 1) as f64, lo, hi, grid, tol))
        .collect();
    let raw = raw?;
    let tri_residual = raw.iter().map(|r| r.1).fold(0.0, f64::max);
    let samples: Vec<PathSample> = raw.into_iter().map(|r| r.0).collect();
    for end in [&samples[0], &samples[steps - 1]] {
        if end.c.is_none() {
            return Err(Error::Tracking(format!(
                "bands [{lo}, {hi}] are not a gapped group at s = {} (gap {:.3e})",
                end.s, end.gap
            )));
        }
    }
    let mut min_gap = samples.iter().map(|p| p.gap).fold(f64::INFINITY, f64::min);
    if let Some(i) = samples.iter().position(|p| p.c.is_none()) {
        let worst = (0..steps)
            .min_by(|&a, &b| samples[a].gap.total_cmp(&samples[b].gap))
            .unwrap_or(i);
        let k = if samples[worst].c.is_none() { worst } else { i };
        let bracket = [samples[k - 1].s, samples[k + 1].s];
        return Ok(TriPath {
            bands: [lo, hi],
            samples,
            verdict: PathVerdict::GapCloses,
            bracket: Some(bracket),
            min_gap,
            tri_residual,
        });
    }
    let change = samples.windows(2).position(|w| w[0].c != w[1].c);
    let Some(i) = change else {
        return Ok(TriPath {
            bands: [lo, hi],
            samples,
            verdict: PathVerdict::GappedConstantC,
            bracket: None,
            min_gap,
            tri_residual,
        });
    };
    // gapped on every sample yet c jumps: the closing lies between samples
    let (mut a, mut b) = (samples[i].s, samples[i + 1].s);
    let ca = samples[i].c;
    for _ in 0..40 {
        if b - a < 1e-9 {
            break;
        }
        let mid = 0.5 * (a + b);
        let (p, _) = sample_at(h0, h1, mid, lo, hi, grid, tol)?;
        min_gap = min_gap.min(p.gap);
        match p.c {
            None => {
                let half = (b - a) / 2.0;
                a = mid - half / 2.0;
                b = mid + half / 2.0;
                break;
            }
            Some(c) if Some(c) == ca => a = mid,
            Some(_) => b = mid,
        }
    }
    Ok(TriPath {
        bands: [lo, hi],
        samples,
        verdict: PathVerdict::GapCloses,
        bracket: Some([a, b]),
        min_gap,
        tri_residual,
    })
}

/// Gap of bands `lo..=hi` at one point.
pub fn point_gap(field: &HamiltonianField, x: &PhasePoint, lo: usize, hi: usize) -> Result<f64> {
    let e = eigh(&field.eval(x))?;
    let mut gap = f64::INFINITY;
    if lo > 0 {
        gap = gap.min(e.values[lo] - e.values[lo - 1]);
    }
    if hi + 1 < e.values.len() {
        gap = gap.min(e.values[hi + 1] - e.values[hi]);
    }
    Ok(gap)
}
