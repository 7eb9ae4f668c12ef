//! Gauge normal forms.
//!
//! On the sphere a gauge change `v = u conj(W)` turns the equator transition
//! loop `U` into `V(phi) = W(phi + pi)^t U(phi) W(phi)`. Choosing `V` as the
//! diagonal normal form, the equation is solved for `W` on the equator and
//! then extended over the northern hemisphere, which is possible exactly
//! when `det W` does not wind. On the torus the skew transition matrices on
//! `p = 0, pi` are brought to block form by unitary congruence.

use std::f64::consts::{PI, TAU};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::bands::{transition_loop_sphere, AntiUnitary, Frame, TransitionLoop};
use crate::error::{Error, Result};
use crate::numkit::{
    c64, cis, conj, diag, expm_skew_hermitian, max_abs, polar_unitary, spectral_norm,
    unitarity_residual, unitary_log, winding_number, CMatrix, PhaseLoop,
};
use crate::phasespace::{Grid, Manifold};

/// Largest neighbour step, in radians, accepted for an extended gauge field.
pub const EXTENSION_STEP: f64 = 0.2;
/// Interior steps may exceed the boundary loop's own step by this factor.
pub const STEP_SLACK: f64 = 1.5;
/// Smoothing sweeps before the extension is declared failed.
pub const SWEEP_CAP: usize = 4000;
/// Retries with a random perturbation when a blended value is singular.
pub const JITTER_RETRIES: usize = 8;
/// Bound on `|V - W^t U W|` for the skew normal form.
pub const CONGRUENCE_TOL: f64 = 1e-8;

/// Diagonal normal form `diag(e^{i(c - N_B + 1) phi}, e^{i phi}, ...)`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct NormalFormSpec {
    pub c: i64,
    pub rank: usize,
    pub samples: usize,
}

pub fn normal_form_loop(spec: NormalFormSpec) -> Result<TransitionLoop> {
    if spec.rank == 0 {
        return Err(Error::Domain("normal form needs a positive rank".into()));
    }
    if (spec.c - spec.rank as i64).rem_euclid(2) != 0 {
        return Err(Error::Domain(format!(
            "no normal form with c = {} for rank {}: the parities differ",
            spec.c, spec.rank
        )));
    }
    if spec.samples < 4 || !spec.samples.is_multiple_of(2) {
        return Err(Error::Domain(
            "normal form needs an even sample count >= 4".into(),
        ));
    }
    let first = spec.c - spec.rank as i64 + 1;
    let samples = (0..spec.samples)
        .map(|l| {
            let phi = TAU * l as f64 / spec.samples as f64;
            let mut d = vec![cis(phi); spec.rank];
            d[0] = cis(first as f64 * phi);
            diag(&d)
        })
        .collect();
    Ok(TransitionLoop { samples })
}

/// Gauge transformation sampled on the equator.
#[derive(Clone, Debug)]
pub struct GaugeLoop {
    pub samples: Vec<CMatrix>,
    /// `|W(pi + 0) - W(pi)|` from the defining relation.
    pub continuity_pi: f64,
    /// `|W(2 pi - 0) - W(0)|` from the defining relation.
    pub continuity_two_pi: f64,
    /// The path on `(0, pi)` had to pass through a waypoint.
    pub rerouted: bool,
}

impl GaugeLoop {
    pub fn rank(&self) -> usize {
        self.samples.first().map_or(0, |w| w.nrows())
    }

    pub fn det_loop(&self) -> Result<PhaseLoop> {
        PhaseLoop::new(
            self.samples
                .iter()
                .map(|w| w.clone().determinant())
                .collect(),
        )
    }

    pub fn unitarity_residual(&self) -> f64 {
        self.samples
            .iter()
            .map(unitarity_residual)
            .fold(0.0, f64::max)
    }
}

/// Geodesic samples `from exp(t log(from^-1 to))`, `t = k / steps`, `k = 0..steps`.
/// When the logarithm is ill-defined the path first turns by a scalar phase.
fn unitary_path(from: &CMatrix, to: &CMatrix, steps: usize) -> Result<(Vec<CMatrix>, bool)> {
    let rel = from.adjoint() * to;
    if let Ok(log) = unitary_log(&rel) {
        let path = (0..=steps)
            .map(|k| Ok(from * expm_skew_hermitian(&log.scale(k as f64 / steps as f64))?))
            .collect::<Result<Vec<_>>>()?;
        return Ok((path, false));
    }
    // waypoint: from * e^{i delta}, then the geodesic from there
    let delta = PI / 4.0;
    let shifted = rel.clone() * cis(-delta);
    let log = unitary_log(&shifted)?;
    let path = (0..=steps)
        .map(|k| {
            let t = k as f64 / steps as f64;
            Ok(from * cis(delta * t) * expm_skew_hermitian(&log.scale(t))?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((path, true))
}

/// Solve `V(phi) = W(phi + pi)^t U(phi) W(phi)` for `W` on the equator.
///
/// `W(pi) = I`, `W(0) = U(0)^-1 V(0)`, a geodesic in between, and
/// `W(phi + pi) = (V(phi) W(phi)^-1 U(phi)^-1)^t` on the second half.
pub fn solve_equator_gauge(u: &TransitionLoop, v: &TransitionLoop) -> Result<GaugeLoop> {
    let n = u.len();
    if v.len() != n || u.rank() != v.rank() {
        return Err(Error::Domain(format!(
            "transition loops differ in shape: {} x rank {} against {} x rank {}",
            n,
            u.rank(),
            v.len(),
            v.rank()
        )));
    }
    if n < 4 || !n.is_multiple_of(2) {
        return Err(Error::Domain(
            "equator loops need an even sample count >= 4".into(),
        ));
    }
    let half = n / 2;
    let rank = u.rank();
    let id = CMatrix::identity(rank, rank);
    let w0 = u.samples[0].adjoint() * &v.samples[0];
    let (mut samples, rerouted) = unitary_path(&w0, &id, half)?;
    samples[half] = id.clone();
    let second =
        |l: usize, w: &CMatrix| (&v.samples[l] * w.adjoint() * u.samples[l].adjoint()).transpose();
    for l in 1..half {
        let next = second(l, &samples[l]);
        samples.push(next);
    }
    let continuity_pi = max_abs(&(second(0, &samples[0]) - &id));
    let continuity_two_pi = max_abs(&(second(half, &samples[half]) - &samples[0]));
    Ok(GaugeLoop {
        samples,
        continuity_pi,
        continuity_two_pi,
        rerouted,
    })
}

/// `wn det W`; the gauge extends over the hemisphere iff this is zero.
pub fn winding_obstruction(w: &GaugeLoop) -> Result<i64> {
    winding_number(&w.det_loop()?)
}

/// `U(N_B)`-valued gauge field on the closed northern hemisphere.
#[derive(Clone, Debug)]
pub struct DiskExtension {
    /// Indexed by grid vertex, `None` off the hemisphere.
    pub values: Vec<Option<CMatrix>>,
    pub sweeps: usize,
    /// Largest neighbour step, in radians, over edges touching the interior.
    pub max_step: f64,
    /// Largest step along the prescribed boundary loop.
    pub boundary_step: f64,
    pub jitters: usize,
    pub unitarity: f64,
}

/// Rotation angle between two unitaries, `max |arg eig(a^dagger b)|`.
fn step_angle(a: &CMatrix, b: &CMatrix) -> f64 {
    let d = spectral_norm(&(a - b)).min(2.0);
    2.0 * (0.5 * d).asin()
}

/// Extend an equator gauge loop over the northern hemisphere.
///
/// The interior starts as a radial blend toward the identity, with the
/// `det` phase unwrapped and scaled separately, and is relaxed by sweeps that
/// replace every interior value with the unitary part of its neighbours' sum.
/// Sweeps stop once neighbour steps are at most `EXTENSION_STEP`, or
/// `STEP_SLACK` times the largest step of the boundary loop if that is
/// larger, since a coarse equator bounds how smooth any extension can be.
pub fn extend_to_disk(w: &GaugeLoop, grid: &Grid, seed: u64) -> Result<DiskExtension> {
    if grid.manifold != Manifold::Sphere {
        return Err(Error::Domain("disk extension lives on the sphere".into()));
    }
    if w.samples.len() != grid.n_lon {
        return Err(Error::Domain(format!(
            "gauge loop has {} samples but the equator has {}",
            w.samples.len(),
            grid.n_lon
        )));
    }
    let obstruction = winding_obstruction(w)?;
    if obstruction != 0 {
        return Err(Error::Extension(format!(
            "det W winds {obstruction} times; no extension over the hemisphere exists"
        )));
    }
    let rank = w.rank();
    let n_lon = grid.n_lon;
    let half = grid.half_row();
    // unwrapped det phase, periodic because the winding is zero; its mean
    // stays with the loop so the blended part is as short as possible
    let dets = w.det_loop()?;
    let mut psi = vec![dets.samples()[0].arg()];
    for inc in dets.increments().iter().take(n_lon - 1) {
        let last = psi[psi.len() - 1];
        psi.push(last + inc);
    }
    let mean = psi.iter().sum::<f64>() / n_lon as f64;
    let delta: Vec<f64> = psi.iter().map(|p| p - mean).collect();
    let rest: Vec<CMatrix> = w
        .samples
        .iter()
        .zip(&delta)
        .map(|(m, d)| m * cis(-d / rank as f64))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitters = 0;
    let (base, logs) = loop {
        let base = blend_base(&rest, &mut rng, jitters > 0);
        let logs: Result<Vec<CMatrix>> = rest
            .iter()
            .map(|m| unitary_log(&(base.adjoint() * m)))
            .collect();
        match logs {
            Ok(l) => break (base, l),
            Err(_) if jitters < JITTER_RETRIES => jitters += 1,
            Err(e) => {
                return Err(Error::Extension(format!(
                    "no blend base keeps the loop off the branch cut: {e}"
                )))
            }
        }
    };
    // rows[i][j] for i in 0..=half; row 0 is the pole
    let mut rows: Vec<Vec<CMatrix>> = vec![vec![base.clone(); n_lon]];
    for i in 1..half {
        let r = i as f64 / half as f64;
        let row: Result<Vec<CMatrix>> = (0..n_lon)
            .map(|j| {
                Ok(&base
                    * expm_skew_hermitian(&logs[j].scale(r))?
                    * cis(r * delta[j] / rank as f64))
            })
            .collect();
        rows.push(row?);
    }
    rows.push(w.samples.clone());

    let boundary_step = (0..n_lon)
        .map(|j| step_angle(&rows[half][j], &rows[half][(j + 1) % n_lon]))
        .fold(0.0, f64::max);
    let target = EXTENSION_STEP.max(STEP_SLACK * boundary_step);
    let interior_step = |rows: &[Vec<CMatrix>]| {
        (1..half)
            .flat_map(|i| (0..n_lon).map(move |j| (i, j)))
            .map(|(i, j)| {
                let here = &rows[i][j];
                step_angle(here, &rows[i][(j + 1) % n_lon])
                    .max(step_angle(here, &rows[i - 1][j]))
                    .max(step_angle(here, &rows[i + 1][j]))
            })
            .fold(0.0, f64::max)
    };

    let mut sweeps = 0;
    let mut max_step = interior_step(&rows);
    while max_step > target {
        if sweeps == SWEEP_CAP {
            return Err(Error::Extension(format!(
                "smoothing stopped after {SWEEP_CAP} sweeps with a neighbour step of {max_step:.3} rad"
            )));
        }
        let next: Result<Vec<Vec<CMatrix>>> = (1..half)
            .into_par_iter()
            .map(|i| {
                (0..n_lon)
                    .map(|j| {
                        let sum = &rows[i - 1][j]
                            + &rows[i + 1][j]
                            + &rows[i][(j + 1) % n_lon]
                            + &rows[i][(j + n_lon - 1) % n_lon];
                        polar_unitary(&sum).map_err(|e| {
                            Error::Extension(format!("smoothing hit a singular average: {e}"))
                        })
                    })
                    .collect()
            })
            .collect();
        for (k, row) in next?.into_iter().enumerate() {
            rows[k + 1] = row;
        }
        sweeps += 1;
        max_step = interior_step(&rows);
    }

    let mut values = vec![None; grid.vertex_count()];
    let mut unitarity: f64 = 0.0;
    for (i, row) in rows.iter().enumerate() {
        for (j, m) in row.iter().enumerate() {
            unitarity = unitarity.max(unitarity_residual(m));
            values[grid.vertex(i, j)] = Some(m.clone());
        }
    }
    Ok(DiskExtension {
        values,
        sweeps,
        max_step,
        boundary_step,
        jitters,
        unitarity,
    })
}

/// Pole value for the radial blend: the candidate closest to every loop
/// sample, so that each geodesic toward the loop is short and avoids the
/// branch cut. Candidates are the identity and the retracted loop mean,
/// or random unitaries once those have failed.
fn blend_base(rest: &[CMatrix], rng: &mut ChaCha8Rng, jitter: bool) -> CMatrix {
    let n = rest[0].nrows();
    let mut candidates = Vec::new();
    if jitter {
        for _ in 0..16 {
            let g = CMatrix::from_fn(n, n, |_, _| {
                c64(StandardNormal.sample(rng), StandardNormal.sample(rng))
            });
            if let Ok(m) = polar_unitary(&g) {
                candidates.push(m);
            }
        }
    } else {
        candidates.push(CMatrix::identity(n, n));
        let mean = rest.iter().fold(CMatrix::zeros(n, n), |acc, s| acc + s);
        if let Ok(m) = polar_unitary(&mean) {
            candidates.push(m);
        }
    }
    let reach = |b: &CMatrix| rest.iter().map(|s| step_angle(b, s)).fold(0.0, f64::max);
    candidates
        .into_iter()
        .map(|b| (reach(&b), b))
        .fold((f64::INFINITY, CMatrix::identity(n, n)), |best, x| {
            if x.0 < best.0 - 1e-12 {
                x
            } else {
                best
            }
        })
        .1
}

/// Frame `u conj(W)` on the hemisphere.
pub fn regauge(frame: &Frame, extension: &DiskExtension) -> Result<Frame> {
    frame.regauged(&extension.values)
}

/// `max |V(phi) - V_target(phi)|` for the regauged frame's equator loop.
pub fn normal_form_residual(
    frame: &Frame,
    grid: &Grid,
    tr: &AntiUnitary,
    target: &TransitionLoop,
) -> Result<f64> {
    let v = transition_loop_sphere(frame, grid, tr)?;
    if v.len() != target.len() {
        return Err(Error::Domain(
            "target loop has the wrong sample count".into(),
        ));
    }
    Ok(v.samples
        .iter()
        .zip(&target.samples)
        .map(|(a, b)| max_abs(&(a - b)))
        .fold(0.0, f64::max))
}

/// Block skew matrix `diag([[0, -e^{i a_1}], [e^{i a_1}, 0]], ...)`.
pub fn skew_block(angles: &[f64]) -> CMatrix {
    let n = 2 * angles.len();
    let mut m = CMatrix::zeros(n, n);
    for (b, &a) in angles.iter().enumerate() {
        m[(2 * b, 2 * b + 1)] = -cis(a);
        m[(2 * b + 1, 2 * b)] = cis(a);
    }
    m
}

/// Winding numbers in the torus gauge bookkeeping.
#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
pub struct SkewWindings {
    pub det_u_plus: i64,
    pub det_u_minus: i64,
    pub det_v_plus: i64,
    pub det_v_minus: i64,
    pub det_w_zero: i64,
    pub det_w_pi: i64,
}

impl SkewWindings {
    /// `det V = det(W)^2 det U` on both lines.
    pub fn bookkeeping_ok(&self) -> bool {
        self.det_v_plus == 2 * self.det_w_zero + self.det_u_plus
            && self.det_v_minus == 2 * self.det_w_pi + self.det_u_minus
    }

    /// `wn det W(.,0) - wn det W(.,pi)`; `W` extends over the cylinder iff zero.
    pub fn obstruction(&self) -> i64 {
        self.det_w_zero - self.det_w_pi
    }
}

/// Block normal form of the torus transition loops.
#[derive(Clone, Debug)]
pub struct SkewNormalForm {
    /// `[V+, V-]`.
    pub targets: [TransitionLoop; 2],
    /// `[W(., 0), W(., pi)]`.
    pub congruence: [Vec<CMatrix>; 2],
    /// `max |V - W^t U W|` over both lines.
    pub residual: f64,
    pub windings: SkewWindings,
}

/// Orthonormal `W` with `W^t U W = [[0, -1], [1, 0]]` blocks, its first
/// vectors aligned with `prev` when given.
fn symplectic_basis(u: &CMatrix, prev: Option<&CMatrix>) -> Result<CMatrix> {
    let n = u.nrows();
    let mut w = CMatrix::zeros(n, n);
    for b in 0..n / 2 {
        let taken = w.columns(0, 2 * b).into_owned();
        let project = |x: CMatrix| &x - &taken * (taken.adjoint() * &x);
        let candidate = match prev {
            Some(p) => project(p.columns(2 * b, 1).into_owned()),
            None => (0..n)
                .map(|k| {
                    project(CMatrix::from_fn(n, 1, |r, _| {
                        if r == k {
                            c64(1.0, 0.0)
                        } else {
                            c64(0.0, 0.0)
                        }
                    }))
                })
                .fold(CMatrix::zeros(n, 1), |best, x| {
                    if x.norm() > best.norm() + 1e-12 {
                        x
                    } else {
                        best
                    }
                }),
        };
        let norm = candidate.norm();
        if norm < 0.5 {
            return Err(Error::Tracking(format!(
                "skew pairing lost continuity (overlap {norm:.3}); refine the boundary sampling"
            )));
        }
        let w1 = candidate.unscale(norm);
        let w2 = conj(&(u * &w1));
        w.set_column(2 * b, &w1.column(0));
        w.set_column(2 * b + 1, &w2.column(0));
    }
    Ok(w)
}

/// Continuous `W(q)` with `W^t U W = V`, where `V` has block angles
/// `first(q)` in the first block and zero elsewhere.
fn congruence_line(
    u: &TransitionLoop,
    first: impl Fn(f64) -> f64,
) -> Result<(Vec<CMatrix>, TransitionLoop)> {
    let n = u.len();
    let rank = u.rank();
    let blocks = rank / 2;
    let mut base: Vec<CMatrix> = Vec::with_capacity(n);
    for l in 0..=n {
        let next = symplectic_basis(&u.samples[l % n], base.last())?;
        base.push(next);
    }
    // D(q) = diag(e^{i first(q)}, 1, ...) turns W~ into W; close the loop
    // inside the group fixing the standard block form
    let d = |q: f64| {
        let mut e = vec![c64(1.0, 0.0); rank];
        e[0] = cis(first(q));
        diag(&e)
    };
    let gap = d(TAU) * base[0].adjoint() * &base[n];
    let closing = ClosingPath::new(&gap)?;
    let mut w = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for (l, b) in base.iter().take(n).enumerate() {
        let q = TAU * l as f64 / n as f64;
        w.push(b * closing.at(q / TAU)? * d(q));
        let mut angles = vec![0.0; blocks];
        angles[0] = first(q);
        targets.push(skew_block(&angles));
    }
    Ok((w, TransitionLoop { samples: targets }))
}

/// Path `C(t)` from `I` to `gap^-1` inside the group fixing the standard
/// block form, which `gap` belongs to. The principal logarithm stays in that
/// group; when it is ill-defined the path passes through `exp(i theta S)`,
/// `S = diag(1, -1, 1, -1, ...)`, which also fixes the block form.
struct ClosingPath {
    lead: CMatrix,
    log: CMatrix,
}

impl ClosingPath {
    fn new(gap: &CMatrix) -> Result<Self> {
        let n = gap.nrows();
        if let Ok(log) = unitary_log(gap) {
            return Ok(ClosingPath {
                lead: CMatrix::zeros(n, n),
                log,
            });
        }
        let s = diag(
            &(0..n)
                .map(|k| c64(if k % 2 == 0 { 1.0 } else { -1.0 }, 0.0))
                .collect::<Vec<_>>(),
        );
        for theta in [PI / 3.0, PI / 2.0, 2.0 * PI / 3.0] {
            let lead = s.scale(theta) * c64(0.0, 1.0);
            let rest = expm_skew_hermitian(&lead)?.adjoint() * gap;
            if let Ok(log) = unitary_log(&rest) {
                return Ok(ClosingPath { lead, log });
            }
        }
        Err(Error::Tracking("cannot close the congruence loop".into()))
    }

    /// `gap = exp(lead) exp(log)`, undone as `exp(-log)` then `exp(-lead)`.
    fn at(&self, t: f64) -> Result<CMatrix> {
        let first = (2.0 * t).min(1.0);
        let second = (2.0 * t - 1.0).max(0.0);
        if max_abs(&self.lead) == 0.0 {
            return expm_skew_hermitian(&self.log.scale(-t));
        }
        Ok(expm_skew_hermitian(&self.log.scale(-first))?
            * expm_skew_hermitian(&self.lead.scale(-second))?)
    }
}

/// Bring `U+` and `U-` to block form with `alpha_1+ (q) = (c/2) q` and all
/// other angles zero.
pub fn skew_normal_form(
    plus: &TransitionLoop,
    minus: &TransitionLoop,
    c: i64,
) -> Result<SkewNormalForm> {
    let rank = plus.rank();
    if rank == 0 || !rank.is_multiple_of(2) || minus.rank() != rank {
        return Err(Error::Domain(
            "skew normal form needs equal, even ranks".into(),
        ));
    }
    if c % 2 != 0 {
        return Err(Error::Domain(format!("torus Chern number {c} is odd")));
    }
    for lp in [plus, minus] {
        let r = lp.skew_residual();
        if r > crate::numkit::SKEW_TOL {
            return Err(Error::Domain(format!(
                "transition loop is not skew (residual {r:.3e})"
            )));
        }
    }
    let half_c = (c / 2) as f64;
    let (w_zero, v_plus) = congruence_line(plus, |q| half_c * q)?;
    let (w_pi, v_minus) = congruence_line(minus, |_| 0.0)?;
    let residual = [(plus, &v_plus, &w_zero), (minus, &v_minus, &w_pi)]
        .iter()
        .flat_map(|(u, v, w)| {
            u.samples
                .iter()
                .zip(&v.samples)
                .zip(w.iter())
                .map(|((u, v), w)| max_abs(&(v - w.transpose() * u * w)))
        })
        .fold(0.0, f64::max);
    let wn = |m: &[CMatrix]| {
        winding_number(&PhaseLoop::new(
            m.iter().map(|x| x.clone().determinant()).collect(),
        )?)
    };
    let windings = SkewWindings {
        det_u_plus: wn(&plus.samples)?,
        det_u_minus: wn(&minus.samples)?,
        det_v_plus: wn(&v_plus.samples)?,
        det_v_minus: wn(&v_minus.samples)?,
        det_w_zero: wn(&w_zero)?,
        det_w_pi: wn(&w_pi)?,
    };
    Ok(SkewNormalForm {
        targets: [v_plus, v_minus],
        congruence: [w_zero, w_pi],
        residual,
        windings,
    })
}
