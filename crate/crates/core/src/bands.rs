//! Fermionic time reversal, TRI Hamiltonian fields, band groups, smooth
//! frames over the fundamental domain and the transition matrices gluing a
//! frame to its time-reversed image.

use std::f64::consts::TAU;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numkit::{
    conj, eigh, expm_skew_hermitian, max_abs, polar_isometry, skew_residual, unitarity_residual,
    unitary_log, unitary_log_any, CMatrix, Eigh, PhaseLoop, C64,
};
use crate::phasespace::{tr_image, Grid, Manifold, PhasePoint};

/// Default tolerance for the TRI residual of a Hamiltonian field.
pub const TRI_TOL: f64 = 1e-9;
/// Default spectral gap below which bands are considered touching.
pub const GAP_FLOOR: f64 = 1e-6;
/// Smallest singular value of `V^dagger u` accepted during frame transport.
pub const ALIGNMENT_FLOOR: f64 = 1e-3;
/// Transition matrices must be unitary to this accuracy.
pub const UNITARITY_TOL: f64 = 1e-9;
/// `U(phi + pi)^t = -U(phi)` (sphere) / `U = -U^t` (torus) accuracy.
pub const ANTISYMMETRY_TOL: f64 = 1e-8;

/// Anti-unitary `T x = J conj(x)` with `T^2 = -1`.
#[derive(Clone, Debug)]
pub struct AntiUnitary {
    j: CMatrix,
}

impl AntiUnitary {
    pub fn new(j: CMatrix) -> Result<Self> {
        let n = j.nrows();
        if !j.is_square() || n == 0 || !n.is_multiple_of(2) {
            return Err(Error::Domain(format!(
                "fermionic time reversal needs an even square matrix, got {}x{}",
                j.nrows(),
                j.ncols()
            )));
        }
        let unit = unitarity_residual(&j);
        if unit > 1e-12 {
            return Err(Error::Domain(format!(
                "J is not unitary (residual {unit:.3e})"
            )));
        }
        let square = max_abs(&(&j * conj(&j) + CMatrix::identity(n, n)));
        if square > 1e-12 {
            return Err(Error::Domain(format!(
                "T^2 != -1: |J conj(J) + I| = {square:.3e}"
            )));
        }
        Ok(Self { j })
    }

    /// `i sigma_y (x) I_{n/2}`.
    pub fn kramers(n: usize) -> Result<Self> {
        if n == 0 || !n.is_multiple_of(2) {
            return Err(Error::Domain(format!(
                "Kramers structure needs even dimension, got {n}"
            )));
        }
        let h = n / 2;
        let mut j = CMatrix::zeros(n, n);
        for k in 0..h {
            j[(k, h + k)] = C64::new(1.0, 0.0);
            j[(h + k, k)] = C64::new(-1.0, 0.0);
        }
        Self::new(j)
    }

    /// `T(x, y) = (-conj(y), conj(x))` on `C^{n/2} (+) C^{n/2}`.
    pub fn block_swap(n: usize) -> Result<Self> {
        Self::new(-Self::kramers(n)?.j)
    }

    /// Spin reversal `exp(-i pi J_y)` composed with conjugation, in the
    /// `|j, m>` basis ordered `m = j, j-1, ..., -j`. Requires odd `two_j`.
    pub fn spin_reversal(two_j: u32) -> Result<Self> {
        if two_j.is_multiple_of(2) {
            return Err(Error::Domain(format!(
                "spin {two_j}/2 is integer; fermionic time reversal needs half-integer spin"
            )));
        }
        let n = two_j as usize + 1;
        let mut j = CMatrix::zeros(n, n);
        for col in 0..n {
            // column m = j - col maps to row -m = j - (n - 1 - col) with sign (-1)^(j - m)
            let sign = if col % 2 == 0 { 1.0 } else { -1.0 };
            j[(n - 1 - col, col)] = C64::new(sign, 0.0);
        }
        Self::new(j)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.j
    }

    pub fn dim(&self) -> usize {
        self.j.nrows()
    }

    /// `T` applied column-wise.
    pub fn apply(&self, x: &CMatrix) -> CMatrix {
        &self.j * conj(x)
    }

    /// `T H T^{-1} = J conj(H) J^dagger`.
    pub fn conjugate(&self, h: &CMatrix) -> CMatrix {
        &self.j * conj(h) * self.j.adjoint()
    }
}

pub type Evaluator = Arc<dyn Fn(&PhasePoint) -> CMatrix + Send + Sync>;

/// Hermitian matrix field on phase space together with its time reversal.
#[derive(Clone)]
pub struct HamiltonianField {
    pub manifold: Manifold,
    pub tr: AntiUnitary,
    eval: Evaluator,
}

impl std::fmt::Debug for HamiltonianField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HamiltonianField")
            .field("manifold", &self.manifold)
            .field("n_a", &self.n_a())
            .finish()
    }
}

impl HamiltonianField {
    pub fn new(manifold: Manifold, tr: AntiUnitary, eval: Evaluator) -> Self {
        Self { manifold, tr, eval }
    }

    pub fn n_a(&self) -> usize {
        self.tr.dim()
    }

    pub fn eval(&self, x: &PhasePoint) -> CMatrix {
        (self.eval)(x)
    }

    pub fn evaluator(&self) -> Evaluator {
        self.eval.clone()
    }

    /// Field evaluated after a change of coordinates `x -> map(x)`. The map
    /// must commute with time reversal for the result to stay TRI.
    pub fn pulled_back<M>(&self, map: M) -> Self
    where
        M: Fn(&PhasePoint) -> PhasePoint + Send + Sync + 'static,
    {
        let inner = self.eval.clone();
        Self {
            manifold: self.manifold,
            tr: self.tr.clone(),
            eval: Arc::new(move |x| inner(&map(x))),
        }
    }

    /// `(1 - s) self + s other`.
    pub fn interpolate(&self, other: &HamiltonianField, s: f64) -> Result<Self> {
        if self.manifold != other.manifold
            || self.n_a() != other.n_a()
            || max_abs(&(self.tr.matrix() - other.tr.matrix())) > 1e-12
        {
            return Err(Error::Domain(
                "path endpoints must share manifold, dimension and time reversal".into(),
            ));
        }
        let (a, b) = (self.eval.clone(), other.eval.clone());
        Ok(Self {
            manifold: self.manifold,
            tr: self.tr.clone(),
            eval: Arc::new(move |x| a(x).scale(1.0 - s) + b(x).scale(s)),
        })
    }

    /// `self + strength * extra`, same time reversal.
    pub fn plus(&self, extra: Evaluator, strength: f64) -> Self {
        let a = self.eval.clone();
        Self {
            manifold: self.manifold,
            tr: self.tr.clone(),
            eval: Arc::new(move |x| a(x) + extra(x).scale(strength)),
        }
    }
}

/// Outcome of a time-reversal-invariance check.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TriCheck {
    pub max_residual: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Largest `|J conj(H(tau x)) J^dagger - H(x)|_max` over the grid.
pub fn check_tri(field: &HamiltonianField, grid: &Grid, tol: f64) -> Result<TriCheck> {
    if field.manifold != grid.manifold {
        return Err(Error::Domain(
            "field and grid live on different manifolds".into(),
        ));
    }
    let n = field.n_a();
    let residuals: Result<Vec<f64>> = grid
        .vertices()
        .par_iter()
        .enumerate()
        .map(|(v, x)| {
            let h = field.eval(x);
            let h_image = field.eval(&grid.point(grid.tau_vertex(v)));
            if h.nrows() != n || h.ncols() != n || h_image.nrows() != n {
                return Err(Error::Domain(format!(
                    "Hamiltonian is {}x{} but time reversal acts on C^{n}",
                    h.nrows(),
                    h.ncols()
                )));
            }
            Ok(max_abs(&(field.tr.conjugate(&h_image) - h)))
        })
        .collect();
    let max_residual = residuals?.into_iter().fold(0.0, f64::max);
    Ok(TriCheck {
        max_residual,
        tol,
        pass: max_residual <= tol,
    })
}

/// `H(x) = (B(x) + J conj(B(tau x)) J^dagger) / 2`.
pub fn symmetrize_tri(raw: Evaluator, manifold: Manifold, tr: AntiUnitary) -> HamiltonianField {
    let t = tr.clone();
    let eval: Evaluator = Arc::new(move |x| {
        let b = raw(x);
        let bt = raw(&tr_image(x));
        (b + t.conjugate(&bt)).scale(0.5)
    });
    HamiltonianField::new(manifold, tr, eval)
}

/// Eigendecompositions at every grid vertex.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub eig: Vec<Eigh>,
}

impl Spectrum {
    pub fn n_bands(&self) -> usize {
        self.eig.first().map_or(0, |e| e.values.len())
    }

    /// Eigenvectors `lo..=hi` at vertex `v`.
    pub fn basis(&self, v: usize, group: &BandGroup) -> CMatrix {
        self.eig[v].columns(group.lo, group.hi)
    }

    /// Smallest separation, over all vertices, between band `k` and `k + 1`.
    pub fn boundary_gap(&self, k: usize) -> f64 {
        self.eig
            .iter()
            .map(|e| e.values[k + 1] - e.values[k])
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest separation of bands `lo..=hi` from the rest of the spectrum.
    pub fn group_gap(&self, lo: usize, hi: usize) -> f64 {
        let mut gap = f64::INFINITY;
        if lo > 0 {
            gap = gap.min(self.boundary_gap(lo - 1));
        }
        if hi + 1 < self.n_bands() {
            gap = gap.min(self.boundary_gap(hi));
        }
        gap
    }
}

pub fn spectrum_on_grid(field: &HamiltonianField, grid: &Grid) -> Result<Spectrum> {
    let eig: Result<Vec<Eigh>> = grid
        .vertices()
        .par_iter()
        .map(|x| eigh(&field.eval(x)))
        .collect();
    Ok(Spectrum { eig: eig? })
}

/// Contiguous band indices `lo..=hi` (zero-based) separated from the rest of
/// the spectrum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BandGroup {
    pub lo: usize,
    pub hi: usize,
    pub min_gap: f64,
}

impl BandGroup {
    pub fn rank(&self) -> usize {
        self.hi - self.lo + 1
    }

    /// Group covering `lo..=hi` with its gap measured on `spectrum`.
    pub fn measured(spectrum: &Spectrum, lo: usize, hi: usize) -> Result<BandGroup> {
        if lo > hi || hi >= spectrum.n_bands() {
            return Err(Error::Config(format!(
                "band range [{lo}, {hi}] outside 0..{}",
                spectrum.n_bands()
            )));
        }
        Ok(BandGroup {
            lo,
            hi,
            min_gap: spectrum.group_gap(lo, hi),
        })
    }
}

/// Finest partition of the bands into groups gapped above `gap_floor`.
/// Empty when no internal gap is open anywhere.
pub fn find_gapped_groups(spectrum: &Spectrum, gap_floor: f64) -> Vec<BandGroup> {
    let n = spectrum.n_bands();
    let cuts: Vec<usize> = (0..n.saturating_sub(1))
        .filter(|&k| spectrum.boundary_gap(k) > gap_floor)
        .collect();
    if cuts.is_empty() {
        return Vec::new();
    }
    let mut groups = Vec::with_capacity(cuts.len() + 1);
    let mut lo = 0;
    for &k in cuts.iter().chain(std::iter::once(&(n - 1))) {
        groups.push(BandGroup {
            lo,
            hi: k,
            min_gap: spectrum.group_gap(lo, k),
        });
        lo = k + 1;
    }
    groups
}

/// Orthonormal frame for a band group over the fundamental domain.
#[derive(Clone, Debug)]
pub struct Frame {
    pub manifold: Manifold,
    pub group: BandGroup,
    frames: Vec<Option<CMatrix>>,
    /// `max |u(x) - u(y)|_F / h` over domain edges, `h` the grid spacing.
    pub continuity_constant: f64,
    /// Torus only: mismatch of the twisted `p = 0` frame across `q = 2 pi`.
    pub seam_mismatch: f64,
    pub orthonormality: f64,
    /// Torus only: `log V0` of the seam holonomy spread along `p = 0`.
    twist_log: Option<CMatrix>,
    /// Per-longitude phase smoothing, see [`boundary_phases`].
    phases: Vec<f64>,
}

impl Frame {
    pub fn get(&self, v: usize) -> Option<&CMatrix> {
        self.frames.get(v).and_then(|f| f.as_ref())
    }

    pub fn rank(&self) -> usize {
        self.group.rank()
    }

    /// Replace the frame by `u(x) conj(W(x))` on every vertex where both exist.
    pub fn regauged(&self, gauge: &[Option<CMatrix>]) -> Result<Frame> {
        let frames: Vec<Option<CMatrix>> = self
            .frames
            .iter()
            .zip(gauge)
            .map(|(u, w)| match (u, w) {
                (Some(u), Some(w)) => Some(u * conj(w)),
                _ => None,
            })
            .collect();
        Ok(Frame {
            frames,
            ..self.clone()
        })
    }

    pub fn vertex_frames(&self) -> &[Option<CMatrix>] {
        &self.frames
    }

    /// Smoothing phase at fractional longitude index `j`, interpolated
    /// linearly between lattice longitudes.
    pub fn phase_at(&self, j: f64) -> f64 {
        let n = self.phases.len();
        if n == 0 {
            return 0.0;
        }
        let j = j.rem_euclid(n as f64);
        let j0 = j.floor() as usize % n;
        let f = j - j.floor();
        // phases are periodic with phi_n = phi_0
        let next = if j0 + 1 == n {
            self.phases[0]
        } else {
            self.phases[j0 + 1]
        };
        (1.0 - f) * self.phases[j0] + f * next
    }
}

/// Rotate `u` into the span of the orthonormal columns `basis`, as close to
/// `u` as possible.
pub(crate) fn align(basis: &CMatrix, u: &CMatrix) -> Result<CMatrix> {
    let overlap = basis.adjoint() * u;
    let smin = overlap
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(f64::INFINITY, |a, &s| a.min(s));
    if smin < ALIGNMENT_FLOOR {
        return Err(Error::Resolution(format!(
            "frame transport lost alignment (overlap singular value {smin:.2e})"
        )));
    }
    Ok(basis * polar_isometry(&overlap)?)
}

/// Frames on lattice rows `0..=n_lat/2`, keyed `[row][lon]`, built by parallel
/// transport. `basis(i, j)` returns the band-group eigenvectors at site `(i, j)`.
pub(crate) struct TransportedFrames {
    pub rows: Vec<Vec<CMatrix>>,
    pub seam_mismatch: f64,
    pub twist_log: Option<CMatrix>,
    pub phases: Vec<f64>,
}

pub(crate) fn transport_frames<B>(
    manifold: Manifold,
    n_lat: usize,
    n_lon: usize,
    basis: B,
) -> Result<TransportedFrames>
where
    B: Fn(usize, usize) -> Result<CMatrix> + Sync,
{
    let half = n_lat / 2;
    let (bottom, seam_mismatch, twist_log) = match manifold {
        Manifold::Sphere => (vec![basis(0, 0)?; n_lon], 0.0, None),
        Manifold::Torus => {
            let start = basis(0, 0)?;
            let mut line = Vec::with_capacity(n_lon + 1);
            line.push(start.clone());
            for j in 1..=n_lon {
                let next = align(&basis(0, j % n_lon)?, &line[j - 1])?;
                line.push(next);
            }
            let holonomy = polar_isometry(&(start.adjoint() * &line[n_lon]))?;
            let log = match unitary_log(&holonomy) {
                Ok(l) => l,
                Err(Error::Branch(_)) => unitary_log_any(&holonomy)?,
                Err(e) => return Err(e),
            };
            let twist = |t: f64| expm_skew_hermitian(&log.scale(-t));
            let seam_mismatch = max_abs(&(&line[n_lon] * twist(1.0)? - &start));
            let bottom: Result<Vec<CMatrix>> = (0..n_lon)
                .map(|j| Ok(&line[j] * twist(j as f64 / n_lon as f64)?))
                .collect();
            (bottom?, seam_mismatch, Some(log))
        }
    };
    let columns: Result<Vec<Vec<CMatrix>>> = (0..n_lon)
        .into_par_iter()
        .map(|j| {
            let mut col = Vec::with_capacity(half + 1);
            col.push(bottom[j].clone());
            for i in 1..=half {
                let next = align(&basis(i, j)?, &col[i - 1])?;
                col.push(next);
            }
            Ok(col)
        })
        .collect();
    let mut columns = columns?;
    let phases = boundary_phases(&columns, half);
    let rank = bottom[0].ncols() as f64;
    for (j, col) in columns.iter_mut().enumerate() {
        for (i, u) in col.iter_mut().enumerate() {
            *u *= C64::from_polar(1.0, -(i as f64 / half as f64) * phases[j] / rank);
        }
    }
    let rows = (0..=half)
        .map(|i| columns.iter().map(|c| c[i].clone()).collect())
        .collect();
    Ok(TransportedFrames {
        rows,
        seam_mismatch,
        twist_log,
        phases,
    })
}

/// Column phases `phi_j` that even out the `det` link phases along the far
/// boundary row: multiplying column `j` by `exp(-i (i / half) phi_j / N_B)`
/// leaves the seed row untouched and gives every boundary link the same
/// `det` phase.
///
/// The far link phase of strip `j` is rebuilt from the seed link minus the
/// plaquette fluxes of the strip, so a strip carrying more than `pi` of
/// flux does not alias.
fn boundary_phases(columns: &[Vec<CMatrix>], half: usize) -> Vec<f64> {
    let n = columns.len();
    let link = |a: &CMatrix, b: &CMatrix| (a.adjoint() * b).determinant();
    let strip: Vec<f64> = (0..n)
        .map(|j| {
            let (l, r) = (&columns[j], &columns[(j + 1) % n]);
            let mut psi = link(&l[0], &r[0]).arg();
            for i in 0..half {
                let loop_ = link(&l[i], &r[i])
                    * link(&r[i], &r[i + 1])
                    * link(&r[i + 1], &l[i + 1])
                    * link(&l[i + 1], &l[i]);
                psi -= loop_.arg();
            }
            psi
        })
        .collect();
    let mean = strip.iter().sum::<f64>() / n as f64;
    let mut phases = Vec::with_capacity(n);
    let mut acc = 0.0;
    for psi in &strip {
        phases.push(acc);
        acc += psi - mean;
    }
    phases
}

/// Smooth frame over the fundamental domain by parallel transport.
///
/// Sphere: the band eigenframe at the north pole is carried down every
/// meridian to the equator. Torus: carried around `p = 0` in `q`, the seam
/// holonomy `V0` is spread out as `exp(-q log(V0) / 2 pi)`, then every point
/// is carried up to `p = pi`.
pub fn smooth_frame(spectrum: &Spectrum, grid: &Grid, group: &BandGroup) -> Result<Frame> {
    let t = transport_frames(grid.manifold, grid.n_lat, grid.n_lon, |i, j| {
        Ok(spectrum.basis(grid.vertex(i, j), group))
    })?;
    let mut frames: Vec<Option<CMatrix>> = vec![None; grid.vertex_count()];
    for (i, row) in t.rows.iter().enumerate() {
        for (j, u) in row.iter().enumerate() {
            let v = grid.vertex(i, j);
            if frames[v].is_none() {
                frames[v] = Some(u.clone());
            }
        }
    }
    let h = grid.spacing();
    let mut continuity: f64 = 0.0;
    for (a, b) in grid.edges() {
        if let (Some(ua), Some(ub)) = (&frames[a], &frames[b]) {
            continuity = continuity.max((ua - ub).norm() / h);
        }
    }
    let orthonormality = frames
        .iter()
        .flatten()
        .map(unitarity_residual)
        .fold(0.0, f64::max);
    Ok(Frame {
        manifold: grid.manifold,
        group: *group,
        frames,
        continuity_constant: continuity,
        seam_mismatch: t.seam_mismatch,
        orthonormality,
        twist_log: t.twist_log,
        phases: t.phases,
    })
}

/// Largest `|(I - P) u|` over the domain, `P` the group's spectral projector.
pub fn frame_span_residual(frame: &Frame, spectrum: &Spectrum) -> f64 {
    frame
        .frames
        .iter()
        .enumerate()
        .filter_map(|(v, u)| u.as_ref().map(|u| (v, u)))
        .map(|(v, u)| {
            let b = spectrum.basis(v, &frame.group);
            max_abs(&(u - &b * (b.adjoint() * u)))
        })
        .fold(0.0, f64::max)
}

/// Lattice coordinates `(lat, lon)` of the two ends of the edge `a -> b`,
/// with longitude unwrapped so they are adjacent. On the sphere a pole takes
/// the longitude of its neighbour.
pub fn edge_coords(grid: &Grid, a: usize, b: usize) -> ((f64, f64), (f64, f64)) {
    let (ia, ja) = grid.lat_lon(a);
    let (ib, jb) = grid.lat_lon(b);
    let (ia, mut ja, mut ib, mut jb) = (ia as f64, ja as f64, ib as f64, jb as f64);
    let sphere = grid.manifold == Manifold::Sphere;
    let pole = |i: f64| sphere && (i == 0.0 || i == grid.n_lat as f64);
    if pole(ia) {
        ja = jb;
    } else if pole(ib) {
        jb = ja;
    }
    let n_lon = grid.n_lon as f64;
    if jb - ja > 1.5 {
        jb -= n_lon;
    } else if ja - jb > 1.5 {
        jb += n_lon;
    }
    if !sphere && (ib - ia).abs() > 1.5 {
        ib -= (ib - ia).signum() * grid.n_lat as f64;
    }
    ((ia, ja), (ib, jb))
}

/// Phase-space point at fractional lattice coordinates.
pub fn lattice_point(grid: &Grid, i: f64, j: f64) -> PhasePoint {
    let lon = TAU * j / grid.n_lon as f64;
    match grid.manifold {
        Manifold::Sphere => PhasePoint::sphere(std::f64::consts::PI * i / grid.n_lat as f64, lon),
        Manifold::Torus => PhasePoint::torus(lon, TAU * i / grid.n_lat as f64),
    }
}

/// Frame a fraction `t` of the way along the domain edge `a -> b`, built by
/// the same transport that produced the vertex frames, so that it is a
/// continuous function of `t` reproducing `frame` at both ends.
pub fn frame_on_edge(
    field: &HamiltonianField,
    frame: &Frame,
    grid: &Grid,
    a: usize,
    b: usize,
    t: f64,
) -> Result<CMatrix> {
    let group = frame.group;
    let basis = |i: f64, j: f64| {
        Ok::<_, Error>(eigh(&field.eval(&lattice_point(grid, i, j)))?.columns(group.lo, group.hi))
    };
    let missing = || Error::Domain("edge leaves the frame's domain".into());
    let ((ia, ja), (ib, jb)) = edge_coords(grid, a, b);
    let half = grid.half_row() as f64;
    let rank = group.rank() as f64;
    if ia != ib {
        // along a meridian / vertical: one step from the lower end
        let (low, il, s) = if ia < ib {
            (a, ia, t)
        } else {
            (b, ib, 1.0 - t)
        };
        let u = frame.get(low).ok_or_else(missing)?;
        let phi = frame.phase_at(ja);
        let shift = C64::from_polar(1.0, -(s / half) * phi / rank);
        return Ok(align(&basis(il + s, ja)?, u)? * shift);
    }
    let row = ia as usize;
    let j = ja + t * (jb - ja);
    let mut u = match grid.manifold {
        Manifold::Sphere => frame.get(grid.vertex(0, 0)).ok_or_else(missing)?.clone(),
        Manifold::Torus => {
            let log = frame.twist_log.as_ref().ok_or_else(missing)?;
            let n = grid.n_lon as f64;
            let j0 = j.floor();
            let twist = |x: f64| expm_skew_hermitian(&log.scale(-x / n));
            let start = frame
                .get(grid.vertex(0, j0.rem_euclid(n) as usize))
                .ok_or_else(missing)?;
            let jw = j.rem_euclid(n);
            let j0w = j0.rem_euclid(n);
            let pre = start * twist(j0w)?.adjoint();
            let line = align(&basis(0.0, j)?, &pre)?;
            line * twist(j0w + (jw - j0w).rem_euclid(n))?
        }
    };
    // row 0 carries no smoothing phase, so apply it once at the end
    for r in 1..=row {
        u = align(&basis(r as f64, j)?, &u)?;
    }
    Ok(u * C64::from_polar(1.0, -(row as f64 / half) * frame.phase_at(j) / rank))
}

/// Sampled unitary transition matrices along a boundary loop.
#[derive(Clone, Debug)]
pub struct TransitionLoop {
    pub samples: Vec<CMatrix>,
}

impl TransitionLoop {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.samples.first().map_or(0, |u| u.nrows())
    }

    pub fn unitarity_residual(&self) -> f64 {
        self.samples
            .iter()
            .map(unitarity_residual)
            .fold(0.0, f64::max)
    }

    /// `max |U(phi + pi)^t + U(phi)|`.
    pub fn antipodal_residual(&self) -> f64 {
        let n = self.samples.len();
        (0..n)
            .map(|j| max_abs(&(self.samples[(j + n / 2) % n].transpose() + &self.samples[j])))
            .fold(0.0, f64::max)
    }

    pub fn skew_residual(&self) -> f64 {
        self.samples.iter().map(skew_residual).fold(0.0, f64::max)
    }

    pub fn det_loop(&self) -> Result<PhaseLoop> {
        PhaseLoop::new(
            self.samples
                .iter()
                .map(|u| u.clone().determinant())
                .collect(),
        )
    }
}

fn check_unitary(lp: &TransitionLoop) -> Result<()> {
    let r = lp.unitarity_residual();
    if r > UNITARITY_TOL {
        return Err(Error::Inconsistent(format!(
            "transition matrices not unitary (residual {r:.3e}); the frame does not span a TRI band group"
        )));
    }
    Ok(())
}

pub(crate) fn sphere_transition(equator: &[CMatrix], tr: &AntiUnitary) -> Result<TransitionLoop> {
    let n = equator.len();
    if !n.is_multiple_of(2) {
        return Err(Error::Domain(
            "equator needs an even number of samples".into(),
        ));
    }
    let samples = (0..n)
        .map(|j| (equator[j].adjoint() * tr.apply(&equator[(j + n / 2) % n])).transpose())
        .collect();
    let lp = TransitionLoop { samples };
    check_unitary(&lp)?;
    Ok(lp)
}

pub(crate) fn torus_transition(line: &[CMatrix], tr: &AntiUnitary) -> Result<TransitionLoop> {
    let samples = line
        .iter()
        .map(|u| (u.adjoint() * tr.apply(u)).transpose())
        .collect();
    let lp = TransitionLoop { samples };
    check_unitary(&lp)?;
    Ok(lp)
}

fn boundary_row(frame: &Frame, grid: &Grid, row: usize) -> Result<Vec<CMatrix>> {
    (0..grid.n_lon)
        .map(|j| {
            frame
                .get(grid.vertex(row, j))
                .cloned()
                .ok_or_else(|| Error::Domain("frame is not defined on the boundary".into()))
        })
        .collect()
}

/// `U(phi)^t = u(pi/2, phi)^dagger T u(pi/2, phi + pi)` on the equator.
pub fn transition_loop_sphere(
    frame: &Frame,
    grid: &Grid,
    tr: &AntiUnitary,
) -> Result<TransitionLoop> {
    if grid.manifold != Manifold::Sphere {
        return Err(Error::Domain(
            "sphere transition loop on a torus grid".into(),
        ));
    }
    sphere_transition(&boundary_row(frame, grid, grid.half_row())?, tr)
}

/// `U+(q)^t = u(q,0)^dagger T u(q,0)` and `U-(q)^t = u(q,pi)^dagger T u(q,pi)`.
pub fn transition_loops_torus(
    frame: &Frame,
    grid: &Grid,
    tr: &AntiUnitary,
) -> Result<(TransitionLoop, TransitionLoop)> {
    if grid.manifold != Manifold::Torus {
        return Err(Error::Domain(
            "torus transition loops on a sphere grid".into(),
        ));
    }
    Ok((
        torus_transition(&boundary_row(frame, grid, 0)?, tr)?,
        torus_transition(&boundary_row(frame, grid, grid.half_row())?, tr)?,
    ))
}

/// Boundary frames of the transported frame at `count` longitudes, computed
/// directly from the field. Used to refine under-resolved boundary loops.
pub fn boundary_frames(
    field: &HamiltonianField,
    group: &BandGroup,
    n_lat: usize,
    count: usize,
) -> Result<Vec<Vec<CMatrix>>> {
    let manifold = field.manifold;
    let point = |i: usize, j: usize| match manifold {
        Manifold::Sphere => PhasePoint::sphere(
            std::f64::consts::PI * i as f64 / n_lat as f64,
            TAU * j as f64 / count as f64,
        ),
        Manifold::Torus => {
            PhasePoint::torus(TAU * j as f64 / count as f64, TAU * i as f64 / n_lat as f64)
        }
    };
    let t = transport_frames(manifold, n_lat, count, |i, j| {
        let (i, j) = if manifold == Manifold::Sphere && i == 0 {
            (0, 0)
        } else {
            (i, j)
        };
        Ok(eigh(&field.eval(&point(i, j)))?.columns(group.lo, group.hi))
    })?;
    let half = n_lat / 2;
    Ok(match manifold {
        Manifold::Sphere => vec![t.rows[half].clone()],
        Manifold::Torus => vec![t.rows[0].clone(), t.rows[half].clone()],
    })
}

/// Largest `|lambda_{2i} - lambda_{2i+1}|` on the time-reversal-invariant
/// rows `p = 0, pi` of a torus grid.
pub fn kramers_check(spectrum: &Spectrum, grid: &Grid) -> Result<f64> {
    if grid.manifold != Manifold::Torus {
        return Err(Error::Domain(
            "Kramers pairing needs time-reversal-invariant points (torus)".into(),
        ));
    }
    let mut worst: f64 = 0.0;
    for row in [0, grid.half_row()] {
        for j in 0..grid.n_lon {
            let vals = &spectrum.eig[grid.vertex(row, j)].values;
            for pair in vals.chunks(2) {
                if pair.len() == 2 {
                    worst = worst.max((pair[1] - pair[0]).abs());
                }
            }
        }
    }
    Ok(worst)
}
