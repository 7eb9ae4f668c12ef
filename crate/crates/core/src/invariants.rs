//! Chern numbers by two independent methods, the Kane-Mele integer by
//! boundary winding and by zero census, and the consistency checks tying
//! them together.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bands::{
    boundary_frames, check_tri, find_gapped_groups, frame_on_edge, kramers_check, smooth_frame,
    spectrum_on_grid, sphere_transition, torus_transition, transition_loop_sphere,
    transition_loops_torus, BandGroup, Frame, HamiltonianField, Spectrum, TransitionLoop, TriCheck,
    GAP_FLOOR, TRI_TOL,
};
use crate::error::{Error, Result};
use crate::numkit::{
    max_abs, pfaffian, skew_residual, winding_number, winding_refined, CMatrix, PhaseLoop, C64,
    MAX_PHASE_STEP,
};
use crate::phasespace::{Grid, Manifold, PhasePoint};

/// Link variables smaller than this signal a closed gap or aliasing.
pub const LINK_FLOOR: f64 = 1e-8;
/// Plaquette fluxes this close to `pi` are treated as under-resolved.
pub const FLUX_MARGIN: f64 = 0.1;
/// Number of alternative fundamental domains tried when `pf M` vanishes on
/// the boundary or a grid vertex.
pub const DOMAIN_RETRIES: usize = 8;

/// Numerical thresholds for an analysis run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub tri_tol: f64,
    pub gap_floor: f64,
    pub zero_floor: f64,
    /// Curvature evenness tolerance is `evenness_rel * max|F| + evenness_abs`.
    pub evenness_rel: f64,
    pub evenness_abs: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tri_tol: TRI_TOL,
            gap_floor: GAP_FLOOR,
            zero_floor: 1e-4,
            evenness_rel: 1e-6,
            evenness_abs: 1e-9,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tri_tol", self.tri_tol),
            ("gap_floor", self.gap_floor),
            ("zero_floor", self.zero_floor),
            ("evenness_rel", self.evenness_rel),
            ("evenness_abs", self.evenness_abs),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!(
                    "tolerance {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Berry flux through every plaquette of a grid.
#[derive(Clone, Debug, Serialize)]
pub struct CurvatureField {
    pub flux: Vec<f64>,
    pub total: f64,
}

impl CurvatureField {
    pub fn chern(&self) -> i64 {
        (self.total / TAU).round() as i64
    }

    pub fn max_abs(&self) -> f64 {
        self.flux.iter().fold(0.0, |a, f| a.max(f.abs()))
    }
}

/// Lattice Berry flux of a band group.
///
/// Links are `det(u(x)^dagger u(y))` along each plaquette edge in coordinate
/// orientation, and `F_P = -arg(product of links)`. With this sign the total
/// agrees with the winding of `det U` on the boundary loop. Only the span of
/// the eigenvectors matters; no smooth frame is needed.
pub fn chern_plaquette(
    spectrum: &Spectrum,
    grid: &Grid,
    group: &BandGroup,
) -> Result<(CurvatureField, i64)> {
    let flux: Result<Vec<f64>> = grid
        .plaquettes()
        .par_iter()
        .map(|p| {
            let n = p.corners.len();
            let mut prod = C64::new(1.0, 0.0);
            for k in 0..n {
                let a = spectrum.basis(p.corners[k], group);
                let b = spectrum.basis(p.corners[(k + 1) % n], group);
                let link = (a.adjoint() * b).determinant();
                let m = link.norm();
                if m < LINK_FLOOR {
                    return Err(Error::GapClosed(format!(
                        "vanishing link {m:.2e} in plaquette ({}, {})",
                        p.lat, p.lon
                    )));
                }
                prod *= link / m;
            }
            let f = -prod.arg();
            if f.abs() >= PI - FLUX_MARGIN {
                return Err(Error::Resolution(format!(
                    "flux {f:.3} through plaquette ({}, {}) is too close to pi",
                    p.lat, p.lon
                )));
            }
            Ok(f)
        })
        .collect();
    let flux = flux?;
    let total: f64 = flux.iter().sum();
    let field = CurvatureField { flux, total };
    let c = field.chern();
    let off = (total / TAU - c as f64).abs();
    if off > 1e-6 {
        return Err(Error::Inconsistent(format!(
            "total flux / 2 pi is {:.9}, not an integer",
            total / TAU
        )));
    }
    Ok((field, c))
}

/// `c = wn det U` on the equator.
pub fn chern_winding_sphere(lp: &TransitionLoop) -> Result<i64> {
    winding_number(&lp.det_loop()?)
}

/// `c = wn det U+ - wn det U-`.
pub fn chern_winding_torus(plus: &TransitionLoop, minus: &TransitionLoop) -> Result<i64> {
    Ok(winding_number(&plus.det_loop()?)? - winding_number(&minus.det_loop()?)?)
}

/// Boundary Chern number from frames recomputed at increasing resolution
/// along the boundary.
pub fn chern_winding_refined(
    field: &HamiltonianField,
    group: &BandGroup,
    n_lat: usize,
    start: usize,
) -> Result<i64> {
    let tr = &field.tr;
    let det_loop = |lp: TransitionLoop| lp.det_loop();
    match field.manifold {
        Manifold::Sphere => Ok(winding_refined(
            |n| {
                det_loop(sphere_transition(
                    &boundary_frames(field, group, n_lat, n)?[0],
                    tr,
                )?)
            },
            start,
        )?
        .0),
        Manifold::Torus => {
            let side = |k: usize| {
                winding_refined(
                    |n| {
                        det_loop(torus_transition(
                            &boundary_frames(field, group, n_lat, n)?[k],
                            tr,
                        )?)
                    },
                    start,
                )
            };
            Ok(side(0)?.0 - side(1)?.0)
        }
    }
}

/// `max |F_P - F_tau(P)|`, both traversed in coordinate orientation.
pub fn curvature_tr_evenness(curvature: &CurvatureField, grid: &Grid) -> f64 {
    (0..curvature.flux.len())
        .map(|p| (curvature.flux[p] - curvature.flux[grid.tau_plaquette(p)]).abs())
        .fold(0.0, f64::max)
}

/// `M(x)_{nn'} = <u_n(x), T u_n'(x)>` and its Pfaffian over the domain.
#[derive(Clone, Debug)]
pub struct MField {
    pub matrices: Vec<Option<CMatrix>>,
    /// `None` off the domain or for odd rank.
    pub pfaffians: Vec<Option<C64>>,
    pub zero_floor: f64,
    pub skew_residual: f64,
    /// Largest `||pf M|^2 - |det M|| / max(|det M|, zero_floor^2)`.
    pub pf_det_residual: f64,
    /// Domain vertices with `|pf M| < zero_floor`.
    pub near_zero: Vec<usize>,
}

impl MField {
    pub fn min_abs_pfaffian(&self) -> Option<f64> {
        self.pfaffians
            .iter()
            .flatten()
            .map(|p| p.norm())
            .reduce(f64::min)
    }
}

fn pf_of(u: &CMatrix, field: &HamiltonianField) -> Result<C64> {
    pfaffian(&(u.adjoint() * field.tr.apply(u)))
}

pub fn m_field(frame: &Frame, field: &HamiltonianField, zero_floor: f64) -> Result<MField> {
    let even = frame.rank().is_multiple_of(2);
    let per_vertex: Result<Vec<(Option<CMatrix>, Option<C64>)>> = frame
        .vertex_frames()
        .par_iter()
        .map(|u| match u {
            None => Ok((None, None)),
            Some(u) => {
                let m = u.adjoint() * field.tr.apply(u);
                let pf = if even { Some(pfaffian(&m)?) } else { None };
                Ok((Some(m), pf))
            }
        })
        .collect();
    let (matrices, pfaffians): (Vec<_>, Vec<_>) = per_vertex?.into_iter().unzip();
    let mut skew: f64 = 0.0;
    let mut pf_det: f64 = 0.0;
    let mut near_zero = Vec::new();
    for (v, (m, pf)) in matrices.iter().zip(&pfaffians).enumerate() {
        let Some(m) = m else { continue };
        skew = skew.max(skew_residual(m));
        if let Some(pf) = pf {
            let det = m.clone().determinant().norm();
            pf_det = pf_det.max((pf.norm_sqr() - det).abs() / det.max(zero_floor * zero_floor));
            if pf.norm() < zero_floor {
                near_zero.push(v);
            }
        }
    }
    Ok(MField {
        matrices,
        pfaffians,
        zero_floor,
        skew_residual: skew,
        pf_det_residual: pf_det,
        near_zero,
    })
}

/// Principal phase increments of `pf M` along every edge of the fundamental
/// domain, keyed by `(lower id, higher id)` and measured in that direction.
/// Steps of `pi/2` or more are resampled along the edge; edges where `pf M`
/// vanishes or that stay unresolved are left out.
#[derive(Clone, Debug)]
pub struct EdgeIncrements {
    increments: HashMap<(usize, usize), f64>,
    unresolved: Vec<(usize, usize)>,
}

impl EdgeIncrements {
    /// Increment from `a` to `b`, if the edge is resolved.
    pub fn get(&self, a: usize, b: usize) -> Option<f64> {
        if a < b {
            self.increments.get(&(a, b)).copied()
        } else {
            self.increments.get(&(b, a)).map(|d| -d)
        }
    }

    fn is_unresolved(&self, a: usize, b: usize) -> bool {
        self.unresolved.binary_search(&(a.min(b), a.max(b))).is_ok()
    }
}

#[allow(clippy::too_many_arguments)]
fn subdivided_increment(
    field: &HamiltonianField,
    frame: &Frame,
    grid: &Grid,
    a: usize,
    b: usize,
    pa: C64,
    pb: C64,
    floor: f64,
) -> EdgeState {
    'outer: for n_sub in [8usize, 64] {
        let mut prev = pa;
        let mut total = 0.0;
        for s in 1..=n_sub {
            let p = if s == n_sub {
                pb
            } else {
                let Ok(u) = frame_on_edge(field, frame, grid, a, b, s as f64 / n_sub as f64) else {
                    continue 'outer;
                };
                let Ok(p) = pf_of(&u, field) else {
                    continue 'outer;
                };
                if p.norm() < floor {
                    return EdgeState::Vanishing;
                }
                p
            };
            let step = (p / prev).arg();
            if step.abs() >= MAX_PHASE_STEP {
                continue 'outer;
            }
            total += step;
            prev = p;
        }
        return EdgeState::Resolved(total);
    }
    EdgeState::Unresolved
}

enum EdgeState {
    Resolved(f64),
    Vanishing,
    Unresolved,
}

/// Edge increments of `pf M` over all domain edges.
pub fn pfaffian_edges(
    mfield: &MField,
    frame: &Frame,
    field: &HamiltonianField,
    grid: &Grid,
) -> EdgeIncrements {
    let half = grid.half_row();
    let mut keys: Vec<(usize, usize)> = grid
        .plaquettes()
        .iter()
        .filter(|p| p.lat < half)
        .flat_map(|p| {
            let n = p.corners.len();
            (0..n).map(move |k| {
                let (a, b) = (p.corners[k], p.corners[(k + 1) % n]);
                (a.min(b), a.max(b))
            })
        })
        .collect();
    keys.sort_unstable();
    keys.dedup();
    let floor = mfield.zero_floor;
    let states: Vec<((usize, usize), EdgeState)> = keys
        .par_iter()
        .map(|&(a, b)| {
            let state = match (mfield.pfaffians[a], mfield.pfaffians[b]) {
                (Some(pa), Some(pb)) if pa.norm() >= floor && pb.norm() >= floor => {
                    let d = (pb / pa).arg();
                    if d.abs() < MAX_PHASE_STEP {
                        EdgeState::Resolved(d)
                    } else {
                        subdivided_increment(field, frame, grid, a, b, pa, pb, floor)
                    }
                }
                _ => EdgeState::Vanishing,
            };
            ((a, b), state)
        })
        .collect();
    let mut increments = HashMap::new();
    let mut unresolved = Vec::new();
    for (key, state) in states {
        match state {
            EdgeState::Resolved(d) => {
                increments.insert(key, d);
            }
            EdgeState::Unresolved => unresolved.push(key),
            EdgeState::Vanishing => {}
        }
    }
    EdgeIncrements {
        increments,
        unresolved,
    }
}

fn boundary_winding(edges: &EdgeIncrements, grid: &Grid, row: usize) -> Result<f64> {
    let mut total = 0.0;
    for j in 0..grid.n_lon {
        let (a, b) = (grid.vertex(row, j), grid.vertex(row, j + 1));
        total += match edges.get(a, b) {
            Some(d) => d,
            None if edges.is_unresolved(a, b) => {
                return Err(Error::Resolution(format!(
                    "pf M phase on the domain boundary near lon index {j}"
                )))
            }
            None => {
                return Err(Error::Degenerate(format!(
                    "pf M vanishes on the domain boundary near lon index {j}"
                )))
            }
        };
    }
    Ok(total)
}

/// Kane-Mele integer: `wn pf M` on the equator (sphere) or
/// `wn pf M(., 0) - wn pf M(., pi)` (torus).
pub fn km_boundary(edges: &EdgeIncrements, grid: &Grid) -> Result<i64> {
    let total = match grid.manifold {
        Manifold::Sphere => boundary_winding(edges, grid, grid.half_row())?,
        Manifold::Torus => {
            boundary_winding(edges, grid, 0)? - boundary_winding(edges, grid, grid.half_row())?
        }
    };
    Ok((total / TAU).round() as i64)
}

/// One zero (or cluster of zeros) of `pf M` inside the domain.
#[derive(Clone, Debug, Serialize)]
pub struct ZeroEntry {
    /// Representative plaquette id.
    pub plaquette: usize,
    pub lat: usize,
    pub lon: usize,
    pub index: i64,
    /// Plaquettes merged into this cell because a zero sat on a shared
    /// edge or vertex.
    pub cells: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ZeroCensus {
    pub entries: Vec<ZeroEntry>,
    pub total: i64,
}

impl ZeroCensus {
    pub fn signs_uniform(&self) -> bool {
        self.entries.iter().all(|e| e.index > 0) || self.entries.iter().all(|e| e.index < 0)
    }
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut y = x;
    while parent[y] != r {
        let next = parent[y];
        parent[y] = r;
        y = next;
    }
    r
}

/// Winding of `pf M` around every plaquette of the domain. Plaquettes
/// sharing an unresolved edge are merged and counted as one cell.
pub fn km_census(edges: &EdgeIncrements, grid: &Grid) -> Result<ZeroCensus> {
    let half = grid.half_row();
    let plaquettes = grid.plaquettes();
    let domain: Vec<usize> = (0..plaquettes.len())
        .filter(|&k| plaquettes[k].lat < half)
        .collect();
    let oriented = |k: usize| {
        let c = &plaquettes[k].corners;
        (0..c.len()).map(move |e| (c[e], c[(e + 1) % c.len()]))
    };
    let mut unresolved: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for &k in &domain {
        for (a, b) in oriented(k) {
            if edges.get(a, b).is_none() {
                unresolved.entry((a.min(b), a.max(b))).or_default().push(k);
            }
        }
    }
    let mut parent: Vec<usize> = (0..plaquettes.len()).collect();
    for owners in unresolved.values() {
        if owners.len() < 2 {
            let p = &plaquettes[owners[0]];
            return Err(Error::Degenerate(format!(
                "pf M vanishes on the domain boundary at plaquette ({}, {})",
                p.lat, p.lon
            )));
        }
        for w in owners.windows(2) {
            let (x, y) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
            parent[x] = y;
        }
    }
    let mut sums: HashMap<usize, (f64, usize, usize)> = HashMap::new();
    for &k in &domain {
        let s: f64 = oriented(k).filter_map(|(a, b)| edges.get(a, b)).sum();
        let root = find(&mut parent, k);
        let entry = sums.entry(root).or_insert((0.0, k, 0));
        entry.0 += s;
        entry.1 = entry.1.min(k);
        entry.2 += 1;
    }
    let mut clusters: Vec<_> = sums.into_values().collect();
    clusters.sort_by_key(|c| c.1);
    let mut entries = Vec::new();
    let mut total = 0;
    for (s, rep, cells) in clusters {
        let w = s / TAU;
        let index = w.round() as i64;
        if (w - index as f64).abs() > 1e-6 {
            return Err(Error::Inconsistent(format!(
                "plaquette winding {w:.6} is not an integer"
            )));
        }
        total += index;
        if index != 0 {
            let p = &plaquettes[rep];
            entries.push(ZeroEntry {
                plaquette: rep,
                lat: p.lat,
                lon: p.lon,
                index,
                cells,
            });
        }
    }
    Ok(ZeroCensus { entries, total })
}

/// Residual diagnostics attached to every report.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Residuals {
    pub frame_orthonormality: f64,
    pub frame_continuity: f64,
    pub seam_mismatch: f64,
    pub transition_unitarity: f64,
    /// Sphere: `max |U(phi + pi)^t + U(phi)|`. Torus: `max |U + U^t|`.
    pub transition_symmetry: f64,
    pub curvature_evenness: f64,
    pub evenness_tol: f64,
    pub m_skew: Option<f64>,
    pub pf_det: Option<f64>,
    pub min_abs_pf: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GridMeta {
    pub manifold: Manifold,
    pub n_lat: usize,
    pub n_lon: usize,
    pub refined: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct InvariantReport {
    /// Zero-based band indices `[lo, hi]`.
    pub bands: [usize; 2],
    pub rank: usize,
    pub min_gap: f64,
    pub c_plaquette: i64,
    pub c_winding: i64,
    pub k: Option<i64>,
    pub k_census: Option<i64>,
    pub census_zeros: usize,
    pub census_signs_uniform: Option<bool>,
    pub parity_ok: bool,
    pub km_relation_ok: bool,
    pub consistent: bool,
    pub domain_retries: usize,
    pub residuals: Residuals,
    pub grid: GridMeta,
}

impl InvariantReport {
    pub fn all_ok(&self) -> bool {
        self.parity_ok && self.km_relation_ok && self.consistent
    }
}

/// Everything computed for one band group.
#[derive(Clone, Debug)]
pub struct GroupAnalysis {
    pub report: InvariantReport,
    pub curvature: CurvatureField,
    pub mfield: Option<MField>,
    pub census: Option<ZeroCensus>,
    /// Grid the invariants were finally computed on.
    pub grid: Grid,
}

fn rotation(k: usize) -> [[f64; 3]; 3] {
    // axis-angle rotations with well spread axes
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let z = 1.0 - 2.0 * ((k as f64 * golden + 0.31) % 1.0);
    let r = (1.0 - z * z).sqrt();
    let phi = k as f64 * 2.399963;
    let (x, y) = (r * phi.cos(), r * phi.sin());
    let angle = 0.37 + 0.61 * k as f64;
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// The field seen from the `attempt`-th alternative fundamental domain:
/// a rotated sphere or a torus with shifted `q` origin. Both moves commute
/// with time reversal, so the bundle and its invariants are unchanged.
pub fn moved_domain(field: &HamiltonianField, grid: &Grid, attempt: usize) -> HamiltonianField {
    if attempt == 0 {
        return field.clone();
    }
    match field.manifold {
        Manifold::Sphere => {
            let r = rotation(attempt);
            field.pulled_back(move |x| {
                let n = x.unit_vector().unwrap_or([0.0, 0.0, 1.0]);
                let m = [0, 1, 2].map(|i| r[i][0] * n[0] + r[i][1] * n[1] + r[i][2] * n[2]);
                PhasePoint::from_unit_vector(m)
            })
        }
        Manifold::Torus => {
            let golden = (5f64.sqrt() - 1.0) / 2.0;
            let delta =
                TAU / grid.n_lon as f64 * ((attempt as f64 * golden) % 1.0) + 0.1 * attempt as f64;
            field.pulled_back(move |x| {
                let (q, p) = x.coords();
                PhasePoint::torus(q + delta, p)
            })
        }
    }
}

struct KmResult {
    k: i64,
    census: ZeroCensus,
    mfield: MField,
    retries: usize,
}

fn km_index(
    field: &HamiltonianField,
    grid: &Grid,
    group: &BandGroup,
    frame: &Frame,
    tol: &Tolerances,
) -> Result<KmResult> {
    let mut last = None;
    for attempt in 0..DOMAIN_RETRIES {
        let moved;
        let (f, fr) = if attempt == 0 {
            (field, frame.clone())
        } else {
            moved = moved_domain(field, grid, attempt);
            let s = spectrum_on_grid(&moved, grid)?;
            let fr = smooth_frame(&s, grid, group)?;
            (&moved, fr)
        };
        let mfield = m_field(&fr, f, tol.zero_floor)?;
        let edges = pfaffian_edges(&mfield, &fr, f, grid);
        let outcome = km_boundary(&edges, grid).and_then(|k| Ok((k, km_census(&edges, grid)?)));
        match outcome {
            Ok((k, census)) => {
                return Ok(KmResult {
                    k,
                    census,
                    mfield,
                    retries: attempt,
                })
            }
            Err(e @ Error::Degenerate(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(match last {
        Some(Error::Degenerate(m)) => Error::Degenerate(format!(
            "no admissible domain after {DOMAIN_RETRIES} attempts: {m}"
        )),
        Some(e) => e,
        None => Error::Degenerate("no admissible domain".into()),
    })
}

fn verify_once(
    field: &HamiltonianField,
    lo: usize,
    hi: usize,
    grid: &Grid,
    tol: &Tolerances,
    refined: bool,
    spectrum: Option<&Spectrum>,
) -> Result<GroupAnalysis> {
    let owned;
    let spectrum = match spectrum {
        Some(s) => s,
        None => {
            owned = spectrum_on_grid(field, grid)?;
            &owned
        }
    };
    let group = BandGroup::measured(spectrum, lo, hi)?;
    if group.min_gap <= tol.gap_floor {
        return Err(Error::GapClosed(format!(
            "bands [{lo}, {hi}] come within {:.3e} of the rest of the spectrum",
            group.min_gap
        )));
    }
    let (curvature, c_plaquette) = chern_plaquette(spectrum, grid, &group)?;
    let evenness = curvature_tr_evenness(&curvature, grid);
    let evenness_tol = tol.evenness_rel * curvature.max_abs() + tol.evenness_abs;

    let frame = smooth_frame(spectrum, grid, &group)?;
    let (loops, symmetry) = match grid.manifold {
        Manifold::Sphere => {
            let lp = transition_loop_sphere(&frame, grid, &field.tr)?;
            let s = lp.antipodal_residual();
            (vec![lp], s)
        }
        Manifold::Torus => {
            let (a, b) = transition_loops_torus(&frame, grid, &field.tr)?;
            let s = a.skew_residual().max(b.skew_residual());
            (vec![a, b], s)
        }
    };
    let direct = match grid.manifold {
        Manifold::Sphere => chern_winding_sphere(&loops[0]),
        Manifold::Torus => chern_winding_torus(&loops[0], &loops[1]),
    };
    let c_winding = match direct {
        Ok(c) => c,
        Err(e) if e.is_resolution() => {
            chern_winding_refined(field, &group, grid.n_lat, 2 * grid.n_lon)?
        }
        Err(e) => return Err(e),
    };
    let unitarity = loops
        .iter()
        .map(|l| l.unitarity_residual())
        .fold(0.0, f64::max);

    let rank = group.rank();
    let km = if rank % 2 == 0 {
        Some(km_index(field, grid, &group, &frame, tol)?)
    } else {
        None
    };

    let c = c_plaquette;
    let parity_ok = match grid.manifold {
        Manifold::Sphere => c.rem_euclid(2) == (rank % 2) as i64,
        Manifold::Torus => rank % 2 == 0 && c.rem_euclid(2) == 0,
    };
    let km_relation_ok = km
        .as_ref()
        .is_none_or(|r| 2 * r.k == c && r.census.total == r.k);
    let mfield_ref = km.as_ref().map(|r| &r.mfield);
    let report = InvariantReport {
        bands: [lo, hi],
        rank,
        min_gap: group.min_gap,
        c_plaquette,
        c_winding,
        k: km.as_ref().map(|r| r.k),
        k_census: km.as_ref().map(|r| r.census.total),
        census_zeros: km.as_ref().map_or(0, |r| r.census.entries.len()),
        census_signs_uniform: km.as_ref().map(|r| r.census.signs_uniform()),
        parity_ok,
        km_relation_ok,
        consistent: c_plaquette == c_winding && evenness <= evenness_tol,
        domain_retries: km.as_ref().map_or(0, |r| r.retries),
        residuals: Residuals {
            frame_orthonormality: frame.orthonormality,
            frame_continuity: frame.continuity_constant,
            seam_mismatch: frame.seam_mismatch,
            transition_unitarity: unitarity,
            transition_symmetry: symmetry,
            curvature_evenness: evenness,
            evenness_tol,
            m_skew: mfield_ref.map(|m| m.skew_residual),
            pf_det: mfield_ref.map(|m| m.pf_det_residual),
            min_abs_pf: mfield_ref.and_then(|m| m.min_abs_pfaffian()),
        },
        grid: GridMeta {
            manifold: grid.manifold,
            n_lat: grid.n_lat,
            n_lon: grid.n_lon,
            refined,
        },
    };
    let (mfield, census) = match km {
        Some(r) => (Some(r.mfield), Some(r.census)),
        None => (None, None),
    };
    Ok(GroupAnalysis {
        report,
        curvature,
        mfield,
        census,
        grid: grid.clone(),
    })
}

fn refined_grid(grid: &Grid) -> Result<Grid> {
    Grid::build(grid.manifold, 2 * grid.n_lat, 2 * grid.n_lon)
}

/// Every invariant of bands `lo..=hi`, with one automatic grid doubling when
/// the grid is under-resolved or the two Chern computations disagree.
pub fn verify_group(
    field: &HamiltonianField,
    lo: usize,
    hi: usize,
    grid: &Grid,
    tol: &Tolerances,
) -> Result<GroupAnalysis> {
    verify_with(field, lo, hi, grid, tol, None)
}

fn verify_with(
    field: &HamiltonianField,
    lo: usize,
    hi: usize,
    grid: &Grid,
    tol: &Tolerances,
    spectrum: Option<&Spectrum>,
) -> Result<GroupAnalysis> {
    match verify_once(field, lo, hi, grid, tol, false, spectrum) {
        Ok(a) if a.report.consistent => Ok(a),
        Ok(_) => verify_once(field, lo, hi, &refined_grid(grid)?, tol, true, None),
        Err(e) if e.is_resolution() => {
            verify_once(field, lo, hi, &refined_grid(grid)?, tol, true, None)
        }
        Err(e) => Err(e),
    }
}

/// Diagnostics collected for a field that fails the TRI check.
#[derive(Clone, Debug, Serialize)]
pub struct BrokenGroup {
    pub bands: [usize; 2],
    pub c_plaquette: Option<i64>,
    pub curvature_evenness: Option<f64>,
    pub evenness_tol: Option<f64>,
    pub evenness_ok: Option<bool>,
}

/// Analysis of every gapped group of a field.
#[derive(Clone, Debug)]
pub struct FieldAnalysis {
    pub tri: TriCheck,
    pub kramers_residual: Option<f64>,
    /// Finest gapped partition of the bands.
    pub groups: Vec<GroupAnalysis>,
    /// Unions of two adjacent groups, when that is not the whole spectrum.
    pub composites: Vec<GroupAnalysis>,
    /// `sum of c` over `groups`.
    pub chern_sum: Option<i64>,
    pub additivity_ok: bool,
    /// Populated instead of `groups` when the TRI check fails.
    pub broken: Vec<BrokenGroup>,
    /// Composites whose index could not be computed, for instance when
    /// `pf M` vanishes identically. Their Chern number is still checked.
    pub skipped: Vec<SkippedGroup>,
}

/// A composite group left out of the index checks.
#[derive(Clone, Debug, Serialize)]
pub struct SkippedGroup {
    pub bands: [usize; 2],
    pub c_plaquette: Option<i64>,
    pub reason: String,
}

impl FieldAnalysis {
    pub fn theorems_hold(&self) -> bool {
        self.tri.pass
            && self
                .groups
                .iter()
                .chain(&self.composites)
                .all(|g| g.report.all_ok())
            && self.chern_sum.is_none_or(|s| s == 0)
            && self.additivity_ok
    }
}

pub fn analyze_field(
    field: &HamiltonianField,
    grid: &Grid,
    tol: &Tolerances,
) -> Result<FieldAnalysis> {
    tol.validate()?;
    let tri = check_tri(field, grid, tol.tri_tol)?;
    let spectrum = spectrum_on_grid(field, grid)?;
    let kramers_residual = match grid.manifold {
        Manifold::Torus => Some(kramers_check(&spectrum, grid)?),
        Manifold::Sphere => None,
    };
    let finest = find_gapped_groups(&spectrum, tol.gap_floor);
    if !tri.pass {
        let broken = finest
            .iter()
            .map(|g| {
                let plaq = chern_plaquette(&spectrum, grid, g).ok();
                let even = plaq.as_ref().map(|(cf, _)| {
                    (
                        curvature_tr_evenness(cf, grid),
                        tol.evenness_rel * cf.max_abs() + tol.evenness_abs,
                    )
                });
                BrokenGroup {
                    bands: [g.lo, g.hi],
                    c_plaquette: plaq.as_ref().map(|p| p.1),
                    curvature_evenness: even.map(|e| e.0),
                    evenness_tol: even.map(|e| e.1),
                    evenness_ok: even.map(|e| e.0 <= e.1),
                }
            })
            .collect();
        return Ok(FieldAnalysis {
            tri,
            kramers_residual,
            groups: Vec::new(),
            composites: Vec::new(),
            chern_sum: None,
            additivity_ok: true,
            broken,
            skipped: Vec::new(),
        });
    }
    let groups: Result<Vec<GroupAnalysis>> = finest
        .iter()
        .map(|g| verify_with(field, g.lo, g.hi, grid, tol, Some(&spectrum)))
        .collect();
    let groups = groups?;
    let n = spectrum.n_bands();
    let mut composites = Vec::new();
    let mut skipped = Vec::new();
    for w in finest
        .windows(2)
        .filter(|w| !(w[0].lo == 0 && w[1].hi == n - 1))
    {
        let (lo, hi) = (w[0].lo, w[1].hi);
        match verify_with(field, lo, hi, grid, tol, Some(&spectrum)) {
            Ok(a) => composites.push(a),
            Err(e @ (Error::Degenerate(_) | Error::Resolution(_) | Error::Tracking(_))) => {
                let group = BandGroup::measured(&spectrum, lo, hi)?;
                let c_plaquette = chern_plaquette(&spectrum, grid, &group).ok().map(|p| p.1);
                skipped.push(SkippedGroup {
                    bands: [lo, hi],
                    c_plaquette,
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    let union_c = composites
        .iter()
        .map(|u| (u.report.bands, Some(u.report.c_plaquette)))
        .chain(skipped.iter().map(|s| (s.bands, s.c_plaquette)));
    let additivity_ok = union_c.into_iter().all(|(bands, c)| {
        let parts: i64 = groups
            .iter()
            .filter(|g| g.report.bands[0] >= bands[0] && g.report.bands[1] <= bands[1])
            .map(|g| g.report.c_plaquette)
            .sum();
        c.is_none_or(|c| c == parts)
    });
    let chern_sum = if groups.is_empty() {
        None
    } else {
        Some(groups.iter().map(|g| g.report.c_plaquette).sum())
    };
    Ok(FieldAnalysis {
        tri,
        kramers_residual,
        groups,
        composites,
        chern_sum,
        additivity_ok,
        broken: Vec::new(),
        skipped,
    })
}

/// Pfaffian values along the domain boundary, for diagnostics.
pub fn boundary_pfaffian_loop(mfield: &MField, grid: &Grid, row: usize) -> Result<PhaseLoop> {
    let samples: Option<Vec<C64>> = (0..grid.n_lon)
        .map(|j| mfield.pfaffians[grid.vertex(row, j)])
        .collect();
    PhaseLoop::new(samples.ok_or_else(|| Error::Domain("Pfaffian undefined on boundary".into()))?)
}

/// `max |M|` over the domain; zero means the group pairs with itself trivially.
pub fn m_scale(mfield: &MField) -> f64 {
    mfield
        .matrices
        .iter()
        .flatten()
        .map(max_abs)
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bands::{AntiUnitary, Evaluator};
    use crate::numkit::{c64, diag, kron, pauli};
    use std::sync::Arc;

    fn hedgehog() -> HamiltonianField {
        let [_, sx, sy, sz] = pauli();
        let eval: Evaluator = Arc::new(move |x| {
            let n = x.unit_vector().unwrap();
            sx.scale(n[0]) + sy.scale(n[1]) + sz.scale(n[2])
        });
        HamiltonianField::new(Manifold::Sphere, AntiUnitary::kramers(2).unwrap(), eval)
    }

    #[test]
    fn hedgehog_flux_is_a_monopole() {
        for (lat, lon) in [(16, 32), (24, 48), (32, 64)] {
            let grid = Grid::build(Manifold::Sphere, lat, lon).unwrap();
            let spec = spectrum_on_grid(&hedgehog(), &grid).unwrap();
            let g = BandGroup::measured(&spec, 0, 0).unwrap();
            let (cf, c) = chern_plaquette(&spec, &grid, &g).unwrap();
            assert_eq!(c, 1);
            assert!((cf.total - TAU).abs() < 1e-9);
            assert!(curvature_tr_evenness(&cf, &grid) < 1e-12);
            let up = BandGroup::measured(&spec, 1, 1).unwrap();
            assert_eq!(chern_plaquette(&spec, &grid, &up).unwrap().1, -1);
        }
    }

    #[test]
    fn hedgehog_report() {
        let grid = Grid::build(Manifold::Sphere, 16, 32).unwrap();
        let a = analyze_field(&hedgehog(), &grid, &Tolerances::default()).unwrap();
        assert_eq!(a.groups.len(), 2);
        let r = &a.groups[0].report;
        assert_eq!((r.c_plaquette, r.c_winding, r.k), (1, 1, None));
        assert!(r.parity_ok && r.km_relation_ok && r.consistent);
        assert_eq!(a.chern_sum, Some(0));
        assert!(a.theorems_hold());
    }

    #[test]
    fn trivial_rank_two_bundle() {
        let grid = Grid::build(Manifold::Sphere, 16, 32).unwrap();
        let t = AntiUnitary::new(kron(
            &CMatrix::identity(2, 2),
            &(pauli()[2].clone() * c64(0.0, 1.0)),
        ))
        .unwrap();
        let d = diag(&[c64(-1.0, 0.0), c64(-1.0, 0.0), c64(1.0, 0.0), c64(1.0, 0.0)]);
        let eval: Evaluator = Arc::new(move |_| d.clone());
        let f = HamiltonianField::new(Manifold::Sphere, t, eval);
        let g = verify_group(&f, 0, 1, &grid, &Tolerances::default()).unwrap();
        let r = &g.report;
        assert_eq!(
            (r.c_plaquette, r.c_winding, r.k, r.k_census),
            (0, 0, Some(0), Some(0))
        );
        let m = g.mfield.unwrap();
        assert!(m
            .pfaffians
            .iter()
            .flatten()
            .all(|p| (p.norm() - 1.0).abs() < 1e-12));
        assert!(g.census.unwrap().entries.is_empty());
    }

    #[test]
    fn odd_rank_has_no_pfaffian() {
        let grid = Grid::build(Manifold::Sphere, 8, 16).unwrap();
        let spec = spectrum_on_grid(&hedgehog(), &grid).unwrap();
        let g = BandGroup::measured(&spec, 0, 0).unwrap();
        let frame = smooth_frame(&spec, &grid, &g).unwrap();
        let m = m_field(&frame, &hedgehog(), 1e-4).unwrap();
        assert!(m.pfaffians.iter().all(Option::is_none));
        assert!(m.skew_residual < 1e-14);
        assert!(m_scale(&m) < 1e-14);
    }

    #[test]
    fn census_merges_cells_around_unresolved_edges() {
        let grid = Grid::build(Manifold::Sphere, 8, 16).unwrap();
        let half = grid.half_row();
        let mut increments = HashMap::new();
        let mut add = |a: usize, b: usize, d: f64| {
            if a < b {
                increments.insert((a, b), d);
            } else {
                increments.insert((b, a), -d);
            }
        };
        // pf = e^{i phi} on every latitude below the pole, 1 at the pole:
        // a single unit zero at the north pole
        for i in 1..=half {
            for j in 0..grid.n_lon {
                add(
                    grid.vertex(i, j),
                    grid.vertex(i, j + 1),
                    TAU / grid.n_lon as f64,
                );
            }
        }
        for i in 1..half {
            for j in 0..grid.n_lon {
                add(grid.vertex(i, j), grid.vertex(i + 1, j), 0.0);
            }
        }
        let mut edges = EdgeIncrements {
            increments,
            unresolved: Vec::new(),
        };
        // no pole edges: the pole triangles merge into one cell
        let c = km_census(&edges, &grid).unwrap();
        assert_eq!(
            (c.total, c.entries.len(), c.entries[0].cells),
            (1, 1, grid.n_lon)
        );
        for j in 0..grid.n_lon {
            let v = grid.vertex(1, j);
            edges
                .increments
                .insert((0, v), TAU * j as f64 / grid.n_lon as f64);
        }
        let c = km_census(&edges, &grid).unwrap();
        assert_eq!(c.total, 1);
        assert_eq!(km_boundary(&edges, &grid).unwrap(), 1);
        assert_eq!(c.entries.len(), 1);
        assert_eq!(c.entries[0].cells, 1);

        // hide one pole edge: the two pole triangles sharing it merge
        edges.increments.remove(&(0, grid.vertex(1, 0)));
        let c = km_census(&edges, &grid).unwrap();
        assert_eq!(c.total, 1);
        assert_eq!(c.entries[0].cells, 2);

        // hide a boundary edge: degenerate
        edges
            .increments
            .remove(&(grid.vertex(half, 0), grid.vertex(half, 1)));
        assert!(matches!(
            km_census(&edges, &grid),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            km_boundary(&edges, &grid),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn tolerances_validate() {
        assert!(Tolerances::default().validate().is_ok());
        let bad = Tolerances {
            gap_floor: 0.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn rotations_are_orthogonal() {
        for k in 1..DOMAIN_RETRIES {
            let r = rotation(k);
            for a in 0..3 {
                for b in 0..3 {
                    let dot: f64 = (0..3).map(|i| r[i][a] * r[i][b]).sum();
                    assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-12);
                }
            }
            let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
                - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
                + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
            assert!((det - 1.0).abs() < 1e-12);
        }
    }
}
