//! Phase-space manifolds, their time-reversal involutions and the
//! time-reversal-closed grids every field is sampled on.
//!
//! Orientation convention: `d theta ^ d phi` on the sphere (outward normal)
//! and `dq ^ dp` on the torus are positive. Plaquette corners are listed in
//! that orientation, first coordinate first.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Manifold {
    Sphere,
    Torus,
}

impl std::fmt::Display for Manifold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Manifold::Sphere => f.write_str("sphere"),
            Manifold::Torus => f.write_str("torus"),
        }
    }
}

/// A point of phase space.
///
/// Sphere points use polar coordinates `theta in [0, pi]`, `phi in [0, 2 pi)`;
/// torus points use canonical `q, p in [0, 2 pi)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PhasePoint {
    Sphere { theta: f64, phi: f64 },
    Torus { q: f64, p: f64 },
}

fn wrap(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

impl PhasePoint {
    pub fn sphere(theta: f64, phi: f64) -> Self {
        PhasePoint::Sphere {
            theta: theta.clamp(0.0, PI),
            phi: wrap(phi),
        }
    }

    pub fn torus(q: f64, p: f64) -> Self {
        PhasePoint::Torus {
            q: wrap(q),
            p: wrap(p),
        }
    }

    /// Sphere point from a (not necessarily normalized) Cartesian vector.
    pub fn from_unit_vector(n: [f64; 3]) -> Self {
        let r = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        let theta = (n[2] / r).clamp(-1.0, 1.0).acos();
        let phi = n[1].atan2(n[0]);
        PhasePoint::sphere(theta, phi)
    }

    pub fn manifold(&self) -> Manifold {
        match self {
            PhasePoint::Sphere { .. } => Manifold::Sphere,
            PhasePoint::Torus { .. } => Manifold::Torus,
        }
    }

    /// Cartesian unit vector of a sphere point; `None` on the torus.
    pub fn unit_vector(&self) -> Option<[f64; 3]> {
        match *self {
            PhasePoint::Sphere { theta, phi } => {
                let (st, ct) = theta.sin_cos();
                let (sp, cp) = phi.sin_cos();
                Some([st * cp, st * sp, ct])
            }
            PhasePoint::Torus { .. } => None,
        }
    }

    /// Coordinate pair `(theta, phi)` or `(q, p)`.
    pub fn coords(&self) -> (f64, f64) {
        match *self {
            PhasePoint::Sphere { theta, phi } => (theta, phi),
            PhasePoint::Torus { q, p } => (q, p),
        }
    }
}

/// Time-reversal image: antipode on the sphere, `p -> -p` on the torus.
pub fn tr_image(x: &PhasePoint) -> PhasePoint {
    match *x {
        PhasePoint::Sphere { theta, phi } => PhasePoint::sphere(PI - theta, phi + PI),
        PhasePoint::Torus { q, p } => PhasePoint::torus(q, -p),
    }
}

/// A grid cell. Corners are vertex ids in coordinate orientation; pole cells
/// on the sphere are triangles.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Plaquette {
    pub lat: usize,
    pub lon: usize,
    pub corners: Vec<usize>,
}

/// Time-reversal-closed grid on a phase-space manifold.
#[derive(Clone, Debug)]
pub struct Grid {
    pub manifold: Manifold,
    pub n_lat: usize,
    pub n_lon: usize,
    vertices: Vec<PhasePoint>,
    vertex_index: Vec<(usize, usize)>,
    plaquettes: Vec<Plaquette>,
    tau_vertex: Vec<usize>,
    tau_plaquette: Vec<usize>,
}

impl Grid {
    pub fn build(manifold: Manifold, n_lat: usize, n_lon: usize) -> Result<Grid> {
        for (name, n) in [("n_lat", n_lat), ("n_lon", n_lon)] {
            if n < 8 || n % 2 != 0 {
                return Err(Error::Config(format!(
                    "{name} must be even and at least 8, got {n}"
                )));
            }
        }
        let mut g = Grid {
            manifold,
            n_lat,
            n_lon,
            vertices: Vec::new(),
            vertex_index: Vec::new(),
            plaquettes: Vec::new(),
            tau_vertex: Vec::new(),
            tau_plaquette: Vec::new(),
        };
        let rows = match manifold {
            Manifold::Sphere => n_lat + 1,
            Manifold::Torus => n_lat,
        };
        for i in 0..rows {
            for j in 0..n_lon {
                if g.is_pole_row(i) && j > 0 {
                    continue;
                }
                g.vertices.push(g.point_at(i, j));
                g.vertex_index.push((i, j));
            }
        }
        for i in 0..n_lat {
            for j in 0..n_lon {
                let jn = (j + 1) % n_lon;
                let raw = match manifold {
                    Manifold::Sphere => [
                        g.vertex(i, j),
                        g.vertex(i + 1, j),
                        g.vertex(i + 1, jn),
                        g.vertex(i, jn),
                    ],
                    Manifold::Torus => {
                        let inext = (i + 1) % n_lat;
                        [
                            g.vertex(i, j),
                            g.vertex(i, jn),
                            g.vertex(inext, jn),
                            g.vertex(inext, j),
                        ]
                    }
                };
                let mut corners: Vec<usize> = Vec::with_capacity(4);
                for v in raw {
                    if corners.last() != Some(&v) && !(corners.len() == 3 && corners[0] == v) {
                        corners.push(v);
                    }
                }
                if corners.len() > 1 && corners.first() == corners.last() {
                    corners.pop();
                }
                g.plaquettes.push(Plaquette {
                    lat: i,
                    lon: j,
                    corners,
                });
            }
        }
        g.tau_vertex = (0..g.vertices.len())
            .map(|v| {
                let (i, j) = g.vertex_index[v];
                let (ti, tj) = g.tau_lat_lon(i, j);
                g.vertex(ti, tj)
            })
            .collect();
        g.tau_plaquette = g
            .plaquettes
            .iter()
            .map(|p| {
                let (ti, tj) = match manifold {
                    Manifold::Sphere => (n_lat - 1 - p.lat, (p.lon + n_lon / 2) % n_lon),
                    Manifold::Torus => (n_lat - 1 - p.lat, p.lon),
                };
                ti * n_lon + tj
            })
            .collect();
        Ok(g)
    }

    fn is_pole_row(&self, i: usize) -> bool {
        self.manifold == Manifold::Sphere && (i == 0 || i == self.n_lat)
    }

    fn point_at(&self, i: usize, j: usize) -> PhasePoint {
        match self.manifold {
            Manifold::Sphere => {
                let phi = if self.is_pole_row(i) {
                    0.0
                } else {
                    TAU * j as f64 / self.n_lon as f64
                };
                PhasePoint::sphere(PI * i as f64 / self.n_lat as f64, phi)
            }
            Manifold::Torus => PhasePoint::torus(
                TAU * j as f64 / self.n_lon as f64,
                TAU * i as f64 / self.n_lat as f64,
            ),
        }
    }

    fn tau_lat_lon(&self, i: usize, j: usize) -> (usize, usize) {
        match self.manifold {
            Manifold::Sphere => (self.n_lat - i, (j + self.n_lon / 2) % self.n_lon),
            Manifold::Torus => ((self.n_lat - i) % self.n_lat, j),
        }
    }

    /// Vertex id of lattice site `(lat, lon)`. Longitudes wrap; on the sphere
    /// every longitude of a pole row maps to the single pole vertex.
    pub fn vertex(&self, lat: usize, lon: usize) -> usize {
        let lon = lon % self.n_lon;
        match self.manifold {
            Manifold::Sphere => {
                if lat == 0 {
                    0
                } else if lat == self.n_lat {
                    1 + (self.n_lat - 1) * self.n_lon
                } else {
                    1 + (lat - 1) * self.n_lon + lon
                }
            }
            Manifold::Torus => (lat % self.n_lat) * self.n_lon + lon,
        }
    }

    pub fn lat_lon(&self, v: usize) -> (usize, usize) {
        self.vertex_index[v]
    }

    pub fn vertices(&self) -> &[PhasePoint] {
        &self.vertices
    }

    pub fn point(&self, v: usize) -> PhasePoint {
        self.vertices[v]
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn plaquettes(&self) -> &[Plaquette] {
        &self.plaquettes
    }

    pub fn tau_vertex(&self, v: usize) -> usize {
        self.tau_vertex[v]
    }

    pub fn tau_plaquette(&self, p: usize) -> usize {
        self.tau_plaquette[p]
    }

    /// Row of the boundary between the fundamental domain and its image:
    /// the equator on the sphere, `p = pi` on the torus.
    pub fn half_row(&self) -> usize {
        self.n_lat / 2
    }

    /// Coarsest coordinate spacing.
    pub fn spacing(&self) -> f64 {
        match self.manifold {
            Manifold::Sphere => (PI / self.n_lat as f64).max(TAU / self.n_lon as f64),
            Manifold::Torus => (TAU / self.n_lat as f64).max(TAU / self.n_lon as f64),
        }
    }

    /// Undirected edges between lattice neighbours, each listed once with the
    /// smaller id first.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = self
            .plaquettes
            .iter()
            .flat_map(|p| {
                let n = p.corners.len();
                (0..n).map(move |k| {
                    let (a, b) = (p.corners[k], p.corners[(k + 1) % n]);
                    (a.min(b), a.max(b))
                })
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn fundamental_domain(&self) -> FundamentalDomain {
        let half = self.half_row();
        let vertices: Vec<usize> = (0..self.vertices.len())
            .filter(|&v| self.vertex_index[v].0 <= half)
            .collect();
        let plaquettes: Vec<usize> = self
            .plaquettes
            .iter()
            .enumerate()
            .filter(|(_, p)| p.lat < half)
            .map(|(k, _)| k)
            .collect();
        let row = |i: usize| {
            (0..self.n_lon)
                .map(|j| self.vertex(i, j))
                .collect::<Vec<_>>()
        };
        let boundary = match self.manifold {
            Manifold::Sphere => vec![row(half)],
            Manifold::Torus => vec![row(0), row(half)],
        };
        FundamentalDomain {
            manifold: self.manifold,
            vertices,
            plaquettes,
            boundary,
        }
    }
}

/// One point of every time-reversal pair: the closed northern hemisphere, or
/// the closed cylinder `0 <= p <= pi`.
#[derive(Clone, Debug)]
pub struct FundamentalDomain {
    pub manifold: Manifold,
    pub vertices: Vec<usize>,
    pub plaquettes: Vec<usize>,
    /// Sphere: `[equator]`. Torus: `[p = 0, p = pi]`. Increasing longitude.
    pub boundary: Vec<Vec<usize>>,
}

impl FundamentalDomain {
    pub fn boundary_loop_samples(&self) -> &[Vec<usize>] {
        &self.boundary
    }

    pub fn contains(&self, v: usize) -> bool {
        self.vertices.binary_search(&v).is_ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn close(a: PhasePoint, b: PhasePoint) -> bool {
        if let (Some(x), Some(y)) = (a.unit_vector(), b.unit_vector()) {
            return (0..3).all(|k| (x[k] - y[k]).abs() < 1e-12);
        }
        let (a0, a1) = a.coords();
        let (b0, b1) = b.coords();
        let d1 = (a1 - b1).abs();
        (a0 - b0).abs() < 1e-12 && (d1 < 1e-12 || (d1 - TAU).abs() < 1e-12)
    }

    #[test]
    fn tr_image_examples() {
        assert!(close(
            tr_image(&PhasePoint::sphere(PI / 2.0, 0.0)),
            PhasePoint::sphere(PI / 2.0, PI)
        ));
        assert!(close(
            tr_image(&PhasePoint::torus(1.0, 0.0)),
            PhasePoint::torus(1.0, 0.0)
        ));
        assert!(close(
            tr_image(&PhasePoint::torus(1.0, 2.0)),
            PhasePoint::torus(1.0, TAU - 2.0)
        ));
    }

    #[test]
    fn sphere_has_no_fixed_points() {
        let g = Grid::build(Manifold::Sphere, 8, 16).unwrap();
        for v in 0..g.vertex_count() {
            assert_ne!(g.tau_vertex(v), v);
            let x = g.point(v);
            let y = tr_image(&x);
            let (a, b) = (x.unit_vector().unwrap(), y.unit_vector().unwrap());
            for k in 0..3 {
                assert!((a[k] + b[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sphere_grid_layout() {
        let g = Grid::build(Manifold::Sphere, 8, 16).unwrap();
        assert_eq!(g.vertex_count(), 2 + 7 * 16);
        assert_eq!(g.plaquettes().len(), 8 * 16);
        let tri = g
            .plaquettes()
            .iter()
            .filter(|p| p.corners.len() == 3)
            .count();
        assert_eq!(tri, 2 * 16);
        let (theta, _) = g.point(g.vertex(4, 3)).coords();
        assert!((theta - PI / 2.0).abs() < 1e-15);
        let d = g.fundamental_domain();
        assert_eq!(d.boundary.len(), 1);
        assert_eq!(d.boundary[0].len(), 16);
    }

    #[test]
    fn torus_grid_layout() {
        let g = Grid::build(Manifold::Torus, 8, 8).unwrap();
        assert_eq!(g.plaquettes().len(), 64);
        for j in 0..8 {
            for i in [0, 4] {
                let v = g.vertex(i, j);
                assert_eq!(g.tau_vertex(v), v);
            }
            assert_eq!(g.tau_vertex(g.vertex(1, j)), g.vertex(7, j));
        }
        let fixed: usize = (0..g.vertex_count())
            .filter(|&v| g.tau_vertex(v) == v)
            .count();
        assert_eq!(fixed, 16);
        assert_eq!(g.fundamental_domain().boundary.len(), 2);
    }

    #[test]
    fn tau_matches_tr_image_on_vertices() {
        for m in [Manifold::Sphere, Manifold::Torus] {
            let g = Grid::build(m, 10, 12).unwrap();
            for v in 0..g.vertex_count() {
                assert!(
                    close(g.point(g.tau_vertex(v)), tr_image(&g.point(v))),
                    "{m} vertex {v}"
                );
            }
        }
    }

    #[test]
    fn tau_is_an_involution_on_vertices_and_plaquettes() {
        for m in [Manifold::Sphere, Manifold::Torus] {
            let g = Grid::build(m, 8, 16).unwrap();
            for v in 0..g.vertex_count() {
                assert_eq!(g.tau_vertex(g.tau_vertex(v)), v);
            }
            for p in 0..g.plaquettes().len() {
                assert_eq!(g.tau_plaquette(g.tau_plaquette(p)), p);
                let image: HashSet<usize> = g.plaquettes()[p]
                    .corners
                    .iter()
                    .map(|&v| g.tau_vertex(v))
                    .collect();
                let target: HashSet<usize> = g.plaquettes()[g.tau_plaquette(p)]
                    .corners
                    .iter()
                    .copied()
                    .collect();
                assert_eq!(image, target, "{m} plaquette {p}");
            }
        }
    }

    #[test]
    fn plaquettes_are_positively_oriented() {
        for m in [Manifold::Sphere, Manifold::Torus] {
            let g = Grid::build(m, 8, 16).unwrap();
            for p in g.plaquettes() {
                // lattice coordinates (first, second) unwrapped around the cell
                let pts: Vec<(f64, f64)> = p
                    .corners
                    .iter()
                    .map(|&v| {
                        let (i, j) = g.lat_lon(v);
                        let mut i = i as f64;
                        let mut j = j as f64;
                        if j + 1.0 < p.lon as f64 {
                            j += g.n_lon as f64;
                        }
                        if m == Manifold::Torus && i + 1.0 < p.lat as f64 {
                            i += g.n_lat as f64;
                        }
                        if m == Manifold::Sphere && (i == 0.0 || i == g.n_lat as f64) {
                            j = p.lon as f64 + 0.5;
                        }
                        match m {
                            Manifold::Sphere => (i, j),
                            Manifold::Torus => (j, i),
                        }
                    })
                    .collect();
                let n = pts.len();
                let area: f64 = (0..n)
                    .map(|k| {
                        let (a, b) = (pts[k], pts[(k + 1) % n]);
                        a.0 * b.1 - b.0 * a.1
                    })
                    .sum();
                assert!(
                    area > 0.0,
                    "{m} plaquette ({}, {}) area {area}",
                    p.lat,
                    p.lon
                );
            }
        }
    }

    #[test]
    fn fundamental_domain_covers_once() {
        for m in [Manifold::Sphere, Manifold::Torus] {
            let g = Grid::build(m, 8, 16).unwrap();
            let d = g.fundamental_domain();
            let dom: HashSet<usize> = d.vertices.iter().copied().collect();
            let img: HashSet<usize> = d.vertices.iter().map(|&v| g.tau_vertex(v)).collect();
            assert_eq!(dom.union(&img).count(), g.vertex_count());
            let boundary: HashSet<usize> = d.boundary.iter().flatten().copied().collect();
            let inter: HashSet<usize> = dom.intersection(&img).copied().collect();
            assert_eq!(inter, boundary);
        }
    }

    #[test]
    fn odd_or_small_grids_are_rejected() {
        assert!(matches!(
            Grid::build(Manifold::Sphere, 9, 16),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            Grid::build(Manifold::Torus, 8, 6),
            Err(Error::Config(_))
        ));
    }
}
