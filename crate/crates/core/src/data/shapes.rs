//! Synthetic test shapes with exact surface-distance queries.
//!
//! Polyhedra are triangle soups sampled by face area; the sphere and torus
//! are sampled from their parametric forms. Every shape answers
//! point-to-surface distance analytically, which keeps outlier labels
//! unambiguous.

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Icosahedron,
    Sphere,
    Cube,
    Torus,
}

impl ShapeKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "icosahedron" => Ok(ShapeKind::Icosahedron),
            "sphere" => Ok(ShapeKind::Sphere),
            "cube" => Ok(ShapeKind::Cube),
            "torus" => Ok(ShapeKind::Torus),
            other => Err(Error::UnknownShape(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Icosahedron => "icosahedron",
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cube => "cube",
            ShapeKind::Torus => "torus",
        }
    }
}

const TORUS_MAJOR: f64 = 1.0;
const TORUS_MINOR: f64 = 0.35;

/// An analytic surface that can be sampled and queried for distance.
#[derive(Debug, Clone)]
pub struct Shape {
    kind: ShapeKind,
    faces: Vec<[Point3; 3]>,
    face_cumulative_area: Vec<f64>,
}

impl Shape {
    pub fn new(kind: ShapeKind) -> Self {
        let faces = match kind {
            ShapeKind::Icosahedron => icosahedron_faces(),
            ShapeKind::Cube => cube_faces(),
            ShapeKind::Sphere | ShapeKind::Torus => Vec::new(),
        };
        let mut face_cumulative_area = Vec::with_capacity(faces.len());
        let mut acc = 0.0;
        for f in &faces {
            acc += triangle_area(f);
            face_cumulative_area.push(acc);
        }
        Shape {
            kind,
            faces,
            face_cumulative_area,
        }
    }

    pub fn kind(&self) -> ShapeKind {
        self.kind
    }

    /// Triangle faces for polyhedral shapes; empty for smooth surfaces.
    pub fn faces(&self) -> &[[Point3; 3]] {
        &self.faces
    }

    /// `n_points` sampled uniformly by surface area, deterministic per seed.
    pub fn sample(&self, n_points: usize, seed: u64) -> Result<PointCloud> {
        if n_points < 1 {
            return Err(Error::InvalidArgument(
                "shape sampling needs n_points >= 1".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..n_points)
            .map(|_| match self.kind {
                ShapeKind::Sphere => sample_sphere(&mut rng),
                ShapeKind::Torus => sample_torus(&mut rng),
                ShapeKind::Icosahedron | ShapeKind::Cube => self.sample_face_point(&mut rng),
            })
            .collect();
        Ok(PointCloud::from_points(points))
    }

    fn sample_face_point(&self, rng: &mut ChaCha8Rng) -> Point3 {
        let total = *self.face_cumulative_area.last().expect("faces present");
        let t = rng.gen_range(0.0..total);
        let idx = self
            .face_cumulative_area
            .partition_point(|&acc| acc <= t)
            .min(self.faces.len() - 1);
        let [a, b, c] = self.faces[idx];
        let mut u: f64 = rng.gen_range(0.0..1.0);
        let mut v: f64 = rng.gen_range(0.0..1.0);
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        a + (b - a) * u + (c - a) * v
    }

    /// Exact Euclidean distance from `p` to the surface.
    pub fn surface_distance(&self, p: Point3) -> f64 {
        match self.kind {
            ShapeKind::Sphere => (p.norm() - 1.0).abs(),
            ShapeKind::Torus => {
                let ring = ((p.x * p.x + p.y * p.y).sqrt() - TORUS_MAJOR).hypot(p.z);
                (ring - TORUS_MINOR).abs()
            }
            ShapeKind::Icosahedron | ShapeKind::Cube => self
                .faces
                .iter()
                .map(|f| p.dist(closest_point_on_triangle(p, f[0], f[1], f[2])))
                .fold(f64::INFINITY, f64::min),
        }
    }
}

/// Cloud with `n_points` sampled uniformly by area on the given shape.
pub fn generate_shape(kind: ShapeKind, n_points: usize, seed: u64) -> Result<PointCloud> {
    Shape::new(kind).sample(n_points, seed)
}

fn sample_sphere(rng: &mut ChaCha8Rng) -> Point3 {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    Point3::new(r * phi.cos(), r * phi.sin(), z)
}

fn sample_torus(rng: &mut ChaCha8Rng) -> Point3 {
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    // minor angle by rejection: surface density is proportional to
    // (R + r·cos ψ)
    let psi = loop {
        let cand: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let accept: f64 = rng.gen_range(0.0..1.0);
        if accept <= (TORUS_MAJOR + TORUS_MINOR * cand.cos()) / (TORUS_MAJOR + TORUS_MINOR) {
            break cand;
        }
    };
    let ring = TORUS_MAJOR + TORUS_MINOR * psi.cos();
    Point3::new(ring * theta.cos(), ring * theta.sin(), TORUS_MINOR * psi.sin())
}

fn triangle_area(f: &[Point3; 3]) -> f64 {
    (f[1] - f[0]).cross(f[2] - f[0]).norm() * 0.5
}

/// Regular icosahedron with unit circumradius. Faces are derived from the
/// vertex set: an edge is any vertex pair at the minimal pairwise distance,
/// and a face is any mutually adjacent triple.
fn icosahedron_faces() -> Vec<[Point3; 3]> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let norm = (1.0 + phi * phi).sqrt();
    let (a, b) = (1.0 / norm, phi / norm);
    let mut verts = Vec::with_capacity(12);
    for &s1 in &[-1.0, 1.0] {
        for &s2 in &[-1.0, 1.0] {
            verts.push(Point3::new(0.0, s1 * a, s2 * b));
            verts.push(Point3::new(s1 * a, s2 * b, 0.0));
            verts.push(Point3::new(s1 * b, 0.0, s2 * a));
        }
    }
    let mut min_d = f64::INFINITY;
    for i in 0..verts.len() {
        for j in i + 1..verts.len() {
            min_d = min_d.min(verts[i].dist(verts[j]));
        }
    }
    let is_edge = |i: usize, j: usize| (verts[i].dist(verts[j]) - min_d).abs() < 1e-9;
    let mut faces = Vec::with_capacity(20);
    for i in 0..verts.len() {
        for j in i + 1..verts.len() {
            if !is_edge(i, j) {
                continue;
            }
            for k in j + 1..verts.len() {
                if is_edge(i, k) && is_edge(j, k) {
                    faces.push([verts[i], verts[j], verts[k]]);
                }
            }
        }
    }
    debug_assert_eq!(faces.len(), 20);
    faces
}

/// Cube surface [−1, 1]³ as 12 triangles.
fn cube_faces() -> Vec<[Point3; 3]> {
    let mut faces = Vec::with_capacity(12);
    // for each axis and sign, the face's two triangles
    for axis in 0..3 {
        for &sign in &[-1.0, 1.0] {
            let corner = |u: f64, v: f64| -> Point3 {
                let mut c = [0.0; 3];
                c[axis] = sign;
                c[(axis + 1) % 3] = u;
                c[(axis + 2) % 3] = v;
                Point3::new(c[0], c[1], c[2])
            };
            let p00 = corner(-1.0, -1.0);
            let p10 = corner(1.0, -1.0);
            let p01 = corner(-1.0, 1.0);
            let p11 = corner(1.0, 1.0);
            faces.push([p00, p10, p11]);
            faces.push([p00, p11, p01]);
        }
    }
    faces
}

/// Closest point on triangle (a, b, c) to p (Voronoi-region walk).
pub fn closest_point_on_triangle(p: Point3, a: Point3, b: Point3, c: Point3) -> Point3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}
