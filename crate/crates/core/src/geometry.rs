//! Oriented bounding boxes and the geometric queries built on them.
//!
//! World convention: z-up, floor top plane at z = 0, gravity along -z.

use std::cmp::Ordering;
use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub, SubAssign};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum half-extent enforced on every box axis (meters).
pub const MIN_HALF_EXTENT: f64 = 1e-4;

/// Tolerance for orthonormality / determinant checks on rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn splat(v: f64) -> Self {
        Self::new(v, v, v)
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Componentwise product.
    pub fn hadamard(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    pub fn abs(self) -> Vec3 {
        Vec3::new(self.x.abs(), self.y.abs(), self.z.abs())
    }

    pub fn max(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn min(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Proper rotation stored as a row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 9]", into = "[f64; 9]")]
pub struct Rotation3 {
    m: [[f64; 3]; 3],
}

impl Default for Rotation3 {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Rotation3 {
    pub const IDENTITY: Rotation3 = Rotation3 {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    /// Wraps a matrix, rejecting anything that is not orthonormal with det +1.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Self> {
        let r = Rotation3 { m };
        let err = r.orthonormality_error();
        if !(err <= ROTATION_TOLERANCE) {
            return Err(Error::BadConfig(format!(
                "rotation is not orthonormal with det +1 (error {err:e})"
            )));
        }
        Ok(r)
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        self.m
    }

    pub fn about_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation3 {
            m: [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
        }
    }

    pub fn about_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation3 {
            m: [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
        }
    }

    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation3 {
            m: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Rodrigues rotation about a (not necessarily unit) axis.
    pub fn about_axis(axis: Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let k = axis * (1.0 / n);
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        Rotation3 {
            m: [
                [t * k.x * k.x + c, t * k.x * k.y - s * k.z, t * k.x * k.z + s * k.y],
                [t * k.x * k.y + s * k.z, t * k.y * k.y + c, t * k.y * k.z - s * k.x],
                [t * k.x * k.z - s * k.y, t * k.y * k.z + s * k.x, t * k.z * k.z + c],
            ],
        }
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        let m = &self.m;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    /// Applies the inverse (transpose) rotation.
    pub fn apply_inverse(&self, v: Vec3) -> Vec3 {
        let m = &self.m;
        Vec3::new(
            m[0][0] * v.x + m[1][0] * v.y + m[2][0] * v.z,
            m[0][1] * v.x + m[1][1] * v.y + m[2][1] * v.z,
            m[0][2] * v.x + m[1][2] * v.y + m[2][2] * v.z,
        )
    }

    pub fn compose(&self, rhs: &Rotation3) -> Rotation3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.m[i][k] * rhs.m[k][j]).sum();
            }
        }
        Rotation3 { m: out }
    }

    pub fn transpose(&self) -> Rotation3 {
        let m = &self.m;
        Rotation3 {
            m: [
                [m[0][0], m[1][0], m[2][0]],
                [m[0][1], m[1][1], m[2][1]],
                [m[0][2], m[1][2], m[2][2]],
            ],
        }
    }

    /// Local axis `i` expressed in world coordinates (column `i`).
    pub fn axis(&self, i: usize) -> Vec3 {
        Vec3::new(self.m[0][i], self.m[1][i], self.m[2][i])
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// max |RᵀR − I| entry combined with |det − 1|.
    pub fn orthonormality_error(&self) -> f64 {
        let mut err: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let d = self.axis(i).dot(self.axis(j)) - if i == j { 1.0 } else { 0.0 };
                err = err.max(d.abs());
            }
        }
        err.max((self.determinant() - 1.0).abs())
    }

    /// Gram-Schmidt on the columns, keeping the first column's direction.
    pub fn orthonormalized(&self) -> Rotation3 {
        let a = self.axis(0);
        let a = a * (1.0 / a.norm());
        let b = self.axis(1);
        let b = b - a * a.dot(b);
        let b = b * (1.0 / b.norm());
        let c = a.cross(b);
        Rotation3 {
            m: [[a.x, b.x, c.x], [a.y, b.y, c.y], [a.z, b.z, c.z]],
        }
    }

    /// Angle of the rotation about z closest (Frobenius) to this one.
    pub fn nearest_yaw(&self) -> f64 {
        let m = &self.m;
        (m[1][0] - m[0][1]).atan2(m[0][0] + m[1][1])
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|v| v.is_finite())
    }
}

impl TryFrom<[f64; 9]> for Rotation3 {
    type Error = String;
    fn try_from(a: [f64; 9]) -> std::result::Result<Self, String> {
        let m = [[a[0], a[1], a[2]], [a[3], a[4], a[5]], [a[6], a[7], a[8]]];
        let r = Rotation3 { m };
        let err = r.orthonormality_error();
        // Hand-written files get a looser gate; anything close is snapped back.
        if !(err <= 1e-6) {
            return Err(format!("rotation is not orthonormal with det +1 (error {err:e})"));
        }
        if err > 1e-12 {
            Ok(r.orthonormalized())
        } else {
            Ok(r)
        }
    }
}

impl From<Rotation3> for [f64; 9] {
    fn from(r: Rotation3) -> Self {
        let m = r.m;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }
}

/// Sign pattern of canonical corner `i`: bit 2 → x, bit 1 → y, bit 0 → z; set bit = +1.
pub fn corner_signs(i: usize) -> Vec3 {
    let s = |bit: usize| if (i >> bit) & 1 == 1 { 1.0 } else { -1.0 };
    Vec3::new(s(2), s(1), s(0))
}

/// Local-frame outward normals in the fixed order +x, −x, +y, −y, +z, −z.
pub const LOCAL_FACE_NORMALS: [Vec3; 6] = [
    Vec3::new(1.0, 0.0, 0.0),
    Vec3::new(-1.0, 0.0, 0.0),
    Vec3::new(0.0, 1.0, 0.0),
    Vec3::new(0.0, -1.0, 0.0),
    Vec3::new(0.0, 0.0, 1.0),
    Vec3::new(0.0, 0.0, -1.0),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Vec3,
    pub half_extents: Vec3,
    pub rotation: Rotation3,
}

impl OrientedBox {
    /// Builds a box, raising every half-extent to at least [`MIN_HALF_EXTENT`].
    pub fn new(center: Vec3, half_extents: Vec3, rotation: Rotation3) -> Self {
        Self {
            center,
            half_extents: half_extents.abs().max(Vec3::splat(MIN_HALF_EXTENT)),
            rotation,
        }
    }

    pub fn axis_aligned(center: Vec3, half_extents: Vec3) -> Self {
        Self::new(center, half_extents, Rotation3::IDENTITY)
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.x * self.half_extents.y * self.half_extents.z
    }

    pub fn is_finite(&self) -> bool {
        self.center.is_finite() && self.half_extents.is_finite() && self.rotation.is_finite()
    }

    /// Corner `i` of [`OrientedBox::corners`].
    pub fn corner(&self, i: usize) -> Vec3 {
        self.center + self.rotation.apply(corner_signs(i).hadamard(self.half_extents))
    }

    /// The 8 corners in canonical bit-pattern order.
    pub fn corners(&self) -> [Vec3; 8] {
        std::array::from_fn(|i| self.corner(i))
    }

    /// World-frame outward unit normals, ordered +x, −x, +y, −y, +z, −z of the local frame.
    pub fn face_normals(&self) -> [Vec3; 6] {
        std::array::from_fn(|i| self.rotation.apply(LOCAL_FACE_NORMALS[i]))
    }

    pub fn to_local(&self, p: Vec3) -> Vec3 {
        self.rotation.apply_inverse(p - self.center)
    }

    pub fn contains(&self, p: Vec3, tol: f64) -> bool {
        let q = self.to_local(p).abs();
        let h = self.half_extents;
        q.x <= h.x + tol && q.y <= h.y + tol && q.z <= h.z + tol
    }

    /// Euclidean distance from `p` to the solid box (0 inside).
    pub fn distance_to_point(&self, p: Vec3) -> f64 {
        let q = self.to_local(p).abs() - self.half_extents;
        q.max(Vec3::ZERO).norm()
    }

    /// Radius of the circumscribed sphere.
    pub fn bounding_radius(&self) -> f64 {
        self.half_extents.norm()
    }

    pub fn min_z(&self) -> f64 {
        self.corners().iter().map(|c| c.z).fold(f64::INFINITY, f64::min)
    }

    pub fn max_z(&self) -> f64 {
        self.corners().iter().map(|c| c.z).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Axis-aligned bounds of the corners projected onto the ground plane: `(min, max)`.
    pub fn footprint(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for c in self.corners() {
            lo[0] = lo[0].min(c.x);
            lo[1] = lo[1].min(c.y);
            hi[0] = hi[0].max(c.x);
            hi[1] = hi[1].max(c.y);
        }
        (lo, hi)
    }

    pub fn translated(&self, t: Vec3) -> OrientedBox {
        OrientedBox {
            center: self.center + t,
            ..*self
        }
    }

    /// Applies the rigid motion `p ↦ R·p + t` to the box.
    pub fn transformed(&self, rotation: &Rotation3, t: Vec3) -> OrientedBox {
        OrientedBox {
            center: rotation.apply(self.center) + t,
            half_extents: self.half_extents,
            rotation: rotation.compose(&self.rotation),
        }
    }

    /// Uniform sample from the solid box.
    pub fn sample_interior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        let u = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        self.center + self.rotation.apply(u.hadamard(self.half_extents))
    }

    /// Deterministic `n × n` grid on each of the 6 faces (face centres when `n == 1`).
    pub fn surface_grid(&self, n: usize) -> Vec<Vec3> {
        let n = n.max(1);
        let steps: Vec<f64> = if n == 1 {
            vec![0.0]
        } else {
            (0..n).map(|k| -1.0 + 2.0 * k as f64 / (n - 1) as f64).collect()
        };
        let h = self.half_extents;
        let mut out = Vec::with_capacity(6 * n * n);
        for axis in 0..3 {
            let (u_axis, v_axis) = ((axis + 1) % 3, (axis + 2) % 3);
            for sign in [1.0, -1.0] {
                for &u in &steps {
                    for &v in &steps {
                        let mut local = [0.0; 3];
                        local[axis] = sign;
                        local[u_axis] = u;
                        local[v_axis] = v;
                        let local = Vec3::from(local).hadamard(h);
                        out.push(self.center + self.rotation.apply(local));
                    }
                }
            }
        }
        out
    }

    /// Lexicographic total order over all stored numbers; used to canonicalize argument order.
    pub fn total_cmp(&self, other: &OrientedBox) -> Ordering {
        let flat = |b: &OrientedBox| {
            let r: [f64; 9] = b.rotation.into();
            let mut v = Vec::with_capacity(15);
            v.extend_from_slice(&b.center.to_array());
            v.extend_from_slice(&b.half_extents.to_array());
            v.extend_from_slice(&r);
            v
        };
        flat(self)
            .iter()
            .zip(flat(other).iter())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec3>", into = "Vec<Vec3>")]
pub struct PointCloud {
    points: Vec<Vec3>,
}

impl PointCloud {
    pub const MIN_POINTS: usize = 4;

    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.len() < Self::MIN_POINTS {
            return Err(Error::DegenerateCloud(format!(
                "{} points given, at least {} required",
                points.len(),
                Self::MIN_POINTS
            )));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::DegenerateCloud(format!("point {i} is not finite")));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        let sum = self.points.iter().fold(Vec3::ZERO, |acc, &p| acc + p);
        sum * (1.0 / self.points.len() as f64)
    }
}

impl TryFrom<Vec<Vec3>> for PointCloud {
    type Error = String;
    fn try_from(points: Vec<Vec3>) -> std::result::Result<Self, String> {
        PointCloud::new(points).map_err(|e| e.to_string())
    }
}

impl From<PointCloud> for Vec<Vec3> {
    fn from(c: PointCloud) -> Self {
        c.points
    }
}

/// Principal direction of 2D points as a unit vector whose largest-magnitude
/// component is positive. Fails when the covariance has rank 0.
fn principal_direction_2d(pts: &[(f64, f64)], plane: &str) -> Result<(f64, f64)> {
    let n = pts.len() as f64;
    let (mu, mv) = pts.iter().fold((0.0, 0.0), |(a, b), &(u, v)| (a + u, b + v));
    let (mu, mv) = (mu / n, mv / n);
    let (mut suu, mut svv, mut suv) = (0.0, 0.0, 0.0);
    for &(u, v) in pts {
        let (du, dv) = (u - mu, v - mv);
        suu += du * du;
        svv += dv * dv;
        suv += du * dv;
    }
    let (suu, svv, suv) = (suu / n, svv / n, suv / n);
    let scale = mu.abs().max(mv.abs()).max(1.0);
    if suu + svv <= 1e-24 * scale * scale {
        return Err(Error::DegenerateCloud(format!(
            "all points coincide in the {plane} projection"
        )));
    }
    // Closed-form eigenvector of the symmetric 2x2 covariance for the larger eigenvalue.
    let phi = 0.5 * (2.0 * suv).atan2(suu - svv);
    let (mut du, mut dv) = (phi.cos(), phi.sin());
    let dominant = if du.abs() >= dv.abs() { du } else { dv };
    if dominant < 0.0 {
        du = -du;
        dv = -dv;
    }
    Ok((du, dv))
}

fn quarter_turn_residual(theta: f64) -> f64 {
    let q = std::f64::consts::FRAC_PI_2;
    let r = theta - q * (theta / q).round();
    if r <= -q / 2.0 {
        r + q
    } else {
        r
    }
}

/// Convex hull of 2D points (monotone chain), counter-clockwise, no repeats.
fn convex_hull_2d(pts: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut p = pts.to_vec();
    p.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * p.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 {
            Box::new(p.iter())
        } else {
            Box::new(p.iter().rev())
        };
        for &q in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    hull
}

/// In-plane orientation of a 2D point set: the principal direction picks the
/// axis labeling, and the minimum-area bounding rectangle of the convex hull
/// pins the angle within that quarter turn.
fn plane_angle(pts: &[(f64, f64)], plane: &str) -> Result<f64> {
    let (du, dv) = principal_direction_2d(pts, plane)?;
    let pca = dv.atan2(du);
    let hull = convex_hull_2d(pts);
    if hull.len() < 3 {
        return Ok(pca);
    }
    let area = |a: f64| {
        let (c, s) = (a.cos(), a.sin());
        let (mut lo_u, mut hi_u, mut lo_v, mut hi_v) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in &hull {
            let (u, v) = (c * x + s * y, -s * x + c * y);
            lo_u = lo_u.min(u);
            hi_u = hi_u.max(u);
            lo_v = lo_v.min(v);
            hi_v = hi_v.max(v);
        }
        (hi_u - lo_u) * (hi_v - lo_v)
    };
    let mut best = (f64::INFINITY, pca);
    for k in 0..hull.len() {
        let (a, b) = (hull[k], hull[(k + 1) % hull.len()]);
        let edge = (b.1 - a.1).atan2(b.0 - a.0);
        let area = area(edge);
        if area < best.0 {
            best = (area, edge);
        }
    }
    let q = std::f64::consts::FRAC_PI_2;
    Ok(best.1 + q * ((pca - best.1) / q).round())
}

/// Per-plane box fit.
///
/// The points are projected onto the yz, xz and xy planes and the in-plane
/// orientation of each projection (see [`plane_angle`]) gives the rotation
/// about the plane normal (θx, θy, θz), with θx and θy reduced modulo a
/// quarter turn. The rotation is composed as `Rz·Ry·Rx`, the cloud is
/// de-rotated, and the box is the axis-aligned span in that frame.
pub fn fit_obb_pca(cloud: &PointCloud) -> Result<OrientedBox> {
    let pts = cloud.points();
    let yz: Vec<(f64, f64)> = pts.iter().map(|p| (p.y, p.z)).collect();
    let xz: Vec<(f64, f64)> = pts.iter().map(|p| (p.x, p.z)).collect();
    let xy: Vec<(f64, f64)> = pts.iter().map(|p| (p.x, p.y)).collect();

    // Rx(θ) carries +y to (0, cosθ, sinθ); Ry(θ) carries +x to (cosθ, 0, −sinθ);
    // Rz(θ) carries +x to (cosθ, sinθ, 0).
    // A box looks the same after a quarter turn with its extents relabeled, so
    // the tilt angles are taken in (−π/4, π/4]. Otherwise an upright box
    // taller than it is wide reads as tipped onto its side.
    let theta_x = quarter_turn_residual(plane_angle(&yz, "yz")?);
    let theta_y = quarter_turn_residual(-plane_angle(&xz, "xz")?);
    let theta_z = plane_angle(&xy, "xy")?;

    let rotation = Rotation3::about_z(theta_z)
        .compose(&Rotation3::about_y(theta_y))
        .compose(&Rotation3::about_x(theta_x));

    let mut lo = Vec3::splat(f64::INFINITY);
    let mut hi = Vec3::splat(f64::NEG_INFINITY);
    for &p in pts {
        let q = rotation.apply_inverse(p);
        lo = lo.min(q);
        hi = hi.max(q);
    }
    let center = rotation.apply((lo + hi) * 0.5);
    Ok(OrientedBox::new(center, (hi - lo) * 0.5, rotation))
}

/// Sample count and seed for Monte-Carlo volume queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub samples: usize,
    pub seed: u64,
}

impl MonteCarlo {
    pub const DEFAULT_SAMPLES: usize = 4096;
    pub const DEFAULT_SEED: u64 = 0x0b0c_5eed;
}

impl Default for MonteCarlo {
    fn default() -> Self {
        Self {
            samples: Self::DEFAULT_SAMPLES,
            seed: Self::DEFAULT_SEED,
        }
    }
}

/// Separating-axis test for two boxes; `margin` inflates `a` on every axis.
/// Touching boxes count as intersecting.
pub fn boxes_intersect(a: &OrientedBox, b: &OrientedBox, margin: f64) -> bool {
    let ha = a.half_extents + Vec3::splat(margin);
    let hb = b.half_extents;
    let d = b.center - a.center;
    if d.norm() > ha.norm() + hb.norm() {
        return false;
    }
    let ax: [Vec3; 3] = std::array::from_fn(|i| a.rotation.axis(i));
    let bx: [Vec3; 3] = std::array::from_fn(|i| b.rotation.axis(i));
    let separated = |axis: Vec3| {
        let len = axis.norm();
        if len < 1e-12 {
            return false;
        }
        let ra: f64 = (0..3).map(|i| ha[i] * ax[i].dot(axis).abs()).sum();
        let rb: f64 = (0..3).map(|i| hb[i] * bx[i].dot(axis).abs()).sum();
        // Small relative slack keeps exactly-touching faces classified as touching.
        d.dot(axis).abs() > ra + rb + 1e-12 * len
    };
    for i in 0..3 {
        if separated(ax[i]) || separated(bx[i]) {
            return false;
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            if separated(ax[i].cross(bx[j])) {
                return false;
            }
        }
    }
    true
}

/// Monte-Carlo estimate of `vol(a ∩ b)`: `vol(a)` times the fraction of
/// uniform samples of `a` that fall inside `b`.
pub fn mc_overlap_volume(a: &OrientedBox, b: &OrientedBox, samples: usize, seed: u64) -> f64 {
    let samples = samples.max(1);
    if !boxes_intersect(a, b, 0.0) {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inside = (0..samples)
        .filter(|_| b.contains(a.sample_interior(&mut rng), 1e-12))
        .count();
    a.volume() * inside as f64 / samples as f64
}

/// Volume-based IoU. Arguments are put in canonical order first, so the
/// result is symmetric for a fixed seed.
pub fn iou3d(a: &OrientedBox, b: &OrientedBox, mc: &MonteCarlo) -> f64 {
    let (a, b) = if a.total_cmp(b) == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    };
    let overlap = mc_overlap_volume(a, b, mc.samples, mc.seed);
    if overlap <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - overlap;
    (overlap / union).clamp(0.0, 1.0)
}

/// IoU of the ground-plane footprints (axis-aligned bounds of projected corners).
pub fn iou2d_bev(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let (alo, ahi) = a.footprint();
    let (blo, bhi) = b.footprint();
    let w = (ahi[0].min(bhi[0]) - alo[0].max(blo[0])).max(0.0);
    let h = (ahi[1].min(bhi[1]) - alo[1].max(blo[1])).max(0.0);
    let inter = w * h;
    if inter <= 0.0 {
        return 0.0;
    }
    let area = |lo: [f64; 2], hi: [f64; 2]| (hi[0] - lo[0]) * (hi[1] - lo[1]);
    inter / (area(alo, ahi) + area(blo, bhi) - inter)
}

/// Minimum distance between the surfaces of two boxes, 0 when they overlap or touch.
///
/// Each box's surface is sampled on a `samples_per_face`² grid per face and
/// every sample is measured exactly against the other solid box; the result
/// overestimates the true gap by at most one grid spacing.
pub fn min_surface_distance(a: &OrientedBox, b: &OrientedBox, samples_per_face: usize) -> f64 {
    if boxes_intersect(a, b, 0.0) {
        return 0.0;
    }
    let from_a = a
        .surface_grid(samples_per_face)
        .into_iter()
        .map(|p| b.distance_to_point(p))
        .fold(f64::INFINITY, f64::min);
    let from_b = b
        .surface_grid(samples_per_face)
        .into_iter()
        .map(|p| a.distance_to_point(p))
        .fold(f64::INFINITY, f64::min);
    from_a.min(from_b)
}
