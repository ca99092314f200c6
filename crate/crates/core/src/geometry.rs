//! Points, intrinsic reference frames built from atom triples, and the
//! transform of world coordinates into a frame.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Anchors closer than this (Å), or with a normalized cross product below
/// it, do not define a frame.
pub const COLLINEAR_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ZERO: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    #[inline]
    pub fn dot(&self, other: &Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    #[inline]
    pub fn cross(&self, other: &Point3) -> Point3 {
        Point3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, rhs: Point3) -> Point3 {
        Point3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, rhs: Point3) -> Point3 {
        Point3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, k: f64) -> Point3 {
        Point3::new(self.x * k, self.y * k, self.z * k)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

pub fn distance(p: Point3, q: Point3) -> f64 {
    (p - q).norm()
}

/// An orthonormal, right-handed coordinate system. Rows of `basis` are the
/// frame axes expressed in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidFrame {
    pub origin: Point3,
    pub basis: [[f64; 3]; 3],
}

/// Position of an anchor atom within the triple that built a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorRole {
    /// First anchor, at the frame origin.
    Origin,
    /// Second anchor, on the positive e1 axis.
    Axis,
    /// Third anchor, in the e1/e2 half-plane.
    Plane,
}

impl RigidFrame {
    pub fn identity() -> Self {
        RigidFrame {
            origin: Point3::ZERO,
            basis: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn axis(&self, i: usize) -> Point3 {
        Point3::from_array(self.basis[i])
    }

    /// `basis · (p − origin)`.
    #[inline]
    pub fn to_frame_coords(&self, p: Point3) -> Point3 {
        let d = p - self.origin;
        let [r0, r1, r2] = &self.basis;
        Point3::new(
            r0[0] * d.x + r0[1] * d.y + r0[2] * d.z,
            r1[0] * d.x + r1[1] * d.y + r1[2] * d.z,
            r2[0] * d.x + r2[1] * d.y + r2[2] * d.z,
        )
    }

    /// `origin + basisᵀ · q`, the inverse of [`RigidFrame::to_frame_coords`].
    pub fn from_frame_coords(&self, q: Point3) -> Point3 {
        let b = &self.basis;
        self.origin
            + Point3::new(
                b[0][0] * q.x + b[1][0] * q.y + b[2][0] * q.z,
                b[0][1] * q.x + b[1][1] * q.y + b[2][1] * q.z,
                b[0][2] * q.x + b[1][2] * q.y + b[2][2] * q.z,
            )
    }

    /// Frame coordinates of one of the frame's own anchor atoms.
    ///
    /// Components that vanish by construction (all three for the origin,
    /// y and z for the axis anchor, z for the plane anchor) are returned as
    /// exact zeros, so anchors never straddle a cell boundary because of
    /// rounding noise.
    pub fn anchor_coords(&self, role: AnchorRole, p: Point3) -> Point3 {
        match role {
            AnchorRole::Origin => Point3::ZERO,
            AnchorRole::Axis => Point3::new(self.to_frame_coords(p).x, 0.0, 0.0),
            AnchorRole::Plane => {
                let q = self.to_frame_coords(p);
                Point3::new(q.x, q.y, 0.0)
            }
        }
    }

    pub fn determinant(&self) -> f64 {
        let b = &self.basis;
        b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
            - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
            + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0])
    }

    /// Largest deviation of `basis · basisᵀ` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let dot = self.axis(i).dot(&self.axis(j));
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - want).abs());
            }
        }
        worst
    }
}

/// Builds the frame anchored at `a`: e1 points from `a` to `b`, e3 is
/// normal to the plane of the three atoms and e2 completes a right-handed
/// system, so `c` lands at non-negative e2.
pub fn frame_from_triple(a: Point3, b: Point3, c: Point3) -> Result<RigidFrame> {
    let ab = b - a;
    let ac = c - a;
    let (lab, lac, lbc) = (ab.norm(), ac.norm(), (c - b).norm());
    if !(lab >= COLLINEAR_TOLERANCE && lac >= COLLINEAR_TOLERANCE && lbc >= COLLINEAR_TOLERANCE)
    {
        return Err(Error::CollinearAtoms);
    }
    let normal = ab.cross(&ac);
    let sine = normal.norm() / (lab * lac);
    if sine.is_nan() || sine < COLLINEAR_TOLERANCE {
        return Err(Error::CollinearAtoms);
    }

    let e1 = ab * (1.0 / lab);
    let n = e1.cross(&ac);
    let e3 = n * (1.0 / n.norm());
    let e2 = e3.cross(&e1);
    Ok(RigidFrame {
        origin: a,
        basis: [e1.to_array(), e2.to_array(), e3.to_array()],
    })
}

/// A proper rigid motion `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidMotion {
    pub rotation: [[f64; 3]; 3],
    pub translation: Point3,
}

impl RigidMotion {
    pub fn identity() -> Self {
        RigidMotion {
            rotation: RigidFrame::identity().basis,
            translation: Point3::ZERO,
        }
    }

    /// Rotation from a unit quaternion `(w, x, y, z)`; the quaternion is
    /// normalized first.
    pub fn from_quaternion(q: [f64; 4], translation: Point3) -> Self {
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let [w, x, y, z] = q.map(|v| v / n);
        let rotation = [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ];
        RigidMotion {
            rotation,
            translation,
        }
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        let r = &self.rotation;
        Point3::new(
            r[0][0] * p.x + r[0][1] * p.y + r[0][2] * p.z,
            r[1][0] * p.x + r[1][1] * p.y + r[1][2] * p.z,
            r[2][0] * p.x + r[2][1] * p.y + r[2][2] * p.z,
        ) + self.translation
    }
}
