//! Rotations on SO(3) stored as unit quaternions.
//!
//! Every [`Rotation`] is kept on the canonical hemisphere (`w >= 0`, ties broken
//! by the first nonzero vector component) so that each element of SO(3) has
//! exactly one stored representative. Tangent vectors are axis-angle 3-vectors
//! in radians.
//!
//! Matrices only appear at conversion boundaries ([`Rotation::to_matrix`],
//! [`Rotation::from_matrix`]); all arithmetic happens on quaternions.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Mul;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Below this angle `exp_map` and `log_map` switch to their Taylor forms.
const SMALL_ANGLE: f64 = 1e-8;

/// Ingested quaternions whose squared norm is this close to one are kept
/// bit-for-bit, so files written by this crate read back unchanged.
const INGEST_NORM_TOL: f64 = 1e-15;

/// Element of SO(3) as a unit quaternion `(w, x, y, z)` on the canonical hemisphere.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Rotation {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

/// Axis-angle tangent vector (radians); the angle is the Euclidean norm.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct TangentVector(pub [f64; 3]);

impl TangentVector {
    pub const ZERO: TangentVector = TangentVector([0.0; 3]);

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self([x, y, z])
    }

    pub fn norm(&self) -> f64 {
        let [x, y, z] = self.0;
        (x * x + y * y + z * z).sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        let [x, y, z] = self.0;
        Self([x * s, y * s, z * s])
    }

    pub fn add(&self, other: &TangentVector) -> Self {
        let [a, b, c] = self.0;
        let [x, y, z] = other.0;
        Self([a + x, b + y, c + z])
    }
}

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Rotation(w: {:.6}, x: {:.6}, y: {:.6}, z: {:.6}; {:.4} deg)",
            self.w,
            self.x,
            self.y,
            self.z,
            self.angle().to_degrees()
        )
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl From<Rotation> for [f64; 4] {
    fn from(r: Rotation) -> Self {
        r.to_wxyz()
    }
}

impl TryFrom<[f64; 4]> for Rotation {
    type Error = String;

    fn try_from(q: [f64; 4]) -> Result<Self, Self::Error> {
        Rotation::from_wxyz(q[0], q[1], q[2], q[3])
            .ok_or_else(|| format!("not a valid rotation quaternion: {q:?}"))
    }
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Builds a rotation from raw quaternion components.
    ///
    /// Returns `None` for non-finite or zero-norm input. Components already of
    /// unit norm (within 1e-15) are stored unchanged apart from the hemisphere
    /// flip; anything else is normalized.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Option<Self> {
        if !(w.is_finite() && x.is_finite() && y.is_finite() && z.is_finite()) {
            return None;
        }
        let n2 = w * w + x * x + y * y + z * z;
        if n2 < 1e-300 {
            return None;
        }
        let r = if (n2 - 1.0).abs() <= INGEST_NORM_TOL {
            Rotation { w, x, y, z }
        } else {
            let n = n2.sqrt();
            Rotation {
                w: w / n,
                x: x / n,
                y: y / n,
                z: z / n,
            }
        };
        Some(r.canonical())
    }

    /// Normalizes and canonicalizes without validity checks; for internal products.
    fn normalized(w: f64, x: f64, y: f64, z: f64) -> Self {
        if x == 0.0 && y == 0.0 && z == 0.0 {
            return Self::IDENTITY;
        }
        let n = (w * w + x * x + y * y + z * z).sqrt();
        Rotation {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        }
        .canonical()
    }

    /// Flips the sign so the representative lies on the canonical hemisphere.
    pub fn canonical(self) -> Self {
        let flip = if self.w != 0.0 {
            self.w < 0.0
        } else if self.x != 0.0 {
            self.x < 0.0
        } else if self.y != 0.0 {
            self.y < 0.0
        } else {
            self.z < 0.0
        };
        if flip {
            Rotation {
                w: -self.w,
                x: -self.x,
                y: -self.y,
                z: -self.z,
            }
            .unsigned_zeros()
        } else {
            self.unsigned_zeros()
        }
    }

    fn unsigned_zeros(self) -> Self {
        // -0.0 + 0.0 == +0.0, so equal rotations compare bit-equal
        Rotation {
            w: self.w + 0.0,
            x: self.x + 0.0,
            y: self.y + 0.0,
            z: self.z + 0.0,
        }
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_wxyz(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        exp_map(&TangentVector([
            axis[0] / n * angle,
            axis[1] / n * angle,
            axis[2] / n * angle,
        ]))
    }

    pub fn rx(angle: f64) -> Self {
        Self::from_axis_angle([1.0, 0.0, 0.0], angle)
    }
    pub fn ry(angle: f64) -> Self {
        Self::from_axis_angle([0.0, 1.0, 0.0], angle)
    }
    pub fn rz(angle: f64) -> Self {
        Self::from_axis_angle([0.0, 0.0, 1.0], angle)
    }

    /// Quaternion (Hamilton) product `self * other`, renormalized.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        let (a, b) = (self, other);
        Rotation::normalized(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    /// Conjugate quaternion. Exact: only signs change.
    pub fn inverse(&self) -> Rotation {
        Rotation {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
        .canonical()
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let s = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        2.0 * s.atan2(self.w.abs())
    }

    pub fn log(&self) -> TangentVector {
        log_map(self)
    }

    /// Same axis, angle scaled by `t`: `exp(t * log(self))`.
    pub fn pow(&self, t: f64) -> Rotation {
        exp_map(&log_map(self).scale(t))
    }

    /// Rotates a 3-vector.
    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let m = self.to_matrix();
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    /// Row-major 3x3 rotation matrix.
    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let Rotation { w, x, y, z } = *self;
        [
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
        ]
    }

    /// Converts a row-major rotation matrix (Shepperd's method).
    ///
    /// The input is assumed orthonormal with determinant +1; small drift is
    /// absorbed by the final normalization.
    pub fn from_matrix(m: &[[f64; 3]; 3]) -> Rotation {
        let trace = m[0][0] + m[1][1] + m[2][2];
        let (w, x, y, z);
        if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            w = 0.25 * s;
            x = (m[2][1] - m[1][2]) / s;
            y = (m[0][2] - m[2][0]) / s;
            z = (m[1][0] - m[0][1]) / s;
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            w = (m[2][1] - m[1][2]) / s;
            x = 0.25 * s;
            y = (m[0][1] + m[1][0]) / s;
            z = (m[0][2] + m[2][0]) / s;
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            w = (m[0][2] - m[2][0]) / s;
            x = (m[0][1] + m[1][0]) / s;
            y = 0.25 * s;
            z = (m[1][2] + m[2][1]) / s;
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            w = (m[1][0] - m[0][1]) / s;
            x = (m[0][2] + m[2][0]) / s;
            y = (m[1][2] + m[2][1]) / s;
            z = 0.25 * s;
        }
        Rotation::normalized(w, x, y, z)
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        self.compose(&rhs)
    }
}

impl Mul for &Rotation {
    type Output = Rotation;

    fn mul(self, rhs: &Rotation) -> Rotation {
        self.compose(rhs)
    }
}

/// Exponential map from axis-angle to rotation.
pub fn exp_map(v: &TangentVector) -> Rotation {
    let theta = v.norm();
    let half = 0.5 * theta;
    // sin(theta/2)/theta
    let k = if theta < SMALL_ANGLE {
        0.5 - theta * theta / 48.0
    } else {
        half.sin() / theta
    };
    let [x, y, z] = v.0;
    Rotation::normalized(half.cos(), x * k, y * k, z * k)
}

/// Logarithm map; the returned angle lies in `[0, pi]`.
///
/// At exactly `pi` the axis sign follows the canonical hemisphere of the
/// input (first nonzero vector component positive). This is the single
/// non-smooth point of the map.
pub fn log_map(r: &Rotation) -> TangentVector {
    let r = r.canonical();
    let s = (r.x * r.x + r.y * r.y + r.z * r.z).sqrt();
    let k = if s < SMALL_ANGLE {
        // angle ~ 2 s / w, so angle/s -> 2/w
        2.0 / r.w
    } else {
        2.0 * s.atan2(r.w) / s
    };
    TangentVector([r.x * k, r.y * k, r.z * k])
}

/// Geodesic (angular) distance: the rotation angle of `a^-1 b`, in `[0, pi]`.
pub fn geodesic_distance(a: &Rotation, b: &Rotation) -> f64 {
    if a == b {
        return 0.0;
    }
    // a^-1 b without normalization: the angle only depends on the ratio.
    let w = a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
    let x = a.w * b.x - a.x * b.w - a.y * b.z + a.z * b.y;
    let y = a.w * b.y + a.x * b.z - a.y * b.w - a.z * b.x;
    let z = a.w * b.z - a.x * b.y + a.y * b.x - a.z * b.w;
    let s = (x * x + y * y + z * z).sqrt();
    (2.0 * s.atan2(w.abs())).min(PI)
}

/// Haar-uniform rotation (normalized 4-D Gaussian).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    loop {
        let q: [f64; 4] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n2: f64 = q.iter().map(|c| c * c).sum();
        if n2 > 1e-12 {
            return Rotation::normalized(q[0], q[1], q[2], q[3]);
        }
    }
}

/// Uniformly distributed unit 3-vector.
pub fn random_axis<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-9 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Right-multiplies `r` by a rotation of exactly `angle` radians about a
/// uniformly random axis, so `geodesic_distance(r, result) == angle` for
/// `angle` in `[0, pi]`.
pub fn perturb<R: Rng + ?Sized>(r: &Rotation, angle: f64, rng: &mut R) -> Rotation {
    if angle == 0.0 {
        return *r;
    }
    let axis = random_axis(rng);
    r.compose(&Rotation::from_axis_angle(axis, angle))
}
