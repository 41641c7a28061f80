//! Spherical directions, unit quaternions and the shared frame convention.
//!
//! Right-handed frame: +X right, +Y up, forward is -Z. Yaw is measured from
//! forward toward +X, pitch is positive up. Rotations are Hamilton
//! quaternions applied as `v' = q v q^-1`.

use serde::{Deserialize, Serialize};

/// Below this horizontal magnitude a vector is treated as pointing at a pole.
const POLE_EPS: f64 = 1e-12;

/// Wraps a yaw angle into `[-180, 180)`. Values already in range are returned
/// unchanged so that wrapping is exactly idempotent.
pub fn wrap_yaw(yaw_deg: f64) -> f64 {
    if (-180.0..180.0).contains(&yaw_deg) {
        return yaw_deg;
    }
    let wrapped = (yaw_deg + 180.0).rem_euclid(360.0) - 180.0;
    if wrapped >= 180.0 {
        -180.0
    } else {
        wrapped
    }
}

/// A view direction on the sphere.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Direction {
    pub yaw_deg: f64,
    pub pitch_deg: f64,
}

impl Direction {
    pub const FORWARD: Direction = Direction { yaw_deg: 0.0, pitch_deg: 0.0 };

    pub fn new(yaw_deg: f64, pitch_deg: f64) -> Self {
        Self { yaw_deg, pitch_deg }
    }

    /// Yaw wrapped into `[-180, 180)`; pitch is left alone.
    pub fn canonical(self) -> Self {
        Self { yaw_deg: wrap_yaw(self.yaw_deg), pitch_deg: self.pitch_deg }
    }

    pub fn is_canonical(&self) -> bool {
        (-180.0..180.0).contains(&self.yaw_deg) && (-90.0..=90.0).contains(&self.pitch_deg)
    }

    /// World-space unit vector for this direction.
    pub fn to_vec3(self) -> Vec3 {
        let (sy, cy) = self.yaw_deg.to_radians().sin_cos();
        let (sp, cp) = self.pitch_deg.to_radians().sin_cos();
        Vec3::new(cp * sy, sp, -cp * cy)
    }

    /// Inverse of [`Direction::to_vec3`]. The input need not be normalized.
    /// At the poles yaw is reported as 0.
    pub fn from_vec3(v: Vec3) -> Self {
        let horizontal = v.x.hypot(v.z);
        let pitch_deg = v.y.atan2(horizontal).to_degrees();
        let yaw_deg = if horizontal < POLE_EPS {
            0.0
        } else {
            wrap_yaw(v.x.atan2(-v.z).to_degrees())
        };
        Self { yaw_deg, pitch_deg }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
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

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn normalized(self) -> Vec3 {
        self.scale(1.0 / self.norm())
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;

    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

/// Angle in radians between two vectors, computed with `atan2(|a x b|, a . b)`
/// which stays accurate near 0 and pi.
pub fn angle_between(a: Vec3, b: Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Hamilton quaternion `w + xi + yj + zk`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Rotation of `angle_deg` about `axis` (normalized internally).
    pub fn from_axis_angle(axis: Vec3, angle_deg: f64) -> Self {
        let axis = axis.normalized();
        let (s, c) = (angle_deg.to_radians() / 2.0).sin_cos();
        Self::new(c, axis.x * s, axis.y * s, axis.z * s)
    }

    /// Orientation whose forward vector points along `d` with no roll
    /// (yaw about +Y applied after pitch about +X).
    pub fn from_direction(d: Direction) -> Self {
        let yaw = Self::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), -d.yaw_deg);
        let pitch = Self::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), d.pitch_deg);
        yaw.compose(pitch)
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Unit quaternion with the same rotation. Returns `None` for a zero or
    /// non-finite input.
    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if !n.is_finite() || n == 0.0 {
            return None;
        }
        Some(Self::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    pub fn conjugate(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product; `a.compose(b)` applies `b` first.
    pub fn compose(self, o: Quat) -> Quat {
        Quat::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    /// Rotates `v` by this (assumed unit) quaternion.
    pub fn rotate(self, v: Vec3) -> Vec3 {
        // v' = v + 2w (u x v) + 2 u x (u x v)
        let u = Vec3::new(self.x, self.y, self.z);
        let t = u.cross(v).scale(2.0);
        v + t.scale(self.w) + u.cross(t)
    }

    /// Rotates a world vector into this orientation's local frame.
    pub fn inverse_rotate(self, v: Vec3) -> Vec3 {
        self.conjugate().rotate(v)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}
