//! Pinhole camera math: unprojection, reprojection, axis-angle pose
//! parameterization and intrinsics scaling. Everything here is
//! closed-form f64; the differentiable paths re-express the same
//! formulas with tensor ops.

use crate::error::GeometryError;

pub type Mat3 = [[f64; 3]; 3];
pub type Vec3 = [f64; 3];

pub fn mat_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
    }
    out
}

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        assert!(fx > 0.0 && fy > 0.0, "focal lengths must be positive");
        assert!(width >= 1 && height >= 1);
        CameraModel { fx, fy, cx, cy, width, height }
    }

    /// Default camera for a square image: 90-degree-ish field of view,
    /// principal point at the center.
    pub fn default_for(size: usize) -> Self {
        let f = size as f64 / 2.0;
        let c = size as f64 / 2.0;
        CameraModel::new(f, f, c, c, size, size)
    }

    /// K^-1 p for homogeneous pixel p = (x, y, 1).
    pub fn unproject_pixel(&self, x: f64, y: f64) -> Vec3 {
        [(x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0]
    }

    /// Perspective projection of a camera-frame point; z must be > 0.
    pub fn project_point(&self, p: &Vec3) -> (f64, f64) {
        (self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy)
    }

    /// Scale intrinsics and extents by `factor` (e.g. 0.25 for the
    /// quarter-resolution K used throughout the pipeline).
    pub fn scaled_by(&self, factor: f64) -> Result<CameraModel, GeometryError> {
        assert!(factor > 0.0);
        let w = self.width as f64 * factor;
        let h = self.height as f64 * factor;
        if w.fract() != 0.0 || h.fract() != 0.0 {
            return Err(GeometryError::NonIntegralExtents(w, h));
        }
        Ok(CameraModel {
            fx: self.fx * factor,
            fy: self.fy * factor,
            cx: self.cx * factor,
            cy: self.cy * factor,
            width: w as usize,
            height: h as usize,
        })
    }
}

/// SE(3) transform from the reference camera frame to the target frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RelativePose {
    pub fn identity() -> Self {
        RelativePose { rotation: IDENTITY, translation: [0.0; 3] }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        validate_rotation(&rotation)?;
        Ok(RelativePose { rotation, translation })
    }

    pub fn transform(&self, p: &Vec3) -> Vec3 {
        let r = mat_vec(&self.rotation, p);
        [r[0] + self.translation[0], r[1] + self.translation[1], r[2] + self.translation[2]]
    }

    pub fn inverse(&self) -> RelativePose {
        let rt = transpose(&self.rotation);
        let t = mat_vec(&rt, &self.translation);
        RelativePose { rotation: rt, translation: [-t[0], -t[1], -t[2]] }
    }

    pub fn compose(&self, then: &RelativePose) -> RelativePose {
        // x -> then(self(x))
        let rotation = mat_mul(&then.rotation, &self.rotation);
        let t = mat_vec(&then.rotation, &self.translation);
        RelativePose {
            rotation,
            translation: [
                t[0] + then.translation[0],
                t[1] + then.translation[1],
                t[2] + then.translation[2],
            ],
        }
    }
}

pub fn validate_rotation(r: &Mat3) -> Result<(), GeometryError> {
    let rt = transpose(r);
    let rr = mat_mul(&rt, r);
    for i in 0..3 {
        for j in 0..3 {
            let expect = if i == j { 1.0 } else { 0.0 };
            if (rr[i][j] - expect).abs() > 1e-6 {
                return Err(GeometryError::NotARotation(format!(
                    "R^T R deviates from identity at ({i},{j}): {}",
                    rr[i][j]
                )));
            }
        }
    }
    let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
        - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
    if (det - 1.0).abs() > 1e-6 {
        return Err(GeometryError::NotARotation(format!("det(R) = {det}")));
    }
    Ok(())
}

/// Seven-parameter pose: unit rotation axis (zero at identity), angle
/// in [0, pi), translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseParams7 {
    pub axis: Vec3,
    pub theta: f64,
    pub t: Vec3,
}

impl PoseParams7 {
    pub fn as_array(&self) -> [f64; 7] {
        [self.axis[0], self.axis[1], self.axis[2], self.theta, self.t[0], self.t[1], self.t[2]]
    }
}

/// Axis-angle extraction via the skew-symmetric part of R.
///
/// u = [r32 - r23, r13 - r31, r21 - r12]; theta = atan2(|u|, tr R - 1).
/// Near theta = pi the skew part vanishes and the axis is recovered
/// from the diagonal of (R + I) / 2 instead.
pub fn rotation_to_axis_angle(r: &Mat3) -> Result<PoseParams7, GeometryError> {
    validate_rotation(r)?;
    let u = [r[2][1] - r[1][2], r[0][2] - r[2][0], r[1][0] - r[0][1]];
    let un = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    let trace = r[0][0] + r[1][1] + r[2][2];
    if un >= 1e-8 {
        let theta = un.atan2(trace - 1.0);
        Ok(PoseParams7 { axis: [u[0] / un, u[1] / un, u[2] / un], theta, t: [0.0; 3] })
    } else if trace > 0.0 {
        // R ~ I
        Ok(PoseParams7 { axis: [0.0; 3], theta: 0.0, t: [0.0; 3] })
    } else {
        // theta ~ pi: axis from the largest diagonal of (R + I) / 2
        let d = [(r[0][0] + 1.0) / 2.0, (r[1][1] + 1.0) / 2.0, (r[2][2] + 1.0) / 2.0];
        let k = if d[0] >= d[1] && d[0] >= d[2] {
            0
        } else if d[1] >= d[2] {
            1
        } else {
            2
        };
        let ak = d[k].max(0.0).sqrt();
        let mut axis = [0.0; 3];
        axis[k] = ak;
        for i in 0..3 {
            if i != k {
                axis[i] = (r[i][k] + r[k][i]) / (4.0 * ak);
            }
        }
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        Ok(PoseParams7 {
            axis: [axis[0] / n, axis[1] / n, axis[2] / n],
            theta: std::f64::consts::PI,
            t: [0.0; 3],
        })
    }
}

pub fn pose_to_params(pose: &RelativePose) -> Result<PoseParams7, GeometryError> {
    let mut p = rotation_to_axis_angle(&pose.rotation)?;
    p.t = pose.translation;
    Ok(p)
}

/// Rodrigues rotation from a unit axis and angle.
pub fn rodrigues(axis: &Vec3, theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    let k = [
        [0.0, -axis[2], axis[1]],
        [axis[2], 0.0, -axis[0]],
        [-axis[1], axis[0], 0.0],
    ];
    let kk = mat_mul(&k, &k);
    let mut out = IDENTITY;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] += s * k[i][j] + (1.0 - c) * kk[i][j];
        }
    }
    out
}

/// Rotation about z by `deg` degrees (convenience for tests and scene
/// sampling).
pub fn rot_z(deg: f64) -> Mat3 {
    rodrigues(&[0.0, 0.0, 1.0], deg.to_radians())
}

pub fn rot_y(deg: f64) -> Mat3 {
    rodrigues(&[0.0, 1.0, 0.0], deg.to_radians())
}

pub fn rot_x(deg: f64) -> Mat3 {
    rodrigues(&[1.0, 0.0, 0.0], deg.to_radians())
}

/// Per-pixel coordinate maps at the camera's resolution.
#[derive(Debug, Clone)]
pub struct CoordinateMaps {
    pub width: usize,
    pub height: usize,
    /// normalized image coordinates, [3, H, W] row-major, z = 1
    pub x_img: Vec<f64>,
    /// world coordinates x_w = depth * x_img, [3, H, W]
    pub x_w: Vec<f64>,
    /// depth in meters, [H, W]
    pub depth: Vec<f64>,
}

/// Lift a depth map into normalized-image and world coordinates.
pub fn unproject(camera: &CameraModel, depth: &[f64]) -> Result<CoordinateMaps, GeometryError> {
    let (w, h) = (camera.width, camera.height);
    assert_eq!(depth.len(), w * h, "depth resolution must match camera extents");
    let n = w * h;
    let mut x_img = vec![0.0; 3 * n];
    let mut x_w = vec![0.0; 3 * n];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let d = depth[p];
            if d <= 0.0 {
                return Err(GeometryError::NonPositiveDepth(x, y));
            }
            let xi = camera.unproject_pixel(x as f64, y as f64);
            for k in 0..3 {
                x_img[k * n + p] = xi[k];
                x_w[k * n + p] = d * xi[k];
            }
        }
    }
    Ok(CoordinateMaps { width: w, height: h, x_img, x_w, depth: depth.to_vec() })
}

/// Reprojection of every pixel into the target view.
#[derive(Debug, Clone)]
pub struct Reprojection {
    /// flow (p' - p), [2, H, W]: x displacement then y displacement
    pub flow: Vec<f64>,
    /// depth of each source point in the target camera, [H, W]
    pub target_depth: Vec<f64>,
    /// false where the transformed point lands behind the camera
    pub valid: Vec<bool>,
}

pub const BEHIND_CAMERA_EPS: f64 = 1e-6;

/// p' = perspective(K (R x_w + t)); flow = p' - p. Points with target
/// z <= eps are flagged invalid rather than producing huge flows.
pub fn reproject(camera: &CameraModel, maps: &CoordinateMaps, pose: &RelativePose) -> Reprojection {
    let (w, h) = (maps.width, maps.height);
    let n = w * h;
    let mut flow = vec![0.0; 2 * n];
    let mut target_depth = vec![0.0; n];
    let mut valid = vec![false; n];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let xw = [maps.x_w[p], maps.x_w[n + p], maps.x_w[2 * n + p]];
            let q = pose.transform(&xw);
            target_depth[p] = q[2];
            if q[2] <= BEHIND_CAMERA_EPS {
                flow[p] = f64::NAN;
                flow[n + p] = f64::NAN;
                continue;
            }
            let (px, py) = camera.project_point(&q);
            flow[p] = px - x as f64;
            flow[n + p] = py - y as f64;
            valid[p] = true;
        }
    }
    Reprojection { flow, target_depth, valid }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unproject_known_pixel() {
        // solve K x_img = p by hand: fx=fy=2, c=0 -> x_img = (1, 0, 1)
        let cam = CameraModel::new(2.0, 2.0, 0.0, 0.0, 4, 1);
        let xi = cam.unproject_pixel(2.0, 0.0);
        assert_eq!(xi, [1.0, 0.0, 1.0]);
        let maps = unproject(&cam, &[3.0; 4]).unwrap();
        let n = 4;
        let p = 2;
        assert_eq!([maps.x_w[p], maps.x_w[n + p], maps.x_w[2 * n + p]], [3.0, 0.0, 3.0]);
    }

    #[test]
    fn principal_ray() {
        let cam = CameraModel::default_for(16);
        let xi = cam.unproject_pixel(cam.cx, cam.cy);
        assert_eq!(xi, [0.0, 0.0, 1.0]);
    }

    #[test]
    fn non_positive_depth_rejected() {
        let cam = CameraModel::default_for(2);
        let mut depth = vec![1.0; 4];
        depth[3] = 0.0;
        assert!(matches!(unproject(&cam, &depth), Err(GeometryError::NonPositiveDepth(1, 1))));
    }

    #[test]
    fn identity_pose_zero_flow() {
        let cam = CameraModel::default_for(8);
        let maps = unproject(&cam, &vec![2.5; 64]).unwrap();
        let rep = reproject(&cam, &maps, &RelativePose::identity());
        for v in &rep.flow {
            assert_eq!(*v, 0.0);
        }
        for (td, d) in rep.target_depth.iter().zip(&maps.depth) {
            assert!((td - d).abs() < 1e-12);
        }
    }

    #[test]
    fn axis_angle_identity() {
        let p = rotation_to_axis_angle(&IDENTITY).unwrap();
        assert_eq!(p.axis, [0.0, 0.0, 0.0]);
        assert_eq!(p.theta, 0.0);
    }

    #[test]
    fn axis_angle_rz90() {
        let r = rot_z(90.0);
        let p = rotation_to_axis_angle(&r).unwrap();
        assert!((p.theta - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!((p.axis[2] - 1.0).abs() < 1e-12);
        assert!(p.axis[0].abs() < 1e-12 && p.axis[1].abs() < 1e-12);
    }

    #[test]
    fn scale_intrinsics_quarter() {
        let cam = CameraModel::new(128.0, 128.0, 128.0, 128.0, 256, 256);
        let s = cam.scaled_by(0.25).unwrap();
        assert_eq!(s, CameraModel::new(32.0, 32.0, 32.0, 32.0, 64, 64));
        // principal ray invariant
        assert_eq!(s.unproject_pixel(s.cx, s.cy), [0.0, 0.0, 1.0]);
        // non-integral extents rejected
        assert!(CameraModel::default_for(10).scaled_by(0.25).is_err());
    }

    #[test]
    fn non_orthonormal_rejected() {
        let mut r = IDENTITY;
        r[0][0] = 2.0;
        assert!(rotation_to_axis_angle(&r).is_err());
    }
}
