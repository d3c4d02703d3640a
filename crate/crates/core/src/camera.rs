//! Camera poses on a view sphere, intrinsics, rigid transforms, perspective
//! projection, and per-pixel ray generation.
//!
//! Conventions: right-handed world, up = +y, camera looks at the origin,
//! forward = -z in the camera frame. Pixel (u, v) has its center at
//! (u + 0.5, v + 0.5); v grows downward, so image row 0 is the top.
//! Sample "depths" along a ray are camera z-depths (distance along the
//! optical axis), which makes back-projecting a composited depth map through
//! K^-1 exact rather than approximate.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for (k, bk) in b.iter().enumerate() {
                out[i][j] += a[i][k] * bk[j];
            }
        }
    }
    out
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in m.iter().enumerate() {
        for j in 0..3 {
            out[j][i] = row[j];
        }
    }
    out
}

/// Pinhole intrinsics in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Square image with the given full horizontal field of view.
    pub fn from_fov(resolution: usize, fov_deg: f64) -> Intrinsics {
        let half = (fov_deg.to_radians() / 2.0).tan();
        let f = resolution as f64 / (2.0 * half);
        Intrinsics {
            fx: f,
            fy: f,
            cx: resolution as f64 / 2.0,
            cy: resolution as f64 / 2.0,
            width: resolution,
            height: resolution,
        }
    }

    /// Same optical geometry at a different square resolution.
    pub fn rescaled(&self, resolution: usize) -> Intrinsics {
        let s = resolution as f64 / self.width as f64;
        Intrinsics {
            fx: self.fx * s,
            fy: self.fy * s,
            cx: self.cx * s,
            cy: self.cy * s,
            width: resolution,
            height: (self.height as f64 * s).round() as usize,
        }
    }
}

/// Viewpoint on the view sphere: camera sits at radius * direction(pitch, yaw)
/// and looks at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub pitch: f64,
    pub yaw: f64,
    pub radius: f64,
}

impl CameraPose {
    pub fn new(pitch: f64, yaw: f64, radius: f64) -> CameraPose {
        assert!(pitch.abs() < std::f64::consts::FRAC_PI_2, "pitch {pitch} out of range");
        assert!(radius > 0.0);
        CameraPose { pitch, yaw, radius }
    }

    pub fn frontal(radius: f64) -> CameraPose {
        CameraPose::new(0.0, 0.0, radius)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        [
            self.radius * self.pitch.cos() * self.yaw.sin(),
            self.radius * self.pitch.sin(),
            self.radius * self.pitch.cos() * self.yaw.cos(),
        ]
    }
}

/// World -> camera rigid transform (or camera -> camera when relative).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub r: Mat3,
    pub t: Vec3,
}

impl RigidTransform {
    pub fn identity() -> RigidTransform {
        RigidTransform {
            r: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            t: [0.0; 3],
        }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        let q = mat_vec(&self.r, p);
        [q[0] + self.t[0], q[1] + self.t[1], q[2] + self.t[2]]
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = transpose(&self.r);
        let t = mat_vec(&rt, self.t);
        RigidTransform {
            r: rt,
            t: [-t[0], -t[1], -t[2]],
        }
    }

    /// self after `first`: (self ∘ first)(p) = self(first(p)).
    pub fn compose(&self, first: &RigidTransform) -> RigidTransform {
        RigidTransform {
            r: mat_mul(&self.r, &first.r),
            t: {
                let rt = mat_vec(&self.r, first.t);
                [rt[0] + self.t[0], rt[1] + self.t[1], rt[2] + self.t[2]]
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseKind {
    Gaussian,
    Uniform,
}

/// Distribution of pitch/yaw around the frontal view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseDistribution {
    pub kind: PoseKind,
    pub h_spread: f64,
    pub v_spread: f64,
}

impl PoseDistribution {
    pub fn gaussian(h_spread: f64, v_spread: f64) -> PoseDistribution {
        assert!(h_spread > 0.0 && v_spread > 0.0);
        PoseDistribution {
            kind: PoseKind::Gaussian,
            h_spread,
            v_spread,
        }
    }

    pub fn uniform(h_spread: f64, v_spread: f64) -> PoseDistribution {
        assert!(h_spread > 0.0 && v_spread > 0.0);
        PoseDistribution {
            kind: PoseKind::Uniform,
            h_spread,
            v_spread,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng, radius: f64) -> CameraPose {
        let (yaw, pitch) = match self.kind {
            PoseKind::Gaussian => {
                // clamp at 3 sigma so |pitch| stays well below pi/2
                let yaw = Normal::new(0.0, self.h_spread).unwrap().sample(rng);
                let pitch = Normal::new(0.0, self.v_spread).unwrap().sample(rng);
                (
                    yaw.clamp(-3.0 * self.h_spread, 3.0 * self.h_spread),
                    pitch.clamp(-3.0 * self.v_spread, 3.0 * self.v_spread),
                )
            }
            PoseKind::Uniform => (
                rng.gen_range(-self.h_spread..=self.h_spread),
                rng.gen_range(-self.v_spread..=self.v_spread),
            ),
        };
        CameraPose::new(pitch, yaw, radius)
    }
}

/// World -> camera extrinsics of a look-at-origin pose.
pub fn pose_to_extrinsics(pose: &CameraPose) -> RigidTransform {
    let c = pose.center();
    // camera z axis points from the origin toward the camera (forward = -z)
    let z = normalize(c);
    let x = normalize(cross([0.0, 1.0, 0.0], z));
    let y = cross(z, x);
    let r = [x, y, z];
    let t = mat_vec(&r, c);
    RigidTransform {
        r,
        t: [-t[0], -t[1], -t[2]],
    }
}

/// Transform mapping primary-camera coordinates to auxiliary-camera ones.
pub fn relative_transform(pri: &CameraPose, aux: &CameraPose) -> RigidTransform {
    pose_to_extrinsics(aux).compose(&pose_to_extrinsics(pri).inverse())
}

/// Perspective projection of a camera-frame point; depth is the distance
/// along the optical axis. Points at or behind the camera plane are invalid.
pub fn project(p_cam: Vec3, k: &Intrinsics) -> Option<(f64, f64, f64)> {
    let depth = -p_cam[2];
    if depth < 1e-8 {
        return None;
    }
    let u = k.fx * p_cam[0] / depth + k.cx;
    let v = k.cy - k.fy * p_cam[1] / depth;
    Some((u, v, depth))
}

/// Inverse of `project`: pixel coordinates + depth back to the camera frame.
pub fn unproject(u: f64, v: f64, depth: f64, k: &Intrinsics) -> Vec3 {
    [
        depth * (u - k.cx) / k.fx,
        depth * (k.cy - v) / k.fy,
        -depth,
    ]
}

/// Per-pixel rays and stratified sample depths for one camera.
///
/// `directions` are unit vectors (what the radiance field consumes);
/// `zdirs` are the same rays scaled so one unit of ray parameter advances
/// the camera z-depth by exactly one, so a point at depth d is
/// origin + d * zdir.
pub struct RayBundle<E: Elem> {
    pub origins: Tensor<E>,
    pub directions: Tensor<E>,
    pub zdirs: Tensor<E>,
    pub sample_depths: Tensor<E>,
    pub deltas: Tensor<E>,
    pub height: usize,
    pub width: usize,
    pub n_samples: usize,
}

/// Build one ray through each pixel center of `k` under `pose`, with `n`
/// depth samples in [near, far]: stratified (one uniform draw per bin) when
/// requested, bin centers otherwise.
pub fn generate_rays<E: Elem>(
    k: &Intrinsics,
    pose: &CameraPose,
    near: f64,
    far: f64,
    n: usize,
    rng: &mut impl Rng,
    stratified: bool,
) -> Result<RayBundle<E>> {
    if !(near > 0.0 && near < far) {
        return Err(Error::InvalidArgument(format!(
            "ray bounds near {near} / far {far} invalid"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample per ray".into()));
    }
    let (h, w) = (k.height, k.width);
    let cam_to_world = pose_to_extrinsics(pose).inverse();
    let c = pose.center();
    let bin = (far - near) / n as f64;

    let mut origins = Vec::with_capacity(h * w * 3);
    let mut dirs = Vec::with_capacity(h * w * 3);
    let mut zdirs = Vec::with_capacity(h * w * 3);
    let mut depths = Vec::with_capacity(h * w * n);
    let mut deltas = Vec::with_capacity(h * w * n);
    for py in 0..h {
        for px in 0..w {
            let d_cam = [
                (px as f64 + 0.5 - k.cx) / k.fx,
                (k.cy - (py as f64 + 0.5)) / k.fy,
                -1.0,
            ];
            let zd = mat_vec(&cam_to_world.r, d_cam);
            let du = normalize(zd);
            for i in 0..3 {
                origins.push(E::from_f64(c[i]));
                dirs.push(E::from_f64(du[i]));
                zdirs.push(E::from_f64(zd[i]));
            }
            let base = depths.len();
            for i in 0..n {
                let frac = if stratified { rng.gen_range(0.0..1.0) } else { 0.5 };
                depths.push(E::from_f64(near + (i as f64 + frac) * bin));
            }
            for i in 0..n {
                let d = if i + 1 < n {
                    depths[base + i + 1] - depths[base + i]
                } else {
                    E::from_f64(far) - depths[base + i]
                };
                deltas.push(d);
            }
        }
    }
    Ok(RayBundle {
        origins: Tensor::constant(origins, &[h, w, 3]),
        directions: Tensor::constant(dirs, &[h, w, 3]),
        zdirs: Tensor::constant(zdirs, &[h, w, 3]),
        sample_depths: Tensor::constant(depths, &[h, w, n]),
        deltas: Tensor::constant(deltas, &[h, w, n]),
        height: h,
        width: w,
        n_samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
        assert!((a - b).abs() < tol, "{what}: {a} vs {b}");
    }

    #[test]
    fn frontal_pose_center_and_roundtrip() {
        let pose = CameraPose::frontal(1.5);
        assert_eq!(pose.center(), [0.0, 0.0, 1.5]);
        let ext = pose_to_extrinsics(&pose);
        let at_cam = ext.apply(pose.center());
        assert!(norm(at_cam) < 1e-12, "camera center must map to the camera origin");
    }

    #[test]
    fn yaw_quarter_turn_center() {
        let pose = CameraPose::new(0.0, std::f64::consts::FRAC_PI_2, 2.0);
        let c = pose.center();
        assert_close(c[0], 2.0, 1e-12, "x");
        assert_close(c[1], 0.0, 1e-12, "y");
        assert_close(c[2], 0.0, 1e-12, "z");
    }

    #[test]
    fn extrinsics_are_orthonormal_and_kill_the_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let pose = CameraPose::new(
                rng.gen_range(-1.2..1.2),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(0.5..3.0),
            );
            let ext = pose_to_extrinsics(&pose);
            let rrt = mat_mul(&ext.r, &transpose(&ext.r));
            for i in 0..3 {
                for j in 0..3 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert_close(rrt[i][j], want, 1e-5, "R R^T");
                }
            }
            let det = dot(ext.r[0], cross(ext.r[1], ext.r[2]));
            assert_close(det, 1.0, 1e-5, "det R");
            assert!(norm(ext.apply(pose.center())) < 1e-5, "R c + t must vanish");
        }
    }

    #[test]
    fn relative_transform_identity_and_inverse() {
        let a = CameraPose::new(0.2, -0.4, 1.0);
        let b = CameraPose::new(-0.1, 0.3, 1.0);
        let same = relative_transform(&a, &a);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_close(same.r[i][j], want, 1e-6, "self-relative R");
            }
            assert_close(same.t[i], 0.0, 1e-6, "self-relative t");
        }
        let ab = relative_transform(&a, &b);
        let ba = relative_transform(&b, &a);
        let round = ab.compose(&ba);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_close(round.r[i][j], want, 1e-5, "round trip R");
            }
            assert_close(round.t[i], 0.0, 1e-5, "round trip t");
        }
    }

    #[test]
    fn relative_transform_matches_two_path_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = CameraPose::new(0.15, -0.25, 1.0);
        let b = CameraPose::new(-0.05, 0.35, 1.0);
        let rel = relative_transform(&a, &b);
        let (ea, eb) = (pose_to_extrinsics(&a), pose_to_extrinsics(&b));
        for _ in 0..50 {
            let p = [
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            ];
            let direct = eb.apply(p);
            let via = rel.apply(ea.apply(p));
            for i in 0..3 {
                assert_close(via[i], direct[i], 1e-5, "two-path point");
            }
        }
    }

    #[test]
    fn gaussian_pose_spread_matches_requested_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dist = PoseDistribution::gaussian(0.3, 0.155);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let p = dist.sample(&mut rng, 1.0);
            sum += p.yaw;
            sumsq += p.yaw * p.yaw;
            assert!(p.yaw.abs() <= 0.9 + 1e-12 && p.pitch.abs() <= 0.465 + 1e-12);
        }
        let mean = sum / n as f64;
        let std = (sumsq / n as f64 - mean * mean).sqrt();
        assert!((std - 0.3).abs() < 0.01, "empirical yaw std {std}");
    }

    #[test]
    fn uniform_pose_stays_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let dist = PoseDistribution::uniform(0.4, 0.2);
        for _ in 0..10_000 {
            let p = dist.sample(&mut rng, 1.0);
            assert!(p.yaw.abs() <= 0.4 && p.pitch.abs() <= 0.2);
        }
    }

    #[test]
    fn near_zero_spread_is_frontal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dist = PoseDistribution::gaussian(1e-9, 1e-9);
        let p = dist.sample(&mut rng, 1.0);
        assert!(p.yaw.abs() < 1e-8 && p.pitch.abs() < 1e-8);
    }

    #[test]
    fn project_on_axis_and_behind() {
        let k = Intrinsics::from_fov(32, 12.0);
        let (u, v, d) = project([0.0, 0.0, -0.9], &k).unwrap();
        assert_close(u, k.cx, 1e-12, "u");
        assert_close(v, k.cy, 1e-12, "v");
        assert_close(d, 0.9, 1e-12, "depth");
        assert!(project([0.0, 0.0, 0.5], &k).is_none(), "behind camera must be invalid");
    }

    #[test]
    fn project_unproject_roundtrip() {
        let k = Intrinsics::from_fov(64, 12.0);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let depth = rng.gen_range(0.7..1.3);
            let p = [
                rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.05..0.05),
                -depth,
            ];
            if let Some((u, v, d)) = project(p, &k) {
                let q = unproject(u, v, d, &k);
                for i in 0..3 {
                    assert_close(q[i], p[i], 1e-5, "roundtrip");
                }
            } else {
                panic!("frustum point projected invalid");
            }
        }
    }

    #[test]
    fn rays_single_midpoint_sample() {
        let k = Intrinsics::from_fov(4, 12.0);
        let pose = CameraPose::frontal(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let rays = generate_rays::<f64>(&k, &pose, 0.88, 1.12, 1, &mut rng, false).unwrap();
        for &d in rays.sample_depths.data() {
            assert_close(d, 1.0, 1e-12, "midpoint sample");
        }
    }

    #[test]
    fn rays_stratified_depths_increase_within_bins() {
        let k = Intrinsics::from_fov(8, 12.0);
        let pose = CameraPose::new(0.1, -0.2, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let rays = generate_rays::<f64>(&k, &pose, 0.88, 1.12, 12, &mut rng, true).unwrap();
        let bin = (1.12 - 0.88) / 12.0;
        let depths = rays.sample_depths.data();
        let deltas = rays.deltas.data();
        for px in 0..64 {
            for i in 0..12 {
                let d = depths[px * 12 + i];
                let lo = 0.88 + i as f64 * bin;
                assert!(d >= lo && d < lo + bin, "sample {i} depth {d} outside its bin");
                if i + 1 < 12 {
                    assert!(depths[px * 12 + i + 1] > d, "depths must increase");
                    assert_close(deltas[px * 12 + i], depths[px * 12 + i + 1] - d, 1e-12, "delta");
                } else {
                    assert_close(deltas[px * 12 + i], 1.12 - d, 1e-12, "last delta");
                }
            }
        }
    }

    #[test]
    fn center_ray_points_at_origin() {
        let k = Intrinsics::from_fov(64, 12.0);
        let pose = CameraPose::new(0.3, 0.7, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let rays = generate_rays::<f64>(&k, &pose, 0.88, 1.12, 2, &mut rng, false).unwrap();
        // average the 4 rays around the principal point (even resolution)
        let c = pose.center();
        let look = normalize([-c[0], -c[1], -c[2]]);
        let mut avg = [0.0; 3];
        for (py, px) in [(31, 31), (31, 32), (32, 31), (32, 32)] {
            let base = (py * 64 + px) * 3;
            for i in 0..3 {
                avg[i] += rays.directions.data()[base + i] / 4.0;
            }
        }
        let avg = normalize(avg);
        for i in 0..3 {
            assert_close(avg[i], look[i], 1e-5, "principal ray");
        }
    }

    #[test]
    fn rays_are_seed_reproducible() {
        let k = Intrinsics::from_fov(8, 12.0);
        let pose = CameraPose::new(0.05, 0.1, 1.0);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let r = generate_rays::<f32>(&k, &pose, 0.88, 1.12, 12, &mut rng, true).unwrap();
            r.sample_depths.data().to_vec()
        };
        assert!(run() == run(), "fixed seed must reproduce sample depths bitwise");
    }

    #[test]
    fn zdir_positions_have_exact_zdepth() {
        let k = Intrinsics::from_fov(16, 12.0);
        let pose = CameraPose::new(0.2, -0.3, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let rays = generate_rays::<f64>(&k, &pose, 0.88, 1.12, 3, &mut rng, false).unwrap();
        let ext = pose_to_extrinsics(&pose);
        for px in [0usize, 100, 255] {
            let o = [
                rays.origins.data()[px * 3],
                rays.origins.data()[px * 3 + 1],
                rays.origins.data()[px * 3 + 2],
            ];
            let zd = [
                rays.zdirs.data()[px * 3],
                rays.zdirs.data()[px * 3 + 1],
                rays.zdirs.data()[px * 3 + 2],
            ];
            for s in 0..3 {
                let d = rays.sample_depths.data()[px * 3 + s];
                let p = [o[0] + d * zd[0], o[1] + d * zd[1], o[2] + d * zd[2]];
                let p_cam = ext.apply(p);
                assert_close(-p_cam[2], d, 1e-10, "z-depth of sample");
            }
        }
    }
}
