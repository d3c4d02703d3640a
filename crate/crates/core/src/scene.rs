//! Procedural multi-view ground truth and dataset plumbing.
//!
//! The synthetic scenes have analytic ray intersections, so they provide
//! exact depth maps — they double as the training corpus and as the oracle
//! for the warping / re-projection tests. All colors are linear-light floats
//! in [0,1]; sRGB conversion happens only at the PNG boundary (see `imgio`).

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{
    dot, generate_rays, normalize, CameraPose, Intrinsics, PoseDistribution, Vec3,
};
use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    TexturedSphere,
    TexturedPlane,
    TwoToneBlob,
}

/// View-consistent procedural scene with exact depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub kind: SceneKind,
    pub seed: u64,
    /// sphere / blob radius in world units
    pub radius: f64,
    /// world z of the textured plane
    pub plane_z: f64,
    pub lambertian: bool,
}

impl SyntheticScene {
    pub fn sphere(seed: u64) -> SyntheticScene {
        SyntheticScene {
            kind: SceneKind::TexturedSphere,
            seed,
            radius: 0.1,
            plane_z: 0.0,
            lambertian: true,
        }
    }

    pub fn plane(seed: u64, plane_z: f64) -> SyntheticScene {
        SyntheticScene {
            kind: SceneKind::TexturedPlane,
            seed,
            radius: 0.1,
            plane_z,
            lambertian: false,
        }
    }

    pub fn blob(seed: u64) -> SyntheticScene {
        SyntheticScene {
            kind: SceneKind::TwoToneBlob,
            seed,
            radius: 0.1,
            plane_z: 0.0,
            lambertian: true,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn lattice(ix: i64, iy: i64, iz: i64, seed: u64) -> f64 {
    let h = splitmix64(
        seed ^ (ix as u64).wrapping_mul(0x8da6_b343)
            ^ (iy as u64).wrapping_mul(0xd816_3841)
            ^ (iz as u64).wrapping_mul(0xcb1a_b31f),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise3(p: Vec3, seed: u64) -> f64 {
    let (x0, y0, z0) = (p[0].floor(), p[1].floor(), p[2].floor());
    let (ix, iy, iz) = (x0 as i64, y0 as i64, z0 as i64);
    let fx = smoothstep(p[0] - x0);
    let fy = smoothstep(p[1] - y0);
    let fz = smoothstep(p[2] - z0);
    let mut acc = 0.0;
    for dz in 0..2i64 {
        for dy in 0..2i64 {
            for dx in 0..2i64 {
                let v = lattice(ix + dx, iy + dy, iz + dz, seed);
                let wx = if dx == 0 { 1.0 - fx } else { fx };
                let wy = if dy == 0 { 1.0 - fy } else { fy };
                let wz = if dz == 0 { 1.0 - fz } else { fz };
                acc += v * wx * wy * wz;
            }
        }
    }
    acc
}

/// 4-octave value noise in [0,1].
fn fbm3(p: Vec3, seed: u64) -> f64 {
    let mut acc = 0.0;
    let mut amp = 0.5;
    let mut freq = 1.0;
    let mut total = 0.0;
    for oct in 0..4u64 {
        acc += amp * value_noise3([p[0] * freq, p[1] * freq, p[2] * freq], seed ^ (oct * 0x51ed));
        total += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    acc / total
}

const BACKGROUND: [f64; 3] = [0.18, 0.18, 0.2];
const NOISE_SCALE: f64 = 24.0;
const LIGHT: Vec3 = [0.37139067635410377, 0.6499336836196816, 0.6499336836196816];

fn albedo(scene: &SyntheticScene, p: Vec3) -> [f64; 3] {
    let q = [p[0] * NOISE_SCALE, p[1] * NOISE_SCALE, p[2] * NOISE_SCALE];
    match scene.kind {
        SceneKind::TexturedSphere | SceneKind::TexturedPlane => [
            0.1 + 0.8 * fbm3(q, scene.seed ^ 0x01),
            0.1 + 0.8 * fbm3(q, scene.seed ^ 0x02),
            0.1 + 0.8 * fbm3(q, scene.seed ^ 0x03),
        ],
        SceneKind::TwoToneBlob => {
            let tone = value_noise3([q[0] * 0.15, q[1] * 0.15, q[2] * 0.15], scene.seed ^ 0x04);
            let base = if tone > 0.5 {
                [0.75, 0.35, 0.2]
            } else {
                [0.2, 0.4, 0.75]
            };
            let n = fbm3(q, scene.seed ^ 0x05);
            [
                (base[0] * (0.6 + 0.6 * n)).min(1.0),
                (base[1] * (0.6 + 0.6 * n)).min(1.0),
                (base[2] * (0.6 + 0.6 * n)).min(1.0),
            ]
        }
    }
}

/// Hit along ray o + s*d: (z-depth s, world point, surface normal).
fn intersect(scene: &SyntheticScene, o: Vec3, d: Vec3) -> Option<(f64, Vec3, Vec3)> {
    match scene.kind {
        SceneKind::TexturedSphere | SceneKind::TwoToneBlob => {
            let a = dot(d, d);
            let b = 2.0 * dot(o, d);
            let c = dot(o, o) - scene.radius * scene.radius;
            let disc = b * b - 4.0 * a * c;
            if disc < 0.0 {
                return None;
            }
            let s = (-b - disc.sqrt()) / (2.0 * a);
            if s <= 1e-6 {
                return None;
            }
            let p = [o[0] + s * d[0], o[1] + s * d[1], o[2] + s * d[2]];
            Some((s, p, normalize(p)))
        }
        SceneKind::TexturedPlane => {
            if d[2].abs() < 1e-12 {
                return None;
            }
            let s = (scene.plane_z - o[2]) / d[2];
            if s <= 1e-6 {
                return None;
            }
            let p = [o[0] + s * d[0], o[1] + s * d[1], scene.plane_z];
            Some((s, p, [0.0, 0.0, 1.0]))
        }
    }
}

/// Analytic render: exact z-depth per pixel, depth 0 on background.
pub fn render_ground_truth<E: Elem>(
    scene: &SyntheticScene,
    pose: &CameraPose,
    k: &Intrinsics,
) -> (Tensor<E>, Tensor<E>) {
    let (h, w) = (k.height, k.width);
    // ray geometry reuses the renderer's pixel conventions exactly
    let mut dummy = ChaCha8Rng::seed_from_u64(0);
    let rays = generate_rays::<f64>(k, pose, 0.5, 1.5, 1, &mut dummy, false)
        .expect("ground-truth ray bounds are fixed and valid");
    let origins = rays.origins.data();
    let zdirs = rays.zdirs.data();
    let mut img = vec![E::ZERO; 3 * h * w];
    let mut depth = vec![E::ZERO; h * w];
    for px in 0..h * w {
        let o = [origins[px * 3], origins[px * 3 + 1], origins[px * 3 + 2]];
        let d = [zdirs[px * 3], zdirs[px * 3 + 1], zdirs[px * 3 + 2]];
        let mut rgb = BACKGROUND;
        if let Some((s, p, n)) = intersect(scene, o, d) {
            depth[px] = E::from_f64(s);
            rgb = albedo(scene, p);
            if scene.lambertian {
                let shade = 0.45 + 0.55 * dot(n, LIGHT).max(0.0);
                for c in rgb.iter_mut() {
                    *c *= shade;
                }
            }
        }
        for c in 0..3 {
            img[c * h * w + px] = E::from_f64(rgb[c].clamp(0.0, 1.0));
        }
    }
    (
        Tensor::constant(img, &[3, h, w]),
        Tensor::constant(depth, &[h, w]),
    )
}

/// Where dataset images come from.
pub enum DatasetSource {
    Synthetic {
        scene: SyntheticScene,
        count: usize,
        poses: PoseDistribution,
        cam_radius: f64,
        fov_deg: f64,
    },
    Folder(PathBuf),
}

/// In-memory image corpus with a seeded epoch permutation.
pub struct DatasetHandle {
    images: Vec<Vec<f32>>,
    resolution: usize,
    order_seed: u64,
    epoch: u64,
    cursor: usize,
    perm: Vec<u32>,
}

fn epoch_permutation(n: usize, order_seed: u64, epoch: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(order_seed ^ epoch.wrapping_mul(0x9e3779b97f4a7c15));
    let mut perm: Vec<u32> = (0..n as u32).collect();
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }
    perm
}

impl DatasetHandle {
    pub fn new(source: DatasetSource, resolution: usize, order_seed: u64) -> Result<DatasetHandle> {
        let images = match source {
            DatasetSource::Synthetic {
                scene,
                count,
                poses,
                cam_radius,
                fov_deg,
            } => {
                let k = Intrinsics::from_fov(resolution, fov_deg);
                let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ 0x5ce7e);
                (0..count)
                    .map(|_| {
                        let pose = poses.sample(&mut rng, cam_radius);
                        let (img, _) = render_ground_truth::<f32>(&scene, &pose, &k);
                        img.data().to_vec()
                    })
                    .collect()
            }
            DatasetSource::Folder(path) => load_folder(&path, resolution)?,
        };
        if images.is_empty() {
            return Err(Error::Dataset("dataset is empty".into()));
        }
        let perm = epoch_permutation(images.len(), order_seed, 0);
        Ok(DatasetHandle {
            images,
            resolution,
            order_seed,
            epoch: 0,
            cursor: 0,
            perm,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// (epoch, cursor) for checkpointing.
    pub fn state(&self) -> (u64, usize) {
        (self.epoch, self.cursor)
    }

    /// Restore iteration position saved by `state`.
    pub fn seek(&mut self, epoch: u64, cursor: usize) {
        self.epoch = epoch;
        self.cursor = cursor.min(self.images.len());
        self.perm = epoch_permutation(self.images.len(), self.order_seed, epoch);
    }

    /// Next `batch` images as [B,3,res,res], advancing the epoch permutation.
    pub fn next_batch<E: Elem>(&mut self, batch: usize) -> Tensor<E> {
        let chw = 3 * self.resolution * self.resolution;
        let mut data = Vec::with_capacity(batch * chw);
        for _ in 0..batch {
            if self.cursor >= self.images.len() {
                self.epoch += 1;
                self.cursor = 0;
                self.perm = epoch_permutation(self.images.len(), self.order_seed, self.epoch);
            }
            let img = &self.images[self.perm[self.cursor] as usize];
            data.extend(img.iter().map(|&v| E::from_f64(v as f64)));
            self.cursor += 1;
        }
        Tensor::constant(data, &[batch, 3, self.resolution, self.resolution])
    }
}

fn load_folder(path: &Path, resolution: usize) -> Result<Vec<Vec<f32>>> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
        .collect();
    names.sort();
    let mut out = Vec::new();
    for p in &names {
        match crate::imgio::load_png_linear(p, resolution) {
            Ok(img) => out.push(img),
            Err(e) => eprintln!("warning: skipping unreadable image {}: {e}", p.display()),
        }
    }
    Ok(out)
}
