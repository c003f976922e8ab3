//! Deterministic ray-cast simulator of a rectified stereo rig with a rigidly
//! attached stripe projector.
//!
//! World frame: `y` up, floor at `y = 0`, the room a cube of side
//! `room_side_m` centred on the vertical axis. Camera frame: `x` right,
//! `y` down, `z` forward. Pixel `(x, y)` is centred at integer coordinates
//! and its ray passes through `((x − cx)/f, (y − cy)/f, 1)`. The right camera
//! is the left one translated by the baseline along its `x` axis, so a left
//! pixel at depth `Z` reappears in the right image at `x − f·b/Z` on the
//! same row.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{stripe, PatternSpec, PatternStack};
use crate::disparity::DisparityMap;
use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};

type V3 = Vector3<f64>;

/// Shortest segment considered a real occluder, in metres.
const RAY_EPS: f64 = 1e-6;
/// Rejection-sampling budget per viewpoint.
const MAX_VIEW_TRIES: usize = 20_000;
/// Minimum gap between the projector centre and any surface.
const PROJECTOR_CLEARANCE_M: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub focal_px: f64,
    pub principal_point: [f64; 2],
    pub width: usize,
    pub height: usize,
    pub baseline_m: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            focal_px: 256.0,
            principal_point: [127.5, 127.5],
            width: 256,
            height: 256,
            baseline_m: 0.005,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal_px > 0.0) {
            return Err(Error::Config("focal length must be positive".into()));
        }
        if !(self.baseline_m > 0.0) {
            return Err(Error::Config("baseline must be positive".into()));
        }
        if self.width < 32 || self.height < 32 {
            return Err(Error::Config(format!(
                "image {}x{} smaller than 32x32",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// `f · b`, so that `disparity = fb / Z`.
    pub fn focal_baseline(&self) -> f64 {
        self.focal_px * self.baseline_m
    }

    fn ray_dir_cam(&self, x: f64, y: f64) -> V3 {
        V3::new(
            (x - self.principal_point[0]) / self.focal_px,
            (y - self.principal_point[1]) / self.focal_px,
            1.0,
        )
        .normalize()
    }
}

/// Projector pose relative to the left camera and its stripe resolution.
///
/// `translation_m` is expressed in a camera frame with `x` right, `y` up and
/// `z` pointing backwards (away from the scene); `rotation_y_deg` turns the
/// projector about that frame's vertical axis, positive values toeing it in
/// towards the optical axis when it sits to the right of the camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectorRig {
    pub rotation_y_deg: f64,
    pub translation_m: [f64; 3],
    pub projector_columns: usize,
    pub projector_focal_px: f64,
}

impl Default for ProjectorRig {
    fn default() -> Self {
        Self {
            rotation_y_deg: 1.5,
            translation_m: [0.02, 0.0, 0.02],
            projector_columns: 256,
            projector_focal_px: 256.0,
        }
    }
}

impl ProjectorRig {
    pub fn validate(&self, patterns: &PatternSpec) -> Result<()> {
        patterns.validate()?;
        if !self.projector_columns.is_power_of_two() || self.projector_columns < (1usize << patterns.t) {
            return Err(Error::Config(format!(
                "projector columns {} must be a power of two >= 2^{}",
                self.projector_columns, patterns.t
            )));
        }
        if patterns.code_width != self.projector_columns {
            return Err(Error::Config(format!(
                "pattern code width {} differs from projector columns {}",
                patterns.code_width, self.projector_columns
            )));
        }
        if !(self.projector_focal_px > 0.0) {
            return Err(Error::Config("projector focal length must be positive".into()));
        }
        Ok(())
    }

    /// Projector centre and world-from-projector rotation for a camera pose.
    fn placement(&self, pose: &CameraPose) -> (V3, Matrix3<f64>) {
        let [tx, ty, tz] = self.translation_m;
        let offset_cam = V3::new(tx, -ty, -tz);
        let r = pose.rotation_matrix();
        let th = self.rotation_y_deg.to_radians();
        let (s, c) = th.sin_cos();
        // rotation about the up axis, written in the x-right/y-down/z-forward frame
        let toe = Matrix3::new(c, 0.0, -s, 0.0, 1.0, 0.0, s, 0.0, c);
        (pose.position() + r * offset_cam, r * toe)
    }
}

/// Position and orientation of a primitive; Euler angles in degrees,
/// applied as `Rz · Ry · Rx`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    #[serde(default)]
    pub rotation_deg: [f64; 3],
}

impl Pose {
    pub fn at(position: [f64; 3]) -> Self {
        Self {
            position,
            rotation_deg: [0.0; 3],
        }
    }

    fn rotation(&self) -> Matrix3<f64> {
        let [rx, ry, rz] = self.rotation_deg;
        *Rotation3::from_euler_angles(rx.to_radians(), ry.to_radians(), rz.to_radians()).matrix()
    }

    fn origin(&self) -> V3 {
        V3::from(self.position)
    }
}

fn default_albedo() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Primitive {
    /// Infinite two-sided plane through the pose origin with normal along
    /// the pose's local `z`.
    Plane {
        pose: Pose,
        #[serde(default = "default_albedo")]
        albedo: f64,
    },
    Sphere {
        pose: Pose,
        radius: f64,
        #[serde(default = "default_albedo")]
        albedo: f64,
    },
    /// Oriented box with full side lengths `size`.
    Box {
        pose: Pose,
        size: [f64; 3],
        #[serde(default = "default_albedo")]
        albedo: f64,
    },
    /// Axis-aligned cube; `side` defaults to the scene's podium side.
    Podium {
        pose: Pose,
        #[serde(default)]
        side: Option<f64>,
        #[serde(default = "default_albedo")]
        albedo: f64,
    },
}

impl Primitive {
    fn albedo(&self) -> f64 {
        match *self {
            Primitive::Plane { albedo, .. }
            | Primitive::Sphere { albedo, .. }
            | Primitive::Box { albedo, .. }
            | Primitive::Podium { albedo, .. } => albedo,
        }
    }

    fn pose(&self) -> &Pose {
        match self {
            Primitive::Plane { pose, .. }
            | Primitive::Sphere { pose, .. }
            | Primitive::Box { pose, .. }
            | Primitive::Podium { pose, .. } => pose,
        }
    }

    fn is_object(&self) -> bool {
        matches!(self, Primitive::Sphere { .. } | Primitive::Box { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub room_side_m: f64,
    pub podium_side_m: f64,
    pub primitives: Vec<Primitive>,
    /// Largest extent of the object (spheres and boxes) is redrawn from
    /// this range; `None` keeps the sizes as given.
    pub object_scale_range: Option<[f64; 2]>,
    pub view_distance_range: [f64; 2],
    pub views_per_object: usize,
    /// Minimum distance from either camera centre to any surface when
    /// sampling viewpoints.
    pub view_clearance_m: f64,
    pub rng_seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let podium = 0.10;
        Self {
            room_side_m: 1.0,
            podium_side_m: podium,
            primitives: vec![
                Primitive::Podium {
                    pose: Pose::at([0.0, podium / 2.0, 0.0]),
                    side: None,
                    albedo: 0.7,
                },
                Primitive::Box {
                    pose: Pose {
                        position: [0.0, podium + 0.015, 0.0],
                        rotation_deg: [0.0, 30.0, 0.0],
                    },
                    size: [0.05, 0.03, 0.03],
                    albedo: 0.85,
                },
                Primitive::Sphere {
                    pose: Pose::at([0.01, podium + 0.045, 0.0]),
                    radius: 0.015,
                    albedo: 0.9,
                },
            ],
            object_scale_range: Some([0.03, 0.10]),
            view_distance_range: [0.03, 0.10],
            views_per_object: 10,
            view_clearance_m: 0.03,
            rng_seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.room_side_m > 0.0) {
            return Err(Error::Config("room side must be positive".into()));
        }
        if !(self.podium_side_m > 0.0) {
            return Err(Error::Config("podium side must be positive".into()));
        }
        let [lo, hi] = self.view_distance_range;
        if !(lo > 0.0 && lo < hi) {
            return Err(Error::Config(format!("view distance range [{lo}, {hi}]")));
        }
        if let Some([lo, hi]) = self.object_scale_range {
            if !(lo > 0.0 && lo < hi) {
                return Err(Error::Config(format!("object scale range [{lo}, {hi}]")));
            }
        }
        if self.views_per_object == 0 {
            return Err(Error::Config("views per object must be at least 1".into()));
        }
        if !(self.view_clearance_m >= 0.0) {
            return Err(Error::Config("view clearance must be nonnegative".into()));
        }
        let half = self.room_side_m / 2.0;
        for p in &self.primitives {
            let ok = match *p {
                Primitive::Plane { .. } => true,
                Primitive::Sphere { radius, .. } => radius > 0.0,
                Primitive::Box { size, .. } => size.iter().all(|&s| s > 0.0),
                Primitive::Podium { side, .. } => side.is_none_or(|s| s > 0.0),
            };
            if !ok {
                return Err(Error::Config(format!("primitive with nonpositive size: {p:?}")));
            }
            if !(0.0..=1.0).contains(&p.albedo()) {
                return Err(Error::Config(format!("albedo {} outside [0, 1]", p.albedo())));
            }
            let [x, y, z] = p.pose().position;
            if x.abs() > half || z.abs() > half || !(0.0..=self.room_side_m).contains(&y) {
                return Err(Error::Config(format!("primitive outside the room at {:?}", [x, y, z])));
            }
        }
        Ok(())
    }
}

/// Camera placement: centre and world-from-camera rotation (columns are the
/// camera's right, down and forward axes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: [f64; 3],
    pub rotation: [[f64; 3]; 3],
}

impl CameraPose {
    /// Pose at `position` looking at `target` with world `y` up.
    pub fn look_at(position: [f64; 3], target: [f64; 3]) -> Result<Self> {
        let p = V3::from(position);
        let forward = V3::from(target) - p;
        if forward.norm() < 1e-12 {
            return Err(Error::DegeneratePose("camera sits on its target".into()));
        }
        let forward = forward.normalize();
        let right = forward.cross(&V3::y());
        if right.norm() < 1e-9 {
            return Err(Error::DegeneratePose("view direction parallel to up".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let m = Matrix3::from_columns(&[right, down, forward]);
        Ok(Self {
            position,
            rotation: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
        })
    }

    pub fn position(&self) -> V3 {
        V3::from(self.position)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let r = &self.rotation;
        Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        )
    }

    pub fn forward(&self) -> V3 {
        self.rotation_matrix().column(2).into()
    }

    pub fn right(&self) -> V3 {
        self.rotation_matrix().column(0).into()
    }

    /// Right camera of a rectified pair with baseline `b`.
    pub fn shifted(&self, b: f64) -> CameraPose {
        let p = self.position() + self.right() * b;
        CameraPose {
            position: [p.x, p.y, p.z],
            rotation: self.rotation,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Plane { point: V3, normal: V3 },
    Sphere { center: V3, radius: f64 },
    Cuboid { center: V3, rot: Matrix3<f64>, half: V3 },
    Room { half: f64, height: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Solid {
    shape: Shape,
    albedo: f64,
    segment: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct Hit {
    pub t: f64,
    pub point: V3,
    pub normal: V3,
    pub albedo: f64,
    /// Object or podium surface.
    pub segment: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: V3,
    /// Unit direction.
    pub dir: V3,
}

impl Solid {
    fn intersect(&self, ray: &Ray, t_min: f64) -> Option<(f64, V3)> {
        match self.shape {
            Shape::Plane { point, normal } => {
                let denom = ray.dir.dot(&normal);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = (point - ray.origin).dot(&normal) / denom;
                (t > t_min).then_some((t, normal))
            }
            Shape::Sphere { center, radius } => {
                let oc = ray.origin - center;
                let b = oc.dot(&ray.dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                [-b - sq, -b + sq]
                    .into_iter()
                    .find(|&t| t > t_min)
                    .map(|t| (t, (ray.origin + ray.dir * t - center) / radius))
            }
            Shape::Cuboid { center, rot, half } => {
                let o = rot.transpose() * (ray.origin - center);
                let d = rot.transpose() * ray.dir;
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                let (mut near_axis, mut far_axis) = (0, 0);
                for a in 0..3 {
                    if d[a].abs() < 1e-15 {
                        if o[a].abs() > half[a] {
                            return None;
                        }
                        continue;
                    }
                    let t1 = (-half[a] - o[a]) / d[a];
                    let t2 = (half[a] - o[a]) / d[a];
                    let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
                    if lo > t_near {
                        t_near = lo;
                        near_axis = a;
                    }
                    if hi < t_far {
                        t_far = hi;
                        far_axis = a;
                    }
                }
                if t_near > t_far {
                    return None;
                }
                let (t, axis) = if t_near > t_min {
                    (t_near, near_axis)
                } else if t_far > t_min {
                    (t_far, far_axis)
                } else {
                    return None;
                };
                let mut n = V3::zeros();
                n[axis] = -d[axis].signum();
                Some((t, rot * n))
            }
            Shape::Room { half, height } => {
                let lo = V3::new(-half, 0.0, -half);
                let hi = V3::new(half, height, half);
                let mut best: Option<(f64, V3)> = None;
                for a in 0..3 {
                    let d = ray.dir[a];
                    if d.abs() < 1e-15 {
                        continue;
                    }
                    let bound = if d > 0.0 { hi[a] } else { lo[a] };
                    let t = (bound - ray.origin[a]) / d;
                    if t > t_min && best.is_none_or(|(bt, _)| t < bt) {
                        let mut n = V3::zeros();
                        n[a] = -d.signum();
                        best = Some((t, n));
                    }
                }
                best
            }
        }
    }

    /// Unsigned distance to the surface for open shapes, signed (negative
    /// inside) for solids. The room is positive inside.
    fn distance(&self, p: &V3) -> f64 {
        match self.shape {
            Shape::Plane { point, normal } => (p - point).dot(&normal).abs(),
            Shape::Sphere { center, radius } => (p - center).norm() - radius,
            Shape::Cuboid { center, rot, half } => {
                let q = (rot.transpose() * (p - center)).abs() - half;
                let outside = q.map(|v| v.max(0.0)).norm();
                outside + q.max().min(0.0)
            }
            Shape::Room { half, height } => {
                let d = [half - p.x.abs(), half - p.z.abs(), p.y, height - p.y];
                d.into_iter().fold(f64::INFINITY, f64::min)
            }
        }
    }
}

/// Resolved scene geometry with the room, podium and object in place.
#[derive(Debug, Clone)]
pub struct Scene {
    solids: Vec<Solid>,
    centroid: V3,
    object_scale: Option<f64>,
    config: SceneConfig,
}

/// Independent RNG streams derived from one seed.
const STREAM_OBJECT: u64 = 1;
const STREAM_VIEWS: u64 = 2;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Scene {
    pub fn from_config(config: &SceneConfig) -> Result<Self> {
        config.validate()?;
        if config.primitives.is_empty() {
            return Err(Error::NoObject);
        }
        let mut prims = config.primitives.clone();
        let object_scale = match config.object_scale_range {
            Some([lo, hi]) if prims.iter().any(Primitive::is_object) => {
                let s = rng_for(config.rng_seed, STREAM_OBJECT).random_range(lo..hi);
                rescale_object(&mut prims, s);
                Some(s)
            }
            _ => None,
        };

        let mut solids = vec![Solid {
            shape: Shape::Room {
                half: config.room_side_m / 2.0,
                height: config.room_side_m,
            },
            albedo: 0.6,
            segment: false,
        }];
        for p in &prims {
            let pose = p.pose();
            let shape = match *p {
                Primitive::Plane { .. } => Shape::Plane {
                    point: pose.origin(),
                    normal: pose.rotation() * V3::z(),
                },
                Primitive::Sphere { radius, .. } => Shape::Sphere {
                    center: pose.origin(),
                    radius,
                },
                Primitive::Box { size, .. } => Shape::Cuboid {
                    center: pose.origin(),
                    rot: pose.rotation(),
                    half: V3::from(size) / 2.0,
                },
                Primitive::Podium { side, .. } => Shape::Cuboid {
                    center: pose.origin(),
                    rot: Matrix3::identity(),
                    half: V3::repeat(side.unwrap_or(config.podium_side_m) / 2.0),
                },
            };
            solids.push(Solid {
                shape,
                albedo: p.albedo(),
                segment: !matches!(p, Primitive::Plane { .. }),
            });
        }
        let centroid = view_target(&prims, config.podium_side_m);
        Ok(Self {
            solids,
            centroid,
            object_scale,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &SceneConfig {
        &self.config
    }

    /// Point every sampled camera looks at: the centre of the object's
    /// bounding box (or of the podium / plane anchors without an object).
    pub fn view_target(&self) -> [f64; 3] {
        [self.centroid.x, self.centroid.y, self.centroid.z]
    }

    /// Largest object extent drawn for this scene, if rescaling was enabled.
    pub fn object_scale(&self) -> Option<f64> {
        self.object_scale
    }

    pub fn cast(&self, ray: &Ray) -> Option<Hit> {
        self.cast_from(ray, RAY_EPS)
    }

    fn cast_from(&self, ray: &Ray, t_min: f64) -> Option<Hit> {
        let mut best: Option<(f64, V3, &Solid)> = None;
        for s in &self.solids {
            if let Some((t, n)) = s.intersect(ray, t_min) {
                if best.is_none_or(|(bt, _, _)| t < bt) {
                    best = Some((t, n, s));
                }
            }
        }
        best.map(|(t, normal, s)| Hit {
            t,
            point: ray.origin + ray.dir * t,
            normal,
            albedo: s.albedo,
            segment: s.segment,
        })
    }

    /// True when the straight segment from `from` to `to` crosses a surface.
    pub fn occluded(&self, from: &V3, to: &V3) -> bool {
        let delta = to - from;
        let dist = delta.norm();
        if dist < RAY_EPS {
            return false;
        }
        let ray = Ray {
            origin: *from,
            dir: delta / dist,
        };
        self.solids
            .iter()
            .any(|s| s.intersect(&ray, RAY_EPS).is_some_and(|(t, _)| t < dist - RAY_EPS))
    }

    /// Distance from `p` to the nearest surface; negative inside a solid or
    /// outside the room.
    pub fn clearance(&self, p: &V3) -> f64 {
        self.solids.iter().map(|s| s.distance(p)).fold(f64::INFINITY, f64::min)
    }

    /// Seeded viewpoints looking at the object centre from distances drawn
    /// uniformly in `view_distance_range`. Candidates that would put either
    /// camera closer than `view_clearance_m` to a surface, or the projector
    /// inside geometry, are redrawn.
    pub fn sample_viewpoints(&self, camera: &CameraModel, rig: &ProjectorRig) -> Result<Vec<CameraPose>> {
        let cfg = &self.config;
        let mut rng = rng_for(cfg.rng_seed, STREAM_VIEWS);
        let [lo, hi] = cfg.view_distance_range;
        let mut poses = Vec::with_capacity(cfg.views_per_object);
        for _ in 0..cfg.views_per_object {
            let mut found = None;
            for _ in 0..MAX_VIEW_TRIES {
                let dist = rng.random_range(lo..hi);
                let dir = V3::new(
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                );
                let n = dir.norm();
                if n < 1e-9 {
                    continue;
                }
                let dir = dir / n;
                if dir.y.abs() > 0.98 {
                    continue;
                }
                let pos = self.centroid + dir * dist;
                let pose = CameraPose::look_at([pos.x, pos.y, pos.z], self.view_target())?;
                if self.admissible(&pose, camera, rig, cfg.view_clearance_m) {
                    found = Some(pose);
                    break;
                }
            }
            poses
                .push(found.ok_or_else(|| Error::Config("no admissible viewpoint within the sampling budget".into()))?);
        }
        Ok(poses)
    }

    fn admissible(&self, pose: &CameraPose, camera: &CameraModel, rig: &ProjectorRig, clearance: f64) -> bool {
        let right = pose.shifted(camera.baseline_m);
        let (proj, _) = rig.placement(pose);
        self.clearance(&pose.position()) >= clearance
            && self.clearance(&right.position()) >= clearance
            && self.clearance(&proj) >= PROJECTOR_CLEARANCE_M
    }

    /// Render the stereo pair, both pattern stacks and ground truth.
    pub fn render_view(
        &self,
        camera: &CameraModel,
        rig: &ProjectorRig,
        patterns: &PatternSpec,
        pose: &CameraPose,
    ) -> Result<RenderOutput> {
        let (right_pose, projector) = self.prepare(camera, rig, patterns, pose)?;
        let light = pose.position();
        let (w, h) = (camera.width, camera.height);

        let left_rows: Vec<Vec<PixelSample>> = (0..h)
            .into_par_iter()
            .map(|y| {
                (0..w)
                    .map(|x| self.sample_pixel(camera, pose, Some(&right_pose), &projector, &light, x, y))
                    .collect()
            })
            .collect();
        let right_rows: Vec<Vec<PixelSample>> = (0..h)
            .into_par_iter()
            .map(|y| {
                (0..w)
                    .map(|x| self.sample_pixel(camera, &right_pose, None, &projector, &light, x, y))
                    .collect()
            })
            .collect();

        let fb = camera.focal_baseline();
        let mut image_left = Grid::filled(w, h, 0.0);
        let mut image_right = Grid::filled(w, h, 0.0);
        let mut depth = Grid::filled(w, h, 0.0);
        let mut disparity = Grid::filled(w, h, 0.0);
        let mut valid = Grid::filled(w, h, false);
        let mut seg = Grid::filled(w, h, false);
        let mut shadow = Grid::filled(w, h, false);
        let mut left_cols = Grid::filled(w, h, 0u32);
        let mut left_lit = Grid::filled(w, h, false);
        let mut right_cols = Grid::filled(w, h, 0u32);
        let mut right_lit = Grid::filled(w, h, false);

        for y in 0..h {
            for x in 0..w {
                let l = &left_rows[y][x];
                image_left.set(x, y, quantize16(l.shade));
                if let Some(z) = l.depth {
                    depth.set(x, y, z);
                    seg.set(x, y, l.segment);
                    shadow.set(x, y, l.column.is_none());
                    if l.visible_right {
                        // stored at single precision so the PFM copy is exact
                        disparity.set(x, y, (fb / z) as f32 as f64);
                        valid.set(x, y, true);
                    }
                }
                if let Some(c) = l.column {
                    left_cols.set(x, y, c);
                    left_lit.set(x, y, true);
                }
                let r = &right_rows[y][x];
                image_right.set(x, y, quantize16(r.shade));
                if let Some(c) = r.column {
                    right_cols.set(x, y, c);
                    right_lit.set(x, y, true);
                }
            }
        }

        let left_stack = crate::codec::generate_stack(patterns, &left_cols, &left_lit)?;
        let right_stack = crate::codec::generate_stack(patterns, &right_cols, &right_lit)?;
        Ok(RenderOutput {
            frame: StereoFrame {
                image_left,
                image_right,
                gt_disparity: DisparityMap::new(disparity, valid)?,
                seg_mask: seg,
                shadow_mask: shadow,
            },
            left_stack,
            right_stack,
            depth,
            left_columns: left_cols,
            right_columns: right_cols,
        })
    }

    fn prepare(
        &self,
        camera: &CameraModel,
        rig: &ProjectorRig,
        patterns: &PatternSpec,
        pose: &CameraPose,
    ) -> Result<(CameraPose, Projector)> {
        camera.validate()?;
        rig.validate(patterns)?;
        let right_pose = pose.shifted(camera.baseline_m);
        for (name, p) in [("left", pose), ("right", &right_pose)] {
            if self.clearance(&p.position()) <= 0.0 {
                return Err(Error::DegeneratePose(format!("{name} camera inside geometry")));
            }
        }
        let (center, rot) = rig.placement(pose);
        if self.clearance(&center) <= 0.0 {
            return Err(Error::DegeneratePose("projector inside geometry".into()));
        }
        let projector = Projector {
            center,
            rot_t: rot.transpose(),
            focal: rig.projector_focal_px,
            columns: rig.projector_columns,
        };
        Ok((right_pose, projector))
    }

    /// Pattern stacks as seen through finite pixels: each layer value is the
    /// lit fraction of `samples × samples` sub-pixel rays. Stripe edges,
    /// sub-pixel stripes, silhouettes and shadow borders come out as
    /// intermediate values. `samples = 1` reproduces the binary stacks of
    /// [`Scene::render_view`].
    pub fn render_soft_stacks(
        &self,
        camera: &CameraModel,
        rig: &ProjectorRig,
        patterns: &PatternSpec,
        pose: &CameraPose,
        samples: usize,
    ) -> Result<(PatternStack, PatternStack)> {
        if samples == 0 {
            return Err(Error::Config("need at least one sample per pixel axis".into()));
        }
        let (right_pose, projector) = self.prepare(camera, rig, patterns, pose)?;
        let stripes: Vec<Vec<bool>> = (0..projector.columns)
            .map(|c| (1..=patterns.t).map(|n| stripe(patterns, n, c)).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        let k = samples as f64;
        let offsets: Vec<f64> = (0..samples).map(|i| (i as f64 + 0.5) / k - 0.5).collect();
        let render = |view: &CameraPose| -> Result<PatternStack> {
            let (w, h, t) = (camera.width, camera.height, patterns.t);
            let rows: Vec<Vec<f64>> = (0..h)
                .into_par_iter()
                .map(|y| {
                    let mut acc = vec![0.0; w * t];
                    for x in 0..w {
                        for oy in &offsets {
                            for ox in &offsets {
                                let Some(c) = self.lit_column(camera, view, &projector, x as f64 + ox, y as f64 + oy)
                                else {
                                    continue;
                                };
                                for (n, &bit) in stripes[c as usize].iter().enumerate() {
                                    if bit {
                                        acc[n * w + x] += 1.0;
                                    }
                                }
                            }
                        }
                    }
                    acc
                })
                .collect();
            let norm = k * k;
            let mut stack = PatternStack::zeros(w, h, t);
            for (y, row) in rows.iter().enumerate() {
                for n in 0..t {
                    for x in 0..w {
                        stack.set(x, y, n, row[n * w + x] / norm);
                    }
                }
            }
            Ok(stack)
        };
        Ok((render(pose)?, render(&right_pose)?))
    }

    fn lit_column(
        &self,
        camera: &CameraModel,
        pose: &CameraPose,
        projector: &Projector,
        x: f64,
        y: f64,
    ) -> Option<u32> {
        let origin = pose.position();
        let ray = Ray {
            origin,
            dir: pose.rotation_matrix() * camera.ray_dir_cam(x, y),
        };
        let hit = self.cast(&ray)?;
        self.illumination(&hit, &origin, projector)
    }

    /// Projector column reaching a surface point seen from `eye`.
    fn illumination(&self, hit: &Hit, eye: &V3, projector: &Projector) -> Option<u32> {
        let view_side = hit.normal.dot(&(eye - hit.point));
        projector
            .column(&hit.point)
            .filter(|_| same_side(view_side, hit.normal.dot(&(projector.center - hit.point))))
            .filter(|_| !self.occluded(&hit.point, &projector.center))
    }

    #[allow(clippy::too_many_arguments)]
    fn sample_pixel(
        &self,
        camera: &CameraModel,
        pose: &CameraPose,
        right: Option<&CameraPose>,
        projector: &Projector,
        light: &V3,
        x: usize,
        y: usize,
    ) -> PixelSample {
        let r = pose.rotation_matrix();
        let origin = pose.position();
        let ray = Ray {
            origin,
            dir: r * camera.ray_dir_cam(x as f64, y as f64),
        };
        let Some(hit) = self.cast(&ray) else {
            return PixelSample::default();
        };
        let to_light = (light - hit.point).normalize();
        let shade = hit.albedo * hit.normal.dot(&to_light).abs();
        let view_side = hit.normal.dot(&(origin - hit.point));
        let depth = (hit.point - origin).dot(&pose.forward());

        let column = self.illumination(&hit, &origin, projector);

        let visible_right = right.is_some_and(|rp| {
            let d = camera.focal_baseline() / depth;
            let xr = x as f64 - d;
            let rc = rp.position();
            xr > -0.5 && same_side(view_side, hit.normal.dot(&(rc - hit.point))) && !self.occluded(&hit.point, &rc)
        });

        PixelSample {
            shade,
            depth: Some(depth),
            segment: hit.segment,
            column,
            visible_right,
        }
    }
}

fn same_side(a: f64, b: f64) -> bool {
    a * b > 0.0
}

fn quantize16(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 65535.0).round() / 65535.0
}

struct Projector {
    center: V3,
    rot_t: Matrix3<f64>,
    focal: f64,
    columns: usize,
}

impl Projector {
    /// Projector column illuminating `p`, if inside the projector frustum
    /// (square, `columns × columns`).
    fn column(&self, p: &V3) -> Option<u32> {
        let q = self.rot_t * (p - self.center);
        if q.z <= 0.0 {
            return None;
        }
        let half = self.columns as f64 / 2.0;
        let u = self.focal * q.x / q.z + half;
        let v = self.focal * q.y / q.z + half;
        let n = self.columns as f64;
        if !(0.0..n).contains(&u) || !(0.0..n).contains(&v) {
            return None;
        }
        Some((u.floor() as u32).min(self.columns as u32 - 1))
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct PixelSample {
    shade: f64,
    depth: Option<f64>,
    segment: bool,
    column: Option<u32>,
    visible_right: bool,
}

fn rescale_object(prims: &mut [Primitive], target_extent: f64) {
    let Some((lo, hi)) = object_bounds(prims) else {
        return;
    };
    let extent = (hi - lo).max();
    if extent <= 0.0 {
        return;
    }
    let k = target_extent / extent;
    // scale about the bottom centre so the object keeps resting where it was
    let base = V3::new((lo.x + hi.x) / 2.0, lo.y, (lo.z + hi.z) / 2.0);
    for p in prims.iter_mut().filter(|p| p.is_object()) {
        match p {
            Primitive::Sphere { pose, radius, .. } => {
                *radius *= k;
                scale_position(pose, &base, k);
            }
            Primitive::Box { pose, size, .. } => {
                size.iter_mut().for_each(|s| *s *= k);
                scale_position(pose, &base, k);
            }
            _ => {}
        }
    }
}

fn scale_position(pose: &mut Pose, base: &V3, k: f64) {
    let p = base + (pose.origin() - base) * k;
    pose.position = [p.x, p.y, p.z];
}

fn primitive_bounds(p: &Primitive, podium_side: f64) -> Option<(V3, V3)> {
    let c = p.pose().origin();
    let half = match *p {
        Primitive::Plane { .. } => return None,
        Primitive::Sphere { radius, .. } => V3::repeat(radius),
        Primitive::Box { size, .. } => {
            let r = p.pose().rotation().abs();
            r * (V3::from(size) / 2.0)
        }
        Primitive::Podium { side, .. } => V3::repeat(side.unwrap_or(podium_side) / 2.0),
    };
    Some((c - half, c + half))
}

fn object_bounds(prims: &[Primitive]) -> Option<(V3, V3)> {
    prims
        .iter()
        .filter(|p| p.is_object())
        .filter_map(|p| primitive_bounds(p, 0.0))
        .reduce(|(a, b), (c, d)| (a.inf(&c), b.sup(&d)))
}

fn view_target(prims: &[Primitive], podium_side: f64) -> V3 {
    if let Some((lo, hi)) = object_bounds(prims) {
        return (lo + hi) / 2.0;
    }
    let podiums: Vec<V3> = prims
        .iter()
        .filter_map(|p| match p {
            Primitive::Podium { .. } => primitive_bounds(p, podium_side).map(|(a, b)| (a + b) / 2.0),
            _ => None,
        })
        .collect();
    let anchors = if podiums.is_empty() {
        prims.iter().map(|p| p.pose().origin()).collect()
    } else {
        podiums
    };
    anchors.iter().sum::<V3>() / anchors.len() as f64
}

/// Rectified stereo pair with ground truth for the left view.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoFrame {
    pub image_left: Grid<f64>,
    pub image_right: Grid<f64>,
    /// Left-view disparity; its mask is the validity mask (surface hit and
    /// visible from the right camera).
    pub gt_disparity: DisparityMap,
    /// Object and podium pixels.
    pub seg_mask: Mask,
    /// Surface pixels the projector does not reach.
    pub shadow_mask: Mask,
}

impl StereoFrame {
    pub fn width(&self) -> usize {
        self.image_left.width()
    }

    pub fn height(&self) -> usize {
        self.image_left.height()
    }

    pub fn valid_mask(&self) -> &Mask {
        &self.gt_disparity.valid
    }

    /// Valid and lit by the projector: where an exact code match can exist.
    pub fn matchable_mask(&self) -> Mask {
        self.valid_mask()
            .and(&self.shadow_mask.not())
            .expect("frame masks share a shape")
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub frame: StereoFrame,
    pub left_stack: PatternStack,
    pub right_stack: PatternStack,
    /// Left-view depth along the optical axis, metres (0 where nothing was hit).
    pub depth: Grid<f64>,
    /// Projector column per pixel (meaningful only where lit).
    pub left_columns: Grid<u32>,
    pub right_columns: Grid<u32>,
}

/// Generate every view of a scene: resolve geometry, sample viewpoints and
/// render each one.
pub fn render_dataset(
    config: &SceneConfig,
    camera: &CameraModel,
    rig: &ProjectorRig,
    patterns: &PatternSpec,
) -> Result<Vec<(CameraPose, RenderOutput)>> {
    let scene = Scene::from_config(config)?;
    let poses = scene.sample_viewpoints(camera, rig)?;
    poses
        .into_iter()
        .map(|pose| Ok((pose, scene.render_view(camera, rig, patterns, &pose)?)))
        .collect()
}

/// Sanity check used by tests and the CLI: every layer of a lit pixel
/// equals the stripe of its projector column.
pub fn stripe_consistent(out: &RenderOutput, patterns: &PatternSpec) -> Result<bool> {
    let f = &out.frame;
    for y in 0..f.height() {
        for x in 0..f.width() {
            if *f.shadow_mask.get(x, y) || f.gt_disparity.get(x, y).is_none() {
                continue;
            }
            let col = *out.left_columns.get(x, y) as usize;
            for n in 1..=patterns.t {
                let want = if stripe(patterns, n, col)? { 1.0 } else { 0.0 };
                if out.left_stack.get(x, y, n - 1) != want {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// JSON scene document: a [`SceneConfig`] plus optional camera, projector
/// and pattern overrides.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneDocument {
    #[serde(flatten)]
    pub scene: SceneConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projector: Option<ProjectorRig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patterns: Option<PatternSpec>,
}

impl SceneDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn camera(&self) -> CameraModel {
        self.camera.unwrap_or_default()
    }

    pub fn projector(&self) -> ProjectorRig {
        self.projector.unwrap_or_default()
    }

    pub fn patterns(&self) -> PatternSpec {
        self.patterns.unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane_scene(z: f64) -> Scene {
        let cfg = SceneConfig {
            primitives: vec![Primitive::Plane {
                pose: Pose::at([0.0, 0.5, z]),
                albedo: 0.8,
            }],
            object_scale_range: None,
            ..Default::default()
        };
        Scene::from_config(&cfg).unwrap()
    }

    #[test]
    fn frontal_plane_disparity() {
        let scene = plane_scene(0.05);
        let cam = CameraModel::default();
        let pose = CameraPose::look_at([0.0, 0.5, 0.0], [0.0, 0.5, 1.0]).unwrap();
        let out = scene
            .render_view(&cam, &ProjectorRig::default(), &PatternSpec::default(), &pose)
            .unwrap();
        let d = &out.frame.gt_disparity;
        assert!(d.valid_count() > 0);
        for y in 0..cam.height {
            for x in 0..cam.width {
                if let Some(v) = d.get(x, y) {
                    assert!((v - 25.6).abs() < 1e-5, "{v}");
                }
            }
        }
        // the left-most columns map outside the right image
        assert!(d.get(0, 128).is_none());
        assert!(d.get(40, 128).is_some());
    }

    #[test]
    fn empty_scene_has_no_object() {
        let cfg = SceneConfig {
            primitives: vec![],
            ..Default::default()
        };
        assert!(matches!(Scene::from_config(&cfg), Err(Error::NoObject)));
    }

    #[test]
    fn camera_inside_geometry_is_rejected() {
        let scene = Scene::from_config(&SceneConfig::default()).unwrap();
        let inside = CameraPose::look_at([0.0, 0.05, 0.0], [0.0, 0.05, 1.0]).unwrap();
        let err = scene
            .render_view(
                &CameraModel::default(),
                &ProjectorRig::default(),
                &PatternSpec::default(),
                &inside,
            )
            .unwrap_err();
        assert!(matches!(err, Error::DegeneratePose(_)));
    }

    #[test]
    fn look_at_axes() {
        let p = CameraPose::look_at([0.0, 0.5, 0.0], [0.0, 0.5, 1.0]).unwrap();
        let r = p.rotation_matrix();
        assert!((r.column(2) - V3::z()).norm() < 1e-12);
        assert!((r.column(1) + V3::y()).norm() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        assert!(CameraPose::look_at([0.0; 3], [0.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn rig_validation() {
        let spec = PatternSpec::default();
        let bad = ProjectorRig {
            projector_columns: 200,
            ..Default::default()
        };
        assert!(bad.validate(&spec).is_err());
        let small = ProjectorRig {
            projector_columns: 128,
            ..Default::default()
        };
        assert!(small.validate(&spec).is_err());
        assert!(ProjectorRig::default().validate(&spec).is_ok());
    }

    #[test]
    fn config_validation() {
        let c = SceneConfig {
            view_distance_range: [0.1, 0.05],
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = SceneConfig {
            views_per_object: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let mut c = SceneConfig::default();
        c.primitives.push(Primitive::Sphere {
            pose: Pose::at([2.0, 0.5, 0.0]),
            radius: 0.1,
            albedo: 0.5,
        });
        assert!(c.validate().is_err());
    }

    #[test]
    fn object_rescale_hits_drawn_extent() {
        let scene = Scene::from_config(&SceneConfig {
            rng_seed: 11,
            ..Default::default()
        })
        .unwrap();
        let s = scene.object_scale().unwrap();
        assert!((0.03..0.10).contains(&s));
        let prims: Vec<Primitive> = scene.config.primitives.clone();
        let mut scaled = prims.clone();
        rescale_object(&mut scaled, s);
        let (lo, hi) = object_bounds(&scaled).unwrap();
        assert!(((hi - lo).max() - s).abs() < 1e-12);
        // resting height preserved
        let (lo0, _) = object_bounds(&prims).unwrap();
        assert!((lo.y - lo0.y).abs() < 1e-12);
    }

    #[test]
    fn scene_document_defaults() {
        let doc = SceneDocument::from_json(r#"{"rng_seed": 5}"#).unwrap();
        assert_eq!(doc.scene.rng_seed, 5);
        assert_eq!(doc.scene.views_per_object, 10);
        assert_eq!(doc.camera(), CameraModel::default());
        let doc = SceneDocument::from_json(
            r#"{"primitives":[{"kind":"sphere","pose":{"position":[0,0.2,0]},"radius":0.02}],
                "patterns":{"kind":"gray","t":8,"code_width":256}}"#,
        )
        .unwrap();
        assert_eq!(doc.scene.primitives.len(), 1);
        assert_eq!(doc.patterns().kind, crate::codec::PatternKind::Gray);
    }
}
