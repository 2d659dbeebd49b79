//! Procedural task instances: book/shelf, can/cabinet and mug/rack scenes
//! built from boxes and cylinders, with enumerated placement solutions and
//! demonstration sampling.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{CloudError, CloudRole, PointCloud};
use crate::geometry::{RigidTransform, Rotation, Vec3};

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("no valid instance after {0} attempts")]
    Exhausted(usize),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown task '{0}' (expected book_shelf, can_cabinet or mug_rack)")]
    UnknownTask(String),
    #[error(transparent)]
    Cloud(#[from] CloudError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    BookShelf,
    CanCabinet,
    MugRack,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::BookShelf, TaskKind::CanCabinet, TaskKind::MugRack];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::BookShelf => "book_shelf",
            TaskKind::CanCabinet => "can_cabinet",
            TaskKind::MugRack => "mug_rack",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = SceneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "book_shelf" => Ok(TaskKind::BookShelf),
            "can_cabinet" => Ok(TaskKind::CanCabinet),
            "mug_rack" => Ok(TaskKind::MugRack),
            other => Err(SceneError::UnknownTask(other.to_string())),
        }
    }
}

// ---------------------------------------------------------------------------
// Primitives

/// Solid primitive placed by `pose` (local → world).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Box { pose: RigidTransform, half: Vec3 },
    /// Axis along local z.
    Cylinder {
        pose: RigidTransform,
        radius: f64,
        half_height: f64,
    },
}

impl Primitive {
    pub fn cuboid(center: Vec3, half: Vec3) -> Self {
        Primitive::Box {
            pose: RigidTransform::from_translation(center),
            half,
        }
    }

    pub fn pose(&self) -> &RigidTransform {
        match self {
            Primitive::Box { pose, .. } | Primitive::Cylinder { pose, .. } => pose,
        }
    }

    pub fn transformed(&self, t: &RigidTransform) -> Primitive {
        match self {
            Primitive::Box { pose, half } => Primitive::Box {
                pose: t.compose(pose),
                half: *half,
            },
            Primitive::Cylinder {
                pose,
                radius,
                half_height,
            } => Primitive::Cylinder {
                pose: t.compose(pose),
                radius: *radius,
                half_height: *half_height,
            },
        }
    }

    /// Signed distance, negative inside.
    pub fn sdf(&self, p: &Vec3) -> f64 {
        let q = self.pose().inverse().apply_point(p);
        match self {
            Primitive::Box { half, .. } => {
                let d = q.abs() - half;
                d.map(|v| v.max(0.0)).norm() + d.max().min(0.0)
            }
            Primitive::Cylinder {
                radius, half_height, ..
            } => {
                let radial = (q.x * q.x + q.y * q.y).sqrt() - radius;
                let axial = q.z.abs() - half_height;
                (radial.max(0.0).powi(2) + axial.max(0.0).powi(2)).sqrt() + radial.max(axial).min(0.0)
            }
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            Primitive::Box { half, .. } => 8.0 * (half.x * half.y + half.y * half.z + half.x * half.z),
            Primitive::Cylinder {
                radius, half_height, ..
            } => 4.0 * PI * radius * half_height + 2.0 * PI * radius * radius,
        }
    }

    /// Uniform surface sample with outward normal, world frame.
    pub fn sample_surface<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec3, Vec3) {
        let (p, n) = match self {
            Primitive::Box { half, .. } => {
                let faces = [half.y * half.z, half.x * half.z, half.x * half.y];
                let total: f64 = faces.iter().sum();
                let mut u = rng.random::<f64>() * total;
                let mut axis = 2;
                for (k, a) in faces.iter().enumerate() {
                    if u < *a {
                        axis = k;
                        break;
                    }
                    u -= a;
                }
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let mut p = Vec3::zeros();
                for k in 0..3 {
                    p[k] = if k == axis {
                        sign * half[k]
                    } else {
                        rng.random_range(-half[k]..=half[k])
                    };
                }
                let mut n = Vec3::zeros();
                n[axis] = sign;
                (p, n)
            }
            Primitive::Cylinder {
                radius, half_height, ..
            } => {
                let side = 4.0 * PI * radius * half_height;
                let cap = PI * radius * radius;
                let u = rng.random::<f64>() * (side + 2.0 * cap);
                let phi = rng.random::<f64>() * 2.0 * PI;
                if u < side {
                    let z = rng.random_range(-*half_height..=*half_height);
                    (
                        Vec3::new(radius * phi.cos(), radius * phi.sin(), z),
                        Vec3::new(phi.cos(), phi.sin(), 0.0),
                    )
                } else {
                    let s = radius * rng.random::<f64>().sqrt();
                    let sign = if u < side + cap { 1.0 } else { -1.0 };
                    (
                        Vec3::new(s * phi.cos(), s * phi.sin(), sign * half_height),
                        Vec3::new(0.0, 0.0, sign),
                    )
                }
            }
        };
        let pose = self.pose();
        (pose.apply_point(&p), pose.rotation.apply(&n))
    }
}

/// Union of primitives.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub primitives: Vec<Primitive>,
}

impl Shape {
    pub fn new(primitives: Vec<Primitive>) -> Self {
        Shape { primitives }
    }

    pub fn sdf(&self, p: &Vec3) -> f64 {
        self.primitives.iter().map(|q| q.sdf(p)).fold(f64::INFINITY, f64::min)
    }

    pub fn transformed(&self, t: &RigidTransform) -> Shape {
        Shape {
            primitives: self.primitives.iter().map(|p| p.transformed(t)).collect(),
        }
    }

    /// Area-proportional samples on the union's outer surface. Samples that
    /// fall inside another primitive are rejected.
    pub fn sample_surface<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<(Vec3, Vec3)> {
        let areas: Vec<f64> = self.primitives.iter().map(Primitive::area).collect();
        let total: f64 = areas.iter().sum();
        let mut out = Vec::with_capacity(n);
        let mut attempts = 0usize;
        while out.len() < n && attempts < 200 * n.max(1) {
            attempts += 1;
            let mut u = rng.random::<f64>() * total;
            let mut idx = areas.len() - 1;
            for (k, a) in areas.iter().enumerate() {
                if u < *a {
                    idx = k;
                    break;
                }
                u -= a;
            }
            let (p, normal) = self.primitives[idx].sample_surface(rng);
            let buried = self
                .primitives
                .iter()
                .enumerate()
                .any(|(j, q)| j != idx && q.sdf(&p) < -1e-7);
            if !buried {
                out.push((p, normal));
            }
        }
        out
    }
}

/// Keeps points whose normal faces at least one of `views` viewpoints.
pub fn visibility_cull(samples: Vec<(Vec3, Vec3)>, views: &[Vec3]) -> Vec<(Vec3, Vec3)> {
    samples
        .into_iter()
        .filter(|(p, n)| views.iter().any(|v| n.dot(&(v - p)) > 0.0))
        .collect()
}

// ---------------------------------------------------------------------------
// Instance types

/// Continuous symmetry of a solution: rotating the placed object about this
/// world-frame axis yields another valid placement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryAxis {
    pub point: Vec3,
    pub direction: Vec3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    /// Canonical object frame → placed.
    pub transform: RigidTransform,
    /// Index into `SceneInstance::sites`.
    pub site: usize,
    pub symmetry: Option<SymmetryAxis>,
}

/// Placement site descriptor, world frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Site {
    /// Open shelf cubby. `frame` origin is the interior centre; x lateral,
    /// y towards the back panel, z up. `half` are interior half extents.
    Slot { frame: RigidTransform, half: Vec3 },
    /// Top of an existing can stack.
    StackTop { center: Vec3, up: Vec3, radius: f64 },
    /// Free floor area; `frame` origin on the support surface, z up.
    FreeRegion { frame: RigidTransform, half: [f64; 2] },
    /// Hanging peg from `base` along `direction`.
    Peg {
        base: Vec3,
        direction: Vec3,
        length: f64,
        radius: f64,
    },
}

/// Dimensions of the manipulated object, canonical frame centred at its
/// symmetry centre.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectSpec {
    /// x thickness, y depth, z height.
    Book { half: Vec3 },
    /// Axis along z.
    Can { radius: f64, height: f64 },
    /// Body axis along z, handle on +y with its aperture facing x.
    Mug {
        radius: f64,
        height: f64,
        aperture_center: Vec3,
        /// Aperture half extents along y and z.
        aperture_half: [f64; 2],
    },
}

impl ObjectSpec {
    /// Proper rotations mapping the object onto itself.
    pub fn symmetry_group(&self) -> Vec<Rotation> {
        match self {
            ObjectSpec::Book { .. } => vec![
                Rotation::identity(),
                Rotation::about_x(PI),
                Rotation::about_y(PI),
                Rotation::about_z(PI),
            ],
            ObjectSpec::Can { .. } => vec![Rotation::identity(), Rotation::about_x(PI)],
            ObjectSpec::Mug { .. } => vec![Rotation::identity()],
        }
    }

    pub fn shape_symmetry(&self) -> ShapeSymmetry {
        ShapeSymmetry {
            discrete: self.symmetry_group(),
            axis: matches!(self, ObjectSpec::Can { .. }).then(Vec3::z),
        }
    }
}

/// Rotations about the canonical origin that leave the object's shape
/// unchanged: a finite group, optionally combined with every rotation about
/// a canonical axis.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeSymmetry {
    pub discrete: Vec<Rotation>,
    pub axis: Option<Vec3>,
}

impl Default for ShapeSymmetry {
    fn default() -> Self {
        ShapeSymmetry {
            discrete: vec![Rotation::identity()],
            axis: None,
        }
    }
}

impl ShapeSymmetry {
    pub fn is_trivial(&self) -> bool {
        self.axis.is_none() && self.discrete.len() <= 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneInstance {
    pub task: TaskKind,
    pub seed: u64,
    pub scene_cloud: PointCloud,
    pub object_cloud_canonical: PointCloud,
    pub solutions: Vec<Solution>,
    pub sites: Vec<Site>,
    pub scene_shape: Shape,
    pub object_shape: Shape,
    pub object: ObjectSpec,
    /// Shelf / cabinet / rack-area pose on the table.
    pub scene_pose: RigidTransform,
}

/// Serialisable metadata stored next to the clouds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub task: TaskKind,
    pub seed: u64,
    pub sites: Vec<Site>,
    pub scene_shape: Shape,
    pub object_shape: Shape,
    pub object: ObjectSpec,
    pub scene_pose: RigidTransform,
}

impl SceneInstance {
    pub fn meta(&self) -> InstanceMeta {
        InstanceMeta {
            task: self.task,
            seed: self.seed,
            sites: self.sites.clone(),
            scene_shape: self.scene_shape.clone(),
            object_shape: self.object_shape.clone(),
            object: self.object.clone(),
            scene_pose: self.scene_pose,
        }
    }

    pub fn from_parts(
        meta: InstanceMeta,
        scene_cloud: PointCloud,
        object_cloud_canonical: PointCloud,
        solutions: Vec<Solution>,
    ) -> Self {
        SceneInstance {
            task: meta.task,
            seed: meta.seed,
            scene_cloud,
            object_cloud_canonical,
            solutions,
            sites: meta.sites,
            scene_shape: meta.scene_shape,
            object_shape: meta.object_shape,
            object: meta.object,
            scene_pose: meta.scene_pose,
        }
    }

    pub fn placed_object_cloud(&self, pose: &RigidTransform) -> PointCloud {
        self.object_cloud_canonical.transformed(pose)
    }

    pub fn object_symmetries(&self) -> Vec<Rotation> {
        self.object.symmetry_group()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Demonstration {
    pub scene_cloud: PointCloud,
    pub final_object_cloud: PointCloud,
    pub placement: RigidTransform,
    /// Solution the demonstration was derived from.
    pub solution: usize,
    pub symmetry: ShapeSymmetry,
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BookShelfConfig {
    pub min_slots: usize,
    pub max_slots: usize,
    /// Fraction of cubbies (rounded) already holding a book.
    pub fill_fraction: f64,
    pub book_thickness: [f64; 2],
    pub book_depth: [f64; 2],
    pub book_height: [f64; 2],
    /// Gap between the book and each cubby wall.
    pub side_clearance: [f64; 2],
    /// Gap above and below a vertically centred book.
    pub vertical_clearance: [f64; 2],
    /// Interior depth beyond the book depth.
    pub extra_depth: [f64; 2],
    pub board_thickness: f64,
    pub divider_thickness: f64,
    pub back_thickness: f64,
}

impl Default for BookShelfConfig {
    fn default() -> Self {
        BookShelfConfig {
            min_slots: 2,
            max_slots: 4,
            fill_fraction: 0.25,
            book_thickness: [0.03, 0.05],
            book_depth: [0.14, 0.18],
            book_height: [0.18, 0.22],
            side_clearance: [0.015, 0.025],
            vertical_clearance: [0.015, 0.025],
            extra_depth: [0.02, 0.04],
            board_thickness: 0.015,
            divider_thickness: 0.008,
            back_thickness: 0.008,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CanCabinetConfig {
    pub can_radius: [f64; 2],
    pub can_height: [f64; 2],
    pub min_stacks: usize,
    pub max_stacks: usize,
    /// Cans per existing stack.
    pub stack_height: [usize; 2],
    pub min_free_regions: usize,
    pub max_free_regions: usize,
    /// Free-region width as a multiple of the can diameter.
    pub free_width_factor: [f64; 2],
    /// Gap between neighbouring cells and walls.
    pub clearance: [f64; 2],
    pub yaw_discretization: usize,
    pub wall_thickness: f64,
}

impl Default for CanCabinetConfig {
    fn default() -> Self {
        CanCabinetConfig {
            can_radius: [0.03, 0.04],
            can_height: [0.08, 0.12],
            min_stacks: 1,
            max_stacks: 3,
            stack_height: [1, 2],
            min_free_regions: 0,
            max_free_regions: 2,
            free_width_factor: [1.2, 2.6],
            clearance: [0.015, 0.025],
            yaw_discretization: 8,
            wall_thickness: 0.015,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MugRackConfig {
    pub racks: usize,
    pub pegs_per_rack: usize,
    pub peg_length: f64,
    pub peg_radius: f64,
    /// Upward tilt of each peg, degrees.
    pub peg_tilt_deg: [f64; 2],
    pub peg_height: [f64; 2],
    /// Distance along the peg at which the handle aperture sits.
    pub thread_distance: f64,
    pub roll_discretization: usize,
    pub mug_radius: [f64; 2],
    pub mug_height: [f64; 2],
    pub aperture_width: [f64; 2],
    pub aperture_height: [f64; 2],
    pub rack_spacing: f64,
}

impl Default for MugRackConfig {
    fn default() -> Self {
        MugRackConfig {
            racks: 1,
            pegs_per_rack: 2,
            peg_length: 0.15,
            peg_radius: 0.005,
            peg_tilt_deg: [10.0, 20.0],
            peg_height: [0.24, 0.3],
            thread_distance: 0.11,
            roll_discretization: 4,
            mug_radius: [0.035, 0.045],
            mug_height: [0.08, 0.11],
            aperture_width: [0.022, 0.03],
            aperture_height: [0.04, 0.055],
            rack_spacing: 0.6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub scene_points: usize,
    pub object_points: usize,
    /// Drop points facing away from every virtual camera.
    pub visibility_culling: bool,
    /// Random xy offset range of the scene on the table, metres.
    pub table_offset: f64,
    /// Required gap between a placed object and the scene.
    pub min_separation: f64,
    pub max_retries: usize,
    pub book_shelf: BookShelfConfig,
    pub can_cabinet: CanCabinetConfig,
    pub mug_rack: MugRackConfig,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            scene_points: 4096,
            object_points: 1024,
            visibility_culling: false,
            table_offset: 0.2,
            min_separation: 0.001,
            max_retries: 20,
            book_shelf: BookShelfConfig::default(),
            can_cabinet: CanCabinetConfig::default(),
            mug_rack: MugRackConfig::default(),
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..=range[1])
    } else {
        range[0]
    }
}

fn uniform_count<R: Rng + ?Sized>(rng: &mut R, lo: usize, hi: usize) -> usize {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

// ---------------------------------------------------------------------------
// Generation

/// Unplaced scene description produced by a task builder, in the scene's local frame.
struct Layout {
    scene: Shape,
    object: Shape,
    spec: ObjectSpec,
    sites: Vec<Site>,
    solutions: Vec<Solution>,
}

impl Layout {
    fn transformed(self, pose: &RigidTransform) -> Layout {
        Layout {
            scene: self.scene.transformed(pose),
            object: self.object,
            spec: self.spec,
            sites: self.sites.into_iter().map(|s| transform_site(&s, pose)).collect(),
            solutions: self
                .solutions
                .into_iter()
                .map(|s| Solution {
                    transform: pose.compose(&s.transform),
                    site: s.site,
                    symmetry: s.symmetry.map(|a| SymmetryAxis {
                        point: pose.apply_point(&a.point),
                        direction: pose.rotation.apply(&a.direction),
                    }),
                })
                .collect(),
        }
    }
}

fn transform_site(site: &Site, pose: &RigidTransform) -> Site {
    match site {
        Site::Slot { frame, half } => Site::Slot {
            frame: pose.compose(frame),
            half: *half,
        },
        Site::StackTop { center, up, radius } => Site::StackTop {
            center: pose.apply_point(center),
            up: pose.rotation.apply(up),
            radius: *radius,
        },
        Site::FreeRegion { frame, half } => Site::FreeRegion {
            frame: pose.compose(frame),
            half: *half,
        },
        Site::Peg {
            base,
            direction,
            length,
            radius,
        } => Site::Peg {
            base: pose.apply_point(base),
            direction: pose.rotation.apply(direction),
            length: *length,
            radius: *radius,
        },
    }
}

/// Minimum signed clearance between a placed object and the scene, checked
/// in both directions on dense surface samples.
pub fn placement_clearance(scene: &Shape, object: &Shape, pose: &RigidTransform, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let placed = object.transformed(pose);
    let a = placed
        .sample_surface(samples, &mut rng)
        .iter()
        .map(|(p, _)| scene.sdf(p))
        .fold(f64::INFINITY, f64::min);
    let b = scene
        .sample_surface(samples, &mut rng)
        .iter()
        .map(|(p, _)| placed.sdf(p))
        .fold(f64::INFINITY, f64::min);
    a.min(b)
}

const VALIDATION_SAMPLES: usize = 1500;

/// Generates an instance of `task` from `seed`, retrying layouts whose
/// solutions fail the separation check.
pub fn generate(task: TaskKind, seed: u64, cfg: &SceneConfig) -> Result<SceneInstance, SceneError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inst = match task {
        TaskKind::BookShelf => generate_book_shelf(&mut rng, cfg),
        TaskKind::CanCabinet => generate_can_cabinet(&mut rng, cfg),
        TaskKind::MugRack => generate_mug_rack(&mut rng, cfg),
    }?;
    Ok(SceneInstance { seed, ..inst })
}

pub fn generate_book_shelf<R: Rng + ?Sized>(rng: &mut R, cfg: &SceneConfig) -> Result<SceneInstance, SceneError> {
    let c = &cfg.book_shelf;
    if c.min_slots == 0 || c.min_slots > c.max_slots {
        return Err(SceneError::Config("need 1 <= min_slots <= max_slots".into()));
    }
    if !(0.0..=1.0).contains(&c.fill_fraction) {
        return Err(SceneError::Config("fill_fraction must lie in [0, 1]".into()));
    }
    finish(TaskKind::BookShelf, rng, cfg, |rng| book_shelf_layout(rng, c))
}

pub fn generate_can_cabinet<R: Rng + ?Sized>(rng: &mut R, cfg: &SceneConfig) -> Result<SceneInstance, SceneError> {
    let c = &cfg.can_cabinet;
    if c.yaw_discretization == 0 || c.min_stacks > c.max_stacks || c.min_free_regions > c.max_free_regions {
        return Err(SceneError::Config("invalid can/cabinet layout ranges".into()));
    }
    if c.max_stacks + c.max_free_regions == 0 || c.stack_height[0] == 0 || c.stack_height[0] > c.stack_height[1] {
        return Err(SceneError::Config("invalid can/cabinet stack settings".into()));
    }
    finish(TaskKind::CanCabinet, rng, cfg, |rng| can_cabinet_layout(rng, c))
}

pub fn generate_mug_rack<R: Rng + ?Sized>(rng: &mut R, cfg: &SceneConfig) -> Result<SceneInstance, SceneError> {
    let c = &cfg.mug_rack;
    if c.racks == 0 || c.pegs_per_rack == 0 || c.pegs_per_rack > 2 || c.roll_discretization == 0 {
        return Err(SceneError::Config("need racks >= 1, 1..=2 pegs per rack, roll discretization >= 1".into()));
    }
    if c.thread_distance >= c.peg_length {
        return Err(SceneError::Config("thread distance must be shorter than the peg".into()));
    }
    finish(TaskKind::MugRack, rng, cfg, |rng| mug_rack_layout(rng, c))
}

fn finish<R: Rng + ?Sized>(
    task: TaskKind,
    rng: &mut R,
    cfg: &SceneConfig,
    mut build: impl FnMut(&mut R) -> Option<Layout>,
) -> Result<SceneInstance, SceneError> {
    for _ in 0..cfg.max_retries.max(1) {
        let Some(local) = build(rng) else { continue };
        if local.solutions.is_empty() {
            continue;
        }
        let yaw = rng.random::<f64>() * 2.0 * PI;
        let offset = Vec3::new(
            rng.random_range(-cfg.table_offset..=cfg.table_offset),
            rng.random_range(-cfg.table_offset..=cfg.table_offset),
            0.0,
        );
        let scene_pose = RigidTransform::new(Rotation::about_z(yaw), offset);
        let layout = local.transformed(&scene_pose);
        let check_seed: u64 = rng.random();
        let valid = layout.solutions.iter().all(|s| {
            placement_clearance(&layout.scene, &layout.object, &s.transform, VALIDATION_SAMPLES, check_seed)
                >= cfg.min_separation
        });
        if !valid {
            continue;
        }
        let views = camera_views(&layout.scene);
        let mut scene_samples = layout.scene.sample_surface(cfg.scene_points, rng);
        let mut object_samples = layout.object.sample_surface(cfg.object_points, rng);
        if cfg.visibility_culling {
            scene_samples = visibility_cull(scene_samples, &views);
            // the object is viewed from the same cameras at its first solution
            let first = layout.solutions[0].transform;
            let inv = first.inverse();
            let local_views: Vec<Vec3> = views.iter().map(|v| inv.apply_point(v)).collect();
            object_samples = visibility_cull(object_samples, &local_views);
        }
        let scene_cloud = PointCloud::new(scene_samples.into_iter().map(|(p, _)| p).collect(), CloudRole::Scene)?;
        let object_cloud =
            PointCloud::new(object_samples.into_iter().map(|(p, _)| p).collect(), CloudRole::Object)?;
        return Ok(SceneInstance {
            task,
            seed: 0,
            scene_cloud,
            object_cloud_canonical: object_cloud,
            solutions: layout.solutions,
            sites: layout.sites,
            scene_shape: layout.scene,
            object_shape: layout.object,
            object: layout.spec,
            scene_pose,
        });
    }
    Err(SceneError::Exhausted(cfg.max_retries.max(1)))
}

/// Three virtual cameras on an upper hemisphere around the scene.
fn camera_views(scene: &Shape) -> Vec<Vec3> {
    let center = scene
        .primitives
        .iter()
        .map(|p| p.pose().translation)
        .sum::<Vec3>()
        / scene.primitives.len().max(1) as f64;
    (0..3)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / 3.0;
            center + Vec3::new(1.5 * a.cos(), 1.5 * a.sin(), 1.0)
        })
        .collect()
}

fn book_shelf_layout<R: Rng + ?Sized>(rng: &mut R, c: &BookShelfConfig) -> Option<Layout> {
    let n = uniform_count(rng, c.min_slots, c.max_slots);
    let th = uniform(rng, c.book_thickness);
    let dp = uniform(rng, c.book_depth);
    let ht = uniform(rng, c.book_height);
    let v_clear = uniform(rng, c.vertical_clearance);
    let depth_in = dp + uniform(rng, c.extra_depth);
    let height_in = ht + 2.0 * v_clear;
    let widths: Vec<f64> = (0..n).map(|_| th + 2.0 * uniform(rng, c.side_clearance)).collect();
    let (tb, td, tk) = (c.board_thickness, c.divider_thickness, c.back_thickness);
    let side = tb;
    let inner_w: f64 = widths.iter().sum::<f64>() + td * (n - 1) as f64;
    let x0 = -0.5 * inner_w;

    let filled_count = ((c.fill_fraction * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let filled: Vec<bool> = (0..n).map(|i| order[..filled_count].contains(&i)).collect();

    let mut prims = Vec::new();
    let outer_h = height_in + 2.0 * tb;
    // boards
    prims.push(Primitive::cuboid(
        Vec3::new(0.0, 0.5 * tk, 0.5 * tb),
        Vec3::new(0.5 * inner_w + side, 0.5 * (depth_in + tk), 0.5 * tb),
    ));
    prims.push(Primitive::cuboid(
        Vec3::new(0.0, 0.5 * tk, outer_h - 0.5 * tb),
        Vec3::new(0.5 * inner_w + side, 0.5 * (depth_in + tk), 0.5 * tb),
    ));
    // side walls
    for s in [-1.0, 1.0] {
        prims.push(Primitive::cuboid(
            Vec3::new(s * (0.5 * inner_w + 0.5 * side), 0.5 * tk, 0.5 * outer_h),
            Vec3::new(0.5 * side, 0.5 * (depth_in + tk), 0.5 * outer_h),
        ));
    }
    // back panel
    prims.push(Primitive::cuboid(
        Vec3::new(0.0, 0.5 * depth_in + 0.5 * tk, 0.5 * outer_h),
        Vec3::new(0.5 * inner_w + side, 0.5 * tk, 0.5 * outer_h),
    ));

    let mut sites = Vec::new();
    let mut solutions = Vec::new();
    let mut x = x0;
    let center_z = tb + 0.5 * height_in;
    for (i, w) in widths.iter().enumerate() {
        if i > 0 {
            prims.push(Primitive::cuboid(
                Vec3::new(x - 0.5 * td, 0.0, center_z),
                Vec3::new(0.5 * td, 0.5 * depth_in, 0.5 * height_in),
            ));
        }
        let center = Vec3::new(x + 0.5 * w, 0.0, center_z);
        if filled[i] {
            // an existing book standing in the cubby, resting on the board
            let eth = (w - 0.006).min(uniform(rng, c.book_thickness));
            let eht = (height_in - 0.004).min(uniform(rng, c.book_height));
            let edp = depth_in.min(uniform(rng, c.book_depth));
            let ex = center.x + rng.random_range(-0.5..=0.5) * (w - eth - 0.004);
            prims.push(Primitive::cuboid(
                Vec3::new(ex, 0.5 * depth_in - 0.5 * edp, tb + 0.5 * eht + 0.001),
                Vec3::new(0.5 * eth, 0.5 * edp, 0.5 * eht),
            ));
        } else {
            let site = sites.len();
            sites.push(Site::Slot {
                frame: RigidTransform::from_translation(center),
                half: Vec3::new(0.5 * w, 0.5 * depth_in, 0.5 * height_in),
            });
            for flip in [Rotation::identity(), Rotation::about_z(PI)] {
                solutions.push(Solution {
                    transform: RigidTransform::new(flip, center),
                    site,
                    symmetry: None,
                });
            }
        }
        x += w + td;
    }
    Some(Layout {
        scene: Shape::new(prims),
        object: Shape::new(vec![Primitive::cuboid(Vec3::zeros(), Vec3::new(0.5 * th, 0.5 * dp, 0.5 * ht))]),
        spec: ObjectSpec::Book {
            half: Vec3::new(0.5 * th, 0.5 * dp, 0.5 * ht),
        },
        sites,
        solutions,
    })
}

/// Can positions along a free region of width `w` (clearance `c` to each side).
pub fn free_region_slots(w: f64, radius: f64, c: f64) -> usize {
    if w < 2.0 * radius + 2.0 * c {
        return 0;
    }
    ((w - c) / (2.0 * radius + c)).floor() as usize
}

fn can_cabinet_layout<R: Rng + ?Sized>(rng: &mut R, c: &CanCabinetConfig) -> Option<Layout> {
    let r = uniform(rng, c.can_radius);
    let h = uniform(rng, c.can_height);
    let n_stacks = uniform_count(rng, c.min_stacks, c.max_stacks);
    let n_free = uniform_count(rng, c.min_free_regions, c.max_free_regions);
    if n_stacks + n_free == 0 {
        return None;
    }
    let gap = uniform(rng, c.clearance);
    // Cells along x: stacks are 2r wide, free regions are wider areas.
    let mut cells: Vec<(bool, f64)> = (0..n_stacks).map(|_| (true, 2.0 * r)).collect();
    for _ in 0..n_free {
        cells.push((false, 2.0 * r * uniform(rng, c.free_width_factor)));
    }
    for i in (1..cells.len()).rev() {
        let j = rng.random_range(0..=i);
        cells.swap(i, j);
    }
    let wt = c.wall_thickness;
    let inner_w: f64 = cells.iter().map(|(_, w)| w).sum::<f64>() + gap * (cells.len() + 1) as f64;
    let depth_in = 2.0 * r + 2.0 * gap;
    let height_in = 3.0 * h + 0.03;
    let outer_h = height_in + 2.0 * wt;

    let mut prims = vec![
        Primitive::cuboid(
            Vec3::new(0.0, 0.5 * wt, 0.5 * wt),
            Vec3::new(0.5 * inner_w + wt, 0.5 * (depth_in + wt), 0.5 * wt),
        ),
        Primitive::cuboid(
            Vec3::new(0.0, 0.5 * wt, outer_h - 0.5 * wt),
            Vec3::new(0.5 * inner_w + wt, 0.5 * (depth_in + wt), 0.5 * wt),
        ),
        Primitive::cuboid(
            Vec3::new(0.0, 0.5 * depth_in + 0.5 * wt, 0.5 * outer_h),
            Vec3::new(0.5 * inner_w + wt, 0.5 * wt, 0.5 * outer_h),
        ),
    ];
    for s in [-1.0, 1.0] {
        prims.push(Primitive::cuboid(
            Vec3::new(s * (0.5 * inner_w + 0.5 * wt), 0.5 * wt, 0.5 * outer_h),
            Vec3::new(0.5 * wt, 0.5 * (depth_in + wt), 0.5 * outer_h),
        ));
    }
    let floor = wt;
    let up = Vec3::z();
    let mut sites = Vec::new();
    let mut solutions = Vec::new();
    let mut x = -0.5 * inner_w + gap;
    let placements = |center: Vec3, site: usize, solutions: &mut Vec<Solution>| {
        for flip in [Rotation::identity(), Rotation::about_x(PI)] {
            for k in 0..c.yaw_discretization {
                let yaw = 2.0 * PI * k as f64 / c.yaw_discretization as f64;
                solutions.push(Solution {
                    transform: RigidTransform::new(Rotation::about_z(yaw).compose(&flip), center),
                    site,
                    symmetry: Some(SymmetryAxis {
                        point: center,
                        direction: up,
                    }),
                });
            }
        }
    };
    for (is_stack, w) in &cells {
        if *is_stack {
            let count = uniform_count(rng, c.stack_height[0], c.stack_height[1]);
            let cx = x + r;
            for k in 0..count {
                prims.push(Primitive::Cylinder {
                    pose: RigidTransform::from_translation(Vec3::new(cx, 0.0, floor + (k as f64 + 0.5) * h)),
                    radius: r,
                    half_height: 0.5 * h,
                });
            }
            let top = Vec3::new(cx, 0.0, floor + count as f64 * h);
            let site = sites.len();
            sites.push(Site::StackTop {
                center: top,
                up,
                radius: r,
            });
            placements(top + up * (0.5 * h + 0.002), site, &mut solutions);
        } else {
            let site = sites.len();
            sites.push(Site::FreeRegion {
                frame: RigidTransform::from_translation(Vec3::new(x + 0.5 * w, 0.0, floor)),
                half: [0.5 * w, 0.5 * depth_in],
            });
            // the cell plus the clearance on both sides
            let span = w + 2.0 * gap;
            let n = free_region_slots(span, r, gap);
            if n > 0 {
                let pitch = 2.0 * r + gap;
                let used = n as f64 * pitch - gap;
                let start = x - gap + 0.5 * (span - used) + r;
                for k in 0..n {
                    let center = Vec3::new(start + k as f64 * pitch, 0.0, floor + 0.5 * h + 0.002);
                    placements(center, site, &mut solutions);
                }
            }
        }
        x += w + gap;
    }
    Some(Layout {
        scene: Shape::new(prims),
        object: Shape::new(vec![Primitive::Cylinder {
            pose: RigidTransform::identity(),
            radius: r,
            half_height: 0.5 * h,
        }]),
        spec: ObjectSpec::Can { radius: r, height: h },
        sites,
        solutions,
    })
}

/// Mug primitives: cylindrical body plus a rectangular ring handle on +y
/// whose aperture axis is x.
pub fn mug_shape(radius: f64, height: f64, aperture_w: f64, aperture_h: f64) -> (Shape, ObjectSpec) {
    let bar = 0.008;
    let hx = 0.006;
    let embed = 0.005;
    let prims = vec![
        Primitive::Cylinder {
            pose: RigidTransform::identity(),
            radius,
            half_height: 0.5 * height,
        },
        // outer bar
        Primitive::cuboid(
            Vec3::new(0.0, radius + aperture_w + 0.5 * bar, 0.0),
            Vec3::new(hx, 0.5 * bar, 0.5 * aperture_h + bar),
        ),
        // top and bottom bars
        Primitive::cuboid(
            Vec3::new(0.0, radius - embed + 0.5 * (aperture_w + embed), 0.5 * aperture_h + 0.5 * bar),
            Vec3::new(hx, 0.5 * (aperture_w + embed), 0.5 * bar),
        ),
        Primitive::cuboid(
            Vec3::new(0.0, radius - embed + 0.5 * (aperture_w + embed), -0.5 * aperture_h - 0.5 * bar),
            Vec3::new(hx, 0.5 * (aperture_w + embed), 0.5 * bar),
        ),
    ];
    (
        Shape::new(prims),
        ObjectSpec::Mug {
            radius,
            height,
            aperture_center: Vec3::new(0.0, radius + 0.5 * aperture_w, 0.0),
            aperture_half: [0.5 * aperture_w, 0.5 * aperture_h],
        },
    )
}

/// Rotation taking the mug's x axis onto `dir` with the handle pointing as
/// close to world up as possible.
fn hang_frame(dir: &Vec3) -> Rotation {
    let x = dir.normalize();
    let mut y = Vec3::z() - x * x.z;
    if y.norm() < 1e-9 {
        y = Vec3::y() - x * x.y;
    }
    let y = y.normalize();
    let z = x.cross(&y);
    Rotation::from_matrix_unchecked(nalgebra::Matrix3::from_columns(&[x, y, z]))
}

fn mug_rack_layout<R: Rng + ?Sized>(rng: &mut R, c: &MugRackConfig) -> Option<Layout> {
    let radius = uniform(rng, c.mug_radius);
    let height = uniform(rng, c.mug_height);
    let aw = uniform(rng, c.aperture_width);
    let ah = uniform(rng, c.aperture_height).min(height - 0.02);
    let (object, spec) = mug_shape(radius, height, aw, ah);
    let ObjectSpec::Mug { aperture_center, .. } = spec else {
        unreachable!()
    };

    // racks on a jittered line
    let mut bases = Vec::new();
    for k in 0..c.racks {
        let along = (k as f64 - 0.5 * (c.racks - 1) as f64) * c.rack_spacing;
        bases.push(Vec3::new(along, rng.random_range(-0.05..=0.05), 0.0));
    }
    let post_r = 0.012;
    let mut prims = Vec::new();
    let mut sites = Vec::new();
    let mut solutions = Vec::new();
    for base in &bases {
        let post_h = c.peg_height[1] + 0.08;
        prims.push(Primitive::cuboid(*base + Vec3::new(0.0, 0.0, 0.0075), Vec3::new(0.075, 0.075, 0.0075)));
        prims.push(Primitive::Cylinder {
            pose: RigidTransform::from_translation(*base + Vec3::new(0.0, 0.0, 0.015 + 0.5 * post_h)),
            radius: post_r,
            half_height: 0.5 * post_h,
        });
        let yaw0 = rng.random::<f64>() * 2.0 * PI;
        for p in 0..c.pegs_per_rack {
            let yaw = yaw0 + PI * p as f64;
            let tilt = uniform(rng, c.peg_tilt_deg).to_radians();
            let z = uniform(rng, c.peg_height);
            let dir = Vec3::new(tilt.cos() * yaw.cos(), tilt.cos() * yaw.sin(), tilt.sin());
            let start = *base + Vec3::new(0.0, 0.0, z);
            // cylinder with its local z mapped onto the peg direction
            let frame = hang_frame(&dir);
            let to_z = Rotation::about_y(PI / 2.0);
            let peg_rot = frame.compose(&to_z);
            prims.push(Primitive::Cylinder {
                pose: RigidTransform::new(peg_rot, start + dir * (0.5 * c.peg_length)),
                radius: c.peg_radius,
                half_height: 0.5 * c.peg_length,
            });
            let site = sites.len();
            sites.push(Site::Peg {
                base: start,
                direction: dir,
                length: c.peg_length,
                radius: c.peg_radius,
            });
            let thread = start + dir * c.thread_distance;
            for k in 0..c.roll_discretization {
                let roll = 2.0 * PI * k as f64 / c.roll_discretization as f64;
                let rot = Rotation::from_axis_angle(&dir, roll).compose(&frame);
                let t = thread - rot.apply(&aperture_center);
                solutions.push(Solution {
                    transform: RigidTransform::new(rot, t),
                    site,
                    symmetry: Some(SymmetryAxis {
                        point: thread,
                        direction: dir,
                    }),
                });
            }
        }
    }
    Some(Layout {
        scene: Shape::new(prims),
        object,
        spec,
        sites,
        solutions,
    })
}

// ---------------------------------------------------------------------------
// Demonstrations

/// Samples `count` demonstrations: a uniformly chosen solution, jittered
/// within its symmetry and clearance; jitter that breaks the separation
/// check falls back to the nominal placement.
pub fn make_demonstrations<R: Rng + ?Sized>(
    instance: &SceneInstance,
    count: usize,
    min_separation: f64,
    rng: &mut R,
) -> Vec<Demonstration> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let idx = rng.random_range(0..instance.solutions.len());
        let nominal = &instance.solutions[idx];
        let mut placement = nominal.transform;
        for _ in 0..8 {
            let candidate = jitter(instance, nominal, rng);
            let seed: u64 = rng.random();
            if placement_clearance(&instance.scene_shape, &instance.object_shape, &candidate, 600, seed)
                >= min_separation
            {
                placement = candidate;
                break;
            }
        }
        out.push(Demonstration {
            scene_cloud: instance.scene_cloud.clone(),
            final_object_cloud: instance.object_cloud_canonical.transformed(&placement),
            placement,
            solution: idx,
            symmetry: instance.object.shape_symmetry(),
        });
    }
    out
}

fn jitter<R: Rng + ?Sized>(instance: &SceneInstance, s: &Solution, rng: &mut R) -> RigidTransform {
    let small = |rng: &mut R, mag: f64| Vec3::from_fn(|_, _| rng.random_range(-mag..=mag));
    match instance.task {
        TaskKind::BookShelf => {
            let Site::Slot { frame, .. } = &instance.sites[s.site] else {
                return s.transform;
            };
            let local = Vec3::new(
                rng.random_range(-0.004..=0.004),
                rng.random_range(-0.01..=0.01),
                rng.random_range(-0.003..=0.003),
            );
            let yaw = rng.random_range(-2f64..=2.0).to_radians();
            let d = RigidTransform::new(Rotation::about_z(yaw), frame.rotation.apply(&local));
            d.about_point(&s.transform.translation).compose(&s.transform)
        }
        TaskKind::CanCabinet => {
            let axis = s.symmetry.map(|a| a.direction).unwrap_or_else(Vec3::z);
            let yaw = rng.random::<f64>() * 2.0 * PI;
            let mut shift = small(rng, 0.003);
            shift -= axis * axis.dot(&shift);
            RigidTransform::new(Rotation::from_axis_angle(&axis, yaw), shift)
                .about_point(&s.transform.translation)
                .compose(&s.transform)
        }
        TaskKind::MugRack => {
            let Some(axis) = s.symmetry else {
                return s.transform;
            };
            let roll = rng.random_range(-30f64..=30.0).to_radians();
            let slide = axis.direction * rng.random_range(-0.01..=0.01);
            let about = RigidTransform::new(Rotation::from_axis_angle(&axis.direction, roll), slide);
            about.about_point(&axis.point).compose(&s.transform)
        }
    }
}

/// Picks `count` demonstrations across freshly generated instances of `task`,
/// `per_instance` from each, using instance seeds `seed, seed + 1, ...`.
pub fn demonstration_set(
    task: TaskKind,
    count: usize,
    per_instance: usize,
    seed: u64,
    cfg: &SceneConfig,
) -> Result<Vec<(SceneInstance, Vec<Demonstration>)>, SceneError> {
    let per = per_instance.max(1);
    let mut out = Vec::new();
    let mut remaining = count;
    let mut k = 0u64;
    while remaining > 0 {
        let inst = generate(task, seed.wrapping_add(k), cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k) ^ 0x5eed_de70);
        let n = per.min(remaining);
        let demos = make_demonstrations(&inst, n, cfg.min_separation, &mut rng);
        remaining -= n;
        k += 1;
        out.push((inst, demos));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SceneConfig {
        SceneConfig {
            scene_points: 1500,
            object_points: 400,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn box_sdf_and_area() {
        let b = Primitive::cuboid(Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.5, 0.5, 0.5));
        assert!((b.sdf(&Vec3::new(1.0, 0.0, 0.0)) + 0.5).abs() < 1e-12);
        assert!((b.sdf(&Vec3::new(2.0, 0.0, 0.0)) - 0.5).abs() < 1e-12);
        assert!((b.area() - 6.0).abs() < 1e-12);
        let c = Primitive::Cylinder {
            pose: RigidTransform::identity(),
            radius: 1.0,
            half_height: 1.0,
        };
        assert!((c.sdf(&Vec3::new(2.0, 0.0, 0.0)) - 1.0).abs() < 1e-12);
        assert!((c.sdf(&Vec3::new(0.0, 0.0, 3.0)) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn samples_lie_on_surface() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inst = generate(TaskKind::MugRack, 3, &cfg()).unwrap();
        for (p, _) in inst.object_shape.sample_surface(500, &mut rng) {
            assert!(inst.object_shape.sdf(&p).abs() < 1e-9);
        }
        let _ = &mut rng;
    }

    #[test]
    fn empty_shelf_has_two_solutions_per_slot() {
        let mut c = cfg();
        c.book_shelf.min_slots = 4;
        c.book_shelf.max_slots = 4;
        c.book_shelf.fill_fraction = 0.0;
        let inst = generate(TaskKind::BookShelf, 11, &c).unwrap();
        assert_eq!(inst.sites.len(), 4);
        assert_eq!(inst.solutions.len(), 8);
        c.book_shelf.fill_fraction = 1.0;
        c.max_retries = 3;
        assert!(matches!(generate(TaskKind::BookShelf, 11, &c), Err(SceneError::Exhausted(3))));
    }

    #[test]
    fn free_region_capacity() {
        assert_eq!(free_region_slots(0.05, 0.03, 0.01), 0);
        assert_eq!(free_region_slots(0.08, 0.03, 0.01), 1);
        assert_eq!(free_region_slots(0.15, 0.03, 0.01), 2);
    }

    #[test]
    fn generation_is_deterministic() {
        for task in TaskKind::ALL {
            let a = generate(task, 5, &cfg()).unwrap();
            let b = generate(task, 5, &cfg()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn single_peg_single_roll() {
        let mut c = cfg();
        c.mug_rack.pegs_per_rack = 1;
        c.mug_rack.roll_discretization = 1;
        let inst = generate(TaskKind::MugRack, 2, &c).unwrap();
        assert_eq!(inst.solutions.len(), 1);
    }

    #[test]
    fn demos_follow_placement() {
        let inst = generate(TaskKind::BookShelf, 4, &cfg()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(make_demonstrations(&inst, 0, 0.001, &mut rng).is_empty());
        for d in make_demonstrations(&inst, 5, 0.001, &mut rng) {
            let expect = inst.object_cloud_canonical.transformed(&d.placement);
            for (a, b) in d.final_object_cloud.points().iter().zip(expect.points()) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn task_names_parse() {
        for t in TaskKind::ALL {
            assert_eq!(t.name().parse::<TaskKind>().unwrap(), t);
        }
        assert!("shelf".parse::<TaskKind>().is_err());
    }
}
