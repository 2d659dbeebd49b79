//! Point-cloud container, sampling, normalisation, chamfer distance and the
//! timestep-dependent local scene crop.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{RigidTransform, Vec3};

#[derive(Debug, thiserror::Error)]
pub enum CloudError {
    #[error("point cloud is empty")]
    Empty,
    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),
    #[error("invalid crop schedule: {0}")]
    InvalidSchedule(String),
    #[error("malformed PLY: {0}")]
    Ply(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudRole {
    Object,
    Scene,
}

impl CloudRole {
    /// Infers the role from the `*.object.ply` / `*.scene.ply` convention
    /// (bare `object.ply` / `scene.ply` also accepted).
    pub fn from_path(path: &Path) -> Option<CloudRole> {
        let name = path.file_name()?.to_str()?;
        if name == "object.ply" || name.ends_with(".object.ply") {
            Some(CloudRole::Object)
        } else if name == "scene.ply" || name.ends_with(".scene.ply") {
            Some(CloudRole::Scene)
        } else {
            None
        }
    }
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn from_center_side(center: Vec3, side: f64) -> Self {
        let h = Vec3::repeat(0.5 * side);
        Aabb {
            min: center - h,
            max: center + h,
        }
    }

    pub fn extents(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        0.5 * (self.min + self.max)
    }

    pub fn max_extent(&self) -> f64 {
        self.extents().max()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    /// Grows each axis by `fraction` of its extent (half on each side).
    pub fn inflated(&self, fraction: f64) -> Self {
        let pad = self.extents() * (0.5 * fraction);
        Aabb {
            min: self.min - pad,
            max: self.max + pad,
        }
    }
}

/// Ordered, non-empty set of finite 3D points tagged with a role.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    role: CloudRole,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, role: CloudRole) -> Result<Self, CloudError> {
        if points.is_empty() {
            return Err(CloudError::Empty);
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(CloudError::NonFinite(i));
        }
        Ok(PointCloud { points, role })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vec3> {
        self.points
    }

    pub fn role(&self) -> CloudRole {
        self.role
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        self.points.iter().sum::<Vec3>() / self.points.len() as f64
    }

    pub fn bounds(&self) -> Aabb {
        let mut min = self.points[0];
        let mut max = self.points[0];
        for p in &self.points[1..] {
            min = min.inf(p);
            max = max.sup(p);
        }
        Aabb { min, max }
    }

    /// Applies a world-frame transform to every point.
    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.apply_point(p)).collect(),
            role: self.role,
        }
    }

    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            role: self.role,
        }
    }

    pub fn with_role(mut self, role: CloudRole) -> PointCloud {
        self.role = role;
        self
    }

    /// ASCII PLY with `x y z` double vertex properties.
    pub fn to_ply_string(&self) -> String {
        let mut s = String::new();
        s.push_str("ply\nformat ascii 1.0\n");
        let _ = writeln!(s, "element vertex {}", self.points.len());
        s.push_str("property double x\nproperty double y\nproperty double z\nend_header\n");
        for p in &self.points {
            let _ = writeln!(s, "{:?} {:?} {:?}", p.x, p.y, p.z);
        }
        s
    }

    pub fn from_ply_str(text: &str, role: CloudRole) -> Result<Self, CloudError> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("ply") {
            return Err(CloudError::Ply("missing magic".into()));
        }
        let mut count = None;
        let mut props = Vec::new();
        let mut in_vertex = false;
        loop {
            let line = lines.next().ok_or_else(|| CloudError::Ply("missing end_header".into()))?.trim();
            let words: Vec<&str> = line.split_whitespace().collect();
            match words.as_slice() {
                ["end_header"] => break,
                ["format", fmt, _] if *fmt != "ascii" => {
                    return Err(CloudError::Ply(format!("unsupported format {fmt}")))
                }
                ["element", "vertex", n] => {
                    count = Some(n.parse::<usize>().map_err(|e| CloudError::Ply(e.to_string()))?);
                    in_vertex = true;
                }
                ["element", ..] => in_vertex = false,
                ["property", _, name] if in_vertex => props.push(name.to_string()),
                _ => {}
            }
        }
        let count = count.ok_or_else(|| CloudError::Ply("no vertex element".into()))?;
        let idx = |axis: &str| {
            props
                .iter()
                .position(|p| p == axis)
                .ok_or_else(|| CloudError::Ply(format!("missing property {axis}")))
        };
        let (ix, iy, iz) = (idx("x")?, idx("y")?, idx("z")?);
        let mut points = Vec::with_capacity(count);
        for _ in 0..count {
            let line = lines.next().ok_or_else(|| CloudError::Ply("truncated vertex list".into()))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e: std::num::ParseFloatError| CloudError::Ply(e.to_string()))?;
            if vals.len() < props.len() {
                return Err(CloudError::Ply("short vertex row".into()));
            }
            points.push(Vec3::new(vals[ix], vals[iy], vals[iz]));
        }
        PointCloud::new(points, role)
    }

    pub fn write_ply(&self, path: &Path) -> Result<(), CloudError> {
        std::fs::write(path, self.to_ply_string())?;
        Ok(())
    }

    /// Reads a PLY file; the role comes from the file name, or `fallback`.
    pub fn read_ply(path: &Path, fallback: CloudRole) -> Result<Self, CloudError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_ply_str(&text, CloudRole::from_path(path).unwrap_or(fallback))
    }

    pub fn to_json_array(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| [p.x, p.y, p.z]).collect()
    }

    pub fn from_json_array(rows: &[[f64; 3]], role: CloudRole) -> Result<Self, CloudError> {
        PointCloud::new(rows.iter().map(|r| Vec3::new(r[0], r[1], r[2])).collect(), role)
    }
}

/// Greedy farthest-point subsampling starting from a random point.
pub fn farthest_point_sample<R: Rng + ?Sized>(cloud: &PointCloud, n: usize, rng: &mut R) -> PointCloud {
    if n >= cloud.len() {
        return cloud.clone();
    }
    let start = rng.random_range(0..cloud.len());
    farthest_point_sample_from(cloud, n, start)
}

/// Farthest-point subsampling from a fixed start index. Ties are broken by
/// the lowest index, so the result is fully deterministic.
pub fn farthest_point_sample_from(cloud: &PointCloud, n: usize, start: usize) -> PointCloud {
    if n >= cloud.len() {
        return cloud.clone();
    }
    cloud.select(&farthest_point_indices(cloud.points(), n.max(1), start))
}

pub(crate) fn farthest_point_indices(points: &[Vec3], n: usize, start: usize) -> Vec<usize> {
    let mut chosen = Vec::with_capacity(n);
    let mut dist = vec![f64::INFINITY; points.len()];
    let mut current = start;
    for _ in 0..n {
        chosen.push(current);
        let c = points[current];
        let mut best = 0;
        let mut best_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            let d = (p - c).norm_squared();
            if d < dist[i] {
                dist[i] = d;
            }
            if dist[i] > best_d {
                best_d = dist[i];
                best = i;
            }
        }
        current = best;
    }
    chosen
}

/// Shift-and-scale that maps the scene to a unit bounding box about its centroid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationFrame {
    pub centroid: Vec3,
    /// Per-axis scale in 1/m (reciprocal of the scene extent).
    pub scale: Vec3,
}

impl NormalizationFrame {
    pub fn from_scene(scene: &PointCloud) -> Self {
        let ext = scene.bounds().extents();
        NormalizationFrame {
            centroid: scene.centroid(),
            scale: ext.map(|e| if e > 1e-12 { 1.0 / e } else { 1.0 }),
        }
    }

    /// Like [`from_scene`](Self::from_scene) but no axis extent is taken
    /// below `min_extent`, so tiny crops are not blown up.
    pub fn from_scene_with_floor(scene: &PointCloud, min_extent: f64) -> Self {
        let ext = scene.bounds().extents();
        NormalizationFrame {
            centroid: scene.centroid(),
            scale: ext.map(|e| {
                let e = e.max(min_extent);
                if e > 1e-12 {
                    1.0 / e
                } else {
                    1.0
                }
            }),
        }
    }

    pub fn forward(&self, p: &Vec3) -> Vec3 {
        (p - self.centroid).component_mul(&self.scale)
    }

    pub fn inverse(&self, q: &Vec3) -> Vec3 {
        q.component_div(&self.scale) + self.centroid
    }

    /// Converts a displacement in normalised units back to metres.
    pub fn displacement_to_world(&self, d: &Vec3) -> Vec3 {
        d.component_div(&self.scale)
    }

    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud {
            points: cloud.points.iter().map(|p| self.forward(p)).collect(),
            role: cloud.role,
        }
    }

    pub fn invert(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud {
            points: cloud.points.iter().map(|p| self.inverse(p)).collect(),
            role: cloud.role,
        }
    }
}

/// Normalises both clouds with the frame derived from the scene.
pub fn normalize_pair(object: &PointCloud, scene: &PointCloud) -> (PointCloud, PointCloud, NormalizationFrame) {
    let frame = NormalizationFrame::from_scene(scene);
    (frame.apply(object), frame.apply(scene), frame)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropMode {
    Fixed,
    Varying,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropSchedule {
    pub l_min: f64,
    pub l_max: f64,
    pub mode: CropMode,
}

/// Default minimum crop side, metres.
pub const DEFAULT_CROP_MIN: f64 = 0.18;

impl CropSchedule {
    pub fn new(l_min: f64, l_max: f64, mode: CropMode) -> Result<Self, CloudError> {
        let s = CropSchedule { l_min, l_max, mode };
        s.validate()?;
        Ok(s)
    }

    /// Varying schedule with `l_max` set to the scene's largest extent.
    pub fn for_scene(scene: &PointCloud, l_min: f64, mode: CropMode) -> Self {
        CropSchedule {
            l_min,
            l_max: scene.bounds().max_extent().max(l_min),
            mode,
        }
    }

    pub fn validate(&self) -> Result<(), CloudError> {
        if !(self.l_min > 0.0 && self.l_min <= self.l_max && self.l_max.is_finite()) {
            return Err(CloudError::InvalidSchedule(format!(
                "need 0 < l_min <= l_max, got {} / {}",
                self.l_min, self.l_max
            )));
        }
        Ok(())
    }

    /// Crop box side at timestep `t` of `steps`; larger timesteps crop wider.
    pub fn side(&self, t: usize, steps: usize) -> f64 {
        match self.mode {
            CropMode::Fixed => self.l_min,
            CropMode::Varying => {
                let frac = if steps == 0 {
                    1.0
                } else {
                    (t.min(steps)) as f64 / steps as f64
                };
                self.l_min + (self.l_max - self.l_min) * frac
            }
        }
    }
}

/// Scene points inside the axis-aligned box of the scheduled side centred at
/// the object centroid. An empty box yields the single nearest scene point.
pub fn crop_scene(object: &PointCloud, scene: &PointCloud, t: usize, steps: usize, sched: &CropSchedule) -> PointCloud {
    crop_scene_with_box(object, scene, t, steps, sched).0
}

pub fn crop_scene_with_box(
    object: &PointCloud,
    scene: &PointCloud,
    t: usize,
    steps: usize,
    sched: &CropSchedule,
) -> (PointCloud, Aabb) {
    let center = object.centroid();
    let bx = Aabb::from_center_side(center, sched.side(t, steps));
    let inside: Vec<Vec3> = scene.points.iter().filter(|p| bx.contains(p)).copied().collect();
    if !inside.is_empty() {
        return (
            PointCloud {
                points: inside,
                role: CloudRole::Scene,
            },
            bx,
        );
    }
    let nearest = scene
        .points
        .iter()
        .min_by(|a, b| (*a - center).norm_squared().total_cmp(&(*b - center).norm_squared()))
        .copied()
        .unwrap_or(center);
    (
        PointCloud {
            points: vec![nearest],
            role: CloudRole::Scene,
        },
        bx,
    )
}

/// Mean of squared nearest-neighbour distances from every point of `a` to `b`.
pub fn one_sided_chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
    let mut total = 0.0;
    for p in a {
        let mut best = f64::INFINITY;
        for q in b {
            let d = (p - q).norm_squared();
            if d < best {
                best = d;
            }
        }
        total += best;
    }
    total / a.len() as f64
}

/// Symmetric chamfer distance: the average of the two one-sided mean squared
/// nearest-neighbour distances, m².
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> f64 {
    0.5 * (one_sided_chamfer(&a.points, &b.points) + one_sided_chamfer(&b.points, &a.points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obj(points: Vec<Vec3>) -> PointCloud {
        PointCloud::new(points, CloudRole::Object).unwrap()
    }

    fn cube_corners(half: f64, center: Vec3) -> Vec<Vec3> {
        let mut v = Vec::new();
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    v.push(center + Vec3::new(sx, sy, sz) * half);
                }
            }
        }
        v
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(matches!(PointCloud::new(vec![], CloudRole::Scene), Err(CloudError::Empty)));
        assert!(matches!(
            PointCloud::new(vec![Vec3::new(0.0, f64::NAN, 0.0)], CloudRole::Scene),
            Err(CloudError::NonFinite(0))
        ));
    }

    #[test]
    fn fps_examples() {
        let pts = vec![
            Vec3::new(0.5, 0.5, 0.0),
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ];
        let c = obj(pts.clone());
        for start in 1..5 {
            let s = farthest_point_sample_from(&c, 4, start);
            let mut idx: Vec<_> = s.points().iter().map(|p| pts.iter().position(|q| q == p).unwrap()).collect();
            idx.sort();
            assert_eq!(idx, vec![1, 2, 3, 4]);
        }
        assert_eq!(farthest_point_sample_from(&c, 1, 3).points(), &[pts[3]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(farthest_point_sample(&c, 10, &mut rng), c);
    }

    #[test]
    fn normalize_examples() {
        let o = obj(vec![Vec3::new(0.1, 0.2, 0.3)]);
        let unit = PointCloud::new(cube_corners(0.5, Vec3::zeros()), CloudRole::Scene).unwrap();
        let (_, s, _) = normalize_pair(&o, &unit);
        for (a, b) in s.points().iter().zip(unit.points()) {
            assert!((a - b).norm() < 1e-9);
        }
        let big = PointCloud::new(cube_corners(1.0, Vec3::new(5.0, 0.0, 0.0)), CloudRole::Scene).unwrap();
        let (_, s, frame) = normalize_pair(&o, &big);
        for (a, b) in s.points().iter().zip(unit.points()) {
            assert!((a - b).norm() < 1e-9);
        }
        let back = frame.invert(&s);
        for (a, b) in back.points().iter().zip(big.points()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn flat_scene_axis_scale_is_one() {
        let flat = PointCloud::new(
            vec![Vec3::new(0.0, 0.0, 1.0), Vec3::new(2.0, 0.0, 1.0), Vec3::new(0.0, 4.0, 1.0)],
            CloudRole::Scene,
        )
        .unwrap();
        let f = NormalizationFrame::from_scene(&flat);
        assert_eq!(f.scale, Vec3::new(0.5, 0.25, 1.0));
    }

    #[test]
    fn crop_examples() {
        let sched = CropSchedule::new(0.18, 1.2, CropMode::Varying).unwrap();
        assert_eq!(sched.side(5, 5), 1.2);
        assert_eq!(sched.side(0, 5), 0.18);
        let fixed = CropSchedule { mode: CropMode::Fixed, ..sched };
        assert_eq!(fixed.side(5, 5), 0.18);

        let scene = PointCloud::new(cube_corners(0.5, Vec3::zeros()), CloudRole::Scene).unwrap();
        let o = obj(vec![Vec3::new(-0.01, 0.0, 0.0), Vec3::new(0.01, 0.0, 0.0)]);
        let s = CropSchedule::new(0.9, 0.9, CropMode::Fixed).unwrap();
        let c = crop_scene(&o, &scene, 3, 5, &s);
        assert_eq!(c.len(), 1);
        assert!(scene.points().contains(&c.points()[0]));
        let wide = CropSchedule::new(1.0, 1.0, CropMode::Fixed).unwrap();
        assert_eq!(crop_scene(&o, &scene, 3, 5, &wide).len(), 8);
        assert!(CropSchedule::new(0.0, 1.0, CropMode::Fixed).is_err());
        assert!(CropSchedule::new(2.0, 1.0, CropMode::Fixed).is_err());
    }

    #[test]
    fn chamfer_examples() {
        let a = obj(vec![Vec3::zeros()]);
        let b = obj(vec![Vec3::new(1.0, 0.0, 0.0)]);
        assert_eq!(chamfer_distance(&a, &b), 1.0);
        assert_eq!(one_sided_chamfer(a.points(), b.points()), 1.0);
        assert_eq!(chamfer_distance(&a, &a), 0.0);
    }

    #[test]
    fn ply_roundtrip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Vec3> = (0..20).map(|_| crate::geometry::gaussian_vec3(&mut rng)).collect();
        let c = obj(pts);
        let text = c.to_ply_string();
        let back = PointCloud::from_ply_str(&text, CloudRole::Object).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_ply_string(), text);
        assert!(PointCloud::from_ply_str("ply\nend_header\n", CloudRole::Object).is_err());
    }

    #[test]
    fn role_from_filename() {
        assert_eq!(CloudRole::from_path(Path::new("a/x.object.ply")), Some(CloudRole::Object));
        assert_eq!(CloudRole::from_path(Path::new("scene.ply")), Some(CloudRole::Scene));
        assert_eq!(CloudRole::from_path(Path::new("foo.ply")), None);
    }
}
