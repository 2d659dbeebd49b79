//! On-disk layout of synthesized datasets.
//!
//! ```text
//! <root>/manifest.json
//! <root>/instance_00000/{scene.ply, object.ply, solutions.json, meta.json, demos.json}
//! ```
//! Everything is a pure function of the generator config and seed, so two
//! runs with the same inputs produce identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cloud::{CloudRole, PointCloud};
use crate::geometry::RigidTransform;
use crate::scenegen::{Demonstration, InstanceMeta, SceneConfig, SceneInstance, Solution, TaskKind};

use super::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT: &str = "rpdiff-dataset";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceEntry {
    pub dir: String,
    pub seed: u64,
    pub solutions: usize,
    pub demos: usize,
    /// SHA-256 per file name.
    pub hashes: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub task: TaskKind,
    pub seed: u64,
    pub demos_per_instance: usize,
    pub scene: SceneConfig,
    pub instances: Vec<InstanceEntry>,
}

impl DatasetManifest {
    pub fn demo_count(&self) -> usize {
        self.instances.iter().map(|i| i.demos).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct DemoRecord {
    placement: RigidTransform,
    solution: usize,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write(dir: &Path, name: &str, bytes: &[u8], hashes: &mut Vec<(String, String)>) -> Result<(), CliError> {
    fs::write(dir.join(name), bytes).map_err(|e| CliError::io(dir.join(name), e))?;
    hashes.push((name.to_string(), sha256_hex(bytes)));
    Ok(())
}

fn json<S: Serialize>(v: &S) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serialisable");
    s.push('\n');
    s.into_bytes()
}

/// Writes one instance directory and returns its manifest entry.
pub fn write_instance(dir: &Path, inst: &SceneInstance, demos: &[Demonstration]) -> Result<Vec<(String, String)>, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut hashes = Vec::new();
    write(dir, "scene.ply", inst.scene_cloud.to_ply_string().as_bytes(), &mut hashes)?;
    write(dir, "object.ply", inst.object_cloud_canonical.to_ply_string().as_bytes(), &mut hashes)?;
    write(dir, "solutions.json", &json(&inst.solutions), &mut hashes)?;
    write(dir, "meta.json", &json(&inst.meta()), &mut hashes)?;
    let records: Vec<DemoRecord> = demos
        .iter()
        .map(|d| DemoRecord {
            placement: d.placement,
            solution: d.solution,
        })
        .collect();
    write(dir, "demos.json", &json(&records), &mut hashes)?;
    Ok(hashes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_cloud(path: &Path, role: CloudRole) -> Result<PointCloud, CliError> {
    PointCloud::read_ply(path, role).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Loads an instance directory together with its demonstrations.
pub fn read_instance(dir: &Path) -> Result<(SceneInstance, Vec<Demonstration>), CliError> {
    let meta: InstanceMeta = read_json(&dir.join("meta.json"))?;
    let solutions: Vec<Solution> = read_json(&dir.join("solutions.json"))?;
    let scene = read_cloud(&dir.join("scene.ply"), CloudRole::Scene)?;
    let object = read_cloud(&dir.join("object.ply"), CloudRole::Object)?;
    let demos_path = dir.join("demos.json");
    let records: Vec<DemoRecord> = if demos_path.exists() { read_json(&demos_path)? } else { Vec::new() };
    let inst = SceneInstance::from_parts(meta, scene, object, solutions);
    let demos = records
        .into_iter()
        .map(|r| {
            if r.solution >= inst.solutions.len() {
                return Err(CliError::Data(format!("{}: demo refers to a missing solution", dir.display())));
            }
            Ok(Demonstration {
                scene_cloud: inst.scene_cloud.clone(),
                final_object_cloud: inst.object_cloud_canonical.transformed(&r.placement),
                placement: r.placement,
                solution: r.solution,
                symmetry: inst.object.shape_symmetry(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((inst, demos))
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest, CliError> {
    let path = root.join(MANIFEST);
    if !path.exists() {
        return Err(CliError::Data(format!("no dataset at {} (missing {MANIFEST})", root.display())));
    }
    let m: DatasetManifest = read_json(&path)?;
    if m.format != FORMAT {
        return Err(CliError::Data(format!("{}: not a dataset manifest", path.display())));
    }
    Ok(m)
}

/// Loads every instance listed in the manifest at `root`.
pub fn load_dataset(root: &Path) -> Result<(DatasetManifest, Vec<(SceneInstance, Vec<Demonstration>)>), CliError> {
    let m = read_manifest(root)?;
    let items = m
        .instances
        .iter()
        .map(|e| read_instance(&root.join(&e.dir)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((m, items))
}

pub fn instance_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("instance_{index:05}"))
}

/// Writes a whole dataset, replacing any previous manifest.
pub fn write_dataset(
    root: &Path,
    task: TaskKind,
    seed: u64,
    per_instance: usize,
    scene: &SceneConfig,
    sets: &[(SceneInstance, Vec<Demonstration>)],
) -> Result<DatasetManifest, CliError> {
    fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
    let mut instances = Vec::with_capacity(sets.len());
    for (i, (inst, demos)) in sets.iter().enumerate() {
        let dir = instance_dir(root, i);
        let hashes = write_instance(&dir, inst, demos)?;
        instances.push(InstanceEntry {
            dir: dir.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            seed: inst.seed,
            solutions: inst.solutions.len(),
            demos: demos.len(),
            hashes,
        });
    }
    let m = DatasetManifest {
        format: FORMAT.into(),
        task,
        seed,
        demos_per_instance: per_instance,
        scene: scene.clone(),
        instances,
    };
    fs::write(root.join(MANIFEST), json(&m)).map_err(|e| CliError::io(root.join(MANIFEST), e))?;
    Ok(m)
}
