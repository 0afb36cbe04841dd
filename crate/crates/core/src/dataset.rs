//! On-disk datasets: a JSON manifest plus per-shape sample, mesh and label
//! files. Shapes themselves are regenerated from the family spec and seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::evaluation::{extract_mesh, write_labels, ShapeOracle};
use crate::geometry::{make_dataset, occs, sample_batch, FamilySpec, LabeledShape};
use crate::rng::derive_seed;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub families: String,
    pub count: usize,
    pub seed: u64,
    /// Query points stored per shape.
    pub n_query: usize,
    pub noise_sigma: f64,
    pub pad_fraction: f64,
    /// Grid resolution of the ground-truth meshes.
    pub mesh_resolution: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            families: "spheres,dumbbell,table,cross".into(),
            count: 40,
            seed: 0,
            n_query: 10_000,
            noise_sigma: 0.05,
            pad_fraction: 0.1,
            mesh_resolution: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub class_label: u16,
    pub family: String,
    pub sample_file: String,
    pub mesh_file: String,
    pub labels_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub config: GenConfig,
    pub n_classes: usize,
    pub n_parts: u16,
    pub shapes: Vec<ManifestEntry>,
}

/// A loaded dataset: manifest and regenerated shapes, in manifest order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub shapes: Vec<LabeledShape>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Generate the shapes of `cfg` and write them under `dir`. Output is a
/// pure function of `cfg`.
pub fn generate(dir: &Path, cfg: &GenConfig) -> Result<Manifest> {
    let spec: FamilySpec = cfg.families.parse()?;
    if cfg.n_query == 0 || cfg.mesh_resolution < 8 {
        return Err(Error::Config("n_query must be positive and mesh_resolution at least 8".into()));
    }
    let count = spec.explicit_total().unwrap_or(cfg.count);
    if count == 0 {
        return Err(Error::Config("count must be positive".into()));
    }
    let shapes = make_dataset(&spec, count, cfg.seed)?;
    let families = spec.families();
    for sub in ["samples", "meshes"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut entries = Vec::with_capacity(shapes.len());
    for (i, shape) in shapes.iter().enumerate() {
        let family = families[shape.class_label() as usize];
        let id = format!("{}-{i:04}", family.name());
        let entry = ManifestEntry {
            class_label: shape.class_label(),
            family: family.name().to_string(),
            sample_file: format!("samples/{id}.occs"),
            mesh_file: format!("meshes/{id}.off"),
            labels_file: format!("meshes/{id}.labels"),
            id,
        };
        let pad = cfg.pad_fraction * shape.bbox().diagonal();
        let seed = derive_seed(cfg.seed, &[0xDA7A, i as u64]);
        let batch = sample_batch(shape, cfg.n_query, pad, cfg.noise_sigma, seed);
        write_file(&dir.join(&entry.sample_file), &occs::encode(&batch)?)?;

        let domain = shape.bbox().padded(pad);
        let cell = domain.extent().iter().copied().fold(f64::INFINITY, f64::min) / (cfg.mesh_resolution - 1) as f64;
        let oracle = ShapeOracle {
            shape,
            sharpness: 1.0 / cell,
        };
        let extracted = extract_mesh(&oracle, domain, cfg.mesh_resolution, 0.5)?;
        extracted.mesh.write_off(dir.join(&entry.mesh_file))?;
        let labels = extracted
            .mesh
            .vertices
            .iter()
            .map(|&v| shape.nearest_vertex_label(v))
            .collect::<Result<Vec<_>>>()?;
        write_labels(dir.join(&entry.labels_file), &labels)?;
        entries.push(entry);
    }
    let manifest = Manifest {
        config: cfg.clone(),
        n_classes: spec.n_classes(),
        n_parts: spec.max_parts(),
        shapes: entries,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    write_file(&dir.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(manifest)
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Dataset> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.clone(),
            msg: e.to_string(),
        })?;
        let spec: FamilySpec = manifest.config.families.parse()?;
        let count = spec.explicit_total().unwrap_or(manifest.config.count);
        let shapes = make_dataset(&spec, count, manifest.config.seed)?;
        let consistent = shapes.len() == manifest.shapes.len()
            && shapes
                .iter()
                .zip(&manifest.shapes)
                .all(|(s, e)| s.class_label() == e.class_label);
        if !consistent {
            return Err(Error::Format {
                path,
                msg: "manifest entries do not match the regenerated shapes".into(),
            });
        }
        Ok(Dataset {
            root: dir.to_path_buf(),
            manifest,
            shapes,
        })
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.manifest.shapes.iter().map(|e| e.id.clone()).collect()
    }

    pub fn find(&self, id: &str) -> Option<usize> {
        self.manifest.shapes.iter().position(|e| e.id == id)
    }

    pub fn path(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }
}
