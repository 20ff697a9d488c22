use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArticulatedModel, Joint, JointKind, KinematicError, KinematicTree};
use crate::cloud::{read_apc_file, write_apc_file};
use crate::se3::Vec3;

/// One tree edge of the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub parent: usize,
    pub child: usize,
    pub kind: JointKind,
    pub axis: [f64; 3],
    pub pivot: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<[f64; 2]>,
}

/// `model.json`. Part files are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    #[serde(rename = "K")]
    pub k: usize,
    pub root: usize,
    pub edges: Vec<EdgeRecord>,
    pub assembly: Vec<[f64; 3]>,
    pub part_files: Vec<String>,
}

impl ModelManifest {
    pub fn from_model(model: &ArticulatedModel) -> Self {
        let edges = model
            .joints()
            .map(|j| EdgeRecord {
                parent: j.parent,
                child: j.child,
                kind: j.kind,
                axis: j.axis.into(),
                pivot: j.pivot.into(),
                limits: j.limits,
            })
            .collect();
        ModelManifest {
            k: model.num_parts(),
            root: model.tree().root(),
            edges,
            assembly: model.assembly().iter().map(|p| (*p).into()).collect(),
            part_files: (0..model.num_parts()).map(|i| format!("part_{i}.apc")).collect(),
        }
    }
}

/// Writes `dir/model.json` and one point-cloud file per part.
pub fn save_model(model: &ArticulatedModel, dir: impl AsRef<Path>) -> Result<(), KinematicError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let manifest = ModelManifest::from_model(model);
    for (part, file) in model.parts().iter().zip(&manifest.part_files) {
        write_apc_file(part, dir.join(file))?;
    }
    fs::write(dir.join("model.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Reads a model written by [`save_model`]; `path` is the manifest or its
/// directory.
pub fn load_model(path: impl AsRef<Path>) -> Result<ArticulatedModel, KinematicError> {
    let path = path.as_ref();
    let manifest_path = if path.is_dir() { path.join("model.json") } else { path.to_path_buf() };
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let manifest: ModelManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    if manifest.part_files.len() != manifest.k || manifest.assembly.len() != manifest.k {
        return Err(KinematicError::InvalidModel(format!(
            "K = {} but {} part files and {} assembly offsets",
            manifest.k,
            manifest.part_files.len(),
            manifest.assembly.len()
        )));
    }
    let parts = manifest
        .part_files
        .iter()
        .map(|f| read_apc_file(dir.join(f)))
        .collect::<Result<Vec<_>, _>>()?;
    let pairs: Vec<(usize, usize)> = manifest.edges.iter().map(|e| (e.parent, e.child)).collect();
    let tree = KinematicTree::from_edges(manifest.k, manifest.root, &pairs)?;
    let joints = manifest
        .edges
        .iter()
        .map(|e| {
            let joint = match e.kind {
                JointKind::Revolute => Joint::revolute(e.parent, e.child, Vec3::from(e.axis), Vec3::from(e.pivot)),
                JointKind::Prismatic => Joint::prismatic(e.parent, e.child, Vec3::from(e.axis)),
            }?;
            Ok(Joint { limits: e.limits, ..joint })
        })
        .collect::<Result<Vec<_>, KinematicError>>()?;
    ArticulatedModel::new(parts, manifest.assembly.iter().map(|p| Vec3::from(*p)).collect(), tree, joints)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::PointCloud;

    #[test]
    fn model_round_trips_through_files() {
        let parts = vec![
            PointCloud::new(vec![Vec3::new(0.1, 0.2, 0.3), Vec3::new(-0.1, 0.0, 0.05)]).unwrap(),
            PointCloud::new(vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.3, 0.1, -0.2)]).unwrap(),
            PointCloud::new(vec![Vec3::new(1.0 / 3.0, 0.0, 0.0)]).unwrap(),
        ];
        let tree = KinematicTree::from_edges(3, 0, &[(0, 1), (0, 2)]).unwrap();
        let joints = vec![
            Joint::revolute(0, 1, Vec3::y(), Vec3::new(0.2, 0.0, 0.0)).unwrap().with_limits(0.1, 1.7),
            Joint::prismatic(0, 2, Vec3::new(1.0, 1.0, 0.0)).unwrap(),
        ];
        let model = ArticulatedModel::new(parts, vec![Vec3::zeros(), Vec3::x(), Vec3::new(0.0, 0.5, 0.0)], tree, joints).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_model(&model, dir.path()).unwrap();
        let back = load_model(dir.path()).unwrap();
        assert_eq!(back, model);
        let text = fs::read_to_string(dir.path().join("model.json")).unwrap();
        assert!(text.contains("\"K\": 3"));
    }
}
