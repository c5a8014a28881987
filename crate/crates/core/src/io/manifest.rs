//! JSON dataset manifest with paths relative to the manifest file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::netpbm::Raster;

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub rgb: Option<PathBuf>,
    /// 8-bit grayscale depth.
    #[serde(default)]
    pub depth: Option<PathBuf>,
    /// Binary object mask (nonzero is object).
    #[serde(default)]
    pub object_mask: Option<PathBuf>,
    /// Instance-index raster (value k is instance k, 0 is background).
    #[serde(default)]
    pub instances: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    /// Whether larger depth values are nearer to the camera.
    #[serde(default = "yes")]
    pub depth_near_is_bright: bool,
    pub samples: Vec<ManifestEntry>,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub root: PathBuf,
}

/// Rasters of one sample; a field is `None` when absent from the manifest or unreadable.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SampleRasters {
    pub name: String,
    pub rgb: Option<Raster>,
    pub depth: Option<Raster>,
    pub object_mask: Option<Raster>,
    pub instances: Option<Raster>,
    /// Read failures, one line per failed raster.
    pub problems: Vec<String>,
}

impl DatasetManifest {
    pub fn from_json(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut m: Self = serde_json::from_str(text)?;
        m.root = root.into();
        for (i, s) in m.samples.iter_mut().enumerate() {
            if s.name.is_empty() {
                s.name = format!("sample_{i}");
            }
        }
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, root)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Reads every listed raster, recording failures instead of aborting.
    pub fn read_all(&self) -> Vec<SampleRasters> {
        self.samples
            .iter()
            .map(|e| {
                let mut s = SampleRasters { name: e.name.clone(), ..Default::default() };
                let mut read = |p: &Option<PathBuf>, what: &str| {
                    let p = p.as_ref()?;
                    match Raster::read(self.resolve(p)) {
                        Ok(r) => Some(r),
                        Err(err) => {
                            s.problems.push(format!("{what}: {err}"));
                            None
                        }
                    }
                };
                let rgb = read(&e.rgb, "rgb");
                let depth = read(&e.depth, "depth");
                let object_mask = read(&e.object_mask, "object_mask");
                let instances = read(&e.instances, "instances");
                SampleRasters { rgb, depth, object_mask, instances, ..s }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_defaults_and_names() {
        let m = DatasetManifest::from_json(r#"{"samples":[{"depth":"d.pgm"},{"name":"x"}]}"#, "/data").unwrap();
        assert!(m.depth_near_is_bright);
        assert_eq!(m.samples[0].name, "sample_0");
        assert_eq!(m.samples[1].name, "x");
        assert_eq!(m.resolve(Path::new("d.pgm")), PathBuf::from("/data/d.pgm"));
        assert!(DatasetManifest::from_json(r#"{"samples":[{"colour":"a"}]}"#, ".").is_err());
    }

    #[test]
    fn relative_paths_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("d")).unwrap();
        Raster::gray(2, 2, vec![0, 1, 2, 3]).unwrap().write(dir.path().join("d/a.pgm")).unwrap();
        let text = r#"{"depth_near_is_bright":false,"samples":[{"name":"a","depth":"d/a.pgm","object_mask":"nope.pgm"}]}"#;
        std::fs::write(dir.path().join("m.json"), text).unwrap();
        let m = DatasetManifest::load(dir.path().join("m.json")).unwrap();
        assert!(!m.depth_near_is_bright);
        let s = &m.read_all()[0];
        assert_eq!(s.depth.as_ref().unwrap().data, vec![0, 1, 2, 3]);
        assert!(s.object_mask.is_none() && s.instances.is_none());
        assert_eq!(s.problems.len(), 1);
        assert!(s.problems[0].starts_with("object_mask"));
    }
}
