use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_landmark_file, Label, LandmarkSequence};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: String,
    pub subject: String,
    pub label: Label,
    pub fps: f64,
    pub path: String,
}

/// Video index: `{"videos":[{"id","subject","label","fps","path"}]}`.
///
/// Relative paths resolve against `base_dir`, which [`DatasetManifest::load`]
/// sets to the manifest's own directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub videos: Vec<VideoRecord>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(videos: Vec<VideoRecord>) -> Result<Self> {
        let m = Self {
            videos,
            base_dir: PathBuf::new(),
        };
        m.check_unique_ids()?;
        Ok(m)
    }

    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut m: DatasetManifest = serde_json::from_str(text)?;
        m.base_dir = base_dir.to_path_buf();
        m.check_unique_ids()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, &base)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    fn check_unique_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for v in &self.videos {
            if !seen.insert(v.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate video id `{}`", v.id)));
            }
            if !(v.fps > 0.0) {
                return Err(Error::Manifest(format!(
                    "video `{}` has non-positive fps",
                    v.id
                )));
            }
        }
        Ok(())
    }

    pub fn subjects(&self) -> BTreeSet<&str> {
        self.videos.iter().map(|v| v.subject.as_str()).collect()
    }

    pub fn resolve(&self, record: &VideoRecord) -> PathBuf {
        let p = Path::new(&record.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn get(&self, id: &str) -> Option<&VideoRecord> {
        self.videos.iter().find(|v| v.id == id)
    }

    /// Reads one video and attaches its manifest metadata.
    pub fn load_video(&self, record: &VideoRecord) -> Result<LandmarkSequence> {
        let path = self.resolve(record);
        if !path.exists() {
            return Err(Error::Manifest(format!(
                "video `{}` path {} does not exist",
                record.id,
                path.display()
            )));
        }
        let mut seq = read_landmark_file(&path)?;
        seq.video_id = record.id.clone();
        seq.subject_id = record.subject.clone();
        seq.label = record.label;
        Ok(seq)
    }

    /// Reads every video in manifest order.
    pub fn load_all(&self) -> Result<Vec<LandmarkSequence>> {
        self.videos.iter().map(|r| self.load_video(r)).collect()
    }
}
