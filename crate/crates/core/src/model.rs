//! Self-describing model file: JSON with an explicit format version.
//! Posterior counts are integers and weights round-trip losslessly through
//! the shortest-representation float encoding, so a saved model scores
//! identically after reload.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gdm::{GdmModel, LearnerState};
use crate::imaging::BoundingBox;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A hard sample awaiting the next retrain, persisted by reference so a
/// checkpointed learner can resume mid-batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendingHard {
    pub frame_index: usize,
    pub bbox: BoundingBox,
    pub fern_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub config: RunConfig,
    pub seeds: Vec<BoundingBox>,
    pub model: GdmModel<f64>,
    pub state: LearnerState<f64>,
    #[serde(default)]
    pub pending_hard: Vec<PendingHard>,
}

impl ModelFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::ModelFormat(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ModelFile> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text)
            .map_err(|e| Error::ModelFormat(format!("{path:?}: {e}")))?;
        if file.version != MODEL_FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported model format version {} (expected {})",
                file.version, MODEL_FORMAT_VERSION
            )));
        }
        Ok(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gdm::init_model;
    use crate::imaging::{Frame, Patch};

    fn small_model() -> ModelFile {
        let cfg = RunConfig {
            n_selectors: 3,
            m_candidates: 2,
            fern_bits: 4,
            warps_per_seed: 4,
            ..RunConfig::default()
        };
        let pixels: Vec<u8> = (0..100 * 100).map(|i| (i * 37 % 256) as u8).collect();
        let frame = Frame::new(100, 100, pixels, 0);
        let seeds = vec![BoundingBox::new(20, 20, 24, 24)];
        let model = init_model::<f64>(&cfg, &frame, &seeds).unwrap();
        ModelFile {
            version: MODEL_FORMAT_VERSION,
            config: cfg,
            seeds,
            model,
            state: LearnerState::fresh(),
            pending_hard: Vec::new(),
        }
    }

    #[test]
    fn round_trip_reproduces_scores() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let file = small_model();
        file.save(&path).unwrap();
        let back = ModelFile::load(&path).unwrap();
        assert_eq!(file, back);
        let patch = Patch::new(32, (0..1024).map(|i| (i * 13 % 251) as u8).collect());
        assert_eq!(file.model.osf.score(&patch), back.model.osf.score(&patch));
        let hog = Patch::new(64, (0..4096).map(|i| (i * 7 % 253) as u8).collect());
        let a = file.model.hybrid_classify(&patch, &hog).unwrap();
        let b = back.model.hybrid_classify(&patch, &hog).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut file = small_model();
        file.version = 99;
        let json = serde_json::to_string(&file).unwrap();
        std::fs::write(&path, json).unwrap();
        assert!(matches!(
            ModelFile::load(&path),
            Err(Error::ModelFormat(_))
        ));
    }
}
