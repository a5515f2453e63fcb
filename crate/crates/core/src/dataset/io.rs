use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Label, LabeledSequence, SplitSpec, YawnAnnotation};
use crate::error::{Error, Result};
use crate::framing;
use crate::simulator::CropRect;

/// One recording in a dataset manifest. Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub clip_id: String,
    pub subject_id: String,
    /// Binary event file for the clip.
    pub events: String,
    /// Face region applied before simulation, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<CropRect>,
    /// End of the recording in microseconds; defaults to one past the last event.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_us: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub clips: Vec<ClipEntry>,
    /// Annotation CSV path.
    pub annotations: String,
    pub split: SplitSpec,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

/// Reads `clip_id,subject_id,start_us,duration_us` rows (header required).
pub fn read_annotations(path: &Path) -> Result<Vec<YawnAnnotation>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        let a: YawnAnnotation = row?;
        if a.duration_us == 0 {
            return Err(Error::parse(format!("annotation in clip {:?} has zero duration", a.clip_id)));
        }
        out.push(a);
    }
    Ok(out)
}

pub fn write_annotations(path: &Path, annotations: &[YawnAnnotation]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for a in annotations {
        w.serialize(a)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRow {
    pub sequence_id: String,
    pub subject_id: String,
    pub label: Label,
    pub source: String,
}

/// Writes one frame-sequence container per sequence under `dir/sequences`
/// plus `dir/index.csv`.
pub fn write_dataset(dir: &Path, sequences: &[LabeledSequence]) -> Result<()> {
    let seq_dir = dir.join("sequences");
    std::fs::create_dir_all(&seq_dir)?;
    let mut index = csv::Writer::from_path(dir.join("index.csv"))?;
    for s in sequences {
        framing::write_sequence(&s.sequence, &seq_dir, &s.id)?;
        index.serialize(IndexRow {
            sequence_id: s.id.clone(),
            subject_id: s.subject_id.clone(),
            label: s.label,
            source: s.source_clip_id.clone(),
        })?;
    }
    index.flush()?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Vec<LabeledSequence>> {
    let mut reader = csv::Reader::from_path(dir.join("index.csv"))?;
    let seq_dir = dir.join("sequences");
    let mut out = Vec::new();
    for row in reader.deserialize() {
        let row: IndexRow = row?;
        out.push(LabeledSequence {
            sequence: framing::read_sequence(&seq_dir, &row.sequence_id)?,
            id: row.sequence_id,
            label: row.label,
            subject_id: row.subject_id,
            source_clip_id: row.source,
            padded: false,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framing::{FrameSequence, NormalizedFrame};

    #[test]
    fn annotation_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let anns = vec![
            YawnAnnotation { clip_id: "c1".into(), subject_id: "s1".into(), start_us: 5, duration_us: 9 },
            YawnAnnotation { clip_id: "c2".into(), subject_id: "s2".into(), start_us: 50, duration_us: 1 },
        ];
        write_annotations(&path, &anns).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("clip_id,subject_id,start_us,duration_us"));
        assert_eq!(read_annotations(&path).unwrap(), anns);
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let frame = NormalizedFrame { width: 2, height: 1, pixels: vec![3, 250] };
        let seqs = vec![LabeledSequence {
            id: "clip_0000y".into(),
            sequence: FrameSequence { width: 2, height: 1, t_start_us: -5, dt_us: 100_000, frames: vec![frame; 3] },
            label: Label::Yawn,
            subject_id: "s7".into(),
            source_clip_id: "clip".into(),
            padded: false,
        }];
        write_dataset(dir.path(), &seqs).unwrap();
        let index = std::fs::read_to_string(dir.path().join("index.csv")).unwrap();
        assert_eq!(index.lines().next().unwrap(), "sequence_id,subject_id,label,source");
        assert!(index.contains("clip_0000y,s7,yawn,clip"));
        assert_eq!(read_dataset(dir.path()).unwrap(), seqs);
    }
}
