use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Label, LabeledSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Valid,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Valid, Partition::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Valid => "valid",
            Partition::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Partition::ALL.into_iter().find(|p| p.as_str() == s)
    }
}

/// Subject to partition assignment. Each subject maps to exactly one partition.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SplitSpec {
    pub assignment: BTreeMap<String, Partition>,
}

impl SplitSpec {
    pub fn assign(&mut self, subject: impl Into<String>, partition: Partition) {
        self.assignment.insert(subject.into(), partition);
    }

    /// Seeded random assignment of `counts = [train, valid, test]` subjects.
    /// Subjects are deduplicated and sorted before shuffling so the result
    /// does not depend on input order.
    pub fn seeded<S: AsRef<str>>(subjects: &[S], counts: [usize; 3], seed: u64) -> Result<Self> {
        let mut unique: Vec<String> = subjects
            .iter()
            .map(|s| s.as_ref().to_string())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if counts.iter().sum::<usize>() != unique.len() {
            return Err(Error::precondition(format!(
                "split counts {:?} do not add up to {} subjects",
                counts,
                unique.len()
            )));
        }
        unique.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut spec = SplitSpec::default();
        let mut it = unique.into_iter();
        for (partition, n) in Partition::ALL.into_iter().zip(counts) {
            for s in it.by_ref().take(n) {
                spec.assign(s, partition);
            }
        }
        Ok(spec)
    }

    pub fn subjects_in(&self, partition: Partition) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, p)| **p == partition)
            .map(|(s, _)| s.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionStats {
    pub subjects: usize,
    pub frames: usize,
    pub yawn_sequences: usize,
    pub non_yawn_sequences: usize,
}

impl PartitionStats {
    pub fn of(sequences: &[LabeledSequence]) -> Self {
        PartitionStats {
            subjects: sequences.iter().map(|s| s.subject_id.as_str()).collect::<BTreeSet<_>>().len(),
            frames: sequences.iter().map(|s| s.sequence.len()).sum(),
            yawn_sequences: sequences.iter().filter(|s| s.label == Label::Yawn).count(),
            non_yawn_sequences: sequences.iter().filter(|s| s.label == Label::NonYawn).count(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Splits {
    pub train: Vec<LabeledSequence>,
    pub valid: Vec<LabeledSequence>,
    pub test: Vec<LabeledSequence>,
}

impl Splits {
    pub fn get(&self, p: Partition) -> &[LabeledSequence] {
        match p {
            Partition::Train => &self.train,
            Partition::Valid => &self.valid,
            Partition::Test => &self.test,
        }
    }

    pub fn stats(&self) -> [PartitionStats; 3] {
        Partition::ALL.map(|p| PartitionStats::of(self.get(p)))
    }

    /// Checks that no subject appears in more than one partition.
    pub fn is_subject_disjoint(&self) -> bool {
        let sets = Partition::ALL.map(|p| {
            self.get(p).iter().map(|s| s.subject_id.as_str()).collect::<BTreeSet<_>>()
        });
        sets[0].is_disjoint(&sets[1]) && sets[0].is_disjoint(&sets[2]) && sets[1].is_disjoint(&sets[2])
    }
}

impl fmt::Display for Splits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.stats();
        let total = PartitionStats {
            subjects: s.iter().map(|p| p.subjects).sum(),
            frames: s.iter().map(|p| p.frames).sum(),
            yawn_sequences: s.iter().map(|p| p.yawn_sequences).sum(),
            non_yawn_sequences: s.iter().map(|p| p.non_yawn_sequences).sum(),
        };
        type Column = fn(&PartitionStats) -> usize;
        let rows: [(&str, Column); 4] = [
            ("Subject counts", |p| p.subjects),
            ("Event frame counts", |p| p.frames),
            ("Yawn sequence counts", |p| p.yawn_sequences),
            ("Non-yawn sequence counts", |p| p.non_yawn_sequences),
        ];
        writeln!(f, "{:<26}{:>10}{:>10}{:>10}{:>10}", "", "Train", "Valid", "Test", "Total")?;
        for (name, get) in rows {
            writeln!(
                f,
                "{:<26}{:>10}{:>10}{:>10}{:>10}",
                name,
                get(&s[0]),
                get(&s[1]),
                get(&s[2]),
                get(&total)
            )?;
        }
        Ok(())
    }
}

/// Partitions sequences by subject. Every sequence's subject must be assigned.
pub fn split_by_subject(sequences: Vec<LabeledSequence>, spec: &SplitSpec) -> Result<Splits> {
    let mut splits = Splits::default();
    for s in sequences {
        let p = spec
            .assignment
            .get(&s.subject_id)
            .ok_or_else(|| Error::precondition(format!("subject {:?} has no split assignment", s.subject_id)))?;
        match p {
            Partition::Train => splits.train.push(s),
            Partition::Valid => splits.valid.push(s),
            Partition::Test => splits.test.push(s),
        }
    }
    Ok(splits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framing::FrameSequence;

    fn seq(subject: &str, label: Label) -> LabeledSequence {
        LabeledSequence {
            id: format!("{subject}_{label:?}"),
            sequence: FrameSequence { width: 1, height: 1, t_start_us: 0, dt_us: 1, frames: Vec::new() },
            label,
            subject_id: subject.into(),
            source_clip_id: "c".into(),
            padded: false,
        }
    }

    #[test]
    fn seeded_split_matches_requested_counts() {
        let subjects: Vec<String> = (0..37).map(|i| format!("s{i:02}")).collect();
        let spec = SplitSpec::seeded(&subjects, [21, 8, 8], 7).unwrap();
        assert_eq!(spec.subjects_in(Partition::Train).len(), 21);
        assert_eq!(spec.subjects_in(Partition::Valid).len(), 8);
        assert_eq!(spec.subjects_in(Partition::Test).len(), 8);
        let mut reversed = subjects.clone();
        reversed.reverse();
        assert_eq!(SplitSpec::seeded(&reversed, [21, 8, 8], 7).unwrap(), spec);
        assert!(SplitSpec::seeded(&subjects, [20, 8, 8], 7).is_err());
    }

    #[test]
    fn single_test_subject_lands_only_in_test() {
        let mut spec = SplitSpec::default();
        spec.assign("a", Partition::Train);
        spec.assign("b", Partition::Test);
        let splits = split_by_subject(
            vec![seq("a", Label::Yawn), seq("b", Label::Yawn), seq("b", Label::NonYawn)],
            &spec,
        )
        .unwrap();
        assert_eq!(splits.test.len(), 2);
        assert!(splits.test.iter().all(|s| s.subject_id == "b"));
        assert!(splits.valid.is_empty());
        assert!(splits.is_subject_disjoint());
        let stats = splits.stats();
        assert_eq!(stats[2].yawn_sequences, 1);
        assert_eq!(stats[2].non_yawn_sequences, 1);
        assert!(splits.to_string().contains("Subject counts"));
    }

    #[test]
    fn unassigned_subject_is_an_error() {
        let spec = SplitSpec::default();
        assert!(matches!(split_by_subject(vec![seq("x", Label::Yawn)], &spec), Err(Error::Precondition(_))));
    }
}
