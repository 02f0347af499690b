use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{read_sarc_file, write_sarc_file, Label, SequenceExample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub non_sarcastic: usize,
    pub sarcastic: usize,
}

impl ClassCounts {
    pub fn of(examples: &[SequenceExample]) -> Self {
        let mut c = ClassCounts::default();
        for ex in examples {
            match ex.label {
                Label::Sarcastic => c.sarcastic += 1,
                Label::NonSarcastic => c.non_sarcastic += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.sarcastic + self.non_sarcastic
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub train: ClassCounts,
    pub validation: ClassCounts,
    pub test: ClassCounts,
    pub split_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SequenceExample>,
    pub validation: Vec<SequenceExample>,
    pub test: Vec<SequenceExample>,
    pub seed: u64,
    pub test_fraction: f64,
    pub val_fraction: f64,
}

// Per-class counts are floored; the epsilon absorbs products like 0.2 * 250
// landing a hair below the integer.
fn floor_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 + 1e-9).floor() as usize
}

/// Class-balanced train/validation/test partition.
///
/// The majority class is downsampled to the minority count with a seeded
/// uniform draw. `test_fraction` of each class goes to test, then
/// `val_fraction` of each class in the remaining pool goes to validation.
/// Both carve-outs floor their per-class counts.
pub fn balanced_split(
    examples: &[SequenceExample],
    test_fraction: f64,
    val_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    for (name, f) in [("test_fraction", test_fraction), ("val_fraction", val_fraction)] {
        if !(0.0..1.0).contains(&f) {
            return Err(Error::data(format!("{name} must lie in [0, 1), got {f}")));
        }
    }
    let mut seen = HashSet::new();
    for ex in examples {
        if !seen.insert(ex.id.as_str()) {
            return Err(Error::data(format!("duplicate example id `{}`", ex.id)));
        }
    }

    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, ex) in examples.iter().enumerate() {
        by_class[ex.label.index()].push(i);
    }
    if by_class.iter().any(|c| c.is_empty()) {
        return Err(Error::data("balanced_split needs both classes present"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_class = by_class[0].len().min(by_class[1].len());
    let n_test = floor_count(test_fraction, per_class);
    let n_val = floor_count(val_fraction, per_class - n_test);
    if per_class - n_test - n_val == 0 {
        return Err(Error::data(format!(
            "split leaves no training examples ({per_class} per class)"
        )));
    }

    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for members in by_class.iter_mut() {
        members.shuffle(&mut rng);
        members.truncate(per_class);
        test.extend_from_slice(&members[..n_test]);
        val.extend_from_slice(&members[n_test..n_test + n_val]);
        train.extend_from_slice(&members[n_test + n_val..]);
    }

    let collect = |mut idx: Vec<usize>| -> Vec<SequenceExample> {
        idx.sort_unstable();
        idx.into_iter().map(|i| examples[i].clone()).collect()
    };
    Ok(DatasetSplit {
        train: collect(train),
        validation: collect(val),
        test: collect(test),
        seed,
        test_fraction,
        val_fraction,
    })
}

impl DatasetSplit {
    /// Short content hash of split membership.
    pub fn split_id(&self) -> String {
        let mut h = Sha256::new();
        for (tag, part) in [("train", &self.train), ("validation", &self.validation), ("test", &self.test)] {
            h.update(tag.as_bytes());
            for ex in part {
                h.update(ex.id.as_bytes());
                h.update([0u8]);
            }
        }
        hex::encode(&h.finalize()[..6])
    }

    pub fn manifest(&self) -> SplitManifest {
        SplitManifest {
            seed: self.seed,
            test_fraction: self.test_fraction,
            val_fraction: self.val_fraction,
            train: ClassCounts::of(&self.train),
            validation: ClassCounts::of(&self.validation),
            test: ClassCounts::of(&self.test),
            split_id: self.split_id(),
        }
    }

    /// Writes `train.jsonl`, `validation.jsonl`, `test.jsonl` and `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_sarc_file(&dir.join("train.jsonl"), &self.train)?;
        write_sarc_file(&dir.join("validation.jsonl"), &self.validation)?;
        write_sarc_file(&dir.join("test.jsonl"), &self.test)?;
        let manifest = serde_json::to_string_pretty(&self.manifest())?;
        std::fs::write(dir.join("manifest.json"), manifest + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: SplitManifest =
            serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
        let split = DatasetSplit {
            train: read_sarc_file(&dir.join("train.jsonl"))?,
            validation: read_sarc_file(&dir.join("validation.jsonl"))?,
            test: read_sarc_file(&dir.join("test.jsonl"))?,
            seed: manifest.seed,
            test_fraction: manifest.test_fraction,
            val_fraction: manifest.val_fraction,
        };
        if split.manifest() != manifest {
            return Err(Error::data(format!(
                "{}: split files disagree with manifest.json",
                dir.display()
            )));
        }
        Ok(split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(n_sarc: usize, n_non: usize) -> Vec<SequenceExample> {
        (0..n_sarc + n_non)
            .map(|i| SequenceExample {
                id: format!("ex{i}"),
                author: format!("u{}", i % 7),
                forum: "politics".into(),
                ancestors: vec![],
                response: format!("comment number {i}"),
                label: if i < n_sarc { Label::Sarcastic } else { Label::NonSarcastic },
            })
            .collect()
    }

    #[test]
    fn worked_example_counts() {
        let s = balanced_split(&fixture(10, 30), 0.2, 0.2, 3).unwrap();
        let t = ClassCounts::of(&s.test);
        let v = ClassCounts::of(&s.validation);
        let tr = ClassCounts::of(&s.train);
        assert_eq!((t.sarcastic, t.non_sarcastic), (2, 2));
        assert_eq!((v.sarcastic, v.non_sarcastic), (1, 1));
        assert_eq!((tr.sarcastic, tr.non_sarcastic), (7, 7));
    }

    #[test]
    fn single_class_is_error() {
        assert!(balanced_split(&fixture(5, 0), 0.2, 0.2, 1).is_err());
        assert!(balanced_split(&fixture(0, 5), 0.2, 0.2, 1).is_err());
    }

    #[test]
    fn seed_reproduces_membership() {
        let data = fixture(40, 60);
        let a = balanced_split(&data, 0.2, 0.2, 11).unwrap();
        let b = balanced_split(&data, 0.2, 0.2, 11).unwrap();
        let c = balanced_split(&data, 0.2, 0.2, 12).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.split_id(), b.split_id());
        assert_ne!(a.split_id(), c.split_id());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut data = fixture(3, 3);
        data[1].id = data[0].id.clone();
        assert!(balanced_split(&data, 0.2, 0.2, 0).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = balanced_split(&fixture(20, 25), 0.2, 0.2, 5).unwrap();
        s.save(dir.path()).unwrap();
        assert_eq!(DatasetSplit::load(dir.path()).unwrap(), s);
    }

    proptest::proptest! {
        #[test]
        fn always_balanced_and_disjoint(n_sarc in 3usize..60, n_non in 3usize..60, seed in 0u64..1000) {
            let data = fixture(n_sarc, n_non);
            let s = balanced_split(&data, 0.2, 0.2, seed).unwrap();
            let t = ClassCounts::of(&s.test);
            let tr = ClassCounts::of(&s.train);
            let v = ClassCounts::of(&s.validation);
            proptest::prop_assert_eq!(t.sarcastic, t.non_sarcastic);
            proptest::prop_assert_eq!(tr.sarcastic, tr.non_sarcastic);
            proptest::prop_assert_eq!(v.sarcastic, v.non_sarcastic);
            let mut ids = HashSet::new();
            for ex in s.train.iter().chain(&s.validation).chain(&s.test) {
                proptest::prop_assert!(ids.insert(ex.id.clone()));
            }
        }
    }
}
