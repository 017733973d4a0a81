use std::collections::HashSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, Patient};
use crate::error::{Error, Result};

/// Patient-level partition of a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffles patient ids with `seed` and cuts them into train/valid/test.
///
/// Train receives `floor(ratios[0] * N)` patients. Valid and test receive
/// their floors, and the leftover patients go to valid, then test,
/// alternating. Every partition is guaranteed at least one patient when
/// `N >= 3`.
pub fn split_patients(corpus: &Corpus, ratios: [f64; 3], seed: u64) -> Result<Split> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios {ratios:?} must be fractions summing to 1"
        )));
    }
    let n = corpus.len();
    if n < 3 {
        return Err(Error::TooFewPatients(n));
    }
    let sizes = partition_sizes(n, ratios);

    let mut ids: Vec<String> = corpus.patients.iter().map(|p| p.patient_id.clone()).collect();
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let test = ids.split_off(sizes[0] + sizes[1]);
    let valid = ids.split_off(sizes[0]);
    let train = ids;
    Ok(Split {
        seed,
        ratios,
        train,
        valid,
        test,
    })
}

fn partition_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let mut sizes = ratios.map(|r| (r * n as f64 + 1e-9).floor() as usize);
    let mut leftover = n - sizes.iter().sum::<usize>();
    let mut slot = 1;
    while leftover > 0 {
        sizes[slot] += 1;
        slot = if slot == 1 { 2 } else { 1 };
        leftover -= 1;
    }
    for slot in [1, 2] {
        if sizes[slot] == 0 && sizes[0] > 1 {
            sizes[0] -= 1;
            sizes[slot] += 1;
        }
    }
    sizes
}

impl Split {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)?;
        Ok(())
    }

    /// Checks that the partitions are disjoint and exactly cover `corpus`.
    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::EmptySplit("train"));
        }
        if self.valid.is_empty() {
            return Err(Error::EmptySplit("valid"));
        }
        if self.test.is_empty() {
            return Err(Error::EmptySplit("test"));
        }
        let mut seen = HashSet::new();
        for id in self.train.iter().chain(&self.valid).chain(&self.test) {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidCorpus(format!(
                    "patient `{id}` appears in more than one partition"
                )));
            }
            if corpus.patient(id).is_none() {
                return Err(Error::InvalidCorpus(format!(
                    "split names unknown patient `{id}`"
                )));
            }
        }
        if seen.len() != corpus.len() {
            return Err(Error::InvalidCorpus(format!(
                "split covers {} of {} patients",
                seen.len(),
                corpus.len()
            )));
        }
        Ok(())
    }

    /// The only patients training stages may see.
    pub fn training_view<'a>(&self, corpus: &'a Corpus) -> Result<TrainingView<'a>> {
        self.validate(corpus)?;
        Ok(TrainingView {
            train: lookup(corpus, &self.train),
            valid: lookup(corpus, &self.valid),
        })
    }

    /// Held-out patients, for final evaluation and ablation.
    pub fn test_view<'a>(&self, corpus: &'a Corpus) -> Result<TestView<'a>> {
        self.validate(corpus)?;
        Ok(TestView {
            patients: lookup(corpus, &self.test),
        })
    }
}

fn lookup<'a>(corpus: &'a Corpus, ids: &[String]) -> Vec<&'a Patient> {
    let index: std::collections::HashMap<&str, &Patient> = corpus
        .patients
        .iter()
        .map(|p| (p.patient_id.as_str(), p))
        .collect();
    ids.iter().map(|id| index[id.as_str()]).collect()
}

#[derive(Debug, Clone)]
pub struct TrainingView<'a> {
    pub train: Vec<&'a Patient>,
    pub valid: Vec<&'a Patient>,
}

#[derive(Debug, Clone)]
pub struct TestView<'a> {
    pub patients: Vec<&'a Patient>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Label, Note, Patient};
    use proptest::prelude::*;

    fn corpus_of(n: usize) -> Corpus {
        let patients = (0..n)
            .map(|i| {
                Patient::new(
                    format!("P{i:05}"),
                    if i % 3 == 0 { Label::TtNo } else { Label::TtYes },
                    vec![Note {
                        note_id: format!("N{i}"),
                        patient_id: String::new(),
                        timestamp: i as i64,
                        text: "text".into(),
                    }],
                )
                .unwrap()
            })
            .collect();
        Corpus::new(patients, Default::default()).unwrap()
    }

    #[test]
    fn paper_cohort_sizes() {
        assert_eq!(partition_sizes(2496, [0.8, 0.1, 0.1]), [1996, 250, 250]);
        assert_eq!(partition_sizes(10, [0.8, 0.1, 0.1]), [8, 1, 1]);
        assert_eq!(partition_sizes(3, [0.8, 0.1, 0.1]), [1, 1, 1]);
    }

    #[test]
    fn deterministic_given_seed() {
        let corpus = corpus_of(50);
        let a = split_patients(&corpus, [0.8, 0.1, 0.1], 9).unwrap();
        let b = split_patients(&corpus, [0.8, 0.1, 0.1], 9).unwrap();
        assert_eq!(a, b);
        let c = split_patients(&corpus, [0.8, 0.1, 0.1], 10).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            split_patients(&corpus_of(2), [0.8, 0.1, 0.1], 0),
            Err(Error::TooFewPatients(2))
        ));
        assert!(split_patients(&corpus_of(10), [0.8, 0.1, 0.2], 0).is_err());
    }

    #[test]
    fn views_are_disjoint() {
        let corpus = corpus_of(30);
        let split = split_patients(&corpus, [0.8, 0.1, 0.1], 3).unwrap();
        let training = split.training_view(&corpus).unwrap();
        let test = split.test_view(&corpus).unwrap();
        let test_ids: HashSet<_> = test.patients.iter().map(|p| &p.patient_id).collect();
        assert!(training
            .train
            .iter()
            .chain(&training.valid)
            .all(|p| !test_ids.contains(&p.patient_id)));
    }

    proptest! {
        #[test]
        fn partitions_disjoint_and_exhaustive(n in 3usize..400, seed in any::<u64>()) {
            let corpus = corpus_of(n);
            let split = split_patients(&corpus, [0.8, 0.1, 0.1], seed).unwrap();
            prop_assert!(split.validate(&corpus).is_ok());
            prop_assert_eq!(split.train.len() + split.valid.len() + split.test.len(), n);
        }
    }
}
