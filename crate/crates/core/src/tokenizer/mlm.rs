use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{Vocabulary, CLS, MASK, RESERVED, SEP};
use super::words;
use crate::error::{Error, Result};

/// Label value at positions that do not contribute to the MLM loss.
pub const IGNORE_LABEL: i32 = -100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NspLabel {
    IsNext,
    NotNext,
}

impl NspLabel {
    pub fn index(self) -> usize {
        match self {
            NspLabel::IsNext => 0,
            NspLabel::NotNext => 1,
        }
    }
}

/// One masked-LM / next-sentence-prediction training example:
/// `[CLS] A [SEP] B [SEP]` with a subset of positions corrupted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmInstance {
    pub input_ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    /// Original token id at masked positions, [`IGNORE_LABEL`] elsewhere;
    /// every negative value is ignored.
    pub labels: Vec<i32>,
    pub nsp_label: NspLabel,
}

impl MlmInstance {
    pub fn masked_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l >= 0)
            .map(|(i, _)| i)
    }
}

/// Sentence-like segments: token runs terminated by `.`, `!` or `?`.
pub fn split_segments(text: &str) -> Vec<Vec<String>> {
    let mut segments = Vec::new();
    let mut current = Vec::new();
    for word in words(text) {
        let end = matches!(word.as_str(), "." | "!" | "?");
        current.push(word);
        if end {
            segments.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        segments.push(current);
    }
    segments
}

/// Builds MLM/NSP instances from consecutive segment pairs of each text.
///
/// Each text contributes one instance per non-overlapping pair of adjacent
/// segments. With probability ½ the second segment is replaced by a random
/// segment from another text (`NotNext`). Texts with fewer than two segments
/// are skipped. Within an instance, `round(mask_rate * candidates)` ordinary
/// positions (at least one) are selected; of those 80% become `[MASK]`, 10% a
/// random ordinary token and 10% stay unchanged.
pub fn make_mlm_instances(
    vocab: &Vocabulary,
    texts: &[&str],
    mask_rate: f64,
    max_len: usize,
    seed: u64,
) -> Result<Vec<MlmInstance>> {
    if !(mask_rate > 0.0 && mask_rate < 1.0) {
        return Err(Error::Config(format!("mask_rate {mask_rate} must be in (0, 1)")));
    }
    if max_len < 5 {
        return Err(Error::Config("max_len must be at least 5 for sentence pairs".into()));
    }
    let segmented: Vec<Vec<Vec<u32>>> = texts
        .iter()
        .map(|t| {
            split_segments(t)
                .into_iter()
                .map(|seg| seg.iter().map(|w| vocab.lookup(w)).collect())
                .collect()
        })
        .collect();
    let donors: Vec<usize> = (0..segmented.len())
        .filter(|&i| !segmented[i].is_empty())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = Vec::new();
    for (t, segments) in segmented.iter().enumerate() {
        if segments.len() < 2 {
            continue;
        }
        for i in (0..segments.len() - 1).step_by(2) {
            let first = &segments[i];
            let (second, nsp_label) = if rng.random::<f64>() < 0.5 || donors.len() < 2 {
                (&segments[i + 1], NspLabel::IsNext)
            } else {
                let mut donor = donors[rng.random_range(0..donors.len())];
                while donor == t {
                    donor = donors[rng.random_range(0..donors.len())];
                }
                let pool = &segmented[donor];
                (&pool[rng.random_range(0..pool.len())], NspLabel::NotNext)
            };
            instances.push(build_instance(
                vocab, first, second, nsp_label, mask_rate, max_len, &mut rng,
            ));
        }
    }
    Ok(instances)
}

fn build_instance(
    vocab: &Vocabulary,
    first: &[u32],
    second: &[u32],
    nsp_label: NspLabel,
    mask_rate: f64,
    max_len: usize,
    rng: &mut ChaCha8Rng,
) -> MlmInstance {
    let budget = max_len - 3;
    let (mut a_len, mut b_len) = (first.len(), second.len());
    while a_len + b_len > budget {
        if a_len >= b_len {
            a_len -= 1;
        } else {
            b_len -= 1;
        }
    }
    let mut input_ids = Vec::with_capacity(a_len + b_len + 3);
    let mut segment_ids = Vec::with_capacity(a_len + b_len + 3);
    input_ids.push(CLS);
    input_ids.extend_from_slice(&first[..a_len]);
    input_ids.push(SEP);
    segment_ids.resize(input_ids.len(), 0);
    input_ids.extend_from_slice(&second[..b_len]);
    input_ids.push(SEP);
    segment_ids.resize(input_ids.len(), 1);

    let candidates: Vec<usize> = (0..input_ids.len())
        .filter(|&i| input_ids[i] != CLS && input_ids[i] != SEP)
        .collect();
    let mut labels = vec![IGNORE_LABEL; input_ids.len()];
    if !candidates.is_empty() {
        let n_mask = ((candidates.len() as f64 * mask_rate).round() as usize).clamp(1, candidates.len());
        let mut chosen: Vec<usize> = sample(rng, candidates.len(), n_mask)
            .into_iter()
            .map(|k| candidates[k])
            .collect();
        chosen.sort_unstable();
        for pos in chosen {
            labels[pos] = input_ids[pos] as i32;
            let roll: f64 = rng.random();
            if roll < 0.8 {
                input_ids[pos] = MASK;
            } else if roll < 0.9 && vocab.len() > RESERVED as usize {
                input_ids[pos] = rng.random_range(RESERVED..vocab.len() as u32);
            }
        }
    }
    MlmInstance {
        input_ids,
        segment_ids,
        labels,
        nsp_label,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::build_vocab;

    fn texts() -> Vec<String> {
        (0..400)
            .map(|i| {
                (0..6)
                    .map(|s| format!("w{} w{} w{} w{} .", i % 7, s, (i + s) % 11, i % 5))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect()
    }

    #[test]
    fn segments_split_on_terminators() {
        let segs = split_segments("one two. three! four");
        assert_eq!(segs.len(), 3);
        assert_eq!(segs[0], ["one", "two", "."]);
        assert_eq!(segs[2], ["four"]);
    }

    #[test]
    fn labels_only_at_masked_positions() {
        let owned = texts();
        let refs: Vec<&str> = owned.iter().map(String::as_str).collect();
        let vocab = build_vocab(refs.iter().copied(), 1, 1000).unwrap();
        let instances = make_mlm_instances(&vocab, &refs, 0.15, 64, 1).unwrap();
        assert!(!instances.is_empty());
        for inst in &instances {
            assert_eq!(inst.input_ids.len(), inst.labels.len());
            assert_eq!(inst.input_ids[0], CLS);
            assert!(inst.masked_positions().count() >= 1);
            for pos in inst.masked_positions() {
                assert!(inst.input_ids[pos] != CLS && inst.input_ids[pos] != SEP);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let owned = texts();
        let refs: Vec<&str> = owned.iter().map(String::as_str).collect();
        let vocab = build_vocab(refs.iter().copied(), 1, 1000).unwrap();
        let a = make_mlm_instances(&vocab, &refs, 0.15, 64, 5).unwrap();
        let b = make_mlm_instances(&vocab, &refs, 0.15, 64, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_segment_texts_are_skipped() {
        let vocab = build_vocab(["a b c"], 1, 100).unwrap();
        let out = make_mlm_instances(&vocab, &["a b c", "a b"], 0.15, 16, 0).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn respects_max_len() {
        let long = vec!["w ."; 3].join(" ").replace("w .", &(vec!["w"; 50].join(" ") + " ."));
        let vocab = build_vocab([long.as_str()], 1, 100).unwrap();
        let out = make_mlm_instances(&vocab, &[long.as_str()], 0.15, 20, 0).unwrap();
        assert!(out.iter().all(|i| i.input_ids.len() <= 20));
    }

    #[test]
    fn rejects_bad_rate() {
        let vocab = build_vocab(["a"], 1, 10).unwrap();
        assert!(make_mlm_instances(&vocab, &["a"], 0.0, 16, 0).is_err());
        assert!(make_mlm_instances(&vocab, &["a"], 1.0, 16, 0).is_err());
    }
}
