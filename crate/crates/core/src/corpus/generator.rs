//! Synthetic note corpora with planted topic-label couplings.
//!
//! Each note is filler pseudo-words with topic keywords mixed in. A topic
//! appears in a note with probability equal to the patient's propensity for
//! that topic: the configured prevalence itself, or, when `patient_concentration`
//! is set, a per-patient draw from `Beta(c * prevalence, c * (1 - prevalence))`
//! (same mean, lower `c` means more patient-specific topics). A patient's
//! label is Bernoulli with log-odds `base + sum_t coupling[t] * count[t]`,
//! where `count[t]` is the number of topic-`t` keywords across all of that
//! patient's notes and `base` is solved so the expected positive rate equals
//! `positive_rate`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Beta;
use serde::{Deserialize, Serialize};

use super::notecount::{NoteCountModel, NoteCountTargets};
use super::{Corpus, Label, Note, Patient};
use crate::ablation::Lexicon;
use crate::error::{Error, Result};

/// 2012-01-01T00:00:00Z
const DEFAULT_START: i64 = 1_325_376_000;
const DAY: i64 = 86_400;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoteLength {
    pub min_words: usize,
    pub max_words: usize,
}

impl Default for NoteLength {
    fn default() -> Self {
        NoteLength {
            min_words: 12,
            max_words: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub n_patients: usize,
    pub positive_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub notes_per_patient: NoteCountTargets,
    /// Filler words per note, before keywords are added.
    #[serde(default)]
    pub note_length: NoteLength,
    /// Topic key -> fraction of notes mentioning the topic.
    #[serde(default)]
    pub topic_prevalence: BTreeMap<String, f64>,
    /// Topic key -> log-odds shift per keyword occurrence.
    #[serde(default)]
    pub topic_label_coupling: BTreeMap<String, f64>,
    /// Beta concentration of per-patient topic propensities; unset means
    /// every note draws topics independently at the configured prevalence.
    #[serde(default)]
    pub patient_concentration: Option<f64>,
    /// Inclusive range of keywords inserted per topic mention.
    #[serde(default = "default_mentions")]
    pub mentions: [usize; 2],
    /// Number of distinct filler words.
    #[serde(default = "default_vocab_noise")]
    pub vocab_noise: usize,
    #[serde(default = "default_start")]
    pub start_timestamp: i64,
}

fn default_mentions() -> [usize; 2] {
    [1, 3]
}

fn default_vocab_noise() -> usize {
    300
}

fn default_start() -> i64 {
    DEFAULT_START
}

impl GeneratorSpec {
    pub fn new(n_patients: usize, positive_rate: f64, seed: u64) -> Self {
        GeneratorSpec {
            n_patients,
            positive_rate,
            seed,
            notes_per_patient: NoteCountTargets::default(),
            note_length: NoteLength::default(),
            topic_prevalence: BTreeMap::new(),
            topic_label_coupling: BTreeMap::new(),
            patient_concentration: None,
            mentions: default_mentions(),
            vocab_noise: default_vocab_noise(),
            start_timestamp: DEFAULT_START,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("generator spec: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("generator spec serializes")
    }

    pub fn validate(&self, lexicon: &Lexicon) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_patients == 0 {
            return bad("n_patients must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.positive_rate) {
            return bad(format!("positive_rate {} outside [0, 1]", self.positive_rate));
        }
        for (topic, &p) in &self.topic_prevalence {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("prevalence of `{topic}` = {p} outside [0, 1]"));
            }
        }
        for (topic, &c) in &self.topic_label_coupling {
            if !c.is_finite() {
                return bad(format!("coupling of `{topic}` is not finite"));
            }
        }
        for topic in self
            .topic_prevalence
            .keys()
            .chain(self.topic_label_coupling.keys())
        {
            if lexicon.exclusive_keywords(topic).is_empty() {
                return bad(format!("unknown topic `{topic}` (or it has no exclusive keywords)"));
            }
        }
        if let Some(c) = self.patient_concentration {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("patient_concentration {c} must be positive"));
            }
        }
        let NoteLength {
            min_words,
            max_words,
        } = self.note_length;
        if min_words == 0 || min_words > max_words {
            return bad(format!("note_length {min_words}..{max_words} is empty"));
        }
        if self.mentions[0] == 0 || self.mentions[0] > self.mentions[1] {
            return bad(format!("mentions {:?} is not a valid range", self.mentions));
        }
        if self.vocab_noise == 0 {
            return bad("vocab_noise must be at least 1".into());
        }
        let all_zero = self.topic_label_coupling.values().all(|&c| c == 0.0);
        if all_zero && !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return bad("degenerate spec: no coupling and positive_rate outside (0, 1)".into());
        }
        Ok(())
    }
}

/// Deterministic pseudo-words that collide with no lexicon keyword.
pub(crate) fn filler_words(count: usize, lexicon: &Lexicon) -> Vec<String> {
    const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    let syllables: Vec<String> = ONSETS
        .iter()
        .flat_map(|o| VOWELS.iter().map(move |v| format!("{o}{v}")))
        .collect();
    let n = syllables.len();
    let mut out = Vec::with_capacity(count);
    let mut i = 0usize;
    while out.len() < count {
        // stride through the syllable grid so neighbouring words differ early
        let a = (i * 37) % n;
        let b = (i / n * 11 + i * 7) % n;
        let c = (i / (n * n) + i * 3) % n;
        let word = format!("{}{}{}", syllables[a], syllables[b], syllables[c]);
        i += 1;
        if !lexicon.contains_any(&word) && !out.contains(&word) {
            out.push(word);
        }
    }
    out
}

struct PatientDraft {
    notes: Vec<Note>,
    counts: Vec<usize>,
}

pub fn generate_corpus(spec: &GeneratorSpec) -> Result<Corpus> {
    generate_corpus_with(spec, &Lexicon::sdoh())
}

pub fn generate_corpus_with(spec: &GeneratorSpec, lexicon: &Lexicon) -> Result<Corpus> {
    spec.validate(lexicon)?;
    let note_counts = NoteCountModel::fit(spec.notes_per_patient)?;
    let filler = filler_words(spec.vocab_noise, lexicon);
    // mildly Zipfian filler frequencies
    let weights: Vec<f64> = (0..filler.len()).map(|k| 1.0 / (k as f64 + 1.0).powf(0.8)).collect();
    let filler_dist = WeightedIndex::new(&weights).expect("positive weights");

    let topics: Vec<(&str, f64, Vec<&str>)> = spec
        .topic_prevalence
        .iter()
        .filter(|(_, &p)| p > 0.0)
        .map(|(k, &p)| (k.as_str(), p, lexicon.exclusive_keywords(k)))
        .collect();
    let coupling: Vec<f64> = topics
        .iter()
        .map(|(k, _, _)| spec.topic_label_coupling.get(*k).copied().unwrap_or(0.0))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut drafts = Vec::with_capacity(spec.n_patients);
    for index in 0..spec.n_patients {
        let patient_id = format!("P{index:05}");
        let n_notes = note_counts.sample(&mut rng);
        let propensity: Vec<f64> = topics
            .iter()
            .map(|&(_, p, _)| draw_propensity(p, spec.patient_concentration, &mut rng))
            .collect();
        let mut counts = vec![0usize; topics.len()];
        let mut timestamp = spec.start_timestamp + rng.random_range(0..9 * 365) * DAY;
        let mut notes = Vec::with_capacity(n_notes);
        for j in 0..n_notes {
            let n_words = rng.random_range(spec.note_length.min_words..=spec.note_length.max_words);
            let mut words: Vec<&str> = (0..n_words)
                .map(|_| filler[filler_dist.sample(&mut rng)].as_str())
                .collect();
            for (t, (_, _, keywords)) in topics.iter().enumerate() {
                if rng.random::<f64>() >= propensity[t] {
                    continue;
                }
                let k = rng.random_range(spec.mentions[0]..=spec.mentions[1]);
                for _ in 0..k {
                    let word = keywords[rng.random_range(0..keywords.len())];
                    let at = rng.random_range(0..=words.len());
                    words.insert(at, word);
                }
                counts[t] += k;
            }
            let text = sentences(&words, &mut rng);
            notes.push(Note {
                note_id: format!("{patient_id}-N{j:03}"),
                patient_id: patient_id.clone(),
                timestamp,
                text,
            });
            timestamp += rng.random_range(1..=60) * DAY + rng.random_range(0..DAY);
        }
        drafts.push(PatientDraft { notes, counts });
    }

    let shifts: Vec<f64> = drafts
        .iter()
        .map(|d| d.counts.iter().zip(&coupling).map(|(&n, &c)| n as f64 * c).sum())
        .collect();
    let base = solve_base_logit(&shifts, spec.positive_rate);
    let mut label_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6c61_6265_6c73);
    let mut patients = Vec::with_capacity(drafts.len());
    for (index, (draft, shift)) in drafts.into_iter().zip(&shifts).enumerate() {
        let p = sigmoid(base + shift);
        let label = if label_rng.random::<f64>() < p {
            Label::TtYes
        } else {
            Label::TtNo
        };
        patients.push(Patient::new(format!("P{index:05}"), label, draft.notes)?);
    }

    let mut metadata = BTreeMap::new();
    metadata.insert("generator.base_logit".into(), format!("{base:.6}"));
    metadata.insert("generator.seed".into(), spec.seed.to_string());
    metadata.insert("generator.spec".into(), serde_json::to_string(spec)?);
    metadata.insert(
        "generator.note_count_model".into(),
        serde_json::to_string(&note_counts)?,
    );
    Corpus::new(patients, metadata)
}

fn draw_propensity<R: Rng>(prevalence: f64, concentration: Option<f64>, rng: &mut R) -> f64 {
    match concentration {
        Some(c) if prevalence > 0.0 && prevalence < 1.0 => Beta::new(c * prevalence, c * (1.0 - prevalence))
            .expect("positive beta parameters")
            .sample(rng),
        _ => prevalence,
    }
}

fn sentences<R: Rng>(words: &[&str], rng: &mut R) -> String {
    let mut text = String::with_capacity(words.len() * 8);
    let mut remaining = 0;
    for (i, word) in words.iter().enumerate() {
        if remaining == 0 {
            if i > 0 {
                text.push_str(". ");
            }
            remaining = rng.random_range(5..=10);
            let mut chars = word.chars();
            if let Some(first) = chars.next() {
                text.extend(first.to_uppercase());
                text.push_str(chars.as_str());
            }
        } else {
            text.push(' ');
            text.push_str(word);
        }
        remaining -= 1;
    }
    text.push('.');
    text
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Bisection for `b` with `mean(sigmoid(b + shift)) = rate`.
fn solve_base_logit(shifts: &[f64], rate: f64) -> f64 {
    let mean_at = |b: f64| shifts.iter().map(|s| sigmoid(b + s)).sum::<f64>() / shifts.len() as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GeneratorSpec {
        let mut spec = GeneratorSpec::new(300, 0.7, 11);
        spec.topic_prevalence.insert("social_support".into(), 0.96);
        spec.topic_prevalence.insert("risk_of_death".into(), 0.10);
        spec.topic_label_coupling.insert("risk_of_death".into(), -1.0);
        spec
    }

    #[test]
    fn pure_function_of_spec() {
        let a = generate_corpus(&spec()).unwrap();
        let b = generate_corpus(&spec()).unwrap();
        assert_eq!(a, b);
        let mut other = spec();
        other.seed += 1;
        assert_ne!(generate_corpus(&other).unwrap(), a);
    }

    #[test]
    fn filler_avoids_lexicon() {
        let lex = Lexicon::sdoh();
        let words = filler_words(500, &lex);
        assert_eq!(words.len(), 500);
        assert!(words.iter().all(|w| !lex.contains_any(w)));
        let unique: std::collections::HashSet<_> = words.iter().collect();
        assert_eq!(unique.len(), 500);
    }

    #[test]
    fn notes_are_well_formed() {
        let corpus = generate_corpus(&spec()).unwrap();
        assert_eq!(corpus.len(), 300);
        for p in &corpus.patients {
            assert!(!p.notes.is_empty());
            assert!(p.notes.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
            assert!(p.notes.iter().all(|n| !n.text.is_empty() && n.text.ends_with('.')));
        }
        assert!(corpus.metadata.contains_key("generator.base_logit"));
    }

    #[test]
    fn base_logit_hits_rate() {
        let shifts = vec![0.0, -2.0, -4.0, 1.0];
        let b = solve_base_logit(&shifts, 0.6);
        let mean: f64 = shifts.iter().map(|s| sigmoid(b + s)).sum::<f64>() / 4.0;
        assert!((mean - 0.6).abs() < 1e-9);
    }

    #[test]
    fn degenerate_spec_rejected() {
        let mut s = GeneratorSpec::new(10, 1.0, 0);
        assert!(generate_corpus(&s).is_err());
        s.positive_rate = 0.5;
        assert!(generate_corpus(&s).is_ok());
        s.topic_prevalence.insert("no_such_topic".into(), 0.5);
        assert!(generate_corpus(&s).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let s = spec();
        let again = GeneratorSpec::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(s, again);
    }
}
