use std::sync::OnceLock;

use hiernote::ablation::{
    ablate_and_score, remove_topic_words, spearman, topic_stats, F1Mode, ImportanceReport, ImportanceSummary, Lexicon,
    Topic,
};
use hiernote::corpus::{
    generate_corpus, save_corpus, split_patients, Corpus, GeneratorSpec, Note, NoteLength, Patient,
};
use hiernote::encoder::{EncoderModel, ModelConfig, StopMetric, TrainConfig};
use hiernote::harness::sha256_file;
use hiernote::hierarchy::{build_concat_all, train_step1, train_step2, FrozenPipeline, MsConfig};
use hiernote::corpus::NoteSelection;
use hiernote::tokenizer::build_vocab;
use proptest::prelude::*;

struct Fixture {
    corpus: Corpus,
    test_ids: Vec<String>,
    single: FrozenPipeline,
    ms: FrozenPipeline,
}

fn train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 3e-3,
        batch_size: 16,
        max_epochs: 4,
        min_epochs: 0,
        early_stop_patience: 2,
        early_stop_metric: StopMetric::MacroF1,
        seeds: vec![1],
        clip_norm: Some(1.0),
    }
}

/// One planted topic (`abuse`) and one neutral topic (`telephone`).
fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let mut spec = GeneratorSpec::new(500, 0.7, 21);
        spec.note_length = NoteLength { min_words: 6, max_words: 14 };
        spec.topic_prevalence.insert("abuse".into(), 0.25);
        spec.topic_prevalence.insert("telephone".into(), 0.3);
        spec.topic_label_coupling.insert("abuse".into(), -2.5);
        spec.patient_concentration = Some(0.1);
        let corpus = generate_corpus(&spec).unwrap();
        let split = split_patients(&corpus, [0.7, 0.1, 0.2], 3).unwrap();
        let view = split.training_view(&corpus).unwrap();
        let vocab = build_vocab(view.train.iter().flat_map(|p| p.notes.iter().map(|n| n.text.as_str())), 2, 5000).unwrap();
        let cfg = ModelConfig {
            vocab_size: vocab.len(),
            max_seq_len: 32,
            hidden_dim: 8,
            n_layers: 1,
            n_heads: 2,
            ffn_dim: 16,
            dropout_rate: 0.0,
            n_classes: 2,
            seed: 4,
        };
        let tc = train_config();
        let single = train_step1(EncoderModel::new(cfg.clone()).unwrap(), &vocab, &view, NoteSelection::Single, &tc, 1).unwrap();
        let single = FrozenPipeline::single(vocab.clone(), single.model).unwrap();

        let n = 3;
        let enc = train_step1(EncoderModel::new(cfg).unwrap(), &vocab, &view, NoteSelection::Longest(n), &tc, 1)
            .unwrap()
            .model;
        let reps = |ps: &[&Patient]| -> Vec<_> {
            build_concat_all(&enc, &vocab, ps, n).unwrap().into_iter().zip(ps.iter().map(|p| p.label)).collect()
        };
        let (tr, va) = (reps(&view.train), reps(&view.valid));
        let ms = MsConfig { n, mlp_hidden: 16, mlp_layers: 1, dropout: 0.0, seed: 2 };
        let mlp = train_step2(&tr, &va, &ms, &TrainConfig { max_epochs: 15, ..tc }, 1).unwrap().model;
        let ms = FrozenPipeline::ms(vocab, enc, mlp).unwrap();
        Fixture {
            test_ids: split.test.clone(),
            corpus,
            single,
            ms,
        }
    })
}

fn test_patients(fx: &Fixture) -> Vec<&Patient> {
    fx.test_ids.iter().map(|id| fx.corpus.patient(id).unwrap()).collect()
}

/// Independent route: rebuild each patient from its selected notes with the
/// topic's keywords deleted, then score the copies with no transform.
fn ablated_copies(pipeline: &FrozenPipeline, patients: &[&Patient], topic: &Topic) -> Vec<Patient> {
    patients
        .iter()
        .map(|p| {
            let notes: Vec<Note> = pipeline
                .selection()
                .select(p)
                .into_iter()
                .map(|n| Note {
                    text: remove_topic_words(&n.text, topic),
                    ..n.clone()
                })
                .collect();
            Patient::new(p.patient_id.clone(), p.label, notes).unwrap()
        })
        .collect()
}

fn check_against_oracle(pipeline: &FrozenPipeline, mode: F1Mode) -> ImportanceReport {
    let fx = fixture();
    let test = test_patients(fx);
    let lexicon = Lexicon::sdoh();
    let report = ablate_and_score(pipeline, &test, &lexicon, mode).unwrap();
    assert_eq!(report.baseline_f1, mode.score(&pipeline.predict(&test).unwrap()).unwrap());
    let keys: Vec<&str> = report.topics.iter().map(|t| t.topic.as_str()).collect();
    let lexicon_keys: Vec<&str> = lexicon.topics.iter().map(|t| t.key.as_str()).collect();
    assert_eq!(keys, lexicon_keys, "lexicon order");
    for (topic, imp) in lexicon.topics.iter().zip(&report.topics) {
        let copies = ablated_copies(pipeline, &test, topic);
        let refs: Vec<&Patient> = copies.iter().collect();
        let oracle_f1 = mode.score(&pipeline.predict(&refs).unwrap()).unwrap();
        assert!((imp.ablated_f1 - oracle_f1).abs() < 1e-12, "{}: {} vs {}", topic.key, imp.ablated_f1, oracle_f1);
        assert_eq!(imp.raw_delta_f1, report.baseline_f1 - imp.ablated_f1);
        let containing = test
            .iter()
            .filter(|p| pipeline.selection().select(p).iter().any(|n| topic.occurs_in(&n.text)))
            .count();
        assert_eq!(imp.containing_patients, containing);
        match imp.normalized_delta_f1 {
            None => assert_eq!(containing, 0),
            Some(d) => assert_eq!(d, imp.containing_baseline_f1.unwrap() - imp.containing_ablated_f1.unwrap()),
        }
    }
    report
}

#[test]
fn single_note_ablation_matches_rebuilt_patients() {
    check_against_oracle(&fixture().single, F1Mode::TargetClass);
}

#[test]
fn multi_note_ablation_matches_rebuilt_patients() {
    let report = check_against_oracle(&fixture().ms, F1Mode::Macro);
    assert_eq!(report.model, "MS-3");
}

#[test]
fn absent_topics_have_exactly_zero_delta() {
    let fx = fixture();
    let test = test_patients(fx);
    let report = ablate_and_score(&fx.ms, &test, &Lexicon::sdoh(), F1Mode::TargetClass).unwrap();
    let stats = topic_stats(&test, &Lexicon::sdoh());
    for (imp, stat) in report.topics.iter().zip(&stats) {
        if stat.containing_notes == 0 {
            assert_eq!(imp.raw_delta_f1, 0.0, "{}", imp.topic);
            assert_eq!(imp.normalized_delta_f1, None);
            assert_eq!(imp.containing_patients, 0);
        }
    }
    assert!(report.topic("family").is_some_and(|t| t.containing_patients == 0));
    assert!(report.topic("abuse").is_some_and(|t| t.containing_patients > 0));
}

#[test]
fn ablation_never_touches_the_corpus_or_the_model() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let before = dir.path().join("before.jsonl");
    save_corpus(&fx.corpus, &before).unwrap();
    let model_before = fx.ms.clone();
    let test = test_patients(fx);
    ablate_and_score(&fx.ms, &test, &Lexicon::sdoh(), F1Mode::TargetClass).unwrap();
    let after = dir.path().join("after.jsonl");
    save_corpus(&fx.corpus, &after).unwrap();
    assert_eq!(sha256_file(&before).unwrap(), sha256_file(&after).unwrap());
    assert_eq!(fx.ms, model_before);
}

#[test]
fn excluded_topics_are_left_out() {
    let fx = fixture();
    let test = test_patients(fx);
    let lexicon = Lexicon::sdoh().without(&["abuse".to_string()]);
    let report = ablate_and_score(&fx.single, &test, &lexicon, F1Mode::TargetClass).unwrap();
    assert!(report.topic("abuse").is_none());
    assert_eq!(report.topics.len(), 10);
}

#[test]
fn summary_takes_per_topic_medians() {
    let fx = fixture();
    let test = test_patients(fx);
    let lexicon = Lexicon::sdoh();
    let a = ablate_and_score(&fx.single, &test, &lexicon, F1Mode::TargetClass).unwrap();
    let mut b = a.clone();
    let mut c = a.clone();
    for t in &mut b.topics {
        t.raw_delta_f1 += 0.1;
    }
    for t in &mut c.topics {
        t.raw_delta_f1 -= 0.3;
    }
    let summary = ImportanceSummary::from_reports(vec![a.clone(), b, c]).unwrap();
    for (s, t) in summary.topics.iter().zip(&a.topics) {
        assert_eq!(s.raw_delta_f1, t.raw_delta_f1);
    }
    assert_eq!(summary.n_runs, 3);
    let mut macro_report = a.clone();
    macro_report.f1_mode = F1Mode::Macro;
    assert!(ImportanceSummary::from_reports(vec![a, macro_report]).is_err());
    assert!(ImportanceSummary::from_reports(Vec::new()).is_err());
}

#[test]
fn topic_stats_count_notes_and_patients() {
    let fx = fixture();
    let test = test_patients(fx);
    let lexicon = Lexicon::sdoh();
    let stats = topic_stats(&test, &lexicon);
    let notes: usize = test.iter().map(|p| p.notes.len()).sum();
    for (topic, s) in lexicon.topics.iter().zip(&stats) {
        let hits = test.iter().flat_map(|p| &p.notes).filter(|n| topic.occurs_in(&n.text)).count();
        assert_eq!(s.containing_notes, hits);
        assert_eq!(s.note_frequency, hits as f64 / notes as f64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn removal_deletes_exactly_the_keywords(words in prop::collection::vec(
        prop::sample::select(vec!["phone", "Phone", "PHONE", "call", "calls", "callback", "family", "home", "visit", "iphone"]),
        0..20,
    )) {
        let lexicon = Lexicon::sdoh();
        let topic = lexicon.topic("telephone").unwrap();
        let text = words.join(" ");
        let removed = remove_topic_words(&text, topic);
        let kept: Vec<&str> = words.iter().copied().filter(|w| !topic.matches(&w.to_lowercase())).collect();
        prop_assert_eq!(removed.split_whitespace().collect::<Vec<_>>(), kept);
        prop_assert!(!topic.occurs_in(&removed));
        // idempotent, and other topics keep their counts
        prop_assert_eq!(remove_topic_words(&removed, topic), removed.clone());
        let family = lexicon.topic("family").unwrap();
        prop_assert_eq!(family.count_in(&removed), family.count_in(&text));
    }

    #[test]
    fn spearman_is_bounded_and_symmetric(x in prop::collection::vec(-5.0f64..5.0, 2..30), seed in 0u64..1000) {
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| (v * 7.0 + (i as u64 ^ seed) as f64).sin()).collect();
        if let Some(r) = spearman(&x, &y) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
            prop_assert!((spearman(&y, &x).unwrap() - r).abs() < 1e-12);
        }
        if spearman(&x, &x).is_some() {
            prop_assert!((spearman(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
