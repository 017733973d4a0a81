mod common;

use hiernote::corpus::{generate_corpus, select_single_note, split_patients, Corpus, GeneratorSpec, Label, NoteSelection, Patient};
use hiernote::encoder::{extract_representations, loss_and_grad, predict_scores, Classifier, EncoderModel, ModelConfig, StopMetric, TrainConfig};
use hiernote::hierarchy::{
    build_concat, build_concat_all, predict_ms, read_rep_cache, step1_examples, train_step2, write_rep_cache,
    ConcatRepresentation, FrozenPipeline, MlpModel, MsConfig,
};
use hiernote::metrics::{auroc, Prediction};
use hiernote::tokenizer::{build_vocab, Vocabulary};
use hiernote::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn ms(n: usize, dropout: f64, seed: u64) -> MsConfig {
    MsConfig {
        n,
        mlp_hidden: 8,
        mlp_layers: 2,
        dropout,
        seed,
    }
}

fn random_rep(rng: &mut ChaCha8Rng, filled: usize, n: usize, dim: usize) -> ConcatRepresentation {
    let slots: Vec<Vec<f64>> = (0..filled)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    ConcatRepresentation::from_slots("p", &slots, n, dim).unwrap()
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut cfg = ms(3, 0.2, 9);
    cfg.mlp_layers = 3;
    let model = MlpModel::new(4, cfg).unwrap();
    let reps: Vec<ConcatRepresentation> = [3, 1, 2, 3].iter().map(|&k| random_rep(&mut rng, k, 3, 4)).collect();
    let batch: Vec<&ConcatRepresentation> = reps.iter().collect();
    let labels = [1, 0, 0, 1];
    let (_, grad) = loss_and_grad(&model, &batch, &labels, Some(17)).unwrap();
    let theta = model.params().values().to_vec();
    let mut probe = model.clone();
    let errors = common::finite_difference_check(&theta, model.params().tensors(), &grad, 1e-4, |p| {
        probe.params_mut().values_mut().copy_from_slice(p);
        loss_and_grad(&probe, &batch, &labels, Some(17)).unwrap().0
    });
    assert_eq!(errors.len(), 6);
    for e in &errors {
        assert!(e.relative_error < 1e-6, "{}: {:.3e}", e.name, e.relative_error);
    }
}

/// Copies a 3-slot model into a 5-slot one: shared input rows keep their
/// values, the rows of the two extra slots keep their random init.
fn widen(small: &MlpModel, dim: usize, wide_ms: MsConfig) -> MlpModel {
    let mut wide = MlpModel::new(dim, wide_ms).unwrap();
    let (n_small, n_wide) = (small.shape().ms.n, wide.shape().ms.n);
    let src = small.params().clone();
    let hidden = small.shape().ms.mlp_hidden;
    for t in src.tensors() {
        let from = src.get(&t.range());
        let to_info = wide.params().tensor(&t.name).unwrap().clone();
        let to = &mut wide.params_mut().values_mut()[to_info.range()];
        if t.name == "mlp.hidden0.weight" {
            let vec_rows = n_small * dim;
            to[..vec_rows * hidden].copy_from_slice(&from[..vec_rows * hidden]);
            let mask_at = n_wide * dim * hidden;
            to[mask_at..mask_at + n_small * hidden].copy_from_slice(&from[vec_rows * hidden..]);
        } else {
            to.copy_from_slice(from);
        }
    }
    wide
}

#[test]
fn padded_slots_leave_filled_slot_gradients_unchanged() {
    let dim = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let small = MlpModel::new(dim, ms(3, 0.3, 1)).unwrap();
    let wide = widen(&small, dim, ms(5, 0.3, 2));
    let full = random_rep(&mut rng, 3, 3, dim);
    let padded = ConcatRepresentation::from_slots(
        "p",
        &full.vector.chunks(dim).map(<[f64]>::to_vec).collect::<Vec<_>>(),
        5,
        dim,
    )
    .unwrap();

    let (loss_s, grad_s) = loss_and_grad(&small, &[&full], &[1], Some(3)).unwrap();
    let (loss_w, grad_w) = loss_and_grad(&wide, &[&padded], &[1], Some(3)).unwrap();
    assert_eq!(loss_s, loss_w);

    let hidden = 8;
    let w_small = small.params().tensor("mlp.hidden0.weight").unwrap().range();
    let w_wide = wide.params().tensor("mlp.hidden0.weight").unwrap().range();
    let (gs, gw) = (&grad_s[w_small], &grad_w[w_wide]);
    // filled vector rows, then filled mask rows
    assert_eq!(gs[..3 * dim * hidden], gw[..3 * dim * hidden]);
    assert_eq!(gs[3 * dim * hidden..], gw[5 * dim * hidden..(5 * dim + 3) * hidden]);
    // padded rows receive exactly nothing
    assert!(gw[3 * dim * hidden..5 * dim * hidden].iter().all(|&g| g == 0.0));
    assert!(gw[(5 * dim + 3) * hidden..].iter().all(|&g| g == 0.0));
    for name in ["mlp.hidden0.bias", "mlp.output.weight", "mlp.output.bias"] {
        let a = small.params().tensor(name).unwrap().range();
        let b = wide.params().tensor(name).unwrap().range();
        assert_eq!(grad_s[a], grad_w[b], "{name}");
    }
}

fn long_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-2,
        batch_size: 16,
        max_epochs: epochs,
        min_epochs: 0,
        early_stop_patience: epochs,
        early_stop_metric: StopMetric::MacroF1,
        seeds: vec![1],
        clip_norm: None,
    }
}

#[test]
fn separable_representations_are_fit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let dim = 6;
    let direction: Vec<f64> = (0..2 * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut data = Vec::new();
    while data.len() < 200 {
        let rep = random_rep(&mut rng, 2, 2, dim);
        let margin: f64 = rep.vector.iter().zip(&direction).map(|(a, b)| a * b).sum();
        if margin.abs() > 0.5 {
            data.push((rep, if margin > 0.0 { Label::TtYes } else { Label::TtNo }));
        }
    }
    let out = train_step2(&data, &data, &ms(2, 0.0, 5), &long_train(200), 5).unwrap();
    let inputs: Vec<&ConcatRepresentation> = data.iter().map(|(r, _)| r).collect();
    let scores = predict_scores(&out.model, &inputs).unwrap();
    let correct = scores
        .iter()
        .zip(&data)
        .filter(|(&s, (_, y))| Prediction::from_score("", s, *y).label_pred == *y)
        .count();
    assert_eq!(correct, data.len(), "training accuracy {}/{}", correct, data.len());
}

#[test]
fn uninformative_inputs_collapse_to_one_class() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let zero = ConcatRepresentation::from_slots("p", &[vec![0.0; 4]], 3, 4).unwrap();
    let data: Vec<(ConcatRepresentation, Label)> = (0..60)
        .map(|_| (zero.clone(), Label::from_index(usize::from(rng.random_bool(0.7)))))
        .collect();
    let out = train_step2(&data, &data, &ms(3, 0.1, 1), &long_train(5), 1).unwrap();
    let preds: Vec<Prediction> = data
        .iter()
        .map(|(r, y)| Prediction::from_score("p", out.model.predict_proba(r).unwrap()[1], *y))
        .collect();
    assert!(preds.windows(2).all(|w| w[0].score == w[1].score && w[0].label_pred == w[1].label_pred));
    assert_eq!(auroc(&preds).unwrap(), 0.5);
}

#[test]
fn step2_is_deterministic_and_checks_widths() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let data: Vec<(ConcatRepresentation, Label)> = (0..40)
        .map(|i| (random_rep(&mut rng, 1 + i % 3, 3, 4), Label::from_index(i % 2)))
        .collect();
    let a = train_step2(&data, &data, &ms(3, 0.1, 4), &long_train(3), 9).unwrap();
    let b = train_step2(&data, &data, &ms(3, 0.1, 4), &long_train(3), 9).unwrap();
    assert_eq!(a.model.params().values(), b.model.params().values());

    let mut bad = data.clone();
    bad.push((random_rep(&mut rng, 1, 3, 5), Label::TtNo));
    assert!(matches!(
        train_step2(&bad, &data, &ms(3, 0.1, 4), &long_train(3), 9),
        Err(Error::WidthMismatch { .. })
    ));
    assert!(matches!(
        train_step2(&data, &data, &ms(4, 0.1, 4), &long_train(3), 9),
        Err(Error::WidthMismatch { .. })
    ));
}

struct Fixture {
    corpus: Corpus,
    vocab: Vocabulary,
    encoder: EncoderModel,
}

/// An untrained-but-marked encoder: representation plumbing does not depend
/// on the weights being fitted.
fn fixture() -> Fixture {
    let corpus = generate_corpus(&GeneratorSpec::new(40, 0.7, 3)).unwrap();
    let vocab = build_vocab(corpus.notes().map(|n| n.text.as_str()), 1, 5000).unwrap();
    let mut encoder = EncoderModel::new(ModelConfig {
        vocab_size: vocab.len(),
        max_seq_len: 48,
        hidden_dim: 16,
        n_layers: 1,
        n_heads: 2,
        ffn_dim: 32,
        dropout_rate: 0.1,
        n_classes: 2,
        seed: 3,
    })
    .unwrap();
    encoder.mark_trained();
    Fixture { corpus, vocab, encoder }
}

fn patient_with_notes(corpus: &Corpus, fewer_than: usize) -> &Patient {
    corpus.patients.iter().find(|p| p.notes.len() < fewer_than).expect("a patient with few notes")
}

#[test]
fn concatenation_layout_and_degenerate_cases() {
    let f = fixture();
    let few = patient_with_notes(&f.corpus, 5);
    let k = few.notes.len();
    let rep = build_concat(&f.encoder, &f.vocab, few, 5).unwrap();
    assert_eq!(rep.vector.len(), 5 * 16);
    assert!(rep.vector[k * 16..].iter().all(|&v| v == 0.0));
    assert!(rep.vector[..k * 16].iter().any(|&v| v != 0.0));
    assert_eq!(rep.filled(), k);

    for p in f.corpus.patients.iter().take(10) {
        let one = build_concat(&f.encoder, &f.vocab, p, 1).unwrap();
        let single = extract_representations(&f.encoder, &f.vocab, &[select_single_note(p)]).unwrap();
        assert_eq!(one.vector, single[0].vector);
        assert_eq!(build_concat(&f.encoder, &f.vocab, p, 5).unwrap(), build_concat(&f.encoder, &f.vocab, p, 5).unwrap());
    }

    let mut untrained = f.encoder.clone();
    untrained.reset_classifier(1);
    assert!(matches!(build_concat(&untrained, &f.vocab, few, 3), Err(Error::Untrained)));
}

#[test]
fn step1_broadcasts_patient_labels_to_selected_notes() {
    let f = fixture();
    let split = split_patients(&f.corpus, [0.6, 0.2, 0.2], 1).unwrap();
    let view = split.training_view(&f.corpus).unwrap();
    for n in [1, 3, 5] {
        let examples = step1_examples(&view.train, &f.vocab, NoteSelection::Longest(n), 48);
        let expected: usize = view.train.iter().map(|p| p.notes.len().min(n)).sum();
        assert_eq!(examples.len(), expected);
        let mut at = 0;
        for p in &view.train {
            let k = p.notes.len().min(n);
            assert!(examples[at..at + k].iter().all(|(_, y)| *y == p.label.index()));
            at += k;
        }
    }
}

#[test]
fn ms_prediction_pipeline_and_cache_round_trip() {
    let f = fixture();
    let patients: Vec<&Patient> = f.corpus.patients.iter().collect();
    let reps = build_concat_all(&f.encoder, &f.vocab, &patients, 3).unwrap();
    let labeled: Vec<(ConcatRepresentation, Label)> = reps.iter().cloned().zip(patients.iter().map(|p| p.label)).collect();
    let mlp = train_step2(&labeled, &labeled, &ms(3, 0.1, 2), &long_train(2), 2).unwrap().model;

    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("reps.jsonl");
    write_rep_cache(&cache, &reps).unwrap();
    assert_eq!(read_rep_cache(&cache).unwrap(), reps);

    for (p, rep) in patients.iter().zip(&reps) {
        let out = predict_ms(&f.encoder, &f.vocab, &mlp, p).unwrap();
        let proba = mlp.predict_proba(rep).unwrap();
        assert!((proba[0] + proba[1] - 1.0).abs() < 1e-12);
        assert_eq!(out.prob_tt_yes, proba[1]);
        assert_eq!(out.label.is_positive(), out.prob_tt_yes > 0.5);
    }

    let pipeline = FrozenPipeline::ms(f.vocab.clone(), f.encoder.clone(), mlp.clone()).unwrap();
    assert_eq!(pipeline.name(), "MS-3");
    let before = pipeline.predict(&patients).unwrap();
    assert_eq!(before.len(), patients.len());
    pipeline.save(dir.path().join("ms3")).unwrap();
    let loaded = FrozenPipeline::load(dir.path().join("ms3")).unwrap();
    assert_eq!(loaded.predict(&patients).unwrap(), before);

    let single = FrozenPipeline::single(f.vocab.clone(), f.encoder.clone()).unwrap();
    single.save(dir.path().join("single")).unwrap();
    assert_eq!(FrozenPipeline::load(dir.path().join("single")).unwrap().name(), "single");

    let narrow = MlpModel::new(8, ms(3, 0.1, 2)).map(|mut m| {
        m.mark_trained();
        m
    });
    assert!(matches!(
        predict_ms(&f.encoder, &f.vocab, &narrow.unwrap(), patients[0]),
        Err(Error::ModelMismatch(_))
    ));
    let fresh = MlpModel::new(16, ms(3, 0.1, 2)).unwrap();
    assert!(matches!(predict_ms(&f.encoder, &f.vocab, &fresh, patients[0]), Err(Error::Untrained)));
}
