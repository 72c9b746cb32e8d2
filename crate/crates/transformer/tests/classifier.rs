use tweetsift_core::corpus::{build_dataset, stratified_split};
use tweetsift_core::synthetic::{generate, SyntheticConfig};
use tweetsift_transformer::{
    distill, distill_terms, finetune_classifier, predict_all, DistillConfig, EncoderConfig, EncoderModel,
    FinetuneConfig, TransformerError, WordTokenizer,
};

fn small(layers: usize, vocab: usize) -> EncoderConfig {
    EncoderConfig { layers, d_model: 32, d_ff: 64, heads: 4, max_len: 32, vocab_size: vocab, ..Default::default() }
}

const TOY: [(&str, u8); 10] = [
    ("flood warning downtown", 1),
    ("earthquake hits the coast", 1),
    ("wildfire evacuation ordered", 1),
    ("tornado destroyed homes", 1),
    ("rescue teams search rubble", 1),
    ("loving this new album", 0),
    ("pizza night with friends", 0),
    ("great game last night", 0),
    ("my cat is so cute", 0),
    ("coffee and a good book", 0),
];

fn toy() -> (Vec<&'static str>, Vec<u8>, WordTokenizer) {
    let texts: Vec<&str> = TOY.iter().map(|t| t.0).collect();
    let labels: Vec<u8> = TOY.iter().map(|t| t.1).collect();
    let tok = WordTokenizer::train(texts.iter().copied(), 100, 32).unwrap();
    (texts, labels, tok)
}

#[test]
fn balanced_data_starts_near_ln2() {
    let (texts, labels, tok) = toy();
    let m = EncoderModel::new(small(2, tok.len()), 1).unwrap();
    let cfg = FinetuneConfig { epochs: 1, batch_size: 10, ..Default::default() };
    let (_, log) = finetune_classifier(m, &tok, &texts, &labels, &cfg, 2).unwrap();
    let ln2 = 2f64.ln();
    assert!((log.first().unwrap() - ln2).abs() < 0.1 * ln2, "{:?}", log.first());
}

#[test]
fn separable_toy_set_is_fit_within_two_hundred_steps() {
    let (texts, labels, tok) = toy();
    let m = EncoderModel::new(small(2, tok.len()), 3).unwrap();
    let cfg = FinetuneConfig { epochs: 200, batch_size: 10, lr: 1e-3, ..Default::default() };
    let (m, log) = finetune_classifier(m, &tok, &texts, &labels, &cfg, 4).unwrap();
    assert_eq!(log.rows.len(), 200);
    let probs = predict_all(&m, &tok, &texts).unwrap();
    for ((p, &y), t) in probs.iter().zip(&labels).zip(&texts) {
        assert_eq!(u8::from(*p >= 0.5), y, "{t}: {p}");
    }
}

#[test]
fn single_class_and_empty_data_are_rejected() {
    let (texts, _, tok) = toy();
    let m = EncoderModel::new(small(1, tok.len()), 1).unwrap();
    let cfg = FinetuneConfig::default();
    let ones = vec![1u8; texts.len()];
    assert!(matches!(
        finetune_classifier(m.clone(), &tok, &texts, &ones, &cfg, 1),
        Err(TransformerError::SingleClass(1))
    ));
    assert!(matches!(finetune_classifier(m, &tok, &[], &[], &cfg, 1), Err(TransformerError::EmptyCorpus)));
}

#[test]
fn inference_is_deterministic_and_handles_empty_text() {
    let (_, _, tok) = toy();
    let m = EncoderModel::new(small(2, tok.len()), 5).unwrap();
    let p = m.predict_proba(&tok, "").unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert_eq!(p, m.predict_proba(&tok, "").unwrap());
    let pair = m.class_probs(&tok.encode("flood warning").ids).unwrap();
    assert!((pair[0] + pair[1] - 1.0).abs() < 1e-9);
    assert_eq!(pair[1], m.predict_proba(&tok, "flood warning").unwrap());
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let (texts, labels, tok) = toy();
    let m = EncoderModel::new(small(2, tok.len()), 6).unwrap();
    let cfg = FinetuneConfig { epochs: 2, batch_size: 4, ..Default::default() };
    let (m, _) = finetune_classifier(m, &tok, &texts, &labels, &cfg, 7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    m.save(dir.path()).unwrap();
    tok.save(dir.path().join("vocab.tsv")).unwrap();
    let back = EncoderModel::load(dir.path()).unwrap();
    let tok_back = WordTokenizer::load(dir.path().join("vocab.tsv"), 32).unwrap();
    assert_eq!(back, m);
    let before = predict_all(&m, &tok, &texts).unwrap();
    let after = predict_all(&back, &tok_back, &texts).unwrap();
    assert_eq!(before.iter().map(|p| p.to_bits()).collect::<Vec<_>>(), after.iter().map(|p| p.to_bits()).collect::<Vec<_>>());
}

#[test]
fn fine_tuning_is_deterministic() {
    let (texts, labels, tok) = toy();
    let cfg = FinetuneConfig { epochs: 2, batch_size: 3, ..Default::default() };
    let run = |seed| {
        let m = EncoderModel::new(small(2, tok.len()), 8).unwrap();
        finetune_classifier(m, &tok, &texts, &labels, &cfg, seed).unwrap()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1).0, run(2).0);
}

fn teacher(texts: &[&str], labels: &[u8], tok: &WordTokenizer, epochs: usize) -> EncoderModel {
    let m = EncoderModel::new(small(4, tok.len()), 20).unwrap();
    let cfg = FinetuneConfig { epochs, batch_size: 5, lr: 1e-3, ..Default::default() };
    finetune_classifier(m, tok, texts, labels, &cfg, 21).unwrap().0
}

#[test]
fn alpha_one_matches_plain_fine_tuning_step_for_step() {
    let (texts, labels, tok) = toy();
    let t = teacher(&texts, &labels, &tok, 3);
    let ft = FinetuneConfig { epochs: 3, batch_size: 4, ..Default::default() };
    let dc = DistillConfig { alpha: 1.0, temperature: 3.0, student_layers: 2 };
    let (distilled, dlog) = distill(&t, &tok, &texts, &labels, &ft, &dc, 30).unwrap();
    let start = EncoderModel::student_of(&t, 2).unwrap();
    let (plain, plog) = finetune_classifier(start, &tok, &texts, &labels, &ft, 30).unwrap();
    assert_eq!(dlog, plog);
    assert_eq!(distilled.store.to_bytes(), plain.store.to_bytes());
}

#[test]
fn identical_student_has_zero_kl() {
    let (texts, labels, tok) = toy();
    let t = teacher(&texts, &labels, &tok, 2);
    for (text, &y) in texts.iter().zip(&labels) {
        for temp in [0.5, 1.0, 4.0] {
            let (ce, kl) = distill_terms(&t, &t.clone(), &tok, text, y, temp).unwrap();
            assert!(kl.abs() < 1e-12, "{kl}");
            assert!(ce > 0.0);
        }
    }
}

#[test]
fn distillation_config_is_validated() {
    let (texts, labels, tok) = toy();
    let t = teacher(&texts, &labels, &tok, 1);
    let ft = FinetuneConfig::default();
    for dc in [
        DistillConfig { temperature: 0.0, ..Default::default() },
        DistillConfig { temperature: -1.0, ..Default::default() },
        DistillConfig { alpha: 1.5, ..Default::default() },
        DistillConfig { student_layers: 4, ..Default::default() },
    ] {
        assert!(matches!(distill(&t, &tok, &texts, &labels, &ft, &dc, 1), Err(TransformerError::Config(_))));
    }
}

/// Default distillation settings on a synthetic corpus: the half-depth
/// student keeps at least 95% of the teacher's held-out accuracy.
#[test]
fn student_retains_teacher_accuracy_on_synthetic_tweets() {
    let data = build_dataset(&generate(&SyntheticConfig { rows: 1200, seed: 77, ..Default::default() })).unwrap();
    let split = stratified_split(&data, 0.8, 42).unwrap();
    let train: Vec<&str> = split.train.texts().collect();
    let test: Vec<&str> = split.test.texts().collect();
    let tok = WordTokenizer::train(train.iter().copied(), 8000, 64).unwrap();
    let cfg = EncoderConfig { layers: 4, vocab_size: tok.len(), ..Default::default() };
    let ft = FinetuneConfig::default();
    let t = EncoderModel::new(cfg, 1).unwrap();
    let (t, _) = finetune_classifier(t, &tok, &train, &split.train.labels(), &ft, 2).unwrap();
    let (s, _) = distill(&t, &tok, &train, &split.train.labels(), &ft, &DistillConfig::default(), 3).unwrap();
    assert_eq!(s.config.layers, 2);
    let acc = |m: &EncoderModel| {
        let p = predict_all(m, &tok, &test).unwrap();
        let hits = p.iter().zip(split.test.labels()).filter(|(p, y)| u8::from(**p >= 0.5) == *y).count();
        hits as f64 / test.len() as f64
    };
    let (ta, sa) = (acc(&t), acc(&s));
    assert!(ta > 0.7, "teacher {ta}");
    assert!(sa >= 0.95 * ta, "student {sa} teacher {ta}");
}
