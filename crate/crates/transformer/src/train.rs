//! Classifier fine-tuning, distillation and batch inference.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use tweetsift_core::seed;
use tweetsift_nnkit::{Adam, AdamConfig, Grads, Graph, Var};

use crate::config::{DistillConfig, FinetuneConfig};
use crate::model::EncoderModel;
use crate::tokenizer::WordTokenizer;
use crate::{Result, TransformerError};

/// `(step, loss)` rows from a training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<(usize, f64)>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (step, loss) in &self.rows {
            let _ = writeln!(out, "{step},{loss}");
        }
        out
    }

    pub fn first(&self) -> Option<f64> {
        self.rows.first().map(|r| r.1)
    }

    pub fn last(&self) -> Option<f64> {
        self.rows.last().map(|r| r.1)
    }
}

fn check_labels(texts: &[&str], labels: &[u8]) -> Result<()> {
    if texts.len() != labels.len() {
        return Err(TransformerError::Config(format!("{} texts but {} labels", texts.len(), labels.len())));
    }
    let Some(&first) = labels.first() else {
        return Err(TransformerError::EmptyCorpus);
    };
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(TransformerError::Config(format!("label {bad} is not binary")));
    }
    if labels.iter().all(|&l| l == first) {
        return Err(TransformerError::SingleClass(first));
    }
    Ok(())
}

/// One example's contribution: builds its loss into the graph.
type ExampleLoss<'m> = dyn Fn(&mut Graph, &EncoderModel, usize, &[usize], usize, u64) -> Result<Var> + 'm;

/// Shared minibatch loop: per-epoch shuffle, losses averaged over the batch,
/// global-norm clipping and an Adam step. Dropout seeds depend only on
/// `seed`, the step and the batch position.
fn run_epochs(
    mut model: EncoderModel,
    encoded: &[Vec<usize>],
    labels: &[u8],
    config: &FinetuneConfig,
    seed: u64,
    example_loss: &ExampleLoss<'_>,
) -> Result<(EncoderModel, TrainLog)> {
    if config.batch_size == 0 || config.lr <= 0.0 {
        return Err(TransformerError::Config("fine-tuning needs batch_size >= 1 and lr > 0".into()));
    }
    let mut order_rng = seed::stream(seed, "finetune/order");
    let dropout_root = seed::derive(seed, "finetune/dropout");
    let mut adam = Adam::new(&model.store, AdamConfig { lr: config.lr, ..Default::default() });
    let mut grads = Grads::zeros_like(&model.store);
    let mut log = TrainLog::default();
    let mut step = 0;
    for _ in 0..config.epochs {
        let mut order: Vec<usize> = (0..encoded.len()).collect();
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(config.batch_size) {
            grads.zero();
            let mut loss = 0.0;
            for (b, &i) in chunk.iter().enumerate() {
                let mut g = Graph::new(&model.store);
                let dseed = seed::derive(dropout_root, &format!("{step}/{b}"));
                let l = example_loss(&mut g, &model, i, &encoded[i], labels[i] as usize, dseed)?;
                let scaled = g.scale(l, 1.0 / chunk.len() as f64)?;
                loss += g.value(scaled)[0];
                g.backward(scaled, &mut grads)?;
            }
            grads.clip_global_norm(config.clip_norm);
            adam.step(&mut model.store, &grads)?;
            log.rows.push((step, loss));
            step += 1;
        }
    }
    Ok((model, log))
}

fn encode_all(tokenizer: &WordTokenizer, texts: &[&str], max_len: usize) -> Vec<Vec<usize>> {
    texts
        .iter()
        .map(|t| {
            let mut ids = tokenizer.encode(t).ids;
            ids.truncate(max_len);
            ids
        })
        .collect()
}

fn hard_loss(g: &mut Graph, model: &EncoderModel, ids: &[usize], label: usize, dseed: u64) -> Result<Var> {
    let mask = vec![true; ids.len()];
    let h = model.hidden(g, ids, &mask, Some(dseed), None)?;
    let logits = model.cls_logits(g, h)?;
    Ok(g.cross_entropy(logits, &[label])?)
}

/// Cross-entropy on the `[CLS]` head; every parameter is updated.
pub fn finetune_classifier(
    model: EncoderModel,
    tokenizer: &WordTokenizer,
    texts: &[&str],
    labels: &[u8],
    config: &FinetuneConfig,
    seed: u64,
) -> Result<(EncoderModel, TrainLog)> {
    check_labels(texts, labels)?;
    let encoded = encode_all(tokenizer, texts, model.config.max_len);
    run_epochs(model, &encoded, labels, config, seed, &|g, m, _, ids, label, dseed| hard_loss(g, m, ids, label, dseed))
}

fn check_distill(teacher: &EncoderModel, config: &DistillConfig) -> Result<()> {
    if config.temperature <= 0.0 || !config.temperature.is_finite() {
        return Err(TransformerError::Config(format!("temperature must be positive, got {}", config.temperature)));
    }
    if !(0.0..=1.0).contains(&config.alpha) {
        return Err(TransformerError::Config(format!("alpha {} outside [0, 1]", config.alpha)));
    }
    if config.student_layers == 0 || config.student_layers >= teacher.config.layers {
        return Err(TransformerError::Config(format!(
            "student needs fewer layers than the teacher's {}, got {}",
            teacher.config.layers, config.student_layers
        )));
    }
    Ok(())
}

/// Teacher probabilities at temperature `t` and their entropy.
fn soft_targets(teacher: &EncoderModel, ids: &[usize], t: f64) -> Result<(Vec<f64>, f64)> {
    let mask = vec![true; ids.len()];
    let mut g = Graph::new(&teacher.store);
    let h = teacher.hidden(&mut g, ids, &mask, None, None)?;
    let logits = teacher.cls_logits(&mut g, h)?;
    let scaled = g.scale(logits, 1.0 / t)?;
    let p = g.softmax(scaled)?;
    let p = g.value(p).to_vec();
    let entropy = -p.iter().filter(|&&q| q > 0.0).map(|q| q * q.ln()).sum::<f64>();
    Ok((p, entropy))
}

/// `(CE, KL)` for one text with dropout disabled: the hard-label loss of the
/// student and KL(teacher_T || student_T).
pub fn distill_terms(
    teacher: &EncoderModel,
    student: &EncoderModel,
    tokenizer: &WordTokenizer,
    text: &str,
    label: u8,
    temperature: f64,
) -> Result<(f64, f64)> {
    let ids = tokenizer.encode(text).ids;
    let (p, entropy) = soft_targets(teacher, &ids, temperature)?;
    let mask = vec![true; ids.len()];
    let mut g = Graph::new(&student.store);
    let h = student.hidden(&mut g, &ids, &mask, None, None)?;
    let logits = student.cls_logits(&mut g, h)?;
    let ce = g.cross_entropy(logits, &[label as usize])?;
    let scaled = g.scale(logits, 1.0 / temperature)?;
    let soft = g.soft_cross_entropy(scaled, &p)?;
    Ok((g.value(ce)[0], g.value(soft)[0] - entropy))
}

/// Trains a `student_layers`-deep copy of `teacher` (alternate layers) on
/// `alpha * CE + (1 - alpha) * T^2 * KL`. The teacher stays frozen and runs
/// without dropout. With `alpha == 1` the soft term is never built, so the
/// run matches [`finetune_classifier`] on the same initial student.
pub fn distill(
    teacher: &EncoderModel,
    tokenizer: &WordTokenizer,
    texts: &[&str],
    labels: &[u8],
    finetune: &FinetuneConfig,
    config: &DistillConfig,
    seed: u64,
) -> Result<(EncoderModel, TrainLog)> {
    check_distill(teacher, config)?;
    check_labels(texts, labels)?;
    let student = EncoderModel::student_of(teacher, config.student_layers)?;
    let encoded = encode_all(tokenizer, texts, student.config.max_len);
    let (t, alpha) = (config.temperature, config.alpha);
    let soft: Vec<(Vec<f64>, f64)> = if alpha < 1.0 {
        encoded.iter().map(|ids| soft_targets(teacher, ids, t)).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    run_epochs(student, &encoded, labels, finetune, seed, &|g, m, i, ids, label, dseed| {
        if alpha == 1.0 {
            return hard_loss(g, m, ids, label, dseed);
        }
        let mask = vec![true; ids.len()];
        let h = m.hidden(g, ids, &mask, Some(dseed), None)?;
        let logits = m.cls_logits(g, h)?;
        let ce = g.cross_entropy(logits, &[label])?;
        let scaled = g.scale(logits, 1.0 / t)?;
        let (p, entropy) = &soft[i];
        let cross = g.soft_cross_entropy(scaled, p)?;
        let neg_entropy = g.constant(tweetsift_nnkit::Tensor::scalar(-entropy))?;
        let kl = g.add(cross, neg_entropy)?;
        let hard = g.scale(ce, alpha)?;
        let soft_part = g.scale(kl, (1.0 - alpha) * t * t)?;
        Ok(g.add(hard, soft_part)?)
    })
}

/// Positive-class probabilities for every text.
pub fn predict_all(model: &EncoderModel, tokenizer: &WordTokenizer, texts: &[&str]) -> Result<Vec<f64>> {
    texts.iter().map(|t| model.predict_proba(tokenizer, t)).collect()
}
