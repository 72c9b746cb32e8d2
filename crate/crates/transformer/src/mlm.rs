//! Masked-language-model batches and pretraining.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tweetsift_core::seed;
use tweetsift_nnkit::{Adam, AdamConfig, Grads, Graph};

use crate::config::PretrainConfig;
use crate::model::EncoderModel;
use crate::tokenizer::{WordTokenizer, MASK, PAD, SPECIALS};
use crate::train::TrainLog;
use crate::{Result, TransformerError};

/// Right-padded masked sequences. `targets[i][j]` holds the original id at
/// each selected position and `None` everywhere else.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmBatch {
    pub inputs: Vec<Vec<usize>>,
    pub attention: Vec<Vec<u8>>,
    pub targets: Vec<Vec<Option<usize>>>,
}

/// Number of positions selected out of `maskable`.
pub fn masked_count(maskable: usize, rate: f64) -> usize {
    if maskable == 0 {
        return 0;
    }
    ((rate * maskable as f64 + 1e-9).floor() as usize).clamp(1, maskable)
}

/// Masks one encoded sequence in place; position 0 (`[CLS]`) is never
/// chosen. Returns the per-position targets.
fn mask_sequence(ids: &mut [usize], vocab_len: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<Option<usize>> {
    let mut targets = vec![None; ids.len()];
    let maskable = ids.len().saturating_sub(1);
    let k = masked_count(maskable, rate);
    let mut picked = index::sample(rng, maskable, k).into_vec();
    picked.sort_unstable();
    for p in picked {
        let pos = p + 1;
        targets[pos] = Some(ids[pos]);
        let r: f64 = rng.gen();
        if r < 0.8 {
            ids[pos] = MASK;
        } else if r < 0.9 && vocab_len > SPECIALS.len() {
            ids[pos] = rng.gen_range(SPECIALS.len()..vocab_len);
        }
    }
    targets
}

fn check_rate(rate: f64) -> Result<()> {
    if rate > 0.0 && rate < 1.0 {
        Ok(())
    } else {
        Err(TransformerError::Config(format!("mask_rate {rate} outside (0, 1)")))
    }
}

/// Selected positions per sequence: 80% become `[MASK]`, 10% a random
/// non-special id, 10% stay unchanged.
pub fn make_mlm_batch(tokenizer: &WordTokenizer, texts: &[&str], mask_rate: f64, seed: u64) -> Result<MlmBatch> {
    check_rate(mask_rate)?;
    let mut rng = seed::stream(seed, "mlm/batch");
    let encoded: Vec<Vec<usize>> = texts.iter().map(|t| tokenizer.encode(t).ids).collect();
    let width = encoded.iter().map(Vec::len).max().unwrap_or(0);
    let mut batch = MlmBatch { inputs: Vec::new(), attention: Vec::new(), targets: Vec::new() };
    for mut ids in encoded {
        let n = ids.len();
        let mut targets = mask_sequence(&mut ids, tokenizer.len(), mask_rate, &mut rng);
        ids.resize(width, PAD);
        targets.resize(width, None);
        let mut attention = vec![1u8; n];
        attention.resize(width, 0);
        batch.inputs.push(ids);
        batch.attention.push(attention);
        batch.targets.push(targets);
    }
    Ok(batch)
}

/// Masked-token cross-entropy with Adam. Each step draws `batch_size`
/// sequences from a reshuffled pass over `texts`; the step loss averages
/// over every masked position in the batch. Logs one row per step.
pub fn pretrain_mlm(
    mut model: EncoderModel,
    tokenizer: &WordTokenizer,
    texts: &[&str],
    config: &PretrainConfig,
    seed: u64,
) -> Result<(EncoderModel, TrainLog)> {
    check_rate(config.mask_rate)?;
    if config.batch_size == 0 || config.lr <= 0.0 {
        return Err(TransformerError::Config("pretraining needs batch_size >= 1 and lr > 0".into()));
    }
    let encoded: Vec<Vec<usize>> =
        texts.iter().map(|t| tokenizer.encode(t).ids).filter(|ids| ids.len() > 1).collect();
    if encoded.is_empty() {
        return Err(TransformerError::EmptyCorpus);
    }
    let mut order_rng = seed::stream(seed, "mlm/order");
    let mut mask_rng = seed::stream(seed, "mlm/mask");
    let dropout_root = seed::derive(seed, "mlm/dropout");
    let mut adam = Adam::new(&model.store, AdamConfig { lr: config.lr, ..Default::default() });
    let mut grads = Grads::zeros_like(&model.store);
    let mut order: Vec<usize> = Vec::new();
    let mut log = TrainLog::default();
    for step in 0..config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size {
            if order.is_empty() {
                order = (0..encoded.len()).collect();
                order.shuffle(&mut order_rng);
            }
            let i = order.pop().expect("refilled above");
            let mut ids = encoded[i].clone();
            let targets = mask_sequence(&mut ids, tokenizer.len().min(model.config.vocab_size), config.mask_rate, &mut mask_rng);
            batch.push((ids, targets));
        }
        let total: usize = batch.iter().map(|(_, t)| t.iter().flatten().count()).sum();
        grads.zero();
        let mut loss = 0.0;
        for (b, (ids, targets)) in batch.iter().enumerate() {
            let positions: Vec<usize> = (0..ids.len()).filter(|&j| targets[j].is_some()).collect();
            let wanted: Vec<usize> = positions.iter().map(|&j| targets[j].expect("selected")).collect();
            let mask = vec![true; ids.len()];
            let mut g = Graph::new(&model.store);
            let dseed = seed::derive(dropout_root, &format!("{step}/{b}"));
            let h = model.hidden(&mut g, ids, &mask, Some(dseed), None)?;
            let logits = model.mlm_logits(&mut g, h, &positions)?;
            let ce = g.cross_entropy(logits, &wanted)?;
            let weighted = g.scale(ce, positions.len() as f64 / total as f64)?;
            loss += g.value(weighted)[0];
            g.backward(weighted, &mut grads)?;
        }
        grads.clip_global_norm(config.clip_norm);
        adam.step(&mut model.store, &grads)?;
        log.rows.push((step, loss));
    }
    model.pretrained = true;
    Ok((model, log))
}

/// Masked-token loss of `model` on a fixed batch, without dropout.
pub fn mlm_loss(model: &EncoderModel, batch: &MlmBatch) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((ids, att), targets) in batch.inputs.iter().zip(&batch.attention).zip(&batch.targets) {
        let positions: Vec<usize> = (0..ids.len()).filter(|&j| targets[j].is_some()).collect();
        if positions.is_empty() {
            continue;
        }
        let wanted: Vec<usize> = positions.iter().map(|&j| targets[j].expect("selected")).collect();
        let mask: Vec<bool> = att.iter().map(|&a| a == 1).collect();
        let (ids, mask) = crate::model::trim(ids, &mask);
        let mut g = Graph::new(&model.store);
        let h = model.hidden(&mut g, ids, mask, None, None)?;
        let logits = model.mlm_logits(&mut g, h, &positions)?;
        let ce = g.cross_entropy(logits, &wanted)?;
        sum += g.value(ce)[0] * positions.len() as f64;
        count += positions.len();
    }
    if count == 0 {
        return Err(TransformerError::EmptyCorpus);
    }
    Ok(sum / count as f64)
}
