//! Post-norm encoder with masked-language-model and classification heads.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use tweetsift_core::seed;
use tweetsift_nnkit::{Graph, ParamId, ParamStore, Tensor, Var};

use crate::config::{AttentionKind, EncoderConfig};
use crate::tokenizer::WordTokenizer;
use crate::{Result, TransformerError};

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
struct LayerIds {
    q: (ParamId, ParamId),
    k: (ParamId, ParamId),
    v: (ParamId, ParamId),
    o: (ParamId, ParamId),
    /// Relative-position projections (disentangled only, no bias).
    qr: Option<ParamId>,
    kr: Option<ParamId>,
    ln1: (ParamId, ParamId),
    ff1: (ParamId, ParamId),
    ff2: (ParamId, ParamId),
    ln2: (ParamId, ParamId),
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    tok: ParamId,
    pos: Option<ParamId>,
    rel: Option<ParamId>,
    emb_ln: (ParamId, ParamId),
    layers: Vec<LayerIds>,
    mlm: (ParamId, ParamId),
    cls: (ParamId, ParamId),
}

enum Init {
    Normal,
    Zeros,
    Ones,
}

impl Layout {
    /// Registers every parameter of `cfg` in a fixed order.
    fn build(cfg: &EncoderConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut add = |name: &str, shape: &[usize], init: Init| -> Result<ParamId> {
            let t = match init {
                Init::Normal => Tensor::from_fn(shape, |_| normal.sample(rng)),
                Init::Zeros => Tensor::zeros(shape),
                Init::Ones => Tensor::from_fn(shape, |_| 1.0),
            };
            Ok(store.add(name, t)?)
        };
        let (d, ff, v) = (cfg.d_model, cfg.d_ff, cfg.vocab_size);
        let tok = add("embed.token", &[v, d], Init::Normal)?;
        let (pos, rel) = match cfg.attention {
            AttentionKind::Absolute => (Some(add("embed.position", &[cfg.max_len, d], Init::Normal)?), None),
            AttentionKind::Disentangled => (None, Some(add("embed.relative", &[2 * cfg.rel_window + 1, d], Init::Normal)?)),
        };
        let emb_ln = (add("embed.norm.gain", &[d], Init::Ones)?, add("embed.norm.bias", &[d], Init::Zeros)?);
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let mut lin = |name: &str, rows: usize, cols: usize| -> Result<(ParamId, ParamId)> {
                Ok((
                    add(&format!("layer{l}.{name}.weight"), &[rows, cols], Init::Normal)?,
                    add(&format!("layer{l}.{name}.bias"), &[cols], Init::Zeros)?,
                ))
            };
            let q = lin("query", d, d)?;
            let k = lin("key", d, d)?;
            let vv = lin("value", d, d)?;
            let o = lin("output", d, d)?;
            let ff1 = lin("ff_in", d, ff)?;
            let ff2 = lin("ff_out", ff, d)?;
            let disentangled = cfg.attention == AttentionKind::Disentangled;
            let (qr, kr) = if disentangled {
                (
                    Some(add(&format!("layer{l}.rel_query.weight"), &[d, d], Init::Normal)?),
                    Some(add(&format!("layer{l}.rel_key.weight"), &[d, d], Init::Normal)?),
                )
            } else {
                (None, None)
            };
            let ln1 = (add(&format!("layer{l}.attn_norm.gain"), &[d], Init::Ones)?, add(&format!("layer{l}.attn_norm.bias"), &[d], Init::Zeros)?);
            let ln2 = (add(&format!("layer{l}.ff_norm.gain"), &[d], Init::Ones)?, add(&format!("layer{l}.ff_norm.bias"), &[d], Init::Zeros)?);
            layers.push(LayerIds { q, k, v: vv, o, qr, kr, ln1, ff1, ff2, ln2 });
        }
        let mlm = (add("mlm_head.weight", &[d, v], Init::Normal)?, add("mlm_head.bias", &[v], Init::Zeros)?);
        let cls = (add("cls_head.weight", &[d, 2], Init::Normal)?, add("cls_head.bias", &[2], Init::Zeros)?);
        Ok(Self { tok, pos, rel, emb_ln, layers, mlm, cls })
    }
}

/// Per-layer, per-head attention weights (and pre-softmax logits) recorded
/// during a forward pass.
#[derive(Debug, Default)]
pub(crate) struct Capture {
    pub weights: Vec<Vec<Var>>,
    pub logits: Vec<Vec<Var>>,
}

/// Mixes a dropout seed with a site counter (splitmix64 finalizer).
fn site_seed(seed: u64, site: u64) -> u64 {
    let mut z = seed ^ site.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Dropout state for one forward pass; `None` disables dropout.
struct Dropout {
    p: f64,
    seed: Option<u64>,
    site: u64,
}

impl Dropout {
    fn apply(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        match self.seed {
            Some(seed) if self.p > 0.0 => {
                self.site += 1;
                Ok(g.dropout(x, self.p, site_seed(seed, self.site))?)
            }
            _ => Ok(x),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    format: String,
    config: EncoderConfig,
    pretrained: bool,
}

const META_FORMAT: &str = "tweetsift-encoder";

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub config: EncoderConfig,
    pub store: ParamStore,
    /// Whether masked-language-model pretraining preceded fine-tuning.
    pub pretrained: bool,
    layout: Layout,
}

/// Keeps positions up to the last real one; trailing padding cannot affect
/// real positions because padded keys get zero attention weight.
pub(crate) fn trim<'a>(ids: &'a [usize], mask: &'a [bool]) -> (&'a [usize], &'a [bool]) {
    let n = mask.iter().rposition(|&m| m).map_or(0, |i| i + 1);
    (&ids[..n], &mask[..n])
}

impl EncoderModel {
    /// Random initialization: normal(0, 0.02) weights, zero biases, unit
    /// norm gains.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = seed::stream(seed, "encoder/init");
        let layout = Layout::build(&config, &mut store, &mut rng)?;
        Ok(Self { config, store, pretrained: false, layout })
    }

    /// A `layers`-deep student initialized from every other teacher layer
    /// (layer `i` copies teacher layer `2i`), plus the teacher's embeddings
    /// and heads.
    pub fn student_of(teacher: &EncoderModel, layers: usize) -> Result<Self> {
        if layers == 0 || layers >= teacher.config.layers {
            return Err(TransformerError::Config(format!(
                "student needs between 1 and {} layers, got {layers}",
                teacher.config.layers - 1
            )));
        }
        let config = EncoderConfig { layers, ..teacher.config.clone() };
        let mut student = Self::new(config, 0)?;
        for id in student.store.ids().collect::<Vec<_>>() {
            let name = student.store.name(id).to_string();
            let source = match name.strip_prefix("layer") {
                Some(rest) => {
                    let (idx, tail) = rest.split_once('.').expect("layer names have a dot");
                    let i: usize = idx.parse().expect("numeric layer index");
                    format!("layer{}.{tail}", (2 * i).min(teacher.config.layers - 1))
                }
                None => name.clone(),
            };
            let tid = teacher.store.id(&source).expect("student parameter exists in teacher");
            *student.store.get_mut(id) = teacher.store.get(tid).clone();
        }
        student.pretrained = teacher.pretrained;
        Ok(student)
    }

    pub fn param_count(&self) -> usize {
        self.store.numel()
    }

    /// Final hidden states `[n, d]` built into `g`, whose store must share
    /// this model's layout.
    pub(crate) fn hidden(
        &self,
        g: &mut Graph,
        ids: &[usize],
        mask: &[bool],
        dropout_seed: Option<u64>,
        mut capture: Option<&mut Capture>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let lay = &self.layout;
        if ids.is_empty() || ids.len() != mask.len() {
            return Err(TransformerError::Config(format!("{} ids with {} mask entries", ids.len(), mask.len())));
        }
        if ids.len() > cfg.max_len {
            return Err(TransformerError::Config(format!("sequence of {} exceeds max_len {}", ids.len(), cfg.max_len)));
        }
        let n = ids.len();
        let mut drop = Dropout { p: cfg.dropout, seed: dropout_seed, site: 0 };
        let mut h = g.embedding(lay.tok, ids)?;
        if let Some(pos) = lay.pos {
            let positions: Vec<usize> = (0..n).collect();
            let p = g.embedding(pos, &positions)?;
            h = g.add(h, p)?;
        }
        let (eg, eb) = (g.param(lay.emb_ln.0), g.param(lay.emb_ln.1));
        h = g.layer_norm(h, eg, eb)?;
        h = drop.apply(g, h)?;
        let rel = lay.rel.map(|r| g.param(r));
        let hd = cfg.head_dim();
        for layer in &lay.layers {
            let q = linear(g, h, layer.q)?;
            let k = linear(g, h, layer.k)?;
            let v = linear(g, h, layer.v)?;
            let rel_proj = match (rel, layer.qr, layer.kr) {
                (Some(r), Some(qr), Some(kr)) => {
                    let (qw, kw) = (g.param(qr), g.param(kr));
                    Some((g.matmul(r, qw)?, g.matmul(r, kw)?))
                }
                _ => None,
            };
            let mut heads = Vec::with_capacity(cfg.heads);
            let mut layer_w = Vec::new();
            let mut layer_l = Vec::new();
            for head in 0..cfg.heads {
                let qh = g.slice_cols(q, head * hd, hd)?;
                let kh = g.slice_cols(k, head * hd, hd)?;
                let vh = g.slice_cols(v, head * hd, hd)?;
                let kt = g.transpose(kh)?;
                let c2c = g.matmul(qh, kt)?;
                let logits = match rel_proj {
                    None => g.scale(c2c, 1.0 / (hd as f64).sqrt())?,
                    Some((qr, kr)) => {
                        let k_rel = g.slice_cols(kr, head * hd, hd)?;
                        let k_rel_t = g.transpose(k_rel)?;
                        let c2p_all = g.matmul(qh, k_rel_t)?;
                        let c2p = g.rel_gather(c2p_all, cfg.rel_window)?;
                        let q_rel = g.slice_cols(qr, head * hd, hd)?;
                        let q_rel_t = g.transpose(q_rel)?;
                        let p2c_all = g.matmul(kh, q_rel_t)?;
                        let p2c_by_key = g.rel_gather(p2c_all, cfg.rel_window)?;
                        let p2c = g.transpose(p2c_by_key)?;
                        let sum = g.add(c2c, c2p)?;
                        let sum = g.add(sum, p2c)?;
                        g.scale(sum, 1.0 / (3.0 * hd as f64).sqrt())?
                    }
                };
                let weights = g.masked_softmax(logits, mask)?;
                layer_w.push(weights);
                layer_l.push(logits);
                let weights = drop.apply(g, weights)?;
                heads.push(g.matmul(weights, vh)?);
            }
            if let Some(c) = capture.as_deref_mut() {
                c.weights.push(layer_w);
                c.logits.push(layer_l);
            }
            let ctx = g.concat_cols(&heads)?;
            let attn = linear(g, ctx, layer.o)?;
            let attn = drop.apply(g, attn)?;
            let res = g.add(h, attn)?;
            let (g1, b1) = (g.param(layer.ln1.0), g.param(layer.ln1.1));
            let mid = g.layer_norm(res, g1, b1)?;
            let up = linear(g, mid, layer.ff1)?;
            let act = g.gelu(up)?;
            let down = linear(g, act, layer.ff2)?;
            let down = drop.apply(g, down)?;
            let res = g.add(mid, down)?;
            let (g2, b2) = (g.param(layer.ln2.0), g.param(layer.ln2.1));
            h = g.layer_norm(res, g2, b2)?;
        }
        Ok(h)
    }

    /// Classification logits `[1, 2]` from the first (`[CLS]`) position.
    pub(crate) fn cls_logits(&self, g: &mut Graph, hidden: Var) -> Result<Var> {
        let first = g.select_rows(hidden, &[0])?;
        linear(g, first, self.layout.cls)
    }

    /// Vocabulary logits `[positions, V]` at the given positions.
    pub(crate) fn mlm_logits(&self, g: &mut Graph, hidden: Var, positions: &[usize]) -> Result<Var> {
        let rows = g.select_rows(hidden, positions)?;
        linear(g, rows, self.layout.mlm)
    }

    /// Sum of the classification loss on `label` and the masked-token loss
    /// at `mlm_positions`; every parameter feeds it. Used by gradient checks.
    pub fn joint_loss(
        &self,
        g: &mut Graph,
        ids: &[usize],
        mask: &[bool],
        label: usize,
        mlm_positions: &[usize],
        mlm_targets: &[usize],
    ) -> Result<Var> {
        let h = self.hidden(g, ids, mask, None, None)?;
        let cl = self.cls_logits(g, h)?;
        let ce = g.cross_entropy(cl, &[label])?;
        let ml = self.mlm_logits(g, h, mlm_positions)?;
        let mce = g.cross_entropy(ml, mlm_targets)?;
        Ok(g.add(ce, mce)?)
    }

    /// Class probabilities `[p0, p1]` with dropout disabled.
    pub fn class_probs(&self, ids: &[usize]) -> Result<[f64; 2]> {
        let mask = vec![true; ids.len()];
        let mut g = Graph::new(&self.store);
        let h = self.hidden(&mut g, ids, &mask, None, None)?;
        let logits = self.cls_logits(&mut g, h)?;
        let p = g.softmax(logits)?;
        let v = g.value(p);
        Ok([v[0], v[1]])
    }

    /// Positive-class probability of `text`.
    pub fn predict_proba(&self, tokenizer: &WordTokenizer, text: &str) -> Result<f64> {
        Ok(self.class_probs(&tokenizer.encode(text).ids)?[1])
    }

    /// Attention weights per layer and head, dropout disabled.
    pub fn attention_maps(&self, ids: &[usize], mask: &[bool]) -> Result<Vec<Vec<Tensor>>> {
        self.captured(ids, mask, |c| &c.weights)
    }

    /// Scaled attention logits per layer and head, before masking.
    pub fn attention_logits(&self, ids: &[usize], mask: &[bool]) -> Result<Vec<Vec<Tensor>>> {
        self.captured(ids, mask, |c| &c.logits)
    }

    fn captured(&self, ids: &[usize], mask: &[bool], pick: impl Fn(&Capture) -> &Vec<Vec<Var>>) -> Result<Vec<Vec<Tensor>>> {
        let mut g = Graph::new(&self.store);
        let mut cap = Capture::default();
        self.hidden(&mut g, ids, mask, None, Some(&mut cap))?;
        Ok(pick(&cap).iter().map(|layer| layer.iter().map(|&v| g.to_tensor(v)).collect()).collect())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let meta = ModelMeta { format: META_FORMAT.into(), config: self.config.clone(), pretrained: self.pretrained };
        std::fs::write(dir.join("encoder.json"), serde_json::to_string_pretty(&meta)?)?;
        self.store.save(dir.join("params.bin"))?;
        Ok(())
    }

    /// Rebuilds the layout from the saved config and loads the values,
    /// checking every name and shape.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: ModelMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("encoder.json"))?)?;
        if meta.format != META_FORMAT {
            return Err(TransformerError::Config(format!("unexpected model format `{}`", meta.format)));
        }
        let mut model = Self::new(meta.config, 0)?;
        model.store.load_values(&std::fs::read(dir.join("params.bin"))?)?;
        model.pretrained = meta.pretrained;
        Ok(model)
    }
}

fn linear(g: &mut Graph, x: Var, (w, b): (ParamId, ParamId)) -> Result<Var> {
    let (wv, bv) = (g.param(w), g.param(b));
    let y = g.matmul(x, wv)?;
    Ok(g.add_row(y, bv)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: AttentionKind) -> EncoderConfig {
        EncoderConfig {
            layers: 2,
            heads: 2,
            d_model: 8,
            d_ff: 16,
            max_len: 10,
            vocab_size: 20,
            dropout: 0.1,
            attention: kind,
            rel_window: 2,
        }
    }

    #[test]
    fn single_token_attention_is_identity_weight() {
        for kind in [AttentionKind::Absolute, AttentionKind::Disentangled] {
            let m = EncoderModel::new(tiny(kind), 1).unwrap();
            let maps = m.attention_maps(&[2], &[true]).unwrap();
            for layer in maps {
                for head in layer {
                    assert_eq!(head.data(), &[1.0]);
                }
            }
        }
    }

    #[test]
    fn padded_keys_get_zero_weight() {
        for kind in [AttentionKind::Absolute, AttentionKind::Disentangled] {
            let m = EncoderModel::new(tiny(kind), 2).unwrap();
            let ids = [2, 5, 0, 0, 0];
            let mask = [true, false, false, false, false];
            for layer in m.attention_maps(&ids, &mask).unwrap() {
                for head in layer {
                    for row in head.data().chunks(5) {
                        assert_eq!(row[0], 1.0);
                        assert!(row[1..].iter().all(|&w| w == 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn trailing_padding_does_not_change_real_positions() {
        let m = EncoderModel::new(tiny(AttentionKind::Disentangled), 3).unwrap();
        let full = m.attention_maps(&[2, 7, 9, 0, 0], &[true, true, true, false, false]).unwrap();
        let (ids, mask) = trim(&[2, 7, 9, 0, 0], &[true, true, true, false, false]);
        assert_eq!(ids.len(), 3);
        let short = m.attention_maps(ids, mask).unwrap();
        for (a, b) in full.iter().flatten().zip(short.iter().flatten()) {
            for r in 0..3 {
                assert_eq!(&a.data()[r * 5..r * 5 + 3], &b.data()[r * 3..r * 3 + 3]);
            }
        }
    }

    #[test]
    fn student_copies_alternate_layers() {
        let t = EncoderModel::new(EncoderConfig { layers: 4, ..tiny(AttentionKind::Absolute) }, 4).unwrap();
        let s = EncoderModel::student_of(&t, 2).unwrap();
        let get = |m: &EncoderModel, n: &str| m.store.get(m.store.id(n).unwrap()).clone();
        assert_eq!(get(&s, "layer1.query.weight"), get(&t, "layer2.query.weight"));
        assert_eq!(get(&s, "layer0.ff_out.bias"), get(&t, "layer0.ff_out.bias"));
        assert_eq!(get(&s, "embed.token"), get(&t, "embed.token"));
        assert!(EncoderModel::student_of(&t, 4).is_err());
    }

    #[test]
    fn probabilities_sum_to_one() {
        let m = EncoderModel::new(tiny(AttentionKind::Absolute), 5).unwrap();
        let p = m.class_probs(&[2, 4, 6]).unwrap();
        assert!((p[0] + p[1] - 1.0).abs() < 1e-9);
        assert_eq!(p, m.class_probs(&[2, 4, 6]).unwrap());
    }
}
