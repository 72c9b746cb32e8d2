use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::params::{Grads, ParamId, ParamStore};
use crate::{NnError, Result, Tensor};

/// Handle to a node of one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-12;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

enum Value {
    Owned(Vec<f64>),
    Param(ParamId),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// Masked columns need no record: their outputs, hence gradients, are 0.
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gelu(Var),
    Embedding { table: ParamId, ids: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    SoftCrossEntropy { logits: Var, targets: Vec<f64>, probs: Vec<f64> },
    Dropout { x: Var, mask: Vec<f64> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SelectRows { x: Var, rows: Vec<usize> },
    RelGather { x: Var, k: usize },
    Sum(Var),
}

struct Node {
    shape: Vec<usize>,
    value: Value,
    op: Op,
}

/// Define-by-run computation over one immutable parameter snapshot.
pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
}

fn mat(shape: &[usize]) -> Option<(usize, usize)> {
    match *shape {
        [m, n] => Some((m, n)),
        _ => None,
    }
}

fn softmax_row(z: &[f64], mask: Option<&[bool]>, out: &mut [f64]) -> bool {
    let keep = |j: usize| mask.is_none_or(|m| m[j]);
    let max = z.iter().enumerate().filter(|&(j, _)| keep(j)).map(|(_, &v)| v).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return false;
    }
    let mut total = 0.0;
    for (j, (o, &v)) in out.iter_mut().zip(z).enumerate() {
        *o = if keep(j) { (v - max).exp() } else { 0.0 };
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
    true
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self { store, nodes: Vec::new() }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].value {
            Value::Owned(d) => d,
            Value::Param(id) => self.store.get(*id).data(),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape matches data")
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite { op: op_name });
        }
        self.nodes.push(Node { shape, value: Value::Owned(data), op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn mat2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        mat(self.shape(v)).ok_or_else(|| NnError::Shape { op, a: self.shape(v).to_vec(), b: vec![] })
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> NnError {
        NnError::Shape { op, a: self.shape(a).to_vec(), b: self.shape(b).to_vec() }
    }

    /// Constant input; receives no gradient outside the graph.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        let Tensor { shape, data } = t;
        self.push("constant", shape, data, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node { shape: self.store.get(id).shape().to_vec(), value: Value::Param(id), op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat2("matmul", a)?;
        let (k2, n) = self.mat2("matmul", b)?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x != 0.0 {
                    for (o, &y) in row.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                        *o += x * y;
                    }
                }
            }
        }
        self.push("matmul", vec![m, n], out, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.mat2("transpose", a)?;
        let av = self.value(a);
        let out: Vec<f64> = (0..n * m).map(|idx| av[(idx % m) * n + idx / m]).collect();
        self.push("transpose", vec![n, m], out, Op::Transpose(a))
    }

    /// Element-wise sum of equal shapes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("add", a, b));
        }
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push("add", self.shape(a).to_vec(), out, Op::Add(a, b))
    }

    /// `a[m, n] + b[n]`, broadcasting `b` over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.mat2("add_row", a)?;
        if self.shape(b) != [n] {
            return Err(self.mismatch("add_row", a, b));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let out: Vec<f64> = (0..m * n).map(|i| av[i] + bv[i % n]).collect();
        self.push("add_row", vec![m, n], out, Op::AddRow(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("mul", a, b));
        }
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        self.push("mul", self.shape(a).to_vec(), out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out: Vec<f64> = self.value(a).iter().map(|x| x * c).collect();
        self.push("scale", self.shape(a).to_vec(), out, Op::Scale(a, c))
    }

    /// Row-wise softmax over the last axis of a matrix.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.softmax_impl(a, None)
    }

    /// Row-wise softmax where columns with `mask[j] == false` get weight
    /// exactly 0, as if their logits were minus infinity.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        self.softmax_impl(a, Some(mask.to_vec()))
    }

    fn softmax_impl(&mut self, a: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        let (m, n) = self.mat2("softmax", a)?;
        if let Some(mk) = &mask {
            if mk.len() != n {
                return Err(NnError::Shape { op: "masked_softmax", a: vec![m, n], b: vec![mk.len()] });
            }
        }
        let av = self.value(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            if !softmax_row(&av[i * n..(i + 1) * n], mask.as_deref(), &mut out[i * n..(i + 1) * n]) {
                return Err(NnError::Invalid { op: "masked_softmax", message: "every column is masked".into() });
            }
        }
        self.push("softmax", vec![m, n], out, Op::Softmax(a))
    }

    /// Normalizes each row to mean 0 and variance 1, then applies
    /// `gain[n]` and `bias[n]`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.mat2("layer_norm", x)?;
        if self.shape(gain) != [n] {
            return Err(self.mismatch("layer_norm", x, gain));
        }
        if self.shape(bias) != [n] {
            return Err(self.mismatch("layer_norm", x, bias));
        }
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            inv_std[i] = s;
            for j in 0..n {
                let h = (row[j] - mean) * s;
                xhat[i * n + j] = h;
                out[i * n + j] = h * gv[j] + bv[j];
            }
        }
        self.push("layer_norm", vec![m, n], out, Op::LayerNorm { x, gain, bias, xhat, inv_std })
    }

    /// Tanh approximation of the Gaussian error linear unit.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out: Vec<f64> =
            self.value(a).iter().map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())).collect();
        self.push("gelu", self.shape(a).to_vec(), out, Op::Gelu(a))
    }

    /// Rows `ids` of the parameter matrix `table`.
    pub fn embedding(&mut self, table: ParamId, ids: &[usize]) -> Result<Var> {
        let t = self.store.get(table);
        let (v, d) = mat(t.shape()).ok_or_else(|| NnError::Shape { op: "embedding", a: t.shape().to_vec(), b: vec![] })?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(NnError::Invalid { op: "embedding", message: format!("id {bad} outside table of {v} rows") });
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
        }
        self.push("embedding", vec![ids.len(), d], out, Op::Embedding { table, ids: ids.to_vec() })
    }

    /// Mean over rows of `-ln softmax(logits)[target]`, computed through
    /// log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, c) = self.mat2("cross_entropy", logits)?;
        if targets.len() != m {
            return Err(NnError::Shape { op: "cross_entropy", a: vec![m, c], b: vec![targets.len()] });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(NnError::Invalid { op: "cross_entropy", message: format!("target {bad} with {c} classes") });
        }
        let zv = self.value(logits);
        let mut probs = vec![0.0; m * c];
        let mut loss = 0.0;
        for i in 0..m {
            let row = &zv[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            loss += lse - row[targets[i]];
            softmax_row(row, None, &mut probs[i * c..(i + 1) * c]);
        }
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), probs };
        self.push("cross_entropy", vec![], vec![loss / m as f64], op)
    }

    /// Mean over rows of `-sum_c q[c] ln softmax(logits)[c]` for fixed
    /// target distributions `q`.
    pub fn soft_cross_entropy(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let (m, c) = self.mat2("soft_cross_entropy", logits)?;
        if targets.len() != m * c {
            return Err(NnError::Shape { op: "soft_cross_entropy", a: vec![m, c], b: vec![targets.len()] });
        }
        let zv = self.value(logits);
        let mut probs = vec![0.0; m * c];
        let mut loss = 0.0;
        for i in 0..m {
            let row = &zv[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            for j in 0..c {
                let q = targets[i * c + j];
                if q != 0.0 {
                    loss -= q * (row[j] - lse);
                }
            }
            softmax_row(row, None, &mut probs[i * c..(i + 1) * c]);
        }
        let op = Op::SoftCrossEntropy { logits, targets: targets.to_vec(), probs };
        self.push("soft_cross_entropy", vec![], vec![loss / m as f64], op)
    }

    /// Inverted dropout with its own seeded stream; `p == 0` is the identity.
    pub fn dropout(&mut self, a: Var, p: f64, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(NnError::Invalid { op: "dropout", message: format!("rate {p} outside [0, 1)") });
        }
        let n = self.value(a).len();
        let mask: Vec<f64> = if p == 0.0 {
            vec![1.0; n]
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) }).collect()
        };
        let out: Vec<f64> = self.value(a).iter().zip(&mask).map(|(x, k)| x * k).collect();
        self.push("dropout", self.shape(a).to_vec(), out, Op::Dropout { x: a, mask })
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let (m, n) = self.mat2("slice_cols", a)?;
        if start + width > n {
            return Err(NnError::Shape { op: "slice_cols", a: vec![m, n], b: vec![start, width] });
        }
        let av = self.value(a);
        let mut out = Vec::with_capacity(m * width);
        for i in 0..m {
            out.extend_from_slice(&av[i * n + start..i * n + start + width]);
        }
        self.push("slice_cols", vec![m, width], out, Op::SliceCols { x: a, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(NnError::Invalid { op: "concat_cols", message: "no inputs".into() })?;
        let (m, _) = self.mat2("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (mi, ni) = self.mat2("concat_cols", p)?;
            if mi != m {
                return Err(self.mismatch("concat_cols", first, p));
            }
            widths.push(ni);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        self.push("concat_cols", vec![m, total], out, Op::ConcatCols(parts.to_vec()))
    }

    /// Gathers rows by index; an index may repeat.
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.mat2("select_rows", a)?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(NnError::Invalid { op: "select_rows", message: format!("row {bad} of {m}") });
        }
        let av = self.value(a);
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            out.extend_from_slice(&av[r * n..(r + 1) * n]);
        }
        self.push("select_rows", vec![rows.len(), n], out, Op::SelectRows { x: a, rows: rows.to_vec() })
    }

    /// From per-position scores against relative offsets, `a[n, 2k+1]`,
    /// builds `out[i][j] = a[i][clamp(i - j, -k, k) + k]`.
    pub fn rel_gather(&mut self, a: Var, k: usize) -> Result<Var> {
        let (n, w) = self.mat2("rel_gather", a)?;
        if w != 2 * k + 1 {
            return Err(NnError::Shape { op: "rel_gather", a: vec![n, w], b: vec![2 * k + 1] });
        }
        let av = self.value(a);
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = av[i * w + rel_index(i, j, k)];
            }
        }
        self.push("rel_gather", vec![n, n], out, Op::RelGather { x: a, k })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().sum();
        self.push("sum", vec![], vec![s], Op::Sum(a))
    }

    /// Fills `grads` (additively) with `d loss / d param` for every
    /// parameter reachable from `loss`.
    pub fn backward(&self, loss: Var, grads: &mut Grads) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(NnError::NotScalar(self.shape(loss).to_vec()));
        }
        let mut bp = Backprop { graph: self, node_grads: (0..=loss.0).map(|_| None).collect(), grads };
        bp.node_grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(dy) = bp.node_grads[i].take() else { continue };
            bp.step(i, &dy);
        }
        Ok(())
    }
}

/// `clamp(i - j, -k, k) + k`.
pub(crate) fn rel_index(i: usize, j: usize, k: usize) -> usize {
    let d = (i as i64 - j as i64).clamp(-(k as i64), k as i64);
    (d + k as i64) as usize
}

struct Backprop<'g, 'p> {
    graph: &'g Graph<'p>,
    node_grads: Vec<Option<Vec<f64>>>,
    grads: &'g mut Grads,
}

impl Backprop<'_, '_> {
    /// Gradient slot of `v`: the store's buffer for parameters, a lazily
    /// allocated node buffer otherwise.
    fn slot(&mut self, v: Var) -> &mut [f64] {
        let graph = self.graph;
        let node = &graph.nodes[v.0];
        match node.value {
            Value::Param(id) => self.grads.slot_mut(id),
            Value::Owned(ref d) => self.node_grads[v.0].get_or_insert_with(|| vec![0.0; d.len()]),
        }
    }

    fn step(&mut self, i: usize, dy: &[f64]) {
        let g = self.graph;
        let node = &g.nodes[i];
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = mat(g.shape(a)).expect("checked in forward");
                let n = g.shape(b)[1];
                let (av, bv) = (g.value(a), g.value(b));
                let da = self.slot(a);
                for r in 0..m {
                    let dyr = &dy[r * n..(r + 1) * n];
                    for p in 0..k {
                        da[r * k + p] += dyr.iter().zip(&bv[p * n..(p + 1) * n]).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
                let db = self.slot(b);
                for r in 0..m {
                    let dyr = &dy[r * n..(r + 1) * n];
                    for p in 0..k {
                        let x = av[r * k + p];
                        if x != 0.0 {
                            for (o, &y) in db[p * n..(p + 1) * n].iter_mut().zip(dyr) {
                                *o += x * y;
                            }
                        }
                    }
                }
            }
            &Op::Transpose(a) => {
                let (m, n) = mat(g.shape(a)).expect("checked in forward");
                let da = self.slot(a);
                for r in 0..m {
                    for c in 0..n {
                        da[r * n + c] += dy[c * m + r];
                    }
                }
            }
            &Op::Add(a, b) => {
                add_into(self.slot(a), dy);
                add_into(self.slot(b), dy);
            }
            &Op::AddRow(a, b) => {
                add_into(self.slot(a), dy);
                let db = self.slot(b);
                let n = db.len();
                for (idx, &d) in dy.iter().enumerate() {
                    db[idx % n] += d;
                }
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (g.value(a), g.value(b));
                for ((o, &d), &y) in self.slot(a).iter_mut().zip(dy).zip(bv) {
                    *o += d * y;
                }
                for ((o, &d), &x) in self.slot(b).iter_mut().zip(dy).zip(av) {
                    *o += d * x;
                }
            }
            &Op::Scale(a, c) => {
                for (o, &d) in self.slot(a).iter_mut().zip(dy) {
                    *o += c * d;
                }
            }
            &Op::Softmax(x) => {
                let n = node.shape[1];
                let y = g.value(Var(i));
                let dx = self.slot(x);
                for r in 0..node.shape[0] {
                    let (yr, dyr) = (&y[r * n..(r + 1) * n], &dy[r * n..(r + 1) * n]);
                    let dot: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dx[r * n + j] += yr[j] * (dyr[j] - dot);
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let (m, n) = (node.shape[0], node.shape[1]);
                let gv = g.value(*gain).to_vec();
                {
                    let dg = self.slot(*gain);
                    for (idx, &d) in dy.iter().enumerate() {
                        dg[idx % n] += d * xhat[idx];
                    }
                }
                {
                    let db = self.slot(*bias);
                    for (idx, &d) in dy.iter().enumerate() {
                        db[idx % n] += d;
                    }
                }
                let dx = self.slot(*x);
                let mut dh = vec![0.0; n];
                for r in 0..m {
                    let hr = &xhat[r * n..(r + 1) * n];
                    for j in 0..n {
                        dh[j] = dy[r * n + j] * gv[j];
                    }
                    let s1: f64 = dh.iter().sum();
                    let s2: f64 = dh.iter().zip(hr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dx[r * n + j] += inv_std[r] / n as f64 * (n as f64 * dh[j] - s1 - hr[j] * s2);
                    }
                }
            }
            &Op::Gelu(a) => {
                let av = g.value(a);
                for ((o, &d), &x) in self.slot(a).iter_mut().zip(dy).zip(av) {
                    let u = GELU_C * (x + 0.044715 * x * x * x);
                    let t = u.tanh();
                    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                    *o += d * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
                }
            }
            Op::Embedding { table, ids } => {
                let d = node.shape[1];
                let dt = self.grads.slot_mut(*table);
                for (r, &id) in ids.iter().enumerate() {
                    add_into(&mut dt[id * d..(id + 1) * d], &dy[r * d..(r + 1) * d]);
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let (m, c) = mat(g.shape(*logits)).expect("checked in forward");
                let scale = dy[0] / m as f64;
                let dz = self.slot(*logits);
                for r in 0..m {
                    for j in 0..c {
                        let onehot = if targets[r] == j { 1.0 } else { 0.0 };
                        dz[r * c + j] += scale * (probs[r * c + j] - onehot);
                    }
                }
            }
            Op::SoftCrossEntropy { logits, targets, probs } => {
                let m = g.shape(*logits)[0];
                let scale = dy[0] / m as f64;
                for ((o, &p), &q) in self.slot(*logits).iter_mut().zip(probs).zip(targets) {
                    *o += scale * (p - q);
                }
            }
            Op::Dropout { x, mask } => {
                for ((o, &d), &k) in self.slot(*x).iter_mut().zip(dy).zip(mask) {
                    *o += d * k;
                }
            }
            &Op::SliceCols { x, start } => {
                let w = node.shape[1];
                let n = g.shape(x)[1];
                let dx = self.slot(x);
                for r in 0..node.shape[0] {
                    add_into(&mut dx[r * n + start..r * n + start + w], &dy[r * w..(r + 1) * w]);
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.shape[1];
                let mut offset = 0;
                for &p in parts {
                    let w = g.shape(p)[1];
                    let dp = self.slot(p);
                    for r in 0..node.shape[0] {
                        add_into(&mut dp[r * w..(r + 1) * w], &dy[r * total + offset..r * total + offset + w]);
                    }
                    offset += w;
                }
            }
            Op::SelectRows { x, rows } => {
                let n = node.shape[1];
                let dx = self.slot(*x);
                for (r, &src) in rows.iter().enumerate() {
                    add_into(&mut dx[src * n..(src + 1) * n], &dy[r * n..(r + 1) * n]);
                }
            }
            &Op::RelGather { x, k } => {
                let n = node.shape[0];
                let w = 2 * k + 1;
                let dx = self.slot(x);
                for r in 0..n {
                    for c in 0..n {
                        dx[r * w + rel_index(r, c, k)] += dy[r * n + c];
                    }
                }
            }
            &Op::Sum(a) => {
                let d = dy[0];
                self.slot(a).iter_mut().for_each(|o| *o += d);
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
