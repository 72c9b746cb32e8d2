use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tweetsift_nnkit::gradcheck::{check_all, rel_error};
use tweetsift_nnkit::{Adam, AdamConfig, Grads, Graph, ParamStore, Tensor};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.5..1.5))
}

fn check(store: &ParamStore, build: impl for<'p> Fn(&mut Graph<'p>) -> tweetsift_nnkit::Result<tweetsift_nnkit::Var>) {
    let report = check_all(store, 1e-5, build).unwrap();
    for p in &report.params {
        assert!(p.max_rel_error < 1e-4, "{}: {}", p.name, p.max_rel_error);
    }
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut s = ParamStore::new();
    let z = s.add("logits", random(&[3, 5], &mut rng)).unwrap();
    let targets = [4, 0, 2];
    let mut grads = Grads::zeros_like(&s);
    let mut g = Graph::new(&s);
    let zv = g.param(z);
    let loss = g.cross_entropy(zv, &targets).unwrap();
    g.backward(loss, &mut grads).unwrap();
    let h = 1e-4;
    for k in 0..15 {
        let eval = |delta: f64| {
            let mut s2 = s.clone();
            s2.get_mut(z).data_mut()[k] += delta;
            let mut g = Graph::new(&s2);
            let zv = g.param(z);
            let l = g.cross_entropy(zv, &targets).unwrap();
            g.value(l)[0]
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        assert!(rel_error(grads.get(z)[k], numeric) < 1e-4, "logit {k}");
    }
}

#[test]
fn every_op_passes_gradient_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut s = ParamStore::new();
    let a = s.add("a", random(&[3, 4], &mut rng)).unwrap();
    let b = s.add("b", random(&[4, 5], &mut rng)).unwrap();
    let c = s.add("c", random(&[3, 4], &mut rng)).unwrap();
    let row = s.add("row", random(&[4], &mut rng)).unwrap();
    let gain = s.add("gain", random(&[4], &mut rng)).unwrap();
    let rel = s.add("rel", random(&[3, 5], &mut rng)).unwrap();
    let table = s.add("table", random(&[6, 4], &mut rng)).unwrap();
    let soft: Vec<f64> = {
        let raw: Vec<f64> = (0..15).map(|_| rng.gen_range(0.1..1.0)).collect();
        raw.chunks(5).flat_map(|r| r.iter().map(move |v| v / r.iter().sum::<f64>()).collect::<Vec<_>>()).collect()
    };
    // Fixed random weights give every output element a distinct upstream
    // gradient before the final sums.
    let w_out = random(&[3, 4], &mut rng);
    let w_sq = random(&[3, 3], &mut rng);
    check(&s, |g| {
        let (av, bv, cv) = (g.param(a), g.param(b), g.param(c));
        let (rv, gv, relv) = (g.param(row), g.param(gain), g.param(rel));
        let ab = g.matmul(av, bv)?; // 3x5
        let soft_ce = g.soft_cross_entropy(ab, &soft)?;
        let sm = g.softmax(ab)?;
        let msm = g.masked_softmax(ab, &[true, false, true, true, false])?;
        let both = g.add(sm, msm)?;
        let ce = g.cross_entropy(both, &[0, 2, 3])?;
        let sum_ac = g.add(av, cv)?;
        let prod = g.mul(sum_ac, cv)?;
        let shifted = g.add_row(prod, rv)?;
        let ln = g.layer_norm(shifted, gv, rv)?;
        let act = g.gelu(ln)?;
        let emb = g.embedding(table, &[5, 0, 5])?;
        let mixed = g.add(act, emb)?;
        let sliced = g.slice_cols(mixed, 1, 2)?;
        let joined = g.concat_cols(&[sliced, mixed])?; // 3x6
        let picked = g.select_rows(joined, &[2, 2, 0])?;
        let t = g.transpose(picked)?; // 6x3
        let tt = g.transpose(t)?; // 3x6
        let narrowed = g.slice_cols(tt, 2, 4)?; // 3x4
        let probe = g.constant(w_out.clone())?;
        let weighted = g.mul(narrowed, probe)?;
        let gathered = g.rel_gather(relv, 2)?; // 3x3
        let probe2 = g.constant(w_sq.clone())?;
        let g2 = g.mul(gathered, probe2)?;
        let dropped = g.dropout(weighted, 0.3, 11)?;
        let s1 = g.sum(dropped)?;
        let s2 = g.sum(g2)?;
        let s3 = g.scale(s2, -0.7)?;
        let t1 = g.add(s1, s3)?;
        let t2 = g.add(t1, ce)?;
        g.add(t2, soft_ce)
    });
}

/// Two stacked attention-plus-feed-forward blocks on a short sequence.
#[test]
fn two_layer_encoder_passes_gradient_checks() {
    let (d, v) = (6, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut s = ParamStore::new();
    let emb = s.add("emb", random(&[v, d], &mut rng)).unwrap();
    let mut layers = Vec::new();
    for l in 0..2 {
        let mut p = |name: &str, shape: &[usize]| s.add(&format!("l{l}.{name}"), random(shape, &mut rng)).unwrap();
        layers.push([
            p("wq", &[d, d]),
            p("wk", &[d, d]),
            p("wv", &[d, d]),
            p("ln_g", &[d]),
            p("ln_b", &[d]),
            p("ff1", &[d, 2 * d]),
            p("ff2", &[2 * d, d]),
        ]);
    }
    let head = s.add("head", random(&[d, 2], &mut rng)).unwrap();
    check(&s, |g| {
        let mut h = g.embedding(emb, &[1, 4, 4, 8])?;
        for &[wq, wk, wv, lg, lb, f1, f2] in &layers {
            let (wq, wk, wv) = (g.param(wq), g.param(wk), g.param(wv));
            let q = g.matmul(h, wq)?;
            let k = g.matmul(h, wk)?;
            let vv = g.matmul(h, wv)?;
            let kt = g.transpose(k)?;
            let logits = g.matmul(q, kt)?;
            let scaled = g.scale(logits, 1.0 / (d as f64).sqrt())?;
            let att = g.masked_softmax(scaled, &[true, true, true, false])?;
            let ctx = g.matmul(att, vv)?;
            let res = g.add(h, ctx)?;
            let (lg, lb) = (g.param(lg), g.param(lb));
            let normed = g.layer_norm(res, lg, lb)?;
            let (f1, f2) = (g.param(f1), g.param(f2));
            let up = g.matmul(normed, f1)?;
            let act = g.gelu(up)?;
            let down = g.matmul(act, f2)?;
            h = g.add(normed, down)?;
        }
        let cls = g.select_rows(h, &[0])?;
        let hv = g.param(head);
        let out = g.matmul(cls, hv)?;
        g.cross_entropy(out, &[1])
    });
}

#[test]
fn adam_descends_a_quadratic_bowl() {
    let mut s = ParamStore::new();
    let w = s.add("w", Tensor::new(vec![1, 3], vec![2.0, -1.0, 0.5]).unwrap()).unwrap();
    let scales = Tensor::new(vec![1, 3], vec![1.0, 4.0, 0.25]).unwrap();
    let mut adam = Adam::new(&s, AdamConfig { lr: 1e-2, ..Default::default() });
    let mut prev = f64::INFINITY;
    for _ in 0..100 {
        let mut grads = Grads::zeros_like(&s);
        let loss = {
            let mut g = Graph::new(&s);
            let wv = g.param(w);
            let sq = g.mul(wv, wv).unwrap();
            let c = g.constant(scales.clone()).unwrap();
            let weighted = g.mul(sq, c).unwrap();
            let l = g.sum(weighted).unwrap();
            g.backward(l, &mut grads).unwrap();
            g.value(l)[0]
        };
        assert!(loss < prev, "{loss} after {prev}");
        prev = loss;
        adam.step(&mut s, &grads).unwrap();
    }
}

#[test]
fn checkpoints_round_trip_through_files() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = ParamStore::new();
    s.add("x", random(&[7, 3], &mut rng)).unwrap();
    s.add("y", random(&[2], &mut rng)).unwrap();
    let dir = std::env::temp_dir().join(format!("nnkit-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("p.bin");
    s.save(&path).unwrap();
    assert_eq!(ParamStore::load(&path).unwrap(), s);
    let mut fresh = s.clone();
    fresh.get_mut(fresh.id("x").unwrap()).data_mut()[0] = 99.0;
    fresh.load_values(&std::fs::read(&path).unwrap()).unwrap();
    assert_eq!(fresh, s);
    std::fs::remove_dir_all(dir).unwrap();
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(values in proptest::collection::vec(-50.0f64..50.0, 12), mask_bits in 1u8..16) {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let x = g.constant(Tensor::new(vec![3, 4], values).unwrap()).unwrap();
        let mask: Vec<bool> = (0..4).map(|j| mask_bits & (1 << j) != 0).collect();
        for y in [g.softmax(x).unwrap(), g.masked_softmax(x, &mask).unwrap()] {
            for row in g.value(y).chunks(4) {
                prop_assert!(row.iter().all(|&p| p >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        let y = g.masked_softmax(x, &mask).unwrap();
        for row in g.value(y).chunks(4) {
            for (j, &p) in row.iter().enumerate() {
                if !mask[j] {
                    prop_assert_eq!(p, 0.0);
                }
            }
        }
    }

    #[test]
    fn layer_norm_gradients_hold_for_random_rows(seed in 0u64..1000, scale in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let x = s.add("x", Tensor::from_fn(&[2, 5], |_| rng.gen_range(-1.0..1.0) * scale)).unwrap();
        let gain = s.add("g", random(&[5], &mut rng)).unwrap();
        let bias = s.add("b", random(&[5], &mut rng)).unwrap();
        let w = random(&[2, 5], &mut rng);
        let report = check_all(&s, 1e-5 * scale.min(1.0), |g| {
            let (xv, gv, bv) = (g.param(x), g.param(gain), g.param(bias));
            let y = g.layer_norm(xv, gv, bv)?;
            let wv = g.constant(w.clone())?;
            let z = g.mul(y, wv)?;
            let act = g.gelu(z)?;
            g.sum(act)
        }).unwrap();
        prop_assert!(report.passes(1e-3), "{:?}", report);
    }
}
