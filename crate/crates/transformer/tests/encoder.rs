use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tweetsift_nnkit::gradcheck::check_all;
use tweetsift_nnkit::NnError;
use tweetsift_transformer::{AttentionKind, EncoderConfig, EncoderModel, TransformerError};

fn reference(kind: AttentionKind) -> EncoderConfig {
    EncoderConfig {
        layers: 1,
        heads: 2,
        d_model: 8,
        d_ff: 16,
        max_len: 6,
        vocab_size: 20,
        dropout: 0.1,
        attention: kind,
        rel_window: 2,
    }
}

/// Moves every parameter away from the small initialization so that the
/// finite differences are not dominated by the relative-error floor.
fn scramble(model: &mut EncoderModel, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        for v in model.store.get_mut(id).data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
}

fn nn(e: TransformerError) -> NnError {
    match e {
        TransformerError::Nn(e) => e,
        other => panic!("{other}"),
    }
}

#[test]
fn every_parameter_passes_finite_differences_for_both_kinds() {
    for kind in [AttentionKind::Absolute, AttentionKind::Disentangled] {
        let mut model = EncoderModel::new(reference(kind), 11).unwrap();
        scramble(&mut model, 12);
        let ids = [2, 7, 3, 19, 4, 0];
        let mask = [true, true, true, true, true, false];
        let report = check_all(&model.store, 1e-5, |g| {
            model.joint_loss(g, &ids, &mask, 1, &[1, 2, 4], &[5, 9, 13]).map_err(nn)
        })
        .unwrap();
        assert_eq!(report.params.len(), model.store.len());
        for p in &report.params {
            assert!(p.max_rel_error < 1e-3, "{kind:?} {}: {}", p.name, p.max_rel_error);
        }
    }
}

#[test]
fn zeroed_relative_table_leaves_only_content_logits() {
    let abs_cfg = EncoderConfig { layers: 2, ..reference(AttentionKind::Absolute) };
    let dis_cfg = EncoderConfig { layers: 2, ..reference(AttentionKind::Disentangled) };
    let mut abs = EncoderModel::new(abs_cfg, 3).unwrap();
    let mut dis = EncoderModel::new(dis_cfg, 4).unwrap();
    let pos = abs.store.id("embed.position").unwrap();
    abs.store.get_mut(pos).data_mut().fill(0.0);
    for id in dis.store.ids().collect::<Vec<_>>() {
        let name = dis.store.name(id).to_string();
        match abs.store.id(&name) {
            Some(a) => *dis.store.get_mut(id) = abs.store.get(a).clone(),
            None if name == "embed.relative" => dis.store.get_mut(id).data_mut().fill(0.0),
            None => {}
        }
    }
    let ids = [2, 5, 9, 11, 0];
    let mask = [true, true, true, true, false];
    let a = abs.attention_logits(&ids, &mask).unwrap();
    let d = dis.attention_logits(&ids, &mask).unwrap();
    // Only the first layer sees identical inputs; the extra 1/sqrt(3) in the
    // disentangled scale changes everything downstream.
    for (ha, hd) in a[0].iter().zip(&d[0]) {
        for (x, y) in ha.data().iter().zip(hd.data()) {
            assert!((x - y * 3f64.sqrt()).abs() < 1e-12, "{x} vs {y}");
        }
    }
}

#[test]
fn sequences_longer_than_max_len_are_rejected() {
    let m = EncoderModel::new(reference(AttentionKind::Absolute), 1).unwrap();
    assert!(m.class_probs(&[2; 7]).is_err());
    assert!(m.attention_maps(&[2, 3], &[true]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_rows_are_distributions_with_zero_on_pads(
        seed in 0u64..1000,
        len in 1usize..=6,
        pads in 0usize..6,
        disentangled in any::<bool>(),
    ) {
        let kind = if disentangled { AttentionKind::Disentangled } else { AttentionKind::Absolute };
        let m = EncoderModel::new(EncoderConfig { layers: 2, ..reference(kind) }, seed).unwrap();
        let real = len.saturating_sub(pads).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<usize> = (0..len).map(|j| if j < real { rng.gen_range(1..20) } else { 0 }).collect();
        let mask: Vec<bool> = (0..len).map(|j| j < real).collect();
        for layer in m.attention_maps(&ids, &mask).unwrap() {
            for head in layer {
                for row in head.data().chunks(len) {
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    for j in real..len {
                        prop_assert_eq!(row[j], 0.0);
                    }
                }
            }
        }
    }
}
