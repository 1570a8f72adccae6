use proptest::prelude::*;

use s2ut_core::eval::corpus_bleu;
use s2ut_core::models::{AuxHeadConfig, BlockKind, Mode, ModelConfig, S2utConfig, S2utModel, Seq2SeqModel};
use s2ut_core::signal::{render_units_to_audio, FRAME};
use s2ut_core::training::{freeze_mask_at, select_finetune_params, FinetuneStrategy, StrategyKind};
use s2ut_core::units::UnitVocab;
use s2ut_core::{Graph, ParamStore, RngStream};

fn cfg(d_heads: (usize, usize), enc: usize, dec: usize, kind: BlockKind) -> ModelConfig {
    ModelConfig {
        d_model: d_heads.0 * d_heads.1,
        n_heads: d_heads.1,
        ffn_dim: 6,
        enc_layers: enc,
        dec_layers: dec,
        dropout: 0.0,
        layerdrop: 0.0,
        src_vocab: 9,
        tgt_vocab: 9,
        max_positions: 16,
        block_kind: kind,
        conv_kernel: 3,
        feat_dim: 3,
    }
}

fn strategy() -> impl Strategy<Value = StrategyKind> {
    prop::sample::select(StrategyKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rng_streams_replay(seed in any::<u64>(), key in any::<u64>(), n in 1usize..64) {
        let root = RngStream::new(seed);
        let a: Vec<u64> = { let mut s = root.split(key); (0..n).map(|_| s.next_u64()).collect() };
        let b: Vec<u64> = { let mut s = root.split(key); (0..n).map(|_| s.next_u64()).collect() };
        let c: Vec<u64> = { let mut s = root.split(key.wrapping_add(1)); (0..n).map(|_| s.next_u64()).collect() };
        prop_assert_eq!(&a, &b);
        prop_assert_ne!(a, c);
    }

    #[test]
    fn rendered_audio_is_framed(units in prop::collection::vec(0usize..20, 0..30)) {
        let w = render_units_to_audio(&units, 20).unwrap();
        prop_assert_eq!(w.samples().len(), units.len() * FRAME);
        prop_assert!(w.samples().iter().all(|x| x.is_finite() && x.abs() <= 1.0));
    }

    #[test]
    fn unit_vocab_specials_disjoint(k in 1usize..200, n_langs in 1usize..4) {
        let langs: Vec<String> = (0..n_langs).map(|i| format!("l{i}")).collect();
        let refs: Vec<&str> = langs.iter().map(String::as_str).collect();
        let v = UnitVocab::new(k, &refs);
        let mut specials = vec![v.pad(), v.bos(), v.eos(), v.mask()];
        specials.extend(refs.iter().map(|l| v.lang(l).unwrap()));
        prop_assert!(specials.iter().all(|&s| !v.is_unit(s) && s < v.size()));
        specials.sort();
        specials.dedup();
        prop_assert_eq!(specials.len(), 4 + n_langs);
        prop_assert_eq!((0..v.size()).filter(|&i| v.is_unit(i)).count(), k);
    }

    #[test]
    fn partition_covers_every_name(enc in 1usize..4, dec in 1usize..4, conformer in any::<bool>(), n_aux in 0usize..3, kind in strategy()) {
        let block = if conformer { BlockKind::Conformer } else { BlockKind::Transformer };
        let aux = (0..n_aux).map(|i| AuxHeadConfig { layer: i % enc, vocab: 5, weight: 1.0, dec_layers: 1 }).collect();
        let mut store = ParamStore::new();
        S2utModel::declare(&mut store, &S2utConfig { model: cfg((4, 2), enc, dec, block), aux }).unwrap();
        let p = select_finetune_params(store.names(), kind).unwrap();
        prop_assert!(p.trainable.is_disjoint(&p.frozen));
        prop_assert_eq!(p.trainable.len() + p.frozen.len(), store.names().count());
        for n in store.names() {
            prop_assert!(p.trainable.contains(n) || p.frozen.contains(n));
            if n.starts_with("adaptor.") || n.starts_with("aux.") {
                prop_assert!(p.trainable.contains(n), "{} frozen", n);
            }
        }
    }

    #[test]
    fn encoder_freeze_window(k in 0usize..20, step in 1usize..40, kind in strategy()) {
        let mut store = ParamStore::new();
        S2utModel::declare(&mut store, &S2utConfig { model: cfg((4, 2), 2, 1, BlockKind::Transformer), aux: Vec::new() }).unwrap();
        let p = select_finetune_params(store.names(), kind).unwrap();
        let active = freeze_mask_at(step, &FinetuneStrategy { kind, encoder_freeze_steps: k }, &p);
        prop_assert!(active.is_subset(&p.trainable));
        let has_encoder = active.iter().any(|n| n.starts_with("encoder."));
        prop_assert_eq!(has_encoder, step > k);
    }

    #[test]
    fn bleu_ignores_example_order(seed in any::<u64>(), n in 1usize..12) {
        let mut r = RngStream::new(seed);
        let words = ["a", "b", "c", "d", "e"];
        let sent = |r: &mut RngStream| (0..1 + r.below(6)).map(|_| words[r.below(5)]).collect::<Vec<_>>().join(" ");
        let pairs: Vec<(String, String)> = (0..n).map(|_| (sent(&mut r), sent(&mut r))).collect();
        let mut shuffled = pairs.clone();
        for i in (1..n).rev() {
            shuffled.swap(i, r.below(i + 1));
        }
        let score = |p: &[(String, String)]| {
            let (h, rf): (Vec<String>, Vec<String>) = p.iter().cloned().unzip();
            corpus_bleu(&h, &rf).unwrap().score
        };
        prop_assert!((score(&pairs) - score(&shuffled)).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn decoder_is_causal(seed in any::<u64>(), len in 2usize..7, pos in 0usize..6, tok in 3usize..9) {
        let pos = pos % len;
        let mut store = ParamStore::new();
        let model = Seq2SeqModel::declare(&mut store, &cfg((4, 2), 1, 2, BlockKind::Transformer)).unwrap();
        store.materialize(&RngStream::new(seed));
        let mut r = RngStream::new(seed ^ 1);
        let src: Vec<usize> = (0..4).map(|_| 3 + r.below(6)).collect();
        let tgt: Vec<usize> = (0..len).map(|_| 3 + r.below(6)).collect();
        let mut changed = tgt.clone();
        changed[pos] = tok;
        let logits = |t: &[usize]| {
            let mut g = Graph::no_grad();
            let v = model.forward(&mut g, &store, &src, t, &mut Mode::eval()).unwrap();
            g.value(v).to_vec()
        };
        let (a, b) = (logits(&tgt), logits(&changed));
        let v = a.len() / len;
        prop_assert_eq!(&a[..pos * v], &b[..pos * v]);
    }
}
