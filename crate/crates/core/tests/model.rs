use mores_core::blocks::{Attention, EncoderLayer, KeyValues, Norm};
use mores_core::cost;
use mores_core::model::special::PAD;
use mores_core::ops;
use mores_core::{
    split_initialize, CrossInit, DocRepr, Eager, Graph, HyperParams, MacCounter, MacKind, MonolithicModel, MoresModel,
    ParamStore, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_init(seed: u64) -> impl FnMut(&[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    move |dims: &[usize]| {
        let n = dims.iter().product();
        Tensor::new(dims.to_vec(), (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap()
    }
}

fn hp() -> HyperParams {
    HyperParams {
        hidden: 8,
        heads: 2,
        ffn: 16,
        vocab_size: 40,
        max_positions: 24,
        doc_layers: 2,
        query_layers: 1,
        interaction_blocks: 2,
        source_layers: 3,
    }
}

fn tokens(rng: &mut ChaCha8Rng, len: usize) -> Vec<u32> {
    (0..len).map(|_| rng.random_range(4..40)).collect()
}

fn assert_same(store_a: &ParamStore, a: &[mores_core::ParamId], store_b: &ParamStore, b: &[mores_core::ParamId]) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!(
            store_a.get(*x).bitwise_eq(store_b.get(*y)),
            "{} != {}",
            store_a.name(*x),
            store_b.name(*y)
        );
    }
}

#[test]
fn split_copies_donor_layers() {
    let donor = MonolithicModel::random(HyperParams::donor(8, 2, 16, 30, 16, 12), 1).unwrap();
    let dl = &donor.encoder().layers;
    let ds = donor.store();
    for k in 1..=4 {
        let m = split_initialize(&donor, k, CrossInit::Copy, 2).unwrap();
        let s = m.store();
        assert_eq!(m.query_module().layers.len(), 12 - k);
        for (i, layer) in m.query_module().layers.iter().enumerate() {
            assert_same(s, &layer.params(), ds, &dl[i].params());
        }
        for (i, b) in m.blocks().iter().enumerate() {
            let src = &dl[12 - k + i];
            assert_same(s, &b.self_attn.params(), ds, &src.attn.params());
            assert_same(s, &b.cross.params(), ds, &src.attn.params());
            assert_same(s, &b.ffn.params(), ds, &src.ffn.params());
            assert_same(s, &b.self_norm.params(), ds, &src.attn_norm.params());
            assert_same(s, &b.ffn_norm.params(), ds, &src.ffn_norm.params());
        }
        assert_same(s, &m.doc_module().params(), ds, &donor.encoder().params());
        assert_same(
            s,
            &m.query_module().embeddings.params(),
            ds,
            &donor.encoder().embeddings.params(),
        );
        assert_eq!(s.get(m.head().bias).data(), &[0.0]);
    }
}

#[test]
fn random_cross_init_is_seeded_and_distinct() {
    let donor = MonolithicModel::random(HyperParams::donor(8, 2, 16, 30, 16, 4), 1).unwrap();
    let a = split_initialize(&donor, 2, CrossInit::Random, 7).unwrap();
    let b = split_initialize(&donor, 2, CrossInit::Random, 7).unwrap();
    assert_eq!(a, b);
    let blk = a.blocks()[0];
    let s = a.store();
    assert!(!s
        .get(blk.cross.query.weight)
        .bitwise_eq(s.get(blk.self_attn.query.weight)));
    assert!(s.get(blk.cross.query.bias).data().iter().all(|&v| v == 0.0));
    let std = {
        let w = s.get(blk.cross.key.weight).data();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt()
    };
    assert!((0.01..0.03).contains(&std), "std {std}");
}

#[test]
fn copy_init_residency_breaks_after_training() {
    use mores_core::train::{gen_toy_data, train, TrainConfig};
    let donor = MonolithicModel::random(HyperParams::donor(8, 2, 16, 30, 16, 3), 1).unwrap();
    let mut m = split_initialize(&donor, 1, CrossInit::Copy, 3).unwrap();
    let b = m.blocks()[0];
    let data = gen_toy_data(30, 3, 6, 8, 0).unwrap();
    let cfg = TrainConfig {
        steps: 1,
        batch_size: 4,
        ..TrainConfig::default()
    };
    train(&mut m, &data, &cfg).unwrap();
    let s = m.store();
    assert!(!s.get(b.cross.query.weight).bitwise_eq(s.get(b.self_attn.query.weight)));
}

#[test]
fn single_key_attention_returns_the_value() {
    let mut store = ParamStore::new();
    let mut identity = |dims: &[usize]| {
        let mut t = Tensor::zeros(dims);
        for i in 0..dims[0].min(dims[1]) {
            t.data_mut()[i * dims[1] + i] = 1.0;
        }
        t
    };
    let att = Attention::register(&mut store, "a", 4, 1, &mut identity);
    let x = Tensor::from_rows(&[[0.0, 1.0, 0.0, 0.0]]).unwrap();
    let mut g = Eager::new();
    let xn = g.constant(&x);
    let out = att.attend(&mut g, &store, &xn, KeyValues::Raw(&xn), None).unwrap();
    assert!(out.output.tensor().bitwise_eq(&x));
    assert_eq!(out.weights[0].tensor().data(), &[1.0]);
}

#[test]
fn precomputed_kv_gives_identical_bits() {
    let mut store = ParamStore::new();
    let att = Attention::register(&mut store, "a", 4, 2, &mut random_init(1));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::new(vec![2, 4], (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let y = Tensor::new(vec![3, 4], (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let mut g = Eager::new();
    let (xn, yn) = (g.constant(&x), g.constant(&y));
    let raw = att.attend(&mut g, &store, &xn, KeyValues::Raw(&yn), None).unwrap();
    let (k, v) = att.project_kv(&mut g, &store, &yn).unwrap();
    assert_eq!(g.value(&k).dims(), &[2, 3, 2]);
    let pre = att
        .attend(&mut g, &store, &xn, KeyValues::Projected { keys: &k, values: &v }, None)
        .unwrap();
    assert!(raw.output.tensor().bitwise_eq(pre.output.tensor()));
    for w in &raw.weights {
        for r in 0..2 {
            assert!((w.tensor().row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn residual_only_encoder_layer() {
    let mut store = ParamStore::new();
    let layer = EncoderLayer::register(&mut store, "l", 4, 2, 8, &mut random_init(3));
    for id in layer.ffn.params().into_iter().chain(layer.attn.output.params()) {
        let dims = store.get(id).dims().to_vec();
        store
            .assign(store.name(id).to_string().as_str(), Tensor::zeros(&dims))
            .unwrap();
    }
    let x = Tensor::from_rows(&[[0.3, -1.0, 2.0, 0.5], [1.0, 1.5, -0.2, 0.0]]).unwrap();
    let mut g = Eager::new();
    let xn = g.constant(&x);
    let (out, _) = layer.forward(&mut g, &store, &xn, None).unwrap();
    let norm = |n: &Norm, t: &Tensor| ops::layer_norm(t, store.get(n.gain), store.get(n.bias), 1e-12).unwrap();
    let want = norm(&layer.ffn_norm, &norm(&layer.attn_norm, &x));
    assert!(out.tensor().bitwise_eq(&want));
}

#[test]
fn zero_cross_output_makes_score_document_independent() {
    let mut m = MoresModel::random(hp(), 4).unwrap();
    for k in 0..2 {
        for p in ["weight", "bias"] {
            let name = format!("interaction.blocks.{k}.cross.output.{p}");
            let dims = m.store().by_name(&name).unwrap().dims().to_vec();
            m.store_mut().assign(&name, Tensor::zeros(&dims)).unwrap();
        }
    }
    let q = m.encode_query(&[5, 6, 7], None).unwrap();
    let d1 = m.encode_document(&[8, 9], None).unwrap();
    let d2 = m.encode_document(&[10, 11, 12, 13], None).unwrap();
    let s1 = m.score(&q, DocRepr::Raw(&d1), None, None).unwrap();
    let s2 = m.score(&q, DocRepr::Raw(&d2), None, None).unwrap();
    assert_eq!(s1.to_bits(), s2.to_bits());
}

#[test]
fn encoding_is_deterministic() {
    let m = MoresModel::random(hp(), 5).unwrap();
    let a = m.encode_document(&[4, 5, 6], None).unwrap();
    let b = m.encode_document(&[4, 5, 6], None).unwrap();
    assert!(a.bitwise_eq(&b));
    let a = m.encode_query(&[4, 5], None).unwrap();
    let b = m.encode_query(&[4, 5], None).unwrap();
    assert!(a.bitwise_eq(&b));
    assert_eq!(a.rows(), 3);
}

#[test]
fn stacked_blocks_leave_document_untouched_and_s2_matches_s1() {
    let m = MoresModel::random(hp(), 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let q = m.encode_query(&tokens(&mut rng, 4), None).unwrap();
        let d = m.encode_document(&tokens(&mut rng, 9), None).unwrap();
        let before = d.clone();
        let s1 = m.score(&q, DocRepr::Raw(&d), None, None).unwrap();
        assert!(d.bitwise_eq(&before));
        let kv = m.project_document(&d).unwrap();
        assert_eq!(kv.len(), 2);
        let s2 = m.score(&q, DocRepr::Projected(&kv), None, None).unwrap();
        assert_eq!(s1.to_bits(), s2.to_bits());
    }
}

#[test]
fn padding_with_masked_tokens_is_exact() {
    let m = MoresModel::random(hp(), 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let doc = tokens(&mut rng, 6);
    let q = m.encode_query(&tokens(&mut rng, 3), None).unwrap();
    let d = m.encode_document(&doc, None).unwrap();
    let base = m.score(&q, DocRepr::Raw(&d), None, None).unwrap();
    let mut padded = doc.clone();
    padded.resize(11, PAD);
    let mask: Vec<bool> = (0..11).map(|i| i < 6).collect();
    let dp = m.encode_document(&padded, Some(&mask)).unwrap();
    let s = m.score(&q, DocRepr::Raw(&dp), Some(&mask), None).unwrap();
    assert_eq!(s.to_bits(), base.to_bits());
}

#[test]
fn monolithic_attention_score_macs() {
    let hp = HyperParams::donor(64, 4, 256, 100, 600, 1);
    let m = MonolithicModel::random(hp, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let q: Vec<u32> = (0..16).map(|_| rng.random_range(4..100)).collect();
    let d: Vec<u32> = (0..512).map(|_| rng.random_range(4..100)).collect();
    let (_, macs) = m.score_counted(&q, &d, None).unwrap();
    assert_eq!(macs.get(MacKind::AttnScore), 64 * 530 * 530);
    assert_eq!(macs.get(MacKind::AttnScore), 17_977_600);
    assert_eq!(macs, cost::monolithic_macs(&hp, 16, 512));
}

fn query_macs(m: &MoresModel, q: &[u32]) -> MacCounter {
    let mut g = Eager::new();
    m.encode_query_in(&mut g, q, None).unwrap();
    *g.macs()
}

#[test]
fn measured_macs_equal_inventory() {
    for (k, d) in [(1, 32), (2, 32), (1, 128), (2, 128)] {
        let hp = HyperParams {
            hidden: 64,
            heads: 4,
            ffn: 256,
            vocab_size: 100,
            max_positions: 256,
            doc_layers: 3,
            query_layers: 3 - k,
            interaction_blocks: k,
            source_layers: 3,
        };
        let m = MoresModel::random(hp, k as u64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
        let q: Vec<u32> = (0..16).map(|_| rng.random_range(4..100)).collect();
        let doc: Vec<u32> = (0..d).map(|_| rng.random_range(4..100)).collect();
        assert_eq!(query_macs(&m, &q), cost::query_encoding_macs(&hp, 16));
        let dt = m.encode_document(&doc, None).unwrap();
        let kv = m.project_document(&dt).unwrap();
        let qt = m.encode_query(&q, None).unwrap();
        let (_, s1) = m.score_counted(&qt, DocRepr::Raw(&dt), None, None).unwrap();
        let (_, s2) = m.score_counted(&qt, DocRepr::Projected(&kv), None, None).unwrap();
        assert_eq!(s1, cost::scoring_macs(&hp, 16, d, false));
        assert_eq!(s2, cost::scoring_macs(&hp, 16, d, true));
        assert_eq!(s1.total() - s2.total(), (2 * k * d * 64 * 64) as u64);
        assert!(s2.total() < s1.total());
    }
}
