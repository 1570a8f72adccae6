//! Finite-difference checks for every differentiable op and every model.

use serde::Serialize;

use crate::error::Result;
use crate::models::{
    assemble_s2ut, joint_loss, w2v_contrastive_loss, AuxHeadConfig, BlockKind, ConformerBlock, CtcModel,
    DecoderLayer, EncoderLayer, Mode, ModelConfig, S2utConfig, S2utModel, Seq2SeqModel, W2vModel, CTC_BLANK,
};
use crate::tensor::{grad_check, grad_check_params, Checkpoint, GradCheckReport, Graph, ParamStore, RngStream, Tensor, Var};

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

type Check = fn(&mut RngStream) -> Result<GradCheckReport>;

/// One named gradient check, run on a fresh random instance per call.
pub struct Case {
    pub name: &'static str,
    pub model: bool,
    pub run: Check,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub instances: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

fn randn(rng: &mut RngStream, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).expect("shape")
}

/// Contracts `x` with a fixed random tensor so every output element matters.
fn project(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let mut r = RngStream::new(seed);
    let w = (0..g.value(x).len()).map(|_| r.normal()).collect();
    let y = g.mul_const(x, w)?;
    Ok(g.sum(y))
}

fn check(f: impl Fn(&mut Graph, &[Var]) -> Result<Var>, inputs: &[Tensor]) -> Result<GradCheckReport> {
    grad_check(f, inputs, EPS, TOL)
}

/// Materializes, then perturbs every parameter so norms and biases are not at
/// their initial constants.
fn random_store(store: &mut ParamStore, rng: &mut RngStream) {
    store.materialize(&rng.split_str("init"));
    let mut r = rng.split_str("perturb");
    for id in store.ids().collect::<Vec<_>>() {
        for x in store.tensor_mut(id).data_mut() {
            *x += 0.3 * r.normal();
        }
    }
}

fn check_params(store: &ParamStore, f: impl Fn(&mut Graph, &ParamStore) -> Result<Var>) -> Result<GradCheckReport> {
    grad_check_params(f, store, EPS, TOL)
}

fn seed(rng: &mut RngStream) -> u64 {
    rng.next_u64()
}

fn op_matmul(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    check(|g, v| { let y = g.matmul(v[0], v[1])?; project(g, y, s) }, &[randn(r, &[3, 4]), randn(r, &[4, 2])])
}

fn op_matmul_nt(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    check(|g, v| { let y = g.matmul_nt(v[0], v[1])?; project(g, y, s) }, &[randn(r, &[3, 4]), randn(r, &[5, 4])])
}

fn op_transpose(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    check(|g, v| { let y = g.transpose(v[0])?; project(g, y, s) }, &[randn(r, &[3, 4])])
}

fn op_reshape(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    check(|g, v| { let y = g.reshape(v[0], vec![2, 6])?; project(g, y, s) }, &[randn(r, &[3, 4])])
}

fn op_add(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    check(|g, v| { let y = g.add(v[0], v[1])?; project(g, y, s) }, &[randn(r, &[3, 4]), randn(r, &[3, 4])])
}

fn op_mul(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    check(|g, v| { let y = g.mul(v[0], v[1])?; project(g, y, s) }, &[randn(r, &[3, 4]), randn(r, &[3, 4])])
}

fn op_add_row(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    check(|g, v| { let y = g.add_row(v[0], v[1])?; project(g, y, s) }, &[randn(r, &[3, 4]), randn(r, &[4])])
}

fn op_scale(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    check(|g, v| { let y = g.scale(v[0], -1.7); project(g, y, s) }, &[randn(r, &[3, 4])])
}

fn op_add_const(r: &mut RngStream) -> Result<GradCheckReport> {
    let (s, c) = (seed(r), randn(r, &[3, 4]));
    check(|g, v| { let y = g.add_const(v[0], c.data())?; project(g, y, s) }, &[randn(r, &[3, 4])])
}

fn op_mul_const(r: &mut RngStream) -> Result<GradCheckReport> {
    let (s, c) = (seed(r), randn(r, &[3, 4]));
    check(|g, v| { let y = g.mul_const(v[0], c.data().to_vec())?; project(g, y, s) }, &[randn(r, &[3, 4])])
}

fn op_dropout(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    check(
        |g, v| {
            let mut mask_rng = RngStream::new(s);
            let y = g.dropout(v[0], 0.4, Some(&mut mask_rng))?;
            project(g, y, s)
        },
        &[randn(r, &[4, 5])],
    )
}

fn op_gelu(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    check(|g, v| { let y = g.gelu(v[0]); project(g, y, s) }, &[randn(r, &[3, 4])])
}

fn op_silu(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    check(|g, v| { let y = g.silu(v[0]); project(g, y, s) }, &[randn(r, &[3, 4])])
}

fn op_sigmoid(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    check(|g, v| { let y = g.sigmoid(v[0]); project(g, y, s) }, &[randn(r, &[3, 4])])
}

fn op_glu(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    check(|g, v| { let y = g.glu(v[0])?; project(g, y, s) }, &[randn(r, &[3, 6])])
}

fn op_softmax(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    check(|g, v| { let y = g.softmax(v[0]); project(g, y, s) }, &[randn(r, &[3, 5])])
}

fn op_log_softmax(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    check(|g, v| { let y = g.log_softmax(v[0]); project(g, y, s) }, &[randn(r, &[3, 5])])
}

fn op_layer_norm(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    check(
        |g, v| { let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?; project(g, y, s) },
        &[randn(r, &[3, 5]), randn(r, &[5]), randn(r, &[5])],
    )
}

fn op_l2_normalize_rows(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    check(|g, v| { let y = g.l2_normalize_rows(v[0]); project(g, y, s) }, &[randn(r, &[3, 4])])
}

fn op_row_sum(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    check(|g, v| { let y = g.row_sum(v[0]); project(g, y, s) }, &[randn(r, &[3, 4])])
}

fn op_sum(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    check(|g, v| { let y = g.mul(v[0], v[0])?; let y = g.sum(y); project(g, y, s) }, &[randn(r, &[3, 4])])
}

fn op_mean(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    check(|g, v| { let y = g.mul(v[0], v[0])?; let y = g.mean(y); project(g, y, s) }, &[randn(r, &[3, 4])])
}

fn op_embedding(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    let ids = [2, 0, 2, 4];
    check(|g, v| { let y = g.embedding(v[0], &ids)?; project(g, y, s) }, &[randn(r, &[5, 3])])
}

fn op_gather_rows(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    let idx = [1, 1, 3, 0];
    check(|g, v| { let y = g.gather_rows(v[0], &idx)?; project(g, y, s) }, &[randn(r, &[4, 3])])
}

fn op_replace_rows(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    let rows = [false, true, true, false];
    check(|g, v| { let y = g.replace_rows(v[0], v[1], &rows)?; project(g, y, s) }, &[randn(r, &[4, 3]), randn(r, &[3])])
}

fn op_slice_cols(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    check(|g, v| { let y = g.slice_cols(v[0], 1, 2)?; project(g, y, s) }, &[randn(r, &[3, 5])])
}

fn op_slice_rows(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    check(|g, v| { let y = g.slice_rows(v[0], 1, 2)?; project(g, y, s) }, &[randn(r, &[4, 3])])
}

fn op_concat_cols(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    check(|g, v| { let y = g.concat_cols(v)?; project(g, y, s) }, &[randn(r, &[3, 2]), randn(r, &[3, 4])])
}

fn op_concat_rows(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    check(|g, v| { let y = g.concat_rows(v)?; project(g, y, s) }, &[randn(r, &[2, 3]), randn(r, &[4, 3])])
}

fn op_conv1d(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    check(
        |g, v| { let y = g.conv1d(v[0], v[1], Some(v[2]), 2, 1, 1)?; project(g, y, s) },
        &[randn(r, &[7, 4]), randn(r, &[3, 4, 3]), randn(r, &[3])],
    )
}

fn op_conv1d_depthwise(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    check(
        |g, v| { let y = g.conv1d(v[0], v[1], None, 1, 2, 4)?; project(g, y, s) },
        &[randn(r, &[6, 4]), randn(r, &[4, 1, 5])],
    )
}

fn op_attention(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    check(
        |g, v| { let y = g.attention(v[0], v[1], v[2], 2, false)?; project(g, y, s) },
        &[randn(r, &[3, 4]), randn(r, &[5, 4]), randn(r, &[5, 4])],
    )
}

fn op_attention_causal(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    check(
        |g, v| { let y = g.attention(v[0], v[1], v[2], 2, true)?; project(g, y, s) },
        &[randn(r, &[4, 4]), randn(r, &[4, 4]), randn(r, &[4, 4])],
    )
}

fn op_label_smoothed_nll(r: &mut RngStream) -> Result<GradCheckReport> {
    let tgt = [1, 4, 0, 2];
    check(|g, v| g.label_smoothed_nll(v[0], &tgt, 0.1, 0, None), &[randn(r, &[4, 5])])
}

fn op_ctc_loss(r: &mut RngStream) -> Result<GradCheckReport> {
    let tgt = [1, 2, 2];
    check(
        |g, v| {
            let lp = g.log_softmax(v[0]);
            Ok(g.ctc_loss(lp, &tgt, 0)?.0)
        },
        &[randn(r, &[6, 4])],
    )
}

fn small_cfg(kind: BlockKind) -> ModelConfig {
    ModelConfig {
        d_model: 4,
        n_heads: 2,
        ffn_dim: 6,
        enc_layers: 2,
        dec_layers: 1,
        dropout: 0.0,
        layerdrop: 0.0,
        src_vocab: 6,
        tgt_vocab: 7,
        max_positions: 16,
        block_kind: kind,
        conv_kernel: 3,
        feat_dim: 3,
    }
}

fn model_encoder_layer(r: &mut RngStream) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let layer = EncoderLayer::declare(&mut store, "encoder.0", 4, 2, 6)?;
    random_store(&mut store, r);
    let (x, s) = (randn(r, &[3, 4]), seed(r));
    check_params(&store, |g, st| {
        let xv = g.input(&x);
        let y = layer.forward(g, st, xv, 0.0, &mut Mode::eval())?;
        project(g, y, s)
    })
}

fn model_decoder_layer(r: &mut RngStream) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let layer = DecoderLayer::declare(&mut store, "decoder.0", 4, 6, 2, 6)?;
    random_store(&mut store, r);
    let (x, mem, s) = (randn(r, &[3, 4]), randn(r, &[5, 6]), seed(r));
    check_params(&store, |g, st| {
        let xv = g.input(&x);
        let mv = g.input(&mem);
        let y = layer.forward(g, st, xv, mv, 0.0, &mut Mode::eval())?;
        project(g, y, s)
    })
}

fn model_conformer_block(r: &mut RngStream) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let block = ConformerBlock::declare(&mut store, "encoder.0", 4, 2, 6, 3)?;
    random_store(&mut store, r);
    let (x, s) = (randn(r, &[5, 4]), seed(r));
    check_params(&store, |g, st| {
        let xv = g.input(&x);
        let y = block.forward(g, st, xv, 0.0, &mut Mode::eval())?;
        project(g, y, s)
    })
}

fn model_contrastive_loss(r: &mut RngStream) -> Result<GradCheckReport> {
    let s = seed(r);
    let mask = [true, false, true, true, false, true];
    check(
        |g, v| w2v_contrastive_loss(g, v[0], v[1], &mask, 3, 0.5, &mut RngStream::new(s)),
        &[randn(r, &[6, 4]), randn(r, &[6, 4])],
    )
}

fn model_w2v(r: &mut RngStream) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let model = W2vModel::declare(&mut store, &small_cfg(BlockKind::Transformer))?;
    random_store(&mut store, r);
    let (x, s) = (randn(r, &[6, 3]), seed(r));
    let mask = [false, true, true, false, true, false];
    let cc = crate::models::ContrastiveCfg { n_negatives: 2, temperature: 0.5 };
    check_params(&store, |g, st| {
        model.loss(g, st, &x, &mask, None, cc, &mut RngStream::new(s), &mut Mode::eval())
    })
}

fn model_ctc(r: &mut RngStream) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let model = CtcModel::declare(&mut store, &small_cfg(BlockKind::Conformer), 4)?;
    random_store(&mut store, r);
    let x = randn(r, &[6, 3]);
    check_params(&store, |g, st| {
        let lp = model.log_probs(g, st, &x, &mut Mode::eval())?;
        Ok(g.ctc_loss(lp, &[1, 3], CTC_BLANK)?.0)
    })
}

fn model_seq2seq(r: &mut RngStream) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let model = Seq2SeqModel::declare(&mut store, &small_cfg(BlockKind::Transformer))?;
    random_store(&mut store, r);
    check_params(&store, |g, st| {
        let logits = model.forward(g, st, &[1, 4, 2, 5], &[0, 3, 6], &mut Mode::eval())?;
        g.label_smoothed_nll(logits, &[3, 6, 1], 0.1, usize::MAX, None)
    })
}

/// Speech encoder and unit decoder from separate checkpoints, fresh adaptor
/// and auxiliary head, joint main and auxiliary loss.
fn model_s2ut(r: &mut RngStream) -> Result<GradCheckReport> {
    let m = small_cfg(BlockKind::Conformer);
    let cfg = S2utConfig { model: m.clone(), aux: vec![AuxHeadConfig { layer: 0, vocab: 5, weight: 2.0, dec_layers: 1 }] };
    let mut enc = ParamStore::new();
    W2vModel::declare(&mut enc, &m)?;
    random_store(&mut enc, &mut r.split_str("encoder"));
    let mut dec = ParamStore::new();
    Seq2SeqModel::declare(&mut dec, &ModelConfig { block_kind: BlockKind::Transformer, ..m.clone() })?;
    random_store(&mut dec, &mut r.split_str("decoder"));
    let (enc_ckpt, dec_ckpt) = (Checkpoint::from_store(&enc, Default::default()), Checkpoint::from_store(&dec, Default::default()));
    let (model, mut store) = assemble_s2ut(&cfg, Some(&enc_ckpt), Some(&dec_ckpt), seed(r))?;
    let mut p = r.split_str("perturb");
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).starts_with("adaptor") || store.name(id).starts_with("aux") {
            for x in store.tensor_mut(id).data_mut() {
                *x += 0.3 * p.normal();
            }
        }
    }
    let x = randn(r, &[7, 3]);
    let model: &S2utModel = &model;
    check_params(&store, |g, st| {
        let mut mode = Mode::eval();
        let out = model.forward(g, st, &x, &[0, 3, 6], &mut mode)?;
        let main = g.label_smoothed_nll(out.logits, &[3, 6, 1], 0.1, usize::MAX, None)?;
        let aux = model.aux_logits(g, st, &out.enc, 0, &[1, 2], &mut mode)?;
        let aux = g.label_smoothed_nll(aux, &[2, 4], 0.1, usize::MAX, None)?;
        joint_loss(g, main, &[(2.0, aux)])
    })
}

pub fn cases() -> Vec<Case> {
    let op = |name, run| Case { name, model: false, run };
    let model = |name, run| Case { name, model: true, run };
    vec![
        op("matmul", op_matmul as Check),
        op("matmul_nt", op_matmul_nt),
        op("transpose", op_transpose),
        op("reshape", op_reshape),
        op("add", op_add),
        op("mul", op_mul),
        op("add_row", op_add_row),
        op("scale", op_scale),
        op("add_const", op_add_const),
        op("mul_const", op_mul_const),
        op("dropout", op_dropout),
        op("gelu", op_gelu),
        op("silu", op_silu),
        op("sigmoid", op_sigmoid),
        op("glu", op_glu),
        op("softmax", op_softmax),
        op("log_softmax", op_log_softmax),
        op("layer_norm", op_layer_norm),
        op("l2_normalize_rows", op_l2_normalize_rows),
        op("row_sum", op_row_sum),
        op("sum", op_sum),
        op("mean", op_mean),
        op("embedding", op_embedding),
        op("gather_rows", op_gather_rows),
        op("replace_rows", op_replace_rows),
        op("slice_cols", op_slice_cols),
        op("slice_rows", op_slice_rows),
        op("concat_cols", op_concat_cols),
        op("concat_rows", op_concat_rows),
        op("conv1d", op_conv1d),
        op("conv1d_depthwise", op_conv1d_depthwise),
        op("attention", op_attention),
        op("attention_causal", op_attention_causal),
        op("label_smoothed_nll", op_label_smoothed_nll),
        op("ctc_loss", op_ctc_loss),
        model("transformer_encoder_layer", model_encoder_layer),
        model("transformer_decoder_layer", model_decoder_layer),
        model("conformer_block", model_conformer_block),
        model("contrastive_loss", model_contrastive_loss),
        model("w2v_model", model_w2v),
        model("ctc_model", model_ctc),
        model("transformer_seq2seq", model_seq2seq),
        model("s2ut_assembly", model_s2ut),
    ]
}

/// Runs every case on `instances` random instances; an entry passes when
/// every instance does.
pub fn run_suite(seed: u64, instances: usize) -> Result<Vec<SuiteEntry>> {
    let root = RngStream::new(seed);
    cases()
        .iter()
        .map(|c| {
            let mut worst = 0.0f64;
            let mut pass = true;
            for i in 0..instances {
                let rep = (c.run)(&mut root.split_str(c.name).split(i as u64))?;
                worst = worst.max(rep.max_rel_err);
                pass &= rep.pass;
            }
            Ok(SuiteEntry { name: c.name.to_string(), instances, max_rel_err: worst, pass })
        })
        .collect()
}
