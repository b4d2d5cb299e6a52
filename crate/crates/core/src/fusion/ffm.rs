use crate::error::Result;
use crate::tensor::{LinearGrads, Matrix};

use super::attention::AttentionGrads;
use super::{check_same, sigmoid, FusionModuleParams, TokenGrid};

#[derive(Debug, Clone)]
pub struct CrossAttentionGrads {
    pub attention: AttentionGrads,
    pub d_img: Matrix,
    pub d_mono: Matrix,
    pub d_smpl: Matrix,
}

#[derive(Debug, Clone)]
pub struct GateGrads {
    pub l1: LinearGrads,
    pub l2: LinearGrads,
    pub d_cross: Matrix,
    pub d_mono: Matrix,
    pub d_smpl: Matrix,
}

#[derive(Debug, Clone)]
pub struct FfmGrads {
    pub attention: AttentionGrads,
    pub gate: GateGrads,
    pub d_img: Matrix,
    pub d_mono: Matrix,
    pub d_smpl: Matrix,
}

/// Queries from `[F_img ‖ F_mono]`, keys and values from `F_smpl`.
pub fn cross_attention(
    f_img: &TokenGrid,
    f_mono: &TokenGrid,
    f_smpl: &TokenGrid,
    params: &FusionModuleParams,
) -> Result<TokenGrid> {
    check_same(&[("f_img", f_img), ("f_mono", f_mono)])?;
    let query = Matrix::hcat(&[f_img.tokens(), f_mono.tokens()])?;
    let out = params.attention.forward(&query, f_smpl.tokens())?;
    f_mono.with_tokens(out)
}

pub fn cross_attention_with_grad(
    f_img: &TokenGrid,
    f_mono: &TokenGrid,
    f_smpl: &TokenGrid,
    params: &FusionModuleParams,
    d_out: &Matrix,
) -> Result<(TokenGrid, CrossAttentionGrads)> {
    check_same(&[("f_img", f_img), ("f_mono", f_mono)])?;
    let query = Matrix::hcat(&[f_img.tokens(), f_mono.tokens()])?;
    let (out, tape) = params
        .attention
        .forward_with_tape(&query, f_smpl.tokens())?;
    let attention = params.attention.backward(&tape, d_out)?;
    let d = f_img.dim();
    let grads = CrossAttentionGrads {
        d_img: attention.d_query.columns(0, d),
        d_mono: attention.d_query.columns(d, d),
        d_smpl: attention.d_source.clone(),
        attention,
    };
    Ok((f_mono.with_tokens(out)?, grads))
}

struct GateTape {
    concat: Matrix,
    hidden_pre: Matrix,
    hidden: Matrix,
    gate: Matrix,
}

fn gate_forward(
    f_cross: &TokenGrid,
    f_mono: &TokenGrid,
    f_smpl: &TokenGrid,
    params: &FusionModuleParams,
) -> Result<(Matrix, GateTape)> {
    check_same(&[("f_cross", f_cross), ("f_mono", f_mono), ("f_smpl", f_smpl)])?;
    let concat = Matrix::hcat(&[f_cross.tokens(), f_mono.tokens(), f_smpl.tokens()])?;
    let hidden_pre = params.gate_l1.forward(&concat)?;
    let hidden = hidden_pre.map(|x| x.max(0.0));
    let gate = params.gate_l2.forward(&hidden)?.map(sigmoid);
    let out = f_mono.tokens().add(&gate.hadamard(f_cross.tokens())?)?;
    Ok((
        out,
        GateTape {
            concat,
            hidden_pre,
            hidden,
            gate,
        },
    ))
}

/// Per-token gate `sigmoid(l2(relu(l1([F_cross ‖ F_mono ‖ F_smpl]))))`.
pub fn gate_weights(
    f_cross: &TokenGrid,
    f_mono: &TokenGrid,
    f_smpl: &TokenGrid,
    params: &FusionModuleParams,
) -> Result<Matrix> {
    gate_forward(f_cross, f_mono, f_smpl, params).map(|(_, tape)| tape.gate)
}

/// `F_mono + G ⊙ F_cross`.
pub fn gate_fuse(
    f_cross: &TokenGrid,
    f_mono: &TokenGrid,
    f_smpl: &TokenGrid,
    params: &FusionModuleParams,
) -> Result<TokenGrid> {
    let (out, _) = gate_forward(f_cross, f_mono, f_smpl, params)?;
    f_mono.with_tokens(out)
}

pub fn gate_fuse_with_grad(
    f_cross: &TokenGrid,
    f_mono: &TokenGrid,
    f_smpl: &TokenGrid,
    params: &FusionModuleParams,
    d_out: &Matrix,
) -> Result<(TokenGrid, GateGrads)> {
    let (out, tape) = gate_forward(f_cross, f_mono, f_smpl, params)?;
    let d = f_mono.dim();
    let d_gate = d_out.hadamard(f_cross.tokens())?;
    let d_gate_pre = d_gate.zip_map(&tape.gate, |dg, g| dg * g * (1.0 - g))?;
    let l2 = params.gate_l2.backward(&tape.hidden, &d_gate_pre)?;
    let d_hidden_pre = l2
        .input
        .zip_map(&tape.hidden_pre, |dh, h| if h > 0.0 { dh } else { 0.0 })?;
    let l1 = params.gate_l1.backward(&tape.concat, &d_hidden_pre)?;

    let mut d_cross = d_out.hadamard(&tape.gate)?;
    d_cross.add_assign(&l1.input.columns(0, d))?;
    let d_mono = d_out.add(&l1.input.columns(d, d))?;
    let d_smpl = l1.input.columns(2 * d, d);
    Ok((
        f_mono.with_tokens(out)?,
        GateGrads {
            l1,
            l2,
            d_cross,
            d_mono,
            d_smpl,
        },
    ))
}

/// Cross-attention followed by the gated residual: the fused features.
pub fn ffm_forward(
    f_img: &TokenGrid,
    f_mono: &TokenGrid,
    f_smpl: &TokenGrid,
    params: &FusionModuleParams,
) -> Result<TokenGrid> {
    let cross = cross_attention(f_img, f_mono, f_smpl, params)?;
    gate_fuse(&cross, f_mono, f_smpl, params)
}

pub fn ffm_forward_with_grad(
    f_img: &TokenGrid,
    f_mono: &TokenGrid,
    f_smpl: &TokenGrid,
    params: &FusionModuleParams,
    d_out: &Matrix,
) -> Result<(TokenGrid, FfmGrads)> {
    let cross = cross_attention(f_img, f_mono, f_smpl, params)?;
    let (out, gate) = gate_fuse_with_grad(&cross, f_mono, f_smpl, params, d_out)?;
    let (_, att) = cross_attention_with_grad(f_img, f_mono, f_smpl, params, &gate.d_cross)?;
    let d_mono = gate.d_mono.add(&att.d_mono)?;
    let d_smpl = gate.d_smpl.add(&att.d_smpl)?;
    Ok((
        out,
        FfmGrads {
            attention: att.attention,
            d_img: att.d_img,
            d_mono,
            d_smpl,
            gate,
        },
    ))
}
