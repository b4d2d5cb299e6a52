//! Zero-convolution injection of side features into decoder features.
//!
//! All of these reduce to their base features when their ZeroConvs are
//! fresh, so an untrained injection leaves the backbone path untouched.

use crate::error::{Error, Result};
use crate::tensor::{LinearGrads, Matrix};

use super::attention::{AttentionGrads, MultiHeadAttention};
use super::{check_same, TokenGrid, ZeroConv};

#[derive(Debug, Clone)]
pub struct InjectGrads {
    pub zc: LinearGrads,
    pub d_f: Matrix,
    pub d_base: Matrix,
}

#[derive(Debug, Clone)]
pub struct TwoBranchGrads {
    pub zc_a: LinearGrads,
    pub zc_b: LinearGrads,
    pub d_a: Matrix,
    pub d_b: Matrix,
    pub d_base: Matrix,
}

#[derive(Debug, Clone)]
pub struct CrossModuleGrads {
    pub attention: AttentionGrads,
    pub zc: LinearGrads,
    pub d_crop: Matrix,
    pub d_scene: Matrix,
    pub d_base: Matrix,
}

fn check_inject(f: &TokenGrid, zc: &ZeroConv, e_base: &TokenGrid) -> Result<()> {
    if f.len() != e_base.len() {
        return Err(Error::shape(format!(
            "{} feature tokens vs {} base tokens",
            f.len(),
            e_base.len()
        )));
    }
    if zc.layer().in_dim() != f.dim() || zc.layer().out_dim() != e_base.dim() {
        return Err(Error::shape(format!(
            "zero conv maps {} -> {}, features are {} and base is {}",
            zc.layer().in_dim(),
            zc.layer().out_dim(),
            f.dim(),
            e_base.dim()
        )));
    }
    Ok(())
}

/// `ZeroConv(f) + e_base`.
pub fn zero_conv_inject(f: &TokenGrid, zc: &ZeroConv, e_base: &TokenGrid) -> Result<TokenGrid> {
    check_inject(f, zc, e_base)?;
    let out = zc.forward(f.tokens())?.add(e_base.tokens())?;
    e_base.with_tokens(out)
}

pub fn zero_conv_inject_with_grad(
    f: &TokenGrid,
    zc: &ZeroConv,
    e_base: &TokenGrid,
    d_out: &Matrix,
) -> Result<(TokenGrid, InjectGrads)> {
    let out = zero_conv_inject(f, zc, e_base)?;
    let g = zc.backward(f.tokens(), d_out)?;
    Ok((
        out,
        InjectGrads {
            d_f: g.input.clone(),
            zc: g,
            d_base: d_out.clone(),
        },
    ))
}

fn two_branch(
    a: &TokenGrid,
    b: &TokenGrid,
    zc_a: &ZeroConv,
    zc_b: &ZeroConv,
    e_base: &TokenGrid,
) -> Result<TokenGrid> {
    check_same(&[("first branch", a), ("second branch", b)])?;
    check_inject(a, zc_a, e_base)?;
    check_inject(b, zc_b, e_base)?;
    let mut out = zc_a.forward(a.tokens())?;
    out.add_assign(&zc_b.forward(b.tokens())?)?;
    out.add_assign(e_base.tokens())?;
    e_base.with_tokens(out)
}

fn two_branch_with_grad(
    a: &TokenGrid,
    b: &TokenGrid,
    zc_a: &ZeroConv,
    zc_b: &ZeroConv,
    e_base: &TokenGrid,
    d_out: &Matrix,
) -> Result<(TokenGrid, TwoBranchGrads)> {
    let out = two_branch(a, b, zc_a, zc_b, e_base)?;
    let ga = zc_a.backward(a.tokens(), d_out)?;
    let gb = zc_b.backward(b.tokens(), d_out)?;
    Ok((
        out,
        TwoBranchGrads {
            d_a: ga.input.clone(),
            d_b: gb.input.clone(),
            zc_a: ga,
            zc_b: gb,
            d_base: d_out.clone(),
        },
    ))
}

/// Ablation path without the fusion module: `ZeroConv(F_mono) + ZeroConv(F_smpl) + E_base`.
pub fn naive_fuse_inject(
    f_mono: &TokenGrid,
    f_smpl: &TokenGrid,
    zc1: &ZeroConv,
    zc2: &ZeroConv,
    e_base: &TokenGrid,
) -> Result<TokenGrid> {
    two_branch(f_mono, f_smpl, zc1, zc2, e_base)
}

pub fn naive_fuse_inject_with_grad(
    f_mono: &TokenGrid,
    f_smpl: &TokenGrid,
    zc1: &ZeroConv,
    zc2: &ZeroConv,
    e_base: &TokenGrid,
    d_out: &Matrix,
) -> Result<(TokenGrid, TwoBranchGrads)> {
    two_branch_with_grad(f_mono, f_smpl, zc1, zc2, e_base, d_out)
}

/// First refinement decoder layer: crop features plus upsampled-pointmap
/// guidance, `ZeroConv(F_crop) + ZeroConv(F_point) + E_crop_base`.
pub fn refine_inject_first(
    f_crop_l1: &TokenGrid,
    f_point: &TokenGrid,
    zc_a: &ZeroConv,
    zc_b: &ZeroConv,
    e_crop_base_l1: &TokenGrid,
) -> Result<TokenGrid> {
    two_branch(f_crop_l1, f_point, zc_a, zc_b, e_crop_base_l1)
}

pub fn refine_inject_first_with_grad(
    f_crop_l1: &TokenGrid,
    f_point: &TokenGrid,
    zc_a: &ZeroConv,
    zc_b: &ZeroConv,
    e_crop_base_l1: &TokenGrid,
    d_out: &Matrix,
) -> Result<(TokenGrid, TwoBranchGrads)> {
    two_branch_with_grad(f_crop_l1, f_point, zc_a, zc_b, e_crop_base_l1, d_out)
}

/// Later refinement layers: crop tokens attend to scene tokens (query from
/// the crop alone), then the result is injected through `zc`.
pub fn cross_module_attention(
    f_crop_l: &TokenGrid,
    f_scene_l: &TokenGrid,
    attn: &MultiHeadAttention,
    zc: &ZeroConv,
    e_crop_base_l: &TokenGrid,
) -> Result<TokenGrid> {
    let refined = attn.forward(f_crop_l.tokens(), f_scene_l.tokens())?;
    let refined = f_crop_l.with_tokens(refined)?;
    zero_conv_inject(&refined, zc, e_crop_base_l)
}

pub fn cross_module_attention_with_grad(
    f_crop_l: &TokenGrid,
    f_scene_l: &TokenGrid,
    attn: &MultiHeadAttention,
    zc: &ZeroConv,
    e_crop_base_l: &TokenGrid,
    d_out: &Matrix,
) -> Result<(TokenGrid, CrossModuleGrads)> {
    let (refined, tape) = attn.forward_with_tape(f_crop_l.tokens(), f_scene_l.tokens())?;
    let refined = f_crop_l.with_tokens(refined)?;
    let (out, inject) = zero_conv_inject_with_grad(&refined, zc, e_crop_base_l, d_out)?;
    let attention = attn.backward(&tape, &inject.d_f)?;
    Ok((
        out,
        CrossModuleGrads {
            d_crop: attention.d_query.clone(),
            d_scene: attention.d_source.clone(),
            attention,
            zc: inject.zc,
            d_base: inject.d_base,
        },
    ))
}
