//! Toy-scale reconstruction network assembled from the fusion blocks.
//!
//! A frozen random featurizer stands in for the image encoder, a residual
//! self-attention stack over image tokens provides the backbone decoder
//! features `E_base`, and a zero-initialized point head decodes the final
//! injected features into offsets on top of the input pointmap. With fresh
//! zero convolutions and head the network reproduces its input pointmap
//! exactly, whichever ablation mode is selected.

use crate::config::{AblationMode, FusionConfig, RefineConfig};
use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::fusion::{
    cross_module_attention, ffm_forward, image_patch_tokens, naive_fuse_inject, patch_embed,
    refine_inject_first, zero_conv_inject, FusionModuleParams, MultiHeadAttention, PointHead,
    SelfAttentionStack, TokenGrid, ZeroConv,
};
use crate::geometry::{bbox_from_smpl, refinement_trigger, CropRect, Image, PointMap};
use crate::resample::{bicubic_upsample, crop, integrate_refined, Raster};
use crate::rng::SeededRng;
use crate::tensor::LinearLayer;

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub cfg: FusionConfig,
    pub image_embed: LinearLayer,
    pub mono_embed: LinearLayer,
    pub smpl_embed: LinearLayer,
    pub point_embed: LinearLayer,
    /// One fusion module per view of an image pair.
    pub views: [FusionModuleParams; 2],
    pub fused_stack: SelfAttentionStack,
    pub backbone: SelfAttentionStack,
    pub inject: Vec<ZeroConv>,
    pub naive_inject: Vec<(ZeroConv, ZeroConv)>,
    pub head: PointHead,
    pub refine_first: (ZeroConv, ZeroConv),
    /// Cross-module attention for levels `2..=levels`.
    pub refine_attention: Vec<MultiHeadAttention>,
    pub refine_inject: Vec<ZeroConv>,
    pub crop_head: PointHead,
}

/// Injected scene features per level, plus the backbone features they were
/// injected into.
#[derive(Debug, Clone)]
pub struct SceneFeatures {
    pub e_base: Vec<TokenGrid>,
    pub e_scene: Vec<TokenGrid>,
}

#[derive(Debug, Clone)]
pub struct Refinement {
    pub rect: CropRect,
    /// Global pointmap crop at the upsampled working resolution.
    pub upsampled: PointMap,
    /// Refined crop at the same resolution.
    pub refined_crop: PointMap,
    pub merged: PointMap,
}

impl FusionModel {
    pub fn init(cfg: &FusionConfig, seed: u64) -> Result<Self> {
        let (d, p, heads, levels) = (cfg.embed_dim, cfg.patch_size, cfg.num_heads, cfg.levels);
        let mut rng = SeededRng::new(seed);
        let image_embed = LinearLayer::init_uniform(p * p, d, &mut rng);
        let mono_embed = LinearLayer::init_uniform(p * p * 3, d, &mut rng);
        let smpl_embed = LinearLayer::init_uniform(p * p * 3, d, &mut rng);
        let point_embed = LinearLayer::init_uniform(p * p * 3, d, &mut rng);
        let view1 = FusionModuleParams::init(p, d, heads, cfg.gate_hidden, &mut rng)?;
        let view2 = FusionModuleParams::init(p, d, heads, cfg.gate_hidden, &mut rng)?;
        let fused_stack = SelfAttentionStack::init(levels, d, heads, &mut rng)?;
        let backbone = SelfAttentionStack::init(levels, d, heads, &mut rng)?;
        let refine_attention = (1..levels)
            .map(|_| MultiHeadAttention::init(d, d, d, heads, &mut rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg: *cfg,
            image_embed,
            mono_embed,
            smpl_embed,
            point_embed,
            views: [view1, view2],
            fused_stack,
            backbone,
            inject: (0..levels).map(|_| ZeroConv::new(d, d)).collect(),
            naive_inject: (0..levels)
                .map(|_| (ZeroConv::new(d, d), ZeroConv::new(d, d)))
                .collect(),
            head: PointHead::new(d, p),
            refine_first: (ZeroConv::new(d, d), ZeroConv::new(d, d)),
            refine_attention,
            refine_inject: (1..levels).map(|_| ZeroConv::new(d, d)).collect(),
            crop_head: PointHead::new(d, p),
        })
    }

    fn levels_of(stack: &SelfAttentionStack, input: &TokenGrid) -> Result<Vec<TokenGrid>> {
        stack
            .levels(input.tokens())?
            .into_iter()
            .map(|m| input.with_tokens(m))
            .collect()
    }

    /// Features handed to the injection at each level, before injection.
    fn side_levels(
        &self,
        view: usize,
        f_img: &TokenGrid,
        f_mono: &TokenGrid,
        f_smpl: &TokenGrid,
        mode: AblationMode,
    ) -> Result<Vec<TokenGrid>> {
        match mode {
            AblationMode::Ffm => {
                let fused = ffm_forward(f_img, f_mono, f_smpl, &self.views[view % 2])?;
                Self::levels_of(&self.fused_stack, &fused)
            }
            AblationMode::NoFfm | AblationMode::OnlyMono => {
                Ok(vec![f_mono.clone(); self.cfg.levels])
            }
        }
    }

    /// Token features of one view. `pm_in` is the (aligned or raw) mono
    /// pointmap and `pm_smpl` the SMPL pointmap.
    pub fn scene_features(
        &self,
        view: usize,
        image: &Image,
        pm_in: &PointMap,
        pm_smpl: &PointMap,
        mode: AblationMode,
    ) -> Result<SceneFeatures> {
        let p = self.cfg.patch_size;
        let f_img = image_patch_tokens(image, p, &self.image_embed)?;
        let f_mono = patch_embed(pm_in, p, &self.mono_embed)?;
        let f_smpl = patch_embed(pm_smpl, p, &self.smpl_embed)?;
        let e_base = Self::levels_of(&self.backbone, &f_img)?;
        let side = self.side_levels(view, &f_img, &f_mono, &f_smpl, mode)?;
        let e_scene = (0..self.cfg.levels)
            .map(|l| match mode {
                AblationMode::Ffm | AblationMode::OnlyMono => {
                    zero_conv_inject(&side[l], &self.inject[l], &e_base[l])
                }
                AblationMode::NoFfm => {
                    let (zc1, zc2) = &self.naive_inject[l];
                    naive_fuse_inject(&f_mono, &f_smpl, zc1, zc2, &e_base[l])
                }
            })
            .collect::<Result<_>>()?;
        Ok(SceneFeatures { e_base, e_scene })
    }

    pub fn decode(&self, features: &SceneFeatures, pm_in: &PointMap) -> Result<PointMap> {
        let last = features
            .e_scene
            .last()
            .ok_or_else(|| Error::Config("model has no levels".into()))?;
        self.head.decode(last, pm_in)
    }

    /// Crop, upsample, re-run the feature path on the crop, inject point
    /// guidance and scene context, decode and merge back. `None` when the
    /// human is large enough that refinement is not triggered.
    #[allow(clippy::too_many_arguments)]
    pub fn refine(
        &self,
        view: usize,
        image: &Image,
        pm_global: &PointMap,
        pm_smpl: &PointMap,
        d_smpl: &DepthMap,
        scene: &SceneFeatures,
        mode: AblationMode,
        rcfg: &RefineConfig,
    ) -> Result<Option<Refinement>> {
        if !refinement_trigger(d_smpl, rcfg.area_threshold) {
            return Ok(None);
        }
        let p = self.cfg.patch_size;
        let rect = bbox_from_smpl(d_smpl, rcfg.margin)?;
        let round_up = |n: usize| (n * rcfg.upscale).div_ceil(p) * p;
        let (w, h) = (round_up(rect.width), round_up(rect.height));

        let up_pm = bicubic_upsample(&crop(pm_global, &rect)?, w, h)?;
        let up_smpl = bicubic_upsample(&crop(pm_smpl, &rect)?, w, h)?;
        let up_img = crop(image, &rect)?.resize_bicubic(w, h)?;

        let f_img = image_patch_tokens(&up_img, p, &self.image_embed)?;
        let f_crop_mono = patch_embed(&up_pm, p, &self.mono_embed)?;
        let f_crop_smpl = patch_embed(&up_smpl, p, &self.smpl_embed)?;
        let f_point = patch_embed(&up_pm, p, &self.point_embed)?;
        let e_crop_base = Self::levels_of(&self.backbone, &f_img)?;
        let f_crop = self.side_levels(view, &f_img, &f_crop_mono, &f_crop_smpl, mode)?;

        let (zc_a, zc_b) = &self.refine_first;
        let mut e_crop = refine_inject_first(&f_crop[0], &f_point, zc_a, zc_b, &e_crop_base[0])?;
        for l in 1..self.cfg.levels {
            e_crop = cross_module_attention(
                &f_crop[l],
                &scene.e_scene[l],
                &self.refine_attention[l - 1],
                &self.refine_inject[l - 1],
                &e_crop_base[l],
            )?;
        }
        let refined_crop = self.crop_head.decode(&e_crop, &up_pm)?;
        let merged = integrate_refined(pm_global, &refined_crop, &rect)?;
        Ok(Some(Refinement {
            rect,
            upsampled: up_pm,
            refined_crop,
            merged,
        }))
    }
}
