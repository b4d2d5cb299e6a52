//! Feature fusion at toy scale: patch embedding, multi-head cross-attention
//! from image+mono queries to SMPL keys/values, a sigmoid gate, and
//! zero-initialized injection into decoder features. Every parameterized
//! operation has a hand-written backward pass.

mod attention;
mod embed;
mod ffm;
mod inject;

pub use attention::{AttentionGrads, AttentionTape, MultiHeadAttention, SelfAttentionStack};
pub use embed::{image_patch_tokens, patch_embed, unpatchify_offsets, PointHead};
pub use ffm::{
    cross_attention, cross_attention_with_grad, ffm_forward, ffm_forward_with_grad, gate_fuse,
    gate_fuse_with_grad, gate_weights, CrossAttentionGrads, FfmGrads, GateGrads,
};
pub use inject::{
    cross_module_attention, cross_module_attention_with_grad, naive_fuse_inject,
    naive_fuse_inject_with_grad, refine_inject_first, refine_inject_first_with_grad,
    zero_conv_inject, zero_conv_inject_with_grad, CrossModuleGrads, InjectGrads, TwoBranchGrads,
};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{LinearGrads, LinearLayer, Matrix};

/// `N x d` token features laid out on a `rows x cols` grid (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    tokens: Matrix,
    grid_rows: usize,
    grid_cols: usize,
}

impl TokenGrid {
    pub fn new(tokens: Matrix, grid_shape: (usize, usize)) -> Result<Self> {
        let (rows, cols) = grid_shape;
        if tokens.rows() == 0 || tokens.cols() == 0 {
            return Err(Error::shape(
                "token grid needs at least one token of dimension >= 1",
            ));
        }
        if rows * cols != tokens.rows() {
            return Err(Error::shape(format!(
                "grid {rows}x{cols} does not hold {} tokens",
                tokens.rows()
            )));
        }
        if !tokens.is_finite() {
            return Err(Error::NonFinite("token features".into()));
        }
        Ok(Self {
            tokens,
            grid_rows: rows,
            grid_cols: cols,
        })
    }

    /// Tokens on a single-column grid.
    pub fn from_tokens(tokens: Matrix) -> Result<Self> {
        let n = tokens.rows();
        Self::new(tokens, (n, 1))
    }

    pub fn tokens(&self) -> &Matrix {
        &self.tokens
    }

    pub fn into_tokens(self) -> Matrix {
        self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        (self.grid_rows, self.grid_cols)
    }

    /// Same grid layout, new features.
    pub fn with_tokens(&self, tokens: Matrix) -> Result<TokenGrid> {
        TokenGrid::new(tokens, self.grid_shape())
    }
}

pub(crate) fn check_same(grids: &[(&str, &TokenGrid)]) -> Result<()> {
    let (first_name, first) = grids[0];
    for (name, g) in &grids[1..] {
        if g.len() != first.len() || g.dim() != first.dim() {
            return Err(Error::shape(format!(
                "{name} is {}x{} but {first_name} is {}x{}",
                g.len(),
                g.dim(),
                first.len(),
                first.dim()
            )));
        }
    }
    Ok(())
}

/// Token-wise affine map (a 1x1 convolution over the token grid) that
/// starts at exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroConv {
    layer: LinearLayer,
}

impl ZeroConv {
    pub fn new(d_in: usize, d_out: usize) -> Self {
        Self {
            layer: LinearLayer::zeros(d_in, d_out),
        }
    }

    /// Wrap arbitrary weights (e.g. after training, or for tests).
    pub fn from_layer(layer: LinearLayer) -> Self {
        Self { layer }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            layer: LinearLayer::new(Matrix::identity(d), vec![0.0; d]).expect("square identity"),
        }
    }

    pub fn random(d_in: usize, d_out: usize, rng: &mut SeededRng) -> Self {
        Self {
            layer: LinearLayer::init_uniform(d_in, d_out, rng),
        }
    }

    pub fn layer(&self) -> &LinearLayer {
        &self.layer
    }

    pub fn layer_mut(&mut self) -> &mut LinearLayer {
        &mut self.layer
    }

    pub fn is_zero(&self) -> bool {
        self.layer.weight().as_slice().iter().all(|w| *w == 0.0)
            && self.layer.bias().iter().all(|b| *b == 0.0)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.layer.forward(x)
    }

    pub fn backward(&self, x: &Matrix, d_out: &Matrix) -> Result<LinearGrads> {
        self.layer.backward(x, d_out)
    }
}

/// Parameters of one feature fusion module. The query projection reads the
/// concatenation `[image ‖ mono]` (`2d` inputs); the gate reads
/// `[cross ‖ mono ‖ smpl]` (`3d` inputs).
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModuleParams {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub attention: MultiHeadAttention,
    pub gate_l1: LinearLayer,
    pub gate_l2: LinearLayer,
}

pub const DEFAULT_NUM_HEADS: usize = 8;

impl FusionModuleParams {
    pub fn new(
        patch_size: usize,
        embed_dim: usize,
        attention: MultiHeadAttention,
        gate_l1: LinearLayer,
        gate_l2: LinearLayer,
    ) -> Result<Self> {
        if patch_size == 0 {
            return Err(Error::Config("patch size must be >= 1".into()));
        }
        if attention.embed_dim() != embed_dim || attention.query_dim() != 2 * embed_dim {
            return Err(Error::shape(format!(
                "attention must map 2*{embed_dim} query features to {embed_dim}"
            )));
        }
        if attention.source_dim() != embed_dim {
            return Err(Error::shape(
                "key/value projections must read embed_dim features",
            ));
        }
        if gate_l1.in_dim() != 3 * embed_dim
            || gate_l2.in_dim() != gate_l1.out_dim()
            || gate_l2.out_dim() != embed_dim
        {
            return Err(Error::shape(format!(
                "gate must map 3*{embed_dim} -> hidden -> {embed_dim}"
            )));
        }
        Ok(Self {
            patch_size,
            embed_dim,
            attention,
            gate_l1,
            gate_l2,
        })
    }

    /// Uniform-initialized module. `gate_hidden` is the width of the gate's
    /// hidden layer.
    pub fn init(
        patch_size: usize,
        embed_dim: usize,
        num_heads: usize,
        gate_hidden: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let attention =
            MultiHeadAttention::init(2 * embed_dim, embed_dim, embed_dim, num_heads, rng)?;
        let gate_l1 = LinearLayer::init_uniform(3 * embed_dim, gate_hidden, rng);
        let gate_l2 = LinearLayer::init_uniform(gate_hidden, embed_dim, rng);
        Self::new(patch_size, embed_dim, attention, gate_l1, gate_l2)
    }

    pub fn num_heads(&self) -> usize {
        self.attention.num_heads()
    }

    /// All parameters, named, biases as `1 x n` rows.
    pub fn named_tensors(&self) -> Vec<(String, Matrix)> {
        let mut out = self.attention.named_tensors("attention");
        for (name, layer) in [("gate_l1", &self.gate_l1), ("gate_l2", &self.gate_l2)] {
            out.extend(layer_tensors(name, layer));
        }
        out
    }

    /// Rebuild from [`named_tensors`](Self::named_tensors) output.
    pub fn from_named_tensors(
        patch_size: usize,
        num_heads: usize,
        tensors: &[(String, Matrix)],
    ) -> Result<Self> {
        let attention = MultiHeadAttention::from_named_tensors("attention", num_heads, tensors)?;
        let gate_l1 = layer_from_tensors("gate_l1", tensors)?;
        let gate_l2 = layer_from_tensors("gate_l2", tensors)?;
        let embed_dim = attention.embed_dim();
        Self::new(patch_size, embed_dim, attention, gate_l1, gate_l2)
    }
}

pub(crate) fn layer_tensors(name: &str, layer: &LinearLayer) -> Vec<(String, Matrix)> {
    vec![
        (format!("{name}.weight"), layer.weight().clone()),
        (
            format!("{name}.bias"),
            Matrix::from_vec(1, layer.bias().len(), layer.bias().to_vec()).expect("row vector"),
        ),
    ]
}

pub(crate) fn layer_from_tensors(name: &str, tensors: &[(String, Matrix)]) -> Result<LinearLayer> {
    let find = |key: String| {
        tensors
            .iter()
            .find(|(n, _)| *n == key)
            .map(|(_, m)| m.clone())
            .ok_or_else(|| Error::Format(format!("missing tensor {key}")))
    };
    let weight = find(format!("{name}.weight"))?;
    let bias = find(format!("{name}.bias"))?;
    if bias.rows() != 1 {
        return Err(Error::Format(format!("{name}.bias must be a single row")));
    }
    LinearLayer::new(weight, bias.into_vec())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
