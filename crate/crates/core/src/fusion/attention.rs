use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{
    matmul, softmax_rows, softmax_rows_backward, LinearGrads, LinearLayer, Matrix,
};

use super::{layer_from_tensors, layer_tensors};

/// Multi-head scaled dot-product attention with separate query, key, value
/// and output projections. Queries and keys/values may come from different
/// token sets with different feature widths.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    num_heads: usize,
    pub q_proj: LinearLayer,
    pub k_proj: LinearLayer,
    pub v_proj: LinearLayer,
    pub out_proj: LinearLayer,
}

/// Intermediate values kept by the forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct AttentionTape {
    query_in: Matrix,
    source: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    probs: Vec<Matrix>,
    concat: Matrix,
}

impl AttentionTape {
    /// Attention weights of head `h` (`N_query x N_source`).
    pub fn probs(&self, h: usize) -> &Matrix {
        &self.probs[h]
    }
}

#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub q_proj: LinearGrads,
    pub k_proj: LinearGrads,
    pub v_proj: LinearGrads,
    pub out_proj: LinearGrads,
    /// Gradient w.r.t. the query-side input features.
    pub d_query: Matrix,
    /// Gradient w.r.t. the key/value source features (both paths summed).
    pub d_source: Matrix,
}

impl MultiHeadAttention {
    pub fn new(
        num_heads: usize,
        q_proj: LinearLayer,
        k_proj: LinearLayer,
        v_proj: LinearLayer,
        out_proj: LinearLayer,
    ) -> Result<Self> {
        let d = q_proj.out_dim();
        if num_heads == 0 || !d.is_multiple_of(num_heads) {
            return Err(Error::shape(format!(
                "embedding width {d} is not divisible by {num_heads} heads"
            )));
        }
        if k_proj.out_dim() != d || v_proj.out_dim() != d {
            return Err(Error::shape(
                "query, key and value projections must share an output width",
            ));
        }
        if k_proj.in_dim() != v_proj.in_dim() {
            return Err(Error::shape(
                "key and value projections must read the same source width",
            ));
        }
        if out_proj.in_dim() != d {
            return Err(Error::shape(
                "output projection must read the concatenated heads",
            ));
        }
        Ok(Self {
            num_heads,
            q_proj,
            k_proj,
            v_proj,
            out_proj,
        })
    }

    pub fn init(
        query_dim: usize,
        source_dim: usize,
        embed_dim: usize,
        num_heads: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let q = LinearLayer::init_uniform(query_dim, embed_dim, rng);
        let k = LinearLayer::init_uniform(source_dim, embed_dim, rng);
        let v = LinearLayer::init_uniform(source_dim, embed_dim, rng);
        let o = LinearLayer::init_uniform(embed_dim, embed_dim, rng);
        Self::new(num_heads, q, k, v, o)
    }

    pub fn zeros(
        query_dim: usize,
        source_dim: usize,
        embed_dim: usize,
        num_heads: usize,
    ) -> Result<Self> {
        Self::new(
            num_heads,
            LinearLayer::zeros(query_dim, embed_dim),
            LinearLayer::zeros(source_dim, embed_dim),
            LinearLayer::zeros(source_dim, embed_dim),
            LinearLayer::zeros(embed_dim, embed_dim),
        )
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn embed_dim(&self) -> usize {
        self.q_proj.out_dim()
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim() / self.num_heads
    }

    pub fn query_dim(&self) -> usize {
        self.q_proj.in_dim()
    }

    pub fn source_dim(&self) -> usize {
        self.k_proj.in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.out_proj.out_dim()
    }

    fn scale(&self) -> f64 {
        1.0 / (self.head_dim() as f64).sqrt()
    }

    pub fn forward(&self, query_in: &Matrix, source: &Matrix) -> Result<Matrix> {
        self.forward_with_tape(query_in, source).map(|(y, _)| y)
    }

    pub fn forward_with_tape(
        &self,
        query_in: &Matrix,
        source: &Matrix,
    ) -> Result<(Matrix, AttentionTape)> {
        if source.rows() == 0 {
            return Err(Error::shape("attention needs at least one key/value token"));
        }
        let q = self.q_proj.forward(query_in)?;
        let k = self.k_proj.forward(source)?;
        let v = self.v_proj.forward(source)?;
        let dh = self.head_dim();
        let mut concat = Matrix::zeros(q.rows(), self.embed_dim());
        let mut probs = Vec::with_capacity(self.num_heads);
        for h in 0..self.num_heads {
            let qh = q.columns(h * dh, dh);
            let kh = k.columns(h * dh, dh);
            let vh = v.columns(h * dh, dh);
            let logits = matmul(&qh, &kh.transpose())?.scale(self.scale());
            let p = softmax_rows(&logits);
            concat.set_columns(h * dh, &matmul(&p, &vh)?);
            probs.push(p);
        }
        let y = self.out_proj.forward(&concat)?;
        Ok((
            y,
            AttentionTape {
                query_in: query_in.clone(),
                source: source.clone(),
                q,
                k,
                v,
                probs,
                concat,
            },
        ))
    }

    pub fn backward(&self, tape: &AttentionTape, d_out: &Matrix) -> Result<AttentionGrads> {
        let out_proj = self.out_proj.backward(&tape.concat, d_out)?;
        let d_concat = &out_proj.input;
        let dh = self.head_dim();
        let scale = self.scale();
        let mut dq = Matrix::zeros(tape.q.rows(), tape.q.cols());
        let mut dk = Matrix::zeros(tape.k.rows(), tape.k.cols());
        let mut dv = Matrix::zeros(tape.v.rows(), tape.v.cols());
        for h in 0..self.num_heads {
            let p = &tape.probs[h];
            let qh = tape.q.columns(h * dh, dh);
            let kh = tape.k.columns(h * dh, dh);
            let vh = tape.v.columns(h * dh, dh);
            let d_oh = d_concat.columns(h * dh, dh);
            let d_p = matmul(&d_oh, &vh.transpose())?;
            dv.set_columns(h * dh, &matmul(&p.transpose(), &d_oh)?);
            let d_logits = softmax_rows_backward(p, &d_p).scale(scale);
            dq.set_columns(h * dh, &matmul(&d_logits, &kh)?);
            dk.set_columns(h * dh, &matmul(&d_logits.transpose(), &qh)?);
        }
        let q_proj = self.q_proj.backward(&tape.query_in, &dq)?;
        let k_proj = self.k_proj.backward(&tape.source, &dk)?;
        let v_proj = self.v_proj.backward(&tape.source, &dv)?;
        let d_source = k_proj.input.add(&v_proj.input)?;
        let d_query = q_proj.input.clone();
        Ok(AttentionGrads {
            q_proj,
            k_proj,
            v_proj,
            out_proj,
            d_query,
            d_source,
        })
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, Matrix)> {
        let mut out = Vec::new();
        for (name, layer) in [
            ("q_proj", &self.q_proj),
            ("k_proj", &self.k_proj),
            ("v_proj", &self.v_proj),
            ("out_proj", &self.out_proj),
        ] {
            out.extend(layer_tensors(&format!("{prefix}.{name}"), layer));
        }
        out
    }

    pub fn from_named_tensors(
        prefix: &str,
        num_heads: usize,
        tensors: &[(String, Matrix)],
    ) -> Result<Self> {
        let get = |name: &str| layer_from_tensors(&format!("{prefix}.{name}"), tensors);
        Self::new(
            num_heads,
            get("q_proj")?,
            get("k_proj")?,
            get("v_proj")?,
            get("out_proj")?,
        )
    }
}

/// Residual self-attention layers producing multi-level features
/// `F(l) = F(l-1) + SelfAttn_l(F(l-1))`, `l = 1..=levels`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttentionStack {
    pub layers: Vec<MultiHeadAttention>,
}

impl SelfAttentionStack {
    pub fn init(levels: usize, dim: usize, num_heads: usize, rng: &mut SeededRng) -> Result<Self> {
        let layers = (0..levels)
            .map(|_| MultiHeadAttention::init(dim, dim, dim, num_heads, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn levels(&self, input: &Matrix) -> Result<Vec<Matrix>> {
        let mut current = input.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let update = layer.forward(&current, &current)?;
            current = current.add(&update)?;
            out.push(current.clone());
        }
        Ok(out)
    }
}
