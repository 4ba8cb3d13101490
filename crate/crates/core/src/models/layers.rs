use rand::Rng;

use crate::autodiff::{Graph, Tensor, TensorError, Var};

/// Half-width of the uniform initialization range for every weight matrix.
pub const INIT_SCALE: f64 = 0.08;

/// LSTM cell with fused gates. `w` maps `[x, h]` to the pre-activations of
/// the input, forget, candidate and output gates, in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct Lstm {
    pub w: Tensor,
    pub b: Tensor,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let w = Tensor::uniform(&[input + hidden, 4 * hidden], INIT_SCALE, rng);
        let mut b = Tensor::zeros(&[4 * hidden]);
        b.data_mut()[hidden..2 * hidden].fill(1.0);
        Self { w, b }
    }

    pub fn hidden(&self) -> usize {
        self.w.shape()[1] / 4
    }

    pub fn input(&self) -> usize {
        self.w.shape()[0] - self.hidden()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w: Var,
    pub b: Var,
    pub hidden: usize,
}

/// One LSTM transition for a batch: `x: [B, I]`, `h, c: [B, H]`.
pub fn lstm_cell(g: &mut Graph, p: LstmVars, x: Var, h: Var, c: Var) -> Result<(Var, Var), TensorError> {
    let hd = p.hidden;
    let xh = g.concat(&[x, h])?;
    let z = g.matmul(xh, p.w)?;
    let z = g.add_bias(z, p.b)?;
    let i = g.slice(z, 0, hd)?;
    let i = g.sigmoid(i)?;
    let f = g.slice(z, hd, 2 * hd)?;
    let f = g.sigmoid(f)?;
    let cand = g.slice(z, 2 * hd, 3 * hd)?;
    let cand = g.tanh(cand)?;
    let o = g.slice(z, 3 * hd, 4 * hd)?;
    let o = g.sigmoid(o)?;
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_new = g.add(keep, write)?;
    let squashed = g.tanh(c_new)?;
    let h_new = g.mul(o, squashed)?;
    Ok((h_new, c_new))
}

/// Fully connected layer with ReLU that maps grid cells to decoder features.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderProjection {
    pub w: Tensor,
    pub b: Tensor,
}

impl EncoderProjection {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            w: Tensor::uniform(&[input, output], INIT_SCALE, rng),
            b: Tensor::zeros(&[output]),
        }
    }

    pub fn input(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn output(&self) -> usize {
        self.w.shape()[1]
    }
}

/// Projects `cells: [B·N, D_in]` to `v: [B, N, D_h]` and `v̄: [B, D_h]`.
pub fn project_cells(
    g: &mut Graph,
    w: Var,
    b: Var,
    cells: Var,
    batch: usize,
    n: usize,
) -> Result<(Var, Var), TensorError> {
    let z = g.matmul(cells, w)?;
    let z = g.add_bias(z, b)?;
    let v = g.relu(z)?;
    let d = g.value(v).last_dim();
    let v = g.reshape(v, &[batch, n, d])?;
    let v_bar = g.mean_axis(v, 1)?;
    Ok((v, v_bar))
}

/// Additive spatial attention parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    /// `[D_h, A]`
    pub w_v: Tensor,
    /// `[H, A]`
    pub w_h: Tensor,
    /// `[A, 1]`
    pub u: Tensor,
}

impl Attention {
    pub fn new<R: Rng + ?Sized>(feat: usize, hidden: usize, attn: usize, rng: &mut R) -> Self {
        Self {
            w_v: Tensor::uniform(&[feat, attn], INIT_SCALE, rng),
            w_h: Tensor::uniform(&[hidden, attn], INIT_SCALE, rng),
            u: Tensor::uniform(&[attn, 1], INIT_SCALE, rng),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub w_v: Var,
    pub w_h: Var,
    pub u: Var,
}

/// `W_vα·v_i` for every cell; independent of the decoder state, so it is
/// computed once per image batch.
pub fn attention_keys(g: &mut Graph, p: AttentionVars, v: Var) -> Result<Var, TensorError> {
    let shape = g.value(v).shape().to_vec();
    let [b, n, d] = shape[..] else {
        return Err(TensorError::ShapeMismatch {
            op: "attention_keys",
            shapes: vec![shape],
        });
    };
    let flat = g.reshape(v, &[b * n, d])?;
    let k = g.matmul(flat, p.w_v)?;
    let a = g.value(k).last_dim();
    g.reshape(k, &[b, n, a])
}

/// Scores `u_αᵀ tanh(W_vα v_i + W_hα h1)`, normalizes them with a softmax
/// over cells and returns `(v̂: [B, D_h], α̂: [B, N])`.
pub fn attend(g: &mut Graph, p: AttentionVars, v: Var, keys: Var, h1: Var) -> Result<(Var, Var), TensorError> {
    let shape = g.value(keys).shape().to_vec();
    let [b, n, a] = shape[..] else {
        return Err(TensorError::ShapeMismatch {
            op: "attend",
            shapes: vec![shape],
        });
    };
    let q = g.matmul(h1, p.w_h)?;
    let e = g.add_expand(keys, q)?;
    let e = g.tanh(e)?;
    let e = g.reshape(e, &[b * n, a])?;
    let scores = g.matmul(e, p.u)?;
    let scores = g.reshape(scores, &[b, n])?;
    let alpha = g.softmax(scores)?;
    let v_hat = g.weighted_sum(alpha, v)?;
    Ok((v_hat, alpha))
}

/// Repeats each row block of `t: [R, ...]` `times` times along a new leading
/// batch axis: the result has shape `[times, R, ...]`.
pub(crate) fn tile(t: &Tensor, times: usize) -> Tensor {
    let mut shape = vec![times];
    shape.extend_from_slice(t.shape());
    let mut data = Vec::with_capacity(t.len() * times);
    for _ in 0..times {
        data.extend_from_slice(t.data());
    }
    Tensor::new(shape, data).expect("tiled shape matches data")
}

/// Stacks equally sized vectors into a `[rows, width]` tensor.
pub(crate) fn stack_rows(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(rows).expect("rows share a width")
}
