use rand::Rng;

use super::layers::{attend, attention_keys, lstm_cell, project_cells, tile, Attention, AttentionVars, EncoderProjection, Lstm, LstmVars};
use super::{
    bind_constants, bind_params, check_batch, check_step_inputs, rows_of, stack_grids, stack_state,
    teacher_forced_sum, unstack_states, Batch, Context, Dims, Dropout, ModelKind, RecurrentState, SequenceModel,
    StepMasks, TeacherForced, Trainable,
};
use crate::autodiff::{Graph, Tensor, TensorError, Var};
use crate::corpus::FeatureGrid;
use crate::{Error, Result};

/// Two-layer decoder: the first LSTM drives spatial attention, the second
/// predicts words from the attended feature and the first layer's output.
#[derive(Clone, Debug, PartialEq)]
pub struct TopDown {
    dims: Dims,
    pub proj: EncoderProjection,
    /// `[V, E]`
    pub embed: Tensor,
    /// Input `[h2, v̄, W_e e_t]`.
    pub lstm1: Lstm,
    pub attention: Attention,
    /// Input `[v̂, h1]`.
    pub lstm2: Lstm,
    /// `[H, V]`
    pub w_p: Tensor,
    /// `[V]`
    pub b_p: Tensor,
}

/// Tape handles for every [`TopDown`] parameter.
#[derive(Clone, Copy, Debug)]
pub struct TopDownVars {
    pub proj_w: Var,
    pub proj_b: Var,
    pub embed: Var,
    pub lstm1: LstmVars,
    pub attention: AttentionVars,
    pub lstm2: LstmVars,
    pub w_p: Var,
    pub b_p: Var,
}

impl TopDownVars {
    /// Handles in [`Trainable::parameters`] order.
    pub fn from_slice(v: &[Var], hidden: usize) -> Self {
        assert_eq!(v.len(), 12, "top-down model has 12 parameter tensors");
        Self {
            proj_w: v[0],
            proj_b: v[1],
            embed: v[2],
            lstm1: LstmVars { w: v[3], b: v[4], hidden },
            attention: AttentionVars { w_v: v[5], w_h: v[6], u: v[7] },
            lstm2: LstmVars { w: v[8], b: v[9], hidden },
            w_p: v[10],
            b_p: v[11],
        }
    }
}

/// Projected cells, their mean and the attention keys, for a batch.
#[derive(Clone, Copy, Debug)]
pub struct ImageFeatures {
    /// `[B, N, D_h]`
    pub v: Var,
    /// `[B, D_h]`
    pub v_bar: Var,
    /// `[B, N, A]`
    pub keys: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct TopDownState {
    pub h1: Var,
    pub c1: Var,
    pub h2: Var,
    pub c2: Var,
}

impl TopDownState {
    pub fn zeros(g: &mut Graph, batch: usize, hidden: usize) -> Self {
        let mut z = || g.constant(Tensor::zeros(&[batch, hidden]));
        Self {
            h1: z(),
            c1: z(),
            h2: z(),
            c2: z(),
        }
    }
}

impl TopDown {
    pub fn new<R: Rng + ?Sized>(dims: Dims, rng: &mut R) -> Self {
        let Dims {
            vocab,
            feature_in,
            feature,
            embed,
            hidden,
            attention,
        } = dims;
        Self {
            dims,
            proj: EncoderProjection::new(feature_in, feature, rng),
            embed: Tensor::uniform(&[vocab, embed], super::INIT_SCALE, rng),
            lstm1: Lstm::new(hidden + feature + embed, hidden, rng),
            attention: Attention::new(feature, hidden, attention, rng),
            lstm2: Lstm::new(feature + hidden, hidden, rng),
            w_p: Tensor::uniform(&[hidden, vocab], super::INIT_SCALE, rng),
            b_p: Tensor::zeros(&[vocab]),
        }
    }

    /// Projects `cells: [B·N, D_in]` and precomputes the attention keys.
    pub fn encode_graph(
        g: &mut Graph,
        p: &TopDownVars,
        cells: Var,
        batch: usize,
        n: usize,
    ) -> Result<ImageFeatures, TensorError> {
        let (v, v_bar) = project_cells(g, p.proj_w, p.proj_b, cells, batch, n)?;
        let keys = attention_keys(g, p.attention, v)?;
        Ok(ImageFeatures { v, v_bar, keys })
    }

    /// One decoder step for a batch; returns `(log p(· | w_<t, I): [B, V],
    /// new state, α̂: [B, N])`.
    pub fn step_graph(
        g: &mut Graph,
        p: &TopDownVars,
        img: &ImageFeatures,
        s: &TopDownState,
        prev: &[usize],
        masks: &StepMasks,
    ) -> Result<(Var, TopDownState, Var), TensorError> {
        let mut e = g.embedding(p.embed, prev)?;
        if let Some(m) = &masks.embed {
            e = g.dropout(e, m.clone())?;
        }
        let x1 = g.concat(&[s.h2, img.v_bar, e])?;
        let (h1, c1) = lstm_cell(g, p.lstm1, x1, s.h1, s.c1)?;
        let (v_hat, alpha) = attend(g, p.attention, img.v, img.keys, h1)?;
        let x2 = g.concat(&[v_hat, h1])?;
        let (h2, c2) = lstm_cell(g, p.lstm2, x2, s.h2, s.c2)?;
        let mut top = h2;
        if let Some(m) = &masks.output {
            top = g.dropout(top, m.clone())?;
        }
        let logits = g.matmul(top, p.w_p)?;
        let logits = g.add_bias(logits, p.b_p)?;
        let logp = g.log_softmax(logits)?;
        Ok((logp, TopDownState { h1, c1, h2, c2 }, alpha))
    }

    fn context_vars(&self, g: &mut Graph, ctx: &Context, batch: usize) -> ImageFeatures {
        let [v, v_bar, keys] = &ctx.0[..] else {
            panic!("top-down context holds v, v̄ and keys");
        };
        ImageFeatures {
            v: g.constant(tile(v, batch)),
            v_bar: g.constant(tile(v_bar, batch)),
            keys: g.constant(tile(keys, batch)),
        }
    }

    /// Single-hypothesis step that also reports the attention weights.
    pub fn decoder_step(
        &self,
        ctx: &Context,
        state: &RecurrentState,
        prev: usize,
    ) -> Result<(Vec<f64>, RecurrentState, Vec<f64>)> {
        let (mut logp, mut states, alpha) = self.step_with_alpha(ctx, &[state], &[prev])?;
        Ok((logp.remove(0), states.remove(0), alpha.row(0).to_vec()))
    }

    fn step_with_alpha(
        &self,
        ctx: &Context,
        states: &[&RecurrentState],
        prev: &[usize],
    ) -> Result<(Vec<Vec<f64>>, Vec<RecurrentState>, Tensor)> {
        check_step_inputs(states, prev, self.dims.vocab, 4)?;
        let b = states.len();
        let mut g = Graph::new();
        let vars = bind_constants(&mut g, self.parameters());
        let p = TopDownVars::from_slice(&vars, self.dims.hidden);
        let img = self.context_vars(&mut g, ctx, b);
        let st: Vec<Var> = (0..4).map(|i| g.constant(stack_state(states, i))).collect();
        let s = TopDownState {
            h1: st[0],
            c1: st[1],
            h2: st[2],
            c2: st[3],
        };
        let (logp, s, alpha) = Self::step_graph(&mut g, &p, &img, &s, prev, &StepMasks::default())?;
        let next = unstack_states(&[g.value(s.h1), g.value(s.c1), g.value(s.h2), g.value(s.c2)]);
        Ok((rows_of(g.value(logp)), next, g.value(alpha).clone()))
    }
}

impl SequenceModel for TopDown {
    fn vocab_size(&self) -> usize {
        self.dims.vocab
    }

    fn start(&self, grid: Option<&FeatureGrid>) -> Result<(Context, RecurrentState)> {
        let grid = grid.ok_or_else(|| Error::Dimension("the top-down decoder needs an image".into()))?;
        let (v, v_bar) = encode_features(grid, &self.proj)?;
        let mut g = Graph::new();
        let w_v = g.constant_ref(&self.attention.w_v);
        let vv = g.constant(v.clone());
        let keys = g.matmul(vv, w_v)?;
        let keys = g.value(keys).clone();
        let h = self.dims.hidden;
        let state = RecurrentState(vec![vec![0.0; h]; 4]);
        Ok((Context(vec![v, v_bar, keys]), state))
    }

    fn step(
        &self,
        ctx: &Context,
        states: &[&RecurrentState],
        prev: &[usize],
    ) -> Result<(Vec<Vec<f64>>, Vec<RecurrentState>)> {
        let (logp, next, _) = self.step_with_alpha(ctx, states, prev)?;
        Ok((logp, next))
    }
}

impl Trainable for TopDown {
    fn kind(&self) -> ModelKind {
        ModelKind::TopDown
    }

    fn dims(&self) -> Dims {
        self.dims
    }

    fn parameters(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("proj.w", &self.proj.w),
            ("proj.b", &self.proj.b),
            ("embed", &self.embed),
            ("lstm1.w", &self.lstm1.w),
            ("lstm1.b", &self.lstm1.b),
            ("att.w_v", &self.attention.w_v),
            ("att.w_h", &self.attention.w_h),
            ("att.u", &self.attention.u),
            ("lstm2.w", &self.lstm2.w),
            ("lstm2.b", &self.lstm2.b),
            ("out.w", &self.w_p),
            ("out.b", &self.b_p),
        ]
    }

    fn parameters_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("proj.w", &mut self.proj.w),
            ("proj.b", &mut self.proj.b),
            ("embed", &mut self.embed),
            ("lstm1.w", &mut self.lstm1.w),
            ("lstm1.b", &mut self.lstm1.b),
            ("att.w_v", &mut self.attention.w_v),
            ("att.w_h", &mut self.attention.w_h),
            ("att.u", &mut self.attention.u),
            ("lstm2.w", &mut self.lstm2.w),
            ("lstm2.b", &mut self.lstm2.b),
            ("out.w", &mut self.w_p),
            ("out.b", &mut self.b_p),
        ]
    }

    fn teacher_forced<'p>(
        &'p self,
        g: &mut Graph<'p>,
        batch: &Batch<'_>,
        mut dropout: Option<&mut Dropout>,
        freeze_encoder: bool,
    ) -> Result<TeacherForced> {
        check_batch(batch, self.dims.vocab, true)?;
        let b = batch.sentences.len();
        let (cells, n) = stack_grids(&batch.grids, self.dims.feature_in)?;
        let params = bind_params(g, self.parameters(), freeze_encoder);
        let p = TopDownVars::from_slice(&params, self.dims.hidden);
        let cells = g.constant(cells);
        let img = Self::encode_graph(g, &p, cells, b, n)?;
        let mut state = TopDownState::zeros(g, b, self.dims.hidden);
        let (embed, hidden) = (self.dims.embed, self.dims.hidden);
        let (logp_sum, num_targets) = teacher_forced_sum(g, &batch.sentences, |g, prev| {
            let masks = match dropout.as_deref_mut() {
                Some(d) => d.step_masks(prev.len(), embed, hidden),
                None => StepMasks::default(),
            };
            let (logp, next, _) = Self::step_graph(g, &p, &img, &state, prev, &masks)?;
            state = next;
            Ok(logp)
        })?;
        Ok(TeacherForced {
            logp_sum,
            num_targets,
            params,
        })
    }
}

/// `v_i = ReLU(W_proj·grid_i + b_proj)` for every cell (`[N, D_h]`) and
/// their mean `v̄` (`[D_h]`).
pub fn encode_features(grid: &FeatureGrid, proj: &EncoderProjection) -> Result<(Tensor, Tensor)> {
    if grid.depth() != proj.input() {
        return Err(Error::Dimension(format!(
            "grid depth {} does not match projection input {}",
            grid.depth(),
            proj.input()
        )));
    }
    let mut g = Graph::new();
    let w = g.constant_ref(&proj.w);
    let b = g.constant_ref(&proj.b);
    let cells = g.constant(grid.to_tensor());
    let (v, v_bar) = project_cells(&mut g, w, b, cells, 1, grid.num_cells())?;
    let d = proj.output();
    let v = g.value(v).clone().reshaped(vec![grid.num_cells(), d])?;
    let v_bar = g.value(v_bar).clone().reshaped(vec![d])?;
    Ok((v, v_bar))
}

/// Attention over `v: [N, D_h]` given the first-layer state `h1`; returns
/// `(v̂, α̂)`.
pub fn attention_step(v: &Tensor, h1: &[f64], params: &Attention) -> Result<(Vec<f64>, Vec<f64>)> {
    let [n, d] = v.shape()[..] else {
        return Err(Error::Dimension(format!("cells must be [N, D], got {:?}", v.shape())));
    };
    let mut g = Graph::new();
    let p = AttentionVars {
        w_v: g.constant_ref(&params.w_v),
        w_h: g.constant_ref(&params.w_h),
        u: g.constant_ref(&params.u),
    };
    let v = g.constant(v.clone().reshaped(vec![1, n, d])?);
    let h1 = g.constant(Tensor::new(vec![1, h1.len()], h1.to_vec())?);
    let keys = attention_keys(&mut g, p, v)?;
    let (v_hat, alpha) = attend(&mut g, p, v, keys, h1)?;
    Ok((g.value(v_hat).data().to_vec(), g.value(alpha).data().to_vec()))
}
