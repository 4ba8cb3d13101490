use rand::Rng;

use super::layers::{lstm_cell, project_cells, EncoderProjection, Lstm, LstmVars, INIT_SCALE};
use super::{
    bind_constants, bind_params, check_batch, check_step_inputs, rows_of, stack_grids, stack_state,
    teacher_forced_sum, unstack_states, Batch, Context, Dims, Dropout, ModelKind, RecurrentState, SequenceModel,
    StepMasks, TeacherForced, Trainable,
};
use crate::autodiff::{Graph, Tensor, TensorError, Var};
use crate::corpus::FeatureGrid;
use crate::{Error, Result};

/// Single-LSTM captioner without attention. The mean image feature is
/// projected into the word-embedding space and fed as the input of step 0;
/// that step's prediction is discarded.
#[derive(Clone, Debug, PartialEq)]
pub struct FcBaseline {
    dims: Dims,
    pub proj: EncoderProjection,
    /// `[D_h, E]`
    pub img_w: Tensor,
    /// `[E]`
    pub img_b: Tensor,
    /// `[V, E]`
    pub embed: Tensor,
    pub lstm: Lstm,
    /// `[H, V]`
    pub w_p: Tensor,
    pub b_p: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct FcVars {
    pub proj_w: Var,
    pub proj_b: Var,
    pub img_w: Var,
    pub img_b: Var,
    pub embed: Var,
    pub lstm: LstmVars,
    pub w_p: Var,
    pub b_p: Var,
}

impl FcVars {
    pub fn from_slice(v: &[Var], hidden: usize) -> Self {
        assert_eq!(v.len(), 9, "FC baseline has 9 parameter tensors");
        Self {
            proj_w: v[0],
            proj_b: v[1],
            img_w: v[2],
            img_b: v[3],
            embed: v[4],
            lstm: LstmVars { w: v[5], b: v[6], hidden },
            w_p: v[7],
            b_p: v[8],
        }
    }
}

impl FcBaseline {
    pub fn new<R: Rng + ?Sized>(dims: Dims, rng: &mut R) -> Self {
        Self {
            dims,
            proj: EncoderProjection::new(dims.feature_in, dims.feature, rng),
            img_w: Tensor::uniform(&[dims.feature, dims.embed], INIT_SCALE, rng),
            img_b: Tensor::zeros(&[dims.embed]),
            embed: Tensor::uniform(&[dims.vocab, dims.embed], INIT_SCALE, rng),
            lstm: Lstm::new(dims.embed, dims.hidden, rng),
            w_p: Tensor::uniform(&[dims.hidden, dims.vocab], INIT_SCALE, rng),
            b_p: Tensor::zeros(&[dims.vocab]),
        }
    }

    /// Step 0: consumes the projected image embedding from zero state.
    /// `cells: [B·N, D_in]`; returns `(h, c)`.
    pub fn image_step_graph(
        g: &mut Graph,
        p: &FcVars,
        cells: Var,
        batch: usize,
        n: usize,
    ) -> Result<(Var, Var), TensorError> {
        let (_, v_bar) = project_cells(g, p.proj_w, p.proj_b, cells, batch, n)?;
        let x = g.matmul(v_bar, p.img_w)?;
        let x = g.add_bias(x, p.img_b)?;
        let hidden = p.lstm.hidden;
        let h = g.constant(Tensor::zeros(&[batch, hidden]));
        let c = g.constant(Tensor::zeros(&[batch, hidden]));
        lstm_cell(g, p.lstm, x, h, c)
    }

    /// Word step; returns `(log-probabilities [B, V], h, c)`.
    pub fn step_graph(
        g: &mut Graph,
        p: &FcVars,
        h: Var,
        c: Var,
        prev: &[usize],
        masks: &StepMasks,
    ) -> Result<(Var, Var, Var), TensorError> {
        let mut x = g.embedding(p.embed, prev)?;
        if let Some(m) = &masks.embed {
            x = g.dropout(x, m.clone())?;
        }
        let (h, c) = lstm_cell(g, p.lstm, x, h, c)?;
        let mut top = h;
        if let Some(m) = &masks.output {
            top = g.dropout(top, m.clone())?;
        }
        let logits = g.matmul(top, p.w_p)?;
        let logits = g.add_bias(logits, p.b_p)?;
        Ok((g.log_softmax(logits)?, h, c))
    }
}

impl SequenceModel for FcBaseline {
    fn vocab_size(&self) -> usize {
        self.dims.vocab
    }

    fn start(&self, grid: Option<&FeatureGrid>) -> Result<(Context, RecurrentState)> {
        let grid = grid.ok_or_else(|| Error::Dimension("the FC baseline needs an image".into()))?;
        let (cells, n) = stack_grids(&[grid], self.dims.feature_in)?;
        let mut g = Graph::new();
        let vars = bind_constants(&mut g, self.parameters());
        let p = FcVars::from_slice(&vars, self.dims.hidden);
        let cells = g.constant(cells);
        let (h, c) = Self::image_step_graph(&mut g, &p, cells, 1, n)?;
        let state = RecurrentState(vec![g.value(h).data().to_vec(), g.value(c).data().to_vec()]);
        Ok((Context::default(), state))
    }

    fn step(
        &self,
        _ctx: &Context,
        states: &[&RecurrentState],
        prev: &[usize],
    ) -> Result<(Vec<Vec<f64>>, Vec<RecurrentState>)> {
        check_step_inputs(states, prev, self.dims.vocab, 2)?;
        let mut g = Graph::new();
        let vars = bind_constants(&mut g, self.parameters());
        let p = FcVars::from_slice(&vars, self.dims.hidden);
        let h = g.constant(stack_state(states, 0));
        let c = g.constant(stack_state(states, 1));
        let (logp, h, c) = Self::step_graph(&mut g, &p, h, c, prev, &StepMasks::default())?;
        Ok((rows_of(g.value(logp)), unstack_states(&[g.value(h), g.value(c)])))
    }
}

impl Trainable for FcBaseline {
    fn kind(&self) -> ModelKind {
        ModelKind::Fc
    }

    fn dims(&self) -> Dims {
        self.dims
    }

    fn parameters(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("proj.w", &self.proj.w),
            ("proj.b", &self.proj.b),
            ("img.w", &self.img_w),
            ("img.b", &self.img_b),
            ("embed", &self.embed),
            ("lstm.w", &self.lstm.w),
            ("lstm.b", &self.lstm.b),
            ("out.w", &self.w_p),
            ("out.b", &self.b_p),
        ]
    }

    fn parameters_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("proj.w", &mut self.proj.w),
            ("proj.b", &mut self.proj.b),
            ("img.w", &mut self.img_w),
            ("img.b", &mut self.img_b),
            ("embed", &mut self.embed),
            ("lstm.w", &mut self.lstm.w),
            ("lstm.b", &mut self.lstm.b),
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
        let p = FcVars::from_slice(&params, self.dims.hidden);
        let cells = g.constant(cells);
        let (mut h, mut c) = Self::image_step_graph(g, &p, cells, b, n)?;
        let (embed, hidden) = (self.dims.embed, self.dims.hidden);
        let (logp_sum, num_targets) = teacher_forced_sum(g, &batch.sentences, |g, prev| {
            let masks = match dropout.as_deref_mut() {
                Some(d) => d.step_masks(prev.len(), embed, hidden),
                None => StepMasks::default(),
            };
            let (logp, h2, c2) = Self::step_graph(g, &p, h, c, prev, &masks)?;
            (h, c) = (h2, c2);
            Ok(logp)
        })?;
        Ok(TeacherForced {
            logp_sum,
            num_targets,
            params,
        })
    }
}
