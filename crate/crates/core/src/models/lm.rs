use rand::Rng;

use super::layers::{lstm_cell, Lstm, LstmVars, INIT_SCALE};
use super::{
    bind_constants, bind_params, check_batch, check_step_inputs, rows_of, stack_state, teacher_forced_sum,
    unstack_states, Batch, Context, Dims, Dropout, ModelKind, RecurrentState, SequenceModel, StepMasks,
    TeacherForced, Trainable,
};
use crate::autodiff::{Graph, Tensor, TensorError, Var};
use crate::corpus::FeatureGrid;
use crate::Result;

/// One-layer LSTM language model over the captioner's vocabulary; supplies
/// the sentence prior `p(s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LanguageModel {
    dims: Dims,
    pub embed: Tensor,
    pub lstm: Lstm,
    pub w_p: Tensor,
    pub b_p: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct LmVars {
    pub embed: Var,
    pub lstm: LstmVars,
    pub w_p: Var,
    pub b_p: Var,
}

impl LmVars {
    pub fn from_slice(v: &[Var], hidden: usize) -> Self {
        assert_eq!(v.len(), 5, "language model has 5 parameter tensors");
        Self {
            embed: v[0],
            lstm: LstmVars { w: v[1], b: v[2], hidden },
            w_p: v[3],
            b_p: v[4],
        }
    }
}

impl LanguageModel {
    pub fn new<R: Rng + ?Sized>(dims: Dims, rng: &mut R) -> Self {
        Self {
            dims,
            embed: Tensor::uniform(&[dims.vocab, dims.embed], INIT_SCALE, rng),
            lstm: Lstm::new(dims.embed, dims.hidden, rng),
            w_p: Tensor::uniform(&[dims.hidden, dims.vocab], INIT_SCALE, rng),
            b_p: Tensor::zeros(&[dims.vocab]),
        }
    }

    /// One step for a batch; returns `(log p(· | w_<t): [B, V], h, c)`.
    pub fn step_graph(
        g: &mut Graph,
        p: &LmVars,
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

    /// Next-word log-probabilities after feeding `prev` to `state`.
    pub fn lm_step(&self, state: &RecurrentState, prev: usize) -> Result<(Vec<f64>, RecurrentState)> {
        let (mut logp, mut next) = self.step(&Context::default(), &[state], &[prev])?;
        Ok((logp.remove(0), next.remove(0)))
    }
}

impl SequenceModel for LanguageModel {
    fn vocab_size(&self) -> usize {
        self.dims.vocab
    }

    fn start(&self, _grid: Option<&FeatureGrid>) -> Result<(Context, RecurrentState)> {
        let h = self.dims.hidden;
        Ok((Context::default(), RecurrentState(vec![vec![0.0; h], vec![0.0; h]])))
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
        let p = LmVars::from_slice(&vars, self.dims.hidden);
        let h = g.constant(stack_state(states, 0));
        let c = g.constant(stack_state(states, 1));
        let (logp, h, c) = Self::step_graph(&mut g, &p, h, c, prev, &StepMasks::default())?;
        Ok((rows_of(g.value(logp)), unstack_states(&[g.value(h), g.value(c)])))
    }
}

impl Trainable for LanguageModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Lm
    }

    fn dims(&self) -> Dims {
        self.dims
    }

    fn parameters(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("embed", &self.embed),
            ("lstm.w", &self.lstm.w),
            ("lstm.b", &self.lstm.b),
            ("out.w", &self.w_p),
            ("out.b", &self.b_p),
        ]
    }

    fn parameters_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
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
        _freeze_encoder: bool,
    ) -> Result<TeacherForced> {
        check_batch(batch, self.dims.vocab, false)?;
        let b = batch.sentences.len();
        let params = bind_params(g, self.parameters(), false);
        let p = LmVars::from_slice(&params, self.dims.hidden);
        let mut h = g.constant(Tensor::zeros(&[b, self.dims.hidden]));
        let mut c = g.constant(Tensor::zeros(&[b, self.dims.hidden]));
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
