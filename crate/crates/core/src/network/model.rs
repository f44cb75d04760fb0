use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::compute::{Checkpoint, Graph, Mode, ParamId, ParamKind, ParamStore, Tensor, Var};
use crate::pipeline::{StageClass, Symbol, EOD_INDEX, N_OUTPUTS, N_STAGES, N_SYMBOLS, SOD_INDEX};

use super::{BranchConfig, ModelConfig, NetworkError};

const SIMPLEX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
struct ConvIds {
    kernel: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct LstmIds {
    w_x: ParamId,
    w_h: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Ids {
    small: Vec<ConvIds>,
    large: Vec<ConvIds>,
    enc_fw: LstmIds,
    enc_bw: LstmIds,
    enc_u: ParamId,
    enc_b_y: ParamId,
    init_w: ParamId,
    init_b: ParamId,
    att_w_h: ParamId,
    att_w_e: ParamId,
    att_v: ParamId,
    embedding: ParamId,
    dec: LstmIds,
    out_w: ParamId,
    out_b: ParamId,
}

/// LSTM weights on a graph: input map `[in, 4H]`, recurrent map `[H, 4H]`
/// and bias `[1, 4H]`, gate blocks ordered input, forget, candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_x: Var,
    pub w_h: Var,
    pub b: Var,
}

/// One standard LSTM step on `[1, in]` input and `[1, H]` state.
pub fn lstm_cell(g: &mut Graph<'_>, x: Var, h: Var, c: Var, w: LstmVars) -> Result<(Var, Var), NetworkError> {
    let xp = g.matmul(x, w.w_x)?;
    lstm_from_projection(g, xp, h, c, w)
}

fn lstm_from_projection(g: &mut Graph<'_>, xp: Var, h: Var, c: Var, w: LstmVars) -> Result<(Var, Var), NetworkError> {
    let hidden = g.shape(h)[1];
    let hp = g.matmul(h, w.w_h)?;
    let z = g.add(xp, hp)?;
    let z = g.add_row(z, w.b)?;
    let i = g.slice_cols(z, 0, hidden)?;
    let f = g.slice_cols(z, hidden, hidden)?;
    let cand = g.slice_cols(z, 2 * hidden, hidden)?;
    let o = g.slice_cols(z, 3 * hidden, hidden)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let cand = g.tanh(cand);
    let o = g.sigmoid(o);
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_new = g.add(keep, write)?;
    let squashed = g.tanh(c_new);
    let h_new = g.mul(o, squashed)?;
    Ok((h_new, c_new))
}

/// Encoder outputs `e_0 .. e_{n-1}` as rows of `outputs` (`[n, E]`), the
/// per-direction hidden streams (`[n, H]` each, in time order) and the state
/// used to initialize the decoder (`[1, 2H]`: last forward, first backward).
#[derive(Debug, Clone, Copy)]
pub struct EncoderStates {
    pub outputs: Var,
    pub forward_hidden: Var,
    pub backward_hidden: Var,
    pub final_state: Var,
    pub len: usize,
}

/// Attention weights and context at one decode step.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub alpha: Vec<f64>,
    pub context: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DecoderOutput {
    /// `[steps, N_OUTPUTS]` scores (stages then EOD).
    pub logits: Var,
    pub attention: Vec<AttentionRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceOutput {
    pub labels: Vec<StageClass>,
    /// Softmax output of every step, `N_OUTPUTS` wide.
    pub probabilities: Vec<Vec<f64>>,
    pub attention: Vec<AttentionRecord>,
    /// Steps where EOD had the highest probability; the runner-up stage was
    /// emitted instead.
    pub premature_eod: usize,
}

/// Highest-probability stage over the first five outputs, ties to the lowest
/// index.
pub fn argmax_stage(scores: &[f64]) -> StageClass {
    let mut best = 0;
    for i in 1..N_STAGES {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    StageClass::ALL[best]
}

/// Parameters and architecture of the network.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    ids: Ids,
}

struct Init {
    rng: ChaCha8Rng,
    store: ParamStore,
}

impl Init {
    fn uniform(&mut self, name: String, kind: ParamKind, shape: Vec<usize>, bound: f64) -> Result<ParamId, NetworkError> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        Ok(self.store.register(name, kind, Tensor::new(shape, data)?)?)
    }

    /// Glorot-uniform matrix.
    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId, NetworkError> {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        self.uniform(name.into(), ParamKind::Weight, vec![rows, cols], bound)
    }

    fn bias(&mut self, name: &str, shape: Vec<usize>) -> Result<ParamId, NetworkError> {
        Ok(self.store.register(name, ParamKind::Bias, Tensor::zeros(shape))?)
    }

    fn lstm(&mut self, prefix: &str, input: usize, hidden: usize, forget_bias: f64) -> Result<LstmIds, NetworkError> {
        let w_x = self.matrix(&format!("{prefix}.w_x"), input, 4 * hidden)?;
        let w_h = self.matrix(&format!("{prefix}.w_h"), hidden, 4 * hidden)?;
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].fill(forget_bias);
        let b = self.store.register(format!("{prefix}.b"), ParamKind::Bias, Tensor::new(vec![1, 4 * hidden], b)?)?;
        Ok(LstmIds { w_x, w_h, b })
    }

    fn branch(&mut self, prefix: &str, cfg: &BranchConfig) -> Result<Vec<ConvIds>, NetworkError> {
        let mut in_ch = 1;
        let mut out = Vec::with_capacity(cfg.layers.len());
        for (i, layer) in cfg.layers.iter().enumerate() {
            let fan_in = in_ch * layer.width;
            let bound = (6.0 / fan_in as f64).sqrt();
            let kernel = self.uniform(
                format!("{prefix}.conv{i}.kernel"),
                ParamKind::Weight,
                vec![layer.filters, in_ch, layer.width],
                bound,
            )?;
            let bias = self.bias(&format!("{prefix}.conv{i}.bias"), vec![layer.filters])?;
            out.push(ConvIds { kernel, bias });
            in_ch = layer.filters;
        }
        Ok(out)
    }
}

impl Model {
    /// Fresh parameters drawn from `seed`: He-uniform convolution kernels,
    /// Glorot-uniform matrices, zero biases except the LSTM forget gates.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, NetworkError> {
        config.validate()?;
        let d = config.feature_dim()?;
        let (h, e, hd, a) = (config.encoder_hidden, config.encoder_output, config.decoder_hidden, config.attention_dim);
        let mut init = Init { rng: ChaCha8Rng::seed_from_u64(seed), store: ParamStore::new() };
        let small = init.branch("cnn.small", &config.small_branch)?;
        let large = init.branch("cnn.large", &config.large_branch)?;
        let enc_fw = init.lstm("encoder.forward", d, h, config.forget_bias)?;
        let enc_bw = init.lstm("encoder.backward", d, h, config.forget_bias)?;
        let enc_u = init.matrix("encoder.u", 2 * h, e)?;
        let enc_b_y = init.bias("encoder.b_y", vec![1, e])?;
        let init_w = init.matrix("decoder.init.w", 2 * h, hd)?;
        let init_b = init.bias("decoder.init.b", vec![1, hd])?;
        let att_w_h = init.matrix("attention.w_h", hd, a)?;
        let att_w_e = init.matrix("attention.w_e", e, a)?;
        let att_v = init.matrix("attention.v", a, 1)?;
        let embedding = init.matrix("decoder.embedding", N_SYMBOLS, hd)?;
        let dec = init.lstm("decoder.lstm", hd + e, hd, config.forget_bias)?;
        let out_w = init.matrix("decoder.out.w", hd, N_OUTPUTS)?;
        let out_b = init.bias("decoder.out.b", vec![1, N_OUTPUTS])?;
        let ids = Ids {
            small,
            large,
            enc_fw,
            enc_bw,
            enc_u,
            enc_b_y,
            init_w,
            init_b,
            att_w_h,
            att_w_e,
            att_v,
            embedding,
            dec,
            out_w,
            out_b,
        };
        Ok(Self { config, params: init.store, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_params(&self.params)
    }

    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<(), NetworkError> {
        ckpt.load_into(&mut self.params)?;
        Ok(())
    }

    /// A graph bound to this model's parameters.
    pub fn graph(&self, mode: Mode) -> Graph<'_> {
        Graph::new(&self.params, mode)
    }

    fn lstm_vars(g: &mut Graph<'_>, ids: LstmIds) -> LstmVars {
        LstmVars { w_x: g.param(ids.w_x), w_h: g.param(ids.w_h), b: g.param(ids.b) }
    }

    fn branch(&self, g: &mut Graph<'_>, input: Var, cfg: &BranchConfig, ids: &[ConvIds]) -> Result<Var, NetworkError> {
        let mut x = input;
        for (i, (layer, p)) in cfg.layers.iter().zip(ids).enumerate() {
            let k = g.param(p.kernel);
            let b = g.param(p.bias);
            x = g.conv1d(x, k, layer.stride, layer.padding)?;
            x = g.add_channel_bias(x, b)?;
            x = g.relu(x);
            if i == 0 {
                x = g.maxpool1d(x, cfg.first_pool.window, cfg.first_pool.stride)?;
                x = g.dropout(x, cfg.dropout)?;
            }
        }
        if let Some(p) = cfg.final_pool {
            x = g.maxpool1d(x, p.window, p.stride)?;
        }
        x = g.dropout(x, cfg.dropout)?;
        let s = g.shape(x).to_vec();
        Ok(g.reshape(x, vec![s[0], s[1] * s[2]])?)
    }

    /// `[B, D]` features for a batch of epochs, dropout active only in
    /// training mode.
    pub fn cnn_features(&self, g: &mut Graph<'_>, epochs: &[&[f32]]) -> Result<Var, NetworkError> {
        if epochs.is_empty() {
            return Err(NetworkError::EmptySequence);
        }
        let len = self.config.epoch_samples;
        let mut data = Vec::with_capacity(epochs.len() * len);
        for (index, e) in epochs.iter().enumerate() {
            if e.len() != len {
                return Err(NetworkError::EpochLength { index, expected: len, found: e.len() });
            }
            data.extend(e.iter().map(|&v| f64::from(v)));
        }
        let x = g.constant(Tensor::new(vec![epochs.len(), 1, len], data)?);
        let s = self.branch(g, x, &self.config.small_branch, &self.ids.small)?;
        let l = self.branch(g, x, &self.config.large_branch, &self.ids.large)?;
        let f = g.concat(&[s, l], 1)?;
        Ok(g.dropout(f, self.config.feature_dropout)?)
    }

    /// Runs the forward LSTM over `t = 0..n` and the backward LSTM over
    /// `t = n-1..=0` on `[n, D]` features; `e_t = U [h_fw_t; h_bw_t] + b_y`.
    pub fn birnn_encode(&self, g: &mut Graph<'_>, features: Var) -> Result<EncoderStates, NetworkError> {
        let n = g.shape(features)[0];
        if n == 0 {
            return Err(NetworkError::EmptySequence);
        }
        let h = self.config.encoder_hidden;
        let run = |g: &mut Graph<'_>, ids: LstmIds, order: &mut dyn Iterator<Item = usize>| -> Result<Vec<Var>, NetworkError> {
            let w = Self::lstm_vars(g, ids);
            let proj = g.matmul(features, w.w_x)?;
            let mut hs = vec![None; n];
            let mut state = (g.constant(Tensor::zeros(vec![1, h])), g.constant(Tensor::zeros(vec![1, h])));
            for t in order {
                let xp = g.row(proj, t)?;
                state = lstm_from_projection(g, xp, state.0, state.1, w)?;
                hs[t] = Some(state.0);
            }
            Ok(hs.into_iter().map(|v| v.expect("every step visited")).collect())
        };
        let fw = run(g, self.ids.enc_fw, &mut (0..n))?;
        let bw = run(g, self.ids.enc_bw, &mut (0..n).rev())?;
        let forward_hidden = g.concat(&fw, 0)?;
        let backward_hidden = g.concat(&bw, 0)?;
        let both = g.concat(&[forward_hidden, backward_hidden], 1)?;
        let u = g.param(self.ids.enc_u);
        let b_y = g.param(self.ids.enc_b_y);
        let y = g.matmul(both, u)?;
        let outputs = g.add_row(y, b_y)?;
        let final_state = g.concat(&[fw[n - 1], bw[0]], 1)?;
        Ok(EncoderStates { outputs, forward_hidden, backward_hidden, final_state, len: n })
    }

    /// Encoder outputs projected by `W_e`, shared by every decode step.
    fn attention_keys(&self, g: &mut Graph<'_>, states: &EncoderStates) -> Result<Var, NetworkError> {
        let w_e = g.param(self.ids.att_w_e);
        Ok(g.matmul(states.outputs, w_e)?)
    }

    /// Additive attention: `score_i = v . tanh(W_h h + W_e e_i)`,
    /// `alpha = softmax(score)`, `c = sum_i alpha_i e_i`. Returns `alpha` as
    /// `[n, 1]` and `c` as `[1, E]`.
    pub fn attend(&self, g: &mut Graph<'_>, h_prev: Var, states: &EncoderStates) -> Result<(Var, Var), NetworkError> {
        let keys = self.attention_keys(g, states)?;
        self.attend_keys(g, h_prev, states, keys)
    }

    fn attend_keys(&self, g: &mut Graph<'_>, h_prev: Var, states: &EncoderStates, keys: Var) -> Result<(Var, Var), NetworkError> {
        let w_h = g.param(self.ids.att_w_h);
        let v = g.param(self.ids.att_v);
        let q = g.matmul(h_prev, w_h)?;
        let pre = g.add_row(keys, q)?;
        let act = g.tanh(pre);
        let scores = g.matmul(act, v)?;
        let alpha = g.softmax(scores, 0)?;
        let alpha_t = g.transpose(alpha)?;
        let context = g.matmul(alpha_t, states.outputs)?;
        Ok((alpha, context))
    }

    fn record(g: &Graph<'_>, step: usize, alpha: Var, context: Var) -> Result<AttentionRecord, NetworkError> {
        let a = g.value(alpha).to_vec();
        let sum: f64 = a.iter().sum();
        let min = a.iter().copied().fold(f64::INFINITY, f64::min);
        if !((sum - 1.0).abs() <= SIMPLEX_TOLERANCE && min >= 0.0) {
            return Err(NetworkError::Attention { step, sum, min });
        }
        Ok(AttentionRecord { alpha: a, context: g.value(context).to_vec() })
    }

    fn decoder_start(&self, g: &mut Graph<'_>, states: &EncoderStates) -> Result<(Var, Var), NetworkError> {
        let w = g.param(self.ids.init_w);
        let b = g.param(self.ids.init_b);
        let h = g.matmul(states.final_state, w)?;
        let h = g.add_row(h, b)?;
        let c = g.constant(Tensor::zeros(vec![1, self.config.decoder_hidden]));
        Ok((h, c))
    }

    /// One decode step: attend with the previous hidden state, feed
    /// `[embedding(symbol); context]` to the decoder LSTM, project to scores.
    #[allow(clippy::too_many_arguments)]
    fn decode_step(
        &self,
        g: &mut Graph<'_>,
        step: usize,
        symbol: usize,
        state: (Var, Var),
        states: &EncoderStates,
        keys: Var,
        dec: LstmVars,
    ) -> Result<((Var, Var), Var, AttentionRecord), NetworkError> {
        let (alpha, context) = self.attend_keys(g, state.0, states, keys)?;
        let record = Self::record(g, step, alpha, context)?;
        let table = g.param(self.ids.embedding);
        let emb = g.row(table, symbol)?;
        let input = g.concat(&[emb, context], 1)?;
        let next = lstm_cell(g, input, state.0, state.1, dec)?;
        let out_w = g.param(self.ids.out_w);
        let out_b = g.param(self.ids.out_b);
        let logits = g.matmul(next.0, out_w)?;
        let logits = g.add_row(logits, out_b)?;
        Ok((next, logits, record))
    }

    /// Decodes with the given input symbols, one step per symbol. Training
    /// feeds `[SOD, l_1, .., l_T]` so that the scores line up with the targets
    /// `[l_1, .., l_T, EOD]`.
    pub fn decode_teacher_forced(&self, g: &mut Graph<'_>, states: &EncoderStates, inputs: &[Symbol]) -> Result<DecoderOutput, NetworkError> {
        match inputs.first() {
            Some(Symbol::Sod) => {}
            Some(s) => return Err(NetworkError::DecoderInput(format!("must start with SOD, found {s:?}"))),
            None => return Err(NetworkError::EmptySequence),
        }
        if let Some(p) = inputs[1..].iter().position(|s| *s == Symbol::Sod) {
            return Err(NetworkError::DecoderInput(format!("SOD repeated at position {}", p + 1)));
        }
        let keys = self.attention_keys(g, states)?;
        let dec = Self::lstm_vars(g, self.ids.dec);
        let mut state = self.decoder_start(g, states)?;
        let mut rows = Vec::with_capacity(inputs.len());
        let mut attention = Vec::with_capacity(inputs.len());
        for (step, s) in inputs.iter().enumerate() {
            let (next, logits, rec) = self.decode_step(g, step, s.index(), state, states, keys, dec)?;
            state = next;
            rows.push(logits);
            attention.push(rec);
        }
        let logits = g.concat(&rows, 0)?;
        Ok(DecoderOutput { logits, attention })
    }

    /// Greedy decoding of exactly `states.len` stages, each step fed the stage
    /// emitted by the previous one.
    pub fn decode_inference(&self, g: &mut Graph<'_>, states: &EncoderStates) -> Result<InferenceOutput, NetworkError> {
        let keys = self.attention_keys(g, states)?;
        let dec = Self::lstm_vars(g, self.ids.dec);
        let mut state = self.decoder_start(g, states)?;
        let mut symbol = SOD_INDEX;
        let mut out = InferenceOutput { labels: Vec::new(), probabilities: Vec::new(), attention: Vec::new(), premature_eod: 0 };
        for step in 0..states.len {
            let (next, logits, rec) = self.decode_step(g, step, symbol, state, states, keys, dec)?;
            state = next;
            let probs = g.softmax(logits, 1)?;
            let p = g.value(probs).to_vec();
            let stage = argmax_stage(&p);
            if p[EOD_INDEX] > p[stage.index()] {
                out.premature_eod += 1;
            }
            symbol = stage.index();
            out.labels.push(stage);
            out.probabilities.push(p);
            out.attention.push(rec);
        }
        if out.premature_eod > 0 {
            log::debug!("EOD ranked first at {} decode step(s); emitted the runner-up stage", out.premature_eod);
        }
        Ok(out)
    }

    /// CNN, encoder and teacher-forced decoder in one go.
    pub fn forward_teacher(&self, g: &mut Graph<'_>, epochs: &[&[f32]], inputs: &[Symbol]) -> Result<DecoderOutput, NetworkError> {
        let f = self.cnn_features(g, epochs)?;
        let states = self.birnn_encode(g, f)?;
        self.decode_teacher_forced(g, &states, inputs)
    }

    /// Inference-mode prediction for one sequence of epochs.
    pub fn predict(&self, epochs: &[&[f32]]) -> Result<InferenceOutput, NetworkError> {
        let mut g = self.graph(Mode::Inference);
        let f = self.cnn_features(&mut g, epochs)?;
        let states = self.birnn_encode(&mut g, f)?;
        self.decode_inference(&mut g, &states)
    }
}
