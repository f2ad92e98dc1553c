//! Live networks: instantiating an [`ArchConfig`] as named parameter tensors
//! and running forward/backward through the autodiff graph.
//!
//! The parameter walk follows the canonical layer plan in the same order the
//! analyzer counts it — stem, then every block (conv1, norm1, act1, conv2,
//! norm2, act2, SE, conv3, norm3, projection, act3), then the head — so the
//! total learnable element count always equals [`count_params`] exactly.
//!
//! Initialization is deterministic in the master seed (init stream): conv and
//! fully-connected weights draw zero-mean normals at fan-out scale
//! `sqrt(2 / (k²·c_out/g))`, norm scales start at 1 with shift 0, all biases
//! start at 0, and parametric-activation scalars start at 1 (the shifted-SiLU
//! shift at 0). Only weight tensors consume random draws, so the stream
//! layout is stable across configs that share a prefix of the walk.

use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;

use crate::analyze::count_params;
use crate::config::{ActKind, ArchConfig, DenseMode, NormKind, Pooling};
use crate::error::{Error, Result};
use crate::plan::{
    build_plan, ActDesc, BlockPlan, ConvDesc, LinearDesc, NetPlan, NormDesc, StagePlan,
};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{ConvSpec, Graph, Scalar, Tensor, Value};

/// Batch-norm epsilon used in every normalization.
pub const BN_EPS: f64 = 1e-5;
/// Momentum for batch-norm running statistics: new = 0.9·old + 0.1·batch.
pub const BN_MOMENTUM: f64 = 0.1;

/// Forward-pass mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics normalize; running statistics update.
    Train,
    /// Running statistics normalize; no state changes.
    Eval,
}

/// One named parameter tensor.
#[derive(Debug, Clone)]
pub struct Param<T: Scalar> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Running statistics of one batch-norm layer (state, not parameters).
#[derive(Debug, Clone)]
pub struct RunningStats<T: Scalar> {
    /// The norm layer's name (e.g. `s1.b1.norm1`).
    pub name: String,
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

/// Everything a backward pass produces for one batch.
#[derive(Debug, Clone)]
pub struct BatchGrads<T: Scalar> {
    /// Mean cross-entropy over the batch.
    pub loss: T,
    /// Per-sample cross-entropy losses.
    pub per_sample: Vec<T>,
    /// Gradients aligned index-for-index with the network's parameters.
    pub param_grads: Vec<Tensor<T>>,
    /// Gradient of the mean loss with respect to the input batch.
    pub input_grad: Tensor<T>,
    /// Logits from the forward pass, shape `[B, num_classes]`.
    pub logits: Tensor<T>,
}

/// A realized network: parameters, running statistics, and the layer plan
/// expanded from its config.
#[derive(Debug, Clone)]
pub struct Network<T: Scalar = f32> {
    pub config: ArchConfig,
    plan: NetPlan,
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
    running: Vec<RunningStats<T>>,
    run_index: HashMap<String, usize>,
    mode: Mode,
}

/// Accumulates the canonical parameter walk during instantiation.
struct ParamBuilder<T: Scalar> {
    rng: ChaCha8Rng,
    params: Vec<Param<T>>,
    running: Vec<RunningStats<T>>,
}

impl<T: Scalar> ParamBuilder<T> {
    fn push(&mut self, name: String, tensor: Tensor<T>) {
        self.params.push(Param { name, tensor });
    }

    fn conv(&mut self, d: &ConvDesc) {
        let (k, co, g) = (d.kernel as usize, d.out_ch as usize, d.groups as usize);
        let cin_g = (d.in_ch / d.groups) as usize;
        let std = (2.0 / (k * k * co / g) as f64).sqrt();
        let w = Tensor::rand_normal(vec![co, cin_g, k, k], std, &mut self.rng);
        self.push(format!("{}.weight", d.name), w);
    }

    fn norm(&mut self, d: &NormDesc) {
        match d.kind {
            NormKind::BatchNorm => {
                let c = d.channels as usize;
                self.push(format!("{}.weight", d.name), Tensor::full(vec![c], T::ONE));
                self.push(format!("{}.bias", d.name), Tensor::zeros(vec![c]));
                self.running.push(RunningStats {
                    name: d.name.clone(),
                    mean: Tensor::zeros(vec![c]),
                    var: Tensor::full(vec![c], T::ONE),
                });
            }
            NormKind::InstanceNorm => {}
        }
    }

    fn act(&mut self, d: &ActDesc) {
        match d.kind.param_count() {
            0 => {}
            1 => self.push(
                format!("{}.weight", d.name),
                Tensor::new(vec![1], vec![T::ONE]),
            ),
            2 => self.push(
                format!("{}.weight", d.name),
                Tensor::new(vec![2], vec![T::ONE, T::ZERO]),
            ),
            n => unreachable!("activation with {n} scalars"),
        }
    }

    fn linear(&mut self, d: &LinearDesc) {
        let (fi, fo) = (d.in_features as usize, d.out_features as usize);
        let std = (2.0 / fo as f64).sqrt();
        let w = Tensor::rand_normal(vec![fo, fi], std, &mut self.rng);
        self.push(format!("{}.weight", d.name), w);
        if d.bias {
            self.push(format!("{}.bias", d.name), Tensor::zeros(vec![fo]));
        }
    }

    fn block(&mut self, b: &BlockPlan) {
        self.conv(&b.conv1);
        if let Some(n) = &b.norm1 {
            self.norm(n);
        }
        if let Some(a) = &b.act1 {
            self.act(a);
        }
        self.conv(&b.conv2);
        if let Some(n) = &b.norm2 {
            self.norm(n);
        }
        if let Some(a) = &b.act2 {
            self.act(a);
        }
        if let Some(se) = &b.se {
            self.linear(&se.fc1);
            self.act(&se.act);
            self.linear(&se.fc2);
        }
        self.conv(&b.conv3);
        if let Some(n) = &b.norm3 {
            self.norm(n);
        }
        if let Some((conv, norm)) = &b.proj {
            self.conv(conv);
            self.norm(norm);
        }
        if let Some(a) = &b.act3 {
            self.act(a);
        }
    }
}

fn conv_spec(d: &ConvDesc) -> ConvSpec {
    ConvSpec {
        stride: d.stride as usize,
        padding: d.padding as usize,
        dilation: d.dilation as usize,
        groups: d.groups as usize,
    }
}

impl<T: Scalar> Network<T> {
    /// Realizes a validated config with deterministic seeded weights.
    pub fn instantiate(cfg: &ArchConfig, seed: u64) -> Self {
        let plan = build_plan(cfg);
        let mut b = ParamBuilder {
            rng: stream_rng(seed, Stream::Init),
            params: Vec::new(),
            running: Vec::new(),
        };
        b.conv(&plan.stem_conv);
        b.norm(&plan.stem_norm);
        b.act(&plan.stem_act);
        for stage in &plan.stages {
            for block in &stage.blocks {
                b.block(block);
            }
        }
        b.linear(&plan.head_fc);

        let index = b
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        let run_index = b
            .running
            .iter()
            .enumerate()
            .map(|(i, r)| (r.name.clone(), i))
            .collect();
        let net = Network {
            config: cfg.clone(),
            plan,
            params: b.params,
            index,
            running: b.running,
            run_index,
            mode: Mode::Eval,
        };
        debug_assert_eq!(
            net.total_param_elements(),
            count_params(cfg).total,
            "parameter walk disagrees with the analyzer"
        );
        net
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Parameters in canonical order.
    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    /// Mutable parameters (optimizer updates, checkpoint restore). Names and
    /// shapes must not change.
    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    /// Batch-norm running statistics in canonical order.
    pub fn running_stats(&self) -> &[RunningStats<T>] {
        &self.running
    }

    pub fn running_stats_mut(&mut self) -> &mut [RunningStats<T>] {
        &mut self.running
    }

    /// Looks up a parameter tensor by name.
    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.params[i].tensor)
    }

    /// Total learnable elements; equals the analyzer's count by construction.
    pub fn total_param_elements(&self) -> u64 {
        self.params.iter().map(|p| p.tensor.numel() as u64).sum()
    }

    fn check_input(&self, batch: &Tensor<T>) -> Result<()> {
        let shape = batch.shape();
        if shape.len() != 4 {
            return Err(Error::Shape(format!(
                "input must be [B, C, H, W], got {shape:?}"
            )));
        }
        let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        if b == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if c != self.config.input_channels as usize {
            return Err(Error::Shape(format!(
                "input has {c} channels, config expects {}",
                self.config.input_channels
            )));
        }
        let f = self.config.downsampling_factor() as usize;
        if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} not divisible by downsampling factor {f}"
            )));
        }
        Ok(())
    }

    fn param_value(&self, pv: &[Value], name: &str) -> Value {
        pv[*self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))]
    }

    fn apply_act(&self, g: &mut Graph<T>, pv: &[Value], d: &ActDesc, x: Value) -> Value {
        match d.kind {
            ActKind::Relu => g.relu(x),
            ActKind::Gelu => g.gelu(x),
            ActKind::Silu => g.silu(x),
            ActKind::Prelu => {
                let a = self.param_value(pv, &format!("{}.weight", d.name));
                g.prelu(x, a)
            }
            ActKind::Psilu => {
                let a = self.param_value(pv, &format!("{}.weight", d.name));
                g.psilu(x, a)
            }
            ActKind::Pssilu => {
                let ab = self.param_value(pv, &format!("{}.weight", d.name));
                g.pssilu(x, ab)
            }
        }
    }

    fn apply_norm(&mut self, g: &mut Graph<T>, pv: &[Value], d: &NormDesc, x: Value) -> Value {
        match d.kind {
            NormKind::InstanceNorm => g.instance_norm(x, BN_EPS),
            NormKind::BatchNorm => {
                let w = self.param_value(pv, &format!("{}.weight", d.name));
                let b = self.param_value(pv, &format!("{}.bias", d.name));
                match self.mode {
                    Mode::Train => {
                        let (y, stats) = g.batch_norm_train(x, w, b, BN_EPS);
                        let m = T::from_f64(BN_MOMENTUM);
                        let keep = T::from_f64(1.0 - BN_MOMENTUM);
                        let r = &mut self.running[self.run_index[&d.name]];
                        r.mean = r.mean.zip(&stats.mean, |o, n| o * keep + n * m);
                        r.var = r.var.zip(&stats.var, |o, n| o * keep + n * m);
                        y
                    }
                    Mode::Eval => {
                        let r = &self.running[self.run_index[&d.name]];
                        let (mean, var) = (r.mean.clone(), r.var.clone());
                        g.batch_norm_eval(x, w, b, &mean, &var, BN_EPS)
                    }
                }
            }
        }
    }

    fn emit_se(
        &self,
        g: &mut Graph<T>,
        pv: &[Value],
        se: &crate::plan::SePlan,
        x: Value,
    ) -> Value {
        let pooled = g.global_avg_pool(x);
        let w1 = self.param_value(pv, &format!("{}.weight", se.fc1.name));
        let b1 = self.param_value(pv, &format!("{}.bias", se.fc1.name));
        let h = g.linear(pooled, w1, Some(b1));
        let h = self.apply_act(g, pv, &se.act, h);
        let w2 = self.param_value(pv, &format!("{}.weight", se.fc2.name));
        let b2 = self.param_value(pv, &format!("{}.bias", se.fc2.name));
        let h = g.linear(h, w2, Some(b2));
        let gate = g.sigmoid(h);
        g.scale_channels(x, gate)
    }

    fn emit_block(&mut self, g: &mut Graph<T>, pv: &[Value], b: &BlockPlan, input: Value) -> Value {
        let w1 = self.param_value(pv, &format!("{}.weight", b.conv1.name));
        let mut h = g.conv2d(input, w1, &conv_spec(&b.conv1));
        if let Some(n) = &b.norm1 {
            h = self.apply_norm(g, pv, n, h);
        }
        if let Some(a) = &b.act1 {
            h = self.apply_act(g, pv, a, h);
        }
        let w2 = self.param_value(pv, &format!("{}.weight", b.conv2.name));
        h = g.conv2d(h, w2, &conv_spec(&b.conv2));
        if let Some(n) = &b.norm2 {
            h = self.apply_norm(g, pv, n, h);
        }
        if let Some(a) = &b.act2 {
            h = self.apply_act(g, pv, a, h);
        }
        if let Some(se) = &b.se {
            h = self.emit_se(g, pv, se, h);
        }
        let w3 = self.param_value(pv, &format!("{}.weight", b.conv3.name));
        h = g.conv2d(h, w3, &conv_spec(&b.conv3));
        if let Some(n) = &b.norm3 {
            h = self.apply_norm(g, pv, n, h);
        }
        let shortcut = match &b.proj {
            Some((conv, norm)) => {
                let wp = self.param_value(pv, &format!("{}.weight", conv.name));
                let s = g.conv2d(input, wp, &conv_spec(conv));
                self.apply_norm(g, pv, norm, s)
            }
            None => input,
        };
        let mut y = g.add(h, shortcut);
        if let Some(a) = &b.act3 {
            y = self.apply_act(g, pv, a, y);
        }
        y
    }

    fn emit_stage(
        &mut self,
        g: &mut Graph<T>,
        pv: &[Value],
        stage: &StagePlan,
        input: Value,
    ) -> Value {
        let mut outs: Vec<Value> = Vec::with_capacity(stage.blocks.len());
        for (bi, b) in stage.blocks.iter().enumerate() {
            let block_in = if bi == 0 {
                input
            } else {
                // Combine the last dense_in block outputs, oldest first.
                let window = outs[bi - b.dense_in as usize..bi].to_vec();
                match b.dense_mode {
                    DenseMode::Sum => window
                        .into_iter()
                        .reduce(|acc, v| g.add(acc, v))
                        .expect("nonempty dense window"),
                    DenseMode::Concat => window
                        .into_iter()
                        .reduce(|acc, v| g.concat_channels(acc, v))
                        .expect("nonempty dense window"),
                }
            };
            let out = self.emit_block(g, pv, b, block_in);
            outs.push(out);
        }
        *outs.last().expect("stages have at least one block")
    }

    /// Builds the whole forward graph; returns the logits node.
    fn emit_forward(&mut self, g: &mut Graph<T>, pv: &[Value], x: Value) -> Value {
        let plan = self.plan.clone();
        let ws = self.param_value(pv, &format!("{}.weight", plan.stem_conv.name));
        let mut h = g.conv2d(x, ws, &conv_spec(&plan.stem_conv));
        h = self.apply_norm(g, pv, &plan.stem_norm, h);
        h = self.apply_act(g, pv, &plan.stem_act, h);
        if plan.stem_pool {
            h = g.maxpool2d(h, 3, 2, 1);
        }
        for stage in &plan.stages {
            h = self.emit_stage(g, pv, stage, h);
        }
        let Pooling::GlobalAverage = self.config.head.pooling;
        let pooled = g.global_avg_pool(h);
        let wh = self.param_value(pv, &format!("{}.weight", plan.head_fc.name));
        let bh = plan
            .head_fc
            .bias
            .then(|| self.param_value(pv, &format!("{}.bias", plan.head_fc.name)));
        g.linear(pooled, wh, bh)
    }

    fn build_graph(&mut self, batch: &Tensor<T>) -> Result<(Graph<T>, Value, Vec<Value>, Value)> {
        self.check_input(batch)?;
        let mut g = Graph::new();
        let xv = g.leaf(batch.clone());
        let pv: Vec<Value> = self
            .params
            .iter()
            .map(|p| g.leaf(p.tensor.clone()))
            .collect();
        let logits = self.emit_forward(&mut g, &pv, xv);
        Ok((g, xv, pv, logits))
    }

    /// Runs the network on a batch, returning logits `[B, num_classes]`.
    ///
    /// In train mode this updates batch-norm running statistics; in eval mode
    /// it is a pure function of (parameters, batch, running statistics).
    pub fn forward(&mut self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let (g, _, _, logits) = self.build_graph(batch)?;
        Ok(g.value(logits).clone())
    }

    /// Forward + cross-entropy + full backward pass.
    ///
    /// Respects the current mode: training steps run in train mode (batch
    /// statistics, running-stat updates), attack crafting runs in eval mode.
    pub fn loss_and_grads(&mut self, batch: &Tensor<T>, labels: &[usize]) -> Result<BatchGrads<T>> {
        if labels.len() != batch.shape()[0] {
            return Err(Error::Shape(format!(
                "batch of {} samples with {} labels",
                batch.shape()[0],
                labels.len()
            )));
        }
        let k = self.config.num_classes as usize;
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Invalid(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let (mut g, xv, pv, logits) = self.build_graph(batch)?;
        let logits_t = g.value(logits).clone();
        let (loss_v, per_sample) = g.softmax_cross_entropy(logits, labels);
        let loss = g.value(loss_v).item();
        let grads = g.backward(loss_v);
        let param_grads = pv
            .iter()
            .zip(&self.params)
            .map(|(v, p)| grads.wrt_or_zeros(*v, p.tensor.shape()))
            .collect();
        let input_grad = grads.wrt_or_zeros(xv, batch.shape());
        Ok(BatchGrads {
            loss,
            per_sample,
            param_grads,
            input_grad,
            logits: logits_t,
        })
    }

    /// Class predictions under eval-mode normalization (pure; the current
    /// mode is preserved). Ties take the lowest class index.
    pub fn predict(&mut self, batch: &Tensor<T>) -> Result<Vec<usize>> {
        let saved = self.mode;
        self.mode = Mode::Eval;
        let logits = self.forward(batch);
        self.mode = saved;
        Ok(argmax_rows(&logits?))
    }
}

/// Row-wise argmax of `[B, K]` logits; ties take the lowest index.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let shape = logits.shape();
    assert_eq!(shape.len(), 2, "logits must be [B, K]");
    let (b, k) = (shape[0], shape[1]);
    (0..b)
        .map(|i| {
            let row = &logits.data()[i * k..][..k];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
