//! The segmentation network: configuration, layer graph, forward pass,
//! loss/gradients, and model file IO.
//!
//! The architecture is a 1-D U-net over 12-lead strips. A first
//! encoder/decoder path convolves each lead row independently (weights shared
//! across rows) with max pools over time and transposed-convolution
//! upsampling, concatenating same-length encoder outputs into the decoder
//! ("skip first"). A 12×1 valid convolution then collapses the lead axis, an
//! optional second (post-collapse) pool/upsample path refines the fused
//! signal, and a final convolution block with dropout feeds a 1×1 convolution
//! producing per-timestep class logits.
//!
//! Two presets are provided. `paper` is the full-scale layout: input 2000,
//! four pooled encoder stages (kernels 19/15/11/11), a two-block bottom,
//! 8× and 2× deconvolutions back up, and a pooled post-collapse path —
//! 32 convolutional layers, 5 max pools, and 3 deconvolutions in total.
//! `desk` is a reduced layout (input 1024, two pooled stages, ≤ 8 filters)
//! that trains in minutes on a CPU and is what the test suite exercises
//! end-to-end.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::layers::*;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::types::SegmentClass;

/// Version stamp written into model files.
pub const MODEL_FORMAT_VERSION: &str = "ecg-unet-v1";

/// Which preset family a config came from (informational; the numeric fields
/// are authoritative).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalePreset {
    Paper,
    Desk,
}

/// Architecture hyperparameters. See the module docs for the layout; all
/// kernel lengths must be odd (symmetric "same" padding) and `input_len`
/// must survive every halving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub scale: ScalePreset,
    pub input_len: usize,
    pub n_leads: usize,
    pub n_classes: usize,
    /// Convolutions per block (3 in both presets).
    pub conv_block_depth: usize,
    /// Encoder stages: one conv block + max pool each.
    pub stage_kernels: Vec<usize>,
    pub stage_filters: Vec<usize>,
    pub n_pool_stages: usize,
    /// Conv blocks at the bottom of the encoder (no pooling between them).
    pub bottom_kernels: Vec<usize>,
    pub bottom_filters: Vec<usize>,
    /// Decoder upsampling strides, in order; kernel length equals the stride.
    /// Between consecutive deconvolutions sits one conv block
    /// (`expand_kernels`/`expand_filters`, one entry fewer than strides).
    pub deconv_strides: Vec<usize>,
    pub expand_kernels: Vec<usize>,
    pub expand_filters: Vec<usize>,
    /// Output channels of the 12×1 lead-collapse convolution.
    pub collapse_filters: usize,
    /// Whether the post-collapse path has its own pool/deconv pair around two
    /// conv blocks (`post_kernels`/`post_filters`); when false the blocks (if
    /// any) run in sequence at full length.
    pub post_pool: bool,
    pub post_kernels: Vec<usize>,
    pub post_filters: Vec<usize>,
    /// Final conv block before the classifier, carrying the dropout.
    pub final_kernel: usize,
    pub final_filters: usize,
    pub dropout_p: f64,
}

impl UNetConfig {
    /// Full-scale layout.
    pub fn paper() -> Self {
        UNetConfig {
            scale: ScalePreset::Paper,
            input_len: 2000,
            n_leads: 12,
            n_classes: 6,
            conv_block_depth: 3,
            stage_kernels: vec![19, 15, 11, 11],
            stage_filters: vec![16, 24, 32, 48],
            n_pool_stages: 4,
            bottom_kernels: vec![11, 11],
            bottom_filters: vec![64, 64],
            deconv_strides: vec![8, 2],
            expand_kernels: vec![11],
            expand_filters: vec![48],
            collapse_filters: 64,
            post_pool: true,
            post_kernels: vec![11, 11],
            post_filters: vec![64, 64],
            final_kernel: 9,
            final_filters: 64,
            dropout_p: 0.5,
        }
    }

    /// CPU-trainable reduced layout used by the test suite. Same 2 s window
    /// as the full-scale layout; far fewer filters and stages.
    pub fn desk() -> Self {
        UNetConfig {
            scale: ScalePreset::Desk,
            input_len: 2000,
            n_leads: 12,
            n_classes: 6,
            conv_block_depth: 3,
            stage_kernels: vec![9, 9],
            stage_filters: vec![4, 6],
            n_pool_stages: 2,
            bottom_kernels: vec![7],
            bottom_filters: vec![8],
            deconv_strides: vec![2, 2],
            expand_kernels: vec![7],
            expand_filters: vec![8],
            collapse_filters: 8,
            post_pool: false,
            post_kernels: vec![],
            post_filters: vec![],
            final_kernel: 5,
            final_filters: 8,
            dropout_p: 0.15,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_leads != 12 {
            return Err(Error::InvalidConfig(format!(
                "n_leads must be 12, got {}",
                self.n_leads
            )));
        }
        if self.n_classes < 2 {
            return Err(Error::InvalidConfig("n_classes must be ≥ 2".into()));
        }
        if self.conv_block_depth == 0 {
            return Err(Error::InvalidConfig("conv_block_depth must be ≥ 1".into()));
        }
        if self.stage_kernels.len() != self.n_pool_stages
            || self.stage_filters.len() != self.n_pool_stages
            || self.n_pool_stages == 0
        {
            return Err(Error::InvalidConfig(format!(
                "need one kernel/filter entry per pool stage ({}), got {}/{}",
                self.n_pool_stages,
                self.stage_kernels.len(),
                self.stage_filters.len()
            )));
        }
        if self.bottom_kernels.is_empty() || self.bottom_kernels.len() != self.bottom_filters.len()
        {
            return Err(Error::InvalidConfig(
                "bottom_kernels/bottom_filters must be non-empty and equal length".into(),
            ));
        }
        if self.deconv_strides.is_empty()
            || self.expand_kernels.len() + 1 != self.deconv_strides.len()
            || self.expand_filters.len() != self.expand_kernels.len()
        {
            return Err(Error::InvalidConfig(
                "expand_kernels/expand_filters must have one entry fewer than deconv_strides"
                    .into(),
            ));
        }
        let total_pool = 1usize << self.n_pool_stages;
        let stride_product: usize = self.deconv_strides.iter().product();
        if stride_product != total_pool {
            return Err(Error::InvalidConfig(format!(
                "deconv strides multiply to {stride_product}, but {} pool stages need {total_pool}",
                self.n_pool_stages
            )));
        }
        if self.input_len == 0 || self.input_len % total_pool != 0 {
            return Err(Error::InvalidConfig(format!(
                "input_len {} must be divisible by {total_pool}",
                self.input_len
            )));
        }
        if self.post_pool {
            if self.post_kernels.len() != 2 || self.post_filters.len() != 2 {
                return Err(Error::InvalidConfig(
                    "post_pool layout needs exactly two post blocks".into(),
                ));
            }
            if self.input_len % 2 != 0 {
                return Err(Error::InvalidConfig(
                    "post_pool requires an even input_len".into(),
                ));
            }
        } else if self.post_kernels.len() != self.post_filters.len() {
            return Err(Error::InvalidConfig(
                "post_kernels/post_filters must have equal length".into(),
            ));
        }
        let odd = |k: &usize| *k % 2 == 1;
        if !self.stage_kernels.iter().all(odd)
            || !self.bottom_kernels.iter().all(odd)
            || !self.expand_kernels.iter().all(odd)
            || !self.post_kernels.iter().all(odd)
            || self.final_kernel % 2 == 0
        {
            return Err(Error::InvalidConfig(
                "all conv kernels must be odd for symmetric same padding".into(),
            ));
        }
        let positive = |f: &usize| *f > 0;
        if !self.stage_filters.iter().all(positive)
            || !self.bottom_filters.iter().all(positive)
            || !self.expand_filters.iter().all(positive)
            || !self.post_filters.iter().all(positive)
            || self.collapse_filters == 0
            || self.final_filters == 0
        {
            return Err(Error::InvalidConfig("filter counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidConfig(format!(
                "dropout_p must lie in [0, 1), got {}",
                self.dropout_p
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum NodeKind {
    Input,
    Conv { relu: bool },
    Collapse,
    Pool,
    Deconv { stride: usize },
    /// Concatenate `skip`'s activation (skip channels first) with `src`'s.
    Concat { skip: usize },
    Dropout,
}

#[derive(Debug, Clone)]
struct Node {
    kind: NodeKind,
    src: usize,
    w: Option<String>,
    b: Option<String>,
}

#[derive(Debug, Clone)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    fan_in: usize,
    /// Biases are zero-initialized; kernels get He fan-in scaling.
    is_bias: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct Graph {
    nodes: Vec<Node>,
    params: Vec<ParamSpec>,
}

struct GraphBuilder {
    nodes: Vec<Node>,
    params: Vec<ParamSpec>,
    cur: usize,
    ch: usize,
    rows: usize,
    len: usize,
}

impl GraphBuilder {
    fn push(&mut self, kind: NodeKind, w: Option<String>, b: Option<String>) -> usize {
        self.nodes.push(Node {
            kind,
            src: self.cur,
            w,
            b,
        });
        self.cur = self.nodes.len() - 1;
        self.cur
    }

    fn conv(&mut self, name: &str, kernel: usize, filters: usize, relu: bool) {
        self.params.push(ParamSpec {
            name: format!("{name}.w"),
            shape: vec![filters, self.ch, kernel],
            fan_in: self.ch * kernel,
            is_bias: false,
        });
        self.params.push(ParamSpec {
            name: format!("{name}.b"),
            shape: vec![filters],
            fan_in: 0,
            is_bias: true,
        });
        self.push(
            NodeKind::Conv { relu },
            Some(format!("{name}.w")),
            Some(format!("{name}.b")),
        );
        self.ch = filters;
    }

    fn conv_block(&mut self, prefix: &str, kernel: usize, filters: usize, depth: usize) {
        for d in 0..depth {
            self.conv(&format!("{prefix}_c{d}"), kernel, filters, true);
        }
    }

    fn pool(&mut self, where_: &str) -> Result<()> {
        if self.len % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "length {} not divisible by 2 at {where_}",
                self.len
            )));
        }
        self.push(NodeKind::Pool, None, None);
        self.len /= 2;
        Ok(())
    }

    fn deconv(&mut self, name: &str, stride: usize, out_ch: usize) {
        self.params.push(ParamSpec {
            name: format!("{name}.w"),
            shape: vec![self.ch, out_ch, stride],
            fan_in: self.ch * stride,
            is_bias: false,
        });
        self.params.push(ParamSpec {
            name: format!("{name}.b"),
            shape: vec![out_ch],
            fan_in: 0,
            is_bias: true,
        });
        self.push(
            NodeKind::Deconv { stride },
            Some(format!("{name}.w")),
            Some(format!("{name}.b")),
        );
        self.ch = out_ch;
        self.len *= stride;
    }
}

pub(crate) fn build_graph(cfg: &UNetConfig) -> Result<Graph> {
    cfg.validate()?;
    let mut b = GraphBuilder {
        nodes: vec![Node {
            kind: NodeKind::Input,
            src: 0,
            w: None,
            b: None,
        }],
        params: Vec::new(),
        cur: 0,
        ch: 1,
        rows: cfg.n_leads,
        len: cfg.input_len,
    };

    // Encoder: conv block + pool per stage, remembering skip points.
    let mut skips: Vec<(usize, usize, usize)> = Vec::new(); // (node, ch, len)
    for i in 0..cfg.n_pool_stages {
        b.conv_block(
            &format!("enc{i}"),
            cfg.stage_kernels[i],
            cfg.stage_filters[i],
            cfg.conv_block_depth,
        );
        skips.push((b.cur, b.ch, b.len));
        b.pool(&format!("encoder stage {i}"))?;
    }
    for (i, (&k, &f)) in cfg
        .bottom_kernels
        .iter()
        .zip(&cfg.bottom_filters)
        .enumerate()
    {
        b.conv_block(&format!("bot{i}"), k, f, cfg.conv_block_depth);
    }

    // Decoder: deconv, concat with the same-length skip, conv block between
    // consecutive deconvolutions.
    for (j, &stride) in cfg.deconv_strides.iter().enumerate() {
        let target = b.len * stride;
        let &(skip_node, skip_ch, _) = skips
            .iter()
            .rev()
            .find(|&&(_, _, l)| l == target)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "deconv step {j} reaches length {target}, which matches no encoder stage"
                ))
            })?;
        b.deconv(&format!("up{j}"), stride, skip_ch);
        b.push(NodeKind::Concat { skip: skip_node }, None, None);
        b.ch += skip_ch;
        if j + 1 < cfg.deconv_strides.len() {
            b.conv_block(
                &format!("dec{j}"),
                cfg.expand_kernels[j],
                cfg.expand_filters[j],
                cfg.conv_block_depth,
            );
        }
    }
    if b.len != cfg.input_len {
        return Err(Error::InvalidConfig(format!(
            "decoder ends at length {}, expected {}",
            b.len, cfg.input_len
        )));
    }

    // Collapse the 12 lead rows into one.
    b.params.push(ParamSpec {
        name: "collapse.w".into(),
        shape: vec![cfg.collapse_filters, b.ch, cfg.n_leads],
        fan_in: b.ch * cfg.n_leads,
        is_bias: false,
    });
    b.params.push(ParamSpec {
        name: "collapse.b".into(),
        shape: vec![cfg.collapse_filters],
        fan_in: 0,
        is_bias: true,
    });
    b.push(
        NodeKind::Collapse,
        Some("collapse.w".into()),
        Some("collapse.b".into()),
    );
    b.ch = cfg.collapse_filters;
    b.rows = 1;

    // Post-collapse path.
    if cfg.post_pool {
        b.conv_block("post0", cfg.post_kernels[0], cfg.post_filters[0], cfg.conv_block_depth);
        let post_skip = (b.cur, b.ch);
        b.pool("post-collapse stage")?;
        b.conv_block("post1", cfg.post_kernels[1], cfg.post_filters[1], cfg.conv_block_depth);
        b.deconv("post_up", 2, post_skip.1);
        b.push(NodeKind::Concat { skip: post_skip.0 }, None, None);
        b.ch += post_skip.1;
    } else {
        for (i, (&k, &f)) in cfg.post_kernels.iter().zip(&cfg.post_filters).enumerate() {
            b.conv_block(&format!("post{i}"), k, f, cfg.conv_block_depth);
        }
    }

    b.conv_block("fin", cfg.final_kernel, cfg.final_filters, cfg.conv_block_depth);
    b.push(NodeKind::Dropout, None, None);
    b.conv("out", 1, cfg.n_classes, false);

    Ok(Graph {
        nodes: b.nodes,
        params: b.params,
    })
}

/// A network: config, graph, and named parameter tensors.
#[derive(Debug, Clone)]
pub struct UNetModel {
    pub config: UNetConfig,
    /// Seed the weights were initialized from (carried for provenance).
    pub rng_seed: u64,
    params: BTreeMap<String, Tensor>,
    graph: Graph,
}

impl UNetModel {
    /// Initialize a fresh model: He fan-in normal kernels, zero biases, drawn
    /// from the seeded stream in graph order.
    pub fn init(config: UNetConfig, seed: u64) -> Result<UNetModel> {
        let graph = build_graph(&config)?;
        let mut rng = rng_from_seed(seed);
        let mut params = BTreeMap::new();
        for spec in &graph.params {
            let tensor = if spec.is_bias {
                Tensor::zeros(&spec.shape)
            } else {
                let sd = (2.0 / spec.fan_in as f64).sqrt();
                let data = (0..spec.shape.iter().product::<usize>())
                    .map(|_| {
                        let z: f64 = rng.sample(StandardNormal);
                        z * sd
                    })
                    .collect();
                Tensor::from_vec(&spec.shape, data)?
            };
            params.insert(spec.name.clone(), tensor);
        }
        Ok(UNetModel {
            config,
            rng_seed: seed,
            params,
            graph,
        })
    }

    /// Named weight tensors (canonically ordered map).
    pub fn weights(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.params
    }

    /// Add `delta` to a single scalar weight, addressed by tensor name and
    /// flat index. This exists for finite-difference gradient probes; it
    /// rejects unknown names and out-of-range indices.
    pub fn nudge_weight(&mut self, name: &str, index: usize, delta: f64) -> Result<()> {
        let t = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("no weight tensor named {name:?}")))?;
        let data = t.data_mut();
        if index >= data.len() {
            return Err(Error::invalid(format!(
                "index {index} out of range for {name:?} ({} entries)",
                data.len()
            )));
        }
        data[index] += delta;
        Ok(())
    }

    fn param(&self, name: &str) -> &Tensor {
        &self.params[name]
    }

    fn bias_of(&self, node: &Node) -> &[f64] {
        self.param(node.b.as_deref().unwrap()).data()
    }
}

struct Tape {
    acts: Vec<Tensor>,
    pool_args: Vec<Option<Vec<u32>>>,
    drop_masks: Vec<Option<Vec<f64>>>,
}

fn input_tensor(config: &UNetConfig, window: &[Vec<f64>]) -> Result<Tensor> {
    if window.len() != config.n_leads {
        return Err(Error::Mismatch(format!(
            "window has {} rows, expected {}",
            window.len(),
            config.n_leads
        )));
    }
    let len = config.input_len;
    let mut x = Tensor::zeros(&[1, config.n_leads, len]);
    for (r, row) in window.iter().enumerate() {
        if row.len() != len {
            return Err(Error::Mismatch(format!(
                "window row {r} has {} samples, expected {len}",
                row.len()
            )));
        }
        x.row_mut(0, r).copy_from_slice(row);
    }
    Ok(x)
}

fn forward_tape(
    model: &UNetModel,
    window: &[Vec<f64>],
    train_mode: bool,
    dropout_seed: u64,
) -> Result<Tape> {
    let n = model.graph.nodes.len();
    let mut acts: Vec<Tensor> = Vec::with_capacity(n);
    let mut pool_args: Vec<Option<Vec<u32>>> = vec![None; n];
    let mut drop_masks: Vec<Option<Vec<f64>>> = vec![None; n];
    for (idx, node) in model.graph.nodes.iter().enumerate() {
        let act = match &node.kind {
            NodeKind::Input => input_tensor(&model.config, window)?,
            NodeKind::Conv { relu } => {
                let w = model.param(node.w.as_deref().unwrap());
                let mut y = conv_fwd(&acts[node.src], w, model.bias_of(node));
                if *relu {
                    relu_inplace(&mut y);
                }
                y
            }
            NodeKind::Collapse => {
                let w = model.param(node.w.as_deref().unwrap());
                collapse_fwd(&acts[node.src], w, model.bias_of(node))
            }
            NodeKind::Pool => {
                let (y, arg) = pool2_fwd(&acts[node.src]);
                pool_args[idx] = Some(arg);
                y
            }
            NodeKind::Deconv { stride } => {
                let w = model.param(node.w.as_deref().unwrap());
                deconv_fwd(&acts[node.src], w, model.bias_of(node), *stride)
            }
            NodeKind::Concat { skip } => concat_fwd(&acts[*skip], &acts[node.src]),
            NodeKind::Dropout => {
                let x = &acts[node.src];
                let p = model.config.dropout_p;
                if train_mode && p > 0.0 {
                    let mut rng = rng_from_seed(dropout_seed);
                    let scale = 1.0 / (1.0 - p);
                    let mask: Vec<f64> = (0..x.numel())
                        .map(|_| if rng.random::<f64>() < p { 0.0 } else { scale })
                        .collect();
                    let mut y = x.clone();
                    for (v, m) in y.data_mut().iter_mut().zip(&mask) {
                        *v *= m;
                    }
                    drop_masks[idx] = Some(mask);
                    y
                } else {
                    x.clone()
                }
            }
        };
        acts.push(act);
    }
    Ok(Tape {
        acts,
        pool_args,
        drop_masks,
    })
}

/// Run the network on one window and return per-step class probabilities
/// (`input_len` rows of `n_classes` values summing to 1).
///
/// `train_mode` enables dropout, whose mask is drawn from `seed`; inference
/// calls should pass `train_mode = false` (then `seed` is ignored).
pub fn forward(
    model: &UNetModel,
    window: &[Vec<f64>],
    train_mode: bool,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let tape = forward_tape(model, window, train_mode, seed)?;
    let logits = tape.acts.last().unwrap();
    let (c, len) = (logits.dim(0), logits.dim(2));
    let mut out = vec![vec![0.0; c]; len];
    for t in 0..len {
        let mut maxv = f64::NEG_INFINITY;
        for cls in 0..c {
            maxv = maxv.max(logits.at3(cls, 0, t));
        }
        let mut denom = 0.0;
        for cls in 0..c {
            let e = (logits.at3(cls, 0, t) - maxv).exp();
            out[t][cls] = e;
            denom += e;
        }
        for v in out[t].iter_mut() {
            *v /= denom;
        }
    }
    Ok(out)
}

fn accumulate(target: &mut Option<Tensor>, add: Tensor) {
    match target {
        Some(t) => {
            for (a, b) in t.data_mut().iter_mut().zip(add.data()) {
                *a += b;
            }
        }
        None => *target = Some(add),
    }
}

fn add_param_grad(grads: &mut BTreeMap<String, Tensor>, name: &str, add: &Tensor) {
    let g = grads.get_mut(name).unwrap();
    for (a, b) in g.data_mut().iter_mut().zip(add.data()) {
        *a += b;
    }
}

fn add_bias_grad(grads: &mut BTreeMap<String, Tensor>, name: &str, add: &[f64]) {
    let g = grads.get_mut(name).unwrap();
    for (a, b) in g.data_mut().iter_mut().zip(add) {
        *a += b;
    }
}

/// Cross-entropy loss plus L2 weight penalty over a batch, with gradients
/// for every parameter via backpropagation.
///
/// The loss is the mean per-step cross-entropy over all windows and steps,
/// plus `weight_decay × Σ w²` over every parameter tensor. Dropout is active
/// (this is the training-time loss); each window's mask stream is derived
/// from `dropout_seed_base` and the window index, so the result is a pure
/// function of its arguments.
pub(crate) fn loss_and_grads_seeded(
    model: &UNetModel,
    windows: &[Vec<Vec<f64>>],
    labels: &[&[SegmentClass]],
    weight_decay: f64,
    dropout_seed_base: u64,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    if windows.is_empty() || windows.len() != labels.len() {
        return Err(Error::Mismatch(format!(
            "batch of {} windows vs {} label sequences",
            windows.len(),
            labels.len()
        )));
    }
    let len = model.config.input_len;
    let n_classes = model.config.n_classes;
    for (wi, lab) in labels.iter().enumerate() {
        if lab.len() != len {
            return Err(Error::Mismatch(format!(
                "labels for window {wi} have {} steps, expected {len}",
                lab.len()
            )));
        }
    }
    let total_steps = (windows.len() * len) as f64;
    let mut grads: BTreeMap<String, Tensor> = model
        .params
        .iter()
        .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
        .collect();
    let mut ce_sum = 0.0;

    for (wi, (window, lab)) in windows.iter().zip(labels).enumerate() {
        let tape = forward_tape(model, window, true, derive_seed(dropout_seed_base, wi as u64))?;
        let n_nodes = model.graph.nodes.len();
        let logits = &tape.acts[n_nodes - 1];

        // Softmax cross-entropy and its gradient w.r.t. the logits.
        let mut dlogits = Tensor::zeros(&[n_classes, 1, len]);
        for t in 0..len {
            let mut maxv = f64::NEG_INFINITY;
            for c in 0..n_classes {
                maxv = maxv.max(logits.at3(c, 0, t));
            }
            let mut denom = 0.0;
            for c in 0..n_classes {
                denom += (logits.at3(c, 0, t) - maxv).exp();
            }
            let log_denom = denom.ln();
            let y = lab[t].code();
            ce_sum -= logits.at3(y, 0, t) - maxv - log_denom;
            for c in 0..n_classes {
                let p = (logits.at3(c, 0, t) - maxv).exp() / denom;
                let indicator = if c == y { 1.0 } else { 0.0 };
                dlogits.row_mut(c, 0)[t] = (p - indicator) / total_steps;
            }
        }

        // Backward sweep.
        let mut dacts: Vec<Option<Tensor>> = vec![None; n_nodes];
        dacts[n_nodes - 1] = Some(dlogits);
        for idx in (1..n_nodes).rev() {
            let Some(dy) = dacts[idx].take() else { continue };
            let node = &model.graph.nodes[idx];
            match &node.kind {
                NodeKind::Input => unreachable!("input is node 0"),
                NodeKind::Conv { relu } => {
                    let mut dy = dy;
                    if *relu {
                        relu_bwd_inplace(&mut dy, &tape.acts[idx]);
                    }
                    let w = model.param(node.w.as_deref().unwrap());
                    let (dx, dw, db) = conv_bwd(&tape.acts[node.src], w, &dy);
                    add_param_grad(&mut grads, node.w.as_deref().unwrap(), &dw);
                    add_bias_grad(&mut grads, node.b.as_deref().unwrap(), &db);
                    accumulate(&mut dacts[node.src], dx);
                }
                NodeKind::Collapse => {
                    let w = model.param(node.w.as_deref().unwrap());
                    let (dx, dw, db) = collapse_bwd(&tape.acts[node.src], w, &dy);
                    add_param_grad(&mut grads, node.w.as_deref().unwrap(), &dw);
                    add_bias_grad(&mut grads, node.b.as_deref().unwrap(), &db);
                    accumulate(&mut dacts[node.src], dx);
                }
                NodeKind::Pool => {
                    let dx = pool2_bwd(
                        &dy,
                        tape.pool_args[idx].as_ref().unwrap(),
                        tape.acts[node.src].dim(2),
                    );
                    accumulate(&mut dacts[node.src], dx);
                }
                NodeKind::Deconv { stride } => {
                    let w = model.param(node.w.as_deref().unwrap());
                    let (dx, dw, db) = deconv_bwd(&tape.acts[node.src], w, &dy, *stride);
                    add_param_grad(&mut grads, node.w.as_deref().unwrap(), &dw);
                    add_bias_grad(&mut grads, node.b.as_deref().unwrap(), &db);
                    accumulate(&mut dacts[node.src], dx);
                }
                NodeKind::Concat { skip } => {
                    let skip_ch = tape.acts[*skip].dim(0);
                    let (dskip, dup) = concat_bwd(&dy, skip_ch);
                    accumulate(&mut dacts[*skip], dskip);
                    accumulate(&mut dacts[node.src], dup);
                }
                NodeKind::Dropout => {
                    let mut dx = dy;
                    if let Some(mask) = &tape.drop_masks[idx] {
                        for (g, m) in dx.data_mut().iter_mut().zip(mask) {
                            *g *= m;
                        }
                    }
                    accumulate(&mut dacts[node.src], dx);
                }
            }
        }
    }

    let mut loss = ce_sum / total_steps;
    if weight_decay != 0.0 {
        for (name, w) in &model.params {
            loss += weight_decay * w.data().iter().map(|v| v * v).sum::<f64>();
            let g = grads.get_mut(name).unwrap();
            for (gv, wv) in g.data_mut().iter_mut().zip(w.data()) {
                *gv += 2.0 * weight_decay * wv;
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite training loss {loss}")));
    }
    Ok((loss, grads))
}

/// Public batch loss/gradient entry point; dropout streams are derived from
/// `cfg.seed`. See [`loss_and_grads_seeded`].
pub fn loss_and_grads(
    model: &UNetModel,
    windows: &[Vec<Vec<f64>>],
    labels: &[&[SegmentClass]],
    cfg: &super::train::TrainConfig,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    loss_and_grads_seeded(model, windows, labels, cfg.weight_decay, cfg.seed)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: String,
    config: UNetConfig,
    rng_seed: u64,
    weights: BTreeMap<String, Tensor>,
}

/// Write a model file (compact JSON; floats round-trip exactly).
pub fn save_model(model: &UNetModel, path: &std::path::Path) -> Result<()> {
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION.into(),
        config: model.config.clone(),
        rng_seed: model.rng_seed,
        weights: model.params.clone(),
    };
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

/// Load a model file, checking the format version and that the weight names
/// and shapes exactly match the config's graph.
pub fn load_model(path: &std::path::Path) -> Result<UNetModel> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let file: ModelFile = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "model file has format version {:?}, this build reads {:?}",
            file.format_version, MODEL_FORMAT_VERSION
        )));
    }
    let graph = build_graph(&file.config)?;
    if file.weights.len() != graph.params.len() {
        return Err(Error::Format(format!(
            "model file has {} weight tensors, config expects {}",
            file.weights.len(),
            graph.params.len()
        )));
    }
    for spec in &graph.params {
        let w = file.weights.get(&spec.name).ok_or_else(|| {
            Error::Format(format!("model file is missing weight tensor {:?}", spec.name))
        })?;
        if w.shape() != spec.shape.as_slice() {
            return Err(Error::Format(format!(
                "weight {:?} has shape {:?}, config expects {:?}",
                spec.name,
                w.shape(),
                spec.shape
            )));
        }
        if !w.all_finite() {
            return Err(Error::Format(format!(
                "weight {:?} contains non-finite values",
                spec.name
            )));
        }
    }
    Ok(UNetModel {
        config: file.config,
        rng_seed: file.rng_seed,
        params: file.weights,
        graph,
    })
}
