//! Graph discriminator built from principal-neighbourhood-aggregation layers.
//!
//! Each layer forms messages `m_ij = M(h_i ⊕ h_j ⊕ e_{j→i})` over the incoming
//! edges of node `i`, summarizes them with mean/max/min/std, scales the
//! summary by identity, amplification `log(d+1)/δ` and attenuation
//! `δ/log(d+1)`, and updates with `ReLU(U(h_i ⊕ scaled))`. Node embeddings
//! are sum-pooled and classified by a three-layer MLP ending in a sigmoid.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::neural::{
    gemm, read_weights, relu_backward, sigmoid, write_weights, LinearLayer, Matrix, View, WeightsReadError,
    WEIGHTS_SCHEMA_VERSION,
};
use crate::scenegraph::{SceneGraph, EDGE_FEATURE_DIM, NODE_FEATURE_DIM};

/// mean, max, min, std
pub const NUM_AGGREGATORS: usize = 4;
/// identity, amplification, attenuation
pub const NUM_SCALERS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PnaConfig {
    pub in_dim: usize,
    pub edge_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    /// Degree normalizer: mean of `log(d + 1)` over training nodes.
    pub delta: f64,
}

impl Default for PnaConfig {
    fn default() -> Self {
        Self {
            in_dim: NODE_FEATURE_DIM,
            edge_dim: EDGE_FEATURE_DIM,
            hidden: 64,
            layers: 4,
            delta: 1.0,
        }
    }
}

impl PnaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::BadConfig(format!("delta must be positive, got {}", self.delta)));
        }
        if self.hidden < 2 || self.layers == 0 || self.in_dim == 0 || self.edge_dim == 0 {
            return Err(Error::BadConfig(format!("invalid architecture {self:?}")));
        }
        Ok(())
    }

    pub fn head_dims(&self) -> [(usize, usize); 3] {
        let h = self.hidden;
        [(h, h), (h, h / 2), (h / 2, 1)]
    }
}

/// `[mean | max | min | std]` per component; std is the population standard
/// deviation with a zero-clamped radicand. No messages → all zeros.
pub fn aggregate(messages: &[&[f64]], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; NUM_AGGREGATORS * width];
    if messages.is_empty() {
        return out;
    }
    let n = messages.len() as f64;
    for c in 0..width {
        let mut sum = 0.0;
        let mut max = f64::NEG_INFINITY;
        let mut min = f64::INFINITY;
        for m in messages {
            sum += m[c];
            max = max.max(m[c]);
            min = min.min(m[c]);
        }
        let mean = sum / n;
        let var = messages.iter().map(|m| (m[c] - mean).powi(2)).sum::<f64>() / n;
        out[c] = mean;
        out[width + c] = max;
        out[2 * width + c] = min;
        out[3 * width + c] = var.max(0.0).sqrt();
    }
    out
}

/// Amplification and attenuation factors for in-degree `degree`.
pub fn scaler_factors(degree: usize, delta: f64) -> (f64, f64) {
    if degree == 0 {
        return (0.0, 0.0);
    }
    let log_d = (degree as f64 + 1.0).ln();
    (log_d / delta, delta / log_d)
}

/// `[agg | agg·amplification | agg·attenuation]`.
pub fn scale(agg: &[f64], degree: usize, delta: f64) -> Vec<f64> {
    let (amp, att) = scaler_factors(degree, delta);
    let mut out = Vec::with_capacity(NUM_SCALERS * agg.len());
    out.extend_from_slice(agg);
    out.extend(agg.iter().map(|v| v * amp));
    out.extend(agg.iter().map(|v| v * att));
    out
}

/// Mean of `log(d + 1)` over every node in-degree of the given graphs.
pub fn compute_delta<'a, I>(graphs: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a SceneGraph>,
{
    let mut total = 0.0;
    let mut nodes = 0usize;
    for g in graphs {
        for inc in g.incoming() {
            total += (inc.len() as f64 + 1.0).ln();
            nodes += 1;
        }
    }
    if nodes == 0 {
        return Err(Error::EmptyDataset("no graph nodes to compute delta from".into()));
    }
    Ok(total / nodes as f64)
}

/// Fixed per-dimension map `x ↦ (x − shift)·scale` applied to node and edge
/// features before the first layer. Not trained.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm {
    pub node_shift: Vec<f64>,
    pub node_scale: Vec<f64>,
    pub edge_shift: Vec<f64>,
    pub edge_scale: Vec<f64>,
}

impl InputNorm {
    pub fn identity(in_dim: usize, edge_dim: usize) -> Self {
        Self {
            node_shift: vec![0.0; in_dim],
            node_scale: vec![1.0; in_dim],
            edge_shift: vec![0.0; edge_dim],
            edge_scale: vec![1.0; edge_dim],
        }
    }

    /// Per-dimension mean and inverse population standard deviation over
    /// every node and edge row; near-constant dimensions keep unit scale.
    pub fn fit<'a, I>(graphs: I, in_dim: usize, edge_dim: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a SceneGraph>,
    {
        let mut node = Moments::new(in_dim);
        let mut edge = Moments::new(edge_dim);
        for g in graphs {
            if g.node_features.cols() != in_dim || g.edge_features.cols() != edge_dim {
                return Err(Error::ShapeMismatch(
                    "graph feature widths differ from the configuration".into(),
                ));
            }
            node.add(&g.node_features);
            edge.add(&g.edge_features);
        }
        if node.count == 0 {
            return Err(Error::EmptyDataset("no graph nodes to fit input normalization".into()));
        }
        let (node_shift, node_scale) = node.finish();
        let (edge_shift, edge_scale) = edge.finish();
        Ok(Self {
            node_shift,
            node_scale,
            edge_shift,
            edge_scale,
        })
    }

    fn apply(m: &Matrix, shift: &[f64], scale: &[f64]) -> Matrix {
        let mut out = m.clone();
        for r in 0..out.rows() {
            for ((v, s), k) in out.row_mut(r).iter_mut().zip(shift).zip(scale) {
                *v = (*v - s) * k;
            }
        }
        out
    }

    pub fn nodes(&self, m: &Matrix) -> Matrix {
        Self::apply(m, &self.node_shift, &self.node_scale)
    }

    pub fn edges(&self, m: &Matrix) -> Matrix {
        Self::apply(m, &self.edge_shift, &self.edge_scale)
    }

    fn scalars(&self) -> impl Iterator<Item = f64> + '_ {
        self.node_shift
            .iter()
            .chain(&self.node_scale)
            .chain(&self.edge_shift)
            .chain(&self.edge_scale)
            .copied()
    }
}

struct Moments {
    count: usize,
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Self {
            count: 0,
            sum: vec![0.0; dim],
            sq: vec![0.0; dim],
        }
    }

    fn add(&mut self, m: &Matrix) {
        for r in 0..m.rows() {
            self.count += 1;
            for (c, v) in m.row(r).iter().enumerate() {
                self.sum[c] += v;
                self.sq[c] += v * v;
            }
        }
    }

    fn finish(self) -> (Vec<f64>, Vec<f64>) {
        let n = self.count.max(1) as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let scale = self
            .sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let sd = (q / n - m * m).max(0.0).sqrt();
                if sd > 1e-9 {
                    1.0 / sd
                } else {
                    1.0
                }
            })
            .collect();
        (mean, scale)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnaLayer {
    /// `(2·h_in + edge_dim) → hidden`, followed by ReLU.
    pub message: LinearLayer,
    /// `hidden → hidden`, the message MLP's output layer.
    pub message_out: LinearLayer,
    /// `(h_in + 12·hidden) → hidden`
    pub update: LinearLayer,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Matrix,
    message_pre: Matrix,
    messages: Matrix,
    mean: Matrix,
    std: Matrix,
    argmax: Vec<usize>,
    argmin: Vec<usize>,
    update_input: Matrix,
    pre: Matrix,
}

/// Intermediate values of one forward pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    edges: Matrix,
    head_inputs: Vec<Matrix>,
    head_pre: Vec<Matrix>,
    num_nodes: usize,
    num_edges: usize,
    pub logit: f64,
    pub prob: f64,
}

/// Input gradients of a backward pass.
#[derive(Debug, Clone)]
pub struct InputGrads {
    pub node: Matrix,
    pub edge: Matrix,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Discriminator,
    pub inputs: InputGrads,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub config: PnaConfig,
    pub layers: Vec<PnaLayer>,
    pub head: Vec<LinearLayer>,
    pub input_norm: InputNorm,
    /// Set once the discriminator has been fitted to data.
    pub trained: bool,
}

impl Discriminator {
    /// Glorot-initialized discriminator; parameters are drawn in declaration order.
    pub fn new(config: PnaConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self::build(config, |i, o| LinearLayer::glorot(i, o, &mut rng)))
    }

    fn build(config: PnaConfig, mut make: impl FnMut(usize, usize) -> LinearLayer) -> Self {
        let h = config.hidden;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let h_in = if l == 0 { config.in_dim } else { h };
            let message = make(2 * h_in + config.edge_dim, h);
            let message_out = make(h, h);
            let update = make(h_in + NUM_AGGREGATORS * NUM_SCALERS * h, h);
            layers.push(PnaLayer {
                message,
                message_out,
                update,
            });
        }
        let head = config.head_dims().iter().map(|&(i, o)| make(i, o)).collect();
        Self {
            config,
            layers,
            head,
            input_norm: InputNorm::identity(config.in_dim, config.edge_dim),
            trained: false,
        }
    }

    /// Same architecture with every parameter zero (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let mut z = Self::build(self.config, LinearLayer::zeros);
        z.trained = self.trained;
        z
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(4 * self.layers.len() + 6);
        for l in &self.layers {
            out.push(l.message.weights.data());
            out.push(&l.message.bias[..]);
            out.push(l.message_out.weights.data());
            out.push(&l.message_out.bias[..]);
            out.push(l.update.weights.data());
            out.push(&l.update.bias[..]);
        }
        for l in &self.head {
            out.push(l.weights.data());
            out.push(&l.bias[..]);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(4 * self.layers.len() + 6);
        for l in &mut self.layers {
            out.push(l.message.weights.data_mut());
            out.push(&mut l.message.bias[..]);
            out.push(l.message_out.weights.data_mut());
            out.push(&mut l.message_out.bias[..]);
            out.push(l.update.weights.data_mut());
            out.push(&mut l.update.bias[..]);
        }
        for l in &mut self.head {
            out.push(l.weights.data_mut());
            out.push(&mut l.bias[..]);
        }
        out
    }

    pub fn param_shapes(&self) -> Vec<usize> {
        self.params().iter().map(|p| p.len()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().sum()
    }

    /// Elementwise `self += other` over all parameters.
    pub fn accumulate(&mut self, other: &Discriminator) {
        for (a, b) in self.params_mut().into_iter().zip(other.params()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    fn check_graph(&self, graph: &SceneGraph) -> Result<()> {
        graph.validate()?;
        if graph.node_features.cols() != self.config.in_dim || graph.edge_features.cols() != self.config.edge_dim {
            return Err(Error::ShapeMismatch(format!(
                "graph features {}/{} do not match discriminator {}/{}",
                graph.node_features.cols(),
                graph.edge_features.cols(),
                self.config.in_dim,
                self.config.edge_dim
            )));
        }
        if graph.num_nodes() == 0 {
            return Err(Error::ShapeMismatch("graph has no nodes".into()));
        }
        Ok(())
    }

    /// Probability that the graph is a plausible (real) scene.
    pub fn forward(&self, graph: &SceneGraph) -> Result<f64> {
        Ok(self.forward_cached(graph)?.prob)
    }

    pub fn forward_cached(&self, graph: &SceneGraph) -> Result<ForwardCache> {
        self.check_graph(graph)?;
        let incoming = graph.incoming();
        let mut h = self.input_norm.nodes(&graph.node_features);
        let edges = self.input_norm.edges(&graph.edge_features);
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, cache) = self.layer_forward(layer, graph, &edges, &incoming, h)?;
            caches.push(cache);
            h = out;
        }
        let pooled = Matrix::from_vec(1, h.cols(), h.col_sums())?;
        let mut head_inputs = Vec::with_capacity(self.head.len());
        let mut head_pre = Vec::with_capacity(self.head.len());
        let mut x = pooled;
        for (k, layer) in self.head.iter().enumerate() {
            let pre = layer.forward(&x)?;
            head_inputs.push(x);
            x = pre.clone();
            if k + 1 < self.head.len() {
                x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            head_pre.push(pre);
        }
        let logit = x.get(0, 0);
        Ok(ForwardCache {
            layers: caches,
            edges,
            head_inputs,
            head_pre,
            num_nodes: graph.num_nodes(),
            num_edges: graph.num_edges(),
            logit,
            prob: sigmoid(logit),
        })
    }

    /// Single PNA layer on explicit node embeddings; edge features pass
    /// through the input normalization.
    pub fn pna_layer_forward(&self, layer: usize, graph: &SceneGraph, input: &Matrix) -> Result<Matrix> {
        let l = self
            .layers
            .get(layer)
            .ok_or_else(|| Error::ShapeMismatch(format!("no layer {layer}")))?;
        let edges = self.input_norm.edges(&graph.edge_features);
        let (out, _) = self.layer_forward(l, graph, &edges, &graph.incoming(), input.clone())?;
        Ok(out)
    }

    fn layer_forward(
        &self,
        layer: &PnaLayer,
        graph: &SceneGraph,
        edges: &Matrix,
        incoming: &[Vec<usize>],
        input: Matrix,
    ) -> Result<(Matrix, LayerCache)> {
        let p = input.rows();
        let h_in = input.cols();
        let hid = self.config.hidden;
        let w = &layer.message.weights;
        if w.cols() != 2 * h_in + self.config.edge_dim || p != graph.num_nodes() {
            return Err(Error::ShapeMismatch(format!(
                "layer expects {} message inputs, embeddings give {}",
                w.cols(),
                2 * h_in + self.config.edge_dim
            )));
        }
        let e_count = graph.num_edges();

        // First message layer W_self·h_i + W_nbr·h_j + W_edge·e + b, evaluated blockwise.
        let mut self_part = Matrix::zeros(p, hid);
        gemm(
            1.0,
            View::of(&input),
            View::columns(w, 0, h_in).t(),
            0.0,
            &mut self_part,
        );
        let mut nbr_part = Matrix::zeros(p, hid);
        gemm(
            1.0,
            View::of(&input),
            View::columns(w, h_in, h_in).t(),
            0.0,
            &mut nbr_part,
        );
        let mut message_pre = Matrix::zeros(e_count, hid);
        gemm(
            1.0,
            View::of(edges),
            View::columns(w, 2 * h_in, self.config.edge_dim).t(),
            0.0,
            &mut message_pre,
        );
        for (e, &(src, dst)) in graph.edge_index.iter().enumerate() {
            let (s, n) = (self_part.row(dst), nbr_part.row(src));
            let row = message_pre.row_mut(e);
            for c in 0..hid {
                row[c] += s[c] + n[c] + layer.message.bias[c];
            }
        }
        let mut hidden_act = message_pre.clone();
        hidden_act.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let messages = layer.message_out.forward(&hidden_act)?;

        let width = NUM_AGGREGATORS * NUM_SCALERS * hid;
        let mut mean = Matrix::zeros(p, hid);
        let mut std = Matrix::zeros(p, hid);
        let mut argmax = vec![usize::MAX; p * hid];
        let mut argmin = vec![usize::MAX; p * hid];
        let mut update_input = Matrix::zeros(p, h_in + width);
        for i in 0..p {
            let inc = &incoming[i];
            let row = update_input.row_mut(i);
            row[..h_in].copy_from_slice(input.row(i));
            if inc.is_empty() {
                continue;
            }
            let n = inc.len() as f64;
            let (amp, att) = scaler_factors(inc.len(), self.config.delta);
            for c in 0..hid {
                let mut sum = 0.0;
                let (mut max, mut imax) = (f64::NEG_INFINITY, usize::MAX);
                let (mut min, mut imin) = (f64::INFINITY, usize::MAX);
                for &e in inc {
                    let v = messages.get(e, c);
                    sum += v;
                    if v > max {
                        max = v;
                        imax = e;
                    }
                    if v < min {
                        min = v;
                        imin = e;
                    }
                }
                let mu = sum / n;
                let var = inc.iter().map(|&e| (messages.get(e, c) - mu).powi(2)).sum::<f64>() / n;
                let sd = var.max(0.0).sqrt();
                mean.set(i, c, mu);
                std.set(i, c, sd);
                argmax[i * hid + c] = imax;
                argmin[i * hid + c] = imin;
                let agg = [mu, max, min, sd];
                for (a, v) in agg.iter().enumerate() {
                    let k = a * hid + c;
                    row[h_in + k] = *v;
                    row[h_in + 4 * hid + k] = v * amp;
                    row[h_in + 8 * hid + k] = v * att;
                }
            }
        }
        let pre = layer.update.forward(&update_input)?;
        let mut out = pre.clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        Ok((
            out,
            LayerCache {
                input,
                message_pre,
                messages,
                mean,
                std,
                argmax,
                argmin,
                update_input,
                pre,
            },
        ))
    }

    /// Backward pass seeded with `d(loss)/d(logit)`.
    ///
    /// Weight gradients are added into `weight_grads` when given; input
    /// gradients are returned when `want_inputs` is set.
    pub fn backward_logit(
        &self,
        graph: &SceneGraph,
        cache: Option<&ForwardCache>,
        dlogit: f64,
        mut weight_grads: Option<&mut Discriminator>,
        want_inputs: bool,
    ) -> Result<Option<InputGrads>> {
        let cache = cache.ok_or(Error::MissingCache)?;
        if cache.num_nodes != graph.num_nodes() || cache.num_edges != graph.num_edges() {
            return Err(Error::ShapeMismatch(
                "forward cache belongs to a different graph".into(),
            ));
        }
        if let Some(g) = weight_grads.as_deref() {
            if g.config.hidden != self.config.hidden || g.layers.len() != self.layers.len() {
                return Err(Error::ShapeMismatch("gradient accumulator architecture differs".into()));
            }
        }

        // Head.
        let mut d = Matrix::from_vec(1, 1, vec![dlogit])?;
        for k in (0..self.head.len()).rev() {
            let layer = &self.head[k];
            if k + 1 < self.head.len() {
                let pre = &cache.head_pre[k];
                for (g, z) in d.data_mut().iter_mut().zip(pre.data()) {
                    *g = relu_backward(*z, *g);
                }
            }
            let input = &cache.head_inputs[k];
            d = match weight_grads.as_deref_mut() {
                Some(acc) => layer
                    .backward_accumulate(input, &d, &mut acc.head[k], true)?
                    .expect("input grad requested"),
                None => input_grad(layer, &d),
            };
        }

        // Sum pooling broadcasts the pooled gradient to every node.
        let hid = self.config.hidden;
        let mut d_nodes = Matrix::zeros(graph.num_nodes(), hid);
        for i in 0..graph.num_nodes() {
            d_nodes.row_mut(i).copy_from_slice(d.row(0));
        }

        let incoming = graph.incoming();
        let mut d_edges = want_inputs.then(|| Matrix::zeros(graph.num_edges(), self.config.edge_dim));
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let acc = weight_grads.as_deref_mut().map(|g| &mut g.layers[l]);
            d_nodes = self.layer_backward(
                layer,
                &cache.layers[l],
                graph,
                &cache.edges,
                &incoming,
                d_nodes,
                acc,
                d_edges.as_mut(),
            )?;
        }
        Ok(d_edges.map(|mut edge| {
            let norm = &self.input_norm;
            for r in 0..d_nodes.rows() {
                d_nodes
                    .row_mut(r)
                    .iter_mut()
                    .zip(&norm.node_scale)
                    .for_each(|(g, k)| *g *= k);
            }
            for r in 0..edge.rows() {
                edge.row_mut(r)
                    .iter_mut()
                    .zip(&norm.edge_scale)
                    .for_each(|(g, k)| *g *= k);
            }
            InputGrads { node: d_nodes, edge }
        }))
    }

    /// Backward pass seeded with `d(loss)/d(probability)`; returns weight and input gradients.
    pub fn backward(&self, graph: &SceneGraph, cache: Option<&ForwardCache>, upstream: f64) -> Result<Gradients> {
        let c = cache.ok_or(Error::MissingCache)?;
        let dlogit = upstream * c.prob * (1.0 - c.prob);
        let mut weights = self.zeros_like();
        let inputs = self
            .backward_logit(graph, Some(c), dlogit, Some(&mut weights), true)?
            .expect("inputs requested");
        Ok(Gradients { weights, inputs })
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_backward(
        &self,
        layer: &PnaLayer,
        cache: &LayerCache,
        graph: &SceneGraph,
        edges: &Matrix,
        incoming: &[Vec<usize>],
        d_out: Matrix,
        acc: Option<&mut PnaLayer>,
        d_edges: Option<&mut Matrix>,
    ) -> Result<Matrix> {
        let hid = self.config.hidden;
        let p = cache.input.rows();
        let h_in = cache.input.cols();
        let e_count = graph.num_edges();

        let mut d_pre = d_out;
        for (g, z) in d_pre.data_mut().iter_mut().zip(cache.pre.data()) {
            *g = relu_backward(*z, *g);
        }
        let (d_uin, mut acc) = match acc {
            Some(acc) => (
                layer
                    .update
                    .backward_accumulate(&cache.update_input, &d_pre, &mut acc.update, true)?
                    .expect("input grad requested"),
                Some(acc),
            ),
            None => (input_grad(&layer.update, &d_pre), None),
        };

        let mut d_input = Matrix::zeros(p, h_in);
        let mut d_msg = Matrix::zeros(e_count, hid);
        for i in 0..p {
            let row = d_uin.row(i);
            d_input.row_mut(i).copy_from_slice(&row[..h_in]);
            let inc = &incoming[i];
            if inc.is_empty() {
                continue;
            }
            let n = inc.len() as f64;
            let (amp, att) = scaler_factors(inc.len(), self.config.delta);
            let ds = &row[h_in..];
            for c in 0..hid {
                let d_agg = |a: usize| {
                    let k = a * hid + c;
                    ds[k] + amp * ds[4 * hid + k] + att * ds[8 * hid + k]
                };
                let (d_mean, d_max, d_min, d_std) = (d_agg(0), d_agg(1), d_agg(2), d_agg(3));
                let mu = cache.mean.get(i, c);
                let sd = cache.std.get(i, c);
                for &e in inc {
                    let mut g = d_mean / n;
                    if sd > 0.0 {
                        g += d_std * (cache.messages.get(e, c) - mu) / (n * sd);
                    }
                    d_msg.data_mut()[e * hid + c] += g;
                }
                d_msg.data_mut()[cache.argmax[i * hid + c] * hid + c] += d_max;
                d_msg.data_mut()[cache.argmin[i * hid + c] * hid + c] += d_min;
            }
        }

        // Through the message MLP's output layer and its ReLU.
        let mut hidden_act = cache.message_pre.clone();
        hidden_act.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let mut d_msg = match acc.as_deref_mut() {
            Some(acc) => layer
                .message_out
                .backward_accumulate(&hidden_act, &d_msg, &mut acc.message_out, true)?
                .expect("input grad requested"),
            None => input_grad(&layer.message_out, &d_msg),
        };
        for (g, z) in d_msg.data_mut().iter_mut().zip(cache.message_pre.data()) {
            *g = relu_backward(*z, *g);
        }

        // Route message gradients back to the receiving and sending node embeddings.
        let mut g_dst = Matrix::zeros(p, hid);
        let mut g_src = Matrix::zeros(p, hid);
        for (e, &(src, dst)) in graph.edge_index.iter().enumerate() {
            let dm = d_msg.row(e);
            for (a, b) in g_dst.row_mut(dst).iter_mut().zip(dm) {
                *a += b;
            }
            for (a, b) in g_src.row_mut(src).iter_mut().zip(dm) {
                *a += b;
            }
        }
        let w = &layer.message.weights;
        gemm(1.0, View::of(&g_dst), View::columns(w, 0, h_in), 1.0, &mut d_input);
        gemm(1.0, View::of(&g_src), View::columns(w, h_in, h_in), 1.0, &mut d_input);
        if let Some(d_edges) = d_edges {
            gemm(
                1.0,
                View::of(&d_msg),
                View::columns(w, 2 * h_in, self.config.edge_dim),
                1.0,
                d_edges,
            );
        }

        if let Some(acc) = acc {
            let gw = &mut acc.message.weights;
            let mut block = Matrix::zeros(hid, h_in);
            gemm(1.0, View::of(&g_dst).t(), View::of(&cache.input), 0.0, &mut block);
            add_block(gw, &block, 0);
            gemm(1.0, View::of(&g_src).t(), View::of(&cache.input), 0.0, &mut block);
            add_block(gw, &block, h_in);
            let mut eblock = Matrix::zeros(hid, self.config.edge_dim);
            gemm(1.0, View::of(&d_msg).t(), View::of(edges), 0.0, &mut eblock);
            add_block(gw, &eblock, 2 * h_in);
            for (b, g) in acc.message.bias.iter_mut().zip(d_msg.col_sums()) {
                *b += g;
            }
        }
        Ok(d_input)
    }

    pub fn architecture_dims(&self) -> Vec<u32> {
        let c = &self.config;
        let mut dims = vec![
            c.in_dim as u32,
            c.edge_dim as u32,
            c.hidden as u32,
            c.layers as u32,
            NUM_AGGREGATORS as u32,
            NUM_SCALERS as u32,
        ];
        for (i, o) in c.head_dims() {
            dims.push(i as u32);
            dims.push(o as u32);
        }
        dims
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(8 * self.param_count() + 128);
        let mut scalars = vec![self.config.delta, if self.trained { 1.0 } else { 0.0 }];
        scalars.extend(self.input_norm.scalars());
        write_weights(&mut buf, &self.architecture_dims(), &scalars, &self.params())
            .expect("writing to a Vec cannot fail");
        buf
    }

    /// Hex SHA-256 of the serialized weights.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let decoded = read_weights(BufReader::new(file)).map_err(|e| match e {
            WeightsReadError::Io(source) => Error::io(path, source),
            WeightsReadError::BadMagic => Error::BadConfig(format!("{} is not a weights file", path.display())),
            WeightsReadError::Version(found) => Error::SchemaVersionMismatch {
                what: path.display().to_string(),
                expected: WEIGHTS_SCHEMA_VERSION,
                found,
            },
        })?;
        let d = &decoded.dims;
        if d.len() != 12 || decoded.scalars.len() != 2 + 2 * (d[0] as usize + d[1] as usize) {
            return Err(Error::BadConfig(format!(
                "unexpected weights header in {}",
                path.display()
            )));
        }
        let config = PnaConfig {
            in_dim: d[0] as usize,
            edge_dim: d[1] as usize,
            hidden: d[2] as usize,
            layers: d[3] as usize,
            delta: decoded.scalars[0],
        };
        config.validate()?;
        let mut disc = Self::build(config, LinearLayer::zeros);
        if disc.architecture_dims() != decoded.dims {
            return Err(Error::BadConfig(format!(
                "architecture {:?} in {} is not supported",
                decoded.dims,
                path.display()
            )));
        }
        if decoded.params.len() != disc.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters in file, architecture needs {}",
                decoded.params.len(),
                disc.param_count()
            )));
        }
        let mut offset = 0;
        for p in disc.params_mut() {
            let n = p.len();
            p.copy_from_slice(&decoded.params[offset..offset + n]);
            offset += n;
        }
        disc.trained = decoded.scalars[1] != 0.0;
        let (n, e) = (config.in_dim, config.edge_dim);
        let rest = &decoded.scalars[2..];
        disc.input_norm = InputNorm {
            node_shift: rest[..n].to_vec(),
            node_scale: rest[n..2 * n].to_vec(),
            edge_shift: rest[2 * n..2 * n + e].to_vec(),
            edge_scale: rest[2 * n + e..].to_vec(),
        };
        Ok(disc)
    }
}

fn input_grad(layer: &LinearLayer, grad_out: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(grad_out.rows(), layer.input_dim());
    gemm(1.0, View::of(grad_out), View::of(&layer.weights), 0.0, &mut out);
    out
}

fn add_block(dst: &mut Matrix, block: &Matrix, col_offset: usize) {
    for r in 0..block.rows() {
        let src = block.row(r);
        let row = dst.row_mut(r);
        for (a, b) in row[col_offset..col_offset + src.len()].iter_mut().zip(src) {
            *a += b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{OrientedBox, Rotation3, Vec3};
    use crate::scenegraph::{build_graph, Label, NodeKind, ObjectClass, Scene, SceneElement};
    use rand::Rng;

    pub(crate) fn random_scene(p: usize, seed: u64) -> Scene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let elements = (0..p)
            .map(|_| {
                let c = Vec3::new(
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(0.0..1.5),
                );
                let h = Vec3::new(
                    rng.gen_range(0.1..0.8),
                    rng.gen_range(0.1..0.8),
                    rng.gen_range(0.1..0.8),
                );
                let axis = Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                let r = Rotation3::about_axis(axis, rng.gen_range(-3.0..3.0));
                SceneElement::new(NodeKind::Object(ObjectClass::Chair), OrientedBox::new(c, h, r))
            })
            .collect();
        Scene::new(elements, Label::Unlabeled).unwrap()
    }

    fn small_disc(seed: u64) -> Discriminator {
        let cfg = PnaConfig {
            hidden: 8,
            delta: 1.3,
            ..PnaConfig::default()
        };
        Discriminator::new(cfg, seed).unwrap()
    }

    #[test]
    fn aggregate_known_values() {
        let msgs: Vec<[f64; 1]> = vec![[1.0], [2.0], [3.0]];
        let refs: Vec<&[f64]> = msgs.iter().map(|m| &m[..]).collect();
        let a = aggregate(&refs, 1);
        assert_eq!(a[..3], [2.0, 3.0, 1.0]);
        assert!((a[3] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((a[3] - 0.8165).abs() < 1e-4);

        let v = [0.5, -1.25];
        assert_eq!(
            aggregate(&[&v[..]], 2),
            vec![0.5, -1.25, 0.5, -1.25, 0.5, -1.25, 0.0, 0.0]
        );
        assert_eq!(aggregate(&[], 3), vec![0.0; 12]);
    }

    #[test]
    fn scale_cases() {
        let agg = vec![1.0, -2.0, 0.5, 4.0];
        let delta = 3f64.ln();
        let s = scale(&agg, 2, delta);
        for k in 0..4 {
            assert!((s[k] - agg[k]).abs() < 1e-15);
            assert!((s[4 + k] - agg[k]).abs() < 1e-15);
            assert!((s[8 + k] - agg[k]).abs() < 1e-15);
        }
        let s0 = scale(&agg, 0, delta);
        assert_eq!(&s0[..4], &agg[..]);
        assert!(s0[4..].iter().all(|v| *v == 0.0));
        let a = scale(&agg, 5, 1.0);
        let b = scale(&agg, 5, 2.0);
        for k in 0..4 {
            assert_eq!(b[4 + k], a[4 + k] / 2.0);
        }
    }

    #[test]
    fn delta_for_complete_graphs() {
        let g5 = build_graph(&random_scene(5, 1)).unwrap();
        let d = compute_delta([&g5, &g5]).unwrap();
        assert!((d - 5f64.ln()).abs() < 1e-12);
        assert!((d - 1.6094).abs() < 1e-4);
        let g2 = build_graph(&random_scene(2, 2)).unwrap();
        let g4 = build_graph(&random_scene(4, 3)).unwrap();
        let mixed = compute_delta([&g2, &g4]).unwrap();
        let brute = (2.0 * 2f64.ln() + 4.0 * 4f64.ln()) / 6.0;
        assert!((mixed - brute).abs() < 1e-12);
        let g1 = build_graph(&random_scene(1, 4)).unwrap();
        assert_eq!(compute_delta([&g1]).unwrap(), 0.0);
        assert!(matches!(compute_delta(std::iter::empty()), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn zero_delta_is_rejected() {
        let cfg = PnaConfig {
            delta: 0.0,
            ..PnaConfig::default()
        };
        assert!(Discriminator::new(cfg, 1).is_err());
    }

    #[test]
    fn single_node_layer_has_no_messages() {
        let disc = small_disc(9);
        let g = build_graph(&random_scene(1, 5)).unwrap();
        let out = disc.pna_layer_forward(0, &g, &g.node_features).unwrap();
        let mut x = vec![0.0; disc.layers[0].update.input_dim()];
        x[..24].copy_from_slice(g.node_features.row(0));
        let expect: Vec<f64> = disc.layers[0]
            .update
            .forward_vec(&x)
            .unwrap()
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        assert_eq!(out.row(0), &expect[..]);
        let p = disc.forward(&g).unwrap();
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn output_in_open_unit_interval_and_permutation_invariant() {
        let disc = small_disc(2);
        let scene = random_scene(5, 6);
        let p = disc.forward(&build_graph(&scene).unwrap()).unwrap();
        assert!(p > 0.0 && p < 1.0);
        let mut permuted = scene.clone();
        permuted.elements.reverse();
        permuted.elements.swap(0, 2);
        let q = disc.forward(&build_graph(&permuted).unwrap()).unwrap();
        assert!((p - q).abs() < 1e-9, "{p} vs {q}");
    }

    #[test]
    fn layer_is_permutation_equivariant() {
        let disc = small_disc(4);
        let scene = random_scene(4, 8);
        let perm = [2usize, 0, 3, 1];
        let mut permuted = scene.clone();
        permuted.elements = perm.iter().map(|&i| scene.elements[i].clone()).collect();
        let g = build_graph(&scene).unwrap();
        let gp = build_graph(&permuted).unwrap();
        let out = disc.pna_layer_forward(0, &g, &g.node_features).unwrap();
        let outp = disc.pna_layer_forward(0, &gp, &gp.node_features).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            for (a, b) in outp.row(new).iter().zip(out.row(old)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn missing_cache_and_zero_upstream() {
        let disc = small_disc(3);
        let g = build_graph(&random_scene(3, 9)).unwrap();
        assert!(matches!(disc.backward(&g, None, 1.0), Err(Error::MissingCache)));
        let cache = disc.forward_cached(&g).unwrap();
        let grads = disc.backward(&g, Some(&cache), 0.0).unwrap();
        assert!(grads.weights.params().iter().all(|p| p.iter().all(|v| *v == 0.0)));
        assert!(grads.inputs.node.data().iter().all(|v| *v == 0.0));
        assert!(grads.inputs.edge.data().iter().all(|v| *v == 0.0));
    }

    fn rel_err(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for (p, seed) in [(1usize, 1u64), (2, 2), (5, 3)] {
            let disc = small_disc(seed + 10);
            let g = build_graph(&random_scene(p, seed)).unwrap();
            let logit = |d: &Discriminator, g: &SceneGraph| d.forward_cached(g).unwrap().logit;
            let cache = disc.forward_cached(&g).unwrap();
            let mut grads = disc.zeros_like();
            let inputs = disc
                .backward_logit(&g, Some(&cache), 1.0, Some(&mut grads), true)
                .unwrap()
                .unwrap();
            let shapes = disc.param_shapes();
            for _ in 0..60 {
                let t = rng.gen_range(0..shapes.len());
                let i = rng.gen_range(0..shapes[t]);
                let mut plus = disc.clone();
                plus.params_mut()[t][i] += h;
                let mut minus = disc.clone();
                minus.params_mut()[t][i] -= h;
                let num = (logit(&plus, &g) - logit(&minus, &g)) / (2.0 * h);
                let ana = grads.params()[t][i];
                assert!(rel_err(ana, num) < 1e-4, "P={p} param {t}/{i}: {ana} vs {num}");
            }
            for _ in 0..20 {
                let k = rng.gen_range(0..g.node_features.data().len());
                let (mut gp, mut gm) = (g.clone(), g.clone());
                gp.node_features.data_mut()[k] += h;
                gm.node_features.data_mut()[k] -= h;
                let num = (logit(&disc, &gp) - logit(&disc, &gm)) / (2.0 * h);
                assert!(rel_err(inputs.node.data()[k], num) < 1e-4, "P={p} node {k}");
            }
            for _ in 0..20.min(g.edge_features.data().len()) {
                let k = rng.gen_range(0..g.edge_features.data().len());
                let (mut gp, mut gm) = (g.clone(), g.clone());
                gp.edge_features.data_mut()[k] += h;
                gm.edge_features.data_mut()[k] -= h;
                let num = (logit(&disc, &gp) - logit(&disc, &gm)) / (2.0 * h);
                assert!(rel_err(inputs.edge.data()[k], num) < 1e-4, "P={p} edge {k}");
            }
        }
    }

    #[test]
    fn probability_backward_chains_through_sigmoid() {
        let disc = small_disc(21);
        let g = build_graph(&random_scene(3, 4)).unwrap();
        let cache = disc.forward_cached(&g).unwrap();
        let by_prob = disc.backward(&g, Some(&cache), 2.0).unwrap();
        let mut by_logit = disc.zeros_like();
        let dz = 2.0 * cache.prob * (1.0 - cache.prob);
        disc.backward_logit(&g, Some(&cache), dz, Some(&mut by_logit), false)
            .unwrap();
        assert_eq!(by_prob.weights.params(), by_logit.params());
    }

    #[test]
    fn weights_roundtrip_through_file() {
        let mut disc = small_disc(12);
        disc.trained = true;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        disc.save(&path).unwrap();
        let back = Discriminator::load(&path).unwrap();
        assert_eq!(back, disc);
        assert_eq!(back.digest(), disc.digest());
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            Discriminator::load(&path),
            Err(Error::SchemaVersionMismatch { found: 9, .. })
        ));
    }

    fn fitted_disc(seed: u64, graphs: &[SceneGraph]) -> Discriminator {
        let mut disc = small_disc(seed);
        disc.input_norm = InputNorm::fit(graphs, NODE_FEATURE_DIM, EDGE_FEATURE_DIM).unwrap();
        disc
    }

    #[test]
    fn input_norm_standardizes_training_features() {
        let graphs: Vec<SceneGraph> = (0..6)
            .map(|k| build_graph(&random_scene(2 + k % 3, 40 + k as u64)).unwrap())
            .collect();
        let norm = InputNorm::fit(&graphs, NODE_FEATURE_DIM, EDGE_FEATURE_DIM).unwrap();
        let rows: Vec<Vec<f64>> = graphs
            .iter()
            .flat_map(|g| {
                let n = norm.nodes(&g.node_features);
                (0..n.rows()).map(move |r| n.row(r).to_vec())
            })
            .collect();
        for c in 0..NODE_FEATURE_DIM {
            let n = rows.len() as f64;
            let mean = rows.iter().map(|r| r[c]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9, "column {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-9, "column {c} variance {var}");
        }
        assert!(matches!(
            InputNorm::fit(std::iter::empty(), NODE_FEATURE_DIM, EDGE_FEATURE_DIM),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn input_gradients_include_normalization() {
        let graphs: Vec<SceneGraph> = (0..4).map(|k| build_graph(&random_scene(3, 60 + k)).unwrap()).collect();
        let disc = fitted_disc(31, &graphs);
        let g = &graphs[1];
        let cache = disc.forward_cached(g).unwrap();
        let inputs = disc.backward_logit(g, Some(&cache), 1.0, None, true).unwrap().unwrap();
        let logit = |g: &SceneGraph| disc.forward_cached(g).unwrap().logit;
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let k = rng.gen_range(0..g.node_features.data().len());
            let (mut gp, mut gm) = (g.clone(), g.clone());
            gp.node_features.data_mut()[k] += h;
            gm.node_features.data_mut()[k] -= h;
            let num = (logit(&gp) - logit(&gm)) / (2.0 * h);
            assert!(rel_err(inputs.node.data()[k], num) < 1e-4, "node {k}");
            let k = rng.gen_range(0..g.edge_features.data().len());
            let (mut gp, mut gm) = (g.clone(), g.clone());
            gp.edge_features.data_mut()[k] += h;
            gm.edge_features.data_mut()[k] -= h;
            let num = (logit(&gp) - logit(&gm)) / (2.0 * h);
            assert!(rel_err(inputs.edge.data()[k], num) < 1e-4, "edge {k}");
        }
    }

    #[test]
    fn weights_roundtrip_keeps_input_norm() {
        let graphs: Vec<SceneGraph> = (0..3).map(|k| build_graph(&random_scene(2, 80 + k)).unwrap()).collect();
        let disc = fitted_disc(13, &graphs);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        disc.save(&path).unwrap();
        let back = Discriminator::load(&path).unwrap();
        assert_eq!(back.input_norm, disc.input_norm);
        assert_eq!(back.forward(&graphs[0]).unwrap(), disc.forward(&graphs[0]).unwrap());
    }
}
