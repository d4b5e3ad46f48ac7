//! Discriminator training, evaluation, and discriminator-guided layout refinement.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{OrientedBox, PointCloud, Rotation3, Vec3};
use crate::metrics::{max_support_gap, penetration_volume, MetricsConfig};
use crate::neural::{bce, AdamState, Matrix};
use crate::pna::{compute_delta, Discriminator, InputNorm, PnaConfig};
use crate::scenegraph::{build_graph, corner_offsets, NodeKind, Scene, SceneGraph, EDGE_DIST_DIM};

#[derive(Debug, Clone)]
pub struct LabeledGraph {
    pub graph: SceneGraph,
    /// 1 for plausible (real), 0 for implausible.
    pub target: f64,
    /// Source scene, needed for training-time augmentation.
    pub scene: Option<Scene>,
}

impl LabeledGraph {
    pub fn from_scene(scene: &Scene) -> Result<Self> {
        let target = scene
            .label
            .target()
            .ok_or_else(|| Error::BadConfig("training scenes must be labeled".into()))?;
        Ok(Self {
            graph: build_graph(scene)?,
            target,
            scene: Some(scene.clone()),
        })
    }

    pub fn from_graph(graph: SceneGraph, target: f64) -> Self {
        Self {
            graph,
            target,
            scene: None,
        }
    }
}

/// Label-preserving random view of a scene: a global yaw rotation plus an
/// independent horizontal shift of at most `jitter` per object, with all body
/// segments shifted together. Vertical structure is untouched.
pub fn augment_scene<R: Rng + ?Sized>(scene: &Scene, jitter: f64, rng: &mut R) -> Scene {
    let yaw = Rotation3::about_z(rng.gen_range(0.0..std::f64::consts::TAU));
    let mut out = scene.transformed(&yaw, Vec3::ZERO);
    if jitter > 0.0 {
        let shift = |rng: &mut R| Vec3::new(rng.gen_range(-jitter..=jitter), rng.gen_range(-jitter..=jitter), 0.0);
        let body = shift(rng);
        for el in &mut out.elements {
            let t = match el.kind {
                k if k.is_floor() => continue,
                NodeKind::Object(_) => shift(rng),
                NodeKind::BodySegment(_) => body,
            };
            el.bbox.center += t;
            if let Some(cloud) = &el.cloud {
                let pts = cloud.points().iter().map(|p| *p + t).collect();
                el.cloud = Some(PointCloud::new(pts).expect("translation keeps a valid cloud"));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Weight of the adversarial BCE term.
    pub lambda_gan: f64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub hidden: usize,
    /// Number of PNA layers.
    pub layers: usize,
    pub schedule: LrSchedule,
    /// Standardize node and edge features with training-split statistics.
    pub normalize_inputs: bool,
    /// Train on a fresh random view (see [`augment_scene`]) of each scene every epoch.
    pub augment: bool,
    /// Per-object horizontal jitter bound in meters.
    pub jitter: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            lambda_gan: 0.1,
            patience: 10,
            hidden: 64,
            layers: 4,
            schedule: LrSchedule::WarmupCosine { warmup_epochs: 1 },
            normalize_inputs: false,
            augment: true,
            jitter: 0.02,
        }
    }
}

/// Learning-rate schedule over optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Linear warmup, then cosine decay to zero at the final epoch.
    WarmupCosine {
        warmup_epochs: usize,
    },
}

impl LrSchedule {
    /// Rate at fractional epoch `t` (steps taken divided by steps per epoch).
    pub fn rate(self, base: f64, t: f64, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::WarmupCosine { warmup_epochs } => {
                let warm = if warmup_epochs == 0 {
                    1.0
                } else {
                    (t / warmup_epochs as f64).min(1.0)
                };
                let progress = (t / epochs as f64).min(1.0);
                base * warm * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::BadConfig(format!("lr must be non-negative, got {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.layers == 0 || self.hidden == 0 {
            return Err(Error::BadConfig(
                "epochs, batch_size, layers and hidden must be at least 1".into(),
            ));
        }
        if !(self.lambda_gan > 0.0 && self.lambda_gan.is_finite()) {
            return Err(Error::BadConfig("lambda_gan must be positive".into()));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::BadConfig(format!(
                "jitter must be non-negative, got {}",
                self.jitter
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept (lowest validation loss, or training loss without a validation set).
    pub best_epoch: usize,
    pub delta: f64,
    pub config: TrainConfig,
    pub train_size: usize,
    pub val_size: usize,
    pub weights_path: Option<String>,
    pub weights_sha256: Option<String>,
    pub wall_time_secs: f64,
}

fn check_labels(data: &[LabeledGraph]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("training split is empty".into()));
    }
    let pos = data.iter().any(|d| d.target > 0.5);
    let neg = data.iter().any(|d| d.target <= 0.5);
    if !(pos && neg) {
        return Err(Error::SingleClassDataset);
    }
    Ok(())
}

fn view_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ ((epoch as u64) << 40) ^ index as u64
}

/// Minimizes mean BCE with Adam; deterministic for a fixed seed. Returns the
/// best-validation weights.
pub fn train(
    train_set: &[LabeledGraph],
    val_set: &[LabeledGraph],
    cfg: &TrainConfig,
) -> Result<(Discriminator, TrainReport)> {
    cfg.validate()?;
    check_labels(train_set)?;
    let start = Instant::now();
    let delta = compute_delta(train_set.iter().map(|d| &d.graph))?;
    if delta <= 0.0 {
        return Err(Error::BadConfig(
            "training graphs have no edges; degree normalizer is zero".into(),
        ));
    }
    let pna = PnaConfig {
        hidden: cfg.hidden,
        delta,
        layers: cfg.layers,
        ..PnaConfig::default()
    };
    let mut disc = Discriminator::new(pna, cfg.seed)?;
    if cfg.normalize_inputs {
        disc.input_norm = InputNorm::fit(train_set.iter().map(|d| &d.graph), pna.in_dim, pna.edge_dim)?;
    }
    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size) as f64;
    let mut adam = AdamState::new(&disc.param_shapes());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_5417);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut best = (f64::INFINITY, 0usize, disc.clone());
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut since_best = 0;
    for epoch in 1..=cfg.epochs {
        for k in (1..order.len()).rev() {
            order.swap(k, rng.gen_range(0..=k));
        }
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let scale = cfg.lambda_gan / batch.len() as f64;
            let parts: Vec<(Discriminator, f64, bool)> = batch
                .par_iter()
                .map(|&i| {
                    let item = &train_set[i];
                    let view = match (&item.scene, cfg.augment) {
                        (Some(scene), true) => {
                            let mut rng = ChaCha8Rng::seed_from_u64(view_seed(cfg.seed, epoch, i));
                            Some(build_graph(&augment_scene(scene, cfg.jitter, &mut rng))?)
                        }
                        _ => None,
                    };
                    let graph = view.as_ref().unwrap_or(&item.graph);
                    let cache = disc.forward_cached(graph)?;
                    let mut grads = disc.zeros_like();
                    let dlogit = scale * (cache.prob - item.target);
                    disc.backward_logit(graph, Some(&cache), dlogit, Some(&mut grads), false)?;
                    Ok((
                        grads,
                        bce(cache.prob, item.target),
                        (cache.prob >= 0.5) == (item.target > 0.5),
                    ))
                })
                .collect::<Result<_>>()?;
            let mut total = disc.zeros_like();
            for (g, loss, ok) in &parts {
                total.accumulate(g);
                loss_sum += loss;
                correct += usize::from(*ok);
            }
            let grads = total.params();
            let lr = cfg
                .schedule
                .rate(cfg.lr, adam.steps_taken() as f64 / steps_per_epoch, cfg.epochs);
            adam.step(&mut disc.params_mut(), &grads, lr)?;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::BadConfig(format!("training loss diverged at epoch {epoch}")));
        }
        let val = if val_set.is_empty() {
            None
        } else {
            Some(evaluate(&disc, val_set)?)
        };
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            train_accuracy: correct as f64 / train_set.len() as f64,
            val_loss: val.as_ref().map(|v| v.loss),
            val_accuracy: val.as_ref().map(|v| v.accuracy),
        });
        let score = val.map(|v| v.loss).unwrap_or(train_loss);
        if score < best.0 {
            best = (score, epoch, disc.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                break;
            }
        }
    }
    let (_, best_epoch, mut disc) = best;
    disc.trained = true;
    let report = TrainReport {
        epochs,
        best_epoch,
        delta,
        config: *cfg,
        train_size: train_set.len(),
        val_size: val_set.len(),
        weights_path: None,
        weights_sha256: None,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok((disc, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    pub accuracy: f64,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
    pub mean_score_real: Option<f64>,
    pub mean_score_fake: Option<f64>,
    pub loss: f64,
}

/// Mann–Whitney AUC: probability a random positive outscores a random negative, ties counting half.
pub fn auc(scores: &[f64], targets: &[f64]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let n_pos = targets.iter().filter(|t| **t > 0.5).count() as f64;
    let n_neg = targets.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return None;
    }
    let rank_sum: f64 = ranks
        .iter()
        .zip(targets)
        .filter(|(_, t)| **t > 0.5)
        .map(|(r, _)| r)
        .sum();
    Some((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// Accuracy (a score of exactly 0.5 counts as real), AUC and mean scores.
pub fn evaluate_scores(scores: &[f64], targets: &[f64]) -> Result<EvalReport> {
    if scores.is_empty() {
        return Err(Error::EmptyDataset("nothing to evaluate".into()));
    }
    if scores.len() != targets.len() {
        return Err(Error::LengthMismatch(format!(
            "{} scores for {} targets",
            scores.len(),
            targets.len()
        )));
    }
    let n = scores.len() as f64;
    let correct = scores
        .iter()
        .zip(targets)
        .filter(|(p, t)| (**p >= 0.5) == (**t > 0.5))
        .count();
    let mean = |want: bool| {
        let v: Vec<f64> = scores
            .iter()
            .zip(targets)
            .filter(|(_, t)| (**t > 0.5) == want)
            .map(|(p, _)| *p)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Ok(EvalReport {
        count: scores.len(),
        accuracy: correct as f64 / n,
        auc: auc(scores, targets),
        mean_score_real: mean(true),
        mean_score_fake: mean(false),
        loss: scores.iter().zip(targets).map(|(p, t)| bce(*p, *t)).sum::<f64>() / n,
    })
}

pub fn evaluate(disc: &Discriminator, data: &[LabeledGraph]) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("evaluation set is empty".into()));
    }
    let scores: Vec<f64> = data.par_iter().map(|d| disc.forward(&d.graph)).collect::<Result<_>>()?;
    let targets: Vec<f64> = data.iter().map(|d| d.target).collect();
    evaluate_scores(&scores, &targets)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub steps: usize,
    /// Gradient-ascent step size.
    pub step_size: f64,
    /// Per-step cap on each element's center displacement (m).
    pub max_translation: f64,
    /// Per-step cap on each object's yaw change (rad).
    pub max_yaw: f64,
    /// Weight of `log D` in the objective.
    pub lambda: f64,
    /// Quadratic pull toward the starting layout; 0 disables.
    pub anchor_weight: f64,
    /// Stop once the score reaches this value.
    pub stop_score: Option<f64>,
    pub record_metrics: bool,
    pub metrics: MetricsConfig,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            step_size: 0.01,
            max_translation: 0.02,
            max_yaw: 0.05,
            lambda: 1.0,
            anchor_weight: 0.0,
            stop_score: Some(0.95),
            record_metrics: true,
            metrics: MetricsConfig::default(),
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.step_size, self.max_translation, self.max_yaw, self.lambda];
        if self.steps == 0 || positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) || !(self.anchor_weight >= 0.0) {
            return Err(Error::BadConfig(
                "refinement needs steps >= 1 and positive step sizes".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub score: f64,
    pub penetration_volume: Option<f64>,
    pub max_support_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    pub scene: Scene,
    pub trajectory: Vec<TrajectoryPoint>,
    pub initial_score: f64,
    pub final_score: f64,
    /// Set when no iterate beat the input; `scene` is then the unchanged input.
    pub no_improvement: bool,
}

/// Which layout parameters an element exposes to refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Fixed,
    Translation,
    TranslationYaw,
}

pub fn param_kind(kind: NodeKind) -> ParamKind {
    match kind {
        NodeKind::Object(_) if kind.is_floor() => ParamKind::Fixed,
        NodeKind::Object(_) => ParamKind::TranslationYaw,
        NodeKind::BodySegment(_) => ParamKind::Translation,
    }
}

/// Objects get a yaw-only rotation (their nearest yaw); segments keep theirs.
pub fn project_to_yaw(scene: &Scene) -> (Scene, Vec<f64>) {
    let mut out = scene.clone();
    let mut yaws = vec![0.0; scene.len()];
    for (i, e) in out.elements.iter_mut().enumerate() {
        if param_kind(e.kind) == ParamKind::TranslationYaw {
            yaws[i] = e.bbox.rotation.nearest_yaw();
            let r = Rotation3::about_z(yaws[i]);
            if r != e.bbox.rotation {
                e.bbox.rotation = r;
                e.cloud = None;
            }
        }
    }
    (out, yaws)
}

/// `z × v`, the derivative of `Rz(ψ)·x` with respect to ψ when `v = Rz(ψ)·x`.
fn yaw_tangent(v: Vec3) -> Vec3 {
    Vec3::new(-v.y, v.x, 0.0)
}

fn row_vec(row: &[f64], k: usize) -> Vec3 {
    Vec3::new(row[3 * k], row[3 * k + 1], row[3 * k + 2])
}

/// Chains node/edge feature gradients to each element's center and yaw.
///
/// Assumes object rotations are pure yaw rotations, as produced by [`project_to_yaw`].
pub fn layout_gradient(scene: &Scene, graph: &SceneGraph, g_node: &Matrix, g_edge: &Matrix) -> (Vec<Vec3>, Vec<f64>) {
    let p = scene.len();
    let boxes: Vec<&OrientedBox> = scene.elements.iter().map(|e| &e.bbox).collect();
    let offsets: Vec<[Vec3; 8]> = boxes.iter().map(|b| corner_offsets(b)).collect();
    let normals: Vec<[Vec3; 6]> = boxes.iter().map(|b| b.face_normals()).collect();
    let mut dc = vec![Vec3::ZERO; p];
    let mut dyaw = vec![0.0; p];

    // Node features: corner offsets plus the center relative to the mean center.
    let mut total = Vec3::ZERO;
    for k in 0..p {
        let row = g_node.row(k);
        for c in 0..8 {
            let g = row_vec(row, c);
            dc[k] += g;
            total += g;
            dyaw[k] += g.dot(yaw_tangent(offsets[k][c]));
        }
    }
    let mean = total * (1.0 / p as f64);
    for d in &mut dc {
        *d -= mean;
    }

    for (e, &(src, dst)) in graph.edge_index.iter().enumerate() {
        let row = g_edge.row(e);
        let delta = boxes[src].center - boxes[dst].center;
        for i in 0..8 {
            for j in 0..8 {
                let u = delta + offsets[src][i] - offsets[dst][j];
                let d = u.norm();
                if d == 0.0 {
                    continue;
                }
                let g = u * (row[8 * i + j] / d);
                dc[src] += g;
                dc[dst] -= g;
                dyaw[src] += g.dot(yaw_tangent(offsets[src][i]));
                dyaw[dst] -= g.dot(yaw_tangent(offsets[dst][j]));
            }
        }
        let cross = &row[EDGE_DIST_DIM..];
        for a in 0..6 {
            for b in 0..6 {
                let gv = row_vec(cross, 6 * a + b);
                let (na, nb) = (normals[src][a], normals[dst][b]);
                dyaw[src] += nb.cross(gv).dot(yaw_tangent(na));
                dyaw[dst] += gv.cross(na).dot(yaw_tangent(nb));
            }
        }
    }
    (dc, dyaw)
}

fn apply_layout(base: &Scene, centers: &[Vec3], yaws: &[f64]) -> Scene {
    let mut out = base.clone();
    for (i, e) in out.elements.iter_mut().enumerate() {
        match param_kind(e.kind) {
            ParamKind::Fixed => {}
            ParamKind::Translation => e.bbox.center = centers[i],
            ParamKind::TranslationYaw => {
                e.bbox.center = centers[i];
                e.bbox.rotation = Rotation3::about_z(yaws[i]);
            }
        }
    }
    out
}

fn clip(v: Vec3, max: f64) -> Vec3 {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

/// Gradient ascent on `λ·log D` over object centers/yaws and segment
/// translations. Returns the best-scoring iterate, or the unchanged input
/// flagged `no_improvement` if nothing beat the input's score.
pub fn refine(scene: &Scene, disc: &Discriminator, cfg: &RefineConfig) -> Result<RefineOutcome> {
    if !disc.trained {
        return Err(Error::UntrainedDiscriminator);
    }
    cfg.validate()?;
    scene.validate()?;
    let initial_score = disc.forward(&build_graph(scene)?)?;
    let (start, start_yaws) = project_to_yaw(scene);
    let start_centers: Vec<Vec3> = start.elements.iter().map(|e| e.bbox.center).collect();
    let kinds: Vec<ParamKind> = start.elements.iter().map(|e| param_kind(e.kind)).collect();
    let mut centers = start_centers.clone();
    let mut yaws = start_yaws.clone();

    let mut trajectory = Vec::with_capacity(cfg.steps + 1);
    let mut best: Option<(f64, Vec<Vec3>, Vec<f64>)> = None;
    for step in 0..=cfg.steps {
        let current = apply_layout(&start, &centers, &yaws);
        let graph = build_graph(&current)?;
        let cache = disc.forward_cached(&graph)?;
        let score = cache.prob;
        trajectory.push(TrajectoryPoint {
            step,
            score,
            penetration_volume: cfg
                .record_metrics
                .then(|| penetration_volume(&current, &cfg.metrics.mc)),
            max_support_gap: cfg.record_metrics.then(|| max_support_gap(&current)),
        });
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, centers.clone(), yaws.clone()));
        }
        if step == cfg.steps || cfg.stop_score.is_some_and(|s| score >= s) {
            break;
        }
        // d(λ·log σ(z))/dz = λ·(1 − σ(z))
        let dlogit = cfg.lambda * (1.0 - score);
        let grads = disc
            .backward_logit(&graph, Some(&cache), dlogit, None, true)?
            .expect("input gradients requested");
        let (dc, dyaw) = layout_gradient(&current, &graph, &grads.node, &grads.edge);
        for i in 0..current.len() {
            if kinds[i] == ParamKind::Fixed {
                continue;
            }
            let g = dc[i] - (centers[i] - start_centers[i]) * cfg.anchor_weight;
            centers[i] += clip(g * cfg.step_size, cfg.max_translation);
            if kinds[i] == ParamKind::TranslationYaw {
                let gy = dyaw[i] - (yaws[i] - start_yaws[i]) * cfg.anchor_weight;
                yaws[i] += (gy * cfg.step_size).clamp(-cfg.max_yaw, cfg.max_yaw);
            }
        }
    }

    let (best_score, best_centers, best_yaws) = best.expect("at least one iterate");
    if best_score < initial_score {
        return Ok(RefineOutcome {
            scene: scene.clone(),
            trajectory,
            initial_score,
            final_score: initial_score,
            no_improvement: true,
        });
    }
    let mut refined = apply_layout(&start, &best_centers, &best_yaws);
    for (i, e) in refined.elements.iter_mut().enumerate() {
        if e.bbox != scene.elements[i].bbox {
            e.cloud = None;
        }
    }
    Ok(RefineOutcome {
        scene: refined,
        trajectory,
        initial_score,
        final_score: best_score,
        no_improvement: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::scenegraph::{BodySegment, Label, ObjectClass, SceneElement};

    fn toy_scene(seed: u64) -> Scene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut elements = vec![SceneElement::new(
            NodeKind::Object(ObjectClass::Floor),
            OrientedBox::axis_aligned(Vec3::new(0.0, 0.0, -0.05), Vec3::new(3.0, 3.0, 0.05)),
        )];
        for class in [ObjectClass::Chair, ObjectClass::Table] {
            let h = Vec3::new(
                rng.gen_range(0.2..0.5),
                rng.gen_range(0.2..0.5),
                rng.gen_range(0.2..0.4),
            );
            let c = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), h.z);
            elements.push(SceneElement::new(
                NodeKind::Object(class),
                OrientedBox::new(c, h, Rotation3::about_z(rng.gen_range(-3.0..3.0))),
            ));
        }
        let seg_rot = Rotation3::about_z(0.4);
        elements.push(SceneElement::new(
            NodeKind::BodySegment(BodySegment::LeftFoot),
            OrientedBox::new(Vec3::new(0.3, -0.2, 0.04), Vec3::new(0.05, 0.12, 0.04), seg_rot),
        ));
        Scene::new(elements, Label::Implausible).unwrap()
    }

    fn labeled(seed: u64, target: f64) -> LabeledGraph {
        let mut s = toy_scene(seed);
        s.label = if target > 0.5 {
            Label::Plausible
        } else {
            Label::Implausible
        };
        LabeledGraph::from_scene(&s).unwrap()
    }

    fn small_train_config() -> TrainConfig {
        TrainConfig {
            lr: 1e-3,
            epochs: 200,
            batch_size: 2,
            seed: 3,
            lambda_gan: 1.0,
            patience: 0,
            hidden: 8,
            layers: 4,
            schedule: LrSchedule::Constant,
            normalize_inputs: false,
            augment: false,
            jitter: 0.0,
        }
    }

    #[test]
    fn two_graphs_are_memorized() {
        let data = vec![labeled(1, 1.0), labeled(2, 0.0)];
        let (disc, report) = train(&data, &[], &small_train_config()).unwrap();
        let loss = data
            .iter()
            .map(|d| bce(disc.forward(&d.graph).unwrap(), d.target))
            .sum::<f64>()
            / 2.0;
        assert!(loss < 0.05, "loss {loss}");
        assert!(disc.trained);
        assert!(report.epochs.iter().all(|e| e.train_loss.is_finite()));
    }

    #[test]
    fn zero_lr_keeps_initial_weights() {
        let data = vec![labeled(1, 1.0), labeled(2, 0.0)];
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 3,
            ..small_train_config()
        };
        let (disc, report) = train(&data, &[], &cfg).unwrap();
        let init = Discriminator::new(
            PnaConfig {
                hidden: 8,
                delta: report.delta,
                ..PnaConfig::default()
            },
            cfg.seed,
        )
        .unwrap();
        assert_eq!(disc.params(), init.params());
    }

    #[test]
    fn training_is_deterministic() {
        let data = vec![labeled(1, 1.0), labeled(2, 0.0), labeled(3, 1.0)];
        let cfg = TrainConfig {
            epochs: 4,
            ..small_train_config()
        };
        let (a, _) = train(&data, &data[..1], &cfg).unwrap();
        let (b, _) = train(&data, &data[..1], &cfg).unwrap();
        assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let s = LrSchedule::WarmupCosine { warmup_epochs: 2 };
        assert_eq!(s.rate(1.0, 0.0, 10), 0.0);
        // Halfway through warmup at 10% progress: 0.5 · (1 + cos(0.1π)) / 2.
        let expected = 0.5 * 0.5 * (1.0 + (0.1 * std::f64::consts::PI).cos());
        assert!((s.rate(1.0, 1.0, 10) - expected).abs() < 1e-15);
        assert!((s.rate(1.0, 5.0, 10) - 0.5).abs() < 1e-15);
        assert!(s.rate(1.0, 10.0, 10).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for k in 2..=10 {
            let r = s.rate(1.0, k as f64, 10);
            assert!(r <= prev);
            prev = r;
        }
        assert_eq!(LrSchedule::Constant.rate(0.3, 7.0, 10), 0.3);
    }

    #[test]
    fn augmented_views_are_seeded_and_keep_heights() {
        let scene = toy_scene(4);
        let view = |seed| augment_scene(&scene, 0.05, &mut ChaCha8Rng::seed_from_u64(seed));
        assert_eq!(view(1), view(1));
        assert_ne!(view(1), view(2));
        let v = view(3);
        assert_eq!(v.label, scene.label);
        for (a, b) in v.elements.iter().zip(&scene.elements) {
            assert_eq!(a.kind, b.kind);
            assert!((a.bbox.center.z - b.bbox.center.z).abs() < 1e-12);
            assert!((a.bbox.min_z() - b.bbox.min_z()).abs() < 1e-12);
            assert_eq!(a.bbox.half_extents, b.bbox.half_extents);
        }
        // The floor only rotates about the vertical axis through the origin.
        let floor = scene.floor_index().unwrap();
        let (a, b) = (v.elements[floor].bbox.center, scene.elements[floor].bbox.center);
        assert!((a.x.hypot(a.y) - b.x.hypot(b.y)).abs() < 1e-12);
    }

    #[test]
    fn dataset_errors() {
        assert!(matches!(
            train(&[], &[], &small_train_config()),
            Err(Error::EmptyDataset(_))
        ));
        let one = vec![labeled(1, 1.0), labeled(2, 1.0)];
        assert!(matches!(
            train(&one, &[], &small_train_config()),
            Err(Error::SingleClassDataset)
        ));
    }

    #[test]
    fn auc_matches_pairwise_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let scores: Vec<f64> = (0..20).map(|_| (rng.gen_range(0..8) as f64) / 8.0).collect();
        let targets: Vec<f64> = (0..20).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..20 {
            for j in 0..20 {
                if targets[i] == 1.0 && targets[j] == 0.0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        assert!((auc(&scores, &targets).unwrap() - wins / pairs).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_constant_scorers() {
        let targets = [1.0, 1.0, 1.0, 0.0];
        let perfect = [1.0 - 1e-7, 1.0 - 1e-7, 1.0 - 1e-7, 1e-7];
        let r = evaluate_scores(&perfect, &targets).unwrap();
        assert_eq!((r.accuracy, r.auc), (1.0, Some(1.0)));
        let r = evaluate_scores(&[0.5; 4], &targets).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.auc, Some(0.5));
        assert!(matches!(evaluate_scores(&[], &[]), Err(Error::EmptyDataset(_))));
    }

    /// Scalar probe `f = Σ w·features`, differentiated both analytically and numerically.
    #[test]
    fn layout_jacobian_matches_finite_differences() {
        let (scene, _) = project_to_yaw(&toy_scene(5));
        let g = build_graph(&scene).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut wn = Matrix::zeros(g.node_features.rows(), g.node_features.cols());
        wn.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let mut we = Matrix::zeros(g.edge_features.rows(), g.edge_features.cols());
        we.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let f = |s: &Scene| {
            let g = build_graph(s).unwrap();
            let a: f64 = g.node_features.data().iter().zip(wn.data()).map(|(x, w)| x * w).sum();
            let b: f64 = g.edge_features.data().iter().zip(we.data()).map(|(x, w)| x * w).sum();
            a + b
        };
        let (dc, dyaw) = layout_gradient(&scene, &g, &wn, &we);
        let centers: Vec<Vec3> = scene.elements.iter().map(|e| e.bbox.center).collect();
        let yaws: Vec<f64> = scene.elements.iter().map(|e| e.bbox.rotation.nearest_yaw()).collect();
        let h = 1e-6;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        for i in 1..scene.len() {
            for axis in 0..3 {
                let mut step = Vec3::ZERO.to_array();
                step[axis] = h;
                let t = Vec3::new(step[0], step[1], step[2]);
                let mut plus = centers.clone();
                plus[i] += t;
                let mut minus = centers.clone();
                minus[i] -= t;
                let num =
                    (f(&apply_layout(&scene, &plus, &yaws)) - f(&apply_layout(&scene, &minus, &yaws))) / (2.0 * h);
                assert!(
                    rel(dc[i][axis], num) < 1e-3,
                    "center {i}/{axis}: {} vs {num}",
                    dc[i][axis]
                );
            }
            if param_kind(scene.elements[i].kind) == ParamKind::TranslationYaw {
                let mut plus = yaws.clone();
                plus[i] += h;
                let mut minus = yaws.clone();
                minus[i] -= h;
                let num = (f(&apply_layout(&scene, &centers, &plus)) - f(&apply_layout(&scene, &centers, &minus)))
                    / (2.0 * h);
                assert!(rel(dyaw[i], num) < 1e-3, "yaw {i}: {} vs {num}", dyaw[i]);
            }
        }
    }

    #[test]
    fn refine_requires_trained_discriminator() {
        let disc = Discriminator::new(
            PnaConfig {
                hidden: 8,
                ..PnaConfig::default()
            },
            0,
        )
        .unwrap();
        assert!(matches!(
            refine(&toy_scene(1), &disc, &RefineConfig::default()),
            Err(Error::UntrainedDiscriminator)
        ));
    }

    #[test]
    fn refine_never_lowers_the_score_or_changes_extents() {
        let data = vec![labeled(1, 1.0), labeled(2, 0.0)];
        let (disc, _) = train(
            &data,
            &[],
            &TrainConfig {
                epochs: 20,
                ..small_train_config()
            },
        )
        .unwrap();
        let scene = toy_scene(9);
        let cfg = RefineConfig {
            steps: 10,
            ..RefineConfig::default()
        };
        let out = refine(&scene, &disc, &cfg).unwrap();
        assert!(out.no_improvement || out.final_score >= out.initial_score);
        assert_eq!(out.scene.len(), scene.len());
        for (a, b) in out.scene.elements.iter().zip(&scene.elements) {
            assert_eq!(a.kind, b.kind);
            assert_eq!(a.bbox.half_extents, b.bbox.half_extents);
        }
        assert_eq!(out.scene.elements[0], scene.elements[0]);
        assert!(!out.trajectory.is_empty());
    }
}
