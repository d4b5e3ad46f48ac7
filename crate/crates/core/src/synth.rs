//! Synthetic indoor scenes: furniture resting on a floor plus a standing or
//! seated human made of segment boxes, and controlled corruptions that turn
//! them into implausible counterparts.

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{boxes_intersect, mc_overlap_volume, MonteCarlo, OrientedBox, PointCloud, Rotation3, Vec3};
use crate::metrics::{is_gravity_supported, volume_below};
use crate::scenegraph::{BodySegment, HumanPose, Label, NodeKind, ObjectClass, Scene, SceneElement};

pub const SYNTH_SCHEMA_VERSION: u32 = 1;

/// Clearance kept between separately placed pieces.
const PLACEMENT_MARGIN: f64 = 0.05;
const PENETRATE_STEP: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    OnFloor,
    /// On top of a previously placed floor piece.
    OnSurface,
}

/// Per-class size distribution (full extents, meters) and placement rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub class: ObjectClass,
    pub size_min: Vec3,
    pub size_max: Vec3,
    pub placement: Placement,
}

impl ClassSpec {
    fn new(class: ObjectClass, min: [f64; 3], max: [f64; 3]) -> Self {
        Self {
            class,
            size_min: Vec3::new(min[0], min[1], min[2]),
            size_max: Vec3::new(max[0], max[1], max[2]),
            placement: Placement::OnFloor,
        }
    }

    pub fn defaults() -> Vec<ClassSpec> {
        vec![
            ClassSpec::new(ObjectClass::Chair, [0.45, 0.45, 0.42], [0.55, 0.55, 0.50]),
            ClassSpec::new(ObjectClass::Table, [0.80, 0.60, 0.70], [1.40, 0.90, 0.78]),
            ClassSpec::new(ObjectClass::Sofa, [1.60, 0.80, 0.40], [2.20, 1.00, 0.48]),
            ClassSpec::new(ObjectClass::Bed, [1.40, 1.90, 0.45], [1.80, 2.10, 0.60]),
        ]
    }

    fn validate(&self) -> Result<()> {
        let ok = (0..3)
            .all(|i| self.size_min[i] > 0.0 && self.size_min[i] <= self.size_max[i] && self.size_max[i].is_finite());
        if !ok || self.class == ObjectClass::Floor {
            return Err(Error::BadConfig(format!(
                "invalid class spec for {}",
                self.class.name()
            )));
        }
        Ok(())
    }

    fn sample_half_extents(&self, rng: &mut impl Rng) -> Vec3 {
        let pick = |i: usize, rng: &mut dyn RngCore| {
            let (lo, hi) = (self.size_min[i], self.size_max[i]);
            if hi > lo {
                rng.gen_range(lo..hi) / 2.0
            } else {
                lo / 2.0
            }
        };
        Vec3::new(pick(0, rng), pick(1, rng), pick(2, rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseMode {
    Standing,
    Sitting,
    /// Each scene draws Standing or Sitting with equal probability.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    Float,
    Penetrate,
    Tilt,
    ScaleAnomaly,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 4] = [
        CorruptionKind::Float,
        CorruptionKind::Penetrate,
        CorruptionKind::Tilt,
        CorruptionKind::ScaleAnomaly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CorruptionKind::Float => "float",
            CorruptionKind::Penetrate => "penetrate",
            CorruptionKind::Tilt => "tilt",
            CorruptionKind::ScaleAnomaly => "scale_anomaly",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Index(usize),
    Random,
}

/// Requested corruption. Magnitude is meters for Float and Penetrate, radians
/// for Tilt, and an extent ratio for ScaleAnomaly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub magnitude: f64,
    pub target: Target,
}

/// Record of a corruption that was applied to a scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppliedCorruption {
    pub kind: CorruptionKind,
    pub magnitude: f64,
    pub target: usize,
    /// Element the target was pushed into (Penetrate only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighbor: Option<usize>,
}

/// Relative frequency of each corruption kind in generated datasets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionMix {
    pub float: f64,
    pub penetrate: f64,
    pub tilt: f64,
    pub scale_anomaly: f64,
}

impl Default for CorruptionMix {
    fn default() -> Self {
        Self {
            float: 0.25,
            penetrate: 0.25,
            tilt: 0.25,
            scale_anomaly: 0.25,
        }
    }
}

impl CorruptionMix {
    fn weights(&self) -> [f64; 4] {
        [self.float, self.penetrate, self.tilt, self.scale_anomaly]
    }

    fn validate(&self) -> Result<()> {
        let w = self.weights();
        let sum: f64 = w.iter().sum();
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::BadConfig(format!(
                "corruption probabilities {w:?} must be non-negative and sum to 1"
            )));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> CorruptionKind {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (kind, w) in CorruptionKind::ALL.iter().zip(self.weights()) {
            acc += w;
            if u < acc {
                return *kind;
            }
        }
        *CorruptionKind::ALL
            .iter()
            .zip(self.weights())
            .rev()
            .find(|(_, w)| *w > 0.0)
            .map(|(k, _)| k)
            .unwrap_or(&CorruptionKind::Float)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeRanges {
    pub float: [f64; 2],
    pub penetrate: [f64; 2],
    pub tilt: [f64; 2],
    /// The ratio is one of these two values, chosen uniformly.
    pub scale_choices: [f64; 2],
}

impl Default for MagnitudeRanges {
    fn default() -> Self {
        Self {
            float: [0.1, 0.5],
            penetrate: [0.1, 0.3],
            tilt: [0.3, 1.2],
            scale_choices: [0.3, 3.0],
        }
    }
}

impl MagnitudeRanges {
    fn validate(&self) -> Result<()> {
        let ranges = [self.float, self.penetrate, self.tilt];
        let ordered = ranges.iter().all(|r| r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite());
        let scales = self.scale_choices.iter().all(|s| *s > 0.0 && s.is_finite());
        if !(ordered && scales) {
            return Err(Error::BadConfig(
                "corruption magnitude ranges must be positive and ordered".into(),
            ));
        }
        Ok(())
    }

    fn sample(&self, kind: CorruptionKind, rng: &mut impl Rng) -> f64 {
        let range = match kind {
            CorruptionKind::Float => self.float,
            CorruptionKind::Penetrate => self.penetrate,
            CorruptionKind::Tilt => self.tilt,
            CorruptionKind::ScaleAnomaly => return self.scale_choices[rng.gen_range(0..2)],
        };
        if range[1] > range[0] {
            rng.gen_range(range[0]..range[1])
        } else {
            range[0]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub schema_version: u32,
    pub classes: Vec<ClassSpec>,
    /// Floor footprint (meters, x by y); the floor top is at z = 0.
    pub floor_size: [f64; 2],
    pub floor_thickness: f64,
    pub furniture_min: usize,
    pub furniture_max: usize,
    pub pose: PoseMode,
    pub count: usize,
    pub seed: u64,
    pub plausible_fraction: f64,
    pub corruption_mix: CorruptionMix,
    pub magnitudes: MagnitudeRanges,
    /// Represent segments by point clouds and fit their boxes.
    pub point_cloud: bool,
    pub max_attempts: usize,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            schema_version: SYNTH_SCHEMA_VERSION,
            classes: ClassSpec::defaults(),
            floor_size: [6.0, 6.0],
            floor_thickness: 0.1,
            furniture_min: 2,
            furniture_max: 4,
            pose: PoseMode::Mixed,
            count: 100,
            seed: 0,
            plausible_fraction: 0.5,
            corruption_mix: CorruptionMix::default(),
            magnitudes: MagnitudeRanges::default(),
            point_cloud: false,
            max_attempts: 1000,
            split: [0.7, 0.15, 0.15],
        }
    }
}

impl SynthConfig {
    /// The seeded 2000-scene configuration used by the acceptance suite.
    pub fn acceptance() -> Self {
        Self {
            count: 2000,
            seed: 20_240_917,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SYNTH_SCHEMA_VERSION {
            return Err(Error::SchemaVersionMismatch {
                what: "synth config".into(),
                expected: SYNTH_SCHEMA_VERSION,
                found: self.schema_version,
            });
        }
        if self.classes.is_empty() {
            return Err(Error::BadConfig("at least one furniture class is required".into()));
        }
        for c in &self.classes {
            c.validate()?;
        }
        if !self.classes.iter().any(|c| c.placement == Placement::OnFloor) {
            return Err(Error::BadConfig("at least one class must rest on the floor".into()));
        }
        if self.pose != PoseMode::Standing
            && !self
                .classes
                .iter()
                .any(|c| c.class.is_seat() && c.placement == Placement::OnFloor)
        {
            return Err(Error::BadConfig(
                "sitting poses need a seat class placed on the floor".into(),
            ));
        }
        if self.furniture_min == 0 || self.furniture_min > self.furniture_max {
            return Err(Error::BadConfig(
                "furniture count range must satisfy 1 <= min <= max".into(),
            ));
        }
        if !(self.floor_size.iter().all(|v| *v > 0.0 && v.is_finite()) && self.floor_thickness > 0.0) {
            return Err(Error::BadConfig("floor dimensions must be positive".into()));
        }
        if self.count == 0 {
            return Err(Error::BadConfig("count must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.plausible_fraction) {
            return Err(Error::BadConfig("plausible_fraction must lie in [0, 1]".into()));
        }
        let split_sum: f64 = self.split.iter().sum();
        if self.split.iter().any(|v| *v < 0.0) || (split_sum - 1.0).abs() > 1e-9 {
            return Err(Error::BadConfig(
                "split fractions must be non-negative and sum to 1".into(),
            ));
        }
        if self.max_attempts == 0 {
            return Err(Error::BadConfig("max_attempts must be positive".into()));
        }
        self.corruption_mix.validate()?;
        self.magnitudes.validate()
    }
}

fn floor_element(cfg: &SynthConfig) -> SceneElement {
    let t = ((cfg.floor_thickness / 2.0 / GRID).round() * GRID).max(GRID);
    SceneElement::new(
        NodeKind::Object(ObjectClass::Floor),
        OrientedBox::axis_aligned(
            Vec3::new(0.0, 0.0, -t),
            Vec3::new(cfg.floor_size[0] / 2.0, cfg.floor_size[1] / 2.0, t),
        ),
    )
}

fn within_floor(b: &OrientedBox, cfg: &SynthConfig) -> bool {
    let (lo, hi) = b.footprint();
    let (fx, fy) = (cfg.floor_size[0] / 2.0, cfg.floor_size[1] / 2.0);
    lo[0] >= -fx && hi[0] <= fx && lo[1] >= -fy && hi[1] <= fy
}

/// Segment boxes of a human in its own frame (origin on the floor between the
/// feet for standing; on the seat top for sitting), as `(segment, center, half_extents)`.
fn standing_segments() -> Vec<(BodySegment, Vec3, Vec3)> {
    let foot = Vec3::new(0.05, 0.12, 0.04);
    let pelvis = Vec3::new(0.17, 0.10, 0.08);
    let torso = Vec3::new(0.18, 0.10, 0.25);
    let hand = Vec3::new(0.04, 0.06, 0.04);
    let pelvis_z = 0.95;
    vec![
        (BodySegment::LeftFoot, Vec3::new(-0.10, 0.0, foot.z), foot),
        (BodySegment::RightFoot, Vec3::new(0.10, 0.0, foot.z), foot),
        (BodySegment::Pelvis, Vec3::new(0.0, 0.0, pelvis_z), pelvis),
        (
            BodySegment::Torso,
            Vec3::new(0.0, 0.0, pelvis_z + pelvis.z + torso.z),
            torso,
        ),
        (BodySegment::LeftHand, Vec3::new(-0.30, 0.0, 0.80), hand),
        (BodySegment::RightHand, Vec3::new(0.30, 0.0, 0.80), hand),
    ]
}

/// Sitting layout relative to a seat with half extents `seat` (seat frame,
/// origin at the seat center). The front edge faces local +y.
fn sitting_segments(seat: Vec3) -> Vec<(BodySegment, Vec3, Vec3)> {
    let foot = Vec3::new(0.05, 0.12, 0.04);
    let pelvis = Vec3::new(0.17, 0.12, 0.08);
    let torso = Vec3::new(0.18, 0.10, 0.25);
    let hand = Vec3::new(0.04, 0.06, 0.04);
    let top = seat.z;
    let pelvis_y = seat.y - pelvis.y - 0.02;
    let pelvis_z = top + pelvis.z;
    let foot_y = seat.y + 0.05 + foot.y;
    let floor_z = -seat.z + foot.z;
    let hand_x = pelvis.x + hand.x + 0.02;
    vec![
        (BodySegment::LeftFoot, Vec3::new(-0.10, foot_y, floor_z), foot),
        (BodySegment::RightFoot, Vec3::new(0.10, foot_y, floor_z), foot),
        (BodySegment::Pelvis, Vec3::new(0.0, pelvis_y, pelvis_z), pelvis),
        (
            BodySegment::Torso,
            Vec3::new(0.0, pelvis_y - 0.02, pelvis_z + pelvis.z + torso.z),
            torso,
        ),
        (BodySegment::LeftHand, Vec3::new(-hand_x, pelvis_y, top + hand.z), hand),
        (BodySegment::RightHand, Vec3::new(hand_x, pelvis_y, top + hand.z), hand),
    ]
}

/// Deterministic 27-point lattice spanning the box; its PCA fit reproduces the box.
fn lattice_cloud(b: &OrientedBox) -> PointCloud {
    let mut pts = Vec::with_capacity(27);
    for i in -1..=1 {
        for j in -1..=1 {
            for k in -1..=1 {
                let local = Vec3::new(i as f64, j as f64, k as f64).hadamard(b.half_extents);
                pts.push(b.center + b.rotation.apply(local));
            }
        }
    }
    PointCloud::new(pts).expect("lattice points are finite")
}

fn place_human(
    frame_rot: &Rotation3,
    origin: Vec3,
    parts: &[(BodySegment, Vec3, Vec3)],
    point_cloud: bool,
) -> Result<Vec<SceneElement>> {
    parts
        .iter()
        .map(|&(seg, c, h)| {
            let b = OrientedBox::new(origin + frame_rot.apply(c), h, *frame_rot);
            let kind = NodeKind::BodySegment(seg);
            if point_cloud {
                SceneElement::from_cloud(kind, lattice_cloud(&b))
            } else {
                Ok(SceneElement::new(kind, b))
            }
        })
        .collect()
}

fn try_layout(cfg: &SynthConfig, pose: HumanPose, rng: &mut ChaCha8Rng) -> Result<Option<Vec<SceneElement>>> {
    let floor = floor_element(cfg);
    let mut elements = vec![floor];
    let n = rng.gen_range(cfg.furniture_min..=cfg.furniture_max);
    let floor_specs: Vec<&ClassSpec> = cfg
        .classes
        .iter()
        .filter(|c| c.placement == Placement::OnFloor)
        .collect();
    let mut specs: Vec<&ClassSpec> = (0..n)
        .map(|_| &cfg.classes[rng.gen_range(0..cfg.classes.len())])
        .collect();
    if pose == HumanPose::Sitting
        && !specs
            .iter()
            .any(|s| s.class.is_seat() && s.placement == Placement::OnFloor)
    {
        let seats: Vec<&ClassSpec> = floor_specs.iter().copied().filter(|s| s.class.is_seat()).collect();
        specs[0] = seats[rng.gen_range(0..seats.len())];
    }
    // Floor pieces first so surface pieces have something to stand on.
    specs.sort_by_key(|s| s.placement == Placement::OnSurface);

    let (fx, fy) = (cfg.floor_size[0] / 2.0, cfg.floor_size[1] / 2.0);
    let mut on_floor: Vec<usize> = Vec::new();
    for spec in specs {
        let mut placed = None;
        for _ in 0..50 {
            let h = spec.sample_half_extents(rng);
            let rot = Rotation3::about_z(rng.gen_range(-PI..PI));
            let candidate = match spec.placement {
                Placement::OnFloor => {
                    let c = Vec3::new(rng.gen_range(-fx..fx), rng.gen_range(-fy..fy), h.z);
                    OrientedBox::new(c, h, rot)
                }
                Placement::OnSurface => {
                    if on_floor.is_empty() {
                        break;
                    }
                    let base = &elements[on_floor[rng.gen_range(0..on_floor.len())]].bbox;
                    let top = base.max_z();
                    let local = Vec3::new(
                        rng.gen_range(-1.0..1.0) * base.half_extents.x,
                        rng.gen_range(-1.0..1.0) * base.half_extents.y,
                        0.0,
                    );
                    let xy = base.center + base.rotation.apply(local);
                    OrientedBox::new(Vec3::new(xy.x, xy.y, top + h.z), h, rot)
                }
            };
            if !within_floor(&candidate, cfg) {
                continue;
            }
            let clear = elements[1..].iter().all(|e| {
                let touching_support =
                    spec.placement == Placement::OnSurface && (e.bbox.max_z() - candidate.min_z()).abs() < 1e-9;
                if touching_support {
                    !boxes_intersect(&candidate.translated(Vec3::new(0.0, 0.0, 1e-6)), &e.bbox, 0.0)
                } else {
                    !boxes_intersect(&candidate, &e.bbox, PLACEMENT_MARGIN)
                }
            });
            if clear {
                placed = Some(candidate);
                break;
            }
        }
        let Some(b) = placed else { return Ok(None) };
        if spec.placement == Placement::OnFloor {
            on_floor.push(elements.len());
        }
        elements.push(SceneElement::new(NodeKind::Object(spec.class), b));
    }

    let furniture: Vec<usize> = (1..elements.len()).collect();
    let (human, seat) = match pose {
        HumanPose::Standing => {
            let rot = Rotation3::about_z(rng.gen_range(-PI..PI));
            let origin = Vec3::new(rng.gen_range(-fx..fx), rng.gen_range(-fy..fy), 0.0);
            (place_human(&rot, origin, &standing_segments(), cfg.point_cloud)?, None)
        }
        HumanPose::Sitting => {
            let seats: Vec<usize> = on_floor
                .iter()
                .copied()
                .filter(|&i| matches!(elements[i].kind, NodeKind::Object(c) if c.is_seat()))
                .collect();
            let si = seats[rng.gen_range(0..seats.len())];
            let seat = elements[si].bbox;
            let parts = sitting_segments(seat.half_extents);
            (
                place_human(&seat.rotation, seat.center, &parts, cfg.point_cloud)?,
                Some(si),
            )
        }
    };
    for seg in &human {
        if !within_floor(&seg.bbox, cfg) {
            return Ok(None);
        }
        for &f in &furniture {
            let margin = if Some(f) == seat { 0.0 } else { PLACEMENT_MARGIN };
            let b = &elements[f].bbox;
            let hit = if Some(f) == seat {
                // Resting on the seat is fine; only reject actual interpenetration.
                mc_overlap_volume(&seg.bbox, b, 256, 0) > 0.0
            } else {
                boxes_intersect(&seg.bbox, b, margin)
            };
            if hit {
                return Ok(None);
            }
        }
    }
    elements.extend(human);
    Ok(Some(elements))
}

/// Samples a plausible scene; a pure function of `(cfg, seed)`.
pub fn sample_scene(cfg: &SynthConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose = match cfg.pose {
        PoseMode::Standing => HumanPose::Standing,
        PoseMode::Sitting => HumanPose::Sitting,
        PoseMode::Mixed => {
            if rng.gen_bool(0.5) {
                HumanPose::Sitting
            } else {
                HumanPose::Standing
            }
        }
    };
    for _ in 0..cfg.max_attempts {
        if let Some(elements) = try_layout(cfg, pose, &mut rng)? {
            let mut scene = Scene::new(elements, Label::Plausible)?;
            for e in &mut scene.elements {
                snap_to_grid(e);
            }
            scene.seed = Some(seed);
            scene.pose = Some(pose);
            return Ok(scene);
        }
    }
    Err(Error::PlacementFailure {
        what: format!("scene for seed {seed}"),
        attempts: cfg.max_attempts,
    })
}

fn eligible_targets(scene: &Scene, kind: CorruptionKind) -> Vec<usize> {
    (0..scene.len())
        .filter(|&i| {
            let k = scene.elements[i].kind;
            !k.is_floor()
                && match kind {
                    CorruptionKind::Float | CorruptionKind::ScaleAnomaly => is_gravity_supported(scene, i),
                    CorruptionKind::Tilt => k.is_furniture(),
                    CorruptionKind::Penetrate => true,
                }
        })
        .collect()
}

/// Overlap of `b` (standing in for element `target`) with element `other`;
/// the floor counts as the half-space below its top.
fn overlap_with(scene: &Scene, b: &OrientedBox, other: usize, mc: &MonteCarlo) -> f64 {
    let o = &scene.elements[other];
    if o.kind.is_floor() {
        volume_below(b, o.bbox.max_z(), mc)
    } else {
        mc_overlap_volume(b, &o.bbox, mc.samples, mc.seed)
    }
}

/// Moves `target` toward `neighbor` until their overlap reaches `volume`.
fn penetrate_into(scene: &Scene, target: usize, neighbor: usize, volume: f64) -> Option<OrientedBox> {
    let mc = MonteCarlo::default();
    let t = scene.elements[target].bbox;
    let n = &scene.elements[neighbor];
    let dir = if n.kind.is_floor() {
        -Vec3::Z
    } else {
        let d = n.bbox.center - t.center;
        let horizontal = Vec3::new(d.x, d.y, 0.0);
        let d = if scene.elements[target].kind.is_furniture() && horizontal.norm() > 1e-6 {
            horizontal
        } else {
            d
        };
        if d.norm() < 1e-9 {
            -Vec3::Z
        } else {
            d * (1.0 / d.norm())
        }
    };
    let reach = if n.kind.is_floor() {
        2.0 * t.bounding_radius()
    } else {
        (n.bbox.center - t.center).norm() + t.bounding_radius() + n.bbox.bounding_radius()
    };
    let steps = (reach / PENETRATE_STEP).ceil() as usize;
    (1..=steps)
        .map(|k| t.translated(dir * (k as f64 * PENETRATE_STEP)))
        .find(|b| overlap_with(scene, b, neighbor, &mc) >= volume)
}

fn nearest_neighbors(scene: &Scene, target: usize, min_volume: f64) -> Vec<usize> {
    let t = &scene.elements[target];
    let mut candidates: Vec<(f64, usize)> = (0..scene.len())
        .filter(|&j| {
            let o = &scene.elements[j];
            j != target
                && !o.kind.is_floor()
                && !(t.kind.is_segment() && o.kind.is_segment())
                && o.bbox.volume() >= min_volume
        })
        .map(|j| ((scene.elements[j].bbox.center - t.bbox.center).norm(), j))
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<usize> = candidates.into_iter().map(|(_, j)| j).collect();
    if let Some(f) = scene.floor_index() {
        out.push(f);
    }
    out
}

fn apply_to_target(
    scene: &Scene,
    spec: &CorruptionSpec,
    target: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Option<(SceneElement, Option<usize>)>> {
    let el = &scene.elements[target];
    let mut out = el.clone();
    let m = spec.magnitude;
    match spec.kind {
        CorruptionKind::Float => {
            out.bbox.center.z += m;
            out.cloud = el.cloud.as_ref().map(|c| shift_cloud(c, Vec3::new(0.0, 0.0, m)));
            Ok(Some((out, None)))
        }
        CorruptionKind::Tilt => {
            let a = rng.gen_range(-PI..PI);
            let axis = Vec3::new(a.cos(), a.sin(), 0.0);
            out.bbox.rotation = Rotation3::about_axis(axis, m).compose(&el.bbox.rotation);
            out.cloud = None;
            Ok(Some((out, None)))
        }
        CorruptionKind::ScaleAnomaly => {
            out.bbox = OrientedBox::new(el.bbox.center, el.bbox.half_extents * m, el.bbox.rotation);
            out.cloud = None;
            Ok(Some((out, None)))
        }
        CorruptionKind::Penetrate => {
            let volume = m.powi(3);
            if el.bbox.volume() < 1.5 * volume {
                return Ok(None);
            }
            for nb in nearest_neighbors(scene, target, 1.5 * volume) {
                if let Some(b) = penetrate_into(scene, target, nb, volume) {
                    let shift = b.center - el.bbox.center;
                    out.bbox = b;
                    out.cloud = el.cloud.as_ref().map(|c| shift_cloud(c, shift));
                    return Ok(Some((out, Some(nb))));
                }
            }
            Ok(None)
        }
    }
}

/// Coordinate grid for generated box centers (2⁻²⁰ m).
pub const GRID: f64 = 1.0 / (1u64 << 20) as f64;

/// Snaps a box center onto [`GRID`], rounding z upward so nothing sinks.
/// Grid coordinates make dyadic translations exact in floating point.
/// Cloud-backed elements keep their fitted center.
fn snap_to_grid(e: &mut SceneElement) {
    if e.cloud.is_some() {
        return;
    }
    let c = &mut e.bbox.center;
    c.x = (c.x / GRID).round() * GRID;
    c.y = (c.y / GRID).round() * GRID;
    c.z = (c.z / GRID).ceil() * GRID;
}

fn shift_cloud(c: &PointCloud, t: Vec3) -> PointCloud {
    PointCloud::new(c.points().iter().map(|p| *p + t).collect()).expect("translation keeps a valid cloud")
}

/// Applies `spec` to one element; everything else is left untouched.
pub fn corrupt_scene(scene: &Scene, spec: &CorruptionSpec, seed: u64) -> Result<Scene> {
    if !(spec.magnitude > 0.0 && spec.magnitude.is_finite()) {
        return Err(Error::BadConfig(format!(
            "corruption magnitude must be positive, got {}",
            spec.magnitude
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates = match spec.target {
        Target::Index(i) => {
            let el = scene.elements.get(i).ok_or_else(|| {
                Error::UnresolvableTarget(format!("index {i} out of range for {} elements", scene.len()))
            })?;
            if el.kind.is_floor() {
                return Err(Error::TargetIsFloor);
            }
            vec![i]
        }
        Target::Random => {
            let mut c = eligible_targets(scene, spec.kind);
            // Deterministic shuffle so a failing first pick falls through to another.
            for k in (1..c.len()).rev() {
                c.swap(k, rng.gen_range(0..=k));
            }
            c
        }
    };
    for target in candidates {
        if let Some((mut element, neighbor)) = apply_to_target(scene, spec, target, &mut rng)? {
            snap_to_grid(&mut element);
            let mut out = scene.clone();
            out.elements[target] = element;
            out.label = Label::Implausible;
            out.corruption = Some(AppliedCorruption {
                kind: spec.kind,
                magnitude: spec.magnitude,
                target,
                neighbor,
            });
            return Ok(out);
        }
    }
    Err(Error::UnresolvableTarget(format!(
        "no element can take a {} corruption of magnitude {}",
        spec.kind.as_str(),
        spec.magnitude
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub index: usize,
    /// Relative path of the scene file inside the dataset directory.
    pub path: String,
    /// Seed of the base layout.
    pub seed: u64,
    pub split: Split,
    pub scene: Scene,
}

/// Deterministic per-scene seeds `(layout, corruption)` for index `i`.
pub fn scene_seeds(seed: u64, index: usize) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    (rng.next_u64(), rng.next_u64())
}

/// Whether scene `i` of `n` is plausible: plausible scenes are spread evenly,
/// `ceil(n · fraction)` in total, starting with index 0.
pub fn is_plausible_index(index: usize, fraction: f64) -> bool {
    ((index + 1) as f64 * fraction).ceil() > (index as f64 * fraction).ceil()
}

fn assign_splits(cfg: &SynthConfig) -> Vec<Split> {
    let n = cfg.count;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    for k in (1..n).rev() {
        order.swap(k, rng.gen_range(0..=k));
    }
    let n_train = (cfg.split[0] * n as f64).round() as usize;
    let n_val = ((cfg.split[1] * n as f64).round() as usize).min(n - n_train.min(n));
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

/// Generates one dataset entry; plausible entries are a sampled layout and
/// implausible ones are a corrupted copy of their own sampled layout.
pub fn generate_entry(cfg: &SynthConfig, index: usize) -> Result<Scene> {
    let (layout_seed, corruption_seed) = scene_seeds(cfg.seed, index);
    let base = sample_scene(cfg, layout_seed)?;
    if is_plausible_index(index, cfg.plausible_fraction) {
        return Ok(base);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(corruption_seed);
    let kind = cfg.corruption_mix.sample(&mut rng);
    let magnitude = cfg.magnitudes.sample(kind, &mut rng);
    let spec = CorruptionSpec {
        kind,
        magnitude,
        target: Target::Random,
    };
    match corrupt_scene(&base, &spec, rng.next_u64()) {
        Err(Error::UnresolvableTarget(_)) if kind != CorruptionKind::Float => {
            let magnitude = cfg.magnitudes.sample(CorruptionKind::Float, &mut rng);
            let fallback = CorruptionSpec {
                kind: CorruptionKind::Float,
                magnitude,
                target: Target::Random,
            };
            corrupt_scene(&base, &fallback, rng.next_u64())
        }
        other => other,
    }
}

/// Generates the whole dataset in memory (parallel over scenes, ordered output).
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Vec<DatasetEntry>> {
    cfg.validate()?;
    let splits = assign_splits(cfg);
    (0..cfg.count)
        .into_par_iter()
        .map(|i| {
            let scene = generate_entry(cfg, i)?;
            Ok(DatasetEntry {
                index: i,
                path: format!("scenes/scene_{i:05}.json"),
                seed: scene.seed.unwrap_or_default(),
                split: splits[i],
                scene,
            })
        })
        .collect()
}

/// The uncorrupted layout a generated scene was derived from.
pub fn reference_scene(cfg: &SynthConfig, scene: &Scene) -> Result<Scene> {
    let seed = scene
        .seed
        .ok_or_else(|| Error::BadConfig("scene carries no generator seed".into()))?;
    sample_scene(cfg, seed)
}
