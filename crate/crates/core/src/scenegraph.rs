//! Scenes of labelled boxes and their complete directed feature graphs.
//!
//! Node features are the 8 canonical box corners (24 values) relative to the
//! mean element center. Edge `src → dst` carries the 64 corner-to-corner
//! distances followed by the 36 face-normal cross products (108 values).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{corner_signs, fit_obb_pca, OrientedBox, PointCloud, Rotation3, Vec3};
use crate::neural::Matrix;
use crate::synth::AppliedCorruption;

pub const NODE_FEATURE_DIM: usize = 24;
pub const EDGE_DIST_DIM: usize = 64;
pub const EDGE_NORM_DIM: usize = 108;
pub const EDGE_FEATURE_DIM: usize = EDGE_DIST_DIM + EDGE_NORM_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Floor = 0,
    Chair = 1,
    Table = 2,
    Sofa = 3,
    Bed = 4,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 5] = [
        ObjectClass::Floor,
        ObjectClass::Chair,
        ObjectClass::Table,
        ObjectClass::Sofa,
        ObjectClass::Bed,
    ];

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Floor => "floor",
            ObjectClass::Chair => "chair",
            ObjectClass::Table => "table",
            ObjectClass::Sofa => "sofa",
            ObjectClass::Bed => "bed",
        }
    }

    pub fn is_seat(self) -> bool {
        matches!(self, ObjectClass::Chair | ObjectClass::Sofa | ObjectClass::Bed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BodySegment {
    LeftFoot = 0,
    RightFoot = 1,
    Pelvis = 2,
    Torso = 3,
    LeftHand = 4,
    RightHand = 5,
}

impl BodySegment {
    pub const ALL: [BodySegment; 6] = [
        BodySegment::LeftFoot,
        BodySegment::RightFoot,
        BodySegment::Pelvis,
        BodySegment::Torso,
        BodySegment::LeftHand,
        BodySegment::RightHand,
    ];

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            BodySegment::LeftFoot => "left_foot",
            BodySegment::RightFoot => "right_foot",
            BodySegment::Pelvis => "pelvis",
            BodySegment::Torso => "torso",
            BodySegment::LeftHand => "left_hand",
            BodySegment::RightHand => "right_hand",
        }
    }

    /// Segments that are expected to touch a supporting surface.
    pub fn is_contact(self) -> bool {
        !matches!(self, BodySegment::Torso)
    }

    pub fn is_foot(self) -> bool {
        matches!(self, BodySegment::LeftFoot | BodySegment::RightFoot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Object(ObjectClass),
    BodySegment(BodySegment),
}

impl NodeKind {
    pub fn name(self) -> &'static str {
        match self {
            NodeKind::Object(c) => c.name(),
            NodeKind::BodySegment(s) => s.name(),
        }
    }

    pub fn is_floor(self) -> bool {
        self == NodeKind::Object(ObjectClass::Floor)
    }

    pub fn is_segment(self) -> bool {
        matches!(self, NodeKind::BodySegment(_))
    }

    pub fn is_furniture(self) -> bool {
        matches!(self, NodeKind::Object(c) if c != ObjectClass::Floor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Plausible,
    Implausible,
    Unlabeled,
}

impl Label {
    /// Discriminator target: 1 for plausible (real), 0 for implausible.
    pub fn target(self) -> Option<f64> {
        match self {
            Label::Plausible => Some(1.0),
            Label::Implausible => Some(0.0),
            Label::Unlabeled => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Plausible => "plausible",
            Label::Implausible => "implausible",
            Label::Unlabeled => "unlabeled",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HumanPose {
    Standing,
    Sitting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ElementRepr", into = "ElementRepr")]
pub struct SceneElement {
    pub kind: NodeKind,
    pub bbox: OrientedBox,
    pub cloud: Option<PointCloud>,
}

impl SceneElement {
    pub fn new(kind: NodeKind, bbox: OrientedBox) -> Self {
        Self {
            kind,
            bbox,
            cloud: None,
        }
    }

    /// Element whose box is the PCA fit of its source vertices.
    pub fn from_cloud(kind: NodeKind, cloud: PointCloud) -> Result<Self> {
        let bbox = fit_obb_pca(&cloud)?;
        Ok(Self {
            kind,
            bbox,
            cloud: Some(cloud),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum KindTag {
    Object,
    BodySegment,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ElementRepr {
    kind: KindTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_id: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    segment_id: Option<u8>,
    center: Vec3,
    half_extents: Vec3,
    rotation: Rotation3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cloud: Option<PointCloud>,
}

impl TryFrom<ElementRepr> for SceneElement {
    type Error = String;

    fn try_from(r: ElementRepr) -> std::result::Result<Self, String> {
        let kind = match (r.kind, r.class_id, r.segment_id) {
            (KindTag::Object, Some(id), None) => {
                NodeKind::Object(ObjectClass::from_id(id).ok_or_else(|| format!("unknown class_id {id}"))?)
            }
            (KindTag::BodySegment, None, Some(id)) => {
                NodeKind::BodySegment(BodySegment::from_id(id).ok_or_else(|| format!("unknown segment_id {id}"))?)
            }
            _ => return Err("element needs kind=object with class_id or kind=body_segment with segment_id".into()),
        };
        if !(r.center.is_finite() && r.half_extents.is_finite()) {
            return Err("element geometry must be finite".into());
        }
        if r.half_extents.to_array().iter().any(|h| *h <= 0.0) {
            return Err("half_extents must be strictly positive".into());
        }
        let bbox = OrientedBox::new(r.center, r.half_extents, r.rotation);
        if let Some(cloud) = &r.cloud {
            let fit = fit_obb_pca(cloud).map_err(|e| e.to_string())?;
            let drift = (fit.center - bbox.center).norm() + (fit.half_extents - bbox.half_extents).norm();
            if drift > 1e-6 {
                return Err(format!(
                    "element box does not match the PCA fit of its cloud (drift {drift:e})"
                ));
            }
        }
        Ok(SceneElement {
            kind,
            bbox,
            cloud: r.cloud,
        })
    }
}

impl From<SceneElement> for ElementRepr {
    fn from(e: SceneElement) -> Self {
        let (kind, class_id, segment_id) = match e.kind {
            NodeKind::Object(c) => (KindTag::Object, Some(c.id()), None),
            NodeKind::BodySegment(s) => (KindTag::BodySegment, None, Some(s.id())),
        };
        ElementRepr {
            kind,
            class_id,
            segment_id,
            center: e.bbox.center,
            half_extents: e.bbox.half_extents,
            rotation: e.bbox.rotation,
            cloud: e.cloud,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub elements: Vec<SceneElement>,
    pub label: Label,
    /// Seed of the generator that produced the (uncorrupted) base layout.
    pub seed: Option<u64>,
    pub pose: Option<HumanPose>,
    pub corruption: Option<AppliedCorruption>,
}

impl Scene {
    pub fn new(elements: Vec<SceneElement>, label: Label) -> Result<Self> {
        let scene = Self {
            elements,
            label,
            seed: None,
            pose: None,
            corruption: None,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.elements.is_empty() {
            return Err(Error::BadConfig("scene has no elements".into()));
        }
        let floors = self.elements.iter().filter(|e| e.kind.is_floor()).count();
        if floors > 1 {
            return Err(Error::BadConfig(format!("scene has {floors} floor elements")));
        }
        if let Some(i) = self.elements.iter().position(|e| !e.bbox.is_finite()) {
            return Err(Error::BadConfig(format!("element {i} has non-finite geometry")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn floor_index(&self) -> Option<usize> {
        self.elements.iter().position(|e| e.kind.is_floor())
    }

    pub fn floor(&self) -> Option<&SceneElement> {
        self.floor_index().map(|i| &self.elements[i])
    }

    /// Height of the floor's top plane (0 when the scene has no floor).
    pub fn floor_top(&self) -> f64 {
        self.floor().map(|f| f.bbox.max_z()).unwrap_or(0.0)
    }

    pub fn segment_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.elements
            .iter()
            .enumerate()
            .filter(|(_, e)| e.kind.is_segment())
            .map(|(i, _)| i)
    }

    pub fn segment(&self, seg: BodySegment) -> Option<usize> {
        self.elements.iter().position(|e| e.kind == NodeKind::BodySegment(seg))
    }

    /// Applies `p ↦ R·p + t` to every element (clouds included).
    pub fn transformed(&self, rotation: &Rotation3, t: Vec3) -> Scene {
        let mut out = self.clone();
        for e in &mut out.elements {
            e.bbox = e.bbox.transformed(rotation, t);
            if let Some(cloud) = &e.cloud {
                let pts = cloud.points().iter().map(|p| rotation.apply(*p) + t).collect();
                e.cloud = Some(PointCloud::new(pts).expect("rigid motion keeps a valid cloud"));
            }
        }
        out
    }

    pub fn translated(&self, t: Vec3) -> Scene {
        let mut out = self.clone();
        for e in &mut out.elements {
            e.bbox.center += t;
            if let Some(cloud) = &e.cloud {
                let pts = cloud.points().iter().map(|p| *p + t).collect();
                e.cloud = Some(PointCloud::new(pts).expect("translation keeps a valid cloud"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph {
    pub node_features: Matrix,
    /// Ordered `(src, dst)` pairs; source-major, all `src != dst`.
    pub edge_index: Vec<(usize, usize)>,
    pub edge_features: Matrix,
    pub node_kinds: Vec<NodeKind>,
}

impl SceneGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_features.rows()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_index.len()
    }

    /// Incoming edge ids for every node.
    pub fn incoming(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.num_nodes()];
        for (e, &(_, dst)) in self.edge_index.iter().enumerate() {
            inc[dst].push(e);
        }
        inc
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.num_nodes();
        if self.node_features.cols() != NODE_FEATURE_DIM
            || self.edge_features.cols() != EDGE_FEATURE_DIM
            || self.edge_features.rows() != self.edge_index.len()
            || self.node_kinds.len() != p
        {
            return Err(Error::ShapeMismatch(format!(
                "graph has nodes {}x{}, edges {}x{} for {} edge pairs and {} kinds",
                p,
                self.node_features.cols(),
                self.edge_features.rows(),
                self.edge_features.cols(),
                self.edge_index.len(),
                self.node_kinds.len()
            )));
        }
        if self.edge_index.iter().any(|&(s, d)| s >= p || d >= p) {
            return Err(Error::ShapeMismatch("edge endpoint out of range".into()));
        }
        Ok(())
    }
}

/// `out[8·i + j] = ‖a[i] − b[j]‖`.
pub fn edge_dist_features(a: &[Vec3; 8], b: &[Vec3; 8]) -> [f64; EDGE_DIST_DIM] {
    let mut out = [0.0; EDGE_DIST_DIM];
    for i in 0..8 {
        for j in 0..8 {
            out[8 * i + j] = (a[i] - b[j]).norm();
        }
    }
    out
}

/// `out[3·(6·i + j) + k] = (a[i] × b[j])[k]`.
pub fn edge_norm_features(a: &[Vec3; 6], b: &[Vec3; 6]) -> [f64; EDGE_NORM_DIM] {
    let mut out = [0.0; EDGE_NORM_DIM];
    for i in 0..6 {
        for j in 0..6 {
            let c = a[i].cross(b[j]);
            let base = 3 * (6 * i + j);
            out[base] = c.x;
            out[base + 1] = c.y;
            out[base + 2] = c.z;
        }
    }
    out
}

/// Corner offsets `R·(s ⊙ h)` from the box center.
pub(crate) fn corner_offsets(b: &OrientedBox) -> [Vec3; 8] {
    std::array::from_fn(|i| b.rotation.apply(corner_signs(i).hadamard(b.half_extents)))
}

/// Builds the complete directed scene graph.
///
/// Every coordinate enters only through differences of element centers, so a
/// global translation that is exact in floating point leaves every feature
/// bit-identical.
pub fn build_graph(scene: &Scene) -> Result<SceneGraph> {
    if scene.elements.is_empty() {
        return Err(Error::BadConfig("cannot build a graph from an empty scene".into()));
    }
    let p = scene.elements.len();
    let boxes: Vec<&OrientedBox> = scene.elements.iter().map(|e| &e.bbox).collect();
    let origin = boxes[0].center;
    let rel: Vec<Vec3> = boxes.iter().map(|b| b.center - origin).collect();
    let centroid = rel.iter().fold(Vec3::ZERO, |acc, &r| acc + r) * (1.0 / p as f64);
    let offsets: Vec<[Vec3; 8]> = boxes.iter().map(|b| corner_offsets(b)).collect();
    let normals: Vec<[Vec3; 6]> = boxes.iter().map(|b| b.face_normals()).collect();

    let mut node_features = Matrix::zeros(p, NODE_FEATURE_DIM);
    for k in 0..p {
        let shift = rel[k] - centroid;
        let row = node_features.row_mut(k);
        for (c, off) in offsets[k].iter().enumerate() {
            let v = shift + *off;
            row[3 * c] = v.x;
            row[3 * c + 1] = v.y;
            row[3 * c + 2] = v.z;
        }
    }

    let mut edge_index = Vec::with_capacity(p * p.saturating_sub(1));
    for src in 0..p {
        for dst in 0..p {
            if src != dst {
                edge_index.push((src, dst));
            }
        }
    }
    let mut edge_features = Matrix::zeros(edge_index.len(), EDGE_FEATURE_DIM);
    for (e, &(src, dst)) in edge_index.iter().enumerate() {
        let delta = boxes[src].center - boxes[dst].center;
        let a: [Vec3; 8] = std::array::from_fn(|i| delta + offsets[src][i]);
        let b = offsets[dst];
        let row = edge_features.row_mut(e);
        row[..EDGE_DIST_DIM].copy_from_slice(&edge_dist_features(&a, &b));
        row[EDGE_DIST_DIM..].copy_from_slice(&edge_norm_features(&normals[src], &normals[dst]));
    }

    Ok(SceneGraph {
        node_features,
        edge_index,
        edge_features,
        node_kinds: scene.elements.iter().map(|e| e.kind).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(center: Vec3) -> SceneElement {
        SceneElement::new(
            NodeKind::Object(ObjectClass::Chair),
            OrientedBox::axis_aligned(center, Vec3::splat(0.5)),
        )
    }

    #[test]
    fn dist_features_identity_and_offset() {
        let a = OrientedBox::axis_aligned(Vec3::ZERO, Vec3::splat(0.5)).corners();
        let d = edge_dist_features(&a, &a);
        for i in 0..8 {
            assert_eq!(d[8 * i + i], 0.0);
        }
        let b = OrientedBox::axis_aligned(Vec3::X, Vec3::splat(0.5)).corners();
        let d = edge_dist_features(&a, &b);
        for i in 0..8 {
            assert_eq!(d[8 * i + i], 1.0);
        }
        assert!(d.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn norm_features_right_hand_rule() {
        let n = OrientedBox::axis_aligned(Vec3::ZERO, Vec3::splat(0.5)).face_normals();
        let f = edge_norm_features(&n, &n);
        // (+x, −x) → 0
        assert_eq!(&f[3..6], &[0.0, 0.0, 0.0]);
        // (+x, +y) → +z
        let base = 3 * 2;
        assert_eq!(&f[base..base + 3], &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn graph_dimensions() {
        let scene = Scene::new(vec![unit(Vec3::ZERO), unit(Vec3::X)], Label::Unlabeled).unwrap();
        let g = build_graph(&scene).unwrap();
        assert_eq!(g.num_nodes(), 2);
        assert_eq!(g.num_edges(), 2);
        assert_eq!(g.node_features.cols(), 24);
        assert_eq!(g.edge_features.cols(), 172);
        assert_eq!(g.edge_index, vec![(0, 1), (1, 0)]);
        g.validate().unwrap();

        let single = Scene::new(vec![unit(Vec3::new(3.0, 1.0, 0.0))], Label::Unlabeled).unwrap();
        let g = build_graph(&single).unwrap();
        assert_eq!(g.num_nodes(), 1);
        assert_eq!(g.num_edges(), 0);
        // A lone element is centered on itself.
        assert_eq!(g.node_features.row(0)[..3], [-0.5, -0.5, -0.5]);
    }

    #[test]
    fn node_features_are_centroid_relative_corners() {
        let scene = Scene::new(vec![unit(Vec3::ZERO), unit(Vec3::new(2.0, 0.0, 0.0))], Label::Unlabeled).unwrap();
        let g = build_graph(&scene).unwrap();
        // centroid is (1,0,0); corner 7 of element 1 is (2.5,0.5,0.5).
        assert_eq!(&g.node_features.row(1)[21..24], &[1.5, 0.5, 0.5]);
    }

    #[test]
    fn scene_rejects_two_floors_and_empty() {
        let floor = SceneElement::new(
            NodeKind::Object(ObjectClass::Floor),
            OrientedBox::axis_aligned(Vec3::ZERO, Vec3::splat(1.0)),
        );
        assert!(Scene::new(vec![floor.clone(), floor], Label::Plausible).is_err());
        assert!(Scene::new(vec![], Label::Plausible).is_err());
    }
}
