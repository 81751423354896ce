use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::granule::FormatTag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Concept,
    Attribute,
    Transformation,
    EtlConstraint,
    Note,
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Type of the data a Concept holds or a Transformation consumes/produces: a
/// format tag with an optional refinement such as `ExtC_Common/projected`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DataType {
    pub format: FormatTag,
    pub annotation: Option<String>,
}

impl DataType {
    pub fn plain(format: FormatTag) -> Self {
        DataType { format, annotation: None }
    }

    pub fn annotated(format: FormatTag, annotation: impl Into<String>) -> Self {
        DataType { format, annotation: Some(annotation.into()) }
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.annotation {
            Some(a) => write!(f, "{}/{a}", self.format),
            None => f.write_str(self.format.as_str()),
        }
    }
}

impl FromStr for DataType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (tag, annotation) = match s.split_once('/') {
            Some((t, a)) if !a.is_empty() => (t, Some(a.to_string())),
            Some(_) => return Err(format!("empty annotation in {s:?}")),
            None => (s, None),
        };
        let format = tag.parse::<FormatTag>().map_err(|e| e.to_string())?;
        Ok(DataType { format, annotation })
    }
}

impl Serialize for DataType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DataType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptPayload {
    pub format: DataType,
    #[serde(default)]
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformationPayload {
    pub op: String,
    pub inputs: Vec<DataType>,
    pub output: DataType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintPayload {
    pub predicate: String,
    pub attributes: Vec<String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub args: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NotePayload {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Concept(ConceptPayload),
    Attribute,
    Transformation(TransformationPayload),
    EtlConstraint(ConstraintPayload),
    Note(NotePayload),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub label: String,
    pub payload: Payload,
}

impl Node {
    pub fn kind(&self) -> NodeKind {
        match self.payload {
            Payload::Concept(_) => NodeKind::Concept,
            Payload::Attribute => NodeKind::Attribute,
            Payload::Transformation(_) => NodeKind::Transformation,
            Payload::EtlConstraint(_) => NodeKind::EtlConstraint,
            Payload::Note(_) => NodeKind::Note,
        }
    }

    pub fn concept(id: &str, format: DataType, attributes: &[&str]) -> Self {
        Node {
            id: id.into(),
            label: id.into(),
            payload: Payload::Concept(ConceptPayload {
                format,
                attributes: attributes.iter().map(|a| a.to_string()).collect(),
            }),
        }
    }

    pub fn attribute(id: &str) -> Self {
        Node { id: id.into(), label: id.into(), payload: Payload::Attribute }
    }

    pub fn transformation(id: &str, op: &str, inputs: &[DataType], output: DataType) -> Self {
        Node {
            id: id.into(),
            label: id.into(),
            payload: Payload::Transformation(TransformationPayload { op: op.into(), inputs: inputs.to_vec(), output }),
        }
    }

    pub fn constraint(id: &str, predicate: &str, attributes: &[&str], args: serde_json::Value) -> Self {
        Node {
            id: id.into(),
            label: id.into(),
            payload: Payload::EtlConstraint(ConstraintPayload {
                predicate: predicate.into(),
                attributes: attributes.iter().map(|a| a.to_string()).collect(),
                args,
            }),
        }
    }

    pub fn note(id: &str, text: &str) -> Self {
        Node { id: id.into(), label: id.into(), payload: Payload::Note(NotePayload { text: text.into() }) }
    }

    pub fn as_transformation(&self) -> Option<&TransformationPayload> {
        match &self.payload {
            Payload::Transformation(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_concept(&self) -> Option<&ConceptPayload> {
        match &self.payload {
            Payload::Concept(c) => Some(c),
            _ => None,
        }
    }

    fn check(&self) -> Result<(), GraphError> {
        let bad = |reason: &str| GraphError::InvalidNode { id: self.id.clone(), reason: reason.into() };
        if self.id.is_empty() {
            return Err(bad("empty id"));
        }
        match &self.payload {
            Payload::EtlConstraint(c) if c.attributes.is_empty() => {
                Err(bad("a constraint must reference at least one attribute"))
            }
            Payload::EtlConstraint(c) if c.predicate.is_empty() => Err(bad("empty predicate id")),
            Payload::Transformation(t) if t.inputs.is_empty() => Err(bad("no declared inputs")),
            Payload::Transformation(t) if t.op.is_empty() => Err(bad("empty operation id")),
            _ => Ok(()),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: String,
    kind: NodeKind,
    label: String,
    #[serde(default)]
    payload: serde_json::Value,
}

impl Serialize for Node {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::Error;
        let payload = match &self.payload {
            Payload::Concept(p) => serde_json::to_value(p),
            Payload::Attribute => Ok(serde_json::Value::Object(Default::default())),
            Payload::Transformation(p) => serde_json::to_value(p),
            Payload::EtlConstraint(p) => serde_json::to_value(p),
            Payload::Note(p) => serde_json::to_value(p),
        }
        .map_err(S::Error::custom)?;
        NodeDoc { id: self.id.clone(), kind: self.kind(), label: self.label.clone(), payload }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Node {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let doc = NodeDoc::deserialize(d)?;
        let v = doc.payload;
        let payload = match doc.kind {
            NodeKind::Concept => serde_json::from_value(v).map(Payload::Concept),
            NodeKind::Attribute => match v {
                serde_json::Value::Null => Ok(Payload::Attribute),
                serde_json::Value::Object(ref m) if m.is_empty() => Ok(Payload::Attribute),
                _ => return Err(D::Error::custom("attribute payload must be empty")),
            },
            NodeKind::Transformation => serde_json::from_value(v).map(Payload::Transformation),
            NodeKind::EtlConstraint => serde_json::from_value(v).map(Payload::EtlConstraint),
            NodeKind::Note => serde_json::from_value(v).map(Payload::Note),
        }
        .map_err(|e| D::Error::custom(format!("node {:?}: {e}", doc.id)))?;
        Ok(Node { id: doc.id, label: doc.label, payload })
    }
}

/// Edge classes, inferred from the kinds of the endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EdgeClass {
    DataFlow,
    PartOf,
    Constraint,
    Annotation,
}

pub fn edge_class(from: NodeKind, to: NodeKind) -> Option<EdgeClass> {
    use NodeKind::*;
    match (from, to) {
        (Concept, Transformation) | (Transformation, Concept) => Some(EdgeClass::DataFlow),
        (Concept, Attribute) => Some(EdgeClass::PartOf),
        (EtlConstraint, Attribute) => Some(EdgeClass::Constraint),
        (Note, k) if k != Note => Some(EdgeClass::Annotation),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("duplicate node id {0:?}")]
    DuplicateId(String),
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("cannot connect {from:?} ({from_kind}) to {to:?} ({to_kind})")]
    KindMismatch { from: String, to: String, from_kind: NodeKind, to_kind: NodeKind },
    #[error("invalid node {id:?}: {reason}")]
    InvalidNode { id: String, reason: String },
    #[error("graph has a cycle: {}", .0.join(" -> "))]
    CyclicGraph(Vec<String>),
    #[error("empty transformation chain")]
    EmptyChain,
    #[error("chain position {0} is not a transformation")]
    NotATransformation(usize),
    #[error("chain position {position}: expects {expected:?}, previous step produces {found}")]
    CompositionTypeError { position: usize, expected: Vec<DataType>, found: DataType },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    Cycle { path: Vec<String> },
    DanglingTransformer { id: String },
    FormatMismatch { transformation: String, concept: String, expected: Vec<DataType>, found: DataType },
    OrphanAttribute { id: String },
    UnknownAttribute { node: String, attribute: String },
    MultipleProducers { concept: String, producers: Vec<String> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Cycle { path } => write!(f, "cycle {}", path.join(" -> ")),
            Violation::DanglingTransformer { id } => {
                write!(f, "transformation {id:?} lacks an input or output concept")
            }
            Violation::FormatMismatch { transformation, concept, expected, found } => write!(
                f,
                "{concept:?} holds {found} but {transformation:?} declares {}",
                expected.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" | ")
            ),
            Violation::OrphanAttribute { id } => write!(f, "attribute {id:?} belongs to no concept"),
            Violation::UnknownAttribute { node, attribute } => {
                write!(f, "{node:?} references missing attribute {attribute:?}")
            }
            Violation::MultipleProducers { concept, producers } => {
                write!(f, "{concept:?} is produced by {}", producers.join(", "))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_cycle(&self) -> bool {
        self.violations.iter().any(|v| matches!(v, Violation::Cycle { .. }))
    }
}

/// Stages of mutually independent Concept and Transformation nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Schedule {
    pub stages: Vec<Vec<String>>,
}

impl Schedule {
    pub fn stage_of(&self, id: &str) -> Option<usize> {
        self.stages.iter().position(|s| s.iter().any(|n| n == id))
    }
}

/// An ETL pipeline: typed nodes and directed edges. Graph operations return
/// new graphs and leave their input untouched.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineGraph {
    nodes: IndexMap<String, Node>,
    edges: Vec<(String, String)>,
}

impl PipelineGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn edges(&self) -> &[(String, String)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn add_node(&self, node: Node) -> Result<PipelineGraph, GraphError> {
        if self.nodes.contains_key(&node.id) {
            return Err(GraphError::DuplicateId(node.id));
        }
        node.check()?;
        let mut g = self.clone();
        g.nodes.insert(node.id.clone(), node);
        Ok(g)
    }

    /// Adds `from -> to`. Connecting an existing edge again is a no-op.
    pub fn connect(&self, from: &str, to: &str) -> Result<PipelineGraph, GraphError> {
        let f = self.nodes.get(from).ok_or_else(|| GraphError::UnknownNode(from.into()))?;
        let t = self.nodes.get(to).ok_or_else(|| GraphError::UnknownNode(to.into()))?;
        if edge_class(f.kind(), t.kind()).is_none() {
            return Err(GraphError::KindMismatch {
                from: from.into(),
                to: to.into(),
                from_kind: f.kind(),
                to_kind: t.kind(),
            });
        }
        let mut g = self.clone();
        if !g.edges.iter().any(|(a, b)| a == from && b == to) {
            g.edges.push((from.into(), to.into()));
        }
        Ok(g)
    }

    fn kind_of(&self, id: &str) -> NodeKind {
        self.nodes[id].kind()
    }

    fn flow_edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.edges
            .iter()
            .filter(|(a, b)| edge_class(self.kind_of(a), self.kind_of(b)) == Some(EdgeClass::DataFlow))
            .map(|(a, b)| (a.as_str(), b.as_str()))
    }

    /// Data-flow predecessors of `id`, sorted.
    pub fn inputs_of(&self, id: &str) -> Vec<&str> {
        let mut v: Vec<&str> = self.flow_edges().filter(|(_, b)| *b == id).map(|(a, _)| a).collect();
        v.sort_unstable();
        v
    }

    /// Data-flow successors of `id`, sorted.
    pub fn outputs_of(&self, id: &str) -> Vec<&str> {
        let mut v: Vec<&str> = self.flow_edges().filter(|(a, _)| *a == id).map(|(_, b)| b).collect();
        v.sort_unstable();
        v
    }

    /// Attributes owned by `concept`, from its payload and part-of edges.
    pub fn attributes_of(&self, concept: &str) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        if let Some(c) = self.nodes.get(concept).and_then(Node::as_concept) {
            out.extend(c.attributes.iter().map(String::as_str));
        }
        for (a, b) in &self.edges {
            if a == concept && self.kind_of(b) == NodeKind::Attribute {
                out.insert(b.as_str());
            }
        }
        out
    }

    fn adjacency(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut adj: BTreeMap<&str, Vec<&str>> = self.nodes.keys().map(|k| (k.as_str(), Vec::new())).collect();
        for (a, b) in &self.edges {
            adj.get_mut(a.as_str()).unwrap().push(b.as_str());
        }
        for v in adj.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        adj
    }

    /// One closed path per back edge found by a depth-first search visiting
    /// nodes and successors in id order.
    pub fn cycles(&self) -> Vec<Vec<String>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Open,
            Done,
        }
        let adj = self.adjacency();
        let mut mark: BTreeMap<&str, Mark> = adj.keys().map(|k| (*k, Mark::New)).collect();
        let mut found = Vec::new();
        for &root in adj.keys() {
            if mark[root] != Mark::New {
                continue;
            }
            let mut stack: Vec<(&str, usize)> = vec![(root, 0)];
            mark.insert(root, Mark::Open);
            while let Some((u, i)) = stack.last().copied() {
                if let Some(&v) = adj[u].get(i) {
                    stack.last_mut().unwrap().1 += 1;
                    match mark[v] {
                        Mark::New => {
                            mark.insert(v, Mark::Open);
                            stack.push((v, 0));
                        }
                        Mark::Open => {
                            let at = stack.iter().position(|(n, _)| *n == v).unwrap();
                            let mut path: Vec<String> = stack[at..].iter().map(|(n, _)| n.to_string()).collect();
                            path.push(v.to_string());
                            found.push(path);
                        }
                        Mark::Done => {}
                    }
                } else {
                    mark.insert(u, Mark::Done);
                    stack.pop();
                }
            }
        }
        found
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations: Vec<Violation> = self.cycles().into_iter().map(|path| Violation::Cycle { path }).collect();

        let mut owned: BTreeSet<&str> = BTreeSet::new();
        for node in self.nodes.values() {
            let refs: &[String] = match &node.payload {
                Payload::Concept(c) => &c.attributes,
                Payload::EtlConstraint(c) => &c.attributes,
                _ => &[],
            };
            for a in refs {
                if self.nodes.get(a).map(Node::kind) != Some(NodeKind::Attribute) {
                    violations.push(Violation::UnknownAttribute { node: node.id.clone(), attribute: a.clone() });
                }
            }
            if node.kind() == NodeKind::Concept {
                owned.extend(self.attributes_of(&node.id));
            }
        }

        for node in self.nodes.values() {
            let Some(t) = node.as_transformation() else {
                continue;
            };
            let ins = self.inputs_of(&node.id);
            let outs = self.outputs_of(&node.id);
            if ins.is_empty() || outs.is_empty() {
                violations.push(Violation::DanglingTransformer { id: node.id.clone() });
            }
            for c in ins {
                let found = &self.nodes[c].as_concept().unwrap().format;
                if !t.inputs.contains(found) {
                    violations.push(Violation::FormatMismatch {
                        transformation: node.id.clone(),
                        concept: c.into(),
                        expected: t.inputs.clone(),
                        found: found.clone(),
                    });
                }
            }
            for c in outs {
                let found = &self.nodes[c].as_concept().unwrap().format;
                if *found != t.output {
                    violations.push(Violation::FormatMismatch {
                        transformation: node.id.clone(),
                        concept: c.into(),
                        expected: vec![t.output.clone()],
                        found: found.clone(),
                    });
                }
            }
        }

        for node in self.nodes.values() {
            if node.kind() == NodeKind::Concept {
                let producers = self.inputs_of(&node.id);
                if producers.len() > 1 {
                    violations.push(Violation::MultipleProducers {
                        concept: node.id.clone(),
                        producers: producers.iter().map(|p| p.to_string()).collect(),
                    });
                }
            }
            if node.kind() == NodeKind::Attribute && !owned.contains(node.id.as_str()) {
                violations.push(Violation::OrphanAttribute { id: node.id.clone() });
            }
        }
        ValidationReport { violations }
    }

    /// Kahn layering of Concept and Transformation nodes over data-flow
    /// edges: each node sits one stage after its latest predecessor. Ids are
    /// sorted within a stage.
    pub fn topo_schedule(&self) -> Result<Schedule, GraphError> {
        let members: Vec<&str> = self
            .nodes
            .values()
            .filter(|n| matches!(n.kind(), NodeKind::Concept | NodeKind::Transformation))
            .map(|n| n.id.as_str())
            .collect();
        let mut indeg: BTreeMap<&str, usize> = members.iter().map(|m| (*m, 0)).collect();
        let mut succ: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (a, b) in self.flow_edges() {
            succ.entry(a).or_default().push(b);
            *indeg.get_mut(b).unwrap() += 1;
        }
        let mut stages = Vec::new();
        let mut ready: Vec<&str> = indeg.iter().filter(|(_, d)| **d == 0).map(|(k, _)| *k).collect();
        let mut placed = 0;
        while !ready.is_empty() {
            ready.sort_unstable();
            let mut next = Vec::new();
            for &u in &ready {
                for &v in succ.get(u).map_or(&[][..], Vec::as_slice) {
                    let d = indeg.get_mut(v).unwrap();
                    *d -= 1;
                    if *d == 0 {
                        next.push(v);
                    }
                }
            }
            placed += ready.len();
            stages.push(ready.iter().map(|s| s.to_string()).collect());
            ready = next;
        }
        if placed < members.len() {
            let path = self.cycles().into_iter().next().unwrap_or_default();
            return Err(GraphError::CyclicGraph(path));
        }
        Ok(Schedule { stages })
    }

    /// Output type of the chain when each step accepts its predecessor's
    /// output.
    pub fn check_composition(&self, chain: &[&str]) -> Result<DataType, GraphError> {
        let mut steps = Vec::with_capacity(chain.len());
        for (i, id) in chain.iter().enumerate() {
            let t = self.nodes.get(*id).and_then(Node::as_transformation).ok_or(GraphError::NotATransformation(i))?;
            steps.push(t);
        }
        let first = steps.first().ok_or(GraphError::EmptyChain)?;
        let mut current = first.output.clone();
        for (i, t) in steps.iter().enumerate().skip(1) {
            if !t.inputs.contains(&current) {
                return Err(GraphError::CompositionTypeError {
                    position: i,
                    expected: t.inputs.clone(),
                    found: current,
                });
            }
            current = t.output.clone();
        }
        Ok(current)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GraphLoadError> {
        serde_json::from_str(text).map_err(|e| GraphLoadError(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid pipeline graph document: {0}")]
pub struct GraphLoadError(pub String);

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDoc {
    nodes: Vec<Node>,
    edges: Vec<(String, String)>,
}

impl Serialize for PipelineGraph {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        GraphDoc { nodes: self.nodes.values().cloned().collect(), edges: self.edges.clone() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for PipelineGraph {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let doc = GraphDoc::deserialize(d)?;
        let mut g = PipelineGraph::new();
        for n in doc.nodes {
            g = g.add_node(n).map_err(D::Error::custom)?;
        }
        for (a, b) in doc.edges {
            g = g.connect(&a, &b).map_err(D::Error::custom)?;
        }
        Ok(g)
    }
}

/// Node ids of the standard collocation pipeline.
pub mod ids {
    pub const IMAGE: &str = "A";
    pub const TRACK: &str = "B";
    pub const CONVERT: &str = "c";
    pub const COMMON: &str = "Common";
    pub const PROJECT: &str = "f";
    pub const PROJECTED: &str = "Projected";
    pub const MATCH: &str = "t";
    pub const PRODUCT: &str = "PixelAB";
    pub const LOAD: &str = "load";
    pub const STORE: &str = "Store";
}

/// The imager/profiler collocation pipeline: two source Concepts, the
/// convert, project and match transformations with their intermediate
/// Concepts, and the loader feeding the product store.
pub fn collocation_pipeline() -> PipelineGraph {
    use ids::*;
    let a = DataType::plain(FormatTag::ExtAGeoImage);
    let b = DataType::plain(FormatTag::ExtBTrackProfile);
    let c = DataType::plain(FormatTag::ExtCCommon);
    let nodes = [
        Node::concept(IMAGE, a.clone(), &[]),
        Node::concept(TRACK, b.clone(), &[]),
        Node::transformation(CONVERT, "convert", &[a, b], c.clone()),
        Node::concept(COMMON, c.clone(), &[]),
        Node::transformation(PROJECT, "project", std::slice::from_ref(&c), c.clone()),
        Node::concept(PROJECTED, c.clone(), &[]),
        Node::transformation(MATCH, "match", std::slice::from_ref(&c), c.clone()),
        Node::concept(PRODUCT, c.clone(), &[]),
        Node::transformation(LOAD, "load", std::slice::from_ref(&c), c.clone()),
        Node::concept(STORE, c, &[]),
    ];
    let edges = [
        (IMAGE, CONVERT),
        (TRACK, CONVERT),
        (CONVERT, COMMON),
        (COMMON, PROJECT),
        (PROJECT, PROJECTED),
        (PROJECTED, MATCH),
        (MATCH, PRODUCT),
        (PRODUCT, LOAD),
        (LOAD, STORE),
    ];
    let mut g = PipelineGraph::new();
    for n in nodes {
        g = g.add_node(n).expect("fixed ids are unique");
    }
    for (x, y) in edges {
        g = g.connect(x, y).expect("fixed edges alternate");
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(f: FormatTag) -> DataType {
        DataType::plain(f)
    }
    const A: FormatTag = FormatTag::ExtAGeoImage;
    const B: FormatTag = FormatTag::ExtBTrackProfile;
    const C: FormatTag = FormatTag::ExtCCommon;

    #[test]
    fn add_node_value_semantics() {
        let g0 = PipelineGraph::new();
        let g1 = g0.add_node(Node::concept("imgA", t(A), &[])).unwrap();
        assert_eq!(g0.len(), 0);
        assert_eq!(g1.len(), 1);
        assert_eq!(g1.add_node(Node::concept("imgA", t(A), &[])), Err(GraphError::DuplicateId("imgA".into())));
        let before = g1.clone();
        let _ = g1.add_node(Node::attribute("x")).unwrap();
        assert_eq!(g1, before);
    }

    #[test]
    fn connect_rules() {
        let g = PipelineGraph::new()
            .add_node(Node::concept("A", t(A), &[]))
            .unwrap()
            .add_node(Node::concept("B", t(B), &[]))
            .unwrap()
            .add_node(Node::transformation("c", "convert", &[t(A)], t(C)))
            .unwrap()
            .add_node(Node::attribute("lat"))
            .unwrap()
            .add_node(Node::constraint("k", "dt_within", &["lat"], serde_json::Value::Null))
            .unwrap();
        assert!(g.connect("A", "c").is_ok());
        assert!(matches!(g.connect("A", "B"), Err(GraphError::KindMismatch { .. })));
        assert!(g.connect("k", "lat").is_ok());
        assert!(g.connect("A", "lat").is_ok());
        assert_eq!(g.connect("A", "zz"), Err(GraphError::UnknownNode("zz".into())));
        let before = g.clone();
        let _ = g.connect("A", "c").unwrap();
        assert_eq!(g, before);
    }

    #[test]
    fn constraint_needs_attributes() {
        assert!(matches!(
            PipelineGraph::new().add_node(Node::constraint("k", "p", &[], serde_json::Value::Null)),
            Err(GraphError::InvalidNode { .. })
        ));
    }

    fn chain(tags: [FormatTag; 3], declared: (FormatTag, FormatTag)) -> PipelineGraph {
        PipelineGraph::new()
            .add_node(Node::concept("A", t(tags[0]), &[]))
            .unwrap()
            .add_node(Node::transformation("c", "convert", &[t(declared.0)], t(declared.1)))
            .unwrap()
            .add_node(Node::concept("B", t(tags[1]), &[]))
            .unwrap()
            .add_node(Node::transformation("f", "project", &[t(C)], t(C)))
            .unwrap()
            .add_node(Node::concept("C", t(tags[2]), &[]))
            .unwrap()
            .connect("A", "c")
            .unwrap()
            .connect("c", "B")
            .unwrap()
            .connect("B", "f")
            .unwrap()
            .connect("f", "C")
            .unwrap()
    }

    #[test]
    fn valid_chain() {
        assert!(chain([A, C, C], (A, C)).validate().is_ok());
    }

    #[test]
    fn format_mismatch_matches_pairwise_oracle() {
        let all = [A, B, C];
        for &x in &all {
            for &y in &all {
                for &z in &all {
                    let report = chain([x, y, z], (A, C)).validate();
                    let mismatches = [x == A, y == C, y == C, z == C].iter().filter(|ok| !**ok).count();
                    let found =
                        report.violations.iter().filter(|v| matches!(v, Violation::FormatMismatch { .. })).count();
                    assert_eq!(found, mismatches, "{x:?} {y:?} {z:?}");
                }
            }
        }
    }

    #[test]
    fn two_cycle_reported() {
        let g = PipelineGraph::new()
            .add_node(Node::concept("A", t(C), &[]))
            .unwrap()
            .add_node(Node::transformation("c", "convert", &[t(C)], t(C)))
            .unwrap()
            .connect("A", "c")
            .unwrap()
            .connect("c", "A")
            .unwrap();
        let r = g.validate();
        assert!(r.violations.contains(&Violation::Cycle { path: vec!["A".into(), "c".into(), "A".into()] }));
        assert!(matches!(g.topo_schedule(), Err(GraphError::CyclicGraph(_))));
    }

    #[test]
    fn dangling_and_orphans() {
        let g = PipelineGraph::new()
            .add_node(Node::concept("A", t(A), &["ghost"]))
            .unwrap()
            .add_node(Node::transformation("c", "convert", &[t(A)], t(C)))
            .unwrap()
            .add_node(Node::attribute("lonely"))
            .unwrap()
            .connect("A", "c")
            .unwrap();
        let v = g.validate().violations;
        assert!(v.contains(&Violation::DanglingTransformer { id: "c".into() }));
        assert!(v.contains(&Violation::OrphanAttribute { id: "lonely".into() }));
        assert!(v.contains(&Violation::UnknownAttribute { node: "A".into(), attribute: "ghost".into() }));
    }

    #[test]
    fn diamond_and_singleton_schedules() {
        let g = PipelineGraph::new()
            .add_node(Node::concept("A", t(C), &[]))
            .unwrap()
            .add_node(Node::transformation("c", "x", &[t(C)], t(C)))
            .unwrap()
            .add_node(Node::transformation("b", "x", &[t(C)], t(C)))
            .unwrap()
            .add_node(Node::concept("D", t(C), &[]))
            .unwrap();
        let g = [("A", "b"), ("A", "c"), ("b", "D"), ("c", "D")].iter().fold(g, |g, (x, y)| g.connect(x, y).unwrap());
        let s = g.topo_schedule().unwrap();
        assert_eq!(s.stages, vec![vec!["A"], vec!["b", "c"], vec!["D"]]);
        let one = PipelineGraph::new().add_node(Node::concept("n", t(C), &[])).unwrap();
        assert_eq!(one.topo_schedule().unwrap().stages, vec![vec!["n"]]);
    }

    #[test]
    fn standard_pipeline() {
        let g = collocation_pipeline();
        assert!(g.validate().is_ok(), "{:?}", g.validate());
        let s = g.topo_schedule().unwrap();
        assert_eq!(s.stages[0], vec!["A", "B"]);
        assert_eq!(s.stages.len(), 9);
        assert_eq!(g.check_composition(&["c", "f", "t"]).unwrap(), t(C));
        assert_eq!(g.topo_schedule().unwrap(), s);
    }

    #[test]
    fn composition_errors() {
        let projected = DataType::annotated(C, "projected");
        let g = PipelineGraph::new()
            .add_node(Node::transformation("c", "convert", &[t(A), t(B)], t(C)))
            .unwrap()
            .add_node(Node::transformation("f", "project", &[t(C)], projected.clone()))
            .unwrap()
            .add_node(Node::transformation("t", "match", std::slice::from_ref(&projected), t(C)))
            .unwrap()
            .add_node(Node::concept("X", t(C), &[]))
            .unwrap();
        assert_eq!(g.check_composition(&["c", "f", "t"]).unwrap(), t(C));
        assert!(matches!(g.check_composition(&["c", "t"]), Err(GraphError::CompositionTypeError { position: 1, .. })));
        assert_eq!(g.check_composition(&["f"]).unwrap(), projected);
        assert_eq!(g.check_composition(&[]), Err(GraphError::EmptyChain));
        assert_eq!(g.check_composition(&["c", "X"]), Err(GraphError::NotATransformation(1)));
    }

    #[test]
    fn json_round_trip_and_field_order() {
        let g = collocation_pipeline()
            .add_node(Node::attribute("dt"))
            .unwrap()
            .add_node(Node::note("n1", "matches within thresholds"))
            .unwrap()
            .add_node(Node::constraint("k", "dt_within", &["dt"], serde_json::json!({"max_s": 60})))
            .unwrap()
            .connect("PixelAB", "dt")
            .unwrap()
            .connect("k", "dt")
            .unwrap()
            .connect("n1", "t")
            .unwrap();
        let text = g.to_json();
        assert_eq!(PipelineGraph::from_json(&text).unwrap(), g);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let keys: Vec<_> = v["nodes"][0].as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["id", "kind", "label", "payload"]);
        assert_eq!(v["edges"][0], serde_json::json!(["A", "c"]));
        assert_eq!(v["nodes"][2]["payload"]["inputs"], serde_json::json!(["ExtA_GeoImage", "ExtB_TrackProfile"]));
        assert!(PipelineGraph::from_json(r#"{"nodes":[],"edges":[["a","b"]]}"#).is_err());
    }
}
