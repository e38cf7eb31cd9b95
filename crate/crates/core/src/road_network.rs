//! Road graphs, exact shortest-path distances and the road network embedding.
//!
//! A location is a graph node. Its embedding is a vector of `eta` unsigned
//! integers where coordinate `i` is the shortest-path distance from the node to
//! the closest member of reference set `i`. Two embeddings are compared with the
//! max-norm of their difference, which never exceeds the true road distance.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block_codec::{BlockParams, CodecError};

pub type NodeId = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("graph must contain at least one node")]
    EmptyGraph,
    #[error("node id {node} out of range for a graph with {node_count} nodes")]
    InvalidNodeId { node: usize, node_count: usize },
    #[error("edge ({u}, {v}) has negative weight {weight}")]
    NegativeWeight { u: usize, v: usize, weight: i64 },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("graph is disconnected: node {unreachable} is unreachable from node 0")]
    DisconnectedGraph { unreachable: usize },
    #[error("edge list line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EmbeddingError {
    #[error("eta must be at least 1")]
    ZeroEta,
    #[error("cannot draw {eta} reference sets of size {set_size} from {node_count} nodes")]
    EtaExceedsBudget {
        eta: usize,
        set_size: usize,
        node_count: usize,
    },
    #[error("reference set {set} is empty")]
    EmptyReferenceSet { set: usize },
    #[error("coordinate {coordinate} = {value} does not fit in {bits} bits")]
    CoordinateOverflow {
        coordinate: usize,
        value: u64,
        bits: u32,
    },
    #[error("coordinate range 2^{bits} does not exceed graph diameter {diameter}")]
    RangeTooSmall { bits: u32, diameter: u64 },
    #[error("vector dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub u: NodeId,
    pub v: NodeId,
    pub weight: u64,
}

/// Weighted, undirected, connected road graph.
#[derive(Debug, Clone)]
pub struct RoadGraph {
    node_count: usize,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<(NodeId, u64)>>,
}

impl RoadGraph {
    /// Validates an edge list and builds the graph.
    ///
    /// Weights are taken as signed so that malformed input can be reported
    /// instead of silently wrapping.
    pub fn new<I>(node_count: usize, edges: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = (usize, usize, i64)>,
    {
        if node_count == 0 {
            return Err(GraphError::EmptyGraph);
        }
        let mut adjacency = vec![Vec::new(); node_count];
        let mut checked = Vec::new();
        for (u, v, w) in edges {
            for node in [u, v] {
                if node >= node_count {
                    return Err(GraphError::InvalidNodeId { node, node_count });
                }
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            if w < 0 {
                return Err(GraphError::NegativeWeight { u, v, weight: w });
            }
            let weight = w as u64;
            adjacency[u].push((v, weight));
            adjacency[v].push((u, weight));
            checked.push(Edge { u, v, weight });
        }
        let graph = RoadGraph {
            node_count,
            edges: checked,
            adjacency,
        };
        if let Some(unreachable) = graph.first_unreachable() {
            return Err(GraphError::DisconnectedGraph { unreachable });
        }
        Ok(graph)
    }

    /// `width × height` lattice with unit edge weights. Node `(x, y)` has id
    /// `y * width + x`.
    pub fn grid(width: usize, height: usize) -> Result<Self, GraphError> {
        let mut edges = Vec::new();
        for y in 0..height {
            for x in 0..width {
                let id = y * width + x;
                if x + 1 < width {
                    edges.push((id, id + 1, 1));
                }
                if y + 1 < height {
                    edges.push((id, id + width, 1));
                }
            }
        }
        RoadGraph::new(width * height, edges)
    }

    /// Parses the plain-text edge list format:
    ///
    /// ```text
    /// # comment
    /// nodes 3
    /// 0 1 5
    /// 1 2 7
    /// ```
    pub fn parse_edge_list(text: &str) -> Result<Self, GraphError> {
        let mut node_count = None;
        let mut edges = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parse_err = |message: String| GraphError::Parse {
                line: line_no,
                message,
            };
            if node_count.is_none() {
                match fields.as_slice() {
                    ["nodes", n] => {
                        let n = n
                            .parse::<usize>()
                            .map_err(|e| parse_err(format!("bad node count {n:?}: {e}")))?;
                        node_count = Some(n);
                        continue;
                    }
                    _ => return Err(parse_err("expected `nodes N` header".into())),
                }
            }
            match fields.as_slice() {
                [u, v, w] => {
                    let u = u
                        .parse::<usize>()
                        .map_err(|e| parse_err(format!("bad node id {u:?}: {e}")))?;
                    let v = v
                        .parse::<usize>()
                        .map_err(|e| parse_err(format!("bad node id {v:?}: {e}")))?;
                    let w = w
                        .parse::<i64>()
                        .map_err(|e| parse_err(format!("bad weight {w:?}: {e}")))?;
                    edges.push((u, v, w));
                }
                _ => return Err(parse_err("expected `u v w`".into())),
            }
        }
        let node_count = node_count.ok_or(GraphError::Parse {
            line: 0,
            message: "missing `nodes N` header".into(),
        })?;
        RoadGraph::new(node_count, edges)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn neighbors(&self, u: NodeId) -> &[(NodeId, u64)] {
        &self.adjacency[u]
    }

    fn check_node(&self, node: NodeId) -> Result<(), GraphError> {
        if node >= self.node_count {
            Err(GraphError::InvalidNodeId {
                node,
                node_count: self.node_count,
            })
        } else {
            Ok(())
        }
    }

    fn first_unreachable(&self) -> Option<NodeId> {
        let mut seen = vec![false; self.node_count];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &(v, _) in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.iter().position(|s| !s)
    }

    /// Multi-source Dijkstra: distance from every node to the nearest source.
    pub fn distances_from(&self, sources: &[NodeId]) -> Result<Vec<u64>, GraphError> {
        let mut dist = vec![u64::MAX; self.node_count];
        let mut heap = BinaryHeap::new();
        for &s in sources {
            self.check_node(s)?;
            dist[s] = 0;
            heap.push(Reverse((0u64, s)));
        }
        while let Some(Reverse((d, u))) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &(v, w) in &self.adjacency[u] {
                let nd = d + w;
                if nd < dist[v] {
                    dist[v] = nd;
                    heap.push(Reverse((nd, v)));
                }
            }
        }
        Ok(dist)
    }

    pub fn shortest_path_dist(&self, u: NodeId, v: NodeId) -> Result<u64, GraphError> {
        self.check_node(v)?;
        Ok(self.distances_from(&[u])?[v])
    }

    /// Largest shortest-path distance between any two nodes. Runs one
    /// Dijkstra per node.
    pub fn diameter(&self) -> u64 {
        (0..self.node_count)
            .map(|u| {
                self.distances_from(&[u])
                    .expect("node ids in range")
                    .into_iter()
                    .max()
                    .unwrap_or(0)
            })
            .max()
            .unwrap_or(0)
    }
}

/// Shape shared by every party in a ride request: embedding dimension and the
/// block layout of each coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingParams {
    pub eta: usize,
    #[serde(flatten)]
    pub blocks: BlockParams,
}

impl EncodingParams {
    pub fn new(eta: usize, l: u32, m: u32) -> Result<Self, EmbeddingError> {
        if eta == 0 {
            return Err(EmbeddingError::ZeroEta);
        }
        Ok(EncodingParams {
            eta,
            blocks: BlockParams::new(l, m)?,
        })
    }

    pub fn l(&self) -> u32 {
        self.blocks.l()
    }

    pub fn m(&self) -> u32 {
        self.blocks.m()
    }

    /// Number of (coordinate, block) positions.
    pub fn positions(&self) -> usize {
        self.eta * self.m() as usize
    }
}

impl fmt::Display for EncodingParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "eta={} l={} m={}", self.eta, self.l(), self.m())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingConfig {
    pub encoding: EncodingParams,
    pub seed: u64,
    /// Size of every reference set; defaults to `ceil(log2(node_count))`.
    pub ref_set_size: Option<usize>,
}

impl EmbeddingConfig {
    pub fn new(eta: usize, l: u32, m: u32, seed: u64) -> Result<Self, EmbeddingError> {
        Ok(EmbeddingConfig {
            encoding: EncodingParams::new(eta, l, m)?,
            seed,
            ref_set_size: None,
        })
    }

    pub fn with_ref_set_size(mut self, size: usize) -> Self {
        self.ref_set_size = Some(size);
        self
    }

    pub fn set_size_for(&self, node_count: usize) -> usize {
        self.ref_set_size
            .unwrap_or_else(|| default_set_size(node_count))
    }

    /// Checks that `2^(m*l)` strictly exceeds the graph diameter, so no
    /// coordinate can overflow its block decomposition.
    pub fn validate_for(&self, graph: &RoadGraph) -> Result<(), EmbeddingError> {
        let diameter = graph.diameter();
        let bits = self.encoding.blocks.total_bits();
        if diameter >= self.encoding.blocks.coordinate_limit() {
            return Err(EmbeddingError::RangeTooSmall { bits, diameter });
        }
        Ok(())
    }
}

fn default_set_size(node_count: usize) -> usize {
    if node_count <= 1 {
        1
    } else {
        (usize::BITS - (node_count - 1).leading_zeros()) as usize
    }
}

/// The `eta` reference node sets behind the embedding coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceSets {
    sets: Vec<Vec<NodeId>>,
}

impl ReferenceSets {
    pub fn new(graph: &RoadGraph, sets: Vec<Vec<NodeId>>) -> Result<Self, EmbeddingError> {
        if sets.is_empty() {
            return Err(EmbeddingError::ZeroEta);
        }
        for (i, set) in sets.iter().enumerate() {
            if set.is_empty() {
                return Err(EmbeddingError::EmptyReferenceSet { set: i });
            }
            for &node in set {
                graph.check_node(node)?;
            }
        }
        Ok(ReferenceSets { sets })
    }

    pub fn eta(&self) -> usize {
        self.sets.len()
    }

    pub fn sets(&self) -> &[Vec<NodeId>] {
        &self.sets
    }
}

/// Draws `eta` reference sets, each sampled without replacement from the
/// node set. Sets may overlap one another.
pub fn build_reference_sets<R: Rng + ?Sized>(
    graph: &RoadGraph,
    cfg: &EmbeddingConfig,
    rng: &mut R,
) -> Result<ReferenceSets, EmbeddingError> {
    let n = graph.node_count();
    let eta = cfg.encoding.eta;
    let set_size = cfg.set_size_for(n);
    if set_size == 0 || set_size > n {
        return Err(EmbeddingError::EtaExceedsBudget {
            eta,
            set_size,
            node_count: n,
        });
    }
    let sets = (0..eta)
        .map(|_| {
            let mut set = index::sample(rng, n, set_size).into_vec();
            set.sort_unstable();
            set
        })
        .collect();
    ReferenceSets::new(graph, sets)
}

/// A location encoding: one unsigned distance per reference set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RneVector {
    pub coords: Vec<u64>,
}

impl RneVector {
    pub fn new(coords: Vec<u64>) -> Self {
        RneVector { coords }
    }

    pub fn zeros(eta: usize) -> Self {
        RneVector {
            coords: vec![0; eta],
        }
    }

    pub fn eta(&self) -> usize {
        self.coords.len()
    }

    /// Confirms the vector has dimension `eta` and every coordinate fits the
    /// block layout.
    pub fn check_fits(&self, params: &EncodingParams) -> Result<(), EmbeddingError> {
        if self.coords.len() != params.eta {
            return Err(EmbeddingError::DimensionMismatch {
                left: self.coords.len(),
                right: params.eta,
            });
        }
        let limit = params.blocks.coordinate_limit();
        for (coordinate, &value) in self.coords.iter().enumerate() {
            if value >= limit {
                return Err(EmbeddingError::CoordinateOverflow {
                    coordinate,
                    value,
                    bits: params.blocks.total_bits(),
                });
            }
        }
        Ok(())
    }
}

impl From<Vec<u64>> for RneVector {
    fn from(coords: Vec<u64>) -> Self {
        RneVector { coords }
    }
}

/// Precomputed distance tables for embedding many nodes against one set of
/// reference sets.
#[derive(Debug, Clone)]
pub struct Embedder {
    // table[i][u] = min distance from u to reference set i
    table: Vec<Vec<u64>>,
}

impl Embedder {
    pub fn new(graph: &RoadGraph, refs: &ReferenceSets) -> Result<Self, EmbeddingError> {
        let table = refs
            .sets()
            .iter()
            .map(|set| graph.distances_from(set))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Embedder { table })
    }

    pub fn node_count(&self) -> usize {
        self.table.first().map_or(0, Vec::len)
    }

    pub fn eta(&self) -> usize {
        self.table.len()
    }

    pub fn embed(&self, u: NodeId) -> Result<RneVector, EmbeddingError> {
        let node_count = self.node_count();
        if u >= node_count {
            return Err(GraphError::InvalidNodeId {
                node: u,
                node_count,
            }
            .into());
        }
        Ok(RneVector::new(
            self.table.iter().map(|row| row[u]).collect(),
        ))
    }

    /// Embeds `u` and checks the result against the block layout.
    pub fn embed_checked(
        &self,
        u: NodeId,
        params: &EncodingParams,
    ) -> Result<RneVector, EmbeddingError> {
        let v = self.embed(u)?;
        v.check_fits(params)?;
        Ok(v)
    }

    pub fn embed_all(&self) -> Vec<RneVector> {
        (0..self.node_count())
            .map(|u| self.embed(u).expect("node in range"))
            .collect()
    }
}

/// Embeds a single node; coordinate `i` is the distance to the nearest member
/// of reference set `i`.
pub fn embed(
    graph: &RoadGraph,
    refs: &ReferenceSets,
    u: NodeId,
    params: &EncodingParams,
) -> Result<RneVector, EmbeddingError> {
    graph.check_node(u)?;
    let coords = refs
        .sets()
        .iter()
        .map(|set| Ok(graph.distances_from(set)?[u]))
        .collect::<Result<Vec<_>, GraphError>>()?;
    let v = RneVector::new(coords);
    v.check_fits(params)?;
    Ok(v)
}

/// Max-norm distance between two encodings.
pub fn rne_distance(a: &RneVector, b: &RneVector) -> Result<u64, EmbeddingError> {
    if a.eta() != b.eta() {
        return Err(EmbeddingError::DimensionMismatch {
            left: a.eta(),
            right: b.eta(),
        });
    }
    Ok(a.coords
        .iter()
        .zip(&b.coords)
        .map(|(&x, &y)| x.abs_diff(y))
        .max()
        .unwrap_or(0))
}
