//! Graph convolution over layout graphs.
//!
//! Each relation becomes one edge vector `[node(subject) | predicate | node(object)]`
//! where a node vector is the category embedding followed by the 35 location
//! bits. A two-layer perceptron maps every edge vector to three equal
//! segments: a candidate for the subject, a new edge code and a candidate for
//! the object. Each object averages the candidates it receives and a second
//! perceptron turns the average into the object embedding. Objects without
//! relations take their candidate from a learned linear map of their own
//! node vector instead.

use candle_core::{DType, Device, Tensor};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::graph::{validate_graph, CategoryVocabulary, LayoutGraph, LocationVector, Predicate, LOCATION_BITS};
use crate::nn::{Activation, Linear, Mlp, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub subject: usize,
    pub predicate: Predicate,
    pub object: usize,
}

/// One or more layout graphs flattened into index form. Object `i` of graph
/// `g` keeps its position relative to the other objects of `g`; edges are in
/// canonical order (graph, subject id, predicate, object id) regardless of
/// the order the relations were listed in.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    pub categories: Vec<u32>,
    pub locations: Vec<LocationVector>,
    pub edges: Vec<Edge>,
    pub graph_index: Vec<usize>,
    pub num_graphs: usize,
}

impl GraphBatch {
    pub fn from_graphs(graphs: &[&LayoutGraph], vocab: &CategoryVocabulary) -> Result<Self> {
        let mut batch = GraphBatch {
            categories: Vec::new(),
            locations: Vec::new(),
            edges: Vec::new(),
            graph_index: Vec::new(),
            num_graphs: graphs.len(),
        };
        for (gi, g) in graphs.iter().enumerate() {
            validate_graph(g, vocab).into_result()?;
            let offset = batch.categories.len();
            let index = g.object_index();
            for o in &g.objects {
                batch.categories.push(vocab.id(&o.category).expect("validated") as u32);
                batch.locations.push(o.location);
                batch.graph_index.push(gi);
            }
            let mut rels: Vec<_> = g.relations.iter().collect();
            rels.sort_by(|a, b| {
                (a.subject.as_str(), a.predicate, a.object.as_str())
                    .cmp(&(b.subject.as_str(), b.predicate, b.object.as_str()))
            });
            batch.edges.extend(rels.into_iter().map(|r| Edge {
                subject: offset + index[r.subject.as_str()],
                predicate: r.predicate,
                object: offset + index[r.object.as_str()],
            }));
        }
        Ok(batch)
    }

    pub fn num_objects(&self) -> usize {
        self.categories.len()
    }

    /// Object indices belonging to graph `g`.
    pub fn objects_of(&self, g: usize) -> Vec<usize> {
        (0..self.num_objects()).filter(|&i| self.graph_index[i] == g).collect()
    }

    /// Number of incident edges (as subject or object) per object.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_objects()];
        for e in &self.edges {
            deg[e.subject] += 1;
            deg[e.object] += 1;
        }
        deg
    }
}

pub struct EmbeddingTables {
    pub category: Tensor,
    pub predicate: Tensor,
}

impl EmbeddingTables {
    pub fn new(ps: &mut ParamStore, vocab_size: usize, dim: usize) -> Result<Self> {
        Ok(Self {
            category: ps.normal("gcn.category_embedding", &[vocab_size, dim], 1.0)?,
            predicate: ps.normal("gcn.predicate_embedding", &[Predicate::ALL.len(), dim], 1.0)?,
        })
    }
}

/// The three segments produced by the edge network for every edge.
pub struct EdgeOutput {
    pub subject: Tensor,
    pub edge: Tensor,
    pub object: Tensor,
}

pub struct GraphEncoder {
    pub tables: EmbeddingTables,
    pub edge_net: Mlp,
    pub vertex_net: Mlp,
    pub isolated: Linear,
    segment_dim: usize,
    dtype: DType,
}

impl GraphEncoder {
    pub fn new(ps: &mut ParamStore, cfg: &ModelConfig, vocab_size: usize) -> Result<Self> {
        let tables = EmbeddingTables::new(ps, vocab_size, cfg.embedding_dim)?;
        let edge_net = Mlp::new(
            ps,
            "gcn.edge",
            [cfg.edge_input_dim(), cfg.gcn_hidden, cfg.edge_output_dim()],
            Activation::Relu,
        )?;
        let vertex_net = Mlp::new(
            ps,
            "gcn.vertex",
            [cfg.gcn_segment_dim, cfg.vertex_hidden, cfg.object_dim],
            Activation::Relu,
        )?;
        let isolated = Linear::new(ps, "gcn.isolated", cfg.node_dim(), cfg.gcn_segment_dim)?;
        Ok(Self {
            tables,
            edge_net,
            vertex_net,
            isolated,
            segment_dim: cfg.gcn_segment_dim,
            dtype: ps.dtype(),
        })
    }

    /// `(objects, embedding_dim + 35)`: category embedding then location bits.
    pub fn node_vectors(&self, batch: &GraphBatch) -> Result<Tensor> {
        let ids = Tensor::new(batch.categories.as_slice(), &Device::Cpu)?;
        let cat = self.tables.category.index_select(&ids, 0)?;
        let bits: Vec<f32> = batch
            .locations
            .iter()
            .flat_map(|l| l.bits().map(f32::from))
            .collect();
        let loc = Tensor::from_vec(bits, (batch.num_objects(), LOCATION_BITS), &Device::Cpu)?
            .to_dtype(self.dtype)?;
        Ok(Tensor::cat(&[&cat, &loc], 1)?)
    }

    /// One row per edge: `[node(subject) | predicate | node(object)]`.
    /// `None` when the batch has no edges.
    pub fn build_edge_inputs(&self, batch: &GraphBatch, nodes: &Tensor) -> Result<Option<Tensor>> {
        if batch.edges.is_empty() {
            return Ok(None);
        }
        let idx = |f: fn(&Edge) -> u32| Tensor::new(batch.edges.iter().map(f).collect::<Vec<u32>>(), &Device::Cpu);
        let subj = nodes.index_select(&idx(|e| e.subject as u32)?, 0)?;
        let pred = self.tables.predicate.index_select(&idx(|e| e.predicate.index() as u32)?, 0)?;
        let obj = nodes.index_select(&idx(|e| e.object as u32)?, 0)?;
        Ok(Some(Tensor::cat(&[&subj, &pred, &obj], 1)?))
    }

    pub fn edge_pass(&self, edge_inputs: &Tensor) -> Result<EdgeOutput> {
        let out = self.edge_net.forward(edge_inputs)?;
        let d = self.segment_dim;
        Ok(EdgeOutput {
            subject: out.narrow(1, 0, d)?,
            edge: out.narrow(1, d, d)?,
            object: out.narrow(1, 2 * d, d)?,
        })
    }

    /// Mean of the candidates each object receives; isolated objects use the
    /// learned map of their node vector.
    pub fn pool_candidates(
        &self,
        batch: &GraphBatch,
        nodes: &Tensor,
        edges: Option<&EdgeOutput>,
    ) -> Result<Tensor> {
        let n = batch.num_objects();
        let deg = batch.degrees();
        let isolated: Vec<f32> = deg.iter().map(|&d| if d == 0 { 1.0 } else { 0.0 }).collect();
        let isolated = Tensor::from_vec(isolated, (n, 1), &Device::Cpu)?.to_dtype(self.dtype)?;
        let fallback = self.isolated.forward(nodes)?.broadcast_mul(&isolated)?;
        let Some(edges) = edges else {
            return Ok(fallback);
        };
        let e = batch.edges.len();
        let mut pool = vec![0f64; n * 2 * e];
        for (k, edge) in batch.edges.iter().enumerate() {
            pool[edge.subject * 2 * e + k] = 1.0 / deg[edge.subject] as f64;
            pool[edge.object * 2 * e + e + k] = 1.0 / deg[edge.object] as f64;
        }
        let pool = Tensor::from_vec(pool, (n, 2 * e), &Device::Cpu)?.to_dtype(self.dtype)?;
        let candidates = Tensor::cat(&[&edges.subject, &edges.object], 0)?;
        Ok((pool.matmul(&candidates)? + fallback)?)
    }

    pub fn vertex_pool(
        &self,
        batch: &GraphBatch,
        nodes: &Tensor,
        edges: Option<&EdgeOutput>,
    ) -> Result<Tensor> {
        self.vertex_net.forward(&self.pool_candidates(batch, nodes, edges)?)
    }

    /// Object embeddings, one row per object in batch order.
    pub fn encode(&self, batch: &GraphBatch) -> Result<Tensor> {
        if batch.num_objects() == 0 {
            return Err(Error::Shape("cannot encode a batch without objects".into()));
        }
        let nodes = self.node_vectors(batch)?;
        let edges = match self.build_edge_inputs(batch, &nodes)? {
            Some(v) => Some(self.edge_pass(&v)?),
            None => None,
        };
        self.vertex_pool(batch, &nodes, edges.as_ref())
    }
}
