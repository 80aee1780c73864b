//! Clustering of KG relations into K virtual relations and the resulting
//! partition of the graph into K virtual relational subgraphs.
//!
//! Each relation gets a feature vector, its similarity to every centroid
//! is the inner product, and the relation is assigned to the centroid
//! with the highest similarity (lowest index on ties). The partition
//! covers the graph exactly: every triple lands in the one subgraph its
//! relation is assigned to.

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph};
use crate::matrix::{axpy, dot, Matrix};
use crate::params::ParameterSet;

/// How relation features are obtained for clustering.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClusterStrategy {
    /// Features derived from current entity embeddings: a relation's
    /// feature is the mean of (tail - head) embedding differences over
    /// its triples. Re-clustered periodically during training so the
    /// clusters co-evolve with the embeddings.
    EntityGrounded,
    /// Features are free vectors clustered once at initialization with
    /// ten assign/update alternations, then frozen.
    Static,
}

impl std::str::FromStr for ClusterStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entity-grounded" => Ok(ClusterStrategy::EntityGrounded),
            "static" => Ok(ClusterStrategy::Static),
            other => Err(Error::Config(format!(
                "unknown cluster strategy '{other}' (expected entity-grounded or static)"
            ))),
        }
    }
}

impl std::fmt::Display for ClusterStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClusterStrategy::EntityGrounded => write!(f, "entity-grounded"),
            ClusterStrategy::Static => write!(f, "static"),
        }
    }
}

/// Assignment of every relation to one virtual relation, with the
/// similarity matrix that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationAssignment {
    /// Virtual relation index per relation id, length |R|.
    pub assign: Vec<u32>,
    /// |R|×K inner-product similarities.
    pub similarity: Matrix,
}

impl RelationAssignment {
    pub fn k(&self) -> usize {
        self.similarity.cols()
    }

    /// All relations in one cluster (the K=1 ablation).
    pub fn single(relation_count: u32) -> Self {
        let mut similarity = Matrix::zeros(relation_count as usize, 1);
        similarity.data_mut().iter_mut().for_each(|v| *v = 1.0);
        RelationAssignment {
            assign: vec![0; relation_count as usize],
            similarity,
        }
    }

    /// Rebuilds an assignment from a stored vector (e.g. a checkpoint),
    /// with a one-hot similarity matrix consistent with the argmax rule.
    pub fn from_assign(assign: Vec<u32>, k: usize) -> Self {
        let mut similarity = Matrix::zeros(assign.len(), k);
        for (p, &c) in assign.iter().enumerate() {
            similarity.row_mut(p)[c as usize] = 1.0;
        }
        RelationAssignment { assign, similarity }
    }

    /// One cluster per relation (the K=|R| ablation).
    pub fn identity(relation_count: u32) -> Self {
        let r = relation_count as usize;
        let mut similarity = Matrix::zeros(r, r);
        for p in 0..r {
            similarity.row_mut(p)[p] = 1.0;
        }
        RelationAssignment {
            assign: (0..relation_count).collect(),
            similarity,
        }
    }
}

/// CSR adjacency of one virtual relational subgraph.
#[derive(Clone, Debug, PartialEq)]
pub struct SubgraphCsr {
    offsets: Vec<u32>,
    tails: Vec<EntityId>,
}

impl SubgraphCsr {
    #[inline]
    pub fn neighbors(&self, head: EntityId) -> &[EntityId] {
        let h = head as usize;
        &self.tails[self.offsets[h] as usize..self.offsets[h + 1] as usize]
    }

    pub fn edge_count(&self) -> usize {
        self.tails.len()
    }
}

/// The K virtual relational subgraphs plus the assignment that built them.
#[derive(Clone, Debug)]
pub struct VrkgPartition {
    pub subgraphs: Vec<SubgraphCsr>,
    pub assignment: RelationAssignment,
    entity_count: u32,
}

impl VrkgPartition {
    pub fn k(&self) -> usize {
        self.subgraphs.len()
    }

    pub fn entity_count(&self) -> u32 {
        self.entity_count
    }
}

/// Relation features for clustering. `EntityGrounded` derives the mean
/// (tail - head) embedding difference per relation from the current
/// entity table; relations with no triples keep their stored vector.
/// `Static` returns the stored free vectors as-is.
pub fn relation_features(
    kg: &KnowledgeGraph,
    params: &ParameterSet,
    strategy: ClusterStrategy,
) -> Matrix {
    match strategy {
        ClusterStrategy::Static => params.relation_feat.clone(),
        ClusterStrategy::EntityGrounded => {
            let r = kg.relation_count() as usize;
            let d = params.dim();
            let mut features = params.relation_feat.clone();
            let mut sums = Matrix::zeros(r, d);
            let mut counts = vec![0u64; r];
            for t in kg.triples() {
                let row = sums.row_mut(t.relation as usize);
                let head = params.entity_emb.row(t.head as usize);
                let tail = params.entity_emb.row(t.tail as usize);
                for i in 0..d {
                    row[i] += tail[i] - head[i];
                }
                counts[t.relation as usize] += 1;
            }
            for p in 0..r {
                if counts[p] > 0 {
                    let dst = features.row_mut(p);
                    let src = sums.row(p);
                    let inv = 1.0 / counts[p] as f64;
                    for i in 0..d {
                        dst[i] = src[i] * inv;
                    }
                }
            }
            features
        }
    }
}

/// Inner-product similarities and argmax assignment, ties broken by the
/// lowest cluster index.
pub fn assign_relations(features: &Matrix, centroids: &Matrix) -> RelationAssignment {
    let r = features.rows();
    let k = centroids.rows();
    let mut similarity = Matrix::zeros(r, k);
    let mut assign = vec![0u32; r];
    for p in 0..r {
        let feat = features.row(p);
        let row = similarity.row_mut(p);
        let mut best = 0usize;
        for c in 0..k {
            row[c] = dot(feat, centroids.row(c));
            if row[c] > row[best] {
                best = c;
            }
        }
        assign[p] = best as u32;
    }
    RelationAssignment { assign, similarity }
}

/// Mean of the features assigned to each cluster; an empty cluster keeps
/// its previous centroid (a warning is logged).
pub fn update_centroids(
    features: &Matrix,
    assignment: &RelationAssignment,
    previous: &Matrix,
) -> Matrix {
    let k = previous.rows();
    let d = previous.cols();
    let mut sums = Matrix::zeros(k, d);
    let mut counts = vec![0u64; k];
    for (p, &c) in assignment.assign.iter().enumerate() {
        axpy(1.0, features.row(p), sums.row_mut(c as usize));
        counts[c as usize] += 1;
    }
    let mut out = previous.clone();
    for c in 0..k {
        if counts[c] == 0 {
            eprintln!("warning: virtual relation {c} has no assigned relations; centroid kept");
            continue;
        }
        let inv = 1.0 / counts[c] as f64;
        let dst = out.row_mut(c);
        let src = sums.row(c);
        for i in 0..d {
            dst[i] = src[i] * inv;
        }
    }
    out
}

/// `sum_p similarity[p][assign[p]]`, the quantity the assign/update
/// alternation pushes up.
pub fn assignment_objective(features: &Matrix, centroids: &Matrix, assign: &[u32]) -> f64 {
    assign
        .iter()
        .enumerate()
        .map(|(p, &c)| dot(features.row(p), centroids.row(c as usize)))
        .sum()
}

/// Runs `rounds` assign/update alternations and returns the final
/// assignment together with the updated centroids.
pub fn kmeans_cluster(
    features: &Matrix,
    centroids: &Matrix,
    rounds: usize,
) -> (RelationAssignment, Matrix) {
    let mut centroids = centroids.clone();
    let mut assignment = assign_relations(features, &centroids);
    for _ in 0..rounds {
        assignment = assign_relations(features, &centroids);
        centroids = update_centroids(features, &assignment, &centroids);
    }
    (assignment, centroids)
}

/// Splits the (closed) graph into K subgraphs according to the
/// assignment. Every triple lands in exactly one subgraph, so the
/// subgraph sizes sum to the triple count.
pub fn partition_graph(kg: &KnowledgeGraph, assignment: &RelationAssignment) -> VrkgPartition {
    let k = assignment.k();
    let e = kg.entity_count() as usize;
    debug_assert_eq!(assignment.assign.len(), kg.relation_count() as usize);
    let mut offsets = vec![vec![0u32; e + 1]; k];
    for t in kg.triples() {
        let c = assignment.assign[t.relation as usize] as usize;
        offsets[c][t.head as usize + 1] += 1;
    }
    let mut subgraphs: Vec<SubgraphCsr> = offsets
        .into_iter()
        .map(|mut off| {
            for h in 0..e {
                off[h + 1] += off[h];
            }
            let tails = vec![0u32; off[e] as usize];
            SubgraphCsr {
                offsets: off,
                tails,
            }
        })
        .collect();
    let mut cursor: Vec<Vec<u32>> = subgraphs.iter().map(|s| s.offsets.clone()).collect();
    for t in kg.triples() {
        let c = assignment.assign[t.relation as usize] as usize;
        let slot = cursor[c][t.head as usize];
        subgraphs[c].tails[slot as usize] = t.tail;
        cursor[c][t.head as usize] += 1;
    }
    for s in &mut subgraphs {
        for h in 0..e {
            let (lo, hi) = (s.offsets[h] as usize, s.offsets[h + 1] as usize);
            s.tails[lo..hi].sort_unstable();
        }
    }
    debug_assert_eq!(
        subgraphs.iter().map(|s| s.edge_count()).sum::<usize>(),
        kg.triples().len()
    );
    VrkgPartition {
        subgraphs,
        assignment: assignment.clone(),
        entity_count: kg.entity_count(),
    }
}

/// Triple count per virtual relation; sums to the graph's triple count.
pub fn exposure_counts(partition: &VrkgPartition) -> Vec<usize> {
    partition.subgraphs.iter().map(|s| s.edge_count()).collect()
}

/// Per-relation canonical triple counts collapsed into a histogram:
/// (exposure count, number of relations with that count), sorted by
/// exposure count descending.
pub fn relation_histogram(counts: &[usize]) -> Vec<(usize, usize)> {
    let mut by_count: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
    for &c in counts {
        *by_count.entry(c).or_insert(0) += 1;
    }
    by_count.into_iter().rev().collect()
}
