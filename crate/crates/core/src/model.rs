//! The full forward pass: per-subgraph entity smoothing fused by
//! attention weights, user smoothing over interacted items, L stacked
//! layers advanced in lockstep from the same layer-(l-1) snapshot, and
//! layer-sum final representations scored by inner product.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;
use crate::lws;
use crate::matrix::{axpy, dot, Matrix};
use crate::params::ParameterSet;
use crate::vrkg::VrkgPartition;

/// Propagation depths. `k` and `dim` are carried for validation against
/// the parameter shapes; the forward pass reads the shapes themselves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Stacked propagation layers L.
    pub layers: usize,
    /// Smoothing iterations Q inside each layer.
    pub iterations: usize,
    /// Virtual relation count K.
    pub k: usize,
    /// Embedding dimension d.
    pub dim: usize,
    /// Experimental: also propagate user information back into item
    /// entity rows through the bipartite graph. Off by default; the
    /// default model updates items only through the KG side.
    pub bipartite_item_update: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 2,
            iterations: 3,
            k: 3,
            dim: 64,
            bipartite_item_update: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 || self.iterations < 1 || self.k < 1 || self.dim < 1 {
            return Err(Error::Config(format!(
                "layers, iterations, k, and dim must all be >= 1 \
                 (got L={}, Q={}, K={}, d={})",
                self.layers, self.iterations, self.k, self.dim
            )));
        }
        Ok(())
    }
}

/// The bipartite graph re-expressed in entity rows: for each user the
/// entity rows of their interacted items, and for each item entity the
/// users that interacted with it (used only by the experimental
/// symmetric mode).
#[derive(Clone, Debug)]
pub struct AlignedBipartite {
    user_offsets: Vec<u32>,
    user_entities: Vec<u32>,
    item_offsets: Vec<u32>,
    item_users: Vec<u32>,
    user_count: u32,
    entity_count: u32,
}

impl AlignedBipartite {
    pub fn build(bipartite: &BipartiteGraph, align: &[u32], entity_count: u32) -> Self {
        let m = bipartite.user_count() as usize;
        let e = entity_count as usize;
        let mut user_offsets = vec![0u32; m + 1];
        let mut item_offsets = vec![0u32; e + 1];
        for u in 0..m {
            let items = bipartite.items_of(u as u32);
            user_offsets[u + 1] = user_offsets[u] + items.len() as u32;
            for &i in items {
                item_offsets[align[i as usize] as usize + 1] += 1;
            }
        }
        for h in 0..e {
            item_offsets[h + 1] += item_offsets[h];
        }
        let mut user_entities = vec![0u32; user_offsets[m] as usize];
        let mut item_users = vec![0u32; item_offsets[e] as usize];
        let mut cursor = item_offsets.clone();
        for u in 0..m {
            let base = user_offsets[u] as usize;
            for (j, &i) in bipartite.items_of(u as u32).iter().enumerate() {
                let ent = align[i as usize];
                user_entities[base + j] = ent;
                item_users[cursor[ent as usize] as usize] = u as u32;
                cursor[ent as usize] += 1;
            }
        }
        let lonely = (0..m)
            .filter(|&u| user_offsets[u] == user_offsets[u + 1])
            .count();
        if lonely > 0 {
            eprintln!("warning: {lonely} users have no training interactions");
        }
        AlignedBipartite {
            user_offsets,
            user_entities,
            item_offsets,
            item_users,
            user_count: m as u32,
            entity_count,
        }
    }

    #[inline]
    pub fn entities_of_user(&self, u: u32) -> &[u32] {
        let u = u as usize;
        &self.user_entities[self.user_offsets[u] as usize..self.user_offsets[u + 1] as usize]
    }

    #[inline]
    pub fn users_of_entity(&self, h: u32) -> &[u32] {
        let h = h as usize;
        &self.item_users[self.item_offsets[h] as usize..self.item_offsets[h + 1] as usize]
    }

    pub fn user_count(&self) -> u32 {
        self.user_count
    }

    pub fn entity_count(&self) -> u32 {
        self.entity_count
    }
}

/// All per-layer matrices produced by one forward pass. Layer 0 is the
/// raw ID embeddings; `per_vrkg_buffers` holds the K pre-fusion entity
/// matrices of the last computed layer.
#[derive(Clone, Debug)]
pub struct PropagationSnapshot {
    pub entity_layers: Vec<Matrix>,
    pub user_layers: Vec<Matrix>,
    pub per_vrkg_buffers: Vec<Matrix>,
    pub fusion_weights: Vec<f64>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// One entity layer: for every subgraph k, each entity is smoothed over
/// its layer-(l-1) neighbors with the layer-(l-1) center; the K results
/// are fused with the attention weights. Returns the fused matrix and
/// the K pre-fusion buffers.
pub fn encode_entities_layer(
    prev_entities: &Matrix,
    partition: &VrkgPartition,
    alpha: &[f64],
    iterations: usize,
) -> (Matrix, Vec<Matrix>) {
    let e = prev_entities.rows();
    let d = prev_entities.cols();
    let buffers: Vec<Matrix> = partition
        .subgraphs
        .iter()
        .map(|sub| {
            let mut buf = Matrix::zeros(e, d);
            buf.data_mut()
                .par_chunks_mut(d)
                .enumerate()
                .for_each(|(h, out)| {
                    let smoothed = lws::lws_smooth(
                        prev_entities.row(h),
                        sub.neighbors(h as u32),
                        prev_entities,
                        iterations,
                    );
                    out.copy_from_slice(&smoothed);
                });
            buf
        })
        .collect();
    let mut fused = Matrix::zeros(e, d);
    fused
        .data_mut()
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(h, out)| {
            for (k, buf) in buffers.iter().enumerate() {
                axpy(alpha[k], buf.row(h), out);
            }
        });
    (fused, buffers)
}

/// One user layer: each user is smoothed over the layer-(l-1) entity rows
/// of their interacted items. Items are not written back here.
pub fn encode_users_layer(
    prev_users: &Matrix,
    prev_entities: &Matrix,
    bipartite: &AlignedBipartite,
    iterations: usize,
) -> Matrix {
    let d = prev_users.cols();
    let mut out = Matrix::zeros(prev_users.rows(), d);
    out.data_mut()
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(u, row)| {
            let smoothed = lws::lws_smooth(
                prev_users.row(u),
                bipartite.entities_of_user(u as u32),
                prev_entities,
                iterations,
            );
            row.copy_from_slice(&smoothed);
        });
    out
}

/// Experimental symmetric mode: item entity rows are averaged with a
/// bipartite smoothing over their users' layer-(l-1) vectors.
fn mix_in_user_side(
    fused: &mut Matrix,
    prev_entities: &Matrix,
    prev_users: &Matrix,
    bipartite: &AlignedBipartite,
    iterations: usize,
) {
    let d = fused.cols();
    fused
        .data_mut()
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(h, row)| {
            let users = bipartite.users_of_entity(h as u32);
            if users.is_empty() {
                return;
            }
            let smoothed = lws::lws_smooth(prev_entities.row(h), users, prev_users, iterations);
            for i in 0..d {
                row[i] = 0.5 * (row[i] + smoothed[i]);
            }
        });
}

/// Runs the full L-layer propagation from the ID embeddings. Both graphs
/// advance from the same layer-(l-1) snapshot; neither side sees the
/// other's layer-l output early.
pub fn forward(
    params: &ParameterSet,
    partition: &VrkgPartition,
    bipartite: &AlignedBipartite,
    cfg: &ModelConfig,
) -> PropagationSnapshot {
    let alpha = softmax(&params.fusion_logits);
    let mut entity_layers = vec![params.entity_emb.clone()];
    let mut user_layers = vec![params.user_emb.clone()];
    let mut per_vrkg_buffers = Vec::new();
    for _ in 1..=cfg.layers {
        let prev_e = entity_layers.last().unwrap();
        let prev_u = user_layers.last().unwrap();
        let (mut fused, buffers) = encode_entities_layer(prev_e, partition, &alpha, cfg.iterations);
        if cfg.bipartite_item_update {
            mix_in_user_side(&mut fused, prev_e, prev_u, bipartite, cfg.iterations);
        }
        let users = encode_users_layer(prev_u, prev_e, bipartite, cfg.iterations);
        per_vrkg_buffers = buffers;
        entity_layers.push(fused);
        user_layers.push(users);
    }
    PropagationSnapshot {
        entity_layers,
        user_layers,
        per_vrkg_buffers,
        fusion_weights: alpha,
    }
}

/// Layer-sum finals: `e* = sum_l e^(l)` for users and entities.
pub fn final_representations(snapshot: &PropagationSnapshot) -> (Matrix, Matrix) {
    let sum = |layers: &[Matrix]| {
        let mut out = layers[0].clone();
        for layer in &layers[1..] {
            let dst = out.data_mut();
            let src = layer.data();
            for i in 0..src.len() {
                dst[i] += src[i];
            }
        }
        out
    };
    (sum(&snapshot.user_layers), sum(&snapshot.entity_layers))
}

/// Predicted preference of user `u` for item `i`: inner product of the
/// final user row and the final entity row the item is aligned to.
#[inline]
pub fn predict(user_final: &Matrix, entity_final: &Matrix, align: &[u32], u: u32, i: u32) -> f64 {
    dot(
        user_final.row(u as usize),
        entity_final.row(align[i as usize] as usize),
    )
}

const MATRIX_MAGIC: &[u8; 8] = b"KGRECMAT";

/// Debug dump of one matrix: magic, rows and cols as little-endian u64,
/// then the entries row-major as little-endian f64.
pub fn write_matrix(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(16 + m.data().len() * 8);
    buf.extend_from_slice(MATRIX_MAGIC);
    buf.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

impl PropagationSnapshot {
    /// Writes every layer matrix into `dir` for offline inspection.
    pub fn dump_layers(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for (l, m) in self.entity_layers.iter().enumerate() {
            write_matrix(dir.join(format!("entity_layer_{l}.bin")), m)?;
        }
        for (l, m) in self.user_layers.iter().enumerate() {
            write_matrix(dir.join(format!("user_layer_{l}.bin")), m)?;
        }
        Ok(())
    }
}
