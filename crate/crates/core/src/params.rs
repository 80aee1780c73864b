//! Trainable parameters: embedding tables, relation features, virtual
//! relation centroids, and fusion logits, plus their initialization, the
//! L2 penalty, and the binary checkpoint format.
//!
//! Every block is reachable through [`ParameterSet::blocks`], so the
//! optimizer, the L2 penalty, and the gradient checker treat all
//! parameters uniformly.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// All trainable arrays. Item embeddings are not stored separately:
/// item `i` reads and writes entity row `align(i)` (one storage, two
/// views).
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    /// M×d user ID embeddings.
    pub user_emb: Matrix,
    /// |E|×d entity ID embeddings; rows `[0, item_count)` are the items.
    pub entity_emb: Matrix,
    /// |R|×d relation features used by clustering. Under the
    /// entity-grounded strategy this is a derived buffer; under the
    /// static strategy it is a free parameter.
    pub relation_feat: Matrix,
    /// K×d virtual relation centroids.
    pub centroids: Matrix,
    /// Pre-softmax fusion weights, length K.
    pub fusion_logits: Vec<f64>,
}

/// Gradients share the exact shapes of the parameters.
pub type GradientSet = ParameterSet;

pub const BLOCK_NAMES: [&str; 5] = [
    "user_emb",
    "entity_emb",
    "relation_feat",
    "centroids",
    "fusion_logits",
];

impl ParameterSet {
    pub fn dim(&self) -> usize {
        self.user_emb.cols()
    }

    pub fn k(&self) -> usize {
        self.fusion_logits.len()
    }

    pub fn zeros_like(&self) -> GradientSet {
        ParameterSet {
            user_emb: Matrix::zeros(self.user_emb.rows(), self.user_emb.cols()),
            entity_emb: Matrix::zeros(self.entity_emb.rows(), self.entity_emb.cols()),
            relation_feat: Matrix::zeros(self.relation_feat.rows(), self.relation_feat.cols()),
            centroids: Matrix::zeros(self.centroids.rows(), self.centroids.cols()),
            fusion_logits: vec![0.0; self.fusion_logits.len()],
        }
    }

    /// Flat registry of every parameter block, in checkpoint order.
    pub fn blocks(&self) -> [(&'static str, &[f64]); 5] {
        [
            (BLOCK_NAMES[0], self.user_emb.data()),
            (BLOCK_NAMES[1], self.entity_emb.data()),
            (BLOCK_NAMES[2], self.relation_feat.data()),
            (BLOCK_NAMES[3], self.centroids.data()),
            (BLOCK_NAMES[4], &self.fusion_logits),
        ]
    }

    pub fn blocks_mut(&mut self) -> [(&'static str, &mut [f64]); 5] {
        [
            (BLOCK_NAMES[0], self.user_emb.data_mut()),
            (BLOCK_NAMES[1], self.entity_emb.data_mut()),
            (BLOCK_NAMES[2], self.relation_feat.data_mut()),
            (BLOCK_NAMES[3], self.centroids.data_mut()),
            (BLOCK_NAMES[4], &mut self.fusion_logits),
        ]
    }

    pub fn total_len(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    pub fn assert_finite(&self) -> Result<()> {
        for (name, block) in self.blocks() {
            if !block.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteValue(format!(
                    "parameter block '{name}' contains a non-finite entry"
                )));
            }
        }
        Ok(())
    }
}

/// Initializes all embedding blocks uniformly in `[-1/sqrt(d), +1/sqrt(d)]`
/// from ChaCha8 seeded with `seed`, drawing in block order (user, entity,
/// relation, centroids) row-major. Fusion logits start at zero, i.e. a
/// uniform softmax.
pub fn init_params(
    user_count: u32,
    entity_count: u32,
    relation_count: u32,
    dim: usize,
    k: usize,
    seed: u64,
) -> ParameterSet {
    let bound = 1.0 / (dim as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |rows: usize, cols: usize| {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Matrix::from_vec(rows, cols, data)
    };
    ParameterSet {
        user_emb: draw(user_count as usize, dim),
        entity_emb: draw(entity_count as usize, dim),
        relation_feat: draw(relation_count as usize, dim),
        centroids: draw(k, dim),
        fusion_logits: vec![0.0; k],
    }
}

/// `lambda * ||theta||_2^2` summed over the whole registry.
pub fn l2_penalty(params: &ParameterSet, lambda: f64) -> f64 {
    let mut sum = 0.0;
    for (_, block) in params.blocks() {
        for v in block {
            sum += v * v;
        }
    }
    lambda * sum
}

/// Adds the penalty gradient `2 * lambda * theta` to every block.
pub fn add_l2_gradient(params: &ParameterSet, lambda: f64, grads: &mut GradientSet) {
    let sources = params.blocks();
    let mut targets = grads.blocks_mut();
    for idx in 0..sources.len() {
        let (_, src) = sources[idx];
        let (_, dst) = &mut targets[idx];
        for i in 0..src.len() {
            dst[i] += 2.0 * lambda * src[i];
        }
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"KGRECKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// A saved model: parameters, the relation → virtual relation assignment,
/// and the propagation depths needed to rebuild the forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParameterSet,
    /// Virtual relation per (closed) relation id, length |R|.
    pub assignment: Vec<u32>,
    /// LWS iterations Q.
    pub iterations: usize,
    /// Propagation layers L.
    pub layers: usize,
}

/// Binary layout: magic, version, seven little-endian u64 counts
/// (M, |E|, |R|, d, K, Q, L), each parameter block row-major as
/// little-endian f64, then the assignment as little-endian i32.
pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let p = &ckpt.params;
    if ckpt.assignment.len() != p.relation_feat.rows() {
        return Err(Error::DimensionMismatch(format!(
            "assignment has {} entries but there are {} relations",
            ckpt.assignment.len(),
            p.relation_feat.rows()
        )));
    }
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let counts = [
        p.user_emb.rows() as u64,
        p.entity_emb.rows() as u64,
        p.relation_feat.rows() as u64,
        p.dim() as u64,
        p.k() as u64,
        ckpt.iterations as u64,
        ckpt.layers as u64,
    ];
    for c in counts {
        buf.extend_from_slice(&c.to_le_bytes());
    }
    for (_, block) in p.blocks() {
        for v in block {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for &a in &ckpt.assignment {
        buf.extend_from_slice(&(a as i32).to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let mut cursor = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cursor + n > bytes.len() {
            return Err(Error::CheckpointFormat(format!(
                "truncated at byte {cursor}, wanted {n} more"
            )));
        }
        let slice = &bytes[cursor..cursor + n];
        cursor += n;
        Ok(slice)
    };
    if take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::CheckpointFormat("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointFormat(format!(
            "unsupported version {version}"
        )));
    }
    let mut counts = [0u64; 7];
    for c in counts.iter_mut() {
        *c = u64::from_le_bytes(take(8)?.try_into().unwrap());
    }
    let [m, e, r, d, k, q, l] = counts.map(|c| c as usize);
    let mut read_block = |len: usize| -> Result<Vec<f64>> {
        let raw = take(len * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let params = ParameterSet {
        user_emb: Matrix::from_vec(m, d, read_block(m * d)?),
        entity_emb: Matrix::from_vec(e, d, read_block(e * d)?),
        relation_feat: Matrix::from_vec(r, d, read_block(r * d)?),
        centroids: Matrix::from_vec(k, d, read_block(k * d)?),
        fusion_logits: read_block(k)?,
    };
    let assign_raw = take(r * 4)?;
    let assignment: Vec<u32> = assign_raw
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes(c.try_into().unwrap()) as u32)
        .collect();
    if cursor != bytes.len() {
        return Err(Error::CheckpointFormat(format!(
            "{} trailing bytes",
            bytes.len() - cursor
        )));
    }
    if let Some(&bad) = assignment.iter().find(|&&a| a as usize >= k) {
        return Err(Error::CheckpointFormat(format!(
            "assignment value {bad} exceeds K={k}"
        )));
    }
    Ok(Checkpoint {
        params,
        assignment,
        iterations: q,
        layers: l,
    })
}
