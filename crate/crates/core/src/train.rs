//! BPR training: negative sampling, pairwise ranking loss, exact
//! reverse-mode gradients through the whole propagation, Adam updates,
//! and a finite-difference verification harness.
//!
//! The backward pass is recomputation-based: it keeps the per-layer
//! snapshots from the forward pass and re-derives each node's smoothing
//! chain on the way back, so memory stays O(L * |E| * d). Gradients flow
//! through the propagation weights (they depend on the embeddings), and
//! the finite-difference oracle arbitrates correctness.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::{self, EvalSets, MetricsReport};
use crate::graph::{BipartiteGraph, ItemId, KnowledgeGraph, UserId};
use crate::ingest::SplitDataset;
use crate::lws::{lws_smooth_backward, lws_smooth_trace_into, LwsScratch};
use crate::matrix::{axpy, dot, Matrix};
use crate::model::{self, AlignedBipartite, ModelConfig, PropagationSnapshot};
use crate::params::{add_l2_gradient, init_params, Checkpoint, GradientSet, ParameterSet};
use crate::vrkg::{
    assign_relations, kmeans_cluster, partition_graph, relation_features, update_centroids,
    ClusterStrategy, RelationAssignment, VrkgPartition,
};

/// One (user, positive item, negative item) training triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BprTriple {
    pub user: UserId,
    pub pos: ItemId,
    pub neg: ItemId,
}

/// Optimization hyperparameters.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lr: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Stop early after this many evaluations without improvement of the
    /// largest-cutoff recall. Off by default.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            lambda: 1e-5,
            batch_size: 1024,
            epochs: 1000,
            eval_every: 10,
            seed: 42,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            patience: None,
        }
    }
}

/// How the virtual relational subgraphs are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartitionMode {
    /// Cluster relations into K virtual relations with the given strategy.
    Clustered(ClusterStrategy),
    /// One subgraph holding the whole KG (the K=1 ablation).
    SingleGraph,
    /// One subgraph per relation (the K=|R| ablation).
    PerRelation,
}

/// Per-user positive sets used for negative sampling.
#[derive(Clone, Debug)]
pub struct PositiveIndex {
    full: Vec<Vec<ItemId>>,
    item_count: u32,
}

impl PositiveIndex {
    /// Builds sorted train+test positive lists per user. A user who has
    /// interacted with every item leaves nothing to sample, which is
    /// rejected as a degenerate dataset.
    pub fn build(split: &SplitDataset) -> Result<Self> {
        let m = split.train.user_count as usize;
        let item_count = split.train.item_count;
        let mut full = vec![Vec::new(); m];
        for &(u, i) in split.train.pairs.iter().chain(&split.test.pairs) {
            full[u as usize].push(i);
        }
        for (u, list) in full.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            if list.len() as u32 >= item_count {
                return Err(Error::DegenerateDataset(format!(
                    "user {u} interacted with all {item_count} items; no negatives exist"
                )));
            }
        }
        Ok(PositiveIndex { full, item_count })
    }

    #[inline]
    pub fn is_positive(&self, user: UserId, item: ItemId) -> bool {
        self.full[user as usize].binary_search(&item).is_ok()
    }

    pub fn item_count(&self) -> u32 {
        self.item_count
    }
}

/// Rejection-samples one item the user never interacted with (train or
/// test), uniform over the eligible items.
pub fn sample_negative(index: &PositiveIndex, user: UserId, rng: &mut ChaCha8Rng) -> ItemId {
    loop {
        let j = rng.gen_range(0..index.item_count());
        if !index.is_positive(user, j) {
            return j;
        }
    }
}

/// Draws `batch_size` positives uniformly (with replacement) from the
/// training pairs, pairing each with one fresh uniform negative.
pub fn sample_batch(
    train_pairs: &[(UserId, ItemId)],
    index: &PositiveIndex,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<BprTriple> {
    (0..batch_size)
        .map(|_| {
            let (user, pos) = train_pairs[rng.gen_range(0..train_pairs.len())];
            let neg = sample_negative(index, user, rng);
            BprTriple { user, pos, neg }
        })
        .collect()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Pairwise ranking loss `sum -ln sigmoid(pos - neg)`, computed as
/// `softplus(-(pos - neg))` to avoid overflow.
pub fn bpr_loss(pos_scores: &[f64], neg_scores: &[f64]) -> f64 {
    debug_assert_eq!(pos_scores.len(), neg_scores.len());
    pos_scores
        .iter()
        .zip(neg_scores)
        .map(|(&p, &n)| softplus(-(p - n)))
        .sum()
}

/// Adjoint matrix with per-row touch flags so the backward sweep skips
/// rows whose adjoint is identically zero.
#[derive(Clone)]
struct AdjointRows {
    mat: Matrix,
    touched: Vec<bool>,
}

impl AdjointRows {
    fn new(rows: usize, cols: usize) -> Self {
        AdjointRows {
            mat: Matrix::zeros(rows, cols),
            touched: vec![false; rows],
        }
    }

    #[inline]
    fn add(&mut self, r: usize, scale: f64, v: &[f64]) {
        self.touched[r] = true;
        axpy(scale, v, self.mat.row_mut(r));
    }

    #[inline]
    fn add2(&mut self, r: usize, s1: f64, v1: &[f64], s2: f64, v2: &[f64]) {
        self.touched[r] = true;
        let row = self.mat.row_mut(r);
        axpy(s1, v1, row);
        axpy(s2, v2, row);
    }

    fn active(&self) -> Vec<usize> {
        (0..self.touched.len())
            .filter(|&r| self.touched[r])
            .collect()
    }
}

/// Exact gradients of (batch BPR loss + L2 penalty) with respect to every
/// registry block the forward consumes; the clustering blocks receive
/// only their L2 term (the argmax partition is piecewise constant).
#[allow(clippy::too_many_arguments)]
pub fn backward(
    params: &ParameterSet,
    partition: &VrkgPartition,
    bipartite: &AlignedBipartite,
    cfg: &ModelConfig,
    snapshot: &PropagationSnapshot,
    user_final: &Matrix,
    entity_final: &Matrix,
    align: &[u32],
    batch: &[BprTriple],
    lambda: f64,
) -> Result<GradientSet> {
    let k = partition.k();
    let d = params.dim();
    let m = params.user_emb.rows();
    let e = params.entity_emb.rows();
    let alpha = &snapshot.fusion_weights;

    // Loss seeds on the layer-sum finals.
    let mut star_u = AdjointRows::new(m, d);
    let mut star_e = AdjointRows::new(e, d);
    for t in batch {
        let u = t.user as usize;
        let ai = align[t.pos as usize] as usize;
        let aj = align[t.neg as usize] as usize;
        let margin = dot(user_final.row(u), entity_final.row(ai))
            - dot(user_final.row(u), entity_final.row(aj));
        let c = sigmoid(margin) - 1.0;
        star_u.add2(u, c, entity_final.row(ai), -c, entity_final.row(aj));
        star_e.add(ai, c, user_final.row(u));
        star_e.add(aj, -c, user_final.row(u));
    }

    // Walk the layers backwards; every layer matrix also feeds the final
    // sum, so the star seeds are re-added at each level.
    let mut adj_e = star_e.clone();
    let mut adj_u = star_u.clone();
    let mut alpha_bar = vec![0.0; k];
    let mut scratch = LwsScratch::new(d);
    let mut seed_buf = vec![0.0; d];
    let mut center_buf = vec![0.0; d];
    for l in (1..=cfg.layers).rev() {
        let prev_e = &snapshot.entity_layers[l - 1];
        let prev_u = &snapshot.user_layers[l - 1];
        let mut adj_e_prev = AdjointRows::new(e, d);
        let mut adj_u_prev = AdjointRows::new(m, d);

        for h in adj_e.active() {
            let g = adj_e.mat.row(h);
            let mixed =
                cfg.bipartite_item_update && !bipartite.users_of_entity(h as u32).is_empty();
            let kg_scale = if mixed { 0.5 } else { 1.0 };
            center_buf.iter_mut().for_each(|v| *v = 0.0);
            for (kk, sub) in partition.subgraphs.iter().enumerate() {
                let nbrs = sub.neighbors(h as u32);
                lws_smooth_trace_into(
                    prev_e.row(h),
                    nbrs,
                    prev_e,
                    cfg.iterations,
                    &mut scratch.trace,
                );
                let out = scratch.trace.last().unwrap();
                alpha_bar[kk] += kg_scale * dot(out, g);
                for i in 0..d {
                    seed_buf[i] = alpha[kk] * kg_scale * g[i];
                }
                lws_smooth_backward(
                    nbrs,
                    prev_e,
                    &seed_buf,
                    &mut scratch,
                    &mut center_buf,
                    |t, a, sbar, b, cprev| adj_e_prev.add2(t as usize, a, sbar, b, cprev),
                );
            }
            if mixed {
                let users = bipartite.users_of_entity(h as u32);
                lws_smooth_trace_into(
                    prev_e.row(h),
                    users,
                    prev_u,
                    cfg.iterations,
                    &mut scratch.trace,
                );
                for i in 0..d {
                    seed_buf[i] = 0.5 * g[i];
                }
                lws_smooth_backward(
                    users,
                    prev_u,
                    &seed_buf,
                    &mut scratch,
                    &mut center_buf,
                    |t, a, sbar, b, cprev| adj_u_prev.add2(t as usize, a, sbar, b, cprev),
                );
            }
            adj_e_prev.add(h, 1.0, &center_buf);
        }

        for u in adj_u.active() {
            let g = adj_u.mat.row(u);
            let ents = bipartite.entities_of_user(u as u32);
            lws_smooth_trace_into(
                prev_u.row(u),
                ents,
                prev_e,
                cfg.iterations,
                &mut scratch.trace,
            );
            center_buf.iter_mut().for_each(|v| *v = 0.0);
            lws_smooth_backward(
                ents,
                prev_e,
                g,
                &mut scratch,
                &mut center_buf,
                |t, a, sbar, b, cprev| adj_e_prev.add2(t as usize, a, sbar, b, cprev),
            );
            adj_u_prev.add(u, 1.0, &center_buf);
        }

        // Skip connections from the layer sum.
        for h in star_e.active() {
            adj_e_prev.add(h, 1.0, star_e.mat.row(h));
        }
        for u in star_u.active() {
            adj_u_prev.add(u, 1.0, star_u.mat.row(u));
        }
        adj_e = adj_e_prev;
        adj_u = adj_u_prev;
    }

    let mut grads = params.zeros_like();
    grads.entity_emb = adj_e.mat;
    grads.user_emb = adj_u.mat;
    // Softmax Jacobian: d loss / d logit_j = alpha_j (abar_j - sum alpha abar)
    let mean: f64 = alpha.iter().zip(&alpha_bar).map(|(a, b)| a * b).sum();
    for j in 0..k {
        grads.fusion_logits[j] = alpha[j] * (alpha_bar[j] - mean);
    }
    add_l2_gradient(params, lambda, &mut grads);
    for (name, block) in grads.blocks() {
        if !block.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteGradient { block: name });
        }
    }
    Ok(grads)
}

/// Adam moment estimates, shape-congruent with the parameters.
#[derive(Clone)]
pub struct AdamState {
    m: GradientSet,
    v: GradientSet,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParameterSet) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// Standard Adam update with bias correction over the whole registry.
pub fn adam_step(
    params: &mut ParameterSet,
    grads: &GradientSet,
    state: &mut AdamState,
    cfg: &TrainConfig,
) {
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    let mut theta = params.blocks_mut();
    let g = grads.blocks();
    let mut m = state.m.blocks_mut();
    let mut v = state.v.blocks_mut();
    for b in 0..theta.len() {
        let t_block = &mut theta[b].1;
        let g_block = g[b].1;
        let m_block = &mut m[b].1;
        let v_block = &mut v[b].1;
        for i in 0..g_block.len() {
            let grad = g_block[i];
            m_block[i] = cfg.beta1 * m_block[i] + (1.0 - cfg.beta1) * grad;
            v_block[i] = cfg.beta2 * v_block[i] + (1.0 - cfg.beta2) * grad * grad;
            let m_hat = m_block[i] / bc1;
            let v_hat = v_block[i] / bc2;
            t_block[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Loss and optional metrics for one epoch.
#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub metrics: Option<MetricsReport>,
}

/// Everything a finished run produces.
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub partition: VrkgPartition,
}

fn initial_partition(
    kg: &KnowledgeGraph,
    params: &mut ParameterSet,
    mode: PartitionMode,
) -> Result<VrkgPartition> {
    let r = kg.relation_count();
    let k = params.k();
    let assignment = match mode {
        PartitionMode::SingleGraph => {
            if k != 1 {
                return Err(Error::Config(format!(
                    "single-graph mode requires K=1, got {k}"
                )));
            }
            RelationAssignment::single(r)
        }
        PartitionMode::PerRelation => {
            if k != r as usize {
                return Err(Error::Config(format!(
                    "per-relation mode requires K=|R|={r}, got {k}"
                )));
            }
            RelationAssignment::identity(r)
        }
        PartitionMode::Clustered(ClusterStrategy::Static) => {
            let feats = relation_features(kg, params, ClusterStrategy::Static);
            let (assignment, centroids) = kmeans_cluster(&feats, &params.centroids, 10);
            params.centroids = centroids;
            assignment
        }
        PartitionMode::Clustered(ClusterStrategy::EntityGrounded) => {
            let feats = relation_features(kg, params, ClusterStrategy::EntityGrounded);
            params.relation_feat = feats;
            let assignment = assign_relations(&params.relation_feat, &params.centroids);
            params.centroids =
                update_centroids(&params.relation_feat, &assignment, &params.centroids);
            assignment
        }
    };
    Ok(partition_graph(kg, &assignment))
}

/// Full training loop: (re-cluster when scheduled) -> shuffled minibatches
/// -> forward -> backward -> Adam, with an evaluation every `eval_every`
/// epochs and after the last one. Fully determined by (seed, config,
/// data): reruns produce bit-identical checkpoints.
#[allow(clippy::too_many_arguments)]
pub fn train(
    split: &SplitDataset,
    kg: &KnowledgeGraph,
    align: &[u32],
    mode: PartitionMode,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    cutoffs: &[usize],
) -> Result<TrainOutcome> {
    let bipartite = BipartiteGraph::build(
        &split.train.pairs,
        split.train.user_count,
        split.train.item_count,
    )?;
    if let Some(&bad) = align.iter().find(|&&e| e >= kg.entity_count()) {
        return Err(Error::DimensionMismatch(format!(
            "item alignment references entity {bad} but the graph has {} entities",
            kg.entity_count()
        )));
    }
    let mut seen = vec![false; kg.entity_count() as usize];
    for &e in align {
        if seen[e as usize] {
            return Err(Error::DimensionMismatch(format!(
                "item alignment is not injective: entity {e} appears twice"
            )));
        }
        seen[e as usize] = true;
    }
    let aligned = AlignedBipartite::build(&bipartite, align, kg.entity_count());
    let mut params = init_params(
        split.train.user_count,
        kg.entity_count(),
        kg.relation_count(),
        model_cfg.dim,
        model_cfg.k,
        cfg.seed,
    );
    let mut partition = initial_partition(kg, &mut params, mode)?;
    let index = PositiveIndex::build(split)?;
    let sets = EvalSets::from_split(split);
    let mut adam = AdamState::new(&params);
    // Separate stream from parameter initialization.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut history = Vec::with_capacity(cfg.epochs);
    let n_pairs = split.train.pairs.len();
    let mut order: Vec<usize> = (0..n_pairs).collect();
    let mut best_recall = f64::NEG_INFINITY;
    let mut evals_since_best = 0usize;

    for epoch in 1..=cfg.epochs {
        if epoch > 1
            && (epoch - 1) % cfg.eval_every == 0
            && mode == PartitionMode::Clustered(ClusterStrategy::EntityGrounded)
        {
            params.relation_feat = relation_features(kg, &params, ClusterStrategy::EntityGrounded);
            let assignment = assign_relations(&params.relation_feat, &params.centroids);
            params.centroids =
                update_centroids(&params.relation_feat, &assignment, &params.centroids);
            partition = partition_graph(kg, &assignment);
        }

        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<BprTriple> = chunk
                .iter()
                .map(|&idx| {
                    let (user, pos) = split.train.pairs[idx];
                    let neg = sample_negative(&index, user, &mut rng);
                    BprTriple { user, pos, neg }
                })
                .collect();
            let snapshot = model::forward(&params, &partition, &aligned, model_cfg);
            let (user_final, entity_final) = model::final_representations(&snapshot);
            let (pos_scores, neg_scores): (Vec<f64>, Vec<f64>) = batch
                .iter()
                .map(|t| {
                    (
                        model::predict(&user_final, &entity_final, align, t.user, t.pos),
                        model::predict(&user_final, &entity_final, align, t.user, t.neg),
                    )
                })
                .unzip();
            epoch_loss += bpr_loss(&pos_scores, &neg_scores);
            let grads = backward(
                &params,
                &partition,
                &aligned,
                model_cfg,
                &snapshot,
                &user_final,
                &entity_final,
                align,
                &batch,
                cfg.lambda,
            )?;
            adam_step(&mut params, &grads, &mut adam, cfg);
            params.assert_finite()?;
        }
        let mean_loss = epoch_loss / n_pairs as f64;

        let metrics = if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            Some(eval::evaluate(
                &params, &partition, &aligned, align, &sets, cutoffs, model_cfg,
            ))
        } else {
            None
        };
        if let (Some(report), Some(patience)) = (&metrics, cfg.patience) {
            let recall = report.rows.last().map_or(0.0, |r| r.recall);
            if recall > best_recall {
                best_recall = recall;
                evals_since_best = 0;
            } else {
                evals_since_best += 1;
            }
            history.push(EpochRecord {
                epoch,
                mean_loss,
                metrics,
            });
            if evals_since_best >= patience {
                break;
            }
            continue;
        }
        history.push(EpochRecord {
            epoch,
            mean_loss,
            metrics,
        });
    }

    let checkpoint = Checkpoint {
        params,
        assignment: partition.assignment.assign.clone(),
        iterations: model_cfg.iterations,
        layers: model_cfg.layers,
    };
    Ok(TrainOutcome {
        checkpoint,
        history,
        partition,
    })
}

/// Training log CSV: `epoch,loss,recall@20,ndcg@20,hr@20,precision@20`,
/// with the metric columns blank between evaluation epochs.
pub fn write_training_log(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(file, "epoch,loss,recall@20,ndcg@20,hr@20,precision@20")
        .map_err(|e| Error::io(path, e))?;
    for rec in history {
        match rec.metrics.as_ref().and_then(|m| m.row_at(20)) {
            Some(row) => writeln!(
                file,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                rec.epoch, rec.mean_loss, row.recall, row.ndcg, row.hr, row.precision
            ),
            None => writeln!(file, "{},{:.6},,,,", rec.epoch, rec.mean_loss),
        }
        .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub mod fdcheck {
    //! Finite-difference verification of the analytic gradients on a
    //! small fixed problem: 5 users, 8 items, 12 entities, 4 canonical
    //! relations, K=2, Q=2, L=2, d=8. The partition is frozen while
    //! differentiating, so the loss is a smooth function of the
    //! parameters.

    use super::*;

    pub struct ToyProblem {
        pub partition: VrkgPartition,
        pub bipartite: AlignedBipartite,
        pub align: Vec<u32>,
        pub batch: Vec<BprTriple>,
        pub params: ParameterSet,
        pub cfg: ModelConfig,
        pub lambda: f64,
    }

    pub fn toy_problem(seed: u64) -> ToyProblem {
        use crate::graph::Triple;
        let users = 5u32;
        let items = 8u32;
        let entities = 12u32;
        let relations = 4u32;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let triples: Vec<Triple> = (0..20)
            .map(|_| {
                Triple::new(
                    rng.gen_range(0..entities),
                    rng.gen_range(0..relations),
                    rng.gen_range(0..entities),
                )
            })
            .collect();
        let kg = KnowledgeGraph::build(triples, entities, relations)
            .unwrap()
            .add_inverse_relations()
            .unwrap();
        let mut pairs = Vec::new();
        for u in 0..users {
            let mut owned: Vec<u32> = Vec::new();
            while owned.len() < 3 {
                let i = rng.gen_range(0..items);
                if !owned.contains(&i) {
                    owned.push(i);
                }
            }
            for &i in &owned {
                pairs.push((u, i));
            }
        }
        let bip = BipartiteGraph::build(&pairs, users, items).unwrap();
        let align: Vec<u32> = (0..items).collect();
        let aligned = AlignedBipartite::build(&bip, &align, entities);
        let mut params = init_params(users, entities, kg.relation_count(), 8, 2, seed);
        let feats = relation_features(&kg, &params, ClusterStrategy::EntityGrounded);
        params.relation_feat = feats;
        let assignment = assign_relations(&params.relation_feat, &params.centroids);
        params.centroids = update_centroids(&params.relation_feat, &assignment, &params.centroids);
        let partition = partition_graph(&kg, &assignment);
        // One BPR triple per user; negatives outside each user's items.
        let mut per_user: Vec<Vec<u32>> = vec![Vec::new(); users as usize];
        for &(u, i) in &pairs {
            per_user[u as usize].push(i);
        }
        let batch: Vec<BprTriple> = (0..users)
            .map(|u| {
                let pos = per_user[u as usize][0];
                let neg = (0..items)
                    .find(|j| !per_user[u as usize].contains(j))
                    .unwrap();
                BprTriple { user: u, pos, neg }
            })
            .collect();
        ToyProblem {
            partition,
            bipartite: aligned,
            align,
            batch,
            params,
            cfg: ModelConfig {
                layers: 2,
                iterations: 2,
                k: 2,
                dim: 8,
                bipartite_item_update: false,
            },
            lambda: 1e-3,
        }
    }

    /// Total loss (batch BPR + L2 penalty) as a pure function of the
    /// parameters, with the partition held fixed.
    pub fn loss_at(problem: &ToyProblem, params: &ParameterSet) -> f64 {
        let snapshot = model::forward(params, &problem.partition, &problem.bipartite, &problem.cfg);
        let (user_final, entity_final) = model::final_representations(&snapshot);
        let (pos, neg): (Vec<f64>, Vec<f64>) = problem
            .batch
            .iter()
            .map(|t| {
                (
                    model::predict(&user_final, &entity_final, &problem.align, t.user, t.pos),
                    model::predict(&user_final, &entity_final, &problem.align, t.user, t.neg),
                )
            })
            .unzip();
        bpr_loss(&pos, &neg) + crate::params::l2_penalty(params, problem.lambda)
    }

    pub fn analytic_gradients(problem: &ToyProblem, params: &ParameterSet) -> Result<GradientSet> {
        let snapshot = model::forward(params, &problem.partition, &problem.bipartite, &problem.cfg);
        let (user_final, entity_final) = model::final_representations(&snapshot);
        backward(
            params,
            &problem.partition,
            &problem.bipartite,
            &problem.cfg,
            &snapshot,
            &user_final,
            &entity_final,
            &problem.align,
            &problem.batch,
            problem.lambda,
        )
    }

    #[derive(Clone, Debug)]
    pub struct FdOutcome {
        pub checked: usize,
        pub failures: usize,
        pub worst_rel: f64,
        pub per_block: Vec<(&'static str, usize, usize)>,
    }

    /// Central finite differences (given step) against the analytic
    /// gradients, visiting every `stride`-th coordinate of each block.
    /// A coordinate passes when `|fd - analytic|` is below
    /// `max(abs_floor, rel_tol * max(|fd|, |analytic|))`.
    pub fn compare(
        problem: &ToyProblem,
        step: f64,
        rel_tol: f64,
        abs_floor: f64,
        stride: usize,
    ) -> Result<FdOutcome> {
        let grads = analytic_gradients(problem, &problem.params)?;
        let mut checked = 0usize;
        let mut failures = 0usize;
        let mut worst_rel: f64 = 0.0;
        let mut per_block = Vec::new();
        for b in 0..5 {
            let block_len = grads.blocks()[b].1.len();
            let name = grads.blocks()[b].0;
            let mut block_checked = 0usize;
            let mut block_failures = 0usize;
            let mut i = 0usize;
            while i < block_len {
                let mut plus = problem.params.clone();
                plus.blocks_mut()[b].1[i] += step;
                let mut minus = problem.params.clone();
                minus.blocks_mut()[b].1[i] -= step;
                let fd = (loss_at(problem, &plus) - loss_at(problem, &minus)) / (2.0 * step);
                let analytic = grads.blocks()[b].1[i];
                let err = (fd - analytic).abs();
                let scale = fd.abs().max(analytic.abs());
                let rel = if scale > 0.0 { err / scale } else { 0.0 };
                worst_rel = worst_rel.max(if err <= abs_floor { 0.0 } else { rel });
                if err > abs_floor && rel >= rel_tol {
                    block_failures += 1;
                }
                block_checked += 1;
                i += stride;
            }
            checked += block_checked;
            failures += block_failures;
            per_block.push((name, block_checked, block_failures));
        }
        Ok(FdOutcome {
            checked,
            failures,
            worst_rel,
            per_block,
        })
    }

    /// The gate used by "verified" runs: every coordinate of the toy
    /// problem must pass at the documented tolerances.
    pub fn verify() -> Result<FdOutcome> {
        let problem = toy_problem(7);
        let outcome = compare(&problem, 1e-4, 1e-4, 1e-7, 1)?;
        if outcome.failures > 0 {
            return Err(Error::GradientCheck {
                failures: outcome.failures,
                worst: outcome.worst_rel,
            });
        }
        Ok(outcome)
    }
}
