//! Independent naive reference for the whole forward pass, written
//! directly from the smoothing and fusion definitions with plain nested
//! loops over `Vec<Vec<f64>>`. Shares no code with the library besides
//! the raw inputs it is handed.

pub type Vecs = Vec<Vec<f64>>;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_map(u: &[f64]) -> Vec<f64> {
    let n = dot(u, u).sqrt();
    if n == 0.0 {
        return vec![0.0; u.len()];
    }
    let f = n / (n * n + 1.0);
    u.iter().map(|v| v * f).collect()
}

fn smooth(center: &[f64], neighbor_rows: &[&[f64]], iterations: usize) -> Vec<f64> {
    let mut c = center.to_vec();
    for _ in 0..iterations {
        let mut s = c.clone();
        for row in neighbor_rows {
            let w = dot(&c, row);
            for (si, xi) in s.iter_mut().zip(row.iter()) {
                *si += w * xi;
            }
        }
        c = norm_map(&s);
    }
    c
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Whole-model naive forward: returns (user finals, entity finals).
///
/// `kg_adj[k][h]` lists entity h's neighbors in subgraph k (multiset),
/// `user_items[u]` lists the entity rows of user u's interacted items.
#[allow(clippy::too_many_arguments)]
pub fn forward_finals(
    user0: &Vecs,
    entity0: &Vecs,
    logits: &[f64],
    kg_adj: &[Vec<Vec<u32>>],
    user_items: &[Vec<u32>],
    layers: usize,
    iterations: usize,
) -> (Vecs, Vecs) {
    let alpha = softmax(logits);
    let mut user_layers: Vec<Vecs> = vec![user0.clone()];
    let mut entity_layers: Vec<Vecs> = vec![entity0.clone()];
    for _ in 1..=layers {
        let prev_u = user_layers.last().unwrap().clone();
        let prev_e = entity_layers.last().unwrap().clone();
        let mut next_e: Vecs = Vec::with_capacity(prev_e.len());
        for h in 0..prev_e.len() {
            let mut fused = vec![0.0; prev_e[0].len()];
            for (k, adj) in kg_adj.iter().enumerate() {
                let rows: Vec<&[f64]> = adj[h]
                    .iter()
                    .map(|&t| prev_e[t as usize].as_slice())
                    .collect();
                let enc = smooth(&prev_e[h], &rows, iterations);
                for (fi, ei) in fused.iter_mut().zip(&enc) {
                    *fi += alpha[k] * ei;
                }
            }
            next_e.push(fused);
        }
        let mut next_u: Vecs = Vec::with_capacity(prev_u.len());
        for u in 0..prev_u.len() {
            let rows: Vec<&[f64]> = user_items[u]
                .iter()
                .map(|&t| prev_e[t as usize].as_slice())
                .collect();
            next_u.push(smooth(&prev_u[u], &rows, iterations));
        }
        entity_layers.push(next_e);
        user_layers.push(next_u);
    }
    let sum_layers = |layers: &[Vecs]| -> Vecs {
        let rows = layers[0].len();
        let cols = layers[0][0].len();
        (0..rows)
            .map(|r| {
                (0..cols)
                    .map(|c| layers.iter().map(|l| l[r][c]).sum())
                    .collect()
            })
            .collect()
    };
    (sum_layers(&user_layers), sum_layers(&entity_layers))
}

pub fn score(user_final: &[f64], entity_final: &[f64]) -> f64 {
    dot(user_final, entity_final)
}
