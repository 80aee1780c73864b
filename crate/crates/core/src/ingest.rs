//! File ingestion: interaction and triple parsing, raw→dense id
//! remapping with item/entity alignment, the seeded train/test split,
//! and the plain-text run manifest.
//!
//! File formats are UTF-8 text, one record per line, tab-separated
//! integer columns. Trailing whitespace (including CR from CRLF files)
//! is trimmed per line; fully blank lines are skipped.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{ItemId, KnowledgeGraph, Triple, UserId};

/// Deduplicated positive interaction pairs over dense ids.
#[derive(Clone, Debug)]
pub struct InteractionSet {
    pub pairs: Vec<(UserId, ItemId)>,
    pub user_count: u32,
    pub item_count: u32,
}

/// Train/test partition of an [`InteractionSet`] with the seed that
/// produced it. The two sides are disjoint, exhaustive, and share the
/// full user/item namespaces.
#[derive(Clone, Debug)]
pub struct SplitDataset {
    pub train: InteractionSet,
    pub test: InteractionSet,
    pub seed: u64,
}

/// Bidirectional raw↔dense id maps. Dense ids are assigned in first
/// appearance order, so re-ingesting the same files reproduces them.
///
/// Items are aligned with entities: item `i` IS entity `i`, and the
/// entity map is seeded with the raw item ids so a triple mentioning an
/// item's raw id resolves to that item's entity row.
#[derive(Clone, Debug, Default)]
pub struct IdMaps {
    user_of_raw: HashMap<u64, u32>,
    pub raw_users: Vec<u64>,
    item_of_raw: HashMap<u64, u32>,
    pub raw_items: Vec<u64>,
    entity_of_raw: HashMap<u64, u32>,
    pub raw_entities: Vec<u64>,
    relation_of_raw: HashMap<u64, u32>,
    pub raw_relations: Vec<u64>,
}

impl IdMaps {
    fn intern(map: &mut HashMap<u64, u32>, reverse: &mut Vec<u64>, raw: u64) -> u32 {
        *map.entry(raw).or_insert_with(|| {
            reverse.push(raw);
            (reverse.len() - 1) as u32
        })
    }

    pub fn user(&self, raw: u64) -> Option<u32> {
        self.user_of_raw.get(&raw).copied()
    }

    pub fn item(&self, raw: u64) -> Option<u32> {
        self.item_of_raw.get(&raw).copied()
    }

    pub fn entity(&self, raw: u64) -> Option<u32> {
        self.entity_of_raw.get(&raw).copied()
    }

    /// Item → entity alignment: identity on `[0, item_count)` by
    /// construction, kept explicit so callers never hard-code it.
    pub fn item_to_entity(&self) -> Vec<u32> {
        (0..self.raw_items.len() as u32).collect()
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(|l| l.trim_end().to_string()).collect())
}

fn parse_int(path: &Path, line_no: usize, token: &str, column: &str) -> Result<u64> {
    token.trim().parse::<u64>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: line_no,
        message: format!("{column} column is not a nonnegative integer: {token:?}"),
    })
}

/// Loads `rawUser<TAB>rawItem[<TAB>rating]` records. Any rated record is
/// treated as a positive; duplicates collapse to one pair. Returns the
/// dense pairs plus the id maps that produced them.
pub fn load_interactions(path: impl AsRef<Path>) -> Result<(InteractionSet, IdMaps)> {
    let path = path.as_ref();
    let mut maps = IdMaps::default();
    let mut pairs = Vec::new();
    let mut seen: HashSet<(u32, u32)> = HashSet::new();
    for (idx, line) in read_lines(path)?.iter().enumerate() {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let raw_user = match cols.next() {
            Some(tok) if !tok.trim().is_empty() => parse_int(path, line_no, tok, "user")?,
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: "missing user column".into(),
                })
            }
        };
        let raw_item = match cols.next() {
            Some(tok) => parse_int(path, line_no, tok, "item")?,
            None => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: "missing item column".into(),
                })
            }
        };
        let u = IdMaps::intern(&mut maps.user_of_raw, &mut maps.raw_users, raw_user);
        let i = IdMaps::intern(&mut maps.item_of_raw, &mut maps.raw_items, raw_item);
        if seen.insert((u, i)) {
            pairs.push((u, i));
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no interactions in {}",
            path.display()
        )));
    }
    // Items double as the first entity ids so KG triples naming an item's
    // raw id land on the item's embedding row.
    maps.entity_of_raw = maps.item_of_raw.clone();
    maps.raw_entities = maps.raw_items.clone();
    let set = InteractionSet {
        pairs,
        user_count: maps.raw_users.len() as u32,
        item_count: maps.raw_items.len() as u32,
    };
    Ok((set, maps))
}

/// Loads `rawHead<TAB>rawRelation<TAB>rawTail` triples, remaps ids through
/// `maps` (aligning item raw ids to item entities), and applies the
/// inverse closure. Entities unseen in interactions get fresh ids.
pub fn load_triples(path: impl AsRef<Path>, maps: &mut IdMaps) -> Result<KnowledgeGraph> {
    let path = path.as_ref();
    let mut triples = Vec::new();
    for (idx, line) in read_lines(path)?.iter().enumerate() {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected 3 tab-separated columns, found {}", cols.len()),
            });
        }
        let raw_head = parse_int(path, line_no, cols[0], "head")?;
        let raw_rel = parse_int(path, line_no, cols[1], "relation")?;
        let raw_tail = parse_int(path, line_no, cols[2], "tail")?;
        let h = IdMaps::intern(&mut maps.entity_of_raw, &mut maps.raw_entities, raw_head);
        let r = IdMaps::intern(&mut maps.relation_of_raw, &mut maps.raw_relations, raw_rel);
        let t = IdMaps::intern(&mut maps.entity_of_raw, &mut maps.raw_entities, raw_tail);
        triples.push(Triple::new(h, r, t));
    }
    let entity_count = maps.raw_entities.len() as u32;
    let relation_count = maps.raw_relations.len() as u32;
    KnowledgeGraph::build(triples, entity_count.max(1), relation_count.max(1))?
        .add_inverse_relations()
}

/// Uniform random split over pairs: `floor(ratio * n)` pairs go to train.
/// The shuffle uses ChaCha8 seeded with `seed`, so the same seed always
/// reproduces the same split. Pair order within each side follows the
/// input order.
pub fn split(interactions: &InteractionSet, seed: u64, ratio: f64) -> Result<SplitDataset> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!(
            "split ratio must be in (0, 1), got {ratio}"
        )));
    }
    let n = interactions.pairs.len();
    let train_len = (ratio * n as f64).floor() as usize;
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let mut train_idx: Vec<usize> = indices[..train_len].to_vec();
    let mut test_idx: Vec<usize> = indices[train_len..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(SplitDataset {
        train: subset(interactions, &train_idx),
        test: subset(interactions, &test_idx),
        seed,
    })
}

/// Per-user stratified variant: each user keeps `floor(ratio * n_u)` of
/// their pairs in train, but always at least one, so no user is left
/// without training positives. Users with a single interaction contribute
/// no test pairs.
pub fn split_stratified(
    interactions: &InteractionSet,
    seed: u64,
    ratio: f64,
) -> Result<SplitDataset> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!(
            "split ratio must be in (0, 1), got {ratio}"
        )));
    }
    let mut per_user: Vec<Vec<usize>> = vec![Vec::new(); interactions.user_count as usize];
    for (idx, &(u, _)) in interactions.pairs.iter().enumerate() {
        per_user[u as usize].push(idx);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for indices in per_user.iter_mut() {
        if indices.is_empty() {
            continue;
        }
        indices.shuffle(&mut rng);
        let keep = ((ratio * indices.len() as f64).floor() as usize).max(1);
        train_idx.extend_from_slice(&indices[..keep.min(indices.len())]);
        if keep < indices.len() {
            test_idx.extend_from_slice(&indices[keep..]);
        }
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(SplitDataset {
        train: subset(interactions, &train_idx),
        test: subset(interactions, &test_idx),
        seed,
    })
}

fn subset(interactions: &InteractionSet, indices: &[usize]) -> InteractionSet {
    InteractionSet {
        pairs: indices.iter().map(|&i| interactions.pairs[i]).collect(),
        user_count: interactions.user_count,
        item_count: interactions.item_count,
    }
}

/// FNV-1a 64-bit hash of a file's bytes, used for manifest provenance.
pub fn fnv1a64_file(path: impl AsRef<Path>) -> Result<u64> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(fnv1a64(&bytes))
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Writes a `key=value` manifest, one entry per line, in the given order.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[(String, String)]) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for (k, v) in entries {
        writeln!(file, "{k}={v}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Reads a `key=value` manifest back into ordered pairs.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let mut entries = Vec::new();
    for (idx, line) in read_lines(path)?.iter().enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => entries.push((k.trim().to_string(), v.trim().to_string())),
            None => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    message: "expected key=value".into(),
                })
            }
        }
    }
    Ok(entries)
}
