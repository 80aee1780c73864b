//! Immutable in-memory graphs: the knowledge graph with per-relation CSR
//! adjacency (including inverse relations) and the user-item bipartite
//! graph built from training interactions.
//!
//! Both structures are frozen after construction and safe to read from
//! many threads. Neighbor lists are sorted so two builds from the same
//! triple list produce identical arrays.

use crate::error::{Error, Result};

pub type EntityId = u32;
pub type UserId = u32;
pub type ItemId = u32;
pub type RelationId = u32;

/// One knowledge triple (head, relation, tail) over dense ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Triple {
            head,
            relation,
            tail,
        }
    }
}

/// CSR adjacency over one relation: `offsets[h]..offsets[h+1]` indexes the
/// sorted tail list of head `h`. Duplicate triples keep multiset semantics
/// (a tail stored twice appears twice).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationCsr {
    offsets: Vec<u32>,
    tails: Vec<EntityId>,
}

impl RelationCsr {
    #[inline]
    pub fn neighbors(&self, head: EntityId) -> &[EntityId] {
        let h = head as usize;
        &self.tails[self.offsets[h] as usize..self.offsets[h + 1] as usize]
    }

    #[inline]
    pub fn edge_count(&self) -> usize {
        self.tails.len()
    }
}

/// Immutable triple store with per-relation CSR adjacency.
#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    triples: Vec<Triple>,
    adjacency: Vec<RelationCsr>,
    entity_count: u32,
    relation_count: u32,
    inverse_closed: bool,
}

/// Builds the per-relation CSR for `triples`, with each head's tail list
/// sorted ascending.
fn build_adjacency(triples: &[Triple], entity_count: u32, relation_count: u32) -> Vec<RelationCsr> {
    let e = entity_count as usize;
    let mut counts = vec![0u32; relation_count as usize * (e + 1)];
    for t in triples {
        counts[t.relation as usize * (e + 1) + t.head as usize + 1] += 1;
    }
    let mut adjacency = Vec::with_capacity(relation_count as usize);
    for r in 0..relation_count as usize {
        let row = &mut counts[r * (e + 1)..(r + 1) * (e + 1)];
        for h in 0..e {
            row[h + 1] += row[h];
        }
        adjacency.push(RelationCsr {
            offsets: row.to_vec(),
            tails: vec![0; row[e] as usize],
        });
    }
    let mut cursor: Vec<Vec<u32>> = adjacency.iter().map(|a| a.offsets.clone()).collect();
    for t in triples {
        let r = t.relation as usize;
        let slot = cursor[r][t.head as usize];
        adjacency[r].tails[slot as usize] = t.tail;
        cursor[r][t.head as usize] += 1;
    }
    for a in &mut adjacency {
        for h in 0..e {
            let (lo, hi) = (a.offsets[h] as usize, a.offsets[h + 1] as usize);
            a.tails[lo..hi].sort_unstable();
        }
    }
    adjacency
}

impl KnowledgeGraph {
    /// Builds a KG from a dense-id triple list. Duplicates are preserved.
    /// Inverse closure is NOT applied here; see [`KnowledgeGraph::add_inverse_relations`].
    pub fn build(triples: Vec<Triple>, entity_count: u32, relation_count: u32) -> Result<Self> {
        for (i, t) in triples.iter().enumerate() {
            if t.head >= entity_count || t.tail >= entity_count || t.relation >= relation_count {
                return Err(Error::TripleOutOfRange {
                    index: i,
                    head: t.head,
                    relation: t.relation,
                    tail: t.tail,
                    entity_count,
                    relation_count,
                });
            }
        }
        let adjacency = build_adjacency(&triples, entity_count, relation_count);
        debug_assert_eq!(
            adjacency.iter().map(|a| a.edge_count()).sum::<usize>(),
            triples.len()
        );
        Ok(KnowledgeGraph {
            triples,
            adjacency,
            entity_count,
            relation_count,
            inverse_closed: false,
        })
    }

    /// Adds the inverse direction for every canonical triple: relation `r`
    /// gains inverse `r + R`, the triple count doubles. Guarded so it
    /// cannot run twice on the same graph.
    pub fn add_inverse_relations(self) -> Result<Self> {
        if self.inverse_closed {
            return Err(Error::AlreadyClosed);
        }
        let canonical = self.relation_count;
        let mut triples = self.triples;
        triples.reserve(triples.len());
        for i in 0..triples.len() {
            let t = triples[i];
            triples.push(Triple::new(t.tail, t.relation + canonical, t.head));
        }
        let relation_count = canonical * 2;
        let adjacency = build_adjacency(&triples, self.entity_count, relation_count);
        Ok(KnowledgeGraph {
            triples,
            adjacency,
            entity_count: self.entity_count,
            relation_count,
            inverse_closed: true,
        })
    }

    /// Sorted tail list of `(entity, relation)`; empty when none exist.
    pub fn neighbors(&self, entity: EntityId, relation: RelationId) -> Result<&[EntityId]> {
        if entity >= self.entity_count {
            return Err(Error::IndexOutOfRange {
                what: "entity",
                id: entity,
                count: self.entity_count,
            });
        }
        if relation >= self.relation_count {
            return Err(Error::IndexOutOfRange {
                what: "relation",
                id: relation,
                count: self.relation_count,
            });
        }
        Ok(self.adjacency[relation as usize].neighbors(entity))
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entity_count(&self) -> u32 {
        self.entity_count
    }

    pub fn relation_count(&self) -> u32 {
        self.relation_count
    }

    /// Number of canonical relations (half the total once closed).
    pub fn canonical_relation_count(&self) -> u32 {
        if self.inverse_closed {
            self.relation_count / 2
        } else {
            self.relation_count
        }
    }

    pub fn is_inverse_closed(&self) -> bool {
        self.inverse_closed
    }

    /// Triple count per relation id.
    pub fn relation_counts(&self) -> Vec<usize> {
        self.adjacency.iter().map(|a| a.edge_count()).collect()
    }
}

/// User → item CSR over training positives. Edges are deduplicated and
/// each user's item list is sorted.
#[derive(Clone, Debug)]
pub struct BipartiteGraph {
    offsets: Vec<u32>,
    items: Vec<ItemId>,
    user_count: u32,
    item_count: u32,
}

impl BipartiteGraph {
    pub fn build(pairs: &[(UserId, ItemId)], user_count: u32, item_count: u32) -> Result<Self> {
        for &(u, i) in pairs {
            if u >= user_count {
                return Err(Error::IndexOutOfRange {
                    what: "user",
                    id: u,
                    count: user_count,
                });
            }
            if i >= item_count {
                return Err(Error::IndexOutOfRange {
                    what: "item",
                    id: i,
                    count: item_count,
                });
            }
        }
        let mut sorted: Vec<(UserId, ItemId)> = pairs.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut offsets = vec![0u32; user_count as usize + 1];
        for &(u, _) in &sorted {
            offsets[u as usize + 1] += 1;
        }
        for u in 0..user_count as usize {
            offsets[u + 1] += offsets[u];
        }
        let items = sorted.into_iter().map(|(_, i)| i).collect();
        Ok(BipartiteGraph {
            offsets,
            items,
            user_count,
            item_count,
        })
    }

    #[inline]
    pub fn items_of(&self, user: UserId) -> &[ItemId] {
        let u = user as usize;
        &self.items[self.offsets[u] as usize..self.offsets[u + 1] as usize]
    }

    pub fn edge_count(&self) -> usize {
        self.items.len()
    }

    pub fn user_count(&self) -> u32 {
        self.user_count
    }

    pub fn item_count(&self) -> u32 {
        self.item_count
    }
}
