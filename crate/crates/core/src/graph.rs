//! Directed multimodal dialogue graphs.
//!
//! A dialogue of `n` utterances over `M` modality slots has `M * n` nodes,
//! laid out modality-major: node `m * n + i` is utterance `i` in slot `m`.
//! Intra-edges join same-slot nodes inside the past/future context window;
//! inter-edges join the slots of one utterance in both directions. Each edge
//! carries a type id from an [`EdgeTypeTable`].

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Past (`j`) and future (`k`) context sizes, both inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub past: usize,
    pub future: usize,
}

impl Window {
    pub const fn new(past: usize, future: usize) -> Self {
        Window { past, future }
    }
}

/// How future-context intra-edges are oriented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionMode {
    /// Future utterances `i+1..=i+k` send messages into `i`.
    FutureAsInEdge,
    /// `i` sends to its future utterances, as the edge set is literally
    /// written; coinciding edges are emitted once.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GraphNode {
    pub utterance: usize,
    pub slot: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TypedEdge {
    pub src: GraphNode,
    pub dst: GraphNode,
    pub type_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EdgeKey {
    Intra { slot: usize, lo: usize, hi: usize },
    Inter { lo: usize, hi: usize },
}

/// Edge relation ids for `D` speakers and `M` modality slots.
///
/// Intra types are keyed by `(slot, unordered speaker pair)` and come first,
/// ordered lexicographically; inter types are keyed by the unordered slot
/// pair. There are `M (D² + D + M - 1) / 2` types in total.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeTypeTable {
    pub speakers: usize,
    pub slots: usize,
    ids: BTreeMap<EdgeKey, usize>,
}

impl EdgeTypeTable {
    pub fn new(speakers: usize, slots: usize) -> Result<Self> {
        if speakers == 0 || slots == 0 {
            return Err(Error::contract(
                "enumerate_edge_types",
                format!("need D >= 1 and M >= 1, got D={speakers}, M={slots}"),
            ));
        }
        let mut ids = BTreeMap::new();
        for slot in 0..slots {
            for lo in 0..speakers {
                for hi in lo..speakers {
                    let next = ids.len();
                    ids.insert(EdgeKey::Intra { slot, lo, hi }, next);
                }
            }
        }
        for lo in 0..slots {
            for hi in lo + 1..slots {
                let next = ids.len();
                ids.insert(EdgeKey::Inter { lo, hi }, next);
            }
        }
        Ok(EdgeTypeTable { speakers, slots, ids })
    }

    /// `DM`, the number of distinct edge types.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn intra_count(&self) -> usize {
        self.ids.keys().filter(|k| matches!(k, EdgeKey::Intra { .. })).count()
    }

    pub fn inter_count(&self) -> usize {
        self.len() - self.intra_count()
    }

    /// Closed form `M (D² + D + M - 1) / 2`.
    pub fn formula(speakers: usize, slots: usize) -> usize {
        slots * (speakers * speakers + speakers + slots - 1) / 2
    }

    pub fn intra_id(&self, slot: usize, s1: usize, s2: usize) -> Option<usize> {
        let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
        self.ids.get(&EdgeKey::Intra { slot, lo, hi }).copied()
    }

    pub fn inter_id(&self, m1: usize, m2: usize) -> Option<usize> {
        if m1 == m2 {
            return None;
        }
        let (lo, hi) = if m1 < m2 { (m1, m2) } else { (m2, m1) };
        self.ids.get(&EdgeKey::Inter { lo, hi }).copied()
    }

    /// Human-readable description of a type id.
    pub fn describe(&self, id: usize) -> Option<String> {
        self.ids.iter().find(|(_, &v)| v == id).map(|(k, _)| match k {
            EdgeKey::Intra { slot, lo, hi } => format!("intra(slot {slot}, s{lo}, s{hi})"),
            EdgeKey::Inter { lo, hi } => format!("inter(slot {lo}, slot {hi})"),
        })
    }
}

/// Type id of the edge `src -> dst` given per-utterance speaker ids.
pub fn edge_type_of(src: GraphNode, dst: GraphNode, speakers: &[usize], table: &EdgeTypeTable) -> Result<usize> {
    let speaker = |u: usize| {
        speakers
            .get(u)
            .copied()
            .ok_or_else(|| Error::contract("edge_type_of", format!("utterance {u} has no speaker")))
    };
    let id = if src.slot == dst.slot && src.utterance != dst.utterance {
        table.intra_id(src.slot, speaker(src.utterance)?, speaker(dst.utterance)?)
    } else if src.utterance == dst.utterance && src.slot != dst.slot {
        table.inter_id(src.slot, dst.slot)
    } else {
        return Err(Error::contract(
            "edge_type_of",
            format!("{src:?} -> {dst:?} is neither an intra- nor an inter-edge"),
        ));
    };
    id.ok_or_else(|| Error::contract("edge_type_of", format!("{src:?} -> {dst:?} is outside the type table")))
}

/// Typed directed graph over the utterance x slot nodes of one dialogue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueGraph {
    pub utterances: usize,
    pub slots: usize,
    pub window: Window,
    pub direction: DirectionMode,
    pub edges: Vec<TypedEdge>,
}

impl DialogueGraph {
    pub fn node_count(&self) -> usize {
        self.utterances * self.slots
    }

    /// Flat node index (`slot * n + utterance`).
    pub fn index(&self, node: GraphNode) -> usize {
        node.slot * self.utterances + node.utterance
    }

    pub fn intra_edges(&self) -> usize {
        self.edges.iter().filter(|e| e.src.slot == e.dst.slot).count()
    }

    pub fn inter_edges(&self) -> usize {
        self.edges.len() - self.intra_edges()
    }

    /// In-neighbours (source utterances) of `node` in edge order.
    pub fn in_neighbors(&self, node: GraphNode) -> Vec<GraphNode> {
        self.edges.iter().filter(|e| e.dst == node).map(|e| e.src).collect()
    }
}

/// Build the dialogue graph for `speakers.len()` utterances over `slots`
/// modality slots, typing edges with `table` (which must cover every
/// speaker id and have `table.slots == slots`).
pub fn build_graph(
    speakers: &[usize],
    slots: usize,
    window: Window,
    direction: DirectionMode,
    table: &EdgeTypeTable,
) -> Result<DialogueGraph> {
    let n = speakers.len();
    if n == 0 || slots == 0 {
        return Err(Error::contract(
            "build_graph",
            "need at least one utterance and one modality",
        ));
    }
    if table.slots != slots {
        return Err(Error::contract(
            "build_graph",
            format!("type table has {} slots, graph has {slots}", table.slots),
        ));
    }
    let mut edges = Vec::new();
    let mut seen = BTreeSet::new();
    let mut push = |src: GraphNode, dst: GraphNode, edges: &mut Vec<TypedEdge>| -> Result<()> {
        if seen.insert((src, dst)) {
            let type_id = edge_type_of(src, dst, speakers, table)?;
            edges.push(TypedEdge { src, dst, type_id });
        }
        Ok(())
    };
    for slot in 0..slots {
        let node = |utterance| GraphNode { utterance, slot };
        for i in 0..n {
            for t in i.saturating_sub(window.past)..i {
                push(node(t), node(i), &mut edges)?;
            }
            for t in i + 1..=(i + window.future).min(n - 1) {
                match direction {
                    DirectionMode::FutureAsInEdge => push(node(t), node(i), &mut edges)?,
                    DirectionMode::Literal => push(node(i), node(t), &mut edges)?,
                }
            }
        }
    }
    for i in 0..n {
        for p in 0..slots {
            for q in 0..slots {
                if p != q {
                    push(
                        GraphNode { utterance: i, slot: p },
                        GraphNode { utterance: i, slot: q },
                        &mut edges,
                    )?;
                }
            }
        }
    }
    Ok(DialogueGraph {
        utterances: n,
        slots,
        window,
        direction,
        edges,
    })
}

/// Edge counts `(intra, inter)` by testing every ordered node pair.
/// Independent of [`build_graph`]; used as its oracle.
pub fn count_edges_oracle(n: usize, window: Window, slots: usize, direction: DirectionMode) -> (usize, usize) {
    let (j, k) = (window.past as i64, window.future as i64);
    let mut intra = 0;
    let mut inter = 0;
    for su in 0..n as i64 {
        for sm in 0..slots {
            for du in 0..n as i64 {
                for dm in 0..slots {
                    if sm == dm && su != du {
                        let past = su >= du - j && su < du;
                        let future = match direction {
                            DirectionMode::FutureAsInEdge => su > du && su <= du + k,
                            DirectionMode::Literal => du > su && du <= su + k,
                        };
                        if past || future {
                            intra += 1;
                        }
                    } else if su == du && sm != dm {
                        inter += 1;
                    }
                }
            }
        }
    }
    (intra, inter)
}

/// Distinct edge relations found by enumerating every possible edge among
/// utterances carrying all speaker combinations.
pub fn count_edge_types_oracle(speakers: usize, slots: usize) -> usize {
    let mut kinds = BTreeSet::new();
    for m1 in 0..slots {
        for m2 in 0..slots {
            for s1 in 0..speakers {
                for s2 in 0..speakers {
                    if m1 == m2 {
                        kinds.insert((0u8, m1, s1.min(s2), s1.max(s2)));
                    } else if s1 == s2 {
                        kinds.insert((1u8, m1.min(m2), m1.max(m2), 0));
                    }
                }
            }
        }
    }
    kinds.len()
}
