//! Relation-typed temporal graph over the utterances of one conversation.
//!
//! An edge `(src, dst)` means `dst` lies inside the context window of `src`
//! (`dst - src` in `[-past_window, future_window]`); the graph block of the
//! network aggregates information into `src` from `dst`.

use serde::{Deserialize, Serialize};

use crate::corpus::Conversation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    pub past_window: usize,
    pub future_window: usize,
    /// Every utterance connects only to itself.
    pub disjoint: bool,
    /// Include `(u, u)` edges outside disjoint mode.
    pub self_loops: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            past_window: 5,
            future_window: 5,
            disjoint: false,
            self_loops: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Past,
    Future,
    SelfLoop,
}

impl Direction {
    fn between(src: usize, dst: usize) -> Self {
        match dst.cmp(&src) {
            std::cmp::Ordering::Less => Direction::Past,
            std::cmp::Ordering::Greater => Direction::Future,
            std::cmp::Ordering::Equal => Direction::SelfLoop,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub usize);

impl RelationId {
    pub const SELF_LOOP: RelationId = RelationId(0);
}

/// Size of the relation vocabulary for `num_speakers` speakers: one reserved
/// self-loop id plus (speaker pair x {past, future}).
pub fn num_relations(num_speakers: usize) -> usize {
    2 * num_speakers * num_speakers + 1
}

/// Injective encoding of (speaker of src, speaker of dst, direction).
pub fn relation_id(speaker_src: usize, speaker_dst: usize, direction: Direction, num_speakers: usize) -> Result<RelationId> {
    for (name, s) in [("speaker_src", speaker_src), ("speaker_dst", speaker_dst)] {
        if s >= num_speakers {
            return Err(Error::validation(name, format!("speaker {s} >= num_speakers {num_speakers}")));
        }
    }
    let pairs = num_speakers * num_speakers;
    let pair = speaker_src * num_speakers + speaker_dst;
    Ok(match direction {
        Direction::SelfLoop => RelationId::SELF_LOOP,
        Direction::Past => RelationId(1 + pair),
        Direction::Future => RelationId(1 + pairs + pair),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub relation: RelationId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationGraph {
    pub num_nodes: usize,
    pub num_relations: usize,
    pub edges: Vec<Edge>,
}

impl ConversationGraph {
    /// `dst` nodes of every edge leaving `src`, in edge order.
    pub fn neighbors(&self, src: usize) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.src == src)
    }
}

pub fn build_graph(conversation: &Conversation, config: &GraphConfig) -> ConversationGraph {
    build_graph_with_speakers(conversation, config, conversation.num_speakers)
}

/// Like [`build_graph`] but with relation ids over a speaker vocabulary of
/// `num_speakers` (typically the model's, which may exceed the conversation's).
pub fn build_graph_with_speakers(conversation: &Conversation, config: &GraphConfig, num_speakers: usize) -> ConversationGraph {
    let n = conversation.len();
    let m = num_speakers.max(1);
    let speakers = conversation.speakers();
    let mut edges = Vec::new();
    if config.disjoint {
        edges.extend((0..n).map(|u| Edge {
            src: u,
            dst: u,
            relation: RelationId::SELF_LOOP,
        }));
    } else {
        for src in 0..n {
            let lo = src.saturating_sub(config.past_window);
            let hi = (src + config.future_window).min(n.saturating_sub(1));
            for dst in lo..=hi {
                if dst == src && !config.self_loops {
                    continue;
                }
                let direction = Direction::between(src, dst);
                // Speaker ids are validated against num_speakers with the dataset.
                let relation = relation_id(speakers[src].min(m - 1), speakers[dst].min(m - 1), direction, m)
                    .expect("speaker ids clamped into range");
                edges.push(Edge { src, dst, relation });
            }
        }
    }
    ConversationGraph {
        num_nodes: n,
        num_relations: num_relations(m),
        edges,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Utterance;
    use std::collections::BTreeSet;

    fn conv(speakers: &[usize], num_speakers: usize) -> Conversation {
        Conversation {
            conv_id: "c".into(),
            num_speakers,
            utterances: speakers
                .iter()
                .enumerate()
                .map(|(index, &speaker)| Utterance {
                    index,
                    speaker,
                    label: 0,
                    audio: vec![],
                    video: vec![],
                })
                .collect(),
        }
    }

    fn pairs(g: &ConversationGraph) -> BTreeSet<(usize, usize)> {
        g.edges.iter().map(|e| (e.src, e.dst)).collect()
    }

    #[test]
    fn three_nodes_full_window() {
        let g = build_graph(&conv(&[0, 1, 0], 2), &GraphConfig::default());
        assert_eq!(g.edges.len(), 9);
        assert_eq!(g.edges.iter().filter(|e| e.src == e.dst).count(), 3);
    }

    #[test]
    fn zero_window_is_self_loops() {
        let cfg = GraphConfig {
            past_window: 0,
            future_window: 0,
            ..GraphConfig::default()
        };
        let g = build_graph(&conv(&[0, 1, 0, 1], 2), &cfg);
        assert_eq!(pairs(&g), (0..4).map(|u| (u, u)).collect());
        assert!(g.edges.iter().all(|e| e.relation == RelationId::SELF_LOOP));
    }

    #[test]
    fn past_only_window() {
        let cfg = GraphConfig {
            past_window: 1,
            future_window: 0,
            ..GraphConfig::default()
        };
        let g = build_graph(&conv(&[0, 1, 0, 1], 2), &cfg);
        let expected: BTreeSet<_> = [(0, 0), (1, 1), (2, 2), (3, 3), (1, 0), (2, 1), (3, 2)].into_iter().collect();
        assert_eq!(pairs(&g), expected);
    }

    #[test]
    fn disjoint_ignores_windows() {
        let cfg = GraphConfig {
            past_window: 7,
            future_window: 3,
            disjoint: true,
            self_loops: false,
        };
        let g = build_graph(&conv(&[0, 1, 1, 0, 1], 2), &cfg);
        assert_eq!(pairs(&g), (0..5).map(|u| (u, u)).collect());
    }

    #[test]
    fn without_self_loops() {
        let cfg = GraphConfig {
            self_loops: false,
            ..GraphConfig::default()
        };
        let g = build_graph(&conv(&[0, 1, 0], 2), &cfg);
        assert_eq!(g.edges.len(), 6);
        assert!(g.edges.iter().all(|e| e.src != e.dst));
    }

    #[test]
    fn relation_ids() {
        assert_eq!(relation_id(0, 0, Direction::SelfLoop, 2).unwrap(), RelationId::SELF_LOOP);
        assert_ne!(
            relation_id(0, 1, Direction::Past, 2).unwrap(),
            relation_id(1, 0, Direction::Past, 2).unwrap()
        );
        assert!(relation_id(2, 0, Direction::Past, 2).is_err());
        assert!(relation_id(0, 5, Direction::Future, 2).is_err());

        let mut ids = BTreeSet::new();
        for s in 0..2 {
            for d in 0..2 {
                for dir in [Direction::Past, Direction::Future, Direction::SelfLoop] {
                    let id = relation_id(s, d, dir, 2).unwrap();
                    assert!(id.0 < num_relations(2));
                    ids.insert(id);
                }
            }
        }
        assert_eq!(ids.len(), 9);
    }

    #[test]
    fn relation_reflects_speakers_and_direction() {
        let g = build_graph(&conv(&[0, 1], 2), &GraphConfig::default());
        for e in &g.edges {
            let dir = Direction::between(e.src, e.dst);
            let s = [0, 1];
            assert_eq!(e.relation, relation_id(s[e.src], s[e.dst], dir, 2).unwrap());
        }
    }
}
