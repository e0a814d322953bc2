use std::collections::BTreeSet;

use gcfc_core::graph::{
    build_graph, count_edge_types_oracle, count_edges_oracle, edge_type_of, DirectionMode, EdgeTypeTable, GraphNode,
    Window,
};
use proptest::prelude::*;

const MODES: [DirectionMode; 2] = [DirectionMode::FutureAsInEdge, DirectionMode::Literal];

#[test]
fn edge_counts_match_pairwise_oracle_exhaustively() {
    let mut checked = 0;
    for n in 1..=6 {
        for j in 0..=3 {
            for k in 0..=3 {
                for slots in 1..=3 {
                    for mode in MODES {
                        let speakers: Vec<usize> = (0..n).map(|i| i % 2).collect();
                        let table = EdgeTypeTable::new(2, slots).unwrap();
                        let g = build_graph(&speakers, slots, Window::new(j, k), mode, &table).unwrap();
                        let oracle = count_edges_oracle(n, Window::new(j, k), slots, mode);
                        assert_eq!(
                            (g.intra_edges(), g.inter_edges()),
                            oracle,
                            "n={n} j={j} k={k} M={slots} {mode:?}"
                        );
                        checked += 1;
                    }
                }
            }
        }
    }
    assert_eq!(checked, 6 * 4 * 4 * 3 * 2);
}

#[test]
fn type_counts_match_enumeration_and_formula() {
    for d in 1..=5 {
        for m in 1..=3 {
            let table = EdgeTypeTable::new(d, m).unwrap();
            let brute = count_edge_types_oracle(d, m);
            assert_eq!(table.len(), brute, "D={d} M={m}");
            assert_eq!(EdgeTypeTable::formula(d, m), brute, "D={d} M={m}");
            // Direct closed form: M * D(D+1)/2 intra relations plus M(M-1)/2 inter.
            assert_eq!(brute, m * d * (d + 1) / 2 + m * (m - 1) / 2);
        }
    }
}

#[test]
fn built_graph_uses_every_realisable_type() {
    // Every speaker pair occurs within the window and every slot pair
    // within an utterance, so all type ids appear.
    for d in 1..=4 {
        for m in 1..=3 {
            let speakers: Vec<usize> = (0..d).flat_map(|a| (0..d).flat_map(move |b| [a, b])).collect();
            let table = EdgeTypeTable::new(d, m).unwrap();
            let g = build_graph(&speakers, m, Window::new(1, 1), DirectionMode::FutureAsInEdge, &table).unwrap();
            let used: BTreeSet<usize> = g.edges.iter().map(|e| e.type_id).collect();
            assert_eq!(used.len(), table.len(), "D={d} M={m}");
        }
    }
}

fn graph_case() -> impl Strategy<Value = (Vec<usize>, usize, usize, usize, usize)> {
    (1usize..=9, 0usize..=4, 0usize..=4, 1usize..=3, 1usize..=4)
        .prop_flat_map(|(n, j, k, m, d)| (proptest::collection::vec(0..d, n), Just(j), Just(k), Just(m), Just(d)))
}

proptest! {
    #[test]
    fn graph_has_no_duplicates_or_self_loops((spk, j, k, m, d) in graph_case(), literal in any::<bool>()) {
        let mode = if literal { DirectionMode::Literal } else { DirectionMode::FutureAsInEdge };
        let table = EdgeTypeTable::new(d, m).unwrap();
        let g = build_graph(&spk, m, Window::new(j, k), mode, &table).unwrap();
        let pairs: BTreeSet<(GraphNode, GraphNode)> = g.edges.iter().map(|e| (e.src, e.dst)).collect();
        prop_assert_eq!(pairs.len(), g.edges.len());
        prop_assert!(g.edges.iter().all(|e| e.src != e.dst));
        prop_assert_eq!((g.intra_edges(), g.inter_edges()), count_edges_oracle(spk.len(), Window::new(j, k), m, mode));
        for e in &g.edges {
            prop_assert_eq!(e.type_id, edge_type_of(e.src, e.dst, &spk, &table).unwrap());
            prop_assert!(e.type_id < table.len());
        }
    }

    #[test]
    fn intra_types_ignore_direction_and_speaker_order(a in 0usize..5, b in 0usize..5, slot in 0usize..3) {
        let table = EdgeTypeTable::new(5, 3).unwrap();
        prop_assert_eq!(table.intra_id(slot, a, b), table.intra_id(slot, b, a));
        let spk = [a, b];
        let u = |utterance| GraphNode { utterance, slot };
        prop_assert_eq!(
            edge_type_of(u(0), u(1), &spk, &table).unwrap(),
            edge_type_of(u(1), u(0), &spk, &table).unwrap()
        );
    }

    #[test]
    fn renaming_speakers_permutes_types(spk in proptest::collection::vec(0usize..3, 1..8), shift in 1usize..3) {
        // A speaker bijection maps each intra type to another intra type and
        // leaves the edge set unchanged.
        let table = EdgeTypeTable::new(3, 2).unwrap();
        let renamed: Vec<usize> = spk.iter().map(|s| (s + shift) % 3).collect();
        let w = Window::new(2, 2);
        let g1 = build_graph(&spk, 2, w, DirectionMode::FutureAsInEdge, &table).unwrap();
        let g2 = build_graph(&renamed, 2, w, DirectionMode::FutureAsInEdge, &table).unwrap();
        prop_assert_eq!(g1.edges.len(), g2.edges.len());
        let mut mapping = std::collections::BTreeMap::new();
        for (e1, e2) in g1.edges.iter().zip(&g2.edges) {
            prop_assert_eq!((e1.src, e1.dst), (e2.src, e2.dst));
            let prev = mapping.insert(e1.type_id, e2.type_id);
            prop_assert!(prev.is_none() || prev == Some(e2.type_id));
        }
        let image: BTreeSet<usize> = mapping.values().copied().collect();
        prop_assert_eq!(image.len(), mapping.len());
    }

    #[test]
    fn in_neighbours_stay_inside_the_window(n in 1usize..10, j in 0usize..4, k in 0usize..4) {
        let spk = vec![0; n];
        let table = EdgeTypeTable::new(1, 1).unwrap();
        let g = build_graph(&spk, 1, Window::new(j, k), DirectionMode::FutureAsInEdge, &table).unwrap();
        for i in 0..n {
            let node = GraphNode { utterance: i, slot: 0 };
            let got: BTreeSet<usize> = g.in_neighbors(node).iter().map(|s| s.utterance).collect();
            let want: BTreeSet<usize> = (i.saturating_sub(j)..=(i + k).min(n - 1)).filter(|&t| t != i).collect();
            prop_assert_eq!(got, want);
        }
    }
}

#[test]
fn literal_mode_reverses_future_edges() {
    let table = EdgeTypeTable::new(1, 1).unwrap();
    let g = build_graph(&[0, 0, 0], 1, Window::new(0, 1), DirectionMode::Literal, &table).unwrap();
    let pairs: Vec<(usize, usize)> = g.edges.iter().map(|e| (e.src.utterance, e.dst.utterance)).collect();
    assert_eq!(pairs, [(0, 1), (1, 2)]);
    let g = build_graph(&[0, 0, 0], 1, Window::new(0, 1), DirectionMode::FutureAsInEdge, &table).unwrap();
    let pairs: Vec<(usize, usize)> = g.edges.iter().map(|e| (e.src.utterance, e.dst.utterance)).collect();
    assert_eq!(pairs, [(1, 0), (2, 1)]);
}

#[test]
fn rejects_mismatched_tables() {
    let table = EdgeTypeTable::new(2, 2).unwrap();
    assert!(build_graph(&[0, 1], 3, Window::new(1, 1), DirectionMode::Literal, &table).is_err());
    assert!(build_graph(&[0, 2], 2, Window::new(1, 1), DirectionMode::Literal, &table).is_err());
    assert!(build_graph(&[], 2, Window::new(1, 1), DirectionMode::Literal, &table).is_err());
}
