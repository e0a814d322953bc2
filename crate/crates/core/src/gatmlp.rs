//! Edge-typed graph attention with GRU combination, and the GAT-MLP layer
//! built from it.
//!
//! Attention follows GATv2: for an edge `j -> i` of type `r`,
//! `e_ij = aᵀ LeakyReLU(Θ [x_i ‖ x_j ‖ et_r])`. The map Θ is stored as three
//! `d x d` blocks so the per-edge product splits into per-node and per-type
//! products that are gathered along edges.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::nn::{ForwardMode, GruCell, LayerNorm, Linear};
use crate::autodiff::{Init, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::DialogueGraph;
use crate::tensor::{Shape, Tensor};

pub const ATTENTION_SLOPE: f64 = 0.2;

/// Flat edge arrays over `nodes` node rows.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgeList {
    pub nodes: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub kind: Vec<usize>,
}

impl EdgeList {
    pub fn new(nodes: usize) -> Self {
        EdgeList {
            nodes,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn push(&mut self, src: usize, dst: usize, kind: usize) {
        self.src.push(src);
        self.dst.push(dst);
        self.kind.push(kind);
    }

    /// Append the edges of `graph`, mapping `(slot, utterance)` to the row
    /// `slot * slot_stride + offset + utterance`.
    pub fn extend_from_graph(&mut self, graph: &DialogueGraph, slot_stride: usize, offset: usize) {
        for e in &graph.edges {
            self.push(
                e.src.slot * slot_stride + offset + e.src.utterance,
                e.dst.slot * slot_stride + offset + e.dst.utterance,
                e.type_id,
            );
        }
    }

    fn check(&self, rows: usize, kinds: Option<usize>) -> Result<()> {
        if rows != self.nodes {
            return Err(Error::contract(
                "gat_head",
                format!("{rows} feature rows for {} nodes", self.nodes),
            ));
        }
        if self.src.iter().chain(&self.dst).any(|&i| i >= self.nodes) {
            return Err(Error::contract("gat_head", "edge endpoint out of range"));
        }
        if let Some(k) = kinds {
            if let Some(bad) = self.kind.iter().find(|&&t| t >= k) {
                return Err(Error::contract(
                    "gat_head",
                    format!("edge type {bad} outside a table of {k}"),
                ));
            }
        }
        Ok(())
    }
}

/// One attention head.
#[derive(Debug, Clone, Copy)]
pub struct GatHead {
    pub w_dst: ParamId,
    pub w_src: ParamId,
    /// Edge-type block of the attention map and the type embedding table;
    /// absent when edge types are disabled.
    pub edge_types: Option<(ParamId, ParamId)>,
    pub attn: ParamId,
    pub w_agg: ParamId,
    pub gru_fwd: GruCell,
    pub gru_rev: GruCell,
    pub width: usize,
}

impl GatHead {
    /// `edge_types` is the number of rows of the type embedding table, or
    /// `None` to build a head without edge-type features.
    pub fn new(store: &mut ParamStore, name: &str, width: usize, edge_types: Option<usize>, seed: u64) -> Result<Self> {
        let square = Shape::new(width, width);
        let mut init = |suffix: &str, shape: Shape| store.init(&format!("{name}.{suffix}"), shape, Init::Xavier, seed);
        let w_dst = init("att_dst", square)?;
        let w_src = init("att_src", square)?;
        let edge_types = match edge_types {
            Some(rows) => Some((init("att_type", square)?, init("type_emb", Shape::new(rows, width))?)),
            None => None,
        };
        let attn = init("att_vec", Shape::new(width, 1))?;
        let w_agg = init("agg", square)?;
        Ok(GatHead {
            w_dst,
            w_src,
            edge_types,
            attn,
            w_agg,
            gru_fwd: GruCell::new(store, &format!("{name}.gru_fwd"), width, width, seed)?,
            gru_rev: GruCell::new(store, &format!("{name}.gru_rev"), width, width, seed)?,
            width,
        })
    }

    fn kinds(&self, store: &ParamStore) -> Option<usize> {
        self.edge_types.map(|(_, emb)| store.value(emb).rows())
    }

    /// Attention coefficients, one per edge (an `E x 1` column), normalized
    /// over the in-edges of each destination node.
    pub fn attention(&self, tape: &mut Tape, store: &ParamStore, x: Var, edges: &EdgeList) -> Result<Var> {
        edges.check(tape.shape(x).rows, self.kinds(store))?;
        if edges.is_empty() {
            return tape.constant(Tensor::zeros(0, 1));
        }
        let w_dst = tape.param(store, self.w_dst);
        let w_src = tape.param(store, self.w_src);
        let p = tape.matmul(x, w_dst)?;
        let q = tape.matmul(x, w_src)?;
        let pe = tape.gather_rows(p, &edges.dst)?;
        let qe = tape.gather_rows(q, &edges.src)?;
        let mut h = tape.add(pe, qe)?;
        if let Some((w_type, emb)) = self.edge_types {
            let w_type = tape.param(store, w_type);
            let emb = tape.param(store, emb);
            let r = tape.matmul(emb, w_type)?;
            let re = tape.gather_rows(r, &edges.kind)?;
            h = tape.add(h, re)?;
        }
        let h = tape.leaky_relu(h, ATTENTION_SLOPE)?;
        let a = tape.param(store, self.attn);
        let scores = tape.matmul(h, a)?;
        tape.segment_softmax(scores, &edges.dst)
    }

    /// Attention-weighted sum of transformed in-neighbour features; zero
    /// rows for nodes without in-edges.
    pub fn aggregate(&self, tape: &mut Tape, store: &ParamStore, x: Var, edges: &EdgeList) -> Result<Var> {
        let n = tape.shape(x).rows;
        if edges.is_empty() {
            edges.check(n, None)?;
            return tape.constant(Tensor::zeros(n, self.width));
        }
        let alpha = self.attention(tape, store, x, edges)?;
        let w_agg = tape.param(store, self.w_agg);
        let v = tape.matmul(x, w_agg)?;
        let ve = tape.gather_rows(v, &edges.src)?;
        let weighted = tape.mul(ve, alpha)?;
        tape.scatter_add_rows(weighted, &edges.dst, n)
    }

    /// `GRU_fwd(x, x_agg) + GRU_rev(x_agg, x)`, input first, hidden second.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, edges: &EdgeList) -> Result<Var> {
        let agg = self.aggregate(tape, store, x, edges)?;
        let fwd = self.gru_fwd.forward(tape, store, x, agg)?;
        let rev = self.gru_rev.forward(tape, store, agg, x)?;
        tape.add(fwd, rev)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMerge {
    Average,
    ConcatProject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPosition {
    Post,
    Pre,
}

/// `K` heads merged by averaging or by a projection of their concatenation.
#[derive(Debug, Clone)]
pub struct MultiGat {
    pub heads: Vec<GatHead>,
    pub project: Option<Linear>,
}

impl MultiGat {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        merge: HeadMerge,
        edge_types: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        if heads == 0 {
            return Err(Error::contract("multi_gat", "need at least one head"));
        }
        let heads = (0..heads)
            .map(|k| GatHead::new(store, &format!("{name}.head{k}"), width, edge_types, seed))
            .collect::<Result<Vec<_>>>()?;
        let project = match merge {
            HeadMerge::Average => None,
            HeadMerge::ConcatProject => Some(Linear::new(
                store,
                &format!("{name}.merge"),
                heads.len() * width,
                width,
                false,
                seed,
            )?),
        };
        Ok(MultiGat { heads, project })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, edges: &EdgeList) -> Result<Var> {
        let outs = self
            .heads
            .iter()
            .map(|h| h.forward(tape, store, x, edges))
            .collect::<Result<Vec<_>>>()?;
        match &self.project {
            Some(proj) => {
                let cat = tape.concat_cols(&outs)?;
                proj.forward(tape, store, cat)
            }
            None => {
                let mut acc = outs[0];
                for &o in &outs[1..] {
                    acc = tape.add(acc, o)?;
                }
                if outs.len() == 1 {
                    Ok(acc)
                } else {
                    tape.scale(acc, 1.0 / outs.len() as f64)
                }
            }
        }
    }
}

/// Switches of a GAT-MLP layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerOptions {
    pub norm: NormPosition,
    pub skip: bool,
    pub use_multigat: bool,
    pub use_feedforward: bool,
}

impl Default for LayerOptions {
    fn default() -> Self {
        LayerOptions {
            norm: NormPosition::Post,
            skip: true,
            use_multigat: true,
            use_feedforward: true,
        }
    }
}

/// Attention sublayer then feed-forward sublayer, each wrapped in a
/// residual connection and layer normalization.
#[derive(Debug, Clone)]
pub struct GatMlpLayer {
    pub gat: MultiGat,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub norm_gat: LayerNorm,
    pub norm_ff: LayerNorm,
    pub options: LayerOptions,
}

impl GatMlpLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        merge: HeadMerge,
        edge_types: Option<usize>,
        options: LayerOptions,
        seed: u64,
    ) -> Result<Self> {
        Ok(GatMlpLayer {
            gat: MultiGat::new(store, &format!("{name}.gat"), width, heads, merge, edge_types, seed)?,
            ff_in: Linear::new(store, &format!("{name}.ff0"), width, width, true, seed)?,
            ff_out: Linear::new(store, &format!("{name}.ff1"), width, width, true, seed)?,
            norm_gat: LayerNorm::new(store, &format!("{name}.norm_gat"), width)?,
            norm_ff: LayerNorm::new(store, &format!("{name}.norm_ff"), width)?,
            options,
        })
    }

    fn feed_forward(&self, tape: &mut Tape, store: &ParamStore, mode: &mut ForwardMode<'_>, x: Var) -> Result<Var> {
        let h = self.ff_in.forward(tape, store, x)?;
        let h = tape.relu(h)?;
        let h = mode.dropout(tape, h)?;
        let h = self.ff_out.forward(tape, store, h)?;
        mode.dropout(tape, h)
    }

    fn sublayer(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mode: &mut ForwardMode<'_>,
        x: Var,
        edges: &EdgeList,
        attention: bool,
    ) -> Result<Var> {
        let norm = if attention { self.norm_gat } else { self.norm_ff };
        let f = |tape: &mut Tape, mode: &mut ForwardMode<'_>, input: Var| {
            if attention {
                self.gat.forward(tape, store, input, edges)
            } else {
                self.feed_forward(tape, store, mode, input)
            }
        };
        match self.options.norm {
            NormPosition::Post => {
                let y = f(tape, mode, x)?;
                let y = if self.options.skip { tape.add(y, x)? } else { y };
                norm.forward(tape, store, y)
            }
            NormPosition::Pre => {
                let normed = norm.forward(tape, store, x)?;
                let y = f(tape, mode, normed)?;
                if self.options.skip {
                    tape.add(y, x)
                } else {
                    Ok(y)
                }
            }
        }
    }

    /// A disabled sublayer passes its input through unchanged.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mode: &mut ForwardMode<'_>,
        x: Var,
        edges: &EdgeList,
    ) -> Result<Var> {
        let x = if self.options.use_multigat {
            self.sublayer(tape, store, mode, x, edges, true)?
        } else {
            x
        };
        if self.options.use_feedforward {
            self.sublayer(tape, store, mode, x, edges, false)
        } else {
            Ok(x)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    }

    fn edges(nodes: usize, list: &[(usize, usize, usize)]) -> EdgeList {
        let mut e = EdgeList::new(nodes);
        for &(s, d, k) in list {
            e.push(s, d, k);
        }
        e
    }

    fn head(store: &mut ParamStore, width: usize, types: Option<usize>, seed: u64) -> GatHead {
        GatHead::new(store, "h", width, types, seed).unwrap()
    }

    fn eval_attention(store: &ParamStore, h: &GatHead, x: Tensor, e: &EdgeList) -> Vec<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(x).unwrap();
        let a = h.attention(&mut tape, store, x, e).unwrap();
        tape.value(a).data().to_vec()
    }

    #[test]
    fn single_neighbour_gets_all_weight() {
        let mut store = ParamStore::new();
        let h = head(&mut store, 4, Some(3), 1);
        let a = eval_attention(&store, &h, random(2, 4, 0), &edges(2, &[(0, 1, 2)]));
        assert_eq!(a, vec![1.0]);
    }

    #[test]
    fn identical_neighbours_split_evenly() {
        let mut store = ParamStore::new();
        let h = head(&mut store, 4, Some(3), 1);
        let mut x = random(3, 4, 0);
        let r1 = x.row(1).to_vec();
        x.row_mut(2).copy_from_slice(&r1);
        let a = eval_attention(&store, &h, x, &edges(3, &[(1, 0, 1), (2, 0, 1)]));
        assert!((a[0] - 0.5).abs() < 1e-15 && (a[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn neighbour_order_permutes_weights() {
        let mut store = ParamStore::new();
        let h = head(&mut store, 4, Some(3), 2);
        let x = random(4, 4, 3);
        let a = eval_attention(&store, &h, x.clone(), &edges(4, &[(1, 0, 0), (2, 0, 1), (3, 0, 2)]));
        let b = eval_attention(&store, &h, x, &edges(4, &[(3, 0, 2), (1, 0, 0), (2, 0, 1)]));
        assert!((a[0] - b[1]).abs() < 1e-15);
        assert!((a[1] - b[2]).abs() < 1e-15);
        assert!((a[2] - b[0]).abs() < 1e-15);
    }

    #[test]
    fn zero_type_embedding_matches_plain_attention() {
        let mut store = ParamStore::new();
        let h = head(&mut store, 4, Some(3), 4);
        let (_, emb) = h.edge_types.unwrap();
        store.value_mut(emb).fill(0.0);
        let x = random(3, 4, 5);
        let e = edges(3, &[(1, 0, 0), (2, 0, 2), (0, 1, 1)]);
        let got = eval_attention(&store, &h, x.clone(), &e);

        // Direct evaluation of aᵀ LeakyReLU(W_dst x_i + W_src x_j), softmax
        // over each destination.
        let wd = store.value(h.w_dst);
        let ws = store.value(h.w_src);
        let av = store.value(h.attn);
        let score = |i: usize, j: usize| {
            let xi = Tensor::row_vector(x.row(i).to_vec());
            let xj = Tensor::row_vector(x.row(j).to_vec());
            let mut s = xi.matmul(wd);
            s.add_assign(&xj.matmul(ws));
            let s = s.map(|v| if v > 0.0 { v } else { 0.2 * v });
            s.matmul(av).item()
        };
        let (s10, s20) = (score(0, 1), score(0, 2));
        let m = s10.max(s20);
        let z = libm::exp(s10 - m) + libm::exp(s20 - m);
        assert!((got[0] - libm::exp(s10 - m) / z).abs() < 1e-12);
        assert!((got[1] - libm::exp(s20 - m) / z).abs() < 1e-12);
        assert!((got[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn edge_type_changes_attention() {
        let mut store = ParamStore::new();
        let h = head(&mut store, 4, Some(3), 6);
        let x = random(3, 4, 7);
        let a = eval_attention(&store, &h, x.clone(), &edges(3, &[(1, 0, 0), (2, 0, 1)]));
        let b = eval_attention(&store, &h, x, &edges(3, &[(1, 0, 2), (2, 0, 1)]));
        assert!((a[0] - b[0]).abs() > 1e-9);
    }

    #[test]
    fn empty_graph_uses_zero_aggregate() {
        let mut store = ParamStore::new();
        let h = head(&mut store, 4, Some(2), 1);
        let x0 = random(3, 4, 1);
        let mut tape = Tape::new();
        let x = tape.constant(x0).unwrap();
        let y = h.forward(&mut tape, &store, x, &EdgeList::new(3)).unwrap();
        let zero = tape.constant(Tensor::zeros(3, 4)).unwrap();
        let f = h.gru_fwd.forward(&mut tape, &store, x, zero).unwrap();
        let r = h.gru_rev.forward(&mut tape, &store, zero, x).unwrap();
        let want = tape.add(f, r).unwrap();
        assert_eq!(tape.value(y), tape.value(want));
    }

    #[test]
    fn zero_gru_weights_average_input_and_aggregate() {
        let mut store = ParamStore::new();
        let h = head(&mut store, 4, Some(2), 1);
        for cell in [h.gru_fwd, h.gru_rev] {
            for id in [cell.w, cell.u, cell.b] {
                store.value_mut(id).fill(0.0);
            }
        }
        let x0 = random(3, 4, 2);
        let e = edges(3, &[(1, 0, 0), (2, 0, 1), (0, 2, 1)]);
        let mut tape = Tape::new();
        let x = tape.constant(x0.clone()).unwrap();
        let agg = h.aggregate(&mut tape, &store, x, &e).unwrap();
        let y = h.forward(&mut tape, &store, x, &e).unwrap();
        let (agg, y) = (tape.value(agg), tape.value(y));
        for i in 0..3 {
            for c in 0..4 {
                let want = 0.5 * agg.get(i, c) + 0.5 * x0.get(i, c);
                assert!((y.get(i, c) - want).abs() < 1e-15);
            }
        }
        assert!(agg.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_edge_aggregate_is_value_map() {
        let mut store = ParamStore::new();
        let h = head(&mut store, 4, Some(1), 3);
        let x0 = random(2, 4, 3);
        let mut tape = Tape::new();
        let x = tape.constant(x0.clone()).unwrap();
        let agg = h.aggregate(&mut tape, &store, x, &edges(2, &[(0, 1, 0)])).unwrap();
        let want = Tensor::row_vector(x0.row(0).to_vec()).matmul(store.value(h.w_agg));
        assert_eq!(tape.value(agg).row(1), want.data());
        assert!(tape.value(agg).row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_heads_average_to_one_head() {
        let mut store = ParamStore::new();
        let multi = MultiGat::new(&mut store, "m", 4, 4, HeadMerge::Average, Some(2), 9).unwrap();
        // Heads share a name prefix but differ in index; copy head 0 over the rest.
        let first = multi.heads[0];
        for h in &multi.heads[1..] {
            let pairs = [
                (first.w_dst, h.w_dst),
                (first.w_src, h.w_src),
                (first.edge_types.unwrap().0, h.edge_types.unwrap().0),
                (first.edge_types.unwrap().1, h.edge_types.unwrap().1),
                (first.attn, h.attn),
                (first.w_agg, h.w_agg),
                (first.gru_fwd.w, h.gru_fwd.w),
                (first.gru_fwd.u, h.gru_fwd.u),
                (first.gru_rev.w, h.gru_rev.w),
                (first.gru_rev.u, h.gru_rev.u),
            ];
            for (from, to) in pairs {
                let v = store.value(from).clone();
                *store.value_mut(to) = v;
            }
        }
        let e = edges(3, &[(1, 0, 0), (2, 0, 1), (0, 2, 1)]);
        let mut tape = Tape::new();
        let x = tape.constant(random(3, 4, 4)).unwrap();
        let y = multi.forward(&mut tape, &store, x, &e).unwrap();
        let one = first.forward(&mut tape, &store, x, &e).unwrap();
        assert!(tape.value(y).max_abs_diff(tape.value(one)) < 1e-14);
    }

    #[test]
    fn post_norm_zero_sublayers_reduce_to_norms() {
        let mut store = ParamStore::new();
        let layer = GatMlpLayer::new(
            &mut store,
            "l",
            4,
            1,
            HeadMerge::Average,
            Some(2),
            LayerOptions::default(),
            3,
        )
        .unwrap();
        let ids: Vec<ParamId> = store
            .iter()
            .filter(|(_, p)| !p.name.contains("norm"))
            .map(|(id, _)| id)
            .collect();
        for id in ids {
            store.value_mut(id).fill(0.0);
        }
        let x0 = random(3, 4, 11);
        let e = edges(3, &[(1, 0, 0), (2, 0, 1)]);
        let mut tape = Tape::new();
        let x = tape.constant(x0).unwrap();
        let y = layer
            .forward(&mut tape, &store, &mut ForwardMode::eval(), x, &e)
            .unwrap();
        let n1 = layer.norm_gat.forward(&mut tape, &store, x).unwrap();
        let n2 = layer.norm_ff.forward(&mut tape, &store, n1).unwrap();
        // The zeroed attention sublayer still returns half of its input
        // (the reverse GRU keeps half its hidden state), which layer
        // normalization removes up to its epsilon.
        assert!(tape.value(y).max_abs_diff(tape.value(n2)) < 1e-5);
    }

    #[test]
    fn pre_and_post_norm_differ() {
        let build = |norm| {
            let mut store = ParamStore::new();
            let options = LayerOptions {
                norm,
                ..LayerOptions::default()
            };
            let layer = GatMlpLayer::new(&mut store, "l", 4, 2, HeadMerge::Average, Some(2), options, 5).unwrap();
            let e = edges(3, &[(1, 0, 0), (2, 0, 1), (0, 1, 1)]);
            let mut tape = Tape::new();
            let x = tape.constant(random(3, 4, 12)).unwrap();
            let y = layer
                .forward(&mut tape, &store, &mut ForwardMode::eval(), x, &e)
                .unwrap();
            tape.value(y).clone()
        };
        let (post, pre) = (build(NormPosition::Post), build(NormPosition::Pre));
        assert!(post.is_finite() && pre.is_finite());
        assert!(post.max_abs_diff(&pre) > 1e-6);
    }

    #[test]
    fn stacked_layers_keep_shape() {
        let mut store = ParamStore::new();
        let layers: Vec<GatMlpLayer> = (0..5)
            .map(|k| {
                GatMlpLayer::new(
                    &mut store,
                    &format!("l{k}"),
                    4,
                    2,
                    HeadMerge::ConcatProject,
                    Some(2),
                    LayerOptions::default(),
                    1,
                )
                .unwrap()
            })
            .collect();
        let e = edges(6, &[(1, 0, 0), (2, 0, 1), (0, 1, 1), (5, 4, 0)]);
        let mut tape = Tape::new();
        let mut x = tape.constant(random(6, 4, 13)).unwrap();
        for l in &layers {
            x = l.forward(&mut tape, &store, &mut ForwardMode::eval(), x, &e).unwrap();
        }
        assert_eq!(tape.shape(x), Shape::new(6, 4));
        assert!(tape.value(x).is_finite());
    }

    #[test]
    fn two_head_gradient_check() {
        for seed in 0..3 {
            let mut store = ParamStore::new();
            let multi = MultiGat::new(&mut store, "m", 3, 2, HeadMerge::ConcatProject, Some(2), seed).unwrap();
            let x0 = random(4, 3, seed + 20);
            let w = random(4, 3, seed + 30);
            let e = edges(4, &[(1, 0, 0), (2, 0, 1), (3, 0, 1), (0, 2, 0), (3, 2, 1)]);
            let report = finite_diff_check(
                |s, tape| {
                    let x = tape.constant(x0.clone())?;
                    let y = multi.forward(tape, s, x, &e)?;
                    let w = tape.constant(w.clone())?;
                    let p = tape.mul(y, w)?;
                    tape.sum(p)
                },
                &store,
                1e-5,
            )
            .unwrap();
            assert!(report.max_rel_err <= 1e-4, "{report:?}");
        }
    }
}
