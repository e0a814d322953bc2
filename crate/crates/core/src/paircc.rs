//! The full model: encoders, subspaces, the staged pair-wise
//! cross-modal complementation over dialogue graphs, classifier heads and
//! the training objective.
//!
//! Rows of every feature matrix are the utterances of a batch of dialogues,
//! stacked in batch order. A fusion stage puts two such matrices into one
//! graph (`2N` nodes, first block = first input), runs a stack of GAT-MLP
//! layers, and projects the per-utterance concatenation of the two blocks
//! back to width `d`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::autodiff::nn::{ForwardMode, Linear};
use crate::autodiff::{Init, ParamId, ParamStore, Tape, Var};
use crate::corpus::{Dialogue, Modality, ModalityDims};
use crate::encoders::{FeedForwardEncoder, SpeakerEmbedding, Subspaces, TextEncoder};
use crate::error::{Error, Result};
use crate::gatmlp::{EdgeList, GatMlpLayer, HeadMerge, LayerOptions, NormPosition};
use crate::graph::{build_graph, DirectionMode, EdgeTypeTable, Window};
use crate::tensor::{Shape, Tensor};

/// Strength of the squared-L2 penalty on classifier weights.
pub const HEAD_L2: f64 = 1e-5;

/// Which of the three modalities a model uses. Serialized by name
/// (`A+V+T`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModalitySet {
    pub t: bool,
    pub a: bool,
    pub v: bool,
}

impl ModalitySet {
    pub const FULL: ModalitySet = ModalitySet {
        t: true,
        a: true,
        v: true,
    };

    /// The seven non-empty subsets: A, V, T, A+V, A+T, V+T, A+V+T.
    pub const SUBSETS: [ModalitySet; 7] = [
        ModalitySet::of(false, true, false),
        ModalitySet::of(false, false, true),
        ModalitySet::of(true, false, false),
        ModalitySet::of(false, true, true),
        ModalitySet::of(true, true, false),
        ModalitySet::of(true, false, true),
        ModalitySet::FULL,
    ];

    pub const fn of(t: bool, a: bool, v: bool) -> Self {
        ModalitySet { t, a, v }
    }

    pub fn only(m: Modality) -> Self {
        match m {
            Modality::Text => ModalitySet::of(true, false, false),
            Modality::Acoustic => ModalitySet::of(false, true, false),
            Modality::Visual => ModalitySet::of(false, false, true),
        }
    }

    pub fn contains(&self, m: Modality) -> bool {
        match m {
            Modality::Text => self.t,
            Modality::Acoustic => self.a,
            Modality::Visual => self.v,
        }
    }

    /// Active modalities in fusion order: visual, acoustic, text.
    pub fn fusion_order(&self) -> Vec<Modality> {
        [Modality::Visual, Modality::Acoustic, Modality::Text]
            .into_iter()
            .filter(|&m| self.contains(m))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.t as usize + self.a as usize + self.v as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parse names such as `A+V+T`, `t`, `a+t` (order and case free).
    pub fn parse(s: &str) -> Result<Self> {
        let mut set = ModalitySet::of(false, false, false);
        for part in s.split('+').map(str::trim) {
            let m =
                Modality::from_tag(part).ok_or_else(|| Error::Config(format!("unknown modality '{part}' in '{s}'")))?;
            if set.contains(m) {
                return Err(Error::Config(format!("modality '{part}' repeated in '{s}'")));
            }
            match m {
                Modality::Text => set.t = true,
                Modality::Acoustic => set.a = true,
                Modality::Visual => set.v = true,
            }
        }
        Ok(set)
    }
}

impl fmt::Display for ModalitySet {
    /// `A+V+T` ordering.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.a {
            parts.push("A");
        }
        if self.v {
            parts.push("V");
        }
        if self.t {
            parts.push("T");
        }
        f.write_str(&parts.join("+"))
    }
}

impl TryFrom<String> for ModalitySet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        ModalitySet::parse(&s)
    }
}

impl From<ModalitySet> for String {
    fn from(m: ModalitySet) -> String {
        m.to_string()
    }
}

/// Architecture hyperparameters and component switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Model width `d`.
    pub width: usize,
    /// GAT-MLP layers per fusion stage.
    pub layers: usize,
    pub heads: usize,
    pub head_merge: HeadMerge,
    pub norm_position: NormPosition,
    /// Speaker embedding ratio `μ`.
    pub speaker_ratio: f64,
    pub dropout: f64,
    pub window: Window,
    pub direction: DirectionMode,
    pub modalities: ModalitySet,
    pub skip_connection: bool,
    pub edge_type_embedding: bool,
    pub speaker_embedding: bool,
    pub use_multigat: bool,
    pub use_feedforward: bool,
    pub shared_loss: bool,
    pub separate_loss: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            width: 64,
            layers: 5,
            heads: 2,
            head_merge: HeadMerge::Average,
            norm_position: NormPosition::Post,
            speaker_ratio: 1.0,
            dropout: 0.1,
            window: Window::new(18, 18),
            direction: DirectionMode::FutureAsInEdge,
            modalities: ModalitySet::FULL,
            skip_connection: true,
            edge_type_embedding: true,
            speaker_embedding: true,
            use_multigat: true,
            use_feedforward: true,
            shared_loss: true,
            separate_loss: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.width == 0 {
            return bad("model.width must be positive".into());
        }
        if self.layers == 0 {
            return bad("model.layers must be positive".into());
        }
        if self.heads == 0 {
            return bad("model.heads must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.speaker_ratio) {
            return bad(format!("model.speaker_ratio {} outside [0, 1]", self.speaker_ratio));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("model.dropout {} outside [0, 1)", self.dropout));
        }
        if self.modalities.is_empty() {
            return bad("model.modalities selects nothing".into());
        }
        Ok(())
    }

    fn layer_options(&self) -> LayerOptions {
        LayerOptions {
            norm: self.norm_position,
            skip: self.skip_connection,
            use_multigat: self.use_multigat,
            use_feedforward: self.use_feedforward,
        }
    }
}

/// Data-dependent sizes of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub classes: usize,
    pub dims: ModalityDims,
    /// Size of the speaker table and of the edge-type tables' speaker axis.
    pub max_speakers: usize,
}

/// Auxiliary objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuxTerm {
    Shared,
    Separate(Modality),
}

impl AuxTerm {
    pub fn key(self) -> &'static str {
        match self {
            AuxTerm::Shared => "shr",
            AuxTerm::Separate(m) => m.tag(),
        }
    }
}

/// `ReLU(h W0 + b0) W1 + b1`.
#[derive(Debug, Clone, Copy)]
pub struct Classifier {
    pub hidden: Linear,
    pub out: Linear,
}

impl Classifier {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, classes: usize, seed: u64) -> Result<Self> {
        Ok(Classifier {
            hidden: Linear::new(store, &format!("{name}.lin0"), width, width, true, seed)?,
            out: Linear::new(store, &format!("{name}.lin1"), width, classes, true, seed)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        let z = self.hidden.forward(tape, store, h)?;
        let z = tape.relu(z)?;
        self.out.forward(tape, store, z)
    }

    /// Squared L2 norm of the two weight matrices (biases excluded).
    pub fn weight_norm(&self, tape: &mut Tape, store: &ParamStore) -> Result<Var> {
        let w0 = tape.param(store, self.hidden.weight);
        let w1 = tape.param(store, self.out.weight);
        let a = tape.sum_sq(w0)?;
        let b = tape.sum_sq(w1)?;
        tape.add(a, b)
    }
}

/// Where a stage takes one of its two inputs from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageInput {
    Separate(Modality),
    Previous,
    Shared,
}

/// One fusion stage (or, for a single modality, the lone graph stage).
#[derive(Debug, Clone)]
pub struct Stage {
    pub inputs: Vec<StageInput>,
    pub layers: Vec<GatMlpLayer>,
    pub project: Option<Linear>,
}

impl Stage {
    fn slots(&self) -> usize {
        self.inputs.len()
    }
}

/// Per-batch logits.
#[derive(Debug, Clone)]
pub struct Outputs {
    pub main: Var,
    pub aux: Vec<(AuxTerm, Var)>,
}

/// Loss terms as tape nodes.
#[derive(Debug, Clone)]
pub struct LossComponents {
    pub cls: Var,
    pub aux: Vec<(AuxTerm, Var)>,
}

/// Loss values after a forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub cls: f64,
    pub aux: Vec<(AuxTerm, f64)>,
}

/// The model's structure. Parameters live in a separate [`ParamStore`]
/// so that evaluation can run against any compatible snapshot.
#[derive(Debug, Clone)]
pub struct GraphCfc {
    pub config: ModelConfig,
    pub shape: ModelShape,
    pub text: Option<TextEncoder>,
    pub acoustic: Option<FeedForwardEncoder>,
    pub visual: Option<FeedForwardEncoder>,
    pub speaker: Option<SpeakerEmbedding>,
    pub subspaces: Subspaces,
    pub stages: Vec<Stage>,
    pub tables: [EdgeTypeTable; 2],
    pub main: Classifier,
    pub aux_heads: Vec<(AuxTerm, Classifier)>,
    pub log_weights: Vec<(AuxTerm, ParamId)>,
}

impl GraphCfc {
    /// Construct the model and a freshly initialized parameter store.
    pub fn build(config: &ModelConfig, shape: ModelShape, seed: u64) -> Result<(Self, ParamStore)> {
        config.validate()?;
        if shape.classes == 0 || shape.max_speakers == 0 {
            return Err(Error::Config("model needs at least one class and one speaker".into()));
        }
        let d = config.width;
        let mut store = ParamStore::new();
        let s = &mut store;
        let mods = config.modalities.fusion_order();

        let text = if config.modalities.t {
            Some(TextEncoder::new(s, "enc.t", shape.dims.t, d.div_ceil(2), d, seed)?)
        } else {
            None
        };
        let acoustic = if config.modalities.a {
            Some(FeedForwardEncoder::new(s, "enc.a", shape.dims.a, d, seed)?)
        } else {
            None
        };
        let visual = if config.modalities.v {
            Some(FeedForwardEncoder::new(s, "enc.v", shape.dims.v, d, seed)?)
        } else {
            None
        };
        let speaker = if config.speaker_embedding {
            Some(SpeakerEmbedding::new(s, "speaker", shape.max_speakers, d, seed)?)
        } else {
            None
        };
        let subspaces = Subspaces::new(s, "sub", &mods, d, seed)?;

        let plan: Vec<Vec<StageInput>> = match mods.as_slice() {
            [m] => alloc::vec![alloc::vec![StageInput::Separate(*m)]],
            [p, q] => alloc::vec![
                alloc::vec![StageInput::Separate(*p), StageInput::Separate(*q)],
                alloc::vec![StageInput::Previous, StageInput::Shared],
            ],
            _ => alloc::vec![
                alloc::vec![
                    StageInput::Separate(Modality::Visual),
                    StageInput::Separate(Modality::Acoustic),
                ],
                alloc::vec![StageInput::Previous, StageInput::Separate(Modality::Text)],
                alloc::vec![StageInput::Previous, StageInput::Shared],
            ],
        };
        let tables = [
            EdgeTypeTable::new(shape.max_speakers, 1)?,
            EdgeTypeTable::new(shape.max_speakers, 2)?,
        ];
        let mut stages = Vec::with_capacity(plan.len());
        for (k, inputs) in plan.into_iter().enumerate() {
            let slots = inputs.len();
            let types = config.edge_type_embedding.then(|| tables[slots - 1].len());
            let layers = (0..config.layers)
                .map(|l| {
                    GatMlpLayer::new(
                        s,
                        &format!("stage{k}.layer{l}"),
                        d,
                        config.heads,
                        config.head_merge,
                        types,
                        config.layer_options(),
                        seed,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let project = if slots == 2 {
                Some(Linear::new(s, &format!("stage{k}.proj"), 2 * d, d, true, seed)?)
            } else {
                None
            };
            stages.push(Stage {
                inputs,
                layers,
                project,
            });
        }

        let main = Classifier::new(s, "head.main", d, shape.classes, seed)?;
        let mut aux_terms = Vec::new();
        if config.shared_loss && mods.len() >= 2 {
            aux_terms.push(AuxTerm::Shared);
        }
        if config.separate_loss {
            aux_terms.extend(mods.iter().map(|&m| AuxTerm::Separate(m)));
        }
        let mut aux_heads = Vec::new();
        let mut log_weights = Vec::new();
        for term in aux_terms {
            let key = term.key();
            aux_heads.push((
                term,
                Classifier::new(s, &format!("head.{key}"), d, shape.classes, seed)?,
            ));
            log_weights.push((
                term,
                s.init(&format!("loss.log_weight.{key}"), Shape::new(1, 1), Init::Zeros, seed)?,
            ));
        }

        let model = GraphCfc {
            config: config.clone(),
            shape,
            text,
            acoustic,
            visual,
            speaker,
            subspaces,
            stages,
            tables,
            main,
            aux_heads,
            log_weights,
        };
        Ok((model, store))
    }

    fn check_dialogues(&self, dialogues: &[&Dialogue]) -> Result<()> {
        if dialogues.is_empty() {
            return Err(Error::contract("model_forward", "empty batch"));
        }
        for d in dialogues {
            if d.is_empty() {
                return Err(Error::Data(format!("dialogue '{}' has no utterances", d.id)));
            }
            for (k, u) in d.utterances.iter().enumerate() {
                if u.speaker >= self.shape.max_speakers {
                    return Err(Error::Data(format!(
                        "dialogue '{}' utterance {k}: speaker {} exceeds the model's {} speakers",
                        d.id, u.speaker, self.shape.max_speakers
                    )));
                }
                for m in self.config.modalities.fusion_order() {
                    if u.features(m).len() != self.shape.dims.get(m) {
                        return Err(Error::Data(format!(
                            "dialogue '{}' utterance {k}: modality '{}' has {} features, model expects {}",
                            d.id,
                            m.tag(),
                            u.features(m).len(),
                            self.shape.dims.get(m)
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Edge list over `slots * N` nodes for the stacked batch.
    pub fn batch_edges(&self, dialogues: &[&Dialogue], slots: usize) -> Result<EdgeList> {
        let n: usize = dialogues.iter().map(|d| d.len()).sum();
        let mut edges = EdgeList::new(slots * n);
        let mut offset = 0;
        for d in dialogues {
            let g = build_graph(
                &d.speaker_ids(),
                slots,
                self.config.window,
                self.config.direction,
                &self.tables[slots - 1],
            )?;
            edges.extend_from_graph(&g, n, offset);
            offset += d.len();
        }
        Ok(edges)
    }

    fn encode(&self, tape: &mut Tape, store: &ParamStore, dialogues: &[&Dialogue], m: Modality) -> Result<Var> {
        let rows: Vec<Vec<f64>> = dialogues
            .iter()
            .flat_map(|d| d.utterances.iter().map(move |u| u.features(m).to_vec()))
            .collect();
        let x = tape.constant(Tensor::from_rows(&rows))?;
        match m {
            Modality::Text => {
                let lengths: Vec<usize> = dialogues.iter().map(|d| d.len()).collect();
                self.text
                    .as_ref()
                    .expect("text encoder for active modality")
                    .forward_batch(tape, store, x, &lengths)
            }
            Modality::Acoustic => self
                .acoustic
                .as_ref()
                .expect("acoustic encoder for active modality")
                .forward(tape, store, x),
            Modality::Visual => self
                .visual
                .as_ref()
                .expect("visual encoder for active modality")
                .forward(tape, store, x),
        }
    }

    fn run_stage(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mode: &mut ForwardMode<'_>,
        stage: &Stage,
        inputs: &[Var],
        edges: &EdgeList,
    ) -> Result<Var> {
        let n = tape.shape(inputs[0]).rows;
        let mut x = tape.concat_rows(inputs)?;
        for layer in &stage.layers {
            x = layer.forward(tape, store, mode, x, edges)?;
        }
        match &stage.project {
            Some(proj) => {
                let p = tape.slice_rows(x, 0, n)?;
                let q = tape.slice_rows(x, n, n)?;
                let cat = tape.concat_cols(&[p, q])?;
                proj.forward(tape, store, cat)
            }
            None => Ok(x),
        }
    }

    /// Forward pass over a batch of dialogues; logits rows follow the
    /// stacked utterance order.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        dialogues: &[&Dialogue],
        mode: &mut ForwardMode<'_>,
    ) -> Result<Outputs> {
        self.check_dialogues(dialogues)?;
        let speakers: Vec<usize> = dialogues.iter().flat_map(|d| d.speaker_ids()).collect();
        let mut encoded = Vec::new();
        for m in self.config.modalities.fusion_order() {
            let mut x = self.encode(tape, store, dialogues, m)?;
            if let Some(emb) = &self.speaker {
                x = emb.inject(tape, store, x, &speakers, self.config.speaker_ratio)?;
            }
            encoded.push((m, x));
        }
        let sub = self.subspaces.extract(tape, store, mode, &encoded)?;

        let mut edge_cache: [Option<EdgeList>; 2] = [None, None];
        let mut previous: Option<Var> = None;
        for stage in &self.stages {
            let slots = stage.slots();
            if edge_cache[slots - 1].is_none() {
                edge_cache[slots - 1] = Some(self.batch_edges(dialogues, slots)?);
            }
            let inputs = stage
                .inputs
                .iter()
                .map(|inp| match *inp {
                    StageInput::Separate(m) => sub.separate_of(m),
                    StageInput::Previous => previous,
                    StageInput::Shared => sub.shared,
                })
                .collect::<Option<Vec<Var>>>()
                .ok_or_else(|| Error::contract("model_forward", "stage input unavailable"))?;
            let edges = edge_cache[slots - 1].as_ref().expect("edges built above");
            previous = Some(self.run_stage(tape, store, mode, stage, &inputs, edges)?);
        }
        let fused = previous.expect("at least one stage");
        let main = self.main.forward(tape, store, fused)?;

        let mut aux = Vec::with_capacity(self.aux_heads.len());
        for (term, head) in &self.aux_heads {
            let feats = match term {
                AuxTerm::Shared => sub.shared,
                AuxTerm::Separate(m) => sub.separate_of(*m),
            }
            .ok_or_else(|| Error::contract("model_forward", "auxiliary input unavailable"))?;
            aux.push((*term, head.forward(tape, store, feats)?));
        }
        Ok(Outputs { main, aux })
    }

    fn head_loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        logits: Var,
        labels: &[usize],
        head: &Classifier,
    ) -> Result<Var> {
        let ce = cross_entropy(tape, logits, labels)?;
        let reg = head.weight_norm(tape, store)?;
        let reg = tape.scale(reg, HEAD_L2)?;
        tape.add(ce, reg)
    }

    /// Per-head losses: mean cross-entropy over all utterances plus the
    /// head's weight penalty.
    pub fn losses(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        outputs: &Outputs,
        labels: &[usize],
    ) -> Result<LossComponents> {
        let cls = self.head_loss(tape, store, outputs.main, labels, &self.main)?;
        let mut aux = Vec::with_capacity(outputs.aux.len());
        for (&(term, logits), (_, head)) in outputs.aux.iter().zip(&self.aux_heads) {
            aux.push((term, self.head_loss(tape, store, logits, labels, head)?));
        }
        Ok(LossComponents { cls, aux })
    }

    /// `L_cls + Σ (exp(-s_i) L_i + s_i)`. With `detach_aux`, auxiliary terms
    /// and their log-weights enter as constants, so gradients equal those of
    /// `L_cls` alone.
    pub fn total_loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        components: &LossComponents,
        detach_aux: bool,
    ) -> Result<Var> {
        let mut total = components.cls;
        for &(term, l) in &components.aux {
            let id = self
                .log_weights
                .iter()
                .find(|(t, _)| *t == term)
                .map(|&(_, id)| id)
                .ok_or_else(|| Error::contract("total_loss", "missing log-weight"))?;
            let mut s = tape.param(store, id);
            let mut l = l;
            if detach_aux {
                s = tape.detach(s);
                l = tape.detach(l);
            }
            let neg = tape.scale(s, -1.0)?;
            let w = tape.exp(neg)?;
            let wl = tape.mul(w, l)?;
            let term = tape.add(wl, s)?;
            total = tape.add(total, term)?;
        }
        Ok(total)
    }

    /// Forward, losses and total in one call.
    pub fn objective(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        dialogues: &[&Dialogue],
        mode: &mut ForwardMode<'_>,
        detach_aux: bool,
    ) -> Result<(Var, LossComponents)> {
        let outputs = self.forward(tape, store, dialogues, mode)?;
        let labels: Vec<usize> = dialogues.iter().flat_map(|d| d.labels()).collect();
        let components = self.losses(tape, store, &outputs, &labels)?;
        let total = self.total_loss(tape, store, &components, detach_aux)?;
        Ok((total, components))
    }

    /// Predicted class per utterance in stacked order (evaluation mode).
    pub fn predict(&self, store: &ParamStore, dialogues: &[&Dialogue]) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, store, dialogues, &mut ForwardMode::eval())?;
        Ok(argmax_rows(tape.value(out.main)))
    }

    /// Every parameter name the model expects, with its shape.
    pub fn manifest(store: &ParamStore) -> Vec<(String, Shape)> {
        store.iter().map(|(_, p)| (p.name.clone(), p.value.shape())).collect()
    }
}

impl LossComponents {
    pub fn values(&self, tape: &Tape, total: Var) -> LossValues {
        LossValues {
            total: tape.value(total).item(),
            cls: tape.value(self.cls).item(),
            aux: self.aux.iter().map(|&(t, v)| (t, tape.value(v).item())).collect(),
        }
    }
}

/// Mean over rows of `-log softmax(logits)[label]`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let s = tape.shape(logits);
    if labels.len() != s.rows {
        return Err(Error::contract(
            "cross_entropy",
            format!("{} labels for {} rows", labels.len(), s.rows),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= s.cols) {
        return Err(Error::contract(
            "cross_entropy",
            format!("label {bad} outside {} classes", s.cols),
        ));
    }
    let lp = tape.log_softmax(logits)?;
    let picked = tape.pick(lp, labels)?;
    let sum = tape.sum(picked)?;
    tape.scale(sum, -1.0 / s.rows as f64)
}

/// Index of the largest entry per row; ties go to the lowest index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}
