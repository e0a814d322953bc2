//! Uni-modal encoders, speaker injection and the shared/separate subspace
//! extractors.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::nn::{BiLstm, ForwardMode, LayerNorm, Linear};
use crate::autodiff::{Init, ParamId, ParamStore, Tape, Var};
use crate::corpus::Modality;
use crate::error::{Error, Result};
use crate::tensor::Shape;

/// Bidirectional LSTM over the utterance sequence of one dialogue, followed
/// by a projection of the concatenated directions to the model width.
#[derive(Debug, Clone, Copy)]
pub struct TextEncoder {
    pub lstm: BiLstm,
    pub proj: Linear,
}

impl TextEncoder {
    /// `hidden` is the per-direction LSTM width.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        width: usize,
        seed: u64,
    ) -> Result<Self> {
        Ok(TextEncoder {
            lstm: BiLstm::new(store, &format!("{name}.lstm"), input, hidden, seed)?,
            proj: Linear::new(store, &format!("{name}.proj"), 2 * hidden, width, true, seed)?,
        })
    }

    /// `xs: n x input` for a single dialogue, in conversation order.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, xs: Var) -> Result<Var> {
        let h = self.lstm.forward(tape, store, xs)?;
        self.proj.forward(tape, store, h)
    }

    /// Several dialogues stacked in `xs`, each encoded independently.
    pub fn forward_batch(&self, tape: &mut Tape, store: &ParamStore, xs: Var, lengths: &[usize]) -> Result<Var> {
        let h = self.lstm.forward_batch(tape, store, xs, lengths)?;
        self.proj.forward(tape, store, h)
    }
}

/// Per-utterance affine map with a tanh nonlinearity.
#[derive(Debug, Clone, Copy)]
pub struct FeedForwardEncoder {
    pub lin: Linear,
}

impl FeedForwardEncoder {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, width: usize, seed: u64) -> Result<Self> {
        Ok(FeedForwardEncoder {
            lin: Linear::new(store, name, input, width, true, seed)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, xs: Var) -> Result<Var> {
        let y = self.lin.forward(tape, store, xs)?;
        tape.tanh(y)
    }
}

/// Speaker embedding table `D_max x d`.
#[derive(Debug, Clone, Copy)]
pub struct SpeakerEmbedding {
    pub table: ParamId,
    pub speakers: usize,
}

impl SpeakerEmbedding {
    pub fn new(store: &mut ParamStore, name: &str, speakers: usize, width: usize, seed: u64) -> Result<Self> {
        Ok(SpeakerEmbedding {
            table: store.init(name, Shape::new(speakers, width), Init::Normal(0.1), seed)?,
            speakers,
        })
    }

    /// `x[i] + mu * S[speaker(i)]`.
    pub fn inject(&self, tape: &mut Tape, store: &ParamStore, x: Var, speakers: &[usize], mu: f64) -> Result<Var> {
        if !(0.0..=1.0).contains(&mu) {
            return Err(Error::contract("inject_speaker", format!("ratio {mu} outside [0, 1]")));
        }
        if let Some(&bad) = speakers.iter().find(|&&s| s >= self.speakers) {
            return Err(Error::contract(
                "inject_speaker",
                format!("speaker {bad} outside a table of {}", self.speakers),
            ));
        }
        let table = tape.param(store, self.table);
        let rows = tape.gather_rows(table, speakers)?;
        let rows = tape.scale(rows, mu)?;
        tape.add(x, rows)
    }
}

/// Two-layer subspace map: Lin, ReLU, dropout, Lin, dropout, layer norm.
#[derive(Debug, Clone, Copy)]
pub struct SubspaceMap {
    pub first: Linear,
    pub second: Linear,
    pub norm: LayerNorm,
}

impl SubspaceMap {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, width: usize, seed: u64) -> Result<Self> {
        Ok(SubspaceMap {
            first: Linear::new(store, &format!("{name}.lin0"), input, width, true, seed)?,
            second: Linear::new(store, &format!("{name}.lin1"), width, width, true, seed)?,
            norm: LayerNorm::new(store, &format!("{name}.norm"), width)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mode: &mut ForwardMode<'_>, x: Var) -> Result<Var> {
        let h = self.first.forward(tape, store, x)?;
        let h = tape.relu(h)?;
        let h = mode.dropout(tape, h)?;
        let h = self.second.forward(tape, store, h)?;
        let h = mode.dropout(tape, h)?;
        self.norm.forward(tape, store, h)
    }
}

/// Outputs of [`Subspaces::extract`], in the order of the input modalities.
#[derive(Debug, Clone)]
pub struct SubspaceOutputs {
    pub separate: Vec<(Modality, Var)>,
    /// Fused shared-subspace features; absent for a single modality.
    pub shared: Option<Var>,
}

impl SubspaceOutputs {
    pub fn separate_of(&self, m: Modality) -> Option<Var> {
        self.separate.iter().find(|(k, _)| *k == m).map(|&(_, v)| v)
    }
}

/// One shared extractor applied with the same parameters to every active
/// modality, a fusion projection over their outputs, and one separate
/// extractor per modality.
#[derive(Debug, Clone)]
pub struct Subspaces {
    pub shared: Option<SubspaceMap>,
    pub fusion: Option<Linear>,
    pub separate: Vec<(Modality, SubspaceMap)>,
}

impl Subspaces {
    /// `modalities` lists the active modalities in fusion order. The shared
    /// branch exists only when at least two are active.
    pub fn new(store: &mut ParamStore, name: &str, modalities: &[Modality], width: usize, seed: u64) -> Result<Self> {
        let multi = modalities.len() >= 2;
        let shared = if multi {
            Some(SubspaceMap::new(store, &format!("{name}.shared"), width, width, seed)?)
        } else {
            None
        };
        let fusion = if multi {
            Some(Linear::new(
                store,
                &format!("{name}.fusion"),
                modalities.len() * width,
                width,
                true,
                seed,
            )?)
        } else {
            None
        };
        let separate = modalities
            .iter()
            .map(|&m| SubspaceMap::new(store, &format!("{name}.sep.{}", m.tag()), width, width, seed).map(|f| (m, f)))
            .collect::<Result<_>>()?;
        Ok(Subspaces {
            shared,
            fusion,
            separate,
        })
    }

    /// `inputs` must list the same modalities, in the same order, as at
    /// construction.
    pub fn extract(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mode: &mut ForwardMode<'_>,
        inputs: &[(Modality, Var)],
    ) -> Result<SubspaceOutputs> {
        if inputs.len() != self.separate.len() || inputs.iter().zip(&self.separate).any(|(a, b)| a.0 != b.0) {
            return Err(Error::contract(
                "subspace_extract",
                "input modalities differ from the configured set",
            ));
        }
        let mut separate = Vec::with_capacity(inputs.len());
        for (&(m, x), (_, f)) in inputs.iter().zip(&self.separate) {
            separate.push((m, f.forward(tape, store, mode, x)?));
        }
        let shared = match (&self.shared, &self.fusion) {
            (Some(f), Some(fusion)) => {
                let mut parts = Vec::with_capacity(inputs.len());
                for &(_, x) in inputs {
                    parts.push(f.forward(tape, store, mode, x)?);
                }
                let cat = tape.concat_cols(&parts)?;
                Some(fusion.forward(tape, store, cat)?)
            }
            _ => None,
        };
        Ok(SubspaceOutputs { separate, shared })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
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

    #[test]
    fn text_encoder_single_step_shape() {
        let mut store = ParamStore::new();
        let enc = TextEncoder::new(&mut store, "t", 5, 3, 4, 1).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(random(1, 5, 0)).unwrap();
        let y = enc.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.shape(y), Shape::new(1, 4));
    }

    #[test]
    fn bilstm_reversal_swaps_directions() {
        let mut store = ParamStore::new();
        let lstm = BiLstm::new(&mut store, "l", 4, 3, 7).unwrap();
        // A second BiLSTM whose directions are the first one's, swapped.
        let swapped = BiLstm {
            forward: lstm.backward,
            backward: lstm.forward,
        };
        let xs = random(3, 4, 2);
        let rev = Tensor::from_rows(&[xs.row(2).to_vec(), xs.row(1).to_vec(), xs.row(0).to_vec()]);
        let mut tape = Tape::new();
        let a = tape.constant(xs).unwrap();
        let b = tape.constant(rev).unwrap();
        let ya = lstm.forward(&mut tape, &store, a).unwrap();
        let yb = swapped.forward(&mut tape, &store, b).unwrap();
        let (ya, yb) = (tape.value(ya).clone(), tape.value(yb).clone());
        for t in 0..3 {
            let (ra, rb) = (ya.row(t), yb.row(2 - t));
            // forward half of one equals backward half of the other
            for c in 0..3 {
                assert!((ra[c] - rb[3 + c]).abs() < 1e-14);
                assert!((ra[3 + c] - rb[c]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn batched_bilstm_matches_separate_runs() {
        let mut store = ParamStore::new();
        let lstm = BiLstm::new(&mut store, "l", 3, 2, 4).unwrap();
        let xs = random(9, 3, 6);
        let lengths = [4, 1, 3, 1];
        let mut tape = Tape::new();
        let all = tape.constant(xs.clone()).unwrap();
        let batched = lstm.forward_batch(&mut tape, &store, all, &lengths).unwrap();
        let batched = tape.value(batched).clone();
        let mut row = 0;
        for &l in &lengths {
            let part = Tensor::from_rows(&(row..row + l).map(|r| xs.row(r).to_vec()).collect::<Vec<_>>());
            let x = tape.constant(part).unwrap();
            let y = lstm.forward(&mut tape, &store, x).unwrap();
            for k in 0..l {
                for (a, b) in tape.value(y).row(k).iter().zip(batched.row(row + k)) {
                    assert!((a - b).abs() < 1e-14);
                }
            }
            row += l;
        }
        assert!(lstm.forward_batch(&mut tape, &store, all, &[4, 4]).is_err());
    }

    #[test]
    fn text_encoder_is_context_sensitive() {
        let mut store = ParamStore::new();
        let enc = TextEncoder::new(&mut store, "t", 4, 3, 4, 3).unwrap();
        let xs = random(3, 4, 5);
        let shuffled = Tensor::from_rows(&[xs.row(1).to_vec(), xs.row(0).to_vec(), xs.row(2).to_vec()]);
        let mut tape = Tape::new();
        let a = tape.constant(xs).unwrap();
        let b = tape.constant(shuffled).unwrap();
        let ya = enc.forward(&mut tape, &store, a).unwrap();
        let yb = enc.forward(&mut tape, &store, b).unwrap();
        let diff: f64 = tape
            .value(ya)
            .row(2)
            .iter()
            .zip(tape.value(yb).row(2))
            .map(|(p, q)| (p - q).abs())
            .sum();
        assert!(diff > 1e-6);
    }

    #[test]
    fn feed_forward_encoder_is_row_wise() {
        let mut store = ParamStore::new();
        let enc = FeedForwardEncoder::new(&mut store, "a", 6, 4, 1).unwrap();
        let xs = random(5, 6, 9);
        let perm = [3, 0, 4, 1, 2];
        let permuted = Tensor::from_rows(&perm.map(|i| xs.row(i).to_vec()));
        let mut tape = Tape::new();
        let a = tape.constant(xs).unwrap();
        let b = tape.constant(permuted).unwrap();
        let ya = enc.forward(&mut tape, &store, a).unwrap();
        let yb = enc.forward(&mut tape, &store, b).unwrap();
        assert_eq!(tape.shape(ya), Shape::new(5, 4));
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(tape.value(yb).row(k), tape.value(ya).row(i));
        }
    }

    #[test]
    fn feed_forward_encoder_zero_weights() {
        let mut store = ParamStore::new();
        let enc = FeedForwardEncoder::new(&mut store, "a", 6, 4, 1).unwrap();
        store.value_mut(enc.lin.weight).fill(0.0);
        let mut tape = Tape::new();
        let x = tape.constant(random(2, 6, 1)).unwrap();
        let y = enc.forward(&mut tape, &store, x).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn speaker_injection() {
        let mut store = ParamStore::new();
        let emb = SpeakerEmbedding::new(&mut store, "spk", 2, 3, 0).unwrap();
        let x0 = random(3, 3, 4);
        let speakers = [1, 0, 1];

        let mut tape = Tape::new();
        let x = tape.constant(x0.clone()).unwrap();
        let y = emb.inject(&mut tape, &store, x, &speakers, 0.0).unwrap();
        assert_eq!(tape.value(y), &x0);

        let z = tape.constant(Tensor::zeros(3, 3)).unwrap();
        let y = emb.inject(&mut tape, &store, z, &speakers, 1.0).unwrap();
        let table = store.value(emb.table);
        for (i, &s) in speakers.iter().enumerate() {
            assert_eq!(tape.value(y).row(i), table.row(s));
        }

        assert!(emb.inject(&mut tape, &store, z, &[2, 0, 0], 1.0).is_err());
        assert!(emb.inject(&mut tape, &store, z, &speakers, 1.5).is_err());
    }

    fn subspaces(store: &mut ParamStore) -> Subspaces {
        Subspaces::new(
            store,
            "sub",
            &[Modality::Visual, Modality::Acoustic, Modality::Text],
            4,
            3,
        )
        .unwrap()
    }

    #[test]
    fn shared_extractor_identity_weights_agree() {
        let mut store = ParamStore::new();
        let sub = subspaces(&mut store);
        let f = sub.shared.unwrap();
        store.value_mut(f.first.weight).clone_from(&Tensor::identity(4));
        store.value_mut(f.second.weight).clone_from(&Tensor::identity(4));
        let x0 = random(2, 4, 8);
        let mut tape = Tape::new();
        let a = tape.constant(x0.clone()).unwrap();
        let b = tape.constant(x0).unwrap();
        let mut mode = ForwardMode::eval();
        let ya = f.forward(&mut tape, &store, &mut mode, a).unwrap();
        let yb = f.forward(&mut tape, &store, &mut mode, b).unwrap();
        assert_eq!(tape.value(ya), tape.value(yb));
    }

    #[test]
    fn subspace_shapes() {
        let mut store = ParamStore::new();
        let sub = subspaces(&mut store);
        let mut tape = Tape::new();
        let inputs: Vec<(Modality, Var)> = [Modality::Visual, Modality::Acoustic, Modality::Text]
            .iter()
            .enumerate()
            .map(|(k, &m)| (m, tape.constant(random(5, 4, k as u64)).unwrap()))
            .collect();
        let out = sub
            .extract(&mut tape, &store, &mut ForwardMode::eval(), &inputs)
            .unwrap();
        assert_eq!(out.separate.len(), 3);
        for &(_, v) in &out.separate {
            assert_eq!(tape.shape(v), Shape::new(5, 4));
        }
        assert_eq!(tape.shape(out.shared.unwrap()), Shape::new(5, 4));
    }

    #[test]
    fn shared_gradient_collects_every_modality() {
        let mut store = ParamStore::new();
        let sub = subspaces(&mut store);
        let order = [Modality::Visual, Modality::Acoustic, Modality::Text];
        let w = sub.shared.unwrap().first.weight;
        let grad_with = |zero: Option<usize>, store: &ParamStore| {
            let mut tape = Tape::new();
            let inputs: Vec<(Modality, Var)> = order
                .iter()
                .enumerate()
                .map(|(k, &m)| {
                    let t = if zero == Some(k) {
                        Tensor::zeros(3, 4)
                    } else {
                        random(3, 4, 10 + k as u64)
                    };
                    (m, tape.constant(t).unwrap())
                })
                .collect();
            let out = sub
                .extract(&mut tape, store, &mut ForwardMode::eval(), &inputs)
                .unwrap();
            let weights = tape.constant(random(3, 4, 99)).unwrap();
            let prod = tape.mul(out.shared.unwrap(), weights).unwrap();
            let loss = tape.sum(prod).unwrap();
            let mut s = store.clone();
            s.zero_grad();
            tape.backward_into(loss, &mut s).unwrap();
            s.grad(w).clone()
        };
        let full = grad_with(None, &store);
        for k in 0..3 {
            assert!(full.max_abs_diff(&grad_with(Some(k), &store)) > 1e-9);
        }
    }
}
