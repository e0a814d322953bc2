//! Parametric building blocks recorded on a [`Tape`].

use alloc::format;
use alloc::vec::Vec;

use rand::RngCore;

use super::{Init, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// `y = x W + b` with `W: in x out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, bias: bool, seed: u64) -> Result<Self> {
        let weight = store.init(&format!("{name}.weight"), Shape::new(input, output), Init::Xavier, seed)?;
        let bias = if bias {
            Some(store.init(&format!("{name}.bias"), Shape::new(1, output), Init::Zeros, seed)?)
        } else {
            None
        };
        Ok(Linear {
            weight,
            bias,
            input,
            output,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Train/eval switch for a forward pass. In training mode dropout draws
/// its masks from the given generator; evaluation is deterministic.
pub struct ForwardMode<'r> {
    rate: f64,
    rng: Option<&'r mut dyn RngCore>,
}

impl<'r> ForwardMode<'r> {
    pub fn eval() -> Self {
        ForwardMode { rate: 0.0, rng: None }
    }

    pub fn train(rate: f64, rng: &'r mut dyn RngCore) -> Self {
        ForwardMode { rate, rng: Some(rng) }
    }

    pub fn is_train(&self) -> bool {
        self.rng.is_some()
    }

    pub fn dropout(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(rng) if self.rate > 0.0 => tape.dropout(x, self.rate, Some(rng)),
            _ => Ok(x),
        }
    }
}

/// Layer normalization over the feature axis with learned gain and shift.
#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.init(&format!("{name}.gamma"), Shape::new(1, width), Init::Ones, 0)?,
            beta: store.init(&format!("{name}.beta"), Shape::new(1, width), Init::Zeros, 0)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b)
    }
}

/// Single-step GRU.
///
/// Gate weights are stored fused as `[z | r | n]` column blocks:
/// `z = σ(x Wz + h Uz + bz)`, `r = σ(x Wr + h Ur + br)`,
/// `n = tanh(x Wn + bn + r ⊙ (h Un))`, `h' = (1 - z) ⊙ n + z ⊙ h`.
#[derive(Debug, Clone, Copy)]
pub struct GruCell {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, seed: u64) -> Result<Self> {
        Ok(GruCell {
            w: store.init(&format!("{name}.w"), Shape::new(input, 3 * hidden), Init::Xavier, seed)?,
            u: store.init(&format!("{name}.u"), Shape::new(hidden, 3 * hidden), Init::Xavier, seed)?,
            b: store.init(&format!("{name}.b"), Shape::new(1, 3 * hidden), Init::Zeros, seed)?,
            input,
            hidden,
        })
    }

    /// One step over a batch of rows: `x: rows x input`, `h: rows x hidden`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        let (sx, sh) = (tape.shape(x), tape.shape(h));
        if sx.cols != self.input || sh.cols != self.hidden || sx.rows != sh.rows {
            return Err(Error::Shape {
                op: "gru_cell",
                lhs: sx,
                rhs: sh,
            });
        }
        let hd = self.hidden;
        let w = tape.param(store, self.w);
        let u = tape.param(store, self.u);
        let b = tape.param(store, self.b);
        let gx = tape.matmul(x, w)?;
        let gx = tape.add(gx, b)?;
        let gh = tape.matmul(h, u)?;

        let xz = tape.slice_cols(gx, 0, hd)?;
        let hz = tape.slice_cols(gh, 0, hd)?;
        let z = tape.add(xz, hz)?;
        let z = tape.sigmoid(z)?;

        let xr = tape.slice_cols(gx, hd, hd)?;
        let hr = tape.slice_cols(gh, hd, hd)?;
        let r = tape.add(xr, hr)?;
        let r = tape.sigmoid(r)?;

        let xn = tape.slice_cols(gx, 2 * hd, hd)?;
        let hn = tape.slice_cols(gh, 2 * hd, hd)?;
        let rhn = tape.mul(r, hn)?;
        let n = tape.add(xn, rhn)?;
        let n = tape.tanh(n)?;

        // (1 - z) ⊙ n + z ⊙ h = n + z ⊙ (h - n)
        let diff = tape.sub(h, n)?;
        let zd = tape.mul(z, diff)?;
        tape.add(n, zd)
    }
}

/// Single-step LSTM with fused `[i | f | g | o]` gate blocks.
#[derive(Debug, Clone, Copy)]
pub struct LstmCell {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, seed: u64) -> Result<Self> {
        Ok(LstmCell {
            w: store.init(&format!("{name}.w"), Shape::new(input, 4 * hidden), Init::Xavier, seed)?,
            u: store.init(&format!("{name}.u"), Shape::new(hidden, 4 * hidden), Init::Xavier, seed)?,
            b: store.init(&format!("{name}.b"), Shape::new(1, 4 * hidden), Init::Zeros, seed)?,
            input,
            hidden,
        })
    }

    /// Run the cell over a batch of sequences in lock-step. `pre` holds
    /// `xs W + b` for every row; `steps[t]` lists, per sequence, the row of
    /// `pre` fed at step `t`. Returns the `batch x hidden` state per step.
    fn run(&self, tape: &mut Tape, store: &ParamStore, pre: Var, steps: &[Vec<usize>]) -> Result<Vec<Var>> {
        let hd = self.hidden;
        let batch = steps.first().map_or(0, Vec::len);
        let u = tape.param(store, self.u);
        let mut h = tape.constant(Tensor::zeros(batch, hd))?;
        let mut c = tape.constant(Tensor::zeros(batch, hd))?;
        let mut out = Vec::with_capacity(steps.len());
        for rows in steps {
            let gx = tape.gather_rows(pre, rows)?;
            let gh = tape.matmul(h, u)?;
            let g = tape.add(gx, gh)?;
            let i = tape.slice_cols(g, 0, hd)?;
            let i = tape.sigmoid(i)?;
            let f = tape.slice_cols(g, hd, hd)?;
            let f = tape.sigmoid(f)?;
            let cand = tape.slice_cols(g, 2 * hd, hd)?;
            let cand = tape.tanh(cand)?;
            let o = tape.slice_cols(g, 3 * hd, hd)?;
            let o = tape.sigmoid(o)?;
            let fc = tape.mul(f, c)?;
            let ig = tape.mul(i, cand)?;
            c = tape.add(fc, ig)?;
            let tc = tape.tanh(c)?;
            h = tape.mul(o, tc)?;
            out.push(h);
        }
        Ok(out)
    }
}

/// One-layer bidirectional LSTM over the rows of a sequence.
#[derive(Debug, Clone, Copy)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

impl BiLstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, seed: u64) -> Result<Self> {
        Ok(BiLstm {
            forward: LstmCell::new(store, &format!("{name}.fwd"), input, hidden, seed)?,
            backward: LstmCell::new(store, &format!("{name}.bwd"), input, hidden, seed)?,
        })
    }

    /// `xs: n x input` -> `n x 2*hidden` with `[forward | backward]` states.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, xs: Var) -> Result<Var> {
        let n = tape.shape(xs).rows;
        self.forward_batch(tape, store, xs, &[n])
    }

    /// Independent sequences stacked in `xs` (lengths in order, summing to
    /// the row count), processed together. Each sequence sees only its own
    /// rows; shorter sequences idle on a clamped row whose states are never
    /// read back.
    pub fn forward_batch(&self, tape: &mut Tape, store: &ParamStore, xs: Var, lengths: &[usize]) -> Result<Var> {
        let s = tape.shape(xs);
        if s.cols != self.forward.input {
            return Err(Error::Shape {
                op: "bilstm",
                lhs: s,
                rhs: Shape::new(s.rows, self.forward.input),
            });
        }
        if lengths.iter().sum::<usize>() != s.rows || lengths.contains(&0) {
            return Err(Error::contract(
                "bilstm",
                format!("sequence lengths {lengths:?} do not tile {} rows", s.rows),
            ));
        }
        let offsets: Vec<usize> = lengths
            .iter()
            .scan(0, |acc, &l| {
                let o = *acc;
                *acc += l;
                Some(o)
            })
            .collect();
        let steps = lengths.iter().copied().max().unwrap_or(0);
        let fwd_rows: Vec<Vec<usize>> = (0..steps)
            .map(|t| offsets.iter().zip(lengths).map(|(&o, &l)| o + t.min(l - 1)).collect())
            .collect();
        let bwd_rows: Vec<Vec<usize>> = (0..steps)
            .map(|t| {
                offsets
                    .iter()
                    .zip(lengths)
                    .map(|(&o, &l)| o + (l - 1).saturating_sub(t))
                    .collect()
            })
            .collect();
        let mut pre = [xs; 2];
        for (slot, cell) in pre.iter_mut().zip([&self.forward, &self.backward]) {
            let w = tape.param(store, cell.w);
            let b = tape.param(store, cell.b);
            let p = tape.matmul(xs, w)?;
            *slot = tape.add(p, b)?;
        }
        let fwd = self.forward.run(tape, store, pre[0], &fwd_rows)?;
        let bwd = self.backward.run(tape, store, pre[1], &bwd_rows)?;
        let fwd = tape.concat_rows(&fwd)?;
        let bwd = tape.concat_rows(&bwd)?;
        // Step-major stacking: state of sequence b at step t is row t*B + b.
        let batch = lengths.len();
        let mut fwd_index = Vec::with_capacity(s.rows);
        let mut bwd_index = Vec::with_capacity(s.rows);
        for (b, &l) in lengths.iter().enumerate() {
            for pos in 0..l {
                fwd_index.push(pos * batch + b);
                bwd_index.push((l - 1 - pos) * batch + b);
            }
        }
        let hf = tape.gather_rows(fwd, &fwd_index)?;
        let hb = tape.gather_rows(bwd, &bwd_index)?;
        tape.concat_cols(&[hf, hb])
    }
}
