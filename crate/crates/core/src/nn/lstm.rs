use rand::Rng;

use super::{check_lengths, Module, Param};
use crate::error::{Error, Result};
use crate::tensor::ops::sigmoid;
use crate::tensor::{Tensor, GATHER_ZERO};

/// Cached activations of one sample's recurrence, for back-propagation.
struct Trace {
    /// Gate activations `[T, 4H]` in order input, forget, candidate, output.
    gates: Vec<f64>,
    /// Cell states `[T, H]`.
    cells: Vec<f64>,
    /// `tanh(cell)` `[T, H]`.
    cell_tanh: Vec<f64>,
}

/// Runs an LSTM over `[B, T, D]` and returns hidden states `[B, T, H]`.
///
/// Gate order in `w_ih` (`[4H, D]`), `w_hh` (`[4H, H]`) and `bias` (`[4H]`)
/// is input, forget, candidate, output. Steps at or beyond a sample's length
/// are not computed and output zeros. `init` is an optional `(h0, c0)` pair
/// of `[B, H]` tensors; zero state otherwise.
pub fn lstm_sequence(
    x: &Tensor,
    w_ih: &Tensor,
    w_hh: &Tensor,
    bias: &Tensor,
    lengths: &[usize],
    init: Option<(&Tensor, &Tensor)>,
) -> Result<Tensor> {
    let &[batch, time, input] = x.shape() else {
        return Err(Error::shape("lstm", format!("input must be [B,T,D], got {:?}", x.shape())));
    };
    let &[g4, d] = w_ih.shape() else {
        return Err(Error::shape("lstm", "w_ih must be rank 2"));
    };
    let hidden = g4 / 4;
    if d != input || g4 % 4 != 0 {
        return Err(Error::shape(
            "lstm",
            format!("input size {input} vs w_ih {:?}", w_ih.shape()),
        ));
    }
    if w_hh.shape() != [g4, hidden] || bias.shape() != [g4] {
        return Err(Error::shape("lstm", "recurrent weight or bias has wrong shape"));
    }
    check_lengths("lstm", lengths, batch, time)?;
    if let Some((h0, c0)) = init {
        if h0.shape() != [batch, hidden] || c0.shape() != [batch, hidden] {
            return Err(Error::shape("lstm", "initial state must be [B, H]"));
        }
    }

    let (xd, wi, wh, bd) = (x.data(), w_ih.data(), w_hh.data(), bias.data());
    let mut out = vec![0.0; batch * time * hidden];
    let mut traces = Vec::with_capacity(batch);
    let mut z = vec![0.0; g4];
    for b in 0..batch {
        let len = lengths[b];
        let mut trace = Trace {
            gates: vec![0.0; len * g4],
            cells: vec![0.0; len * hidden],
            cell_tanh: vec![0.0; len * hidden],
        };
        let (mut h_prev, mut c_prev) = match init {
            Some((h0, c0)) => (
                h0.data()[b * hidden..(b + 1) * hidden].to_vec(),
                c0.data()[b * hidden..(b + 1) * hidden].to_vec(),
            ),
            None => (vec![0.0; hidden], vec![0.0; hidden]),
        };
        for t in 0..len {
            let xt = &xd[(b * time + t) * input..(b * time + t + 1) * input];
            for (j, zj) in z.iter_mut().enumerate() {
                let wr = &wi[j * input..(j + 1) * input];
                let ur = &wh[j * hidden..(j + 1) * hidden];
                *zj = bd[j]
                    + xt.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>()
                    + h_prev.iter().zip(ur).map(|(a, b)| a * b).sum::<f64>();
            }
            let gt = &mut trace.gates[t * g4..(t + 1) * g4];
            for k in 0..hidden {
                gt[k] = sigmoid(z[k]);
                gt[hidden + k] = sigmoid(z[hidden + k]);
                gt[2 * hidden + k] = z[2 * hidden + k].tanh();
                gt[3 * hidden + k] = sigmoid(z[3 * hidden + k]);
            }
            let o_off = (b * time + t) * hidden;
            for k in 0..hidden {
                let c = gt[hidden + k] * c_prev[k] + gt[k] * gt[2 * hidden + k];
                let tc = c.tanh();
                trace.cells[t * hidden + k] = c;
                trace.cell_tanh[t * hidden + k] = tc;
                out[o_off + k] = gt[3 * hidden + k] * tc;
            }
            h_prev.copy_from_slice(&out[o_off..o_off + hidden]);
            c_prev.copy_from_slice(&trace.cells[t * hidden..(t + 1) * hidden]);
        }
        traces.push(trace);
    }

    let mut inputs = vec![x.clone(), w_ih.clone(), w_hh.clone(), bias.clone()];
    if let Some((h0, c0)) = init {
        inputs.push(h0.clone());
        inputs.push(c0.clone());
    }
    let (xc, wic, whc) = (x.clone(), w_ih.clone(), w_hh.clone());
    let init_c = init.map(|(h, c)| (h.clone(), c.clone()));
    let lengths = lengths.to_vec();
    Ok(Tensor::from_op(
        "lstm",
        vec![batch, time, hidden],
        out,
        inputs,
        Box::new(move |g, out| {
            let (xd, wi, wh) = (xc.data(), wic.data(), whc.data());
            let mut gx = vec![0.0; xd.len()];
            let mut gwi = vec![0.0; wi.len()];
            let mut gwh = vec![0.0; wh.len()];
            let mut gb = vec![0.0; g4];
            let mut gh0 = vec![0.0; batch * hidden];
            let mut gc0 = vec![0.0; batch * hidden];
            let mut dz = vec![0.0; g4];
            for b in 0..batch {
                let len = lengths[b];
                let tr = &traces[b];
                let mut dh_next = vec![0.0; hidden];
                let mut dc_next = vec![0.0; hidden];
                let (h_init, c_init) = match &init_c {
                    Some((h0, c0)) => (
                        h0.data()[b * hidden..(b + 1) * hidden].to_vec(),
                        c0.data()[b * hidden..(b + 1) * hidden].to_vec(),
                    ),
                    None => (vec![0.0; hidden], vec![0.0; hidden]),
                };
                for t in (0..len).rev() {
                    let gt = &tr.gates[t * g4..(t + 1) * g4];
                    let c_prev: &[f64] = if t == 0 { &c_init } else { &tr.cells[(t - 1) * hidden..t * hidden] };
                    let h_prev: &[f64] = if t == 0 {
                        &h_init
                    } else {
                        &out[(b * time + t - 1) * hidden..(b * time + t) * hidden]
                    };
                    let o_off = (b * time + t) * hidden;
                    for k in 0..hidden {
                        let (i, f, cand, o) = (gt[k], gt[hidden + k], gt[2 * hidden + k], gt[3 * hidden + k]);
                        let tc = tr.cell_tanh[t * hidden + k];
                        let dh = g[o_off + k] + dh_next[k];
                        let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                        dz[k] = dc * cand * i * (1.0 - i);
                        dz[hidden + k] = dc * c_prev[k] * f * (1.0 - f);
                        dz[2 * hidden + k] = dc * i * (1.0 - cand * cand);
                        dz[3 * hidden + k] = dh * tc * o * (1.0 - o);
                        dc_next[k] = dc * f;
                    }
                    dh_next.iter_mut().for_each(|v| *v = 0.0);
                    let xt = &xd[(b * time + t) * input..(b * time + t + 1) * input];
                    let gxt = &mut gx[(b * time + t) * input..(b * time + t + 1) * input];
                    for j in 0..g4 {
                        let dzj = dz[j];
                        if dzj == 0.0 {
                            continue;
                        }
                        gb[j] += dzj;
                        let wr = &wi[j * input..(j + 1) * input];
                        let gwr = &mut gwi[j * input..(j + 1) * input];
                        for q in 0..input {
                            gxt[q] += dzj * wr[q];
                            gwr[q] += dzj * xt[q];
                        }
                        let ur = &wh[j * hidden..(j + 1) * hidden];
                        let gur = &mut gwh[j * hidden..(j + 1) * hidden];
                        for q in 0..hidden {
                            dh_next[q] += dzj * ur[q];
                            gur[q] += dzj * h_prev[q];
                        }
                    }
                }
                gh0[b * hidden..(b + 1) * hidden].copy_from_slice(&dh_next);
                gc0[b * hidden..(b + 1) * hidden].copy_from_slice(&dc_next);
            }
            let mut grads = vec![Some(gx), Some(gwi), Some(gwh), Some(gb)];
            if init_c.is_some() {
                grads.push(Some(gh0));
                grads.push(Some(gc0));
            }
            grads
        }),
    ))
}

/// Picks `x[b, lengths[b] - 1, :]` from `[B, T, H]`, giving `[B, H]`.
pub fn select_last_valid(x: &Tensor, lengths: &[usize]) -> Result<Tensor> {
    let &[batch, time, hidden] = x.shape() else {
        return Err(Error::shape("select_last", "expected [B,T,H]"));
    };
    check_lengths("select_last", lengths, batch, time)?;
    if lengths.contains(&0) {
        return Err(Error::shape("select_last", "empty sequence has no last step"));
    }
    let idx = (0..batch)
        .flat_map(|b| {
            let off = (b * time + lengths[b] - 1) * hidden;
            off..off + hidden
        })
        .collect();
    x.gather(&[batch, hidden], idx)
}

/// Reverses each sample's first `lengths[b]` steps of `[B, T, D]`; padding
/// stays zero.
pub fn reverse_within_lengths(x: &Tensor, lengths: &[usize]) -> Result<Tensor> {
    let &[batch, time, dim] = x.shape() else {
        return Err(Error::shape("reverse", "expected [B,T,D]"));
    };
    check_lengths("reverse", lengths, batch, time)?;
    let mut idx = vec![GATHER_ZERO; batch * time * dim];
    for b in 0..batch {
        let len = lengths[b];
        for t in 0..len {
            let src = (b * time + len - 1 - t) * dim;
            let dst = (b * time + t) * dim;
            for q in 0..dim {
                idx[dst + q] = src + q;
            }
        }
    }
    x.gather(x.shape(), idx)
}

#[derive(Debug, Clone)]
pub struct LstmOutput {
    /// `[B, T, H]`, zero beyond each length.
    pub outputs: Tensor,
    /// `[B, H]`, the hidden state at each sample's final valid step.
    pub last_hidden: Tensor,
}

/// Single-layer LSTM; the forget-gate bias starts at +1.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub w_ih: Param,
    pub w_hh: Param,
    pub bias: Param,
}

impl Lstm {
    pub fn new(name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        Lstm {
            w_ih: Param::uniform(format!("{name}.w_ih"), &[4 * hidden, input], input, rng),
            w_hh: Param::uniform(format!("{name}.w_hh"), &[4 * hidden, hidden], hidden, rng),
            bias: Param::trainable(format!("{name}.bias"), &[4 * hidden], bias),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_ih.shape()[1]
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hh.shape()[1]
    }

    pub fn forward(&self, x: &Tensor, lengths: &[usize], init: Option<(&Tensor, &Tensor)>) -> Result<LstmOutput> {
        let outputs = lstm_sequence(
            x,
            self.w_ih.tensor(),
            self.w_hh.tensor(),
            self.bias.tensor(),
            lengths,
            init,
        )?;
        let last_hidden = select_last_valid(&outputs, lengths)?;
        Ok(LstmOutput { outputs, last_hidden })
    }
}

impl Module for Lstm {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w_ih, &self.w_hh, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.bias]
    }
}

/// Two independent LSTMs over the original and the length-aware reversed
/// order, concatenated per step into `[B, T, 2H]`.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub forward_dir: Lstm,
    pub backward_dir: Lstm,
}

impl BiLstm {
    pub fn new(name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        BiLstm {
            forward_dir: Lstm::new(&format!("{name}.fwd"), input, hidden, rng),
            backward_dir: Lstm::new(&format!("{name}.bwd"), input, hidden, rng),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.forward_dir.hidden_size()
    }

    pub fn forward(&self, x: &Tensor, lengths: &[usize]) -> Result<Tensor> {
        let fwd = self.forward_dir.forward(x, lengths, None)?.outputs;
        let rev = reverse_within_lengths(x, lengths)?;
        let bwd = self.backward_dir.forward(&rev, lengths, None)?.outputs;
        let bwd = reverse_within_lengths(&bwd, lengths)?;
        Tensor::concat_last(&[fwd, bwd])
    }
}

impl Module for BiLstm {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.forward_dir.params();
        p.extend(self.backward_dir.params());
        p
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.forward_dir.params_mut();
        p.extend(self.backward_dir.params_mut());
        p
    }
}
