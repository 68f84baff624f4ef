//! Training engine: sequence forward passes, exact backpropagation through
//! time for every cell kind, finite-difference gradient checking, seeded
//! initialization, and an Adam/SGD epoch loop.
//!
//! Backpropagation is hand-derived per cell. The forward pass records a
//! [`SequenceTape`] (states plus per-step gate activations) and the backward
//! pass walks it in reverse, accumulating gradients into a [`CellWeights`]
//! of the same shape as the parameters. The finite-difference checker is the
//! referee for all of it.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cells::{
    readout, step, step_traced, CellKind, CellParams, CellWeights, CruCore, CruGates,
    DecomposedInput, FeedBlock, GateBlock, GruCore, GruGates, HiddenState, LstmCore, LstmGates,
    Readout, RnnCore, SplitReadout, StepInput, StepTrace,
};
use crate::error::{Error, Result};
use crate::linalg::axpy;

/// One training example: a window of raw input rows, optionally the same
/// window decomposed per channel, and the flattened forecast target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub inputs: Vec<Vec<f64>>,
    pub decomposed: Option<Vec<DecomposedInput>>,
    pub target: Vec<f64>,
}

impl Sample {
    pub fn seq_len(&self) -> usize {
        self.inputs.len()
    }

    fn step_input(&self, t: usize, wants_decomposition: bool) -> Result<StepInput<'_>> {
        if wants_decomposition {
            let d = self.decomposed.as_ref().ok_or_else(|| {
                Error::InvalidParameter(
                    "this cell kind needs decomposed windows; decompose the dataset first".into(),
                )
            })?;
            Ok(StepInput::Decomposed(&d[t]))
        } else {
            Ok(StepInput::Raw(&self.inputs[t]))
        }
    }
}

/// Forward-pass record: `states[0]` is the initial state, `states[t + 1]`
/// the state after consuming step `t`, `traces[t]` that step's activations.
#[derive(Debug, Clone)]
pub struct SequenceTape {
    pub states: Vec<HiddenState>,
    pub traces: Vec<StepTrace>,
    pub prediction: Vec<f64>,
}

/// Run a full window through the cell, keeping everything backward needs.
pub fn forward_sequence(p: &CellParams, sample: &Sample) -> Result<SequenceTape> {
    let t_len = sample.seq_len();
    if t_len == 0 {
        return Err(Error::InvalidParameter("empty input sequence".into()));
    }
    if let Some(d) = &sample.decomposed {
        if d.len() != t_len {
            return Err(Error::shape(
                "forward_sequence",
                format!("{t_len} decomposed steps"),
                format!("{}", d.len()),
            ));
        }
    }
    let wants = p.kind.uses_decomposition();
    let mut states = Vec::with_capacity(t_len + 1);
    let mut traces = Vec::with_capacity(t_len);
    states.push(HiddenState::initial(p.kind, p.hidden_dim));
    for t in 0..t_len {
        let (next, trace) = step_traced(p, sample.step_input(t, wants)?, &states[t])?;
        states.push(next);
        traces.push(trace);
    }
    let prediction = readout(p, states.last().expect("one state per step"))?;
    Ok(SequenceTape {
        states,
        traces,
        prediction,
    })
}

/// Run a window through the cell and read out the forecast, keeping nothing.
pub fn predict(p: &CellParams, sample: &Sample) -> Result<Vec<f64>> {
    let t_len = sample.seq_len();
    if t_len == 0 {
        return Err(Error::InvalidParameter("empty input sequence".into()));
    }
    let wants = p.kind.uses_decomposition();
    let mut state = HiddenState::initial(p.kind, p.hidden_dim);
    for t in 0..t_len {
        state = step(p, sample.step_input(t, wants)?, &state)?;
    }
    readout(p, &state)
}

/// Mean squared error over one output vector.
pub fn mse_loss(prediction: &[f64], target: &[f64]) -> Result<f64> {
    if prediction.len() != target.len() || prediction.is_empty() {
        return Err(Error::shape(
            "mse_loss",
            format!("non-empty target of length {}", prediction.len()),
            format!("length {}", target.len()),
        ));
    }
    Ok(prediction
        .iter()
        .zip(target)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / prediction.len() as f64)
}

fn bad_tape() -> Error {
    Error::InvalidParameter("tape does not match the cell kind".into())
}

/// dz already sits behind the activation; accumulate the block's gradients
/// and pull the recurrent term back into `dh_in`.
fn gate_backward(
    block: &GateBlock,
    g: &mut GateBlock,
    dz: &[f64],
    x: &[f64],
    h_in: &[f64],
    dh_in: &mut [f64],
) -> Result<()> {
    g.w_x.add_outer(dz, x)?;
    g.w_h.add_outer(dz, h_in)?;
    axpy(&mut g.b, 1.0, dz)?;
    block.w_h.matvec_t_add(dz, dh_in)
}

fn rnn_backward_step(
    core: &RnnCore,
    g: &mut RnnCore,
    h_new: &[f64],
    x: &[f64],
    h_prev: &[f64],
    dh: &[f64],
) -> Result<Vec<f64>> {
    let dz: Vec<f64> = dh
        .iter()
        .zip(h_new)
        .map(|(d, h)| d * (1.0 - h * h))
        .collect();
    let mut dh_prev = vec![0.0; h_prev.len()];
    gate_backward(&core.h, &mut g.h, &dz, x, h_prev, &mut dh_prev)?;
    Ok(dh_prev)
}

/// `dc` carries the cell-state gradient and leaves as the previous step's.
fn lstm_backward_step(
    core: &LstmCore,
    g: &mut LstmCore,
    gates: &LstmGates,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    dh: &[f64],
    dc: &mut [f64],
) -> Result<Vec<f64>> {
    let hd = h_prev.len();
    for k in 0..hd {
        dc[k] += dh[k] * gates.o[k] * (1.0 - gates.tanh_c[k] * gates.tanh_c[k]);
    }
    let dz_i: Vec<f64> = (0..hd)
        .map(|k| dc[k] * gates.g[k] * gates.i[k] * (1.0 - gates.i[k]))
        .collect();
    let dz_f: Vec<f64> = (0..hd)
        .map(|k| dc[k] * c_prev[k] * gates.f[k] * (1.0 - gates.f[k]))
        .collect();
    let dz_o: Vec<f64> = (0..hd)
        .map(|k| dh[k] * gates.tanh_c[k] * gates.o[k] * (1.0 - gates.o[k]))
        .collect();
    let dz_g: Vec<f64> = (0..hd)
        .map(|k| dc[k] * gates.i[k] * (1.0 - gates.g[k] * gates.g[k]))
        .collect();
    let mut dh_prev = vec![0.0; hd];
    gate_backward(&core.i, &mut g.i, &dz_i, x, h_prev, &mut dh_prev)?;
    gate_backward(&core.f, &mut g.f, &dz_f, x, h_prev, &mut dh_prev)?;
    gate_backward(&core.o, &mut g.o, &dz_o, x, h_prev, &mut dh_prev)?;
    gate_backward(&core.c, &mut g.c, &dz_g, x, h_prev, &mut dh_prev)?;
    for k in 0..hd {
        dc[k] *= gates.f[k];
    }
    Ok(dh_prev)
}

fn gru_backward_step(
    core: &GruCore,
    g: &mut GruCore,
    gates: &GruGates,
    x: &[f64],
    h_prev: &[f64],
    dh: &[f64],
) -> Result<Vec<f64>> {
    let hd = h_prev.len();
    let dz_h: Vec<f64> = (0..hd)
        .map(|k| dh[k] * gates.u[k] * (1.0 - gates.hh[k] * gates.hh[k]))
        .collect();
    // the candidate's recurrent map saw r ⊙ h_prev, so the pullback lands there
    let mut drh = vec![0.0; hd];
    gate_backward(&core.h, &mut g.h, &dz_h, x, &gates.rh, &mut drh)?;
    let dz_r: Vec<f64> = (0..hd)
        .map(|k| drh[k] * h_prev[k] * gates.r[k] * (1.0 - gates.r[k]))
        .collect();
    let dz_u: Vec<f64> = (0..hd)
        .map(|k| dh[k] * (gates.hh[k] - h_prev[k]) * gates.u[k] * (1.0 - gates.u[k]))
        .collect();
    let mut dh_prev: Vec<f64> = (0..hd)
        .map(|k| dh[k] * (1.0 - gates.u[k]) + drh[k] * gates.r[k])
        .collect();
    gate_backward(&core.r, &mut g.r, &dz_r, x, h_prev, &mut dh_prev)?;
    gate_backward(&core.u, &mut g.u, &dz_u, x, h_prev, &mut dh_prev)?;
    Ok(dh_prev)
}

/// The remainder stream has no recurrence, so only its final step, the one
/// the readout sees, receives a gradient.
fn feed_backward(g: &mut FeedBlock, h_new: &[f64], x: &[f64], dh: &[f64]) -> Result<()> {
    let dz: Vec<f64> = dh
        .iter()
        .zip(h_new)
        .map(|(d, h)| d * (1.0 - h * h))
        .collect();
    g.w_x.add_outer(&dz, x)?;
    axpy(&mut g.b, 1.0, &dz)
}

#[allow(clippy::too_many_arguments)]
fn cru_backward_step(
    core: &CruCore,
    g: &mut CruCore,
    lambda: f64,
    gates: &CruGates,
    x_s: &[f64],
    x_t: &[f64],
    h_s_prev: &[f64],
    h_t_prev: &[f64],
    dh_s: &[f64],
    dh_t: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let hd = h_s_prev.len();
    let mut dh_s_prev = vec![0.0; hd];
    let mut dh_t_prev = vec![0.0; hd];

    // candidate blocks: h_s' = λ g_ss + (1-λ) g_st, h_t' = λ g_tt + (1-λ) g_ts
    let dz_ss: Vec<f64> = (0..hd)
        .map(|k| lambda * dh_s[k] * (1.0 - gates.g_ss[k] * gates.g_ss[k]))
        .collect();
    let dz_st: Vec<f64> = (0..hd)
        .map(|k| (1.0 - lambda) * dh_s[k] * (1.0 - gates.g_st[k] * gates.g_st[k]))
        .collect();
    let dz_tt: Vec<f64> = (0..hd)
        .map(|k| lambda * dh_t[k] * (1.0 - gates.g_tt[k] * gates.g_tt[k]))
        .collect();
    let dz_ts: Vec<f64> = (0..hd)
        .map(|k| (1.0 - lambda) * dh_t[k] * (1.0 - gates.g_ts[k] * gates.g_ts[k]))
        .collect();

    let mut din_ss = vec![0.0; hd];
    gate_backward(&core.ss, &mut g.ss, &dz_ss, x_s, &gates.in_ss, &mut din_ss)?;
    let mut din_st = vec![0.0; hd];
    gate_backward(&core.st, &mut g.st, &dz_st, x_s, &gates.in_st, &mut din_st)?;
    let mut din_tt = vec![0.0; hd];
    gate_backward(&core.tt, &mut g.tt, &dz_tt, x_t, &gates.in_tt, &mut din_tt)?;
    let mut din_ts = vec![0.0; hd];
    gate_backward(&core.ts, &mut g.ts, &dz_ts, x_t, &gates.in_ts, &mut din_ts)?;

    // the gated vectors: in_ss = â_s ⊙ h_s, in_st = ĉ_s ⊙ h_t,
    //                    in_tt = â_t ⊙ h_t, in_ts = ĉ_t ⊙ h_s
    let mut da_s = vec![0.0; hd];
    let mut dc_s = vec![0.0; hd];
    let mut da_t = vec![0.0; hd];
    let mut dc_t = vec![0.0; hd];
    for k in 0..hd {
        da_s[k] = din_ss[k] * h_s_prev[k];
        dh_s_prev[k] += din_ss[k] * gates.a_s[k];
        dc_s[k] = din_st[k] * h_t_prev[k];
        dh_t_prev[k] += din_st[k] * gates.c_s[k];
        da_t[k] = din_tt[k] * h_t_prev[k];
        dh_t_prev[k] += din_tt[k] * gates.a_t[k];
        dc_t[k] = din_ts[k] * h_s_prev[k];
        dh_s_prev[k] += din_ts[k] * gates.c_t[k];
    }

    // gate blocks: â_s(x_s, h_s), â_t(x_t, h_t), ĉ_s(x_s, h_t), ĉ_t(x_t, h_s)
    let dz_a_s: Vec<f64> = (0..hd)
        .map(|k| da_s[k] * gates.a_s[k] * (1.0 - gates.a_s[k]))
        .collect();
    gate_backward(&core.a_s, &mut g.a_s, &dz_a_s, x_s, h_s_prev, &mut dh_s_prev)?;
    let dz_a_t: Vec<f64> = (0..hd)
        .map(|k| da_t[k] * gates.a_t[k] * (1.0 - gates.a_t[k]))
        .collect();
    gate_backward(&core.a_t, &mut g.a_t, &dz_a_t, x_t, h_t_prev, &mut dh_t_prev)?;
    let dz_c_s: Vec<f64> = (0..hd)
        .map(|k| dc_s[k] * gates.c_s[k] * (1.0 - gates.c_s[k]))
        .collect();
    gate_backward(&core.c_s, &mut g.c_s, &dz_c_s, x_s, h_t_prev, &mut dh_t_prev)?;
    let dz_c_t: Vec<f64> = (0..hd)
        .map(|k| dc_t[k] * gates.c_t[k] * (1.0 - gates.c_t[k]))
        .collect();
    gate_backward(&core.c_t, &mut g.c_t, &dz_c_t, x_t, h_s_prev, &mut dh_s_prev)?;

    Ok((dh_s_prev, dh_t_prev))
}

fn plain_readout_backward(
    r: &Readout,
    g: &mut Readout,
    h: &[f64],
    dy: &[f64],
) -> Result<Vec<f64>> {
    g.w.add_outer(dy, h)?;
    axpy(&mut g.b, 1.0, dy)?;
    r.w.matvec_t(dy)
}

#[allow(clippy::type_complexity)]
fn split_readout_backward(
    r: &SplitReadout,
    g: &mut SplitReadout,
    h_s: &[f64],
    h_t: &[f64],
    h_r: &[f64],
    dy: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    g.w_s.add_outer(dy, h_s)?;
    g.w_t.add_outer(dy, h_t)?;
    g.w_r.add_outer(dy, h_r)?;
    axpy(&mut g.b, 1.0, dy)?;
    Ok((
        r.w_s.matvec_t(dy)?,
        r.w_t.matvec_t(dy)?,
        r.w_r.matvec_t(dy)?,
    ))
}

/// Accumulate d(loss_scale * MSE)/d(params) into `grads`, which must have the
/// same structure as `p.weights`. Scaling here (rather than on the result)
/// keeps batch averaging allocation-free.
pub fn backward_into(
    p: &CellParams,
    sample: &Sample,
    tape: &SequenceTape,
    loss_scale: f64,
    grads: &mut CellWeights,
) -> Result<()> {
    let t_len = sample.seq_len();
    if tape.states.len() != t_len + 1 || tape.traces.len() != t_len {
        return Err(Error::shape(
            "backward",
            format!("tape of {} states and {t_len} traces", t_len + 1),
            format!("{} states and {} traces", tape.states.len(), tape.traces.len()),
        ));
    }
    if sample.target.len() != p.output_dim || tape.prediction.len() != p.output_dim {
        return Err(Error::shape(
            "backward",
            format!("target and prediction of length {}", p.output_dim),
            format!(
                "lengths {} and {}",
                sample.target.len(),
                tape.prediction.len()
            ),
        ));
    }

    // d(MSE)/d(prediction)
    let o = p.output_dim as f64;
    let dy: Vec<f64> = tape
        .prediction
        .iter()
        .zip(&sample.target)
        .map(|(a, b)| loss_scale * 2.0 * (a - b) / o)
        .collect();

    match (&p.weights, grads) {
        (
            CellWeights::Rnn { core, readout },
            CellWeights::Rnn {
                core: g_core,
                readout: g_read,
            },
        ) => {
            let HiddenState::Plain { h: h_final } = &tape.states[t_len] else {
                return Err(bad_tape());
            };
            let mut dh = plain_readout_backward(readout, g_read, h_final, &dy)?;
            for t in (0..t_len).rev() {
                let HiddenState::Plain { h: h_new } = &tape.states[t + 1] else {
                    return Err(bad_tape());
                };
                let HiddenState::Plain { h: h_prev } = &tape.states[t] else {
                    return Err(bad_tape());
                };
                dh = rnn_backward_step(core, g_core, h_new, &sample.inputs[t], h_prev, &dh)?;
            }
            Ok(())
        }
        (
            CellWeights::Lstm { core, readout },
            CellWeights::Lstm {
                core: g_core,
                readout: g_read,
            },
        ) => {
            let HiddenState::Gated { h: h_final, .. } = &tape.states[t_len] else {
                return Err(bad_tape());
            };
            let mut dh = plain_readout_backward(readout, g_read, h_final, &dy)?;
            let mut dc = vec![0.0; p.hidden_dim];
            for t in (0..t_len).rev() {
                let HiddenState::Gated {
                    h: h_prev,
                    c: c_prev,
                } = &tape.states[t]
                else {
                    return Err(bad_tape());
                };
                let StepTrace::Lstm(gates) = &tape.traces[t] else {
                    return Err(bad_tape());
                };
                dh = lstm_backward_step(
                    core,
                    g_core,
                    gates,
                    &sample.inputs[t],
                    h_prev,
                    c_prev,
                    &dh,
                    &mut dc,
                )?;
            }
            Ok(())
        }
        (
            CellWeights::Gru { core, readout },
            CellWeights::Gru {
                core: g_core,
                readout: g_read,
            },
        ) => {
            let HiddenState::Plain { h: h_final } = &tape.states[t_len] else {
                return Err(bad_tape());
            };
            let mut dh = plain_readout_backward(readout, g_read, h_final, &dy)?;
            for t in (0..t_len).rev() {
                let HiddenState::Plain { h: h_prev } = &tape.states[t] else {
                    return Err(bad_tape());
                };
                let StepTrace::Gru(gates) = &tape.traces[t] else {
                    return Err(bad_tape());
                };
                dh = gru_backward_step(core, g_core, gates, &sample.inputs[t], h_prev, &dh)?;
            }
            Ok(())
        }
        (
            CellWeights::RnnStlc {
                s: s_core,
                t: t_core,
                r: _,
                readout,
            },
            CellWeights::RnnStlc {
                s: g_s,
                t: g_t,
                r: g_r,
                readout: g_read,
            },
        ) => {
            let dec = decomposed_steps(sample)?;
            let HiddenState::Components { h_s, h_t, h_r } = &tape.states[t_len] else {
                return Err(bad_tape());
            };
            let (mut dh_s, mut dh_t, dh_r) =
                split_readout_backward(readout, g_read, h_s, h_t, h_r, &dy)?;
            for t in (0..t_len).rev() {
                let HiddenState::Components {
                    h_s: hs_new,
                    h_t: ht_new,
                    h_r: hr_new,
                } = &tape.states[t + 1]
                else {
                    return Err(bad_tape());
                };
                let HiddenState::Components {
                    h_s: hs_prev,
                    h_t: ht_prev,
                    ..
                } = &tape.states[t]
                else {
                    return Err(bad_tape());
                };
                let d = &dec[t];
                if t + 1 == t_len {
                    feed_backward(g_r, hr_new, &d.remainder, &dh_r)?;
                }
                dh_s = rnn_backward_step(s_core, g_s, hs_new, &d.seasonal, hs_prev, &dh_s)?;
                dh_t = rnn_backward_step(t_core, g_t, ht_new, &d.trend, ht_prev, &dh_t)?;
            }
            Ok(())
        }
        (
            CellWeights::LstmStlc {
                s: s_core,
                t: t_core,
                r: _,
                readout,
            },
            CellWeights::LstmStlc {
                s: g_s,
                t: g_t,
                r: g_r,
                readout: g_read,
            },
        ) => {
            let dec = decomposed_steps(sample)?;
            let HiddenState::GatedComponents { h_s, h_t, h_r, .. } = &tape.states[t_len] else {
                return Err(bad_tape());
            };
            let (mut dh_s, mut dh_t, dh_r) =
                split_readout_backward(readout, g_read, h_s, h_t, h_r, &dy)?;
            let mut dc_s = vec![0.0; p.hidden_dim];
            let mut dc_t = vec![0.0; p.hidden_dim];
            for t in (0..t_len).rev() {
                let HiddenState::GatedComponents { h_r: hr_new, .. } = &tape.states[t + 1] else {
                    return Err(bad_tape());
                };
                let HiddenState::GatedComponents {
                    h_s: hs_prev,
                    h_t: ht_prev,
                    c_s: cs_prev,
                    c_t: ct_prev,
                    ..
                } = &tape.states[t]
                else {
                    return Err(bad_tape());
                };
                let StepTrace::LstmStlc {
                    s: gates_s,
                    t: gates_t,
                } = &tape.traces[t]
                else {
                    return Err(bad_tape());
                };
                let d = &dec[t];
                if t + 1 == t_len {
                    feed_backward(g_r, hr_new, &d.remainder, &dh_r)?;
                }
                dh_s = lstm_backward_step(
                    s_core, g_s, gates_s, &d.seasonal, hs_prev, cs_prev, &dh_s, &mut dc_s,
                )?;
                dh_t = lstm_backward_step(
                    t_core, g_t, gates_t, &d.trend, ht_prev, ct_prev, &dh_t, &mut dc_t,
                )?;
            }
            Ok(())
        }
        (
            CellWeights::GruStlc {
                s: s_core,
                t: t_core,
                r: _,
                readout,
            },
            CellWeights::GruStlc {
                s: g_s,
                t: g_t,
                r: g_r,
                readout: g_read,
            },
        ) => {
            let dec = decomposed_steps(sample)?;
            let HiddenState::Components { h_s, h_t, h_r } = &tape.states[t_len] else {
                return Err(bad_tape());
            };
            let (mut dh_s, mut dh_t, dh_r) =
                split_readout_backward(readout, g_read, h_s, h_t, h_r, &dy)?;
            for t in (0..t_len).rev() {
                let HiddenState::Components { h_r: hr_new, .. } = &tape.states[t + 1] else {
                    return Err(bad_tape());
                };
                let HiddenState::Components {
                    h_s: hs_prev,
                    h_t: ht_prev,
                    ..
                } = &tape.states[t]
                else {
                    return Err(bad_tape());
                };
                let StepTrace::GruStlc {
                    s: gates_s,
                    t: gates_t,
                } = &tape.traces[t]
                else {
                    return Err(bad_tape());
                };
                let d = &dec[t];
                if t + 1 == t_len {
                    feed_backward(g_r, hr_new, &d.remainder, &dh_r)?;
                }
                dh_s = gru_backward_step(s_core, g_s, gates_s, &d.seasonal, hs_prev, &dh_s)?;
                dh_t = gru_backward_step(t_core, g_t, gates_t, &d.trend, ht_prev, &dh_t)?;
            }
            Ok(())
        }
        (
            CellWeights::Cru {
                core,
                r: _,
                readout,
            },
            CellWeights::Cru {
                core: g_core,
                r: g_r,
                readout: g_read,
            },
        ) => {
            let dec = decomposed_steps(sample)?;
            let HiddenState::Components { h_s, h_t, h_r } = &tape.states[t_len] else {
                return Err(bad_tape());
            };
            let (mut dh_s, mut dh_t, dh_r) =
                split_readout_backward(readout, g_read, h_s, h_t, h_r, &dy)?;
            for t in (0..t_len).rev() {
                let HiddenState::Components { h_r: hr_new, .. } = &tape.states[t + 1] else {
                    return Err(bad_tape());
                };
                let HiddenState::Components {
                    h_s: hs_prev,
                    h_t: ht_prev,
                    ..
                } = &tape.states[t]
                else {
                    return Err(bad_tape());
                };
                let StepTrace::Cru(gates) = &tape.traces[t] else {
                    return Err(bad_tape());
                };
                let d = &dec[t];
                if t + 1 == t_len {
                    feed_backward(g_r, hr_new, &d.remainder, &dh_r)?;
                }
                let (ns, nt) = cru_backward_step(
                    core, g_core, p.lambda, gates, &d.seasonal, &d.trend, hs_prev, ht_prev,
                    &dh_s, &dh_t,
                )?;
                dh_s = ns;
                dh_t = nt;
            }
            Ok(())
        }
        _ => Err(Error::InvalidParameter(
            "gradient structure does not match the parameters".into(),
        )),
    }
}

/// Gradient of the per-sample MSE with respect to every parameter.
pub fn backward(p: &CellParams, sample: &Sample, tape: &SequenceTape) -> Result<CellWeights> {
    backward_scaled(p, sample, tape, 1.0)
}

/// Gradient of `loss_scale * MSE`; scaling the loss must scale every
/// gradient entry by exactly the same factor.
pub fn backward_scaled(
    p: &CellParams,
    sample: &Sample,
    tape: &SequenceTape,
    loss_scale: f64,
) -> Result<CellWeights> {
    let mut grads = p.weights.zeros_like();
    backward_into(p, sample, tape, loss_scale, &mut grads)?;
    Ok(grads)
}

fn decomposed_steps(sample: &Sample) -> Result<&[DecomposedInput]> {
    sample.decomposed.as_deref().ok_or_else(|| {
        Error::InvalidParameter(
            "this cell kind needs decomposed windows; decompose the dataset first".into(),
        )
    })
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Maximum allowed |analytic - numeric| / max(1, |analytic|, |numeric|).
    pub tolerance: f64,
    /// Check at most this many parameters, chosen by seeded draw; `None`
    /// sweeps every parameter.
    pub max_checked: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            max_checked: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_entry: Option<String>,
}

fn sample_loss(p: &CellParams, sample: &Sample) -> Result<f64> {
    let tape = forward_sequence(p, sample)?;
    mse_loss(&tape.prediction, &sample.target)
}

/// Compare the analytic gradient against central finite differences and fail
/// loudly, naming the offending parameter entry, if any disagree.
pub fn grad_check(
    p: &CellParams,
    sample: &Sample,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let tape = forward_sequence(p, sample)?;
    let grads = backward(p, sample, &tape)?;
    grad_check_against(p, sample, &grads, cfg)
}

/// Same check against a caller-supplied gradient, used to prove the checker
/// catches corrupted gradients too.
pub fn grad_check_against(
    p: &CellParams,
    sample: &Sample,
    grads: &CellWeights,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let flat_g = grads.flatten();
    let n = p.weights.param_count();
    if flat_g.len() != n {
        return Err(Error::shape(
            "grad_check",
            format!("{n} gradient entries"),
            format!("{}", flat_g.len()),
        ));
    }
    if !(cfg.step > 0.0 && cfg.tolerance > 0.0) {
        return Err(Error::InvalidParameter(
            "gradient check step and tolerance must be positive".into(),
        ));
    }

    let indices: Vec<usize> = match cfg.max_checked {
        Some(k) if k < n => {
            let mut idx: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            for i in 0..k {
                let j = rng.gen_range(i..n);
                idx.swap(i, j);
            }
            idx.truncate(k);
            idx
        }
        _ => (0..n).collect(),
    };

    let base = p.weights.flatten();
    let mut work = p.clone();
    let mut flat = base.clone();
    let mut max_rel = 0.0f64;
    let mut worst = None;
    for &i in &indices {
        flat[i] = base[i] + cfg.step;
        work.weights.assign_from_flat(&flat)?;
        let plus = sample_loss(&work, sample)?;
        flat[i] = base[i] - cfg.step;
        work.weights.assign_from_flat(&flat)?;
        let minus = sample_loss(&work, sample)?;
        flat[i] = base[i];

        let numeric = (plus - minus) / (2.0 * cfg.step);
        let analytic = flat_g[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0);
        if !rel.is_finite() || rel > cfg.tolerance {
            return Err(Error::InvalidParameter(format!(
                "gradient check failed at {}: analytic {analytic:e}, numeric {numeric:e}, relative error {rel:e}",
                p.weights.entry_name(i)
            )));
        }
        if rel > max_rel {
            max_rel = rel;
            worst = Some(p.weights.entry_name(i));
        }
    }
    Ok(GradCheckReport {
        checked: indices.len(),
        max_rel_error: max_rel,
        worst_entry: worst,
    })
}

/// Seeded uniform init: weights drawn from [-1/sqrt(H), 1/sqrt(H)) in
/// canonical visit order, biases left at zero (and consuming no draws).
pub fn init_weights(
    kind: CellKind,
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    lambda: f64,
    seed: u64,
) -> Result<CellParams> {
    let mut p = CellParams::new(kind, input_dim, hidden_dim, output_dim, lambda)?;
    let bound = 1.0 / (hidden_dim as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    p.weights.visit_mut(&mut |name, s| {
        if !name.starts_with('b') {
            for v in s.iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        }
    });
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    #[serde(default)]
    pub kind: OptimizerKind,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in [0, 1), got {b}"
                )));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// First/second-moment slots for Adam; SGD leaves them untouched.
#[derive(Debug, Clone)]
pub struct OptimState {
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimState {
    pub fn new(param_count: usize) -> Self {
        OptimState {
            t: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    /// One update step in place: bias-corrected Adam or plain SGD.
    pub fn apply(
        &mut self,
        cfg: &OptimizerConfig,
        params: &mut [f64],
        grads: &[f64],
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "optimizer step",
                format!("{} parameters", self.m.len()),
                format!("{} params / {} grads", params.len(), grads.len()),
            ));
        }
        match cfg.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= cfg.learning_rate * g;
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
                let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
                for k in 0..params.len() {
                    let g = grads[k];
                    self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * g;
                    self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * g * g;
                    let m_hat = self.m[k] / bc1;
                    let v_hat = self.v[k] / bc2;
                    params[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// `None` runs full-batch gradient descent; `Some(b)` shuffles each epoch
    /// with the seeded RNG and updates once per batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default = "default_clip")]
    pub clip_norm: Option<f64>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub shuffle_seed: u64,
}

fn default_epochs() -> usize {
    200
}
fn default_clip() -> Option<f64> {
    Some(5.0)
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: default_epochs(),
            batch_size: None,
            clip_norm: default_clip(),
            optimizer: OptimizerConfig::default(),
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == Some(0) {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "clip_norm must be positive, got {c}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: CellParams,
    /// Mean training loss per epoch, measured before that epoch's update(s).
    pub loss_curve: Vec<f64>,
}

fn apply_update(
    p: &mut CellParams,
    opt: &mut OptimState,
    cfg: &TrainConfig,
    grads: &CellWeights,
) -> Result<()> {
    let mut g = grads.flatten();
    if let Some(c) = cfg.clip_norm {
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > c {
            let s = c / norm;
            for v in &mut g {
                *v *= s;
            }
        }
    }
    let mut flat = p.weights.flatten();
    opt.apply(&cfg.optimizer, &mut flat, &g)?;
    p.weights.assign_from_flat(&flat)
}

/// Run the epoch loop and return the final parameters with the loss curve.
/// A non-finite epoch loss aborts with [`Error::NanLoss`] naming the epoch.
pub fn train(init: CellParams, samples: &[Sample], cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no training samples".into()));
    }
    let mut p = init;
    let mut opt = OptimState::new(p.weights.param_count());
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);

    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        match cfg.batch_size {
            None => {
                let mut grads = p.weights.zeros_like();
                let scale = 1.0 / samples.len() as f64;
                for s in samples {
                    let tape = forward_sequence(&p, s)?;
                    loss_sum += mse_loss(&tape.prediction, &s.target)?;
                    backward_into(&p, s, &tape, scale, &mut grads)?;
                }
                let loss = loss_sum / samples.len() as f64;
                curve.push(loss);
                if !loss.is_finite() {
                    return Err(Error::NanLoss { epoch });
                }
                apply_update(&mut p, &mut opt, cfg, &grads)?;
            }
            Some(b) => {
                order.shuffle(&mut rng);
                for chunk in order.chunks(b) {
                    let mut grads = p.weights.zeros_like();
                    let scale = 1.0 / chunk.len() as f64;
                    for &i in chunk {
                        let tape = forward_sequence(&p, &samples[i])?;
                        loss_sum += mse_loss(&tape.prediction, &samples[i].target)?;
                        backward_into(&p, &samples[i], &tape, scale, &mut grads)?;
                    }
                    apply_update(&mut p, &mut opt, cfg, &grads)?;
                }
                let loss = loss_sum / samples.len() as f64;
                curve.push(loss);
                if !loss.is_finite() {
                    return Err(Error::NanLoss { epoch });
                }
            }
        }
    }
    Ok(TrainOutput {
        params: p,
        loss_curve: curve,
    })
}
