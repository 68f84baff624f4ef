//! Recurrent cells and their parameters.
//!
//! Seven cell kinds share one interface: three plain baselines (RNN, LSTM,
//! GRU) that consume a raw input vector, three decomposition-aware variants
//! (`*_stlc`) that run separate recurrent streams over the seasonal and trend
//! channels plus a feedforward map over the remainder channel, and the
//! correlation cell (`cru`) whose seasonal and trend streams exchange
//! information through learned auto- and cross-correlation gates.
//!
//! Parameter tensors live in typed structs, but every tensor also has a
//! canonical name and position defined by [`CellWeights::visit`]. That single
//! ordering drives initialization, flattening for checkpoints, optimizer
//! state, and gradient-check reporting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sigmoid, tanh_vec, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Rnn,
    Lstm,
    Gru,
    RnnStlc,
    LstmStlc,
    GruStlc,
    Cru,
}

impl CellKind {
    pub const ALL: [CellKind; 7] = [
        CellKind::Rnn,
        CellKind::Lstm,
        CellKind::Gru,
        CellKind::RnnStlc,
        CellKind::LstmStlc,
        CellKind::GruStlc,
        CellKind::Cru,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Rnn => "rnn",
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
            CellKind::RnnStlc => "rnn_stlc",
            CellKind::LstmStlc => "lstm_stlc",
            CellKind::GruStlc => "gru_stlc",
            CellKind::Cru => "cru",
        }
    }

    /// Whether the cell consumes per-channel seasonal/trend/remainder inputs.
    pub fn uses_decomposition(self) -> bool {
        matches!(
            self,
            CellKind::RnnStlc | CellKind::LstmStlc | CellKind::GruStlc | CellKind::Cru
        )
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CellKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown cell kind {s:?}; expected one of rnn, lstm, gru, rnn_stlc, lstm_stlc, gru_stlc, cru"
                ))
            })
    }
}

/// Input map + recurrent map + bias for one gate or candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct GateBlock {
    pub w_x: Matrix,
    pub w_h: Matrix,
    pub b: Vec<f64>,
}

impl GateBlock {
    fn zeros(hidden: usize, input: usize) -> Self {
        GateBlock {
            w_x: Matrix::zeros(hidden, input),
            w_h: Matrix::zeros(hidden, hidden),
            b: vec![0.0; hidden],
        }
    }

    /// z = w_x x + w_h h + b
    fn affine(&self, x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.b.clone();
        self.w_x.matvec_add(x, &mut z)?;
        self.w_h.matvec_add(h, &mut z)?;
        Ok(z)
    }

    fn visit(&self, names: [&'static str; 3], f: &mut dyn FnMut(&'static str, &[f64])) {
        f(names[0], self.w_x.data());
        f(names[1], self.w_h.data());
        f(names[2], &self.b);
    }

    fn visit_mut(&mut self, names: [&'static str; 3], f: &mut dyn FnMut(&'static str, &mut [f64])) {
        f(names[0], self.w_x.data_mut());
        f(names[1], self.w_h.data_mut());
        f(names[2], &mut self.b);
    }
}

/// Input map + bias only; used for the remainder channel, which carries no
/// recurrent state worth modelling.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedBlock {
    pub w_x: Matrix,
    pub b: Vec<f64>,
}

impl FeedBlock {
    fn zeros(hidden: usize, input: usize) -> Self {
        FeedBlock {
            w_x: Matrix::zeros(hidden, input),
            b: vec![0.0; hidden],
        }
    }

    fn affine(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.b.clone();
        self.w_x.matvec_add(x, &mut z)?;
        Ok(z)
    }

    fn visit(&self, names: [&'static str; 2], f: &mut dyn FnMut(&'static str, &[f64])) {
        f(names[0], self.w_x.data());
        f(names[1], &self.b);
    }

    fn visit_mut(&mut self, names: [&'static str; 2], f: &mut dyn FnMut(&'static str, &mut [f64])) {
        f(names[0], self.w_x.data_mut());
        f(names[1], &mut self.b);
    }
}

/// Linear readout from a single hidden vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Readout {
    fn zeros(output: usize, hidden: usize) -> Self {
        Readout {
            w: Matrix::zeros(output, hidden),
            b: vec![0.0; output],
        }
    }

    pub fn apply(&self, h: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.b.clone();
        self.w.matvec_add(h, &mut y)?;
        Ok(y)
    }

    fn visit(&self, names: [&'static str; 2], f: &mut dyn FnMut(&'static str, &[f64])) {
        f(names[0], self.w.data());
        f(names[1], &self.b);
    }

    fn visit_mut(&mut self, names: [&'static str; 2], f: &mut dyn FnMut(&'static str, &mut [f64])) {
        f(names[0], self.w.data_mut());
        f(names[1], &mut self.b);
    }
}

/// Linear readout summing contributions from the three component streams.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitReadout {
    pub w_s: Matrix,
    pub w_t: Matrix,
    pub w_r: Matrix,
    pub b: Vec<f64>,
}

impl SplitReadout {
    fn zeros(output: usize, hidden: usize) -> Self {
        SplitReadout {
            w_s: Matrix::zeros(output, hidden),
            w_t: Matrix::zeros(output, hidden),
            w_r: Matrix::zeros(output, hidden),
            b: vec![0.0; output],
        }
    }

    pub fn apply(&self, h_s: &[f64], h_t: &[f64], h_r: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.b.clone();
        self.w_s.matvec_add(h_s, &mut y)?;
        self.w_t.matvec_add(h_t, &mut y)?;
        self.w_r.matvec_add(h_r, &mut y)?;
        Ok(y)
    }

    fn visit(&self, names: [&'static str; 4], f: &mut dyn FnMut(&'static str, &[f64])) {
        f(names[0], self.w_s.data());
        f(names[1], self.w_t.data());
        f(names[2], self.w_r.data());
        f(names[3], &self.b);
    }

    fn visit_mut(&mut self, names: [&'static str; 4], f: &mut dyn FnMut(&'static str, &mut [f64])) {
        f(names[0], self.w_s.data_mut());
        f(names[1], self.w_t.data_mut());
        f(names[2], self.w_r.data_mut());
        f(names[3], &mut self.b);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnCore {
    pub h: GateBlock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCore {
    pub i: GateBlock,
    pub f: GateBlock,
    pub o: GateBlock,
    pub c: GateBlock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruCore {
    pub r: GateBlock,
    pub u: GateBlock,
    pub h: GateBlock,
}

/// The correlation cell's blocks. `a_*` are autocorrelation gates driven by a
/// stream's own hidden state; `c_*` are cross-correlation gates driven by the
/// opposite stream's hidden state. The four candidates are named
/// target-source: `st` feeds the seasonal state from the trend stream.
#[derive(Debug, Clone, PartialEq)]
pub struct CruCore {
    pub a_s: GateBlock,
    pub a_t: GateBlock,
    pub c_s: GateBlock,
    pub c_t: GateBlock,
    pub ss: GateBlock,
    pub st: GateBlock,
    pub tt: GateBlock,
    pub ts: GateBlock,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellWeights {
    Rnn {
        core: RnnCore,
        readout: Readout,
    },
    Lstm {
        core: LstmCore,
        readout: Readout,
    },
    Gru {
        core: GruCore,
        readout: Readout,
    },
    RnnStlc {
        s: RnnCore,
        t: RnnCore,
        r: FeedBlock,
        readout: SplitReadout,
    },
    LstmStlc {
        s: LstmCore,
        t: LstmCore,
        r: FeedBlock,
        readout: SplitReadout,
    },
    GruStlc {
        s: GruCore,
        t: GruCore,
        r: FeedBlock,
        readout: SplitReadout,
    },
    Cru {
        core: CruCore,
        r: FeedBlock,
        readout: SplitReadout,
    },
}

impl CellWeights {
    pub fn zeros(kind: CellKind, input: usize, hidden: usize, output: usize) -> Self {
        let gate = || GateBlock::zeros(hidden, input);
        let lstm = || LstmCore {
            i: gate(),
            f: gate(),
            o: gate(),
            c: gate(),
        };
        let gru = || GruCore {
            r: gate(),
            u: gate(),
            h: gate(),
        };
        match kind {
            CellKind::Rnn => CellWeights::Rnn {
                core: RnnCore { h: gate() },
                readout: Readout::zeros(output, hidden),
            },
            CellKind::Lstm => CellWeights::Lstm {
                core: lstm(),
                readout: Readout::zeros(output, hidden),
            },
            CellKind::Gru => CellWeights::Gru {
                core: gru(),
                readout: Readout::zeros(output, hidden),
            },
            CellKind::RnnStlc => CellWeights::RnnStlc {
                s: RnnCore { h: gate() },
                t: RnnCore { h: gate() },
                r: FeedBlock::zeros(hidden, input),
                readout: SplitReadout::zeros(output, hidden),
            },
            CellKind::LstmStlc => CellWeights::LstmStlc {
                s: lstm(),
                t: lstm(),
                r: FeedBlock::zeros(hidden, input),
                readout: SplitReadout::zeros(output, hidden),
            },
            CellKind::GruStlc => CellWeights::GruStlc {
                s: gru(),
                t: gru(),
                r: FeedBlock::zeros(hidden, input),
                readout: SplitReadout::zeros(output, hidden),
            },
            CellKind::Cru => CellWeights::Cru {
                core: CruCore {
                    a_s: gate(),
                    a_t: gate(),
                    c_s: gate(),
                    c_t: gate(),
                    ss: gate(),
                    st: gate(),
                    tt: gate(),
                    ts: gate(),
                },
                r: FeedBlock::zeros(hidden, input),
                readout: SplitReadout::zeros(output, hidden),
            },
        }
    }

    pub fn kind(&self) -> CellKind {
        match self {
            CellWeights::Rnn { .. } => CellKind::Rnn,
            CellWeights::Lstm { .. } => CellKind::Lstm,
            CellWeights::Gru { .. } => CellKind::Gru,
            CellWeights::RnnStlc { .. } => CellKind::RnnStlc,
            CellWeights::LstmStlc { .. } => CellKind::LstmStlc,
            CellWeights::GruStlc { .. } => CellKind::GruStlc,
            CellWeights::Cru { .. } => CellKind::Cru,
        }
    }

    /// Walk every parameter tensor in canonical order. This order is the
    /// contract for checkpoints, optimizer slots, and gradient reports.
    pub fn visit(&self, f: &mut dyn FnMut(&'static str, &[f64])) {
        match self {
            CellWeights::Rnn { core, readout } => {
                core.h.visit(["w_xh", "w_hh", "b_h"], f);
                readout.visit(["w_hy", "b_y"], f);
            }
            CellWeights::Lstm { core, readout } => {
                core.i.visit(["w_xi", "w_hi", "b_i"], f);
                core.f.visit(["w_xf", "w_hf", "b_f"], f);
                core.o.visit(["w_xo", "w_ho", "b_o"], f);
                core.c.visit(["w_xc", "w_hc", "b_c"], f);
                readout.visit(["w_hy", "b_y"], f);
            }
            CellWeights::Gru { core, readout } => {
                core.r.visit(["w_xr", "w_hr", "b_r"], f);
                core.u.visit(["w_xu", "w_hu", "b_u"], f);
                core.h.visit(["w_xh", "w_hh", "b_h"], f);
                readout.visit(["w_hy", "b_y"], f);
            }
            CellWeights::RnnStlc { s, t, r, readout } => {
                s.h.visit(["w_xh_s", "w_hh_s", "b_h_s"], f);
                t.h.visit(["w_xh_t", "w_hh_t", "b_h_t"], f);
                r.visit(["w_xh_r", "b_h_r"], f);
                readout.visit(["w_hy_s", "w_hy_t", "w_hy_r", "b_y"], f);
            }
            CellWeights::LstmStlc { s, t, r, readout } => {
                s.i.visit(["w_xi_s", "w_hi_s", "b_i_s"], f);
                s.f.visit(["w_xf_s", "w_hf_s", "b_f_s"], f);
                s.o.visit(["w_xo_s", "w_ho_s", "b_o_s"], f);
                s.c.visit(["w_xc_s", "w_hc_s", "b_c_s"], f);
                t.i.visit(["w_xi_t", "w_hi_t", "b_i_t"], f);
                t.f.visit(["w_xf_t", "w_hf_t", "b_f_t"], f);
                t.o.visit(["w_xo_t", "w_ho_t", "b_o_t"], f);
                t.c.visit(["w_xc_t", "w_hc_t", "b_c_t"], f);
                r.visit(["w_xh_r", "b_h_r"], f);
                readout.visit(["w_hy_s", "w_hy_t", "w_hy_r", "b_y"], f);
            }
            CellWeights::GruStlc { s, t, r, readout } => {
                s.r.visit(["w_xr_s", "w_hr_s", "b_r_s"], f);
                s.u.visit(["w_xu_s", "w_hu_s", "b_u_s"], f);
                s.h.visit(["w_xh_s", "w_hh_s", "b_h_s"], f);
                t.r.visit(["w_xr_t", "w_hr_t", "b_r_t"], f);
                t.u.visit(["w_xu_t", "w_hu_t", "b_u_t"], f);
                t.h.visit(["w_xh_t", "w_hh_t", "b_h_t"], f);
                r.visit(["w_xh_r", "b_h_r"], f);
                readout.visit(["w_hy_s", "w_hy_t", "w_hy_r", "b_y"], f);
            }
            CellWeights::Cru { core, r, readout } => {
                core.a_s.visit(["w_xa_s", "w_ha_s", "b_a_s"], f);
                core.a_t.visit(["w_xa_t", "w_ha_t", "b_a_t"], f);
                core.c_s.visit(["w_xc_s", "w_hc_s", "b_c_s"], f);
                core.c_t.visit(["w_xc_t", "w_hc_t", "b_c_t"], f);
                core.ss.visit(["w_xh_ss", "w_hh_ss", "b_ss"], f);
                core.st.visit(["w_xh_st", "w_hh_st", "b_st"], f);
                core.tt.visit(["w_xh_tt", "w_hh_tt", "b_tt"], f);
                core.ts.visit(["w_xh_ts", "w_hh_ts", "b_ts"], f);
                r.visit(["w_xh_r", "b_h_r"], f);
                readout.visit(["w_hy_s", "w_hy_t", "w_hy_r", "b_y"], f);
            }
        }
    }

    /// Mutable twin of [`CellWeights::visit`], same order.
    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&'static str, &mut [f64])) {
        match self {
            CellWeights::Rnn { core, readout } => {
                core.h.visit_mut(["w_xh", "w_hh", "b_h"], f);
                readout.visit_mut(["w_hy", "b_y"], f);
            }
            CellWeights::Lstm { core, readout } => {
                core.i.visit_mut(["w_xi", "w_hi", "b_i"], f);
                core.f.visit_mut(["w_xf", "w_hf", "b_f"], f);
                core.o.visit_mut(["w_xo", "w_ho", "b_o"], f);
                core.c.visit_mut(["w_xc", "w_hc", "b_c"], f);
                readout.visit_mut(["w_hy", "b_y"], f);
            }
            CellWeights::Gru { core, readout } => {
                core.r.visit_mut(["w_xr", "w_hr", "b_r"], f);
                core.u.visit_mut(["w_xu", "w_hu", "b_u"], f);
                core.h.visit_mut(["w_xh", "w_hh", "b_h"], f);
                readout.visit_mut(["w_hy", "b_y"], f);
            }
            CellWeights::RnnStlc { s, t, r, readout } => {
                s.h.visit_mut(["w_xh_s", "w_hh_s", "b_h_s"], f);
                t.h.visit_mut(["w_xh_t", "w_hh_t", "b_h_t"], f);
                r.visit_mut(["w_xh_r", "b_h_r"], f);
                readout.visit_mut(["w_hy_s", "w_hy_t", "w_hy_r", "b_y"], f);
            }
            CellWeights::LstmStlc { s, t, r, readout } => {
                s.i.visit_mut(["w_xi_s", "w_hi_s", "b_i_s"], f);
                s.f.visit_mut(["w_xf_s", "w_hf_s", "b_f_s"], f);
                s.o.visit_mut(["w_xo_s", "w_ho_s", "b_o_s"], f);
                s.c.visit_mut(["w_xc_s", "w_hc_s", "b_c_s"], f);
                t.i.visit_mut(["w_xi_t", "w_hi_t", "b_i_t"], f);
                t.f.visit_mut(["w_xf_t", "w_hf_t", "b_f_t"], f);
                t.o.visit_mut(["w_xo_t", "w_ho_t", "b_o_t"], f);
                t.c.visit_mut(["w_xc_t", "w_hc_t", "b_c_t"], f);
                r.visit_mut(["w_xh_r", "b_h_r"], f);
                readout.visit_mut(["w_hy_s", "w_hy_t", "w_hy_r", "b_y"], f);
            }
            CellWeights::GruStlc { s, t, r, readout } => {
                s.r.visit_mut(["w_xr_s", "w_hr_s", "b_r_s"], f);
                s.u.visit_mut(["w_xu_s", "w_hu_s", "b_u_s"], f);
                s.h.visit_mut(["w_xh_s", "w_hh_s", "b_h_s"], f);
                t.r.visit_mut(["w_xr_t", "w_hr_t", "b_r_t"], f);
                t.u.visit_mut(["w_xu_t", "w_hu_t", "b_u_t"], f);
                t.h.visit_mut(["w_xh_t", "w_hh_t", "b_h_t"], f);
                r.visit_mut(["w_xh_r", "b_h_r"], f);
                readout.visit_mut(["w_hy_s", "w_hy_t", "w_hy_r", "b_y"], f);
            }
            CellWeights::Cru { core, r, readout } => {
                core.a_s.visit_mut(["w_xa_s", "w_ha_s", "b_a_s"], f);
                core.a_t.visit_mut(["w_xa_t", "w_ha_t", "b_a_t"], f);
                core.c_s.visit_mut(["w_xc_s", "w_hc_s", "b_c_s"], f);
                core.c_t.visit_mut(["w_xc_t", "w_hc_t", "b_c_t"], f);
                core.ss.visit_mut(["w_xh_ss", "w_hh_ss", "b_ss"], f);
                core.st.visit_mut(["w_xh_st", "w_hh_st", "b_st"], f);
                core.tt.visit_mut(["w_xh_tt", "w_hh_tt", "b_tt"], f);
                core.ts.visit_mut(["w_xh_ts", "w_hh_ts", "b_ts"], f);
                r.visit_mut(["w_xh_r", "b_h_r"], f);
                readout.visit_mut(["w_hy_s", "w_hy_t", "w_hy_r", "b_y"], f);
            }
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, s| n += s.len());
        n
    }

    /// All parameters concatenated in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        self.visit(&mut |_, s| flat.extend_from_slice(s));
        flat
    }

    /// Inverse of [`CellWeights::flatten`]; the length must match exactly.
    pub fn assign_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape(
                "assign_from_flat",
                format!("{} parameters", self.param_count()),
                format!("{} values", flat.len()),
            ));
        }
        let mut offset = 0;
        self.visit_mut(&mut |_, s| {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        });
        Ok(())
    }

    /// Human-readable name of one flat-index entry, e.g. `w_hh_ss[17]`.
    pub fn entry_name(&self, index: usize) -> String {
        let mut offset = 0;
        let mut found = None;
        self.visit(&mut |name, s| {
            if found.is_none() && index < offset + s.len() {
                found = Some(format!("{name}[{}]", index - offset));
            }
            offset += s.len();
        });
        found.unwrap_or_else(|| format!("<out of range {index}>"))
    }

    /// Same structure, every entry zero. Gradient accumulators start here.
    pub fn zeros_like(&self) -> CellWeights {
        let mut z = self.clone();
        z.visit_mut(&mut |_, s| s.fill(0.0));
        z
    }
}

/// A cell plus its dimensions. `lambda` is the fixed mixing weight between a
/// stream's own candidate and its cross-stream candidate; only the
/// correlation cell reads it.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    pub kind: CellKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub lambda: f64,
    pub weights: CellWeights,
}

impl CellParams {
    pub fn new(
        kind: CellKind,
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        lambda: f64,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidParameter(format!(
                "cell dimensions must be positive, got input {input_dim}, hidden {hidden_dim}, output {output_dim}"
            )));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidParameter(format!(
                "lambda must lie in [0, 1], got {lambda}"
            )));
        }
        Ok(CellParams {
            kind,
            input_dim,
            hidden_dim,
            output_dim,
            lambda,
            weights: CellWeights::zeros(kind, input_dim, hidden_dim, output_dim),
        })
    }

    fn check_state(&self, state: &HiddenState) -> Result<()> {
        let ok = match (self.kind, state) {
            (CellKind::Rnn, HiddenState::Plain { h }) => h.len() == self.hidden_dim,
            (CellKind::Lstm, HiddenState::Gated { h, c }) => {
                h.len() == self.hidden_dim && c.len() == self.hidden_dim
            }
            (CellKind::Gru, HiddenState::Plain { h }) => h.len() == self.hidden_dim,
            (
                CellKind::RnnStlc | CellKind::GruStlc | CellKind::Cru,
                HiddenState::Components { h_s, h_t, h_r },
            ) => [h_s, h_t, h_r].iter().all(|v| v.len() == self.hidden_dim),
            (
                CellKind::LstmStlc,
                HiddenState::GatedComponents {
                    h_s,
                    h_t,
                    h_r,
                    c_s,
                    c_t,
                },
            ) => [h_s, h_t, h_r, c_s, c_t]
                .iter()
                .all(|v| v.len() == self.hidden_dim),
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::shape(
                "step",
                format!(
                    "{} state for cell kind {} with hidden_dim {}",
                    HiddenState::variant_name_for(self.kind),
                    self.kind,
                    self.hidden_dim
                ),
                state.describe(),
            ))
        }
    }

    fn check_input(&self, input: &StepInput<'_>) -> Result<()> {
        match (self.kind.uses_decomposition(), input) {
            (false, StepInput::Raw(x)) => {
                if x.len() != self.input_dim {
                    return Err(Error::shape(
                        "step",
                        format!("input of length {}", self.input_dim),
                        format!("length {}", x.len()),
                    ));
                }
            }
            (true, StepInput::Decomposed(d)) => {
                for (name, v) in [
                    ("seasonal", &d.seasonal),
                    ("trend", &d.trend),
                    ("remainder", &d.remainder),
                ] {
                    if v.len() != self.input_dim {
                        return Err(Error::shape(
                            "step",
                            format!("{name} input of length {}", self.input_dim),
                            format!("length {}", v.len()),
                        ));
                    }
                }
            }
            (false, StepInput::Decomposed(_)) => {
                return Err(Error::InvalidParameter(format!(
                    "cell kind {} takes a raw input, not a decomposed one",
                    self.kind
                )));
            }
            (true, StepInput::Raw(_)) => {
                return Err(Error::InvalidParameter(format!(
                    "cell kind {} requires a decomposed input",
                    self.kind
                )));
            }
        }
        Ok(())
    }
}

/// One timestep of a decomposed input: per-channel seasonal, trend, and
/// remainder vectors, each of the cell's input dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedInput {
    pub seasonal: Vec<f64>,
    pub trend: Vec<f64>,
    pub remainder: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub enum StepInput<'a> {
    Raw(&'a [f64]),
    Decomposed(&'a DecomposedInput),
}

/// Recurrent state. The variant is determined by the cell kind.
#[derive(Debug, Clone, PartialEq)]
pub enum HiddenState {
    Plain {
        h: Vec<f64>,
    },
    Gated {
        h: Vec<f64>,
        c: Vec<f64>,
    },
    Components {
        h_s: Vec<f64>,
        h_t: Vec<f64>,
        h_r: Vec<f64>,
    },
    GatedComponents {
        h_s: Vec<f64>,
        h_t: Vec<f64>,
        h_r: Vec<f64>,
        c_s: Vec<f64>,
        c_t: Vec<f64>,
    },
}

impl HiddenState {
    /// All-zero state of the right variant for a given cell kind.
    pub fn initial(kind: CellKind, hidden_dim: usize) -> Self {
        let z = || vec![0.0; hidden_dim];
        match kind {
            CellKind::Rnn | CellKind::Gru => HiddenState::Plain { h: z() },
            CellKind::Lstm => HiddenState::Gated { h: z(), c: z() },
            CellKind::RnnStlc | CellKind::GruStlc | CellKind::Cru => HiddenState::Components {
                h_s: z(),
                h_t: z(),
                h_r: z(),
            },
            CellKind::LstmStlc => HiddenState::GatedComponents {
                h_s: z(),
                h_t: z(),
                h_r: z(),
                c_s: z(),
                c_t: z(),
            },
        }
    }

    fn variant_name_for(kind: CellKind) -> &'static str {
        match kind {
            CellKind::Rnn | CellKind::Gru => "Plain",
            CellKind::Lstm => "Gated",
            CellKind::RnnStlc | CellKind::GruStlc | CellKind::Cru => "Components",
            CellKind::LstmStlc => "GatedComponents",
        }
    }

    fn describe(&self) -> String {
        match self {
            HiddenState::Plain { h } => format!("Plain state of length {}", h.len()),
            HiddenState::Gated { h, .. } => format!("Gated state of length {}", h.len()),
            HiddenState::Components { h_s, .. } => {
                format!("Components state of length {}", h_s.len())
            }
            HiddenState::GatedComponents { h_s, .. } => {
                format!("GatedComponents state of length {}", h_s.len())
            }
        }
    }

    /// The hidden vector(s) the readout consumes.
    pub fn component_views(&self) -> Option<(&[f64], &[f64], &[f64])> {
        match self {
            HiddenState::Components { h_s, h_t, h_r }
            | HiddenState::GatedComponents { h_s, h_t, h_r, .. } => Some((h_s, h_t, h_r)),
            _ => None,
        }
    }

    pub fn main_view(&self) -> Option<&[f64]> {
        match self {
            HiddenState::Plain { h } | HiddenState::Gated { h, .. } => Some(h),
            _ => None,
        }
    }
}

/// Gate activations an LSTM backward pass needs beyond the states themselves.
#[derive(Debug, Clone)]
pub struct LstmGates {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GruGates {
    pub r: Vec<f64>,
    pub u: Vec<f64>,
    pub hh: Vec<f64>,
    /// r ⊙ h_prev, the vector the candidate's recurrent map actually saw.
    pub rh: Vec<f64>,
}

/// Correlation-cell activations: four gates, four tanh candidates, and the
/// four gated hidden vectors fed to the candidates' recurrent maps.
#[derive(Debug, Clone)]
pub struct CruGates {
    pub a_s: Vec<f64>,
    pub a_t: Vec<f64>,
    pub c_s: Vec<f64>,
    pub c_t: Vec<f64>,
    pub g_ss: Vec<f64>,
    pub g_st: Vec<f64>,
    pub g_tt: Vec<f64>,
    pub g_ts: Vec<f64>,
    pub in_ss: Vec<f64>,
    pub in_st: Vec<f64>,
    pub in_tt: Vec<f64>,
    pub in_ts: Vec<f64>,
}

/// Intermediates one step produces for backpropagation. States are not
/// duplicated here; the training loop already keeps the state sequence.
#[derive(Debug, Clone)]
pub enum StepTrace {
    Rnn,
    Lstm(LstmGates),
    Gru(GruGates),
    RnnStlc,
    LstmStlc { s: LstmGates, t: LstmGates },
    GruStlc { s: GruGates, t: GruGates },
    Cru(CruGates),
}

fn rnn_core_step(core: &RnnCore, x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    Ok(tanh_vec(&core.h.affine(x, h)?))
}

fn lstm_core_step(
    core: &LstmCore,
    x: &[f64],
    h: &[f64],
    c: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, LstmGates)> {
    let i = sigmoid(&core.i.affine(x, h)?);
    let f = sigmoid(&core.f.affine(x, h)?);
    let o = sigmoid(&core.o.affine(x, h)?);
    let g = tanh_vec(&core.c.affine(x, h)?);
    let c_new: Vec<f64> = (0..h.len()).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
    let tanh_c = tanh_vec(&c_new);
    let h_new: Vec<f64> = (0..h.len()).map(|k| o[k] * tanh_c[k]).collect();
    Ok((h_new, c_new, LstmGates { i, f, o, g, tanh_c }))
}

fn gru_core_step(core: &GruCore, x: &[f64], h: &[f64]) -> Result<(Vec<f64>, GruGates)> {
    let r = sigmoid(&core.r.affine(x, h)?);
    let u = sigmoid(&core.u.affine(x, h)?);
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let hh = tanh_vec(&core.h.affine(x, &rh)?);
    let h_new: Vec<f64> = (0..h.len())
        .map(|k| u[k] * hh[k] + (1.0 - u[k]) * h[k])
        .collect();
    Ok((h_new, GruGates { r, u, hh, rh }))
}

fn feed_step(block: &FeedBlock, x: &[f64]) -> Result<Vec<f64>> {
    Ok(tanh_vec(&block.affine(x)?))
}

fn cru_core_step(
    core: &CruCore,
    lambda: f64,
    x_s: &[f64],
    x_t: &[f64],
    h_s: &[f64],
    h_t: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, CruGates)> {
    let a_s = sigmoid(&core.a_s.affine(x_s, h_s)?);
    let a_t = sigmoid(&core.a_t.affine(x_t, h_t)?);
    let c_s = sigmoid(&core.c_s.affine(x_s, h_t)?);
    let c_t = sigmoid(&core.c_t.affine(x_t, h_s)?);

    let mul = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x * y).collect() };
    let in_ss = mul(&a_s, h_s);
    let in_st = mul(&c_s, h_t);
    let in_tt = mul(&a_t, h_t);
    let in_ts = mul(&c_t, h_s);

    let g_ss = tanh_vec(&core.ss.affine(x_s, &in_ss)?);
    let g_st = tanh_vec(&core.st.affine(x_s, &in_st)?);
    let g_tt = tanh_vec(&core.tt.affine(x_t, &in_tt)?);
    let g_ts = tanh_vec(&core.ts.affine(x_t, &in_ts)?);

    let h_s_new: Vec<f64> = (0..h_s.len())
        .map(|k| lambda * g_ss[k] + (1.0 - lambda) * g_st[k])
        .collect();
    let h_t_new: Vec<f64> = (0..h_t.len())
        .map(|k| lambda * g_tt[k] + (1.0 - lambda) * g_ts[k])
        .collect();

    Ok((
        h_s_new,
        h_t_new,
        CruGates {
            a_s,
            a_t,
            c_s,
            c_t,
            g_ss,
            g_st,
            g_tt,
            g_ts,
            in_ss,
            in_st,
            in_tt,
            in_ts,
        },
    ))
}

/// Advance one timestep, returning the new state and the intermediates the
/// backward pass needs.
pub fn step_traced(
    p: &CellParams,
    input: StepInput<'_>,
    state: &HiddenState,
) -> Result<(HiddenState, StepTrace)> {
    p.check_input(&input)?;
    p.check_state(state)?;
    match (&p.weights, input, state) {
        (CellWeights::Rnn { core, .. }, StepInput::Raw(x), HiddenState::Plain { h }) => {
            let h_new = rnn_core_step(core, x, h)?;
            Ok((HiddenState::Plain { h: h_new }, StepTrace::Rnn))
        }
        (CellWeights::Lstm { core, .. }, StepInput::Raw(x), HiddenState::Gated { h, c }) => {
            let (h_new, c_new, gates) = lstm_core_step(core, x, h, c)?;
            Ok((
                HiddenState::Gated { h: h_new, c: c_new },
                StepTrace::Lstm(gates),
            ))
        }
        (CellWeights::Gru { core, .. }, StepInput::Raw(x), HiddenState::Plain { h }) => {
            let (h_new, gates) = gru_core_step(core, x, h)?;
            Ok((HiddenState::Plain { h: h_new }, StepTrace::Gru(gates)))
        }
        (
            CellWeights::RnnStlc { s, t, r, .. },
            StepInput::Decomposed(d),
            HiddenState::Components { h_s, h_t, .. },
        ) => {
            let h_s_new = rnn_core_step(s, &d.seasonal, h_s)?;
            let h_t_new = rnn_core_step(t, &d.trend, h_t)?;
            let h_r_new = feed_step(r, &d.remainder)?;
            Ok((
                HiddenState::Components {
                    h_s: h_s_new,
                    h_t: h_t_new,
                    h_r: h_r_new,
                },
                StepTrace::RnnStlc,
            ))
        }
        (
            CellWeights::LstmStlc { s, t, r, .. },
            StepInput::Decomposed(d),
            HiddenState::GatedComponents {
                h_s,
                h_t,
                c_s,
                c_t,
                ..
            },
        ) => {
            let (h_s_new, c_s_new, gates_s) = lstm_core_step(s, &d.seasonal, h_s, c_s)?;
            let (h_t_new, c_t_new, gates_t) = lstm_core_step(t, &d.trend, h_t, c_t)?;
            let h_r_new = feed_step(r, &d.remainder)?;
            Ok((
                HiddenState::GatedComponents {
                    h_s: h_s_new,
                    h_t: h_t_new,
                    h_r: h_r_new,
                    c_s: c_s_new,
                    c_t: c_t_new,
                },
                StepTrace::LstmStlc {
                    s: gates_s,
                    t: gates_t,
                },
            ))
        }
        (
            CellWeights::GruStlc { s, t, r, .. },
            StepInput::Decomposed(d),
            HiddenState::Components { h_s, h_t, .. },
        ) => {
            let (h_s_new, gates_s) = gru_core_step(s, &d.seasonal, h_s)?;
            let (h_t_new, gates_t) = gru_core_step(t, &d.trend, h_t)?;
            let h_r_new = feed_step(r, &d.remainder)?;
            Ok((
                HiddenState::Components {
                    h_s: h_s_new,
                    h_t: h_t_new,
                    h_r: h_r_new,
                },
                StepTrace::GruStlc {
                    s: gates_s,
                    t: gates_t,
                },
            ))
        }
        (
            CellWeights::Cru { core, r, .. },
            StepInput::Decomposed(d),
            HiddenState::Components { h_s, h_t, .. },
        ) => {
            let (h_s_new, h_t_new, gates) =
                cru_core_step(core, p.lambda, &d.seasonal, &d.trend, h_s, h_t)?;
            let h_r_new = feed_step(r, &d.remainder)?;
            Ok((
                HiddenState::Components {
                    h_s: h_s_new,
                    h_t: h_t_new,
                    h_r: h_r_new,
                },
                StepTrace::Cru(gates),
            ))
        }
        _ => Err(Error::InvalidParameter(format!(
            "input or state does not match cell kind {}",
            p.kind
        ))),
    }
}

/// Advance one timestep without keeping backward intermediates.
pub fn step(p: &CellParams, input: StepInput<'_>, state: &HiddenState) -> Result<HiddenState> {
    step_traced(p, input, state).map(|(s, _)| s)
}

/// Linear readout of the current state.
pub fn readout(p: &CellParams, state: &HiddenState) -> Result<Vec<f64>> {
    p.check_state(state)?;
    match &p.weights {
        CellWeights::Rnn { readout, .. }
        | CellWeights::Lstm { readout, .. }
        | CellWeights::Gru { readout, .. } => {
            let h = state.main_view().expect("state checked against kind");
            readout.apply(h)
        }
        CellWeights::RnnStlc { readout, .. }
        | CellWeights::LstmStlc { readout, .. }
        | CellWeights::GruStlc { readout, .. }
        | CellWeights::Cru { readout, .. } => {
            let (h_s, h_t, h_r) = state.component_views().expect("state checked against kind");
            readout.apply(h_s, h_t, h_r)
        }
    }
}

/// Learnable-parameter count from the concrete tensors.
pub fn count_parameters(p: &CellParams) -> usize {
    p.weights.param_count()
}

/// Learnable-parameter count from the dimensions alone.
///
/// With `gate = H(m + H + 1)` (input map, recurrent map, bias) and
/// `feed = H(m + 1)`: the baselines cost 1, 4, and 3 gates plus an
/// `o(H + 1)` readout; the component variants cost twice their baseline's
/// gates plus one feed block and an `o(3H + 1)` readout; the correlation
/// cell costs 8 gates plus the same feed block and readout.
pub fn closed_form_count(kind: CellKind, input: usize, hidden: usize, output: usize) -> usize {
    let gate = hidden * (input + hidden + 1);
    let feed = hidden * (input + 1);
    let plain_readout = output * (hidden + 1);
    let split_readout = output * (3 * hidden + 1);
    match kind {
        CellKind::Rnn => gate + plain_readout,
        CellKind::Lstm => 4 * gate + plain_readout,
        CellKind::Gru => 3 * gate + plain_readout,
        CellKind::RnnStlc => 2 * gate + feed + split_readout,
        CellKind::LstmStlc => 8 * gate + feed + split_readout,
        CellKind::GruStlc => 6 * gate + feed + split_readout,
        CellKind::Cru => 8 * gate + feed + split_readout,
    }
}
