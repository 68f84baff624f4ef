//! Independent oracles for the integration suites: straight-line
//! transcriptions of every cell update working off a name -> tensor map,
//! plus a brute-force weighted-least-squares loess point fit. Nothing here
//! shares code with the implementations under test.

use std::collections::HashMap;

use cru::cells::CellWeights;

pub struct Tensors {
    map: HashMap<&'static str, Vec<f64>>,
}

impl Tensors {
    pub fn of(weights: &CellWeights) -> Tensors {
        let mut map = HashMap::new();
        weights.visit(&mut |name, slice| {
            map.insert(name, slice.to_vec());
        });
        Tensors { map }
    }

    pub fn get(&self, name: &str) -> &[f64] {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("no tensor named {name}"))
    }
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// b + W_x x + W_h h, with W_* row-major (hidden rows).
fn affine(t: &Tensors, wx: &str, x: &[f64], wh: &str, h: &[f64], b: &str) -> Vec<f64> {
    let (wx, wh, b) = (t.get(wx), t.get(wh), t.get(b));
    let hidden = b.len();
    let mut out = b.to_vec();
    for i in 0..hidden {
        for (j, xv) in x.iter().enumerate() {
            out[i] += wx[i * x.len() + j] * xv;
        }
        for (j, hv) in h.iter().enumerate() {
            out[i] += wh[i * h.len() + j] * hv;
        }
    }
    out
}

/// b + W_x x, the history-free remainder path.
fn affine_x(t: &Tensors, wx: &str, x: &[f64], b: &str) -> Vec<f64> {
    let (wx, b) = (t.get(wx), t.get(b));
    let mut out = b.to_vec();
    for (i, o) in out.iter_mut().enumerate() {
        for (j, xv) in x.iter().enumerate() {
            *o += wx[i * x.len() + j] * xv;
        }
    }
    out
}

fn tanh_all(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(f64::tanh).collect()
}

fn sig_all(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(sig).collect()
}

pub fn naive_rnn(t: &Tensors, x: &[f64], h: &[f64]) -> Vec<f64> {
    tanh_all(affine(t, "w_xh", x, "w_hh", h, "b_h"))
}

pub fn naive_lstm(t: &Tensors, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let i = sig_all(affine(t, "w_xi", x, "w_hi", h, "b_i"));
    let f = sig_all(affine(t, "w_xf", x, "w_hf", h, "b_f"));
    let o = sig_all(affine(t, "w_xo", x, "w_ho", h, "b_o"));
    let g = tanh_all(affine(t, "w_xc", x, "w_hc", h, "b_c"));
    let c_next: Vec<f64> = (0..c.len()).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
    let h_next: Vec<f64> = (0..c.len()).map(|k| o[k] * c_next[k].tanh()).collect();
    (h_next, c_next)
}

pub fn naive_gru(t: &Tensors, x: &[f64], h: &[f64]) -> Vec<f64> {
    let r = sig_all(affine(t, "w_xr", x, "w_hr", h, "b_r"));
    let u = sig_all(affine(t, "w_xu", x, "w_hu", h, "b_u"));
    let rh: Vec<f64> = (0..h.len()).map(|k| r[k] * h[k]).collect();
    let cand = tanh_all(affine(t, "w_xh", x, "w_hh", &rh, "b_h"));
    (0..h.len()).map(|k| u[k] * cand[k] + (1.0 - u[k]) * h[k]).collect()
}

/// Suffix-named copies of the plain updates used by the per-component cells.
fn naive_rnn_named(t: &Tensors, names: [&str; 3], x: &[f64], h: &[f64]) -> Vec<f64> {
    tanh_all(affine(t, names[0], x, names[1], h, names[2]))
}

fn naive_lstm_named(
    t: &Tensors,
    suffix: &str,
    x: &[f64],
    h: &[f64],
    c: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let n = |base: &str| -> String { format!("{base}{suffix}") };
    let i = sig_all(affine(t, &n("w_xi"), x, &n("w_hi"), h, &n("b_i")));
    let f = sig_all(affine(t, &n("w_xf"), x, &n("w_hf"), h, &n("b_f")));
    let o = sig_all(affine(t, &n("w_xo"), x, &n("w_ho"), h, &n("b_o")));
    let g = tanh_all(affine(t, &n("w_xc"), x, &n("w_hc"), h, &n("b_c")));
    let c_next: Vec<f64> = (0..c.len()).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
    let h_next: Vec<f64> = (0..c.len()).map(|k| o[k] * c_next[k].tanh()).collect();
    (h_next, c_next)
}

fn naive_gru_named(t: &Tensors, suffix: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = |base: &str| -> String { format!("{base}{suffix}") };
    let r = sig_all(affine(t, &n("w_xr"), x, &n("w_hr"), h, &n("b_r")));
    let u = sig_all(affine(t, &n("w_xu"), x, &n("w_hu"), h, &n("b_u")));
    let rh: Vec<f64> = (0..h.len()).map(|k| r[k] * h[k]).collect();
    let cand = tanh_all(affine(t, &n("w_xh"), x, &n("w_hh"), &rh, &n("b_h")));
    (0..h.len()).map(|k| u[k] * cand[k] + (1.0 - u[k]) * h[k]).collect()
}

pub fn naive_remainder(t: &Tensors, x_r: &[f64]) -> Vec<f64> {
    tanh_all(affine_x(t, "w_xh_r", x_r, "b_h_r"))
}

pub struct ComponentState {
    pub h_s: Vec<f64>,
    pub h_t: Vec<f64>,
    pub h_r: Vec<f64>,
}

pub fn naive_rnn_stlc(
    t: &Tensors,
    xs: [&[f64]; 3],
    h_s: &[f64],
    h_t: &[f64],
) -> ComponentState {
    ComponentState {
        h_s: naive_rnn_named(t, ["w_xh_s", "w_hh_s", "b_h_s"], xs[0], h_s),
        h_t: naive_rnn_named(t, ["w_xh_t", "w_hh_t", "b_h_t"], xs[1], h_t),
        h_r: naive_remainder(t, xs[2]),
    }
}

pub struct GatedComponentState {
    pub h_s: Vec<f64>,
    pub h_t: Vec<f64>,
    pub h_r: Vec<f64>,
    pub c_s: Vec<f64>,
    pub c_t: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn naive_lstm_stlc(
    t: &Tensors,
    xs: [&[f64]; 3],
    h_s: &[f64],
    h_t: &[f64],
    c_s: &[f64],
    c_t: &[f64],
) -> GatedComponentState {
    let (h_s, c_s) = naive_lstm_named(t, "_s", xs[0], h_s, c_s);
    let (h_t, c_t) = naive_lstm_named(t, "_t", xs[1], h_t, c_t);
    GatedComponentState {
        h_s,
        h_t,
        h_r: naive_remainder(t, xs[2]),
        c_s,
        c_t,
    }
}

pub fn naive_gru_stlc(
    t: &Tensors,
    xs: [&[f64]; 3],
    h_s: &[f64],
    h_t: &[f64],
) -> ComponentState {
    ComponentState {
        h_s: naive_gru_named(t, "_s", xs[0], h_s),
        h_t: naive_gru_named(t, "_t", xs[1], h_t),
        h_r: naive_remainder(t, xs[2]),
    }
}

/// The correlation cell: autocorrelation gates modulate a stream's own
/// history, correlation gates modulate the opposite stream's, and lambda
/// blends the two candidates per stream.
pub fn naive_cru(
    t: &Tensors,
    xs: [&[f64]; 3],
    h_s: &[f64],
    h_t: &[f64],
    lambda: f64,
) -> ComponentState {
    let (x_s, x_t, x_r) = (xs[0], xs[1], xs[2]);
    let a_s = sig_all(affine(t, "w_xa_s", x_s, "w_ha_s", h_s, "b_a_s"));
    let a_t = sig_all(affine(t, "w_xa_t", x_t, "w_ha_t", h_t, "b_a_t"));
    let c_s = sig_all(affine(t, "w_xc_s", x_s, "w_hc_s", h_t, "b_c_s"));
    let c_t = sig_all(affine(t, "w_xc_t", x_t, "w_hc_t", h_s, "b_c_t"));

    let hidden = h_s.len();
    let gated = |g: &[f64], h: &[f64]| -> Vec<f64> {
        (0..hidden).map(|k| g[k] * h[k]).collect()
    };
    let g_ss = tanh_all(affine(t, "w_xh_ss", x_s, "w_hh_ss", &gated(&a_s, h_s), "b_ss"));
    let g_st = tanh_all(affine(t, "w_xh_st", x_s, "w_hh_st", &gated(&c_s, h_t), "b_st"));
    let g_tt = tanh_all(affine(t, "w_xh_tt", x_t, "w_hh_tt", &gated(&a_t, h_t), "b_tt"));
    let g_ts = tanh_all(affine(t, "w_xh_ts", x_t, "w_hh_ts", &gated(&c_t, h_s), "b_ts"));

    ComponentState {
        h_s: (0..hidden)
            .map(|k| lambda * g_ss[k] + (1.0 - lambda) * g_st[k])
            .collect(),
        h_t: (0..hidden)
            .map(|k| lambda * g_tt[k] + (1.0 - lambda) * g_ts[k])
            .collect(),
        h_r: naive_remainder(t, x_r),
    }
}

pub fn naive_readout(t: &Tensors, h: &[f64]) -> Vec<f64> {
    affine_x(t, "w_hy", h, "b_y")
}

pub fn naive_split_readout(t: &Tensors, h_s: &[f64], h_t: &[f64], h_r: &[f64]) -> Vec<f64> {
    let (ws, wt, wr, b) = (
        t.get("w_hy_s"),
        t.get("w_hy_t"),
        t.get("w_hy_r"),
        t.get("b_y"),
    );
    let hidden = h_s.len();
    let mut out = b.to_vec();
    for (i, o) in out.iter_mut().enumerate() {
        for k in 0..hidden {
            *o += ws[i * hidden + k] * h_s[k]
                + wt[i * hidden + k] * h_t[k]
                + wr[i * hidden + k] * h_r[k];
        }
    }
    out
}

/// Brute-force loess value at `x0`: take the `span` nearest points (ties
/// toward the left), weight by tricube of distance over the window radius
/// times any point weight, and solve the weighted normal equations directly.
pub fn wls_loess_point(
    x: &[f64],
    y: &[f64],
    point_weights: Option<&[f64]>,
    span: usize,
    degree: usize,
    x0: f64,
) -> f64 {
    let n = x.len();
    let span = span.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = ((x[a] - x0).abs(), (x[b] - x0).abs());
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });
    let window = &order[..span];
    let radius = window
        .iter()
        .map(|&i| (x[i] - x0).abs())
        .fold(0.0f64, f64::max);

    let weight = |i: usize| -> f64 {
        let tri = if radius == 0.0 {
            1.0
        } else {
            let u = (x[i] - x0).abs() / radius;
            if u >= 1.0 {
                0.0
            } else {
                (1.0 - u * u * u).powi(3)
            }
        };
        tri * point_weights.map_or(1.0, |w| w[i])
    };

    let sw: f64 = window.iter().map(|&i| weight(i)).sum();
    if sw <= 0.0 {
        // everything vanished; fall back to the plain window mean
        return window.iter().map(|&i| y[i]).sum::<f64>() / span as f64;
    }
    if degree == 0 {
        return window.iter().map(|&i| weight(i) * y[i]).sum::<f64>() / sw;
    }
    // degree 1 in centered coordinates u = x - x0; fitted value is the
    // intercept
    let mut swu = 0.0;
    let mut swuu = 0.0;
    let mut swy = 0.0;
    let mut swuy = 0.0;
    for &i in window {
        let w = weight(i);
        let u = x[i] - x0;
        swu += w * u;
        swuu += w * u * u;
        swy += w * y[i];
        swuy += w * u * y[i];
    }
    let det = sw * swuu - swu * swu;
    if det <= 1e-12 * sw * swuu {
        return swy / sw;
    }
    (swuu * swy - swu * swuy) / det
}

/// Pearson correlation, for the component-recovery checks.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va.sqrt() * vb.sqrt())
}
