//! Gated recurrent unit, one direction at a time.
//!
//! ```text
//! g = sigmoid(W_g x + U_g h_prev + b_g)
//! r = sigmoid(W_r x + U_r h_prev + b_r)
//! c = tanh(W_h x + U_h (r * h_prev) + b_h)
//! h = (1 - g) * h_prev + g * c
//! ```

use super::params::GruParams;
use crate::tensor::{gemm, sigmoid, Real, View};

/// Per-frame activations of one direction, each `T x units`, indexed by
/// time (not by processing order).
#[derive(Debug, Clone, PartialEq)]
pub struct GruTrace<T = f64> {
    pub h: Vec<T>,
    pub g: Vec<T>,
    pub r: Vec<T>,
    pub c: Vec<T>,
    pub units: usize,
    pub frames: usize,
    pub reverse: bool,
}

impl<T: Real> GruTrace<T> {
    pub fn h_at(&self, t: usize) -> &[T] {
        &self.h[t * self.units..(t + 1) * self.units]
    }

    /// Time index of the state consumed as `h_prev` at frame `t`.
    fn prev_index(&self, t: usize) -> Option<usize> {
        if self.reverse {
            (t + 1 < self.frames).then_some(t + 1)
        } else {
            t.checked_sub(1)
        }
    }
}

#[inline]
fn matvec_acc<T: Real>(m: &[T], v: &[T], out: &mut [T]) {
    let cols = v.len();
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        let mut acc = T::zero();
        for (a, b) in row.iter().zip(v) {
            acc += *a * *b;
        }
        *o += acc;
    }
}

/// One cell update given precomputed input projections
/// `px_* = W_* x + b_*`.
#[inline]
fn cell<T: Real>(
    p: &GruParams<T>,
    h_prev: &[T],
    px_g: &[T],
    px_r: &[T],
    px_h: &[T],
    g: &mut [T],
    r: &mut [T],
    c: &mut [T],
    h: &mut [T],
) {
    let n = h_prev.len();
    g.copy_from_slice(px_g);
    matvec_acc(&p.u_g.data, h_prev, g);
    r.copy_from_slice(px_r);
    matvec_acc(&p.u_r.data, h_prev, r);
    for i in 0..n {
        g[i] = sigmoid(g[i]);
        r[i] = sigmoid(r[i]);
    }
    let rh: Vec<T> = (0..n).map(|i| r[i] * h_prev[i]).collect();
    c.copy_from_slice(px_h);
    matvec_acc(&p.u_h.data, &rh, c);
    for i in 0..n {
        c[i] = c[i].tanh();
        h[i] = (T::one() - g[i]) * h_prev[i] + g[i] * c[i];
    }
}

/// Gate activations of a single step.
#[derive(Debug, Clone, PartialEq)]
pub struct GateActivations<T = f64> {
    pub update: Vec<T>,
    pub reset: Vec<T>,
    pub candidate: Vec<T>,
}

/// Single step of the recurrence for an input vector `x`.
pub fn gru_cell_forward<T: Real>(
    x: &[T],
    h_prev: &[T],
    p: &GruParams<T>,
) -> (Vec<T>, GateActivations<T>) {
    let n = p.units();
    assert_eq!(x.len(), p.input_dim(), "input width");
    assert_eq!(h_prev.len(), n, "state width");
    let proj = |w: &[T], b: &[T]| {
        let mut out = b.to_vec();
        matvec_acc(w, x, &mut out);
        out
    };
    let px_g = proj(&p.w_g.data, &p.b_g.data);
    let px_r = proj(&p.w_r.data, &p.b_r.data);
    let px_h = proj(&p.w_h.data, &p.b_h.data);
    let (mut g, mut r, mut c, mut h) = (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]);
    cell(p, h_prev, &px_g, &px_r, &px_h, &mut g, &mut r, &mut c, &mut h);
    (
        h,
        GateActivations {
            update: g,
            reset: r,
            candidate: c,
        },
    )
}

/// `(W x_t + b)` for every frame, `T x units`. `x` is `input x T`.
fn project<T: Real>(w: &[T], b: &[T], x: &[T], input: usize, frames: usize) -> Vec<T> {
    let units = b.len();
    let mut out = Vec::with_capacity(frames * units);
    for _ in 0..frames {
        out.extend_from_slice(b);
    }
    gemm(
        T::one(),
        View::row_major(x, input, frames).t(),
        View::row_major(w, units, input).t(),
        T::one(),
        &mut out,
    );
    out
}

/// Run one direction over `x` (`input x T`), starting from a zero state.
pub fn run_direction<T: Real>(p: &GruParams<T>, x: &[T], frames: usize, reverse: bool) -> GruTrace<T> {
    let (n, input) = (p.units(), p.input_dim());
    let pg = project(&p.w_g.data, &p.b_g.data, x, input, frames);
    let pr = project(&p.w_r.data, &p.b_r.data, x, input, frames);
    let ph = project(&p.w_h.data, &p.b_h.data, x, input, frames);
    let mut tr = GruTrace {
        h: vec![T::zero(); frames * n],
        g: vec![T::zero(); frames * n],
        r: vec![T::zero(); frames * n],
        c: vec![T::zero(); frames * n],
        units: n,
        frames,
        reverse,
    };
    let zero = vec![T::zero(); n];
    let mut h_prev = zero.clone();
    for step in 0..frames {
        let t = if reverse { frames - 1 - step } else { step };
        let sl = t * n..(t + 1) * n;
        let mut h = vec![T::zero(); n];
        cell(
            p,
            &h_prev,
            &pg[sl.clone()],
            &pr[sl.clone()],
            &ph[sl.clone()],
            &mut tr.g[sl.clone()],
            &mut tr.r[sl.clone()],
            &mut tr.c[sl.clone()],
            &mut h,
        );
        tr.h[sl].copy_from_slice(&h);
        h_prev = h;
    }
    tr
}

/// Backpropagation through time for one direction.
///
/// `d_h` is the loss gradient w.r.t. the emitted states (`T x units`).
/// Accumulates parameter gradients into `grad` and input gradients into
/// `d_x` (`input x T`).
pub fn backward_direction(
    p: &GruParams<f64>,
    tr: &GruTrace<f64>,
    x: &[f64],
    d_h: &[f64],
    grad: &mut GruParams<f64>,
    d_x: &mut [f64],
) {
    let (n, input, frames) = (tr.units, p.input_dim(), tr.frames);
    let mut da_g = vec![0.0; frames * n];
    let mut da_r = vec![0.0; frames * n];
    let mut da_c = vec![0.0; frames * n];
    let mut carry = vec![0.0; n];
    let zero = vec![0.0; n];
    let mut dh = vec![0.0; n];
    let mut d_rh = vec![0.0; n];
    for step in (0..frames).rev() {
        let t = if tr.reverse { frames - 1 - step } else { step };
        let sl = t * n..(t + 1) * n;
        let h_prev = match tr.prev_index(t) {
            Some(pt) => tr.h_at(pt),
            None => &zero[..],
        };
        let (g, r, c) = (&tr.g[sl.clone()], &tr.r[sl.clone()], &tr.c[sl.clone()]);
        for i in 0..n {
            dh[i] = d_h[t * n + i] + carry[i];
        }
        let (ag, ar, ac) = (
            &mut da_g[sl.clone()],
            &mut da_r[sl.clone()],
            &mut da_c[sl.clone()],
        );
        for i in 0..n {
            ac[i] = dh[i] * g[i] * (1.0 - c[i] * c[i]);
            ag[i] = dh[i] * (c[i] - h_prev[i]) * g[i] * (1.0 - g[i]);
            carry[i] = dh[i] * (1.0 - g[i]);
        }
        // Candidate path through U_h (r * h_prev).
        d_rh.fill(0.0);
        for i in 0..n {
            let row = &p.u_h.data[i * n..(i + 1) * n];
            let grow = &mut grad.u_h.data[i * n..(i + 1) * n];
            for j in 0..n {
                grow[j] += ac[i] * r[j] * h_prev[j];
                d_rh[j] += row[j] * ac[i];
            }
        }
        for j in 0..n {
            ar[j] = d_rh[j] * h_prev[j] * r[j] * (1.0 - r[j]);
            carry[j] += d_rh[j] * r[j];
        }
        for i in 0..n {
            let (ugr, urr) = (&p.u_g.data[i * n..(i + 1) * n], &p.u_r.data[i * n..(i + 1) * n]);
            for j in 0..n {
                grad.u_g.data[i * n + j] += ag[i] * h_prev[j];
                grad.u_r.data[i * n + j] += ar[i] * h_prev[j];
                carry[j] += ugr[j] * ag[i] + urr[j] * ar[i];
            }
        }
    }
    for (da, w, dw, db) in [
        (&da_g, &p.w_g, &mut grad.w_g, &mut grad.b_g),
        (&da_r, &p.w_r, &mut grad.w_r, &mut grad.b_r),
        (&da_c, &p.w_h, &mut grad.w_h, &mut grad.b_h),
    ] {
        // dW += dA^T X^T
        gemm(
            1.0,
            View::row_major(da, frames, n).t(),
            View::row_major(x, input, frames).t(),
            1.0,
            &mut dw.data,
        );
        for t in 0..frames {
            for i in 0..n {
                db.data[i] += da[t * n + i];
            }
        }
        // dX += W^T dA^T
        gemm(
            1.0,
            View::row_major(&w.data, n, input).t(),
            View::row_major(da, frames, n).t(),
            1.0,
            d_x,
        );
    }
}
