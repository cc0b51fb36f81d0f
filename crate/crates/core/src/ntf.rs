//! Rank-K non-negative CP factorization of a third-order tensor under the
//! β-divergence, solved with multiplicative updates.
//!
//! The model is `ĉ[i,j,m] = Σ_k W[i,k] H[j,k] Q[m,k]`. Each factor update
//! recomputes `ĉ` from the current factors inside a single pass over the
//! tensor, so `ĉ` is never stored.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Floor applied to `ĉ` inside ratios and logarithms.
pub const DEFAULT_EPSILON: f64 = 1e-12;

/// Dense third-order tensor of shape `(n1, n2, n3)`, stored as `n3` row-major
/// `n1 × n2` slices.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    n1: usize,
    n2: usize,
    n3: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn from_vec(n1: usize, n2: usize, n3: usize, data: Vec<f64>) -> Result<Self> {
        if n1 == 0 || n2 == 0 || n3 == 0 {
            return Err(Error::size("tensor dimensions must be positive"));
        }
        if data.len() != n1 * n2 * n3 {
            return Err(Error::size(format!(
                "{} values for a {n1}×{n2}×{n3} tensor",
                data.len()
            )));
        }
        if data.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("tensor entries must be finite and non-negative"));
        }
        Ok(Tensor3 { n1, n2, n3, data })
    }

    pub fn from_fn(n1: usize, n2: usize, n3: usize, f: impl Fn(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(n1 * n2 * n3);
        for m in 0..n3 {
            for i in 0..n1 {
                for j in 0..n2 {
                    data.push(f(i, j, m));
                }
            }
        }
        Self::from_vec(n1, n2, n3, data)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n1, self.n2, self.n3)
    }

    pub fn get(&self, i: usize, j: usize, m: usize) -> f64 {
        self.data[(m * self.n1 + i) * self.n2 + j]
    }

    pub fn slice(&self, m: usize) -> &[f64] {
        let s = self.n1 * self.n2;
        &self.data[m * s..(m + 1) * s]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Same tensor with modes 1 and 2 swapped.
    fn transpose12(&self) -> Vec<f64> {
        let (n1, n2) = (self.n1, self.n2);
        let mut out = vec![0.0; self.data.len()];
        for m in 0..self.n3 {
            let src = self.slice(m);
            let dst = &mut out[m * n1 * n2..(m + 1) * n1 * n2];
            for i in 0..n1 {
                for j in 0..n2 {
                    dst[j * n1 + i] = src[i * n2 + j];
                }
            }
        }
        out
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::size(format!("{} values for a {rows}×{cols} matrix", data.len())));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..rows * cols).map(|x| f(x / cols, x % cols)).collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn scale_column(&mut self, c: usize, factor: f64) {
        for r in 0..self.rows {
            self.data[r * self.cols + c] *= factor;
        }
    }
}

/// Divergence parameter: `-1` (Itakura–Saito), `0` (Kullback–Leibler) or any
/// positive value (`1` is half the squared Euclidean distance).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Beta(f64);

impl Beta {
    pub const ITAKURA_SAITO: Beta = Beta(-1.0);
    pub const KULLBACK_LEIBLER: Beta = Beta(0.0);
    pub const EUCLIDEAN: Beta = Beta(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if value == -1.0 || value == 0.0 || (value > 0.0 && value.is_finite()) {
            Ok(Beta(value))
        } else {
            Err(Error::invalid(format!("beta must be -1, 0 or positive, got {value}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    fn kind(self) -> BetaKind {
        match self.0 {
            v if v == -1.0 => BetaKind::ItakuraSaito,
            v if v == 0.0 => BetaKind::KullbackLeibler,
            v if v == 1.0 => BetaKind::Euclidean,
            v => BetaKind::General(v),
        }
    }
}

impl TryFrom<f64> for Beta {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Beta::new(v)
    }
}

impl From<Beta> for f64 {
    fn from(b: Beta) -> f64 {
        b.0
    }
}

impl std::fmt::Display for Beta {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy)]
enum BetaKind {
    ItakuraSaito,
    KullbackLeibler,
    Euclidean,
    General(f64),
}

impl BetaKind {
    /// `(c · ĉ^(β-1), ĉ^β)`, the weights of the numerator and denominator sums.
    #[inline(always)]
    fn weights(self, c: f64, chat: f64) -> (f64, f64) {
        match self {
            BetaKind::ItakuraSaito => {
                let inv = 1.0 / chat;
                (c * inv * inv, inv)
            }
            BetaKind::KullbackLeibler => (c / chat, 1.0),
            BetaKind::Euclidean => (c, chat),
            BetaKind::General(b) => (c * chat.powf(b - 1.0), chat.powf(b)),
        }
    }

    /// Divergence of one entry. `chat` is already floored.
    #[inline(always)]
    fn term(self, c: f64, chat: f64, eps: f64) -> f64 {
        match self {
            BetaKind::ItakuraSaito => {
                let c = c.max(eps);
                let r = c / chat;
                r - r.ln() - 1.0
            }
            BetaKind::KullbackLeibler => {
                if c > 0.0 {
                    c * (c / chat).ln() - c + chat
                } else {
                    chat
                }
            }
            BetaKind::Euclidean => 0.5 * (c - chat) * (c - chat),
            BetaKind::General(b) => c * (c.powf(b) - chat.powf(b)) / b - (c.powf(b + 1.0) - chat.powf(b + 1.0)) / (b + 1.0),
        }
    }
}

/// β-divergence `d(c | ĉ)` of a single pair of values, without flooring.
pub fn beta_divergence_scalar(c: f64, chat: f64, beta: Beta) -> f64 {
    match beta.kind() {
        BetaKind::ItakuraSaito => (chat / c).ln() + c / chat - 1.0,
        BetaKind::KullbackLeibler => {
            if c > 0.0 {
                c * (c / chat).ln() - c + chat
            } else {
                chat
            }
        }
        BetaKind::Euclidean => c * (c - chat) - (c * c - chat * chat) / 2.0,
        BetaKind::General(b) => c * (c.powf(b) - chat.powf(b)) / b - (c.powf(b + 1.0) - chat.powf(b + 1.0)) / (b + 1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NtfConfig {
    pub rank: usize,
    pub beta: Beta,
    pub max_iterations: usize,
    /// Stop once the objective improves by less than this fraction over
    /// `tolerance_window` iterations.
    pub tolerance: f64,
    pub tolerance_window: usize,
    pub epsilon: f64,
    pub seed: u64,
    /// Independent seeded starts; the lowest final objective wins.
    pub restarts: usize,
}

impl Default for NtfConfig {
    fn default() -> Self {
        NtfConfig {
            rank: 4,
            beta: Beta::ITAKURA_SAITO,
            max_iterations: 1000,
            tolerance: 1e-8,
            tolerance_window: 10,
            epsilon: DEFAULT_EPSILON,
            seed: 0,
            restarts: 1,
        }
    }
}

impl NtfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::invalid("rank must be at least 1"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::invalid("tolerance must be non-negative"));
        }
        if self.tolerance_window == 0 {
            return Err(Error::invalid("tolerance_window must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be at least 1"));
        }
        Ok(())
    }
}

/// Factor matrices and fit history.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NtfFactors {
    /// `n1 × K`
    pub w: Matrix,
    /// `n2 × K`
    pub h: Matrix,
    /// `n3 × K`
    pub q: Matrix,
    /// Objective before the first update, then after every iteration.
    pub objective_trace: Vec<f64>,
    pub iterations_run: usize,
}

impl NtfFactors {
    pub fn new(w: Matrix, h: Matrix, q: Matrix) -> Result<Self> {
        let k = w.cols();
        if h.cols() != k || q.cols() != k || k == 0 {
            return Err(Error::size("factor ranks disagree"));
        }
        for m in [&w, &h, &q] {
            if m.data().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::invalid("factors must be finite and non-negative"));
            }
        }
        Ok(NtfFactors {
            w,
            h,
            q,
            objective_trace: Vec::new(),
            iterations_run: 0,
        })
    }

    /// Seeded uniform initialization on `(0.1, 1.1]`.
    pub fn random(shape: (usize, usize, usize), rank: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize| {
            let data = (0..rows * rank).map(|_| 1.1 - rng.random_range(0.0..1.0)).collect();
            Matrix { rows, cols: rank, data }
        };
        let w = draw(shape.0);
        let h = draw(shape.1);
        let q = draw(shape.2);
        NtfFactors {
            w,
            h,
            q,
            objective_trace: Vec::new(),
            iterations_run: 0,
        }
    }

    pub fn rank(&self) -> usize {
        self.w.cols()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.w.rows(), self.h.rows(), self.q.rows())
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.objective_trace.last().copied()
    }

    /// `Σ_k W[i,k] H[j,k] Q[m,k]`.
    pub fn reconstruct_entry(&self, i: usize, j: usize, m: usize) -> f64 {
        let (w, h, q) = (self.w.row(i), self.h.row(j), self.q.row(m));
        (0..self.rank()).map(|k| w[k] * h[k] * q[k]).sum()
    }

    pub fn reconstruct(&self) -> Tensor3 {
        let (n1, n2, n3) = self.shape();
        let mut data = Vec::with_capacity(n1 * n2 * n3);
        for m in 0..n3 {
            for i in 0..n1 {
                for j in 0..n2 {
                    data.push(self.reconstruct_entry(i, j, m));
                }
            }
        }
        Tensor3 { n1, n2, n3, data }
    }

    /// Rescales each column of `H` to a maximum of 1, moving the scale into `W`.
    pub fn normalize_h(&mut self) {
        for k in 0..self.rank() {
            let max = self.h.column(k).into_iter().fold(0.0f64, f64::max);
            if max > 0.0 {
                self.h.scale_column(k, 1.0 / max);
                self.w.scale_column(k, max);
            }
        }
    }

    fn check_against(&self, tensor: &Tensor3) -> Result<()> {
        if self.shape() != tensor.shape() {
            return Err(Error::size(format!(
                "factors of shape {:?} do not match tensor {:?}",
                self.shape(),
                tensor.shape()
            )));
        }
        Ok(())
    }
}

/// Tensor data laid out for one mode's update: `row(a, o)` is a contiguous
/// run of `inner` entries, paired with the partner block `o`, stored as
/// `K` rows of `inner` values.
struct ModeView<'a> {
    data: &'a [f64],
    n_rows: usize,
    outer: usize,
    inner: usize,
    stride_row: usize,
    stride_outer: usize,
}

impl ModeView<'_> {
    #[inline(always)]
    fn row(&self, a: usize, o: usize) -> &[f64] {
        let start = a * self.stride_row + o * self.stride_outer;
        &self.data[start..start + self.inner]
    }
}

/// Partner products `out[(o * K + k) * y.rows() + j] = x[o,k] y[j,k]`.
fn partner(x: &Matrix, y: &Matrix) -> Vec<f64> {
    let k = x.cols();
    let n = y.rows();
    let mut out = vec![0.0; x.rows() * k * n];
    for o in 0..x.rows() {
        for r in 0..k {
            let xr = x.get(o, r);
            let dst = &mut out[(o * k + r) * n..(o * k + r + 1) * n];
            for (j, d) in dst.iter_mut().enumerate() {
                *d = xr * y.get(j, r);
            }
        }
    }
    out
}

/// Dot product with four interleaved accumulators in a fixed order.
#[inline(always)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Sum of `r - ln r - 1` over a block. Logarithms are taken of partial
/// products of up to 16 ratios, which stay well inside the normal range for
/// any floored ratio this solver produces; anything else falls back to
/// per-element logarithms.
fn itakura_saito_sum(ratios: &[f64]) -> f64 {
    let mut linear = 0.0;
    let mut logs = 0.0;
    for chunk in ratios.chunks(16) {
        let mut prod = 1.0;
        for &r in chunk {
            linear += r;
            prod *= r;
        }
        if prod.is_normal() {
            logs += prod.ln();
        } else {
            logs += chunk.iter().map(|r| r.ln()).sum::<f64>();
        }
    }
    linear - logs - ratios.len() as f64
}

/// Result of one mode's pass: updated factor and, when requested, the
/// divergence of the factors the pass started from.
struct ModePass {
    factor: Matrix,
    objective: f64,
}

/// Updated row `a` of the factor, plus that row's share of the objective.
#[inline(always)]
fn row_update(
    rank: usize,
    view: &ModeView<'_>,
    fa: &[f64],
    partner: &[f64],
    kind: BetaKind,
    eps: f64,
    with_objective: bool,
    a: usize,
) -> (Vec<f64>, f64) {
    let inner = view.inner;
    let mut num = vec![0.0; rank];
    let mut den = vec![0.0; rank];
    let mut obj = 0.0;
    let mut chat = vec![0.0; inner];
    let mut x = vec![0.0; inner];
    let mut y = vec![0.0; inner];
    for o in 0..view.outer {
        let cs = view.row(a, o);
        let block = &partner[o * rank * inner..(o + 1) * rank * inner];
        chat.fill(0.0);
        for k in 0..rank {
            let fk = fa[k];
            for (ch, p) in chat.iter_mut().zip(&block[k * inner..(k + 1) * inner]) {
                *ch += fk * p;
            }
        }
        for ch in chat.iter_mut() {
            *ch = ch.max(eps);
        }
        match kind {
            BetaKind::ItakuraSaito => {
                for j in 0..inner {
                    let inv = 1.0 / chat[j];
                    y[j] = inv;
                    x[j] = cs[j] * inv * inv;
                }
                if with_objective {
                    for j in 0..inner {
                        chat[j] = cs[j].max(eps) * y[j];
                    }
                    obj += itakura_saito_sum(&chat);
                }
            }
            BetaKind::KullbackLeibler => {
                for j in 0..inner {
                    x[j] = cs[j] / chat[j];
                }
                if with_objective {
                    for j in 0..inner {
                        obj += kind.term(cs[j], chat[j], eps);
                    }
                }
            }
            BetaKind::Euclidean => {
                x[..inner].copy_from_slice(cs);
                if with_objective {
                    let mut acc = 0.0;
                    for j in 0..inner {
                        let d = cs[j] - chat[j];
                        acc += d * d;
                    }
                    obj += 0.5 * acc;
                }
            }
            BetaKind::General(_) => {
                for j in 0..inner {
                    let (xj, yj) = kind.weights(cs[j], chat[j]);
                    x[j] = xj;
                    y[j] = yj;
                    if with_objective {
                        obj += kind.term(cs[j], chat[j], eps);
                    }
                }
            }
        }
        for k in 0..rank {
            let p = &block[k * inner..(k + 1) * inner];
            num[k] += dot(&x, p);
            den[k] += match kind {
                BetaKind::KullbackLeibler => p.iter().sum::<f64>(),
                BetaKind::Euclidean => dot(&chat, p),
                _ => dot(&y, p),
            };
        }
    }
    let updated = (0..rank)
        .map(|k| if den[k] > 0.0 { fa[k] * num[k] / den[k] } else { 0.0 })
        .collect();
    (updated, obj)
}

fn row_update_fixed<const R: usize>(
    view: &ModeView<'_>,
    fa: &[f64],
    partner: &[f64],
    kind: BetaKind,
    eps: f64,
    with_objective: bool,
    a: usize,
) -> (Vec<f64>, f64) {
    row_update(R, view, fa, partner, kind, eps, with_objective, a)
}

/// Same arithmetic as [`row_update_fixed`], compiled for wider vectors. No
/// fused multiply-add is enabled, so results are bit-identical.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn row_update_avx2<const R: usize>(
    view: &ModeView<'_>,
    fa: &[f64],
    partner: &[f64],
    kind: BetaKind,
    eps: f64,
    with_objective: bool,
    a: usize,
) -> (Vec<f64>, f64) {
    row_update(R, view, fa, partner, kind, eps, with_objective, a)
}

fn has_avx2() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::arch::is_x86_feature_detected!("avx2")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

fn mode_pass_fixed<const R: usize>(
    view: &ModeView<'_>,
    factor: &Matrix,
    partner: &[f64],
    kind: BetaKind,
    eps: f64,
    with_objective: bool,
) -> ModePass {
    let wide = has_avx2();
    let rows: Vec<(Vec<f64>, f64)> = par::map_range(view.n_rows, |a| {
        let fa = factor.row(a);
        #[cfg(target_arch = "x86_64")]
        if wide {
            // SAFETY: the CPU supports AVX2, checked above.
            return unsafe { row_update_avx2::<R>(view, fa, partner, kind, eps, with_objective, a) };
        }
        let _ = wide;
        row_update_fixed::<R>(view, fa, partner, kind, eps, with_objective, a)
    });
    collect_pass(view.n_rows, R, rows)
}

fn mode_pass_dynamic(
    view: &ModeView<'_>,
    factor: &Matrix,
    partner: &[f64],
    kind: BetaKind,
    eps: f64,
    with_objective: bool,
) -> ModePass {
    let rank = factor.cols();
    let rows = par::map_range(view.n_rows, |a| row_update(rank, view, factor.row(a), partner, kind, eps, with_objective, a));
    collect_pass(view.n_rows, rank, rows)
}

fn collect_pass(n_rows: usize, rank: usize, rows: Vec<(Vec<f64>, f64)>) -> ModePass {
    let mut data = Vec::with_capacity(n_rows * rank);
    let mut objective = 0.0;
    for (r, o) in rows {
        data.extend(r);
        objective += o;
    }
    ModePass {
        factor: Matrix { rows: n_rows, cols: rank, data },
        objective,
    }
}

fn mode_pass(
    view: &ModeView<'_>,
    factor: &Matrix,
    partner: &[f64],
    kind: BetaKind,
    eps: f64,
    with_objective: bool,
) -> ModePass {
    // Fixed ranks let the compiler unroll the rank loops.
    match factor.cols() {
        1 => mode_pass_fixed::<1>(view, factor, partner, kind, eps, with_objective),
        2 => mode_pass_fixed::<2>(view, factor, partner, kind, eps, with_objective),
        3 => mode_pass_fixed::<3>(view, factor, partner, kind, eps, with_objective),
        4 => mode_pass_fixed::<4>(view, factor, partner, kind, eps, with_objective),
        5 => mode_pass_fixed::<5>(view, factor, partner, kind, eps, with_objective),
        6 => mode_pass_fixed::<6>(view, factor, partner, kind, eps, with_objective),
        8 => mode_pass_fixed::<8>(view, factor, partner, kind, eps, with_objective),
        _ => mode_pass_dynamic(view, factor, partner, kind, eps, with_objective),
    }
}

/// Tensor plus its mode-2 transpose, so every mode streams contiguous rows.
struct Workspace<'a> {
    tensor: &'a Tensor3,
    transposed: Vec<f64>,
}

impl<'a> Workspace<'a> {
    fn new(tensor: &'a Tensor3) -> Self {
        Workspace {
            tensor,
            transposed: tensor.transpose12(),
        }
    }

    /// One W, H, Q sweep. Returns the new factors and the divergence of the
    /// incoming factors when `with_objective` is set.
    fn sweep(&self, w: &Matrix, h: &Matrix, q: &Matrix, kind: BetaKind, eps: f64, with_objective: bool) -> (Matrix, Matrix, Matrix, f64) {
        let t = self.tensor;
        let (n1, n2, n3) = t.shape();

        let view_w = ModeView {
            data: &t.data,
            n_rows: n1,
            outer: n3,
            inner: n2,
            stride_row: n2,
            stride_outer: n1 * n2,
        };
        let pass = mode_pass(&view_w, w, &partner(q, h), kind, eps, with_objective);
        let w = pass.factor;

        let view_h = ModeView {
            data: &self.transposed,
            n_rows: n2,
            outer: n3,
            inner: n1,
            stride_row: n1,
            stride_outer: n1 * n2,
        };
        let h = mode_pass(&view_h, h, &partner(q, &w), kind, eps, false).factor;

        let view_q = ModeView {
            data: &t.data,
            n_rows: n3,
            outer: n1,
            inner: n2,
            stride_row: n1 * n2,
            stride_outer: n2,
        };
        let q = mode_pass(&view_q, q, &partner(&w, &h), kind, eps, false).factor;
        (w, h, q, pass.objective)
    }

    fn objective(&self, w: &Matrix, h: &Matrix, q: &Matrix, kind: BetaKind, eps: f64) -> f64 {
        let t = self.tensor;
        let (n1, n2, n3) = t.shape();
        let view = ModeView {
            data: &t.data,
            n_rows: n1,
            outer: n3,
            inner: n2,
            stride_row: n2,
            stride_outer: n1 * n2,
        };
        mode_pass(&view, w, &partner(q, h), kind, eps, true).objective
    }
}

/// Total β-divergence between `tensor` and the model, with `ĉ` floored at
/// [`DEFAULT_EPSILON`].
pub fn beta_divergence(tensor: &Tensor3, factors: &NtfFactors, beta: Beta) -> Result<f64> {
    factors.check_against(tensor)?;
    let ws = Workspace {
        tensor,
        transposed: Vec::new(),
    };
    let v = ws.objective(&factors.w, &factors.h, &factors.q, beta.kind(), DEFAULT_EPSILON);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("beta divergence evaluated to {v}")))
    }
}

/// One multiplicative sweep: `W`, then `H`, then `Q`, each against the model
/// rebuilt from the latest factors.
pub fn update_step(tensor: &Tensor3, factors: &NtfFactors, beta: Beta, epsilon: f64) -> Result<NtfFactors> {
    factors.check_against(tensor)?;
    let ws = Workspace::new(tensor);
    let (w, h, q, _) = ws.sweep(&factors.w, &factors.h, &factors.q, beta.kind(), epsilon, false);
    Ok(NtfFactors {
        w,
        h,
        q,
        objective_trace: factors.objective_trace.clone(),
        iterations_run: factors.iterations_run + 1,
    })
}

fn converged(trace: &[f64], tolerance: f64, window: usize) -> bool {
    let n = trace.len();
    let last = trace[n - 1];
    if last == 0.0 {
        return true;
    }
    if n <= window {
        return false;
    }
    let before = trace[n - 1 - window];
    (before - last) / before.abs() < tolerance
}

fn run_once(ws: &Workspace<'_>, config: &NtfConfig, seed: u64) -> Result<NtfFactors> {
    let kind = config.beta.kind();
    let eps = config.epsilon;
    let init = NtfFactors::random(ws.tensor.shape(), config.rank, seed);
    let (mut w, mut h, mut q) = (init.w, init.h, init.q);
    let mut trace = Vec::with_capacity(config.max_iterations + 1);
    let mut iterations = 0;
    while iterations < config.max_iterations {
        // The W pass reports the objective of the factors it starts from.
        let (nw, nh, nq, before) = ws.sweep(&w, &h, &q, kind, eps, true);
        if iterations == 0 {
            trace.push(before);
        } else {
            *trace.last_mut().expect("trace is non-empty") = before;
        }
        w = nw;
        h = nh;
        q = nq;
        iterations += 1;
        // Placeholder for the new objective, replaced by the next pass.
        trace.push(before);
        if iterations >= 2 && converged(&trace[..trace.len() - 1], config.tolerance, config.tolerance_window) {
            break;
        }
    }
    *trace.last_mut().expect("trace is non-empty") = ws.objective(&w, &h, &q, kind, eps);
    if trace.iter().any(|v| !v.is_finite()) || [&w, &h, &q].iter().any(|m| m.data.iter().any(|v| !v.is_finite())) {
        return Err(Error::Numerical("factorization diverged to non-finite values".into()));
    }
    Ok(NtfFactors {
        w,
        h,
        q,
        objective_trace: trace,
        iterations_run: iterations,
    })
}

/// Factorizes `tensor` from seeded random starts and returns the best run
/// with `H` columns normalized to a maximum of 1.
pub fn decompose(tensor: &Tensor3, config: &NtfConfig) -> Result<NtfFactors> {
    config.validate()?;
    let ws = Workspace::new(tensor);
    let mut best: Option<NtfFactors> = None;
    for r in 0..config.restarts {
        let run = run_once(&ws, config, config.seed.wrapping_add(r as u64))?;
        let better = match &best {
            None => true,
            Some(b) => run.final_objective() < b.final_objective(),
        };
        if better {
            best = Some(run);
        }
    }
    let mut best = best.expect("at least one restart");
    best.normalize_h();
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rank1(w: &[f64], h: &[f64], q: &[f64]) -> Tensor3 {
        Tensor3::from_fn(w.len(), h.len(), q.len(), |i, j, m| w[i] * h[j] * q[m]).unwrap()
    }

    #[test]
    fn scalar_divergences() {
        assert!((beta_divergence_scalar(2.0, 1.0, Beta::EUCLIDEAN) - 0.5).abs() < 1e-15);
        let kl = 2.0 * 2f64.ln() - 1.0;
        assert!((beta_divergence_scalar(2.0, 1.0, Beta::KULLBACK_LEIBLER) - kl).abs() < 1e-15);
        assert!((kl - 0.386294).abs() < 1e-6);
        let is = (0.5f64).ln() + 2.0 - 1.0;
        assert!((beta_divergence_scalar(2.0, 1.0, Beta::ITAKURA_SAITO) - is).abs() < 1e-15);
        let b = Beta::new(2.0).unwrap();
        // c (c² - ĉ²)/2 - (c³ - ĉ³)/3 at c = 2, ĉ = 1.
        assert!((beta_divergence_scalar(2.0, 1.0, b) - (3.0 - 7.0 / 3.0)).abs() < 1e-14);
        for beta in [Beta::ITAKURA_SAITO, Beta::KULLBACK_LEIBLER, Beta::EUCLIDEAN, b] {
            assert_eq!(beta_divergence_scalar(0.7, 0.7, beta), 0.0);
        }
    }

    #[test]
    fn invalid_beta_is_rejected() {
        assert!(Beta::new(-0.5).is_err());
        assert!(Beta::new(f64::NAN).is_err());
        assert!(Beta::new(-1.0).is_ok());
    }

    #[test]
    fn exact_fit_has_zero_divergence() {
        let t = rank1(&[1.0, 2.0], &[0.5, 1.5, 1.0], &[2.0, 3.0]);
        let f = NtfFactors::new(
            Matrix::from_vec(2, 1, vec![1.0, 2.0]).unwrap(),
            Matrix::from_vec(3, 1, vec![0.5, 1.5, 1.0]).unwrap(),
            Matrix::from_vec(2, 1, vec![2.0, 3.0]).unwrap(),
        )
        .unwrap();
        for beta in [Beta::ITAKURA_SAITO, Beta::KULLBACK_LEIBLER, Beta::EUCLIDEAN] {
            assert!(beta_divergence(&t, &f, beta).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn generating_triple_is_a_fixed_point() {
        let (w, h, q) = ([1.0, 2.0, 0.5], [0.3, 1.0], [1.0, 4.0, 2.0, 0.25]);
        let t = rank1(&w, &h, &q);
        let f = NtfFactors::new(
            Matrix::from_vec(3, 1, w.to_vec()).unwrap(),
            Matrix::from_vec(2, 1, h.to_vec()).unwrap(),
            Matrix::from_vec(4, 1, q.to_vec()).unwrap(),
        )
        .unwrap();
        for beta in [Beta::ITAKURA_SAITO, Beta::KULLBACK_LEIBLER, Beta::EUCLIDEAN] {
            let g = update_step(&t, &f, beta, DEFAULT_EPSILON).unwrap();
            for (a, b) in [(&f.w, &g.w), (&f.h, &g.h), (&f.q, &g.q)] {
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert!((x - y).abs() < 1e-12, "{x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn zeros_in_data_keep_factors_finite() {
        let t = Tensor3::from_fn(4, 3, 2, |i, j, m| if (i + j + m) % 3 == 0 { 0.0 } else { 1.0 }).unwrap();
        let mut f = NtfFactors::random((4, 3, 2), 2, 3);
        for _ in 0..50 {
            f = update_step(&t, &f, Beta::EUCLIDEAN, DEFAULT_EPSILON).unwrap();
            assert!(f.w.data().iter().chain(f.h.data()).chain(f.q.data()).all(|v| v.is_finite() && *v >= 0.0));
        }
    }

    #[test]
    fn constant_tensor_is_fit_exactly() {
        let t = Tensor3::from_fn(5, 5, 3, |_, _, _| 0.4).unwrap();
        let cfg = NtfConfig {
            rank: 1,
            beta: Beta::KULLBACK_LEIBLER,
            ..NtfConfig::default()
        };
        let f = decompose(&t, &cfg).unwrap();
        assert!(f.final_objective().unwrap() < 1e-12);
        let r = f.reconstruct();
        assert!(r.data().iter().all(|v| (v - 0.4).abs() < 1e-6));
    }

    #[test]
    fn fused_objective_matches_direct_evaluation() {
        let t = Tensor3::from_fn(6, 5, 4, |i, j, m| 0.1 + ((i * 7 + j * 3 + m * 5) % 11) as f64 / 10.0).unwrap();
        for beta in [Beta::ITAKURA_SAITO, Beta::KULLBACK_LEIBLER, Beta::EUCLIDEAN, Beta::new(1.5).unwrap()] {
            let cfg = NtfConfig {
                rank: 3,
                beta,
                max_iterations: 7,
                tolerance: 0.0,
                seed: 4,
                ..NtfConfig::default()
            };
            let ws = Workspace::new(&t);
            let run = run_once(&ws, &cfg, 4).unwrap();
            assert_eq!(run.objective_trace.len(), 8);
            // Replay the sweeps and evaluate each iterate independently.
            let mut f = NtfFactors::random(t.shape(), 3, 4);
            for (it, &traced) in run.objective_trace.iter().enumerate() {
                let direct = beta_divergence(&t, &f, beta).unwrap();
                assert!((direct - traced).abs() <= 1e-12 * direct.max(1.0), "iteration {it}");
                f = update_step(&t, &f, beta, DEFAULT_EPSILON).unwrap();
            }
        }
    }

    #[test]
    fn normalization_keeps_reconstruction() {
        let t = Tensor3::from_fn(6, 6, 3, |i, j, m| 0.2 + ((i * j + m) % 5) as f64 / 4.0).unwrap();
        let cfg = NtfConfig {
            rank: 2,
            beta: Beta::EUCLIDEAN,
            max_iterations: 30,
            ..NtfConfig::default()
        };
        let ws = Workspace::new(&t);
        let raw = run_once(&ws, &cfg, cfg.seed).unwrap();
        let mut normed = raw.clone();
        normed.normalize_h();
        for k in 0..2 {
            let max = normed.h.column(k).into_iter().fold(0.0, f64::max);
            assert!((max - 1.0).abs() < 1e-15);
        }
        let (a, b) = (raw.reconstruct(), normed.reconstruct());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn restarts_keep_the_best_objective() {
        let t = Tensor3::from_fn(8, 8, 4, |i, j, m| 0.05 + ((i * 3 + j * 5 + m * 7) % 13) as f64 / 13.0).unwrap();
        let base = NtfConfig {
            rank: 3,
            beta: Beta::KULLBACK_LEIBLER,
            max_iterations: 40,
            seed: 10,
            ..NtfConfig::default()
        };
        let multi = decompose(&t, &NtfConfig { restarts: 4, ..base }).unwrap();
        for r in 0..4 {
            let single = decompose(&t, &NtfConfig { seed: 10 + r, ..base }).unwrap();
            assert!(multi.final_objective().unwrap() <= single.final_objective().unwrap());
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let t = Tensor3::from_fn(3, 3, 2, |_, _, _| 1.0).unwrap();
        let f = NtfFactors::random((3, 4, 2), 1, 0);
        assert!(matches!(update_step(&t, &f, Beta::EUCLIDEAN, 1e-12), Err(Error::Size(_))));
    }
}
