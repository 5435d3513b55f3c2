//! Centered discrete Fourier transforms on cubic arrays.
//!
//! All grids in the crate are centered: node `j` of an `n`-point axis with
//! spacing `h` sits at `t_j = (j - n/2) h`, and mode `k` has frequency
//! `ω_k = (k - n/2) 2π / (n h)`.  The centered transform of sign `s` is
//!
//! ```text
//! out_k = Σ_j exp(s i 2π (k - n/2)(j - n/2) / n) in_j
//! ```
//!
//! which is evaluated with a plain FFT and two diagonal phase corrections.
//! Multi-dimensional arrays are stored row-major with every axis of the
//! same length `n`; [`centered_dft_axis`] transforms a single axis.
//!
//! # Nyquist convention
//!
//! The mode `k = 0` (frequency `-π/h`) is the Nyquist mode.  Spectral
//! operations treat it symmetrically, as the real interpolant
//! `cos(π t / h)`: odd derivatives annihilate it, even derivatives keep
//! it, and shifts by `s` multiply it by `cos(π s / h)`.  This makes
//! derivatives, shifts and interpolation mutually Taylor-consistent and
//! preserves real-valuedness.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};

/// Plans and phase tables for one transform length.
pub struct Dft {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    // pre/post phases for sign -1 (index 0) and +1 (index 1)
    pre: [Vec<C64>; 2],
    post: [Vec<C64>; 2],
}

impl Dft {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let c = (n / 2) as f64;
        let theta = 2.0 * PI / n as f64;
        let mk = |s: f64| {
            let pre: Vec<C64> = (0..n)
                .map(|j| C64::from_polar(1.0, -s * theta * c * j as f64))
                .collect();
            let post: Vec<C64> = (0..n)
                .map(|k| C64::from_polar(1.0, -s * theta * k as f64 * c + s * theta * c * c))
                .collect();
            (pre, post)
        };
        let (pm, qm) = mk(-1.0);
        let (pp, qp) = mk(1.0);
        Self {
            n,
            fwd,
            inv,
            pre: [pm, pp],
            post: [qm, qp],
        }
    }

    /// Transform length.
    pub fn len(&self) -> usize {
        self.n
    }

    /// Always `false`; transforms have positive length.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Applies the unnormalised centered transform of sign `sign` to every
    /// consecutive block of `n` values in `data`.
    pub fn lines(&self, data: &mut [C64], sign: i32) {
        let n = self.n;
        debug_assert_eq!(data.len() % n, 0);
        let s = usize::from(sign > 0);
        for line in data.chunks_exact_mut(n) {
            for (v, p) in line.iter_mut().zip(&self.pre[s]) {
                *v *= p;
            }
        }
        if sign > 0 {
            self.inv.process(data);
        } else {
            self.fwd.process(data);
        }
        for line in data.chunks_exact_mut(n) {
            for (v, p) in line.iter_mut().zip(&self.post[s]) {
                *v *= p;
            }
        }
    }
}

/// Returns the cached transform of length `n`.
pub fn dft(n: usize) -> Arc<Dft> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Dft>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft cache poisoned");
    guard.entry(n).or_insert_with(|| Arc::new(Dft::new(n))).clone()
}

/// Applies the centered transform of sign `sign` along axis `axis` of a
/// row-major array with `ndim` axes of length `n` each.
pub fn centered_dft_axis(data: &mut [C64], n: usize, ndim: usize, axis: usize, sign: i32) {
    debug_assert!(axis < ndim);
    debug_assert_eq!(data.len(), n.pow(ndim as u32));
    let plan = dft(n);
    let inner = n.pow((ndim - 1 - axis) as u32);
    if inner == 1 {
        plan.lines(data, sign);
        return;
    }
    let outer = data.len() / (n * inner);
    let mut buf = vec![C64::new(0.0, 0.0); n * inner];
    for o in 0..outer {
        let base = o * n * inner;
        // gather: line index = inner position, entries along the axis
        for j in 0..n {
            for i in 0..inner {
                buf[i * n + j] = data[base + j * inner + i];
            }
        }
        plan.lines(&mut buf, sign);
        for j in 0..n {
            for i in 0..inner {
                data[base + j * inner + i] = buf[i * n + j];
            }
        }
    }
}

/// Applies the centered transform along every axis in `axes`.
pub fn centered_dft_axes(data: &mut [C64], n: usize, ndim: usize, axes: &[usize], sign: i32) {
    for &a in axes {
        centered_dft_axis(data, n, ndim, a, sign);
    }
}

/// Centered frequency of mode `k` on an `n`-point axis with spacing `h`.
#[inline]
pub fn frequency(k: usize, n: usize, h: f64) -> f64 {
    (k as f64 - (n / 2) as f64) * 2.0 * PI / (n as f64 * h)
}

/// Centered coordinate of node `j` on an `n`-point axis with spacing `h`.
#[inline]
pub fn node(j: usize, n: usize, h: f64) -> f64 {
    (j as f64 - (n / 2) as f64) * h
}

/// Spectral multiplier of the `order`-th derivative for mode `k`, with the
/// symmetric Nyquist convention.
#[inline]
pub fn derivative_multiplier(k: usize, n: usize, h: f64, order: usize) -> C64 {
    if order == 0 {
        return C64::new(1.0, 0.0);
    }
    if k == 0 && order % 2 == 1 {
        return C64::new(0.0, 0.0);
    }
    let w = frequency(k, n, h);
    C64::new(0.0, w).powu(order as u32)
}

/// Spectral multiplier realising `t ↦ t - s` (evaluation at `t_j - s`) for
/// mode `k`, with the symmetric Nyquist convention.
#[inline]
pub fn shift_multiplier(k: usize, n: usize, h: f64, s: f64) -> C64 {
    let w = frequency(k, n, h);
    if k == 0 {
        C64::new((w * s).cos(), 0.0)
    } else {
        C64::from_polar(1.0, -w * s)
    }
}

/// Weights `w_k` such that the trigonometric interpolant through centered
/// samples with (unnormalised, sign `-1`) spectrum `F` evaluates to
/// `Σ_k w_k F_k` at the point `t`.
pub fn interpolation_weights(n: usize, h: f64, t: f64, out: &mut [C64]) {
    let inv = 1.0 / n as f64;
    for (k, o) in out.iter_mut().enumerate().take(n) {
        let w = frequency(k, n, h);
        *o = if k == 0 {
            C64::new((w * t).cos() * inv, 0.0)
        } else {
            C64::from_polar(inv, w * t)
        };
    }
}
