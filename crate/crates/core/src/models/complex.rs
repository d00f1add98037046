//! ComplEx: the real part of the Hermitian product `Re(sum_i h_i * r_i * conj(t_i))`.
//!
//! Each vector is split in half; the first half holds real parts, the second half
//! imaginary parts. The score is the four-term sum
//!
//! ```text
//! real_real_real + real_imag_imag + imag_real_imag - imag_imag_real
//! ```
//!
//! with each term summed separately over the `d/2` coordinates.

use super::{check_lengths, ModelError, Real, ScoreGradient};

/// Query laid out as four `d/2` blocks: `hr*rr`, `hr*ri`, `hi*rr`, `hi*ri`.
pub fn query<T: Real>(h: &[T], r: &[T]) -> Vec<f64> {
    let half = h.len() / 2;
    let (hr, hi) = h.split_at(half);
    let (rr, ri) = r.split_at(half);
    let mut q = Vec::with_capacity(4 * half);
    for (a, b) in [(hr, rr), (hr, ri), (hi, rr), (hi, ri)] {
        q.extend(a.iter().zip(b).map(|(&x, &y)| x.into() * y.into()));
    }
    q
}

fn dot<T: Real>(q: &[f64], t: &[T]) -> f64 {
    let mut acc = 0.0f64;
    for (&q, &t) in q.iter().zip(t) {
        acc += q * t.into();
    }
    acc
}

pub fn tail_dot<T: Real>(query: &[f64], t: &[T]) -> f64 {
    let half = t.len() / 2;
    let (tr, ti) = t.split_at(half);
    let q = |k: usize| &query[k * half..(k + 1) * half];
    let real_real_real = dot(q(0), tr);
    let real_imag_imag = dot(q(1), ti);
    let imag_real_imag = dot(q(2), ti);
    let imag_imag_real = dot(q(3), tr);
    real_real_real + real_imag_imag + imag_real_imag - imag_imag_real
}

pub fn score<T: Real>(h: &[T], r: &[T], t: &[T]) -> Result<f64, ModelError> {
    check_lengths(h, r, t, 2)?;
    Ok(tail_dot(&query(h, r), t))
}

pub fn gradient<T: Real>(h: &[T], r: &[T], t: &[T]) -> ScoreGradient {
    let half = h.len() / 2;
    let f = |v: &[T]| -> Vec<f64> { v.iter().map(|&x| x.into()).collect() };
    let (h, r, t) = (f(h), f(r), f(t));
    let (hr, hi) = h.split_at(half);
    let (rr, ri) = r.split_at(half);
    let (tr, ti) = t.split_at(half);
    let mut g = ScoreGradient::zeros(2 * half);
    for i in 0..half {
        g.d_head[i] = rr[i] * tr[i] + ri[i] * ti[i];
        g.d_head[half + i] = rr[i] * ti[i] - ri[i] * tr[i];
        g.d_rel[i] = hr[i] * tr[i] + hi[i] * ti[i];
        g.d_rel[half + i] = hr[i] * ti[i] - hi[i] * tr[i];
        g.d_tail[i] = hr[i] * rr[i] - hi[i] * ri[i];
        g.d_tail[half + i] = hr[i] * ri[i] + hi[i] * rr[i];
    }
    g
}
