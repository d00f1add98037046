//! DistMult: the trilinear product `sum_i h_i * r_i * t_i`.

use super::{check_lengths, ModelError, Real, ScoreGradient};

/// Tail-side query `q_i = h_i * r_i`.
pub fn query<T: Real>(h: &[T], r: &[T]) -> Vec<f64> {
    h.iter().zip(r).map(|(&h, &r)| h.into() * r.into()).collect()
}

pub fn tail_dot<T: Real>(query: &[f64], t: &[T]) -> f64 {
    let mut acc = 0.0f64;
    for (&q, &t) in query.iter().zip(t) {
        acc += q * t.into();
    }
    acc
}

pub fn score<T: Real>(h: &[T], r: &[T], t: &[T]) -> Result<f64, ModelError> {
    check_lengths(h, r, t, 1)?;
    Ok(tail_dot(&query(h, r), t))
}

pub fn gradient<T: Real>(h: &[T], r: &[T], t: &[T]) -> ScoreGradient {
    let f = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&x, &y)| x.into() * y.into()).collect();
    ScoreGradient {
        d_head: f(r, t),
        d_rel: f(h, t),
        d_tail: f(h, r),
    }
}
