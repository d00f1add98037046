//! QMult: `<h (x) r, t>` with `(x)` the Hamilton product applied per quaternion
//! coordinate.
//!
//! This follows the quaternion-product convention of the published QMult model;
//! the scoring rule is not derived from anything else in this crate. Vectors are
//! laid out as four contiguous `d/4` blocks holding the `1, i, j, k` components.
//! No normalization is applied to the relation quaternion.

use super::{check_lengths, ModelError, Real, ScoreGradient};

fn blocks<T: Real>(v: &[T]) -> [Vec<f64>; 4] {
    let q = v.len() / 4;
    std::array::from_fn(|k| v[k * q..(k + 1) * q].iter().map(|&x| x.into()).collect())
}

/// Hamilton product `h (x) r`, block layout preserved.
pub fn query<T: Real>(h: &[T], r: &[T]) -> Vec<f64> {
    let [a1, b1, c1, d1] = blocks(h);
    let [a2, b2, c2, d2] = blocks(r);
    let n = a1.len();
    let mut q = vec![0.0f64; 4 * n];
    for i in 0..n {
        q[i] = a1[i] * a2[i] - b1[i] * b2[i] - c1[i] * c2[i] - d1[i] * d2[i];
        q[n + i] = a1[i] * b2[i] + b1[i] * a2[i] + c1[i] * d2[i] - d1[i] * c2[i];
        q[2 * n + i] = a1[i] * c2[i] - b1[i] * d2[i] + c1[i] * a2[i] + d1[i] * b2[i];
        q[3 * n + i] = a1[i] * d2[i] + b1[i] * c2[i] - c1[i] * b2[i] + d1[i] * a2[i];
    }
    q
}

pub fn tail_dot<T: Real>(query: &[f64], t: &[T]) -> f64 {
    let mut acc = 0.0f64;
    for (&q, &t) in query.iter().zip(t) {
        acc += q * t.into();
    }
    acc
}

pub fn score<T: Real>(h: &[T], r: &[T], t: &[T]) -> Result<f64, ModelError> {
    check_lengths(h, r, t, 4)?;
    Ok(tail_dot(&query(h, r), t))
}

pub fn gradient<T: Real>(h: &[T], r: &[T], t: &[T]) -> ScoreGradient {
    let [a1, b1, c1, d1] = blocks(h);
    let [a2, b2, c2, d2] = blocks(r);
    let [ta, tb, tc, td] = blocks(t);
    let n = a1.len();
    let mut g = ScoreGradient::zeros(4 * n);
    g.d_tail = query(h, r);
    for i in 0..n {
        g.d_head[i] = ta[i] * a2[i] + tb[i] * b2[i] + tc[i] * c2[i] + td[i] * d2[i];
        g.d_head[n + i] = -ta[i] * b2[i] + tb[i] * a2[i] - tc[i] * d2[i] + td[i] * c2[i];
        g.d_head[2 * n + i] = -ta[i] * c2[i] + tb[i] * d2[i] + tc[i] * a2[i] - td[i] * b2[i];
        g.d_head[3 * n + i] = -ta[i] * d2[i] - tb[i] * c2[i] + tc[i] * b2[i] + td[i] * a2[i];

        g.d_rel[i] = ta[i] * a1[i] + tb[i] * b1[i] + tc[i] * c1[i] + td[i] * d1[i];
        g.d_rel[n + i] = -ta[i] * b1[i] + tb[i] * a1[i] + tc[i] * d1[i] - td[i] * c1[i];
        g.d_rel[2 * n + i] = -ta[i] * c1[i] - tb[i] * d1[i] + tc[i] * a1[i] + td[i] * b1[i];
        g.d_rel[3 * n + i] = -ta[i] * d1[i] + tb[i] * c1[i] - tc[i] * b1[i] + td[i] * a1[i];
    }
    g
}
