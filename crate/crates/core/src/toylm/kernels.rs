//! Dense forward/backward kernels over row-major slices.
//!
//! Weights are stored `[in, out]` so the forward inner loop runs over
//! contiguous output columns. Backward kernels accumulate (`+=`) into their
//! gradient buffers.

use super::Real;

pub(crate) const LN_EPS: f64 = 1e-5;

/// Dot product with independent partial sums so the loop vectorizes.
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..n {
        tail = tail + a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `y += a * x`
#[inline]
pub(crate) fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}

/// `out[rows, n] = inp[rows, k] . w[k, n] + b[n]`
pub(crate) fn matmul_forward<T: Real>(
    out: &mut [T],
    inp: &[T],
    w: &[T],
    b: Option<&[T]>,
    k: usize,
    n: usize,
) {
    let rows = inp.len() / k;
    debug_assert_eq!(out.len(), rows * n);
    for r in 0..rows {
        let o = &mut out[r * n..(r + 1) * n];
        match b {
            Some(b) => o.copy_from_slice(b),
            None => o.fill(T::zero()),
        }
        for (kk, &a) in inp[r * k..(r + 1) * k].iter().enumerate() {
            if a != T::zero() {
                axpy(o, a, &w[kk * n..(kk + 1) * n]);
            }
        }
    }
}

/// Accumulates gradients of [`matmul_forward`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul_backward<T: Real>(
    dinp: Option<&mut [T]>,
    dw: &mut [T],
    db: Option<&mut [T]>,
    dout: &[T],
    inp: &[T],
    w: &[T],
    k: usize,
    n: usize,
) {
    let rows = inp.len() / k;
    if let Some(dinp) = dinp {
        for r in 0..rows {
            let d = &dout[r * n..(r + 1) * n];
            for kk in 0..k {
                dinp[r * k + kk] = dinp[r * k + kk] + dot(d, &w[kk * n..(kk + 1) * n]);
            }
        }
    }
    for r in 0..rows {
        let d = &dout[r * n..(r + 1) * n];
        for (kk, &a) in inp[r * k..(r + 1) * k].iter().enumerate() {
            if a != T::zero() {
                axpy(&mut dw[kk * n..(kk + 1) * n], a, d);
            }
        }
    }
    if let Some(db) = db {
        for r in 0..rows {
            axpy(db, T::one(), &dout[r * n..(r + 1) * n]);
        }
    }
}

/// Row-wise layer norm. Stores per-row mean and reciprocal std for backward.
pub(crate) fn layernorm_forward<T: Real>(
    out: &mut [T],
    mean: &mut [T],
    rstd: &mut [T],
    inp: &[T],
    g: &[T],
    b: &[T],
) {
    let d = g.len();
    let dn = T::from_usize(d).unwrap();
    let eps = T::from_f64(LN_EPS).unwrap();
    for r in 0..inp.len() / d {
        let x = &inp[r * d..(r + 1) * d];
        let m = x.iter().fold(T::zero(), |a, &v| a + v) / dn;
        let var = x.iter().fold(T::zero(), |a, &v| a + (v - m) * (v - m)) / dn;
        let s = T::one() / (var + eps).sqrt();
        let o = &mut out[r * d..(r + 1) * d];
        for i in 0..d {
            o[i] = (x[i] - m) * s * g[i] + b[i];
        }
        mean[r] = m;
        rstd[r] = s;
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn layernorm_backward<T: Real>(
    dinp: &mut [T],
    dg: &mut [T],
    db: &mut [T],
    dout: &[T],
    inp: &[T],
    g: &[T],
    mean: &[T],
    rstd: &[T],
) {
    let d = g.len();
    let dn = T::from_usize(d).unwrap();
    for r in 0..inp.len() / d {
        let x = &inp[r * d..(r + 1) * d];
        let dy = &dout[r * d..(r + 1) * d];
        let (m, s) = (mean[r], rstd[r]);
        let mut dnorm_mean = T::zero();
        let mut dnorm_norm_mean = T::zero();
        for i in 0..d {
            let norm = (x[i] - m) * s;
            let dnorm = g[i] * dy[i];
            dnorm_mean = dnorm_mean + dnorm;
            dnorm_norm_mean = dnorm_norm_mean + dnorm * norm;
        }
        dnorm_mean = dnorm_mean / dn;
        dnorm_norm_mean = dnorm_norm_mean / dn;
        let dx = &mut dinp[r * d..(r + 1) * d];
        for i in 0..d {
            let norm = (x[i] - m) * s;
            db[i] = db[i] + dy[i];
            dg[i] = dg[i] + norm * dy[i];
            let dnorm = g[i] * dy[i];
            dx[i] = dx[i] + (dnorm - dnorm_mean - norm * dnorm_norm_mean) * s;
        }
    }
}

fn gelu_consts<T: Real>() -> (T, T, T) {
    (
        T::from_f64((2.0 / std::f64::consts::PI).sqrt()).unwrap(),
        T::from_f64(0.044715).unwrap(),
        T::from_f64(0.5).unwrap(),
    )
}

/// tanh-approximated GELU.
pub(crate) fn gelu_forward<T: Real>(out: &mut [T], inp: &[T]) {
    let (c, k, half) = gelu_consts::<T>();
    for (o, &x) in out.iter_mut().zip(inp) {
        let u = c * (x + k * x * x * x);
        *o = half * x * (T::one() + u.tanh());
    }
}

pub(crate) fn gelu_backward<T: Real>(dinp: &mut [T], inp: &[T], dout: &[T]) {
    let (c, k, half) = gelu_consts::<T>();
    let three = T::from_f64(3.0).unwrap();
    for ((di, &x), &dy) in dinp.iter_mut().zip(inp).zip(dout) {
        let u = c * (x + k * x * x * x);
        let th = u.tanh();
        let sech2 = T::one() - th * th;
        let local = half * (T::one() + th) + half * x * sech2 * c * (T::one() + three * k * x * x);
        *di = *di + local * dy;
    }
}

/// Multi-head self-attention over a fused `[S, 3d]` q|k|v buffer.
/// `att` receives the `[heads, S, S]` probabilities (zeros above the diagonal
/// when causal).
pub(crate) fn attention_forward<T: Real>(
    out: &mut [T],
    att: &mut [T],
    qkv: &[T],
    s: usize,
    d: usize,
    heads: usize,
    causal: bool,
) {
    let hd = d / heads;
    let scale = T::one() / T::from_usize(hd).unwrap().sqrt();
    out.fill(T::zero());
    att.fill(T::zero());
    let mut scores = vec![T::zero(); s];
    for h in 0..heads {
        for i in 0..s {
            let q = &qkv[i * 3 * d + h * hd..i * 3 * d + (h + 1) * hd];
            let last = if causal { i } else { s - 1 };
            let mut max = T::neg_infinity();
            for (j, sc) in scores.iter_mut().enumerate().take(last + 1) {
                let kv = &qkv[j * 3 * d + d + h * hd..j * 3 * d + d + (h + 1) * hd];
                *sc = dot(q, kv) * scale;
                if *sc > max {
                    max = *sc;
                }
            }
            let mut sum = T::zero();
            for sc in scores.iter_mut().take(last + 1) {
                *sc = (*sc - max).exp();
                sum = sum + *sc;
            }
            let row = &mut att[(h * s + i) * s..(h * s + i + 1) * s];
            let o = &mut out[i * d + h * hd..i * d + (h + 1) * hd];
            for j in 0..=last {
                let p = scores[j] / sum;
                row[j] = p;
                let v = &qkv[j * 3 * d + 2 * d + h * hd..j * 3 * d + 2 * d + (h + 1) * hd];
                axpy(o, p, v);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward<T: Real>(
    dqkv: &mut [T],
    dout: &[T],
    qkv: &[T],
    att: &[T],
    s: usize,
    d: usize,
    heads: usize,
    causal: bool,
) {
    let hd = d / heads;
    let scale = T::one() / T::from_usize(hd).unwrap().sqrt();
    let mut datt = vec![T::zero(); s];
    for h in 0..heads {
        for i in 0..s {
            let last = if causal { i } else { s - 1 };
            let row = &att[(h * s + i) * s..(h * s + i + 1) * s];
            let dy = &dout[i * d + h * hd..i * d + (h + 1) * hd];
            let mut weighted = T::zero();
            for j in 0..=last {
                let vo = j * 3 * d + 2 * d + h * hd;
                datt[j] = dot(dy, &qkv[vo..vo + hd]);
                weighted = weighted + row[j] * datt[j];
                axpy(&mut dqkv[vo..vo + hd], row[j], dy);
            }
            let qo = i * 3 * d + h * hd;
            for j in 0..=last {
                let ds = row[j] * (datt[j] - weighted) * scale;
                if ds == T::zero() {
                    continue;
                }
                let ko = j * 3 * d + d + h * hd;
                // q_i and k_j never alias: they live in different thirds of a row.
                let (dq, dk) = if qo < ko {
                    let (a, b) = dqkv.split_at_mut(ko);
                    (&mut a[qo..qo + hd], &mut b[..hd])
                } else {
                    let (a, b) = dqkv.split_at_mut(qo);
                    (&mut b[..hd], &mut a[ko..ko + hd])
                };
                axpy(dq, ds, &qkv[ko..ko + hd]);
                axpy(dk, ds, &qkv[qo..qo + hd]);
            }
        }
    }
}

/// Softmax of one row, computed in f64.
pub(crate) fn softmax_row<T: Real>(logits: &[T]) -> Vec<f64> {
    let max = logits
        .iter()
        .map(|x| x.to_f64().unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits
        .iter()
        .map(|x| (x.to_f64().unwrap() - max).exp())
        .collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..19).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..19).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-9);
    }

    #[test]
    fn gelu_derivative() {
        let xs = [-3.0, -0.7, 0.0, 0.4, 2.5];
        for &x in &xs {
            let f = |v: &[f64]| {
                let mut o = [0.0];
                gelu_forward(&mut o, v);
                o[0]
            };
            let mut d = [0.0];
            gelu_backward(&mut d, &[x], &[1.0]);
            assert!((d[0] - fd(f, &[x])[0]).abs() < 1e-7);
        }
    }

    #[test]
    fn layernorm_gradient() {
        let x = [0.3, -1.2, 2.0, 0.5];
        let g = [1.0, 0.5, -0.3, 2.0];
        let b = [0.1, 0.0, 0.2, -0.1];
        let w = [0.7, -0.2, 0.4, 1.1];
        let f = |v: &[f64]| {
            let mut o = [0.0; 4];
            let (mut m, mut r) = ([0.0], [0.0]);
            layernorm_forward(&mut o, &mut m, &mut r, v, &g, &b);
            o.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut o = [0.0; 4];
        let (mut m, mut r) = ([0.0], [0.0]);
        layernorm_forward(&mut o, &mut m, &mut r, &x, &g, &b);
        let (mut dx, mut dg, mut db) = ([0.0; 4], [0.0; 4], [0.0; 4]);
        layernorm_backward(&mut dx, &mut dg, &mut db, &w, &x, &g, &m, &r);
        for (a, n) in dx.iter().zip(fd(f, &x)) {
            assert!((a - n).abs() < 1e-6, "{a} vs {n}");
        }
    }

    #[test]
    fn attention_rows_are_distributions() {
        let (s, d, heads) = (3, 4, 2);
        let qkv: Vec<f64> = (0..s * 3 * d).map(|i| ((i * 7) % 5) as f64 * 0.3 - 0.6).collect();
        let mut out = vec![0.0; s * d];
        let mut att = vec![0.0; heads * s * s];
        attention_forward(&mut out, &mut att, &qkv, s, d, heads, true);
        for h in 0..heads {
            for i in 0..s {
                let row = &att[(h * s + i) * s..(h * s + i + 1) * s];
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(row[i + 1..].iter().all(|&p| p == 0.0));
            }
        }
    }
}
