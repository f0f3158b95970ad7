//! Dense kernels over row-major `f64` buffers, with their exact backward passes.

pub const LN_EPS: f64 = 1e-5;
/// Probability floor applied inside logarithms.
pub const PROB_EPS: f64 = 1e-12;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y += c0·x0 + c1·x1 + c2·x2 + c3·x3`, one pass over `y`.
#[inline]
fn axpy4(c: [f64; 4], x: [&[f64]; 4], y: &mut [f64]) {
    for ((((yi, a), b), d), e) in y.iter_mut().zip(x[0]).zip(x[1]).zip(x[2]).zip(x[3]) {
        *yi += ((c[0] * a + c[1] * b) + c[2] * d) + c[3] * e;
    }
}

/// `out[t] = bias + x[t] · w` with `x: rows×k`, `w: k×n`.
pub fn linear(x: &[f64], w: &[f64], bias: &[f64], rows: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(x.len(), rows * k);
    debug_assert_eq!(w.len(), k * n);
    let k4 = k / 4 * 4;
    for t in 0..rows {
        let o = &mut out[t * n..(t + 1) * n];
        o.copy_from_slice(bias);
        let xr = &x[t * k..(t + 1) * k];
        for kk in (0..k4).step_by(4) {
            axpy4(
                [xr[kk], xr[kk + 1], xr[kk + 2], xr[kk + 3]],
                [
                    &w[kk * n..(kk + 1) * n],
                    &w[(kk + 1) * n..(kk + 2) * n],
                    &w[(kk + 2) * n..(kk + 3) * n],
                    &w[(kk + 3) * n..(kk + 4) * n],
                ],
                o,
            );
        }
        for kk in k4..k {
            axpy(xr[kk], &w[kk * n..(kk + 1) * n], o);
        }
    }
}

/// Backward of [`linear`]: accumulates `dw`, `db`, and (if given) writes `dx`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    rows: usize,
    k: usize,
    n: usize,
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    for t in 0..rows {
        axpy(1.0, &dy[t * n..(t + 1) * n], db);
    }
    let r4 = rows / 4 * 4;
    for kk in 0..k {
        let dwr = &mut dw[kk * n..(kk + 1) * n];
        for t in (0..r4).step_by(4) {
            axpy4(
                [x[t * k + kk], x[(t + 1) * k + kk], x[(t + 2) * k + kk], x[(t + 3) * k + kk]],
                [
                    &dy[t * n..(t + 1) * n],
                    &dy[(t + 1) * n..(t + 2) * n],
                    &dy[(t + 2) * n..(t + 3) * n],
                    &dy[(t + 3) * n..(t + 4) * n],
                ],
                dwr,
            );
        }
        for t in r4..rows {
            axpy(x[t * k + kk], &dy[t * n..(t + 1) * n], dwr);
        }
    }
    if let Some(dx) = dx {
        for t in 0..rows {
            let dyr = &dy[t * n..(t + 1) * n];
            for kk in 0..k {
                dx[t * k + kk] = dot(dyr, &w[kk * n..(kk + 1) * n]);
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LnCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub fn layer_norm(x: &[f64], g: &[f64], b: &[f64], rows: usize, h: usize, out: &mut [f64]) -> LnCache {
    let mut cache = LnCache {
        xhat: vec![0.0; rows * h],
        rstd: vec![0.0; rows],
    };
    for t in 0..rows {
        let xr = &x[t * h..(t + 1) * h];
        let mean = xr.iter().sum::<f64>() / h as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
        let rstd = 1.0 / (var + LN_EPS).sqrt();
        cache.rstd[t] = rstd;
        for i in 0..h {
            let xh = (xr[i] - mean) * rstd;
            cache.xhat[t * h + i] = xh;
            out[t * h + i] = xh * g[i] + b[i];
        }
    }
    cache
}

/// Accumulates `dg`, `db`; adds the input gradient into `dx`.
pub fn layer_norm_backward(
    cache: &LnCache,
    g: &[f64],
    dy: &[f64],
    rows: usize,
    h: usize,
    dg: &mut [f64],
    db: &mut [f64],
    dx: &mut [f64],
) {
    let mut dxhat = vec![0.0; h];
    for t in 0..rows {
        let xh = &cache.xhat[t * h..(t + 1) * h];
        let dyr = &dy[t * h..(t + 1) * h];
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for i in 0..h {
            dg[i] += dyr[i] * xh[i];
            db[i] += dyr[i];
            dxhat[i] = dyr[i] * g[i];
            mean_d += dxhat[i];
            mean_dx += dxhat[i] * xh[i];
        }
        mean_d /= h as f64;
        mean_dx /= h as f64;
        let rstd = cache.rstd[t];
        for i in 0..h {
            dx[t * h + i] += rstd * (dxhat[i] - mean_d - xh[i] * mean_dx);
        }
    }
}

const GELU_K: f64 = 1.702;

/// Sigmoid-form GELU, `x · σ(1.702 x)`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    x * sigmoid(GELU_K * x)
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let s = sigmoid(GELU_K * x);
    s + GELU_K * x * s * (1.0 - s)
}

/// Numerically stable softmax in place.
pub fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

/// Log-softmax of `logits` into `out`.
pub fn log_softmax(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    for (o, x) in out.iter_mut().zip(logits) {
        *o = x - lse;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
