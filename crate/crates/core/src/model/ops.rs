use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2, Axis, Zip};
use rand::Rng;

pub(crate) const LN_EPS: f64 = 1e-12;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// GELU, tanh form.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub(crate) struct LnCache {
    pub xhat: Array2<f64>,
    pub rstd: Array1<f64>,
}

pub(crate) fn layer_norm(
    x: &Array2<f64>,
    gamma: &Array2<f64>,
    beta: &Array2<f64>,
) -> (Array2<f64>, LnCache) {
    let n = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / n;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / n;
        *r = 1.0 / (var + LN_EPS).sqrt();
        row *= *r;
    }
    let y = &xhat * gamma + beta;
    (y, LnCache { xhat, rstd })
}

/// Returns dx; accumulates dgamma/dbeta.
pub(crate) fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    gamma: &Array2<f64>,
    dgamma: &mut Array2<f64>,
    dbeta: &mut Array2<f64>,
) -> Array2<f64> {
    *dgamma += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    *dbeta += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let n = dy.ncols() as f64;
    let mut dx = dy * gamma;
    for ((mut row, xh), r) in dx
        .rows_mut()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(cache.rstd.iter())
    {
        let mean_d = row.sum() / n;
        let mean_dx = row.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
        Zip::from(&mut row)
            .and(&xh)
            .for_each(|d, &h| *d = (*d - mean_d - h * mean_dx) * r);
    }
    dx
}

/// In-place row softmax; entries equal to -inf become exactly 0.
pub(crate) fn softmax_rows(mut s: ArrayViewMut2<f64>) {
    for mut row in s.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        row.mapv_inplace(|v| {
            let e = (v - max).exp();
            sum += e;
            e
        });
        row /= sum;
    }
}

/// Cross entropy of one row of logits against `target`; returns (loss, dlogits).
pub(crate) fn cross_entropy(logits: ndarray::ArrayView1<f64>, target: usize) -> (f64, Array1<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p = logits.mapv(|v| (v - max).exp());
    let sum = p.sum();
    p /= sum;
    let loss = -(logits[target] - max - sum.ln());
    p[target] -= 1.0;
    (loss, p)
}

/// Inverted dropout mask (kept entries scaled by 1/(1-p)), or `None` when inactive.
pub(crate) fn dropout_mask<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    p: f64,
    rng: Option<&mut R>,
) -> Option<Array2<f64>> {
    match rng {
        Some(rng) if p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            Some(Array2::from_shape_simple_fn((rows, cols), || {
                if rng.gen::<f64>() < p {
                    0.0
                } else {
                    keep
                }
            }))
        }
        _ => None,
    }
}

pub(crate) fn affine(x: &ArrayView2<f64>, w: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    x.dot(w) + b
}

pub(crate) fn all_finite(a: &Array2<f64>) -> bool {
    a.iter().all(|v| v.is_finite())
}
