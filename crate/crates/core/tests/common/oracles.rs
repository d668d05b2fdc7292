//! Brute-force reference computations shared by the oracle tests and the
//! acceptance runner.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Log density of `N(x | mean, cov)` by explicit inverse and determinant.
pub fn log_normal(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let d = x - mean;
    let inv = cov.clone().try_inverse().expect("invertible covariance");
    -0.5 * (x.len() as f64 * LN_2PI + cov.determinant().ln() + d.dot(&(&inv * &d)))
}

/// Adaptive Simpson integration of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Same-speaker vs different-speaker log-likelihood ratio for a rank-one
/// between-speaker subspace, with the latent speaker factor integrated out
/// numerically.
pub fn llr_by_quadrature(
    mean: &DVector<f64>,
    between: &DVector<f64>,
    within: &DMatrix<f64>,
    a: &DVector<f64>,
    b: &DVector<f64>,
) -> f64 {
    // integrate exp(log-integrand - shift) so the integrand peaks near one
    let log_integrand = |x: f64, vs: &[&DVector<f64>]| {
        let centre = mean + between * x;
        vs.iter().map(|v| log_normal(v, &centre, within)).sum::<f64>() - 0.5 * (LN_2PI + x * x)
    };
    let log_marginal = |vs: &[&DVector<f64>]| {
        let grid: Vec<f64> = (-4000..=4000).map(|i| i as f64 * 0.005).collect();
        let shift = grid.iter().map(|&x| log_integrand(x, vs)).fold(f64::NEG_INFINITY, f64::max);
        let f = |x: f64| (log_integrand(x, vs) - shift).exp();
        adaptive_simpson(&f, -20.0, 20.0, 1e-13).ln() + shift
    };
    log_marginal(&[a, b]) - log_marginal(&[a]) - log_marginal(&[b])
}

/// Maximise a smooth concave function by Newton steps on central-difference
/// gradients and Hessians.
pub fn newton_maximise(f: &dyn Fn(&DVector<f64>) -> f64, start: DVector<f64>, iters: usize) -> DVector<f64> {
    let n = start.len();
    let h = 1e-3;
    let mut x = start;
    for _ in 0..iters {
        let mut g = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut p = x.clone();
            p[i] += h;
            let mut m = x.clone();
            m[i] -= h;
            g[i] = (f(&p) - f(&m)) / (2.0 * h);
            for j in 0..n {
                let shift = |si: f64, sj: f64| {
                    let mut y = x.clone();
                    y[i] += si * h;
                    y[j] += sj * h;
                    f(&y)
                };
                hess[(i, j)] = (shift(1.0, 1.0) - shift(1.0, -1.0) - shift(-1.0, 1.0) + shift(-1.0, -1.0)) / (4.0 * h * h);
            }
        }
        let step = hess.lu().solve(&g).expect("non-singular Hessian");
        x -= step;
    }
    x
}

/// Log posterior (up to a constant) of a latent `w` given frames and their
/// component responsibilities: `sum_t sum_c g_tc log N(x_t | m_c + T_c w, S_c) + log N(w | 0, I)`.
pub fn ivector_log_posterior(
    w: &DVector<f64>,
    frames: &DMatrix<f64>,
    resp: &DMatrix<f64>,
    means: &DMatrix<f64>,
    covs: &[DMatrix<f64>],
    t: &DMatrix<f64>,
) -> f64 {
    let d = means.ncols();
    let mut total = -0.5 * w.dot(w);
    for c in 0..means.nrows() {
        let centre = means.row(c).transpose() + t.rows(c * d, d) * w;
        for f in 0..frames.nrows() {
            let g = resp[(f, c)];
            if g > 0.0 {
                total += g * log_normal(&frames.row(f).transpose(), &centre, &covs[c]);
            }
        }
    }
    total
}

/// `(P_fa, P_miss)` at every midpoint threshold, recounted from scratch.
pub fn brute_det(scores: &[f64], targets: &[bool]) -> Vec<(f64, f64)> {
    let mut distinct = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut thresholds = vec![f64::NEG_INFINITY];
    for w in distinct.windows(2) {
        thresholds.push(0.5 * (w[0] + w[1]));
    }
    thresholds.push(f64::INFINITY);
    let nt = targets.iter().filter(|&&x| x).count() as f64;
    let nn = targets.len() as f64 - nt;
    thresholds
        .iter()
        .map(|&th| {
            let mut miss = 0.0;
            let mut fa = 0.0;
            for (s, &tar) in scores.iter().zip(targets) {
                if tar && *s < th {
                    miss += 1.0;
                }
                if !tar && *s >= th {
                    fa += 1.0;
                }
            }
            (fa / nn, miss / nt)
        })
        .collect()
}

/// Crossing of the miss and false-alarm curves, interpolated between the
/// two sweep points that bracket it.
pub fn brute_eer(scores: &[f64], targets: &[bool]) -> f64 {
    let pts = brute_det(scores, targets);
    for w in pts.windows(2) {
        let (fa0, m0) = w[0];
        let (fa1, m1) = w[1];
        if m0 == fa0 {
            return m0;
        }
        if m0 < fa0 && m1 >= fa1 {
            if m1 == fa1 {
                return m1;
            }
            let t = (fa0 - m0) / ((m1 - m0) - (fa1 - fa0));
            return m0 + t * (m1 - m0);
        }
    }
    unreachable!("the sweep ends at miss = 1, fa = 0")
}

pub fn brute_min_dcf(scores: &[f64], targets: &[bool], c_miss: f64, c_fa: f64, p_target: f64) -> f64 {
    let norm = (c_miss * p_target).min(c_fa * (1.0 - p_target));
    brute_det(scores, targets)
        .iter()
        .map(|&(fa, m)| (c_miss * m * p_target + c_fa * fa * (1.0 - p_target)) / norm)
        .fold(f64::INFINITY, f64::min)
}

/// Vectors stacked as matrix columns, one matrix per distinct speaker in
/// first-seen order.
fn speaker_blocks(vectors: &[DVector<f64>], speakers: &[String]) -> Vec<DMatrix<f64>> {
    let mut order: Vec<&String> = Vec::new();
    for s in speakers {
        if !order.contains(&s) {
            order.push(s);
        }
    }
    order
        .iter()
        .map(|name| {
            let cols: Vec<DVector<f64>> =
                vectors.iter().zip(speakers).filter(|(_, s)| s == name).map(|(v, _)| v.clone()).collect();
            DMatrix::from_columns(&cols)
        })
        .collect()
}

/// Average over speakers of the trace of the centred scatter `X H X^T / n`.
pub fn mean_variance_oracle(vectors: &[DVector<f64>], speakers: &[String]) -> f64 {
    let blocks = speaker_blocks(vectors, speakers);
    let total: f64 = blocks
        .iter()
        .map(|x| {
            let n = x.ncols();
            let h = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
            (x * h * x.transpose()).trace() / n as f64
        })
        .sum();
    total / blocks.len() as f64
}

/// `||S - L||_F^2 / n` with pairs as columns.
pub fn d_sl_oracle(short: &[DVector<f64>], long: &[DVector<f64>]) -> f64 {
    let diff = DMatrix::from_columns(short) - DMatrix::from_columns(long);
    diff.norm_squared() / short.len() as f64
}

/// `Tr((S_b + S_w)^-1 S_b)` by explicit inverse.
pub fn j_ratio_oracle(vectors: &[DVector<f64>], speakers: &[String]) -> f64 {
    let blocks = speaker_blocks(vectors, speakers);
    let k = blocks.len() as f64;
    let r = vectors[0].len();
    let mut sw = DMatrix::zeros(r, r);
    let mut means = DMatrix::zeros(r, blocks.len());
    for (j, x) in blocks.iter().enumerate() {
        let n = x.ncols();
        let h = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
        sw += x * h * x.transpose() / n as f64;
        means.set_column(j, &(x.column_sum() / n as f64));
    }
    sw /= k;
    let hk = DMatrix::identity(blocks.len(), blocks.len()) - DMatrix::from_element(blocks.len(), blocks.len(), 1.0 / k);
    let sb = &means * hk * means.transpose() / k;
    ((&sb + &sw).try_inverse().expect("invertible total scatter") * sb).trace()
}
