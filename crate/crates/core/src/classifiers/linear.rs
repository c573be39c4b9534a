//! Logistic regression and the Gaussian generative classifiers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Linear {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Linear {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

/// Penalized negative log-likelihood `||w||^2 / 2 + C * sum(logloss)` and its
/// gradient; the last parameter is the unpenalized intercept. `y` is 0/1.
pub(crate) fn lr_objective(x: &[Vec<f64>], y: &[f64], c: f64, beta: &[f64]) -> (f64, Vec<f64>) {
    let d = x[0].len();
    let mut f = 0.5 * beta[..d].iter().map(|w| w * w).sum::<f64>();
    let mut g: Vec<f64> = beta[..d].to_vec();
    g.push(0.0);
    for (xi, &yi) in x.iter().zip(y) {
        let z = xi.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + beta[d];
        f += c * (softplus(z) - yi * z);
        let r = c * (sigmoid(z) - yi);
        for j in 0..d {
            g[j] += r * xi[j];
        }
        g[d] += r;
    }
    (f, g)
}

/// Damped Newton iterations until the gradient norm drops below 1e-6.
pub(crate) fn train_lr(x: &[Vec<f64>], y: &[f64], c: f64, max_iter: usize) -> Linear {
    let d = x[0].len();
    let p = d + 1;
    let mut beta = vec![0.0; p];
    let (mut f, mut g) = lr_objective(x, y, c, &beta);
    for _ in 0..max_iter {
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm < 1e-6 {
            break;
        }
        let mut h = DMatrix::<f64>::zeros(p, p);
        for j in 0..d {
            h[(j, j)] = 1.0;
        }
        for xi in x {
            let z = xi.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + beta[d];
            let s = sigmoid(z);
            let w = c * s * (1.0 - s);
            for a in 0..p {
                let xa = if a < d { xi[a] } else { 1.0 };
                for b in a..p {
                    let xb = if b < d { xi[b] } else { 1.0 };
                    h[(a, b)] += w * xa * xb;
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
            h[(a, a)] += 1e-12;
        }
        let gv = DVector::from_vec(g.clone());
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&gv),
            None => h.lu().solve(&gv).unwrap_or_else(|| gv.clone()),
        };
        let slope: f64 = step.iter().zip(&g).map(|(s, gi)| s * gi).sum();
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b - t * s).collect();
            let (fc, gc) = lr_objective(x, y, c, &cand);
            if fc <= f - 1e-4 * t * slope || t < 1e-10 {
                beta = cand;
                f = fc;
                g = gc;
                break;
            }
            t *= 0.5;
        }
    }
    Linear {
        weights: beta[..d].to_vec(),
        bias: beta[d],
    }
}

fn class_means(x: &[Vec<f64>], y: &[f64]) -> [(Vec<f64>, usize); 2] {
    let d = x[0].len();
    let mut out = [(vec![0.0; d], 0usize), (vec![0.0; d], 0usize)];
    for (xi, &yi) in x.iter().zip(y) {
        let k = yi as usize;
        out[k].1 += 1;
        for j in 0..d {
            out[k].0[j] += xi[j];
        }
    }
    for (m, n) in out.iter_mut() {
        for v in m.iter_mut() {
            *v /= *n as f64;
        }
    }
    out
}

fn scatter(x: &[Vec<f64>], y: &[f64], class: Option<usize>, means: &[(Vec<f64>, usize); 2]) -> DMatrix<f64> {
    let d = x[0].len();
    let mut s = DMatrix::<f64>::zeros(d, d);
    for (xi, &yi) in x.iter().zip(y) {
        let k = yi as usize;
        if class.is_some_and(|c| c != k) {
            continue;
        }
        let m = &means[k].0;
        for a in 0..d {
            let da = xi[a] - m[a];
            for b in a..d {
                s[(a, b)] += da * (xi[b] - m[b]);
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            s[(a, b)] = s[(b, a)];
        }
    }
    s
}

fn solve_spd(m: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    match m.clone().cholesky() {
        Some(ch) => ch.solve(v),
        None => m.clone().lu().solve(v).unwrap_or_else(|| DVector::zeros(v.len())),
    }
}

/// Pooled-covariance discriminant; reduces to a linear score.
pub(crate) fn train_lda(x: &[Vec<f64>], y: &[f64], ridge: f64) -> (Linear, [Vec<f64>; 2]) {
    let d = x[0].len();
    let means = class_means(x, y);
    let mut cov = scatter(x, y, None, &means) / x.len() as f64;
    for a in 0..d {
        cov[(a, a)] += ridge;
    }
    let diff = DVector::from_iterator(d, (0..d).map(|j| means[1].0[j] - means[0].0[j]));
    let w = solve_spd(&cov, &diff);
    let mid: f64 = (0..d).map(|j| 0.5 * (means[1].0[j] + means[0].0[j]) * w[j]).sum();
    let prior = (means[1].1 as f64 / means[0].1 as f64).ln();
    (
        Linear {
            weights: w.iter().copied().collect(),
            bias: prior - mid,
        },
        [means[0].0.clone(), means[1].0.clone()],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct GaussianClass {
    pub mean: Vec<f64>,
    /// Row-major inverse covariance.
    pub precision: Vec<f64>,
    pub log_det: f64,
    pub log_prior: f64,
}

impl GaussianClass {
    fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        let mut q = 0.0;
        for a in 0..d {
            let da = x[a] - self.mean[a];
            let mut row = 0.0;
            for b in 0..d {
                row += self.precision[a * d + b] * (x[b] - self.mean[b]);
            }
            q += da * row;
        }
        self.log_prior - 0.5 * self.log_det - 0.5 * q
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Qda {
    pub classes: [GaussianClass; 2],
}

impl Qda {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.classes[1].log_density(x) - self.classes[0].log_density(x)
    }
}

/// Per-class covariance (unbiased, plus ridge); a class with a single row
/// uses the ridge alone.
pub(crate) fn train_qda(x: &[Vec<f64>], y: &[f64], ridge: f64) -> Qda {
    let d = x[0].len();
    let means = class_means(x, y);
    let n = x.len() as f64;
    let class = |k: usize| {
        let nk = means[k].1 as f64;
        let mut cov = scatter(x, y, Some(k), &means) / (nk - 1.0).max(1.0);
        for a in 0..d {
            cov[(a, a)] += ridge;
        }
        let (precision, log_det) = match cov.clone().cholesky() {
            Some(ch) => {
                let ld = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                (ch.inverse(), ld)
            }
            None => {
                let ld = cov.determinant().abs().max(f64::MIN_POSITIVE).ln();
                (cov.try_inverse().unwrap_or_else(|| DMatrix::identity(d, d)), ld)
            }
        };
        GaussianClass {
            mean: means[k].0.clone(),
            precision: precision.transpose().iter().copied().collect(),
            log_det,
            log_prior: (nk / n).ln(),
        }
    };
    Qda {
        classes: [class(0), class(1)],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct NaiveBayes {
    pub means: [Vec<f64>; 2],
    pub vars: [Vec<f64>; 2],
    pub log_priors: [f64; 2],
}

impl NaiveBayes {
    pub fn decision(&self, x: &[f64]) -> f64 {
        let ll = |k: usize| {
            self.log_priors[k]
                + x.iter()
                    .zip(&self.means[k])
                    .zip(&self.vars[k])
                    .map(|((v, m), s2)| -0.5 * (2.0 * std::f64::consts::PI * s2).ln() - (v - m) * (v - m) / (2.0 * s2))
                    .sum::<f64>()
        };
        ll(1) - ll(0)
    }
}

/// Per-class Gaussians; every variance is padded by `smoothing` times the
/// largest feature variance of the whole training set.
pub(crate) fn train_gnb(x: &[Vec<f64>], y: &[f64], smoothing: f64) -> NaiveBayes {
    let d = x[0].len();
    let n = x.len() as f64;
    let means = class_means(x, y);
    let max_var = (0..d)
        .map(|j| {
            let m = x.iter().map(|r| r[j]).sum::<f64>() / n;
            x.iter().map(|r| (r[j] - m) * (r[j] - m)).sum::<f64>() / n
        })
        .fold(0.0, f64::max);
    let eps = (smoothing * max_var).max(f64::MIN_POSITIVE);
    let var = |k: usize| -> Vec<f64> {
        (0..d)
            .map(|j| {
                let m = means[k].0[j];
                let (s, c) = x
                    .iter()
                    .zip(y)
                    .filter(|(_, yi)| **yi as usize == k)
                    .fold((0.0, 0usize), |(s, c), (r, _)| (s + (r[j] - m) * (r[j] - m), c + 1));
                s / c as f64 + eps
            })
            .collect()
    };
    NaiveBayes {
        means: [means[0].0.clone(), means[1].0.clone()],
        vars: [var(0), var(1)],
        log_priors: [(means[0].1 as f64 / n).ln(), (means[1].1 as f64 / n).ln()],
    }
}
