//! Loss models with per-sample gradients and clipping.
//!
//! Both losses have per-sample gradients of the form `c_n * x_n`, so the
//! hot paths work with the scalar coefficients and never materialize the
//! gradient matrix.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Relative tolerance for power iteration.
pub const SPECTRUM_TOLERANCE: f64 = 1e-10;
/// Iteration cap for power iteration.
pub const SPECTRUM_MAX_ITER: usize = 10_000;
/// Eigenvalues at or below this fraction of `m_max` count as zero.
pub const NULL_THRESHOLD: f64 = 1e-8;

/// Samples as rows, with optional `+1`/`-1` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Option<Array1<f64>>,
    row_norms: Array1<f64>,
    max_norm: f64,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Option<Array1<f64>>) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(domain(format!("dataset must be non-empty, got {n}x{d}")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(domain("features must be finite"));
        }
        if let Some(y) = &labels {
            if y.len() != n {
                return Err(domain(format!("{} labels for {n} samples", y.len())));
            }
            if let Some(bad) = y.iter().find(|v| **v != 1.0 && **v != -1.0) {
                return Err(domain(format!("labels must be +1 or -1, got {bad}")));
            }
        }
        let row_norms = features.map_axis(Axis(1), |r| r.dot(&r).sqrt());
        let max_norm = row_norms.iter().copied().fold(0.0, f64::max);
        Ok(Self { features, labels, row_norms, max_norm })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> Option<&Array1<f64>> {
        self.labels.as_ref()
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    /// Feature dimension.
    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn max_norm(&self) -> f64 {
        self.max_norm
    }

    pub fn row_norms(&self) -> &Array1<f64> {
        &self.row_norms
    }

    /// Same labels, new features.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        Self::new(features, self.labels.clone())
    }

    /// `(1/N) X^T X`, the Hessian of the quadratic loss.
    pub fn second_moment(&self) -> Array2<f64> {
        self.features.t().dot(&self.features) / self.n() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Quadratic,
    Logistic,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Quadratic => "quadratic",
            LossKind::Logistic => "logistic",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(LossKind::Quadratic),
            "logistic" => Ok(LossKind::Logistic),
            other => Err(domain(format!("unknown model '{other}'"))),
        }
    }
}

/// Hessian eigenvalue extremes of the quadratic loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spectrum {
    pub m_max: f64,
    /// Smallest eigenvalue above `NULL_THRESHOLD * m_max`.
    pub mu_min: f64,
    pub tolerance: f64,
}

impl Spectrum {
    pub fn kappa(&self) -> f64 {
        self.m_max / self.mu_min
    }

    /// `1 - mu_min / m_max`.
    pub fn gamma(&self) -> f64 {
        1.0 - self.mu_min / self.m_max
    }
}

/// A loss over a shared dataset, optionally with per-sample clipping.
#[derive(Debug, Clone)]
pub struct LossModel {
    kind: LossKind,
    data: Arc<Dataset>,
    clip: Option<f64>,
}

impl LossModel {
    pub fn new(kind: LossKind, data: Arc<Dataset>, clip: Option<f64>) -> Result<Self> {
        if let Some(c) = clip {
            if !(c > 0.0) || !c.is_finite() {
                return Err(domain(format!("clip norm must be positive and finite, got {c}")));
            }
        }
        if kind == LossKind::Logistic && data.labels().is_none() {
            return Err(domain("logistic model needs labels"));
        }
        Ok(Self { kind, data, clip })
    }

    pub fn quadratic(data: Arc<Dataset>, clip: Option<f64>) -> Result<Self> {
        Self::new(LossKind::Quadratic, data, clip)
    }

    pub fn logistic(data: Arc<Dataset>, clip: Option<f64>) -> Result<Self> {
        Self::new(LossKind::Logistic, data, clip)
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn data(&self) -> &Arc<Dataset> {
        &self.data
    }

    pub fn clip_norm(&self) -> Option<f64> {
        self.clip
    }

    pub fn dim(&self) -> usize {
        self.data.d()
    }

    fn label(&self, n: usize) -> f64 {
        self.data.labels.as_ref().map_or(1.0, |y| y[n])
    }

    /// Per-sample loss given the margin `x_n^T theta`.
    fn sample_loss(&self, n: usize, z: f64) -> f64 {
        match self.kind {
            LossKind::Quadratic => 0.5 * (z - 1.0) * (z - 1.0),
            LossKind::Logistic => softplus(-self.label(n) * z),
        }
    }

    /// Gradient coefficient: the per-sample gradient is `coef * x_n`.
    fn sample_coef(&self, n: usize, z: f64) -> f64 {
        match self.kind {
            LossKind::Quadratic => z - 1.0,
            LossKind::Logistic => {
                let y = self.label(n);
                -y * sigmoid(-y * z)
            }
        }
    }

    fn check_theta(&self, theta: ArrayView1<f64>) {
        debug_assert_eq!(theta.len(), self.dim(), "parameter dimension mismatch");
    }

    /// Mean per-sample loss.
    pub fn loss(&self, theta: ArrayView1<f64>) -> f64 {
        self.check_theta(theta);
        let x = &self.data.features;
        let total: f64 = x.outer_iter().enumerate().map(|(n, row)| self.sample_loss(n, row.dot(&theta))).sum();
        total / self.data.n() as f64
    }

    /// Unclipped per-sample gradients, one row per sample.
    pub fn per_sample_gradients(&self, theta: ArrayView1<f64>) -> Array2<f64> {
        self.check_theta(theta);
        let x = &self.data.features;
        let mut out = x.clone();
        for (n, mut row) in out.outer_iter_mut().enumerate() {
            let c = self.sample_coef(n, x.row(n).dot(&theta));
            row *= c;
        }
        out
    }

    /// Gradient of [`LossModel::loss`], without clipping.
    pub fn gradient(&self, theta: ArrayView1<f64>) -> Array1<f64> {
        self.check_theta(theta);
        let x = &self.data.features;
        let mut g = Array1::zeros(self.dim());
        for (n, row) in x.outer_iter().enumerate() {
            let c = self.sample_coef(n, row.dot(&theta));
            g.scaled_add(c, &row);
        }
        g / self.data.n() as f64
    }

    /// Mean of the clipped per-sample gradients over all samples.
    pub fn clipped_mean_gradient(&self, theta: ArrayView1<f64>) -> Array1<f64> {
        self.clipped_gradient_over(theta, 0..self.data.n())
    }

    /// Mean of the clipped per-sample gradients over `indices` (repeats allowed).
    pub fn clipped_gradient_over<I>(&self, theta: ArrayView1<f64>, indices: I) -> Array1<f64>
    where
        I: IntoIterator<Item = usize>,
    {
        self.check_theta(theta);
        let x = &self.data.features;
        let norms = &self.data.row_norms;
        let mut g = Array1::zeros(self.dim());
        let mut count = 0usize;
        for n in indices {
            let row = x.row(n);
            let mut c = self.sample_coef(n, row.dot(&theta));
            if let Some(cap) = self.clip {
                let norm = c.abs() * norms[n];
                if norm > cap {
                    c *= cap / norm;
                }
                debug_assert!(
                    c.abs() * norms[n] <= cap * (1.0 + 1e-12),
                    "clipped gradient norm {} exceeds {cap}",
                    c.abs() * norms[n]
                );
            }
            g.scaled_add(c, &row);
            count += 1;
        }
        if count > 0 {
            g /= count as f64;
        }
        g
    }

    /// Sensitivity bound for the squared loss at `theta`:
    /// `max_n sqrt(2 f(theta; x_n)) ||x_n|| / N`.
    pub fn quadratic_sensitivity_bound(&self, theta: ArrayView1<f64>) -> Result<f64> {
        if self.kind != LossKind::Quadratic {
            return Err(Error::Unsupported("sensitivity bound is defined for the quadratic loss".into()));
        }
        self.check_theta(theta);
        let x = &self.data.features;
        let max = x
            .outer_iter()
            .enumerate()
            .map(|(n, row)| (2.0 * self.sample_loss(n, row.dot(&theta))).sqrt() * self.data.row_norms[n])
            .fold(0.0, f64::max);
        Ok(max / self.data.n() as f64)
    }

    /// Per-sample Lipschitz constant, capped by the clip norm.
    pub fn lipschitz_bound(&self) -> Result<f64> {
        match (self.kind, self.clip) {
            (LossKind::Logistic, c) => Ok(c.map_or(self.data.max_norm, |c| c.min(self.data.max_norm))),
            (LossKind::Quadratic, Some(c)) => Ok(c),
            (LossKind::Quadratic, None) => {
                Err(Error::Unsupported("the quadratic loss has no global Lipschitz bound without clipping".into()))
            }
        }
    }

    /// Smoothness constant: `m_max` for the quadratic loss, `m_max / 4` for logistic.
    pub fn smoothness_bound(&self) -> Result<f64> {
        let h = self.data.second_moment();
        let m = power_iteration(&h, &[], SPECTRUM_TOLERANCE, SPECTRUM_MAX_ITER).value;
        if !(m > 0.0) {
            return Err(domain("data has rank zero"));
        }
        Ok(match self.kind {
            LossKind::Quadratic => m,
            LossKind::Logistic => m / 4.0,
        })
    }

    /// Largest and smallest nonzero eigenvalues of the quadratic Hessian.
    pub fn estimate_spectrum(&self) -> Result<Spectrum> {
        if self.kind != LossKind::Quadratic {
            return Err(Error::Unsupported("spectrum estimation needs the quadratic loss".into()));
        }
        estimate_spectrum(&self.data.second_moment())
    }

    /// Minimum-norm minimizer of the quadratic loss and its value.
    pub fn quadratic_optimum(&self) -> Result<(Array1<f64>, f64)> {
        if self.kind != LossKind::Quadratic {
            return Err(Error::Unsupported("closed-form optimum needs the quadratic loss".into()));
        }
        let h = self.data.second_moment();
        let b = self.data.features.sum_axis(Axis(0)) / self.data.n() as f64;
        let theta = conjugate_gradient(&h, &b);
        let f = self.loss(theta.view());
        Ok((theta, f))
    }
}

/// `ln(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Scales `g` down to norm `c` when it is longer. The result never exceeds
/// `c`, so clipping twice equals clipping once.
pub fn clip(g: ArrayView1<f64>, c: f64) -> Array1<f64> {
    let norm = g.dot(&g).sqrt();
    if norm <= c {
        return g.to_owned();
    }
    let mut factor = c / norm;
    loop {
        let out = g.mapv(|v| v * factor);
        if out.dot(&out).sqrt() <= c {
            return out;
        }
        factor = factor.next_down();
    }
}

pub(crate) struct Eigen {
    pub value: f64,
    pub vector: Array1<f64>,
}

fn orthogonalize(v: &mut Array1<f64>, basis: &[Array1<f64>]) {
    for b in basis {
        let p = v.dot(b);
        v.scaled_add(-p, b);
    }
}

/// Dominant eigenpair of the symmetric matrix `a` on the orthogonal
/// complement of `deflate`.
pub(crate) fn power_iteration(a: &Array2<f64>, deflate: &[Array1<f64>], tol: f64, max_iter: usize) -> Eigen {
    let d = a.nrows();
    // Fixed seed: the start vector only needs a nonzero overlap with the
    // dominant eigenvector, which a random direction has almost surely.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Array1<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    orthogonalize(&mut v, deflate);
    let norm = v.dot(&v).sqrt();
    if norm == 0.0 {
        return Eigen { value: 0.0, vector: v };
    }
    v /= norm;
    let mut lambda = f64::NAN;
    let res_tol = tol.sqrt();
    for _ in 0..max_iter {
        let mut w = a.dot(&v);
        orthogonalize(&mut w, deflate);
        let next = v.dot(&w);
        let residual = {
            let r = &w - &(&v * next);
            r.dot(&r).sqrt()
        };
        let scale = next.abs().max(f64::MIN_POSITIVE);
        let settled = (next - lambda).abs() <= tol * scale && residual <= res_tol * scale;
        lambda = next;
        let wn = w.dot(&w).sqrt();
        if wn == 0.0 {
            return Eigen { value: 0.0, vector: v };
        }
        v = w / wn;
        if settled {
            break;
        }
    }
    Eigen { value: lambda, vector: v }
}

/// Spectrum of a symmetric positive semi-definite matrix.
pub fn estimate_spectrum(h: &Array2<f64>) -> Result<Spectrum> {
    let top = power_iteration(h, &[], SPECTRUM_TOLERANCE, SPECTRUM_MAX_ITER);
    let m_max = top.value;
    if !(m_max > 0.0) {
        return Err(domain("data has rank zero"));
    }
    let d = h.nrows();
    let shifted = Array2::from_diag(&Array1::from_elem(d, m_max)) - h;
    let floor = NULL_THRESHOLD * m_max;
    let mut null: Vec<Array1<f64>> = Vec::new();
    while null.len() < d {
        let e = power_iteration(&shifted, &null, SPECTRUM_TOLERANCE, SPECTRUM_MAX_ITER);
        let rayleigh = e.vector.dot(&h.dot(&e.vector));
        if rayleigh > floor {
            let mu_min = (m_max - e.value).max(floor).min(m_max);
            return Ok(Spectrum { m_max, mu_min, tolerance: SPECTRUM_TOLERANCE });
        }
        let mut v = e.vector;
        orthogonalize(&mut v, &null);
        let n = v.dot(&v).sqrt();
        if n == 0.0 {
            break;
        }
        null.push(v / n);
    }
    // Numerically every direction looked null; fall back to the top eigenvalue.
    Ok(Spectrum { m_max, mu_min: m_max, tolerance: SPECTRUM_TOLERANCE })
}

/// Minimum-norm solution of `h x = b` for symmetric PSD `h` with `b` in its range.
fn conjugate_gradient(h: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let d = b.len();
    let mut x = Array1::zeros(d);
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    let stop = 1e-30 * rr.max(f64::MIN_POSITIVE);
    for _ in 0..(10 * d).max(50) {
        if rr <= stop {
            break;
        }
        let hp = h.dot(&p);
        let php = p.dot(&hp);
        if php <= 0.0 {
            break;
        }
        let a = rr / php;
        x.scaled_add(a, &p);
        r.scaled_add(-a, &hp);
        let next = r.dot(&r);
        p = &r + &(&p * (next / rr));
        rr = next;
    }
    x
}
