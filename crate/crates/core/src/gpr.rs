//! Heteroscedastic Gaussian process regression with fixed per-point noise.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::env::SimRng;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    SquaredExponential,
    Matern12,
    Matern32,
    Matern52,
}

/// Stationary covariance function with signal std-dev `sigma_c` and length scale `l`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub kind: KernelKind,
    pub sigma_c: f64,
    pub l: f64,
}

impl Kernel {
    pub fn new(kind: KernelKind, sigma_c: f64, l: f64) -> Result<Self> {
        if !(sigma_c > 0.0 && l > 0.0) || !sigma_c.is_finite() || !l.is_finite() {
            return Err(Error::InvalidParameter(format!("kernel needs sigma_c > 0 and l > 0, got {sigma_c}, {l}")));
        }
        Ok(Kernel { kind, sigma_c, l })
    }

    /// Covariance at distance `r`.
    pub fn at_distance(&self, r: f64) -> f64 {
        let s2 = self.sigma_c * self.sigma_c;
        let x = r / self.l;
        match self.kind {
            KernelKind::SquaredExponential => s2 * (-0.5 * x * x).exp(),
            KernelKind::Matern12 => s2 * (-x).exp(),
            KernelKind::Matern32 => {
                let z = 3f64.sqrt() * x;
                s2 * (1.0 + z) * (-z).exp()
            }
            KernelKind::Matern52 => {
                let z = 5f64.sqrt() * x;
                s2 * (1.0 + z + z * z / 3.0) * (-z).exp()
            }
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::InvalidParameter(format!("kernel arguments of dimension {} and {}", a.len(), b.len())));
        }
        Ok(self.at_distance(dist(a, b)))
    }

    pub fn gram(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        let n = points.len();
        DMatrix::from_fn(n, n, |i, j| self.at_distance(dist(&points[i], &points[j])))
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Affine map to zero mean and unit sample variance, frozen from the initial data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub scale: f64,
}

impl Standardization {
    pub const IDENTITY: Standardization = Standardization { mean: 0.0, scale: 1.0 };

    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::IDENTITY;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        let scale = var.sqrt();
        if !(scale > 0.0) || !scale.is_finite() {
            log::warn!("sample standard deviation is {scale}; using scale 1");
            return Standardization { mean, scale: 1.0 };
        }
        Standardization { mean, scale }
    }

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.mean) / self.scale
    }

    pub fn inverse(&self, v: f64) -> f64 {
        v * self.scale + self.mean
    }

    pub fn forward_noise(&self, tau_sq: f64) -> f64 {
        tau_sq / (self.scale * self.scale)
    }
}

/// Design points with estimated values and their noise variances.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GprDataset {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub noises: Vec<f64>,
}

impl GprDataset {
    pub fn push(&mut self, k: Vec<f64>, value: f64, tau_sq: f64) {
        self.points.push(k);
        self.values.push(value);
        self.noises.push(tau_sq);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.points.first().map(Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if self.values.len() != n || self.noises.len() != n {
            return Err(Error::InvalidParameter("dataset columns differ in length".into()));
        }
        if let Some(d) = self.dim() {
            if self.points.iter().any(|p| p.len() != d) {
                return Err(Error::InvalidParameter("dataset points differ in dimension".into()));
            }
        }
        if self.values.iter().chain(self.points.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset"));
        }
        if self.noises.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(Error::InvalidParameter("noise variances must be finite and >= 0".into()));
        }
        Ok(())
    }

    fn standardized(&self, s: &Standardization) -> (DVector<f64>, Vec<f64>) {
        (
            DVector::from_iterator(self.len(), self.values.iter().map(|&v| s.forward(v))),
            self.noises.iter().map(|&t| s.forward_noise(t)).collect(),
        )
    }
}

/// Cholesky factor of `Σ + diag(τ²)`, adding jitter on failure.
fn factor(kernel: &Kernel, points: &[Vec<f64>], noises: &[f64]) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut k = kernel.gram(points);
    for (i, t) in noises.iter().enumerate() {
        k[(i, i)] += t;
    }
    if let Some(c) = Cholesky::new(k.clone()) {
        return Ok((c, 0.0));
    }
    let s2 = kernel.sigma_c * kernel.sigma_c;
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-9) {
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += jitter * s2;
        }
        if let Some(c) = Cholesky::new(kj) {
            log::debug!("covariance factorized with jitter {jitter:e}");
            return Ok((c, jitter * s2));
        }
        jitter *= 10.0;
    }
    Err(Error::Factorization(format!("covariance of {} points is not positive definite", points.len())))
}

/// Posterior of the process given a dataset; immutable once built.
#[derive(Clone, Debug)]
pub struct GprPosterior {
    kernel: Kernel,
    standardization: Standardization,
    points: Vec<Vec<f64>>,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl GprPosterior {
    /// Conditions a zero-mean prior (on standardized values) on `data`.
    pub fn fit(data: &GprDataset, kernel: Kernel, standardization: Standardization) -> Result<Self> {
        data.validate()?;
        let (y, noises) = data.standardized(&standardization);
        let (chol, alpha, jitter) = if data.is_empty() {
            (None, DVector::zeros(0), 0.0)
        } else {
            let (c, j) = factor(&kernel, &data.points, &noises)?;
            let a = c.solve(&y);
            (Some(c), a, j)
        };
        Ok(GprPosterior {
            kernel,
            standardization,
            points: data.points.clone(),
            chol,
            alpha,
            jitter,
        })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Jitter added to the diagonal, zero if none was needed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn check(&self, k: &[f64]) -> Result<()> {
        match self.points.first() {
            Some(p) if p.len() != k.len() => Err(Error::InvalidParameter(format!(
                "query of dimension {} for data of dimension {}",
                k.len(),
                p.len()
            ))),
            _ => Ok(()),
        }
    }

    /// Standardized mean and std-dev at `k`.
    pub fn predict_standardized(&self, k: &[f64]) -> Result<(f64, f64)> {
        self.check(k)?;
        let prior = self.kernel.sigma_c * self.kernel.sigma_c;
        let Some(chol) = &self.chol else {
            return Ok((0.0, prior.sqrt()));
        };
        let cross = DVector::from_iterator(self.points.len(), self.points.iter().map(|p| self.kernel.at_distance(dist(p, k))));
        let mean = cross.dot(&self.alpha);
        let v = chol.l().solve_lower_triangular(&cross).ok_or_else(|| Error::Factorization("triangular solve".into()))?;
        let var = (prior - v.norm_squared()).max(0.0);
        Ok((mean, var.sqrt()))
    }

    /// Mean and std-dev at `k` on the original scale.
    pub fn predict(&self, k: &[f64]) -> Result<(f64, f64)> {
        let (m, s) = self.predict_standardized(k)?;
        Ok((self.standardization.inverse(m), s * self.standardization.scale))
    }

    /// Mean only; cheaper than [`predict`](Self::predict).
    pub fn mean(&self, k: &[f64]) -> Result<f64> {
        self.check(k)?;
        let m: f64 = self.points.iter().zip(self.alpha.iter()).map(|(p, a)| a * self.kernel.at_distance(dist(p, k))).sum();
        Ok(self.standardization.inverse(m))
    }

    pub fn std_dev(&self, k: &[f64]) -> Result<f64> {
        Ok(self.predict(k)?.1)
    }
}

/// Log marginal likelihood of the standardized data under `kernel`.
pub fn log_marginal_likelihood(data: &GprDataset, kernel: &Kernel, standardization: &Standardization) -> Result<f64> {
    data.validate()?;
    let n = data.len();
    if n == 0 {
        return Ok(0.0);
    }
    let (y, noises) = data.standardized(standardization);
    let (chol, _) = factor(kernel, &data.points, &noises)?;
    let alpha = chol.solve(&y);
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let v = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * LN_2PI;
    if !v.is_finite() {
        return Err(Error::NonFinite("log marginal likelihood"));
    }
    Ok(v)
}

/// Multi-start settings for [`fit_hyperparameters`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    pub starts: usize,
    /// Starts are log-uniform over `[scale / range, scale * range]`.
    pub range: f64,
    /// Simplex std-dev tolerance in log-parameters.
    pub tol: f64,
    pub max_iters: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { starts: 10, range: 100.0, tol: 1e-6, max_iters: 1000 }
    }
}

/// Median of pairwise distances, the natural length scale of a point set.
pub fn median_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut d: Vec<f64> = Vec::new();
    for i in 0..points.len() {
        for j in 0..i {
            d.push(dist(&points[i], &points[j]));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d[d.len() / 2];
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

struct NegLml<'a> {
    data: &'a GprDataset,
    standardization: &'a Standardization,
    kind: KernelKind,
    lo: [f64; 2],
    hi: [f64; 2],
}

impl NegLml<'_> {
    fn value(&self, p: &[f64]) -> f64 {
        if p.iter().zip(self.lo.iter().zip(&self.hi)).any(|(x, (l, h))| !(x >= l && x <= h)) {
            return f64::INFINITY;
        }
        let k = Kernel { kind: self.kind, sigma_c: p[0].exp(), l: p[1].exp() };
        match log_marginal_likelihood(self.data, &k, self.standardization) {
            Ok(v) => -v,
            Err(_) => f64::INFINITY,
        }
    }
}

impl CostFunction for NegLml<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.value(p))
    }
}

/// Maximizes the log marginal likelihood over `(sigma_c, l)` by Nelder-Mead from several starts.
pub fn fit_hyperparameters(
    data: &GprDataset,
    standardization: &Standardization,
    kind: KernelKind,
    opts: &FitOptions,
    seed: u64,
) -> Result<Kernel> {
    data.validate()?;
    if data.len() < 3 {
        return Err(Error::InsufficientData(format!("hyperparameter fit needs >= 3 points, got {}", data.len())));
    }
    if !(opts.range > 1.0) || opts.starts == 0 {
        return Err(Error::InvalidParameter("fit needs range > 1 and at least one start".into()));
    }
    let scale = [0.0, median_pairwise_distance(&data.points).ln()];
    let w = opts.range.ln();
    let problem = NegLml {
        data,
        standardization,
        kind,
        lo: [scale[0] - 2.0 * w, scale[1] - 2.0 * w],
        hi: [scale[0] + 2.0 * w, scale[1] + 2.0 * w],
    };
    let mut rng = SimRng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for s in 0..opts.starts {
        let x0 = if s == 0 {
            scale.to_vec()
        } else {
            scale.iter().map(|c| c + rng.random_range(-w..w)).collect::<Vec<_>>()
        };
        if !problem.value(&x0).is_finite() {
            continue;
        }
        let simplex = vec![x0.clone(), vec![x0[0] + 0.5, x0[1]], vec![x0[0], x0[1] + 0.5]];
        let solver = match NelderMead::new(simplex).with_sd_tolerance(opts.tol) {
            Ok(s) => s,
            Err(e) => return Err(Error::InvalidParameter(e.to_string())),
        };
        let res = Executor::new(
            NegLml { data, standardization, kind, lo: problem.lo, hi: problem.hi },
            solver,
        )
        .configure(|st| st.max_iters(opts.max_iters))
        .run();
        let Ok(res) = res else { continue };
        let state = res.state();
        let (Some(p), c) = (state.get_best_param(), state.get_best_cost()) else { continue };
        if c.is_finite() && best.as_ref().is_none_or(|b| c < b.0) {
            best = Some((c, p.clone()));
        }
    }
    match best {
        Some((_, p)) => Kernel::new(kind, p[0].exp(), p[1].exp()),
        None => {
            log::warn!("all hyperparameter searches failed; using unit signal and median distance");
            Kernel::new(kind, 1.0, scale[1].exp())
        }
    }
}
