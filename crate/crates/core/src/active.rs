//! Active learning of a superlevel set `{k : E[u(Q_k)] >= γ}`: uniform start,
//! acquisition-driven rejection sampling, GPR refits, credible bands and
//! sandwich error bounds.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use sobol::params::JoeKuoD6;
use sobol::Sobol;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::env::SimRng;
use crate::error::{Error, Result};
use crate::evaluation::{sequential_mc, SamplingPlan, SequentialEstimate, UtilityFn};
use crate::gpr::{fit_hyperparameters, FitOptions, GprDataset, GprPosterior, Kernel, KernelKind, Standardization};
use crate::parallel;

fn std_normal() -> Normal {
    Normal::standard()
}

/// Axis-aligned box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DesignBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidParameter("box bounds must be non-empty and of equal length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::InvalidParameter("box needs finite lower < upper on every axis".into()));
        }
        Ok(DesignBox { lower, upper })
    }

    pub fn unit(dim: usize) -> Self {
        DesignBox { lower: vec![0.0; dim], upper: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    pub fn contains(&self, k: &[f64]) -> bool {
        k.len() == self.dim() && k.iter().zip(self.lower.iter().zip(&self.upper)).all(|(x, (l, u))| l <= x && x <= u)
    }

    /// Maps a point of the unit cube into the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(self.lower.iter().zip(&self.upper)).map(|(x, (l, h))| l + x * (h - l)).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, h)| l + rng.random::<f64>() * (h - l)).collect()
    }
}

/// A fixed prefix of the Sobol sequence in the unit cube, reused across iterations.
#[derive(Clone, Debug)]
pub struct SobolStream {
    dim: usize,
    points: Vec<Vec<f64>>,
}

impl SobolStream {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if dim == 0 || dim > 100 {
            return Err(Error::InvalidParameter(format!("Sobol dimension {dim} outside 1..=100")));
        }
        let params = JoeKuoD6::minimal();
        let points: Vec<Vec<f64>> = Sobol::<f64>::new(dim, &params).take(n).collect();
        if points.len() < n {
            return Err(Error::InvalidParameter(format!("Sobol sequence exhausted before {n} points")));
        }
        Ok(SobolStream { dim, points })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn unit_points(&self) -> &[Vec<f64>] {
        &self.points
    }
}

/// Mean and std-dev of a fitted surrogate.
pub trait Surrogate: Sync {
    fn predict(&self, k: &[f64]) -> Result<(f64, f64)>;

    fn mean(&self, k: &[f64]) -> Result<f64> {
        Ok(self.predict(k)?.0)
    }
}

impl Surrogate for GprPosterior {
    fn predict(&self, k: &[f64]) -> Result<(f64, f64)> {
        GprPosterior::predict(self, k)
    }

    fn mean(&self, k: &[f64]) -> Result<f64> {
        GprPosterior::mean(self, k)
    }
}

impl<S: Surrogate + ?Sized> Surrogate for &S {
    fn predict(&self, k: &[f64]) -> Result<(f64, f64)> {
        (**self).predict(k)
    }

    fn mean(&self, k: &[f64]) -> Result<f64> {
        (**self).mean(k)
    }
}

/// Surrogate given by a closure, for tests and analytic posteriors.
pub struct FnSurrogate<F>(pub F);

impl<F: Fn(&[f64]) -> (f64, f64) + Sync> Surrogate for FnSurrogate<F> {
    fn predict(&self, k: &[f64]) -> Result<(f64, f64)> {
        Ok((self.0)(k))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionKind {
    /// `Φ(-c2 |m - γ|)`.
    #[default]
    Plain,
    /// `Φ(-c2 |m - γ| / σ)`.
    Scaled,
}

/// Informative potential of `k`, in `[0, 1/2]`.
pub fn acquisition(m: f64, sigma: f64, gamma: f64, c2: f64, kind: AcquisitionKind) -> f64 {
    let d = (m - gamma).abs();
    let z = match kind {
        AcquisitionKind::Plain => c2 * d,
        AcquisitionKind::Scaled if sigma > 0.0 => c2 * d / sigma,
        AcquisitionKind::Scaled if d == 0.0 => 0.0,
        AcquisitionKind::Scaled => f64::INFINITY,
    };
    std_normal().cdf(-z)
}

/// Settings of one round of rejection sampling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RejectionSettings {
    pub gamma: f64,
    pub tau: f64,
    pub c1: f64,
    pub c2: f64,
    pub kind: AcquisitionKind,
    /// Trials per requested point before giving up on it.
    pub max_trials: u64,
}

/// Draws up to `n` points, each uniform on `space`, accepted with probability
/// `2 I(k)` and only where `c1 τ < σ(k)`.
///
/// Candidates are drawn in fixed-size batches and judged in parallel; the scan
/// is in draw order, so the result only depends on `rng`.
pub fn rejection_sample<S: Surrogate + ?Sized>(
    n: usize,
    surrogate: &S,
    space: &DesignBox,
    s: &RejectionSettings,
    rng: &mut SimRng,
) -> Result<Vec<Vec<f64>>> {
    const BATCH: usize = 512;
    let gate = s.c1 * s.tau;
    let accept = |k: &[f64], u: f64| -> Result<bool> {
        if s.kind == AcquisitionKind::Plain {
            // the acquisition needs only the mean; skip the variance when it already rejects
            let m = surrogate.mean(k)?;
            if u >= 2.0 * acquisition(m, 0.0, s.gamma, s.c2, s.kind) {
                return Ok(false);
            }
        }
        let (m, sigma) = surrogate.predict(k)?;
        Ok(u < 2.0 * acquisition(m, sigma, s.gamma, s.c2, s.kind) && gate < sigma)
    };
    let mut out = Vec::with_capacity(n);
    let mut skipped = 0usize;
    let mut trials = 0u64;
    while out.len() + skipped < n {
        let cands: Vec<(Vec<f64>, f64)> = (0..BATCH).map(|_| (space.sample(rng), rng.random::<f64>())).collect();
        let verdicts = parallel::map_slice(&cands, |(k, u)| accept(k, *u));
        for ((k, _), v) in cands.into_iter().zip(verdicts) {
            trials += 1;
            if v? {
                out.push(k);
                trials = 0;
            } else if trials >= s.max_trials {
                skipped += 1;
                trials = 0;
            }
            if out.len() + skipped >= n {
                break;
            }
        }
    }
    if skipped > 0 {
        log::info!("rejection sampling skipped {skipped} of {n} points after {} trials each", s.max_trials);
    }
    Ok(out)
}

/// Lower and upper band functions around the unknown mean.
pub trait Band: Sync {
    fn band(&self, k: &[f64]) -> Result<(f64, f64)>;
}

/// `m ± Φ^{-1}(1 - δ/2) σ`.
#[derive(Clone)]
pub struct PointwiseBand<S> {
    surrogate: S,
    z: f64,
}

impl<S: Surrogate> PointwiseBand<S> {
    pub fn new(surrogate: S, delta: f64) -> Result<Self> {
        Ok(PointwiseBand { surrogate, z: band_quantile(delta)? })
    }

    pub fn half_width_factor(&self) -> f64 {
        self.z
    }
}

impl<S: Surrogate> Band for PointwiseBand<S> {
    fn band(&self, k: &[f64]) -> Result<(f64, f64)> {
        let (m, s) = self.surrogate.predict(k)?;
        Ok((m - self.z * s, m + self.z * s))
    }
}

/// `Φ^{-1}(1 - δ/2)`, with `δ ∈ (0, 1]`.
pub fn band_quantile(delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidParameter(format!("band level delta must lie in (0, 1], got {delta}")));
    }
    Ok(std_normal().inverse_cdf(1.0 - delta / 2.0).max(0.0))
}

/// Pointwise band functions `(m - zσ, m + zσ)` of a surrogate.
pub fn pointwise_bands<S: Surrogate>(surrogate: S, delta: f64) -> Result<PointwiseBand<S>> {
    PointwiseBand::new(surrogate, delta)
}

/// Band on the ball `B_eps(k*)`: `m(k*) ± zσ(k*) ± L ‖k - k*‖`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalBand {
    pub center: Vec<f64>,
    pub eps: f64,
    pub lipschitz: f64,
    pub m: f64,
    pub half_width: f64,
}

impl LocalBand {
    pub fn new<S: Surrogate + ?Sized>(
        surrogate: &S,
        center: &[f64],
        lipschitz: f64,
        eps: f64,
        delta: f64,
        space: &DesignBox,
    ) -> Result<Self> {
        if !(lipschitz >= 0.0) || !(eps > 0.0) {
            return Err(Error::InvalidParameter("local band needs L >= 0 and eps > 0".into()));
        }
        let inside = center.len() == space.dim()
            && center.iter().zip(space.lower.iter().zip(&space.upper)).all(|(c, (l, u))| c - eps >= *l && c + eps <= *u);
        if !inside {
            return Err(Error::Domain(format!("ball of radius {eps} around {center:?} leaves the design space")));
        }
        let (m, s) = surrogate.predict(center)?;
        Ok(LocalBand {
            center: center.to_vec(),
            eps,
            lipschitz,
            m,
            half_width: band_quantile(delta)? * s,
        })
    }
}

impl Band for LocalBand {
    fn band(&self, k: &[f64]) -> Result<(f64, f64)> {
        if k.len() != self.center.len() {
            return Err(Error::InvalidParameter("query dimension differs from the band centre".into()));
        }
        let r = k.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if r > self.eps * (1.0 + 1e-12) {
            return Err(Error::Domain(format!("query at distance {r} outside the ball of radius {}", self.eps)));
        }
        let w = self.half_width + self.lipschitz * r;
        Ok((self.m - w, self.m + w))
    }
}

/// Band from a closure, for externally supplied (e.g. uniform) bounds.
pub struct FnBand<F>(pub F);

impl<F: Fn(&[f64]) -> (f64, f64) + Sync> Band for FnBand<F> {
    fn band(&self, k: &[f64]) -> Result<(f64, f64)> {
        Ok((self.0)(k))
    }
}

/// Inner and outer sets `{m_± >= γ}` of a band.
pub struct SandwichSets<'a, B: ?Sized> {
    band: &'a B,
    gamma: f64,
}

pub fn sandwich_sets<B: Band + ?Sized>(band: &B, gamma: f64) -> SandwichSets<'_, B> {
    SandwichSets { band, gamma }
}

impl<B: Band + ?Sized> SandwichSets<'_, B> {
    /// `(k ∈ inner, k ∈ outer)`.
    pub fn membership(&self, k: &[f64]) -> Result<(bool, bool)> {
        let (lo, hi) = self.band.band(k)?;
        if lo > hi {
            return Err(Error::Domain(format!("band order violated at {k:?}: {lo} > {hi}")));
        }
        Ok((lo >= self.gamma, hi >= self.gamma))
    }

    pub fn inner(&self, k: &[f64]) -> Result<bool> {
        Ok(self.membership(k)?.0)
    }

    pub fn outer(&self, k: &[f64]) -> Result<bool> {
        Ok(self.membership(k)?.1)
    }
}

/// `vol(D) / n Σ 1{m_+ >= γ > m_-}` over the first `n_eval` points of `sobol`.
pub fn nikodym_bound_mc<B: Band + ?Sized>(
    band: &B,
    gamma: f64,
    space: &DesignBox,
    sobol: &SobolStream,
    n_eval: usize,
) -> Result<f64> {
    if n_eval == 0 || n_eval > sobol.len() {
        return Err(Error::InvalidParameter(format!("n_eval = {n_eval} with {} Sobol points", sobol.len())));
    }
    if sobol.dim() != space.dim() {
        return Err(Error::InvalidParameter("Sobol dimension differs from the design space".into()));
    }
    let hits = parallel::map_slice(&sobol.unit_points()[..n_eval], |u| {
        let (lo, hi) = band.band(&space.from_unit(u))?;
        Ok(u64::from(hi >= gamma && gamma > lo))
    })
    .into_iter()
    .collect::<Result<Vec<u64>>>()?;
    Ok(space.volume() * hits.iter().sum::<u64>() as f64 / n_eval as f64)
}

/// Source of Monte Carlo replicates for the loop.
pub trait Simulator: Sync {
    /// Raw performance of replicate `rep` at design `k`; `point` identifies the
    /// design within the run so that every call uses its own random stream.
    fn sample(&self, k: &[f64], point: u64, rep: u64) -> Result<f64>;
}

/// Simulator from a closure.
pub struct FnSimulator<F>(pub F);

impl<F: Fn(&[f64], u64, u64) -> Result<f64> + Sync> Simulator for FnSimulator<F> {
    fn sample(&self, k: &[f64], point: u64, rep: u64) -> Result<f64> {
        (self.0)(k, point, rep)
    }
}

/// Budgets and constants of the loop. Vectors are indexed by iteration; the
/// first entry belongs to the uniform start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    pub n_initial: usize,
    pub n_loop: usize,
    /// Number of iterations including the uniform start.
    pub iterations: usize,
    /// Target noise (std-dev of the estimate) per iteration.
    pub tau: Vec<f64>,
    pub n_min: u64,
    pub n_max: Vec<u64>,
    #[serde(default = "default_c1")]
    pub c1: f64,
    /// `c2` of iteration `i` is `c2_0 * i`.
    pub c2_0: f64,
    #[serde(default = "default_c3")]
    pub c3: f64,
    #[serde(default = "default_max_trials")]
    pub max_trials: u64,
    #[serde(default)]
    pub acquisition: AcquisitionKind,
    /// Band level of the error bound.
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_n_eval")]
    pub n_eval: usize,
    /// Stop once the error bound falls below this.
    #[serde(default)]
    pub error_target: Option<f64>,
    pub kernel: KernelKind,
    #[serde(default)]
    pub fit: FitOptions,
    /// Skip the likelihood fit and use these `(sigma_c, l)` on the standardized scale.
    #[serde(default)]
    pub fixed_kernel: Option<[f64; 2]>,
}

fn default_c1() -> f64 {
    5.0
}
fn default_c3() -> f64 {
    2.0
}
fn default_max_trials() -> u64 {
    2_000
}
fn default_delta() -> f64 {
    0.05
}
fn default_n_eval() -> usize {
    2_000
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        let it = self.iterations;
        let bad = |m: &str| Err(Error::Config(format!("learning: {m}")));
        if it == 0 || self.n_initial == 0 || self.n_loop == 0 {
            return bad("iterations and point budgets must be >= 1");
        }
        if self.tau.len() != it || self.n_max.len() != it {
            return bad("tau and n_max need one entry per iteration");
        }
        if self.tau.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return bad("target noises must be positive");
        }
        if self.n_min < 2 || self.n_max.iter().any(|&n| n < self.n_min) {
            return bad("need 2 <= n_min <= n_max");
        }
        if !(self.c1 > 1.0) || !(self.c2_0 > 0.0) || !(self.c3 > 0.0) || self.max_trials == 0 {
            return bad("need c1 > 1, c2_0 > 0, c3 > 0 and max_trials >= 1");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) || self.n_eval == 0 {
            return bad("need delta in (0, 1) and n_eval >= 1");
        }
        Ok(())
    }

    pub fn c2(&self, iteration: usize) -> f64 {
        self.c2_0 * iteration as f64
    }
}

/// Estimate of one design point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointRecord {
    pub iteration: usize,
    pub point: u64,
    pub k: Vec<f64>,
    pub mu_hat: f64,
    pub tau_sq: f64,
    pub n: u64,
    pub discarded: bool,
}

/// Plug-in estimate after one iteration.
#[derive(Clone, Debug)]
pub struct LevelSetEstimate {
    pub iteration: usize,
    pub posterior: Arc<GprPosterior>,
    pub gamma: f64,
    pub delta: f64,
    /// Monte Carlo estimate of `vol(D_+ \ D_-)`.
    pub error_bound: f64,
    pub dataset_size: usize,
    /// Points proposed in this iteration (before discarding).
    pub proposed: usize,
}

impl LevelSetEstimate {
    /// `m(k) >= γ`.
    pub fn contains(&self, k: &[f64]) -> Result<bool> {
        Ok(self.posterior.mean(k)? >= self.gamma)
    }

    pub fn band(&self) -> Result<PointwiseBand<&GprPosterior>> {
        PointwiseBand::new(self.posterior.as_ref(), self.delta)
    }
}

/// Everything produced by [`run_active_learning`].
#[derive(Clone, Debug)]
pub struct LoopResult {
    pub kernel: Kernel,
    pub standardization: Standardization,
    pub estimates: Vec<LevelSetEstimate>,
    pub records: Vec<PointRecord>,
}

/// State handed to the per-iteration callback.
pub struct IterationReport<'a> {
    pub estimate: &'a LevelSetEstimate,
    pub records: &'a [PointRecord],
    pub kernel: &'a Kernel,
    pub standardization: &'a Standardization,
}

fn estimate_points<S: Simulator + ?Sized>(
    sim: &S,
    u: &UtilityFn,
    points: &[(u64, Vec<f64>)],
    plan: &SamplingPlan,
    discard: Option<f64>,
    iteration: usize,
) -> Result<Vec<PointRecord>> {
    parallel::map_slice(points, |(id, k)| {
        let est: SequentialEstimate = sequential_mc(|rep| sim.sample(k, *id, rep), u, plan, discard)?;
        Ok(PointRecord {
            iteration,
            point: *id,
            k: k.clone(),
            mu_hat: est.mu_hat,
            tau_sq: est.tau_sq,
            n: est.n,
            discarded: est.discarded,
        })
    })
    .into_iter()
    .collect()
}

fn dataset(records: &[PointRecord]) -> GprDataset {
    let mut d = GprDataset::default();
    for r in records.iter().filter(|r| !r.discarded) {
        d.push(r.k.clone(), r.mu_hat, r.tau_sq);
    }
    d
}

/// Runs the full loop. `on_iteration` sees every estimate as soon as it exists,
/// so results can be persisted even if a later iteration fails.
pub fn run_active_learning<S: Simulator + ?Sized>(
    cfg: &LoopConfig,
    space: &DesignBox,
    sim: &S,
    u: &UtilityFn,
    gamma: f64,
    seed: u64,
    on_iteration: &mut dyn FnMut(&IterationReport<'_>) -> Result<()>,
) -> Result<LoopResult> {
    cfg.validate()?;
    u.validate()?;
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let sobol = SobolStream::new(space.dim(), cfg.n_eval)?;
    let mut next_id = 0u64;
    let mut label = |pts: Vec<Vec<f64>>| -> Vec<(u64, Vec<f64>)> {
        pts.into_iter()
            .map(|k| {
                next_id += 1;
                (next_id, k)
            })
            .collect()
    };

    // uniform start
    let start = label((0..cfg.n_initial).map(|_| space.sample(&mut rng)).collect());
    let plan = SamplingPlan { tau: cfg.tau[0], n_min: cfg.n_min, n_max: cfg.n_max[0] };
    let mut records = estimate_points(sim, u, &start, &plan, None, 0)?;
    let d0 = dataset(&records);
    let standardization = Standardization::from_values(&d0.values);
    let kernel = match cfg.fixed_kernel {
        Some([s, l]) => Kernel::new(cfg.kernel, s, l)?,
        None => fit_hyperparameters(&d0, &standardization, cfg.kernel, &cfg.fit, seed)?,
    };
    log::info!("kernel {:?} sigma_c={:.4} l={:.4}", kernel.kind, kernel.sigma_c, kernel.l);

    let finish = |iteration: usize, records: &[PointRecord], proposed: usize| -> Result<LevelSetEstimate> {
        let data = dataset(records);
        let posterior = Arc::new(GprPosterior::fit(&data, kernel, standardization)?);
        let band = PointwiseBand::new(posterior.as_ref(), cfg.delta)?;
        let error_bound = nikodym_bound_mc(&band, gamma, space, &sobol, cfg.n_eval)?;
        Ok(LevelSetEstimate {
            iteration,
            posterior,
            gamma,
            delta: cfg.delta,
            error_bound,
            dataset_size: data.len(),
            proposed,
        })
    };

    let mut estimates = vec![finish(0, &records, cfg.n_initial)?];
    on_iteration(&IterationReport { estimate: &estimates[0], records: &records, kernel: &kernel, standardization: &standardization })?;

    for i in 1..cfg.iterations {
        if let (Some(target), Some(last)) = (cfg.error_target, estimates.last()) {
            if last.error_bound <= target {
                log::info!("error bound {:.4e} below target after iteration {}", last.error_bound, i - 1);
                break;
            }
        }
        let prev = estimates.last().expect("start estimate exists").posterior.clone();
        let settings = RejectionSettings {
            gamma,
            tau: cfg.tau[i],
            c1: cfg.c1,
            c2: cfg.c2(i),
            kind: cfg.acquisition,
            max_trials: cfg.max_trials,
        };
        let new = label(rejection_sample(cfg.n_loop, prev.as_ref(), space, &settings, &mut rng)?);
        let proposed = new.len();
        let plan = SamplingPlan { tau: cfg.tau[i], n_min: cfg.n_min, n_max: cfg.n_max[i] };
        records.extend(estimate_points(sim, u, &new, &plan, Some(cfg.c3), i)?);
        let est = finish(i, &records, proposed)?;
        log::info!(
            "iteration {i}: {} proposed, {} in dataset, error bound {:.4e}",
            proposed,
            est.dataset_size,
            est.error_bound
        );
        estimates.push(est);
        on_iteration(&IterationReport {
            estimate: estimates.last().expect("just pushed"),
            records: &records,
            kernel: &kernel,
            standardization: &standardization,
        })?;
    }
    Ok(LoopResult { kernel, standardization, estimates, records })
}

/// Regular `res x res` grid over two axes of `space`, other coordinates fixed at `base`.
pub fn grid_2d(space: &DesignBox, axes: (usize, usize), base: &[f64], res: usize) -> Result<Vec<Vec<f64>>> {
    let (a, b) = axes;
    if a == b || a >= space.dim() || b >= space.dim() || base.len() != space.dim() || res < 2 {
        return Err(Error::InvalidParameter("grid needs two distinct axes, a full base point and res >= 2".into()));
    }
    let step = |ax: usize, i: usize| space.lower[ax] + (space.upper[ax] - space.lower[ax]) * i as f64 / (res - 1) as f64;
    let mut out = Vec::with_capacity(res * res);
    for j in 0..res {
        for i in 0..res {
            let mut k = base.to_vec();
            k[a] = step(a, i);
            k[b] = step(b, j);
            out.push(k);
        }
    }
    Ok(out)
}
