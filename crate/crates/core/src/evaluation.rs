//! Utilities, performance statistics, benchmark thresholds and sequential
//! Monte Carlo estimation of expected utility.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, Continuous};

use crate::error::{Error, Result};
use crate::network::{DensityState, FlowRecord, TrafficNetwork};
use crate::parallel;
use crate::quadrature::integrate;
use crate::sim::Trajectory;

/// Densities below this are treated as empty in the velocity statistic.
const EMPTY_DENSITY: f64 = 1e-12;

/// A non-decreasing utility function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "utility", rename_all = "snake_case", deny_unknown_fields)]
pub enum UtilityFn {
    Identity,
    /// `-|x - c|^alpha` below `c`, zero above.
    Polynomial { c: f64, alpha: f64 },
    /// `alpha (x - c)_+ - (1 - alpha) (x - c)_-`.
    Expectile { c: f64, alpha: f64 },
    SquareRoot,
}

impl UtilityFn {
    pub fn validate(&self) -> Result<()> {
        match *self {
            UtilityFn::Polynomial { c, alpha } if !c.is_finite() || !(alpha >= 1.0) || !alpha.is_finite() => {
                Err(Error::InvalidParameter(format!("polynomial utility needs finite c and alpha >= 1, got c={c}, alpha={alpha}")))
            }
            UtilityFn::Expectile { c, alpha } if !c.is_finite() || !(0.0..=0.5).contains(&alpha) => {
                Err(Error::InvalidParameter(format!("expectile utility needs finite c and alpha in [0, 1/2], got c={c}, alpha={alpha}")))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            UtilityFn::Identity => "identity",
            UtilityFn::Polynomial { .. } => "polynomial",
            UtilityFn::Expectile { .. } => "expectile",
            UtilityFn::SquareRoot => "square_root",
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::NonFinite("utility argument"));
        }
        Ok(match *self {
            UtilityFn::Identity => x,
            UtilityFn::Polynomial { c, alpha } => {
                if x <= c {
                    -(c - x).powf(alpha)
                } else {
                    0.0
                }
            }
            UtilityFn::Expectile { c, alpha } => alpha * (x - c).max(0.0) - (1.0 - alpha) * (c - x).max(0.0),
            UtilityFn::SquareRoot => {
                if x < 0.0 {
                    return Err(Error::Domain(format!("square root utility at {x}")));
                }
                x.sqrt()
            }
        })
    }
}

/// Shorthand for [`UtilityFn::eval`].
pub fn utility(u: &UtilityFn, x: f64) -> Result<f64> {
    u.eval(x)
}

/// Time-averaged statistic of a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerformanceMeasure {
    /// Mean total outflow per step.
    AvgNetworkFlow,
    /// Removed traffic divided by traffic attempting to enter.
    Throughput,
    /// Mean of `q_out / rho` summed over the given routes (node labels).
    AvgVelocity { routes: Vec<[u32; 3]> },
}

impl PerformanceMeasure {
    pub fn name(&self) -> &'static str {
        match self {
            PerformanceMeasure::AvgNetworkFlow => "avg_network_flow",
            PerformanceMeasure::Throughput => "throughput",
            PerformanceMeasure::AvgVelocity { .. } => "avg_velocity",
        }
    }
}

/// Online version of [`performance`]; feed one step at a time.
#[derive(Clone, Debug)]
pub struct PerformanceAccumulator {
    kind: Kind,
    steps: u64,
    num: f64,
    den: f64,
}

#[derive(Clone, Debug)]
enum Kind {
    Flow,
    Throughput,
    /// (route index, free-flow speed factor of its cell)
    Velocity(Vec<(usize, f64)>),
}

impl PerformanceAccumulator {
    pub fn new(measure: &PerformanceMeasure, net: &TrafficNetwork) -> Result<Self> {
        let kind = match measure {
            PerformanceMeasure::AvgNetworkFlow => Kind::Flow,
            PerformanceMeasure::Throughput => Kind::Throughput,
            PerformanceMeasure::AvgVelocity { routes } => {
                if routes.is_empty() {
                    return Err(Error::Config("average velocity needs at least one route".into()));
                }
                let mut rs = Vec::with_capacity(routes.len());
                for &[a, b, c] in routes {
                    let r = net.route_by_labels(a, b, c)?;
                    rs.push((r, net.cell(net.route(r).via).spec().a));
                }
                Kind::Velocity(rs)
            }
        };
        Ok(PerformanceAccumulator { kind, steps: 0, num: 0.0, den: 0.0 })
    }

    /// Records the step from `before` (densities at `t`) producing `flows` (at `t + 1`).
    pub fn push(&mut self, before: &DensityState, flows: &FlowRecord) {
        self.steps += 1;
        match &self.kind {
            Kind::Flow => self.num += flows.q_out.iter().sum::<f64>(),
            Kind::Throughput => {
                self.num += flows.q_net.iter().map(|&q| (-q).max(0.0)).sum::<f64>();
                self.den += flows.q_aux.iter().map(|&q| q.max(0.0)).sum::<f64>();
            }
            Kind::Velocity(rs) => {
                for &(r, a) in rs {
                    let rho = before.rho[r];
                    self.num += if rho < EMPTY_DENSITY { a } else { flows.q_out[r] / rho };
                }
            }
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn finish(&self) -> Result<f64> {
        if self.steps == 0 {
            return Err(Error::InsufficientData("performance of an empty trajectory".into()));
        }
        let v = match self.kind {
            Kind::Throughput if self.den <= 0.0 => 0.0,
            Kind::Throughput => self.num / self.den,
            _ => self.num / self.steps as f64,
        };
        if !v.is_finite() {
            return Err(Error::NonFinite("performance statistic"));
        }
        Ok(v)
    }
}

/// Statistic of a complete trajectory.
pub fn performance(measure: &PerformanceMeasure, net: &TrafficNetwork, traj: &Trajectory) -> Result<f64> {
    if traj.states.len() != traj.flows.len() + 1 {
        return Err(Error::InsufficientData(format!(
            "trajectory has {} states for {} steps",
            traj.states.len(),
            traj.flows.len()
        )));
    }
    let mut acc = PerformanceAccumulator::new(measure, net)?;
    for (s, f) in traj.states.iter().zip(&traj.flows) {
        acc.push(s, f);
    }
    acc.finish()
}

/// Benchmark variable `e * 2 X` with `X ~ Beta(beta, beta)` of standard deviation `sigma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub e: f64,
    pub sigma: f64,
}

impl BenchmarkSpec {
    pub fn new(e: f64, sigma: f64) -> Result<Self> {
        let b = BenchmarkSpec { e, sigma };
        b.beta()?;
        Ok(b)
    }

    /// Shape parameter with `1 / sqrt(8 beta + 4) = sigma`.
    pub fn beta(&self) -> Result<f64> {
        if !self.e.is_finite() || !(self.sigma > 0.0 && self.sigma < 0.5) {
            return Err(Error::InvalidParameter(format!(
                "benchmark needs finite e and sigma in (0, 1/2), got e={}, sigma={}",
                self.e, self.sigma
            )));
        }
        Ok((1.0 / (self.sigma * self.sigma) - 4.0) / 8.0)
    }
}

/// `E[u(e * 2 X)]` with `X ~ Beta(beta, beta)`, by adaptive quadrature.
pub fn calibrate_threshold(bench: &BenchmarkSpec, u: &UtilityFn) -> Result<f64> {
    u.validate()?;
    let beta = bench.beta()?;
    let dist = Beta::new(beta, beta).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let e = bench.e;
    let f = |x: f64| {
        let p = dist.pdf(x);
        if p == 0.0 {
            return 0.0;
        }
        u.eval(2.0 * e * x).map(|v| v * p).unwrap_or(f64::NAN)
    };
    // split at the kink of the piecewise utilities
    let kink = match *u {
        UtilityFn::Polynomial { c, .. } | UtilityFn::Expectile { c, .. } if e != 0.0 => Some(c / (2.0 * e)),
        _ => None,
    };
    match kink {
        Some(k) if k > 0.0 && k < 1.0 => Ok(integrate(f, 0.0, k, 1e-8)? + integrate(f, k, 1.0, 1e-8)?),
        _ => integrate(f, 0.0, 1.0, 1e-8),
    }
}

/// Sampling budget of one design.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingPlan {
    /// Target noise: stop once `sigma_hat^2 / n <= tau^2`.
    pub tau: f64,
    pub n_min: u64,
    pub n_max: u64,
}

impl SamplingPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_min < 2 || self.n_max < self.n_min || !(self.tau >= 0.0) || !self.tau.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sampling plan needs 2 <= n_min <= n_max and finite tau >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequentialEstimate {
    pub mu_hat: f64,
    /// Sample variance divided by `n`.
    pub tau_sq: f64,
    pub n: u64,
    pub discarded: bool,
}

impl SequentialEstimate {
    pub fn sigma_hat(&self) -> f64 {
        (self.tau_sq * self.n as f64).sqrt()
    }
}

/// One-pass mean and variance.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance (zero below two samples).
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }
}

/// Feeds replicates `0, 1, 2, ...` of `sample` to `stop` in index order.
/// Replicates are computed in parallel batches; results past the stopping
/// index are thrown away, so the outcome never depends on scheduling.
fn drive<F, S>(sample: &F, n_min: u64, n_max: u64, mut observe: S) -> Result<Welford>
where
    F: Fn(u64) -> Result<f64> + Sync + Send,
    S: FnMut(&Welford) -> bool,
{
    let mut w = Welford::default();
    let mut next = 0u64;
    let mut batch = n_min;
    while next < n_max {
        let end = (next + batch.max(1)).min(n_max);
        let values = parallel::map_range(next..end, sample);
        for v in values {
            let v = v?;
            if !v.is_finite() {
                return Err(Error::NonFinite("sampled utility"));
            }
            w.push(v);
            if w.count() >= n_min && observe(&w) {
                return Ok(w);
            }
        }
        next = end;
        batch = parallel::workers() as u64;
    }
    Ok(w)
}

/// Sequential Monte Carlo estimate of `E[u(Q)]`, where `sample(i)` runs replicate `i`.
///
/// Stops at the first `n >= n_min` with `sigma_hat^2 / n <= tau^2`, or at `n_max`.
/// With `discard_factor = Some(c)` and `tau > 0` the estimate is flagged
/// when `sigma_hat / sqrt(n) >= c tau`.
pub fn sequential_mc<F>(
    sample: F,
    u: &UtilityFn,
    plan: &SamplingPlan,
    discard_factor: Option<f64>,
) -> Result<SequentialEstimate>
where
    F: Fn(u64) -> Result<f64> + Sync + Send,
{
    plan.validate()?;
    u.validate()?;
    let tau_sq = plan.tau * plan.tau;
    let f = |i: u64| sample(i).and_then(|q| u.eval(q));
    let w = drive(&f, plan.n_min, plan.n_max, |w| w.variance() / w.count() as f64 <= tau_sq)?;
    let n = w.count();
    let tau_sq_hat = w.variance() / n as f64;
    let discarded = match discard_factor {
        Some(c) if plan.tau > 0.0 => tau_sq_hat.sqrt() >= c * plan.tau,
        _ => false,
    };
    Ok(SequentialEstimate { mu_hat: w.mean(), tau_sq: tau_sq_hat, n, discarded })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BayesianEstimate {
    pub t_post: f64,
    pub s_sq_post: f64,
    pub n: u64,
}

/// Normal posterior of the mean with prior `N(m, s_sq)` and the sample variance plugged in.
pub fn normal_posterior(m: f64, s_sq: f64, mean: f64, var: f64, n: u64) -> (f64, f64) {
    if var <= 0.0 {
        return (mean, 0.0);
    }
    let prior = 1.0 / s_sq;
    let data = n as f64 / var;
    let s_post = 1.0 / (prior + data);
    ((m * prior + mean * data) * s_post, s_post)
}

/// Like [`sequential_mc`] but stops on the posterior variance of the mean.
pub fn bayesian_sequential_mc<F>(
    m: f64,
    s_sq: f64,
    sample: F,
    u: &UtilityFn,
    plan: &SamplingPlan,
) -> Result<BayesianEstimate>
where
    F: Fn(u64) -> Result<f64> + Sync + Send,
{
    plan.validate()?;
    u.validate()?;
    if !(s_sq > 0.0) || !m.is_finite() {
        return Err(Error::InvalidParameter(format!("prior needs finite mean and s^2 > 0, got {m}, {s_sq}")));
    }
    let tau_sq = plan.tau * plan.tau;
    let f = |i: u64| sample(i).and_then(|q| u.eval(q));
    let w = drive(&f, plan.n_min, plan.n_max, |w| {
        normal_posterior(m, s_sq, w.mean(), w.variance(), w.count()).1 <= tau_sq
    })?;
    let (t_post, s_sq_post) = normal_posterior(m, s_sq, w.mean(), w.variance(), w.count());
    Ok(BayesianEstimate { t_post, s_sq_post, n: w.count() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn utility_examples() {
        assert_eq!(UtilityFn::Expectile { c: 60.0, alpha: 0.1 }.eval(60.0).unwrap(), 0.0);
        assert_eq!(UtilityFn::SquareRoot.eval(4.0).unwrap(), 2.0);
        assert_eq!(UtilityFn::Polynomial { c: 120.0, alpha: 2.0 }.eval(100.0).unwrap(), -400.0);
        assert!(matches!(UtilityFn::SquareRoot.eval(-1.0), Err(Error::Domain(_))));
        assert!(UtilityFn::Expectile { c: 0.0, alpha: 0.7 }.validate().is_err());
        assert!(UtilityFn::Polynomial { c: 0.0, alpha: 0.5 }.validate().is_err());
    }

    #[test]
    fn benchmark_beta() {
        assert_relative_eq!(BenchmarkSpec::new(60.0, 0.1).unwrap().beta().unwrap(), 12.0, epsilon = 1e-12);
        assert!(BenchmarkSpec::new(60.0, 0.5).is_err());
    }

    #[test]
    fn identity_threshold_is_e() {
        for e in [60.0, 55.0, 50.0] {
            let g = calibrate_threshold(&BenchmarkSpec { e, sigma: 0.1 }, &UtilityFn::Identity).unwrap();
            assert_relative_eq!(g, e, max_relative = 1e-9);
        }
    }

    #[test]
    fn polynomial_threshold_matches_closed_form() {
        // alpha = 2, c = 2e: E[(2e - 2eX)^2] = 4e^2 E[(1-X)^2] = 4e^2 (var + 1/4)
        let e = 60.0;
        let b = BenchmarkSpec { e, sigma: 0.1 };
        let g = calibrate_threshold(&b, &UtilityFn::Polynomial { c: 2.0 * e, alpha: 2.0 }).unwrap();
        assert_relative_eq!(g, -4.0 * e * e * (0.01 + 0.25), max_relative = 1e-8);
    }

    #[test]
    fn deterministic_sampler_stops_at_n_min() {
        let plan = SamplingPlan { tau: 0.1, n_min: 5, n_max: 100 };
        let est = sequential_mc(|_| Ok(3.0), &UtilityFn::Identity, &plan, Some(2.0)).unwrap();
        assert_eq!(est.n, 5);
        assert_eq!(est.tau_sq, 0.0);
        assert_eq!(est.mu_hat, 3.0);
        assert!(!est.discarded);
    }

    #[test]
    fn zero_target_runs_to_n_max() {
        let plan = SamplingPlan { tau: 0.0, n_min: 5, n_max: 40 };
        let est = sequential_mc(|i| Ok((i % 3) as f64), &UtilityFn::Identity, &plan, Some(2.0)).unwrap();
        assert_eq!(est.n, 40);
        assert!(!est.discarded);
    }

    #[test]
    fn noisy_estimate_is_discarded() {
        let plan = SamplingPlan { tau: 0.01, n_min: 2, n_max: 4 };
        let est = sequential_mc(|i| Ok(i as f64), &UtilityFn::Identity, &plan, Some(2.0)).unwrap();
        assert!(est.discarded);
    }

    #[test]
    fn sampler_errors_propagate() {
        let plan = SamplingPlan { tau: 0.1, n_min: 2, n_max: 10 };
        let r = sequential_mc(|_| Err(Error::Simulation("boom".into())), &UtilityFn::Identity, &plan, None);
        assert!(matches!(r, Err(Error::Simulation(_))));
        assert!(sequential_mc(|_| Ok(1.0), &UtilityFn::Identity, &SamplingPlan { n_min: 1, ..plan }, None).is_err());
    }

    #[test]
    fn bayesian_limits() {
        let (t, _) = normal_posterior(0.0, 1e300, 5.0, 2.0, 10);
        assert_relative_eq!(t, 5.0, epsilon = 1e-12);
        // prior precision equal to sampling precision
        let (t, s) = normal_posterior(1.0, 0.2, 3.0, 2.0, 10);
        assert_relative_eq!(t, 2.0, epsilon = 1e-12);
        assert_relative_eq!(s, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn bayesian_deterministic() {
        let plan = SamplingPlan { tau: 0.1, n_min: 3, n_max: 50 };
        let est = bayesian_sequential_mc(0.0, 1.0, |_| Ok(2.0), &UtilityFn::Identity, &plan).unwrap();
        assert_eq!(est.n, 3);
        assert_eq!(est.t_post, 2.0);
        assert_eq!(est.s_sq_post, 0.0);
    }

    proptest! {
        #[test]
        fn utilities_are_monotone(a in -200.0f64..200.0, b in -200.0f64..200.0, c in -100.0f64..100.0, al in 1.0f64..4.0, ae in 0.0f64..0.5) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for u in [
                UtilityFn::Identity,
                UtilityFn::Polynomial { c, alpha: al },
                UtilityFn::Expectile { c, alpha: ae },
            ] {
                prop_assert!(u.eval(lo).unwrap() <= u.eval(hi).unwrap());
            }
            prop_assert!(UtilityFn::SquareRoot.eval(lo.abs().min(hi.abs())).unwrap() <= UtilityFn::SquareRoot.eval(lo.abs().max(hi.abs())).unwrap());
        }

        #[test]
        fn welford_matches_two_pass(xs in prop::collection::vec(-1e3f64..1e3, 2..200)) {
            let mut w = Welford::default();
            xs.iter().for_each(|&x| w.push(x));
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            prop_assert!((w.mean() - mean).abs() <= 1e-10 * mean.abs().max(1.0));
            prop_assert!((w.variance() - var).abs() <= 1e-10 * var.max(1e-300));
        }

        #[test]
        fn posterior_shrinks(m in -10.0f64..10.0, s in 0.01f64..100.0, mean in -10.0f64..10.0, var in 0.01f64..100.0, n in 1u64..1000) {
            let (t, sp) = normal_posterior(m, s, mean, var, n);
            prop_assert!((t - m).abs() <= (mean - m).abs() + 1e-12);
            prop_assert!(sp <= var / n as f64 + 1e-15);
        }

        #[test]
        fn stopping_sandwich(seed in 0u64..1000, tau in 0.05f64..1.0) {
            let plan = SamplingPlan { tau, n_min: 4, n_max: 300 };
            let sample = |i: u64| {
                let x = ((i.wrapping_mul(2654435761).wrapping_add(seed * 97)) % 1000) as f64 / 1000.0;
                Ok(3.0 * x)
            };
            let est = sequential_mc(sample, &UtilityFn::Identity, &plan, None).unwrap();
            prop_assert!(est.n >= plan.n_min && est.n <= plan.n_max);
            if est.n < plan.n_max {
                prop_assert!(est.tau_sq <= tau * tau);
            }
        }
    }
}
