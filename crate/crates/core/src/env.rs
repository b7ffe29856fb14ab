//! Exogenous randomness: copula-coupled AR sources, Gaussian sources and net-flow clamping.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::network::{FlowRecord, TrafficNetwork};

/// Random number generator used by every replicate.
pub type SimRng = ChaCha8Rng;

/// Independent stream for `(seed, replicate)`.
pub fn replicate_rng(seed: u64, replicate: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// Frank copula with dependence parameter `r`; `|r| < 1e-8` is treated as independence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrankCopula {
    pub r: f64,
}

impl FrankCopula {
    pub fn new(r: f64) -> Self {
        FrankCopula { r }
    }

    pub fn cdf(&self, u1: f64, u2: f64) -> f64 {
        if self.r.abs() < 1e-8 {
            return u1 * u2;
        }
        let r = self.r;
        -((((-r * u1).exp_m1()) * ((-r * u2).exp_m1()) / (-r).exp_m1()).ln_1p()) / r
    }

    /// Draws `(u1, u2)` by inverting the conditional distribution of `u2` given `u1`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let u1: f64 = rng.sample(Open01);
        let w: f64 = rng.sample(Open01);
        (u1, self.conditional_inverse(u1, w))
    }

    /// `u2` with `∂C/∂u1 (u1, u2) = w`.
    pub fn conditional_inverse(&self, u1: f64, w: f64) -> f64 {
        let r = self.r;
        if r.abs() < 1e-8 {
            return w;
        }
        let a = (-r * u1).exp();
        let y = w * (-r).exp_m1() / (w + (1.0 - w) * a);
        let u2 = -y.ln_1p() / r;
        u2.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
    }

    /// Population Kendall tau `1 - 4/r (1 - D_1(r))`.
    pub fn kendall_tau(&self) -> f64 {
        let r = self.r;
        if r.abs() < 1e-8 {
            return 0.0;
        }
        1.0 - 4.0 / r * (1.0 - debye1(r))
    }
}

/// Debye function `D_1(x) = (1/x) ∫_0^x t / (e^t - 1) dt`.
pub fn debye1(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        return 1.0;
    }
    let f = |t: f64| if t.abs() < 1e-12 { 1.0 } else { t / t.exp_m1() };
    crate::quadrature::integrate(f, 0.0, x, 1e-13).map_or(f64::NAN, |v| v / x)
}

/// `q_ar(t+1) = q_ar(t) + ε`.
pub fn ar_step(q: f64, eps: f64) -> f64 {
    q + eps
}

/// Random-walk net flow on one route.
#[derive(Clone, Debug, PartialEq)]
pub struct ArSourceSink {
    pub route: usize,
    pub sigma: f64,
    pub value: f64,
}

impl ArSourceSink {
    pub fn new(route: usize, sigma: f64) -> Self {
        ArSourceSink { route, sigma, value: 0.0 }
    }
}

/// How one Gaussian auxiliary flow is generated.
#[derive(Clone, Debug, PartialEq)]
pub enum GaussianRule {
    /// `N(mean, (cv * mean)^2)`.
    Random { mean: f64, cv: f64 },
    /// Same draw as an earlier entry.
    SameAs(usize),
    /// Negated draw of an earlier entry.
    Negate(usize),
    Constant(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSourceSink {
    pub route: usize,
    pub rule: GaussianRule,
}

/// Largest-magnitude truncation of `q_aux` keeping the updated density in `[0, rho_cap]`.
pub fn clamp_net_flow(q_aux: f64, rho: f64, q_in: f64, q_out: f64, rho_cap: f64, l_v: f64) -> f64 {
    let lo = q_out - q_in - l_v * rho;
    let hi = l_v * rho_cap + lo;
    q_aux.max(lo).min(hi)
}

/// Supplier of net flows for phase 4 of a step.
pub trait Environment {
    /// Fills `flows.q_aux` and `flows.q_net`; `q_in` and `q_out` are already set.
    fn net_flows(
        &mut self,
        net: &TrafficNetwork,
        rho: &[f64],
        flows: &mut FlowRecord,
        rng: &mut SimRng,
    ) -> Result<()>;

    /// Routes whose density is clamped, with their caps.
    fn caps(&self) -> &[(usize, f64)] {
        &[]
    }

    /// Routes carrying sources or sinks.
    fn routes(&self) -> Vec<usize> {
        self.caps().iter().map(|c| c.0).collect()
    }
}

/// No sources or sinks.
#[derive(Clone, Copy, Debug, Default)]
pub struct ClosedEnvironment;

impl Environment for ClosedEnvironment {
    fn net_flows(
        &mut self,
        _net: &TrafficNetwork,
        _rho: &[f64],
        flows: &mut FlowRecord,
        _rng: &mut SimRng,
    ) -> Result<()> {
        flows.q_aux.iter_mut().for_each(|q| *q = 0.0);
        flows.q_net.iter_mut().for_each(|q| *q = 0.0);
        Ok(())
    }
}

/// AR sources coupled pairwise by a Frank copula, plus Gaussian sources.
#[derive(Clone, Debug)]
pub struct StochasticEnvironment {
    copula: FrankCopula,
    ar: Vec<ArSourceSink>,
    gaussian: Vec<GaussianSourceSink>,
    caps: Vec<(usize, f64)>,
    draws: Vec<f64>,
}

impl StochasticEnvironment {
    /// `cap_fraction` scales `rho_max` of the via node to the clamp cap.
    pub fn new(
        net: &TrafficNetwork,
        copula: FrankCopula,
        ar: Vec<ArSourceSink>,
        gaussian: Vec<GaussianSourceSink>,
        cap_fraction: f64,
    ) -> Result<Self> {
        for (k, g) in gaussian.iter().enumerate() {
            match g.rule {
                GaussianRule::SameAs(i) | GaussianRule::Negate(i) if i >= k => {
                    return Err(Error::Config(format!(
                        "gaussian source {k} refers to entry {i}, which is not earlier"
                    )))
                }
                GaussianRule::Random { cv, .. } if !(cv >= 0.0) => {
                    return Err(Error::Config("coefficient of variation must be >= 0".into()))
                }
                _ => {}
            }
        }
        if ar.iter().any(|a| !(a.sigma >= 0.0)) {
            return Err(Error::Config("AR noise must have sigma >= 0".into()));
        }
        let mut caps: Vec<(usize, f64)> = Vec::new();
        for route in ar.iter().map(|a| a.route).chain(gaussian.iter().map(|g| g.route)) {
            if route >= net.route_count() {
                return Err(Error::Config(format!("source route index {route} out of range")));
            }
            if caps.iter().any(|c| c.0 == route) {
                return Err(Error::Config(format!(
                    "route {} has more than one source",
                    net.describe(route)
                )));
            }
            let via = net.route(route).via;
            caps.push((route, cap_fraction * net.cell(via).spec().rho_max));
        }
        Ok(StochasticEnvironment {
            copula,
            ar,
            gaussian,
            caps,
            draws: Vec::new(),
        })
    }

    pub fn ar_values(&self) -> Vec<f64> {
        self.ar.iter().map(|a| a.value).collect()
    }

    fn innovations(&self, rng: &mut SimRng) -> Vec<f64> {
        let std = Normal::standard();
        let mut eps = Vec::with_capacity(self.ar.len());
        for pair in self.ar.chunks(2) {
            if pair.len() == 2 {
                let (u1, u2) = self.copula.sample(rng);
                eps.push(pair[0].sigma * std.inverse_cdf(u1));
                eps.push(pair[1].sigma * std.inverse_cdf(u2));
            } else {
                let z: f64 = rng.sample(StandardNormal);
                eps.push(pair[0].sigma * z);
            }
        }
        eps
    }
}

impl Environment for StochasticEnvironment {
    fn net_flows(
        &mut self,
        net: &TrafficNetwork,
        rho: &[f64],
        flows: &mut FlowRecord,
        rng: &mut SimRng,
    ) -> Result<()> {
        flows.q_aux.iter_mut().for_each(|q| *q = 0.0);
        flows.q_net.iter_mut().for_each(|q| *q = 0.0);
        let eps = self.innovations(rng);
        for (src, e) in self.ar.iter_mut().zip(eps) {
            src.value = ar_step(src.value, e);
            flows.q_aux[src.route] = src.value;
        }
        self.draws.clear();
        for g in &self.gaussian {
            let v = match g.rule {
                GaussianRule::Random { mean, cv } => {
                    let z: f64 = rng.sample(StandardNormal);
                    mean + cv * mean.abs() * z
                }
                GaussianRule::SameAs(i) => self.draws[i],
                GaussianRule::Negate(i) => -self.draws[i],
                GaussianRule::Constant(c) => c,
            };
            self.draws.push(v);
            flows.q_aux[g.route] = v;
        }
        for &(r, cap) in &self.caps {
            flows.q_net[r] = clamp_net_flow(
                flows.q_aux[r],
                rho[r],
                flows.q_in[r],
                flows.q_out[r],
                cap,
                net.route_length(r),
            );
        }
        Ok(())
    }

    fn caps(&self) -> &[(usize, f64)] {
        &self.caps
    }
}
