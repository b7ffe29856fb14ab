//! Local outflow problems of one directed edge and the four interaction rules.

use crate::error::{Error, Result};
use crate::lp::lexicographic_max;

/// Upstream sendings `S_x`, downstream receivings `R_w` and turning fractions `f_{x->w}`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LocalProblem {
    pub sending: Vec<f64>,
    pub receiving: Vec<f64>,
    /// Row-major `sending.len() x receiving.len()`.
    pub fractions: Vec<f64>,
}

impl LocalProblem {
    pub fn new(sending: Vec<f64>, receiving: Vec<f64>, fractions: Vec<Vec<f64>>) -> Result<Self> {
        if fractions.len() != sending.len() || fractions.iter().any(|r| r.len() != receiving.len()) {
            return Err(Error::InvalidParameter("fraction matrix has wrong shape".into()));
        }
        let p = LocalProblem {
            sending,
            receiving,
            fractions: fractions.concat(),
        };
        if p
            .sending
            .iter()
            .chain(&p.receiving)
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::InvalidParameter("sendings and receivings must be finite and >= 0".into()));
        }
        if p.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::InvalidParameter("turning fractions must lie in [0,1]".into()));
        }
        Ok(p)
    }

    pub fn upstream(&self) -> usize {
        self.sending.len()
    }

    pub fn downstream(&self) -> usize {
        self.receiving.len()
    }

    pub fn f(&self, x: usize, w: usize) -> f64 {
        self.fractions[x * self.receiving.len() + w]
    }

    /// `Σ_x f_{x->w} q_x`.
    pub fn load(&self, q: &[f64], w: usize) -> f64 {
        q.iter().enumerate().map(|(x, qx)| self.f(x, w) * qx).sum()
    }

    /// True when sending everything violates no receiving constraint.
    pub fn unconstrained(&self) -> bool {
        (0..self.downstream()).all(|w| self.load(&self.sending, w) <= self.receiving[w])
    }

    /// Largest constraint violation of `q` (zero when feasible).
    pub fn violation(&self, q: &[f64]) -> f64 {
        let mut v: f64 = 0.0;
        for (x, qx) in q.iter().enumerate() {
            v = v.max(-qx).max(qx - self.sending[x]);
        }
        for w in 0..self.downstream() {
            v = v.max(self.load(q, w) - self.receiving[w]);
        }
        v
    }
}

/// Outflows together with the proportionality factor that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledFlows {
    pub lambda: f64,
    pub outflows: Vec<f64>,
}

/// Demand-proportional flows: `q_x = λ S_x` with the largest admissible `λ ∈ [0,1]`.
pub fn solve_dpf(p: &LocalProblem) -> ScaledFlows {
    let mut lambda: f64 = 1.0;
    for w in 0..p.downstream() {
        let demand = p.load(&p.sending, w);
        if demand > 0.0 {
            lambda = lambda.min(p.receiving[w] / demand);
        }
    }
    ScaledFlows {
        lambda,
        outflows: p.sending.iter().map(|s| lambda * s).collect(),
    }
}

/// `g_w(λ) = Σ_x f_{x->w} min(λ d_x, 1) S_x`.
pub fn cpf_load(p: &LocalProblem, d: &[f64], w: usize, lambda: f64) -> f64 {
    (0..p.upstream())
        .map(|x| p.f(x, w) * (lambda * d[x]).min(1.0) * p.sending[x])
        .sum()
}

/// `sup {λ >= 0 : g_w(λ) <= R_w}` by walking the breakpoints `1/d_x`.
fn cpf_root(p: &LocalProblem, d: &[f64], w: usize) -> f64 {
    let r = p.receiving[w];
    let mut kinks: Vec<(f64, f64)> = (0..p.upstream())
        .filter(|&x| d[x] > 0.0)
        .map(|x| (1.0 / d[x], p.f(x, w) * d[x] * p.sending[x]))
        .filter(|&(_, slope)| slope > 0.0)
        .collect();
    kinks.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut slope: f64 = kinks.iter().map(|k| k.1).sum();
    let (mut lam, mut g) = (0.0, 0.0);
    let mut i = 0;
    while i < kinks.len() {
        let b = kinks[i].0;
        let g_b = g + slope * (b - lam);
        if g_b > r {
            return lam + (r - g) / slope;
        }
        lam = b;
        g = g_b;
        while i < kinks.len() && kinks[i].0 == b {
            slope -= kinks[i].1;
            i += 1;
        }
    }
    f64::INFINITY
}

/// Capacity-proportional flows `q_x = min(λ d_x, 1) S_x`.
///
/// `λ` is the smallest per-exit root; it is `+∞` when no exit ever binds.
pub fn solve_cpf(p: &LocalProblem, d: &[f64]) -> Result<ScaledFlows> {
    validate_weights(d, p.upstream())?;
    if p.unconstrained() {
        return Ok(ScaledFlows {
            lambda: f64::INFINITY,
            outflows: p.sending.clone(),
        });
    }
    let lambda = (0..p.downstream())
        .map(|w| cpf_root(p, d, w))
        .fold(f64::INFINITY, f64::min);
    let outflows = (0..p.upstream())
        .map(|x| {
            if d[x] == 0.0 {
                0.0
            } else {
                (lambda * d[x]).min(1.0) * p.sending[x]
            }
        })
        .collect();
    Ok(ScaledFlows { lambda, outflows })
}

pub(crate) fn validate_weights(d: &[f64], n: usize) -> Result<()> {
    if d.len() != n || d.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidParameter("capacity weights must be non-negative".into()));
    }
    let s: f64 = d.iter().sum();
    if n > 0 && (s - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!("capacity weights sum to {s}")));
    }
    Ok(())
}

pub(crate) fn validate_order(order: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for &x in order {
        if x >= n || std::mem::replace(&mut seen[x], true) {
            return Err(Error::InvalidParameter("priority order is not a permutation".into()));
        }
    }
    if order.len() != n {
        return Err(Error::InvalidParameter("priority order is not a permutation".into()));
    }
    Ok(())
}

/// Hierarchical flows: claimants in `order` take what the residual receivings allow.
pub fn solve_priority(p: &LocalProblem, order: &[usize]) -> Result<Vec<f64>> {
    validate_order(order, p.upstream())?;
    let mut residual = p.receiving.clone();
    let mut q = vec![0.0; p.upstream()];
    for &x in order {
        let mut cap = p.sending[x];
        for (w, res) in residual.iter().enumerate() {
            let f = p.f(x, w);
            if f > 0.0 {
                cap = cap.min(res / f);
            }
        }
        let cap = cap.max(0.0);
        q[x] = cap;
        for (w, res) in residual.iter_mut().enumerate() {
            *res = (*res - p.f(x, w) * cap).max(0.0);
        }
    }
    Ok(q)
}

/// Maximal total outflow; ties broken by maximizing `q_0`, then `q_1`, and so on.
pub fn solve_cooperative(p: &LocalProblem) -> Result<Vec<f64>> {
    if p.unconstrained() {
        return Ok(p.sending.clone());
    }
    // variables only for claimants that can send something
    let active: Vec<usize> = (0..p.upstream()).filter(|&x| p.sending[x] > 0.0).collect();
    let nv = active.len();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (k, &x) in active.iter().enumerate() {
        let mut row = vec![0.0; nv];
        row[k] = 1.0;
        a.push(row);
        b.push(p.sending[x]);
    }
    for w in 0..p.downstream() {
        let row: Vec<f64> = active.iter().map(|&x| p.f(x, w)).collect();
        if row.iter().any(|&f| f > 0.0) {
            a.push(row);
            b.push(p.receiving[w]);
        }
    }
    let mut objectives = vec![vec![1.0; nv]];
    for k in 0..nv {
        let mut e = vec![0.0; nv];
        e[k] = 1.0;
        objectives.push(e);
    }
    let x = lexicographic_max(&a, &b, &objectives)?;
    let mut q = vec![0.0; p.upstream()];
    for (k, &xi) in active.iter().enumerate() {
        q[xi] = x[k].clamp(0.0, p.sending[xi]);
    }
    Ok(q)
}

/// Interaction rule resolved against a network's edge groups.
#[derive(Clone, Debug, PartialEq)]
pub enum InteractionRule {
    Dpf,
    /// Capacity weights per edge group, aligned with its upstream routes.
    Cpf(Vec<Vec<f64>>),
    /// Priority permutation per edge group, over positions in its upstream list.
    Priority(Vec<Vec<usize>>),
    Cooperative,
}

impl InteractionRule {
    pub fn name(&self) -> &'static str {
        match self {
            InteractionRule::Dpf => "dpf",
            InteractionRule::Cpf(_) => "cpf",
            InteractionRule::Priority(_) => "priority",
            InteractionRule::Cooperative => "cooperative",
        }
    }

    /// Outflows of edge group `edge` for the local problem `p`.
    pub fn solve(&self, edge: usize, p: &LocalProblem) -> Result<Vec<f64>> {
        match self {
            InteractionRule::Dpf => Ok(solve_dpf(p).outflows),
            InteractionRule::Cpf(w) => Ok(solve_cpf(p, &w[edge])?.outflows),
            InteractionRule::Priority(o) => solve_priority(p, &o[edge]),
            InteractionRule::Cooperative => solve_cooperative(p),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn lp(s: &[f64], r: &[f64], f: &[&[f64]]) -> LocalProblem {
        LocalProblem::new(s.to_vec(), r.to_vec(), f.iter().map(|x| x.to_vec()).collect()).unwrap()
    }

    #[test]
    fn dpf_examples() {
        let sol = solve_dpf(&lp(&[4.0], &[2.0], &[&[1.0]]));
        assert_eq!(sol.lambda, 0.5);
        assert_eq!(sol.outflows, vec![2.0]);
        let sol = solve_dpf(&lp(&[1.0], &[5.0], &[&[1.0]]));
        assert_eq!((sol.lambda, sol.outflows[0]), (1.0, 1.0));
        let sol = solve_dpf(&lp(&[0.0, 0.0], &[0.0], &[&[1.0], &[1.0]]));
        assert_eq!(sol.lambda, 1.0);
        assert_eq!(sol.outflows, vec![0.0, 0.0]);
    }

    #[test]
    fn cpf_examples() {
        let p = lp(&[4.0, 4.0], &[2.0], &[&[1.0], &[1.0]]);
        let sol = solve_cpf(&p, &[0.5, 0.5]).unwrap();
        assert_relative_eq!(sol.lambda, 0.5, epsilon = 1e-15);
        assert_eq!(sol.outflows, vec![1.0, 1.0]);
        let p = lp(&[4.0, 4.0], &[9.0], &[&[1.0], &[1.0]]);
        assert_eq!(solve_cpf(&p, &[0.5, 0.5]).unwrap().outflows, vec![4.0, 4.0]);
        let p = lp(&[4.0, 4.0], &[2.0], &[&[1.0], &[1.0]]);
        let sol = solve_cpf(&p, &[1.0, 0.0]).unwrap();
        assert_eq!(sol.outflows, vec![2.0, 0.0]);
        assert!(solve_cpf(&p, &[0.7, 0.7]).is_err());
    }

    #[test]
    fn cpf_saturated_claimant_then_binding() {
        // d = (0.9, 0.1): x0 saturates at λ = 1/0.9, then only x1 grows
        let p = lp(&[1.0, 10.0], &[3.0], &[&[1.0], &[1.0]]);
        let sol = solve_cpf(&p, &[0.9, 0.1]).unwrap();
        assert_relative_eq!(sol.outflows[0], 1.0);
        assert_relative_eq!(sol.outflows[1], 2.0, epsilon = 1e-12);
        assert_relative_eq!(sol.lambda, 2.0);
    }

    #[test]
    fn priority_examples() {
        let p = lp(&[4.0, 3.0], &[3.0], &[&[1.0], &[1.0]]);
        assert_eq!(solve_priority(&p, &[0, 1]).unwrap(), vec![3.0, 0.0]);
        assert_eq!(solve_priority(&p, &[1, 0]).unwrap(), vec![0.0, 3.0]);
        let p = lp(&[4.0, 3.0], &[10.0], &[&[1.0], &[1.0]]);
        assert_eq!(solve_priority(&p, &[0, 1]).unwrap(), vec![4.0, 3.0]);
        assert!(solve_priority(&p, &[0, 0]).is_err());
    }

    #[test]
    fn cooperative_examples() {
        let p = lp(&[4.0, 3.0], &[3.0], &[&[1.0], &[1.0]]);
        assert_eq!(solve_cooperative(&p).unwrap(), vec![3.0, 0.0]);
        let p = lp(&[4.0, 3.0], &[30.0], &[&[1.0], &[1.0]]);
        assert_eq!(solve_cooperative(&p).unwrap(), vec![4.0, 3.0]);
    }

    #[test]
    fn cooperative_beats_dpf_on_split_demand() {
        // x0 splits over two exits, one of them blocked; x1 only uses the open one
        let p = lp(&[4.0, 4.0], &[0.0, 4.0], &[&[0.5, 0.5], &[0.0, 1.0]]);
        let dpf: f64 = solve_dpf(&p).outflows.iter().sum();
        let coop: f64 = solve_cooperative(&p).unwrap().iter().sum();
        assert_eq!(dpf, 0.0);
        assert_relative_eq!(coop, 4.0);
    }
}
