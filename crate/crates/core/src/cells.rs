//! Sending and receiving functions for every supported node type.
//!
//! Arms of a node are identified with `Z_n` through the node's local
//! (counterclockwise) neighbour order; a route `(u,#,w)` is addressed by the
//! pair of arm indices `(i, j)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::SignalState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Highway,
    BidirectionalInterface,
    PedestrianSquare,
    SimplifiedIntersection,
    SignalizedIntersection,
    UniRoundabout,
    BiRoundabout,
    MultiPopRoundabout,
}

fn one() -> f64 {
    1.0
}

/// Parameters of one node. Unused optional fields are ignored by kinds that do not need them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub kind: CellKind,
    pub s_max: f64,
    pub rho_max: f64,
    #[serde(default = "one")]
    pub a: f64,
    #[serde(default = "one")]
    pub b: f64,
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    /// Fraction of `rho_max` available to each approach of a signalized intersection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approach_capacity: Option<f64>,
}

impl CellSpec {
    /// Spec with `a = b = c = 1` and no optional parameters.
    pub fn new(kind: CellKind, s_max: f64, rho_max: f64) -> Self {
        CellSpec {
            kind,
            s_max,
            rho_max,
            a: 1.0,
            b: 1.0,
            c: 1.0,
            d: None,
            zeta: None,
            approach_capacity: None,
        }
    }

    pub fn with_d(mut self, d: f64) -> Self {
        self.d = Some(d);
        self
    }

    pub fn with_zeta(mut self, zeta: f64) -> Self {
        self.zeta = Some(zeta);
        self
    }

    pub fn with_abc(mut self, a: f64, b: f64, c: f64) -> Self {
        self.a = a;
        self.b = b;
        self.c = c;
        self
    }

    fn needs_d(&self) -> bool {
        matches!(
            self.kind,
            CellKind::BidirectionalInterface
                | CellKind::PedestrianSquare
                | CellKind::UniRoundabout
                | CellKind::BiRoundabout
                | CellKind::MultiPopRoundabout
        )
    }

    fn needs_zeta(&self) -> bool {
        matches!(
            self.kind,
            CellKind::SimplifiedIntersection | CellKind::SignalizedIntersection
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(format!("{what} ({:?})", self.kind)));
        if !(self.s_max > 0.0) {
            return bad("s_max must be positive");
        }
        if !(self.rho_max > 0.0) {
            return bad("rho_max must be positive");
        }
        if !(self.a > 0.0 && self.a <= 1.0) {
            return bad("a must lie in (0,1]");
        }
        if !(self.b > 0.0 && self.b <= 1.0) {
            return bad("b must lie in (0,1]");
        }
        if !(self.c > 0.0) {
            return bad("c must be positive");
        }
        if self.needs_d() && !matches!(self.d, Some(d) if d > 0.0) {
            return bad("d must be present and positive");
        }
        if self.needs_zeta() && !matches!(self.zeta, Some(z) if z > 0.0) {
            return bad("zeta must be present and positive");
        }
        if let Some(f) = self.approach_capacity {
            if !(f > 0.0 && f <= 1.0) {
                return bad("approach_capacity must lie in (0,1]");
            }
        }
        Ok(())
    }

    fn d(&self) -> f64 {
        self.d.unwrap_or(0.0)
    }

    fn zeta(&self) -> f64 {
        self.zeta.unwrap_or(0.0)
    }
}

/// Dense `n x n` matrix of route densities of one node.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LocalDensities {
    n: usize,
    values: Vec<f64>,
    present: Vec<bool>,
}

impl LocalDensities {
    /// Matrix with no entries present.
    pub fn new(n: usize) -> Self {
        let mut d = LocalDensities::default();
        d.reset(n);
        d.present.iter_mut().for_each(|p| *p = false);
        d
    }

    /// All entries present and zero.
    pub fn zeros(n: usize) -> Self {
        let mut d = LocalDensities::default();
        d.reset(n);
        d
    }

    /// Builds a matrix from a closure; `None` marks a missing entry.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> Option<f64>) -> Self {
        let mut d = LocalDensities::new(n);
        for i in 0..n {
            for j in 0..n {
                if let Some(v) = f(i, j) {
                    d.set(i, j, v);
                }
            }
        }
        d
    }

    /// Clears to `n` arms with every entry present and zero.
    pub(crate) fn reset(&mut self, n: usize) {
        self.n = n;
        self.values.clear();
        self.values.resize(n * n, 0.0);
        self.present.clear();
        self.present.resize(n * n, true);
    }

    pub fn arms(&self) -> usize {
        self.n
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.n + j] = v;
        self.present[i * self.n + j] = true;
    }

    pub fn unset(&mut self, i: usize, j: usize) {
        self.values[i * self.n + j] = 0.0;
        self.present[i * self.n + j] = false;
    }

    /// Density of route `(i, j)`; missing U-turn entries read as zero.
    pub fn get(&self, i: usize, j: usize) -> Result<f64> {
        let k = (i % self.n) * self.n + j % self.n;
        if self.present[k] || i % self.n == j % self.n {
            Ok(self.values[k])
        } else {
            Err(Error::MissingDensity(i % self.n, j % self.n))
        }
    }

    fn total(&self) -> Result<f64> {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                s += self.get(i, j)?;
            }
        }
        Ok(s)
    }
}

/// Path-overlap coefficients of a roundabout, generated once per geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct OverlapMatrix {
    n: usize,
    capacity: Vec<f64>,
    weights: Vec<Vec<(usize, f64)>>,
}

impl OverlapMatrix {
    /// One-way circulation: a path `i -> j` covers segments `i, i+1, ..., j-1`.
    pub fn unidirectional(n: usize) -> Self {
        let path = |i: usize, j: usize| -> Vec<usize> {
            let len = (j + n - i) % n;
            (0..len).map(|s| (i + s) % n).collect()
        };
        let mut capacity = vec![0.0; n * n];
        let mut weights = vec![Vec::new(); n * n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let own = path(i, j);
                capacity[i * n + j] = own.len() as f64 / n as f64;
                for k in 0..n {
                    for l in 0..n {
                        if k == l || (k, l) == (i, j) {
                            continue;
                        }
                        let other = path(k, l);
                        let shared = other.iter().filter(|s| own.contains(s)).count();
                        if shared > 0 {
                            weights[i * n + j]
                                .push((k * n + l, shared as f64 / other.len() as f64));
                        }
                    }
                }
            }
        }
        OverlapMatrix { n, capacity, weights }
    }

    /// Two-way circulation along shortest paths, ties split evenly.
    ///
    /// Routes with a unique shortest path interact through segment overlap;
    /// routes between opposite arms behave like a pedestrian square.
    pub fn bidirectional(n: usize) -> Self {
        // (probability, segments) of each path realization
        let paths = |i: usize, j: usize| -> Vec<(f64, Vec<usize>)> {
            let ccw = (j + n - i) % n;
            let cw = n - ccw;
            let fwd: Vec<usize> = (0..ccw).map(|s| (i + s) % n).collect();
            let back: Vec<usize> = (0..cw).map(|s| (j + s) % n).collect();
            match ccw.cmp(&cw) {
                std::cmp::Ordering::Less => vec![(1.0, fwd)],
                std::cmp::Ordering::Greater => vec![(1.0, back)],
                std::cmp::Ordering::Equal => vec![(0.5, fwd), (0.5, back)],
            }
        };
        let mut capacity = vec![0.0; n * n];
        let mut weights = vec![Vec::new(); n * n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let own = paths(i, j);
                let row = &mut weights[i * n + j];
                if own.len() == 2 {
                    capacity[i * n + j] = 1.0;
                    for k in (0..n).filter(|&k| k != i) {
                        for l in (0..n).filter(|&l| l != j && l != k) {
                            row.push((k * n + l, 1.0));
                        }
                    }
                    continue;
                }
                let own = &own[0].1;
                capacity[i * n + j] = own.len() as f64 / n as f64;
                for k in 0..n {
                    for l in 0..n {
                        if k == l || (k, l) == (i, j) {
                            continue;
                        }
                        let w: f64 = paths(k, l)
                            .iter()
                            .map(|(p, seg)| {
                                let shared = seg.iter().filter(|s| own.contains(s)).count();
                                p * shared as f64 / seg.len() as f64
                            })
                            .sum();
                        if w > 0.0 {
                            row.push((k * n + l, w));
                        }
                    }
                }
            }
        }
        OverlapMatrix { n, capacity, weights }
    }

    pub fn arms(&self) -> usize {
        self.n
    }

    /// Fraction of `rho_max` available to route `(i, j)`.
    pub fn capacity(&self, i: usize, j: usize) -> f64 {
        self.capacity[i * self.n + j]
    }

    /// Overlap weight of route `(k, l)` in the receiving function of `(i, j)`.
    pub fn weight(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.weights[i * self.n + j]
            .iter()
            .find(|(r, _)| *r == k * self.n + l)
            .map_or(0.0, |(_, w)| *w)
    }

    fn weighted_sum(&self, i: usize, j: usize, dens: &LocalDensities) -> Result<f64> {
        let mut s = 0.0;
        for &(r, w) in &self.weights[i * self.n + j] {
            s += w * dens.get(r / self.n, r % self.n)?;
        }
        Ok(s)
    }
}

/// A node's cell specification bound to its number of arms.
#[derive(Clone, Debug, PartialEq)]
pub struct CellModel {
    spec: CellSpec,
    arms: usize,
    overlap: Option<OverlapMatrix>,
}

impl CellModel {
    pub fn new(spec: CellSpec, arms: usize) -> Result<Self> {
        spec.validate()?;
        let need = |k: usize| {
            if arms == k {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{:?} needs {k} arms, node has {arms}",
                    spec.kind
                )))
            }
        };
        let overlap = match spec.kind {
            CellKind::Highway | CellKind::BidirectionalInterface => {
                need(2)?;
                None
            }
            CellKind::SignalizedIntersection => {
                need(4)?;
                None
            }
            CellKind::UniRoundabout => Some(OverlapMatrix::unidirectional(arms)),
            CellKind::BiRoundabout => Some(OverlapMatrix::bidirectional(arms)),
            CellKind::MultiPopRoundabout => {
                return Err(Error::InvalidParameter(
                    "multi-population roundabouts are evaluated with MultiPopRoundabout".into(),
                ))
            }
            CellKind::PedestrianSquare | CellKind::SimplifiedIntersection => None,
        };
        Ok(CellModel { spec, arms, overlap })
    }

    pub fn spec(&self) -> &CellSpec {
        &self.spec
    }

    pub fn kind(&self) -> CellKind {
        self.spec.kind
    }

    pub fn arms(&self) -> usize {
        self.arms
    }

    pub fn overlap(&self) -> Option<&OverlapMatrix> {
        self.overlap.as_ref()
    }

    /// Flow that route `(i, j)` may send.
    pub fn sending(
        &self,
        i: usize,
        j: usize,
        dens: &LocalDensities,
        signal: Option<&SignalState>,
    ) -> Result<f64> {
        let p = &self.spec;
        let rho = dens.get(i, j)?;
        let free = match p.kind {
            CellKind::SimplifiedIntersection => {
                p.a * rho * (-p.zeta() * dens.total()?).exp()
            }
            CellKind::SignalizedIntersection => {
                let la = signal.ok_or(Error::MissingSignal)?.la(i);
                let mut s = la * p.a * rho;
                if (j + 4 - i) % 4 == 3 {
                    let oncoming = dens.get(i + 2, i)? + dens.get(i + 2, i + 3)?;
                    s *= (-p.zeta() * oncoming).exp();
                }
                s
            }
            _ => p.a * rho,
        };
        Ok(p.s_max.min(free).max(0.0))
    }

    /// Flow that route `(i, j)` may receive.
    pub fn receiving(&self, i: usize, j: usize, dens: &LocalDensities) -> Result<f64> {
        let p = &self.spec;
        let rho = dens.get(i, j)?;
        let inner = match p.kind {
            CellKind::Highway => p.rho_max / 2.0 - p.c * rho,
            CellKind::BidirectionalInterface => {
                p.rho_max - p.c * rho - p.d() * dens.get(j, i)?
            }
            CellKind::PedestrianSquare => {
                let mut others = 0.0;
                for k in (0..self.arms).filter(|&k| k != i) {
                    for l in (0..self.arms).filter(|&l| l != j) {
                        others += dens.get(k, l)?;
                    }
                }
                p.rho_max - p.c * rho - p.d() * others
            }
            CellKind::SimplifiedIntersection => p.rho_max - p.c * dens.total()?,
            CellKind::SignalizedIntersection => {
                let cap = p.approach_capacity.unwrap_or(0.25) * p.rho_max;
                let mut queue = 0.0;
                for l in 0..4 {
                    queue += dens.get(i, l)?;
                }
                cap - p.c * queue
            }
            CellKind::UniRoundabout | CellKind::BiRoundabout => {
                let ov = self.overlap.as_ref().expect("roundabouts carry overlaps");
                ov.capacity(i, j) * p.rho_max - p.c * rho - p.d() * ov.weighted_sum(i, j, dens)?
            }
            CellKind::MultiPopRoundabout => unreachable!("rejected at construction"),
        };
        Ok((p.b * inner).max(0.0))
    }
}

/// Traffic population in a two-population roundabout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Population {
    Vehicle,
    Pedestrian,
}

/// Roundabout shared by one-way vehicles and two-way pedestrians who have priority.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiPopRoundabout {
    vehicle: CellSpec,
    pedestrian: CellSpec,
    overlap: OverlapMatrix,
}

impl MultiPopRoundabout {
    pub fn new(vehicle: CellSpec, pedestrian: CellSpec) -> Result<Self> {
        for spec in [&vehicle, &pedestrian] {
            let mut s = spec.clone();
            s.kind = CellKind::BidirectionalInterface;
            s.validate()?;
        }
        Ok(MultiPopRoundabout {
            vehicle,
            pedestrian,
            overlap: OverlapMatrix::unidirectional(4),
        })
    }
}

/// `(S, R)` of route `(i, j)` for one population of a [`MultiPopRoundabout`].
pub fn multipop_sending_receiving(
    cell: &MultiPopRoundabout,
    i: usize,
    j: usize,
    population: Population,
    vehicles: Option<&LocalDensities>,
    pedestrians: Option<&LocalDensities>,
) -> Result<(f64, f64)> {
    let ped = pedestrians.ok_or(Error::MissingPopulation("pedestrian"))?;
    let (i, j) = (i % 4, j % 4);
    match population {
        Population::Pedestrian => {
            if j != (i + 1) % 4 && j != (i + 3) % 4 {
                return Err(Error::Domain(format!(
                    "pedestrians only move to adjacent exits, got ({i},{j})"
                )));
            }
            let p = &cell.pedestrian;
            let rho = ped.get(i, j)?;
            let s = p.s_max.min(p.a * rho);
            let r = (p.b * (p.rho_max / 4.0 - p.c * rho - p.d() * ped.get(j, i)?)).max(0.0);
            Ok((s, r))
        }
        Population::Vehicle => {
            let veh = vehicles.ok_or(Error::MissingPopulation("vehicle"))?;
            if i == j {
                return Err(Error::Domain("vehicle U-turns are not routes".into()));
            }
            let p = &cell.vehicle;
            let exit_free = ped.get(j + 3, j)? + ped.get(j, j + 3)? == 0.0;
            let entry_free = ped.get(i, i + 1)? + ped.get(i + 1, i)? == 0.0;
            let rho = veh.get(i, j)?;
            let s = if exit_free { p.s_max.min(p.a * rho) } else { 0.0 };
            let r = if entry_free {
                let ov = &cell.overlap;
                (p.b * (ov.capacity(i, j) * p.rho_max
                    - p.c * rho
                    - p.d() * ov.weighted_sum(i, j, veh)?))
                .max(0.0)
            } else {
                0.0
            };
            Ok((s, r))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::SignalState;
    use approx::assert_relative_eq;

    fn single(n: usize, i: usize, j: usize, rho: f64) -> LocalDensities {
        let mut d = LocalDensities::zeros(n);
        d.set(i, j, rho);
        d
    }

    #[test]
    fn highway_examples() {
        let cell = CellModel::new(CellSpec::new(CellKind::Highway, 5.0, 16.0), 2).unwrap();
        assert_eq!(cell.sending(0, 1, &single(2, 0, 1, 3.0), None).unwrap(), 3.0);
        assert_eq!(cell.sending(0, 1, &single(2, 0, 1, 7.0), None).unwrap(), 5.0);
        assert_eq!(cell.receiving(0, 1, &single(2, 0, 1, 10.0)).unwrap(), 0.0);
    }

    #[test]
    fn bidirectional_interface_counter_density() {
        let cell = CellModel::new(
            CellSpec::new(CellKind::BidirectionalInterface, 5.0, 30.0).with_d(1.0),
            2,
        )
        .unwrap();
        let d = LocalDensities::from_fn(2, |i, j| (i != j).then_some(5.0));
        assert_eq!(cell.receiving(0, 1, &d).unwrap(), 20.0);
    }

    #[test]
    fn simplified_intersection_damping() {
        let cell = CellModel::new(
            CellSpec::new(CellKind::SimplifiedIntersection, 5.0, 10.0).with_zeta(0.1),
            3,
        )
        .unwrap();
        let s = cell.sending(0, 1, &single(3, 0, 1, 2.0), None).unwrap();
        assert_relative_eq!(s, 2.0 * (-0.2f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(s, 1.63746, epsilon = 1e-5);
    }

    fn signalized() -> CellModel {
        CellModel::new(
            CellSpec::new(CellKind::SignalizedIntersection, 5.0, 16.0).with_zeta(0.1),
            4,
        )
        .unwrap()
    }

    #[test]
    fn red_light_blocks_whole_approach() {
        let cell = signalized();
        let d = LocalDensities::from_fn(4, |i, j| (i != j).then_some(3.0));
        let state = SignalState::from_arms(vec![0.0, 1.0, 0.0, 1.0]);
        for j in 1..4 {
            assert_eq!(cell.sending(0, j, &d, Some(&state)).unwrap(), 0.0);
            assert!(cell.sending(1, (1 + j) % 4, &d, Some(&state)).unwrap() > 0.0);
        }
        assert!(matches!(cell.sending(0, 1, &d, None), Err(Error::MissingSignal)));
    }

    #[test]
    fn left_turn_yields_to_oncoming() {
        let cell = signalized();
        let mut d = LocalDensities::zeros(4);
        d.set(0, 3, 2.0);
        d.set(2, 0, 4.0);
        d.set(2, 3, 6.0);
        let state = SignalState::from_arms(vec![1.0; 4]);
        let s = cell.sending(0, 3, &d, Some(&state)).unwrap();
        assert_relative_eq!(s, 5f64.min(2.0 * (-1f64).exp()), epsilon = 1e-12);
    }

    #[test]
    fn signalized_receiving_uses_quarter_capacity() {
        let cell = signalized();
        let mut d = LocalDensities::zeros(4);
        d.set(1, 2, 1.0);
        d.set(1, 3, 1.5);
        assert_relative_eq!(cell.receiving(1, 0, &d).unwrap(), 4.0 - 2.5);
        assert_relative_eq!(cell.receiving(0, 2, &d).unwrap(), 4.0);
    }

    #[test]
    fn unidirectional_overlap_matches_hand_tables() {
        let ov = OverlapMatrix::unidirectional(4);
        // R_(u,u+1)
        assert_relative_eq!(ov.weight(0, 1, 0, 2), 0.5);
        assert_relative_eq!(ov.weight(0, 1, 0, 3), 1.0 / 3.0);
        assert_relative_eq!(ov.weight(0, 1, 2, 1), 1.0 / 3.0);
        assert_relative_eq!(ov.weight(0, 1, 3, 1), 0.5);
        assert_relative_eq!(ov.weight(0, 1, 3, 2), 1.0 / 3.0);
        assert_eq!(ov.weight(0, 1, 1, 0), 0.0);
        // R_(u,u+3)
        assert_relative_eq!(ov.weight(0, 3, 1, 0), 2.0 / 3.0);
        assert_relative_eq!(ov.weight(0, 3, 2, 0), 0.5);
        assert_relative_eq!(ov.capacity(0, 3), 0.75);
    }

    #[test]
    fn unidirectional_receiving_example() {
        let spec = CellSpec::new(CellKind::UniRoundabout, 5.0, 30.0).with_d(1.0);
        let cell = CellModel::new(spec, 4).unwrap();
        let mut d = LocalDensities::zeros(4);
        for (i, j) in [(0, 1), (0, 2), (0, 3), (2, 1), (3, 1), (3, 2)] {
            d.set(i, j, 1.0);
        }
        assert_relative_eq!(cell.receiving(0, 1, &d).unwrap(), 4.5, epsilon = 1e-12);
    }

    #[test]
    fn bidirectional_overlap_matches_hand_tables() {
        let ov = OverlapMatrix::bidirectional(4);
        assert_relative_eq!(ov.capacity(0, 1), 0.25);
        assert_relative_eq!(ov.weight(0, 1, 0, 2), 0.25);
        assert_relative_eq!(ov.weight(0, 1, 1, 0), 1.0);
        assert_relative_eq!(ov.weight(0, 1, 1, 3), 0.25);
        assert_relative_eq!(ov.weight(0, 1, 2, 0), 0.25);
        assert_relative_eq!(ov.weight(0, 1, 3, 1), 0.25);
        assert_eq!(ov.weight(0, 1, 2, 1), 0.0);
        assert_relative_eq!(ov.weight(0, 3, 3, 0), 1.0);
        assert_relative_eq!(ov.weight(0, 3, 3, 1), 0.25);
        assert_relative_eq!(ov.capacity(0, 2), 1.0);
        assert_relative_eq!(ov.weight(0, 2, 1, 3), 1.0);
        assert_eq!(ov.weight(0, 2, 1, 2), 0.0);
    }

    #[test]
    fn multipop_blocking() {
        let veh = CellSpec::new(CellKind::UniRoundabout, 5.0, 30.0).with_d(1.0);
        let ped = CellSpec::new(CellKind::BidirectionalInterface, 2.0, 8.0).with_d(1.0);
        let cell = MultiPopRoundabout::new(veh.clone(), ped).unwrap();
        let uni = CellModel::new(veh, 4).unwrap();
        let v = LocalDensities::from_fn(4, |i, j| (i != j).then_some(0.5 + i as f64));
        let mut p = LocalDensities::zeros(4);
        let (s, r) =
            multipop_sending_receiving(&cell, 0, 2, Population::Vehicle, Some(&v), Some(&p))
                .unwrap();
        assert_eq!(s, uni.sending(0, 2, &v, None).unwrap());
        assert_eq!(r, uni.receiving(0, 2, &v).unwrap());
        p.set(1, 2, 0.1);
        let (s, _) =
            multipop_sending_receiving(&cell, 0, 2, Population::Vehicle, Some(&v), Some(&p))
                .unwrap();
        assert_eq!(s, 0.0);
        assert!(matches!(
            multipop_sending_receiving(&cell, 0, 2, Population::Vehicle, Some(&v), None),
            Err(Error::MissingPopulation(_))
        ));
    }

    #[test]
    fn missing_entries_are_reported() {
        let cell = CellModel::new(
            CellSpec::new(CellKind::BidirectionalInterface, 5.0, 30.0).with_d(1.0),
            2,
        )
        .unwrap();
        let mut d = LocalDensities::zeros(2);
        d.unset(1, 0);
        assert!(matches!(cell.receiving(0, 1, &d), Err(Error::MissingDensity(1, 0))));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(CellSpec::new(CellKind::Highway, 0.0, 1.0).validate().is_err());
        assert!(CellSpec::new(CellKind::PedestrianSquare, 1.0, 1.0).validate().is_err());
        assert!(CellModel::new(CellSpec::new(CellKind::Highway, 1.0, 1.0), 3).is_err());
    }
}
