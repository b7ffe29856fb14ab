//! The five-phase time step.

use crate::cells::{CellKind, LocalDensities};
use crate::env::{Environment, SimRng};
use crate::error::{Error, Result};
use crate::network::{accumulate_inflows, DensityState, FlowRecord, NodeId, TrafficNetwork};
use crate::signal::{advance_signal, SignalSchedule, SignalState};
use crate::solvers::{InteractionRule, LocalProblem};

/// Signal schedules of the signalized nodes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SignalPlan {
    schedules: Vec<Option<SignalSchedule>>,
}

impl SignalPlan {
    pub fn new(net: &TrafficNetwork) -> Self {
        SignalPlan {
            schedules: vec![None; net.node_count()],
        }
    }

    pub fn set(&mut self, net: &TrafficNetwork, v: NodeId, schedule: SignalSchedule) -> Result<()> {
        if net.cell(v).kind() != CellKind::SignalizedIntersection {
            return Err(Error::Config(format!(
                "node {} is not a signalized intersection",
                net.label(v)
            )));
        }
        schedule.validate(net.cell(v).arms())?;
        self.schedules[v.0] = Some(schedule);
        Ok(())
    }

    pub fn get(&self, v: NodeId) -> Option<&SignalSchedule> {
        self.schedules.get(v.0).and_then(|s| s.as_ref())
    }

    pub fn state(&self, v: NodeId, t: u64) -> Option<SignalState> {
        self.get(v).map(|s| advance_signal(s, t))
    }
}

/// Reusable buffers for repeated steps on one network.
#[derive(Clone, Debug, Default)]
pub struct Stepper {
    pub sending: Vec<f64>,
    pub receiving: Vec<f64>,
    flows: FlowRecord,
    local: LocalDensities,
    problem: LocalProblem,
}

impl Stepper {
    pub fn new(net: &TrafficNetwork) -> Self {
        let n = net.route_count();
        Stepper {
            sending: vec![0.0; n],
            receiving: vec![0.0; n],
            flows: FlowRecord::zeros(n),
            local: LocalDensities::default(),
            problem: LocalProblem::default(),
        }
    }

    /// Phase 1: sending and receiving of every route.
    pub fn evaluate_cells(
        &mut self,
        net: &TrafficNetwork,
        state: &DensityState,
        signals: &SignalPlan,
    ) -> Result<()> {
        for v in (0..net.node_count()).map(NodeId) {
            let routes = net.routes_through(v);
            if routes.is_empty() {
                continue;
            }
            let cell = net.cell(v);
            let signal = signals.state(v, state.t as u64);
            if cell.kind() == CellKind::SignalizedIntersection && signal.is_none() {
                return Err(Error::MissingSignal);
            }
            net.local_densities(v, &state.rho, &mut self.local);
            for r in routes {
                let (i, j) = net.local_indices(r);
                self.sending[r] = cell.sending(i, j, &self.local, signal.as_ref())?;
                self.receiving[r] = cell.receiving(i, j, &self.local)?;
            }
        }
        Ok(())
    }

    /// Phase 2: outflows of every edge group under `rule`.
    pub fn solve_outflows(&mut self, net: &TrafficNetwork, rule: &InteractionRule) -> Result<()> {
        for (e, edge) in net.edges().iter().enumerate() {
            if edge.upstream.is_empty() {
                continue;
            }
            let p = &mut self.problem;
            p.sending.clear();
            p.sending.extend(edge.upstream.iter().map(|&r| self.sending[r]));
            p.receiving.clear();
            p.receiving.extend(edge.downstream.iter().map(|&r| self.receiving[r]));
            p.fractions.clear();
            for &r in &edge.upstream {
                p.fractions.extend_from_slice(net.turning().row(r));
            }
            let q = rule.solve(e, p)?;
            for (k, &r) in edge.upstream.iter().enumerate() {
                self.flows.q_out[r] = q[k];
            }
        }
        Ok(())
    }

    /// Runs all five phases, updating `state` in place.
    pub fn advance(
        &mut self,
        net: &TrafficNetwork,
        state: &mut DensityState,
        rule: &InteractionRule,
        signals: &SignalPlan,
        env: &mut dyn Environment,
        rng: &mut SimRng,
    ) -> Result<&FlowRecord> {
        self.evaluate_cells(net, state, signals)?;
        self.solve_outflows(net, rule)?;
        accumulate_inflows(&self.flows.q_out, net.turning(), net, &mut self.flows.q_in);
        env.net_flows(net, &state.rho, &mut self.flows, rng)?;
        let f = &self.flows;
        for r in 0..state.rho.len() {
            let l = net.route_length(r);
            let next = state.rho[r] + (f.q_in[r] - f.q_out[r] + f.q_net[r]) / l;
            if !next.is_finite() {
                return Err(Error::NonFinite("density update"));
            }
            state.rho[r] = next;
        }
        for &(r, cap) in env.caps() {
            state.rho[r] = state.rho[r].clamp(0.0, cap);
        }
        for (r, rho) in state.rho.iter_mut().enumerate() {
            if *rho < 0.0 {
                if *rho < -1e-12 {
                    return Err(Error::NegativeDensity {
                        route: net.describe(r),
                        value: *rho,
                    });
                }
                *rho = 0.0;
            }
        }
        state.t += 1;
        Ok(&self.flows)
    }
}

/// One step from `state`, returning the new state and the realized flows.
pub fn step(
    net: &TrafficNetwork,
    state: &DensityState,
    rule: &InteractionRule,
    signals: &SignalPlan,
    env: &mut dyn Environment,
    rng: &mut SimRng,
) -> Result<(DensityState, FlowRecord)> {
    let mut stepper = Stepper::new(net);
    let mut next = state.clone();
    let flows = stepper.advance(net, &mut next, rule, signals, env, rng)?.clone();
    Ok((next, flows))
}

/// Full record of a run: `T + 1` states and `T` flow records.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DensityState>,
    pub flows: Vec<FlowRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::CellSpec;
    use crate::env::{replicate_rng, ClosedEnvironment};
    use crate::network::{total_mass, NetworkBuilder, NodeDef};

    fn ring() -> TrafficNetwork {
        let road = CellSpec::new(CellKind::Highway, 5.0, 30.0);
        let node = |label, length| NodeDef { label, length, cell: road.clone(), order: None, allow_uturn: false };
        NetworkBuilder::new()
            .node(node(1, 2.0))
            .node(node(2, 1.0))
            .node(node(3, 3.0))
            .link(1, 2)
            .link(2, 3)
            .link(3, 1)
            .build()
            .unwrap()
    }

    #[test]
    fn ring_conserves_mass() {
        let net = ring();
        let mut state = DensityState { rho: vec![7.0, 1.0, 0.0, 4.0, 2.0, 9.0], t: 0 };
        let m0 = total_mass(&state, &net);
        let mut stepper = Stepper::new(&net);
        let mut rng = replicate_rng(1, 0);
        for _ in 0..100 {
            stepper
                .advance(&net, &mut state, &InteractionRule::Dpf, &SignalPlan::new(&net), &mut ClosedEnvironment, &mut rng)
                .unwrap();
        }
        assert!((total_mass(&state, &net) - m0).abs() < 1e-12);
        assert_eq!(state.t, 100);
    }

    #[test]
    fn empty_network_stays_empty() {
        let net = ring();
        let state = DensityState::zeros(&net);
        let (next, flows) = step(
            &net,
            &state,
            &InteractionRule::Cooperative,
            &SignalPlan::new(&net),
            &mut ClosedEnvironment,
            &mut replicate_rng(0, 0),
        )
        .unwrap();
        assert!(next.rho.iter().all(|&r| r == 0.0));
        assert!(flows.q_out.iter().chain(&flows.q_in).all(|&q| q == 0.0));
    }
}
