//! Fixed-cycle traffic lights with an acceleration ramp after each switch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_a_real() -> f64 {
    1.5
}

fn default_t_safe() -> f64 {
    2.0
}

/// Two-phase schedule of one intersection. Axis sets hold arm indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalSchedule {
    pub green: u64,
    pub shift: u64,
    pub axis_i: Vec<usize>,
    pub axis_j: Vec<usize>,
    #[serde(default = "default_a_real")]
    pub a_real: f64,
    #[serde(default = "default_t_safe")]
    pub t_safe: f64,
    pub t_real: f64,
    pub v_real: f64,
}

impl SignalSchedule {
    pub fn validate(&self, arms: usize) -> Result<()> {
        if self.green < 1 {
            return Err(Error::InvalidParameter("green duration must be >= 1".into()));
        }
        if self.axis_i.iter().any(|a| self.axis_j.contains(a)) {
            return Err(Error::InvalidParameter("signal axes overlap".into()));
        }
        if self.axis_i.iter().chain(&self.axis_j).any(|&a| a >= arms) {
            return Err(Error::InvalidParameter("signal axis arm out of range".into()));
        }
        if !(self.t_real > 0.0 && self.v_real > 0.0 && self.a_real > 0.0) {
            return Err(Error::InvalidParameter("signal timing constants must be positive".into()));
        }
        Ok(())
    }

    /// Arms not listed in either axis never see green.
    fn arms(&self) -> usize {
        self.axis_i.iter().chain(&self.axis_j).max().map_or(0, |m| m + 1)
    }
}

/// Light state of every approach at one time step. Values depend on the entry arm only.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalState {
    ls: Vec<u8>,
    t_switch: Vec<u64>,
    la: Vec<f64>,
}

impl SignalState {
    /// State with the given adjustments and lights inferred from them.
    pub fn from_arms(la: Vec<f64>) -> Self {
        SignalState {
            ls: la.iter().map(|&a| u8::from(a > 0.0)).collect(),
            t_switch: vec![u64::MAX; la.len()],
            la,
        }
    }

    /// Signal `LS` of routes entering from arm `i`.
    pub fn ls(&self, i: usize) -> u8 {
        self.ls.get(i).copied().unwrap_or(0)
    }

    /// Steps since the light of arm `i` last changed.
    pub fn t_switch(&self, i: usize) -> u64 {
        self.t_switch.get(i).copied().unwrap_or(u64::MAX)
    }

    /// Speed adjustment `LA` of routes entering from arm `i`.
    pub fn la(&self, i: usize) -> f64 {
        self.la.get(i).copied().unwrap_or(0.0)
    }
}

/// Ramp factor `clamp01((t_switch - t_safe) t_real a_real / v_real)`.
pub fn ramp(s: &SignalSchedule, t_switch: u64) -> f64 {
    ((t_switch as f64 - s.t_safe) * s.t_real * s.a_real / s.v_real).clamp(0.0, 1.0)
}

/// Light state at step `t`, as if the schedule had been running forever.
pub fn advance_signal(schedule: &SignalSchedule, t: u64) -> SignalState {
    let tg = schedule.green.max(1);
    let phase = (t + schedule.shift) % (2 * tg);
    let first_half = phase < tg;
    let t_switch = phase % tg + 1;
    let n = schedule.arms();
    let mut state = SignalState {
        ls: vec![0; n],
        t_switch: vec![t_switch; n],
        la: vec![0.0; n],
    };
    let green = if first_half { &schedule.axis_i } else { &schedule.axis_j };
    let factor = ramp(schedule, t_switch);
    for &a in green {
        state.ls[a] = 1;
        state.la[a] = factor;
    }
    state
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn schedule(green: u64, shift: u64) -> SignalSchedule {
        SignalSchedule {
            green,
            shift,
            axis_i: vec![0, 2],
            axis_j: vec![1, 3],
            a_real: 1.5,
            t_safe: 2.0,
            t_real: 2.88,
            v_real: 50.0 / 3.6,
        }
    }

    #[test]
    fn first_half_cycle_is_green_on_i() {
        let st = advance_signal(&schedule(10, 0), 5);
        assert_eq!(st.ls(0), 1);
        assert_eq!(st.ls(1), 0);
        let st = advance_signal(&schedule(10, 0), 15);
        assert_eq!(st.ls(0), 0);
        assert_eq!(st.ls(3), 1);
    }

    #[test]
    fn ramp_values() {
        let s = schedule(10, 0);
        assert_eq!(ramp(&s, 2), 0.0);
        assert_relative_eq!(ramp(&s, 4), 2.0 * 2.88 * 1.5 / (50.0 / 3.6), epsilon = 1e-12);
        assert_relative_eq!(ramp(&s, 4), 0.62208, epsilon = 1e-5);
        assert_eq!(ramp(&s, 100), 1.0);
    }

    #[test]
    fn switch_counter_restarts_each_phase() {
        let s = schedule(10, 3);
        assert_eq!(advance_signal(&s, 7).t_switch(0), 1);
        assert_eq!(advance_signal(&s, 0).t_switch(0), 4);
        assert_eq!(advance_signal(&s, 16).t_switch(1), 10);
    }

    #[test]
    fn red_means_no_adjustment() {
        let s = schedule(3, 0);
        for t in 0..30 {
            let st = advance_signal(&s, t);
            for a in 0..4 {
                if st.ls(a) == 0 {
                    assert_eq!(st.la(a), 0.0);
                }
                assert!((0.0..=1.0).contains(&st.la(a)));
            }
        }
    }

    #[test]
    fn validation() {
        let mut s = schedule(0, 0);
        assert!(s.validate(4).is_err());
        s.green = 2;
        s.axis_j.push(0);
        assert!(s.validate(4).is_err());
    }
}
