//! Per-step reward with curriculum multipliers, and curriculum progress.

use serde::{Deserialize, Serialize};

use crate::dynamics::AgentState;
use crate::error::{Error, Result};
use crate::world::AgentEvents;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub w_g: f64,
    pub w_l: f64,
    pub w_f: f64,
    pub w_e: f64,
    pub w_t: f64,
    pub w_a: f64,
    pub w_s: f64,
    pub w_p: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub t_ramp: f64,
    /// Distance below which progress shaping fades out.
    pub d_near: f64,
    /// Speed floor used in the progress and alignment divisions.
    pub v_eps: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w_g: 3.3,
            w_l: 0.005,
            w_f: 1.0,
            w_e: 0.9,
            w_t: 8.3,
            w_a: 0.09,
            w_s: 0.07,
            w_p: 0.25,
            lambda: 2.69,
            kappa: 1.01,
            t_ramp: 5.0,
            d_near: 10.0,
            v_eps: 0.5,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [
            self.w_g, self.w_l, self.w_f, self.w_e, self.w_t, self.w_a, self.w_s, self.w_p,
        ];
        if w.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("reward weights must be positive".into()));
        }
        if !(self.lambda > 1.0 && self.kappa > 1.0 && self.t_ramp > 0.0 && self.d_near > 0.0 && self.v_eps > 0.0) {
            return Err(Error::Config("need lambda > 1, kappa > 1 and positive t_ramp, d_near, v_eps".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Multipliers {
    pub m_g: f64,
    pub m_f: f64,
    pub m_e: f64,
    pub m_t: f64,
    pub m_p: f64,
}

pub fn multipliers(rho: f64, w_s: f64, w_a: f64, lambda: f64) -> Result<Multipliers> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Domain(format!("rho = {rho} outside [0, 1]")));
    }
    if !(0.0..=1.0).contains(&w_s) || !(0.0..=1.0).contains(&w_a) {
        return Err(Error::Domain(format!("goal quality ({w_s}, {w_a}) outside [0, 1]")));
    }
    let terminal = 1.0 + (lambda - 1.0) * rho;
    Ok(Multipliers {
        m_g: 1.0 - rho * (1.0 - w_s * w_a),
        m_f: terminal,
        m_e: terminal,
        m_t: terminal,
        m_p: 1.0 - rho,
    })
}

/// Distance decay: zero at the goal, one beyond `d_near`.
pub fn psi(d: f64, d_near: f64) -> f64 {
    (d / d_near).clamp(0.0, 1.0)
}

pub fn progress_reward(d_prev: f64, d_curr: f64, v: f64, kappa: f64, d_near: f64, v_eps: f64) -> f64 {
    ((d_prev - kappa * d_curr) / v.max(v_eps) * psi(d_curr, d_near)).clamp(-0.5, 0.5)
}

pub fn alignment_ramp(d: f64, v: f64, t_ramp: f64, v_eps: f64) -> f64 {
    (1.0 - d / (v.max(v_eps) * t_ramp)).clamp(0.0, 1.0)
}

pub fn alignment_penalty(delta_theta: f64, d: f64, v: f64, t_ramp: f64, v_eps: f64) -> f64 {
    delta_theta * alignment_ramp(d, v, t_ramp, v_eps)
}

/// Unsigned term magnitudes. The total is
/// `goal + lane - collision - road_edge - termination - alignment - speed + progress`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardBreakdown {
    pub goal: f64,
    pub lane: f64,
    pub collision: f64,
    pub road_edge: f64,
    pub termination: f64,
    pub alignment: f64,
    pub speed: f64,
    pub progress: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn signed_terms(&self) -> [f64; 8] {
        [
            self.goal,
            self.lane,
            -self.collision,
            -self.road_edge,
            -self.termination,
            -self.alignment,
            -self.speed,
            self.progress,
        ]
    }
}

pub fn step_reward(
    events: &AgentEvents,
    agent: &AgentState,
    weights: &RewardWeights,
    rho: f64,
) -> Result<RewardBreakdown> {
    let (w_s, w_a) = if events.goal {
        (events.w_s, events.w_a)
    } else {
        (1.0, 1.0)
    };
    let m = multipliers(rho, w_s, w_a, weights.lambda)?;
    let v = agent.speed;
    let ind = |b: bool| b as u8 as f64;
    let mut r = RewardBreakdown {
        goal: weights.w_g * m.m_g * ind(events.goal),
        lane: weights.w_l * (1.0 - ind(events.lane_boundary)),
        collision: weights.w_f * m.m_f * ind(events.at_fault),
        road_edge: weights.w_e * m.m_e * ind(events.road_edge),
        termination: weights.w_t * m.m_t * events.early_termination.unwrap_or(0.0),
        alignment: weights.w_a * alignment_penalty(events.delta_theta, events.d_curr, v, weights.t_ramp, weights.v_eps),
        speed: weights.w_s * (v - agent.spec.v_goal).abs(),
        progress: weights.w_p
            * m.m_p
            * progress_reward(events.d_prev, events.d_curr, v, weights.kappa, weights.d_near, weights.v_eps),
        total: 0.0,
    };
    r.total = r.signed_terms().iter().sum();
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioPhase {
    Pre,
    Post,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurriculumState {
    pub rho: f64,
    pub ramp_start: u64,
    pub ramp_end: u64,
    pub phase: ScenarioPhase,
}

impl CurriculumState {
    pub fn new(ramp_start: u64, ramp_end: u64) -> Self {
        CurriculumState {
            rho: 0.0,
            ramp_start,
            ramp_end,
            phase: ScenarioPhase::Pre,
        }
    }

    /// Ramp over `[start_frac, end_frac]` of `total_steps`.
    pub fn with_fractions(total_steps: u64, start_frac: f64, end_frac: f64) -> Self {
        let at = |f: f64| (total_steps as f64 * f).round() as u64;
        Self::new(at(start_frac), at(end_frac))
    }
}

pub fn advance_curriculum(state: &CurriculumState, step: u64) -> CurriculumState {
    let target = if state.ramp_end <= state.ramp_start {
        if step >= state.ramp_end {
            1.0
        } else {
            0.0
        }
    } else {
        let span = (state.ramp_end - state.ramp_start) as f64;
        ((step as f64 - state.ramp_start as f64) / span).clamp(0.0, 1.0)
    };
    let rho = state.rho.max(target);
    CurriculumState {
        rho,
        phase: if rho >= 1.0 {
            ScenarioPhase::Post
        } else {
            ScenarioPhase::Pre
        },
        ..*state
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use crate::scenario::AgentSpec;
    use proptest::prelude::*;

    fn agent(v: f64, v_goal: f64) -> AgentState {
        let mut s = AgentSpec::car(Vec2::ZERO, 0.0, Vec2::new(50.0, 0.0), 4.5, 1.9);
        s.v_init = v;
        s.v_goal = v_goal;
        AgentState::from_spec(&s)
    }

    #[test]
    fn multiplier_endpoints() {
        let m = multipliers(0.0, 0.1, 0.1, 2.69).unwrap();
        assert_eq!((m.m_g, m.m_f, m.m_e, m.m_t, m.m_p), (1.0, 1.0, 1.0, 1.0, 1.0));
        let m = multipliers(1.0, 1.0, 1.0, 2.69).unwrap();
        assert_eq!((m.m_f, m.m_e, m.m_t), (2.69, 2.69, 2.69));
        assert_eq!((m.m_g, m.m_p), (1.0, 0.0));
        let m = multipliers(1.0, 0.1, 0.1, 2.69).unwrap();
        assert!((m.m_g - 0.01).abs() < 1e-12);
        assert!(multipliers(1.5, 1.0, 1.0, 2.69).is_err());
    }

    #[test]
    fn progress_examples() {
        let r = progress_reward(100.0, 99.0, 10.0, 1.01, 10.0, 0.5);
        assert!((r - 0.001).abs() < 1e-12);
        assert_eq!(progress_reward(100.0, 100.0, 0.5, 1.01, 10.0, 0.5), -0.5);
        assert_eq!(progress_reward(3.0, 0.0, 5.0, 1.01, 10.0, 0.5), 0.0);
    }

    #[test]
    fn alignment_examples() {
        assert_eq!(alignment_penalty(0.3, 60.0, 10.0, 5.0, 0.5), 0.0);
        assert_eq!(alignment_penalty(0.3, 0.0, 10.0, 5.0, 0.5), 0.3);
        assert!((alignment_penalty(0.2, 25.0, 10.0, 5.0, 0.5) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn goal_and_collision_and_termination_terms() {
        let w = RewardWeights::default();
        let a = agent(10.0, 10.0);
        let goal = AgentEvents {
            goal: true,
            w_s: 1.0,
            w_a: 1.0,
            stepped: true,
            ..Default::default()
        };
        let r = step_reward(&goal, &a, &w, 0.0).unwrap();
        assert_eq!(r.total, 3.3 + 0.005);

        let crash = AgentEvents {
            collision: true,
            at_fault: true,
            d_prev: 40.0,
            d_curr: 40.0,
            ..Default::default()
        };
        assert_eq!(step_reward(&crash, &a, &w, 1.0).unwrap().collision, 1.0 * 2.69);
        let victim = AgentEvents {
            at_fault: false,
            ..crash
        };
        assert_eq!(step_reward(&victim, &a, &w, 1.0).unwrap().collision, 0.0);

        let et = AgentEvents {
            early_termination: Some(80.0),
            d_prev: 80.0,
            d_curr: 80.0,
            ..Default::default()
        };
        assert_eq!(step_reward(&et, &a, &w, 0.0).unwrap().termination, 8.3 * 80.0);
    }

    #[test]
    fn curriculum_schedule() {
        let s = CurriculumState::new(100, 300);
        let a = advance_curriculum(&s, 50);
        assert_eq!((a.rho, a.phase), (0.0, ScenarioPhase::Pre));
        let b = advance_curriculum(&a, 200);
        assert_eq!(b.rho, 0.5);
        let c = advance_curriculum(&b, 300);
        assert_eq!((c.rho, c.phase), (1.0, ScenarioPhase::Post));
        // never decreases
        assert_eq!(advance_curriculum(&c, 0).rho, 1.0);
    }

    proptest! {
        #[test]
        fn breakdown_sums_to_total(
            goal in any::<bool>(), fault in any::<bool>(), edge in any::<bool>(), lane in any::<bool>(),
            et in proptest::option::of(0.0f64..200.0), qs in prop::bool::ANY, qa in prop::bool::ANY,
            d_prev in 0.0f64..200.0, d_curr in 0.0f64..200.0, dth in 0.0f64..3.2,
            v in 0.0f64..40.0, vg in 0.0f64..40.0, rho in 0.0f64..=1.0,
        ) {
            let e = AgentEvents {
                stepped: true, collision: fault, at_fault: fault, road_edge: edge, lane_boundary: lane, goal,
                w_s: if qs { 1.0 } else { 0.1 }, w_a: if qa { 1.0 } else { 0.1 },
                early_termination: et, d_prev, d_curr, delta_theta: dth,
            };
            let r = step_reward(&e, &agent(v, vg), &RewardWeights::default(), rho).unwrap();
            let sum: f64 = r.signed_terms().iter().sum();
            prop_assert!((sum - r.total).abs() <= 1e-12);
            let p = progress_reward(d_prev, d_curr, v, 1.01, 10.0, 0.5);
            prop_assert!((-0.5..=0.5).contains(&p));
            let ramp = alignment_ramp(d_curr, v, 5.0, 0.5);
            prop_assert!((0.0..=1.0).contains(&ramp));
        }

        #[test]
        fn multiplier_monotonicity(r1 in 0.0f64..=1.0, r2 in 0.0f64..=1.0, qs in prop::bool::ANY, qa in prop::bool::ANY) {
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let (ws, wa) = (if qs { 1.0 } else { 0.1 }, if qa { 1.0 } else { 0.1 });
            let a = multipliers(lo, ws, wa, 2.69).unwrap();
            let b = multipliers(hi, ws, wa, 2.69).unwrap();
            prop_assert!(b.m_f >= a.m_f && b.m_e >= a.m_e && b.m_t >= a.m_t);
            prop_assert!(b.m_p <= a.m_p);
            if ws * wa < 1.0 { prop_assert!(b.m_g <= a.m_g) } else { prop_assert_eq!(a.m_g, b.m_g) }
        }
    }
}
