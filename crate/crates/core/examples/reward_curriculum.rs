//! Show how the curriculum multipliers reshape the reward as training moves
//! from dense shaping to sparse terminal terms.
//!
//! cargo run --release --example reward_curriculum

use highway_selfplay::dynamics::AgentState;
use highway_selfplay::geometry::Vec2;
use highway_selfplay::reward::{advance_curriculum, multipliers, step_reward, CurriculumState, RewardWeights};
use highway_selfplay::scenario::AgentSpec;
use highway_selfplay::world::AgentEvents;

fn main() -> anyhow::Result<()> {
    let w = RewardWeights::default();
    println!("rho   m_g(1,1) m_g(.1,.1)  m_f/m_e/m_t  m_p");
    for rho in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let m = multipliers(rho, 1.0, 1.0, w.lambda)?;
        let low = multipliers(rho, 0.1, 0.1, w.lambda)?;
        println!("{rho:.2}  {:8.3} {:10.4}  {:11.4}  {:.2}", m.m_g, low.m_g, m.m_t, m.m_p);
    }

    let total = 2_000_000;
    let mut state = CurriculumState::with_fractions(total, 0.2, 0.8);
    for step in [0, 400_000, 800_000, 1_200_000, 1_600_000, 2_000_000] {
        state = advance_curriculum(&state, step);
        println!("step {step:>9}: rho {:.3}, scenarios {:?}", state.rho, state.phase);
    }

    let mut spec = AgentSpec::car(Vec2::new(0.0, 0.0), 0.0, Vec2::new(80.0, 0.0), 4.6, 1.9);
    spec.v_goal = 10.0;
    let mut agent = AgentState::from_spec(&spec);
    agent.speed = 11.0;
    let cruising = AgentEvents {
        stepped: true,
        d_prev: 41.0,
        d_curr: 39.9,
        ..Default::default()
    };
    let arrival = AgentEvents {
        goal: true,
        w_s: 1.0,
        w_a: 0.1,
        d_prev: 1.2,
        d_curr: 0.3,
        delta_theta: 0.2,
        ..cruising
    };
    let crash = AgentEvents {
        collision: true,
        at_fault: true,
        ..cruising
    };
    for (name, ev) in [("cruising", cruising), ("arrival", arrival), ("at-fault crash", crash)] {
        for rho in [0.0, 1.0] {
            let r = step_reward(&ev, &agent, &w, rho)?;
            println!(
                "{name:<15} rho {rho}: total {:+.4} (goal {:.3} lane {:.3} collision {:.3} alignment {:.4} speed {:.3} progress {:+.4})",
                r.total, r.goal, r.lane, r.collision, r.alignment, r.speed, r.progress
            );
        }
    }
    Ok(())
}
