//! Drive a car and an articulated truck open-loop through the action lattice
//! and print the kinematic state, including the hitch angle.
//!
//! cargo run --release --example vehicle_dynamics

use highway_selfplay::dynamics::{
    decode_action, step_bicycle, ActionLattice, AgentState, Dimensions, DynamicsBounds, VehicleType,
};
use highway_selfplay::geometry::Vec2;
use highway_selfplay::scenario::AgentSpec;

fn vehicle(vtype: VehicleType) -> AgentState {
    let mut spec = AgentSpec::car(Vec2::new(0.0, 0.0), 0.0, Vec2::new(200.0, 0.0), 4.6, 1.9);
    spec.v_init = 12.0;
    if vtype == VehicleType::Truck {
        spec.vtype = vtype;
        spec.dims = Dimensions {
            length: 6.2,
            width: 2.5,
            trailer_length: 12.0,
            trailer_width: 2.5,
        };
    }
    AgentState::from_spec(&spec)
}

fn main() -> anyhow::Result<()> {
    let lattice = ActionLattice::default();
    let bounds = DynamicsBounds::default();
    println!("{} tokens: jerk {:?}", lattice.len(), lattice.jerk_values);
    println!("steering rate {:?}", lattice.steer_rate_values);

    // hold a gentle left steer for 2 s, then straighten out for 2 s
    let left = lattice.token(lattice.jerk_values.len() / 2, lattice.steer_rate_values.len() / 2 + 1);
    let right = lattice.token(lattice.jerk_values.len() / 2, lattice.steer_rate_values.len() / 2 - 1);
    for vtype in [VehicleType::Car, VehicleType::Truck] {
        let mut s = vehicle(vtype);
        println!("{vtype:?}, alpha {}", s.spec.alpha);
        for step in 0..40 {
            let tok = if step < 20 { left } else { right };
            let (jerk, rate) = decode_action(tok, s.spec.alpha, &lattice)?;
            s = step_bicycle(&s, jerk, rate, 0.1, &bounds);
            if step % 5 == 4 {
                println!(
                    "  t={:.1}s pos ({:6.2}, {:5.2}) heading {:+.3} v {:5.2} steer {:+.3} hitch {:+.4}",
                    (step + 1) as f64 * 0.1,
                    s.position.x,
                    s.position.y,
                    s.heading,
                    s.speed,
                    s.steer,
                    s.hitch
                );
            }
        }
    }
    Ok(())
}
