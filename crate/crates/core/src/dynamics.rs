//! Discrete-time kinematic bicycle model with trailer articulation and the
//! discrete jerk / steering-rate action lattice.
//!
//! One step updates, in order: acceleration from jerk, steering angle from
//! steering rate, speed from the new acceleration, yaw from the new speed
//! and steering, then position along the new heading. Trucks additionally
//! integrate the hitch angle with the yaw rate of the same step.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{OrientedBox, Vec2};
use crate::scenario::AgentSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VehicleType {
    Car,
    Truck,
}

/// Vehicle and trailer extents in meters. Trailer terms are zero for cars.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dimensions {
    #[serde(rename = "l")]
    pub length: f64,
    #[serde(rename = "w")]
    pub width: f64,
    #[serde(rename = "l_tr")]
    pub trailer_length: f64,
    #[serde(rename = "w_tr")]
    pub trailer_width: f64,
}

/// Cartesian product of jerk and steering-rate values. Token `t` maps to
/// `(t / n_steer, t % n_steer)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionLattice {
    pub jerk_values: Vec<f64>,
    pub steer_rate_values: Vec<f64>,
}

impl Default for ActionLattice {
    fn default() -> Self {
        ActionLattice {
            jerk_values: vec![-10.0, -5.0, -2.0, 0.0, 2.0, 5.0, 10.0],
            steer_rate_values: vec![-0.3, -0.1, -0.03, 0.0, 0.03, 0.1, 0.3],
        }
    }
}

fn check_axis(name: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() || !values.contains(&0.0) {
        return Err(Error::Config(format!("{name} values must include 0")));
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("{name} values must be strictly increasing")));
    }
    let n = values.len();
    for k in 0..n {
        if values[k] != -values[n - 1 - k] {
            return Err(Error::Config(format!("{name} values must be symmetric about 0")));
        }
    }
    Ok(())
}

impl ActionLattice {
    pub fn new(jerk_values: Vec<f64>, steer_rate_values: Vec<f64>) -> Result<Self> {
        let l = ActionLattice {
            jerk_values,
            steer_rate_values,
        };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<()> {
        check_axis("jerk", &self.jerk_values)?;
        check_axis("steer rate", &self.steer_rate_values)
    }

    pub fn len(&self) -> usize {
        self.jerk_values.len() * self.steer_rate_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn token(&self, jerk_index: usize, steer_index: usize) -> usize {
        jerk_index * self.steer_rate_values.len() + steer_index
    }

    pub fn indices(&self, token: usize) -> Result<(usize, usize)> {
        if token >= self.len() {
            return Err(Error::InvalidToken {
                token,
                count: self.len(),
            });
        }
        let n = self.steer_rate_values.len();
        Ok((token / n, token % n))
    }

    /// Unscaled (jerk, steer rate) of a token.
    pub fn values(&self, token: usize) -> Result<(f64, f64)> {
        let (j, s) = self.indices(token)?;
        Ok((self.jerk_values[j], self.steer_rate_values[s]))
    }

    /// Token of the (0, 0) command.
    pub fn zero_token(&self) -> usize {
        let j = self.jerk_values.iter().position(|&v| v == 0.0).unwrap_or(0);
        let s = self.steer_rate_values.iter().position(|&v| v == 0.0).unwrap_or(0);
        self.token(j, s)
    }
}

/// Map a token to continuous commands. Only the longitudinal command is
/// scaled by the agent's action-range scalar.
pub fn decode_action(token: usize, alpha: f64, lattice: &ActionLattice) -> Result<(f64, f64)> {
    let (jerk, steer_rate) = lattice.values(token)?;
    Ok((alpha * jerk, steer_rate))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeBounds {
    pub a_min: f64,
    pub a_max: f64,
    pub steer_max: f64,
    pub v_cap: f64,
    pub wheelbase_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsBounds {
    pub car: TypeBounds,
    pub truck: TypeBounds,
}

impl Default for DynamicsBounds {
    fn default() -> Self {
        DynamicsBounds {
            car: TypeBounds {
                a_min: -8.0,
                a_max: 4.0,
                steer_max: 0.55,
                v_cap: 45.0,
                wheelbase_fraction: 0.6,
            },
            truck: TypeBounds {
                a_min: -5.0,
                a_max: 2.5,
                steer_max: 0.45,
                v_cap: 40.0,
                wheelbase_fraction: 0.6,
            },
        }
    }
}

impl DynamicsBounds {
    pub fn get(&self, vtype: VehicleType) -> &TypeBounds {
        match vtype {
            VehicleType::Car => &self.car,
            VehicleType::Truck => &self.truck,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("car", &self.car), ("truck", &self.truck)] {
            if !(b.a_min < 0.0 && 0.0 < b.a_max && b.steer_max > 0.0 && b.v_cap > 0.0) {
                return Err(Error::Config(format!("invalid {name} dynamics bounds")));
            }
            if !(b.wheelbase_fraction > 0.0 && b.wheelbase_fraction <= 1.0) {
                return Err(Error::Config(format!("invalid {name} wheelbase fraction")));
            }
        }
        Ok(())
    }
}

/// Kinematic state of one agent. `position` is the tractor (or car) box center.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
    pub accel: f64,
    pub steer: f64,
    pub hitch: f64,
    pub spec: AgentSpec,
}

impl AgentState {
    pub fn from_spec(spec: &AgentSpec) -> Self {
        AgentState {
            position: spec.start,
            heading: spec.start_heading,
            speed: spec.v_init,
            accel: 0.0,
            steer: 0.0,
            hitch: 0.0,
            spec: spec.clone(),
        }
    }

    pub fn forward(&self) -> Vec2 {
        Vec2::from_heading(self.heading)
    }

    pub fn is_truck(&self) -> bool {
        self.spec.vtype == VehicleType::Truck
    }

    pub fn wheelbase(&self, bounds: &DynamicsBounds) -> f64 {
        bounds.get(self.spec.vtype).wheelbase_fraction * self.spec.dims.length
    }
}

/// Hitch-angle recursion, clipped to [-pi/2, pi/2].
pub fn hitch_update(phi: f64, theta_dot: f64, speed: f64, trailer_length: f64, dt: f64) -> f64 {
    let next = phi + (theta_dot - speed / trailer_length * phi.sin()) * dt;
    next.clamp(-FRAC_PI_2, FRAC_PI_2)
}

/// Next hitch angle for a truck given the yaw rate applied this step.
pub fn step_hitch(state: &AgentState, theta_dot: f64, dt: f64) -> Result<f64> {
    let l_tr = state.spec.dims.trailer_length;
    if !state.is_truck() || l_tr <= 0.0 {
        return Err(Error::NotArticulated);
    }
    Ok(hitch_update(state.hitch, theta_dot, state.speed, l_tr, dt))
}

/// Advance one agent by `dt` under the given jerk and steering rate.
pub fn step_bicycle(state: &AgentState, jerk: f64, steer_rate: f64, dt: f64, bounds: &DynamicsBounds) -> AgentState {
    let b = bounds.get(state.spec.vtype);
    let accel = (state.accel + jerk * dt).clamp(b.a_min, b.a_max);
    let steer = (state.steer + steer_rate * dt).clamp(-b.steer_max, b.steer_max);
    let speed = (state.speed + accel * dt).clamp(0.0, b.v_cap);
    let wheelbase = b.wheelbase_fraction * state.spec.dims.length;
    let theta_dot = speed * steer.tan() / wheelbase;
    let heading = state.heading + theta_dot * dt;
    let position = state.position + Vec2::from_heading(heading) * (speed * dt);
    let hitch = if state.is_truck() && state.spec.dims.trailer_length > 0.0 {
        hitch_update(state.hitch, theta_dot, speed, state.spec.dims.trailer_length, dt)
    } else {
        0.0
    };
    AgentState {
        position,
        heading,
        speed,
        accel,
        steer,
        hitch,
        spec: state.spec.clone(),
    }
}

/// Collision footprint: the vehicle box, plus the trailer box for trucks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    boxes: [OrientedBox; 2],
    count: usize,
}

impl Footprint {
    pub fn boxes(&self) -> &[OrientedBox] {
        &self.boxes[..self.count]
    }

    pub fn overlaps(&self, other: &Footprint) -> bool {
        self.boxes().iter().any(|a| other.boxes().iter().any(|b| a.overlaps(b)))
    }
}

/// Tractor box centered at the pose; for trucks a trailer box hangs from the
/// hitch at the tractor rear axle, rotated by the hitch angle (trailer
/// heading = heading - hitch).
pub fn footprint_with(state: &AgentState, wheelbase_fraction: f64) -> Footprint {
    let d = &state.spec.dims;
    let tractor = OrientedBox::new(state.position, state.heading, d.length, d.width);
    if !state.is_truck() || d.trailer_length <= 0.0 {
        return Footprint {
            boxes: [tractor; 2],
            count: 1,
        };
    }
    let hitch_point = state.position - state.forward() * (0.5 * wheelbase_fraction * d.length);
    let trailer_heading = state.heading - state.hitch;
    let center = hitch_point - Vec2::from_heading(trailer_heading) * (0.5 * d.trailer_length);
    let trailer = OrientedBox::new(center, trailer_heading, d.trailer_length, d.trailer_width);
    Footprint {
        boxes: [tractor, trailer],
        count: 2,
    }
}

/// Footprint under the default wheelbase fraction.
pub fn footprint(state: &AgentState) -> Footprint {
    let b = DynamicsBounds::default();
    footprint_with(state, b.get(state.spec.vtype).wheelbase_fraction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::AgentSpec;
    use proptest::prelude::*;

    fn car(v: f64) -> AgentState {
        let mut spec = AgentSpec::car(Vec2::ZERO, 0.0, Vec2::new(100.0, 0.0), 5.0, 2.0);
        spec.v_init = v;
        AgentState::from_spec(&spec)
    }

    fn truck(v: f64, hitch: f64) -> AgentState {
        let spec = AgentSpec {
            vtype: VehicleType::Truck,
            dims: Dimensions {
                length: 6.0,
                width: 2.5,
                trailer_length: 10.0,
                trailer_width: 2.5,
            },
            v_init: v,
            ..AgentSpec::car(Vec2::ZERO, 0.0, Vec2::new(100.0, 0.0), 6.0, 2.5)
        };
        let mut s = AgentState::from_spec(&spec);
        s.hitch = hitch;
        s
    }

    #[test]
    fn decode_examples() {
        let lattice = ActionLattice::default();
        let t = lattice.token(6, 5);
        assert_eq!(lattice.values(t).unwrap(), (10.0, 0.1));
        assert_eq!(decode_action(t, 0.5, &lattice).unwrap(), (5.0, 0.1));
        let z = lattice.zero_token();
        assert_eq!(z, 24);
        assert_eq!(decode_action(z, 0.37, &lattice).unwrap(), (0.0, 0.0));
        for tok in 0..lattice.len() {
            assert_eq!(decode_action(tok, 1.0, &lattice).unwrap(), lattice.values(tok).unwrap());
        }
        assert!(matches!(decode_action(49, 1.0, &lattice), Err(Error::InvalidToken { token: 49, count: 49 })));
    }

    #[test]
    fn lattice_is_bijection() {
        let lattice = ActionLattice::default();
        let mut seen = std::collections::HashSet::new();
        for tok in 0..lattice.len() {
            let (j, s) = lattice.indices(tok).unwrap();
            assert_eq!(lattice.token(j, s), tok);
            let (a, b) = lattice.values(tok).unwrap();
            assert!(seen.insert((a.to_bits(), b.to_bits())));
        }
    }

    #[test]
    fn lattice_validation() {
        assert!(ActionLattice::new(vec![-1.0, 0.0, 2.0], vec![0.0]).is_err());
        assert!(ActionLattice::new(vec![-1.0, 1.0], vec![0.0]).is_err());
        assert!(ActionLattice::new(vec![-1.0, 0.0, 1.0], vec![0.0]).is_ok());
    }

    #[test]
    fn straight_line_step() {
        let s = car(10.0);
        let n = step_bicycle(&s, 0.0, 0.0, 0.1, &DynamicsBounds::default());
        assert_eq!(n.position, Vec2::new(1.0, 0.0));
        assert_eq!(n.heading, 0.0);
    }

    #[test]
    fn yaw_rate_example() {
        let mut s = car(20.0);
        s.steer = 0.1;
        let n = step_bicycle(&s, 0.0, 0.0, 0.1, &DynamicsBounds::default());
        let theta_dot = 20.0 * 0.1f64.tan() / 3.0;
        assert!((theta_dot - 0.6690).abs() < 5e-4);
        assert!((n.heading - theta_dot * 0.1).abs() < 1e-15);
        assert!((n.heading - 0.06690).abs() < 5e-5);
    }

    #[test]
    fn no_reverse_motion() {
        let b = DynamicsBounds::default();
        let s = car(0.0);
        let n = step_bicycle(&s, b.car.a_min / 0.1 * 2.0, 0.0, 0.1, &b);
        assert_eq!(n.speed, 0.0);
        assert_eq!(n.accel, b.car.a_min);
        assert_eq!(n.position, Vec2::ZERO);
    }

    #[test]
    fn hitch_examples() {
        let s = truck(10.0, 0.0);
        assert_eq!(step_hitch(&s, 0.0, 0.1).unwrap(), 0.0);
        let s = truck(10.0, 0.1);
        let phi = step_hitch(&s, 0.0, 0.1).unwrap();
        assert!((phi - 0.0900167).abs() < 1e-7);
        assert_eq!(phi, 0.1 - 1.0 * 0.1f64.sin() * 0.1);
        let s = truck(0.0, 0.0);
        assert_eq!(step_hitch(&s, 20.0, 0.1).unwrap(), FRAC_PI_2);
        assert_eq!(step_hitch(&s, -20.0, 0.1).unwrap(), -FRAC_PI_2);
        assert!(matches!(step_hitch(&car(5.0), 0.0, 0.1), Err(Error::NotArticulated)));
    }

    #[test]
    fn car_footprint() {
        let fp = footprint(&car(0.0));
        assert_eq!(fp.boxes().len(), 1);
        let c = fp.boxes()[0].corners();
        assert_eq!(c[0], Vec2::new(2.5, 1.0));
        assert_eq!(c[2], Vec2::new(-2.5, -1.0));
    }

    #[test]
    fn truck_footprint_straight_and_articulated() {
        let fp = footprint(&truck(0.0, 0.0));
        let [tractor, trailer] = [fp.boxes()[0], fp.boxes()[1]];
        assert_eq!(trailer.heading, tractor.heading);
        assert!(trailer.center.y.abs() < 1e-12);
        // hitch at rear axle: -0.3 * 6 = -1.8, trailer center 5 m further back
        assert!((trailer.center.x - (-6.8)).abs() < 1e-12);

        let phi = std::f64::consts::FRAC_PI_4;
        let fp = footprint(&truck(0.0, phi));
        let trailer = fp.boxes()[1];
        assert!((trailer.heading - (-phi)).abs() < 1e-15);
        // independent corner oracle: pivot (-1.8, 0), axis at -pi/4
        let pivot = Vec2::new(-1.8, 0.0);
        let (c, s) = ((-phi).cos(), (-phi).sin());
        let axis = Vec2::new(c, s);
        let side = Vec2::new(-s, c);
        let front_left = pivot + side * 1.25;
        let rear_right = pivot - axis * 10.0 - side * 1.25;
        let corners = trailer.corners();
        assert!(corners[0].dist(front_left) < 1e-12);
        assert!(corners[2].dist(rear_right) < 1e-12);
    }

    #[test]
    fn hitch_decays_without_yaw() {
        for phi0 in [-1.5, -0.7, -0.1, 0.2, 0.9, 1.55] {
            let mut s = truck(12.0, phi0);
            let mut prev = phi0.abs();
            for _ in 0..200 {
                s.hitch = step_hitch(&s, 0.0, 0.1).unwrap();
                assert!(s.hitch.abs() <= prev + 1e-15);
                prev = s.hitch.abs();
            }
        }
    }

    #[test]
    fn integration_error_shrinks_with_dt() {
        // fixed 5 s maneuver: constant jerk then steer-rate pulses
        let run = |dt: f64| {
            let b = DynamicsBounds::default();
            let mut s = car(10.0);
            let steps = (5.0 / dt).round() as usize;
            for k in 0..steps {
                let t = k as f64 * dt;
                let steer_rate = if t < 1.0 {
                    0.1
                } else if t < 2.0 {
                    -0.1
                } else {
                    0.0
                };
                s = step_bicycle(&s, 1.0, steer_rate, dt, &b);
            }
            s.position
        };
        let reference = run(0.1 / 8.0);
        let e1 = run(0.1).dist(reference);
        let e2 = run(0.05).dist(reference);
        let e3 = run(0.025).dist(reference);
        assert!(e1 > e2 && e2 > e3, "{e1} {e2} {e3}");
        assert!(e2 / e1 < 0.75 && e3 / e2 < 0.75);
    }

    proptest! {
        #[test]
        fn step_respects_bounds(tokens in proptest::collection::vec(0usize..49, 1..200), truck_agent in any::<bool>(), alpha in 0.1f64..1.0) {
            let b = DynamicsBounds::default();
            let lattice = ActionLattice::default();
            let mut s = if truck_agent { truck(15.0, 0.0) } else { car(15.0) };
            let tb = *b.get(s.spec.vtype);
            for t in tokens {
                let (j, r) = decode_action(t, alpha, &lattice).unwrap();
                s = step_bicycle(&s, j, r, 0.1, &b);
                prop_assert!(s.speed >= 0.0 && s.speed <= tb.v_cap);
                prop_assert!(s.steer.abs() <= tb.steer_max);
                prop_assert!(s.accel >= tb.a_min && s.accel <= tb.a_max);
                prop_assert!(s.hitch.abs() <= FRAC_PI_2);
                prop_assert!(s.position.is_finite() && s.heading.is_finite());
            }
        }
    }
}
