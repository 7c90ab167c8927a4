use std::collections::{HashSet, VecDeque};
use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;
use std::sync::{Arc, LazyLock};

use highway_selfplay::dynamics::{footprint, step_hitch, ActionLattice, AgentState, Dimensions, VehicleType};
use highway_selfplay::eval::{displacement_errors, score_episode, AgentOutcome};
use highway_selfplay::geometry::Vec2;
use highway_selfplay::map::{build_lane_graph, load_map, road_points_near, LaneGraph, MapBundle, Side};
use highway_selfplay::reward::{step_reward, RewardWeights};
use highway_selfplay::scenario::{
    build_pool, sample_world, truck_count, AgentSpec, GeneratorParams, SamplerConfig, StartGoalPool,
};
use highway_selfplay::train::{surrogate, Algorithm, ClipParams};
use highway_selfplay::world::{attribute_fault, step_world, AgentEvents, MapContext, World, WorldConfig};
use proptest::prelude::*;

const PARAMS: GeneratorParams = GeneratorParams {
    p_lc: 0.5,
    p_truck: 0.3,
    n_min: 3,
    n_max: 9,
    d_min: 50.0,
    d_max: 130.0,
    k: 2,
};

struct Fixture {
    map: Arc<MapContext>,
    graph: LaneGraph,
    pool: StartGoalPool,
}

fn fixture(map: MapBundle) -> Fixture {
    let graph = build_lane_graph(&map);
    let pool = build_pool(&graph, &PARAMS, 11).unwrap();
    Fixture {
        map: Arc::new(MapContext::new(map, 4.0)),
        graph,
        pool,
    }
}

static STRAIGHT: LazyLock<Fixture> = LazyLock::new(|| fixture(MapBundle::straight_highway("s", 3, 400.0, 3.7)));
static CURVE: LazyLock<Fixture> = LazyLock::new(|| {
    fixture(load_map(Path::new(env!("CARGO_MANIFEST_DIR")).join("data/maps/curve_2lane.json")).unwrap())
});

fn pick(curve: bool) -> &'static Fixture {
    if curve {
        &CURVE
    } else {
        &STRAIGHT
    }
}

/// Every node reachable from `start` by successor edges and lateral moves.
fn reachable(g: &LaneGraph, start: usize) -> HashSet<usize> {
    let mut seen = HashSet::from([start]);
    let mut work = VecDeque::from([start]);
    while let Some(n) = work.pop_front() {
        let lateral = [g.lateral(n, Side::Left), g.lateral(n, Side::Right)];
        for m in g.successors[n].iter().copied().chain(lateral.into_iter().flatten()) {
            if seen.insert(m) {
                work.push_back(m);
            }
        }
    }
    seen
}

fn truck(hitch: f64, speed: f64, trailer_length: f64) -> AgentState {
    let mut spec = AgentSpec::car(Vec2::new(0.0, 0.0), 0.0, Vec2::new(100.0, 0.0), 6.0, 2.5);
    spec.vtype = VehicleType::Truck;
    spec.dims = Dimensions {
        length: 6.0,
        width: 2.5,
        trailer_length,
        trailer_width: 2.5,
    };
    spec.v_init = speed;
    let mut s = AgentState::from_spec(&spec);
    s.hitch = hitch;
    s
}

fn posed(x: f64, y: f64, heading: f64, length: f64, width: f64) -> AgentState {
    AgentState::from_spec(&AgentSpec::car(Vec2::new(x, y), heading, Vec2::new(0.0, 0.0), length, width))
}

fn outcome(goal: bool, fault: bool, edge: bool) -> AgentOutcome {
    AgentOutcome {
        goal_reached: goal,
        at_fault_collision: fault,
        any_agent_collision: fault,
        road_edge_collision: edge,
        ..AgentOutcome::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_worlds_are_valid(seed in any::<u64>(), curve in any::<bool>()) {
        let f = pick(curve);
        let s = sample_world(&f.graph, &f.pool, &PARAMS, &SamplerConfig::default(), &Default::default(), 20.0, seed)
            .unwrap();
        let n = s.agents.len() + s.placement_failures;
        prop_assert!((PARAMS.n_min..=PARAMS.n_max).contains(&n));
        if s.placement_failures == 0 {
            let trucks = s.agents.iter().filter(|a| a.vtype == VehicleType::Truck).count();
            prop_assert_eq!(trucks, truck_count(PARAMS.p_truck, n));
        }
        let states: Vec<AgentState> = s.agents.iter().map(AgentState::from_spec).collect();
        for i in 0..states.len() {
            for j in i + 1..states.len() {
                prop_assert!(!footprint(&states[i]).overlaps(&footprint(&states[j])), "agents {} and {} overlap", i, j);
            }
            let start = f.graph.nearest_node(s.agents[i].start);
            let goal = f.graph.nearest_node(s.agents[i].goal);
            prop_assert!(reachable(&f.graph, start).contains(&goal));
            // lateral hops are free, so a route may cut through an inner lane and
            // come back; each hop can move the chord by about one lane width
            let d = s.agents[i].start.dist(s.agents[i].goal);
            prop_assert!(d <= PARAMS.d_max + 2.0 * PARAMS.k as f64 * 4.0, "d = {}", d);
        }
    }

    #[test]
    fn hitch_angle_decays_without_yaw(phi in -FRAC_PI_2..FRAC_PI_2, v in 0.0f64..35.0, l in 4.0f64..14.0) {
        let mut s = truck(phi, v, l);
        for _ in 0..50 {
            let next = step_hitch(&s, 0.0, 0.1).unwrap();
            prop_assert!(next.abs() <= s.hitch.abs() + 1e-15);
            prop_assert!(next * s.hitch >= 0.0);
            s.hitch = next;
        }
    }

    #[test]
    fn hitch_stays_clipped(phi in -FRAC_PI_2..FRAC_PI_2, v in 0.0f64..35.0, yaw in -3.0f64..3.0) {
        let phi = step_hitch(&truck(phi, v, 10.0), yaw, 0.1).unwrap();
        prop_assert!(phi.abs() <= FRAC_PI_2);
    }

    #[test]
    fn fault_relabels_symmetrically(
        dx in -8.0f64..8.0, dy in -4.0f64..4.0, ha in -PI..PI, hb in -PI..PI,
        la in 3.5f64..8.0, lb in 3.5f64..8.0,
    ) {
        let a = posed(0.0, 0.0, ha, la, 2.0);
        let b = posed(dx, dy, hb, lb, 2.0);
        prop_assume!(footprint(&a).overlaps(&footprint(&b)));
        let (fa, fb) = attribute_fault(&a, &b);
        prop_assert!(fa || fb);
        prop_assert_eq!(attribute_fault(&b, &a), (fb, fa));
    }

    #[test]
    fn victims_pay_no_collision_cost(
        rho in 0.0f64..=1.0, v in 0.0f64..30.0, d_prev in 0.0f64..150.0, d_curr in 0.0f64..150.0,
        edge in any::<bool>(), goal in any::<bool>(),
    ) {
        let ev = AgentEvents {
            stepped: true, collision: true, at_fault: false, road_edge: edge, goal,
            w_s: 1.0, w_a: 1.0, d_prev, d_curr, ..AgentEvents::default()
        };
        let mut spec = AgentSpec::car(Vec2::new(0.0, 0.0), 0.0, Vec2::new(100.0, 0.0), 4.5, 1.9);
        spec.v_init = v;
        spec.v_goal = 12.0;
        let r = step_reward(&ev, &AgentState::from_spec(&spec), &RewardWeights::default(), rho).unwrap();
        prop_assert_eq!(r.collision, 0.0);
    }

    #[test]
    fn safe_rate_never_exceeds_goal_rate(flags in proptest::collection::vec(any::<(bool, bool, bool)>(), 1..40)) {
        let agents: Vec<AgentOutcome> = flags.iter().map(|&(g, f, e)| outcome(g, f, e)).collect();
        let s = score_episode(&agents);
        prop_assert!(s.sr <= s.gr);
        for rate in [s.gr, s.cr_a, s.cr_r, s.sr] {
            prop_assert!((0.0..=100.0).contains(&rate));
        }
    }

    #[test]
    fn displacement_is_translation_invariant(
        pts in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0), 2..80),
        tx in -1e3f64..1e3, ty in -1e3f64..1e3,
    ) {
        let sim: Vec<Vec2> = pts.iter().map(|p| Vec2::new(p.0, p.1)).collect();
        let reference: Vec<Vec2> = pts.iter().map(|p| Vec2::new(p.2, p.3)).collect();
        let t = Vec2::new(tx, ty);
        let shift = |v: &[Vec2]| v.iter().map(|p| *p + t).collect::<Vec<_>>();
        let a = displacement_errors(&sim, &reference, 0.1, 5.0).unwrap();
        let b = displacement_errors(&shift(&sim), &shift(&reference), 0.1, 5.0).unwrap();
        prop_assert!((a.ade - b.ade).abs() <= 1e-9 * a.ade.max(1.0));
        prop_assert!((a.fde - b.fde).abs() <= 1e-9 * a.fde.max(1.0));
        prop_assert!(a.fde >= 0.0 && a.ade >= 0.0);
        let same = displacement_errors(&reference, &reference, 0.1, 5.0).unwrap();
        prop_assert_eq!((same.ade, same.fde), (0.0, 0.0));
    }

    #[test]
    fn ppo_ignores_dual_clip_bound(ratio in 0.0f64..5.0, adv in -10.0f64..10.0, eps in 0.05f64..0.5, c1 in 0.0f64..3.0, c2 in 0.0f64..3.0) {
        let p = |eps_c| ClipParams { algorithm: Algorithm::Ppo, eps, eps_c };
        prop_assert_eq!(surrogate(ratio, adv, &p(c1)), surrogate(ratio, adv, &p(c2)));
    }

    #[test]
    fn road_points_are_a_sorted_subset(x in -20.0f64..420.0, y in -15.0f64..15.0, radius in 1.0f64..60.0, max in 1usize..64) {
        let f = &*STRAIGHT;
        let p = Vec2::new(x, y);
        let got = road_points_near(&f.graph, &f.map.map, p, radius, max).points;
        let all = road_points_near(&f.graph, &f.map.map, p, 1e9, usize::MAX).points;
        prop_assert!(got.len() <= max);
        for w in got.windows(2) {
            prop_assert!(w[0].position.dist(p) <= w[1].position.dist(p));
        }
        for q in &got {
            prop_assert!(q.position.dist(p) <= radius);
            prop_assert!(all.contains(q));
        }
        // nothing closer was left out
        let within = all.iter().filter(|q| q.position.dist(p) <= radius).count();
        prop_assert_eq!(got.len(), within.min(max));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn world_steps_are_deterministic(seed in any::<u64>(), curve in any::<bool>(), tokens in proptest::collection::vec(0usize..49, 60)) {
        let f = pick(curve);
        let spec = sample_world(&f.graph, &f.pool, &PARAMS, &SamplerConfig::default(), &Default::default(), 6.0, seed)
            .unwrap();
        let run = || {
            let mut w = World::new(f.map.clone(), &spec, WorldConfig::default(), ActionLattice::default());
            let mut events = Vec::new();
            for &t in &tokens {
                if w.is_done() {
                    break;
                }
                let actions = vec![t; w.num_active()];
                events.push(step_world(&mut w, &actions).unwrap());
            }
            (w.agents, w.status, events)
        };
        let (a, b) = (run(), run());
        prop_assert!(a == b);
    }
}
