//! Randomized containment scenarios for the desk arm.

use nalgebra::{DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::{tightened_model, ControllerConfig};
use crate::geometry::{obstacle_clearance, self_collision_distance};
use crate::kinematics::{JointState, RobotModel};
use crate::sca::dataset::label_state;
use crate::sdf::Obstacle;
use crate::viability::{braking_rollout, is_viable_jnt};

use super::scenario::{
    ConstraintToggles, DampingConfig, FieldConfig, InitialState, ModelPaths, MonitorConfig,
    RobotConfig, Scenario,
};

/// Clearance the initial braking rollout must keep from every obstacle.
const INITIAL_CLEARANCE: f64 = 0.15;
const MIN_INITIAL_SELF_DISTANCE: f64 = 0.05;

fn random_point(rng: &mut ChaCha8Rng, reach: f64, lo: f64, hi: f64) -> Vector2<f64> {
    let r = rng.gen_range(lo..hi) * reach;
    let a = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    Vector2::new(r * a.cos(), r * a.sin())
}

/// Desk-arm scenario with a viable random initial state, one or two
/// static obstacles clear of its braking trajectory and a random target.
pub fn random_scenario(seed: u64, models: ModelPaths) -> Scenario {
    let model = RobotModel::desk();
    let config = ControllerConfig::default();
    let limits = tightened_model(&model, &config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.dof();
    let reach = model.reach();
    let control_dt = 0.005;

    let state = loop {
        let q = DVector::from_fn(n, |i, _| {
            rng.gen_range(limits.q_lower[i] + 0.1..limits.q_upper[i] - 0.1)
        });
        let qd = DVector::from_fn(n, |i, _| rng.gen_range(-0.3..0.3) * limits.qd_max[i]);
        let s = JointState::new(q, qd);
        if self_collision_distance(&model, &s.q) > MIN_INITIAL_SELF_DISTANCE
            && is_viable_jnt(&limits, &s, control_dt)
            && label_state(&model, &s, 1e-3).viable
        {
            break s;
        }
    };

    let rollout = braking_rollout(&model, &state, 1e-3);
    let count = rng.gen_range(1..=2);
    let mut obstacles = Vec::new();
    while obstacles.len() < count {
        let center = random_point(&mut rng, reach, 0.25, 0.95);
        let radius = rng.gen_range(0.03..0.08);
        let clear = rollout
            .samples
            .iter()
            .all(|s| obstacle_clearance(&model, &s.q, &center, radius) >= INITIAL_CLEARANCE);
        if clear {
            obstacles.push(Obstacle::fixed(obstacles.len() as u32, center, radius));
        }
    }
    let target = random_point(&mut rng, reach, 0.2, 0.95);

    Scenario {
        name: format!("random-{seed}"),
        duration: 6.0,
        control_dt,
        physics_dt: 0.001,
        seed,
        robot: RobotConfig::default(),
        field: FieldConfig {
            x_star: [target.x, target.y],
            k: Some(2.0),
            gain: None,
        },
        initial: InitialState {
            q: state.q.iter().copied().collect(),
            qd: Some(state.qd.iter().copied().collect()),
        },
        damping: DampingConfig::default(),
        controller: config,
        constraints: ConstraintToggles::default(),
        models,
        monitor: MonitorConfig::default(),
        obstacles,
        pushes: Vec::new(),
        commands: Vec::new(),
        record_wall_clock: true,
        base_dir: Default::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_valid() {
        let models = ModelPaths {
            sca: Some("sca.bin".into()),
            sdf_dir: Some("sdf".into()),
            ..Default::default()
        };
        let a = random_scenario(11, models.clone());
        assert_eq!(a, random_scenario(11, models.clone()));
        assert_ne!(a, random_scenario(12, models));
        a.validate().unwrap();
        assert!(!a.obstacles.is_empty());
    }
}
