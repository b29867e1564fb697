//! Continuous-control toys with deterministic dynamics.
//!
//! Actions live in `[-1, 1]^d` and are clipped before the dynamics run.
//! Neither environment terminates; episodes end by time-limit truncation.

use std::f64::consts::PI;

use crate::numcore::Rng;

fn clip_action(a: f64) -> f64 {
    if a.is_nan() {
        0.0
    } else {
        a.clamp(-1.0, 1.0)
    }
}

/// 2-D double integrator that must reach and hold a goal position.
///
/// State `[x, y, vx, vy]`. Semi-implicit Euler:
/// `v' = clip(v + dt * force_scale * a / mass, ±max_speed)`, `p' = p + dt * v'`.
/// Reward is `-|p' - goal|`. Resets uniformly in `[-0.1, 0.1]^2` at rest.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMass {
    pub mass: f64,
    pub dt: f64,
    pub force_scale: f64,
    pub max_speed: f64,
    pub arena: f64,
    pub goal: [f64; 2],
    pub horizon: usize,
}

impl Default for PointMass {
    fn default() -> Self {
        Self {
            mass: 1.0,
            dt: 0.1,
            force_scale: 1.0,
            max_speed: 2.0,
            arena: 10.0,
            goal: [0.5, 0.5],
            horizon: 100,
        }
    }
}

impl PointMass {
    pub fn reset(&self, rng: &mut Rng) -> Vec<f64> {
        vec![rng.uniform_range(-0.1, 0.1), rng.uniform_range(-0.1, 0.1), 0.0, 0.0]
    }

    pub fn step(&self, state: &[f64], action: &[f64]) -> (Vec<f64>, f64) {
        let mut next = vec![0.0; 4];
        for k in 0..2 {
            let accel = self.force_scale * clip_action(action[k]) / self.mass;
            let v = (state[2 + k] + self.dt * accel).clamp(-self.max_speed, self.max_speed);
            next[2 + k] = v;
            next[k] = (state[k] + self.dt * v).clamp(-self.arena, self.arena);
        }
        let dx = next[0] - self.goal[0];
        let dy = next[1] - self.goal[1];
        (next, -(dx * dx + dy * dy).sqrt())
    }
}

/// Torque-limited pendulum swing-up (angle 0 is upright).
///
/// State `[theta, theta_dot]`; observation `[cos, sin, theta_dot]`.
/// Reward `-(angle^2 + 0.1 vel^2 + 0.001 torque^2)` on the pre-step state,
/// with the angle wrapped into `[-pi, pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pendulum {
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub dt: f64,
    pub max_torque: f64,
    pub max_speed: f64,
    pub horizon: usize,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self {
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
            dt: 0.05,
            max_torque: 2.0,
            max_speed: 8.0,
            horizon: 200,
        }
    }
}

pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

impl Pendulum {
    pub fn reset(&self, rng: &mut Rng) -> Vec<f64> {
        vec![rng.uniform_range(-PI, PI), rng.uniform_range(-1.0, 1.0)]
    }

    pub fn observe(state: &[f64]) -> Vec<f64> {
        vec![state[0].cos(), state[0].sin(), state[1]]
    }

    pub fn step(&self, state: &[f64], action: &[f64]) -> (Vec<f64>, f64) {
        let (theta, vel) = (state[0], state[1]);
        let torque = self.max_torque * clip_action(action[0]);
        let angle = wrap_angle(theta);
        let reward = -(angle * angle + 0.1 * vel * vel + 0.001 * torque * torque);
        let (g, m, l) = (self.gravity, self.mass, self.length);
        let accel = 3.0 * g / (2.0 * l) * theta.sin() + 3.0 / (m * l * l) * torque;
        let new_vel = (vel + accel * self.dt).clamp(-self.max_speed, self.max_speed);
        let new_theta = wrap_angle(theta + new_vel * self.dt);
        (vec![new_theta, new_vel], reward)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass_reset_range() {
        let env = PointMass::default();
        let mut rng = Rng::new(0);
        for _ in 0..1000 {
            let s = env.reset(&mut rng);
            assert!(s[0].abs() <= 0.1 && s[1].abs() <= 0.1);
            assert_eq!(&s[2..], &[0.0, 0.0]);
        }
    }

    #[test]
    fn point_mass_one_step_by_hand() {
        let env = PointMass::default();
        let (next, r) = env.step(&[0.0, 0.0, 0.0, 0.0], &[1.0, 0.0]);
        // v = 0 + 0.1 * 1 = 0.1; x = 0 + 0.1 * 0.1 = 0.01
        assert!((next[2] - 0.1).abs() < 1e-15);
        assert!((next[0] - 0.01).abs() < 1e-15);
        assert_eq!(next[1], 0.0);
        let expected = -((0.01f64 - 0.5).powi(2) + 0.25).sqrt();
        assert!((r - expected).abs() < 1e-15);
    }

    #[test]
    fn out_of_box_actions_are_clipped() {
        let env = PointMass::default();
        let s = [0.0; 4];
        assert_eq!(env.step(&s, &[5.0, -9.0]), env.step(&s, &[1.0, -1.0]));
    }

    #[test]
    fn pendulum_reset_range() {
        let env = Pendulum::default();
        let mut rng = Rng::new(1);
        for _ in 0..1000 {
            let s = env.reset(&mut rng);
            assert!(s[0] >= -PI && s[0] <= PI);
            assert!(s[1].abs() <= 1.0);
        }
    }

    #[test]
    fn upright_pendulum_stays_put() {
        let env = Pendulum::default();
        let (next, r) = env.step(&[0.0, 0.0], &[0.0]);
        assert_eq!(r, 0.0);
        assert!(next[0].abs() < 1e-12 && next[1].abs() < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        for k in -20..20 {
            let w = wrap_angle(k as f64 * 0.7);
            assert!((-PI..PI).contains(&w));
        }
    }
}
