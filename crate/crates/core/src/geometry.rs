//! Analytic capsule geometry for the planar links.

use nalgebra::{DVector, Vector2};

use crate::kinematics::{joint_positions, RobotModel};
use crate::scalar::Real;

fn cross<T: Real>(a: &Vector2<T>, b: &Vector2<T>) -> T {
    a.x * b.y - a.y * b.x
}

/// Distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance<T: Real>(p: &Vector2<T>, a: &Vector2<T>, b: &Vector2<T>) -> T {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > T::zero() {
        ((p - a).dot(&ab) / len2).clamp(T::zero(), T::one())
    } else {
        T::zero()
    };
    (p - (a + ab * t)).norm()
}

/// Whether two closed segments share a point (proper or touching).
pub fn segments_intersect<T: Real>(
    a0: &Vector2<T>,
    a1: &Vector2<T>,
    b0: &Vector2<T>,
    b1: &Vector2<T>,
) -> bool {
    let da = a1 - a0;
    let db = b1 - b0;
    let d1 = cross(&da, &(b0 - a0));
    let d2 = cross(&da, &(b1 - a0));
    let d3 = cross(&db, &(a0 - b0));
    let d4 = cross(&db, &(a1 - b0));
    let opposite =
        |u: T, v: T| (u > T::zero() && v < T::zero()) || (u < T::zero() && v > T::zero());
    if opposite(d1, d2) && opposite(d3, d4) {
        return true;
    }
    // collinear / endpoint contact
    let on = |p: &Vector2<T>, s0: &Vector2<T>, s1: &Vector2<T>, c: T| {
        c == T::zero() && point_segment_distance(p, s0, s1) == T::zero()
    };
    on(b0, a0, a1, d1) || on(b1, a0, a1, d2) || on(a0, b0, b1, d3) || on(a1, b0, b1, d4)
}

/// Minimum distance between two segments.
pub fn segment_segment_distance<T: Real>(
    a0: &Vector2<T>,
    a1: &Vector2<T>,
    b0: &Vector2<T>,
    b1: &Vector2<T>,
) -> T {
    if segments_intersect(a0, a1, b0, b1) {
        return T::zero();
    }
    point_segment_distance(a0, b0, b1)
        .min(point_segment_distance(a1, b0, b1))
        .min(point_segment_distance(b0, a0, a1))
        .min(point_segment_distance(b1, a0, a1))
}

/// Signed distance from `p` (link frame) to a capsule whose axis runs
/// from the origin to `(length, 0)`.
pub fn capsule_sdf<T: Real>(p: &Vector2<T>, length: T, radius: T) -> T {
    let x = p.x.clamp(T::zero(), length);
    (p - Vector2::new(x, T::zero())).norm() - radius
}

/// Axis endpoints of every link in the base frame.
pub fn link_segments<T: Real>(
    model: &RobotModel<T>,
    q: &DVector<T>,
) -> Vec<(Vector2<T>, Vector2<T>)> {
    let pts = joint_positions(model, q);
    pts.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Minimum clearance over non-adjacent link pairs; negative when the
/// capsules overlap and `+∞` for chains without such pairs.
pub fn self_collision_distance<T: Real>(model: &RobotModel<T>, q: &DVector<T>) -> T {
    let segs = link_segments(model, q);
    let n = segs.len();
    let mut best: Option<T> = None;
    for i in 0..n {
        for j in (i + 2)..n {
            let d = segment_segment_distance(&segs[i].0, &segs[i].1, &segs[j].0, &segs[j].1)
                - model.link_radii[i]
                - model.link_radii[j];
            best = Some(best.map_or(d, |b| b.min(d)));
        }
    }
    best.unwrap_or_else(|| T::max_value().unwrap())
}

/// Clearance between the robot surface and a disc obstacle.
pub fn obstacle_clearance<T: Real>(
    model: &RobotModel<T>,
    q: &DVector<T>,
    center: &Vector2<T>,
    radius: T,
) -> T {
    link_segments(model, q)
        .iter()
        .enumerate()
        .map(|(i, (a, b))| point_segment_distance(center, a, b) - model.link_radii[i] - radius)
        .fold(T::max_value().unwrap(), |a, b| a.min(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn straight_chain_clearance() {
        let model = RobotModel::<f64>::desk();
        // links 0 and 2 are collinear, separated by link 1's length
        let d = self_collision_distance(&model, &DVector::zeros(3));
        assert_relative_eq!(d, 0.35 - 0.08, epsilon = 1e-12);
    }

    #[test]
    fn crossing_axes_give_negative_radius_sum() {
        let model = RobotModel::<f64>::desk();
        // link 1 folds back at 2.8 rad, link 2 crosses link 0
        let q = DVector::from_vec(vec![0.0, 2.8, 2.8]);
        let segs = link_segments(&model, &q);
        assert!(segments_intersect(
            &segs[0].0, &segs[0].1, &segs[2].0, &segs[2].1
        ));
        assert_relative_eq!(self_collision_distance(&model, &q), -0.08, epsilon = 1e-15);
    }

    #[test]
    fn two_links_have_no_pairs() {
        let model = RobotModel::<f64>::uniform_rods(&[1.0, 1.0], &[1.0, 1.0], &[0.1, 0.1]);
        let d = self_collision_distance(&model, &DVector::from_vec(vec![0.0, PI]));
        assert_eq!(d, f64::MAX);
    }

    #[test]
    fn capsule_sdf_regions() {
        assert_relative_eq!(capsule_sdf(&Vector2::new(0.2, 0.1), 0.4, 0.04), 0.06);
        assert_relative_eq!(capsule_sdf(&Vector2::new(0.2, 0.0), 0.4, 0.04), -0.04);
        assert_relative_eq!(capsule_sdf(&Vector2::new(-0.3, 0.4), 0.4, 0.04), 0.46);
        assert_relative_eq!(capsule_sdf(&Vector2::new(0.7, 0.0), 0.4, 0.04), 0.26);
    }

    #[test]
    fn parallel_segments() {
        let d = segment_segment_distance(
            &Vector2::new(0.0, 0.0),
            &Vector2::new(1.0, 0.0),
            &Vector2::new(0.5, 0.3),
            &Vector2::new(2.0, 0.3),
        );
        assert_relative_eq!(d, 0.3, epsilon = 1e-15);
    }
}
