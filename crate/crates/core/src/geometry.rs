//! Analytic collision checks between link capsules and box/sphere obstacles,
//! plus end-effector ray casting.

use serde::{Deserialize, Serialize};

use crate::dualquat::Vec3;
use crate::kinematics::{frames, RobotModel};

pub const RAY_COUNT: usize = 25;
pub const DEFAULT_MAX_RANGE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    Box { min: [f64; 3], max: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub id: String,
    #[serde(flatten)]
    pub shape: Shape,
}

impl Obstacle {
    pub fn cuboid(id: &str, min: [f64; 3], max: [f64; 3]) -> Self {
        Obstacle {
            id: id.to_string(),
            shape: Shape::Box { min, max },
        }
    }

    pub fn sphere(id: &str, center: [f64; 3], radius: f64) -> Self {
        Obstacle {
            id: id.to_string(),
            shape: Shape::Sphere { center, radius },
        }
    }

    pub fn is_valid(&self) -> bool {
        match self.shape {
            Shape::Box { min, max } => (0..3).all(|i| min[i] < max[i]),
            Shape::Sphere { radius, .. } => radius > 0.0,
        }
    }

    /// Grows the obstacle by `eps` in every direction.
    pub fn inflated(&self, eps: f64) -> Self {
        let shape = match self.shape {
            Shape::Box { min, max } => Shape::Box {
                min: min.map(|v| v - eps),
                max: max.map(|v| v + eps),
            },
            Shape::Sphere { center, radius } => Shape::Sphere {
                center,
                radius: radius + eps,
            },
        };
        Obstacle {
            id: self.id.clone(),
            shape,
        }
    }

    /// Distance from a segment to the obstacle surface (0 when touching or inside).
    pub fn segment_distance(&self, p: &Vec3, q: &Vec3) -> f64 {
        match self.shape {
            Shape::Box { min, max } => segment_box_distance(p, q, &Vec3::from(min), &Vec3::from(max)),
            Shape::Sphere { center, radius } => {
                (segment_point_distance(p, q, &Vec3::from(center)) - radius).max(0.0)
            }
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        match self.shape {
            Shape::Box { min, max } => (0..3).all(|i| p[i] >= min[i] && p[i] <= max[i]),
            Shape::Sphere { center, radius } => (p - Vec3::from(center)).norm() <= radius,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    pub p: Vec3,
    pub q: Vec3,
    pub radius: f64,
}

impl Capsule {
    pub fn hits(&self, o: &Obstacle, margin: f64) -> bool {
        o.segment_distance(&self.p, &self.q) < self.radius + margin
    }
}

pub fn point_box_distance(p: &Vec3, min: &Vec3, max: &Vec3) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        let d = (min[i] - p[i]).max(0.0).max(p[i] - max[i]);
        s += d * d;
    }
    s.sqrt()
}

pub fn segment_point_distance(p: &Vec3, q: &Vec3, c: &Vec3) -> f64 {
    let d = q - p;
    let len2 = d.norm_squared();
    let t = if len2 > 0.0 { ((c - p).dot(&d) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p + d * t - c).norm()
}

/// Exact segment-to-box distance.
///
/// The squared distance along the segment is a convex piecewise quadratic in
/// the segment parameter, with breakpoints where a coordinate crosses a slab
/// face; each piece is minimized in closed form.
pub fn segment_box_distance(p: &Vec3, q: &Vec3, min: &Vec3, max: &Vec3) -> f64 {
    let d = q - p;
    let mut knots = vec![0.0, 1.0];
    for i in 0..3 {
        if d[i] != 0.0 {
            for b in [min[i], max[i]] {
                let t = (b - p[i]) / d[i];
                if t > 0.0 && t < 1.0 {
                    knots.push(t);
                }
            }
        }
    }
    knots.sort_by(|a, b| a.total_cmp(b));
    let mut best = f64::INFINITY;
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = 0.5 * (a + b);
        // f(t) = A t² + B t + C on this piece.
        let (mut qa, mut qb) = (0.0, 0.0);
        for i in 0..3 {
            let x = p[i] + d[i] * mid;
            let bound = if x < min[i] {
                min[i]
            } else if x > max[i] {
                max[i]
            } else {
                continue;
            };
            let e = p[i] - bound;
            qa += d[i] * d[i];
            qb += 2.0 * e * d[i];
        }
        let t = if qa > 0.0 { (-qb / (2.0 * qa)).clamp(a, b) } else { a };
        // Re-evaluate directly; expanding the quadratic cancels badly.
        best = best.min(point_box_distance(&(p + d * t), min, max));
    }
    best
}

/// Closest distance between segments `p1q1` and `p2q2`.
pub fn segment_segment_distance(p1: &Vec3, q1: &Vec3, p2: &Vec3, q2: &Vec3) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    const EPS: f64 = 1e-15;
    let (s, t);
    if a <= EPS && e <= EPS {
        return r.norm();
    }
    if a <= EPS {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > EPS { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    ((p1 + d1 * s) - (p2 + d2 * t)).norm()
}

/// World-space capsules of every link at `theta`.
pub fn link_capsules(model: &RobotModel, theta: &[f64]) -> Vec<Capsule> {
    let f = match frames(model, theta) {
        Ok(f) => f,
        Err(_) => return Vec::new(),
    };
    let pos: Vec<Vec3> = f.iter().map(|d| d.translation()).collect();
    model
        .capsules
        .iter()
        .map(|c| Capsule {
            p: pos[c.frame_a],
            q: pos[c.frame_b],
            radius: c.radius,
        })
        .collect()
}

pub fn self_collision(model: &RobotModel, caps: &[Capsule]) -> bool {
    for i in 0..caps.len() {
        for j in (i + 1)..caps.len() {
            if model.capsules[i].adjacent(&model.capsules[j]) {
                continue;
            }
            let (a, b) = (&caps[i], &caps[j]);
            if segment_segment_distance(&a.p, &a.q, &b.p, &b.q) < a.radius + b.radius {
                return true;
            }
        }
    }
    false
}

/// True when any link touches an obstacle (within `margin`) or a non-adjacent link.
pub fn in_collision(model: &RobotModel, theta: &[f64], obstacles: &[Obstacle], margin: f64) -> bool {
    let caps = link_capsules(model, theta);
    caps.iter().any(|c| obstacles.iter().any(|o| c.hits(o, margin))) || self_collision(model, &caps)
}

/// COL(θ) as 0/1.
pub fn collision_index(model: &RobotModel, theta: &[f64], obstacles: &[Obstacle]) -> u8 {
    in_collision(model, theta, obstacles, 0.0) as u8
}

fn ray_box(o: &Vec3, d: &Vec3, min: &[f64; 3], max: &[f64; 3]) -> Option<f64> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..3 {
        if d[i].abs() < 1e-15 {
            if o[i] < min[i] || o[i] > max[i] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[i];
        let (mut a, mut b) = ((min[i] - o[i]) * inv, (max[i] - o[i]) * inv);
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        t0 = t0.max(a);
        t1 = t1.min(b);
        if t0 > t1 {
            return None;
        }
    }
    if t1 < 0.0 {
        None
    } else if t0 >= 0.0 {
        Some(t0)
    } else {
        Some(t1)
    }
}

fn ray_sphere(o: &Vec3, d: &Vec3, c: &[f64; 3], r: f64) -> Option<f64> {
    let oc = o - Vec3::from(*c);
    let b = oc.dot(d);
    let cc = oc.norm_squared() - r * r;
    let disc = b * b - cc;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let (t0, t1) = (-b - s, -b + s);
    if t1 < 0.0 {
        None
    } else if t0 >= 0.0 {
        Some(t0)
    } else {
        Some(t1)
    }
}

/// Distance along a unit ray to the nearest obstacle surface, clamped to `max_range`.
///
/// An origin inside an obstacle reports the distance to where the ray leaves it.
pub fn raycast(origin: &Vec3, dir: &Vec3, obstacles: &[Obstacle], max_range: f64) -> f64 {
    let mut best = max_range;
    for o in obstacles {
        let hit = match &o.shape {
            Shape::Box { min, max } => ray_box(origin, dir, min, max),
            Shape::Sphere { center, radius } => ray_sphere(origin, dir, center, *radius),
        };
        if let Some(t) = hit {
            best = best.min(t);
        }
    }
    best.clamp(0.0, max_range)
}

/// Fixed 25-ray pattern in the tool frame: the approach axis, 8 rays on a
/// 30° cone and 16 rays on a 60° cone, evenly spaced in azimuth.
pub fn ray_pattern(approach: &Vec3) -> [Vec3; RAY_COUNT] {
    let a = approach.normalize();
    let helper = if a.z.abs() < 0.9 { Vec3::z() } else { Vec3::x() };
    let u = helper.cross(&a).normalize();
    let v = a.cross(&u);
    let mut out = [Vec3::zeros(); RAY_COUNT];
    out[0] = a;
    let mut k = 1;
    for (count, cone) in [(8usize, 30f64), (16, 60.0)] {
        let (s, c) = cone.to_radians().sin_cos();
        for i in 0..count {
            let phi = std::f64::consts::TAU * i as f64 / count as f64;
            out[k] = a * c + (u * phi.cos() + v * phi.sin()) * s;
            k += 1;
        }
    }
    out
}

pub fn ray_bundle(model: &RobotModel, theta: &[f64], obstacles: &[Obstacle], max_range: f64) -> [f64; RAY_COUNT] {
    let tool = match frames(model, theta) {
        Ok(f) => *f.last().expect("tool frame"),
        Err(_) => return [max_range; RAY_COUNT],
    };
    let origin = tool.translation();
    let pattern = ray_pattern(&model.approach_axis);
    let mut out = [max_range; RAY_COUNT];
    for (o, d) in out.iter_mut().zip(pattern.iter()) {
        *o = raycast(&origin, &tool.real.rotate(d), obstacles, max_range);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dualquat::Quaternion;
    use crate::kinematics::models::{desk_3r, planar_2r};
    use proptest::prelude::*;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    /// Dense sampling oracle for segment-to-box distance.
    fn sampled_segment_box(p: &Vec3, q: &Vec3, min: &Vec3, max: &Vec3) -> f64 {
        (0..=4000)
            .map(|k| point_box_distance(&(p + (q - p) * (k as f64 / 4000.0)), min, max))
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn empty_scene_no_collision() {
        let m = planar_2r();
        assert_eq!(collision_index(&m, &m.home, &[]), 0);
    }

    #[test]
    fn enclosing_box_collides() {
        let m = planar_2r();
        let tip = crate::kinematics::fk(&m, &m.home).unwrap().translation();
        let b = Obstacle::cuboid("b", [tip.x - 0.2, tip.y - 0.2, -0.2], [tip.x + 0.2, tip.y + 0.2, 0.2]);
        assert_eq!(collision_index(&m, &m.home, &[b]), 1);
    }

    #[test]
    fn grazing_box_threshold() {
        let r = 0.05;
        let cap = Capsule {
            p: v(0.0, 0.0, 0.0),
            q: v(1.0, 0.0, 0.0),
            radius: r,
        };
        let at = Obstacle::cuboid("g", [0.2, -0.5, -0.1], [0.8, -r, 0.1]);
        assert!(!cap.hits(&at, 0.0));
        let margin = 0.01;
        let at_margin = Obstacle::cuboid("g", [0.2, -0.5, -0.1], [0.8, -r - margin, 0.1]);
        assert!(!cap.hits(&at_margin, margin));
        let inside = Obstacle::cuboid("g", [0.2, -0.5, -0.1], [0.8, -r + 1e-4, 0.1]);
        assert!(cap.hits(&inside, 0.0));
        let m = planar_2r();
        let deep = Obstacle::cuboid("g", [0.2, -0.5, -0.1], [0.8, -0.03, 0.1]);
        assert_eq!(collision_index(&m, &m.home, &[deep]), 1);
    }

    #[test]
    fn self_collision_when_folded() {
        let m = desk_3r();
        assert_eq!(collision_index(&m, &[0.0, 150f64.to_radians(), 150f64.to_radians()], &[]), 1);
        assert_eq!(collision_index(&m, &m.home, &[]), 0);
    }

    #[test]
    fn raycast_examples() {
        let b = Obstacle::cuboid("b", [2.0, -1.0, -1.0], [3.0, 1.0, 1.0]);
        assert_eq!(raycast(&Vec3::zeros(), &Vec3::x(), std::slice::from_ref(&b), 10.0), 2.0);
        assert_eq!(raycast(&Vec3::zeros(), &-Vec3::x(), &[b], 10.0), 10.0);

        let s = Obstacle::sphere("s", [2.0, 2.0, 0.0], 1.0);
        let d = v(1.0, 1.0, 0.0).normalize();
        // |t d - c|² = r²  →  t² - 2 t (d·c) + |c|² - r² = 0
        let dc = d.dot(&v(2.0, 2.0, 0.0));
        let oracle = dc - (dc * dc - 7.0).sqrt();
        let t = raycast(&Vec3::zeros(), &d, &[s], 10.0);
        assert!((t - oracle).abs() < 1e-12);
    }

    #[test]
    fn ray_bundle_examples() {
        let m = planar_2r();
        assert_eq!(ray_bundle(&m, &m.home, &[], 0.3), [0.3; RAY_COUNT]);

        // Home tool at (1,1,0) pointing +y (joint sum 90°, approach +x in tool frame).
        let tip = crate::kinematics::fk(&m, &m.home).unwrap();
        let c = tip.translation();
        let cube = Obstacle::cuboid("c", [c.x - 1.0, c.y - 1.0, c.z - 1.0], [c.x + 1.0, c.y + 1.0, c.z + 1.0]);
        let rays = ray_bundle(&m, &m.home, &[cube], 5.0);
        assert!((rays[0] - 1.0).abs() < 1e-12);
        let pattern = ray_pattern(&m.approach_axis);
        let world = tip.real.rotate(&pattern[0]);
        assert!((world - Vec3::y()).norm() < 1e-12);
    }

    #[test]
    fn ray_bundle_is_frame_attached() {
        let m = planar_2r();
        let theta = [0.0, std::f64::consts::FRAC_PI_2];
        let sphere = Obstacle::sphere("s", [1.05, 1.3, 0.0], 0.1);
        let before = ray_bundle(&m, &theta, std::slice::from_ref(&sphere), 2.0);
        // Rotate arm and scene together about the base z axis.
        let rot = Quaternion::from_axis_angle(&Vec3::z(), 0.9).unwrap();
        let Shape::Sphere { center, radius } = sphere.shape else { unreachable!() };
        let spun_sphere = Obstacle::sphere("s", rot.rotate(&Vec3::from(center)).into(), radius);
        let after = ray_bundle(&m, &[0.9, theta[1]], &[spun_sphere], 2.0);
        assert!(before.iter().any(|&d| d < 2.0));
        for k in 0..RAY_COUNT {
            assert!((before[k] - after[k]).abs() < 1e-9, "ray {k}: {} vs {}", before[k], after[k]);
        }
    }

    fn arb_vec(r: f64) -> impl Strategy<Value = Vec3> {
        prop::array::uniform3(-r..r).prop_map(Vec3::from)
    }

    proptest! {
        #[test]
        fn segment_box_matches_sampling(p in arb_vec(2.0), q in arb_vec(2.0), c in arb_vec(1.0), h in prop::array::uniform3(0.05f64..0.8)) {
            let h = Vec3::from(h);
            let (min, max) = (c - h, c + h);
            let exact = segment_box_distance(&p, &q, &min, &max);
            let sampled = sampled_segment_box(&p, &q, &min, &max);
            prop_assert!(exact <= sampled + 1e-12);
            prop_assert!(sampled - exact <= (q - p).norm() / 4000.0 + 1e-9);
        }

        #[test]
        fn segment_box_distance_is_orientation_symmetric(p in arb_vec(2.0), q in arb_vec(2.0)) {
            let (min, max) = (v(-0.3, -0.2, -0.1), v(0.3, 0.2, 0.1));
            let a = segment_box_distance(&p, &q, &min, &max);
            let b = segment_box_distance(&q, &p, &min, &max);
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn inflation_is_conservative(theta in prop::array::uniform3(-2.5f64..2.5), c in arb_vec(0.3), eps in 0.0f64..0.05) {
            let m = desk_3r();
            let obs = vec![Obstacle::cuboid("b", [c.x - 0.03, c.y - 0.03, -0.05], [c.x + 0.03, c.y + 0.03, 0.05])];
            let grown: Vec<_> = obs.iter().map(|o| o.inflated(eps)).collect();
            if collision_index(&m, &theta, &obs) == 1 {
                prop_assert_eq!(collision_index(&m, &theta, &grown), 1);
            }
        }

        #[test]
        fn ray_hit_lies_on_surface(o in arb_vec(0.5), d in arb_vec(1.0)) {
            prop_assume!(d.norm() > 1e-3);
            let d = d.normalize();
            let b = Obstacle::cuboid("b", [0.6, -0.4, -0.4], [0.9, 0.4, 0.4]);
            let s = Obstacle::sphere("s", [-0.7, 0.0, 0.1], 0.2);
            for ob in [b, s] {
                let t = raycast(&o, &d, std::slice::from_ref(&ob), 5.0);
                prop_assert!(t <= 5.0);
                if t < 5.0 {
                    let hit = o + d * t;
                    let on_surface = match ob.shape {
                        Shape::Box { .. } => segment_box_distance(&hit, &hit, &v(0.6, -0.4, -0.4), &v(0.9, 0.4, 0.4)) < 1e-6
                            && [hit.x - 0.6, 0.9 - hit.x, hit.y + 0.4, 0.4 - hit.y, hit.z + 0.4, 0.4 - hit.z]
                                .iter().any(|g| g.abs() < 1e-6),
                        Shape::Sphere { .. } => ((hit - v(-0.7, 0.0, 0.1)).norm() - 0.2).abs() < 1e-6,
                    };
                    prop_assert!(on_surface);
                }
            }
        }

        #[test]
        fn segment_segment_matches_sampling(p1 in arb_vec(1.0), q1 in arb_vec(1.0), p2 in arb_vec(1.0), q2 in arb_vec(1.0)) {
            let exact = segment_segment_distance(&p1, &q1, &p2, &q2);
            let mut sampled = f64::INFINITY;
            for k in 0..=400 {
                let a = p1 + (q1 - p1) * (k as f64 / 400.0);
                sampled = sampled.min(segment_point_distance(&p2, &q2, &a));
            }
            prop_assert!(exact <= sampled + 1e-9);
            prop_assert!(sampled - exact <= (q1 - p1).norm() / 400.0 + 1e-9);
        }
    }
}
