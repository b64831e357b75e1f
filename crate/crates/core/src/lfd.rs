//! Demonstrations, relative-transform features, the skill library and
//! retargeting of a demonstrated skill onto new start / goal poses.

use std::collections::BTreeSet;
use std::path::Path;

use crate::dualquat::{format_pose_lines, parse_pose_lines, DualQuaternion, Quaternion, Vec3};
use crate::error::{read_to_string, Error, Result};

/// Number of samples both sequences are resampled to before comparison.
pub const FEATURE_SAMPLES: usize = 32;
pub const DEFAULT_DELTA_BETA: f64 = 0.5;

const SAME_POSE_POS: f64 = 1e-9;
const SAME_POSE_ROT: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub id: String,
    pub tags: Vec<String>,
    pub poses: Vec<DualQuaternion>,
    pub features: Vec<DualQuaternion>,
}

impl Demonstration {
    pub fn new(id: &str, tags: Vec<String>, poses: Vec<DualQuaternion>) -> Result<Self> {
        let features = extract_features(&poses)?;
        Ok(Demonstration {
            id: id.to_string(),
            tags,
            poses,
            features,
        })
    }

    /// Parses `@demo id=<id> tags=<a,b>` followed by pose lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| Error::parse("demonstration", "empty file"))?;
        let rest = header
            .strip_prefix("@demo")
            .ok_or_else(|| Error::parse("demonstration", "missing '@demo' header line"))?;
        let mut id = None;
        let mut tags = Vec::new();
        for tok in rest.split_whitespace() {
            if let Some(v) = tok.strip_prefix("id=") {
                id = Some(v.to_string());
            } else if let Some(v) = tok.strip_prefix("tags=") {
                tags = v.split(',').filter(|t| !t.is_empty()).map(str::to_string).collect();
            } else {
                return Err(Error::parse("demonstration", format!("unknown header field {tok:?}")));
            }
        }
        let id = id.ok_or_else(|| Error::parse("demonstration", "header lacks id="))?;
        let body: Vec<&str> = lines.collect();
        let poses = parse_pose_lines(&body.join("\n"))?;
        Demonstration::new(&id, tags, poses)
    }

    pub fn to_text(&self) -> String {
        format!(
            "@demo id={} tags={}\n{}",
            self.id,
            self.tags.join(","),
            format_pose_lines(&self.poses)
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?)
    }

    pub fn start(&self) -> &DualQuaternion {
        &self.poses[0]
    }

    pub fn goal(&self) -> &DualQuaternion {
        self.poses.last().expect("nonempty demonstration")
    }

    /// True when every pose equals the first.
    pub fn is_constant(&self) -> bool {
        self.poses.iter().all(|p| same_pose(p, &self.poses[0]))
    }
}

fn same_pose(a: &DualQuaternion, b: &DualQuaternion) -> bool {
    a.approx_pose_eq(b, SAME_POSE_POS, SAME_POSE_ROT)
}

/// `δ_i = D*_{i−1} ⊗ D_n` for `i = 2..n`.
pub fn extract_features(poses: &[DualQuaternion]) -> Result<Vec<DualQuaternion>> {
    if poses.len() < 2 {
        return Err(Error::TrajectoryTooShort { min: 2, got: poses.len() });
    }
    let last = poses[poses.len() - 1];
    Ok(poses[..poses.len() - 1].iter().map(|p| p.conjugate() * last).collect())
}

#[derive(Debug, Clone, Default)]
pub struct SkillLibrary {
    skills: Vec<Demonstration>,
}

impl SkillLibrary {
    pub fn new(skills: Vec<Demonstration>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for s in &skills {
            if !seen.insert(s.id.clone()) {
                return Err(Error::DuplicateSkill(s.id.clone()));
            }
            if s.poses.len() < 2 || extract_features(&s.poses)? != s.features {
                return Err(Error::parse("skill library", format!("skill {} has inconsistent features", s.id)));
            }
        }
        Ok(SkillLibrary { skills })
    }

    /// Loads every `*.demo` file in `dir`, sorted by file name.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "demo"))
            .collect();
        paths.sort();
        let skills = paths.iter().map(|p| Demonstration::load(p)).collect::<Result<Vec<_>>>()?;
        Self::new(skills)
    }

    pub fn skills(&self) -> &[Demonstration] {
        &self.skills
    }

    pub fn len(&self) -> usize {
        self.skills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skills.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Demonstration> {
        self.skills.iter().find(|s| s.id == id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.skills.iter().position(|s| s.id == id)
    }
}

/// Normalized cumulative path parameter: position arc length, falling back to
/// rotation arc length, then to the sample index.
pub fn arc_fractions(poses: &[DualQuaternion]) -> Vec<f64> {
    let n = poses.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let pos: Vec<f64> = poses
        .windows(2)
        .map(|w| (w[1].translation() - w[0].translation()).norm())
        .collect();
    let rot: Vec<f64> = poses
        .windows(2)
        .map(|w| (w[0].real.conjugate() * w[1].real).angle())
        .collect();
    let pick = if pos.iter().sum::<f64>() > 1e-12 {
        pos
    } else if rot.iter().sum::<f64>() > 1e-12 {
        rot
    } else {
        vec![1.0; n - 1]
    };
    cumulative_fractions(&pick)
}

fn cumulative_fractions(steps: &[f64]) -> Vec<f64> {
    let total: f64 = steps.iter().sum();
    let mut out = Vec::with_capacity(steps.len() + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for s in steps {
        acc += s;
        out.push(acc / total);
    }
    *out.last_mut().expect("nonempty") = 1.0;
    out
}

/// Samples a pose sequence at parameters in `[0, 1]` given per-pose parameters.
pub fn sample_at(poses: &[DualQuaternion], params: &[f64], u: f64) -> DualQuaternion {
    let n = poses.len();
    if n == 1 || u <= 0.0 {
        return poses[0];
    }
    if u >= 1.0 {
        return poses[n - 1];
    }
    let k = params.partition_point(|p| *p <= u).clamp(1, n - 1);
    let (a, b) = (params[k - 1], params[k]);
    let t = if b > a { (u - a) / (b - a) } else { 0.0 };
    poses[k - 1].sclerp(&poses[k], t)
}

/// Resamples by normalized index; integer positions reproduce the input exactly.
pub fn resample_by_index(poses: &[DualQuaternion], n_out: usize) -> Vec<DualQuaternion> {
    let n = poses.len();
    if n_out == 1 {
        return vec![poses[0]];
    }
    (0..n_out)
        .map(|k| {
            let x = k as f64 * (n - 1) as f64 / (n_out - 1) as f64;
            let i = (x.floor() as usize).min(n - 1);
            let f = x - i as f64;
            if f <= 0.0 || i == n - 1 {
                poses[i]
            } else {
                poses[i].sclerp(&poses[i + 1], f)
            }
        })
        .collect()
}

fn chordal_arc_fractions(seq: &[DualQuaternion]) -> Vec<f64> {
    if seq.len() < 2 {
        return vec![0.0; seq.len()];
    }
    let steps: Vec<f64> = seq.windows(2).map(|w| w[0].chordal_distance(&w[1])).collect();
    if steps.iter().sum::<f64>() > 1e-12 {
        cumulative_fractions(&steps)
    } else {
        cumulative_fractions(&vec![1.0; seq.len() - 1])
    }
}

/// Resamples a feature sequence to [`FEATURE_SAMPLES`] points by normalized arc length.
pub fn resample_features(seq: &[DualQuaternion]) -> Vec<DualQuaternion> {
    let params = chordal_arc_fractions(seq);
    (0..FEATURE_SAMPLES)
        .map(|k| sample_at(seq, &params, k as f64 / (FEATURE_SAMPLES - 1) as f64))
        .collect()
}

/// Per-sample chordal distances after resampling both sequences.
pub fn feature_terms(a: &[DualQuaternion], b: &[DualQuaternion]) -> Vec<f64> {
    let ra = resample_features(a);
    let rb = resample_features(b);
    ra.iter().zip(&rb).map(|(x, y)| x.chordal_distance(y)).collect()
}

/// β: summed chordal distance between resampled feature sequences.
pub fn feature_distance(a: &[DualQuaternion], b: &[DualQuaternion]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    feature_terms(a, b).iter().sum()
}

/// Minimal rotation taking unit `a` onto unit `b`.
fn align_rotation(a: &Vec3, b: &Vec3) -> Quaternion {
    let c = a.dot(b).clamp(-1.0, 1.0);
    let axis = a.cross(b);
    if axis.norm() < 1e-12 {
        if c > 0.0 {
            return Quaternion::IDENTITY;
        }
        let perp = if a.cross(&Vec3::z()).norm() > 1e-6 && a.z.abs() < 1e-9 {
            Vec3::z()
        } else {
            let h = if a.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
            a.cross(&h).normalize()
        };
        return Quaternion::about_unit_axis(&perp, std::f64::consts::PI);
    }
    Quaternion::about_unit_axis(&axis.normalize(), axis.norm().atan2(c))
}

/// Maps a demonstrated skill onto new endpoints, producing `n_out` poses whose
/// first and last entries are exactly `start` and `goal`.
pub fn retarget(skill: &Demonstration, start: &DualQuaternion, goal: &DualQuaternion, n_out: usize) -> Result<Vec<DualQuaternion>> {
    let n_out = n_out.max(2);
    let task_static = same_pose(start, goal);
    if skill.is_constant() {
        if !task_static {
            return Err(Error::DisplacementMismatch);
        }
        return Ok(vec![*start; n_out]);
    }
    let demo = resample_by_index(&skill.poses, n_out);
    let weights = arc_fractions(&demo);

    // Rigidly move the demo start onto the task start.
    let g = *start * skill.start().conjugate();
    let mapped: Vec<DualQuaternion> = demo.iter().map(|p| g * *p).collect();
    let ps = start.translation();
    let pg = goal.translation();

    // Swing the demo displacement onto the task displacement about the start.
    let dm = mapped[n_out - 1].translation() - ps;
    let dt = pg - ps;
    let ra = if dm.norm() > 1e-12 && dt.norm() > 1e-12 {
        align_rotation(&dm.normalize(), &dt.normalize())
    } else {
        Quaternion::IDENTITY
    };
    let swung: Vec<(Vec3, Quaternion)> = mapped
        .iter()
        .map(|p| (ps + ra.rotate(&(p.translation() - ps)), ra * p.real))
        .collect();

    // Distribute the remaining endpoint mismatch along the path.
    let (end_p, end_q) = swung[n_out - 1];
    let dp = pg - end_p;
    let ra_inv = ra.conjugate();
    let q_fix = goal.real * end_q.conjugate();
    let mut out: Vec<DualQuaternion> = swung
        .iter()
        .zip(&weights)
        .map(|((p, q), &w)| {
            let corr = ra_inv.slerp(&q_fix, w);
            let q = (corr * *q).normalized().expect("unit rotation");
            DualQuaternion::from_rotation_translation(q, &(p + dp * w))
        })
        .collect();
    out[0] = *start;
    out[n_out - 1] = *goal;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dualquat::tests::arb_unit_dq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn line_skill(n: usize, end: Vec3) -> Demonstration {
        let poses = (0..n)
            .map(|k| DualQuaternion::from_translation(&(end * (k as f64 / (n - 1) as f64))))
            .collect();
        Demonstration::new("line", vec![], poses).unwrap()
    }

    fn curved_skill() -> Demonstration {
        let poses = (0..12)
            .map(|k| {
                let u = k as f64 / 11.0;
                DualQuaternion::from_position_euler(&Vec3::new(0.2 * u, 0.08 * (std::f64::consts::PI * u).sin(), 0.0), [0.0, 0.0, 0.6 * u])
            })
            .collect();
        Demonstration::new("arc", vec!["transfer".into()], poses).unwrap()
    }

    #[test]
    fn feature_examples() {
        let a = DualQuaternion::from_position_euler(&Vec3::new(0.1, 0.2, 0.0), [0.0, 0.0, 0.4]);
        let f = extract_features(&[a, a, a]).unwrap();
        assert!(f.iter().all(|d| d.chordal_distance(&DualQuaternion::IDENTITY) < 1e-15));
        let b = DualQuaternion::from_translation(&Vec3::new(0.3, 0.0, 0.0));
        assert_eq!(extract_features(&[a, b]).unwrap(), vec![a.conjugate() * b]);
        assert!(matches!(extract_features(&[a]), Err(Error::TrajectoryTooShort { .. })));
    }

    #[test]
    fn demo_text_round_trip() {
        let s = curved_skill();
        let back = Demonstration::parse(&s.to_text()).unwrap();
        assert_eq!(back, s);
        assert!(Demonstration::parse("1 0 0 0 0 0 0 0").is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let s = curved_skill();
        assert!(matches!(SkillLibrary::new(vec![s.clone(), s]), Err(Error::DuplicateSkill(_))));
    }

    #[test]
    fn self_retarget_reproduces_demo() {
        let s = curved_skill();
        let out = retarget(&s, s.start(), s.goal(), s.poses.len()).unwrap();
        for (a, b) in out.iter().zip(&s.poses) {
            assert!(a.chordal_distance(b) < 1e-8);
        }
    }

    #[test]
    fn straight_skill_maps_to_straight_line() {
        let s = line_skill(9, Vec3::new(0.1, 0.0, 0.0));
        let start = DualQuaternion::from_translation(&Vec3::new(0.05, 0.1, 0.0));
        let goal = DualQuaternion::from_translation(&Vec3::new(-0.1, 0.25, 0.0));
        let out = retarget(&s, &start, &goal, 21).unwrap();
        let (ps, pg) = (start.translation(), goal.translation());
        for (k, p) in out.iter().enumerate() {
            // Sclerp oracle between the new endpoints (pure translations).
            let oracle = start.sclerp(&goal, k as f64 / 20.0).translation();
            assert!((p.translation() - oracle).norm() < 1e-12, "{k}");
            let off = (p.translation() - ps).cross(&(pg - ps).normalize()).norm();
            assert!(off < 1e-12);
        }
    }

    #[test]
    fn goal_rotated_about_z_rotates_path() {
        let s = curved_skill();
        let g = DualQuaternion::from_rotation(Quaternion::from_axis_angle(&Vec3::z(), FRAC_PI_2).unwrap());
        let start = *s.start();
        let goal = g * *s.goal();
        let out = retarget(&s, &start, &goal, s.poses.len()).unwrap();
        for (a, b) in out.iter().zip(&s.poses) {
            let expected = g.transform_point(&b.translation());
            assert!((a.translation() - expected).norm() < 1e-9);
        }
    }

    #[test]
    fn constant_skill_mismatch() {
        let p = DualQuaternion::from_translation(&Vec3::new(0.1, 0.0, 0.0));
        let s = Demonstration::new("still", vec![], vec![p, p, p]).unwrap();
        let q = DualQuaternion::from_translation(&Vec3::new(0.2, 0.0, 0.0));
        assert!(matches!(retarget(&s, &p, &q, 5), Err(Error::DisplacementMismatch)));
        assert_eq!(retarget(&s, &q, &q, 4).unwrap(), vec![q; 4]);
    }

    #[test]
    fn beta_examples() {
        let a = curved_skill().features;
        assert_eq!(feature_distance(&a, &a), 0.0);
        // One-element sequences differing by a pure translation of length d:
        // every resampled term is ‖(0, d/2, 0, 0)‖ = d/2.
        for d in [0.01, 0.02, 0.04] {
            let x = vec![DualQuaternion::IDENTITY];
            let y = vec![DualQuaternion::from_translation(&Vec3::new(d, 0.0, 0.0))];
            let beta = feature_distance(&x, &y);
            assert!((beta - FEATURE_SAMPLES as f64 * d / 2.0).abs() < 1e-12);
        }
    }

    fn arb_skill() -> impl Strategy<Value = Demonstration> {
        prop::collection::vec(arb_unit_dq(), 2..8)
            .prop_filter_map("non-constant", |poses| {
                let d = Demonstration::new("s", vec![], poses).ok()?;
                (!d.is_constant()).then_some(d)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn retarget_endpoints_exact(s in arb_skill(), a in arb_unit_dq(), b in arb_unit_dq(), n in 2usize..30) {
            let out = retarget(&s, &a, &b, n).unwrap();
            prop_assert_eq!(out.len(), n);
            prop_assert!(out[0].chordal_distance(&a) <= 1e-9);
            prop_assert!(out[n - 1].chordal_distance(&b) <= 1e-9);
            prop_assert!(out.iter().all(|p| p.unit_error() < 1e-9));
        }

        #[test]
        fn retarget_is_idempotent(s in arb_skill(), a in arb_unit_dq(), b in arb_unit_dq()) {
            let n = 15;
            let once = retarget(&s, &a, &b, n).unwrap();
            let again = Demonstration::new("r", vec![], once.clone()).unwrap();
            let twice = retarget(&again, &a, &b, n).unwrap();
            for (x, y) in once.iter().zip(&twice) {
                prop_assert!(x.chordal_distance(y) < 1e-8);
            }
        }

        #[test]
        fn features_invariant_under_rigid_shift(poses in prop::collection::vec(arb_unit_dq(), 2..10), g in arb_unit_dq()) {
            let shifted: Vec<_> = poses.iter().map(|p| g * *p).collect();
            let a = extract_features(&poses).unwrap();
            let b = extract_features(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(x.chordal_distance(y) < 1e-8);
            }
        }

        #[test]
        fn beta_symmetric_and_triangle(
            a in prop::collection::vec(arb_unit_dq(), 1..6),
            b in prop::collection::vec(arb_unit_dq(), 1..6),
            c in prop::collection::vec(arb_unit_dq(), 1..6),
        ) {
            let ab = feature_distance(&a, &b);
            prop_assert!((ab - feature_distance(&b, &a)).abs() < 1e-9);
            prop_assert!(feature_distance(&a, &c) <= ab + feature_distance(&b, &c) + 1e-9);
        }
    }
}
