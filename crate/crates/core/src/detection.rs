//! Simulated two-stage detection: ranked open-vocabulary proposals, each
//! checked by a yes/no verifier, over a full turn of views at a node.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{angle_diff_deg, MetricPoint};
use crate::grid::{Pose, Scene, SensorConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionProfile {
    /// Chance a visible target yields a proposal in one view.
    pub p_propose_tp: f64,
    /// Mean number of spurious proposals per view.
    pub fp_rate: f64,
    /// Uniform confidence range of target proposals.
    pub conf_tp: [f64; 2],
    /// Uniform confidence range of spurious proposals.
    pub conf_fp: [f64; 2],
    pub p_verify_tp: f64,
    pub p_verify_fp: f64,
    pub rotation_step_deg: f64,
}

impl Default for DetectionProfile {
    fn default() -> Self {
        Self {
            p_propose_tp: 0.9,
            fp_rate: 0.3,
            conf_tp: [0.5, 0.95],
            conf_fp: [0.1, 0.6],
            p_verify_tp: 0.95,
            p_verify_fp: 0.05,
            rotation_step_deg: 90.0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("{0} must lie in [0, 1]")]
    Probability(&'static str),
    #[error("fp_rate must be finite and non-negative")]
    FpRate,
    #[error("{0} must be an ordered range inside [0, 1]")]
    Confidence(&'static str),
    #[error("rotation step {0} does not divide 360")]
    Rotation(f64),
    #[error("profile file: {0}")]
    Json(String),
}

impl DetectionProfile {
    /// Every visible target is proposed and accepted; nothing spurious.
    pub fn perfect() -> Self {
        Self {
            p_propose_tp: 1.0,
            fp_rate: 0.0,
            p_verify_tp: 1.0,
            p_verify_fp: 0.0,
            ..Self::default()
        }
    }

    /// Never detects anything: the robot only drives the plan.
    pub fn disabled() -> Self {
        Self {
            p_propose_tp: 0.0,
            fp_rate: 0.0,
            p_verify_tp: 0.0,
            p_verify_fp: 0.0,
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ProfileError> {
        let p: Self = serde_json::from_str(text).map_err(|e| ProfileError::Json(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        for (name, p) in [
            ("p_propose_tp", self.p_propose_tp),
            ("p_verify_tp", self.p_verify_tp),
            ("p_verify_fp", self.p_verify_fp),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ProfileError::Probability(name));
            }
        }
        if !(self.fp_rate.is_finite() && self.fp_rate >= 0.0) {
            return Err(ProfileError::FpRate);
        }
        for (name, [lo, hi]) in [("conf_tp", self.conf_tp), ("conf_fp", self.conf_fp)] {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(ProfileError::Confidence(name));
            }
        }
        let views = 360.0 / self.rotation_step_deg;
        if !(self.rotation_step_deg > 0.0 && self.rotation_step_deg <= 360.0 && (views - views.round()).abs() < 1e-9) {
            return Err(ProfileError::Rotation(self.rotation_step_deg));
        }
        Ok(())
    }

    pub fn view_headings(&self) -> Vec<f64> {
        let n = (360.0 / self.rotation_step_deg).round() as usize;
        (0..n).map(|k| k as f64 * self.rotation_step_deg).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub confidence: f64,
    /// World instance the box covers; absent for spurious boxes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<usize>,
    pub bearing_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewTrace {
    pub heading_deg: f64,
    pub proposals: Vec<Proposal>,
    /// Verifier answers, in proposal order, up to the first acceptance.
    pub verdicts: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub found: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_instance: Option<usize>,
    pub views_used: usize,
    pub is_true_positive: bool,
    pub trace: Vec<ViewTrace>,
}

fn bearing(from: MetricPoint, to: MetricPoint) -> f64 {
    (to.y - from.y).atan2(to.x - from.x).to_degrees()
}

/// Instances within range and field of view with a clear sight line.
pub fn visible_instances(scene: &Scene, pose: Pose, sensor: &SensorConfig) -> Vec<usize> {
    let at = pose.position();
    scene
        .world
        .instances
        .iter()
        .enumerate()
        .filter(|(_, inst)| {
            let p = inst.position();
            let d = at.distance(&p);
            if d > sensor.range_m {
                return false;
            }
            // An instance at the robot's own position is in every view.
            let in_fov = d < 1e-9 || angle_diff_deg(bearing(at, p), pose.heading_deg).abs() <= sensor.fov_deg / 2.0;
            in_fov && scene.line_of_sight(at, p)
        })
        .map(|(i, _)| i)
        .collect()
}

fn labels_match(a: &str, b: &str) -> bool {
    a.trim().eq_ignore_ascii_case(b.trim())
}

fn sort_ranked(props: &mut [Proposal]) {
    props.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
}

/// One view's ranked proposals for `query`.
pub fn propose(
    scene: &Scene,
    pose: Pose,
    sensor: &SensorConfig,
    query: &str,
    profile: &DetectionProfile,
    rng: &mut (impl Rng + ?Sized),
) -> Vec<Proposal> {
    let at = pose.position();
    let mut out = Vec::new();
    for i in visible_instances(scene, pose, sensor) {
        let inst = &scene.world.instances[i];
        if !labels_match(&inst.label, query) {
            continue;
        }
        if rng.random_bool(profile.p_propose_tp) {
            let [lo, hi] = profile.conf_tp;
            out.push(Proposal {
                confidence: rng.random_range(lo..=hi),
                instance: Some(i),
                bearing_deg: bearing(at, inst.position()),
            });
        }
    }
    let spurious = if profile.fp_rate > 0.0 {
        Poisson::new(profile.fp_rate).expect("validated rate").sample(rng) as usize
    } else {
        0
    };
    for _ in 0..spurious {
        let [lo, hi] = profile.conf_fp;
        let half = sensor.fov_deg / 2.0;
        out.push(Proposal {
            confidence: rng.random_range(lo..=hi),
            instance: None,
            bearing_deg: pose.heading_deg + rng.random_range(-half..=half),
        });
    }
    sort_ranked(&mut out);
    out
}

/// The yes/no check on one proposal.
pub fn verify(proposal: &Proposal, profile: &DetectionProfile, rng: &mut (impl Rng + ?Sized)) -> bool {
    let p = if proposal.instance.is_some() {
        profile.p_verify_tp
    } else {
        profile.p_verify_fp
    };
    rng.random_bool(p)
}

/// Where proposals come from: the simulator or someone else's detector.
pub trait ProposalSource: Send + Sync {
    fn proposals(
        &self,
        scene: &Scene,
        pose: Pose,
        query: &str,
        profile: &DetectionProfile,
        rng: &mut dyn rand::RngCore,
    ) -> Vec<Proposal>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimulatedDetector;

impl ProposalSource for SimulatedDetector {
    fn proposals(
        &self,
        scene: &Scene,
        pose: Pose,
        query: &str,
        profile: &DetectionProfile,
        rng: &mut dyn rand::RngCore,
    ) -> Vec<Proposal> {
        propose(scene, pose, &scene.world.sensor, query, profile, rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalEntry {
    pub x: f64,
    pub y: f64,
    pub heading_deg: f64,
    pub query: String,
    pub proposals: Vec<Proposal>,
}

/// Replays proposal lists recorded elsewhere, matched by pose and query.
/// Views with no entry yield no proposals.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExternalProposals {
    pub entries: Vec<ExternalEntry>,
    #[serde(default = "ExternalProposals::default_tolerance")]
    pub position_tolerance_m: f64,
}

impl ExternalProposals {
    fn default_tolerance() -> f64 {
        0.1
    }
}

impl ProposalSource for ExternalProposals {
    fn proposals(
        &self,
        _scene: &Scene,
        pose: Pose,
        query: &str,
        _profile: &DetectionProfile,
        _rng: &mut dyn rand::RngCore,
    ) -> Vec<Proposal> {
        let mut out: Vec<Proposal> = self
            .entries
            .iter()
            .find(|e| {
                labels_match(&e.query, query)
                    && MetricPoint::new(e.x, e.y).distance(&pose.position()) <= self.position_tolerance_m
                    && angle_diff_deg(e.heading_deg, pose.heading_deg).abs() < 1e-6
            })
            .map(|e| e.proposals.clone())
            .unwrap_or_default();
        sort_ranked(&mut out);
        out
    }
}

/// Turns through every view heading at `at`; in each view, verifies
/// proposals in confidence order. The first accepted proposal ends the
/// search.
pub fn detect_at_node(
    scene: &Scene,
    at: MetricPoint,
    query: &str,
    profile: &DetectionProfile,
    source: &dyn ProposalSource,
    rng: &mut dyn rand::RngCore,
) -> DetectionOutcome {
    let mut trace = Vec::new();
    for heading in profile.view_headings() {
        let pose = Pose::new(at.x, at.y, heading);
        let proposals = source.proposals(scene, pose, query, profile, rng);
        let mut verdicts = Vec::new();
        let mut accepted = None;
        for p in &proposals {
            let ok = verify(p, profile, rng);
            verdicts.push(ok);
            if ok {
                accepted = Some(p.clone());
                break;
            }
        }
        trace.push(ViewTrace {
            heading_deg: heading,
            proposals,
            verdicts,
        });
        if let Some(p) = accepted {
            let is_true_positive = p.instance.is_some_and(|i| {
                scene
                    .world
                    .instances
                    .get(i)
                    .is_some_and(|inst| labels_match(&inst.label, query))
            });
            return DetectionOutcome {
                found: true,
                matched_instance: p.instance,
                views_used: trace.len(),
                is_true_positive,
                trace,
            };
        }
    }
    DetectionOutcome {
        found: false,
        matched_instance: None,
        views_used: trace.len(),
        is_true_positive: false,
        trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPoint;
    use crate::grid::{Obstacle, OccupancyGrid, WorldInstance, WorldModel};
    use crate::osmag::SemanticMap;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene(instances: Vec<WorldInstance>, obstacles: Vec<Obstacle>) -> Scene {
        let grid = OccupancyGrid::new(0.1, MetricPoint::new(-10.0, -10.0), 200, 200).unwrap();
        let world = WorldModel {
            instances,
            obstacles,
            include_map_walls: false,
            ..WorldModel::default()
        };
        Scene::build(&world, &SemanticMap::new(GeoPoint::new(31.0, 121.0)), &grid)
    }

    #[test]
    fn visibility_rules() {
        let s = scene(
            vec![
                WorldInstance::new("cup", 1.0, 0.0),
                WorldInstance::new("cup", 0.0, 3.0),
                WorldInstance::new("cup", 4.1, 0.0),
            ],
            vec![Obstacle::segment(-1.0, 2.0, 1.0, 2.0)],
        );
        let sensor = SensorConfig::default();
        assert_eq!(visible_instances(&s, Pose::new(0.0, 0.0, 0.0), &sensor), vec![0]);
        assert!(visible_instances(&s, Pose::new(0.0, 0.0, 90.0), &sensor).is_empty());
    }

    #[test]
    fn perfect_single_target() {
        let s = scene(vec![WorldInstance::new("cup", 1.0, 0.0)], vec![]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = propose(
            &s,
            Pose::new(0.0, 0.0, 0.0),
            &s.world.sensor,
            "cup",
            &DetectionProfile::perfect(),
            &mut rng,
        );
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].instance, Some(0));
        assert!(propose(
            &s,
            Pose::new(0.0, 0.0, 180.0),
            &s.world.sensor,
            "cup",
            &DetectionProfile::perfect(),
            &mut rng
        )
        .is_empty());
    }

    #[test]
    fn rotation_finds_target_behind() {
        let s = scene(vec![WorldInstance::new("cup", -2.0, 0.0)], vec![]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = detect_at_node(
            &s,
            MetricPoint::new(0.0, 0.0),
            "cup",
            &DetectionProfile::perfect(),
            &SimulatedDetector,
            &mut rng,
        );
        assert!(out.found && out.is_true_positive);
        assert_eq!(out.views_used, 3);
        let none = detect_at_node(
            &s,
            MetricPoint::new(0.0, 0.0),
            "mug",
            &DetectionProfile::perfect(),
            &SimulatedDetector,
            &mut rng,
        );
        assert!(!none.found && none.matched_instance.is_none());
        assert_eq!(none.views_used, 4);
    }

    #[test]
    fn accepting_verifier_yields_false_positive() {
        let s = scene(vec![], vec![]);
        let profile = DetectionProfile {
            fp_rate: 3.0,
            p_verify_fp: 1.0,
            ..DetectionProfile::perfect()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = detect_at_node(
            &s,
            MetricPoint::new(0.0, 0.0),
            "cup",
            &profile,
            &SimulatedDetector,
            &mut rng,
        );
        assert!(out.found && !out.is_true_positive);
        assert!(out.matched_instance.is_none());
    }

    #[test]
    fn profile_validation() {
        assert!(DetectionProfile::default().validate().is_ok());
        let bad = DetectionProfile {
            rotation_step_deg: 70.0,
            ..DetectionProfile::default()
        };
        assert_eq!(bad.validate(), Err(ProfileError::Rotation(70.0)));
        let bad = DetectionProfile {
            p_verify_fp: 1.5,
            ..DetectionProfile::default()
        };
        assert_eq!(bad.validate(), Err(ProfileError::Probability("p_verify_fp")));
        assert_eq!(
            DetectionProfile::default().view_headings(),
            vec![0.0, 90.0, 180.0, 270.0]
        );
    }

    #[test]
    fn external_source_replays() {
        let s = scene(vec![], vec![]);
        let ext = ExternalProposals {
            entries: vec![ExternalEntry {
                x: 0.0,
                y: 0.0,
                heading_deg: 90.0,
                query: "cup".into(),
                proposals: vec![
                    Proposal {
                        confidence: 0.2,
                        instance: None,
                        bearing_deg: 90.0,
                    },
                    Proposal {
                        confidence: 0.7,
                        instance: None,
                        bearing_deg: 80.0,
                    },
                ],
            }],
            position_tolerance_m: 0.1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ext.proposals(
            &s,
            Pose::new(0.05, 0.0, 90.0),
            "cup",
            &DetectionProfile::perfect(),
            &mut rng,
        );
        assert_eq!(p[0].confidence, 0.7);
        assert!(ext
            .proposals(
                &s,
                Pose::new(0.0, 0.0, 0.0),
                "cup",
                &DetectionProfile::perfect(),
                &mut rng
            )
            .is_empty());
    }
}
