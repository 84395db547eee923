//! Retrieval and navigation metrics over episode records, query-suite
//! generation, and the batch experiment runner.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::detection::{DetectionProfile, ExternalProposals, ProfileError, ProposalSource};
use crate::episode::{episode_id, run_episode, Environment, EpisodeConfig, EpisodeError, EpisodeRecord};
use crate::geo::{point_in_polygon, MetricPoint};
use crate::grid::{inflate, NavConfig, Pose, WorldError, WorldModel};
use crate::llm::{HeuristicBackend, LiveBackend, LiveConfig, LlmError, ScriptedBackend, TextBackend};
use crate::osmag::{parse_osmag, serialize_osmag, ParseError, SemanticMap};
use crate::retrieval::{Granularity, MapMode, Query, QueryCategory};

/// A plan point this close to ground truth counts as a hit for DIR's
/// "initially failed" test.
pub const DIR_HIT_RADIUS_M: f64 = 1.0;
/// Plan prefix length used by AMD and DIR.
pub const TOP_N_FOR_DISTANCE: usize = 5;
/// SO instances lie within this of a same-label object node.
pub const STATIC_RADIUS_M: f64 = 1.0;
/// RO instances lie farther than this from every same-label object node.
pub const RELOCATED_RADIUS_M: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DirMode {
    #[default]
    AllQueries,
    FailedOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub k_thresholds_m: Vec<f64>,
    pub n_values: Vec<usize>,
    pub success_radius_m: f64,
    pub dir_mode: DirMode,
    /// Restricts APL to these episode ids, e.g. those a baseline also solved.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub success_ids: Option<BTreeSet<String>>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            k_thresholds_m: vec![1.0, 2.0, 3.0],
            n_values: vec![1, 5],
            success_radius_m: 1.0,
            dir_mode: DirMode::AllQueries,
            success_ids: None,
        }
    }
}

impl MetricsConfig {
    pub fn check(&self) -> Result<(), String> {
        let k = &self.k_thresholds_m;
        if k.is_empty() || k.iter().any(|v| !(v.is_finite() && *v > 0.0)) || k.windows(2).any(|w| w[0] >= w[1]) {
            return Err("k thresholds must be positive and strictly ascending".into());
        }
        let n = &self.n_values;
        if n.is_empty() || n.contains(&0) || n.windows(2).any(|w| w[0] >= w[1]) {
            return Err("n values must be at least 1 and strictly ascending".into());
        }
        if !(self.success_radius_m.is_finite() && self.success_radius_m > 0.0) {
            return Err("success radius must be positive".into());
        }
        Ok(())
    }
}

fn nearest_gt(rec: &EpisodeRecord, p: MetricPoint) -> Option<f64> {
    rec.ground_truth
        .iter()
        .map(|g| g.position.distance(&p))
        .min_by(f64::total_cmp)
}

/// Distance to the nearest instance for each of the first `n` plan points;
/// `None` when there is no ground truth.
fn prefix_min(rec: &EpisodeRecord, n: usize) -> Option<f64> {
    rec.plan_points
        .iter()
        .take(n)
        .filter_map(|p| nearest_gt(rec, p.position))
        .min_by(f64::total_cmp)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

pub fn r_rsr(records: &[EpisodeRecord]) -> f64 {
    let hits = records
        .iter()
        .filter(|r| {
            r.top_room()
                .is_some_and(|room| r.ground_truth.iter().any(|g| g.areas.contains(&room)))
        })
        .count();
    ratio(hits, records.len())
}

pub fn o_rsr(records: &[EpisodeRecord], n: usize, k: f64) -> f64 {
    let hits = records
        .iter()
        .filter(|r| prefix_min(r, n).is_some_and(|d| d <= k))
        .count();
    ratio(hits, records.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceMean {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_m: Option<f64>,
    pub count: usize,
    pub excluded: usize,
}

/// Mean over records of the closest top-5 plan point's distance to ground
/// truth. Records with an empty plan or no ground truth are excluded.
pub fn amd(records: &[EpisodeRecord]) -> DistanceMean {
    let vals: Vec<f64> = records
        .iter()
        .filter_map(|r| prefix_min(r, TOP_N_FOR_DISTANCE))
        .collect();
    DistanceMean {
        mean_m: mean(&vals),
        count: vals.len(),
        excluded: records.len() - vals.len(),
    }
}

fn apl_allowed(r: &EpisodeRecord, cfg: &MetricsConfig) -> bool {
    cfg.success_ids.as_ref().is_none_or(|ids| ids.contains(&r.episode_id))
}

fn success_within(r: &EpisodeRecord, radius: f64) -> bool {
    r.success
        && r.success_point
            .and_then(|i| r.plan_points.get(i))
            .and_then(|p| nearest_gt(r, p.position))
            .is_some_and(|d| d <= radius)
}

/// Mean driven length over successes whose success point lies within the
/// success radius of an instance.
pub fn apl(records: &[EpisodeRecord], cfg: &MetricsConfig) -> DistanceMean {
    let vals: Vec<f64> = records
        .iter()
        .filter(|r| apl_allowed(r, cfg) && success_within(r, cfg.success_radius_m))
        .map(|r| r.driven_length)
        .collect();
    DistanceMean {
        mean_m: mean(&vals),
        count: vals.len(),
        excluded: records.len() - vals.len(),
    }
}

/// Mean driven length over every true-positive success, wherever it
/// happened.
pub fn apl_true_positive(records: &[EpisodeRecord], cfg: &MetricsConfig) -> DistanceMean {
    let vals: Vec<f64> = records
        .iter()
        .filter(|r| apl_allowed(r, cfg) && r.success)
        .map(|r| r.driven_length)
        .collect();
    DistanceMean {
        mean_m: mean(&vals),
        count: vals.len(),
        excluded: records.len() - vals.len(),
    }
}

/// Records whose top-5 plan points all miss ground truth by more than 1 m;
/// empty plans and records without ground truth qualify.
pub fn initially_failed(r: &EpisodeRecord) -> bool {
    prefix_min(r, TOP_N_FOR_DISTANCE).is_none_or(|d| d > DIR_HIT_RADIUS_M)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirCounts {
    pub total: usize,
    pub initially_failed: usize,
    pub recovered: usize,
}

impl DirCounts {
    pub fn rate(&self, mode: DirMode) -> f64 {
        match mode {
            DirMode::AllQueries => ratio(self.recovered, self.total),
            DirMode::FailedOnly => ratio(self.recovered, self.initially_failed),
        }
    }
}

pub fn dir_counts(records: &[EpisodeRecord]) -> DirCounts {
    let failed: Vec<&EpisodeRecord> = records.iter().filter(|r| initially_failed(r)).collect();
    DirCounts {
        total: records.len(),
        initially_failed: failed.len(),
        recovered: failed.iter().filter(|r| r.success).count(),
    }
}

pub fn dir(records: &[EpisodeRecord], mode: DirMode) -> f64 {
    dir_counts(records).rate(mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ORsrCell {
    pub n: usize,
    pub k_m: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub episodes: usize,
    pub r_rsr: f64,
    pub o_rsr: Vec<ORsrCell>,
    pub amd: DistanceMean,
    pub apl: DistanceMean,
    pub apl_true_positive: DistanceMean,
    /// DIR under the configured denominator.
    pub dir: f64,
    pub dir_all_queries: f64,
    pub dir_failed_only: f64,
    pub dir_counts: DirCounts,
    pub success_rate: f64,
}

impl MetricSet {
    pub fn compute(records: &[EpisodeRecord], cfg: &MetricsConfig) -> Self {
        let counts = dir_counts(records);
        let mut cells = Vec::new();
        for &n in &cfg.n_values {
            for &k in &cfg.k_thresholds_m {
                cells.push(ORsrCell {
                    n,
                    k_m: k,
                    rate: o_rsr(records, n, k),
                });
            }
        }
        Self {
            episodes: records.len(),
            r_rsr: r_rsr(records),
            o_rsr: cells,
            amd: amd(records),
            apl: apl(records, cfg),
            apl_true_positive: apl_true_positive(records, cfg),
            dir: counts.rate(cfg.dir_mode),
            dir_all_queries: counts.rate(DirMode::AllQueries),
            dir_failed_only: counts.rate(DirMode::FailedOnly),
            dir_counts: counts,
            success_rate: ratio(records.iter().filter(|r| r.success).count(), records.len()),
        }
    }

    pub fn o_rsr_at(&self, n: usize, k: f64) -> Option<f64> {
        self.o_rsr.iter().find(|c| c.n == n && c.k_m == k).map(|c| c.rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactSize {
    pub path: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSizeReport {
    pub map_bytes: u64,
    pub semantic_nodes: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub comparisons: Vec<ArtifactSize>,
}

/// Canonical serialized size of `map`, plus the on-disk size of any
/// comparison artifacts.
pub fn map_size(map: &SemanticMap, comparisons: &[PathBuf]) -> Result<MapSizeReport, ExperimentError> {
    let mut out = Vec::new();
    for p in comparisons {
        let meta = std::fs::metadata(p).map_err(|e| ExperimentError::Io(p.clone(), e))?;
        out.push(ArtifactSize {
            path: p.display().to_string(),
            bytes: meta.len(),
        });
    }
    Ok(MapSizeReport {
        map_bytes: serialize_osmag(map).len() as u64,
        semantic_nodes: map.semantic_nodes().count(),
        comparisons: out,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: MetricsConfig,
    pub overall: MetricSet,
    pub by_category: BTreeMap<String, MetricSet>,
    pub by_granularity: BTreeMap<String, MetricSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map_size: Option<MapSizeReport>,
}

impl MetricsReport {
    pub fn compute(records: &[EpisodeRecord], cfg: &MetricsConfig) -> Self {
        let mut by_cat: BTreeMap<String, Vec<EpisodeRecord>> = BTreeMap::new();
        let mut by_gran: BTreeMap<String, Vec<EpisodeRecord>> = BTreeMap::new();
        for r in records {
            if let Some(c) = r.query.category {
                by_cat.entry(format!("{c:?}")).or_default().push(r.clone());
            }
            by_gran
                .entry(r.granularity.label().to_string())
                .or_default()
                .push(r.clone());
        }
        Self {
            config: cfg.clone(),
            overall: MetricSet::compute(records, cfg),
            by_category: by_cat
                .iter()
                .map(|(k, v)| (k.clone(), MetricSet::compute(v, cfg)))
                .collect(),
            by_granularity: by_gran
                .iter()
                .map(|(k, v)| (k.clone(), MetricSet::compute(v, cfg)))
                .collect(),
            map_size: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    /// Header then one row per group, columns as in the usual retrieval
    /// results table. Absent values are empty strings.
    pub fn table_rows(&self) -> Vec<Vec<String>> {
        let mut ns = self.config.n_values.clone();
        ns.sort_unstable_by(|a, b| b.cmp(a));
        let mut header = vec!["group".to_string(), "episodes".into(), "R-RSR".into()];
        for n in &ns {
            for k in &self.config.k_thresholds_m {
                header.push(format!("O-RSR top{n} {k}m"));
            }
        }
        header.extend(["AMD".into(), "DIR".into(), "APL".into()]);
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        let row = |name: String, m: &MetricSet| {
            let mut cols = vec![name, m.episodes.to_string(), format!("{:.4}", m.r_rsr)];
            for n in &ns {
                for k in &self.config.k_thresholds_m {
                    cols.push(fmt(m.o_rsr_at(*n, *k)));
                }
            }
            cols.extend([fmt(m.amd.mean_m), format!("{:.4}", m.dir), fmt(m.apl.mean_m)]);
            cols
        };
        let mut rows = vec![header, row("all".into(), &self.overall)];
        rows.extend(self.by_category.iter().map(|(k, m)| row(k.clone(), m)));
        rows.extend(self.by_granularity.iter().map(|(k, m)| {
            let label = k.chars().map(String::from).collect::<Vec<_>>().join(",");
            row(format!("({label})"), m)
        }));
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in self.table_rows() {
            w.write_record(&r).expect("writing to memory");
        }
        String::from_utf8(w.into_inner().expect("writing to memory")).expect("rows are UTF-8")
    }
}

#[derive(Debug, Error)]
pub enum QueryGenError {
    #[error("no {category:?} queries at granularity {granularity} can be built from this map and world")]
    Unrealizable {
        category: QueryCategory,
        granularity: &'static str,
    },
}

fn label_eq(a: &str, b: &str) -> bool {
    a.trim().eq_ignore_ascii_case(b.trim())
}

/// Level of an area, inherited from the nearest ancestor that has one.
fn inherited_level(map: &SemanticMap, area: i64) -> Option<String> {
    map.ancestors(area)
        .into_iter()
        .find_map(|a| map.area(a).and_then(|x| x.level()).map(str::to_string))
}

/// Queries of one category and granularity, one per distinct world label
/// that qualifies, sorted by label.
pub fn generate_queries(
    world: &WorldModel,
    map: &SemanticMap,
    granularity: Granularity,
    category: QueryCategory,
) -> Result<Vec<Query>, QueryGenError> {
    let object_nodes: Vec<(String, MetricPoint)> = map
        .semantic_nodes()
        .filter_map(|n| Some((n.object_name()?.to_string(), map.node_metric(n.id)?)))
        .collect();
    let mentioned = |label: &str| {
        map.semantic_nodes()
            .any(|n| n.labels().iter().any(|l| label_eq(l, label)))
    };
    let labels: BTreeSet<String> = world.instances.iter().map(|i| i.label.trim().to_lowercase()).collect();
    let mut out = Vec::new();
    for label in labels {
        let instances: Vec<MetricPoint> = world.instances_of(&label).map(|(_, i)| i.position()).collect();
        let mapped: Vec<MetricPoint> = object_nodes
            .iter()
            .filter(|(l, _)| label_eq(l, &label))
            .map(|(_, p)| *p)
            .collect();
        let ok = match category {
            QueryCategory::SO => {
                !mapped.is_empty()
                    && instances
                        .iter()
                        .all(|i| mapped.iter().any(|m| m.distance(i) <= STATIC_RADIUS_M))
            }
            QueryCategory::RO => {
                !mapped.is_empty()
                    && instances
                        .iter()
                        .all(|i| mapped.iter().all(|m| m.distance(i) > RELOCATED_RADIUS_M))
            }
            QueryCategory::UO => !mentioned(&label),
        };
        if !ok {
            continue;
        }
        let q = match granularity {
            Granularity::Object => Query::object(&label),
            _ => {
                let Some(area) = map.containing_area_metric(instances[0]) else {
                    continue;
                };
                let Some(room) = map.area(area).and_then(|a| a.name()) else {
                    continue;
                };
                let floor = if granularity == Granularity::ObjectRoomFloor {
                    match inherited_level(map, area) {
                        Some(f) => Some(f),
                        None => continue,
                    }
                } else {
                    None
                };
                Query::new(&label, Some(room), floor.as_deref()).expect("non-empty label with room")
            }
        };
        out.push(q.with_category(category));
    }
    if out.is_empty() {
        return Err(QueryGenError::Unrealizable {
            category,
            granularity: granularity.label(),
        });
    }
    Ok(out)
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("missing file {0}")]
    Missing(PathBuf),
    #[error("experiment config: {0}")]
    Config(String),
    #[error("map: {0}")]
    Map(#[from] ParseError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Queries(#[from] QueryGenError),
    #[error("no free start positions")]
    NoStarts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    #[default]
    Heuristic,
    Scripted {
        fixtures: PathBuf,
    },
    Live(LiveConfig),
}

/// A profile file path or an inline profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSpec {
    Path(PathBuf),
    Inline(DetectionProfile),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub granularity: Granularity,
    pub category: QueryCategory,
}

fn default_starts() -> usize {
    5
}

fn default_resolution() -> f64 {
    crate::grid::DEFAULT_RESOLUTION_M
}

/// Experiment description; relative paths resolve against the config file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub map: PathBuf,
    pub world: PathBuf,
    #[serde(default)]
    pub backend: BackendSpec,
    #[serde(default)]
    pub profile: Option<ProfileSpec>,
    /// Recorded detector output to replay instead of simulating proposals.
    #[serde(default)]
    pub proposals: Option<PathBuf>,
    #[serde(default)]
    pub suites: Vec<SuiteSpec>,
    #[serde(default)]
    pub queries: Vec<Query>,
    #[serde(default = "default_starts")]
    pub starts: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub map_mode: MapMode,
    #[serde(default = "default_resolution")]
    pub resolution: f64,
    #[serde(default)]
    pub nav: NavConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub compare_sizes: Vec<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }
}

fn read(path: &Path) -> Result<String, ExperimentError> {
    std::fs::read_to_string(path).map_err(|e| ExperimentError::Io(path.to_path_buf(), e))
}

/// Stable per-episode seed derived from the master seed and indices.
pub fn episode_seed(master: u64, query_index: usize, start_index: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((query_index as u64).to_le_bytes());
    h.update((start_index as u64).to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Uniformly drawn start poses: cells that are free in the inflated true
/// grid and lie inside a leaf area. World-file starts take precedence.
pub fn sample_starts(
    env: &Environment,
    count: usize,
    seed: u64,
    inflation_m: f64,
) -> Result<Vec<Pose>, ExperimentError> {
    let given = &env.world().starts;
    if !given.is_empty() {
        return Ok((0..count).map(|i| given[i % given.len()]).collect());
    }
    let truth = inflate(env.scene.truth_grid(), inflation_m);
    let rings: Vec<Vec<_>> = env
        .map
        .leaf_areas()
        .into_iter()
        .filter_map(|a| env.map.area_polygon_metric(a))
        .map(|poly| poly.iter().map(MetricPoint::as_planar).collect())
        .collect();
    let free: Vec<MetricPoint> = (0..truth.width() * truth.height())
        .map(|i| truth.cell_at(i))
        .filter(|&c| !truth.is_blocked(c))
        .map(|c| truth.center(c))
        .filter(|p| rings.iter().any(|r| point_in_polygon(p.as_planar(), r, 0.0)))
        .collect();
    if free.is_empty() {
        return Err(ExperimentError::NoStarts);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let p = free.choose(&mut rng).expect("non-empty");
            Pose::new(p.x, p.y, 0.0)
        })
        .collect())
}

/// Everything needed to run (query x start) episodes.
pub struct Experiment {
    pub env: Environment,
    pub queries: Vec<Query>,
    pub starts: Vec<Pose>,
    pub backend: Box<dyn TextBackend>,
    pub profile: DetectionProfile,
    pub source: Option<ExternalProposals>,
    pub nav: NavConfig,
    pub map_mode: MapMode,
    pub seed: u64,
    pub metrics: MetricsConfig,
    pub map_size: Option<MapSizeReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub records: Vec<EpisodeRecord>,
    pub report: MetricsReport,
}

impl ExperimentOutput {
    pub fn records_jsonl(&self) -> String {
        records_to_jsonl(&self.records)
    }
}

pub fn records_to_jsonl(records: &[EpisodeRecord]) -> String {
    records.iter().map(|r| r.to_json_line() + "\n").collect()
}

pub fn records_from_jsonl(text: &str) -> Result<Vec<EpisodeRecord>, (usize, serde_json::Error)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| EpisodeRecord::from_json_line(l).map_err(|e| (i + 1, e)))
        .collect()
}

impl Experiment {
    /// Reads a config file, checks that every referenced file exists, then
    /// loads everything.
    pub fn load(config_path: &Path) -> Result<Self, ExperimentError> {
        let cfg = ExperimentConfig::from_json(&read(config_path)?)?;
        let base = config_path.parent().unwrap_or(Path::new("."));
        Self::from_config(&cfg, base)
    }

    pub fn from_config(cfg: &ExperimentConfig, base: &Path) -> Result<Self, ExperimentError> {
        cfg.metrics.check().map_err(ExperimentError::Config)?;
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let mut files = vec![resolve(&cfg.map), resolve(&cfg.world)];
        if let BackendSpec::Scripted { fixtures } = &cfg.backend {
            files.push(resolve(fixtures));
        }
        if let Some(ProfileSpec::Path(p)) = &cfg.profile {
            files.push(resolve(p));
        }
        files.extend(cfg.proposals.iter().map(|p| resolve(p)));
        files.extend(cfg.compare_sizes.iter().map(|p| resolve(p)));
        if let Some(missing) = files.iter().find(|p| !p.is_file()) {
            return Err(ExperimentError::Missing(missing.clone()));
        }
        if cfg.suites.is_empty() && cfg.queries.is_empty() {
            return Err(ExperimentError::Config("no suites or queries given".into()));
        }

        let map = parse_osmag(&read(&resolve(&cfg.map))?)?;
        let world = WorldModel::from_json(&read(&resolve(&cfg.world))?)?;
        let profile = match &cfg.profile {
            None => DetectionProfile::default(),
            Some(ProfileSpec::Inline(p)) => {
                p.validate()?;
                p.clone()
            }
            Some(ProfileSpec::Path(p)) => DetectionProfile::from_json(&read(&resolve(p))?)?,
        };
        let backend: Box<dyn TextBackend> = match &cfg.backend {
            BackendSpec::Heuristic => Box::new(HeuristicBackend),
            BackendSpec::Scripted { fixtures } => Box::new(ScriptedBackend::from_json(&read(&resolve(fixtures))?)?),
            BackendSpec::Live(live) => Box::new(LiveBackend::from_env(live.clone())?),
        };
        let source = match &cfg.proposals {
            None => None,
            Some(p) => Some(
                serde_json::from_str::<ExternalProposals>(&read(&resolve(p))?)
                    .map_err(|e| ExperimentError::Config(format!("proposals: {e}")))?,
            ),
        };
        let mut queries = Vec::new();
        for s in &cfg.suites {
            queries.extend(generate_queries(&world, &map, s.granularity, s.category)?);
        }
        for q in &cfg.queries {
            q.check().map_err(|e| ExperimentError::Config(e.to_string()))?;
            queries.push(q.clone());
        }
        let sizes: Vec<PathBuf> = cfg.compare_sizes.iter().map(|p| resolve(p)).collect();
        let size = map_size(&map, &sizes)?;
        let env = Environment::new(map, world, cfg.resolution)?;
        let starts = sample_starts(&env, cfg.starts, cfg.seed, cfg.nav.inflation_m)?;
        Ok(Self {
            env,
            queries,
            starts,
            backend,
            profile,
            source,
            nav: cfg.nav,
            map_mode: cfg.map_mode,
            seed: cfg.seed,
            metrics: cfg.metrics.clone(),
            map_size: Some(size),
        })
    }

    pub fn episode_count(&self) -> usize {
        self.queries.len() * self.starts.len()
    }

    /// Runs every (query, start) pair on `jobs` threads. Output order is
    /// query-major and independent of `jobs`.
    pub fn run(&self, jobs: usize) -> Result<ExperimentOutput, ExperimentError> {
        let tasks: Vec<(usize, usize)> = (0..self.queries.len())
            .flat_map(|q| (0..self.starts.len()).map(move |s| (q, s)))
            .collect();
        let source = self.source.as_ref().map(|s| s as &dyn ProposalSource);
        let one = |&(qi, si): &(usize, usize)| {
            let cfg = EpisodeConfig {
                env: &self.env,
                query: self.queries[qi].clone(),
                backend: self.backend.as_ref(),
                profile: self.profile.clone(),
                nav: self.nav,
                map_mode: self.map_mode,
                seed: episode_seed(self.seed, qi, si),
                start: self.starts[si],
                source,
            };
            run_episode(&cfg, &episode_id(qi, si))
        };
        let records: Vec<EpisodeRecord> = if jobs <= 1 {
            tasks.iter().map(one).collect()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| ExperimentError::Config(e.to_string()))?;
            pool.install(|| tasks.par_iter().map(one).collect())
        };
        let mut report = MetricsReport::compute(&records, &self.metrics);
        report.map_size = self.map_size.clone();
        Ok(ExperimentOutput { records, report })
    }
}

/// One configuration of the packaged demo.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoRun {
    pub name: &'static str,
    pub output: ExperimentOutput,
}

pub const DEMO_STARTS: usize = 5;

/// The packaged five-room experiment: every category at every granularity,
/// heuristic backend, five sampled starts.
pub fn demo_experiment(seed: u64, map_mode: MapMode, profile: DetectionProfile) -> Result<Experiment, ExperimentError> {
    // Through the wire format, so the demo sees exactly the shipped file.
    let map = parse_osmag(&crate::osmag::serialize_osmag(&crate::fixtures::five_room_enriched()))?;
    let world = crate::fixtures::five_room_world();
    let mut queries = Vec::new();
    for g in [
        Granularity::Object,
        Granularity::ObjectRoom,
        Granularity::ObjectRoomFloor,
    ] {
        for c in [QueryCategory::SO, QueryCategory::RO, QueryCategory::UO] {
            queries.extend(generate_queries(&world, &map, g, c)?);
        }
    }
    let size = map_size(&map, &[])?;
    let nav = NavConfig::default();
    let env = Environment::new(map, world, crate::grid::DEFAULT_RESOLUTION_M)?;
    let starts = sample_starts(&env, DEMO_STARTS, seed, nav.inflation_m)?;
    Ok(Experiment {
        env,
        queries,
        starts,
        backend: Box::new(HeuristicBackend),
        profile,
        source: None,
        nav,
        map_mode,
        seed,
        metrics: MetricsConfig::default(),
        map_size: Some(size),
    })
}

/// Runs the demo three ways: full map with near-perfect detection, the
/// rooms-only map, and the full map with detection switched off.
pub fn run_demo(seed: u64, jobs: usize) -> Result<Vec<DemoRun>, ExperimentError> {
    let good = crate::fixtures::near_perfect_profile();
    let runs = [
        ("full", MapMode::Full, good.clone()),
        ("rooms_only", MapMode::RoomsOnly, good),
        ("detection_disabled", MapMode::Full, DetectionProfile::disabled()),
    ];
    runs.into_iter()
        .map(|(name, mode, profile)| {
            Ok(DemoRun {
                name,
                output: demo_experiment(seed, mode, profile)?.run(jobs)?,
            })
        })
        .collect()
}
