//! Object search over semantic osmAG maps.
//!
//! A map of polygonal areas, passages and semantic nodes is reduced to a
//! coordinate-free text outline, a text model proposes rooms and nodes to
//! visit, and a simulated robot drives to each one on an occupancy grid,
//! replanning around furniture the map does not know about, until a
//! two-stage detector confirms the object. The [`eval`] module scores batches
//! of such episodes.
//!
//! Offline backends ([`llm::HeuristicBackend`], [`llm::ScriptedBackend`]) and
//! seeded randomness make every run reproducible.

pub mod detection;
pub mod enrichment;
pub mod episode;
pub mod eval;
pub mod fixtures;
pub mod geo;
pub mod grid;
pub mod llm;
pub mod osmag;
pub mod retrieval;

pub use detection::{DetectionOutcome, DetectionProfile, Proposal};
pub use episode::{run_episode, Environment, EpisodeConfig, EpisodeRecord};
pub use eval::{Experiment, ExperimentConfig, MetricsConfig, MetricsReport};
pub use geo::{GeoPoint, MetricPoint};
pub use grid::{navigate, plan_path, render_grid, NavOutcome, OccupancyGrid, Path, Pose, WorldModel};
pub use llm::{CompletionRequest, HeuristicBackend, LiveBackend, ScriptedBackend, TextBackend};
pub use osmag::{parse_osmag, serialize_osmag, validate, Area, MapNode, Passage, SemanticMap, Violation};
pub use retrieval::{retrieve, Granularity, MapMode, Query, QueryCategory, RetrievalPlan};
