//! Dataset construction: catalog annotation, location clustering, scenario
//! planning, session generation and tagging, screening, and the batch runner.

mod catalog;
mod cluster;
mod filter;
mod generate;
mod runner;
mod scenario;

pub use catalog::{annotate_catalog, load_catalog, parse_catalog_csv, parse_catalog_jsonl, write_items_jsonl, CatalogError};
pub use cluster::{cluster_by_location, ClusterError, Clustering, DEFAULT_K, MAX_ITERATIONS, TOLERANCE};
pub use filter::{episode_material, screen_episode, structural_filter, FilterReport};
pub use generate::{
    generate_episode, generate_from_scenario, generate_session, parse_dialogue, parse_memory_tags, parse_modality_tags,
    tag_memory_refs, tag_modality_turns, GenError, TagError,
};
pub use runner::{assemble, episode_id, read_ledger, run_generation, GenConfig, GenSummary, JobStatus, LedgerEntry, RunError, MAX_OFFERED};
pub use scenario::{
    build_scenario, check_pair_alignment, parse_scenario_response, BuildError, Scenario, ScenarioError, SessionPlan,
    SCENARIO_ATTEMPTS,
};
