use patchfield::attack::{Mode, StopReason, TransferMetric};
use patchfield::encoder::EncoderKind;
use patchfield::loss::{EncoderCosines, LocalMode, LossTerms};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// JSON schema for `report.json`, kept in the repository.
pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

pub const ADV_FILE: &str = "adv.png";
pub const PATCH_FILE: &str = "patch.png";
pub const MASK_FILE: &str = "mask.png";
pub const FIELD_FILE: &str = "field.png";
pub const TRACE_FILE: &str = "trace.csv";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub variant: String,
    pub local_loss_mode: LocalMode,
    pub mode: Mode,
    pub seed: u64,
    pub stop_reason: StopReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub iterations_run: usize,
    pub region: RegionSummary,
    pub summary: Summary,
    pub files: Vec<String>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub id: i64,
    pub label: String,
    pub bbox: [f64; 4],
    pub centroid: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Full-frame alignment loss on the clean scene.
    pub initial_loss: LossTerms,
    /// Same metric on the adversarial image; absent after an abort.
    pub final_loss: Option<LossTerms>,
    pub mask_area_initial: usize,
    pub mask_area_final: usize,
    pub area_threshold: usize,
    pub iterations_to_freeze: Option<usize>,
    pub mask_updates: usize,
    pub tau_final: f64,
    /// `max |δ − I|` over all pixels and channels.
    pub linf_distance: f64,
    pub guarded_pairs: usize,
    pub encoders: Vec<EncoderSummary>,
    pub transfer: Vec<TransferMetric>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSummary {
    pub index: usize,
    pub kind: EncoderKind,
    pub seed: u64,
    pub clean: EncoderCosines,
    pub adversarial: Option<EncoderCosines>,
}
