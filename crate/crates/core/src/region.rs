//! Candidate placement regions and the selection of the patch site.
//!
//! Candidate boxes come from an external proposal step and are read from a
//! JSON file. Which box hosts the patch is decided by a [`SelectionPolicy`].

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: i64,
    /// `[x, y, w, h]` in pixels.
    pub bbox: [f64; 4],
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSet {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected: Option<i64>,
    pub regions: Vec<Region>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionPolicy {
    #[default]
    Explicit,
    MaxScore,
    External,
}

/// Scores candidate regions out of process (the `external` policy).
pub trait RegionScorer {
    fn score(&self, regions: &RegionSet) -> Result<Vec<f64>>;
}

impl Region {
    pub fn centroid(&self) -> (f64, f64) {
        let [x, y, w, h] = self.bbox;
        (x + w / 2.0, y + h / 2.0)
    }
}

impl RegionSet {
    pub fn from_json(text: &str) -> Result<Self> {
        let rs: RegionSet = serde_json::from_str(text).map_err(|e| Error::Region(format!("parse error: {e}")))?;
        rs.validate()?;
        Ok(rs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Region(format!(
                "image dimensions {}x{} must be positive",
                self.width, self.height
            )));
        }
        if self.regions.is_empty() {
            return Err(Error::NoRegions);
        }
        let mut seen = HashSet::new();
        for (index, r) in self.regions.iter().enumerate() {
            let [x, y, w, h] = r.bbox;
            if r.bbox.iter().any(|v| !v.is_finite()) {
                return Err(Error::Region(format!("region #{index} (id {}): non-finite bbox", r.id)));
            }
            if w < 1.0 || h < 1.0 {
                return Err(Error::Region(format!(
                    "region #{index} (id {}): bbox size {w}x{h} below 1 px",
                    r.id
                )));
            }
            if x < 0.0 || y < 0.0 || x + w > self.width as f64 || y + h > self.height as f64 {
                return Err(Error::Region(format!(
                    "region #{index} (id {}): bbox {:?} exceeds image {}x{}",
                    r.id, r.bbox, self.width, self.height
                )));
            }
            if let Some(s) = r.score {
                if !s.is_finite() {
                    return Err(Error::Region(format!(
                        "region #{index} (id {}): non-finite score",
                        r.id
                    )));
                }
            }
            if !seen.insert(r.id) {
                return Err(Error::Region(format!("region #{index}: duplicate id {}", r.id)));
            }
        }
        if let Some(sel) = self.selected {
            if !seen.contains(&sel) {
                return Err(Error::Region(format!("selected id {sel} is not a listed region")));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: i64) -> Option<&Region> {
        self.regions.iter().find(|r| r.id == id)
    }
}

pub fn load_regions(path: &Path) -> Result<RegionSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Region(format!("{}: {e}", path.display())))?;
    RegionSet::from_json(&text)
}

/// Highest score wins; ties go to the lowest id.
fn argmax_by_score(regions: &[Region], scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in regions.iter().enumerate() {
        best = match best {
            None => Some(i),
            Some(b) if scores[i] > scores[b] || (scores[i] == scores[b] && r.id < regions[b].id) => Some(i),
            keep => keep,
        };
    }
    best
}

fn explicit(rs: &RegionSet) -> Result<Region> {
    let id = rs
        .selected
        .ok_or_else(|| Error::Selection("explicit policy requires a selected region id".into()))?;
    rs.get(id)
        .cloned()
        .ok_or_else(|| Error::Selection(format!("selected id {id} not found")))
}

pub fn select_region(rs: &RegionSet, policy: SelectionPolicy, scorer: Option<&dyn RegionScorer>) -> Result<Region> {
    if rs.regions.is_empty() {
        return Err(Error::NoRegions);
    }
    match policy {
        SelectionPolicy::Explicit => explicit(rs),
        SelectionPolicy::MaxScore => {
            let scores: Vec<f64> = rs
                .regions
                .iter()
                .map(|r| r.score.unwrap_or(f64::NEG_INFINITY))
                .collect();
            if scores.iter().all(|s| *s == f64::NEG_INFINITY) {
                return Err(Error::Selection(
                    "max-score policy but no region carries a score".into(),
                ));
            }
            Ok(rs.regions[argmax_by_score(&rs.regions, &scores).expect("non-empty")].clone())
        }
        SelectionPolicy::External => {
            let scored = match scorer {
                Some(s) => s.score(rs),
                None => Err(Error::Transport("no region scorer configured".into())),
            };
            match scored {
                Ok(scores) if scores.len() == rs.regions.len() && scores.iter().all(|s| s.is_finite()) => {
                    Ok(rs.regions[argmax_by_score(&rs.regions, &scores).expect("non-empty")].clone())
                }
                Ok(scores) => {
                    log::warn!(
                        "external scorer returned {} scores for {} regions; using explicit selection",
                        scores.len(),
                        rs.regions.len()
                    );
                    explicit(rs)
                }
                Err(e) => {
                    log::warn!("external scorer unavailable ({e}); using explicit selection");
                    explicit(rs)
                }
            }
        }
    }
}
