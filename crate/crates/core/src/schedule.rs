//! Piecewise-constant demand schedules.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridModel;
use crate::linalg::Vector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentEntry {
    pub t_start: usize,
    pub demand: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleFile {
    pub segments: Vec<SegmentEntry>,
}

/// Demand segments in slot order (generators first).
#[derive(Clone, Debug, PartialEq)]
pub struct DemandSchedule {
    segments: Vec<(usize, Vector)>,
}

impl DemandSchedule {
    pub fn new(segments: Vec<(usize, Vector)>) -> Result<Self> {
        let Some(first) = segments.first() else {
            return Err(Error::validation("segments", "schedule is empty"));
        };
        if first.0 != 0 {
            return Err(Error::validation("segments[0].t_start", "first segment must start at 0"));
        }
        let n = first.1.len();
        for (k, (t, d)) in segments.iter().enumerate() {
            if k > 0 && *t <= segments[k - 1].0 {
                return Err(Error::validation(
                    format!("segments[{k}].t_start"),
                    "start times must be strictly increasing",
                ));
            }
            if d.len() != n {
                return Err(Error::dimension(format!("segments[{k}].demand"), n, d.len()));
            }
            if d.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::validation(format!("segments[{k}].demand"), "entries must be nonnegative"));
            }
        }
        Ok(DemandSchedule { segments })
    }

    /// Single segment holding `demand` forever.
    pub fn constant(demand: Vector) -> Result<Self> {
        Self::new(vec![(0, demand)])
    }

    /// Parse a schedule document and reorder demand vectors into slots.
    pub fn from_file_spec(spec: &ScheduleFile, grid: &GridModel) -> Result<Self> {
        let segs = spec
            .segments
            .iter()
            .enumerate()
            .map(|(k, s)| {
                if s.demand.len() != grid.n() {
                    return Err(Error::dimension(format!("segments[{k}].demand"), grid.n(), s.demand.len()));
                }
                Ok((s.t_start, grid.bus_vector_from_file(&s.demand)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(segs)
    }

    pub fn from_toml_str(text: &str, grid: &GridModel) -> Result<Self> {
        let spec: ScheduleFile =
            toml::from_str(text).map_err(|e| Error::Parse { path: "<string>".into(), message: e.to_string() })?;
        Self::from_file_spec(&spec, grid)
    }

    pub fn load(path: impl AsRef<Path>, grid: &GridModel) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let spec: ScheduleFile =
            toml::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        Self::from_file_spec(&spec, grid)
    }

    pub fn to_file_spec(&self, grid: &GridModel) -> ScheduleFile {
        ScheduleFile {
            segments: self
                .segments
                .iter()
                .map(|(t, d)| SegmentEntry { t_start: *t, demand: grid.bus_vector_to_file(d) })
                .collect(),
        }
    }

    pub fn segments(&self) -> &[(usize, Vector)] {
        &self.segments
    }

    pub fn segment_index(&self, t: usize) -> usize {
        self.segments.partition_point(|(start, _)| *start <= t) - 1
    }

    pub fn demand_at(&self, t: usize) -> &Vector {
        &self.segments[self.segment_index(t)].1
    }

    /// `[start, end)` of every segment when the run lasts `steps` steps;
    /// segments starting at or after `steps` are dropped.
    pub fn bounds(&self, steps: usize) -> Vec<(usize, usize)> {
        let starts: Vec<usize> = self.segments.iter().map(|s| s.0).filter(|&t| t < steps).collect();
        starts.iter().enumerate().map(|(k, &s)| (s, starts.get(k + 1).copied().unwrap_or(steps))).collect()
    }
}
