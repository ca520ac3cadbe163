//! Calibration file: tier capacities, energies and performance anchors.
//!
//! Stored as TOML:
//!
//! ```toml
//! schema = "tiersim-calibration/1"
//!
//! [fast]
//! capacity_pages = 1024
//! read_energy_nj = 1.0
//! write_energy_nj = 1.0
//! base_latency_ns = 80.0
//! divergence_knee_mbps = 60000.0
//! # one row per anchor: [read_fraction, demand_mbps, latency_ns, bandwidth_mbps]
//! anchors = [[0.0, 0.0, 80.0, 0.0], ...]
//!
//! [slow]
//! ...
//! ```
//!
//! Measurement CSVs (`tier,read_fraction,demand_mbps,latency_ns,bandwidth_mbps`)
//! can be turned into a calibration file with [`Calibration::from_measurements`].

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tier::{Anchor, MemorySystem, SurfaceShape, TierError, TierId, TierPerformanceModel, TierSpec};

pub const CALIBRATION_SCHEMA: &str = "tiersim-calibration/1";

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("cannot parse calibration file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize calibration: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("unsupported calibration schema {0:?} (expected {CALIBRATION_SCHEMA:?})")]
    Schema(String),
    #[error("{tier} tier: {source}")]
    Tier { tier: TierId, source: TierError },
    #[error("{tier} tier: {msg}")]
    Invalid { tier: TierId, msg: String },
    #[error("measurement csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("measurement csv: {0}")]
    Rows(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct TierFile {
    capacity_pages: u64,
    read_energy_nj: f64,
    write_energy_nj: f64,
    base_latency_ns: f64,
    divergence_knee_mbps: f64,
    anchors: Vec<[f64; 4]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CalibrationFile {
    schema: String,
    fast: TierFile,
    slow: TierFile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub fast: TierSpec,
    pub slow: TierSpec,
}

/// Default desk-scale capacities: the fast tier is 1/8 of the slow tier, as
/// on the reference machine (32 GB DRAM, 256 GB persistent memory).
pub const DEFAULT_FAST_PAGES: u64 = 1024;
pub const DEFAULT_SLOW_PAGES: u64 = 8192;

fn default_fast_shape() -> SurfaceShape {
    SurfaceShape {
        base_latency_ns: 80.0,
        saturation_latency_ns: 350.0,
        peaks: vec![
            (0.0, 50_000.0),
            (0.25, 55_000.0),
            (0.5, 60_000.0),
            (2.0 / 3.0, 66_000.0),
            (0.8, 72_000.0),
            (1.0, 80_000.0),
        ],
        divergence_knee_mbps: 60_000.0,
        demand_step_mbps: 2_500.0,
        demand_max_mbps: 200_000.0,
    }
}

fn default_slow_shape() -> SurfaceShape {
    SurfaceShape {
        base_latency_ns: 300.0,
        saturation_latency_ns: 1_100.0,
        peaks: vec![
            (0.0, 8_000.0),
            (0.25, 11_000.0),
            (0.5, 15_000.0),
            (2.0 / 3.0, 22_000.0),
            (0.8, 28_000.0),
            (1.0, 40_000.0),
        ],
        divergence_knee_mbps: 20_000.0,
        demand_step_mbps: 2_500.0,
        demand_max_mbps: 200_000.0,
    }
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration {
            fast: TierSpec {
                id: TierId::Fast,
                capacity_pages: DEFAULT_FAST_PAGES,
                perf: default_fast_shape().build(),
                read_energy_nj: 1.0,
                write_energy_nj: 1.0,
            },
            slow: TierSpec {
                id: TierId::Slow,
                capacity_pages: DEFAULT_SLOW_PAGES,
                perf: default_slow_shape().build(),
                read_energy_nj: 2.0,
                write_energy_nj: 6.0,
            },
        }
    }
}

fn tier_to_file(spec: &TierSpec) -> TierFile {
    TierFile {
        capacity_pages: spec.capacity_pages,
        read_energy_nj: spec.read_energy_nj,
        write_energy_nj: spec.write_energy_nj,
        base_latency_ns: spec.perf.base_latency_ns(),
        divergence_knee_mbps: spec.perf.divergence_knee_mbps(),
        anchors: spec
            .perf
            .anchors()
            .iter()
            .map(|a| [a.read_fraction, a.demand_mbps, a.latency_ns, a.bandwidth_mbps])
            .collect(),
    }
}

fn tier_from_file(id: TierId, f: TierFile) -> Result<TierSpec, CalibrationError> {
    if f.capacity_pages == 0 {
        return Err(CalibrationError::Invalid { tier: id, msg: "capacity_pages must be positive".into() });
    }
    if !(f.read_energy_nj >= 0.0 && f.write_energy_nj >= 0.0) {
        return Err(CalibrationError::Invalid { tier: id, msg: "energies must be non-negative".into() });
    }
    let anchors: Vec<Anchor> = f
        .anchors
        .iter()
        .map(|a| Anchor { read_fraction: a[0], demand_mbps: a[1], latency_ns: a[2], bandwidth_mbps: a[3] })
        .collect();
    let perf = TierPerformanceModel::from_anchors(&anchors, f.base_latency_ns, f.divergence_knee_mbps)
        .map_err(|source| CalibrationError::Tier { tier: id, source })?;
    Ok(TierSpec {
        id,
        capacity_pages: f.capacity_pages,
        perf,
        read_energy_nj: f.read_energy_nj,
        write_energy_nj: f.write_energy_nj,
    })
}

impl Calibration {
    pub fn memory_system(&self) -> MemorySystem {
        MemorySystem::new(self.fast.clone(), self.slow.clone())
    }

    pub fn with_capacities(mut self, fast_pages: u64, slow_pages: u64) -> Self {
        self.fast.capacity_pages = fast_pages;
        self.slow.capacity_pages = slow_pages;
        self
    }

    pub fn parse(text: &str) -> Result<Self, CalibrationError> {
        let file: CalibrationFile = toml::from_str(text)?;
        if file.schema != CALIBRATION_SCHEMA {
            return Err(CalibrationError::Schema(file.schema));
        }
        Ok(Calibration {
            fast: tier_from_file(TierId::Fast, file.fast)?,
            slow: tier_from_file(TierId::Slow, file.slow)?,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CalibrationError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String, CalibrationError> {
        let file = CalibrationFile {
            schema: CALIBRATION_SCHEMA.to_string(),
            fast: tier_to_file(&self.fast),
            slow: tier_to_file(&self.slow),
        };
        Ok(toml::to_string(&file)?)
    }

    /// Writes the anchors of both tiers as a measurement CSV.
    pub fn write_measurements<W: Write>(&self, out: W) -> Result<(), CalibrationError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["tier", "read_fraction", "demand_mbps", "latency_ns", "bandwidth_mbps"])?;
        for spec in [&self.fast, &self.slow] {
            for a in spec.perf.anchors() {
                w.write_record([
                    spec.id.as_str().to_string(),
                    a.read_fraction.to_string(),
                    a.demand_mbps.to_string(),
                    a.latency_ns.to_string(),
                    a.bandwidth_mbps.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Fits a calibration from measurement rows. Capacities and energies are
    /// taken from `template`; the zero-demand latency of the all-reads row
    /// becomes the base latency. Rows violating the surface invariants are
    /// reported together.
    pub fn from_measurements<R: Read>(input: R, template: &Calibration) -> Result<Self, CalibrationError> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut rows: [Vec<(usize, Anchor)>; 2] = [Vec::new(), Vec::new()];
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            if rec.len() != 5 {
                return Err(CalibrationError::Rows(format!("line {line}: expected 5 fields, got {}", rec.len())));
            }
            let tier = match rec[0].trim() {
                "fast" => TierId::Fast,
                "slow" => TierId::Slow,
                other => return Err(CalibrationError::Rows(format!("line {line}: unknown tier {other:?}"))),
            };
            let num = |k: usize| -> Result<f64, CalibrationError> {
                rec[k]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| CalibrationError::Rows(format!("line {line}: field {}: {e}", k + 1)))
            };
            rows[tier.index()].push((
                line,
                Anchor {
                    read_fraction: num(1)?,
                    demand_mbps: num(2)?,
                    latency_ns: num(3)?,
                    bandwidth_mbps: num(4)?,
                },
            ));
        }
        let mut bad = Vec::new();
        for (t, tier_rows) in rows.iter().enumerate() {
            let tier = TierId::ALL[t];
            let mut sorted = tier_rows.clone();
            sorted.sort_by(|a, b| {
                a.1.read_fraction
                    .total_cmp(&b.1.read_fraction)
                    .then(a.1.demand_mbps.total_cmp(&b.1.demand_mbps))
            });
            for pair in sorted.windows(2) {
                let (la, a) = pair[0];
                let (lb, b) = pair[1];
                if a.read_fraction == b.read_fraction && b.latency_ns < a.latency_ns {
                    bad.push(format!("{tier} lines {la} and {lb}: latency decreases with demand"));
                }
            }
            for (line, a) in &sorted {
                if a.bandwidth_mbps > a.demand_mbps {
                    bad.push(format!("{tier} line {line}: bandwidth exceeds demand"));
                }
            }
        }
        if !bad.is_empty() {
            return Err(CalibrationError::Rows(bad.join("; ")));
        }
        let build = |tier: TierId, spec: &TierSpec| -> Result<TierSpec, CalibrationError> {
            let anchors: Vec<Anchor> = rows[tier.index()].iter().map(|r| r.1).collect();
            let base = anchors
                .iter()
                .find(|a| a.read_fraction == 1.0 && a.demand_mbps == 0.0)
                .map(|a| a.latency_ns)
                .ok_or_else(|| CalibrationError::Invalid {
                    tier,
                    msg: "missing zero-demand all-reads point".into(),
                })?;
            let perf = TierPerformanceModel::from_anchors(&anchors, base, spec.perf.divergence_knee_mbps())
                .map_err(|source| CalibrationError::Tier { tier, source })?;
            Ok(TierSpec { perf, ..spec.clone() })
        };
        Ok(Calibration {
            fast: build(TierId::Fast, &template.fast)?,
            slow: build(TierId::Slow, &template.slow)?,
        })
    }
}
