//! Metric report serialization: CSV (one row per pair plus an aggregate
//! row) and a structured JSON document. The JSON schema is fixed; readers
//! reject unknown fields.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use structfuse_core::metrics::{MetricReport, MetricValues};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("report does not match schema: {0}")]
    Schema(String),
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MetricsDoc {
    pub mi: f64,
    pub sf: f64,
    pub ag: f64,
    pub vif: f64,
    pub qabf: f64,
    pub ssim: f64,
}

impl From<MetricValues> for MetricsDoc {
    fn from(v: MetricValues) -> Self {
        Self {
            mi: v.mi,
            sf: v.sf,
            ag: v.ag,
            vif: v.vif,
            qabf: v.qabf,
            ssim: v.ssim,
        }
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PairDoc {
    pub id: String,
    #[serde(flatten)]
    pub metrics: MetricsDoc,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SkippedDoc {
    pub id: String,
    pub reason: String,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MetadataDoc {
    pub dataset: String,
    pub checkpoint_id: String,
    pub timestamp: String,
    pub tool_version: String,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ReportDoc {
    pub metadata: MetadataDoc,
    pub pairs: Vec<PairDoc>,
    pub aggregate: MetricsDoc,
    pub skipped: Vec<SkippedDoc>,
}

pub fn to_doc(report: &MetricReport) -> ReportDoc {
    ReportDoc {
        metadata: MetadataDoc {
            dataset: report.metadata.dataset.clone(),
            checkpoint_id: report.metadata.checkpoint_id.clone(),
            timestamp: report.metadata.timestamp.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        },
        pairs: report
            .per_pair
            .iter()
            .map(|(id, v)| PairDoc {
                id: id.clone(),
                metrics: (*v).into(),
            })
            .collect(),
        aggregate: report.aggregate.into(),
        skipped: report
            .skipped
            .iter()
            .map(|(id, reason)| SkippedDoc {
                id: id.clone(),
                reason: reason.clone(),
            })
            .collect(),
    }
}

pub fn write_json(path: &Path, doc: &ReportDoc) -> Result<(), ReportError> {
    let text = serde_json::to_string_pretty(doc).map_err(|e| ReportError::Schema(e.to_string()))?;
    fs::write(path, text).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_json(path: &Path) -> Result<ReportDoc, ReportError> {
    let text = fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| ReportError::Schema(e.to_string()))
}

pub fn write_csv(path: &Path, doc: &ReportDoc) -> Result<(), ReportError> {
    let mut out = String::from("pair_id,mi,sf,ag,vif,qabf,ssim\n");
    let row = |id: &str, m: &MetricsDoc| {
        format!(
            "{},{},{},{},{},{},{}\n",
            id, m.mi, m.sf, m.ag, m.vif, m.qabf, m.ssim
        )
    };
    for pair in &doc.pairs {
        out.push_str(&row(&pair.id, &pair.metrics));
    }
    out.push_str(&row("aggregate", &doc.aggregate));
    fs::write(path, out).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}
