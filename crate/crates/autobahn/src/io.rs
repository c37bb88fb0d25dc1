//! Structured-text file formats: graph files, dataset records, run
//! configuration and loss traces. Everything is JSON with a canonical
//! layout (graphs serialize one edge per line) so files diff cleanly and
//! round-trip exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, LabeledGraph};
use crate::model::{EpochStats, ModelConfig, TrainSchedule};
use crate::verify::Tolerances;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: JSON parse error: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("{path}: edges[{index}]: {source}")]
    BadEdge {
        path: String,
        index: usize,
        source: GraphError,
    },
    #[error("{path}: {source}")]
    BadGraph {
        path: String,
        source: GraphError,
    },
    #[error("{path}: target {value} is not finite")]
    BadTarget { path: String, value: f64 },
    #[error("{path}: dataset directory holds no .json records")]
    EmptyDataset { path: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// The on-disk graph document: `n`, per-vertex labels and 1-based
/// `[u, v, label]` edge triples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub n: usize,
    pub vertex_labels: Vec<u32>,
    pub edges: Vec<(usize, usize, u32)>,
}

impl GraphFile {
    pub fn from_graph(graph: &LabeledGraph) -> Self {
        Self {
            n: graph.vertex_count(),
            vertex_labels: graph.vertex_labels().to_vec(),
            edges: graph.edges().collect(),
        }
    }

    /// Validates into a [`LabeledGraph`], reporting the offending edge
    /// index for self-loops, duplicates and range errors.
    pub fn into_graph(self, path: &str) -> Result<LabeledGraph, IoError> {
        // Add edges one at a time so errors carry their list position.
        let mut graph = LabeledGraph::new(self.n, self.vertex_labels.clone(), [])
            .map_err(|source| IoError::BadGraph {
                path: path.to_string(),
                source,
            })?;
        for (index, &(u, v, label)) in self.edges.iter().enumerate() {
            let mut edges: Vec<(usize, usize, u32)> = graph.edges().collect();
            edges.push((u, v, label));
            graph = LabeledGraph::new(self.n, self.vertex_labels.clone(), edges).map_err(
                |source| IoError::BadEdge {
                    path: path.to_string(),
                    index,
                    source,
                },
            )?;
        }
        Ok(graph)
    }

    /// Canonical rendering: one edge per line.
    pub fn to_canonical_string(&self) -> String {
        let mut out = String::new();
        out.push_str("{\n");
        out.push_str(&format!("  \"n\": {},\n", self.n));
        out.push_str(&format!(
            "  \"vertex_labels\": {},\n",
            serde_json::to_string(&self.vertex_labels).expect("labels serialize")
        ));
        out.push_str("  \"edges\": [");
        for (i, (u, v, label)) in self.edges.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!("\n    [{u}, {v}, {label}]"));
        }
        if self.edges.is_empty() {
            out.push_str("]\n");
        } else {
            out.push_str("\n  ]\n");
        }
        out.push_str("}\n");
        out
    }
}

pub fn parse_graph_str(text: &str, path: &str) -> Result<LabeledGraph, IoError> {
    let file: GraphFile = serde_json::from_str(text).map_err(|source| IoError::Parse {
        path: path.to_string(),
        source,
    })?;
    file.into_graph(path)
}

pub fn load_graph(path: &Path) -> Result<LabeledGraph, IoError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    parse_graph_str(&text, &path.display().to_string())
}

pub fn save_graph(graph: &LabeledGraph, path: &Path) -> Result<(), IoError> {
    std::fs::write(path, GraphFile::from_graph(graph).to_canonical_string())?;
    Ok(())
}

/// One dataset record: a graph plus its regression target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub graph: GraphFile,
    pub target: f64,
}

pub fn save_record(graph: &LabeledGraph, target: f64, path: &Path) -> Result<(), IoError> {
    let record = DatasetRecord {
        graph: GraphFile::from_graph(graph),
        target,
    };
    std::fs::write(path, serde_json::to_string_pretty(&record)?)?;
    Ok(())
}

/// Loads every `.json` record in the directory, sorted by file name.
pub fn load_dataset_dir(dir: &Path) -> Result<Vec<(LabeledGraph, f64)>, IoError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|source| IoError::Read {
            path: dir.display().to_string(),
            source,
        })?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(IoError::EmptyDataset {
            path: dir.display().to_string(),
        });
    }
    let mut records = Vec::with_capacity(paths.len());
    for path in paths {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(&path).map_err(|source| IoError::Read {
            path: name.clone(),
            source,
        })?;
        let record: DatasetRecord =
            serde_json::from_str(&text).map_err(|source| IoError::Parse {
                path: name.clone(),
                source,
            })?;
        if !record.target.is_finite() {
            return Err(IoError::BadTarget {
                path: name,
                value: record.target,
            });
        }
        records.push((record.graph.into_graph(&name)?, record.target));
    }
    Ok(records)
}

/// The training run configuration file: model, schedule and the tolerance
/// section echoed in report headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub schedule: TrainSchedule,
    #[serde(default)]
    pub tolerances: Tolerances,
}

pub fn load_run_config(path: &Path) -> Result<RunConfig, IoError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| IoError::Parse {
        path: path.display().to_string(),
        source,
    })
}

/// Plain columnar loss trace: epoch, learning rate, MSE, MAE.
pub fn render_loss_trace(epochs: &[EpochStats]) -> String {
    let mut out = String::from("epoch lr mse mae\n");
    for e in epochs {
        out.push_str(&format!("{} {:?} {:?} {:?}\n", e.epoch, e.lr, e.mse, e.mae));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::hexagon_graph;

    #[test]
    fn graph_round_trip_is_identity() {
        let g = hexagon_graph();
        let text = GraphFile::from_graph(&g).to_canonical_string();
        let parsed = parse_graph_str(&text, "test").unwrap();
        assert_eq!(parsed, g);
        let text2 = GraphFile::from_graph(&parsed).to_canonical_string();
        assert_eq!(text, text2);
    }

    #[test]
    fn semantic_errors_carry_the_edge_index() {
        let text = r#"{"n": 3, "vertex_labels": [0, 0, 0], "edges": [[1, 2, 0], [2, 2, 0]]}"#;
        let err = parse_graph_str(text, "bad.json").unwrap_err();
        let message = err.to_string();
        assert!(message.contains("edges[1]"), "message: {message}");
        assert!(message.contains("self-loop"), "message: {message}");

        let dup = r#"{"n": 3, "vertex_labels": [0, 0, 0], "edges": [[1, 2, 0], [2, 1, 4]]}"#;
        let err = parse_graph_str(dup, "dup.json").unwrap_err();
        assert!(err.to_string().contains("edges[1]"));
    }

    #[test]
    fn syntax_errors_carry_location() {
        let err = parse_graph_str("{\n  \"n\": 3,\n  oops\n}", "syn.json").unwrap_err();
        let message = err.to_string();
        assert!(message.contains("syn.json"));
        assert!(message.contains("line 3"), "message: {message}");
    }

    #[test]
    fn dataset_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = hexagon_graph();
        save_record(&g, 1.5, &dir.path().join("a.json")).unwrap();
        save_record(&g, -0.25, &dir.path().join("b.json")).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let records = load_dataset_dir(dir.path()).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].1, 1.5);
        assert_eq!(records[1].1, -0.25);
        assert_eq!(records[0].0, g);
    }

    #[test]
    fn non_finite_targets_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("bad.json"),
            r#"{"graph": {"n": 1, "vertex_labels": [0], "edges": []}, "target": 1e999}"#,
        )
        .unwrap();
        // 1e999 parses to infinity under JSON float semantics.
        let err = load_dataset_dir(dir.path()).unwrap_err();
        assert!(matches!(
            err,
            IoError::BadTarget { .. } | IoError::Parse { .. }
        ));
    }

    #[test]
    fn run_config_defaults_fill_in() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"model": {"channels": 8}, "schedule": {"epochs": 3}}"#).unwrap();
        let config = load_run_config(&path).unwrap();
        assert_eq!(config.model.channels, 8);
        assert_eq!(config.model.layer_count, 2);
        assert_eq!(config.schedule.epochs, 3);
        assert_eq!(config.tolerances.equivariance, 1e-9);
    }

    #[test]
    fn loss_trace_renders_full_precision() {
        let epochs = vec![EpochStats {
            epoch: 1,
            lr: 0.0003,
            mse: 1.0 / 3.0,
            mae: 0.5,
        }];
        let text = render_loss_trace(&epochs);
        assert!(text.contains("0.3333333333333333"));
        assert!(text.starts_with("epoch lr mse mae\n"));
    }
}
