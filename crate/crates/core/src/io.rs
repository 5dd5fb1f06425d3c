//! Graph file formats.
//!
//! * g2o subset: `VERTEX_SO3:QUAT id qx qy qz qw` and
//!   `EDGE_SO3:QUAT i j qx qy qz qw [information ...]`, whitespace separated,
//!   `#` starts a comment. Information-matrix fields are parsed and dropped.
//! * JSON: `{"nodes": [ids], "edges": [{"i", "j", "q": [w, x, y, z], "weight"}]}`.
//!
//! Node ids in files are external labels; they are mapped to dense indices in
//! order of declaration. Floats are written in shortest round-trip form, so
//! files produced here re-read to identical values and re-write to identical
//! bytes.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ViewGraph;
use crate::so3::Rotation;

pub const VERTEX_TAG: &str = "VERTEX_SO3:QUAT";
pub const EDGE_TAG: &str = "EDGE_SO3:QUAT";

/// A parsed graph file: the graph plus per-node rotations when the file has them.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphDocument {
    pub graph: ViewGraph,
    /// Vertex rotations in dense node order (g2o `VERTEX` records).
    pub vertices: Option<Vec<Rotation>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphFormat {
    G2o,
    Json,
}

impl GraphFormat {
    /// Chooses by extension, falling back to sniffing for a leading `{`.
    pub fn detect(path: &Path, contents: &str) -> GraphFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("g2o") => GraphFormat::G2o,
            Some("json") => GraphFormat::Json,
            _ if contents.trim_start().starts_with('{') => GraphFormat::Json,
            _ => GraphFormat::G2o,
        }
    }
}

pub fn read_graph(path: &Path) -> Result<GraphDocument> {
    let text = fs::read_to_string(path)?;
    match GraphFormat::detect(path, &text) {
        GraphFormat::G2o => parse_g2o(&text, path),
        GraphFormat::Json => parse_json(&text, path),
    }
}

pub fn write_graph(path: &Path, graph: &ViewGraph, vertices: Option<&[Rotation]>) -> Result<()> {
    let text = match GraphFormat::detect(path, "") {
        GraphFormat::G2o => to_g2o(graph, vertices),
        GraphFormat::Json => to_json(graph)?,
    };
    fs::write(path, text)?;
    Ok(())
}

struct LineParser<'a> {
    path: &'a Path,
    line: usize,
}

impl LineParser<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            msg: msg.into(),
        }
    }

    fn float(&self, tok: Option<&str>, what: &str) -> Result<f64> {
        let tok = tok.ok_or_else(|| self.err(format!("missing {what}")))?;
        tok.parse::<f64>()
            .map_err(|_| self.err(format!("bad {what} '{tok}'")))
    }

    fn id(&self, tok: Option<&str>, what: &str) -> Result<u64> {
        let tok = tok.ok_or_else(|| self.err(format!("missing {what}")))?;
        tok.parse::<u64>()
            .map_err(|_| self.err(format!("bad {what} '{tok}'")))
    }

    /// Reads `qx qy qz qw` (g2o order).
    fn quat<'t>(&self, toks: &mut impl Iterator<Item = &'t str>) -> Result<Rotation> {
        let x = self.float(toks.next(), "qx")?;
        let y = self.float(toks.next(), "qy")?;
        let z = self.float(toks.next(), "qz")?;
        let w = self.float(toks.next(), "qw")?;
        Rotation::from_wxyz(w, x, y, z).ok_or_else(|| self.err("degenerate quaternion"))
    }
}

/// Parses g2o text; `path` is only used in error messages.
pub fn parse_g2o(text: &str, path: &Path) -> Result<GraphDocument> {
    let mut labels: Vec<u64> = Vec::new();
    let mut dense: HashMap<u64, usize> = HashMap::new();
    let mut vertices: Vec<Rotation> = Vec::new();
    let mut edges: Vec<(u64, u64, Rotation, usize)> = Vec::new();
    let mut warned_info = false;

    for (lineno, raw) in text.lines().enumerate() {
        let p = LineParser {
            path,
            line: lineno + 1,
        };
        let content = raw.split('#').next().unwrap_or("");
        let mut toks = content.split_whitespace();
        let Some(tag) = toks.next() else { continue };
        match tag {
            VERTEX_TAG => {
                let id = p.id(toks.next(), "vertex id")?;
                let q = p.quat(&mut toks)?;
                if toks.next().is_some() {
                    return Err(p.err("trailing fields after vertex quaternion"));
                }
                if dense.insert(id, labels.len()).is_some() {
                    return Err(p.err(format!("duplicate vertex {id}")));
                }
                labels.push(id);
                vertices.push(q);
            }
            EDGE_TAG => {
                let i = p.id(toks.next(), "edge source")?;
                let j = p.id(toks.next(), "edge target")?;
                let q = p.quat(&mut toks)?;
                let mut extra = 0;
                for tok in toks {
                    p.float(Some(tok), "information entry")?;
                    extra += 1;
                }
                if extra > 0 && !warned_info {
                    warn!(
                        "{}:{}: information matrix fields are ignored",
                        path.display(),
                        lineno + 1
                    );
                    warned_info = true;
                }
                edges.push((i, j, q, lineno + 1));
            }
            other => return Err(p.err(format!("unsupported record '{other}'"))),
        }
    }

    let has_vertices = !labels.is_empty();
    if !has_vertices {
        let mut ids: Vec<u64> = edges.iter().flat_map(|e| [e.0, e.1]).collect();
        ids.sort_unstable();
        ids.dedup();
        for id in ids {
            dense.insert(id, labels.len());
            labels.push(id);
        }
    }

    let mut graph = ViewGraph::with_labels(labels);
    for (i, j, q, line) in edges {
        let p = LineParser { path, line };
        let a = *dense
            .get(&i)
            .ok_or_else(|| p.err(format!("edge references unknown vertex {i}")))?;
        let b = *dense
            .get(&j)
            .ok_or_else(|| p.err(format!("edge references unknown vertex {j}")))?;
        graph
            .add_edge(a, b, q, 1.0)
            .map_err(|e| p.err(e.to_string()))?;
    }
    Ok(GraphDocument {
        graph,
        vertices: has_vertices.then_some(vertices),
    })
}

/// g2o text for `graph`. Vertices default to the identity when not given.
pub fn to_g2o(graph: &ViewGraph, vertices: Option<&[Rotation]>) -> String {
    let mut out = String::new();
    for (k, &label) in graph.labels().iter().enumerate() {
        let q = vertices.map(|v| v[k]).unwrap_or(Rotation::IDENTITY);
        let _ = writeln!(
            out,
            "{VERTEX_TAG} {label} {} {} {} {}",
            q.x(),
            q.y(),
            q.z(),
            q.w()
        );
    }
    let labels = graph.labels();
    for e in graph.edges() {
        let q = e.measurement;
        let _ = writeln!(
            out,
            "{EDGE_TAG} {} {} {} {} {} {}",
            labels[e.i],
            labels[e.j],
            q.x(),
            q.y(),
            q.z(),
            q.w()
        );
    }
    out
}

/// g2o `VERTEX` lines for a rotation set, labelled by `labels`.
pub fn rotations_to_g2o(labels: &[u64], rotations: &[Rotation]) -> String {
    let mut out = String::new();
    for (label, q) in labels.iter().zip(rotations) {
        let _ = writeln!(
            out,
            "{VERTEX_TAG} {label} {} {} {} {}",
            q.x(),
            q.y(),
            q.z(),
            q.w()
        );
    }
    out
}

#[derive(Serialize, Deserialize)]
struct JsonEdge {
    i: u64,
    j: u64,
    q: [f64; 4],
    #[serde(default = "one")]
    weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Serialize, Deserialize)]
struct JsonGraph {
    nodes: Vec<u64>,
    edges: Vec<JsonEdge>,
}

pub fn parse_json(text: &str, path: &Path) -> Result<GraphDocument> {
    let doc: JsonGraph = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let err = |k: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: format!("edge {k}: {msg}"),
    };
    let mut dense = HashMap::new();
    for (k, &id) in doc.nodes.iter().enumerate() {
        if dense.insert(id, k).is_some() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: format!("duplicate node {id}"),
            });
        }
    }
    let mut graph = ViewGraph::with_labels(doc.nodes);
    for (k, e) in doc.edges.iter().enumerate() {
        let a = *dense
            .get(&e.i)
            .ok_or_else(|| err(k, format!("unknown node {}", e.i)))?;
        let b = *dense
            .get(&e.j)
            .ok_or_else(|| err(k, format!("unknown node {}", e.j)))?;
        let q = Rotation::from_wxyz(e.q[0], e.q[1], e.q[2], e.q[3])
            .ok_or_else(|| err(k, "degenerate quaternion".into()))?;
        graph
            .add_edge(a, b, q, e.weight)
            .map_err(|x| err(k, x.to_string()))?;
    }
    Ok(GraphDocument {
        graph,
        vertices: None,
    })
}

pub fn to_json(graph: &ViewGraph) -> Result<String> {
    let labels = graph.labels();
    let doc = JsonGraph {
        nodes: labels.to_vec(),
        edges: graph
            .edges()
            .iter()
            .map(|e| JsonEdge {
                i: labels[e.i],
                j: labels[e.j],
                q: e.measurement.to_wxyz(),
                weight: e.weight,
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc)?;
    s.push('\n');
    Ok(s)
}

/// Named rotation set (ground truth or estimate) as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationSet {
    pub nodes: Vec<u64>,
    pub rotations: Vec<Rotation>,
}

pub fn read_rotations(path: &Path) -> Result<RotationSet> {
    let text = fs::read_to_string(path)?;
    match GraphFormat::detect(path, &text) {
        GraphFormat::Json => {
            let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: e.line(),
                msg: e.to_string(),
            })?;
            // Accept both a bare rotation set and a solve report.
            serde_json::from_value(v).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: e.to_string(),
            })
        }
        GraphFormat::G2o => {
            let doc = parse_g2o(&text, path)?;
            let rotations = doc.vertices.ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: "no VERTEX records".into(),
            })?;
            Ok(RotationSet {
                nodes: doc.graph.labels().to_vec(),
                rotations,
            })
        }
    }
}

pub fn write_rotations(path: &Path, set: &RotationSet) -> Result<()> {
    let text = match GraphFormat::detect(path, "") {
        GraphFormat::G2o => rotations_to_g2o(&set.nodes, &set.rotations),
        GraphFormat::Json => {
            let mut s = serde_json::to_string_pretty(set)?;
            s.push('\n');
            s
        }
    };
    fs::write(path, text)?;
    Ok(())
}

/// Placeholder path for in-memory parses.
pub fn memory_path() -> PathBuf {
    PathBuf::from("<memory>")
}
