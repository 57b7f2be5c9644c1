use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{normalize_edge, Edge, FeatureMatrix, Graph};
use crate::error::{Error, Result};
use crate::numeric::DenseMatrix;

pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.csv";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub nodes: usize,
    pub edges: usize,
    pub features: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graph: Graph,
    pub features: FeatureMatrix,
    pub meta: Metadata,
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))
}

fn load_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads `edges.tsv`, `features.csv` and `meta.json` from `dir`.
///
/// Edges are undirected; a pair seen twice (in either orientation) is kept
/// once. `meta.json` must agree with what was parsed.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join(META_FILE);
    let meta_text =
        fs::read_to_string(&meta_path).map_err(|e| Error::io(format!("reading {}", meta_path.display()), e))?;
    let meta: Metadata = serde_json::from_str(&meta_text).map_err(|e| load_err(&meta_path, e.line(), e.to_string()))?;

    let features = read_features(&dir.join(FEATURES_FILE))?;
    if features.rows() != meta.nodes {
        return Err(Error::Data(format!(
            "{} declares {} nodes but {} has {} rows",
            META_FILE,
            meta.nodes,
            FEATURES_FILE,
            features.rows()
        )));
    }
    if features.cols() != meta.features {
        return Err(Error::Data(format!(
            "{} declares {} features but rows have {}",
            META_FILE,
            meta.features,
            features.cols()
        )));
    }

    let edges = read_edges(&dir.join(EDGES_FILE), meta.nodes)?;
    let graph = Graph::from_edges(meta.nodes, &edges)?;
    if graph.edge_count() != meta.edges {
        return Err(Error::Data(format!(
            "{} declares {} edges but {} distinct undirected edges were read",
            META_FILE,
            meta.edges,
            graph.edge_count()
        )));
    }
    Ok(Dataset { graph, features, meta })
}

fn read_edges(path: &Path, nodes: usize) -> Result<Vec<Edge>> {
    let mut edges = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(load_err(path, lineno, "expected two tab-separated node ids"));
        };
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| load_err(path, lineno, format!("invalid node id {s:?}")))
        };
        let (u, v) = (parse(a)?, parse(b)?);
        if u >= nodes || v >= nodes {
            return Err(load_err(
                path,
                lineno,
                format!("node id out of range: ({u}, {v}) with {nodes} nodes"),
            ));
        }
        if u == v {
            return Err(load_err(path, lineno, format!("self-loop on node {u}")));
        }
        if seen.insert(normalize_edge((u, v))) {
            edges.push((u, v));
        } else {
            log::debug!("{}:{lineno}: duplicate edge ({u}, {v}) dropped", path.display());
        }
    }
    Ok(edges)
}

fn read_features(path: &Path) -> Result<DenseMatrix> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in open(path)?.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| load_err(path, lineno, format!("invalid number {field:?}")))?;
            if !v.is_finite() {
                return Err(load_err(path, lineno, "non-finite feature value"));
            }
            data.push(v);
        }
        let width = data.len() - before;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(load_err(
                    path,
                    lineno,
                    format!("ragged row: {width} values, expected {c}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    if cols == 0 {
        return Err(Error::Data(format!("{} has no feature columns", path.display())));
    }
    DenseMatrix::from_vec(rows, cols, data)
}

fn write_err(p: &Path, e: std::io::Error) -> Error {
    Error::io(format!("writing {}", p.display()), e)
}

/// Writes the three dataset files into `dir`, creating it if needed.
pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let create = |name: &str| -> Result<(PathBuf, BufWriter<fs::File>)> {
        let p = dir.join(name);
        let f = fs::File::create(&p).map_err(|e| Error::io(format!("creating {}", p.display()), e))?;
        Ok((p, BufWriter::new(f)))
    };

    let (p, mut w) = create(EDGES_FILE)?;
    for (u, v) in ds.graph.edges() {
        writeln!(w, "{u}\t{v}").map_err(|e| write_err(&p, e))?;
    }
    w.flush().map_err(|e| write_err(&p, e))?;

    let (p, mut w) = create(FEATURES_FILE)?;
    for r in 0..ds.features.rows() {
        let mut first = true;
        for v in ds.features.row(r) {
            if !first {
                w.write_all(b",").map_err(|e| write_err(&p, e))?;
            }
            first = false;
            // `{}` on f64 prints the shortest string that parses back exactly
            write!(w, "{v}").map_err(|e| write_err(&p, e))?;
        }
        w.write_all(b"\n").map_err(|e| write_err(&p, e))?;
    }
    w.flush().map_err(|e| write_err(&p, e))?;

    let meta = Metadata {
        nodes: ds.graph.node_count(),
        edges: ds.graph.edge_count(),
        features: ds.features.cols(),
        name: ds.meta.name.clone(),
    };
    let (p, mut w) = create(META_FILE)?;
    serde_json::to_writer_pretty(&mut w, &meta).map_err(|e| Error::Data(format!("serializing metadata: {e}")))?;
    w.flush().map_err(|e| write_err(&p, e))?;
    Ok(())
}
