//! File formats: numeric CSV tables for features, probabilities and labels,
//! JSON embedding documents, and a minimal SVG scatter plot.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Method;
use crate::model::{ClassProbabilityMatrix, EmbeddingState, FeatureMatrix};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FeatureOptions {
    /// Z-score every column; constant columns become all zeros.
    pub standardize: bool,
}

/// A parsed numeric CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericTable {
    pub header: Option<Vec<String>>,
    pub values: Array2<f64>,
}

/// Parses comma-separated numeric rows. A first row containing any
/// non-numeric cell is treated as a header. Line numbers in errors are 1-based.
pub fn parse_numeric_csv<R: Read>(reader: R) -> Result<NumericTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut header = None;
    let mut width = None;
    let mut data = Vec::new();
    let mut rows = 0usize;
    for (idx, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(idx as u64 + 1, |p| p.line()) as usize,
            message: e.to_string(),
        })?;
        let line = record.position().map_or(idx as u64 + 1, |p| p.line()) as usize;
        if record.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        let parsed: Vec<std::result::Result<f64, _>> = record.iter().map(|c| c.trim().parse::<f64>()).collect();
        if idx == 0 && parsed.iter().any(|p| p.is_err()) {
            header = Some(record.iter().map(|c| c.trim().to_string()).collect::<Vec<_>>());
            width = Some(record.len());
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::Parse { line, message: format!("expected {expected} columns, found {}", record.len()) });
        }
        for (col, (cell, value)) in record.iter().zip(parsed).enumerate() {
            let v = value.map_err(|_| Error::Parse { line, message: format!("column {col}: `{}` is not a number", cell.trim()) })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, message: format!("column {col}: non-finite value `{}`", cell.trim()) });
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::EmptyFile);
    }
    let values = Array2::from_shape_vec((rows, width.unwrap_or(0)), data).expect("rows share one width");
    Ok(NumericTable { header, values })
}

/// Column-wise z-scoring; constant columns are set to zero.
pub fn standardize_columns(mut x: Array2<f64>) -> Array2<f64> {
    let mean = x.mean_axis(Axis(0)).expect("non-empty matrix");
    let std = x.std_axis(Axis(0), 0.0);
    for mut row in x.rows_mut() {
        for k in 0..row.len() {
            row[k] = if std[k] > 0.0 { (row[k] - mean[k]) / std[k] } else { 0.0 };
        }
    }
    x
}

pub fn parse_features<R: Read>(reader: R, options: FeatureOptions) -> Result<FeatureMatrix> {
    let table = parse_numeric_csv(reader)?;
    let values = if options.standardize { standardize_columns(table.values) } else { table.values };
    FeatureMatrix::new(values)
}

pub fn load_features(path: &Path, options: FeatureOptions) -> Result<FeatureMatrix> {
    parse_features(fs::File::open(path)?, options)
}

/// Class names come from the header row when present.
pub fn parse_probabilities<R: Read>(reader: R) -> Result<ClassProbabilityMatrix> {
    let table = parse_numeric_csv(reader)?;
    ClassProbabilityMatrix::new(table.values, table.header)
}

pub fn load_probabilities(path: &Path) -> Result<ClassProbabilityMatrix> {
    parse_probabilities(fs::File::open(path)?)
}

/// One non-negative integer label per row, optional header.
pub fn parse_labels<R: Read>(reader: R) -> Result<Vec<usize>> {
    let table = parse_numeric_csv(reader)?;
    if table.values.ncols() != 1 {
        return Err(Error::DimensionMismatch { what: "label columns", expected: 1, actual: table.values.ncols() });
    }
    let first_data_line = if table.header.is_some() { 2 } else { 1 };
    table
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Parse { line: first_data_line + i, message: format!("`{v}` is not a class index") })
            }
        })
        .collect()
}

pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    parse_labels(fs::File::open(path)?)
}

fn write_table(path: &Path, header: &[String], values: ArrayView2<'_, f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(header).map_err(csv_io)?;
    for row in values.rows() {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Header `f0,f1,...`; values printed with shortest round-trip precision.
pub fn write_features(path: &Path, features: &FeatureMatrix) -> Result<()> {
    let header: Vec<String> = (0..features.d()).map(|k| format!("f{k}")).collect();
    write_table(path, &header, features.values())
}

/// Header = class names. Names that all parse as numbers are rejected
/// because the header would be read back as a data row.
pub fn write_probabilities(path: &Path, probs: &ClassProbabilityMatrix) -> Result<()> {
    if probs.class_names().iter().all(|c| c.trim().parse::<f64>().is_ok()) {
        return Err(Error::InvalidSize("numeric class names cannot be told apart from data in a CSV header".into()));
    }
    write_table(path, probs.class_names(), probs.values())
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut text = String::from("label\n");
    for l in labels {
        writeln!(text, "{l}").expect("writing to a String");
    }
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub method: Method,
    pub alpha: f64,
    pub lambda: f64,
    pub seed: u64,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkRecord {
    pub name: String,
    pub x: f64,
    pub y: f64,
}

/// JSON embedding document consumed by the CLI and the browser client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingDocument {
    pub meta: EmbeddingMeta,
    pub points: Vec<[f64; 2]>,
    pub landmarks: Vec<LandmarkRecord>,
}

impl EmbeddingDocument {
    pub fn new(meta: EmbeddingMeta, points: ArrayView2<'_, f64>, landmarks: ArrayView2<'_, f64>, class_names: &[String]) -> Result<Self> {
        if points.ncols() != 2 || landmarks.ncols() != 2 {
            return Err(Error::DimensionMismatch { what: "embedding columns", expected: 2, actual: points.ncols().max(landmarks.ncols()) });
        }
        if landmarks.nrows() > 0 && class_names.len() != landmarks.nrows() {
            return Err(Error::DimensionMismatch { what: "class names", expected: landmarks.nrows(), actual: class_names.len() });
        }
        Ok(Self {
            meta,
            points: points.rows().into_iter().map(|r| [r[0], r[1]]).collect(),
            landmarks: landmarks
                .rows()
                .into_iter()
                .zip(class_names)
                .map(|(r, name)| LandmarkRecord { name: name.clone(), x: r[0], y: r[1] })
                .collect(),
        })
    }

    pub fn from_state(meta: EmbeddingMeta, state: &EmbeddingState, class_names: &[String]) -> Result<Self> {
        Self::new(meta, state.points.view(), state.landmarks.view(), class_names)
    }

    pub fn points_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.points.len(), 2), |(i, k)| self.points[i][k])
    }

    pub fn landmarks_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.landmarks.len(), 2), |(u, k)| if k == 0 { self.landmarks[u].x } else { self.landmarks[u].y })
    }

    pub fn class_names(&self) -> Vec<String> {
        self.landmarks.iter().map(|l| l.name.clone()).collect()
    }

    /// Positions as a fresh state (zero velocity) at the recorded iteration.
    pub fn to_state(&self) -> Result<EmbeddingState> {
        let mut state = EmbeddingState::from_positions(self.points_array(), self.landmarks_array())?;
        state.iteration = self.meta.iteration;
        Ok(state)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text)?;
        let finite = doc.points.iter().flatten().chain(doc.landmarks.iter().flat_map(|l| [&l.x, &l.y])).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidSize("embedding document contains non-finite coordinates".into()));
        }
        Ok(doc)
    }
}

pub fn save_embedding(path: &Path, doc: &EmbeddingDocument) -> Result<()> {
    fs::write(path, doc.to_json()?)?;
    Ok(())
}

pub fn load_embedding(path: &Path) -> Result<EmbeddingDocument> {
    EmbeddingDocument::from_json(&fs::read_to_string(path)?)
}

const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];
const CANVAS: f64 = 600.0;
const MARGIN: f64 = 30.0;

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Points as circles colored by `labels`, landmarks as labeled diamond glyphs.
pub fn render_scatter_svg(points: ArrayView2<'_, f64>, landmarks: ArrayView2<'_, f64>, labels: &[usize], class_names: &[String]) -> Result<String> {
    if labels.len() != points.nrows() {
        return Err(Error::DimensionMismatch { what: "label count", expected: points.nrows(), actual: labels.len() });
    }
    let all = points.rows().into_iter().chain(landmarks.rows());
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for r in all {
        for k in 0..2 {
            lo[k] = lo[k].min(r[k]);
            hi[k] = hi[k].max(r[k]);
        }
    }
    let span = (0..2).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    let scale = if span > 0.0 { (CANVAS - 2.0 * MARGIN) / span } else { 1.0 };
    let px = |x: f64, k: usize| if lo[k].is_finite() { MARGIN + (x - lo[k]) * scale } else { CANVAS / 2.0 };

    let mut svg = String::new();
    writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS}" height="{CANVAS}" viewBox="0 0 {CANVAS} {CANVAS}">"#).unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    for (r, &l) in points.rows().into_iter().zip(labels) {
        writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}" fill-opacity="0.8"/>"#,
            px(r[0], 0),
            CANVAS - px(r[1], 1),
            PALETTE[l % PALETTE.len()]
        )
        .unwrap();
    }
    for (u, r) in landmarks.rows().into_iter().enumerate() {
        let (x, y) = (px(r[0], 0), CANVAS - px(r[1], 1));
        let name = class_names.get(u).map_or_else(|| u.to_string(), |s| escape_xml(s));
        writeln!(svg, r#"<g class="landmark">"#).unwrap();
        writeln!(
            svg,
            r#"<path d="M {x:.2} {:.2} L {:.2} {y:.2} L {x:.2} {:.2} L {:.2} {y:.2} Z" fill="{}" stroke="black"/>"#,
            y - 8.0,
            x + 8.0,
            y + 8.0,
            x - 8.0,
            PALETTE[u % PALETTE.len()]
        )
        .unwrap();
        writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-size="12" font-family="sans-serif">{name}</text>"#, x + 10.0, y - 10.0).unwrap();
        writeln!(svg, "</g>").unwrap();
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_scatter_svg(path: &Path, state: &EmbeddingState, labels: &[usize], class_names: &[String]) -> Result<()> {
    fs::write(path, render_scatter_svg(state.points.view(), state.landmarks.view(), labels, class_names)?)?;
    Ok(())
}
