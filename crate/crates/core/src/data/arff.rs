//! Mulan-format ARFF reader/writer.
//!
//! A Mulan dataset is an ARFF file in which some attributes are labels, plus
//! an XML header listing the label attribute names. Both dense and sparse
//! (`{index value, ...}`) data rows are accepted; sparse rows are densified
//! with zeros (first nominal value for nominal attributes).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::MultiLabelDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum AttributeKind {
    Numeric,
    Nominal(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attribute {
    pub name: String,
    pub kind: AttributeKind,
}

/// Parsed ARFF content. Nominal cells hold the index of their value.
#[derive(Debug, Clone, PartialEq)]
pub struct ArffTable {
    pub relation: String,
    pub attributes: Vec<Attribute>,
    pub rows: Vec<Vec<f64>>,
    /// 1-based source line of every data row.
    pub row_lines: Vec<usize>,
}

pub fn parse_arff(text: &str) -> Result<ArffTable> {
    let mut relation = String::new();
    let mut attributes = Vec::new();
    let mut rows = Vec::new();
    let mut row_lines = Vec::new();
    let mut in_data = false;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        if !in_data {
            let lower = line.to_ascii_lowercase();
            if lower.starts_with("@relation") {
                let rest = line["@relation".len()..].trim();
                relation = unquote(split_name(rest, lineno)?.0);
            } else if lower.starts_with("@attribute") {
                let rest = line["@attribute".len()..].trim();
                attributes.push(parse_attribute(rest, lineno)?);
            } else if lower.starts_with("@data") {
                if attributes.is_empty() {
                    return Err(Error::parse(lineno, "@data before any @attribute"));
                }
                in_data = true;
            } else {
                return Err(Error::parse(lineno, format!("unexpected header line `{line}`")));
            }
            continue;
        }
        let row = if line.starts_with('{') {
            parse_sparse_row(line, &attributes, lineno)?
        } else {
            parse_dense_row(line, &attributes, lineno)?
        };
        rows.push(row);
        row_lines.push(lineno);
    }
    if !in_data {
        return Err(Error::parse(text.lines().count().max(1), "missing @data section"));
    }
    Ok(ArffTable {
        relation,
        attributes,
        rows,
        row_lines,
    })
}

/// Label names from a Mulan XML header, in document order.
pub fn parse_label_header(xml: &str) -> Result<Vec<String>> {
    let doc = roxmltree::Document::parse(xml)
        .map_err(|e| Error::parse(e.pos().row as usize, format!("label header: {e}")))?;
    let names: Vec<String> = doc
        .descendants()
        .filter(|n| n.is_element() && n.tag_name().name() == "label")
        .filter_map(|n| n.attribute("name").map(str::to_string))
        .collect();
    if names.is_empty() {
        return Err(Error::Schema("label header lists no labels".into()));
    }
    Ok(names)
}

/// Load a Mulan dataset. Labels are remapped from `{0, 1}` to `{-1, +1}`;
/// feature columns keep their file order.
pub fn load_mulan_arff(data_path: &Path, label_header_path: &Path) -> Result<MultiLabelDataset> {
    let text = fs::read_to_string(data_path).map_err(|e| Error::io(data_path, e))?;
    let xml = fs::read_to_string(label_header_path).map_err(|e| Error::io(label_header_path, e))?;
    let table = parse_arff(&text)?;
    let label_names = parse_label_header(&xml)?;
    let name = data_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| table.relation.clone());
    table_to_dataset(name, &table, &label_names)
}

pub(crate) fn table_to_dataset(name: String, table: &ArffTable, label_names: &[String]) -> Result<MultiLabelDataset> {
    let mut label_cols = Vec::with_capacity(label_names.len());
    for label in label_names {
        let col = table
            .attributes
            .iter()
            .position(|a| &a.name == label)
            .ok_or_else(|| Error::Schema(format!("label `{label}` is not an ARFF attribute")))?;
        label_cols.push(col);
    }
    // Labels in attribute order.
    label_cols.sort_unstable();
    let feature_cols: Vec<usize> = (0..table.attributes.len())
        .filter(|c| !label_cols.contains(c))
        .collect();
    if table.rows.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let n = table.rows.len();
    let features = DMatrix::from_fn(n, feature_cols.len(), |i, j| table.rows[i][feature_cols[j]]);
    let mut labels = DMatrix::<i8>::zeros(n, label_cols.len());
    for (i, row) in table.rows.iter().enumerate() {
        for (j, &col) in label_cols.iter().enumerate() {
            labels[(i, j)] = label_sign(&table.attributes[col], row[col], table.row_lines[i])?;
        }
    }
    MultiLabelDataset::new(
        name,
        features,
        labels,
        feature_cols.iter().map(|&c| table.attributes[c].name.clone()).collect(),
        label_cols.iter().map(|&c| table.attributes[c].name.clone()).collect(),
    )
}

fn label_sign(attr: &Attribute, cell: f64, line: usize) -> Result<i8> {
    let positive = match &attr.kind {
        AttributeKind::Numeric if cell == 1.0 => true,
        AttributeKind::Numeric if cell == 0.0 => false,
        AttributeKind::Numeric => {
            return Err(Error::parse(
                line,
                format!("label `{}` has non-binary value {cell}", attr.name),
            ))
        }
        AttributeKind::Nominal(values) => {
            let value = values[cell as usize].to_ascii_lowercase();
            match value.as_str() {
                "1" | "true" | "yes" | "t" | "y" => true,
                "0" | "false" | "no" | "f" | "n" => false,
                other => {
                    return Err(Error::parse(
                        line,
                        format!("label `{}` has non-binary value `{other}`", attr.name),
                    ))
                }
            }
        }
    };
    Ok(if positive { 1 } else { -1 })
}

/// Write a dataset as dense Mulan ARFF (labels as `{0,1}` nominals last).
pub fn write_mulan_arff(dataset: &MultiLabelDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "@relation {}", quote(dataset.name()));
    out.push('\n');
    for name in dataset.feature_names() {
        let _ = writeln!(out, "@attribute {} numeric", quote(name));
    }
    for name in dataset.label_names() {
        let _ = writeln!(out, "@attribute {} {{0,1}}", quote(name));
    }
    out.push_str("\n@data\n");
    for i in 0..dataset.num_instances() {
        let mut cells: Vec<String> = dataset.features().row(i).iter().map(|v| v.to_string()).collect();
        cells.extend(
            dataset
                .labels()
                .row(i)
                .iter()
                .map(|&v| if v == 1 { "1".to_string() } else { "0".to_string() }),
        );
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_label_header(dataset: &MultiLabelDataset, path: &Path) -> Result<()> {
    let mut out = String::from(
        "<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<labels xmlns=\"http://mulan.sourceforge.net/labels\">\n",
    );
    for name in dataset.label_names() {
        let escaped = name
            .replace('&', "&amp;")
            .replace('"', "&quot;")
            .replace('<', "&lt;")
            .replace('>', "&gt;");
        let _ = writeln!(out, "<label name=\"{escaped}\"></label>");
    }
    out.push_str("</labels>\n");
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn quote(name: &str) -> String {
    format!("'{}'", name.replace('\\', "\\\\").replace('\'', "\\'"))
}

fn unquote(token: &str) -> String {
    let t = token.trim();
    let bytes = t.as_bytes();
    if t.len() >= 2 && (bytes[0] == b'\'' || bytes[0] == b'"') && bytes[t.len() - 1] == bytes[0] {
        let inner = &t[1..t.len() - 1];
        let mut out = String::with_capacity(inner.len());
        let mut chars = inner.chars();
        while let Some(c) = chars.next() {
            if c == '\\' {
                if let Some(next) = chars.next() {
                    out.push(next);
                }
            } else {
                out.push(c);
            }
        }
        out
    } else {
        t.to_string()
    }
}

/// Split a leading (possibly quoted) name from the rest of a header line.
fn split_name(s: &str, line: usize) -> Result<(&str, &str)> {
    let s = s.trim_start();
    let first = s.chars().next().ok_or_else(|| Error::parse(line, "missing name"))?;
    if first == '\'' || first == '"' {
        let mut escaped = false;
        for (i, c) in s.char_indices().skip(1) {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == first {
                return Ok((&s[..=i], &s[i + 1..]));
            }
        }
        Err(Error::parse(line, "unterminated quoted name"))
    } else {
        let end = s.find(|c: char| c.is_whitespace() || c == '{').unwrap_or(s.len());
        Ok((&s[..end], &s[end..]))
    }
}

fn parse_attribute(rest: &str, line: usize) -> Result<Attribute> {
    let (name, kind) = split_name(rest, line)?;
    let name = unquote(name);
    let kind = kind.trim();
    if kind.starts_with('{') {
        let close = kind
            .rfind('}')
            .ok_or_else(|| Error::parse(line, format!("unterminated nominal list for `{name}`")))?;
        let values: Vec<String> = split_cells(&kind[1..close]).into_iter().map(unquote).collect();
        if values.is_empty() || values.iter().any(String::is_empty) {
            return Err(Error::parse(line, format!("empty nominal value in `{name}`")));
        }
        return Ok(Attribute {
            name,
            kind: AttributeKind::Nominal(values),
        });
    }
    match kind.to_ascii_lowercase().as_str() {
        "numeric" | "real" | "integer" => Ok(Attribute {
            name,
            kind: AttributeKind::Numeric,
        }),
        other => Err(Error::parse(
            line,
            format!("unsupported attribute type `{other}` for `{name}`"),
        )),
    }
}

/// Split on commas outside quotes.
fn split_cells(s: &str) -> Vec<&str> {
    let mut cells = Vec::new();
    let mut start = 0;
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for (i, c) in s.char_indices() {
        if escaped {
            escaped = false;
            continue;
        }
        match (quote, c) {
            (_, '\\') => escaped = true,
            (None, '\'' | '"') => quote = Some(c),
            (Some(q), c) if c == q => quote = None,
            (None, ',') => {
                cells.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    let last = s[start..].trim();
    if !last.is_empty() || !cells.is_empty() {
        cells.push(last);
    }
    cells
}

fn parse_cell(attr: &Attribute, token: &str, line: usize) -> Result<f64> {
    let value = unquote(token);
    if value == "?" {
        return Err(Error::parse(
            line,
            format!("missing value for `{}` is not supported", attr.name),
        ));
    }
    match &attr.kind {
        AttributeKind::Numeric => value
            .parse::<f64>()
            .map_err(|_| Error::parse(line, format!("`{value}` is not numeric (attribute `{}`)", attr.name))),
        AttributeKind::Nominal(values) => values
            .iter()
            .position(|v| *v == value)
            .map(|p| p as f64)
            .ok_or_else(|| Error::parse(line, format!("`{value}` is not a declared value of `{}`", attr.name))),
    }
}

fn parse_dense_row(line: &str, attributes: &[Attribute], lineno: usize) -> Result<Vec<f64>> {
    let cells = split_cells(line);
    if cells.len() != attributes.len() {
        return Err(Error::parse(
            lineno,
            format!("expected {} values, found {}", attributes.len(), cells.len()),
        ));
    }
    cells
        .iter()
        .zip(attributes)
        .map(|(cell, attr)| parse_cell(attr, cell, lineno))
        .collect()
}

fn parse_sparse_row(line: &str, attributes: &[Attribute], lineno: usize) -> Result<Vec<f64>> {
    let close = line
        .rfind('}')
        .ok_or_else(|| Error::parse(lineno, "unterminated sparse row"))?;
    let mut row = vec![0.0; attributes.len()];
    for entry in split_cells(&line[1..close]) {
        if entry.is_empty() {
            continue;
        }
        let (idx, value) = entry
            .split_once(char::is_whitespace)
            .ok_or_else(|| Error::parse(lineno, format!("malformed sparse entry `{entry}`")))?;
        let idx: usize = idx
            .trim()
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad sparse index `{idx}`")))?;
        let attr = attributes
            .get(idx)
            .ok_or_else(|| Error::parse(lineno, format!("sparse index {idx} out of range")))?;
        row[idx] = parse_cell(attr, value.trim(), lineno)?;
    }
    Ok(row)
}
