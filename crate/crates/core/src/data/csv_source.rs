use std::path::Path;

use nalgebra::DMatrix;

use super::MultiLabelDataset;
use crate::error::{Error, Result};

/// Plain CSV fallback: header row, then `t` feature columns followed by
/// `num_labels` label columns holding 0/1.
pub fn load_csv(path: &Path, num_labels: usize) -> Result<MultiLabelDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.len() <= num_labels {
        return Err(Error::Schema(format!(
            "CSV has {} columns, need more than {num_labels} label columns",
            header.len()
        )));
    }
    let t = header.len() - num_labels;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // line 1 is the header
        let line = i + 2;
        if record.len() != header.len() {
            return Err(Error::parse(
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        for cell in record.iter().take(t) {
            features.push(
                cell.parse::<f64>()
                    .map_err(|_| Error::parse(line, format!("`{cell}` is not numeric")))?,
            );
        }
        for cell in record.iter().skip(t) {
            labels.push(match cell {
                "1" => 1i8,
                "0" => -1i8,
                other => return Err(Error::parse(line, format!("label value `{other}` is not 0/1"))),
            });
        }
    }
    let n = features.len() / t;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    MultiLabelDataset::new(
        name,
        DMatrix::from_row_slice(n, t, &features),
        DMatrix::from_row_slice(n, num_labels, &labels),
        header[..t].to_vec(),
        header[t..].to_vec(),
    )
}
