//! Labels CSV: header `image,<group>,<group>,...`, one row per image file,
//! group-local label names as cells, empty cell = unlabeled.

use std::path::Path;

use super::schema::AttributeSchema;
use crate::error::{Error, Result};

pub const IMAGE_COLUMN: &str = "image";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelRow {
    pub file: String,
    /// Class index per schema group, `None` when unlabeled.
    pub labels: Vec<Option<usize>>,
}

pub fn write_labels_csv(path: &Path, schema: &AttributeSchema, rows: &[LabelRow]) -> Result<()> {
    crate::io::write_atomic(path, &labels_csv_bytes(schema, rows)?)
}

pub fn labels_csv_bytes(schema: &AttributeSchema, rows: &[LabelRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut header = vec![IMAGE_COLUMN.to_string()];
    header.extend(schema.groups().iter().map(|g| g.name.clone()));
    w.write_record(&header)?;
    for row in rows {
        if row.labels.len() != schema.group_count() {
            return Err(Error::Labels(format!(
                "row for {} has {} labels, schema has {} groups",
                row.file,
                row.labels.len(),
                schema.group_count()
            )));
        }
        let mut record = vec![row.file.clone()];
        for (g, label) in row.labels.iter().enumerate() {
            record.push(match label {
                Some(c) => schema.groups()[g].labels[*c].clone(),
                None => String::new(),
            });
        }
        w.write_record(&record)?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(e.into_error()))
}

pub fn load_labels_csv(path: &Path, schema: &AttributeSchema) -> Result<Vec<LabelRow>> {
    let text = std::fs::read(path)?;
    parse_labels_csv(&text, schema)
}

pub fn parse_labels_csv(bytes: &[u8], schema: &AttributeSchema) -> Result<Vec<LabelRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(bytes);
    let header = reader.headers()?.clone();
    if header.get(0).map(str::trim) != Some(IMAGE_COLUMN) {
        return Err(Error::Labels(format!(
            "first header column must be {IMAGE_COLUMN:?}"
        )));
    }
    // column -> group
    let mut columns = Vec::with_capacity(header.len() - 1);
    let mut seen = vec![false; schema.group_count()];
    for name in header.iter().skip(1) {
        let g = schema
            .group_index(name.trim())
            .ok_or_else(|| Error::Labels(format!("unknown group column {name:?}")))?;
        if std::mem::replace(&mut seen[g], true) {
            return Err(Error::Labels(format!("duplicate group column {name:?}")));
        }
        columns.push(g);
    }
    if let Some(g) = seen.iter().position(|s| !s) {
        return Err(Error::Labels(format!(
            "missing group column {:?}",
            schema.groups()[g].name
        )));
    }

    let mut rows = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let row_no = n + 2; // 1-based, after the header
        let record = record.map_err(|e| Error::Labels(format!("row {row_no}: {e}")))?;
        let file = record.get(0).unwrap_or("").trim();
        if file.is_empty() {
            return Err(Error::Labels(format!("row {row_no}: empty image name")));
        }
        let mut labels = vec![None; schema.group_count()];
        for (cell, &g) in record.iter().skip(1).zip(&columns) {
            let cell = cell.trim();
            if cell.is_empty() {
                continue;
            }
            let class = schema.class_index(g, cell).ok_or_else(|| {
                Error::Labels(format!(
                    "row {row_no}, column {:?}: unknown value {cell:?} (expected one of {})",
                    schema.groups()[g].name,
                    schema.groups()[g].labels.join(", ")
                ))
            })?;
            labels[g] = Some(class);
        }
        rows.push(LabelRow {
            file: file.to_string(),
            labels,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::default_schema;

    const HEADER: &str = "image,hair_color,skin_tone,eyewear,expression,face_shape,accessory\n";

    #[test]
    fn empty_cell_is_unlabeled() {
        let text = format!("{HEADER}img1.ppm,blond,light,,smiling,round,none\n");
        let rows = parse_labels_csv(text.as_bytes(), &default_schema()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].file, "img1.ppm");
        assert_eq!(
            rows[0].labels,
            vec![Some(1), Some(0), None, Some(1), Some(0), Some(0)]
        );
    }

    #[test]
    fn unknown_value_names_row_and_column() {
        let text = format!("{HEADER}a.ppm,blond,light,,smiling,round,none\nb.ppm,purple,light,,smiling,round,none\n");
        let err = parse_labels_csv(text.as_bytes(), &default_schema())
            .unwrap_err()
            .to_string();
        assert!(err.contains("row 3"), "{err}");
        assert!(err.contains("hair_color"), "{err}");
        assert!(err.contains("purple"), "{err}");
    }

    #[test]
    fn header_problems() {
        let schema = default_schema();
        let bad_group = "image,hair_color,skin_tone,eyewear,expression,face_shape,mood\n";
        assert!(parse_labels_csv(bad_group.as_bytes(), &schema).is_err());
        let missing = "image,hair_color\n";
        assert!(parse_labels_csv(missing.as_bytes(), &schema).is_err());
        let short_row = format!("{HEADER}a.ppm,blond\n");
        assert!(parse_labels_csv(short_row.as_bytes(), &schema).is_err());
    }

    #[test]
    fn columns_may_be_reordered() {
        let text = "image,accessory,face_shape,expression,eyewear,skin_tone,hair_color\nx.ppm,hat,oval,,glasses,dark,brown\n";
        let rows = parse_labels_csv(text.as_bytes(), &default_schema()).unwrap();
        assert_eq!(
            rows[0].labels,
            vec![Some(2), Some(1), Some(1), None, Some(1), Some(1)]
        );
    }
}
