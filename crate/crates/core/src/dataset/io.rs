use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{Application, Dataset, DatasetError, Decision, Schema};

fn io_error(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn load_csv(path: &Path, schema: &Schema) -> Result<Dataset, DatasetError> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    read_csv(file, schema)
}

/// Parses UTF-8, comma-separated data with a header row. Empty cells are
/// missing values; categorical cells hold category labels.
pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Dataset, DatasetError> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| DatasetError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let expected: BTreeSet<&str> = schema
        .attribute_names()
        .chain([schema.id_column.as_str(), schema.label_name.as_str()])
        .collect();
    let found: BTreeSet<&str> = header.iter().map(String::as_str).collect();
    if found.len() != header.len() {
        return Err(DatasetError::SchemaMismatch("duplicate column in header".into()));
    }
    if let Some(unknown) = found.difference(&expected).next() {
        return Err(DatasetError::SchemaMismatch(format!("unknown column {unknown}")));
    }
    if let Some(missing) = expected.difference(&found).next() {
        return Err(DatasetError::SchemaMismatch(format!("missing column {missing}")));
    }

    let mut applications = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| DatasetError::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(line),
            message: e.to_string(),
        })?;
        let mut id = None;
        let mut label = None;
        let mut values = BTreeMap::new();
        for (column, cell) in header.iter().zip(record.iter()) {
            let cell = cell.trim();
            if column == &schema.id_column {
                id = Some(cell.to_string());
                continue;
            }
            if cell.is_empty() {
                continue;
            }
            if column == &schema.label_name {
                label = Some(Decision::parse(cell).ok_or_else(|| DatasetError::Parse {
                    line,
                    message: format!("label {cell:?} is neither accepted nor rejected"),
                })?);
                continue;
            }
            let spec = schema.attribute(column).expect("header checked against schema");
            let value = if spec.is_continuous() {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| DatasetError::Parse {
                        line,
                        message: format!("{column}: {cell:?} is not a number"),
                    })?
            } else {
                spec.category_index(cell).ok_or_else(|| DatasetError::Parse {
                    line,
                    message: format!("{column}: unknown category {cell:?}"),
                })? as f64
            };
            values.insert(column.clone(), value);
        }
        let id = match id {
            Some(id) if !id.is_empty() => id,
            _ => {
                return Err(DatasetError::Parse {
                    line,
                    message: "empty application id".into(),
                })
            }
        };
        applications.push(Application { id, values, label });
    }
    Dataset::new(schema.clone(), applications)
}

/// Writes the dataset in the dialect `read_csv` accepts: id column, the
/// attributes in schema order, then the label.
pub fn write_csv<W: Write>(d: &Dataset, writer: W) -> Result<(), DatasetError> {
    let to_err = |e: csv::Error| DatasetError::Io {
        path: "<csv writer>".into(),
        source: std::io::Error::other(e),
    };
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![d.schema.id_column.clone()];
    header.extend(d.schema.attributes.iter().map(|a| a.name.clone()));
    header.push(d.schema.label_name.clone());
    wtr.write_record(&header).map_err(to_err)?;
    for app in &d.applications {
        let mut row = vec![app.id.clone()];
        for spec in &d.schema.attributes {
            row.push(match app.value(&spec.name) {
                None => String::new(),
                Some(v) if spec.is_continuous() => format_number(v),
                Some(v) => spec.category_label(v).unwrap_or_default().to_string(),
            });
        }
        row.push(app.label.map(|l| l.as_str().to_string()).unwrap_or_default());
        wtr.write_record(&row).map_err(to_err)?;
    }
    wtr.flush().map_err(|e| DatasetError::Io {
        path: "<csv writer>".into(),
        source: e,
    })
}

// Shortest representation that parses back to the same f64.
fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

pub fn write_schema(schema: &Schema, path: &Path) -> Result<(), DatasetError> {
    let json = serde_json::to_string_pretty(schema).expect("schema serialises");
    std::fs::write(path, json + "\n").map_err(|e| io_error(path, e))
}

pub fn read_schema(path: &Path) -> Result<Schema, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let schema: Schema =
        serde_json::from_str(&text).map_err(|e| DatasetError::InvalidSchema(format!("{}: {e}", path.display())))?;
    schema.validate()?;
    Ok(schema)
}
