use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, FingerprintRecord, Metadata, Provenance};
use crate::error::{Error, Result};

pub const TAMPERE_WAPS: usize = 489;
pub const UJI_WAPS: usize = 520;
const UJI_COLUMNS: usize = 529;

/// Column layout of a plain CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenericSchema {
    pub input_dim: usize,
    /// Columns holding x and y; absent for unlabeled files.
    pub target_cols: Option<[usize; 2]>,
    pub path_col: Option<usize>,
}

impl GenericSchema {
    /// The layout written by [`write_csv`]: RSSI, then x, y, path.
    pub fn written(input_dim: usize) -> Self {
        Self {
            input_dim,
            target_cols: Some([input_dim, input_dim + 1]),
            path_col: Some(input_dim + 2),
        }
    }

    fn min_columns(&self) -> usize {
        let mut n = self.input_dim;
        if let Some([x, y]) = self.target_cols {
            n = n.max(x + 1).max(y + 1);
        }
        if let Some(p) = self.path_col {
            n = n.max(p + 1);
        }
        n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Schema {
    /// 489 RSSI columns, x, y in meters and an optional path id column;
    /// header optional.
    Tampere,
    /// 520 RSSI columns, longitude, latitude, floor, building and five
    /// metadata columns; header required.
    Ujiindoorloc,
    Generic(GenericSchema),
}

fn is_numeric(cell: &str) -> bool {
    cell.trim().parse::<f64>().is_ok()
}

fn number(cell: &str, line: u64, column: usize) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("column {column}: {cell:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("column {column}: non-finite value"),
        });
    }
    Ok(v)
}

fn optional_number(cell: &str, line: u64, column: usize) -> Result<Option<f64>> {
    if cell.trim().is_empty() {
        Ok(None)
    } else {
        number(cell, line, column).map(Some)
    }
}

fn integral(v: f64, line: u64, column: usize) -> Result<i64> {
    if v.fract() != 0.0 || v.abs() > 2f64.powi(53) {
        return Err(Error::Parse {
            line,
            message: format!("column {column}: expected an integer, got {v}"),
        });
    }
    Ok(v as i64)
}

fn path_id(v: f64, line: u64, column: usize) -> Result<u32> {
    u32::try_from(integral(v, line, column)?).map_err(|_| Error::Parse {
        line,
        message: format!("column {column}: path id {v} out of range"),
    })
}

/// Reads a fingerprint file. Values are kept raw; see [`Dataset::preprocess`].
pub fn load_csv(path: &Path, schema: &Schema) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut records = Vec::new();
    let mut width = None;
    for (row, result) in reader.records().enumerate() {
        let rec = result?;
        let line = rec.position().map_or(row as u64 + 1, |p| p.line());
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if row == 0 {
            let header = !is_numeric(&rec[0]);
            if matches!(schema, Schema::Ujiindoorloc) && !header {
                return Err(Error::Schema("UJIIndoorLoc files need a header row".into()));
            }
            if header {
                check_width(schema, rec.len())?;
                width = Some(rec.len());
                continue;
            }
        }
        let expected = match width {
            Some(w) => w,
            None => {
                check_width(schema, rec.len())?;
                width = Some(rec.len());
                rec.len()
            }
        };
        if rec.len() != expected {
            return Err(Error::Parse {
                line,
                message: format!("{} columns, expected {expected}", rec.len()),
            });
        }
        records.push(parse_row(schema, &rec, line)?);
    }
    let (input_dim, provenance) = match schema {
        Schema::Tampere => (TAMPERE_WAPS, Provenance::Tampere),
        Schema::Ujiindoorloc => (UJI_WAPS, Provenance::Ujiindoorloc),
        Schema::Generic(g) => (g.input_dim, Provenance::Generic),
    };
    if records.is_empty() {
        return Err(Error::Data(format!("{} contains no records", path.display())));
    }
    Dataset::new(records, input_dim, provenance)
}

fn check_width(schema: &Schema, columns: usize) -> Result<()> {
    let ok = match schema {
        Schema::Tampere => columns == TAMPERE_WAPS + 2 || columns == TAMPERE_WAPS + 3,
        Schema::Ujiindoorloc => columns == UJI_COLUMNS,
        Schema::Generic(g) => g.input_dim > 0 && columns >= g.min_columns(),
    };
    if ok {
        Ok(())
    } else {
        let expected = match schema {
            Schema::Tampere => format!("{} or {}", TAMPERE_WAPS + 2, TAMPERE_WAPS + 3),
            Schema::Ujiindoorloc => UJI_COLUMNS.to_string(),
            Schema::Generic(g) => format!("at least {}", g.min_columns().max(1)),
        };
        Err(Error::Schema(format!("{columns} columns, expected {expected}")))
    }
}

fn parse_row(schema: &Schema, rec: &csv::StringRecord, line: u64) -> Result<FingerprintRecord> {
    let rssi_dim = match schema {
        Schema::Tampere => TAMPERE_WAPS,
        Schema::Ujiindoorloc => UJI_WAPS,
        Schema::Generic(g) => g.input_dim,
    };
    let rssi = (0..rssi_dim)
        .map(|c| number(&rec[c], line, c))
        .collect::<Result<Vec<_>>>()?;
    let mut meta = Metadata::default();
    let position = match schema {
        Schema::Tampere => {
            if rec.len() > TAMPERE_WAPS + 2 {
                let c = TAMPERE_WAPS + 2;
                meta.path = Some(path_id(number(&rec[c], line, c)?, line, c)?);
            }
            let x = number(&rec[TAMPERE_WAPS], line, TAMPERE_WAPS)?;
            let y = number(&rec[TAMPERE_WAPS + 1], line, TAMPERE_WAPS + 1)?;
            Some([x, y])
        }
        Schema::Ujiindoorloc => {
            let c = UJI_WAPS;
            let lon = number(&rec[c], line, c)?;
            let lat = number(&rec[c + 1], line, c + 1)?;
            meta.floor = optional_number(&rec[c + 2], line, c + 2)?
                .map(|v| integral(v, line, c + 2))
                .transpose()?;
            meta.building = optional_number(&rec[c + 3], line, c + 3)?
                .map(|v| integral(v, line, c + 3))
                .transpose()?;
            meta.timestamp = optional_number(&rec[c + 8], line, c + 8)?;
            Some([lon, lat])
        }
        Schema::Generic(g) => {
            if let Some(c) = g.path_col {
                meta.path = optional_number(&rec[c], line, c)?
                    .map(|v| path_id(v, line, c))
                    .transpose()?;
            }
            match g.target_cols {
                Some([cx, cy]) => {
                    let x = optional_number(&rec[cx], line, cx)?;
                    let y = optional_number(&rec[cy], line, cy)?;
                    match (x, y) {
                        (Some(x), Some(y)) => Some([x, y]),
                        (None, None) => None,
                        _ => {
                            return Err(Error::Parse {
                                line,
                                message: "only one target coordinate present".into(),
                            })
                        }
                    }
                }
                None => None,
            }
        }
    };
    Ok(FingerprintRecord { rssi, position, meta })
}

/// Writes records in the [`GenericSchema::written`] layout with positions as
/// stored (scaled if the dataset was scaled).
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..ds.input_dim).map(|i| format!("wap_{i}")).collect();
    header.extend(["x".into(), "y".into(), "path".into()]);
    out.write_record(&header)?;
    for r in &ds.records {
        let mut row: Vec<String> = r.rssi.iter().map(|v| v.to_string()).collect();
        match r.position {
            Some([x, y]) => row.extend([x.to_string(), y.to_string()]),
            None => row.extend([String::new(), String::new()]),
        }
        row.push(r.meta.path.map(|p| p.to_string()).unwrap_or_default());
        out.write_record(&row)?;
    }
    let bytes = out.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    File::create(path)?.write_all(&bytes)?;
    Ok(())
}
