//! Hand-rolled readers/writers for the fixed panel schemas. No quoting:
//! identifiers must not contain commas, floats use Rust's shortest
//! round-trip formatting, missing characteristic values are encoded as an
//! empty value field.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3};

use super::panel::{CapsPanel, CharacteristicsPanel, ReturnsPanel};
use super::{DataError, Month};

fn read_to_string(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })
}

fn bad_row(path: &Path, line: usize, msg: impl Into<String>) -> DataError {
    DataError::BadRow { path: path.display().to_string(), line, msg: msg.into() }
}

fn split_fields<'a>(
    path: &Path,
    line_no: usize,
    line: &'a str,
    expected: usize,
) -> Result<Vec<&'a str>, DataError> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != expected {
        return Err(bad_row(path, line_no, format!("expected {} fields, got {}", expected, fields.len())));
    }
    Ok(fields)
}

fn check_header(path: &Path, first: Option<&str>, expected: &str) -> Result<(), DataError> {
    match first {
        Some(h) if h.trim() == expected => Ok(()),
        Some(h) => Err(bad_row(path, 1, format!("expected header `{}`, got `{}`", expected, h))),
        None => Err(bad_row(path, 1, "empty file".to_string())),
    }
}

fn contiguous_dates(dates: &BTreeSet<Month>) -> Vec<Month> {
    match (dates.first(), dates.last()) {
        (Some(&lo), Some(&hi)) => Month::range_inclusive(lo, hi),
        _ => Vec::new(),
    }
}

/// Loads `date,asset,return` rows into a panel. Absent (date, asset) pairs
/// are marked unavailable; duplicates and returns <= -1 are rejected with
/// the offending line number.
pub fn load_returns_csv(path: &Path) -> Result<ReturnsPanel, DataError> {
    let text = read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    check_header(path, lines.next().map(|(_, l)| l), "date,asset,return")?;

    let mut cells: BTreeMap<(Month, String), f64> = BTreeMap::new();
    let mut dates = BTreeSet::new();
    let mut assets = BTreeSet::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f = split_fields(path, line_no, line, 3)?;
        let date: Month = f[0].trim().parse()?;
        let asset = f[1].trim().to_string();
        if asset.is_empty() {
            return Err(bad_row(path, line_no, "empty asset id"));
        }
        let value: f64 = f[2]
            .trim()
            .parse()
            .map_err(|_| bad_row(path, line_no, format!("bad return `{}`", f[2])))?;
        if !value.is_finite() {
            return Err(bad_row(path, line_no, "non-finite return"));
        }
        if value <= -1.0 {
            return Err(bad_row(path, line_no, format!("return {} <= -1", value)));
        }
        if cells.insert((date, asset.clone()), value).is_some() {
            return Err(DataError::DuplicateRow {
                path: path.display().to_string(),
                line: line_no,
                date,
                key: asset,
            });
        }
        dates.insert(date);
        assets.insert(asset);
    }

    let dates = contiguous_dates(&dates);
    let assets: Vec<String> = assets.into_iter().collect();
    let (t, n) = (dates.len(), assets.len());
    let mut returns = Array2::zeros((t, n));
    let mut available = Array2::from_elem((t, n), false);
    for ((date, asset), value) in &cells {
        let i = date.diff(dates[0]) as usize;
        let j = assets.binary_search(asset).expect("asset registered");
        returns[(i, j)] = *value;
        available[(i, j)] = true;
    }
    ReturnsPanel::new(dates, assets, returns, available)
}

/// Loads `date,asset,name,value` rows into a raw characteristics panel.
/// An empty value field marks a missing observation, as does any
/// (date, asset, name) triple absent from the file.
pub fn load_characteristics_csv(path: &Path) -> Result<CharacteristicsPanel, DataError> {
    let text = read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    check_header(path, lines.next().map(|(_, l)| l), "date,asset,name,value")?;

    let mut cells: BTreeMap<(Month, String, String), Option<f64>> = BTreeMap::new();
    let mut dates = BTreeSet::new();
    let mut assets = BTreeSet::new();
    let mut names = BTreeSet::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f = split_fields(path, line_no, line, 4)?;
        let date: Month = f[0].trim().parse()?;
        let asset = f[1].trim().to_string();
        let name = f[2].trim().to_string();
        if asset.is_empty() || name.is_empty() {
            return Err(bad_row(path, line_no, "empty asset or characteristic name"));
        }
        let value = if f[3].trim().is_empty() {
            None
        } else {
            let v: f64 = f[3]
                .trim()
                .parse()
                .map_err(|_| bad_row(path, line_no, format!("bad value `{}`", f[3])))?;
            if !v.is_finite() {
                return Err(bad_row(path, line_no, "non-finite value"));
            }
            Some(v)
        };
        if cells.insert((date, asset.clone(), name.clone()), value).is_some() {
            return Err(DataError::DuplicateRow {
                path: path.display().to_string(),
                line: line_no,
                date,
                key: format!("{},{}", asset, name),
            });
        }
        dates.insert(date);
        assets.insert(asset);
        names.insert(name);
    }

    let dates = contiguous_dates(&dates);
    let assets: Vec<String> = assets.into_iter().collect();
    let names: Vec<String> = names.into_iter().collect();
    let (t, n, p) = (dates.len(), assets.len(), names.len());
    let mut values = Array3::zeros((t, n, p));
    let mut missing = Array3::from_elem((t, n, p), true);
    for ((date, asset, name), value) in &cells {
        if let Some(v) = value {
            let i = date.diff(dates[0]) as usize;
            let j = assets.binary_search(asset).expect("asset registered");
            let k = names.binary_search(name).expect("name registered");
            values[(i, j, k)] = *v;
            missing[(i, j, k)] = false;
        }
    }
    Ok(CharacteristicsPanel {
        dates,
        assets,
        names,
        values,
        missing,
        lag_applied: None,
        normalized: false,
    })
}

/// Loads `date,asset,market_cap` rows. Caps must be finite and positive.
pub fn load_caps_csv(path: &Path) -> Result<CapsPanel, DataError> {
    let text = read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    check_header(path, lines.next().map(|(_, l)| l), "date,asset,market_cap")?;

    let mut cells: BTreeMap<(Month, String), f64> = BTreeMap::new();
    let mut dates = BTreeSet::new();
    let mut assets = BTreeSet::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f = split_fields(path, line_no, line, 3)?;
        let date: Month = f[0].trim().parse()?;
        let asset = f[1].trim().to_string();
        let value: f64 = f[2]
            .trim()
            .parse()
            .map_err(|_| bad_row(path, line_no, format!("bad market cap `{}`", f[2])))?;
        if !value.is_finite() || value <= 0.0 {
            return Err(bad_row(path, line_no, format!("market cap must be positive, got {}", value)));
        }
        if cells.insert((date, asset.clone()), value).is_some() {
            return Err(DataError::DuplicateRow {
                path: path.display().to_string(),
                line: line_no,
                date,
                key: asset,
            });
        }
        dates.insert(date);
        assets.insert(asset);
    }

    let dates = contiguous_dates(&dates);
    let assets: Vec<String> = assets.into_iter().collect();
    let (t, n) = (dates.len(), assets.len());
    let mut caps = Array2::zeros((t, n));
    let mut available = Array2::from_elem((t, n), false);
    for ((date, asset), value) in &cells {
        let i = date.diff(dates[0]) as usize;
        let j = assets.binary_search(asset).expect("asset registered");
        caps[(i, j)] = *value;
        available[(i, j)] = true;
    }
    Ok(CapsPanel { dates, assets, caps, available })
}

fn create(path: &Path) -> Result<fs::File, DataError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| DataError::Io { path: dir.display().to_string(), source })?;
    }
    fs::File::create(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io { path: path.display().to_string(), source }
}

pub fn write_returns_csv(panel: &ReturnsPanel, path: &Path) -> Result<(), DataError> {
    let mut w = std::io::BufWriter::new(create(path)?);
    writeln!(w, "date,asset,return").map_err(|e| io_err(path, e))?;
    for (i, date) in panel.dates.iter().enumerate() {
        for (j, asset) in panel.assets.iter().enumerate() {
            if panel.available[(i, j)] {
                writeln!(w, "{},{},{}", date, asset, panel.returns[(i, j)]).map_err(|e| io_err(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_characteristics_csv(panel: &CharacteristicsPanel, path: &Path) -> Result<(), DataError> {
    let mut w = std::io::BufWriter::new(create(path)?);
    writeln!(w, "date,asset,name,value").map_err(|e| io_err(path, e))?;
    for (i, date) in panel.dates.iter().enumerate() {
        for (j, asset) in panel.assets.iter().enumerate() {
            for (k, name) in panel.names.iter().enumerate() {
                if panel.missing[(i, j, k)] {
                    writeln!(w, "{},{},{},", date, asset, name).map_err(|e| io_err(path, e))?;
                } else {
                    writeln!(w, "{},{},{},{}", date, asset, name, panel.values[(i, j, k)])
                        .map_err(|e| io_err(path, e))?;
                }
            }
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_caps_csv(panel: &CapsPanel, path: &Path) -> Result<(), DataError> {
    let mut w = std::io::BufWriter::new(create(path)?);
    writeln!(w, "date,asset,market_cap").map_err(|e| io_err(path, e))?;
    for (i, date) in panel.dates.iter().enumerate() {
        for (j, asset) in panel.assets.iter().enumerate() {
            if panel.available[(i, j)] {
                writeln!(w, "{},{},{}", date, asset, panel.caps[(i, j)]).map_err(|e| io_err(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}
