//! Panel ingestion, preprocessing, and synthetic generation.
//!
//! CSV loaders assemble dated return/characteristic/cap panels; the
//! preprocessing protocol is fixed as lag -> impute -> rank-normalize; the
//! synthetic generator produces panels with known latent-factor ground
//! truth for end-to-end verification.

mod csv_io;
mod dates;
mod panel;
mod preprocess;
mod synthetic;
mod universe;

pub use csv_io::{
    load_caps_csv, load_characteristics_csv, load_returns_csv, write_caps_csv,
    write_characteristics_csv, write_returns_csv,
};
pub use dates::Month;
pub use panel::{CapsPanel, CharacteristicsPanel, ReturnsPanel};
pub use preprocess::{apply_lag_schedule, impute_cross_sectional_median, rank_normalize};
pub use synthetic::{generate_synthetic_panel, SyntheticData, SyntheticSpec};
pub use universe::select_universe;

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Errors from loading, validating, or transforming panels.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad date `{0}` (expected YYYY-MM)")]
    BadDate(String),
    #[error("{path}:{line}: {msg}")]
    BadRow { path: String, line: usize, msg: String },
    #[error("{path}:{line}: duplicate row for ({date}, {key})")]
    DuplicateRow { path: String, line: usize, date: Month, key: String },
    #[error("gap in dates: {after} is not followed by {before}")]
    DateGap { after: Month, before: Month },
    #[error("non-finite return for {asset} at {date}")]
    NonFiniteReturn { date: Month, asset: String },
    #[error("return {value} <= -1 for {asset} at {date}")]
    ImpossibleReturn { date: Month, asset: String, value: f64 },
    #[error("insufficient history: need >= {required} periods, have {available}")]
    InsufficientHistory { required: usize, available: usize },
    #[error("characteristic `{0}` has no frequency tag in the lag schedule")]
    UntaggedCharacteristic(String),
    #[error("universe shortfall in {year}: need {requested}, only {available} available")]
    UniverseShortfall { year: i32, requested: usize, available: usize },
    #[error("invalid synthetic spec: {0}")]
    BadSyntheticSpec(String),
    #[error("{0}")]
    Internal(String),
}

/// Publication frequency of a characteristic, which determines how many
/// periods its raw value is lagged before it may be used: monthly lags 1,
/// quarterly 4, annual 6.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Monthly,
    Quarterly,
    Annual,
}

impl Frequency {
    pub fn lag(self) -> usize {
        match self {
            Frequency::Monthly => 1,
            Frequency::Quarterly => 4,
            Frequency::Annual => 6,
        }
    }
}

/// Maps each characteristic name to its publication frequency. Every
/// characteristic in a panel must carry exactly one tag.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct LagSchedule {
    pub tags: BTreeMap<String, Frequency>,
}

impl LagSchedule {
    pub fn uniform(names: &[String], freq: Frequency) -> Self {
        LagSchedule { tags: names.iter().map(|n| (n.clone(), freq)).collect() }
    }

    pub fn lag_of(&self, name: &str) -> Result<usize, DataError> {
        self.tags
            .get(name)
            .map(|f| f.lag())
            .ok_or_else(|| DataError::UntaggedCharacteristic(name.to_string()))
    }
}
