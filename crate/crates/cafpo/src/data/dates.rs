use std::fmt;
use std::str::FromStr;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use super::DataError;

/// A monthly period, the panel time unit. Ordered, contiguous arithmetic
/// via an internal months-since-epoch index. Formats as `YYYY-MM`.
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Month(i32);

impl Month {
    pub fn from_ym(year: i32, month: u32) -> Result<Self, DataError> {
        if !(1..=12).contains(&month) {
            return Err(DataError::BadDate(format!("{}-{:02}", year, month)));
        }
        Ok(Month(year * 12 + (month as i32 - 1)))
    }

    pub fn year(self) -> i32 {
        self.0.div_euclid(12)
    }

    pub fn month(self) -> u32 {
        (self.0.rem_euclid(12) + 1) as u32
    }

    pub fn add(self, periods: i32) -> Self {
        Month(self.0 + periods)
    }

    pub fn next(self) -> Self {
        self.add(1)
    }

    pub fn prev(self) -> Self {
        self.add(-1)
    }

    /// Signed number of periods from `other` to `self`.
    pub fn diff(self, other: Month) -> i32 {
        self.0 - other.0
    }

    /// December of the year before this month's year.
    pub fn prior_year_end(self) -> Month {
        Month((self.year() - 1) * 12 + 11)
    }

    /// Inclusive range of months.
    pub fn range_inclusive(start: Month, end: Month) -> Vec<Month> {
        (start.0..=end.0).map(Month).collect()
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year(), self.month())
    }
}

impl FromStr for Month {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (y, m) = s.split_once('-').ok_or_else(|| DataError::BadDate(s.to_string()))?;
        let year: i32 = y.parse().map_err(|_| DataError::BadDate(s.to_string()))?;
        let month: u32 = m.parse().map_err(|_| DataError::BadDate(s.to_string()))?;
        Month::from_ym(year, month)
    }
}

impl Serialize for Month {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Month {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}
