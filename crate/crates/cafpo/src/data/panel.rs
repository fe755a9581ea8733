use ndarray::{Array2, Array3};

use super::{DataError, Month};

/// Dated T x N matrix of simple per-period returns with an availability
/// mask. Dates are contiguous at monthly spacing; entries where
/// `available` is false hold 0.0 and mean "not in the universe".
#[derive(Clone, Debug)]
pub struct ReturnsPanel {
    pub dates: Vec<Month>,
    pub assets: Vec<String>,
    pub returns: Array2<f64>,
    pub available: Array2<bool>,
}

impl ReturnsPanel {
    pub fn new(
        dates: Vec<Month>,
        assets: Vec<String>,
        returns: Array2<f64>,
        available: Array2<bool>,
    ) -> Result<Self, DataError> {
        let (t, n) = (dates.len(), assets.len());
        if returns.dim() != (t, n) || available.dim() != (t, n) {
            return Err(DataError::Internal(format!(
                "panel dims {:?}/{:?} vs {} dates x {} assets",
                returns.dim(),
                available.dim(),
                t,
                n
            )));
        }
        for w in dates.windows(2) {
            if w[1].diff(w[0]) != 1 {
                return Err(DataError::DateGap { after: w[0], before: w[1] });
            }
        }
        for ((i, j), &avail) in available.indexed_iter() {
            if avail {
                let r = returns[(i, j)];
                if !r.is_finite() {
                    return Err(DataError::NonFiniteReturn { date: dates[i], asset: assets[j].clone() });
                }
                if r <= -1.0 {
                    return Err(DataError::ImpossibleReturn {
                        date: dates[i],
                        asset: assets[j].clone(),
                        value: r,
                    });
                }
            }
        }
        Ok(ReturnsPanel { dates, assets, returns, available })
    }

    pub fn n_periods(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn date_index(&self, date: Month) -> Option<usize> {
        let first = *self.dates.first()?;
        let idx = date.diff(first);
        if idx < 0 || idx as usize >= self.dates.len() {
            None
        } else {
            Some(idx as usize)
        }
    }

    pub fn asset_index(&self, asset: &str) -> Option<usize> {
        self.assets.iter().position(|a| a == asset)
    }
}

/// Dated panel of market capitalizations, same layout as [`ReturnsPanel`].
#[derive(Clone, Debug)]
pub struct CapsPanel {
    pub dates: Vec<Month>,
    pub assets: Vec<String>,
    pub caps: Array2<f64>,
    pub available: Array2<bool>,
}

impl CapsPanel {
    pub fn date_index(&self, date: Month) -> Option<usize> {
        let first = *self.dates.first()?;
        let idx = date.diff(first);
        if idx < 0 || idx as usize >= self.dates.len() {
            None
        } else {
            Some(idx as usize)
        }
    }
}

/// Dated T x N x P array of firm characteristics. Starts raw (missing
/// entries flagged in `missing`), then moves through the fixed pipeline
/// lag -> impute -> rank-normalize; `lag_applied` and `normalized` record
/// how far along it is.
#[derive(Clone, Debug)]
pub struct CharacteristicsPanel {
    pub dates: Vec<Month>,
    pub assets: Vec<String>,
    pub names: Vec<String>,
    pub values: Array3<f64>,
    pub missing: Array3<bool>,
    /// Per-characteristic lag (periods) already applied, in `names` order.
    pub lag_applied: Option<Vec<usize>>,
    pub normalized: bool,
}

impl CharacteristicsPanel {
    pub fn n_periods(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn n_characteristics(&self) -> usize {
        self.names.len()
    }

    pub fn date_index(&self, date: Month) -> Option<usize> {
        let first = *self.dates.first()?;
        let idx = date.diff(first);
        if idx < 0 || idx as usize >= self.dates.len() {
            None
        } else {
            Some(idx as usize)
        }
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|&m| m)
    }
}
