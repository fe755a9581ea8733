//! Characteristic preprocessing. Pipeline order is fixed:
//! lag -> impute -> rank-normalize.

use ndarray::Array3;

use super::panel::CharacteristicsPanel;
use super::{DataError, LagSchedule};

/// Replaces each characteristic value with the raw value `lag` periods
/// earlier, where `lag` comes from the characteristic's frequency tag.
/// Leading periods that lack lagged data are trimmed, so the output panel
/// starts `max_lag` periods after the input.
pub fn apply_lag_schedule(
    raw: &CharacteristicsPanel,
    schedule: &LagSchedule,
) -> Result<CharacteristicsPanel, DataError> {
    let lags: Vec<usize> =
        raw.names.iter().map(|n| schedule.lag_of(n)).collect::<Result<_, _>>()?;
    let max_lag = lags.iter().copied().max().unwrap_or(0);
    let t_raw = raw.n_periods();
    if t_raw <= max_lag {
        return Err(DataError::InsufficientHistory { required: max_lag + 1, available: t_raw });
    }
    let t_out = t_raw - max_lag;
    let (n, p) = (raw.n_assets(), raw.n_characteristics());
    let mut values = Array3::zeros((t_out, n, p));
    let mut missing = Array3::from_elem((t_out, n, p), true);
    for t in 0..t_out {
        for (k, &lag) in lags.iter().enumerate() {
            let src = t + max_lag - lag;
            for j in 0..n {
                values[(t, j, k)] = raw.values[(src, j, k)];
                missing[(t, j, k)] = raw.missing[(src, j, k)];
            }
        }
    }
    Ok(CharacteristicsPanel {
        dates: raw.dates[max_lag..].to_vec(),
        assets: raw.assets.clone(),
        names: raw.names.clone(),
        values,
        missing,
        lag_applied: Some(lags),
        normalized: false,
    })
}

/// Fills every missing entry at (t, ., p) with the median of the available
/// entries in that cross-section; an entirely missing cross-section becomes
/// zeros.
pub fn impute_cross_sectional_median(panel: &CharacteristicsPanel) -> CharacteristicsPanel {
    let mut out = panel.clone();
    let (t_len, n, p) = out.values.dim();
    for t in 0..t_len {
        for k in 0..p {
            let mut present: Vec<f64> =
                (0..n).filter(|&j| !out.missing[(t, j, k)]).map(|j| out.values[(t, j, k)]).collect();
            let fill = if present.is_empty() {
                0.0
            } else {
                present.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let m = present.len();
                if m % 2 == 1 {
                    present[m / 2]
                } else {
                    0.5 * (present[m / 2 - 1] + present[m / 2])
                }
            };
            for j in 0..n {
                if out.missing[(t, j, k)] {
                    out.values[(t, j, k)] = fill;
                    out.missing[(t, j, k)] = false;
                }
            }
        }
    }
    out
}

/// In-place rank normalization of one cross-section: the value with 1-based
/// rank `k` (average rank for ties) maps to `2k/(n+1) - 1`, placing every
/// output strictly inside (-1, 1).
pub(crate) fn rank_normalize_slice(values: &mut [f64]) {
    let n = values.len();
    if n == 0 {
        return;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b)));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share the average.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    for (v, r) in values.iter_mut().zip(&ranks) {
        *v = 2.0 * r / (n as f64 + 1.0) - 1.0;
    }
}

/// Rank-normalizes every (date, characteristic) cross-section. Requires an
/// imputed panel (no missing entries remain).
pub fn rank_normalize(panel: &CharacteristicsPanel) -> Result<CharacteristicsPanel, DataError> {
    if panel.has_missing() {
        return Err(DataError::Internal(
            "rank_normalize requires an imputed panel with no missing entries".into(),
        ));
    }
    let mut out = panel.clone();
    let (t_len, n, p) = out.values.dim();
    let mut buf = vec![0.0; n];
    for t in 0..t_len {
        for k in 0..p {
            for j in 0..n {
                buf[j] = out.values[(t, j, k)];
            }
            rank_normalize_slice(&mut buf);
            for j in 0..n {
                out.values[(t, j, k)] = buf[j];
            }
        }
    }
    out.normalized = true;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Frequency, Month};
    use ndarray::Array3;

    fn raw_panel(t: usize, names: Vec<&str>, fill: impl Fn(usize, usize, usize) -> (f64, bool)) -> CharacteristicsPanel {
        let assets = vec!["A".to_string(), "B".to_string(), "C".to_string()];
        let names: Vec<String> = names.into_iter().map(String::from).collect();
        let (n, p) = (assets.len(), names.len());
        let mut values = Array3::zeros((t, n, p));
        let mut missing = Array3::from_elem((t, n, p), false);
        for i in 0..t {
            for j in 0..n {
                for k in 0..p {
                    let (v, m) = fill(i, j, k);
                    values[(i, j, k)] = v;
                    missing[(i, j, k)] = m;
                }
            }
        }
        let start: Month = "2020-01".parse().unwrap();
        CharacteristicsPanel {
            dates: (0..t as i32).map(|i| start.add(i)).collect(),
            assets,
            names,
            values,
            missing,
            lag_applied: None,
            normalized: false,
        }
    }

    #[test]
    fn monthly_lag_shifts_by_one() {
        let raw = raw_panel(3, vec!["x"], |t, _, _| (t as f64 + 0.5, false));
        let schedule = LagSchedule::uniform(&raw.names, Frequency::Monthly);
        let lagged = apply_lag_schedule(&raw, &schedule).unwrap();
        // Raw value 0.5 at 2020-01 appears at 2020-02.
        assert_eq!(lagged.dates[0].to_string(), "2020-02");
        assert_eq!(lagged.values[(0, 0, 0)], 0.5);
        assert_eq!(lagged.lag_applied, Some(vec![1]));
    }

    #[test]
    fn annual_lag_shifts_by_six() {
        let raw = raw_panel(8, vec!["x"], |t, _, _| (t as f64, false));
        let schedule = LagSchedule::uniform(&raw.names, Frequency::Annual);
        let lagged = apply_lag_schedule(&raw, &schedule).unwrap();
        // Raw value at 2020-01 (t=0) appears at 2020-07.
        assert_eq!(lagged.dates[0].to_string(), "2020-07");
        assert_eq!(lagged.values[(0, 0, 0)], 0.0);
        assert_eq!(lagged.values[(1, 0, 0)], 1.0);
    }

    #[test]
    fn annual_lag_needs_seven_periods() {
        let raw = raw_panel(6, vec!["x"], |t, _, _| (t as f64, false));
        let schedule = LagSchedule::uniform(&raw.names, Frequency::Annual);
        match apply_lag_schedule(&raw, &schedule) {
            Err(DataError::InsufficientHistory { required, available }) => {
                assert_eq!(required, 7);
                assert_eq!(available, 6);
            }
            other => panic!("expected InsufficientHistory, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn mixed_lags_align_to_longest() {
        let raw = raw_panel(8, vec!["m", "q"], |t, _, k| ((t * 10 + k) as f64, false));
        let mut schedule = LagSchedule::uniform(&raw.names, Frequency::Monthly);
        schedule.tags.insert("q".into(), Frequency::Quarterly);
        let lagged = apply_lag_schedule(&raw, &schedule).unwrap();
        // max_lag = 4 -> output starts at 2020-05.
        assert_eq!(lagged.dates[0].to_string(), "2020-05");
        // monthly char at out t=0 comes from raw t=3; quarterly from raw t=0.
        assert_eq!(lagged.values[(0, 0, 0)], 30.0);
        assert_eq!(lagged.values[(0, 0, 1)], 1.0);
    }

    #[test]
    fn median_imputation() {
        let raw = raw_panel(1, vec!["x"], |_, j, _| match j {
            0 => (1.0, false),
            1 => (0.0, true),
            _ => (3.0, false),
        });
        let imputed = impute_cross_sectional_median(&raw);
        assert_eq!(imputed.values[(0, 1, 0)], 2.0);
        assert!(!imputed.has_missing());
    }

    #[test]
    fn imputation_is_identity_without_missing() {
        let raw = raw_panel(2, vec!["x", "y"], |t, j, k| ((t + j + k) as f64, false));
        let imputed = impute_cross_sectional_median(&raw);
        assert_eq!(imputed.values, raw.values);
    }

    #[test]
    fn all_missing_cross_section_becomes_zero() {
        let raw = raw_panel(1, vec!["x"], |_, _, _| (9.0, true));
        let imputed = impute_cross_sectional_median(&raw);
        assert!(imputed.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rank_normalize_three_values() {
        let mut v = vec![10.0, 20.0, 30.0];
        rank_normalize_slice(&mut v);
        assert_eq!(v, vec![-0.5, 0.0, 0.5]);
    }

    #[test]
    fn rank_normalize_ties_share_average_rank() {
        let mut v = vec![5.0, 5.0];
        rank_normalize_slice(&mut v);
        assert_eq!(v, vec![0.0, 0.0]);
    }

    #[test]
    fn rank_normalize_single_value_maps_to_zero() {
        let mut v = vec![42.0];
        rank_normalize_slice(&mut v);
        assert_eq!(v, vec![0.0]);
    }

    #[test]
    fn rank_normalize_requires_imputation() {
        let raw = raw_panel(1, vec!["x"], |_, j, _| (j as f64, j == 1));
        assert!(rank_normalize(&raw).is_err());
    }

    #[test]
    fn rank_normalize_idempotent_and_monotone_invariant() {
        let raw = raw_panel(2, vec!["x"], |t, j, _| (((t + 1) * (j + 2)) as f64, false));
        let once = rank_normalize(&raw).unwrap();
        let twice = rank_normalize(&once).unwrap();
        assert_eq!(once.values, twice.values);
        // Strictly increasing transform of the raw values gives identical output.
        let mut transformed = raw.clone();
        for v in transformed.values.iter_mut() {
            *v = v.exp() + 3.0 * *v;
        }
        let from_transformed = rank_normalize(&transformed).unwrap();
        assert_eq!(once.values, from_transformed.values);
    }
}
