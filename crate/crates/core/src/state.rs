//! Interday correlation state space.
//!
//! Row `t` holds, for every price bucket, the Pearson correlation between
//! the fine sub-cell volume profiles of day `t` and day `t + 1`.

use std::io::{BufRead, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{DailyPanel, PanelSeries};
use crate::stats::pearson;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VolumeMode {
    Buy,
    Sell,
    Imbalance,
}

impl VolumeMode {
    pub fn name(self) -> &'static str {
        match self {
            VolumeMode::Buy => "buy",
            VolumeMode::Sell => "sell",
            VolumeMode::Imbalance => "imbalance",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "buy" | "b" => Ok(VolumeMode::Buy),
            "sell" | "s" => Ok(VolumeMode::Sell),
            "imbalance" | "imb" | "i" => Ok(VolumeMode::Imbalance),
            other => Err(Error::invalid(format!("unknown volume mode '{other}'"))),
        }
    }
}

fn profile(panel: &DailyPanel, k: usize, mode: VolumeMode) -> Vec<f64> {
    match mode {
        VolumeMode::Buy => panel.fine_buy[k].clone(),
        VolumeMode::Sell => panel.fine_sell[k].clone(),
        VolumeMode::Imbalance => panel.fine_buy[k]
            .iter()
            .zip(&panel.fine_sell[k])
            .map(|(b, s)| b - s)
            .collect(),
    }
}

/// Per-bucket correlation of two days' fine profiles. Buckets where either
/// profile is constant get 0.
pub fn corr_vector(today: &DailyPanel, next: &DailyPanel, mode: VolumeMode) -> Result<Vec<f64>> {
    if today.n_buckets() != next.n_buckets() || today.n_subcells() != next.n_subcells() {
        return Err(Error::ConfigMismatch(format!(
            "panels {} and {} differ in bucket layout",
            today.date, next.date
        )));
    }
    Ok((0..today.n_buckets())
        .map(|k| pearson(&profile(today, k, mode), &profile(next, k, mode)).unwrap_or(0.0))
        .collect())
}

/// T x n matrix of interday correlation vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMatrix {
    pub mode: VolumeMode,
    /// First day of each day pair.
    pub dates: Vec<NaiveDate>,
    pub values: Vec<Vec<f64>>,
    /// Entries set to 0 because a profile had zero variance.
    pub degenerate_entries: usize,
}

impl StateMatrix {
    pub fn new(mode: VolumeMode, dates: Vec<NaiveDate>, values: Vec<Vec<f64>>) -> Result<Self> {
        if dates.len() != values.len() {
            return Err(Error::shape(format!(
                "{} dates for {} state rows",
                dates.len(),
                values.len()
            )));
        }
        let width = values.first().map_or(0, Vec::len);
        for (t, row) in values.iter().enumerate() {
            if row.len() != width {
                return Err(Error::shape(format!("state row {t} has {} entries", row.len())));
            }
            if let Some(v) = row.iter().find(|v| !(v.is_finite() && v.abs() <= 1.0 + 1e-12)) {
                return Err(Error::invalid(format!("state entry {v} outside [-1, 1] in row {t}")));
            }
        }
        Ok(Self {
            mode,
            dates,
            values,
            degenerate_entries: 0,
        })
    }

    pub fn rows(&self) -> usize {
        self.values.len()
    }

    pub fn cols(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }
}

pub fn state_matrix(series: &PanelSeries, mode: VolumeMode) -> Result<StateMatrix> {
    if series.len() < 2 {
        return Err(Error::invalid("state space needs at least two days"));
    }
    let mut values = Vec::with_capacity(series.len() - 1);
    let mut degenerate = 0;
    for pair in series.panels.windows(2) {
        let row = corr_vector(&pair[0], &pair[1], mode)?;
        for k in 0..row.len() {
            if row[k] == 0.0 {
                let a = profile(&pair[0], k, mode);
                let b = profile(&pair[1], k, mode);
                if pearson(&a, &b).is_none() {
                    degenerate += 1;
                }
            }
        }
        values.push(row);
    }
    let dates = series.panels[..series.len() - 1].iter().map(|p| p.date).collect();
    let mut m = StateMatrix::new(mode, dates, values)?;
    m.degenerate_entries = degenerate;
    Ok(m)
}

/// Predicted correlation of two noise-contaminated series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attenuation {
    /// Second-order expansion `rho * (1 - (nsr1 + nsr2) / 2)`.
    pub approx: f64,
    /// `rho / sqrt((1 + nsr1) (1 + nsr2))`.
    pub exact: f64,
}

/// Attenuation of a true correlation `rho` by independent noise with the
/// given noise-to-signal variance ratios.
pub fn attenuation(rho: f64, nsr1: f64, nsr2: f64) -> Result<Attenuation> {
    if !(rho.abs() <= 1.0) {
        return Err(Error::invalid(format!("correlation {rho} outside [-1, 1]")));
    }
    if !(nsr1 >= 0.0 && nsr2 >= 0.0) {
        return Err(Error::invalid("noise-to-signal ratios must be nonnegative"));
    }
    Ok(Attenuation {
        approx: rho * (1.0 - 0.5 * (nsr1 + nsr2)),
        exact: rho / ((1.0 + nsr1) * (1.0 + nsr2)).sqrt(),
    })
}

pub fn write_state_csv<W: Write>(m: &StateMatrix, mut w: W) -> Result<()> {
    let cols: Vec<String> = (0..m.cols()).map(|k| format!("x{k}")).collect();
    writeln!(w, "date,mode,{}", cols.join(","))?;
    for (date, row) in m.dates.iter().zip(&m.values) {
        let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{},{}", date, m.mode.name(), vals.join(","))?;
    }
    Ok(())
}

/// Read a state matrix written by [`write_state_csv`]. Lines starting with
/// `#` are provenance comments.
pub fn read_state_csv<R: BufRead>(r: R) -> Result<StateMatrix> {
    let mut mode = None;
    let mut dates = Vec::new();
    let mut values = Vec::new();
    let mut seen_header = false;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !seen_header {
            seen_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            return Err(Error::invalid(format!("state line {}: too few fields", i + 1)));
        }
        let date = NaiveDate::parse_from_str(fields[0], "%Y-%m-%d")
            .map_err(|_| Error::invalid(format!("state line {}: bad date", i + 1)))?;
        let m = VolumeMode::parse(fields[1])?;
        if *mode.get_or_insert(m) != m {
            return Err(Error::invalid("mixed modes in one state file"));
        }
        let row = fields[2..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::invalid(format!("state line {}: bad value '{f}'", i + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        dates.push(date);
        values.push(row);
    }
    StateMatrix::new(mode.unwrap_or(VolumeMode::Imbalance), dates, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::BucketConfig;

    fn panel_with(day: u32, profile: &[f64]) -> DailyPanel {
        let cfg = BucketConfig {
            n_buckets: 2,
            n_subcells: profile.len(),
            ..BucketConfig::default()
        };
        let mut p = DailyPanel::empty(NaiveDate::from_ymd_opt(2010, 1, day).unwrap(), 10.0, &cfg);
        p.fine_buy[0] = profile.to_vec();
        p.buy_vol[0] = profile.iter().sum();
        p
    }

    #[test]
    fn identical_profiles_correlate_perfectly() {
        let a = panel_with(4, &[1.0, 5.0, 2.0, 0.0]);
        let b = panel_with(5, &[1.0, 5.0, 2.0, 0.0]);
        let v = corr_vector(&a, &b, VolumeMode::Buy).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-15);
        assert_eq!(v[1], 0.0);
    }

    #[test]
    fn zero_profile_gives_zero() {
        let a = panel_with(4, &[1.0, 5.0, 2.0, 0.0]);
        let b = panel_with(5, &[0.0; 4]);
        assert_eq!(corr_vector(&a, &b, VolumeMode::Buy).unwrap()[0], 0.0);
    }

    #[test]
    fn mismatched_layout_is_an_error() {
        let a = panel_with(4, &[1.0, 5.0, 2.0, 0.0]);
        let b = panel_with(5, &[1.0, 5.0, 2.0]);
        assert!(matches!(
            corr_vector(&a, &b, VolumeMode::Buy),
            Err(Error::ConfigMismatch(_))
        ));
    }

    #[test]
    fn attenuation_arithmetic() {
        let a = attenuation(0.8, 0.0, 0.0).unwrap();
        assert_eq!(a.approx, 0.8);
        assert_eq!(a.exact, 0.8);
        let b = attenuation(0.5, 0.1, 0.1).unwrap();
        assert!((b.approx - 0.45).abs() < 1e-15);
        assert!((b.exact - 0.5 / 1.1).abs() < 1e-15);
        assert!(attenuation(1.5, 0.0, 0.0).is_err());
        assert!(attenuation(0.5, -0.1, 0.0).is_err());
    }

    #[test]
    fn state_rows_reject_out_of_range() {
        let d = NaiveDate::from_ymd_opt(2010, 1, 4).unwrap();
        assert!(StateMatrix::new(VolumeMode::Buy, vec![d], vec![vec![1.5]]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let d0 = NaiveDate::from_ymd_opt(2010, 1, 4).unwrap();
        let d1 = NaiveDate::from_ymd_opt(2010, 1, 5).unwrap();
        let m = StateMatrix::new(
            VolumeMode::Sell,
            vec![d0, d1],
            vec![vec![0.1, -0.25], vec![1.0, 0.0]],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_state_csv(&m, &mut buf).unwrap();
        let back = read_state_csv(buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }
}
