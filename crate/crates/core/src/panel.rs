//! Daily price-bucket panels.
//!
//! Each trade is assigned to a bucket by its absolute price change against
//! a per-day reference price, `k = floor(|p - ref| / delta)`. Trades past
//! the last bucket are counted and dropped. Inside a bucket, a fine
//! sub-cell profile keeps the volume distribution that the state space
//! correlates from one day to the next.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Side, TapeRecord};

/// Absorbs binary representation error of decimal prices at bucket and
/// sub-cell boundaries (0.30 - 0.00 must land in cell 30, not 29).
const INDEX_GUARD: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ImbalanceMode {
    /// `buy - sell`.
    #[default]
    Difference,
    /// `sign(buy - sell) * sqrt(buy * sell)`.
    GeometricDeviation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketConfig {
    /// Bucket width in CNY.
    pub delta: f64,
    pub n_buckets: usize,
    /// Fine cells per bucket.
    pub n_subcells: usize,
    #[serde(default)]
    pub imbalance: ImbalanceMode,
}

impl Default for BucketConfig {
    fn default() -> Self {
        Self {
            delta: 0.5,
            n_buckets: 16,
            n_subcells: 50,
            imbalance: ImbalanceMode::Difference,
        }
    }
}

impl BucketConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::invalid("bucket width must be positive"));
        }
        if self.n_buckets == 0 || self.n_subcells == 0 {
            return Err(Error::invalid("bucket and sub-cell counts must be at least 1"));
        }
        Ok(())
    }

    /// Bucket and sub-cell of an absolute price change, `None` past the
    /// last bucket.
    pub fn locate(&self, change: f64) -> Option<(usize, usize)> {
        let k = (change / self.delta + INDEX_GUARD).floor();
        if !(k >= 0.0) || k >= self.n_buckets as f64 {
            return None;
        }
        let k = k as usize;
        let cell_width = self.delta / self.n_subcells as f64;
        let within = (change - k as f64 * self.delta).max(0.0);
        let cell = ((within / cell_width + INDEX_GUARD).floor() as usize).min(self.n_subcells - 1);
        Some((k, cell))
    }
}

/// How the per-trade reference price of a day is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ReferenceStrategy {
    /// Volume-weighted average price of the prior trading day.
    #[default]
    PriorDayVwap,
    /// Last printed price of the prior trading day.
    PriorDayClose,
}

/// Records of one trading day, in tape order.
#[derive(Debug, Clone)]
pub struct DayTrades<'a> {
    pub date: NaiveDate,
    pub trades: Vec<&'a TapeRecord>,
}

pub fn group_by_day(records: &[TapeRecord]) -> Vec<DayTrades<'_>> {
    let mut map: BTreeMap<NaiveDate, Vec<&TapeRecord>> = BTreeMap::new();
    for r in records {
        map.entry(r.date).or_default().push(r);
    }
    map.into_iter()
        .map(|(date, trades)| DayTrades { date, trades })
        .collect()
}

/// Volume-weighted price over all of a day's trades, `None` without volume.
pub fn day_vwap(trades: &[&TapeRecord]) -> Option<f64> {
    let vol: f64 = trades.iter().map(|t| t.volume as f64).sum();
    if vol <= 0.0 {
        return None;
    }
    Some(trades.iter().map(|t| t.notional()).sum::<f64>() / vol)
}

/// Reference price per day. The first day uses its own statistic; a day
/// without volume carries the previous reference forward.
pub fn reference_prices(
    days: &[DayTrades<'_>],
    strategy: ReferenceStrategy,
) -> Result<BTreeMap<NaiveDate, f64>> {
    if days.is_empty() {
        return Err(Error::NoRecords);
    }
    let stat = |d: &DayTrades<'_>| match strategy {
        ReferenceStrategy::PriorDayVwap => day_vwap(&d.trades),
        ReferenceStrategy::PriorDayClose => d.trades.last().map(|t| t.price),
    };
    let mut out = BTreeMap::new();
    let mut current = days
        .iter()
        .find_map(stat)
        .ok_or_else(|| Error::invalid("no day carries volume"))?;
    for (i, day) in days.iter().enumerate() {
        if i == 0 {
            if let Some(own) = stat(day) {
                current = own;
            }
        } else if let Some(prev) = stat(&days[i - 1]) {
            current = prev;
        }
        out.insert(day.date, current);
    }
    Ok(out)
}

/// Aggregated volumes of one trading day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyPanel {
    pub date: NaiveDate,
    pub ref_price: f64,
    pub buy_vol: Vec<f64>,
    pub sell_vol: Vec<f64>,
    pub imb_vol: Vec<f64>,
    /// Buy-side VWAP per bucket, 0 where the bucket saw no buys.
    pub buy_vwap: Vec<f64>,
    pub sell_vwap: Vec<f64>,
    pub fine_buy: Vec<Vec<f64>>,
    pub fine_sell: Vec<Vec<f64>>,
    /// Known-side volume beyond the last bucket.
    pub discarded_volume: f64,
    pub discarded_trades: usize,
    pub unknown_volume: f64,
    pub total_volume: f64,
}

impl DailyPanel {
    pub fn empty(date: NaiveDate, ref_price: f64, config: &BucketConfig) -> Self {
        let nb = config.n_buckets;
        Self {
            date,
            ref_price,
            buy_vol: vec![0.0; nb],
            sell_vol: vec![0.0; nb],
            imb_vol: vec![0.0; nb],
            buy_vwap: vec![0.0; nb],
            sell_vwap: vec![0.0; nb],
            fine_buy: vec![vec![0.0; config.n_subcells]; nb],
            fine_sell: vec![vec![0.0; config.n_subcells]; nb],
            discarded_volume: 0.0,
            discarded_trades: 0,
            unknown_volume: 0.0,
            total_volume: 0.0,
        }
    }

    pub fn n_buckets(&self) -> usize {
        self.buy_vol.len()
    }

    pub fn n_subcells(&self) -> usize {
        self.fine_buy.first().map_or(0, Vec::len)
    }

    pub fn buy_empty(&self, k: usize) -> bool {
        self.buy_vol[k] <= 0.0
    }

    pub fn sell_empty(&self, k: usize) -> bool {
        self.sell_vol[k] <= 0.0
    }

    pub fn bucketed_volume(&self) -> f64 {
        self.buy_vol.iter().chain(&self.sell_vol).sum()
    }

    fn accumulate(&mut self, trades: &[&TapeRecord], config: &BucketConfig) {
        let nb = config.n_buckets;
        let mut buy_notional = vec![0.0; nb];
        let mut sell_notional = vec![0.0; nb];
        for t in trades {
            let v = t.volume as f64;
            self.total_volume += v;
            if t.side == Side::Unknown {
                self.unknown_volume += v;
                continue;
            }
            let change = (t.price - self.ref_price).abs();
            let Some((k, cell)) = config.locate(change) else {
                self.discarded_volume += v;
                self.discarded_trades += 1;
                continue;
            };
            if t.side == Side::Buy {
                self.buy_vol[k] += v;
                self.fine_buy[k][cell] += v;
                buy_notional[k] += t.notional();
            } else {
                self.sell_vol[k] += v;
                self.fine_sell[k][cell] += v;
                sell_notional[k] += t.notional();
            }
        }
        for k in 0..nb {
            if self.buy_vol[k] > 0.0 {
                self.buy_vwap[k] = buy_notional[k] / self.buy_vol[k];
            }
            if self.sell_vol[k] > 0.0 {
                self.sell_vwap[k] = sell_notional[k] / self.sell_vol[k];
            }
            self.imb_vol[k] = imbalance(self.buy_vol[k], self.sell_vol[k], config.imbalance);
        }
    }
}

pub fn imbalance(buy: f64, sell: f64, mode: ImbalanceMode) -> f64 {
    match mode {
        ImbalanceMode::Difference => buy - sell,
        ImbalanceMode::GeometricDeviation => {
            let d = buy - sell;
            if d == 0.0 {
                0.0
            } else {
                d.signum() * (buy * sell).sqrt()
            }
        }
    }
}

/// Date-ordered panels sharing one bucket configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelSeries {
    pub panels: Vec<DailyPanel>,
    pub config: BucketConfig,
    pub discarded_trades: usize,
}

impl PanelSeries {
    pub fn new(panels: Vec<DailyPanel>, config: BucketConfig) -> Result<Self> {
        config.validate()?;
        for w in panels.windows(2) {
            if w[0].date >= w[1].date {
                return Err(Error::invalid(format!(
                    "panel dates not strictly increasing at {}",
                    w[1].date
                )));
            }
        }
        for p in &panels {
            if p.n_buckets() != config.n_buckets || p.n_subcells() != config.n_subcells {
                return Err(Error::ConfigMismatch(format!("panel {} shape", p.date)));
            }
        }
        let discarded_trades = panels.iter().map(|p| p.discarded_trades).sum();
        Ok(Self {
            panels,
            config,
            discarded_trades,
        })
    }

    pub fn len(&self) -> usize {
        self.panels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.panels.is_empty()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.panels.iter().map(|p| p.date).collect()
    }
}

/// Bucket a tape into daily panels using the prior-day VWAP reference.
pub fn build_panels(records: &[TapeRecord], config: &BucketConfig) -> Result<PanelSeries> {
    build_panels_with(records, config, ReferenceStrategy::PriorDayVwap, None)
}

/// Bucket a tape with an explicit reference strategy. When a trading
/// calendar is given, calendar days without trades become empty panels
/// carrying the previous reference price.
pub fn build_panels_with(
    records: &[TapeRecord],
    config: &BucketConfig,
    strategy: ReferenceStrategy,
    calendar: Option<&[NaiveDate]>,
) -> Result<PanelSeries> {
    config.validate()?;
    let days = group_by_day(records);
    if days.len() < 2 {
        return Err(Error::invalid("panels need trades on at least two days"));
    }
    let refs = reference_prices(&days, strategy)?;
    let by_date: BTreeMap<NaiveDate, &DayTrades<'_>> = days.iter().map(|d| (d.date, d)).collect();

    let dates: Vec<NaiveDate> = match calendar {
        Some(cal) => {
            let mut cal = cal.to_vec();
            for d in by_date.keys() {
                if cal.binary_search(d).is_err() {
                    return Err(Error::Misaligned(format!("trade date {d} not in calendar")));
                }
            }
            cal.dedup();
            cal
        }
        None => by_date.keys().copied().collect(),
    };

    // Calendar days without trades carry the reference the next traded
    // day would use: the statistic of the last traded day.
    let stat = |d: &DayTrades<'_>| match strategy {
        ReferenceStrategy::PriorDayVwap => day_vwap(&d.trades),
        ReferenceStrategy::PriorDayClose => d.trades.last().map(|t| t.price),
    };
    let mut panels = Vec::with_capacity(dates.len());
    let mut carry = *refs.values().next().expect("non-empty");
    for date in dates {
        match by_date.get(&date) {
            Some(day) => {
                let mut panel = DailyPanel::empty(date, refs[&date], config);
                panel.accumulate(&day.trades, config);
                carry = stat(day).unwrap_or(refs[&date]);
                panels.push(panel);
            }
            None => panels.push(DailyPanel::empty(date, carry, config)),
        }
    }
    PanelSeries::new(panels, *config)
}

/// Long-format panel export: one row per (date, bucket).
pub fn write_panels_csv<W: Write>(series: &PanelSeries, mut w: W) -> Result<()> {
    writeln!(w, "date,bucket,buy_vol,sell_vol,imb_vol,buy_vwap,sell_vwap")?;
    for p in &series.panels {
        for k in 0..p.n_buckets() {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                p.date, k, p.buy_vol[k], p.sell_vol[k], p.imb_vol[k], p.buy_vwap[k], p.sell_vwap[k]
            )?;
        }
    }
    Ok(())
}

/// Wide export of the fine sub-cell profiles.
pub fn write_fine_csv<W: Write>(series: &PanelSeries, mut w: W) -> Result<()> {
    let cells: Vec<String> = (0..series.config.n_subcells).map(|c| format!("c{c}")).collect();
    writeln!(w, "date,bucket,side,{}", cells.join(","))?;
    for p in &series.panels {
        for k in 0..p.n_buckets() {
            for (side, profile) in [("B", &p.fine_buy[k]), ("S", &p.fine_sell[k])] {
                let vals: Vec<String> = profile.iter().map(|v| v.to_string()).collect();
                writeln!(w, "{},{},{},{}", p.date, k, side, vals.join(","))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2010, 3, day).unwrap()
    }

    fn rec(day: u32, price: f64, side: Side, volume: u64) -> TapeRecord {
        TapeRecord {
            date: d(day),
            price,
            side,
            volume,
        }
    }

    #[test]
    fn prior_day_vwap_reference() {
        let recs = vec![
            rec(1, 10.0, Side::Buy, 100),
            rec(1, 12.0, Side::Sell, 300),
            rec(2, 11.0, Side::Buy, 50),
        ];
        let days = group_by_day(&recs);
        let refs = reference_prices(&days, ReferenceStrategy::PriorDayVwap).unwrap();
        assert_eq!(refs[&d(1)], 11.5);
        assert_eq!(refs[&d(2)], 11.5);
    }

    #[test]
    fn single_day_reference_is_own_vwap() {
        let recs = vec![rec(1, 10.0, Side::Buy, 100), rec(1, 11.0, Side::Buy, 100)];
        let days = group_by_day(&recs);
        let refs = reference_prices(&days, ReferenceStrategy::PriorDayVwap).unwrap();
        assert_eq!(refs[&d(1)], 10.5);
    }

    #[test]
    fn locate_floor_arithmetic() {
        let cfg = BucketConfig::default();
        let change: f64 = (10.3_f64 - 10.0).abs();
        assert_eq!(cfg.locate(change), Some((0, 30)));
        assert_eq!(cfg.locate(0.5), Some((1, 0)));
        assert_eq!(cfg.locate(7.999), Some((15, 49)));
        assert_eq!(cfg.locate(8.5), None);
        assert_eq!(cfg.locate(8.0), None);
    }

    fn two_day(trades: Vec<TapeRecord>) -> Vec<TapeRecord> {
        // Day 1 pins the reference at 10.0.
        let mut v = vec![rec(1, 10.0, Side::Buy, 10)];
        v.extend(trades);
        v
    }

    #[test]
    fn trade_lands_in_bucket_and_cell() {
        let recs = two_day(vec![rec(2, 10.3, Side::Buy, 200)]);
        let s = build_panels(&recs, &BucketConfig::default()).unwrap();
        let p = &s.panels[1];
        assert_eq!(p.ref_price, 10.0);
        assert_eq!(p.buy_vol[0], 200.0);
        assert_eq!(p.fine_buy[0][30], 200.0);
        assert_eq!(p.buy_vwap[0], 10.3);
        assert_eq!(p.imb_vol[0], 200.0);
    }

    #[test]
    fn far_trade_is_discarded() {
        let recs = two_day(vec![rec(2, 18.5, Side::Sell, 70)]);
        let s = build_panels(&recs, &BucketConfig::default()).unwrap();
        assert_eq!(s.panels[1].discarded_trades, 1);
        assert_eq!(s.panels[1].discarded_volume, 70.0);
        assert_eq!(s.discarded_trades, 1);
        assert_eq!(s.panels[1].bucketed_volume(), 0.0);
    }

    #[test]
    fn balanced_bucket_has_zero_imbalance() {
        let recs = two_day(vec![rec(2, 10.1, Side::Buy, 40), rec(2, 9.9, Side::Sell, 40)]);
        let s = build_panels(&recs, &BucketConfig::default()).unwrap();
        assert_eq!(s.panels[1].imb_vol[0], 0.0);
        assert!(s.panels[1].sell_empty(3));
        assert_eq!(s.panels[1].sell_vwap[3], 0.0);
    }

    #[test]
    fn unknown_side_excluded_from_both_sides() {
        let recs = two_day(vec![rec(2, 10.1, Side::Unknown, 40)]);
        let s = build_panels(&recs, &BucketConfig::default()).unwrap();
        assert_eq!(s.panels[1].unknown_volume, 40.0);
        assert_eq!(s.panels[1].bucketed_volume(), 0.0);
    }

    #[test]
    fn geometric_imbalance_mode() {
        assert_eq!(imbalance(4.0, 1.0, ImbalanceMode::GeometricDeviation), 2.0);
        assert_eq!(imbalance(1.0, 4.0, ImbalanceMode::GeometricDeviation), -2.0);
        assert_eq!(imbalance(3.0, 3.0, ImbalanceMode::GeometricDeviation), 0.0);
    }

    #[test]
    fn needs_two_days() {
        let recs = vec![rec(1, 10.0, Side::Buy, 10)];
        assert!(build_panels(&recs, &BucketConfig::default()).is_err());
    }

    #[test]
    fn calendar_fills_missing_days() {
        let recs = vec![rec(1, 10.0, Side::Buy, 10), rec(3, 10.2, Side::Sell, 5)];
        let cal = vec![d(1), d(2), d(3)];
        let s = build_panels_with(
            &recs,
            &BucketConfig::default(),
            ReferenceStrategy::PriorDayVwap,
            Some(&cal),
        )
        .unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.panels[1].total_volume, 0.0);
        assert_eq!(s.panels[1].ref_price, 10.0);
        assert_eq!(s.panels[2].ref_price, 10.0);
        assert_eq!(s.panels[2].sell_vol[0], 5.0);
    }
}
