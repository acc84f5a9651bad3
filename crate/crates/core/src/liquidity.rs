//! Per-bucket trading cost, a dynamic Amihud illiquidity measure and the
//! windowed event-study test built on it.

use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{IndexName, IndexSeries};
use crate::nn::{init_net, train, Activation, FeatureScaler, LayerSpec, NetSpec, Scaler, Shape};
use crate::panel::{DailyPanel, PanelSeries};
use crate::stats::{fisher_z_compare, mean, pearson, spearman, spearman_permutation_p};

/// Trading cost of one day pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostVector {
    pub pi: Vec<f64>,
    /// Buckets where a prior-day side had no trades, so its term is 0.
    pub no_quote: Vec<bool>,
}

/// `pi[i] = ask(t-1, i) * buys(t, i) - bid(t-1, i) * sells(t, i)` with the
/// prior day's buy- and sell-side VWAPs standing in for ask and bid.
pub fn trading_cost(prev: &DailyPanel, cur: &DailyPanel) -> Result<CostVector> {
    if prev.date >= cur.date {
        return Err(Error::invalid(format!("panels {} and {} are not in order", prev.date, cur.date)));
    }
    if prev.n_buckets() != cur.n_buckets() {
        return Err(Error::ConfigMismatch("panels differ in bucket count".into()));
    }
    let n = cur.n_buckets();
    let mut pi = vec![0.0; n];
    let mut no_quote = vec![false; n];
    for i in 0..n {
        let mut v = 0.0;
        if prev.buy_empty(i) {
            no_quote[i] = true;
        } else {
            v += prev.buy_vwap[i] * cur.buy_vol[i];
        }
        if prev.sell_empty(i) {
            no_quote[i] = true;
        } else {
            v -= prev.sell_vwap[i] * cur.sell_vol[i];
        }
        pi[i] = v;
    }
    Ok(CostVector { pi, no_quote })
}

/// `lambda[i] = |pi[i]| / ((buys(t, i) + sells(t-1, i)) / 2)`; a zero
/// denominator gives 0 and sets the illiquid flag.
pub fn amihud_lambda(pi: &[f64], prev: &DailyPanel, cur: &DailyPanel) -> (Vec<f64>, Vec<bool>) {
    let mut illiquid = vec![false; pi.len()];
    let lambda = pi
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let denom = 0.5 * (cur.buy_vol[i] + prev.sell_vol[i]);
            if denom > 0.0 {
                p.abs() / denom
            } else {
                illiquid[i] = true;
                0.0
            }
        })
        .collect();
    (lambda, illiquid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSeries {
    /// Later day of each pair.
    pub dates: Vec<NaiveDate>,
    pub pi: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    /// Mean of `lambda` over the buckets where it is defined; 0 if none.
    pub lambda_avg: Vec<f64>,
    pub illiquid: Vec<Vec<bool>>,
    pub no_quote: Vec<Vec<bool>>,
}

impl CostSeries {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

pub fn cost_series(series: &PanelSeries) -> Result<CostSeries> {
    if series.len() < 2 {
        return Err(Error::invalid("cost series needs at least two days"));
    }
    let rows: Vec<(CostVector, Vec<f64>, Vec<bool>)> = series
        .panels
        .par_windows(2)
        .map(|w| {
            let c = trading_cost(&w[0], &w[1])?;
            let (l, flags) = amihud_lambda(&c.pi, &w[0], &w[1]);
            Ok((c, l, flags))
        })
        .collect::<Result<_>>()?;
    let mut out = CostSeries {
        dates: series.panels[1..].iter().map(|p| p.date).collect(),
        pi: Vec::with_capacity(rows.len()),
        lambda: Vec::with_capacity(rows.len()),
        lambda_avg: Vec::with_capacity(rows.len()),
        illiquid: Vec::with_capacity(rows.len()),
        no_quote: Vec::with_capacity(rows.len()),
    };
    for (c, l, flags) in rows {
        let defined: Vec<f64> = l.iter().zip(&flags).filter(|(_, f)| !**f).map(|(v, _)| *v).collect();
        out.lambda_avg.push(mean(&defined));
        out.pi.push(c.pi);
        out.no_quote.push(c.no_quote);
        out.lambda.push(l);
        out.illiquid.push(flags);
    }
    Ok(out)
}

/// Long format `date,bucket,pi,lambda`.
pub fn write_lambda_csv<W: Write>(c: &CostSeries, mut w: W) -> Result<()> {
    writeln!(w, "date,bucket,pi,lambda")?;
    for (t, d) in c.dates.iter().enumerate() {
        for (k, (p, l)) in c.pi[t].iter().zip(&c.lambda[t]).enumerate() {
            writeln!(w, "{d},{k},{p},{l}")?;
        }
    }
    Ok(())
}

pub fn write_lambda_avg_csv<W: Write>(c: &CostSeries, mut w: W) -> Result<()> {
    writeln!(w, "date,lambda_avg")?;
    for (d, v) in c.dates.iter().zip(&c.lambda_avg) {
        writeln!(w, "{d},{v}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventStudyConfig {
    pub period_length: usize,
    pub n_periods: usize,
    /// Adjacent periods used for training.
    pub training_periods: (usize, usize),
    /// Day ranges `[start, end)` into the cost series.
    pub prediction_windows: Vec<(usize, usize)>,
    pub rounds: usize,
    pub learning_rate: f64,
    pub permutation_draws: usize,
}

impl Default for EventStudyConfig {
    fn default() -> Self {
        Self {
            period_length: 60,
            n_periods: 8,
            training_periods: (0, 1),
            prediction_windows: (0..5).map(|i| (120 + 60 * i, 240 + 60 * i)).collect(),
            rounds: 300,
            learning_rate: 0.05,
            permutation_draws: 10_000,
        }
    }
}

impl EventStudyConfig {
    pub fn sample_len(&self) -> usize {
        self.period_length * self.n_periods
    }

    pub fn training_range(&self) -> (usize, usize) {
        let (a, b) = self.training_periods;
        (a * self.period_length, (b + 1) * self.period_length)
    }

    pub fn validate(&self, available: usize) -> Result<()> {
        let n = self.sample_len();
        if self.period_length == 0 || self.n_periods == 0 {
            return Err(Error::invalid("empty event-study sample"));
        }
        if n > available {
            return Err(Error::invalid(format!("sample of {n} days exceeds the {available} available")));
        }
        let (a, b) = self.training_periods;
        if b != a + 1 || b >= self.n_periods {
            return Err(Error::invalid("training periods must be two adjacent periods inside the sample"));
        }
        for &(s, e) in &self.prediction_windows {
            if s >= e || e > n {
                return Err(Error::invalid(format!("prediction window [{s}, {e}) outside the sample")));
            }
        }
        if self.rounds == 0 {
            return Err(Error::invalid("training needs at least one round"));
        }
        Ok(())
    }
}

/// Row network used on daily `1 x n` lambda images.
pub fn event_net(n_buckets: usize, activation: Activation, seed: u64) -> Result<NetSpec> {
    let mut spec = NetSpec {
        input: Shape::Image { c: 1, h: 1, w: n_buckets },
        layers: vec![
            LayerSpec::Conv2D { kh: 1, kw: 3, channels: 8 },
            LayerSpec::Pool { ph: 1, pw: 2 },
            LayerSpec::Flatten,
        ],
        activation,
        seed,
    };
    let flat = spec.shapes()?.last().copied().map_or(0, Shape::size);
    spec.layers.push(LayerSpec::Dense { input: flat, output: 8 });
    spec.layers.push(LayerSpec::Dense { input: 8, output: 1 });
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub start: usize,
    pub end: usize,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    /// `None` when the correlation is undefined (reported as NA).
    pub p_pearson: Option<f64>,
    pub p_spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub index: IndexName,
    pub reference_pearson: Option<f64>,
    pub reference_spearman: Option<f64>,
    pub reference_days: usize,
    pub seeds: Vec<u64>,
    pub windows: Vec<WindowResult>,
}

impl HypothesisReport {
    /// Windows whose Pearson test rejects at level `alpha`.
    pub fn rejections(&self, alpha: f64) -> usize {
        self.windows
            .iter()
            .filter(|w| w.p_pearson.is_some_and(|p| p < alpha))
            .count()
    }
}

/// Train the row network on the training periods' lambda rows labeled by
/// the month's index value, predict every prediction window (averaging
/// over seeds) and test each window's prediction-index correlation
/// against the full-sample correlation of the daily mean lambda with the
/// index.
pub fn event_study(
    costs: &CostSeries,
    index: &IndexSeries,
    config: &EventStudyConfig,
    activation: Activation,
    seeds: &[u64],
) -> Result<HypothesisReport> {
    config.validate(costs.len())?;
    if seeds.is_empty() {
        return Err(Error::invalid("event study needs at least one seed"));
    }
    let n = config.sample_len();
    let dates = &costs.dates[..n];
    let target = index.daily(dates)?;
    let rows = &costs.lambda[..n];
    let (ts, te) = config.training_range();
    let scaler = FeatureScaler::fit(&rows[ts..te]);
    let inputs: Vec<Vec<f64>> = rows.iter().map(|r| scaler.transform(r)).collect();
    let tscale = Scaler::fit(&target[ts..te]);
    let train_y: Vec<f64> = target[ts..te].iter().map(|v| tscale.forward(*v)).collect();
    let n_buckets = rows.first().map_or(0, Vec::len);

    let per_seed: Vec<Vec<f64>> = seeds
        .par_iter()
        .map(|&seed| {
            let net = init_net(&event_net(n_buckets, activation, seed)?)?;
            let net = train(&net, &inputs[ts..te], &train_y, config.rounds, config.learning_rate)?;
            net.predict_batch(&inputs)
        })
        .collect::<Result<_>>()?;
    let preds: Vec<f64> = (0..n)
        .map(|t| per_seed.iter().map(|p| p[t]).sum::<f64>() / per_seed.len() as f64)
        .collect();

    let avg = &costs.lambda_avg[..n];
    let ref_p = pearson(avg, &target);
    let ref_s = spearman(avg, &target);
    let windows = config
        .prediction_windows
        .iter()
        .enumerate()
        .map(|(w, &(s, e))| {
            let p = &preds[s..e];
            let y = &target[s..e];
            let r = pearson(p, y);
            let rho = spearman(p, y);
            let p_pearson = match (r, ref_p) {
                (Some(r), Some(r0)) => fisher_z_compare(r, e - s, r0, n),
                _ => None,
            };
            let p_spearman = match (rho, ref_s) {
                (Some(_), Some(r0)) => {
                    spearman_permutation_p(p, y, r0, config.permutation_draws, seeds[0] ^ (w as u64 + 1))
                }
                _ => None,
            };
            WindowResult { start: s, end: e, pearson: r, spearman: rho, p_pearson, p_spearman }
        })
        .collect();
    Ok(HypothesisReport {
        index: index.name,
        reference_pearson: ref_p,
        reference_spearman: ref_s,
        reference_days: n,
        seeds: seeds.to_vec(),
        windows,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

/// One row per window: `index,window,r,rho,p_pearson,p_spearman`.
pub fn write_report_csv<W: Write>(reports: &[HypothesisReport], mut w: W) -> Result<()> {
    writeln!(w, "index,window,pearson,spearman,p_pearson,p_spearman")?;
    for r in reports {
        for win in &r.windows {
            writeln!(
                w,
                "{},{}-{},{},{},{},{}",
                r.index.name(),
                win.start,
                win.end,
                fmt_opt(win.pearson),
                fmt_opt(win.spearman),
                fmt_opt(win.p_pearson),
                fmt_opt(win.p_spearman)
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::BucketConfig;

    fn panel(day: u32) -> DailyPanel {
        let cfg = BucketConfig { n_buckets: 2, n_subcells: 2, ..BucketConfig::default() };
        DailyPanel::empty(NaiveDate::from_ymd_opt(2010, 5, day).unwrap(), 10.0, &cfg)
    }

    #[test]
    fn constant_spread_cost() {
        let mut a = panel(5);
        let mut b = panel(6);
        a.buy_vol[0] = 1000.0;
        a.buy_vwap[0] = 10.02;
        a.sell_vol[0] = 1000.0;
        a.sell_vwap[0] = 10.00;
        b.buy_vol[0] = 1000.0;
        b.sell_vol[0] = 1000.0;
        let c = trading_cost(&a, &b).unwrap();
        assert!((c.pi[0] - 20.0).abs() < 1e-9);
        let (l, flags) = amihud_lambda(&c.pi, &a, &b);
        assert!((l[0] - 0.02).abs() < 1e-12);
        assert!(flags[1] && l[1] == 0.0);
    }

    #[test]
    fn falling_prices_give_negative_cost() {
        let mut a = panel(5);
        let mut b = panel(6);
        a.buy_vol[0] = 1.0;
        a.buy_vwap[0] = 10.02;
        a.sell_vol[0] = 1.0;
        a.sell_vwap[0] = 10.50;
        b.buy_vol[0] = 100.0;
        b.sell_vol[0] = 100.0;
        let c = trading_cost(&a, &b).unwrap();
        assert!((c.pi[0] + 48.0).abs() < 1e-9);
    }

    #[test]
    fn zero_volume_zero_cost() {
        let c = trading_cost(&panel(5), &panel(6)).unwrap();
        assert_eq!(c.pi, vec![0.0, 0.0]);
    }

    #[test]
    fn out_of_order_rejected() {
        assert!(trading_cost(&panel(6), &panel(5)).is_err());
    }

    #[test]
    fn default_windows_fit_the_sample() {
        let c = EventStudyConfig::default();
        c.validate(484).unwrap();
        assert_eq!(c.prediction_windows[0], (120, 240));
        assert_eq!(c.prediction_windows[4], (360, 480));
        assert!(c.validate(479).is_err());
    }
}
