//! Backcasting monthly indexes from operator-regression residuals.
//!
//! Three protocols: a shallow net on four monthly residual moments with
//! leave-one-month-out evaluation, a ten-layer dense net trained on one
//! trader's daily residual rows and applied to another's, and a small CNN
//! on per-month residual images.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dual::RegressionOutput;
use crate::error::{Error, Result};
use crate::index::{IndexName, IndexSeries, Month};
use crate::nn::{init_net, train, Activation, FeatureScaler, NetSpec, Scaler, TrainedNet};
use crate::stats::{mean, pearson, student_dispersion};

/// Pooled values below this count make a month's moments low-sample.
pub const MIN_POOLED: usize = 8;

/// Pooled values whose spread is below this fraction of their magnitude
/// count as constant.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Daily residual rows of one trader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSet {
    pub trader: String,
    pub dates: Vec<NaiveDate>,
    pub rows: Vec<Vec<f64>>,
}

impl ResidualSet {
    pub fn new(trader: impl Into<String>, dates: Vec<NaiveDate>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if dates.len() != rows.len() {
            return Err(Error::shape(format!("{} dates for {} residual rows", dates.len(), rows.len())));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("residual dates must be strictly increasing"));
        }
        Ok(Self { trader: trader.into(), dates, rows })
    }

    pub fn from_output(trader: impl Into<String>, out: &RegressionOutput) -> Result<Self> {
        Self::new(trader, out.dates.clone(), out.residuals.clone())
    }

    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Row indices grouped by calendar month.
    pub fn by_month(&self) -> BTreeMap<Month, Vec<usize>> {
        let mut m: BTreeMap<Month, Vec<usize>> = BTreeMap::new();
        for (i, d) in self.dates.iter().enumerate() {
            m.entry(Month::of(*d)).or_default().push(i);
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyMoments {
    pub months: Vec<Month>,
    /// Mean, variance, skewness, excess kurtosis of the pooled entries.
    pub moments: Vec<[f64; 4]>,
    pub counts: Vec<usize>,
    pub low_sample: Vec<bool>,
    /// Zero variance: skewness and kurtosis set to 0.
    pub degenerate: Vec<bool>,
}

fn moments_of(xs: &[f64]) -> ([f64; 4], bool) {
    if xs.is_empty() {
        return ([0.0; 4], true);
    }
    let m = mean(xs);
    let n = xs.len() as f64;
    let c2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    // Round-off floor relative to the magnitude of the data.
    let scale = xs.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if c2 <= (VARIANCE_FLOOR * scale).powi(2) {
        return ([m, 0.0, 0.0, 0.0], true);
    }
    let c3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    let c4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    ([m, c2, c3 / c2.powf(1.5), c4 / (c2 * c2) - 3.0], false)
}

/// Per-month moments of all residual entries of that month, over the
/// contiguous month span of the dates.
pub fn monthly_moments(residuals: &ResidualSet) -> MonthlyMoments {
    let groups = residuals.by_month();
    let months = Month::span(&residuals.dates);
    let mut out = MonthlyMoments {
        months: months.clone(),
        moments: Vec::with_capacity(months.len()),
        counts: Vec::with_capacity(months.len()),
        low_sample: Vec::with_capacity(months.len()),
        degenerate: Vec::with_capacity(months.len()),
    };
    for m in months {
        let pooled: Vec<f64> = groups
            .get(&m)
            .map(|rows| rows.iter().flat_map(|&i| residuals.rows[i].iter().copied()).collect())
            .unwrap_or_default();
        let (mom, degenerate) = moments_of(&pooled);
        out.low_sample.push(pooled.len() < MIN_POOLED);
        out.counts.push(pooled.len());
        out.moments.push(mom);
        out.degenerate.push(degenerate);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    Shallow,
    Deep10,
    Cnn7,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub activation: Activation,
    /// Months with fewer rows than this are left out (partial months at
    /// the sample edges).
    pub min_month_days: usize,
}

impl TrainParams {
    pub fn shallow() -> Self {
        Self { rounds: 50, learning_rate: 0.05, activation: Activation::Tanh, min_month_days: 0 }
    }

    pub fn deep() -> Self {
        Self { rounds: 500, learning_rate: 0.02, activation: Activation::Tanh, min_month_days: 0 }
    }

    pub fn cnn() -> Self {
        Self { rounds: 300, learning_rate: 0.02, activation: Activation::ReLU, min_month_days: 15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackcastReport {
    pub protocol: Protocol,
    pub index: IndexName,
    pub train_trader: String,
    pub predict_trader: String,
    pub seeds: Vec<u64>,
    /// Correlation of the monthly predictions with the index, per run.
    pub runs: Vec<f64>,
    pub mean: f64,
    /// Student-t 10% dispersion of `runs`.
    pub dispersion: f64,
    /// Runs whose correlation was undefined and reported as 0.
    pub undefined_runs: usize,
    /// Deep protocol: correlation on the training trader's held-out
    /// last days, per run.
    pub in_sample: Vec<f64>,
    /// CNN protocol: months whose image was zero-padded.
    pub padded_months: usize,
    pub monthly_predictions: Vec<Vec<f64>>,
    pub months: Vec<Month>,
}

impl BackcastReport {
    fn finish(mut self, results: Vec<Option<f64>>) -> Self {
        self.undefined_runs = results.iter().filter(|r| r.is_none()).count();
        self.runs = results.into_iter().map(|r| r.unwrap_or(0.0)).collect();
        self.mean = mean(&self.runs);
        self.dispersion = student_dispersion(&self.runs);
        self
    }

    fn empty(protocol: Protocol, index: IndexName, train: &str, predict: &str, seeds: &[u64]) -> Self {
        Self {
            protocol,
            index,
            train_trader: train.to_string(),
            predict_trader: predict.to_string(),
            seeds: seeds.to_vec(),
            runs: Vec::new(),
            mean: 0.0,
            dispersion: 0.0,
            undefined_runs: 0,
            in_sample: Vec::new(),
            padded_months: 0,
            monthly_predictions: Vec::new(),
            months: Vec::new(),
        }
    }

    /// Whether the Student band `mean +- dispersion` contains 0.
    pub fn band_covers_zero(&self) -> bool {
        (self.mean - self.dispersion) <= 0.0 && 0.0 <= (self.mean + self.dispersion)
    }
}

fn index_values(index: &IndexSeries, months: &[Month]) -> Result<Vec<f64>> {
    months
        .iter()
        .map(|m| {
            index
                .value(*m)
                .ok_or_else(|| Error::Misaligned(format!("{} has no value for {m}", index.name.name())))
        })
        .collect()
}

fn fit_standardized(
    spec: &NetSpec,
    inputs: &[Vec<f64>],
    targets: &[f64],
    params: &TrainParams,
) -> Result<(TrainedNet, Scaler)> {
    let scaler = Scaler::fit(targets);
    let y: Vec<f64> = targets.iter().map(|v| scaler.forward(*v)).collect();
    let net = init_net(spec)?;
    let net = train(&net, inputs, &y, params.rounds, params.learning_rate)?;
    Ok((net, scaler))
}

/// Leave-one-month-out shallow net on the four moments.
pub fn shallow_backcast(
    moments: &MonthlyMoments,
    index: &IndexSeries,
    seeds: &[u64],
    params: &TrainParams,
) -> Result<BackcastReport> {
    let months: Vec<Month> = moments.months.clone();
    if months.len() < 3 {
        return Err(Error::invalid("leave-one-out needs at least three months"));
    }
    let y = index_values(index, &months)?;
    let x: Vec<Vec<f64>> = moments.moments.iter().map(|m| m.to_vec()).collect();
    let runs: Vec<(Option<f64>, Vec<f64>)> = seeds
        .par_iter()
        .map(|&seed| {
            let spec = NetSpec::shallow(params.activation, seed);
            let mut preds = Vec::with_capacity(months.len());
            for hold in 0..months.len() {
                let tx: Vec<Vec<f64>> = (0..months.len()).filter(|&i| i != hold).map(|i| x[i].clone()).collect();
                let ty: Vec<f64> = (0..months.len()).filter(|&i| i != hold).map(|i| y[i]).collect();
                let fs = FeatureScaler::fit(&tx);
                let tx: Vec<Vec<f64>> = tx.iter().map(|r| fs.transform(r)).collect();
                let (net, ts) = fit_standardized(&spec, &tx, &ty, params)?;
                preds.push(ts.inverse(net.predict(&fs.transform(&x[hold]))?));
            }
            Ok((pearson(&preds, &y), preds))
        })
        .collect::<Result<_>>()?;
    let mut report = BackcastReport::empty(Protocol::Shallow, index.name, "", "", seeds);
    report.months = months;
    report.monthly_predictions = runs.iter().map(|r| r.1.clone()).collect();
    Ok(report.finish(runs.into_iter().map(|r| r.0).collect()))
}

fn check_months(a: &ResidualSet, b: &ResidualSet) -> Result<Vec<Month>> {
    let ma: Vec<Month> = a.by_month().keys().copied().collect();
    let mb: Vec<Month> = b.by_month().keys().copied().collect();
    if ma != mb {
        return Err(Error::Misaligned(format!(
            "traders {} and {} cover different months",
            a.trader, b.trader
        )));
    }
    if a.width() != b.width() {
        return Err(Error::shape("residual sets differ in width"));
    }
    Ok(ma)
}

fn monthly_average(set: &ResidualSet, preds: &[f64], months: &[Month]) -> Vec<f64> {
    let groups = set.by_month();
    months
        .iter()
        .map(|m| mean(&groups[m].iter().map(|&i| preds[i]).collect::<Vec<_>>()))
        .collect()
}

/// Ten-layer net trained on trader A's rows except each month's last day,
/// checked on A's last days, then applied to trader B with per-month
/// averaging of the daily predictions.
pub fn deep_backcast(
    train_set: &ResidualSet,
    predict_set: &ResidualSet,
    index: &IndexSeries,
    seeds: &[u64],
    params: &TrainParams,
) -> Result<BackcastReport> {
    let months = check_months(train_set, predict_set)?;
    let y_month = index_values(index, &months)?;
    if train_set.width() != 16 {
        return Err(Error::shape("the ten-layer net expects 16-bucket residual rows"));
    }
    let groups = train_set.by_month();
    let mut fit_rows = Vec::new();
    let mut last_rows = Vec::new();
    for m in &months {
        let rows = &groups[m];
        let (last, rest) = rows.split_last().expect("non-empty month");
        fit_rows.extend_from_slice(rest);
        last_rows.push(*last);
    }
    if fit_rows.is_empty() {
        return Err(Error::invalid("no training rows once last days are held out"));
    }
    let month_of = |d: &NaiveDate| months.binary_search(&Month::of(*d)).expect("month present");
    let fx_raw: Vec<Vec<f64>> = fit_rows.iter().map(|&i| train_set.rows[i].clone()).collect();
    let fs = FeatureScaler::fit(&fx_raw);
    let fx: Vec<Vec<f64>> = fx_raw.iter().map(|r| fs.transform(r)).collect();
    let fy: Vec<f64> = fit_rows.iter().map(|&i| y_month[month_of(&train_set.dates[i])]).collect();
    let last_x: Vec<Vec<f64>> = last_rows.iter().map(|&i| fs.transform(&train_set.rows[i])).collect();
    let px: Vec<Vec<f64>> = predict_set.rows.iter().map(|r| fs.transform(r)).collect();

    let runs: Vec<(Option<f64>, Option<f64>, Vec<f64>)> = seeds
        .par_iter()
        .map(|&seed| {
            let spec = NetSpec::deep10(params.activation, seed);
            let (net, ts) = fit_standardized(&spec, &fx, &fy, params)?;
            let last_pred: Vec<f64> = net.predict_batch(&last_x)?.into_iter().map(|v| ts.inverse(v)).collect();
            let daily: Vec<f64> = net.predict_batch(&px)?.into_iter().map(|v| ts.inverse(v)).collect();
            let monthly = monthly_average(predict_set, &daily, &months);
            Ok((pearson(&monthly, &y_month), pearson(&last_pred, &y_month), monthly))
        })
        .collect::<Result<_>>()?;
    let mut report = BackcastReport::empty(Protocol::Deep10, index.name, &train_set.trader, &predict_set.trader, seeds);
    report.in_sample = runs.iter().map(|r| r.1.unwrap_or(0.0)).collect();
    report.monthly_predictions = runs.iter().map(|r| r.2.clone()).collect();
    report.months = months;
    Ok(report.finish(runs.into_iter().map(|r| r.0).collect()))
}

/// Month images of `height x width`: the month's rows in date order,
/// truncated or zero-padded. Returns the images and how many were padded.
pub fn month_images(set: &ResidualSet, months: &[Month], height: usize, scaler: &FeatureScaler) -> (Vec<Vec<f64>>, usize) {
    let groups = set.by_month();
    let width = set.width();
    let mut padded = 0;
    let images = months
        .iter()
        .map(|m| {
            let rows = &groups[m];
            if rows.len() < height {
                padded += 1;
            }
            let mut img = vec![0.0; height * width];
            for (r, &i) in rows.iter().take(height).enumerate() {
                img[r * width..(r + 1) * width].copy_from_slice(&scaler.transform(&set.rows[i]));
            }
            img
        })
        .collect();
    (images, padded)
}

/// Days per month image.
pub const CNN_HEIGHT: usize = 21;

/// Hidden width of the CNN's first dense layer.
pub const CNN_HIDDEN: usize = 16;

/// CNN trained on trader A's month images, applied to trader B's.
pub fn cnn_backcast(
    train_set: &ResidualSet,
    predict_set: &ResidualSet,
    index: &IndexSeries,
    seeds: &[u64],
    params: &TrainParams,
) -> Result<BackcastReport> {
    let groups = train_set.by_month();
    let months: Vec<Month> = check_months(train_set, predict_set)?
        .into_iter()
        .filter(|m| groups[m].len() >= params.min_month_days)
        .collect();
    let y = index_values(index, &months)?;
    let width = train_set.width();
    NetSpec::cnn7(CNN_HEIGHT, width, CNN_HIDDEN, params.activation, 0)?;
    let fs = FeatureScaler::fit_pooled(&train_set.rows);
    let (tx, padded) = month_images(train_set, &months, CNN_HEIGHT, &fs);
    let (px, _) = month_images(predict_set, &months, CNN_HEIGHT, &fs);
    let runs: Vec<(Option<f64>, Vec<f64>)> = seeds
        .par_iter()
        .map(|&seed| {
            let spec = NetSpec::cnn7(CNN_HEIGHT, width, CNN_HIDDEN, params.activation, seed)?;
            let (net, ts) = fit_standardized(&spec, &tx, &y, params)?;
            let preds: Vec<f64> = net.predict_batch(&px)?.into_iter().map(|v| ts.inverse(v)).collect();
            Ok((pearson(&preds, &y), preds))
        })
        .collect::<Result<_>>()?;
    let mut report = BackcastReport::empty(Protocol::Cnn7, index.name, &train_set.trader, &predict_set.trader, seeds);
    report.padded_months = padded;
    report.monthly_predictions = runs.iter().map(|r| r.1.clone()).collect();
    report.months = months;
    Ok(report.finish(runs.into_iter().map(|r| r.0).collect()))
}

/// One row per report: `protocol,index,train,predict,r_1..r_k,mean,dispersion`.
pub fn write_reports_csv<W: Write>(reports: &[BackcastReport], mut w: W) -> Result<()> {
    let k = reports.iter().map(|r| r.runs.len()).max().unwrap_or(0);
    let cols: Vec<String> = (1..=k).map(|i| format!("r{i}")).collect();
    writeln!(w, "protocol,index,train,predict,{},mean,dispersion", cols.join(","))?;
    for r in reports {
        let mut vals: Vec<String> = r.runs.iter().map(|v| format!("{v:.4}")).collect();
        vals.resize(k, String::new());
        writeln!(
            w,
            "{:?},{},{},{},{},{:.4},{:.4}",
            r.protocol,
            r.index.name(),
            r.train_trader,
            r.predict_trader,
            vals.join(","),
            r.mean,
            r.dispersion
        )?;
    }
    Ok(())
}
