//! Seeded synthetic multi-trader market.
//!
//! Each trader keeps a persistent ladder of price offsets (one or more
//! fine sub-cells per bucket) and quotes every trade at its own prior-day
//! VWAP plus or minus a ladder offset, so fine volume profiles repeat from
//! day to day. The buy probability of non-paired trades carries the
//! planted tilt toward the monthly indexes. Paired trades are round trips
//! (a buy and a sell of equal size around the same mid) and are neutral
//! in side but carry the spread.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{IndexName, IndexSeries, Month};
use crate::panel::day_vwap;
use crate::state::{StateMatrix, VolumeMode};
use crate::tape::{Side, TapeRecord};

/// Ladder slots are kept this many sub-cells away from bucket edges, so a
/// tripled half-spread plus rounding never moves a leg across an edge.
const EDGE_MARGIN_CELLS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexAr {
    /// Lag-1 coefficient of the standardized series.
    pub phi: f64,
    pub level: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexArs {
    pub sentiment: IndexAr,
    pub returns: IndexAr,
    pub yields: IndexAr,
    /// Loading of standardized returns on standardized sentiment.
    pub ret_on_sent: f64,
}

impl Default for IndexArs {
    fn default() -> Self {
        Self {
            sentiment: IndexAr { phi: 0.5, level: 100.0, scale: 10.0 },
            returns: IndexAr { phi: 0.1, level: 0.0, scale: 0.08 },
            yields: IndexAr { phi: 0.3, level: 3.2, scale: 0.3 },
            ret_on_sent: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Couplings {
    pub g_sent: f64,
    pub g_ret: f64,
    pub g_yield: f64,
}

/// Shared price level: AR(1) deviations around a long-run mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriceLevel {
    pub long_run: f64,
    pub phi: f64,
    /// Daily innovation sd of the shared level.
    pub sd: f64,
    /// Fraction of the gap to the shared level a trader closes per day in
    /// expectation.
    pub reversion: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shock {
    /// Day indices `[start, end)`.
    pub start: usize,
    pub end: usize,
    pub volume_mult: f64,
    pub spread_mult: f64,
}

impl Shock {
    fn contains(&self, day: usize) -> bool {
        (self.start..self.end).contains(&day)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarketConfig {
    pub n_traders: usize,
    pub n_days: usize,
    pub start_date: NaiveDate,
    pub trades_per_day_mean: f64,
    pub price_level: PriceLevel,
    /// `(mu, sigma)` of log trade size.
    pub volume_lognormal: (f64, f64),
    /// Full bid-ask spread in CNY.
    pub spread: f64,
    pub couplings: Couplings,
    pub index_ar: IndexArs,
    /// Share of trade events that are side-neutral round trips.
    pub pairing: f64,
    /// Probability that a non-paired trade carries no side flag.
    pub unknown_side_prob: f64,
    /// Ladder slots per bucket.
    pub slots_per_bucket: usize,
    /// Ladder weight decay scale across buckets.
    pub bucket_decay: f64,
    pub shocks: Vec<Shock>,
    pub seed: u64,
}

impl Default for Couplings {
    fn default() -> Self {
        Self { g_sent: 0.9, g_ret: 0.0, g_yield: 0.0 }
    }
}

impl Default for PriceLevel {
    fn default() -> Self {
        Self { long_run: 9.0, phi: 0.98, sd: 0.05, reversion: 0.1 }
    }
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            n_traders: 5,
            n_days: 485,
            start_date: NaiveDate::from_ymd_opt(2009, 1, 5).expect("valid date"),
            trades_per_day_mean: 150.0,
            price_level: PriceLevel::default(),
            volume_lognormal: (4.5, 0.7),
            spread: 0.02,
            couplings: Couplings::default(),
            index_ar: IndexArs::default(),
            pairing: 0.0,
            unknown_side_prob: 0.05,
            slots_per_bucket: 1,
            bucket_decay: 1.0,
            shocks: Vec::new(),
            seed: 0,
        }
    }
}

impl MarketConfig {
    pub fn validate(&self) -> Result<()> {
        let c = &self.couplings;
        if [c.g_sent, c.g_ret, c.g_yield].iter().any(|g| !(g.abs() <= 1.0)) {
            return Err(Error::invalid("couplings must lie in [-1, 1]"));
        }
        if self.n_days < 2 || self.n_traders == 0 {
            return Err(Error::invalid("need at least one trader and two days"));
        }
        if !(self.trades_per_day_mean >= 0.0) || !(self.spread >= 0.0) || !(self.volume_lognormal.1 >= 0.0) {
            return Err(Error::invalid("intensities, spread and volume dispersion must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.pairing) || !(0.0..=1.0).contains(&self.unknown_side_prob) {
            return Err(Error::invalid("pairing and unknown-side probability must lie in [0, 1]"));
        }
        if self.slots_per_bucket == 0 || self.slots_per_bucket > 50 - 2 * EDGE_MARGIN_CELLS {
            return Err(Error::invalid("slots per bucket out of range"));
        }
        for (i, a) in self.shocks.iter().enumerate() {
            check_shock(self, a)?;
            if self.shocks[..i].iter().any(|b| a.start < b.end && b.start < a.end) {
                return Err(Error::invalid("overlapping shock windows"));
            }
        }
        Ok(())
    }

    pub fn calendar(&self) -> Vec<NaiveDate> {
        business_days(self.start_date, self.n_days)
    }
}

fn check_shock(config: &MarketConfig, s: &Shock) -> Result<()> {
    if s.start >= s.end || s.end > config.n_days {
        return Err(Error::invalid(format!("shock window [{}, {}) outside the sample", s.start, s.end)));
    }
    if !(s.volume_mult >= 0.0 && s.spread_mult >= 0.0) {
        return Err(Error::invalid("shock multipliers must be nonnegative"));
    }
    Ok(())
}

/// Config with one more shock window.
pub fn inject_shock(config: &MarketConfig, start: usize, end: usize, volume_mult: f64, spread_mult: f64) -> Result<MarketConfig> {
    let shock = Shock { start, end, volume_mult, spread_mult };
    check_shock(config, &shock)?;
    let mut out = config.clone();
    out.shocks.push(shock);
    out.validate()?;
    Ok(out)
}

/// Monday-to-Friday days starting at `start` (rolled forward if it falls
/// on a weekend).
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

/// Independent stream seed for `(seed, stream)` (splitmix64 finalizer).
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(stream.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_INDEXES: u64 = 0;
const STREAM_LEVEL: u64 = 1;
const STREAM_TRADER: u64 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub indexes: Vec<IndexSeries>,
    /// Standardized monthly index paths driving the tilt, in
    /// sentiment, returns, yields order.
    pub standardized: Vec<Vec<f64>>,
    pub dates: Vec<NaiveDate>,
    /// Planted buy-probability tilt per day (`p_buy - 1/2`).
    pub tilt: Vec<f64>,
    pub shocks: Vec<Shock>,
}

fn ar_path(phi: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let innov = (1.0 - phi * phi).max(0.0).sqrt();
    let mut x: f64 = rng.sample(StandardNormal);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(x);
        let e: f64 = rng.sample(StandardNormal);
        x = phi * x + innov * e;
    }
    out
}

/// Three monthly indexes over the months the calendar touches. Each
/// standardized path has unit stationary variance; returns load on
/// sentiment with `ret_on_sent`.
pub fn gen_indexes(config: &MarketConfig) -> Result<(Vec<IndexSeries>, GroundTruth)> {
    config.validate()?;
    let dates = config.calendar();
    let months = Month::span(&dates);
    let n = months.len();
    let ars = &config.index_ar;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, STREAM_INDEXES));
    let sent = ar_path(ars.sentiment.phi, n, &mut rng);
    let own_ret = ar_path(ars.returns.phi, n, &mut rng);
    let yields = ar_path(ars.yields.phi, n, &mut rng);
    let rho = ars.ret_on_sent.clamp(-1.0, 1.0);
    let ret: Vec<f64> = sent
        .iter()
        .zip(&own_ret)
        .map(|(s, r)| rho * s + (1.0 - rho * rho).sqrt() * r)
        .collect();
    let scaled = |z: &[f64], a: IndexAr| -> Vec<f64> { z.iter().map(|v| a.level + a.scale * v).collect() };
    let indexes = vec![
        IndexSeries::new(IndexName::Sentiment, months.clone(), scaled(&sent, ars.sentiment))?,
        IndexSeries::new(IndexName::StockReturn, months.clone(), scaled(&ret, ars.returns))?,
        IndexSeries::new(IndexName::BondYield, months.clone(), scaled(&yields, ars.yields))?,
    ];
    let standardized = vec![sent, ret, yields];
    let c = &config.couplings;
    let first = months[0];
    let tilt = dates
        .iter()
        .map(|d| {
            let m = Month::of(*d);
            let i = ((m.year - first.year) * 12 + m.month as i32 - first.month as i32) as usize;
            let raw = 0.5 * (c.g_sent * standardized[0][i] + c.g_ret * standardized[1][i] + c.g_yield * standardized[2][i]);
            (0.5 + raw).clamp(0.05, 0.95) - 0.5
        })
        .collect();
    let truth = GroundTruth {
        indexes: indexes.clone(),
        standardized,
        dates,
        tilt,
        shocks: config.shocks.clone(),
    };
    Ok((indexes, truth))
}

struct Ladder {
    /// Offsets in CNY at sub-cell centres.
    offsets: Vec<f64>,
    /// Cumulative slot weights, last entry 1.
    cumulative: Vec<f64>,
    mean_offset: f64,
}

impl Ladder {
    fn draw(config: &MarketConfig, rng: &mut ChaCha8Rng) -> Self {
        let delta = 0.5;
        let cell = delta / 50.0;
        let mut offsets = Vec::new();
        let mut weights = Vec::new();
        for k in 0..16 {
            let bucket_w = (-(k as f64) / config.bucket_decay).exp() * rng.random_range(0.5..1.5);
            let usable: Vec<usize> = (EDGE_MARGIN_CELLS..50 - EDGE_MARGIN_CELLS).collect();
            let picks = rand::seq::index::sample(rng, usable.len(), config.slots_per_bucket);
            let slot_w: Vec<f64> = (0..config.slots_per_bucket).map(|_| rng.random_range(0.2..1.0)).collect();
            let total: f64 = slot_w.iter().sum();
            for (p, w) in picks.iter().zip(&slot_w) {
                offsets.push(k as f64 * delta + (usable[p] as f64 + 0.5) * cell);
                weights.push(bucket_w * w / total);
            }
        }
        let sum: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w / sum;
                acc
            })
            .collect::<Vec<_>>();
        let mean_offset = offsets.iter().zip(&weights).map(|(o, w)| o * w / sum).sum();
        let mut ladder = Self { offsets, cumulative, mean_offset };
        if let Some(last) = ladder.cumulative.last_mut() {
            *last = 1.0;
        }
        ladder
    }

    fn pick(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random();
        let i = self.cumulative.partition_point(|&c| c < u).min(self.offsets.len() - 1);
        self.offsets[i]
    }
}

fn shared_level(config: &MarketConfig) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, STREAM_LEVEL));
    let pl = config.price_level;
    let mut u = 0.0;
    (0..config.n_days)
        .map(|_| {
            let e: f64 = rng.sample(StandardNormal);
            u = pl.phi * u + pl.sd * e;
            pl.long_run + u
        })
        .collect()
}

fn gen_trader(config: &MarketConfig, truth: &GroundTruth, level: &[f64], trader: usize) -> Result<Vec<TapeRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, STREAM_TRADER + trader as u64));
    let ladder = Ladder::draw(config, &mut rng);
    let (mu, sigma) = config.volume_lognormal;
    let size = LogNormal::new(mu, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let events_mean = config.trades_per_day_mean / (1.0 + config.pairing);
    let events = if events_mean > 0.0 {
        Some(Poisson::new(events_mean).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };
    let start_noise = Normal::new(0.0, 0.3).expect("valid normal");
    let mut reference = level[0] + start_noise.sample(&mut rng);
    let mut out = Vec::new();
    for (day, &date) in truth.dates.iter().enumerate() {
        let shock = config.shocks.iter().find(|s| s.contains(day));
        let vol_mult = shock.map_or(1.0, |s| s.volume_mult);
        let spread_mult = shock.map_or(1.0, |s| s.spread_mult);
        let half_cents = (config.spread * spread_mult * 50.0).round() as i64;
        let p_buy = 0.5 + truth.tilt[day];
        let gap = (level[day] - reference) / ladder.mean_offset.max(1e-9);
        let p_up = 0.5 + 0.5 * (config.price_level.reversion * gap).clamp(-0.9, 0.9);
        let n_events = events.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
        let day_start = out.len();
        for _ in 0..n_events {
            let offset = ladder.pick(&mut rng);
            let up = rng.random_bool(p_up);
            let mut mid = ((reference + if up { offset } else { -offset }) * 100.0).round() as i64;
            if mid - half_cents < 10 {
                mid = ((reference + offset) * 100.0).round() as i64;
            }
            let volume = (size.sample(&mut rng) * vol_mult).round() as u64;
            let paired = rng.random_bool(config.pairing);
            let unknown = !paired && rng.random_bool(config.unknown_side_prob);
            let buy = rng.random_bool(p_buy);
            if volume == 0 {
                continue;
            }
            let price = |cents: i64| cents as f64 / 100.0;
            if paired {
                out.push(TapeRecord::new(date, price(mid + half_cents), Side::Buy, volume)?);
                out.push(TapeRecord::new(date, price(mid - half_cents), Side::Sell, volume)?);
            } else if unknown {
                out.push(TapeRecord::new(date, price(mid), Side::Unknown, volume)?);
            } else if buy {
                out.push(TapeRecord::new(date, price(mid + half_cents), Side::Buy, volume)?);
            } else {
                out.push(TapeRecord::new(date, price(mid - half_cents), Side::Sell, volume)?);
            }
        }
        let today: Vec<&TapeRecord> = out[day_start..].iter().collect();
        if let Some(v) = day_vwap(&today) {
            reference = v;
        }
    }
    Ok(out)
}

/// Tapes for every trader (independent sub-seeds, generated in parallel).
pub fn gen_tapes(config: &MarketConfig, truth: &GroundTruth) -> Result<Vec<Vec<TapeRecord>>> {
    config.validate()?;
    if truth.dates.len() != config.n_days || truth.tilt.len() != config.n_days {
        return Err(Error::Misaligned("ground truth does not cover the configured days".into()));
    }
    let level = shared_level(config);
    (0..config.n_traders)
        .into_par_iter()
        .map(|t| gen_trader(config, truth, &level, t))
        .collect()
}

/// Indexes and tapes in one call.
pub fn generate(config: &MarketConfig) -> Result<(Vec<Vec<TapeRecord>>, GroundTruth)> {
    let (_, truth) = gen_indexes(config)?;
    let tapes = gen_tapes(config, &truth)?;
    Ok((tapes, truth))
}

/// Linear state process `X(t+1) = A X(t) + e(t)` used to plant operators
/// directly in the state space.
#[derive(Debug, Clone)]
pub struct PlantedSystem {
    pub a: DMatrix<f64>,
    pub noise_sd: f64,
}

impl PlantedSystem {
    /// `A = c Q` with `Q` a seeded random orthogonal matrix.
    pub fn scaled_orthogonal(n: usize, c: f64, noise_sd: f64, seed: u64) -> Self {
        Self {
            a: random_orthogonal(n, seed) * c,
            noise_sd,
        }
    }

    /// Ratio of increment energy explained by `(A - I) X` to noise energy
    /// at stationarity, for `A = c Q`.
    pub fn snr_scaled_orthogonal(c: f64, trace_q: f64, n: usize) -> f64 {
        let n = n as f64;
        (n * (1.0 + c * c) - 2.0 * c * trace_q) / (n * (1.0 - c * c))
    }

    /// `A = c Q` with `c` chosen so the increment SNR equals `snr`.
    pub fn with_snr(n: usize, snr: f64, noise_sd: f64, seed: u64) -> Result<Self> {
        let q = random_orthogonal(n, seed);
        let tr = q.trace();
        let (mut lo, mut hi) = (0.0, 1.0 - 1e-12);
        let f = |c: f64| Self::snr_scaled_orthogonal(c, tr, n) - snr;
        if f(lo) > 0.0 || f(hi) < 0.0 {
            return Err(Error::invalid(format!("SNR {snr} not reachable with a scaled rotation")));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(Self { a: q * (0.5 * (lo + hi)), noise_sd })
    }

    /// Simulated `t_rows x n` path starting from a seeded draw.
    pub fn simulate(&self, t_rows: usize, seed: u64) -> Vec<Vec<f64>> {
        let n = self.a.nrows();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = nalgebra::DVector::from_fn(n, |_, _| 0.3 * rng.sample::<f64, _>(StandardNormal));
        let mut out = Vec::with_capacity(t_rows);
        for _ in 0..t_rows {
            out.push(x.iter().copied().collect());
            let e = nalgebra::DVector::from_fn(n, |_, _| self.noise_sd * rng.sample::<f64, _>(StandardNormal));
            x = &self.a * x + e;
        }
        out
    }

    pub fn state_matrix(&self, t_rows: usize, start: NaiveDate, seed: u64) -> Result<StateMatrix> {
        let dates = business_days(start, t_rows);
        StateMatrix::new(VolumeMode::Imbalance, dates, self.simulate(t_rows, seed))
    }
}

/// Orthogonal factor of a seeded Gaussian matrix, sign-normalized.
pub fn random_orthogonal(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}
