use std::collections::BTreeMap;

use dualbook::index::Month;
use dualbook::liquidity::cost_series;
use dualbook::panel::{build_panels, BucketConfig};
use dualbook::synth::*;
use dualbook::tape::{parse_tape_str, summarize, tape_to_string, ColumnMap, Side, SideFilter, TapeRecord};

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    cov / (a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() * b.iter().map(|y| (y - mb).powi(2)).sum::<f64>()).sqrt()
}

fn lag1(x: &[f64]) -> f64 {
    pearson(&x[..x.len() - 1], &x[1..])
}

fn one_trader(seed: u64, g_sent: f64) -> MarketConfig {
    MarketConfig {
        n_traders: 1,
        seed,
        couplings: Couplings { g_sent, ..Default::default() },
        ..Default::default()
    }
}

/// Monthly net signed volume of a tape, aligned with the index months.
fn monthly_imbalance(tape: &[TapeRecord], months: &[Month]) -> Vec<f64> {
    let mut m: BTreeMap<Month, f64> = BTreeMap::new();
    for r in tape {
        let sign = match r.side {
            Side::Buy => 1.0,
            Side::Sell => -1.0,
            Side::Unknown => 0.0,
        };
        *m.entry(Month::of(r.date)).or_default() += sign * r.volume as f64;
    }
    months.iter().map(|k| m.get(k).copied().unwrap_or(0.0)).collect()
}

#[test]
fn same_seed_same_bytes() {
    let cfg = MarketConfig { n_traders: 2, n_days: 40, seed: 3, ..Default::default() };
    let (a, ta) = generate(&cfg).unwrap();
    let (b, tb) = generate(&cfg).unwrap();
    assert_eq!(ta, tb);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(tape_to_string(x), tape_to_string(y));
    }
    let (c, _) = generate(&MarketConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(tape_to_string(&a[0]), tape_to_string(&c[0]));
}

#[test]
fn traders_do_not_depend_on_each_other() {
    let (one, _) = generate(&MarketConfig { n_traders: 1, n_days: 30, seed: 8, ..Default::default() }).unwrap();
    let (three, _) = generate(&MarketConfig { n_traders: 3, n_days: 30, seed: 8, ..Default::default() }).unwrap();
    assert_eq!(one[0], three[0]);
    assert_ne!(three[0], three[1]);
}

#[test]
fn white_noise_index_at_zero_ar() {
    let mut cfg = MarketConfig { n_days: 21_000, seed: 5, ..Default::default() };
    cfg.index_ar.sentiment.phi = 0.0;
    let (_, truth) = gen_indexes(&cfg).unwrap();
    let s = &truth.standardized[0];
    assert!(s.len() > 900);
    // 4-sigma band for the lag-1 autocorrelation of white noise.
    assert!(lag1(s).abs() < 4.0 / (s.len() as f64).sqrt());
}

#[test]
fn long_run_autocorrelation_matches_ar_coefficient() {
    let mut cfg = MarketConfig { n_days: 218_000, seed: 6, ..Default::default() };
    cfg.index_ar.sentiment.phi = 0.7;
    let (idx, truth) = gen_indexes(&cfg).unwrap();
    assert!(idx[0].len() >= 10_000);
    assert!((lag1(&truth.standardized[0]) - 0.7).abs() < 0.02);
    let var = truth.standardized[0].iter().map(|v| v * v).sum::<f64>() / truth.standardized[0].len() as f64;
    assert!((var - 1.0).abs() < 0.05);
}

#[test]
fn indexes_are_deterministic_and_cover_the_calendar() {
    let cfg = MarketConfig { seed: 7, ..Default::default() };
    let (a, ta) = gen_indexes(&cfg).unwrap();
    let (b, _) = gen_indexes(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta.dates.len(), 485);
    assert_eq!(a[0].months, Month::span(&ta.dates));
    assert!(ta.tilt.iter().all(|t| (-0.45..=0.45).contains(t)));
}

#[test]
fn emitted_tape_round_trips() {
    let (tapes, _) = generate(&MarketConfig { n_traders: 2, n_days: 60, seed: 9, ..Default::default() }).unwrap();
    for t in &tapes {
        let back = parse_tape_str(&tape_to_string(t), &ColumnMap::default());
        assert!(back.rejected.is_empty());
        assert_eq!(&back.records, t);
    }
}

#[test]
fn default_calibration_is_within_anchor_band() {
    let (tapes, _) = generate(&MarketConfig { seed: 10, ..Default::default() }).unwrap();
    assert_eq!(tapes.len(), 5);
    for t in &tapes {
        let s = summarize(t, SideFilter::All).unwrap();
        let within = |x: f64, anchor: f64| x >= 0.3 * anchor && x <= 3.0 * anchor;
        assert!(within(s.trade_count as f64, 3e4), "trades {}", s.trade_count);
        assert!(within(s.avg_price, 9.0), "price {}", s.avg_price);
        assert!(within(s.avg_daily_volume, 1e4), "volume {}", s.avg_daily_volume);
    }
}

#[test]
fn uncoupled_imbalance_stays_in_null_band() {
    // Two-sided 10% band for 24 months: |r| < 0.344.
    let mut inside = 0;
    for seed in 0..5 {
        let (tapes, truth) = generate(&one_trader(seed, 0.0)).unwrap();
        let months = &truth.indexes[0].months;
        let r = pearson(&monthly_imbalance(&tapes[0], months), &truth.standardized[0]);
        if r.abs() < 0.344 {
            inside += 1;
        }
    }
    assert!(inside >= 4, "{inside}/5 inside the null band");
}

#[test]
fn coupled_imbalance_tracks_sentiment() {
    let mut strong = 0;
    for seed in 0..5 {
        let (tapes, truth) = generate(&one_trader(seed, 0.9)).unwrap();
        let months = &truth.indexes[0].months;
        if pearson(&monthly_imbalance(&tapes[0], months), &truth.standardized[0]) > 0.6 {
            strong += 1;
        }
    }
    assert!(strong >= 3, "{strong}/5");
}

#[test]
fn unit_shock_changes_nothing() {
    let cfg = MarketConfig { n_traders: 1, n_days: 80, seed: 11, ..Default::default() };
    let shocked = inject_shock(&cfg, 20, 40, 1.0, 1.0).unwrap();
    let (a, _) = generate(&cfg).unwrap();
    let (b, truth) = generate(&shocked).unwrap();
    assert_eq!(a, b);
    assert_eq!(truth.shocks.len(), 1);
}

#[test]
fn spread_shock_raises_lambda() {
    // Balanced round trips, where lambda measures the spread per share.
    let base = MarketConfig { pairing: 1.0, ..one_trader(12, 0.0) };
    let cfg = inject_shock(&base, 300, 360, 1.0, 3.0).unwrap();
    let (tapes, _) = generate(&cfg).unwrap();
    let costs = cost_series(&build_panels(&tapes[0], &BucketConfig::default()).unwrap()).unwrap();
    // Row t pairs days t and t + 1.
    let (mut inside, mut outside) = (Vec::new(), Vec::new());
    for (t, v) in costs.lambda_avg.iter().enumerate() {
        if (300..360).contains(&(t + 1)) {
            inside.push(*v);
        } else {
            outside.push(*v);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&inside) >= 2.0 * mean(&outside), "{} vs {}", mean(&inside), mean(&outside));
}

#[test]
fn zero_volume_shock_empties_the_window() {
    let cfg = inject_shock(&MarketConfig { n_traders: 1, n_days: 60, seed: 13, ..Default::default() }, 20, 25, 0.0, 1.0).unwrap();
    let (tapes, truth) = generate(&cfg).unwrap();
    let window = &truth.dates[20..25];
    assert!(tapes[0].iter().all(|r| !window.contains(&r.date)));
    let panels = build_panels(&tapes[0], &BucketConfig::default()).unwrap();
    assert_eq!(panels.len(), 55);
}

#[test]
fn overlapping_and_out_of_range_shocks_are_rejected() {
    let cfg = MarketConfig::default();
    let one = inject_shock(&cfg, 100, 200, 2.0, 1.0).unwrap();
    assert!(inject_shock(&one, 150, 250, 1.0, 2.0).is_err());
    assert!(inject_shock(&one, 200, 250, 1.0, 2.0).is_ok());
    assert!(inject_shock(&cfg, 400, 500, 1.0, 2.0).is_err());
    assert!(inject_shock(&cfg, 10, 10, 1.0, 2.0).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        MarketConfig { n_days: 1, ..Default::default() },
        MarketConfig { couplings: Couplings { g_sent: 1.5, ..Default::default() }, ..Default::default() },
        MarketConfig { trades_per_day_mean: -1.0, ..Default::default() },
        MarketConfig { pairing: 2.0, ..Default::default() },
    ];
    for c in bad {
        assert!(generate(&c).is_err());
    }
}

#[test]
fn business_calendar_skips_weekends() {
    let days = business_days(chrono::NaiveDate::from_ymd_opt(2009, 1, 3).unwrap(), 6);
    assert_eq!(days[0], chrono::NaiveDate::from_ymd_opt(2009, 1, 5).unwrap());
    assert_eq!(days[5], chrono::NaiveDate::from_ymd_opt(2009, 1, 12).unwrap());
}

#[test]
fn planted_system_hits_requested_snr() {
    let sys = PlantedSystem::with_snr(16, 2.0, 0.01, 3).unwrap();
    let q = &sys.a / (sys.a.norm() / 4.0);
    let c = sys.a.norm() / 4.0;
    let snr = PlantedSystem::snr_scaled_orthogonal(c, q.trace(), 16);
    assert!((snr - 2.0).abs() < 1e-9);
    let qtq = q.transpose() * &q;
    assert!((qtq - nalgebra::DMatrix::identity(16, 16)).amax() < 1e-12);
}
