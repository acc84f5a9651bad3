use chrono::NaiveDate;
use dualbook::index::{IndexName, IndexSeries, Month};
use dualbook::liquidity::*;
use dualbook::nn::Activation;
use dualbook::panel::{build_panels, BucketConfig, DailyPanel, PanelSeries};
use dualbook::synth::{business_days, generate, MarketConfig};
use proptest::prelude::*;

fn d(day: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(2009, 1, day).unwrap()
}

fn panel(day: u32) -> DailyPanel {
    DailyPanel::empty(d(day), 10.0, &BucketConfig::default())
}

fn quote(p: &mut DailyPanel, k: usize, ask: f64, buys: f64, bid: f64, sells: f64) {
    p.buy_vwap[k] = ask;
    p.buy_vol[k] = buys;
    p.sell_vwap[k] = bid;
    p.sell_vol[k] = sells;
}

#[test]
fn constant_spread_cost_is_spread_times_turnover() {
    let mut prev = panel(5);
    let mut cur = panel(6);
    quote(&mut prev, 3, 10.02, 1000.0, 10.00, 1000.0);
    quote(&mut cur, 3, 10.02, 1000.0, 10.00, 1000.0);
    let c = trading_cost(&prev, &cur).unwrap();
    assert!((c.pi[3] - 20.0).abs() < 1e-9);
    assert!(!c.no_quote[3]);
    let (l, flags) = amihud_lambda(&c.pi, &prev, &cur);
    assert!((l[3] - 0.02).abs() < 1e-12);
    assert!(!flags[3]);
}

#[test]
fn zero_volume_costs_nothing() {
    let mut prev = panel(5);
    quote(&mut prev, 0, 10.02, 5.0, 10.0, 5.0);
    let c = trading_cost(&prev, &panel(6)).unwrap();
    assert!(c.pi.iter().all(|v| *v == 0.0));
}

#[test]
fn falling_prices_give_negative_cost() {
    let mut prev = panel(5);
    let mut cur = panel(6);
    quote(&mut prev, 1, 10.02, 1.0, 10.50, 1.0);
    quote(&mut cur, 1, 9.9, 100.0, 9.8, 100.0);
    let c = trading_cost(&prev, &cur).unwrap();
    assert!((c.pi[1] + 48.0).abs() < 1e-9);
    let (l, _) = amihud_lambda(&c.pi, &prev, &cur);
    assert!((l[1] - 48.0 / 50.5).abs() < 1e-12);
}

#[test]
fn empty_prior_side_is_no_quote() {
    let mut prev = panel(5);
    let mut cur = panel(6);
    quote(&mut prev, 2, 10.1, 10.0, 0.0, 0.0);
    quote(&mut cur, 2, 10.1, 7.0, 10.0, 4.0);
    let c = trading_cost(&prev, &cur).unwrap();
    assert!(c.no_quote[2]);
    assert!((c.pi[2] - 70.7).abs() < 1e-9);
}

#[test]
fn zero_denominator_is_illiquid() {
    let (l, flags) = amihud_lambda(&[5.0; 16], &panel(5), &panel(6));
    assert!(l.iter().all(|v| *v == 0.0));
    assert!(flags.iter().all(|f| *f));
}

#[test]
fn panels_out_of_order_are_rejected() {
    assert!(trading_cost(&panel(6), &panel(5)).is_err());
    assert!(trading_cost(&panel(6), &panel(6)).is_err());
}

#[test]
fn lambda_average_skips_illiquid_buckets() {
    let mut p = vec![panel(5), panel(6)];
    quote(&mut p[0], 0, 10.02, 100.0, 10.0, 100.0);
    quote(&mut p[1], 0, 10.02, 100.0, 10.0, 100.0);
    let s = cost_series(&PanelSeries::new(p, BucketConfig::default()).unwrap()).unwrap();
    assert_eq!(s.len(), 1);
    assert!((s.lambda_avg[0] - 0.02).abs() < 1e-12);
    assert_eq!(s.illiquid[0].iter().filter(|f| **f).count(), 15);
}

#[test]
fn synthetic_cost_series_shape_and_exports() {
    let (tapes, _) = generate(&MarketConfig { n_traders: 1, n_days: 30, seed: 4, ..Default::default() }).unwrap();
    let s = cost_series(&build_panels(&tapes[0], &BucketConfig::default()).unwrap()).unwrap();
    assert_eq!(s.len(), 29);
    assert!(s.lambda.iter().flatten().all(|v| *v >= 0.0 && v.is_finite()));
    let mut long = Vec::new();
    write_lambda_csv(&s, &mut long).unwrap();
    assert_eq!(String::from_utf8(long).unwrap().lines().count(), 1 + 29 * 16);
    let mut avg = Vec::new();
    write_lambda_avg_csv(&s, &mut avg).unwrap();
    assert_eq!(String::from_utf8(avg).unwrap().lines().count(), 1 + 29);
}

#[test]
fn default_windows_partition_the_sample() {
    let c = EventStudyConfig::default();
    assert_eq!(c.sample_len(), 480);
    assert_eq!(c.training_range(), (0, 120));
    assert_eq!(c.prediction_windows, vec![(120, 240), (180, 300), (240, 360), (300, 420), (360, 480)]);
    let mut covered = [0usize; 480];
    for &(s, e) in &c.prediction_windows {
        for day in &mut covered[s..e] {
            *day += 1;
        }
    }
    assert!(covered[..120].iter().all(|v| *v == 0));
    assert!(covered[120..].iter().all(|v| *v >= 1));
    assert!(c.validate(484).is_ok());
    assert!(c.validate(400).is_err());
}

#[test]
fn malformed_configs_are_rejected() {
    let bad = [
        EventStudyConfig { training_periods: (0, 2), ..Default::default() },
        EventStudyConfig { training_periods: (7, 8), ..Default::default() },
        EventStudyConfig { prediction_windows: vec![(300, 300)], ..Default::default() },
        EventStudyConfig { prediction_windows: vec![(400, 500)], ..Default::default() },
        EventStudyConfig { rounds: 0, ..Default::default() },
    ];
    for c in bad {
        assert!(c.validate(484).is_err(), "{c:?}");
    }
}

fn flat_costs(n: usize) -> CostSeries {
    CostSeries {
        dates: business_days(NaiveDate::from_ymd_opt(2009, 1, 6).unwrap(), n),
        pi: vec![vec![0.0; 16]; n],
        lambda: vec![vec![0.0; 16]; n],
        lambda_avg: vec![0.0; n],
        illiquid: vec![vec![false; 16]; n],
        no_quote: vec![vec![false; 16]; n],
    }
}

fn monthly_index(dates: &[NaiveDate]) -> IndexSeries {
    let months = Month::span(dates);
    let values = (0..months.len()).map(|i| (i as f64 * 0.7).sin()).collect();
    IndexSeries::new(IndexName::Sentiment, months, values).unwrap()
}

#[test]
fn constant_lambda_gives_na() {
    let c = flat_costs(484);
    let idx = monthly_index(&c.dates);
    let cfg = EventStudyConfig { rounds: 5, permutation_draws: 10, ..Default::default() };
    let r = event_study(&c, &idx, &cfg, Activation::ReLU, &[1]).unwrap();
    assert_eq!(r.reference_pearson, None);
    assert!(r.windows.iter().all(|w| w.p_pearson.is_none() && w.p_spearman.is_none()));
    let mut buf = Vec::new();
    write_report_csv(&[r], &mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().contains("NA"));
}

#[test]
fn event_study_on_synthetic_market() {
    let (tapes, truth) = generate(&MarketConfig { n_traders: 1, seed: 5, ..Default::default() }).unwrap();
    let costs = cost_series(&build_panels(&tapes[0], &BucketConfig::default()).unwrap()).unwrap();
    let cfg = EventStudyConfig { permutation_draws: 500, ..Default::default() };
    let a = event_study(&costs, &truth.indexes[0], &cfg, Activation::ReLU, &[1, 2]).unwrap();
    assert_eq!(a.windows.len(), 5);
    assert_eq!(a.reference_days, 480);
    for w in &a.windows {
        for p in [w.p_pearson, w.p_spearman] {
            let p = p.unwrap();
            assert!((0.0..=1.0).contains(&p));
        }
        assert!(w.pearson.unwrap().abs() <= 1.0);
    }
    let b = event_study(&costs, &truth.indexes[0], &cfg, Activation::ReLU, &[1, 2]).unwrap();
    assert_eq!(a, b);
    assert!(event_study(&costs, &truth.indexes[0], &cfg, Activation::ReLU, &[]).is_err());
}

proptest! {
    #[test]
    fn balanced_book_cost_equals_spread_times_turnover(
        mids in prop::collection::vec(5.0f64..15.0, 16),
        vols in prop::collection::vec(0.0f64..5000.0, 16),
        spread in 0.001f64..0.5,
    ) {
        let mut prev = panel(5);
        let mut cur = panel(6);
        for k in 0..16 {
            quote(&mut prev, k, mids[k] + spread / 2.0, vols[k], mids[k] - spread / 2.0, vols[k]);
            quote(&mut cur, k, mids[k] + spread / 2.0, vols[k], mids[k] - spread / 2.0, vols[k]);
        }
        let c = trading_cost(&prev, &cur).unwrap();
        let turnover: f64 = vols.iter().sum();
        let total: f64 = c.pi.iter().sum();
        prop_assert!((total - spread * turnover).abs() < 1e-9 * (1.0 + spread * turnover));
        prop_assert!(c.pi.iter().all(|p| *p >= -1e-9));
    }

    #[test]
    fn lambda_is_nonnegative_and_zero_with_zero_cost(
        pi in prop::collection::vec(-1e4f64..1e4, 16),
        buys in prop::collection::vec(0.0f64..100.0, 16),
        sells in prop::collection::vec(0.0f64..100.0, 16),
        zero in 0usize..16,
    ) {
        let mut pi = pi;
        pi[zero] = 0.0;
        let mut prev = panel(5);
        let mut cur = panel(6);
        prev.sell_vol = sells;
        cur.buy_vol = buys;
        let (l, _) = amihud_lambda(&pi, &prev, &cur);
        prop_assert!(l.iter().all(|v| *v >= 0.0 && v.is_finite()));
        prop_assert_eq!(l[zero], 0.0);
    }
}
