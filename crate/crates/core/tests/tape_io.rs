use chrono::NaiveDate;
use dualbook::synth::{generate, MarketConfig};
use dualbook::tape::*;
use dualbook::Error;
use proptest::prelude::*;

fn d(y: i32, m: u32, day: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, day).unwrap()
}

fn cols() -> ColumnMap {
    ColumnMap::default()
}

#[test]
fn broker_printout_row() {
    let t = parse_tape_str("2009-08-06,10.05,S,425\n", &cols());
    assert_eq!(t.records, vec![TapeRecord::new(d(2009, 8, 6), 10.05, Side::Sell, 425).unwrap()]);
    assert!(t.rejected.is_empty());
}

#[test]
fn empty_stream_is_empty() {
    let t = parse_tape_str("", &cols());
    assert!(t.records.is_empty());
    assert!(t.rejected.is_empty());
}

#[test]
fn missing_side_becomes_unknown() {
    let t = parse_tape_str("2009-08-07,9.90,,708\n", &cols());
    assert_eq!(t.records[0].side, Side::Unknown);
    assert_eq!(t.records[0].volume, 708);
}

#[test]
fn two_header_lines_are_skipped() {
    let text = "Trddt,Stkprc,Parcha,Trdtims\nDate,CNY,Flag,Shares\n2009-08-06,10.05,B,425\n";
    let t = parse_tape_str(text, &cols());
    assert_eq!(t.header_lines, 2);
    assert_eq!(t.records.len(), 1);
}

#[test]
fn delimiters_are_detected() {
    for sep in ['\t', ';', ','] {
        let text = format!("2009-08-06{sep}10.05{sep}B{sep}425\n");
        assert_eq!(parse_tape_str(&text, &cols()).records.len(), 1, "delimiter {sep:?}");
    }
}

#[test]
fn bad_rows_are_reported_with_line_numbers() {
    let text = "2009-08-06,10.05,B,425\n2009-13-01,1,B,1\n2009-08-06,-1,S,5\n2009-08-06,2,S,0\n2009-08-06,x,S,3\n";
    let t = parse_tape_str(text, &cols());
    let got: Vec<(usize, RejectReason)> = t.rejected.iter().map(|e| (e.line, e.reason)).collect();
    assert_eq!(
        got,
        vec![
            (2, RejectReason::MalformedDate),
            (3, RejectReason::NonPositivePrice),
            (4, RejectReason::NonPositiveVolume),
            (5, RejectReason::MalformedPrice),
        ]
    );
    assert_eq!(t.records.len() + t.rejected.len(), t.data_rows);
}

#[test]
fn records_are_date_sorted_and_stable() {
    let text = "2009-08-07,1,B,1\n2009-08-06,2,B,1\n2009-08-07,3,S,1\n2009-08-06,4,S,1\n";
    let prices: Vec<f64> = parse_tape_str(text, &cols()).records.iter().map(|r| r.price).collect();
    assert_eq!(prices, vec![2.0, 4.0, 1.0, 3.0]);
}

#[test]
fn single_record_summary() {
    let r = vec![TapeRecord::new(d(2009, 1, 5), 10.0, Side::Buy, 100).unwrap()];
    let s = summarize(&r, SideFilter::All).unwrap();
    assert_eq!(s.trade_count, 1);
    assert_eq!((s.min_price, s.avg_price, s.max_price, s.std_price), (10.0, 10.0, 10.0, 0.0));
    assert_eq!(s.avg_daily_volume, 100.0);
    assert_eq!(s.sample_volume_variance, 0.0);
}

#[test]
fn empty_summary_is_an_error() {
    assert!(matches!(summarize(&[], SideFilter::All), Err(Error::NoRecords)));
}

/// Single-pass Welford accumulator used as an independent oracle.
struct Streaming {
    n: f64,
    mean_p: f64,
    m2_p: f64,
    mean_v: f64,
    m2_v: f64,
    min: f64,
    max: f64,
    total_v: f64,
}

impl Streaming {
    fn new() -> Self {
        Self { n: 0.0, mean_p: 0.0, m2_p: 0.0, mean_v: 0.0, m2_v: 0.0, min: f64::INFINITY, max: f64::NEG_INFINITY, total_v: 0.0 }
    }

    fn push(&mut self, p: f64, v: f64) {
        self.n += 1.0;
        let dp = p - self.mean_p;
        self.mean_p += dp / self.n;
        self.m2_p += dp * (p - self.mean_p);
        let dv = v - self.mean_v;
        self.mean_v += dv / self.n;
        self.m2_v += dv * (v - self.mean_v);
        self.min = self.min.min(p);
        self.max = self.max.max(p);
        self.total_v += v;
    }
}

#[test]
fn synthetic_summary_matches_streaming_oracle() {
    let cfg = MarketConfig { n_traders: 1, n_days: 60, seed: 11, ..Default::default() };
    let (tapes, _) = generate(&cfg).unwrap();
    let tape = &tapes[0];
    let days = tape.iter().map(|r| r.date).collect::<std::collections::BTreeSet<_>>().len() as f64;
    for side in [SideFilter::All, SideFilter::Buy, SideFilter::Sell] {
        let mut o = Streaming::new();
        for r in tape {
            let keep = match side {
                SideFilter::All => true,
                SideFilter::Buy => r.side == Side::Buy,
                SideFilter::Sell => r.side == Side::Sell,
            };
            if keep {
                o.push(r.price, r.volume as f64);
            }
        }
        let s = summarize(tape, side).unwrap();
        assert_eq!(s.trade_count as f64, o.n);
        assert!((s.avg_price - o.mean_p).abs() < 1e-9);
        assert!((s.std_price - (o.m2_p / (o.n - 1.0)).sqrt()).abs() < 1e-9);
        assert!((s.sample_volume_variance / (o.m2_v / (o.n - 1.0)) - 1.0).abs() < 1e-9);
        assert_eq!((s.min_price, s.max_price), (o.min, o.max));
        assert!((s.avg_daily_volume - o.total_v / days).abs() < 1e-9);
    }
}

fn with_unknown(n: usize, unknown: usize) -> ParsedTape {
    let text: String = (0..n)
        .map(|i| format!("2009-01-05,10,{},1\n", if i < unknown { "" } else { "B" }))
        .collect();
    parse_tape_str(&text, &cols())
}

#[test]
fn unknown_share_below_threshold_is_not_flagged() {
    let r = validate(&with_unknown(100, 5));
    assert!((r.unknown_side_fraction - 0.05).abs() < 1e-15);
    assert!(!r.unknown_side_flagged);
    assert!(r.rejected.is_empty());
}

#[test]
fn unknown_share_above_threshold_is_flagged() {
    let r = validate(&with_unknown(100, 12));
    assert!((r.unknown_side_fraction - 0.12).abs() < 1e-15);
    assert!(r.unknown_side_flagged);
    assert_eq!(r.threshold, 0.10);
}

#[test]
fn rejections_are_counted_by_reason() {
    let t = parse_tape_str("2009-01-05,0,B,1\n2009-01-05,-2,B,1\n2009-01-05,1,B,1\n", &cols());
    let r = validate(&t);
    assert_eq!(r.rejected_by_reason.get("nonpositive price"), Some(&2));
}

fn record() -> impl Strategy<Value = TapeRecord> {
    (0i64..400, 1u32..100_000, 0u8..3, 1u64..1_000_000).prop_map(|(day, cents, s, v)| {
        let side = [Side::Buy, Side::Sell, Side::Unknown][s as usize];
        TapeRecord::new(d(2009, 1, 1) + chrono::Duration::days(day), cents as f64 / 100.0, side, v).unwrap()
    })
}

proptest! {
    #[test]
    fn round_trip(mut recs in prop::collection::vec(record(), 0..60)) {
        recs.sort_by_key(|r| r.date);
        let back = parse_tape_str(&tape_to_string(&recs), &cols());
        prop_assert!(back.rejected.is_empty());
        prop_assert_eq!(back.records, recs);
    }

    #[test]
    fn summary_is_permutation_invariant(recs in prop::collection::vec(record(), 1..60), seed in any::<u64>()) {
        let mut shuffled = recs.clone();
        let n = shuffled.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = summarize(&recs, SideFilter::All).unwrap();
        let b = summarize(&shuffled, SideFilter::All).unwrap();
        prop_assert_eq!(a.trade_count, b.trade_count);
        prop_assert!((a.avg_price - b.avg_price).abs() <= 1e-9 * a.avg_price.abs().max(1.0));
        prop_assert!((a.std_price - b.std_price).abs() <= 1e-9 * a.std_price.max(1.0));
        prop_assert_eq!((a.min_price, a.max_price), (b.min_price, b.max_price));
    }

    #[test]
    fn no_row_is_lost(lines in prop::collection::vec("[0-9a-z,.-]{0,24}", 0..40)) {
        let text = format!("2009-01-05,1,B,1\n{}", lines.join("\n"));
        let t = parse_tape_str(&text, &cols());
        prop_assert_eq!(t.records.len() + t.rejected.len(), t.data_rows);
    }
}
