//! Brokerage tape ingestion.
//!
//! A tape is delimiter-separated text with four columns: trading date
//! (`Trddt`, ISO `YYYY-MM-DD`), price in CNY (`Stkprc`), side flag
//! (`Parcha`, `B`/`S`/empty) and share volume (`Trdtims`). Leading lines
//! whose first field is not a date are treated as headers (the printed
//! tapes carry a names row and a units row). Malformed data rows are
//! reported with their line number rather than failing the whole file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Share of records allowed to miss the side flag before a tape is flagged.
pub const UNKNOWN_SIDE_THRESHOLD: f64 = 0.10;

pub const CANONICAL_HEADER: &str = "Trddt,Stkprc,Parcha,Trdtims";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Buy,
    Sell,
    Unknown,
}

impl Side {
    fn parse(field: &str) -> Side {
        match field.trim().to_ascii_uppercase().as_str() {
            "B" | "BUY" => Side::Buy,
            "S" | "SELL" => Side::Sell,
            _ => Side::Unknown,
        }
    }

    pub fn flag(self) -> &'static str {
        match self {
            Side::Buy => "B",
            Side::Sell => "S",
            Side::Unknown => "",
        }
    }
}

/// One executed trade.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TapeRecord {
    pub date: NaiveDate,
    pub price: f64,
    pub side: Side,
    pub volume: u64,
}

impl TapeRecord {
    pub fn new(date: NaiveDate, price: f64, side: Side, volume: u64) -> Result<Self> {
        if !(price.is_finite() && price > 0.0) {
            return Err(Error::invalid(format!("nonpositive price {price}")));
        }
        if volume == 0 {
            return Err(Error::invalid("nonpositive volume"));
        }
        Ok(Self {
            date,
            price,
            side,
            volume,
        })
    }

    pub fn notional(&self) -> f64 {
        self.price * self.volume as f64
    }
}

/// Column positions of the four tape fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnMap {
    pub date: usize,
    pub price: usize,
    pub side: usize,
    pub volume: usize,
    /// Field delimiter; detected from the first non-empty line when unset.
    pub delimiter: Option<char>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            date: 0,
            price: 1,
            side: 2,
            volume: 3,
            delimiter: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RejectReason {
    MalformedDate,
    MalformedPrice,
    NonPositivePrice,
    MalformedVolume,
    NonPositiveVolume,
    MissingField,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RejectReason::MalformedDate => "malformed date",
            RejectReason::MalformedPrice => "malformed price",
            RejectReason::NonPositivePrice => "nonpositive price",
            RejectReason::MalformedVolume => "malformed volume",
            RejectReason::NonPositiveVolume => "nonpositive volume",
            RejectReason::MissingField => "missing field",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowError {
    /// 1-based line number in the input stream.
    pub line: usize,
    pub reason: RejectReason,
    pub text: String,
}

/// Result of parsing one tape: accepted records plus rejected rows.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParsedTape {
    pub records: Vec<TapeRecord>,
    pub rejected: Vec<RowError>,
    /// Number of data rows seen after the header block.
    pub data_rows: usize,
    pub header_lines: usize,
}

pub fn detect_delimiter(line: &str) -> char {
    let count = |c: char| line.matches(c).count();
    // Ties resolve in favour of tab, then semicolon, then comma.
    [('\t', count('\t')), (';', count(';')), (',', count(','))]
        .into_iter()
        .fold(('\t', 0), |best, cand| if cand.1 > best.1 { cand } else { best })
        .0
}

fn parse_date(field: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(field.trim(), "%Y-%m-%d").ok()
}

fn parse_row(fields: &[&str], cols: &ColumnMap) -> std::result::Result<TapeRecord, RejectReason> {
    let get = |i: usize| fields.get(i).copied();
    let date = get(cols.date)
        .and_then(parse_date)
        .ok_or(RejectReason::MalformedDate)?;
    let price_field = get(cols.price).ok_or(RejectReason::MissingField)?;
    let price: f64 = price_field
        .trim()
        .parse()
        .map_err(|_| RejectReason::MalformedPrice)?;
    if !price.is_finite() {
        return Err(RejectReason::MalformedPrice);
    }
    if price <= 0.0 {
        return Err(RejectReason::NonPositivePrice);
    }
    let side = get(cols.side).map(Side::parse).unwrap_or(Side::Unknown);
    let volume_field = get(cols.volume).ok_or(RejectReason::MissingField)?;
    let volume_field = volume_field.trim();
    let volume: i64 = volume_field
        .parse()
        .map_err(|_| RejectReason::MalformedVolume)?;
    if volume <= 0 {
        return Err(RejectReason::NonPositiveVolume);
    }
    Ok(TapeRecord {
        date,
        price,
        side,
        volume: volume as u64,
    })
}

/// Parse a tape stream. Records come back sorted by date, stable within a
/// day. Only an unreadable stream is a file-level error.
pub fn parse_tape<R: BufRead>(reader: R, cols: &ColumnMap) -> Result<ParsedTape> {
    let mut out = ParsedTape::default();
    let mut delimiter = cols.delimiter;
    let mut in_header = true;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let delim = *delimiter.get_or_insert_with(|| detect_delimiter(trimmed));
        let fields: Vec<&str> = trimmed.split(delim).collect();
        if in_header {
            let first_is_date = fields.get(cols.date).and_then(|f| parse_date(f)).is_some();
            if !first_is_date {
                out.header_lines += 1;
                continue;
            }
            in_header = false;
        }
        out.data_rows += 1;
        match parse_row(&fields, cols) {
            Ok(rec) => out.records.push(rec),
            Err(reason) => out.rejected.push(RowError {
                line: line_no,
                reason,
                text: trimmed.to_string(),
            }),
        }
    }
    out.records.sort_by_key(|r| r.date);
    Ok(out)
}

pub fn parse_tape_str(text: &str, cols: &ColumnMap) -> ParsedTape {
    parse_tape(text.as_bytes(), cols).expect("reading from memory cannot fail")
}

/// Write records in the canonical comma-separated form with a single
/// header line. Prices use the shortest representation that parses back
/// to the same value.
pub fn write_tape<W: Write>(records: &[TapeRecord], mut w: W) -> Result<()> {
    writeln!(w, "{CANONICAL_HEADER}")?;
    for r in records {
        writeln!(w, "{},{},{},{}", r.date, r.price, r.side.flag(), r.volume)?;
    }
    Ok(())
}

pub fn tape_to_string(records: &[TapeRecord]) -> String {
    let mut buf = Vec::new();
    write_tape(records, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("tape text is ascii")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SideFilter {
    All,
    Buy,
    Sell,
}

impl SideFilter {
    fn admits(self, side: Side) -> bool {
        match self {
            SideFilter::All => true,
            SideFilter::Buy => side == Side::Buy,
            SideFilter::Sell => side == Side::Sell,
        }
    }
}

/// Descriptive statistics of one tape (or one side of it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapeSummary {
    pub side: SideFilter,
    pub trade_count: usize,
    pub min_price: f64,
    pub avg_price: f64,
    pub max_price: f64,
    /// Sample standard deviation of trade prices.
    pub std_price: f64,
    /// Selected volume divided by the tape's distinct trading days.
    pub avg_daily_volume: f64,
    /// Unbiased variance of per-trade volumes; zero for a single trade.
    pub sample_volume_variance: f64,
    pub unknown_side_fraction: f64,
}

/// Summarize the records selected by `side`. Trading days are counted over
/// the whole input so that per-side daily volumes share a denominator.
pub fn summarize(records: &[TapeRecord], side: SideFilter) -> Result<TapeSummary> {
    let days: BTreeSet<NaiveDate> = records.iter().map(|r| r.date).collect();
    let selected: Vec<&TapeRecord> = records.iter().filter(|r| side.admits(r.side)).collect();
    if selected.is_empty() {
        return Err(Error::NoRecords);
    }
    let n = selected.len() as f64;
    let prices: Vec<f64> = selected.iter().map(|r| r.price).collect();
    let volumes: Vec<f64> = selected.iter().map(|r| r.volume as f64).collect();
    let min_price = prices.iter().copied().fold(f64::INFINITY, f64::min);
    let max_price = prices.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let avg_price = crate::stats::mean(&prices).clamp(min_price, max_price);
    let unknown = selected.iter().filter(|r| r.side == Side::Unknown).count() as f64;
    Ok(TapeSummary {
        side,
        trade_count: selected.len(),
        min_price,
        avg_price,
        max_price,
        std_price: crate::stats::sample_variance(&prices).sqrt(),
        avg_daily_volume: volumes.iter().sum::<f64>() / days.len() as f64,
        sample_volume_variance: crate::stats::sample_variance(&volumes),
        unknown_side_fraction: unknown / n,
    })
}

/// Report-only quality check of a parsed tape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub records: usize,
    pub unknown_side: usize,
    pub unknown_side_fraction: f64,
    pub threshold: f64,
    pub unknown_side_flagged: bool,
    pub rejected_by_reason: BTreeMap<String, usize>,
    pub rejected: Vec<RowError>,
}

pub fn validate(tape: &ParsedTape) -> ValidationReport {
    validate_with_threshold(tape, UNKNOWN_SIDE_THRESHOLD)
}

pub fn validate_with_threshold(tape: &ParsedTape, threshold: f64) -> ValidationReport {
    let unknown = tape
        .records
        .iter()
        .filter(|r| r.side == Side::Unknown)
        .count();
    let fraction = if tape.records.is_empty() {
        0.0
    } else {
        unknown as f64 / tape.records.len() as f64
    };
    let mut by_reason = BTreeMap::new();
    for e in &tape.rejected {
        *by_reason.entry(e.reason.to_string()).or_insert(0) += 1;
    }
    ValidationReport {
        records: tape.records.len(),
        unknown_side: unknown,
        unknown_side_fraction: fraction,
        threshold,
        unknown_side_flagged: fraction > threshold,
        rejected_by_reason: by_reason,
        rejected: tape.rejected.clone(),
    }
}
