//! Monthly index series (sentiment, stock returns, bond yields).

use std::fmt;
use std::io::{BufRead, Write};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Month {
    pub year: i32,
    pub month: u32,
}

impl Month {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::invalid(format!("month {month} out of range")));
        }
        Ok(Self { year, month })
    }

    pub fn of(date: NaiveDate) -> Self {
        Self {
            year: date.year(),
            month: date.month(),
        }
    }

    pub fn next(self) -> Self {
        if self.month == 12 {
            Self { year: self.year + 1, month: 1 }
        } else {
            Self { year: self.year, month: self.month + 1 }
        }
    }

    /// Parses `YYYY-MM`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("bad month '{s}'"));
        let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
        Self::new(y.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?)
    }

    /// Contiguous months from the first to the last date's month.
    pub fn span(dates: &[NaiveDate]) -> Vec<Month> {
        let (Some(first), Some(last)) = (dates.iter().min(), dates.iter().max()) else {
            return Vec::new();
        };
        let end = Month::of(*last);
        let mut m = Month::of(*first);
        let mut out = vec![m];
        while m < end {
            m = m.next();
            out.push(m);
        }
        out
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IndexName {
    Sentiment,
    StockReturn,
    BondYield,
}

impl IndexName {
    pub const ALL: [IndexName; 3] = [IndexName::Sentiment, IndexName::StockReturn, IndexName::BondYield];

    pub fn name(self) -> &'static str {
        match self {
            IndexName::Sentiment => "sentiment",
            IndexName::StockReturn => "stock_return",
            IndexName::BondYield => "bond_yield",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sentiment" | "sent" => Ok(IndexName::Sentiment),
            "stock_return" | "return" | "ret" => Ok(IndexName::StockReturn),
            "bond_yield" | "yield" | "bond" => Ok(IndexName::BondYield),
            other => Err(Error::invalid(format!("unknown index '{other}'"))),
        }
    }
}

/// One value per calendar month over a contiguous run of months.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSeries {
    pub name: IndexName,
    pub months: Vec<Month>,
    pub values: Vec<f64>,
}

impl IndexSeries {
    pub fn new(name: IndexName, months: Vec<Month>, values: Vec<f64>) -> Result<Self> {
        if months.len() != values.len() {
            return Err(Error::shape(format!("{} months for {} values", months.len(), values.len())));
        }
        for w in months.windows(2) {
            if w[1] != w[0].next() {
                return Err(Error::invalid(format!("months not contiguous at {}", w[1])));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite index value"));
        }
        Ok(Self { name, months, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, month: Month) -> Option<f64> {
        let first = *self.months.first()?;
        let offset = (month.year - first.year) * 12 + month.month as i32 - first.month as i32;
        usize::try_from(offset).ok().and_then(|i| self.values.get(i).copied())
    }

    /// Month value for every date; a date outside the series is an error.
    pub fn daily(&self, dates: &[NaiveDate]) -> Result<Vec<f64>> {
        dates
            .iter()
            .map(|d| {
                self.value(Month::of(*d))
                    .ok_or_else(|| Error::Misaligned(format!("{} has no value for {}", self.name.name(), d)))
            })
            .collect()
    }
}

pub fn write_index_csv<W: Write>(s: &IndexSeries, mut w: W) -> Result<()> {
    writeln!(w, "month,{}", s.name.name())?;
    for (m, v) in s.months.iter().zip(&s.values) {
        writeln!(w, "{m},{v}")?;
    }
    Ok(())
}

/// Reads `month,value` rows. The value column header names the index when
/// `name` is `None`.
pub fn read_index_csv<R: BufRead>(r: R, name: Option<IndexName>) -> Result<IndexSeries> {
    let mut months = Vec::new();
    let mut values = Vec::new();
    let mut resolved = name;
    let mut header = false;
    for line in r.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| Error::invalid(format!("index row '{line}' has no comma")))?;
        if !header {
            header = true;
            if Month::parse(a).is_err() {
                if resolved.is_none() {
                    resolved = Some(IndexName::parse(b.trim())?);
                }
                continue;
            }
        }
        months.push(Month::parse(a)?);
        values.push(
            b.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad index value '{b}'")))?,
        );
    }
    let name = resolved.ok_or_else(|| Error::invalid("index name not given"))?;
    IndexSeries::new(name, months, values)
}
