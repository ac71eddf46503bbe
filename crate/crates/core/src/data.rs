//! Daily count series: CSV ingestion, validation, screening and splitting.

use std::collections::BTreeMap;
use std::io::Read;
use std::ops::Range;
use std::path::Path;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Contiguous daily counts for one site.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountSeries {
    pub site: String,
    pub start: NaiveDate,
    pub counts: Vec<u64>,
}

fn add_days(d: NaiveDate, n: usize) -> NaiveDate {
    d.checked_add_days(Days::new(n as u64))
        .expect("date in range")
}

impl CountSeries {
    pub fn new(site: impl Into<String>, start: NaiveDate, counts: Vec<u64>) -> Self {
        Self {
            site: site.into(),
            start,
            counts,
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn date(&self, i: usize) -> NaiveDate {
        add_days(self.start, i)
    }

    /// Day after the last observation.
    pub fn end(&self) -> NaiveDate {
        self.date(self.len())
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        (0..self.len()).map(|i| self.date(i)).collect()
    }

    pub fn slice(&self, r: Range<usize>) -> Self {
        Self {
            site: self.site.clone(),
            start: self.date(r.start),
            counts: self.counts[r].to_vec(),
        }
    }

    /// Index of `date`, if covered.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let d = (date - self.start).num_days();
        (d >= 0 && (d as usize) < self.len()).then_some(d as usize)
    }
}

fn parse_date(s: &str, line: u64) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|_| {
        Error::Data(format!(
            "line {line}: cannot parse date {s:?} (expected YYYY-MM-DD)"
        ))
    })
}

fn parse_count(s: &str, line: u64) -> Result<u64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    match s.parse::<f64>() {
        Ok(x) if x < 0.0 => Err(Error::Data(format!("line {line}: negative count {s}"))),
        Ok(x) if x.fract() == 0.0 && x.is_finite() => Ok(x as u64),
        _ => Err(Error::Data(format!(
            "line {line}: count {s:?} is not a nonnegative integer"
        ))),
    }
}

fn assemble(site: String, mut rows: Vec<(NaiveDate, u64, u64)>) -> Result<CountSeries> {
    rows.sort_by_key(|r| r.0);
    for w in rows.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(Error::Data(format!(
                "site {site}: date {} appears twice (lines {} and {})",
                w[0].0, w[0].2, w[1].2
            )));
        }
    }
    let mut missing = Vec::new();
    for w in rows.windows(2) {
        let mut d = add_days(w[0].0, 1);
        while d < w[1].0 {
            missing.push(d.to_string());
            d = add_days(d, 1);
        }
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "site {site}: missing dates {}",
            missing.join(", ")
        )));
    }
    let start = rows
        .first()
        .map(|r| r.0)
        .ok_or_else(|| Error::Data(format!("site {site}: no rows")))?;
    Ok(CountSeries {
        site,
        start,
        counts: rows.into_iter().map(|r| r.1).collect(),
    })
}

/// Parses `date,count` (named `default_site`) or `date,site,count`.
///
/// Multi-site input must cover the same dates for every site. Sites are
/// returned in order of first appearance.
pub fn parse_csv<R: Read>(reader: R, default_site: &str) -> Result<Vec<CountSeries>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_ascii_lowercase).collect();
    let multi = match headers
        .iter()
        .map(String::as_str)
        .collect::<Vec<_>>()
        .as_slice()
    {
        ["date", "count"] => false,
        ["date", "site", "count"] => true,
        _ => {
            return Err(Error::Data(format!(
                "unexpected header {headers:?}; expected date,count or date,site,count"
            )))
        }
    };
    let mut order: Vec<String> = Vec::new();
    let mut by_site: BTreeMap<String, Vec<(NaiveDate, u64, u64)>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let (site, count) = if multi {
            (rec[1].to_string(), &rec[2])
        } else {
            (default_site.to_string(), &rec[1])
        };
        let row = (parse_date(&rec[0], line)?, parse_count(count, line)?, line);
        if !by_site.contains_key(&site) {
            order.push(site.clone());
        }
        by_site.entry(site).or_default().push(row);
    }
    if order.is_empty() {
        return Err(Error::Data("no data rows".into()));
    }
    let series: Vec<CountSeries> = order
        .into_iter()
        .map(|s| {
            let rows = by_site.remove(&s).expect("site seen");
            assemble(s, rows)
        })
        .collect::<Result<_>>()?;
    let first = &series[0];
    for s in &series[1..] {
        if s.start != first.start || s.len() != first.len() {
            return Err(Error::Data(format!(
                "site {} covers {}..{} but site {} covers {}..{}",
                s.site,
                s.start,
                s.end(),
                first.site,
                first.start,
                first.end()
            )));
        }
    }
    Ok(series)
}

pub fn ingest_csv(path: impl AsRef<Path>) -> Result<Vec<CountSeries>> {
    let path = path.as_ref();
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("site");
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    parse_csv(file, name)
}

/// Writes one or more aligned series in the `date,site,count` layout
/// (or `date,count` for a single series).
pub fn write_csv(path: impl AsRef<Path>, series: &[CountSeries]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if series.len() == 1 {
        w.write_record(["date", "count"])?;
        let s = &series[0];
        for (i, c) in s.counts.iter().enumerate() {
            w.write_record([s.date(i).to_string(), c.to_string()])?;
        }
    } else {
        w.write_record(["date", "site", "count"])?;
        for s in series {
            for (i, c) in s.counts.iter().enumerate() {
                w.write_record([s.date(i).to_string(), s.site.clone(), c.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Days in a site's series that look like reporting errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnomalyReport {
    pub site: String,
    pub zero_days: Vec<NaiveDate>,
    pub jump_days: Vec<NaiveDate>,
}

impl AnomalyReport {
    pub fn is_clean(&self) -> bool {
        self.zero_days.is_empty() && self.jump_days.is_empty()
    }
}

/// Flags zero counts and days that differ by more than `threshold` from the
/// mean of both the previous and the next 4 days. Near the ends of the series
/// only the days available on each side are used; a day with no neighbours
/// on one side is judged by the other side alone.
pub fn screen_anomalies(series: &CountSeries, threshold: f64) -> AnomalyReport {
    let y: Vec<f64> = series.counts.iter().map(|&c| c as f64).collect();
    let n = y.len();
    let mean = |r: Range<usize>| {
        (!r.is_empty()).then(|| y[r.clone()].iter().sum::<f64>() / r.len() as f64)
    };
    let mut zero_days = Vec::new();
    let mut jump_days = Vec::new();
    for t in 0..n {
        if series.counts[t] == 0 {
            zero_days.push(series.date(t));
        }
        let before = mean(t.saturating_sub(4)..t);
        let after = mean(t + 1..(t + 5).min(n));
        let far = |m: Option<f64>| m.map(|m| (y[t] - m).abs() > threshold);
        let jump = match (far(before), far(after)) {
            (Some(a), Some(b)) => a && b,
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => false,
        };
        if jump {
            jump_days.push(series.date(t));
        }
    }
    AnomalyReport {
        site: series.site.clone(),
        zero_days,
        jump_days,
    }
}

/// Sizes of the chronological validation and test blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub val_days: usize,
    pub test_days: usize,
    /// Forecast horizon in days.
    pub horizon: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            val_days: 14,
            test_days: 14,
            horizon: 14,
        }
    }
}

/// Index ranges of a chronological train / validation / test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Split {
    /// Training plus validation, used for the final refit.
    pub fn train_val(&self) -> Range<usize> {
        self.train.start..self.val.end
    }
}

/// Test is the last `test_days`, validation the block before, training the
/// rest (at least one day).
pub fn split(len: usize, spec: &SplitSpec) -> Result<Split> {
    let held = spec.val_days + spec.test_days;
    if len <= held {
        return Err(Error::Data(format!(
            "series of {len} days is too short for {} validation and {} test days",
            spec.val_days, spec.test_days
        )));
    }
    let train_end = len - held;
    let val_end = train_end + spec.val_days;
    Ok(Split {
        train: 0..train_end,
        val: train_end..val_end,
        test: val_end..len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn single_site_file() {
        let text = "date,count\n2020-04-01,5\n2020-04-02,7\n2020-04-03,6\n";
        let s = parse_csv(text.as_bytes(), "tufts").unwrap();
        assert_eq!(
            s,
            vec![CountSeries::new("tufts", d("2020-04-01"), vec![5, 7, 6])]
        );
        assert_eq!(s[0].end(), d("2020-04-04"));
    }

    #[test]
    fn gap_is_named() {
        let text = "date,count\n2020-04-01,5\n2020-04-03,6\n";
        let err = parse_csv(text.as_bytes(), "x").unwrap_err().to_string();
        assert!(err.contains("2020-04-02"), "{err}");
    }

    #[test]
    fn bad_counts_report_lines() {
        let err =
            parse_csv("date,count\n2020-04-01,5\n2020-04-02,-3\n".as_bytes(), "x").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let err = parse_csv("date,count\n2020-04-01,2.5\n".as_bytes(), "x").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert_eq!(
            parse_csv("date,count\n2020-04-01,4.0\n".as_bytes(), "x").unwrap()[0].counts,
            vec![4]
        );
    }

    #[test]
    fn multi_site_file() {
        let mut text = String::from("date,site,count\n");
        for site in ["a", "b"] {
            for i in 0..10 {
                text.push_str(&format!("{},{site},{}\n", add_days(d("2020-04-01"), i), i));
            }
        }
        let s = parse_csv(text.as_bytes(), "unused").unwrap();
        assert_eq!(s.len(), 2);
        assert!(s
            .iter()
            .all(|x| x.len() == 10 && x.start == d("2020-04-01")));
        assert_eq!(s[1].site, "b");
    }

    #[test]
    fn misaligned_sites_rejected() {
        let text = "date,site,count\n2020-04-01,a,1\n2020-04-02,a,1\n2020-04-02,b,1\n";
        assert!(parse_csv(text.as_bytes(), "x").is_err());
    }

    #[test]
    fn split_boundaries() {
        let spec = SplitSpec::default();
        let s = split(69, &spec).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (41, 14, 14));
        assert_eq!(s.train_val(), 0..55);
        assert_eq!(split(29, &spec).unwrap().train, 0..1);
        assert!(split(28, &spec).is_err());
    }

    #[test]
    fn anomaly_screen() {
        let mut counts = vec![100u64; 20];
        counts[10] = 200;
        counts[15] = 0;
        let r = screen_anomalies(&CountSeries::new("s", d("2020-01-01"), counts), 50.0);
        assert_eq!(r.jump_days, vec![d("2020-01-11"), d("2020-01-16")]);
        assert_eq!(r.zero_days, vec![d("2020-01-16")]);
        let clean = screen_anomalies(
            &CountSeries::new("s", d("2020-01-01"), (0..30).map(|i| 50 + i).collect()),
            50.0,
        );
        assert!(clean.is_clean());
    }

    #[test]
    fn write_then_read_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        let a = CountSeries::new("a", d("2020-01-01"), vec![1, 2, 3]);
        let b = CountSeries::new("b", d("2020-01-01"), vec![4, 5, 6]);
        write_csv(&p, &[a.clone(), b.clone()]).unwrap();
        assert_eq!(ingest_csv(&p).unwrap(), vec![a.clone(), b]);
        write_csv(&p, &[a.clone()]).unwrap();
        assert_eq!(ingest_csv(&p).unwrap()[0].counts, a.counts);
    }
}
