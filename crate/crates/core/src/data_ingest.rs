//! Half-hourly demand ingestion: AEMO CSV parsing, gap repair and the
//! `ln(1 + x)` value transform.

use chrono::{Duration, NaiveDateTime, Timelike};

pub const AEMO_DATE_FORMAT: &str = "%Y/%m/%d %H:%M:%S";
pub const ISO_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Gaps of up to this many missing half-hours are interpolated by default.
pub const DEFAULT_MAX_GAP: usize = 4;

pub fn step() -> Duration {
    Duration::minutes(30)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IngestError {
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("missing column {0}")]
    MissingColumn(&'static str),
    #[error("duplicate timestamp {0}")]
    DuplicateTimestamp(NaiveDateTime),
    #[error("no demand records")]
    EmptySeries,
    #[error("rows from several regions ({0} and {1}) without a region filter")]
    MixedRegions(String, String),
    #[error("gap of {missing} half-hours after {after} exceeds the limit of {max_gap}")]
    GapTooLarge {
        after: NaiveDateTime,
        missing: usize,
        max_gap: usize,
    },
    #[error("negative demand {demand} at {timestamp}")]
    NegativeDemand {
        timestamp: NaiveDateTime,
        demand: f64,
    },
    #[error("timestamps are not strictly increasing at {0}")]
    Unordered(NaiveDateTime),
    #[error("timestamp {0} is not on a half-hour boundary")]
    Misaligned(NaiveDateTime),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadRecord {
    pub timestamp: NaiveDateTime,
    /// Megawatts.
    pub demand: f64,
}

impl LoadRecord {
    fn validate(&self) -> Result<(), IngestError> {
        if !is_aligned(self.timestamp) {
            return Err(IngestError::Misaligned(self.timestamp));
        }
        if !self.demand.is_finite() || self.demand < 0.0 {
            return Err(IngestError::NegativeDemand {
                timestamp: self.timestamp,
                demand: self.demand,
            });
        }
        Ok(())
    }
}

fn is_aligned(ts: NaiveDateTime) -> bool {
    (ts.minute() == 0 || ts.minute() == 30) && ts.second() == 0 && ts.nanosecond() == 0
}

/// Ordered half-hourly demand records for one region.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadSeries {
    region: String,
    records: Vec<LoadRecord>,
}

impl LoadSeries {
    /// Validates alignment, demand and strict ordering.
    pub fn new(region: impl Into<String>, records: Vec<LoadRecord>) -> Result<Self, IngestError> {
        if records.is_empty() {
            return Err(IngestError::EmptySeries);
        }
        for r in &records {
            r.validate()?;
        }
        if let Some(w) = records
            .windows(2)
            .find(|w| w[1].timestamp <= w[0].timestamp)
        {
            return Err(if w[1].timestamp == w[0].timestamp {
                IngestError::DuplicateTimestamp(w[1].timestamp)
            } else {
                IngestError::Unordered(w[1].timestamp)
            });
        }
        Ok(Self {
            region: region.into(),
            records,
        })
    }

    /// Builds a uniformly spaced series starting at `start`.
    pub fn from_values(
        region: impl Into<String>,
        start: NaiveDateTime,
        demands: &[f64],
    ) -> Result<Self, IngestError> {
        let records = demands
            .iter()
            .enumerate()
            .map(|(i, &demand)| LoadRecord {
                timestamp: start + step() * i as i32,
                demand,
            })
            .collect();
        Self::new(region, records)
    }

    pub fn region(&self) -> &str {
        &self.region
    }

    pub fn records(&self) -> &[LoadRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn demands(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.demand).collect()
    }

    pub fn timestamps(&self) -> Vec<NaiveDateTime> {
        self.records.iter().map(|r| r.timestamp).collect()
    }

    pub fn is_uniform(&self) -> bool {
        self.records
            .windows(2)
            .all(|w| w[1].timestamp - w[0].timestamp == step())
    }

    /// Records with `from <= timestamp < to`.
    pub fn slice_time(&self, from: NaiveDateTime, to: NaiveDateTime) -> Result<Self, IngestError> {
        let records = self
            .records
            .iter()
            .filter(|r| r.timestamp >= from && r.timestamp < to)
            .copied()
            .collect();
        Self::new(self.region.clone(), records)
    }

    /// Merges several series of the same region; overlapping timestamps are
    /// rejected.
    pub fn merge(parts: Vec<LoadSeries>) -> Result<Self, IngestError> {
        let mut iter = parts.into_iter();
        let first = iter.next().ok_or(IngestError::EmptySeries)?;
        let region = first.region;
        let mut records = first.records;
        for part in iter {
            if part.region != region {
                return Err(IngestError::MixedRegions(region, part.region));
            }
            records.extend(part.records);
        }
        records.sort_by_key(|r| r.timestamp);
        Self::new(region, records)
    }
}

/// Transformed demand `ln(1 + d)` aligned with its source timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedSeries {
    pub region: String,
    pub timestamps: Vec<NaiveDateTime>,
    pub values: Vec<f64>,
}

impl TransformedSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn find_column(headers: &csv::StringRecord, name: &'static str) -> Result<usize, IngestError> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
        .ok_or(IngestError::MissingColumn(name))
}

/// Parses an AEMO aggregated price-and-demand CSV (`REGION`,
/// `SETTLEMENTDATE`, `TOTALDEMAND`; other columns ignored). When `region` is
/// given, rows for other regions are skipped. Rows are sorted by timestamp;
/// duplicates are an error.
pub fn parse_aemo_csv(raw_text: &str, region: Option<&str>) -> Result<LoadSeries, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(raw_text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| IngestError::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let region_col = find_column(&headers, "REGION")?;
    let date_col = find_column(&headers, "SETTLEMENTDATE")?;
    let demand_col = find_column(&headers, "TOTALDEMAND")?;

    let mut seen_region: Option<String> = region.map(str::to_string);
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| IngestError::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let malformed = |reason: String| IngestError::MalformedRow { line, reason };
        let row_region = row
            .get(region_col)
            .ok_or_else(|| malformed("missing REGION".into()))?;
        match (&region, &seen_region) {
            (Some(want), _) if row_region != *want => continue,
            (None, Some(prev)) if prev != row_region => {
                return Err(IngestError::MixedRegions(
                    prev.clone(),
                    row_region.to_string(),
                ))
            }
            (None, None) => seen_region = Some(row_region.to_string()),
            _ => {}
        }
        let date_text = row
            .get(date_col)
            .ok_or_else(|| malformed("missing SETTLEMENTDATE".into()))?;
        let timestamp = NaiveDateTime::parse_from_str(date_text, AEMO_DATE_FORMAT)
            .map_err(|e| malformed(format!("settlement date {date_text:?}: {e}")))?;
        let demand_text = row
            .get(demand_col)
            .ok_or_else(|| malformed("missing TOTALDEMAND".into()))?;
        let demand: f64 = demand_text
            .parse()
            .map_err(|_| malformed(format!("demand {demand_text:?} is not a number")))?;
        if !is_aligned(timestamp) {
            return Err(malformed(format!(
                "{date_text} is not on a half-hour boundary"
            )));
        }
        if !demand.is_finite() || demand < 0.0 {
            return Err(malformed(format!(
                "demand {demand_text} must be finite and non-negative"
            )));
        }
        records.push(LoadRecord { timestamp, demand });
    }
    records.sort_by_key(|r| r.timestamp);
    LoadSeries::new(seen_region.unwrap_or_default(), records)
}

/// Fills runs of up to `max_gap` missing half-hours by linear interpolation
/// between the flanking demands.
pub fn repair_gaps(series: &LoadSeries, max_gap: usize) -> Result<LoadSeries, IngestError> {
    let recs = series.records();
    let mut out = Vec::with_capacity(recs.len());
    out.push(recs[0]);
    for w in recs.windows(2) {
        let (a, b) = (w[0], w[1]);
        let steps = ((b.timestamp - a.timestamp).num_minutes() / 30) as usize;
        let missing = steps - 1;
        if missing > max_gap {
            return Err(IngestError::GapTooLarge {
                after: a.timestamp,
                missing,
                max_gap,
            });
        }
        for k in 1..steps {
            let frac = k as f64 / steps as f64;
            out.push(LoadRecord {
                timestamp: a.timestamp + step() * k as i32,
                demand: a.demand + (b.demand - a.demand) * frac,
            });
        }
        out.push(b);
    }
    LoadSeries::new(series.region().to_string(), out)
}

pub fn log1p_series(series: &LoadSeries) -> Result<TransformedSeries, IngestError> {
    let mut values = Vec::with_capacity(series.len());
    for r in series.records() {
        if r.demand < 0.0 {
            return Err(IngestError::NegativeDemand {
                timestamp: r.timestamp,
                demand: r.demand,
            });
        }
        values.push(r.demand.ln_1p());
    }
    Ok(TransformedSeries {
        region: series.region().to_string(),
        timestamps: series.timestamps(),
        values,
    })
}

/// `exp(v) − 1`, the inverse of the demand transform.
pub fn expm1_inverse(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| v.exp_m1()).collect()
}

/// Canonical series CSV: `timestamp,demand` with ISO-8601 timestamps.
pub fn write_canonical_csv(series: &LoadSeries) -> String {
    let mut out = String::from("region,timestamp,demand\n");
    for r in series.records() {
        out.push_str(&format!(
            "{},{},{}\n",
            series.region,
            r.timestamp.format(ISO_FORMAT),
            r.demand
        ));
    }
    out
}

/// Reads `timestamp,demand` rows. The region comes from an optional `region`
/// column, else `default_region`.
pub fn read_canonical_csv(text: &str, default_region: &str) -> Result<LoadSeries, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| IngestError::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let ts_col = find_column(&headers, "timestamp")?;
    let demand_col = find_column(&headers, "demand")?;
    let region_col = find_column(&headers, "region").ok();
    let mut region: Option<String> = None;
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| IngestError::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let malformed = |reason: String| IngestError::MalformedRow { line, reason };
        let ts_text = row.get(ts_col).unwrap_or_default();
        let timestamp = NaiveDateTime::parse_from_str(ts_text, ISO_FORMAT)
            .map_err(|e| malformed(format!("timestamp {ts_text:?}: {e}")))?;
        let demand_text = row.get(demand_col).unwrap_or_default();
        let demand = demand_text
            .parse()
            .map_err(|_| malformed(format!("demand {demand_text:?} is not a number")))?;
        if let Some(c) = region_col {
            let r = row.get(c).unwrap_or_default();
            match &region {
                None => region = Some(r.to_string()),
                Some(first) if first != r => {
                    return Err(IngestError::MixedRegions(first.clone(), r.to_string()))
                }
                Some(_) => {}
            }
        }
        records.push(LoadRecord { timestamp, demand });
    }
    LoadSeries::new(region.as_deref().unwrap_or(default_region), records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "REGION,SETTLEMENTDATE,TOTALDEMAND,RRP,PERIODTYPE\n";

    fn ts(s: &str) -> NaiveDateTime {
        NaiveDateTime::parse_from_str(s, AEMO_DATE_FORMAT).unwrap()
    }

    #[test]
    fn single_row() {
        let text = format!("{HEADER}NSW1,2015/01/01 00:30:00,7362.01,25.1,TRADE\n");
        let s = parse_aemo_csv(&text, Some("NSW1")).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.records()[0].demand, 7362.01);
        assert_eq!(s.region(), "NSW1");
    }

    #[test]
    fn quoted_fields_and_region_filter() {
        let text = format!(
            "{HEADER}\"NSW1\",\"2015/01/01 01:00:00\",\"7000\",1,TRADE\nVIC1,2015/01/01 01:00:00,5000,1,TRADE\nNSW1,2015/01/01 00:30:00,7100,1,TRADE\n"
        );
        let s = parse_aemo_csv(&text, Some("NSW1")).unwrap();
        assert_eq!(s.demands(), vec![7100.0, 7000.0]);
        assert!(matches!(
            parse_aemo_csv(&text, None),
            Err(IngestError::MixedRegions(_, _))
        ));
    }

    #[test]
    fn sorts_rows() {
        let text =
            format!("{HEADER}NSW1,2015/01/01 01:00:00,2,0,T\nNSW1,2015/01/01 00:30:00,1,0,T\n");
        let s = parse_aemo_csv(&text, None).unwrap();
        assert_eq!(s.demands(), vec![1.0, 2.0]);
        assert!(s.timestamps()[0] < s.timestamps()[1]);
    }

    #[test]
    fn duplicate_rejected() {
        let text =
            format!("{HEADER}NSW1,2015/01/01 00:30:00,1,0,T\nNSW1,2015/01/01 00:30:00,2,0,T\n");
        assert_eq!(
            parse_aemo_csv(&text, None),
            Err(IngestError::DuplicateTimestamp(ts("2015/01/01 00:30:00")))
        );
    }

    #[test]
    fn malformed_and_empty() {
        let bad_date = format!("{HEADER}NSW1,2015-01-01 00:30,1,0,T\n");
        assert!(matches!(
            parse_aemo_csv(&bad_date, None),
            Err(IngestError::MalformedRow { line: 2, .. })
        ));
        let bad_demand = format!("{HEADER}NSW1,2015/01/01 00:30:00,abc,0,T\n");
        assert!(matches!(
            parse_aemo_csv(&bad_demand, None),
            Err(IngestError::MalformedRow { .. })
        ));
        let off_grid = format!("{HEADER}NSW1,2015/01/01 00:35:00,1,0,T\n");
        assert!(matches!(
            parse_aemo_csv(&off_grid, None),
            Err(IngestError::MalformedRow { .. })
        ));
        assert_eq!(parse_aemo_csv(HEADER, None), Err(IngestError::EmptySeries));
        assert_eq!(
            parse_aemo_csv("REGION,TOTALDEMAND\n", None),
            Err(IngestError::MissingColumn("SETTLEMENTDATE"))
        );
    }

    #[test]
    fn gap_midpoint() {
        let s = LoadSeries::new(
            "NSW1",
            vec![
                LoadRecord {
                    timestamp: ts("2015/01/01 00:00:00"),
                    demand: 100.0,
                },
                LoadRecord {
                    timestamp: ts("2015/01/01 01:00:00"),
                    demand: 200.0,
                },
            ],
        )
        .unwrap();
        let r = repair_gaps(&s, 1).unwrap();
        assert_eq!(r.demands(), vec![100.0, 150.0, 200.0]);
        assert!(r.is_uniform());
    }

    #[test]
    fn gap_too_large() {
        let s = LoadSeries::new(
            "NSW1",
            vec![
                LoadRecord {
                    timestamp: ts("2015/01/01 00:00:00"),
                    demand: 1.0,
                },
                LoadRecord {
                    timestamp: ts("2015/01/01 03:00:00"),
                    demand: 2.0,
                },
            ],
        )
        .unwrap();
        assert!(matches!(
            repair_gaps(&s, 2),
            Err(IngestError::GapTooLarge {
                missing: 5,
                max_gap: 2,
                ..
            })
        ));
    }

    #[test]
    fn uniform_unchanged() {
        let s =
            LoadSeries::from_values("NSW1", ts("2015/01/01 00:00:00"), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(repair_gaps(&s, DEFAULT_MAX_GAP).unwrap(), s);
    }

    #[test]
    fn transform_examples() {
        let s = LoadSeries::from_values(
            "NSW1",
            ts("2015/01/01 00:00:00"),
            &[0.0, std::f64::consts::E - 1.0, 7362.01],
        )
        .unwrap();
        let t = log1p_series(&s).unwrap();
        assert_eq!(t.values[0], 0.0);
        assert!((t.values[1] - 1.0).abs() < 1e-15);
        assert!((t.values[2] - 8.904).abs() < 1e-3);
        let back = expm1_inverse(&t.values);
        assert!((back[2] - 7362.01).abs() / 7362.01 < 1e-9);
        assert_eq!(expm1_inverse(&[0.0]), vec![0.0]);
        assert!((expm1_inverse(&[1.0])[0] - 1.71828).abs() < 1e-5);
    }

    #[test]
    fn negative_demand_rejected_by_constructor() {
        let err = LoadSeries::from_values("NSW1", ts("2015/01/01 00:00:00"), &[1.0, -2.0]);
        assert!(matches!(err, Err(IngestError::NegativeDemand { .. })));
    }

    #[test]
    fn canonical_roundtrip() {
        let s = LoadSeries::from_values(
            "NSW1",
            ts("2016/02/29 23:30:00"),
            &[7362.01, 0.1, 1e4 / 3.0],
        )
        .unwrap();
        let text = write_canonical_csv(&s);
        assert!(text.starts_with("region,timestamp,demand\nNSW1,2016-02-29T23:30:00,7362.01\n"));
        assert_eq!(read_canonical_csv(&text, "OTHER").unwrap(), s);
        // Without a region column the fallback applies.
        let bare = read_canonical_csv("timestamp,demand\n2016-02-29T23:30:00,1\n", "VIC1").unwrap();
        assert_eq!(bare.region(), "VIC1");
        let mixed =
            "region,timestamp,demand\nNSW1,2016-02-29T23:30:00,1\nVIC1,2016-03-01T00:00:00,1\n";
        assert!(matches!(
            read_canonical_csv(mixed, "X"),
            Err(IngestError::MixedRegions(..))
        ));
    }

    proptest! {
        #[test]
        fn roundtrip_relative(d in 0.0f64..1e6) {
            let back = expm1_inverse(&[d.ln_1p()])[0];
            prop_assert!((back - d).abs() <= 1e-9 * d.max(1e-300) || back == d);
        }

        #[test]
        fn transform_monotone(a in 0.0f64..1e5, b in 0.0f64..1e5) {
            prop_assert_eq!(a.partial_cmp(&b), a.ln_1p().partial_cmp(&b.ln_1p()));
        }

        #[test]
        fn parse_is_permutation_invariant(
            demands in prop::collection::vec(0.0f64..20000.0, 2..30),
            seed in any::<u64>(),
        ) {
            let start = ts("2015/03/01 00:00:00");
            let mut rows: Vec<String> = demands
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    format!("NSW1,{},{},0,T", (start + step() * i as i32).format(AEMO_DATE_FORMAT), d)
                })
                .collect();
            let sorted = parse_aemo_csv(&format!("{HEADER}{}\n", rows.join("\n")), None).unwrap();
            // Deterministic shuffle.
            let mut state = seed | 1;
            for i in (1..rows.len()).rev() {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                rows.swap(i, (state % (i as u64 + 1)) as usize);
            }
            let shuffled = parse_aemo_csv(&format!("{HEADER}{}\n", rows.join("\n")), None).unwrap();
            prop_assert_eq!(sorted, shuffled);
        }

        #[test]
        fn repaired_series_is_uniform(gaps in prop::collection::vec(0usize..4, 1..20)) {
            let mut t = ts("2015/06/01 00:00:00");
            let mut records = vec![LoadRecord { timestamp: t, demand: 100.0 }];
            for (i, g) in gaps.iter().enumerate() {
                t += step() * (*g as i32 + 1);
                records.push(LoadRecord { timestamp: t, demand: 100.0 + i as f64 });
            }
            let s = LoadSeries::new("NSW1", records).unwrap();
            let r = repair_gaps(&s, 3).unwrap();
            prop_assert!(r.is_uniform());
            prop_assert_eq!(r.records().last().unwrap().timestamp, t);
        }
    }
}
