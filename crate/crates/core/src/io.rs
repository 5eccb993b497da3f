//! File formats: market snapshot CSV, flat key-value config files and tidy
//! result tables.
//!
//! Spreads are quoted in basis points in files and converted to decimals
//! here; nothing past this module sees basis points.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;

use crate::calibration::MarketSnapshot;
use crate::error::{Error, Result};

pub const SNAPSHOT_HEADER: [&str; 8] = [
    "date",
    "spread_usd_5y_bp",
    "spread_usd_10y_bp",
    "spread_eur_5y_bp",
    "spread_eur_10y_bp",
    "fx_atm_vol",
    "index_option_vol_1m",
    "rate",
];

pub fn bp_to_decimal(bp: f64) -> f64 {
    bp / 1e4
}

pub fn decimal_to_bp(x: f64) -> f64 {
    x * 1e4
}

/// Basis points with two decimals.
pub fn fmt_bp(decimal: f64) -> String {
    format!("{:.2}", decimal_to_bp(decimal))
}

/// Six significant digits, fixed notation for moderate magnitudes and
/// scientific otherwise.
pub fn fmt_param(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let rounded: f64 = format!("{x:.5e}").parse().unwrap();
    let mag = rounded.abs().log10().floor() as i32;
    if (-4..6).contains(&mag) {
        let decimals = (5 - mag).max(0) as usize;
        format!("{rounded:.decimals$}")
    } else {
        format!("{x:.5e}")
    }
}

fn parse_field<T: std::str::FromStr>(line: usize, name: &str, s: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("column `{name}`: cannot parse `{s}`"),
    })
}

/// Reads a snapshot file. An empty `index_option_vol_1m` means no quote.
pub fn read_snapshots<R: Read>(reader: R) -> Result<Vec<MarketSnapshot>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if headers.iter().ne(SNAPSHOT_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", SNAPSHOT_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|_| Error::Parse {
            line,
            message: format!("column `date`: `{}` is not an ISO-8601 date", &rec[0]),
        })?;
        let mut bp = [0.0; 4];
        for (k, v) in bp.iter_mut().enumerate() {
            *v = parse_field(line, SNAPSHOT_HEADER[k + 1], &rec[k + 1])?;
            if !(*v > 0.0) {
                return Err(Error::Parse {
                    line,
                    message: format!("column `{}`: spread must be positive", SNAPSHOT_HEADER[k + 1]),
                });
            }
        }
        let fx_atm_vol: f64 = parse_field(line, SNAPSHOT_HEADER[5], &rec[5])?;
        let index_vol = if rec[6].is_empty() {
            None
        } else {
            Some(parse_field(line, SNAPSHOT_HEADER[6], &rec[6])?)
        };
        let rate = parse_field(line, SNAPSHOT_HEADER[7], &rec[7])?;
        let snap = MarketSnapshot {
            date,
            spread_usd_5y: bp_to_decimal(bp[0]),
            spread_usd_10y: bp_to_decimal(bp[1]),
            spread_eur_5y: bp_to_decimal(bp[2]),
            spread_eur_10y: bp_to_decimal(bp[3]),
            fx_atm_vol,
            index_option_vol_1m: index_vol,
            rate,
        };
        snap.validate().map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        out.push(snap);
    }
    Ok(out)
}

/// Writes snapshots with spreads in bp, using the shortest representation
/// of each value. Re-reading agrees to round-off.
pub fn write_snapshots<W: Write>(writer: W, snapshots: &[MarketSnapshot]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(SNAPSHOT_HEADER).map_err(io)?;
    for s in snapshots {
        w.write_record([
            s.date.format("%Y-%m-%d").to_string(),
            decimal_to_bp(s.spread_usd_5y).to_string(),
            decimal_to_bp(s.spread_usd_10y).to_string(),
            decimal_to_bp(s.spread_eur_5y).to_string(),
            decimal_to_bp(s.spread_eur_10y).to_string(),
            s.fx_atm_vol.to_string(),
            s.index_option_vol_1m.map(|v| v.to_string()).unwrap_or_default(),
            s.rate.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses `key = value` lines. Blank lines and lines starting with `#` or
/// `;` are ignored; keys outside `allowed` and repeated keys are errors.
pub fn parse_config(text: &str, allowed: &[&str]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') || s.starts_with(';') {
            continue;
        }
        let Some((key, value)) = s.split_once('=') else {
            return Err(Error::Parse {
                line,
                message: format!("expected `key = value`, found `{s}`"),
            });
        };
        let key = key.trim();
        if !allowed.contains(&key) {
            return Err(Error::Parse {
                line,
                message: format!("unknown key `{key}`"),
            });
        }
        if out.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(Error::Parse {
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
    }
    Ok(out)
}

/// A tidy table of pre-formatted cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Self {
        Self {
            headers: headers.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.headers).unwrap();
        for r in &self.rows {
            w.write_record(r).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let parse = |e: csv::Error| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        };
        let headers = rdr.headers().map_err(parse)?.iter().map(String::from).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|r| r.iter().map(String::from).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()
            .map_err(parse)?;
        Ok(Self { headers, rows })
    }

    /// Fixed-width text rendering for terminal output.
    pub fn to_text(&self) -> String {
        let n = self.headers.len();
        let mut width: Vec<usize> = self.headers.iter().map(|h| h.chars().count()).collect();
        for r in &self.rows {
            for (k, c) in r.iter().enumerate().take(n) {
                width[k] = width[k].max(c.chars().count());
            }
        }
        let line = |cells: &[String]| {
            cells
                .iter()
                .enumerate()
                .map(|(k, c)| format!("{c:>w$}", w = width[k]))
                .collect::<Vec<_>>()
                .join("  ")
        };
        let mut out = line(&self.headers);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE: &str = "\
date,spread_usd_5y_bp,spread_usd_10y_bp,spread_eur_5y_bp,spread_eur_10y_bp,fx_atm_vol,index_option_vol_1m,rate
2012-01-02,440,455.5,350,380,0.12,0.5,0.01
2012-01-03,430,450,345,378,0.11,,0.01
";

    #[test]
    fn reads_snapshots_in_decimals() {
        let s = read_snapshots(SAMPLE.as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert!((s[0].spread_usd_5y - 0.044).abs() < 1e-15);
        assert_eq!(s[0].index_option_vol_1m, Some(0.5));
        assert_eq!(s[1].index_option_vol_1m, None);
    }

    #[test]
    fn header_only_is_empty() {
        let header = SNAPSHOT_HEADER.join(",") + "\n";
        assert!(read_snapshots(header.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn errors_name_the_line() {
        let bad = SAMPLE.replace("430,450", "430,abc");
        match read_snapshots(bad.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("spread_usd_10y_bp"));
            }
            other => panic!("{other:?}"),
        }
        let neg = SAMPLE.replace("440,455.5", "-1,455.5");
        assert!(matches!(read_snapshots(neg.as_bytes()), Err(Error::Parse { line: 2, .. })));
        let date = SAMPLE.replace("2012-01-03", "03/01/2012");
        assert!(matches!(read_snapshots(date.as_bytes()), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(read_snapshots("a,b\n1,2\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn snapshots_round_trip() {
        let s = read_snapshots(SAMPLE.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_snapshots(&mut buf, &s).unwrap();
        let back = read_snapshots(buf.as_slice()).unwrap();
        for (a, b) in s.iter().zip(&back) {
            assert_eq!(a.date, b.date);
            for (x, y) in a.quotes().iter().zip(b.quotes()) {
                assert!((x - y).abs() <= 1e-15 * x.abs());
            }
            assert_eq!(a.index_option_vol_1m, b.index_option_vol_1m);
        }
        let mut again = Vec::new();
        write_snapshots(&mut again, &back).unwrap();
        let mut third = Vec::new();
        write_snapshots(&mut third, &read_snapshots(again.as_slice()).unwrap()).unwrap();
        assert_eq!(again, third);
    }

    #[test]
    fn config_parsing() {
        let text = "# comment\nseed = 7\n; other\n\ngamma=-0.2\n";
        let m = parse_config(text, &["seed", "gamma"]).unwrap();
        assert_eq!(m["seed"], "7");
        assert_eq!(m["gamma"], "-0.2");
        assert!(matches!(parse_config("bogus = 1", &["seed"]), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_config("seed=1\nseed=2", &["seed"]), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_config("seed", &["seed"]), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn number_formats() {
        assert_eq!(fmt_bp(0.0100476), "100.48");
        assert_eq!(fmt_param(0.016746), "0.0167460");
        assert_eq!(fmt_param(-210.45), "-210.450");
        assert_eq!(fmt_param(1e-4), "0.000100000");
        assert_eq!(fmt_param(1.0), "1.00000");
        assert_eq!(fmt_param(9.999996), "10.0000");
        assert_eq!(fmt_param(1.5e-7), "1.50000e-7");
        assert_eq!(fmt_param(0.0), "0");
    }

    proptest! {
        #[test]
        fn param_format_is_stable(x in -1e9f64..1e9, e in -12i32..12) {
            let v = x * 10f64.powi(e);
            let s = fmt_param(v);
            let back: f64 = s.parse().unwrap();
            prop_assert_eq!(fmt_param(back), s);
        }

        #[test]
        fn table_csv_round_trip(cells in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 3), 0..8)) {
            let mut t = Table::new(["a", "b", "c"]);
            for r in &cells {
                t.push(vec![fmt_param(r[0]), fmt_bp(r[1]), format!("x{}", r[2] as i64)]);
            }
            let csv = t.to_csv();
            let back = Table::from_csv(&csv).unwrap();
            prop_assert_eq!(&back, &t);
            prop_assert_eq!(back.to_csv(), csv);
        }
    }
}
