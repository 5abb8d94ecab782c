use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Daily opening prices of one instrument.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub name: String,
    pub dates: Vec<String>,
    pub opens: Vec<f64>,
}

#[derive(Debug, Deserialize, Serialize)]
struct Row {
    date: String,
    open: f64,
}

impl PriceSeries {
    pub fn new(name: impl Into<String>, dates: Vec<String>, opens: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if dates.len() != opens.len() {
            return Err(Error::shape(format!(
                "series {name}: {} dates but {} prices",
                dates.len(),
                opens.len()
            )));
        }
        Ok(PriceSeries { name, dates, opens })
    }

    pub fn len(&self) -> usize {
        self.opens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opens.is_empty()
    }

    /// Parse a `date,open` CSV. Dates must be ISO-8601 and strictly increasing;
    /// prices must be finite and positive.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "series".into());
        Self::read_csv(file, &name, &path.display().to_string())
    }

    pub fn read_csv<R: std::io::Read>(reader: R, name: &str, origin: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
        if headers.len() != 2 || &headers[0] != "date" || &headers[1] != "open" {
            return Err(parse_err(1, format!("expected header `date,open`, found `{}`", headers.iter().collect::<Vec<_>>().join(","))));
        }
        let mut dates = Vec::new();
        let mut opens = Vec::new();
        let mut prev: Option<NaiveDate> = None;
        for (i, rec) in rdr.deserialize::<Row>().enumerate() {
            let line = i + 2;
            let row = rec.map_err(|e| parse_err(line, e.to_string()))?;
            let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d")
                .map_err(|e| parse_err(line, format!("bad date `{}`: {e}", row.date)))?;
            if !row.open.is_finite() || row.open <= 0.0 {
                return Err(parse_err(line, format!("open price must be finite and positive, got {}", row.open)));
            }
            if let Some(p) = prev {
                if date <= p {
                    return Err(parse_err(line, format!("date {} is not after {}", date, p)));
                }
            }
            prev = Some(date);
            dates.push(row.date);
            opens.push(row.open);
        }
        PriceSeries::new(name, dates, opens)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv_to(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn write_csv_to<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let to_err = |e: csv::Error| Error::Parse {
            path: self.name.clone(),
            line: 0,
            msg: e.to_string(),
        };
        for (date, &open) in self.dates.iter().zip(&self.opens) {
            wtr.serialize(Row { date: date.clone(), open }).map_err(to_err)?;
        }
        wtr.flush().map_err(|e| Error::io(&self.name, e))?;
        Ok(())
    }

    pub fn max_normalize(&self) -> PriceSeries {
        max_normalize(self)
    }
}

/// Divide every price by the series maximum.
pub fn max_normalize(series: &PriceSeries) -> PriceSeries {
    let max = series.opens.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    PriceSeries {
        name: series.name.clone(),
        dates: series.dates.clone(),
        opens: series.opens.iter().map(|p| p / max).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<PriceSeries> {
        PriceSeries::read_csv(text.as_bytes(), "t", "t.csv")
    }

    #[test]
    fn parses_valid_rows() {
        let s = parse("date,open\n2020-01-02,1.5\n2020-01-03,1.6\n2020-01-06,1.4\n").unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.opens, vec![1.5, 1.6, 1.4]);
    }

    #[test]
    fn negative_price_names_the_row() {
        let err = parse("date,open\n2020-01-02,1.5\n2020-01-03,-1\n").unwrap_err();
        match err {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 3);
                assert!(msg.contains("positive"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unsorted_dates_rejected() {
        let err = parse("date,open\n2020-01-03,1\n2020-01-02,1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn malformed_row_rejected() {
        assert!(matches!(parse("date,open\n2020-01-03,abc\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse("day,price\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn csv_round_trip() {
        let s = PriceSeries::new("x", vec!["2021-05-01".into(), "2021-05-02".into()], vec![0.1 + 0.2, 1.0 / 3.0]).unwrap();
        let mut buf = Vec::new();
        s.write_csv_to(&mut buf).unwrap();
        let back = PriceSeries::read_csv(buf.as_slice(), "x", "mem").unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn normalization_examples() {
        let s = PriceSeries::new("a", vec!["d".into(); 3], vec![2.0, 4.0, 8.0]).unwrap();
        assert_eq!(max_normalize(&s).opens, vec![0.25, 0.5, 1.0]);
        let c = PriceSeries::new("c", vec!["d".into(); 2], vec![3.7, 3.7]).unwrap();
        assert_eq!(max_normalize(&c).opens, vec![1.0, 1.0]);
        let once = max_normalize(&s);
        assert_eq!(max_normalize(&once), once);
    }
}
