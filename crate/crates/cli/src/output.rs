//! Tables and records written as JSON or CSV with 17 significant digits.

use serde::ser::{SerializeMap, SerializeSeq};
use serde::{Serialize, Serializer};
use std::io::{self, Write};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Bool(bool),
    List(Vec<f64>),
    Null,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Null, Cell::Num)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

/// `{:.16e}` keeps every double exact on a round trip.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

impl Cell {
    fn csv_field(&self) -> String {
        match self {
            Cell::Num(v) => fmt_f64(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
            Cell::List(v) => v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(";"),
            Cell::Null => String::new(),
        }
    }
}

impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            // Non-finite values have no JSON literal.
            Cell::Num(v) if v.is_finite() => s.serialize_f64(*v),
            Cell::Num(v) => s.serialize_str(&fmt_f64(*v)),
            Cell::Int(v) => s.serialize_u64(*v),
            Cell::Text(t) => s.serialize_str(t),
            Cell::Bool(b) => s.serialize_bool(*b),
            Cell::List(v) => {
                let mut seq = s.serialize_seq(Some(v.len()))?;
                for x in v {
                    seq.serialize_element(&Cell::Num(*x))?;
                }
                seq.end()
            }
            Cell::Null => s.serialize_none(),
        }
    }
}

/// Named fields in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Record(pub Vec<(String, Cell)>);

impl Record {
    pub fn push(&mut self, key: &str, v: impl Into<Cell>) {
        self.0.push((key.to_string(), v.into()));
    }

    pub fn with(mut self, key: &str, v: impl Into<Cell>) -> Self {
        self.push(key, v);
        self
    }
}

impl Serialize for Record {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

struct RowRef<'a>(&'a [String], &'a [Cell]);

impl Serialize for RowRef<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in self.0.iter().zip(self.1) {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

impl Serialize for Table {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.rows.len()))?;
        for r in &self.rows {
            seq.serialize_element(&RowRef(&self.columns, r))?;
        }
        seq.end()
    }
}

/// What a command produces.
#[derive(Clone, Debug, PartialEq)]
pub enum Output {
    Record(Record),
    Table(Table),
    /// Spec-level summary plus per-sample rows. In CSV the summary fields
    /// are repeated on every row.
    Report { summary: Record, samples: Table },
}

struct Exact<F>(F);

impl<F: serde_json::ser::Formatter> serde_json::ser::Formatter for Exact<F> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        w.write_all(fmt_f64(v).as_bytes())
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

fn write_json<W: Write, T: Serialize>(w: &mut W, v: &T) -> io::Result<()> {
    let mut ser = serde_json::Serializer::with_formatter(&mut *w, Exact(serde_json::ser::PrettyFormatter::new()));
    v.serialize(&mut ser).map_err(io::Error::other)?;
    writeln!(w)
}

fn write_csv<W: Write>(w: W, columns: &[String], rows: &[Vec<Cell>]) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(columns)?;
    for r in rows {
        out.write_record(r.iter().map(Cell::csv_field))?;
    }
    out.flush()
}

impl Output {
    pub fn write<W: Write>(&self, mut w: W, format: Format) -> io::Result<()> {
        match (self, format) {
            (Output::Record(r), Format::Json) => write_json(&mut w, r),
            (Output::Table(t), Format::Json) => write_json(&mut w, t),
            (Output::Report { summary, samples }, Format::Json) => write_json(&mut w, &ReportRef(summary, samples)),
            (Output::Record(r), Format::Csv) => {
                let cols: Vec<String> = r.0.iter().map(|(k, _)| k.clone()).collect();
                write_csv(w, &cols, &[r.0.iter().map(|(_, v)| v.clone()).collect()])
            }
            (Output::Table(t), Format::Csv) => write_csv(w, &t.columns, &t.rows),
            (Output::Report { summary, samples }, Format::Csv) => {
                let mut cols = samples.columns.clone();
                cols.extend(summary.0.iter().map(|(k, _)| k.clone()));
                let rows: Vec<Vec<Cell>> = samples
                    .rows
                    .iter()
                    .map(|r| r.iter().cloned().chain(summary.0.iter().map(|(_, v)| v.clone())).collect())
                    .collect();
                write_csv(w, &cols, &rows)
            }
        }
    }
}

struct ReportRef<'a>(&'a Record, &'a Table);

impl Serialize for ReportRef<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0 .0.len() + 1))?;
        for (k, v) in &self.0 .0 {
            map.serialize_entry(k, v)?;
        }
        map.serialize_entry("samples", self.1)?;
        map.end()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn render(o: &Output, f: Format) -> String {
        let mut buf = Vec::new();
        o.write(&mut buf, f).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            let s = fmt_f64(v);
            assert_eq!(s.split('e').next().unwrap().chars().filter(|c| c.is_ascii_digit()).count(), 17);
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn json_and_csv_carry_the_same_digits() {
        let r = Record::default().with("a", 0.1).with("b", "x").with("c", Cell::Null);
        let j = render(&Output::Record(r.clone()), Format::Json);
        let c = render(&Output::Record(r), Format::Csv);
        assert!(j.contains("1.0000000000000001e-1"));
        assert!(c.contains("1.0000000000000001e-1"));
        let v: serde_json::Value = serde_json::from_str(&j).unwrap();
        assert_eq!(v["a"].as_f64().unwrap(), 0.1);
        assert!(v["c"].is_null());
    }

    #[test]
    fn report_csv_repeats_summary() {
        let o = Output::Report {
            summary: Record::default().with("kind", "generic"),
            samples: Table { columns: vec!["t".into()], rows: vec![vec![Cell::Num(1.0)], vec![Cell::Num(2.0)]] },
        };
        let c = render(&o, Format::Csv);
        assert_eq!(c.lines().count(), 3);
        assert!(c.lines().skip(1).all(|l| l.ends_with(",generic")));
        let v: serde_json::Value = serde_json::from_str(&render(&o, Format::Json)).unwrap();
        assert_eq!(v["samples"].as_array().unwrap().len(), 2);
    }
}
