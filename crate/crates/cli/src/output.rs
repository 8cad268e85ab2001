//! CSV and JSON-lines writers for flat records.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde_json::{Map, Value};

use crate::records::{Record, PARAM_KEYS};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}`")),
        }
    }
}

/// Column names in declaration order.
pub fn header<R: Record>() -> Vec<String> {
    match serde_json::to_value(R::default()) {
        Ok(Value::Object(map)) => map.keys().cloned().collect(),
        _ => unreachable!("records serialize to objects"),
    }
}

fn to_io(e: impl std::error::Error + Send + Sync + 'static) -> io::Error {
    io::Error::other(e)
}

pub fn write_csv<R: Record, W: Write>(records: &[R], out: W) -> io::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(header::<R>()).map_err(to_io)?;
    for r in records {
        w.serialize(r).map_err(to_io)?;
    }
    w.flush()
}

/// The record as a JSON object with the model parameters nested under
/// `params` and absent optional fields dropped.
pub fn json_object<R: Record>(record: &R) -> io::Result<Value> {
    let Value::Object(flat) = serde_json::to_value(record).map_err(to_io)? else {
        unreachable!("records serialize to objects");
    };
    let mut params = Map::new();
    let mut rest = Map::new();
    for (k, v) in flat {
        if v.is_null() {
            continue;
        }
        if PARAM_KEYS.contains(&k.as_str()) {
            params.insert(k, v);
        } else {
            rest.insert(k, v);
        }
    }
    let mut obj = Map::new();
    if !params.is_empty() {
        obj.insert("params".into(), Value::Object(params));
    }
    obj.extend(rest);
    Ok(Value::Object(obj))
}

pub fn write_json<R: Record, W: Write>(records: &[R], mut out: W) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, &json_object(r)?).map_err(to_io)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_records<R: Record>(records: &[R], format: Format, path: Option<&Path>) -> io::Result<()> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    match format {
        Format::Csv => write_csv(records, sink),
        Format::Json => write_json(records, sink),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::Num;
    use crate::records::ExactRecord;

    fn rec() -> ExactRecord {
        ExactRecord {
            m: 2,
            ell: 1,
            kappa: 2,
            sigma: Num(2.0),
            q: Num(0.25),
            theta: 1,
            log_e_tau0: Num(10.4f64.ln()),
            e_tau0: Some(Num(10.4)),
        }
    }

    #[test]
    fn csv_header_and_lf() {
        let mut buf = Vec::new();
        write_csv(&[rec()], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("m,ell,kappa,sigma,q,theta,log_e_tau0,e_tau0\n"));
        assert!(!text.contains('\r'));
        let mut empty = Vec::new();
        write_csv::<ExactRecord, _>(&[], &mut empty).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().lines().count(), 1);
    }

    #[test]
    fn json_nests_params_and_drops_nulls() {
        let mut r = rec();
        r.e_tau0 = None;
        let v = json_object(&r).unwrap();
        assert_eq!(v["params"]["m"], 2);
        assert!(v.get("m").is_none());
        assert!(v.get("e_tau0").is_none());
        assert!(v.get("log_e_tau0").is_some());
    }
}
