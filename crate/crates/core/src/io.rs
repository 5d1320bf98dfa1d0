//! CSV reading and writing.
//!
//! Every table may start with `# key=value` metadata lines. Floats are
//! written in shortest round-trip scientific notation, so re-reading a file
//! recovers the exact values and identical inputs give identical bytes.

use std::io::{Read, Write};

use csv::{ReaderBuilder, StringRecord, Trim};

use crate::error::{Error, Result};
use crate::qdyne::SrTrace;
use crate::sensmodel::SensitivityCurve;
use crate::spectrum::AmplitudeSpectrum;

pub fn format_float(x: f64) -> String {
    format!("{x:e}")
}

pub fn write_meta<W: Write + ?Sized>(w: &mut W, meta: &[(String, String)]) -> Result<()> {
    for (k, v) in meta {
        writeln!(w, "# {k}={v}")?;
    }
    Ok(())
}

pub fn write_table<W: Write + ?Sized>(
    w: &mut W,
    meta: &[(String, String)],
    header: &[&str],
    rows: &[Vec<f64>],
) -> Result<()> {
    write_meta(w, meta)?;
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|x| format_float(*x)).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// A numeric table with its metadata and column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub meta: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// File line of each row, for error messages.
    pub row_lines: Vec<u64>,
}

impl Table {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

fn read_text<R: Read>(mut r: R) -> Result<String> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    Ok(text)
}

fn parse_meta(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.trim_start().strip_prefix('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Data records with their 1-based file line. Records are parsed one line
/// at a time so the numbering counts comment and blank lines too.
fn records(text: &str) -> impl Iterator<Item = Result<(u64, StringRecord)>> + '_ {
    text.lines().enumerate().filter_map(|(i, l)| {
        let t = l.trim();
        if t.is_empty() || t.starts_with('#') {
            return None;
        }
        let line = i as u64 + 1;
        let mut rdr = ReaderBuilder::new()
            .has_headers(false)
            .trim(Trim::All)
            .flexible(true)
            .from_reader(l.as_bytes());
        rdr.records().next().map(|r| {
            r.map(|rec| (line, rec))
                .map_err(|e| Error::Parse { line, message: e.to_string() })
        })
    })
}

fn parse_cell(s: &str, line: u64, column: usize) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("column {} is not a number: {s:?}", column + 1),
    })
}

/// Reads a table whose first non-comment row is a header.
pub fn read_table<R: Read>(r: R) -> Result<Table> {
    let text = read_text(r)?;
    let mut it = records(&text);
    let header: Vec<String> = match it.next() {
        Some(rec) => rec?.1.iter().map(str::to_string).collect(),
        None => return Err(Error::Parse { line: 0, message: "file has no header row".into() }),
    };
    let mut rows = Vec::new();
    let mut row_lines = Vec::new();
    for rec in it {
        let (line, rec) = rec?;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} columns, found {}", header.len(), rec.len()),
            });
        }
        rows.push(
            rec.iter()
                .enumerate()
                .map(|(c, s)| if s.is_empty() { Ok(f64::NAN) } else { parse_cell(s, line, c) })
                .collect::<Result<Vec<f64>>>()?,
        );
        row_lines.push(line);
    }
    Ok(Table { meta: parse_meta(&text), header, rows, row_lines })
}

/// Reads `x,y` pairs. A first row that is not numeric is taken as a header.
pub fn read_two_column<R: Read>(r: R) -> Result<Vec<(f64, f64)>> {
    let text = read_text(r)?;
    let mut out = Vec::new();
    for (i, rec) in records(&text).enumerate() {
        let (line, rec) = rec?;
        if rec.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 columns, found {}", rec.len()),
            });
        }
        let x = rec[0].parse::<f64>();
        let y = rec[1].parse::<f64>();
        if i == 0 && x.is_err() && y.is_err() {
            continue;
        }
        let x = parse_cell(&rec[0], line, 0)?;
        let y = parse_cell(&rec[1], line, 1)?;
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::Parse { line, message: "values must be finite".into() });
        }
        out.push((x, y));
    }
    if out.is_empty() {
        return Err(Error::Parse { line: 0, message: "file has no data rows".into() });
    }
    Ok(out)
}

pub const TRACE_HEADER: [&str; 3] = ["index", "time_s", "value"];

pub fn write_trace<W: Write + ?Sized>(w: &mut W, provenance: &[(String, String)], trace: &SrTrace) -> Result<()> {
    let mut meta = provenance.to_vec();
    meta.push(("seed".into(), trace.seed.to_string()));
    meta.push(("dwell_s".into(), format_float(trace.dwell)));
    meta.extend(trace.meta.iter().cloned());
    write_meta(w, &meta)?;
    writeln!(w, "{}", TRACE_HEADER.join(","))?;
    for (i, x) in trace.samples.iter().enumerate() {
        writeln!(w, "{i},{},{}", format_float(trace.time(i)), format_float(*x))?;
    }
    Ok(())
}

/// Reads a trace written by [`write_trace`] or any `index,time_s,value`
/// table. The dwell comes from the `dwell_s` metadata when present and from
/// the time column otherwise.
pub fn read_trace<R: Read>(r: R) -> Result<SrTrace> {
    let table = read_table(r)?;
    if table.header != TRACE_HEADER {
        return Err(Error::Parse {
            line: 0,
            message: format!("expected columns {}", TRACE_HEADER.join(",")),
        });
    }
    for (i, row) in table.rows.iter().enumerate() {
        if row[0] != i as f64 {
            return Err(Error::Parse {
                line: table.row_lines[i],
                message: format!("index {} out of sequence, expected {i}", row[0]),
            });
        }
    }
    let dwell = match table.meta_value("dwell_s") {
        Some(v) => v.parse::<f64>().map_err(|_| Error::Parse {
            line: 0,
            message: format!("dwell_s metadata is not a number: {v:?}"),
        })?,
        None if table.rows.len() >= 2 => table.rows[1][1] - table.rows[0][1],
        None => {
            return Err(Error::InvalidInput(
                "cannot infer the dwell time from a single sample".into(),
            ))
        }
    };
    let seed = table.meta_value("seed").and_then(|v| v.parse().ok()).unwrap_or(0);
    let samples = table.rows.iter().map(|r| r[2]).collect();
    let mut trace = SrTrace::new(dwell, samples, seed)?;
    trace.meta = table
        .meta
        .into_iter()
        .filter(|(k, _)| k != "seed" && k != "dwell_s")
        .collect();
    Ok(trace)
}

pub const SPECTRUM_HEADER: [&str; 3] = ["bin", "frequency_hz", "amplitude"];

pub fn write_spectrum<W: Write + ?Sized>(
    w: &mut W,
    meta: &[(String, String)],
    spec: &AmplitudeSpectrum,
) -> Result<()> {
    write_meta(w, meta)?;
    writeln!(w, "{}", SPECTRUM_HEADER.join(","))?;
    for (k, a) in spec.amplitudes.iter().enumerate() {
        writeln!(w, "{k},{},{}", format_float(spec.frequency(k)), format_float(*a))?;
    }
    Ok(())
}

pub const CURVE_HEADER: [&str; 8] =
    ["f_Hz", "tau_s", "t_laser_s", "S", "C", "phi_rad", "eta_rel", "eta_abs"];

/// One row per feasible point; `eta_abs` is empty until the curve is
/// anchored.
pub fn write_curve<W: Write + ?Sized>(
    w: &mut W,
    meta: &[(String, String)],
    curve: &SensitivityCurve,
) -> Result<()> {
    write_meta(w, meta)?;
    writeln!(w, "{}", CURVE_HEADER.join(","))?;
    for p in &curve.points {
        let abs = curve.eta_abs(p).map(format_float).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{abs}",
            format_float(p.f_ac),
            format_float(p.tau),
            format_float(p.t_laser),
            format_float(p.s_value),
            format_float(p.c_value),
            format_float(p.phi),
            format_float(p.eta_rel),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensmodel::{sweep, ModelConfig};
    use crate::spectrum::{amplitude_spectrum, parseval_residual};
    use proptest::prelude::*;

    #[test]
    fn two_column_with_header_and_comments() {
        let text = "# calibration\nfrequency,field\n1e5, 2e-7\n\n2e5,3e-7\n";
        let rows = read_two_column(text.as_bytes()).unwrap();
        assert_eq!(rows, vec![(1e5, 2e-7), (2e5, 3e-7)]);
        let bare = read_two_column("1,2\n3,4\n".as_bytes()).unwrap();
        assert_eq!(bare.len(), 2);
    }

    #[test]
    fn two_column_errors_name_the_line() {
        let err = read_two_column("t,s\n1,2\n3,x\n".as_bytes()).unwrap_err();
        assert_eq!(err, Error::Parse { line: 3, message: "column 2 is not a number: \"x\"".into() });
        let err = read_two_column("# c\n1,2,3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
        assert!(read_two_column("t,s\n".as_bytes()).is_err());
    }

    #[test]
    fn trace_round_trip_is_exact() {
        let mut t = SrTrace::new(50e-6, vec![0.1, -1.0 / 3.0, 2.5e-17, 7.0], 42).unwrap();
        t.meta.push(("f_ac_hz".into(), "996000".into()));
        let mut buf = Vec::new();
        write_trace(&mut buf, &[("tool".into(), "x".into())], &t).unwrap();
        let back = read_trace(buf.as_slice()).unwrap();
        assert_eq!(back.samples, t.samples);
        assert_eq!(back.dwell, t.dwell);
        assert_eq!(back.seed, 42);
        assert!(back.meta.contains(&("f_ac_hz".into(), "996000".into())));
    }

    #[test]
    fn trace_without_meta_uses_time_column() {
        let t = read_trace("index,time_s,value\n0,0,1\n1,2e-3,2\n".as_bytes()).unwrap();
        assert_eq!(t.dwell, 2e-3);
        let err = read_trace("index,time_s,value\n0,0,1\n2,2e-3,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        assert!(read_trace("a,b\n0,1\n".as_bytes()).is_err());
    }

    #[test]
    fn spectrum_file_keeps_parseval() {
        let x: Vec<f64> = (0..64).map(|i| ((i * 7 % 11) as f64).sin()).collect();
        let t = SrTrace::new(1e-3, x.clone(), 0).unwrap();
        let spec = amplitude_spectrum(&t).unwrap();
        let mut buf = Vec::new();
        write_spectrum(&mut buf, &[], &spec).unwrap();
        let table = read_table(buf.as_slice()).unwrap();
        let mut reread = spec.clone();
        reread.amplitudes = table.column("amplitude").unwrap();
        assert_eq!(reread.amplitudes, spec.amplitudes);
        assert!(parseval_residual(&x, &reread) < 1e-9);
    }

    #[test]
    fn curve_columns() {
        let curve = sweep(&ModelConfig::default(), &[0.5e6, 1e6]).unwrap();
        let mut buf = Vec::new();
        write_curve(&mut buf, &[], &curve).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CURVE_HEADER.join(","));
        assert!(lines.next().unwrap().ends_with(','));
    }

    proptest! {
        #[test]
        fn float_format_round_trips(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            prop_assert_eq!(format_float(x).parse::<f64>().unwrap(), x);
        }
    }
}
