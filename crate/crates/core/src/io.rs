//! Serialization of distributions, trajectories and reports.
//!
//! Every float is written with 17 significant digits, which round-trips
//! `f64` exactly. Files are written under a temporary name in the target
//! directory and renamed into place.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::evolution::TrajectoryRecord;
use crate::grid::{Grid, SizeDistribution};

/// `d.dddddddddddddddde±x`; non-finite values spell themselves out.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

struct Pretty17 {
    inner: PrettyFormatter<'static>,
}

impl Formatter for Pretty17 {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fmt17(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(value))
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_value(w)
    }
}

/// Pretty-printed JSON with 17-digit floats and a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> io::Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Pretty17 { inner: PrettyFormatter::new() });
    value.serialize(&mut ser).map_err(io::Error::other)?;
    out.push(b'\n');
    Ok(out)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "output path has no file name"))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> io::Result<()> {
    write_atomic(path, &to_json(value)?)
}

pub fn distribution_csv(grid: &Grid, phi: &SizeDistribution) -> String {
    let mut s = String::from("x,dx,phi\n");
    for ((&x, &dx), &v) in grid.pivots().iter().zip(grid.widths()).zip(phi.values()) {
        let _ = writeln!(s, "{},{},{}", fmt17(x), fmt17(dx), fmt17(v));
    }
    s
}

/// Appends the rows of `record` with times shifted by `t_offset`.
pub fn trajectory_rows(s: &mut String, record: &TrajectoryRecord, t_offset: f64) {
    for p in &record.points {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            fmt17(t_offset + p.t),
            fmt17(p.m0),
            fmt17(p.m_lambda),
            fmt17(p.m1),
            fmt17(p.m1_lambda),
            fmt17(p.overflow_mass)
        );
    }
}

pub const TRAJECTORY_HEADER: &str = "t,M0,Mlambda,M1,M1plambda,overflow_mass\n";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, 6.02214076e23, -2.5e-300, 0.0] {
            let s = fmt17(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-');
            assert_eq!(mantissa.chars().filter(char::is_ascii_digit).count(), 17);
        }
    }

    #[test]
    fn json_floats_and_nan() {
        #[derive(Serialize)]
        struct T {
            a: f64,
            b: f64,
            n: u32,
        }
        let out = String::from_utf8(to_json(&T { a: 0.1, b: f64::NAN, n: 3 }).unwrap()).unwrap();
        assert!(out.contains("\"a\": 1.0000000000000001e-1"), "{out}");
        assert!(out.contains("\"b\": null") && out.contains("\"n\": 3"), "{out}");
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["a"].as_f64(), Some(0.1));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
