//! Bundle files: a CSV of values plus a JSON sidecar of generation metadata.
//!
//! The CSV has header `t,p0,p1,...,p{N-1}` and one row per grid node. Values
//! are written with 17 significant digits, so reading a file back yields the
//! exact same `f64`s.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{PathBundle, SdeModel, TimeGrid};

/// Contents of the JSON sidecar written next to a bundle CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleMeta {
    /// Built-in model id, when the bundle came from one.
    pub model_id: Option<u8>,
    pub model: String,
    pub n_paths: usize,
    pub steps: usize,
    pub horizon: f64,
    pub lambda: f64,
    pub x0: f64,
    pub seed: u64,
}

impl BundleMeta {
    pub fn describe(model: &SdeModel, bundle: &PathBundle) -> Self {
        Self {
            model_id: model.builtin_id,
            model: model.name.clone(),
            n_paths: bundle.n_paths(),
            steps: bundle.grid().steps,
            horizon: bundle.grid().horizon,
            lambda: model.intensity,
            x0: model.x0,
            seed: bundle.seed(),
        }
    }
}

/// `paths.csv` → `paths.json`
pub fn sidecar_path(csv_path: &FsPath) -> PathBuf {
    csv_path.with_extension("json")
}

#[inline]
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_bundle_csv<W: Write>(bundle: &PathBundle, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = bundle.n_paths();
    let mut header = Vec::with_capacity(n + 1);
    header.push("t".to_string());
    header.extend((0..n).map(|i| format!("p{i}")));
    w.write_record(&header).map_err(csv_io)?;

    let mut row = Vec::with_capacity(n + 1);
    for (l, t) in bundle.grid().nodes().enumerate() {
        row.clear();
        row.push(format_value(t));
        row.extend(bundle.paths().map(|p| format_value(p[l])));
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `csv_path` and its sidecar.
pub fn save_bundle(bundle: &PathBundle, meta: &BundleMeta, csv_path: &FsPath) -> Result<()> {
    write_bundle_csv(bundle, BufWriter::new(File::create(csv_path)?))?;
    let mut side = BufWriter::new(File::create(sidecar_path(csv_path))?);
    serde_json::to_writer_pretty(&mut side, meta)?;
    side.write_all(b"\n")?;
    side.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Parses a bundle CSV. `file` only labels errors.
pub fn read_bundle_csv<R: std::io::Read>(input: R, file: &FsPath, seed: u64) -> Result<PathBundle> {
    let parse_err = |row: usize, message: String| Error::Parse {
        file: file.to_path_buf(),
        row,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.get(0) != Some("t") || header.len() < 2 {
        return Err(parse_err(1, "header must start with `t` followed by path columns".into()));
    }
    for (i, name) in header.iter().skip(1).enumerate() {
        if name != format!("p{i}") {
            return Err(parse_err(1, format!("expected column `p{i}`, found `{name}`")));
        }
    }
    let n_paths = header.len() - 1;

    let mut times = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); n_paths];
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| parse_err(row, e.to_string()))?;
        if rec.len() != n_paths + 1 {
            return Err(parse_err(row, format!("expected {} fields, found {}", n_paths + 1, rec.len())));
        }
        let mut fields = rec.iter().map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| parse_err(row, format!("`{s}`: {e}")))
                .and_then(|v| {
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(parse_err(row, format!("non-finite value `{s}`")))
                    }
                })
        });
        times.push(fields.next().unwrap()?);
        for col in columns.iter_mut() {
            col.push(fields.next().unwrap()?);
        }
    }
    if times.len() < 2 {
        return Err(parse_err(times.len() + 1, "need at least two grid nodes".into()));
    }
    let steps = times.len() - 1;
    let horizon = times[steps];
    if times[0] != 0.0 {
        return Err(parse_err(2, "first time node must be 0".into()));
    }
    let grid = TimeGrid::new(horizon, steps).map_err(|e| parse_err(2, e.to_string()))?;
    for (l, &t) in times.iter().enumerate() {
        if (t - grid.node(l)).abs() > 1e-9 * horizon {
            return Err(parse_err(l + 2, format!("time {t} is off the uniform grid (expected {})", grid.node(l))));
        }
    }
    PathBundle::from_paths(grid, seed, columns)
}

/// Loads a bundle CSV and, if present, its sidecar.
pub fn load_bundle(csv_path: &FsPath) -> Result<(PathBundle, Option<BundleMeta>)> {
    let side = sidecar_path(csv_path);
    let meta: Option<BundleMeta> = if side.exists() {
        Some(serde_json::from_reader(BufReader::new(File::open(&side)?))?)
    } else {
        None
    };
    let seed = meta.as_ref().map_or(0, |m| m.seed);
    let bundle = read_bundle_csv(BufReader::new(File::open(csv_path)?), csv_path, seed)?;
    if let Some(m) = &meta {
        if m.n_paths != bundle.n_paths() || m.steps != bundle.grid().steps {
            return Err(Error::Parse {
                file: side,
                row: 0,
                message: format!(
                    "sidecar says {}x{} but CSV holds {} paths of {} steps",
                    m.n_paths,
                    m.steps,
                    bundle.n_paths(),
                    bundle.grid().steps
                ),
            });
        }
    }
    Ok((bundle, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{builtin_model, simulate_bundle};

    fn small_bundle() -> PathBundle {
        let model = builtin_model(2).unwrap();
        simulate_bundle(&model, &TimeGrid::new(5.0, 20).unwrap(), 4, 11).unwrap()
    }

    #[test]
    fn header_and_shape() {
        let b = small_bundle();
        let mut buf = Vec::new();
        write_bundle_csv(&b, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,p0,p1,p2,p3");
        assert_eq!(text.lines().count(), 22);
        let first = text.lines().nth(1).unwrap();
        assert!(first.starts_with("0.0000000000000000e0,5.0000000000000000e-1"));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let b = small_bundle();
        let mut buf = Vec::new();
        write_bundle_csv(&b, &mut buf).unwrap();
        let back = read_bundle_csv(&buf[..], FsPath::new("mem.csv"), b.seed()).unwrap();
        assert_eq!(back.grid(), b.grid());
        for (p, q) in back.paths().zip(b.paths()) {
            assert_eq!(p, q);
        }
    }

    #[test]
    fn malformed_rows_are_named() {
        let text = "t,p0,p1\n0,0.5,0.5\n1,0.4,oops\n";
        match read_bundle_csv(text.as_bytes(), FsPath::new("bad.csv"), 0) {
            Err(Error::Parse { row, message, .. }) => {
                assert_eq!(row, 3);
                assert!(message.contains("oops"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let short = "t,p0,p1\n0,0.5,0.5\n1,0.4\n";
        assert!(matches!(
            read_bundle_csv(short.as_bytes(), FsPath::new("bad.csv"), 0),
            Err(Error::Parse { row: 3, .. })
        ));
        let header = "time,p0\n0,1\n1,1\n";
        assert!(matches!(
            read_bundle_csv(header.as_bytes(), FsPath::new("bad.csv"), 0),
            Err(Error::Parse { row: 1, .. })
        ));
        let uneven = "t,p0\n0,1\n1,1\n3,1\n";
        assert!(matches!(
            read_bundle_csv(uneven.as_bytes(), FsPath::new("bad.csv"), 0),
            Err(Error::Parse { row: 3, .. })
        ));
    }

    #[test]
    fn save_and_load_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("paths.csv");
        let model = builtin_model(1).unwrap();
        let b = simulate_bundle(&model, &TimeGrid::new(5.0, 10).unwrap(), 3, 99).unwrap();
        let meta = BundleMeta::describe(&model, &b);
        save_bundle(&b, &meta, &path).unwrap();
        let (back, side) = load_bundle(&path).unwrap();
        assert_eq!(side.as_ref(), Some(&meta));
        assert_eq!(back.seed(), 99);
        assert_eq!(back.path(2), b.path(2));
    }

    proptest::proptest! {
        #[test]
        fn value_format_round_trips(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let s = format_value(v);
            proptest::prop_assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }
}
