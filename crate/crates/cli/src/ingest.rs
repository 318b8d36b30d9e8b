//! Long-format CSV input and output.
//!
//! One row per observation: `subject_id, visit, t, y, x[, z1, …, zp]`. Every
//! visit must be observed on the same set of `t` values. Row numbers in
//! errors count the header as row 1.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use funfx_core::{FunctionalDataset, Subject, Visit};

use crate::error::{CliError, Result};

const REQUIRED: [&str; 5] = ["subject_id", "visit", "t", "y", "x"];

struct Columns {
    subject: usize,
    visit: usize,
    t: usize,
    y: usize,
    x: usize,
    z: Vec<usize>,
}

fn locate(headers: &csv::StringRecord) -> Result<Columns> {
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let missing: Vec<&str> = REQUIRED
        .iter()
        .copied()
        .filter(|c| find(c).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::data(
            format!("missing column(s): {}", missing.join(", ")),
            Some(1),
        ));
    }
    let mut z = Vec::new();
    for k in 1.. {
        match find(&format!("z{k}")) {
            Some(c) => z.push(c),
            None => break,
        }
    }
    Ok(Columns {
        subject: find("subject_id").unwrap(),
        visit: find("visit").unwrap(),
        t: find("t").unwrap(),
        y: find("y").unwrap(),
        x: find("x").unwrap(),
        z,
    })
}

fn number(rec: &csv::StringRecord, col: usize, name: &str, row: usize) -> Result<f64> {
    let cell = rec.get(col).unwrap_or("").trim();
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| {
            CliError::data(
                format!("row {row}: column {name}: '{cell}' is not a finite number"),
                Some(row),
            )
        })
}

struct RawVisit {
    first_row: usize,
    x: f64,
    z: Vec<f64>,
    points: Vec<(f64, f64, usize)>,
}

/// Reads a long-format CSV into a dataset, optionally applying `y → ln(1 + y)`.
pub fn ingest_csv(path: &Path, log1p: bool) -> Result<FunctionalDataset> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    read_long(file, log1p)
}

pub fn read_long<R: std::io::Read>(input: R, log1p: bool) -> Result<FunctionalDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| CliError::data(format!("cannot read header: {e}"), Some(1)))?
        .clone();
    let cols = locate(&headers)?;

    let mut order: Vec<String> = Vec::new();
    let mut visits: HashMap<String, Vec<(u64, RawVisit)>> = HashMap::new();
    for (k, rec) in reader.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| CliError::data(format!("row {row}: {e}"), Some(row)))?;
        let id = rec.get(cols.subject).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(CliError::data(
                format!("row {row}: empty subject_id"),
                Some(row),
            ));
        }
        let vcell = rec.get(cols.visit).unwrap_or("").trim();
        let visit: u64 = vcell.parse().ok().filter(|&v| v >= 1).ok_or_else(|| {
            CliError::data(
                format!("row {row}: visit '{vcell}' is not an integer ≥ 1"),
                Some(row),
            )
        })?;
        let t = number(&rec, cols.t, "t", row)?;
        if !(0.0..=1.0).contains(&t) {
            return Err(CliError::data(
                format!("row {row}: t = {t} lies outside [0, 1]"),
                Some(row),
            ));
        }
        let mut y = number(&rec, cols.y, "y", row)?;
        if log1p {
            if y <= -1.0 {
                return Err(CliError::data(
                    format!("row {row}: log1p needs y > -1, got {y}"),
                    Some(row),
                ));
            }
            y = y.ln_1p();
        }
        let x = number(&rec, cols.x, "x", row)?;
        let z = cols
            .z
            .iter()
            .enumerate()
            .map(|(i, &c)| number(&rec, c, &format!("z{}", i + 1), row))
            .collect::<Result<Vec<_>>>()?;

        let entry = visits.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Vec::new()
        });
        let raw = match entry.iter_mut().find(|(v, _)| *v == visit) {
            Some((_, raw)) => raw,
            None => {
                entry.push((
                    visit,
                    RawVisit {
                        first_row: row,
                        x,
                        z: z.clone(),
                        points: Vec::new(),
                    },
                ));
                &mut entry.last_mut().unwrap().1
            }
        };
        if raw.x != x || raw.z != z {
            return Err(CliError::data(
                format!(
                    "row {row}: subject {id} visit {visit}: covariates change within the visit"
                ),
                Some(row),
            ));
        }
        raw.points.push((t, y, row));
    }
    if order.is_empty() {
        return Err(CliError::data("no data rows", None));
    }

    let mut grid: Option<Vec<f64>> = None;
    let mut subjects = Vec::with_capacity(order.len());
    for id in &order {
        let mut vs = visits.remove(id).unwrap();
        vs.sort_by_key(|(v, _)| *v);
        let mut out = Vec::with_capacity(vs.len());
        for (visit, mut raw) in vs {
            raw.points.sort_by(|a, b| a.0.total_cmp(&b.0));
            if let Some(w) = raw.points.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(CliError::data(
                    format!(
                        "row {}: subject {id} visit {visit}: t = {} appears twice",
                        w[1].2, w[1].0
                    ),
                    Some(w[1].2),
                ));
            }
            let ts: Vec<f64> = raw.points.iter().map(|p| p.0).collect();
            match &grid {
                None => grid = Some(ts),
                Some(g) if *g != ts => {
                    let missing: Vec<String> = g
                        .iter()
                        .filter(|t| !ts.contains(t))
                        .map(|t| t.to_string())
                        .collect();
                    let extra: Vec<String> = ts
                        .iter()
                        .filter(|t| !g.contains(t))
                        .map(|t| t.to_string())
                        .collect();
                    let mut detail = Vec::new();
                    if !missing.is_empty() {
                        detail.push(format!("missing t = {}", missing.join(", ")));
                    }
                    if !extra.is_empty() {
                        detail.push(format!("unexpected t = {}", extra.join(", ")));
                    }
                    return Err(CliError::data(
                        format!(
                            "ragged grid: subject {id} visit {visit} (from row {}) does not match the common grid: {}",
                            raw.first_row,
                            detail.join("; ")
                        ),
                        Some(raw.first_row),
                    ));
                }
                Some(_) => {}
            }
            out.push(Visit {
                x: raw.x,
                z: raw.z,
                y: raw.points.iter().map(|p| p.1).collect(),
            });
        }
        subjects.push(Subject {
            id: id.clone(),
            visits: out,
        });
    }
    Ok(FunctionalDataset::new(grid.unwrap(), subjects)?)
}

/// Writes `ds` in the long format read by [`read_long`]. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_long<W: Write>(ds: &FunctionalDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "subject_id".to_string(),
        "visit".into(),
        "t".into(),
        "y".into(),
        "x".into(),
    ];
    header.extend((1..=ds.p()).map(|k| format!("z{k}")));
    let fail = |e: csv::Error| CliError::Io {
        path: "<csv>".into(),
        message: e.to_string(),
    };
    w.write_record(&header).map_err(fail)?;
    for s in ds.subjects() {
        for (j, v) in s.visits.iter().enumerate() {
            for (t, y) in ds.grid().iter().zip(&v.y) {
                let mut rec = vec![
                    s.id.clone(),
                    (j + 1).to_string(),
                    t.to_string(),
                    y.to_string(),
                    v.x.to_string(),
                ];
                rec.extend(v.z.iter().map(|z| z.to_string()));
                w.write_record(&rec).map_err(fail)?;
            }
        }
    }
    w.flush().map_err(|e| CliError::Io {
        path: "<csv>".into(),
        message: e.to_string(),
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "subject_id,visit,t,y,x
a,1,0,1.0,0.5
a,1,0.5,2.0,0.5
a,1,1,3.0,0.5
a,2,0,1.5,0.5
a,2,0.5,2.5,0.5
a,2,1,3.5,0.5
b,1,0,0.0,0.2
b,1,1,2.0,0.2
b,1,0.5,1.0,0.2
b,2,0,0.1,0.2
b,2,0.5,1.1,0.2
b,2,1,2.1,0.2
";

    #[test]
    fn toy_file() {
        let ds = read_long(TOY.as_bytes(), false).unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.grid(), &[0.0, 0.5, 1.0]);
        assert!(ds.subjects().iter().all(|s| s.visits.len() == 2));
        assert_eq!(ds.subjects()[1].visits[0].y, vec![0.0, 1.0, 2.0]);
        assert_eq!(ds.p(), 0);
    }

    #[test]
    fn missing_time_point_names_subject_and_visit() {
        let bad = TOY.replace("b,2,0.5,1.1,0.2\n", "");
        let err = read_long(bad.as_bytes(), false).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("subject b visit 2"), "{msg}");
        assert!(msg.contains("missing t = 0.5"), "{msg}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn non_numeric_cell_reports_row() {
        let bad = TOY.replace("a,1,0.5,2.0,0.5", "a,1,0.5,two,0.5");
        match read_long(bad.as_bytes(), false).unwrap_err() {
            CliError::Data { row, message } => {
                assert_eq!(row, Some(3));
                assert!(message.contains("column y"));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn missing_column() {
        let bad = TOY.replace("subject_id,visit,t,y,x", "subject_id,visit,t,y,w");
        assert!(read_long(bad.as_bytes(), false)
            .unwrap_err()
            .to_string()
            .contains("missing column(s): x"));
    }

    #[test]
    fn log1p_transform() {
        let ds = read_long(TOY.as_bytes(), true).unwrap();
        assert_eq!(ds.subjects()[0].visits[0].y[2], 3.0f64.ln_1p());
    }

    #[test]
    fn nuisance_columns_and_round_trip() {
        let text = "subject_id,visit,t,y,x,z1,z2
s,1,0,1,0.3,1,2
s,1,1,2,0.3,1,2
";
        let ds = read_long(text.as_bytes(), false).unwrap();
        assert_eq!(ds.p(), 2);
        let mut buf = Vec::new();
        write_long(&ds, &mut buf).unwrap();
        assert_eq!(read_long(buf.as_slice(), false).unwrap(), ds);
    }
}
