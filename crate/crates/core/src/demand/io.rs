//! Dataset persistence: CSV columns plus a JSON metadata sidecar.

use std::path::{Path, PathBuf};

use super::simulate::{DatasetMeta, SimulatedDataset};
use super::N_INSIDE;
use crate::error::{Error, Result};

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Writes `dataset` as CSV (`y1,..,p1,..,x,q1,..,s,v_true,v_hat`) with a
/// metadata sidecar next to it. Floats round-trip exactly through the
/// shortest decimal representation.
pub fn write_dataset(dataset: &SimulatedDataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let k_q = dataset.k_q();
    let mut header: Vec<String> = Vec::new();
    for g in 1..=N_INSIDE {
        header.push(format!("y{g}"));
    }
    for g in 1..=N_INSIDE {
        header.push(format!("p{g}"));
    }
    header.push("x".into());
    for k in 1..=k_q {
        header.push(format!("q{k}"));
    }
    header.push("s".into());
    header.push("v_true".into());
    header.push("v_hat".into());
    writer.write_record(&header)?;

    for r in 0..dataset.n() {
        let mut record: Vec<String> = Vec::with_capacity(header.len());
        for g in 0..N_INSIDE {
            record.push(format!("{}", dataset.y[g][r]));
        }
        for g in 0..N_INSIDE {
            record.push(format!("{}", dataset.p[g][r]));
        }
        record.push(format!("{}", dataset.x[r]));
        for k in 0..k_q {
            record.push(format!("{}", dataset.q[k][r]));
        }
        record.push(format!("{}", dataset.s[r]));
        record.push(format!("{}", dataset.v_true[r]));
        record.push(match &dataset.v_hat {
            Some(col) => format!("{}", col[r]),
            None => String::new(),
        });
        writer.write_record(&record)?;
    }
    writer.flush()?;

    let meta = serde_json::to_string_pretty(&dataset.meta).map_err(|e| Error::Json {
        source: e,
        context: Some("dataset metadata".into()),
    })?;
    std::fs::write(sidecar_path(path), meta)?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`].
pub fn read_dataset(path: &Path) -> Result<SimulatedDataset> {
    let meta_path = sidecar_path(path);
    let meta_text = std::fs::read_to_string(&meta_path).map_err(|e| {
        Error::State(format!(
            "missing metadata sidecar {}: {e}",
            meta_path.display()
        ))
    })?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text).map_err(|e| Error::Json {
        source: e,
        context: Some(format!("metadata sidecar {}", meta_path.display())),
    })?;

    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let k_q = header
        .iter()
        .filter(|h| h.starts_with('q') && h[1..].parse::<usize>().is_ok())
        .count();

    let mut out = SimulatedDataset {
        y: vec![Vec::new(); N_INSIDE],
        p: vec![Vec::new(); N_INSIDE],
        x: Vec::new(),
        q: vec![Vec::new(); k_q],
        s: Vec::new(),
        v_true: Vec::new(),
        v_hat: None,
        meta,
    };
    let mut v_hat: Vec<f64> = Vec::new();
    let mut any_v_hat = false;

    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let mut fields = record.iter();
        let mut next_f64 = |name: &str| -> Result<f64> {
            let raw = fields.next().ok_or_else(|| {
                Error::State(format!("row {}: missing column {name}", line + 2))
            })?;
            raw.parse::<f64>().map_err(|e| {
                Error::State(format!("row {}: column {name}: {e}", line + 2))
            })
        };
        for g in 0..N_INSIDE {
            let v = next_f64(&format!("y{}", g + 1))?;
            out.y[g].push(v);
        }
        for g in 0..N_INSIDE {
            let v = next_f64(&format!("p{}", g + 1))?;
            out.p[g].push(v);
        }
        out.x.push(next_f64("x")?);
        for k in 0..k_q {
            let v = next_f64(&format!("q{}", k + 1))?;
            out.q[k].push(v);
        }
        out.s.push(next_f64("s")?);
        out.v_true.push(next_f64("v_true")?);
        let raw_v_hat = fields.next().unwrap_or("");
        if raw_v_hat.is_empty() {
            v_hat.push(f64::NAN);
        } else {
            any_v_hat = true;
            v_hat.push(raw_v_hat.parse::<f64>().map_err(|e| {
                Error::State(format!("row {}: column v_hat: {e}", line + 2))
            })?);
        }
    }
    if any_v_hat {
        out.v_hat = Some(v_hat);
    }
    Ok(out)
}
