//! CSV export of learned embeddings, role vectors and patterns.

use std::io::{Read, Write};

use super::{ModelParams, Scorer, TensorId};
use crate::error::{RamError, Result};

fn csv_err(e: csv::Error) -> RamError {
    RamError::Data(format!("csv: {e}"))
}

fn fmt(x: f64) -> String {
    // shortest representation that round-trips
    format!("{x:?}")
}

/// One row per entity: `name, v_0 … v_{m·d−1}` (row-major `m×d`).
pub fn export_entities_csv<W: Write>(params: &ModelParams, names: &[String], out: W) -> Result<()> {
    let md = params.config.m * params.config.d;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["entity".to_string()];
    header.extend((0..md).map(|i| format!("c{}_{}", i / params.config.d, i % params.config.d)));
    w.write_record(&header).map_err(csv_err)?;
    for e in 0..params.n_entities() {
        let name = names.get(e).cloned().unwrap_or_else(|| e.to_string());
        let mut row = vec![name];
        row.extend(params.entity(e).iter().map(|&x| fmt(x)));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Read an entity CSV written by [`export_entities_csv`] back into `params`.
/// Rows are matched by position.
pub fn import_entities_csv<R: Read>(params: &mut ModelParams, input: R) -> Result<()> {
    let md = params.config.m * params.config.d;
    let n = params.n_entities();
    let mut r = csv::Reader::from_reader(input);
    let mut data = Vec::with_capacity(n * md);
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != md + 1 {
            return Err(RamError::Data(format!("row {i}: {} fields, expected {}", rec.len(), md + 1)));
        }
        for field in rec.iter().skip(1) {
            data.push(
                field
                    .parse::<f64>()
                    .map_err(|e| RamError::Data(format!("row {i}: {e}")))?,
            );
        }
    }
    if data.len() != n * md {
        return Err(RamError::Data(format!(
            "{} entity rows, expected {n}",
            data.len() / md.max(1)
        )));
    }
    params.tensor_mut(TensorId::Entity).data = data;
    Ok(())
}

/// One row per (relation, position, role-embedding index):
/// `relation, position, j, u_0 … u_{d−1}`.
pub fn export_roles_csv<W: Write>(params: &ModelParams, relation_names: &[String], out: W) -> Result<()> {
    let scorer = Scorer::new(params);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["relation".to_string(), "position".into(), "j".into()];
    header.extend((0..params.config.d).map(|l| format!("u{l}")));
    w.write_record(&header).map_err(csv_err)?;
    for (r, &a) in params.layout.relation_arity.iter().enumerate() {
        let rname = relation_names.get(r).cloned().unwrap_or_else(|| r.to_string());
        for i in 0..a {
            for term in scorer.terms(r, i).iter().filter(|t| t.sub == 0) {
                let mut row = vec![rname.clone(), i.to_string(), term.j.to_string()];
                row.extend(term.u.iter().map(|&x| fmt(x)));
                w.write_record(&row).map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per pattern row: `relation, position, term, omega, row, p_0 … p_{m−1}`.
pub fn export_patterns_csv<W: Write>(params: &ModelParams, relation_names: &[String], out: W) -> Result<()> {
    let scorer = Scorer::new(params);
    let m = params.config.m;
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["relation", "position", "term", "omega", "row"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..m).map(|c| format!("p{c}")));
    w.write_record(&header).map_err(csv_err)?;
    for (r, &a) in params.layout.relation_arity.iter().enumerate() {
        let rname = relation_names.get(r).cloned().unwrap_or_else(|| r.to_string());
        for i in 0..a {
            for (t, term) in scorer.terms(r, i).iter().enumerate() {
                for row_idx in 0..a {
                    let mut row = vec![
                        rname.clone(),
                        i.to_string(),
                        t.to_string(),
                        fmt(term.omega),
                        row_idx.to_string(),
                    ];
                    row.extend(term.p[row_idx * m..(row_idx + 1) * m].iter().map(|&x| fmt(x)));
                    w.write_record(&row).map_err(csv_err)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}
