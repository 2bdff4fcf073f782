use std::fmt::Write;
use std::path::Path;

use super::{sigmoid, HistoryRow};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, parse_f64};

pub const HISTORY_HEADER: &str = "iter,phase,G,g,h,n_planes,max_mu";
pub const WEIGHTS_HEADER: &str = "sample_id,raw_w,sigmoid_w";

/// Unmonitored `g`/`h` cells are left empty.
pub fn history_csv(rows: &[HistoryRow]) -> String {
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iter,
            r.phase,
            fmt_f64(r.big_g),
            opt(r.g),
            opt(r.h),
            r.n_planes,
            fmt_f64(r.max_mu)
        );
    }
    out
}

/// `ids[i]` names the sample that `w[i]` weights.
pub fn weights_csv(ids: &[usize], w: &[f64]) -> String {
    let mut out = format!("{WEIGHTS_HEADER}\n");
    for (id, &x) in ids.iter().zip(w) {
        let _ = writeln!(out, "{id},{},{}", fmt_f64(x), fmt_f64(sigmoid(x)));
    }
    out
}

/// Reads a weights CSV back as `(sample_id, raw_w)` pairs in file order.
pub fn parse_weights_csv(text: &str, path: &Path) -> Result<Vec<(usize, f64)>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(WEIGHTS_HEADER) {
        return Err(Error::format(path, format!("expected header '{WEIGHTS_HEADER}'")));
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(Error::format(path, format!("line {}: expected 3 columns", n + 2)));
        }
        let id = cols[0]
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::format(path, format!("line {}: bad sample id", n + 2)))?;
        let w = parse_f64(cols[1], path)?;
        if !w.is_finite() {
            return Err(Error::format(path, format!("line {}: non-finite weight", n + 2)));
        }
        out.push((id, w));
    }
    Ok(out)
}
