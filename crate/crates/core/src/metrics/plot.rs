//! CSV series for plotting: TDCR and likelihood histograms, and a 2D
//! density grid over two numeric columns.

use std::collections::BTreeMap;
use std::io::Write;

use crate::data::Collection;
use crate::error::{Error, Result};
use crate::metrics::TdcrResult;

/// `bin_lo,bin_hi,synth,test`, counts per TDCR histogram bin.
pub fn write_tdcr_histogram<W: Write>(result: &TdcrResult, writer: W) -> Result<()> {
    let (hs, ht) = result.histograms();
    let width = result.max_distance / result.bins as f64;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["bin_lo", "bin_hi", "synth", "test"])?;
    for (i, (s, t)) in hs.iter().zip(&ht).enumerate() {
        w.write_record([
            format!("{:?}", width * i as f64),
            format!("{:?}", width * (i + 1) as f64),
            s.to_string(),
            t.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `bin_lo,bin_hi,real,synth` over the joint range of both samples.
pub fn write_value_histogram<W: Write>(real: &[f64], synth: &[f64], bins: usize, writer: W) -> Result<()> {
    if real.is_empty() || synth.is_empty() || bins == 0 {
        return Err(Error::invalid("histogram needs samples on both sides and at least one bin"));
    }
    let lo = real.iter().chain(synth).fold(f64::INFINITY, |m, &x| m.min(x));
    let hi = real.iter().chain(synth).fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let count = |xs: &[f64]| {
        let mut h = vec![0usize; bins];
        for &x in xs {
            h[(((x - lo) / width).floor() as usize).min(bins - 1)] += 1;
        }
        h
    };
    let (hr, hs) = (count(real), count(synth));
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["bin_lo", "bin_hi", "real", "synth"])?;
    for i in 0..bins {
        w.write_record([
            format!("{:?}", lo + width * i as f64),
            format!("{:?}", lo + width * (i + 1) as f64),
            hr[i].to_string(),
            hs[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Counts of `(x, y)` cells on a grid of square bins of side `bin_width`,
/// anchored at the origin: `x_lo,y_lo,count`, non-empty cells only.
pub fn write_density_grid<W: Write>(collection: &Collection, x_col: &str, y_col: &str, bin_width: f64, writer: W) -> Result<()> {
    if !(bin_width > 0.0) {
        return Err(Error::invalid("bin width must be positive"));
    }
    let schema = collection.schema();
    let col = |name: &str| schema.index_of(name).ok_or_else(|| Error::invalid(format!("unknown column {name:?}")));
    let (cx, cy) = (col(x_col)?, col(y_col)?);
    let mut grid: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    for t in collection.tables() {
        for r in &t.rows {
            if let (Some(x), Some(y)) = (r[cx].as_f64(), r[cy].as_f64()) {
                let key = ((x / bin_width).floor() as i64, (y / bin_width).floor() as i64);
                *grid.entry(key).or_default() += 1;
            }
        }
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([format!("{x_col}_lo"), format!("{y_col}_lo"), "count".into()])?;
    for ((i, j), n) in grid {
        w.write_record([
            format!("{:?}", i as f64 * bin_width),
            format!("{:?}", j as f64 * bin_width),
            n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
