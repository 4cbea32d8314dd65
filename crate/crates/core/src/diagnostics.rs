//! Per-layer analysis quantities and their CSV serialization.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::allocator::{loss_ratio, BitAllocation, MAX_BITS};
use crate::error::{BaqError, Result};
use crate::scalar::Real;

/// Column count per bitwidth.
pub fn bitwidth_histogram(bits: &[u8]) -> Result<BTreeMap<u8, usize>> {
    let mut counts = BTreeMap::new();
    for &b in bits {
        if b > MAX_BITS {
            return Err(BaqError::InvalidArgument(format!("bitwidth {b} exceeds {MAX_BITS}")));
        }
        *counts.entry(b).or_insert(0) += 1;
    }
    Ok(counts)
}

/// Weight count per bitwidth: each column contributes `rows` weights.
pub fn weight_histogram(bits: &[u8], rows: usize) -> Result<BTreeMap<u8, usize>> {
    let mut counts = bitwidth_histogram(bits)?;
    counts.values_mut().for_each(|c| *c *= rows);
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerReport<T> {
    pub layer_id: String,
    /// GM/AM of the column sensitivities.
    pub ratio_c: T,
    /// Measured BAQ loss over measured uniform loss.
    pub ratio_l: T,
    pub avg_bits: T,
    pub bitwidth_counts: BTreeMap<u8, usize>,
    pub measured_loss_baq: T,
    pub measured_loss_uniform: T,
    /// Model loss `Σ C_j 2^(−2R_j)` of the allocation.
    pub predicted_loss_baq: T,
    /// Model loss with every column at the allocation's average width.
    pub predicted_loss_uniform: T,
}

pub fn layer_report<T: Real>(
    layer_id: impl Into<String>,
    c_cols: &[T],
    alloc: &BitAllocation<T>,
    loss_baq: T,
    loss_uniform: T,
) -> Result<LayerReport<T>> {
    if c_cols.len() != alloc.len() {
        return Err(BaqError::DimensionMismatch(format!("{} sensitivities, {} widths", c_cols.len(), alloc.len())));
    }
    if !(loss_uniform > T::zero()) || !(loss_baq >= T::zero()) {
        return Err(BaqError::InvalidArgument(format!(
            "losses must be positive (baq {loss_baq}, uniform {loss_uniform})"
        )));
    }
    let avg = alloc.average_bits;
    let uniform_factor = T::lit(2.0).powf(-(avg + avg));
    Ok(LayerReport {
        layer_id: layer_id.into(),
        ratio_c: loss_ratio(c_cols)?,
        ratio_l: loss_baq / loss_uniform,
        avg_bits: avg,
        bitwidth_counts: bitwidth_histogram(&alloc.per_column_bits)?,
        measured_loss_baq: loss_baq,
        measured_loss_uniform: loss_uniform,
        predicted_loss_baq: alloc.predicted_loss,
        predicted_loss_uniform: c_cols.iter().copied().sum::<T>() * uniform_factor,
    })
}

pub const REPORT_HEADER: [&str; 6] = ["layer_id", "ratio_c", "ratio_l", "avg_bits", "loss_baq", "loss_uniform"];

/// One parsed line of a report CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub layer_id: String,
    pub ratio_c: f64,
    pub ratio_l: f64,
    pub avg_bits: f64,
    pub loss_baq: f64,
    pub loss_uniform: f64,
}

impl<T: Real> From<&LayerReport<T>> for ReportRow {
    fn from(r: &LayerReport<T>) -> Self {
        Self {
            layer_id: r.layer_id.clone(),
            ratio_c: r.ratio_c.as_f64(),
            ratio_l: r.ratio_l.as_f64(),
            avg_bits: r.avg_bits.as_f64(),
            loss_baq: r.measured_loss_baq.as_f64(),
            loss_uniform: r.measured_loss_uniform.as_f64(),
        }
    }
}

/// 17 significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_rows_to<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for r in rows {
        w.write_record([
            r.layer_id.clone(),
            format_real(r.ratio_c),
            format_real(r.ratio_l),
            format_real(r.avg_bits),
            format_real(r.loss_baq),
            format_real(r.loss_uniform),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report_csv<T: Real>(reports: &[LayerReport<T>], path: impl AsRef<Path>) -> Result<()> {
    let rows: Vec<ReportRow> = reports.iter().map(ReportRow::from).collect();
    let mut buf = Vec::new();
    write_rows_to(&rows, &mut buf)?;
    crate::packfmt::write_atomic(path, &buf)
}

pub fn read_rows_from<R: Read>(input: R) -> Result<Vec<ReportRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    if rdr.headers()?.iter().ne(REPORT_HEADER) {
        return Err(BaqError::InvalidArgument("unexpected report header".into()));
    }
    let parse = |s: &str| s.parse::<f64>().map_err(|e| BaqError::InvalidArgument(format!("bad real {s:?}: {e}")));
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            if rec.len() != REPORT_HEADER.len() {
                return Err(BaqError::InvalidArgument(format!("report row has {} fields", rec.len())));
            }
            Ok(ReportRow {
                layer_id: rec[0].to_string(),
                ratio_c: parse(&rec[1])?,
                ratio_l: parse(&rec[2])?,
                avg_bits: parse(&rec[3])?,
                loss_baq: parse(&rec[4])?,
                loss_uniform: parse(&rec[5])?,
            })
        })
        .collect()
}

pub fn read_report_csv(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    read_rows_from(std::fs::File::open(path)?)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut out = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        let avg = (start + end - 1) as f64 / 2.0 + 1.0;
        for &idx in &order[start..end] {
            out[idx] = avg;
        }
        start = end;
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(BaqError::InvalidArgument("spearman needs two equal-length samples of size >= 2".into()));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mid = v.len() / 2;
    Some(if v.len().is_multiple_of(2) { 0.5 * (v[mid - 1] + v[mid]) } else { v[mid] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocator::allocate_given_ref_loss;
    use proptest::prelude::*;

    #[test]
    fn histogram_examples() {
        assert_eq!(bitwidth_histogram(&[2; 5]).unwrap(), BTreeMap::from([(2, 5)]));
        assert_eq!(
            bitwidth_histogram(&[0, 1, 2, 2, 3]).unwrap(),
            BTreeMap::from([(0, 1), (1, 1), (2, 2), (3, 1)])
        );
        assert_eq!(weight_histogram(&[0, 2, 2], 10).unwrap(), BTreeMap::from([(0, 10), (2, 20)]));
        assert!(bitwidth_histogram(&[16]).is_err());
    }

    #[test]
    fn uniform_sensitivities_report() {
        let c = [2.0f64; 8];
        let alloc = allocate_given_ref_loss(&c, 2.0 / 16.0).unwrap();
        let r = layer_report("l0", &c, &alloc, 0.5, 0.5).unwrap();
        assert_eq!(r.ratio_c, 1.0);
        assert_eq!(r.ratio_l, 1.0);
        assert_eq!(r.avg_bits, 2.0);
        assert_eq!(r.bitwidth_counts.values().sum::<usize>(), 8);
        assert!((r.predicted_loss_baq - r.predicted_loss_uniform).abs() < 1e-15);
    }

    #[test]
    fn spread_sensitivities_report() {
        let c: Vec<f64> = (0..64).map(|k| 10f64.powf(4.0 * k as f64 / 63.0)).collect();
        let alloc = allocate_given_ref_loss(&c, 100.0).unwrap();
        let r = layer_report("spread", &c, &alloc, alloc.predicted_loss, r_uniform(&c, alloc.average_bits)).unwrap();
        assert!(r.ratio_c < 0.5);
        assert!(r.ratio_l < 1.0);
    }

    fn r_uniform(c: &[f64], avg: f64) -> f64 {
        c.iter().sum::<f64>() * 2f64.powf(-2.0 * avg)
    }

    #[test]
    fn report_rejects_bad_losses() {
        let alloc = allocate_given_ref_loss(&[1.0], 1.0).unwrap();
        assert!(layer_report("x", &[1.0], &alloc, 1.0, 0.0).is_err());
        assert!(layer_report("x", &[1.0, 2.0], &alloc, 1.0, 1.0).is_err());
    }

    #[test]
    fn empty_csv_is_header_only() {
        let mut buf = Vec::new();
        write_rows_to(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "layer_id,ratio_c,ratio_l,avg_bits,loss_baq,loss_uniform\n");
    }

    #[test]
    fn one_row_csv() {
        let row = ReportRow {
            layer_id: "decoder.0,q_proj".into(),
            ratio_c: 0.1,
            ratio_l: 1.0 / 3.0,
            avg_bits: 2.05,
            loss_baq: 1e-300,
            loss_uniform: 12345.678,
        };
        let mut buf = Vec::new();
        write_rows_to(std::slice::from_ref(&row), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(!text.contains('\r'));
        assert_eq!(read_rows_from(buf.as_slice()).unwrap(), vec![row]);
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    proptest! {
        #[test]
        fn csv_roundtrip(rows in prop::collection::vec(
            ("[a-z0-9_.,\" ]{0,12}", any::<f64>(), any::<f64>(), any::<f64>(), any::<f64>(), any::<f64>())
                .prop_filter("finite", |t| [t.1, t.2, t.3, t.4, t.5].iter().all(|v| v.is_finite())),
            0..8,
        )) {
            let rows: Vec<ReportRow> = rows
                .into_iter()
                .map(|(id, a, b, c, d, e)| ReportRow { layer_id: id, ratio_c: a, ratio_l: b, avg_bits: c, loss_baq: d, loss_uniform: e })
                .collect();
            let mut buf = Vec::new();
            write_rows_to(&rows, &mut buf).unwrap();
            prop_assert_eq!(read_rows_from(buf.as_slice()).unwrap(), rows);
        }

        #[test]
        fn histogram_conserves_count(bits in prop::collection::vec(0u8..=15, 0..200)) {
            let h = bitwidth_histogram(&bits).unwrap();
            prop_assert_eq!(h.values().sum::<usize>(), bits.len());
        }
    }
}
