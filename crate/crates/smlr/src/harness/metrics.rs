//! Metrics records, confidence intervals, CSV schema, and gap curves.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pruning::Phase;
use crate::tasks::Split;

/// One evaluation row. For regression sources the accuracy column carries
/// the negative query MSE (higher is still better).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub meta_iter: usize,
    pub phase: Phase,
    pub split: Split,
    pub accuracy: f64,
    pub ci_halfwidth: f64,
    pub loss: f64,
    /// Sparsity rate enforced at this iteration (0 outside pruning phases).
    pub rate: f64,
}

pub const CSV_HEADER: &str = "meta_iter,phase,split,accuracy,ci_halfwidth,loss,rate";

/// Mean and 95% normal-approximation halfwidth `1.96 * std / sqrt(n)` with
/// the unbiased (n-1) standard deviation.
pub fn confidence_interval(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "confidence interval needs at least 2 values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    let std = (ss / (n - 1.0)).sqrt();
    Ok((mean, 1.96 * std / n.sqrt()))
}

/// Formats with up to `sig` significant decimal digits, plain notation when
/// the exponent allows it, trailing zeros trimmed.
pub fn fmt_sig(v: f64, sig: usize) -> String {
    debug_assert!(sig >= 1);
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if exp < -4 || exp >= sig as i32 {
        let s = format!("{:.*e}", sig - 1, v);
        // Trim zeros in the mantissa: "1.230000000e-7" -> "1.23e-7".
        if let Some(epos) = s.find('e') {
            let (mant, tail) = s.split_at(epos);
            let mant = mant.trim_end_matches('0').trim_end_matches('.');
            return format!("{mant}{tail}");
        }
        s
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, v);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    }
}

impl MetricsRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.meta_iter,
            self.phase.as_str(),
            self.split.as_str(),
            fmt_sig(self.accuracy, 10),
            fmt_sig(self.ci_halfwidth, 10),
            fmt_sig(self.loss, 10),
            fmt_sig(self.rate, 10),
        )
    }
}

/// Streams records as CSV with the fixed column set.
pub struct CsvWriter<W: Write> {
    inner: W,
}

impl<W: Write> CsvWriter<W> {
    pub fn new(mut inner: W) -> std::io::Result<Self> {
        writeln!(inner, "{CSV_HEADER}")?;
        Ok(CsvWriter { inner })
    }

    pub fn write_record(&mut self, record: &MetricsRecord) -> std::io::Result<()> {
        writeln!(self.inner, "{}", record.to_csv_row())
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

/// Minimal parse of our own CSV: (meta_iter, split, accuracy) per row.
fn parse_rows(text: &str, path: &Path) -> Result<Vec<(usize, Split, f64)>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(Error::GapCurve(format!(
                "{}: expected header '{CSV_HEADER}', got {:?}",
                path.display(),
                other
            )))
        }
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::GapCurve(format!(
                "{} line {}: expected 7 fields, got {}",
                path.display(),
                lineno + 2,
                fields.len()
            )));
        }
        let meta_iter: usize = fields[0].parse().map_err(|_| {
            Error::GapCurve(format!("{} line {}: bad meta_iter", path.display(), lineno + 2))
        })?;
        let split = match fields[2] {
            "train" => Split::MetaTrain,
            "test" => Split::MetaTest,
            other => {
                return Err(Error::GapCurve(format!(
                    "{} line {}: unknown split '{other}'",
                    path.display(),
                    lineno + 2
                )))
            }
        };
        let accuracy: f64 = fields[3].parse().map_err(|_| {
            Error::GapCurve(format!("{} line {}: bad accuracy", path.display(), lineno + 2))
        })?;
        rows.push((meta_iter, split, accuracy));
    }
    Ok(rows)
}

/// Pairs train/test rows per evaluated iteration into
/// `(meta_iter, train_accuracy - test_accuracy)` gap entries.
pub fn gap_curve(csv_path: &Path) -> Result<Vec<(usize, f64)>> {
    let text = std::fs::read_to_string(csv_path).map_err(|e| Error::Io {
        path: csv_path.to_path_buf(),
        source: e,
    })?;
    let rows = parse_rows(&text, csv_path)?;
    let mut out: Vec<(usize, Option<f64>, Option<f64>)> = Vec::new();
    for (iter, split, acc) in rows {
        let entry = match out.iter_mut().find(|(i, _, _)| *i == iter) {
            Some(e) => e,
            None => {
                out.push((iter, None, None));
                out.last_mut().expect("just pushed")
            }
        };
        let slot = match split {
            Split::MetaTrain => &mut entry.1,
            Split::MetaTest => &mut entry.2,
        };
        if slot.is_some() {
            return Err(Error::GapCurve(format!(
                "duplicate {} row at iteration {iter}",
                split.as_str()
            )));
        }
        *slot = Some(acc);
    }
    out.iter()
        .map(|(iter, train, test)| match (train, test) {
            (Some(tr), Some(te)) => Ok((*iter, tr - te)),
            (None, _) => Err(Error::GapCurve(format!(
                "iteration {iter} has a test row but no train row"
            ))),
            (_, None) => Err(Error::GapCurve(format!(
                "iteration {iter} has a train row but no test row"
            ))),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ci_hand_values() {
        let (mean, hw) = confidence_interval(&[0.0, 1.0]).unwrap();
        assert_eq!(mean, 0.5);
        assert!((hw - 0.98).abs() < 1e-12);

        let (_, hw) = confidence_interval(&[0.5, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(hw, 0.0);

        assert!(confidence_interval(&[0.5]).is_err());
    }

    #[test]
    fn ci_with_unit_std_over_10000() {
        // Construct a sample whose unbiased std is exactly 1.
        let a = (9999.0f64 / 10000.0).sqrt();
        let mut values = vec![a; 5000];
        values.extend(vec![-a; 5000]);
        let (mean, hw) = confidence_interval(&values).unwrap();
        assert!(mean.abs() < 1e-12);
        assert!((hw - 0.0196).abs() < 1e-12);
    }

    #[test]
    fn fmt_sig_picks_sensible_notation() {
        assert_eq!(fmt_sig(0.0, 10), "0");
        assert_eq!(fmt_sig(1.0, 10), "1");
        assert_eq!(fmt_sig(0.5, 10), "0.5");
        assert_eq!(fmt_sig(-0.25, 10), "-0.25");
        assert_eq!(fmt_sig(1.0 / 3.0, 10), "0.3333333333");
        assert_eq!(fmt_sig(123456789.25, 10), "123456789.3"); // rounded to 10 digits
        assert_eq!(fmt_sig(1.23e-7, 10), "1.23e-7");
        assert_eq!(fmt_sig(3.0e12, 10), "3e12");
    }

    #[test]
    fn gap_curve_pairs_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(
            &path,
            format!(
                "{CSV_HEADER}\n\
                 50,pretrain,train,0.9,0.01,0.4,0\n\
                 50,pretrain,test,0.6,0.01,0.9,0\n\
                 100,prune,train,0.8,0.01,0.5,0.5\n\
                 100,prune,test,0.8,0.01,0.5,0.5\n"
            ),
        )
        .unwrap();
        let gaps = gap_curve(&path).unwrap();
        assert_eq!(gaps.len(), 2);
        assert_eq!(gaps[0].0, 50);
        assert!((gaps[0].1 - 0.3).abs() < 1e-12);
        assert_eq!(gaps[1], (100, 0.0));
    }

    #[test]
    fn gap_curve_rejects_unpaired_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(
            &path,
            format!("{CSV_HEADER}\n50,pretrain,train,0.9,0.01,0.4,0\n"),
        )
        .unwrap();
        assert!(matches!(gap_curve(&path), Err(Error::GapCurve(_))));
    }
}
