//! Writes evaluation artifacts as delimited text.
//!
//! `report.csv` is the human-facing table with values rounded to two decimals.
//! `confusion.csv`, `per_class.csv` and `curves.csv` keep full precision, and
//! `metrics.json` carries the unrounded report including zero-division flags.

use std::fs;
use std::path::{Path, PathBuf};

use super::metrics::{per_class_accuracy, ClassificationReport, ConfusionMatrix};
use crate::error::{Error, Result};
use crate::train::{write_records, EpochRecord};

pub const REPORT_FILE: &str = "report.csv";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const PER_CLASS_FILE: &str = "per_class.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const METRICS_FILE: &str = "metrics.json";

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))
}

fn row<I, S>(w: &mut csv::Writer<fs::File>, path: &Path, fields: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(fields).map_err(|e| Error::csv(path, e))
}

fn two(v: f64) -> String {
    format!("{v:.2}")
}

/// Renders the report table with the Accuracy, Macro Avg and Weighted Avg rows.
pub fn write_report_table(path: &Path, report: &ClassificationReport) -> Result<()> {
    let mut w = writer(path)?;
    row(&mut w, path, ["class", "precision", "recall", "f1_score", "support"])?;
    for c in &report.classes {
        row(
            &mut w,
            path,
            [c.name.clone(), two(c.precision), two(c.recall), two(c.f1), c.support.to_string()],
        )?;
    }
    let total = report.total.to_string();
    row(&mut w, path, ["Accuracy".into(), String::new(), String::new(), two(report.accuracy), total.clone()])?;
    for (label, avg) in [("Macro Avg", report.macro_avg), ("Weighted Avg", report.weighted_avg)] {
        row(
            &mut w,
            path,
            [label.into(), two(avg.precision), two(avg.recall), two(avg.f1), total.clone()],
        )?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_confusion(path: &Path, matrix: &ConfusionMatrix) -> Result<()> {
    let mut w = writer(path)?;
    let header = std::iter::once("true\\predicted".to_string()).chain(matrix.class_names.iter().cloned());
    row(&mut w, path, header)?;
    for (name, counts) in matrix.class_names.iter().zip(&matrix.counts) {
        row(&mut w, path, std::iter::once(name.clone()).chain(counts.iter().map(u64::to_string)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_confusion(path: &Path) -> Result<ConfusionMatrix> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let class_names: Vec<String> = r
        .headers()
        .map_err(|e| Error::csv(path, e))?
        .iter()
        .skip(1)
        .map(str::to_string)
        .collect();
    let mut counts = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let parsed = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<u64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        if parsed.len() != class_names.len() {
            return Err(Error::Dataset(format!("{}: ragged confusion row", path.display())));
        }
        counts.push(parsed);
    }
    if counts.len() != class_names.len() {
        return Err(Error::Dataset(format!("{}: confusion matrix is not square", path.display())));
    }
    Ok(ConfusionMatrix { counts, class_names })
}

pub fn write_per_class(path: &Path, matrix: &ConfusionMatrix) -> Result<()> {
    let mut w = writer(path)?;
    row(&mut w, path, ["class_id", "class_name", "accuracy", "correct", "support"])?;
    let support = matrix.support();
    for (c, acc) in per_class_accuracy(matrix).into_iter().enumerate() {
        row(
            &mut w,
            path,
            [
                c.to_string(),
                matrix.class_names[c].clone(),
                acc.map(|a| a.to_string()).unwrap_or_default(),
                matrix.counts[c][c].to_string(),
                support[c].to_string(),
            ],
        )?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Epoch curves; an empty record list still yields the header line.
pub fn write_curves(path: &Path, records: &[EpochRecord]) -> Result<()> {
    if records.is_empty() {
        let header = "epoch,train_loss,train_acc,val_loss,val_acc,lr\n";
        return fs::write(path, header).map_err(|e| Error::io(path, e));
    }
    write_records(path, records)
}

/// Writes every artifact into `out_dir`, creating it if needed, and returns the paths.
pub fn export(
    report: &ClassificationReport,
    matrix: &ConfusionMatrix,
    records: &[EpochRecord],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let paths: Vec<PathBuf> = [REPORT_FILE, CONFUSION_FILE, PER_CLASS_FILE, CURVES_FILE, METRICS_FILE]
        .iter()
        .map(|f| out_dir.join(f))
        .collect();
    write_report_table(&paths[0], report)?;
    write_confusion(&paths[1], matrix)?;
    write_per_class(&paths[2], matrix)?;
    write_curves(&paths[3], records)?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(&paths[4], json + "\n").map_err(|e| Error::io(&paths[4], e))?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::metrics::{confusion_matrix, default_class_names, report};

    fn sample() -> (ConfusionMatrix, ClassificationReport) {
        let m = confusion_matrix(&[0, 1, 1, 1, 2], &[0, 0, 1, 1, 2], default_class_names(3)).unwrap();
        let r = report(&m).unwrap();
        (m, r)
    }

    #[test]
    fn confusion_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let (m, r) = sample();
        export(&r, &m, &[], dir.path()).unwrap();
        assert_eq!(read_confusion(&dir.path().join(CONFUSION_FILE)).unwrap(), m);
    }

    #[test]
    fn empty_curves_have_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let (m, r) = sample();
        export(&r, &m, &[], dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(CURVES_FILE)).unwrap();
        assert_eq!(text, "epoch,train_loss,train_acc,val_loss,val_acc,lr\n");
    }

    #[test]
    fn report_table_has_footer_rows() {
        let dir = tempfile::tempdir().unwrap();
        let (m, r) = sample();
        export(&r, &m, &[], dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "class,precision,recall,f1_score,support");
        assert_eq!(lines[1], "class_0,1.00,0.50,0.67,2");
        assert_eq!(lines[4], "Accuracy,,,0.80,5");
        assert!(lines[5].starts_with("Macro Avg,"));
        assert!(lines[6].starts_with("Weighted Avg,"));
        assert_eq!(lines.len(), 7);
    }

    #[test]
    fn curves_match_record_fields() {
        let dir = tempfile::tempdir().unwrap();
        let (m, r) = sample();
        let rec = EpochRecord {
            epoch: 1,
            train_loss: 2.5,
            train_acc: 0.25,
            val_loss: 2.0,
            val_acc: 0.5,
            lr: 1e-4,
        };
        export(&r, &m, std::slice::from_ref(&rec), dir.path()).unwrap();
        let back = crate::train::read_records(&dir.path().join(CURVES_FILE)).unwrap();
        assert_eq!(back, vec![rec]);
    }
}
