//! Accuracy, weight-angle and metric persistence.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::linalg::{add_diagonal, cholesky, cholesky_solve, frobenius};
use crate::Real;

/// Angle in degrees between `W_ff` and `W_fbᵀ`.
pub fn weight_angle<F: Real>(w_ff: ArrayView2<F>, w_fb: ArrayView2<F>) -> Result<f64> {
    let (m, n) = w_ff.dim();
    if w_fb.dim() != (n, m) {
        return Err(Error::Shape(format!(
            "W_ff {:?} and W_fb {:?} are not conformable",
            w_ff.dim(),
            w_fb.dim()
        )));
    }
    let nf = frobenius(w_ff).as_f64();
    let nb = frobenius(w_fb).as_f64();
    if nf == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedAngle);
    }
    // Tr(W_ff W_fb) = Σ_ij W_ff[i,j] W_fb[j,i]
    let trace: f64 = w_ff
        .indexed_iter()
        .map(|((i, j), &v)| v.as_f64() * w_fb[[j, i]].as_f64())
        .sum();
    Ok((trace / (nf * nb)).clamp(-1.0, 1.0).acos().to_degrees())
}

/// Rank of `label` in one output column; ties go to the lower index.
pub fn rank_of<F: Real>(scores: ndarray::ArrayView1<F>, label: usize) -> usize {
    let target = scores[label];
    scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > target || (s == target && j < label))
        .count()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Accuracy {
    pub top1: f64,
    /// Present only with more than five classes.
    pub top5: Option<f64>,
    pub samples: usize,
}

/// Tallies of correct predictions that can be merged across batches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Tally {
    pub samples: usize,
    pub top1: usize,
    pub top5: usize,
    pub classes: usize,
}

impl Tally {
    pub fn add<F: Real>(&mut self, outputs: ArrayView2<F>, labels: &[usize]) -> Result<()> {
        if outputs.ncols() != labels.len() {
            return Err(Error::Shape(format!(
                "{} output columns for {} labels",
                outputs.ncols(),
                labels.len()
            )));
        }
        self.classes = outputs.nrows();
        for (col, &label) in outputs.axis_iter(Axis(1)).zip(labels) {
            if label >= outputs.nrows() {
                return Err(Error::InvalidArgument(format!("label {label} out of range")));
            }
            let rank = rank_of(col, label);
            self.samples += 1;
            self.top1 += usize::from(rank == 0);
            self.top5 += usize::from(rank < 5);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Tally) {
        self.samples += other.samples;
        self.top1 += other.top1;
        self.top5 += other.top5;
        self.classes = self.classes.max(other.classes);
    }

    pub fn accuracy(&self) -> Accuracy {
        let n = self.samples.max(1) as f64;
        Accuracy {
            top1: self.top1 as f64 / n,
            top5: (self.classes > 5).then(|| self.top5 as f64 / n),
            samples: self.samples,
        }
    }
}

pub fn accuracy<F: Real>(outputs: ArrayView2<F>, labels: &[usize]) -> Result<Accuracy> {
    let mut t = Tally::default();
    t.add(outputs, labels)?;
    Ok(t.accuracy())
}

/// Regularized least-squares predictor `R_xyᵀ (R_x + εI)⁻¹` from paired
/// samples (one per column).
pub fn mmse_predictor_oracle(x: ArrayView2<f64>, y: ArrayView2<f64>, epsilon: f64) -> Result<Array2<f64>> {
    if x.ncols() != y.ncols() || x.ncols() == 0 {
        return Err(Error::Shape(format!("{} and {} samples", x.ncols(), y.ncols())));
    }
    let n = x.ncols() as f64;
    let rx = x.dot(&x.t()) / n;
    let rxy = x.dot(&y.t()) / n;
    let l = cholesky(add_diagonal(rx.view(), epsilon).view())?;
    // (R_x + εI)⁻¹ R_xy, transposed
    Ok(cholesky_solve(&l, rxy.view())?.reversed_axes())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitKind {
    /// Per-batch running training figures.
    TrainBatch,
    Train,
    Test,
}

impl SplitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitKind::TrainBatch => "train_batch",
            SplitKind::Train => "train",
            SplitKind::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub epoch: usize,
    pub batch: usize,
    pub split: SplitKind,
    pub top1: f64,
    pub top5: Option<f64>,
    pub mse: Option<f64>,
    /// One angle per segment `1..P`.
    pub angles: Vec<f64>,
    pub wall_seconds: f64,
}

/// CSV sink with one `angle_segment_k` column per learned feedback segment.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
    segments: usize,
}

impl MetricsWriter<File> {
    pub fn create(path: &Path, segments: usize) -> Result<Self> {
        Self::new(File::create(path)?, segments)
    }

    /// Appends to an existing file written with the same layout.
    pub fn append(path: &Path, segments: usize) -> Result<Self> {
        let file = std::fs::OpenOptions::new().append(true).open(path)?;
        Ok(Self {
            inner: csv::WriterBuilder::new().has_headers(false).from_writer(file),
            segments,
        })
    }
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(writer: W, segments: usize) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = ["epoch", "batch", "split", "top1", "top5", "mse"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=segments).map(|k| format!("angle_segment_{k}")));
        header.push("wall_seconds".into());
        inner.write_record(&header)?;
        Ok(Self { inner, segments })
    }

    pub fn write(&mut self, rec: &MetricRecord) -> Result<()> {
        if rec.angles.len() != self.segments {
            return Err(Error::Shape(format!(
                "{} angles for {} segments",
                rec.angles.len(),
                self.segments
            )));
        }
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut row = vec![
            rec.epoch.to_string(),
            rec.batch.to_string(),
            rec.split.as_str().to_string(),
            rec.top1.to_string(),
            opt(rec.top5),
            opt(rec.mse),
        ];
        row.extend(rec.angles.iter().map(|a| a.to_string()));
        row.push(rec.wall_seconds.to_string());
        self.inner.write_record(&row)?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

pub fn emit_metrics<W: Write>(writer: W, segments: usize, records: &[MetricRecord]) -> Result<W> {
    let mut w = MetricsWriter::new(writer, segments)?;
    for r in records {
        w.write(r)?;
    }
    w.into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn angle_examples() {
        let w = array![[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]];
        assert!(weight_angle(w.view(), w.t()).unwrap().abs() < 1e-6);
        let neg = w.t().mapv(|v| -v);
        assert!((weight_angle(w.view(), neg.view()).unwrap() - 180.0).abs() < 1e-6);
        let a = array![[1.0, 0.0]];
        let b = array![[0.0], [1.0]];
        assert!((weight_angle(a.view(), b.view()).unwrap() - 90.0).abs() < 1e-12);
    }

    #[test]
    fn angle_errors() {
        let z = Array2::<f64>::zeros((1, 2));
        let b = array![[0.0], [1.0]];
        assert!(matches!(weight_angle(z.view(), b.view()), Err(Error::UndefinedAngle)));
        assert!(matches!(weight_angle(b.view(), b.view()), Err(Error::Shape(_))));
    }

    #[test]
    fn one_hot_prediction_is_correct() {
        let out = array![[0.0, 1.0], [1.0, 0.0], [0.0, 0.0]];
        let acc = accuracy(out.view(), &[1, 0]).unwrap();
        assert_eq!(acc.top1, 1.0);
        assert_eq!(acc.top5, None);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let out = Array2::<f64>::from_elem((4, 5), 0.25);
        let acc = accuracy(out.view(), &[0, 1, 0, 3, 2]).unwrap();
        assert!((acc.top1 - 0.4).abs() < 1e-15);
    }

    #[test]
    fn top5_with_many_classes() {
        let mut out = Array2::<f64>::zeros((10, 2));
        for i in 0..10 {
            out[[i, 0]] = i as f64;
            out[[i, 1]] = -(i as f64);
        }
        let acc = accuracy(out.view(), &[5, 4]).unwrap();
        assert_eq!(acc.top1, 0.0);
        assert_eq!(acc.top5, Some(1.0));
        let acc = accuracy(out.view(), &[4, 6]).unwrap();
        assert_eq!(acc.top5, Some(0.0));
    }

    #[test]
    fn label_out_of_range() {
        let out = Array2::<f64>::zeros((3, 1));
        assert!(accuracy(out.view(), &[3]).is_err());
    }

    #[test]
    fn csv_layout() {
        let rec = MetricRecord {
            epoch: 1,
            batch: 3000,
            split: SplitKind::Test,
            top1: 0.5,
            top5: None,
            mse: Some(0.25),
            angles: vec![80.0],
            wall_seconds: 1.5,
        };
        let bytes = emit_metrics(Vec::new(), 1, &[rec]).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(
            text,
            "epoch,batch,split,top1,top5,mse,angle_segment_1,wall_seconds\n1,3000,test,0.5,,0.25,80,1.5\n"
        );
    }

    #[test]
    fn orthogonal_data_gives_zero_predictor() {
        let x = array![[1.0, 0.0, -1.0, 0.0], [0.0, 0.0, 0.0, 0.0]];
        let y = array![[0.0, 1.0, 0.0, -1.0]];
        let w = mmse_predictor_oracle(x.view(), y.view(), 0.1).unwrap();
        assert!(w.iter().all(|v| v.abs() < 1e-15));
        assert_eq!(w.dim(), (1, 2));
    }
}
