//! Ingestion, scaling, chronological splitting and sliding-window extraction
//! of multivariate series.

use std::io::Read;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A `T × D` multivariate series.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesFrame {
    pub values: Tensor,
    pub feature_names: Vec<String>,
    pub sample_period: Option<String>,
}

impl SeriesFrame {
    pub fn new(values: Tensor, feature_names: Vec<String>) -> Result<Self> {
        if values.rank() != 2 || values.shape()[0] == 0 || values.shape()[1] == 0 {
            return Err(Error::Invalid(format!(
                "series must be a non-empty T x D matrix, got {:?}",
                values.shape()
            )));
        }
        if feature_names.len() != values.shape()[1] {
            return Err(Error::Invalid(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                values.shape()[1]
            )));
        }
        if !values.all_finite() {
            return Err(Error::Invalid("series contains NaN or Inf".into()));
        }
        Ok(SeriesFrame {
            values,
            feature_names,
            sample_period: None,
        })
    }

    /// Unnamed features become `f0, f1, ...`.
    pub fn from_values(values: Tensor) -> Result<Self> {
        let d = values.shape().get(1).copied().unwrap_or(0);
        Self::new(values, (0..d).map(|i| format!("f{i}")).collect())
    }

    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self) -> usize {
        self.values.shape()[1]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MissingPolicy {
    #[default]
    Reject,
    ForwardFill,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoadOptions {
    pub has_header: bool,
    /// Ignore the first column (timestamps).
    pub timestamp_col: bool,
    pub missing: MissingPolicy,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            has_header: true,
            timestamp_col: false,
            missing: MissingPolicy::Reject,
        }
    }
}

pub fn load_csv(path: &Path, opts: LoadOptions) -> Result<SeriesFrame> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, opts)
}

/// Parses comma-separated numeric rows. Row and column numbers in errors are
/// 1-based and count data rows and data columns only.
pub fn read_csv<R: Read>(reader: R, opts: LoadOptions) -> Result<SeriesFrame> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let skip = usize::from(opts.timestamp_col);

    let mut names: Option<Vec<String>> = if opts.has_header {
        let header = rdr.headers().map_err(|e| Error::Parse {
            row: 0,
            msg: e.to_string(),
        })?;
        Some(header.iter().skip(skip).map(str::to_string).collect())
    } else {
        None
    };

    let mut width: Option<usize> = names.as_ref().map(|n| n.len() + skip);
    let mut data: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::Parse {
                row,
                msg: format!("expected {expected} columns, found {}", record.len()),
            });
        }
        let d = expected - skip;
        for (j, cell) in record.iter().skip(skip).enumerate() {
            let col = j + 1;
            if cell.is_empty() {
                match opts.missing {
                    MissingPolicy::Reject => return Err(Error::MissingValue { row, col }),
                    MissingPolicy::ForwardFill if rows > 0 => {
                        data.push(data[(rows - 1) * d + j]);
                        continue;
                    }
                    MissingPolicy::ForwardFill => return Err(Error::MissingValue { row, col }),
                }
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                msg: format!("column {col}: cannot parse {cell:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    msg: format!("column {col}: non-finite value {cell:?}"),
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    let d = width.map(|w| w.saturating_sub(skip)).unwrap_or(0);
    if rows == 0 || d == 0 {
        return Err(Error::Parse {
            row: 0,
            msg: "no data rows".into(),
        });
    }
    let names = names
        .take()
        .unwrap_or_else(|| (0..d).map(|i| format!("f{i}")).collect());
    SeriesFrame::new(Tensor::new(&[rows, d], data)?, names)
}

/// Per-feature min-max scaling into `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Fits min and max on the rows in `fit_range` only.
pub fn fit_scaler(frame: &SeriesFrame, fit_range: Range<usize>) -> Result<Scaler> {
    if fit_range.is_empty() || fit_range.end > frame.len() {
        return Err(Error::Invalid(format!(
            "scaler fit range {fit_range:?} is empty or outside [0, {})",
            frame.len()
        )));
    }
    let d = frame.features();
    let mut min = vec![f64::INFINITY; d];
    let mut max = vec![f64::NEG_INFINITY; d];
    for r in fit_range {
        for (c, &v) in frame.values.row(r).iter().enumerate() {
            min[c] = min[c].min(v);
            max[c] = max[c].max(v);
        }
    }
    Ok(Scaler { min, max })
}

impl Scaler {
    pub fn features(&self) -> usize {
        self.min.len()
    }

    fn check(&self, values: &Tensor) -> Result<()> {
        if values.rank() != 2 || values.shape()[1] != self.features() {
            return Err(Error::shape(
                "scaler",
                format!("{:?} for {} features", values.shape(), self.features()),
            ));
        }
        Ok(())
    }

    /// Maps each feature to `(x - min) / (max - min)`; degenerate features
    /// become 0.5. Values outside the fitted range are not clipped.
    pub fn transform(&self, values: &Tensor) -> Result<Tensor> {
        self.check(values)?;
        let mut out = values.clone();
        let d = self.features();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let c = i % d;
            let span = self.max[c] - self.min[c];
            *v = if span > 0.0 {
                (*v - self.min[c]) / span
            } else {
                0.5
            };
        }
        Ok(out)
    }

    /// Inverse of [`Scaler::transform`]; degenerate features map back to
    /// their stored constant.
    pub fn inverse(&self, values: &Tensor) -> Result<Tensor> {
        self.check(values)?;
        let mut out = values.clone();
        let d = self.features();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let c = i % d;
            let span = self.max[c] - self.min[c];
            *v = if span > 0.0 {
                *v * span + self.min[c]
            } else {
                self.min[c]
            };
        }
        Ok(out)
    }
}

pub fn apply_scaler(frame: &SeriesFrame, scaler: &Scaler) -> Result<SeriesFrame> {
    Ok(SeriesFrame {
        values: scaler.transform(&frame.values)?,
        feature_names: frame.feature_names.clone(),
        sample_period: frame.sample_period.clone(),
    })
}

pub fn invert_scaler(values: &Tensor, scaler: &Scaler) -> Result<Tensor> {
    scaler.inverse(values)
}

/// Contiguous train / validation / test row intervals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Splits `[0, len)` in temporal order. Boundaries are `floor(len * cumulative
/// fraction)`; the test interval absorbs the remainder. Every interval must
/// hold at least one `(window, horizon)` pair.
pub fn chronological_split(
    len: usize,
    fractions: (f64, f64, f64),
    window: usize,
    horizon: usize,
) -> Result<Split> {
    let (a, b, c) = fractions;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!(
            "split fractions must be positive and sum to 1, got ({a}, {b}, {c})"
        )));
    }
    let cut = |f: f64| ((len as f64) * f + 1e-9).floor() as usize;
    let (first, second) = (cut(a).min(len), cut(a + b).min(len));
    let split = Split {
        train: 0..first,
        val: first..second,
        test: second..len,
    };
    let needed = window + horizon;
    for (name, r) in [
        ("train", &split.train),
        ("val", &split.val),
        ("test", &split.test),
    ] {
        if r.len() < needed {
            return Err(Error::SplitTooSmall {
                name,
                len: r.len(),
                needed,
            });
        }
    }
    Ok(split)
}

/// One sliding-window slice of a series, rows oldest to newest.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesImage {
    pub values: Tensor,
    pub start_index: usize,
    pub horizon: usize,
}

impl SeriesImage {
    pub fn window(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn features(&self) -> usize {
        self.values.shape()[1]
    }
}

/// A series image paired with the row `horizon` steps after its last row.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub image: SeriesImage,
    pub target: Vec<f64>,
}

impl Window {
    /// Frame row holding the target.
    pub fn target_index(&self) -> usize {
        self.image.start_index + self.image.window() - 1 + self.image.horizon
    }
}

/// Stride-1 windows fully contained in `interval`. Yields
/// `len - window - horizon + 1` pairs, or none when that is not positive.
pub fn make_windows(
    frame: &SeriesFrame,
    interval: Range<usize>,
    window: usize,
    horizon: usize,
) -> Result<Vec<Window>> {
    if window == 0 || horizon == 0 {
        return Err(Error::Invalid("window and horizon must be at least 1".into()));
    }
    if interval.end > frame.len() {
        return Err(Error::Invalid(format!(
            "interval {interval:?} exceeds series length {}",
            frame.len()
        )));
    }
    let span = window + horizon;
    if interval.len() < span {
        return Ok(Vec::new());
    }
    let d = frame.features();
    let data = frame.values.data();
    (interval.start..=interval.end - span)
        .map(|s| {
            let values = Tensor::new(&[window, d], data[s * d..(s + window) * d].to_vec())?;
            let t = s + window - 1 + horizon;
            Ok(Window {
                image: SeriesImage {
                    values,
                    start_index: s,
                    horizon,
                },
                target: data[t * d..(t + 1) * d].to_vec(),
            })
        })
        .collect()
}

/// Stacks images into a `[B, w, D]` tensor and targets into `[B, D]`.
pub fn stack_batch<'a, I>(windows: I) -> Result<(Tensor, Tensor)>
where
    I: IntoIterator<Item = &'a Window>,
{
    let mut images = Vec::new();
    let mut targets = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    let mut n = 0;
    for w in windows {
        let shape = (w.image.window(), w.image.features());
        if *dims.get_or_insert(shape) != shape {
            return Err(Error::shape("stack_batch", "windows differ in shape"));
        }
        images.extend_from_slice(w.image.values.data());
        targets.extend_from_slice(&w.target);
        n += 1;
    }
    let (w, d) = dims.ok_or_else(|| Error::Invalid("empty batch".into()))?;
    Ok((Tensor::new(&[n, w, d], images)?, Tensor::new(&[n, d], targets)?))
}

/// Column means of `frame` over `range`.
pub fn feature_means(frame: &SeriesFrame, range: Range<usize>) -> Vec<f64> {
    let d = frame.features();
    let n = range.len().max(1) as f64;
    let mut out = vec![0.0; d];
    for r in range {
        for (o, v) in out.iter_mut().zip(frame.values.row(r)) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= n);
    out
}

/// A series scaled with statistics of its training interval and split in
/// time, ready to be windowed.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    /// Scaled values.
    pub frame: SeriesFrame,
    pub scaler: Scaler,
    pub split: Split,
    pub window: usize,
    pub horizon: usize,
}

impl Prepared {
    pub fn new(raw: &SeriesFrame, fractions: (f64, f64, f64), window: usize, horizon: usize) -> Result<Self> {
        let split = chronological_split(raw.len(), fractions, window, horizon)?;
        let scaler = fit_scaler(raw, split.train.clone())?;
        Ok(Prepared {
            frame: apply_scaler(raw, &scaler)?,
            scaler,
            split,
            window,
            horizon,
        })
    }

    pub fn windows(&self, interval: Range<usize>) -> Result<Vec<Window>> {
        make_windows(&self.frame, interval, self.window, self.horizon)
    }

    pub fn train_windows(&self) -> Result<Vec<Window>> {
        self.windows(self.split.train.clone())
    }

    pub fn val_windows(&self) -> Result<Vec<Window>> {
        self.windows(self.split.val.clone())
    }

    pub fn test_windows(&self) -> Result<Vec<Window>> {
        self.windows(self.split.test.clone())
    }

    /// Scaled per-feature means over the training interval.
    pub fn baseline(&self) -> Vec<f64> {
        feature_means(&self.frame, self.split.train.clone())
    }
}
