//! Uniformly sampled scalar and multivariate series, window views and CSV I/O.
//!
//! Timestamps are never interpreted: the sampling step `dt` is supplied by the
//! caller and every series is assumed strictly uniform. Missing or non-finite
//! cells are rejected at ingestion.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Anything with a number of time samples.
pub trait Sampled {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniformSeries {
    name: String,
    values: Vec<f64>,
    dt: f64,
}

impl UniformSeries {
    pub fn new(name: impl Into<String>, values: Vec<f64>, dt: f64) -> Result<Self> {
        check_dt(dt)?;
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSeries(format!("value at index {i} is not finite")));
        }
        Ok(Self { name: name.into(), values, dt })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Prefix `[0, end)` as a new series.
    pub fn prefix(&self, end: usize) -> Result<Self> {
        if end == 0 || end > self.values.len() {
            return Err(Error::OutOfBounds { end_index: end, width: end, len: self.values.len() });
        }
        Self::new(self.name.clone(), self.values[..end].to_vec(), self.dt)
    }

    pub fn window(&self, end_index: usize, width: usize) -> Result<WindowView<'_, Self>> {
        WindowView::new(self, end_index, width)
    }

    /// Window over the whole series.
    pub fn full_view(&self) -> WindowView<'_, Self> {
        WindowView { parent: self, start: 0, end: self.values.len() }
    }
}

impl Sampled for UniformSeries {
    fn len(&self) -> usize {
        self.values.len()
    }
}

/// A `T x n` matrix of observations stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSeries {
    feature_names: Vec<String>,
    data: Vec<f64>,
    dim: usize,
    dt: f64,
}

impl MultiSeries {
    pub fn new(feature_names: Vec<String>, rows: &[Vec<f64>], dt: f64) -> Result<Self> {
        let dim = feature_names.len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidSeries(format!("row {i} has {} values, expected {dim}", row.len())));
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(feature_names, data, dt)
    }

    pub fn from_flat(feature_names: Vec<String>, data: Vec<f64>, dt: f64) -> Result<Self> {
        check_dt(dt)?;
        let dim = feature_names.len();
        if dim == 0 {
            return Err(Error::InvalidSeries("series needs at least one feature".into()));
        }
        if data.is_empty() {
            return Err(Error::EmptyInput);
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidSeries(format!("{} values do not fill rows of width {dim}", data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSeries(format!("value at row {}, feature {} is not finite", i / dim, i % dim)));
        }
        Ok(Self { feature_names, data, dim, dt })
    }

    /// Single-feature series with the same samples.
    pub fn from_uniform(series: &UniformSeries) -> Self {
        Self { feature_names: vec![series.name.clone()], data: series.values.clone(), dim: 1, dt: series.dt }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> UniformSeries {
        UniformSeries { name: self.feature_names[j].clone(), values: self.rows().map(|r| r[j]).collect(), dt: self.dt }
    }

    /// Rows `[start, end)` as an owned series.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::OutOfBounds { end_index: end, width: end.saturating_sub(start), len: self.len() });
        }
        Ok(Self {
            feature_names: self.feature_names.clone(),
            data: self.data[start * self.dim..end * self.dim].to_vec(),
            dim: self.dim,
            dt: self.dt,
        })
    }

    /// Appends a row; only used on private working copies during recursion.
    pub(crate) fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.dim);
        self.data.extend_from_slice(row);
    }

    pub fn window(&self, end_index: usize, width: usize) -> Result<WindowView<'_, Self>> {
        WindowView::new(self, end_index, width)
    }

    pub fn full_view(&self) -> WindowView<'_, Self> {
        WindowView { parent: self, start: 0, end: self.len() }
    }
}

impl Sampled for MultiSeries {
    fn len(&self) -> usize {
        self.data.len() / self.dim
    }
}

/// Borrowed index range `[start, end)` of a parent series.
#[derive(Debug)]
pub struct WindowView<'a, S> {
    parent: &'a S,
    start: usize,
    end: usize,
}

impl<S> Clone for WindowView<'_, S> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<S> Copy for WindowView<'_, S> {}

impl<'a, S: Sampled> WindowView<'a, S> {
    /// View spanning `[end_index - width, end_index)`.
    pub fn new(parent: &'a S, end_index: usize, width: usize) -> Result<Self> {
        if width < 2 {
            return Err(Error::WindowTooSmall { got: width, min: 2 });
        }
        if end_index < width || end_index > parent.len() {
            return Err(Error::OutOfBounds { end_index, width, len: parent.len() });
        }
        Ok(Self { parent, start: end_index - width, end: end_index })
    }

    pub fn parent(&self) -> &'a S {
        self.parent
    }

    pub fn start_index(&self) -> usize {
        self.start
    }

    pub fn end_index(&self) -> usize {
        self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

impl<'a> WindowView<'a, UniformSeries> {
    pub fn values(&self) -> &'a [f64] {
        &self.parent.values[self.start..self.end]
    }
}

impl<'a> WindowView<'a, MultiSeries> {
    pub fn dim(&self) -> usize {
        self.parent.dim
    }

    /// Row `i` of the window (0-based within the window).
    pub fn row(&self, i: usize) -> &'a [f64] {
        self.parent.row(self.start + i)
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &'a [f64]> + 'a {
        let dim = self.parent.dim;
        self.parent.data[self.start * dim..self.end * dim].chunks_exact(dim)
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt.is_finite() && dt > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidSeries(format!("time step must be positive, got {dt}")))
    }
}

/// Loads a comma-separated file with a mandatory header row.
///
/// When `has_timestamp_column` is set the first column is skipped. Column
/// order is preserved and feature names come from the header.
pub fn load_csv(path: impl AsRef<Path>, dt: f64, has_timestamp_column: bool) -> Result<MultiSeries> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, dt, has_timestamp_column)
}

pub fn read_csv<R: Read>(reader: R, dt: f64, has_timestamp_column: bool) -> Result<MultiSeries> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let skip = usize::from(has_timestamp_column);
    let headers = rdr.headers().map_err(|e| Error::MalformedCsv { row: 0, reason: e.to_string() })?.clone();
    if headers.len() <= skip {
        return Err(Error::MalformedCsv { row: 0, reason: "header has no value columns".into() });
    }
    let names: Vec<String> = headers.iter().skip(skip).map(|h| h.trim().to_string()).collect();
    let mut data = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::MalformedCsv { row, reason: e.to_string() })?;
        for (c, cell) in record.iter().enumerate().skip(skip) {
            let cell = cell.trim();
            if cell.is_empty() {
                return Err(Error::MalformedCsv { row, reason: format!("missing value in column {}", c + 1) });
            }
            let v: f64 = cell.parse().map_err(|_| Error::MalformedCsv {
                row,
                reason: format!("non-numeric cell {cell:?} in column {}", c + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { row, col: c + 1 });
            }
            data.push(v);
        }
    }
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    MultiSeries::from_flat(names, data, dt)
}

/// Writes the header and rows. Values use the shortest decimal form that
/// parses back to the identical `f64` (at most 17 significant digits).
pub fn write_csv(series: &MultiSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(series, file).map_err(|e| Error::io(path, e))
}

pub fn write_csv_to<W: Write>(series: &MultiSeries, writer: W) -> std::io::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(series.feature_names())?;
    for row in series.rows() {
        wtr.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<MultiSeries> {
        read_csv(text.as_bytes(), 10.0, false)
    }

    #[test]
    fn parses_small_file() {
        let s = parse("x,y\n1,2\n3,4\n5,6\n").unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.dim(), 2);
        assert_eq!(s.dt(), 10.0);
        assert_eq!(s.row(2), &[5.0, 6.0]);
    }

    #[test]
    fn nan_is_reported_with_position() {
        let text = "a,b\n1,1\n2,2\n3,3\n4,4\n5,NaN\n";
        match parse(text) {
            Err(Error::NonFiniteValue { row, col }) => assert_eq!((row, col), (5, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn engine_channel_names_survive_ingestion() {
        let header = "LOT,FW TEMP,EXT TEMP A,EXT TEMP B,LOP,FOP,SW PRES,RPM";
        let text = format!("{header}\n1,2,3,4,5,6,7,8\n");
        let s = parse(&text).unwrap();
        let names: Vec<&str> = s.feature_names().iter().map(String::as_str).collect();
        assert_eq!(names, header.split(',').collect::<Vec<_>>());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(parse("a,b\n1,x\n"), Err(Error::MalformedCsv { row: 1, .. })));
        assert!(matches!(parse("a,b\n1,2\n3\n"), Err(Error::MalformedCsv { row: 2, .. })));
        assert!(matches!(parse("a,b\n1,\n"), Err(Error::MalformedCsv { .. })));
        assert!(matches!(parse("a,b\n"), Err(Error::EmptyInput)));
        assert!(matches!(parse("a\ninf\n"), Err(Error::NonFiniteValue { row: 1, col: 1 })));
    }

    #[test]
    fn timestamp_column_is_skipped() {
        let s = read_csv("t,x\n2024-01-01T00:00:00,1.5\nwhatever,2.5\n".as_bytes(), 1.0, true).unwrap();
        assert_eq!(s.feature_names(), &["x".to_string()]);
        assert_eq!(s.as_flat(), &[1.5, 2.5]);
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_csv("/definitely/not/here.csv", 1.0, false).unwrap_err();
        assert!(err.to_string().contains("/definitely/not/here.csv"));
    }

    #[test]
    fn window_bounds() {
        let s = UniformSeries::new("x", (0..100).map(f64::from).collect(), 1.0).unwrap();
        let w = s.window(50, 10).unwrap();
        assert_eq!((w.start_index(), w.end_index()), (40, 50));
        assert!(matches!(s.window(5, 10), Err(Error::OutOfBounds { .. })));

        let long = UniformSeries::new("x", vec![1.0; 300], 10.0).unwrap();
        let w = long.window(200, 200).unwrap();
        assert_eq!((w.start_index(), w.end_index()), (0, 200));
    }

    #[test]
    fn invalid_construction() {
        assert!(UniformSeries::new("x", vec![], 1.0).is_err());
        assert!(UniformSeries::new("x", vec![1.0], 0.0).is_err());
        assert!(UniformSeries::new("x", vec![f64::NAN], 1.0).is_err());
        assert!(MultiSeries::new(vec!["a".into()], &[vec![1.0, 2.0]], 1.0).is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(
            rows in prop::collection::vec(prop::collection::vec(-1e300f64..1e300, 3), 1..20)
        ) {
            let names = vec!["a".to_string(), "b".to_string(), "c".to_string()];
            let s = MultiSeries::new(names, &rows, 10.0).unwrap();
            let mut buf = Vec::new();
            write_csv_to(&s, &mut buf).unwrap();
            let back = read_csv(buf.as_slice(), 10.0, false).unwrap();
            let bits = |m: &MultiSeries| m.as_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&s), bits(&back));
        }

        #[test]
        fn window_has_width_rows_ending_at_parent_row(
            (t, w, e) in (2usize..60)
                .prop_flat_map(|t| (Just(t), 2..=t))
                .prop_flat_map(|(t, w)| (Just(t), Just(w), w..=t))
        ) {
            let rows: Vec<Vec<f64>> = (0..t).map(|i| vec![i as f64, -(i as f64)]).collect();
            let s = MultiSeries::new(vec!["a".into(), "b".into()], &rows, 1.0).unwrap();
            let view = s.window(e, w).unwrap();
            prop_assert_eq!(view.rows().len(), w);
            prop_assert_eq!(view.row(w - 1), s.row(e - 1));
        }
    }
}
