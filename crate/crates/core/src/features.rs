//! Per-pixel feature containers and neighborhood construction.

use serde::{Deserialize, Serialize};

use crate::error::{GuslError, Result};
use crate::image::{reflect_index, Image};

/// Which input a feature was computed from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// The (downsampled) degraded input.
    Ldct,
    /// Degraded input minus the upscaled coarser prediction.
    Diff,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Ldct => "ldct",
            Source::Diff => "diff",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    /// The source pixel value itself.
    Raw,
    /// Saab coefficient for kernel `k` (0 = DC).
    Saab(usize),
}

/// Provenance of one feature column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnOrigin {
    Neighborhood { source: Source, channel: Channel, dy: i32, dx: i32 },
    Lnt { projection: usize },
}

impl ColumnOrigin {
    pub fn describe(&self) -> String {
        match *self {
            ColumnOrigin::Neighborhood { source, channel, dy, dx } => {
                let ch = match channel {
                    Channel::Raw => "raw".to_string(),
                    Channel::Saab(k) => format!("saab{k}"),
                };
                format!("{}:{ch}@{dy},{dx}", source.as_str())
            }
            ColumnOrigin::Lnt { projection } => format!("lnt{projection}"),
        }
    }
}

/// Multi-channel map over an image grid, stored pixel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStack {
    source: Source,
    height: usize,
    width: usize,
    channels: Vec<Channel>,
    data: Vec<f64>,
}

impl FeatureStack {
    pub fn new(source: Source, height: usize, width: usize, channels: Vec<Channel>, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels.len() {
            return Err(GuslError::Shape(format!(
                "stack {height}x{width}x{} needs {} values, got {}",
                channels.len(),
                height * width * channels.len(),
                data.len()
            )));
        }
        Ok(Self { source, height, width, channels, data })
    }

    /// Prepends the raw pixel values of `img` as an extra channel.
    pub fn with_raw(self, img: &Image) -> Result<Self> {
        if img.dims() != (self.height, self.width) {
            return Err(GuslError::Shape("raw channel image does not match stack".into()));
        }
        let c = self.channels.len();
        let mut data = Vec::with_capacity(self.data.len() + img.len());
        for (p, &v) in img.data().iter().enumerate() {
            data.push(v);
            data.extend_from_slice(&self.data[p * c..(p + 1) * c]);
        }
        let mut channels = Vec::with_capacity(c + 1);
        channels.push(Channel::Raw);
        channels.extend_from_slice(&self.channels);
        Ok(Self { source: self.source, height: self.height, width: self.width, channels, data })
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    #[inline]
    pub fn pixel(&self, p: usize) -> &[f64] {
        let c = self.channels.len();
        &self.data[p * c..(p + 1) * c]
    }

    #[inline]
    fn at(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels.len() + channel]
    }
}

/// Column-major feature table with per-column provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    data: Vec<f64>,
    col_meta: Vec<ColumnOrigin>,
}

impl FeatureMatrix {
    pub fn from_columns(rows: usize, columns: Vec<Vec<f64>>, col_meta: Vec<ColumnOrigin>) -> Result<Self> {
        if columns.len() != col_meta.len() {
            return Err(GuslError::Shape(format!("{} columns but {} metadata entries", columns.len(), col_meta.len())));
        }
        let mut data = Vec::with_capacity(rows * columns.len());
        for col in &columns {
            if col.len() != rows {
                return Err(GuslError::Shape(format!("column of length {} in a {rows}-row matrix", col.len())));
            }
            data.extend_from_slice(col);
        }
        Self::from_column_major(rows, data, col_meta)
    }

    pub fn from_column_major(rows: usize, data: Vec<f64>, col_meta: Vec<ColumnOrigin>) -> Result<Self> {
        if data.len() != rows * col_meta.len() {
            return Err(GuslError::Shape(format!(
                "{rows}x{} matrix needs {} values, got {}",
                col_meta.len(),
                rows * col_meta.len(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(GuslError::InvalidInput("feature matrix contains non-finite values".into()));
        }
        Ok(Self { rows, data, col_meta })
    }

    /// Unlabelled matrix from row-major data; columns get placeholder provenance.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut columns = vec![Vec::with_capacity(rows.len()); cols];
        for row in rows {
            if row.len() != cols {
                return Err(GuslError::Shape("ragged rows".into()));
            }
            for (c, v) in columns.iter_mut().zip(row) {
                c.push(*v);
            }
        }
        let meta = (0..cols).map(|j| ColumnOrigin::Lnt { projection: j }).collect();
        Self::from_columns(rows.len(), columns, meta)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.col_meta.len()
    }

    #[inline]
    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.rows + row]
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        (0..self.cols()).map(|j| self.get(row, j)).collect()
    }

    pub fn col_meta(&self) -> &[ColumnOrigin] {
        &self.col_meta
    }

    pub fn select_columns(&self, columns: &[usize]) -> Result<FeatureMatrix> {
        let mut data = Vec::with_capacity(self.rows * columns.len());
        let mut meta = Vec::with_capacity(columns.len());
        for &j in columns {
            if j >= self.cols() {
                return Err(GuslError::Shape(format!("column {j} out of range ({})", self.cols())));
            }
            data.extend_from_slice(self.column(j));
            meta.push(self.col_meta[j]);
        }
        Ok(FeatureMatrix { rows: self.rows, data, col_meta: meta })
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols());
        for j in 0..self.cols() {
            let col = self.column(j);
            data.extend(rows.iter().map(|&r| col[r]));
        }
        FeatureMatrix { rows: rows.len(), data, col_meta: self.col_meta.clone() }
    }

    /// Appends the columns of `other` (same row count).
    pub fn hstack(mut self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if other.rows != self.rows {
            return Err(GuslError::Shape(format!("hstack of {} and {} rows", self.rows, other.rows)));
        }
        self.data.extend_from_slice(&other.data);
        self.col_meta.extend_from_slice(&other.col_meta);
        Ok(self)
    }
}

/// Anything that can produce feature columns on demand.
pub trait ColumnSource: Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn origin(&self, j: usize) -> ColumnOrigin;
    /// Writes column `j` into `out` (length `rows()`).
    fn fill_column(&self, j: usize, out: &mut [f64]);
}

impl ColumnSource for FeatureMatrix {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.col_meta.len()
    }

    fn origin(&self, j: usize) -> ColumnOrigin {
        self.col_meta[j]
    }

    fn fill_column(&self, j: usize, out: &mut [f64]) {
        out.copy_from_slice(self.column(j));
    }
}

#[derive(Clone, Copy, Debug)]
struct NcColumn {
    stack: usize,
    channel: usize,
    dy: isize,
    dx: isize,
}

/// Column layout of neighborhood construction over a fixed list of stacks:
/// (stack, offset row-major, channel).
#[derive(Clone, Debug)]
pub struct NeighborhoodLayout {
    window: usize,
    columns: Vec<NcColumn>,
    meta: Vec<ColumnOrigin>,
}

impl NeighborhoodLayout {
    pub fn new(stacks: &[FeatureStack], window: usize) -> Result<Self> {
        if window.is_multiple_of(2) {
            return Err(GuslError::InvalidConfig(format!("neighborhood window must be odd, got {window}")));
        }
        let Some(first) = stacks.first() else {
            return Err(GuslError::InvalidInput("no feature stacks".into()));
        };
        if stacks.iter().any(|s| s.dims() != first.dims()) {
            return Err(GuslError::Shape("feature stacks differ in size".into()));
        }
        let half = (window / 2) as isize;
        let mut columns = Vec::new();
        let mut meta = Vec::new();
        for (s, stack) in stacks.iter().enumerate() {
            for dy in -half..=half {
                for dx in -half..=half {
                    for (c, &channel) in stack.channels().iter().enumerate() {
                        columns.push(NcColumn { stack: s, channel: c, dy, dx });
                        meta.push(ColumnOrigin::Neighborhood {
                            source: stack.source(),
                            channel,
                            dy: dy as i32,
                            dx: dx as i32,
                        });
                    }
                }
            }
        }
        Ok(Self { window, columns, meta })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn col_meta(&self) -> &[ColumnOrigin] {
        &self.meta
    }

    /// Value of column `j` at pixel index `pixel`.
    #[inline]
    pub fn value(&self, stacks: &[FeatureStack], j: usize, pixel: usize) -> f64 {
        let col = self.columns[j];
        let stack = &stacks[col.stack];
        let (h, w) = stack.dims();
        let (r, c) = ((pixel / w) as isize, (pixel % w) as isize);
        stack.at(reflect_index(r + col.dy, h), reflect_index(c + col.dx, w), col.channel)
    }

    /// Checks that `stacks` have the shape this layout was built for.
    pub fn check(&self, stacks: &[FeatureStack]) -> Result<()> {
        let max_stack = self.columns.iter().map(|c| c.stack).max().unwrap_or(0);
        if stacks.len() <= max_stack {
            return Err(GuslError::Shape("missing feature stacks".into()));
        }
        let dims = stacks[0].dims();
        for c in &self.columns {
            let s = &stacks[c.stack];
            if s.dims() != dims || c.channel >= s.channel_count() {
                return Err(GuslError::Shape("feature stacks do not match the layout".into()));
            }
        }
        Ok(())
    }

    /// Materializes `columns` for the given pixel indices.
    pub fn materialize(&self, stacks: &[FeatureStack], columns: &[usize], pixels: &[usize]) -> Result<FeatureMatrix> {
        self.check(stacks)?;
        let mut data = Vec::with_capacity(columns.len() * pixels.len());
        let mut meta = Vec::with_capacity(columns.len());
        for &j in columns {
            if j >= self.width() {
                return Err(GuslError::Shape(format!("column {j} out of range ({})", self.width())));
            }
            data.extend(pixels.iter().map(|&p| self.value(stacks, j, p)));
            meta.push(self.meta[j]);
        }
        FeatureMatrix::from_column_major(pixels.len(), data, meta)
    }
}

/// Concatenates the coefficient vectors of every position in the reflect-padded
/// `nc_window` x `nc_window` neighborhood of each pixel, for every stack.
pub fn neighborhood_construct(stacks: &[FeatureStack], nc_window: usize) -> Result<FeatureMatrix> {
    let layout = NeighborhoodLayout::new(stacks, nc_window)?;
    let pixels: Vec<usize> = (0..stacks[0].pixels()).collect();
    let all: Vec<usize> = (0..layout.width()).collect();
    layout.materialize(stacks, &all, &pixels)
}

/// Neighborhood features over sampled pixels of many images, computed lazily per column.
pub struct PooledNeighborhood<'a> {
    layout: &'a NeighborhoodLayout,
    images: &'a [Vec<FeatureStack>],
    samples: &'a [(usize, usize)],
}

impl<'a> PooledNeighborhood<'a> {
    /// `samples` are `(image index, pixel index)` pairs.
    pub fn new(
        layout: &'a NeighborhoodLayout,
        images: &'a [Vec<FeatureStack>],
        samples: &'a [(usize, usize)],
    ) -> Result<Self> {
        for stacks in images {
            layout.check(stacks)?;
        }
        Ok(Self { layout, images, samples })
    }

    pub fn materialize(&self, columns: &[usize]) -> Result<FeatureMatrix> {
        let mut data = vec![0.0; columns.len() * self.samples.len()];
        let mut meta = Vec::with_capacity(columns.len());
        for (k, &j) in columns.iter().enumerate() {
            if j >= self.layout.width() {
                return Err(GuslError::Shape(format!("column {j} out of range")));
            }
            self.fill_column(j, &mut data[k * self.samples.len()..(k + 1) * self.samples.len()]);
            meta.push(self.layout.meta[j]);
        }
        FeatureMatrix::from_column_major(self.samples.len(), data, meta)
    }
}

impl ColumnSource for PooledNeighborhood<'_> {
    fn rows(&self) -> usize {
        self.samples.len()
    }

    fn cols(&self) -> usize {
        self.layout.width()
    }

    fn origin(&self, j: usize) -> ColumnOrigin {
        self.layout.meta[j]
    }

    fn fill_column(&self, j: usize, out: &mut [f64]) {
        for (o, &(img, p)) in out.iter_mut().zip(self.samples) {
            *o = self.layout.value(&self.images[img], j, p);
        }
    }
}
