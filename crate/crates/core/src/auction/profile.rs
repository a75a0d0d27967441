use crate::error::{Error, Result};

/// A batch of flat per-sample profiles (valuations or bids), row major.
///
/// Row `h` holds one full profile in the slot layout of the owning
/// [`SettingSpec`](super::SettingSpec).
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileBatch {
    width: usize,
    data: Vec<f64>,
}

pub type ValuationBatch = ProfileBatch;
pub type BidBatch = ProfileBatch;

impl ProfileBatch {
    pub fn zeros(len: usize, width: usize) -> Self {
        Self {
            width,
            data: vec![0.0; len * width],
        }
    }

    pub fn from_vec(width: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || data.len() % width != 0 {
            return Err(Error::Shape(format!(
                "{} values do not split into rows of width {width}",
                data.len()
            )));
        }
        Ok(Self { width, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let width = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(width * rows.len());
        for r in rows {
            if r.as_ref().len() != width {
                return Err(Error::Shape("ragged rows".into()));
            }
            data.extend_from_slice(r.as_ref());
        }
        Self::from_vec(width.max(1), data)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, h: usize) -> &[f64] {
        &self.data[h * self.width..(h + 1) * self.width]
    }

    pub fn row_mut(&mut self, h: usize) -> &mut [f64] {
        &mut self.data[h * self.width..(h + 1) * self.width]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.width)
    }

    pub fn rows_mut(&mut self) -> std::slice::ChunksExactMut<'_, f64> {
        self.data.chunks_exact_mut(self.width)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}
