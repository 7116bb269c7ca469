use super::NnError;

/// Dense `batch x length x channels` activations, channels fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub batch: usize,
    pub len: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(batch: usize, len: usize, channels: usize) -> Self {
        Self {
            batch,
            len,
            channels,
            data: vec![0.0; batch * len * channels],
        }
    }

    pub fn from_vec(batch: usize, len: usize, channels: usize, data: Vec<f64>) -> Result<Self, NnError> {
        if data.len() != batch * len * channels {
            return Err(NnError::ShapeMismatch(format!(
                "{} values do not fill ({batch}, {len}, {channels})",
                data.len()
            )));
        }
        Ok(Self {
            batch,
            len,
            channels,
            data,
        })
    }

    /// `(batch, features)` stored as `(batch, 1, features)`.
    pub fn flat(batch: usize, features: usize, data: Vec<f64>) -> Result<Self, NnError> {
        Self::from_vec(batch, 1, features, data)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.batch, self.len, self.channels)
    }

    #[inline]
    pub fn idx(&self, b: usize, t: usize, c: usize) -> usize {
        (b * self.len + t) * self.channels + c
    }

    pub fn at(&self, b: usize, t: usize, c: usize) -> f64 {
        self.data[self.idx(b, t, c)]
    }

    /// Values of one batch item.
    pub fn sample(&self, b: usize) -> &[f64] {
        let n = self.len * self.channels;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn sample_len(&self) -> usize {
        self.len * self.channels
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
