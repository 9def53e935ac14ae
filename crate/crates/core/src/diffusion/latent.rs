use rand::Rng;
use rand_distr::StandardNormal;

use super::DiffusionError;

/// Channel-major `channels x height x width` grid of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl LatentTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self, DiffusionError> {
        let shape = [channels, height, width];
        if channels == 0 || height == 0 || width == 0 || data.len() != channels * height * width {
            return Err(DiffusionError::DataLength { shape, found: data.len() });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self::new(channels, height, width, vec![value; channels * height * width])
            .expect("positive dimensions")
    }

    /// Unit-normal samples drawn from `rng` in data order.
    pub fn randn(channels: usize, height: usize, width: usize, rng: &mut impl Rng) -> Self {
        let data = (0..channels * height * width)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self::new(channels, height, width, data).expect("positive dimensions")
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.channels, self.height, self.width)
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn ensure_same_shape(&self, other: &LatentTensor) -> Result<(), DiffusionError> {
        if self.shape() != other.shape() {
            return Err(DiffusionError::ShapeMismatch(self.shape(), other.shape()));
        }
        Ok(())
    }

    /// `a * self + b * other`, elementwise.
    pub fn lincomb(&self, a: f64, other: &LatentTensor, b: f64) -> Result<LatentTensor, DiffusionError> {
        self.ensure_same_shape(other)?;
        Ok(LatentTensor {
            data: self.data.iter().zip(&other.data).map(|(x, y)| a * x + b * y).collect(),
            ..self.clone()
        })
    }

    pub fn scale(&self, a: f64) -> LatentTensor {
        LatentTensor {
            data: self.data.iter().map(|x| a * x).collect(),
            ..self.clone()
        }
    }

    /// Stacks `self` and `other` along the channel axis.
    pub fn concat_channels(&self, other: &LatentTensor) -> Result<LatentTensor, DiffusionError> {
        if self.height != other.height || self.width != other.width {
            return Err(DiffusionError::ShapeMismatch(self.shape(), other.shape()));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        LatentTensor::new(self.channels + other.channels, self.height, self.width, data)
    }

    /// Splits off the first `channels` channels.
    pub fn split_channels(&self, channels: usize) -> Result<(LatentTensor, LatentTensor), DiffusionError> {
        if channels == 0 || channels >= self.channels {
            return Err(DiffusionError::ShapeMismatch(self.shape(), [channels, self.height, self.width]));
        }
        let cut = channels * self.height * self.width;
        Ok((
            LatentTensor::new(channels, self.height, self.width, self.data[..cut].to_vec())?,
            LatentTensor::new(self.channels - channels, self.height, self.width, self.data[cut..].to_vec())?,
        ))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split() {
        let a = LatentTensor::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = LatentTensor::new(2, 2, 2, (0..8).map(f64::from).collect()).unwrap();
        let ab = a.concat_channels(&b).unwrap();
        assert_eq!(ab.shape(), [3, 2, 2]);
        assert_eq!(ab.get(1, 0, 1), 1.0);
        let (a2, b2) = ab.split_channels(1).unwrap();
        assert_eq!((a2, b2), (a, b));
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(LatentTensor::new(2, 2, 2, vec![0.0; 7]).is_err());
        let a = LatentTensor::zeros(1, 2, 2);
        let b = LatentTensor::zeros(1, 2, 3);
        assert!(matches!(a.lincomb(1.0, &b, 1.0), Err(DiffusionError::ShapeMismatch(..))));
    }
}
