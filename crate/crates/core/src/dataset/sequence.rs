use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Dense `[T, C, H, W]` field sequence sampled every `dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatioTemporalSequence {
    data: Tensor,
    dt: f64,
}

impl SpatioTemporalSequence {
    pub fn new(data: Tensor, dt: f64) -> Result<Self> {
        let s = data.shape();
        if s.len() != 4 {
            return Err(Error::Shape(format!(
                "sequence must be [T, C, H, W], got {:?}",
                s
            )));
        }
        if s[0] == 0 || s[1] == 0 {
            return Err(Error::Shape(format!("empty sequence {:?}", s)));
        }
        if !s[2].is_power_of_two() || !s[3].is_power_of_two() {
            return Err(Error::NonPowerOfTwo { h: s[2], w: s[3] });
        }
        if !data.is_finite() {
            return Err(Error::NonFinite("sequence contains NaN or Inf".into()));
        }
        Ok(Self { data, dt })
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.data.shape()[2], self.data.shape()[3])
    }

    /// Frame `t` as a `[C, H, W]` tensor.
    pub fn frame(&self, t: usize) -> Tensor {
        self.data.index_axis0(t)
    }

    /// Frames `start..end` with time folded into channels: `[(end-start)*C, H, W]`.
    pub fn folded(&self, start: usize, end: usize) -> Tensor {
        let (c, (h, w)) = (self.channels(), self.grid());
        let per = c * h * w;
        Tensor::from_vec(
            &[(end - start) * c, h, w],
            self.data.data()[start * per..end * per].to_vec(),
        )
        .expect("frame range inside sequence")
    }
}

/// One forecasting sample: the first `input_len` frames predict the next
/// `horizon` frames.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastTask {
    input_len: usize,
    horizon: usize,
    sequence: SpatioTemporalSequence,
}

impl ForecastTask {
    pub fn new(sequence: SpatioTemporalSequence, input_len: usize, horizon: usize) -> Result<Self> {
        if input_len == 0 || horizon == 0 || input_len + horizon > sequence.frames() {
            return Err(Error::Config(format!(
                "input_len {} + horizon {} must be positive and fit in {} frames",
                input_len,
                horizon,
                sequence.frames()
            )));
        }
        Ok(Self {
            input_len,
            horizon,
            sequence,
        })
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn sequence(&self) -> &SpatioTemporalSequence {
        &self.sequence
    }

    /// `(X, Y)` with time folded into channels: `[I_l*C, H, W]`, `[Δ*C, H, W]`.
    pub fn split(&self) -> (Tensor, Tensor) {
        let x = self.sequence.folded(0, self.input_len);
        let y = self
            .sequence
            .folded(self.input_len, self.input_len + self.horizon);
        (x, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_contiguous_frames() {
        let data = Tensor::from_fn(&[5, 2, 2, 2], |i| i as f64);
        let seq = SpatioTemporalSequence::new(data, 0.1).unwrap();
        let task = ForecastTask::new(seq, 3, 2).unwrap();
        let (x, y) = task.split();
        assert_eq!(x.shape(), &[6, 2, 2]);
        assert_eq!(y.shape(), &[4, 2, 2]);
        assert_eq!(x.data()[0], 0.0);
        assert_eq!(y.data()[0], 24.0);
        assert_eq!(*y.data().last().unwrap(), 39.0);
    }

    #[test]
    fn invariants_are_enforced() {
        assert!(SpatioTemporalSequence::new(Tensor::zeros(&[2, 1, 6, 8]), 1.0).is_err());
        let mut bad = Tensor::zeros(&[2, 1, 4, 4]);
        bad.data_mut()[3] = f64::NAN;
        assert!(SpatioTemporalSequence::new(bad, 1.0).is_err());
        let seq = SpatioTemporalSequence::new(Tensor::zeros(&[4, 1, 4, 4]), 1.0).unwrap();
        assert!(ForecastTask::new(seq, 3, 2).is_err());
    }
}
