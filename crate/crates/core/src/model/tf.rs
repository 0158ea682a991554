use crate::nn::Real;

/// Time-frequency embedding, channels-last: `data[(t * bins + f) * channels + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TfTensor<T> {
    pub frames: usize,
    pub bins: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Real> TfTensor<T> {
    pub fn new(frames: usize, bins: usize, channels: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), frames * bins * channels, "tf tensor shape");
        Self {
            frames,
            bins,
            channels,
            data,
        }
    }

    pub fn zeros(frames: usize, bins: usize, channels: usize) -> Self {
        Self::new(frames, bins, channels, vec![T::zero(); frames * bins * channels])
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.frames, self.bins)
    }

    pub fn at(&self, c: usize, t: usize, f: usize) -> T {
        self.data[(t * self.bins + f) * self.channels + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Swap the two leading axes of a `[a][b][c]` buffer.
pub(crate) fn swap_outer<T: Copy>(x: &[T], a: usize, b: usize, c: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for j in 0..b {
        for i in 0..a {
            out.extend_from_slice(&x[(i * b + j) * c..(i * b + j + 1) * c]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn swap_is_an_involution() {
        let x: Vec<u32> = (0..24).collect();
        let y = swap_outer(&x, 2, 3, 4);
        assert_eq!(&y[4..8], &x[12..16]);
        assert_eq!(swap_outer(&y, 3, 2, 4), x);
    }
}
