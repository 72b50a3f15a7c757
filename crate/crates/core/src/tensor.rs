//! Plain named-tensor storage shared by parameters, checkpoints, and the
//! autodiff tape. Data is always f64, row-major.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub data: Vec<f64>,
    pub shape: Vec<usize>,
}

impl RawTensor {
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} wants {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(RawTensor { data, shape })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        RawTensor {
            data: vec![0.0; n],
            shape,
        }
    }

    pub fn scalar(v: f64) -> Self {
        RawTensor {
            data: vec![v],
            shape: vec![1],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Matrix rows for rank-2 tensors.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(RawTensor::new(vec![1.0, 2.0], vec![3]).is_err());
        let t = RawTensor::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![2, 3]).unwrap();
        assert_eq!(t.rows(), 2);
        assert_eq!(t.len(), 6);
    }
}
