use super::EngineError;

/// Element type of a [`Tensor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DType {
    F64,
    I64,
}

impl DType {
    pub fn as_str(self) -> &'static str {
        match self {
            DType::F64 => "f64",
            DType::I64 => "i64",
        }
    }
}

impl std::fmt::Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    I64(Vec<i64>),
}

/// Dense row-major array of `f64` or `i64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn from_f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, EngineError> {
        if numel(&shape) != data.len() {
            return Err(EngineError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self {
            shape,
            data: TensorData::F64(data),
        })
    }

    pub fn from_i64(shape: Vec<usize>, data: Vec<i64>) -> Result<Self, EngineError> {
        if numel(&shape) != data.len() {
            return Err(EngineError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self {
            shape,
            data: TensorData::I64(data),
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self {
            shape,
            data: TensorData::F64(vec![0.0; n]),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: TensorData::F64(vec![value]),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F64(_) => DType::F64,
            TensorData::I64(_) => DType::I64,
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            TensorData::F64(v) => v.len(),
            TensorData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn as_f64(&self) -> Result<&[f64], EngineError> {
        match &self.data {
            TensorData::F64(v) => Ok(v),
            TensorData::I64(_) => Err(EngineError::DType {
                expected: DType::F64,
                found: DType::I64,
            }),
        }
    }

    pub fn as_f64_mut(&mut self) -> Result<&mut [f64], EngineError> {
        match &mut self.data {
            TensorData::F64(v) => Ok(v),
            TensorData::I64(_) => Err(EngineError::DType {
                expected: DType::F64,
                found: DType::I64,
            }),
        }
    }

    pub fn as_i64(&self) -> Result<&[i64], EngineError> {
        match &self.data {
            TensorData::I64(v) => Ok(v),
            TensorData::F64(_) => Err(EngineError::DType {
                expected: DType::I64,
                found: DType::F64,
            }),
        }
    }

    /// Same data under a new shape with equal element count.
    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self, EngineError> {
        if numel(&shape) != self.len() {
            return Err(EngineError::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_must_match_shape() {
        assert!(Tensor::from_f64(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::from_i64(vec![2, 2], vec![1, 2, 3, 4]).unwrap();
        assert_eq!(t.dtype(), DType::I64);
        assert!(t.as_f64().is_err());
    }

    #[test]
    fn axis_split() {
        assert_eq!(split_axis(&[2, 3, 4], 1), (2, 3, 4));
        assert_eq!(split_axis(&[5], 0), (1, 5, 1));
    }
}
