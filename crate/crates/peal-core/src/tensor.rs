//! Dense row-major f64 tensor. All arithmetic lives in [`crate::graph`];
//! this type only owns data, shape and the trainability flag.

use rand::Rng;

use crate::error::NumericsError;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumericsError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "from_vec",
                details: format!("shape {:?} implies {} values, got {}", shape, numel, data.len()),
            });
        }
        Ok(Self { shape, data, requires_grad: false })
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![], data: vec![v], requires_grad: false }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self { shape, data: vec![0.0; numel], requires_grad: false }
    }

    pub fn full(shape: Vec<usize>, v: f64) -> Self {
        let numel = shape.iter().product();
        Self { shape, data: vec![v; numel], requires_grad: false }
    }

    /// Gaussian init with the given standard deviation (Box-Muller on the rng stream).
    pub fn randn<R: Rng>(shape: Vec<usize>, std: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        while data.len() < numel {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen::<f64>();
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * std::f64::consts::PI * u2;
            data.push(r * theta.cos() * std);
            if data.len() < numel {
                data.push(r * theta.sin() * std);
            }
        }
        Self { shape, data, requires_grad: false }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Flat index of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self, NumericsError> {
        let mut t = Self::from_vec(shape, self.data.clone())?;
        t.requires_grad = self.requires_grad;
        Ok(t)
    }

    /// Gather rows along the first axis into a new tensor.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Self, NumericsError> {
        if self.shape.is_empty() {
            return Err(NumericsError::Invalid {
                what: "gather_rows input",
                details: "cannot gather rows of a scalar".to_string(),
            });
        }
        let rows = self.shape[0];
        let stride = if rows == 0 { 0 } else { self.data.len() / rows };
        let mut out = Vec::with_capacity(ids.len() * stride);
        for &id in ids {
            if id >= rows {
                return Err(NumericsError::Invalid {
                    what: "row id",
                    details: format!("{id} out of range 0..{rows}"),
                });
            }
            out.extend_from_slice(&self.data[id * stride..(id + 1) * stride]);
        }
        let mut shape = self.shape.clone();
        shape[0] = ids.len();
        Self::from_vec(shape, out)
    }

    /// FNV-1a over the little-endian bit patterns; used for freeze checks.
    pub fn bit_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for v in &self.data {
            for b in v.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }
}
