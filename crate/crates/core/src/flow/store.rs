//! Flat parameter storage shared by every learnable layer.
//!
//! All parameters live in one contiguous `Vec<f64>` so the optimizer,
//! gradient buffers, norm clipping and checkpointing can treat the model
//! as a single flat vector, while layers address their tensors through
//! [`TensorId`] handles with a recorded name and shape.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    data: Vec<f64>,
    specs: Vec<TensorSpec>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(&mut self, name: impl Into<String>, shape: &[usize]) -> TensorId {
        let len: usize = shape.iter().product();
        let offset = self.data.len();
        self.data.resize(offset + len, 0.0);
        self.specs.push(TensorSpec {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
            len,
        });
        TensorId(self.specs.len() - 1)
    }

    pub fn spec(&self, id: TensorId) -> &TensorSpec {
        &self.specs[id.0]
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn get(&self, id: TensorId) -> &[f64] {
        let s = &self.specs[id.0];
        &self.data[s.offset..s.offset + s.len]
    }

    pub fn get_mut(&mut self, id: TensorId) -> &mut [f64] {
        let s = &self.specs[id.0];
        &mut self.data[s.offset..s.offset + s.len]
    }

    pub fn find(&self, name: &str) -> Option<TensorId> {
        self.specs.iter().position(|s| s.name == name).map(TensorId)
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Gradient buffer with the same flat layout, zero-filled.
    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.data.len()]
    }

    /// Slice of a flat gradient buffer corresponding to `id`.
    pub fn grad_slice<'a>(&self, grads: &'a [f64], id: TensorId) -> &'a [f64] {
        let s = &self.specs[id.0];
        &grads[s.offset..s.offset + s.len]
    }
}
