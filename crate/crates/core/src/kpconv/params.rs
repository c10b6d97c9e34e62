use crate::autodiff::{BatchStats, Gradients, Matrix, Tape, Tensor, TensorError};
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(pub usize);

/// Running batch-norm statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Named trainable parameters and non-trainable buffers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub values: Vec<Matrix>,
    pub buffer_names: Vec<String>,
    pub buffers: Vec<RunningStats>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Uniform He-style initialisation, `U(-a, a)` with `a = sqrt(6 / fan_in)`.
    pub fn add_uniform<R: Rng>(&mut self, name: impl Into<String>, rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> ParamId {
        let a = (6.0 / fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
        self.add(name, Matrix { rows, cols, data })
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, channels: usize) -> BufferId {
        self.buffer_names.push(name.into());
        self.buffers.push(RunningStats { mean: vec![0.0; channels], var: vec![1.0; channels] });
        BufferId(self.buffers.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|m| m.data.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One recorded nearest-point difference.
#[derive(Clone, Debug)]
pub struct DiffRecord {
    pub stage: usize,
    pub value: Matrix,
}

/// A forward pass in progress: binds parameters onto a tape.
pub struct Context<'a> {
    pub tape: &'a mut Tape,
    store: &'a ParamStore,
    bound: Vec<Option<Tensor>>,
    pub mode: Mode,
    pub stat_updates: Vec<(BufferId, BatchStats)>,
    pub trace: Option<Vec<DiffRecord>>,
}

impl<'a> Context<'a> {
    /// Parameters are bound lazily; they require gradients in training mode.
    pub fn new(tape: &'a mut Tape, store: &'a ParamStore, mode: Mode) -> Self {
        let n = store.len();
        Self { tape, store, bound: vec![None; n], mode, stat_updates: Vec::new(), trace: None }
    }

    /// Uses caller-provided tensors for every parameter (in id order).
    pub fn with_params(tape: &'a mut Tape, store: &'a ParamStore, mode: Mode, params: &[Tensor]) -> Self {
        assert_eq!(params.len(), store.len(), "one tensor per parameter");
        Self {
            tape,
            store,
            bound: params.iter().map(|t| Some(*t)).collect(),
            mode,
            stat_updates: Vec::new(),
            trace: None,
        }
    }

    pub fn tracing(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn param(&mut self, id: ParamId) -> Tensor {
        if let Some(t) = self.bound[id.0] {
            return t;
        }
        let t = self.tape.leaf(self.store.get(id).clone(), self.mode == Mode::Train);
        self.bound[id.0] = Some(t);
        t
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn record_difference(&mut self, stage: usize, t: Tensor) {
        if let Some(trace) = &mut self.trace {
            trace.push(DiffRecord { stage, value: self.tape.value(t).clone() });
        }
    }

    /// Runs the reverse pass and returns one gradient per parameter id.
    pub fn param_gradients(&mut self, loss: Tensor) -> Result<Vec<Matrix>, TensorError> {
        let grads: Gradients = self.tape.backward(loss)?;
        Ok(self
            .store
            .ids()
            .map(|id| match self.bound[id.0] {
                Some(t) => grads.get_or_zeros(t),
                None => {
                    let m = self.store.get(id);
                    Matrix::zeros(m.rows, m.cols)
                }
            })
            .collect())
    }
}
