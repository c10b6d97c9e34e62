use crate::autodiff::Matrix;
use crate::features::Standardizer;
use crate::kpconv::{ParamStore, RunningStats};
use rand_chacha::ChaCha8Rng;
use std::io::{self, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 8] = b"KPCHGCK\0";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic bytes)")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint does not match the network: {0}")]
    Mismatch(String),
}

/// Position of a ChaCha8 generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Canonical text of the run configuration.
    pub config: String,
    pub epoch: u64,
    pub rng: RngState,
    pub param_names: Vec<String>,
    pub params: Vec<Matrix>,
    pub buffer_names: Vec<String>,
    pub buffers: Vec<RunningStats>,
    pub velocity: Vec<Matrix>,
    pub standardizer: Standardizer,
    pub class_weights: Vec<f64>,
    pub best_miou_ch: Option<f64>,
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u64(&mut self, v: u64) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn f64s(&mut self, v: &[f64]) -> io::Result<()> {
        self.u64(v.len() as u64)?;
        v.iter().try_for_each(|x| self.0.write_all(&x.to_le_bytes()))
    }
    fn str(&mut self, s: &str) -> io::Result<()> {
        self.u64(s.len() as u64)?;
        self.0.write_all(s.as_bytes())
    }
    fn matrix(&mut self, m: &Matrix) -> io::Result<()> {
        self.u64(m.rows as u64)?;
        self.u64(m.cols as u64)?;
        self.f64s(&m.data)
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        Ok(b)
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn len(&mut self) -> Result<usize, CheckpointError> {
        let n = self.u64()?;
        if n > (1 << 34) {
            return Err(CheckpointError::Corrupt(format!("implausible length {n}")));
        }
        Ok(n as usize)
    }
    fn f64s(&mut self) -> Result<Vec<f64>, CheckpointError> {
        let n = self.len()?;
        (0..n).map(|_| Ok(f64::from_le_bytes(self.bytes()?))).collect()
    }
    fn str(&mut self) -> Result<String, CheckpointError> {
        let n = self.len()?;
        let mut b = vec![0u8; n];
        self.0.read_exact(&mut b).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        String::from_utf8(b).map_err(|e| CheckpointError::Corrupt(e.to_string()))
    }
    fn matrix(&mut self) -> Result<Matrix, CheckpointError> {
        let rows = self.len()?;
        let cols = self.len()?;
        let data = self.f64s()?;
        if data.len() != rows * cols {
            return Err(CheckpointError::Corrupt("matrix size".into()));
        }
        Ok(Matrix { rows, cols, data })
    }
}

impl Checkpoint {
    pub fn from_store(
        config: String,
        epoch: u64,
        rng: RngState,
        store: &ParamStore,
        velocity: &[Matrix],
        standardizer: Standardizer,
        class_weights: Vec<f64>,
    ) -> Self {
        Self {
            config,
            epoch,
            rng,
            param_names: store.names.clone(),
            params: store.values.clone(),
            buffer_names: store.buffer_names.clone(),
            buffers: store.buffers.clone(),
            velocity: velocity.to_vec(),
            standardizer,
            class_weights,
            best_miou_ch: None,
        }
    }

    /// Copies parameters and running statistics into a store with the same layout.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<(), CheckpointError> {
        if store.names != self.param_names || store.buffer_names != self.buffer_names {
            return Err(CheckpointError::Mismatch("parameter names differ".into()));
        }
        if let Some((a, b)) = store.values.iter().zip(&self.params).find(|(a, b)| a.shape() != b.shape()) {
            return Err(CheckpointError::Mismatch(format!("shape {:?} vs {:?}", a.shape(), b.shape())));
        }
        store.values.clone_from(&self.params);
        store.buffers.clone_from(&self.buffers);
        Ok(())
    }

    pub fn write<W: Write>(&self, sink: W) -> Result<(), CheckpointError> {
        let mut w = Writer(io::BufWriter::new(sink));
        w.0.write_all(MAGIC)?;
        w.0.write_all(&VERSION.to_le_bytes())?;
        w.str(&self.config)?;
        w.u64(self.epoch)?;
        w.0.write_all(&self.rng.seed)?;
        w.u64(self.rng.stream)?;
        w.0.write_all(&self.rng.word_pos.to_le_bytes())?;
        w.u64(self.params.len() as u64)?;
        for (name, m) in self.param_names.iter().zip(&self.params) {
            w.str(name)?;
            w.matrix(m)?;
        }
        w.u64(self.buffers.len() as u64)?;
        for (name, b) in self.buffer_names.iter().zip(&self.buffers) {
            w.str(name)?;
            w.f64s(&b.mean)?;
            w.f64s(&b.var)?;
        }
        w.u64(self.velocity.len() as u64)?;
        self.velocity.iter().try_for_each(|m| w.matrix(m))?;
        w.f64s(&self.standardizer.mean)?;
        w.f64s(&self.standardizer.std)?;
        w.f64s(&self.class_weights)?;
        w.f64s(self.best_miou_ch.as_slice())?;
        w.0.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(source: R) -> Result<Self, CheckpointError> {
        let mut r = Reader(io::BufReader::new(source));
        if &r.bytes::<8>()? != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let version = u32::from_le_bytes(r.bytes()?);
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let config = r.str()?;
        let epoch = r.u64()?;
        let rng = RngState { seed: r.bytes()?, stream: r.u64()?, word_pos: u128::from_le_bytes(r.bytes()?) };
        let n = r.len()?;
        let mut param_names = Vec::with_capacity(n);
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            param_names.push(r.str()?);
            params.push(r.matrix()?);
        }
        let n = r.len()?;
        let mut buffer_names = Vec::with_capacity(n);
        let mut buffers = Vec::with_capacity(n);
        for _ in 0..n {
            buffer_names.push(r.str()?);
            buffers.push(RunningStats { mean: r.f64s()?, var: r.f64s()? });
        }
        let n = r.len()?;
        let velocity = (0..n).map(|_| r.matrix()).collect::<Result<Vec<_>, _>>()?;
        let standardizer = Standardizer { mean: r.f64s()?, std: r.f64s()? };
        let class_weights = r.f64s()?;
        let best_miou_ch = r.f64s()?.first().copied();
        let mut rest = [0u8; 1];
        if r.0.read(&mut rest)? != 0 {
            return Err(CheckpointError::Corrupt("trailing bytes".into()));
        }
        Ok(Self { config, epoch, rng, param_names, params, buffer_names, buffers, velocity, standardizer, class_weights, best_miou_ch })
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), CheckpointError> {
        self.write(std::fs::File::create(path)?)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, CheckpointError> {
        Self::read(std::fs::File::open(path)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write(&mut v).expect("in-memory write");
        v
    }
}
