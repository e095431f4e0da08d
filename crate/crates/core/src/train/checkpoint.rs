//! Binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic           8 bytes  "PNETCKPT"
//! version         u32      (currently 1)
//! model config    u32 input_channels, 4 x u32 stage_widths, u32 decoder_width,
//!                 u32 num_classes, u32 r1, u32 r2, u8 downsample, u8 skip_tap,
//!                 f64 dropout_rate
//! metadata        u32 input_height, u32 input_width, str dataset, u64 epoch,
//!                 u64 seed, u128 dropout stream word position
//! parameters      u32 count, then per tensor: str name, 4 x u32 dims, u32 len, len x f32
//! buffers         same layout (batch-norm running mean / variance)
//! optimizer       u8 present; if 1: u64 t, f64 beta1, f64 beta2, f64 epsilon,
//!                 then per parameter (canonical order) u32 len + f32 first moments,
//!                 then per parameter u32 len + f32 second moments
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8.

use std::path::Path;

use crate::arch::{DownsampleVariant, ModelConfig, PNet, SkipTap};
use crate::error::{Error, Result};
use crate::optim::AdamState;

pub const MAGIC: &[u8; 8] = b"PNETCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dims: [usize; 4],
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamSnapshot {
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamSnapshot {
    pub fn from_state(state: &AdamState<f32>) -> Self {
        Self {
            t: state.t,
            beta1: state.beta1,
            beta2: state.beta2,
            epsilon: state.epsilon,
            m: state.m.clone(),
            v: state.v.clone(),
        }
    }

    pub fn to_state(&self) -> AdamState<f32> {
        AdamState {
            m: self.m.clone(),
            v: self.v.clone(),
            t: self.t,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// Everything needed to rebuild a model for eval or to resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Training resolution `(height, width)`.
    pub input_size: (usize, usize),
    pub dataset: String,
    pub epoch: u64,
    pub seed: u64,
    pub dropout_word_pos: u128,
    pub params: Vec<NamedArray>,
    pub buffers: Vec<NamedArray>,
    pub adam: Option<AdamSnapshot>,
}

impl Checkpoint {
    /// Snapshot of an `f32` model; `adam` is optional.
    pub fn from_model(model: &PNet<f32>, input_size: (usize, usize), dataset: &str, adam: Option<&AdamState<f32>>) -> Self {
        let collect = |v: Vec<(String, crate::arch::ParamView<'_, f32>)>| {
            v.into_iter()
                .map(|(name, p)| NamedArray {
                    name,
                    dims: p.shape,
                    data: p.data.to_vec(),
                })
                .collect()
        };
        Self {
            config: model.config().clone(),
            input_size,
            dataset: dataset.to_string(),
            epoch: 0,
            seed: 0,
            dropout_word_pos: 0,
            params: collect(model.named_params()),
            buffers: collect(model.named_buffers()),
            adam: adam.map(AdamSnapshot::from_state),
        }
    }

    /// Rebuilds the model; names and shapes must match the configuration exactly.
    pub fn to_model(&self) -> Result<PNet<f32>> {
        let mut rng = crate::rng::substream(0, "checkpoint", 0);
        let mut model = PNet::<f32>::new(self.config.clone(), &mut rng)?;
        let shapes: Vec<(String, [usize; 4])> =
            model.named_params().into_iter().map(|(n, p)| (n, p.shape)).collect();
        let buffer_shapes: Vec<(String, [usize; 4])> =
            model.named_buffers().into_iter().map(|(n, p)| (n, p.shape)).collect();
        check_names("parameter", &shapes, &self.params)?;
        check_names("buffer", &buffer_shapes, &self.buffers)?;
        for ((_, dst), src) in model.named_params_mut().into_iter().zip(&self.params) {
            dst.copy_from_slice(&src.data);
        }
        for ((_, dst), src) in model.named_buffers_mut().into_iter().zip(&self.buffers) {
            dst.copy_from_slice(&src.data);
        }
        if let Some(a) = &self.adam {
            if a.m.len() != self.params.len()
                || a.v.len() != self.params.len()
                || a.m.iter().zip(&self.params).any(|(m, p)| m.len() != p.data.len())
                || a.v.iter().zip(&self.params).any(|(v, p)| v.len() != p.data.len())
            {
                return Err(Error::Checkpoint("optimizer moments do not match the parameters".into()));
            }
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);
        let c = &self.config;
        w.u32(c.input_channels as u32);
        for &s in &c.stage_widths {
            w.u32(s as u32);
        }
        w.u32(c.decoder_width as u32);
        w.u32(c.num_classes as u32);
        w.u32(c.dilation_pair.0 as u32);
        w.u32(c.dilation_pair.1 as u32);
        w.0.push(c.downsample.code());
        w.0.push(match c.skip_tap {
            SkipTap::AfterPatch => 0,
            SkipTap::BeforePatch => 1,
        });
        w.f64(c.dropout_rate);
        w.u32(self.input_size.0 as u32);
        w.u32(self.input_size.1 as u32);
        w.str(&self.dataset);
        w.u64(self.epoch);
        w.u64(self.seed);
        w.0.extend_from_slice(&self.dropout_word_pos.to_le_bytes());
        for set in [&self.params, &self.buffers] {
            w.u32(set.len() as u32);
            for a in set.iter() {
                w.str(&a.name);
                for &d in &a.dims {
                    w.u32(d as u32);
                }
                w.f32s(&a.data);
            }
        }
        match &self.adam {
            None => w.0.push(0),
            Some(a) => {
                w.0.push(1);
                w.u64(a.t);
                w.f64(a.beta1);
                w.f64(a.beta2);
                w.f64(a.epsilon);
                for m in &a.m {
                    w.f32s(m);
                }
                for v in &a.v {
                    w.f32s(v);
                }
            }
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic: not a PNet checkpoint".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (this build reads version {FORMAT_VERSION})"
            )));
        }
        let input_channels = r.u32()? as usize;
        let mut stage_widths = [0; 4];
        for s in &mut stage_widths {
            *s = r.u32()? as usize;
        }
        let decoder_width = r.u32()? as usize;
        let num_classes = r.u32()? as usize;
        let dilation_pair = (r.u32()? as usize, r.u32()? as usize);
        let downsample = DownsampleVariant::from_code(r.u8()?)
            .ok_or_else(|| Error::Checkpoint("unknown downsample variant code".into()))?;
        let skip_tap = match r.u8()? {
            0 => SkipTap::AfterPatch,
            1 => SkipTap::BeforePatch,
            other => return Err(Error::Checkpoint(format!("unknown skip tap code {other}"))),
        };
        let dropout_rate = r.f64()?;
        let config = ModelConfig {
            input_channels,
            stage_widths,
            decoder_width,
            num_classes,
            dilation_pair,
            downsample,
            dropout_rate,
            skip_tap,
        };
        config.validate().map_err(|e| Error::Checkpoint(format!("stored configuration is invalid: {e}")))?;
        let input_size = (r.u32()? as usize, r.u32()? as usize);
        let dataset = r.str()?;
        let epoch = r.u64()?;
        let seed = r.u64()?;
        let dropout_word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        let mut sets = Vec::with_capacity(2);
        for _ in 0..2 {
            let count = r.u32()? as usize;
            let mut set = Vec::with_capacity(count.min(1024));
            for _ in 0..count {
                let name = r.str()?;
                let mut dims = [0; 4];
                for d in &mut dims {
                    *d = r.u32()? as usize;
                }
                let data = r.f32s()?;
                if data.len() != dims.iter().product::<usize>() {
                    return Err(Error::Checkpoint(format!("tensor '{name}' length does not match its shape")));
                }
                set.push(NamedArray { name, dims, data });
            }
            sets.push(set);
        }
        let buffers = sets.pop().expect("two sets");
        let params = sets.pop().expect("two sets");
        let adam = match r.u8()? {
            0 => None,
            1 => {
                let t = r.u64()?;
                let (beta1, beta2, epsilon) = (r.f64()?, r.f64()?, r.f64()?);
                let m = (0..params.len()).map(|_| r.f32s()).collect::<Result<Vec<_>>>()?;
                let v = (0..params.len()).map(|_| r.f32s()).collect::<Result<Vec<_>>>()?;
                Some(AdamSnapshot { t, beta1, beta2, epsilon, m, v })
            }
            other => return Err(Error::Checkpoint(format!("bad optimizer flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let ckpt = Checkpoint {
            config,
            input_size,
            dataset,
            epoch,
            seed,
            dropout_word_pos,
            params,
            buffers,
            adam,
        };
        // validates the name set against the configuration
        ckpt.to_model()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::data(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::data(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

fn check_names(kind: &str, expected: &[(String, [usize; 4])], got: &[NamedArray]) -> Result<()> {
    if expected.len() != got.len() {
        return Err(Error::Checkpoint(format!(
            "{kind} count {} does not match the configuration ({})",
            got.len(),
            expected.len()
        )));
    }
    for ((name, dims), a) in expected.iter().zip(got) {
        if *name != a.name {
            return Err(Error::Checkpoint(format!("expected {kind} '{name}', found '{}'", a.name)));
        }
        if *dims != a.dims {
            return Err(Error::Checkpoint(format!("{kind} '{name}' has shape {:?}, expected {dims:?}", a.dims)));
        }
    }
    Ok(())
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        self.u32(v.len() as u32);
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated file at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))
    }
    fn f32s(&mut self) -> Result<Vec<f32>> {
        let n = self.u32()? as usize;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("length overflow".into()))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}
