use std::io::{Read, Write};

use rand::Rng;

use crate::error::{ComputeError, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"COEX";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Index of a parameter inside its [`ParameterSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Tensor,
    slots: Vec<Tensor>,
}

/// Named parameters with paired gradient storage and optimizer slots.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    entries: Vec<Entry>,
    /// Number of optimizer steps taken (Adam bias correction).
    steps: u64,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.entries.iter().any(|e| e.name == name) {
            return Err(ComputeError::DuplicateName(name));
        }
        let grad = Tensor::zeros(value.shape());
        self.entries.push(Entry {
            name,
            value,
            grad,
            slots: Vec::new(),
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    /// Adds a weight drawn from `U(−b, b)` with `b = √(6 / fan_in)`.
    pub fn add_he_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<ParamId> {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
            .ok_or_else(|| ComputeError::UnknownParameter(name.to_string()))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].grad
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().fill(0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub(crate) fn bump_steps(&mut self) -> u64 {
        self.steps += 1;
        self.steps
    }

    pub(crate) fn ensure_slots(&mut self, count: usize) {
        for e in &mut self.entries {
            while e.slots.len() < count {
                e.slots.push(Tensor::zeros(e.value.shape()));
            }
        }
    }

    pub(crate) fn entry_parts(&mut self, id: ParamId) -> (&mut Tensor, &Tensor, &mut [Tensor]) {
        let e = &mut self.entries[id.0];
        (&mut e.value, &e.grad, &mut e.slots)
    }

    /// Global L2 norm over all gradients.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for e in &mut self.entries {
            for g in e.grad.data_mut() {
                *g *= factor;
            }
        }
    }

    /// Writes parameter values in the versioned binary checkpoint layout:
    /// magic, version (u32), count (u32), then per parameter the name length
    /// (u32), name bytes, rank (u32), dims (u64 each) and little-endian f64
    /// data.
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<()> {
        write_tensors(w, self.entries.iter().map(|e| (e.name.as_str(), &e.value)))
    }

    /// Reads a checkpoint written by [`Self::write_checkpoint`]. Gradients
    /// are zeroed and optimizer slots left empty.
    pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Self> {
        let mut set = ParameterSet::new();
        for (name, value) in read_tensors(r)? {
            set.add(name, value)?;
        }
        Ok(set)
    }

    /// Optimizer state (step count and per-parameter slots) in the same
    /// tensor layout, slot tensors named `<param>#<slot>`.
    pub fn write_optimizer_state<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&self.steps.to_le_bytes())?;
        let named: Vec<(String, &Tensor)> = self
            .entries
            .iter()
            .flat_map(|e| {
                e.slots
                    .iter()
                    .enumerate()
                    .map(move |(i, s)| (format!("{}#{i}", e.name), s))
            })
            .collect();
        write_tensors(w, named.iter().map(|(n, t)| (n.as_str(), *t)))
    }

    pub fn read_optimizer_state<R: Read>(&mut self, r: &mut R) -> Result<()> {
        self.steps = u64::from_le_bytes(read_array(r, "optimizer step count")?);
        for e in &mut self.entries {
            e.slots.clear();
        }
        for (name, value) in read_tensors(r)? {
            let (param, slot) = name
                .rsplit_once('#')
                .ok_or_else(|| ComputeError::Checkpoint(format!("bad slot name `{name}`")))?;
            let id = self.id(param)?;
            let slot: usize = slot
                .parse()
                .map_err(|_| ComputeError::Checkpoint(format!("bad slot index in `{name}`")))?;
            let e = &mut self.entries[id.0];
            if value.shape() != e.value.shape() || slot != e.slots.len() {
                return Err(ComputeError::Checkpoint(format!("slot `{name}` does not match parameter")));
            }
            e.slots.push(value);
        }
        Ok(())
    }

    /// Copies values from `other` by name; both sets must hold the same
    /// names and shapes.
    pub fn load_values_from(&mut self, other: &ParameterSet) -> Result<()> {
        if other.len() != self.len() {
            return Err(ComputeError::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.len(),
                other.len()
            )));
        }
        for e in &mut self.entries {
            let src = other.value(other.id(&e.name)?);
            if src.shape() != e.value.shape() {
                return Err(ComputeError::ShapeMismatch {
                    op: "load",
                    left: e.value.shape().to_vec(),
                    right: src.shape().to_vec(),
                });
            }
            e.value = src.clone();
        }
        Ok(())
    }
}

fn write_tensors<'a, W: Write>(
    w: &mut W,
    items: impl ExactSizeIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(items.len() as u32).to_le_bytes())?;
    for (name, t) in items {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 8);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_array<R: Read, const N: usize>(r: &mut R, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => {
            ComputeError::Checkpoint(format!("truncated while reading {what}"))
        }
        _ => ComputeError::Io(e),
    })?;
    Ok(buf)
}

fn read_tensors<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor)>> {
    let magic: [u8; 4] = read_array(r, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(ComputeError::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_array(r, "format version")?);
    if version != CHECKPOINT_VERSION {
        return Err(ComputeError::Checkpoint(format!(
            "unsupported format version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let count = u32::from_le_bytes(read_array(r, "parameter count")?) as usize;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let what = format!("parameter {i}");
        let len = u32::from_le_bytes(read_array(r, &what)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|_| ComputeError::Checkpoint(format!("truncated while reading {what} name")))?;
        let name = String::from_utf8(name)
            .map_err(|_| ComputeError::Checkpoint(format!("{what}: name is not UTF-8")))?;
        let what = format!("parameter `{name}`");
        let rank = u32::from_le_bytes(read_array(r, &what)?) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(read_array(r, &what)?) as usize);
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| ComputeError::Checkpoint(format!("truncated while reading {what} data")))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}
