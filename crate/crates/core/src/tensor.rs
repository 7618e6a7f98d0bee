//! Dense row-major tensors and the raw `JNT1` dump format.

use std::io::{Read, Write};

use crate::error::{invalid, shape_err, Error, Result};

pub const DUMP_MAGIC: &[u8; 4] = b"JNT1";

/// Dense real tensor. Images use the N×C×H×W convention.
/// Equality compares shape and values only, never the gradient buffer.
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    /// Gradient buffer, filled in for parameters after a backward pass.
    pub grad: Option<Vec<f64>>,
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 4 {
            return Err(shape_err!("rank must be 1..=4, got {}", shape.len()));
        }
        if let Some(axis) = shape.iter().position(|&d| d == 0) {
            return Err(shape_err!("dimension {axis} is zero in {shape:?}"));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(shape_err!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            ));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![value; numel]).expect("valid shape")
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::new(vec![1], vec![value]).expect("valid shape")
    }

    /// 1×1×H×W image from row-major pixels.
    pub fn image(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![1, 1, height, width], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// (N, C, H, W) for a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(shape_err!("expected N×C×H×W, got {:?}", self.shape)),
        }
    }

    /// (H, W) of a single-channel single-image tensor.
    pub fn image_dims(&self) -> Result<(usize, usize)> {
        match *self.shape.as_slice() {
            [1, 1, h, w] => Ok((h, w)),
            _ => Err(shape_err!("expected 1×1×H×W image, got {:?}", self.shape)),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn ensure_same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err!("{what}: {:?} vs {:?}", self.shape, other.shape));
        }
        Ok(())
    }

    /// Writes the `JNT1` dump: magic, u32 rank, u32 dims, f32 values, all
    /// little-endian.
    pub fn write_dump<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        out.write_all(DUMP_MAGIC)?;
        out.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for &v in &self.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.write_all(&buf)
    }

    pub fn to_dump_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_dump(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    /// Reads one `JNT1` dump. `offset` is only used to position diagnostics.
    pub fn read_dump<R: Read>(input: &mut R, offset: usize) -> Result<Tensor> {
        let mut pos = offset;
        let mut word = [0u8; 4];
        read_exact(input, &mut word, &mut pos)?;
        if &word != DUMP_MAGIC {
            return Err(Error::format("tensor dump", pos - 4, "bad magic"));
        }
        read_exact(input, &mut word, &mut pos)?;
        let rank = u32::from_le_bytes(word) as usize;
        if rank == 0 || rank > 4 {
            return Err(Error::format(
                "tensor dump",
                pos - 4,
                format!("unsupported rank {rank}"),
            ));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            read_exact(input, &mut word, &mut pos)?;
            shape.push(u32::from_le_bytes(word) as usize);
        }
        let numel: usize = shape.iter().product();
        if numel == 0 {
            return Err(Error::format("tensor dump", pos, "zero-sized dimension"));
        }
        let mut raw = vec![0u8; numel * 4];
        read_exact(input, &mut raw, &mut pos)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Tensor::new(shape, data)
    }

    /// Rounds every value to f32 precision, the precision dumps store.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(invalid!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        self.shape = shape;
        Ok(self)
    }
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8], pos: &mut usize) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match input.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(Error::format(
                    "tensor dump",
                    *pos + filled,
                    format!("truncated: needed {} more bytes", buf.len() - filled),
                ))
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(Error::io("reading tensor dump", e)),
        }
    }
    *pos += buf.len();
    Ok(())
}
