//! Checkpoint files: a text header of `key=value` lines terminated by `end`,
//! followed by one `JNT1` dump per parameter tensor and then the running
//! mean and variance of every batch-norm layer.

use std::fs;
use std::path::Path;

use super::{build_unet, Head, Network, UnetSpec};
use crate::autodiff::RunningStats;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC_LINE: &str = "JNTCKPT";

pub fn checkpoint_bytes(net: &Network) -> Vec<u8> {
    let s = &net.spec;
    let mut header = format!(
        "{MAGIC_LINE}\nversion={CHECKPOINT_VERSION}\nin_channels={}\nout_channels={}\nscales={}\nbase_width={}\nhead={}\nfrozen={}\nlayers={}\n",
        s.in_channels,
        s.out_channels,
        s.scales,
        s.base_width,
        s.head.as_str(),
        u8::from(net.frozen),
        net.layers.len()
    );
    for layer in &net.layers {
        header.push_str("layer=");
        header.push_str(&layer.descriptor());
        header.push('\n');
    }
    header.push_str(&format!(
        "tensors={}\nend\n",
        net.params.len() + 2 * net.bn_stats.len()
    ));
    let mut out = header.into_bytes();
    for p in &net.params {
        p.write_dump(&mut out).expect("Vec write");
    }
    for st in &net.bn_stats {
        for values in [&st.mean, &st.var] {
            Tensor::new(vec![values.len()], values.clone())
                .expect("non-empty stats")
                .write_dump(&mut out)
                .expect("Vec write");
        }
    }
    out
}

pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_bytes(net))
        .map_err(|e| Error::io(format!("writing checkpoint {}", path.display()), e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = fs::read(path)
        .map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
    parse_checkpoint(&bytes)
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn line(&mut self) -> Result<(usize, &'a str)> {
        let start = self.pos;
        let rest = &self.bytes[start..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format("checkpoint header", start, "unterminated header"))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| Error::format("checkpoint header", start, "non-UTF-8 header line"))?;
        self.pos = start + nl + 1;
        Ok((start, line))
    }

    fn field(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (pos, line) = self.line()?;
        match line.split_once('=') {
            Some((k, v)) if k == key => Ok((pos, v)),
            _ => Err(Error::format(
                "checkpoint header",
                pos,
                format!("expected `{key}=...`, found `{line}`"),
            )),
        }
    }

    fn number(&mut self, key: &str) -> Result<usize> {
        let (pos, v) = self.field(key)?;
        v.parse().map_err(|_| {
            Error::format(
                "checkpoint header",
                pos,
                format!("`{key}` is not a number: `{v}`"),
            )
        })
    }
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Network> {
    let mut r = HeaderReader { bytes, pos: 0 };
    let (pos, magic) = r.line()?;
    if magic != MAGIC_LINE {
        return Err(Error::format(
            "checkpoint header",
            pos,
            "not a checkpoint file",
        ));
    }
    let (pos, version) = r.field("version")?;
    if version != CHECKPOINT_VERSION.to_string() {
        return Err(Error::format(
            "checkpoint header",
            pos,
            format!("unsupported version {version}, expected {CHECKPOINT_VERSION}"),
        ));
    }
    let in_channels = r.number("in_channels")?;
    let out_channels = r.number("out_channels")?;
    let scales = r.number("scales")?;
    let base_width = r.number("base_width")?;
    let (pos, head) = r.field("head")?;
    let head = Head::parse(head)
        .ok_or_else(|| Error::format("checkpoint header", pos, format!("unknown head `{head}`")))?;
    let (pos, frozen) = r.field("frozen")?;
    let frozen = match frozen {
        "0" => false,
        "1" => true,
        other => {
            return Err(Error::format(
                "checkpoint header",
                pos,
                format!("bad frozen flag `{other}`"),
            ))
        }
    };
    let spec = UnetSpec {
        in_channels,
        out_channels,
        scales,
        base_width,
        head,
    };
    let mut net = build_unet(spec)?;
    net.frozen = frozen;

    let pos = r.pos;
    let layer_count = r.number("layers")?;
    if layer_count != net.layers.len() {
        return Err(Error::format(
            "checkpoint header",
            pos,
            format!(
                "{layer_count} layers declared, architecture has {}",
                net.layers.len()
            ),
        ));
    }
    for layer in &net.layers {
        let (pos, desc) = r.field("layer")?;
        if desc != layer.descriptor() {
            return Err(Error::format(
                "checkpoint header",
                pos,
                format!(
                    "layer `{desc}` does not match expected `{}`",
                    layer.descriptor()
                ),
            ));
        }
    }
    let pos = r.pos;
    let tensors = r.number("tensors")?;
    let expected = net.params.len() + 2 * net.bn_stats.len();
    if tensors != expected {
        return Err(Error::format(
            "checkpoint header",
            pos,
            format!("{tensors} tensors declared, architecture needs {expected}"),
        ));
    }
    let (pos, end) = r.line()?;
    if end != "end" {
        return Err(Error::format(
            "checkpoint header",
            pos,
            "missing `end` line",
        ));
    }

    let mut body = &bytes[r.pos..];
    let mut offset = r.pos;
    let mut next = |want: &[usize]| -> Result<Tensor> {
        let before = body.len();
        let t = Tensor::read_dump(&mut body, offset)?;
        offset += before - body.len();
        if t.shape() != want {
            return Err(Error::Shape(format!(
                "checkpoint tensor ending at byte {offset}: expected {want:?}, found {:?}",
                t.shape()
            )));
        }
        Ok(t)
    };
    for p in net.params.iter_mut() {
        let shape = p.shape().to_vec();
        *p = next(&shape)?;
    }
    for st in net.bn_stats.iter_mut() {
        let c = st.mean.len();
        let mean = next(&[c])?.into_data();
        let var = next(&[c])?.into_data();
        *st = RunningStats { mean, var };
    }
    if !body.is_empty() {
        return Err(Error::format(
            "checkpoint",
            offset,
            format!("{} trailing bytes", body.len()),
        ));
    }
    Ok(net)
}
