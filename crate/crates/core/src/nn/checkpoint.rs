//! Versioned binary checkpoint format.
//!
//! Little-endian layout:
//!
//! ```text
//! magic    8 bytes  b"ECALCKPT"
//! version  u32      currently 1
//! nets     u32      number of networks
//! per network:
//!   activation u8   0 = relu, 1 = identity
//!   layers     u32
//!   per layer: in_dim u32, out_dim u32
//! per network, per layer: weights (row-major) then biases, as f64 bit patterns
//! ```
//!
//! Parameters are stored as raw IEEE-754 bits, so a save/load cycle is bit-exact.

use std::io::{Read, Write};

use super::layer::DenseLayer;
use super::mlp::{Activation, MlpNetwork};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ECALCKPT";
const VERSION: u32 = 1;

pub fn write_networks<W: Write>(mut out: W, nets: &[&MlpNetwork]) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(nets.len() as u32).to_le_bytes())?;
    for net in nets {
        out.write_all(&[net.hidden_activation().tag()])?;
        out.write_all(&(net.layers().len() as u32).to_le_bytes())?;
        for layer in net.layers() {
            out.write_all(&(layer.in_dim() as u32).to_le_bytes())?;
            out.write_all(&(layer.out_dim() as u32).to_le_bytes())?;
        }
    }
    for net in nets {
        for v in net.params() {
            out.write_all(&v.to_bits().to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(buf))
}

pub fn read_networks<R: Read>(mut input: R) -> Result<Vec<MlpNetwork>> {
    let mut magic = [0u8; 8];
    input
        .read_exact(&mut magic)
        .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n_nets = read_u32(&mut input)? as usize;
    let mut shapes = Vec::with_capacity(n_nets);
    for _ in 0..n_nets {
        let mut tag = [0u8; 1];
        input
            .read_exact(&mut tag)
            .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
        let act = Activation::from_tag(tag[0])
            .ok_or_else(|| Error::Checkpoint(format!("unknown activation tag {}", tag[0])))?;
        let n_layers = read_u32(&mut input)? as usize;
        let mut dims = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let i = read_u32(&mut input)? as usize;
            let o = read_u32(&mut input)? as usize;
            dims.push((i, o));
        }
        shapes.push((act, dims));
    }
    let mut nets = Vec::with_capacity(n_nets);
    for (act, dims) in shapes {
        let mut layers = Vec::with_capacity(dims.len());
        for (i, o) in dims {
            let mut w = vec![0.0; i * o];
            let mut b = vec![0.0; o];
            for v in w.iter_mut().chain(b.iter_mut()) {
                let mut buf = [0u8; 8];
                input
                    .read_exact(&mut buf)
                    .map_err(|e| Error::Checkpoint(format!("truncated parameters: {e}")))?;
                *v = f64::from_bits(u64::from_le_bytes(buf));
            }
            layers.push(DenseLayer::from_parts(i, o, w, b)?);
        }
        nets.push(MlpNetwork::from_layers(layers, act)?);
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok(nets)
}
