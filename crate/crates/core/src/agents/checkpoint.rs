//! Binary parameter dumps.
//!
//! Layout (little-endian): magic `HSACCKP1`, `u32` network count, then per
//! network a `u8` head tag, a `u32` layer count and, per layer, `u32 out`,
//! `u32 in`, the `out·in` weights and `out` biases as raw `f64` bits.

use std::io::{Read, Write};

use crate::autodiff::{Head, Layer, MlpParams, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HSACCKP1";

pub fn write_params<W: Write>(mut w: W, nets: &[&MlpParams]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(nets.len() as u32).to_le_bytes())?;
    for net in nets {
        let tag: u8 = match net.head {
            Head::Linear => 0,
            Head::Softmax => 1,
        };
        w.write_all(&[tag])?;
        w.write_all(&(net.layers.len() as u32).to_le_bytes())?;
        for layer in &net.layers {
            let (out, inp) = layer.weight.dims2();
            w.write_all(&(out as u32).to_le_bytes())?;
            w.write_all(&(inp as u32).to_le_bytes())?;
            for v in layer.weight.data().iter().chain(layer.bias.data()) {
                w.write_all(&v.to_bits().to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes.chunks_exact(8).map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap()))).collect())
}

pub fn read_params<R: Read>(mut r: R) -> Result<Vec<MlpParams>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Config("not a checkpoint file".into()));
    }
    let count = read_u32(&mut r)?;
    let mut nets = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let head = match tag[0] {
            0 => Head::Linear,
            1 => Head::Softmax,
            t => return Err(Error::Config(format!("unknown head tag {t}"))),
        };
        let n_layers = read_u32(&mut r)?;
        let mut layers = Vec::with_capacity(n_layers as usize);
        for _ in 0..n_layers {
            let out = read_u32(&mut r)? as usize;
            let inp = read_u32(&mut r)? as usize;
            let weight = Tensor::matrix(out, inp, read_f64s(&mut r, out * inp)?);
            let bias = Tensor::vector(read_f64s(&mut r, out)?);
            layers.push(Layer { weight, bias });
        }
        nets.push(MlpParams::from_layers(layers, head)?);
    }
    Ok(nets)
}
