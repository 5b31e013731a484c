//! Checkpoint layout: `CGN1`, u32 version, u32 byte length + UTF-8 network
//! spec text, then weight and bias blobs of each parameterized trunk layer in
//! order, then of each head. Integers are little-endian.

use std::io::{Read, Write};

use super::params::{LayerParams, Parameters};
use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::tensor::{read_exact, read_u32, Tensor};

const MAGIC: &[u8; 4] = b"CGN1";
const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(w: &mut W, spec: &NetworkSpec, params: &Parameters) -> Result<()> {
    params.check(spec)?;
    let text = spec.to_text();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(text.len() as u32).to_le_bytes())?;
    w.write_all(text.as_bytes())?;
    for layer in params.iter() {
        layer.weight.write_blob(w)?;
        layer.bias.write_blob(w)?;
    }
    Ok(())
}

pub fn checkpoint_bytes(spec: &NetworkSpec, params: &Parameters) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_checkpoint(&mut out, spec, params)?;
    Ok(out)
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(NetworkSpec, Parameters)> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "checkpoint")?;
    if &magic != MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let version = read_u32(r, "checkpoint")?;
    if version != VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {version}")));
    }
    let len = read_u32(r, "checkpoint")? as usize;
    let mut text = vec![0u8; len];
    read_exact(r, &mut text, "checkpoint")?;
    let text = String::from_utf8(text).map_err(|_| Error::format("checkpoint", "spec is not UTF-8"))?;
    let spec = NetworkSpec::parse_text(&text)?;

    let mut params = Parameters::zeros(&spec)?;
    for layer in params.iter_mut() {
        let weight = Tensor::read_blob(r)?;
        let bias = Tensor::read_blob(r)?;
        if weight.shape() != layer.weight.shape() || bias.shape() != layer.bias.shape() {
            return Err(Error::format("checkpoint", "parameter shape does not match spec"));
        }
        *layer = LayerParams { weight, bias };
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::format("checkpoint", "trailing bytes"));
    }
    Ok((spec, params))
}
