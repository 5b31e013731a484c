//! Stats file layout: `CGS1`, u32 version, u32 layer id, u32 attribute count,
//! then per attribute a u32-length-prefixed UTF-8 qualified name, u32 sample
//! count, mean blob and variance blob; then the weight blob and λ as f64.
//! Integers and floats are little-endian.

use std::io::{Read, Write};

use super::{AttributeGaussian, CgmmModel};
use crate::data::AttributeSchema;
use crate::error::{Error, Result};
use crate::tensor::{read_exact, read_f64, read_u32, Tensor};

const MAGIC: &[u8; 4] = b"CGS1";
const VERSION: u32 = 1;
const WHAT: &str = "stats file";

pub fn write_stats<W: Write>(w: &mut W, model: &CgmmModel) -> Result<()> {
    model.validate()?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(model.layer as u32).to_le_bytes())?;
    w.write_all(&(model.gaussians.len() as u32).to_le_bytes())?;
    for (i, g) in model.gaussians.iter().enumerate() {
        let name = model.schema.qualified_name(i);
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(g.count as u32).to_le_bytes())?;
        g.mu.write_blob(w)?;
        g.var.write_blob(w)?;
    }
    Tensor::vector(model.weights.clone())?.write_blob(w)?;
    w.write_all(&model.lambda.to_le_bytes())?;
    Ok(())
}

pub fn stats_bytes(model: &CgmmModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_stats(&mut out, model)?;
    Ok(out)
}

/// Reads a stats file whose attribute names must match `schema` in order.
pub fn read_stats<R: Read>(r: &mut R, schema: &AttributeSchema) -> Result<CgmmModel> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, WHAT)?;
    if &magic != MAGIC {
        return Err(Error::format(WHAT, "bad magic"));
    }
    let version = read_u32(r, WHAT)?;
    if version != VERSION {
        return Err(Error::format(WHAT, format!("unsupported version {version}")));
    }
    let layer = read_u32(r, WHAT)? as usize;
    let count = read_u32(r, WHAT)? as usize;
    if count != schema.attribute_count() {
        return Err(Error::format(
            WHAT,
            format!("{count} attributes, schema has {}", schema.attribute_count()),
        ));
    }
    let mut gaussians = Vec::with_capacity(count);
    for i in 0..count {
        let len = read_u32(r, WHAT)? as usize;
        if len > 4096 {
            return Err(Error::format(WHAT, "attribute name too long"));
        }
        let mut name = vec![0u8; len];
        read_exact(r, &mut name, WHAT)?;
        let name = String::from_utf8(name).map_err(|_| Error::format(WHAT, "attribute name is not UTF-8"))?;
        let expected = schema.qualified_name(i);
        if name != expected {
            return Err(Error::format(
                WHAT,
                format!("attribute {i} is {name:?}, schema expects {expected:?}"),
            ));
        }
        let samples = read_u32(r, WHAT)? as usize;
        let mu = Tensor::read_blob(r)?;
        let var = Tensor::read_blob(r)?;
        gaussians.push(AttributeGaussian {
            mu,
            var,
            count: samples,
        });
    }
    let weights = Tensor::read_blob(r)?;
    if weights.rank() != 1 {
        return Err(Error::format(WHAT, "weights are not a vector"));
    }
    let lambda = read_f64(r, WHAT)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::format(WHAT, "trailing bytes"));
    }
    let model = CgmmModel {
        layer,
        schema: schema.clone(),
        gaussians,
        weights: weights.into_data(),
        lambda,
    };
    model
        .validate()
        .map_err(|e| Error::format(WHAT, e.to_string()))?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::default_schema;

    fn sample_model() -> CgmmModel {
        let schema = default_schema();
        let gaussians = (0..schema.attribute_count())
            .map(|i| {
                if i == 3 {
                    AttributeGaussian::unusable(5, 1)
                } else {
                    AttributeGaussian {
                        mu: Tensor::randn(&[5], 0.0, 1.0, i as u64).unwrap(),
                        var: Tensor::full(&[5], 0.5 + i as f64).unwrap(),
                        count: 10 + i,
                    }
                }
            })
            .collect();
        let mut model = CgmmModel::new(8, schema, gaussians, 1e-5).unwrap();
        model.weights[2] = -0.75;
        model
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let model = sample_model();
        let bytes = stats_bytes(&model).unwrap();
        assert_eq!(&bytes[..4], b"CGS1");
        let back = read_stats(&mut bytes.as_slice(), &model.schema).unwrap();
        assert_eq!(back, model);
        assert_eq!(stats_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn rejects_damage() {
        let model = sample_model();
        let bytes = stats_bytes(&model).unwrap();
        assert!(read_stats(&mut &bytes[..bytes.len() - 3], &model.schema).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(read_stats(&mut extra.as_slice(), &model.schema).is_err());
        let other = AttributeSchema::from_spec(&[("g", &["a", "b"])]).unwrap();
        assert!(read_stats(&mut bytes.as_slice(), &other).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(read_stats(&mut bad.as_slice(), &model.schema).is_err());
    }
}
