//! Flat binary weight records.
//!
//! Layout, all little-endian: the magic `LFW1`, the init seed as `u64`, the
//! layer count as `u32`, then per layer `rows: u32`, `cols: u32`,
//! `rows × cols` weights and `rows` biases as `f64`.

use std::io::{Read, Write};

use super::{ClassifierModel, Dense, NnError};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"LFW1";

pub fn write_weights(model: &ClassifierModel, mut out: impl Write) -> Result<(), NnError> {
    out.write_all(&WEIGHTS_MAGIC)?;
    out.write_all(&model.seed.to_le_bytes())?;
    out.write_all(&(model.layers.len() as u32).to_le_bytes())?;
    for layer in &model.layers {
        out.write_all(&(layer.outputs as u32).to_le_bytes())?;
        out.write_all(&(layer.inputs as u32).to_le_bytes())?;
        for v in layer.weights.iter().chain(&layer.bias) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_array<const K: usize>(input: &mut impl Read, what: &str) -> Result<[u8; K], NnError> {
    let mut buf = [0u8; K];
    input
        .read_exact(&mut buf)
        .map_err(|e| NnError::Weights(format!("reading {what}: {e}")))?;
    Ok(buf)
}

pub fn read_weights(mut input: impl Read) -> Result<ClassifierModel, NnError> {
    let magic: [u8; 4] = read_array(&mut input, "magic")?;
    if magic != WEIGHTS_MAGIC {
        return Err(NnError::Weights(format!("bad magic {magic:?}")));
    }
    let seed = u64::from_le_bytes(read_array(&mut input, "seed")?);
    let count = u32::from_le_bytes(read_array(&mut input, "layer count")?) as usize;
    if count == 0 {
        return Err(NnError::Weights("no layers".into()));
    }
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let outputs = u32::from_le_bytes(read_array(&mut input, "rows")?) as usize;
        let inputs = u32::from_le_bytes(read_array(&mut input, "cols")?) as usize;
        if let Some(prev) = layers.last().map(|l: &Dense| l.outputs) {
            if prev != inputs {
                return Err(NnError::Weights(format!("layer {i} expects {inputs} inputs, previous has {prev} outputs")));
            }
        }
        let mut take = |n: usize| -> Result<Vec<f64>, NnError> {
            (0..n).map(|_| Ok(f64::from_le_bytes(read_array(&mut input, "values")?))).collect()
        };
        let weights = take(inputs * outputs)?;
        let bias = take(outputs)?;
        layers.push(Dense { inputs, outputs, weights, bias });
    }
    Ok(ClassifierModel { layers, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let m = ClassifierModel::new(3, &[4], 2, 11);
        let mut buf = Vec::new();
        write_weights(&m, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"LFW1");
        assert_eq!(buf.len(), 4 + 8 + 4 + 2 * 8 + 8 * (3 * 4 + 4 + 4 * 2 + 2));
        assert_eq!(read_weights(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_weights(&b"LFW2\0\0\0\0\0\0\0\0\x01\0\0\0"[..]).is_err());
        let m = ClassifierModel::new(2, &[], 2, 0);
        let mut buf = Vec::new();
        write_weights(&m, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_weights(buf.as_slice()).is_err());
    }
}
