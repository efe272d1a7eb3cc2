//! Versioned binary checkpoint: architecture manifest, flat parameters and
//! named opaque sections (plugin state).
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"SRLCKPT\0"
//! u32     version (1)
//! u32     input_dim
//! u32     n_layers, then per layer: u32 out_dim, u8 activation
//! u32     n_heads,  then per head: u32 name_len, name, u32 len
//! u64     n_params, then n_params x f64 bits
//! u32     n_sections, then per section: u32 name_len, name, u64 len, bytes
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Activation, Architecture, Layer, Mlp, NnError, ParamVector, Tensor};

const MAGIC: &[u8; 8] = b"SRLCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Mlp,
    pub sections: BTreeMap<String, Vec<u8>>,
}

impl Checkpoint {
    pub fn new(model: Mlp) -> Self {
        Checkpoint {
            model,
            sections: BTreeMap::new(),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), NnError> {
        let arch = self.model.architecture();
        w.write_all(MAGIC)?;
        put_u32(&mut w, CHECKPOINT_VERSION)?;
        put_u32(&mut w, arch.input_dim as u32)?;
        put_u32(&mut w, arch.layers.len() as u32)?;
        for (out, act) in &arch.layers {
            put_u32(&mut w, *out as u32)?;
            w.write_all(&[act.code()])?;
        }
        put_u32(&mut w, arch.heads.len() as u32)?;
        for h in &arch.heads {
            put_bytes32(&mut w, h.name.as_bytes())?;
            put_u32(&mut w, h.len as u32)?;
        }
        let params = self.model.flatten_params();
        w.write_all(&(params.len() as u64).to_le_bytes())?;
        for v in params.values() {
            w.write_all(&v.to_bits().to_le_bytes())?;
        }
        put_u32(&mut w, self.sections.len() as u32)?;
        for (name, bytes) in &self.sections {
            put_bytes32(&mut w, name.as_bytes())?;
            w.write_all(&(bytes.len() as u64).to_le_bytes())?;
            w.write_all(bytes)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, NnError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Checkpoint("not a checkpoint file".into()));
        }
        let version = get_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let input_dim = get_u32(&mut r)? as usize;
        let n_layers = get_u32(&mut r)? as usize;
        let mut layers = Vec::with_capacity(n_layers.min(1024));
        for _ in 0..n_layers {
            let out = get_u32(&mut r)? as usize;
            let mut code = [0u8];
            r.read_exact(&mut code)?;
            let act = Activation::from_code(code[0])
                .ok_or_else(|| NnError::Checkpoint(format!("bad activation code {}", code[0])))?;
            layers.push((out, act));
        }
        let n_heads = get_u32(&mut r)? as usize;
        let mut heads = Vec::with_capacity(n_heads.min(1024));
        for _ in 0..n_heads {
            let name = String::from_utf8(get_bytes32(&mut r)?)
                .map_err(|_| NnError::Checkpoint("head name is not UTF-8".into()))?;
            heads.push((name, get_u32(&mut r)? as usize));
        }
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8)?;
        let n_params = u64::from_le_bytes(buf8) as usize;
        let mut values = Vec::with_capacity(n_params.min(1 << 24));
        for _ in 0..n_params {
            r.read_exact(&mut buf8)?;
            values.push(f64::from_bits(u64::from_le_bytes(buf8)));
        }
        let mut model = skeleton(input_dim, &layers, heads)?;
        model.unflatten_params(&ParamVector::from(values))?;

        let n_sections = get_u32(&mut r)? as usize;
        let mut sections = BTreeMap::new();
        for _ in 0..n_sections {
            let name = String::from_utf8(get_bytes32(&mut r)?)
                .map_err(|_| NnError::Checkpoint("section name is not UTF-8".into()))?;
            r.read_exact(&mut buf8)?;
            let len = u64::from_le_bytes(buf8) as usize;
            let mut bytes = vec![0u8; len];
            r.read_exact(&mut bytes)?;
            sections.insert(name, bytes);
        }
        Ok(Checkpoint { model, sections })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        Checkpoint::read_from(BufReader::new(File::open(path)?))
    }

    pub fn architecture(&self) -> Architecture {
        self.model.architecture()
    }
}

fn skeleton(
    input_dim: usize,
    layers: &[(usize, Activation)],
    heads: Vec<(String, usize)>,
) -> Result<Mlp, NnError> {
    let mut built = Vec::with_capacity(layers.len());
    let mut fan_in = input_dim;
    for &(out, act) in layers {
        built.push(Layer::new(
            Tensor::zeros(vec![out, fan_in]),
            Tensor::zeros(vec![out]),
            act,
        )?);
        fan_in = out;
    }
    Mlp::from_layers(built, heads)
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_bytes32<W: Write>(w: &mut W, b: &[u8]) -> std::io::Result<()> {
    put_u32(w, b.len() as u32)?;
    w.write_all(b)
}

fn get_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_bytes32<R: Read>(r: &mut R) -> Result<Vec<u8>, NnError> {
    let n = get_u32(r)? as usize;
    if n > 1 << 20 {
        return Err(NnError::Checkpoint("name too long".into()));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    Ok(b)
}
