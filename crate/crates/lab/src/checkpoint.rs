//! Checkpoint files.
//!
//! Layout: magic `IDPC`, version `u16`, a spec block (architecture `u8`,
//! then in/hidden channels, hidden layers, timestep features and classes as
//! `u32`), parameter count `u64`, optimizer step `u64`, config hash `u64`,
//! then parameters, first moments and second moments as little-endian `f64`.

use std::fs;
use std::path::Path;

use inpaint_dpo_core::nn::{Architecture, ModelSpec, ParamVector};
use inpaint_dpo_core::trainer::Checkpoint;

use crate::error::{LabError, Result};

pub const MAGIC: [u8; 4] = *b"IDPC";
pub const VERSION: u16 = 1;

fn u32_field(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| LabError::Format(format!("{what} {v} does not fit in u32")))
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    ckpt.validate()?;
    let s = &ckpt.spec;
    let mut out = Vec::with_capacity(64 + 24 * ckpt.params.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(s.architecture.code());
    for (v, what) in [
        (s.in_channels, "in_channels"),
        (s.hidden_channels, "hidden_channels"),
        (s.hidden_layers, "hidden_layers"),
        (s.time_embed_dim, "time_embed_dim"),
        (s.num_classes, "num_classes"),
    ] {
        out.extend_from_slice(&u32_field(v, what)?.to_le_bytes());
    }
    out.extend_from_slice(&(ckpt.params.len() as u64).to_le_bytes());
    out.extend_from_slice(&ckpt.step.to_le_bytes());
    out.extend_from_slice(&ckpt.config_hash.to_le_bytes());
    for arr in [ckpt.params.as_slice(), &ckpt.adam_m, &ckpt.adam_v] {
        for v in arr {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = pos
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| LabError::Format(format!("truncated checkpoint at byte {pos}")))?;
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

fn u64_at(bytes: &[u8], pos: &mut usize) -> Result<u64> {
    Ok(u64::from_le_bytes(take(bytes, pos, 8)?.try_into().expect("8 bytes")))
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut pos = 0;
    if take(bytes, &mut pos, 4).map_err(|_| LabError::Format("missing magic".into()))? != MAGIC {
        return Err(LabError::Format("bad magic, not a checkpoint".into()));
    }
    let version = u16::from_le_bytes(take(bytes, &mut pos, 2)?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(LabError::Format(format!("unsupported checkpoint version {version}")));
    }
    let code = take(bytes, &mut pos, 1)?[0];
    let architecture = Architecture::from_code(code)
        .ok_or_else(|| LabError::Format(format!("unknown architecture code {code}")))?;
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = u32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().expect("4 bytes")) as usize;
    }
    let spec = ModelSpec {
        architecture,
        in_channels: dims[0],
        hidden_channels: dims[1],
        hidden_layers: dims[2],
        time_embed_dim: dims[3],
        num_classes: dims[4],
    };
    let n = u64_at(bytes, &mut pos)? as usize;
    let expected = spec
        .param_count()
        .map_err(|e| LabError::Format(format!("bad spec block: {e}")))?;
    if n != expected {
        return Err(LabError::Format(format!(
            "parameter count {n} does not match the spec's {expected}"
        )));
    }
    let step = u64_at(bytes, &mut pos)?;
    let config_hash = u64_at(bytes, &mut pos)?;
    let mut read_array = || -> Result<Vec<f64>> {
        Ok(take(bytes, &mut pos, n.checked_mul(8).ok_or_else(|| LabError::Format("overflow".into()))?)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    };
    let params = ParamVector::new(read_array()?);
    let adam_m = read_array()?;
    let adam_v = read_array()?;
    if pos != bytes.len() {
        return Err(LabError::Format("trailing bytes after checkpoint".into()));
    }
    Ok(Checkpoint {
        spec,
        params,
        adam_m,
        adam_v,
        step,
        config_hash,
    })
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, encode(ckpt)?)?;
    Ok(())
}

/// Reads a checkpoint; a missing file is a configuration problem.
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(LabError::Config(format!(
            "checkpoint {} does not exist",
            path.display()
        )));
    }
    decode(&fs::read(path)?)
}

/// Warning text for a checkpoint written under a different config, if any.
pub fn hash_warning(ckpt: &Checkpoint, config_hash: u64) -> Option<String> {
    (ckpt.config_hash != config_hash).then(|| {
        format!(
            "warning: checkpoint config hash {:016x} differs from the current config {:016x}; optimizer state is not resumed",
            ckpt.config_hash, config_hash
        )
    })
}
