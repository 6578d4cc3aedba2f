//! Checkpoint serialization.
//!
//! Byte layout, in order:
//!
//! 1. magic string `RATIO-CKPT\n`
//! 2. one UTF-8 architecture line, e.g. `v1 mlp 2 64 64 4\n` (input width,
//!    hidden widths, class count) or `v1 conv 28 28 3 10\n` (height, width,
//!    channels, classes)
//! 3. the parameter count as a decimal text line, e.g. `4548\n`
//! 4. the parameters as little-endian 64-bit floats, no padding or trailer
//!
//! Loading validates each section and reports the byte offset where parsing
//! failed.

use std::path::Path;

use super::{Architecture, Classifier};
use crate::{Error, Result};

pub const MAGIC: &[u8] = b"RATIO-CKPT\n";

fn arch_line(arch: &Architecture) -> String {
    match arch {
        Architecture::Mlp {
            input_dim,
            hidden,
            classes,
        } => {
            let mut line = format!("v1 mlp {input_dim}");
            for h in hidden {
                line.push_str(&format!(" {h}"));
            }
            line.push_str(&format!(" {classes}\n"));
            line
        }
        Architecture::TinyConv {
            height,
            width,
            channels,
            classes,
        } => format!("v1 conv {height} {width} {channels} {classes}\n"),
    }
}

fn parse_arch_line(line: &str, offset: u64) -> Result<Architecture> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    let bad = |detail: &str| Error::format(offset, format!("architecture line {line:?}: {detail}"));
    if fields.len() < 2 {
        return Err(bad("too few fields"));
    }
    if fields[0] != "v1" {
        return Err(bad("unsupported version"));
    }
    let nums: Vec<usize> = fields[2..]
        .iter()
        .map(|f| f.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad("non-numeric field"))?;
    let arch = match fields[1] {
        "mlp" => {
            if nums.len() < 2 {
                return Err(bad("mlp wants at least input and class counts"));
            }
            Architecture::Mlp {
                input_dim: nums[0],
                hidden: nums[1..nums.len() - 1].to_vec(),
                classes: nums[nums.len() - 1],
            }
        }
        "conv" => {
            if nums.len() != 4 {
                return Err(bad("conv wants height width channels classes"));
            }
            Architecture::TinyConv {
                height: nums[0],
                width: nums[1],
                channels: nums[2],
                classes: nums[3],
            }
        }
        other => return Err(bad(&format!("unknown architecture {other:?}"))),
    };
    arch.validate()
        .map_err(|e| bad(&format!("invalid descriptor: {e}")))?;
    Ok(arch)
}

pub fn to_bytes(model: &Classifier) -> Vec<u8> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(arch_line(model.architecture()).as_bytes());
    bytes.extend_from_slice(format!("{}\n", model.params().len()).as_bytes());
    for p in model.params() {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    bytes
}

/// Consumes one `\n`-terminated UTF-8 line starting at `*offset`.
fn take_line<'a>(bytes: &'a [u8], offset: &mut u64, what: &str) -> Result<&'a str> {
    let start = *offset as usize;
    let rest = &bytes[start.min(bytes.len())..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(*offset, format!("unterminated {what} line")))?;
    let line = std::str::from_utf8(&rest[..end])
        .map_err(|_| Error::format(*offset, format!("{what} line is not UTF-8")))?;
    *offset += end as u64 + 1;
    Ok(line)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Classifier> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::format(0, "missing RATIO-CKPT magic"));
    }
    let mut offset = MAGIC.len() as u64;
    let arch_offset = offset;
    let line = take_line(bytes, &mut offset, "architecture")?;
    let arch = parse_arch_line(line, arch_offset)?;

    let count_offset = offset;
    let count_line = take_line(bytes, &mut offset, "parameter count")?;
    let count: usize = count_line
        .trim()
        .parse()
        .map_err(|_| Error::format(count_offset, format!("bad parameter count {count_line:?}")))?;
    if count != arch.param_count() {
        return Err(Error::format(
            count_offset,
            format!(
                "parameter count {count} does not match architecture ({})",
                arch.param_count()
            ),
        ));
    }

    let payload = &bytes[offset as usize..];
    if payload.len() != count * 8 {
        return Err(Error::format(
            offset + payload.len().min(count * 8) as u64,
            format!(
                "parameter payload has {} bytes, expected {}",
                payload.len(),
                count * 8
            ),
        ));
    }
    let params: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Classifier::new(arch, params)
}

pub fn save(model: &Classifier, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Classifier> {
    from_bytes(&std::fs::read(path)?)
}
