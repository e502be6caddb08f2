//! Versioned parameter container.
//!
//! Byte layout:
//!
//! ```text
//! JSCC-CHECKPOINT 1\n
//! header-bytes <N>\n
//! <N bytes of UTF-8 JSON>\n
//! <parameter blocks>
//! ```
//!
//! The JSON header is an object whose `params` member lists every parameter
//! tensor's shape in declaration order; all other members (topology,
//! hyperparameters, seed record) are owned by the caller. Parameter blocks
//! follow immediately, one per entry of `params`, each holding
//! `product(shape)` little-endian IEEE-754 `f32` values in row-major order.

use serde_json::{json, Value};
use std::io::{BufRead, Write};

use super::{NnError, Tensor};

pub const MAGIC: &str = "JSCC-CHECKPOINT";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut out: W, header: &Value, params: &[&Tensor<f32>]) -> Result<(), NnError> {
    let mut header = header.clone();
    let obj = header.as_object_mut().ok_or_else(|| NnError::Checkpoint("header must be a JSON object".into()))?;
    obj.insert("params".into(), json!(params.iter().map(|p| json!({ "shape": p.shape() })).collect::<Vec<_>>()));
    let text = serde_json::to_string_pretty(&header).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    write!(out, "{MAGIC} {VERSION}\nheader-bytes {}\n{text}\n", text.len())?;
    let mut buf = Vec::new();
    for p in params {
        buf.clear();
        buf.reserve(p.len() * 4);
        for v in p.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

fn read_line<R: BufRead>(r: &mut R) -> Result<String, NnError> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    if !line.ends_with('\n') {
        return Err(NnError::Checkpoint("truncated checkpoint preamble".into()));
    }
    line.pop();
    Ok(line)
}

pub fn read_checkpoint<R: BufRead>(mut input: R) -> Result<(Value, Vec<Tensor<f32>>), NnError> {
    let first = read_line(&mut input)?;
    let version = first
        .strip_prefix(MAGIC)
        .map(str::trim)
        .ok_or_else(|| NnError::Checkpoint("not a checkpoint file (bad magic)".into()))?;
    if version != VERSION.to_string() {
        return Err(NnError::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let len_line = read_line(&mut input)?;
    let len: usize = len_line
        .strip_prefix("header-bytes ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| NnError::Checkpoint(format!("bad header length line `{len_line}`")))?;
    let mut text = vec![0u8; len + 1];
    input.read_exact(&mut text)?;
    if text.pop() != Some(b'\n') {
        return Err(NnError::Checkpoint("header not newline-terminated".into()));
    }
    let header: Value = serde_json::from_slice(&text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let specs = header
        .get("params")
        .and_then(Value::as_array)
        .ok_or_else(|| NnError::Checkpoint("header lacks a params list".into()))?;
    let mut params = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let shape: Vec<usize> = spec
            .get("shape")
            .and_then(|s| serde_json::from_value(s.clone()).ok())
            .ok_or_else(|| NnError::Checkpoint(format!("param {i} has no valid shape")))?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        input
            .read_exact(&mut raw)
            .map_err(|_| NnError::Checkpoint(format!("param block {i} truncated")))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        params.push(Tensor::parameter(&shape, data)?);
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(NnError::Checkpoint("trailing bytes after the last parameter block".into()));
    }
    Ok((header, params))
}
