//! Middlebury `.flo` optical flow files.
//!
//! Layout (all little-endian): the `f32` magic `202021.25` (bytes `PIEH`),
//! width and height as `i32`, then `width * height` interleaved `(u, v)`
//! `f32` pairs in row-major order.

use std::path::Path;

use crate::error::{format_err, Error, Result};
use crate::frame::FlowField;

pub const FLO_MAGIC: f32 = 202021.25;
const HEADER_LEN: usize = 12;

pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let (h, w) = flow.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * h * w);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for (u, v) in flow.u().iter().zip(flow.v()) {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_i32(bytes: &[u8], at: usize) -> i32 {
    i32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

fn read_f32(bytes: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

/// Decodes a `.flo` byte buffer. Rejects a wrong magic, non-positive or
/// inconsistent dimensions, truncated or trailing data, and non-finite values.
pub fn parse_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < HEADER_LEN {
        return format_err(format!("flo file truncated: {} header bytes", bytes.len()));
    }
    if bytes[0..4] != FLO_MAGIC.to_le_bytes() {
        return format_err("bad flo magic");
    }
    let (w, h) = (read_i32(bytes, 4), read_i32(bytes, 8));
    if w <= 0 || h <= 0 {
        return format_err(format!("invalid flo dimensions {w}x{h}"));
    }
    let (w, h) = (w as usize, h as usize);
    let payload = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Format("flo dimensions overflow".into()))?;
    let body = bytes.len() - HEADER_LEN;
    if body < payload {
        return format_err(format!("flo file truncated: {body} of {payload} payload bytes"));
    }
    if body > payload {
        return format_err(format!("flo file has {} trailing bytes", body - payload));
    }
    let n = w * h;
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for i in 0..n {
        let at = HEADER_LEN + 8 * i;
        u.push(read_f32(bytes, at));
        v.push(read_f32(bytes, at + 4));
    }
    FlowField::new(h, w, u, v).map_err(|e| Error::Format(e.to_string()))
}

pub fn load_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    parse_flo(&std::fs::read(path.as_ref())?)
}

pub fn save_flo(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    std::fs::write(path.as_ref(), encode_flo(flow))?;
    Ok(())
}
