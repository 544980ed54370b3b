//! Raw little-endian fp32 files with a one-line JSON header.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde_json::Value;

pub fn write_f32_file(path: &Path, header: &Value, data: &[f64]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut buf = Vec::with_capacity(64 + data.len() * 4);
    buf.extend_from_slice(header.to_string().as_bytes());
    buf.push(b'\n');
    for &x in data {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)
}

/// Returns the parsed header and the payload widened back to f64.
pub fn read_f32_file(path: &Path) -> io::Result<(Value, Vec<f64>)> {
    let bytes = fs::read(path)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "missing header line"))?;
    let header: Value = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("bad header: {e}")))?;
    let body = &bytes[nl + 1..];
    if body.len() % 4 != 0 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "payload length is not a multiple of 4",
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((header, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.f32");
        let data = vec![0.1, -2.5, 1e10, 3.25];
        write_f32_file(&p, &serde_json::json!({"shape": [4]}), &data).unwrap();
        let (h, back) = read_f32_file(&p).unwrap();
        assert_eq!(h["shape"][0], 4);
        let expect: Vec<f64> = data.iter().map(|&x| x as f32 as f64).collect();
        assert_eq!(back, expect);
    }

    #[test]
    fn truncated_body_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.f32");
        fs::write(&p, b"{\"shape\":[1]}\n\x00\x00").unwrap();
        assert!(read_f32_file(&p).is_err());
    }
}
