//! Grayscale Portable Float Map, little-endian (`Pf`, negative scale).
//! Rows are stored bottom to top.

use std::fs;
use std::path::Path;

use crate::error::FormatError;
use crate::grid::Grid;

pub fn encode(map: &Grid<f32>) -> Vec<u8> {
    let (w, h) = map.dims();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for v in &map.as_slice()[y * w..(y + 1) * w] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Grid<f32>, FormatError> {
    let bad = |reason: String| FormatError::malformed("PFM", path, reason);
    let mut lines = Vec::with_capacity(3);
    let mut pos = 0;
    while lines.len() < 3 {
        let rest = &bytes[pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("truncated header".into()))?;
        let line = std::str::from_utf8(&rest[..nl]).map_err(|_| bad("header is not ASCII".into()))?;
        pos += nl + 1;
        let line = line.trim();
        if !line.is_empty() {
            lines.push(line.to_owned());
        }
    }
    match lines[0].as_str() {
        "Pf" => {}
        "PF" => return Err(bad("color PFM is not supported, expected grayscale `Pf`".into())),
        other => return Err(bad(format!("bad magic {other:?}"))),
    }
    let dims: Vec<usize> = lines[1]
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| bad(format!("bad dimension {s:?}"))))
        .collect::<Result<_, _>>()?;
    let [w, h] = dims[..] else {
        return Err(bad(format!("expected `width height`, got {:?}", lines[1])));
    };
    let scale: f64 = lines[2]
        .parse()
        .map_err(|_| bad(format!("bad scale {:?}", lines[2])))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("scale must be non-zero".into()));
    }
    let little = scale < 0.0;
    let body = &bytes[pos..];
    if body.len() != w * h * 4 {
        return Err(bad(format!(
            "expected {} bytes of data, found {}",
            w * h * 4,
            body.len()
        )));
    }
    let mut data = vec![0f32; w * h];
    for (k, chunk) in body.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (row, col) = (k / w.max(1), k % w.max(1));
        data[(h - 1 - row) * w + col] = v;
    }
    Grid::from_vec(w, h, data).map_err(|e| bad(e.to_string()))
}

pub fn write(path: &Path, map: &Grid<f32>) -> Result<(), FormatError> {
    super::write_atomic(path, &encode(map))
}

pub fn read(path: &Path) -> Result<Grid<f32>, FormatError> {
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    decode(&bytes, path)
}

/// Writes an `f64` map as `f32`, putting `sentinel` wherever `defined` is false.
pub fn write_with_sentinel(
    path: &Path,
    values: &Grid<f64>,
    defined: &Grid<bool>,
    sentinel: f32,
) -> Result<(), FormatError> {
    let mut out = Grid::filled(values.width(), values.height(), sentinel);
    for ((o, &v), &d) in out
        .as_mut_slice()
        .iter_mut()
        .zip(values.as_slice())
        .zip(defined.as_slice())
    {
        if d {
            *o = v as f32;
        }
    }
    write(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_and_row_order() {
        let g = Grid::from_vec(2, 2, vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode(&g);
        assert!(bytes.starts_with(b"Pf\n2 2\n-1.0\n"));
        let body = &bytes[12..];
        assert_eq!(&body[..4], &3.0f32.to_le_bytes());
    }

    #[test]
    fn big_endian_input_accepted() {
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&2.5f32.to_be_bytes());
        let g = decode(&bytes, Path::new("x.pfm")).unwrap();
        assert_eq!(g.as_slice(), &[2.5]);
    }

    #[test]
    fn truncated_rejected() {
        let mut bytes = encode(&Grid::filled(3, 3, 1.0f32));
        bytes.pop();
        assert!(decode(&bytes, Path::new("x.pfm")).is_err());
        assert!(decode(b"P6\n1 1\n255\n", Path::new("x.pfm")).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(w in 1usize..9, h in 1usize..9, seed in any::<u64>()) {
            let data: Vec<f32> = (0..w * h)
                .map(|i| f32::from_bits((seed.wrapping_mul(i as u64 + 1) >> 13) as u32))
                .collect();
            let g = Grid::from_vec(w, h, data).unwrap();
            let back = decode(&encode(&g), Path::new("x.pfm")).unwrap();
            let a: Vec<u32> = g.as_slice().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.as_slice().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
