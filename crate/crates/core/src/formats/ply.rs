//! Per-timestamp point clouds as little-endian binary PLY.
//!
//! Each file holds the foreground points of one timestamp followed by the
//! whole background layer colored for that timestamp. Background vertices
//! appear in the same order in every file, so their positions are
//! identical across timestamps. Vertex properties:
//!
//! ```text
//! float x, y, z; uchar red, green, blue; uchar layer (0 fg, 1 bg);
//! uchar valid (color known at this timestamp); uint pose (provenance)
//! ```

use std::fs;
use std::path::Path;

use crate::cloud::{PointSet, PoseIndex, Position};
use crate::error::FormatError;
use crate::grid::Rgb;

const PROPERTIES: [(&str, &str); 9] = [
    ("float", "x"),
    ("float", "y"),
    ("float", "z"),
    ("uchar", "red"),
    ("uchar", "green"),
    ("uchar", "blue"),
    ("uchar", "layer"),
    ("uchar", "valid"),
    ("uint", "pose"),
];
const VERTEX_BYTES: usize = 12 + 3 + 1 + 1 + 4;

/// Background vertices of one timestamp file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BackgroundBlock {
    pub positions: Vec<Position>,
    pub colors: Vec<Rgb>,
    pub valid: Vec<bool>,
    pub source_pose: Vec<PoseIndex>,
}

/// Contents of one timestamp file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FramePly {
    pub timestamp: usize,
    pub foreground: PointSet,
    pub background: BackgroundBlock,
}

pub fn encode(frame: &FramePly) -> Vec<u8> {
    let n = frame.foreground.len() + frame.background.positions.len();
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("comment timestamp {}\n", frame.timestamp));
    header.push_str(&format!("element vertex {n}\n"));
    for (ty, name) in PROPERTIES {
        header.push_str(&format!("property {ty} {name}\n"));
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    out.reserve(n * VERTEX_BYTES);
    let mut push = |p: &Position, c: &Rgb, layer: u8, valid: bool, pose: PoseIndex| {
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(c);
        out.push(layer);
        out.push(valid as u8);
        out.extend_from_slice(&pose.to_le_bytes());
    };
    let fg = &frame.foreground;
    for i in 0..fg.len() {
        push(&fg.positions()[i], &fg.colors()[i], 0, true, fg.source_poses()[i]);
    }
    let bg = &frame.background;
    for i in 0..bg.positions.len() {
        push(&bg.positions[i], &bg.colors[i], 1, bg.valid[i], bg.source_pose[i]);
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<FramePly, FormatError> {
    let bad = |reason: String| FormatError::malformed("PLY", path, reason);
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| bad("missing end_header".into()))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not ASCII".into()))?;
    let body = &bytes[end + marker.len()..];

    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(bad("missing `ply` magic".into()));
    }
    let mut timestamp = None;
    let mut count = None;
    let mut props = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", other, ..] => return Err(bad(format!("unsupported format {other}"))),
            ["comment", "timestamp", t] => {
                timestamp = Some(t.parse().map_err(|_| bad(format!("bad timestamp {t:?}")))?)
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| bad(format!("bad vertex count {n:?}")))?)
            }
            ["element", other, ..] => return Err(bad(format!("unexpected element {other}"))),
            ["property", ty, name] => props.push((ty.to_string(), name.to_string())),
            [] => {}
            _ => return Err(bad(format!("unexpected header line {line:?}"))),
        }
    }
    let expected: Vec<(String, String)> = PROPERTIES
        .iter()
        .map(|(t, n)| (t.to_string(), n.to_string()))
        .collect();
    if props != expected {
        return Err(bad(format!("unexpected vertex properties {props:?}")));
    }
    let count = count.ok_or_else(|| bad("missing vertex element".into()))?;
    if body.len() != count * VERTEX_BYTES {
        return Err(bad(format!(
            "expected {} bytes of vertex data, found {}",
            count * VERTEX_BYTES,
            body.len()
        )));
    }
    let mut frame = FramePly {
        timestamp: timestamp.ok_or_else(|| bad("missing timestamp comment".into()))?,
        ..Default::default()
    };
    let f32_at = |b: &[u8], o: usize| f32::from_le_bytes([b[o], b[o + 1], b[o + 2], b[o + 3]]);
    for v in body.chunks_exact(VERTEX_BYTES) {
        let p = [f32_at(v, 0), f32_at(v, 4), f32_at(v, 8)];
        let c = [v[12], v[13], v[14]];
        let pose = u32::from_le_bytes([v[17], v[18], v[19], v[20]]);
        match v[15] {
            0 => {
                if !frame.background.positions.is_empty() {
                    return Err(bad("foreground vertex after background vertices".into()));
                }
                frame.foreground.push(p, c, pose);
            }
            1 => {
                let bg = &mut frame.background;
                bg.positions.push(p);
                bg.colors.push(c);
                bg.valid.push(v[16] != 0);
                bg.source_pose.push(pose);
            }
            other => return Err(bad(format!("bad layer tag {other}"))),
        }
    }
    Ok(frame)
}

pub fn write(path: &Path, frame: &FramePly) -> Result<(), FormatError> {
    super::write_atomic(path, &encode(frame))
}

pub fn read(path: &Path) -> Result<FramePly, FormatError> {
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_frame() -> impl Strategy<Value = FramePly> {
        let vertex = (prop::array::uniform3(any::<f32>()), prop::array::uniform3(any::<u8>()), any::<bool>(), 0u32..50);
        (0usize..64, prop::collection::vec(vertex.clone(), 0..20), prop::collection::vec(vertex, 0..20)).prop_map(
            |(timestamp, fg, bg)| {
                let mut frame = FramePly {
                    timestamp,
                    ..Default::default()
                };
                for (p, c, _, pose) in fg {
                    frame.foreground.push(p, c, pose);
                }
                for (p, c, valid, pose) in bg {
                    frame.background.positions.push(p);
                    frame.background.colors.push(c);
                    frame.background.valid.push(valid);
                    frame.background.source_pose.push(pose);
                }
                frame
            },
        )
    }

    fn bits(ps: &[Position]) -> Vec<[u32; 3]> {
        ps.iter().map(|p| p.map(f32::to_bits)).collect()
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(frame in arb_frame()) {
            let back = decode(&encode(&frame), Path::new("f.ply")).unwrap();
            prop_assert_eq!(back.timestamp, frame.timestamp);
            prop_assert_eq!(bits(back.foreground.positions()), bits(frame.foreground.positions()));
            prop_assert_eq!(back.foreground.colors(), frame.foreground.colors());
            prop_assert_eq!(back.foreground.source_poses(), frame.foreground.source_poses());
            prop_assert_eq!(bits(&back.background.positions), bits(&frame.background.positions));
            prop_assert_eq!(&back.background.colors, &frame.background.colors);
            prop_assert_eq!(&back.background.valid, &frame.background.valid);
            prop_assert_eq!(&back.background.source_pose, &frame.background.source_pose);
        }
    }

    #[test]
    fn rejects_foreign_schema() {
        let bytes = b"ply\nformat binary_little_endian 1.0\ncomment timestamp 0\nelement vertex 0\nproperty float x\nend_header\n";
        assert!(decode(bytes, Path::new("f.ply")).is_err());
        let ascii = b"ply\nformat ascii 1.0\nend_header\n";
        assert!(decode(ascii, Path::new("f.ply")).is_err());
    }
}
