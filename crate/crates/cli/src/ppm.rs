//! Colour-mapped label frames as binary PPM (P6) images.

use std::path::Path;

use ssa2d::{Error, Result};

/// Label `k` is drawn with `PALETTE[k % PALETTE.len()]`; background is black.
pub const PALETTE: [[u8; 3]; 12] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [255, 225, 25],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 190],
    [255, 255, 255],
];

pub fn encode(labels: &[i32], height: usize, width: usize) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    for &l in labels {
        out.extend_from_slice(&PALETTE[l.unsigned_abs() as usize % PALETTE.len()]);
    }
    out
}

/// Writes one `<task>_<t>.ppm` per frame of a `[T, H, W]` label volume.
pub fn dump(dir: &Path, task: &str, labels: &[i32], dims: [usize; 3]) -> Result<()> {
    let [t, h, w] = dims;
    for (i, frame) in labels.chunks_exact(h * w).take(t).enumerate() {
        let path = dir.join(format!("{task}_{i:03}.ppm"));
        std::fs::write(&path, encode(frame, h, w)).map_err(|e| Error::Io { path, source: e })?;
    }
    Ok(())
}
