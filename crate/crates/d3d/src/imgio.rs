//! Image and depth-map file IO.
//!
//! Images are 8-bit PNG. Depth maps are raw little-endian f32 with a
//! 16-byte header: magic "D3DD", version u32, height u32, width u32.

use crate::error::{D3dError, Result};
use crate::num::{c, Elem};
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

pub const DEPTH_MAGIC: &[u8; 4] = b"D3DD";
pub const DEPTH_VERSION: u32 = 1;

/// Quantize [0,1] to 8 bits (round, saturate).
pub fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Save an [H,W,3] tensor in [0,1] as RGB PNG.
pub fn save_png<T: Elem>(path: &Path, img: &Tensor<T>) -> Result<()> {
    let s = img.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(D3dError::Image(format!("save_png: want [H,W,3], got {s:?}")));
    }
    let (h, w) = (s[0] as u32, s[1] as u32);
    let bytes: Vec<u8> = img.data().iter().map(|v| to_u8(v.as_f64())).collect();
    let buf = image::RgbImage::from_raw(w, h, bytes)
        .ok_or_else(|| D3dError::Image("save_png: buffer size mismatch".into()))?;
    buf.save(path)
        .map_err(|e| D3dError::Image(format!("save_png {}: {e}", path.display())))
}

/// Load an RGB PNG as an [H,W,3] tensor in [0,1].
pub fn load_png<T: Elem>(path: &Path) -> Result<Tensor<T>> {
    let img = image::open(path)
        .map_err(|e| D3dError::Image(format!("load_png {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data: Vec<T> = img
        .as_raw()
        .iter()
        .map(|&b| c(b as f64 / 255.0))
        .collect();
    Ok(Tensor::from_vec(&[h as usize, w as usize, 3], data))
}

/// Save an [H,W] depth map in the raw container format.
pub fn save_depth<T: Elem>(path: &Path, depth: &Tensor<T>) -> Result<()> {
    let s = depth.shape();
    if s.len() != 2 {
        return Err(D3dError::Image(format!("save_depth: want [H,W], got {s:?}")));
    }
    let mut out = Vec::with_capacity(16 + depth.numel() * 4);
    out.extend_from_slice(DEPTH_MAGIC);
    out.extend_from_slice(&DEPTH_VERSION.to_le_bytes());
    out.extend_from_slice(&(s[0] as u32).to_le_bytes());
    out.extend_from_slice(&(s[1] as u32).to_le_bytes());
    for v in depth.data() {
        out.extend_from_slice(&v.as_f32().to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

/// Load a depth map written by [`save_depth`].
pub fn load_depth<T: Elem>(path: &Path) -> Result<Tensor<T>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[0..4] != DEPTH_MAGIC {
        return Err(D3dError::Image(format!(
            "load_depth {}: bad magic at offset 0",
            path.display()
        )));
    }
    let ver = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if ver != DEPTH_VERSION {
        return Err(D3dError::Image(format!(
            "load_depth: version {ver}, expected {DEPTH_VERSION}"
        )));
    }
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if bytes.len() != 16 + h * w * 4 {
        return Err(D3dError::Image(format!(
            "load_depth: truncated payload at offset {}",
            bytes.len()
        )));
    }
    let data: Vec<T> = bytes[16..]
        .chunks_exact(4)
        .map(|b| c(f32::from_le_bytes(b.try_into().unwrap()) as f64))
        .collect();
    Ok(Tensor::from_vec(&[h, w], data))
}

/// Box-downsample an [H,W,3] image by factors of two until it reaches
/// `target` (which must divide the input by a power of two).
pub fn downsample_to<T: Elem>(img: &Tensor<T>, target: usize) -> Tensor<T> {
    let s = img.shape().to_vec();
    let mut out = img.reshape(&[1, s[0], s[1], 3]);
    let mut cur = s[0];
    assert!(
        cur % target == 0 && (cur / target).is_power_of_two() || cur == target,
        "downsample_to: {cur} -> {target}"
    );
    while cur > target {
        out = out.avg_pool2();
        cur /= 2;
    }
    let w = out.shape()[2];
    out.reshape(&[cur, w, 3])
}

/// Arrange equally sized [H,W,3] tiles into a grid image (row-major).
pub fn contact_sheet<T: Elem>(tiles: &[Tensor<T>], cols: usize) -> Tensor<T> {
    assert!(!tiles.is_empty());
    let (h, w) = (tiles[0].shape()[0], tiles[0].shape()[1]);
    let rows = tiles.len().div_ceil(cols);
    let mut data = vec![T::zero(); rows * h * cols * w * 3];
    for (idx, tile) in tiles.iter().enumerate() {
        assert_eq!(tile.shape(), &[h, w, 3], "contact_sheet: tile size mismatch");
        let (r, ccol) = (idx / cols, idx % cols);
        for y in 0..h {
            let dst = ((r * h + y) * cols * w + ccol * w) * 3;
            let src = y * w * 3;
            data[dst..dst + w * 3].copy_from_slice(&tile.data()[src..src + w * 3]);
        }
    }
    Tensor::from_vec(&[rows * h, cols * w, 3], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let img = Tensor::<f32>::from_f64_slice(
            &[2, 3, 3],
            &(0..18).map(|i| i as f64 / 17.0).collect::<Vec<_>>(),
        );
        save_png(&path, &img).unwrap();
        let back = load_png::<f32>(&path).unwrap();
        assert_eq!(back.shape(), &[2, 3, 3]);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn depth_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let d = Tensor::<f32>::from_f64_slice(&[3, 4], &(0..12).map(|i| 0.7 + i as f64 * 0.031).collect::<Vec<_>>());
        save_depth(&path, &d).unwrap();
        let back = load_depth::<f32>(&path).unwrap();
        assert!(crate::tensor::bit_identical(&d, &back));
    }

    #[test]
    fn truncated_depth_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let d = Tensor::<f32>::zeros(&[4, 4]);
        save_depth(&path, &d).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        match load_depth::<f32>(&path) {
            Err(D3dError::Image(msg)) => assert!(msg.contains("offset"), "{msg}"),
            other => panic!("expected corruption error, got {other:?}"),
        }
    }

    #[test]
    fn contact_sheet_layout() {
        let a = Tensor::<f32>::full(&[2, 2, 3], 0.25);
        let b = Tensor::<f32>::full(&[2, 2, 3], 0.75);
        let sheet = contact_sheet(&[a, b], 2);
        assert_eq!(sheet.shape(), &[2, 4, 3]);
        assert_eq!(sheet.at(&[0, 0, 0]), 0.25);
        assert_eq!(sheet.at(&[0, 2, 0]), 0.75);
    }
}
