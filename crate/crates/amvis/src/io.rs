//! File formats: the LMT1 binary tensor container, 8-bit RGB PNG export,
//! and UTF-8 CSV reports.
//!
//! LMT1 layout: magic bytes "LMT1", u32 rank, u32 extents, raw f32 payload,
//! all little-endian.

use crate::error::{AmvisError, Result};
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

pub const LMT1_MAGIC: &[u8; 4] = b"LMT1";

pub fn write_lmt1<W: Write>(w: &mut W, t: &Tensor) -> std::io::Result<()> {
    w.write_all(LMT1_MAGIC)?;
    w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
    for &d in &t.shape {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in &t.data {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_lmt1<R: Read>(r: &mut R) -> std::io::Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != LMT1_MAGIC {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "bad LMT1 magic",
        ));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let rank = u32::from_le_bytes(b4) as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        r.read_exact(&mut b4)?;
        shape.push(u32::from_le_bytes(b4) as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut b4)?;
        data.push(f32::from_le_bytes(b4) as f64);
    }
    Ok(Tensor {
        shape,
        data,
        requires_grad: false,
        grad: None,
    })
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| AmvisError::io(path.display().to_string(), e))?;
    write_lmt1(&mut f, t).map_err(|e| AmvisError::io(path.display().to_string(), e))
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let mut f = std::fs::File::open(path).map_err(|e| AmvisError::io(path.display().to_string(), e))?;
    read_lmt1(&mut f).map_err(|e| AmvisError::io(path.display().to_string(), e))
}

/// Quantizes `255 * v` with round-half-up into 8-bit RGB. Accepts [3,H,W]
/// (or [1,H,W], replicated to gray).
pub fn encode_png(image: &Tensor, path: &Path) -> Result<()> {
    if image.rank() != 3 || (image.shape[0] != 3 && image.shape[0] != 1) {
        return Err(AmvisError::ShapeMismatch {
            op: "encode_png",
            detail: format!("expected [3,H,W] or [1,H,W], got {:?}", image.shape),
        });
    }
    let (c, h, w) = (image.shape[0], image.shape[1], image.shape[2]);
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = |ch: usize| -> u8 {
                let v = image.data[(ch % c) * h * w + y * w + x].clamp(0.0, 1.0);
                // round half up
                (255.0 * v + 0.5).floor() as u8
            };
            buf.put_pixel(x as u32, y as u32, image::Rgb([px(0), px(1), px(2)]));
        }
    }
    buf.save(path)
        .map_err(|e| AmvisError::io(path.display().to_string(), std::io::Error::other(e)))
}

/// Inverse of the PNG quantization (lossy beyond the first round trip).
pub fn decode_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| AmvisError::io(path.display().to_string(), std::io::Error::other(e)))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(&[3, h, w]);
    for y in 0..h {
        for x in 0..w {
            let p = img.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                t.data[c * h * w + y * w + x] = p.0[c] as f64 / 255.0;
            }
        }
    }
    Ok(t)
}

/// Writes a CSV file: header row then rows, UTF-8, '\n' line endings.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| AmvisError::io(path.display().to_string(), e))
}
