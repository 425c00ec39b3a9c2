//! 8-bit RGB images and binary masks as PNG.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb as ImgRgb};

use crate::error::FormatError;
use crate::grid::{Grid, Mask, RgbImage};

/// Mask pixels at or above this gray level read as set.
pub const MASK_THRESHOLD: u8 = 128;

fn img_err(path: &Path, e: image::ImageError) -> FormatError {
    FormatError::Image {
        path: path.into(),
        source: e,
    }
}

fn encode_png<P, C>(buf: &ImageBuffer<P, C>) -> Result<Vec<u8>, image::ImageError>
where
    P: image::Pixel + image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<(), FormatError> {
    let raw: Vec<u8> = img.as_slice().iter().flatten().copied().collect();
    let buf: ImageBuffer<ImgRgb<u8>, _> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, raw).expect("sized buffer");
    let bytes = encode_png(&buf).map_err(|e| img_err(path, e))?;
    super::write_atomic(path, &bytes)
}

pub fn read_rgb(path: &Path) -> Result<RgbImage, FormatError> {
    let img = image::open(path).map_err(|e| img_err(path, e))?.into_rgb8();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| p.0).collect();
    Ok(Grid::from_vec(w as usize, h as usize, data).expect("decoded dimensions"))
}

pub fn write_gray(path: &Path, img: &Grid<u8>) -> Result<(), FormatError> {
    let buf: GrayImage =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, img.as_slice().to_vec())
            .expect("sized buffer");
    let bytes = encode_png(&buf).map_err(|e| img_err(path, e))?;
    super::write_atomic(path, &bytes)
}

pub fn read_gray(path: &Path) -> Result<Grid<u8>, FormatError> {
    let img = image::open(path).map_err(|e| img_err(path, e))?.into_luma8();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p: &Luma<u8>| p.0[0]).collect();
    Ok(Grid::from_vec(w as usize, h as usize, data).expect("decoded dimensions"))
}

/// Writes a mask as 8-bit gray, 255 where set.
pub fn write_mask(path: &Path, mask: &Mask) -> Result<(), FormatError> {
    write_gray(path, &mask.map(|&b| if b { 255 } else { 0 }))
}

/// Reads an 8-bit mask, thresholded at [`MASK_THRESHOLD`].
pub fn read_mask(path: &Path) -> Result<Mask, FormatError> {
    Ok(read_gray(path)?.map(|&v| v >= MASK_THRESHOLD))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_and_mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Grid::from_fn(7, 5, |x, y| [x as u8 * 30, y as u8 * 50, (x * y) as u8]);
        let p = dir.path().join("a.png");
        write_rgb(&p, &img).unwrap();
        assert_eq!(read_rgb(&p).unwrap(), img);
        let mask = Grid::from_fn(7, 5, |x, y| (x + 2 * y) % 3 == 0);
        let q = dir.path().join("m.png");
        write_mask(&q, &mask).unwrap();
        assert_eq!(read_mask(&q).unwrap(), mask);
    }

    #[test]
    fn mask_threshold() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::from_vec(4, 1, vec![0u8, 127, 128, 255]).unwrap();
        let p = dir.path().join("g.png");
        write_gray(&p, &g).unwrap();
        assert_eq!(read_mask(&p).unwrap().as_slice(), &[false, false, true, true]);
    }
}
