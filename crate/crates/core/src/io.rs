//! Image, mask and diagnostic plane files.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb};

use crate::error::{FlareError, Result};
use crate::imagecore::{GrayPlane, RgbImage};
use crate::morphology::BinaryMask;

/// Colour used to outline masks on overlays.
pub const OUTLINE: [u8; 3] = [255, 0, 0];

fn image_error(path: &Path, source: image::ImageError) -> FlareError {
    FlareError::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads any PNG or JPEG file as 8-bit sRGB.
pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| image_error(path, e))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0).collect();
    RgbImage::new(w, h, data)
}

/// Writes an image; the format follows the file extension.
pub fn save_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_raw(
        img.width() as u32,
        img.height() as u32,
        img.pixels().iter().flatten().copied().collect(),
    )
    .expect("buffer length matches dimensions");
    buf.save(path).map_err(|e| image_error(path, e))
}

/// Reads a mask: any pixel with luma above 127 is set.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path).map_err(|e| image_error(path, e))?.to_luma8();
    let bits = img.pixels().map(|p| p.0[0] > 127).collect();
    BinaryMask::new(img.width() as usize, img.height() as usize, bits)
}

/// Writes a mask as a single-channel PNG with values 0 and 255.
pub fn save_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let (w, h) = mask.dims();
    let buf = GrayImage::from_raw(
        w as u32,
        h as u32,
        mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect(),
    )
    .expect("buffer length matches dimensions");
    buf.save(path).map_err(|e| image_error(path, e))
}

/// Writes a plane rescaled from its own range to 0..=255.
pub fn save_plane(path: &Path, plane: &GrayPlane) -> Result<()> {
    let (lo, hi) = plane.min_max();
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let (w, h) = plane.dims();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(
        w as u32,
        h as u32,
        plane.values().iter().map(|&v| ((v - lo) * scale).round() as u8).collect(),
    )
    .expect("buffer length matches dimensions");
    buf.save(path).map_err(|e| image_error(path, e))
}

/// Mask pixels with a 4-neighbour outside the mask or on the image border.
pub fn mask_boundary(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dims();
    BinaryMask::from_fn(w, h, |x, y| {
        if !mask.get(x, y) {
            return false;
        }
        let (x, y) = (x as i64, y as i64);
        [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)]
            .iter()
            .any(|&(nx, ny)| !mask.get_signed(nx, ny))
    })
}

/// Copy of `img` with the outline of `mask` drawn in red.
pub fn overlay(img: &RgbImage, mask: &BinaryMask) -> Result<RgbImage> {
    if img.dims() != mask.dims() {
        return Err(FlareError::DimensionMismatch {
            left: img.dims(),
            right: mask.dims(),
        });
    }
    let mut out = img.clone();
    for (x, y) in mask_boundary(mask).iter_set() {
        out.set(x, y, OUTLINE);
    }
    Ok(out)
}
