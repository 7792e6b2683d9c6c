//! PNG / binary PGM reading and writing for images and masks.

use std::path::Path;

use image::{DynamicImage, ImageFormat};

use crate::error::{McdError, Result};
use crate::image::{to_gray, BinaryMask, GrayImage, Raster};

fn image_err(path: &Path, e: impl std::fmt::Display) -> McdError {
    McdError::Image {
        path: path.to_path_buf(),
        detail: e.to_string(),
    }
}

/// Decodes an 8-bit grayscale or RGB PNG/PGM into an interleaved raster.
pub fn load_raster(path: &Path) -> Result<Raster> {
    let bytes = std::fs::read(path).map_err(|e| McdError::io(path, e))?;
    let format = image::guess_format(&bytes).map_err(|e| image_err(path, e))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Pnm) {
        return Err(image_err(path, format!("unsupported format {format:?}")));
    }
    let decoded = image::load_from_memory_with_format(&bytes, format).map_err(|e| image_err(path, e))?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, data) = match decoded {
        DynamicImage::ImageLuma8(buf) => (1, buf.into_raw()),
        DynamicImage::ImageRgb8(buf) => (3, buf.into_raw()),
        other => {
            return Err(image_err(
                path,
                format!("unsupported pixel layout {:?}; expected 8-bit gray or RGB", other.color()),
            ))
        }
    };
    Ok(Raster {
        width,
        height,
        channels,
        data,
    })
}

pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let raster = load_raster(path)?;
    to_gray(&raster).map_err(|e| match e {
        McdError::UnsupportedChannels(_) | McdError::InvalidArgument(_) => image_err(path, e),
        other => other,
    })
}

/// Writes an 8-bit grayscale PNG.
pub fn save_gray_png(path: &Path, g: &GrayImage) -> Result<()> {
    ensure_parent(path)?;
    image::save_buffer_with_format(
        path,
        g.pixels(),
        g.width() as u32,
        g.height() as u32,
        image::ExtendedColorType::L8,
        ImageFormat::Png,
    )
    .map_err(|e| image_err(path, e))
}

/// Writes a binary (P5) PGM.
pub fn save_gray_pgm(path: &Path, g: &GrayImage) -> Result<()> {
    ensure_parent(path)?;
    let mut out = format!("P5\n{} {}\n255\n", g.width(), g.height()).into_bytes();
    out.extend_from_slice(g.pixels());
    std::fs::write(path, out).map_err(|e| McdError::io(path, e))
}

/// Masks are stored as grayscale PNG, 0 = background and 255 = foreground.
/// On load any nonzero value counts as foreground.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    Ok(BinaryMask::from_gray(&load_gray(path)?))
}

pub fn save_mask_png(path: &Path, m: &BinaryMask) -> Result<()> {
    save_gray_png(path, &m.to_gray())
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| McdError::io(parent, e))?;
        }
    }
    Ok(())
}

/// Image files (`.png`, `.pgm`) directly inside `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| McdError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| McdError::io(dir, e))?;
        let path = entry.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if matches!(ext.as_deref(), Some("png" | "pgm")) && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// File name without extension; the image id used throughout the pipeline.
pub fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}
