//! Mask and image files, atomic writes, directory listings.
//!
//! Masks are single-channel PNG or PGM files with 0 for background and 255
//! for hair. Any nonzero value decodes as hair unless strict mode is on, in
//! which case only 0 and 255 are accepted.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};

use hairseg_core::guidance::ImageTensor;
use hairseg_core::pseudogen::RgbImage;
use hairseg_core::BinaryMask;
use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ColorType, DynamicImage, ExtendedColorType, ImageEncoder};
use serde::Serialize;

use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "pgm", "pnm"];

/// Writes `bytes` to a temporary file next to `path`, then renames it into
/// place. Readers never observe a partially written file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::from(e).at(dir))?;
    let mut tmp = tempfile::Builder::new()
        .prefix(".hairseg-")
        .suffix(".tmp")
        .tempfile_in(dir)
        .map_err(|e| Error::from(e).at(dir))?;
    tmp.write_all(bytes).map_err(|e| Error::from(e).at(path))?;
    tmp.as_file().sync_all().map_err(|e| Error::from(e).at(path))?;
    tmp.persist(path).map_err(|e| Error::from(e.error).at(path))?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::runtime(e.to_string()))?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_input(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::validation(e.to_string()).at(path))
}

/// Reads a file the user pointed us at; a missing file is a validation error.
pub fn read_input(path: &Path) -> Result<Vec<u8>> {
    if !path.is_file() {
        return Err(Error::validation("no such file").at(path));
    }
    fs::read(path).map_err(|e| Error::from(e).at(path))
}

fn decode(bytes: &[u8]) -> Result<DynamicImage> {
    image::load_from_memory(bytes).map_err(|e| Error::validation(format!("cannot decode image: {e}")))
}

pub fn decode_mask(bytes: &[u8], strict: bool) -> Result<BinaryMask> {
    let img = decode(bytes)?;
    if strict && img.color() != ColorType::L8 {
        return Err(Error::validation(format!(
            "strict masks must be 8-bit single-channel, found {:?}",
            img.color()
        )));
    }
    let luma = img.to_luma8();
    if strict {
        if let Some(v) = luma.as_raw().iter().find(|&&v| v != 0 && v != 255) {
            return Err(Error::validation(format!("strict masks hold only 0 and 255, found {v}")));
        }
    }
    Ok(BinaryMask::from_cells(
        luma.width() as usize,
        luma.height() as usize,
        luma.as_raw(),
    )?)
}

pub fn read_mask(path: &Path, strict: bool) -> Result<BinaryMask> {
    decode_mask(&read_input(path)?, strict).map_err(|e| e.at(path))
}

fn mask_levels(mask: &BinaryMask) -> Vec<u8> {
    mask.cells().iter().map(|&v| v * 255).collect()
}

pub fn encode_mask_png(mask: &BinaryMask) -> Vec<u8> {
    encode_png(&mask_levels(mask), mask.width(), mask.height(), ExtendedColorType::L8)
}

pub fn encode_mask_pgm(mask: &BinaryMask) -> Vec<u8> {
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(
            &mask_levels(mask),
            mask.width() as u32,
            mask.height() as u32,
            ExtendedColorType::L8,
        )
        .expect("in-memory PGM encoding");
    out
}

/// PGM when the extension is `.pgm`/`.pnm`, PNG otherwise.
pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let pgm = matches!(extension(path).as_deref(), Some("pgm" | "pnm"));
    let bytes = if pgm {
        encode_mask_pgm(mask)
    } else {
        encode_mask_png(mask)
    };
    atomic_write(path, &bytes)
}

fn encode_png(raw: &[u8], width: usize, height: usize, color: ExtendedColorType) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    PngEncoder::new(&mut out)
        .write_image(raw, width as u32, height as u32, color)
        .expect("in-memory PNG encoding");
    out.into_inner()
}

pub fn encode_rgb_png(img: &RgbImage) -> Vec<u8> {
    encode_png(&img.to_raw(), img.width(), img.height(), ExtendedColorType::Rgb8)
}

pub fn decode_rgb(bytes: &[u8]) -> Result<RgbImage> {
    let rgb = decode(bytes)?.to_rgb8();
    Ok(RgbImage::from_raw(
        rgb.width() as usize,
        rgb.height() as usize,
        rgb.as_raw(),
    )?)
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    decode_rgb(&read_input(path)?).map_err(|e| e.at(path))
}

/// Image as a `[-1, 1]` tensor: one channel for grey files, three otherwise.
pub fn decode_tensor(bytes: &[u8]) -> Result<ImageTensor> {
    let img = decode(bytes)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let t = if img.color().has_color() {
        ImageTensor::from_interleaved_u8(3, h, w, img.to_rgb8().as_raw())
    } else {
        ImageTensor::from_interleaved_u8(1, h, w, img.to_luma8().as_raw())
    };
    Ok(t?)
}

pub fn read_tensor(path: &Path) -> Result<ImageTensor> {
    decode_tensor(&read_input(path)?).map_err(|e| e.at(path))
}

pub fn encode_tensor_png(t: &ImageTensor) -> Result<Vec<u8>> {
    let color = match t.channels() {
        1 => ExtendedColorType::L8,
        3 => ExtendedColorType::Rgb8,
        c => return Err(Error::validation(format!("cannot store a {c}-channel tensor as PNG"))),
    };
    Ok(encode_png(&t.to_interleaved_u8(), t.width(), t.height(), color))
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

/// Item id of an image file: its stem without a leading `img_` or `msk_`,
/// so `img_00007.png` and `msk_00007.png` both belong to item `00007`.
pub fn item_id(path: &Path) -> Option<String> {
    let stem = path.file_stem()?.to_str()?;
    let id = stem
        .strip_prefix("img_")
        .or_else(|| stem.strip_prefix("msk_"))
        .unwrap_or(stem);
    Some(id.to_string())
}

/// Which files of a mixed directory a listing wants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Skips `msk_*` files.
    Image,
    /// Skips `img_*` files.
    Mask,
}

/// Image files in `dir` keyed by item id, in id order.
pub fn list_images(dir: &Path, role: Role) -> Result<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::validation("no such directory").at(dir));
    }
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::from(e).at(dir))? {
        let path = entry.map_err(|e| Error::from(e).at(dir))?.path();
        let is_image = extension(&path).is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str()));
        if !path.is_file() || !is_image {
            continue;
        }
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        let skip = match role {
            Role::Image => "msk_",
            Role::Mask => "img_",
        };
        if name.starts_with(skip) {
            continue;
        }
        let Some(id) = item_id(&path) else { continue };
        if let Some(prev) = out.insert(id.clone(), path.clone()) {
            return Err(Error::validation(format!(
                "{} and {} share item id {id}",
                prev.display(),
                path.display()
            ))
            .at(dir));
        }
    }
    Ok(out)
}
