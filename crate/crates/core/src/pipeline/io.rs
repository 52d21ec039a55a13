//! On-disk formats.
//!
//! * Float map: `<name>.f32`, raw IEEE-754 32-bit little-endian floats,
//!   row-major, top-left origin, with a `<name>.meta` sidecar of `key=value`
//!   lines (`format`, `width`, `height`, `units`, `signed_square`, optional
//!   `pixel_size`). Invalid pixels are quiet NaN.
//! * Mask: 8-bit grayscale PNG, 255 = valid, 0 = invalid.
//! * Input frames: float maps, or 8/16-bit grayscale PNG mapped linearly to
//!   `[0, 1]`.
//! * Metadata: plain-text `key=value`, one pair per line.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageReader, Luma};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

pub const FLOAT_MAP_EXTENSION: &str = "f32";
pub const SIDECAR_EXTENSION: &str = "meta";

/// Ordered `key=value` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace `key`, keeping first-insertion order.
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str, path: &Path) -> Result<T> {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::format(path, format!("missing key '{key}'")))?;
        raw.parse()
            .map_err(|_| Error::format(path, format!("bad value for '{key}': {raw}")))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut kv = KeyValues::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::format(path, format!("line {}: expected key=value", n + 1))
            })?;
            kv.set(k.trim(), v.trim());
        }
        Ok(kv)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

/// Path of the sidecar belonging to a float map.
pub fn sidecar_path(map: &Path) -> PathBuf {
    map.with_extension(SIDECAR_EXTENSION)
}

/// Write a float map plus sidecar. `units` is free text; `signed_square`
/// flags maps holding signed squares.
pub fn write_float_map(path: &Path, image: &Image, units: &str, signed_square: bool) -> Result<()> {
    let mut bytes = Vec::with_capacity(image.data().len() * 4);
    for &v in image.data() {
        let f = if v.is_nan() { f32::NAN } else { v as f32 };
        bytes.extend_from_slice(&f.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let mut meta = KeyValues::new();
    meta.set("format", "f32le");
    meta.set("width", image.width());
    meta.set("height", image.height());
    meta.set("units", units);
    meta.set("signed_square", signed_square);
    if let Some(px) = image.pixel_size {
        meta.set("pixel_size", px);
    }
    meta.write(&sidecar_path(path))
}

pub fn read_float_map(path: &Path) -> Result<Image> {
    let meta = KeyValues::read(&sidecar_path(path))?;
    let side = sidecar_path(path);
    if meta.get("format").is_some_and(|f| f != "f32le") {
        return Err(Error::format(&side, "unsupported float map format"));
    }
    let width: usize = meta.parse_value("width", &side)?;
    let height: usize = meta.parse_value("height", &side)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != width * height * 4 {
        return Err(Error::format(
            path,
            format!(
                "{} bytes do not hold {width}x{height} f32 values",
                bytes.len()
            ),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let mut img = Image::from_vec(width, height, data)?;
    if meta.get("pixel_size").is_some() {
        img.pixel_size = Some(meta.parse_value("pixel_size", &side)?);
    }
    Ok(img)
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let (w, h) = mask.shape();
    let img = GrayImage::from_fn(w as u32, h as u32, |c, r| {
        Luma([if mask.get(c as usize, r as usize) {
            255
        } else {
            0
        }])
    });
    img.save(path)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::format(path, e.to_string()))?
        .into_luma8();
    let (w, h) = img.dimensions();
    Mask::from_vec(
        w as usize,
        h as usize,
        img.pixels().map(|p| p.0[0] > 127).collect(),
    )
}

/// Read an input frame: `.f32` float map or grayscale PNG.
pub fn read_frame(path: &Path) -> Result<Image> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some(FLOAT_MAP_EXTENSION) => read_float_map(path),
        Some("png") => {
            let dynamic = ImageReader::open(path)
                .map_err(|e| Error::io(path, e))?
                .decode()
                .map_err(|e| Error::format(path, e.to_string()))?;
            let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
            let data: Vec<f64> = match dynamic {
                DynamicImage::ImageLuma16(img) => {
                    img.pixels().map(|p| p.0[0] as f64 / 65535.0).collect()
                }
                DynamicImage::ImageLuma8(img) => {
                    img.pixels().map(|p| p.0[0] as f64 / 255.0).collect()
                }
                _ => {
                    return Err(Error::format(
                        path,
                        "only single-channel grayscale PNG frames are supported",
                    ))
                }
            };
            Image::from_vec(w, h, data)
        }
        _ => Err(Error::format(
            path,
            "unrecognized frame format (expected .f32 or .png)",
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_map_layout_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.f32");
        let img = Image::from_vec(2, 2, vec![1.0, -2.5, f64::NAN, 0.125]).unwrap();
        write_float_map(&path, &img, "px^2", true).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[4..8], &(-2.5f32).to_le_bytes());
        assert!(f32::from_le_bytes(bytes[8..12].try_into().unwrap()).is_nan());
        let meta = fs::read_to_string(dir.path().join("m.meta")).unwrap();
        assert_eq!(
            meta,
            "format=f32le\nwidth=2\nheight=2\nunits=px^2\nsigned_square=true\n"
        );
        let back = read_float_map(&path).unwrap();
        assert_eq!(back.get(1, 0), -2.5);
        assert!(back.get(0, 1).is_nan());
    }

    #[test]
    fn truncated_map_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.f32");
        write_float_map(&path, &Image::zeros(3, 3), "", false).unwrap();
        fs::write(&path, [0u8; 8]).unwrap();
        assert!(matches!(read_float_map(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn mask_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("valid.png");
        let mut m = Mask::new(3, 2, true);
        m.set(1, 1, false);
        write_mask(&path, &m).unwrap();
        assert_eq!(read_mask(&path).unwrap(), m);
    }

    #[test]
    fn sixteen_bit_png_frames_are_normalized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.png");
        let img =
            image::ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(2, 1, vec![0, 65535]).unwrap();
        img.save(&path).unwrap();
        let f = read_frame(&path).unwrap();
        assert_eq!(f.data(), &[0.0, 1.0]);
        assert!(read_frame(&dir.path().join("x.tif")).is_err());
    }

    #[test]
    fn key_values_parse() {
        let p = Path::new("meta");
        let kv = KeyValues::parse("# c\na=1\n b = two \n", p).unwrap();
        assert_eq!(kv.get("b"), Some("two"));
        assert_eq!(kv.parse_value::<u32>("a", p).unwrap(), 1);
        assert!(KeyValues::parse("novalue\n", p).is_err());
    }
}
