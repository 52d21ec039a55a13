//! A retrieval result as a directory of maps plus `metadata.txt`.

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;

use crate::error::{Error, Result};
use crate::forward::Geometry;
use crate::image::{Image, Mask};
use crate::pipeline::io::{read_float_map, read_mask, write_float_map, write_mask, KeyValues};

pub const METADATA_FILE: &str = "metadata.txt";
pub const VALID_FILE: &str = "valid.png";
pub const HSV_FILE: &str = "hsv.png";

/// Per-pixel outputs of one retrieval.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub transmission: Image,
    /// Dominant direction, radians in `[0, π]`.
    pub theta: Image,
    /// Blur variances along the principal axes, px² (signed).
    pub sigma_major_sq: Image,
    pub sigma_minor_sq: Image,
    /// Scattering-angle signed squares, rad². Present with geometry.
    pub theta_major_sq: Option<Image>,
    pub theta_minor_sq: Option<Image>,
    /// Strength as a signed square: rad² with geometry, px² without.
    pub rms_sq: Image,
    pub asy: Image,
    /// Grid displacement, pixels, modulo one period.
    pub shift_x: Image,
    pub shift_y: Image,
    pub valid: Mask,
    pub geometry: Option<Geometry>,
    pub metadata: KeyValues,
}

impl Bundle {
    pub fn shape(&self) -> (usize, usize) {
        self.transmission.shape()
    }

    pub fn strength_units(&self) -> &'static str {
        if self.geometry.is_some() {
            "rad^2"
        } else {
            "px^2"
        }
    }

    /// Write every map plus `valid.png` and `metadata.txt`; `hsv` is written
    /// when given.
    pub fn write(&self, dir: &Path, hsv: Option<&RgbImage>) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, img: &Image, units: &str, signed: bool| {
            write_float_map(&dir.join(format!("{name}.f32")), img, units, signed)
        };
        put("transmission", &self.transmission, "1", false)?;
        put("theta", &self.theta, "rad", false)?;
        put("sigma_major_sq", &self.sigma_major_sq, "px^2", true)?;
        put("sigma_minor_sq", &self.sigma_minor_sq, "px^2", true)?;
        if let (Some(m), Some(n)) = (&self.theta_major_sq, &self.theta_minor_sq) {
            put("theta_major_sq", m, "rad^2", true)?;
            put("theta_minor_sq", n, "rad^2", true)?;
        }
        put("rms_sq", &self.rms_sq, self.strength_units(), true)?;
        put("asy", &self.asy, "1", false)?;
        put("shift_x", &self.shift_x, "px", false)?;
        put("shift_y", &self.shift_y, "px", false)?;
        write_mask(&dir.join(VALID_FILE), &self.valid)?;
        if let Some(hsv) = hsv {
            write_hsv(&dir.join(HSV_FILE), hsv)?;
        }
        self.metadata.write(&dir.join(METADATA_FILE))
    }

    pub fn read(dir: &Path) -> Result<Bundle> {
        let meta_path = dir.join(METADATA_FILE);
        let metadata = KeyValues::read(&meta_path)?;
        if metadata.get("status") != Some("complete") {
            return Err(Error::format(
                &meta_path,
                "bundle is incomplete (the run that produced it did not finish)",
            ));
        }
        let geometry = match (metadata.get("odd"), metadata.get("pixel_size")) {
            (Some(_), Some(_)) => Some(Geometry::new(
                metadata.parse_value("odd", &meta_path)?,
                metadata.parse_value("pixel_size", &meta_path)?,
            )?),
            _ => None,
        };
        let get = |name: &str| read_float_map(&map_path(dir, name));
        let optional = |name: &str| -> Result<Option<Image>> {
            let p = map_path(dir, name);
            if p.exists() {
                read_float_map(&p).map(Some)
            } else {
                Ok(None)
            }
        };
        let bundle = Bundle {
            transmission: get("transmission")?,
            theta: get("theta")?,
            sigma_major_sq: get("sigma_major_sq")?,
            sigma_minor_sq: get("sigma_minor_sq")?,
            theta_major_sq: optional("theta_major_sq")?,
            theta_minor_sq: optional("theta_minor_sq")?,
            rms_sq: get("rms_sq")?,
            asy: get("asy")?,
            shift_x: get("shift_x")?,
            shift_y: get("shift_y")?,
            valid: read_mask(&dir.join(VALID_FILE))?,
            geometry,
            metadata,
        };
        let shape = bundle.shape();
        if bundle.valid.shape() != shape {
            return Err(Error::DimensionMismatch {
                expected: shape,
                actual: bundle.valid.shape(),
            });
        }
        for m in [
            &bundle.theta,
            &bundle.rms_sq,
            &bundle.asy,
            &bundle.sigma_major_sq,
        ] {
            bundle.transmission.ensure_same_shape(m)?;
        }
        Ok(bundle)
    }
}

pub fn map_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.f32"))
}

pub fn write_hsv(path: &Path, hsv: &RgbImage) -> Result<()> {
    hsv.save(path)
        .map_err(|e| Error::format(path, e.to_string()))
}
