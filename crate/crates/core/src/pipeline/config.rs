//! Run configuration shared by the command line and TOML config files.
//! Every field can come from either; command-line values win.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::Geometry;

/// A value that may be left for the pipeline to determine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AutoOr<T> {
    Value(T),
    Auto(AutoKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoKeyword {
    Auto,
}

impl<T> AutoOr<T> {
    pub fn auto() -> Self {
        AutoOr::Auto(AutoKeyword::Auto)
    }

    pub fn value(&self) -> Option<&T> {
        match self {
            AutoOr::Value(v) => Some(v),
            AutoOr::Auto(_) => None,
        }
    }
}

impl<T> Default for AutoOr<T> {
    fn default() -> Self {
        Self::auto()
    }
}

impl<T: FromStr> FromStr for AutoOr<T> {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Self::auto());
        }
        s.parse()
            .map(AutoOr::Value)
            .map_err(|_| format!("expected a number or 'auto', got '{s}'"))
    }
}

impl<T: fmt::Display> fmt::Display for AutoOr<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AutoOr::Value(v) => v.fmt(f),
            AutoOr::Auto(_) => f.write_str("auto"),
        }
    }
}

/// Spatial layout of a synthesized sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SynthPattern {
    /// One blur kernel and transmission everywhere.
    #[default]
    Uniform,
    /// Four oriented scattering bands on an empty background.
    Stripes,
}

impl fmt::Display for SynthPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthPattern::Uniform => "uniform",
            SynthPattern::Stripes => "stripes",
        })
    }
}

/// All settings of a run. Subcommands read the subset they need.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// TOML file providing defaults for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Grid-only image.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Sample-and-grid image(s); several form a frame sequence.
    #[arg(long, num_args = 1..)]
    pub sample_grid: Vec<PathBuf>,
    /// Sample-only image divided out of every sample-and-grid frame.
    #[arg(long)]
    pub sample_only: Option<PathBuf>,
    #[arg(long)]
    pub flat: Option<PathBuf>,
    #[arg(long)]
    pub dark: Option<PathBuf>,

    /// Object-to-detector distance, meters.
    #[arg(long)]
    pub odd: Option<f64>,
    /// Effective pixel size, meters.
    #[arg(long)]
    pub pixel_size: Option<f64>,
    #[arg(long)]
    pub energy_kev: Option<f64>,

    /// Grid period in pixels, or "auto".
    #[arg(long)]
    pub period: Option<AutoOr<f64>>,
    /// Kernel size in pixels, or "auto".
    #[arg(long)]
    pub kernel_size: Option<AutoOr<usize>>,
    /// Smallest candidate for automatic kernel size selection.
    #[arg(long)]
    pub k_min: Option<usize>,
    /// Largest candidate for automatic kernel size selection.
    #[arg(long)]
    pub k_max: Option<usize>,

    /// Output directory (synth, retrieve) or bundle directory (hsv, roi-stats).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Value-channel scale of the HSV image, in the strength map's units
    /// (radians with geometry, pixels without).
    #[arg(long)]
    pub max_rms: Option<f64>,
    /// Named rectangles `name:x,y,width,height`.
    #[arg(long = "roi", num_args = 1..)]
    pub rois: Vec<String>,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Near-zero threshold for sample-only division, relative to its mean.
    #[arg(long)]
    pub division_threshold: Option<f64>,

    // synthesis
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Grid absorption in [0, 1].
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub transmission: Option<f64>,
    /// Kernel rotation, radians.
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub sigma_x: Option<f64>,
    #[arg(long)]
    pub sigma_y: Option<f64>,
    /// Rigid grid displacement, pixels.
    #[arg(long)]
    pub shift_x: Option<f64>,
    #[arg(long)]
    pub shift_y: Option<f64>,
    #[arg(long, value_enum)]
    pub pattern: Option<SynthPattern>,
    /// Poisson noise: expected photon count at unit intensity.
    #[arg(long)]
    pub counts: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also add noise to the grid-only image.
    #[arg(long)]
    pub noisy_reference: Option<bool>,
}

macro_rules! prefer {
    ($self:ident, $other:ident; $($field:ident),* ; vec $($vfield:ident),*) => {
        RunConfig {
            config: $self.config.clone(),
            $($field: $self.$field.clone().or_else(|| $other.$field.clone()),)*
            $($vfield: if $self.$vfield.is_empty() { $other.$vfield.clone() } else { $self.$vfield.clone() },)*
        }
    };
}

impl RunConfig {
    /// Field-wise merge where `self` takes precedence over `fallback`.
    pub fn merged_over(&self, fallback: &RunConfig) -> RunConfig {
        prefer!(self, fallback;
            grid, sample_only, flat, dark, odd, pixel_size, energy_kev, period,
            kernel_size, k_min, k_max, output, max_rms, workers, division_threshold,
            width, height, alpha, transmission, theta, sigma_x, sigma_y, shift_x,
            shift_y, pattern, counts, seed, noisy_reference;
            vec sample_grid, rois)
    }

    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::InvalidParameter(format!("config file: {e}")))
    }

    /// Apply the `--config` file, if any, underneath the explicit values.
    pub fn resolve(&self) -> Result<RunConfig> {
        let Some(path) = &self.config else {
            return Ok(self.clone());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file = RunConfig::from_toml(&text).map_err(|e| match e {
            Error::InvalidParameter(m) => Error::format(path, m),
            other => other,
        })?;
        Ok(self.merged_over(&file))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(AutoOr::Value(p)) = self.period {
            if !(p > 2.0) {
                return Err(Error::InvalidParameter(format!(
                    "period must exceed 2 px, got {p}"
                )));
            }
            if let Some(AutoOr::Value(k)) = self.kernel_size {
                if (k as f64) < p.ceil() {
                    return Err(Error::InvalidParameter(format!(
                        "kernel size {k} must be at least ceil(period) = {}",
                        p.ceil()
                    )));
                }
            }
        }
        if self.odd.is_some() != self.pixel_size.is_some() {
            return Err(Error::InvalidParameter(
                "odd and pixel_size must be given together".into(),
            ));
        }
        self.geometry().map(|_| ())
    }

    pub fn geometry(&self) -> Result<Option<Geometry>> {
        match (self.odd, self.pixel_size) {
            (Some(odd), Some(px)) => {
                let mut g = Geometry::new(odd, px)?;
                g.energy_kev = self.energy_kev;
                Ok(Some(g))
            }
            _ => Ok(None),
        }
    }

    pub fn workers(&self) -> usize {
        self.workers.unwrap_or(0)
    }
}
