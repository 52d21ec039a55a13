//! Analytical forward models: the anisotropic dark-field kernel, the
//! grid-only sinusoidal pattern and the blurred sample-and-grid pattern.
//!
//! Model coordinates are continuous pixels. Rasterization samples pixel
//! centers, and the grid phase is anchored so that a hole center (the
//! intensity maximum) sits at the geometric image center:
//!
//! ```text
//! x = col + 0.5 - width / 2 + p / 4
//! y = row + 0.5 - height / 2 + p / 4
//! ```
//!
//! `y` grows downwards (row direction) and `theta` rotates clockwise in the
//! displayed image.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::image::{Image, Rect};

/// Truncation radius of the numeric kernel, in units of the larger sigma.
pub const KERNEL_TRUNCATION_SIGMAS: f64 = 6.0;

/// Rotation and principal widths of the local dark-field blur ellipse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DarkFieldKernelParams {
    /// Clockwise rotation in radians.
    pub theta: f64,
    /// Width along the rotated x axis, pixels.
    pub sigma_x: f64,
    /// Width along the rotated y axis, pixels.
    pub sigma_y: f64,
}

impl DarkFieldKernelParams {
    pub fn new(theta: f64, sigma_x: f64, sigma_y: f64) -> Result<Self> {
        if !(sigma_x >= 0.0 && sigma_y >= 0.0) || !theta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "kernel needs finite theta and non-negative widths, got ({theta}, {sigma_x}, {sigma_y})"
            )));
        }
        Ok(Self {
            theta,
            sigma_x,
            sigma_y,
        })
    }

    /// No blur at all.
    pub fn delta() -> Self {
        Self {
            theta: 0.0,
            sigma_x: 0.0,
            sigma_y: 0.0,
        }
    }

    pub fn is_delta(&self) -> bool {
        self.sigma_x == 0.0 && self.sigma_y == 0.0
    }

    /// Quadratic-form coefficients `(A, B, C)` of the exponent
    /// `-A x^2 - 2 B x y - C y^2`.
    pub fn quadratic_coefficients(&self) -> (f64, f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let sx2 = self.sigma_x * self.sigma_x;
        let sy2 = self.sigma_y * self.sigma_y;
        let s2t = (2.0 * self.theta).sin();
        let a = c * c / (2.0 * sx2) + s * s / (2.0 * sy2);
        let b = -s2t / (4.0 * sx2) + s2t / (4.0 * sy2);
        let cc = s * s / (2.0 * sx2) + c * c / (2.0 * sy2);
        (a, b, cc)
    }

    /// Damping exponents `(a, b)` applied to the grid harmonics by this blur.
    pub fn damping(&self, period: f64) -> (f64, f64) {
        let k = PI * PI / (period * period);
        let sx2 = self.sigma_x * self.sigma_x;
        let sy2 = self.sigma_y * self.sigma_y;
        (k * (sx2 + sy2), k * (sx2 - sy2))
    }
}

/// Period and absorption of the reference grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridParams {
    /// Period in pixels.
    pub period: f64,
    /// Absorption in `[0, 1]`.
    pub alpha: f64,
}

impl GridParams {
    pub fn new(period: f64, alpha: f64) -> Result<Self> {
        if !(period > 2.0 && period.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "grid period must exceed 2 px, got {period}"
            )));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidParameter(format!(
                "grid absorption must lie in [0, 1], got {alpha}"
            )));
        }
        Ok(Self { period, alpha })
    }

    #[inline]
    fn omega(&self) -> f64 {
        2.0 * PI / self.period
    }
}

/// Imaging geometry used to turn pixel blur widths into scattering angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    /// Object-to-detector distance, meters.
    pub odd: f64,
    /// Effective pixel size at the detector, meters.
    pub pixel_size: f64,
    pub energy_kev: Option<f64>,
    pub sample_to_grid: Option<f64>,
}

impl Geometry {
    pub fn new(odd: f64, pixel_size: f64) -> Result<Self> {
        if !(odd > 0.0 && odd.is_finite()) || !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "geometry needs positive distance and pixel size, got odd={odd}, pixel={pixel_size}"
            )));
        }
        Ok(Self {
            odd,
            pixel_size,
            energy_kev: None,
            sample_to_grid: None,
        })
    }

    /// Radians subtended by one pixel of blur.
    #[inline]
    pub fn radians_per_pixel(&self) -> f64 {
        self.pixel_size / self.odd
    }
}

/// Small-angle conversion of a blur width (pixels) into a cone half-angle.
pub fn sigma_to_angle(sigma: f64, geometry: &Geometry) -> f64 {
    sigma * geometry.radians_per_pixel()
}

/// Same conversion for signed squares; the sign is carried through.
pub fn sigma_sq_to_angle_sq(sigma_sq: f64, geometry: &Geometry) -> f64 {
    let r = geometry.radians_per_pixel();
    sigma_sq * r * r
}

/// Spatially varying sample properties used by [`synthesize_pair`].
#[derive(Debug, Clone)]
pub struct SampleField {
    pub transmission: Image,
    pub theta: Image,
    pub sigma_x: Image,
    pub sigma_y: Image,
    /// Rigid displacement of the grid pattern, pixels.
    pub shift_x: Option<Image>,
    pub shift_y: Option<Image>,
}

impl SampleField {
    pub fn uniform(
        width: usize,
        height: usize,
        transmission: f64,
        kernel: DarkFieldKernelParams,
    ) -> Self {
        Self {
            transmission: Image::filled(width, height, transmission),
            theta: Image::filled(width, height, kernel.theta),
            sigma_x: Image::filled(width, height, kernel.sigma_x),
            sigma_y: Image::filled(width, height, kernel.sigma_y),
            shift_x: None,
            shift_y: None,
        }
    }

    /// No sample: unit transmission, no blur.
    pub fn empty(width: usize, height: usize) -> Self {
        Self::uniform(width, height, 1.0, DarkFieldKernelParams::delta())
    }

    pub fn with_uniform_shift(mut self, dx: f64, dy: f64) -> Self {
        let (w, h) = self.transmission.shape();
        self.shift_x = Some(Image::filled(w, h, dx));
        self.shift_y = Some(Image::filled(w, h, dy));
        self
    }

    /// Overwrite the field inside `rect` with constant properties.
    pub fn paint(&mut self, rect: Rect, transmission: f64, kernel: DarkFieldKernelParams) {
        for (c, r) in rect.pixels() {
            self.transmission.set(c, r, transmission);
            self.theta.set(c, r, kernel.theta);
            self.sigma_x.set(c, r, kernel.sigma_x);
            self.sigma_y.set(c, r, kernel.sigma_y);
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.transmission.shape()
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let maps = [
            Some(&self.transmission),
            Some(&self.theta),
            Some(&self.sigma_x),
            Some(&self.sigma_y),
            self.shift_x.as_ref(),
            self.shift_y.as_ref(),
        ];
        for m in maps.into_iter().flatten() {
            if m.shape() != (width, height) {
                return Err(Error::DimensionMismatch {
                    expected: (width, height),
                    actual: m.shape(),
                });
            }
        }
        if self
            .transmission
            .data()
            .iter()
            .any(|t| !(0.0..=1.0).contains(t))
        {
            return Err(Error::InvalidParameter(
                "transmission must lie in [0, 1]".into(),
            ));
        }
        if self
            .sigma_x
            .data()
            .iter()
            .chain(self.sigma_y.data())
            .any(|s| !(*s >= 0.0))
        {
            return Err(Error::InvalidParameter(
                "blur widths must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Band layout used by [`oriented_stripes`]: `n` horizontal bands separated by
/// background gaps of equal height, inset from the image border.
pub fn stripe_rects(width: usize, height: usize, n: usize) -> Vec<Rect> {
    let margin_y = height / 16;
    let margin_x = width / 8;
    let segment = (height - 2 * margin_y) / (2 * n - 1).max(1);
    (0..n)
        .map(|i| {
            Rect::new(
                margin_x,
                margin_y + 2 * i * segment,
                width - 2 * margin_x,
                segment,
            )
        })
        .collect()
}

/// A field of strongly scattering bands, one per entry of `thetas`, on an
/// empty background. Within each band the major blur axis points along the
/// given direction.
pub fn oriented_stripes(
    width: usize,
    height: usize,
    thetas: &[f64],
    sigma_major: f64,
    sigma_minor: f64,
    transmission: f64,
) -> Result<(SampleField, Vec<Rect>)> {
    let rects = stripe_rects(width, height, thetas.len());
    let mut field = SampleField::empty(width, height);
    for (rect, &theta) in rects.iter().zip(thetas) {
        let kernel = DarkFieldKernelParams::new(theta, sigma_minor, sigma_major)?;
        field.paint(*rect, transmission, kernel);
    }
    Ok((field, rects))
}

/// Photon noise applied to synthesized intensities.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum NoiseModel {
    #[default]
    None,
    /// Poisson counting noise with the given expected count at unit intensity.
    Poisson { counts_per_unit_intensity: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::None => Ok(()),
            NoiseModel::Poisson {
                counts_per_unit_intensity: c,
            } if c > 0.0 && c.is_finite() => Ok(()),
            NoiseModel::Poisson { .. } => Err(Error::InvalidParameter(
                "poisson noise needs a positive count scale".into(),
            )),
        }
    }

    /// Apply the noise in place, visiting pixels in row-major order so the
    /// result depends only on the seed.
    pub fn apply(&self, image: &mut Image, seed: u64) -> Result<()> {
        self.validate()?;
        let NoiseModel::Poisson {
            counts_per_unit_intensity: scale,
        } = *self
        else {
            return Ok(());
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in image.data_mut() {
            let lambda = *v * scale;
            *v = if lambda > 0.0 {
                let d = Poisson::new(lambda).map_err(|e| Error::InvalidParameter(e.to_string()))?;
                d.sample(&mut rng) / scale
            } else {
                0.0
            };
        }
        Ok(())
    }
}

/// Normalized anisotropic Gaussian blur kernel, in 1/px^2.
pub fn eval_df_kernel(params: &DarkFieldKernelParams, x: f64, y: f64) -> Result<f64> {
    if !(params.sigma_x > 0.0 && params.sigma_y > 0.0) {
        return Err(Error::DegenerateKernel {
            sigma_x: params.sigma_x,
            sigma_y: params.sigma_y,
        });
    }
    let (a, b, c) = params.quadratic_coefficients();
    let norm = 1.0 / (2.0 * PI * params.sigma_x * params.sigma_y);
    Ok(norm * (-a * x * x - 2.0 * b * x * y - c * y * y).exp())
}

/// Grid-only intensity (flat-field normalized) at model coordinates.
pub fn eval_grid_image(grid: &GridParams, x: f64, y: f64) -> f64 {
    let w = grid.omega();
    let al = grid.alpha;
    1.0 - 0.75 * al
        + 0.25 * al * (w * x).sin()
        + 0.25 * al * (w * y).sin()
        + 0.125 * al * (w * (x - y)).cos()
        - 0.125 * al * (w * (x + y)).cos()
}

/// Sample-and-grid intensity: the grid pattern blurred by `kernel` and
/// attenuated by `transmission`.
pub fn eval_sample_grid_image(
    grid: &GridParams,
    kernel: &DarkFieldKernelParams,
    transmission: f64,
    x: f64,
    y: f64,
) -> f64 {
    let w = grid.omega();
    let al = grid.alpha;
    let (a, b) = kernel.damping(grid.period);
    let c2 = (2.0 * kernel.theta).cos();
    let s2 = (2.0 * kernel.theta).sin();
    transmission
        * (1.0 - 0.75 * al
            + 0.25 * al * (-a - b * c2).exp() * (w * x).sin()
            + 0.25 * al * (-a + b * c2).exp() * (w * y).sin()
            + 0.125 * al * (-2.0 * a - 2.0 * b * s2).exp() * (w * (x - y)).cos()
            - 0.125 * al * (-2.0 * a + 2.0 * b * s2).exp() * (w * (x + y)).cos())
}

/// Model coordinates of pixel `(col, row)` in a `width`x`height` image.
#[inline]
pub fn model_coordinates(
    col: f64,
    row: f64,
    width: usize,
    height: usize,
    period: f64,
) -> (f64, f64) {
    (
        col + 0.5 - width as f64 / 2.0 + period / 4.0,
        row + 0.5 - height as f64 / 2.0 + period / 4.0,
    )
}

/// Rasterize the grid-only image. With `supersample = s > 1` the result is
/// `s` times larger along each axis and fine sample `s*c + q` sits at coarse
/// position `c + q/s`, so every `s`-th fine sample coincides with a coarse
/// pixel center.
pub fn rasterize_grid(
    width: usize,
    height: usize,
    grid: &GridParams,
    supersample: usize,
) -> Result<Image> {
    if supersample == 0 {
        return Err(Error::InvalidParameter("supersample must be >= 1".into()));
    }
    let s = supersample as f64;
    Ok(Image::from_fn(
        width * supersample,
        height * supersample,
        |c, r| {
            let (x, y) = model_coordinates(c as f64 / s, r as f64 / s, width, height, grid.period);
            eval_grid_image(grid, x, y)
        },
    ))
}

/// Rasterize a grid-only / sample-and-grid pair for the given field.
/// Noise, when requested, is applied only to the sample-and-grid image.
pub fn synthesize_pair(
    width: usize,
    height: usize,
    grid: &GridParams,
    field: &SampleField,
    noise: &NoiseModel,
    seed: u64,
) -> Result<(Image, Image)> {
    synthesize_pair_impl(width, height, grid, field, noise, seed, false)
}

/// Like [`synthesize_pair`] but the grid-only image receives independent
/// noise as well.
pub fn synthesize_pair_noisy_reference(
    width: usize,
    height: usize,
    grid: &GridParams,
    field: &SampleField,
    noise: &NoiseModel,
    seed: u64,
) -> Result<(Image, Image)> {
    synthesize_pair_impl(width, height, grid, field, noise, seed, true)
}

fn synthesize_pair_impl(
    width: usize,
    height: usize,
    grid: &GridParams,
    field: &SampleField,
    noise: &NoiseModel,
    seed: u64,
    noisy_reference: bool,
) -> Result<(Image, Image)> {
    field.validate(width, height)?;
    noise.validate()?;
    let mut grid_only = rasterize_grid(width, height, grid, 1)?;
    let mut sample_grid = Image::from_fn(width, height, |c, r| {
        let (mut x, mut y) = model_coordinates(c as f64, r as f64, width, height, grid.period);
        if let Some(sx) = &field.shift_x {
            x += sx.get(c, r);
        }
        if let Some(sy) = &field.shift_y {
            y += sy.get(c, r);
        }
        let kernel = DarkFieldKernelParams {
            theta: field.theta.get(c, r),
            sigma_x: field.sigma_x.get(c, r),
            sigma_y: field.sigma_y.get(c, r),
        };
        eval_sample_grid_image(grid, &kernel, field.transmission.get(c, r), x, y)
    });
    noise.apply(&mut sample_grid, seed)?;
    if noisy_reference {
        noise.apply(&mut grid_only, seed ^ 0x9e37_79b9_7f4a_7c15)?;
    }
    Ok((grid_only, sample_grid))
}

/// Brute-force convolution of a rasterized grid with a rasterized,
/// renormalized blur kernel, truncated at six sigma.
///
/// `fine` is an image produced by [`rasterize_grid`] with the same
/// `supersample` factor; the output has the coarse dimensions and is sampled
/// at coarse pixel centers. Pixels whose kernel support leaves the image are
/// NaN.
pub fn numeric_convolution_oracle(
    fine: &Image,
    kernel: &DarkFieldKernelParams,
    supersample: usize,
) -> Result<Image> {
    if supersample == 0 {
        return Err(Error::InvalidParameter("supersample must be >= 1".into()));
    }
    let (fw, fh) = fine.shape();
    if fw % supersample != 0 || fh % supersample != 0 {
        return Err(Error::InvalidParameter(format!(
            "{fw}x{fh} is not a multiple of supersample {supersample}"
        )));
    }
    let (w, h) = (fw / supersample, fh / supersample);
    let s = supersample as f64;

    let sigma_max = kernel.sigma_x.max(kernel.sigma_y);
    if kernel.is_delta() || kernel.sigma_x <= 0.0 || kernel.sigma_y <= 0.0 {
        if sigma_max > 0.0 {
            return Err(Error::DegenerateKernel {
                sigma_x: kernel.sigma_x,
                sigma_y: kernel.sigma_y,
            });
        }
        return Ok(Image::from_fn(w, h, |c, r| {
            fine.get(c * supersample, r * supersample)
        }));
    }

    let radius = (KERNEL_TRUNCATION_SIGMAS * sigma_max * s).floor() as usize;
    if 2 * radius + 1 > fw || 2 * radius + 1 > fh {
        return Err(Error::KernelTooLarge {
            radius: radius / supersample,
            width: w,
            height: h,
        });
    }
    let side = 2 * radius + 1;
    let mut taps = Vec::with_capacity(side * side);
    for v in 0..side {
        for u in 0..side {
            let dx = (u as f64 - radius as f64) / s;
            let dy = (v as f64 - radius as f64) / s;
            taps.push(eval_df_kernel(kernel, dx, dy)?);
        }
    }
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);

    Ok(Image::from_fn(w, h, |c, r| {
        let fc = c * supersample;
        let fr = r * supersample;
        if fc < radius || fr < radius || fc + radius >= fw || fr + radius >= fh {
            return f64::NAN;
        }
        // out(x) = sum_u in(x - u) K(u); K is centro-symmetric so in(x + u) K(u) is identical.
        let mut acc = 0.0;
        for v in 0..side {
            let src = fine.row(fr + v - radius);
            let k = &taps[v * side..(v + 1) * side];
            let s = &src[fc - radius..fc + radius + 1];
            acc += s.iter().zip(k).map(|(a, b)| a * b).sum::<f64>();
        }
        acc
    }))
}
