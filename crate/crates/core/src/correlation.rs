//! Local auto-/cross-correlation of grid windows and the five-term sinusoidal
//! correlation-space fit.
//!
//! A `k`x`k` kernel cut from the grid-only image is slid over every fully
//! overlapping placement inside a `2k`x`2k` window centered on the same pixel,
//! giving a `(k+1)`x`(k+1)` map of raw inner products indexed by displacement
//! `(i, j)` (`i` along columns, `j` along rows). The map is then fitted with
//!
//! ```text
//! f(i,j) = c0 + c1 cos(w i + phi_i) + c2 cos(w j + phi_j)
//!             + c3 cos(w (i - j) + phi_i - phi_j) + c4 cos(w (i + j) + phi_i + phi_j)
//! ```
//!
//! with `w = 2 pi / p`. Each cosine is expanded into an in-phase/quadrature
//! pair so the fit is linear in nine unknowns; because the design matrix only
//! depends on `(k, p)`, its pseudo-inverse is computed once and every pixel
//! fit reduces to a matrix-vector product.

use std::f64::consts::PI;
use std::ops::RangeInclusive;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

/// Number of linear unknowns in the expanded correlation model.
const N_BASIS: usize = 9;

/// Smallest accepted ratio between the extreme singular values of the design.
const MIN_CONDITION_RATIO: f64 = 1e-9;

/// Raw correlation values indexed by displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMap {
    k: usize,
    /// Displacement of the first row/column (`-floor(k/2)`).
    lo: i64,
    values: Vec<f64>,
}

impl CorrelationMap {
    /// Build a map from row-major values for kernel size `k`.
    pub fn from_values(k: usize, values: Vec<f64>) -> Result<Self> {
        let side = k + 1;
        if values.len() != side * side {
            return Err(Error::InvalidParameter(format!(
                "correlation map for k={k} needs {} values, got {}",
                side * side,
                values.len()
            )));
        }
        Ok(Self {
            k,
            lo: -((k / 2) as i64),
            values,
        })
    }

    /// Evaluate `f(i, j)` on every displacement of a map of kernel size `k`.
    pub fn from_fn(k: usize, f: impl Fn(i64, i64) -> f64) -> Self {
        let lo = -((k / 2) as i64);
        let side = k + 1;
        let mut values = Vec::with_capacity(side * side);
        for j in 0..side as i64 {
            for i in 0..side as i64 {
                values.push(f(lo + i, lo + j));
            }
        }
        Self { k, lo, values }
    }

    pub fn kernel_size(&self) -> usize {
        self.k
    }

    pub fn side(&self) -> usize {
        self.k + 1
    }

    /// Range of displacements along either axis.
    pub fn displacements(&self) -> RangeInclusive<i64> {
        self.lo..=self.lo + self.k as i64
    }

    /// Value at displacement `(i, j)`.
    pub fn get(&self, i: i64, j: i64) -> f64 {
        let side = self.side() as i64;
        let (ci, cj) = (i - self.lo, j - self.lo);
        assert!(
            (0..side).contains(&ci) && (0..side).contains(&cj),
            "displacement ({i}, {j}) outside map"
        );
        self.values[(cj * side + ci) as usize]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Window geometry for kernel size `k` centered on a pixel: returns the
/// kernel's top-left corner offset relative to the center (negative) and the
/// window's.
#[inline]
fn window_offsets(k: usize) -> (usize, usize) {
    let half = k / 2;
    (half, 2 * half)
}

/// Inclusive range of center coordinates along an axis of length `len` for
/// which the `2k` search window stays inside the image.
pub fn valid_center_range(len: usize, k: usize) -> Option<RangeInclusive<usize>> {
    let (_, win_back) = window_offsets(k);
    let lo = win_back;
    let hi = (len + win_back).checked_sub(2 * k)?;
    (lo <= hi).then_some(lo..=hi)
}

/// Raw sliding inner product of the `k`x`k` kernel taken from `kernel_source`
/// around `(cx, cy)` with every placement inside the `2k`x`2k` window of
/// `window_source` around the same pixel.
pub fn local_correlation(
    kernel_source: &Image,
    window_source: &Image,
    cx: usize,
    cy: usize,
    k: usize,
) -> Result<CorrelationMap> {
    kernel_source.ensure_same_shape(window_source)?;
    if k == 0 {
        return Err(Error::InvalidParameter(
            "kernel size must be positive".into(),
        ));
    }
    let (w, h) = kernel_source.shape();
    let in_x = valid_center_range(w, k).is_some_and(|r| r.contains(&cx));
    let in_y = valid_center_range(h, k).is_some_and(|r| r.contains(&cy));
    if !in_x || !in_y {
        return Err(Error::OutOfBounds { x: cx, y: cy, k });
    }
    let mut kernel = Vec::with_capacity(k * k);
    let (kb, wb) = window_offsets(k);
    for r in cy - kb..cy - kb + k {
        kernel.extend_from_slice(&kernel_source.row(r)[cx - kb..cx - kb + k]);
    }
    Ok(correlate_window(
        &kernel,
        window_source,
        cx - wb,
        cy - wb,
        k,
    ))
}

fn correlate_window(
    kernel: &[f64],
    window_source: &Image,
    wx0: usize,
    wy0: usize,
    k: usize,
) -> CorrelationMap {
    let side = k + 1;
    let mut values = vec![0.0; side * side];
    for dj in 0..side {
        for di in 0..side {
            let mut acc = 0.0;
            for v in 0..k {
                let src = &window_source.row(wy0 + dj + v)[wx0 + di..wx0 + di + k];
                let ker = &kernel[v * k..(v + 1) * k];
                acc += src.iter().zip(ker).map(|(a, b)| a * b).sum::<f64>();
            }
            values[dj * side + di] = acc;
        }
    }
    CorrelationMap {
        k,
        lo: -((k / 2) as i64),
        values,
    }
}

/// Fitted parameters of the five-term correlation model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientSet {
    /// `c0..c4`; `c1..c4` are magnitudes.
    pub c: [f64; 5],
    /// Phase of the `i` term, wrapped to `(-pi, pi]`.
    pub phi_i: f64,
    /// Phase of the `j` term, wrapped to `(-pi, pi]`.
    pub phi_j: f64,
    /// Largest disagreement between the freely fitted `(i -+ j)` phases and
    /// `phi_i -+ phi_j`, radians. A fit-quality diagnostic.
    pub phase_residual: f64,
}

impl CoefficientSet {
    /// Evaluate the correlation model at displacement `(i, j)`.
    pub fn evaluate(&self, i: f64, j: f64, period: f64) -> f64 {
        let w = 2.0 * PI / period;
        let c = &self.c;
        c[0] + c[1] * (w * i + self.phi_i).cos()
            + c[2] * (w * j + self.phi_j).cos()
            + c[3] * (w * (i - j) + self.phi_i - self.phi_j).cos()
            + c[4] * (w * (i + j) + self.phi_i + self.phi_j).cos()
    }
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_phase(phi: f64) -> f64 {
    let mut v = phi.rem_euclid(2.0 * PI);
    if v > PI {
        v -= 2.0 * PI;
    }
    v
}

/// Least-squares fitter for a fixed `(k, p)` pair.
#[derive(Debug, Clone)]
pub struct CorrelationFitter {
    k: usize,
    period: f64,
    /// Row-major `9 x (k+1)^2` pseudo-inverse of the design matrix.
    pinv: Vec<f64>,
}

impl CorrelationFitter {
    pub fn new(k: usize, period: f64) -> Result<Self> {
        if !(period > 2.0 && period.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "grid period must exceed 2 px, got {period}"
            )));
        }
        if k == 0 {
            return Err(Error::InvalidParameter(
                "kernel size must be positive".into(),
            ));
        }
        let lo = -((k / 2) as i64);
        let side = k + 1;
        let n = side * side;
        let w = 2.0 * PI / period;
        let design = DMatrix::from_fn(n, N_BASIS, |row, col| {
            let i = (lo + (row % side) as i64) as f64;
            let j = (lo + (row / side) as i64) as f64;
            basis(col, w, i, j)
        });
        let svd = design.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if n < N_BASIS || !(smin > MIN_CONDITION_RATIO * smax) {
            return Err(Error::RankDeficient { k, period });
        }
        let pinv = svd
            .pseudo_inverse(0.0)
            .map_err(|_| Error::RankDeficient { k, period })?;
        let mut flat = Vec::with_capacity(N_BASIS * n);
        for r in 0..N_BASIS {
            for c in 0..n {
                flat.push(pinv[(r, c)]);
            }
        }
        Ok(Self {
            k,
            period,
            pinv: flat,
        })
    }

    pub fn kernel_size(&self) -> usize {
        self.k
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Fit the model to a map. Non-finite inputs or results are fit failures.
    pub fn fit(&self, map: &CorrelationMap) -> Result<CoefficientSet> {
        if map.k != self.k {
            return Err(Error::InvalidParameter(format!(
                "map has kernel size {}, fitter expects {}",
                map.k, self.k
            )));
        }
        let n = map.values.len();
        let mut beta = [0.0; N_BASIS];
        for (r, b) in beta.iter_mut().enumerate() {
            let row = &self.pinv[r * n..(r + 1) * n];
            *b = row.iter().zip(&map.values).map(|(p, v)| p * v).sum();
        }
        let mut c = [beta[0], 0.0, 0.0, 0.0, 0.0];
        let mut phases = [0.0; 4];
        for t in 0..4 {
            let (in_phase, quad) = (beta[1 + 2 * t], beta[2 + 2 * t]);
            // c cos(wu + phi) = c cos(phi) cos(wu) - c sin(phi) sin(wu)
            c[t + 1] = in_phase.hypot(quad);
            phases[t] = wrap_phase((-quad).atan2(in_phase));
        }
        if !c.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidPixel("non-finite correlation fit"));
        }
        let (phi_i, phi_j) = (phases[0], phases[1]);
        let r3 = wrap_phase(phases[2] - (phi_i - phi_j)).abs();
        let r4 = wrap_phase(phases[3] - (phi_i + phi_j)).abs();
        Ok(CoefficientSet {
            c,
            phi_i,
            phi_j,
            phase_residual: r3.max(r4),
        })
    }
}

#[inline]
fn basis(col: usize, w: f64, i: f64, j: f64) -> f64 {
    match col {
        0 => 1.0,
        1 => (w * i).cos(),
        2 => (w * i).sin(),
        3 => (w * j).cos(),
        4 => (w * j).sin(),
        5 => (w * (i - j)).cos(),
        6 => (w * (i - j)).sin(),
        7 => (w * (i + j)).cos(),
        8 => (w * (i + j)).sin(),
        _ => unreachable!(),
    }
}

/// One-shot fit of a correlation map for grid period `period`.
pub fn fit_correlation_model(map: &CorrelationMap, period: f64) -> Result<CoefficientSet> {
    CorrelationFitter::new(map.k, period)?.fit(map)
}

/// Per-pixel correlation coefficients of the auto (grid * grid) and cross
/// (grid * sample-and-grid) fits. All images share the input dimensions;
/// pixels whose windows leave the image or whose fit failed are invalid
/// (NaN in every map, `false` in `valid`).
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMaps {
    pub auto: [Image; 5],
    pub cross: [Image; 5],
    pub auto_phi_i: Image,
    pub auto_phi_j: Image,
    pub cross_phi_i: Image,
    pub cross_phi_j: Image,
    /// Largest phase-reconciliation residual of the two fits.
    pub phase_residual: Image,
    pub valid: Mask,
}

impl CoefficientMaps {
    pub fn shape(&self) -> (usize, usize) {
        self.valid.shape()
    }

    fn invalid(width: usize, height: usize) -> Self {
        let nan = || Image::filled(width, height, f64::NAN);
        Self {
            auto: std::array::from_fn(|_| nan()),
            cross: std::array::from_fn(|_| nan()),
            auto_phi_i: nan(),
            auto_phi_j: nan(),
            cross_phi_i: nan(),
            cross_phi_j: nan(),
            phase_residual: nan(),
            valid: Mask::new(width, height, false),
        }
    }

    fn store(&mut self, col: usize, row: usize, auto: &CoefficientSet, cross: &CoefficientSet) {
        for n in 0..5 {
            self.auto[n].set(col, row, auto.c[n]);
            self.cross[n].set(col, row, cross.c[n]);
        }
        self.auto_phi_i.set(col, row, auto.phi_i);
        self.auto_phi_j.set(col, row, auto.phi_j);
        self.cross_phi_i.set(col, row, cross.phi_i);
        self.cross_phi_j.set(col, row, cross.phi_j);
        self.phase_residual
            .set(col, row, auto.phase_residual.max(cross.phase_residual));
        self.valid.set(col, row, true);
    }

    /// Auto and cross coefficient sets at one pixel, if valid.
    pub fn at(&self, col: usize, row: usize) -> Option<([f64; 5], [f64; 5])> {
        if !self.valid.get(col, row) {
            return None;
        }
        Some((
            std::array::from_fn(|n| self.auto[n].get(col, row)),
            std::array::from_fn(|n| self.cross[n].get(col, row)),
        ))
    }
}

/// Correlate and fit at every pixel without period averaging.
pub fn compute_raw_coefficient_maps(
    grid_only: &Image,
    sample_grid: &Image,
    k: usize,
    period: f64,
) -> Result<CoefficientMaps> {
    grid_only.ensure_same_shape(sample_grid)?;
    if (k as f64) < period.ceil() {
        return Err(Error::InvalidParameter(format!(
            "kernel size {k} must be at least ceil(p) = {}",
            period.ceil()
        )));
    }
    let fitter = CorrelationFitter::new(k, period)?;
    let (w, h) = grid_only.shape();
    let mut maps = CoefficientMaps::invalid(w, h);
    let (Some(xs), Some(ys)) = (valid_center_range(w, k), valid_center_range(h, k)) else {
        return Ok(maps);
    };

    type RowFits = (usize, Vec<Option<(CoefficientSet, CoefficientSet)>>);
    let rows: Vec<RowFits> = ys
        .into_par_iter()
        .map(|cy| {
            let fits = xs
                .clone()
                .map(|cx| {
                    let auto = local_correlation(grid_only, grid_only, cx, cy, k).ok()?;
                    let cross = local_correlation(grid_only, sample_grid, cx, cy, k).ok()?;
                    if !auto.is_finite() || !cross.is_finite() {
                        return None;
                    }
                    Some((fitter.fit(&auto).ok()?, fitter.fit(&cross).ok()?))
                })
                .collect();
            (cy, fits)
        })
        .collect();

    for (cy, fits) in rows {
        for (cx, fit) in xs.clone().zip(fits) {
            if let Some((a, c)) = fit {
                maps.store(cx, cy, &a, &c);
            }
        }
    }
    Ok(maps)
}

/// Correlate, fit and average over grid-period-sized regions.
pub fn compute_coefficient_maps(
    grid_only: &Image,
    sample_grid: &Image,
    k: usize,
    period: f64,
) -> Result<CoefficientMaps> {
    let raw = compute_raw_coefficient_maps(grid_only, sample_grid, k, period)?;
    average_over_period(&raw, period)
}

/// Box-filter size used for period averaging.
pub fn averaging_window(period: f64) -> usize {
    (period.round() as usize).max(1)
}

/// Mask-aware `n`x`n` box mean. Each output is the mean of the valid samples
/// in its neighborhood, summed in a fixed row-major order.
pub fn masked_box_mean(image: &Image, valid: &Mask, n: usize) -> (Image, Mask) {
    let (w, h) = image.shape();
    let lo = (n / 2) as isize;
    let mut out_valid = Mask::new(w, h, false);
    let out = Image::from_fn(w, h, |c, r| {
        let (mut sum, mut count) = (0.0, 0usize);
        for dr in 0..n as isize {
            let rr = r as isize + dr - lo;
            if rr < 0 || rr >= h as isize {
                continue;
            }
            for dc in 0..n as isize {
                let cc = c as isize + dc - lo;
                if cc < 0 || cc >= w as isize {
                    continue;
                }
                let (cc, rr) = (cc as usize, rr as usize);
                if valid.get(cc, rr) {
                    sum += image.get(cc, rr);
                    count += 1;
                }
            }
        }
        if count == 0 {
            f64::NAN
        } else {
            sum / count as f64
        }
    });
    for r in 0..h {
        for c in 0..w {
            out_valid.set(c, r, out.get(c, r).is_finite());
        }
    }
    (out, out_valid)
}

fn circular_box_mean(phase: &Image, valid: &Mask, n: usize) -> Image {
    let (cos_mean, _) = masked_box_mean(&phase.map(f64::cos), valid, n);
    let (sin_mean, _) = masked_box_mean(&phase.map(f64::sin), valid, n);
    sin_mean
        .zip_map(&cos_mean, |s, c| s.atan2(c))
        .expect("same shape")
}

/// Average every coefficient map over `round(p)`x`round(p)` neighborhoods,
/// ignoring invalid pixels. Phases are averaged on the unit circle. A pixel
/// stays valid as long as any neighbor was valid.
pub fn average_over_period(maps: &CoefficientMaps, period: f64) -> Result<CoefficientMaps> {
    if !(period > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "averaging period must be positive, got {period}"
        )));
    }
    let n = averaging_window(period);
    let mean = |img: &Image| masked_box_mean(img, &maps.valid, n).0;
    let (_, valid) = masked_box_mean(&maps.auto[0], &maps.valid, n);
    Ok(CoefficientMaps {
        auto: std::array::from_fn(|i| mean(&maps.auto[i])),
        cross: std::array::from_fn(|i| mean(&maps.cross[i])),
        auto_phi_i: circular_box_mean(&maps.auto_phi_i, &maps.valid, n),
        auto_phi_j: circular_box_mean(&maps.auto_phi_j, &maps.valid, n),
        cross_phi_i: circular_box_mean(&maps.cross_phi_i, &maps.valid, n),
        cross_phi_j: circular_box_mean(&maps.cross_phi_j, &maps.valid, n),
        phase_residual: mean(&maps.phase_residual),
        valid,
    })
}

/// Non-uniformity of the grid-only auto-correlation coefficients for kernel
/// size `k`: the sum over `n` of std/mean of `c_{g*g,n}`, sampled on a
/// lattice with spacing `stride`. Lattice points whose search window touches
/// a pixel marked invalid in `mask` are skipped.
pub fn kernel_uniformity_score(
    grid_only: &Image,
    period: f64,
    k: usize,
    stride: usize,
    mask: Option<&Mask>,
) -> Result<f64> {
    let fitter = CorrelationFitter::new(k, period)?;
    let (w, h) = grid_only.shape();
    let (Some(xs), Some(ys)) = (valid_center_range(w, k), valid_center_range(h, k)) else {
        return Err(Error::InvalidParameter(format!(
            "image {w}x{h} too small for kernel size {k}"
        )));
    };
    let stride = stride.max(1);
    let invalid_count = mask.map(InvalidCounter::new);
    let (_, wb) = window_offsets(k);

    let centers: Vec<(usize, usize)> = ys
        .step_by(stride)
        .flat_map(|y| xs.clone().step_by(stride).map(move |x| (x, y)))
        .filter(|&(x, y)| {
            invalid_count
                .as_ref()
                .is_none_or(|ic| ic.count(x - wb, y - wb, 2 * k, 2 * k) == 0)
        })
        .collect();
    if centers.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no usable lattice points for kernel size {k}"
        )));
    }
    let fits: Vec<[f64; 5]> = centers
        .par_iter()
        .map(|&(x, y)| -> Result<[f64; 5]> {
            let map = local_correlation(grid_only, grid_only, x, y, k)?;
            Ok(fitter.fit(&map)?.c)
        })
        .collect::<Result<_>>()?;

    let count = fits.len() as f64;
    let mut score = 0.0;
    for n in 0..5 {
        let mean = fits.iter().map(|c| c[n]).sum::<f64>() / count;
        let var = fits.iter().map(|c| (c[n] - mean).powi(2)).sum::<f64>() / count;
        score += var.sqrt() / mean.abs().max(f64::MIN_POSITIVE);
    }
    Ok(score)
}

/// Scores closer than this are treated as ties (resolved towards smaller k).
const SCORE_TIE_TOLERANCE: f64 = 1e-9;

/// Choose the kernel size in `k_range` whose auto-correlation coefficients are
/// most uniform across the grid-only image, sampling every `ceil(p)`-th pixel.
pub fn select_kernel_size(
    grid_only: &Image,
    period: f64,
    k_range: RangeInclusive<usize>,
    mask: Option<&Mask>,
) -> Result<usize> {
    select_kernel_size_with_stride(grid_only, period, k_range, mask, period.ceil() as usize)
}

/// [`select_kernel_size`] with an explicit lattice stride (1 = exhaustive).
pub fn select_kernel_size_with_stride(
    grid_only: &Image,
    period: f64,
    k_range: RangeInclusive<usize>,
    mask: Option<&Mask>,
    stride: usize,
) -> Result<usize> {
    if k_range.is_empty() {
        return Err(Error::InvalidParameter("empty kernel size range".into()));
    }
    let min_k = period.ceil() as usize;
    if *k_range.start() < min_k || *k_range.end() > 3 * min_k {
        return Err(Error::InvalidParameter(format!(
            "kernel size range {k_range:?} must lie within [{min_k}, {}]",
            3 * min_k
        )));
    }
    let mut best: Option<(usize, f64)> = None;
    for k in k_range {
        let score = kernel_uniformity_score(grid_only, period, k, stride, mask)?;
        log::debug!("kernel size {k}: uniformity score {score:.3e}");
        match best {
            Some((_, s)) if score >= s - SCORE_TIE_TOLERANCE => {}
            _ => best = Some((k, score)),
        }
    }
    Ok(best.expect("non-empty range").0)
}

/// Summed-area table of invalid pixels.
struct InvalidCounter {
    width: usize,
    table: Vec<u32>,
}

impl InvalidCounter {
    fn new(mask: &Mask) -> Self {
        let (w, h) = mask.shape();
        let mut table = vec![0u32; (w + 1) * (h + 1)];
        for r in 0..h {
            let mut row_sum = 0;
            for c in 0..w {
                row_sum += u32::from(!mask.get(c, r));
                table[(r + 1) * (w + 1) + c + 1] = table[r * (w + 1) + c + 1] + row_sum;
            }
        }
        Self { width: w, table }
    }

    fn count(&self, x: usize, y: usize, w: usize, h: usize) -> u32 {
        let s = self.width + 1;
        let t = &self.table;
        t[(y + h) * s + x + w] + t[y * s + x] - t[y * s + x + w] - t[(y + h) * s + x]
    }
}
