//! End-to-end runs: in-memory retrieval plus the file-based commands.

use std::fs;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use image::RgbImage;

use crate::correlation::{compute_coefficient_maps, select_kernel_size, CoefficientMaps};
use crate::error::{Error, Result, StageContext};
use crate::forward::{
    oriented_stripes, synthesize_pair, synthesize_pair_noisy_reference, DarkFieldKernelParams,
    Geometry, GridParams, NoiseModel, SampleField,
};
use crate::image::{Image, Mask};
use crate::metrics::{
    angles_from_solution, compose_hsv, compute_metrics, phase_shift_maps,
    pixel_units_from_solution, AngleMaps, MetricMaps,
};
use crate::period::{estimate_axis_periods, estimate_grid_period};
use crate::pipeline::bundle::{write_hsv, Bundle, HSV_FILE, METADATA_FILE};
use crate::pipeline::config::{AutoOr, RunConfig, SynthPattern};
use crate::pipeline::correction::{
    divide_sample_only, flat_dark_correct, DEFAULT_DIVISION_THRESHOLD,
};
use crate::pipeline::io::{read_frame, write_float_map, KeyValues};
use crate::pipeline::roi::{format_roi_table, roi_stats, Roi, MICRORADIANS_PER_RADIAN};
use crate::retrieval::{retrieve_field, SolutionMaps};

/// Where a pipeline parameter came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSource {
    User,
    Auto,
}

impl ParamSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamSource::User => "user",
            ParamSource::Auto => "auto",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RetrieveOptions {
    pub period: AutoOr<f64>,
    pub kernel_size: AutoOr<usize>,
    /// Candidates for automatic kernel selection; defaults to
    /// `[ceil(p), 2 ceil(p)]`.
    pub kernel_range: Option<RangeInclusive<usize>>,
    pub geometry: Option<Geometry>,
    /// HSV value scale; the largest displayed strength when `None`.
    pub max_rms: Option<f64>,
}

/// Period and kernel size actually used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChosenParameters {
    pub period: f64,
    pub period_source: ParamSource,
    pub kernel_size: usize,
    pub kernel_source: ParamSource,
}

#[derive(Debug, Clone)]
pub struct Retrieval {
    pub parameters: ChosenParameters,
    pub coefficients: CoefficientMaps,
    pub solution: SolutionMaps,
    /// Angles in rad² with geometry, or blur variances in px² without.
    pub angles: AngleMaps,
    pub metrics: MetricMaps,
    pub shift_x: Image,
    pub shift_y: Image,
    pub hsv: RgbImage,
    pub max_rms: f64,
    pub geometry: Option<Geometry>,
}

impl Retrieval {
    pub fn to_bundle(&self, metadata: KeyValues) -> Bundle {
        let geo = self.geometry.is_some();
        Bundle {
            transmission: self.solution.transmission.clone(),
            theta: self.solution.theta.clone(),
            sigma_major_sq: self.solution.sigma_major_sq.clone(),
            sigma_minor_sq: self.solution.sigma_minor_sq.clone(),
            theta_major_sq: geo.then(|| self.angles.theta_major_sq.clone()),
            theta_minor_sq: geo.then(|| self.angles.theta_minor_sq.clone()),
            rms_sq: self.metrics.rms_sq.clone(),
            asy: self.metrics.asy.clone(),
            shift_x: self.shift_x.clone(),
            shift_y: self.shift_y.clone(),
            valid: self.solution.valid.clone(),
            geometry: self.geometry,
            metadata,
        }
    }
}

/// Resolve `auto` period and kernel size from the grid-only image.
pub fn choose_parameters(grid_only: &Image, opts: &RetrieveOptions) -> Result<ChosenParameters> {
    let (period, period_source) = match opts.period {
        AutoOr::Value(p) => {
            GridParams::new(p, 0.0)?;
            (p, ParamSource::User)
        }
        AutoOr::Auto(_) => (
            estimate_grid_period(grid_only).stage("period")?,
            ParamSource::Auto,
        ),
    };
    let (kernel_size, kernel_source) = match opts.kernel_size {
        AutoOr::Value(k) => (k, ParamSource::User),
        AutoOr::Auto(_) => {
            let lo = period.ceil() as usize;
            let range = opts.kernel_range.clone().unwrap_or(lo..=2 * lo);
            let mask = Mask::finite(grid_only);
            let k = select_kernel_size(grid_only, period, range, Some(&mask)).stage("kernel")?;
            (k, ParamSource::Auto)
        }
    };
    Ok(ChosenParameters {
        period,
        period_source,
        kernel_size,
        kernel_source,
    })
}

/// Retrieve all outputs from a grid-only / sample-and-grid pair.
pub fn retrieve_images(
    grid_only: &Image,
    sample_grid: &Image,
    opts: &RetrieveOptions,
) -> Result<Retrieval> {
    grid_only.ensure_same_shape(sample_grid).stage("load")?;
    let params = choose_parameters(grid_only, opts)?;
    retrieve_with_parameters(grid_only, sample_grid, params, opts.geometry, opts.max_rms)
}

pub fn retrieve_with_parameters(
    grid_only: &Image,
    sample_grid: &Image,
    parameters: ChosenParameters,
    geometry: Option<Geometry>,
    max_rms: Option<f64>,
) -> Result<Retrieval> {
    let p = parameters.period;
    let coefficients = compute_coefficient_maps(grid_only, sample_grid, parameters.kernel_size, p)
        .stage("correlate")?;
    let solution = retrieve_field(&coefficients, p);
    let angles = match &geometry {
        Some(g) => angles_from_solution(&solution, g),
        None => pixel_units_from_solution(&solution),
    };
    let metrics = compute_metrics(&angles);
    let (shift_x, shift_y) = phase_shift_maps(&coefficients, p);
    let (hsv, max_rms) = compose_hsv(
        &solution.theta,
        &metrics.asy,
        &metrics.rms_sq,
        &solution.valid,
        max_rms,
    )
    .stage("hsv")?;
    Ok(Retrieval {
        parameters,
        coefficients,
        solution,
        angles,
        metrics,
        shift_x,
        shift_y,
        hsv,
        max_rms,
        geometry,
    })
}

/// Run `f` on a dedicated pool of `workers` threads (0 = all cores).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn path_text(p: &Path) -> String {
    p.display().to_string()
}

fn require<'a, T>(v: &'a Option<T>, name: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| Error::InvalidParameter(format!("missing required setting '{name}'")))
}

fn config_metadata(cfg: &RunConfig, command: &str) -> KeyValues {
    let mut m = KeyValues::new();
    m.set("status", "incomplete");
    m.set("command", command);
    m.set("version", env!("CARGO_PKG_VERSION"));
    if let Some(g) = &cfg.grid {
        m.set("grid", path_text(g));
    }
    if !cfg.sample_grid.is_empty() {
        let names: Vec<String> = cfg.sample_grid.iter().map(|p| path_text(p)).collect();
        m.set("sample_grid", names.join(","));
    }
    for (key, val) in [
        ("sample_only", &cfg.sample_only),
        ("flat", &cfg.flat),
        ("dark", &cfg.dark),
    ] {
        if let Some(v) = val {
            m.set(key, path_text(v));
        }
    }
    for (key, val) in [
        ("odd", cfg.odd),
        ("pixel_size", cfg.pixel_size),
        ("energy_kev", cfg.energy_kev),
        ("division_threshold", cfg.division_threshold),
    ] {
        if let Some(v) = val {
            m.set(key, v);
        }
    }
    m.set("workers", cfg.workers());
    m
}

/// Flat/dark-correct a frame when both references are configured.
fn load_corrected(path: &Path, refs: &Option<(Image, Image)>) -> Result<Image> {
    let raw = read_frame(path).stage("load")?;
    match refs {
        Some((flat, dark)) => Ok(flat_dark_correct(&raw, flat, dark).stage("correct")?.0),
        None => Ok(raw),
    }
}

fn load_references(cfg: &RunConfig) -> Result<Option<(Image, Image)>> {
    match (&cfg.flat, &cfg.dark) {
        (Some(f), Some(d)) => Ok(Some((
            read_frame(f).stage("load")?,
            read_frame(d).stage("load")?,
        ))),
        (None, None) => Ok(None),
        _ => Err(Error::InvalidParameter(
            "flat and dark must be given together".into(),
        ))
        .stage("config"),
    }
}

#[derive(Debug, Clone)]
pub struct RetrieveSummary {
    pub output: PathBuf,
    pub parameters: ChosenParameters,
    /// One directory per frame (the output directory itself for one frame).
    pub frame_dirs: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

/// `retrieve`: load, correct, retrieve and write a bundle per frame.
pub fn run_retrieve(cfg: &RunConfig) -> Result<RetrieveSummary> {
    cfg.validate().stage("config")?;
    let grid_path = require(&cfg.grid, "grid").stage("config")?;
    if cfg.sample_grid.is_empty() {
        return Err(Error::InvalidParameter(
            "missing required setting 'sample_grid'".into(),
        ))
        .stage("config");
    }
    let out = require(&cfg.output, "output").stage("config")?.clone();
    let geometry = cfg.geometry().stage("config")?;

    fs::create_dir_all(&out)
        .map_err(|e| Error::io(&out, e))
        .stage("write")?;
    let mut meta = config_metadata(cfg, "retrieve");
    meta.write(&out.join(METADATA_FILE)).stage("write")?;

    with_workers(cfg.workers(), || -> Result<RetrieveSummary> {
        let refs = load_references(cfg)?;
        let grid = load_corrected(grid_path, &refs)?;
        let sample_only = match &cfg.sample_only {
            Some(p) => Some(load_corrected(p, &refs)?),
            None => None,
        };

        let opts = RetrieveOptions {
            period: cfg.period.unwrap_or_default(),
            kernel_size: cfg.kernel_size.unwrap_or_default(),
            kernel_range: match (cfg.k_min, cfg.k_max) {
                (None, None) => None,
                (lo, hi) => {
                    let min_k = cfg
                        .period
                        .and_then(|p| p.value().map(|p| p.ceil() as usize));
                    let lo = lo.or(min_k);
                    let hi = hi.or(lo.map(|l| 2 * l));
                    match (lo, hi) {
                        (Some(lo), Some(hi)) => Some(lo..=hi),
                        _ => None,
                    }
                }
            },
            geometry,
            max_rms: cfg.max_rms,
        };
        let params = choose_parameters(&grid, &opts)?;
        log::info!(
            "period {:.4} px ({}), kernel size {} ({})",
            params.period,
            params.period_source.as_str(),
            params.kernel_size,
            params.kernel_source.as_str()
        );
        meta.set("period", params.period);
        meta.set("period_source", params.period_source.as_str());
        meta.set("kernel_size", params.kernel_size);
        meta.set("kernel_size_source", params.kernel_source.as_str());
        meta.set("frames", cfg.sample_grid.len());

        let mut run_warnings = Vec::new();
        if geometry.is_none() {
            run_warnings
                .push("no odd/pixel_size given; angle maps skipped, strengths in px^2".to_string());
        }
        if params.period_source == ParamSource::Auto && params.period.fract().abs() > 1e-3 {
            run_warnings.push(format!(
                "non-integer period {:.4} px; period averaging uses {} px",
                params.period,
                params.period.round()
            ));
        }
        for w in &run_warnings {
            log::warn!("{w}");
        }
        let mut warnings = run_warnings.clone();

        let multi = cfg.sample_grid.len() > 1;
        let mut frame_dirs = Vec::new();
        for (n, frame_path) in cfg.sample_grid.iter().enumerate() {
            let mut frame = load_corrected(frame_path, &refs)?;
            if let Some(so) = &sample_only {
                frame = divide_sample_only(
                    &frame,
                    so,
                    cfg.division_threshold.unwrap_or(DEFAULT_DIVISION_THRESHOLD),
                )
                .stage("correct")?
                .0;
            }
            let result = retrieve_with_parameters(&grid, &frame, params, geometry, cfg.max_rms)?;
            let dir = if multi {
                out.join(format!("frame_{n:04}"))
            } else {
                out.clone()
            };

            let mut frame_warnings = run_warnings.clone();
            let (w, h) = grid.shape();
            let valid = result.solution.valid.count_valid();
            if valid * 2 < w * h {
                frame_warnings.push(format!("only {valid} of {} pixels are valid", w * h));
            }
            let negative = result
                .solution
                .sigma_minor_sq
                .data()
                .iter()
                .filter(|v| **v < 0.0)
                .count();
            if negative > 0 {
                frame_warnings.push(format!(
                    "{negative} pixels have a negative minor variance (visibility increase)"
                ));
            }

            let mut fm = meta.clone();
            fm.set("frame", n);
            fm.set("frame_input", path_text(frame_path));
            fm.set("max_rms", result.max_rms);
            fm.set(
                "max_rms_source",
                if cfg.max_rms.is_some() {
                    "user"
                } else {
                    "auto"
                },
            );
            set_unit_keys(&mut fm, geometry.is_some());
            fm.set("valid_pixels", valid);
            fm.set("warnings", frame_warnings.join("; "));
            fm.set("status", "complete");
            result
                .to_bundle(fm)
                .write(&dir, Some(&result.hsv))
                .stage("write")?;
            for w in &frame_warnings[run_warnings.len()..] {
                log::warn!("frame {n}: {w}");
                warnings.push(format!("frame {n}: {w}"));
            }
            frame_dirs.push(dir);
        }

        if multi {
            set_unit_keys(&mut meta, geometry.is_some());
            meta.set("warnings", warnings.join("; "));
            meta.set("status", "complete");
            meta.write(&out.join(METADATA_FILE)).stage("write")?;
        }
        Ok(RetrieveSummary {
            output: out.clone(),
            parameters: params,
            frame_dirs,
            warnings,
        })
    })?
}

fn set_unit_keys(m: &mut KeyValues, geometry: bool) {
    if geometry {
        m.set("angle_units", "rad^2");
        m.set("display_units", "urad");
        m.set("display_scale", MICRORADIANS_PER_RADIAN);
    } else {
        m.set("angle_units", "px^2");
        m.set("display_units", "px");
        m.set("display_scale", 1.0);
    }
}

/// `hsv`: re-render a bundle's HSV image with a new value scale.
pub fn run_hsv(cfg: &RunConfig) -> Result<f64> {
    let dir = require(&cfg.output, "output").stage("config")?;
    let mut bundle = Bundle::read(dir).stage("load")?;
    let (img, max_rms) = compose_hsv(
        &bundle.theta,
        &bundle.asy,
        &bundle.rms_sq,
        &bundle.valid,
        cfg.max_rms,
    )
    .stage("hsv")?;
    write_hsv(&dir.join(HSV_FILE), &img).stage("write")?;
    bundle.metadata.set("max_rms", max_rms);
    bundle.metadata.set(
        "max_rms_source",
        if cfg.max_rms.is_some() {
            "user"
        } else {
            "auto"
        },
    );
    bundle
        .metadata
        .write(&dir.join(METADATA_FILE))
        .stage("write")?;
    Ok(max_rms)
}

/// `roi-stats`: tabulate ROI statistics of a bundle, also saved as
/// `roi_stats.tsv` in the bundle.
pub fn run_roi_stats(cfg: &RunConfig) -> Result<String> {
    let dir = require(&cfg.output, "output").stage("config")?;
    if cfg.rois.is_empty() {
        return Err(Error::InvalidParameter("no ROIs given".into())).stage("config");
    }
    let rois: Vec<Roi> = cfg
        .rois
        .iter()
        .map(|s| s.parse())
        .collect::<Result<_>>()
        .stage("config")?;
    let bundle = Bundle::read(dir).stage("load")?;
    let table = format_roi_table(&roi_stats(&bundle, &rois).stage("roi")?);
    let path = dir.join("roi_stats.tsv");
    fs::write(&path, &table)
        .map_err(|e| Error::io(&path, e))
        .stage("write")?;
    Ok(table)
}

/// `period`: estimate the grid period of a grid-only image. Returns the
/// combined estimate and the per-axis values.
pub fn run_period(cfg: &RunConfig) -> Result<(f64, (f64, f64))> {
    let grid_path = require(&cfg.grid, "grid").stage("config")?;
    let refs = load_references(cfg)?;
    let grid = load_corrected(grid_path, &refs)?;
    let axes = estimate_axis_periods(&grid).stage("period")?;
    let p = estimate_grid_period(&grid).stage("period")?;
    Ok((p, axes))
}

/// Band directions used by the `stripes` synthesis pattern.
pub const STRIPE_DIRECTIONS: [f64; 4] = [
    0.0,
    std::f64::consts::FRAC_PI_4,
    std::f64::consts::FRAC_PI_2,
    3.0 * std::f64::consts::FRAC_PI_4,
];

/// `synth`: write a synthetic grid-only / sample-and-grid pair and the
/// ground-truth sample maps.
pub fn run_synth(cfg: &RunConfig) -> Result<PathBuf> {
    let out = require(&cfg.output, "output").stage("config")?.clone();
    let width = cfg.width.unwrap_or(256);
    let height = cfg.height.unwrap_or(256);
    let period = match cfg.period {
        None => 8.0,
        Some(AutoOr::Value(p)) => p,
        Some(AutoOr::Auto(_)) => {
            return Err(Error::InvalidParameter(
                "synthesis needs an explicit period".into(),
            ))
            .stage("config")
        }
    };
    let grid = GridParams::new(period, cfg.alpha.unwrap_or(0.2)).stage("config")?;
    let transmission = cfg.transmission.unwrap_or(1.0);
    let kernel = DarkFieldKernelParams::new(
        cfg.theta.unwrap_or(0.0),
        cfg.sigma_x.unwrap_or(0.0),
        cfg.sigma_y.unwrap_or(0.0),
    )
    .stage("config")?;
    let pattern = cfg.pattern.unwrap_or_default();
    let mut field = match pattern {
        SynthPattern::Uniform => SampleField::uniform(width, height, transmission, kernel),
        SynthPattern::Stripes => {
            oriented_stripes(
                width,
                height,
                &STRIPE_DIRECTIONS,
                kernel.sigma_y,
                kernel.sigma_x,
                transmission,
            )
            .stage("config")?
            .0
        }
    };
    if cfg.shift_x.is_some() || cfg.shift_y.is_some() {
        field = field.with_uniform_shift(cfg.shift_x.unwrap_or(0.0), cfg.shift_y.unwrap_or(0.0));
    }
    let noise = match cfg.counts {
        Some(c) => NoiseModel::Poisson {
            counts_per_unit_intensity: c,
        },
        None => NoiseModel::None,
    };
    let seed = cfg.seed.unwrap_or(0);

    fs::create_dir_all(&out)
        .map_err(|e| Error::io(&out, e))
        .stage("write")?;
    let mut meta = config_metadata(cfg, "synth");
    meta.write(&out.join(METADATA_FILE)).stage("write")?;

    let (ig, isg) = with_workers(cfg.workers(), || {
        if cfg.noisy_reference.unwrap_or(false) {
            synthesize_pair_noisy_reference(width, height, &grid, &field, &noise, seed)
        } else {
            synthesize_pair(width, height, &grid, &field, &noise, seed)
        }
    })?
    .stage("synthesize")?;

    let put = |name: &str, img: &Image, units: &str| {
        write_float_map(&out.join(format!("{name}.f32")), img, units, false).stage("write")
    };
    put("grid", &ig, "1")?;
    put("sample_grid", &isg, "1")?;
    put("truth_transmission", &field.transmission, "1")?;
    put("truth_theta", &field.theta, "rad")?;
    put("truth_sigma_x", &field.sigma_x, "px")?;
    put("truth_sigma_y", &field.sigma_y, "px")?;

    for (k, v) in [
        ("width", width.to_string()),
        ("height", height.to_string()),
        ("period", period.to_string()),
        ("alpha", grid.alpha.to_string()),
        ("pattern", pattern.to_string()),
        ("transmission", transmission.to_string()),
        ("theta", kernel.theta.to_string()),
        ("sigma_x", kernel.sigma_x.to_string()),
        ("sigma_y", kernel.sigma_y.to_string()),
        ("shift_x", cfg.shift_x.unwrap_or(0.0).to_string()),
        ("shift_y", cfg.shift_y.unwrap_or(0.0).to_string()),
        (
            "noise",
            match cfg.counts {
                Some(c) => format!("poisson:{c}"),
                None => "none".into(),
            },
        ),
        (
            "noisy_reference",
            cfg.noisy_reference.unwrap_or(false).to_string(),
        ),
        ("seed", seed.to_string()),
    ] {
        meta.set(k, v);
    }
    meta.set("status", "complete");
    meta.write(&out.join(METADATA_FILE)).stage("write")?;
    Ok(out)
}
