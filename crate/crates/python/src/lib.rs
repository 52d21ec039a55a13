//! Python bindings. Images cross the boundary as lists of rows; invalid
//! pixels come back as NaN.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sgdf::forward::{self, DarkFieldKernelParams, Geometry, GridParams, NoiseModel, SampleField};
use sgdf::pipeline::{retrieve_images, AutoOr, RetrieveOptions};
use sgdf::{metrics, Image};

fn py_err(e: sgdf::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

type Rows = Vec<Vec<f64>>;

fn to_image(rows: Rows) -> PyResult<Image> {
    let height = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    if width == 0 || rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err(
            "image must be a non-empty list of equal-length rows",
        ));
    }
    Image::from_vec(width, height, rows.into_iter().flatten().collect()).map_err(py_err)
}

fn to_rows(img: &Image) -> Rows {
    (0..img.height()).map(|r| img.row(r).to_vec()).collect()
}

fn kernel(theta: f64, sigma_x: f64, sigma_y: f64) -> PyResult<DarkFieldKernelParams> {
    DarkFieldKernelParams::new(theta, sigma_x, sigma_y).map_err(py_err)
}

fn grid(period: f64, alpha: f64) -> PyResult<GridParams> {
    GridParams::new(period, alpha).map_err(py_err)
}

/// Normalized anisotropic Gaussian blur kernel at (x, y), in 1/px^2.
#[pyfunction]
fn eval_df_kernel(theta: f64, sigma_x: f64, sigma_y: f64, x: f64, y: f64) -> PyResult<f64> {
    forward::eval_df_kernel(&kernel(theta, sigma_x, sigma_y)?, x, y).map_err(py_err)
}

/// Grid-only intensity at model coordinates.
#[pyfunction]
fn eval_grid_image(period: f64, alpha: f64, x: f64, y: f64) -> PyResult<f64> {
    Ok(forward::eval_grid_image(&grid(period, alpha)?, x, y))
}

/// Sample-and-grid intensity at model coordinates.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn eval_sample_grid_image(
    period: f64,
    alpha: f64,
    theta: f64,
    sigma_x: f64,
    sigma_y: f64,
    transmission: f64,
    x: f64,
    y: f64,
) -> PyResult<f64> {
    Ok(forward::eval_sample_grid_image(
        &grid(period, alpha)?,
        &kernel(theta, sigma_x, sigma_y)?,
        transmission,
        x,
        y,
    ))
}

/// Grid-only and sample-and-grid images of a uniform sample. `counts`
/// enables Poisson noise on the sample-and-grid image.
#[pyfunction]
#[pyo3(signature = (width, height, period, alpha, transmission, theta, sigma_x, sigma_y, counts=None, seed=0))]
#[allow(clippy::too_many_arguments)]
fn synthesize_uniform(
    width: usize,
    height: usize,
    period: f64,
    alpha: f64,
    transmission: f64,
    theta: f64,
    sigma_x: f64,
    sigma_y: f64,
    counts: Option<f64>,
    seed: u64,
) -> PyResult<(Rows, Rows)> {
    let field = SampleField::uniform(
        width,
        height,
        transmission,
        kernel(theta, sigma_x, sigma_y)?,
    );
    let noise = match counts {
        Some(c) => NoiseModel::Poisson {
            counts_per_unit_intensity: c,
        },
        None => NoiseModel::None,
    };
    let (ig, isg) =
        forward::synthesize_pair(width, height, &grid(period, alpha)?, &field, &noise, seed)
            .map_err(py_err)?;
    Ok((to_rows(&ig), to_rows(&isg)))
}

/// Grid period in pixels from a grid-only image.
#[pyfunction]
fn estimate_grid_period(grid_only: Rows) -> PyResult<f64> {
    sgdf::estimate_grid_period(&to_image(grid_only)?).map_err(py_err)
}

/// Full retrieval. `period` and `kernel_size` default to automatic
/// selection; `odd` and `pixel_size` together switch strengths to rad^2.
/// Returns a dict of maps plus the parameters used.
#[pyfunction]
#[pyo3(signature = (grid_only, sample_grid, period=None, kernel_size=None, odd=None, pixel_size=None))]
fn retrieve<'py>(
    py: Python<'py>,
    grid_only: Rows,
    sample_grid: Rows,
    period: Option<f64>,
    kernel_size: Option<usize>,
    odd: Option<f64>,
    pixel_size: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let geometry = match (odd, pixel_size) {
        (Some(o), Some(px)) => Some(Geometry::new(o, px).map_err(py_err)?),
        (None, None) => None,
        _ => {
            return Err(PyValueError::new_err(
                "odd and pixel_size must be given together",
            ))
        }
    };
    let opts = RetrieveOptions {
        period: period.map_or_else(AutoOr::auto, AutoOr::Value),
        kernel_size: kernel_size.map_or_else(AutoOr::auto, AutoOr::Value),
        geometry,
        ..Default::default()
    };
    let (ig, isg) = (to_image(grid_only)?, to_image(sample_grid)?);
    let r = py
        .detach(|| retrieve_images(&ig, &isg, &opts))
        .map_err(py_err)?;

    let out = PyDict::new(py);
    out.set_item("period", r.parameters.period)?;
    out.set_item("kernel_size", r.parameters.kernel_size)?;
    out.set_item("transmission", to_rows(&r.solution.transmission))?;
    out.set_item("theta", to_rows(&r.solution.theta))?;
    out.set_item("sigma_major_sq", to_rows(&r.solution.sigma_major_sq))?;
    out.set_item("sigma_minor_sq", to_rows(&r.solution.sigma_minor_sq))?;
    if r.geometry.is_some() {
        out.set_item("theta_major_sq", to_rows(&r.angles.theta_major_sq))?;
        out.set_item("theta_minor_sq", to_rows(&r.angles.theta_minor_sq))?;
    }
    out.set_item("rms_sq", to_rows(&r.metrics.rms_sq))?;
    out.set_item("asy", to_rows(&r.metrics.asy))?;
    out.set_item("shift_x", to_rows(&r.shift_x))?;
    out.set_item("shift_y", to_rows(&r.shift_y))?;
    let valid: Vec<Vec<bool>> = (0..r.solution.valid.height())
        .map(|row| {
            (0..r.solution.valid.width())
                .map(|c| r.solution.valid.get(c, row))
                .collect()
        })
        .collect();
    out.set_item("valid", valid)?;
    Ok(out)
}

/// Signed mean square of the principal angles.
#[pyfunction]
fn theta_rms_sq(theta_major_sq: f64, theta_minor_sq: f64) -> f64 {
    metrics::theta_rms_sq(theta_major_sq, theta_minor_sq)
}

/// Scattering asymmetry in [0, 1].
#[pyfunction]
fn theta_asy(theta_major_sq: f64, theta_minor_sq: f64) -> f64 {
    metrics::theta_asy(theta_major_sq, theta_minor_sq)
}

#[pymodule]
fn sgdf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(eval_df_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(eval_grid_image, m)?)?;
    m.add_function(wrap_pyfunction!(eval_sample_grid_image, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize_uniform, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_grid_period, m)?)?;
    m.add_function(wrap_pyfunction!(retrieve, m)?)?;
    m.add_function(wrap_pyfunction!(theta_rms_sq, m)?)?;
    m.add_function(wrap_pyfunction!(theta_asy, m)?)?;
    Ok(())
}
