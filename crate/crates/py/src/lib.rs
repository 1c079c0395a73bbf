//! Python bindings: density estimation, the penalty and its gradient,
//! entropy, filter spectra, training and the gradient-check suite.

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

use dfreg_core::density::{self, Binning, EnergyConfig, WeightDensity};
use dfreg_core::gradcheck::{run_suite, SuiteConfig, SUITE_OPS};
use dfreg_core::harness::{self, TrainConfig};
use dfreg_core::spectral;
use dfreg_core::Tensor;

fn py_err(e: dfreg_core::Error) -> PyErr {
    if e.is_numeric() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn energy_config(alpha: f64, bins: usize, range_lo: f64, range_hi: f64, binning: &str) -> PyResult<EnergyConfig> {
    let binning = Binning::parse(binning)
        .ok_or_else(|| PyValueError::new_err(format!("unknown binning {binning:?}; expected soft_triangular or hard")))?;
    let c = EnergyConfig {
        alpha,
        num_bins: bins,
        range_lo,
        range_hi,
        binning,
        ..EnergyConfig::default()
    };
    c.validate().map_err(py_err)?;
    Ok(c)
}

fn density_from(rho: Vec<f64>) -> PyResult<WeightDensity> {
    WeightDensity::from_rho(rho, -1.0, 1.0).map_err(py_err)
}

/// Normalized bin masses of `weights`.
#[pyfunction]
#[pyo3(signature = (weights, bins=80, range_lo=-1.0, range_hi=1.0, binning="soft_triangular"))]
fn estimate_density(weights: Vec<f64>, bins: usize, range_lo: f64, range_hi: f64, binning: &str) -> PyResult<Vec<f64>> {
    let c = energy_config(0.0, bins, range_lo, range_hi, binning)?;
    Ok(density::estimate_density(&weights, &c).map_err(py_err)?.rho)
}

/// `alpha * sum(rho^2)` under soft binning and its gradient per weight.
#[pyfunction]
#[pyo3(signature = (weights, alpha=1e-3, bins=80, range_lo=-1.0, range_hi=1.0))]
fn dfreg_loss(weights: Vec<f64>, alpha: f64, bins: usize, range_lo: f64, range_hi: f64) -> PyResult<(f64, Vec<f64>)> {
    let c = energy_config(alpha, bins, range_lo, range_hi, "soft_triangular")?;
    let (e, g) = density::dfreg_loss(&weights, &c).map_err(py_err)?;
    Ok((e.dfreg_loss, g))
}

/// `sum(rho^2)` of a normalized density.
#[pyfunction]
fn interaction_energy(rho: Vec<f64>) -> PyResult<f64> {
    Ok(density::interaction_energy(&density_from(rho)?))
}

/// Natural-log Shannon entropy of a normalized density.
#[pyfunction]
fn shannon_entropy(rho: Vec<f64>) -> PyResult<f64> {
    Ok(density::shannon_entropy(&density_from(rho)?))
}

/// Unnormalized 2-D DFT magnitude of a row-major `rows x cols` kernel.
#[pyfunction]
fn dft2_magnitude(kernel: Vec<f64>, rows: usize, cols: usize) -> PyResult<Vec<f64>> {
    spectral::dft2_magnitude(&kernel, rows, cols).map_err(py_err)
}

/// Channel-averaged centered spectrum of a `(Cout, Cin, kh, kw)` kernel:
/// `(grid, rows, cols, dc_fraction, low_frequency_ratio)`.
#[pyfunction]
#[pyo3(signature = (values, shape, radius=1.0))]
fn filter_spectrum(values: Vec<f64>, shape: Vec<usize>, radius: f64) -> PyResult<(Vec<f64>, usize, usize, f64, f64)> {
    let t = Tensor::new(shape, values).map_err(py_err)?;
    let s = spectral::average_channel_spectrum("kernel", &t).map_err(py_err)?;
    let lfr = spectral::low_frequency_ratio(&s, radius);
    Ok((s.grid, s.rows, s.cols, s.dc_fraction, lfr))
}

/// Trains from a JSON config and returns the metrics CSV. Writes the run
/// directory when the config sets `out`.
#[pyfunction]
fn train(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let config: TrainConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(format!("config: {e}")))?;
    config.validate().map_err(py_err)?;
    let outcome = py.detach(|| harness::run_training(&config)).map_err(py_err)?;
    Ok(outcome.metrics_csv)
}

/// Runs the finite-difference suite; returns `(op, max_rel_error)` pairs.
#[pyfunction]
#[pyo3(signature = (ops=None, cases=100, h=1e-5, seed=0))]
fn gradcheck(py: Python<'_>, ops: Option<Vec<String>>, cases: usize, h: f64, seed: u64) -> PyResult<Vec<(String, f64)>> {
    let ops: Vec<&str> = match &ops {
        Some(list) => list.iter().map(String::as_str).collect(),
        None => SUITE_OPS.to_vec(),
    };
    if let Some(bad) = ops.iter().find(|op| !SUITE_OPS.contains(op)) {
        return Err(PyValueError::new_err(format!("unknown op {bad:?}; available: {}", SUITE_OPS.join(", "))));
    }
    let cfg = SuiteConfig { seed, cases, h };
    let results = py.detach(|| run_suite(&ops, &cfg)).map_err(py_err)?;
    Ok(results.into_iter().map(|r| (r.op.to_string(), r.max_rel_error)).collect())
}

#[pymodule]
fn dfreg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(estimate_density, m)?)?;
    m.add_function(wrap_pyfunction!(dfreg_loss, m)?)?;
    m.add_function(wrap_pyfunction!(interaction_energy, m)?)?;
    m.add_function(wrap_pyfunction!(shannon_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(dft2_magnitude, m)?)?;
    m.add_function(wrap_pyfunction!(filter_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add("SUITE_OPS", SUITE_OPS.to_vec())?;
    Ok(())
}
