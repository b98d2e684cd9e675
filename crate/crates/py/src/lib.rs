//! Python module `pyctxvc`. Frames cross the boundary as flat planar RGB lists
//! (`3 * height * width` floats in [0, 1]).

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use ctxvc::entropy::{FreqTable, RangeDecoder, RangeEncoder};
use ctxvc::metrics::{self, BdFit, QualityMetric, RDCurve, RDPoint};
use ctxvc::pipeline::{container_stats, Codec};
use ctxvc::{BitstreamContainer, CodecConfig, CodecModel, Frame, RawSequence};
use ctxvc_autograd::ParamStore;

fn err(e: ctxvc::Error) -> PyErr {
    match e {
        ctxvc::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

pub fn frame_from_list(data: Vec<f32>, width: usize, height: usize) -> Result<Frame, ctxvc::Error> {
    if data.len() != 3 * width * height {
        return Err(ctxvc::Error::Shape(format!("{} values for a {width}x{height} RGB frame", data.len())));
    }
    Ok(Frame::new(width, height, data))
}

/// Encodes symbols with a table built from `probs` over `lo..lo + probs.len()`.
/// Table from unnormalised bin weights plus an escape weight.
fn table(lo: i64, probs: &[f64], tail: f64) -> Result<FreqTable, ctxvc::Error> {
    let total: f64 = probs.iter().sum::<f64>() + tail;
    if probs.is_empty() || probs.len() > 30000 {
        return Err(ctxvc::Error::InvalidArgument(format!("{} bins", probs.len())));
    }
    if probs.iter().chain([&tail]).any(|p| !p.is_finite() || *p < 0.0) || total <= 0.0 {
        return Err(ctxvc::Error::InvalidArgument("probabilities must be finite, non-negative and not all zero".into()));
    }
    let norm: Vec<f64> = probs.iter().map(|p| p / total).collect();
    Ok(FreqTable::from_probs(lo, &norm, tail / total))
}

pub fn encode_symbols(lo: i64, probs: &[f64], tail: f64, symbols: &[i64]) -> Result<Vec<u8>, ctxvc::Error> {
    let table = table(lo, probs, tail)?;
    let mut enc = RangeEncoder::new();
    for &s in symbols {
        table.encode(&mut enc, s)?;
    }
    Ok(enc.finish())
}

pub fn decode_symbols(lo: i64, probs: &[f64], tail: f64, bytes: &[u8], count: usize) -> Result<Vec<i64>, ctxvc::Error> {
    let table = table(lo, probs, tail)?;
    let mut dec = RangeDecoder::new(bytes);
    (0..count).map(|_| table.decode(&mut dec)).collect()
}

/// A model plus its weights.
#[pyclass(name = "Codec", module = "pyctxvc")]
pub struct PyCodec {
    model: CodecModel,
    store: ParamStore<f32>,
}

#[pymethods]
impl PyCodec {
    /// Random weights. `tiny` selects the narrow CPU configuration.
    #[new]
    #[pyo3(signature = (tiny = true, lambda_ = 2048.0, seed = 0))]
    fn new(tiny: bool, lambda_: f64, seed: u64) -> PyResult<Self> {
        let cfg = CodecConfig {
            lambda: lambda_,
            seed,
            ..if tiny { CodecConfig::tiny() } else { CodecConfig::default() }
        };
        let (model, store) = CodecModel::new(&cfg).map_err(err)?;
        Ok(PyCodec { model, store })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (model, store) = ctxvc::load_checkpoint(&path).map_err(err)?;
        Ok(PyCodec { model, store })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        ctxvc::save_checkpoint(&path, &self.model.config, &self.store).map_err(err)
    }

    #[getter]
    fn lambda_(&self) -> f64 {
        self.model.config.lambda
    }

    #[getter]
    fn config_json(&self) -> String {
        self.model.config.to_json()
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.store.num_trainable()
    }

    /// Returns the container bytes.
    #[pyo3(signature = (frames, width, height, gop = 10))]
    fn encode<'py>(&self, py: Python<'py>, frames: Vec<Vec<f32>>, width: usize, height: usize, gop: usize) -> PyResult<Bound<'py, PyBytes>> {
        let frames = frames.into_iter().map(|f| frame_from_list(f, width, height)).collect::<Result<Vec<_>, _>>().map_err(err)?;
        let seq = RawSequence::new(frames, 30.0).map_err(err)?;
        let codec = Codec::new(&self.model, &self.store);
        let bytes = py.allow_threads(|| codec.encode_sequence(&seq, gop).map(|e| e.container.to_bytes())).map_err(err)?;
        Ok(PyBytes::new_bound(py, &bytes))
    }

    /// Returns `(width, height, frames)`.
    fn decode(&self, py: Python<'_>, data: &[u8]) -> PyResult<(usize, usize, Vec<Vec<f32>>)> {
        let codec = Codec::new(&self.model, &self.store);
        let seq = py
            .allow_threads(|| BitstreamContainer::from_bytes(data).and_then(|c| codec.decode_sequence(&c)))
            .map_err(err)?;
        Ok((seq.width, seq.height, seq.frames.into_iter().map(|f| f.data).collect()))
    }

    fn __repr__(&self) -> String {
        format!("Codec(lambda={}, parameters={})", self.model.config.lambda, self.store.num_trainable())
    }
}

/// Per-frame statistics of a container, as a JSON string.
#[pyfunction]
fn stats(data: &[u8]) -> PyResult<String> {
    let c = BitstreamContainer::from_bytes(data).map_err(err)?;
    serde_json::to_string(&container_stats(&c)).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn psnr(a: Vec<f32>, b: Vec<f32>, width: usize, height: usize) -> PyResult<f64> {
    let (a, b) = (frame_from_list(a, width, height).map_err(err)?, frame_from_list(b, width, height).map_err(err)?);
    metrics::psnr(&a, &b).map_err(err)
}

/// Reduces the number of scales for small frames instead of failing.
#[pyfunction]
fn ms_ssim(a: Vec<f32>, b: Vec<f32>, width: usize, height: usize) -> PyResult<f64> {
    let (a, b) = (frame_from_list(a, width, height).map_err(err)?, frame_from_list(b, width, height).map_err(err)?);
    metrics::ms_ssim_with(&a, &b, true).map(|m| m.score).map_err(err)
}

/// Curves are lists of `(lambda, bpp, psnr, msssim)`.
#[pyfunction]
#[pyo3(signature = (anchor, test, metric = "psnr", fit = "pchip"))]
fn bd_rate(anchor: Vec<(f64, f64, f64, f64)>, test: Vec<(f64, f64, f64, f64)>, metric: &str, fit: &str) -> PyResult<f64> {
    let curve = |pts: Vec<(f64, f64, f64, f64)>| {
        RDCurve::new(pts.into_iter().map(|(lambda, bpp, psnr, msssim)| RDPoint { lambda, bpp, psnr, msssim }).collect())
            .map_err(err)
    };
    let metric = match metric {
        "psnr" => QualityMetric::Psnr,
        "msssim" | "ms-ssim" => QualityMetric::MsSsim,
        m => return Err(PyValueError::new_err(format!("unknown metric {m}"))),
    };
    let fit = match fit {
        "pchip" => BdFit::Pchip,
        "cubic" => BdFit::Cubic,
        f => return Err(PyValueError::new_err(format!("unknown fit {f}"))),
    };
    metrics::bd_rate(&curve(anchor)?, &curve(test)?, metric, fit).map_err(err)
}

/// Bits to code integer `x` under a discretized Gaussian.
#[pyfunction]
fn gaussian_bits(x: f64, mu: f64, sigma: f64) -> f64 {
    ctxvc::entropy::gaussian_bits(x, mu, sigma)
}

#[pyfunction(name = "encode_symbols")]
#[pyo3(signature = (probs, symbols, lo = 0, tail = 0.0))]
fn py_encode_symbols<'py>(py: Python<'py>, probs: Vec<f64>, symbols: Vec<i64>, lo: i64, tail: f64) -> PyResult<Bound<'py, PyBytes>> {
    let bytes = encode_symbols(lo, &probs, tail, &symbols).map_err(err)?;
    Ok(PyBytes::new_bound(py, &bytes))
}

#[pyfunction(name = "decode_symbols")]
#[pyo3(signature = (probs, data, count, lo = 0, tail = 0.0))]
fn py_decode_symbols(probs: Vec<f64>, data: &[u8], count: usize, lo: i64, tail: f64) -> PyResult<Vec<i64>> {
    decode_symbols(lo, &probs, tail, data, count).map_err(err)
}

/// Moving rectangle on a textured background, as flat frames.
#[pyfunction]
#[pyo3(signature = (n_frames, width, height, seed = 0))]
fn synthetic_clip(n_frames: usize, width: usize, height: usize, seed: u64) -> Vec<Vec<f32>> {
    ctxvc::training::synthetic_clip(n_frames, width, height, seed).into_iter().map(|f| f.data).collect()
}

#[pymodule]
fn pyctxvc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCodec>()?;
    m.add_function(wrap_pyfunction!(stats, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ms_ssim, m)?)?;
    m.add_function(wrap_pyfunction!(bd_rate, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_bits, m)?)?;
    m.add_function(wrap_pyfunction!(py_encode_symbols, m)?)?;
    m.add_function(wrap_pyfunction!(py_decode_symbols, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_clip, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
