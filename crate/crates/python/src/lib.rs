//! Python bindings: tensors, kernels, network descriptions, noise, dataset helpers.

use std::path::PathBuf;

use engine::arch::{Architecture, Network, NetworkOptions, NetworkSpec};
use engine::ops::{self, Padding};
use engine::{dataset, noise, trainer};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: engine::Error) -> PyErr {
    match e {
        engine::Error::Io(_) | engine::Error::NonFinite { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn padding(name: &str) -> PyResult<Padding> {
    match name {
        "same" => Ok(Padding::Same),
        "valid" => Ok(Padding::Valid),
        other => Err(PyValueError::new_err(format!("padding must be 'same' or 'valid', got {other:?}"))),
    }
}

/// Dense row-major f32 tensor.
#[pyclass(name = "Tensor", module = "ageres", from_py_object)]
#[derive(Clone)]
struct PyTensor {
    inner: engine::Tensor<f32>,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(data: Vec<f32>, shape: Vec<usize>) -> PyResult<Self> {
        Ok(Self {
            inner: engine::Tensor::new(shape, data).map_err(err)?,
        })
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> Self {
        Self {
            inner: engine::Tensor::zeros(&shape),
        }
    }

    #[staticmethod]
    fn full(shape: Vec<usize>, value: f32) -> Self {
        Self {
            inner: engine::Tensor::full(&shape, value),
        }
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    fn tolist(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn reshape(&self, shape: Vec<usize>) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.clone().reshape(&shape).map_err(err)?,
        })
    }

    fn sum(&self) -> f32 {
        self.inner.sum()
    }

    fn max_abs_diff(&self, other: &PyTensor) -> PyResult<f32> {
        self.inner.max_abs_diff(&other.inner).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

fn wrap(inner: engine::Tensor<f32>) -> PyTensor {
    PyTensor { inner }
}

#[pyfunction]
#[pyo3(signature = (input, kernel, bias=None, stride=(1, 1), padding="same"))]
fn conv2d(input: &PyTensor, kernel: &PyTensor, bias: Option<PyTensor>, stride: (usize, usize), padding: &str) -> PyResult<PyTensor> {
    let pad = self::padding(padding)?;
    ops::conv2d_forward(&input.inner, &kernel.inner, bias.as_ref().map(|b| &b.inner), stride, pad)
        .map(wrap)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (input, window=(2, 2), stride=2, padding="valid"))]
fn maxpool2d(input: &PyTensor, window: (usize, usize), stride: usize, padding: &str) -> PyResult<PyTensor> {
    let pad = self::padding(padding)?;
    ops::maxpool2d(&input.inner, window, stride, pad).map(|p| wrap(p.output)).map_err(err)
}

#[pyfunction]
fn dense(input: &PyTensor, weights: &PyTensor, bias: &PyTensor) -> PyResult<PyTensor> {
    ops::dense(&input.inner, &weights.inner, &bias.inner).map(wrap).map_err(err)
}

#[pyfunction]
fn relu(input: &PyTensor) -> PyTensor {
    wrap(ops::relu(&input.inner))
}

#[pyfunction]
fn add(a: &PyTensor, b: &PyTensor) -> PyResult<PyTensor> {
    ops::add(&a.inner, &b.inner).map(wrap).map_err(err)
}

#[pyfunction]
fn global_avg_pool(input: &PyTensor) -> PyResult<PyTensor> {
    ops::global_avg_pool(&input.inner).map(wrap).map_err(err)
}

/// Built network topology with shape bookkeeping.
#[pyclass(name = "Network", module = "ageres")]
struct PyNetwork {
    inner: Network,
}

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (arch="resnet50", input_size=64, batchnorm=true))]
    fn new(arch: &str, input_size: usize, batchnorm: bool) -> PyResult<Self> {
        let name: Architecture = arch.parse().map_err(err)?;
        let options = NetworkOptions {
            batchnorm,
            ..NetworkOptions::default()
        };
        let spec = NetworkSpec::build(name, (3, input_size, input_size), 1, options).map_err(err)?;
        Ok(Self {
            inner: Network::new(spec).map_err(err)?,
        })
    }

    #[getter]
    fn trainable_parameters(&self) -> usize {
        self.inner.trainable_parameters()
    }

    #[getter]
    fn non_trainable_parameters(&self) -> usize {
        self.inner.non_trainable_parameters()
    }

    fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.inner.param_shapes().to_vec()
    }

    fn manifest(&self) -> String {
        self.inner.manifest()
    }
}

/// Trained model restored from a checkpoint file.
#[pyclass(name = "Model", module = "ageres", unsendable)]
struct PyModel {
    inner: trainer::Model,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: trainer::load_checkpoint(&path).map_err(err)?.model,
        })
    }

    /// Ages for an N x 3 x H x W batch, as an N x 1 tensor.
    fn predict(&self, images: &PyTensor) -> PyResult<PyTensor> {
        self.inner.predict(images.inner.clone()).map(wrap).map_err(err)
    }
}

#[pyfunction]
#[pyo3(signature = (image, level_db, seed, stream=0, reference_std=noise::DEFAULT_REFERENCE_STD))]
fn inject_awgn(image: &PyTensor, level_db: f64, seed: u64, stream: u64, reference_std: f64) -> PyResult<PyTensor> {
    let spec = noise::NoiseSpec::new(level_db, reference_std, seed).map_err(err)?;
    noise::inject_awgn(&image.inner, &spec, stream).map(wrap).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (clean, noisy, reference_std=noise::DEFAULT_REFERENCE_STD))]
fn measure_noise_level(clean: &PyTensor, noisy: &PyTensor, reference_std: f64) -> PyResult<f64> {
    noise::measure_noise_level(&clean.inner, &noisy.inner, reference_std).map_err(err)
}

/// (age, gender, race) from a face-corpus file name.
#[pyfunction]
fn parse_filename(name: &str) -> PyResult<(u32, u8, u8)> {
    let l = dataset::parse_utkface_filename(name).map_err(err)?;
    Ok((l.age, l.gender, l.race))
}

#[pyfunction]
fn split(n: usize, seed: u64) -> PyResult<(Vec<usize>, Vec<usize>)> {
    dataset::split(n, seed).map_err(err)
}

#[pyfunction]
fn load_image(path: PathBuf, size: usize) -> PyResult<PyTensor> {
    dataset::load_and_normalize(&path, (size, size)).map(|s| wrap(s.image)).map_err(err)
}

/// Per-op (name, max relative error, passed) from the finite-difference suite.
#[pyfunction]
#[pyo3(signature = (cases=5, seed=0))]
fn gradcheck(cases: usize, seed: u64) -> PyResult<Vec<(String, f64, bool)>> {
    let reports = engine::autodiff::run_suite(cases, seed, None).map_err(err)?;
    Ok(reports.into_iter().map(|r| (r.op.to_string(), r.max_rel_error, r.passed)).collect())
}

/// Runs the command-line interface in-process and returns its exit code.
#[pyfunction]
fn cli(args: Vec<String>) -> i32 {
    engine::cli::run(std::iter::once("ageres".to_string()).chain(args))
}

#[pymodule]
fn ageres(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(conv2d, m)?)?;
    m.add_function(wrap_pyfunction!(maxpool2d, m)?)?;
    m.add_function(wrap_pyfunction!(dense, m)?)?;
    m.add_function(wrap_pyfunction!(relu, m)?)?;
    m.add_function(wrap_pyfunction!(add, m)?)?;
    m.add_function(wrap_pyfunction!(global_avg_pool, m)?)?;
    m.add_function(wrap_pyfunction!(inject_awgn, m)?)?;
    m.add_function(wrap_pyfunction!(measure_noise_level, m)?)?;
    m.add_function(wrap_pyfunction!(parse_filename, m)?)?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    m.add_function(wrap_pyfunction!(load_image, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(cli, m)?)?;
    m.add("DEFAULT_LEVELS_DB", noise::DEFAULT_LEVELS_DB.to_vec())?;
    Ok(())
}
