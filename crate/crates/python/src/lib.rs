use std::sync::Mutex;

use ndarray::Array2;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use semshap_core::analysis::{self, Ranking};
use semshap_core::bridge::RegionOracle;
use semshap_core::features::{self, FeatureSet, NmfConfig};
use semshap_core::game::{make_sentence_game, GameConfig};
use semshap_core::shapley::{self, Coalition, ExplainConfig, Game, SamplerKind};
use semshap_core::{Error, ErrorClass};

fn to_py(e: Error) -> PyErr {
    match e.class() {
        ErrorClass::Input => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn config(sampler: &str, budget: Option<usize>, seed: u64) -> PyResult<ExplainConfig> {
    let kind: SamplerKind = sampler.parse().map_err(to_py)?;
    let need = || budget.ok_or_else(|| PyValueError::new_err(format!("sampler `{kind}` needs a budget")));
    Ok(match kind {
        SamplerKind::Exact => ExplainConfig::exact(),
        SamplerKind::Priority => ExplainConfig::priority(need()?),
        SamplerKind::MonteCarlo => ExplainConfig::montecarlo(need()?, seed),
    })
}

/// Shapley attribution of a game's full-coalition value.
#[pyclass(name = "Explanation", module = "semshap", frozen)]
struct PyExplanation {
    inner: shapley::Explanation,
    #[pyo3(get)]
    caption: Option<String>,
}

#[pymethods]
impl PyExplanation {
    #[getter]
    fn phi0(&self) -> f64 {
        self.inner.phi0
    }

    #[getter]
    fn phi(&self) -> Vec<f64> {
        self.inner.phi.clone()
    }

    #[getter]
    fn v_full(&self) -> f64 {
        self.inner.v_full
    }

    #[getter]
    fn sampler(&self) -> String {
        self.inner.sampler.to_string()
    }

    #[getter]
    fn budget(&self) -> usize {
        self.inner.budget
    }

    #[getter]
    fn evaluated(&self) -> usize {
        self.inner.evaluated
    }

    #[getter]
    fn seed(&self) -> Option<u64> {
        self.inner.seed
    }

    fn efficiency_residual(&self) -> f64 {
        self.inner.efficiency_residual()
    }

    /// Features ordered by descending attribution.
    fn ranking(&self) -> Vec<usize> {
        Ranking::by_descending(&self.inner.phi).items().to_vec()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json_string(&self.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.players()
    }

    fn __repr__(&self) -> String {
        format!(
            "Explanation(players={}, sampler={}, evaluated={}, phi0={:.4}, v_full={:.4})",
            self.inner.players(),
            self.inner.sampler,
            self.inner.evaluated,
            self.inner.phi0,
            self.inner.v_full
        )
    }
}

fn serde_json_string(e: &shapley::Explanation) -> PyResult<String> {
    serde_json::to_string(e).map_err(|err| PyRuntimeError::new_err(err.to_string()))
}

/// Calls a Python function from worker threads and keeps the first exception.
struct PyGame {
    func: Py<PyAny>,
    players: usize,
    failure: Mutex<Option<PyErr>>,
}

impl Game for PyGame {
    fn value(&self, coalition: &Coalition) -> semshap_core::Result<f64> {
        Python::attach(|py| {
            let members: Vec<usize> = coalition.members().collect();
            let result = self.func.call1(py, (members,)).and_then(|v| v.extract::<f64>(py));
            result.map_err(|err| {
                let msg = format!("python game failed on {} of {} players", coalition.size(), self.players);
                self.failure.lock().unwrap().get_or_insert(err);
                Error::Input(msg)
            })
        })
    }
}

/// Kernel SHAP weight of a coalition of size `s` among `m` players.
#[pyfunction]
fn kernel_weight(m: usize, s: usize) -> PyResult<f64> {
    shapley::shapley_kernel_weight(m, s).map_err(to_py)
}

/// Proper coalitions in priority order as `(members, weight)` pairs.
#[pyfunction]
#[pyo3(signature = (m, budget=None))]
fn priority_coalitions(m: usize, budget: Option<usize>) -> PyResult<Vec<(Vec<usize>, f64)>> {
    let take = budget.unwrap_or(usize::MAX);
    let iter = shapley::enumerate_coalitions_priority(m).map_err(to_py)?;
    Ok(iter.take(take).map(|c| (c.coalition.members().collect(), c.weight)).collect())
}

/// Explains `game`, a callable mapping a sorted list of member indices to a float.
#[pyfunction]
#[pyo3(signature = (game, players, sampler="exact", budget=None, seed=0))]
fn explain(
    py: Python<'_>,
    game: Py<PyAny>,
    players: usize,
    sampler: &str,
    budget: Option<usize>,
    seed: u64,
) -> PyResult<PyExplanation> {
    let cfg = config(sampler, budget, seed)?;
    let game = PyGame { func: game, players, failure: Mutex::new(None) };
    let result = py.detach(|| shapley::explain(&game, players, &cfg));
    if let Some(err) = game.failure.lock().unwrap().take() {
        return Err(err);
    }
    Ok(PyExplanation { inner: result.map_err(to_py)?, caption: None })
}

/// Extrapolated rank-biased overlap of two rankings.
#[pyfunction]
#[pyo3(signature = (a, b, p=analysis::DEFAULT_RBO_P))]
fn rbo(a: Vec<usize>, b: Vec<usize>, p: f64) -> PyResult<f64> {
    let a = Ranking::new(a).map_err(to_py)?;
    let b = Ranking::new(b).map_err(to_py)?;
    analysis::rbo(&a, &b, p).map_err(to_py)
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Non-negative factorisation `v ~ w h`; returns `(w, h, errors)`.
#[pyfunction]
#[pyo3(signature = (v, k, max_iter=200, tol=1e-4, seed=0))]
fn nmf(v: Vec<Vec<f64>>, k: usize, max_iter: usize, tol: f64, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>)> {
    let cols = v.first().map_or(0, Vec::len);
    if v.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows differ in length"));
    }
    let flat: Vec<f64> = v.into_iter().flatten().collect();
    let v = Array2::from_shape_vec((flat.len() / cols.max(1), cols), flat)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let f = features::nmf(v.view(), k, &NmfConfig { max_iter, tol, seed }).map_err(to_py)?;
    Ok((rows(&f.w), rows(&f.h), f.errors))
}

fn mask_rows(m: &Array2<bool>) -> Vec<Vec<bool>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Grid superpixel masks for an image of `height` x `width` pixels.
#[pyfunction]
fn superpixel_masks(height: usize, width: usize, rows: usize, cols: usize) -> PyResult<Vec<Vec<Vec<bool>>>> {
    let fs = features::superpixel_masks((height, width), rows, cols).map_err(to_py)?;
    Ok(fs.masks().iter().map(|m| mask_rows(&m.binary)).collect())
}

/// Explains the caption a region oracle gives for an image, over a
/// superpixel grid.
#[pyfunction]
#[pyo3(signature = (oracle_config, image_path, rows=3, cols=4, sampler="exact", budget=None, seed=0))]
#[allow(clippy::too_many_arguments)]
fn explain_oracle(
    py: Python<'_>,
    oracle_config: &str,
    image_path: &str,
    rows: usize,
    cols: usize,
    sampler: &str,
    budget: Option<usize>,
    seed: u64,
) -> PyResult<PyExplanation> {
    let cfg = config(sampler, budget, seed)?;
    py.detach(|| -> semshap_core::Result<PyExplanation> {
        let oracle = RegionOracle::from_file(oracle_config.as_ref())?;
        let image = image::open(image_path)?.to_rgb8();
        let (w, h) = image.dimensions();
        let fs: FeatureSet = features::superpixel_masks((h as usize, w as usize), rows, cols)?;
        let game = make_sentence_game(&oracle, &image, &fs, &GameConfig::default(), None)?;
        let inner = shapley::explain(&game, fs.len(), &cfg)?;
        Ok(PyExplanation { inner, caption: Some(game.reference_caption().to_string()) })
    })
    .map_err(to_py)
}

#[pymodule]
#[pyo3(name = "semshap")]
fn pysemshap(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyExplanation>()?;
    m.add_function(wrap_pyfunction!(kernel_weight, m)?)?;
    m.add_function(wrap_pyfunction!(priority_coalitions, m)?)?;
    m.add_function(wrap_pyfunction!(explain, m)?)?;
    m.add_function(wrap_pyfunction!(rbo, m)?)?;
    m.add_function(wrap_pyfunction!(nmf, m)?)?;
    m.add_function(wrap_pyfunction!(superpixel_masks, m)?)?;
    m.add_function(wrap_pyfunction!(explain_oracle, m)?)?;
    Ok(())
}
