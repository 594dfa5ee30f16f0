//! Python bindings: edit-distance metrics, synthetic data generation, and a
//! model handle supporting training, decoding, scoring, and checkpoints.

use std::path::Path;

use ndarray::Array2;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use prefixboost::autodiff::{BoundParams, Params, Tape};
use prefixboost::beam::{beam_search, default_max_len};
use prefixboost::checkpoint;
use prefixboost::data::{load_jsonl, synth_transduce, write_jsonl, SynthConfig};
use prefixboost::metrics;
use prefixboost::model::{Model as CoreModel, ModelConfig};
use prefixboost::trainer::{self, TrainConfig};

fn err(e: prefixboost::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_features(feat: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    if feat.is_empty() {
        return Err(PyValueError::new_err("empty feature matrix"));
    }
    let d = feat[0].len();
    if feat.iter().any(|row| row.len() != d) {
        return Err(PyValueError::new_err("ragged feature matrix"));
    }
    let t = feat.len();
    let flat: Vec<f64> = feat.into_iter().flatten().collect();
    Array2::from_shape_vec((t, d), flat)
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// (total, substitutions, insertions, deletions) between two strings.
#[pyfunction]
fn edit_distance(reference: &str, hypothesis: &str) -> (usize, usize, usize, usize) {
    let r: Vec<char> = reference.chars().collect();
    let h: Vec<char> = hypothesis.chars().collect();
    let st = metrics::edit_distance(&r, &h);
    (st.total, st.substitutions, st.insertions, st.deletions)
}

#[pyfunction]
fn cer_count(reference: &str, hypothesis: &str) -> usize {
    let r: Vec<char> = reference.chars().collect();
    let h: Vec<char> = hypothesis.chars().collect();
    metrics::cer_count(&r, &h)
}

#[pyfunction]
fn prefix_cer(reference: &str, hypothesis: &str, l: usize) -> usize {
    let r: Vec<char> = reference.chars().collect();
    let h: Vec<char> = hypothesis.chars().collect();
    metrics::prefix_cer(&r, &h, l)
}

#[pyfunction]
fn wer(reference: &str, hypothesis: &str) -> f64 {
    metrics::wer(reference, hypothesis)
}

#[pyfunction]
fn logsumexp(values: Vec<f64>) -> PyResult<f64> {
    prefixboost::autodiff::logsumexp(&values).map_err(err)
}

/// Generate a synthetic dataset from a JSON config and write the
/// line-delimited records plus the vocab file.
#[pyfunction]
fn synth_to_files(config_json: &str, data_path: &str, vocab_path: &str) -> PyResult<usize> {
    let config: SynthConfig = serde_json::from_str(config_json).map_err(json_err)?;
    let dataset = synth_transduce(&config).map_err(err)?;
    write_jsonl(Path::new(data_path), &dataset).map_err(err)?;
    dataset.vocab.save(Path::new(vocab_path)).map_err(err)?;
    Ok(dataset.utterances.len())
}

/// An attention encoder-decoder plus its parameters.
#[pyclass]
struct Model {
    inner: CoreModel,
    params: Params,
}

#[pymethods]
impl Model {
    /// Build a freshly initialized model from a JSON architecture config.
    #[new]
    #[pyo3(signature = (config_json, seed = 0))]
    fn new(config_json: &str, seed: u64) -> PyResult<Self> {
        let config: ModelConfig = serde_json::from_str(config_json).map_err(json_err)?;
        let inner = CoreModel::new(config).map_err(err)?;
        let params = inner.init_params(seed);
        Ok(Model { inner, params })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (config, params) = checkpoint::load(Path::new(path)).map_err(err)?;
        let inner = CoreModel::new(config).map_err(err)?;
        Ok(Model { inner, params })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        checkpoint::save(Path::new(path), &self.inner.config, &self.params).map_err(err)
    }

    fn config_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.config).map_err(json_err)
    }

    fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// N-best decode of one feature matrix: list of (tokens, logp).
    #[pyo3(signature = (feat, beam = 10))]
    fn decode(&self, feat: Vec<Vec<f64>>, beam: usize) -> PyResult<Vec<(Vec<usize>, f64)>> {
        let feat = to_features(feat)?;
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &self.params);
        let max_len = default_max_len(feat.nrows());
        let (nbest, _) =
            beam_search(&self.inner, &mut tape, &bound, &feat, beam, max_len).map_err(err)?;
        Ok(nbest.into_iter().map(|r| (r.tokens, r.logp_sum)).collect())
    }

    /// Log-probability of a token sequence (must end with <eos>).
    fn sequence_log_prob(&self, feat: Vec<Vec<f64>>, tokens: Vec<usize>) -> PyResult<f64> {
        let feat = to_features(feat)?;
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &self.params);
        let lp = self
            .inner
            .sequence_log_prob(&mut tape, &bound, &feat, &tokens)
            .map_err(err)?;
        Ok(tape.scalar_value(lp))
    }

    /// Train from the current parameters; keeps the best-dev-CER weights.
    /// Returns per-epoch rows (epoch, train_loss, dev_cer, dev_wer, lr_used).
    fn train(
        &mut self,
        train_path: &str,
        dev_path: &str,
        vocab_path: &str,
        train_config_json: &str,
    ) -> PyResult<Vec<(usize, f64, f64, f64, f64)>> {
        let config: TrainConfig = serde_json::from_str(train_config_json).map_err(json_err)?;
        let train_set = load_jsonl(Path::new(train_path), Path::new(vocab_path)).map_err(err)?;
        let dev_set = load_jsonl(Path::new(dev_path), Path::new(vocab_path)).map_err(err)?;
        let outcome = trainer::train(
            &self.inner,
            &config,
            &train_set,
            &dev_set,
            Some(self.params.clone()),
        )
        .map_err(err)?;
        self.params = outcome.best_params;
        Ok(outcome
            .metrics
            .into_iter()
            .map(|m| (m.epoch, m.train_loss, m.dev_cer, m.dev_wer, m.lr_used))
            .collect())
    }

    /// Beam-decode a dataset and aggregate (cer_percent, wer_percent).
    #[pyo3(signature = (data_path, vocab_path, beam = 10))]
    fn evaluate(&self, data_path: &str, vocab_path: &str, beam: usize) -> PyResult<(f64, f64)> {
        let dataset = load_jsonl(Path::new(data_path), Path::new(vocab_path)).map_err(err)?;
        let report = trainer::evaluate(&self.inner, &self.params, &dataset, beam).map_err(err)?;
        Ok((report.cer_percent, report.wer_percent))
    }
}

#[pymodule]
fn prefixboost_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(edit_distance, m)?)?;
    m.add_function(wrap_pyfunction!(cer_count, m)?)?;
    m.add_function(wrap_pyfunction!(prefix_cer, m)?)?;
    m.add_function(wrap_pyfunction!(wer, m)?)?;
    m.add_function(wrap_pyfunction!(logsumexp, m)?)?;
    m.add_function(wrap_pyfunction!(synth_to_files, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
