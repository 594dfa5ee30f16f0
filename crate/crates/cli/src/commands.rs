use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use prefixboost::autodiff::{finite_diff_check, BoundParams, Tape};
use prefixboost::beam::{beam_search, default_max_len};
use prefixboost::checkpoint;
use prefixboost::data::{load_jsonl, synth_transduce, Dataset, SynthConfig};
use prefixboost::loss::{
    ce_loss, combined_loss, mbr_loss, papb_loss, sm_loss, Objective,
};
use prefixboost::metrics::edit_distance;
use prefixboost::model::Model;
use prefixboost::trainer::{self, write_metrics_csv, TrainConfig};
use prefixboost::{Error, Result};

use crate::config::RunConfig;

/// Maximum parameter count accepted by the gradient checker.
const GRADCHECK_PARAM_LIMIT: usize = 2000;
/// Weight scale for gradient-check initialization. Larger than the training
/// default so attention-path gradients stay above finite-difference noise.
const GRADCHECK_INIT_SCALE: f64 = 0.5;
const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(Error::config(format!(
            "{what} not found: {}",
            path.display()
        )));
    }
    Ok(())
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

pub fn cmd_synth(config_path: &Path) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let train = synth_transduce(&config.synth.train)?;
    let dev = synth_transduce(&config.synth.dev)?;
    for path in [&config.data.train, &config.data.dev, &config.data.vocab] {
        create_parent(path)?;
    }
    prefixboost::data::write_jsonl(&config.data.train, &train)?;
    prefixboost::data::write_jsonl(&config.data.dev, &dev)?;
    train.vocab.save(&config.data.vocab)?;
    println!(
        "wrote {} train / {} dev utterances (vocab {}, feat dim {})",
        train.utterances.len(),
        dev.utterances.len(),
        train.vocab.size(),
        train.feat_dim
    );
    Ok(())
}

fn load_pair(config: &RunConfig) -> Result<(Dataset, Dataset)> {
    require_file(&config.data.train, "training set")?;
    require_file(&config.data.dev, "dev set")?;
    require_file(&config.data.vocab, "vocab file")?;
    let train = load_jsonl(&config.data.train, &config.data.vocab)?;
    let dev = load_jsonl(&config.data.dev, &config.data.vocab)?;
    if train.unk_mapped + dev.unk_mapped > 0 {
        eprintln!(
            "warning: {} characters mapped to <unk>",
            train.unk_mapped + dev.unk_mapped
        );
    }
    Ok((train, dev))
}

pub fn cmd_train(
    config_path: &Path,
    init: Option<&Path>,
    objective: Option<Objective>,
) -> Result<()> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(obj) = objective {
        config.train.objective = obj;
    }
    let (train_set, dev_set) = load_pair(&config)?;

    let init_params = match init {
        Some(path) => {
            require_file(path, "warm-start checkpoint")?;
            let (ckpt_config, params) = checkpoint::load(path)?;
            config.model = ckpt_config;
            Some(params)
        }
        None => {
            // architecture from config; data decides the interface dims
            config.model.input_dim = train_set.feat_dim;
            config.model.vocab_size = train_set.vocab.size();
            None
        }
    };
    if config.train.objective.is_sequence_level() && init_params.is_none() {
        return Err(Error::config(format!(
            "objective {} requires a warm start: pass --init with a pretrained checkpoint",
            config.train.objective
        )));
    }
    let model = Model::new(config.model.clone())?;

    std::fs::create_dir_all(&config.output_dir)?;
    std::fs::write(
        config.output_dir.join("effective_config.toml"),
        config.effective_toml()?,
    )?;

    let outcome = trainer::train(&model, &config.train, &train_set, &dev_set, init_params)?;
    checkpoint::save(
        &config.output_dir.join("checkpoint_best.ckpt"),
        &model.config,
        &outcome.best_params,
    )?;
    checkpoint::save(
        &config.output_dir.join("checkpoint_final.ckpt"),
        &model.config,
        &outcome.final_params,
    )?;
    write_metrics_csv(&config.output_dir.join("metrics.csv"), &outcome.metrics)?;
    for m in &outcome.metrics {
        println!(
            "epoch {:>3}  loss {:>10.4}  dev CER {:>7.3}%  dev WER {:>7.3}%  lr {:.6}",
            m.epoch, m.train_loss, m.dev_cer, m.dev_wer, m.lr_used
        );
    }
    let best = outcome
        .metrics
        .iter()
        .map(|m| m.dev_cer)
        .fold(f64::INFINITY, f64::min);
    println!("best dev CER {best:.3}% ({} epochs)", outcome.metrics.len());
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct DecodeEntry {
    text: String,
    logp: f64,
}

#[derive(Serialize, Deserialize)]
struct DecodeRecord {
    id: String,
    text: String,
    logp: f64,
    nbest: Vec<DecodeEntry>,
}

pub fn cmd_decode(
    checkpoint_path: &Path,
    data_path: &Path,
    vocab_path: &Path,
    beam: usize,
    out_path: &Path,
) -> Result<()> {
    require_file(checkpoint_path, "checkpoint")?;
    require_file(data_path, "dataset")?;
    require_file(vocab_path, "vocab file")?;
    if beam < 1 {
        return Err(Error::config("beam size must be at least 1"));
    }
    let (model_config, params) = checkpoint::load(checkpoint_path)?;
    let model = Model::new(model_config)?;
    let dataset = load_jsonl(data_path, vocab_path)?;
    create_parent(out_path)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(out_path)?);
    for utt in &dataset.utterances {
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &params);
        let max_len = default_max_len(utt.feat.nrows());
        let (nbest, _) = beam_search(&model, &mut tape, &bound, &utt.feat, beam, max_len)?;
        let record = DecodeRecord {
            id: utt.id.clone(),
            text: dataset.vocab.decode(&nbest[0].tokens),
            logp: nbest[0].logp_sum,
            nbest: nbest
                .iter()
                .map(|r| DecodeEntry {
                    text: dataset.vocab.decode(&r.tokens),
                    logp: r.logp_sum,
                })
                .collect(),
        };
        writeln!(w, "{}", serde_json::to_string(&record)?)?;
    }
    println!("decoded {} utterances (beam {beam})", dataset.utterances.len());
    Ok(())
}

#[derive(Deserialize)]
struct HypRecord {
    id: String,
    text: String,
}

fn words(text: &str) -> Vec<&str> {
    text.split(' ').filter(|w| !w.is_empty()).collect()
}

pub fn cmd_score(
    ref_path: &Path,
    vocab_path: &Path,
    hyp_path: &Path,
    out_path: Option<&Path>,
) -> Result<()> {
    require_file(ref_path, "reference dataset")?;
    require_file(vocab_path, "vocab file")?;
    require_file(hyp_path, "hypothesis file")?;
    let refs = load_jsonl(ref_path, vocab_path)?;
    let by_id: std::collections::HashMap<&str, &str> = refs
        .utterances
        .iter()
        .map(|u| (u.id.as_str(), u.text.as_str()))
        .collect();

    let text = std::fs::read_to_string(hyp_path)?;
    let mut rows = Vec::new();
    let mut char_edits = 0usize;
    let mut ref_chars = 0usize;
    let mut word_edits = 0usize;
    let mut ref_words = 0usize;
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let hyp: HypRecord = serde_json::from_str(line)
            .map_err(|e| Error::parse(i + 1, e.to_string()))?;
        let reference = *by_id
            .get(hyp.id.as_str())
            .ok_or_else(|| Error::config(format!("hypothesis id '{}' has no reference", hyp.id)))?;
        if !seen.insert(hyp.id.clone()) {
            return Err(Error::config(format!("duplicate hypothesis id '{}'", hyp.id)));
        }
        let rc: Vec<char> = reference.chars().collect();
        let hc: Vec<char> = hyp.text.chars().collect();
        let ce = edit_distance(&rc, &hc).total;
        let rw = words(reference);
        let hw = words(&hyp.text);
        let we = edit_distance(&rw, &hw).total;
        let rc_len = rc.len().max(1);
        let rw_len = rw.len().max(1);
        char_edits += ce;
        ref_chars += rc_len;
        word_edits += we;
        ref_words += rw_len;
        rows.push((hyp.id, ce, rc_len, we, rw_len));
    }
    for u in &refs.utterances {
        if !seen.contains(&u.id) {
            return Err(Error::config(format!("no hypothesis for reference id '{}'", u.id)));
        }
    }
    if rows.is_empty() {
        return Err(Error::config("hypothesis file is empty"));
    }
    let cer = 100.0 * char_edits as f64 / ref_chars as f64;
    let wer = 100.0 * word_edits as f64 / ref_words as f64;
    println!("CER% {cer:.4}");
    println!("WER% {wer:.4}");
    if let Some(out) = out_path {
        create_parent(out)?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(out)?);
        writeln!(w, "id,char_edits,ref_chars,word_edits,ref_words")?;
        for (id, ce, rc, we, rw) in &rows {
            writeln!(w, "{id},{ce},{rc},{we},{rw}")?;
        }
    }
    Ok(())
}

/// Whether the gradient check passed; the caller maps failure to exit 1.
pub fn cmd_gradcheck(
    config_path: &Path,
    objective: Objective,
    eps: f64,
    corrupt_grad: bool,
) -> Result<bool> {
    let config = RunConfig::load(config_path)?;
    let synth = SynthConfig {
        n: 1,
        ..config.synth.train.clone()
    };
    let data = synth_transduce(&synth)?;
    let utt = &data.utterances[0];

    let mut model_config = config.model.clone();
    model_config.input_dim = data.feat_dim;
    model_config.vocab_size = data.vocab.size();
    let model = Model::new(model_config)?;
    let params = model.init_params_scaled(config.train.seed, GRADCHECK_INIT_SCALE);
    if params.num_scalars() > GRADCHECK_PARAM_LIMIT {
        return Err(Error::config(format!(
            "gradient check limited to {GRADCHECK_PARAM_LIMIT} parameters, model has {}",
            params.num_scalars()
        )));
    }

    let train = &config.train;
    let loss_on = |tape: &mut Tape, bound: &BoundParams| -> Result<prefixboost::autodiff::Var> {
        match objective {
            Objective::Ce => {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                ce_loss(&model, tape, bound, &utt.feat, &utt.target, 1.0, &mut rng)
            }
            seq => {
                let max_len = default_max_len(utt.feat.nrows());
                let (nbest, trace) =
                    beam_search(&model, tape, bound, &utt.feat, train.n_tr, max_len)?;
                let seq_loss = match seq {
                    Objective::Mbr => mbr_loss(tape, &nbest, &utt.target)?,
                    Objective::Sm => sm_loss(tape, &nbest, &utt.target, train.alpha)?,
                    Objective::Papb => papb_loss(
                        tape,
                        &trace,
                        &nbest,
                        &utt.target,
                        train.alpha,
                        train.prefix_reference,
                        true,
                    )?,
                    Objective::Ce => unreachable!(),
                };
                if train.lambda > 0.0 {
                    let mut rng = ChaCha8Rng::seed_from_u64(0);
                    let ce = ce_loss(&model, tape, bound, &utt.feat, &utt.target, 1.0, &mut rng)?;
                    combined_loss(tape, seq_loss, ce, train.lambda)
                } else {
                    Ok(seq_loss)
                }
            }
        }
    };

    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, &params);
    let loss = loss_on(&mut tape, &bound)?;
    let grads = tape.backward(loss)?;
    let mut analytic = bound.gradients(&tape, &grads);
    if corrupt_grad {
        for g in analytic.iter_mut() {
            *g *= 2.0;
        }
    }
    let err = finite_diff_check(&params, &analytic, eps, |p| {
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, p);
        let loss = loss_on(&mut tape, &bound)?;
        Ok(tape.scalar_value(loss))
    })?;
    println!("objective {objective}: max relative error {err:.3e}");
    Ok(err <= GRADCHECK_TOLERANCE)
}

pub fn cmd_sweep(
    config_path: &Path,
    ntr: &[usize],
    nde: &[usize],
    init: Option<&Path>,
) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    if ntr.is_empty() || nde.is_empty() {
        return Err(Error::config("--ntr and --nde must be non-empty"));
    }
    let (train_set, dev_set) = load_pair(&config)?;

    let init_loaded = match init {
        Some(path) => {
            require_file(path, "warm-start checkpoint")?;
            Some(checkpoint::load(path)?)
        }
        None => None,
    };
    if config.train.objective.is_sequence_level() && init_loaded.is_none() {
        return Err(Error::config(format!(
            "objective {} requires a warm start: pass --init with a pretrained checkpoint",
            config.train.objective
        )));
    }
    let (model_config, init_params) = match init_loaded {
        Some((c, p)) => (c, Some(p)),
        None => {
            let mut c = config.model.clone();
            c.input_dim = train_set.feat_dim;
            c.vocab_size = train_set.vocab.size();
            (c, None)
        }
    };
    let model = Model::new(model_config)?;

    let mut checkpoints = Vec::with_capacity(ntr.len());
    for &n_tr in ntr {
        let train_config = TrainConfig {
            n_tr,
            ..config.train.clone()
        };
        let outcome =
            trainer::train(&model, &train_config, &train_set, &dev_set, init_params.clone())?;
        checkpoints.push((n_tr, outcome.best_params));
    }
    let table = trainer::sweep_beam(&model, &checkpoints, &dev_set, nde)?;

    print!("{:>8}", "n_tr\\n_de");
    for &n in nde {
        print!("{n:>10}");
    }
    println!();
    for (row, &n_tr) in table.iter().zip(ntr) {
        print!("{n_tr:>8}");
        for v in row {
            print!("{v:>10.3}");
        }
        println!();
    }

    std::fs::create_dir_all(&config.output_dir)?;
    let csv_path: PathBuf = config.output_dir.join("sweep.csv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    write!(w, "n_tr")?;
    for &n in nde {
        write!(w, ",n_de_{n}")?;
    }
    writeln!(w)?;
    for (row, &n_tr) in table.iter().zip(ntr) {
        write!(w, "{n_tr}")?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    println!("wrote {}", csv_path.display());
    Ok(())
}
