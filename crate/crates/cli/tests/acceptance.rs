//! Acceptance gate: ten end-to-end checks covering gradient fidelity,
//! metric/beam/loss equivalence against independent oracles, convergence,
//! directional sequence-loss gains, and reproducibility. Each check prints
//! one PASS/FAIL line.
//!
//! The convergence checks train real models and take several minutes
//! combined; they share fixtures so nothing is trained twice, and all heavy
//! work is serialized through one lock so the timing budgets are honest.

use std::process::Command;
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use prefixboost::autodiff::{BoundParams, Params, Tape};
use prefixboost::beam::beam_search;
use prefixboost::data::{synth_transduce, Dataset, SynthConfig};
use prefixboost::loss::{mbr_loss, Objective};
use prefixboost::metrics::{cer_count, edit_distance, prefix_cer};
use prefixboost::model::{Model, ModelConfig};
use prefixboost::trainer::{evaluate, train, write_metrics_csv, EpochMetrics, TrainConfig};

fn report(criterion: usize, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {criterion:2} {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} {name}: {detail}");
}

/// Serializes every training-scale fixture build so wall-clock budgets are
/// measured without the other heavy fixtures competing for the CPU.
static HEAVY: Mutex<()> = Mutex::new(());

// ---------------------------------------------------------------------------
// criterion 1: gradient fidelity through the CLI gradient checker

#[test]
fn criterion_1_gradient_fidelity() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("gradcheck.toml");
    // Micro model under 2000 parameters; synth strings of 2-3 characters over
    // a 2-character alphabet give T <= 6 frames and 5 vocabulary ids. The
    // seeds pin a data/init point where every per-coordinate gradient is far
    // enough from zero that central differences at eps 3e-4 resolve it.
    std::fs::write(
        &config,
        r#"
[model]
enc_layers = 1
enc_units = 6
dec_layers = 1
dec_units = 6
att_dim = 6
att_conv_channels = 2
att_conv_width = 3
emb_dim = 4

[train]
seed = 0

[synth.train]
vocab_size = 2
len_min = 2
len_max = 3
n = 20
noise_sigma = 0.05
frames_per_char = 2
feat_dim = 4
seed = 4

[synth.dev]
vocab_size = 2
len_min = 2
len_max = 3
n = 8
noise_sigma = 0.05
frames_per_char = 2
feat_dim = 4
seed = 1004
"#,
    )
    .unwrap();

    let mut worst: f64 = 0.0;
    let mut slowest = Duration::ZERO;
    // The sequence objectives are checked in their lambda-combined form: the
    // harness adds the 0.001-weighted CE term before differentiating.
    for objective in ["CE", "MBR", "SM", "PAPB"] {
        let start = Instant::now();
        let out = Command::new(env!("CARGO_BIN_EXE_prefixboost"))
            .args(["gradcheck", "--objective", objective, "--eps", "3e-4", "--config"])
            .arg(&config)
            .output()
            .unwrap();
        let elapsed = start.elapsed();
        slowest = slowest.max(elapsed);
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(
            out.status.success(),
            "gradcheck {objective} failed: {stdout} {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let err: f64 = stdout
            .split("max relative error ")
            .nth(1)
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or(f64::INFINITY);
        worst = worst.max(err);
        assert!(elapsed <= Duration::from_secs(60), "{objective} took {elapsed:?}");
    }
    report(
        1,
        "gradient fidelity",
        worst <= 1e-4,
        &format!("max relative error {worst:.3e} over CE/MBR/SM/PAPB, slowest {slowest:.1?}"),
    );
}

// ---------------------------------------------------------------------------
// criterion 2: edit-distance equivalence with a brute-force oracle

/// Independent recursive edit distance (memoized three-way recursion).
fn oracle_distance(a: &[u8], b: &[u8]) -> usize {
    fn rec(a: &[u8], b: &[u8], i: usize, j: usize, memo: &mut Vec<Vec<Option<usize>>>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(v) = memo[i][j] {
            return v;
        }
        let sub = rec(a, b, i + 1, j + 1, memo) + usize::from(a[i] != b[j]);
        let del = rec(a, b, i + 1, j, memo) + 1;
        let ins = rec(a, b, i, j + 1, memo) + 1;
        let v = sub.min(del).min(ins);
        memo[i][j] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len() + 1]; a.len() + 1];
    rec(a, b, 0, 0, &mut memo)
}

fn check_pair(a: &[u8], b: &[u8]) -> bool {
    if edit_distance(a, b).total != oracle_distance(a, b) {
        return false;
    }
    let max_l = a.len().max(b.len()) + 1;
    (0..=max_l).all(|l| {
        let at = &a[..a.len().min(l)];
        let bt = &b[..b.len().min(l)];
        prefix_cer(a, b, l) == oracle_distance(at, bt)
    })
}

#[test]
fn criterion_2_edit_distance_oracle() {
    // every string over {a,b} with length <= 6
    let mut strings: Vec<Vec<u8>> = vec![vec![]];
    for len in 1..=6usize {
        for id in 0..(1usize << len) {
            strings.push((0..len).map(|k| b'a' + ((id >> k) & 1) as u8).collect());
        }
    }
    let mut pairs = 0usize;
    let mut ok = true;
    for a in &strings {
        for b in &strings {
            pairs += 1;
            ok &= check_pair(a, b);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(271);
    for _ in 0..1000 {
        let a: Vec<u8> = (0..rng.gen_range(0..=12)).map(|_| b'a' + rng.gen_range(0..5)).collect();
        let b: Vec<u8> = (0..rng.gen_range(0..=12)).map(|_| b'a' + rng.gen_range(0..5)).collect();
        pairs += 1;
        ok &= check_pair(&a, &b);
    }
    report(
        2,
        "edit-distance oracle equivalence",
        ok,
        &format!("{pairs} pairs, totals and all prefix truncations"),
    );
}

// ---------------------------------------------------------------------------
// criteria 3-5: exhaustive enumeration over a three-token vocabulary

struct Enumeration {
    model: Model,
    params: Params,
    features: Array2<f64>,
    /// (tokens, logp) from beam_search, rank order.
    beam: Vec<(Vec<usize>, f64)>,
    /// Same hypotheses via the teacher-forced chain, sorted by logp desc.
    exhaustive: Vec<(Vec<usize>, f64)>,
    beam_elapsed: Duration,
}

const ENUM_MAX_LEN: usize = 3;
const ENUM_BEAM: usize = 39;

fn enumeration() -> &'static Enumeration {
    static ENUM: OnceLock<Enumeration> = OnceLock::new();
    ENUM.get_or_init(|| {
        // vocabulary {<eos>, a, b}; <eos> doubles as the start symbol
        let model = Model::new(ModelConfig {
            input_dim: 3,
            vocab_size: 3,
            sos_id: 0,
            eos_id: 0,
            enc_layers: 1,
            enc_units: 5,
            dec_layers: 1,
            dec_units: 5,
            att_dim: 4,
            att_conv_channels: 2,
            att_conv_width: 3,
            emb_dim: 3,
            ..ModelConfig::default()
        })
        .unwrap();
        let params = model.init_params(31);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let features =
            Array2::from_shape_fn((4, 3), |_| rng.gen_range(-1.0..1.0));

        let start = Instant::now();
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &params);
        let (nbest, _) =
            beam_search(&model, &mut tape, &bound, &features, ENUM_BEAM, ENUM_MAX_LEN).unwrap();
        let beam_elapsed = start.elapsed();
        let beam: Vec<(Vec<usize>, f64)> =
            nbest.iter().map(|r| (r.tokens.clone(), r.logp_sum)).collect();

        // independent enumeration: every {a,b} string of length 0..=3, <eos>
        // appended, scored by the teacher-forced chain
        let mut exhaustive = Vec::new();
        for len in 0..=ENUM_MAX_LEN {
            for id in 0..(1usize << len) {
                let mut tokens: Vec<usize> =
                    (0..len).map(|k| 1 + ((id >> k) & 1)).collect();
                tokens.push(0);
                let mut t = Tape::new();
                let b = BoundParams::bind(&mut t, &params);
                let lp = model.sequence_log_prob(&mut t, &b, &features, &tokens).unwrap();
                exhaustive.push((tokens, t.scalar_value(lp)));
            }
        }
        exhaustive.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());

        Enumeration {
            model,
            params,
            features,
            beam,
            exhaustive,
            beam_elapsed,
        }
    })
}

#[test]
fn criterion_3_beam_exhaustiveness() {
    let e = enumeration();
    let mut ok = e.beam.len() == e.exhaustive.len();
    // ranked lists must agree; hypotheses within 1e-9 of each other are an
    // acceptable swap, anything further apart must match exactly in order
    for (got, want) in e.beam.iter().zip(&e.exhaustive) {
        ok &= (got.1 - want.1).abs() <= 1e-9;
        if got.0 != want.0 {
            let other = e.exhaustive.iter().find(|(t, _)| *t == got.0).unwrap();
            ok &= (other.1 - want.1).abs() <= 1e-9;
        }
    }
    ok &= e.beam_elapsed <= Duration::from_secs(5);
    report(
        3,
        "beam exhaustiveness",
        ok,
        &format!(
            "{} terminated hypotheses vs enumeration, beam {ENUM_BEAM}, {:.0?}",
            e.beam.len(),
            e.beam_elapsed
        ),
    );
}

#[test]
fn criterion_4_mbr_brute_force() {
    let e = enumeration();
    let reference = vec![1, 2, 0];

    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, &e.params);
    let (nbest, _) =
        beam_search(&e.model, &mut tape, &bound, &e.features, ENUM_BEAM, ENUM_MAX_LEN).unwrap();
    let loss = mbr_loss(&mut tape, &nbest, &reference).unwrap();
    let got = tape.scalar_value(loss);

    // analytic expectation: softmax over the enumerated log-probabilities
    // weighting each hypothesis's edit distance to the reference
    let max = e.exhaustive.iter().map(|(_, lp)| *lp).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = e.exhaustive.iter().map(|(_, lp)| (lp - max).exp()).sum();
    let want: f64 = e
        .exhaustive
        .iter()
        .map(|(tokens, lp)| (lp - max).exp() / z * cer_count(&reference, tokens) as f64)
        .sum();

    report(
        4,
        "MBR brute-force equivalence",
        (got - want).abs() <= 1e-9,
        &format!("loss {got:.12} vs expectation {want:.12}"),
    );
}

#[test]
fn criterion_5_probability_normalization() {
    let e = enumeration();
    let terminated: f64 = e.beam.iter().map(|(_, lp)| lp.exp()).sum();

    // residual: mass of the length-3 prefixes minus what their forced <eos>
    // termination retained. Prefix masses come from walking the decoding tree.
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, &e.params);
    let enc = e.model.encode(&mut tape, &bound, &e.features).unwrap();
    let mut frontier = vec![(e.model.init_context(&mut tape, enc.frames), 0.0f64)];
    for _depth in 0..ENUM_MAX_LEN {
        let mut next = Vec::new();
        for (ctx, logp_prefix) in frontier {
            let (new_ctx, _s, logp) = e.model.step(&mut tape, &bound, &ctx, &enc).unwrap();
            let lv = tape.value(logp);
            for tok in 1..3usize {
                let mut c = new_ctx.clone();
                c.y_prev = tok;
                next.push((c, logp_prefix + lv[[tok]]));
            }
        }
        frontier = next;
    }
    let live_mass: f64 = frontier.iter().map(|(_, lp)| lp.exp()).sum();
    let forced_mass: f64 = e
        .beam
        .iter()
        .filter(|(tokens, _)| tokens.len() == ENUM_MAX_LEN + 1)
        .map(|(_, lp)| lp.exp())
        .sum();
    let residual = live_mass - forced_mass;

    let total = terminated + residual;
    report(
        5,
        "probability normalization",
        (total - 1.0).abs() <= 1e-9,
        &format!("terminated {terminated:.12} + residual {residual:.12} = {total:.12}"),
    );
}

// ---------------------------------------------------------------------------
// criteria 6 + 10: CE convergence and bitwise reproducibility

fn crit6_synth(train: bool) -> Dataset {
    synth_transduce(&SynthConfig {
        vocab_size: 8,
        len_min: 3,
        len_max: 10,
        n: if train { 500 } else { 100 },
        noise_sigma: 0.1,
        frames_per_char: 3,
        feat_dim: 8,
        seed: if train { 100 } else { 1100 },
        embedding_seed: 0,
    })
    .unwrap()
}

fn crit6_model() -> Model {
    Model::new(ModelConfig {
        input_dim: 8,
        vocab_size: 11,
        sos_id: 0,
        eos_id: 1,
        enc_layers: 2,
        enc_units: 32,
        dec_layers: 1,
        dec_units: 32,
        att_dim: 32,
        att_conv_channels: 4,
        att_conv_width: 5,
        emb_dim: 8,
    })
    .unwrap()
}

fn crit6_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 30,
        batch_size: 10,
        // dev CER plateaus for the first ~10 epochs while attention locks in;
        // validation-driven decay would freeze the rate before learning starts
        lr_decay_factor: 1.0,
        record_wall_time: false,
        ..TrainConfig::ce_defaults()
    }
}

struct ConvergenceRun {
    best_dev_cer: f64,
    csv: String,
    rerun_csv: String,
    elapsed: Duration,
}

fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    write_metrics_csv(&path, metrics).unwrap();
    std::fs::read_to_string(&path).unwrap()
}

fn convergence() -> &'static ConvergenceRun {
    static RUN: OnceLock<ConvergenceRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let _serial = HEAVY.lock().unwrap();
        let train_set = crit6_synth(true);
        let dev_set = crit6_synth(false);
        let model = crit6_model();
        let config = crit6_train_config();

        let start = Instant::now();
        let outcome = train(&model, &config, &train_set, &dev_set, None).unwrap();
        let elapsed = start.elapsed();
        let best_dev_cer = outcome
            .metrics
            .iter()
            .map(|m| m.dev_cer)
            .fold(f64::INFINITY, f64::min);

        let rerun = train(&model, &config, &train_set, &dev_set, None).unwrap();
        ConvergenceRun {
            best_dev_cer,
            csv: metrics_csv(&outcome.metrics),
            rerun_csv: metrics_csv(&rerun.metrics),
            elapsed,
        }
    })
}

#[test]
fn criterion_6_ce_convergence() {
    let run = convergence();
    let pass = run.best_dev_cer <= 5.0 && run.elapsed <= Duration::from_secs(600);
    report(
        6,
        "CE convergence",
        pass,
        &format!("best dev CER {:.3}% in 30 epochs, {:.0?}", run.best_dev_cer, run.elapsed),
    );
}

#[test]
fn criterion_10_determinism() {
    let run = convergence();
    report(
        10,
        "determinism",
        run.csv == run.rerun_csv,
        &format!("{}-byte metrics CSV reproduced byte-identically", run.csv.len()),
    );
}

// ---------------------------------------------------------------------------
// criteria 7 + 9: directional sequence-loss gains on a harder task

const FT_SEEDS: [u64; 5] = [100, 101, 102, 103, 104];

fn crit7_synth(train: bool) -> Dataset {
    synth_transduce(&SynthConfig {
        vocab_size: 8,
        len_min: 3,
        len_max: 8,
        n: if train { 120 } else { 100 },
        noise_sigma: 0.4,
        frames_per_char: 3,
        feat_dim: 8,
        seed: if train { 200 } else { 1200 },
        embedding_seed: 0,
    })
    .unwrap()
}

struct FineTune {
    beam10_cer: f64,
    dev_curve: Vec<f64>,
}

struct SequenceRuns {
    baseline_beam10_cer: f64,
    papb: Vec<FineTune>,
    mbr: Vec<FineTune>,
    sm: Vec<FineTune>,
}

fn sequence_runs() -> &'static SequenceRuns {
    static RUNS: OnceLock<SequenceRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let _serial = HEAVY.lock().unwrap();
        let train_set = crit7_synth(true);
        let dev_set = crit7_synth(false);
        let model = Model::new(ModelConfig {
            input_dim: 8,
            vocab_size: 11,
            sos_id: 0,
            eos_id: 1,
            enc_layers: 1,
            enc_units: 24,
            dec_layers: 1,
            dec_units: 24,
            att_dim: 24,
            att_conv_channels: 4,
            att_conv_width: 5,
            emb_dim: 8,
        })
        .unwrap();

        // CE baseline: long pretrain on the noisy task lands in the target
        // 15-35% beam-10 regime
        let ce = TrainConfig {
            epochs: 80,
            batch_size: 10,
            lr_decay_factor: 1.0,
            seed: 2,
            record_wall_time: false,
            ..TrainConfig::ce_defaults()
        };
        let base = train(&model, &ce, &train_set, &dev_set, None).unwrap();
        let baseline_beam10_cer =
            evaluate(&model, &base.best_params, &dev_set, 10).unwrap().cer_percent;

        let fine_tune = |objective: Objective| -> Vec<FineTune> {
            FT_SEEDS
                .iter()
                .map(|&seed| {
                    let config = TrainConfig {
                        seed,
                        lr_decay_factor: 1.0,
                        record_wall_time: false,
                        ..TrainConfig::sequence_defaults(objective)
                    };
                    let outcome =
                        train(&model, &config, &train_set, &dev_set, Some(base.best_params.clone()))
                            .unwrap();
                    FineTune {
                        beam10_cer: evaluate(&model, &outcome.best_params, &dev_set, 10)
                            .unwrap()
                            .cer_percent,
                        dev_curve: outcome.metrics.iter().map(|m| m.dev_cer).collect(),
                    }
                })
                .collect()
        };

        SequenceRuns {
            baseline_beam10_cer,
            papb: fine_tune(Objective::Papb),
            mbr: fine_tune(Objective::Mbr),
            sm: fine_tune(Objective::Sm),
        }
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn criterion_7_directional_papb_gain() {
    let runs = sequence_runs();
    let base = runs.baseline_beam10_cer;
    let in_band = (15.0..=35.0).contains(&base);
    let wins = runs.papb.iter().filter(|ft| ft.beam10_cer < base).count();
    let papb_mean = mean(runs.papb.iter().map(|ft| ft.beam10_cer));
    let mbr_mean = mean(runs.mbr.iter().map(|ft| ft.beam10_cer));
    let pass = in_band && wins >= 4 && papb_mean <= mbr_mean;
    report(
        7,
        "directional PAPB gain",
        pass,
        &format!(
            "baseline {base:.2}%, PAPB below baseline {wins}/5, mean PAPB {papb_mean:.2}% vs MBR {mbr_mean:.2}%"
        ),
    );
}

#[test]
fn criterion_9_papb_curve_dominance() {
    let runs = sequence_runs();
    let tail_mean = |group: &[FineTune], e: usize| mean(group.iter().map(|ft| ft.dev_curve[e]));
    let epochs = runs.papb[0].dev_curve.len();
    let mut ok = true;
    let mut detail = String::new();
    for e in epochs - 3..epochs {
        let papb = tail_mean(&runs.papb, e);
        let mbr = tail_mean(&runs.mbr, e);
        let sm = tail_mean(&runs.sm, e);
        ok &= papb <= mbr && papb <= sm;
        detail.push_str(&format!("epoch {}: {papb:.2}/{mbr:.2}/{sm:.2} ", e + 1));
    }
    report(
        9,
        "PAPB curve at or below MBR and SM",
        ok,
        &format!("mean dev CER PAPB/MBR/SM over seeds, {}", detail.trim_end()),
    );
}

// ---------------------------------------------------------------------------
// criterion 8: scheduled sampling without any teacher forcing degrades

#[test]
fn criterion_8_scheduled_sampling_degradation() {
    let _serial = HEAVY.lock().unwrap();
    let train_set = crit6_synth(true);
    let dev_set = crit6_synth(false);
    let model = crit6_model();

    let run = |teacher_forcing_prob: f64, seed: u64| -> f64 {
        // long enough that scheduled sampling at probability 0.5 escapes the
        // early attention plateau while the fully-free-running model lags
        let config = TrainConfig {
            epochs: 20,
            seed,
            teacher_forcing_prob,
            ..crit6_train_config()
        };
        let outcome = train(&model, &config, &train_set, &dev_set, None).unwrap();
        outcome.metrics.iter().map(|m| m.dev_cer).fold(f64::INFINITY, f64::min)
    };

    let mut wins = 0usize;
    let mut detail = String::new();
    for &seed in &FT_SEEDS {
        let without = run(0.0, seed);
        let half = run(0.5, seed);
        if without > half {
            wins += 1;
        }
        detail.push_str(&format!("{without:.1}>{half:.1} "));
    }
    report(
        8,
        "scheduled-sampling degradation",
        wins >= 4,
        &format!("tf=0 worse than tf=0.5 in {wins}/5 seeds: {}", detail.trim_end()),
    );
}
