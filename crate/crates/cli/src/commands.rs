use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use spikekws::audio::read_wav;
use spikekws::checkpoint::Checkpoint;
use spikekws::datasets::{examples, synth_dataset, Manifest, Sample, Split};
use spikekws::decision::{
    decide_stream, run_all, summarize, sweep_thresholds, DecisionConfig, EvalReport, EvalSample, SampleRun,
    SWEEP_GRID,
};
use spikekws::energy::{count_ops, spike_rate_trace, EnergyReport, NetworkShape};
use spikekws::features::{FbankExtractor, FeatureMatrix, FeatureStats};
use spikekws::snn::Network;
use spikekws::training::{self, EpochMetrics};
use spikekws::{Error, Result};

use crate::config::RunConfig;
use crate::Global;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Args, Debug)]
pub struct DatasetGenArgs {
    /// Overrides `dataset.n_classes`.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Overrides `dataset.per_class`.
    #[arg(long)]
    pub per_class: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint to evaluate (default: `paths.checkpoint`, else `<out-dir>/checkpoint.json`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Confidence threshold C (overrides `decision.threshold_c`).
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Report every threshold of the sweep grid; C is chosen on the validation split.
    #[arg(long)]
    pub sweep: bool,
    /// Split to evaluate.
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
}

#[derive(Args, Debug)]
pub struct StreamArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub wav: PathBuf,
    /// Confidence threshold C (overrides `decision.threshold_c`).
    #[arg(long)]
    pub threshold: Option<f64>,
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split '{s}' (train, val, test)")),
    }
}

fn run_config(global: &Global) -> Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &global.out_dir {
        cfg.paths.out_dir = Some(dir.clone());
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl CsvOut {
    fn create(path: PathBuf, header: &[&str]) -> Result<Self> {
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = Self {
            writer: csv::Writer::from_writer(file),
            path,
        };
        out.row(header.iter().map(|s| s.to_string()))?;
        Ok(out)
    }

    fn row(&mut self, fields: impl IntoIterator<Item = String>) -> Result<()> {
        self.writer
            .write_record(fields)
            .and_then(|_| self.writer.flush().map_err(csv::Error::from))
            .map_err(|e| Error::io(&self.path, std::io::Error::other(e)))
    }
}

fn checkpoint_path(cfg: &RunConfig, flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| cfg.paths.checkpoint.clone())
        .unwrap_or_else(|| cfg.out_dir().join(CHECKPOINT_FILE))
}

fn decision_config(cfg: &RunConfig, threshold: Option<f64>) -> Result<DecisionConfig> {
    let mut decision = cfg.decision.clone();
    if let Some(c) = threshold {
        decision.threshold_c = c;
    }
    decision.validate()?;
    Ok(decision)
}

pub fn dataset_gen(global: &Global, args: &DatasetGenArgs) -> Result<()> {
    let mut cfg = run_config(global)?;
    if let Some(k) = args.classes {
        cfg.dataset.n_classes = k;
    }
    if let Some(n) = args.per_class {
        cfg.dataset.per_class = n;
    }
    let out = cfg.out_dir();
    let manifest = synth_dataset(&cfg.dataset, cfg.seed, &out)?;
    let summary = serde_json::json!({
        "manifest": out.join(spikekws::datasets::MANIFEST_FILE),
        "classes": manifest.classes.len(),
        "samples": manifest.samples.len(),
    });
    println!("{summary}");
    Ok(())
}

pub fn train(global: &Global) -> Result<()> {
    let mut cfg = run_config(global)?;
    let manifest = cfg.manifest()?;
    cfg.network.n_inputs = cfg.features.n_filters;
    cfg.network.n_classes = manifest.classes.len();
    cfg.train.seed = cfg.seed;
    cfg.validate()?;

    let out = cfg.out_dir();
    create_dir(&out)?;
    cfg.echo(&out)?;

    let extractor = FbankExtractor::new(cfg.features.clone())?;
    let train_samples: Vec<&Sample> = manifest.split(Split::Train).collect();
    let val_samples: Vec<&Sample> = manifest.split(Split::Val).collect();
    let mut train_set = examples(&manifest, &train_samples, &extractor)?;
    let mut val_set = examples(&manifest, &val_samples, &extractor)?;
    let stats = FeatureStats::fit(&train_set.iter().map(|e| &e.features).collect::<Vec<_>>())?;
    for ex in train_set.iter_mut().chain(val_set.iter_mut()) {
        stats.apply(&mut ex.features)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut net = Network::init(cfg.network.clone(), &mut rng)?;

    let mut csv = CsvOut::create(
        out.join("epochs.csv"),
        &["epoch", "train_loss", "train_acc", "val_acc_late", "val_acc_early", "mean_spike_rate"],
    )?;
    let mut csv_result = Ok(());
    let on_epoch = |m: &EpochMetrics| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  train {:.2}%  val Acc^T {:.2}%  Acc^t {:.2}%  rate {:.4}",
            m.epoch, m.train_loss, m.train_acc, m.val_acc_late, m.val_acc_early, m.mean_spike_rate
        );
        if csv_result.is_ok() {
            csv_result = csv.row([
                m.epoch.to_string(),
                m.train_loss.to_string(),
                m.train_acc.to_string(),
                m.val_acc_late.to_string(),
                m.val_acc_early.to_string(),
                m.mean_spike_rate.to_string(),
            ]);
        }
    };
    let history = training::train(&mut net, &train_set, &val_set, &cfg.train, &cfg.decision, on_epoch)?;
    csv_result?;

    let checkpoint = Checkpoint::new(net, manifest.classes.clone(), cfg.features.clone(), Some(stats))?;
    let path = out.join(CHECKPOINT_FILE);
    checkpoint.save(&path)?;
    let last = history.last().expect("at least one epoch");
    println!(
        "{}",
        serde_json::json!({
            "checkpoint": path,
            "epochs": history.len(),
            "train_loss": last.train_loss,
            "val_acc_late": last.val_acc_late,
            "val_acc_early": last.val_acc_early,
        })
    );
    Ok(())
}

fn check_classes(checkpoint: &Checkpoint, manifest: &Manifest) -> Result<()> {
    if checkpoint.classes.len() != manifest.classes.len() {
        return Err(Error::Config(format!(
            "checkpoint has {} classes, manifest has {}",
            checkpoint.classes.len(),
            manifest.classes.len()
        )));
    }
    if checkpoint.classes != manifest.classes {
        return Err(Error::Config("checkpoint and manifest class names differ".into()));
    }
    Ok(())
}

/// Full-length runs over one split, with keyword ends converted to frames.
fn split_runs<'m>(
    checkpoint: &Checkpoint,
    manifest: &'m Manifest,
    split: Split,
) -> Result<(Vec<&'m Sample>, Vec<SampleRun>)> {
    let extractor = FbankExtractor::new(checkpoint.features.clone())?;
    let samples: Vec<&Sample> = manifest.split(split).collect();
    if samples.is_empty() {
        return Err(Error::Dataset(format!("the {} split is empty", split.name())));
    }
    let mut examples = examples(manifest, &samples, &extractor)?;
    for ex in &mut examples {
        checkpoint.standardize(&mut ex.features)?;
    }
    let eval: Vec<EvalSample<'_>> = examples
        .iter()
        .zip(&samples)
        .map(|(ex, s)| EvalSample {
            features: &ex.features,
            label: ex.label,
            t_end: s
                .t_end
                .map(|sec| checkpoint.features.seconds_to_frame(sec, ex.features.n_frames())),
        })
        .collect();
    let runs = run_all(&checkpoint.network, &eval)?;
    Ok((samples, runs))
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    checkpoint: &'a Path,
    split: &'static str,
    /// Split the threshold was chosen on, when sweeping.
    selection_split: Option<&'static str>,
    selected: usize,
    reports: Vec<EvalReport>,
}

pub fn eval(global: &Global, args: &EvalArgs) -> Result<()> {
    let cfg = run_config(global)?;
    cfg.energy.validate()?;
    let ckpt_path = checkpoint_path(&cfg, &args.checkpoint);
    let checkpoint = Checkpoint::load(&ckpt_path)?;
    let manifest = cfg.manifest()?;
    check_classes(&checkpoint, &manifest)?;
    let net = &checkpoint.network;
    let decision = decision_config(&cfg, args.threshold)?;

    let (samples, runs) = split_runs(&checkpoint, &manifest, args.split)?;
    let (reports, selected, selection_split) = if args.sweep {
        let tuning = if args.split != Split::Val && manifest.split(Split::Val).next().is_some() {
            Split::Val
        } else {
            args.split
        };
        let tuning_runs = if tuning == args.split {
            None
        } else {
            Some(split_runs(&checkpoint, &manifest, tuning)?.1)
        };
        let chosen = sweep_thresholds(
            net,
            tuning_runs.as_deref().unwrap_or(&runs),
            &SWEEP_GRID,
            decision.min_timestep,
            &cfg.energy,
        )?
        .selected;
        let reports = sweep_thresholds(net, &runs, &SWEEP_GRID, decision.min_timestep, &cfg.energy)?.reports;
        (reports, chosen, Some(tuning.name()))
    } else {
        (vec![summarize(net, &runs, &decision, &cfg.energy)?.report], 0, None)
    };

    let chosen_cfg = DecisionConfig {
        threshold_c: reports[selected].threshold_c,
        ..decision
    };
    let outcomes = summarize(net, &runs, &chosen_cfg, &cfg.energy)?.outcomes;

    let out = cfg.out_dir();
    create_dir(&out)?;
    write_json(
        &out.join("eval.json"),
        &EvalOutput {
            checkpoint: &ckpt_path,
            split: args.split.name(),
            selection_split,
            selected,
            reports: reports.clone(),
        },
    )?;
    let mut csv = CsvOut::create(
        out.join("per_sample.csv"),
        &[
            "path",
            "label",
            "predicted_early",
            "predicted_late",
            "t_d",
            "t_end_frame",
            "cs_at_td",
            "energy_early",
            "energy_full",
            "spike_rate",
        ],
    )?;
    let names = &checkpoint.classes;
    for (s, o) in samples.iter().zip(&outcomes) {
        csv.row([
            s.audio_path.to_string_lossy().into_owned(),
            names[o.label].clone(),
            names[o.predicted_early].clone(),
            names[o.predicted_late].clone(),
            o.t_d.to_string(),
            o.t_end_frame.map(|f| f.to_string()).unwrap_or_default(),
            o.cs_at_td.to_string(),
            o.energy_early.to_string(),
            o.energy_full.to_string(),
            o.spike_rate.to_string(),
        ])?;
    }
    print_table(&reports, selected);
    Ok(())
}

fn print_table(reports: &[EvalReport], selected: usize) {
    println!(
        "{:>2} {:>5} {:>8} {:>8} {:>8} {:>8} {:>8} {:>11} {:>7}",
        "", "C", "Acc^T", "Acc^t", "t_d", "dt_d", "rate", "E(t_d) uJ", "E ratio"
    );
    for (i, r) in reports.iter().enumerate() {
        let delta = r.delta_td.map_or_else(|| "-".to_string(), |d| format!("{d:.2}"));
        println!(
            "{:>2} {:>5.2} {:>8.2} {:>8.2} {:>8.2} {:>8} {:>8.4} {:>11.4} {:>7.3}",
            if i == selected { "*" } else { "" },
            r.threshold_c,
            r.acc_late,
            r.acc_early,
            r.mean_td,
            delta,
            r.mean_spike_rate,
            r.mean_energy * 1e6,
            r.mean_energy_ratio
        );
    }
}

fn wav_features(checkpoint: &Checkpoint, wav: &Path) -> Result<FeatureMatrix> {
    let audio = read_wav(wav, checkpoint.features.sample_rate)?;
    checkpoint.featurize(&audio)
}

pub fn stream(global: &Global, args: &StreamArgs) -> Result<()> {
    let cfg = run_config(global)?;
    let checkpoint = Checkpoint::load(checkpoint_path(&cfg, &args.checkpoint))?;
    let decision = decision_config(&cfg, args.threshold)?;
    let features = wav_features(&checkpoint, &args.wav)?;
    let net = &checkpoint.network;
    let frames = features.frames.rows().into_iter().map(|r| r.to_vec());
    let outcome = decide_stream(net, frames, &decision, features.n_frames())?;

    if let Some(dir) = &global.out_dir {
        create_dir(dir)?;
        let rates = spike_rate_trace(&outcome.spike_record, &net.config.hidden_sizes);
        let mut csv = CsvOut::create(dir.join("trace.csv"), &["t", "cs", "spike_rate"])?;
        for (t, (cs, rate)) in outcome.confidence_trace.iter().zip(&rates).enumerate() {
            csv.row([(t + 1).to_string(), cs.to_string(), rate.to_string()])?;
        }
    }
    let result = serde_json::json!({
        "wav": args.wav,
        "predicted": checkpoint.classes[outcome.predicted],
        "predicted_index": outcome.predicted,
        "t_d": outcome.t_d,
        "n_frames": features.n_frames(),
        "early": outcome.early,
        "cs_at_td": outcome.confidence_trace.last(),
        "threshold_c": decision.threshold_c,
        "spikes_until_td": outcome.spike_counts_until_td,
    });
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{result}").map_err(|e| Error::io("<stdout>", e))
}

pub fn energy_report(global: &Global, args: &StreamArgs) -> Result<()> {
    let cfg = run_config(global)?;
    cfg.energy.validate()?;
    let checkpoint = Checkpoint::load(checkpoint_path(&cfg, &args.checkpoint))?;
    let decision = decision_config(&cfg, args.threshold)?;
    let features = wav_features(&checkpoint, &args.wav)?;
    let net = &checkpoint.network;
    let frames = features.frames.rows().into_iter().map(|r| r.to_vec());
    let outcome = decide_stream(net, frames, &decision, features.n_frames())?;

    let shape = NetworkShape::from(&net.config);
    let report = EnergyReport::new(&count_ops(&shape, &outcome.spike_record, outcome.t_d)?, &cfg.energy);
    let out = cfg.out_dir();
    create_dir(&out)?;
    write_json(&out.join("energy.json"), &report)?;
    let rates = spike_rate_trace(&outcome.spike_record, &net.config.hidden_sizes);
    let mut csv = CsvOut::create(out.join("spike_rate.csv"), &["t", "rate"])?;
    for (t, rate) in rates.iter().enumerate() {
        csv.row([(t + 1).to_string(), rate.to_string()])?;
    }
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}
