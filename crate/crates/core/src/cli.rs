//! Command-line interface: `gen-data`, `train`, `alerts`, `explain`,
//! `evaluate`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::alerts::{read_alerts_csv, select_alert_cohort, write_alerts_csv, AlertRule};
use crate::attribution::{Explanation, Method};
use crate::error::{Error, ErrorKind, Result};
use crate::events::{
    fit_feature_stats, parse_event_log, write_event_log, EventSequence, FeatureCatalog, Split, SECONDS_PER_HOUR,
};
use crate::explain::{check_methods, ExplainContext};
use crate::pipeline::{encode_corpus, examples, steps_by_episode};
use crate::seqmodel::{forward, train, Checkpoint, Mode, ModelConfig};
use crate::stats_attr::{fit_bins, BinTable, StatWeightConfig};
use crate::synth::{
    aki_windows, benchmark_row, generate_corpus, ground_truth_set, read_truth_jsonl, window_precision,
    write_results_csv, write_truth_jsonl, AkiLabeler, ScenarioConfig, TruthWindow, WindowConfig,
};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const TRUTH_FILE: &str = "truth.jsonl";
/// Windows explained under the alert source, in the truth format.
pub const ALERT_WINDOWS_FILE: &str = "alert_windows.jsonl";
pub const CATALOG_FILE: &str = "catalog.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const STATS_FILE: &str = "feature_stats.json";
pub const BINS_FILE: &str = "bins.json";
pub const REPORT_FILE: &str = "train_report.csv";
pub const ALERTS_FILE: &str = "alerts.csv";
pub const EXPLANATIONS_FILE: &str = "explanations.csv";
pub const RISK_FILE: &str = "risk_series.csv";
pub const RESULTS_FILE: &str = "results.csv";

#[derive(Debug, Parser)]
#[command(name = "driftscope", version, about = "Explain increases in predicted risk over irregular event streams")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Seed for every random choice.
    #[arg(long, global = true, env = "DRIFTSCOPE_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// JSON file with defaults; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic event log with ground-truth windows.
    GenData(GenDataArgs),
    /// Fit normalization, bins, and the recurrent risk model.
    Train(TrainArgs),
    /// Apply the alert rule to a trained model's risk series.
    Alerts(AlertsArgs),
    /// Explain risk increases with the chosen methods.
    Explain(ExplainArgs),
    /// Precision@k with bootstrap intervals per method.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub n_episodes: Option<usize>,
    #[arg(long)]
    pub deterioration_fraction: Option<f64>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    /// Window length before each positive checkpoint, in hours.
    #[arg(long)]
    pub lookback_hours: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub events: PathBuf,
    /// Feature catalog JSON (default: the synthetic scenario's catalog).
    #[arg(long)]
    pub catalog: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub hidden_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Smoothing coefficient.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Also train an attention head over hidden states.
    #[arg(long)]
    pub attention_head: bool,
    #[arg(long)]
    pub bins_per_feature: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RuleArgs {
    #[arg(long)]
    pub ratio_threshold: Option<f64>,
    #[arg(long)]
    pub floor: Option<f64>,
    #[arg(long)]
    pub anchor_hours: Option<f64>,
    #[arg(long)]
    pub horizon_hours: Option<f64>,
    #[arg(long)]
    pub interval_hours: Option<f64>,
    #[arg(long)]
    pub min_new_events: Option<usize>,
    /// Keep every alert instead of only the first per episode.
    #[arg(long)]
    pub all_alerts: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
    All,
}

impl SplitArg {
    fn keeps(self, split: Split) -> bool {
        match self {
            SplitArg::Train => split == Split::Train,
            SplitArg::Validation => split == Split::Validation,
            SplitArg::Test => split == Split::Test,
            SplitArg::All => true,
        }
    }
}

#[derive(Debug, Args)]
pub struct AlertsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub rule: RuleArgs,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WindowSource {
    /// Windows from a ground-truth file.
    Truth,
    /// Windows from the alert rule.
    Alerts,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Bin table for the statistics methods.
    #[arg(long)]
    pub bins: Option<PathBuf>,
    /// Comma-separated method names or `all`.
    #[arg(long)]
    pub methods: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Integration steps for temporal integrated gradients.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, value_enum, default_value = "truth")]
    pub windows: WindowSource,
    /// Ground-truth windows (window source `truth`).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Precomputed alerts CSV (window source `alerts`; default: recompute).
    #[arg(long)]
    pub alerts: Option<PathBuf>,
    #[command(flatten)]
    pub rule: RuleArgs,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub explanations: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Comma-separated list of k.
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Restrict to these methods (comma-separated or `all`).
    #[arg(long)]
    pub methods: Option<String>,
}

/// Optional JSON defaults; every section is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub scenario: Option<ScenarioConfig>,
    pub model: Option<ModelConfig>,
    pub alert_rule: Option<AlertRule>,
    pub stats: Option<StatWeightConfig>,
    pub windows: Option<WindowConfig>,
    pub methods: Option<String>,
    pub k: Option<Vec<usize>>,
    pub m: Option<usize>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::config("config", e.to_string()))
    }
}

/// Write to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn write_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_atomic(path, &buf)
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn read_json(path: &Path) -> Result<serde_json::Value> {
    Ok(serde_json::from_reader(open(path)?)?)
}

fn load_catalog(path: Option<&Path>, scenario: &ScenarioConfig) -> Result<FeatureCatalog> {
    match path {
        Some(p) => Ok(serde_json::from_reader(open(p)?)?),
        None => scenario.catalog(),
    }
}

fn load_events(data: &DataArgs, scenario: &ScenarioConfig) -> Result<(FeatureCatalog, Vec<EventSequence>)> {
    let catalog = load_catalog(data.catalog.as_deref(), scenario)?;
    let corpus = parse_event_log(open(&data.events)?, &catalog)?;
    Ok((catalog, corpus))
}

fn rule_from(args: &RuleArgs, file: &FileConfig) -> Result<AlertRule> {
    let mut rule = file.alert_rule.unwrap_or_default();
    let h = SECONDS_PER_HOUR;
    if let Some(v) = args.ratio_threshold {
        rule.ratio_threshold = v;
    }
    if let Some(v) = args.floor {
        rule.floor = v;
    }
    if let Some(v) = args.anchor_hours {
        rule.anchor_time = v * h;
    }
    if let Some(v) = args.horizon_hours {
        rule.horizon = v * h;
    }
    if let Some(v) = args.interval_hours {
        rule.check_interval = v * h;
    }
    if let Some(v) = args.min_new_events {
        rule.min_new_events = v;
    }
    if args.all_alerts {
        rule.first_alert_only = false;
    }
    rule.validate()?;
    Ok(rule)
}

struct Runner {
    seed: u64,
    out_dir: PathBuf,
    file: FileConfig,
}

impl Runner {
    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn scenario(&self) -> ScenarioConfig {
        let mut s = self.file.scenario.clone().unwrap_or_default();
        s.seed = self.seed;
        s
    }

    fn gen_data(&self, args: &GenDataArgs) -> Result<String> {
        let mut scenario = self.scenario();
        if let Some(v) = args.n_episodes {
            scenario.n_episodes = v;
        }
        if let Some(v) = args.deterioration_fraction {
            scenario.deterioration_fraction = v;
        }
        if let Some(v) = args.train_fraction {
            scenario.train_fraction = v;
        }
        if let Some(v) = args.validation_fraction {
            scenario.validation_fraction = v;
        }
        let mut windows = self.file.windows.unwrap_or_default();
        if let Some(v) = args.lookback_hours {
            windows.lookback_s = v * SECONDS_PER_HOUR;
        }
        scenario.validate()?;
        let catalog = scenario.catalog()?;
        let corpus = generate_corpus(&scenario)?;
        let test: Vec<EventSequence> = corpus.iter().filter(|s| s.split == Split::Test).cloned().collect();
        let truth = aki_windows(&test, &catalog, &windows)?;

        write_with(&self.out(EVENTS_FILE), |b| write_event_log(b, &corpus, &catalog))?;
        write_with(&self.out(TRUTH_FILE), |b| write_truth_jsonl(b, &truth))?;
        write_atomic(&self.out(CATALOG_FILE), &json_bytes(&catalog)?)?;
        let positive = corpus.iter().filter(|s| s.outcome).count();
        Ok(format!("episodes: {}\npositive: {positive}\ntruth windows: {}\n", corpus.len(), truth.len()))
    }

    fn train(&self, args: &TrainArgs) -> Result<String> {
        let (catalog, corpus) = load_events(&args.data, &self.scenario())?;
        let mut config = self.file.model.clone().unwrap_or_default();
        config.seed = self.seed;
        if let Some(v) = args.hidden_size {
            config.hidden_size = v;
        }
        if let Some(v) = args.learning_rate {
            config.learning_rate = v;
        }
        if let Some(v) = args.batch_size {
            config.batch_size = v;
        }
        if let Some(v) = args.max_epochs {
            config.max_epochs = v;
        }
        if let Some(v) = args.eta {
            config.eta = v;
        }
        if args.attention_head {
            config.attention_head = true;
        }
        config.validate()?;
        let mut stat_config = self.file.stats.unwrap_or_default();
        if let Some(v) = args.bins_per_feature {
            stat_config.bins_per_feature = v;
        }
        stat_config.validate()?;

        let stats = fit_feature_stats(&corpus, &catalog)?;
        let bins = fit_bins(&corpus, catalog.len(), &stat_config)?;
        let steps = encode_corpus(&corpus, &catalog, &stats)?;
        let train_set = examples(&corpus, &steps, Split::Train);
        let validation = examples(&corpus, &steps, Split::Validation);
        let (params, report) = train(&train_set, &validation, &config)?;

        let checkpoint = Checkpoint::new(&catalog, &stats, &config, params);
        write_atomic(&self.out(CHECKPOINT_FILE), &checkpoint.to_json_bytes())?;
        write_atomic(&self.out(STATS_FILE), &json_bytes(&stats.to_json(&catalog))?)?;
        write_atomic(&self.out(BINS_FILE), &json_bytes(&bins.to_json(&catalog))?)?;
        write_with(&self.out(REPORT_FILE), |b| {
            let mut w = csv::Writer::from_writer(b);
            w.write_record(["epoch", "train_loss", "val_loss", "val_auroc"])?;
            for e in &report.epochs {
                w.write_record([
                    e.epoch.to_string(),
                    e.train_loss.to_string(),
                    e.val_loss.to_string(),
                    e.val_auroc.to_string(),
                ])?;
            }
            w.flush().map_err(|e| Error::io(REPORT_FILE, e))
        })?;
        let last = report.epochs.last().expect("epoch 0 row");
        Ok(format!(
            "epochs: {}\nbest epoch: {}\nvalidation loss: {:.6}\nvalidation auroc: {:.6}\n",
            report.epochs.len() - 1,
            report.best_epoch,
            report.epochs[report.best_epoch].val_loss,
            last.val_auroc
        ))
    }

    fn model(&self, data: &DataArgs, checkpoint: &Path) -> Result<(FeatureCatalog, Vec<EventSequence>, Checkpoint)> {
        let (catalog, corpus) = load_events(data, &self.scenario())?;
        let ck = Checkpoint::load(checkpoint, Some(&catalog))?;
        Ok((catalog, corpus, ck))
    }

    fn alerts(&self, args: &AlertsArgs) -> Result<String> {
        let rule = rule_from(&args.rule, &self.file)?;
        let (catalog, corpus, ck) = self.model(&args.data, &args.checkpoint)?;
        let corpus: Vec<EventSequence> = corpus.into_iter().filter(|s| args.split.keeps(s.split)).collect();
        let cohort = compute_alerts(&catalog, &corpus, &ck, &rule)?;
        write_with(&self.out(ALERTS_FILE), |b| write_alerts_csv(b, &cohort))?;
        Ok(format!("episodes: {}\nalerts: {}\n", corpus.len(), cohort.len()))
    }

    fn explain(&self, args: &ExplainArgs) -> Result<String> {
        let methods = Method::parse_list(args.methods.as_deref().or(self.file.methods.as_deref()).unwrap_or("all"))?;
        let k = args.k.or(self.file.k.as_ref().and_then(|k| k.iter().max().copied())).unwrap_or(3);
        let m = args.m.or(self.file.m).unwrap_or(64);
        if k == 0 {
            return Err(Error::config("k", "must be positive"));
        }
        if m == 0 {
            return Err(Error::config("m", "must be positive"));
        }
        let (catalog, corpus, ck) = self.model(&args.data, &args.checkpoint)?;
        let bins = match &args.bins {
            Some(p) => Some(BinTable::from_json(&read_json(p)?, &catalog)?),
            None => None,
        };
        check_methods(&methods, &ck.params, bins.as_ref())?;

        let corpus: Vec<EventSequence> = corpus.into_iter().filter(|s| args.split.keeps(s.split)).collect();
        let windows: Vec<TruthWindow> = match args.windows {
            WindowSource::Truth => {
                let path =
                    args.truth.as_ref().ok_or_else(|| Error::config("truth", "window source `truth` needs --truth"))?;
                read_truth_jsonl(open(path)?)?
            }
            WindowSource::Alerts => {
                let rule = rule_from(&args.rule, &self.file)?;
                let cohort = match &args.alerts {
                    Some(p) => read_alerts_csv(open(p)?)?,
                    None => compute_alerts(&catalog, &corpus, &ck, &rule)?,
                };
                let labeler = AkiLabeler::from_catalog(&catalog).ok();
                let by_id: HashMap<&str, &EventSequence> = corpus.iter().map(|s| (s.episode_id.as_str(), s)).collect();
                cohort
                    .iter()
                    .map(|a| {
                        let seq = by_id
                            .get(a.episode_id.as_str())
                            .ok_or_else(|| Error::Empty(format!("no events for episode `{}`", a.episode_id)))?;
                        let truth = match &labeler {
                            Some(l) => ground_truth_set(seq, a.t0, a.t1, &l.relevant_features(), &catalog)?,
                            None => Vec::new(),
                        };
                        Ok(TruthWindow {
                            episode: a.episode_id.clone(),
                            t0: a.t0,
                            t1: a.t1,
                            checkpoint_s: Some(a.t1_time),
                            truth,
                        })
                    })
                    .collect::<Result<_>>()?
            }
        };

        let stats = ck.stats()?;
        let steps = steps_by_episode(&corpus, encode_corpus(&corpus, &catalog, &stats)?);
        let ctx = ExplainContext {
            params: &ck.params,
            bins: bins.as_ref(),
            stat_config: self.file.stats.unwrap_or_default(),
            m,
            seed: self.seed,
            reference: Default::default(),
        };

        use rayon::prelude::*;
        let explained: Vec<Vec<(Method, Explanation)>> = windows
            .par_iter()
            .map(|w| {
                let s = steps
                    .get(&w.episode)
                    .ok_or_else(|| Error::Empty(format!("no events for episode `{}`", w.episode)))?;
                methods
                    .iter()
                    .map(|&method| {
                        let e = ctx.explain(s, &w.window(), method, k)?;
                        debug_assert!(e.is_valid(w.t0, w.t1));
                        Ok((method, e))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;

        let mut expl_buf = Vec::new();
        {
            let mut wtr = csv::Writer::from_writer(&mut expl_buf);
            wtr.write_record(["episode", "method", "rank", "step", "time_s", "feature", "raw_value", "weight"])?;
            for (w, per_method) in windows.iter().zip(&explained) {
                for (method, e) in per_method {
                    for (rank, entry) in e.entries.iter().enumerate() {
                        wtr.write_record([
                            w.episode.clone(),
                            method.as_str().to_string(),
                            (rank + 1).to_string(),
                            entry.step.to_string(),
                            entry.time.to_string(),
                            catalog.id(entry.feature).to_string(),
                            entry.raw_value.to_string(),
                            entry.weight.to_string(),
                        ])?;
                    }
                }
            }
            wtr.flush().map_err(|e| Error::io(EXPLANATIONS_FILE, e))?;
        }
        let rows = read_explanations(&expl_buf[..])?;
        validate_explanations(&rows, &windows, &steps, &catalog, k)?;

        let mut risk_buf = Vec::new();
        {
            let mut wtr = csv::Writer::from_writer(&mut risk_buf);
            wtr.write_record(["episode", "step", "time_s", "hours", "p"])?;
            for w in &windows {
                let s = &steps[&w.episode];
                let (risk, _) = forward(&ck.params, s, Mode::Eval)?;
                let reference = s.step_time[w.t1 - 1];
                for t in 1..=s.len() {
                    wtr.write_record([
                        w.episode.clone(),
                        t.to_string(),
                        s.step_time[t - 1].to_string(),
                        ((s.step_time[t - 1] - reference) / SECONDS_PER_HOUR).to_string(),
                        risk.p[t - 1].to_string(),
                    ])?;
                }
            }
            wtr.flush().map_err(|e| Error::io(RISK_FILE, e))?;
        }

        write_atomic(&self.out(EXPLANATIONS_FILE), &expl_buf)?;
        write_atomic(&self.out(RISK_FILE), &risk_buf)?;
        if args.windows == WindowSource::Alerts {
            write_with(&self.out(ALERT_WINDOWS_FILE), |b| write_truth_jsonl(b, &windows))?;
        }
        Ok(format!("windows: {}\nmethods: {}\nrows: {}\n", windows.len(), methods.len(), rows.len()))
    }

    fn evaluate(&self, args: &EvaluateArgs) -> Result<String> {
        let mut ks = args.k.clone().or_else(|| self.file.k.clone()).unwrap_or_else(|| vec![3]);
        ks.sort_unstable();
        ks.dedup();
        if ks.first() == Some(&0) || ks.is_empty() {
            return Err(Error::config("k", "must be positive"));
        }
        let rows = read_explanations(open(&args.explanations)?)?;
        let truth = read_truth_jsonl(open(&args.truth)?)?;

        let mut selections: BTreeMap<(Method, &str), Vec<(usize, usize)>> = BTreeMap::new();
        for r in &rows {
            selections.entry((r.method, r.episode.as_str())).or_default().push((r.rank, r.step));
        }
        let present: Vec<Method> = {
            let mut m: Vec<Method> = rows.iter().map(|r| r.method).collect();
            m.sort();
            m.dedup();
            m
        };
        let methods = match args.methods.as_deref().or(self.file.methods.as_deref()) {
            Some(list) => Method::parse_list(list)?,
            None => present,
        };
        let included: Vec<&TruthWindow> = truth.iter().filter(|w| !w.truth.is_empty()).collect();
        if included.is_empty() || methods.is_empty() {
            return Err(Error::EmptyEvaluation);
        }

        let mut results = Vec::new();
        for &method in &methods {
            for &k in &ks {
                let values: Vec<f64> = included
                    .iter()
                    .map(|w| {
                        let mut sel = selections.get(&(method, w.episode.as_str())).cloned().unwrap_or_default();
                        sel.sort_unstable();
                        let steps: Vec<usize> = sel.into_iter().map(|(_, s)| s).collect();
                        window_precision(&steps, w, k).expect("truth non-empty")
                    })
                    .collect();
                results.push(benchmark_row(method, k, &values, self.seed)?);
            }
        }
        write_with(&self.out(RESULTS_FILE), |b| write_results_csv(b, &results))?;
        let mut summary = format!("windows: {}\n", included.len());
        for r in &results {
            summary.push_str(&format!(
                "{} @{}: {:.3} [{:.3}, {:.3}]\n",
                r.method, r.k, r.mean_precision, r.ci_lo, r.ci_hi
            ));
        }
        Ok(summary)
    }
}

fn json_bytes<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

fn compute_alerts(
    catalog: &FeatureCatalog,
    corpus: &[EventSequence],
    ck: &Checkpoint,
    rule: &AlertRule,
) -> Result<Vec<crate::alerts::Alert>> {
    use rayon::prelude::*;
    let stats = ck.stats()?;
    let steps = encode_corpus(corpus, catalog, &stats)?;
    let risks = corpus
        .par_iter()
        .zip(&steps)
        .filter(|(_, s)| !s.is_empty())
        .map(|(seq, s)| Ok((seq.episode_id.clone(), forward(&ck.params, s, Mode::Eval)?.0)))
        .collect::<Result<Vec<_>>>()?;
    select_alert_cohort(&risks, rule)
}

/// One row of the explanations CSV.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ExplanationRow {
    pub episode: String,
    pub method: Method,
    pub rank: usize,
    pub step: usize,
    pub time_s: f64,
    pub feature: String,
    pub raw_value: f64,
    pub weight: f64,
}

pub fn read_explanations<R: std::io::Read>(reader: R) -> Result<Vec<ExplanationRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Rows must lie in their window, use distinct features per group, carry
/// consecutive ranks and number at most `k` per group.
fn validate_explanations(
    rows: &[ExplanationRow],
    windows: &[TruthWindow],
    steps: &BTreeMap<String, crate::events::StepSeries>,
    catalog: &FeatureCatalog,
    k: usize,
) -> Result<()> {
    let by_episode: HashMap<&str, &TruthWindow> = windows.iter().map(|w| (w.episode.as_str(), w)).collect();
    let mut groups: BTreeMap<(&str, Method), Vec<&ExplanationRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.episode.as_str(), r.method)).or_default().push(r);
    }
    for ((episode, method), group) in groups {
        let bad =
            |m: String| Error::InconsistentEpisode { episode: episode.to_string(), message: format!("{method}: {m}") };
        let w = by_episode.get(episode).ok_or_else(|| bad("no window".into()))?;
        let s = &steps[episode];
        if group.len() > k {
            return Err(bad(format!("{} rows exceed k = {k}", group.len())));
        }
        let mut features = std::collections::HashSet::new();
        for (i, r) in group.iter().enumerate() {
            if r.rank != i + 1 {
                return Err(bad("ranks are not consecutive".into()));
            }
            if !(w.t0 < r.step && r.step <= w.t1) {
                return Err(bad(format!("step {} outside ({}, {}]", r.step, w.t0, w.t1)));
            }
            if catalog.id(s.step_feature[r.step - 1]) != r.feature {
                return Err(bad(format!("step {} is not feature {}", r.step, r.feature)));
            }
            if !features.insert(r.feature.as_str()) {
                return Err(bad(format!("feature {} repeated", r.feature)));
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<String> {
    if let Some(jobs) = cli.common.jobs {
        if jobs == 0 {
            return Err(Error::config("jobs", "must be positive"));
        }
        // fails only if a pool already exists, which then keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let file = FileConfig::load(cli.common.config.as_deref())?;
    let seed = cli.common.seed.or(file.seed).unwrap_or(0);
    fs::create_dir_all(&cli.common.out_dir).map_err(|e| Error::io(&cli.common.out_dir, e))?;
    let runner = Runner { seed, out_dir: cli.common.out_dir.clone(), file };
    match &cli.command {
        Command::GenData(a) => runner.gen_data(a),
        Command::Train(a) => runner.train(a),
        Command::Alerts(a) => runner.alerts(a),
        Command::Explain(a) => runner.explain(a),
        Command::Evaluate(a) => runner.evaluate(a),
    }
}

pub fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numeric => 3,
    }
}

/// Parse `args` and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
