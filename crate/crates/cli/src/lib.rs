//! Command-line driver: dataset generation and import, training, and
//! evaluation with report generation.

pub mod config;
pub mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use cardioregion::domain::{DatasetIndex, LabelCode, Phase, RegionLabel, Split};
use cardioregion::io::{self, build_index, import_volume, load_index, save_index, write_atomic, LabelRemap, Orientation, SplitFractions, VolumeSource, INDEX_FILE};
use cardioregion::metrics::{
    classifier_metrics, delta_table, dsc_table, label_profile, region_gap_tests, region_stats, ConfusionMatrix, DscProfile, DscTable,
};
use cardioregion::models::{
    load_checkpoint, save_checkpoint, train_classifier, train_segmenter, Checkpoint, ModelConfig, RegionScope,
};
use cardioregion::phantom::{generate_dataset, PhantomParams};
use cardioregion::pipeline::{load_predictions, load_test_stacks, read_routing, run_dataset, Arm, ModelBundle};
use cardioregion::sampler::{build_weights, SamplerConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use config::{sha256_hex, Profile, RunConfig};

pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const TRAINING_LOG: &str = "training_log.csv";

#[derive(Debug, Parser)]
#[command(name = "cardioregion", version, about = "Region-aware cardiac MR segmentation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic phantom dataset with an index.
    Phantom(PhantomArgs),
    /// Import one NIfTI volume into a dataset root and rebuild its index.
    Import(ImportArgs),
    /// Train one model and write its checkpoint directory.
    Train(TrainArgs),
    /// Run the requested arms on the test split and write the reports.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Write into a non-empty directory.
    #[arg(long)]
    pub force: bool,
    #[arg(long, default_value_t = 64)]
    pub image_size: usize,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub stack_id: String,
    #[arg(long)]
    pub phase: Phase,
    /// Dataset root to import into.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = OrientationArg::BaseFirst)]
    pub orientation: OrientationArg,
    /// Label remapping as `src:dst` pairs, e.g. `1:3,2:2,3:1`. Identity if omitted.
    #[arg(long, value_delimiter = ',')]
    pub remap: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OrientationArg {
    BaseFirst,
    ApexFirst,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub profile: Option<Profile>,
}

impl CommonArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::load_or_default(self.config.as_deref())?;
        if let Some(d) = &self.data {
            c.data = Some(d.clone());
        }
        if let Some(o) = &self.out {
            c.out = Some(o.clone());
        }
        if let Some(s) = self.seed {
            c.seed = Some(s);
        }
        if let Some(p) = self.profile {
            c.profile = p;
            c.segmenter = None;
            c.classifier = None;
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainKind {
    Baseline,
    Sampler,
    Classifier,
    RegionBase,
    RegionMiddle,
    RegionApex,
}

impl TrainKind {
    pub fn dir_name(self) -> &'static str {
        match self {
            TrainKind::Baseline => "baseline",
            TrainKind::Sampler => "sampler",
            TrainKind::Classifier => "classifier",
            TrainKind::RegionBase => "region-base",
            TrainKind::RegionMiddle => "region-middle",
            TrainKind::RegionApex => "region-apex",
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(value_enum)]
    pub kind: TrainKind,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Max/min sampling-probability ratio for the sampler kind.
    #[arg(long)]
    pub ratio: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_delimiter = ',')]
    pub arms: Option<Vec<Arm>>,
    /// Directory holding checkpoints named after the train kinds.
    #[arg(long)]
    pub models: Option<PathBuf>,
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long)]
    pub sampler: Option<PathBuf>,
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    #[arg(long)]
    pub region_base: Option<PathBuf>,
    #[arg(long)]
    pub region_middle: Option<PathBuf>,
    #[arg(long)]
    pub region_apex: Option<PathBuf>,
    /// Dataset name in the report tables; defaults to the data directory name.
    #[arg(long)]
    pub dataset_name: Option<String>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantom(a) => cmd_phantom(&a),
        Command::Import(a) => cmd_import(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: String,
    config: Option<&'a RunConfig>,
    config_hash: Option<String>,
    seeds: BTreeMap<&'static str, u64>,
    index_hash: Option<String>,
    checkpoints: BTreeMap<String, String>,
    /// SHA-256 of every file written, keyed by path relative to the output directory.
    outputs: BTreeMap<String, String>,
}

impl<'a> RunManifest<'a> {
    fn new(command: String, config: Option<&'a RunConfig>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            config_hash: config.map(RunConfig::hash),
            seeds: BTreeMap::new(),
            index_hash: None,
            checkpoints: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    fn write(mut self, dir: &Path) -> Result<()> {
        self.outputs = hash_tree(dir)?;
        let json = serde_json::to_vec_pretty(&self)?;
        write_atomic(&dir.join(RUN_MANIFEST), &json)?;
        Ok(())
    }
}

fn hash_tree(dir: &Path) -> Result<BTreeMap<String, String>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
        for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else if path.file_name().is_some_and(|n| n != RUN_MANIFEST) {
                let rel = path.strip_prefix(root).expect("under root");
                let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
                out.insert(rel, sha256_hex(&bytes));
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

fn index_hash(root: &Path) -> Result<String> {
    let p = root.join(INDEX_FILE);
    Ok(sha256_hex(&std::fs::read(&p).with_context(|| format!("reading {}", p.display()))?))
}

fn print_index_summary(index: &DatasetIndex) {
    let stacks = index.stack_ids().len();
    println!("{stacks} stacks, {} slices", index.records.len());
    for split in [Split::Train, Split::Val, Split::Test] {
        let mut counts = [0usize; 4];
        for r in index.split(split) {
            counts[r.region.index()] += 1;
        }
        let parts: Vec<String> = RegionLabel::ALL.iter().map(|r| format!("{r} {}", counts[r.index()])).collect();
        println!("  {split}: {} stacks, {}", index.stack_phases(split).len() / Phase::ALL.len().max(1), parts.join(", "));
    }
}

pub fn cmd_phantom(a: &PhantomArgs) -> Result<()> {
    if a.out.is_dir() && std::fs::read_dir(&a.out)?.next().is_some() && !a.force {
        bail!("output directory {} is not empty (use --force to overwrite)", a.out.display());
    }
    let template = PhantomParams::for_image_size(a.image_size);
    let index = generate_dataset(a.n, &template, a.seed, &a.out)?;
    print_index_summary(&index);
    let mut m = RunManifest::new("phantom".into(), None);
    m.seeds.insert("phantom", a.seed);
    m.index_hash = Some(index_hash(&a.out)?);
    m.write(&a.out)
}

fn parse_remap(pairs: &[String]) -> Result<LabelRemap> {
    if pairs.is_empty() {
        return Ok(LabelRemap::identity());
    }
    let mut mapping = BTreeMap::new();
    for p in pairs {
        let (s, d) = p.split_once(':').with_context(|| format!("remap entry {p:?} is not src:dst"))?;
        mapping.insert(s.trim().parse::<i64>()?, d.trim().parse::<u8>()?);
    }
    Ok(LabelRemap::new(mapping)?)
}

pub fn cmd_import(a: &ImportArgs) -> Result<()> {
    let remap = parse_remap(&a.remap)?;
    let orientation = match a.orientation {
        OrientationArg::BaseFirst => Orientation::BaseFirst,
        OrientationArg::ApexFirst => Orientation::ApexFirst,
    };
    let source = VolumeSource {
        image: a.image.clone(),
        labels: a.labels.clone(),
    };
    let dir = io::phase_dir(&a.data, &a.stack_id, a.phase);
    let m = import_volume(&source, &remap, orientation, &a.stack_id, a.phase, &dir)?;
    println!("imported {} ({} slices, {}x{})", dir.display(), m.n_slices, m.height, m.width);
    let index = build_index(&a.data, a.split_seed, SplitFractions::DEFAULT)?;
    save_index(&index, &a.data)?;
    print_index_summary(&index);
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = a.common.resolve()?;
    if let Some(r) = a.ratio {
        cfg.sampler_ratio = r;
    }
    let data = cfg.data_dir()?.to_path_buf();
    let out = cfg.out_dir()?.to_path_buf();
    let index = load_index(&data)?;
    let ck = match a.kind {
        TrainKind::Classifier => train_classifier(&index, &cfg.classifier_config())?,
        TrainKind::Sampler => {
            let seg = cfg.segmenter_config();
            let sc = SamplerConfig {
                ratio: cfg.sampler_ratio,
                batch_size: seg.batch_size,
                seed: seg.seed,
            };
            let weights = build_weights(&index, &sc)?;
            train_segmenter(&index, RegionScope::All, Some(&weights), &seg)?
        }
        kind => {
            let scope = match kind {
                TrainKind::RegionBase => RegionScope::Base,
                TrainKind::RegionMiddle => RegionScope::Middle,
                TrainKind::RegionApex => RegionScope::Apex,
                _ => RegionScope::All,
            };
            train_segmenter(&index, scope, None, &cfg.segmenter_config())?
        }
    };
    save_checkpoint(&ck, &out)?;
    report::write_training_log(&out.join(TRAINING_LOG), &ck.log)?;
    if let Some(last) = ck.log.last() {
        let val = last.val_metric.map_or("n/a".into(), |v| format!("{v:.4}"));
        println!(
            "{}: {} epochs, final train loss {:.4}, validation {val}",
            a.kind.dir_name(),
            ck.log.len(),
            last.train_loss
        );
    }
    let mut m = RunManifest::new(format!("train {}", a.kind.dir_name()), Some(&cfg));
    match &ck.config {
        ModelConfig::Segmenter(s) => m.seeds.insert("segmenter", s.seed),
        ModelConfig::Classifier(c) => m.seeds.insert("classifier", c.seed),
    };
    if let Some(s) = &ck.sampler {
        m.seeds.insert("sampler", s.seed);
    }
    m.index_hash = Some(index_hash(&data)?);
    m.checkpoints.insert(a.kind.dir_name().into(), ck.content_hash.clone());
    m.write(&out)
}

fn model_path(explicit: &Option<PathBuf>, models: &Option<PathBuf>, kind: TrainKind) -> Option<PathBuf> {
    explicit.clone().or_else(|| models.as_ref().map(|d| d.join(kind.dir_name())))
}

fn load_model(path: Option<PathBuf>, kind: TrainKind) -> Result<Checkpoint> {
    let path = path.with_context(|| format!("no {} checkpoint given (--{} or --models)", kind.dir_name(), kind.dir_name()))?;
    load_checkpoint(&path).with_context(|| format!("loading {} checkpoint {}", kind.dir_name(), path.display()))
}

fn load_bundle(a: &EvalArgs, arms: &[Arm]) -> Result<ModelBundle> {
    let need = |k: TrainKind| match k {
        TrainKind::Sampler => arms.contains(&Arm::Sampled),
        TrainKind::Classifier => arms.contains(&Arm::Classified),
        _ => arms.contains(&Arm::Classified) || arms.contains(&Arm::Oracle),
    };
    let opt = |explicit: &Option<PathBuf>, k: TrainKind| -> Result<Option<Checkpoint>> {
        if need(k) {
            load_model(model_path(explicit, &a.models, k), k).map(Some)
        } else {
            Ok(None)
        }
    };
    Ok(ModelBundle {
        baseline: load_model(model_path(&a.baseline, &a.models, TrainKind::Baseline), TrainKind::Baseline)?,
        base_model: opt(&a.region_base, TrainKind::RegionBase)?,
        middle_model: opt(&a.region_middle, TrainKind::RegionMiddle)?,
        apex_model: opt(&a.region_apex, TrainKind::RegionApex)?,
        classifier: opt(&a.classifier, TrainKind::Classifier)?,
        sampler_model: opt(&a.sampler, TrainKind::Sampler)?,
    })
}

fn bundle_hashes(b: &ModelBundle) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("baseline".to_string(), b.baseline.content_hash.clone());
    for (k, ck) in [
        (TrainKind::RegionBase, &b.base_model),
        (TrainKind::RegionMiddle, &b.middle_model),
        (TrainKind::RegionApex, &b.apex_model),
        (TrainKind::Classifier, &b.classifier),
        (TrainKind::Sampler, &b.sampler_model),
    ] {
        if let Some(ck) = ck {
            m.insert(k.dir_name().to_string(), ck.content_hash.clone());
        }
    }
    m
}

fn classifier_name(ck: &Checkpoint) -> String {
    match &ck.config {
        ModelConfig::Classifier(c) => format!("CNN-{}x{}", c.conv_blocks, c.channels),
        ModelConfig::Segmenter(_) => "classifier".into(),
    }
}

fn count_lines(path: &Path) -> Result<usize> {
    Ok(std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?.lines().count())
}

/// Every table written by one `eval` run, by arm.
pub struct EvalOutcome {
    pub tables: BTreeMap<Arm, DscTable>,
    pub out_dir: PathBuf,
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    eval(a).map(|_| ())
}

pub fn eval(a: &EvalArgs) -> Result<EvalOutcome> {
    let mut cfg = a.common.resolve()?;
    if let Some(arms) = &a.arms {
        cfg.arms = arms.clone();
    }
    let mut arms = cfg.arms.clone();
    arms.sort();
    arms.dedup();
    ensure!(!arms.is_empty(), "no arms requested");
    if arms.len() >= 2 {
        ensure!(arms.contains(&Arm::Baseline), "comparing arms requires the baseline arm");
    }
    let data = cfg.data_dir()?.to_path_buf();
    let out = cfg.out_dir()?.to_path_buf();
    let dataset = a.dataset_name.clone().unwrap_or_else(|| {
        data.file_name().map_or("dataset".into(), |n| n.to_string_lossy().into_owned())
    });
    let index = load_index(&data)?;
    let bundle = load_bundle(a, &arms)?;
    let gt = load_test_stacks(&index)?;
    std::fs::create_dir_all(&out)?;

    let mut tables = BTreeMap::new();
    let mut classifier_rows = Vec::new();
    for &arm in &arms {
        let arm_dir = out.join(arm.as_str());
        let store = run_dataset(arm, &bundle, &index, &arm_dir.join("predictions"))?;
        let preds = load_predictions(&store)?;
        let table = dsc_table(&gt, &preds)?;
        let stats = region_stats(&table);
        let gaps = region_gap_tests(&table);
        report::write_dsc_table(&arm_dir.join("dsc_table.csv"), &table)?;
        report::write_region_stats(&arm_dir.join("region_stats.csv"), &dataset, &stats, &gaps)?;
        report::write_region_stats_long(&arm_dir.join("region_stats_long.csv"), &stats, &gaps)?;
        if arm == Arm::Classified {
            let cm: ConfusionMatrix = read_routing(&store)?
                .iter()
                .filter_map(|r| Some((r.gt_region?, r.predicted_region?)))
                .collect();
            if cm.total() > 0 {
                let m = classifier_metrics(&cm)?;
                report::write_classifier_per_class(&out.join("classifier_per_class.csv"), &m)?;
                let name = classifier_name(bundle.classifier.as_ref().expect("classified arm loads a classifier"));
                classifier_rows.push((name, m));
            }
        }
        let mid = stats.cell(RegionLabel::Middle, LabelCode::Lvbp);
        println!(
            "{arm}: {} DSC rows, middle LVBP {}",
            table.rows.len(),
            mid.mean.map_or("n/a".into(), |m| format!("{m:.2}%"))
        );
        tables.insert(arm, table);
    }
    if !classifier_rows.is_empty() {
        report::write_classifier_metrics(&out.join("classifier_metrics.csv"), &classifier_rows)?;
    }

    if arms.len() >= 2 {
        let base = &tables[&Arm::Baseline];
        let mut rows = Vec::new();
        for (&arm, t) in &tables {
            if arm != Arm::Baseline {
                rows.push((arm, delta_table(base, t)?));
            }
        }
        report::write_delta_table(&out.join("delta_table.csv"), &dataset, &rows)?;
        report::write_delta_long(&out.join("delta_long.csv"), &rows)?;
    }

    let mut profiles: Vec<(Arm, Vec<Option<DscProfile>>)> = Vec::new();
    for (&arm, t) in &tables {
        let per_label = LabelCode::FOREGROUND
            .iter()
            .map(|&l| label_profile(t, l))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        profiles.push((arm, per_label));
    }
    report::write_profiles(&out.join("profiles.csv"), &profiles)?;
    for (li, label) in LabelCode::FOREGROUND.iter().enumerate() {
        let curves: Vec<(Arm, &DscProfile)> =
            profiles.iter().filter_map(|(arm, p)| p[li].as_ref().map(|p| (*arm, p))).collect();
        let svg = report::profile_svg(*label, &curves);
        write_atomic(&out.join(format!("profile_{label}.svg")), svg.as_bytes())?;
    }

    for &arm in &arms {
        ensure!(count_lines(&out.join(arm.as_str()).join("region_stats.csv"))? == 1 + LabelCode::FOREGROUND.len(), "region_stats.csv for {arm} is incomplete");
    }
    ensure!(count_lines(&out.join("profiles.csv"))? == 1 + cardioregion::metrics::PROFILE_POINTS, "profiles.csv is incomplete");
    if arms.len() >= 2 {
        ensure!(count_lines(&out.join("delta_table.csv"))? == arms.len(), "delta_table.csv is incomplete");
    }

    let mut m = RunManifest::new(format!("eval {}", arms.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(",")), Some(&cfg));
    m.seeds.insert("split", cfg.split_seed);
    if let Some(s) = cfg.seed {
        m.seeds.insert("global", s);
    }
    m.index_hash = Some(index_hash(&data)?);
    m.checkpoints = bundle_hashes(&bundle);
    m.write(&out)?;
    Ok(EvalOutcome { tables, out_dir: out })
}
