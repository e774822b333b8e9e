//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if a blocking criterion fails.
//!
//! Criteria 7 and 10 share one desk-profile phantom run (40 stacks, six
//! models, four arms); 8 reuses its classifier and baseline. Criterion 9
//! runs a reduced-size pipeline twice.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cardioregion::domain::{DatasetIndex, Grid, IndexRecord, LabelCode, LabelMask, Phase, RegionLabel, Split};
use cardioregion::metrics::{dice, interpolate_profile, paired_ttest, welch_ttest, PROFILE_POINTS};
use cardioregion::models::{load_checkpoint, segmentation_gradient_check};
use cardioregion::pipeline::{read_routing, Arm, ModelUsed};
use cardioregion::sampler::{build_weights, sample_batch, SamplerConfig};
use cardioregion::stratify::{regions_from_presence, split_counts};
use cardioregion_cli::{run, Cli, RUN_MANIFEST};
use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    id: &'static str,
    name: &'static str,
    pass: bool,
    blocking: bool,
    detail: String,
}

fn outcome(id: &'static str, name: &'static str, result: Result<String, String>) -> Outcome {
    let (pass, detail) = match result {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    Outcome { id, name, pass, blocking: true, detail }
}

fn report(o: &Outcome) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    let note = if o.blocking { "" } else { " (non-blocking)" };
    println!("{tag} [{}] {}{note}: {}", o.id, o.name, o.detail);
}

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn cli(args: &[&str]) -> Result<(), String> {
    let mut argv = vec!["cardioregion"];
    argv.extend_from_slice(args);
    let parsed = Cli::try_parse_from(&argv).map_err(|e| format!("{argv:?}: {e}"))?;
    run(parsed).map_err(|e| format!("{argv:?}: {e:#}"))
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn fresh_dir(name: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn csv_rows(path: &Path) -> Result<Vec<Vec<String>>, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut rows = vec![r.headers().map_err(|e| e.to_string())?.iter().map(String::from).collect()];
    for rec in r.records() {
        rows.push(rec.map_err(|e| e.to_string())?.iter().map(String::from).collect());
    }
    Ok(rows)
}

// 1 ---------------------------------------------------------------------

fn stratification() -> Result<String, String> {
    let t = Instant::now();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/split_counts.csv");
    let rows = csv_rows(&fixture)?;
    let mut n = 0;
    for row in &rows[1..] {
        let v: Vec<usize> = row.iter().map(|x| x.parse().unwrap()).collect();
        let c = split_counts(v[0]).map_err(|e| e.to_string())?;
        check((c.base, c.middle, c.apex) == (v[1], v[2], v[3]), format!("S={}: got {c:?}, fixture {:?}", v[0], &v[1..]))?;
        n += 1;
    }
    check(n == 30, format!("fixture has {n} rows, expected 30"))?;
    let secs = t.elapsed().as_secs_f64();
    check(secs < 1.0, format!("took {secs:.3} s"))?;
    Ok(format!("S=1..30 match the largest-remainder fixture ({secs:.3} s)"))
}

// 2 ---------------------------------------------------------------------

fn sampler_distribution() -> Result<String, String> {
    let t = Instant::now();
    let presence: Vec<bool> = (0..121).map(|i| (10..111).contains(&i)).collect();
    let regions = regions_from_presence(&presence);
    let records = regions
        .iter()
        .enumerate()
        .map(|(i, &region)| IndexRecord {
            stack_id: "synthetic".into(),
            phase: Phase::Ed,
            slice_index: i,
            region,
            split: Split::Train,
        })
        .collect();
    let index = DatasetIndex { records, source_dir: PathBuf::new() };
    let cfg = SamplerConfig { ratio: 20.0, batch_size: 1000, seed: 0 };
    let weights = build_weights(&index, &cfg).map_err(|e| e.to_string())?;
    let mut rng = cfg.rng();
    let mut counts = vec![0u64; 121];
    const DRAWS: u64 = 1_000_000;
    for _ in 0..DRAWS / cfg.batch_size as u64 {
        for id in sample_batch(&weights, &mut rng) {
            counts[id] += 1;
        }
    }
    let n = DRAWS as f64;
    let p0 = 1.0 / 121.0;
    let sigma = (p0 * (1.0 - p0) / n).sqrt();
    let mut worst = (0.0f64, 0usize);
    for (i, &c) in counts.iter().enumerate() {
        if regions[i] == RegionLabel::NonCardiac {
            let z = (c as f64 / n - p0) / sigma;
            if z.abs() > worst.0 {
                worst = (z.abs(), i);
            }
        }
    }
    let nc_max_dev = (0..121)
        .filter(|&i| regions[i] == RegionLabel::NonCardiac)
        .map(|i| (weights.probabilities[i] - p0).abs())
        .fold(0.0f64, f64::max);
    let analytic = format!(
        "analytic: non-cardiac |p - 1/121| <= {nc_max_dev:.1e}, p(x=0)/p(x=0.5) = {:.6}",
        weights.probabilities[10] / weights.probabilities[60]
    );
    let ratio = counts[10] as f64 / counts[60] as f64;
    let secs = t.elapsed().as_secs_f64();
    let mut problems = Vec::new();
    if worst.0 > 3.0 {
        problems.push(format!("non-cardiac record {} is {:.2} sigma from 1/121", worst.1, worst.0));
    }
    if !(19.0..=21.0).contains(&ratio) {
        problems.push(format!("x=0 / x=0.5 frequency ratio {ratio:.3} outside [19, 21]"));
    }
    if secs >= 30.0 {
        problems.push(format!("took {secs:.1} s"));
    }
    let worst = worst.0;
    if !problems.is_empty() {
        return Err(format!("{}; ratio {ratio:.3}; {analytic}", problems.join("; ")));
    }
    Ok(format!("max non-cardiac |z| {worst:.2}, x=0/x=0.5 ratio {ratio:.3}; {analytic} ({secs:.2} s)"))
}

// 3 ---------------------------------------------------------------------

fn brute_force_dice(gt: &[u8], pred: &[u8], code: u8) -> Option<f64> {
    let a: std::collections::BTreeSet<usize> = (0..gt.len()).filter(|&i| gt[i] == code).collect();
    let b: std::collections::BTreeSet<usize> = (0..pred.len()).filter(|&i| pred[i] == code).collect();
    if a.is_empty() && b.is_empty() {
        return None;
    }
    Some(2.0 * a.intersection(&b).count() as f64 / (a.len() + b.len()) as f64)
}

fn dice_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut compared = 0;
    for pair in 0..1000 {
        // Vary label density so empty and near-empty sets occur.
        let density = rng.random_range(0.0..1.0f64);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<u8> {
            (0..256).map(|_| if rng.random_bool(density) { rng.random_range(1..4) } else { 0 }).collect()
        };
        let g = draw(&mut rng);
        let q = draw(&mut rng);
        let gm = LabelMask { labels: Grid::from_vec(16, 16, g.clone()).unwrap() };
        let pm = LabelMask { labels: Grid::from_vec(16, 16, q.clone()).unwrap() };
        for label in LabelCode::FOREGROUND {
            let got = dice(&gm, &pm, label).map_err(|e| e.to_string())?;
            let want = brute_force_dice(&g, &q, label.code());
            check(
                got.map(f64::to_bits) == want.map(f64::to_bits),
                format!("pair {pair} {label}: {got:?} vs oracle {want:?}"),
            )?;
            compared += 1;
        }
    }
    Ok(format!("{compared} (pair, label) values bit-identical to the pixel-set oracle"))
}

// 4 ---------------------------------------------------------------------

fn interpolation() -> Result<String, String> {
    let grid = |k: usize| k as f64 / (PROFILE_POINTS - 1) as f64;
    let mut worst = 0.0f64;
    for (a, b) in [(0.3, 0.5), (-1.25, 2.0), (0.0, 1.0), (7.5, -3.0)] {
        let f = |x: f64| a * x + b;
        for xs in [vec![0.0, 1.0], vec![0.0, 0.2, 0.45, 0.7, 1.0], vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]] {
            let pts: Vec<(f64, f64)> = xs.iter().map(|&x| (x, f(x))).collect();
            let prof = interpolate_profile(&pts).map_err(|e| e.to_string())?;
            check(prof.len() == PROFILE_POINTS, "profile length")?;
            for (k, v) in prof.iter().enumerate() {
                worst = worst.max((v - f(grid(k))).abs());
            }
        }
    }
    check(worst <= 1e-12, format!("affine error {worst:e}"))?;
    let single = interpolate_profile(&[(0.4, 0.8)]).map_err(|e| e.to_string())?;
    check(single.iter().all(|&v| v == 0.8), "single point is not a constant profile")?;
    let clamped = interpolate_profile(&[(0.2, 0.5), (0.8, 0.9)]).map_err(|e| e.to_string())?;
    check(
        clamped[..=20].iter().all(|&v| v == 0.5) && clamped[80..].iter().all(|&v| v == 0.9),
        "ends are not clamped to the nearest sample",
    )?;
    Ok(format!("max affine error {worst:.1e}; single-point and endpoint clamping hold"))
}

// 5 ---------------------------------------------------------------------

const WELCH_P_ORACLE: f64 = 0.346_593_507_087_334_25;

fn statistics() -> Result<String, String> {
    let w = welch_ttest(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).map_err(|e| e.to_string())?;
    check(w.t == -1.0 && w.df == 8.0, format!("welch t={} df={}", w.t, w.df))?;
    check((w.p_two_sided - WELCH_P_ORACLE).abs() < 1e-6, format!("welch p={}", w.p_two_sided))?;
    let pt = paired_ttest(&[1.0, 2.0, 3.0, 4.0]).map_err(|e| e.to_string())?;
    let t_want = 2.5 / (5.0f64 / 12.0).sqrt();
    check((pt.t - t_want).abs() < 1e-9 && pt.df == 3.0, format!("paired t={} df={}", pt.t, pt.df))?;
    for n in [2usize, 5, 17, 40] {
        let a: Vec<f64> = (0..n).map(|i| (i as f64).sin() * 3.0).collect();
        let b: Vec<f64> = a.iter().map(|v| -v).collect();
        let r = welch_ttest(&a, &b).map_err(|e| e.to_string())?;
        check(r.df == (2 * n - 2) as f64, format!("n={n}: df={} not {}", r.df, 2 * n - 2))?;
    }
    Ok(format!("welch t=-1 df=8 p={:.10}; paired t={:.10} df=3; df=2n-2 exact", w.p_two_sided, pt.t))
}

// 6 ---------------------------------------------------------------------

fn gradient_check() -> Result<String, String> {
    let g = segmentation_gradient_check(0);
    check(g.n_params <= 1000, format!("{} parameters", g.n_params))?;
    check(g.max_rel_error < 1e-3, format!("max relative error {:.2e}", g.max_rel_error))?;
    Ok(format!("{} parameters, max relative error {:.2e}, global {:.2e}", g.n_params, g.max_rel_error, g.global_rel_error))
}

// 7, 8, 10 ----------------------------------------------------------------

const KINDS: [&str; 6] = ["classifier", "region-middle", "region-base", "region-apex", "baseline", "sampler"];

struct FullRun {
    root: PathBuf,
    secs: f64,
    error: Option<String>,
}

fn full_run() -> FullRun {
    let root = fresh_dir("desk");
    let t = Instant::now();
    let result = (|| -> Result<(), String> {
        let data = root.join("data");
        let models = root.join("models");
        cli(&["phantom", "--n", "40", "--seed", "1", "--out", p(&data)])?;
        for k in KINDS {
            cli(&["train", k, "--data", p(&data), "--out", p(&models.join(k)), "--seed", "0"])?;
        }
        cli(&[
            "eval", "--data", p(&data), "--models", p(&models), "--out", p(&root.join("report")),
            "--arms", "baseline,sampled,classified,oracle",
        ])
    })();
    FullRun { secs: t.elapsed().as_secs_f64(), root, error: result.err() }
}

fn phantom_end_to_end(run: &FullRun) -> Result<String, String> {
    if let Some(e) = &run.error {
        return Err(format!("pipeline failed: {e}"));
    }
    let report = run.root.join("report");
    let mut notes = Vec::new();

    // (a)
    let ck = load_checkpoint(&run.root.join("models/classifier")).map_err(|e| e.to_string())?;
    let acc = ck.log.last().and_then(|l| l.val_metric).ok_or("classifier log has no validation accuracy")?;
    check(acc >= 0.90, format!("(a) classifier validation accuracy {acc:.4} < 0.90"))?;
    notes.push(format!("(a) val acc {acc:.4}"));

    // (b)
    let oracle_stats = csv_rows(&report.join("oracle/region_stats_long.csv"))?;
    let mid = oracle_stats
        .iter()
        .find(|r| r[0] == "LVBP" && r[1] == "Middle")
        .ok_or("no Middle LVBP cell")?;
    let mid_dsc: f64 = mid[3].parse::<f64>().map_err(|e| e.to_string())? / 100.0;
    check(mid_dsc >= 0.90, format!("(b) middle-region LVBP DSC {mid_dsc:.4} < 0.90"))?;
    notes.push(format!("(b) middle LVBP {mid_dsc:.4} over {} slices", mid[2]));

    // (c)
    let routes = read_routing(&report.join("oracle/predictions")).map_err(|e| e.to_string())?;
    let cardiac: Vec<_> = routes.iter().filter(|r| r.gt_region.is_some_and(RegionLabel::is_cardiac)).collect();
    let agree = cardiac.iter().filter(|r| r.model_used.region() == r.gt_region).count();
    check(!cardiac.is_empty() && agree == cardiac.len(), format!("(c) oracle agreement {agree}/{}", cardiac.len()))?;
    check(
        routes.iter().filter(|r| r.gt_region == Some(RegionLabel::NonCardiac)).all(|r| r.model_used == ModelUsed::Baseline),
        "(c) non-cardiac slices not routed to the baseline",
    )?;
    notes.push(format!("(c) oracle {agree}/{}", cardiac.len()));
    let cls = read_routing(&report.join("classified/predictions")).map_err(|e| e.to_string())?;
    let cls_agree = cls.iter().filter(|r| r.predicted_region == r.gt_region).count();
    notes.push(format!("classified routing agreement {:.3}", cls_agree as f64 / cls.len() as f64));

    // (d)
    let mut expected: Vec<PathBuf> = ["classifier_metrics.csv", "delta_table.csv", "profiles.csv", RUN_MANIFEST]
        .iter()
        .map(|f| report.join(f))
        .collect();
    for label in LabelCode::FOREGROUND {
        expected.push(report.join(format!("profile_{label}.svg")));
    }
    for arm in Arm::ALL {
        expected.push(report.join(arm.as_str()).join("dsc_table.csv"));
        expected.push(report.join(arm.as_str()).join("region_stats.csv"));
    }
    for f in &expected {
        check(f.is_file(), format!("(d) missing {}", f.display()))?;
    }
    let t1 = csv_rows(&report.join("baseline/region_stats.csv"))?;
    check(t1[0] == ["dataset", "label", "Base", "Middle", "Apex"] && t1.len() == 4, "(d) region_stats.csv schema")?;
    let t2 = csv_rows(&report.join("classifier_metrics.csv"))?;
    check(t2.len() == 3 && t2[1][0] == "Precision [%]" && t2[2][0] == "Recall [%]", "(d) classifier_metrics.csv schema")?;
    let t3 = csv_rows(&report.join("delta_table.csv"))?;
    let t3_header: Vec<String> = ["dataset", "approach"]
        .iter()
        .map(|s| s.to_string())
        .chain(["LVBP", "LVM", "RVBP"].iter().flat_map(|l| [format!("{l} Base"), format!("{l} Apex")]))
        .collect();
    check(t3[0] == t3_header && t3.len() == 4, "(d) delta_table.csv schema")?;
    let prof = csv_rows(&report.join("profiles.csv"))?;
    check(prof.len() == 1 + PROFILE_POINTS && prof[0].len() == 1 + 3 * 4, "(d) profiles.csv shape")?;
    for label in LabelCode::FOREGROUND {
        let svg = read(&report.join(format!("profile_{label}.svg")))?;
        check(svg.matches("<polyline").count() == 4 && svg.contains(">0.0<") && svg.contains(">1.0<"), format!("(d) {label} plot"))?;
    }

    // Re-running eval reproduces every report byte-for-byte.
    let again = run.root.join("report_rerun");
    cli(&[
        "eval", "--data", p(&run.root.join("data")), "--models", p(&run.root.join("models")), "--out", p(&again),
        "--arms", "baseline,sampled,classified,oracle",
    ])?;
    let outputs = |dir: &Path| -> Result<serde_json::Value, String> {
        let m: serde_json::Value = serde_json::from_str(&read(&dir.join(RUN_MANIFEST))?).map_err(|e| e.to_string())?;
        Ok(m["outputs"].clone())
    };
    let first = outputs(&report)?;
    check(first == outputs(&again)?, "(d) rerun outputs differ")?;
    let n_out = first.as_object().map_or(0, |o| o.len());
    notes.push(format!("(d) {n_out} outputs reproduced byte-identically"));

    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    notes.push(format!("runtime {:.0} s on {cores} core(s)", run.secs));
    check(run.secs <= 1800.0 * (4.0 / cores as f64).max(1.0), format!("runtime {:.0} s over budget", run.secs))?;
    Ok(notes.join("; "))
}

fn prediction_files(store: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(store).map_err(|e| e.to_string())? {
        let d = e.map_err(|e| e.to_string())?.path();
        if d.is_dir() {
            let bytes = std::fs::read(d.join("masks.u8")).map_err(|e| e.to_string())?;
            out.insert(d.file_name().unwrap().to_string_lossy().into_owned(), bytes);
        }
    }
    Ok(out)
}

fn differential_routing(run: &FullRun) -> Result<String, String> {
    if let Some(e) = &run.error {
        return Err(format!("pipeline failed: {e}"));
    }
    let models = run.root.join("models");
    let baseline = models.join("baseline");
    let out = run.root.join("aliased");
    cli(&[
        "eval", "--data", p(&run.root.join("data")), "--out", p(&out), "--arms", "baseline,classified,oracle",
        "--baseline", p(&baseline), "--region-base", p(&baseline), "--region-middle", p(&baseline),
        "--region-apex", p(&baseline), "--classifier", p(&models.join("classifier")),
    ])?;
    let reference = prediction_files(&out.join("baseline/predictions"))?;
    check(!reference.is_empty(), "no predictions")?;
    for arm in ["classified", "oracle"] {
        check(prediction_files(&out.join(arm).join("predictions"))? == reference, format!("{arm} masks differ from baseline"))?;
    }
    Ok(format!("classified and oracle masks equal baseline on {} test stacks", reference.len()))
}

fn directionality(run: &FullRun) -> Outcome {
    let result = (|| -> Result<String, String> {
        if let Some(e) = &run.error {
            return Err(format!("pipeline failed: {e}"));
        }
        let rows = csv_rows(&run.root.join("report/delta_long.csv"))?;
        let mut parts = Vec::new();
        let mut positive = 0;
        let mut total = 0;
        for r in rows.iter().skip(1).filter(|r| r[0] == "classified") {
            let v: Option<f64> = r[4].parse().ok();
            let star = if r[7] == "true" { "*" } else { "" };
            parts.push(format!("{} {} {}{star}", r[1], r[2], v.map_or("n/a".into(), |v| format!("{v:+.2}"))));
            if let Some(v) = v {
                total += 1;
                positive += usize::from(v > 0.0);
            }
        }
        check(total > 0, "no classified-vs-baseline deltas")?;
        Ok(format!("classified vs baseline mean DSC deltas (pct points): {}; {positive}/{total} positive", parts.join(", ")))
    })();
    Outcome { blocking: false, ..outcome("10", "qualitative directionality", result) }
}

// 9 ---------------------------------------------------------------------

const SMALL_CONFIG: &str = r#"{
  "segmenter": {
    "depth": 3, "base_channels": 4,
    "optimizer": {"lr0": 0.01, "momentum": 0.99, "weight_decay": 3e-5, "poly_power": 0.9},
    "epochs": 2, "batches_per_epoch": 6, "batch_size": 4, "seed": 5,
    "augment": true, "grad_clip": 12.0, "val_slices": 8
  },
  "classifier": {
    "conv_blocks": 2, "channels": 4, "loss": "cross_entropy", "optimizer": {"lr0": 5e-4},
    "epochs": 2, "batch_size": 8, "seed": 5, "input_size": 32, "augment": true
  },
  "arms": ["baseline", "sampled", "classified", "oracle"],
  "sampler_ratio": 4.0
}"#;

fn small_pipeline(root: &Path) -> Result<(), String> {
    let cfg = root.join("config.json");
    std::fs::write(&cfg, SMALL_CONFIG).map_err(|e| e.to_string())?;
    let data = root.join("data");
    cli(&["phantom", "--n", "10", "--seed", "4", "--image-size", "32", "--out", p(&data)])?;
    for k in KINDS {
        cli(&["train", k, "--config", p(&cfg), "--data", p(&data), "--out", p(&root.join("models").join(k))])?;
    }
    cli(&["eval", "--config", p(&cfg), "--data", p(&data), "--models", p(&root.join("models")), "--out", p(&root.join("report"))])
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else if path.file_name().unwrap() != RUN_MANIFEST && path.file_name().unwrap() != "config.json" {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn determinism() -> Result<String, String> {
    let a = fresh_dir("determinism_a");
    let b = fresh_dir("determinism_b");
    small_pipeline(&a)?;
    small_pipeline(&b)?;
    let (ta, tb) = (tree(&a), tree(&b));
    check(ta.keys().eq(tb.keys()), "the two runs wrote different file sets")?;
    let differing: Vec<_> = ta.iter().filter(|(k, v)| tb[*k] != **v).map(|(k, _)| k.display().to_string()).collect();
    check(differing.is_empty(), format!("differing files: {differing:?}"))?;
    let ends = |name: &str, prefix: &str| ta.keys().filter(|k| k.ends_with(name) && k.starts_with(prefix)).count();
    Ok(format!(
        "{} files identical ({} checkpoints, {} prediction stores, {} report CSVs)",
        ta.len(),
        ends("params.f32", "models"),
        ends("masks.u8", "report"),
        ta.keys().filter(|k| k.starts_with("report") && k.extension().is_some_and(|e| e == "csv")).count()
    ))
}

fn main() {
    let mut results = vec![
        outcome("1", "stratification oracle", stratification()),
        outcome("2", "sampler distribution", sampler_distribution()),
        outcome("3", "DSC oracle equivalence", dice_oracle()),
        outcome("4", "interpolation exactness", interpolation()),
        outcome("5", "statistics", statistics()),
        outcome("6", "gradient check", gradient_check()),
    ];
    for r in &results {
        report(r);
    }
    let run = full_run();
    for o in [
        outcome("7", "phantom end-to-end", phantom_end_to_end(&run)),
        outcome("8", "differential routing", differential_routing(&run)),
        outcome("9", "determinism", determinism()),
        directionality(&run),
    ] {
        report(&o);
        results.push(o);
    }
    let failed: Vec<&str> = results.iter().filter(|o| o.blocking && !o.pass).map(|o| o.id).collect();
    println!(
        "acceptance: {}/{} passed{}",
        results.iter().filter(|o| o.pass).count(),
        results.len(),
        if failed.is_empty() { String::new() } else { format!("; failed blocking criteria: {}", failed.join(", ")) }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
