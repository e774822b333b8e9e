//! CSV tables and SVG profile plots.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use cardioregion::domain::{LabelCode, RegionLabel};
use cardioregion::io::write_atomic;
use cardioregion::metrics::{
    ClassifierMetrics, DeltaCell, DscProfile, DscTable, GapTest, RegionStats, PROFILE_POINTS,
};
use cardioregion::models::EpochLog;
use cardioregion::pipeline::Arm;

fn finish(path: &Path, w: csv::Writer<Vec<u8>>) -> Result<()> {
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?;
    write_atomic(path, &bytes)?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `mean* (sd)` with two decimals; `n/a` for an empty cell.
fn mean_sd_cell(mean: Option<f64>, sd: Option<f64>, significant: bool) -> String {
    match mean {
        None => "n/a".into(),
        Some(m) => {
            let star = if significant { "*" } else { "" };
            let sd = sd.map_or("n/a".into(), |s| format!("{s:.2}"));
            format!("{m:.2}{star} ({sd})")
        }
    }
}

pub fn approach_name(arm: Arm) -> &'static str {
    match arm {
        Arm::Baseline => "Baseline",
        Arm::Sampled => "Batch sampling",
        Arm::Classified => "Classification + segmentation",
        Arm::Oracle => "Ground-truth region + segmentation",
    }
}

pub fn write_dsc_table(path: &Path, table: &DscTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["stack_id", "phase", "slice_index", "region", "label", "dsc"])?;
    for r in &table.rows {
        w.write_record([
            r.stack_id.clone(),
            r.phase.to_string(),
            r.slice_index.to_string(),
            r.region.to_string(),
            r.label.to_string(),
            r.dsc.to_string(),
        ])?;
    }
    finish(path, w)
}

/// Rows dataset × label, columns Base / Middle / Apex. Asterisks mark a
/// significant Welch difference from the middle region.
pub fn write_region_stats(path: &Path, dataset: &str, stats: &RegionStats, gaps: &[GapTest]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dataset", "label", "Base", "Middle", "Apex"])?;
    for label in LabelCode::FOREGROUND {
        let mut row = vec![dataset.to_string(), label.to_string()];
        for region in RegionLabel::CARDIAC {
            let c = stats.cell(region, label);
            let sig = gaps.iter().any(|g| g.label == label && g.region == region && g.significant());
            row.push(mean_sd_cell(c.mean, c.sd, sig));
        }
        w.write_record(&row)?;
    }
    finish(path, w)
}

/// Unformatted companion of the region table, including n and the
/// non-cardiac cell.
pub fn write_region_stats_long(path: &Path, stats: &RegionStats, gaps: &[GapTest]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "region", "n", "mean_pct", "sd_pct", "t_vs_middle", "df", "p_vs_middle"])?;
    for c in &stats.cells {
        let t = gaps.iter().find(|g| g.label == c.label && g.region == c.region).and_then(|g| g.test);
        w.write_record([
            c.label.to_string(),
            c.region.to_string(),
            c.n.to_string(),
            opt(c.mean),
            opt(c.sd),
            opt(t.map(|t| t.t)),
            opt(t.map(|t| t.df)),
            opt(t.map(|t| t.p_two_sided)),
        ])?;
    }
    finish(path, w)
}

/// Rows Precision [%] / Recall [%], one column per classifier.
pub fn write_classifier_metrics(path: &Path, classifiers: &[(String, ClassifierMetrics)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![String::new()];
    header.extend(classifiers.iter().map(|(n, _)| n.clone()));
    w.write_record(&header)?;
    let mut p = vec!["Precision [%]".to_string()];
    let mut r = vec!["Recall [%]".to_string()];
    for (_, m) in classifiers {
        p.push(format!("{:.2}", 100.0 * m.weighted_precision));
        r.push(format!("{:.2}", 100.0 * m.weighted_recall));
    }
    w.write_record(&p)?;
    w.write_record(&r)?;
    finish(path, w)
}

pub fn write_classifier_per_class(path: &Path, m: &ClassifierMetrics) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["region", "precision", "recall", "support"])?;
    for c in &m.per_class {
        w.write_record([c.region.to_string(), opt(c.precision), opt(c.recall), c.support.to_string()])?;
    }
    finish(path, w)
}

/// Rows dataset × approach; a (Base, Apex) column pair per label with
/// `Δmean* (Δsd)` cells in percent.
pub fn write_delta_table(path: &Path, dataset: &str, rows: &[(Arm, Vec<DeltaCell>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["dataset".to_string(), "approach".to_string()];
    for label in LabelCode::FOREGROUND {
        for region in [RegionLabel::Base, RegionLabel::Apex] {
            header.push(format!("{label} {region}"));
        }
    }
    w.write_record(&header)?;
    for (arm, cells) in rows {
        let mut row = vec![dataset.to_string(), approach_name(*arm).to_string()];
        for label in LabelCode::FOREGROUND {
            for region in [RegionLabel::Base, RegionLabel::Apex] {
                let c = cells.iter().find(|c| c.label == label && c.region == region);
                row.push(c.map_or("n/a".into(), |c| mean_sd_cell(c.delta_mean, c.delta_sd, c.significant)));
            }
        }
        w.write_record(&row)?;
    }
    finish(path, w)
}

pub fn write_delta_long(path: &Path, rows: &[(Arm, Vec<DeltaCell>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["arm", "label", "region", "n_pairs", "delta_mean_pct", "delta_sd_pct", "p_value", "significant"])?;
    for (arm, cells) in rows {
        for c in cells {
            w.write_record([
                arm.to_string(),
                c.label.to_string(),
                c.region.to_string(),
                c.n_pairs.to_string(),
                opt(c.delta_mean),
                opt(c.delta_sd),
                opt(c.p_value),
                c.significant.to_string(),
            ])?;
        }
    }
    finish(path, w)
}

/// One row per grid position; a `<label>_<arm>` column per label and arm.
pub fn write_profiles(path: &Path, arms: &[(Arm, Vec<Option<DscProfile>>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["position".to_string()];
    for label in LabelCode::FOREGROUND {
        for (arm, _) in arms {
            header.push(format!("{label}_{arm}"));
        }
    }
    w.write_record(&header)?;
    for k in 0..PROFILE_POINTS {
        let mut row = vec![(k as f64 / (PROFILE_POINTS - 1) as f64).to_string()];
        for (li, _) in LabelCode::FOREGROUND.iter().enumerate() {
            for (_, profiles) in arms {
                row.push(opt(profiles[li].as_ref().map(|p| p.values[k])));
            }
        }
        w.write_record(&row)?;
    }
    finish(path, w)
}

pub fn write_training_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "lr", "train_loss", "val_metric"])?;
    for e in log {
        w.write_record([e.epoch.to_string(), e.lr.to_string(), e.train_loss.to_string(), opt(e.val_metric)])?;
    }
    finish(path, w)
}

fn arm_colour(arm: Arm) -> &'static str {
    match arm {
        Arm::Baseline => "#1f77b4",
        Arm::Sampled => "#ff7f0e",
        Arm::Classified => "#2ca02c",
        Arm::Oracle => "#d62728",
    }
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;

/// Line plot of DSC against normalized base→apex position, x and y both on
/// [0, 1], one curve per arm.
pub fn profile_svg(label: LabelCode, curves: &[(Arm, &DscProfile)]) -> String {
    let px = |x: f64| MARGIN + x * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - y.clamp(0.0, 1.0) * (H - 2.0 * MARGIN);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{label} interpolated DSC</text>"#,
        W / 2.0
    );
    let _ = writeln!(
        s,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        px(0.0), py(0.0), px(1.0), py(0.0), px(0.0), py(0.0), px(0.0), py(1.0)
    );
    for t in 0..=5 {
        let v = t as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="10">{v:.1}</text><text x="{}" y="{}" text-anchor="end" font-size="10">{v:.1}</text>"#,
            px(v),
            py(0.0) + 14.0,
            px(0.0) - 4.0,
            py(v) + 3.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">normalized position (base 0, apex 1)</text>"#,
        W / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">DSC</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (i, (arm, p)) in curves.iter().enumerate() {
        let n = p.values.len().max(2) - 1;
        let pts: Vec<String> = p
            .values
            .iter()
            .enumerate()
            .map(|(k, &v)| format!("{:.2},{:.2}", px(k as f64 / n as f64), py(v)))
            .collect();
        let c = arm_colour(*arm);
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        let ly = MARGIN + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{c}" stroke-width="2"/><text x="{}" y="{}" font-size="11">{arm}</text>"#,
            W - MARGIN - 110.0,
            W - MARGIN - 90.0,
            W - MARGIN - 85.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_format() {
        assert_eq!(mean_sd_cell(Some(87.534), Some(23.287), true), "87.53* (23.29)");
        assert_eq!(mean_sd_cell(Some(-0.06), Some(0.01), false), "-0.06 (0.01)");
        assert_eq!(mean_sd_cell(None, None, false), "n/a");
    }

    #[test]
    fn svg_has_curves_and_unit_axes() {
        let p = DscProfile {
            label: LabelCode::Lvbp,
            values: vec![0.5; PROFILE_POINTS],
            n_stacks: 1,
        };
        let s = profile_svg(LabelCode::Lvbp, &[(Arm::Baseline, &p), (Arm::Oracle, &p)]);
        assert_eq!(s.matches("<polyline").count(), 2);
        assert!(s.contains(">0.0<") && s.contains(">1.0<"));
    }
}
