//! Cross-run comparison tables. `ratio report` collects the metric bundles
//! referenced by a list of manifests and renders one row per run, with
//! optional threshold flags on failing cells.

use std::fs;
use std::path::Path;

use ratio_core::eval::MetricReport;
use ratio_core::threat::Norm;
use ratio_core::train::ObjectiveKind;

use crate::config::{ReportConfig, Thresholds};
use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use crate::pipeline::norm_label;

pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const REPORT_CSV_FILE: &str = "report.csv";

pub fn objective_label(objective: &ObjectiveKind) -> &'static str {
    match objective {
        ObjectiveKind::Plain => "plain",
        ObjectiveKind::OutlierExposure { .. } => "oe",
        ObjectiveKind::AdversarialTraining { .. } => "at",
        ObjectiveKind::Acet { .. } => "acet",
        ObjectiveKind::Ratio { .. } => "ratio",
    }
}

struct Row {
    run: String,
    objective: &'static str,
    metrics: MetricReport,
}

/// Robust-accuracy columns present across the rows, sorted by norm then
/// radius. Radii compare bitwise: columns merge only on exact equality.
fn threat_columns(rows: &[Row]) -> Vec<(Norm, f64)> {
    let mut cols: Vec<(Norm, f64)> = Vec::new();
    for row in rows {
        for entry in &row.metrics.robust_acc {
            if !cols
                .iter()
                .any(|(n, e)| *n == entry.norm && e.to_bits() == entry.epsilon.to_bits())
            {
                cols.push((entry.norm, entry.epsilon));
            }
        }
    }
    cols.sort_by(|a, b| {
        norm_label(a.0)
            .cmp(norm_label(b.0))
            .then(a.1.partial_cmp(&b.1).expect("radii are finite"))
    });
    cols
}

fn robust_cell(row: &Row, col: &(Norm, f64)) -> Option<f64> {
    row.metrics
        .robust_acc
        .iter()
        .find(|e| e.norm == col.0 && e.epsilon.to_bits() == col.1.to_bits())
        .map(|e| e.accuracy)
}

/// A table cell plus its threshold verdict; flagged cells render with `*`.
fn flagged(value: f64, violated: bool) -> String {
    if violated {
        format!("{value:.3}*")
    } else {
        format!("{value:.3}")
    }
}

fn below(value: f64, bound: Option<f64>) -> bool {
    bound.is_some_and(|b| value < b)
}

fn above(value: f64, bound: Option<f64>) -> bool {
    bound.is_some_and(|b| value > b)
}

fn render_text(rows: &[Row], thresholds: &Thresholds) -> String {
    let cols = threat_columns(rows);
    let mut header: Vec<String> = vec!["run".into(), "objective".into(), "clean".into()];
    for (norm, eps) in &cols {
        header.push(format!("racc {}@{}", norm_label(*norm), eps));
    }
    header.extend(["ece", "T", "auc", "wc_auc", "mmc"].map(String::from));

    let mut table: Vec<Vec<String>> = vec![header];
    for row in rows {
        let m = &row.metrics;
        let mut cells = vec![
            row.run.clone(),
            row.objective.to_string(),
            flagged(m.clean_acc, below(m.clean_acc, thresholds.min_clean_acc)),
        ];
        for col in &cols {
            cells.push(match robust_cell(row, col) {
                Some(acc) => flagged(acc, below(acc, thresholds.min_robust_acc)),
                None => "-".into(),
            });
        }
        cells.push(flagged(m.ece, above(m.ece, thresholds.max_ece)));
        cells.push(format!("{:.3}", m.temperature));
        cells.push(flagged(m.mean_auc, below(m.mean_auc, thresholds.min_auc)));
        cells.push(flagged(
            m.mean_wc_auc,
            below(m.mean_wc_auc, thresholds.min_wc_auc),
        ));
        cells.push(flagged(m.mean_mmc, above(m.mean_mmc, thresholds.max_mmc)));
        table.push(cells);
    }

    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &table {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            if c > 0 {
                line.push_str("  ");
            }
            line.push_str(cell);
            if c + 1 < row.len() {
                for _ in cell.len()..widths[c] {
                    line.push(' ');
                }
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// Machine-readable twin of the text table: full-precision values, no flags,
/// empty cells where a run lacks a robust-accuracy column.
fn render_csv(rows: &[Row]) -> String {
    let cols = threat_columns(rows);
    let mut out = String::from("run,objective,clean_acc");
    for (norm, eps) in &cols {
        out.push_str(&format!(",racc_{}_{}", norm_label(*norm), eps));
    }
    out.push_str(",ece,temperature,mean_auc,mean_wc_auc,mean_mmc\n");
    for row in rows {
        let m = &row.metrics;
        out.push_str(&format!("{},{},{}", row.run, row.objective, m.clean_acc));
        for col in &cols {
            match robust_cell(row, col) {
                Some(acc) => out.push_str(&format!(",{acc}")),
                None => out.push(','),
            }
        }
        out.push_str(&format!(
            ",{},{},{},{},{}\n",
            m.ece, m.temperature, m.mean_auc, m.mean_wc_auc, m.mean_mmc
        ));
    }
    out
}

fn run_name(manifest_path: &Path) -> String {
    let dir = if manifest_path.is_dir() {
        manifest_path
    } else {
        manifest_path.parent().unwrap_or(Path::new("."))
    };
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

fn load_row(path: &Path) -> Result<Row> {
    let manifest = RunManifest::load_file(path)?;
    let dir = if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().unwrap_or(Path::new(".")).to_path_buf()
    };
    let metrics_path = manifest
        .artifact_path(&dir, "metrics", "evaluate")
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let text = fs::read_to_string(&metrics_path).map_err(|e| {
        CliError::Runtime(format!("cannot read {}: {e}", metrics_path.display()))
    })?;
    let metrics: MetricReport = serde_json::from_str(&text).map_err(|e| {
        CliError::Runtime(format!("{}: malformed metrics: {e}", metrics_path.display()))
    })?;
    Ok(Row {
        run: run_name(path),
        objective: objective_label(&manifest.config.train.objective),
        metrics,
    })
}

pub fn cmd_report(config: &ReportConfig) -> Result<()> {
    let rows: Vec<Row> = config
        .manifests
        .iter()
        .map(|path| load_row(path))
        .collect::<Result<_>>()?;

    let text = render_text(&rows, &config.thresholds);
    let csv = render_csv(&rows);
    fs::create_dir_all(&config.out_dir)?;
    fs::write(config.out_dir.join(REPORT_TEXT_FILE), &text)?;
    fs::write(config.out_dir.join(REPORT_CSV_FILE), &csv)?;
    print!("{text}");
    println!(
        "wrote {} and {}",
        config.out_dir.join(REPORT_TEXT_FILE).display(),
        config.out_dir.join(REPORT_CSV_FILE).display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ratio_core::eval::{OodMetrics, RobustAccuracyEntry};
    use std::collections::BTreeMap;

    fn metrics(clean: f64, robust: Vec<RobustAccuracyEntry>, mmc: f64) -> MetricReport {
        let mut per_ood = BTreeMap::new();
        per_ood.insert(
            "noise".to_string(),
            OodMetrics {
                auc: 0.9,
                wc_auc: 0.8,
                mmc,
            },
        );
        MetricReport::new(clean, robust, 0.05, 1.0, per_ood).unwrap()
    }

    fn entry(eps: f64, acc: f64) -> RobustAccuracyEntry {
        RobustAccuracyEntry {
            norm: Norm::L2,
            epsilon: eps,
            accuracy: acc,
        }
    }

    #[test]
    fn text_table_aligns_and_flags() {
        let rows = vec![
            Row {
                run: "run_plain".into(),
                objective: "plain",
                metrics: metrics(0.99, vec![entry(0.14, 0.55)], 0.9),
            },
            Row {
                run: "x".into(),
                objective: "ratio",
                metrics: metrics(1.0, vec![entry(0.14, 0.97)], 0.4),
            },
        ];
        let thresholds = Thresholds {
            min_robust_acc: Some(0.9),
            max_mmc: Some(0.5),
            ..Thresholds::default()
        };
        let text = render_text(&rows, &thresholds);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("run        objective"), "{text}");
        assert!(lines[1].contains("0.550*"), "{text}");
        assert!(lines[1].contains("0.900*"), "{text}");
        assert!(lines[2].contains("0.970"), "{text}");
        assert!(!lines[2].contains('*'), "{text}");
        let col = lines[0].find("racc l2@0.14").unwrap();
        assert_eq!(&lines[1][col..col + 6], "0.550*");
    }

    #[test]
    fn csv_leaves_missing_columns_empty() {
        let rows = vec![
            Row {
                run: "a".into(),
                objective: "at",
                metrics: metrics(1.0, vec![entry(0.1, 0.9), entry(0.2, 0.8)], 0.5),
            },
            Row {
                run: "b".into(),
                objective: "oe",
                metrics: metrics(1.0, vec![entry(0.2, 0.7)], 0.5),
            },
        ];
        let csv = render_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "run,objective,clean_acc,racc_l2_0.1,racc_l2_0.2,ece,temperature,mean_auc,mean_wc_auc,mean_mmc"
        );
        assert!(lines[1].starts_with("a,at,1,0.9,0.8,"), "{csv}");
        assert!(lines[2].starts_with("b,oe,1,,0.7,"), "{csv}");
    }

    #[test]
    fn objective_labels_cover_all_kinds() {
        assert_eq!(objective_label(&ObjectiveKind::Plain), "plain");
        assert_eq!(
            objective_label(&ObjectiveKind::OutlierExposure { lambda: 1.0 }),
            "oe"
        );
        assert_eq!(
            objective_label(&ObjectiveKind::AdversarialTraining { eps_in: 0.1 }),
            "at"
        );
        assert_eq!(
            objective_label(&ObjectiveKind::Acet {
                eps_out: 0.1,
                lambda: 1.0
            }),
            "acet"
        );
        assert_eq!(
            objective_label(&ObjectiveKind::Ratio {
                eps_in: 0.1,
                eps_out: 0.1,
                lambda: 1.0,
                clean_in_fraction: 0.5
            }),
            "ratio"
        );
    }
}
