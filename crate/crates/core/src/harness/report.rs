//! Table rendering of an [`EvalReport`].
//!
//! One row per (strategy, score). Columns: method, ID accuracy, one
//! accuracy per OOD split, score, one `FPR/AUROC` cell per anomaly split,
//! and the mean over anomaly splits (omitted when there are none). Values
//! are percentages with two decimals.

use std::fmt::Write as _;
use std::str::FromStr;

use super::experiment::EvalReport;
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::arg(format!("unknown report format {other:?} (expected csv or markdown)"))),
        }
    }
}

pub fn percent(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

pub fn pair(fpr: f64, auroc: f64) -> String {
    format!("{}/{}", percent(fpr), percent(auroc))
}

fn header(report: &EvalReport) -> Vec<String> {
    let mut h = vec!["method".to_string(), "id_acc".to_string()];
    h.extend(report.meta.ood_splits.iter().cloned());
    h.push("score".into());
    h.extend(report.meta.anomaly_splits.iter().cloned());
    if !report.meta.anomaly_splits.is_empty() {
        h.push("mean".into());
    }
    h
}

/// Markdown rows use display labels and blank accuracies after a strategy's first row.
fn rows(report: &EvalReport, markdown: bool) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for s in &report.strategies {
        for (i, &kind) in report.meta.scores.iter().enumerate() {
            let dash = markdown && i > 0;
            let acc = |v: f64| if dash { "-".to_string() } else { percent(v) };
            let mut row = vec![
                if markdown { s.strategy.label().to_string() } else { s.strategy.name().to_string() },
                acc(s.id_accuracy),
            ];
            row.extend(s.ood.iter().map(|c| acc(c.accuracy)));
            row.push(if markdown { kind.label().to_string() } else { kind.name().to_string() });
            for split in &report.meta.anomaly_splits {
                let cell = s
                    .anomaly_cell(split, kind)
                    .map(|c| pair(c.fpr, c.auroc))
                    .unwrap_or_else(|| "-".into());
                row.push(cell);
            }
            if let Some((fpr, auroc)) = s.mean_anomaly(kind) {
                row.push(pair(fpr, auroc));
            }
            out.push(row);
        }
    }
    out
}

pub fn emit_report(report: &EvalReport, format: ReportFormat) -> String {
    let mut text = String::new();
    match format {
        ReportFormat::Csv => {
            text.push_str(&csv_line(&header(report)));
            for row in rows(report, false) {
                text.push_str(&csv_line(&row));
            }
        }
        ReportFormat::Markdown => {
            let mut h: Vec<String> = vec!["Method".into(), "ID Acc".into()];
            h.extend(report.meta.ood_splits.iter().cloned());
            h.push("Score".into());
            h.extend(report.meta.anomaly_splits.iter().cloned());
            if !report.meta.anomaly_splits.is_empty() {
                h.push("Mean".into());
            }
            let _ = writeln!(text, "| {} |", h.join(" | "));
            let _ = writeln!(text, "|{}", "---|".repeat(h.len()));
            for row in rows(report, true) {
                let _ = writeln!(text, "| {} |", row.join(" | "));
            }
        }
    }
    text
}

fn csv_line(cells: &[String]) -> String {
    let quoted: Vec<String> = cells
        .iter()
        .map(|c| {
            if c.contains([',', '"', '\n']) {
                format!("\"{}\"", c.replace('"', "\"\""))
            } else {
                c.clone()
            }
        })
        .collect();
    quoted.join(",") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FusionStrategy;
    use crate::harness::experiment::{AccuracyCell, AnomalyCell, RunMeta, StrategyReport};
    use crate::scoring::ScoreKind;

    fn published_row() -> EvalReport {
        // Published ViT-Giant CLS;μ_R MSP row.
        let ood = [("in_a", 0.7809), ("in_r", 0.8051), ("in_s", 0.6443)];
        let anomaly = [
            ("inat", 0.4553, 0.8607),
            ("sun", 0.1671, 0.9671),
            ("places", 0.5888, 0.8279),
            ("textures", 0.1178, 0.9748),
            ("openimage_o", 0.3706, 0.9159),
            ("imagenet_o", 0.3376, 0.9222),
        ];
        EvalReport {
            meta: RunMeta {
                mode: None,
                master_seed: None,
                data_seed: None,
                backbone_seed: None,
                probe_seed: None,
                config_hash: None,
                classes: 1000,
                temperature: 1.0,
                target_tpr: 0.95,
                ood_splits: ood.iter().map(|o| o.0.to_string()).collect(),
                anomaly_splits: anomaly.iter().map(|a| a.0.to_string()).collect(),
                scores: vec![ScoreKind::Msp],
            },
            strategies: vec![StrategyReport {
                strategy: FusionStrategy::ClsReg,
                id_accuracy: 0.8657,
                ood: ood
                    .iter()
                    .map(|(s, a)| AccuracyCell {
                        split: s.to_string(),
                        accuracy: *a,
                    })
                    .collect(),
                anomaly: anomaly
                    .iter()
                    .map(|(s, f, a)| AnomalyCell {
                        split: s.to_string(),
                        score: ScoreKind::Msp,
                        fpr: *f,
                        auroc: *a,
                    })
                    .collect(),
            }],
        }
    }

    #[test]
    fn renders_published_row() {
        let csv = emit_report(&published_row(), ReportFormat::Csv);
        let row = csv.lines().nth(1).unwrap();
        assert_eq!(
            row,
            "cls_reg,86.57,78.09,80.51,64.43,msp,45.53/86.07,16.71/96.71,58.88/82.79,\
             11.78/97.48,37.06/91.59,33.76/92.22,33.95/91.14"
        );
    }

    #[test]
    fn mean_column_omitted_without_anomaly_splits() {
        let mut r = published_row();
        r.meta.anomaly_splits.clear();
        r.strategies[0].anomaly.clear();
        let csv = emit_report(&r, ReportFormat::Csv);
        assert_eq!(csv.lines().next().unwrap(), "method,id_acc,in_a,in_r,in_s,score");
        assert_eq!(csv.lines().nth(1).unwrap(), "cls_reg,86.57,78.09,80.51,64.43,msp");
    }

    #[test]
    fn markdown_dashes_repeated_accuracies() {
        let mut r = published_row();
        r.meta.scores.push(ScoreKind::Energy);
        let extra: Vec<AnomalyCell> = r.strategies[0]
            .anomaly
            .iter()
            .map(|c| AnomalyCell {
                score: ScoreKind::Energy,
                ..c.clone()
            })
            .collect();
        r.strategies[0].anomaly.extend(extra);
        let md = emit_report(&r, ReportFormat::Markdown);
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("| CLS;μ_R | 86.57 | 78.09"));
        assert!(lines[3].starts_with("| CLS;μ_R | - | - | - | - |"));
    }

    #[test]
    fn format_parses() {
        assert_eq!("CSV".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
        assert_eq!("md".parse::<ReportFormat>().unwrap(), ReportFormat::Markdown);
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}
