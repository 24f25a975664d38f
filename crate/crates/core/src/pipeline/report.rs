use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{reports_tsv, MetricReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Tsv,
    Json,
}

/// Writes reports to `path`. TSV output holds one table per task, in order
/// of first appearance.
pub fn emit_report(reports: &[MetricReport], format: ReportFormat, path: &Path) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Data("no reports to emit".into()));
    }
    let text = match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(reports)?;
            s.push('\n');
            s
        }
        ReportFormat::Tsv => {
            let mut tasks: Vec<&str> = Vec::new();
            for r in reports {
                if !tasks.contains(&r.task.as_str()) {
                    tasks.push(&r.task);
                }
            }
            let tables = tasks
                .into_iter()
                .map(|t| reports_tsv(&reports.iter().filter(|r| r.task == t).cloned().collect::<Vec<_>>()))
                .collect::<Result<Vec<_>>>()?;
            tables.join("\n")
        }
    };
    fs::write(path, text)?;
    Ok(())
}

pub fn load_reports(path: &Path) -> Result<Vec<MetricReport>> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Category;
    use crate::eval::LangMetrics;

    fn sample() -> MetricReport {
        let langs = vec![
            LangMetrics::from_ranks("en", Category::Sup, &[1, 1, 2, 4, 1, 3, 1, 1, 9, 1], 10).unwrap(),
            LangMetrics::from_ranks("pt", Category::ZsUn, &[2, 1], 10).unwrap(),
        ];
        MetricReport::new("alignment", "FUSION", 10, langs)
    }

    #[test]
    fn json_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        emit_report(&[sample()], ReportFormat::Json, &path).unwrap();
        assert_eq!(load_reports(&path).unwrap(), vec![sample()]);
    }

    #[test]
    fn tsv_values_have_one_decimal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.tsv");
        emit_report(&[sample()], ReportFormat::Tsv, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("FUSION\ten\tSup\t10\t60.0\t100.0\t"));
        assert!(text.contains("FUSION\tpt\tZS-Un\t2\t50.0\t100.0\t75.0"));
    }

    #[test]
    fn empty_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_report(&[], ReportFormat::Tsv, &dir.path().join("r.tsv")).is_err());
    }
}
