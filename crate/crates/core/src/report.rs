//! Comparison tables and length-bucket CSVs.

use std::fmt::Write;

use crate::corpus::Speaker;
use crate::metrics::{csv_field, EvalSummary, GroupStats};
use crate::scalar::Scalar;

/// Placeholder for a cell with no utterances.
pub const EMPTY_CELL: &str = "\u{2014}";

/// WER as a percentage with two decimals (`0.4667` → `46.67`).
pub fn format_percent<T: Scalar>(wer: T) -> String {
    format!("{:.2}", wer.to_f64_lossy() * 100.0)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RenderedTable {
    pub markdown: String,
    pub csv: String,
}

const MD_HEADER: [&str; 9] = [
    "Condition",
    "Overall (macro)",
    "Child (macro)",
    "Adult (macro)",
    "Overall (pooled)",
    "Child (pooled)",
    "Adult (pooled)",
    "N",
    "Excluded",
];

const CSV_HEADER: &str =
    "condition,overall_macro,child_macro,adult_macro,overall_pooled,child_pooled,adult_pooled,count,excluded";

/// One row per condition, in the order given. Rates are percentages.
pub fn render_comparison_table<T: Scalar>(summaries: &[EvalSummary<T>]) -> RenderedTable {
    let mut md = String::new();
    let _ = writeln!(md, "| {} |", MD_HEADER.join(" | "));
    let _ = writeln!(md, "|{}", "---|".repeat(MD_HEADER.len()));
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');

    for s in summaries {
        let speaker = |sp: Speaker, f: fn(&GroupStats<T>) -> T| s.per_speaker.get(&sp).map(|g| format_percent(f(g)));
        let cells = [
            Some(format_percent(s.macro_wer)),
            speaker(Speaker::Child, |g| g.macro_wer),
            speaker(Speaker::Adult, |g| g.macro_wer),
            Some(format_percent(s.pooled_wer)),
            speaker(Speaker::Child, |g| g.pooled_wer),
            speaker(Speaker::Adult, |g| g.pooled_wer),
        ];
        let md_cells: Vec<String> = cells
            .iter()
            .map(|c| c.clone().unwrap_or_else(|| EMPTY_CELL.to_string()))
            .collect();
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} |",
            s.condition.replace('|', "\\|"),
            md_cells.join(" | "),
            s.count,
            s.excluded_count
        );
        let csv_cells: Vec<String> = cells.iter().map(|c| c.clone().unwrap_or_default()).collect();
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            csv_field(&s.condition),
            csv_cells.join(","),
            s.count,
            s.excluded_count
        );
    }
    RenderedTable { markdown: md, csv }
}

/// `bucket,condition,macro_wer,count` rows for every summary. `macro_wer`
/// is a ratio; empty buckets leave it blank.
pub fn render_bucket_csv<T: Scalar>(summaries: &[EvalSummary<T>]) -> String {
    let mut csv = String::from("bucket,condition,macro_wer,count\n");
    for s in summaries {
        for b in &s.buckets {
            let wer = b.macro_wer.map(|w| format!("{:.6}", w.to_f64_lossy())).unwrap_or_default();
            let _ = writeln!(csv, "{},{},{},{}", b.label, csv_field(&s.condition), wer, b.count);
        }
    }
    csv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::BucketRow;
    use std::collections::BTreeMap;

    fn summary(condition: &str, macro_wer: f64, adult: bool) -> EvalSummary {
        let mut per_speaker = BTreeMap::new();
        per_speaker.insert(
            Speaker::Child,
            GroupStats {
                macro_wer: 0.5,
                pooled_wer: 0.25,
                count: 2,
            },
        );
        if adult {
            per_speaker.insert(
                Speaker::Adult,
                GroupStats {
                    macro_wer: 0.1,
                    pooled_wer: 0.125,
                    count: 1,
                },
            );
        }
        EvalSummary {
            condition: condition.into(),
            macro_wer,
            pooled_wer: 0.2,
            count: 3,
            per_speaker,
            buckets: vec![
                BucketRow {
                    label: "1".into(),
                    macro_wer: Some(0.5),
                    count: 3,
                },
                BucketRow {
                    label: "2+".into(),
                    macro_wer: None,
                    count: 0,
                },
            ],
            excluded_count: 0,
        }
    }

    #[test]
    fn percent_formatting() {
        assert_eq!(format_percent(0.4667), "46.67");
        assert_eq!(format_percent(0.0f64), "0.00");
        assert_eq!(format_percent(1.5f32), "150.00");
        assert_eq!(format_percent(crate::Exact::new(1, 3)), "33.33");
    }

    #[test]
    fn table_layout() {
        let t = render_comparison_table(&[summary("zero-shot", 0.4667, true), summary("corrected", 0.3, false)]);
        let md: Vec<&str> = t.markdown.lines().collect();
        assert_eq!(md.len(), 4);
        assert!(md[0].starts_with("| Condition | Overall (macro) | Child (macro) | Adult (macro) |"));
        assert_eq!(md[2], "| zero-shot | 46.67 | 50.00 | 10.00 | 20.00 | 25.00 | 12.50 | 3 | 0 |");
        assert_eq!(md[3], "| corrected | 30.00 | 50.00 | \u{2014} | 20.00 | 25.00 | \u{2014} | 3 | 0 |");
        let csv: Vec<&str> = t.csv.lines().collect();
        assert_eq!(csv[0], CSV_HEADER);
        assert_eq!(csv[2], "corrected,30.00,50.00,,20.00,25.00,,3,0");
    }

    #[test]
    fn bucket_csv() {
        let csv = render_bucket_csv(&[summary("c", 0.5, true)]);
        assert_eq!(csv, "bucket,condition,macro_wer,count\n1,c,0.500000,3\n2+,c,,0\n");
    }
}
