use serde::{Deserialize, Serialize};

use super::{PerModelReport, PerOpReport};

pub const PER_MODEL_HEADERS: [&str; 7] = [
    "# Trials",
    "95%-CI Time (ms)",
    "Mdn. Time (ms)",
    "Max. Time (ms)",
    "Min. Time (ms)",
    "Memory (KB)",
    "Storage (KB)",
];

pub const PER_OP_HEADERS: [&str; 6] = ["Ops", "Time (us)", "Time (%)", "Asso. Params", "Memory (KB)", "Storage (KB)"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "granularity", rename_all = "kebab-case")]
pub enum Report {
    PerModel(PerModelReport),
    PerOp(PerOpReport),
}

pub fn render_table(report: &Report) -> String {
    match report {
        Report::PerModel(r) => render_per_model(r),
        Report::PerOp(r) => render_per_op(r),
    }
}

pub fn render_per_model(r: &PerModelReport) -> String {
    let row = vec![
        r.num_trials.to_string(),
        format!("[{:.3}, {:.3}]", r.ci95_low_ms, r.ci95_high_ms),
        format!("{:.3}", r.median_ms),
        format!("{:.3}", r.max_ms),
        format!("{:.3}", r.min_ms),
        format!("{:.3}", r.memory_kb),
        format!("{:.3}", r.storage_kb),
    ];
    layout(&PER_MODEL_HEADERS, &[row], &[false; 7])
}

pub fn render_per_op(r: &PerOpReport) -> String {
    let rows: Vec<Vec<String>> = r
        .rows
        .iter()
        .map(|row| {
            vec![
                row.op_name.clone(),
                format!("{:.3}", row.time_us),
                format!("{:.2}%", row.time_pct),
                row.assoc_params.join(", "),
                format!("{:.3}", row.memory_kb),
                format!("{:.3}", row.storage_kb),
            ]
        })
        .collect();
    layout(&PER_OP_HEADERS, &rows, &[true, false, false, true, false, false])
}

/// Fixed-width columns separated by two spaces; `left[i]` marks text
/// columns, the others are right-aligned.
fn layout(headers: &[&str], rows: &[Vec<String>], left: &[bool]) -> String {
    let mut width: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| -> String {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| if left[i] { format!("{c:<w$}", w = width[i]) } else { format!("{c:>w$}", w = width[i]) })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = String::new();
    let header_cells: Vec<String> = headers.iter().map(|h| h.to_string()).collect();
    out.push_str(&line(&header_cells));
    out.push('\n');
    out.push_str(&width.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("  "));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzer::PerOpRow;

    #[test]
    fn empty_per_op_is_header_only() {
        let t = render_per_op(&PerOpReport::default());
        assert_eq!(t.lines().count(), 2);
        for h in PER_OP_HEADERS {
            assert!(t.contains(h));
        }
    }

    #[test]
    fn deterministic_rendering() {
        let r = PerOpReport {
            rows: vec![PerOpRow {
                op_name: "fused_nn_relu".into(),
                time_us: 1.5,
                time_pct: 100.0,
                assoc_params: vec![],
                memory_kb: 0.016,
                storage_kb: 0.5,
            }],
        };
        assert_eq!(render_per_op(&r), render_per_op(&r));
        assert!(render_per_op(&r).contains("100.00%"));
    }
}
