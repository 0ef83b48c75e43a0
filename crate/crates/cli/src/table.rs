//! Per-class metrics table printed by `train`, `prune` and `eval`.

use std::fmt::Write as _;

use ecgprune::dataset::BeatClass;
use ecgprune::metrics::{overall_metrics, per_class_metrics, ConfusionMatrix, MetricsRow};

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

fn row(out: &mut String, name: &str, m: &MetricsRow) {
    let mark = if m.degenerate.any() { " *" } else { "" };
    let _ = writeln!(
        out,
        "{name:<6}{:>10}{:>13}{:>13}{:>11}{:>10}{mark}",
        pct(m.accuracy),
        pct(m.sensitivity),
        pct(m.specificity),
        pct(m.precision),
        pct(m.f1)
    );
}

/// Rows N, S, V, F, Q and Total; percentages with two decimals.
pub fn metrics_table(cm: &ConfusionMatrix) -> String {
    let mut out = format!(
        "{:<6}{:>10}{:>13}{:>13}{:>11}{:>10}\n",
        "Class", "Accuracy", "Sensitivity", "Specificity", "Precision", "F1"
    );
    let mut degenerate = false;
    for class in BeatClass::ALL {
        let m = per_class_metrics(cm, class.index());
        degenerate |= m.degenerate.any();
        row(&mut out, &class.token().to_string(), &m);
    }
    let total = overall_metrics(cm);
    degenerate |= total.degenerate.any();
    row(&mut out, "Total", &total);
    if degenerate {
        out.push_str("* a ratio had a zero denominator and is shown as 0\n");
    }
    out
}
