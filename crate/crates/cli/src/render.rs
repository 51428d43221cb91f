//! Plain-text tables for the terminal.

use std::fmt::Write;

use xlingual_core::consistency::{ConsistencyReport, MatrixCorrelation, PairMatrix};

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |v| format!("{v:.4}"))
}

pub fn summary(report: &ConsistencyReport) -> String {
    let p = &report.provenance;
    let langs: Vec<&str> = report.languages.iter().map(|l| l.as_str()).collect();
    let mut out = String::new();
    let _ = writeln!(out, "run {} model {} prompt {} seed {}", p.run_id, p.model_id, p.prompt_variant, p.seed);
    let _ = writeln!(out, "embeddings {}", p.embedding_provider);
    let _ = writeln!(
        out,
        "languages {} | items {} qa, {} timeliness",
        langs.join(" "),
        report.items.qa,
        report.items.timeliness
    );
    let _ = writeln!(out, "xSC {:>8}", num(Some(report.xsc)));
    let _ = writeln!(
        out,
        "xAC {:>8}{}",
        num(report.xac),
        degenerate_note(report.degenerate_pairs.xac)
    );
    let _ = writeln!(
        out,
        "xTC {:>8}{}",
        num(report.xtc),
        degenerate_note(report.degenerate_pairs.xtc)
    );
    let xc = report.xc.as_ref();
    let _ = writeln!(
        out,
        "xC  {:>8}{}",
        num(xc.map(|s| s.value)),
        if xc.is_some_and(|s| s.degenerate) {
            "  (floored: a component is not positive)"
        } else {
            ""
        }
    );
    out
}

fn degenerate_note(n: usize) -> String {
    if n == 0 {
        String::new()
    } else {
        format!("  ({n} degenerate pair(s) counted as 0)")
    }
}

/// Matrix with `*` after degenerate cells.
pub fn matrix(name: &str, m: &PairMatrix) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{name}");
    let _ = write!(out, "{:<6}", "");
    for l in &m.languages {
        let _ = write!(out, "{:>9}", l.as_str());
    }
    out.push('\n');
    for (i, l) in m.languages.iter().enumerate() {
        let _ = write!(out, "{:<6}", l.as_str());
        for j in 0..m.len() {
            let mut cell = num(m.get(i, j));
            if i != j && m.is_degenerate(i, j) {
                cell.push('*');
            }
            let _ = write!(out, "{cell:>9}");
        }
        out.push('\n');
    }
    out
}

pub fn full(report: &ConsistencyReport, metrics: &[String]) -> String {
    let mut out = summary(report);
    for name in metrics {
        if let Some(m) = report.matrix(name) {
            out.push('\n');
            out.push_str(&matrix(name, m));
        }
    }
    if !report.domains.is_empty() {
        let _ = writeln!(out, "\n{:<16}{:>6}{:>9}", "domain", "items", "xSC");
        for (domain, s) in &report.domains {
            let _ = writeln!(out, "{domain:<16}{:>6}{:>9}", s.items, num(Some(s.xsc)));
        }
    }
    out
}

pub fn correlation(metric: &str, c: &MatrixCorrelation) -> String {
    let mut out = String::new();
    let flag = |d: bool| if d { "  (degenerate: constant input)" } else { "" };
    let _ = writeln!(out, "pairs    {}", c.n_pairs);
    let _ = writeln!(out, "pearson  {:>8}{}", num(Some(c.pearson.value)), flag(c.pearson.degenerate));
    let _ = writeln!(out, "spearman {:>8}{}", num(Some(c.spearman.value)), flag(c.spearman.degenerate));
    let _ = writeln!(out, "\n{:<8}{:>9}{:>10}", "language", metric, "external");
    for row in &c.rows {
        let _ = writeln!(
            out,
            "{:<8}{:>9}{:>10}",
            row.language.as_str(),
            num(row.consistency),
            num(row.external)
        );
    }
    out
}
