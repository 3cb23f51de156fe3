//! CSV reports and dense mask dumps.

use std::cmp::Ordering;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::SimilarityReport;
use crate::oracle::MaskSequence;

pub const REPORT_HEADER: [&str; 9] = [
    "policy",
    "alpha",
    "budget",
    "layer",
    "head",
    "cosine",
    "mask_overlap",
    "output_drift",
    "seed",
];

pub const SUMMARY_HEADER: [&str; 8] = [
    "policy",
    "alpha",
    "budget",
    "mode",
    "cosine",
    "mask_overlap",
    "output_drift",
    "seed",
];

/// Formats a real with 6 significant digits, like C's `%g`.
pub fn fmt_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    // rounding can carry into the next decade, e.g. 999999.5
    let probe = format!("{:.5e}", v);
    let exp = probe
        .split_once('e')
        .and_then(|(_, e)| e.parse::<i32>().ok())
        .unwrap_or(exp);
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, v);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let (mant, e) = probe.split_once('e').expect("scientific format");
        let mant = if mant.contains('.') {
            mant.trim_end_matches('0').trim_end_matches('.')
        } else {
            mant
        };
        let sign = if e.starts_with('-') { "-" } else { "+" };
        format!(
            "{mant}e{sign}{:02}",
            e.trim_start_matches('-').parse::<i32>().unwrap()
        )
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_sig6).unwrap_or_default()
}

struct Row {
    policy: &'static str,
    alpha: Option<f64>,
    budget: usize,
    /// `None` for the average row, which sorts last.
    unit: Option<(usize, usize)>,
    seed: u64,
    fields: [String; 9],
}

fn cmp_rows(a: &Row, b: &Row) -> Ordering {
    let alpha = |r: &Row| r.alpha.unwrap_or(f64::NEG_INFINITY);
    a.policy
        .cmp(b.policy)
        .then(alpha(a).total_cmp(&alpha(b)))
        .then(a.budget.cmp(&b.budget))
        .then(match (a.unit, b.unit) {
            (Some(x), Some(y)) => x.cmp(&y),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        })
        .then(a.seed.cmp(&b.seed))
}

/// Renders the long-form report: one row per (report, layer, head) plus one
/// `AVERAGE` row per report, sorted by (policy, alpha, budget, layer, head).
pub fn render_report_csv(reports: &[SimilarityReport]) -> Result<Vec<u8>> {
    if reports.is_empty() {
        return Err(Error::NothingToWrite);
    }
    let mut rows = Vec::new();
    for r in reports {
        let name = r.policy.name();
        let alpha = r.policy.alpha();
        for h in &r.heads {
            rows.push(Row {
                policy: name,
                alpha,
                budget: r.budget,
                unit: Some((h.layer, h.head)),
                seed: r.seed,
                fields: [
                    name.into(),
                    fmt_opt(alpha),
                    r.budget.to_string(),
                    h.layer.to_string(),
                    h.head.to_string(),
                    fmt_sig6(h.cosine),
                    fmt_sig6(h.mask_overlap),
                    String::new(),
                    r.seed.to_string(),
                ],
            });
        }
        rows.push(Row {
            policy: name,
            alpha,
            budget: r.budget,
            unit: None,
            seed: r.seed,
            fields: [
                name.into(),
                fmt_opt(alpha),
                r.budget.to_string(),
                "AVERAGE".into(),
                "AVERAGE".into(),
                fmt_sig6(r.mean_cosine),
                fmt_sig6(r.mean_overlap),
                fmt_opt(r.output_drift),
                r.seed.to_string(),
            ],
        });
    }
    rows.sort_by(cmp_rows);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_HEADER)?;
    for r in &rows {
        w.write_record(&r.fields)?;
    }
    w.into_inner()
        .map_err(|e| Error::Malformed(format!("csv buffer: {e}")))
}

pub fn write_report_csv(reports: &[SimilarityReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = render_report_csv(reports)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// One row per report with head-averaged metrics, in the given order.
pub fn render_summary_csv(reports: &[SimilarityReport]) -> Result<Vec<u8>> {
    if reports.is_empty() {
        return Err(Error::NothingToWrite);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER)?;
    for r in reports {
        w.write_record([
            r.policy.name().to_string(),
            fmt_opt(r.policy.alpha()),
            r.budget.to_string(),
            r.mode.as_str().to_string(),
            fmt_sig6(r.mean_cosine),
            fmt_sig6(r.mean_overlap),
            fmt_opt(r.output_drift),
            r.seed.to_string(),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::Malformed(format!("csv buffer: {e}")))
}

pub fn write_summary_csv(reports: &[SimilarityReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = render_summary_csv(reports)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `{prefix}_L{layer}_H{head}.txt` per head into `dir`: `seq_len` lines
/// of space-separated 0/1 flags, row `q` marking the keys kept at step `q`.
pub fn write_mask_dump(
    mask: &MaskSequence,
    dir: impl AsRef<Path>,
    prefix: &str,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (unit, (layer, head)) in mask.grid().iter().enumerate() {
        let path = dir.join(format!("{prefix}_L{layer}_H{head}.txt"));
        let mut buf = Vec::new();
        for row in mask.dense(unit) {
            let line: Vec<&str> = row
                .iter()
                .map(|&b| if b == 1 { "1" } else { "0" })
                .collect();
            writeln!(buf, "{}", line.join(" ")).expect("write to Vec");
        }
        fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attn_model::trace::HeadGrid;
    use crate::metrics::{EvalMode, PerHead};
    use crate::scoring::PolicyKind;

    #[test]
    fn sig6() {
        assert_eq!(fmt_sig6(1.0), "1");
        assert_eq!(fmt_sig6(0.5), "0.5");
        assert_eq!(fmt_sig6(0.123456789), "0.123457");
        assert_eq!(fmt_sig6(123456.7), "123457");
        assert_eq!(fmt_sig6(1234567.0), "1.23457e+06");
        assert_eq!(fmt_sig6(0.0000123456), "1.23456e-05");
        assert_eq!(fmt_sig6(0.000123456), "0.000123456");
        assert_eq!(fmt_sig6(0.9999999), "1");
        assert_eq!(fmt_sig6(999999.5), "1e+06");
        assert_eq!(fmt_sig6(-0.25), "-0.25");
    }

    fn report(policy: PolicyKind, heads: usize, seed: u64) -> SimilarityReport {
        let grid = HeadGrid::new(1, heads);
        let cos = PerHead {
            per_unit: (0..heads).map(|h| 0.9 - h as f64 * 0.1).collect(),
            mean: 0.85,
        };
        let ov = PerHead {
            per_unit: vec![0.5; heads],
            mean: 0.5,
        };
        SimilarityReport::assemble(policy, 4, seed, EvalMode::Replay, grid, &cos, &ov, None)
    }

    #[test]
    fn report_structure() {
        let bytes = render_report_csv(&[report(PolicyKind::A2sf { alpha: 0.2 }, 2, 7)]).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(
            lines[0],
            "policy,alpha,budget,layer,head,cosine,mask_overlap,output_drift,seed"
        );
        assert_eq!(lines[1], "a2sf,0.2,4,0,0,0.9,0.5,,7");
        assert_eq!(lines[2], "a2sf,0.2,4,0,1,0.8,0.5,,7");
        assert_eq!(lines[3], "a2sf,0.2,4,AVERAGE,AVERAGE,0.85,0.5,,7");
    }

    #[test]
    fn rows_are_sorted_and_deterministic() {
        let reports = [
            report(PolicyKind::A2sf { alpha: 0.5 }, 1, 0),
            report(PolicyKind::Local { window: 4 }, 1, 0),
            report(PolicyKind::A2sf { alpha: 0.1 }, 1, 0),
            report(PolicyKind::A2s, 1, 0),
        ];
        let a = render_report_csv(&reports).unwrap();
        let text = String::from_utf8(a.clone()).unwrap();
        let firsts: Vec<String> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').take(2).collect::<Vec<_>>().join(","))
            .collect();
        assert_eq!(
            firsts,
            ["a2sf,0.1", "a2sf,0.1", "a2sf,0.5", "a2sf,0.5", "h2o,", "h2o,", "local,", "local,"]
        );
        let mut rev = reports.to_vec();
        rev.reverse();
        assert_eq!(render_report_csv(&rev).unwrap(), a);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(render_report_csv(&[]), Err(Error::NothingToWrite)));
        assert!(matches!(
            render_summary_csv(&[]),
            Err(Error::NothingToWrite)
        ));
    }

    #[test]
    fn mask_dump_files() {
        let dir = tempfile::tempdir().unwrap();
        let mask = MaskSequence::new(
            HeadGrid::new(1, 1),
            3,
            vec![vec![vec![0], vec![0, 1], vec![0, 2]]],
        )
        .unwrap();
        let files = write_mask_dump(&mask, dir.path(), "a2sf").unwrap();
        assert_eq!(files.len(), 1);
        let text = fs::read_to_string(&files[0]).unwrap();
        assert_eq!(text, "1 0 0\n1 1 0\n1 0 1\n");
    }
}
