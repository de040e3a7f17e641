//! TREC run files: `qid Q0 docno rank score tag`, space-separated, scores
//! printed with 6 significant digits.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// One run line.
#[derive(Clone, Debug, PartialEq)]
pub struct RunEntry {
    pub qid: String,
    pub docno: String,
    /// 1-based rank, contiguous within a query.
    pub rank: u32,
    pub score: f64,
    pub tag: String,
}

/// Formats with 6 significant digits, C `%g` style: fixed notation for
/// decimal exponents in [-4, 5], scientific otherwise, trailing zeros
/// stripped.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{:.5e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent parses");
    if !(-4..6).contains(&exp) {
        let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
        let sign = if exp < 0 { "-" } else { "+" };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        let fixed = format!("{:.*}", decimals, x);
        if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            fixed
        }
    }
}

/// Checks the run invariants: within each query, ranks are contiguous from
/// 1, scores are non-increasing with rank, and docnos are unique.
pub fn validate_run(entries: &[RunEntry]) -> Result<()> {
    let mut by_query: BTreeMap<&str, Vec<&RunEntry>> = BTreeMap::new();
    for e in entries {
        if !e.score.is_finite() {
            return Err(Error::InvalidInput(format!(
                "non-finite score for ({}, {})",
                e.qid, e.docno
            )));
        }
        by_query.entry(&e.qid).or_default().push(e);
    }
    for (qid, mut group) in by_query {
        group.sort_by_key(|e| e.rank);
        let mut seen = std::collections::BTreeSet::new();
        for (i, e) in group.iter().enumerate() {
            if e.rank != (i + 1) as u32 {
                return Err(Error::InvalidInput(format!(
                    "query {qid}: ranks not contiguous from 1 (saw {} at position {})",
                    e.rank,
                    i + 1
                )));
            }
            if !seen.insert(&e.docno) {
                return Err(Error::InvalidInput(format!(
                    "query {qid}: duplicate docno {}",
                    e.docno
                )));
            }
            if i > 0 && e.score > group[i - 1].score {
                return Err(Error::InvalidInput(format!(
                    "query {qid}: scores increase with rank at rank {}",
                    e.rank
                )));
            }
        }
    }
    Ok(())
}

/// Serializes entries to the run format, sorted by (qid, rank), after
/// validating the invariants. Scores are written with 6 significant digits.
pub fn write_run(entries: &[RunEntry]) -> Result<String> {
    validate_run(entries)?;
    let mut sorted: Vec<&RunEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| a.qid.cmp(&b.qid).then_with(|| a.rank.cmp(&b.rank)));
    let mut out = String::new();
    for e in sorted {
        out.push_str(&format!(
            "{} Q0 {} {} {} {}\n",
            e.qid,
            e.docno,
            e.rank,
            format_sig6(e.score),
            e.tag
        ));
    }
    Ok(out)
}

/// Parses a run file; the exact inverse of [`write_run`] (scores carry the
/// printed 6-significant-digit values).
pub fn read_run(text: &str) -> Result<Vec<RunEntry>> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(Error::ParseLine {
                line: line_no,
                msg: format!("expected 6 columns, got {}", cols.len()),
            });
        }
        let rank: u32 = cols[3].parse().map_err(|_| Error::ParseLine {
            line: line_no,
            msg: format!("bad rank {:?}", cols[3]),
        })?;
        let score: f64 = cols[4].parse().map_err(|_| Error::ParseLine {
            line: line_no,
            msg: format!("bad score {:?}", cols[4]),
        })?;
        entries.push(RunEntry {
            qid: cols[0].to_string(),
            docno: cols[2].to_string(),
            rank,
            score,
            tag: cols[5].to_string(),
        });
    }
    validate_run(&entries)?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formats_the_bm25_example_value() {
        let w = (2.0 * 2.2 / 3.2) * (90.5_f64 / 10.5).ln();
        assert_eq!(format_sig6(w), "2.96172");
    }

    #[test]
    fn format_edge_cases() {
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(0.5), "0.5");
        assert_eq!(format_sig6(-1.25), "-1.25");
        assert_eq!(format_sig6(123456.0), "123456");
        assert_eq!(format_sig6(1234567.0), "1.23457e+06");
        assert_eq!(format_sig6(0.0000123456), "1.23456e-05");
        assert_eq!(format_sig6(999999.6), "1e+06");
    }

    #[test]
    fn single_entry_line() {
        let w = (2.0 * 2.2 / 3.2) * (90.5_f64 / 10.5).ln();
        let entries = vec![RunEntry {
            qid: "51".into(),
            docno: "A1".into(),
            rank: 1,
            score: w,
            tag: "run0".into(),
        }];
        assert_eq!(write_run(&entries).unwrap(), "51 Q0 A1 1 2.96172 run0\n");
    }

    #[test]
    fn round_trip_is_identity_on_entries() {
        let entries = vec![
            RunEntry { qid: "1".into(), docno: "B".into(), rank: 1, score: 2.5, tag: "r".into() },
            RunEntry { qid: "1".into(), docno: "A".into(), rank: 2, score: 1.25, tag: "r".into() },
            RunEntry { qid: "2".into(), docno: "C".into(), rank: 1, score: -0.5, tag: "r".into() },
        ];
        let text = write_run(&entries).unwrap();
        let parsed = read_run(&text).unwrap();
        assert_eq!(parsed, entries);
        assert_eq!(write_run(&parsed).unwrap(), text);
    }

    #[test]
    fn non_contiguous_ranks_are_rejected() {
        let entries = vec![RunEntry {
            qid: "1".into(),
            docno: "A".into(),
            rank: 2,
            score: 1.0,
            tag: "r".into(),
        }];
        assert!(write_run(&entries).is_err());
        assert!(read_run("1 Q0 A 2 1.0 r\n").is_err());
    }

    #[test]
    fn increasing_scores_are_rejected() {
        let text = "1 Q0 A 1 1.0 r\n1 Q0 B 2 2.0 r\n";
        assert!(read_run(text).is_err());
    }

    #[test]
    fn malformed_line_reports_number() {
        let err = read_run("1 Q0 A 1 1.0 r\n1 Q0 B 2\n").unwrap_err();
        match err {
            Error::ParseLine { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
