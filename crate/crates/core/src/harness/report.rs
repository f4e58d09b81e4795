//! Result emission: a CSV of per-episode rows and a text summary table of
//! per-policy means. Floats are written with Rust's shortest round-trip
//! formatting, so re-parsing a report reproduces the exact values.

use super::suite::SuiteCell;
use super::FailureReason;
use std::collections::BTreeMap;
use std::io::{self, Write};

pub const CSV_HEADER: &str =
    "scene,seed,policy,success,caught_rate,detected_rate,time_cost,distance,failure_reason";

pub fn write_csv(cells: &[SuiteCell], w: &mut dyn Write) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for c in cells {
        match &c.outcome {
            Ok(m) => writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                c.scene,
                c.seed,
                c.policy,
                m.success,
                m.caught_rate,
                m.detected_rate,
                m.time_cost,
                m.distance,
                m.failure_reason
            )?,
            Err(e) => writeln!(
                w,
                "{},{},{},,,,,,error:{}",
                c.scene,
                c.seed,
                c.policy,
                e.replace([',', '\n'], ";")
            )?,
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub policy: String,
    pub episodes: usize,
    pub errors: usize,
    pub success_rate: f64,
    pub caught_rate: f64,
    pub detected_rate: f64,
    pub time_cost: f64,
    pub distance: f64,
}

/// Mean metrics per policy over all successful-ran cells, in first-seen
/// policy order. Aggregation is a plain arithmetic mean, so it is invariant
/// under permutations of the episode list.
pub fn aggregate(cells: &[SuiteCell]) -> Vec<AggregateRow> {
    let mut order: Vec<String> = Vec::new();
    let mut acc: BTreeMap<String, (usize, usize, f64, f64, f64, f64, f64)> = BTreeMap::new();
    for c in cells {
        if !acc.contains_key(&c.policy) {
            order.push(c.policy.clone());
            acc.insert(c.policy.clone(), (0, 0, 0.0, 0.0, 0.0, 0.0, 0.0));
        }
        let slot = acc.get_mut(&c.policy).unwrap();
        match &c.outcome {
            Ok(m) => {
                slot.0 += 1;
                slot.2 += if m.success { 1.0 } else { 0.0 };
                slot.3 += m.caught_rate;
                slot.4 += m.detected_rate;
                slot.5 += m.time_cost as f64;
                slot.6 += m.distance;
            }
            Err(_) => slot.1 += 1,
        }
    }
    order
        .into_iter()
        .map(|policy| {
            let (n, errors, s, c, d, t, dist) = acc[&policy];
            let denom = n.max(1) as f64;
            AggregateRow {
                policy,
                episodes: n,
                errors,
                success_rate: s / denom,
                caught_rate: c / denom,
                detected_rate: d / denom,
                time_cost: t / denom,
                distance: dist / denom,
            }
        })
        .collect()
}

/// Failure-reason counts over all failed episodes.
pub fn failure_histogram(cells: &[SuiteCell]) -> BTreeMap<String, usize> {
    let mut hist = BTreeMap::new();
    for c in cells {
        if let Ok(m) = &c.outcome {
            if m.failure_reason != FailureReason::None {
                *hist.entry(m.failure_reason.to_string()).or_insert(0) += 1;
            }
        }
    }
    hist
}

pub fn write_summary(cells: &[SuiteCell], w: &mut dyn Write) -> io::Result<()> {
    writeln!(
        w,
        "{:<12} {:>5} {:>7} {:>8} {:>8} {:>8} {:>10} {:>12}",
        "policy", "runs", "errors", "succ%", "caught%", "detect%", "time", "distance"
    )?;
    for row in aggregate(cells) {
        writeln!(
            w,
            "{:<12} {:>5} {:>7} {:>8.2} {:>8.2} {:>8.2} {:>10.2} {:>12.2}",
            row.policy,
            row.episodes,
            row.errors,
            row.success_rate * 100.0,
            row.caught_rate * 100.0,
            row.detected_rate * 100.0,
            row.time_cost,
            row.distance
        )?;
    }
    let hist = failure_histogram(cells);
    if !hist.is_empty() {
        writeln!(w, "\nfailure reasons:")?;
        for (reason, count) in hist {
            writeln!(w, "  {reason:<20} {count}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::EpisodeMetrics;

    fn cell(policy: &str, success: bool, caught: f64) -> SuiteCell {
        SuiteCell {
            scene: "s".into(),
            seed: 1,
            policy: policy.into(),
            outcome: Ok(EpisodeMetrics {
                success,
                caught_rate: caught,
                detected_rate: 0.125,
                time_cost: if success { 100 } else { 1500 },
                distance: 321.5,
                failure_reason: if success {
                    FailureReason::None
                } else {
                    FailureReason::Timeout
                },
            }),
        }
    }

    #[test]
    fn single_row_csv() {
        let cells = vec![cell("cosar", true, 0.0)];
        let mut buf = Vec::new();
        write_csv(&cells, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "s,1,cosar,true,0,0.125,100,321.5,none");
    }

    #[test]
    fn aggregate_means_match_arithmetic() {
        let cells = vec![
            cell("p", true, 0.0),
            cell("p", false, 0.4),
            cell("p", false, 0.2),
        ];
        let rows = aggregate(&cells);
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert!((r.success_rate - 1.0 / 3.0).abs() < 1e-9);
        assert!((r.caught_rate - 0.2).abs() < 1e-9);
        assert!((r.time_cost - (100.0 + 1500.0 + 1500.0) / 3.0).abs() < 1e-9);
    }

    #[test]
    fn histogram_counts_only_failures() {
        let cells = vec![cell("p", true, 0.0), cell("p", false, 0.0), cell("q", false, 0.5)];
        let hist = failure_histogram(&cells);
        assert_eq!(hist.values().sum::<usize>(), 2);
    }

    #[test]
    fn aggregation_is_permutation_invariant() {
        let mut cells = vec![
            cell("p", true, 0.0),
            cell("q", false, 0.4),
            cell("p", false, 0.2),
            cell("q", true, 0.1),
        ];
        let a = aggregate(&cells);
        cells.reverse();
        let mut b = aggregate(&cells);
        b.sort_by(|x, y| x.policy.cmp(&y.policy));
        let mut a_sorted = a;
        a_sorted.sort_by(|x, y| x.policy.cmp(&y.policy));
        for (x, y) in a_sorted.iter().zip(&b) {
            assert_eq!(x.policy, y.policy);
            assert!((x.success_rate - y.success_rate).abs() < 1e-12);
            assert!((x.caught_rate - y.caught_rate).abs() < 1e-12);
        }
    }
}
