use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::pipeline::{EvalRecord, FlipCategory, RecordStatus};
use super::EvalError;
use crate::classifier::Action;

/// Correct answers per 100,000 tokens.
pub fn apt(accuracy_fraction: f64, avg_tokens: f64) -> f64 {
    accuracy_fraction * 100_000.0 / avg_tokens
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub records: usize,
    pub completed: usize,
    pub unparseable: usize,
    pub failed: usize,
    /// Percent correct over completed and unparseable records.
    pub accuracy: f64,
    /// Mean input plus output tokens per record, failures included.
    pub avg_tokens: f64,
    pub avg_input_tokens: f64,
    pub avg_output_tokens: f64,
    /// `None` when no tokens were spent.
    pub apt: Option<f64>,
    pub triggered: usize,
    pub skipped: usize,
    pub protocol_fallbacks: usize,
    /// Per-category counts in [`FlipCategory::ALL`] order.
    pub counts: [usize; 8],
    /// Percentages of the categorized records, same order.
    pub breakdown: [f64; 8],
    pub categorized: usize,
    /// Skipped records without a counterfactual, split by kept-answer
    /// correctness.
    pub skipped_uncategorized_correct: usize,
    pub skipped_uncategorized_incorrect: usize,
    /// True if any token count was estimated rather than reported.
    pub approximate_tokens: bool,
}

pub fn compute_metrics(records: &[EvalRecord]) -> Result<MetricsReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let n = records.len() as f64;
    let count = |s: RecordStatus| records.iter().filter(|r| r.status == s).count();
    let (completed, unparseable, failed) = (
        count(RecordStatus::Completed),
        count(RecordStatus::Unparseable),
        count(RecordStatus::Failed),
    );
    let scored = completed + unparseable;
    let correct = records
        .iter()
        .filter(|r| r.status != RecordStatus::Failed && r.final_correct)
        .count();
    let accuracy = if scored == 0 { 0.0 } else { 100.0 * correct as f64 / scored as f64 };
    let input: u64 = records.iter().map(|r| r.usage.input_total).sum();
    let output: u64 = records.iter().map(|r| r.usage.output_total).sum();
    let avg_tokens = (input + output) as f64 / n;

    let mut counts = [0usize; 8];
    let mut uncategorized = (0, 0);
    for r in records.iter().filter(|r| r.status == RecordStatus::Completed) {
        match r.flip {
            Some(c) => counts[c.index()] += 1,
            None if r.decision == Some(Action::Skip) => {
                if r.single_correct {
                    uncategorized.0 += 1
                } else {
                    uncategorized.1 += 1
                }
            }
            None => {}
        }
    }
    let categorized: usize = counts.iter().sum();
    let breakdown = counts.map(|c| if categorized == 0 { 0.0 } else { 100.0 * c as f64 / categorized as f64 });
    let decided = |a: Action| {
        records
            .iter()
            .filter(|r| r.status == RecordStatus::Completed && r.decision == Some(a))
            .count()
    };

    Ok(MetricsReport {
        records: records.len(),
        completed,
        unparseable,
        failed,
        accuracy,
        avg_tokens,
        avg_input_tokens: input as f64 / n,
        avg_output_tokens: output as f64 / n,
        apt: (avg_tokens > 0.0).then(|| apt(accuracy / 100.0, avg_tokens)),
        triggered: decided(Action::TriggerDebate),
        skipped: decided(Action::Skip),
        protocol_fallbacks: records
            .iter()
            .filter(|r| r.terminated_by == Some(crate::debate::TerminatedBy::ProtocolFallback))
            .count(),
        counts,
        breakdown,
        categorized,
        skipped_uncategorized_correct: uncategorized.0,
        skipped_uncategorized_incorrect: uncategorized.1,
        approximate_tokens: records.iter().any(|r| r.usage.approximate),
    })
}

/// Human-readable summary: headline numbers, then the skipped/triggered
/// breakdown.
pub fn render_report(m: &MetricsReport) -> String {
    let mut s = String::new();
    let approx = if m.approximate_tokens { " (approximate)" } else { "" };
    let _ = writeln!(s, "Records      {} ({} completed, {} unparseable, {} failed)", m.records, m.completed, m.unparseable, m.failed);
    let _ = writeln!(s, "Accuracy     {:.1}%", m.accuracy);
    let _ = writeln!(
        s,
        "#Token       {:.1}{approx} (in {:.1}, out {:.1})",
        m.avg_tokens, m.avg_input_tokens, m.avg_output_tokens
    );
    match m.apt {
        Some(a) => {
            let _ = writeln!(s, "ApT          {a:.1}");
        }
        None => {
            let _ = writeln!(s, "ApT          n/a");
        }
    }
    let _ = writeln!(s, "Decisions    {} skipped, {} triggered, {} protocol fallbacks", m.skipped, m.triggered, m.protocol_fallbacks);
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<32}| Triggered (%)", "Skipped (%)");
    let _ = writeln!(s, "{:<32}| Bad                     Good", "Good              Bad");
    let header: Vec<String> = FlipCategory::ALL.iter().map(|c| format!("{:>7}", c.short())).collect();
    let _ = writeln!(s, "{} |{}", header[..4].join(" "), header[4..].join(" "));
    let cells: Vec<String> = m.breakdown.iter().map(|p| format!("{p:>7.1}")).collect();
    let _ = writeln!(s, "{} |{}", cells[..4].join(" "), cells[4..].join(" "));
    let counts: Vec<String> = m.counts.iter().map(|c| format!("{c:>7}")).collect();
    let _ = writeln!(s, "{} |{}   (counts, n={})", counts[..4].join(" "), counts[4..].join(" "), m.categorized);
    if m.skipped_uncategorized_correct + m.skipped_uncategorized_incorrect > 0 {
        let _ = writeln!(
            s,
            "Skipped without counterfactual: {} correct, {} incorrect",
            m.skipped_uncategorized_correct, m.skipped_uncategorized_incorrect
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::TokenUsage;

    fn rec(id: usize, correct: bool, tokens: u64, flip: Option<FlipCategory>) -> EvalRecord {
        EvalRecord {
            id: id.to_string(),
            status: RecordStatus::Completed,
            ground_truth: "A".into(),
            single_answer: Some("A".into()),
            single_correct: correct,
            decision: Some(Action::Skip),
            p: Some(0.9),
            u: Some(0.1),
            debate_answer: None,
            final_answer: Some(if correct { "A" } else { "B" }.into()),
            final_correct: correct,
            flip,
            terminated_by: None,
            rounds_used: None,
            usage: TokenUsage {
                input_total: tokens / 2,
                output_total: tokens - tokens / 2,
                calls: 1,
                approximate: false,
            },
            error: None,
            transcript: None,
        }
    }

    #[test]
    fn apt_formula() {
        assert!((apt(0.766, 653.0) - 117.3).abs() < 0.05);
        assert_eq!(apt(1.0, 1000.0), 100.0);
    }

    #[test]
    fn all_correct_thousand_tokens() {
        let recs: Vec<_> = (0..5).map(|i| rec(i, true, 1000, None)).collect();
        let m = compute_metrics(&recs).unwrap();
        assert_eq!(m.accuracy, 100.0);
        assert_eq!(m.apt, Some(100.0));
        assert_eq!(m.skipped_uncategorized_correct, 5);
    }

    #[test]
    fn one_in_ten_breakdown() {
        let mut recs: Vec<_> = (0..9).map(|i| rec(i, true, 10, Some(FlipCategory::SkippedRightRight))).collect();
        let mut fixed = rec(9, true, 10, Some(FlipCategory::TriggeredWrongRight));
        fixed.decision = Some(Action::TriggerDebate);
        recs.push(fixed);
        let m = compute_metrics(&recs).unwrap();
        assert_eq!(m.breakdown[FlipCategory::TriggeredWrongRight.index()], 10.0);
        assert!((m.breakdown.iter().sum::<f64>() - 100.0).abs() < 1e-9);
        assert_eq!(m.counts.iter().sum::<usize>(), 10);
        assert!(render_report(&m).contains("10.0"));
    }

    #[test]
    fn failures_cost_tokens_but_not_accuracy() {
        let mut recs = vec![rec(0, true, 100, None), rec(1, false, 100, None)];
        let mut failed = rec(2, false, 400, None);
        failed.status = RecordStatus::Failed;
        recs.push(failed);
        let m = compute_metrics(&recs).unwrap();
        assert_eq!(m.accuracy, 50.0);
        assert_eq!(m.avg_tokens, 200.0);
        assert_eq!(m.failed, 1);
        assert!(matches!(compute_metrics(&[]), Err(EvalError::EmptyRun)));
    }
}
