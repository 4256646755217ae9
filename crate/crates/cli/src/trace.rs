//! Per-step JSONL traces and the per-seed summary CSV.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

/// What the agent did at a step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Action {
    Index(usize),
    Point(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Step number, starting at 1.
    pub t: usize,
    pub action: Action,
    pub reward: f64,
    pub cumulative_reward: f64,
    /// `None` where the experiment has no notion of regret.
    pub regret: Option<f64>,
    pub cumulative_regret: Option<f64>,
    /// Wall time of the filter update plus the policy call.
    pub step_ns: u64,
    /// Predictive mean and standard deviation at the chosen action, before
    /// the update.
    pub pred_mean: f64,
    pub pred_std: f64,
    /// Covariance error bound of the update, with `--diagnostics`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
}

/// Builds records with consistent running totals.
#[derive(Clone, Debug, Default)]
pub struct Accumulator {
    t: usize,
    reward: f64,
    regret: Option<f64>,
}

impl Accumulator {
    #[allow(clippy::too_many_arguments)]
    pub fn record(
        &mut self,
        action: Action,
        reward: f64,
        regret: Option<f64>,
        step_ns: u64,
        pred_mean: f64,
        pred_std: f64,
        bound: Option<f64>,
    ) -> StepRecord {
        self.t += 1;
        self.reward += reward;
        self.regret = if self.t == 1 {
            regret
        } else {
            self.regret.zip(regret).map(|(c, r)| c + r)
        };
        StepRecord {
            t: self.t,
            action,
            reward,
            cumulative_reward: self.reward,
            regret,
            cumulative_regret: self.regret,
            step_ns,
            pred_mean,
            pred_std,
            bound,
        }
    }
}

#[derive(Debug)]
pub enum TraceError {
    Io(io::Error),
    Json(serde_json::Error),
    Inconsistent { t: usize, message: String },
}

impl std::fmt::Display for TraceError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TraceError::Io(e) => write!(f, "trace i/o: {e}"),
            TraceError::Json(e) => write!(f, "trace json: {e}"),
            TraceError::Inconsistent { t, message } => write!(f, "trace step {t}: {message}"),
        }
    }
}

impl std::error::Error for TraceError {}

impl From<io::Error> for TraceError {
    fn from(e: io::Error) -> Self {
        TraceError::Io(e)
    }
}

impl From<serde_json::Error> for TraceError {
    fn from(e: serde_json::Error) -> Self {
        TraceError::Json(e)
    }
}

/// JSONL writer that rejects records whose running totals disagree with the
/// per-step values written so far.
pub struct TraceWriter<W: Write> {
    out: W,
    check: Accumulator,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        TraceWriter {
            out,
            check: Accumulator::default(),
        }
    }

    pub fn write(&mut self, rec: &StepRecord) -> Result<(), TraceError> {
        let expect = self.check.record(
            rec.action.clone(),
            rec.reward,
            rec.regret,
            rec.step_ns,
            rec.pred_mean,
            rec.pred_std,
            rec.bound,
        );
        let fail = |message: String| TraceError::Inconsistent { t: rec.t, message };
        if rec.t != expect.t {
            return Err(fail(format!("expected t = {}", expect.t)));
        }
        if rec.cumulative_reward.to_bits() != expect.cumulative_reward.to_bits() {
            return Err(fail(format!(
                "cumulative reward {} but per-step rewards sum to {}",
                rec.cumulative_reward, expect.cumulative_reward
            )));
        }
        if rec.cumulative_regret.map(f64::to_bits) != expect.cumulative_regret.map(f64::to_bits) {
            return Err(fail(format!(
                "cumulative regret {:?} but per-step regrets sum to {:?}",
                rec.cumulative_regret, expect.cumulative_regret
            )));
        }
        serde_json::to_writer(&mut self.out, rec)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, TraceError> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<StepRecord>, TraceError> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Per-seed totals.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedSummary {
    pub seed: u64,
    pub steps: usize,
    pub cumulative_reward: f64,
    pub cumulative_regret: Option<f64>,
    /// Mean reward over the final quarter of the steps.
    pub tail_mean_reward: f64,
    pub best_reward: f64,
    /// In-between runs: predictive std at the gap centre over the mean
    /// predictive std at the training inputs.
    pub std_ratio: Option<f64>,
}

impl SeedSummary {
    pub fn from_records(seed: u64, records: &[StepRecord], std_ratio: Option<f64>) -> Self {
        let n = records.len();
        let tail = (n / 4).max(1).min(n);
        let tail_sum: f64 = records[n - tail..].iter().map(|r| r.reward).sum();
        let last = records.last();
        SeedSummary {
            seed,
            steps: n,
            cumulative_reward: last.map_or(0.0, |r| r.cumulative_reward),
            cumulative_regret: last.and_then(|r| r.cumulative_regret),
            tail_mean_reward: if n == 0 { 0.0 } else { tail_sum / tail as f64 },
            best_reward: records
                .iter()
                .map(|r| r.reward)
                .fold(f64::NEG_INFINITY, f64::max),
            std_ratio,
        }
    }
}

pub const SUMMARY_HEADER: &str =
    "seed,steps,cumulative_reward,cumulative_regret,tail_mean_reward,best_reward,std_ratio";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Mean and sample standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn column_stats(rows: &[SeedSummary], f: impl Fn(&SeedSummary) -> Option<f64>) -> (String, String) {
    let v: Option<Vec<f64>> = rows.iter().map(f).collect();
    match v {
        Some(v) if !v.is_empty() => {
            let (m, s) = mean_std(&v);
            (m.to_string(), s.to_string())
        }
        _ => (String::new(), String::new()),
    }
}

/// CSV with one row per seed followed by `mean` and `std` rows.
pub fn summary_csv(rows: &[SeedSummary]) -> String {
    let mut s = String::new();
    writeln!(s, "{SUMMARY_HEADER}").unwrap();
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.seed,
            r.steps,
            r.cumulative_reward,
            opt(r.cumulative_regret),
            r.tail_mean_reward,
            r.best_reward,
            opt(r.std_ratio)
        )
        .unwrap();
    }
    let cols: Vec<(String, String)> = vec![
        column_stats(rows, |r| Some(r.steps as f64)),
        column_stats(rows, |r| Some(r.cumulative_reward)),
        column_stats(rows, |r| r.cumulative_regret),
        column_stats(rows, |r| Some(r.tail_mean_reward)),
        column_stats(rows, |r| Some(r.best_reward)),
        column_stats(rows, |r| r.std_ratio),
    ];
    let means: Vec<&str> = cols.iter().map(|c| c.0.as_str()).collect();
    let stds: Vec<&str> = cols.iter().map(|c| c.1.as_str()).collect();
    writeln!(s, "mean,{}", means.join(",")).unwrap();
    writeln!(s, "std,{}", stds.join(",")).unwrap();
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(rewards: &[f64]) -> Vec<StepRecord> {
        let mut acc = Accumulator::default();
        rewards
            .iter()
            .map(|&r| acc.record(Action::Index(0), r, Some(1.0 - r), 0, 0.0, 1.0, None))
            .collect()
    }

    #[test]
    fn writer_accepts_accumulated_records() {
        let recs = records(&[0.1, 0.7, 0.2]);
        let mut w = TraceWriter::new(Vec::new());
        for r in &recs {
            w.write(r).unwrap();
        }
        let bytes = w.finish().unwrap();
        assert_eq!(read_trace(&bytes[..]).unwrap(), recs);
    }

    #[test]
    fn writer_rejects_inconsistent_totals() {
        let mut recs = records(&[0.1, 0.7]);
        recs[1].cumulative_reward += 1e-12;
        let mut w = TraceWriter::new(Vec::new());
        w.write(&recs[0]).unwrap();
        assert!(matches!(
            w.write(&recs[1]),
            Err(TraceError::Inconsistent { t: 2, .. })
        ));
    }

    #[test]
    fn writer_rejects_skipped_step() {
        let recs = records(&[0.1, 0.7]);
        let mut w = TraceWriter::new(Vec::new());
        assert!(w.write(&recs[1]).is_err());
    }

    #[test]
    fn action_serialises_untagged() {
        assert_eq!(serde_json::to_string(&Action::Index(3)).unwrap(), "3");
        assert_eq!(
            serde_json::to_string(&Action::Point(vec![0.5])).unwrap(),
            "[0.5]"
        );
    }

    #[test]
    fn summary_rows_and_stats() {
        let a = SeedSummary::from_records(0, &records(&[1.0, 0.0, 1.0, 1.0]), None);
        let b = SeedSummary::from_records(1, &records(&[0.0, 0.0, 0.0, 1.0]), None);
        assert_eq!(a.cumulative_reward, 3.0);
        assert_eq!(a.tail_mean_reward, 1.0);
        let csv = summary_csv(&[a, b]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[3], "mean,4,2,2,1,1,");
        assert!(lines[4].starts_with("std,0,1.414213562373095"));
    }

    #[test]
    fn mean_std_single_value() {
        assert_eq!(mean_std(&[2.5]), (2.5, 0.0));
    }
}
