use std::fmt::Write as _;
use std::io::Write;

use crate::error::Result;

pub const CSV_HEADER: &str =
    "iteration,train_sr,eval_sr,mean_abs_adv,mean_len,nodes,edges,ms_rollout,ms_graph,ms_adv,ms_update";

/// One training iteration. Graph sizes are means over the iteration's tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based; the policy has been updated `iteration` times.
    pub iteration: usize,
    pub train_sr: f64,
    pub eval_sr: Option<f64>,
    pub mean_abs_adv: f64,
    pub mean_len: f64,
    pub nodes: f64,
    pub edges: f64,
    pub ms_rollout: f64,
    pub ms_graph: f64,
    pub ms_adv: f64,
    pub ms_update: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub records: Vec<IterationRecord>,
}

impl MetricsLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.records.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let eval = r.eval_sr.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{:.3},{:.3},{:.3},{:.3}",
                r.iteration,
                r.train_sr,
                eval,
                r.mean_abs_adv,
                r.mean_len,
                r.nodes,
                r.edges,
                r.ms_rollout,
                r.ms_graph,
                r.ms_adv,
                r.ms_update
            );
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut sink: W) -> Result<()> {
        sink.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    /// First iteration whose evaluation success rate is at least `threshold`.
    pub fn iterations_to_reach(&self, threshold: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.eval_sr.is_some_and(|v| v >= threshold))
            .map(|r| r.iteration)
    }

    /// Exponentially smoothed success rates for plotting:
    /// `iteration,train_sr_ema,eval_sr_ema`. Iterations without evaluation
    /// carry the previous smoothed value.
    pub fn ema_plot_csv(&self, alpha: f64) -> String {
        let mut out = String::from("iteration,train_sr_ema,eval_sr_ema\n");
        let mut train: Option<f64> = None;
        let mut eval: Option<f64> = None;
        for r in &self.records {
            train = Some(match train {
                None => r.train_sr,
                Some(prev) => alpha * prev + (1.0 - alpha) * r.train_sr,
            });
            if let Some(v) = r.eval_sr {
                eval = Some(match eval {
                    None => v,
                    Some(prev) => alpha * prev + (1.0 - alpha) * v,
                });
            }
            let e = eval.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{}", r.iteration, train.unwrap_or_default(), e);
        }
        out
    }

    /// Total graph and advantage time over total rollout and update time.
    pub fn credit_time_fraction(&self) -> Option<f64> {
        let (credit, rest) = self.records.iter().fold((0.0, 0.0), |(c, r), x| {
            (c + x.ms_graph + x.ms_adv, r + x.ms_rollout + x.ms_update)
        });
        (rest > 0.0).then(|| credit / rest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(iteration: usize, eval_sr: Option<f64>) -> IterationRecord {
        IterationRecord {
            iteration,
            train_sr: 0.5,
            eval_sr,
            mean_abs_adv: 0.25,
            mean_len: 7.0,
            nodes: 10.0,
            edges: 12.5,
            ms_rollout: 1.0,
            ms_graph: 0.0,
            ms_adv: 0.0,
            ms_update: 2.0,
        }
    }

    #[test]
    fn csv_has_fixed_header_and_blank_missing_eval() {
        let log = MetricsLog {
            records: vec![record(1, None), record(2, Some(0.75))],
        };
        let csv = log.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "1,0.5,,0.25,7,10,12.5,1.000,0.000,0.000,2.000");
        assert_eq!(lines[2].split(',').nth(2), Some("0.75"));
    }

    #[test]
    fn threshold_crossing() {
        let log = MetricsLog {
            records: vec![record(1, Some(0.2)), record(2, None), record(3, Some(0.95))],
        };
        assert_eq!(log.iterations_to_reach(0.9), Some(3));
        assert_eq!(log.iterations_to_reach(0.99), None);
    }

    #[test]
    fn ema_smoothing() {
        let mut a = record(1, Some(0.0));
        a.train_sr = 0.0;
        let mut b = record(2, Some(1.0));
        b.train_sr = 1.0;
        let csv = MetricsLog { records: vec![a, b] }.ema_plot_csv(0.95);
        let last = csv.lines().last().unwrap();
        let fields: Vec<f64> = last.split(',').map(|f| f.parse().unwrap()).collect();
        assert!((fields[1] - 0.05).abs() < 1e-12);
        assert!((fields[2] - 0.05).abs() < 1e-12);
    }
}
