//! Line-delimited rollout files.
//!
//! Each trajectory is a header record followed by one record per step:
//!
//! ```text
//! {"record":"trajectory","task_id":"chaintrap","outcome":"success","r_succ":10.0,"invalid_penalty":-0.1}
//! {"record":"step","t":0,"state_key_bytes":"...","action":0,"next_state_key_bytes":"...","cost":1.0,"penalty":0.0}
//! ```
//!
//! Step indices are zero-based within their trajectory. Key bytes are
//! standard base64.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{ActionId, Outcome, StateKey, Step, Trajectory, TrajectorySet};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case", deny_unknown_fields)]
enum Record {
    Trajectory {
        task_id: String,
        outcome: Outcome,
        r_succ: f64,
        #[serde(default)]
        invalid_penalty: f64,
    },
    Step {
        t: usize,
        state_key_bytes: String,
        action: ActionId,
        next_state_key_bytes: String,
        cost: f64,
        penalty: f64,
    },
}

/// Writes `set` and returns the number of records written.
pub fn write_rollouts<W: Write>(set: &TrajectorySet, mut sink: W) -> Result<usize> {
    let mut count = 0;
    let mut emit = |record: &Record, sink: &mut W| -> Result<()> {
        serde_json::to_writer(&mut *sink, record)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        sink.write_all(b"\n")?;
        count += 1;
        Ok(())
    };
    for traj in &set.trajectories {
        emit(
            &Record::Trajectory {
                task_id: set.task_id.clone(),
                outcome: traj.outcome,
                r_succ: set.r_succ,
                invalid_penalty: set.invalid_penalty,
            },
            &mut sink,
        )?;
        for (t, step) in traj.steps.iter().enumerate() {
            emit(
                &Record::Step {
                    t,
                    state_key_bytes: step.state.to_base64(),
                    action: step.action,
                    next_state_key_bytes: step.next_state.to_base64(),
                    cost: step.cost,
                    penalty: step.env_penalty,
                },
                &mut sink,
            )?;
        }
    }
    sink.flush()?;
    Ok(count)
}

struct Pending {
    header_line: usize,
    outcome: Outcome,
    steps: Vec<Step>,
}

/// Reads one trajectory set, validating every trajectory's state chain.
pub fn read_rollouts<R: BufRead>(source: R) -> Result<TrajectorySet> {
    let mut meta: Option<(String, f64, f64)> = None;
    let mut finished: Vec<Trajectory> = Vec::new();
    let mut pending: Option<Pending> = None;

    let close = |p: Pending, finished: &mut Vec<Trajectory>| -> Result<()> {
        let m = finished.len();
        let traj = Trajectory::new(p.steps, p.outcome).map_err(|e| {
            Error::Validation(format!(
                "trajectory {m} (header at line {}): {e}",
                p.header_line
            ))
        })?;
        finished.push(traj);
        Ok(())
    };

    for (idx, line) in source.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        match record {
            Record::Trajectory {
                task_id,
                outcome,
                r_succ,
                invalid_penalty,
            } => {
                match &meta {
                    None => meta = Some((task_id, r_succ, invalid_penalty)),
                    Some((tid, r, p)) => {
                        if *tid != task_id || *r != r_succ || *p != invalid_penalty {
                            return Err(Error::Validation(format!(
                                "line {lineno}: header disagrees with the set's task_id/r_succ/invalid_penalty"
                            )));
                        }
                    }
                }
                if let Some(p) = pending.take() {
                    close(p, &mut finished)?;
                }
                pending = Some(Pending {
                    header_line: lineno,
                    outcome,
                    steps: Vec::new(),
                });
            }
            Record::Step {
                t,
                state_key_bytes,
                action,
                next_state_key_bytes,
                cost,
                penalty,
            } => {
                let Some(p) = pending.as_mut() else {
                    return Err(Error::Parse {
                        line: lineno,
                        message: "step record before any trajectory header".into(),
                    });
                };
                if t != p.steps.len() {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("expected step index {}, got {t}", p.steps.len()),
                    });
                }
                let parse_key = |text: &str| {
                    StateKey::from_base64(text).map_err(|e| Error::Parse {
                        line: lineno,
                        message: e.to_string(),
                    })
                };
                let state = parse_key(&state_key_bytes)?;
                if let Some(prev) = p.steps.last() {
                    if prev.next_state != state {
                        return Err(Error::Validation(format!(
                            "line {lineno}: step {t} breaks the state chain"
                        )));
                    }
                }
                p.steps.push(Step {
                    state,
                    action,
                    next_state: parse_key(&next_state_key_bytes)?,
                    cost,
                    env_penalty: penalty,
                });
            }
        }
    }
    if let Some(p) = pending.take() {
        close(p, &mut finished)?;
    }
    let (task_id, r_succ, invalid_penalty) =
        meta.ok_or_else(|| Error::Validation("no trajectories in input".into()))?;
    TrajectorySet::new(task_id, finished, r_succ, invalid_penalty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::{canonical_state_key, ComponentValue};

    fn key(pos: i64) -> StateKey {
        canonical_state_key(&[("pos", ComponentValue::Int(pos))]).unwrap()
    }

    fn sample_set() -> TrajectorySet {
        let st = |a: i64, b: i64, action, penalty| Step {
            state: key(a),
            action,
            next_state: key(b),
            cost: 1.0,
            env_penalty: penalty,
        };
        let t1 = Trajectory::new(vec![st(0, 1, 0, 0.0), st(1, 2, 0, 0.0)], Outcome::Success).unwrap();
        let t2 = Trajectory::new(
            vec![st(0, 0, 1, -0.1), st(0, 9, 2, 0.0)],
            Outcome::FailTerminal,
        )
        .unwrap();
        TrajectorySet::new("demo", vec![t1, t2], 10.0, -0.1).unwrap()
    }

    #[test]
    fn round_trip_is_identity() {
        let set = sample_set();
        let mut buf = Vec::new();
        let n = write_rollouts(&set, &mut buf).unwrap();
        assert_eq!(n, 6);
        let back = read_rollouts(buf.as_slice()).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn broken_chain_names_the_line() {
        let set = sample_set();
        let mut buf = Vec::new();
        write_rollouts(&set, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let bad = text.replacen(&key(1).to_base64(), &key(7).to_base64(), 1);
        let err = read_rollouts(bad.as_bytes()).unwrap_err();
        match err {
            Error::Validation(msg) => assert!(msg.contains("line 3"), "{msg}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_line_is_a_parse_error() {
        let input = "{\"record\":\"trajectory\",\"task_id\":\"x\",\"outcome\":\"success\",\"r_succ\":10.0}\nnot json\n";
        match read_rollouts(input.as_bytes()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn step_before_header_is_rejected() {
        let input = format!(
            "{{\"record\":\"step\",\"t\":0,\"state_key_bytes\":\"{}\",\"action\":0,\"next_state_key_bytes\":\"{}\",\"cost\":1.0,\"penalty\":0.0}}\n",
            key(0).to_base64(),
            key(1).to_base64()
        );
        assert!(matches!(
            read_rollouts(input.as_bytes()).unwrap_err(),
            Error::Parse { line: 1, .. }
        ));
    }

    #[test]
    fn header_without_steps_is_rejected() {
        let input = "{\"record\":\"trajectory\",\"task_id\":\"x\",\"outcome\":\"success\",\"r_succ\":10.0}\n";
        assert!(matches!(
            read_rollouts(input.as_bytes()).unwrap_err(),
            Error::Validation(_)
        ));
    }
}
