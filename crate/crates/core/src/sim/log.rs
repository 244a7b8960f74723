//! Trajectory and event logs, their CSV form, and summary metrics.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::trigger::{TriggerCase, TriggerKind};

use super::fmt_f64;

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub x_f: f64,
    pub v_f: f64,
    pub x_l: f64,
    pub v_l: f64,
    pub tau_f: f64,
    pub delta: f64,
    pub h: f64,
    pub v: f64,
    /// `θ̂` (single estimate) or `θ̂_V` followed by `θ̂_h`.
    pub theta: Vec<f64>,
    pub clf_active: bool,
    pub cbf_active: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRow {
    pub tau: f64,
    pub kind: TriggerKind,
    pub case: TriggerCase,
    pub chi: f64,
    pub h_at_tau: f64,
    pub estimate_changed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    /// Parameter dimension.
    pub p: usize,
    /// Whether rows carry the `θ̂_V`, `θ̂_h` pair.
    pub split: bool,
    pub rows: Vec<LogRow>,
    pub events: Vec<EventRow>,
}

impl TrajectoryLog {
    pub fn new(p: usize, split: bool) -> Self {
        Self {
            p,
            split,
            rows: Vec::new(),
            events: Vec::new(),
        }
    }

    fn theta_columns(&self) -> Vec<String> {
        if self.split {
            (1..=self.p)
                .map(|j| format!("thatV_{j}"))
                .chain((1..=self.p).map(|j| format!("thath_{j}")))
                .collect()
        } else {
            (1..=self.p).map(|j| format!("that_{j}")).collect()
        }
    }

    pub fn trajectory_header(&self) -> String {
        let mut cols: Vec<String> = ["t", "x_f", "v_f", "x_l", "v_l", "tau_f", "delta", "h", "V"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        cols.extend(self.theta_columns());
        cols.push("clf_active".into());
        cols.push("cbf_active".into());
        cols.join(",")
    }

    pub fn write_trajectory_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.trajectory_header())?;
        for r in &self.rows {
            let mut fields: Vec<String> = [r.t, r.x_f, r.v_f, r.x_l, r.v_l, r.tau_f, r.delta, r.h, r.v]
                .iter()
                .map(|&x| fmt_f64(x))
                .collect();
            fields.extend(r.theta.iter().map(|&x| fmt_f64(x)));
            fields.push(u8::from(r.clf_active).to_string());
            fields.push(u8::from(r.cbf_active).to_string());
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn write_events_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "tau,kind,case_class,chi,h_at_tau,estimate_changed")?;
        for e in &self.events {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                fmt_f64(e.tau),
                e.kind,
                e.case,
                fmt_f64(e.chi),
                fmt_f64(e.h_at_tau),
                u8::from(e.estimate_changed)
            )?;
        }
        Ok(())
    }

    /// Reads back a trajectory CSV and, optionally, its events CSV.
    pub fn read_csv<R: BufRead, E: BufRead>(trajectory: R, events: Option<E>) -> Result<Self> {
        let mut lines = trajectory.lines();
        let header = lines.next().ok_or_else(|| parse_error("empty trajectory file"))??;
        let cols: Vec<&str> = header.split(',').collect();
        let theta_cols = cols.len().checked_sub(11).ok_or_else(|| parse_error("short header"))?;
        let split = cols.iter().any(|c| c.starts_with("thatV_"));
        let p = if split { theta_cols / 2 } else { theta_cols };
        let mut log = Self::new(p, split);
        if log.trajectory_header() != header {
            return Err(parse_error(&format!("unexpected header `{header}`")));
        }
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols.len() {
                return Err(parse_error(&format!("row has {} fields, expected {}", f.len(), cols.len())));
            }
            let num = |i: usize| parse_f64(f[i]);
            let theta = (9..9 + theta_cols).map(num).collect::<Result<Vec<_>>>()?;
            log.rows.push(LogRow {
                t: num(0)?,
                x_f: num(1)?,
                v_f: num(2)?,
                x_l: num(3)?,
                v_l: num(4)?,
                tau_f: num(5)?,
                delta: num(6)?,
                h: num(7)?,
                v: num(8)?,
                theta,
                clf_active: parse_flag(f[9 + theta_cols])?,
                cbf_active: parse_flag(f[10 + theta_cols])?,
            });
        }
        if let Some(events) = events {
            for line in events.lines().skip(1) {
                let line = line?;
                if line.is_empty() {
                    continue;
                }
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 6 {
                    return Err(parse_error(&format!("event row `{line}`")));
                }
                let kind = match f[1] {
                    "alarm_crossing" => TriggerKind::AlarmCrossing,
                    "max_interval" => TriggerKind::MaxInterval,
                    other => return Err(parse_error(&format!("unknown trigger kind `{other}`"))),
                };
                let case = match f[2] {
                    "1" => TriggerCase::Case1,
                    "2" => TriggerCase::Case2,
                    "3" => TriggerCase::Case3,
                    other => return Err(parse_error(&format!("unknown case class `{other}`"))),
                };
                log.events.push(EventRow {
                    tau: parse_f64(f[0])?,
                    kind,
                    case,
                    chi: parse_f64(f[3])?,
                    h_at_tau: parse_f64(f[4])?,
                    estimate_changed: parse_flag(f[5])?,
                });
            }
        }
        Ok(log)
    }
}

fn parse_error(msg: &str) -> Error {
    Error::InvalidInput(format!("malformed log: {msg}"))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse().map_err(|_| parse_error(&format!("bad number `{s}`")))
}

fn parse_flag(s: &str) -> Result<bool> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(parse_error(&format!("bad flag `{s}`"))),
    }
}

/// Summary of one run, computed from the logged rows and events only.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub min_h: f64,
    /// Largest `|v_f − v_d|` at or after `transient_end`.
    pub max_tracking_error: f64,
    pub final_tracking_error: f64,
    pub update_count: usize,
    /// Trigger counts for cases 1, 2 and 3.
    pub trigger_counts: [usize; 3],
    /// Smallest gap between consecutive triggers (infinite with fewer than two).
    pub min_gap: f64,
    /// Smallest gap between consecutive Case-2 triggers.
    pub min_case2_gap: f64,
    /// `‖θ̂_V‖` (or `‖θ̂‖`) strictly increasing over the final window.
    pub estimate_growing: bool,
}

impl Metrics {
    pub fn from_log(log: &TrajectoryLog, v_d: f64, transient_end: f64, final_window: f64) -> Self {
        let min_h = log.rows.iter().map(|r| r.h).fold(f64::INFINITY, f64::min);
        let max_tracking_error = log
            .rows
            .iter()
            .filter(|r| r.t >= transient_end)
            .map(|r| (r.v_f - v_d).abs())
            .fold(0.0, f64::max);
        let final_tracking_error = log.rows.last().map_or(f64::NAN, |r| (r.v_f - v_d).abs());
        let update_count = log.events.iter().filter(|e| e.estimate_changed).count();
        let mut trigger_counts = [0; 3];
        for e in &log.events {
            trigger_counts[usize::from(e.case.number()) - 1] += 1;
        }
        let gap = |times: Vec<f64>| times.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        let min_gap = gap(log.events.iter().map(|e| e.tau).collect());
        let min_case2_gap = gap(
            log.events
                .iter()
                .filter(|e| e.case == TriggerCase::Case2)
                .map(|e| e.tau)
                .collect(),
        );
        let t_last = log.rows.last().map_or(0.0, |r| r.t);
        let norms: Vec<f64> = log
            .rows
            .iter()
            .filter(|r| r.t >= t_last - final_window)
            .map(|r| r.theta[..log.p].iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let estimate_growing = norms.len() >= 2 && norms.windows(2).all(|w| w[1] > w[0]);
        Self {
            min_h,
            max_tracking_error,
            final_tracking_error,
            update_count,
            trigger_counts,
            min_gap,
            min_case2_gap,
            estimate_growing,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TrajectoryLog {
        let mut log = TrajectoryLog::new(2, true);
        for k in 0..4 {
            let t = k as f64 * 0.5;
            log.rows.push(LogRow {
                t,
                x_f: t,
                v_f: 1.0 + t,
                x_l: 10.0,
                v_l: 2.0,
                tau_f: -0.1 * t,
                delta: 1.0 / 3.0,
                h: 5.0 - t,
                v: 0.5,
                theta: vec![1.0 + t, 0.1, -2.0, 3.0],
                clf_active: k % 2 == 0,
                cbf_active: k == 3,
            });
        }
        log.events.push(EventRow {
            tau: 0.25,
            kind: TriggerKind::AlarmCrossing,
            case: TriggerCase::Case3,
            chi: 1.0 / 7.0,
            h_at_tau: 1.0 / 7.0,
            estimate_changed: true,
        });
        log.events.push(EventRow {
            tau: 1.25,
            kind: TriggerKind::MaxInterval,
            case: TriggerCase::Case1,
            chi: 1.0 / 14.0,
            h_at_tau: 3.0,
            estimate_changed: false,
        });
        log
    }

    #[test]
    fn header_layouts() {
        assert_eq!(
            TrajectoryLog::new(3, false).trajectory_header(),
            "t,x_f,v_f,x_l,v_l,tau_f,delta,h,V,that_1,that_2,that_3,clf_active,cbf_active"
        );
        assert_eq!(
            TrajectoryLog::new(1, true).trajectory_header(),
            "t,x_f,v_f,x_l,v_l,tau_f,delta,h,V,thatV_1,thath_1,clf_active,cbf_active"
        );
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let log = sample();
        let mut traj = Vec::new();
        let mut ev = Vec::new();
        log.write_trajectory_csv(&mut traj).unwrap();
        log.write_events_csv(&mut ev).unwrap();
        let back = TrajectoryLog::read_csv(traj.as_slice(), Some(ev.as_slice())).unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn metrics_from_sample() {
        let m = Metrics::from_log(&sample(), 2.0, 1.0, 1.0);
        assert_eq!(m.min_h, 3.5);
        assert_eq!(m.max_tracking_error, 0.5);
        assert_eq!(m.final_tracking_error, 0.5);
        assert_eq!(m.update_count, 1);
        assert_eq!(m.trigger_counts, [1, 0, 1]);
        assert_eq!(m.min_gap, 1.0);
        assert_eq!(m.min_case2_gap, f64::INFINITY);
        assert!(m.estimate_growing);
    }

    #[test]
    fn malformed_rows_rejected() {
        let text = "t,x_f\n1,2\n";
        assert!(TrajectoryLog::read_csv(text.as_bytes(), None::<&[u8]>).is_err());
    }
}
