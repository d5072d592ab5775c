//! Per-step trajectory logs and their CSV persistence.
//!
//! A file starts with `#`-prefixed `key=value` header lines, then a CSV table
//! with one row per time step:
//!
//! ```text
//! # stableplan-trajectory v1
//! # environment=two_queue
//! # trial=0
//! # seed=42
//! # horizon=3
//! # dimension=2
//! # config_hash=9f2c...
//! # status=complete
//! t,s0,s1,action,reward,lyapunov,norm,delta,samples
//! 0,0,0,1,1,0,0,1,700
//! ...
//! ```
//!
//! The final row has empty `action` and `reward`: it records the state reached
//! after the last action.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ActionId, State};

pub const TRAJECTORY_SCHEMA: &str = "stableplan-trajectory v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub t: u64,
    pub state: State,
    pub action: Option<ActionId>,
    pub reward: Option<f64>,
    pub lyapunov: f64,
    pub norm: f64,
    pub delta: f64,
    pub samples_used: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "detail")]
pub enum TrialStatus {
    Complete,
    /// Stopped early; the message names the cause.
    Failed(String),
}

impl TrialStatus {
    pub fn is_complete(&self) -> bool {
        matches!(self, TrialStatus::Complete)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub environment: String,
    pub trial: u64,
    pub seed: u64,
    pub horizon: u64,
    pub dimension: usize,
    pub config_hash: String,
    pub status: TrialStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub header: TrajectoryHeader,
    pub rows: Vec<StepRow>,
}

impl TrajectoryRecord {
    pub fn new(header: TrajectoryHeader) -> Self {
        TrajectoryRecord {
            header,
            rows: Vec::new(),
        }
    }

    /// A bare record from Lyapunov values only, used by estimators and tests.
    pub fn from_lyapunov(values: &[f64]) -> Self {
        let rows = values
            .iter()
            .enumerate()
            .map(|(t, &l)| StepRow {
                t: t as u64,
                state: State::scalar(l),
                action: None,
                reward: None,
                lyapunov: l,
                norm: l,
                delta: 1.0,
                samples_used: 0,
            })
            .collect();
        TrajectoryRecord {
            header: TrajectoryHeader {
                environment: "synthetic".into(),
                trial: 0,
                seed: 0,
                horizon: values.len().saturating_sub(1) as u64,
                dimension: 1,
                config_hash: String::new(),
                status: TrialStatus::Complete,
            },
            rows,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn lyapunov(&self, t: usize) -> f64 {
        self.rows[t].lyapunov
    }

    pub fn total_samples(&self) -> u64 {
        self.rows.iter().map(|r| r.samples_used).sum()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        fs::write(path, out)?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let h = &self.header;
        writeln!(w, "# {TRAJECTORY_SCHEMA}")?;
        writeln!(w, "# environment={}", h.environment)?;
        writeln!(w, "# trial={}", h.trial)?;
        writeln!(w, "# seed={}", h.seed)?;
        writeln!(w, "# horizon={}", h.horizon)?;
        writeln!(w, "# dimension={}", h.dimension)?;
        writeln!(w, "# config_hash={}", h.config_hash)?;
        match &h.status {
            TrialStatus::Complete => writeln!(w, "# status=complete")?,
            TrialStatus::Failed(msg) => {
                writeln!(w, "# status=failed:{}", msg.replace(['\n', '\r'], " "))?
            }
        }
        let mut csv = csv::WriterBuilder::new().from_writer(w);
        let mut columns = vec!["t".to_string()];
        columns.extend((0..h.dimension).map(|i| format!("s{i}")));
        columns.extend(
            ["action", "reward", "lyapunov", "norm", "delta", "samples"].map(String::from),
        );
        csv.write_record(&columns).map_err(csv_io)?;
        for row in &self.rows {
            let mut rec = vec![row.t.to_string()];
            rec.extend(row.state.coords().iter().map(|x| x.to_string()));
            rec.push(row.action.map(|a| a.to_string()).unwrap_or_default());
            rec.push(row.reward.map(|r| r.to_string()).unwrap_or_default());
            rec.push(row.lyapunov.to_string());
            rec.push(row.norm.to_string());
            rec.push(row.delta.to_string());
            rec.push(row.samples_used.to_string());
            csv.write_record(&rec).map_err(csv_io)?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = fs::File::open(path)?;
        Self::read_from(BufReader::new(file), &path.display().to_string())
    }

    pub fn read_from<R: BufRead>(reader: R, name: &str) -> Result<Self> {
        let parse_err = |row: u64, msg: String| Error::Parse {
            path: name.to_string(),
            row,
            msg,
        };
        let mut lines = Vec::new();
        for line in reader.lines() {
            lines.push(line?);
        }
        let mut meta = Vec::new();
        let mut body_start = 0;
        for (i, line) in lines.iter().enumerate() {
            match line.strip_prefix('#') {
                Some(rest) => meta.push((i as u64 + 1, rest.trim().to_string())),
                None => {
                    body_start = i;
                    break;
                }
            }
            body_start = i + 1;
        }
        if meta.first().map(|m| m.1.as_str()) != Some(TRAJECTORY_SCHEMA) {
            return Err(parse_err(1, format!("missing schema line `# {TRAJECTORY_SCHEMA}`")));
        }
        let field = |key: &str| -> Result<(u64, String)> {
            meta.iter()
                .find_map(|(line, kv)| {
                    kv.strip_prefix(key)
                        .and_then(|r| r.strip_prefix('='))
                        .map(|v| (*line, v.to_string()))
                })
                .ok_or_else(|| parse_err(1, format!("missing header field `{key}`")))
        };
        let int = |key: &str| -> Result<u64> {
            let (line, v) = field(key)?;
            v.parse()
                .map_err(|_| parse_err(line, format!("header field `{key}` is not an integer")))
        };
        let status = match field("status")?.1.as_str() {
            "complete" => TrialStatus::Complete,
            s => match s.strip_prefix("failed:") {
                Some(msg) => TrialStatus::Failed(msg.to_string()),
                None => return Err(parse_err(field("status")?.0, format!("unknown status `{s}`"))),
            },
        };
        let header = TrajectoryHeader {
            environment: field("environment")?.1,
            trial: int("trial")?,
            seed: int("seed")?,
            horizon: int("horizon")?,
            dimension: int("dimension")? as usize,
            config_hash: field("config_hash")?.1,
            status,
        };
        let d = header.dimension;
        let width = d + 7;

        let body = lines[body_start..].join("\n");
        let mut csv = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(body.as_bytes());
        let offset = body_start as u64;
        let columns = csv
            .headers()
            .map_err(|e| parse_err(offset + 1, e.to_string()))?
            .clone();
        if columns.len() != width || columns.get(0) != Some("t") {
            return Err(parse_err(
                offset + 1,
                format!("expected {width} columns for dimension {d}, found {}", columns.len()),
            ));
        }
        let mut rows = Vec::new();
        for rec in csv.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                parse_err(offset + line, e.to_string())
            })?;
            let line = offset + rec.position().map_or(0, |p| p.line());
            if rec.len() != width {
                return Err(parse_err(
                    line,
                    format!("expected {width} fields, found {}", rec.len()),
                ));
            }
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse::<f64>()
                    .map_err(|_| parse_err(line, format!("field {} (`{}`) is not a number", i + 1, &rec[i])))
            };
            let opt = |i: usize| -> Result<Option<f64>> {
                if rec[i].is_empty() {
                    Ok(None)
                } else {
                    num(i).map(Some)
                }
            };
            let t = rec[0]
                .parse::<u64>()
                .map_err(|_| parse_err(line, format!("time index `{}` is not an integer", &rec[0])))?;
            if t != rows.len() as u64 {
                return Err(parse_err(line, format!("expected t={}, found t={t}", rows.len())));
            }
            let state = State::new((1..=d).map(num).collect::<Result<Vec<_>>>()?);
            let action = match &rec[d + 1] {
                "" => None,
                a => Some(ActionId(a.parse().map_err(|_| {
                    parse_err(line, format!("action `{a}` is not an integer"))
                })?)),
            };
            rows.push(StepRow {
                t,
                state,
                action,
                reward: opt(d + 2)?,
                lyapunov: num(d + 3)?,
                norm: num(d + 4)?,
                delta: num(d + 5)?,
                samples_used: rec[d + 6]
                    .parse()
                    .map_err(|_| parse_err(line, "samples column is not an integer".into()))?,
            });
        }
        if header.status.is_complete() && rows.len() as u64 != header.horizon + 1 {
            let missing = offset + 2 + rows.len() as u64;
            return Err(parse_err(
                missing,
                format!(
                    "truncated: expected {} rows, found {}",
                    header.horizon + 1,
                    rows.len()
                ),
            ));
        }
        Ok(TrajectoryRecord { header, rows })
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TrajectoryRecord {
        let mut rec = TrajectoryRecord::new(TrajectoryHeader {
            environment: "two_queue".into(),
            trial: 3,
            seed: 42,
            horizon: 2,
            dimension: 2,
            config_hash: "abc".into(),
            status: TrialStatus::Complete,
        });
        for t in 0..3u64 {
            let state = State::from([t as f64, 1.0]);
            rec.rows.push(StepRow {
                t,
                lyapunov: state.norm2(),
                norm: state.norm2(),
                state,
                action: (t < 2).then_some(ActionId(t as usize % 2)),
                reward: (t < 2).then_some(1.0 / (2.0 + t as f64)),
                delta: 0.5f64.powi(t as i32),
                samples_used: if t < 2 { 700 } else { 0 },
            });
        }
        rec
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let rec = sample();
        let mut buf = Vec::new();
        rec.write_to(&mut buf).unwrap();
        let back = TrajectoryRecord::read_from(&buf[..], "mem").unwrap();
        assert_eq!(back, rec);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# stableplan-trajectory v1\n"));
        assert!(text.contains("t,s0,s1,action,reward,lyapunov,norm,delta,samples\n"));
    }

    #[test]
    fn failed_status_round_trips() {
        let mut rec = sample();
        rec.header.status = TrialStatus::Failed("sample budget exceeded".into());
        rec.rows.truncate(1);
        let mut buf = Vec::new();
        rec.write_to(&mut buf).unwrap();
        assert_eq!(TrajectoryRecord::read_from(&buf[..], "mem").unwrap(), rec);
    }

    #[test]
    fn truncation_names_the_row() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        // cut the last row in half
        let cut = &text[..text.len() - 8];
        match TrajectoryRecord::read_from(cut.as_bytes(), "f.csv") {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 12),
            other => panic!("{other:?}"),
        }
        // drop the last row entirely
        let lines: Vec<&str> = text.lines().collect();
        let short = lines[..lines.len() - 1].join("\n");
        match TrajectoryRecord::read_from(short.as_bytes(), "f.csv") {
            Err(Error::Parse { row, msg, .. }) => {
                assert_eq!(row, 12);
                assert!(msg.contains("truncated"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_line_required() {
        let e = TrajectoryRecord::read_from("t,s0\n0,1\n".as_bytes(), "x").unwrap_err();
        assert!(matches!(e, Error::Parse { row: 1, .. }));
    }
}
