//! Episode logs: JSON-lines, one record per sensor tick, with a header
//! carrying route geometry summary and a trailing end record naming the
//! termination reason. The evaluator scores these logs alone.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::VehicleControl;
use crate::sim::InfractionEvent;

pub const EPISODE_SCHEMA: &str = "DKEL1";

#[derive(Debug, Error)]
pub enum EpisodeLogError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("log does not start with a header record")]
    MissingHeader,
    #[error("unsupported schema {0:?}")]
    BadSchema(String),
    #[error("record after end marker at line {0}")]
    RecordAfterEnd(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema: String,
    pub route_id: String,
    pub town: String,
    pub route_length_m: f64,
    pub lane_width: f64,
    pub seed: u64,
    pub fingerprint: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TickRecord {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub speed: f64,
    pub control: VehicleControl,
    pub infractions: Vec<InfractionEvent>,
    pub route_progress_m: f64,
    pub off_route_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    Finished,
    Deviation,
    TimeoutNoAction,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndRecord {
    pub t: f64,
    pub reason: TerminationReason,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Header(LogHeader),
    Tick(TickRecord),
    End(EndRecord),
}

#[derive(Debug, Clone)]
pub struct EpisodeLog {
    pub header: LogHeader,
    pub ticks: Vec<TickRecord>,
    pub end: Option<EndRecord>,
}

impl EpisodeLog {
    pub fn new(header: LogHeader) -> Self {
        EpisodeLog {
            header,
            ticks: Vec::new(),
            end: None,
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        out.push_str(&serde_json::to_string(&LogRecord::Header(self.header.clone())).unwrap());
        out.push('\n');
        for t in &self.ticks {
            out.push_str(&serde_json::to_string(&LogRecord::Tick(t.clone())).unwrap());
            out.push('\n');
        }
        if let Some(end) = &self.end {
            out.push_str(&serde_json::to_string(&LogRecord::End(end.clone())).unwrap());
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<EpisodeLog, EpisodeLogError> {
        let mut header = None;
        let mut ticks = Vec::new();
        let mut end: Option<EndRecord> = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: LogRecord = serde_json::from_str(line)
                .map_err(|source| EpisodeLogError::Json { line: i + 1, source })?;
            if end.is_some() {
                return Err(EpisodeLogError::RecordAfterEnd(i + 1));
            }
            match rec {
                LogRecord::Header(h) => {
                    if header.is_none() {
                        if h.schema != EPISODE_SCHEMA {
                            return Err(EpisodeLogError::BadSchema(h.schema));
                        }
                        header = Some(h);
                    } else {
                        return Err(EpisodeLogError::Json {
                            line: i + 1,
                            source: serde::de::Error::custom("duplicate header"),
                        });
                    }
                }
                LogRecord::Tick(t) => {
                    if header.is_none() {
                        return Err(EpisodeLogError::MissingHeader);
                    }
                    ticks.push(t);
                }
                LogRecord::End(e) => {
                    if header.is_none() {
                        return Err(EpisodeLogError::MissingHeader);
                    }
                    end = Some(e);
                }
            }
        }
        let header = header.ok_or(EpisodeLogError::MissingHeader)?;
        Ok(EpisodeLog { header, ticks, end })
    }

    pub fn write_file(&self, path: &Path) -> Result<(), EpisodeLogError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<EpisodeLog, EpisodeLogError> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut text = String::new();
        for line in f.lines() {
            text.push_str(&line?);
            text.push('\n');
        }
        EpisodeLog::from_jsonl(&text)
    }

    /// Total driven distance, from consecutive tick positions.
    pub fn driven_distance(&self) -> f64 {
        self.ticks
            .windows(2)
            .map(|w| {
                let dx = w[1].x - w[0].x;
                let dy = w[1].y - w[0].y;
                (dx * dx + dy * dy).sqrt()
            })
            .sum()
    }

    pub fn all_infractions(&self) -> Vec<InfractionEvent> {
        self.ticks
            .iter()
            .flat_map(|t| t.infractions.iter().copied())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::InfractionKind;

    fn sample_log() -> EpisodeLog {
        let mut log = EpisodeLog::new(LogHeader {
            schema: EPISODE_SCHEMA.into(),
            route_id: "r0".into(),
            town: "town_1".into(),
            route_length_m: 100.0,
            lane_width: 3.5,
            seed: 7,
            fingerprint: "abc123".into(),
        });
        for i in 0..4 {
            log.ticks.push(TickRecord {
                t: i as f64 * 0.5,
                x: i as f64,
                y: 0.0,
                yaw: 0.0,
                speed: 2.0,
                control: VehicleControl::idle(),
                infractions: if i == 2 {
                    vec![InfractionEvent {
                        kind: InfractionKind::RedLight,
                        sim_time: 1.0,
                    }]
                } else {
                    vec![]
                },
                route_progress_m: i as f64,
                off_route_m: 0.1,
            });
        }
        log.end = Some(EndRecord {
            t: 1.5,
            reason: TerminationReason::Finished,
        });
        log
    }

    #[test]
    fn jsonl_roundtrip() {
        let log = sample_log();
        let text = log.to_jsonl();
        let back = EpisodeLog::from_jsonl(&text).unwrap();
        assert_eq!(back.ticks.len(), 4);
        assert_eq!(back.header.route_id, "r0");
        assert_eq!(back.end.as_ref().unwrap().reason, TerminationReason::Finished);
        assert_eq!(back.to_jsonl(), text);
    }

    #[test]
    fn missing_header_is_error() {
        let line = r#"{"type":"tick","t":0.0,"x":0.0,"y":0.0,"yaw":0.0,"speed":0.0,"control":{"steer":0.0,"throttle":0.0,"brake":false},"infractions":[],"route_progress_m":0.0,"off_route_m":0.0}"#;
        assert!(matches!(
            EpisodeLog::from_jsonl(line),
            Err(EpisodeLogError::MissingHeader)
        ));
    }

    #[test]
    fn bad_json_names_line() {
        let log = sample_log();
        let mut text = log.to_jsonl();
        text.push_str("{broken\n");
        match EpisodeLog::from_jsonl(&text) {
            Err(EpisodeLogError::Json { line, .. }) => assert_eq!(line, 7),
            other => panic!("expected Json error, got {other:?}"),
        }
    }

    #[test]
    fn driven_distance_sums_steps() {
        let log = sample_log();
        assert!((log.driven_distance() - 3.0).abs() < 1e-12);
        assert_eq!(log.all_infractions().len(), 1);
    }
}
