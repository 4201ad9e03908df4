//! CSV and JSON writers (and readers) for experiment artifacts.
//!
//! Every CSV has a header row, Unix newlines and floats in `{:.16e}` form,
//! which is 17 significant digits and round-trips every `f64` exactly.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::centralized::CentralizedState;
use crate::distributed::SlotRecord;
use crate::model::SignalProfile;
use crate::network::GossipEvent;
use crate::scenario::{ExperimentPlan, Summary, TrialResult};

pub const BELIEFS_HEADER: [&str; 5] = ["trial", "slot", "agent", "state_label", "belief"];
pub const RATECHECK_HEADER: [&str; 6] = [
    "slot",
    "trial",
    "agent",
    "log_gap",
    "bound_log_gap",
    "within_bound",
];
pub const CENTRALIZED_HEADER: [&str; 4] = ["trial", "slot", "state_label", "belief"];
pub const TICKS_HEADER: [&str; 3] = ["trial", "slot", "time"];

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("record {record}: {message}")]
    Malformed { record: usize, message: String },
}

pub type OutputResult<T> = std::result::Result<T, OutputError>;

pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).from_reader(r)
}

fn malformed(record: usize, message: impl Into<String>) -> OutputError {
    OutputError::Malformed {
        record,
        message: message.into(),
    }
}

fn field(rec: &csv::StringRecord, idx: usize, row: usize) -> OutputResult<&str> {
    rec.get(idx)
        .ok_or_else(|| malformed(row, format!("missing column {idx}")))
}

fn parse<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, row: usize) -> OutputResult<T>
where
    T::Err: std::fmt::Display,
{
    let raw = field(rec, idx, row)?;
    raw.parse()
        .map_err(|e: T::Err| malformed(row, format!("column {idx} ({raw:?}): {e}")))
}

fn check_header<R: Read>(r: &mut csv::Reader<R>, expected: &[&str]) -> OutputResult<()> {
    let header = r.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(malformed(
            0,
            format!("expected header {expected:?}, got {header:?}"),
        ));
    }
    Ok(())
}

/// One row of the beliefs CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefRow {
    pub trial: u64,
    pub slot: u64,
    pub agent: usize,
    pub state_label: String,
    pub belief: f64,
}

/// Rows for every snapshot of every trial, in trial, slot, agent, state order.
pub fn belief_rows(trials: &[TrialResult], labels: &[String]) -> Vec<BeliefRow> {
    let mut rows = Vec::new();
    for t in trials {
        for snap in &t.snapshots {
            for (agent, belief) in snap.beliefs.iter().enumerate() {
                for (label, &w) in labels.iter().zip(belief.weights()) {
                    rows.push(BeliefRow {
                        trial: t.trial_index,
                        slot: snap.slot,
                        agent,
                        state_label: label.clone(),
                        belief: w,
                    });
                }
            }
        }
    }
    rows
}

pub fn write_belief_rows<W: Write>(w: W, rows: &[BeliefRow]) -> OutputResult<()> {
    let mut out = writer(w);
    out.write_record(BELIEFS_HEADER)?;
    for r in rows {
        out.write_record([
            r.trial.to_string(),
            r.slot.to_string(),
            r.agent.to_string(),
            r.state_label.clone(),
            format_float(r.belief),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_belief_rows<R: Read>(r: R) -> OutputResult<Vec<BeliefRow>> {
    let mut rd = reader(r);
    check_header(&mut rd, &BELIEFS_HEADER)?;
    rd.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            let row = i + 1;
            Ok(BeliefRow {
                trial: parse(&rec, 0, row)?,
                slot: parse(&rec, 1, row)?,
                agent: parse(&rec, 2, row)?,
                state_label: field(&rec, 3, row)?.to_string(),
                belief: parse(&rec, 4, row)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatecheckRow {
    pub slot: u64,
    pub trial: u64,
    pub agent: usize,
    pub log_gap: f64,
    pub bound_log_gap: Option<f64>,
    pub within_bound: Option<bool>,
}

/// Rows in checkpoint slot, trial, agent order.
pub fn ratecheck_rows(plan: &ExperimentPlan, trials: &[TrialResult]) -> Vec<RatecheckRow> {
    let mut rows = Vec::new();
    for (c, &slot) in plan.checkpoints.iter().enumerate() {
        for t in trials {
            let cp = &t.checkpoints[c];
            for (agent, &gap) in cp.log_gaps.iter().enumerate() {
                rows.push(RatecheckRow {
                    slot,
                    trial: t.trial_index,
                    agent,
                    log_gap: gap,
                    bound_log_gap: plan.bounds[agent].map(|b| b.log_bound_at(slot)),
                    within_bound: cp.within[agent],
                });
            }
        }
    }
    rows
}

pub fn write_ratecheck_rows<W: Write>(w: W, rows: &[RatecheckRow]) -> OutputResult<()> {
    let mut out = writer(w);
    out.write_record(RATECHECK_HEADER)?;
    for r in rows {
        out.write_record([
            r.slot.to_string(),
            r.trial.to_string(),
            r.agent.to_string(),
            format_float(r.log_gap),
            r.bound_log_gap.map(format_float).unwrap_or_default(),
            r.within_bound.map(|b| b.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_ratecheck_rows<R: Read>(r: R) -> OutputResult<Vec<RatecheckRow>> {
    let mut rd = reader(r);
    check_header(&mut rd, &RATECHECK_HEADER)?;
    rd.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            let row = i + 1;
            let optional = |idx| -> OutputResult<Option<&str>> {
                let raw = field(&rec, idx, row)?;
                Ok((!raw.is_empty()).then_some(raw))
            };
            Ok(RatecheckRow {
                slot: parse(&rec, 0, row)?,
                trial: parse(&rec, 1, row)?,
                agent: parse(&rec, 2, row)?,
                log_gap: parse(&rec, 3, row)?,
                bound_log_gap: optional(4)?.map(|_| parse(&rec, 4, row)).transpose()?,
                within_bound: optional(5)?.map(|_| parse(&rec, 5, row)).transpose()?,
            })
        })
        .collect()
}

/// Pretty-printed JSON with a trailing newline.
pub fn summary_json(summary: &Summary) -> OutputResult<String> {
    Ok(serde_json::to_string_pretty(summary)? + "\n")
}

/// Event log: `slot,i,j,s0,...,s{n-1}`; `i` and `j` are empty in silent slots.
pub fn write_event_log<W: Write>(w: W, log: &[SlotRecord], n: usize) -> OutputResult<()> {
    let mut out = writer(w);
    let header: Vec<String> = ["slot", "i", "j"]
        .iter()
        .map(|s| s.to_string())
        .chain((0..n).map(|k| format!("s{k}")))
        .collect();
    out.write_record(&header)?;
    for rec in log {
        if rec.signals.len() != n {
            return Err(malformed(
                rec.slot as usize,
                format!("{} signals for {n} agents", rec.signals.len()),
            ));
        }
        let (i, j) = match rec.event {
            Some(e) => (e.i.to_string(), e.j.to_string()),
            None => (String::new(), String::new()),
        };
        let row: Vec<String> = [rec.slot.to_string(), i, j]
            .into_iter()
            .chain(rec.signals.signals.iter().map(|s| s.to_string()))
            .collect();
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_event_log<R: Read>(r: R) -> OutputResult<Vec<SlotRecord>> {
    let mut rd = reader(r);
    let header = rd.headers()?.clone();
    if header.len() < 3 || header.iter().take(3).ne(["slot", "i", "j"]) {
        return Err(malformed(0, format!("unexpected header {header:?}")));
    }
    let n = header.len() - 3;
    rd.records()
        .enumerate()
        .map(|(idx, rec)| {
            let rec = rec?;
            let row = idx + 1;
            let slot: u64 = parse(&rec, 0, row)?;
            let event = match (
                field(&rec, 1, row)?.is_empty(),
                field(&rec, 2, row)?.is_empty(),
            ) {
                (true, true) => None,
                (false, false) => Some(GossipEvent {
                    i: parse(&rec, 1, row)?,
                    j: parse(&rec, 2, row)?,
                    slot,
                }),
                _ => return Err(malformed(row, "half-empty gossip pair")),
            };
            let signals = (0..n)
                .map(|k| parse(&rec, 3 + k, row))
                .collect::<OutputResult<Vec<usize>>>()?;
            Ok(SlotRecord {
                slot,
                event,
                signals: SignalProfile::new(signals),
            })
        })
        .collect()
}

/// Centralized trajectories, one per trial, as `trial,slot,state_label,belief`.
pub fn write_centralized<W: Write>(
    w: W,
    runs: &[(u64, Vec<CentralizedState>)],
    labels: &[String],
) -> OutputResult<()> {
    let mut out = writer(w);
    out.write_record(CENTRALIZED_HEADER)?;
    for (trial, states) in runs {
        for st in states {
            for (label, &b) in labels.iter().zip(st.belief.weights()) {
                out.write_record([
                    trial.to_string(),
                    st.slot.to_string(),
                    label.clone(),
                    format_float(b),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Continuous-time stamps: `time` is when slot `slot` ends.
pub fn write_ticks<W: Write>(w: W, runs: &[(u64, Vec<f64>)]) -> OutputResult<()> {
    let mut out = writer(w);
    out.write_record(TICKS_HEADER)?;
    for (trial, durations) in runs {
        let mut clock = 0.0;
        for (slot, d) in durations.iter().enumerate() {
            clock += d;
            out.write_record([trial.to_string(), slot.to_string(), format_float(clock)])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Paths written by [`write_bundle`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputBundle {
    pub beliefs_csv_path: PathBuf,
    pub summary_json_path: PathBuf,
    pub ratecheck_csv_path: PathBuf,
}

impl OutputBundle {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            beliefs_csv_path: dir.join("beliefs.csv"),
            summary_json_path: dir.join("summary.json"),
            ratecheck_csv_path: dir.join("ratecheck.csv"),
        }
    }
}

fn create(path: &Path) -> OutputResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes beliefs, ratecheck and summary files into `dir`, creating it.
pub fn write_bundle(
    dir: &Path,
    plan: &ExperimentPlan,
    trials: &[TrialResult],
    summary: &Summary,
) -> OutputResult<OutputBundle> {
    std::fs::create_dir_all(dir)?;
    let bundle = OutputBundle::in_dir(dir);
    let labels = plan.scenario.model.states().labels();
    write_belief_rows(
        create(&bundle.beliefs_csv_path)?,
        &belief_rows(trials, labels),
    )?;
    write_ratecheck_rows(
        create(&bundle.ratecheck_csv_path)?,
        &ratecheck_rows(plan, trials),
    )?;
    std::fs::write(&bundle.summary_json_path, summary_json(summary)?)?;
    Ok(bundle)
}
