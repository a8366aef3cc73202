//! Shadow execution pipeline: a bounded queue feeding a single worker
//! thread that scores shadow predictors and appends one JSONL record per
//! (event, shadow predictor) to the sink file. The live path only ever
//! enqueues; on overflow the job is dropped and counted, never blocked on.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender, TrySendError};
use std::sync::Arc;
use std::thread::JoinHandle;

use chrono::{DateTime, Utc};
use muse_core::transforms::{predict, ExecContext};
use muse_core::types::Event;
use serde::{Deserialize, Serialize};

use crate::state::EngineState;

/// One appended line of the shadow sink.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowRecord {
    pub event_id: String,
    pub tenant_id: String,
    pub predictor_id: String,
    pub score: f64,
    pub config_version: String,
    pub timestamp: DateTime<Utc>,
}

/// A mirrored request waiting for shadow execution. Carries the engine
/// snapshot the routing decision was made under, so shadow scores are
/// always consistent with exactly one config version.
pub struct ShadowJob {
    pub state: Arc<EngineState>,
    pub event: Event,
    pub shadow_predictors: Vec<String>,
    pub config_version: String,
    pub timestamp: DateTime<Utc>,
}

enum SinkMessage {
    Job(ShadowJob),
    Flush(SyncSender<()>),
}

#[derive(Debug, Default)]
pub struct SinkStats {
    pub enqueued: AtomicU64,
    pub dropped: AtomicU64,
    pub failures: AtomicU64,
    pub written: AtomicU64,
}

/// Handle to the shadow worker. Dropping it closes the queue; the worker
/// drains what was accepted and exits.
pub struct ShadowSink {
    sender: SyncSender<SinkMessage>,
    stats: Arc<SinkStats>,
    path: PathBuf,
    worker: Option<JoinHandle<()>>,
}

impl ShadowSink {
    pub fn open(path: impl AsRef<Path>, queue_depth: usize) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        let (sender, receiver) = sync_channel(queue_depth.max(1));
        let stats = Arc::new(SinkStats::default());
        let worker_stats = Arc::clone(&stats);
        let worker = std::thread::Builder::new()
            .name("shadow-sink".to_string())
            .spawn(move || worker_loop(receiver, file, worker_stats))?;
        Ok(ShadowSink {
            sender,
            stats,
            path,
            worker: Some(worker),
        })
    }

    /// Non-blocking enqueue; a full queue drops the job and counts it.
    pub fn enqueue(&self, job: ShadowJob) {
        let mirrored = job.shadow_predictors.len() as u64;
        match self.sender.try_send(SinkMessage::Job(job)) {
            Ok(()) => {
                self.stats.enqueued.fetch_add(mirrored, Ordering::Relaxed);
            }
            Err(TrySendError::Full(_)) | Err(TrySendError::Disconnected(_)) => {
                self.stats.dropped.fetch_add(mirrored, Ordering::Relaxed);
            }
        }
    }

    /// Block until every accepted job has been executed and flushed to
    /// disk. Used by tests and batch drivers before reading the sink.
    pub fn drain(&self) {
        let (ack_tx, ack_rx) = sync_channel(1);
        if self.sender.send(SinkMessage::Flush(ack_tx)).is_ok() {
            let _ = ack_rx.recv();
        }
    }

    pub fn stats(&self) -> &SinkStats {
        &self.stats
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Drop for ShadowSink {
    fn drop(&mut self) {
        // Close the channel so the worker drains and exits.
        let (closed_tx, _closed_rx) = sync_channel(1);
        let _ = std::mem::replace(&mut self.sender, closed_tx);
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

fn worker_loop(receiver: Receiver<SinkMessage>, file: File, stats: Arc<SinkStats>) {
    let mut writer = BufWriter::new(file);
    while let Ok(message) = receiver.recv() {
        match message {
            SinkMessage::Job(job) => {
                let ctx = ExecContext {
                    backends: &job.state.backends,
                    tables: &job.state.tables,
                };
                for predictor_id in &job.shadow_predictors {
                    let Some(spec) = job.state.predictors.get(predictor_id) else {
                        stats.failures.fetch_add(1, Ordering::Relaxed);
                        continue;
                    };
                    match predict(&job.event, spec, ctx) {
                        Ok(response) => {
                            let record = ShadowRecord {
                                event_id: job.event.event_id.clone(),
                                tenant_id: job.event.tenant_id.clone(),
                                predictor_id: predictor_id.clone(),
                                score: response.score.value(),
                                config_version: job.config_version.clone(),
                                timestamp: job.timestamp,
                            };
                            match serde_json::to_string(&record) {
                                Ok(line) => {
                                    if writeln!(writer, "{line}").is_ok() {
                                        stats.written.fetch_add(1, Ordering::Relaxed);
                                    } else {
                                        stats.failures.fetch_add(1, Ordering::Relaxed);
                                    }
                                }
                                Err(_) => {
                                    stats.failures.fetch_add(1, Ordering::Relaxed);
                                }
                            }
                        }
                        Err(_) => {
                            stats.failures.fetch_add(1, Ordering::Relaxed);
                        }
                    }
                }
            }
            SinkMessage::Flush(ack) => {
                let _ = writer.flush();
                let _ = ack.send(());
            }
        }
    }
    let _ = writer.flush();
}

/// Read every record of a shadow sink file.
pub fn read_records(path: impl AsRef<Path>) -> std::io::Result<Vec<ShadowRecord>> {
    let content = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (number, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ShadowRecord = serde_json::from_str(line).map_err(|err| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("sink line {}: {err}", number + 1),
            )
        })?;
        records.push(record);
    }
    Ok(records)
}
