//! Plain log lines on stderr; timestamped copies in the output directory's `run.log`.
//!
//! Timestamps never reach any other output, so artifacts stay byte-identical
//! across reruns.

use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::{Mutex, OnceLock};
use std::time::{SystemTime, UNIX_EPOCH};

use log::{LevelFilter, Log, Metadata, Record};

pub const LOG_FILE: &str = "run.log";

struct Logger {
    level: LevelFilter,
    file: Mutex<Option<File>>,
}

static LOGGER: OnceLock<Logger> = OnceLock::new();

impl Log for Logger {
    fn enabled(&self, metadata: &Metadata) -> bool {
        metadata.level() <= self.level
    }

    fn log(&self, record: &Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        eprintln!("[{:<5}] {}", record.level(), record.args());
        if let Some(f) = self.file.lock().unwrap().as_mut() {
            let t = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
            let _ = writeln!(f, "{}.{:03} [{:<5}] {}", t.as_secs(), t.subsec_millis(), record.level(), record.args());
        }
    }

    fn flush(&self) {
        if let Some(f) = self.file.lock().unwrap().as_mut() {
            let _ = f.flush();
        }
    }
}

/// Install the logger; calls after the first are no-ops.
pub fn init(level: LevelFilter) {
    let logger = LOGGER.get_or_init(|| Logger { level, file: Mutex::new(None) });
    if log::set_logger(logger).is_ok() {
        log::set_max_level(logger.level);
    }
}

/// Append subsequent records to `dir/run.log`.
pub fn attach_file(dir: &Path) -> std::io::Result<()> {
    if let Some(logger) = LOGGER.get() {
        let f = File::options().create(true).append(true).open(dir.join(LOG_FILE))?;
        *logger.file.lock().unwrap() = Some(f);
    }
    Ok(())
}

/// Stop writing to the current log file.
pub fn detach_file() {
    if let Some(logger) = LOGGER.get() {
        if let Some(mut f) = logger.file.lock().unwrap().take() {
            let _ = f.flush();
        }
    }
}
