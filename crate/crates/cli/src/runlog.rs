//! Timestamped sidecar log. Timestamps live only here so the other
//! artifacts stay byte-identical across runs.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

pub struct RunLog {
    file: Option<File>,
}

impl RunLog {
    /// Appends to `dir/run.log`; logging is silently disabled if the file
    /// cannot be opened.
    pub fn open(dir: &Path) -> Self {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join("run.log"))
            .ok();
        Self { file }
    }

    pub fn disabled() -> Self {
        Self { file: None }
    }

    pub fn line(&mut self, msg: &str) {
        if let Some(f) = self.file.as_mut() {
            let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
            let _ = writeln!(f, "[{}.{:03}] {msg}", now.as_secs(), now.subsec_millis());
        }
    }
}
