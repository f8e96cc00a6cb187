//! Run directories.
//!
//! ```text
//! <run_root>/<config hash prefix>/
//!   config.json        effective configuration
//!   lock               present while a process owns the directory
//!   log.jsonl          events of every command, grouped by command name
//!   cache/             persistent judge responses (live mode)
//!   artifacts/<cmd>/   outputs of each command, including section.json and log.jsonl
//!   report.{json,csv,md}
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::report::{render_report, EvalReport, Format, Section};
use crate::CliError;

#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates the directory if needed and takes its lock.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, CliError> {
        let root = root.into();
        fs::create_dir_all(root.join("artifacts")).map_err(|e| CliError::io(&root, e))?;
        let lock = root.join("lock");
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
        {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(CliError::Locked(root))
            }
            Err(e) => return Err(CliError::io(&lock, e)),
        }
        Ok(RunDir { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.root.join("cache")
    }

    /// Output directory of `command`, created on demand.
    pub fn artifacts(&self, command: &str) -> Result<PathBuf, CliError> {
        let dir = self.root.join("artifacts").join(command);
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(dir)
    }

    pub fn artifact_path(&self, command: &str) -> PathBuf {
        self.root.join("artifacts").join(command)
    }

    pub fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<(), CliError> {
        let mut text =
            serde_json::to_string_pretty(&serde_json::to_value(value).expect("serializable"))
                .expect("value serializes");
        text.push('\n');
        write_file(path, text.as_bytes())
    }

    pub fn write_jsonl<T: Serialize>(&self, path: &Path, items: &[T]) -> Result<(), CliError> {
        let mut text = String::new();
        for item in items {
            let v = serde_json::to_value(item).expect("serializable");
            text.push_str(&serde_json::to_string(&v).expect("value serializes"));
            text.push('\n');
        }
        write_file(path, text.as_bytes())
    }

    /// Replaces the command's own log and rebuilds the combined log.
    pub fn write_log(&self, command: &str, events: &[Value]) -> Result<(), CliError> {
        let dir = self.artifacts(command)?;
        self.write_jsonl(&dir.join("log.jsonl"), events)?;
        let mut combined = String::new();
        for d in self.command_dirs()? {
            let p = d.join("log.jsonl");
            if p.is_file() {
                combined.push_str(&fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?);
            }
        }
        write_file(&self.root.join("log.jsonl"), combined.as_bytes())
    }

    pub fn write_section(&self, section: &Section) -> Result<(), CliError> {
        let dir = self.artifacts(&section.command)?;
        self.write_json(&dir.join("section.json"), section)
    }

    pub fn sections(&self) -> Result<Vec<Section>, CliError> {
        let mut out = Vec::new();
        for d in self.command_dirs()? {
            let p = d.join("section.json");
            if p.is_file() {
                let text = fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
                out.push(serde_json::from_str(&text).map_err(|e| CliError::Input {
                    command: "report".into(),
                    message: format!("{}: {e}", p.display()),
                })?);
            }
        }
        Ok(out)
    }

    pub fn write_report(&self, report: &EvalReport) -> Result<(), CliError> {
        for f in Format::ALL {
            write_file(
                &self.root.join(format!("report.{}", f.extension())),
                render_report(report, f).as_bytes(),
            )?;
        }
        Ok(())
    }

    fn command_dirs(&self) -> Result<Vec<PathBuf>, CliError> {
        let base = self.root.join("artifacts");
        let mut dirs: Vec<PathBuf> = fs::read_dir(&base)
            .map_err(|e| CliError::io(&base, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        Ok(dirs)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.root.join("lock"));
    }
}

/// Writes through a temporary file so readers never see a partial artifact.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fbeval_core::ingest::write_atomic(path, bytes).map_err(|e| CliError::Pipeline {
        command: "write".into(),
        paper_id: None,
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let tmp = tempfile::tempdir().unwrap();
        let a = RunDir::open(tmp.path().join("r")).unwrap();
        assert!(matches!(
            RunDir::open(tmp.path().join("r")),
            Err(CliError::Locked(_))
        ));
        drop(a);
        assert!(RunDir::open(tmp.path().join("r")).is_ok());
    }

    #[test]
    fn combined_log_follows_command_order() {
        let tmp = tempfile::tempdir().unwrap();
        let r = RunDir::open(tmp.path()).unwrap();
        r.write_log("parse", &[serde_json::json!({"command": "parse"})])
            .unwrap();
        r.write_log("ingest", &[serde_json::json!({"command": "ingest"})])
            .unwrap();
        r.write_log("parse", &[serde_json::json!({"command": "parse", "n": 2})])
            .unwrap();
        let log = fs::read_to_string(tmp.path().join("log.jsonl")).unwrap();
        assert_eq!(
            log,
            "{\"command\":\"ingest\"}\n{\"command\":\"parse\",\"n\":2}\n"
        );
    }
}
