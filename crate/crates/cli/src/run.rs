//! Output directory bookkeeping: phase timings, the manifest and the
//! error file.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nsk_core::snapshot::Snapshot;
use nsk_core::{Grid, NskError, Result};
use serde::Serialize;

use crate::config::ScenarioConfig;

pub const VERSION: &str = env!("NSK_VERSION");

#[derive(Clone, Debug, Serialize)]
pub struct Phase {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_sha256: String,
    seed: u64,
    exit_code: i32,
    phases: &'a [Phase],
    total_seconds: f64,
    outputs: &'a [String],
}

#[derive(Debug, Serialize)]
struct ErrorFile<'a> {
    kind: &'a str,
    message: String,
    phase: Option<&'a str>,
    exit_code: i32,
}

pub struct Run {
    pub dir: PathBuf,
    pub quiet: bool,
    command: String,
    start: Instant,
    phases: Vec<Phase>,
    current: Option<String>,
    outputs: Vec<String>,
}

impl Run {
    pub fn create(dir: &Path, command: &str, quiet: bool) -> Result<Run> {
        fs::create_dir_all(dir)?;
        let _ = fs::remove_file(dir.join("error.json"));
        Ok(Run {
            dir: dir.to_path_buf(),
            quiet,
            command: command.into(),
            start: Instant::now(),
            phases: Vec::new(),
            current: None,
            outputs: Vec::new(),
        })
    }

    /// Runs `f` as a named, timed phase.
    pub fn phase<T>(&mut self, name: &str, f: impl FnOnce(&mut Run) -> Result<T>) -> Result<T> {
        self.say(&format!("[{name}]"));
        self.current = Some(name.into());
        let t = Instant::now();
        let out = f(self)?;
        self.phases.push(Phase { name: name.into(), seconds: t.elapsed().as_secs_f64() });
        self.current = None;
        Ok(out)
    }

    pub fn say(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        fs::write(self.dir.join(name), contents)?;
        self.outputs.push(name.into());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value).expect("report serializes");
        s.push('\n');
        self.write(name, &s)
    }

    pub fn snapshot(&mut self, g: &Grid, sub: &str, quantity: &str, data: &[f64]) -> Result<()> {
        let rel = if sub.is_empty() { format!("{quantity}.bin") } else { format!("{sub}/{quantity}.bin") };
        let path = self.dir.join(&rel);
        if let Some(p) = path.parent() {
            fs::create_dir_all(p)?;
        }
        Snapshot::new(g, quantity, data)?.write(&path)?;
        self.outputs.push(rel);
        Ok(())
    }

    pub fn record_output(&mut self, rel: &str) {
        self.outputs.push(rel.into());
    }

    pub fn finish(&mut self, config: &ScenarioConfig, exit_code: i32) -> Result<()> {
        let m = Manifest {
            command: &self.command,
            version: VERSION,
            config_sha256: config.hash(),
            seed: config.seed,
            exit_code,
            phases: &self.phases,
            total_seconds: self.start.elapsed().as_secs_f64(),
            outputs: &self.outputs,
        };
        let s = serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n";
        fs::write(self.dir.join("manifest.json"), s)?;
        Ok(())
    }

    pub fn fail(&mut self, config: &ScenarioConfig, err: &NskError, exit_code: i32) {
        write_error(&self.dir, err, self.current.as_deref(), exit_code);
        let _ = self.finish(config, exit_code);
    }
}

/// Machine-readable error; best effort, since the failure may be the
/// output directory itself.
pub fn write_error(dir: &Path, err: &NskError, phase: Option<&str>, exit_code: i32) {
    let e = ErrorFile { kind: err.kind(), message: err.to_string(), phase, exit_code };
    let s = serde_json::to_string_pretty(&e).expect("error serializes") + "\n";
    if fs::create_dir_all(dir).is_ok() {
        let _ = fs::write(dir.join("error.json"), &s);
    }
    eprint!("{s}");
}
