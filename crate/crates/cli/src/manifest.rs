//! Per-run record of settings, paths and timings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cdtm_core::Result;
use serde::{Deserialize, Serialize};

use crate::settings::Settings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub threads: usize,
    pub settings: Settings,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub timings: Vec<PhaseTiming>,
}

impl RunManifest {
    pub fn new(command: &str, settings: &Settings) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: settings.train.seed,
            threads: rayon::current_num_threads(),
            settings: settings.clone(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.inputs.insert(name.into(), path.to_path_buf());
    }

    pub fn output(&mut self, path: PathBuf) -> PathBuf {
        self.outputs.push(path.clone());
        path
    }

    /// Runs `f` and records its wall-clock time under `phase`.
    pub fn timed<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push(PhaseTiming {
            phase: phase.into(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn write(mut self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        self.outputs.push(path.clone());
        std::fs::write(path, self.to_json_string()? + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cdtm_core::Penalty;

    #[test]
    fn round_trips_through_json() {
        let mut settings = Settings::default();
        settings.train.penalty = Penalty::Homogeneous(0.1 + 0.2);
        settings.train.zeta = Some(vec![1.0 / 3.0; 10]);
        settings.eval.lambdas = vec![f64::MIN_POSITIVE, 1e300, 2.0f64.sqrt()];
        let mut m = RunManifest::new("train", &settings);
        m.input("corpus", Path::new("docs/"));
        m.output(PathBuf::from("run/model.json"));
        m.timed("fit", || ());
        let back = RunManifest::from_json_str(&m.to_json_string().unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
