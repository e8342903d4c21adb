//! Effective configuration of one invocation and its reproducibility log.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::Common;
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::par::Exec;
use crate::train::CHECKPOINT_VERSION;

/// Config-file values overlaid by command-line flags. Every key must be
/// consumed by the command, otherwise [`RunConfig::finish`] rejects it.
#[derive(Debug)]
pub struct RunConfig {
    pub command: &'static str,
    pub kv: KeyValues,
    pub out: PathBuf,
    /// Values actually used, echoed to `run.log`; replayable as `--config`.
    pub effective: KeyValues,
    inputs: Vec<(String, PathBuf)>,
}

impl RunConfig {
    pub fn new(command: &'static str, common: &Common) -> Result<Self> {
        let mut kv = match &common.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
                KeyValues::parse(&text, &path.display().to_string())?
            }
            None => KeyValues::new(),
        };
        if let Some(seed) = common.seed {
            kv.set("seed", seed);
        }
        if common.paper {
            kv.set("preset", "paper");
        } else if common.desk {
            kv.set("preset", "desk");
        }
        Ok(RunConfig { command, kv, out: common.out.clone(), effective: KeyValues::new(), inputs: Vec::new() })
    }

    pub fn seed(&mut self) -> Result<u64> {
        let s = self.kv.get_or("seed", 0u64)?;
        self.effective.set("seed", s);
        Ok(s)
    }

    /// `true` for the paper-scale preset.
    pub fn paper(&mut self) -> Result<bool> {
        let p = self.kv.raw("preset").unwrap_or_else(|| "desk".into());
        let paper = match p.as_str() {
            "desk" => false,
            "paper" => true,
            other => return Err(Error::config(format!("invalid value {other:?} for key preset"))),
        };
        self.effective.set("preset", p);
        Ok(paper)
    }

    pub fn exec(&mut self) -> Result<Exec> {
        let e = match self.kv.raw("exec").as_deref() {
            None | Some("parallel") => Exec::Parallel,
            Some("sequential") => Exec::Sequential,
            Some(other) => return Err(Error::config(format!("invalid value {other:?} for key exec"))),
        };
        self.effective.set("exec", if e == Exec::Parallel { "parallel" } else { "sequential" });
        Ok(e)
    }

    /// Records an input file whose digest goes into the log.
    pub fn input(&mut self, role: &str, path: &Path) {
        self.inputs.push((role.to_string(), path.to_path_buf()));
    }

    /// Fails on unconsumed keys, then creates `--out`.
    pub fn finish(&self) -> Result<()> {
        self.kv.reject_unknown()?;
        std::fs::create_dir_all(&self.out)?;
        Ok(())
    }

    /// Writes `run.log`: provenance as comments, then the effective config.
    pub fn write_log(&self) -> Result<()> {
        let mut text = format!(
            "# studyformer {} run log\n# command: {}\n# checkpoint format: v{CHECKPOINT_VERSION}\n",
            env!("CARGO_PKG_VERSION"),
            self.command
        );
        for (role, path) in &self.inputs {
            let digest = std::fs::read(path)
                .map(|b| Sha256::digest(&b).iter().map(|x| format!("{x:02x}")).collect::<String>())
                .unwrap_or_else(|_| "unreadable".into());
            text.push_str(&format!("# input {role}: {} sha256 {digest}\n", path.display()));
        }
        text.push_str(&self.effective.to_text());
        std::fs::write(self.out.join("run.log"), text)?;
        Ok(())
    }
}
