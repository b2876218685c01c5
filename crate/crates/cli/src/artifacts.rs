//! Artifact directory: every file carries the config hash and the seed that
//! produced it. CSV/TSV files get a leading `#` line, JSON files a
//! `provenance` object, rasters a `.meta.json` sidecar.

use std::path::{Path, PathBuf};

use floodgt::mapping::RasterGrid;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
}

pub struct Store {
    pub dir: PathBuf,
    pub config_hash: String,
    pub stage: &'static str,
}

impl Store {
    pub fn new(dir: &Path, config_hash: &str, stage: &'static str) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Store {
            dir: dir.to_path_buf(),
            config_hash: config_hash.to_string(),
            stage,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn provenance(&self, seed: u64) -> Provenance {
        Provenance {
            tool: "floodgt".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            stage: self.stage.into(),
            config_hash: self.config_hash.clone(),
            seed,
        }
    }

    /// Fails with every missing upstream artifact listed.
    pub fn require(&self, names: &[&str]) -> Result<(), CliError> {
        let missing: Vec<PathBuf> = names.iter().map(|n| self.path(n)).filter(|p| !p.is_file()).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(CliError::MissingArtifacts(missing))
        }
    }

    fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let p = self.path(name);
        std::fs::write(&p, bytes).map_err(|e| CliError::io(&p, e))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, seed: u64, value: &T) -> Result<(), CliError> {
        let mut v = serde_json::to_value(value)?;
        let prov = serde_json::to_value(self.provenance(seed))?;
        match &mut v {
            Value::Object(m) => {
                m.insert("provenance".into(), prov);
            }
            other => {
                v = serde_json::json!({"data": other.take(), "provenance": prov});
            }
        }
        let mut text = serde_json::to_string_pretty(&v)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T, CliError> {
        self.require(&[name])?;
        let p = self.path(name);
        let text = std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
        let mut v: Value = serde_json::from_str(&text)?;
        if let Value::Object(m) = &mut v {
            m.remove("provenance");
            if m.len() == 1 {
                if let Some(d) = m.remove("data") {
                    v = d;
                }
            }
        }
        Ok(serde_json::from_value(v)?)
    }

    /// Delimited text with a provenance comment line in front.
    pub fn write_text(&self, name: &str, seed: u64, body: &[u8]) -> Result<(), CliError> {
        let p = self.provenance(seed);
        let mut out = format!(
            "# {} {} stage={} config_hash={} seed={}\n",
            p.tool, p.version, p.stage, p.config_hash, p.seed
        )
        .into_bytes();
        out.extend_from_slice(body);
        self.write_bytes(name, &out)
    }

    /// Text without the `#` provenance lines.
    pub fn read_text(&self, name: &str) -> Result<String, CliError> {
        self.require(&[name])?;
        let p = self.path(name);
        let text = std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
        Ok(text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect())
    }

    pub fn write_raster(&self, name: &str, seed: u64, raster: &RasterGrid) -> Result<(), CliError> {
        let mut buf = Vec::new();
        raster.write_ascii(&mut buf).map_err(|e| CliError::io(&self.path(name), e))?;
        self.write_bytes(name, &buf)?;
        self.write_json(&format!("{name}.meta.json"), seed, &serde_json::json!({"raster": name}))
    }

    pub fn read_raster(&self, name: &str) -> Result<RasterGrid, CliError> {
        self.require(&[name])?;
        let p = self.path(name);
        let f = std::fs::File::open(&p).map_err(|e| CliError::io(&p, e))?;
        Ok(RasterGrid::read_ascii(std::io::BufReader::new(f))?)
    }
}
