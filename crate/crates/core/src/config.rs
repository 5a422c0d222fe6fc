//! The run configuration: one TOML document with `workload`,
//! `architecture`, an optional `objective` and an optional `[options]` table.

use std::path::Path;

use crate::arch::{parse_arch, ArchSpec};
use crate::doc::Located;
use crate::error::{Error, Result};
use crate::model::{ModelOptions, Objective};
use crate::oracle::DEFAULT_ORACLE_CAP;
use crate::workload::{parse_workload, Workload};

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub name: Option<String>,
    pub workload: Workload,
    pub arch: ArchSpec,
    pub objective: Objective,
    pub model: ModelOptions,
    /// `None` uses the available parallelism.
    pub threads: Option<usize>,
    pub oracle_cap: u64,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let value: toml::Value = text.parse::<toml::Table>().map(toml::Value::Table).map_err(|e| {
            Error::config("<document>", e.message().to_string())
        })?;
        let root = Located::root(&value);
        root.check_keys(&["objective", "options", "workload", "architecture"])?;
        let workload = parse_workload(&root.require("workload")?)?;
        let arch = parse_arch(&root.require("architecture")?, &workload)?;
        let objective = match root.get("objective")? {
            Some(o) => o.as_str()?.parse().map_err(|m: String| o.err(m))?,
            None => Objective::Edp,
        };
        let mut cfg = RunConfig {
            name: None,
            workload,
            arch,
            objective,
            model: ModelOptions::default(),
            threads: None,
            oracle_cap: DEFAULT_ORACLE_CAP,
        };
        if let Some(opts) = root.get("options")? {
            opts.check_keys(&["line_buffer", "operand_reads", "threads", "oracle_cap", "name"])?;
            if let Some(v) = opts.get("line_buffer")? {
                cfg.model.line_buffer = v.as_bool()?;
            }
            if let Some(v) = opts.get("operand_reads")? {
                cfg.model.operand_reads = v.as_bool()?;
            }
            if let Some(v) = opts.get("threads")? {
                cfg.threads = Some(v.as_positive_int()? as usize);
            }
            if let Some(v) = opts.get("oracle_cap")? {
                cfg.oracle_cap = v.as_positive_int()?;
            }
            if let Some(v) = opts.get("name")? {
                cfg.name = Some(v.as_str()?.to_string());
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), format!("cannot read: {e}")))?;
        RunConfig::parse(&text)
    }
}
