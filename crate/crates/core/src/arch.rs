//! Accelerator description: an ordered memory hierarchy (outermost first)
//! above a compute level.

use std::collections::{BTreeSet, HashSet};

use toml::Value;

use crate::doc::{is_identifier, rational_value, Located};
use crate::error::{Error, Result};
use crate::rational::Rational;
use crate::workload::{TensorId, Workload};

pub type LevelId = usize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemoryLevel {
    pub name: String,
    /// Words; `None` means unbounded, which only the backing store may be.
    pub capacity: Option<u64>,
    pub bandwidth: Rational,
    pub read_energy: Rational,
    pub write_energy: Rational,
    /// Tensors this level may hold; `None` allows all.
    pub keep: Option<BTreeSet<TensorId>>,
}

impl MemoryLevel {
    pub fn may_keep(&self, tensor: TensorId) -> bool {
        self.keep.as_ref().is_none_or(|k| k.contains(&tensor))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComputeLevel {
    pub energy_per_compute: Rational,
    pub parallel_units: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchSpec {
    levels: Vec<MemoryLevel>,
    compute: ComputeLevel,
}

impl ArchSpec {
    pub fn new(mut levels: Vec<MemoryLevel>, compute: ComputeLevel) -> Result<ArchSpec> {
        if levels.is_empty() {
            return Err(Error::config("architecture.levels", "at least one memory level is required"));
        }
        let mut names = HashSet::new();
        for (i, level) in levels.iter().enumerate() {
            let path = format!("architecture.levels[{i}]");
            if !is_identifier(&level.name) {
                return Err(Error::config(
                    format!("{path}.name"),
                    format!("`{}` is not a valid identifier", level.name),
                ));
            }
            if !names.insert(level.name.clone()) {
                return Err(Error::config(
                    format!("{path}.name"),
                    format!("duplicate level `{}`", level.name),
                ));
            }
            if i > 0 && level.capacity.is_none() {
                return Err(Error::config(
                    format!("{path}.capacity"),
                    "only the topmost level may be unbounded",
                ));
            }
            if level.capacity == Some(0) {
                return Err(Error::config(format!("{path}.capacity"), "capacity must be positive"));
            }
            if !level.bandwidth.is_positive() {
                return Err(Error::config(format!("{path}.bandwidth"), "bandwidth must be positive"));
            }
            if level.read_energy.is_negative() || level.write_energy.is_negative() {
                return Err(Error::config(format!("{path}.read_energy"), "energies must be nonnegative"));
            }
        }
        if compute.energy_per_compute.is_negative() {
            return Err(Error::config("architecture.compute.energy", "energy must be nonnegative"));
        }
        if compute.parallel_units == 0 {
            return Err(Error::config("architecture.compute.units", "need at least one compute unit"));
        }
        // The backing store holds every tensor in its entirety.
        levels[0].capacity = None;
        levels[0].keep = None;
        Ok(ArchSpec { levels, compute })
    }

    pub fn levels(&self) -> &[MemoryLevel] {
        &self.levels
    }

    pub fn level(&self, id: LevelId) -> &MemoryLevel {
        &self.levels[id]
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn compute(&self) -> &ComputeLevel {
        &self.compute
    }

    pub fn backing(&self) -> LevelId {
        0
    }

    pub fn level_id(&self, name: &str) -> Option<LevelId> {
        self.levels.iter().position(|l| l.name == name)
    }

    pub fn to_toml(&self, workload: &Workload) -> Value {
        let levels = self
            .levels
            .iter()
            .map(|l| {
                let mut t = toml::Table::new();
                t.insert("name".into(), Value::String(l.name.clone()));
                t.insert(
                    "capacity".into(),
                    match l.capacity {
                        Some(c) => Value::Integer(c as i64),
                        None => Value::String("unbounded".into()),
                    },
                );
                t.insert("bandwidth".into(), rational_value(l.bandwidth));
                t.insert("read_energy".into(), rational_value(l.read_energy));
                t.insert("write_energy".into(), rational_value(l.write_energy));
                if let Some(keep) = &l.keep {
                    t.insert(
                        "keep".into(),
                        Value::Array(
                            keep.iter()
                                .map(|&id| Value::String(workload.tensor(id).name.clone()))
                                .collect(),
                        ),
                    );
                }
                Value::Table(t)
            })
            .collect();
        let mut compute = toml::Table::new();
        compute.insert("energy".into(), rational_value(self.compute.energy_per_compute));
        compute.insert("units".into(), Value::Integer(self.compute.parallel_units as i64));
        let mut root = toml::Table::new();
        root.insert("levels".into(), Value::Array(levels));
        root.insert("compute".into(), Value::Table(compute));
        Value::Table(root)
    }
}

/// Reads the `architecture:` section. Keep constraints are resolved against
/// the workload's tensor names.
pub fn parse_arch(section: &Located<'_>, workload: &Workload) -> Result<ArchSpec> {
    section.check_keys(&["levels", "compute"])?;
    let mut levels = Vec::new();
    for item in section.require("levels")?.items()? {
        item.check_keys(&[
            "name",
            "capacity",
            "bandwidth",
            "access_energy",
            "read_energy",
            "write_energy",
            "keep",
        ])?;
        let name = item.require("name")?.as_str()?.to_string();
        let capacity = match item.get("capacity")? {
            None => None,
            Some(c) if c.value.as_str() == Some("unbounded") => None,
            Some(c) => Some(c.as_positive_int()?),
        };
        let bw_node = item.require("bandwidth")?;
        let bandwidth = bw_node.as_rational()?;
        if !bandwidth.is_positive() {
            return Err(bw_node.err("bandwidth must be positive"));
        }
        let shared = item.get("access_energy")?;
        let energy = |key: &str| -> Result<Rational> {
            let node = match (item.get(key)?, &shared) {
                (Some(node), _) => node,
                (None, Some(node)) => Located {
                    value: node.value,
                    path: node.path().to_string(),
                },
                (None, None) => {
                    return Err(Error::config(
                        format!("{}.{key}", item.path()),
                        "missing energy (set `access_energy` or both `read_energy` and `write_energy`)",
                    ))
                }
            };
            let r = node.as_rational()?;
            if r.is_negative() {
                return Err(node.err("energy must be nonnegative"));
            }
            Ok(r)
        };
        let read_energy = energy("read_energy")?;
        let write_energy = energy("write_energy")?;
        let keep = match item.get("keep")? {
            None => None,
            Some(list) => {
                let mut set = BTreeSet::new();
                for t in list.items()? {
                    let tname = t.as_str()?;
                    let id = workload
                        .tensor_id(tname)
                        .ok_or_else(|| t.err(format!("unknown tensor `{tname}`")))?;
                    set.insert(id);
                }
                Some(set)
            }
        };
        levels.push(MemoryLevel {
            name,
            capacity,
            bandwidth,
            read_energy,
            write_energy,
            keep,
        });
    }
    let compute_node = section.require("compute")?;
    compute_node.check_keys(&["energy", "units"])?;
    let energy_node = compute_node.require("energy")?;
    let energy_per_compute = energy_node.as_rational()?;
    if energy_per_compute.is_negative() {
        return Err(energy_node.err("energy must be nonnegative"));
    }
    let parallel_units = match compute_node.get("units")? {
        Some(u) => u.as_positive_int()?,
        None => 1,
    };
    ArchSpec::new(
        levels,
        ComputeLevel {
            energy_per_compute,
            parallel_units,
        },
    )
}
