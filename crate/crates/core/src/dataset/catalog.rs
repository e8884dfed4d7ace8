//! Channel layout: which physical variable and level each channel holds.

use serde::{Deserialize, Serialize};

/// The 13 standard pressure levels, hPa, ordered by descending pressure.
pub const PRESSURE_LEVELS: [u32; 13] = [1000, 925, 850, 700, 600, 500, 400, 300, 250, 200, 150, 100, 50];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    /// Winds, geopotential and pressure fields.
    Dynamics,
    /// Temperature and moisture.
    Thermo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub short_name: String,
    pub unit: String,
    pub group: Group,
}

impl VariableSpec {
    fn new(name: &str, short_name: &str, unit: &str, group: Group) -> Self {
        Self {
            name: name.into(),
            short_name: short_name.into(),
            unit: unit.into(),
            group,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    Pressure(u32),
    Surface,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelInfo {
    pub short_name: String,
    pub level: Level,
    pub unit: String,
    pub group: Group,
}

impl ChannelInfo {
    /// Display label, e.g. `Z500` or `MSLP`.
    pub fn label(&self) -> String {
        match self.level {
            Level::Pressure(p) => format!("{}{}", self.short_name, p),
            Level::Surface => self.short_name.clone(),
        }
    }
}

/// Ordered set of input/output channels.
///
/// Channels are laid out variable-major: every upper-air variable in turn,
/// each over its levels from highest to lowest pressure, followed by the
/// surface variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableCatalog {
    upper_air: Vec<VariableSpec>,
    levels: Vec<u32>,
    surface: Vec<VariableSpec>,
}

/// Channel indices per variable group. Both lists are sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSplit {
    pub dynamics: Vec<usize>,
    pub thermo: Vec<usize>,
}

impl GroupSplit {
    pub fn n_channels(&self) -> usize {
        self.dynamics.len() + self.thermo.len()
    }
}

fn upper(short: &str) -> VariableSpec {
    match short {
        "U" => VariableSpec::new("Zonal wind", "U", "m/s", Group::Dynamics),
        "V" => VariableSpec::new("Meridional wind", "V", "m/s", Group::Dynamics),
        "T" => VariableSpec::new("Temperature", "T", "K", Group::Thermo),
        "Q" => VariableSpec::new("Specific humidity", "Q", "kg/kg", Group::Thermo),
        "Z" => VariableSpec::new("Geopotential", "Z", "m^2/s^2", Group::Dynamics),
        other => panic!("unknown upper-air variable {other}"),
    }
}

fn surface(short: &str) -> VariableSpec {
    match short {
        "T2m" => VariableSpec::new("2m temperature", "T2m", "K", Group::Thermo),
        "MSLP" => VariableSpec::new("Mean sea level pressure", "MSLP", "Pa", Group::Dynamics),
        "SP" => VariableSpec::new("Surface air pressure", "SP", "Pa", Group::Dynamics),
        "U10" => VariableSpec::new("10m zonal wind", "U10", "m/s", Group::Dynamics),
        "V10" => VariableSpec::new("10m meridional wind", "V10", "m/s", Group::Dynamics),
        other => panic!("unknown surface variable {other}"),
    }
}

impl VariableCatalog {
    /// Builds a catalog from known short names. Levels are reordered by
    /// descending pressure; duplicates are removed.
    pub fn from_names(upper_air: &[&str], levels: &[u32], surface_vars: &[&str]) -> Self {
        let mut levels = levels.to_vec();
        levels.sort_unstable_by(|a, b| b.cmp(a));
        levels.dedup();
        Self {
            upper_air: upper_air.iter().map(|s| upper(s)).collect(),
            levels,
            surface: surface_vars.iter().map(|s| surface(s)).collect(),
        }
    }

    /// Full 70-channel layout: U, V, T, Q, Z on 13 levels plus five surface fields.
    pub fn full() -> Self {
        Self::from_names(
            &["U", "V", "T", "Q", "Z"],
            &PRESSURE_LEVELS,
            &["T2m", "MSLP", "SP", "U10", "V10"],
        )
    }

    /// Eight-channel desk-scale layout with both groups and MSLP present.
    pub fn toy() -> Self {
        Self::from_names(&["Z", "T"], &[850, 500], &["T2m", "MSLP", "U10", "V10"])
    }

    pub fn n_channels(&self) -> usize {
        self.upper_air.len() * self.levels.len() + self.surface.len()
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    pub fn channel_info(&self, idx: usize) -> Option<ChannelInfo> {
        let n_upper = self.upper_air.len() * self.levels.len();
        let (spec, level) = if idx < n_upper {
            let nl = self.levels.len();
            (&self.upper_air[idx / nl], Level::Pressure(self.levels[idx % nl]))
        } else {
            (self.surface.get(idx - n_upper)?, Level::Surface)
        };
        Some(ChannelInfo {
            short_name: spec.short_name.clone(),
            level,
            unit: spec.unit.clone(),
            group: spec.group,
        })
    }

    pub fn channel_index(&self, short_name: &str, level: Level) -> Option<usize> {
        match level {
            Level::Pressure(p) => {
                let v = self.upper_air.iter().position(|s| s.short_name == short_name)?;
                let l = self.levels.iter().position(|&x| x == p)?;
                Some(v * self.levels.len() + l)
            }
            Level::Surface => {
                let s = self.surface.iter().position(|s| s.short_name == short_name)?;
                Some(self.upper_air.len() * self.levels.len() + s)
            }
        }
    }

    /// Channel index for a label such as `Z500`, `t850` or `MSLP`.
    pub fn channel_by_label(&self, label: &str) -> Option<usize> {
        (0..self.n_channels())
            .find(|&i| self.channel_info(i).is_some_and(|c| c.label().eq_ignore_ascii_case(label)))
    }

    pub fn channels(&self) -> impl Iterator<Item = ChannelInfo> + '_ {
        (0..self.n_channels()).map(|i| self.channel_info(i).expect("index in range"))
    }

    pub fn labels(&self) -> Vec<String> {
        self.channels().map(|c| c.label()).collect()
    }

    pub fn group_split(&self) -> GroupSplit {
        let mut split = GroupSplit {
            dynamics: Vec::new(),
            thermo: Vec::new(),
        };
        for (i, c) in self.channels().enumerate() {
            match c.group {
                Group::Dynamics => split.dynamics.push(i),
                Group::Thermo => split.thermo.push(i),
            }
        }
        split
    }
}
