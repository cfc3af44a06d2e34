//! Run configuration: JSON schema, overrides, validation and drop assembly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::beamforming::ConstraintKind;
use crate::channel::{calibrate_noise, cell_edge_channelset, generate_channels, ChannelParams};
use crate::error::{FbError, Result};
use crate::network::{LinkChannels, Network};
use crate::protocol::{duplex_modes, CsiModel, Duplex, Scenario, Strategy};
use crate::seeds::{derive_seed, drop_seed, tag};
use crate::topology::{
    drop_users, generate_cell_edge_pair, generate_hex_grid, DeploymentKind, DropPolicy, NetworkTopology,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum TopologyConfig {
    HexGrid { tiers: usize, isd: f64, drop_policy: DropPolicy },
    CellEdgePair { separation: f64, drop_policy: DropPolicy },
}

impl TopologyConfig {
    pub fn num_cells(&self) -> usize {
        match self {
            TopologyConfig::HexGrid { tiers, .. } => crate::topology::hex_cell_count(*tiers),
            TopologyConfig::CellEdgePair { .. } => 2,
        }
    }

    fn drop_policy(&self) -> DropPolicy {
        match self {
            TopologyConfig::HexGrid { drop_policy, .. } | TopologyConfig::CellEdgePair { drop_policy, .. } => {
                *drop_policy
            }
        }
    }

    pub fn build(&self) -> Result<NetworkTopology> {
        match self {
            TopologyConfig::HexGrid { tiers, isd, .. } => generate_hex_grid(*tiers, *isd),
            TopologyConfig::CellEdgePair { separation, .. } => generate_cell_edge_pair(*separation),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelModel {
    /// Distance pathloss with Rayleigh fading; noise set from the cell-edge SNR.
    Pathloss,
    /// Unit-gain Rayleigh from both BSs of a cell-edge pair.
    UnitGain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub model: ChannelModel,
    pub pathloss_exponent: f64,
    pub reference_distance: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            model: ChannelModel::Pathloss,
            pathloss_exponent: crate::channel::DEFAULT_PATHLOSS_EXPONENT,
            reference_distance: crate::channel::DEFAULT_REFERENCE_DISTANCE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub topology: TopologyConfig,
    pub users_per_cell: usize,
    pub bs_antennas: usize,
    pub ue_antennas: usize,
    pub streams_per_user: usize,
    #[serde(default)]
    pub channel: ChannelConfig,
    pub snr_db: f64,
    pub strategies: Vec<Strategy>,
    /// Shared training settings; the strategy inside is replaced per run.
    #[serde(default)]
    pub scenario: Scenario,
    #[serde(default = "default_drops")]
    pub drops: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// `T` values for `sweep`.
    #[serde(default)]
    pub t_values: Vec<usize>,
}

fn default_drops() -> usize {
    100
}

fn default_workers() -> usize {
    1
}

/// Parses `text` as a config after applying `key=value` overrides.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| FbError::Config(format!("not valid JSON: {e}")))?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    serde_json::from_value(value).map_err(|e| FbError::Config(format!("schema violation: {e}")))
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| FbError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text, overrides)
}

/// Sets a dotted `path=value` inside a JSON document. The value is parsed as
/// JSON when possible and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| FbError::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        if key.is_empty() {
            return Err(FbError::Config(format!("override path `{path}` has an empty segment")));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| FbError::Config(format!("override path `{path}`: `{key}` is not inside an object")))?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split always yields at least one segment")
}

impl RunConfig {
    pub fn num_cells(&self) -> usize {
        self.topology.num_cells()
    }

    pub fn num_streams(&self) -> usize {
        self.num_cells() * self.users_per_cell * self.streams_per_user
    }

    pub fn scenario_for(&self, strategy: Strategy) -> Scenario {
        Scenario { strategy, ..self.scenario.clone() }
    }

    /// Every schema-level and feasibility violation, without running anything.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            v.push(format!("schema_version must be {SCHEMA_VERSION}, got {}", self.schema_version));
        }
        match &self.topology {
            TopologyConfig::HexGrid { isd, .. } if !(*isd > 0.0) => {
                v.push(format!("topology.isd must be positive, got {isd}"))
            }
            TopologyConfig::CellEdgePair { separation, .. } if !(*separation > 0.0) => {
                v.push(format!("topology.separation must be positive, got {separation}"))
            }
            _ => {}
        }
        for (name, x) in [
            ("users_per_cell", self.users_per_cell),
            ("bs_antennas", self.bs_antennas),
            ("ue_antennas", self.ue_antennas),
            ("streams_per_user", self.streams_per_user),
            ("drops", self.drops),
            ("workers", self.workers),
        ] {
            if x == 0 {
                v.push(format!("{name} must be positive"));
            }
        }
        if self.streams_per_user > self.bs_antennas.min(self.ue_antennas) {
            v.push(format!(
                "streams_per_user {} exceeds min(bs_antennas, ue_antennas) = {}",
                self.streams_per_user,
                self.bs_antennas.min(self.ue_antennas)
            ));
        }
        if self.channel.model == ChannelModel::Pathloss && !(self.channel.pathloss_exponent > 2.0) {
            v.push(format!("channel.pathloss_exponent must exceed 2, got {}", self.channel.pathloss_exponent));
        }
        if self.channel.model == ChannelModel::UnitGain {
            if !matches!(self.topology, TopologyConfig::CellEdgePair { .. }) {
                v.push("channel.model unit_gain requires a cell_edge_pair topology".into());
            }
            if matches!(self.scenario.duplex, Duplex::DynamicTdd { .. }) {
                v.push("channel.model unit_gain has no cross-link channels; use duplex all_dl".into());
            }
        }
        if !self.snr_db.is_finite() {
            v.push("snr_db must be finite".into());
        }
        if self.strategies.is_empty() {
            v.push("strategies must list at least one strategy".into());
        }
        if self.scenario.budget.constraint == ConstraintKind::PerAntenna && self.bs_antennas == 0 {
            v.push("per_antenna constraint needs antennas".into());
        }
        let mut scenario_v = Vec::new();
        for &s in &self.strategies {
            for msg in self.scenario_for(s).violations() {
                if !scenario_v.contains(&msg) {
                    scenario_v.push(msg);
                }
            }
        }
        v.extend(scenario_v.into_iter().map(|m| format!("scenario: {m}")));
        if self.strategies.iter().any(|s| s.is_over_the_air()) {
            v.extend(
                self.scenario
                    .plan_violations(self.num_streams())
                    .into_iter()
                    .map(|m| format!("scenario: {m}")),
            );
        }
        if self.scenario.csi_model == CsiModel::Contaminated && self.scenario.pilot_pool.is_none() {
            v.push("scenario: contaminated CSI needs an explicit pilot_pool".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(FbError::Config(v.join("\n")))
        }
    }
}

/// Everything one drop needs, owned.
#[derive(Clone, Debug)]
pub struct DropSetup {
    pub index: usize,
    pub seed: u64,
    pub topology: NetworkTopology,
    pub network: Network,
    pub channels: LinkChannels,
    pub noise_power: f64,
}

impl DropSetup {
    pub fn input(&self) -> crate::protocol::DropInput<'_> {
        crate::protocol::DropInput {
            net: &self.network,
            channels: &self.channels,
            noise_power: self.noise_power,
            seed: self.seed,
        }
    }
}

/// Builds drop `index`: user positions, channels, duplex modes and the link
/// graph, all keyed by the counter scheme under `config.seed`.
pub fn build_drop(config: &RunConfig, base: &NetworkTopology, index: usize) -> Result<DropSetup> {
    let seed = drop_seed(config.seed, index as u64);
    let topology = drop_users(
        base,
        config.users_per_cell,
        derive_seed(seed, &[tag::TOPOLOGY]),
        config.topology.drop_policy(),
    )?;
    let dynamic = matches!(config.scenario.duplex, Duplex::DynamicTdd { .. });
    let params = ChannelParams {
        pathloss_exponent: config.channel.pathloss_exponent,
        reference_distance: config.channel.reference_distance,
        bs_antennas: config.bs_antennas,
        ue_antennas: config.ue_antennas,
        include_cross_links: dynamic,
    };
    let channel_seed = derive_seed(seed, &[tag::CHANNEL]);
    let set = match config.channel.model {
        ChannelModel::Pathloss => {
            let noise = calibrate_noise(&topology, config.snr_db, config.scenario.budget.per_bs_power, &params)?;
            generate_channels(&topology, &params, channel_seed)?.with_noise_power(noise)
        }
        ChannelModel::UnitGain => {
            if topology.deployment_kind != DeploymentKind::CellEdgePair {
                return Err(FbError::Config("unit_gain channels need a cell_edge_pair topology".into()));
            }
            let set = cell_edge_channelset(&topology, config.snr_db, channel_seed, &params)?;
            // unit gains are normalized to unit BS power
            let p = config.scenario.budget.per_bs_power;
            let noise = set.noise_power * p;
            set.with_noise_power(noise)
        }
    };
    let modes = duplex_modes(config.scenario.duplex, topology.num_cells(), derive_seed(seed, &[tag::DUPLEX]))?;
    let network = Network::new(
        topology.num_cells(),
        config.users_per_cell,
        config.bs_antennas,
        config.ue_antennas,
        config.streams_per_user,
        modes,
    )?;
    let channels = LinkChannels::new(&network, &set)?;
    Ok(DropSetup { index, seed, topology, network, channels, noise_power: set.noise_power })
}
