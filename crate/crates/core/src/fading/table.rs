//! Per-environment Loo parameter tables loaded from TOML.
//!
//! ```toml
//! [[environment]]
//! name = "open"
//!
//! [[environment.elevations]]
//! elevation = 40.0
//! state_probs = [0.80, 0.15, 0.05]
//! transition = [[0.90, 0.08, 0.02], [0.30, 0.60, 0.10], [0.20, 0.30, 0.50]]
//! states = [
//!   { state = "los", alpha_db = -0.3, psi_db = 0.5, mp_db = -22.0 },
//!   { state = "shadow", alpha_db = -5.0, psi_db = 2.0, mp_db = -18.0 },
//!   { state = "deep_shadow", alpha_db = -12.0, psi_db = 3.0, mp_db = -21.0 },
//! ]
//! ```

use serde::Deserialize;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::{ChannelState, FadingError, LooParams, MarkovChain};

/// Elevation span covered by the measurement campaigns the tables describe.
pub const MIN_ELEVATION_DEG: f64 = 40.0;
pub const MAX_ELEVATION_DEG: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Environment {
    Open,
    Suburban,
    IntermediateTreeShadow,
    HeavyTreeShadow,
    Urban,
}

impl Environment {
    pub const ALL: [Environment; 5] = [
        Environment::Open,
        Environment::Suburban,
        Environment::IntermediateTreeShadow,
        Environment::HeavyTreeShadow,
        Environment::Urban,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Environment::Open => "open",
            Environment::Suburban => "suburban",
            Environment::IntermediateTreeShadow => "intermediate_tree_shadow",
            Environment::HeavyTreeShadow => "heavy_tree_shadow",
            Environment::Urban => "urban",
        }
    }
}

impl fmt::Display for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Environment {
    type Err = FadingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.trim().to_ascii_lowercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        match key.as_str() {
            "open" => Ok(Environment::Open),
            "suburban" => Ok(Environment::Suburban),
            "intermediatetreeshadow" | "its" => Ok(Environment::IntermediateTreeShadow),
            "heavytreeshadow" | "hts" => Ok(Environment::HeavyTreeShadow),
            "urban" => Ok(Environment::Urban),
            _ => Err(FadingError::Parse(format!("unknown environment `{s}`"))),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDoc {
    environment: Vec<EnvDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvDoc {
    name: String,
    #[serde(default)]
    elevations: Vec<ElevationDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ElevationDoc {
    elevation: f64,
    state_probs: [f64; 3],
    transition: [[f64; 3]; 3],
    #[serde(default)]
    states: Vec<StateDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StateDoc {
    state: String,
    alpha_db: f64,
    psi_db: f64,
    mp_db: f64,
}

/// Elevation key in hundredths of a degree, so tables can live in ordered maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ElevationKey(i64);

impl ElevationKey {
    pub fn from_deg(deg: f64) -> Self {
        Self((deg * 100.0).round() as i64)
    }

    pub fn deg(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

/// One environment's measured statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentTable {
    pub environment: Environment,
    pub entries: BTreeMap<(ElevationKey, ChannelState), LooParams>,
    pub chain: BTreeMap<ElevationKey, MarkovChain>,
}

impl EnvironmentTable {
    pub fn elevations(&self) -> Vec<f64> {
        self.chain.keys().map(|k| k.deg()).collect()
    }

    /// Nearest tabulated elevation; ties resolve to the lower one.
    pub fn resolve_elevation(&self, elevation_deg: f64) -> Result<ElevationKey, FadingError> {
        let keys: Vec<ElevationKey> = self.chain.keys().copied().collect();
        let (lo, hi) = match (keys.first(), keys.last()) {
            (Some(a), Some(b)) => (a.deg(), b.deg()),
            _ => return Err(FadingError::Range(format!("{} has no elevations", self.environment))),
        };
        if !(elevation_deg >= lo - 1e-9 && elevation_deg <= hi + 1e-9) {
            return Err(FadingError::Range(format!(
                "elevation {elevation_deg}° outside the {} table span [{lo}°, {hi}°]",
                self.environment
            )));
        }
        let mut best = keys[0];
        for &k in &keys[1..] {
            if (k.deg() - elevation_deg).abs() < (best.deg() - elevation_deg).abs() {
                best = k;
            }
        }
        Ok(best)
    }

    pub fn lookup(&self, elevation_deg: f64, state: ChannelState) -> Result<LooParams, FadingError> {
        let key = self.resolve_elevation(elevation_deg)?;
        Ok(self.entries[&(key, state)])
    }

    pub fn chain_at(&self, elevation_deg: f64) -> Result<MarkovChain, FadingError> {
        let key = self.resolve_elevation(elevation_deg)?;
        Ok(self.chain[&key])
    }

    pub fn per_state(&self, elevation_deg: f64) -> Result<[LooParams; 3], FadingError> {
        Ok([
            self.lookup(elevation_deg, ChannelState::Los)?,
            self.lookup(elevation_deg, ChannelState::Shadow)?,
            self.lookup(elevation_deg, ChannelState::DeepShadow)?,
        ])
    }
}

/// Every environment section of one table file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnvironmentTables {
    pub tables: BTreeMap<Environment, EnvironmentTable>,
}

impl EnvironmentTables {
    pub fn get(&self, env: Environment) -> Result<&EnvironmentTable, FadingError> {
        self.tables.get(&env).ok_or_else(|| FadingError::Range(format!("environment {env} not present in table")))
    }

    pub fn lookup(&self, env: Environment, elevation_deg: f64, state: ChannelState) -> Result<LooParams, FadingError> {
        self.get(env)?.lookup(elevation_deg, state)
    }

    pub fn load_file(path: &std::path::Path) -> Result<Self, FadingError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FadingError::Parse(format!("cannot read {}: {e}", path.display())))?;
        load_environment_table(&text)
    }
}

/// Parses and validates an environment-table document.
pub fn load_environment_table(source: &str) -> Result<EnvironmentTables, FadingError> {
    let doc: FileDoc = toml::from_str(source).map_err(|e| FadingError::Parse(e.message().to_string()))?;
    if doc.environment.is_empty() {
        return Err(FadingError::Parse("no [[environment]] sections".into()));
    }

    let mut problems = Vec::new();
    let mut tables = BTreeMap::new();
    for env_doc in doc.environment {
        let env: Environment = env_doc.name.parse()?;
        if tables.contains_key(&env) {
            problems.push(format!("{env}: duplicate environment section"));
            continue;
        }
        let mut table = EnvironmentTable { environment: env, entries: BTreeMap::new(), chain: BTreeMap::new() };
        if env_doc.elevations.is_empty() {
            problems.push(format!("{env}: no elevations"));
        }
        for el in env_doc.elevations {
            let key = ElevationKey::from_deg(el.elevation);
            let label = format!("{env}@{}°", key.deg());
            if !(MIN_ELEVATION_DEG..=MAX_ELEVATION_DEG).contains(&el.elevation) {
                problems.push(format!(
                    "{label}: elevation outside [{MIN_ELEVATION_DEG}°, {MAX_ELEVATION_DEG}°]"
                ));
            }
            if table.chain.contains_key(&key) {
                problems.push(format!("{label}: duplicate elevation"));
                continue;
            }
            match MarkovChain::new(el.state_probs, el.transition) {
                Ok(c) => {
                    table.chain.insert(key, c);
                }
                Err(e) => problems.push(format!("{label}: {e}")),
            }
            for st in el.states {
                let state: ChannelState = match st.state.parse() {
                    Ok(s) => s,
                    Err(e) => {
                        problems.push(format!("{label}: {e}"));
                        continue;
                    }
                };
                let params = LooParams { alpha_db: st.alpha_db, psi_db: st.psi_db, mp_db: st.mp_db };
                if let Err(e) = params.validate() {
                    problems.push(format!("{label}/{state}: {e}"));
                }
                if table.entries.insert((key, state), params).is_some() {
                    problems.push(format!("{label}/{state}: duplicate state"));
                }
            }
            for state in ChannelState::ALL {
                if !table.entries.contains_key(&(key, state)) {
                    problems.push(format!("{label}/{state}: missing"));
                }
            }
        }
        tables.insert(env, table);
    }
    if !problems.is_empty() {
        return Err(FadingError::Validation(problems));
    }
    Ok(EnvironmentTables { tables })
}
