//! Scenario files. Every section is optional and falls back to the
//! defaults below; unknown keys anywhere are rejected.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nsk_core::evolution::{EvolutionOptions, InitSpec};
use nsk_core::forcing::ForcingSpec;
use nsk_core::model::{Eos, PhysParams};
use nsk_core::stationary::SolverOptions;
use nsk_core::verification::EnsembleSpec;
use nsk_core::{Grid, NskError, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Audits `verify` knows, in the order they run.
pub const AUDIT_IDS: [&str; 6] = ["2.8", "2.80", "2.90", "kernel", "eps-limit", "3.3"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Points per active axis, a power of two, at least 8.
    pub n: usize,
    /// Box length. Takes precedence over `length_pi`.
    pub length: Option<f64>,
    /// Box length in units of pi.
    pub length_pi: f64,
    /// 3, or 2 for a slab with an inactive z axis.
    pub dimension: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n: 32, length: None, length_pi: 16.0, dimension: 3 }
    }
}

impl GridConfig {
    pub fn box_length(&self) -> f64 {
        self.length.unwrap_or(self.length_pi * PI)
    }

    fn validate(&self) -> Result<()> {
        if self.n < 8 || !self.n.is_power_of_two() {
            return Err(cfg(format!("grid.n must be a power of two >= 8, got {}", self.n)));
        }
        let l = self.box_length();
        if !(l > 0.0 && l.is_finite()) {
            return Err(cfg(format!("grid length must be positive, got {l}")));
        }
        if self.dimension != 2 && self.dimension != 3 {
            return Err(cfg(format!("grid.dimension must be 2 or 3, got {}", self.dimension)));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Grid> {
        let (n, l) = (self.n, self.box_length());
        let nz = if self.dimension == 3 { n } else { 1 };
        Grid::new([n, n, nz], [l, l, l])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Field snapshots during `evolve` every this many steps; 0 keeps only
    /// the first and the last state.
    pub snapshot_every: usize,
    /// Dump every materialized forcing component as a snapshot.
    pub forcing_snapshots: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { snapshot_every: 20, forcing_snapshots: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerificationConfig {
    pub audits: Vec<String>,
    pub ensemble: EnsembleSpec,
    /// Amplitude halvings in the decay audit.
    pub halvings: usize,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        VerificationConfig { audits: AUDIT_IDS.iter().map(|s| s.to_string()).collect(), ensemble: EnsembleSpec::default(), halvings: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmsConfig {
    /// Peak of the largest manufactured state; each level halves it.
    pub amplitude: f64,
    pub levels: usize,
    pub width: f64,
    pub spread: f64,
    pub bumps: usize,
    pub stream: u64,
}

impl Default for MmsConfig {
    fn default() -> Self {
        MmsConfig { amplitude: 1e-3, levels: 3, width: 5.0, spread: 3.0, bumps: 3, stream: 7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Rescale the forcing so its smallness budget equals this value.
    pub forcing_budget: Option<f64>,
    pub grid: GridConfig,
    pub physics: PhysParams,
    pub eos: Eos,
    pub forcing: ForcingSpec,
    pub stationary: SolverOptions,
    pub evolution: EvolutionOptions,
    pub perturbation: InitSpec,
    pub output: OutputConfig,
    pub verification: VerificationConfig,
    pub mms: MmsConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 7,
            out: PathBuf::from("runs/default"),
            forcing_budget: Some(5e-3),
            grid: GridConfig::default(),
            physics: PhysParams::default(),
            eos: Eos::default(),
            forcing: ForcingSpec::default(),
            stationary: SolverOptions::default(),
            evolution: EvolutionOptions::default(),
            perturbation: InitSpec::default(),
            output: OutputConfig::default(),
            verification: VerificationConfig::default(),
            mms: MmsConfig::default(),
        }
    }
}

fn cfg(msg: String) -> NskError {
    NskError::Config(msg)
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<ScenarioConfig> {
        let c: ScenarioConfig = toml::from_str(text).map_err(|e| cfg(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<ScenarioConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg(format!("{}: {e}", path.display())))?;
        ScenarioConfig::parse(&text)
    }

    /// Schema checks that need no grid or field allocation.
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.physics.validate()?;
        self.eos.validate(&self.physics)?;
        if let Some(b) = self.forcing_budget {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(cfg(format!("forcing_budget must be non-negative, got {b}")));
            }
        }
        let e = &self.evolution;
        if !(e.dt > 0.0 && e.t_end >= 0.0 && e.t_end.is_finite()) {
            return Err(cfg(format!("need evolution.dt > 0 and t_end >= 0, got {} and {}", e.dt, e.t_end)));
        }
        let p = &self.perturbation;
        if !(p.norm >= 0.0 && p.width > 0.0 && p.spread >= 0.0) {
            return Err(cfg("perturbation needs norm >= 0, width > 0, spread >= 0".into()));
        }
        let v = &self.verification;
        if v.ensemble.samples == 0 {
            return Err(cfg("verification.ensemble.samples must be positive".into()));
        }
        for id in &v.audits {
            if !AUDIT_IDS.contains(&id.as_str()) {
                return Err(cfg(format!("unknown audit {id:?}, expected one of {AUDIT_IDS:?}")));
            }
        }
        if self.mms.levels == 0 || !(self.mms.amplitude > 0.0) {
            return Err(cfg("mms needs levels >= 1 and a positive amplitude".into()));
        }
        Ok(())
    }

    /// Canonical form: the resolved config as pretty JSON, fields in
    /// declaration order.
    pub fn canonical(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let c = ScenarioConfig { out: PathBuf::new(), ..self.clone() };
        let digest = Sha256::digest(c.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parses `--audits 2.8,kernel`.
pub fn parse_audits(list: &str) -> Result<Vec<String>> {
    let ids: Vec<String> = list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    if ids.is_empty() {
        return Err(cfg("empty audit list".into()));
    }
    for id in &ids {
        if !AUDIT_IDS.contains(&id.as_str()) {
            return Err(cfg(format!("unknown audit {id:?}, expected one of {AUDIT_IDS:?}")));
        }
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(ScenarioConfig::parse("").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn small_grid_rejected() {
        let e = ScenarioConfig::parse("[grid]\nn = 4\n").unwrap_err();
        assert_eq!(e.kind(), "ConfigError");
        assert!(ScenarioConfig::parse("[grid]\nn = 24\n").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ScenarioConfig::parse("colour = 1\n").is_err());
        assert!(ScenarioConfig::parse("[grid]\nsize = 16\n").is_err());
        assert!(ScenarioConfig::parse("[eos]\nkind = \"ideal_gas\"\nr = 1.0\ngamma = 1.4\n").is_err());
    }

    #[test]
    fn sections_parse() {
        let c = ScenarioConfig::parse(
            r#"
seed = 3
[grid]
n = 16
length = 10.0
dimension = 2
[eos]
kind = "stiffened_gas"
r = 1.0
p_inf = 0.2
[evolution]
dt = 0.1
[verification]
audits = ["kernel"]
"#,
        )
        .unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.grid.box_length(), 10.0);
        assert_eq!(c.eos, Eos::StiffenedGas { r: 1.0, p_inf: 0.2 });
        assert_eq!(c.evolution.dt, 0.1);
        assert_eq!(c.evolution.t_end, EvolutionOptions::default().t_end);
        let g = c.grid.build().unwrap();
        assert_eq!(g.n(), [16, 16, 1]);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ScenarioConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn shipped_scenarios_parse() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
        let default = ScenarioConfig::load(&dir.join("default.toml")).unwrap();
        assert_eq!(default, ScenarioConfig::default());
        for f in ["decay.toml", "quick.toml"] {
            ScenarioConfig::load(&dir.join(f)).unwrap();
        }
    }

    #[test]
    fn audit_list() {
        assert_eq!(parse_audits("2.8, kernel").unwrap(), vec!["2.8", "kernel"]);
        assert!(parse_audits("2.8,9.9").is_err());
        assert!(parse_audits("").is_err());
    }
}
