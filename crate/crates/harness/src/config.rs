//! Experiment configuration files.
//!
//! Parsing runs in two passes: the envelope first, then `params`, `grid` and
//! `propagator` against the schema the experiment and model select. Both
//! passes report errors at their line and column in the original file.

use std::fmt;
use std::path::{Path, PathBuf};

use catstab_core::lindblad::PropagatorPlan;
use catstab_core::models::{EffectiveParams, ThreeModeParams};
use catstab_core::observables::WignerSpec;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Evolve,
    Steady,
    Wigner,
    Sweep,
    Compare,
    Reduce,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Evolve => "evolve",
            Experiment::Steady => "steady",
            Experiment::Wigner => "wigner",
            Experiment::Sweep => "sweep",
            Experiment::Compare => "compare",
            Experiment::Reduce => "reduce",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        serde_json::from_value(serde_json::Value::String(name.to_string())).ok()
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Effective,
    TwoMode,
    ThreeMode,
}

/// Evenly spaced sample times `0, t_end/(samples-1), ..., t_end`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeGrid {
    pub t_end: f64,
    pub samples: usize,
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            samples: 200,
        }
    }
}

impl TimeGrid {
    pub fn validate(&self) -> Result<(), String> {
        if self.samples < 2 {
            return Err(format!(
                "time grid needs at least 2 samples, got {}",
                self.samples
            ));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(format!(
                "t_end must be positive and finite, got {}",
                self.t_end
            ));
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        let n = self.samples - 1;
        (0..=n).map(|i| self.t_end * i as f64 / n as f64).collect()
    }
}

/// Inclusive range `start, start + step, ...` up to `stop`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Range {
    pub fn validate(&self, name: &str) -> Result<(), String> {
        if !(self.start.is_finite() && self.stop.is_finite() && self.step.is_finite()) {
            return Err(format!("{name}: range bounds must be finite"));
        }
        if self.stop < self.start {
            return Err(format!(
                "{name}: stop {} is below start {}",
                self.stop, self.start
            ));
        }
        if !(self.step > 0.0) {
            return Err(format!("{name}: step must be positive"));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.start + i as f64 * self.step).collect()
    }
}

/// Coupling grid of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub g_2ph: Range,
    pub g_ps: Range,
}

/// Fixed circuit parameters of a sweep; `ε_r1 = eps_ratio · g_2ph` at every point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepParams {
    pub kappa_r1: f64,
    pub kappa_r2: f64,
    pub chi_sr2: f64,
    pub kappa_1ph: f64,
    pub eps_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_tilde: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub storage_dim: Option<usize>,
    /// Readout truncations for full-model sweeps.
    pub readout_dims: [usize; 2],
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            kappa_r1: 1000.0,
            kappa_r2: 1000.0,
            chi_sr2: 2.5e4,
            kappa_1ph: 1.0,
            eps_ratio: 4.0,
            n_tilde: None,
            storage_dim: None,
            readout_dims: [3, 3],
        }
    }
}

impl SweepParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("kappa_r1", self.kappa_r1),
            ("kappa_r2", self.kappa_r2),
            ("chi_sr2", self.chi_sr2),
            ("kappa_1ph", self.kappa_1ph),
            ("eps_ratio", self.eps_ratio),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} = {v} must be finite and >= 0"));
            }
        }
        if self.kappa_r1 == 0.0 || self.kappa_r2 == 0.0 {
            return Err("kappa_r1 and kappa_r2 must be positive".into());
        }
        if matches!(self.storage_dim, Some(d) if d < 2) || self.readout_dims.iter().any(|&d| d < 2)
        {
            return Err("every truncation needs at least 2 levels".into());
        }
        Ok(())
    }
}

fn default_deltas() -> Vec<f64> {
    vec![0.02, 0.05, 0.12, 0.2, 0.3, 0.4, 0.5]
}

fn default_reduce_n_tilde() -> usize {
    2
}

/// Readout ratios `δ = g_ps/κ_r2` at which the cascade is fitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReduceGrid {
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default = "default_reduce_n_tilde")]
    pub n_tilde: usize,
}

impl Default for ReduceGrid {
    fn default() -> Self {
        Self {
            deltas: default_deltas(),
            n_tilde: default_reduce_n_tilde(),
        }
    }
}

/// Model parameters, typed by model kind.
#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
pub enum Params {
    Effective(EffectiveParams),
    Circuit(ThreeModeParams),
    Sweep(SweepParams),
    None,
}

#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
pub enum Grid {
    Time(TimeGrid),
    Wigner(WignerSpec),
    Sweep(SweepGrid),
    Reduce(ReduceGrid),
    None,
}

/// A validated experiment configuration.
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub model: ModelKind,
    pub params: Params,
    pub grid: Grid,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub propagator: PropagatorPlan,
}

/// A configuration problem located in the source file.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub source: String,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}: {}",
            self.source, self.line, self.column, self.message
        )
    }
}

impl std::error::Error for ConfigError {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope<'a> {
    experiment: Experiment,
    #[serde(default)]
    model: ModelKind,
    #[serde(borrow, default)]
    params: Option<&'a RawValue>,
    #[serde(borrow, default)]
    grid: Option<&'a RawValue>,
    #[serde(default)]
    output: Option<PathBuf>,
    #[serde(default)]
    seed: u64,
    #[serde(borrow, default)]
    propagator: Option<&'a RawValue>,
}

struct Source<'a> {
    name: &'a str,
    text: &'a str,
}

impl Source<'_> {
    fn position(&self, offset: usize) -> (usize, usize) {
        let before = &self.text[..offset.min(self.text.len())];
        let line = before.matches('\n').count() + 1;
        let column = before.rfind('\n').map_or(before.chars().count(), |nl| {
            before[nl + 1..].chars().count()
        }) + 1;
        (line, column)
    }

    fn offset_of(&self, raw: &RawValue) -> usize {
        raw.get().as_ptr() as usize - self.text.as_ptr() as usize
    }

    fn at(&self, offset: usize, message: impl Into<String>) -> ConfigError {
        let (line, column) = self.position(offset);
        ConfigError {
            source: self.name.to_string(),
            line,
            column,
            message: message.into(),
        }
    }

    fn from_serde(&self, e: &serde_json::Error) -> ConfigError {
        ConfigError {
            source: self.name.to_string(),
            line: e.line().max(1),
            column: e.column().max(1),
            message: strip_position(&e.to_string()),
        }
    }

    /// Parse a nested value, anchoring errors to its place in the file.
    fn typed<T: DeserializeOwned>(&self, field: &str, raw: &RawValue) -> Result<T, ConfigError> {
        serde_json::from_str(raw.get()).map_err(|e| {
            let (line0, col0) = self.position(self.offset_of(raw));
            let line = line0 + e.line().max(1) - 1;
            let column = if e.line() <= 1 {
                col0 + e.column().max(1) - 1
            } else {
                e.column().max(1)
            };
            ConfigError {
                source: self.name.to_string(),
                line,
                column,
                message: format!("{field}: {}", strip_position(&e.to_string())),
            }
        })
    }
}

/// serde_json appends " at line L column C"; the position is reported separately.
fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            source: name.clone(),
            line: 0,
            column: 0,
            message: format!("cannot read config: {e}"),
        })?;
        Self::parse(&name, &text)
    }

    /// Parse and validate configuration text; `name` labels error messages.
    pub fn parse(name: &str, text: &str) -> Result<Self, ConfigError> {
        let src = Source { name, text };
        let env: Envelope<'_> = serde_json::from_str(text).map_err(|e| src.from_serde(&e))?;
        let exp = env.experiment;
        let whole = |message: String| src.at(0, message);

        let require = |field: &str, raw: Option<&RawValue>| -> Result<(), ConfigError> {
            if raw.is_some() {
                Ok(())
            } else {
                Err(whole(format!("experiment `{exp}` requires `{field}`")))
            }
        };
        let forbid = |field: &str, raw: Option<&RawValue>| -> Result<(), ConfigError> {
            match raw {
                Some(r) => Err(src.at(
                    src.offset_of(r),
                    format!("experiment `{exp}` takes no `{field}`"),
                )),
                None => Ok(()),
            }
        };

        let params = match exp {
            Experiment::Reduce => {
                forbid("params", env.params)?;
                Params::None
            }
            Experiment::Sweep => match env.params {
                Some(raw) => {
                    let p: SweepParams = src.typed("params", raw)?;
                    p.validate()
                        .map_err(|m| src.at(src.offset_of(raw), format!("params: {m}")))?;
                    Params::Sweep(p)
                }
                None => Params::Sweep(SweepParams::default()),
            },
            _ => {
                require("params", env.params)?;
                let raw = env.params.unwrap_or_else(|| unreachable!());
                let at = src.offset_of(raw);
                let model = match (exp, env.model) {
                    (Experiment::Compare, ModelKind::Effective)
                    | (Experiment::Compare, ModelKind::TwoMode) => {
                        return Err(whole("experiment `compare` runs the three_mode model against its reduction; set \"model\": \"three_mode\"".into()));
                    }
                    (_, m) => m,
                };
                match model {
                    ModelKind::Effective => {
                        let p: EffectiveParams = src.typed("params", raw)?;
                        p.validate()
                            .map_err(|e| src.at(at, format!("params: {e}")))?;
                        p.storage_dim()
                            .map_err(|e| src.at(at, format!("params: {e}")))?;
                        Params::Effective(p)
                    }
                    ModelKind::TwoMode | ModelKind::ThreeMode => {
                        let p: ThreeModeParams = src.typed("params", raw)?;
                        p.validate()
                            .map_err(|e| src.at(at, format!("params: {e}")))?;
                        p.alpha().map_err(|e| src.at(at, format!("params: {e}")))?;
                        if let Some(l) = &p.layout {
                            let want = if model == ModelKind::TwoMode { 2 } else { 3 };
                            if l.n_modes() != want {
                                return Err(src.at(
                                    at,
                                    format!(
                                        "params: layout {l} must have {want} modes for this model"
                                    ),
                                ));
                            }
                        }
                        Params::Circuit(p)
                    }
                }
            }
        };

        let grid = match exp {
            Experiment::Evolve | Experiment::Compare => {
                let g: TimeGrid = match env.grid {
                    Some(raw) => src.typed("grid", raw)?,
                    None => TimeGrid::default(),
                };
                g.validate().map_err(|m| match env.grid {
                    Some(raw) => src.at(src.offset_of(raw), format!("grid: {m}")),
                    None => whole(format!("grid: {m}")),
                })?;
                Grid::Time(g)
            }
            Experiment::Steady => {
                forbid("grid", env.grid)?;
                Grid::None
            }
            Experiment::Wigner => {
                let g: WignerSpec = match env.grid {
                    Some(raw) => src.typed("grid", raw)?,
                    None => WignerSpec::default(),
                };
                g.validate().map_err(|e| whole(format!("grid: {e}")))?;
                Grid::Wigner(g)
            }
            Experiment::Sweep => {
                require("grid", env.grid)?;
                let raw = env.grid.unwrap_or_else(|| unreachable!());
                let g: SweepGrid = src.typed("grid", raw)?;
                g.g_2ph
                    .validate("g_2ph")
                    .and_then(|_| g.g_ps.validate("g_ps"))
                    .map_err(|m| src.at(src.offset_of(raw), format!("grid: {m}")))?;
                Grid::Sweep(g)
            }
            Experiment::Reduce => {
                let g: ReduceGrid = match env.grid {
                    Some(raw) => src.typed("grid", raw)?,
                    None => ReduceGrid::default(),
                };
                if g.deltas.is_empty() || g.deltas.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
                    let at = env.grid.map_or(0, |r| src.offset_of(r));
                    return Err(src.at(
                        at,
                        "grid: deltas must be a non-empty list of positive numbers",
                    ));
                }
                Grid::Reduce(g)
            }
        };

        let propagator = match env.propagator {
            Some(raw) => {
                let p: PropagatorPlan = src.typed("propagator", raw)?;
                p.validate()
                    .map_err(|e| src.at(src.offset_of(raw), format!("propagator: {e}")))?;
                p
            }
            None => PropagatorPlan::default(),
        };

        if matches!(exp, Experiment::Sweep | Experiment::Reduce) && env.model == ModelKind::TwoMode
        {
            return Err(whole(format!(
                "experiment `{exp}` supports models effective and three_mode"
            )));
        }

        Ok(Self {
            experiment: exp,
            model: env.model,
            params,
            grid,
            output: env.output,
            seed: env.seed,
            propagator,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EVOLVE: &str = r#"{
  "experiment": "evolve",
  "model": "effective",
  "params": {
    "kappa_1ph": 1.0,
    "kappa_2ph": 250.0,
    "kappa_ps": 760.0,
    "eps_2ph": 500.0
  },
  "grid": { "t_end": 1.0, "samples": 50 }
}"#;

    #[test]
    fn parses_evolve_config() {
        let cfg = ExperimentConfig::parse("c.json", EVOLVE).unwrap();
        assert_eq!(cfg.experiment, Experiment::Evolve);
        match &cfg.grid {
            Grid::Time(g) => assert_eq!(g.times().len(), 50),
            other => panic!("{other:?}"),
        }
        match &cfg.params {
            Params::Effective(p) => assert!((p.alpha().unwrap().re - 2.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_param_is_reported_at_its_line() {
        let text = EVOLVE.replace(
            "\"kappa_ps\": 760.0,",
            "\"kappa_ps\": 760.0,\n    \"kappa_bogus\": 1.0,",
        );
        let err = ExperimentConfig::parse("c.json", &text).unwrap_err();
        assert_eq!(err.line, 8, "{err}");
        assert!(err.message.contains("kappa_bogus"), "{err}");
        assert!(err.to_string().starts_with("c.json:8:"));
    }

    #[test]
    fn unknown_top_level_key_is_rejected() {
        let text = EVOLVE.replace(
            "\"model\": \"effective\",",
            "\"model\": \"effective\",\n  \"colour\": 1,",
        );
        let err = ExperimentConfig::parse("c.json", &text).unwrap_err();
        assert_eq!(err.line, 4, "{err}");
        assert!(err.message.contains("colour"));
    }

    #[test]
    fn empty_time_grid_is_invalid() {
        let text = EVOLVE.replace("\"samples\": 50", "\"samples\": 0");
        let err = ExperimentConfig::parse("c.json", &text).unwrap_err();
        assert_eq!(err.line, 10);
        assert!(err.message.contains("at least 2 samples"));
    }

    #[test]
    fn negative_rate_is_invalid() {
        let text = EVOLVE.replace("\"kappa_2ph\": 250.0", "\"kappa_2ph\": -250.0");
        let err = ExperimentConfig::parse("c.json", &text).unwrap_err();
        assert_eq!(err.line, 4);
        assert!(err.message.contains("kappa_2ph"));
    }

    #[test]
    fn sweep_defaults_and_ranges() {
        let text = r#"{"experiment": "sweep", "grid": {"g_2ph": {"start": 50, "stop": 400, "step": 50}, "g_ps": {"start": 100, "stop": 700, "step": 50}}}"#;
        let cfg = ExperimentConfig::parse("s.json", text).unwrap();
        match &cfg.grid {
            Grid::Sweep(g) => {
                assert_eq!(g.g_2ph.values().len(), 8);
                assert_eq!(g.g_ps.values().len(), 13);
                assert_eq!(*g.g_ps.values().last().unwrap(), 700.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn compare_requires_three_mode() {
        let text = r#"{"experiment": "compare", "params": {}}"#;
        let err = ExperimentConfig::parse("c.json", text).unwrap_err();
        assert!(err.message.contains("three_mode"));
    }

    #[test]
    fn reduce_rejects_params() {
        let text = "{\"experiment\": \"reduce\",\n \"params\": {}}";
        let err = ExperimentConfig::parse("r.json", text).unwrap_err();
        assert_eq!((err.line, err.column), (2, 12));
    }

    #[test]
    fn as_run_config_round_trips() {
        let cfg = ExperimentConfig::parse("c.json", EVOLVE).unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let again = ExperimentConfig::parse("as-run", &text).unwrap();
        assert_eq!(
            serde_json::to_string(&again).unwrap(),
            serde_json::to_string(&cfg).unwrap()
        );
    }
}
