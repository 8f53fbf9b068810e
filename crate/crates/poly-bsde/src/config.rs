//! Line-oriented run configuration: `[section]` headers over `key = value`
//! entries, `#` comments, whitespace-insensitive.
//!
//! A run file describes one model and everything the front-end commands
//! need to drive it:
//!
//! ```text
//! [model]                    # kind = heston | sabr | utility, then
//! kind  = heston             # the model's scalar parameters
//! sigma = 0.15
//! ...
//! [grid]                     # horizon and solve resolution
//! [expansion]                # truncation order, target moments
//! [mc]                       # path count, step rate, seed, antithetics
//! [pricing]                  # strike grid and cumulant orders
//! [output]                   # destination directory
//! ```
//!
//! Parsing is strict: unknown sections, unknown keys, duplicate keys,
//! and malformed numbers are all reported with their line number rather
//! than ignored. Defaults exist only where a section is genuinely
//! optional (`[mc]`, `[pricing]`, `[output]`); model, grid, and
//! expansion blocks must be explicit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::Curve;
use crate::heston::{GaussianJump, HestonParams, IntensityPoly};
use crate::mc::{McConfig, DEFAULT_MC_STEPS_PER_YEAR};
use crate::ode::DEFAULT_ODE_STEPS_PER_YEAR;
use crate::sabr::SabrParams;
use crate::utility::{LiabilitySpec, ThetaSpec, UtilityParams};

/// Default Monte Carlo path count for validation runs.
pub const DEFAULT_MC_PATHS: usize = 100_000;

/// Default master seed for reproduction runs.
pub const DEFAULT_SEED: u64 = 20_140_801;

/// Default threshold on the scale-free cumulant ratio `|χ_n|/χ₂^{n/2}`
/// above which a pricing run prints a conditioning warning.
pub const DEFAULT_CUMULANT_WARN_RATIO: f64 = 10.0;

/// Which model a run file drives, with its fully validated parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelConfig {
    /// Stochastic-volatility jump model.
    Heston(HestonParams),
    /// CEV-type local/stochastic volatility model.
    Sabr(SabrParams),
    /// Exponential-utility portfolio problem.
    Utility(UtilityParams),
}

/// A fully parsed and cross-validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// The model and its parameters.
    pub model: ModelConfig,
    /// Horizon `T` in years (> 0).
    pub t_end: f64,
    /// Backward-solve resolution in steps per year.
    pub ode_steps_per_year: usize,
    /// Highest expansion order `n_max`.
    pub n_max: usize,
    /// Highest target moment for moment runs (`1 ≤ m_max ≤ n_max`).
    pub m_max: usize,
    /// Terminal monomial power for residual-validation runs.
    pub residual_moment: usize,
    /// Monte Carlo block (paths, step rate, seed, antithetics).
    pub mc: McConfig,
    /// Strike grid as ratios `K/S₀` (positive, ascending not required).
    pub strike_ratios: Vec<f64>,
    /// Cumulant truncation orders for pricing runs (each ≥ 2).
    pub cumulant_orders: Vec<usize>,
    /// Conditioning-warning threshold on `|χ_n|/χ₂^{n/2}`.
    pub cumulant_warn_ratio: f64,
    /// Output directory, if the file names one.
    pub out_dir: Option<PathBuf>,
}

struct Section {
    line: usize,
    entries: BTreeMap<String, (usize, String)>,
    consumed: std::cell::RefCell<Vec<String>>,
}

impl Section {
    fn get(&self, key: &str) -> Option<&str> {
        self.consumed.borrow_mut().push(key.to_string());
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    fn require(&self, name: &str, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| {
            Error::Config(format!("section [{name}] (line {}) is missing key `{key}`", self.line))
        })
    }

    fn check_no_stray_keys(&self, name: &str) -> Result<()> {
        let consumed = self.consumed.borrow();
        for (key, (line, _)) in &self.entries {
            if !consumed.iter().any(|c| c == key) {
                return Err(Error::Config(format!(
                    "unknown key `{key}` in section [{name}] (line {line})"
                )));
            }
        }
        Ok(())
    }
}

fn parse_sections(text: &str) -> Result<BTreeMap<String, Section>> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::Config(format!("line {line_no}: unterminated section header")))?
                .trim()
                .to_string();
            if name.is_empty() {
                return Err(Error::Config(format!("line {line_no}: empty section name")));
            }
            if sections.contains_key(&name) {
                return Err(Error::Config(format!("line {line_no}: duplicate section [{name}]")));
            }
            sections.insert(
                name.clone(),
                Section {
                    line: line_no,
                    entries: BTreeMap::new(),
                    consumed: std::cell::RefCell::new(Vec::new()),
                },
            );
            current = Some(name);
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {line_no}: expected `key = value`, got `{line}`"))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config(format!("line {line_no}: empty key")));
        }
        let section_name = current
            .clone()
            .ok_or_else(|| Error::Config(format!("line {line_no}: entry before any [section]")))?;
        let section = sections.get_mut(&section_name).expect("current section exists");
        if section.entries.contains_key(&key) {
            return Err(Error::Config(format!(
                "line {line_no}: duplicate key `{key}` in section [{section_name}]"
            )));
        }
        section.entries.insert(key, (line_no, value));
    }
    Ok(sections)
}

fn parse_f64(name: &str, key: &str, raw: &str) -> Result<f64> {
    raw.parse::<f64>().map_err(|_| {
        Error::Config(format!("section [{name}], key `{key}`: `{raw}` is not a number"))
    })
}

fn parse_usize(name: &str, key: &str, raw: &str) -> Result<usize> {
    raw.parse::<usize>().map_err(|_| {
        Error::Config(format!("section [{name}], key `{key}`: `{raw}` is not a non-negative integer"))
    })
}

fn parse_bool(name: &str, key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "section [{name}], key `{key}`: `{raw}` is not `true` or `false`"
        ))),
    }
}

fn parse_f64_list(name: &str, key: &str, raw: &str) -> Result<Vec<f64>> {
    raw.split_whitespace().map(|tok| parse_f64(name, key, tok)).collect()
}

fn parse_usize_list(name: &str, key: &str, raw: &str) -> Result<Vec<usize>> {
    raw.split_whitespace().map(|tok| parse_usize(name, key, tok)).collect()
}

fn model_from_section(section: &Section) -> Result<ModelConfig> {
    let name = "model";
    let kind = section.require(name, "kind")?.to_string();
    let scalar = |key: &str| -> Result<f64> {
        parse_f64(name, key, section.require(name, key)?)
    };
    let model = match kind.as_str() {
        "heston" => {
            let intensity_coeffs =
                parse_f64_list(name, "intensity", section.require(name, "intensity")?)?;
            let range_raw = section.get("intensity_y_range").unwrap_or("-1.0 1.0");
            let range = parse_f64_list(name, "intensity_y_range", range_raw)?;
            if range.len() != 2 {
                return Err(Error::Config(
                    "intensity_y_range needs exactly two numbers (low high)".to_string(),
                ));
            }
            let intensity = IntensityPoly::new(intensity_coeffs, (range[0], range[1]))
                .map_err(|e| Error::Config(format!("intensity: {e}")))?;
            ModelConfig::Heston(HestonParams::constant(
                scalar("sigma")?,
                scalar("alpha")?,
                scalar("rho")?,
                scalar("kappa")?,
                intensity,
                GaussianJump { mu: scalar("jump_mu")?, sigma: scalar("jump_sigma")? },
            ))
        }
        "sabr" => ModelConfig::Sabr(SabrParams::constant(
            scalar("sigma")?,
            scalar("alpha")?,
            scalar("rho")?,
            scalar("kappa")?,
            scalar("beta")?,
        )),
        "utility" => {
            let g = parse_f64_list(name, "g", section.require(name, "g")?)?;
            let liability = LiabilitySpec::new(scalar("g1")?, g)
                .map_err(|e| Error::Config(format!("liability: {e}")))?;
            let premium = ThetaSpec::new(scalar("c0")?, scalar("c1")?)
                .map_err(|e| Error::Config(format!("risk premium: {e}")))?;
            ModelConfig::Utility(UtilityParams {
                sigma: Curve::Const(scalar("sigma")?),
                alpha: Curve::Const(scalar("alpha")?),
                rho: Curve::Const(scalar("rho")?),
                kappa: Curve::Const(scalar("kappa")?),
                risk_premium: premium,
                liability,
                risk_aversion: scalar("gamma")?,
            })
        }
        other => {
            return Err(Error::Config(format!(
                "unknown model kind `{other}` (expected heston, sabr, or utility)"
            )))
        }
    };
    section.check_no_stray_keys(name)?;
    Ok(model)
}

impl RunConfig {
    /// Parses and cross-validates a run file's text.
    pub fn from_text(text: &str) -> Result<Self> {
        let sections = parse_sections(text)?;
        for name in sections.keys() {
            if !["model", "grid", "expansion", "mc", "pricing", "output"].contains(&name.as_str())
            {
                return Err(Error::Config(format!("unknown section [{name}]")));
            }
        }
        let section = |name: &str| -> Result<&Section> {
            sections
                .get(name)
                .ok_or_else(|| Error::Config(format!("missing required section [{name}]")))
        };

        let model = model_from_section(section("model")?)?;

        let grid = section("grid")?;
        let t_end = parse_f64("grid", "t_end", grid.require("grid", "t_end")?)?;
        let ode_steps_per_year = match grid.get("ode_steps_per_year") {
            Some(raw) => parse_usize("grid", "ode_steps_per_year", raw)?,
            None => DEFAULT_ODE_STEPS_PER_YEAR,
        };
        grid.check_no_stray_keys("grid")?;

        let expansion = section("expansion")?;
        let n_max = parse_usize("expansion", "n_max", expansion.require("expansion", "n_max")?)?;
        let m_max = match expansion.get("m_max") {
            Some(raw) => parse_usize("expansion", "m_max", raw)?,
            None => 1,
        };
        let residual_moment = match expansion.get("residual_moment") {
            Some(raw) => parse_usize("expansion", "residual_moment", raw)?,
            None => 1,
        };
        expansion.check_no_stray_keys("expansion")?;

        let mc = match sections.get("mc") {
            Some(s) => {
                let n_paths = match s.get("n_paths") {
                    Some(raw) => parse_usize("mc", "n_paths", raw)?,
                    None => DEFAULT_MC_PATHS,
                };
                let n_steps_per_year = match s.get("steps_per_year") {
                    Some(raw) => parse_usize("mc", "steps_per_year", raw)?,
                    None => DEFAULT_MC_STEPS_PER_YEAR,
                };
                let seed = match s.get("seed") {
                    Some(raw) => raw.parse::<u64>().map_err(|_| {
                        Error::Config(format!("section [mc], key `seed`: `{raw}` is not a u64"))
                    })?,
                    None => DEFAULT_SEED,
                };
                let antithetic = match s.get("antithetic") {
                    Some(raw) => parse_bool("mc", "antithetic", raw)?,
                    None => false,
                };
                s.check_no_stray_keys("mc")?;
                McConfig { n_paths, n_steps_per_year, seed, antithetic }
            }
            None => McConfig {
                n_paths: DEFAULT_MC_PATHS,
                n_steps_per_year: DEFAULT_MC_STEPS_PER_YEAR,
                seed: DEFAULT_SEED,
                antithetic: false,
            },
        };

        let (strike_ratios, cumulant_orders, cumulant_warn_ratio) = match sections.get("pricing") {
            Some(s) => {
                let strikes = match s.get("strike_ratios") {
                    Some(raw) => parse_f64_list("pricing", "strike_ratios", raw)?,
                    None => Vec::new(),
                };
                let orders = match s.get("cumulant_orders") {
                    Some(raw) => parse_usize_list("pricing", "cumulant_orders", raw)?,
                    None => Vec::new(),
                };
                let warn = match s.get("cumulant_warn_ratio") {
                    Some(raw) => parse_f64("pricing", "cumulant_warn_ratio", raw)?,
                    None => DEFAULT_CUMULANT_WARN_RATIO,
                };
                s.check_no_stray_keys("pricing")?;
                (strikes, orders, warn)
            }
            None => (Vec::new(), Vec::new(), DEFAULT_CUMULANT_WARN_RATIO),
        };

        let out_dir = match sections.get("output") {
            Some(s) => {
                let dir = s.get("dir").map(PathBuf::from);
                s.check_no_stray_keys("output")?;
                dir
            }
            None => None,
        };

        let config = RunConfig {
            model,
            t_end,
            ode_steps_per_year,
            n_max,
            m_max,
            residual_moment,
            mc,
            strike_ratios,
            cumulant_orders,
            cumulant_warn_ratio,
            out_dir,
        };
        config.validate()?;
        Ok(config)
    }

    /// Loads and parses a run file from disk.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Cross-field validity checks (parameter-level checks live with the
    /// model types themselves).
    pub fn validate(&self) -> Result<()> {
        match &self.model {
            ModelConfig::Heston(p) => p.validate()?,
            ModelConfig::Sabr(p) => p.validate()?,
            ModelConfig::Utility(p) => p.validate()?,
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(Error::Config(format!("t_end must be positive, got {}", self.t_end)));
        }
        if self.ode_steps_per_year == 0 {
            return Err(Error::Config("ode_steps_per_year must be at least 1".to_string()));
        }
        if self.m_max == 0 || self.m_max > self.n_max {
            return Err(Error::Config(format!(
                "m_max must satisfy 1 ≤ m_max ≤ n_max, got m_max = {}, n_max = {}",
                self.m_max, self.n_max
            )));
        }
        if self.residual_moment == 0 {
            return Err(Error::Config("residual_moment must be at least 1".to_string()));
        }
        self.mc.validate()?;
        if self.strike_ratios.iter().any(|&k| !(k > 0.0) || !k.is_finite()) {
            return Err(Error::Config("strike ratios must be positive".to_string()));
        }
        for &c in &self.cumulant_orders {
            if c < 2 {
                return Err(Error::Config(format!("cumulant order {c} is below 2")));
            }
            if c > self.n_max {
                return Err(Error::Config(format!(
                    "cumulant order {c} needs moments beyond n_max = {}",
                    self.n_max
                )));
            }
        }
        if !(self.cumulant_warn_ratio > 0.0) {
            return Err(Error::Config("cumulant_warn_ratio must be positive".to_string()));
        }
        Ok(())
    }

    /// The backward-solve grid implied by the horizon and resolution.
    pub fn ode_grid(&self) -> Result<crate::grid::TimeGrid> {
        let steps = ((self.t_end * self.ode_steps_per_year as f64).ceil() as usize).max(1);
        crate::grid::TimeGrid::new(self.t_end, steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HESTON_TEXT: &str = "\
# third-maturity moment run
[model]
kind  = heston
sigma = 0.15
alpha = 0.5
rho   = -0.5
kappa = 0.1
intensity = 8.0 10.0 5.0
intensity_y_range = -0.6 2.0
jump_mu = 0.01
jump_sigma = 0.035

[grid]
t_end = 3.0

[expansion]
n_max = 10
m_max = 5

[mc]
n_paths = 5000
seed = 42

[pricing]
strike_ratios = 0.9 1.0 1.1
cumulant_orders = 2 4 6

[output]
dir = out/run
";

    #[test]
    fn heston_file_parses_with_defaults_applied() {
        let cfg = RunConfig::from_text(HESTON_TEXT).unwrap();
        assert_eq!(cfg.t_end, 3.0);
        assert_eq!(cfg.ode_steps_per_year, DEFAULT_ODE_STEPS_PER_YEAR);
        assert_eq!((cfg.n_max, cfg.m_max, cfg.residual_moment), (10, 5, 1));
        assert_eq!(cfg.mc.n_paths, 5000);
        assert_eq!(cfg.mc.n_steps_per_year, DEFAULT_MC_STEPS_PER_YEAR);
        assert_eq!(cfg.mc.seed, 42);
        assert!(!cfg.mc.antithetic);
        assert_eq!(cfg.strike_ratios, vec![0.9, 1.0, 1.1]);
        assert_eq!(cfg.cumulant_orders, vec![2, 4, 6]);
        assert_eq!(cfg.out_dir.as_deref(), Some(Path::new("out/run")));
        match &cfg.model {
            ModelConfig::Heston(p) => {
                assert_eq!(p.jump.mu, 0.01);
                assert_eq!(p.intensity.eval(0.0), 8.0);
            }
            other => panic!("wrong model {other:?}"),
        }
    }

    #[test]
    fn sabr_and_utility_models_parse() {
        let sabr = "\
[model]
kind = sabr
sigma = 0.15
alpha = 0.3
rho = -0.4
kappa = 0.1
beta = 0.4
[grid]
t_end = 0.5
[expansion]
n_max = 5
";
        let cfg = RunConfig::from_text(sabr).unwrap();
        assert!(matches!(cfg.model, ModelConfig::Sabr(_)));

        let utility = "\
[model]
kind = utility
sigma = 0.2
alpha = 0.5
rho = -0.7
kappa = 0.1
c0 = 0.01
c1 = 0.4
gamma = 1.0
g1 = 0.6
g = 0.5 0.866 -0.25 -0.144 0.02 0.007
[grid]
t_end = 1.0
[expansion]
n_max = 14
";
        let cfg = RunConfig::from_text(utility).unwrap();
        match &cfg.model {
            ModelConfig::Utility(p) => assert_eq!(p.risk_aversion, 1.0),
            other => panic!("wrong model {other:?}"),
        }
    }

    #[test]
    fn strictness_rejects_typos_and_bad_values() {
        let cases: Vec<(&str, String)> = vec![
            ("unknown key", HESTON_TEXT.replace("jump_mu", "jump_mean")),
            ("unknown section", format!("{HESTON_TEXT}\n[plotting]\nstyle = dots\n")),
            (
                "duplicate key",
                HESTON_TEXT.replace("[grid]\nt_end = 3.0", "[grid]\nt_end = 3.0\nt_end = 2.0"),
            ),
            ("bad number", HESTON_TEXT.replace("sigma = 0.15", "sigma = fifteen")),
            ("bad rho", HESTON_TEXT.replace("rho   = -0.5", "rho   = -1.5")),
            ("m_max above n_max", HESTON_TEXT.replace("m_max = 5", "m_max = 11")),
            ("negative strike", HESTON_TEXT.replace("0.9 1.0 1.1", "-0.9 1.0")),
            (
                "cumulant order 1",
                HESTON_TEXT.replace("cumulant_orders = 2 4 6", "cumulant_orders = 1"),
            ),
            (
                "cumulant order beyond n_max",
                HESTON_TEXT.replace("cumulant_orders = 2 4 6", "cumulant_orders = 12"),
            ),
            ("missing model key", HESTON_TEXT.replace("kappa = 0.1\n", "")),
            ("entry before section", "t_end = 1.0\n[grid]\n".to_string()),
            ("unterminated header", "[model\nkind = heston\n".to_string()),
        ];
        for (label, text) in cases {
            let got = RunConfig::from_text(&text);
            assert!(got.is_err(), "{label}: expected rejection, got {got:?}");
        }
    }

    #[test]
    fn comments_and_whitespace_are_ignored() {
        let text = "\
  [model]   # the model block
kind=heston
sigma =0.15
alpha= 0.5
rho = -0.5    # leverage
kappa = 0.1
intensity = 1.0
jump_mu = 0.0
jump_sigma = 0.0
[grid]
t_end = 1.0
[expansion]
n_max = 2
";
        let cfg = RunConfig::from_text(text).unwrap();
        assert_eq!(cfg.n_max, 2);
    }
}
