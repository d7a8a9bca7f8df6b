//! Sectioned key-value model configs.
//!
//! ```text
//! # anything after a hash is a comment
//! [forward]
//! b = -x
//! sigma = 1, 0.5      # one expression per Brownian component
//! x0 = 0.0
//!
//! [backward]
//! f = 0.5*(z1^2+z2^2)
//! g = tanh(x)
//!
//! [time]
//! T = 1.0
//!
//! [pde]
//! x_min = -6
//! x_max = 6
//! nx = 401
//! nt = 400
//!
//! [mc]
//! paths = 100000
//! steps = 100
//! seed = 42
//! bins = 50
//! z_clip = 4.0
//! ```
//!
//! `[forward]` and `[backward]` are required; the other sections default
//! ([time] to `T = 1`, `[pde]` to the auto-sized grid, `[mc]` to
//! `paths=10000, steps=100, seed=1, bins=50` with the `1/sqrt(dt)`
//! truncation). Keys are case-sensitive; unknown sections or keys are
//! errors.

use std::path::Path;

use thiserror::Error;

use crate::mc::McConfig;
use crate::model::{ModelError, ModelSpec};
use crate::pde::{Grid, DEFAULT_NT, DEFAULT_NX};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value` or `[section]`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown section [{name}]")]
    UnknownSection { line: usize, name: String },
    #[error("line {line}: unknown key `{key}` in [{section}]")]
    UnknownKey {
        line: usize,
        section: &'static str,
        key: String,
    },
    #[error("line {line}: key `{key}` outside any section")]
    KeyOutsideSection { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {reason}")]
    BadValue {
        line: usize,
        key: String,
        reason: String,
    },
    #[error("missing required section [{0}]")]
    MissingSection(&'static str),
    #[error("missing required key `{key}` in [{section}]")]
    MissingKey {
        section: &'static str,
        key: &'static str,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Everything a command needs: the model plus optional grid and Monte Carlo
/// overrides from the file.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub model: ModelSpec,
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
    pub nx: Option<usize>,
    pub nt: Option<usize>,
    pub paths: Option<usize>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub bins: Option<usize>,
    pub z_clip: Option<f64>,
}

pub const DEFAULT_PATHS: usize = 10_000;
pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_SEED: u64 = 1;

impl ModelConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut section: Option<&'static str> = None;
        let mut fwd_b: Option<String> = None;
        let mut fwd_sigma: Option<Vec<String>> = None;
        let mut fwd_x0: Option<f64> = None;
        let mut bwd_f: Option<String> = None;
        let mut bwd_g: Option<String> = None;
        let mut saw_forward = false;
        let mut saw_backward = false;
        let mut horizon: Option<f64> = None;
        let mut cfg = PartialConfig::default();

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = Some(match name {
                    "forward" => {
                        saw_forward = true;
                        "forward"
                    }
                    "backward" => {
                        saw_backward = true;
                        "backward"
                    }
                    "time" => "time",
                    "pde" => "pde",
                    "mc" => "mc",
                    other => {
                        return Err(ConfigError::UnknownSection {
                            line,
                            name: other.to_string(),
                        })
                    }
                });
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Malformed {
                    line,
                    text: content.to_string(),
                });
            };
            let key = key.trim();
            let value = value.trim();
            let Some(section) = section else {
                return Err(ConfigError::KeyOutsideSection {
                    line,
                    key: key.to_string(),
                });
            };
            let bad = |reason: String| ConfigError::BadValue {
                line,
                key: key.to_string(),
                reason,
            };
            match (section, key) {
                ("forward", "b") => fwd_b = Some(value.to_string()),
                ("forward", "sigma") => {
                    fwd_sigma = Some(value.split(',').map(|s| s.trim().to_string()).collect())
                }
                ("forward", "x0") => fwd_x0 = Some(parse_num(value).map_err(bad)?),
                ("backward", "f") => bwd_f = Some(value.to_string()),
                ("backward", "g") => bwd_g = Some(value.to_string()),
                ("time", "T") => horizon = Some(parse_num(value).map_err(bad)?),
                ("pde", "x_min") => cfg.x_min = Some(parse_num(value).map_err(bad)?),
                ("pde", "x_max") => cfg.x_max = Some(parse_num(value).map_err(bad)?),
                ("pde", "nx") => cfg.nx = Some(parse_int(value).map_err(bad)?),
                ("pde", "nt") => cfg.nt = Some(parse_int(value).map_err(bad)?),
                ("mc", "paths") => cfg.paths = Some(parse_int(value).map_err(bad)?),
                ("mc", "steps") => cfg.steps = Some(parse_int(value).map_err(bad)?),
                ("mc", "seed") => {
                    cfg.seed = Some(value.parse::<u64>().map_err(|e| bad(e.to_string()))?)
                }
                ("mc", "bins") => cfg.bins = Some(parse_int(value).map_err(bad)?),
                ("mc", "z_clip") => cfg.z_clip = Some(parse_num(value).map_err(bad)?),
                (section, key) => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        section,
                        key: key.to_string(),
                    })
                }
            }
        }

        if !saw_forward {
            return Err(ConfigError::MissingSection("forward"));
        }
        if !saw_backward {
            return Err(ConfigError::MissingSection("backward"));
        }
        let b = fwd_b.ok_or(ConfigError::MissingKey {
            section: "forward",
            key: "b",
        })?;
        let sigma = fwd_sigma.ok_or(ConfigError::MissingKey {
            section: "forward",
            key: "sigma",
        })?;
        let f = bwd_f.ok_or(ConfigError::MissingKey {
            section: "backward",
            key: "f",
        })?;
        let g = bwd_g.ok_or(ConfigError::MissingKey {
            section: "backward",
            key: "g",
        })?;

        let sigma_refs: Vec<&str> = sigma.iter().map(String::as_str).collect();
        let model = ModelSpec::from_sources(
            &b,
            &sigma_refs,
            &f,
            &g,
            horizon.unwrap_or(1.0),
            fwd_x0.unwrap_or(0.0),
        )?;
        Ok(ModelConfig {
            model,
            x_min: cfg.x_min,
            x_max: cfg.x_max,
            nx: cfg.nx,
            nt: cfg.nt,
            paths: cfg.paths,
            steps: cfg.steps,
            seed: cfg.seed,
            bins: cfg.bins,
            z_clip: cfg.z_clip,
        })
    }

    /// Grid from the `[pde]` section over the auto-sized default.
    pub fn resolve_grid(&self) -> Grid {
        let mut grid = Grid::default_for(&self.model);
        if let Some(v) = self.x_min {
            grid.x_min = v;
        }
        if let Some(v) = self.x_max {
            grid.x_max = v;
        }
        grid.nx = self.nx.unwrap_or(DEFAULT_NX);
        grid.nt = self.nt.unwrap_or(DEFAULT_NT);
        grid
    }

    /// Monte Carlo config from the `[mc]` section over defaults. The clip
    /// level falls back to `1/sqrt(dt)` unless the file or the caller (via a
    /// PDE solution) provides one.
    pub fn resolve_mc(&self) -> McConfig {
        let mut mc = McConfig::new(
            self.paths.unwrap_or(DEFAULT_PATHS),
            self.steps.unwrap_or(DEFAULT_STEPS),
            self.seed.unwrap_or(DEFAULT_SEED),
            self.model.horizon(),
        );
        if let Some(bins) = self.bins {
            mc = mc.with_bins(bins);
        }
        if let Some(z) = self.z_clip {
            mc = mc.with_z_clip(z);
        }
        mc
    }
}

#[derive(Debug, Default, Clone)]
struct PartialConfig {
    x_min: Option<f64>,
    x_max: Option<f64>,
    nx: Option<usize>,
    nt: Option<usize>,
    paths: Option<usize>,
    steps: Option<usize>,
    seed: Option<u64>,
    bins: Option<usize>,
    z_clip: Option<f64>,
}

fn parse_num(v: &str) -> Result<f64, String> {
    v.parse::<f64>().map_err(|e| e.to_string())
}

fn parse_int(v: &str) -> Result<usize, String> {
    v.parse::<usize>().map_err(|e| e.to_string())
}

/// Render a model back into the config format (used by `rewrite-sde`).
pub fn render_model(m: &ModelSpec, source: &ModelConfig) -> String {
    let mut out = String::new();
    out.push_str("[forward]\n");
    out.push_str(&format!("b = {}\n", m.b()));
    let sigma: Vec<String> = m.sigma().iter().map(|s| s.to_string()).collect();
    out.push_str(&format!("sigma = {}\n", sigma.join(", ")));
    out.push_str(&format!("x0 = {}\n\n", m.x0()));
    out.push_str("[backward]\n");
    out.push_str(&format!("f = {}\n", m.f()));
    out.push_str(&format!("g = {}\n\n", m.g()));
    out.push_str("[time]\n");
    out.push_str(&format!("T = {}\n", m.horizon()));
    let mc_keys: Vec<(&str, Option<String>)> = vec![
        ("paths", source.paths.map(|v| v.to_string())),
        ("steps", source.steps.map(|v| v.to_string())),
        ("seed", source.seed.map(|v| v.to_string())),
        ("bins", source.bins.map(|v| v.to_string())),
        ("z_clip", source.z_clip.map(|v| v.to_string())),
    ];
    if mc_keys.iter().any(|(_, v)| v.is_some()) {
        out.push_str("\n[mc]\n");
        for (k, v) in mc_keys.into_iter() {
            if let Some(v) = v {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# a two-component model
[forward]
b = -x
sigma = 1, 0.5   # d = 2
x0 = 2.0

[backward]
f = 0.25*(z1^2+z2^2) + 0.1*y
g = tanh(x)

[time]
T = 0.5

[mc]
paths = 1234
seed = 9
";

    #[test]
    fn parses_sections_and_defaults() {
        let cfg = ModelConfig::parse(SAMPLE).unwrap();
        assert_eq!(cfg.model.d(), 2);
        assert_eq!(cfg.model.horizon(), 0.5);
        assert_eq!(cfg.model.x0(), 2.0);
        let mc = cfg.resolve_mc();
        assert_eq!(mc.paths, 1234);
        assert_eq!(mc.steps, DEFAULT_STEPS);
        assert_eq!(mc.seed, 9);
        let grid = cfg.resolve_grid();
        assert_eq!(grid.nx, DEFAULT_NX);
        assert!(grid.x_min < 2.0 && 2.0 < grid.x_max);
    }

    #[test]
    fn missing_sections_are_errors() {
        let err = ModelConfig::parse("[forward]\nb = 0\nsigma = 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::MissingSection("backward")));
        let err = ModelConfig::parse("[backward]\nf = 0\ng = x\n").unwrap_err();
        assert!(matches!(err, ConfigError::MissingSection("forward")));
    }

    #[test]
    fn unknown_keys_and_sections_are_errors() {
        let bad_key = "[forward]\nb = 0\nsigma = 1\nvol = 2\n[backward]\nf = 0\ng = x\n";
        assert!(matches!(
            ModelConfig::parse(bad_key).unwrap_err(),
            ConfigError::UnknownKey { .. }
        ));
        let bad_section = "[foo]\nbar = 1\n";
        assert!(matches!(
            ModelConfig::parse(bad_section).unwrap_err(),
            ConfigError::UnknownSection { .. }
        ));
        // keys are case-sensitive
        let bad_case = "[forward]\nB = 0\nsigma = 1\n[backward]\nf = 0\ng = x\n";
        assert!(matches!(
            ModelConfig::parse(bad_case).unwrap_err(),
            ConfigError::UnknownKey { .. }
        ));
    }

    #[test]
    fn expression_errors_surface() {
        let bad = "[forward]\nb = 2*(\nsigma = 1\n[backward]\nf = 0\ng = x\n";
        assert!(matches!(
            ModelConfig::parse(bad).unwrap_err(),
            ConfigError::Model(_)
        ));
    }

    #[test]
    fn render_round_trips() {
        let cfg = ModelConfig::parse(SAMPLE).unwrap();
        let text = render_model(&cfg.model, &cfg);
        let reparsed = ModelConfig::parse(&text).unwrap();
        assert_eq!(reparsed.model.d(), 2);
        assert_eq!(reparsed.model.g().to_string(), cfg.model.g().to_string());
        assert_eq!(reparsed.paths, cfg.paths);
    }
}
