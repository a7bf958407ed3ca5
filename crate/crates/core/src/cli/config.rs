//! Run configuration file.
//!
//! ```toml
//! system = "planar_nonlinear"   # scalar_linear | planar_nonlinear | quadrotor10
//! seed = 0
//! propagator = "ibp"
//!
//! [region]
//! bounds = [[-1.0, 1.0], [-1.0, 1.0]]   # optional, defaults to the system's box
//! partitions = [8, 8]                   # optional, defaults to one cell per axis
//!
//! [hyper]
//! a = 0.01
//! b = 100.0
//! c = 0.1
//!
//! [network]      # optional: policy_hidden, metric_hidden, state_weight, input_weight
//! [optimizer]    # optional: lr, beta1, beta2, eps, weight_decay
//! [curriculum]   # optional: start, target, increment, max_steps, max_seconds,
//!                # aggregation = "mean" | "max" | "union"
//! ```

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::Spanned;

use crate::boundprop::{Propagator, Region};
use crate::interval::Interval;
use crate::problem::{Hyper, WarmStart};
use crate::systems::{benchmark_system, ControlAffineSystem};
use crate::train::{AdamW, CurriculumConfig};

#[derive(Debug, Error, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    system: Spanned<String>,
    #[serde(default)]
    seed: u64,
    propagator: Option<Spanned<String>>,
    #[serde(default)]
    region: RawRegion,
    hyper: RawHyper,
    #[serde(default)]
    network: WarmStart,
    #[serde(default)]
    optimizer: AdamW,
    #[serde(default)]
    curriculum: CurriculumConfig,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegion {
    bounds: Option<Spanned<Vec<Spanned<[f64; 2]>>>>,
    partitions: Option<Spanned<Vec<usize>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHyper {
    a: Spanned<f64>,
    b: Spanned<f64>,
    c: Spanned<f64>,
}

/// Validated run configuration; also embedded in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub system: String,
    pub seed: u64,
    pub propagator: Propagator,
    /// Full region `X`; curriculum stages scale it about its center.
    pub region: Region,
    pub hyper: Hyper,
    pub network: WarmStart,
    pub optimizer: AdamW,
    pub curriculum: CurriculumConfig,
}

fn line_of(src: &str, span: Range<usize>) -> usize {
    src[..span.start.min(src.len())].matches('\n').count() + 1
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&src)
    }

    pub fn parse(src: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(src).map_err(|e| ConfigError {
            line: e.span().map(|s| line_of(src, s)),
            message: e.message().to_string(),
        })?;
        let at = |span: Range<usize>, message: String| ConfigError {
            line: Some(line_of(src, span)),
            message,
        };

        let system = benchmark_system(raw.system.get_ref())
            .map_err(|e| at(raw.system.span(), e.to_string()))?;
        let n = system.state_dim();

        let propagator = match &raw.propagator {
            None => Propagator::Ibp,
            Some(p) if p.get_ref() == "ibp" => Propagator::Ibp,
            Some(p) => {
                return Err(at(
                    p.span(),
                    format!("unknown propagator '{}'; only \"ibp\" is available", p.get_ref()),
                ))
            }
        };

        let bounds = match &raw.region.bounds {
            None => system.default_region(),
            Some(list) => {
                if list.get_ref().len() != n {
                    return Err(at(
                        list.span(),
                        format!("region has {} coordinates, system {} has {n}", list.get_ref().len(), system),
                    ));
                }
                let mut out = Vec::with_capacity(n);
                for (i, pair) in list.get_ref().iter().enumerate() {
                    let [lo, hi] = *pair.get_ref();
                    if !(lo.is_finite() && hi.is_finite()) {
                        return Err(at(pair.span(), format!("region coordinate {i} is not finite")));
                    }
                    let iv = Interval::new(lo, hi).map_err(|_| {
                        at(pair.span(), format!("region coordinate {i} has lo {lo} > hi {hi}"))
                    })?;
                    out.push(iv);
                }
                out
            }
        };
        let partitions = match &raw.region.partitions {
            None => vec![1; n],
            Some(p) => {
                if p.get_ref().len() != n || p.get_ref().iter().any(|&k| k == 0) {
                    return Err(at(
                        p.span(),
                        format!("partitions need {n} counts, each at least 1, got {:?}", p.get_ref()),
                    ));
                }
                p.get_ref().clone()
            }
        };
        let region = Region::new(bounds, partitions).map_err(|e| ConfigError {
            line: None,
            message: e.to_string(),
        })?;

        let (a, b, c) = (&raw.hyper.a, &raw.hyper.b, &raw.hyper.c);
        if !(*a.get_ref() > 0.0 && a.get_ref().is_finite()) {
            return Err(at(a.span(), format!("hyper.a must be positive, got {}", a.get_ref())));
        }
        if !(b.get_ref() > a.get_ref() && b.get_ref().is_finite()) {
            return Err(at(b.span(), format!("hyper.b must exceed a, got {}", b.get_ref())));
        }
        if !(*c.get_ref() >= 0.0 && c.get_ref().is_finite()) {
            return Err(at(c.span(), format!("hyper.c must be nonnegative, got {}", c.get_ref())));
        }
        let hyper = Hyper {
            a: *a.get_ref(),
            b: *b.get_ref(),
            c: *c.get_ref(),
        };

        let cur = &raw.curriculum;
        if cur.target == 0 || cur.target > 100 || cur.start == 0 || cur.start > cur.target {
            return Err(ConfigError {
                line: None,
                message: format!(
                    "curriculum needs 1 <= start <= target <= 100, got start {} target {}",
                    cur.start, cur.target
                ),
            });
        }
        let opt = &raw.optimizer;
        if !(opt.lr > 0.0 && (0.0..1.0).contains(&opt.beta1) && (0.0..1.0).contains(&opt.beta2)) {
            return Err(ConfigError {
                line: None,
                message: "optimizer needs lr > 0 and betas in [0, 1)".into(),
            });
        }

        Ok(RunConfig {
            system: system.name().to_string(),
            seed: raw.seed,
            propagator,
            region,
            hyper,
            network: raw.network,
            optimizer: raw.optimizer,
            curriculum: raw.curriculum,
        })
    }

    /// Region of the curriculum's final stage.
    pub fn target_region(&self) -> Region {
        crate::train::stage_region(&self.region, self.curriculum.target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PLANAR: &str = r#"
system = "planar_nonlinear"
seed = 7

[region]
bounds = [[-1.0, 1.0], [-1.0, 1.0]]
partitions = [8, 8]

[hyper]
a = 0.01
b = 100.0
c = 0.1

[curriculum]
max_steps = 50
"#;

    #[test]
    fn parses_and_fills_defaults() {
        let cfg = RunConfig::parse(PLANAR).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.region.partitions, vec![8, 8]);
        assert_eq!(cfg.curriculum.max_steps, 50);
        assert_eq!(cfg.curriculum.target, 100);
        assert_eq!(cfg.optimizer, AdamW::default());
        assert_eq!(cfg.network, WarmStart::default());
    }

    #[test]
    fn reversed_bounds_point_at_their_line() {
        let bad = PLANAR.replace("[[-1.0, 1.0], [-1.0, 1.0]]", "[[-1.0, 1.0],\n  [1.0, -1.0]]");
        let err = RunConfig::parse(&bad).unwrap_err();
        assert_eq!(err.line, Some(7));
        assert!(err.message.contains("lo 1 > hi -1"), "{}", err.message);
    }

    #[test]
    fn other_errors_carry_lines() {
        let err = RunConfig::parse(&PLANAR.replace("b = 100.0", "b = 0.001")).unwrap_err();
        assert_eq!(err.line, Some(11));
        let err = RunConfig::parse(&PLANAR.replace("planar_nonlinear", "pendulum")).unwrap_err();
        assert_eq!(err.line, Some(2));
        let err = RunConfig::parse(&PLANAR.replace("seed = 7", "seed = 7\nsede = 1")).unwrap_err();
        assert_eq!(err.line, Some(4));
        let err = RunConfig::parse(&PLANAR.replace("[8, 8]", "[8]")).unwrap_err();
        assert_eq!(err.line, Some(7));
        let err = RunConfig::parse(&PLANAR.replace("seed = 7", "seed = 7\npropagator = \"crown\"")).unwrap_err();
        assert_eq!(err.line, Some(4));
    }

    #[test]
    fn default_region_and_target() {
        let src = "system = \"quadrotor10\"\n[hyper]\na = 0.01\nb = 100.0\nc = 0.001\n[curriculum]\ntarget = 30\n";
        let cfg = RunConfig::parse(src).unwrap();
        assert_eq!(cfg.region.dim(), 10);
        let t = cfg.target_region();
        assert!((t.bounds[0].hi() - 3.0).abs() < 1e-12);
    }
}
