//! Run configuration: a flat key/value text format (INI-style, no sections)
//! parsed strictly — unknown keys, duplicate keys, and malformed values are
//! errors, so a mistyped coefficient never silently falls back to a default.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::forms::{AssemblyOptions, FrictionLaw, ProblemParams};
use crate::manufactured::{CaseId, ManufacturedCase};
use crate::solver::SolverConfig;
use crate::CbfedError;

/// Fully resolved configuration of one run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    /// The benchmark case when the run is preset-based (manufactured
    /// forcing); `None` for a custom zero-forcing run.
    pub case: Option<ManufacturedCase>,
    pub params: ProblemParams,
    pub solver: SolverConfig,
    pub grids: Vec<usize>,
    pub n_ref: usize,
    pub out_dir: PathBuf,
    pub opts: AssemblyOptions,
    pub seed: u64,
}

/// Parses `key = value` lines; `#` starts a comment, blank lines ignored.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, CbfedError> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CbfedError::Config(format!(
                "line {}: expected 'key = value', got '{line}'",
                lineno + 1
            )));
        };
        let key = k.trim().to_string();
        let val = v.trim().to_string();
        if key.is_empty() {
            return Err(CbfedError::Config(format!("line {}: empty key", lineno + 1)));
        }
        if map.insert(key.clone(), val).is_some() {
            return Err(CbfedError::Config(format!("duplicate key '{key}'")));
        }
    }
    Ok(map)
}

struct KeyReader {
    map: BTreeMap<String, String>,
}

impl KeyReader {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn take_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, CbfedError> {
        match self.take(key) {
            None => Ok(None),
            Some(s) => s.parse::<T>().map(Some).map_err(|_| {
                CbfedError::Config(format!("key '{key}': cannot parse value '{s}'"))
            }),
        }
    }

    fn finish(self) -> Result<(), CbfedError> {
        if let Some(key) = self.map.keys().next() {
            return Err(CbfedError::Config(format!("unknown key '{key}'")));
        }
        Ok(())
    }
}

fn parse_grids(s: &str) -> Result<Vec<usize>, CbfedError> {
    let grids: Result<Vec<usize>, _> = s.split(',').map(|p| p.trim().parse::<usize>()).collect();
    let grids =
        grids.map_err(|_| CbfedError::Config(format!("key 'grids': cannot parse '{s}'")))?;
    if grids.is_empty() || grids.iter().any(|&n| n == 0) {
        return Err(CbfedError::Config("key 'grids': needs positive entries".into()));
    }
    Ok(grids)
}

impl RunConfig {
    /// Resolves a key/value map into a validated configuration. A `preset`
    /// key pulls in one of the built-in cases; individual keys override its
    /// fields. Without a preset the physics keys are required and the run
    /// uses zero forcing.
    pub fn from_keys(map: BTreeMap<String, String>) -> Result<RunConfig, CbfedError> {
        let mut r = KeyReader { map };

        let preset = match r.take("preset") {
            Some(s) => Some(CaseId::parse(&s)?),
            None => None,
        };
        let base = preset.map(ManufacturedCase::preset);

        let require = |key: &str, v: Option<f64>| {
            v.ok_or_else(|| CbfedError::Config(format!("missing required key '{key}'")))
        };

        let mu = r.take_parsed::<f64>("mu")?;
        let alpha = r.take_parsed::<f64>("alpha")?;
        let beta = r.take_parsed::<f64>("beta")?;
        let kappa = r.take_parsed::<f64>("kappa")?;
        let rr = r.take_parsed::<f64>("r")?;
        let q = r.take_parsed::<f64>("q")?;
        let fa = r.take_parsed::<f64>("friction_a")?;
        let fb = r.take_parsed::<f64>("friction_b")?;
        let frho = r.take_parsed::<f64>("friction_rho")?;

        let params = match &base {
            Some(case) => {
                let p = case.params;
                ProblemParams::new(
                    mu.unwrap_or(p.mu),
                    alpha.unwrap_or(p.alpha),
                    beta.unwrap_or(p.beta),
                    kappa.unwrap_or(p.kappa),
                    rr.unwrap_or(p.r),
                    q.unwrap_or(p.q),
                    FrictionLaw::new(
                        fa.unwrap_or(p.friction.a),
                        fb.unwrap_or(p.friction.b),
                        frho.unwrap_or(p.friction.rho),
                    )?,
                )?
            }
            None => {
                let kappa = kappa.unwrap_or(0.0);
                ProblemParams::new(
                    require("mu", mu)?,
                    alpha.unwrap_or(0.0),
                    require("beta", beta)?,
                    kappa,
                    require("r", rr)?,
                    if kappa == 0.0 { q.unwrap_or(1.0) } else { require("q", q)? },
                    FrictionLaw::new(
                        require("friction_a", fa)?,
                        require("friction_b", fb)?,
                        require("friction_rho", frho)?,
                    )?,
                )?
            }
        };

        let defaults = SolverConfig::default();
        let solver = SolverConfig {
            eta: r
                .take_parsed::<f64>("eta")?
                .or(base.as_ref().map(|c| c.eta))
                .unwrap_or(defaults.eta),
            eps_outer: r.take_parsed("eps_outer")?.unwrap_or(defaults.eps_outer),
            eps_inner: r.take_parsed("eps_inner")?.unwrap_or(defaults.eps_inner),
            max_outer: r.take_parsed("max_outer")?.unwrap_or(defaults.max_outer),
            max_inner: r.take_parsed("max_inner")?.unwrap_or(defaults.max_inner),
            max_inner_first: r
                .take_parsed("max_inner_first")?
                .unwrap_or(defaults.max_inner_first),
            relative_stopping: r
                .take_parsed("relative_stopping")?
                .unwrap_or(defaults.relative_stopping),
            warm_start: r.take_parsed("warm_start")?.unwrap_or(defaults.warm_start),
        };
        solver.validate()?;

        let grids = match r.take("grids") {
            Some(s) => parse_grids(&s)?,
            None => base.as_ref().map(|c| c.grids.clone()).unwrap_or_else(|| vec![10]),
        };
        let n_ref = r
            .take_parsed::<usize>("n_ref")?
            .or(base.as_ref().map(|c| c.n_ref))
            .unwrap_or_else(|| 4 * grids.iter().copied().max().unwrap());

        let opts_default = AssemblyOptions::default();
        let opts = AssemblyOptions {
            volume_degree: r
                .take_parsed("volume_degree")?
                .unwrap_or(opts_default.volume_degree),
            edge_degree: r.take_parsed("edge_degree")?.unwrap_or(opts_default.edge_degree),
        };

        let out_dir = PathBuf::from(r.take("out").unwrap_or_else(|| "out".to_string()));
        let seed = r.take_parsed::<u64>("seed")?.unwrap_or(0);
        r.finish()?;

        let case = base.map(|c| ManufacturedCase {
            params,
            eta: solver.eta,
            grids: grids.clone(),
            n_ref,
            ..c
        });

        Ok(RunConfig {
            case,
            params,
            solver,
            grids,
            n_ref,
            out_dir,
            opts,
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(text: &str) -> BTreeMap<String, String> {
        parse_key_values(text).unwrap()
    }

    #[test]
    fn preset_round_trip() {
        let cfg = RunConfig::from_keys(keys("preset = ex1")).unwrap();
        assert_eq!(cfg.params.mu, 1.2);
        assert_eq!(cfg.params.alpha, 2.0);
        assert_eq!(cfg.params.kappa, 0.0);
        assert_eq!(cfg.grids, vec![5, 10, 15, 20, 25, 30]);
        assert_eq!(cfg.n_ref, 160);
        assert_eq!(cfg.solver.eta, 1.0);
        assert!(cfg.case.is_some());

        let cfg3 = RunConfig::from_keys(keys("preset = ex3")).unwrap();
        assert_eq!(cfg3.params.r, 4.0);
        assert_eq!(cfg3.params.q, 3.0);
        assert_eq!(cfg3.solver.eta, 0.8);
        assert_eq!(cfg3.n_ref, 192);
    }

    #[test]
    fn overrides_apply_on_top_of_preset() {
        let cfg = RunConfig::from_keys(keys(
            "preset = ex2\nmu = 0.9\ngrids = 4, 8\nn_ref = 32\neta = 0.5\nseed = 7",
        ))
        .unwrap();
        assert_eq!(cfg.params.mu, 0.9);
        assert_eq!(cfg.params.beta, 2.0);
        assert_eq!(cfg.grids, vec![4, 8]);
        assert_eq!(cfg.n_ref, 32);
        assert_eq!(cfg.solver.eta, 0.5);
        assert_eq!(cfg.seed, 7);
        let case = cfg.case.unwrap();
        assert_eq!(case.params.mu, 0.9);
        assert_eq!(case.eta, 0.5);
    }

    #[test]
    fn unknown_key_is_named_in_the_error() {
        let err = RunConfig::from_keys(keys("preset = ex1\nmw = 1.0")).unwrap_err();
        assert!(err.to_string().contains("mw"), "{err}");
    }

    #[test]
    fn duplicate_and_malformed_lines_rejected() {
        assert!(parse_key_values("a = 1\na = 2").is_err());
        assert!(parse_key_values("just words").is_err());
        assert!(parse_key_values(" = 3").is_err());
        assert!(parse_key_values("# comment\n\nkey = v").is_ok());
    }

    #[test]
    fn custom_case_requires_physics_keys() {
        assert!(RunConfig::from_keys(keys("mu = 1.0")).is_err());
        let cfg = RunConfig::from_keys(keys(
            "mu = 1.0\nbeta = 1.0\nr = 3\nfriction_a = 2.0\nfriction_b = 1.0\nfriction_rho = 1.0",
        ))
        .unwrap();
        assert!(cfg.case.is_none());
        assert_eq!(cfg.grids, vec![10]);
        assert_eq!(cfg.n_ref, 40);
    }

    #[test]
    fn invalid_values_are_rejected_with_the_key_name() {
        let err = RunConfig::from_keys(keys("preset = ex1\nmu = fast")).unwrap_err();
        assert!(err.to_string().contains("mu"), "{err}");
        assert!(RunConfig::from_keys(keys("preset = ex1\nmu = -1")).is_err());
        assert!(RunConfig::from_keys(keys("preset = ex4")).is_err());
    }
}
