//! Flat `key = value` run configuration.
//!
//! Keys are the [`OptimizerConfig`] field names plus the box and grid:
//!
//! ```text
//! # six cells on a periodic rectangle
//! h = 6
//! alpha = 12.5
//! c = 1e4
//! p_max = 500
//! x_min = 0
//! x_max = 1.36
//! y_min = 0
//! y_max = 2.3556
//! nx = 55
//! ny = 96
//! boundary = periodic
//! ```
//!
//! Blank lines and `#` comments are ignored. Unknown or repeated keys are
//! errors. `init` names a phase checkpoint to start from.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{Boundary, GridSpec};
use crate::optimizer::OptimizerConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub optimizer: OptimizerConfig,
    pub grid: GridSpec,
    pub init: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            optimizer: OptimizerConfig::default(),
            grid: GridSpec::square(0.0, 1.0, 64, Boundary::Periodic).expect("valid default grid"),
            init: None,
        }
    }
}

fn value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| Error::Config {
        line,
        message: format!("cannot parse {raw:?} for {key}"),
    })
}

fn flag(line: usize, key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config {
            line,
            message: format!("{key} expects true or false, got {raw:?}"),
        }),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut opt = OptimizerConfig::default();
        let mut init = None;
        let (mut x_min, mut x_max, mut y_min, mut y_max) = (0.0, 1.0, 0.0, 1.0);
        let (mut nx, mut ny): (usize, Option<usize>) = (64, None);
        let mut bc = Boundary::Periodic;
        let mut seen = HashSet::new();

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, val) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected key = value, got {content:?}"),
            })?;
            let (key, val) = (key.trim(), val.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config {
                    line,
                    message: format!("{key} given twice"),
                });
            }
            match key {
                "k" => opt.k = value(line, key, val)?,
                "alpha" => opt.alpha = value(line, key, val)?,
                "h" => opt.h = value(line, key, val)?,
                "c" => opt.c = value(line, key, val)?,
                "gamma0" => opt.gamma0 = value(line, key, val)?,
                "omega" => opt.omega = value(line, key, val)?,
                "eps" => opt.eps = value(line, key, val)?,
                "p_max" => opt.p_max = value(line, key, val)?,
                "seed" => opt.seed = value(line, key, val)?,
                "eig_tol" => opt.eig_tol = value(line, key, val)?,
                "max_expansions" => opt.max_expansions = value(line, key, val)?,
                "max_halvings" => opt.max_halvings = value(line, key, val)?,
                "warm_gamma" => opt.warm_gamma = flag(line, key, val)?,
                "allow_higher_k" => opt.allow_higher_k = flag(line, key, val)?,
                "checkpoint_every" => opt.checkpoint_every = value(line, key, val)?,
                "checkpoint_dir" => opt.checkpoint_dir = Some(PathBuf::from(val)),
                "run_id" => opt.run_id = val.to_string(),
                "init" => init = Some(PathBuf::from(val)),
                "x_min" => x_min = value(line, key, val)?,
                "x_max" => x_max = value(line, key, val)?,
                "y_min" => y_min = value(line, key, val)?,
                "y_max" => y_max = value(line, key, val)?,
                "nx" => nx = value(line, key, val)?,
                "ny" => ny = Some(value(line, key, val)?),
                "boundary" => bc = value(line, key, val)?,
                _ => {
                    return Err(Error::Config {
                        line,
                        message: format!("unknown key {key:?}"),
                    })
                }
            }
        }

        let grid = GridSpec::new((x_min, x_max), (y_min, y_max), nx, ny.unwrap_or(nx), bc)?;
        opt.validate()?;
        Ok(RunConfig {
            optimizer: opt,
            grid,
            init,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Every key with its current value, in a form [`RunConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        let o = &self.optimizer;
        let g = &self.grid;
        let mut s = String::new();
        let _ = writeln!(s, "k = {}", o.k);
        let _ = writeln!(s, "alpha = {:e}", o.alpha);
        let _ = writeln!(s, "h = {}", o.h);
        let _ = writeln!(s, "c = {:e}", o.c);
        let _ = writeln!(s, "gamma0 = {:e}", o.gamma0);
        let _ = writeln!(s, "omega = {:e}", o.omega);
        let _ = writeln!(s, "eps = {:e}", o.eps);
        let _ = writeln!(s, "p_max = {}", o.p_max);
        let _ = writeln!(s, "seed = {}", o.seed);
        let _ = writeln!(s, "eig_tol = {:e}", o.eig_tol);
        let _ = writeln!(s, "max_expansions = {}", o.max_expansions);
        let _ = writeln!(s, "max_halvings = {}", o.max_halvings);
        let _ = writeln!(s, "warm_gamma = {}", o.warm_gamma);
        let _ = writeln!(s, "allow_higher_k = {}", o.allow_higher_k);
        let _ = writeln!(s, "checkpoint_every = {}", o.checkpoint_every);
        if let Some(d) = &o.checkpoint_dir {
            let _ = writeln!(s, "checkpoint_dir = {}", d.display());
        }
        let _ = writeln!(s, "run_id = {}", o.run_id);
        if let Some(p) = &self.init {
            let _ = writeln!(s, "init = {}", p.display());
        }
        let _ = writeln!(s, "x_min = {:e}", g.x0);
        let _ = writeln!(s, "x_max = {:e}", g.x0 + g.width);
        let _ = writeln!(s, "y_min = {:e}", g.y0);
        let _ = writeln!(s, "y_max = {:e}", g.y0 + g.height);
        let _ = writeln!(s, "nx = {}", g.nx);
        let _ = writeln!(s, "ny = {}", g.ny);
        let _ = writeln!(s, "boundary = {}", g.bc);
        s
    }
}
