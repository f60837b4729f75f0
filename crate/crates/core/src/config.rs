//! Flat `key = value` run configuration: file parsing, flag overrides,
//! validation, and a round-trippable echo of every effective value.
//!
//! Lines may carry `#` comments; unknown keys are rejected by name. Every
//! key has a default, so an empty file (or none at all) is a valid run.

use crate::energy::{BcMode, ModelParams};
use crate::grid::GridParams;
use crate::harness::{InitialCondition, RunConfig};
use crate::stepper::SolverConfig;
use crate::{Error, Result};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// Which initial-profile family to build; parameters live in their own keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Cosine,
    Spinodal,
    SquareDroplet,
    TwoDroplets,
    FusionBand,
    CustomFile,
}

impl InitKind {
    fn as_str(self) -> &'static str {
        match self {
            InitKind::Cosine => "cosine",
            InitKind::Spinodal => "spinodal",
            InitKind::SquareDroplet => "square-droplet",
            InitKind::TwoDroplets => "two-droplets",
            InitKind::FusionBand => "fusion-band",
            InitKind::CustomFile => "custom-file",
        }
    }

    fn parse(v: &str) -> Result<Self> {
        Ok(match v {
            "cosine" => InitKind::Cosine,
            "spinodal" => InitKind::Spinodal,
            "square-droplet" => InitKind::SquareDroplet,
            "two-droplets" => InitKind::TwoDroplets,
            "fusion-band" => InitKind::FusionBand,
            "custom-file" => InitKind::CustomFile,
            _ => {
                return Err(Error::Config(format!(
                    "init expects one of cosine, spinodal, square-droplet, two-droplets, \
                     fusion-band, custom-file; got `{v}`"
                )))
            }
        })
    }
}

/// Every tunable of the binary, with defaults. `echo()` prints each value
/// once in a form `from_text` parses back to an identical struct.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub n: usize,
    pub eps: f64,
    pub kappa: f64,
    pub theta0: f64,
    pub dt: f64,
    pub bc: BcMode,
    pub init: InitKind,
    pub seed: u64,
    pub spinodal_mean: f64,
    pub spinodal_amplitude: f64,
    pub square_center_x: f64,
    pub square_center_y: f64,
    pub square_side: f64,
    pub droplet_radius_left: f64,
    pub droplet_radius_right: f64,
    pub band_height: f64,
    pub band_half_width: f64,
    pub band_gap_half_width: f64,
    pub init_file: Option<PathBuf>,
    pub t_final: f64,
    pub snapshot_times: Vec<f64>,
    pub out: PathBuf,
    pub overwrite: bool,
    pub verify_residuals: bool,
    pub newton_tol: f64,
    pub max_newton: usize,
    pub linear_tol: f64,
    pub fraction_to_boundary: f64,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub grids: Vec<usize>,
}

impl Default for CliConfig {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            n: 128,
            eps: 0.02,
            kappa: 0.02,
            theta0: 3.0,
            dt: 1e-5,
            bc: BcMode::Dynamic,
            init: InitKind::Cosine,
            seed: 1,
            spinodal_mean: 0.2,
            spinodal_amplitude: 0.02,
            square_center_x: 0.5,
            square_center_y: 0.2,
            square_side: 0.3,
            droplet_radius_left: 0.15,
            droplet_radius_right: 0.15,
            band_height: 0.15,
            band_half_width: 0.3,
            band_gap_half_width: 0.05,
            init_file: None,
            t_final: 1e-2,
            snapshot_times: Vec::new(),
            out: PathBuf::from("out"),
            overwrite: false,
            verify_residuals: false,
            newton_tol: s.newton_tol,
            max_newton: s.max_newton,
            linear_tol: s.linear_tol,
            fraction_to_boundary: s.fraction_to_boundary,
            armijo_c: s.armijo_c,
            backtrack_factor: s.backtrack_factor,
            grids: vec![16, 32, 64, 128],
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key} expects a real number, got `{v}`")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key} expects a nonnegative integer, got `{v}`")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key} expects a nonnegative integer, got `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key} expects true or false, got `{v}`"
        ))),
    }
}

fn parse_list<T>(v: &str, one: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(one)
        .collect()
}

impl CliConfig {
    /// File (if any) under flag overrides, then validation.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match file {
            Some(p) => fs::read_to_string(p)?,
            None => String::new(),
        };
        Self::from_text(&text, overrides)
    }

    pub fn from_text(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(head, _)| head).trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    idx + 1
                ))
            })?;
            cfg.apply(k.trim(), v.trim())?;
        }
        for (k, v) in overrides {
            cfg.apply(k.trim(), v.trim())?;
        }
        cfg.finish()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "N" => self.n = parse_usize(key, v)?,
            "eps" => self.eps = parse_f64(key, v)?,
            "kappa" => self.kappa = parse_f64(key, v)?,
            "theta0" => self.theta0 = parse_f64(key, v)?,
            "dt" => self.dt = parse_f64(key, v)?,
            "bc" => {
                self.bc = match v {
                    "dynamic" => BcMode::Dynamic,
                    "neumann" => BcMode::Neumann,
                    _ => {
                        return Err(Error::Config(format!(
                            "bc expects dynamic or neumann, got `{v}`"
                        )))
                    }
                }
            }
            "init" => self.init = InitKind::parse(v)?,
            "seed" => self.seed = parse_u64(key, v)?,
            "spinodal_mean" => self.spinodal_mean = parse_f64(key, v)?,
            "spinodal_amplitude" => self.spinodal_amplitude = parse_f64(key, v)?,
            "square_center_x" => self.square_center_x = parse_f64(key, v)?,
            "square_center_y" => self.square_center_y = parse_f64(key, v)?,
            "square_side" => self.square_side = parse_f64(key, v)?,
            "droplet_radius_left" => self.droplet_radius_left = parse_f64(key, v)?,
            "droplet_radius_right" => self.droplet_radius_right = parse_f64(key, v)?,
            "band_height" => self.band_height = parse_f64(key, v)?,
            "band_half_width" => self.band_half_width = parse_f64(key, v)?,
            "band_gap_half_width" => self.band_gap_half_width = parse_f64(key, v)?,
            "init_file" => {
                self.init_file = (!v.is_empty()).then(|| PathBuf::from(v));
            }
            "t_final" => self.t_final = parse_f64(key, v)?,
            "snapshot_times" => self.snapshot_times = parse_list(v, |s| parse_f64(key, s))?,
            "out" => self.out = PathBuf::from(v),
            "overwrite" => self.overwrite = parse_bool(key, v)?,
            "verify_residuals" => self.verify_residuals = parse_bool(key, v)?,
            "newton_tol" => self.newton_tol = parse_f64(key, v)?,
            "max_newton" => self.max_newton = parse_usize(key, v)?,
            "linear_tol" => self.linear_tol = parse_f64(key, v)?,
            "fraction_to_boundary" => self.fraction_to_boundary = parse_f64(key, v)?,
            "armijo_c" => self.armijo_c = parse_f64(key, v)?,
            "backtrack_factor" => self.backtrack_factor = parse_f64(key, v)?,
            "grids" => self.grids = parse_list(v, |s| parse_usize(key, s))?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Cross-field validation once all sources are applied.
    fn finish(&self) -> Result<()> {
        self.grid()?;
        self.model_params()?;
        self.solver_config().validate()?;
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return Err(Error::Config(format!(
                "t_final must be positive, got {}",
                self.t_final
            )));
        }
        for &tau in &self.snapshot_times {
            if !(tau.is_finite() && (0.0..=self.t_final).contains(&tau)) {
                return Err(Error::Config(format!(
                    "snapshot_times entry {tau} lies outside [0, {}]",
                    self.t_final
                )));
            }
        }
        if self.init == InitKind::CustomFile && self.init_file.is_none() {
            return Err(Error::Config(
                "init_file must be set when init = custom-file".into(),
            ));
        }
        if self.grids.is_empty() {
            return Err(Error::Config("grids must not be empty".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridParams> {
        GridParams::new(self.n)
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        ModelParams::new(self.eps, self.kappa, self.theta0, self.dt)
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            newton_tol: self.newton_tol,
            max_newton: self.max_newton,
            linear_tol: self.linear_tol,
            fraction_to_boundary: self.fraction_to_boundary,
            armijo_c: self.armijo_c,
            backtrack_factor: self.backtrack_factor,
        }
    }

    pub fn initial_condition(&self) -> Result<InitialCondition> {
        Ok(match self.init {
            InitKind::Cosine => InitialCondition::Cosine,
            InitKind::Spinodal => InitialCondition::Spinodal {
                mean: self.spinodal_mean,
                amplitude: self.spinodal_amplitude,
                seed: self.seed,
            },
            InitKind::SquareDroplet => InitialCondition::SquareDroplet {
                center: (self.square_center_x, self.square_center_y),
                side: self.square_side,
            },
            InitKind::TwoDroplets => InitialCondition::TwoDroplets {
                radius_left: self.droplet_radius_left,
                radius_right: self.droplet_radius_right,
            },
            InitKind::FusionBand => InitialCondition::FusionBand {
                height: self.band_height,
                half_width: self.band_half_width,
                gap_half_width: self.band_gap_half_width,
            },
            InitKind::CustomFile => InitialCondition::CustomFile {
                path: self.init_file.clone().ok_or_else(|| {
                    Error::Config("init_file must be set when init = custom-file".into())
                })?,
            },
        })
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        Ok(RunConfig {
            grid: self.grid()?,
            params: self.model_params()?,
            solver: self.solver_config(),
            ic: self.initial_condition()?,
            mode: self.bc,
            t_final: self.t_final,
            snapshot_times: self.snapshot_times.clone(),
            out_dir: self.out.clone(),
            verify_residuals: self.verify_residuals,
        })
    }

    /// Every effective value, once, as parseable `key = value` lines.
    pub fn echo(&self) -> String {
        fn join<T: std::fmt::Display>(xs: &[T]) -> String {
            xs.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        }
        let mut s = String::from("# effective configuration\n");
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("N", self.n.to_string());
        kv("eps", self.eps.to_string());
        kv("kappa", self.kappa.to_string());
        kv("theta0", self.theta0.to_string());
        kv("dt", self.dt.to_string());
        kv(
            "bc",
            match self.bc {
                BcMode::Dynamic => "dynamic",
                BcMode::Neumann => "neumann",
            }
            .to_string(),
        );
        kv("init", self.init.as_str().to_string());
        kv("seed", self.seed.to_string());
        kv("spinodal_mean", self.spinodal_mean.to_string());
        kv("spinodal_amplitude", self.spinodal_amplitude.to_string());
        kv("square_center_x", self.square_center_x.to_string());
        kv("square_center_y", self.square_center_y.to_string());
        kv("square_side", self.square_side.to_string());
        kv("droplet_radius_left", self.droplet_radius_left.to_string());
        kv(
            "droplet_radius_right",
            self.droplet_radius_right.to_string(),
        );
        kv("band_height", self.band_height.to_string());
        kv("band_half_width", self.band_half_width.to_string());
        kv("band_gap_half_width", self.band_gap_half_width.to_string());
        kv(
            "init_file",
            self.init_file
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        kv("t_final", self.t_final.to_string());
        kv("snapshot_times", join(&self.snapshot_times));
        kv("out", self.out.display().to_string());
        kv("overwrite", self.overwrite.to_string());
        kv("verify_residuals", self.verify_residuals.to_string());
        kv("newton_tol", self.newton_tol.to_string());
        kv("max_newton", self.max_newton.to_string());
        kv("linear_tol", self.linear_tol.to_string());
        kv(
            "fraction_to_boundary",
            self.fraction_to_boundary.to_string(),
        );
        kv("armijo_c", self.armijo_c.to_string());
        kv("backtrack_factor", self.backtrack_factor.to_string());
        kv("grids", join(&self.grids));
        s
    }
}
