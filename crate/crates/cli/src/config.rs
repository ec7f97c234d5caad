//! Flat key-value configuration with dotted sections.
//!
//! ```text
//! experiment = converge
//! grid.x_min = -16
//! grid.points_per_unit = 64
//! eps.list = 0.125, 0.0625
//! ```
//!
//! Unknown keys are rejected; every violated constraint is reported at once.

use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Simulate,
    Expand,
    Converge,
    ResolventCheck,
    Functional,
    Musiela,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "simulate" => Some(Self::Simulate),
            "expand" => Some(Self::Expand),
            "converge" => Some(Self::Converge),
            "resolvent-check" => Some(Self::ResolventCheck),
            "functional" => Some(Self::Functional),
            "musiela" => Some(Self::Musiela),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Expand => "expand",
            Self::Converge => "converge",
            Self::ResolventCheck => "resolvent-check",
            Self::Functional => "functional",
            Self::Musiela => "musiela",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationChoice {
    SecondDerivative,
    SecondDerivativeShifted,
}

/// Everything an experiment run needs; see [`ExperimentConfig::defaults`].
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub x_min: f64,
    pub x_max: f64,
    pub points_per_unit: usize,
    pub weight: f64,
    pub horizon: f64,
    pub steps: usize,
    pub m: usize,
    pub m_list: Vec<usize>,
    pub p: f64,
    pub eps_value: f64,
    pub eps_list: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub k_factors: usize,
    pub noise_scale: f64,
    pub perturbation: PerturbationChoice,
    pub lambdas: Vec<f64>,
    pub musiela_x0: f64,
    pub arbitrage_eps: Vec<f64>,
    pub maturities: Vec<f64>,
    pub sigma_scale: f64,
    pub u0_scale: f64,
    pub out_dir: PathBuf,
    pub threads: Option<usize>,
    pub write_raw: bool,
}

impl ExperimentConfig {
    pub fn defaults(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            x_min: -16.0,
            x_max: 24.0,
            points_per_unit: 64,
            weight: 1.0,
            horizon: 1.0,
            steps: 16,
            m: 2,
            m_list: vec![1, 2, 3],
            p: 2.0,
            eps_value: 0.125,
            eps_list: (3..=8).map(|j| 2.0_f64.powi(-j)).collect(),
            n_paths: 64,
            seed: 42,
            k_factors: 2,
            noise_scale: 1.0,
            perturbation: PerturbationChoice::SecondDerivative,
            lambdas: vec![1.0, 5.0],
            musiela_x0: 1.0,
            arbitrage_eps: vec![0.05, 0.1],
            maturities: vec![0.5, 1.0, 2.0, 5.0, 10.0],
            sigma_scale: 1.0,
            u0_scale: 1.0,
            out_dir: PathBuf::from("out"),
            threads: None,
            write_raw: false,
        }
    }

    /// Render the full default configuration in the accepted syntax.
    pub fn print_defaults() -> String {
        let d = Self::defaults(ExperimentKind::Converge);
        let join = |v: &[f64]| {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        };
        let join_u = |v: &[usize]| {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        };
        format!(
            "# experiment: simulate | expand | converge | resolvent-check | functional | musiela\n\
             experiment = {}\n\
             grid.x_min = {}\n\
             grid.x_max = {}\n\
             grid.points_per_unit = {}\n\
             space.weight = {}\n\
             time.horizon = {}\n\
             time.steps = {}\n\
             expansion.m = {}\n\
             expansion.m_list = {}\n\
             expansion.p = {}\n\
             eps.value = {}\n\
             eps.list = {}\n\
             mc.paths = {}\n\
             mc.seed = {}\n\
             noise.factors = {}\n\
             noise.scale = {}\n\
             # perturbation.kind: second-derivative | second-derivative-shifted\n\
             perturbation.kind = second-derivative\n\
             resolvent.lambdas = {}\n\
             musiela.x0 = {}\n\
             musiela.arbitrage_eps = {}\n\
             musiela.maturities = {}\n\
             musiela.sigma_scale = {}\n\
             musiela.u0_scale = {}\n\
             output.dir = {}\n\
             output.raw = false\n\
             # threads = 4   (default: SPDE_THREADS or all cores)\n",
            d.experiment.name(),
            d.x_min,
            d.x_max,
            d.points_per_unit,
            d.weight,
            d.horizon,
            d.steps,
            d.m,
            join_u(&d.m_list),
            d.p,
            d.eps_value,
            join(&d.eps_list),
            d.n_paths,
            d.seed,
            d.k_factors,
            d.noise_scale,
            join(&d.lambdas),
            d.musiela_x0,
            join(&d.arbitrage_eps),
            join(&d.maturities),
            d.sigma_scale,
            d.u0_scale,
            d.out_dir.display(),
        )
    }

    /// Parse the flat key-value text, starting from the defaults of the
    /// experiment named inside (or the given fallback).
    pub fn parse(text: &str, fallback: ExperimentKind) -> Result<Self, Vec<String>> {
        let mut pairs = BTreeMap::new();
        let mut errors = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    pairs.insert(k.trim().to_string(), v.trim().to_string());
                }
                None => errors.push(format!("line {}: expected `key = value`", lineno + 1)),
            }
        }
        let experiment = match pairs.get("experiment") {
            Some(s) => match ExperimentKind::parse(s) {
                Some(e) => e,
                None => {
                    errors.push(format!("experiment `{s}` is not one of simulate | expand | converge | resolvent-check | functional | musiela"));
                    fallback
                }
            },
            None => fallback,
        };
        let mut cfg = Self::defaults(experiment);
        for (key, value) in &pairs {
            if key == "experiment" {
                continue;
            }
            if let Err(e) = cfg.apply(key, value) {
                errors.push(e);
            }
        }
        let mut validation = cfg.validation_errors();
        errors.append(&mut validation);
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(errors)
        }
    }

    /// Apply one `key = value` override.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), String> {
        let bad = |what: &str| format!("key `{key}`: cannot parse `{value}` as {what}");
        let parse_f64 = |v: &str| v.parse::<f64>().map_err(|_| bad("a real number"));
        let parse_usize = |v: &str| v.parse::<usize>().map_err(|_| bad("a positive integer"));
        let parse_list = |v: &str| -> Result<Vec<f64>, String> {
            v.split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|_| bad("a comma-separated list of reals")))
                .collect()
        };
        match key {
            "grid.x_min" => self.x_min = parse_f64(value)?,
            "grid.x_max" => self.x_max = parse_f64(value)?,
            "grid.points_per_unit" => self.points_per_unit = parse_usize(value)?,
            "space.weight" => self.weight = parse_f64(value)?,
            "time.horizon" => self.horizon = parse_f64(value)?,
            "time.steps" => self.steps = parse_usize(value)?,
            "expansion.m" => self.m = parse_usize(value)?,
            "expansion.m_list" => {
                self.m_list = value
                    .split(',')
                    .map(|s| s.trim().parse::<usize>().map_err(|_| bad("a list of integers")))
                    .collect::<Result<_, _>>()?;
            }
            "expansion.p" => self.p = parse_f64(value)?,
            "eps.value" => self.eps_value = parse_f64(value)?,
            "eps.list" => self.eps_list = parse_list(value)?,
            "mc.paths" => self.n_paths = parse_usize(value)?,
            "mc.seed" => self.seed = value.parse::<u64>().map_err(|_| bad("a 64-bit seed"))?,
            "noise.factors" => self.k_factors = parse_usize(value)?,
            "noise.scale" => self.noise_scale = parse_f64(value)?,
            "perturbation.kind" => {
                self.perturbation = match value {
                    "second-derivative" => PerturbationChoice::SecondDerivative,
                    "second-derivative-shifted" => PerturbationChoice::SecondDerivativeShifted,
                    _ => return Err(format!(
                        "key `perturbation.kind`: `{value}` is not second-derivative | second-derivative-shifted"
                    )),
                }
            }
            "resolvent.lambdas" => self.lambdas = parse_list(value)?,
            "musiela.x0" => self.musiela_x0 = parse_f64(value)?,
            "musiela.arbitrage_eps" => self.arbitrage_eps = parse_list(value)?,
            "musiela.maturities" => self.maturities = parse_list(value)?,
            "musiela.sigma_scale" => self.sigma_scale = parse_f64(value)?,
            "musiela.u0_scale" => self.u0_scale = parse_f64(value)?,
            "output.dir" => self.out_dir = PathBuf::from(value),
            "output.raw" => {
                self.write_raw = value.parse::<bool>().map_err(|_| bad("true or false"))?
            }
            "threads" => self.threads = Some(parse_usize(value)?),
            _ => return Err(format!("unknown configuration key `{key}`")),
        }
        Ok(())
    }

    /// Every violated constraint, all at once.
    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.x_max > self.x_min) {
            errs.push(format!(
                "grid.x_max must exceed grid.x_min (got [{}, {}])",
                self.x_min, self.x_max
            ));
        }
        if self.points_per_unit == 0 {
            errs.push("grid.points_per_unit must be positive".into());
        }
        if !(self.weight > 0.0) {
            errs.push(format!("space.weight must be positive, got {}", self.weight));
        }
        if !(self.horizon > 0.0) {
            errs.push(format!("time.horizon must be positive, got {}", self.horizon));
        }
        if self.steps == 0 {
            errs.push("time.steps must be positive".into());
        } else {
            // dt must be a whole number of grid spacings.
            let slots = self.horizon / self.steps as f64 * self.points_per_unit as f64;
            if (slots - slots.round()).abs() > 1e-9 || slots < 0.5 {
                errs.push(format!(
                    "time step {} is not a whole number of grid spacings (1/{} units)",
                    self.horizon / self.steps as f64,
                    self.points_per_unit
                ));
            }
        }
        if self.m == 0 {
            errs.push("expansion.m must be at least 1 (m >= 1)".into());
        }
        if self.m_list.iter().any(|&m| m == 0) {
            errs.push("expansion.m_list entries must be at least 1".into());
        }
        if self.p < 1.0 {
            errs.push(format!("expansion.p must be at least 1, got {}", self.p));
        }
        for &e in self.eps_list.iter().chain(std::iter::once(&self.eps_value)) {
            if !(0.0..=1.0).contains(&e) {
                errs.push(format!("eps value {e} violates the constraint eps in [0, 1]"));
            }
        }
        if self.n_paths == 0 {
            errs.push("mc.paths must be positive".into());
        }
        if self.k_factors == 0 {
            errs.push("noise.factors must be positive".into());
        }
        if self.lambdas.iter().any(|&l| l <= 0.0) {
            errs.push("resolvent.lambdas must be positive".into());
        }
        if self.musiela_x0 < 0.0 {
            errs.push(format!("musiela.x0 must be nonnegative, got {}", self.musiela_x0));
        }
        for &e in &self.arbitrage_eps {
            if !(0.0..=1.0).contains(&e) {
                errs.push(format!("eps value {e} violates the constraint eps in [0, 1]"));
            }
        }
        if self.maturities.iter().any(|&x| x < 0.0 || x > self.x_max) {
            errs.push("musiela.maturities must lie in [0, x_max]".into());
        }
        errs
    }

    pub fn n_points(&self) -> usize {
        ((self.x_max - self.x_min) * self.points_per_unit as f64).round() as usize + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_parser() {
        let text = ExperimentConfig::print_defaults();
        let cfg = ExperimentConfig::parse(&text, ExperimentKind::Converge).unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::Converge);
        assert_eq!(cfg.points_per_unit, 64);
        assert_eq!(cfg.eps_list.len(), 6);
    }

    #[test]
    fn invalid_eps_names_the_constraint() {
        let text = "experiment = expand\neps.list = 0.5, 1.5\n";
        let errs = ExperimentConfig::parse(text, ExperimentKind::Expand).unwrap_err();
        assert!(
            errs.iter().any(|e| e.contains("eps in [0, 1]")),
            "missing eps constraint in {errs:?}"
        );
    }

    #[test]
    fn all_violations_reported_at_once() {
        let text = "experiment = converge\n\
                    eps.list = 1.5\n\
                    time.steps = 0\n\
                    space.weight = -1\n\
                    expansion.m = 0\n";
        let errs = ExperimentConfig::parse(text, ExperimentKind::Converge).unwrap_err();
        assert!(errs.len() >= 4, "expected 4+ violations, got {errs:?}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = "experiment = converge\nnot.a.key = 3\n";
        let errs = ExperimentConfig::parse(text, ExperimentKind::Converge).unwrap_err();
        assert!(errs.iter().any(|e| e.contains("unknown configuration key")));
    }
}
