// SPDX-License-Identifier: Apache-2.0 OR MIT

//! Experiment configuration: a TOML file with sections, every field defaulted.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::halfline_grid::{make_grid, HalfLineGrid, Stretch};
use crate::profiles::{build_profile, heat_evolve, OuterFlow, ShearProfile};

pub const SUBCOMMANDS: [&str; 9] = [
    "profile-check",
    "solve-os",
    "iterate",
    "modes",
    "resolvent-sweep",
    "semigroup",
    "evolve",
    "nonlinear",
    "acceptance",
];

/// A list of values or an evenly spaced (optionally logarithmic) range.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Range {
    List(Vec<f64>),
    Span {
        from: f64,
        to: f64,
        count: usize,
        #[serde(default)]
        log: bool,
    },
}

impl Range {
    pub fn values(&self) -> Result<Vec<f64>> {
        match self {
            Range::List(v) => Ok(v.clone()),
            &Range::Span { from, to, count, log } => {
                if count == 0 || (log && !(from > 0.0 && to > 0.0)) {
                    return Err(Error::invalid("range needs count >= 1 and positive ends when log = true"));
                }
                Ok((0..count)
                    .map(|k| {
                        let s = if count == 1 { 0.0 } else { k as f64 / (count - 1) as f64 };
                        if log {
                            (from.ln() + s * (to.ln() - from.ln())).exp()
                        } else {
                            from + s * (to - from)
                        }
                    })
                    .collect())
            }
        }
    }

    fn describe(&self) -> String {
        match self {
            Range::List(v) => format!("{v:?}"),
            Range::Span { from, to, count, log } => format!("{{from={from:e}, to={to:e}, count={count}, log={log}}}"),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_subcommand")]
    pub subcommand: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_subcommand() -> String {
    "acceptance".into()
}
fn default_seed() -> u64 {
    20240601
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunSection {
    fn default() -> Self {
        Self { subcommand: default_subcommand(), seed: default_seed(), out: default_out() }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    #[serde(default = "default_kind")]
    pub kind: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Heat-flow time applied to the base profile.
    #[serde(default)]
    pub heat_t: f64,
    /// Two-column `Y,U` CSV for `kind = "tabulated"`.
    pub file: Option<PathBuf>,
}

fn default_kind() -> String {
    "exp".into()
}

impl Default for ProfileSection {
    fn default() -> Self {
        Self { kind: default_kind(), params: BTreeMap::new(), heat_t: 0.0, file: None }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_y_max")]
    pub y_max: f64,
    #[serde(default = "default_stretch")]
    pub stretch: String,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_points() -> usize {
    400
}
fn default_y_max() -> f64 {
    40.0
}
fn default_stretch() -> String {
    "tanh".into()
}
fn default_beta() -> f64 {
    3.0
}

impl Default for GridSection {
    fn default() -> Self {
        Self { points: default_points(), y_max: default_y_max(), stretch: default_stretch(), beta: default_beta() }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSection {
    #[serde(default = "default_n")]
    pub n: Range,
    #[serde(default = "default_nu")]
    pub nu: Range,
    #[serde(default = "default_gamma")]
    pub gamma: Range,
    #[serde(default = "default_re_c")]
    pub re_c: Range,
    /// Multiples of the stability-line value `n^{gamma-1}/delta`.
    #[serde(default = "default_im_scale")]
    pub im_scale: Range,
    #[serde(default = "default_tau")]
    pub tau: Range,
}

fn default_n() -> Range {
    Range::List(vec![16.0, 32.0])
}
fn default_nu() -> Range {
    Range::List(vec![1e-3])
}
fn default_gamma() -> Range {
    Range::List(vec![2.0 / 3.0])
}
fn default_re_c() -> Range {
    Range::List(vec![0.0, 0.25, 0.5, 0.75])
}
fn default_im_scale() -> Range {
    Range::List(vec![1.0])
}
fn default_tau() -> Range {
    Range::Span { from: 0.5, to: 5.0, count: 10, log: false }
}

impl Default for ParamSection {
    fn default() -> Self {
        Self {
            n: default_n(),
            nu: default_nu(),
            gamma: default_gamma(),
            re_c: default_re_c(),
            im_scale: default_im_scale(),
            tau: default_tau(),
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSection {
    pub delta: Option<f64>,
    pub delta_tilde: Option<f64>,
    pub delta2: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveSection {
    /// Physical end time.
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default = "default_d")]
    pub d: f64,
    #[serde(default = "default_k0")]
    pub k0: f64,
    /// Initial velocity norm; `None` uses `nu^{1/2 + beta}`.
    pub amplitude: Option<f64>,
    #[serde(default = "default_ensemble")]
    pub ensemble: usize,
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
}

fn default_t_end() -> f64 {
    0.5
}
fn default_dt() -> f64 {
    0.05
}
fn default_n_max() -> usize {
    16
}
fn default_k() -> f64 {
    0.25
}
fn default_d() -> f64 {
    1.0
}
fn default_k0() -> f64 {
    0.1
}
fn default_ensemble() -> usize {
    16
}
fn default_snapshots() -> usize {
    21
}

impl Default for EvolveSection {
    fn default() -> Self {
        Self {
            t_end: default_t_end(),
            dt: default_dt(),
            n_max: default_n_max(),
            k: default_k(),
            d: default_d(),
            k0: default_k0(),
            amplitude: None,
            ensemble: default_ensemble(),
            snapshots: default_snapshots(),
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub profile: ProfileSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub params: ParamSection,
    #[serde(default)]
    pub thresholds: ThresholdSection,
    #[serde(default)]
    pub evolve: EvolveSection,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ExperimentConfig {
    /// Parses and validates; errors carry the 1-based line of the offending field.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config {
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
            msg: e.message().to_string(),
        })?;
        cfg.validate(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    fn validate(&self, text: &str) -> Result<()> {
        let at = |key: &str| {
            text.lines()
                .position(|l| l.trim_start().starts_with(key))
                .map(|i| i + 1)
                .unwrap_or(0)
        };
        let bad = |key: &str, msg: String| Err(Error::Config { line: at(key), msg });
        if !SUBCOMMANDS.contains(&self.run.subcommand.as_str()) {
            return bad("subcommand", format!("unknown subcommand `{}`", self.run.subcommand));
        }
        if !matches!(self.profile.kind.as_str(), "exp" | "erf" | "tabulated") {
            return bad("kind", format!("unknown profile kind `{}`", self.profile.kind));
        }
        if self.profile.kind == "tabulated" && self.profile.file.is_none() {
            return bad("kind", "tabulated profile needs `file`".into());
        }
        if !(self.profile.heat_t >= 0.0) {
            return bad("heat_t", "heat_t must be nonnegative".into());
        }
        if self.grid.points < 16 || self.grid.points > 4096 {
            return bad("points", format!("grid points must lie in 16..=4096, got {}", self.grid.points));
        }
        if Stretch::parse(&self.grid.stretch, self.grid.beta).is_err() {
            return bad("stretch", format!("unknown stretch `{}`", self.grid.stretch));
        }
        for (key, r) in [
            ("n", &self.params.n),
            ("nu", &self.params.nu),
            ("gamma", &self.params.gamma),
            ("re_c", &self.params.re_c),
            ("im_scale", &self.params.im_scale),
            ("tau", &self.params.tau),
        ] {
            match r.values() {
                Ok(v) if !v.is_empty() && v.iter().all(|x| x.is_finite()) => {}
                Ok(_) => return bad(key, format!("`{key}` must be a nonempty list of finite numbers")),
                Err(e) => return bad(key, e.to_string()),
            }
        }
        if self.ns()?.iter().any(|&n| n == 0) {
            return bad("n", "Fourier indices must be nonzero integers".into());
        }
        if self.evolve.n_max == 0 || self.evolve.n_max > 64 {
            return bad("n_max", "n_max must lie in 1..=64".into());
        }
        if !(self.evolve.dt > 0.0 && self.evolve.t_end > 0.0) {
            return bad("dt", "dt and t_end must be positive".into());
        }
        Ok(())
    }

    pub fn ns(&self) -> Result<Vec<i64>> {
        self.params.n.values()?.iter().map(|&x| {
            if x.fract() != 0.0 {
                Err(Error::invalid(format!("Fourier index {x} is not an integer")))
            } else {
                Ok(x as i64)
            }
        }).collect()
    }

    pub fn delta(&self) -> f64 {
        self.thresholds.delta.unwrap_or(0.05)
    }

    pub fn delta_tilde(&self) -> f64 {
        self.thresholds.delta_tilde.unwrap_or(0.05)
    }

    pub fn grid(&self) -> Result<Arc<HalfLineGrid>> {
        let s = Stretch::parse(&self.grid.stretch, self.grid.beta)?;
        Ok(Arc::new(make_grid(self.grid.points, self.grid.y_max, s)?))
    }

    pub fn profile(&self, g: &HalfLineGrid) -> Result<ShearProfile> {
        let base = if self.profile.kind == "tabulated" {
            let path = self.profile.file.as_ref().expect("validated");
            let mut rd = csv::Reader::from_path(path)?;
            let (mut ys, mut us) = (Vec::new(), Vec::new());
            for rec in rd.records() {
                let rec = rec?;
                let num = |i: usize| -> Result<f64> {
                    rec.get(i)
                        .and_then(|s| s.trim().parse().ok())
                        .ok_or_else(|| Error::invalid(format!("bad number in {}", path.display())))
                };
                ys.push(num(0)?);
                us.push(num(1)?);
            }
            let p = &self.profile.params;
            let outer = OuterFlow { u0: *p.get("uE0").unwrap_or(&1.0), slope: *p.get("slope").unwrap_or(&0.0) };
            ShearProfile::tabulated(&ys, &us, outer)?
        } else {
            build_profile(&self.profile.kind, &self.profile.params)?
        };
        if self.profile.heat_t > 0.0 {
            heat_evolve(&base, self.profile.heat_t, g)
        } else {
            Ok(base)
        }
    }

    /// The fully resolved configuration as `key = value` lines.
    pub fn manifest(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("version", env!("CARGO_PKG_VERSION").to_string());
        kv("run.subcommand", self.run.subcommand.clone());
        kv("run.seed", self.run.seed.to_string());
        kv("run.out", self.run.out.display().to_string());
        kv("profile.kind", self.profile.kind.clone());
        for (k, v) in &self.profile.params {
            kv(&format!("profile.params.{k}"), format!("{v:.16e}"));
        }
        kv("profile.heat_t", format!("{:.16e}", self.profile.heat_t));
        if let Some(f) = &self.profile.file {
            kv("profile.file", f.display().to_string());
        }
        kv("grid.points", self.grid.points.to_string());
        kv("grid.y_max", format!("{:.16e}", self.grid.y_max));
        kv("grid.stretch", self.grid.stretch.clone());
        kv("grid.beta", format!("{:.16e}", self.grid.beta));
        kv("params.n", self.params.n.describe());
        kv("params.nu", self.params.nu.describe());
        kv("params.gamma", self.params.gamma.describe());
        kv("params.re_c", self.params.re_c.describe());
        kv("params.im_scale", self.params.im_scale.describe());
        kv("params.tau", self.params.tau.describe());
        kv("thresholds.delta", format!("{:.16e}", self.delta()));
        kv("thresholds.delta_tilde", format!("{:.16e}", self.delta_tilde()));
        kv("thresholds.delta2", self.thresholds.delta2.map_or("from-profile".into(), |d| format!("{d:.16e}")));
        let e = &self.evolve;
        kv("evolve.t_end", format!("{:.16e}", e.t_end));
        kv("evolve.dt", format!("{:.16e}", e.dt));
        kv("evolve.n_max", e.n_max.to_string());
        kv("evolve.k", format!("{:.16e}", e.k));
        kv("evolve.d", format!("{:.16e}", e.d));
        kv("evolve.k0", format!("{:.16e}", e.k0));
        kv("evolve.amplitude", e.amplitude.map_or("nu^(1/2+beta)".into(), |a| format!("{a:.16e}")));
        kv("evolve.ensemble", e.ensemble.to_string());
        kv("evolve.snapshots", e.snapshots.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_takes_defaults() {
        let c = ExperimentConfig::parse("").unwrap();
        assert_eq!(c.run.subcommand, "acceptance");
        assert_eq!(c.ns().unwrap(), vec![16, 32]);
        assert_eq!(c.delta(), 0.05);
    }

    #[test]
    fn ranges_expand() {
        let c = ExperimentConfig::parse("[params]\nnu = { from = 1e-4, to = 1e-2, count = 3, log = true }\n").unwrap();
        let v = c.params.nu.values().unwrap();
        assert!((v[1] - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn malformed_config_reports_line() {
        let text = "[run]\nseed = 3\n\n[grid]\npoints = \"many\"\n";
        match ExperimentConfig::parse(text) {
            Err(Error::Config { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::parse("[run]\nsubcommand = \"fly\"\n") {
            Err(Error::Config { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("fly"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(ExperimentConfig::parse("[grid]\nwidth = 3\n"), Err(Error::Config { line: 2, .. })));
    }

    #[test]
    fn manifest_echoes_every_section() {
        let m = ExperimentConfig::parse("[profile]\nkind = \"erf\"\nparams = { t0 = 2.0 }\n").unwrap().manifest();
        for key in ["version =", "profile.kind = erf", "profile.params.t0 =", "grid.points = 400", "evolve.n_max = 16"] {
            assert!(m.contains(key), "{key}\n{m}");
        }
    }
}
