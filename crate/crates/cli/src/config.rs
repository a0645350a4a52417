//! Key-value run configuration: `key = value` lines, `#` comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gsrecon::basis::SplineBasis;
use gsrecon::forward::MachineParams;
use gsrecon::inverse::RegularizationConfig;
use gsrecon::mesh::Point;
use gsrecon::twin::{DeskGeometry, StatsConfig};

use crate::CliError;

/// Every key the tool understands, with its default.
const DEFAULTS: &[(&str, &str)] = &[
    ("r0", "3.0"),
    ("b0", "3.0"),
    ("ip", "2e6"),
    ("mesh", ""),
    ("cells", "40"),
    ("half_width", "1.1"),
    ("limiter_radius", "1.0"),
    ("elongation", "1.6"),
    ("vacuum", "-0.015"),
    ("n_chords", "7"),
    ("chords", ""),
    ("profiles", "reference"),
    ("basis_m", "8"),
    ("basis_degree", "3"),
    ("epsilon", "5e-2"),
    ("epsilon_ne", "1e-2"),
    ("alpha_scale", "1e19"),
    ("sigma_mag", ""),
    ("sigma_polar", ""),
    ("sigma_inter", ""),
    ("tol", "1e-6"),
    ("max_iter", "30"),
    ("realtime_iterations", "2"),
    ("internal", "false"),
    ("seed", "20090901"),
    ("noise_rate", "0.01"),
    ("replicates", "200"),
    ("epsilons", "1e-2,1e-1,1"),
    ("ne_lcurve", "1e-6,1e2,33"),
    ("ab_lcurve", "1e-5,1,11"),
    ("output", "out"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileChoice {
    Reference,
    Zero,
}

/// `(lo, hi, n)` of a log-spaced weight grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub machine: MachineParams,
    pub mesh_file: Option<PathBuf>,
    pub geometry: DeskGeometry,
    pub chords: Option<Vec<(Point, Point)>>,
    pub profiles: ProfileChoice,
    pub basis_m: usize,
    pub basis_degree: usize,
    pub regularization: RegularizationConfig,
    pub sigma_mag: Option<f64>,
    pub sigma_polar: Option<f64>,
    pub sigma_inter: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub realtime_iterations: usize,
    pub internal: bool,
    pub seed: u64,
    pub noise_rate: f64,
    pub replicates: usize,
    pub epsilons: Vec<f64>,
    pub ne_lcurve: GridSpec,
    pub ab_lcurve: GridSpec,
    pub output: PathBuf,
    /// Resolved key-value pairs, echoed into the run manifest.
    resolved: BTreeMap<String, String>,
}

fn input(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

fn parse_lines(text: &str, origin: &str, into: &mut BTreeMap<String, String>) -> Result<(), CliError> {
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| input(format!("{origin}:{}: expected `key = value`, found `{line}`", n + 1)))?;
        set(into, k.trim(), v.trim(), &format!("{origin}:{}", n + 1))?;
    }
    Ok(())
}

fn set(into: &mut BTreeMap<String, String>, key: &str, value: &str, origin: &str) -> Result<(), CliError> {
    if !DEFAULTS.iter().any(|(k, _)| *k == key) {
        return Err(input(format!("{origin}: unknown key `{key}`")));
    }
    into.insert(key.to_string(), value.to_string());
    Ok(())
}

impl RunConfig {
    /// Defaults, then the file, then `key=value` overrides.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut kv: BTreeMap<String, String> = DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| input(format!("cannot read config {}: {e}", path.display())))?;
            parse_lines(&text, &path.display().to_string(), &mut kv)?;
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| input(format!("override `{o}` is not `key=value`")))?;
            set(&mut kv, k.trim(), v.trim(), "--set")?;
        }
        Self::from_map(kv)
    }

    fn from_map(kv: BTreeMap<String, String>) -> Result<Self, CliError> {
        let raw = |k: &str| kv.get(k).map(String::as_str).unwrap_or("");
        let num = |k: &str| -> Result<f64, CliError> {
            raw(k)
                .parse::<f64>()
                .map_err(|_| input(format!("`{k}` must be a number, found `{}`", raw(k))))
        };
        let count = |k: &str| -> Result<usize, CliError> {
            raw(k)
                .parse::<usize>()
                .map_err(|_| input(format!("`{k}` must be a non-negative integer, found `{}`", raw(k))))
        };
        let opt = |k: &str| -> Result<Option<f64>, CliError> {
            if raw(k).is_empty() {
                Ok(None)
            } else {
                num(k).map(Some)
            }
        };
        let list = |k: &str| -> Result<Vec<f64>, CliError> {
            raw(k)
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| input(format!("`{k}`: cannot parse `{s}`")))
                })
                .collect()
        };
        let grid = |k: &str| -> Result<GridSpec, CliError> {
            match list(k)?.as_slice() {
                &[lo, hi, n] if lo > 0.0 && hi > lo && n >= 3.0 && n.fract() == 0.0 => {
                    Ok(GridSpec { lo, hi, n: n as usize })
                }
                _ => Err(input(format!(
                    "`{k}` must be `lo,hi,n` with 0 < lo < hi and integer n >= 3"
                ))),
            }
        };

        let mesh_file = match raw("mesh") {
            "" => None,
            p => {
                let path = PathBuf::from(p);
                if !path.is_file() {
                    return Err(input(format!("mesh file {} does not exist", path.display())));
                }
                Some(path)
            }
        };
        let chords = match raw("chords") {
            "" => None,
            s => Some(
                s.split(';')
                    .map(|c| {
                        let v: Vec<f64> = c
                            .split_whitespace()
                            .map(|t| t.parse::<f64>())
                            .collect::<Result<_, _>>()
                            .map_err(|_| input(format!("chord `{c}`: cannot parse")))?;
                        match v.as_slice() {
                            &[r1, z1, r2, z2] => Ok((Point::new(r1, z1), Point::new(r2, z2))),
                            _ => Err(input(format!("chord `{c}` needs `r1 z1 r2 z2`"))),
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        };
        let profiles = match raw("profiles") {
            "reference" => ProfileChoice::Reference,
            "zero" => ProfileChoice::Zero,
            other => {
                return Err(input(format!(
                    "`profiles` must be `reference` or `zero`, found `{other}`"
                )))
            }
        };
        let internal = match raw("internal") {
            "true" | "1" | "yes" => true,
            "false" | "0" | "no" => false,
            other => return Err(input(format!("`internal` must be true or false, found `{other}`"))),
        };
        let machine = MachineParams {
            r0: num("r0")?,
            b0: num("b0")?,
            ip: num("ip")?,
            mu0: gsrecon::fem::MU0,
        };
        machine.validate().map_err(|e| input(e.to_string()))?;
        let geometry = DeskGeometry {
            cells: count("cells")?,
            r0: machine.r0,
            half_width: num("half_width")?,
            limiter_radius: num("limiter_radius")?,
            elongation: num("elongation")?,
            ip: machine.ip,
            b0: machine.b0,
            vacuum: num("vacuum")?,
            n_chords: count("n_chords")?,
        };
        let regularization = RegularizationConfig {
            epsilon: num("epsilon")?,
            epsilon_ne: num("epsilon_ne")?,
            alpha_scale: num("alpha_scale")?,
        };
        regularization.validate().map_err(|e| input(e.to_string()))?;
        let cfg = Self {
            machine,
            mesh_file,
            geometry,
            chords,
            profiles,
            basis_m: count("basis_m")?,
            basis_degree: count("basis_degree")?,
            regularization,
            sigma_mag: opt("sigma_mag")?,
            sigma_polar: opt("sigma_polar")?,
            sigma_inter: opt("sigma_inter")?,
            tol: num("tol")?,
            max_iter: count("max_iter")?,
            realtime_iterations: count("realtime_iterations")?,
            internal,
            seed: raw("seed")
                .parse()
                .map_err(|_| input(format!("`seed` must be an unsigned integer, found `{}`", raw("seed"))))?,
            noise_rate: num("noise_rate")?,
            replicates: count("replicates")?,
            epsilons: list("epsilons")?,
            ne_lcurve: grid("ne_lcurve")?,
            ab_lcurve: grid("ab_lcurve")?,
            output: PathBuf::from(raw("output")),
            resolved: kv.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if !(self.tol > 0.0) || self.max_iter == 0 || self.realtime_iterations == 0 {
            return Err(input("tol, max_iter and realtime_iterations must be positive"));
        }
        if !(self.noise_rate >= 0.0) {
            return Err(input("noise_rate must be non-negative"));
        }
        if self.epsilons.iter().any(|e| !(*e > 0.0)) {
            return Err(input("every entry of `epsilons` must be positive"));
        }
        if [self.sigma_mag, self.sigma_polar, self.sigma_inter]
            .iter()
            .flatten()
            .any(|s| !(*s > 0.0))
        {
            return Err(input("sigma overrides must be positive"));
        }
        if self.mesh_file.is_none()
            && (self.geometry.cells == 0 || !(self.geometry.half_width > self.geometry.limiter_radius))
        {
            return Err(input("generated mesh needs cells > 0 and half_width > limiter_radius"));
        }
        self.basis().map(|_| ())
    }

    pub fn basis(&self) -> Result<SplineBasis, CliError> {
        SplineBasis::open_uniform(self.basis_m, self.basis_degree, true).map_err(|e| input(e.to_string()))
    }

    pub fn stats(&self) -> StatsConfig {
        StatsConfig {
            n_replicates: self.replicates,
            noise_rate: self.noise_rate,
            master_seed: self.seed,
            regularization: self.regularization,
            ..StatsConfig::default()
        }
    }

    /// Resolved configuration as `key = value` lines.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.resolved {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let cfg = RunConfig::resolve(None, &[]).unwrap();
        assert_eq!(cfg.max_iter, 30);
        assert_eq!(cfg.realtime_iterations, 2);
        assert_eq!(cfg.epsilons, vec![1e-2, 1e-1, 1.0]);
        assert!(cfg.echo().contains("tol = 1e-6"));
    }

    #[test]
    fn overrides_win_over_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# desk run\nepsilon = 1e-3\nreplicates = 10  # short\n").unwrap();
        let cfg = RunConfig::resolve(Some(&path), &["epsilon=2e-3".into()]).unwrap();
        assert_eq!(cfg.regularization.epsilon, 2e-3);
        assert_eq!(cfg.replicates, 10);
    }

    #[test]
    fn bad_input_is_an_input_error() {
        for o in [
            "nope=1",
            "tol=0",
            "epsilon=abc",
            "mesh=/does/not/exist",
            "ne_lcurve=1,0.1,5",
            "chords=1 2 3",
        ] {
            assert!(
                matches!(RunConfig::resolve(None, &[o.into()]), Err(CliError::Input(_))),
                "{o}"
            );
        }
    }

    #[test]
    fn chord_list_parses() {
        let cfg = RunConfig::resolve(None, &["chords=2.5 -1 2.5 1; 3 -1 3.2 1".into()]).unwrap();
        let c = cfg.chords.unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].1, Point::new(3.2, 1.0));
    }
}
