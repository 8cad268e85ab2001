//! Sweep configuration: a flat `key = value` file.
//!
//! Repeated keys and comma-separated values both extend a list. A value may
//! also be a range, `lin:a:b:n` or `log:a:b:n`, giving `n` points from `a` to
//! `b` inclusive. Integer keys round range points and drop duplicates.
//! `theta` additionally accepts `ell` and `one`. Lines starting with `#` are
//! comments.
//!
//! Keys: `m`, `ell`, `kappa`, `sigma`, `q`, `theta`, plus the couplings
//! `alpha` (sets `m = round(alpha ell)`) and `c` (sets
//! `q = ln sigma / ell - c / sqrt(ell m)`), and the scalars `format`,
//! `output`, `seed`, `runs`, `step_cap`.

use std::path::PathBuf;
use std::str::FromStr;

use qlab::asymptotics::q_on_threshold_scale;
use qlab::ModelParams;

use crate::output::Format;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}, field `{field}`: {reason}")]
pub struct ConfigError {
    /// 1-based; 0 for errors not tied to a line.
    pub line: usize,
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    fn new(line: usize, field: &str, reason: impl Into<String>) -> Self {
        ConfigError {
            line,
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Theta {
    Fixed(u64),
    Ell,
}

impl Theta {
    pub fn resolve(self, ell: u64) -> u64 {
        match self {
            Theta::Fixed(t) => t,
            Theta::Ell => ell,
        }
    }
}

impl FromStr for Theta {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ell" => Ok(Theta::Ell),
            "one" => Ok(Theta::Fixed(1)),
            other => other
                .parse()
                .map(Theta::Fixed)
                .map_err(|_| format!("`{other}` is not an integer, `ell` or `one`")),
        }
    }
}

/// Population sizes are either listed or coupled to `ell`.
#[derive(Clone, Debug, PartialEq)]
pub enum Population {
    Sizes(Vec<usize>),
    Ratio(Vec<f64>),
}

/// Mutation probabilities are either listed or placed on the threshold scale.
#[derive(Clone, Debug, PartialEq)]
pub enum Mutation {
    Probabilities(Vec<f64>),
    Offsets(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub population: Population,
    pub ell: Vec<u64>,
    pub kappa: Vec<u32>,
    pub sigma: Vec<f64>,
    pub mutation: Mutation,
    pub theta: Vec<Theta>,
    pub format: Format,
    pub output: Option<PathBuf>,
    pub seed: u64,
    /// Lumped-simulator runs per point; 0 disables simulation.
    pub runs: usize,
    pub step_cap: u64,
}

/// One generated grid point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub params: ModelParams,
    pub c: Option<f64>,
    pub alpha: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Spacing {
    Lin,
    Log,
}

fn parse_range(line: usize, field: &str, spec: &str) -> Result<Option<Vec<f64>>, ConfigError> {
    let parts: Vec<&str> = spec.split(':').collect();
    let spacing = match parts[0] {
        "lin" => Spacing::Lin,
        "log" => Spacing::Log,
        _ => return Ok(None),
    };
    if parts.len() != 4 {
        return Err(ConfigError::new(line, field, format!("range `{spec}` needs the form {}:a:b:n", parts[0])));
    }
    let bound = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| ConfigError::new(line, field, format!("range bound `{s}` is not a finite number")))
    };
    let (a, b) = (bound(parts[1])?, bound(parts[2])?);
    let n: usize = parts[3]
        .trim()
        .parse()
        .map_err(|_| ConfigError::new(line, field, format!("range count `{}` is not a nonnegative integer", parts[3])))?;
    if spacing == Spacing::Log && !(a > 0.0 && b > 0.0) {
        return Err(ConfigError::new(line, field, "log range bounds must be positive"));
    }
    let at = |k: usize| {
        if n == 1 {
            return a;
        }
        if k == n - 1 {
            return b;
        }
        let t = k as f64 / (n - 1) as f64;
        match spacing {
            Spacing::Lin => a + (b - a) * t,
            Spacing::Log => (a.ln() + (b.ln() - a.ln()) * t).exp(),
        }
    };
    Ok(Some((0..n).map(at).collect()))
}

pub(crate) fn parse_floats(line: usize, field: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    let mut out = Vec::new();
    for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some(range) = parse_range(line, field, item)? {
            out.extend(range);
        } else {
            let x: f64 = item
                .parse()
                .map_err(|_| ConfigError::new(line, field, format!("`{item}` is not a number")))?;
            out.push(x);
        }
    }
    Ok(out)
}

fn parse_ints<T: TryFrom<u64>>(line: usize, field: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    let mut out = Vec::new();
    for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let raw: Vec<u64> = if let Some(range) = parse_range(line, field, item)? {
            let mut r: Vec<u64> = Vec::with_capacity(range.len());
            for x in range {
                let k = x.round();
                if k < 0.0 || k > u64::MAX as f64 {
                    return Err(ConfigError::new(line, field, format!("range point {x} is not a nonnegative integer")));
                }
                if r.last() != Some(&(k as u64)) {
                    r.push(k as u64);
                }
            }
            r
        } else {
            vec![item
                .parse()
                .map_err(|_| ConfigError::new(line, field, format!("`{item}` is not a nonnegative integer")))?]
        };
        for k in raw {
            out.push(
                T::try_from(k).map_err(|_| ConfigError::new(line, field, format!("{k} is out of range")))?,
            );
        }
    }
    Ok(out)
}

fn parse_scalar<T: FromStr>(line: usize, field: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| ConfigError::new(line, field, format!("cannot parse `{value}`")))
}

#[derive(Default)]
struct Raw {
    m: Option<Vec<usize>>,
    alpha: Option<Vec<f64>>,
    ell: Option<Vec<u64>>,
    kappa: Option<Vec<u32>>,
    sigma: Option<Vec<f64>>,
    q: Option<Vec<f64>>,
    c: Option<Vec<f64>>,
    theta: Option<Vec<Theta>>,
    format: Option<Format>,
    output: Option<PathBuf>,
    seed: Option<u64>,
    runs: Option<usize>,
    step_cap: Option<u64>,
}

fn extend<T>(slot: &mut Option<Vec<T>>, items: Vec<T>) {
    slot.get_or_insert_with(Vec::new).extend(items);
}

fn set_once<T>(slot: &mut Option<T>, value: T, line: usize, field: &str) -> Result<(), ConfigError> {
    if slot.is_some() {
        return Err(ConfigError::new(line, field, "may be given only once"));
    }
    *slot = Some(value);
    Ok(())
}

fn require<T>(v: Option<T>, field: &str) -> Result<T, ConfigError> {
    v.ok_or_else(|| ConfigError::new(0, field, "missing"))
}

impl FromStr for SweepConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        let mut raw = Raw::default();
        for (idx, full) in text.lines().enumerate() {
            let line = idx + 1;
            let content = full.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| ConfigError::new(line, content, "expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "m" => extend(&mut raw.m, parse_ints(line, key, value)?),
                "alpha" => extend(&mut raw.alpha, parse_floats(line, key, value)?),
                "ell" => extend(&mut raw.ell, parse_ints(line, key, value)?),
                "kappa" => extend(&mut raw.kappa, parse_ints(line, key, value)?),
                "sigma" => extend(&mut raw.sigma, parse_floats(line, key, value)?),
                "q" => extend(&mut raw.q, parse_floats(line, key, value)?),
                "c" => extend(&mut raw.c, parse_floats(line, key, value)?),
                "theta" => {
                    let mut items = Vec::new();
                    for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                        match item {
                            "ell" | "one" => items.push(item.parse().expect("keyword")),
                            _ => items.extend(parse_ints::<u64>(line, key, item)?.into_iter().map(Theta::Fixed)),
                        }
                    }
                    extend(&mut raw.theta, items);
                }
                "format" => set_once(&mut raw.format, parse_scalar(line, key, value)?, line, key)?,
                "output" => set_once(&mut raw.output, PathBuf::from(value), line, key)?,
                "seed" => set_once(&mut raw.seed, parse_scalar(line, key, value)?, line, key)?,
                "runs" => set_once(&mut raw.runs, parse_scalar(line, key, value)?, line, key)?,
                "step_cap" => set_once(&mut raw.step_cap, parse_scalar(line, key, value)?, line, key)?,
                other => return Err(ConfigError::new(line, other, "unknown key")),
            }
        }
        let population = match (raw.m, raw.alpha) {
            (Some(m), None) => Population::Sizes(m),
            (None, Some(a)) => Population::Ratio(a),
            (None, None) => return Err(ConfigError::new(0, "m", "missing; give `m` or `alpha`")),
            (Some(_), Some(_)) => return Err(ConfigError::new(0, "alpha", "conflicts with `m`")),
        };
        let mutation = match (raw.q, raw.c) {
            (Some(q), None) => Mutation::Probabilities(q),
            (None, Some(c)) => Mutation::Offsets(c),
            (None, None) => return Err(ConfigError::new(0, "q", "missing; give `q` or `c`")),
            (Some(_), Some(_)) => return Err(ConfigError::new(0, "c", "conflicts with `q`")),
        };
        Ok(SweepConfig {
            population,
            ell: require(raw.ell, "ell")?,
            kappa: raw.kappa.unwrap_or_else(|| vec![2]),
            sigma: require(raw.sigma, "sigma")?,
            mutation,
            theta: raw.theta.unwrap_or_else(|| vec![Theta::Fixed(1)]),
            format: raw.format.unwrap_or_default(),
            output: raw.output,
            seed: raw.seed.unwrap_or(0),
            runs: raw.runs.unwrap_or(0),
            step_cap: raw.step_cap.unwrap_or(qlab::simulator::DEFAULT_STEP_CAP),
        })
    }
}

impl SweepConfig {
    /// Grid points in the order sigma, kappa, ell, m, theta, q (last varies
    /// fastest). Invalid points are logged and skipped.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &sigma in &self.sigma {
            for &kappa in &self.kappa {
                for &ell in &self.ell {
                    let sizes: Vec<(usize, Option<f64>)> = match &self.population {
                        Population::Sizes(ms) => ms.iter().map(|&m| (m, None)).collect(),
                        Population::Ratio(alphas) => alphas
                            .iter()
                            .map(|&a| ((a * ell as f64).round().max(0.0) as usize, Some(a)))
                            .collect(),
                    };
                    for &(m, alpha) in &sizes {
                        for &theta in &self.theta {
                            let theta = theta.resolve(ell);
                            let qs: Vec<(f64, Option<f64>)> = match &self.mutation {
                                Mutation::Probabilities(qs) => qs.iter().map(|&q| (q, None)).collect(),
                                Mutation::Offsets(cs) => cs
                                    .iter()
                                    .map(|&c| (q_on_threshold_scale(sigma, ell, m.max(1), c), Some(c)))
                                    .collect(),
                            };
                            for (q, c) in qs {
                                match ModelParams::new(m, ell, kappa, sigma, q, theta) {
                                    Ok(params) => out.push(SweepPoint { params, c, alpha }),
                                    Err(e) => log::warn!(
                                        "skipping point m={m} ell={ell} kappa={kappa} sigma={sigma} q={q} theta={theta}: {e}"
                                    ),
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_ranges_and_repeats() {
        let cfg: SweepConfig = "# grid\nm = 10, 20\nm = log:100:1600:5\nell = 4\nsigma = 2\nq = lin:0:0.2:3\ntheta = one, ell\n"
            .parse()
            .unwrap();
        assert_eq!(cfg.population, Population::Sizes(vec![10, 20, 100, 200, 400, 800, 1600]));
        assert_eq!(cfg.mutation, Mutation::Probabilities(vec![0.0, 0.1, 0.2]));
        assert_eq!(cfg.theta, vec![Theta::Fixed(1), Theta::Ell]);
        assert_eq!(cfg.kappa, vec![2]);
        assert_eq!(cfg.points().len(), 7 * 3 * 2);
    }

    #[test]
    fn errors_name_line_and_field() {
        let err = "m = 10\nell = 4\nsigma = two\n".parse::<SweepConfig>().unwrap_err();
        assert_eq!((err.line, err.field.as_str()), (3, "sigma"));
        let err = "m = 10\nbogus = 1\n".parse::<SweepConfig>().unwrap_err();
        assert_eq!((err.line, err.field.as_str()), (2, "bogus"));
        let err = "m = 10\nell = 4\nsigma = 2\nq = log:0:1:3\n".parse::<SweepConfig>().unwrap_err();
        assert_eq!((err.line, err.field.as_str()), (4, "q"));
        let err = "m = 10\nell = 4\nsigma = 2\n".parse::<SweepConfig>().unwrap_err();
        assert_eq!(err.field, "q");
    }

    #[test]
    fn couplings() {
        let cfg: SweepConfig = "alpha = 25\nell = 4\nsigma = 2\nc = 1\n".parse().unwrap();
        let pts = cfg.points();
        assert_eq!(pts.len(), 1);
        let p = pts[0].params;
        assert_eq!(p.m, 100);
        assert!((p.q - (2f64.ln() / 4.0 - 1.0 / 20.0)).abs() < 1e-15);
        assert_eq!((pts[0].alpha, pts[0].c), (Some(25.0), Some(1.0)));
    }

    #[test]
    fn invalid_points_are_skipped() {
        let cfg: SweepConfig = "m = 0, 5\nell = 2\nsigma = 2\nq = 0.1, 1.5\ntheta = 3\n".parse().unwrap();
        assert!(cfg.points().is_empty());
        let cfg: SweepConfig = "m = 0, 5\nell = 3\nsigma = 2\nq = 0.1, 1.5\ntheta = 3\n".parse().unwrap();
        assert_eq!(cfg.points().len(), 1);
    }

    #[test]
    fn empty_range_gives_no_points() {
        let cfg: SweepConfig = "m = 10\nell = 4\nsigma = 2\nc = lin:0.8:1.4:0\n".parse().unwrap();
        assert!(cfg.points().is_empty());
    }
}
