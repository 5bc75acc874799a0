//! Value grammars for the compact command-line specs.

use std::collections::BTreeMap;
use std::path::Path;

use mcnnm::harness::{AdoptionDistribution, NoiseModel, PlanMode, SyntheticSpec};
use mcnnm::{Error, EstimatorSpec};

/// Splits `k=v,k=v` into pairs; keys are lower-cased.
fn key_values(s: &str) -> Result<Vec<(String, String)>, String> {
    s.split(',')
        .filter(|part| !part.trim().is_empty())
        .map(|part| {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| format!("`{part}` is not of the form key=value"))?;
            Ok((k.trim().to_ascii_lowercase(), v.trim().to_string()))
        })
        .collect()
}

fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value `{value}` for `{key}`"))
}

/// `n=..,t=..,rank=..,sigma=..[,rho=..][,scale=..]`. The seed is filled in by
/// the caller.
pub fn parse_synthetic(s: &str) -> Result<SyntheticSpec, String> {
    let mut spec = SyntheticSpec::new(0, 0, 0, 0.0, 0);
    let mut seen = [false; 4];
    for (k, v) in key_values(s)? {
        match k.as_str() {
            "n" => (spec.n, seen[0]) = (number(&k, &v)?, true),
            "t" => (spec.t, seen[1]) = (number(&k, &v)?, true),
            "rank" | "r" => (spec.rank, seen[2]) = (number(&k, &v)?, true),
            "sigma" => (spec.noise_sigma, seen[3]) = (number(&k, &v)?, true),
            "rho" => spec.noise_model = NoiseModel::Ar1 { rho: number(&k, &v)? },
            "scale" => spec.factor_scale = number(&k, &v)?,
            _ => {
                return Err(format!(
                    "unknown synthetic key `{k}` (expected n, t, rank, sigma, rho, scale)"
                ))
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(format!(
            "synthetic spec is missing `{}`",
            ["n", "t", "rank", "sigma"][i]
        ));
    }
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

/// `simultaneous:nt=8[,t0=0.5]` or `staggered:nt=35[,first=16,last=31]`.
pub fn parse_plan(s: &str) -> Result<PlanMode, String> {
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    let mut n_treated = None;
    let mut t0_ratio = 0.5;
    let (mut first, mut last) = (None, None);
    for (k, v) in key_values(rest)? {
        match k.as_str() {
            "nt" | "n_treated" => n_treated = Some(number(&k, &v)?),
            "t0" | "t0_ratio" => t0_ratio = number(&k, &v)?,
            "first" => first = Some(number(&k, &v)?),
            "last" => last = Some(number(&k, &v)?),
            _ => return Err(format!("unknown plan key `{k}`")),
        }
    }
    let n_treated = n_treated.ok_or("plan needs nt=<treated units>")?;
    match kind.trim().to_ascii_lowercase().as_str() {
        "simultaneous" if first.is_none() && last.is_none() => Ok(PlanMode::Simultaneous { n_treated, t0_ratio }),
        "staggered" => {
            let adoption = match (first, last) {
                (None, None) => AdoptionDistribution::LastHalf,
                (Some(first), Some(last)) => AdoptionDistribution::Uniform { first, last },
                _ => return Err("staggered adoption range needs both first and last".into()),
            };
            Ok(PlanMode::Staggered { n_treated, adoption })
        }
        "simultaneous" => Err("first/last apply to staggered plans only".into()),
        other => Err(format!(
            "unknown plan kind `{other}` (expected simultaneous or staggered)"
        )),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SweepKey {
    T0Ratio,
    NTreated,
}

impl SweepKey {
    pub fn name(&self) -> &'static str {
        match self {
            SweepKey::T0Ratio => "t0_ratio",
            SweepKey::NTreated => "n_treated",
        }
    }
}

/// `key=start:stop:count`, `count` evenly spaced values including both ends.
#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub key: SweepKey,
    pub values: Vec<f64>,
}

impl Sweep {
    /// The plan with the swept parameter set to `value`.
    pub fn apply(&self, mode: PlanMode, value: f64) -> Result<PlanMode, Error> {
        match (&self.key, mode) {
            (SweepKey::T0Ratio, PlanMode::Simultaneous { n_treated, .. }) => Ok(PlanMode::Simultaneous {
                n_treated,
                t0_ratio: value,
            }),
            (SweepKey::T0Ratio, PlanMode::Staggered { .. }) => Err(Error::InvalidArgument(
                "t0_ratio sweeps need a simultaneous plan".into(),
            )),
            (SweepKey::NTreated, PlanMode::Simultaneous { t0_ratio, .. }) => Ok(PlanMode::Simultaneous {
                n_treated: value as usize,
                t0_ratio,
            }),
            (SweepKey::NTreated, PlanMode::Staggered { adoption, .. }) => Ok(PlanMode::Staggered {
                n_treated: value as usize,
                adoption,
            }),
        }
    }
}

pub fn parse_sweep(s: &str) -> Result<Sweep, String> {
    let (k, range) = s.split_once('=').ok_or("sweep must look like key=start:stop:count")?;
    let key = match k.trim().to_ascii_lowercase().as_str() {
        "t0_ratio" | "t0" => SweepKey::T0Ratio,
        "n_treated" | "nt" => SweepKey::NTreated,
        other => return Err(format!("cannot sweep `{other}` (expected t0_ratio or n_treated)")),
    };
    let parts: Vec<&str> = range.split(':').collect();
    let [start, stop, count] = parts[..] else {
        return Err("sweep range must be start:stop:count".into());
    };
    let (start, stop): (f64, f64) = (number("start", start)?, number("stop", stop)?);
    let count: usize = number("count", count)?;
    if count == 0 || !start.is_finite() || !stop.is_finite() {
        return Err("sweep needs finite ends and a positive count".into());
    }
    let values: Vec<f64> = if count == 1 {
        vec![start]
    } else {
        (0..count)
            .map(|k| {
                if k + 1 == count {
                    stop
                } else {
                    start + (stop - start) * k as f64 / (count - 1) as f64
                }
            })
            .collect()
    };
    if key == SweepKey::NTreated && values.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
        return Err("n_treated sweep values must be nonnegative integers".into());
    }
    Ok(Sweep { key, values })
}

/// Comma-separated estimator names, without duplicates.
pub fn parse_estimators(s: &str) -> Result<Vec<EstimatorSpec>, String> {
    let mut out: Vec<EstimatorSpec> = Vec::new();
    for name in s.split(',').filter(|n| !n.trim().is_empty()) {
        let spec: EstimatorSpec = name.parse().map_err(|e: Error| e.to_string())?;
        if out.iter().any(|o| o.name() == spec.name()) {
            return Err(format!("estimator `{}` listed twice", spec.name()));
        }
        out.push(spec);
    }
    if out.is_empty() {
        return Err("no estimators given".into());
    }
    Ok(out)
}

/// Reads `key=value` lines; blank lines and `#` comments are skipped.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, Error> {
    let text = std::fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: k as u64 + 1,
            message: format!("expected key=value, got `{line}`"),
        })?;
        out.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(out)
}
