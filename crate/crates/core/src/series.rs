//! Sampled trajectories and their CSV / JSON serialisation.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::spin::{CumulantState, StateFamily, AXES};

/// A scalar observable of the collective state, named as in the CSV header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Observable {
    M(usize),
    Chi(usize, usize),
    Tau(usize, usize, usize),
    /// `⟨S²⟩/S² = Σ m_i² + tr χ`.
    S2Norm,
}

impl Observable {
    pub fn mx() -> Self {
        Observable::M(0)
    }
    pub fn my() -> Self {
        Observable::M(1)
    }
    pub fn mz() -> Self {
        Observable::M(2)
    }
    pub fn chi(i: usize, j: usize) -> Self {
        Observable::Chi(i.min(j), i.max(j))
    }
    pub fn tau(i: usize, j: usize, k: usize) -> Self {
        let mut v = [i, j, k];
        v.sort_unstable();
        Observable::Tau(v[0], v[1], v[2])
    }

    /// Lowest cumulant order at which this observable is defined.
    pub fn order(&self) -> u8 {
        match self {
            Observable::M(_) => 1,
            Observable::Chi(..) | Observable::S2Norm => 2,
            Observable::Tau(..) => 3,
        }
    }

    pub fn value(&self, st: &CumulantState) -> f64 {
        match *self {
            Observable::M(i) => st.m[i],
            Observable::Chi(i, j) => st.chi[i][j],
            Observable::Tau(i, j, k) => st.tau[i][j][k],
            Observable::S2Norm => st.s2_norm(),
        }
    }

    /// Default column set: everything defined at `order`, plus `s2_norm`
    /// from order 2 on.
    pub fn all_at_order(order: u8) -> Vec<Observable> {
        let mut out: Vec<Observable> = (0..3).map(Observable::M).collect();
        if order >= 2 {
            out.extend(crate::spin::PAIRS.iter().map(|&(i, j)| Observable::Chi(i, j)));
        }
        if order >= 3 {
            out.extend(crate::spin::TRIPLES.iter().map(|&(i, j, k)| Observable::Tau(i, j, k)));
        }
        if order >= 2 {
            out.push(Observable::S2Norm);
        }
        out
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Observable::M(i) => write!(f, "m{}", AXES[i]),
            Observable::Chi(i, j) => write!(f, "chi_{}{}", AXES[i], AXES[j]),
            Observable::Tau(i, j, k) => write!(f, "tau_{}{}{}", AXES[i], AXES[j], AXES[k]),
            Observable::S2Norm => write!(f, "s2_norm"),
        }
    }
}

impl FromStr for Observable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let axis = |c: char| {
            AXES.iter()
                .position(|&a| a == c)
                .ok_or_else(|| Error::Config(format!("unknown observable '{s}'")))
        };
        let idx = |rest: &str, n: usize| -> Result<Vec<usize>> {
            if rest.chars().count() != n {
                return Err(Error::Config(format!("unknown observable '{s}'")));
            }
            rest.chars().map(axis).collect()
        };
        if s == "s2_norm" {
            Ok(Observable::S2Norm)
        } else if let Some(rest) = s.strip_prefix("chi_") {
            let v = idx(rest, 2)?;
            Ok(Observable::chi(v[0], v[1]))
        } else if let Some(rest) = s.strip_prefix("tau_") {
            let v = idx(rest, 3)?;
            Ok(Observable::tau(v[0], v[1], v[2]))
        } else if let Some(rest) = s.strip_prefix('m') {
            let v = idx(rest, 1)?;
            Ok(Observable::M(v[0]))
        } else {
            Err(Error::Config(format!("unknown observable '{s}'")))
        }
    }
}

impl Serialize for Observable {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Observable {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    Exact,
    Meanfield,
    Cumulant2,
    Cumulant3,
}

impl Generator {
    /// Cumulant truncation order of a flow generator (`None` for exact).
    pub fn order(&self) -> Option<u8> {
        match self {
            Generator::Exact => None,
            Generator::Meanfield => Some(1),
            Generator::Cumulant2 => Some(2),
            Generator::Cumulant3 => Some(3),
        }
    }

    pub fn for_order(order: u8) -> Result<Self> {
        match order {
            1 => Ok(Generator::Meanfield),
            2 => Ok(Generator::Cumulant2),
            3 => Ok(Generator::Cumulant3),
            _ => Err(Error::InvalidParameter(format!("no flow of order {order}"))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Generator::Exact => "exact",
            Generator::Meanfield => "meanfield",
            Generator::Cumulant2 => "cumulant2",
            Generator::Cumulant3 => "cumulant3",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub generator: Generator,
    /// Atom count; absent for thermodynamic-limit flows.
    pub n: Option<u32>,
    pub omega: f64,
    pub kappa: f64,
    pub state: Option<StateFamily>,
    pub state_label: String,
    pub t_end: f64,
    pub sample_dt: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub diagnostics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub columns: Vec<(Observable, Vec<f64>)>,
    pub meta: SeriesMeta,
}

/// Uniform grid `0, dt, 2dt, …` up to and including `t_end` (within 1e-9 dt).
pub fn sample_grid(t_end: f64, dt: f64) -> Vec<f64> {
    let n = (t_end / dt + 1e-9).floor() as usize;
    (0..=n).map(|k| k as f64 * dt).collect()
}

impl TimeSeries {
    pub fn get(&self, obs: Observable) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(o, _)| *o == obs)
            .map(|(_, v)| v.as_slice())
    }

    pub fn require(&self, obs: Observable) -> Result<&[f64]> {
        self.get(obs)
            .ok_or_else(|| Error::Analysis(format!("series has no column '{obs}'")))
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Analysis("times are not strictly increasing".into()));
        }
        for (o, v) in &self.columns {
            if v.len() != self.times.len() {
                return Err(Error::Analysis(format!(
                    "column '{o}' has {} values for {} times",
                    v.len(),
                    self.times.len()
                )));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for (o, _) in &self.columns {
            out.push(',');
            out.push_str(&o.to_string());
        }
        out.push('\n');
        for (k, t) in self.times.iter().enumerate() {
            out.push_str(&fmt_f64(*t));
            for (_, v) in &self.columns {
                out.push(',');
                out.push_str(&fmt_f64(v[k]));
            }
            out.push('\n');
        }
        out
    }

    /// Parse a CSV written by [`TimeSeries::to_csv`]; `meta` is supplied
    /// separately (usually read from the sidecar file).
    pub fn from_csv(text: &str, meta: SeriesMeta) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("empty CSV".into()))?;
        let mut names = header.split(',');
        if names.next().map(str::trim) != Some("t") {
            return Err(Error::Config("CSV header must start with 't'".into()));
        }
        let obs: Vec<Observable> = names.map(|s| s.trim().parse()).collect::<Result<_>>()?;
        let mut times = Vec::new();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); obs.len()];
        for (ln, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Config(format!("CSV line {}: {e}", ln + 2)))
                })
                .collect::<Result<_>>()?;
            if vals.len() != obs.len() + 1 {
                return Err(Error::Config(format!("CSV line {} has {} fields", ln + 2, vals.len())));
            }
            times.push(vals[0]);
            for (c, v) in vals[1..].iter().enumerate() {
                cols[c].push(*v);
            }
        }
        let ts = TimeSeries {
            times,
            columns: obs.into_iter().zip(cols).collect(),
            meta,
        };
        ts.validate()?;
        Ok(ts)
    }

    /// Write `<stem>.csv` and `<stem>.meta.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        let csv = dir.join(format!("{stem}.csv"));
        let meta = dir.join(format!("{stem}.meta.json"));
        write_atomic(&csv, self.to_csv().as_bytes())?;
        write_atomic(&meta, serde_json::to_string_pretty(&self.meta)?.as_bytes())?;
        Ok((csv, meta))
    }

    pub fn read(dir: &Path, stem: &str) -> Result<Self> {
        let meta: SeriesMeta =
            serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.meta.json")))?)?;
        Self::from_csv(&fs::read_to_string(dir.join(format!("{stem}.csv")))?, meta)
    }
}

/// Fixed 17-significant-digit rendering so identical runs are byte-identical.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        // Avoid "-0" vs "0" differences.
        return "0.0000000000000000e0".into();
    }
    format!("{v:.16e}")
}

/// Write via a temporary file and rename, so readers never see partial output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
