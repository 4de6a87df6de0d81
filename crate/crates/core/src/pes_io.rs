//! Force-constant file format.
//!
//! Text layout (`#` starts a comment, blank lines ignored):
//!
//! ```text
//! dim 3
//! basis cartesian
//! units energy=eV length=angstrom_sqrt_amu time=fs
//! hbar 0.6582119569
//! v_ref 0.0
//! order 2: 0 0 -0.0125
//! order 3: 0 1 2 0.031
//! order 4: 0 0 0 0 0.75
//! ```
//!
//! Indices are zero-based and may come in any order; each line sets the
//! fully symmetric element (all permutations implied). A value of order `k`
//! is in energy / length^k. `v_ref` is optional. Linear (`order 1`) terms
//! are rejected since the expansion point must be stationary. The JSON
//! mirror carries the same fields with `terms: [{order, indices, value}]`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pes::{Basis, QuarticPes};
use crate::tensor::SparseSymTensor;
use crate::units::UnitSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnergyUnit {
    #[serde(rename = "internal")]
    Internal,
    #[serde(rename = "eV")]
    Ev,
    #[serde(rename = "meV")]
    Mev,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LengthUnit {
    #[serde(rename = "internal")]
    Internal,
    #[serde(rename = "angstrom_sqrt_amu")]
    AngstromSqrtAmu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeUnit {
    #[serde(rename = "internal")]
    Internal,
    #[serde(rename = "fs")]
    Fs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileUnits {
    pub energy: EnergyUnit,
    pub length: LengthUnit,
    pub time: TimeUnit,
}

impl FileUnits {
    pub const INTERNAL: Self = Self {
        energy: EnergyUnit::Internal,
        length: LengthUnit::Internal,
        time: TimeUnit::Internal,
    };

    pub const LAB: Self = Self {
        energy: EnergyUnit::Ev,
        length: LengthUnit::AngstromSqrtAmu,
        time: TimeUnit::Fs,
    };

    /// Internal units per file unit, as (energy, length, time).
    fn scales(&self, units: &UnitSystem) -> (f64, f64, f64) {
        let e = match self.energy {
            EnergyUnit::Internal => 1.0,
            EnergyUnit::Ev => 1.0 / units.energy_in_ev,
            EnergyUnit::Mev => 1e-3 / units.energy_in_ev,
        };
        let l = match self.length {
            LengthUnit::Internal => 1.0,
            LengthUnit::AngstromSqrtAmu => 1.0 / units.length_in_angstrom_sqrt_amu(),
        };
        let t = match self.time {
            TimeUnit::Internal => 1.0,
            TimeUnit::Fs => 1.0 / units.time_in_fs,
        };
        (e, l, t)
    }

    fn energy_name(&self) -> &'static str {
        match self.energy {
            EnergyUnit::Internal => "internal",
            EnergyUnit::Ev => "eV",
            EnergyUnit::Mev => "meV",
        }
    }

    fn length_name(&self) -> &'static str {
        match self.length {
            LengthUnit::Internal => "internal",
            LengthUnit::AngstromSqrtAmu => "angstrom_sqrt_amu",
        }
    }

    fn time_name(&self) -> &'static str {
        match self.time {
            TimeUnit::Internal => "internal",
            TimeUnit::Fs => "fs",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorTerm {
    pub order: usize,
    pub indices: Vec<usize>,
    pub value: f64,
}

/// Parsed force-constant file, values still in the declared units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorFile {
    pub dim: usize,
    pub basis: Basis,
    pub units: FileUnits,
    pub hbar: f64,
    #[serde(default)]
    pub v_ref: f64,
    pub terms: Vec<TensorTerm>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_f64(line: usize, tok: &str) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(line, format!("expected a number, found `{tok}`")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite value `{tok}`")));
    }
    Ok(v)
}

fn parse_units(line: usize, tokens: &[&str]) -> Result<FileUnits> {
    let (mut energy, mut length, mut time) = (None, None, None);
    for tok in tokens {
        let (key, val) = tok
            .split_once('=')
            .ok_or_else(|| parse_err(line, format!("expected key=value in units block, found `{tok}`")))?;
        match key {
            "energy" => {
                energy = Some(match val {
                    "internal" => EnergyUnit::Internal,
                    "eV" => EnergyUnit::Ev,
                    "meV" => EnergyUnit::Mev,
                    _ => return Err(parse_err(line, format!("unknown energy unit `{val}`"))),
                })
            }
            "length" => {
                length = Some(match val {
                    "internal" => LengthUnit::Internal,
                    "angstrom_sqrt_amu" => LengthUnit::AngstromSqrtAmu,
                    _ => return Err(parse_err(line, format!("unknown length unit `{val}`"))),
                })
            }
            "time" => {
                time = Some(match val {
                    "internal" => TimeUnit::Internal,
                    "fs" => TimeUnit::Fs,
                    _ => return Err(parse_err(line, format!("unknown time unit `{val}`"))),
                })
            }
            _ => return Err(parse_err(line, format!("unknown units key `{key}`"))),
        }
    }
    Ok(FileUnits {
        energy: energy.ok_or_else(|| parse_err(line, "units block lacks energy"))?,
        length: length.ok_or_else(|| parse_err(line, "units block lacks length"))?,
        time: time.unwrap_or(match energy {
            Some(EnergyUnit::Internal) | None => TimeUnit::Internal,
            _ => TimeUnit::Fs,
        }),
    })
}

impl TensorFile {
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut dim = None;
        let mut basis = None;
        let mut units = None;
        let mut hbar = None;
        let mut v_ref = 0.0;
        let mut terms = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix("order") {
                let (order_tok, body) = rest
                    .split_once(':')
                    .ok_or_else(|| parse_err(line, "expected `order k: indices value`"))?;
                let order: usize = order_tok
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(line, format!("bad order `{}`", order_tok.trim())))?;
                if order == 1 {
                    return Err(parse_err(
                        line,
                        "linear terms are not supported: the expansion point must be stationary",
                    ));
                }
                if !(2..=4).contains(&order) {
                    return Err(parse_err(line, format!("unsupported order {order}")));
                }
                let toks: Vec<&str> = body.split_whitespace().collect();
                if toks.len() != order + 1 {
                    return Err(parse_err(
                        line,
                        format!(
                            "order {order} needs {order} indices and a value, found {} fields",
                            toks.len()
                        ),
                    ));
                }
                let indices = toks[..order]
                    .iter()
                    .map(|t| {
                        t.parse::<usize>()
                            .map_err(|_| parse_err(line, format!("bad index `{t}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                terms.push(TensorTerm {
                    order,
                    indices,
                    value: parse_f64(line, toks[order])?,
                });
                continue;
            }
            let toks: Vec<&str> = content.split_whitespace().collect();
            match toks[0] {
                "dim" if toks.len() == 2 => {
                    dim = Some(toks[1].parse::<usize>().map_err(|_| parse_err(line, "bad dim"))?);
                }
                "basis" if toks.len() == 2 => {
                    basis = Some(match toks[1] {
                        "cartesian" => Basis::Cartesian,
                        "mode" => Basis::Mode,
                        other => return Err(parse_err(line, format!("unknown basis `{other}`"))),
                    });
                }
                "units" => units = Some(parse_units(line, &toks[1..])?),
                "hbar" if toks.len() == 2 => hbar = Some(parse_f64(line, toks[1])?),
                "v_ref" if toks.len() == 2 => v_ref = parse_f64(line, toks[1])?,
                other => return Err(parse_err(line, format!("unrecognized line starting with `{other}`"))),
            }
        }
        let file = Self {
            dim: dim.ok_or_else(|| parse_err(0, "missing `dim` header"))?,
            basis: basis.ok_or_else(|| parse_err(0, "missing `basis` header"))?,
            units: units.ok_or_else(|| parse_err(0, "missing `units` header"))?,
            hbar: hbar.ok_or_else(|| parse_err(0, "missing `hbar` header"))?,
            v_ref,
            terms,
        };
        file.check()?;
        Ok(file)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: Self = serde_json::from_str(text)?;
        file.check()?;
        Ok(file)
    }

    /// Read a file, choosing the JSON mirror when the content starts with `{`.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if text.trim_start().starts_with('{') {
            Self::from_json(&text)
        } else {
            Self::parse_text(&text)
        }
    }

    fn check(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(parse_err(0, "dim must be positive"));
        }
        if !(self.hbar > 0.0) {
            return Err(parse_err(0, "hbar must be positive"));
        }
        for t in &self.terms {
            if t.order == 1 {
                return Err(parse_err(
                    0,
                    "linear terms are not supported: the expansion point must be stationary",
                ));
            }
            if !(2..=4).contains(&t.order) || t.indices.len() != t.order {
                return Err(parse_err(0, format!("malformed term {:?}", t)));
            }
            if !t.value.is_finite() {
                return Err(parse_err(0, format!("non-finite value in term {:?}", t.indices)));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dim {}", self.dim);
        let basis = match self.basis {
            Basis::Cartesian => "cartesian",
            Basis::Mode => "mode",
        };
        let _ = writeln!(out, "basis {basis}");
        let _ = writeln!(
            out,
            "units energy={} length={} time={}",
            self.units.energy_name(),
            self.units.length_name(),
            self.units.time_name()
        );
        let _ = writeln!(out, "hbar {:e}", self.hbar);
        let _ = writeln!(out, "v_ref {:e}", self.v_ref);
        for t in &self.terms {
            let idx: Vec<String> = t.indices.iter().map(|i| i.to_string()).collect();
            let _ = writeln!(out, "order {}: {} {:e}", t.order, idx.join(" "), t.value);
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Convert to a surface in the internal units of `units`.
    pub fn to_pes(&self, units: &UnitSystem) -> Result<QuarticPes> {
        let (e, l, t) = self.units.scales(units);
        let hbar = self.hbar * e * t;
        if ((hbar - units.hbar) / units.hbar).abs() > 1e-6 {
            return Err(Error::InvalidParameter(format!(
                "file hbar {} converts to {hbar:.9e}, but the unit system uses {:.9e}",
                self.hbar, units.hbar
            )));
        }
        let mut per_order: [Vec<(&[usize], f64)>; 3] = Default::default();
        for term in &self.terms {
            let scale = e / l.powi(term.order as i32);
            per_order[term.order - 2].push((&term.indices, term.value * scale));
        }
        let [p2, p3, p4] = per_order;
        QuarticPes::new(
            self.basis,
            self.v_ref * e,
            SparseSymTensor::from_entries(2, self.dim, p2)?,
            SparseSymTensor::from_entries(3, self.dim, p3)?,
            SparseSymTensor::from_entries(4, self.dim, p4)?,
        )
    }

    /// Express `pes` (internal units of `units`) in `file_units`.
    pub fn from_pes(pes: &QuarticPes, units: &UnitSystem, file_units: FileUnits) -> Self {
        let (e, l, t) = file_units.scales(units);
        let mut terms = Vec::new();
        for tensor in [pes.phi(), pes.chi(), pes.psi()] {
            let order = tensor.order();
            let scale = l.powi(order as i32) / e;
            for (idx, value) in tensor.iter() {
                terms.push(TensorTerm {
                    order,
                    indices: idx.to_vec(),
                    value: value * scale,
                });
            }
        }
        Self {
            dim: pes.dim(),
            basis: pes.basis(),
            units: file_units,
            hbar: units.hbar / (e * t),
            v_ref: pes.v_ref() / e,
            terms,
        }
    }
}

pub fn load_pes(path: impl AsRef<Path>, units: &UnitSystem) -> Result<QuarticPes> {
    let path = path.as_ref();
    let file = TensorFile::read(path)?;
    log::debug!("loaded {} terms from {}", file.terms.len(), path.display());
    file.to_pes(units)
}

/// Write `pes` as text, or as JSON when the path ends in `.json`.
pub fn save_pes(path: impl AsRef<Path>, pes: &QuarticPes, units: &UnitSystem, file_units: FileUnits) -> Result<()> {
    let path = path.as_ref();
    let file = TensorFile::from_pes(pes, units, file_units);
    let text = if path.extension().is_some_and(|e| e == "json") {
        file.to_json()?
    } else {
        file.to_text()
    };
    std::fs::write(path, text)?;
    Ok(())
}
