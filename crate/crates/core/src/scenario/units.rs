//! Unit-suffixed quantities such as `"2.73 angstrom"` or `"560 T/m"`.

use serde::{Deserialize, Serialize};

use crate::constants::CONSTANTS;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Length,
    Energy,
    Time,
    Field,
    Gradient,
    Velocity,
    Wavenumber,
    Dimensionless,
}

impl Dimension {
    fn name(self) -> &'static str {
        match self {
            Dimension::Length => "length",
            Dimension::Energy => "energy",
            Dimension::Time => "time",
            Dimension::Field => "magnetic field",
            Dimension::Gradient => "field gradient",
            Dimension::Velocity => "velocity",
            Dimension::Wavenumber => "wavenumber",
            Dimension::Dimensionless => "dimensionless",
        }
    }
}

/// A config value: either a bare number in SI units or a `"<number> <unit>"` string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Quantity {
    Number(f64),
    Text(String),
}

impl From<f64> for Quantity {
    fn from(v: f64) -> Self {
        Quantity::Number(v)
    }
}

fn unit_factor(unit: &str) -> Option<(Dimension, f64)> {
    use Dimension::*;
    let ev = CONSTANTS.ev();
    Some(match unit {
        "m" => (Length, 1.0),
        "cm" => (Length, 1e-2),
        "mm" => (Length, 1e-3),
        "um" | "µm" | "micron" => (Length, 1e-6),
        "nm" => (Length, 1e-9),
        "pm" => (Length, 1e-12),
        "angstrom" | "Å" | "AA" => (Length, 1e-10),
        "J" => (Energy, 1.0),
        "eV" => (Energy, ev),
        "meV" => (Energy, 1e-3 * ev),
        "keV" => (Energy, 1e3 * ev),
        "s" => (Time, 1.0),
        "ms" => (Time, 1e-3),
        "us" | "µs" => (Time, 1e-6),
        "ns" => (Time, 1e-9),
        "ps" => (Time, 1e-12),
        "fs" => (Time, 1e-15),
        "as" => (Time, 1e-18),
        "T" => (Field, 1.0),
        "mT" => (Field, 1e-3),
        "uT" | "µT" => (Field, 1e-6),
        "nT" => (Field, 1e-9),
        "G" | "gauss" => (Field, 1e-4),
        "T/m" => (Gradient, 1.0),
        "mT/m" => (Gradient, 1e-3),
        "T/mm" => (Gradient, 1e3),
        "m/s" => (Velocity, 1.0),
        "km/s" => (Velocity, 1e3),
        "1/m" | "rad/m" | "m^-1" => (Wavenumber, 1.0),
        "1/nm" | "rad/nm" | "nm^-1" => (Wavenumber, 1e9),
        "" | "1" => (Dimensionless, 1.0),
        _ => return None,
    })
}

/// Parses `text` as a quantity of dimension `dim`, returning SI.
pub fn parse_quantity(text: &str, dim: Dimension) -> std::result::Result<f64, String> {
    let t = text.trim();
    let split = t
        .char_indices()
        .find(|&(i, ch)| {
            !(ch.is_ascii_digit()
                || ch == '.'
                || ch == '+'
                || ch == '-'
                || ((ch == 'e' || ch == 'E')
                    && t[i + 1..].starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '+')))
        })
        .map_or(t.len(), |(i, _)| i);
    let (num, unit) = t.split_at(split);
    let value: f64 = num
        .trim()
        .parse()
        .map_err(|_| format!("`{text}` does not start with a number"))?;
    let unit = unit.trim();
    let (d, f) = unit_factor(unit).ok_or_else(|| format!("unknown unit `{unit}` in `{text}`"))?;
    if d != dim {
        return Err(format!("`{text}` is a {}, expected a {}", d.name(), dim.name()));
    }
    Ok(value * f)
}

impl Quantity {
    pub fn si(&self, dim: Dimension, path: &str) -> Result<f64> {
        let v = match self {
            Quantity::Number(v) => *v,
            Quantity::Text(t) => parse_quantity(t, dim).map_err(|m| Error::parse(path, m))?,
        };
        if !v.is_finite() {
            return Err(Error::parse(path, format!("value {v} is not finite")));
        }
        Ok(v)
    }
}
