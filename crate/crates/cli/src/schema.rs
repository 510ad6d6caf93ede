//! Input file formats and canonical serialization.
//!
//! Files use 1-based state and mode indices; everything internal is
//! 0-based. Numbers are serialized with 17 significant digits so values
//! round-trip losslessly and canonical forms are byte-stable.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use switchlyap_core::ctmc::MarkovParams;
use switchlyap_core::flows::SwitchedSystem;
use switchlyap_core::hierarchy::{RateEntry, RateFamily};

use crate::CliError;

/// A switched system with optional Markov parameters and hull weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemFile {
    pub d: usize,
    pub n: usize,
    /// Row-major `d*d` entries per mode.
    pub matrices: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub markov: Option<MarkovSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hull_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarkovSection {
    pub nu: Vec<f64>,
    pub mu: Option<f64>,
    pub p: Vec<Vec<f64>>,
}

/// Monomial rate family, optionally with an embedded system and the
/// state-to-matrix assignment for limit extraction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateFamilyFile {
    pub n_states: usize,
    pub rates: Vec<RateRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assignment: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateRow {
    /// 1-based source state.
    pub from: usize,
    /// 1-based target state.
    pub to: usize,
    pub coeff: f64,
    pub exponent: f64,
}

fn input_err(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

impl SystemFile {
    pub fn validate(&self) -> Result<SwitchedSystem, CliError> {
        if self.n == 0 {
            return Err(input_err("field `n`: need at least one mode"));
        }
        if self.d == 0 {
            return Err(input_err("field `d`: dimension must be positive"));
        }
        if self.matrices.len() != self.n {
            return Err(input_err(format!(
                "field `matrices`: expected {} matrices, found {}",
                self.n,
                self.matrices.len()
            )));
        }
        let mut modes = Vec::with_capacity(self.n);
        for (k, rows) in self.matrices.iter().enumerate() {
            if rows.len() != self.d * self.d {
                return Err(input_err(format!(
                    "field `matrices[{k}]`: expected {} entries (row-major {d}x{d}), found {}",
                    self.d * self.d,
                    rows.len(),
                    d = self.d
                )));
            }
            modes.push(DMatrix::from_row_slice(self.d, self.d, rows));
        }
        SwitchedSystem::new(modes).map_err(|e| input_err(format!("field `matrices`: {e}")))
    }

    /// Markov parameters are required by the probabilistic commands.
    pub fn markov_params(&self) -> Result<MarkovParams, CliError> {
        let section = self
            .markov
            .as_ref()
            .ok_or_else(|| input_err("field `markov`: required by this command"))?;
        let mu = section
            .mu
            .ok_or_else(|| input_err("field `markov.mu`: required by this command"))?;
        if section.nu.len() != self.n {
            return Err(input_err(format!(
                "field `markov.nu`: expected length {}, found {}",
                self.n,
                section.nu.len()
            )));
        }
        if section.p.len() != self.n || section.p.iter().any(|row| row.len() != self.n) {
            return Err(input_err(format!(
                "field `markov.p`: expected an {0}x{0} matrix",
                self.n
            )));
        }
        let p = DMatrix::from_fn(self.n, self.n, |i, j| section.p[i][j]);
        MarkovParams::new(DVector::from_vec(section.nu.clone()), mu, p)
            .map_err(|e| input_err(format!("field `markov`: {e}")))
    }

    pub fn hull_weights_or_uniform(&self) -> Result<Vec<f64>, CliError> {
        match &self.hull_weights {
            Some(w) => {
                if w.len() != self.n {
                    return Err(input_err(format!(
                        "field `hull_weights`: expected length {}, found {}",
                        self.n,
                        w.len()
                    )));
                }
                Ok(w.clone())
            }
            None => Ok(vec![1.0 / self.n as f64; self.n]),
        }
    }
}

impl RateFamilyFile {
    pub fn validate(&self) -> Result<RateFamily, CliError> {
        if self.n_states == 0 {
            return Err(input_err("field `n_states`: need at least one state"));
        }
        let mut entries = Vec::with_capacity(self.rates.len());
        for (k, row) in self.rates.iter().enumerate() {
            if row.from == 0 || row.from > self.n_states || row.to == 0 || row.to > self.n_states
            {
                return Err(input_err(format!(
                    "field `rates[{k}]`: states are 1-based in ⟦1,{}⟧",
                    self.n_states
                )));
            }
            entries.push(RateEntry {
                from: row.from - 1,
                to: row.to - 1,
                coeff: row.coeff,
                exponent: row.exponent,
            });
        }
        RateFamily::new(self.n_states, entries).map_err(|e| input_err(format!("field `rates`: {e}")))
    }

    /// 0-based assignment, defaulting to the identity when the system has
    /// one matrix per state.
    pub fn assignment_zero_based(&self, num_modes: usize) -> Result<Vec<usize>, CliError> {
        match &self.assignment {
            Some(a) => {
                if a.len() != self.n_states {
                    return Err(input_err(format!(
                        "field `assignment`: expected length {}, found {}",
                        self.n_states,
                        a.len()
                    )));
                }
                a.iter()
                    .enumerate()
                    .map(|(i, &m)| {
                        if m == 0 || m > num_modes {
                            Err(input_err(format!(
                                "field `assignment[{i}]`: matrix indices are 1-based in ⟦1,{num_modes}⟧"
                            )))
                        } else {
                            Ok(m - 1)
                        }
                    })
                    .collect()
            }
            None => {
                if num_modes != self.n_states {
                    return Err(input_err(
                        "field `assignment`: required when the mode count differs from the state count",
                    ));
                }
                Ok((0..self.n_states).collect())
            }
        }
    }

    pub fn initial_law(&self) -> Result<DVector<f64>, CliError> {
        match &self.nu {
            Some(nu) => {
                if nu.len() != self.n_states {
                    return Err(input_err(format!(
                        "field `nu`: expected length {}, found {}",
                        self.n_states,
                        nu.len()
                    )));
                }
                Ok(DVector::from_vec(nu.clone()))
            }
            None => Ok(DVector::from_element(
                self.n_states,
                1.0 / self.n_states as f64,
            )),
        }
    }
}

/// serde_json formatter printing every float with 17 significant digits,
/// which is lossless for `f64` and keeps canonical output byte-stable.
struct SigDigits17<'a> {
    inner: serde_json::ser::PrettyFormatter<'a>,
}

impl serde_json::ser::Formatter for SigDigits17<'_> {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }

    // everything else delegates to the pretty formatter
    fn begin_array<W>(&mut self, w: &mut W) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        serde_json::ser::Formatter::begin_array(&mut self.inner, w)
    }
    fn end_array<W>(&mut self, w: &mut W) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        serde_json::ser::Formatter::end_array(&mut self.inner, w)
    }
    fn begin_array_value<W>(&mut self, w: &mut W, first: bool) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        serde_json::ser::Formatter::begin_array_value(&mut self.inner, w, first)
    }
    fn end_array_value<W>(&mut self, w: &mut W) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        serde_json::ser::Formatter::end_array_value(&mut self.inner, w)
    }
    fn begin_object<W>(&mut self, w: &mut W) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        serde_json::ser::Formatter::begin_object(&mut self.inner, w)
    }
    fn end_object<W>(&mut self, w: &mut W) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        serde_json::ser::Formatter::end_object(&mut self.inner, w)
    }
    fn begin_object_key<W>(&mut self, w: &mut W, first: bool) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        serde_json::ser::Formatter::begin_object_key(&mut self.inner, w, first)
    }
    fn end_object_key<W>(&mut self, w: &mut W) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        serde_json::ser::Formatter::end_object_key(&mut self.inner, w)
    }
    fn begin_object_value<W>(&mut self, w: &mut W) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        serde_json::ser::Formatter::begin_object_value(&mut self.inner, w)
    }
    fn end_object_value<W>(&mut self, w: &mut W) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        serde_json::ser::Formatter::end_object_value(&mut self.inner, w)
    }
}

/// Canonical JSON bytes: pretty-printed, floats at 17 significant digits,
/// trailing newline.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut out = Vec::new();
    let formatter = SigDigits17 {
        inner: serde_json::ser::PrettyFormatter::new(),
    };
    let mut ser = serde_json::Serializer::with_formatter(&mut out, formatter);
    value
        .serialize(&mut ser)
        .map_err(|e| CliError::Internal(format!("serialization failed: {e}")))?;
    out.push(b'\n');
    Ok(out)
}

/// Parse a system file, reporting schema violations with their field path.
pub fn parse_system_file(path: &std::path::Path) -> Result<SystemFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| input_err(format!("cannot read {}: {e}", path.display())))?;
    let file: SystemFile = serde_json::from_str(&text)
        .map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    file.validate()?;
    if let Some(m) = &file.markov {
        // structural checks that do not require mu
        if m.nu.len() != file.n {
            return Err(input_err(format!(
                "field `markov.nu`: expected length {}, found {}",
                file.n,
                m.nu.len()
            )));
        }
    }
    Ok(file)
}

pub fn parse_rate_family_file(path: &std::path::Path) -> Result<RateFamilyFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| input_err(format!("cannot read {}: {e}", path.display())))?;
    let file: RateFamilyFile = serde_json::from_str(&text)
        .map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    file.validate()?;
    Ok(file)
}
