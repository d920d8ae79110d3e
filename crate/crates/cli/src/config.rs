//! Flat `key=value` solver configuration.

use std::path::Path;
use std::str::FromStr;

use deconv_core::{Boundary, FftPadding, HqsConfig};

use crate::error::{CliError, CliResult};
use crate::formats::read_pairs;

/// A restoration pipeline selectable from the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Chqs,
    HqsCg,
    HqsFft(Padding),
}

/// A local mirror of [`FftPadding`] with a total order for reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Padding {
    None,
    Replicate,
    EdgeTaper,
}

impl From<Padding> for FftPadding {
    fn from(p: Padding) -> Self {
        match p {
            Padding::None => FftPadding::None,
            Padding::Replicate => FftPadding::Replicate,
            Padding::EdgeTaper => FftPadding::EdgeTaper,
        }
    }
}

impl From<FftPadding> for Padding {
    fn from(p: FftPadding) -> Self {
        match p {
            FftPadding::None => Padding::None,
            FftPadding::Replicate => Padding::Replicate,
            FftPadding::EdgeTaper => Padding::EdgeTaper,
        }
    }
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Chqs => "chqs".into(),
            Method::HqsCg => "hqs-cg".into(),
            Method::HqsFft(p) => format!("hqs-fft-{}", FftPadding::from(*p)),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Method {
    type Err = CliError;

    /// `chqs`, `hqs-cg`, `hqs-fft` (padding from the config) or
    /// `hqs-fft-{none,replicate,edgetaper}`.
    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "chqs" => Ok(Method::Chqs),
            "hqs-cg" => Ok(Method::HqsCg),
            "hqs-fft" => Ok(Method::HqsFft(Padding::EdgeTaper)),
            _ => match s.strip_prefix("hqs-fft-") {
                Some(p) => {
                    Ok(Method::HqsFft(p.parse::<FftPadding>().map_err(|e| CliError::Config(e.to_string()))?.into()))
                }
                None => Err(CliError::Config(format!("unknown method '{s}'"))),
            },
        }
    }
}

/// Solver settings plus the record of which keys were set explicitly.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    pub hqs: HqsConfig,
    pub padding_set: bool,
}

fn parse<T: FromStr>(key: &str, value: &str) -> CliResult<T> {
    value.parse().map_err(|_| CliError::Config(format!("bad value '{value}' for {key}")))
}

impl Settings {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let c = &mut self.hqs;
        match key {
            "lambda" => c.lambda = parse(key, value)?,
            "mu0" => c.mu0 = parse(key, value)?,
            "mu_growth" => c.mu_growth = parse(key, value)?,
            "T" | "outer_iters" => c.outer_iters = parse(key, value)?,
            "S" | "inner_iters" => c.inner_iters = parse(key, value)?,
            "rho" => c.rho = parse(key, value)?,
            "ratio" => c.ratio = parse(key, value)?,
            "boundary" => c.boundary = value.parse::<Boundary>().map_err(|e| CliError::Config(e.to_string()))?,
            "fft_padding" => {
                c.fft_padding = value.parse::<FftPadding>().map_err(|e| CliError::Config(e.to_string()))?;
                self.padding_set = true;
            }
            "cg_max_iter" => c.cg_max_iter = parse(key, value)?,
            "cg_tol" => c.cg_tol = parse(key, value)?,
            other => return Err(CliError::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Defaults, then the optional file, then `key=value` overrides.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> CliResult<Self> {
        let mut s = Settings::default();
        if let Some(path) = file {
            for (k, v) in read_pairs(path)? {
                s.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            s.set(k, v)?;
        }
        s.hqs.validate()?;
        Ok(s)
    }

    /// Resolves the method against the config; an explicit `fft_padding`
    /// only makes sense for the FFT pipeline.
    pub fn resolve(&self, method: Method) -> CliResult<(Method, HqsConfig)> {
        match method {
            Method::HqsFft(_) if self.padding_set => {
                Ok((Method::HqsFft(self.hqs.fft_padding.into()), self.hqs.clone()))
            }
            Method::HqsFft(p) => Ok((method, HqsConfig { fft_padding: p.into(), ..self.hqs.clone() })),
            _ if self.padding_set => {
                Err(CliError::Config(format!("fft_padding is only valid with hqs-fft, not {method}")))
            }
            _ => Ok((method, self.hqs.clone())),
        }
    }
}
