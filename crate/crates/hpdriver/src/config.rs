use std::path::PathBuf;
use std::str::FromStr;

use hpdof::element::{MAX_DEGREE, MIN_DEGREE};

use crate::DriverError;

/// Fixed example meshes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fixture {
    /// Two root cells side by side, Q2 | Q4.
    Fig1,
    /// Unit square refined once; Q2, Q4 along the bottom and Q4, Q2 on top.
    Fig2,
}

impl FromStr for Fixture {
    type Err = DriverError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fig1" => Ok(Fixture::Fig1),
            "fig2" => Ok(Fixture::Fig2),
            other => Err(DriverError::Config(format!("unknown fixture `{other}` (expected fig1 or fig2)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub ranks: usize,
    pub cycles: u64,
    pub initial_refines: u8,
    pub exponent: f64,
    pub min_degree: u32,
    pub max_degree: u32,
    pub refine_frac: f64,
    pub coarsen_frac: f64,
    pub p_frac: f64,
    pub output: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub restart: Option<PathBuf>,
    pub dump_mesh: bool,
    pub fixture: Option<Fixture>,
    /// Write zeros in the timing columns so metrics files are reproducible.
    pub zero_timings: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            ranks: 1,
            cycles: 5,
            initial_refines: 3,
            exponent: 1.9,
            min_degree: 2,
            max_degree: 7,
            refine_frac: 0.30,
            coarsen_frac: 0.03,
            p_frac: 0.90,
            output: None,
            checkpoint: None,
            restart: None,
            dump_mesh: false,
            fixture: None,
            zero_timings: false,
        }
    }
}

/// Parses `MIN..MAX`.
pub fn parse_degree_range(s: &str) -> Result<(u32, u32), DriverError> {
    let bad = || DriverError::Config(format!("degree range `{s}` must look like MIN..MAX"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let a: u32 = a.trim().parse().map_err(|_| bad())?;
    let b: u32 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
    Ok((a, b))
}

impl Config {
    pub fn validate(&self) -> Result<(), DriverError> {
        let fail = |m: &str| Err(DriverError::Config(m.to_string()));
        if self.ranks == 0 {
            return fail("--ranks must be at least 1");
        }
        if !(MIN_DEGREE..=MAX_DEGREE).contains(&self.min_degree)
            || !(MIN_DEGREE..=MAX_DEGREE).contains(&self.max_degree)
            || self.min_degree > self.max_degree
        {
            return fail("--degrees must satisfy 1 <= MIN <= MAX <= 12");
        }
        if !(self.exponent.is_finite() && self.exponent > 0.0) {
            return fail("--exponent must be a positive number");
        }
        for (name, v) in
            [("--refine-frac", self.refine_frac), ("--coarsen-frac", self.coarsen_frac), ("--p-frac", self.p_frac)]
        {
            if !(0.0..=1.0).contains(&v) {
                return Err(DriverError::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.refine_frac + self.coarsen_frac > 1.0 {
            return fail("--refine-frac plus --coarsen-frac must not exceed 1");
        }
        if self.initial_refines > 12 {
            return fail("--initial-refines must be at most 12");
        }
        if self.fixture.is_some() && !(self.min_degree <= 2 && self.max_degree >= 4) {
            return fail("fixtures use degrees 2 and 4, which must lie inside --degrees");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_range_parsing() {
        assert_eq!(parse_degree_range("2..7").unwrap(), (2, 7));
        assert_eq!(parse_degree_range("1..=3").unwrap(), (1, 3));
        assert!(parse_degree_range("2-7").is_err());
    }

    #[test]
    fn validation() {
        assert!(Config::default().validate().is_ok());
        assert!(Config { ranks: 0, ..Default::default() }.validate().is_err());
        assert!(Config { min_degree: 5, max_degree: 3, ..Default::default() }.validate().is_err());
        assert!(Config { refine_frac: 0.9, coarsen_frac: 0.2, ..Default::default() }.validate().is_err());
        assert!(Config { fixture: Some(Fixture::Fig1), max_degree: 3, ..Default::default() }.validate().is_err());
        assert!("fig3".parse::<Fixture>().is_err());
    }
}
