//! Model terms built from named covariates: `x`, `x^2`, `x*z`, `x*z^2`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Product of covariate powers, e.g. `cpn*size` or `lev^2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term {
    factors: Vec<(String, u32)>,
}

impl Term {
    pub fn covariate(name: &str) -> Self {
        Self {
            factors: vec![(name.to_string(), 1)],
        }
    }

    pub fn factors(&self) -> &[(String, u32)] {
        &self.factors
    }

    pub fn evaluate(&self, covariates: &[f64], names: &[String]) -> Result<f64> {
        let mut v = 1.0;
        for (name, pow) in &self.factors {
            let j = names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::UnknownCovariate(name.clone()))?;
            v *= covariates[j].powi(*pow as i32);
        }
        Ok(v)
    }
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidTerm(s.to_string());
        let mut factors = Vec::new();
        for part in s.split('*') {
            let part = part.trim();
            let (name, pow) = match part.split_once('^') {
                Some((n, p)) => (n.trim(), p.trim().parse::<u32>().map_err(|_| bad())?),
                None => (part, 1),
            };
            if name.is_empty() || pow == 0 {
                return Err(bad());
            }
            factors.push((name.to_string(), pow));
        }
        if factors.is_empty() {
            return Err(bad());
        }
        Ok(Self { factors })
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, (name, pow)) in self.factors.iter().enumerate() {
            if k > 0 {
                f.write_str("*")?;
            }
            if *pow == 1 {
                write!(f, "{name}")?;
            } else {
                write!(f, "{name}^{pow}")?;
            }
        }
        Ok(())
    }
}

/// Parse a list of term strings, checking every factor names a declared covariate.
pub fn parse_terms<S: AsRef<str>>(terms: &[S], covariates: &[String]) -> Result<Vec<Term>> {
    terms
        .iter()
        .map(|s| {
            let t: Term = s.as_ref().parse()?;
            for (name, _) in &t.factors {
                if !covariates.iter().any(|c| c == name) {
                    return Err(Error::UnknownCovariate(name.clone()));
                }
            }
            Ok(t)
        })
        .collect()
}

/// Design matrix for the given rows. With `intercept`, column 0 is all ones.
pub fn design_matrix(
    dataset: &Dataset,
    rows: &[usize],
    terms: &[Term],
    intercept: bool,
) -> Result<DMatrix<f64>> {
    let names = dataset.covariate_names();
    let offset = usize::from(intercept);
    let mut x = DMatrix::zeros(rows.len(), terms.len() + offset);
    for (r, &i) in rows.iter().enumerate() {
        let cov = &dataset.units()[i].covariates;
        if intercept {
            x[(r, 0)] = 1.0;
        }
        for (k, t) in terms.iter().enumerate() {
            x[(r, k + offset)] = t.evaluate(cov, names)?;
        }
    }
    Ok(x)
}

pub fn term_names(terms: &[Term]) -> Vec<String> {
    terms.iter().map(|t| t.to_string()).collect()
}
