//! Drift densities of the form `rho(x) = exp(P(x))` with `P` a rational
//! polynomial of total degree at most two.
//!
//! The representation is chosen so that `ln(rho(y)/rho(x)) = P(y) - P(x)`
//! is exact rational arithmetic; the conductance construction depends on
//! that difference, not on the exponential itself.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::rat::{rat_to_f64, JsonRat, Rat};

/// One monomial `coeff * x_1^e1 * ... * x_d^ed`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: JsonRat,
    pub exponents: Vec<u32>,
}

/// `rho = exp(P)`. An empty monomial list encodes `rho == 1`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DensitySpec {
    #[serde(default)]
    pub monomials: Vec<Monomial>,
}

impl DensitySpec {
    /// The flat density `rho == 1`.
    pub fn flat() -> Self {
        Self::default()
    }

    pub fn is_flat(&self) -> bool {
        self.monomials.is_empty()
    }

    /// `rho(x) = e^x` in one dimension; handy test fixture.
    pub fn exp_x() -> Self {
        Self {
            monomials: vec![Monomial {
                coeff: JsonRat(Rat::from_integer(1)),
                exponents: vec![1],
            }],
        }
    }

    pub fn validate(&self, dim: usize) -> Result<(), Error> {
        for m in &self.monomials {
            if m.exponents.len() != dim {
                return Err(Error::Config(format!(
                    "monomial exponent list {:?} does not match dimension {dim}",
                    m.exponents
                )));
            }
            if m.exponents.iter().sum::<u32>() > 2 {
                return Err(Error::Config(
                    "density polynomial must have total degree <= 2".into(),
                ));
            }
        }
        Ok(())
    }

    /// Exact value of the exponent polynomial `P` at a rational point.
    pub fn exponent_at(&self, x: &[Rat]) -> Rat {
        let mut acc = Rat::from_integer(0);
        for m in &self.monomials {
            let mut term = m.coeff.0;
            for (xi, &e) in x.iter().zip(&m.exponents) {
                for _ in 0..e {
                    term *= *xi;
                }
            }
            acc += term;
        }
        acc
    }

    /// `rho` at a rational point.
    pub fn value_at(&self, x: &[Rat]) -> f64 {
        rat_to_f64(self.exponent_at(x)).exp()
    }

    /// `rho` at a float point (used by quadrature and reporting paths).
    pub fn value_at_f64(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for m in &self.monomials {
            let mut term = rat_to_f64(m.coeff.0);
            for (xi, &e) in x.iter().zip(&m.exponents) {
                term *= xi.powi(e as i32);
            }
            acc += term;
        }
        acc.exp()
    }
}
