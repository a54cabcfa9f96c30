//! Named test functions on product regions, used as data generators.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TestFunction {
    /// `f = 1`.
    Const1,
    /// `f = exp(x_1 + ... + x_n)`, a product of univariate exponentials.
    ProdExp,
    /// `f = sin(x_1 + ... + x_n)`.
    SinSum,
    /// `f = exp(-|x - c|^2)` with `c = (1/2, ..., 1/2)`.
    Gaussian,
}

impl TestFunction {
    pub const ALL: [TestFunction; 4] = [Self::Const1, Self::ProdExp, Self::SinSum, Self::Gaussian];

    pub fn name(self) -> &'static str {
        match self {
            Self::Const1 => "const1",
            Self::ProdExp => "prodexp",
            Self::SinSum => "sinsum",
            Self::Gaussian => "gaussian",
        }
    }

    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            Self::Const1 => 1.0,
            Self::ProdExp => x.iter().sum::<f64>().exp(),
            Self::SinSum => x.iter().sum::<f64>().sin(),
            Self::Gaussian => (-x.iter().map(|v| (v - 0.5) * (v - 0.5)).sum::<f64>()).exp(),
        }
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Self::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|t| t.name()).collect();
                Error::invalid(format!("unknown test function {s:?} (known: {})", names.join(", ")))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for t in TestFunction::ALL {
            assert_eq!(t.name().parse::<TestFunction>().unwrap(), t);
        }
        assert!("cosh".parse::<TestFunction>().is_err());
    }

    #[test]
    fn values() {
        assert_eq!(TestFunction::Const1.eval(&[0.3, 0.7]), 1.0);
        let x = [0.2, 0.5];
        assert!((TestFunction::ProdExp.eval(&x) - 0.2_f64.exp() * 0.5_f64.exp()).abs() < 1e-15);
        assert_eq!(TestFunction::Gaussian.eval(&[0.5, 0.5, 0.5]), 1.0);
    }
}
