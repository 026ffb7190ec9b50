//! Covariate specifications.
//!
//! A term is a `*`-separated product of factors:
//! `1` (intercept), `W`, `G` (numeric level), `G=k` (level indicator),
//! a sample column such as `z`, `A.z` or `C.z`, or a squared column `z^2`.
//! Terms involving `W` or `G` can be evaluated at counterfactual `(w, g)`.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::sample::Sample;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GFactor {
    None,
    Value,
    Is(i64),
}

#[derive(Clone, Debug, PartialEq)]
struct Term<T> {
    name: String,
    data: Vec<T>,
    uses_w: bool,
    g: GFactor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Design<T> {
    terms: Vec<Term<T>>,
    n: usize,
}

impl<T: Real> Design<T> {
    pub fn build<S: AsRef<str>>(sample: &Sample<T>, specs: &[S]) -> Result<Self> {
        let n = sample.len();
        let terms = specs.iter().map(|s| parse_term(sample, s.as_ref().trim())).collect::<Result<Vec<_>>>()?;
        if terms.is_empty() {
            return Err(Error::Config("design has no terms".into()));
        }
        Ok(Design { terms, n })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn units(&self) -> usize {
        self.n
    }

    pub fn names(&self) -> Vec<String> {
        self.terms.iter().map(|t| t.name.clone()).collect()
    }

    pub fn uses_w(&self) -> bool {
        self.terms.iter().any(|t| t.uses_w)
    }

    pub fn uses_g(&self) -> bool {
        self.terms.iter().any(|t| t.g != GFactor::None)
    }

    /// Row for unit `i` evaluated at treatment `w` and exposure `g`.
    pub fn row_at(&self, i: usize, w: bool, g: i64) -> Vec<T> {
        self.terms
            .iter()
            .map(|t| {
                let mut v = t.data[i];
                if t.uses_w && !w {
                    v = T::zero();
                }
                match t.g {
                    GFactor::None => v,
                    GFactor::Value => v * T::lit(g as f64),
                    GFactor::Is(k) => {
                        if g == k {
                            v
                        } else {
                            T::zero()
                        }
                    }
                }
            })
            .collect()
    }

    /// Design matrix at the observed `(W_i, G_i)`.
    pub fn matrix(&self, sample: &Sample<T>) -> Matrix<T> {
        let rows: Vec<Vec<T>> = (0..self.n).map(|i| self.row_at(i, sample.w[i], sample.g[i])).collect();
        Matrix::from_rows(&rows)
    }

    /// Design matrix with every unit set to `(w, g)`.
    pub fn matrix_at(&self, w: bool, g: i64) -> Matrix<T> {
        let rows: Vec<Vec<T>> = (0..self.n).map(|i| self.row_at(i, w, g)).collect();
        Matrix::from_rows(&rows)
    }
}

fn parse_term<T: Real>(sample: &Sample<T>, spec: &str) -> Result<Term<T>> {
    let n = sample.len();
    let mut data = vec![T::one(); n];
    let mut uses_w = false;
    let mut g = GFactor::None;
    for factor in spec.split('*').map(str::trim) {
        match factor {
            "1" | "" => {}
            "W" => uses_w = true,
            "G" => {
                if g != GFactor::None {
                    return Err(Error::Config(format!("term `{spec}` has more than one G factor")));
                }
                g = GFactor::Value;
            }
            f if f.starts_with("G=") => {
                if g != GFactor::None {
                    return Err(Error::Config(format!("term `{spec}` has more than one G factor")));
                }
                let k = f[2..].trim().parse::<i64>().map_err(|_| Error::Config(format!("bad exposure level in `{f}`")))?;
                g = GFactor::Is(k);
            }
            f => {
                let (name, square) = match f.strip_suffix("^2") {
                    Some(base) => (base, true),
                    None => (f, false),
                };
                let col = sample.column(name)?;
                for (d, &c) in data.iter_mut().zip(col) {
                    *d *= if square { c * c } else { c };
                }
            }
        }
    }
    Ok(Term { name: spec.to_string(), data, uses_w, g })
}
