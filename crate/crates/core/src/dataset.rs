//! Causal datasets with full ground truth.
//!
//! A [`CausalDataset`] carries what a benchmark needs and an estimator never
//! sees: both potential outcomes, the true latent, and the treatment
//! propensity, alongside the observables (x, t, factual y) and a fixed
//! train/validation/test partition.
//!
//! Alongside the realized potential outcomes (y0, y1 — the draws the
//! factual outcome is selected from), the dataset stores the noiseless
//! potential-outcome means (mu0, mu1). Error metrics follow the benchmark
//! convention and compare predictions against the means; the realized
//! outcomes keep the exact factual-consistency invariant.
//!
//! The text export uses the header
//! `x1..xm,t,y,y0,y1,mu0,mu1,z1..zn,prop,split` with floats printed in
//! shortest round-trip form, so write-then-read reproduces the dataset bit
//! for bit.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Partition membership of one unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Validation),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// A realized dataset: covariates, treatment, factual outcome, both
/// potential outcomes, the generating latent, and the propensity.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalDataset {
    pub x: Vec<Vec<f64>>,
    pub t: Vec<u8>,
    /// Factual outcome; equals `y0[i]` or `y1[i]` according to `t[i]`.
    pub y: Vec<f64>,
    /// Realized potential outcomes (outcome noise included).
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    /// Noiseless potential-outcome means; the metrics' ground truth.
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    /// True latent per unit (the generator's score), any dimension >= 1.
    pub z_true: Vec<Vec<f64>>,
    /// Generating probability of treatment, in (0, 1).
    pub propensity: Vec<f64>,
    pub split: Vec<Split>,
}

impl CausalDataset {
    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn covariate_dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn latent_dim(&self) -> usize {
        self.z_true.first().map_or(0, Vec::len)
    }

    /// Indices belonging to one split, in dataset order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.split[i] == split).collect()
    }

    /// Train and validation indices jointly (the post-treatment evaluation
    /// set).
    pub fn train_validation_indices(&self) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.split[i] != Split::Test)
            .collect()
    }

    /// Noiseless per-unit effect `mu1 - mu0`.
    pub fn true_effect(&self, i: usize) -> f64 {
        self.mu1[i] - self.mu0[i]
    }

    /// Mean of the noiseless effects over the given units.
    pub fn empirical_ate(&self, indices: &[usize]) -> f64 {
        let sum: f64 = indices.iter().map(|&i| self.true_effect(i)).sum();
        sum / indices.len() as f64
    }

    /// Mean of the realized effects `y1 - y0` over the given units.
    pub fn realized_ate(&self, indices: &[usize]) -> f64 {
        let sum: f64 = indices.iter().map(|&i| self.y1[i] - self.y0[i]).sum();
        sum / indices.len() as f64
    }

    /// Rescales every outcome column by `1 / factor` (used by the
    /// across-models normalization in sweeps). Consistency is preserved.
    pub fn scale_outcomes(&mut self, factor: f64) {
        assert!(factor.is_finite() && factor != 0.0, "bad outcome scale");
        for v in self
            .y
            .iter_mut()
            .chain(self.y0.iter_mut())
            .chain(self.y1.iter_mut())
            .chain(self.mu0.iter_mut())
            .chain(self.mu1.iter_mut())
        {
            *v /= factor;
        }
    }

    /// Checks the structural invariants: equal column lengths, exact
    /// consistency of the factual outcome, positivity of the propensity,
    /// and a split that covers every unit.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if [
            self.t.len(),
            self.y.len(),
            self.y0.len(),
            self.y1.len(),
            self.mu0.len(),
            self.mu1.len(),
            self.z_true.len(),
            self.propensity.len(),
            self.split.len(),
        ]
        .iter()
        .any(|&len| len != n)
        {
            return Err(Error::ShapeMismatch(
                "dataset columns have unequal lengths".into(),
            ));
        }
        let m = self.covariate_dim();
        let zd = self.latent_dim();
        for i in 0..n {
            if self.x[i].len() != m || self.z_true[i].len() != zd {
                return Err(Error::ShapeMismatch(format!(
                    "ragged covariate or latent row at unit {i}"
                )));
            }
            if self.t[i] > 1 {
                return Err(Error::InvalidConfig(format!(
                    "treatment at unit {i} is {}, expected 0 or 1",
                    self.t[i]
                )));
            }
            let expected = if self.t[i] == 0 {
                self.y0[i]
            } else {
                self.y1[i]
            };
            if self.y[i] != expected {
                return Err(Error::InvalidConfig(format!(
                    "consistency violated at unit {i}: y = {}, potential outcome = {expected}",
                    self.y[i]
                )));
            }
            if !(self.mu0[i].is_finite() && self.mu1[i].is_finite()) {
                return Err(Error::NonFinite(format!(
                    "potential-outcome mean at unit {i}"
                )));
            }
            if !(self.propensity[i] > 0.0 && self.propensity[i] < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "positivity violated at unit {i}: propensity = {}",
                    self.propensity[i]
                )));
            }
        }
        Ok(())
    }

    /// Assigns a contiguous three-way split with sizes as close to `n/3` as
    /// possible (remainders go to train, then validation).
    pub fn assign_equal_thirds(n: usize) -> Vec<Split> {
        let base = n / 3;
        let rem = n % 3;
        let n_train = base + usize::from(rem >= 1);
        let n_val = base + usize::from(rem >= 2);
        let mut split = Vec::with_capacity(n);
        split.extend(std::iter::repeat_n(Split::Train, n_train));
        split.extend(std::iter::repeat_n(Split::Validation, n_val));
        split.extend(std::iter::repeat_n(Split::Test, n - n_train - n_val));
        split
    }

    /// Writes the delimited-text export.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let m = self.covariate_dim();
        let zd = self.latent_dim();
        let mut header = Vec::new();
        for j in 1..=m {
            header.push(format!("x{j}"));
        }
        header.push("t".into());
        header.push("y".into());
        header.push("y0".into());
        header.push("y1".into());
        header.push("mu0".into());
        header.push("mu1".into());
        for j in 1..=zd {
            header.push(format!("z{j}"));
        }
        header.push("prop".into());
        header.push("split".into());
        writeln!(w, "{}", header.join(","))?;

        for i in 0..self.n() {
            let mut row: Vec<String> = Vec::with_capacity(m + zd + 6);
            for v in &self.x[i] {
                row.push(format!("{v}"));
            }
            row.push(format!("{}", self.t[i]));
            row.push(format!("{}", self.y[i]));
            row.push(format!("{}", self.y0[i]));
            row.push(format!("{}", self.y1[i]));
            row.push(format!("{}", self.mu0[i]));
            row.push(format!("{}", self.mu1[i]));
            for v in &self.z_true[i] {
                row.push(format!("{v}"));
            }
            row.push(format!("{}", self.propensity[i]));
            row.push(self.split[i].name().into());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Reads a dataset written by [`CausalDataset::write_csv`].
    pub fn read_csv<R: BufRead>(r: &mut R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse {
                line: 1,
                msg: "empty dataset file".into(),
            })?
            .map_err(Error::Io)?;
        let cols: Vec<&str> = header.trim_end().split(',').collect();
        let m = cols.iter().take_while(|c| c.starts_with('x')).count();
        let zd = cols.iter().filter(|c| c.starts_with('z')).count();
        let expected: Vec<String> = {
            let mut h = Vec::new();
            for j in 1..=m {
                h.push(format!("x{j}"));
            }
            h.extend(["t", "y", "y0", "y1", "mu0", "mu1"].map(String::from));
            for j in 1..=zd {
                h.push(format!("z{j}"));
            }
            h.extend(["prop", "split"].map(String::from));
            h
        };
        if cols != expected.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unexpected header {header:?}"),
            });
        }

        let mut ds = CausalDataset {
            x: Vec::new(),
            t: Vec::new(),
            y: Vec::new(),
            y0: Vec::new(),
            y1: Vec::new(),
            mu0: Vec::new(),
            mu1: Vec::new(),
            z_true: Vec::new(),
            propensity: Vec::new(),
            split: Vec::new(),
        };
        for (k, line) in lines.enumerate() {
            let lineno = k + 2;
            let line = line.map_err(Error::Io)?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim_end().split(',').collect();
            if fields.len() != m + zd + 8 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected {} fields, got {}", m + zd + 8, fields.len()),
                });
            }
            let fnum = |s: &str, what: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("bad {what} value {s:?}"),
                })
            };
            let mut it = fields.iter();
            let mut xrow = Vec::with_capacity(m);
            for j in 0..m {
                xrow.push(fnum(it.next().unwrap(), &format!("x{}", j + 1))?);
            }
            let t: u8 = it.next().unwrap().parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: "bad treatment value".into(),
            })?;
            let y = fnum(it.next().unwrap(), "y")?;
            let y0 = fnum(it.next().unwrap(), "y0")?;
            let y1 = fnum(it.next().unwrap(), "y1")?;
            let mu0 = fnum(it.next().unwrap(), "mu0")?;
            let mu1 = fnum(it.next().unwrap(), "mu1")?;
            let mut zrow = Vec::with_capacity(zd);
            for j in 0..zd {
                zrow.push(fnum(it.next().unwrap(), &format!("z{}", j + 1))?);
            }
            let prop = fnum(it.next().unwrap(), "prop")?;
            let split = Split::from_name(it.next().unwrap()).ok_or_else(|| Error::Parse {
                line: lineno,
                msg: "bad split label".into(),
            })?;

            ds.x.push(xrow);
            ds.t.push(t);
            ds.y.push(y);
            ds.y0.push(y0);
            ds.y1.push(y1);
            ds.mu0.push(mu0);
            ds.mu1.push(mu1);
            ds.z_true.push(zrow);
            ds.propensity.push(prop);
            ds.split.push(split);
        }
        Ok(ds)
    }
}
