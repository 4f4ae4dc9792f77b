//! Flexible intentions over factorized hidden states.
//!
//! A hidden state splits into named blocks: block 0 is the actual body
//! configuration, later blocks are potential configurations, one per entity.
//! An intention is an affine map `i(x) = W x + b` over the concatenation;
//! its attractor error `i(x) - x` points from the current state toward the
//! desired one, and a cause vector mixes several such errors into a single
//! expected trajectory.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Ordered, named blocks of a factorized hidden state. All lookups are by
/// name; offsets are precomputed at construction.
#[derive(Debug, Clone)]
pub struct EntityFactorization {
    names: Vec<String>,
    dims: Vec<usize>,
    offsets: Vec<usize>,
}

impl EntityFactorization {
    pub fn new(blocks: &[(&str, usize)]) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::config("factorization needs at least one block"));
        }
        let mut names = Vec::new();
        let mut dims = Vec::new();
        let mut offsets = Vec::new();
        let mut off = 0;
        for (name, dim) in blocks {
            if names.iter().any(|n| n == name) {
                return Err(Error::config(format!("duplicate block name '{name}'")));
            }
            names.push((*name).to_string());
            dims.push(*dim);
            offsets.push(off);
            off += dim;
        }
        Ok(Self { names, dims, offsets })
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn block_count(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::config(format!("unknown block '{name}'")))
    }

    pub fn range(&self, block: usize) -> std::ops::Range<usize> {
        self.offsets[block]..self.offsets[block] + self.dims[block]
    }

    pub fn range_of(&self, name: &str) -> Result<std::ops::Range<usize>> {
        Ok(self.range(self.index_of(name)?))
    }

    pub fn concat(&self, blocks: &[DVector<f64>]) -> Result<DVector<f64>> {
        if blocks.len() != self.dims.len() {
            return Err(Error::dims("factorization concat", blocks.len(), self.dims.len()));
        }
        let mut out = DVector::zeros(self.total_dim());
        for (i, b) in blocks.iter().enumerate() {
            if b.len() != self.dims[i] {
                return Err(Error::dims("factorization block", b.len(), self.dims[i]));
            }
            out.rows_mut(self.offsets[i], self.dims[i]).copy_from(b);
        }
        Ok(out)
    }

    pub fn split(&self, x: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        if x.len() != self.total_dim() {
            return Err(Error::dims("factorization split", x.len(), self.total_dim()));
        }
        Ok((0..self.dims.len())
            .map(|i| x.rows(self.offsets[i], self.dims[i]).into_owned())
            .collect())
    }
}

/// Affine desired-configuration map `i(x) = W x + b`.
#[derive(Debug, Clone)]
pub struct Intention {
    pub name: String,
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Intention {
    pub fn new(name: impl Into<String>, weights: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        if weights.nrows() != weights.ncols() {
            return Err(Error::dims("intention weights", weights.nrows(), weights.ncols()));
        }
        if weights.nrows() != bias.len() {
            return Err(Error::dims("intention bias", weights.nrows(), bias.len()));
        }
        Ok(Self { name: name.into(), weights, bias })
    }

    /// The identity intention: desire to keep the state where it is.
    pub fn stay(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            weights: DMatrix::identity(dim, dim),
            bias: DVector::zeros(dim),
        }
    }

    /// Copy block `src` into block `dst`'s slot; every other row is identity,
    /// so the attractor error is zero outside `dst`.
    pub fn copy_block(
        name: impl Into<String>,
        fact: &EntityFactorization,
        src: &str,
        dst: &str,
    ) -> Result<Self> {
        let dim = fact.total_dim();
        let src_r = fact.range_of(src)?;
        let dst_r = fact.range_of(dst)?;
        if src_r.len() != dst_r.len() {
            return Err(Error::dims("copy_block blocks", src_r.len(), dst_r.len()));
        }
        let mut w = DMatrix::identity(dim, dim);
        for (di, si) in dst_r.clone().zip(src_r.clone()) {
            for j in 0..dim {
                w[(di, j)] = 0.0;
            }
            w[(di, si)] = 1.0;
        }
        Ok(Self { name: name.into(), weights: w, bias: DVector::zeros(dim) })
    }

    /// Pin the listed components to fixed values; all other rows identity.
    pub fn bias_on(
        name: impl Into<String>,
        dim: usize,
        components: &[usize],
        values: &[f64],
    ) -> Result<Self> {
        if components.len() != values.len() {
            return Err(Error::dims("bias_on", components.len(), values.len()));
        }
        let mut w = DMatrix::identity(dim, dim);
        let mut b = DVector::zeros(dim);
        for (&c, &v) in components.iter().zip(values) {
            if c >= dim {
                return Err(Error::config(format!("bias component {c} out of range")));
            }
            w[(c, c)] = 0.0;
            b[c] = v;
        }
        Ok(Self { name: name.into(), weights: w, bias: b })
    }

    /// `i(x) = W x + b`.
    pub fn state(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.weights.ncols() {
            return Err(Error::dims(format!("intention '{}'", self.name), x.len(), self.weights.ncols()));
        }
        Ok(&self.weights * x + &self.bias)
    }

    /// Attractor error `e_i = i(x) - x`.
    pub fn attractor_error(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.state(x)? - x)
    }

    /// `d e_i / d x = W - I`.
    pub fn error_jacobian(&self) -> DMatrix<f64> {
        &self.weights - DMatrix::identity(self.weights.nrows(), self.weights.ncols())
    }
}

/// Cause-weighted trajectory mixture `eta' = sum_m v_m e_m`. With a
/// probability vector this is the Bayesian model average of the hypotheses.
pub fn mix_trajectories(causes: &DVector<f64>, errors: &[DVector<f64>]) -> Result<DVector<f64>> {
    if causes.len() != errors.len() {
        return Err(Error::dims("mix_trajectories", causes.len(), errors.len()));
    }
    if errors.is_empty() {
        return Err(Error::config("mix_trajectories needs at least one hypothesis"));
    }
    let mut out = DVector::zeros(errors[0].len());
    for (m, e) in errors.iter().enumerate() {
        if e.len() != out.len() {
            return Err(Error::dims("mix_trajectories errors", e.len(), out.len()));
        }
        out.axpy(causes[m], e, 1.0);
    }
    Ok(out)
}

/// Dynamics error at the first order: `eps_x = mu' - eta'`.
pub fn dynamics_error_full(mu_prime: &DVector<f64>, eta_prime: &DVector<f64>) -> DVector<f64> {
    mu_prime - eta_prime
}

/// Gain switching for continuous-only agents: pick `gains_above` when the
/// tactile belief exceeds the threshold, else `gains_below`, clamping each
/// gain to `[0, v_max]`.
pub fn threshold_gains(
    tactile_belief: f64,
    threshold: f64,
    gains_below: &DVector<f64>,
    gains_above: &DVector<f64>,
    v_max: f64,
) -> DVector<f64> {
    let src = if tactile_belief > threshold { gains_above } else { gains_below };
    src.map(|g| g.clamp(0.0, v_max))
}
