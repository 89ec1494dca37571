//! Planted-factor synthetic embeddings.
//!
//! Every sample realizes one factor (an attack, or bonafide). Its embedding
//! is `factor_strength * u_f + noise_sigma * z`, where `u_f` is the planted
//! unit direction of factor `f` and `z` is standard Gaussian noise.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{EmbeddingSet, FactorTable, SampleLabel, BONAFIDE};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub dim_e: usize,
    pub n_attacks: usize,
    pub bonafide_fraction: f64,
    pub factor_strength: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Plant factors along the standard basis instead of a random
    /// orthonormal basis.
    #[serde(default)]
    pub axis_aligned: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_samples: 4000,
            dim_e: 32,
            n_attacks: 7,
            bonafide_fraction: 0.2,
            factor_strength: 3.0,
            noise_sigma: 0.5,
            seed: 0,
            axis_aligned: false,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_samples == 0 {
            return fail("n_samples must be positive".into());
        }
        if self.dim_e == 0 {
            return fail("dim_e must be positive".into());
        }
        if self.n_attacks == 0 {
            return fail("n_attacks must be positive".into());
        }
        if self.n_attacks + 1 > self.dim_e {
            return fail(format!(
                "n_attacks + 1 = {} exceeds dim_e = {}",
                self.n_attacks + 1,
                self.dim_e
            ));
        }
        if !(self.bonafide_fraction > 0.0 && self.bonafide_fraction < 1.0) {
            return fail(format!("bonafide_fraction = {} not in (0, 1)", self.bonafide_fraction));
        }
        if !(self.factor_strength.is_finite() && self.factor_strength > 0.0) {
            return fail(format!("factor_strength = {} must be positive", self.factor_strength));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return fail(format!("noise_sigma = {} must be nonnegative", self.noise_sigma));
        }
        Ok(())
    }

    pub fn n_factors(&self) -> usize {
        self.n_attacks + 1
    }

    /// Factor names: `A01..Ann`, then bonafide.
    pub fn factor_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.n_attacks).map(|a| format!("A{a:02}")).collect();
        names.push(BONAFIDE.to_owned());
        names
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub embeddings: EmbeddingSet,
    pub factors: FactorTable,
    /// F×E matrix of planted unit directions, one row per factor.
    pub directions: Array2<f64>,
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_factors = config.n_factors();
    let directions = if config.axis_aligned {
        let mut d = Array2::zeros((n_factors, config.dim_e));
        for f in 0..n_factors {
            d[[f, f]] = 1.0;
        }
        d
    } else {
        random_orthonormal_rows(n_factors, config.dim_e, &mut rng)
    };

    let names = config.factor_names();
    let bonafide_index = n_factors - 1;
    let mut labels = Vec::with_capacity(config.n_samples);
    let mut assignment = Vec::with_capacity(config.n_samples);
    let mut matrix = Array2::<f32>::zeros((config.n_samples, config.dim_e));
    for i in 0..config.n_samples {
        let f = if rng.random::<f64>() < config.bonafide_fraction {
            bonafide_index
        } else {
            rng.random_range(0..config.n_attacks)
        };
        let id = format!("synth_{i:06}");
        labels.push(if f == bonafide_index {
            SampleLabel::bonafide(id)
        } else {
            SampleLabel::spoof(id, names[f].clone())
        });
        assignment.push(f);
        for j in 0..config.dim_e {
            let z: f64 = rng.sample(StandardNormal);
            let v = config.factor_strength * directions[[f, j]] + config.noise_sigma * z;
            matrix[[i, j]] = v as f32;
        }
    }

    let embeddings = EmbeddingSet::labeled(labels, matrix)?;
    let factors = FactorTable::new(names, assignment, (0..config.n_samples).collect())?;
    Ok(SyntheticDataset {
        embeddings,
        factors,
        directions,
    })
}

/// `rows` orthonormal vectors of length `dim` from Gaussian draws,
/// via modified Gram-Schmidt with one reorthogonalization pass.
fn random_orthonormal_rows(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(rows);
    while basis.len() < rows {
        let mut v: Array1<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for u in &basis {
                let proj = u.dot(&v);
                v.scaled_add(-proj, u);
            }
        }
        let norm = v.dot(&v).sqrt();
        // Degenerate draws are astronomically unlikely; redraw if one happens.
        if norm > 1e-8 {
            basis.push(v / norm);
        }
    }
    let mut out = Array2::zeros((rows, dim));
    for (i, u) in basis.iter().enumerate() {
        out.row_mut(i).assign(u);
    }
    out
}
