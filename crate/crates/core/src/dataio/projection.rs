use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{normalize_slice, RealVec, UnitVec};

/// Fixed seeded Gaussian map used to bring externally produced teacher
/// embeddings to the student's embedding dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomProjection {
    input_dim: usize,
    target_dim: usize,
    matrix: Vec<f64>,
}

impl RandomProjection {
    pub fn new(input_dim: usize, target_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || target_dim == 0 {
            return Err(Error::InvalidShape(format!(
                "projection {input_dim} → {target_dim} needs positive dims"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let matrix = (0..input_dim * target_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Ok(Self {
            input_dim,
            target_dim,
            matrix,
        })
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn apply(&self, v: &RealVec) -> Result<UnitVec> {
        if v.dim() != self.input_dim {
            return Err(Error::DimMismatch {
                expected: self.input_dim,
                found: v.dim(),
            });
        }
        let x = v.as_slice();
        let projected: Vec<f64> = self
            .matrix
            .chunks_exact(self.input_dim)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect();
        normalize_slice(&projected)
    }
}

pub fn fixed_random_projection(v: &RealVec, target_dim: usize, seed: u64) -> Result<UnitVec> {
    RandomProjection::new(v.dim(), target_dim, seed)?.apply(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_real(rng: &mut ChaCha8Rng, d: usize) -> RealVec {
        RealVec::new((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn deterministic_and_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_real(&mut rng, 50);
        let a = fixed_random_projection(&v, 16, 9).unwrap();
        let b = fixed_random_projection(&v, 16, 9).unwrap();
        let c = fixed_random_projection(&v, 16, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.dim(), 16);
        assert!((a.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_input_fails() {
        let v = RealVec::new(vec![0.0; 4]).unwrap();
        assert!(matches!(
            fixed_random_projection(&v, 3, 0),
            Err(Error::ZeroNorm { .. })
        ));
    }

    /// For unit inputs with cosine ρ, the projected cosine has standard
    /// deviation about (1 − ρ²)/√m. At 3σ we expect ≥ 99.7% of pairs inside;
    /// we require 97% to leave room for the approximation.
    #[test]
    fn pairwise_cosines_roughly_preserved() {
        let (d, m) = (64, 512);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let proj = RandomProjection::new(d, m, 77).unwrap();
        let inputs: Vec<UnitVec> = (0..100)
            .map(|_| normalize_slice(random_real(&mut rng, d).as_slice()).unwrap())
            .collect();
        let outputs: Vec<UnitVec> = inputs
            .iter()
            .map(|u| proj.apply(&RealVec::new(u.as_slice().to_vec()).unwrap()).unwrap())
            .collect();
        let (mut inside, mut total, mut sum_err) = (0usize, 0usize, 0.0);
        for i in 0..inputs.len() {
            for j in i + 1..inputs.len() {
                let rho: f64 = crate::tensor::dot(&inputs[i], &inputs[j]).unwrap();
                let est: f64 = crate::tensor::dot(&outputs[i], &outputs[j]).unwrap();
                let sigma = (1.0 - rho * rho) / (m as f64).sqrt();
                if (est - rho).abs() <= 3.0 * sigma {
                    inside += 1;
                }
                sum_err += est - rho;
                total += 1;
            }
        }
        assert!(inside as f64 / total as f64 >= 0.97, "{inside}/{total}");
        assert!((sum_err / total as f64).abs() < 0.01);
    }
}
