//! Coarse-to-fine merge of the per-level attentional maps.

use rand::Rng;

use crate::error::{Error, Result};
use crate::math::{Conv2d, Tensor3};
use crate::params::{ParamSlot, Parameters};

/// `merges[0]` acts on the coarsest level, `merges[1]` on the middle level plus
/// the coarse result; `projection` is a 1×1 map to the output channels.
#[derive(Clone, Debug, PartialEq)]
pub struct RefineParams {
    pub merges: Vec<Conv2d>,
    pub projection: Conv2d,
}

impl RefineParams {
    pub fn zeros(channels: usize, out_channels: usize) -> Self {
        RefineParams {
            merges: (0..2)
                .map(|_| Conv2d::zeros(channels, channels, 3).expect("odd kernel"))
                .collect(),
            projection: Conv2d::zeros(channels, out_channels, 1).expect("odd kernel"),
        }
    }

    pub fn init<R: Rng>(channels: usize, out_channels: usize, rng: &mut R) -> Self {
        RefineParams {
            merges: (0..2)
                .map(|_| Conv2d::glorot(channels, channels, 3, rng).expect("odd kernel"))
                .collect(),
            projection: Conv2d::glorot(channels, out_channels, 1, rng).expect("odd kernel"),
        }
    }

    /// Identity merges and projection: the output is the plain sum of levels.
    pub fn identity(channels: usize) -> Self {
        RefineParams {
            merges: (0..2)
                .map(|_| Conv2d::identity(channels, 3).expect("odd kernel"))
                .collect(),
            projection: Conv2d::identity(channels, 1).expect("odd kernel"),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.projection.out_channels()
    }
}

impl Parameters for RefineParams {
    fn slots<'a>(&'a self, prefix: &str, out: &mut Vec<ParamSlot<&'a [f64]>>) {
        self.merges.slots(&format!("{prefix}.merges"), out);
        self.projection.slots(&format!("{prefix}.projection"), out);
    }

    fn slots_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamSlot<&'a mut [f64]>>) {
        self.merges.slots_mut(&format!("{prefix}.merges"), out);
        self.projection
            .slots_mut(&format!("{prefix}.projection"), out);
    }
}

#[derive(Clone, Debug)]
pub struct RefineCache {
    coarse_in: Tensor3,
    mid_in: Tensor3,
    fine_in: Tensor3,
}

/// `r₂ = conv(L₂)`, `r₁ = conv(L₁ + r₂)`, `out = proj(L₀ + r₁)`.
pub fn refine(levels: &[Tensor3], p: &RefineParams) -> Result<Tensor3> {
    refine_forward(levels, p).map(|(t, _)| t)
}

pub fn refine_forward(levels: &[Tensor3], p: &RefineParams) -> Result<(Tensor3, RefineCache)> {
    if levels.len() != 3 || p.merges.len() != 2 {
        return Err(Error::Config(format!(
            "refinement needs 3 levels and 2 merges, got {} and {}",
            levels.len(),
            p.merges.len()
        )));
    }
    levels[1].ensure_same_shape(&levels[0], "refine level 1")?;
    levels[2].ensure_same_shape(&levels[0], "refine level 2")?;
    let coarse_in = levels[2].clone();
    let r2 = p.merges[0].forward(&coarse_in)?;
    let mid_in = levels[1].add(&r2);
    let r1 = p.merges[1].forward(&mid_in)?;
    let fine_in = levels[0].add(&r1);
    let out = p.projection.forward(&fine_in)?;
    Ok((
        out,
        RefineCache {
            coarse_in,
            mid_in,
            fine_in,
        },
    ))
}

/// Gradients with respect to the three input levels, finest first.
pub fn refine_backward(
    cache: &RefineCache,
    p: &RefineParams,
    d_out: &Tensor3,
    grad: &mut RefineParams,
) -> [Tensor3; 3] {
    let d_fine = p
        .projection
        .backward(&cache.fine_in, d_out, &mut grad.projection);
    let d_mid = p.merges[1].backward(&cache.mid_in, &d_fine, &mut grad.merges[1]);
    let d_coarse = p.merges[0].backward(&cache.coarse_in, &d_mid, &mut grad.merges[0]);
    [d_fine, d_mid, d_coarse]
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn levels(seed: u64) -> Vec<Tensor3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..3)
            .map(|_| Tensor3::from_fn(4, 4, 2, |_, _, _| rng.gen_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn identity_sums_levels() {
        let l = levels(1);
        let out = refine(&l, &RefineParams::identity(2)).unwrap();
        let sum = l[0].add(&l[1]).add(&l[2]);
        for (a, b) in out.data().iter().zip(sum.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_merges_project_finest_only() {
        let l = levels(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = RefineParams::init(2, 3, &mut rng);
        p.merges = vec![
            Conv2d::zeros(2, 2, 3).unwrap(),
            Conv2d::zeros(2, 2, 3).unwrap(),
        ];
        let out = refine(&l, &p).unwrap();
        assert_eq!(out, p.projection.forward(&l[0]).unwrap());
    }

    #[test]
    fn wrong_level_count_is_config_error() {
        let l = levels(3);
        assert!(matches!(
            refine(&l[..2], &RefineParams::identity(2)),
            Err(Error::Config(_))
        ));
    }
}
