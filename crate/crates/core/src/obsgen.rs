//! Synthetic observations from a nature run: fixed random networks, window
//! schedules, Gaussian noise, perturbed initial conditions.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::assim::{GaussianDiag, ObservationBatch};
use crate::error::{check_len, Error, Result};
use crate::scalar::Scalar;
use crate::trajectory::Trajectory;

/// Which in-window steps carry observations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObsTiming {
    /// Steps `every_k, 2·every_k, …` up to the window length.
    AfterStart,
    /// Steps `0, every_k, …` strictly before the window length.
    FromStart,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsNetwork {
    /// Sorted, unique observed components.
    pub indices: Vec<usize>,
    pub every_k: usize,
    /// Noise SD per observed component (same order as `indices`).
    pub noise_sd: Vec<f64>,
    pub seed: u64,
    pub timing: ObsTiming,
}

/// Decorrelates a `(seed, stream)` pair into a single RNG seed.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finaliser over a golden-ratio combination
    let mut z = seed
        ^ stream
            .wrapping_add(0x9e37_79b9_7f4a_7c15)
            .wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, stream))
}

const NETWORK_STREAM: u64 = 0x6e65_7477;
const IC_STREAM: u64 = 0x6963;

impl ObsNetwork {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.every_k == 0 {
            return Err(Error::contract("observation interval must be at least 1"));
        }
        if self.indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract(
                "observation indices must be strictly increasing",
            ));
        }
        if self.indices.last().is_some_and(|&i| i >= dim) {
            return Err(Error::contract(format!(
                "observation index beyond state dimension {dim}"
            )));
        }
        check_len(
            "observation noise SDs",
            self.indices.len(),
            self.noise_sd.len(),
        )?;
        if self.noise_sd.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::contract(
                "observation noise SD must be finite and ≥ 0",
            ));
        }
        Ok(())
    }

    /// In-window observation steps for a window of `window_steps`.
    pub fn times(&self, window_steps: usize) -> Vec<usize> {
        match self.timing {
            ObsTiming::AfterStart => (1..)
                .map(|i| i * self.every_k)
                .take_while(|&t| t <= window_steps)
                .collect(),
            ObsTiming::FromStart => (0..window_steps).step_by(self.every_k).collect(),
        }
    }
}

/// Uniformly random network of `n_obs` distinct components, fixed for an
/// experiment. Uses the same noise SD on every component.
pub fn draw_network(
    dim: usize,
    n_obs: usize,
    every_k: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<ObsNetwork> {
    if n_obs == 0 || n_obs > dim {
        return Err(Error::contract(format!(
            "cannot observe {n_obs} of {dim} components"
        )));
    }
    let mut rng = rng_for(seed, NETWORK_STREAM);
    let mut indices = sample(&mut rng, dim, n_obs).into_vec();
    indices.sort_unstable();
    let net = ObsNetwork {
        indices,
        every_k,
        noise_sd: vec![noise_sd; n_obs],
        seed,
        timing: ObsTiming::AfterStart,
    };
    net.validate(dim)?;
    Ok(net)
}

/// Observations of the window starting at nature step `start`. Noise is
/// drawn from a stream keyed by `(network seed, window)`, so a given window
/// always yields the same batch. `error` is the observation-error
/// covariance assumed by the assimilation.
pub fn sample_obs<T: Scalar>(
    nature: &Trajectory<T>,
    net: &ObsNetwork,
    start: usize,
    window_steps: usize,
    window: u64,
    error: GaussianDiag<T>,
) -> Result<ObservationBatch<T>> {
    net.validate(nature.dim())?;
    let times = net.times(window_steps);
    if let Some(&last) = times.last() {
        if start + last >= nature.len() {
            return Err(Error::contract(format!(
                "window at step {start} needs {} nature states, have {}",
                start + last + 1,
                nature.len()
            )));
        }
    }
    let mut rng = rng_for(net.seed, window);
    let mut values = Vec::with_capacity(times.len() * net.indices.len());
    for &t in &times {
        let truth = nature.state(start + t);
        for (&i, &sd) in net.indices.iter().zip(&net.noise_sd) {
            let eps: f64 = rng.sample(StandardNormal);
            values.push(truth[i] + T::lit(sd * eps));
        }
    }
    ObservationBatch::new(times, net.indices.clone(), values, error)
}

/// `truth + N(0, sd²)` componentwise, reproducible per seed.
pub fn perturb_ic<T: Scalar>(truth: &[T], sd: f64, seed: u64) -> Result<Vec<T>> {
    if !(sd.is_finite() && sd >= 0.0) {
        return Err(Error::contract("perturbation SD must be finite and ≥ 0"));
    }
    let mut rng = rng_for(seed, IC_STREAM);
    Ok(truth
        .iter()
        .map(|&x| {
            let eps: f64 = rng.sample(StandardNormal);
            x + T::lit(sd * eps)
        })
        .collect())
}

/// As [`perturb_ic`] with a separate SD per component.
pub fn perturb_ic_scaled<T: Scalar>(truth: &[T], sd: &[f64], seed: u64) -> Result<Vec<T>> {
    check_len("perturbation SDs", truth.len(), sd.len())?;
    let mut rng = rng_for(seed, IC_STREAM);
    Ok(truth
        .iter()
        .zip(sd)
        .map(|(&x, &s)| {
            let eps: f64 = rng.sample(StandardNormal);
            x + T::lit(s * eps)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_network_and_cardinality() {
        let all = draw_network(10, 10, 1, 0.5, 4).unwrap();
        assert_eq!(all.indices, (0..10).collect::<Vec<_>>());
        let half = draw_network(36, 18, 5, 0.5, 7).unwrap();
        assert_eq!(half.indices.len(), 18);
        assert!(half.indices.windows(2).all(|w| w[0] < w[1]));
        assert!(draw_network(5, 6, 1, 0.5, 1).is_err());
        assert!(draw_network(5, 0, 1, 0.5, 1).is_err());
    }

    #[test]
    fn schedule_conventions() {
        let mut net = draw_network(6, 3, 3, 0.0, 1).unwrap();
        assert_eq!(net.times(6), vec![3, 6]);
        assert_eq!(net.times(10), vec![3, 6, 9]);
        net.timing = ObsTiming::FromStart;
        assert_eq!(net.times(6), vec![0, 3]);
    }

    #[test]
    fn noiseless_observations_equal_truth() {
        let nature = Trajectory::from_flat(4, (0..40).map(|v| v as f64).collect()).unwrap();
        let net = draw_network(4, 2, 2, 0.0, 3).unwrap();
        let batch = sample_obs(
            &nature,
            &net,
            2,
            4,
            0,
            GaussianDiag::uniform(2, 1.0).unwrap(),
        )
        .unwrap();
        assert_eq!(batch.times, vec![2, 4]);
        for (ti, &t) in batch.times.iter().enumerate() {
            for (j, &i) in batch.indices.iter().enumerate() {
                assert_eq!(batch.value(ti, j), nature.state(2 + t)[i]);
            }
        }
    }

    #[test]
    fn same_window_same_batch() {
        let nature = Trajectory::from_flat(3, (0..60).map(|v| (v as f64).sin()).collect()).unwrap();
        let net = draw_network(3, 2, 1, 0.3, 11).unwrap();
        let r = GaussianDiag::uniform(2, 1.0).unwrap();
        let a = sample_obs(&nature, &net, 0, 5, 7, r.clone()).unwrap();
        let b = sample_obs(&nature, &net, 0, 5, 7, r.clone()).unwrap();
        let c = sample_obs(&nature, &net, 0, 5, 8, r).unwrap();
        assert_eq!(a.values, b.values);
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn ic_perturbation() {
        let x = vec![1.0, 2.0, 3.0];
        assert_eq!(perturb_ic(&x, 0.0, 5).unwrap(), x);
        assert_eq!(
            perturb_ic(&x, 1.0, 5).unwrap(),
            perturb_ic(&x, 1.0, 5).unwrap()
        );
        assert_ne!(perturb_ic(&x, 1.0, 5).unwrap(), x);
        assert!(perturb_ic(&x, -1.0, 5).is_err());
    }
}
