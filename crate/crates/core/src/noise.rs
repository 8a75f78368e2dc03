//! Reproducible Q-Wiener increments for families of independent agents.
//!
//! Each scalar Brownian motion `β_j^i` (agent `i`, mode `j`) owns its own
//! counter-based ChaCha stream. The key is derived from `(seed, path)` and the
//! stream id from `(channel, agent, mode)`; step `k` always reads the same
//! four 32-bit words of that stream. Any single increment can therefore be
//! regenerated in isolation, and the result never depends on which thread or
//! in which order agents are sampled.

use nalgebra::DVector;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::spectral::CovarianceSpectrum;

/// Uniform grid `t_k = kΔt` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        let mut bad = Vec::new();
        if !(horizon.is_finite() && horizon > 0.0) {
            bad.push(format!("grid horizon positive: T = {horizon}"));
        }
        if n_steps == 0 {
            bad.push("grid n_steps >= 1".to_string());
        }
        if bad.is_empty() {
            Ok(Self { horizon, n_steps })
        } else {
            Err(MfgError::Validation(bad))
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    /// Same horizon with `factor` times as many steps.
    pub fn refined(&self, factor: usize) -> Self {
        Self { horizon: self.horizon, n_steps: self.n_steps * factor }
    }
}

/// Independent streams drawn from one `(seed, path)` key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Increments = 0,
    InitialState = 1,
    Probe = 2,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A normal-variate stream for one `(seed, path, channel, agent, mode)` key.
pub struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    pub fn new(seed: u64, path: u64, channel: Channel, agent: u32, mode: u32) -> Self {
        let mut state = seed ^ path.rotate_left(32) ^ 0x6A09_E667_F3BC_C908;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        debug_assert!(mode < (1 << 24));
        rng.set_stream(((channel as u64) << 56) | ((agent as u64) << 24) | mode as u64);
        Self { rng }
    }

    /// Positions the stream at counter block `index` (four 32-bit words per index).
    pub fn seek(&mut self, index: u64) {
        self.rng.set_word_pos(index as u128 * 4);
    }

    /// Next standard normal by Box–Muller on exactly two 64-bit words.
    pub fn next_normal(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        let u1 = 1.0 - (self.rng.next_u64() >> 11) as f64 * SCALE;
        let u2 = (self.rng.next_u64() >> 11) as f64 * SCALE;
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Q-Wiener increments for a population of agents on one Monte Carlo path.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBatch {
    /// Layout `(agent, step, mode)`, mode fastest.
    increments: Vec<f64>,
    sqrt_lambda: Vec<f64>,
    n_agents: usize,
    n_steps: usize,
    dt: f64,
    pub seed: u64,
    pub path_index: u64,
}

impl NoiseBatch {
    pub fn from_increments(
        spectrum: &CovarianceSpectrum,
        grid: &TimeGrid,
        n_agents: usize,
        increments: Vec<f64>,
    ) -> Result<Self> {
        let want = n_agents * grid.n_steps() * spectrum.len();
        if increments.len() != want {
            return Err(MfgError::dims("noise batch increments", want, increments.len()));
        }
        Ok(Self {
            increments,
            sqrt_lambda: spectrum.eigenvalues().iter().map(|l| l.sqrt()).collect(),
            n_agents,
            n_steps: grid.n_steps(),
            dt: grid.dt(),
            seed: 0,
            path_index: 0,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_modes(&self) -> usize {
        self.sqrt_lambda.len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn offset(&self, agent: usize, step: usize) -> usize {
        (agent * self.n_steps + step) * self.n_modes()
    }

    /// `ΔW` of agent `agent` over step `step`, one entry per mode.
    pub fn increment(&self, agent: usize, step: usize) -> &[f64] {
        let o = self.offset(agent, step);
        &self.increments[o..o + self.n_modes()]
    }

    /// Brownian increments `Δβ_j = ΔW_j / √λ_j`.
    pub fn standard_increment(&self, agent: usize, step: usize, out: &mut [f64]) {
        for ((o, w), s) in out.iter_mut().zip(self.increment(agent, step)).zip(&self.sqrt_lambda) {
            *o = w / s;
        }
    }

    pub fn raw(&self) -> &[f64] {
        &self.increments
    }

    /// Batch on a grid `factor` times coarser, summing consecutive increments.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.n_steps.is_multiple_of(factor) {
            return Err(MfgError::dims("coarsening factor", format!("divisor of {}", self.n_steps), factor));
        }
        let r = self.n_modes();
        let steps = self.n_steps / factor;
        let mut inc = vec![0.0; self.n_agents * steps * r];
        for a in 0..self.n_agents {
            for k in 0..self.n_steps {
                let src = self.increment(a, k);
                let o = (a * steps + k / factor) * r;
                for j in 0..r {
                    inc[o + j] += src[j];
                }
            }
        }
        Ok(Self {
            increments: inc,
            sqrt_lambda: self.sqrt_lambda.clone(),
            n_agents: self.n_agents,
            n_steps: steps,
            dt: self.dt * factor as f64,
            seed: self.seed,
            path_index: self.path_index,
        })
    }

    /// Restriction to the first `n` agents; streams are keyed by agent index so
    /// this equals sampling `n` agents directly.
    pub fn first_agents(&self, n: usize) -> Result<Self> {
        if n > self.n_agents {
            return Err(MfgError::IndexOutOfRange { context: "NoiseBatch::first_agents", index: n, len: self.n_agents });
        }
        let len = n * self.n_steps * self.n_modes();
        Ok(Self { increments: self.increments[..len].to_vec(), n_agents: n, ..self.clone() })
    }
}

/// Samples `ΔW_{i,k,j} = √(λ_j Δt) Z` for `n_agents` agents on one path.
pub fn sample_increments(
    spectrum: &CovarianceSpectrum,
    grid: &TimeGrid,
    n_agents: usize,
    path_index: u64,
    seed: u64,
) -> NoiseBatch {
    sample_agent_range(spectrum, grid, 0..n_agents, path_index, seed)
}

/// Samples increments for agents `agents` only, stored densely from index 0.
pub fn sample_agent_range(
    spectrum: &CovarianceSpectrum,
    grid: &TimeGrid,
    agents: std::ops::Range<usize>,
    path_index: u64,
    seed: u64,
) -> NoiseBatch {
    let n_agents = agents.len();
    let r = spectrum.len();
    let steps = grid.n_steps();
    let dt = grid.dt();
    let scales: Vec<f64> = spectrum.eigenvalues().iter().map(|l| (l * dt).sqrt()).collect();
    let mut increments = vec![0.0; n_agents * steps * r];
    for (local, agent) in agents.enumerate() {
        for (j, scale) in scales.iter().enumerate() {
            let mut stream = NormalStream::new(seed, path_index, Channel::Increments, agent as u32, j as u32);
            for k in 0..steps {
                increments[(local * steps + k) * r + j] = scale * stream.next_normal();
            }
        }
    }
    NoiseBatch {
        increments,
        sqrt_lambda: spectrum.eigenvalues().iter().map(|l| l.sqrt()).collect(),
        n_agents,
        n_steps: steps,
        dt,
        seed,
        path_index,
    }
}

/// Initial states `ξ_i = ξ̄ + scale·Z_i`, keyed like the increments.
pub fn sample_initial_states(
    mean: &DVector<f64>,
    scale: f64,
    agents: std::ops::Range<usize>,
    path_index: u64,
    seed: u64,
) -> Vec<DVector<f64>> {
    agents
        .map(|agent| {
            if scale == 0.0 {
                return mean.clone();
            }
            let mut stream = NormalStream::new(seed, path_index, Channel::InitialState, agent as u32, 0);
            DVector::from_fn(mean.len(), |c, _| mean[c] + scale * stream.next_normal())
        })
        .collect()
}

/// Cumulative `W(t_k)` per mode for one agent, `W(0) = 0`.
pub fn wiener_path(batch: &NoiseBatch, agent: usize) -> Result<Vec<DVector<f64>>> {
    if agent >= batch.n_agents {
        return Err(MfgError::IndexOutOfRange { context: "wiener_path", index: agent, len: batch.n_agents });
    }
    let r = batch.n_modes();
    let mut w = DVector::zeros(r);
    let mut path = Vec::with_capacity(batch.n_steps + 1);
    path.push(w.clone());
    for k in 0..batch.n_steps {
        for (wj, inc) in w.iter_mut().zip(batch.increment(agent, k)) {
            *wj += inc;
        }
        path.push(w.clone());
    }
    Ok(path)
}
