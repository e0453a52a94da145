//! Overdamped Langevin dynamics `dX = −∇V(X) dt + √(2/β) dW`, integrated with
//! Euler–Maruyama.
//!
//! The integrator never clamps states to the domain; only grid-based
//! consumers drop states that leave the box.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::BoxDomain;
use crate::potential::Potential;
use crate::rng::{Stream, StreamTag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub beta: f64,
    pub dt: f64,
    /// Lag time after rounding to a whole number of steps.
    pub tau: f64,
    pub seed: u64,
    pub domain: BoxDomain,
    /// Set when the requested lag was not a multiple of `dt`.
    pub tau_rounded: bool,
}

impl SimulationConfig {
    pub fn new(beta: f64, dt: f64, tau: f64, seed: u64, domain: BoxDomain) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::config("beta", format!("must be positive, got {beta}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::config("dt", format!("must be positive, got {dt}")));
        }
        if !(tau >= dt && tau.is_finite()) {
            return Err(Error::config("tau", format!("must be >= dt = {dt}, got {tau}")));
        }
        let steps = (tau / dt).round();
        let rounded = steps * dt;
        Ok(Self {
            beta,
            dt,
            tau: rounded,
            seed,
            domain,
            tau_rounded: (rounded - tau).abs() > 1e-12 * tau,
        })
    }

    /// Integrator steps per lag time.
    pub fn lag_steps(&self) -> usize {
        (self.tau / self.dt).round() as usize
    }

    pub fn noise_scale(&self) -> f64 {
        (2.0 * self.dt / self.beta).sqrt()
    }
}

/// Sampled path; `states` is stored flat, `dim` values per state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<f64>,
    dim: usize,
    /// Time between consecutive stored states.
    pub dt: f64,
}

impl Trajectory {
    pub fn new(states: Vec<f64>, dim: usize, dt: f64) -> Result<Self> {
        if dim == 0 || states.len() % dim != 0 {
            return Err(Error::Degenerate(format!(
                "{} values cannot be split into states of dimension {dim}",
                states.len()
            )));
        }
        if states.len() / dim < 2 {
            return Err(Error::Degenerate("trajectory needs at least two states".into()));
        }
        Ok(Self { states, dim, dt })
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.states.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.states
    }
}

/// Empirical transition density `p^τ(start, ·)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointCloud {
    pub start: Vec<f64>,
    endpoints: Vec<f64>,
    pub tau: f64,
    pub seed: u64,
}

impl EndpointCloud {
    pub fn new(start: Vec<f64>, endpoints: Vec<f64>, tau: f64, seed: u64) -> Result<Self> {
        let d = start.len();
        if d == 0 || endpoints.len() % d != 0 {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: endpoints.len(),
            });
        }
        if endpoints.is_empty() {
            return Err(Error::Empty("endpoint cloud"));
        }
        Ok(Self {
            start,
            endpoints,
            tau,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.start.len()
    }

    pub fn len(&self) -> usize {
        self.endpoints.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.endpoints.is_empty()
    }

    pub fn endpoint(&self, l: usize) -> &[f64] {
        let d = self.dim();
        &self.endpoints[l * d..(l + 1) * d]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.endpoints.chunks_exact(self.dim())
    }
}

/// One Euler–Maruyama step: `x − ∇V(x)·dt + √(2dt/β)·noise`.
pub fn euler_maruyama_step<P: Potential + ?Sized>(
    potential: &P,
    config: &SimulationConfig,
    x: &[f64],
    noise: &[f64],
) -> Result<Vec<f64>> {
    let n = potential.dim();
    if x.len() != n || noise.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.len().min(noise.len()),
        });
    }
    let mut out = x.to_vec();
    let mut grad = vec![0.0; n];
    advance(potential, &mut out, &mut grad, noise, config.dt, config.noise_scale());
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::BlowUp {
            step: 0,
            state: x.to_vec(),
        })
    }
}

#[inline(always)]
fn advance<P: Potential + ?Sized>(
    potential: &P,
    x: &mut [f64],
    grad: &mut [f64],
    noise: &[f64],
    dt: f64,
    scale: f64,
) {
    potential.gradient(x, grad);
    for ((xi, gi), zi) in x.iter_mut().zip(grad.iter()).zip(noise) {
        *xi += -gi * dt + scale * zi;
    }
}

/// Simulates `n_steps` steps from `start`, drops the first `burn_in`, and
/// keeps every `stride`-th of the remaining states.
///
/// With `stride = 1` the result holds exactly `n_steps − burn_in` states.
pub fn long_trajectory<P: Potential + ?Sized>(
    potential: &P,
    config: &SimulationConfig,
    start: &[f64],
    n_steps: usize,
    burn_in: usize,
    stride: usize,
) -> Result<Trajectory> {
    if n_steps <= burn_in {
        return Err(Error::config(
            "n_steps",
            format!("must exceed burn_in = {burn_in}, got {n_steps}"),
        ));
    }
    if stride == 0 {
        return Err(Error::config("record_stride", "must be positive"));
    }
    let n = potential.dim();
    if start.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: start.len(),
        });
    }
    let kept = (n_steps - burn_in) / stride;
    let mut states = Vec::with_capacity(kept * n);
    let mut stream = Stream::new(config.seed, StreamTag::Trajectory, 0, 0);
    let mut x = start.to_vec();
    let mut grad = vec![0.0; n];
    let mut noise = vec![0.0; n];
    let scale = config.noise_scale();
    for step in 1..=n_steps {
        stream.fill_normal(&mut noise);
        advance(potential, &mut x, &mut grad, &noise, config.dt, scale);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::BlowUp {
                step,
                state: x.clone(),
            });
        }
        if step > burn_in && (step - burn_in) % stride == 0 {
            states.extend_from_slice(&x);
        }
    }
    Trajectory::new(states, n, config.dt * stride as f64)
}

/// How endpoint noise is shared between different starting points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseCoupling {
    /// Endpoint `l` of every start is driven by the same Brownian increments
    /// (stream keyed by `(seed, l)`), i.e. common random numbers.
    Common,
    /// Every `(start index, l)` pair gets its own stream.
    Independent,
}

impl std::str::FromStr for NoiseCoupling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "common" => Ok(Self::Common),
            "independent" => Ok(Self::Independent),
            other => Err(Error::config(
                "coupling",
                format!("expected `common` or `independent`, got `{other}`"),
            )),
        }
    }
}

const COMMON_START: u64 = u64::MAX;

/// Draws endpoint clouds of a fixed size `m` for arbitrary starts.
///
/// In [`NoiseCoupling::Common`] mode the Brownian increments for all `m`
/// paths are generated once and replayed for every start.
pub struct EndpointSampler<'a, P: Potential + ?Sized> {
    potential: &'a P,
    config: SimulationConfig,
    m: usize,
    coupling: NoiseCoupling,
    bank: Option<Vec<f64>>,
}

impl<'a, P: Potential + ?Sized> EndpointSampler<'a, P> {
    pub fn new(
        potential: &'a P,
        config: SimulationConfig,
        m: usize,
        coupling: NoiseCoupling,
    ) -> Result<Self> {
        if m == 0 {
            return Err(Error::config("m", "endpoint count must be at least 1"));
        }
        let bank = match coupling {
            NoiseCoupling::Common => {
                let per_path = config.lag_steps() * potential.dim();
                let mut bank = vec![0.0; m * per_path];
                bank.par_chunks_mut(per_path)
                    .enumerate()
                    .for_each(|(l, chunk)| {
                        Stream::new(config.seed, StreamTag::Endpoint, l as u64, COMMON_START)
                            .fill_normal(chunk)
                    });
                Some(bank)
            }
            NoiseCoupling::Independent => None,
        };
        Ok(Self {
            potential,
            config,
            m,
            coupling,
            bank,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn coupling(&self) -> NoiseCoupling {
        self.coupling
    }

    /// Cloud of `m` endpoints after `τ/dt` steps from `start`.
    /// `start_index` only matters for independent coupling.
    pub fn sample(&self, start: &[f64], start_index: u64) -> Result<EndpointCloud> {
        let n = self.potential.dim();
        if start.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: start.len(),
            });
        }
        let steps = self.config.lag_steps();
        let dt = self.config.dt;
        let scale = self.config.noise_scale();
        let mut endpoints = Vec::with_capacity(self.m * n);
        let mut x = vec![0.0; n];
        let mut grad = vec![0.0; n];
        let mut own_noise = Vec::new();
        for l in 0..self.m {
            let noise: &[f64] = match &self.bank {
                Some(bank) => &bank[l * steps * n..(l + 1) * steps * n],
                None => {
                    own_noise.resize(steps * n, 0.0);
                    Stream::new(self.config.seed, StreamTag::Endpoint, l as u64, start_index)
                        .fill_normal(&mut own_noise);
                    &own_noise
                }
            };
            x.copy_from_slice(start);
            for z in noise.chunks_exact(n) {
                advance(self.potential, &mut x, &mut grad, z, dt, scale);
            }
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::BlowUp {
                    step: steps,
                    state: start.to_vec(),
                });
            }
            endpoints.extend_from_slice(&x);
        }
        EndpointCloud::new(start.to_vec(), endpoints, self.config.tau, self.config.seed)
    }

    /// Clouds for many starts in parallel; start `k` uses start index `k`.
    pub fn sample_many(&self, starts: &[Vec<f64>]) -> Result<Vec<EndpointCloud>> {
        self.sample_many_from(starts, 0)
    }

    /// As [`Self::sample_many`], with start indices `first, first + 1, …`.
    pub fn sample_many_from(&self, starts: &[Vec<f64>], first: u64) -> Result<Vec<EndpointCloud>> {
        starts
            .par_iter()
            .enumerate()
            .map(|(k, s)| self.sample(s, first + k as u64))
            .collect()
    }
}

/// Single cloud with independent per-endpoint streams derived from
/// `(config.seed, start_index, l)`.
pub fn sample_endpoint_cloud<P: Potential + ?Sized>(
    potential: &P,
    config: &SimulationConfig,
    start: &[f64],
    start_index: u64,
    m: usize,
) -> Result<EndpointCloud> {
    EndpointSampler::new(potential, config.clone(), m, NoiseCoupling::Independent)?
        .sample(start, start_index)
}
