//! Measurement outcome models.
//!
//! Two fidelities are provided. The distribution-level samplers draw estimates
//! directly from the variances that the single-parameter and GHZ protocols are
//! known to achieve; every protocol simulation uses these. The parity model
//! evolves a GHZ state analytically and samples parity outcomes; it exists to
//! confirm that the linear-combination variance is actually reached.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, max_abs, Real};

/// Counter-based random stream: `(seed, index)` always yields the same draws,
/// whichever thread consumes it and in whatever order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub index: u64,
}

impl RngStream {
    pub fn new(seed: u64, index: u64) -> Self {
        Self { seed, index }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.index);
        rng
    }
}

/// Independent Gaussian estimates `theta~_i ~ N(theta_i, variances_i)`.
pub fn sample_param_estimates<T: Real, R: Rng + ?Sized>(
    theta: &[T],
    variances: &[T],
    rng: &mut R,
) -> Result<Vec<T>> {
    if theta.len() != variances.len() {
        return Err(Error::DimensionMismatch { expected: theta.len(), got: variances.len() });
    }
    if let Some(i) = variances.iter().position(|v| !(*v >= T::zero()) || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("variance {i} is negative or not finite")));
    }
    Ok(theta
        .iter()
        .zip(variances)
        .map(|(&m, &v)| {
            let z = T::standard_normal(rng);
            if v == T::zero() {
                m
            } else {
                m + v.sqrt() * z
            }
        })
        .collect())
}

/// How the GHZ state's branches are spread over the sensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", rename_all = "kebab-case")]
pub enum GhzResource<T: Real> {
    /// Qubit `i` is left coupled for `tau_i = t |alpha_i| / max |alpha|`.
    Qubit { time: T, evolution_times: Vec<T> },
    /// Mode `i` carries `n_i ∝ |alpha_i|` of the `photons`.
    Photon { photons: u64, mode_counts: Vec<u64> },
}

/// GHZ state realizing a weighted sum `alpha . theta` as a relative phase.
/// Negative weights are realized by flipping that sensor's branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GhzSpec<T: Real> {
    pub weights: Vec<T>,
    pub sign_flips: Vec<bool>,
    pub resource: GhzResource<T>,
}

fn check_weights<T: Real>(weights: &[T]) -> Result<T> {
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidArgument("GHZ weights must be finite".into()));
    }
    let m = max_abs(weights);
    if m == T::zero() {
        return Err(Error::ZeroWeights);
    }
    Ok(m)
}

impl<T: Real> GhzSpec<T> {
    pub fn qubit(weights: Vec<T>, time: T) -> Result<Self> {
        let m = check_weights(&weights)?;
        if !(time > T::zero()) || !time.is_finite() {
            return Err(Error::NonPositiveResource(time.as_f64()));
        }
        let evolution_times = weights
            .iter()
            .map(|w| if w.abs() == m { time } else { time * w.abs() / m })
            .collect();
        let sign_flips = weights.iter().map(|w| *w < T::zero()).collect();
        Ok(Self { weights, sign_flips, resource: GhzResource::Qubit { time, evolution_times } })
    }

    pub fn photon(weights: Vec<T>, photons: u64) -> Result<Self> {
        let counts = photon_mode_counts(&weights, photons)?;
        let sign_flips = weights.iter().map(|w| *w < T::zero()).collect();
        Ok(Self {
            weights,
            sign_flips,
            resource: GhzResource::Photon { photons, mode_counts: counts.counts },
        })
    }

    /// Relative phase accumulated between the two GHZ branches.
    pub fn relative_phase(&self, theta: &[T]) -> Result<T> {
        if theta.len() != self.weights.len() {
            return Err(Error::DimensionMismatch { expected: self.weights.len(), got: theta.len() });
        }
        let per_sensor: Vec<T> = match &self.resource {
            GhzResource::Qubit { evolution_times, .. } => evolution_times.clone(),
            GhzResource::Photon { mode_counts, .. } => {
                mode_counts.iter().map(|&n| T::from_u64(n).expect("count fits scalar")).collect()
            }
        };
        Ok(per_sensor
            .iter()
            .zip(&self.sign_flips)
            .zip(theta)
            .map(|((&s, &flip), &th)| if flip { -s * th } else { s * th })
            .sum())
    }

    /// Phase per unit of `q = alpha . theta` (qubit case: `t / max |alpha|`).
    pub fn phase_per_unit(&self) -> T {
        match &self.resource {
            GhzResource::Qubit { time, .. } => *time / max_abs(&self.weights),
            GhzResource::Photon { mode_counts, .. } => {
                let total: u64 = mode_counts.iter().sum();
                T::from_u64(total).expect("count fits scalar") / self.weights.iter().map(|w| w.abs()).sum::<T>()
            }
        }
    }
}

/// `P(+1) = (1 + cos phi) / 2`
pub fn parity_probability<T: Real>(phase: T) -> T {
    let c = (phase / T::lit(2.0)).cos();
    c * c
}

/// Log-likelihood of a parity outcome (`+1` or `-1`) given the phase.
pub fn parity_log_likelihood<T: Real>(phase: T, outcome: i8) -> T {
    let half = phase / T::lit(2.0);
    let amp = if outcome > 0 { half.cos() } else { half.sin() };
    T::lit(2.0) * amp.abs().ln()
}

/// Independent parity outcomes after evolving the qubit GHZ state for its
/// configured time. Phase wrapping is not resolved: prior knowledge is assumed
/// to localize the phase.
pub fn ghz_parity_shots<T: Real, R: Rng + ?Sized>(
    spec: &GhzSpec<T>,
    theta: &[T],
    shots: usize,
    rng: &mut R,
) -> Result<Vec<i8>> {
    if !matches!(spec.resource, GhzResource::Qubit { .. }) {
        return Err(Error::InvalidArgument("parity shots are modeled for qubit sensors".into()));
    }
    if shots == 0 {
        return Err(Error::InvalidArgument("shots must be >= 1".into()));
    }
    let p = parity_probability(spec.relative_phase(theta)?).as_f64();
    Ok((0..shots).map(|_| if rng.random::<f64>() < p { 1 } else { -1 }).collect())
}

/// Per-shot classical Fisher information of the parity outcome about
/// `q = alpha . theta`, from central differences of the analytic log-likelihood.
pub fn parity_fisher_information<T: Real>(spec: &GhzSpec<T>, theta: &[T]) -> Result<T> {
    let k = spec.phase_per_unit();
    let q = dot(&spec.weights, theta);
    let h = T::lit(1e-5) / k;
    let two = T::lit(2.0);
    let mut info = T::zero();
    for outcome in [1i8, -1] {
        let p = if outcome > 0 {
            parity_probability(k * q)
        } else {
            T::one() - parity_probability(k * q)
        };
        let score = (parity_log_likelihood(k * (q + h), outcome)
            - parity_log_likelihood(k * (q - h), outcome))
            / (two * h);
        info += p * score * score;
    }
    Ok(info)
}

/// Resource for one linear-combination measurement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", rename_all = "kebab-case")]
pub enum LincombResource<T: Real> {
    Time(T),
    Photons(T),
}

/// Variance the optimal protocol reaches: `max alpha_i^2 / t^2` for qubits,
/// `||alpha||_1^2 / N^2` for photons.
pub fn lincomb_variance<T: Real>(weights: &[T], resource: LincombResource<T>) -> Result<T> {
    check_weights(weights)?;
    match resource {
        LincombResource::Time(t) => {
            if !(t > T::zero()) {
                return Err(Error::NonPositiveResource(t.as_f64()));
            }
            let m = max_abs(weights);
            Ok(m * m / (t * t))
        }
        LincombResource::Photons(n) => {
            if !(n > T::zero()) {
                return Err(Error::NonPositiveResource(n.as_f64()));
            }
            let l1: T = weights.iter().map(|w| w.abs()).sum();
            Ok(l1 * l1 / (n * n))
        }
    }
}

/// Unbiased estimate of `alpha . theta` drawn at the optimal variance.
pub fn lincomb_estimate<T: Real, R: Rng + ?Sized>(
    weights: &[T],
    theta: &[T],
    resource: LincombResource<T>,
    rng: &mut R,
) -> Result<T> {
    if weights.len() != theta.len() {
        return Err(Error::DimensionMismatch { expected: weights.len(), got: theta.len() });
    }
    let var = lincomb_variance(weights, resource)?;
    Ok(dot(weights, theta) + var.sqrt() * T::standard_normal(rng))
}

/// Integer apportionment: floors of `total * w_i / sum w`, then leftover units
/// by descending fractional part, ties to the lowest index.
pub fn largest_remainder<T: Real>(weights: &[T], total: u64) -> Result<Vec<u64>> {
    if weights.iter().any(|w| *w < T::zero() || !w.is_finite()) {
        return Err(Error::InvalidArgument("apportionment weights must be finite and >= 0".into()));
    }
    let sum: f64 = weights.iter().map(|w| w.as_f64()).sum();
    if sum == 0.0 {
        return Err(Error::ZeroWeights);
    }
    let quotas: Vec<f64> = weights.iter().map(|w| w.as_f64() / sum * total as f64).collect();
    let mut counts: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > T::zero()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).expect("finite quotas").then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned) as usize) {
        counts[i] += 1;
    }
    Ok(counts)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeCounts {
    pub counts: Vec<u64>,
    /// Some nonzero weight received no photon (`N` smaller than the number of
    /// nonzero weights).
    pub underfilled: bool,
}

/// Photons per mode for the proportionally weighted GHZ state: `n_i ∝ |alpha_i|`.
pub fn photon_mode_counts<T: Real>(weights: &[T], photons: u64) -> Result<ModeCounts> {
    let abs: Vec<T> = weights.iter().map(|w| w.abs()).collect();
    let counts = largest_remainder(&abs, photons)?;
    let underfilled = abs.iter().zip(&counts).any(|(w, n)| *w > T::zero() && *n == 0);
    Ok(ModeCounts { counts, underfilled })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    Qubit,
    Photon,
}

/// Relative phase of a mixed spin-photon GHZ state: `theta_i t` for each qubit
/// sensor plus `theta_i n_i` for each interferometer. No unit reconciliation is
/// attempted.
pub fn hybrid_phase<T: Real>(couplings: &[Coupling], theta: &[T], time: T, counts: &[Option<u64>]) -> Result<T> {
    if couplings.len() != theta.len() {
        return Err(Error::DimensionMismatch { expected: couplings.len(), got: theta.len() });
    }
    let mut phase = T::zero();
    for (i, (c, &th)) in couplings.iter().zip(theta).enumerate() {
        phase += match c {
            Coupling::Qubit => th * time,
            Coupling::Photon => {
                let n = counts
                    .get(i)
                    .copied()
                    .flatten()
                    .ok_or_else(|| Error::InvalidArgument(format!("missing photon count for sensor {i}")))?;
                th * T::from_u64(n).expect("count fits scalar")
            }
        };
    }
    Ok(phase)
}
