//! Precoded pilot transmission, effective-channel estimation and direct
//! least-squares filter estimation.
//!
//! Pilot sequences are ideal orthonormal codes. After despreading, the
//! estimate on sequence `q` is the sum of every cascade sent on `q` plus an
//! equivalent Gaussian term of variance `noise / (seq_length * pilot_power)`.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FbError, Result};
use crate::linalg::{c, cholesky, cn_matrix, cn_vector, identity, CMat, CVec};
use crate::network::{LinkChannels, Network};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotPolicy {
    Orthogonal,
    RandomReuse,
}

/// How backward-phase receivers learn the other streams' MSE weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightCarriage {
    /// Scalar weights delivered error-free over the backhaul.
    Backhaul,
    /// A second precoded backward pilot carrying `sqrt(weight) * filter`.
    ExtraPilot,
}

impl WeightCarriage {
    pub fn backward_pilots_per_stream(self) -> usize {
        match self {
            WeightCarriage::Backhaul => 1,
            WeightCarriage::ExtraPilot => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotPlan {
    pub seq_length: usize,
    /// Stream id to sequence index.
    pub assignment: Vec<usize>,
    pub pool_size: usize,
    /// Pilot energy relative to the stream's data power.
    pub pilot_power: f64,
}

pub fn allocate_pilots(
    num_streams: usize,
    pool_size: usize,
    policy: PilotPolicy,
    seed: u64,
) -> Result<PilotPlan> {
    if pool_size == 0 {
        return Err(FbError::InvalidParameter("pilot pool must hold at least one sequence".into()));
    }
    let assignment = match policy {
        PilotPolicy::Orthogonal => {
            if pool_size < num_streams {
                return Err(FbError::InfeasiblePlan { streams: num_streams, pool: pool_size });
            }
            (0..num_streams).collect()
        }
        PilotPolicy::RandomReuse => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..num_streams).map(|_| rng.random_range(0..pool_size)).collect()
        }
    };
    Ok(PilotPlan { seq_length: pool_size, assignment, pool_size, pilot_power: 1.0 })
}

impl PilotPlan {
    pub fn with_seq_length(mut self, seq_length: usize) -> Result<Self> {
        if seq_length < self.pool_size {
            return Err(FbError::InvalidParameter(format!(
                "sequence length {seq_length} cannot carry {} orthogonal codes",
                self.pool_size
            )));
        }
        self.seq_length = seq_length;
        Ok(self)
    }

    pub fn with_pilot_power(mut self, pilot_power: f64) -> Result<Self> {
        if !(pilot_power > 0.0) {
            return Err(FbError::InvalidParameter("pilot power must be positive".into()));
        }
        self.pilot_power = pilot_power;
        Ok(self)
    }

    pub fn is_injective(&self) -> bool {
        let mut seen = vec![false; self.pool_size];
        self.assignment.iter().all(|&q| !std::mem::replace(&mut seen[q], true))
    }

    pub fn sequence_of(&self, stream: usize) -> usize {
        self.assignment[stream]
    }

    pub fn estimation_noise_variance(&self, noise_power: f64) -> f64 {
        noise_power / (self.seq_length as f64 * self.pilot_power)
    }
}

/// Per-sequence effective-channel estimates held by one observing node.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveCsi {
    /// `(sequence, estimate)` sorted by sequence; unused sequences are absent.
    pub estimates: Vec<(usize, CVec)>,
    pub noise_variance: f64,
}

impl EffectiveCsi {
    pub fn get(&self, seq: usize) -> Option<&CVec> {
        self.estimates
            .binary_search_by_key(&seq, |(q, _)| *q)
            .ok()
            .map(|i| &self.estimates[i].1)
    }

    /// The estimate carrying `stream`, contaminated by anything sharing its
    /// sequence.
    pub fn for_stream(&self, plan: &PilotPlan, stream: usize) -> Option<&CVec> {
        self.get(plan.sequence_of(stream))
    }

    pub fn vectors(&self) -> impl Iterator<Item = &CVec> {
        self.estimates.iter().map(|(_, v)| v)
    }
}

fn collect_sequences<R: Rng>(
    acc: Vec<Option<CVec>>,
    noise_variance: f64,
    rng: &mut R,
) -> EffectiveCsi {
    let estimates = acc
        .into_iter()
        .enumerate()
        .filter_map(|(q, v)| v.map(|v| (q, v)))
        .map(|(q, mut v)| {
            if noise_variance > 0.0 {
                v += cn_vector(rng, v.len(), noise_variance);
            }
            (q, v)
        })
        .collect();
    EffectiveCsi { estimates, noise_variance }
}

fn accumulate(acc: &mut [Option<CVec>], q: usize, v: CVec) {
    match &mut acc[q] {
        Some(x) => *x += v,
        slot @ None => *slot = Some(v),
    }
}

/// Forward phase: every transmitter sends one precoded pilot per stream and
/// every receiver estimates the per-sequence cascades `H m`.
pub fn observe_forward(
    net: &Network,
    channels: &LinkChannels,
    precoders: &[CMat],
    plan: &PilotPlan,
    noise_power: f64,
    seed: u64,
) -> Vec<EffectiveCsi> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let var = plan.estimation_noise_variance(noise_power);
    (0..net.rx_nodes().len())
        .map(|rx| {
            let mut acc = vec![None; plan.pool_size];
            for link in 0..net.num_links() {
                let h = channels.get(rx, net.link_tx(link));
                let cascade = h * &precoders[link];
                for s in 0..net.streams_per_user {
                    let q = plan.sequence_of(net.stream_id(link, s));
                    accumulate(&mut acc, q, cascade.column(s).into_owned());
                }
            }
            collect_sequences(acc, var, &mut rng)
        })
        .collect()
}

/// What a transmitting node learns in the backward phase.
#[derive(Clone, Debug, PartialEq)]
pub struct BackwardCsi {
    /// Busy-burst responses `H^H w` (one pilot per stream).
    pub busy_burst: EffectiveCsi,
    /// Weighted responses `sqrt(weight) H^H w`, present with extra-pilot carriage.
    pub weighted: Option<EffectiveCsi>,
}

/// Backward phase: receivers send pilots precoded with their filters over the
/// reciprocal channel. A pilot precoded with `conj(w)` through `H^T` arrives
/// as `H^T conj(w)`; the transmitter conjugates it to get `H^H w`.
pub fn observe_backward(
    net: &Network,
    channels: &LinkChannels,
    receivers: &[CMat],
    weights: &[Vec<f64>],
    plan: &PilotPlan,
    noise_power: f64,
    carriage: WeightCarriage,
    seed: u64,
) -> Vec<BackwardCsi> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let var = plan.estimation_noise_variance(noise_power);
    (0..net.tx_nodes().len())
        .map(|tx| {
            let mut bb = vec![None; plan.pool_size];
            let mut weighted = vec![None; plan.pool_size];
            for link in 0..net.num_links() {
                let uplink = channels.get(net.link_rx(link), tx).transpose();
                let received = (&uplink * receivers[link].map(|z| z.conj())).map(|z| z.conj());
                for s in 0..net.streams_per_user {
                    let q = plan.sequence_of(net.stream_id(link, s));
                    let g = received.column(s).into_owned();
                    if carriage == WeightCarriage::ExtraPilot {
                        accumulate(&mut weighted, q, &g * c(weights[link][s].sqrt(), 0.0));
                    }
                    accumulate(&mut bb, q, g);
                }
            }
            let busy_burst = collect_sequences(bb, var, &mut rng);
            let weighted = (carriage == WeightCarriage::ExtraPilot)
                .then(|| collect_sequences(weighted, var, &mut rng));
            BackwardCsi { busy_burst, weighted }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regularization {
    None,
    /// Load the diagonal by `1e-6 * trace / dim` when the sample covariance
    /// is ill-conditioned.
    DiagonalLoading,
}

const ILL_CONDITIONED: f64 = 1e-12;

/// Least-squares filter `W = X Y^H (Y Y^H)^-1` minimizing `|X - W Y|^2`.
///
/// `received` is `antennas x symbols`, `local_pilot` is `streams x symbols`;
/// the result is `streams x antennas`, so the receive filter of stream `s`
/// is the conjugate of row `s`.
pub fn direct_filter_estimate(
    received: &CMat,
    local_pilot: &CMat,
    regularization: Regularization,
) -> Result<CMat> {
    let (antennas, symbols) = received.shape();
    if local_pilot.ncols() != symbols {
        return Err(FbError::InvalidParameter(format!(
            "pilot has {} symbols, samples have {symbols}",
            local_pilot.ncols()
        )));
    }
    if symbols < antennas {
        return Err(FbError::InvalidParameter(format!(
            "{symbols} symbols cannot fit a {antennas}-antenna filter"
        )));
    }
    let mut cov = received * received.adjoint();
    let cross = local_pilot * received.adjoint();
    let well_conditioned = |m: &CMat| -> bool {
        cholesky(m, "sample covariance")
            .map(|ch| {
                let d: Vec<f64> = (0..antennas).map(|i| ch.l_dirty()[(i, i)].re.powi(2)).collect();
                let max = d.iter().cloned().fold(0.0, f64::max);
                let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
                max > 0.0 && min / max > ILL_CONDITIONED
            })
            .unwrap_or(false)
    };
    if !well_conditioned(&cov) {
        match regularization {
            Regularization::None => {
                return Err(FbError::Singular("sample covariance is rank deficient".into()))
            }
            Regularization::DiagonalLoading => {
                let trace: f64 = (0..antennas).map(|i| cov[(i, i)].re).sum();
                let load = 1e-6 * trace / antennas as f64;
                let load = if load > 0.0 { load } else { 1e-12 };
                cov += identity(antennas) * c(load, 0.0);
            }
        }
    }
    // W cov = cross  <=>  cov W^H = cross^H (cov is Hermitian)
    let w_h = cholesky(&cov, "sample covariance")?.solve(&cross.adjoint());
    Ok(w_h.adjoint())
}

/// Unit-modulus QPSK pilot symbols, `streams x symbols`.
pub fn qpsk_pilots<R: Rng>(rng: &mut R, streams: usize, symbols: usize) -> CMat {
    let points = [c(1.0, 1.0), c(1.0, -1.0), c(-1.0, 1.0), c(-1.0, -1.0)];
    let scale = c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    CMat::from_fn(streams, symbols, |_, _| *points.choose(rng).unwrap() * scale)
}

/// A synchronous multi-cell pilot burst seen by one receiver: every cell's
/// transmitter sends its own independently chosen pilot on one stream.
#[derive(Clone, Debug)]
pub struct SynchronousScene {
    /// `antennas x symbols`.
    pub received: CMat,
    /// The served transmitter's pilot, `1 x symbols`.
    pub local_pilot: CMat,
    /// Cascade of every transmitter at the receiver; index 0 is the served one.
    pub cascades: Vec<CVec>,
    pub noise_power: f64,
}

impl SynchronousScene {
    pub fn generate<R: Rng>(
        rng: &mut R,
        cells: usize,
        antennas: usize,
        symbols: usize,
        interference_gain: f64,
        noise_power: f64,
    ) -> Self {
        let cascades: Vec<CVec> = (0..cells)
            .map(|i| {
                let g = if i == 0 { 1.0 } else { interference_gain };
                cn_vector(rng, antennas, g)
            })
            .collect();
        let pilots: Vec<CMat> = (0..cells).map(|_| qpsk_pilots(rng, 1, symbols)).collect();
        let mut received = cn_matrix(rng, antennas, symbols, noise_power);
        for (h, x) in cascades.iter().zip(&pilots) {
            received += h * x;
        }
        SynchronousScene { received, local_pilot: pilots[0].clone(), cascades, noise_power }
    }
}
