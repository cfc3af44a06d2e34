//! Per-node beamformer updates shared by every training strategy.
//!
//! The updates are the scalar-weight WMMSE alternation: linear MMSE
//! receivers, per-stream weights `1 / mse`, and power-constrained
//! regularized precoders. Weighted sum rate is maximized through the
//! equivalent weighted-MSE minimization.

use nalgebra::{SymmetricEigen, SVD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FbError, Result};
use crate::linalg::{
    add_outer, add_outer_scaled, c, cholesky, cn_matrix, frobenius_sq, hermitian_part, log2_det_hpd,
    row_powers, scaled_identity, vec_norm_sq, CMat, CVec,
};
use crate::network::{Coupling, LinkChannels, Network, Node};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    PerBsTotal,
    PerAntenna,
}

/// Transmit budgets. The per-antenna constraint applies to BSs only; user
/// terminals always use a total budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerBudget {
    pub per_bs_power: f64,
    pub ue_power: f64,
    pub constraint: ConstraintKind,
}

impl Default for PowerBudget {
    fn default() -> Self {
        PowerBudget { per_bs_power: 1.0, ue_power: 1.0, constraint: ConstraintKind::PerBsTotal }
    }
}

impl PowerBudget {
    pub fn for_node(&self, node: Node) -> (f64, ConstraintKind) {
        match node {
            Node::Bs(_) => (self.per_bs_power, self.constraint),
            Node::Ue(_) => (self.ue_power, ConstraintKind::PerBsTotal),
        }
    }
}

/// Relative feasibility tolerance for the power constraints.
pub const POWER_TOLERANCE: f64 = 1e-8;
const BISECTION_TOLERANCE: f64 = 1e-9;
const MAX_BISECTION_STEPS: usize = 400;
const MAX_DUAL_ITERATIONS: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct BeamformerState {
    /// Per link, `tx_antennas x d`.
    pub precoders: Vec<CMat>,
    /// Per link, `rx_antennas x d`.
    pub receivers: Vec<CMat>,
    /// Per link and stream.
    pub weights: Vec<Vec<f64>>,
    pub budget: PowerBudget,
}

impl BeamformerState {
    /// Pairs `precoders` with the MMSE receivers and weights they induce
    /// under the true channels.
    pub fn evaluate(
        net: &Network,
        channels: &LinkChannels,
        precoders: Vec<CMat>,
        budget: PowerBudget,
        noise_power: f64,
    ) -> Result<Self> {
        let (receivers, weights) = receiver_step(net, channels, &precoders, noise_power, Coupling::Full)?;
        Ok(BeamformerState { precoders, receivers, weights, budget })
    }

    /// Sum of `log2(weight)` over all streams.
    pub fn objective(&self) -> f64 {
        self.weights.iter().flatten().map(|w| w.log2()).sum()
    }
}

// ---------------------------------------------------------------------------
// receivers and weights

/// `noise_power * I + sum h h^H` over the observed cascades.
pub fn receive_covariance(observed: &[CVec], noise_power: f64, dim: usize) -> CMat {
    let mut r = scaled_identity(dim, noise_power);
    for h in observed {
        add_outer(&mut r, h);
    }
    r
}

/// Linear MMSE receivers for the `desired` cascades against everything in
/// `observed` (which should include the desired cascades themselves).
pub fn mmse_receiver(observed: &[CVec], desired: &[&CVec], noise_power: f64) -> Result<CMat> {
    let dim = desired
        .first()
        .map(|h| h.len())
        .ok_or_else(|| FbError::InvalidParameter("no desired cascades".into()))?;
    let r = receive_covariance(observed, noise_power, dim);
    mmse_from_covariance(&r, desired)
}

fn mmse_from_covariance(r: &CMat, desired: &[&CVec]) -> Result<CMat> {
    let dim = r.nrows();
    let rhs = CMat::from_fn(dim, desired.len(), |i, s| desired[s][i]);
    Ok(cholesky(r, "receive covariance")?.solve(&rhs))
}

/// MSE of a single stream and its weight `1 / mse`.
///
/// `observed[desired]` is the stream's own cascade; every other entry is
/// interference.
pub fn stream_mse_and_weight(w: &CVec, observed: &[CVec], desired: usize, noise_power: f64) -> (f64, f64) {
    let mut mse = noise_power * vec_norm_sq(w);
    for (k, h) in observed.iter().enumerate() {
        let y = w.dotc(h);
        mse += if k == desired { (c(1.0, 0.0) - y).norm_sqr() } else { y.norm_sqr() };
    }
    (mse, 1.0 / mse)
}

/// Receivers and weights for every stream received at one node.
///
/// `desired[(link, s)]` indexes into `observed`.
pub(crate) fn node_receivers(
    observed: &[CVec],
    desired: &[Vec<usize>],
    noise_power: f64,
    dim: usize,
) -> Result<Vec<(CMat, Vec<f64>)>> {
    let r = receive_covariance(observed, noise_power, dim);
    let chol = cholesky(&r, "receive covariance")?;
    desired
        .iter()
        .map(|idx| {
            let rhs = CMat::from_fn(dim, idx.len(), |i, s| observed[idx[s]][i]);
            let w = chol.solve(&rhs);
            let weights = idx
                .iter()
                .enumerate()
                .map(|(s, &k)| stream_mse_and_weight(&w.column(s).into_owned(), observed, k, noise_power).1)
                .collect();
            Ok((w, weights))
        })
        .collect()
}

fn coupled(net: &Network, coupling: Coupling, rx: usize, tx: usize) -> bool {
    match coupling {
        Coupling::Full => true,
        Coupling::IntraCell => net.rx_cell(rx) == net.tx_cell(tx),
    }
}

/// MMSE receivers and weights from exact cascades.
pub fn receiver_step(
    net: &Network,
    channels: &LinkChannels,
    precoders: &[CMat],
    noise_power: f64,
    coupling: Coupling,
) -> Result<(Vec<CMat>, Vec<Vec<f64>>)> {
    let d = net.streams_per_user;
    let mut receivers = vec![CMat::zeros(0, 0); net.num_links()];
    let mut weights = vec![Vec::new(); net.num_links()];
    for rx in 0..net.rx_nodes().len() {
        let mut observed = Vec::new();
        let mut position = vec![usize::MAX; net.num_links()];
        for link in 0..net.num_links() {
            let tx = net.link_tx(link);
            if !coupled(net, coupling, rx, tx) {
                continue;
            }
            position[link] = observed.len();
            let cascade = channels.get(rx, tx) * &precoders[link];
            for s in 0..d {
                observed.push(cascade.column(s).into_owned());
            }
        }
        let links = net.rx_links(rx);
        let desired: Vec<Vec<usize>> =
            links.iter().map(|&l| (0..d).map(|s| position[l] + s).collect()).collect();
        let out = node_receivers(&observed, &desired, noise_power, net.rx_antennas(rx))?;
        for (&link, (w, wt)) in links.iter().zip(out) {
            receivers[link] = w;
            weights[link] = wt;
        }
    }
    Ok((receivers, weights))
}

// ---------------------------------------------------------------------------
// precoders

/// Weighted uplink cascades observed at one transmitter.
#[derive(Clone, Debug, Default)]
pub struct WeightedUplinkCsi {
    /// `(g, weight)` for every stream entering the weighted covariance,
    /// including the transmitter's own streams.
    pub terms: Vec<(CVec, f64)>,
    /// `(g, weight)` for the transmitter's own streams, in precoder column order.
    pub own: Vec<(CVec, f64)>,
}

impl WeightedUplinkCsi {
    pub fn covariance(&self, dim: usize) -> CMat {
        weighted_covariance(dim, &self.terms)
    }
}

pub fn weighted_covariance(dim: usize, terms: &[(CVec, f64)]) -> CMat {
    let mut a = CMat::zeros(dim, dim);
    for (g, w) in terms {
        add_outer_scaled(&mut a, g, *w);
    }
    a
}

pub fn precoder_update(csi: &WeightedUplinkCsi, power: f64, kind: ConstraintKind) -> Result<CMat> {
    let dim = csi
        .own
        .first()
        .map(|(g, _)| g.len())
        .ok_or_else(|| FbError::InvalidParameter("transmitter has no own streams".into()))?;
    solve_precoders(&csi.covariance(dim), &csi.own, power, kind)
}

/// Columns `(A + mu D)^-1 w_s g_s` meeting the transmit budget.
pub fn solve_precoders(a: &CMat, own: &[(CVec, f64)], power: f64, kind: ConstraintKind) -> Result<CMat> {
    if !(power > 0.0) {
        return Err(FbError::InvalidParameter(format!("transmit power must be positive, got {power}")));
    }
    let dim = a.nrows();
    let b = CMat::from_fn(dim, own.len(), |i, s| own[s].0[i] * own[s].1);
    match kind {
        ConstraintKind::PerBsTotal => solve_total_power(a, &b, power).map(|(m, _)| m),
        ConstraintKind::PerAntenna => solve_per_antenna(a, &b, power),
    }
}

/// Smallest `mu >= 0` with `|(A + mu I)^-1 B|^2 <= power`, by bisection in
/// the eigenbasis of `A`.
pub fn solve_total_power(a: &CMat, b: &CMat, power: f64) -> Result<(CMat, f64)> {
    let eig = SymmetricEigen::new(hermitian_part(a));
    let lambda: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let u = eig.eigenvectors;
    let coeff = u.adjoint() * b;
    let energy: Vec<f64> = (0..coeff.nrows())
        .map(|i| coeff.row(i).iter().map(|z| z.norm_sqr()).sum())
        .collect();
    let total: f64 = energy.iter().sum();
    if total == 0.0 {
        return Ok((CMat::zeros(a.nrows(), b.ncols()), 0.0));
    }
    let lmax = lambda.iter().cloned().fold(0.0, f64::max);
    let null = 1e-12 * lmax.max(f64::MIN_POSITIVE);
    let power_at = |mu: f64| -> f64 {
        lambda
            .iter()
            .zip(&energy)
            .map(|(&l, &e)| {
                let den = l + mu;
                if den <= null {
                    0.0
                } else {
                    e / (den * den)
                }
            })
            .sum()
    };
    let build = |mu: f64| -> CMat {
        let mut scaled = coeff.clone();
        for (i, &l) in lambda.iter().enumerate() {
            let den = l + mu;
            let f = if den <= null { 0.0 } else { 1.0 / den };
            scaled.row_mut(i).scale_mut(f);
        }
        &u * scaled
    };
    // range components with a vanishing eigenvalue make mu = 0 infeasible
    let unbounded_at_zero = lambda
        .iter()
        .zip(&energy)
        .any(|(&l, &e)| l <= null && e > 1e-20 * total);
    if !unbounded_at_zero && power_at(0.0) <= power {
        return Ok((build(0.0), 0.0));
    }
    let mut lo = 0.0;
    let mut hi = (total / power).sqrt() * 1e-3;
    let mut steps = 0;
    while power_at(hi) > power {
        lo = hi;
        hi *= 2.0;
        steps += 1;
        if !hi.is_finite() || steps > MAX_BISECTION_STEPS {
            return Err(FbError::NumericFailure {
                context: "precoder power bisection",
                detail: format!("no feasible upper bracket (total {total:e}, power {power:e}, last mu {hi:e})"),
            });
        }
    }
    steps = 0;
    while hi - lo > BISECTION_TOLERANCE * hi {
        let mid = 0.5 * (lo + hi);
        if power_at(mid) > power {
            lo = mid;
        } else {
            hi = mid;
        }
        steps += 1;
        if steps > MAX_BISECTION_STEPS {
            return Err(FbError::NumericFailure {
                context: "precoder power bisection",
                detail: format!("bracket [{lo:e}, {hi:e}] did not shrink"),
            });
        }
    }
    Ok((build(hi), hi))
}

/// Per-antenna budgets `power / M` via damped fixed-point ascent on the
/// diagonal duals, then a final uniform scaling onto the feasible set.
fn solve_per_antenna(a: &CMat, b: &CMat, power: f64) -> Result<CMat> {
    let dim = a.nrows();
    let p_ant = power / dim as f64;
    let trace: f64 = (0..dim).map(|i| a[(i, i)].re).sum();
    let floor = 1e-12 * (trace / dim as f64).max(f64::MIN_POSITIVE);
    let diag: Vec<f64> = (0..dim).map(|i| a[(i, i)].re.max(0.0)).collect();

    let solve = |duals: &[f64]| -> Result<(CMat, f64)> {
        let mut reg = a.clone();
        for i in 0..dim {
            reg[(i, i)] += c(duals[i].max(floor), 0.0);
        }
        let m = cholesky(&reg, "per-antenna precoder")?.solve(b);
        let dual = -(b.adjoint() * &m).trace().re - p_ant * duals.iter().sum::<f64>();
        Ok((m, dual))
    };

    let (_, mu) = solve_total_power(a, b, power)?;
    let mut duals = vec![mu; dim];
    let (mut m, mut dual) = solve(&duals)?;
    for _ in 0..MAX_DUAL_ITERATIONS {
        let p = row_powers(&m);
        let excess = p.iter().map(|&x| (x - p_ant) / p_ant).fold(f64::NEG_INFINITY, f64::max);
        let slack_ok = p
            .iter()
            .zip(&duals)
            .all(|(&x, &l)| l <= floor || ((x - p_ant) / p_ant).abs() <= BISECTION_TOLERANCE);
        if excess <= BISECTION_TOLERANCE && slack_ok {
            break;
        }
        let target: Vec<f64> = (0..dim)
            .map(|i| ((diag[i] + duals[i]) * (p[i] / p_ant).sqrt() - diag[i]).max(0.0))
            .collect();
        let mut step = 1.0;
        let mut accepted = false;
        while step > 1e-6 {
            let trial: Vec<f64> = duals.iter().zip(&target).map(|(&l, &t)| l + step * (t - l)).collect();
            let (m_trial, d_trial) = solve(&trial)?;
            if d_trial >= dual - 1e-15 * dual.abs() {
                duals = trial;
                m = m_trial;
                dual = d_trial;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let worst = row_powers(&m).into_iter().fold(0.0, f64::max);
    if worst > p_ant {
        m.scale_mut((p_ant / worst).sqrt());
    }
    Ok(m)
}

/// Assembles the weighted uplink cascades of transmitter `tx` from exact
/// channels and the current receivers and weights.
fn exact_uplink_csi(
    net: &Network,
    channels: &LinkChannels,
    tx: usize,
    receivers: &[CMat],
    weights: &[Vec<f64>],
    coupling: Coupling,
) -> WeightedUplinkCsi {
    let mut csi = WeightedUplinkCsi::default();
    let own = net.tx_links(tx);
    for link in 0..net.num_links() {
        let rx = net.link_rx(link);
        if !coupled(net, coupling, rx, tx) {
            continue;
        }
        let g = channels.get(rx, tx).adjoint() * &receivers[link];
        for s in 0..net.streams_per_user {
            let gs = g.column(s).into_owned();
            if own.contains(&link) {
                csi.own.push((gs.clone(), weights[link][s]));
            }
            csi.terms.push((gs, weights[link][s]));
        }
    }
    // own streams in link order, matching tx_links
    csi
}

/// Writes a transmitter's stacked precoder columns back into per-link blocks.
pub(crate) fn scatter_precoders(net: &Network, tx: usize, stacked: &CMat, precoders: &mut [CMat]) {
    let d = net.streams_per_user;
    for (k, &link) in net.tx_links(tx).iter().enumerate() {
        precoders[link] = stacked.columns(k * d, d).into_owned();
    }
}

pub fn transmitter_step(
    net: &Network,
    channels: &LinkChannels,
    receivers: &[CMat],
    weights: &[Vec<f64>],
    budget: &PowerBudget,
    coupling: Coupling,
) -> Result<Vec<CMat>> {
    let mut precoders = vec![CMat::zeros(0, 0); net.num_links()];
    for tx in 0..net.tx_nodes().len() {
        let csi = exact_uplink_csi(net, channels, tx, receivers, weights, coupling);
        let (power, kind) = budget.for_node(net.tx_nodes()[tx]);
        let stacked = precoder_update(&csi, power, kind)?;
        scatter_precoders(net, tx, &stacked, &mut precoders);
    }
    Ok(precoders)
}

// ---------------------------------------------------------------------------
// initialization and feasibility

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "seed")]
pub enum InitKind {
    /// Dominant right singular vectors of the direct channel.
    DominantSingular,
    Random(u64),
}

pub fn initial_precoders(
    net: &Network,
    channels: &LinkChannels,
    budget: &PowerBudget,
    init: InitKind,
) -> Result<Vec<CMat>> {
    let d = net.streams_per_user;
    let mut precoders = Vec::with_capacity(net.num_links());
    let mut rng = match init {
        InitKind::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        InitKind::DominantSingular => None,
    };
    for link in 0..net.num_links() {
        let tx = net.link_tx(link);
        let h = channels.get(net.link_rx(link), tx);
        let m_tx = h.ncols();
        if d > m_tx.min(h.nrows()) {
            return Err(FbError::InvalidParameter(format!(
                "{d} streams exceed the {}x{m_tx} link rank",
                h.nrows()
            )));
        }
        let dirs = match rng.as_mut() {
            Some(rng) => cn_matrix(rng, m_tx, d, 1.0),
            None => {
                let svd = SVD::new(h.clone(), false, true);
                let v_t = svd.v_t.ok_or_else(|| FbError::NumericFailure {
                    context: "initial precoder",
                    detail: "SVD did not return right singular vectors".into(),
                })?;
                CMat::from_fn(m_tx, d, |i, s| v_t[(s, i)].conj())
            }
        };
        let (power, _) = budget.for_node(net.tx_nodes()[tx]);
        let streams_at_tx = net.tx_links(tx).len() * d;
        let per_stream = power / streams_at_tx as f64;
        let mut m = dirs;
        for mut col in m.column_iter_mut() {
            let n = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            col.scale_mut(per_stream.sqrt() / n);
        }
        precoders.push(m);
    }
    if budget.constraint == ConstraintKind::PerAntenna {
        for tx in 0..net.tx_nodes().len() {
            if let Node::Bs(_) = net.tx_nodes()[tx] {
                let p_ant = budget.per_bs_power / net.bs_antennas as f64;
                let worst = antenna_powers(net, tx, &precoders).into_iter().fold(0.0, f64::max);
                if worst > p_ant {
                    for &link in net.tx_links(tx) {
                        precoders[link].scale_mut((p_ant / worst).sqrt());
                    }
                }
            }
        }
    }
    Ok(precoders)
}

fn antenna_powers(net: &Network, tx: usize, precoders: &[CMat]) -> Vec<f64> {
    let mut p = vec![0.0; net.tx_antennas(tx)];
    for &link in net.tx_links(tx) {
        for (i, x) in row_powers(&precoders[link]).into_iter().enumerate() {
            p[i] += x;
        }
    }
    p
}

/// Largest relative budget excess over all transmitters (0 when feasible).
pub fn power_violation(net: &Network, precoders: &[CMat], budget: &PowerBudget) -> f64 {
    let mut worst: f64 = 0.0;
    for tx in 0..net.tx_nodes().len() {
        let (power, kind) = budget.for_node(net.tx_nodes()[tx]);
        match kind {
            ConstraintKind::PerBsTotal => {
                let used: f64 = net.tx_links(tx).iter().map(|&l| frobenius_sq(&precoders[l])).sum();
                worst = worst.max((used - power) / power);
            }
            ConstraintKind::PerAntenna => {
                let p_ant = power / net.tx_antennas(tx) as f64;
                for x in antenna_powers(net, tx, precoders) {
                    worst = worst.max((x - p_ant) / p_ant);
                }
            }
        }
    }
    worst.max(0.0)
}

pub fn transmit_power(net: &Network, tx: usize, precoders: &[CMat]) -> f64 {
    net.tx_links(tx).iter().map(|&l| frobenius_sq(&precoders[l])).sum()
}

// ---------------------------------------------------------------------------
// rates

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateReport {
    pub total: f64,
    pub per_link: Vec<f64>,
}

/// `log2 det(I + Q^-1 H M M^H H^H)` per link with every other stream in the
/// network counted as interference.
pub fn sum_rate(net: &Network, channels: &LinkChannels, precoders: &[CMat], noise_power: f64) -> Result<RateReport> {
    let mut per_link = vec![0.0; net.num_links()];
    for rx in 0..net.rx_nodes().len() {
        let dim = net.rx_antennas(rx);
        let mut total_cov = scaled_identity(dim, noise_power);
        let mut own_cov = Vec::new();
        for link in 0..net.num_links() {
            let cascade = channels.get(rx, net.link_tx(link)) * &precoders[link];
            let cov = &cascade * cascade.adjoint();
            total_cov += &cov;
            if net.link_rx(link) == rx {
                own_cov.push((link, cov));
            }
        }
        let ld_total = log2_det_hpd(&total_cov, "sum-rate covariance")?;
        for (link, cov) in own_cov {
            let interference = hermitian_part(&(&total_cov - cov));
            per_link[link] = ld_total - log2_det_hpd(&interference, "interference covariance")?;
        }
    }
    Ok(RateReport { total: per_link.iter().sum(), per_link })
}

/// Per-stream `log2(1 + SINR)` with MMSE receivers, treating every other
/// stream (including the same user's) as interference.
pub fn stream_rates(net: &Network, channels: &LinkChannels, precoders: &[CMat], noise_power: f64) -> Result<Vec<Vec<f64>>> {
    let d = net.streams_per_user;
    let mut rates = vec![Vec::new(); net.num_links()];
    for rx in 0..net.rx_nodes().len() {
        let dim = net.rx_antennas(rx);
        let mut cov = scaled_identity(dim, noise_power);
        let mut own = Vec::new();
        for link in 0..net.num_links() {
            let cascade = channels.get(rx, net.link_tx(link)) * &precoders[link];
            for s in 0..d {
                add_outer(&mut cov, &cascade.column(s).into_owned());
            }
            if net.link_rx(link) == rx {
                own.push((link, cascade));
            }
        }
        let chol = cholesky(&cov, "stream-rate covariance")?;
        for (link, cascade) in own {
            rates[link] = (0..d)
                .map(|s| {
                    let h = cascade.column(s).into_owned();
                    let q = h.dotc(&chol.solve(&h)).re.clamp(0.0, 1.0);
                    -(1.0 - q).max(f64::MIN_POSITIVE).log2()
                })
                .collect();
        }
    }
    Ok(rates)
}

/// Per-stream weighted-sum-rate objective (uniform weights).
pub fn stream_objective(net: &Network, channels: &LinkChannels, precoders: &[CMat], noise_power: f64) -> Result<f64> {
    Ok(stream_rates(net, channels, precoders, noise_power)?.iter().flatten().sum())
}

// ---------------------------------------------------------------------------
// full-CSI references

#[derive(Clone, Debug)]
pub struct WmmseRun {
    pub state: BeamformerState,
    /// Objective `sum log2(weight)` at iteration 0 (initial point) and after
    /// every completed iteration.
    pub trace: Vec<f64>,
    pub precoder_history: Vec<Vec<CMat>>,
}

/// Full-CSI alternating WMMSE from the given starting precoders.
pub fn wmmse_from(
    net: &Network,
    channels: &LinkChannels,
    budget: &PowerBudget,
    noise_power: f64,
    start: Vec<CMat>,
    max_iter: usize,
    tol: f64,
    coupling: Coupling,
) -> Result<WmmseRun> {
    let mut precoders = start;
    let (mut receivers, mut weights) = receiver_step(net, channels, &precoders, noise_power, coupling)?;
    let objective = |w: &[Vec<f64>]| w.iter().flatten().map(|x| x.log2()).sum::<f64>();
    let mut trace = vec![objective(&weights)];
    let mut history = vec![precoders.clone()];
    for _ in 0..max_iter {
        precoders = transmitter_step(net, channels, &receivers, &weights, budget, coupling)?;
        let (r, w) = receiver_step(net, channels, &precoders, noise_power, coupling)?;
        receivers = r;
        weights = w;
        let value = objective(&weights);
        let prev = *trace.last().unwrap();
        trace.push(value);
        history.push(precoders.clone());
        if (value - prev).abs() <= tol * prev.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(WmmseRun {
        state: BeamformerState { precoders, receivers, weights, budget: *budget },
        trace,
        precoder_history: history,
    })
}

pub fn wmmse_centralized(
    net: &Network,
    channels: &LinkChannels,
    budget: &PowerBudget,
    noise_power: f64,
    max_iter: usize,
    tol: f64,
) -> Result<WmmseRun> {
    let start = initial_precoders(net, channels, budget, InitKind::DominantSingular)?;
    wmmse_from(net, channels, budget, noise_power, start, max_iter, tol, Coupling::Full)
}

pub const BASELINE_MAX_ITER: usize = 200;
pub const BASELINE_TOL: f64 = 1e-6;

/// Per-cell WMMSE that ignores inter-cell interference while designing; the
/// returned receivers and weights are re-evaluated under the true
/// interference.
pub fn uncoordinated_baseline(
    net: &Network,
    channels: &LinkChannels,
    budget: &PowerBudget,
    noise_power: f64,
) -> Result<BeamformerState> {
    let start = initial_precoders(net, channels, budget, InitKind::DominantSingular)?;
    let run = wmmse_from(
        net,
        channels,
        budget,
        noise_power,
        start,
        BASELINE_MAX_ITER,
        BASELINE_TOL,
        Coupling::IntraCell,
    )?;
    BeamformerState::evaluate(net, channels, run.state.precoders, *budget, noise_power)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cn_vector, identity};

    fn e1(n: usize) -> CVec {
        CVec::from_fn(n, |i, _| if i == 0 { c(1.0, 0.0) } else { c(0.0, 0.0) })
    }

    #[test]
    fn unit_cascade_receiver_is_half() {
        let h = e1(2);
        let w = mmse_receiver(std::slice::from_ref(&h), &[&h], 1.0).unwrap();
        assert!((w.column(0) - h.clone() * c(0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn large_noise_tends_to_matched_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = cn_vector(&mut rng, 3, 1.0);
        let noise = 1e8;
        let w = mmse_receiver(std::slice::from_ref(&h), &[&h], noise).unwrap();
        let mf = &h * c(1.0 / noise, 0.0);
        assert!((w.column(0) - &mf).norm() / mf.norm() < 1e-7);
    }

    #[test]
    fn zero_receiver_has_unit_mse() {
        let h = e1(2);
        let (mse, w) = stream_mse_and_weight(&CVec::zeros(2), &[h], 0, 0.3);
        assert_eq!((mse, w), (1.0, 1.0));
    }

    #[test]
    fn mse_scale_invariance_at_mmse() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let obs: Vec<CVec> = (0..3).map(|_| cn_vector(&mut rng, 2, 1.0)).collect();
        let base = |scale: f64| {
            let o: Vec<CVec> = obs.iter().map(|h| h * c(scale.sqrt(), 0.0)).collect();
            let w = mmse_receiver(&o, &[&o[0]], 0.2 * scale).unwrap();
            stream_mse_and_weight(&w.column(0).into_owned(), &o, 0, 0.2 * scale).0
        };
        assert!((base(1.0) - base(7.5)).abs() < 1e-12);
    }

    #[test]
    fn matched_direction_full_power() {
        let g = e1(2);
        let m = solve_precoders(&weighted_covariance(2, &[(g.clone(), 2.0)]), &[(g, 2.0)], 0.5, ConstraintKind::PerBsTotal)
            .unwrap();
        assert!(m[(1, 0)].norm() < 1e-15);
        assert!((frobenius_sq(&m) - 0.5).abs() < 1e-8 * 0.5);
    }

    #[test]
    fn inactive_budget_gives_zero_multiplier() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g: Vec<CVec> = (0..4).map(|_| cn_vector(&mut rng, 3, 1.0)).collect();
        let terms: Vec<(CVec, f64)> = g.iter().map(|x| (x.clone(), 1.0)).collect();
        let a = weighted_covariance(3, &terms);
        let b = CMat::from_fn(3, 1, |i, _| g[0][i]);
        let (m, mu) = solve_total_power(&a, &b, 1e6).unwrap();
        assert_eq!(mu, 0.0);
        let direct = cholesky(&a, "t").unwrap().solve(&b);
        assert!((m - direct).norm() < 1e-10);
    }

    #[test]
    fn active_budget_is_met() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..50 {
            let g: Vec<CVec> = (0..6).map(|_| cn_vector(&mut rng, 4, 1.0)).collect();
            let terms: Vec<(CVec, f64)> = g.iter().enumerate().map(|(i, x)| (x.clone(), 1.0 + i as f64)).collect();
            let a = weighted_covariance(4, &terms);
            let own = &terms[..3];
            let power = 1e-3 * (1 + trial) as f64;
            let m = solve_precoders(&a, own, power, ConstraintKind::PerBsTotal).unwrap();
            let used = frobenius_sq(&m);
            assert!(used <= power * (1.0 + POWER_TOLERANCE));
            assert!((used - power).abs() <= POWER_TOLERANCE * power, "{used} vs {power}");
        }
    }

    #[test]
    fn per_antenna_budget_is_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let g: Vec<CVec> = (0..5).map(|_| cn_vector(&mut rng, 4, 1.0)).collect();
            let terms: Vec<(CVec, f64)> = g.iter().map(|x| (x.clone(), 2.0)).collect();
            let a = weighted_covariance(4, &terms);
            let m = solve_precoders(&a, &terms[..2], 0.01, ConstraintKind::PerAntenna).unwrap();
            for p in row_powers(&m) {
                assert!(p <= 0.01 / 4.0 * (1.0 + POWER_TOLERANCE));
            }
        }
    }

    #[test]
    fn rank_deficient_covariance_single_user() {
        // one stream, M = 2: A is rank one
        let g = CVec::from_vec(vec![c(0.6, 0.0), c(0.0, 0.8)]);
        let a = weighted_covariance(2, &[(g.clone(), 1.0)]);
        let m = solve_precoders(&a, &[(g.clone(), 1.0)], 4.0, ConstraintKind::PerBsTotal).unwrap();
        // min-norm solution g / |g|^2 with unit power < 4
        assert!((m.column(0) - &g).norm() < 1e-10);
        let m = solve_precoders(&a, &[(g.clone(), 1.0)], 0.25, ConstraintKind::PerBsTotal).unwrap();
        assert!((frobenius_sq(&m) - 0.25).abs() < 1e-9);
        assert!(crate::linalg::cosine_similarity(&m.column(0).into_owned(), &g) > 1.0 - 1e-12);
    }

    #[test]
    fn covariance_includes_noise() {
        let r = receive_covariance(&[], 0.5, 3);
        assert_eq!(r, identity(3) * c(0.5, 0.0));
    }
}
