//! Forward-backward training rounds for the signaling strategies.
//!
//! Every round starts with a forward phase in which all transmitters send
//! demodulation pilots precoded with their current data precoders. What
//! happens next depends on the strategy:
//!
//! * `A`: all receivers update, send busy-burst (and optionally weight)
//!   pilots, and all transmitters update in parallel.
//! * `B`: one cell per round (or every cell, with the parallel schedule)
//!   runs several internal WMMSE iterations against whitened out-of-cell
//!   interference, with over-the-air weights for the leakage terms.
//! * `C (simplified)`: every cell runs the internal iterations in parallel
//!   with leakage weights shared over an ideal backhaul.
//! * `D`: like `A` with a single backward pilot per stream and unit weights
//!   assumed for every stream the transmitter does not serve.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beamforming::{
    initial_precoders, node_receivers, scatter_precoders, solve_precoders, stream_objective, sum_rate,
    uncoordinated_baseline, weighted_covariance, wmmse_from, BeamformerState, InitKind, PowerBudget,
};
use crate::error::{FbError, Result};
use crate::linalg::{add_outer, add_outer_scaled, cholesky, cn_matrix, scaled_identity, CMat, CVec};
use crate::metrics::effective_throughput;
use crate::network::{Coupling, Direction, LinkChannels, Network};
use crate::pilots::{
    allocate_pilots, observe_backward, observe_forward, BackwardCsi, EffectiveCsi, PilotPlan, PilotPolicy,
    WeightCarriage,
};
use crate::seeds::{derive_seed, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    A,
    B,
    C,
    D,
    Uncoordinated,
    Centralized,
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Strategy::A => "A",
            Strategy::B => "B",
            Strategy::C => "C (simplified)",
            Strategy::D => "D",
            Strategy::Uncoordinated => "uncoordinated",
            Strategy::Centralized => "centralized",
        }
    }

    /// Pilot symbols spent per stream in one round.
    pub fn pilots_per_stream(self, carriage: WeightCarriage) -> usize {
        match self {
            Strategy::A => 1 + carriage.backward_pilots_per_stream(),
            Strategy::B => 3,
            Strategy::C | Strategy::D => 2,
            Strategy::Uncoordinated | Strategy::Centralized => 0,
        }
    }

    pub fn is_over_the_air(self) -> bool {
        !matches!(self, Strategy::Uncoordinated | Strategy::Centralized)
    }
}

/// Pilots per stream of the round that `Scenario::gamma` is quoted for.
pub const REFERENCE_PILOTS_PER_STREAM: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsiModel {
    /// Exact effective channels over orthogonal pilots.
    Perfect,
    /// Orthogonal pilots with estimation noise.
    Noisy,
    /// Random pilot reuse with estimation noise.
    Contaminated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Duplex {
    AllDl,
    DynamicTdd { p_ul: f64 },
}

/// Which cells run internal iterations in a Strategy-B round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellSchedule {
    /// One cell per round in ascending index order.
    RoundRobin,
    Parallel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub strategy: Strategy,
    /// Number of F-B rounds `T`.
    pub iterations: usize,
    /// Resource fraction of one round with three pilots per stream; each
    /// strategy is charged in proportion to its own pilot count.
    pub gamma: f64,
    pub csi_model: CsiModel,
    pub duplex: Duplex,
    pub inner_iters: usize,
    pub weight_carriage: WeightCarriage,
    pub cell_schedule: CellSchedule,
    pub budget: PowerBudget,
    pub init: InitKind,
    /// Pilot sequences available; defaults to the stream count.
    pub pilot_pool: Option<usize>,
    /// Defaults to the pool size.
    pub seq_length: Option<usize>,
    pub pilot_power: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            strategy: Strategy::A,
            iterations: 10,
            gamma: 0.01,
            csi_model: CsiModel::Perfect,
            duplex: Duplex::AllDl,
            inner_iters: 10,
            weight_carriage: WeightCarriage::ExtraPilot,
            cell_schedule: CellSchedule::RoundRobin,
            budget: PowerBudget::default(),
            init: InitKind::DominantSingular,
            pilot_pool: None,
            seq_length: None,
            pilot_power: 1.0,
        }
    }
}

impl Scenario {
    /// Violations that do not depend on a particular drop.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            v.push(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if let Duplex::DynamicTdd { p_ul } = self.duplex {
            if !(0.0..=1.0).contains(&p_ul) {
                v.push(format!("p_ul must lie in [0, 1], got {p_ul}"));
            }
            if self.strategy == Strategy::C {
                v.push("strategy c relies on BS backhaul and requires duplex all_dl".into());
            }
            if self.strategy == Strategy::A && self.weight_carriage == WeightCarriage::Backhaul {
                v.push("dynamic_tdd has no backhaul towards users; use weight_carriage extra_pilot".into());
            }
        }
        if matches!(self.strategy, Strategy::B | Strategy::C) && self.inner_iters == 0 {
            v.push("inner_iters must be at least 1".into());
        }
        if !(self.budget.per_bs_power > 0.0) {
            v.push(format!("per_bs_power must be positive, got {}", self.budget.per_bs_power));
        }
        if !(self.budget.ue_power > 0.0) {
            v.push(format!("ue_power must be positive, got {}", self.budget.ue_power));
        }
        if !(self.pilot_power > 0.0) {
            v.push(format!("pilot_power must be positive, got {}", self.pilot_power));
        }
        if self.pilot_pool == Some(0) {
            v.push("pilot_pool must be positive".into());
        }
        if let (Some(len), Some(pool)) = (self.seq_length, self.pilot_pool) {
            if len < pool {
                v.push(format!("seq_length {len} is shorter than pilot_pool {pool}"));
            }
        }
        v
    }

    /// Violations that need the stream count.
    pub fn plan_violations(&self, num_streams: usize) -> Vec<String> {
        let pool = self.pilot_pool.unwrap_or(num_streams);
        let mut v = Vec::new();
        if self.csi_model != CsiModel::Contaminated && pool < num_streams {
            v.push(format!(
                "orthogonal pilots need a pool of at least {num_streams} sequences (streams = K*L*d), got {pool}"
            ));
        }
        if let Some(len) = self.seq_length {
            if len < pool {
                v.push(format!("seq_length {len} is shorter than the pilot pool {pool}"));
            }
        }
        v
    }

    pub fn check(&self, num_streams: usize) -> Result<()> {
        let mut v = self.violations();
        v.extend(self.plan_violations(num_streams));
        if v.is_empty() {
            Ok(())
        } else {
            Err(FbError::Config(v.join("; ")))
        }
    }

    pub fn pilots_per_round(&self, num_streams: usize) -> usize {
        self.strategy.pilots_per_stream(self.weight_carriage) * num_streams
    }

    /// Overhead fraction charged per round for this strategy.
    pub fn round_gamma(&self) -> f64 {
        self.gamma * self.strategy.pilots_per_stream(self.weight_carriage) as f64
            / REFERENCE_PILOTS_PER_STREAM as f64
    }

    pub fn pilot_plan(&self, num_streams: usize, seed: u64) -> Result<PilotPlan> {
        let pool = self.pilot_pool.unwrap_or(num_streams);
        let policy = match self.csi_model {
            CsiModel::Contaminated => PilotPolicy::RandomReuse,
            CsiModel::Perfect | CsiModel::Noisy => PilotPolicy::Orthogonal,
        };
        let plan = allocate_pilots(num_streams, pool, policy, seed)?;
        let plan = match self.seq_length {
            Some(len) => plan.with_seq_length(len)?,
            None => plan,
        };
        plan.with_pilot_power(self.pilot_power)
    }
}

/// I.i.d. Bernoulli(`p_ul`) uplink mode per cell.
pub fn assign_duplex_modes(num_cells: usize, p_ul: f64, seed: u64) -> Result<Vec<Direction>> {
    if !(0.0..=1.0).contains(&p_ul) {
        return Err(FbError::InvalidParameter(format!("p_ul must lie in [0, 1], got {p_ul}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..num_cells)
        .map(|_| if rng.random::<f64>() < p_ul { Direction::Uplink } else { Direction::Downlink })
        .collect())
}

pub fn duplex_modes(duplex: Duplex, num_cells: usize, seed: u64) -> Result<Vec<Direction>> {
    match duplex {
        Duplex::AllDl => Ok(vec![Direction::Downlink; num_cells]),
        Duplex::DynamicTdd { p_ul } => assign_duplex_modes(num_cells, p_ul, seed),
    }
}

/// One Monte-Carlo drop ready for training.
#[derive(Clone, Copy)]
pub struct DropInput<'a> {
    pub net: &'a Network,
    pub channels: &'a LinkChannels,
    pub noise_power: f64,
    /// Seed for every random draw made during training.
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub sum_rate: f64,
    /// Per-stream rate sum with MMSE receivers; non-decreasing under
    /// Strategy B with perfect CSI.
    pub objective: f64,
    pub pilots: usize,
    pub eff_throughput: f64,
    /// Overhead consumed the whole frame.
    pub clamped: bool,
}

#[derive(Clone, Debug)]
pub struct FbTrace {
    pub strategy: Strategy,
    /// `iterations + 1` points, starting with the initial evaluation.
    pub points: Vec<TracePoint>,
    pub precoder_history: Vec<Vec<CMat>>,
    pub final_state: BeamformerState,
}

impl FbTrace {
    pub fn final_point(&self) -> &TracePoint {
        self.points.last().expect("trace is never empty")
    }

    pub fn sum_rates(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.sum_rate).collect()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.objective).collect()
    }
}

/// Smallest mean-squared error a transmitter will deduce for its own stream.
const MIN_DEDUCED_MSE: f64 = 1e-6;

pub fn run(scenario: &Scenario, input: DropInput<'_>) -> Result<FbTrace> {
    let net = input.net;
    scenario.check(net.num_streams())?;
    if matches!(scenario.duplex, Duplex::AllDl) && net.has_uplink() {
        return Err(FbError::InvalidState("duplex all_dl but the network has uplink cells".into()));
    }
    let gamma = scenario.round_gamma();
    let per_round = scenario.pilots_per_round(net.num_streams());
    let point = |t: usize, precoders: &[CMat]| -> Result<TracePoint> {
        let rate = sum_rate(net, input.channels, precoders, input.noise_power)?.total;
        let objective = stream_objective(net, input.channels, precoders, input.noise_power)?;
        let eff = effective_throughput(rate, t, gamma);
        Ok(TracePoint {
            iteration: t,
            sum_rate: rate,
            objective,
            pilots: per_round * t,
            eff_throughput: eff.value,
            clamped: eff.clamped,
        })
    };
    let start = initial_precoders(net, input.channels, &scenario.budget, scenario.init)?;

    let history: Vec<Vec<CMat>> = match scenario.strategy {
        Strategy::Uncoordinated => {
            let state = uncoordinated_baseline(net, input.channels, &scenario.budget, input.noise_power)?;
            vec![state.precoders; scenario.iterations + 1]
        }
        Strategy::Centralized => {
            let run = wmmse_from(
                net,
                input.channels,
                &scenario.budget,
                input.noise_power,
                start,
                scenario.iterations,
                0.0,
                Coupling::Full,
            )?;
            let mut h = run.precoder_history;
            while h.len() < scenario.iterations + 1 {
                h.push(h.last().unwrap().clone());
            }
            h
        }
        _ => {
            let trainer = Trainer::new(scenario, input)?;
            let mut h = vec![start];
            for t in 1..=scenario.iterations {
                let next = trainer.round(t, h.last().unwrap())?;
                h.push(next);
            }
            h
        }
    };
    let points = history.iter().enumerate().map(|(t, p)| point(t, p)).collect::<Result<Vec<_>>>()?;
    let final_state = BeamformerState::evaluate(
        net,
        input.channels,
        history.last().unwrap().clone(),
        scenario.budget,
        input.noise_power,
    )?;
    Ok(FbTrace { strategy: scenario.strategy, points, precoder_history: history, final_state })
}

struct Trainer<'a> {
    scenario: &'a Scenario,
    net: &'a Network,
    channels: &'a LinkChannels,
    noise_power: f64,
    seed: u64,
    plan: PilotPlan,
    /// Noise entering the pilot observations (zero for perfect CSI).
    observation_noise: f64,
}

/// Transmit side of one round: weighted uplink terms and own streams.
type TxTerms = (Vec<(CVec, f64)>, Vec<(CVec, f64)>);

impl<'a> Trainer<'a> {
    fn new(scenario: &'a Scenario, input: DropInput<'a>) -> Result<Self> {
        let plan = scenario.pilot_plan(input.net.num_streams(), derive_seed(input.seed, &[tag::PILOT_PLAN]))?;
        let observation_noise = match scenario.csi_model {
            CsiModel::Perfect => 0.0,
            CsiModel::Noisy | CsiModel::Contaminated => input.noise_power,
        };
        Ok(Trainer {
            scenario,
            net: input.net,
            channels: input.channels,
            noise_power: input.noise_power,
            seed: input.seed,
            plan,
            observation_noise,
        })
    }

    fn round(&self, t: usize, precoders: &[CMat]) -> Result<Vec<CMat>> {
        match self.scenario.strategy {
            Strategy::A | Strategy::D => self.parallel_round(t, precoders),
            Strategy::B => {
                let active: Vec<usize> = match self.scenario.cell_schedule {
                    CellSchedule::RoundRobin => vec![(t - 1) % self.net.num_cells],
                    CellSchedule::Parallel => (0..self.net.num_cells).collect(),
                };
                self.cellwise_round(t, precoders, &active, WeightCarriage::ExtraPilot)
            }
            Strategy::C => {
                let active: Vec<usize> = (0..self.net.num_cells).collect();
                self.cellwise_round(t, precoders, &active, WeightCarriage::Backhaul)
            }
            Strategy::Uncoordinated | Strategy::Centralized => unreachable!("not an over-the-air strategy"),
        }
    }

    fn forward(&self, t: usize, precoders: &[CMat]) -> Vec<EffectiveCsi> {
        observe_forward(
            self.net,
            self.channels,
            precoders,
            &self.plan,
            self.observation_noise,
            derive_seed(self.seed, &[tag::FORWARD, t as u64]),
        )
    }

    fn backward(&self, t: usize, receivers: &[CMat], weights: &[Vec<f64>], carriage: WeightCarriage) -> Vec<BackwardCsi> {
        observe_backward(
            self.net,
            self.channels,
            receivers,
            weights,
            &self.plan,
            self.observation_noise,
            carriage,
            derive_seed(self.seed, &[tag::BACKWARD, t as u64]),
        )
    }

    /// MMSE receivers and weights at every receiving node from its
    /// forward-phase estimates.
    fn receivers_from(&self, fwd: &[EffectiveCsi]) -> Result<(Vec<CMat>, Vec<Vec<f64>>)> {
        let net = self.net;
        let d = net.streams_per_user;
        let mut receivers = vec![CMat::zeros(0, 0); net.num_links()];
        let mut weights = vec![Vec::new(); net.num_links()];
        for (rx, csi) in fwd.iter().enumerate() {
            let observed: Vec<CVec> = csi.vectors().cloned().collect();
            let position: BTreeMap<usize, usize> =
                csi.estimates.iter().enumerate().map(|(i, (q, _))| (*q, i)).collect();
            let links = net.rx_links(rx);
            let desired: Vec<Vec<usize>> = links
                .iter()
                .map(|&l| (0..d).map(|s| position[&self.plan.sequence_of(net.stream_id(l, s))]).collect())
                .collect();
            let out = node_receivers(&observed, &desired, self.noise_power, net.rx_antennas(rx))?;
            for (&link, (w, wt)) in links.iter().zip(out) {
                receivers[link] = w;
                weights[link] = wt;
            }
        }
        Ok((receivers, weights))
    }

    /// Mean true weight of the streams sharing each sequence, as delivered
    /// over the backhaul.
    fn backhaul_weights(&self, weights: &[Vec<f64>]) -> Vec<f64> {
        let mut sum = vec![0.0; self.plan.pool_size];
        let mut count = vec![0usize; self.plan.pool_size];
        for link in 0..self.net.num_links() {
            for (s, &w) in weights[link].iter().enumerate() {
                let q = self.plan.sequence_of(self.net.stream_id(link, s));
                sum[q] += w;
                count[q] += 1;
            }
        }
        sum.iter().zip(&count).map(|(&s, &n)| if n == 0 { 0.0 } else { s / n as f64 }).collect()
    }

    fn parallel_round(&self, t: usize, precoders: &[CMat]) -> Result<Vec<CMat>> {
        let net = self.net;
        let fwd = self.forward(t, precoders);
        let (receivers, weights) = self.receivers_from(&fwd)?;
        let carriage = match self.scenario.strategy {
            Strategy::D => WeightCarriage::Backhaul,
            _ => self.scenario.weight_carriage,
        };
        let bwd = self.backward(t, &receivers, &weights, carriage);
        let backhaul = self.backhaul_weights(&weights);
        let mut next = vec![CMat::zeros(0, 0); net.num_links()];
        for tx in 0..net.tx_nodes().len() {
            let (terms, own) = self.parallel_terms(tx, &bwd[tx], precoders, &backhaul)?;
            let dim = net.tx_antennas(tx);
            let (power, kind) = self.scenario.budget.for_node(net.tx_nodes()[tx]);
            let stacked = solve_precoders(&weighted_covariance(dim, &terms), &own, power, kind)?;
            scatter_precoders(net, tx, &stacked, &mut next);
        }
        Ok(next)
    }

    fn parallel_terms(&self, tx: usize, csi: &BackwardCsi, precoders: &[CMat], backhaul: &[f64]) -> Result<TxTerms> {
        let net = self.net;
        let mut own = Vec::new();
        let mut own_seq_weights: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for &link in net.tx_links(tx) {
            for s in 0..net.streams_per_user {
                let q = self.plan.sequence_of(net.stream_id(link, s));
                let g = csi.busy_burst.get(q).ok_or_else(|| {
                    FbError::InvalidState(format!("no backward estimate for own sequence {q}"))
                })?;
                let w = deduced_weight(g, &precoders[link].column(s).into_owned());
                own_seq_weights.entry(q).or_default().push(w);
                own.push((g.clone(), w));
            }
        }
        let terms = match (self.scenario.strategy, &csi.weighted) {
            (Strategy::D, _) => csi
                .busy_burst
                .estimates
                .iter()
                .map(|(q, g)| {
                    let w = own_seq_weights.get(q).map_or(1.0, |ws| ws.iter().sum::<f64>() / ws.len() as f64);
                    (g.clone(), w)
                })
                .collect(),
            (_, Some(weighted)) => weighted.estimates.iter().map(|(_, g)| (g.clone(), 1.0)).collect(),
            (_, None) => csi.busy_burst.estimates.iter().map(|(q, g)| (g.clone(), backhaul[*q])).collect(),
        };
        Ok((terms, own))
    }

    fn cellwise_round(
        &self,
        t: usize,
        precoders: &[CMat],
        active: &[usize],
        carriage: WeightCarriage,
    ) -> Result<Vec<CMat>> {
        let fwd = self.forward(t, precoders);
        let (receivers, weights) = self.receivers_from(&fwd)?;
        let bwd = self.backward(t, &receivers, &weights, carriage);
        let backhaul = self.backhaul_weights(&weights);
        let mut next = precoders.to_vec();
        for &cell in active {
            self.inner_cell_update(t, cell, precoders, &fwd, &bwd, &backhaul, &mut next)?;
        }
        Ok(next)
    }

    /// Internal iterations of one cell against whitened out-of-cell
    /// interference, with leakage towards other cells' receivers held fixed.
    #[allow(clippy::too_many_arguments)]
    fn inner_cell_update(
        &self,
        t: usize,
        cell: usize,
        precoders: &[CMat],
        fwd: &[EffectiveCsi],
        bwd: &[BackwardCsi],
        backhaul: &[f64],
        next: &mut [CMat],
    ) -> Result<()> {
        let net = self.net;
        let d = net.streams_per_user;
        let links: Vec<usize> = net.cell_links(cell).collect();
        let cell_seqs: BTreeSet<usize> = links
            .iter()
            .flat_map(|&l| (0..d).map(move |s| (l, s)))
            .map(|(l, s)| self.plan.sequence_of(net.stream_id(l, s)))
            .collect();
        let rx_set: BTreeSet<usize> = links.iter().map(|&l| net.link_rx(l)).collect();
        let tx_set: BTreeSet<usize> = links.iter().map(|&l| net.link_tx(l)).collect();

        // sounding: whitened channels from each cell transmitter to each cell receiver
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[tag::SOUNDING, t as u64, cell as u64]));
        let sounding_var = self.plan.estimation_noise_variance(self.observation_noise);
        let mut whitened: BTreeMap<(usize, usize), CMat> = BTreeMap::new();
        for &rx in &rx_set {
            let dim = net.rx_antennas(rx);
            let mut q = scaled_identity(dim, self.noise_power);
            for (seq, h) in &fwd[rx].estimates {
                if !cell_seqs.contains(seq) {
                    add_outer(&mut q, h);
                }
            }
            let l = cholesky(&q, "out-of-cell interference covariance")?.l();
            for &tx in &tx_set {
                let mut ht = l
                    .solve_lower_triangular(self.channels.get(rx, tx))
                    .ok_or_else(|| FbError::Singular("whitening factor".into()))?;
                if sounding_var > 0.0 {
                    ht += cn_matrix(&mut rng, ht.nrows(), ht.ncols(), sounding_var);
                }
                whitened.insert((rx, tx), ht);
            }
        }

        let leakage: BTreeMap<usize, CMat> = tx_set
            .iter()
            .map(|&tx| {
                let dim = net.tx_antennas(tx);
                let mut a = CMat::zeros(dim, dim);
                match &bwd[tx].weighted {
                    Some(weighted) => {
                        for (seq, g) in &weighted.estimates {
                            if !cell_seqs.contains(seq) {
                                add_outer(&mut a, g);
                            }
                        }
                    }
                    None => {
                        for (seq, g) in &bwd[tx].busy_burst.estimates {
                            if !cell_seqs.contains(seq) {
                                add_outer_scaled(&mut a, g, backhaul[*seq]);
                            }
                        }
                    }
                }
                (tx, a)
            })
            .collect();

        let mut current: BTreeMap<usize, CMat> = links.iter().map(|&l| (l, precoders[l].clone())).collect();
        for _ in 0..self.scenario.inner_iters {
            let mut rx_filters: BTreeMap<usize, (CMat, Vec<f64>)> = BTreeMap::new();
            for &rx in &rx_set {
                let mut observed = Vec::with_capacity(links.len() * d);
                let mut position = BTreeMap::new();
                for &l in &links {
                    position.insert(l, observed.len());
                    let cascade = &whitened[&(rx, net.link_tx(l))] * &current[&l];
                    for s in 0..d {
                        observed.push(cascade.column(s).into_owned());
                    }
                }
                let own = net.rx_links(rx);
                let desired: Vec<Vec<usize>> = own.iter().map(|l| (0..d).map(|s| position[l] + s).collect()).collect();
                let out = node_receivers(&observed, &desired, 1.0, net.rx_antennas(rx))?;
                for (&l, filt) in own.iter().zip(out) {
                    rx_filters.insert(l, filt);
                }
            }
            for &tx in &tx_set {
                let mut a = leakage[&tx].clone();
                let mut own = Vec::new();
                let own_links = net.tx_links(tx);
                for &l in &links {
                    let (w, wt) = &rx_filters[&l];
                    let g = whitened[&(net.link_rx(l), tx)].adjoint() * w;
                    for s in 0..d {
                        let gs = g.column(s).into_owned();
                        add_outer_scaled(&mut a, &gs, wt[s]);
                        if own_links.contains(&l) {
                            own.push((gs, wt[s]));
                        }
                    }
                }
                let (power, kind) = self.scenario.budget.for_node(net.tx_nodes()[tx]);
                let stacked = solve_precoders(&a, &own, power, kind)?;
                for (k, &l) in own_links.iter().enumerate() {
                    current.insert(l, stacked.columns(k * d, d).into_owned());
                }
            }
        }
        for (l, m) in current {
            next[l] = m;
        }
        Ok(())
    }
}

/// `1 / mse` deduced from the busy-burst response `g = H^H w` and the own
/// precoder `m`, using `mse = 1 - w^H H m` at an MMSE receiver.
pub fn deduced_weight(g: &CVec, m: &CVec) -> f64 {
    let mse = 1.0 - g.dotc(m).re;
    1.0 / mse.clamp(MIN_DEDUCED_MSE, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{cell_edge_channelset, ChannelParams};
    use crate::topology::{drop_users, generate_cell_edge_pair, DropPolicy};

    fn cell_edge_drop(k: usize, m: usize, n: usize, seed: u64) -> (Network, LinkChannels, f64) {
        let topo = generate_cell_edge_pair(100.0).unwrap();
        let topo = drop_users(&topo, k, seed, DropPolicy::UniformInCell).unwrap();
        let params = ChannelParams { bs_antennas: m, ue_antennas: n, ..Default::default() };
        let set = cell_edge_channelset(&topo, 25.0, seed, &params).unwrap();
        let net = Network::all_downlink(2, k, m, n, 1).unwrap();
        let ch = LinkChannels::new(&net, &set).unwrap();
        (net, ch, set.noise_power)
    }

    #[test]
    fn zero_rounds_trace_is_initial_point() {
        let (net, ch, noise) = cell_edge_drop(2, 4, 2, 1);
        let sc = Scenario { iterations: 0, ..Default::default() };
        let trace = run(&sc, DropInput { net: &net, channels: &ch, noise_power: noise, seed: 3 }).unwrap();
        assert_eq!(trace.points.len(), 1);
        assert_eq!(trace.points[0].pilots, 0);
    }

    #[test]
    fn pilot_bookkeeping() {
        let (net, ch, noise) = cell_edge_drop(2, 4, 2, 2);
        let s = net.num_streams();
        for (strategy, per) in [(Strategy::A, 3), (Strategy::B, 3), (Strategy::C, 2), (Strategy::D, 2)] {
            let sc = Scenario { strategy, iterations: 3, ..Default::default() };
            let trace = run(&sc, DropInput { net: &net, channels: &ch, noise_power: noise, seed: 3 }).unwrap();
            assert_eq!(trace.points.len(), 4);
            for p in &trace.points {
                assert_eq!(p.pilots, p.iteration * per * s, "{strategy:?}");
            }
        }
        let sc = Scenario { weight_carriage: WeightCarriage::Backhaul, ..Default::default() };
        assert_eq!(sc.pilots_per_round(s), 2 * s);
    }

    #[test]
    fn strategy_d_gamma_is_two_thirds() {
        let a = Scenario { strategy: Strategy::A, ..Default::default() };
        let d = Scenario { strategy: Strategy::D, ..Default::default() };
        assert!((d.round_gamma() - 2.0 / 3.0 * a.round_gamma()).abs() < 1e-15);
        assert_eq!(a.round_gamma(), a.gamma);
    }

    #[test]
    fn duplex_extremes() {
        assert!(assign_duplex_modes(19, 0.0, 5).unwrap().iter().all(|&m| m == Direction::Downlink));
        assert!(assign_duplex_modes(19, 1.0, 5).unwrap().iter().all(|&m| m == Direction::Uplink));
        assert!(assign_duplex_modes(19, 1.5, 5).is_err());
        assert_eq!(assign_duplex_modes(19, 0.3, 9).unwrap(), assign_duplex_modes(19, 0.3, 9).unwrap());
    }

    #[test]
    fn validation_collects_violations() {
        let sc = Scenario {
            strategy: Strategy::C,
            gamma: 1.5,
            duplex: Duplex::DynamicTdd { p_ul: 1.5 },
            ..Default::default()
        };
        assert_eq!(sc.violations().len(), 3);
        let sc = Scenario { pilot_pool: Some(4), ..Default::default() };
        assert_eq!(sc.plan_violations(10).len(), 1);
        let sc = Scenario { pilot_pool: Some(4), csi_model: CsiModel::Contaminated, ..Default::default() };
        assert!(sc.plan_violations(10).is_empty());
    }

    #[test]
    fn deduced_weight_matches_true_weight() {
        let (net, ch, noise) = cell_edge_drop(3, 4, 2, 4);
        let budget = PowerBudget::default();
        let m = initial_precoders(&net, &ch, &budget, InitKind::DominantSingular).unwrap();
        let state = BeamformerState::evaluate(&net, &ch, m.clone(), budget, noise).unwrap();
        for link in 0..net.num_links() {
            let tx = net.link_tx(link);
            let g = ch.get(net.link_rx(link), tx).adjoint() * &state.receivers[link];
            let w = deduced_weight(&g.column(0).into_owned(), &m[link].column(0).into_owned());
            assert!((w - state.weights[link][0]).abs() < 1e-9 * w);
        }
    }
}
