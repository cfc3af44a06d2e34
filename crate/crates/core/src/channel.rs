//! Reciprocal Rayleigh MIMO channels with distance-based pathloss.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FbError, Result};
use crate::linalg::{c, cn_matrix, is_finite, CMat};
use crate::topology::{DeploymentKind, NetworkTopology};

pub const DEFAULT_PATHLOSS_EXPONENT: f64 = 3.76;
pub const DEFAULT_REFERENCE_DISTANCE: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub pathloss_exponent: f64,
    pub reference_distance: f64,
    pub bs_antennas: usize,
    pub ue_antennas: usize,
    pub include_cross_links: bool,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            pathloss_exponent: DEFAULT_PATHLOSS_EXPONENT,
            reference_distance: DEFAULT_REFERENCE_DISTANCE,
            bs_antennas: 8,
            ue_antennas: 2,
            include_cross_links: false,
        }
    }
}

/// Average power gain at distance `d`.
pub fn pathloss(d: f64, exponent: f64, reference_distance: f64) -> f64 {
    (d.max(reference_distance) / reference_distance).powf(-exponent)
}

/// All complex channel matrices of one drop.
///
/// Only one direction of every link is stored; the reverse direction is its
/// transpose, so reciprocity holds by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    pub bs_antennas: usize,
    pub ue_antennas: usize,
    pub num_cells: usize,
    pub num_users: usize,
    pub noise_power: f64,
    /// Downlink matrices `N x M`, indexed `cell * num_users + user`.
    bs_to_ue: Vec<CMat>,
    /// Key `(rx, tx)` with `rx < tx`; `N x N`.
    ue_to_ue: BTreeMap<(usize, usize), CMat>,
    /// Key `(rx, tx)` with `rx < tx`; `M x M`.
    bs_to_bs: BTreeMap<(usize, usize), CMat>,
}

impl ChannelSet {
    /// Downlink-only set from explicit matrices indexed `cell * num_users + user`.
    pub fn from_downlink(bs_to_ue: Vec<CMat>, num_cells: usize, num_users: usize, noise_power: f64) -> Result<Self> {
        let (ue_antennas, bs_antennas) = bs_to_ue.first().map(|h| h.shape()).unwrap_or((0, 0));
        let set = Self {
            bs_antennas,
            ue_antennas,
            num_cells,
            num_users,
            noise_power,
            bs_to_ue,
            ue_to_ue: BTreeMap::new(),
            bs_to_bs: BTreeMap::new(),
        };
        set.validate()?;
        Ok(set)
    }

    pub fn has_cross_links(&self) -> bool {
        let pairs = |n: usize| n * n.saturating_sub(1) / 2;
        self.ue_to_ue.len() == pairs(self.num_users)
            && self.bs_to_bs.len() == pairs(self.num_cells)
            && (self.num_users > 1 || self.num_cells > 1)
    }

    pub fn with_noise_power(mut self, noise_power: f64) -> Self {
        self.noise_power = noise_power;
        self
    }

    /// BS `cell` to user `user`, `N x M`.
    pub fn downlink(&self, cell: usize, user: usize) -> &CMat {
        &self.bs_to_ue[cell * self.num_users + user]
    }

    /// User `user` to BS `cell`, `M x N`.
    pub fn uplink(&self, cell: usize, user: usize) -> CMat {
        self.downlink(cell, user).transpose()
    }

    /// Channel from user `tx` into user `rx`.
    pub fn ue_to_ue(&self, rx: usize, tx: usize) -> Option<CMat> {
        pair_lookup(&self.ue_to_ue, rx, tx)
    }

    /// Channel from BS `tx` into BS `rx`.
    pub fn bs_to_bs(&self, rx: usize, tx: usize) -> Option<CMat> {
        pair_lookup(&self.bs_to_bs, rx, tx)
    }

    pub fn mean_downlink_gain(&self) -> f64 {
        let total: f64 = self.bs_to_ue.iter().map(crate::linalg::frobenius_sq).sum();
        total / (self.bs_to_ue.len() * self.bs_antennas * self.ue_antennas) as f64
    }

    /// Sets every link between cells `a != b` (BS-UE across cells, BS-BS, and
    /// UE-UE across cells) to zero.
    pub fn zero_inter_cell(&mut self, users_per_cell: usize) {
        let cell_of = |u: usize| u / users_per_cell;
        for cell in 0..self.num_cells {
            for user in 0..self.num_users {
                if cell_of(user) != cell {
                    let h = &mut self.bs_to_ue[cell * self.num_users + user];
                    h.fill(c(0.0, 0.0));
                }
            }
        }
        for ((i, j), h) in self.ue_to_ue.iter_mut() {
            if cell_of(*i) != cell_of(*j) {
                h.fill(c(0.0, 0.0));
            }
        }
        for h in self.bs_to_bs.values_mut() {
            h.fill(c(0.0, 0.0));
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self
            .bs_to_ue
            .iter()
            .all(|h| h.shape() == (self.ue_antennas, self.bs_antennas) && is_finite(h))
            && self.ue_to_ue.iter().all(|(&(i, j), h)| {
                i < j && h.shape() == (self.ue_antennas, self.ue_antennas) && is_finite(h)
            })
            && self.bs_to_bs.iter().all(|(&(i, j), h)| {
                i < j && h.shape() == (self.bs_antennas, self.bs_antennas) && is_finite(h)
            });
        if ok && self.bs_to_ue.len() == self.num_cells * self.num_users {
            Ok(())
        } else {
            Err(FbError::InvalidState("channel set has inconsistent or non-finite entries".into()))
        }
    }
}

fn pair_lookup(map: &BTreeMap<(usize, usize), CMat>, rx: usize, tx: usize) -> Option<CMat> {
    if rx == tx {
        return None;
    }
    if rx < tx {
        map.get(&(rx, tx)).cloned()
    } else {
        map.get(&(tx, rx)).map(|h| h.transpose())
    }
}

pub fn generate_channels(
    topology: &NetworkTopology,
    params: &ChannelParams,
    seed: u64,
) -> Result<ChannelSet> {
    validate_params(topology, params)?;
    let pl = |d: f64| pathloss(d, params.pathloss_exponent, params.reference_distance);
    build(topology, params, seed, |kind, a, b| match kind {
        LinkKind::BsUe => pl(topology.bs_user_distance(a, b)),
        LinkKind::UeUe => pl(topology.distance(&topology.users[a].position, &topology.users[b].position)),
        LinkKind::BsBs => pl(topology.distance(&topology.bs_positions[a], &topology.bs_positions[b])),
    })
}

/// Unit-gain Rayleigh channels for the two-BS cell-edge scenario; every
/// user sees both BSs with the same average power.
pub fn cell_edge_channelset(
    topology: &NetworkTopology,
    snr_db: f64,
    seed: u64,
    params: &ChannelParams,
) -> Result<ChannelSet> {
    if topology.deployment_kind != DeploymentKind::CellEdgePair {
        return Err(FbError::InvalidState(
            "cell-edge channel set requires a cell_edge_pair topology".into(),
        ));
    }
    validate_params(topology, params)?;
    let set = build(topology, params, seed, |_, _, _| 1.0)?;
    Ok(set.with_noise_power(10f64.powf(-snr_db / 10.0)))
}

/// Noise power that puts a pathloss-only user at `isd / 2` at the target SNR.
pub fn calibrate_noise(
    topology: &NetworkTopology,
    cell_edge_snr_db: f64,
    per_bs_power: f64,
    params: &ChannelParams,
) -> Result<f64> {
    if !(per_bs_power > 0.0) {
        return Err(FbError::InvalidParameter(format!(
            "per_bs_power must be positive, got {per_bs_power}"
        )));
    }
    let gain = pathloss(topology.isd / 2.0, params.pathloss_exponent, params.reference_distance);
    Ok(per_bs_power * gain / 10f64.powf(cell_edge_snr_db / 10.0))
}

#[derive(Clone, Copy)]
enum LinkKind {
    BsUe,
    UeUe,
    BsBs,
}

fn validate_params(topology: &NetworkTopology, params: &ChannelParams) -> Result<()> {
    if topology.users.is_empty() {
        return Err(FbError::InvalidState("topology has no users; drop users first".into()));
    }
    if params.bs_antennas == 0 || params.ue_antennas == 0 {
        return Err(FbError::InvalidParameter("antenna counts must be positive".into()));
    }
    if !(params.pathloss_exponent > 2.0) {
        return Err(FbError::InvalidParameter(format!(
            "pathloss exponent must exceed 2, got {}",
            params.pathloss_exponent
        )));
    }
    if !(params.reference_distance > 0.0) {
        return Err(FbError::InvalidParameter("reference distance must be positive".into()));
    }
    Ok(())
}

fn build(
    topology: &NetworkTopology,
    params: &ChannelParams,
    seed: u64,
    gain: impl Fn(LinkKind, usize, usize) -> f64,
) -> Result<ChannelSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, n) = (params.bs_antennas, params.ue_antennas);
    let (cells, users) = (topology.num_cells(), topology.num_users());
    let mut bs_to_ue = Vec::with_capacity(cells * users);
    for cell in 0..cells {
        for user in 0..users {
            let g = gain(LinkKind::BsUe, cell, user);
            bs_to_ue.push(cn_matrix(&mut rng, n, m, 1.0) * c(g.sqrt(), 0.0));
        }
    }
    let mut ue_to_ue = BTreeMap::new();
    let mut bs_to_bs = BTreeMap::new();
    if params.include_cross_links {
        for i in 0..users {
            for j in i + 1..users {
                let g = gain(LinkKind::UeUe, i, j);
                ue_to_ue.insert((i, j), cn_matrix(&mut rng, n, n, 1.0) * c(g.sqrt(), 0.0));
            }
        }
        for a in 0..cells {
            for b in a + 1..cells {
                let g = gain(LinkKind::BsBs, a, b);
                bs_to_bs.insert((a, b), cn_matrix(&mut rng, m, m, 1.0) * c(g.sqrt(), 0.0));
            }
        }
    }
    let set = ChannelSet {
        bs_antennas: m,
        ue_antennas: n,
        num_cells: cells,
        num_users: users,
        noise_power: 1.0,
        bs_to_ue,
        ue_to_ue,
        bs_to_bs,
    };
    set.validate()?;
    Ok(set)
}

// JSON form: matrices as row-major lists of [re, im] pairs.

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    rx: usize,
    tx: usize,
    rows: usize,
    cols: usize,
    data: Vec<[f64; 2]>,
}

impl MatrixJson {
    fn new(rx: usize, tx: usize, m: &CMat) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push([m[(i, j)].re, m[(i, j)].im]);
            }
        }
        MatrixJson { rx, tx, rows: m.nrows(), cols: m.ncols(), data }
    }

    fn matrix(&self) -> Result<CMat> {
        if self.data.len() != self.rows * self.cols {
            return Err(FbError::InvalidState(format!(
                "matrix ({}, {}) has {} entries, expected {}",
                self.rx,
                self.tx,
                self.data.len(),
                self.rows * self.cols
            )));
        }
        Ok(CMat::from_fn(self.rows, self.cols, |i, j| {
            let [re, im] = self.data[i * self.cols + j];
            c(re, im)
        }))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelSetJson {
    bs_antennas: usize,
    ue_antennas: usize,
    num_cells: usize,
    num_users: usize,
    noise_power: f64,
    /// `rx` = user, `tx` = cell.
    bs_to_ue: Vec<MatrixJson>,
    ue_to_ue: Vec<MatrixJson>,
    bs_to_bs: Vec<MatrixJson>,
}

impl ChannelSet {
    pub fn to_json(&self) -> Result<String> {
        let mut bs_to_ue = Vec::with_capacity(self.bs_to_ue.len());
        for cell in 0..self.num_cells {
            for user in 0..self.num_users {
                bs_to_ue.push(MatrixJson::new(user, cell, self.downlink(cell, user)));
            }
        }
        let pairs = |m: &BTreeMap<(usize, usize), CMat>| {
            m.iter().map(|(&(rx, tx), h)| MatrixJson::new(rx, tx, h)).collect()
        };
        let doc = ChannelSetJson {
            bs_antennas: self.bs_antennas,
            ue_antennas: self.ue_antennas,
            num_cells: self.num_cells,
            num_users: self.num_users,
            noise_power: self.noise_power,
            bs_to_ue,
            ue_to_ue: pairs(&self.ue_to_ue),
            bs_to_bs: pairs(&self.bs_to_bs),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ChannelSetJson = serde_json::from_str(s)?;
        let mut bs_to_ue = vec![CMat::zeros(doc.ue_antennas, doc.bs_antennas); doc.num_cells * doc.num_users];
        for m in &doc.bs_to_ue {
            if m.tx >= doc.num_cells || m.rx >= doc.num_users {
                return Err(FbError::InvalidState(format!("bs_to_ue index ({}, {}) out of range", m.rx, m.tx)));
            }
            bs_to_ue[m.tx * doc.num_users + m.rx] = m.matrix()?;
        }
        let pairs = |list: &[MatrixJson]| -> Result<BTreeMap<(usize, usize), CMat>> {
            list.iter().map(|m| Ok(((m.rx, m.tx), m.matrix()?))).collect()
        };
        let set = ChannelSet {
            bs_antennas: doc.bs_antennas,
            ue_antennas: doc.ue_antennas,
            num_cells: doc.num_cells,
            num_users: doc.num_users,
            noise_power: doc.noise_power,
            bs_to_ue,
            ue_to_ue: pairs(&doc.ue_to_ue)?,
            bs_to_bs: pairs(&doc.bs_to_bs)?,
        };
        set.validate()?;
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::cn_matrix;
    use crate::topology::{drop_users, generate_cell_edge_pair, generate_hex_grid, DropPolicy};

    fn small_grid() -> NetworkTopology {
        let t = generate_hex_grid(1, 200.0).unwrap();
        drop_users(&t, 2, 11, DropPolicy::UniformInCell).unwrap()
    }

    #[test]
    fn pathloss_is_unity_at_reference() {
        assert_eq!(pathloss(10.0, 3.76, 10.0), 1.0);
        assert_eq!(pathloss(1.0, 3.76, 10.0), 1.0);
        assert!((pathloss(100.0, 3.0, 10.0) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn empirical_gain_matches_pathloss() {
        let d = 57.0;
        let pl = pathloss(d, 3.76, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws = 10_000;
        let mean: f64 = (0..draws)
            .map(|_| (cn_matrix(&mut rng, 1, 1, 1.0) * c(pl.sqrt(), 0.0))[(0, 0)].norm_sqr())
            .sum::<f64>()
            / draws as f64;
        assert!((mean / pl - 1.0).abs() < 0.05, "mean {mean} vs {pl}");
    }

    #[test]
    fn reciprocity_is_exact() {
        let t = small_grid();
        let params = ChannelParams { include_cross_links: true, ..Default::default() };
        let set = generate_channels(&t, &params, 5).unwrap();
        for cell in 0..t.num_cells() {
            for user in 0..t.num_users() {
                assert_eq!(set.uplink(cell, user), set.downlink(cell, user).transpose());
            }
        }
        for i in 0..t.num_users() {
            assert!(set.ue_to_ue(i, i).is_none());
            for j in 0..t.num_users() {
                if i != j {
                    assert_eq!(set.ue_to_ue(i, j).unwrap(), set.ue_to_ue(j, i).unwrap().transpose());
                }
            }
        }
        assert_eq!(set.bs_to_bs(0, 3).unwrap(), set.bs_to_bs(3, 0).unwrap().transpose());
        assert!(set.bs_to_bs(2, 2).is_none());
        assert!(set.has_cross_links());
    }

    #[test]
    fn cross_links_only_when_requested() {
        let set = generate_channels(&small_grid(), &ChannelParams::default(), 5).unwrap();
        assert!(!set.has_cross_links());
        assert!(set.ue_to_ue(0, 1).is_none());
    }

    #[test]
    fn generation_is_deterministic() {
        let t = small_grid();
        let p = ChannelParams::default();
        assert_eq!(generate_channels(&t, &p, 9).unwrap(), generate_channels(&t, &p, 9).unwrap());
        assert_ne!(generate_channels(&t, &p, 9).unwrap(), generate_channels(&t, &p, 10).unwrap());
    }

    #[test]
    fn missing_users_is_invalid_state() {
        let t = generate_hex_grid(1, 200.0).unwrap();
        assert!(matches!(
            generate_channels(&t, &ChannelParams::default(), 1),
            Err(FbError::InvalidState(_))
        ));
    }

    #[test]
    fn noise_calibration_arithmetic() {
        let t = generate_hex_grid(2, 20.0).unwrap();
        let p = ChannelParams::default();
        // isd/2 = 10 = reference distance -> unit pathloss
        assert!((calibrate_noise(&t, 0.0, 1.0, &p).unwrap() - 1.0).abs() < 1e-15);
        let t = generate_hex_grid(2, 200.0).unwrap();
        let pl = pathloss(100.0, 3.76, 10.0);
        let n = calibrate_noise(&t, 25.0, 1.0, &p).unwrap();
        assert!((n - pl / 316.227_766_016_837_9).abs() < 1e-12 * pl);
        assert!(calibrate_noise(&t, 25.0, 0.0, &p).is_err());
    }

    #[test]
    fn cell_edge_snr_is_hit_on_average() {
        // users at isd/2 with a unit-norm precoder at full power
        let t = generate_hex_grid(1, 200.0).unwrap();
        let p = ChannelParams { bs_antennas: 4, ue_antennas: 1, ..Default::default() };
        let noise = calibrate_noise(&t, 20.0, 1.0, &p).unwrap();
        let pl = pathloss(100.0, p.pathloss_exponent, p.reference_distance);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let draws = 20_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let h = cn_matrix(&mut rng, 1, 4, pl);
            let m = cn_matrix(&mut rng, 4, 1, 1.0);
            let m = &m / c(crate::linalg::frobenius_sq(&m).sqrt(), 0.0);
            acc += (h * m)[(0, 0)].norm_sqr() / noise;
        }
        let snr_db = 10.0 * (acc / draws as f64).log10();
        assert!((snr_db - 20.0).abs() < 0.1, "measured {snr_db}");
    }

    #[test]
    fn cell_edge_set_has_unit_gain() {
        let t = drop_users(&generate_cell_edge_pair(200.0).unwrap(), 5, 3, DropPolicy::CellEdgeBand)
            .unwrap();
        let p = ChannelParams { bs_antennas: 4, ue_antennas: 2, ..Default::default() };
        let mut total = 0.0;
        let mut count = 0usize;
        let mut per_bs = [0.0; 2];
        for seed in 0..500 {
            let set = cell_edge_channelset(&t, 25.0, seed, &p).unwrap();
            assert!((set.noise_power - 0.003_162_277_660_168_379).abs() < 1e-15);
            for cell in 0..2 {
                for user in 0..10 {
                    let g = crate::linalg::frobenius_sq(set.downlink(cell, user));
                    per_bs[cell] += g;
                    total += g;
                    count += 8;
                }
            }
        }
        assert!((total / count as f64 - 1.0).abs() < 0.05);
        assert!((per_bs[0] / per_bs[1] - 1.0).abs() < 0.05);
        let grid = small_grid();
        assert!(cell_edge_channelset(&grid, 25.0, 1, &p).is_err());
    }

    #[test]
    fn doubling_noise_matches_scalar_capacity() {
        let set = cell_edge_channelset(
            &drop_users(&generate_cell_edge_pair(100.0).unwrap(), 1, 1, DropPolicy::UniformInCell).unwrap(),
            10.0,
            4,
            &ChannelParams { bs_antennas: 1, ue_antennas: 1, ..Default::default() },
        )
        .unwrap();
        let g = set.downlink(0, 0)[(0, 0)].norm_sqr();
        let cap = |noise: f64| (1.0 + g / noise).log2();
        let n = set.noise_power;
        let expected = (1.0 + g / (2.0 * n)).log2();
        assert!((cap(2.0 * n) - expected).abs() < 1e-15);
        assert!(cap(2.0 * n) < cap(n));
        // high-SNR slope: doubling noise costs about one bit
        assert!((cap(n * 1e-6) - cap(2e-6 * n) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn json_round_trip() {
        let params = ChannelParams { include_cross_links: true, bs_antennas: 2, ..Default::default() };
        let set = generate_channels(&small_grid(), &params, 3).unwrap().with_noise_power(0.25);
        let back = ChannelSet::from_json(&set.to_json().unwrap()).unwrap();
        assert_eq!(set, back);
    }
}
