//! Cell layouts, user drops and the wrap-around distance metric.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FbError, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    fn offset(&self, dx: f64, dy: f64) -> Point {
        Point::new(self.x + dx, self.y + dy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeploymentKind {
    HexGrid,
    CellEdgePair,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropPolicy {
    UniformInCell,
    CellEdgeBand,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserPlacement {
    pub position: Point,
    pub cell: usize,
}

/// BS and user geometry. Users are stored cell-major: user `u` belongs to
/// cell `u / users_per_cell`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub bs_positions: Vec<Point>,
    pub users: Vec<UserPlacement>,
    pub isd: f64,
    pub tiers: usize,
    pub wrap_around: bool,
    pub deployment_kind: DeploymentKind,
    pub users_per_cell: usize,
}

/// Number of BSs in a hexagonal grid with `tiers` rings.
pub fn hex_cell_count(tiers: usize) -> usize {
    1 + 3 * tiers * (tiers + 1)
}

fn axial_to_xy(q: i64, r: i64, isd: f64) -> Point {
    Point::new(isd * (q as f64 + r as f64 / 2.0), isd * (r as f64) * SQRT3 / 2.0)
}

pub fn generate_hex_grid(tiers: usize, isd: f64) -> Result<NetworkTopology> {
    if !(isd > 0.0) || !isd.is_finite() {
        return Err(FbError::InvalidParameter(format!("isd must be positive, got {isd}")));
    }
    let t = tiers as i64;
    let mut bs_positions = vec![Point::ORIGIN];
    // ring by ring so that cell 0 is the center and indices grow outwards
    for ring in 1..=t {
        let mut q = ring;
        let mut r = -ring;
        // walk the six sides of the ring
        let steps = [(0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1), (1, 0)];
        for (dq, dr) in steps {
            for _ in 0..ring {
                bs_positions.push(axial_to_xy(q, r, isd));
                q += dq;
                r += dr;
            }
        }
    }
    debug_assert_eq!(bs_positions.len(), hex_cell_count(tiers));
    Ok(NetworkTopology {
        bs_positions,
        users: Vec::new(),
        isd,
        tiers,
        wrap_around: tiers >= 1,
        deployment_kind: DeploymentKind::HexGrid,
        users_per_cell: 0,
    })
}

pub fn generate_cell_edge_pair(separation: f64) -> Result<NetworkTopology> {
    if !(separation > 0.0) || !separation.is_finite() {
        return Err(FbError::InvalidParameter(format!(
            "separation must be positive, got {separation}"
        )));
    }
    Ok(NetworkTopology {
        bs_positions: vec![Point::new(-separation / 2.0, 0.0), Point::new(separation / 2.0, 0.0)],
        users: Vec::new(),
        isd: separation,
        tiers: 0,
        wrap_around: false,
        deployment_kind: DeploymentKind::CellEdgePair,
        users_per_cell: 0,
    })
}

impl NetworkTopology {
    pub fn num_cells(&self) -> usize {
        self.bs_positions.len()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    /// Translation vectors of the six neighbouring cluster images.
    pub fn wrap_shifts(&self) -> Vec<Point> {
        if !self.wrap_around || self.tiers == 0 {
            return Vec::new();
        }
        let t = self.tiers as i64;
        let (mut q, mut r) = (2 * t + 1, -t);
        let mut shifts = Vec::with_capacity(6);
        for _ in 0..6 {
            shifts.push(axial_to_xy(q, r, self.isd));
            // 60 degree rotation in axial coordinates
            let (nq, nr) = (-r, q + r);
            q = nq;
            r = nr;
        }
        shifts
    }

    pub fn distance(&self, a: &Point, b: &Point) -> f64 {
        wrap_distance(a, b, self)
    }

    pub fn bs_user_distance(&self, cell: usize, user: usize) -> f64 {
        self.distance(&self.bs_positions[cell], &self.users[user].position)
    }

    /// Nearest BS under the topology's distance metric.
    pub fn nearest_cell(&self, p: &Point) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, bs) in self.bs_positions.iter().enumerate() {
            let d = self.distance(bs, p);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Minimum distance over the plain pair and the six cluster images of `b`.
pub fn wrap_distance(a: &Point, b: &Point, topology: &NetworkTopology) -> f64 {
    let mut best = a.dist(b);
    for s in topology.wrap_shifts() {
        best = best.min(a.dist(&b.offset(s.x, s.y)));
    }
    best
}

/// Whether `p` (relative to its BS) lies inside the hexagonal Voronoi cell of
/// a lattice with spacing `isd`.
fn inside_hex(dx: f64, dy: f64, isd: f64) -> bool {
    let h = isd / 2.0;
    let dirs = [(1.0, 0.0), (0.5, SQRT3 / 2.0), (-0.5, SQRT3 / 2.0)];
    dirs.iter().all(|(ux, uy)| (dx * ux + dy * uy).abs() <= h)
}

fn sample_in_hex<R: Rng>(rng: &mut R, isd: f64) -> (f64, f64) {
    let rmax = isd / SQRT3;
    loop {
        let dx = rng.random_range(-rmax..rmax);
        let dy = rng.random_range(-rmax..rmax);
        if inside_hex(dx, dy, isd) {
            return (dx, dy);
        }
    }
}

fn sample_in_annulus<R: Rng>(rng: &mut R, r_in: f64, r_out: f64) -> (f64, f64) {
    let r = rng.random_range(r_in * r_in..r_out * r_out).sqrt();
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    (r * phi.cos(), r * phi.sin())
}

pub fn drop_users(
    topology: &NetworkTopology,
    users_per_cell: usize,
    seed: u64,
    policy: DropPolicy,
) -> Result<NetworkTopology> {
    if topology.bs_positions.is_empty() {
        return Err(FbError::InvalidState("topology has no base stations".into()));
    }
    if users_per_cell == 0 {
        return Err(FbError::InvalidParameter("users_per_cell must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut users = Vec::with_capacity(users_per_cell * topology.num_cells());
    let isd = topology.isd;
    match topology.deployment_kind {
        DeploymentKind::HexGrid => {
            for (cell, bs) in topology.bs_positions.iter().enumerate() {
                for _ in 0..users_per_cell {
                    let (dx, dy) = match policy {
                        DropPolicy::UniformInCell => sample_in_hex(&mut rng, isd),
                        DropPolicy::CellEdgeBand => sample_in_annulus(&mut rng, 0.4 * isd, 0.5 * isd),
                    };
                    users.push(UserPlacement { position: bs.offset(dx, dy), cell });
                }
            }
        }
        DeploymentKind::CellEdgePair => {
            // both policies drop into a small disc around the midpoint, on
            // the serving BS's side of the border
            let radius = 0.1 * isd;
            for cell in 0..topology.num_cells() {
                let side = if cell == 0 { -1.0 } else { 1.0 };
                for _ in 0..users_per_cell {
                    let (dx, dy) = sample_in_annulus(&mut rng, 0.0, radius);
                    users.push(UserPlacement {
                        position: Point::new(side * dx.abs(), dy),
                        cell,
                    });
                }
            }
        }
    }
    Ok(NetworkTopology {
        users,
        users_per_cell,
        ..topology.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_tier_grid_has_nineteen_cells() {
        let t = generate_hex_grid(2, 200.0).unwrap();
        assert_eq!(t.num_cells(), 19);
        assert!(t.wrap_around);
        assert!(t.users.is_empty());
    }

    #[test]
    fn zero_tiers_is_single_cell_at_origin() {
        let t = generate_hex_grid(0, 200.0).unwrap();
        assert_eq!(t.bs_positions, vec![Point::ORIGIN]);
        assert!(!t.wrap_around);
    }

    #[test]
    fn one_tier_nearest_neighbour_spacing() {
        let t = generate_hex_grid(1, 100.0).unwrap();
        assert_eq!(t.num_cells(), 7);
        let mut min = f64::INFINITY;
        for i in 0..7 {
            for j in 0..7 {
                if i != j {
                    min = min.min(t.bs_positions[i].dist(&t.bs_positions[j]));
                }
            }
        }
        assert!((min - 100.0).abs() < 1e-9);
    }

    #[test]
    fn bad_isd_rejected() {
        assert!(matches!(generate_hex_grid(2, 0.0), Err(FbError::InvalidParameter(_))));
        assert!(matches!(generate_hex_grid(2, -1.0), Err(FbError::InvalidParameter(_))));
        assert!(generate_cell_edge_pair(0.0).is_err());
    }

    #[test]
    fn cell_edge_pair_is_symmetric() {
        let t = generate_cell_edge_pair(200.0).unwrap();
        assert_eq!(t.bs_positions, vec![Point::new(-100.0, 0.0), Point::new(100.0, 0.0)]);
        let mid = Point::ORIGIN;
        assert_eq!(t.bs_positions[0].dist(&mid), t.bs_positions[1].dist(&mid));
    }

    #[test]
    fn drop_is_deterministic_and_sized() {
        let t = generate_hex_grid(2, 200.0).unwrap();
        let a = drop_users(&t, 4, 1, DropPolicy::UniformInCell).unwrap();
        let b = drop_users(&t, 4, 1, DropPolicy::UniformInCell).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_users(), 76);
        for c in 0..19 {
            assert_eq!(a.users.iter().filter(|u| u.cell == c).count(), 4);
        }
        let single = drop_users(&generate_hex_grid(0, 200.0).unwrap(), 1, 5, DropPolicy::UniformInCell)
            .unwrap();
        assert_eq!(single.num_users(), 1);
        assert!(inside_hex(single.users[0].position.x, single.users[0].position.y, 200.0));
    }

    #[test]
    fn edge_band_users_sit_in_annulus() {
        let t = generate_hex_grid(1, 200.0).unwrap();
        let d = drop_users(&t, 10, 2, DropPolicy::CellEdgeBand).unwrap();
        for u in &d.users {
            let r = u.position.dist(&t.bs_positions[u.cell]);
            assert!((80.0 - 1e-9..=100.0 + 1e-9).contains(&r));
        }
    }

    #[test]
    fn wrap_shortcut_across_cluster() {
        let t = generate_hex_grid(2, 200.0).unwrap();
        // opposite outer cells of the cluster
        let a = t.bs_positions[7];
        let b = t.bs_positions[13];
        let plain = a.dist(&b);
        // brute force over all shift images
        let brute = std::iter::once(Point::new(0.0, 0.0))
            .chain(t.wrap_shifts())
            .map(|s| a.dist(&b.offset(s.x, s.y)))
            .fold(f64::INFINITY, f64::min);
        let w = wrap_distance(&a, &b, &t);
        assert_eq!(w, brute);
        assert!(w < plain);
        assert_eq!(wrap_distance(&a, &a, &t), 0.0);
    }

    #[test]
    fn topology_json_round_trip() {
        let t = drop_users(&generate_cell_edge_pair(200.0).unwrap(), 3, 4, DropPolicy::CellEdgeBand)
            .unwrap();
        let back = NetworkTopology::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(t, back);
    }
}
