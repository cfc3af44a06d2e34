//! Link graph of a drop: which node transmits to which, per duplex mode.
//!
//! Link `j` is the data link of user `j` with its serving BS. In a downlink
//! cell the BS transmits and the user receives; in an uplink cell the roles
//! swap. Transmitting and receiving node sets are disjoint in every phase.

use serde::{Deserialize, Serialize};

use crate::channel::ChannelSet;
use crate::error::{FbError, Result};
use crate::linalg::CMat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Downlink,
    Uplink,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    Bs(usize),
    Ue(usize),
}

#[derive(Clone, Debug)]
pub struct Network {
    pub num_cells: usize,
    pub users_per_cell: usize,
    pub bs_antennas: usize,
    pub ue_antennas: usize,
    pub streams_per_user: usize,
    pub modes: Vec<Direction>,
    tx_nodes: Vec<Node>,
    rx_nodes: Vec<Node>,
    link_tx: Vec<usize>,
    link_rx: Vec<usize>,
    tx_links: Vec<Vec<usize>>,
    rx_links: Vec<Vec<usize>>,
}

impl Network {
    pub fn new(
        num_cells: usize,
        users_per_cell: usize,
        bs_antennas: usize,
        ue_antennas: usize,
        streams_per_user: usize,
        modes: Vec<Direction>,
    ) -> Result<Self> {
        if num_cells == 0 || users_per_cell == 0 || streams_per_user == 0 {
            return Err(FbError::InvalidParameter(
                "cells, users per cell and streams per user must be positive".into(),
            ));
        }
        if modes.len() != num_cells {
            return Err(FbError::InvalidParameter(format!(
                "{} duplex modes for {} cells",
                modes.len(),
                num_cells
            )));
        }
        let num_links = num_cells * users_per_cell;
        let mut tx_nodes: Vec<Node> = Vec::new();
        let mut rx_nodes: Vec<Node> = Vec::new();
        let mut link_tx = vec![0; num_links];
        let mut link_rx = vec![0; num_links];
        let index_of = |nodes: &mut Vec<Node>, n: Node| match nodes.iter().position(|&x| x == n) {
            Some(i) => i,
            None => {
                nodes.push(n);
                nodes.len() - 1
            }
        };
        for link in 0..num_links {
            let cell = link / users_per_cell;
            let (tx, rx) = match modes[cell] {
                Direction::Downlink => (Node::Bs(cell), Node::Ue(link)),
                Direction::Uplink => (Node::Ue(link), Node::Bs(cell)),
            };
            link_tx[link] = index_of(&mut tx_nodes, tx);
            link_rx[link] = index_of(&mut rx_nodes, rx);
        }
        let mut tx_links = vec![Vec::new(); tx_nodes.len()];
        let mut rx_links = vec![Vec::new(); rx_nodes.len()];
        for link in 0..num_links {
            tx_links[link_tx[link]].push(link);
            rx_links[link_rx[link]].push(link);
        }
        Ok(Network {
            num_cells,
            users_per_cell,
            bs_antennas,
            ue_antennas,
            streams_per_user,
            modes,
            tx_nodes,
            rx_nodes,
            link_tx,
            link_rx,
            tx_links,
            rx_links,
        })
    }

    pub fn all_downlink(
        num_cells: usize,
        users_per_cell: usize,
        bs_antennas: usize,
        ue_antennas: usize,
        streams_per_user: usize,
    ) -> Result<Self> {
        Self::new(
            num_cells,
            users_per_cell,
            bs_antennas,
            ue_antennas,
            streams_per_user,
            vec![Direction::Downlink; num_cells],
        )
    }

    pub fn num_links(&self) -> usize {
        self.num_cells * self.users_per_cell
    }

    pub fn num_streams(&self) -> usize {
        self.num_links() * self.streams_per_user
    }

    pub fn stream_id(&self, link: usize, s: usize) -> usize {
        link * self.streams_per_user + s
    }

    pub fn link_cell(&self, link: usize) -> usize {
        link / self.users_per_cell
    }

    pub fn cell_links(&self, cell: usize) -> std::ops::Range<usize> {
        cell * self.users_per_cell..(cell + 1) * self.users_per_cell
    }

    pub fn tx_nodes(&self) -> &[Node] {
        &self.tx_nodes
    }

    pub fn rx_nodes(&self) -> &[Node] {
        &self.rx_nodes
    }

    /// Index into `tx_nodes` of the transmitter of `link`.
    pub fn link_tx(&self, link: usize) -> usize {
        self.link_tx[link]
    }

    pub fn link_rx(&self, link: usize) -> usize {
        self.link_rx[link]
    }

    pub fn tx_links(&self, tx: usize) -> &[usize] {
        &self.tx_links[tx]
    }

    pub fn rx_links(&self, rx: usize) -> &[usize] {
        &self.rx_links[rx]
    }

    pub fn antennas(&self, node: Node) -> usize {
        match node {
            Node::Bs(_) => self.bs_antennas,
            Node::Ue(_) => self.ue_antennas,
        }
    }

    pub fn tx_antennas(&self, tx: usize) -> usize {
        self.antennas(self.tx_nodes[tx])
    }

    pub fn rx_antennas(&self, rx: usize) -> usize {
        self.antennas(self.rx_nodes[rx])
    }

    pub fn node_cell(&self, node: Node) -> usize {
        match node {
            Node::Bs(b) => b,
            Node::Ue(u) => u / self.users_per_cell,
        }
    }

    pub fn tx_cell(&self, tx: usize) -> usize {
        self.node_cell(self.tx_nodes[tx])
    }

    pub fn rx_cell(&self, rx: usize) -> usize {
        self.node_cell(self.rx_nodes[rx])
    }

    pub fn has_uplink(&self) -> bool {
        self.modes.contains(&Direction::Uplink)
    }
}

/// Which transmitter/receiver pairs are taken into account during design.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coupling {
    Full,
    /// Only same-cell pairs; used by the uncoordinated baseline.
    IntraCell,
}

/// Dense cache of the channel from every transmitter to every receiver.
#[derive(Clone, Debug)]
pub struct LinkChannels {
    n_tx: usize,
    h: Vec<CMat>,
}

impl LinkChannels {
    pub fn new(net: &Network, channels: &ChannelSet) -> Result<Self> {
        if channels.num_cells != net.num_cells || channels.num_users != net.num_links() {
            return Err(FbError::InvalidState(format!(
                "channel set is {} cells x {} users, network is {} x {}",
                channels.num_cells,
                channels.num_users,
                net.num_cells,
                net.num_links()
            )));
        }
        if channels.bs_antennas != net.bs_antennas || channels.ue_antennas != net.ue_antennas {
            return Err(FbError::InvalidState("antenna counts differ between channels and network".into()));
        }
        let n_tx = net.tx_nodes().len();
        let mut h = Vec::with_capacity(n_tx * net.rx_nodes().len());
        for &rx in net.rx_nodes() {
            for &tx in net.tx_nodes() {
                let m = match (rx, tx) {
                    (Node::Ue(u), Node::Bs(b)) => channels.downlink(b, u).clone(),
                    (Node::Bs(b), Node::Ue(u)) => channels.uplink(b, u),
                    (Node::Ue(a), Node::Ue(b)) => channels.ue_to_ue(a, b).ok_or_else(missing_cross)?,
                    (Node::Bs(a), Node::Bs(b)) => channels.bs_to_bs(a, b).ok_or_else(missing_cross)?,
                };
                h.push(m);
            }
        }
        Ok(LinkChannels { n_tx, h })
    }

    /// Channel from transmitter `tx` into receiver `rx` (`rx_ant x tx_ant`).
    pub fn get(&self, rx: usize, tx: usize) -> &CMat {
        &self.h[rx * self.n_tx + tx]
    }
}

fn missing_cross() -> FbError {
    FbError::InvalidState("cross-link channels (UE-UE / BS-BS) are required for uplink cells".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downlink_network_roles() {
        let net = Network::all_downlink(2, 3, 4, 2, 1).unwrap();
        assert_eq!(net.tx_nodes(), &[Node::Bs(0), Node::Bs(1)]);
        assert_eq!(net.rx_nodes().len(), 6);
        assert_eq!(net.tx_links(1), &[3, 4, 5]);
        assert_eq!(net.num_streams(), 6);
    }

    #[test]
    fn mixed_network_roles() {
        let net = Network::new(2, 2, 4, 2, 2, vec![Direction::Downlink, Direction::Uplink]).unwrap();
        assert_eq!(net.tx_nodes(), &[Node::Bs(0), Node::Ue(2), Node::Ue(3)]);
        assert_eq!(net.rx_nodes(), &[Node::Ue(0), Node::Ue(1), Node::Bs(1)]);
        assert_eq!(net.rx_links(2), &[2, 3]);
        assert_eq!(net.tx_antennas(1), 2);
        assert_eq!(net.rx_antennas(2), 4);
        assert!(net.has_uplink());
    }
}
