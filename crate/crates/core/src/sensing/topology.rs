use rand::Rng;

use crate::error::{invalid, Result};

/// Undirected sensing graph with a marked Byzantine subset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    adjacency: Vec<Vec<bool>>,
    byzantine: Vec<bool>,
    neighbors: Vec<Vec<usize>>,
}

/// Attempts at drawing an Erdős–Rényi graph before falling back to the complete graph.
const MAX_REDRAWS: usize = 1000;

impl Topology {
    /// Builds a topology from a symmetric adjacency matrix without self-loops.
    pub fn from_adjacency(adjacency: Vec<Vec<bool>>, byzantine: Vec<bool>) -> Result<Self> {
        let k = adjacency.len();
        if byzantine.len() != k || adjacency.iter().any(|row| row.len() != k) {
            return Err(invalid("topology", "adjacency must be K×K with K flags"));
        }
        for i in 0..k {
            if adjacency[i][i] {
                return Err(invalid("topology", format!("self-loop at user {i}")));
            }
            for j in 0..i {
                if adjacency[i][j] != adjacency[j][i] {
                    return Err(invalid("topology", format!("asymmetric edge {i}-{j}")));
                }
            }
        }
        let neighbors = adjacency
            .iter()
            .map(|row| (0..k).filter(|&j| row[j]).collect())
            .collect();
        Ok(Topology {
            adjacency,
            byzantine,
            neighbors,
        })
    }

    /// Users `0..k_h` are honest, `k_h..k_h+k_b` Byzantine.
    fn byzantine_flags(k_h: usize, k_b: usize) -> Vec<bool> {
        (0..k_h + k_b).map(|i| i >= k_h).collect()
    }

    pub fn fully_connected(k_h: usize, k_b: usize) -> Self {
        let k = k_h + k_b;
        let adjacency = (0..k).map(|i| (0..k).map(|j| i != j).collect()).collect();
        Self::from_adjacency(adjacency, Self::byzantine_flags(k_h, k_b)).expect("complete graph")
    }

    /// Erdős–Rényi graph with edge probability `p`, redrawn until every honest
    /// user has at least `2 k_b + 1` neighbours. Falls back to the complete graph.
    pub fn erdos_renyi<R: Rng + ?Sized>(k_h: usize, k_b: usize, p: f64, rng: &mut R) -> Self {
        let k = k_h + k_b;
        let needed = 2 * k_b + 1;
        for _ in 0..MAX_REDRAWS {
            let mut adjacency = vec![vec![false; k]; k];
            for i in 0..k {
                for j in 0..i {
                    let edge = rng.random::<f64>() < p;
                    adjacency[i][j] = edge;
                    adjacency[j][i] = edge;
                }
            }
            let topo = Self::from_adjacency(adjacency, Self::byzantine_flags(k_h, k_b))
                .expect("symmetric by construction");
            if topo.honest().all(|i| topo.degree(i) >= needed) {
                return topo;
            }
        }
        Self::fully_connected(k_h, k_b)
    }

    pub fn users(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, k: usize) -> &[usize] {
        &self.neighbors[k]
    }

    pub fn degree(&self, k: usize) -> usize {
        self.neighbors[k].len()
    }

    pub fn is_byzantine(&self, k: usize) -> bool {
        self.byzantine[k]
    }

    pub fn byzantine_count(&self) -> usize {
        self.byzantine.iter().filter(|&&b| b).count()
    }

    pub fn honest(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.users()).filter(|&k| !self.byzantine[k])
    }

    /// Smallest number of honest neighbours over honest users.
    pub fn min_honest_degree(&self) -> usize {
        self.honest()
            .map(|k| {
                self.neighbors[k]
                    .iter()
                    .filter(|&&i| !self.byzantine[i])
                    .count()
            })
            .min()
            .unwrap_or(0)
    }
}
