//! Communication graph, contact probabilities and the random pairwise
//! averaging matrices of the gossip protocol.
//!
//! Time is slotted: in slot `t` one agent `I_t` wakes up uniformly at random
//! and contacts neighbour `J_t` with probability `P[I_t][J_t]`. The physical
//! Poisson tick times never enter the analysis, so the simulator works on
//! slot indices and can optionally draw the inter-tick durations on the side
//! ([`sample_tick_durations`]).

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Exp;

use crate::{Error, Result, SIMPLEX_TOL};

/// Symmetry tolerance for [`second_eigenvalue_modulus`].
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Required margin below one for the second eigenvalue modulus of `E[W]`.
pub const SPECTRAL_MARGIN: f64 = 1e-10;

/// Undirected simple graph on agents `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Edges are unordered; `(i, j)` and `(j, i)` are the same edge.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph("graph needs at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::InvalidGraph(format!("self-loop at node {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a}, {b}) out of range for {n} nodes"
                )));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in &set {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
        }
        Ok(Self {
            n,
            edges: set,
            adjacency,
        })
    }

    pub fn path(n: usize) -> Self {
        Self::new(n, (1..n).map(|i| (i - 1, i))).unwrap()
    }

    pub fn cycle(n: usize) -> Self {
        assert!(n >= 3, "cycle needs at least 3 nodes");
        Self::new(n, (0..n).map(|i| (i, (i + 1) % n))).unwrap()
    }

    pub fn complete(n: usize) -> Self {
        Self::new(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)))).unwrap()
    }

    pub fn star(n: usize) -> Self {
        Self::new(n, (1..n).map(|j| (0, j))).unwrap()
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.n
    }
}

/// Row `i` holds the probabilities with which agent `i` contacts each
/// neighbour when its clock ticks.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactMatrix {
    entries: DMatrix<f64>,
}

impl ContactMatrix {
    /// Checks squareness, finiteness and nonnegativity. Stochasticity and the
    /// support condition are left to [`validate_network`].
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() || entries.nrows() == 0 {
            return Err(Error::InvalidContact(format!(
                "matrix must be square and nonempty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if let Some(v) = entries.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidContact(format!(
                "entry {v} is negative or non-finite"
            )));
        }
        Ok(Self { entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::InvalidContact(format!(
                "row of length {} in a {n}-row matrix",
                r.len()
            )));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    /// Uniform over neighbours, with an all-zero row for isolated nodes.
    /// An isolated agent whose clock ticks simply contacts nobody.
    pub fn uniform_allowing_isolated(graph: &Graph) -> Self {
        let n = graph.num_nodes();
        let mut entries = DMatrix::zeros(n, n);
        for i in 0..n {
            let deg = graph.degree(i);
            for &j in graph.neighbors(i) {
                entries[(i, j)] = 1.0 / deg as f64;
            }
        }
        Self { entries }
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.entries.row(i).iter().copied().collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.size()).map(|i| self.row(i)).collect()
    }
}

/// `P[i][j] = 1 / deg(i)` for each neighbour `j`.
pub fn uniform_neighbor_contact(graph: &Graph) -> Result<ContactMatrix> {
    if let Some(i) = (0..graph.num_nodes()).find(|&i| graph.degree(i) == 0) {
        return Err(Error::IsolatedNode(i));
    }
    Ok(ContactMatrix::uniform_allowing_isolated(graph))
}

#[derive(Debug, Clone, PartialEq)]
pub enum NetworkViolation {
    Disconnected,
    SizeMismatch { graph: usize, contact: usize },
    RowNotStochastic { row: usize, sum: f64 },
    NonZeroDiagonal { node: usize },
    SupportExceedsEdges { from: usize, to: usize },
    NoSpectralGap { lambda2: f64 },
}

impl fmt::Display for NetworkViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetworkViolation::Disconnected => write!(f, "disconnected"),
            NetworkViolation::SizeMismatch { graph, contact } => {
                write!(
                    f,
                    "contact matrix is {contact}x{contact} but graph has {graph} nodes"
                )
            }
            NetworkViolation::RowNotStochastic { row, sum } => {
                write!(f, "contact row {row} not stochastic: sums to {sum}")
            }
            NetworkViolation::NonZeroDiagonal { node } => {
                write!(f, "contact matrix has nonzero diagonal at node {node}")
            }
            NetworkViolation::SupportExceedsEdges { from, to } => {
                write!(f, "support exceeds edges: P[{from}][{to}] > 0 without edge")
            }
            NetworkViolation::NoSpectralGap { lambda2 } => {
                write!(
                    f,
                    "second eigenvalue modulus of E[W] is {lambda2}, not below 1"
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkReport {
    pub violations: Vec<NetworkViolation>,
    /// Second eigenvalue modulus of `E[W]`, when the contact matrix has the
    /// right size.
    pub lambda2: Option<f64>,
}

impl NetworkReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Connectivity, stochasticity, support and the spectral gap of `E[W]`.
pub fn validate_network(graph: &Graph, contact: &ContactMatrix) -> NetworkReport {
    let mut violations = Vec::new();
    if !graph.is_connected() {
        violations.push(NetworkViolation::Disconnected);
    }
    let n = graph.num_nodes();
    if contact.size() != n {
        violations.push(NetworkViolation::SizeMismatch {
            graph: n,
            contact: contact.size(),
        });
        return NetworkReport {
            violations,
            lambda2: None,
        };
    }
    let p = contact.matrix();
    for i in 0..n {
        let sum: f64 = p.row(i).iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            violations.push(NetworkViolation::RowNotStochastic { row: i, sum });
        }
        if p[(i, i)] != 0.0 {
            violations.push(NetworkViolation::NonZeroDiagonal { node: i });
        }
        for j in 0..n {
            if i != j && p[(i, j)] > 0.0 && !graph.has_edge(i, j) {
                violations.push(NetworkViolation::SupportExceedsEdges { from: i, to: j });
            }
        }
    }
    let lambda2 = second_eigenvalue_modulus(&expected_gossip_matrix(contact)).ok();
    if let Some(l2) = lambda2 {
        if l2 >= 1.0 - SPECTRAL_MARGIN && n > 1 {
            violations.push(NetworkViolation::NoSpectralGap { lambda2: l2 });
        }
    }
    NetworkReport {
        violations,
        lambda2,
    }
}

/// Slot `slot`: agent `i` woke up and averaged with neighbour `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GossipEvent {
    pub i: usize,
    pub j: usize,
    pub slot: u64,
}

/// Samples gossip events from a contact matrix. Rows are precomputed; an
/// all-zero row (isolated agent) produces a silent slot.
#[derive(Debug, Clone)]
pub struct GossipSampler {
    rows: Vec<Option<WeightedIndex<f64>>>,
}

impl GossipSampler {
    pub fn new(contact: &ContactMatrix) -> Self {
        let rows = (0..contact.size())
            .map(|i| WeightedIndex::new(contact.row(i)).ok())
            .collect();
        Self { rows }
    }

    pub fn num_agents(&self) -> usize {
        self.rows.len()
    }

    /// The clock-tick owner is always drawn, so the random stream advances
    /// identically whether or not the slot turns out silent.
    pub fn sample<R: Rng + ?Sized>(&self, slot: u64, rng: &mut R) -> Option<GossipEvent> {
        let i = rng.random_range(0..self.rows.len());
        let j = self.rows[i].as_ref()?.sample(rng);
        Some(GossipEvent { i, j, slot })
    }
}

pub fn sample_gossip_event<R: Rng + ?Sized>(
    contact: &ContactMatrix,
    slot: u64,
    rng: &mut R,
) -> Option<GossipEvent> {
    GossipSampler::new(contact).sample(slot, rng)
}

/// `I - (e_i - e_j)(e_i - e_j)^T / 2`.
pub fn gossip_matrix(event: &GossipEvent, n: usize) -> DMatrix<f64> {
    let mut diff = DMatrix::zeros(n, 1);
    diff[(event.i, 0)] = 1.0;
    diff[(event.j, 0)] -= 1.0;
    DMatrix::identity(n, n) - (&diff * diff.transpose()) * 0.5
}

/// `E[W] = I - D/(2n) + (P + P^T)/(2n)` with `D_i = Σ_j (P_ij + P_ji)`.
pub fn expected_gossip_matrix(contact: &ContactMatrix) -> DMatrix<f64> {
    let p = contact.matrix();
    let n = p.nrows();
    let sym = p + p.transpose();
    let d = DMatrix::from_diagonal(&sym.column_sum());
    let scale = 1.0 / (2.0 * n as f64);
    DMatrix::identity(n, n) - d * scale + sym * scale
}

/// Second-largest eigenvalue modulus of a symmetric matrix.
pub fn second_eigenvalue_modulus(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL {
        return Err(Error::Asymmetric(asym));
    }
    if m.nrows() < 2 {
        return Ok(0.0);
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut moduli: Vec<f64> = eig.eigenvalues.iter().map(|v| v.abs()).collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    Ok(moduli[1].clamp(0.0, 1.0))
}

/// Inter-tick durations of the global rate-`n` Poisson clock.
pub fn sample_tick_durations<R: Rng + ?Sized>(n: usize, count: usize, rng: &mut R) -> Vec<f64> {
    let exp = Exp::new(n as f64).expect("rate is positive");
    (0..count).map(|_| exp.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn graph_rejects_loops_and_out_of_range() {
        assert!(Graph::new(3, [(1, 1)]).is_err());
        assert!(Graph::new(3, [(0, 3)]).is_err());
        let g = Graph::new(3, [(1, 0), (0, 1)]).unwrap();
        assert_eq!(g.edges().len(), 1);
    }

    #[test]
    fn uniform_contact_examples() {
        let p = uniform_neighbor_contact(&Graph::path(3)).unwrap();
        assert_eq!(p.row(1), vec![0.5, 0.0, 0.5]);

        let p = uniform_neighbor_contact(&Graph::complete(3)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(p.matrix()[(i, j)], if i == j { 0.0 } else { 0.5 });
            }
        }

        let p = uniform_neighbor_contact(&Graph::star(4)).unwrap();
        assert_eq!(p.row(0), vec![0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(p.row(2), vec![1.0, 0.0, 0.0, 0.0]);

        let isolated = Graph::new(3, [(0, 1)]).unwrap();
        assert_eq!(
            uniform_neighbor_contact(&isolated),
            Err(Error::IsolatedNode(2))
        );
    }

    #[test]
    fn validation_examples() {
        let g = Graph::new(4, [(0, 1), (2, 3)]).unwrap();
        let report = validate_network(&g, &uniform_neighbor_contact(&g).unwrap());
        assert!(report.violations.contains(&NetworkViolation::Disconnected));
        assert_eq!(NetworkViolation::Disconnected.to_string(), "disconnected");

        let g = Graph::path(4);
        let report = validate_network(&g, &uniform_neighbor_contact(&g).unwrap());
        assert!(report.is_ok(), "{:?}", report.violations);
        assert!(report.lambda2.unwrap() < 1.0);

        let g = Graph::path(3);
        let p = ContactMatrix::from_rows(&[
            vec![0.0, 0.5, 0.5],
            vec![0.5, 0.0, 0.5],
            vec![0.0, 1.0, 0.0],
        ])
        .unwrap();
        let report = validate_network(&g, &p);
        assert_eq!(
            report.violations,
            vec![NetworkViolation::SupportExceedsEdges { from: 0, to: 2 }]
        );
        assert!(report.violations[0]
            .to_string()
            .starts_with("support exceeds edges"));
    }

    #[test]
    fn two_node_events_are_the_single_pair() {
        let p = ContactMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let sampler = GossipSampler::new(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut owners = [0usize; 2];
        for slot in 0..1000 {
            let e = sampler.sample(slot, &mut rng).unwrap();
            assert_eq!(e.slot, slot);
            assert_eq!(e.i + e.j, 1);
            owners[e.i] += 1;
        }
        assert!(owners[0] > 400 && owners[1] > 400);
    }

    #[test]
    fn event_frequencies_on_triangle() {
        let p = uniform_neighbor_contact(&Graph::complete(3)).unwrap();
        let sampler = GossipSampler::new(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws = 100_000;
        let mut pairs = [[0usize; 3]; 3];
        let mut owners = [0usize; 3];
        for slot in 0..draws {
            let e = sampler.sample(slot, &mut rng).unwrap();
            pairs[e.i.min(e.j)][e.i.max(e.j)] += 1;
            owners[e.i] += 1;
        }
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            let f = pairs[a][b] as f64 / draws as f64;
            assert!((f - 1.0 / 3.0).abs() < 0.01, "pair ({a},{b}) freq {f}");
        }
        for c in owners {
            assert!((c as f64 / draws as f64 - 1.0 / 3.0).abs() < 0.01);
        }
    }

    #[test]
    fn isolated_owner_gives_silent_slot() {
        let g = Graph::new(3, [(0, 1)]).unwrap();
        let sampler = GossipSampler::new(&ContactMatrix::uniform_allowing_isolated(&g));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let silent = (0..3000)
            .filter(|&t| sampler.sample(t, &mut rng).is_none())
            .count();
        assert!((silent as f64 / 3000.0 - 1.0 / 3.0).abs() < 0.05);
    }

    #[test]
    fn gossip_matrix_instance() {
        let w = gossip_matrix(
            &GossipEvent {
                i: 0,
                j: 1,
                slot: 0,
            },
            3,
        );
        let expected =
            DMatrix::from_row_slice(3, 3, &[0.5, 0.5, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(w, expected);
    }

    #[test]
    fn expected_matrix_two_nodes() {
        let p = ContactMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let ew = expected_gossip_matrix(&p);
        assert_eq!(ew, DMatrix::from_element(2, 2, 0.5));
        assert!(second_eigenvalue_modulus(&ew).unwrap().abs() < 1e-15);
    }

    #[test]
    fn expected_matrix_matches_monte_carlo() {
        let g = Graph::new(5, [(0, 1), (1, 2), (2, 3), (3, 4), (1, 3)]).unwrap();
        let p = uniform_neighbor_contact(&g).unwrap();
        let sampler = GossipSampler::new(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws = 100_000;
        let mut sum = DMatrix::zeros(5, 5);
        for t in 0..draws {
            sum += gossip_matrix(&sampler.sample(t, &mut rng).unwrap(), 5);
        }
        let mean = sum / draws as f64;
        assert!((mean - expected_gossip_matrix(&p)).amax() < 0.01);
    }

    #[test]
    fn second_eigenvalue_examples() {
        let n = 4;
        assert!(
            second_eigenvalue_modulus(&DMatrix::from_element(n, n, 1.0 / n as f64)).unwrap()
                < 1e-12
        );
        assert!((second_eigenvalue_modulus(&DMatrix::identity(n, n)).unwrap() - 1.0).abs() < 1e-15);
        let asym = DMatrix::from_row_slice(2, 2, &[0.5, 0.6, 0.4, 0.5]);
        assert!(matches!(
            second_eigenvalue_modulus(&asym),
            Err(Error::Asymmetric(_))
        ));
    }

    #[test]
    fn tick_durations_have_rate_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let d = sample_tick_durations(4, 50_000, &mut rng);
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        assert!((mean - 0.25).abs() < 0.01);
    }

    fn doubly_stochastic(m: &DMatrix<f64>, tol: f64) -> bool {
        m.row_sum().iter().all(|s| (s - 1.0).abs() <= tol)
            && m.column_sum().iter().all(|s| (s - 1.0).abs() <= tol)
            && m.iter().all(|&v| v >= 0.0)
    }

    proptest! {
        #[test]
        fn gossip_matrices_are_symmetric_idempotent_projections(n in 2usize..12, a in 0usize..12, b in 0usize..12) {
            let (i, j) = (a % n, b % n);
            prop_assume!(i != j);
            let w = gossip_matrix(&GossipEvent { i, j, slot: 0 }, n);
            prop_assert!((&w - w.transpose()).amax() <= 1e-14);
            prop_assert!(doubly_stochastic(&w, 1e-14));
            prop_assert!((&w * &w - &w).amax() <= 1e-14);
        }

        #[test]
        fn products_stay_doubly_stochastic(seed in any::<u64>(), n in 2usize..10, steps in 1usize..200) {
            let p = uniform_neighbor_contact(&Graph::complete(n)).unwrap();
            let sampler = GossipSampler::new(&p);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut prod = DMatrix::identity(n, n);
            for t in 0..steps {
                prod = gossip_matrix(&sampler.sample(t as u64, &mut rng).unwrap(), n) * prod;
            }
            prop_assert!(doubly_stochastic(&prod, 1e-12));
        }

        #[test]
        fn expected_matrix_is_symmetric_doubly_stochastic(n in 2usize..10, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..n).map(|i| {
                let mut r: Vec<f64> = (0..n).map(|j| if i == j { 0.0 } else { rng.random::<f64>() + 0.01 }).collect();
                let s: f64 = r.iter().sum();
                r.iter_mut().for_each(|v| *v /= s);
                r
            }).collect();
            let ew = expected_gossip_matrix(&ContactMatrix::from_rows(&rows).unwrap());
            prop_assert!((&ew - ew.transpose()).amax() <= 1e-15);
            prop_assert!(doubly_stochastic(&ew, 1e-12));
        }
    }
}
