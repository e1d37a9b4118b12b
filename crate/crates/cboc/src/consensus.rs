//! The K x K consensus matrix: construction, per-round evolution under the
//! uniform-transitional and leader-driven schemes, doubly-stochastic repair,
//! connectivity masking, and application to shared design points.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Row/column-sum tolerance for a valid consensus matrix.
pub const DS_TOL: f64 = 1e-9;
/// Convergence target for the Sinkhorn repair loop.
const REPAIR_TOL: f64 = 1e-10;
const REPAIR_MAX_ITERS: usize = 1000;

/// A validated doubly-stochastic weight matrix. Client i's next design is
/// the row-i weighted average of all shared candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusMatrix {
    entries: DMatrix<f64>,
}

impl ConsensusMatrix {
    pub fn from_matrix(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() || entries.nrows() == 0 {
            return Err(Error::InvalidClientCount(entries.nrows()));
        }
        if entries.iter().any(|&w| !w.is_finite() || w < -1e-12) {
            return Err(Error::NonFinite("consensus matrix entries"));
        }
        let m = ConsensusMatrix { entries };
        let dev = m.ds_deviation();
        if dev > DS_TOL {
            return Err(Error::RepairFailed {
                residual: dev,
                iters: 0,
            });
        }
        Ok(m)
    }

    pub fn identity(k: usize) -> Self {
        ConsensusMatrix {
            entries: DMatrix::identity(k, k),
        }
    }

    pub fn k(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn diag_mean(&self) -> f64 {
        self.entries.diagonal().iter().sum::<f64>() / self.k() as f64
    }

    /// Largest deviation of any row or column sum from one.
    pub fn ds_deviation(&self) -> f64 {
        ds_deviation(&self.entries)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let k = self.k();
        for i in 0..k {
            for j in (i + 1)..k {
                if (self.entries[(i, j)] - self.entries[(j, i)]).abs() > tol {
                    return false;
                }
            }
        }
        true
    }
}

fn ds_deviation(m: &DMatrix<f64>) -> f64 {
    let mut dev: f64 = 0.0;
    for i in 0..m.nrows() {
        dev = dev.max((m.row(i).sum() - 1.0).abs());
        dev = dev.max((m.column(i).sum() - 1.0).abs());
    }
    dev
}

/// Equal 1/K weights for every pair of clients.
pub fn init_uniform(k: usize) -> Result<ConsensusMatrix> {
    if k == 0 {
        return Err(Error::InvalidClientCount(0));
    }
    ConsensusMatrix::from_matrix(DMatrix::from_element(k, k, 1.0 / k as f64))
}

/// One linear step toward the identity: diagonals gain (K-1)/(TK),
/// off-diagonals lose 1/(TK). Entries are clamped to [0, 1]; if clamping
/// fired the matrix is Sinkhorn-repaired.
pub fn uniform_step(w: &ConsensusMatrix, horizon: usize) -> Result<ConsensusMatrix> {
    if horizon == 0 {
        return Err(Error::InvalidDomain("horizon T must be >= 1".into()));
    }
    let k = w.k();
    let tk = (horizon * k) as f64;
    let diag_gain = (k as f64 - 1.0) / tk;
    let off_loss = 1.0 / tk;

    let mut next = w.entries.clone();
    for i in 0..k {
        for j in 0..k {
            next[(i, j)] += if i == j { diag_gain } else { -off_loss };
        }
    }
    finalize_clamped(next)
}

/// Raw leader-driven block update of W2 from W1, before any clamping or
/// repair. Exposed so the exact row/column cancellation can be audited.
pub fn leader_block_update_raw(
    w1: &ConsensusMatrix,
    leader_index: usize,
    horizon: usize,
) -> DMatrix<f64> {
    let k = w1.k();
    let tk = (horizon * k) as f64;
    let gain = (k as f64 - 1.0) / tk;
    let loss = 1.0 / tk;
    let m = leader_index;

    let mut w2 = w1.entries.clone();
    for i in 0..k {
        for j in 0..k {
            if i == m && j == m {
                w2[(i, j)] -= (k as f64 - 1.0).powi(2) / tk;
            } else if i == m || j == m {
                w2[(i, j)] += gain;
            } else {
                w2[(i, j)] -= loss;
            }
        }
    }
    w2
}

/// Tilts the weights toward the round's leader: the client with the largest
/// shared reward, except that a repeated leader yields to the runner-up.
/// Ties break toward the lowest client id. Returns the updated matrix and
/// the 1-based leader id.
pub fn leader_step(
    w1: &ConsensusMatrix,
    rewards: &[f64],
    prev_leader: Option<usize>,
    horizon: usize,
) -> Result<(ConsensusMatrix, usize)> {
    let k = w1.k();
    if k < 2 {
        return Err(Error::InvalidClientCount(k));
    }
    if rewards.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: rewards.len(),
        });
    }
    if horizon == 0 {
        return Err(Error::InvalidDomain("horizon T must be >= 1".into()));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("rewards"));
    }

    let mut ranked: Vec<usize> = (0..k).collect();
    ranked.sort_by(|&a, &b| rewards[b].total_cmp(&rewards[a]).then(a.cmp(&b)));
    let mut leader = ranked[0];
    if prev_leader == Some(leader + 1) {
        leader = ranked[1];
    }

    let w2 = leader_block_update_raw(w1, leader, horizon);
    Ok((finalize_clamped(w2)?, leader + 1))
}

/// Clamps entries to [0, 1]; repairs only when clamping actually changed
/// something, so exact updates stay exact.
fn finalize_clamped(mut m: DMatrix<f64>) -> Result<ConsensusMatrix> {
    let mut clamped = false;
    for v in m.iter_mut() {
        let c = v.clamp(0.0, 1.0);
        if c != *v {
            clamped = true;
            *v = c;
        }
    }
    if clamped {
        repair_doubly_stochastic(&m)
    } else {
        ConsensusMatrix::from_matrix(m)
    }
}

/// Projects a non-negative square matrix back onto the doubly-stochastic
/// set by alternating row/column normalization with symmetrization.
pub fn repair_doubly_stochastic(raw: &DMatrix<f64>) -> Result<ConsensusMatrix> {
    if raw.nrows() != raw.ncols() || raw.nrows() == 0 {
        return Err(Error::InvalidClientCount(raw.nrows()));
    }
    let k = raw.nrows();
    let mut m = raw.map(|v| v.max(0.0));
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("matrix under repair"));
    }
    for i in 0..k {
        if m.row(i).sum() <= 0.0 || m.column(i).sum() <= 0.0 {
            return Err(Error::InvalidDomain(format!(
                "client {} has no weight to redistribute (zero row or column)",
                i + 1
            )));
        }
    }

    let mut dev = ds_deviation(&m);
    let mut iters = 0;
    while dev > REPAIR_TOL {
        if iters >= REPAIR_MAX_ITERS {
            return Err(Error::RepairFailed {
                residual: dev,
                iters,
            });
        }
        for i in 0..k {
            let s = m.row(i).sum();
            if s <= 0.0 {
                return Err(Error::RepairFailed {
                    residual: dev,
                    iters,
                });
            }
            for j in 0..k {
                m[(i, j)] /= s;
            }
        }
        for j in 0..k {
            let s = m.column(j).sum();
            if s <= 0.0 {
                return Err(Error::RepairFailed {
                    residual: dev,
                    iters,
                });
            }
            for i in 0..k {
                m[(i, j)] /= s;
            }
        }
        let mt = m.transpose();
        m = (m + mt) * 0.5;
        dev = ds_deviation(&m);
        iters += 1;
    }
    ConsensusMatrix::from_matrix(m)
}

/// Symmetric boolean connectivity with a reflexive diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    connected: Vec<Vec<bool>>,
}

impl Adjacency {
    pub fn new(connected: Vec<Vec<bool>>) -> Result<Self> {
        let k = connected.len();
        if k == 0 || connected.iter().any(|row| row.len() != k) {
            return Err(Error::InvalidDomain("adjacency must be square".into()));
        }
        for i in 0..k {
            if !connected[i][i] {
                return Err(Error::InvalidDomain(
                    "adjacency diagonal must be true".into(),
                ));
            }
            for j in 0..k {
                if connected[i][j] != connected[j][i] {
                    return Err(Error::InvalidDomain("adjacency must be symmetric".into()));
                }
            }
        }
        Ok(Adjacency { connected })
    }

    pub fn full(k: usize) -> Self {
        Adjacency {
            connected: vec![vec![true; k]; k],
        }
    }

    pub fn k(&self) -> usize {
        self.connected.len()
    }

    pub fn is_connected(&self, i: usize, j: usize) -> bool {
        self.connected[i][j]
    }

    pub fn is_full(&self) -> bool {
        self.connected.iter().flatten().all(|&c| c)
    }
}

/// Zeroes weights between disconnected clients, then repairs.
pub fn mask_disconnected(w: &ConsensusMatrix, adjacency: &Adjacency) -> Result<ConsensusMatrix> {
    if adjacency.k() != w.k() {
        return Err(Error::DimensionMismatch {
            expected: w.k(),
            found: adjacency.k(),
        });
    }
    if adjacency.is_full() {
        return Ok(w.clone());
    }
    let mut masked = w.entries.clone();
    for i in 0..w.k() {
        for j in 0..w.k() {
            if !adjacency.is_connected(i, j) {
                masked[(i, j)] = 0.0;
            }
        }
    }
    repair_doubly_stochastic(&masked)
}

/// The consensus step: client k's next point is sum_j w_kj x_j, i.e. the
/// Kronecker-lifted weight matrix applied blockwise.
pub fn consensus_combine(w: &ConsensusMatrix, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let k = w.k();
    if points.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: points.len(),
        });
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: points.iter().map(|p| p.len()).find(|&l| l != dim).unwrap(),
        });
    }
    let mut out = vec![vec![0.0; dim]; k];
    for i in 0..k {
        for j in 0..k {
            let wij = w.entries[(i, j)];
            for d in 0..dim {
                out[i][d] += wij * points[j][d];
            }
        }
    }
    Ok(out)
}

/// Which evolution rule the matrix follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    UniformTransitional,
    LeaderDriven,
    Identity,
}

impl SchemeKind {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "uniform" => Ok(SchemeKind::UniformTransitional),
            "leader" => Ok(SchemeKind::LeaderDriven),
            "identity" => Ok(SchemeKind::Identity),
            other => Err(Error::config(
                "scheme",
                format!("unknown scheme `{other}` (expected uniform, leader or identity)"),
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SchemeKind::UniformTransitional => "uniform",
            SchemeKind::LeaderDriven => "leader",
            SchemeKind::Identity => "identity",
        }
    }
}

/// A scheme plus its horizon and optional connectivity restriction.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusScheme {
    pub kind: SchemeKind,
    pub horizon: usize,
    pub adjacency: Option<Adjacency>,
}

impl ConsensusScheme {
    pub fn new(kind: SchemeKind, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidDomain("horizon T must be >= 1".into()));
        }
        Ok(ConsensusScheme {
            kind,
            horizon,
            adjacency: None,
        })
    }

    pub fn uniform(horizon: usize) -> Result<Self> {
        Self::new(SchemeKind::UniformTransitional, horizon)
    }

    pub fn leader(horizon: usize) -> Result<Self> {
        Self::new(SchemeKind::LeaderDriven, horizon)
    }

    pub fn identity(horizon: usize) -> Result<Self> {
        Self::new(SchemeKind::Identity, horizon)
    }

    pub fn with_adjacency(mut self, adjacency: Adjacency) -> Self {
        self.adjacency = Some(adjacency);
        self
    }
}

/// Per-run evolution state for a consensus scheme. One round = one call to
/// [`SchemeEngine::round_matrix`], which yields the matrix to combine with
/// this round (masked if a topology is set) and advances the state.
///
/// Leader bookkeeping: the baseline W1 moves linearly toward the identity
/// while each round's W2 is derived fresh from the current W1, so W2 also
/// converges to the identity. Once the horizon is exhausted the matrix is
/// held at the identity.
#[derive(Debug, Clone)]
pub struct SchemeEngine {
    scheme: ConsensusScheme,
    k: usize,
    t: usize,
    baseline: ConsensusMatrix,
    prev_leader: Option<usize>,
}

impl SchemeEngine {
    pub fn new(scheme: ConsensusScheme, k: usize) -> Result<Self> {
        if let Some(adj) = &scheme.adjacency {
            if adj.k() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    found: adj.k(),
                });
            }
        }
        let baseline = match scheme.kind {
            SchemeKind::Identity => ConsensusMatrix::identity(k),
            _ => init_uniform(k)?,
        };
        Ok(SchemeEngine {
            scheme,
            k,
            t: 0,
            baseline,
            prev_leader: None,
        })
    }

    /// Matrix for the current round, plus the elected leader id when the
    /// scheme has one. Advances the internal state.
    pub fn round_matrix(&mut self, rewards: &[f64]) -> Result<(ConsensusMatrix, Option<usize>)> {
        let (mut w, leader) = if self.k == 1 {
            (ConsensusMatrix::identity(1), None)
        } else if self.t >= self.scheme.horizon {
            (ConsensusMatrix::identity(self.k), None)
        } else {
            match self.scheme.kind {
                SchemeKind::Identity => (ConsensusMatrix::identity(self.k), None),
                SchemeKind::UniformTransitional => {
                    let w = self.baseline.clone();
                    self.baseline = uniform_step(&self.baseline, self.scheme.horizon)?;
                    (w, None)
                }
                SchemeKind::LeaderDriven => {
                    let (w2, leader) = leader_step(
                        &self.baseline,
                        rewards,
                        self.prev_leader,
                        self.scheme.horizon,
                    )?;
                    self.baseline = uniform_step(&self.baseline, self.scheme.horizon)?;
                    self.prev_leader = Some(leader);
                    (w2, Some(leader))
                }
            }
        };
        self.t += 1;
        if let Some(adj) = &self.scheme.adjacency {
            w = mask_disconnected(&w, adj)?;
        }
        Ok((w, leader))
    }
}
