//! Network topology, locality and delay support masks, and the matching
//! exponential penalty weights.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Hop distances between nodes plus the node each actuator sits on.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    dist: DMatrix<usize>,
    node_of_actuator: Vec<usize>,
}

impl Topology {
    /// `node_of_actuator` holds 0-based node indices.
    pub fn new(dist: DMatrix<usize>, node_of_actuator: Vec<usize>) -> Result<Self> {
        let n = dist.nrows();
        if n == 0 || dist.ncols() != n {
            return Err(Error::InvalidArgument(
                "distance matrix must be square and non-empty".into(),
            ));
        }
        for i in 0..n {
            if dist[(i, i)] != 0 {
                return Err(Error::InvalidArgument(format!("dist({i},{i}) must be 0")));
            }
            for j in 0..n {
                if dist[(i, j)] != dist[(j, i)] {
                    return Err(Error::InvalidArgument("distance matrix not symmetric".into()));
                }
            }
        }
        if let Some(&bad) = node_of_actuator.iter().find(|&&p| p >= n) {
            return Err(Error::InvalidArgument(format!(
                "actuator node index {bad} out of range for {n} nodes"
            )));
        }
        Ok(Self {
            dist,
            node_of_actuator,
        })
    }

    /// Assign each input to the single node its column of `b` touches.
    /// Errors when a column touches zero or several nodes.
    pub fn with_input_matrix(dist: DMatrix<usize>, b: &DMatrix<f64>) -> Result<Self> {
        if b.nrows() != dist.nrows() {
            return Err(Error::dims(
                "Topology::with_input_matrix",
                format!("B has {} rows for {} nodes", b.nrows(), dist.nrows()),
            ));
        }
        let nodes = b
            .column_iter()
            .enumerate()
            .map(|(a, col)| {
                let support: Vec<usize> = (0..col.len()).filter(|&i| col[i] != 0.0).collect();
                match support.as_slice() {
                    [p] => Ok(*p),
                    _ => Err(Error::InvalidArgument(format!(
                        "input {a} acts on {} nodes; masks need exactly one",
                        support.len()
                    ))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(dist, nodes)
    }

    pub fn n(&self) -> usize {
        self.dist.nrows()
    }

    pub fn m(&self) -> usize {
        self.node_of_actuator.len()
    }

    pub fn dist(&self, i: usize, j: usize) -> usize {
        self.dist[(i, j)]
    }

    pub fn node_of_actuator(&self) -> &[usize] {
        &self.node_of_actuator
    }
}

/// Chain of `n` nodes with `dist(i,j) = |i-j|`. Actuator nodes are given as
/// 1-based labels, matching how the network is usually described.
pub fn chain_topology(n: usize, actuated_nodes: &[usize]) -> Result<Topology> {
    if n == 0 {
        return Err(Error::InvalidArgument("chain needs at least one node".into()));
    }
    if let Some(&bad) = actuated_nodes.iter().find(|&&p| p == 0 || p > n) {
        return Err(Error::InvalidArgument(format!(
            "actuator node {bad} outside 1..={n}"
        )));
    }
    let dist = DMatrix::from_fn(n, n, |i, j| i.abs_diff(j));
    Topology::new(dist, actuated_nodes.iter().map(|p| p - 1).collect())
}

/// Allowed supports of `Rc(k)` (n×n) and `Mc(k)` (m×n), `k = 1..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityMask {
    r: Vec<DMatrix<bool>>,
    m: Vec<DMatrix<bool>>,
}

impl SparsityMask {
    pub fn new(r: Vec<DMatrix<bool>>, m: Vec<DMatrix<bool>>) -> Result<Self> {
        if r.is_empty() || r.len() != m.len() {
            return Err(Error::dims(
                "SparsityMask::new",
                format!("{} R patterns vs {} M patterns", r.len(), m.len()),
            ));
        }
        let n = r[0].nrows();
        let ma = m[0].nrows();
        let ok = r.iter().all(|p| p.shape() == (n, n)) && m.iter().all(|p| p.shape() == (ma, n));
        if !ok {
            return Err(Error::dims("SparsityMask::new", "inconsistent pattern shapes"));
        }
        Ok(Self { r, m })
    }

    /// No restriction at all.
    pub fn unrestricted(n: usize, m: usize, horizon: usize) -> Self {
        Self {
            r: vec![DMatrix::from_element(n, n, true); horizon],
            m: vec![DMatrix::from_element(m, n, true); horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.r.len()
    }

    pub fn n(&self) -> usize {
        self.r[0].nrows()
    }

    pub fn m(&self) -> usize {
        self.m[0].nrows()
    }

    pub fn patterns_r(&self) -> &[DMatrix<bool>] {
        &self.r
    }

    pub fn patterns_m(&self) -> &[DMatrix<bool>] {
        &self.m
    }

    /// Is `Rc(k)[i,j]` allowed to be nonzero? `k` is 1-based.
    pub fn allows_r(&self, k: usize, i: usize, j: usize) -> bool {
        self.r[k - 1][(i, j)]
    }

    pub fn allows_m(&self, k: usize, a: usize, j: usize) -> bool {
        self.m[k - 1][(a, j)]
    }

    /// `Rc(1) = I` is representable.
    pub fn admits_identity(&self) -> bool {
        let p = &self.r[0];
        (0..p.nrows()).all(|i| p[(i, i)])
    }

    /// First `horizon` patterns.
    pub fn truncated(&self, horizon: usize) -> Result<Self> {
        if horizon > self.horizon() || horizon == 0 {
            return Err(Error::MaskHorizon {
                mask: self.horizon(),
                required: horizon,
            });
        }
        Ok(Self {
            r: self.r[..horizon].to_vec(),
            m: self.m[..horizon].to_vec(),
        })
    }

    /// Elementwise AND.
    pub fn intersect(&self, other: &Self) -> Result<Self> {
        if self.horizon() != other.horizon() || self.n() != other.n() || self.m() != other.m() {
            return Err(Error::dims(
                "intersect",
                format!(
                    "horizon/n/m {}/{}/{} vs {}/{}/{}",
                    self.horizon(),
                    self.n(),
                    self.m(),
                    other.horizon(),
                    other.n(),
                    other.m()
                ),
            ));
        }
        let and = |a: &[DMatrix<bool>], b: &[DMatrix<bool>]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.zip_map(y, |p, q| p && q))
                .collect()
        };
        Ok(Self {
            r: and(&self.r, &other.r),
            m: and(&self.m, &other.m),
        })
    }

    /// Number of allowed entries across all patterns.
    pub fn allowed_count(&self) -> usize {
        self.r
            .iter()
            .chain(&self.m)
            .map(|p| p.iter().filter(|&&b| b).count())
            .sum()
    }
}

fn build_mask(
    topo: &Topology,
    horizon: usize,
    allowed: impl Fn(usize, usize) -> bool,
) -> SparsityMask {
    let n = topo.n();
    let r = (1..=horizon)
        .map(|k| DMatrix::from_fn(n, n, |i, j| allowed(k, topo.dist(i, j))))
        .collect();
    let m = (1..=horizon)
        .map(|k| {
            DMatrix::from_fn(topo.m(), n, |a, j| {
                allowed(k, topo.dist(topo.node_of_actuator[a], j))
            })
        })
        .collect();
    SparsityMask { r, m }
}

/// Node `i` may only use nodes within `l` hops, at every spectral index.
pub fn locality_mask(topo: &Topology, l: usize, horizon: usize) -> SparsityMask {
    build_mask(topo, horizon, |_, d| d <= l)
}

/// Information from node `j` reaches node `i` after
/// `d(i,j) = ceil(dist(i,j) / comm_speed)` steps; term `k` may use it only
/// once `k >= d(i,j)`.
pub fn delay_mask(topo: &Topology, comm_speed: f64, horizon: usize) -> Result<SparsityMask> {
    if !(comm_speed > 0.0 && comm_speed.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "communication speed must be positive, got {comm_speed}"
        )));
    }
    Ok(build_mask(topo, horizon, |k, d| {
        k as f64 >= (d as f64 / comm_speed).ceil()
    }))
}

/// Per-entry weights for `Rc(k)` and `Mc(k)`, `k = 1..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyWeights {
    pub r: Vec<DMatrix<f64>>,
    pub m: Vec<DMatrix<f64>>,
}

impl PenaltyWeights {
    pub fn horizon(&self) -> usize {
        self.r.len()
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.horizon() != other.horizon() {
            return Err(Error::dims("PenaltyWeights::add", "horizon mismatch"));
        }
        let sum = |a: &[DMatrix<f64>], b: &[DMatrix<f64>]| a.iter().zip(b).map(|(x, y)| x + y).collect();
        Ok(Self {
            r: sum(&self.r, &other.r),
            m: sum(&self.m, &other.m),
        })
    }
}

fn build_weights(topo: &Topology, horizon: usize, w: impl Fn(usize, usize) -> f64) -> PenaltyWeights {
    let n = topo.n();
    PenaltyWeights {
        r: (1..=horizon)
            .map(|k| DMatrix::from_fn(n, n, |i, j| w(k, topo.dist(i, j))))
            .collect(),
        m: (1..=horizon)
            .map(|k| {
                DMatrix::from_fn(topo.m(), n, |a, j| w(k, topo.dist(topo.node_of_actuator[a], j)))
            })
            .collect(),
    }
}

/// `e^{dist(i,j) - k}`: cheap to use information once it could have
/// arrived, expensive before.
pub fn delay_penalty_weights(topo: &Topology, horizon: usize) -> PenaltyWeights {
    build_weights(topo, horizon, |k, d| (d as f64 - k as f64).exp())
}

/// `e^{dist(i,j)}`, the same at every `k`.
pub fn locality_penalty_weights(topo: &Topology, horizon: usize) -> PenaltyWeights {
    build_weights(topo, horizon, |_, d| (d as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn band(p: &DMatrix<bool>) -> usize {
        let n = p.nrows();
        let mut w = 0;
        for i in 0..n {
            for j in 0..n {
                if p[(i, j)] {
                    w = w.max(i.abs_diff(j));
                }
            }
        }
        w
    }

    fn is_band_exact(p: &DMatrix<bool>, half: usize) -> bool {
        (0..p.nrows()).all(|i| (0..p.ncols()).all(|j| p[(i, j)] == (i.abs_diff(j) <= half)))
    }

    #[test]
    fn chain_topology_examples() {
        let t = chain_topology(10, &[3, 6, 10]).unwrap();
        assert_eq!(t.dist(0, 9), 9);
        assert_eq!(t.m(), 3);
        assert_eq!(t.node_of_actuator(), &[2, 5, 9]);
        let one = chain_topology(1, &[1]).unwrap();
        assert_eq!(one.dist(0, 0), 0);
        let four = chain_topology(4, &[1]).unwrap();
        assert_eq!((0..4).map(|j| four.dist(0, j)).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert!(chain_topology(4, &[5]).is_err());
        assert!(chain_topology(4, &[0]).is_err());
    }

    #[test]
    fn input_matrix_assignment() {
        let dist = DMatrix::from_fn(3, 3, |i, j| i.abs_diff(j));
        let b = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 2.0, 0.0, 0.0, 1.0]);
        let t = Topology::with_input_matrix(dist.clone(), &b).unwrap();
        assert_eq!(t.node_of_actuator(), &[1, 2]);
        let spread = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 0.0]);
        assert!(Topology::with_input_matrix(dist, &spread).is_err());
    }

    #[test]
    fn locality_examples() {
        let t = chain_topology(10, &[3, 6, 10]).unwrap();
        let l1 = locality_mask(&t, 1, 5);
        assert!(l1.patterns_r().iter().all(|p| is_band_exact(p, 1)));
        assert_eq!(locality_mask(&t, 9, 3).allowed_count(), 3 * (100 + 30));
        assert!(locality_mask(&t, 0, 3).patterns_r().iter().all(|p| is_band_exact(p, 0)));
        // actuator at node 3 (index 2) may use nodes 2..=4
        let pm = &l1.patterns_m()[0];
        assert_eq!((0..10).filter(|&j| pm[(0, j)]).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn delay_examples() {
        let t = chain_topology(10, &[3, 6, 10]).unwrap();
        let d = delay_mask(&t, 1.0, 6).unwrap();
        assert!(is_band_exact(&d.patterns_r()[0], 1));
        assert!(is_band_exact(&d.patterns_r()[2], 3));
        for k in 1..6 {
            let (a, b) = (&d.patterns_r()[k - 1], &d.patterns_r()[k]);
            assert!(a.zip_map(b, |x, y| !x || y).iter().all(|&v| v), "monotone at {k}");
            assert!(band(b) >= band(a));
        }
        // half speed: one hop takes two steps
        let slow = delay_mask(&t, 0.5, 4).unwrap();
        assert!(is_band_exact(&slow.patterns_r()[0], 0));
        assert!(is_band_exact(&slow.patterns_r()[1], 1));
        assert!(delay_mask(&t, 0.0, 4).is_err());
    }

    #[test]
    fn delay_and_locality_intersection_is_tridiagonal() {
        let t = chain_topology(10, &[3, 6, 10]).unwrap();
        let h = 8;
        let both = delay_mask(&t, 1.0, h)
            .unwrap()
            .intersect(&locality_mask(&t, 1, h))
            .unwrap();
        for k in 1..=h {
            for i in 0..10usize {
                for j in 0..10 {
                    let oracle = k >= i.abs_diff(j) && i.abs_diff(j) <= 1;
                    assert_eq!(both.allows_r(k, i, j), oracle);
                }
            }
        }
        assert!(both.admits_identity());
    }

    #[test]
    fn intersect_identities() {
        let t = chain_topology(5, &[2, 4]).unwrap();
        let x = delay_mask(&t, 1.0, 3).unwrap();
        let all = SparsityMask::unrestricted(5, 2, 3);
        let none = SparsityMask::new(
            vec![DMatrix::from_element(5, 5, false); 3],
            vec![DMatrix::from_element(2, 5, false); 3],
        )
        .unwrap();
        assert_eq!(all.intersect(&x).unwrap(), x);
        assert_eq!(none.intersect(&x).unwrap(), none);
        assert_eq!(x.intersect(&x).unwrap(), x);
        assert!(x.intersect(&SparsityMask::unrestricted(5, 2, 4)).is_err());
    }

    #[test]
    fn identity_representability() {
        let mut r = vec![DMatrix::from_element(2, 2, true)];
        r[0][(1, 1)] = false;
        let mask = SparsityMask::new(r, vec![DMatrix::from_element(1, 2, true)]).unwrap();
        assert!(!mask.admits_identity());
    }

    #[test]
    fn delay_weights() {
        let t = chain_topology(3, &[1]).unwrap();
        let w = delay_penalty_weights(&t, 2);
        assert_eq!(w.r[1][(0, 2)], 1.0); // dist 2 at k 2
        assert!((w.r[0][(1, 1)] - (-1f64).exp()).abs() < 1e-15);
        for k in 1..=2 {
            for i in 0..3usize {
                for j in 0..3 {
                    let expected = (i.abs_diff(j) as f64 - k as f64).exp();
                    assert_eq!(w.r[k - 1][(i, j)], expected);
                }
                assert_eq!(w.m[k - 1][(0, i)], (i as f64 - k as f64).exp());
            }
        }
    }

    #[test]
    fn locality_weights() {
        let t = chain_topology(4, &[2]).unwrap();
        let w = locality_penalty_weights(&t, 3);
        for k in 0..3 {
            assert_eq!(w.r[k][(1, 1)], 1.0);
            assert_eq!(w.r[k][(0, 2)], 2f64.exp());
            assert_eq!(w.r[k], w.r[0]);
            assert_eq!(w.m[k], w.m[0]);
        }
    }
}
