//! Labelled trees, forests, cilia and marks; Prufer enumeration; the BKAR
//! weight matrices; and exact (big-rational) evaluation of the tree-sum
//! identities used by the expansion bounds.
//!
//! Vertices are 0-based throughout.

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::Rng;
use std::cmp::Reverse;
use std::collections::BinaryHeap;
use thiserror::Error;

pub const TREE_ENUMERATION_CAP: usize = 8;
pub const FOREST_ENUMERATION_CAP: usize = 6;

#[derive(Debug, Error)]
pub enum CombinError {
    #[error("not a tree on {n} vertices: {reason}")]
    NotATree { n: usize, reason: String },
    #[error("not a forest on {n} vertices: {reason}")]
    NotAForest { n: usize, reason: String },
    #[error("enumeration size {n} exceeds cap {cap}")]
    CapExceeded { n: usize, cap: usize },
    #[error("invalid cilia for n = {n}: {reason}")]
    InvalidCilia { n: usize, reason: String },
    #[error("k = {k} exceeds n = {n}")]
    KTooLarge { k: usize, n: usize },
}

fn normalize_edges(edges: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut e: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    e.sort_unstable();
    e
}

struct Dsu(Vec<usize>);

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu((0..n).collect())
    }
    fn find(&mut self, x: usize) -> usize {
        if self.0[x] != x {
            let r = self.find(self.0[x]);
            self.0[x] = r;
        }
        self.0[x]
    }
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra] = rb;
        true
    }
}

/// A labelled tree on {0, .., n-1}.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelledTree {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl LabelledTree {
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self, CombinError> {
        if n == 0 {
            return Err(CombinError::NotATree {
                n,
                reason: "empty vertex set".into(),
            });
        }
        let edges = normalize_edges(edges);
        if edges.len() != n - 1 {
            return Err(CombinError::NotATree {
                n,
                reason: format!("{} edges, expected {}", edges.len(), n - 1),
            });
        }
        let mut dsu = Dsu::new(n);
        for &(a, b) in &edges {
            if a >= n || b >= n || a == b {
                return Err(CombinError::NotATree {
                    n,
                    reason: format!("bad edge ({a},{b})"),
                });
            }
            if !dsu.union(a, b) {
                return Err(CombinError::NotATree {
                    n,
                    reason: format!("cycle through ({a},{b})"),
                });
            }
        }
        Ok(LabelledTree { n, edges })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0usize; self.n];
        for &(a, b) in &self.edges {
            d[a] += 1;
            d[b] += 1;
        }
        d
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// Edge indices (into `edges()`) along the unique path between two vertices.
    pub fn path_edges(&self, from: usize, to: usize) -> Vec<usize> {
        if from == to {
            return Vec::new();
        }
        let mut incident = vec![Vec::new(); self.n];
        for (idx, &(a, b)) in self.edges.iter().enumerate() {
            incident[a].push((b, idx));
            incident[b].push((a, idx));
        }
        // BFS from `from`.
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; self.n];
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(from);
        let mut seen = vec![false; self.n];
        seen[from] = true;
        while let Some(v) = queue.pop_front() {
            if v == to {
                break;
            }
            for &(w, idx) in &incident[v] {
                if !seen[w] {
                    seen[w] = true;
                    prev[w] = Some((v, idx));
                    queue.push_back(w);
                }
            }
        }
        let mut path = Vec::new();
        let mut cur = to;
        while let Some((p, idx)) = prev[cur] {
            path.push(idx);
            cur = p;
        }
        path
    }

    /// Decode a Prufer sequence (length n-2) into the tree on n vertices.
    pub fn from_prufer(code: &[usize], n: usize) -> Result<Self, CombinError> {
        if n == 1 {
            return LabelledTree::new(1, &[]);
        }
        if code.len() != n - 2 || code.iter().any(|&c| c >= n) {
            return Err(CombinError::NotATree {
                n,
                reason: "bad Prufer code".into(),
            });
        }
        let mut degree = vec![1u32; n];
        for &c in code {
            degree[c] += 1;
        }
        let mut leaves: BinaryHeap<Reverse<usize>> =
            (0..n).filter(|&i| degree[i] == 1).map(Reverse).collect();
        let mut edges = Vec::with_capacity(n - 1);
        for &c in code {
            let Reverse(leaf) = leaves.pop().expect("leaf available");
            edges.push((leaf, c));
            degree[leaf] -= 1;
            degree[c] -= 1;
            if degree[c] == 1 {
                leaves.push(Reverse(c));
            }
        }
        let Reverse(u) = leaves.pop().expect("two leaves left");
        let Reverse(v) = leaves.pop().expect("two leaves left");
        edges.push((u, v));
        LabelledTree::new(n, &edges)
    }

    /// The Prufer code (repeatedly strip the smallest leaf).
    pub fn to_prufer(&self) -> Vec<usize> {
        let n = self.n;
        if n <= 2 {
            return Vec::new();
        }
        let mut adj: Vec<std::collections::BTreeSet<usize>> =
            vec![std::collections::BTreeSet::new(); n];
        for &(a, b) in &self.edges {
            adj[a].insert(b);
            adj[b].insert(a);
        }
        let mut leaves: BinaryHeap<Reverse<usize>> =
            (0..n).filter(|&i| adj[i].len() == 1).map(Reverse).collect();
        let mut code = Vec::with_capacity(n - 2);
        for _ in 0..n - 2 {
            let Reverse(leaf) = leaves.pop().expect("leaf");
            let &nbr = adj[leaf].iter().next().expect("neighbour");
            code.push(nbr);
            adj[nbr].remove(&leaf);
            adj[leaf].clear();
            if adj[nbr].len() == 1 {
                leaves.push(Reverse(nbr));
            }
        }
        code
    }

    /// Uniformly random labelled tree via a random Prufer code.
    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        if n <= 2 {
            return LabelledTree::from_prufer(&[], n.max(1)).expect("small tree");
        }
        let code: Vec<usize> = (0..n - 2).map(|_| rng.gen_range(0..n)).collect();
        LabelledTree::from_prufer(&code, n).expect("valid code")
    }
}

/// All labelled trees on n vertices, each exactly once (Cayley: n^(n-2)).
pub fn enumerate_trees(n: usize) -> Result<Vec<LabelledTree>, CombinError> {
    enumerate_trees_capped(n, TREE_ENUMERATION_CAP)
}

pub fn enumerate_trees_capped(n: usize, cap: usize) -> Result<Vec<LabelledTree>, CombinError> {
    if n > cap {
        return Err(CombinError::CapExceeded { n, cap });
    }
    if n <= 2 {
        return Ok(vec![LabelledTree::from_prufer(&[], n)?]);
    }
    let mut out = Vec::new();
    let mut code = vec![0usize; n - 2];
    loop {
        out.push(LabelledTree::from_prufer(&code, n)?);
        let mut i = 0;
        loop {
            if i == code.len() {
                return Ok(out);
            }
            code[i] += 1;
            if code[i] < n {
                break;
            }
            code[i] = 0;
            i += 1;
        }
    }
}

/// A tree with a set of ciliated vertices.
#[derive(Clone, Debug)]
pub struct CiliatedTree {
    pub tree: LabelledTree,
    /// Sorted, distinct cilium vertices.
    pub cilia: Vec<usize>,
}

impl CiliatedTree {
    pub fn new(tree: LabelledTree, cilia: &[usize]) -> Result<Self, CombinError> {
        let mut c = cilia.to_vec();
        c.sort_unstable();
        let n = tree.n();
        if c.windows(2).any(|w| w[0] == w[1]) {
            return Err(CombinError::InvalidCilia {
                n,
                reason: "repeated cilium".into(),
            });
        }
        if c.iter().any(|&v| v >= n) {
            return Err(CombinError::InvalidCilia {
                n,
                reason: "cilium out of range".into(),
            });
        }
        if c.len() > n {
            return Err(CombinError::KTooLarge { k: c.len(), n });
        }
        Ok(CiliatedTree { tree, cilia: c })
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = self.tree.degrees();
        for &v in &self.cilia {
            d[v] += 1;
        }
        d
    }
}

/// A ciliated tree decorated with an ordered list of mark pairs.
#[derive(Clone, Debug)]
pub struct MarkedTree {
    pub ciliated: CiliatedTree,
    pub mark_pairs: Vec<(usize, usize)>,
}

impl MarkedTree {
    pub fn new(ciliated: CiliatedTree, mark_pairs: &[(usize, usize)]) -> Self {
        MarkedTree {
            ciliated,
            mark_pairs: mark_pairs.to_vec(),
        }
    }

    /// Coordination degrees d_i = tree degree + cilium indicator + mark count.
    pub fn degrees(&self) -> Vec<usize> {
        let mut d = self.ciliated.degrees();
        for &(a, b) in &self.mark_pairs {
            d[a] += 1;
            d[b] += 1;
        }
        d
    }
}

/// A forest (acyclic edge set) on {0, .., n-1}.
#[derive(Clone, Debug)]
pub struct Forest {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl Forest {
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self, CombinError> {
        let edges = normalize_edges(edges);
        let mut dsu = Dsu::new(n);
        for &(a, b) in &edges {
            if a >= n || b >= n || a == b {
                return Err(CombinError::NotAForest {
                    n,
                    reason: format!("bad edge ({a},{b})"),
                });
            }
            if !dsu.union(a, b) {
                return Err(CombinError::NotAForest {
                    n,
                    reason: format!("cycle through ({a},{b})"),
                });
            }
        }
        Ok(Forest { n, edges })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Edge indices along the path between two vertices, or None when they
    /// lie in different components.
    pub fn path_edges(&self, from: usize, to: usize) -> Option<Vec<usize>> {
        if from == to {
            return Some(Vec::new());
        }
        let mut incident = vec![Vec::new(); self.n];
        for (idx, &(a, b)) in self.edges.iter().enumerate() {
            incident[a].push((b, idx));
            incident[b].push((a, idx));
        }
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; self.n];
        let mut seen = vec![false; self.n];
        seen[from] = true;
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(from);
        while let Some(v) = queue.pop_front() {
            for &(w, idx) in &incident[v] {
                if !seen[w] {
                    seen[w] = true;
                    prev[w] = Some((v, idx));
                    queue.push_back(w);
                }
            }
        }
        if !seen[to] {
            return None;
        }
        let mut path = Vec::new();
        let mut cur = to;
        while let Some((p, idx)) = prev[cur] {
            path.push(idx);
            cur = p;
        }
        Some(path)
    }
}

/// All forests on n vertices (all acyclic subsets of the complete graph).
pub fn enumerate_forests(n: usize) -> Result<Vec<Forest>, CombinError> {
    if n > FOREST_ENUMERATION_CAP {
        return Err(CombinError::CapExceeded {
            n,
            cap: FOREST_ENUMERATION_CAP,
        });
    }
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            pairs.push((i, j));
        }
    }
    let m = pairs.len();
    let mut out = Vec::new();
    'mask: for mask in 0u32..(1 << m) {
        let mut dsu = Dsu::new(n);
        let mut edges = Vec::new();
        for (b, &(i, j)) in pairs.iter().enumerate() {
            if mask >> b & 1 == 1 {
                if !dsu.union(i, j) {
                    continue 'mask;
                }
                edges.push((i, j));
            }
        }
        out.push(Forest { n, edges });
    }
    Ok(out)
}

/// The min-over-path weight matrix W^F(u) of a forest.
#[derive(Clone, Debug)]
pub struct BkarWeights {
    pub n: usize,
    pub matrix: Vec<Vec<f64>>,
}

impl BkarWeights {
    pub fn min_eigenvalue(&self) -> f64 {
        let n = self.n;
        let m = DMatrix::from_fn(n, n, |i, j| self.matrix[i][j]);
        m.symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b))
    }
}

/// Builds W^F(u): diagonal 1, min over the connecting path, 0 across components.
pub fn bkar_weights(forest: &Forest, u: &[f64]) -> BkarWeights {
    assert_eq!(u.len(), forest.edges().len(), "one parameter per edge");
    let n = forest.n();
    let mut w = vec![vec![0.0; n]; n];
    // Per-vertex BFS carrying the running minimum.
    let mut incident = vec![Vec::new(); n];
    for (idx, &(a, b)) in forest.edges().iter().enumerate() {
        incident[a].push((b, idx));
        incident[b].push((a, idx));
    }
    for i in 0..n {
        w[i][i] = 1.0;
        let mut best = vec![f64::NAN; n];
        best[i] = f64::INFINITY;
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(i);
        while let Some(v) = queue.pop_front() {
            for &(x, idx) in &incident[v] {
                if best[x].is_nan() {
                    best[x] = best[v].min(u[idx]);
                    queue.push_back(x);
                }
            }
        }
        for j in 0..n {
            if j != i && !best[j].is_nan() {
                w[i][j] = best[j];
            }
        }
    }
    BkarWeights { n, matrix: w }
}

pub fn factorial(n: usize) -> BigInt {
    let mut f = BigInt::one();
    for i in 2..=n {
        f *= i;
    }
    f
}

pub fn binomial(n: usize, k: usize) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let mut num = BigInt::one();
    let mut den = BigInt::one();
    for i in 0..k.min(n - k) {
        num *= n - i;
        den *= i + 1;
    }
    num / den
}

/// Closed form of the k-ciliated tree sum:
/// `C(2n-1, n-k) * (2n+k-3)! / (2n-1)!` as an exact rational.
pub fn ciliated_sum(n: usize, k: usize) -> Result<BigRational, CombinError> {
    marked_sum(n, k, 0)
}

/// Closed form of the k-ciliated, 2q-marked tree sum:
/// `C(2n-1, n-k) * (2n+2q+k-3)! / (2n-1)!`.
pub fn marked_sum(n: usize, k: usize, q: usize) -> Result<BigRational, CombinError> {
    if k > n || k == 0 {
        return Err(CombinError::KTooLarge { k, n });
    }
    let num = binomial(2 * n - 1, n - k) * factorial(2 * n + 2 * q + k - 3);
    let den = factorial(2 * n - 1);
    Ok(BigRational::new(num, den))
}

fn subsets_of_size(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for v in start..n {
            if n - v < k - cur.len() {
                break;
            }
            cur.push(v);
            rec(v + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Brute-force evaluation of the ciliated tree sum
/// `(1/n!) * sum over trees and ordered cilia of prod (d_i - 1)!`.
///
/// Ordered cilium tuples are enumerated as subsets weighted by k!, which is
/// exact because the summand is symmetric under reordering.
pub fn ciliated_sum_bruteforce(n: usize, k: usize) -> Result<BigRational, CombinError> {
    marked_sum_bruteforce(n, k, 0)
}

/// Brute-force evaluation of the marked tree sum over trees, ordered cilia
/// and mark sequences in {0..n-1}^(2q).
pub fn marked_sum_bruteforce(n: usize, k: usize, q: usize) -> Result<BigRational, CombinError> {
    if k > n || k == 0 {
        return Err(CombinError::KTooLarge { k, n });
    }
    let trees = enumerate_trees(n)?;
    let subsets = subsets_of_size(n, k);
    let mut total = BigInt::zero();
    let seq_len = 2 * q;
    for tree in &trees {
        let base = tree.degrees();
        for subset in &subsets {
            let mut d0 = base.clone();
            for &v in subset {
                d0[v] += 1;
            }
            // Enumerate mark sequences by odometer.
            let mut marks = vec![0usize; seq_len];
            loop {
                let mut d = d0.clone();
                for &m in &marks {
                    d[m] += 1;
                }
                let mut prod = BigInt::one();
                for &di in &d {
                    prod *= factorial(di - 1);
                }
                total += prod;
                // bump
                let mut i = 0;
                loop {
                    if i == seq_len {
                        break;
                    }
                    marks[i] += 1;
                    if marks[i] < n {
                        break;
                    }
                    marks[i] = 0;
                    i += 1;
                }
                if i == seq_len {
                    break;
                }
            }
        }
    }
    total *= factorial(k);
    Ok(BigRational::new(total, factorial(n)))
}

/// Brute-force Cayley sum `sum over trees of prod (d_i - 1)!`.
pub fn cayley_sum(n: usize) -> Result<BigInt, CombinError> {
    let trees = enumerate_trees(n)?;
    let mut total = BigInt::zero();
    for t in &trees {
        let mut prod = BigInt::one();
        for d in t.degrees() {
            prod *= factorial(d - 1);
        }
        total += prod;
    }
    Ok(total)
}

/// The closed form `(n-2)! * #{d in {1..n}^n : sum d_i = 2(n-1)}`.
pub fn cayley_closed_form(n: usize) -> BigInt {
    assert!(n >= 2);
    // Compositions of 2(n-1) into n parts, each >= 1: C(2n-3, n-1).
    factorial(n - 2) * binomial(2 * n - 3, n - 1)
}

/// Canonical form of a decorated tree: relabels vertices so that isomorphic
/// (tree, decoration) pairs coincide. Returns canonical edges and the
/// decoration in canonical labels.
///
/// AHU-style encoding rooted at the centroid(s); for two centroids the root
/// giving the lexicographically smaller encoding wins.
pub fn canonical_form(tree: &LabelledTree, dec: &[u64]) -> (Vec<(usize, usize)>, Vec<u64>) {
    let n = tree.n();
    assert_eq!(dec.len(), n);
    if n == 1 {
        return (Vec::new(), vec![dec[0]]);
    }
    let adj = tree.adjacency();
    // Centroids via subtree sizes from an arbitrary root.
    let mut order = Vec::with_capacity(n);
    let mut parent = vec![usize::MAX; n];
    let mut stack = vec![0usize];
    let mut seen = vec![false; n];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        order.push(v);
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                parent[w] = v;
                stack.push(w);
            }
        }
    }
    let mut size = vec![1usize; n];
    for &v in order.iter().rev() {
        if parent[v] != usize::MAX {
            size[parent[v]] += size[v];
        }
    }
    let mut centroids = Vec::new();
    for v in 0..n {
        let mut max_part = n - size[v];
        for &w in &adj[v] {
            if parent[w] == v {
                max_part = max_part.max(size[w]);
            }
        }
        if max_part <= n / 2 {
            centroids.push(v);
        }
    }

    // Rooted encoding; children visited in sorted-encoding order.
    fn encode(
        v: usize,
        p: usize,
        adj: &[Vec<usize>],
        dec: &[u64],
        child_order: &mut Vec<Vec<usize>>,
    ) -> Vec<u64> {
        let mut kids: Vec<(Vec<u64>, usize)> = adj[v]
            .iter()
            .filter(|&&w| w != p)
            .map(|&w| (encode(w, v, adj, dec, child_order), w))
            .collect();
        kids.sort();
        child_order[v] = kids.iter().map(|(_, w)| *w).collect();
        let mut enc = vec![u64::MAX - 1, dec[v]];
        for (e, _) in kids {
            enc.extend(e);
        }
        enc.push(u64::MAX);
        enc
    }

    let mut best: Option<(Vec<u64>, usize, Vec<Vec<usize>>)> = None;
    for &root in &centroids {
        let mut child_order = vec![Vec::new(); n];
        let enc = encode(root, usize::MAX, &adj, dec, &mut child_order);
        if best.as_ref().is_none_or(|(b, _, _)| enc < *b) {
            best = Some((enc, root, child_order));
        }
    }
    let (_, root, child_order) = best.expect("at least one centroid");

    // Preorder relabelling following the canonical child order.
    let mut label = vec![usize::MAX; n];
    let mut next = 0usize;
    let mut stack = vec![root];
    let mut edges = Vec::with_capacity(n - 1);
    while let Some(v) = stack.pop() {
        if label[v] == usize::MAX {
            label[v] = next;
            next += 1;
        }
        // Push children in reverse so they pop in canonical order.
        for &w in child_order[v].iter().rev() {
            stack.push(w);
        }
    }
    // Second pass to record edges with final labels.
    fn record(
        v: usize,
        child_order: &[Vec<usize>],
        label: &[usize],
        edges: &mut Vec<(usize, usize)>,
    ) {
        for &w in &child_order[v] {
            let (a, b) = (label[v], label[w]);
            edges.push((a.min(b), a.max(b)));
            record(w, child_order, label, edges);
        }
    }
    record(root, &child_order, &label, &mut edges);
    edges.sort_unstable();
    let mut new_dec = vec![0u64; n];
    for v in 0..n {
        new_dec[label[v]] = dec[v];
    }
    (edges, new_dec)
}
