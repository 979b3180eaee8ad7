//! Minimum-weight perfect matching decoder with a boundary.

mod blossom;

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

pub use blossom::max_weight_matching;

use crate::code_model::SyndromeMatrix;
use crate::decoding_graph::{DecodingGraph, ShotWeighting};
use crate::error::{Error, Result};

/// Largest defect count accepted by [`brute_force_matching`].
pub const BRUTE_FORCE_LIMIT: usize = 12;
/// Quantized weights stay below `2^QUANT_BITS` so blossom duals fit in `i64`.
const QUANT_BITS: i32 = 50;
const NO_EDGE: usize = usize::MAX;

/// Node ids of detectors that fired, in increasing order.
pub fn extract_defects(syndrome: &SyndromeMatrix, graph: &DecodingGraph) -> Result<Vec<usize>> {
    let spec = &graph.spec;
    if syndrome.rounds() != spec.detector_rounds() || syndrome.stabilizers() != spec.ancillas() {
        return Err(Error::Dimension(format!(
            "syndrome is {}x{}, graph expects {}x{}",
            syndrome.rounds(),
            syndrome.stabilizers(),
            spec.detector_rounds(),
            spec.ancillas()
        )));
    }
    Ok(syndrome
        .detectors
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &b)| b == 1)
        .map(|(id, _)| id)
        .collect())
}

/// Shortest-path distances between defects and from each defect to the boundary.
#[derive(Clone, Debug)]
pub struct DefectDistances {
    /// Graph node ids of the defects.
    pub defects: Vec<usize>,
    /// Row-major `k x k`; only `i < j` entries are meaningful.
    pub pair: Vec<f64>,
    pub boundary: Vec<f64>,
    pair_parity: Vec<bool>,
    boundary_parity: Vec<bool>,
    /// Predecessor edge per vertex for each source defect, `k x (nodes + 1)`.
    pred: Vec<usize>,
    vertices: usize,
}

impl DefectDistances {
    /// Distances given directly, without an underlying graph (defects are `0..k`).
    pub fn from_matrix(pair: Vec<f64>, boundary: Vec<f64>) -> Result<Self> {
        let k = boundary.len();
        if pair.len() != k * k {
            return Err(Error::Dimension(format!("pair matrix has {} entries for {k} defects", pair.len())));
        }
        if pair.iter().chain(&boundary).any(|w| !(*w >= 0.0)) {
            return Err(Error::Domain("distances must be non-negative".into()));
        }
        Ok(Self {
            defects: (0..k).collect(),
            pair,
            boundary,
            pair_parity: vec![false; k * k],
            boundary_parity: vec![false; k],
            pred: Vec::new(),
            vertices: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.defects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defects.is_empty()
    }

    #[inline]
    pub fn between(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.pair[a * self.len() + b]
    }

    fn parity_between(&self, i: usize, j: usize) -> bool {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.pair_parity[a * self.len() + b]
    }

    /// Edge ids on the shortest path from defect `i` to graph vertex `target`.
    fn path(&self, graph: &DecodingGraph, i: usize, target: usize, out: &mut Vec<usize>) {
        if self.pred.is_empty() {
            return;
        }
        let pred = &self.pred[i * self.vertices..(i + 1) * self.vertices];
        let mut v = target;
        while pred[v] != NO_EDGE {
            let e = &graph.edges[pred[v]];
            out.push(pred[v]);
            v = if e.u == v { e.v } else { e.u };
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Key {
    dist: f64,
    hops: u32,
    node: usize,
}

impl Eq for Key {}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.hops.cmp(&other.hops))
            .then(self.node.cmp(&other.node))
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra from every defect; the boundary is a sink that paths never cross.
/// Equal-weight paths prefer fewer edges, then the smaller final edge id.
pub fn defect_distances(graph: &DecodingGraph, weights: &[f64], defects: &[usize]) -> Result<DefectDistances> {
    if weights.len() != graph.edges.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} edges",
            weights.len(),
            graph.edges.len()
        )));
    }
    let k = defects.len();
    let nv = graph.node_count() + 1;
    let boundary = graph.boundary();
    if let Some(&bad) = defects.iter().find(|&&d| d >= boundary) {
        return Err(Error::Bounds(format!("defect node {bad} outside graph")));
    }
    let mut out = DefectDistances {
        defects: defects.to_vec(),
        pair: vec![f64::INFINITY; k * k],
        boundary: vec![f64::INFINITY; k],
        pair_parity: vec![false; k * k],
        boundary_parity: vec![false; k],
        pred: vec![NO_EDGE; k * nv],
        vertices: nv,
    };
    let mut dist = vec![f64::INFINITY; nv];
    let mut hops = vec![u32::MAX; nv];
    let mut parity = vec![false; nv];
    let mut done = vec![false; nv];
    let mut is_target = vec![false; nv];
    let mut heap = BinaryHeap::new();
    for (i, &src) in defects.iter().enumerate() {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        hops.iter_mut().for_each(|h| *h = u32::MAX);
        done.iter_mut().for_each(|d| *d = false);
        is_target.iter_mut().for_each(|t| *t = false);
        let pred = &mut out.pred[i * nv..(i + 1) * nv];
        for &t in &defects[i + 1..] {
            is_target[t] = true;
        }
        is_target[boundary] = true;
        let mut remaining = k - i;
        dist[src] = 0.0;
        hops[src] = 0;
        parity[src] = false;
        heap.clear();
        heap.push(Reverse(Key {
            dist: 0.0,
            hops: 0,
            node: src,
        }));
        while let Some(Reverse(Key { dist: du, hops: hu, node: u })) = heap.pop() {
            if done[u] || du > dist[u] || (du == dist[u] && hu > hops[u]) {
                continue;
            }
            done[u] = true;
            if is_target[u] {
                remaining -= 1;
                if remaining == 0 {
                    break;
                }
            }
            if u == boundary {
                continue;
            }
            for &(v, e) in graph.neighbors(u) {
                if done[v] {
                    continue;
                }
                let nd = du + weights[e];
                let nh = hu + 1;
                let better = match nd.total_cmp(&dist[v]).then(nh.cmp(&hops[v])) {
                    Ordering::Less => true,
                    Ordering::Equal => e < pred[v],
                    Ordering::Greater => false,
                };
                if better {
                    dist[v] = nd;
                    hops[v] = nh;
                    pred[v] = e;
                    parity[v] = parity[u] ^ graph.edges[e].is_logical;
                    heap.push(Reverse(Key { dist: nd, hops: nh, node: v }));
                }
            }
        }
        for (j, &t) in defects.iter().enumerate().skip(i + 1) {
            out.pair[i * k + j] = dist[t];
            out.pair_parity[i * k + j] = parity[t];
        }
        if !dist[boundary].is_finite() {
            return Err(Error::Internal(format!("defect {src} cannot reach the boundary")));
        }
        out.boundary[i] = dist[boundary];
        out.boundary_parity[i] = parity[boundary];
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchingResult {
    /// `(defect, partner)` node ids, `None` for the boundary; sorted.
    pub pairs: Vec<(usize, Option<usize>)>,
    pub total_weight: f64,
    pub logical_flip: bool,
    /// Edge ids along all matched paths.
    pub correction_edges: Vec<usize>,
}

impl MatchingResult {
    pub fn empty() -> Self {
        Self {
            pairs: Vec::new(),
            total_weight: 0.0,
            logical_flip: false,
            correction_edges: Vec::new(),
        }
    }

    /// `total_weight` to 12 significant digits, pairs, then the logical flip.
    pub fn to_text(&self, graph: Option<&DecodingGraph>) -> String {
        let label = |id: Option<usize>| match (id, graph) {
            (None, _) => "B".to_string(),
            (Some(id), Some(g)) => {
                let n = g.node(id);
                format!("{}:{}", n.stabilizer, n.round)
            }
            (Some(id), None) => id.to_string(),
        };
        let mut out = format!("total_weight {:.11e}\n", self.total_weight);
        for &(a, b) in &self.pairs {
            out.push_str(&format!("pair {} {}\n", label(Some(a)), label(b)));
        }
        out.push_str(&format!("logical_flip {}\n", u8::from(self.logical_flip)));
        out
    }
}

/// `partner[i]`: another defect index, or `None` for the boundary.
type Assignment = Vec<Option<usize>>;

fn assemble(dd: &DefectDistances, graph: Option<&DecodingGraph>, partner: &Assignment) -> MatchingResult {
    let mut res = MatchingResult::empty();
    for (i, p) in partner.iter().enumerate() {
        match *p {
            Some(j) if j > i => {
                res.total_weight += dd.between(i, j);
                res.logical_flip ^= dd.parity_between(i, j);
                res.pairs.push((dd.defects[i], Some(dd.defects[j])));
                if let Some(g) = graph {
                    dd.path(g, i, dd.defects[j], &mut res.correction_edges);
                }
            }
            Some(_) => {}
            None => {
                res.total_weight += dd.boundary[i];
                res.logical_flip ^= dd.boundary_parity[i];
                res.pairs.push((dd.defects[i], None));
                if let Some(g) = graph {
                    dd.path(g, i, g.boundary(), &mut res.correction_edges);
                }
            }
        }
    }
    res.pairs.sort_by_key(|&(a, b)| (a, b.unwrap_or(usize::MAX)));
    res
}

/// Exact minimum-weight matching in which every defect pairs with another
/// defect or with its own boundary copy.
pub fn min_weight_matching(dd: &DefectDistances) -> Result<MatchingResult> {
    Ok(assemble(dd, None, &solve(dd)?))
}

fn solve(dd: &DefectDistances) -> Result<Assignment> {
    let k = dd.len();
    match k {
        0 => return Ok(Vec::new()),
        1 => return Ok(vec![None]),
        2 => {
            return Ok(if dd.between(0, 1) < dd.boundary[0] + dd.boundary[1] {
                vec![Some(1), Some(0)]
            } else {
                vec![None, None]
            })
        }
        _ => {}
    }
    // pairs that cannot beat sending both defects to the boundary are dropped
    let mut candidates = Vec::new();
    let mut max_w: f64 = dd.boundary.iter().cloned().fold(0.0, f64::max);
    for i in 0..k {
        for j in i + 1..k {
            let w = dd.between(i, j);
            if w < dd.boundary[i] + dd.boundary[j] {
                candidates.push((i, j, w));
                max_w = max_w.max(w);
            }
        }
    }
    if !max_w.is_finite() {
        return Err(Error::Internal("non-finite matching weight".into()));
    }
    let scale = if max_w > 0.0 { (2f64).powi(QUANT_BITS) / max_w } else { 1.0 };
    let quant = |w: f64| (w * scale).round() as i64;
    let top = (2i64).pow(QUANT_BITS as u32) + 1;
    let mut edges = Vec::with_capacity(candidates.len() + k + k * (k - 1) / 2);
    for &(i, j, w) in &candidates {
        edges.push((i, j, top - quant(w)));
    }
    for i in 0..k {
        edges.push((i, k + i, top - quant(dd.boundary[i])));
        for j in i + 1..k {
            edges.push((k + i, k + j, top));
        }
    }
    let mate = max_weight_matching(2 * k, &edges, true);
    let mut partner = vec![None; k];
    for i in 0..k {
        match mate[i] {
            m if m < k => partner[i] = Some(m),
            m if m == k + i => partner[i] = None,
            _ => return Err(Error::Internal(format!("defect {i} left unmatched"))),
        }
    }
    Ok(partner)
}

/// Exhaustive minimum over all pairings; ties go to the lexicographically
/// smallest sorted pair list.
pub fn brute_force_matching(dd: &DefectDistances) -> Result<MatchingResult> {
    let k = dd.len();
    if k > BRUTE_FORCE_LIMIT {
        return Err(Error::Refusal(format!(
            "brute-force matching limited to {BRUTE_FORCE_LIMIT} defects, got {k}"
        )));
    }
    struct Search<'a> {
        dd: &'a DefectDistances,
        current: Assignment,
        best: Option<(f64, Vec<(usize, usize)>, Assignment)>,
    }
    impl Search<'_> {
        fn key(&self) -> Vec<(usize, usize)> {
            let mut pairs: Vec<(usize, usize)> = self
                .current
                .iter()
                .enumerate()
                .filter_map(|(i, p)| match *p {
                    Some(j) if j > i => Some((self.dd.defects[i], self.dd.defects[j])),
                    Some(_) => None,
                    None => Some((self.dd.defects[i], usize::MAX)),
                })
                .collect();
            pairs.sort();
            pairs
        }

        fn rec(&mut self, used: &mut [bool], w: f64) {
            let Some(i) = used.iter().position(|u| !u) else {
                let better = match &self.best {
                    None => true,
                    Some((bw, bkey, _)) => w < *bw || (w == *bw && self.key() < *bkey),
                };
                if better {
                    self.best = Some((w, self.key(), self.current.clone()));
                }
                return;
            };
            used[i] = true;
            self.current[i] = None;
            self.rec(used, w + self.dd.boundary[i]);
            for j in i + 1..used.len() {
                if !used[j] {
                    used[j] = true;
                    self.current[i] = Some(j);
                    self.current[j] = Some(i);
                    self.rec(used, w + self.dd.between(i, j));
                    used[j] = false;
                }
            }
            self.current[i] = None;
            used[i] = false;
        }
    }
    let mut s = Search {
        dd,
        current: vec![None; k],
        best: None,
    };
    s.rec(&mut vec![false; k], 0.0);
    let (_, _, partner) = s.best.expect("at least one pairing");
    Ok(assemble(dd, None, &partner))
}

/// Decodes one shot under per-shot weights.
pub fn decode(weighting: &ShotWeighting<'_>, syndrome: &SyndromeMatrix) -> Result<MatchingResult> {
    let defects = extract_defects(syndrome, weighting.graph)?;
    decode_defects(weighting.graph, &weighting.weights, &defects)
}

pub fn decode_defects(graph: &DecodingGraph, weights: &[f64], defects: &[usize]) -> Result<MatchingResult> {
    if defects.is_empty() {
        return Ok(MatchingResult::empty());
    }
    let dd = defect_distances(graph, weights, defects)?;
    Ok(assemble(&dd, Some(graph), &solve(&dd)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code_model::{compute_detectors, CodeSpec, OutcomeRecord};
    use crate::decoding_graph::{build_graph, reweight_probs};
    use crate::noise_model::{derive_edge_probabilities, EdgeKey, EdgeKind, NoiseParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise() -> NoiseParams {
        NoiseParams {
            p_cx: 0.005,
            p_h: 0.01,
            p_s_mean: 0.02,
            ..NoiseParams::noiseless()
        }
    }

    fn graph(d: usize, t: usize) -> DecodingGraph {
        let spec = CodeSpec::z_plus(d, t).unwrap();
        build_graph(&spec, &derive_edge_probabilities(&spec, &noise()).unwrap()).unwrap()
    }

    fn syndrome(spec: &CodeSpec, rec: &OutcomeRecord) -> SyndromeMatrix {
        compute_detectors(rec, spec).unwrap()
    }

    #[test]
    fn defect_extraction() {
        let g = graph(3, 3);
        let spec = g.spec;
        let rec = OutcomeRecord::noiseless(&spec);
        assert!(extract_defects(&syndrome(&spec, &rec), &g).unwrap().is_empty());
        let mut s = syndrome(&spec, &rec);
        s.detectors.set(2, 1, 1);
        assert_eq!(extract_defects(&s, &g).unwrap(), vec![2 * 2 + 1]);
        let other = graph(3, 2);
        assert!(extract_defects(&s, &other).is_err());
    }

    #[test]
    fn matching_examples() {
        let dd = DefectDistances::from_matrix(vec![], vec![]).unwrap();
        assert_eq!(min_weight_matching(&dd).unwrap().total_weight, 0.0);
        let dd = DefectDistances::from_matrix(vec![0.0, 1.0, 1.0, 0.0], vec![10.0, 10.0]).unwrap();
        let r = min_weight_matching(&dd).unwrap();
        assert_eq!(r.total_weight, 1.0);
        assert_eq!(r.pairs, vec![(0, Some(1))]);
        assert_eq!(brute_force_matching(&dd).unwrap().pairs, r.pairs);
        let big = DefectDistances::from_matrix(vec![1.0; 169], vec![1.0; 13]).unwrap();
        assert!(matches!(brute_force_matching(&big), Err(Error::Refusal(_))));
    }

    #[test]
    fn path_graph_distances() {
        // three stabilizers in a row of one round: distances add along space edges
        let g = graph(4, 1);
        let mut w = vec![100.0; g.edges.len()];
        let e1 = g.edge_id(&EdgeKey::new(EdgeKind::Space, 1, 0)).unwrap();
        let e2 = g.edge_id(&EdgeKey::new(EdgeKind::Space, 2, 0)).unwrap();
        w[e1] = 1.0;
        w[e2] = 2.0;
        let dd = defect_distances(&g, &w, &[0, 2]).unwrap();
        assert_eq!(dd.between(0, 1), 3.0);
        w[g.edge_id(&EdgeKey::new(EdgeKind::Space, 0, 0)).unwrap()] = 0.0;
        let dd = defect_distances(&g, &w, &[0, 2]).unwrap();
        assert_eq!(dd.boundary[0], 0.0);
    }

    #[test]
    fn logical_data_flip_is_decoded() {
        let g = graph(3, 2);
        let spec = g.spec;
        let mut rec = OutcomeRecord::noiseless(&spec);
        // last data qubit flips before round 1: ancilla 1 reads 1 from then on
        rec.raw_ancilla.set(1, 1, 1);
        rec.final_data[2] = 1;
        let s = syndrome(&spec, &rec);
        let sw = ShotWeighting::unweighted(&g);
        let r = decode(&sw, &s).unwrap();
        assert!(r.logical_flip);
        assert_eq!(u8::from(r.logical_flip), rec.observed_logical_flip(&spec));
    }

    #[test]
    fn ambiguous_soft_flip_uses_soft_edge() {
        let g = graph(3, 4);
        let spec = g.spec;
        let mut rec = OutcomeRecord::noiseless(&spec);
        // misread of ancilla 0 in round 1: raw bit flips, state does not
        rec.raw_ancilla.set(1, 0, 1);
        let s = syndrome(&spec, &rec);
        let defects = extract_defects(&s, &g).unwrap();
        assert_eq!(defects, vec![2, 3 * 2]);
        let mut sp = vec![0.02; 4 * 2];
        sp[2] = 0.45;
        let sw = reweight_probs(&g, &sp, &[0.02; 3]).unwrap();
        let r = decode(&sw, &s).unwrap();
        assert!(!r.logical_flip);
        let soft = g.edge_id(&EdgeKey::new(EdgeKind::Time2Soft, 0, 1)).unwrap();
        assert_eq!(r.correction_edges, vec![soft]);
    }

    fn random_weights(g: &DecodingGraph, rng: &mut ChaCha8Rng) -> Vec<f64> {
        g.edges
            .iter()
            .map(|_| if rng.random_bool(0.05) { 0.0 } else { rng.random_range(0.0..12.0) })
            .collect()
    }

    fn random_defects(g: &DecodingGraph, rng: &mut ChaCha8Rng, max: usize) -> Vec<usize> {
        let n = g.node_count();
        let k = rng.random_range(0..=max.min(n));
        let mut all: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = rng.random_range(i..n);
            all.swap(i, j);
        }
        let mut d = all[..k].to_vec();
        d.sort_unstable();
        d
    }

    #[test]
    fn blossom_agrees_with_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..400 {
            let g = graph(rng.random_range(2..=7), rng.random_range(1..=5));
            let w = random_weights(&g, &mut rng);
            let defects = random_defects(&g, &mut rng, 10);
            let dd = defect_distances(&g, &w, &defects).unwrap();
            let fast = min_weight_matching(&dd).unwrap();
            let slow = brute_force_matching(&dd).unwrap();
            let tol = 1e-9 * slow.total_weight.abs().max(1.0);
            assert!((fast.total_weight - slow.total_weight).abs() <= tol, "trial {trial}");
        }
    }

    #[test]
    fn correction_explains_syndrome() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let g = graph(rng.random_range(2..=9), rng.random_range(1..=6));
            let w = random_weights(&g, &mut rng);
            let defects = random_defects(&g, &mut rng, 16);
            let r = decode_defects(&g, &w, &defects).unwrap();
            let mut flips = vec![false; g.node_count() + 1];
            let mut logical = false;
            for &e in &r.correction_edges {
                flips[g.edges[e].u] ^= true;
                flips[g.edges[e].v] ^= true;
                logical ^= g.edges[e].is_logical;
            }
            let got: Vec<usize> = (0..g.node_count()).filter(|&v| flips[v]).collect();
            assert_eq!(got, defects);
            assert_eq!(logical, r.logical_flip);
            let sum: f64 = r.correction_edges.iter().map(|&e| w[e]).sum();
            assert!((sum - r.total_weight).abs() <= 1e-9 * sum.max(1.0));
        }
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = graph(7, 5);
        let w = random_weights(&g, &mut rng);
        let defects = random_defects(&g, &mut rng, 20);
        assert_eq!(decode_defects(&g, &w, &defects).unwrap(), decode_defects(&g, &w, &defects).unwrap());
    }

    proptest! {
        #[test]
        fn scaling_preserves_matching(seed in 0u64..1000, exp in -3i32..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = graph(5, 4);
            let w = random_weights(&g, &mut rng);
            let defects = random_defects(&g, &mut rng, 12);
            let c = (2f64).powi(exp);
            let scaled: Vec<f64> = w.iter().map(|x| x * c).collect();
            let a = decode_defects(&g, &w, &defects).unwrap();
            let b = decode_defects(&g, &scaled, &defects).unwrap();
            prop_assert_eq!(a.pairs, b.pairs);
            prop_assert_eq!(a.logical_flip, b.logical_flip);
        }
    }
}
