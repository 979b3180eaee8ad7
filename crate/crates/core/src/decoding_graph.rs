//! Weighted decoding graph and per-shot soft reweighting.

use std::fmt::Write as _;
use std::io::BufRead;

use crate::code_model::CodeSpec;
use crate::error::{Error, Result};
use crate::measurement_model::SoftOutcome;
use crate::noise_model::{combine2, EdgeKey, EdgeKind, EdgeProbabilityTable, P_MIN};

/// Detector `stabilizer` in 0-based detector row `round` (rows `0..=T`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DetectorNode {
    pub stabilizer: usize,
    pub round: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphEdge {
    pub key: EdgeKey,
    /// Node ids; `v` may equal [`DecodingGraph::boundary`].
    pub u: usize,
    pub v: usize,
    pub p: f64,
    pub w: f64,
    pub is_logical: bool,
}

/// Natural-log edge weight `ln((1 - p) / p)`.
pub fn weight_from_prob(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("edge probability must be in (0, 1), got {p}")));
    }
    Ok(((1.0 - p) / p).ln())
}

#[inline]
fn clamped_weight(p: f64) -> (f64, f64) {
    let p = p.clamp(P_MIN, 0.5);
    (p, ((1.0 - p) / p).ln())
}

#[derive(Clone, Debug)]
pub struct DecodingGraph {
    pub spec: CodeSpec,
    pub edges: Vec<GraphEdge>,
    /// Soft-independent part of each edge probability.
    base: Vec<f64>,
    adj_start: Vec<usize>,
    adj: Vec<(usize, usize)>,
    /// Edge carrying the soft flip of stabilizer outcome `(a, t)`, row-major `t * (d-1) + a`.
    stab_edge: Vec<usize>,
    /// Final-row space edge of each data qubit.
    code_edge: Vec<usize>,
}

impl DecodingGraph {
    pub fn node_count(&self) -> usize {
        self.spec.detector_count()
    }

    /// Id of the boundary vertex (one past the last detector).
    pub fn boundary(&self) -> usize {
        self.node_count()
    }

    pub fn node_id(&self, n: DetectorNode) -> usize {
        n.round * self.spec.ancillas() + n.stabilizer
    }

    pub fn node(&self, id: usize) -> DetectorNode {
        let m = self.spec.ancillas();
        DetectorNode {
            stabilizer: id % m,
            round: id / m,
        }
    }

    /// `(neighbour, edge id)` pairs of `id`, including the boundary vertex.
    #[inline]
    pub fn neighbors(&self, id: usize) -> &[(usize, usize)] {
        &self.adj[self.adj_start[id]..self.adj_start[id + 1]]
    }

    pub fn edge_id(&self, key: &EdgeKey) -> Option<usize> {
        self.edges.iter().position(|e| e.key == *key)
    }

    pub fn static_weights(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.w).collect()
    }

    /// Text dump, one edge per line: `u v kind p w is_logical`.
    pub fn to_text(&self) -> String {
        let mut out = format!("# decoding-graph d={} T={}\n", self.spec.distance, self.spec.rounds);
        for e in &self.edges {
            let _ = writeln!(
                out,
                "{} {} {} {} {} {}",
                self.endpoint_label(e.u),
                self.endpoint_label(e.v),
                e.key.kind,
                e.p,
                e.w,
                u8::from(e.is_logical)
            );
        }
        out
    }

    fn endpoint_label(&self, id: usize) -> String {
        if id == self.boundary() {
            "B".to_string()
        } else {
            let n = self.node(id);
            format!("{}:{}", n.stabilizer, n.round)
        }
    }
}

/// Endpoints of an edge as node ids; `boundary` for the boundary vertex.
fn endpoints(spec: &CodeSpec, key: &EdgeKey) -> (usize, usize) {
    let m = spec.ancillas();
    let boundary = spec.detector_count();
    let id = |a: usize, t: usize| t * m + a;
    let (j, r) = (key.index, key.round);
    match key.kind {
        EdgeKind::Space | EdgeKind::FinalSpace => {
            if j == 0 {
                (id(0, r), boundary)
            } else if j == spec.distance - 1 {
                (id(m - 1, r), boundary)
            } else {
                (id(j - 1, r), id(j, r))
            }
        }
        EdgeKind::Time1 | EdgeKind::FinalTime => (id(j, r), id(j, r + 1)),
        EdgeKind::Time2Soft => (id(j, r), id(j, r + 2)),
        EdgeKind::Diagonal => (id(j - 1, r), id(j, r + 1)),
    }
}

fn is_logical(spec: &CodeSpec, key: &EdgeKey) -> bool {
    matches!(key.kind, EdgeKind::Space | EdgeKind::FinalSpace) && key.index == spec.logical_qubit()
}

/// Builds the static graph; every key of `edge_keys(spec)` must be in `table`.
pub fn build_graph(spec: &CodeSpec, table: &EdgeProbabilityTable) -> Result<DecodingGraph> {
    if table.spec != *spec {
        return Err(Error::Construction("probability table was derived for a different code".into()));
    }
    let keys = crate::noise_model::edge_keys(spec);
    let mut edges = Vec::with_capacity(keys.len());
    let mut base = Vec::with_capacity(keys.len());
    for key in keys {
        let entry = table
            .get(&key)
            .ok_or_else(|| Error::Construction(format!("missing probability for {key:?}")))?;
        let (u, v) = endpoints(spec, &key);
        let (p, w) = clamped_weight(entry.total);
        edges.push(GraphEdge {
            key,
            u,
            v,
            p,
            w,
            is_logical: is_logical(spec, &key),
        });
        base.push(entry.base);
    }
    Ok(assemble(*spec, edges, base))
}

fn assemble(spec: CodeSpec, edges: Vec<GraphEdge>, base: Vec<f64>) -> DecodingGraph {
    let n = spec.detector_count() + 1;
    let mut degree = vec![0usize; n + 1];
    for e in &edges {
        degree[e.u + 1] += 1;
        degree[e.v + 1] += 1;
    }
    for k in 1..degree.len() {
        degree[k] += degree[k - 1];
    }
    let mut fill = degree.clone();
    let mut adj = vec![(0, 0); degree[n]];
    for (id, e) in edges.iter().enumerate() {
        adj[fill[e.u]] = (e.v, id);
        fill[e.u] += 1;
        adj[fill[e.v]] = (e.u, id);
        fill[e.v] += 1;
    }
    let m = spec.ancillas();
    let rounds = spec.rounds;
    let mut stab_edge = vec![usize::MAX; rounds * m];
    let mut code_edge = vec![usize::MAX; spec.distance];
    for (id, e) in edges.iter().enumerate() {
        match e.key.kind {
            EdgeKind::Time2Soft | EdgeKind::FinalTime => stab_edge[e.key.round * m + e.key.index] = id,
            EdgeKind::FinalSpace => code_edge[e.key.index] = id,
            _ => {}
        }
    }
    DecodingGraph {
        spec,
        edges,
        base,
        adj_start: degree,
        adj,
        stab_edge,
        code_edge,
    }
}

/// Per-shot edge probabilities and weights over a static graph.
#[derive(Clone, Debug)]
pub struct ShotWeighting<'g> {
    pub graph: &'g DecodingGraph,
    pub probs: Vec<f64>,
    pub weights: Vec<f64>,
    /// Edge ids refreshed for this shot.
    pub touched: Vec<usize>,
}

impl<'g> ShotWeighting<'g> {
    /// The static weights, untouched.
    pub fn unweighted(graph: &'g DecodingGraph) -> Self {
        Self {
            graph,
            probs: graph.edges.iter().map(|e| e.p).collect(),
            weights: graph.static_weights(),
            touched: Vec::new(),
        }
    }

    fn set(&mut self, id: usize, p_soft: f64) {
        let (p, w) = clamped_weight(combine2(self.graph.base[id], p_soft));
        self.probs[id] = p;
        self.weights[id] = w;
        self.touched.push(id);
    }
}

/// Reweights soft-sensitive edges from per-outcome soft-flip probabilities.
/// `stabilizer_p` is row-major `T x (d-1)`, `code_p` has one entry per data qubit.
pub fn reweight_probs<'g>(graph: &'g DecodingGraph, stabilizer_p: &[f64], code_p: &[f64]) -> Result<ShotWeighting<'g>> {
    if stabilizer_p.len() != graph.stab_edge.len() || code_p.len() != graph.code_edge.len() {
        return Err(Error::Dimension(format!(
            "soft outcomes {}+{} do not match graph shape {}+{}",
            stabilizer_p.len(),
            code_p.len(),
            graph.stab_edge.len(),
            graph.code_edge.len()
        )));
    }
    let mut sw = ShotWeighting::unweighted(graph);
    sw.touched.reserve(stabilizer_p.len() + code_p.len());
    for (&id, &p) in graph.stab_edge.iter().zip(stabilizer_p) {
        sw.set(id, p);
    }
    for (&id, &p) in graph.code_edge.iter().zip(code_p) {
        sw.set(id, p);
    }
    Ok(sw)
}

pub fn reweight_soft<'g>(
    graph: &'g DecodingGraph,
    stabilizer_soft: &[SoftOutcome],
    code_soft: &[SoftOutcome],
) -> Result<ShotWeighting<'g>> {
    let sp: Vec<f64> = stabilizer_soft.iter().map(|o| o.p_soft).collect();
    let cp: Vec<f64> = code_soft.iter().map(|o| o.p_soft).collect();
    reweight_probs(graph, &sp, &cp)
}

/// Parses a dump written by [`DecodingGraph::to_text`].
pub fn parse_graph<R: BufRead>(reader: R) -> Result<DecodingGraph> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty graph dump"))?;
    let header = header?;
    let mut d = None;
    let mut t = None;
    for tok in header.trim_start_matches('#').split_whitespace() {
        if let Some(v) = tok.strip_prefix("d=") {
            d = v.parse::<usize>().ok();
        } else if let Some(v) = tok.strip_prefix("T=") {
            t = v.parse::<usize>().ok();
        }
    }
    let (d, t) = match (d, t) {
        (Some(d), Some(t)) if header.starts_with("# decoding-graph") => (d, t),
        _ => return Err(Error::parse(1, "expected '# decoding-graph d=<d> T=<T>' header")),
    };
    let spec = CodeSpec::z_plus(d, t)?;
    let m = spec.ancillas();
    let boundary = spec.detector_count();
    let mut edges = Vec::new();
    for (k, line) in lines {
        let line_no = k + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = text.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(Error::parse(line_no, format!("expected 6 columns, got {}", cols.len())));
        }
        let endpoint = |s: &str| -> Result<Option<(usize, usize)>> {
            if s == "B" {
                return Ok(None);
            }
            let (a, r) = s
                .split_once(':')
                .ok_or_else(|| Error::parse(line_no, format!("bad endpoint '{s}'")))?;
            let a: usize = a.parse().map_err(|_| Error::parse(line_no, format!("bad endpoint '{s}'")))?;
            let r: usize = r.parse().map_err(|_| Error::parse(line_no, format!("bad endpoint '{s}'")))?;
            if a >= m || r > t {
                return Err(Error::parse(line_no, format!("endpoint '{s}' outside the graph")));
            }
            Ok(Some((a, r)))
        };
        let a = endpoint(cols[0])?;
        let b = endpoint(cols[1])?;
        let kind: EdgeKind = cols[2].parse().map_err(|_| Error::parse(line_no, format!("bad kind '{}'", cols[2])))?;
        let p: f64 = cols[3].parse().map_err(|_| Error::parse(line_no, "bad probability"))?;
        let w: f64 = cols[4].parse().map_err(|_| Error::parse(line_no, "bad weight"))?;
        let logical = match cols[5] {
            "0" => false,
            "1" => true,
            s => return Err(Error::parse(line_no, format!("bad logical flag '{s}'"))),
        };
        let key = match (kind, a, b) {
            // only the right-hand boundary edge carries the logical observable
            (EdgeKind::Space | EdgeKind::FinalSpace, Some((_, r)), None) => {
                EdgeKey::new(kind, if logical { d - 1 } else { 0 }, r)
            }
            (EdgeKind::Space | EdgeKind::FinalSpace, Some((_, r)), Some((j, _))) => EdgeKey::new(kind, j, r),
            (EdgeKind::Diagonal, Some((_, r)), Some((j, _))) => EdgeKey::new(kind, j, r),
            (_, Some((j, r)), Some(_)) => EdgeKey::new(kind, j, r),
            _ => return Err(Error::parse(line_no, "edge endpoints do not fit its kind")),
        };
        let (eu, ev) = endpoints(&spec, &key);
        let id = |x: Option<(usize, usize)>| x.map_or(boundary, |(a, r)| r * m + a);
        if (eu, ev) != (id(a), id(b)) {
            return Err(Error::parse(line_no, "edge endpoints do not fit its kind"));
        }
        if !(p > 0.0 && p <= 0.5) {
            return Err(Error::parse(line_no, format!("probability {p} outside (0, 0.5]")));
        }
        edges.push(GraphEdge {
            key,
            u: eu,
            v: ev,
            p,
            w,
            is_logical: logical,
        });
    }
    let base = edges.iter().map(|e| e.p).collect();
    Ok(assemble(spec, edges, base))
}
