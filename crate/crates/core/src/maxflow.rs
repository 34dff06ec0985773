//! Minimum s-excess via a single minimum s-t cut.
//!
//! A vertex with negative weight `w` gets a source arc of capacity `-w`, a
//! vertex with positive weight a sink arc of capacity `w`; graph edges are
//! kept as directed arcs. The source side of a minimum cut (without the
//! source) minimizes `sum_{v in H} w(v) + sum_{u in H, v notin H} c(u, v)`,
//! and the optimum equals `cut - sum_{w(v) < 0} -w(v)`.
//!
//! The cut is computed with a dual search tree augmenting path algorithm in
//! the style of Boykov and Kolmogorov: a source tree and a sink tree grow
//! towards each other, paths are augmented where they meet, and orphaned
//! subtrees are re-adopted instead of rebuilding the trees from scratch.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Edge capacity: a non-negative integer or the infinite sentinel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Capacity {
    Finite(i64),
    Inf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub from: u32,
    pub to: u32,
    pub cap: Capacity,
}

/// Vertex weights plus directed capacitated edges.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SExcessGraph {
    weights: Vec<i64>,
    edges: Vec<Edge>,
}

impl SExcessGraph {
    pub fn new(n: usize) -> Self {
        SExcessGraph {
            weights: vec![0; n],
            edges: Vec::new(),
        }
    }

    pub fn with_weights(weights: Vec<i64>) -> Self {
        SExcessGraph {
            weights,
            edges: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[i64] {
        &self.weights
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn reserve_edges(&mut self, additional: usize) {
        self.edges.reserve(additional);
    }

    pub fn add_weight(&mut self, v: usize, w: i64) -> Result<()> {
        let slot = self
            .weights
            .get_mut(v)
            .ok_or_else(|| Error::Param(format!("vertex {v} out of range")))?;
        *slot = slot
            .checked_add(w)
            .ok_or_else(|| Error::Overflow(format!("weight of vertex {v}")))?;
        Ok(())
    }

    pub fn add_edge(&mut self, from: usize, to: usize, cap: Capacity) -> Result<()> {
        let n = self.weights.len();
        if from >= n || to >= n {
            return Err(Error::Param(format!(
                "edge ({from}, {to}) references a vertex outside 0..{n}"
            )));
        }
        if from == to {
            return Err(Error::Param(format!("self-loop at vertex {from}")));
        }
        if let Capacity::Finite(c) = cap {
            if c < 0 {
                return Err(Error::Param(format!(
                    "negative capacity {c} on edge ({from}, {to})"
                )));
            }
            if c == 0 {
                return Ok(());
            }
        }
        self.edges.push(Edge {
            from: from as u32,
            to: to as u32,
            cap,
        });
        Ok(())
    }

    /// `gamma(H)` for the given source set, or `None` when an infinite edge
    /// leaves it.
    pub fn objective(&self, source_set: &[bool]) -> Option<i64> {
        assert_eq!(source_set.len(), self.len());
        let mut total: i64 = self
            .weights
            .iter()
            .zip(source_set)
            .filter(|(_, &h)| h)
            .map(|(&w, _)| w)
            .sum();
        for e in &self.edges {
            if source_set[e.from as usize] && !source_set[e.to as usize] {
                match e.cap {
                    Capacity::Inf => return None,
                    Capacity::Finite(c) => total += c,
                }
            }
        }
        Some(total)
    }

    /// The value realized by the infinite sentinel: one more than every
    /// finite capacity and absolute weight combined.
    pub fn inf_value(&self) -> Result<i64> {
        let mut sum: i64 = 1;
        let overflow =
            || Error::Overflow("total capacity exceeds i64; reduce the energy scale".into());
        for e in &self.edges {
            if let Capacity::Finite(c) = e.cap {
                sum = sum.checked_add(c).ok_or_else(overflow)?;
            }
        }
        for &w in &self.weights {
            sum = sum
                .checked_add(w.checked_abs().ok_or_else(overflow)?)
                .ok_or_else(overflow)?;
        }
        Ok(sum)
    }

    /// Text dump: `sexcess n m`, then `n` weight lines and `m` lines `u v cap|INF`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "sexcess {} {}", self.len(), self.edges.len());
        for w in &self.weights {
            let _ = writeln!(s, "{w}");
        }
        for e in &self.edges {
            match e.cap {
                Capacity::Finite(c) => {
                    let _ = writeln!(s, "{} {} {}", e.from, e.to, c);
                }
                Capacity::Inf => {
                    let _ = writeln!(s, "{} {} INF", e.from, e.to);
                }
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let at = |n: usize| format!("line {n}");
        let (ln, header) = lines
            .next()
            .ok_or_else(|| Error::parse("line 1", "empty graph file"))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "sexcess" {
            return Err(Error::parse(at(ln), "expected header 'sexcess n m'"));
        }
        let num = |t: &str, ln: usize| -> Result<usize> {
            t.parse()
                .map_err(|_| Error::parse(at(ln), format!("bad count '{t}'")))
        };
        let (n, m) = (num(parts[1], ln)?, num(parts[2], ln)?);
        let mut g = SExcessGraph::new(n);
        for v in 0..n {
            let (ln, l) = lines.next().ok_or_else(|| {
                Error::parse("end of file", format!("missing weight of vertex {v}"))
            })?;
            g.weights[v] = l
                .parse()
                .map_err(|_| Error::parse(at(ln), format!("bad weight '{l}'")))?;
        }
        for k in 0..m {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| Error::parse("end of file", format!("missing edge {k}")))?;
            let t: Vec<&str> = l.split_whitespace().collect();
            if t.len() != 3 {
                return Err(Error::parse(at(ln), "expected 'u v cap|INF'"));
            }
            let cap = if t[2] == "INF" {
                Capacity::Inf
            } else {
                Capacity::Finite(
                    t[2].parse()
                        .map_err(|_| Error::parse(at(ln), format!("bad capacity '{}'", t[2])))?,
                )
            };
            g.add_edge(num(t[0], ln)?, num(t[1], ln)?, cap)
                .map_err(|e| Error::parse(at(ln), e.to_string()))?;
        }
        if let Some((ln, _)) = lines.next() {
            return Err(Error::parse(
                at(ln),
                "trailing content after the declared edges",
            ));
        }
        Ok(g)
    }
}

/// Solution of a minimum s-excess problem.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CutResult {
    /// Membership in the optimal source set `H`.
    pub source_set: Vec<bool>,
    /// `gamma(H)`.
    pub objective: i64,
    /// Value of the maximum flow in the reduced s-t network.
    pub flow_value: i64,
}

/// Solves the minimum s-excess problem exactly.
pub fn solve_s_excess(g: &SExcessGraph) -> Result<CutResult> {
    let inf = g.inf_value()?;
    let n = g.len();
    let mut bk = BkGraph::with_capacity(n, g.edges.len());
    let mut negative: i64 = 0;
    for (v, &w) in g.weights.iter().enumerate() {
        bk.tr[v] = -w;
        if w < 0 {
            negative += -w;
        }
    }
    for e in &g.edges {
        let c = match e.cap {
            Capacity::Finite(c) => c,
            Capacity::Inf => inf,
        };
        bk.add_arc_pair(e.from, e.to, c, 0);
    }
    let flow = bk.run();
    let source_set = bk.source_side();
    let objective = flow - negative;
    let recomputed = g
        .objective(&source_set)
        .expect("an infinite edge crossed the minimum cut");
    assert_eq!(
        recomputed, objective,
        "s-excess objective disagrees with the cut value"
    );
    Ok(CutResult {
        source_set,
        objective,
        flow_value: flow,
    })
}

/// Result of [`max_flow`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaxFlow {
    pub value: i64,
    /// Source side of a minimum cut (contains the source).
    pub source_side: Vec<bool>,
}

/// Maximum flow from `source` to `sink` over directed `(from, to, capacity)`
/// arcs. The returned partition is the source side of a minimum cut; its
/// capacity is checked against the flow value.
pub fn max_flow(
    n: usize,
    source: usize,
    sink: usize,
    arcs: &[(usize, usize, i64)],
) -> Result<MaxFlow> {
    if source >= n || sink >= n || source == sink {
        return Err(Error::Param(format!(
            "invalid terminals {source}, {sink} for {n} vertices"
        )));
    }
    let mut bk = BkGraph::with_capacity(n, arcs.len());
    let mut from_source = vec![0i64; n];
    let mut to_sink = vec![0i64; n];
    let mut direct: i64 = 0;
    for &(u, v, c) in arcs {
        if u >= n || v >= n {
            return Err(Error::Param(format!("arc ({u}, {v}) out of range")));
        }
        if c < 0 {
            return Err(Error::Param(format!("negative capacity on arc ({u}, {v})")));
        }
        if u == v || v == source || u == sink {
            continue;
        }
        match (u == source, v == sink) {
            (true, true) => direct += c,
            (true, false) => from_source[v] += c,
            (false, true) => to_sink[u] += c,
            (false, false) => bk.add_arc_pair(u as u32, v as u32, c, 0),
        }
    }
    let mut value = direct;
    for v in 0..n {
        let both = from_source[v].min(to_sink[v]);
        value += both;
        bk.tr[v] = from_source[v] - to_sink[v];
    }
    value += bk.run();
    let mut source_side = bk.source_side();
    source_side[source] = true;
    source_side[sink] = false;

    let cut: i64 = arcs
        .iter()
        .filter(|&&(u, v, _)| source_side[u] && !source_side[v])
        .map(|&(_, _, c)| c)
        .sum();
    assert_eq!(cut, value, "max-flow value differs from min-cut capacity");
    Ok(MaxFlow { value, source_side })
}

const NONE: u32 = u32::MAX;
const TERMINAL: u32 = u32::MAX - 1;
const ORPHAN: u32 = u32::MAX - 2;

const FREE: u8 = 0;
const SOURCE: u8 = 1;
const SINK: u8 = 2;

/// Residual network with implicit terminals. Arcs are stored in pairs, so
/// the reverse of arc `a` is `a ^ 1`.
struct BkGraph {
    first: Vec<u32>,
    head: Vec<u32>,
    next: Vec<u32>,
    rcap: Vec<i64>,
    /// Positive: residual capacity from the source; negative: to the sink.
    tr: Vec<i64>,

    parent: Vec<u32>,
    tree: Vec<u8>,
    ts: Vec<u32>,
    dist: Vec<u32>,
    queued: Vec<bool>,
    active: VecDeque<u32>,
    orphans: VecDeque<u32>,
    time: u32,
}

impl BkGraph {
    fn with_capacity(n: usize, arcs: usize) -> Self {
        BkGraph {
            first: vec![NONE; n],
            head: Vec::with_capacity(2 * arcs),
            next: Vec::with_capacity(2 * arcs),
            rcap: Vec::with_capacity(2 * arcs),
            tr: vec![0; n],
            parent: Vec::new(),
            tree: Vec::new(),
            ts: Vec::new(),
            dist: Vec::new(),
            queued: Vec::new(),
            active: VecDeque::new(),
            orphans: VecDeque::new(),
            time: 0,
        }
    }

    fn add_arc_pair(&mut self, u: u32, v: u32, cap: i64, rev_cap: i64) {
        let a = self.head.len() as u32;
        self.head.push(v);
        self.next.push(self.first[u as usize]);
        self.rcap.push(cap);
        self.first[u as usize] = a;
        self.head.push(u);
        self.next.push(self.first[v as usize]);
        self.rcap.push(rev_cap);
        self.first[v as usize] = a + 1;
    }

    fn activate(&mut self, i: u32) {
        if !self.queued[i as usize] {
            self.queued[i as usize] = true;
            self.active.push_back(i);
        }
    }

    fn next_active(&mut self) -> Option<u32> {
        while let Some(i) = self.active.pop_front() {
            self.queued[i as usize] = false;
            if self.parent[i as usize] != NONE {
                return Some(i);
            }
        }
        None
    }

    fn make_orphan(&mut self, i: u32) {
        self.parent[i as usize] = ORPHAN;
        self.orphans.push_back(i);
    }

    /// Runs to completion and returns the flow through the network.
    fn run(&mut self) -> i64 {
        let n = self.first.len();
        self.parent = vec![NONE; n];
        self.tree = vec![FREE; n];
        self.ts = vec![0; n];
        self.dist = vec![0; n];
        self.queued = vec![false; n];
        self.time = 0;
        for i in 0..n {
            if self.tr[i] != 0 {
                self.tree[i] = if self.tr[i] > 0 { SOURCE } else { SINK };
                self.parent[i] = TERMINAL;
                self.dist[i] = 1;
                self.activate(i as u32);
            }
        }

        let mut flow: i64 = 0;
        let mut current: Option<u32> = None;
        loop {
            let i = match current.take() {
                Some(i) if self.parent[i as usize] != NONE => i,
                _ => match self.next_active() {
                    Some(i) => i,
                    None => break,
                },
            };
            let Some(mid) = self.grow(i) else {
                continue;
            };
            current = Some(i);
            self.time += 1;
            flow += self.augment(mid);
            self.adopt_orphans();
        }
        flow
    }

    /// Expands the tree of `i` by one layer; returns an arc from the source
    /// tree into the sink tree if the trees touch.
    fn grow(&mut self, i: u32) -> Option<u32> {
        let iu = i as usize;
        let side = self.tree[iu];
        let mut a = self.first[iu];
        while a != NONE {
            let au = a as usize;
            let residual = if side == SOURCE {
                self.rcap[au]
            } else {
                self.rcap[au ^ 1]
            };
            if residual > 0 {
                let j = self.head[au];
                let ju = j as usize;
                if self.parent[ju] == NONE {
                    self.tree[ju] = side;
                    self.parent[ju] = a ^ 1;
                    self.ts[ju] = self.ts[iu];
                    self.dist[ju] = self.dist[iu] + 1;
                    self.activate(j);
                } else if self.tree[ju] != side {
                    return Some(if side == SOURCE { a } else { a ^ 1 });
                } else if self.ts[ju] <= self.ts[iu] && self.dist[ju] > self.dist[iu] {
                    // shorter route to the terminal through i
                    self.parent[ju] = a ^ 1;
                    self.ts[ju] = self.ts[iu];
                    self.dist[ju] = self.dist[iu] + 1;
                }
            }
            a = self.next[au];
        }
        None
    }

    /// Pushes the bottleneck along the path through `mid` and orphans every
    /// node whose parent arc saturates.
    fn augment(&mut self, mid: u32) -> i64 {
        let mid_u = mid as usize;
        let (s_end, t_end) = (self.head[mid_u ^ 1], self.head[mid_u]);

        let mut bottleneck = self.rcap[mid_u];
        let mut v = s_end;
        loop {
            let pa = self.parent[v as usize];
            if pa == TERMINAL {
                break;
            }
            bottleneck = bottleneck.min(self.rcap[pa as usize ^ 1]);
            v = self.head[pa as usize];
        }
        bottleneck = bottleneck.min(self.tr[v as usize]);
        let mut v = t_end;
        loop {
            let pa = self.parent[v as usize];
            if pa == TERMINAL {
                break;
            }
            bottleneck = bottleneck.min(self.rcap[pa as usize]);
            v = self.head[pa as usize];
        }
        bottleneck = bottleneck.min(-self.tr[v as usize]);
        debug_assert!(bottleneck > 0);

        self.rcap[mid_u] -= bottleneck;
        self.rcap[mid_u ^ 1] += bottleneck;

        let mut v = s_end;
        loop {
            let pa = self.parent[v as usize];
            if pa == TERMINAL {
                break;
            }
            let pu = pa as usize;
            self.rcap[pu] += bottleneck;
            self.rcap[pu ^ 1] -= bottleneck;
            if self.rcap[pu ^ 1] == 0 {
                self.make_orphan(v);
            }
            v = self.head[pu];
        }
        self.tr[v as usize] -= bottleneck;
        if self.tr[v as usize] == 0 {
            self.make_orphan(v);
        }

        let mut v = t_end;
        loop {
            let pa = self.parent[v as usize];
            if pa == TERMINAL {
                break;
            }
            let pu = pa as usize;
            self.rcap[pu ^ 1] += bottleneck;
            self.rcap[pu] -= bottleneck;
            if self.rcap[pu] == 0 {
                self.make_orphan(v);
            }
            v = self.head[pu];
        }
        self.tr[v as usize] += bottleneck;
        if self.tr[v as usize] == 0 {
            self.make_orphan(v);
        }
        bottleneck
    }

    fn adopt_orphans(&mut self) {
        while let Some(i) = self.orphans.pop_front() {
            self.adopt(i);
        }
    }

    /// Finds a new parent for orphan `i` in its own tree whose root path
    /// reaches a terminal, or frees `i` and orphans its children.
    fn adopt(&mut self, i: u32) {
        let iu = i as usize;
        let side = self.tree[iu];
        let time = self.time;
        let mut best: Option<(u32, u32)> = None;
        let mut a = self.first[iu];
        while a != NONE {
            let au = a as usize;
            let residual = if side == SOURCE {
                self.rcap[au ^ 1]
            } else {
                self.rcap[au]
            };
            let j = self.head[au];
            let ju = j as usize;
            if residual > 0 && self.tree[ju] == side && self.parent[ju] != NONE {
                let mut d: u32 = 0;
                let mut k = ju;
                let valid = loop {
                    if self.ts[k] == time {
                        d += self.dist[k];
                        break true;
                    }
                    let pa = self.parent[k];
                    d += 1;
                    if pa == TERMINAL {
                        self.ts[k] = time;
                        self.dist[k] = 1;
                        break true;
                    }
                    if pa == ORPHAN || pa == NONE {
                        break false;
                    }
                    k = self.head[pa as usize] as usize;
                };
                if valid {
                    if best.is_none_or(|(_, bd)| d < bd) {
                        best = Some((a, d));
                    }
                    let mut k = ju;
                    let mut dk = d;
                    while self.ts[k] != time {
                        self.ts[k] = time;
                        self.dist[k] = dk;
                        dk -= 1;
                        k = self.head[self.parent[k] as usize] as usize;
                    }
                }
            }
            a = self.next[au];
        }

        if let Some((a, d)) = best {
            self.parent[iu] = a;
            self.ts[iu] = time;
            self.dist[iu] = d + 1;
            return;
        }

        let mut a = self.first[iu];
        while a != NONE {
            let au = a as usize;
            let j = self.head[au];
            let ju = j as usize;
            if self.tree[ju] == side && self.parent[ju] != NONE {
                let residual = if side == SOURCE {
                    self.rcap[au ^ 1]
                } else {
                    self.rcap[au]
                };
                if residual > 0 {
                    self.activate(j);
                }
                let pj = self.parent[ju];
                if pj != TERMINAL && pj != ORPHAN && self.head[pj as usize] == i {
                    self.make_orphan(j);
                }
            }
            a = self.next[au];
        }
        self.parent[iu] = NONE;
        self.tree[iu] = FREE;
    }

    fn source_side(&self) -> Vec<bool> {
        (0..self.first.len())
            .map(|i| self.tree[i] == SOURCE && self.parent[i] != NONE)
            .collect()
    }
}
