//! Joint segmentation of several objects with inclusion, exclusion and
//! max-distance interactions, solved as one minimum s-excess problem.
//!
//! Each object owns one subgraph. In a *direct* subgraph a vertex in the
//! source set means label 1; in a *flipped* subgraph it means label 0. An
//! interaction `f_a = x => f_b = y` becomes a single infinite arc only when
//! both sides turn into the same statement about set membership, which is
//! what the polarity assignment guarantees.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::gvf::{self, DiscreteFlow};
use crate::maxflow::{self, Capacity, CutResult, SExcessGraph};
use crate::mrf::{
    self, EdgeWeights, QuantizedTerms, SegmentInput, SegmentParams, ShapePrior, UnaryTerm,
};
use crate::par;
use crate::volume::{squared_distance_map, GridShape, LabelVolume, ScalarVolume};

/// Relative tolerance on squared distances compared against `delta^2`.
const DIST_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Polarity {
    /// Source-set membership means label 1.
    Direct,
    /// Source-set membership means label 0.
    Flipped,
}

impl Polarity {
    fn is_flipped(self) -> bool {
        self == Polarity::Flipped
    }
}

impl std::str::FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Polarity::Direct),
            "flipped" => Ok(Polarity::Flipped),
            _ => Err(Error::Config(format!(
                "polarity must be 'direct' or 'flipped', got '{s}'"
            ))),
        }
    }
}

/// One object of a joint problem. `id` is also its output label.
#[derive(Clone, Debug)]
pub struct ObjectSpec {
    pub id: u8,
    pub unary: UnaryTerm,
    pub pairwise: EdgeWeights,
    pub prior: Option<ShapePrior>,
    pub polarity: Polarity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintKind {
    /// `first` lies inside `second` with margin `delta`.
    Inclusion,
    /// `first` and `second` are at least `delta` apart.
    Exclusion,
    /// Every voxel of `second` (outer) reaches `first` (inner) within `delta`
    /// along its GVF path. Both objects must share one flow.
    MaxDistance,
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConstraintKind::Inclusion => "include",
            ConstraintKind::Exclusion => "exclude",
            ConstraintKind::MaxDistance => "maxdist",
        })
    }
}

/// Pairwise interaction between two objects; `delta` is in mm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InteractionConstraint {
    pub kind: ConstraintKind,
    pub first: u8,
    pub second: u8,
    pub delta: f64,
}

impl InteractionConstraint {
    pub fn inclusion(inner: u8, outer: u8, delta: f64) -> Self {
        InteractionConstraint {
            kind: ConstraintKind::Inclusion,
            first: inner,
            second: outer,
            delta,
        }
    }

    pub fn exclusion(a: u8, b: u8, delta: f64) -> Self {
        InteractionConstraint {
            kind: ConstraintKind::Exclusion,
            first: a,
            second: b,
            delta,
        }
    }

    pub fn max_distance(inner: u8, outer: u8, delta: f64) -> Self {
        InteractionConstraint {
            kind: ConstraintKind::MaxDistance,
            first: inner,
            second: outer,
            delta,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.first == self.second {
            return Err(Error::Config(format!(
                "{} constraint relates object {} to itself",
                self.kind, self.first
            )));
        }
        let ok = match self.kind {
            ConstraintKind::MaxDistance => self.delta > 0.0,
            _ => self.delta >= 0.0,
        };
        if !ok || !self.delta.is_finite() {
            return Err(Error::Config(format!(
                "invalid distance {} for {} {} {}",
                self.delta, self.kind, self.first, self.second
            )));
        }
        Ok(())
    }

    /// Whether the two subgraphs need equal polarity.
    fn same_polarity(&self) -> bool {
        self.kind != ConstraintKind::Exclusion
    }
}

/// Assigns polarities so that every constraint is representable: inclusion
/// and max-distance pairs share a polarity, exclusion pairs differ. The
/// lowest id of each connected group stays direct. Fails when the
/// requirements contradict each other (an odd cycle of exclusions).
pub fn resolve_polarities(
    ids: &[u8],
    constraints: &[InteractionConstraint],
) -> Result<HashMap<u8, Polarity>> {
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    let mut out: HashMap<u8, Polarity> = HashMap::new();
    for &root in &sorted {
        if out.contains_key(&root) {
            continue;
        }
        out.insert(root, Polarity::Direct);
        let mut stack = vec![root];
        while let Some(a) = stack.pop() {
            let pa = out[&a];
            for c in constraints {
                let b = if c.first == a {
                    c.second
                } else if c.second == a {
                    c.first
                } else {
                    continue;
                };
                let want = if c.same_polarity() {
                    pa
                } else if pa == Polarity::Direct {
                    Polarity::Flipped
                } else {
                    Polarity::Direct
                };
                match out.get(&b) {
                    Some(&pb) if pb != want => {
                        return Err(Error::Config(format!(
                            "constraints around objects {a} and {b} need both polarities \
                             of one subgraph"
                        )))
                    }
                    Some(_) => {}
                    None => {
                        out.insert(b, want);
                        stack.push(b);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Offsets `o` with `|o * spacing| <= delta`.
pub fn cone_offsets(shape: &GridShape, delta: f64) -> Vec<[isize; 3]> {
    let sp = shape.spacing3();
    let dims = shape.dims3();
    let lim = |a: usize| -> isize {
        if dims[a] <= 1 {
            0
        } else {
            ((delta / sp[a]).floor() as isize).min(dims[a] as isize - 1)
        }
    };
    let (l0, l1, l2) = (lim(0), lim(1), lim(2));
    let d2 = delta * delta * (1.0 + DIST_EPS);
    let mut out = Vec::new();
    for a in -l0..=l0 {
        for b in -l1..=l1 {
            for c in -l2..=l2 {
                let o = [a, b, c];
                if shape.offset_len2(o) <= d2 {
                    out.push(o);
                }
            }
        }
    }
    out
}

/// First voxel on the GVF path of `p` at distance `>= delta` from `p`.
pub fn first_beyond(flow: &DiscreteFlow, p: usize, delta: f64) -> Option<usize> {
    let shape = flow.shape();
    let d2 = delta * delta * (1.0 - DIST_EPS);
    let mut q = p;
    while let Some(n) = flow.next(q) {
        if shape.dist2(p, n) >= d2 {
            return Some(n);
        }
        q = n;
    }
    None
}

/// Joint graph with the bookkeeping needed to decode it.
#[derive(Clone, Debug)]
pub struct JointGraph {
    pub graph: SExcessGraph,
    shape: GridShape,
    ids: Vec<u8>,
    polarities: Vec<Polarity>,
    terms: Vec<QuantizedTerms>,
    constraints: Vec<InteractionConstraint>,
}

impl JointGraph {
    /// Graph vertex of voxel `p` of the `k`-th object.
    pub fn vertex(&self, k: usize, p: usize) -> usize {
        k * self.shape.len() + p
    }

    pub fn ids(&self) -> &[u8] {
        &self.ids
    }

    pub fn polarities(&self) -> &[Polarity] {
        &self.polarities
    }

    pub fn terms(&self) -> &[QuantizedTerms] {
        &self.terms
    }

    /// Offset between the s-excess objective and the joint energy.
    pub fn constant(&self) -> i64 {
        self.terms
            .iter()
            .zip(&self.polarities)
            .map(|(t, p)| t.constant(p.is_flipped()))
            .sum()
    }

    /// Sum of per-object integer energies; `None` if a prior is violated.
    /// Interaction constraints are not checked here.
    pub fn energy(&self, masks: &[Vec<bool>]) -> Option<i64> {
        self.terms.iter().zip(masks).map(|(t, m)| t.energy(m)).sum()
    }
}

fn submodular_arc(g: &mut SExcessGraph, a: (usize, bool), b: (usize, bool)) -> Result<()> {
    // a.1 / b.1: whether the literal is "vertex in the source set"
    match (a.1, b.1) {
        (true, true) => g.add_edge(a.0, b.0, Capacity::Inf),
        (false, false) => g.add_edge(b.0, a.0, Capacity::Inf),
        _ => Err(Error::Config(
            "interaction is not representable with the chosen polarities".into(),
        )),
    }
}

/// Builds the joint graph. Objects must share one grid.
pub fn build_joint_graph(
    objects: &[ObjectSpec],
    constraints: &[InteractionConstraint],
    scale: f64,
) -> Result<JointGraph> {
    let first = objects
        .first()
        .ok_or_else(|| Error::Config("no objects".into()))?;
    let shape = first.unary.shape().clone();
    let mut index: HashMap<u8, usize> = HashMap::new();
    for (k, o) in objects.iter().enumerate() {
        if o.id == 0 {
            return Err(Error::Config(
                "object id 0 is reserved for background".into(),
            ));
        }
        if index.insert(o.id, k).is_some() {
            return Err(Error::Config(format!("duplicate object id {}", o.id)));
        }
        if o.unary.shape().dims() != shape.dims() || o.unary.shape().spacing() != shape.spacing() {
            return Err(Error::ShapeMismatch(format!("object {} grid", o.id)));
        }
    }
    for c in constraints {
        c.validate()?;
        for id in [c.first, c.second] {
            if !index.contains_key(&id) {
                return Err(Error::Config(format!(
                    "constraint references unknown object {id}"
                )));
            }
        }
    }
    let terms = par::map_slice(objects, |o| {
        QuantizedTerms::new(&o.unary, &o.pairwise, o.prior.as_ref(), scale)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let n = shape.len();
    let total = n
        .checked_mul(objects.len())
        .filter(|&t| t <= u32::MAX as usize)
        .ok_or_else(|| Error::Overflow("joint graph exceeds 2^32 vertices".into()))?;
    let mut g = SExcessGraph::new(total);
    for (k, (o, t)) in objects.iter().zip(&terms).enumerate() {
        t.append_to(&mut g, k * n, o.polarity.is_flipped())?;
    }

    for c in constraints {
        let (ka, kb) = (index[&c.first], index[&c.second]);
        let (fa, fb) = (
            objects[ka].polarity.is_flipped(),
            objects[kb].polarity.is_flipped(),
        );
        if c.same_polarity() != (fa == fb) {
            return Err(Error::Config(format!(
                "{} {} {} requires {} polarities",
                c.kind,
                c.first,
                c.second,
                if c.same_polarity() {
                    "equal"
                } else {
                    "opposite"
                }
            )));
        }
        match c.kind {
            ConstraintKind::Inclusion | ConstraintKind::Exclusion => {
                // f_a(p) = 1  =>  f_b(p') = 1 (inclusion) or 0 (exclusion)
                let target = c.kind == ConstraintKind::Inclusion;
                let cone = cone_offsets(&shape, c.delta);
                for p in 0..n {
                    for &o in &cone {
                        if let Some(q) = shape.offset3(p, o) {
                            submodular_arc(&mut g, (ka * n + p, !fa), (kb * n + q, target ^ fb))?;
                        }
                    }
                }
            }
            ConstraintKind::MaxDistance => {
                let flow = shared_flow(&objects[ka], &objects[kb])?;
                // f_outer(p) = 1  =>  f_inner(q) = 1
                let targets = par::map_range(n, |p| first_beyond(&flow, p, c.delta));
                for (p, q) in targets.into_iter().enumerate() {
                    if let Some(q) = q {
                        submodular_arc(&mut g, (kb * n + p, !fb), (ka * n + q, !fa))?;
                    }
                }
            }
        }
    }
    Ok(JointGraph {
        graph: g,
        shape,
        ids: objects.iter().map(|o| o.id).collect(),
        polarities: objects.iter().map(|o| o.polarity).collect(),
        terms,
        constraints: constraints.to_vec(),
    })
}

fn shared_flow(a: &ObjectSpec, b: &ObjectSpec) -> Result<Arc<DiscreteFlow>> {
    match (&a.prior, &b.prior) {
        (Some(pa), Some(pb)) if Arc::ptr_eq(&pa.flow, &pb.flow) || pa.flow == pb.flow => {
            Ok(pa.flow.clone())
        }
        _ => Err(Error::Config(format!(
            "maxdist {} {} requires both objects to share one GVF flow",
            a.id, b.id
        ))),
    }
}

/// Decoded joint labeling.
#[derive(Clone, Debug)]
pub struct JointSolution {
    /// Per-object masks, in input order.
    pub masks: ObjectMasks,
    /// One label per voxel; nested objects show their innermost label.
    pub labels: LabelVolume,
    /// Voxels claimed by several objects with no constraint ordering them.
    pub unresolved_overlaps: usize,
    pub energy: i64,
    pub objective: i64,
}

/// Per-object binary masks on one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectMasks {
    pub shape: GridShape,
    pub ids: Vec<u8>,
    pub masks: Vec<Vec<bool>>,
}

impl ObjectMasks {
    pub fn get(&self, id: u8) -> Option<&[bool]> {
        self.ids
            .iter()
            .position(|&i| i == id)
            .map(|k| self.masks[k].as_slice())
    }

    /// Reconstructs object masks from a label map in which included objects
    /// hide their parents: the mask of an object is its own label plus the
    /// labels of every object transitively included in it.
    pub fn from_labels(
        labels: &LabelVolume,
        ids: &[u8],
        constraints: &[InteractionConstraint],
    ) -> Self {
        let masks = ids
            .iter()
            .map(|&id| {
                let mut members = vec![id];
                let mut i = 0;
                while i < members.len() {
                    for c in constraints {
                        if c.kind == ConstraintKind::Inclusion
                            && c.second == members[i]
                            && !members.contains(&c.first)
                        {
                            members.push(c.first);
                        }
                    }
                    i += 1;
                }
                labels.data().iter().map(|l| members.contains(l)).collect()
            })
            .collect();
        ObjectMasks {
            shape: labels.shape().clone(),
            ids: ids.to_vec(),
            masks,
        }
    }
}

/// Maps the cut back to per-object masks and a label map.
pub fn decode(cut: &CutResult, joint: &JointGraph) -> Result<JointSolution> {
    let n = joint.shape.len();
    let masks: Vec<Vec<bool>> = joint
        .polarities
        .iter()
        .enumerate()
        .map(|(k, pol)| {
            cut.source_set[k * n..(k + 1) * n]
                .iter()
                .map(|&s| s != pol.is_flipped())
                .collect()
        })
        .collect();

    // a claimant that is the outer side of a nesting constraint with another
    // claimant yields to it
    let nests = |outer: u8, inner: u8| {
        joint
            .constraints
            .iter()
            .any(|c| c.kind != ConstraintKind::Exclusion && c.second == outer && c.first == inner)
    };
    let mut order: Vec<usize> = (0..masks.len()).collect();
    order.sort_by_key(|&k| joint.ids[k]);
    let mut labels = vec![0u8; n];
    let mut unresolved = 0;
    let mut claim = Vec::new();
    for (p, l) in labels.iter_mut().enumerate() {
        claim.clear();
        claim.extend(order.iter().copied().filter(|&k| masks[k][p]));
        match claim.len() {
            0 => {}
            1 => *l = joint.ids[claim[0]],
            _ => {
                let candidates: Vec<usize> = claim
                    .iter()
                    .copied()
                    .filter(|&k| {
                        !claim
                            .iter()
                            .any(|&j| j != k && nests(joint.ids[k], joint.ids[j]))
                    })
                    .collect();
                for c in &joint.constraints {
                    if c.kind == ConstraintKind::Exclusion {
                        let a = claim.iter().any(|&k| joint.ids[k] == c.first);
                        let b = claim.iter().any(|&k| joint.ids[k] == c.second);
                        assert!(!(a && b), "exclusive objects share voxel {p}");
                    }
                }
                if candidates.len() != 1 {
                    unresolved += 1;
                }
                let pick = candidates.first().copied().unwrap_or(claim[0]);
                *l = joint.ids[pick];
            }
        }
    }
    if unresolved > 0 {
        log::warn!("{unresolved} voxels claimed by unconstrained objects; lowest id kept");
    }
    let energy = joint
        .energy(&masks)
        .expect("the optimum never violates an infinite prior edge");
    let masks = ObjectMasks {
        shape: joint.shape.clone(),
        ids: joint.ids.clone(),
        masks,
    };
    Ok(JointSolution {
        labels: LabelVolume::from_vec(joint.shape.clone(), labels)?,
        masks,
        unresolved_overlaps: unresolved,
        energy,
        objective: cut.objective,
    })
}

/// Builds, solves and decodes a joint problem.
pub fn solve_joint(
    objects: &[ObjectSpec],
    constraints: &[InteractionConstraint],
    scale: f64,
) -> Result<JointSolution> {
    let joint = build_joint_graph(objects, constraints, scale)?;
    let cut = maxflow::solve_s_excess(&joint.graph)?;
    let sol = decode(&cut, &joint)?;
    assert_eq!(
        sol.energy,
        cut.objective + joint.constant(),
        "joint graph does not reproduce the energy"
    );
    Ok(sol)
}

/// A single failed check.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub constraint: InteractionConstraint,
    pub coord: Vec<usize>,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConstraintReport {
    pub checked: usize,
    pub violations: Vec<Violation>,
}

impl ConstraintReport {
    pub fn is_satisfied(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ConstraintReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "constraints checked: {}, violations: {}",
            self.checked,
            self.violations.len()
        )?;
        for v in &self.violations {
            let c = v.constraint;
            writeln!(
                f,
                "{} {} {} {}: at {:?} {}",
                c.kind, c.first, c.second, c.delta, v.coord, v.detail
            )?;
        }
        Ok(())
    }
}

/// Checks every constraint on decoded masks using distance transforms and
/// explicit path walks. Max-distance checks need the shared flow of the
/// pair, looked up by the inner object id in `flows`.
pub fn verify_constraints(
    masks: &ObjectMasks,
    constraints: &[InteractionConstraint],
    flows: &HashMap<u8, Arc<DiscreteFlow>>,
) -> ConstraintReport {
    const MAX_LISTED: usize = 100;
    let shape = &masks.shape;
    let mut report = ConstraintReport::default();
    let push = |report: &mut ConstraintReport, c: &InteractionConstraint, p: usize, d: String| {
        if report.violations.len() < MAX_LISTED {
            report.violations.push(Violation {
                constraint: *c,
                coord: shape.coord(p).expect("index in range"),
                detail: d,
            });
        }
    };
    for c in constraints {
        report.checked += 1;
        let (Some(a), Some(b)) = (masks.get(c.first), masks.get(c.second)) else {
            push(&mut report, c, 0, "unknown object".into());
            continue;
        };
        let d2 = c.delta * c.delta * (1.0 + DIST_EPS);
        match c.kind {
            ConstraintKind::Inclusion => {
                let outside: Vec<bool> = b.iter().map(|&x| !x).collect();
                let dist = squared_distance_map(shape, &outside);
                for p in (0..a.len()).filter(|&p| a[p] && dist[p] <= d2) {
                    push(
                        &mut report,
                        c,
                        p,
                        format!("distance to exterior {:.3} <= {}", dist[p].sqrt(), c.delta),
                    );
                }
            }
            ConstraintKind::Exclusion => {
                let dist = squared_distance_map(shape, b);
                for p in (0..a.len()).filter(|&p| a[p] && dist[p] <= d2) {
                    push(
                        &mut report,
                        c,
                        p,
                        format!("distance to other {:.3} <= {}", dist[p].sqrt(), c.delta),
                    );
                }
            }
            ConstraintKind::MaxDistance => {
                let Some(flow) = flows.get(&c.first) else {
                    push(&mut report, c, 0, "no flow for inner object".into());
                    continue;
                };
                let reach = c.delta * c.delta * (1.0 - DIST_EPS);
                for p in (0..b.len()).filter(|&p| b[p] && !a[p]) {
                    // walk until the path leaves the delta ball
                    let mut q = p;
                    let mut hit = false;
                    let mut far = false;
                    while let Some(nq) = flow.next(q) {
                        q = nq;
                        if a[q] {
                            hit = true;
                            break;
                        }
                        if shape.dist2(p, q) >= reach {
                            far = true;
                            break;
                        }
                    }
                    if far && !hit {
                        push(
                            &mut report,
                            c,
                            p,
                            "inner object not reached along path".into(),
                        );
                    }
                }
            }
        }
    }
    report
}

/// One object of [`segment_multi`]: the pre-segmentation object is the union
/// of `labels` in `preseg`.
#[derive(Clone, Debug)]
pub struct ObjectInput<'a> {
    pub id: u8,
    pub image: &'a ScalarVolume,
    pub prob: Option<&'a ScalarVolume>,
    pub preseg: &'a LabelVolume,
    pub labels: Vec<u8>,
    pub params: SegmentParams,
    /// `None` lets [`resolve_polarities`] choose.
    pub polarity: Option<Polarity>,
}

#[derive(Clone, Debug)]
pub struct MultiResult {
    pub solution: JointSolution,
    pub report: ConstraintReport,
    /// Flow used by each object's prior.
    pub flows: HashMap<u8, Arc<DiscreteFlow>>,
    /// Per object, voxels whose GVF path leaves the object (full path scan).
    pub path_violations: Vec<(u8, usize)>,
}

/// Terms, priors, joint solve, decoding and constraint verification for
/// several objects. Objects with identical pre-segmentation masks and GVF
/// parameters share one flow.
pub fn segment_multi(
    objects: &[ObjectInput<'_>],
    constraints: &[InteractionConstraint],
    scale: f64,
) -> Result<MultiResult> {
    let masks: Vec<LabelVolume> = objects
        .iter()
        .map(|o| {
            let m: Vec<bool> = o
                .preseg
                .data()
                .iter()
                .map(|l| o.labels.contains(l))
                .collect();
            if !m.iter().any(|&x| x) {
                return Err(Error::Config(format!(
                    "object {}: labels {:?} absent from its pre-segmentation",
                    o.id, o.labels
                )));
            }
            LabelVolume::from_mask(o.preseg.shape().clone(), &m)
        })
        .collect::<Result<_>>()?;

    let mut cache: Vec<(usize, Arc<DiscreteFlow>)> = Vec::new();
    let mut flows = HashMap::new();
    let mut specs = Vec::with_capacity(objects.len());
    let ids: Vec<u8> = objects.iter().map(|o| o.id).collect();
    let auto = resolve_polarities(&ids, constraints)?;
    for (k, o) in objects.iter().enumerate() {
        let input = SegmentInput {
            image: o.image,
            prob: o.prob,
            preseg: &masks[k],
            label: 1,
        };
        let terms = mrf::object_terms(
            &input,
            &SegmentParams {
                prior: None,
                ..o.params.clone()
            },
        )?;
        let prior = match o.params.prior {
            None => None,
            Some(penalty) => {
                let hit = cache
                    .iter()
                    .find(|(j, _)| masks[*j] == masks[k] && objects[*j].params.gvf == o.params.gvf);
                let flow = match hit {
                    Some((_, f)) => f.clone(),
                    None => {
                        let f = Arc::new(gvf::build_prior(&masks[k], 1, &o.params.gvf)?.flow);
                        cache.push((k, f.clone()));
                        f
                    }
                };
                flows.insert(o.id, flow.clone());
                Some(ShapePrior::shared(flow, penalty))
            }
        };
        specs.push(ObjectSpec {
            id: o.id,
            unary: terms.unary,
            pairwise: terms.pairwise,
            prior,
            polarity: o.polarity.unwrap_or(auto[&o.id]),
        });
    }
    let solution = solve_joint(&specs, constraints, scale)?;
    let report = verify_constraints(&solution.masks, constraints, &flows);
    let path_violations = specs
        .iter()
        .zip(&solution.masks.masks)
        .map(|(s, m)| {
            let v = s
                .prior
                .as_ref()
                .map_or(0, |p| mrf::path_violations(m, &p.flow));
            (s.id, v)
        })
        .collect();
    Ok(MultiResult {
        solution,
        report,
        flows,
        path_violations,
    })
}
