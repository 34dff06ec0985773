//! Single-object binary MRF energy with data, smoothness and GVF shape-prior
//! terms, and its encoding as a minimum s-excess graph.
//!
//! ```text
//! E(f) = sum_p D_p(f_p) + sum_{(p,q)} V_pq(f_p, f_q) + sum_{p->q in flow} phi(f_p, f_q)
//! ```
//!
//! `V_pq` is zero for equal labels and `phi(1, 0)` is infinite (or a finite
//! penalty), zero otherwise. Real-valued terms are scaled and rounded to
//! integers once ([`QuantizedTerms`]); the graph, the solver and every
//! exactness check work on those integers.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::gvf::{self, DiscreteFlow, GvfParams, GvfPrior};
use crate::maxflow::{self, Capacity, SExcessGraph};
use crate::par;
use crate::volume::{
    GridShape, LabelVolume, Neighborhood, NeighborhoodKind, RealVolume, ScalarVolume, Volume,
};

/// Default energy-to-integer scale factor.
pub const DEFAULT_SCALE: f64 = 1e4;
/// Default probability clamp for log-likelihood unaries.
pub const DEFAULT_EPS: f64 = 1e-6;

/// Contrast-enhancing sigmoid `1 / (1 + exp(-(I - beta) / alpha))`.
pub fn sigmoid_transform(img: &ScalarVolume, alpha: f64, beta: f64) -> Result<RealVolume> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Param(format!(
            "sigmoid alpha must be > 0, got {alpha}"
        )));
    }
    let data = par::map_slice(img.data(), |&i| sigmoid(i as f64, alpha, beta));
    Volume::from_vec(img.shape().clone(), data)
}

#[inline]
fn sigmoid(i: f64, alpha: f64, beta: f64) -> f64 {
    1.0 / (1.0 + (-(i - beta) / alpha).exp())
}

/// Smoothness penalty `lambda * exp(-(a - b)^2 / sigma^2)` for a label change
/// between two voxels with contrast-adjusted intensities `a` and `b`.
#[inline]
pub fn boundary_weight(a: f64, b: f64, sigma: f64, lambda: f64) -> f64 {
    let d = a - b;
    lambda * (-(d * d) / (sigma * sigma)).exp()
}

/// Per-voxel data costs of the two labels.
#[derive(Clone, Debug, PartialEq)]
pub struct UnaryTerm {
    /// Cost of label 1.
    pub d1: RealVolume,
    /// Cost of label 0.
    pub d0: RealVolume,
}

impl UnaryTerm {
    pub fn new(d1: RealVolume, d0: RealVolume) -> Result<Self> {
        if d1.shape() != d0.shape() {
            return Err(Error::ShapeMismatch("unary d1/d0".into()));
        }
        if d1.data().iter().chain(d0.data()).any(|v| !v.is_finite()) {
            return Err(Error::Param("unary terms must be finite".into()));
        }
        Ok(UnaryTerm { d1, d0 })
    }

    pub fn zeros(shape: GridShape) -> Self {
        UnaryTerm {
            d1: Volume::filled(shape.clone(), 0.0),
            d0: Volume::filled(shape, 0.0),
        }
    }

    pub fn shape(&self) -> &GridShape {
        self.d1.shape()
    }

    pub fn scaled(&self, k: f64) -> Self {
        UnaryTerm {
            d1: self.d1.map(|v| v * k),
            d0: self.d0.map(|v| v * k),
        }
    }
}

/// Negative log-likelihood unaries from a foreground probability map,
/// clamped at `eps`.
pub fn log_likelihood_unary(prob: &ScalarVolume, eps: f64) -> Result<UnaryTerm> {
    if !(eps > 0.0) {
        return Err(Error::Param(format!("eps must be > 0, got {eps}")));
    }
    if let Some(p) = prob.data().iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Param(format!("probability {p} outside [0, 1]")));
    }
    let d1 = prob.map(|&p| -(p as f64).max(eps).ln());
    let d0 = prob.map(|&p| -(1.0 - p as f64).max(eps).ln());
    UnaryTerm::new(d1, d0)
}

/// Two Gaussian intensity classes with equal priors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntensityModel {
    pub background_mean: f64,
    pub background_std: f64,
    pub object_mean: f64,
    pub object_std: f64,
}

impl IntensityModel {
    /// Fits means and standard deviations inside/outside the pre-segmentation.
    pub fn fit(image: &ScalarVolume, preseg: &LabelVolume, label: u8) -> Result<Self> {
        if image.shape().dims() != preseg.shape().dims() {
            return Err(Error::ShapeMismatch("image vs pre-segmentation".into()));
        }
        let stats = |inside: bool| -> Option<(f64, f64)> {
            let vals: Vec<f64> = image
                .data()
                .iter()
                .zip(preseg.data())
                .filter(|(_, &l)| (l == label) == inside)
                .map(|(&v, _)| v as f64)
                .collect();
            if vals.is_empty() {
                return None;
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            Some((mean, var.sqrt()))
        };
        let (om, os) = stats(true).ok_or(Error::EmptySet(label))?;
        let (bm, bs) = stats(false)
            .ok_or_else(|| Error::Param("pre-segmentation covers the whole image".into()))?;
        let floor = 1e-3 * (om - bm).abs().max(1e-6);
        Ok(IntensityModel {
            background_mean: bm,
            background_std: bs.max(floor),
            object_mean: om,
            object_std: os.max(floor),
        })
    }

    /// Posterior probability of the object class.
    pub fn probability(&self, image: &ScalarVolume) -> ScalarVolume {
        let log_n = |x: f64, m: f64, s: f64| -0.5 * ((x - m) / s).powi(2) - s.ln();
        let data = par::map_slice(image.data(), |&v| {
            let v = v as f64;
            let lo = log_n(v, self.object_mean, self.object_std);
            let lb = log_n(v, self.background_mean, self.background_std);
            (1.0 / (1.0 + (lb - lo).exp())) as f32
        });
        Volume::from_vec(image.shape().clone(), data).expect("shape preserved")
    }
}

/// Smoothness term configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseTerm {
    pub lambda: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub nbhd: NeighborhoodKind,
}

impl PairwiseTerm {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Param(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Param(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Param(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// One smoothness weight `V_pq(1, 0) = V_pq(0, 1)` per unordered neighbor
/// pair, stored per voxel and forward offset.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeWeights {
    shape: GridShape,
    forward: Vec<[isize; 3]>,
    weights: Vec<f64>,
}

impl EdgeWeights {
    pub fn from_fn<F>(shape: &GridShape, kind: NeighborhoodKind, f: F) -> Self
    where
        F: Fn(usize, usize) -> f64 + Send + Sync,
    {
        let forward = Neighborhood::for_shape(kind, shape).forward3();
        let k = forward.len();
        let weights = par::map_range(shape.len() * k, |i| {
            let (p, j) = (i / k, i % k);
            shape.offset3(p, forward[j]).map_or(0.0, |q| f(p, q))
        });
        EdgeWeights {
            shape: shape.clone(),
            forward,
            weights,
        }
    }

    pub fn zeros(shape: &GridShape, kind: NeighborhoodKind) -> Self {
        Self::from_fn(shape, kind, |_, _| 0.0)
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    /// All in-bounds pairs `(p, q, weight)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let k = self.forward.len();
        self.weights.iter().enumerate().filter_map(move |(i, &w)| {
            let (p, j) = (i / k, i % k);
            self.shape.offset3(p, self.forward[j]).map(|q| (p, q, w))
        })
    }

    pub fn scaled(&self, s: f64) -> Self {
        EdgeWeights {
            shape: self.shape.clone(),
            forward: self.forward.clone(),
            weights: self.weights.iter().map(|w| w * s).collect(),
        }
    }
}

/// Contrast-sensitive smoothness weights from an intensity image.
pub fn pairwise_weights(image: &ScalarVolume, term: &PairwiseTerm) -> Result<EdgeWeights> {
    term.validate()?;
    let adjusted = sigmoid_transform(image, term.alpha, term.beta)?;
    let a = adjusted.data();
    Ok(EdgeWeights::from_fn(image.shape(), term.nbhd, |p, q| {
        boundary_weight(a[p], a[q], term.sigma, term.lambda)
    }))
}

/// Penalty for a flow edge `p -> q` with `f_p = 1, f_q = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PriorPenalty {
    Inf,
    Finite(f64),
}

impl std::str::FromStr for PriorPenalty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("inf") {
            return Ok(PriorPenalty::Inf);
        }
        match s.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Ok(PriorPenalty::Finite(v)),
            _ => Err(Error::Param(format!(
                "prior must be 'inf' or a non-negative number, got '{s}'"
            ))),
        }
    }
}

/// GVF shape prior: flow edges carrying [`PriorPenalty`].
#[derive(Clone, Debug)]
pub struct ShapePrior {
    pub flow: Arc<DiscreteFlow>,
    pub penalty: PriorPenalty,
}

impl ShapePrior {
    pub fn new(flow: DiscreteFlow, penalty: PriorPenalty) -> Self {
        ShapePrior {
            flow: Arc::new(flow),
            penalty,
        }
    }

    pub fn shared(flow: Arc<DiscreteFlow>, penalty: PriorPenalty) -> Self {
        ShapePrior { flow, penalty }
    }
}

/// Number of flow edges `p -> q` with `f_p = 1` and `f_q = 0`.
pub fn prior_violations(labels: &[bool], flow: &DiscreteFlow) -> usize {
    flow.edges()
        .filter(|&(p, q)| labels[p] && !labels[q])
        .count()
}

/// Number of foreground voxels with a background voxel anywhere on their GVF
/// path (full path scan, independent of the edge encoding).
pub fn path_violations(labels: &[bool], flow: &DiscreteFlow) -> usize {
    (0..labels.len())
        .filter(|&p| labels[p] && gvf::trace_path(flow, p).iter().any(|&q| !labels[q]))
        .count()
}

/// Energy value of a labeling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Energy {
    Finite(f64),
    Infeasible,
}

impl Energy {
    pub fn value(self) -> Option<f64> {
        match self {
            Energy::Finite(v) => Some(v),
            Energy::Infeasible => None,
        }
    }
}

/// Real-valued energy of a binary labeling (label 0 = background, any
/// non-zero label = foreground).
pub fn energy(
    labeling: &LabelVolume,
    unary: &UnaryTerm,
    pairwise: &EdgeWeights,
    prior: Option<&ShapePrior>,
) -> Result<Energy> {
    let shape = labeling.shape();
    if unary.shape().dims() != shape.dims() || pairwise.shape().dims() != shape.dims() {
        return Err(Error::ShapeMismatch("labeling vs terms".into()));
    }
    let f: Vec<bool> = labeling.data().iter().map(|&l| l != 0).collect();
    let mut e: f64 = f
        .iter()
        .enumerate()
        .map(|(p, &fp)| {
            if fp {
                unary.d1.data()[p]
            } else {
                unary.d0.data()[p]
            }
        })
        .sum();
    e += pairwise
        .iter()
        .filter(|&(p, q, _)| f[p] != f[q])
        .map(|(_, _, w)| w)
        .sum::<f64>();
    if let Some(prior) = prior {
        let violations = prior_violations(&f, &prior.flow);
        match prior.penalty {
            PriorPenalty::Inf if violations > 0 => return Ok(Energy::Infeasible),
            PriorPenalty::Inf => {}
            PriorPenalty::Finite(w) => e += w * violations as f64,
        }
    }
    Ok(Energy::Finite(e))
}

/// Integer version of all energy terms at a fixed scale.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedTerms {
    shape: GridShape,
    pub d0: Vec<i64>,
    pub d1: Vec<i64>,
    /// Unordered neighbor pairs with their (symmetric) penalty.
    pub pairs: Vec<(u32, u32, i64)>,
    /// Flow edges `p -> q`.
    pub flow_edges: Vec<(u32, u32)>,
    /// Prior penalty; `None` means infinite.
    pub prior_cap: Option<i64>,
}

/// Values beyond this magnitude after scaling are rejected so that sums over
/// large graphs keep head-room in `i64`.
const MAX_SCALED: f64 = (1u64 << 52) as f64;

fn quantize(v: f64, scale: f64, what: &str) -> Result<i64> {
    let s = (v * scale).round();
    if !s.is_finite() || s.abs() > MAX_SCALED {
        return Err(Error::Overflow(format!(
            "{what} value {v} overflows at scale {scale}; use a smaller --scale"
        )));
    }
    Ok(s as i64)
}

impl QuantizedTerms {
    pub fn new(
        unary: &UnaryTerm,
        pairwise: &EdgeWeights,
        prior: Option<&ShapePrior>,
        scale: f64,
    ) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Param(format!("scale must be > 0, got {scale}")));
        }
        let shape = unary.shape().clone();
        if pairwise.shape().dims() != shape.dims() {
            return Err(Error::ShapeMismatch("unary vs pairwise".into()));
        }
        let d0 = unary
            .d0
            .data()
            .iter()
            .map(|&v| quantize(v, scale, "unary"))
            .collect::<Result<Vec<_>>>()?;
        let d1 = unary
            .d1
            .data()
            .iter()
            .map(|&v| quantize(v, scale, "unary"))
            .collect::<Result<Vec<_>>>()?;
        let mut pairs = Vec::new();
        for (p, q, w) in pairwise.iter() {
            if w < 0.0 {
                return Err(Error::Param(format!("negative smoothness weight {w}")));
            }
            let c = quantize(w, scale, "smoothness")?;
            if c > 0 {
                pairs.push((p as u32, q as u32, c));
            }
        }
        let (flow_edges, prior_cap) = match prior {
            None => (Vec::new(), Some(0)),
            Some(pr) => {
                if pr.flow.shape().dims() != shape.dims() {
                    return Err(Error::ShapeMismatch("prior flow vs terms".into()));
                }
                let cap = match pr.penalty {
                    PriorPenalty::Inf => None,
                    PriorPenalty::Finite(w) if w < 0.0 => {
                        return Err(Error::Param(format!("negative prior penalty {w}")))
                    }
                    PriorPenalty::Finite(w) => Some(quantize(w, scale, "prior")?),
                };
                let edges = pr.flow.edges().map(|(p, q)| (p as u32, q as u32)).collect();
                (edges, cap)
            }
        };
        let terms = QuantizedTerms {
            shape,
            d0,
            d1,
            pairs,
            flow_edges,
            prior_cap,
        };
        terms.check_headroom()?;
        Ok(terms)
    }

    fn check_headroom(&self) -> Result<()> {
        let mut total: i128 = 0;
        for (&a, &b) in self.d0.iter().zip(&self.d1) {
            total += (a as i128).abs() + (b as i128).abs();
        }
        for &(_, _, c) in &self.pairs {
            total += 2 * c as i128;
        }
        if let Some(c) = self.prior_cap {
            total += c as i128 * self.flow_edges.len() as i128;
        }
        if total >= (i64::MAX / 4) as i128 {
            return Err(Error::Overflow(
                "total scaled energy exceeds i64 head-room; use a smaller --scale".into(),
            ));
        }
        Ok(())
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.d0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d0.is_empty()
    }

    /// Integer energy of a labeling, `None` if an infinite prior edge is violated.
    pub fn energy(&self, f: &[bool]) -> Option<i64> {
        let mut e: i64 = f
            .iter()
            .enumerate()
            .map(|(p, &fp)| if fp { self.d1[p] } else { self.d0[p] })
            .sum();
        for &(p, q, c) in &self.pairs {
            if f[p as usize] != f[q as usize] {
                e += c;
            }
        }
        for &(p, q) in &self.flow_edges {
            if f[p as usize] && !f[q as usize] {
                e += self.prior_cap?;
            }
        }
        Some(e)
    }

    /// Energy offset between the s-excess objective and the MRF energy:
    /// `sum D(0)` for a direct subgraph, `sum D(1)` for a flipped one.
    pub fn constant(&self, flipped: bool) -> i64 {
        if flipped {
            self.d1.iter().sum()
        } else {
            self.d0.iter().sum()
        }
    }

    /// Adds this object's vertices `offset..offset + n` to `g`. In a flipped
    /// subgraph a vertex in the source set means label 0, so weights are
    /// negated and every intra-subgraph arc is reversed.
    pub fn append_to(&self, g: &mut SExcessGraph, offset: usize, flipped: bool) -> Result<()> {
        for p in 0..self.len() {
            let w = self.d1[p] - self.d0[p];
            g.add_weight(offset + p, if flipped { -w } else { w })?;
        }
        let mut arc = |u: usize, v: usize, cap: Capacity| -> Result<()> {
            if flipped {
                g.add_edge(offset + v, offset + u, cap)
            } else {
                g.add_edge(offset + u, offset + v, cap)
            }
        };
        for &(p, q, c) in &self.pairs {
            arc(p as usize, q as usize, Capacity::Finite(c))?;
            arc(q as usize, p as usize, Capacity::Finite(c))?;
        }
        let prior_cap = match self.prior_cap {
            None => Capacity::Inf,
            Some(c) => Capacity::Finite(c),
        };
        for &(p, q) in &self.flow_edges {
            arc(p as usize, q as usize, prior_cap)?;
        }
        Ok(())
    }
}

/// One vertex per voxel; the optimal source set is the foreground.
pub fn build_graph(terms: &QuantizedTerms) -> Result<SExcessGraph> {
    let mut g = SExcessGraph::new(terms.len());
    g.reserve_edges(2 * terms.pairs.len() + terms.flow_edges.len());
    terms.append_to(&mut g, 0, false)?;
    Ok(g)
}

/// Optimal labeling of quantized terms.
#[derive(Clone, Debug)]
pub struct Solution {
    pub labels: Vec<bool>,
    /// Integer energy of `labels`.
    pub energy: i64,
    /// s-excess objective; `energy = objective + constant`.
    pub objective: i64,
}

/// Builds the graph, solves it and checks the energy identity.
pub fn solve_terms(terms: &QuantizedTerms) -> Result<Solution> {
    let g = build_graph(terms)?;
    let cut = maxflow::solve_s_excess(&g)?;
    let labels = cut.source_set;
    let energy = terms
        .energy(&labels)
        .expect("the optimum never violates an infinite prior edge");
    assert_eq!(
        energy,
        cut.objective + terms.constant(false),
        "graph encoding does not reproduce the energy"
    );
    Ok(Solution {
        labels,
        energy,
        objective: cut.objective,
    })
}

/// Smoothness settings of [`segment`]; `None` for alpha/beta derives them
/// from the pre-segmentation intensity statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseParams {
    pub lambda: f64,
    pub sigma: f64,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub nbhd: NeighborhoodKind,
}

impl Default for PairwiseParams {
    fn default() -> Self {
        PairwiseParams {
            lambda: 1.0,
            sigma: 0.1,
            alpha: None,
            beta: None,
            nbhd: NeighborhoodKind::Face,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentParams {
    pub pairwise: PairwiseParams,
    /// `None` disables the shape prior.
    pub prior: Option<PriorPenalty>,
    pub scale: f64,
    pub eps: f64,
    pub gvf: GvfParams,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams {
            pairwise: PairwiseParams::default(),
            prior: Some(PriorPenalty::Inf),
            scale: DEFAULT_SCALE,
            eps: DEFAULT_EPS,
            gvf: GvfParams::default(),
        }
    }
}

/// Inputs of a single-object segmentation.
#[derive(Clone, Copy, Debug)]
pub struct SegmentInput<'a> {
    pub image: &'a ScalarVolume,
    /// Foreground probability; derived from a Gaussian intensity model fitted
    /// to the pre-segmentation when absent.
    pub prob: Option<&'a ScalarVolume>,
    pub preseg: &'a LabelVolume,
    pub label: u8,
}

#[derive(Clone, Debug)]
pub struct Segmentation {
    /// 0/1 labels.
    pub labels: LabelVolume,
    pub energy: i64,
    pub objective: i64,
    pub prior_violations: usize,
    pub gvf: Option<GvfPrior>,
}

/// Sigmoid parameters centred between the class means.
pub fn auto_contrast(model: &IntensityModel) -> Result<(f64, f64)> {
    let span = (model.object_mean - model.background_mean).abs();
    if span == 0.0 {
        return Err(Error::Param(
            "object and background intensities coincide; pass --alpha/--beta".into(),
        ));
    }
    Ok((
        span / 6.0,
        0.5 * (model.object_mean + model.background_mean),
    ))
}

/// Data, smoothness and prior terms for one object.
pub struct ObjectTerms {
    pub unary: UnaryTerm,
    pub pairwise: EdgeWeights,
    pub prior: Option<ShapePrior>,
    pub gvf: Option<GvfPrior>,
}

pub fn object_terms(input: &SegmentInput<'_>, params: &SegmentParams) -> Result<ObjectTerms> {
    let shape = input.image.shape();
    if input.preseg.shape().dims() != shape.dims() {
        return Err(Error::ShapeMismatch("image vs pre-segmentation".into()));
    }
    let needs_model =
        input.prob.is_none() || params.pairwise.alpha.is_none() || params.pairwise.beta.is_none();
    let model = if needs_model {
        Some(IntensityModel::fit(input.image, input.preseg, input.label)?)
    } else {
        None
    };
    let fitted;
    let prob = match input.prob {
        Some(p) => {
            if p.shape().dims() != shape.dims() {
                return Err(Error::ShapeMismatch("image vs probability map".into()));
            }
            p
        }
        None => {
            fitted = model.expect("model fitted").probability(input.image);
            &fitted
        }
    };
    let unary = log_likelihood_unary(prob, params.eps)?;
    let (alpha, beta) = match (params.pairwise.alpha, params.pairwise.beta) {
        (Some(a), Some(b)) => (a, b),
        (a, b) => {
            let (aa, bb) = auto_contrast(model.as_ref().expect("model fitted"))?;
            (a.unwrap_or(aa), b.unwrap_or(bb))
        }
    };
    let term = PairwiseTerm {
        lambda: params.pairwise.lambda,
        sigma: params.pairwise.sigma,
        alpha,
        beta,
        nbhd: params.pairwise.nbhd,
    };
    let pairwise = pairwise_weights(input.image, &term)?;
    let (prior, gvf) = match params.prior {
        None => (None, None),
        Some(penalty) => {
            let g = gvf::build_prior(input.preseg, input.label, &params.gvf)?;
            (Some(ShapePrior::new(g.flow.clone(), penalty)), Some(g))
        }
    };
    Ok(ObjectTerms {
        unary,
        pairwise,
        prior,
        gvf,
    })
}

/// End-to-end single-object segmentation.
pub fn segment(input: &SegmentInput<'_>, params: &SegmentParams) -> Result<Segmentation> {
    let terms = object_terms(input, params)?;
    let q = QuantizedTerms::new(
        &terms.unary,
        &terms.pairwise,
        terms.prior.as_ref(),
        params.scale,
    )?;
    let sol = solve_terms(&q)?;
    let prior_violations = terms
        .prior
        .as_ref()
        .map_or(0, |p| prior_violations(&sol.labels, &p.flow));
    Ok(Segmentation {
        labels: LabelVolume::from_mask(input.image.shape().clone(), &sol.labels)?,
        energy: sol.energy,
        objective: sol.objective,
        prior_violations,
        gvf: terms.gvf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gvf::CORE;

    fn shape(d: &[usize]) -> GridShape {
        GridShape::unit(d).unwrap()
    }

    #[test]
    fn sigmoid_examples() {
        let img = ScalarVolume::from_vec(shape(&[1, 4]), vec![5.0, 8.0, 1e6, -1e6]).unwrap();
        let s = sigmoid_transform(&img, 1.0, 5.0).unwrap();
        assert_eq!(s.data()[0], 0.5);
        let expected = 1.0 / (1.0 + (-3.0f64).exp());
        assert!((s.data()[1] - expected).abs() < 1e-12);
        assert!((expected - 0.95257).abs() < 1e-5);
        assert_eq!(s.data()[2], 1.0);
        assert_eq!(s.data()[3], 0.0);
        assert!(sigmoid_transform(&img, 0.0, 0.0).is_err());
    }

    #[test]
    fn boundary_weight_examples() {
        assert_eq!(boundary_weight(0.3, 0.3, 0.1, 2.5), 2.5);
        let w = boundary_weight(0.5, 0.4, 0.1, 1.0);
        assert!((w - (-1.0f64).exp()).abs() < 1e-12);
        assert!((w - 0.36788).abs() < 1e-5);
        assert_eq!(boundary_weight(0.0, 0.9, 0.1, 0.0), 0.0);
        assert!(boundary_weight(0.5, 0.3, 0.1, 1.0) < boundary_weight(0.5, 0.4, 0.1, 1.0));
        assert_eq!(
            boundary_weight(0.2, 0.5, 0.1, 1.0),
            boundary_weight(0.5, 0.2, 0.1, 1.0)
        );
    }

    #[test]
    fn log_likelihood_examples() {
        let prob = ScalarVolume::from_vec(shape(&[1, 3]), vec![0.5, 1.0, 0.0]).unwrap();
        let u = log_likelihood_unary(&prob, 1e-6).unwrap();
        assert!((u.d1.data()[0] - 2f64.ln()).abs() < 1e-12);
        assert_eq!(u.d1.data()[0], u.d0.data()[0]);
        assert_eq!(u.d1.data()[1], 0.0);
        assert!((u.d0.data()[1] - 13.815510557964274).abs() < 1e-9);
        assert_eq!(u.d1.data()[2], u.d0.data()[1]);
        assert_eq!(u.d0.data()[2], 0.0);
        let bad = ScalarVolume::from_vec(shape(&[1, 1]), vec![1.5]).unwrap();
        assert!(log_likelihood_unary(&bad, 1e-6).is_err());
    }

    fn unary(d1: &[f64], d0: &[f64], dims: &[usize]) -> UnaryTerm {
        UnaryTerm::new(
            Volume::from_vec(shape(dims), d1.to_vec()).unwrap(),
            Volume::from_vec(shape(dims), d0.to_vec()).unwrap(),
        )
        .unwrap()
    }

    fn right_flow() -> DiscreteFlow {
        // voxel 0 -> voxel 1 (core)
        let nb = Neighborhood::new(NeighborhoodKind::Full, 2);
        let right = (0..8).find(|&k| nb.offset(k) == vec![0, 1]).unwrap() as u8;
        DiscreteFlow::from_raw(shape(&[1, 2]), nb, vec![right, CORE])
            .unwrap()
            .0
    }

    #[test]
    fn two_voxel_graphs() {
        let u = unary(&[0.0, 0.0], &[5.0, 5.0], &[1, 2]);
        let w = EdgeWeights::zeros(u.shape(), NeighborhoodKind::Face);
        let sol = solve_terms(&QuantizedTerms::new(&u, &w, None, 1e4).unwrap()).unwrap();
        assert_eq!(sol.labels, vec![true, true]);

        // unary wants (1, 0), the infinite prior 0 -> 1 forbids it
        let u = unary(&[0.0, 3.0], &[5.0, 0.0], &[1, 2]);
        let prior = ShapePrior::new(right_flow(), PriorPenalty::Inf);
        let q = QuantizedTerms::new(&u, &w, Some(&prior), 1e4).unwrap();
        let brute = [[false, false], [true, false], [false, true], [true, true]]
            .iter()
            .filter_map(|f| q.energy(f).map(|e| (e, *f)))
            .min()
            .unwrap();
        assert_eq!(brute, (30000, [true, true]));
        let sol = solve_terms(&q).unwrap();
        assert_eq!(sol.labels, vec![true, true]);
        assert_eq!(sol.energy, 30000);

        let u = UnaryTerm::zeros(shape(&[1, 2]));
        let sol = solve_terms(&QuantizedTerms::new(&u, &w, None, 1e4).unwrap()).unwrap();
        assert_eq!(sol.objective, 0);
        assert_eq!(sol.labels, vec![false, false]);
    }

    #[test]
    fn energy_examples() {
        let u = unary(&[1.0, 2.0, 0.5], &[0.25, 0.5, 4.0], &[1, 3]);
        let w = EdgeWeights::from_fn(u.shape(), NeighborhoodKind::Face, |_, _| 0.75);
        let zero = LabelVolume::filled(shape(&[1, 3]), 0);
        assert_eq!(energy(&zero, &u, &w, None).unwrap(), Energy::Finite(4.75));
        let f = LabelVolume::from_vec(shape(&[1, 3]), vec![1, 0, 1]).unwrap();
        assert_eq!(
            energy(&f, &u, &w, None).unwrap(),
            Energy::Finite(1.0 + 0.5 + 0.5 + 1.5)
        );
    }

    #[test]
    fn finite_prior_penalty_counts_violations() {
        let u = unary(&[0.0, 3.0], &[5.0, 0.0], &[1, 2]);
        let w = EdgeWeights::zeros(u.shape(), NeighborhoodKind::Face);
        let f = LabelVolume::from_vec(shape(&[1, 2]), vec![1, 0]).unwrap();
        let inf = ShapePrior::new(right_flow(), PriorPenalty::Inf);
        assert_eq!(energy(&f, &u, &w, Some(&inf)).unwrap(), Energy::Infeasible);
        let fin = ShapePrior::new(right_flow(), PriorPenalty::Finite(1.0));
        assert_eq!(energy(&f, &u, &w, Some(&fin)).unwrap(), Energy::Finite(1.0));
        let sol = solve_terms(&QuantizedTerms::new(&u, &w, Some(&fin), 1e4).unwrap()).unwrap();
        assert_eq!(sol.labels, vec![true, false]);
        assert_eq!(sol.energy, 10000);
    }

    #[test]
    fn overflow_is_reported() {
        let u = unary(&[1e300], &[0.0], &[1, 1]);
        let w = EdgeWeights::zeros(u.shape(), NeighborhoodKind::Face);
        assert!(matches!(
            QuantizedTerms::new(&u, &w, None, 1e4),
            Err(Error::Overflow(_))
        ));
    }

    #[test]
    fn intensity_model_probability() {
        let img = ScalarVolume::from_vec(shape(&[1, 4]), vec![0.0, 0.1, 0.9, 1.0]).unwrap();
        let pre = LabelVolume::from_vec(shape(&[1, 4]), vec![0, 0, 1, 1]).unwrap();
        let m = IntensityModel::fit(&img, &pre, 1).unwrap();
        assert!((m.object_mean - 0.95).abs() < 1e-6);
        let p = m.probability(&img);
        assert!(p.data()[0] < 0.01 && p.data()[3] > 0.99);
        let (a, b) = auto_contrast(&m).unwrap();
        assert!((b - 0.5).abs() < 1e-6 && (a - 0.9 / 6.0).abs() < 1e-6);
    }

    #[test]
    fn parse_prior() {
        assert_eq!("inf".parse::<PriorPenalty>().unwrap(), PriorPenalty::Inf);
        assert_eq!(
            "2.5".parse::<PriorPenalty>().unwrap(),
            PriorPenalty::Finite(2.5)
        );
        assert!("-1".parse::<PriorPenalty>().is_err());
    }

    use proptest::prelude::*;

    fn random_flow(dims: &[usize], raw: &[u8]) -> DiscreteFlow {
        let sh = shape(dims);
        let nb = Neighborhood::for_shape(NeighborhoodKind::Full, &sh);
        let k = nb.len() as u8;
        let next = raw
            .iter()
            .map(|&r| if r % 5 == 0 { CORE } else { r % k })
            .collect();
        DiscreteFlow::from_raw(sh, nb, next).unwrap().0
    }

    fn random_terms(
        dims: &[usize],
        d1: &[f64],
        d0: &[f64],
        w: &[f64],
        kind: NeighborhoodKind,
    ) -> (UnaryTerm, EdgeWeights) {
        let u = unary(d1, d0, dims);
        let n = u.shape().len();
        let ew = EdgeWeights::from_fn(u.shape(), kind, |p, q| {
            w[(p * 7 + q * 3) % w.len()] * (n as f64).recip() * 4.0
        });
        (u, ew)
    }

    fn brute_min(q: &QuantizedTerms) -> i64 {
        let n = q.len();
        (0u32..1 << n)
            .filter_map(|m| {
                let f: Vec<bool> = (0..n).map(|i| m >> i & 1 == 1).collect();
                q.energy(&f)
            })
            .min()
            .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn solver_matches_brute_force_3x3(
            d1 in prop::collection::vec(0.0f64..3.0, 9),
            d0 in prop::collection::vec(0.0f64..3.0, 9),
            w in prop::collection::vec(0.0f64..2.0, 5),
            raw in prop::collection::vec(any::<u8>(), 9),
            full in any::<bool>(),
            penalty in prop::option::of(0.0f64..2.0),
        ) {
            let kind = if full { NeighborhoodKind::Full } else { NeighborhoodKind::Face };
            let (u, ew) = random_terms(&[3, 3], &d1, &d0, &w, kind);
            let pen = penalty.map_or(PriorPenalty::Inf, PriorPenalty::Finite);
            let prior = ShapePrior::new(random_flow(&[3, 3], &raw), pen);
            let q = QuantizedTerms::new(&u, &ew, Some(&prior), 1e4).unwrap();
            let sol = solve_terms(&q).unwrap();
            prop_assert_eq!(sol.energy, brute_min(&q));
        }

        #[test]
        fn solver_matches_brute_force_2x2x2(
            d1 in prop::collection::vec(0.0f64..3.0, 8),
            d0 in prop::collection::vec(0.0f64..3.0, 8),
            w in prop::collection::vec(0.0f64..2.0, 5),
            raw in prop::collection::vec(any::<u8>(), 8),
        ) {
            let (u, ew) = random_terms(&[2, 2, 2], &d1, &d0, &w, NeighborhoodKind::Face);
            let prior = ShapePrior::new(random_flow(&[2, 2, 2], &raw), PriorPenalty::Inf);
            let q = QuantizedTerms::new(&u, &ew, Some(&prior), 1e4).unwrap();
            let sol = solve_terms(&q).unwrap();
            prop_assert_eq!(sol.energy, brute_min(&q));
            prop_assert_eq!(path_violations(&sol.labels, &prior.flow), 0);
        }

        #[test]
        fn edge_constraints_imply_path_constraints(
            labels in prop::collection::vec(any::<bool>(), 16),
            raw in prop::collection::vec(any::<u8>(), 16),
        ) {
            let flow = random_flow(&[4, 4], &raw);
            if prior_violations(&labels, &flow) == 0 {
                prop_assert_eq!(path_violations(&labels, &flow), 0);
            }
        }

        #[test]
        fn scaling_all_terms_keeps_the_optimum(
            d1 in prop::collection::vec(0.0f64..3.0, 9),
            d0 in prop::collection::vec(0.0f64..3.0, 9),
            w in prop::collection::vec(0.0f64..2.0, 5),
            raw in prop::collection::vec(any::<u8>(), 9),
            k in 0.5f64..4.0,
        ) {
            let (u, ew) = random_terms(&[3, 3], &d1, &d0, &w, NeighborhoodKind::Face);
            let prior = ShapePrior::new(random_flow(&[3, 3], &raw), PriorPenalty::Inf);
            let q = QuantizedTerms::new(&u, &ew, Some(&prior), 1e4).unwrap();
            let qs = QuantizedTerms::new(&u.scaled(k), &ew.scaled(k), Some(&prior), 1e4).unwrap();
            let a = solve_terms(&q).unwrap();
            let b = solve_terms(&qs).unwrap();
            // rounding may break exact ties, so compare energies of both optima
            let ea = energy(&LabelVolume::from_mask(shape(&[3, 3]), &a.labels).unwrap(), &u, &ew, Some(&prior)).unwrap().value().unwrap();
            let eb = energy(&LabelVolume::from_mask(shape(&[3, 3]), &b.labels).unwrap(), &u, &ew, Some(&prior)).unwrap().value().unwrap();
            prop_assert!((ea - eb).abs() < 20.0 / 1e4);
        }

        #[test]
        fn violations_shrink_as_penalty_grows(
            d1 in prop::collection::vec(0.0f64..3.0, 16),
            d0 in prop::collection::vec(0.0f64..3.0, 16),
            raw in prop::collection::vec(any::<u8>(), 16),
        ) {
            let u = unary(&d1, &d0, &[4, 4]);
            let ew = EdgeWeights::from_fn(u.shape(), NeighborhoodKind::Face, |_, _| 0.1);
            let flow = Arc::new(random_flow(&[4, 4], &raw));
            let mut last = usize::MAX;
            for pen in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0] {
                let prior = ShapePrior::shared(flow.clone(), PriorPenalty::Finite(pen));
                let q = QuantizedTerms::new(&u, &ew, Some(&prior), 1e4).unwrap();
                let v = prior_violations(&solve_terms(&q).unwrap().labels, &flow);
                prop_assert!(v <= last);
                last = v;
            }
        }
    }
}
