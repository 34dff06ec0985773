//! Gradient vector flow of a pre-segmentation, object core extraction,
//! neighbor discretization of the flow and GVF path tracing.
//!
//! The field `h` minimizes
//!
//! ```text
//! E(h) = sum_p |g_p|^2 |h_p - g_p|^2 + mu * sum_{p~q} |h_p - h_q|^2
//! ```
//!
//! where `g` is the gradient of the binary pre-segmentation and `p~q` runs
//! over face-adjacent voxel pairs (forward differences). It is minimized by
//! explicit gradient steps on the Euler-Lagrange equations,
//! `h <- h + dt * (mu * lap(h) - |g|^2 (h - g))`, with a Neumann boundary.
//! For `dt` within [`stability_bound`] each step is a descent step, so the
//! recorded energies never increase.

use crate::error::{Error, Result};
use crate::par;
use crate::volume::{GridShape, LabelVolume, Neighborhood, NeighborhoodKind, Volume};

/// Marker stored in [`DiscreteFlow`] for core voxels.
pub const CORE: u8 = 255;

#[derive(Clone, Debug, PartialEq)]
pub struct GvfParams {
    /// Smoothness weight `mu >= 0`.
    pub mu: f64,
    /// Time step; `None` selects 90% of the stability bound.
    pub dt: Option<f64>,
    pub max_iters: usize,
    /// Stop once the largest per-voxel update magnitude drops below this.
    pub tol: f64,
    /// Core threshold as a fraction of the largest field magnitude.
    pub core_threshold: f64,
    /// Gaussian pre-smoothing of the indicator in voxels (0 disables).
    pub presmooth_sigma: f64,
    /// Start large grids from the solution at half resolution.
    pub multires: bool,
}

impl Default for GvfParams {
    fn default() -> Self {
        GvfParams {
            mu: 0.2,
            dt: None,
            max_iters: 2000,
            tol: 1e-4,
            core_threshold: 0.05,
            presmooth_sigma: 0.0,
            multires: true,
        }
    }
}

impl GvfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::Param(format!("mu must be >= 0, got {}", self.mu)));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Param(format!("tol must be >= 0, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::Param("max_iters must be positive".into()));
        }
        if !(self.core_threshold > 0.0) {
            return Err(Error::Param(format!(
                "core threshold must be > 0, got {}",
                self.core_threshold
            )));
        }
        if !(self.presmooth_sigma >= 0.0) {
            return Err(Error::Param("presmooth sigma must be >= 0".into()));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::Param(format!("dt must be > 0, got {dt}")));
            }
        }
        Ok(())
    }
}

/// Largest stable explicit step: `1 / (4 * ndim * mu + max |g|^2)`.
pub fn stability_bound(ndim: usize, mu: f64, max_grad2: f64) -> f64 {
    let denom = 4.0 * ndim as f64 * mu + max_grad2;
    if denom > 0.0 {
        1.0 / denom
    } else {
        f64::INFINITY
    }
}

/// One vector per voxel; components follow the axis order of the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    shape: GridShape,
    // padded to three components like the grid coordinates
    vectors: Vec<[f64; 3]>,
}

impl VectorField {
    pub fn zeros(shape: GridShape) -> Self {
        let vectors = vec![[0.0; 3]; shape.len()];
        VectorField { shape, vectors }
    }

    /// Builds a field from per-voxel component lists (`ndim` values each).
    pub fn from_components(shape: GridShape, vectors: &[Vec<f64>]) -> Result<Self> {
        if vectors.len() != shape.len() {
            return Err(Error::PayloadSize {
                expected: shape.len(),
                found: vectors.len(),
            });
        }
        let nd = shape.ndim();
        let mut out = Vec::with_capacity(vectors.len());
        for v in vectors {
            if v.len() != nd || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Param(format!(
                    "vector {v:?} must have {nd} finite components"
                )));
            }
            let mut p = [0.0; 3];
            p[3 - nd..].copy_from_slice(v);
            out.push(p);
        }
        Ok(VectorField {
            shape,
            vectors: out,
        })
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    /// Components of the vector at linear index `p`.
    pub fn get(&self, p: usize) -> &[f64] {
        &self.vectors[p][3 - self.shape.ndim()..]
    }

    pub(crate) fn raw(&self) -> &[[f64; 3]] {
        &self.vectors
    }

    pub fn magnitude(&self, p: usize) -> f64 {
        norm2(&self.vectors[p]).sqrt()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.vectors.iter().map(norm2).fold(0.0, f64::max).sqrt()
    }

    /// One scalar volume per axis component (for writing to disk).
    pub fn component(&self, axis: usize) -> Volume<f32> {
        let a = 3 - self.shape.ndim() + axis;
        Volume::from_vec(
            self.shape.clone(),
            self.vectors.iter().map(|v| v[a] as f32).collect(),
        )
        .expect("field length matches shape")
    }
}

#[inline]
fn norm2(v: &[f64; 3]) -> f64 {
    v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
}

/// Central-difference gradient of a scalar field in voxel units; one-sided
/// differences on the grid faces, zero along unit-length axes.
fn gradient(shape: &GridShape, f: &[f64]) -> Vec<[f64; 3]> {
    let dims = shape.dims3();
    par::map_range(shape.len(), |p| {
        let mut g = [0.0; 3];
        for a in 0..3 {
            if dims[a] < 2 {
                continue;
            }
            let mut o = [0isize; 3];
            o[a] = 1;
            let fwd = shape.offset3(p, o);
            o[a] = -1;
            let bwd = shape.offset3(p, o);
            g[a] = match (bwd, fwd) {
                (Some(b), Some(n)) => (f[n] - f[b]) / 2.0,
                (None, Some(n)) => f[n] - f[p],
                (Some(b), None) => f[p] - f[b],
                (None, None) => 0.0,
            };
        }
        g
    })
}

fn gaussian_smooth(shape: &GridShape, f: &[f64], sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let mut cur = f.to_vec();
    let dims = shape.dims3();
    for a in 0..3 {
        if dims[a] < 2 {
            continue;
        }
        let src = cur;
        cur = par::map_range(shape.len(), |p| {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (i, k) in (-radius..=radius).enumerate() {
                let mut o = [0isize; 3];
                o[a] = k;
                if let Some(q) = shape.offset3(p, o) {
                    acc += kernel[i] * src[q];
                    wsum += kernel[i];
                }
            }
            acc / wsum
        });
    }
    cur
}

/// Gradient of the indicator function of `object_label`.
pub fn binary_gradient(preseg: &LabelVolume, object_label: u8) -> Result<VectorField> {
    binary_gradient_smoothed(preseg, object_label, 0.0)
}

/// [`binary_gradient`] after optional Gaussian smoothing of the indicator.
pub fn binary_gradient_smoothed(
    preseg: &LabelVolume,
    object_label: u8,
    sigma: f64,
) -> Result<VectorField> {
    if !preseg.contains_label(object_label) {
        return Err(Error::EmptySet(object_label));
    }
    let shape = preseg.shape();
    let mut ind: Vec<f64> = preseg
        .data()
        .iter()
        .map(|&l| if l == object_label { 1.0 } else { 0.0 })
        .collect();
    if sigma > 0.0 {
        ind = gaussian_smooth(shape, &ind, sigma);
    }
    Ok(VectorField {
        shape: shape.clone(),
        vectors: gradient(shape, &ind),
    })
}

/// Diagnostics of a [`compute_gvf`] run.
#[derive(Clone, Debug)]
pub struct GvfReport {
    pub iterations: usize,
    pub converged: bool,
    pub dt: f64,
    /// Discrete energy of every iterate, starting with the initial field.
    pub energies: Vec<f64>,
    /// Largest per-voxel update magnitude of the last step.
    pub last_update: f64,
}

impl GvfReport {
    /// Whether the energy sequence never increased (up to rounding).
    pub fn is_monotone(&self) -> bool {
        self.energies
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1e-300))
    }
}

/// Grids whose every real axis is at least this long are first solved at
/// half resolution when [`GvfParams::multires`] is set.
const MULTIRES_MIN: usize = 32;

/// Diffuses `grad` into the gradient vector flow.
pub fn compute_gvf(grad: &VectorField, params: &GvfParams) -> Result<(VectorField, GvfReport)> {
    params.validate()?;
    let shape = grad.shape().clone();
    let g = grad.raw();
    if g.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Param("gradient field has non-finite values".into()));
    }
    let w: Vec<f64> = g.iter().map(norm2).collect();
    let (h, report) = solve(&shape, g, &w, params, params.dt)?;
    debug_assert!(report.is_monotone(), "GVF energy increased");
    Ok((VectorField { shape, vectors: h }, report))
}

/// Minimizes the energy with data weights `w`, optionally starting from the
/// solution of the half-resolution problem.
fn solve(
    shape: &GridShape,
    g: &[[f64; 3]],
    w: &[f64],
    params: &GvfParams,
    dt: Option<f64>,
) -> Result<(Vec<[f64; 3]>, GvfReport)> {
    let max_w = w.iter().copied().fold(0.0, f64::max);
    let bound = stability_bound(shape.ndim(), params.mu, max_w);
    let dt = match dt {
        Some(dt) if dt > bound => {
            return Err(Error::Param(format!(
                "dt = {dt} exceeds the stability bound {bound}"
            )))
        }
        Some(dt) => dt,
        None if bound.is_finite() => 0.9 * bound,
        None => 1.0,
    };

    let dims = shape.dims3();
    let coarse = params.multires
        && params.mu > 0.0
        && (3 - shape.ndim()..3).all(|a| dims[a] >= MULTIRES_MIN);
    let init = if coarse {
        let (cshape, cg, cw) = restrict(shape, g, w);
        // the Laplacian in coarse voxel units is four times larger
        let cparams = GvfParams {
            mu: params.mu / 4.0,
            ..params.clone()
        };
        let (ch, _) = solve(&cshape, &cg, &cw, &cparams, None)?;
        prolong(&cshape, &ch, shape)
    } else {
        g.to_vec()
    };
    let (h, report) = iterate(shape, g, w, init, params, dt);
    log::debug!(
        "gvf {:?}: {} iterations, converged {}",
        shape.dims(),
        report.iterations,
        report.converged
    );
    Ok((h, report))
}

/// Half-resolution problem: block means of the data weights and
/// weight-averaged target vectors over 2-voxel blocks along every real axis.
fn restrict(shape: &GridShape, g: &[[f64; 3]], w: &[f64]) -> (GridShape, Vec<[f64; 3]>, Vec<f64>) {
    let dims = shape.dims3();
    let nd = shape.ndim();
    let cd: Vec<usize> = (3 - nd..3).map(|a| dims[a].div_ceil(2)).collect();
    let sp: Vec<f64> = shape.spacing().iter().map(|s| 2.0 * s).collect();
    let cshape = GridShape::new(&cd, &sp).expect("coarse grid is valid");
    let mut wg = vec![[0.0; 3]; cshape.len()];
    let mut ws = vec![0.0; cshape.len()];
    let mut count = vec![0u32; cshape.len()];
    for p in 0..shape.len() {
        let c = shape.coord3(p);
        let q = cshape.index3([c[0] / 2, c[1] / 2, c[2] / 2]);
        for j in 0..3 {
            wg[q][j] += w[p] * g[p][j];
        }
        ws[q] += w[p];
        count[q] += 1;
    }
    for q in 0..cshape.len() {
        if ws[q] > 0.0 {
            for j in 0..3 {
                wg[q][j] /= ws[q];
            }
        }
        ws[q] /= count[q] as f64;
    }
    (cshape, wg, ws)
}

/// Multilinear interpolation of a coarse field at the fine voxel centers.
fn prolong(cshape: &GridShape, h: &[[f64; 3]], shape: &GridShape) -> Vec<[f64; 3]> {
    let cdims = cshape.dims3();
    par::map_range(shape.len(), |p| {
        let c = shape.coord3(p);
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut t = [0.0; 3];
        for a in 0..3 {
            let x = (c[a] as f64 * 0.5 - 0.25).clamp(0.0, (cdims[a] - 1) as f64);
            lo[a] = x.floor() as usize;
            hi[a] = (lo[a] + 1).min(cdims[a] - 1);
            t[a] = x - lo[a] as f64;
        }
        let mut v = [0.0; 3];
        for corner in 0..8 {
            let mut wgt = 1.0;
            let mut q = [0usize; 3];
            for a in 0..3 {
                if corner >> a & 1 == 1 {
                    wgt *= t[a];
                    q[a] = hi[a];
                } else {
                    wgt *= 1.0 - t[a];
                    q[a] = lo[a];
                }
            }
            if wgt != 0.0 {
                let hq = h[cshape.index3(q)];
                for j in 0..3 {
                    v[j] += wgt * hq[j];
                }
            }
        }
        v
    })
}

/// Explicit Euler steps from `init` until the largest update drops below
/// `tol`. The energy of each iterate is accumulated in the same sweep that
/// computes the next one.
fn iterate(
    shape: &GridShape,
    g: &[[f64; 3]],
    w: &[f64],
    init: Vec<[f64; 3]>,
    params: &GvfParams,
    dt: f64,
) -> (Vec<[f64; 3]>, GvfReport) {
    let mu = params.mu;
    let dims = shape.dims3();
    let row = dims[2];
    let plane = dims[1] * dims[2];
    let chunk = row * (4096 / row).max(1);
    let mut h = init;
    let mut next = h.clone();
    let mut energies = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut last_update = 0.0;

    while iterations < params.max_iters {
        let cur = &h;
        let parts = par::map_chunks_mut(&mut next, chunk, |ci, out| {
            let mut energy = 0.0;
            let mut max_upd2: f64 = 0.0;
            for (r, out_row) in out.chunks_mut(row).enumerate() {
                let base = ci * chunk + r * row;
                let ri = base / row;
                let (z, y) = (ri / dims[1], ri % dims[1]);
                let at = |b: usize| &cur[b..b + row];
                let rows = Rows {
                    c: at(base),
                    yp: (y + 1 < dims[1]).then(|| at(base + row)),
                    ym: (y > 0).then(|| at(base - row)),
                    zp: (z + 1 < dims[0]).then(|| at(base + plane)),
                    zm: (z > 0).then(|| at(base - plane)),
                };
                let (e, m) = sweep_row(
                    &rows,
                    &g[base..base + row],
                    &w[base..base + row],
                    out_row,
                    mu,
                    dt,
                );
                energy += e;
                max_upd2 = max_upd2.max(m);
            }
            (energy, max_upd2)
        });
        let energy: f64 = parts.iter().map(|r| r.0).sum();
        let max_upd = parts.iter().map(|r| r.1).fold(0.0, f64::max).sqrt();
        energies.push(energy);
        std::mem::swap(&mut h, &mut next);
        iterations += 1;
        last_update = max_upd;
        if max_upd < params.tol {
            converged = true;
            break;
        }
    }
    energies.push(gvf_energy_raw(shape, &h, g, mu));
    let report = GvfReport {
        iterations,
        converged,
        dt,
        energies,
        last_update,
    };
    (h, report)
}

/// The current row and its existing neighbor rows.
struct Rows<'a> {
    c: &'a [[f64; 3]],
    yp: Option<&'a [[f64; 3]]>,
    ym: Option<&'a [[f64; 3]]>,
    zp: Option<&'a [[f64; 3]]>,
    zm: Option<&'a [[f64; 3]]>,
}

/// One Euler step over a row; returns the row's share of the energy of the
/// current iterate and the largest squared update.
#[inline]
fn sweep_row(
    rows: &Rows<'_>,
    g: &[[f64; 3]],
    w: &[f64],
    out: &mut [[f64; 3]],
    mu: f64,
    dt: f64,
) -> (f64, f64) {
    let n = rows.c.len();
    let (c, g, w, out) = (&rows.c[..n], &g[..n], &w[..n], &mut out[..n]);
    let fwd = [rows.yp, rows.zp].map(|r| r.map(|r| &r[..n]));
    let bwd = [rows.ym, rows.zm].map(|r| r.map(|r| &r[..n]));
    let mut energy = 0.0;
    let mut max_upd2: f64 = 0.0;
    for x in 0..n {
        let hp = c[x];
        let mut acc = [0.0; 3];
        let mut k = 0.0;
        let mut smooth = 0.0;
        let mut add = |q: [f64; 3], forward: bool| {
            for j in 0..3 {
                acc[j] += q[j];
                if forward {
                    let d = q[j] - hp[j];
                    smooth += d * d;
                }
            }
            k += 1.0;
        };
        if x + 1 < n {
            add(c[x + 1], true);
        }
        if x > 0 {
            add(c[x - 1], false);
        }
        for r in fwd.iter().flatten() {
            add(r[x], true);
        }
        for r in bwd.iter().flatten() {
            add(r[x], false);
        }
        let (wp, gp) = (w[x], g[x]);
        let mut fid = 0.0;
        let mut upd2 = 0.0;
        for j in 0..3 {
            let diff = hp[j] - gp[j];
            fid += diff * diff;
            let u = dt * (mu * (acc[j] - k * hp[j]) - wp * diff);
            upd2 += u * u;
            out[x][j] = hp[j] + u;
        }
        energy += wp * fid + mu * smooth;
        max_upd2 = max_upd2.max(upd2);
    }
    (energy, max_upd2)
}

fn gvf_energy_raw(shape: &GridShape, h: &[[f64; 3]], g: &[[f64; 3]], mu: f64) -> f64 {
    let dims = shape.dims3();
    let strides = [dims[1] * dims[2], dims[2], 1];
    let terms = par::map_range(shape.len(), |p| {
        let c = shape.coord3(p);
        let mut e = 0.0;
        let w = norm2(&g[p]);
        for j in 0..3 {
            let d = h[p][j] - g[p][j];
            e += w * d * d;
        }
        for a in 0..3 {
            if c[a] + 1 < dims[a] {
                let q = p + strides[a];
                for j in 0..3 {
                    let d = h[q][j] - h[p][j];
                    e += mu * d * d;
                }
            }
        }
        e
    });
    terms.iter().sum()
}

/// Discrete GVF energy of `h` for input gradient `grad`.
pub fn gvf_energy(h: &VectorField, grad: &VectorField, mu: f64) -> f64 {
    gvf_energy_raw(h.shape(), h.raw(), grad.raw(), mu)
}

/// Object core: pre-segmentation voxels whose field magnitude is below
/// `theta` times the largest magnitude. Falls back to the minimum-magnitude
/// voxels of the pre-segmentation when the threshold selects nothing.
/// Returns a 0/1 label volume.
pub fn extract_core(
    h: &VectorField,
    preseg: &LabelVolume,
    object_label: u8,
    theta: f64,
) -> LabelVolume {
    let inside = preseg.mask(object_label);
    let mags: Vec<f64> = (0..h.shape().len()).map(|p| h.magnitude(p)).collect();
    let max = mags.iter().copied().fold(0.0, f64::max);
    let limit = theta * max;
    let mut core: Vec<bool> = inside
        .iter()
        .zip(&mags)
        .map(|(&i, &m)| i && (theta >= 1.0 || m < limit))
        .collect();
    if !core.iter().any(|&c| c) {
        let min = inside
            .iter()
            .zip(&mags)
            .filter(|(&i, _)| i)
            .map(|(_, &m)| m)
            .fold(f64::INFINITY, f64::min);
        for (c, (&i, &m)) in core.iter_mut().zip(inside.iter().zip(&mags)) {
            *c = i && m == min;
        }
    }
    LabelVolume::from_mask(preseg.shape().clone(), &core).expect("shape preserved")
}

/// Per-voxel pointer to a neighbor (index into the neighborhood) or [`CORE`].
/// Following the pointers from any voxel reaches a core voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteFlow {
    shape: GridShape,
    nbhd: Neighborhood,
    next: Vec<u8>,
}

impl DiscreteFlow {
    /// Wraps raw pointers, repairing cycles and domain exits by promoting the
    /// offending voxels to core. Returns the flow and the promotion count.
    pub fn from_raw(shape: GridShape, nbhd: Neighborhood, next: Vec<u8>) -> Result<(Self, usize)> {
        if next.len() != shape.len() {
            return Err(Error::PayloadSize {
                expected: shape.len(),
                found: next.len(),
            });
        }
        if nbhd.ndim() != shape.ndim() {
            return Err(Error::ShapeMismatch("neighborhood dimension".into()));
        }
        if let Some(&bad) = next
            .iter()
            .find(|&&n| n != CORE && n as usize >= nbhd.len())
        {
            return Err(Error::Param(format!("flow pointer {bad} out of range")));
        }
        let mut flow = DiscreteFlow { shape, nbhd, next };
        let promoted = flow.repair();
        Ok((flow, promoted))
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn neighborhood(&self) -> &Neighborhood {
        &self.nbhd
    }

    /// Raw pointers: neighbor index or [`CORE`].
    pub fn pointers(&self) -> &[u8] {
        &self.next
    }

    pub fn is_core(&self, p: usize) -> bool {
        self.next[p] == CORE
    }

    pub fn core_count(&self) -> usize {
        self.next.iter().filter(|&&n| n == CORE).count()
    }

    /// Linear index of the voxel `p` points at, `None` for core voxels.
    #[inline]
    pub fn next(&self, p: usize) -> Option<usize> {
        match self.next[p] {
            CORE => None,
            k => self.shape.offset3(p, self.nbhd.offsets3()[k as usize]),
        }
    }

    /// All flow edges `p -> next(p)`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.next.len()).filter_map(move |p| self.next(p).map(|q| (p, q)))
    }

    /// Core mask as a 0/1 label volume.
    pub fn core_mask(&self) -> LabelVolume {
        let m: Vec<bool> = self.next.iter().map(|&n| n == CORE).collect();
        LabelVolume::from_mask(self.shape.clone(), &m).expect("shape preserved")
    }

    /// Pointers as a label volume (neighbor index, 255 for core).
    pub fn to_label_volume(&self) -> LabelVolume {
        LabelVolume::from_vec(self.shape.clone(), self.next.clone()).expect("shape preserved")
    }

    /// Breaks cycles with a three-colour walk. A voxel whose pointer leaves
    /// the grid or closes a cycle becomes core; the rest of its walk keeps
    /// its pointers.
    fn repair(&mut self) -> usize {
        const NEW: u8 = 0;
        const ACTIVE: u8 = 1;
        const DONE: u8 = 2;
        let n = self.next.len();
        let mut state = vec![NEW; n];
        let mut walk = Vec::new();
        let mut promoted = 0;
        for start in 0..n {
            if state[start] != NEW {
                continue;
            }
            walk.clear();
            let mut cur = start;
            loop {
                if state[cur] == DONE || self.next[cur] == CORE {
                    break;
                }
                if state[cur] == ACTIVE {
                    let last = *walk.last().expect("cycle implies a walk");
                    self.next[last] = CORE;
                    promoted += 1;
                    break;
                }
                state[cur] = ACTIVE;
                walk.push(cur);
                match self.next(cur) {
                    Some(q) => cur = q,
                    None => {
                        self.next[cur] = CORE;
                        promoted += 1;
                        break;
                    }
                }
            }
            for &v in &walk {
                state[v] = DONE;
            }
            state[start] = DONE;
        }
        promoted
    }

    /// Promotes to core every voxel of `label` whose pointer leaves the
    /// label, so that walks started inside the pre-segmentation never leave
    /// it. Returns the number of promoted voxels.
    pub fn confine_to(&mut self, preseg: &LabelVolume, label: u8) -> usize {
        let mut promoted = 0;
        for p in 0..self.next.len() {
            if preseg.data()[p] != label {
                continue;
            }
            if let Some(q) = self.next(p) {
                if preseg.data()[q] != label {
                    self.next[p] = CORE;
                    promoted += 1;
                }
            }
        }
        promoted
    }
}

/// Points every non-core voxel at the in-bounds neighbor best aligned with
/// its field vector (ties go to the earlier offset), then repairs cycles.
pub fn discretize(h: &VectorField, core: &LabelVolume, nbhd: &Neighborhood) -> DiscreteFlow {
    let shape = h.shape().clone();
    assert_eq!(core.shape().dims(), shape.dims(), "core shape mismatch");
    let offsets = nbhd.offsets3();
    let unit: Vec<[f64; 3]> = offsets
        .iter()
        .map(|o| {
            let len = ((o[0] * o[0] + o[1] * o[1] + o[2] * o[2]) as f64).sqrt();
            [o[0] as f64 / len, o[1] as f64 / len, o[2] as f64 / len]
        })
        .collect();
    let next = par::map_range(shape.len(), |p| {
        if core.data()[p] != 0 {
            return CORE;
        }
        let v = h.raw()[p];
        let len = norm2(&v).sqrt();
        let mut best: Option<(u8, f64)> = None;
        for (k, o) in offsets.iter().enumerate() {
            if shape.offset3(p, *o).is_none() {
                continue;
            }
            let cos = if len > 0.0 {
                (v[0] * unit[k][0] + v[1] * unit[k][1] + v[2] * unit[k][2]) / len
            } else {
                0.0
            };
            if best.is_none_or(|(_, b)| cos > b) {
                best = Some((k as u8, cos));
            }
        }
        best.map_or(CORE, |(k, _)| k)
    });
    let (flow, _) = DiscreteFlow::from_raw(shape, nbhd.clone(), next)
        .expect("pointers come from the neighborhood");
    flow
}

/// The GVF path of `p`: the voxels visited by following the flow until a
/// core voxel, excluding `p` itself. Empty for core voxels.
pub fn trace_path(flow: &DiscreteFlow, p: usize) -> Vec<usize> {
    let mut path = Vec::new();
    let mut cur = p;
    while let Some(q) = flow.next(cur) {
        path.push(q);
        cur = q;
        if path.len() > flow.shape.len() {
            unreachable!("flow invariant violated: cycle through voxel {q}");
        }
    }
    path
}

/// Everything derived from one pre-segmentation.
#[derive(Clone, Debug)]
pub struct GvfPrior {
    pub field: VectorField,
    pub core: LabelVolume,
    pub flow: DiscreteFlow,
    pub report: GvfReport,
    /// Pre-segmentation voxels promoted to core because their pointer left
    /// the object.
    pub confined: usize,
}

/// Full pipeline: gradient, GVF, core, discretization over the full
/// neighborhood, cycle repair and confinement to the pre-segmentation.
pub fn build_prior(preseg: &LabelVolume, object_label: u8, params: &GvfParams) -> Result<GvfPrior> {
    params.validate()?;
    let grad = binary_gradient_smoothed(preseg, object_label, params.presmooth_sigma)?;
    let (field, report) = compute_gvf(&grad, params)?;
    let core = extract_core(&field, preseg, object_label, params.core_threshold);
    let nbhd = Neighborhood::for_shape(NeighborhoodKind::Full, preseg.shape());
    let mut flow = discretize(&field, &core, &nbhd);
    let confined = flow.confine_to(preseg, object_label);
    log::debug!(
        "gvf: {} iterations (converged: {}), core {} voxels, {} confined",
        report.iterations,
        report.converged,
        flow.core_count(),
        confined
    );
    Ok(GvfPrior {
        field,
        core,
        flow,
        report,
        confined,
    })
}
