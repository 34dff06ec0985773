//! Synthetic phantoms with analytic ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::volume::{GridShape, LabelVolume, ScalarVolume, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhantomKind {
    /// Disc in 2D, sphere in 3D. Label 1.
    Disc,
    /// Thick ring with a wedge-shaped opening. Label 1.
    CShape,
    /// Inner disc (label 1) surrounded by a ring (label 2). Object 2 is the
    /// union of both.
    NestedRings,
    /// Two discs side by side, labels 1 and 2.
    TwoBlobs,
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disc" | "sphere" => Ok(PhantomKind::Disc),
            "c-shape" | "cshape" => Ok(PhantomKind::CShape),
            "nested-rings" => Ok(PhantomKind::NestedRings),
            "two-blobs" => Ok(PhantomKind::TwoBlobs),
            _ => Err(Error::Param(format!(
                "unknown phantom kind '{s}' (disc, c-shape, nested-rings, two-blobs)"
            ))),
        }
    }
}

/// Phantom geometry (in voxels) and corruption settings.
///
/// `radius` is the outer radius, `inner_radius` the hole of the C-shape, the
/// inner disc of the nested rings or ignored otherwise. `gap` is the opening
/// half-angle of the C-shape in degrees or the spacing between the two blobs.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub dims: Vec<usize>,
    pub spacing: Vec<f64>,
    /// Defaults to the grid center.
    pub center: Option<Vec<f64>>,
    pub radius: f64,
    pub inner_radius: f64,
    pub gap: f64,
    /// Intensity of the brightest object; background is 0.
    pub contrast: f64,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
    /// Fraction of object voxels reset to background intensity by holes.
    pub hole_rate: f64,
    pub hole_radius: f64,
}

impl PhantomSpec {
    /// Default geometry scaled to the smallest grid dimension.
    pub fn new(kind: PhantomKind, dims: &[usize]) -> Self {
        let m = dims.iter().copied().min().unwrap_or(0) as f64;
        let (radius, inner_radius, gap) = match kind {
            PhantomKind::Disc => (0.3 * m, 0.0, 0.0),
            PhantomKind::CShape => (0.34 * m, 0.16 * m, 40.0),
            PhantomKind::NestedRings => (0.25 * m, 0.19 * m, 0.0),
            PhantomKind::TwoBlobs => (0.18 * m, 0.0, 0.08 * m),
        };
        PhantomSpec {
            kind,
            dims: dims.to_vec(),
            spacing: vec![1.0; dims.len()],
            center: None,
            radius,
            inner_radius,
            gap,
            contrast: 1.0,
            noise: 0.0,
            hole_rate: 0.0,
            hole_radius: 1.5,
        }
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_holes(mut self, rate: f64) -> Self {
        self.hole_rate = rate;
        self
    }

    pub fn shape(&self) -> Result<GridShape> {
        GridShape::new(&self.dims, &self.spacing)
    }

    fn validate(&self, shape: &GridShape) -> Result<()> {
        let bad = |m: &str| Err(Error::Param(format!("phantom: {m}")));
        if !(self.noise >= 0.0) || !(self.contrast > 0.0) {
            return bad("noise must be >= 0 and contrast > 0");
        }
        if !(0.0..1.0).contains(&self.hole_rate) || !(self.hole_radius >= 0.0) {
            return bad("hole rate must be in [0, 1) and hole radius >= 0");
        }
        if !(self.radius > 0.0) || !(self.inner_radius >= 0.0) || !(self.gap >= 0.0) {
            return bad("radii must be positive");
        }
        let needs_inner = matches!(self.kind, PhantomKind::CShape | PhantomKind::NestedRings);
        if needs_inner && !(self.inner_radius > 0.0 && self.inner_radius < self.radius) {
            return bad("inner radius must lie in (0, radius)");
        }
        if let Some(c) = &self.center {
            if c.len() != shape.ndim() {
                return bad("center needs one coordinate per axis");
            }
        }
        // every object point must fall inside the grid
        let center = self.center_or_default(shape);
        let extent = |axis_from_end: usize| -> f64 {
            match self.kind {
                PhantomKind::TwoBlobs if axis_from_end == 0 => 2.0 * self.radius + 0.5 * self.gap,
                PhantomKind::TwoBlobs => self.radius,
                _ => self.radius,
            }
        };
        let nd = shape.ndim();
        for a in 0..nd {
            let e = extent(nd - 1 - a);
            if center[a] - e < -0.5 || center[a] + e > shape.dims()[a] as f64 - 0.5 {
                return Err(Error::Param(format!(
                    "phantom geometry leaves the grid along axis {a}"
                )));
            }
        }
        Ok(())
    }

    fn center_or_default(&self, shape: &GridShape) -> Vec<f64> {
        self.center.clone().unwrap_or_else(|| {
            shape
                .dims()
                .iter()
                .map(|&d| (d as f64 - 1.0) / 2.0)
                .collect()
        })
    }

    /// Object labels and intensity levels `(label, level)` of the phantom.
    fn levels(&self) -> Vec<(u8, f64)> {
        match self.kind {
            PhantomKind::Disc | PhantomKind::CShape => vec![(0, 0.0), (1, self.contrast)],
            PhantomKind::NestedRings | PhantomKind::TwoBlobs => {
                vec![(0, 0.0), (1, self.contrast), (2, 0.5 * self.contrast)]
            }
        }
    }

    /// Labels whose union forms object `id` (nested rings: object 2 is both).
    pub fn object_members(&self, id: u8) -> Vec<u8> {
        match (self.kind, id) {
            (PhantomKind::NestedRings, 2) => vec![1, 2],
            _ => vec![id],
        }
    }

    pub fn object_ids(&self) -> Vec<u8> {
        match self.kind {
            PhantomKind::Disc | PhantomKind::CShape => vec![1],
            _ => vec![1, 2],
        }
    }

    fn label_at(&self, c: &[f64]) -> u8 {
        // c: offsets from the center in voxels, last axis = x
        let nd = c.len();
        let r2: f64 = c.iter().map(|v| v * v).sum();
        match self.kind {
            PhantomKind::Disc => (r2 <= self.radius * self.radius) as u8,
            PhantomKind::CShape => {
                // ring in the (y, x) plane, extruded over the slab |z| <= radius / 2
                let (y, x) = (c[nd - 2], c[nd - 1]);
                let p2 = y * y + x * x;
                if nd == 3 && c[0].abs() > 0.5 * self.radius {
                    return 0;
                }
                let in_ring =
                    p2 <= self.radius * self.radius && p2 > self.inner_radius * self.inner_radius;
                // opening centred on +x
                let angle = y.atan2(x).abs().to_degrees();
                (in_ring && angle > self.gap) as u8
            }
            PhantomKind::NestedRings => {
                if r2 <= self.inner_radius * self.inner_radius {
                    1
                } else if r2 <= self.radius * self.radius {
                    2
                } else {
                    0
                }
            }
            PhantomKind::TwoBlobs => {
                let off = self.radius + 0.5 * self.gap;
                let rest: f64 = c[..nd - 1].iter().map(|v| v * v).sum();
                let d1 = rest + (c[nd - 1] + off).powi(2);
                let d2 = rest + (c[nd - 1] - off).powi(2);
                if d1 <= self.radius * self.radius {
                    1
                } else if d2 <= self.radius * self.radius {
                    2
                } else {
                    0
                }
            }
        }
    }
}

/// Rasterized phantom.
#[derive(Clone, Debug)]
pub struct Phantom {
    pub spec: PhantomSpec,
    pub ground_truth: LabelVolume,
    pub observation: ScalarVolume,
    /// Foreground probability per object id, in [`PhantomSpec::object_ids`] order.
    pub prob: Vec<(u8, ScalarVolume)>,
}

impl Phantom {
    /// Ground-truth mask of object `id` (see [`PhantomSpec::object_members`]).
    pub fn object_mask(&self, id: u8) -> Vec<bool> {
        let members = self.spec.object_members(id);
        self.ground_truth
            .data()
            .iter()
            .map(|l| members.contains(l))
            .collect()
    }

    pub fn object_truth(&self, id: u8) -> LabelVolume {
        LabelVolume::from_mask(self.ground_truth.shape().clone(), &self.object_mask(id))
            .expect("shape preserved")
    }

    pub fn prob_of(&self, id: u8) -> Option<&ScalarVolume> {
        self.prob.iter().find(|(i, _)| *i == id).map(|(_, p)| p)
    }
}

/// Rasterizes, corrupts and scores a phantom. Deterministic in `seed`.
pub fn make_phantom(spec: &PhantomSpec, seed: u64) -> Result<Phantom> {
    let shape = spec.shape()?;
    spec.validate(&shape)?;
    let center = spec.center_or_default(&shape);
    let n = shape.len();
    let nd = shape.ndim();
    let truth: Vec<u8> = (0..n)
        .map(|p| {
            let coord = shape.coord(p).expect("in range");
            let c: Vec<f64> = coord
                .iter()
                .zip(&center)
                .map(|(&x, &m)| x as f64 - m)
                .collect();
            spec.label_at(&c)
        })
        .collect();

    let levels = spec.levels();
    let level_of = |l: u8| {
        levels
            .iter()
            .find(|(k, _)| *k == l)
            .map_or(0.0, |(_, v)| *v)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // holes: small balls of background punched into the objects
    let mut hole = vec![false; n];
    let object: Vec<usize> = (0..n).filter(|&p| truth[p] != 0).collect();
    let target = (spec.hole_rate * object.len() as f64).ceil() as usize;
    let mut punched = 0;
    let hr = spec.hole_radius;
    let reach = hr.floor() as isize;
    while punched < target && !object.is_empty() {
        let c = object[rng.random_range(0..object.len())];
        let cc = shape.coord(c).expect("in range");
        for_each_offset(nd, reach, |o| {
            let d2: f64 = o.iter().map(|&v| (v * v) as f64).sum();
            if d2 > hr * hr + 1e-9 {
                return;
            }
            let q: Option<Vec<usize>> = cc
                .iter()
                .zip(o)
                .zip(shape.dims())
                .map(|((&x, &d), &dim)| {
                    let y = x as isize + d;
                    (y >= 0 && (y as usize) < dim).then_some(y as usize)
                })
                .collect();
            if let Some(q) = q {
                let qi = shape.index(&q).expect("in range");
                if truth[qi] != 0 && !hole[qi] {
                    hole[qi] = true;
                    punched += 1;
                }
            }
        });
    }

    let noise = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| Error::Param(e.to_string()))?;
    let obs: Vec<f32> = (0..n)
        .map(|p| {
            let base = if hole[p] { 0.0 } else { level_of(truth[p]) };
            let eps = if spec.noise > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            (base + eps) as f32
        })
        .collect();

    // class posteriors with equal priors; std floored so noiseless inputs
    // still give soft but decisive probabilities
    let std = spec.noise.max(0.1 * spec.contrast);
    let prob = spec
        .object_ids()
        .into_iter()
        .map(|id| {
            let members = spec.object_members(id);
            let data = obs
                .iter()
                .map(|&v| {
                    let lik = |m: f64| (-0.5 * ((v as f64 - m) / std).powi(2)).exp();
                    let mut inside = 0.0;
                    let mut total = 0.0;
                    for &(l, m) in &levels {
                        let li = lik(m);
                        total += li;
                        if members.contains(&l) {
                            inside += li;
                        }
                    }
                    if total > 0.0 {
                        (inside / total) as f32
                    } else {
                        // far outside every level: nearest level decides
                        let best = levels
                            .iter()
                            .min_by(|a, b| {
                                (v as f64 - a.1).abs().total_cmp(&(v as f64 - b.1).abs())
                            })
                            .expect("levels");
                        members.contains(&best.0) as u8 as f32
                    }
                })
                .collect();
            (id, Volume::from_vec(shape.clone(), data).expect("shape"))
        })
        .collect();

    Ok(Phantom {
        spec: spec.clone(),
        ground_truth: Volume::from_vec(shape.clone(), truth)?,
        observation: Volume::from_vec(shape, obs)?,
        prob,
    })
}

fn for_each_offset(nd: usize, reach: isize, mut f: impl FnMut(&[isize])) {
    let mut o = vec![-reach; nd];
    loop {
        f(&o);
        let mut a = nd;
        loop {
            if a == 0 {
                return;
            }
            a -= 1;
            if o[a] < reach {
                o[a] += 1;
                break;
            }
            o[a] = -reach;
        }
    }
}
