//! Smooth random deformations of label volumes and simple morphology.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::volume::{squared_distance_map, LabelVolume, Volume};

/// Coarse control grid with Gaussian displacements.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbParams {
    /// Control points per axis (each >= 2).
    pub grid: Vec<usize>,
    /// Standard deviation of each displacement component, in voxels.
    pub sigma: f64,
    pub seed: u64,
}

impl PerturbParams {
    pub fn new(grid: &[usize], sigma: f64, seed: u64) -> Self {
        PerturbParams {
            grid: grid.to_vec(),
            sigma,
            seed,
        }
    }
}

/// Warps `labels` with a dense displacement interpolated multilinearly from
/// the control grid. Each voxel `x` takes the label found at the nearest
/// voxel to `x - u(x)`; samples outside the grid are background.
pub fn perturb_labels(labels: &LabelVolume, params: &PerturbParams) -> Result<LabelVolume> {
    let shape = labels.shape();
    let nd = shape.ndim();
    if params.grid.len() != nd || params.grid.iter().any(|&g| g < 2) {
        return Err(Error::Param(format!(
            "control grid needs {nd} sizes of at least 2, got {:?}",
            params.grid
        )));
    }
    if !(params.sigma >= 0.0 && params.sigma.is_finite()) {
        return Err(Error::Param(format!(
            "sigma must be >= 0, got {}",
            params.sigma
        )));
    }
    if params.sigma == 0.0 {
        return Ok(labels.clone());
    }
    let normal = Normal::new(0.0, params.sigma).map_err(|e| Error::Param(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let npts: usize = params.grid.iter().product();
    // control displacements, point-major: [point][axis]
    let ctrl: Vec<f64> = (0..npts * nd).map(|_| normal.sample(&mut rng)).collect();

    let dims = shape.dims();
    let mut strides = vec![1usize; nd];
    for a in (0..nd.saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * params.grid[a + 1];
    }
    let src = labels.data();
    let out: Vec<u8> = (0..shape.len())
        .map(|p| {
            let c = shape.coord(p).expect("in range");
            // cell index and fractional position per axis
            let mut base = vec![0usize; nd];
            let mut frac = vec![0.0; nd];
            for a in 0..nd {
                let g = params.grid[a];
                let t = if dims[a] > 1 {
                    c[a] as f64 * (g - 1) as f64 / (dims[a] - 1) as f64
                } else {
                    0.0
                };
                let i = (t.floor() as usize).min(g - 2);
                base[a] = i;
                frac[a] = t - i as f64;
            }
            let mut u = vec![0.0; nd];
            for corner in 0..1usize << nd {
                let mut w = 1.0;
                let mut idx = 0;
                for a in 0..nd {
                    let bit = corner >> a & 1;
                    w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                    idx += (base[a] + bit) * strides[a];
                }
                if w != 0.0 {
                    for (a, ua) in u.iter_mut().enumerate() {
                        *ua += w * ctrl[idx * nd + a];
                    }
                }
            }
            let mut q = Vec::with_capacity(nd);
            for a in 0..nd {
                let s = (c[a] as f64 - u[a]).round();
                if s < 0.0 || s >= dims[a] as f64 {
                    return 0;
                }
                q.push(s as usize);
            }
            src[shape.index(&q).expect("in range")]
        })
        .collect();
    Volume::from_vec(shape.clone(), out)
}

/// Removes every voxel of `label` within `radius` mm of a voxel that is not
/// `label`. Voxels outside the grid do not count.
pub fn erode(labels: &LabelVolume, label: u8, radius: f64) -> LabelVolume {
    let shape = labels.shape();
    let outside: Vec<bool> = labels.data().iter().map(|&l| l != label).collect();
    let d2 = squared_distance_map(shape, &outside);
    let r2 = radius * radius + 1e-9;
    let data = labels
        .data()
        .iter()
        .zip(&d2)
        .map(|(&l, &d)| if l == label && d <= r2 { 0 } else { l })
        .collect();
    Volume::from_vec(shape.clone(), data).expect("shape preserved")
}
