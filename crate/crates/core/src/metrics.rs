//! Dice similarity coefficient and average symmetric surface distance.

use std::fmt;

use crate::error::{Error, Result};
use crate::volume::{squared_distance_map, GridShape, LabelVolume, Neighborhood, NeighborhoodKind};

fn check_shapes(a: &LabelVolume, b: &LabelVolume) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{:?}/{:?} vs {:?}/{:?}",
            a.shape().dims(),
            a.shape().spacing(),
            b.shape().dims(),
            b.shape().spacing()
        )));
    }
    Ok(())
}

/// `2|A ∩ B| / (|A| + |B|)` on two masks.
pub fn dsc_masks(a: &[bool], b: &[bool]) -> Result<f64> {
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        na += x as usize;
        nb += y as usize;
        both += (x && y) as usize;
    }
    if na + nb == 0 {
        return Err(Error::UndefinedMetric("DSC of two empty objects".into()));
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

pub fn dsc(a: &LabelVolume, b: &LabelVolume, label: u8) -> Result<f64> {
    check_shapes(a, b)?;
    dsc_masks(&a.mask(label), &b.mask(label))
}

/// Object voxels with a face neighbor outside the object or on the grid border.
pub fn boundary(shape: &GridShape, mask: &[bool]) -> Vec<bool> {
    let nb = Neighborhood::for_shape(NeighborhoodKind::Face, shape);
    (0..mask.len())
        .map(|p| {
            mask[p]
                && nb
                    .offsets3()
                    .iter()
                    .any(|&o| shape.offset3(p, o).is_none_or(|q| !mask[q]))
        })
        .collect()
}

/// Average symmetric surface distance in mm.
pub fn assd_masks(shape: &GridShape, a: &[bool], b: &[bool]) -> Result<f64> {
    if !a.iter().any(|&x| x) || !b.iter().any(|&x| x) {
        return Err(Error::UndefinedMetric("ASSD with an empty object".into()));
    }
    let sa = boundary(shape, a);
    let sb = boundary(shape, b);
    let da = squared_distance_map(shape, &sa);
    let db = squared_distance_map(shape, &sb);
    let mut sum = 0.0;
    let mut count = 0usize;
    for p in 0..a.len() {
        if sa[p] {
            sum += db[p].sqrt();
            count += 1;
        }
        if sb[p] {
            sum += da[p].sqrt();
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

pub fn assd(a: &LabelVolume, b: &LabelVolume, label: u8) -> Result<f64> {
    check_shapes(a, b)?;
    assd_masks(a.shape(), &a.mask(label), &b.mask(label))
}

/// Scores of one label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelMetrics {
    pub label: u8,
    pub dsc: f64,
    /// `None` when the label is missing from one side.
    pub assd: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub labels: Vec<LabelMetrics>,
}

impl MetricReport {
    pub fn get(&self, label: u8) -> Option<&LabelMetrics> {
        self.labels.iter().find(|m| m.label == label)
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in &self.labels {
            match m.assd {
                Some(d) => writeln!(f, "label={} dsc={:.6} assd_mm={:.6}", m.label, m.dsc, d)?,
                None => writeln!(f, "label={} dsc={:.6} assd_mm=undefined", m.label, m.dsc)?,
            }
        }
        Ok(())
    }
}

/// Scores every non-zero label present in either volume, or only `label`.
pub fn evaluate(a: &LabelVolume, b: &LabelVolume, label: Option<u8>) -> Result<MetricReport> {
    check_shapes(a, b)?;
    let labels = match label {
        Some(l) => vec![l],
        None => {
            let mut ls = a.object_labels();
            ls.extend(b.object_labels());
            ls.sort_unstable();
            ls.dedup();
            ls
        }
    };
    let labels = labels
        .into_iter()
        .map(|l| {
            let (ma, mb) = (a.mask(l), b.mask(l));
            Ok(LabelMetrics {
                label: l,
                dsc: dsc_masks(&ma, &mb)?,
                assd: assd_masks(a.shape(), &ma, &mb).ok(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport { labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vol(dims: &[usize], data: Vec<u8>) -> LabelVolume {
        LabelVolume::from_vec(GridShape::unit(dims).unwrap(), data).unwrap()
    }

    fn square(n: usize, r0: usize, c0: usize, s: usize) -> LabelVolume {
        let data = (0..n * n)
            .map(|i| {
                let (r, c) = (i / n, i % n);
                (r >= r0 && r < r0 + s && c >= c0 && c < c0 + s) as u8
            })
            .collect();
        vol(&[n, n], data)
    }

    #[test]
    fn dsc_examples() {
        let a = square(6, 1, 1, 2);
        assert_eq!(dsc(&a, &a, 1).unwrap(), 1.0);
        assert_eq!(dsc(&a, &square(6, 4, 4, 2), 1).unwrap(), 0.0);
        assert_eq!(dsc(&a, &square(6, 1, 2, 2), 1).unwrap(), 0.5);
        let e = vol(&[2, 2], vec![0; 4]);
        assert!(matches!(dsc(&e, &e, 1), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn assd_examples() {
        let a = square(8, 2, 2, 3);
        assert_eq!(assd(&a, &a, 1).unwrap(), 0.0);
        let mut x = vec![0u8; 10];
        let mut y = vec![0u8; 10];
        x[2] = 1;
        y[5] = 1;
        assert_eq!(
            assd(&vol(&[1, 10], x.clone()), &vol(&[1, 10], y), 1).unwrap(),
            3.0
        );
        let e = vol(&[1, 10], vec![0; 10]);
        assert!(assd(&vol(&[1, 10], x), &e, 1).is_err());
    }

    #[test]
    fn assd_respects_spacing() {
        let sh = GridShape::new(&[1, 10], &[1.0, 2.5]).unwrap();
        let mut x = vec![0u8; 10];
        let mut y = vec![0u8; 10];
        x[2] = 1;
        y[5] = 1;
        let a = LabelVolume::from_vec(sh.clone(), x).unwrap();
        let b = LabelVolume::from_vec(sh, y).unwrap();
        assert!((assd(&a, &b, 1).unwrap() - 7.5).abs() < 1e-12);
    }

    #[test]
    fn boundary_of_a_square_is_its_ring() {
        let a = square(7, 1, 1, 5);
        let b = boundary(a.shape(), &a.mask(1));
        assert_eq!(b.iter().filter(|&&x| x).count(), 16);
        let full = vec![true; 9];
        let sh = GridShape::unit(&[3, 3]).unwrap();
        assert_eq!(boundary(&sh, &full).iter().filter(|&&x| x).count(), 8);
    }

    fn brute_assd(shape: &GridShape, a: &[bool], b: &[bool]) -> f64 {
        let sa = boundary(shape, a);
        let sb = boundary(shape, b);
        let pa: Vec<usize> = (0..a.len()).filter(|&p| sa[p]).collect();
        let pb: Vec<usize> = (0..b.len()).filter(|&p| sb[p]).collect();
        let near = |p: usize, set: &[usize]| {
            set.iter()
                .map(|&q| shape.dist2(p, q).sqrt())
                .fold(f64::INFINITY, f64::min)
        };
        let total: f64 = pa.iter().map(|&p| near(p, &pb)).sum::<f64>()
            + pb.iter().map(|&p| near(p, &pa)).sum::<f64>();
        total / (pa.len() + pb.len()) as f64
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn assd_matches_all_pairs(
            dims in prop::collection::vec(1usize..=12, 3),
            sp in prop::collection::vec(0.5f64..2.0, 3),
            seed in any::<u64>(),
            density in 0.05f64..0.6,
        ) {
            let shape = GridShape::new(&dims, &sp).unwrap();
            let mut s = seed | 1;
            let mut next = || { s ^= s << 13; s ^= s >> 7; s ^= s << 17; (s % 10_000) as f64 / 10_000.0 };
            let a: Vec<bool> = (0..shape.len()).map(|_| next() < density).collect();
            let b: Vec<bool> = (0..shape.len()).map(|_| next() < density).collect();
            prop_assume!(a.iter().any(|&x| x) && b.iter().any(|&x| x));
            let fast = assd_masks(&shape, &a, &b).unwrap();
            prop_assert!((fast - brute_assd(&shape, &a, &b)).abs() < 1e-9);
            prop_assert!((fast - assd_masks(&shape, &b, &a).unwrap()).abs() < 1e-12);
            prop_assert_eq!(dsc_masks(&a, &b).unwrap(), dsc_masks(&b, &a).unwrap());
        }

        #[test]
        fn boundary_voxels_touch_background_or_border(
            data in prop::collection::vec(any::<bool>(), 5 * 6 * 4),
        ) {
            let shape = GridShape::unit(&[5, 6, 4]).unwrap();
            let b = boundary(&shape, &data);
            for p in (0..data.len()).filter(|&p| b[p]) {
                let c = shape.coord(p).unwrap();
                let on_border = c.iter().zip(shape.dims()).any(|(&x, &d)| x == 0 || x + 1 == d);
                let nb = Neighborhood::new(NeighborhoodKind::Face, 3);
                let bg = nb.offsets3().iter().any(|&o| shape.offset3(p, o).is_some_and(|q| !data[q]));
                prop_assert!(on_border || bg);
            }
        }
    }
}
