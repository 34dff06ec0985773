//! Regular-grid containers, neighborhood systems, exact Euclidean distance
//! transforms and SVOL/PGM file I/O.
//!
//! Grids have two or three axes. Internally every shape is padded to three
//! axes by prepending unit-sized axes, so a 2D coordinate `(y, x)` lives at
//! `(0, y, x)`. Linearization is row-major (last axis fastest), which makes
//! the padding invisible in linear indices.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::par;

/// Grid dimensions and physical voxel spacing (mm).
#[derive(Clone, Debug, PartialEq)]
pub struct GridShape {
    ndim: usize,
    dims: [usize; 3],
    spacing: [f64; 3],
}

impl GridShape {
    pub fn new(dims: &[usize], spacing: &[f64]) -> Result<Self> {
        if !(2..=3).contains(&dims.len()) {
            return Err(Error::Shape(format!(
                "expected 2 or 3 axes, got {}",
                dims.len()
            )));
        }
        if spacing.len() != dims.len() {
            return Err(Error::Shape(format!(
                "{} dims but {} spacing values",
                dims.len(),
                spacing.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Shape(format!("zero-sized axis in {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::Shape(format!(
                "spacing must be positive and finite, got {spacing:?}"
            )));
        }
        let pad = 3 - dims.len();
        let mut d = [1usize; 3];
        let mut s = [1.0f64; 3];
        d[pad..].copy_from_slice(dims);
        s[pad..].copy_from_slice(spacing);
        d.iter()
            .try_fold(1usize, |acc, &x| acc.checked_mul(x))
            .filter(|&n| n <= u32::MAX as usize)
            .ok_or_else(|| Error::Shape(format!("grid {dims:?} is too large")))?;
        Ok(GridShape {
            ndim: dims.len(),
            dims: d,
            spacing: s,
        })
    }

    pub fn unit(dims: &[usize]) -> Result<Self> {
        Self::new(dims, &vec![1.0; dims.len()])
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims[3 - self.ndim..]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[3 - self.ndim..]
    }

    /// Total voxel count.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major linear index of `coord`.
    pub fn index(&self, coord: &[usize]) -> Result<usize> {
        let oob = || Error::OutOfBounds {
            coord: coord.to_vec(),
            dims: self.dims().to_vec(),
        };
        if coord.len() != self.ndim {
            return Err(oob());
        }
        let mut c = [0usize; 3];
        c[3 - self.ndim..].copy_from_slice(coord);
        if c.iter().zip(&self.dims).any(|(&ci, &d)| ci >= d) {
            return Err(oob());
        }
        Ok(self.index3(c))
    }

    /// Inverse of [`GridShape::index`].
    pub fn coord(&self, index: usize) -> Result<Vec<usize>> {
        if index >= self.len() {
            return Err(Error::OutOfBounds {
                coord: vec![index],
                dims: self.dims().to_vec(),
            });
        }
        Ok(self.coord3(index)[3 - self.ndim..].to_vec())
    }

    pub(crate) fn dims3(&self) -> [usize; 3] {
        self.dims
    }

    pub(crate) fn spacing3(&self) -> [f64; 3] {
        self.spacing
    }

    #[inline]
    pub(crate) fn index3(&self, c: [usize; 3]) -> usize {
        (c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]
    }

    #[inline]
    pub(crate) fn coord3(&self, index: usize) -> [usize; 3] {
        let x = index % self.dims[2];
        let rest = index / self.dims[2];
        [rest / self.dims[1], rest % self.dims[1], x]
    }

    /// Linear index of `index + offset`, or `None` when it leaves the grid.
    #[inline]
    pub(crate) fn offset3(&self, index: usize, o: [isize; 3]) -> Option<usize> {
        let c = self.coord3(index);
        let mut n = [0usize; 3];
        for a in 0..3 {
            let v = c[a] as isize + o[a];
            if v < 0 || v >= self.dims[a] as isize {
                return None;
            }
            n[a] = v as usize;
        }
        Some(self.index3(n))
    }

    /// Squared physical length of a voxel offset.
    #[inline]
    pub(crate) fn offset_len2(&self, o: [isize; 3]) -> f64 {
        (0..3)
            .map(|a| {
                let d = o[a] as f64 * self.spacing[a];
                d * d
            })
            .sum()
    }

    /// Squared physical distance between two voxels.
    #[inline]
    pub(crate) fn dist2(&self, p: usize, q: usize) -> f64 {
        let (a, b) = (self.coord3(p), self.coord3(q));
        self.offset_len2([
            b[0] as isize - a[0] as isize,
            b[1] as isize - a[1] as isize,
            b[2] as isize - a[2] as isize,
        ])
    }
}

/// A value stored per voxel of a [`GridShape`].
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    shape: GridShape,
    data: Vec<T>,
}

/// Intensities and probability maps.
pub type ScalarVolume = Volume<f32>;
/// Label maps: 0 is background, objects are `1..=K`.
pub type LabelVolume = Volume<u8>;
/// Double precision working volumes (energies, distances).
pub type RealVolume = Volume<f64>;

impl<T> Volume<T> {
    pub fn from_vec(shape: GridShape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::PayloadSize {
                expected: shape.len(),
                found: data.len(),
            });
        }
        Ok(Volume { shape, data })
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, coord: &[usize]) -> Result<&T> {
        Ok(&self.data[self.shape.index(coord)?])
    }

    pub fn map<U, F: Fn(&T) -> U>(&self, f: F) -> Volume<U> {
        Volume {
            shape: self.shape.clone(),
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T: Clone> Volume<T> {
    pub fn filled(shape: GridShape, value: T) -> Self {
        let data = vec![value; shape.len()];
        Volume { shape, data }
    }
}

impl ScalarVolume {
    /// Like [`Volume::from_vec`] but also rejects non-finite values.
    pub fn from_finite(shape: GridShape, data: Vec<f32>) -> Result<Self> {
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Param(format!("non-finite value at voxel {i}")));
        }
        Self::from_vec(shape, data)
    }
}

impl LabelVolume {
    /// Indicator of `label` as a boolean mask.
    pub fn mask(&self, label: u8) -> Vec<bool> {
        self.data.iter().map(|&l| l == label).collect()
    }

    pub fn count(&self, label: u8) -> usize {
        self.data.iter().filter(|&&l| l == label).count()
    }

    pub fn contains_label(&self, label: u8) -> bool {
        self.data.contains(&label)
    }

    /// Sorted list of non-zero labels present.
    pub fn object_labels(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &l in &self.data {
            seen[l as usize] = true;
        }
        (1..=255u8).filter(|&l| seen[l as usize]).collect()
    }

    /// Binary volume (0/1) from a mask.
    pub fn from_mask(shape: GridShape, mask: &[bool]) -> Result<Self> {
        Self::from_vec(shape, mask.iter().map(|&b| b as u8).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NeighborhoodKind {
    /// 4-connected in 2D, 6-connected in 3D.
    Face,
    /// 8-connected in 2D, 26-connected in 3D.
    Full,
}

impl std::str::FromStr for NeighborhoodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "face" => Ok(NeighborhoodKind::Face),
            "full" => Ok(NeighborhoodKind::Full),
            other => Err(Error::Param(format!(
                "unknown neighborhood '{other}' (expected face|full)"
            ))),
        }
    }
}

/// Ordered neighbor offsets. The order is lexicographic over the axes and is
/// used as the tie-break wherever a neighbor has to be chosen.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighborhood {
    kind: NeighborhoodKind,
    ndim: usize,
    offsets: Vec<[isize; 3]>,
}

impl Neighborhood {
    pub fn new(kind: NeighborhoodKind, ndim: usize) -> Self {
        assert!(
            (2..=3).contains(&ndim),
            "neighborhoods exist for 2 or 3 axes"
        );
        let lead = 3 - ndim;
        let mut offsets = Vec::new();
        for a in -1isize..=1 {
            for b in -1isize..=1 {
                for c in -1isize..=1 {
                    let o = [a, b, c];
                    if o[..lead].iter().any(|&v| v != 0) || o == [0, 0, 0] {
                        continue;
                    }
                    let nonzero = o.iter().filter(|&&v| v != 0).count();
                    if kind == NeighborhoodKind::Face && nonzero != 1 {
                        continue;
                    }
                    offsets.push(o);
                }
            }
        }
        Neighborhood {
            kind,
            ndim,
            offsets,
        }
    }

    pub fn for_shape(kind: NeighborhoodKind, shape: &GridShape) -> Self {
        Self::new(kind, shape.ndim())
    }

    pub fn kind(&self) -> NeighborhoodKind {
        self.kind
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Offset `i` restricted to the real axes.
    pub fn offset(&self, i: usize) -> Vec<isize> {
        self.offsets[i][3 - self.ndim..].to_vec()
    }

    pub(crate) fn offsets3(&self) -> &[[isize; 3]] {
        &self.offsets
    }

    /// The lexicographically positive half; each unordered neighbor pair is
    /// visited exactly once when iterating `p -> p + o` over these.
    pub(crate) fn forward3(&self) -> Vec<[isize; 3]> {
        self.offsets
            .iter()
            .copied()
            .filter(|o| *o > [0, 0, 0])
            .collect()
    }
}

/// Exact squared Euclidean distance (mm²) from every voxel to the nearest
/// `true` voxel of `sites`. All entries are `f64::INFINITY` when `sites` is
/// empty.
pub fn squared_distance_map(shape: &GridShape, sites: &[bool]) -> Vec<f64> {
    assert_eq!(sites.len(), shape.len());
    let dims = shape.dims3();
    let spacing = shape.spacing3();
    let mut d: Vec<f64> = sites
        .iter()
        .map(|&s| if s { 0.0 } else { f64::INFINITY })
        .collect();
    for axis in 0..3 {
        if dims[axis] == 1 {
            continue;
        }
        let stride: usize = dims[axis + 1..].iter().product();
        let len = dims[axis];
        let lines: Vec<usize> = (0..shape.len())
            .filter(|&i| (i / stride).is_multiple_of(len))
            .collect();
        let s2 = spacing[axis] * spacing[axis];
        let updated = par::map_slice(&lines, |&start| {
            let f: Vec<f64> = (0..len).map(|k| d[start + k * stride]).collect();
            lower_envelope_1d(&f, s2)
        });
        for (start, line) in lines.iter().zip(updated) {
            for (k, v) in line.into_iter().enumerate() {
                d[start + k * stride] = v;
            }
        }
    }
    d
}

/// One pass of the separable lower-envelope transform:
/// `out[p] = min_q f[q] + s2 * (p - q)^2`.
fn lower_envelope_1d(f: &[f64], s2: f64) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![f64::INFINITY; n];
    let mut v: Vec<usize> = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n + 1);
    let key = |q: usize| f[q] + s2 * (q * q) as f64;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.clear();
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&top) => {
                    let s = (key(q) - key(top)) / (2.0 * s2 * (q - top) as f64);
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        return out;
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < p as f64 {
            k += 1;
        }
        let dq = p as f64 - v[k] as f64;
        *o = f[v[k]] + s2 * dq * dq;
    }
    out
}

/// Euclidean distance (mm) from every voxel to the nearest voxel carrying
/// `label`; zero on the label itself.
pub fn distance_transform(mask: &LabelVolume, label: u8) -> Result<RealVolume> {
    let sites = mask.mask(label);
    if !sites.iter().any(|&s| s) {
        return Err(Error::EmptySet(label));
    }
    let d2 = squared_distance_map(mask.shape(), &sites);
    Volume::from_vec(
        mask.shape().clone(),
        d2.into_iter().map(f64::sqrt).collect(),
    )
}

// ---------------------------------------------------------------------------
// SVOL I/O

/// A volume read from disk; the dtype in the header decides the variant.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyVolume {
    Scalar(ScalarVolume),
    Label(LabelVolume),
}

impl AnyVolume {
    pub fn shape(&self) -> &GridShape {
        match self {
            AnyVolume::Scalar(v) => v.shape(),
            AnyVolume::Label(v) => v.shape(),
        }
    }

    /// Interprets the volume as labels; scalar volumes must hold integers in 0..=255.
    pub fn into_labels(self) -> Result<LabelVolume> {
        match self {
            AnyVolume::Label(v) => Ok(v),
            AnyVolume::Scalar(v) => {
                if let Some(x) = v
                    .data()
                    .iter()
                    .find(|&&x| !(x.fract() == 0.0 && (0.0..=255.0).contains(&x)))
                {
                    return Err(Error::Param(format!(
                        "f32 volume holds non-label value {x}"
                    )));
                }
                Ok(v.map(|&x| x as u8))
            }
        }
    }

    pub fn into_scalar(self) -> ScalarVolume {
        match self {
            AnyVolume::Scalar(v) => v,
            AnyVolume::Label(v) => v.map(|&x| x as f32),
        }
    }
}

/// Element types that can be stored in an SVOL payload.
pub trait SvolElement: Copy {
    const DTYPE: &'static str;
    fn write_le(self, out: &mut Vec<u8>);
}

impl SvolElement for f32 {
    const DTYPE: &'static str = "f32";
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

impl SvolElement for u8 {
    const DTYPE: &'static str = "u8";
    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

/// Serializes a volume to SVOL bytes.
pub fn encode_svol<T: SvolElement>(vol: &Volume<T>) -> Vec<u8> {
    let shape = vol.shape();
    let header = format!(
        "svol 1\ndims: {}\nspacing: {}\ndtype: {}\ndata:\n",
        join(shape.dims()),
        join(shape.spacing()),
        T::DTYPE
    );
    let mut out = header.into_bytes();
    out.reserve(vol.len() * std::mem::size_of::<T>());
    for &v in vol.data() {
        v.write_le(&mut out);
    }
    out
}

pub fn write_volume<T: SvolElement>(vol: &Volume<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_svol(vol))
        .map_err(|e| Error::io(path, e))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<AnyVolume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_svol(&bytes)
}

/// Parses SVOL bytes.
pub fn decode_svol(bytes: &[u8]) -> Result<AnyVolume> {
    let mut pos = 0usize;
    let mut line_no = 0usize;
    let mut next_line = |pos: &mut usize| -> Result<(usize, String)> {
        line_no += 1;
        let start = *pos;
        let end = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|e| start + e)
            .ok_or_else(|| {
                Error::parse(
                    format!("line {line_no}, byte {start}"),
                    "unterminated header line",
                )
            })?;
        *pos = end + 1;
        let text = std::str::from_utf8(&bytes[start..end]).map_err(|_| {
            Error::parse(
                format!("line {line_no}, byte {start}"),
                "header is not ASCII",
            )
        })?;
        Ok((line_no, text.trim_end_matches('\r').to_string()))
    };
    let at = |line: usize| format!("line {line}");

    let (ln, magic) = next_line(&mut pos)?;
    if magic.trim() != "svol 1" {
        return Err(Error::parse(
            at(ln),
            format!("expected 'svol 1', got '{magic}'"),
        ));
    }
    let field = |text: &str, ln: usize, name: &str| -> Result<String> {
        text.strip_prefix(name)
            .and_then(|r| r.strip_prefix(':'))
            .map(|r| r.trim().to_string())
            .ok_or_else(|| Error::parse(at(ln), format!("expected '{name}:' field, got '{text}'")))
    };

    let (ln, line) = next_line(&mut pos)?;
    let dims: Vec<usize> = field(&line, ln, "dims")?
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::parse(at(ln), format!("bad dimension '{t}'")))
        })
        .collect::<Result<_>>()?;

    let (ln, line) = next_line(&mut pos)?;
    let spacing: Vec<f64> = field(&line, ln, "spacing")?
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::parse(at(ln), format!("bad spacing '{t}'")))
        })
        .collect::<Result<_>>()?;
    let shape = GridShape::new(&dims, &spacing)
        .map_err(|e| Error::parse(format!("line {}", ln - 1), e.to_string()))?;

    let (ln, line) = next_line(&mut pos)?;
    let dtype = field(&line, ln, "dtype")?;

    let (ln, line) = next_line(&mut pos)?;
    if line.trim() != "data:" {
        return Err(Error::parse(
            at(ln),
            format!("expected 'data:', got '{line}'"),
        ));
    }

    let payload = &bytes[pos..];
    let n = shape.len();
    match dtype.as_str() {
        "u8" => {
            if payload.len() != n {
                return Err(Error::PayloadSize {
                    expected: n,
                    found: payload.len(),
                });
            }
            Ok(AnyVolume::Label(Volume::from_vec(shape, payload.to_vec())?))
        }
        "f32" => {
            if !payload.len().is_multiple_of(4) || payload.len() / 4 != n {
                return Err(Error::PayloadSize {
                    expected: n,
                    found: payload.len() / 4,
                });
            }
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Ok(AnyVolume::Scalar(Volume::from_vec(shape, data)?))
        }
        other => Err(Error::parse(
            at(ln - 1),
            format!("unknown dtype '{other}' (expected f32|u8)"),
        )),
    }
}

/// Reads a binary 8-bit PGM (P5) image as a 2D scalar volume with unit spacing.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<ScalarVolume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<ScalarVolume> {
    let mut pos = 0usize;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(format!("byte {pos}"), "truncated PGM header"));
        }
        tokens.push((
            start,
            String::from_utf8_lossy(&bytes[start..pos]).into_owned(),
        ));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if tokens[0].1 != "P5" {
        return Err(Error::parse("byte 0", "only binary PGM (P5) is supported"));
    }
    let num = |i: usize| -> Result<usize> {
        tokens[i]
            .1
            .parse::<usize>()
            .map_err(|_| Error::parse(format!("byte {}", tokens[i].0), "bad PGM header number"))
    };
    let (w, h, maxval) = (num(1)?, num(2)?, num(3)?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::parse(
            format!("byte {}", tokens[3].0),
            "only 8-bit PGM is supported",
        ));
    }
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != w * h {
        return Err(Error::PayloadSize {
            expected: w * h,
            found: raster.len(),
        });
    }
    let shape = GridShape::unit(&[h, w])?;
    Volume::from_vec(shape, raster.iter().map(|&b| b as f32).collect())
}
