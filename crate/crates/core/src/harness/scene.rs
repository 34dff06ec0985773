//! Plain-text scene files for multi-object segmentation.
//!
//! ```text
//! # objects: id followed by key=value pairs
//! scale 10000
//! object 1 image=img.svol prob=p1.svol preseg=pre.svol label=1,2 lambda=1
//! object 2 image=img.svol prob=p2.svol preseg=pre.svol label=1,2 prior=inf
//! include 1 2 1.0
//! maxdist 1 2 6.0
//! exclude 3 2 0.5
//! ```
//!
//! Relative paths are resolved against the scene file's directory.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gvf::GvfParams;
use crate::mrf::{PriorPenalty, SegmentParams, DEFAULT_SCALE};
use crate::multiobject::{
    segment_multi, InteractionConstraint, MultiResult, ObjectInput, Polarity,
};
use crate::volume::{read_pgm, read_volume, LabelVolume, ScalarVolume};

#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub id: u8,
    pub image: PathBuf,
    pub prob: Option<PathBuf>,
    pub preseg: PathBuf,
    pub labels: Vec<u8>,
    pub params: SegmentParams,
    pub polarity: Option<Polarity>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub constraints: Vec<InteractionConstraint>,
    pub scale: f64,
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::parse(format!("line {line}"), format!("bad value '{v}' for {key}")))
}

fn auto_num(line: usize, key: &str, v: &str) -> Result<Option<f64>> {
    if v == "auto" {
        Ok(None)
    } else {
        num(line, key, v).map(Some)
    }
}

fn parse_object(line: usize, words: &[&str], base: &Path) -> Result<SceneObject> {
    let err = |m: String| Error::parse(format!("line {line}"), m);
    let id: u8 = match words.first() {
        Some(w) => num(line, "object id", w)?,
        None => return Err(err("object needs an id".into())),
    };
    if id == 0 {
        return Err(err("object id 0 is reserved for background".into()));
    }
    let path = |v: &str| base.join(v);
    let mut image = None;
    let mut prob = None;
    let mut preseg = None;
    let mut labels = vec![id];
    let mut polarity = None;
    let mut params = SegmentParams::default();
    let mut gvf = GvfParams::default();
    for w in &words[1..] {
        let (k, v) = w
            .split_once('=')
            .ok_or_else(|| err(format!("expected key=value, got '{w}'")))?;
        match k {
            "image" => image = Some(path(v)),
            "prob" => prob = Some(path(v)),
            "preseg" => preseg = Some(path(v)),
            "label" => {
                labels = v
                    .split(',')
                    .map(|x| num(line, k, x))
                    .collect::<Result<Vec<u8>>>()?
            }
            "lambda" => params.pairwise.lambda = num(line, k, v)?,
            "sigma" => params.pairwise.sigma = num(line, k, v)?,
            "alpha" => params.pairwise.alpha = auto_num(line, k, v)?,
            "beta" => params.pairwise.beta = auto_num(line, k, v)?,
            "nbhd" => params.pairwise.nbhd = v.parse().map_err(|e: Error| err(e.to_string()))?,
            "prior" => {
                params.prior = if v == "none" {
                    None
                } else {
                    Some(v.parse::<PriorPenalty>().map_err(|e| err(e.to_string()))?)
                }
            }
            "polarity" => {
                polarity = match v {
                    "auto" => None,
                    _ => Some(v.parse().map_err(|e: Error| err(e.to_string()))?),
                }
            }
            "eps" => params.eps = num(line, k, v)?,
            "mu" => gvf.mu = num(line, k, v)?,
            "dt" => gvf.dt = Some(num(line, k, v)?),
            "theta" => gvf.core_threshold = num(line, k, v)?,
            "max_iters" => gvf.max_iters = num(line, k, v)?,
            "tol" => gvf.tol = num(line, k, v)?,
            _ => return Err(err(format!("unknown key '{k}'"))),
        }
    }
    params.gvf = gvf;
    Ok(SceneObject {
        id,
        image: image.ok_or_else(|| err(format!("object {id} needs image=")))?,
        prob,
        preseg: preseg.ok_or_else(|| err(format!("object {id} needs preseg=")))?,
        labels,
        params,
        polarity,
    })
}

impl Scene {
    pub fn parse(text: &str, base: &Path) -> Result<Scene> {
        let mut objects: Vec<SceneObject> = Vec::new();
        let mut constraints = Vec::new();
        let mut scale = DEFAULT_SCALE;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            let words: Vec<&str> = content.split_whitespace().collect();
            let Some((&head, rest)) = words.split_first() else {
                continue;
            };
            match head {
                "object" => {
                    let o = parse_object(line, rest, base)?;
                    if objects.iter().any(|p| p.id == o.id) {
                        return Err(Error::parse(
                            format!("line {line}"),
                            format!("duplicate object {}", o.id),
                        ));
                    }
                    objects.push(o);
                }
                "include" | "exclude" | "maxdist" => {
                    let [a, b, d] = rest else {
                        return Err(Error::parse(
                            format!("line {line}"),
                            format!("{head} needs two object ids and a distance"),
                        ));
                    };
                    let (a, b, d) = (
                        num(line, head, a)?,
                        num(line, head, b)?,
                        num(line, head, d)?,
                    );
                    constraints.push(match head {
                        "include" => InteractionConstraint::inclusion(a, b, d),
                        "exclude" => InteractionConstraint::exclusion(a, b, d),
                        _ => InteractionConstraint::max_distance(a, b, d),
                    });
                }
                "scale" => {
                    let [v] = rest else {
                        return Err(Error::parse(
                            format!("line {line}"),
                            "scale needs one value",
                        ));
                    };
                    scale = num(line, head, v)?;
                }
                _ => {
                    return Err(Error::parse(
                        format!("line {line}"),
                        format!("unknown directive '{head}'"),
                    ))
                }
            }
        }
        if objects.is_empty() {
            return Err(Error::Config("scene defines no objects".into()));
        }
        Ok(Scene {
            objects,
            constraints,
            scale,
        })
    }

    pub fn load(path: &Path) -> Result<Scene> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Scene::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Loads every referenced volume and runs the joint segmentation.
    pub fn run(&self) -> Result<MultiResult> {
        let mut scalars: HashMap<&Path, ScalarVolume> = HashMap::new();
        let mut labels: HashMap<&Path, LabelVolume> = HashMap::new();
        for o in &self.objects {
            for p in std::iter::once(&o.image).chain(&o.prob) {
                if !scalars.contains_key(p.as_path()) {
                    scalars.insert(p, load_scalar(p)?);
                }
            }
            if !labels.contains_key(o.preseg.as_path()) {
                labels.insert(&o.preseg, read_volume(&o.preseg)?.into_labels()?);
            }
        }
        let inputs: Vec<ObjectInput<'_>> = self
            .objects
            .iter()
            .map(|o| ObjectInput {
                id: o.id,
                image: &scalars[o.image.as_path()],
                prob: o.prob.as_ref().map(|p| &scalars[p.as_path()]),
                preseg: &labels[o.preseg.as_path()],
                labels: o.labels.clone(),
                params: o.params.clone(),
                polarity: o.polarity,
            })
            .collect();
        segment_multi(&inputs, &self.constraints, self.scale)
    }
}

/// Reads an SVOL volume (any dtype) or a binary PGM image as intensities.
pub fn load_scalar(path: &Path) -> Result<ScalarVolume> {
    let pgm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if pgm {
        read_pgm(path)
    } else {
        Ok(read_volume(path)?.into_scalar())
    }
}
