//! `gvfcut` command line.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::gvf::{self, GvfParams, CORE};
use crate::harness::perturb::{perturb_labels, PerturbParams};
use crate::harness::phantom::{make_phantom, PhantomKind, PhantomSpec};
use crate::harness::scene::{load_scalar, Scene};
use crate::harness::sensitivity::{sensitivity_experiment, to_csv, SensitivityConfig};
use crate::maxflow::{solve_s_excess, SExcessGraph};
use crate::metrics::{assd, dsc, evaluate};
use crate::mrf::{segment, PairwiseParams, PriorPenalty, SegmentInput, SegmentParams};
use crate::volume::{read_volume, write_volume, LabelVolume, NeighborhoodKind, Volume};

#[derive(Parser, Debug)]
#[command(
    name = "gvfcut",
    version,
    about = "Graph-cut segmentation with gradient vector flow shape priors"
)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic phantom.
    Phantom(PhantomCmd),
    /// Compute the GVF prior of a pre-segmentation.
    Gvf(GvfCmd),
    /// Segment one object.
    Segment(SegmentCmd),
    /// Segment several interacting objects described by a scene file.
    SegmentMulti(MultiCmd),
    /// Dice and average symmetric surface distance between two label volumes.
    Metrics(MetricsCmd),
    /// Randomly deform a label volume.
    Perturb(PerturbCmd),
    /// Pre-segmentation perturbation experiment on a phantom (CSV output).
    Sensitivity(SensitivityCmd),
    /// Solve a minimum s-excess problem given as text.
    SolveGraph(SolveGraphCmd),
}

#[derive(Args, Debug, Clone)]
struct GvfArgs {
    /// GVF smoothness weight.
    #[arg(long, default_value_t = 0.2)]
    mu: f64,
    /// Explicit time step (default: 90% of the stability bound).
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    /// Stop when the largest per-voxel update is below this.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Core threshold as a fraction of the largest field magnitude.
    #[arg(long, default_value_t = 0.05)]
    theta: f64,
    /// Solve at full resolution only.
    #[arg(long)]
    no_multires: bool,
}

impl GvfArgs {
    fn params(&self) -> GvfParams {
        GvfParams {
            mu: self.mu,
            dt: self.dt,
            max_iters: self.max_iters,
            tol: self.tol,
            core_threshold: self.theta,
            multires: !self.no_multires,
            ..GvfParams::default()
        }
    }
}

#[derive(Args, Debug, Clone)]
struct EnergyArgs {
    /// Smoothness weight.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Boundary-term intensity scale (after the sigmoid).
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    /// Sigmoid width (default: from the pre-segmentation intensities).
    #[arg(long)]
    alpha: Option<f64>,
    /// Sigmoid center (default: from the pre-segmentation intensities).
    #[arg(long)]
    beta: Option<f64>,
    /// Smoothness neighborhood: face or full.
    #[arg(long, default_value = "face")]
    nbhd: NeighborhoodKind,
    /// Shape prior penalty: inf, none or a non-negative weight.
    #[arg(long, default_value = "inf")]
    prior: String,
    /// Energy-to-integer scale.
    #[arg(long, default_value_t = crate::mrf::DEFAULT_SCALE)]
    scale: f64,
    /// Probability clamp of the data term.
    #[arg(long, default_value_t = crate::mrf::DEFAULT_EPS)]
    eps: f64,
}

impl EnergyArgs {
    fn params(&self, gvf: &GvfArgs) -> Result<SegmentParams> {
        let prior = match self.prior.as_str() {
            "none" => None,
            s => Some(s.parse::<PriorPenalty>()?),
        };
        Ok(SegmentParams {
            pairwise: PairwiseParams {
                lambda: self.lambda,
                sigma: self.sigma,
                alpha: self.alpha,
                beta: self.beta,
                nbhd: self.nbhd,
            },
            prior,
            scale: self.scale,
            eps: self.eps,
            gvf: gvf.params(),
        })
    }
}

#[derive(Args, Debug)]
struct PhantomCmd {
    /// disc (sphere in 3D), c-shape, nested-rings or two-blobs.
    #[arg(long, default_value = "disc")]
    kind: PhantomKind,
    /// Grid size, e.g. 64,64 or 32,32,32.
    #[arg(long, value_delimiter = ',', default_value = "64,64")]
    dims: Vec<usize>,
    /// Voxel spacing in mm (default 1 per axis).
    #[arg(long, value_delimiter = ',')]
    spacing: Option<Vec<f64>>,
    /// Outer radius in voxels.
    #[arg(long)]
    radius: Option<f64>,
    /// Inner radius in voxels (C-shape hole, nested inner disc).
    #[arg(long)]
    inner_radius: Option<f64>,
    /// C-shape opening half-angle in degrees, or distance between blobs.
    #[arg(long)]
    gap: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    contrast: f64,
    /// Gaussian noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Fraction of object voxels covered by background holes.
    #[arg(long, default_value_t = 0.0)]
    hole_rate: f64,
    #[arg(long, default_value_t = 1.5)]
    hole_radius: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ground-truth label volume.
    #[arg(long)]
    out: PathBuf,
    /// Observed intensity volume.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Writes `<prefix><id>.svol` foreground probabilities per object.
    #[arg(long)]
    prob_prefix: Option<String>,
}

#[derive(Args, Debug)]
struct GvfCmd {
    #[arg(long)]
    preseg: PathBuf,
    #[arg(long, default_value_t = 1)]
    label: u8,
    #[command(flatten)]
    gvf: GvfArgs,
    /// Flow pointers (neighbor index, 255 = core) as a u8 volume.
    #[arg(long)]
    out_flow: Option<PathBuf>,
    /// Core mask.
    #[arg(long)]
    out_core: Option<PathBuf>,
    /// Field magnitude.
    #[arg(long)]
    out_magnitude: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SegmentCmd {
    /// Intensity image (SVOL or PGM).
    #[arg(long)]
    image: PathBuf,
    /// Foreground probability map (default: Gaussian fit to the pre-segmentation).
    #[arg(long)]
    prob: Option<PathBuf>,
    #[arg(long)]
    preseg: PathBuf,
    #[arg(long, default_value_t = 1)]
    label: u8,
    #[command(flatten)]
    energy: EnergyArgs,
    #[command(flatten)]
    gvf: GvfArgs,
    /// Output 0/1 label volume.
    #[arg(long)]
    out: PathBuf,
    /// Ground truth to score the result against (label 1 or --label).
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MultiCmd {
    #[arg(long)]
    scene: PathBuf,
    /// Output label volume.
    #[arg(long)]
    out: PathBuf,
    /// Constraint verification report (default: stdout only).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MetricsCmd {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Score only this label (default: every label present).
    #[arg(long)]
    label: Option<u8>,
}

#[derive(Args, Debug)]
struct PerturbCmd {
    #[arg(long)]
    preseg: PathBuf,
    /// Displacement standard deviation in voxels.
    #[arg(long)]
    sigma: f64,
    /// Control points per axis (default 6 per axis).
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SensitivityCmd {
    #[arg(long, default_value = "c-shape")]
    kind: PhantomKind,
    #[arg(long, value_delimiter = ',', default_value = "64,64")]
    dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,2,5,10")]
    sigmas: Vec<f64>,
    /// Seeds averaged per row.
    #[arg(long, default_value_t = 10)]
    seeds: usize,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    /// Erosion (mm) of the ground truth giving the unperturbed pre-segmentation.
    #[arg(long, default_value_t = 2.0)]
    erosion: f64,
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    #[arg(long, default_value_t = 0.02)]
    hole_rate: f64,
    #[command(flatten)]
    energy: EnergyArgs,
    #[command(flatten)]
    gvf: GvfArgs,
    /// CSV output (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SolveGraphCmd {
    /// Graph in the text format of `SExcessGraph::to_text`.
    #[arg(long)]
    graph: PathBuf,
    /// Writes the objective and the source set, one vertex per line.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code: 0 on success, 1 on failure, 2 on usage
/// errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn read_labels(path: &Path) -> Result<LabelVolume> {
    read_volume(path)?.into_labels()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Phantom(c) => phantom(c),
        Command::Gvf(c) => gvf_cmd(c),
        Command::Segment(c) => segment_cmd(c),
        Command::SegmentMulti(c) => multi(c),
        Command::Metrics(c) => {
            let (a, b) = (read_labels(&c.a)?, read_labels(&c.b)?);
            print!("{}", evaluate(&a, &b, c.label)?);
            Ok(())
        }
        Command::Perturb(c) => {
            let pre = read_labels(&c.preseg)?;
            let grid = c.grid.unwrap_or_else(|| vec![6; pre.shape().ndim()]);
            let out = perturb_labels(&pre, &PerturbParams::new(&grid, c.sigma, c.seed))?;
            write_volume(&out, &c.out)
        }
        Command::Sensitivity(c) => sensitivity(c),
        Command::SolveGraph(c) => {
            let text = fs::read_to_string(&c.graph).map_err(|e| Error::io(&c.graph, e))?;
            let g = SExcessGraph::from_text(&text)?;
            let cut = solve_s_excess(&g)?;
            let members: Vec<usize> = (0..g.len()).filter(|&v| cut.source_set[v]).collect();
            println!(
                "objective={} max_flow={} source_size={}",
                cut.objective,
                cut.flow_value,
                members.len()
            );
            if let Some(out) = c.out {
                let mut s = format!("objective {}\n", cut.objective);
                for v in members {
                    s.push_str(&format!("{v}\n"));
                }
                write_text(&out, &s)?;
            }
            Ok(())
        }
    }
}

fn phantom(c: PhantomCmd) -> Result<()> {
    let mut spec = PhantomSpec::new(c.kind, &c.dims);
    if let Some(s) = c.spacing {
        spec.spacing = s;
    }
    if let Some(r) = c.radius {
        spec.radius = r;
    }
    if let Some(r) = c.inner_radius {
        spec.inner_radius = r;
    }
    if let Some(g) = c.gap {
        spec.gap = g;
    }
    spec.contrast = c.contrast;
    spec.noise = c.noise;
    spec.hole_rate = c.hole_rate;
    spec.hole_radius = c.hole_radius;
    let ph = make_phantom(&spec, c.seed)?;
    write_volume(&ph.ground_truth, &c.out)?;
    if let Some(p) = c.image {
        write_volume(&ph.observation, p)?;
    }
    if let Some(prefix) = c.prob_prefix {
        for (id, p) in &ph.prob {
            write_volume(p, format!("{prefix}{id}.svol"))?;
        }
    }
    let counts: Vec<String> = ph
        .ground_truth
        .object_labels()
        .iter()
        .map(|&l| format!("label{}={}", l, ph.ground_truth.count(l)))
        .collect();
    println!(
        "dims={:?} {}",
        ph.ground_truth.shape().dims(),
        counts.join(" ")
    );
    Ok(())
}

fn gvf_cmd(c: GvfCmd) -> Result<()> {
    let pre = read_labels(&c.preseg)?;
    let prior = gvf::build_prior(&pre, c.label, &c.gvf.params())?;
    println!(
        "iterations={} converged={} dt={:.6} core={} confined={}",
        prior.report.iterations,
        prior.report.converged,
        prior.report.dt,
        prior.flow.core_count(),
        prior.confined
    );
    if let Some(p) = c.out_flow {
        let v = Volume::from_vec(pre.shape().clone(), prior.flow.pointers().to_vec())?;
        write_volume(&v, p)?;
    }
    if let Some(p) = c.out_core {
        write_volume(&prior.flow.core_mask(), p)?;
    }
    if let Some(p) = c.out_magnitude {
        let n = pre.len();
        let mags = (0..n).map(|q| prior.field.magnitude(q) as f32).collect();
        write_volume(&Volume::from_vec(pre.shape().clone(), mags)?, p)?;
    }
    debug_assert!(prior.flow.pointers().contains(&CORE));
    Ok(())
}

fn segment_cmd(c: SegmentCmd) -> Result<()> {
    let image = load_scalar(&c.image)?;
    let prob = c.prob.as_deref().map(load_scalar).transpose()?;
    let pre = read_labels(&c.preseg)?;
    let params = c.energy.params(&c.gvf)?;
    let input = SegmentInput {
        image: &image,
        prob: prob.as_ref(),
        preseg: &pre,
        label: c.label,
    };
    let seg = segment(&input, &params)?;
    write_volume(&seg.labels, &c.out)?;
    println!(
        "energy={} foreground={} prior_violations={}",
        seg.energy,
        seg.labels.count(1),
        seg.prior_violations
    );
    if let Some(t) = c.truth {
        let truth = read_labels(&t)?;
        let truth = LabelVolume::from_mask(truth.shape().clone(), &truth.mask(c.label))?;
        println!(
            "dsc={:.6} assd_mm={:.6}",
            dsc(&truth, &seg.labels, 1)?,
            assd(&truth, &seg.labels, 1)?
        );
    }
    Ok(())
}

fn multi(c: MultiCmd) -> Result<()> {
    let scene = Scene::load(&c.scene)?;
    let res = scene.run()?;
    write_volume(&res.solution.labels, &c.out)?;
    let mut text = res.report.to_string();
    for (id, mask) in res.solution.masks.ids.iter().zip(&res.solution.masks.masks) {
        text.push_str(&format!(
            "object {} voxels={} path_violations={}\n",
            id,
            mask.iter().filter(|&&x| x).count(),
            res.path_violations
                .iter()
                .find(|(i, _)| i == id)
                .map_or(0, |(_, v)| *v)
        ));
    }
    if res.solution.unresolved_overlaps > 0 {
        text.push_str(&format!(
            "unresolved overlaps: {}\n",
            res.solution.unresolved_overlaps
        ));
    }
    print!("{text}");
    if let Some(p) = c.report {
        write_text(&p, &text)?;
    }
    if !res.report.is_satisfied() {
        return Err(Error::Config("constraint violations in the result".into()));
    }
    Ok(())
}

fn sensitivity(c: SensitivityCmd) -> Result<()> {
    let mut cfg = SensitivityConfig::c_shape(&c.dims);
    cfg.phantom = PhantomSpec::new(c.kind, &c.dims)
        .with_noise(c.noise)
        .with_holes(c.hole_rate);
    cfg.sigmas = c.sigmas;
    cfg.seeds = c.seeds;
    cfg.base_seed = c.seed;
    if let Some(g) = c.grid {
        cfg.grid = g;
    }
    cfg.erosion = c.erosion;
    cfg.segment = c.energy.params(&c.gvf)?;
    let csv = to_csv(&sensitivity_experiment(&cfg)?);
    match c.out {
        Some(p) => write_text(&p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}
