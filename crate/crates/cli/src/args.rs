use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pgfield::FieldKind;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "pgfield",
    version,
    about = "Exact analysis of policy-gradient update fields on finite episodic MDPs"
)]
pub struct Cli {
    /// Seed for Monte Carlo runs and random MDPs.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads for sweeps and simulation.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: u64,

    /// Output format; each subcommand has its own default.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the update fields and both objectives at each (θ, γ).
    Analyze(AnalyzeArgs),
    /// Jacobian symmetry defect of a field over a γ list.
    Symmetry(SymmetryArgs),
    /// Fixed-step ascent along a field, with scores at the end point.
    Flow(FlowArgs),
    /// Loop integral of a field around a rectangle in a 2-parameter slice.
    Circulation(CirculationArgs),
    /// Monte Carlo gradient estimates against the exact fields.
    Mc(McArgs),
    /// List or export the built-in MDPs.
    #[command(subcommand)]
    Gallery(GalleryCommand),
    /// Check an MDP for structural and episodicity violations.
    Validate(ModelArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyChoice {
    Softmax,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FieldChoice {
    Discounted,
    Biased,
    BiasedOccupancy,
    Undiscounted,
}

impl From<FieldChoice> for FieldKind {
    fn from(c: FieldChoice) -> Self {
        match c {
            FieldChoice::Discounted => FieldKind::GradDiscounted,
            FieldChoice::Biased => FieldKind::GradBiased,
            FieldChoice::BiasedOccupancy => FieldKind::GradBiasedViaLemma,
            FieldChoice::Undiscounted => FieldKind::GradUndiscounted,
        }
    }
}

#[derive(Debug, Clone, Args)]
#[group(id = "source", required = true, multiple = false)]
pub struct SourceArgs {
    /// Built-in MDP (see `gallery list`).
    #[arg(long)]
    pub gallery: Option<String>,

    /// MDP file in the JSON schema.
    #[arg(long)]
    pub mdp: Option<PathBuf>,

    /// Random MDP with this many states (terminal included) and actions,
    /// drawn from `--seed`.
    #[arg(long, value_name = "STATES,ACTIONS", value_parser = parse_shape)]
    pub random: Option<Shape>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[command(flatten)]
    pub source: SourceArgs,

    /// Policy parameterisation. Defaults to the gallery entry's own policy,
    /// and for files to sigmoid with two actions and softmax otherwise.
    #[arg(long, value_enum)]
    pub policy: Option<PolicyChoice>,

    /// Chain length between s1's a2 branch and the +2 reward (figure2 only).
    #[arg(long, default_value_t = 4)]
    pub delay: usize,
}

#[derive(Debug, Clone, Args)]
pub struct PointArgs {
    /// Comma-separated discount factors. Defaults to the MDP's own.
    #[arg(long, value_parser = parse_gammas, allow_hyphen_values = true)]
    pub gamma: Option<Gammas>,

    /// Comma-separated parameter vector. Defaults to zeros.
    #[arg(long, value_parser = parse_floats, allow_hyphen_values = true, conflicts_with = "grid")]
    pub theta: Option<Floats>,

    /// `start:stop:count` for one parameter; repeat once per parameter.
    #[arg(long, value_parser = parse_grid, allow_hyphen_values = true)]
    pub grid: Vec<GridAxis>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub points: PointArgs,

    /// Fields to evaluate.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [FieldChoice::Discounted, FieldChoice::Biased, FieldChoice::Undiscounted])]
    pub fields: Vec<FieldChoice>,

    /// Use advantages in place of action values.
    #[arg(long)]
    pub advantage: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SymmetryArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub points: PointArgs,

    #[arg(long, value_enum, default_value_t = FieldChoice::Biased)]
    pub field: FieldChoice,

    /// Central-difference step.
    #[arg(long, default_value_t = pgfield::diagnostics::DEFAULT_STEP)]
    pub h: f64,
}

#[derive(Debug, Clone, Args)]
pub struct FlowArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub points: PointArgs,

    #[arg(long, value_enum, default_value_t = FieldChoice::Biased)]
    pub field: FieldChoice,

    /// Step size.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,

    #[arg(long, default_value_t = 200_000)]
    pub max_iters: usize,

    #[arg(long, default_value_t = 1e-8)]
    pub tol_grad: f64,

    /// Keep every n-th iterate in the trajectory.
    #[arg(long, default_value_t = 100)]
    pub decimation: usize,
}

#[derive(Debug, Clone, Args)]
pub struct CirculationArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    #[arg(long, value_parser = parse_gammas, allow_hyphen_values = true)]
    pub gamma: Option<Gammas>,

    /// Base point for the slice; defaults to zeros.
    #[arg(long, value_parser = parse_floats, allow_hyphen_values = true)]
    pub theta: Option<Floats>,

    #[arg(long, value_enum, default_value_t = FieldChoice::Biased)]
    pub field: FieldChoice,

    /// `a1,b1,a2,b2`: the rectangle [a1, b1] × [a2, b2].
    #[arg(long, value_parser = parse_rect, allow_hyphen_values = true, default_value = "-1,1,-1,1")]
    pub rect: Rect,

    /// `i,j`: parameter indices spanning the slice.
    #[arg(long, value_parser = parse_slice, default_value = "0,1")]
    pub slice: Slice,

    /// Trapezoid subintervals per edge for the coarse pass.
    #[arg(long, default_value_t = 64)]
    pub steps: usize,
}

#[derive(Debug, Clone, Args)]
pub struct McArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    /// Single discount factor.
    #[arg(long)]
    pub gamma: Option<f64>,

    #[arg(long, value_parser = parse_floats, allow_hyphen_values = true)]
    pub theta: Option<Floats>,

    #[arg(long, default_value_t = 10_000)]
    pub episodes: usize,

    /// Only the γ^t-weighted estimator.
    #[arg(long, conflicts_with = "unweighted")]
    pub weighted: bool,

    /// Only the unweighted estimator.
    #[arg(long)]
    pub unweighted: bool,

    /// Override the episode length cap.
    #[arg(long)]
    pub horizon_cap: Option<usize>,

    /// Also write every trajectory here as JSON lines.
    #[arg(long)]
    pub trajectories: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum GalleryCommand {
    /// Names, provenance and expected behaviour of the built-in MDPs.
    List,
    /// Write a built-in MDP to a file in the JSON schema.
    Export {
        name: String,
        path: PathBuf,
        #[arg(long, default_value_t = 4)]
        delay: usize,
    },
}

// ---------------------------------------------------------------------------
// Value types and parsers

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Shape {
    pub states: usize,
    pub actions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Floats(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gammas(pub Vec<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridAxis {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl GridAxis {
    pub fn points(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let span = self.stop - self.start;
        (0..self.count)
            .map(|k| self.start + span * k as f64 / (self.count - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rect(pub [f64; 4]);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Slice(pub usize, pub usize);

fn split_numbers<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(|part| {
            let part = part.trim();
            part.parse::<T>().map_err(|_| format!("`{part}` is not a valid {what}"))
        })
        .collect()
}

fn parse_floats(s: &str) -> Result<Floats, String> {
    let v: Vec<f64> = split_numbers(s, "number")?;
    if let Some(x) = v.iter().find(|x| !x.is_finite()) {
        return Err(format!("{x} is not finite"));
    }
    Ok(Floats(v))
}

fn parse_gammas(s: &str) -> Result<Gammas, String> {
    let v = parse_floats(s)?.0;
    if let Some(g) = v.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(format!("discount {g} outside [0, 1]"));
    }
    Ok(Gammas(v))
}

fn parse_grid(s: &str) -> Result<GridAxis, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err("expected start:stop:count".into());
    }
    let num = |p: &str| p.trim().parse::<f64>().map_err(|_| format!("`{p}` is not a number"));
    let (start, stop) = (num(parts[0])?, num(parts[1])?);
    let count: usize = parts[2]
        .trim()
        .parse()
        .map_err(|_| format!("`{}` is not a count", parts[2]))?;
    if count == 0 || !start.is_finite() || !stop.is_finite() {
        return Err("grid needs finite endpoints and count ≥ 1".into());
    }
    Ok(GridAxis { start, stop, count })
}

fn parse_rect(s: &str) -> Result<Rect, String> {
    let v = parse_floats(s)?.0;
    let [a1, b1, a2, b2]: [f64; 4] = v.try_into().map_err(|_| "expected a1,b1,a2,b2".to_string())?;
    if !(a1 < b1 && a2 < b2) {
        return Err("rectangle needs a1 < b1 and a2 < b2".into());
    }
    Ok(Rect([a1, b1, a2, b2]))
}

fn parse_slice(s: &str) -> Result<Slice, String> {
    let v: Vec<usize> = split_numbers(s, "parameter index")?;
    match v.as_slice() {
        [i, j] if i != j => Ok(Slice(*i, *j)),
        [_, _] => Err("slice indices must differ".into()),
        _ => Err("expected i,j".into()),
    }
}

fn parse_shape(s: &str) -> Result<Shape, String> {
    let v: Vec<usize> = split_numbers(s, "count")?;
    match v.as_slice() {
        [states, actions] if *states >= 2 && *actions >= 1 => Ok(Shape {
            states: *states,
            actions: *actions,
        }),
        [_, _] => Err("need at least 2 states and 1 action".into()),
        _ => Err("expected STATES,ACTIONS".into()),
    }
}
