use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use pgfield::diagnostics::{self, JacobianMethod, Rectangle};
use pgfield::dynamics::{self, FlowOptions, StopReason};
use pgfield::fields::{FieldForm, ParameterField, VectorField};
use pgfield::gallery;
use pgfield::mdp::{load_mdp, save_mdp};
use pgfield::sampling::{self, Estimator, SimulateOptions};
use pgfield::{FieldKind, Policy, TabularMdp};

use crate::args::*;
use crate::output::{indexed, num, opt_num, Report, Status, Table};
use crate::CliError;

type CliResult<T> = Result<T, CliError>;

const RANDOM_REWARD_SCALE: f64 = 1.0;
const RANDOM_MIN_EXIT: f64 = 0.1;

pub(crate) fn dispatch(cli: &Cli) -> CliResult<Report> {
    let ctx = Context {
        seed: cli.seed,
        jobs: cli.jobs as usize,
    };
    match &cli.command {
        Command::Analyze(a) => analyze(&ctx, a),
        Command::Symmetry(a) => symmetry(&ctx, a),
        Command::Flow(a) => flow(&ctx, a),
        Command::Circulation(a) => circulation(&ctx, a),
        Command::Mc(a) => mc(&ctx, a),
        Command::Gallery(GalleryCommand::List) => gallery_list(&ctx),
        Command::Gallery(GalleryCommand::Export { name, path, delay }) => gallery_export(&ctx, name, path, *delay),
        Command::Validate(a) => validate(&ctx, a),
    }
}

struct Context {
    seed: u64,
    jobs: usize,
}

impl Context {
    fn config(&self, command: &str, model: Option<&Model>, options: Value) -> Value {
        let mut cfg = json!({
            "command": command,
            "seed": self.seed,
            "jobs": self.jobs,
            "options": options,
        });
        if let Some(m) = model {
            cfg["source"] = m.source.clone();
            cfg["policy"] = json!({"kind": m.policy.kind(), "n_params": m.policy.n_params()});
        }
        cfg
    }

    /// Map `f` over `items` on `jobs` workers, keeping input order.
    fn par_map<T, R, F>(&self, items: &[T], f: F) -> CliResult<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> CliResult<R> + Sync + Send,
    {
        if self.jobs <= 1 {
            return items.iter().map(f).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {} workers: {e}", self.jobs)))?;
        pool.install(|| items.par_iter().map(f).collect())
    }
}

// ---------------------------------------------------------------------------
// Model and point resolution

struct Model {
    mdp: TabularMdp,
    policy: Policy,
    default_gamma: f64,
    source: Value,
}

fn build_model(ctx: &Context, args: &ModelArgs) -> CliResult<Model> {
    let src = &args.source;
    let (mdp, entry_policy, default_gamma, source) = if let Some(name) = &src.gallery {
        let entry = gallery_entry(name, args.delay)?;
        let mut source = json!({"gallery": name});
        if name == "figure2" {
            source["delay"] = json!(args.delay);
        }
        (entry.mdp, Some(entry.policy), entry.gamma_probe, source)
    } else if let Some(path) = &src.mdp {
        let mdp = load_mdp(path)?;
        let gamma = mdp.gamma;
        (mdp, None, gamma, json!({"mdp": path}))
    } else if let Some(shape) = src.random {
        let entry = gallery::random_mdp(shape.states, shape.actions, ctx.seed, RANDOM_REWARD_SCALE, RANDOM_MIN_EXIT)?;
        let source = json!({
            "random": {"states": shape.states, "actions": shape.actions, "seed": ctx.seed,
                       "reward_scale": RANDOM_REWARD_SCALE, "min_exit_prob": RANDOM_MIN_EXIT}
        });
        (entry.mdp, Some(entry.policy), entry.gamma_probe, source)
    } else {
        return Err(CliError::Usage("one of --gallery, --mdp or --random is required".into()));
    };
    let policy = match (args.policy, entry_policy) {
        (Some(PolicyChoice::Softmax), _) => Policy::softmax(&mdp),
        (Some(PolicyChoice::Sigmoid), _) => Policy::sigmoid_per_state(&mdp)?,
        (None, Some(p)) => p,
        (None, None) if mdp.n_actions() == 2 => Policy::sigmoid_per_state(&mdp)?,
        (None, None) => Policy::softmax(&mdp),
    };
    Ok(Model {
        mdp,
        policy,
        default_gamma,
        source,
    })
}

fn gallery_entry(name: &str, delay: usize) -> CliResult<gallery::GalleryEntry> {
    if name == "figure2" {
        return Ok(gallery::figure2(delay, 0.5)?);
    }
    gallery::by_name(name).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown gallery entry `{name}`; available: {}",
            gallery::NAMES.join(", ")
        ))
    })
}

fn gammas(model: &Model, given: &Option<Gammas>) -> Vec<f64> {
    given.as_ref().map_or_else(|| vec![model.default_gamma], |g| g.0.clone())
}

fn check_theta(theta: &[f64], n: usize, flag: &str) -> CliResult<()> {
    if theta.len() != n {
        return Err(CliError::Usage(format!(
            "{flag} has {} entries but the policy has {n} parameters",
            theta.len()
        )));
    }
    Ok(())
}

fn thetas(model: &Model, points: &PointArgs) -> CliResult<Vec<Vec<f64>>> {
    let n = model.policy.n_params();
    if let Some(t) = &points.theta {
        check_theta(&t.0, n, "--theta")?;
        return Ok(vec![t.0.clone()]);
    }
    if points.grid.is_empty() {
        return Ok(vec![vec![0.0; n]]);
    }
    if points.grid.len() != n {
        return Err(CliError::Usage(format!(
            "--grid given {} times but the policy has {n} parameters",
            points.grid.len()
        )));
    }
    let mut out = vec![Vec::new()];
    for axis in &points.grid {
        let pts = axis.points();
        out = out
            .into_iter()
            .flat_map(|prefix| {
                pts.iter().map(move |&x| {
                    let mut p = prefix.clone();
                    p.push(x);
                    p
                })
            })
            .collect();
    }
    Ok(out)
}

fn point_grid(gs: &[f64], ts: &[Vec<f64>]) -> Vec<(f64, Vec<f64>)> {
    gs.iter().flat_map(|&g| ts.iter().map(move |t| (g, t.clone()))).collect()
}

fn push_nums(row: &mut Vec<String>, xs: &[f64]) {
    row.extend(xs.iter().map(|&x| num(x)));
}

// ---------------------------------------------------------------------------
// analyze

#[derive(Serialize)]
struct AnalyzeRow {
    gamma: f64,
    theta: Vec<f64>,
    field: &'static str,
    gradient: Vec<f64>,
    j_gamma: f64,
    j: f64,
}

fn analyze(ctx: &Context, a: &AnalyzeArgs) -> CliResult<Report> {
    let model = build_model(ctx, &a.model)?;
    let gs = gammas(&model, &a.points.gamma);
    let ts = thetas(&model, &a.points)?;
    let kinds: Vec<FieldKind> = a.fields.iter().map(|&f| f.into()).collect();
    let form = if a.advantage { FieldForm::Advantage } else { FieldForm::Q };
    let points = point_grid(&gs, &ts);

    let blocks = ctx.par_map(&points, |(gamma, theta)| {
        let j_gamma = pgfield::fields::objective(&model.mdp, &model.policy, theta, *gamma)?;
        let j = pgfield::fields::objective(&model.mdp, &model.policy, theta, 1.0)?;
        kinds
            .iter()
            .map(|&kind| {
                let field = ParameterField::new(kind, &model.mdp, &model.policy, *gamma).with_form(form);
                Ok(AnalyzeRow {
                    gamma: *gamma,
                    theta: theta.clone(),
                    field: kind.name(),
                    gradient: field.eval(theta)?,
                    j_gamma,
                    j,
                })
            })
            .collect::<CliResult<Vec<_>>>()
    })?;
    let rows: Vec<AnalyzeRow> = blocks.into_iter().flatten().collect();

    let n = model.policy.n_params();
    let mut table = Table::new(
        std::iter::once("gamma".to_string())
            .chain(indexed("theta", n))
            .chain(std::iter::once("field".to_string()))
            .chain(indexed("g", n))
            .chain(["j_gamma".to_string(), "j".to_string()]),
    );
    for r in &rows {
        let mut row = vec![num(r.gamma)];
        push_nums(&mut row, &r.theta);
        row.push(r.field.to_string());
        push_nums(&mut row, &r.gradient);
        row.push(num(r.j_gamma));
        row.push(num(r.j));
        table.push(row);
    }
    let config = ctx.config(
        "analyze",
        Some(&model),
        json!({
            "gammas": gs, "thetas": ts, "grid": a.points.grid,
            "fields": kinds.iter().map(|k| k.name()).collect::<Vec<_>>(),
            "form": if a.advantage { "advantage" } else { "q" },
        }),
    );
    Ok(Report::new(config, rows, Format::Csv).with_table(table))
}

// ---------------------------------------------------------------------------
// symmetry

#[derive(Serialize)]
struct SymmetryRow {
    gamma: f64,
    report: diagnostics::SymmetryReport,
}

fn symmetry(ctx: &Context, a: &SymmetryArgs) -> CliResult<Report> {
    if !(a.h > 0.0) {
        return Err(CliError::Usage(format!("--h must be > 0, got {}", a.h)));
    }
    let model = build_model(ctx, &a.model)?;
    let gs = gammas(&model, &a.points.gamma);
    let ts = thetas(&model, &a.points)?;
    let kind: FieldKind = a.field.into();
    let method = JacobianMethod::FiniteDifference { h: a.h };
    let points = point_grid(&gs, &ts);
    let rows = ctx.par_map(&points, |(gamma, theta)| {
        let field = ParameterField::new(kind, &model.mdp, &model.policy, *gamma);
        Ok(SymmetryRow {
            gamma: *gamma,
            report: diagnostics::jacobian(&field, theta, method)?,
        })
    })?;

    let n = model.policy.n_params();
    let mut table = Table::new(
        std::iter::once("gamma".to_string())
            .chain(indexed("theta", n))
            .chain(["field", "defect", "method", "h"].map(String::from)),
    );
    for r in &rows {
        let mut row = vec![num(r.gamma)];
        push_nums(&mut row, &r.report.theta);
        row.push(kind.name().to_string());
        row.push(num(r.report.defect));
        row.push(method.name().to_string());
        row.push(num(a.h));
        table.push(row);
    }
    let config = ctx.config(
        "symmetry",
        Some(&model),
        json!({"gammas": gs, "thetas": ts, "grid": a.points.grid, "field": kind.name(), "method": method}),
    );
    Ok(Report::new(config, rows, Format::Csv).with_table(table))
}

// ---------------------------------------------------------------------------
// flow

#[derive(Serialize)]
struct FlowRow {
    gamma: f64,
    theta0: Vec<f64>,
    result: dynamics::FlowResult,
}

fn flow(ctx: &Context, a: &FlowArgs) -> CliResult<Report> {
    if !(a.alpha > 0.0 && a.alpha.is_finite()) {
        return Err(CliError::Usage(format!("--alpha must be a positive number, got {}", a.alpha)));
    }
    let model = build_model(ctx, &a.model)?;
    let gs = gammas(&model, &a.points.gamma);
    let ts = thetas(&model, &a.points)?;
    let kind: FieldKind = a.field.into();
    let opts = FlowOptions {
        step_size: a.alpha,
        max_iters: a.max_iters,
        tol_grad: a.tol_grad,
        decimation: a.decimation.max(1),
        ..FlowOptions::default()
    };
    let points = point_grid(&gs, &ts);
    let rows = ctx.par_map(&points, |(gamma, theta0)| {
        let field = ParameterField::new(kind, &model.mdp, &model.policy, *gamma);
        Ok(FlowRow {
            gamma: *gamma,
            theta0: theta0.clone(),
            result: dynamics::flow(&field, theta0, &opts)?,
        })
    })?;

    let mut warnings = Vec::new();
    for r in &rows {
        match r.result.stop {
            StopReason::Diverged => warnings.push(format!(
                "flow from theta0 = {:?} at gamma = {} diverged after {} iterations",
                r.theta0, r.gamma, r.result.iterations
            )),
            StopReason::MaxIters => warnings.push(format!(
                "flow from theta0 = {:?} at gamma = {} hit the iteration limit without converging",
                r.theta0, r.gamma
            )),
            _ => {}
        }
    }

    let n = model.policy.n_params();
    let mut table = Table::new(
        std::iter::once("gamma".to_string())
            .chain(indexed("start_theta", n))
            .chain(["stop", "iterations", "converged", "diverged"].map(String::from))
            .chain(indexed("final_theta", n))
            .chain(
                [
                    "j_gamma",
                    "j",
                    "rounded_j_gamma",
                    "rounded_j",
                    "envelope_j_gamma_min",
                    "envelope_j_gamma_max",
                    "envelope_j_min",
                    "envelope_j_max",
                ]
                .map(String::from),
            ),
    );
    for r in &rows {
        let res = &r.result;
        let mut row = vec![num(r.gamma)];
        push_nums(&mut row, &r.theta0);
        row.push(serde_json::to_value(res.stop).expect("stop reason serialises").as_str().unwrap_or_default().to_string());
        row.push(res.iterations.to_string());
        row.push(res.converged.to_string());
        row.push(res.diverged.to_string());
        push_nums(&mut row, &res.final_theta);
        let s = &res.scores;
        row.push(num(s.j_gamma));
        row.push(num(s.j));
        row.push(opt_num(s.rounded.as_ref().map(|d| d.j_gamma)));
        row.push(opt_num(s.rounded.as_ref().and_then(|d| d.j)));
        let env = s.envelope.as_ref();
        row.push(opt_num(env.map(|e| e.j_gamma_min)));
        row.push(opt_num(env.map(|e| e.j_gamma_max)));
        row.push(opt_num(env.map(|e| e.j_min)));
        row.push(opt_num(env.map(|e| e.j_max)));
        table.push(row);
    }
    let config = ctx.config(
        "flow",
        Some(&model),
        json!({"gammas": gs, "theta0": ts, "grid": a.points.grid, "field": kind.name(), "flow": opts}),
    );
    let mut report = Report::new(config, rows, Format::Json).with_table(table);
    report.warnings = warnings;
    Ok(report)
}

// ---------------------------------------------------------------------------
// circulation

#[derive(Serialize)]
struct CirculationRow {
    gamma: f64,
    /// `|value|` exceeds the quadrature error bound.
    nonzero: bool,
    report: diagnostics::CirculationReport,
}

fn circulation(ctx: &Context, a: &CirculationArgs) -> CliResult<Report> {
    let model = build_model(ctx, &a.model)?;
    let n = model.policy.n_params();
    let Slice(i, j) = a.slice;
    if i >= n || j >= n {
        return Err(CliError::Usage(format!(
            "--slice {i},{j} out of range for {n} parameters"
        )));
    }
    if a.steps < diagnostics::MIN_CIRCULATION_STEPS {
        return Err(CliError::Usage(format!(
            "--steps must be at least {}",
            diagnostics::MIN_CIRCULATION_STEPS
        )));
    }
    let base = match &a.theta {
        Some(t) => {
            check_theta(&t.0, n, "--theta")?;
            t.0.clone()
        }
        None => vec![0.0; n],
    };
    let [a1, b1, a2, b2] = a.rect.0;
    let rect = Rectangle {
        base,
        axes: (i, j),
        lo: [a1, a2],
        hi: [b1, b2],
    };
    let gs = gammas(&model, &a.gamma);
    let kind: FieldKind = a.field.into();
    let rows = ctx.par_map(&gs, |gamma| {
        let field = ParameterField::new(kind, &model.mdp, &model.policy, *gamma);
        let report = diagnostics::circulation(&field, &rect, a.steps)?;
        Ok(CirculationRow {
            gamma: *gamma,
            nonzero: report.value.abs() > report.error_bound,
            report,
        })
    })?;

    let mut table = Table::new(
        ["gamma", "field", "value", "error_bound", "coarse_value", "extrapolated", "steps", "nonzero"].map(String::from),
    );
    for r in &rows {
        let c = &r.report;
        table.push(vec![
            num(r.gamma),
            kind.name().to_string(),
            num(c.value),
            num(c.error_bound),
            num(c.coarse_value),
            num(c.extrapolated),
            c.steps.to_string(),
            r.nonzero.to_string(),
        ]);
    }
    let config = ctx.config(
        "circulation",
        Some(&model),
        json!({"gammas": gs, "field": kind.name(), "rectangle": rect, "steps": a.steps}),
    );
    Ok(Report::new(config, rows, Format::Json).with_table(table))
}

// ---------------------------------------------------------------------------
// mc

#[derive(Serialize)]
struct McEntry {
    report: sampling::EstimatorReport,
    grad_discounted: Vec<f64>,
    grad_biased: Vec<f64>,
    z_discounted: Vec<f64>,
    z_biased: Vec<f64>,
}

#[derive(Serialize)]
struct McResult {
    gamma: f64,
    theta: Vec<f64>,
    episodes: usize,
    horizon_cap: usize,
    truncated: usize,
    estimators: Vec<McEntry>,
}

fn mc(ctx: &Context, a: &McArgs) -> CliResult<Report> {
    let model = build_model(ctx, &a.model)?;
    let gamma = a.gamma.unwrap_or(model.default_gamma);
    if !(0.0..=1.0).contains(&gamma) {
        return Err(CliError::Usage(format!("--gamma {gamma} outside [0, 1]")));
    }
    if a.episodes < 2 {
        return Err(CliError::Usage("--episodes must be at least 2".into()));
    }
    let n = model.policy.n_params();
    let theta = match &a.theta {
        Some(t) => {
            check_theta(&t.0, n, "--theta")?;
            t.0.clone()
        }
        None => vec![0.0; n],
    };
    let estimators = match (a.weighted, a.unweighted) {
        (true, false) => vec![Estimator::Weighted],
        (false, true) => vec![Estimator::Unweighted],
        _ => vec![Estimator::Weighted, Estimator::Unweighted],
    };
    let opts = SimulateOptions {
        horizon_cap: a.horizon_cap,
        jobs: ctx.jobs,
    };
    let batch = sampling::simulate(&model.mdp, &model.policy, &theta, a.episodes, ctx.seed, opts)?;
    if let Some(path) = &a.trajectories {
        let file = std::fs::File::create(path).map_err(|source| CliError::Write {
            path: path.clone(),
            source,
        })?;
        let mut w = std::io::BufWriter::new(file);
        batch
            .write_jsonl(&model.mdp, &mut w)
            .and_then(|()| std::io::Write::flush(&mut w))
            .map_err(|source| CliError::Write {
                path: path.clone(),
                source,
            })?;
    }
    let grad_discounted = pgfield::fields::grad_discounted(&model.mdp, &model.policy, &theta, gamma)?;
    let grad_biased = pgfield::fields::grad_biased(&model.mdp, &model.policy, &theta, gamma)?;
    let entries = estimators
        .iter()
        .map(|&est| {
            let report = sampling::mc_gradient(&batch, &model.policy, &theta, gamma, est)?;
            Ok(McEntry {
                z_discounted: report.z_scores(&grad_discounted),
                z_biased: report.z_scores(&grad_biased),
                grad_discounted: grad_discounted.clone(),
                grad_biased: grad_biased.clone(),
                report,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut table = Table::new(
        [
            "estimator",
            "component",
            "mean",
            "std_error",
            "grad_discounted",
            "grad_biased",
            "z_discounted",
            "z_biased",
        ]
        .map(String::from),
    );
    for e in &entries {
        let name = match e.report.estimator {
            Estimator::Weighted => "weighted",
            Estimator::Unweighted => "unweighted",
        };
        for k in 0..n {
            table.push(vec![
                name.to_string(),
                k.to_string(),
                num(e.report.mean[k]),
                num(e.report.std_error[k]),
                num(e.grad_discounted[k]),
                num(e.grad_biased[k]),
                num(e.z_discounted[k]),
                num(e.z_biased[k]),
            ]);
        }
    }
    let truncated = batch.truncated();
    let config = ctx.config(
        "mc",
        Some(&model),
        json!({
            "gamma": gamma, "theta": theta, "episodes": a.episodes,
            "estimators": estimators, "horizon_cap": a.horizon_cap,
            "trajectories": a.trajectories,
        }),
    );
    let result = McResult {
        gamma,
        theta,
        episodes: a.episodes,
        horizon_cap: batch.horizon_cap,
        truncated,
        estimators: entries,
    };
    let mut report = Report::new(config, result, Format::Json).with_table(table);
    if truncated > 0 {
        report.warnings.push(format!(
            "{truncated} of {} episodes hit the horizon cap of {} steps",
            a.episodes, batch.horizon_cap
        ));
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// gallery

#[derive(Serialize)]
struct GalleryRow {
    #[serde(flatten)]
    entry: gallery::GalleryEntry,
    states: usize,
    actions: usize,
    params: usize,
}

fn gallery_list(ctx: &Context) -> CliResult<Report> {
    let rows: Vec<GalleryRow> = gallery::NAMES
        .iter()
        .map(|name| {
            let entry = gallery::by_name(name).expect("listed names resolve");
            GalleryRow {
                states: entry.mdp.n_states(),
                actions: entry.mdp.n_actions(),
                params: entry.policy.n_params(),
                entry,
            }
        })
        .collect();
    let mut table = Table::new(
        ["name", "provenance", "gamma_probe", "states", "actions", "params", "expected_behavior"].map(String::from),
    );
    for r in &rows {
        table.push(vec![
            r.entry.name.clone(),
            serde_json::to_value(r.entry.provenance)
                .expect("provenance serialises")
                .as_str()
                .unwrap_or_default()
                .to_string(),
            num(r.entry.gamma_probe),
            r.states.to_string(),
            r.actions.to_string(),
            r.params.to_string(),
            r.entry.expected_behavior.clone(),
        ]);
    }
    let config = ctx.config("gallery list", None, json!({}));
    Ok(Report::new(config, rows, Format::Json).with_table(table))
}

fn gallery_export(ctx: &Context, name: &str, path: &std::path::Path, delay: usize) -> CliResult<Report> {
    let entry = gallery_entry(name, delay)?;
    save_mdp(&entry.mdp, path)?;
    let config = ctx.config("gallery export", None, json!({"name": name, "path": path, "delay": delay}));
    let result = json!({
        "name": entry.name,
        "path": path,
        "states": entry.mdp.n_states(),
        "actions": entry.mdp.n_actions(),
    });
    Ok(Report::new(config, result, Format::Json))
}

// ---------------------------------------------------------------------------
// validate

fn validate(ctx: &Context, a: &ModelArgs) -> CliResult<Report> {
    let (mdp, source) = if let Some(path) = &a.source.mdp {
        let text = std::fs::read_to_string(path).map_err(|source| pgfield::Error::Io {
            path: path.clone(),
            source,
        })?;
        (TabularMdp::from_json_str(&text)?, json!({"mdp": path}))
    } else {
        let m = build_model(ctx, a)?;
        (m.mdp, m.source)
    };
    let report = mdp.validate();
    let mut cfg = ctx.config("validate", None, json!({}));
    cfg["source"] = source;
    let valid = report.is_valid();
    let warnings: Vec<String> = report.warnings.iter().map(|w| w.to_string()).collect();
    let messages: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
    let result = json!({
        "valid": valid,
        "states": mdp.n_states(),
        "actions": mdp.n_actions(),
        "report": report,
        "messages": messages,
    });
    let mut out = Report::new(cfg, result, Format::Json);
    out.warnings = warnings;
    if !valid {
        out.status = Status::Invalid;
        out.warnings.extend(messages.into_iter().map(|m| format!("violation: {m}")));
    }
    Ok(out)
}
