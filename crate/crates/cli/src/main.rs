mod io;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use medianshape::fitters::{fit, FitConfig, FitInput, FitResult, Method, ShapeChart, ShapeKind};
use medianshape::levels::{LevelConfig, Reduction};
use medianshape::testkit::{gen_instance, InstanceData, InstanceKind, InstanceSpec};
use medianshape::{cost, Flat, Objective, ParamPoint, PointSet, VerticalSurfaces};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "medianshape", version, about = "Approximate L1/L2 shape fitting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a shape to a point file (or a flat file for flat-median).
    Fit(FitArgs),
    /// Generate a synthetic instance.
    Gen(GenArgs),
    /// Time the reduction and the full fit across input sizes.
    Bench(BenchArgs),
    /// Cost landscape over a 2D slice through the fitted optimum.
    PlotData(PlotArgs),
}

#[derive(Args, Clone)]
struct FitOpts {
    /// circle, sphere, cylinder, flat-median or two-lines.
    #[arg(long)]
    shape: String,
    #[arg(long, default_value = "l1", value_parser = parse_objective)]
    objective: Objective,
    #[arg(long, default_value_t = 0.2)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// pipeline, direct or oracle.
    #[arg(long, default_value = "pipeline", value_parser = parse_method)]
    method: Method,
    #[arg(long, default_value_t = 400_000)]
    budget: usize,
    /// Coarse grid cells per base axis (default depends on the shape).
    #[arg(long)]
    search_grid: Option<usize>,
    #[arg(long, default_value_t = 16)]
    top_k: usize,
    #[arg(long, default_value_t = 4.0)]
    chernoff_c: f64,
    #[arg(long, default_value_t = 1.0)]
    m_c: f64,
}

impl FitOpts {
    fn shape_kind(&self) -> Result<ShapeKind> {
        self.shape.parse().map_err(|e| anyhow!("{e}"))
    }

    fn config(&self) -> FitConfig {
        FitConfig {
            method: self.method,
            seed: self.seed,
            budget: self.budget,
            chernoff_c: self.chernoff_c,
            m_c: self.m_c,
            grid: self.search_grid,
            top_k: self.top_k,
            ..FitConfig::new(self.eps, self.objective)
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    opts: FitOpts,
    #[arg(long)]
    input: PathBuf,
    /// Write the JSON record here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// circle, sphere, cylinder, lines, two-lines or stack-1d.
    #[arg(long)]
    kind: String,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Outlier fraction in [0, 1).
    #[arg(long, default_value_t = 0.0)]
    outliers: f64,
    #[arg(long, default_value_t = 2.0)]
    box_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    opts: FitOpts,
    /// Comma-separated sizes, e.g. 1e3,1e4.
    #[arg(long)]
    sizes: String,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0.1)]
    outliers: f64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[command(flatten)]
    opts: FitOpts,
    #[arg(long)]
    input: PathBuf,
    /// Nodes per slice axis.
    #[arg(long, default_value_t = 21)]
    grid: usize,
    /// The two base axes spanning the slice, e.g. 0,1.
    #[arg(long, default_value = "0,1")]
    axes: String,
    /// Half-width of the slice around the optimum.
    #[arg(long, default_value_t = 0.5)]
    span: f64,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn parse_objective(s: &str) -> std::result::Result<Objective, String> {
    match s {
        "l1" => Ok(Objective::L1),
        "l2" => Ok(Objective::L2),
        _ => Err(format!("unknown objective {s:?} (expected l1 or l2)")),
    }
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    match s {
        "pipeline" => Ok(Method::Pipeline),
        "direct" => Ok(Method::Direct),
        "oracle" => Ok(Method::Oracle),
        _ => Err(format!("unknown method {s:?}")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ConfigEcho {
    shape: ShapeKind,
    input: String,
    fit: FitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Environment {
    version: String,
    seed: u64,
    timestamp: u64,
}

/// What `fit` writes: the fit result at top level plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunRecord {
    #[serde(flatten)]
    result: FitResult,
    config: ConfigEcho,
    environment: Environment,
}

enum Loaded {
    Points(PointSet),
    Flats(Vec<Flat>),
}

impl Loaded {
    fn input(&self) -> FitInput<'_> {
        match self {
            Loaded::Points(p) => FitInput::Points(p),
            Loaded::Flats(f) => FitInput::Flats(f),
        }
    }
}

fn load(path: &std::path::Path, kind: ShapeKind) -> Result<Loaded> {
    let text = io::read(path)?;
    let ctx = || format!("in {}", path.display());
    Ok(if kind == ShapeKind::FlatMedian {
        Loaded::Flats(io::parse_flats(&text).with_context(ctx)?)
    } else {
        Loaded::Points(io::parse_points(&text).with_context(ctx)?)
    })
}

/// Outcome of a command: exit code 0, or 3 when the search hit its budget.
struct Done {
    budget_flag: bool,
}

fn cmd_fit(args: FitArgs) -> Result<Done> {
    let kind = args.opts.shape_kind()?;
    let data = load(&args.input, kind)?;
    let cfg = args.opts.config();
    let result = fit(data.input(), kind, &cfg).map_err(|e| anyhow!("{e}"))?;
    let record = RunRecord {
        config: ConfigEcho {
            shape: kind,
            input: args.input.display().to_string(),
            fit: cfg,
        },
        environment: Environment {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        },
        result,
    };
    let mut json = serde_json::to_string_pretty(&record)?;
    json.push('\n');
    io::emit(args.output.as_deref(), &json)?;
    Ok(Done {
        budget_flag: record.result.flags.budget_exhausted,
    })
}

fn cmd_gen(args: GenArgs) -> Result<Done> {
    let kind: InstanceKind = args.kind.parse().map_err(|e| anyhow!("{e}"))?;
    let spec = InstanceSpec {
        noise: args.noise,
        outlier_frac: args.outliers,
        outlier_box_scale: args.box_scale,
        ..InstanceSpec::new(kind, args.n, args.seed)
    };
    let inst = gen_instance(&spec).map_err(|e| anyhow!("{e}"))?;
    let truth = match &inst.truth {
        Some(t) => serde_json::to_string(t)?,
        None => "null".into(),
    };
    let header = format!(
        "kind={} n={} seed={} outliers={} truth={truth}",
        kind.name(),
        args.n,
        args.seed,
        inst.outliers
    );
    let text = match &inst.data {
        InstanceData::Points(p) => io::points_csv(p, &header),
        InstanceData::Values(v) => io::values_csv(v, &header),
        InstanceData::Flats(f) => serde_json::to_string_pretty(f)? + "\n",
    };
    io::emit(args.output.as_deref(), &text)?;
    Ok(Done { budget_flag: false })
}

fn parse_sizes(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            let v: f64 = t
                .trim()
                .parse()
                .with_context(|| format!("bad size {t:?}"))?;
            if !(v >= 1.0 && v.fract() == 0.0 && v < 1e9) {
                bail!("size {t:?} must be a positive integer");
            }
            Ok(v as usize)
        })
        .collect()
}

fn median_ms(mut t: Vec<f64>) -> f64 {
    t.sort_by(f64::total_cmp);
    let n = t.len();
    if n % 2 == 1 {
        t[n / 2]
    } else {
        0.5 * (t[n / 2 - 1] + t[n / 2])
    }
}

fn instance_kind(kind: ShapeKind) -> InstanceKind {
    match kind {
        ShapeKind::Circle => InstanceKind::Circle,
        ShapeKind::Sphere => InstanceKind::Sphere,
        ShapeKind::Cylinder => InstanceKind::Cylinder,
        ShapeKind::FlatMedian => InstanceKind::Lines,
        ShapeKind::TwoLines => InstanceKind::TwoLines,
    }
}

fn cmd_bench(args: BenchArgs) -> Result<Done> {
    let kind = args.opts.shape_kind()?;
    let sizes = parse_sizes(&args.sizes)?;
    if args.repeats == 0 {
        bail!("repeats must be positive");
    }
    let cfg = args.opts.config();
    let level_cfg = LevelConfig {
        chernoff_c: cfg.chernoff_c,
        m_c: cfg.m_c,
    };
    let mut out = String::from("n,eps,phase,median_ms,cost\n");
    let mut budget_flag = false;
    for &n in &sizes {
        let spec = InstanceSpec {
            noise: args.noise,
            outlier_frac: args.outliers,
            ..InstanceSpec::new(instance_kind(kind), n, cfg.seed)
        };
        let inst = gen_instance(&spec).map_err(|e| anyhow!("{e}"))?;
        let data = inst.fit_input().expect("shape instances carry fit input");
        let charts = ShapeChart::for_input(&data, kind).map_err(|e| anyhow!("{e}"))?;
        let mut reduce_ms = Vec::new();
        let mut search_ms = Vec::new();
        let mut fitted: Option<FitResult> = None;
        for _ in 0..args.repeats {
            let t = Instant::now();
            for chart in &charts {
                let base = chart.region().lo.clone();
                let red = Reduction::build(chart.family(), cfg.eps, cfg.seed, &level_cfg)
                    .map_err(|e| anyhow!("{e}"))?;
                red.over(chart.family())
                    .and_then(|r| r.weighted_values(&base))
                    .map_err(|e| anyhow!("{e}"))?;
            }
            reduce_ms.push(t.elapsed().as_secs_f64() * 1e3);
            let t = Instant::now();
            let r = fit(data, kind, &cfg).map_err(|e| anyhow!("{e}"))?;
            search_ms.push(t.elapsed().as_secs_f64() * 1e3);
            budget_flag |= r.flags.budget_exhausted;
            fitted = Some(r);
        }
        let fitted = fitted.expect("repeats > 0");
        // The reduction row reports the reduced cost at the fitted optimum.
        let reduced_cost = charts
            .iter()
            .filter_map(|c| c.encode(&fitted.shape).map(|p| (c, p)))
            .next()
            .map(|(c, p)| -> Result<f64> {
                let red = Reduction::build(c.family(), cfg.eps, cfg.seed, &level_cfg)
                    .map_err(|e| anyhow!("{e}"))?;
                let over = red.over(c.family()).map_err(|e| anyhow!("{e}"))?;
                cost(&over, &p, cfg.objective).map_err(|e| anyhow!("{e}"))
            })
            .transpose()?
            .unwrap_or(f64::NAN);
        out.push_str(&format!(
            "{n},{},reduction,{},{reduced_cost}\n",
            cfg.eps,
            median_ms(reduce_ms)
        ));
        out.push_str(&format!(
            "{n},{},search,{},{}\n",
            cfg.eps,
            median_ms(search_ms),
            fitted.cost
        ));
    }
    io::emit(args.output.as_deref(), &out)?;
    Ok(Done { budget_flag })
}

fn parse_axes(s: &str, dim: usize) -> Result<(usize, usize)> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        bail!("slice axes must be two indices like 0,1");
    }
    let a: usize = parts[0].trim().parse().context("bad slice axis")?;
    let b: usize = parts[1].trim().parse().context("bad slice axis")?;
    if a == b || a >= dim || b >= dim {
        bail!("slice axes {a},{b} invalid for a {dim}-dimensional base");
    }
    Ok((a, b))
}

fn cmd_plot_data(args: PlotArgs) -> Result<Done> {
    let kind = args.opts.shape_kind()?;
    if args.grid < 2 {
        bail!("grid must be at least 2");
    }
    if !(args.span > 0.0 && args.span.is_finite()) {
        bail!("span must be positive");
    }
    let data = load(&args.input, kind)?;
    let cfg = args.opts.config();
    let fitted = fit(data.input(), kind, &cfg).map_err(|e| anyhow!("{e}"))?;
    let charts = ShapeChart::for_input(&data.input(), kind).map_err(|e| anyhow!("{e}"))?;
    // Among charts that can express the fit, prefer the least tilted one.
    let tilt = |p: &ParamPoint| match kind {
        ShapeKind::Cylinder => p.base[2].abs().max(p.base[3].abs()),
        _ => 0.0,
    };
    let (chart, opt) = charts
        .iter()
        .filter_map(|c| c.encode(&fitted.shape).map(|p| (c, p)))
        .min_by(|a, b| tilt(&a.1).total_cmp(&tilt(&b.1)))
        .ok_or_else(|| anyhow!("fitted shape has no chart"))?;
    let (ax, ay) = parse_axes(&args.axes, opt.base.len())?;
    let g = args.grid;
    let mut out = String::new();
    for i in 0..g {
        for j in 0..g {
            let off = |k: usize| args.span * (2.0 * k as f64 / (g - 1) as f64 - 1.0);
            let mut p = opt.clone();
            p.base[ax] = opt.base[ax] + off(i);
            p.base[ay] = opt.base[ay] + off(j);
            let c = cost(chart.family(), &p, cfg.objective).map_err(|e| anyhow!("{e}"))?;
            out.push_str(&format!(
                "{:.16e}\t{:.16e}\t{:.16e}\n",
                p.base[ax], p.base[ay], c
            ));
        }
    }
    io::emit(args.output.as_deref(), &out)?;
    Ok(Done {
        budget_flag: fitted.flags.budget_exhausted,
    })
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("MEDIANSHAPE_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .with_context(|| format!("MEDIANSHAPE_THREADS={v:?} is not a count"))?;
        if n > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("cannot configure the thread pool")?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = configure_threads().and_then(|_| match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Bench(a) => cmd_bench(a),
        Command::PlotData(a) => cmd_plot_data(a),
    });
    match run {
        Ok(Done { budget_flag: false }) => ExitCode::SUCCESS,
        Ok(Done { budget_flag: true }) => {
            eprintln!("warning: search budget exhausted; result is the best found");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
