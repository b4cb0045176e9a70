//! `fracdev`: trees, moments, expansions, simulation and the check suite.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use fracdev_core::expansion_engine::{DefaultMoments, ExpansionPlan};
use fracdev_core::fbm_sim::sample_fbm;
use fracdev_core::gaussian_moments::{expected_iterated_integral, second_moment, MomentOptions};
use fracdev_core::harness::{remainder_slopes, run_suite, Scale, SlopeStatus, SuiteConfig};
use fracdev_core::sde_solver::{solve, VectorFields, DEFAULT_BOUND};
use fracdev_core::symexpr::{MomentMethod, Scheme, SdeSpec};
use fracdev_core::tree_enum::{enumerate_trees, DEFAULT_MAX_NODES};

#[derive(Parser)]
#[command(name = "fracdev", version, about = "Small-time expansions for SDEs driven by fractional Brownian motion")]
struct Cli {
    /// Master seed; overrides the seed in a spec file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for path simulation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Euler,
    Heun,
    Rough,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Scheme {
        match s {
            SchemeArg::Euler => Scheme::Euler,
            SchemeArg::Heun => Scheme::Heun,
            SchemeArg::Rough => Scheme::Rough,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Auto,
    Pairing,
    Mc,
}

impl From<MethodArg> for MomentMethod {
    fn from(m: MethodArg) -> MomentMethod {
        match m {
            MethodArg::Auto => MomentMethod::Auto,
            MethodArg::Pairing => MomentMethod::Pairing,
            MethodArg::Mc => MomentMethod::Mc,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// List labelled trees with at most MAX_NODES nodes.
    Trees {
        #[arg(long, default_value_t = 3)]
        max_nodes: usize,
        /// Keep only trees with an even number of stochastic nodes.
        #[arg(long)]
        strato: bool,
    },
    /// Expected iterated integral of a word on [0, 1].
    Moment {
        /// Comma-separated letters, 0 for time.
        #[arg(long, value_delimiter = ',', required = true)]
        word: Vec<usize>,
        #[arg(long)]
        hurst: f64,
        #[arg(long, value_enum, default_value = "auto")]
        method: MethodArg,
        /// Second moment instead of the mean.
        #[arg(long)]
        second: bool,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 20_000)]
        paths: usize,
        #[arg(long, default_value_t = 256)]
        steps: usize,
    },
    /// Expansion of P_t f(a) for a spec file.
    Expand {
        spec: PathBuf,
        /// Defaults to the order in the input file.
        #[arg(long)]
        order: Option<usize>,
        /// Drop terms whose moment is exactly zero.
        #[arg(long)]
        prune_zero: bool,
        /// Evaluate the expansion at these times.
        #[arg(long, value_delimiter = ',')]
        t: Vec<f64>,
    },
    /// Sample one fBm path.
    SimulatePath {
        #[arg(long)]
        hurst: f64,
        #[arg(long, default_value_t = 256)]
        steps: usize,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
    },
    /// Solve the equation along one sampled path.
    Solve {
        spec: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, value_enum)]
        scheme: Option<SchemeArg>,
        #[arg(long)]
        area_refine: Option<usize>,
    },
    /// Compare expansions with Monte Carlo and fit the remainder decay.
    Validate {
        spec: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2])]
        orders: Vec<usize>,
        #[arg(long)]
        paths: Option<usize>,
        /// Allowed shortfall of a fitted slope below (m + 1) H.
        #[arg(long, default_value_t = 0.15)]
        slack: f64,
    },
    /// Run the acceptance checks.
    Suite {
        /// JSON suite configuration.
        config: Option<PathBuf>,
        /// Smaller Monte Carlo samples.
        #[arg(long)]
        quick: bool,
        #[arg(long, value_delimiter = ',')]
        criteria: Option<Vec<usize>>,
    },
}

/// Input problems exit with 2, failed checks with 1.
enum Outcome {
    Ok,
    Failed,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut out = Output {
        format: cli.format,
        path: cli.out.clone(),
        buf: Vec::new(),
    };
    let outcome = match cli.command {
        Command::Trees { max_nodes, strato } => trees(&mut out, max_nodes, strato)?,
        Command::Moment {
            word,
            hurst,
            method,
            second,
            tol,
            paths,
            steps,
        } => {
            let opts = MomentOptions {
                method: method.into(),
                tol,
                mc_paths: paths,
                mc_steps: steps,
                seed: cli.seed.unwrap_or(0),
            };
            moment(&mut out, &word, hurst, &opts, second)?
        }
        Command::Expand {
            spec,
            order,
            prune_zero,
            t,
        } => {
            let spec = load_spec(&spec, cli.seed)?;
            expand(&mut out, &spec, order, prune_zero, &t)?
        }
        Command::SimulatePath {
            hurst,
            steps,
            dim,
            horizon,
        } => simulate_path(&mut out, hurst, steps, dim, horizon, cli.seed.unwrap_or(0))?,
        Command::Solve {
            spec,
            steps,
            scheme,
            area_refine,
        } => {
            let mut spec = load_spec(&spec, cli.seed)?;
            if let Some(s) = steps {
                spec.mc.steps = s;
            }
            if let Some(s) = scheme {
                spec.mc.scheme = s.into();
            }
            if let Some(r) = area_refine {
                spec.mc.area_refine = r;
            }
            solve_one(&mut out, &spec)?
        }
        Command::Validate {
            spec,
            orders,
            paths,
            slack,
        } => {
            let mut spec = load_spec(&spec, cli.seed)?;
            if let Some(p) = paths {
                spec.mc.paths = p;
            }
            validate(&mut out, &spec, &orders, slack)?
        }
        Command::Suite {
            config,
            quick,
            criteria,
        } => {
            let mut cfg: SuiteConfig = match config {
                Some(p) => serde_json::from_str(&read(&p)?)
                    .with_context(|| format!("parsing {}", p.display()))?,
                None => SuiteConfig::default(),
            };
            if quick {
                cfg.scale = Scale::Quick;
            }
            if let Some(c) = criteria {
                if let Some(bad) = c.iter().find(|&&id| !(1..=11).contains(&id)) {
                    bail!("criterion {bad} does not exist (1..=11)");
                }
                cfg.criteria = c;
            }
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            suite(&mut out, &cfg)?
        }
    };
    out.finish()?;
    Ok(outcome)
}

struct Output {
    format: Option<Format>,
    path: Option<PathBuf>,
    buf: Vec<u8>,
}

impl Output {
    fn format_or(&self, default: Format) -> Format {
        self.format.unwrap_or(default)
    }

    fn text(&mut self, s: &str) {
        self.buf.extend_from_slice(s.as_bytes());
        if !s.ends_with('\n') {
            self.buf.push(b'\n');
        }
    }

    fn json(&mut self, v: &serde_json::Value) {
        let s = serde_json::to_string_pretty(v).expect("json value serialises");
        self.text(&s);
    }

    fn csv(&mut self, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().context("flushing CSV")?;
        self.buf.extend_from_slice(&bytes);
        Ok(())
    }

    fn finish(self) -> Result<()> {
        match self.path {
            Some(p) => fs::write(&p, &self.buf).with_context(|| format!("writing {}", p.display())),
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout.write_all(&self.buf)?;
                Ok(stdout.flush()?)
            }
        }
    }
}

/// Shortest decimal that parses back to the same `f64`.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn read(p: &PathBuf) -> Result<String> {
    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

fn load_spec(p: &PathBuf, seed: Option<u64>) -> Result<SdeSpec> {
    let mut spec = SdeSpec::from_json(&read(p)?).with_context(|| format!("parsing {}", p.display()))?;
    if let Some(s) = seed {
        spec.mc.seed = s;
    }
    for w in spec.warnings() {
        eprintln!("warning: {w}");
    }
    Ok(spec)
}

fn word_string(w: &[usize]) -> String {
    w.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
}

fn trees(out: &mut Output, max_nodes: usize, strato: bool) -> Result<Outcome> {
    let trees = enumerate_trees(max_nodes, DEFAULT_MAX_NODES, strato)?;
    match out.format_or(Format::Text) {
        Format::Json => out.json(&json!(trees
            .iter()
            .map(|t| json!({
                "id": t.id(),
                "nodes": t.len(),
                "bracket": t.bracket(),
                "word": t.template_string(),
                "det": t.num_det(),
                "stoch": t.num_stoch(),
            }))
            .collect::<Vec<_>>())),
        Format::Text => {
            for t in &trees {
                out.text(&format!("{:>5}  {}  {}", t.id(), t.bracket(), t.template_string()));
            }
        }
        Format::Csv => {
            let rows: Vec<Vec<String>> = trees
                .iter()
                .map(|t| {
                    vec![
                        t.id().to_string(),
                        t.len().to_string(),
                        t.bracket(),
                        t.template_string(),
                        t.num_det().to_string(),
                        t.num_stoch().to_string(),
                    ]
                })
                .collect();
            out.csv(&["id", "nodes", "bracket", "word", "det", "stoch"], &rows)?;
        }
    }
    Ok(Outcome::Ok)
}

fn moment(out: &mut Output, word: &[usize], hurst: f64, opts: &MomentOptions, second: bool) -> Result<Outcome> {
    let r = if second {
        second_moment(word, hurst, opts)?
    } else {
        expected_iterated_integral(word, hurst, opts)?
    };
    let method = serde_json::to_value(r.method)?;
    let method = method.as_str().unwrap_or_default().to_string();
    match out.format_or(Format::Text) {
        Format::Json => out.json(&json!({
            "word": word,
            "hurst": hurst,
            "second": second,
            "value": r.value,
            "error_estimate": r.error_estimate,
            "method": method,
        })),
        Format::Text => out.text(&format!(
            "{} {}({}) = {} ± {} [{}]",
            if second { "E|I|^2" } else { "E I" },
            "α",
            word_string(word),
            num(r.value),
            num(r.error_estimate),
            method
        )),
        Format::Csv => out.csv(
            &["word", "hurst", "second", "value", "error_estimate", "method"],
            &[vec![
                word_string(word),
                num(hurst),
                second.to_string(),
                num(r.value),
                num(r.error_estimate),
                method,
            ]],
        )?,
    }
    Ok(Outcome::Ok)
}

fn expand(out: &mut Output, spec: &SdeSpec, order: Option<usize>, prune_zero: bool, ts: &[f64]) -> Result<Outcome> {
    let order = order.unwrap_or(spec.expansion.order);
    let provider = DefaultMoments::from_spec(spec);
    let mut e = ExpansionPlan::with_provider(spec, order, &provider)?.expansion_at(&spec.a)?;
    if prune_zero {
        e = e.without_zero_moments();
    }
    match out.format_or(Format::Text) {
        Format::Json => {
            let mut v: serde_json::Value = serde_json::from_str(&e.to_json())?;
            if !ts.is_empty() {
                v["values"] = json!(ts
                    .iter()
                    .map(|&t| json!({"t": t, "value": e.evaluate(t), "stderr": e.stderr(t)}))
                    .collect::<Vec<_>>());
            }
            out.json(&v);
        }
        Format::Text => {
            out.text(&e.to_text());
            for &t in ts {
                out.text(&format!("P_t f(a) at t = {t}: {} ± {}", num(e.evaluate(t)), num(e.stderr(t))));
            }
        }
        Format::Csv => {
            let rows: Vec<Vec<String>> = e
                .terms
                .iter()
                .map(|t| {
                    vec![
                        t.tree_id.to_string(),
                        t.bracket.clone(),
                        word_string(&t.word),
                        num(t.coefficient),
                        num(t.moment),
                        num(t.moment_stderr),
                        num(t.exponent),
                    ]
                })
                .collect();
            out.csv(
                &["tree_id", "bracket", "word", "coefficient", "moment", "moment_stderr", "exponent"],
                &rows,
            )?;
        }
    }
    Ok(Outcome::Ok)
}

fn path_rows(times: &[f64], values: &[f64], dim: usize) -> Vec<Vec<String>> {
    times
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let mut row = vec![num(*t)];
            row.extend(values[k * dim..(k + 1) * dim].iter().map(|v| num(*v)));
            row
        })
        .collect()
}

fn path_output(out: &mut Output, prefix: &str, times: &[f64], values: &[f64], dim: usize) -> Result<()> {
    match out.format_or(Format::Csv) {
        Format::Json => out.json(&json!({"times": times, "values": values, "dim": dim})),
        Format::Text | Format::Csv => {
            let names: Vec<String> = std::iter::once("t".to_string())
                .chain((1..=dim).map(|i| format!("{prefix}{i}")))
                .collect();
            let header: Vec<&str> = names.iter().map(String::as_str).collect();
            out.csv(&header, &path_rows(times, values, dim))?;
        }
    }
    Ok(())
}

fn simulate_path(out: &mut Output, hurst: f64, steps: usize, dim: usize, horizon: f64, seed: u64) -> Result<Outcome> {
    if dim == 0 {
        bail!("dimension must be positive");
    }
    let p = sample_fbm(hurst, steps, dim, horizon, seed)?;
    path_output(out, "B", &p.times, &p.values, dim)?;
    Ok(Outcome::Ok)
}

fn solve_one(out: &mut Output, spec: &SdeSpec) -> Result<Outcome> {
    let mc = &spec.mc;
    let fine = if mc.scheme == Scheme::Rough {
        mc.steps * mc.area_refine
    } else {
        mc.steps
    };
    let path = sample_fbm(spec.hurst, fine, spec.d.max(1), spec.horizon, mc.seed)?;
    let fields = VectorFields::new(spec);
    if spec.hurst <= 0.5 && mc.scheme != Scheme::Rough && !fields.sigma_is_constant() {
        bail!("H <= 1/2 with state-dependent diffusion needs --scheme rough");
    }
    let traj = solve(&fields, spec, &path, mc.scheme, mc.area_refine, DEFAULT_BOUND)?;
    path_output(out, "x", &traj.times, &traj.states, spec.n)?;
    Ok(Outcome::Ok)
}

fn validate(out: &mut Output, spec: &SdeSpec, orders: &[usize], slack: f64) -> Result<Outcome> {
    let provider = DefaultMoments::from_spec(spec);
    let reports = remainder_slopes(spec, orders, &spec.mc, &provider)?;
    let short = reports
        .iter()
        .any(|r| r.status == SlopeStatus::Fitted && r.slope.is_some_and(|s| s < r.target - slack));
    match out.format_or(Format::Text) {
        Format::Json => out.json(&serde_json::to_value(&reports)?),
        Format::Text => {
            for r in &reports {
                let slope = match r.slope {
                    Some(s) => format!("slope {} ± {}", num(s), num(r.slope_stderr.unwrap_or(f64::NAN))),
                    None => "inconclusive (remainder below noise)".to_string(),
                };
                out.text(&format!("order {}: target {}, {slope}", r.order, num(r.target)));
                for p in &r.points {
                    out.text(&format!(
                        "  t = {:<6} mc {} ± {}  expansion {}  |diff| {}{}",
                        p.t,
                        num(p.mc_mean),
                        num(p.mc_stderr),
                        num(p.expansion),
                        num(p.difference.abs()),
                        if p.used { "" } else { "  (below noise)" }
                    ));
                }
            }
        }
        Format::Csv => {
            let mut rows = Vec::new();
            for r in &reports {
                for p in &r.points {
                    rows.push(vec![
                        r.order.to_string(),
                        num(p.t),
                        num(p.mc_mean),
                        num(p.mc_stderr),
                        num(p.expansion),
                        num(p.expansion_stderr),
                        num(p.difference),
                        p.used.to_string(),
                        r.slope.map_or(String::new(), num),
                        num(r.target),
                    ]);
                }
            }
            out.csv(
                &[
                    "order", "t", "mc_mean", "mc_stderr", "expansion", "expansion_stderr", "difference",
                    "used", "slope", "target",
                ],
                &rows,
            )?;
        }
    }
    Ok(if short { Outcome::Failed } else { Outcome::Ok })
}

fn suite(out: &mut Output, cfg: &SuiteConfig) -> Result<Outcome> {
    let report = run_suite(cfg, &DefaultMoments::default());
    match out.format_or(Format::Text) {
        Format::Json => out.text(&report.to_json()),
        Format::Text => out.text(&report.to_text()),
        Format::Csv => {
            let mut rows = Vec::new();
            for r in &report.results {
                for m in &r.metrics {
                    rows.push(vec![
                        r.id.to_string(),
                        r.name.clone(),
                        m.name.clone(),
                        num(m.value),
                        m.limit.map_or(String::new(), num),
                        m.passed.to_string(),
                    ]);
                }
            }
            out.csv(&["criterion", "name", "metric", "value", "limit", "passed"], &rows)?;
        }
    }
    Ok(if report.passed { Outcome::Ok } else { Outcome::Failed })
}
