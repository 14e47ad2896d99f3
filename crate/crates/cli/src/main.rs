use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use robustenv::cli::pipeline::{decision_stage, lower_implementation};
use robustenv::cli::report::StageStatus;
use robustenv::cli::{
    parse_model, reproduce_robot_suite, run_pipeline, ModelFile, PipelineOptions, Selections, StageReport,
    SuiteError, SuiteOptions,
};
use robustenv::fixedpoint::{emit, tune, CostWeights, IntProgram, TuneOptions, TuningResult};
use robustenv::hybrid::AngelicPerturbation;
use robustenv::kernel::Rational;
use robustenv::monitor::synthesize_monitor;
use robustenv::obligations::{build_liveness, build_robustness, build_safety_under_perturbation, decide};
use robustenv::par::Mode;
use robustenv::solver::{Engine, SolveOptions};

const EXIT_INPUT: u8 = 4;

#[derive(Parser)]
#[command(name = "robustenv", version, about = "Robustness of control envelopes, implementation checks and fixed-point synthesis")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Global {
    /// Print JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// Solver timeout in seconds.
    #[arg(long, global = true)]
    timeout: Option<f64>,
    /// Worker threads (1 runs sequentially).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = EngineArg::Auto)]
    engine: EngineArg,
    #[arg(long, global = true, default_value_t = 64)]
    depth_cap: usize,
    /// Falsifier samples per obligation.
    #[arg(long, global = true, default_value_t = 2000)]
    samples: usize,
    /// Override a model parameter, e.g. `--param dv=5`.
    #[arg(long = "param", global = true, value_name = "NAME=VALUE")]
    params: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Qe,
    Bb,
    Auto,
}

#[derive(Args)]
struct TuneArgs {
    model: PathBuf,
    #[arg(long = "impl")]
    implementation: String,
    #[arg(long, default_value = "D")]
    domain: String,
    /// Controller whose parameters and state order apply.
    #[arg(long)]
    ctl: Option<String>,
    #[arg(long)]
    target_error: String,
    #[arg(long, default_value_t = 64)]
    max_width: u32,
    /// `mul=R,add=R`.
    #[arg(long)]
    cost_weights: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the controller monitor of an envelope.
    Monitor {
        model: PathBuf,
        #[arg(long)]
        ctl: String,
    },
    /// Check robustness of an envelope under a perturbation.
    Robustness {
        model: PathBuf,
        #[arg(long)]
        ctl: String,
        #[arg(long)]
        angel: String,
    },
    /// Check that an envelope never gets stuck.
    Liveness {
        model: PathBuf,
        #[arg(long)]
        ctl: String,
    },
    /// Check an implementation against an envelope under a perturbation.
    Verify {
        model: PathBuf,
        #[arg(long)]
        ctl: String,
        /// Perturbation; skip/skip when omitted.
        #[arg(long)]
        angel: Option<String>,
        #[arg(long = "impl")]
        implementation: String,
        #[arg(long)]
        domain: Option<String>,
    },
    /// Tune fixed-point formats for an implementation.
    Tune(TuneArgs),
    /// Tune and print integer code.
    Emit {
        #[command(flatten)]
        tune: TuneArgs,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Run monitor, robustness, safety, tuning and emission in order.
    Pipeline {
        model: PathBuf,
        /// A `pipeline` declared in the model file.
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        ctl: Option<String>,
        #[arg(long)]
        angel: Option<String>,
        #[arg(long = "impl")]
        implementation: Option<String>,
        #[arg(long)]
        domain: Option<String>,
        #[arg(long)]
        target_error: Option<String>,
    },
    /// Re-run the pinned robot case-study expectations.
    Reproduce {
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Comma-separated groups: monitor, robustness, liveness, safety,
        /// tuning, network.
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
    },
}

struct Fail(u8, String);

fn input<E: std::fmt::Display>(e: E) -> Fail {
    Fail(EXIT_INPUT, e.to_string())
}

fn rational(s: &str) -> Result<Rational, Fail> {
    s.trim().parse().map_err(|_| input(format!("not a rational number: `{s}`")))
}

impl Global {
    fn solve(&self) -> SolveOptions {
        SolveOptions {
            engine: match self.engine {
                EngineArg::Qe => Engine::Qe,
                EngineArg::Bb => Engine::Bb,
                EngineArg::Auto => Engine::Auto,
            },
            depth_cap: self.depth_cap,
            samples: self.samples,
            seed: self.seed,
            timeout: self.timeout.map(Duration::from_secs_f64),
            mode: Mode::from_workers(self.workers),
            ..SolveOptions::default()
        }
    }

    fn load(&self, path: &PathBuf) -> Result<ModelFile, Fail> {
        let mut m = parse_model(path).map_err(input)?;
        for kv in &self.params {
            let (k, v) = kv.split_once('=').ok_or_else(|| input(format!("expected NAME=VALUE, got `{kv}`")))?;
            m.set_param(k.trim(), rational(v)?).map_err(input)?;
        }
        Ok(m)
    }
}

fn status_code(s: StageStatus) -> u8 {
    match s {
        StageStatus::Counterexample | StageStatus::Failed => 2,
        StageStatus::Unknown | StageStatus::Infeasible => 3,
        _ => 0,
    }
}

fn print_verdict(g: &Global, s: &StageReport) -> u8 {
    if g.json {
        let mut v = json!({
            "verdict": s.status,
            "engine": s.engine,
            "stats": s.stats,
            "wall_time_ms": s.wall_time_ms,
        });
        if let Some(c) = &s.counterexample {
            v["counterexample"] = json!(c);
            v["concrete_violation"] = json!(s.concrete_violation);
        }
        if let Some(n) = &s.note {
            v["note"] = json!(n);
        }
        println!("{}", serde_json::to_string_pretty(&v).expect("json"));
    } else {
        println!("{}: {:?}", s.subject, s.status);
        if let Some(c) = &s.counterexample {
            println!("  counterexample: {c}");
            if let Some(cv) = s.concrete_violation {
                println!("  concrete violation: {cv}");
            }
        }
        if let Some(n) = &s.note {
            println!("  {n}");
        }
        println!("  {} ms via {}", s.wall_time_ms, s.engine.as_deref().unwrap_or("-"));
    }
    status_code(s.status)
}

fn weights(s: &Option<String>) -> Result<CostWeights, Fail> {
    let mut w = CostWeights::default();
    if let Some(s) = s {
        for part in s.split(',') {
            match part.split_once('=') {
                Some(("mul", v)) => w.mul = rational(v)?,
                Some(("add", v)) => w.add = rational(v)?,
                _ => return Err(input(format!("bad cost weight `{part}`"))),
            }
        }
    }
    Ok(w)
}

fn run_tune(g: &Global, a: &TuneArgs) -> Result<TuningResult, Fail> {
    let m = g.load(&a.model)?;
    let ctl = match &a.ctl {
        Some(c) => c.clone(),
        None => m.ctls.first().map(|c| c.name.clone()).ok_or_else(|| input("model has no controller"))?,
    };
    let env = m.envelope(&ctl).map_err(input)?;
    let imp = m.implementation(&a.implementation).map_err(input)?;
    let dom = m.domain(&a.domain).map_err(input)?;
    let prog = lower_implementation(&env, &imp, dom).map_err(input)?;
    let mut o = TuneOptions::new(rational(&a.target_error)?);
    o.max_width = a.max_width;
    o.weights = weights(&a.cost_weights)?;
    o.mode = Mode::from_workers(g.workers);
    tune(&prog, &o).map_err(|e| match e {
        robustenv::fixedpoint::FixedError::Infeasible { .. } => Fail(3, e.to_string()),
        e => input(e),
    })
}

fn run(cli: Cli) -> Result<u8, Fail> {
    let g = &cli.global;
    match &cli.cmd {
        Cmd::Monitor { model, ctl } => {
            let m = g.load(model)?;
            let mon = synthesize_monitor(m.ctl(ctl).map_err(input)?);
            if g.json {
                println!("{}", serde_json::to_string_pretty(&mon).expect("json"));
            } else {
                println!("{}", mon.formula);
            }
            Ok(0)
        }
        Cmd::Robustness { model, ctl, angel } => {
            let m = g.load(model)?;
            let env = m.envelope(ctl).map_err(input)?;
            let ap = m.perturbation(angel).map_err(input)?;
            let t0 = Instant::now();
            let ob = build_robustness(&env, ap).map_err(input)?;
            let d = decide(&ob, &g.solve()).map_err(input)?;
            Ok(print_verdict(g, &decision_stage("robustness", &format!("{ctl}/{angel}"), &d, t0)))
        }
        Cmd::Liveness { model, ctl } => {
            let m = g.load(model)?;
            let env = m.envelope(ctl).map_err(input)?;
            let t0 = Instant::now();
            let ob = build_liveness(&env).map_err(input)?;
            let d = decide(&ob, &g.solve()).map_err(input)?;
            Ok(print_verdict(g, &decision_stage("liveness", ctl, &d, t0)))
        }
        Cmd::Verify {
            model,
            ctl,
            angel,
            implementation,
            domain,
        } => {
            let m = g.load(model)?;
            let env = m.envelope(ctl).map_err(input)?;
            let ap = match angel {
                Some(a) => m.perturbation(a).map_err(input)?.clone(),
                None => AngelicPerturbation::identity("skip"),
            };
            let imp = m.implementation(implementation).map_err(input)?;
            let mut opts = g.solve();
            if let Some(d) = domain {
                opts.domain = m.domain(d).map_err(input)?.clone();
            }
            let t0 = Instant::now();
            let ob = build_safety_under_perturbation(&env, &ap, &imp).map_err(input)?;
            let d = decide(&ob, &opts).map_err(input)?;
            let subject = format!("{ctl}/{}/{implementation}", ap.name);
            Ok(print_verdict(g, &decision_stage("safety", &subject, &d, t0)))
        }
        Cmd::Tune(a) => {
            let r = run_tune(g, a)?;
            if g.json {
                println!("{}", serde_json::to_string_pretty(&r).expect("json"));
            } else {
                println!("error bound {} (target {})", r.total_error_bound(), a.target_error);
                println!("cost {} (uniform {} bits: {})", r.cost, r.uniform_width, r.uniform_cost);
                for (i, f) in r.program.formats.iter().enumerate() {
                    println!("  t{i} {f}");
                }
            }
            Ok(0)
        }
        Cmd::Emit { tune: a, output } => {
            let r = run_tune(g, a)?;
            let text = emit(&IntProgram::from_program(&r.program).map_err(input)?);
            match output {
                Some(p) => std::fs::write(p, &text).map_err(input)?,
                None => print!("{text}"),
            }
            Ok(0)
        }
        Cmd::Pipeline {
            model,
            name,
            ctl,
            angel,
            implementation,
            domain,
            target_error,
        } => {
            let m = g.load(model)?;
            let mut sel = match name {
                Some(n) => m.pipeline(n).map_err(input)?.clone(),
                None => Selections::default(),
            };
            if let Some(c) = ctl {
                sel.ctl = c.clone();
            }
            if let Some(a) = angel {
                sel.angel = a.clone();
            }
            if implementation.is_some() {
                sel.implementation = implementation.clone();
            }
            if domain.is_some() {
                sel.domain = domain.clone();
            }
            if let Some(t) = target_error {
                sel.target = Some(rational(t)?);
            }
            if sel.ctl.is_empty() || sel.angel.is_empty() {
                return Err(input("select a pipeline with --name or give --ctl and --angel"));
            }
            let opts = PipelineOptions {
                solve: g.solve(),
                workers: g.workers,
                ..PipelineOptions::default()
            };
            let mut report = run_pipeline(&m, &sel, &opts).map_err(input)?;
            report.inputs.insert(0, robustenv::cli::report::hash_file(model));
            print_report(g, &report);
            Ok(report.exit_code() as u8)
        }
        Cmd::Reproduce { fixtures, only } => {
            let mut o = SuiteOptions::new(fixtures.clone().unwrap_or_else(robustenv::cli::suite::default_fixtures));
            o.solve = g.solve();
            o.workers = g.workers;
            if !only.is_empty() {
                if let Some(bad) = only.iter().find(|x| !robustenv::cli::suite::GROUPS.contains(&x.as_str())) {
                    return Err(input(format!("unknown group `{bad}`")));
                }
                o.only = Some(only.clone());
            }
            match reproduce_robot_suite(&o) {
                Ok(r) => {
                    print_report(g, &r);
                    Ok(0)
                }
                Err(SuiteError::MismatchedExpectation { mismatches, report }) => {
                    print_report(g, &report);
                    for m in mismatches {
                        eprintln!("mismatch: {m}");
                    }
                    Ok(2)
                }
                Err(e) => Err(input(e)),
            }
        }
    }
}

fn print_report(g: &Global, r: &robustenv::cli::Report) {
    if g.json {
        println!("{}", r.to_json());
        return;
    }
    for s in &r.stages {
        let expect = match s.expected {
            Some(e) if e == s.status => " (as expected)".to_string(),
            Some(e) => format!(" (EXPECTED {e:?})"),
            None => String::new(),
        };
        println!("{:<10} {:<36} {:?}{expect}  [{} ms]", s.stage, s.subject, s.status, s.wall_time_ms);
        if let Some(c) = &s.counterexample {
            println!("{:<10} counterexample {c}", "");
        }
        if let Some(t) = &s.tuning {
            println!("{:<10} error bound {} <= {}, max width {}", "", t.total_error_bound, t.target, t.max_width);
        }
        if let (Some(a), "emit") = (&s.artifact, s.stage.as_str()) {
            println!("{:<10} {} lines, sha256 {}", "", a.text.lines().count(), a.sha256);
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
