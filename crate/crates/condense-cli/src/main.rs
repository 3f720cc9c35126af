//! Operator commands for the dataset condensation toolkit.
//!
//! One command per process. Every command resolves its configuration from
//! built-in defaults, an optional config file, and `section.key=value`
//! overrides, then writes artifacts that embed the resolved configuration
//! and seed, so any artifact can be reproduced from its own header.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! divergence.

use clap::{Args, Parser, Subcommand};
use condense::augment::{AugDistribution, AugStrategy};
use condense::config::ExperimentConfig;
use condense::data::{self, DataError, Dataset};
use condense::engine::{self, EngineError, Scheme};
use condense::eval::{self, EvalError};
use condense::nas;
use condense::report;
use condense::zoo::ArchSpec;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "condense",
    version,
    about = "Dataset condensation by gradient matching with differentiable siamese augmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Sectioned key=value configuration file; built-in defaults apply when
    /// omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for artifacts (overrides the config's [output] dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for parallel cells; defaults to all cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Config overrides as section.key=value pairs, layered over the file.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a synthetic set; writes the set file, loss trace, preview
    /// grid, and resolved config.
    Condense(Common),
    /// Evaluate saved sets (--from) or run the full condense-then-evaluate
    /// protocol.
    Eval(EvalArgs),
    /// Run one augmentation-placement scheme (or `all`) through the
    /// protocol and tabulate a row per scheme.
    Ablate(AblateArgs),
    /// Condense per row architecture and evaluate per column architecture.
    Crossarch(CrossArgs),
    /// Rank an architecture grid on proxy sets against a longer-trained
    /// reference and report rank correlations.
    Nas(NasArgs),
    /// Render a saved synthetic set into a PNG image grid.
    Export(ExportArgs),
    /// Record gradient-magnitude diagnostics during a condensation run.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Saved synthetic set files to evaluate instead of condensing fresh
    /// ones; repeatable, one set per file.
    #[arg(long = "from", value_name = "FILE")]
    from: Vec<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    /// Scheme to run: ours, a, b, c, d, e, f, or `all` for the whole table.
    scheme: String,
}

#[derive(Args)]
struct CrossArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated condensation architectures: convnet, mlp, lenet, or
    /// full labels like convnet-d3-w128-relu-instance-avg.
    #[arg(long, default_value = "convnet,mlp,lenet")]
    rows: String,
    /// Comma-separated evaluation architectures, same syntax as --rows.
    #[arg(long, default_value = "convnet,mlp,lenet")]
    cols: String,
}

#[derive(Args)]
struct NasArgs {
    #[command(flatten)]
    common: Common,
    /// Architecture grid: `desk` (24 candidates) or `full` (720).
    #[arg(long, default_value = "desk")]
    grid: String,
    /// Proxy sets to rank on, comma separated: dsa, random, early.
    #[arg(long, default_value = "dsa,random,early")]
    proxies: String,
    /// Epochs of whole-set training for the reference ranking.
    #[arg(long, default_value_t = 20)]
    reference_epochs: usize,
}

#[derive(Args)]
struct ExportArgs {
    /// Saved synthetic set file.
    #[arg(long)]
    from: PathBuf,
    /// Output PNG path; defaults to the set file with a .png extension.
    #[arg(long)]
    to: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    common: Common,
    /// Outer iterations to record, comma separated; defaults to the last.
    #[arg(long)]
    at: Option<String>,
}

enum Failure {
    Config(String),
    Data(String),
    Divergence(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Divergence(_) => 4,
        }
    }

    fn describe(&self) -> (&'static str, &str) {
        match self {
            Failure::Config(m) => ("config", m),
            Failure::Data(m) => ("data", m),
            Failure::Divergence(m) => ("divergence", m),
        }
    }
}

fn config_failure(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn data_failure(e: DataError) -> Failure {
    Failure::Data(e.to_string())
}

fn engine_failure(e: EngineError) -> Failure {
    match &e {
        EngineError::Divergence { .. } => Failure::Divergence(e.to_string()),
        EngineError::Data(_) => Failure::Data(e.to_string()),
        _ => Failure::Config(e.to_string()),
    }
}

fn eval_failure(e: EvalError) -> Failure {
    fn code(e: &EvalError) -> u8 {
        match e {
            EvalError::Condense { source, .. } => match source {
                EngineError::Divergence { .. } => 4,
                EngineError::Data(_) => 3,
                _ => 2,
            },
            EvalError::Cell { source, .. } | EvalError::Grid { source, .. } => code(source),
            EvalError::Data(_) => 3,
            _ => 2,
        }
    }
    match code(&e) {
        4 => Failure::Divergence(e.to_string()),
        3 => Failure::Data(e.to_string()),
        _ => Failure::Config(e.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, msg) = f.describe();
            eprintln!("{kind} error: {msg}");
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Condense(c) => cmd_condense(&c),
        Command::Eval(a) => cmd_eval(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Crossarch(a) => cmd_crossarch(&a),
        Command::Nas(a) => cmd_nas(&a),
        Command::Export(a) => cmd_export(&a),
        Command::Diagnose(a) => cmd_diagnose(&a),
    }
}

struct Session {
    exp: ExperimentConfig,
    data: Dataset,
    out: PathBuf,
}

fn open_session(common: &Common) -> Result<Session, Failure> {
    if let Some(n) = common.jobs {
        if n == 0 {
            return Err(Failure::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(config_failure)?;
    }
    let text = match &common.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| {
            Failure::Data(format!("cannot read config {}: {e}", path.display()))
        })?,
        None => String::new(),
    };
    let mut exp = ExperimentConfig::from_text(&text, &common.overrides).map_err(config_failure)?;
    if let Some(out) = &common.out {
        exp.output.dir = out.clone();
    }

    let root = data::resolve_root(exp.dataset.root.as_deref());
    let mut dataset = data::load_dataset(&exp.dataset.name, &root).map_err(data_failure)?;
    if exp.dataset.train_per_class > 0 || exp.dataset.test_per_class > 0 {
        dataset = dataset
            .subsample(exp.dataset.train_per_class, exp.dataset.test_per_class, 0)
            .map_err(data_failure)?;
    }
    exp.bind_geometry(
        (dataset.train.channels(), dataset.train.height(), dataset.train.width()),
        dataset.classes,
    );
    exp.condense.validate().map_err(engine_failure)?;

    let out = exp.output.dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| {
        Failure::Data(format!("cannot create output directory {}: {e}", out.display()))
    })?;
    Ok(Session { exp, data: dataset, out })
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text)
        .map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))
}

/// Prefixes a text artifact with its resolved configuration as comments.
fn with_header(config: &str, body: &str) -> String {
    let mut s = String::from("# resolved configuration:\n");
    for line in config.lines() {
        s.push_str("#   ");
        s.push_str(line);
        s.push('\n');
    }
    s.push('\n');
    s.push_str(body);
    s
}

fn cmd_condense(common: &Common) -> Result<(), Failure> {
    let Session { exp, data, out } = open_session(common)?;
    let started = Instant::now();
    let run = match engine::condense(&data, &exp.condense) {
        Ok(run) => run,
        Err(EngineError::Divergence { outer_iter, loss, trace }) => {
            let partial = out.join("trace-partial.txt");
            let body = format!(
                "# PARTIAL ARTIFACT: run diverged at outer iteration {outer_iter} (loss {loss})\n{}",
                report::trace_file(&trace)
            );
            write_text(&partial, &with_header(&exp.to_text(), &body))?;
            return Err(Failure::Divergence(format!(
                "matching loss diverged at outer iteration {outer_iter} (loss {loss}); partial trace written to {}",
                partial.display()
            )));
        }
        Err(e) => return Err(engine_failure(e)),
    };
    let mut set = run.set;
    set.config_text = exp.to_text();

    write_text(&out.join("config.ini"), &exp.to_text())?;
    data::write_synthetic_set(&out.join("synthetic.dsa"), &set).map_err(data_failure)?;
    write_text(
        &out.join("trace.txt"),
        &with_header(&exp.to_text(), &report::trace_file(&set.trace)),
    )?;
    data::export_grid(&set, &out.join("grid.png")).map_err(data_failure)?;
    if !run.diagnostics.records.is_empty() {
        write_text(
            &out.join("diagnostics.txt"),
            &with_header(&exp.to_text(), &report::diagnostics_table(&run.diagnostics)),
        )?;
        write_text(&out.join("diagnostics.json"), &report::diagnostics_json(&run.diagnostics))?;
    }

    let final_loss = set
        .trace
        .final_loss()
        .map(|l| format!("{l:.4}"))
        .unwrap_or_else(|| "none (0 iterations)".into());
    println!(
        "condensed {} to {} classes x {} images in {:.1}s; final matching loss {final_loss}",
        exp.dataset.name,
        set.classes,
        set.ipc,
        started.elapsed().as_secs_f64()
    );
    println!("artifacts in {}", out.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), Failure> {
    let Session { exp, data, out } = open_session(&args.common)?;
    let rep = if args.from.is_empty() {
        let mut r =
            eval::evaluate_protocol(&data, &exp.condense, &exp.eval).map_err(eval_failure)?;
        r.config_text = exp.to_text();
        r
    } else {
        let mut sets = Vec::with_capacity(args.from.len());
        for path in &args.from {
            sets.push(data::read_synthetic_set(path).map_err(data_failure)?);
        }
        eval::evaluate_saved(&sets, &data.test, &exp.eval).map_err(eval_failure)?
    };
    let table = report::eval_report_table(&rep);
    write_text(&out.join("report.txt"), &with_header(&rep.config_text, &table))?;
    write_text(&out.join("report.json"), &report::eval_report_json(&rep))?;
    print!("{table}");
    println!("report in {}", out.display());
    Ok(())
}

/// The evaluation augmentation used when a scheme turns it on: the config's
/// distribution when one is set, otherwise the default combination with
/// flip excluded on digit datasets.
fn eval_aug_base(exp: &ExperimentConfig, data: &Dataset) -> AugDistribution {
    exp.eval.aug.clone().unwrap_or_else(|| {
        let mut d = AugDistribution::new(AugStrategy::Combination);
        d.exclude_flip = data.is_digit_like();
        d
    })
}

fn cmd_ablate(args: &AblateArgs) -> Result<(), Failure> {
    let Session { exp, data, out } = open_session(&args.common)?;
    let schemes: Vec<Scheme> = if args.scheme == "all" {
        Scheme::ALL.to_vec()
    } else {
        vec![args.scheme.parse().map_err(Failure::Config)?]
    };

    let mut rows = Vec::with_capacity(schemes.len());
    for &scheme in &schemes {
        let mut run_exp = exp.clone();
        run_exp.scheme = Some(scheme);
        run_exp.condense.apply_scheme(scheme);
        run_exp.eval.aug =
            if scheme.eval_aug() { Some(eval_aug_base(&exp, &data)) } else { None };
        let mut rep = eval::evaluate_protocol(&data, &run_exp.condense, &run_exp.eval)
            .map_err(eval_failure)?;
        rep.config_text = run_exp.to_text();
        println!(
            "scheme {scheme}: {:.2}% +/- {:.2}% over {} runs",
            rep.mean * 100.0,
            rep.std * 100.0,
            rep.accuracies.len()
        );
        rows.push((scheme.to_string(), rep));
    }

    let stem: Vec<String> = schemes.iter().map(|s| s.to_string()).collect();
    let stem = format!("ablation-{}", stem.join("-"));
    let table = report::ablation_table(&rows);
    write_text(&out.join(format!("{stem}.txt")), &with_header(&exp.to_text(), &table))?;
    write_text(&out.join(format!("{stem}.json")), &report::ablation_json(&rows))?;
    print!("{table}");
    println!("ablation in {}", out.display());
    Ok(())
}

fn arch_from_name(
    name: &str,
    input: (usize, usize, usize),
    classes: usize,
) -> Result<ArchSpec, Failure> {
    let spec = match name {
        "convnet" => ArchSpec::convnet(input, classes),
        "mlp" => ArchSpec::mlp(input, classes),
        "lenet" => ArchSpec::lenet(input, classes),
        label => ArchSpec::parse_label(label, input, classes).map_err(Failure::Config)?,
    };
    spec.validate().map_err(config_failure)?;
    Ok(spec)
}

fn parse_arch_list(
    list: &str,
    input: (usize, usize, usize),
    classes: usize,
) -> Result<Vec<ArchSpec>, Failure> {
    let mut specs = Vec::new();
    for part in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        specs.push(arch_from_name(part, input, classes)?);
    }
    if specs.is_empty() {
        return Err(Failure::Config(format!("empty architecture list '{list}'")));
    }
    Ok(specs)
}

fn cmd_crossarch(args: &CrossArgs) -> Result<(), Failure> {
    let Session { exp, data, out } = open_session(&args.common)?;
    let input = (data.train.channels(), data.train.height(), data.train.width());
    let rows = parse_arch_list(&args.rows, input, data.classes)?;
    let cols = parse_arch_list(&args.cols, input, data.classes)?;
    let matrix = eval::cross_architecture(&data, &rows, &cols, &exp.condense, &exp.eval)
        .map_err(eval_failure)?;
    let row_labels: Vec<String> = rows.iter().map(ArchSpec::label).collect();
    let col_labels: Vec<String> = cols.iter().map(ArchSpec::label).collect();
    let table = report::crossarch_table(&row_labels, &col_labels, &matrix);
    write_text(&out.join("crossarch.txt"), &with_header(&exp.to_text(), &table))?;
    write_text(
        &out.join("crossarch.json"),
        &report::crossarch_json(&row_labels, &col_labels, &matrix),
    )?;
    print!("{table}");
    println!("matrix in {}", out.display());
    Ok(())
}

fn cmd_nas(args: &NasArgs) -> Result<(), Failure> {
    let Session { exp, data, out } = open_session(&args.common)?;
    let input = (data.train.channels(), data.train.height(), data.train.width());
    let axes = match args.grid.as_str() {
        "desk" => nas::GridAxes::desk(),
        "full" => nas::GridAxes::full(),
        other => return Err(Failure::Config(format!("unknown grid '{other}' (desk or full)"))),
    };
    let grid = nas::enumerate(&axes, input, data.classes).map_err(config_failure)?;

    let proxies: Vec<&str> =
        args.proxies.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    for p in &proxies {
        if !matches!(*p, "dsa" | "random" | "early") {
            return Err(Failure::Config(format!("unknown proxy '{p}' (dsa, random, early)")));
        }
    }
    if proxies.is_empty() {
        return Err(Failure::Config("no proxies requested".into()));
    }

    let mut rcfg = exp.eval.clone();
    rcfg.epochs = args.reference_epochs;
    let reference = nas::rank_architectures(&grid, &data.train, &data.test, &rcfg, None)
        .map_err(config_failure)?;
    println!(
        "reference ranking over {} architectures done ({} failures)",
        grid.len(),
        reference.failures.len()
    );

    for proxy in proxies {
        let (train, max_steps) = match proxy {
            "dsa" => {
                let run = engine::condense(&data, &exp.condense).map_err(engine_failure)?;
                (run.set.batch(), None)
            }
            "random" => {
                let set = eval::random_coreset(&data, exp.condense.ipc, exp.condense.seed)
                    .map_err(eval_failure)?;
                (set.batch(), None)
            }
            _ => {
                let n = data.classes * exp.condense.ipc;
                let b = exp.eval.batch.min(n).max(1);
                (data.train.clone(), Some(exp.eval.epochs * n.div_ceil(b)))
            }
        };
        let outcome = nas::rank_architectures(&grid, &train, &data.test, &exp.eval, max_steps)
            .map_err(config_failure)?;
        let study = nas::correlation_study(&grid, &outcome, &reference).map_err(config_failure)?;
        println!(
            "proxy {proxy}: spearman {:.4} overall, {:.4} on the reference top slice",
            study.rho_all, study.rho_top
        );
        write_text(
            &out.join(format!("nas-{proxy}.txt")),
            &with_header(&exp.to_text(), &report::rank_study_table(&study)),
        )?;
        write_text(&out.join(format!("nas-{proxy}.json")), &report::rank_study_json(&study))?;
        write_text(
            &out.join(format!("nas-{proxy}-scatter.txt")),
            &with_header(&exp.to_text(), &report::rank_scatter_data(&study)),
        )?;
    }
    println!("studies in {}", out.display());
    Ok(())
}

fn cmd_export(args: &ExportArgs) -> Result<(), Failure> {
    let set = data::read_synthetic_set(&args.from).map_err(data_failure)?;
    let to = args.to.clone().unwrap_or_else(|| args.from.with_extension("png"));
    data::export_grid(&set, &to).map_err(data_failure)?;
    println!(
        "wrote {} ({} classes x {} images from {})",
        to.display(),
        set.classes,
        set.ipc,
        set.dataset
    );
    Ok(())
}

fn cmd_diagnose(args: &DiagnoseArgs) -> Result<(), Failure> {
    let Session { mut exp, data, out } = open_session(&args.common)?;
    let k = exp.condense.outer_iters;
    if k == 0 {
        return Err(Failure::Config("outer_iters is 0, so there is nothing to diagnose".into()));
    }
    exp.condense.diagnostics_at = match &args.at {
        Some(list) => {
            let mut at = Vec::new();
            for part in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let i: usize = part
                    .parse()
                    .map_err(|_| Failure::Config(format!("bad iteration '{part}' in --at")))?;
                if i >= k {
                    return Err(Failure::Config(format!(
                        "--at iteration {i} is out of range; the run has {k} outer iterations"
                    )));
                }
                at.push(i);
            }
            if at.is_empty() {
                return Err(Failure::Config("--at lists no iterations".into()));
            }
            at
        }
        None => vec![k - 1],
    };

    let run = engine::condense(&data, &exp.condense).map_err(engine_failure)?;
    write_text(
        &out.join("diagnostics.txt"),
        &with_header(&exp.to_text(), &report::diagnostics_table(&run.diagnostics)),
    )?;
    write_text(&out.join("diagnostics.json"), &report::diagnostics_json(&run.diagnostics))?;
    for rec in &run.diagnostics.records {
        println!(
            "outer iteration {}: median |grad| synthetic {:e}, real {:e}",
            rec.outer_iter,
            rec.syn_median(),
            rec.real_median()
        );
    }
    println!("diagnostics in {}", out.display());
    Ok(())
}
