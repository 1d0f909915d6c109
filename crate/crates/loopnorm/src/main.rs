//! Command-line front door for the loop-nest normalization toolkit.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use loopnorm::canonical::{self, MatchMode};
use loopnorm::deps;
use loopnorm::frontend;
use loopnorm::interp::{self, ExecutionConfig, Mode, Verdict};
use loopnorm::ir::{self, Program};
use loopnorm::normalize::{self, Metric};
use loopnorm::recipes::{self, Recipe, RecipeDatabase, Transform};
use loopnorm::variants;

#[derive(Parser)]
#[command(name = "loopnorm", version, about = "Loop-nest normalization and canonical scheduling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum MetricArg {
    Distance,
    Ooo,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Metric {
        match m {
            MetricArg::Distance => Metric::Distance,
            MetricArg::Ooo => Metric::OutOfOrder,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum ModeArg {
    Int,
    Float,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum KeyModeArg {
    Exact,
    #[value(name = "shape-insensitive")]
    ShapeInsensitive,
}

impl From<KeyModeArg> for MatchMode {
    fn from(m: KeyModeArg) -> MatchMode {
        match m {
            KeyModeArg::Exact => MatchMode::Exact,
            KeyModeArg::ShapeInsensitive => MatchMode::ShapeInsensitive,
        }
    }
}

#[derive(Args)]
struct BindArgs {
    /// Parameter binding, e.g. `-b N=16`; repeatable. Defaults come from
    /// the program's `param X = v` declarations.
    #[arg(short, long = "bind", value_parser = parse_binding)]
    bind: Vec<(String, i64)>,
}

fn parse_binding(s: &str) -> Result<(String, i64), String> {
    let (name, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=VALUE, got `{s}`"))?;
    Ok((
        name.trim().to_string(),
        value
            .trim()
            .parse()
            .map_err(|e| format!("bad value in `{s}`: {e}"))?,
    ))
}

#[derive(Subcommand)]
enum Command {
    /// Parse a kernel and echo it (pretty DSL or interchange JSON).
    Parse {
        file: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Print the dependence-edge table.
    Deps {
        file: PathBuf,
        /// Skip the concrete-distance upgrade pass.
        #[arg(long)]
        static_only: bool,
    },
    /// Run maximal fission + stride minimization.
    Normalize {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "distance")]
        metric: MetricArg,
        #[arg(long)]
        report: bool,
        #[arg(long)]
        json: bool,
    },
    /// Print canonical text and fingerprint.
    Canon {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "exact")]
        mode: KeyModeArg,
    },
    /// Generate random equivalent variants as `<stem>.v<k>.loop`.
    Variants {
        file: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        count: usize,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Compare two kernels under the interpreter.
    Equiv {
        file1: PathBuf,
        file2: PathBuf,
        #[command(flatten)]
        bind: BindArgs,
        #[arg(long, value_enum, default_value = "int")]
        mode: ModeArg,
        #[arg(long, default_value = "1,42,1234")]
        seeds: String,
    },
    /// Execute a kernel and print its output buffers (or a digest).
    Interp {
        file: PathBuf,
        #[command(flatten)]
        bind: BindArgs,
        #[arg(long, value_enum, default_value = "int")]
        mode: ModeArg,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Print one FNV-1a digest per buffer instead of all elements.
        #[arg(long)]
        digest: bool,
    },
    /// Report the idiom matched by each top-level nest.
    Match { file: PathBuf },
    /// Look the kernel up in a recipe database and apply the hit.
    Apply {
        file: PathBuf,
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Recipe-database maintenance.
    Db {
        #[command(subcommand)]
        action: DbAction,
    },
    /// Emit C99 text.
    EmitC { file: PathBuf },
    /// Run the full convergence experiment over a corpus directory.
    Check {
        dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        count: usize,
        #[arg(long, value_enum, default_value = "distance")]
        metric: MetricArg,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum DbAction {
    /// Seed the database with a default recipe per (normalized) kernel.
    Seed {
        #[arg(long)]
        db: PathBuf,
        files: Vec<PathBuf>,
    },
    /// List database entries.
    List {
        #[arg(long)]
        db: PathBuf,
    },
}

fn load_program(path: &Path) -> Result<Program, String> {
    let text =
        std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        ir::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
    } else {
        frontend::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

fn env_iter_cap() -> Option<u64> {
    std::env::var("LOOPNORM_ITER_CAP").ok()?.parse().ok()
}

fn exec_config(p: &Program, bind: &[(String, i64)], mode: Mode, seed: u64) -> ExecutionConfig {
    let mut bindings = p.default_bindings();
    for (k, v) in bind {
        bindings.insert(k.clone(), *v);
    }
    ExecutionConfig {
        bindings,
        mode,
        seed,
        iter_cap: env_iter_cap().unwrap_or(interp::DEFAULT_ITER_CAP),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Parse { file, json } => {
            let p = load_program(&file)?;
            if json {
                println!("{}", ir::to_json(&p));
            } else {
                print!("{}", frontend::pretty_print(&p));
            }
        }
        Command::Deps { file, static_only } => {
            let p = load_program(&file)?;
            let g = if static_only {
                deps::analyze_static(&p)
            } else {
                deps::analyze(&p)
            };
            print!("{}", g.table());
        }
        Command::Normalize {
            file,
            metric,
            report,
            json,
        } => {
            let p = load_program(&file)?;
            let (q, rep) = normalize::normalize(&p, metric.into());
            if json {
                println!("{}", ir::to_json(&q));
            } else {
                print!("{}", frontend::pretty_print(&q));
            }
            if report {
                eprintln!(
                    "fission splits: {}; permutations: {:?}; cost {} -> {}",
                    rep.fission_splits, rep.permutations, rep.cost_before, rep.cost_after
                );
            }
        }
        Command::Canon { file, mode } => {
            let p = load_program(&file)?;
            let mode: MatchMode = mode.into();
            let text = canonical::canonical_text(&p, mode);
            print!("{text}");
            println!("fingerprint: {:016x}", canonical::match_key(&p, mode));
        }
        Command::Variants {
            file,
            seed,
            count,
            out_dir,
        } => {
            let p = load_program(&file)?;
            let stem = file
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("kernel")
                .to_string();
            let dir = out_dir.unwrap_or_else(|| {
                file.parent().map(Path::to_path_buf).unwrap_or_default()
            });
            for (k, v) in variants::generate(&p, seed, count).iter().enumerate() {
                let out = dir.join(format!("{stem}.v{}.loop", k + 1));
                std::fs::write(&out, frontend::pretty_print(&v.program))
                    .map_err(|e| format!("{}: {e}", out.display()))?;
                println!("{}", out.display());
            }
        }
        Command::Equiv {
            file1,
            file2,
            bind,
            mode,
            seeds,
        } => {
            let p1 = load_program(&file1)?;
            let p2 = load_program(&file2)?;
            let mode = match mode {
                ModeArg::Int => Mode::Int,
                ModeArg::Float => Mode::Float,
            };
            let configs: Vec<ExecutionConfig> = seeds
                .split(',')
                .filter_map(|s| s.trim().parse::<u64>().ok())
                .map(|s| exec_config(&p1, &bind.bind, mode, s))
                .collect();
            match interp::equivalent(&p1, &p2, &configs).map_err(|e| e.to_string())? {
                Verdict::Equivalent => println!("equivalent"),
                Verdict::Mismatch {
                    seed,
                    array,
                    index,
                    left,
                    right,
                } => {
                    println!(
                        "mismatch: seed {seed}, {array}[{index}]: {left} vs {right}"
                    );
                    return Ok(ExitCode::FAILURE);
                }
            }
        }
        Command::Interp {
            file,
            bind,
            mode,
            seed,
            digest,
        } => {
            let p = load_program(&file)?;
            let mode = match mode {
                ModeArg::Int => Mode::Int,
                ModeArg::Float => Mode::Float,
            };
            let config = exec_config(&p, &bind.bind, mode, seed);
            let buffers = interp::run(&p, &config).map_err(|e| e.to_string())?;
            let mut names: Vec<&String> = buffers.keys().collect();
            names.sort();
            for name in names {
                let text = render_buffer(&buffers[name]);
                if digest {
                    println!("{name}: {:016x}", loopnorm::fnv1a64(text.as_bytes()));
                } else {
                    println!("{name}: {text}");
                }
            }
        }
        Command::Match { file } => {
            let p = load_program(&file)?;
            for (i, s) in p.body.iter().enumerate() {
                match recipes::detect_idiom(s) {
                    Some(name) => println!("nest {i}: {name}"),
                    None => println!("nest {i}: none"),
                }
            }
        }
        Command::Apply { file, db, json } => {
            let p = load_program(&file)?;
            let database = RecipeDatabase::load(&db).map_err(|e| e.to_string())?;
            let recipe = database
                .lookup(&p)
                .ok_or_else(|| "no recipe matches this kernel".to_string())?;
            let q = recipes::apply(recipe, &p).map_err(|e| e.to_string())?;
            if json {
                println!("{}", ir::to_json(&q));
            } else {
                print!("{}", frontend::pretty_print(&q));
            }
        }
        Command::Db { action } => match action {
            DbAction::Seed { db, files } => {
                let mut database = if db.exists() {
                    RecipeDatabase::load(&db).map_err(|e| e.to_string())?
                } else {
                    RecipeDatabase::new()
                };
                for file in files {
                    let p = load_program(&file)?;
                    let (q, _) = normalize::normalize(&p, Metric::Distance);
                    let recipe = default_recipe(&q, &file);
                    database
                        .seed(&[(q, recipe)])
                        .map_err(|e| format!("{}: {e}", file.display()))?;
                    println!("seeded {}", file.display());
                }
                database.save(&db).map_err(|e| e.to_string())?;
            }
            DbAction::List { db } => {
                let database = RecipeDatabase::load(&db).map_err(|e| e.to_string())?;
                for r in database.recipes() {
                    println!(
                        "{:016x} {} steps={} ({})",
                        r.key,
                        r.mode,
                        r.steps.len(),
                        r.provenance
                    );
                }
            }
        },
        Command::EmitC { file } => {
            let p = load_program(&file)?;
            print!("{}", recipes::emit_c(&p));
        }
        Command::Check {
            dir,
            seed,
            count,
            metric,
            json,
        } => {
            return check(&dir, seed, count, metric.into(), json);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn render_buffer(b: &interp::Buffer) -> String {
    use itertools::Itertools;
    match b {
        interp::Buffer::Int(v) => format!("[{}]", v.iter().join(", ")),
        interp::Buffer::Float(v) => format!("[{}]", v.iter().map(|x| format!("{x:e}")).join(", ")),
    }
}

/// A conservative default recipe for seeding: parallelize the outermost
/// legal loop and vectorize the innermost legal loop of each top-level
/// nest; steps that would be illegal are simply not included.
fn default_recipe(normalized: &Program, source: &Path) -> Recipe {
    let mut steps = Vec::new();
    for (i, s) in normalized.body.iter().enumerate() {
        if s.as_loop().is_none() {
            continue;
        }
        let par = Transform::MarkParallel { path: vec![i] };
        if recipes::apply_steps(std::slice::from_ref(&par), normalized).is_ok() {
            steps.push(par);
        }
        // Innermost loop along the leftmost chain.
        let mut path = vec![i];
        let mut cur = s.as_loop().unwrap();
        while let Some(inner) = cur.body.first().and_then(|x| x.as_loop()) {
            path.push(0);
            cur = inner;
        }
        let vec = Transform::MarkVectorize { path };
        if recipes::apply_steps(std::slice::from_ref(&vec), normalized).is_ok() {
            steps.push(vec);
        }
    }
    Recipe {
        key: 0,
        mode: MatchMode::Exact,
        steps,
        provenance: format!("seeded from {}", source.display()),
    }
}

struct KernelReport {
    name: String,
    properties: Vec<(&'static str, Result<(), String>)>,
}

impl KernelReport {
    fn passed(&self) -> bool {
        self.properties.iter().all(|(_, r)| r.is_ok())
    }
}

/// The A/B convergence experiment over a corpus directory. For each
/// kernel: variants from two seeds all normalize to one fingerprint, the
/// normalized program is interpreter-equivalent to the original, and the
/// result is idempotent, atomic, and stride-minimal.
fn check(dir: &Path, seed: u64, count: usize, metric: Metric, json: bool) -> Result<ExitCode, String> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("loop"))
        .collect();
    files.sort();

    let mut reports = Vec::new();
    for file in &files {
        let name = file
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("?")
            .to_string();
        reports.push(check_kernel(file, name, seed, count, metric));
    }

    let all_pass = reports.iter().all(KernelReport::passed);
    if json {
        let doc = serde_json::json!({
            "version": 1,
            "pass": all_pass,
            "kernels": reports.iter().map(|r| serde_json::json!({
                "name": r.name,
                "properties": r.properties.iter().map(|(k, v)| serde_json::json!({
                    "name": k,
                    "status": if v.is_ok() { "pass" } else { "fail" },
                    "detail": v.as_ref().err().cloned().unwrap_or_default(),
                })).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
        });
        println!("{}", serde_json::to_string_pretty(&doc).unwrap());
    } else {
        for r in &reports {
            let status = if r.passed() { "pass" } else { "FAIL" };
            println!("{:<20} {status}", r.name);
            for (prop, res) in &r.properties {
                match res {
                    Ok(()) => println!("  {prop:<18} pass"),
                    Err(e) => println!("  {prop:<18} fail: {e}"),
                }
            }
        }
        println!(
            "{} kernels, {}",
            reports.len(),
            if all_pass { "all pass" } else { "FAILURES" }
        );
    }
    Ok(if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn check_kernel(
    file: &Path,
    name: String,
    seed: u64,
    count: usize,
    metric: Metric,
) -> KernelReport {
    let mut props: Vec<(&'static str, Result<(), String>)> = Vec::new();
    let p = match load_program(file) {
        Ok(p) => p,
        Err(e) => {
            return KernelReport {
                name,
                properties: vec![("parse", Err(e))],
            }
        }
    };
    props.push(("parse", Ok(())));

    let (normalized, _) = normalize::normalize(&p, metric);
    let fp = canonical::canonicalize(&normalized).fingerprint;

    // Convergence across variants and seeds.
    let mut convergence = Ok(());
    let mut equivalence = Ok(());
    'outer: for s in [seed, seed + 1] {
        for (k, v) in variants::generate(&p, s, count).iter().enumerate() {
            let (n, _) = normalize::normalize(&v.program, metric);
            let vfp = canonical::canonicalize(&n).fingerprint;
            if vfp != fp {
                convergence = Err(format!(
                    "variant {} (seed {s}) fingerprint {vfp:016x} != {fp:016x}",
                    k + 1
                ));
                break 'outer;
            }
            if let Err(e) = variant_equivalent(&p, v, s) {
                equivalence = Err(format!("variant {} (seed {s}): {e}", k + 1));
                break 'outer;
            }
        }
    }
    props.push(("convergence", convergence));

    // Original vs normalized semantics.
    let configs: Vec<ExecutionConfig> = [1u64, 42, 1234]
        .iter()
        .map(|&s| exec_config(&p, &[], Mode::Int, s))
        .collect();
    let semantics = match interp::equivalent(&p, &normalized, &configs) {
        Ok(Verdict::Equivalent) => Ok(()),
        Ok(v) => Err(format!("{v:?}")),
        Err(e) => Err(e.to_string()),
    };
    props.push(("semantics", semantics));
    props.push(("variant-equiv", equivalence));

    // Idempotence.
    let (renorm, _) = normalize::normalize(&normalized, metric);
    let idem = if ir::structurally_equal(&normalized, &renorm, false) {
        Ok(())
    } else {
        Err("normalize(normalize(p)) differs".into())
    };
    props.push(("idempotence", idem));

    // Atomicity: every loop body is a single fission group.
    props.push(("atomicity", atomicity(&normalized)));

    // Stride minimality (distance metric only; the audit is stride-based).
    if metric == Metric::Distance {
        let minimal = match normalize::stride_counterexample(&normalized) {
            None => Ok(()),
            Some((path, perm)) => Err(format!(
                "band at {path:?} improves under permutation {perm:?}"
            )),
        };
        props.push(("stride-minimal", minimal));
    }

    KernelReport {
        name,
        properties: props,
    }
}

fn atomicity(p: &Program) -> Result<(), String> {
    fn walk(p: &Program, g: &deps::DependenceGraph, body: &[Stmt], path: &mut Vec<usize>) -> Result<(), String> {
        use loopnorm::ir::Stmt;
        for (i, s) in body.iter().enumerate() {
            if let Stmt::Loop(l) = s {
                path.push(i);
                let groups = deps::fission_partition(p, g, Some(path));
                if groups.len() > 1 {
                    return Err(format!("loop at {path:?} splits into {} groups", groups.len()));
                }
                walk(p, g, &l.body, path)?;
                path.pop();
            }
        }
        Ok(())
    }
    let g = deps::analyze_static(p);
    walk(p, &g, &p.body, &mut Vec::new())
}

use loopnorm::ir::Stmt;

fn variant_equivalent(origin: &Program, v: &variants::Variant, seed: u64) -> Result<(), String> {
    // Compare buffers across the variant's array renaming by renaming the
    // variant back to the origin's array names first.
    let mut back = v.program.clone();
    let inverse: HashMap<String, String> = v
        .array_map
        .iter()
        .map(|(o, n)| (n.clone(), o.clone()))
        .collect();
    rename_arrays_back(&mut back, &inverse);
    let configs = vec![exec_config(origin, &[], Mode::Int, seed)];
    match interp::equivalent(origin, &back, &configs).map_err(|e| e.to_string())? {
        Verdict::Equivalent => Ok(()),
        v => Err(format!("{v:?}")),
    }
}

fn rename_arrays_back(p: &mut Program, map: &HashMap<String, String>) {
    for a in &mut p.arrays {
        if let Some(n) = map.get(&a.name) {
            a.name = n.clone();
        }
    }
    fn walk(body: &mut [Stmt], map: &HashMap<String, String>) {
        for s in body {
            match s {
                Stmt::Loop(l) => walk(&mut l.body, map),
                Stmt::Comp(c) => {
                    if let Some(n) = map.get(&c.write.array) {
                        c.write.array = n.clone();
                    }
                    for r in &mut c.reads {
                        if let Some(n) = map.get(&r.array) {
                            r.array = n.clone();
                        }
                    }
                }
                Stmt::Call(c) => {
                    for a in &mut c.args {
                        if let Some(n) = map.get(a) {
                            *a = n.clone();
                        }
                    }
                }
            }
        }
    }
    walk(&mut p.body, map);
}
