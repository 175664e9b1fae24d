use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use wsp_core::conditional::{
    build_max_xor_workflow, execution_sets, flat, satisfiable, sharp, Satisfiability,
};
use wsp_core::dsl::{self, SchemaDocument};
use wsp_core::owsp::{solve_owsp, OwspMode};
use wsp_core::solve::{check_step_grant, min_users, solve_auto, solve_fpt, solve_naive, Grant};
use wsp_core::violate::{constraint_violability, prune_constraints};
use wsp_core::{SolveResult, SolverConfig, WorkflowSchema};

#[derive(Parser, Debug)]
#[command(name = "wsp", version, about = "Workflow satisfiability checks over .wsp files")]
struct Cli {
    #[command(flatten)]
    limits: Limits,

    /// Output style.
    #[arg(long, value_enum, default_value_t = Format::Text, global = true)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Limits {
    #[arg(long, global = true)]
    max_plans: Option<u64>,
    #[arg(long, global = true)]
    max_expressions: Option<u64>,
    #[arg(long, global = true)]
    max_partitions: Option<u64>,
    #[arg(long, global = true)]
    max_extensions: Option<u64>,
    /// Worker threads; 1 gives reproducible output.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
}

impl Limits {
    fn config(&self) -> Result<SolverConfig> {
        if self.threads == 0 {
            bail!("--threads must be at least 1");
        }
        let mut c = SolverConfig::default();
        if let Some(v) = self.max_plans {
            c.max_plans = v;
        }
        if let Some(v) = self.max_expressions {
            c.max_expressions = v;
        }
        if let Some(v) = self.max_partitions {
            c.max_partitions = v;
        }
        if let Some(v) = self.max_extensions {
            c.max_extensions = v;
        }
        c.threads = self.threads;
        Ok(c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Kv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Decide whether the schema has a valid plan.
    Solve {
        file: PathBuf,
        /// Enumerate every plan.
        #[arg(long, conflicts_with = "fpt")]
        naive: bool,
        /// Use the constraint-expression solver (`=` and `!=` only).
        #[arg(long)]
        fpt: bool,
    },
    /// Fewest users that make the schema satisfiable with full authorization.
    MinUsers { file: PathBuf },
    /// Decide whether a user may perform a step after the given history.
    Grant {
        file: PathBuf,
        /// Steps already performed, as `step=user,...`.
        #[arg(long, default_value = "")]
        partial: String,
        #[arg(long)]
        step: String,
        #[arg(long)]
        user: String,
    },
    /// Ordered satisfiability over the execution schedules.
    Owsp {
        file: PathBuf,
        #[arg(long, conflicts_with = "all", required_unless_present = "all")]
        exists: bool,
        #[arg(long)]
        all: bool,
    },
    /// Satisfiability of a conditional workflow.
    Conditional {
        file: PathBuf,
        #[arg(long, conflicts_with = "strong", required_unless_present = "strong")]
        weak: bool,
        #[arg(long)]
        strong: bool,
    },
    /// Count and list the execution sets of a formula.
    Count {
        file: PathBuf,
        /// Most execution sets to list.
        #[arg(long, default_value_t = 64)]
        limit: u64,
    },
    /// The formula on K steps with the most execution sets.
    MaxXor { k: usize },
    /// Which constraints some authorized plan can violate.
    Violations { file: PathBuf },
    /// Write the schema without constraints no authorized plan can violate.
    Prune {
        file: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
}

/// What was printed, and whether the answer was positive.
struct Outcome {
    text: String,
    positive: bool,
}

fn load(path: &Path) -> Result<SchemaDocument> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    dsl::parse(&text).map_err(|e| anyhow!("{}:{}:{}: {}", path.display(), e.line, e.column, e.message))
}

fn load_schema(path: &Path) -> Result<(SchemaDocument, WorkflowSchema)> {
    let doc = load(path)?;
    let schema = doc.to_schema()?;
    Ok((doc, schema))
}

fn solve_report(schema: &WorkflowSchema, r: &SolveResult, format: Format) -> String {
    match format {
        Format::Kv => dsl::emit_result(schema, r),
        Format::Text => {
            let mut out = format!("{}\n", r.status);
            if let Some(plan) = &r.witness {
                for (s, u) in schema.plan_pairs(plan) {
                    writeln!(out, "  {s} -> {u}").unwrap();
                }
            }
            out
        }
    }
}

fn parse_partial(schema: &WorkflowSchema, text: &str) -> Result<BTreeMap<wsp_core::StepId, wsp_core::UserId>> {
    let mut out = BTreeMap::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (s, u) = item
            .split_once('=')
            .ok_or_else(|| anyhow!("`{item}` is not of the form step=user"))?;
        let step = schema
            .step_id(s.trim())
            .ok_or_else(|| anyhow!("unknown step `{}`", s.trim()))?;
        let user = schema
            .user_id(u.trim())
            .ok_or_else(|| anyhow!("unknown user `{}`", u.trim()))?;
        if out.insert(step, user).is_some() {
            bail!("step `{}` appears twice in --partial", s.trim());
        }
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<Outcome> {
    let config = cli.limits.config()?;
    let format = cli.format;
    match cli.command {
        Command::Solve { file, naive, fpt } => {
            let (_, schema) = load_schema(&file)?;
            let r = if naive {
                solve_naive(&schema, &config)?
            } else if fpt {
                solve_fpt(&schema, &config)?
            } else {
                solve_auto(&schema, &config)?
            };
            Ok(Outcome {
                text: solve_report(&schema, &r, format),
                positive: r.is_sat(),
            })
        }
        Command::MinUsers { file } => {
            let (dag, constraints) = load(&file)?.template()?;
            let m = min_users(&dag, &constraints, &config)?;
            let value = m.users.map_or("NONE".to_string(), |n| n.to_string());
            let text = match format {
                Format::Text => format!("{value}\n"),
                Format::Kv => format!("min_users: {value}\nsolver_calls: {}\n", m.solver_calls),
            };
            Ok(Outcome {
                text,
                positive: m.users.is_some(),
            })
        }
        Command::Grant {
            file,
            partial,
            step,
            user,
        } => {
            let (_, schema) = load_schema(&file)?;
            let partial = parse_partial(&schema, &partial)?;
            let s = schema.step_id(&step).ok_or_else(|| anyhow!("unknown step `{step}`"))?;
            let u = schema.user_id(&user).ok_or_else(|| anyhow!("unknown user `{user}`"))?;
            let grant = check_step_grant(&schema, &partial, s, u, &config)?;
            let (word, plan) = match &grant {
                Grant::Allow(p) => ("ALLOW", Some(p)),
                Grant::Deny => ("DENY", None),
            };
            let mut text = match format {
                Format::Text => format!("{word}\n"),
                Format::Kv => format!("grant: {word}\n"),
            };
            if let Some(p) = plan {
                match format {
                    Format::Text => {
                        for (s, u) in schema.plan_pairs(p) {
                            writeln!(text, "  {s} -> {u}").unwrap();
                        }
                    }
                    Format::Kv => text.push_str(&dsl::emit_plan(&schema, p)),
                }
            }
            Ok(Outcome {
                text,
                positive: plan.is_some(),
            })
        }
        Command::Owsp { file, exists, all } => {
            let (_, schema) = load_schema(&file)?;
            let mode = if all && !exists { OwspMode::All } else { OwspMode::Exists };
            let r = solve_owsp(&schema, mode, &config)?;
            let label = match mode {
                OwspMode::Exists => "EXISTS",
                OwspMode::All => "ALL",
            };
            let verdict = if r.holds { "SAT" } else { "UNSAT" };
            let mut text = String::new();
            match format {
                Format::Text => {
                    writeln!(text, "{label} {verdict}").unwrap();
                    if let Some(sched) = &r.schedule {
                        writeln!(text, "  schedule: {}", sched.display(schema.dag())).unwrap();
                    }
                    if let Some(p) = &r.plan {
                        for (s, u) in schema.plan_pairs(p) {
                            writeln!(text, "  {s} -> {u}").unwrap();
                        }
                    }
                }
                Format::Kv => {
                    writeln!(text, "mode: {label}\nstatus: {verdict}").unwrap();
                    writeln!(text, "extensions_examined: {}", r.extensions_examined).unwrap();
                    if let Some(sched) = &r.schedule {
                        writeln!(text, "schedule: {}", sched.display(schema.dag())).unwrap();
                    }
                    if let Some(p) = &r.plan {
                        text.push_str(&dsl::emit_plan(&schema, p));
                    }
                }
            }
            Ok(Outcome {
                text,
                positive: r.holds,
            })
        }
        Command::Conditional { file, weak, strong } => {
            let cs = load(&file)?.to_conditional()?;
            let mode = if strong && !weak {
                Satisfiability::Strong
            } else {
                Satisfiability::Weak
            };
            let v = satisfiable(&cs, mode, &config)?;
            let label = match mode {
                Satisfiability::Weak => "WEAK",
                Satisfiability::Strong => "STRONG",
            };
            let verdict = if v.holds { "SAT" } else { "UNSAT" };
            let mut text = String::new();
            match format {
                Format::Text => {
                    writeln!(text, "{label} {verdict}").unwrap();
                    for (d, r) in &v.per_set {
                        writeln!(text, "  {}: {}", d.execution_set, r.status).unwrap();
                    }
                }
                Format::Kv => {
                    writeln!(text, "mode: {label}\nstatus: {verdict}").unwrap();
                    writeln!(text, "execution_sets: {}", v.per_set.len()).unwrap();
                    for (d, r) in &v.per_set {
                        writeln!(text, "set: {} -> {}", d.execution_set, r.status).unwrap();
                    }
                }
            }
            Ok(Outcome {
                text,
                positive: v.holds,
            })
        }
        Command::Count { file, limit } => {
            let doc = load(&file)?;
            let f = doc
                .formula
                .as_ref()
                .ok_or_else(|| anyhow!("{} has no formula", file.display()))?;
            let n = sharp(f);
            // listing more than `limit` sets is refused rather than truncated
            let sets = if n <= limit as u128 { execution_sets(f, limit)? } else { Vec::new() };
            let mut text = String::new();
            match format {
                Format::Text => {
                    writeln!(text, "sharp: {n}\nflat: {}", flat(f)).unwrap();
                    for s in &sets {
                        writeln!(text, "  {s}").unwrap();
                    }
                    if (sets.len() as u128) < n {
                        writeln!(text, "  (listing omitted: more than {limit} sets)").unwrap();
                    }
                }
                Format::Kv => {
                    writeln!(text, "sharp: {n}\nflat: {}", flat(f)).unwrap();
                    for s in &sets {
                        writeln!(text, "set: {s}").unwrap();
                    }
                }
            }
            Ok(Outcome { text, positive: true })
        }
        Command::MaxXor { k } => {
            let f = build_max_xor_workflow(k)?;
            Ok(Outcome {
                text: format!("formula: {f}\nsharp: {}\n", sharp(&f)),
                positive: true,
            })
        }
        Command::Violations { file } => {
            let (_, schema) = load_schema(&file)?;
            let verdicts = constraint_violability(&schema, &config)?;
            let mut text = String::new();
            for (c, v) in schema.constraints().iter().zip(&verdicts) {
                let shown = schema.display_constraint(c);
                match (format, v) {
                    (Format::Text, Some(p)) => {
                        let pairs: Vec<String> =
                            schema.plan_pairs(p).into_iter().map(|(s, u)| format!("{s}={u}")).collect();
                        writeln!(text, "{shown}: VIOLABLE by {}", pairs.join(",")).unwrap();
                    }
                    (Format::Text, None) => writeln!(text, "{shown}: REDUNDANT").unwrap(),
                    (Format::Kv, v) => writeln!(
                        text,
                        "constraint: {shown} -> {}",
                        if v.is_some() { "VIOLABLE" } else { "REDUNDANT" }
                    )
                    .unwrap(),
                }
            }
            Ok(Outcome {
                text,
                positive: verdicts.iter().any(Option::is_some),
            })
        }
        Command::Prune { file, output } => {
            let (mut doc, schema) = load_schema(&file)?;
            let (pruned, removed) = prune_constraints(&schema, &config)?;
            doc.set_constraints(&schema, pruned.constraints())?;
            std::fs::write(&output, dsl::serialize(&doc))
                .with_context(|| format!("writing {}", output.display()))?;
            let mut text = String::new();
            let key = if format == Format::Kv { "removed: " } else { "removed " };
            for c in &removed {
                writeln!(text, "{key}{}", schema.display_constraint(c)).unwrap();
            }
            if format == Format::Kv {
                writeln!(text, "kept: {}", pruned.constraints().len()).unwrap();
            } else {
                writeln!(text, "kept {} of {}", pruned.constraints().len(), schema.constraints().len()).unwrap();
            }
            Ok(Outcome { text, positive: true })
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(o) => {
            print!("{}", o.text);
            if o.positive {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
