//! `gossip`: enumerate, compare, draw and check dynamic gossip protocols.

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gossip_core::logic::parse_formula_with;
use gossip_core::protocol::{
    self, compact_decision_points, compare, history_text, verify_candy_claims, Success,
};
use gossip_core::semantics::to_dot;
use gossip_core::strengthening::{
    check_equivalence_theorem, check_monotonicity_instance, check_nonidempotence, extension_included, strengthen,
    StrengtheningKind as K,
};
use gossip_core::{
    builtin_graph, Agent, CallSequence, Error, GossipGraph, Model, ModelConfig, ProtocolId, Registry,
    BUILTIN_GRAPHS,
};

#[derive(Parser)]
#[command(name = "gossip", version, about = "Dynamic gossip protocol analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the terminal call sequences of a protocol.
    Sequences {
        #[command(flatten)]
        run: RunArgs,
        /// Only the shortest prefixes whose outcome is already decided.
        #[arg(long)]
        compact: bool,
        /// Print only the terminal and successful counts.
        #[arg(long)]
        count_only: bool,
    },
    /// Terminal sequences of several protocols side by side.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Keep only sequences starting with these calls, without the prefix.
        #[arg(long)]
        after: Option<String>,
    },
    /// Execution tree in DOT with the epistemic edges of one agent.
    Tree {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 0)]
        agent: usize,
        /// Number of calls to draw.
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Evaluate a formula after a history. Exit status 0 if true, 1 if false.
    Check {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        formula: String,
        #[arg(long, default_value = "")]
        history: String,
    },
    /// Symmetry, epistemicness and strengthening checks for each protocol.
    Properties {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Graphs satisfying a named predicate.
    Search {
        #[arg(long, value_enum)]
        predicate: Predicate,
        /// Search the builtin graphs instead of random ones.
        #[arg(long)]
        builtins: bool,
        #[arg(long, default_value_t = 4)]
        n: usize,
        /// Seed range `start..end` (end exclusive).
        #[arg(long, default_value = "0..100")]
        seeds: String,
        /// Edge probability for random graphs.
        #[arg(long, default_value_t = 0.3)]
        p: f64,
        #[arg(long)]
        budget_star: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// `builtin:NAME`, `random:N[:SEED[:P]]`, a file, or inline text such as "Ab Bc bC".
    #[arg(long, default_value = "builtin:three")]
    graph: String,
    /// Protocol name; repeatable.
    #[arg(long = "protocol", default_value = "LNS")]
    protocols: Vec<String>,
    /// Bound on star iterations and protocol depth.
    #[arg(long)]
    budget_star: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Seed for `random:N` graphs without an explicit seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
    Table,
    Tree,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Predicate {
    LnsWeakNotStrong,
    HardLookaheadNotIdempotent,
}

enum Failure {
    Input(String),
    Budget(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_budget() {
            Failure::Budget(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type Run<T> = Result<T, Failure>;

fn input<T>(msg: impl Into<String>) -> Run<T> {
    Err(Failure::Input(msg.into()))
}

fn parse_graph(spec: &str, seed: u64) -> Run<GossipGraph> {
    if let Some(name) = spec.strip_prefix("builtin:") {
        return match builtin_graph(name) {
            Some(g) => Ok(g),
            None => {
                let names: Vec<&str> = BUILTIN_GRAPHS.iter().map(|(k, _)| *k).collect();
                input(format!("unknown builtin graph `{name}`; expected one of {}", names.join(", ")))
            }
        };
    }
    if let Some(rest) = spec.strip_prefix("random:") {
        let parts: Vec<&str> = rest.split(':').collect();
        let bad = || Failure::Input(format!("bad random graph spec `{spec}`"));
        let n: usize = parts[0].parse().map_err(|_| bad())?;
        let seed = match parts.get(1) {
            Some(s) => s.parse().map_err(|_| bad())?,
            None => seed,
        };
        let p = match parts.get(2) {
            Some(s) => s.parse().map_err(|_| bad())?,
            None => 0.3,
        };
        if parts.len() > 3 {
            return Err(bad());
        }
        return Ok(GossipGraph::random(n, seed, p)?);
    }
    let path = std::path::Path::new(spec);
    if path.is_file() {
        return Ok(std::fs::read_to_string(path)?.trim().parse()?);
    }
    Ok(spec.parse()?)
}

fn config(budget: Option<usize>) -> Run<ModelConfig> {
    if budget == Some(0) {
        return input("--budget-star must be positive");
    }
    Ok(ModelConfig {
        star_budget: budget,
        ..ModelConfig::default()
    })
}

fn load(run: &RunArgs) -> Run<(Model, Vec<ProtocolId>)> {
    let g = parse_graph(&run.graph, run.seed)?;
    let mut m = Model::with_config(g, Registry::with_builtins(), config(run.budget_star)?);
    let ids = run
        .protocols
        .iter()
        .map(|p| m.resolve(p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((m, ids))
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "✓"
    } else {
        "×"
    }
}

fn sequences(run: &RunArgs, compact: bool, count_only: bool) -> Run<String> {
    let (mut m, ids) = load(run)?;
    let mut out = String::new();
    for (i, &p) in ids.iter().enumerate() {
        let r = protocol::extension(&mut m, p)?;
        if ids.len() > 1 {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&format!("# {}\n", r.protocol));
        }
        if count_only {
            out.push_str(&r.count_line());
            out.push('\n');
            continue;
        }
        let csv = run.format == Some(Format::Csv);
        if compact {
            if csv {
                out.push_str("history,successful\n");
            }
            for (h, ok) in compact_decision_points(&r) {
                if csv {
                    out.push_str(&format!("{},{ok}\n", history_text(&h)));
                } else {
                    out.push_str(&format!("{} {}\n", history_text(&h), mark(ok)));
                }
            }
        } else if csv {
            out.push_str(&r.to_csv());
        } else {
            out.push_str(&r.to_text());
            out.push_str(&r.count_line());
            out.push('\n');
        }
    }
    Ok(out)
}

fn compare_cmd(run: &RunArgs, after: Option<&str>) -> Run<String> {
    let (mut m, ids) = load(run)?;
    let after: Option<CallSequence> = after.map(str::parse).transpose()?;
    let table = compare(&mut m, &ids, after.as_ref())?;
    Ok(match run.format {
        Some(Format::Csv) => table.to_csv(),
        _ => table.to_table(),
    })
}

fn tree(run: &RunArgs, agent: usize, depth: Option<usize>) -> Run<String> {
    let (mut m, ids) = load(run)?;
    if agent >= m.agent_count() {
        return input(format!("agent {agent} out of range for {} agents", m.agent_count()));
    }
    if ids.len() != 1 {
        return input("tree takes exactly one protocol");
    }
    Ok(to_dot(&mut m, ids[0], Agent::from(agent), depth)?)
}

fn check(run: &RunArgs, formula: &str, history: &str) -> Run<bool> {
    let (mut m, _) = load(run)?;
    let h: CallSequence = history.parse()?;
    let f = parse_formula_with(formula, &mut |name| m.registry_mut().resolve(name))?;
    Ok(m.eval(&f, &h)?)
}

struct Lines(Vec<(String, bool, String)>);

impl Lines {
    fn push(&mut self, name: impl Into<String>, ok: bool, detail: impl Into<String>) {
        self.0.push((name.into(), ok, detail.into()));
    }
}

/// Returns the report and whether every check passed.
fn properties(run: &RunArgs) -> Run<(String, bool)> {
    let (mut m, ids) = load(run)?;
    let mut lines = Lines(Vec::new());
    for &p in &ids {
        let name = m.protocol_name(p).to_string();
        let r = protocol::extension(&mut m, p)?;
        let success = match r.success() {
            Success::Strong => "strong",
            Success::Weak => "weak",
            Success::Unsuccessful => "unsuccessful",
        };
        lines.push(format!("{name} extension"), true, format!("{} {success}", r.count_line()));
        match protocol::is_epistemic_on(&mut m, p)? {
            None => lines.push(format!("{name} epistemic"), true, ""),
            Some(w) => lines.push(
                format!("{name} epistemic"),
                false,
                format!("{} permitted after {} but not after {}", w.call, history_text(&w.permitted), history_text(&w.forbidden)),
            ),
        }
        if m.agent_count() <= 8 {
            match protocol::is_symmetric_on(&mut m, p)? {
                None => lines.push(format!("{name} symmetric"), true, ""),
                Some(w) => lines.push(
                    format!("{name} symmetric"),
                    false,
                    format!("permutation {:?} history {}", w.permutation, history_text(&w.history)),
                ),
            }
        }
        let redundant = protocol::has_redundant_calls(&r);
        lines.push(
            format!("{name} no-redundant-calls"),
            redundant.is_none(),
            redundant.map(|h| history_text(&h)).unwrap_or_default(),
        );
        let eq = check_equivalence_theorem(&mut m, p, 1)?;
        lines.push(format!("{name} sq=hubd"), eq.hard, "");
        lines.push(format!("{name} dia=subd"), eq.soft, "");
        let mut made = Vec::new();
        for kind in [K::HardLookahead, K::SoftLookahead, K::HardOneStep, K::SoftOneStep] {
            let q = strengthen(m.registry_mut(), p, kind)?;
            let grows = extension_included(&mut m, q, p)?;
            lines.push(
                format!("{} non-increasing", m.protocol_name(q)),
                grows.is_none(),
                grows.map(|h| history_text(&h)).unwrap_or_default(),
            );
            made.push(q);
        }
        for (kind, sub) in [(K::SoftOneStep, made[1]), (K::SoftOneStep, made[0])] {
            let out = check_monotonicity_instance(&mut m, p, sub, kind)?;
            let label = format!("{} monotone ({} under {name})", kind.symbol(), m.protocol_name(sub));
            let detail: Vec<String> = out.witnesses.iter().map(history_text).collect();
            lines.push(label, out.holds, detail.join(" "));
        }
        // hard strengthenings are not monotone in general, so a failure
        // here is an observation rather than a failed check
        for kind in [K::HardOneStep, K::HardLookahead] {
            let out = check_monotonicity_instance(&mut m, p, made[1], kind)?;
            let detail: Vec<String> = out.witnesses.iter().map(history_text).collect();
            let state = if out.holds { "holds" } else { "violated" };
            lines.push(
                format!("{} monotone ({} under {name}) {state}", kind.symbol(), m.protocol_name(made[1])),
                true,
                detail.join(" "),
            );
        }
    }
    if builtin_graph("candy").as_ref() == Some(m.initial()) {
        for c in verify_candy_claims(&mut m)? {
            lines.push(format!("candy claim {}", c.label), c.passed, c.detail);
        }
    }
    let all = lines.0.iter().all(|l| l.1);
    let mut out = String::new();
    let csv = run.format == Some(Format::Csv);
    if csv {
        out.push_str("check,result,detail\n");
    }
    for (name, ok, detail) in &lines.0 {
        let result = if *ok { "pass" } else { "fail" };
        if csv {
            out.push_str(&format!("{},{result},{}\n", csv_field(name), csv_field(detail)));
        } else if detail.is_empty() {
            out.push_str(&format!("{result}\t{name}\n"));
        } else {
            out.push_str(&format!("{result}\t{name}\t{detail}\n"));
        }
    }
    Ok((out, all))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn seed_range(text: &str) -> Run<std::ops::Range<u64>> {
    let bad = || Failure::Input(format!("bad seed range `{text}`, expected START..END"));
    let (a, b) = text.split_once("..").ok_or_else(bad)?;
    Ok(a.trim().parse().map_err(|_| bad())?..b.trim().parse().map_err(|_| bad())?)
}

fn matches(g: &GossipGraph, predicate: Predicate, budget: Option<usize>) -> Run<bool> {
    let mut m = Model::with_config(g.clone(), Registry::new(), config(budget)?);
    Ok(match predicate {
        Predicate::LnsWeakNotStrong => protocol::classify_success(&mut m, ProtocolId::LNS)? == Success::Weak,
        Predicate::HardLookaheadNotIdempotent => {
            check_nonidempotence(&mut m, ProtocolId::LNS)?.hard_lookahead_not_idempotent
        }
    })
}

fn search(predicate: Predicate, builtins: bool, n: usize, seeds: &str, p: f64, budget: Option<usize>) -> Run<String> {
    let mut out = String::new();
    if builtins {
        for (name, text) in BUILTIN_GRAPHS {
            let g: GossipGraph = text.parse()?;
            if matches(&g, predicate, budget)? {
                out.push_str(&format!("{name}\t{g}\n"));
            }
        }
        return Ok(out);
    }
    for seed in seed_range(seeds)? {
        let g = GossipGraph::random(n, seed, p)?;
        if matches(&g, predicate, budget)? {
            out.push_str(&format!("random:{n}:{seed}:{p}\t{g}\n"));
        }
    }
    Ok(out)
}

fn emit(text: &str, out: Option<&PathBuf>) -> Run<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            // a closed pipe is not an error worth reporting
            let _ = stdout.write_all(text.as_bytes());
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Run<bool> {
    match cli.command {
        Command::Sequences { run, compact, count_only } => {
            emit(&sequences(&run, compact, count_only)?, run.out.as_ref())?;
        }
        Command::Compare { run, after } => emit(&compare_cmd(&run, after.as_deref())?, run.out.as_ref())?,
        Command::Tree { run, agent, depth } => emit(&tree(&run, agent, depth)?, run.out.as_ref())?,
        Command::Check { run, formula, history } => {
            let value = check(&run, &formula, &history)?;
            emit(&format!("{value}\n"), run.out.as_ref())?;
            return Ok(value);
        }
        Command::Properties { run } => {
            let (text, ok) = properties(&run)?;
            emit(&text, run.out.as_ref())?;
            return Ok(ok);
        }
        Command::Search { predicate, builtins, n, seeds, p, budget_star, out } => {
            emit(&search(predicate, builtins, n, &seeds, p, budget_star)?, out.as_ref())?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Budget(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
