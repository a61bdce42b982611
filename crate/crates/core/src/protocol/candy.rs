//! Enumerable sub-claims of the impossibility argument on the candy graph.

use crate::error::{Error, Result};
use crate::graph::{Agent, CallSequence, GossipGraph};
use crate::registry::ProtocolId;
use crate::semantics::Model;

use super::{callees, extension, ExtensionReport};

pub const CANDY: &str = "Acd Bc C D dE cdF";
pub const CANDY_SUCCESS: &str = "02;12;53;43;13;03;23;52;42";
pub const CANDY_FAILURE: &str = "02;12;53;43;13;03;52;42";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClaimResult {
    pub label: String,
    pub passed: bool,
    pub detail: String,
}

fn claim(label: &str, passed: bool, detail: String) -> ClaimResult {
    ClaimResult {
        label: label.to_string(),
        passed,
        detail,
    }
}

fn seq(text: &str) -> CallSequence {
    text.parse().expect("fixed call sequence")
}

/// Successful LNS terminals extending `prefix`.
fn successes_below(report: &ExtensionReport, prefix: &CallSequence) -> usize {
    report
        .terminals
        .iter()
        .filter(|t| t.successful && t.history.starts_with(prefix))
        .count()
}

/// Runs claims (a) to (e) against the LNS extension of the candy graph.
pub fn verify_candy_claims(model: &mut Model) -> Result<Vec<ClaimResult>> {
    let candy: GossipGraph = CANDY.parse()?;
    if model.initial() != &candy {
        return Err(Error::Input(format!(
            "expected the candy graph `{CANDY}`, got `{}`",
            model.initial()
        )));
    }
    let lns = ProtocolId::LNS;
    let report = extension(model, lns)?;
    let terminal = |h: &CallSequence| report.terminals.iter().find(|t| &t.history == h);
    let mut out = Vec::new();

    let good = seq(CANDY_SUCCESS);
    let t = terminal(&good);
    out.push(claim(
        "a",
        t.is_some_and(|t| t.successful),
        format!("{good} terminal={} successful={}", t.is_some(), t.is_some_and(|t| t.successful)),
    ));

    let bad = seq(CANDY_FAILURE);
    let t = terminal(&bad);
    let g = candy.apply_sequence(&bad)?;
    let lacks = !g.knows_secret(Agent(5), Agent(4)) && !g.knows_number(Agent(5), Agent(4));
    out.push(claim(
        "b",
        t.is_some_and(|t| !t.successful) && lacks,
        format!(
            "{bad} terminal={} successful={} 5 lacks 4={lacks}",
            t.is_some(),
            t.is_some_and(|t| t.successful)
        ),
    ));

    let targets = callees(&report);
    out.push(claim(
        "c",
        targets == [Agent(2), Agent(3)],
        format!(
            "callees {}",
            targets.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(",")
        ),
    ));

    for first in ["12", "43"] {
        let k = successes_below(&report, &seq(first));
        out.push(claim(&format!("d:{first}"), k == 0, format!("{k} successful below {first}")));
    }

    for prefix in ["02;43", "02;03", "02;23", "02;52", "03;53"] {
        let p = seq(prefix);
        let present = report.histories.contains(&p);
        let k = successes_below(&report, &p);
        out.push(claim(
            &format!("e:{prefix}"),
            present && k == 0,
            format!("{k} successful below {prefix}"),
        ));
    }
    Ok(out)
}
