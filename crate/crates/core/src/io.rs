//! Text formats. Every writer prints floats with Rust's shortest
//! round-trip representation, so parse followed by serialize is the
//! identity. Lines starting with `#` are comments everywhere.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::PolicyReport;
use crate::frg::VisibleConfig;
use crate::model::{Belief, DiscretePomdp};
use crate::observation::{ConfusionCounts, Mission, StepRecord, TrajectoryBatch};
use crate::solver::{AlphaVector, AlphaVectorPolicy, SolverMeta};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance line written at the top of every artifact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactHeader {
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl ArtifactHeader {
    /// `config` is a canonical rendering of every setting that affects
    /// the artifact.
    pub fn new(seed: u64, config: &str) -> Self {
        ArtifactHeader {
            version: VERSION.to_string(),
            seed,
            config_hash: sha256_hex(config),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "# riskpomdp {} seed={} config={}",
            self.version, self.seed, self.config_hash
        )
    }

    pub fn parse(line: &str) -> Option<Self> {
        let mut parts = line.strip_prefix("# riskpomdp ")?.split(' ');
        let version = parts.next()?.to_string();
        let seed = parts.next()?.strip_prefix("seed=")?.parse().ok()?;
        let config_hash = parts.next()?.strip_prefix("config=")?.to_string();
        Some(ArtifactHeader {
            version,
            seed,
            config_hash,
        })
    }

    /// The header of a document, if its first line carries one.
    pub fn find(text: &str) -> Option<Self> {
        text.lines().next().and_then(Self::parse)
    }
}

fn header_prefix(header: Option<&ArtifactHeader>) -> String {
    header.map(|h| h.line() + "\n").unwrap_or_default()
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::parse(path, line, format!("`{s}` is not a finite number")))
}

fn parse_usize(path: &Path, line: usize, s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::parse(path, line, format!("`{s}` is not a non-negative integer")))
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

// ---------------------------------------------------------------- model

/// Native model format:
///
/// ```text
/// STATES: s1 s2 ...
/// ACTIONS: a1 ...
/// OBSERVATIONS: o1 ...
/// START: p1 p2 ...
/// DISCOUNT: 0.98
/// HORIZON: 60
/// T: <action> <src> <dst> <prob>
/// O: <state> <obs> <prob>
/// R: <state> <reward>
/// ```
///
/// Unlisted probabilities and rewards are zero.
pub fn serialize_model(model: &DiscretePomdp, header: Option<&ArtifactHeader>) -> String {
    let mut out = header_prefix(header);
    writeln!(out, "STATES: {}", model.states.join(" ")).unwrap();
    writeln!(out, "ACTIONS: {}", model.actions.join(" ")).unwrap();
    writeln!(out, "OBSERVATIONS: {}", model.observations.join(" ")).unwrap();
    writeln!(out, "START: {}", join(model.initial_belief.mass())).unwrap();
    writeln!(out, "DISCOUNT: {}", model.discount).unwrap();
    writeln!(out, "HORIZON: {}", model.horizon).unwrap();
    for (a, action) in model.actions.iter().enumerate() {
        for (s, src) in model.states.iter().enumerate() {
            for (n, dst) in model.states.iter().enumerate() {
                let p = model.t(s, a, n);
                if p != 0.0 {
                    writeln!(out, "T: {action} {src} {dst} {p}").unwrap();
                }
            }
        }
    }
    for (s, state) in model.states.iter().enumerate() {
        for (o, obs) in model.observations.iter().enumerate() {
            let p = model.o(s, o);
            if p != 0.0 {
                writeln!(out, "O: {state} {obs} {p}").unwrap();
            }
        }
    }
    for (s, state) in model.states.iter().enumerate() {
        if model.reward[s] != 0.0 {
            writeln!(out, "R: {state} {}", model.reward[s]).unwrap();
        }
    }
    out
}

fn label_list(path: &Path, line: usize, rest: &str) -> Result<Vec<String>> {
    let labels: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
    if labels.is_empty() {
        return Err(Error::parse(path, line, "empty label list"));
    }
    let mut seen = std::collections::BTreeSet::new();
    if let Some(dup) = labels.iter().find(|l| !seen.insert(l.as_str())) {
        return Err(Error::parse(path, line, format!("duplicate label `{dup}`")));
    }
    Ok(labels)
}

/// Parses and validates a native model file.
pub fn parse_model(text: &str, path: &Path) -> Result<DiscretePomdp> {
    let mut states: Option<Vec<String>> = None;
    let mut actions: Option<Vec<String>> = None;
    let mut observations: Option<Vec<String>> = None;
    let mut start: Option<(usize, Vec<f64>)> = None;
    let mut discount = None;
    let mut horizon = None;
    let mut t_entries: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    let mut o_entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut r_entries: BTreeMap<usize, f64> = BTreeMap::new();

    let find = |labels: &Option<Vec<String>>, what: &str, label: &str, line: usize| -> Result<usize> {
        let labels = labels
            .as_ref()
            .ok_or_else(|| Error::parse(path, line, format!("{what} used before they are declared")))?;
        labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::parse(path, line, format!("unknown {what} label `{label}`")))
    };

    for (n, line) in content_lines(text) {
        let (key, rest) = line
            .split_once(':')
            .ok_or_else(|| Error::parse(path, n, "expected `KEY: value`"))?;
        let fields: Vec<&str> = rest.split_whitespace().collect();
        let arity = |k: usize| {
            if fields.len() == k {
                Ok(())
            } else {
                Err(Error::parse(
                    path,
                    n,
                    format!("`{key}` takes {k} fields, found {}", fields.len()),
                ))
            }
        };
        match key.trim() {
            "STATES" => states = Some(label_list(path, n, rest)?),
            "ACTIONS" => actions = Some(label_list(path, n, rest)?),
            "OBSERVATIONS" => observations = Some(label_list(path, n, rest)?),
            "START" => start = Some((n, fields.iter().map(|f| parse_f64(path, n, f)).collect::<Result<_>>()?)),
            "DISCOUNT" => {
                arity(1)?;
                discount = Some(parse_f64(path, n, fields[0])?);
            }
            "HORIZON" => {
                arity(1)?;
                horizon = Some(parse_usize(path, n, fields[0])?);
            }
            "T" => {
                arity(4)?;
                let key = (
                    find(&actions, "action", fields[0], n)?,
                    find(&states, "state", fields[1], n)?,
                    find(&states, "state", fields[2], n)?,
                );
                if t_entries.insert(key, parse_f64(path, n, fields[3])?).is_some() {
                    return Err(Error::parse(path, n, "duplicate transition entry"));
                }
            }
            "O" => {
                arity(3)?;
                let key = (
                    find(&states, "state", fields[0], n)?,
                    find(&observations, "observation", fields[1], n)?,
                );
                if o_entries.insert(key, parse_f64(path, n, fields[2])?).is_some() {
                    return Err(Error::parse(path, n, "duplicate observation entry"));
                }
            }
            "R" => {
                arity(2)?;
                let s = find(&states, "state", fields[0], n)?;
                if r_entries.insert(s, parse_f64(path, n, fields[1])?).is_some() {
                    return Err(Error::parse(path, n, "duplicate reward entry"));
                }
            }
            other => return Err(Error::parse(path, n, format!("unknown section `{other}`"))),
        }
    }

    let last = text.lines().count().max(1);
    let missing = |what: &str| Error::parse(path, last, format!("missing `{what}:` section"));
    let states = states.ok_or_else(|| missing("STATES"))?;
    let actions = actions.ok_or_else(|| missing("ACTIONS"))?;
    let observations = observations.ok_or_else(|| missing("OBSERVATIONS"))?;
    let (start_line, start) = start.ok_or_else(|| missing("START"))?;
    if start.len() != states.len() {
        return Err(Error::parse(
            path,
            start_line,
            format!("START has {} entries for {} states", start.len(), states.len()),
        ));
    }
    let (ns, na, no) = (states.len(), actions.len(), observations.len());
    let mut transition = vec![0.0; na * ns * ns];
    for ((a, s, n), p) in t_entries {
        transition[(a * ns + s) * ns + n] = p;
    }
    let mut observation = vec![0.0; ns * no];
    for ((s, o), p) in o_entries {
        observation[s * no + o] = p;
    }
    let mut reward = vec![0.0; ns];
    for (s, r) in r_entries {
        reward[s] = r;
    }
    let model = DiscretePomdp {
        states,
        actions,
        observations,
        transition,
        observation,
        reward,
        discount: discount.ok_or_else(|| missing("DISCOUNT"))?,
        horizon: horizon.ok_or_else(|| missing("HORIZON"))?,
        initial_belief: Belief::new(start),
    };
    model.ensure_valid()?;
    Ok(model)
}

/// Classic `.pomdp` format with rewards on the entered state and
/// action-independent observations written out for every action.
pub fn export_cassandra(model: &DiscretePomdp) -> String {
    let mut out = String::new();
    writeln!(out, "discount: {}", model.discount).unwrap();
    writeln!(out, "values: reward").unwrap();
    writeln!(out, "states: {}", model.states.join(" ")).unwrap();
    writeln!(out, "actions: {}", model.actions.join(" ")).unwrap();
    writeln!(out, "observations: {}", model.observations.join(" ")).unwrap();
    writeln!(out, "start: {}", join(model.initial_belief.mass())).unwrap();
    out.push('\n');
    for (a, action) in model.actions.iter().enumerate() {
        for (s, src) in model.states.iter().enumerate() {
            for (n, dst) in model.states.iter().enumerate() {
                let p = model.t(s, a, n);
                if p != 0.0 {
                    writeln!(out, "T: {action} : {src} : {dst} {p}").unwrap();
                }
            }
        }
    }
    out.push('\n');
    for (s, state) in model.states.iter().enumerate() {
        for (o, obs) in model.observations.iter().enumerate() {
            let p = model.o(s, o);
            if p != 0.0 {
                writeln!(out, "O: * : {state} : {obs} {p}").unwrap();
            }
        }
    }
    out.push('\n');
    for (s, state) in model.states.iter().enumerate() {
        if model.reward[s] != 0.0 {
            writeln!(out, "R: * : * : {state} : * {}", model.reward[s]).unwrap();
        }
    }
    out
}

// ---------------------------------------------------------------- policy

/// ```text
/// GAMMA: 0.98
/// META: iterations=191 belief_count=500 residual=9.7e-5 converged=true
/// <action> v1 ... vn
/// ```
pub fn serialize_policy(policy: &AlphaVectorPolicy, actions: &[String], header: Option<&ArtifactHeader>) -> String {
    let mut out = header_prefix(header);
    writeln!(out, "GAMMA: {}", policy.discount).unwrap();
    let m = &policy.meta;
    writeln!(
        out,
        "META: iterations={} belief_count={} residual={} converged={}",
        m.iterations, m.belief_count, m.residual, m.converged
    )
    .unwrap();
    for v in &policy.vectors {
        writeln!(out, "{} {}", actions[v.action], join(&v.values)).unwrap();
    }
    out
}

pub fn parse_policy(text: &str, actions: &[String], path: &Path) -> Result<AlphaVectorPolicy> {
    let mut lines = content_lines(text);
    let (n, gamma_line) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty policy file"))?;
    let gamma = gamma_line
        .strip_prefix("GAMMA:")
        .ok_or_else(|| Error::parse(path, n, "expected `GAMMA:`"))
        .and_then(|g| parse_f64(path, n, g.trim()))?;
    let (n, meta_line) = lines
        .next()
        .ok_or_else(|| Error::parse(path, n, "missing `META:` line"))?;
    let meta_fields = meta_line
        .strip_prefix("META:")
        .ok_or_else(|| Error::parse(path, n, "expected `META:`"))?;
    let mut meta = SolverMeta::default();
    for field in meta_fields.split_whitespace() {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| Error::parse(path, n, format!("malformed metadata `{field}`")))?;
        match k {
            "iterations" => meta.iterations = parse_usize(path, n, v)?,
            "belief_count" => meta.belief_count = parse_usize(path, n, v)?,
            "residual" => meta.residual = parse_f64(path, n, v)?,
            "converged" => {
                meta.converged = v
                    .parse()
                    .map_err(|_| Error::parse(path, n, format!("`{v}` is not a boolean")))?
            }
            _ => return Err(Error::parse(path, n, format!("unknown metadata key `{k}`"))),
        }
    }
    let mut vectors = Vec::new();
    let mut dim = None;
    for (n, line) in lines {
        let mut fields = line.split_whitespace();
        let label = fields.next().expect("non-empty line");
        let action = actions
            .iter()
            .position(|a| a == label)
            .ok_or_else(|| Error::parse(path, n, format!("unknown action `{label}`")))?;
        let values = fields.map(|f| parse_f64(path, n, f)).collect::<Result<Vec<_>>>()?;
        if *dim.get_or_insert(values.len()) != values.len() || values.is_empty() {
            return Err(Error::parse(path, n, "alpha vectors have inconsistent lengths"));
        }
        vectors.push(AlphaVector { values, action });
    }
    let mut policy = AlphaVectorPolicy::new(vectors, gamma).map_err(|e| Error::parse(path, n, e.to_string()))?;
    policy.meta = meta;
    Ok(policy)
}

// ---------------------------------------------------------------- batch

/// One row per step:
/// `mission_id,participant_id,step,mode,alarm,action,fires,score,f1..fD`.
/// Rows of a mission are contiguous with steps numbered from 0.
pub fn serialize_batch(batch: &TrajectoryBatch, actions: &[String], header: Option<&ArtifactHeader>) -> String {
    let mut out = header_prefix(header);
    out.push_str("mission_id,participant_id,step,mode,alarm,action,fires,score");
    for i in 1..=batch.feature_dim().unwrap_or(0) {
        write!(out, ",f{i}").unwrap();
    }
    out.push('\n');
    for m in &batch.missions {
        for s in &m.steps {
            write!(
                out,
                "{},{},{},{},{},{},{},{}",
                m.mission_id,
                m.participant_id,
                s.step,
                s.config.mode_label(),
                s.config.alarm_label(),
                actions[s.action],
                s.fires,
                m.score
            )
            .unwrap();
            for f in &s.features {
                write!(out, ",{f}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}

pub fn parse_batch(text: &str, actions: &[String], path: &Path) -> Result<TrajectoryBatch> {
    let mut lines = content_lines(text);
    let (hn, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty batch file"))?;
    let cols: Vec<&str> = header.split(',').collect();
    let fixed = [
        "mission_id",
        "participant_id",
        "step",
        "mode",
        "alarm",
        "action",
        "fires",
        "score",
    ];
    if cols.len() < fixed.len() || cols[..fixed.len()] != fixed {
        return Err(Error::parse(
            path,
            hn,
            format!("header must start with `{}`", fixed.join(",")),
        ));
    }
    for (i, c) in cols[fixed.len()..].iter().enumerate() {
        if *c != format!("f{}", i + 1) {
            return Err(Error::parse(
                path,
                hn,
                format!("feature column {} should be `f{}`", i + 1, i + 1),
            ));
        }
    }

    let mut missions: Vec<Mission> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (n, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(Error::parse(
                path,
                n,
                format!("expected {} fields, found {}", cols.len(), f.len()),
            ));
        }
        let step = parse_usize(path, n, f[2])?;
        let config = VisibleConfig::parse(f[3], f[4])
            .ok_or_else(|| Error::parse(path, n, format!("unknown configuration `{} {}`", f[3], f[4])))?;
        let action = actions
            .iter()
            .position(|a| a == f[5])
            .ok_or_else(|| Error::parse(path, n, format!("unknown action `{}`", f[5])))?;
        let fires = f[6]
            .parse::<u32>()
            .map_err(|_| Error::parse(path, n, format!("`{}` is not a fire count", f[6])))?;
        let score = parse_f64(path, n, f[7])?;
        let features = f[fixed.len()..]
            .iter()
            .map(|x| parse_f64(path, n, x))
            .collect::<Result<Vec<_>>>()?;
        let record = StepRecord {
            step,
            config,
            action,
            fires,
            features,
        };
        match missions.last_mut() {
            Some(m) if m.mission_id == f[0] => {
                if m.participant_id != f[1] || m.score != score {
                    return Err(Error::parse(path, n, "participant or score changes within a mission"));
                }
                if step != m.steps.len() {
                    return Err(Error::parse(
                        path,
                        n,
                        format!("expected step {}, found {step}", m.steps.len()),
                    ));
                }
                m.steps.push(record);
            }
            _ => {
                if !seen.insert(f[0].to_string()) {
                    return Err(Error::parse(
                        path,
                        n,
                        format!("rows of mission `{}` are not contiguous", f[0]),
                    ));
                }
                if step != 0 {
                    return Err(Error::parse(
                        path,
                        n,
                        format!("mission `{}` starts at step {step}", f[0]),
                    ));
                }
                missions.push(Mission {
                    mission_id: f[0].to_string(),
                    participant_id: f[1].to_string(),
                    score,
                    steps: vec![record],
                });
            }
        }
    }
    Ok(TrajectoryBatch { missions })
}

// ---------------------------------------------------------------- confusion

/// `CONFIG manual on: 113 43 / 71 105`; rows are the true class
/// (non-performant first), columns the prediction.
pub fn serialize_confusion(counts: &ConfusionCounts, header: Option<&ArtifactHeader>) -> String {
    let mut out = header_prefix(header);
    for config in VisibleConfig::ALL {
        let [[a, b], [c, d]] = counts.get(config);
        writeln!(out, "CONFIG {}: {a} {b} / {c} {d}", config).unwrap();
    }
    out
}

pub fn parse_confusion(text: &str, path: &Path) -> Result<ConfusionCounts> {
    let mut raw = [[[0u64; 2]; 2]; 4];
    let mut seen = [false; 4];
    for (n, line) in content_lines(text) {
        let rest = line
            .strip_prefix("CONFIG ")
            .ok_or_else(|| Error::parse(path, n, "expected `CONFIG <mode> <alarm>: a b / c d`"))?;
        let (name, values) = rest
            .split_once(':')
            .ok_or_else(|| Error::parse(path, n, "missing `:`"))?;
        let mut parts = name.split_whitespace();
        let config = match (parts.next(), parts.next(), parts.next()) {
            (Some(m), Some(a), None) => VisibleConfig::parse(m, a),
            _ => None,
        }
        .ok_or_else(|| Error::parse(path, n, format!("unknown configuration `{}`", name.trim())))?;
        let fields: Vec<&str> = values.split_whitespace().collect();
        if fields.len() != 5 || fields[2] != "/" {
            return Err(Error::parse(path, n, "expected four counts as `a b / c d`"));
        }
        let count = |s: &str| {
            s.parse::<u64>()
                .map_err(|_| Error::parse(path, n, format!("`{s}` is not a count")))
        };
        if std::mem::replace(&mut seen[config.index()], true) {
            return Err(Error::parse(path, n, format!("configuration `{config}` listed twice")));
        }
        raw[config.index()] = [
            [count(fields[0])?, count(fields[1])?],
            [count(fields[3])?, count(fields[4])?],
        ];
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::parse(
            path,
            text.lines().count().max(1),
            format!("missing configuration `{}`", VisibleConfig::ALL[i]),
        ));
    }
    Ok(ConfusionCounts::new(raw))
}

// ---------------------------------------------------------------- reports

/// Human-readable block per policy.
pub fn format_report(reports: &[PolicyReport], header: Option<&ArtifactHeader>) -> String {
    let mut out = header_prefix(header);
    for r in reports {
        writeln!(out, "{}{}", r.name, if r.selected { "  [selected]" } else { "" }).unwrap();
        writeln!(out, "  returns  {}", r.n).unwrap();
        for (k, v) in [
            ("mean", r.mean),
            ("std", r.std),
            ("min", r.min),
            ("25%", r.q25),
            ("median", r.median),
            ("75%", r.q75),
            ("max", r.max),
        ] {
            writeln!(out, "  {k:<8} {v:.2}").unwrap();
        }
        writeln!(out, "  {:<8} {:.2}", format!("VaR_{}", r.quantile), r.var).unwrap();
        out.push('\n');
    }
    out
}

const REPORT_COLUMNS: &str = "name\tgamma\tn\tmean\tstd\tmin\tq25\tmedian\tq75\tmax\tquantile\tvar\tselected";

/// Tab-separated table with full precision; `gamma` is `-` for
/// non-discounted baselines.
pub fn serialize_report_table(reports: &[PolicyReport], header: Option<&ArtifactHeader>) -> String {
    let mut out = header_prefix(header);
    writeln!(out, "{REPORT_COLUMNS}").unwrap();
    for r in reports {
        let gamma = r.gamma.map(|g| g.to_string()).unwrap_or_else(|| "-".into());
        writeln!(
            out,
            "{}\t{gamma}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.name, r.n, r.mean, r.std, r.min, r.q25, r.median, r.q75, r.max, r.quantile, r.var, r.selected
        )
        .unwrap();
    }
    out
}

pub fn parse_report_table(text: &str, path: &Path) -> Result<Vec<PolicyReport>> {
    let mut lines = content_lines(text);
    match lines.next() {
        Some((_, h)) if h == REPORT_COLUMNS.trim() => {}
        Some((n, _)) => return Err(Error::parse(path, n, "unexpected report columns")),
        None => return Err(Error::parse(path, 1, "empty report table")),
    }
    lines
        .map(|(n, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 13 {
                return Err(Error::parse(path, n, format!("expected 13 fields, found {}", f.len())));
            }
            let x = |i: usize| parse_f64(path, n, f[i]);
            Ok(PolicyReport {
                name: f[0].to_string(),
                gamma: if f[1] == "-" { None } else { Some(x(1)?) },
                n: parse_usize(path, n, f[2])?,
                mean: x(3)?,
                std: x(4)?,
                min: x(5)?,
                q25: x(6)?,
                median: x(7)?,
                q75: x(8)?,
                max: x(9)?,
                quantile: x(10)?,
                var: x(11)?,
                selected: f[12]
                    .parse()
                    .map_err(|_| Error::parse(path, n, "`selected` must be true or false"))?,
            })
        })
        .collect()
}

/// One value per line.
pub fn format_values(values: &[f64], header: Option<&ArtifactHeader>) -> String {
    let mut out = header_prefix(header);
    for v in values {
        writeln!(out, "{v}").unwrap();
    }
    out
}

pub fn parse_values(text: &str, path: &Path) -> Result<Vec<f64>> {
    content_lines(text).map(|(n, l)| parse_f64(path, n, l)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::{self, frg_fixture};
    use crate::frg::action_labels;

    fn p() -> &'static Path {
        Path::new("in.txt")
    }

    #[test]
    fn model_round_trips() {
        let m = frg_fixture();
        let h = ArtifactHeader::new(7, "x");
        let text = serialize_model(&m, Some(&h));
        assert_eq!(parse_model(&text, p()).unwrap(), m);
        assert_eq!(ArtifactHeader::find(&text), Some(h));
        assert_eq!(
            serialize_model(&parse_model(&text, p()).unwrap(), ArtifactHeader::find(&text).as_ref()),
            text
        );
    }

    #[test]
    fn model_errors_name_the_line() {
        let text = serialize_model(&frg_fixture(), None).replace("T: auto_on m_np_on", "T: auto_on nowhere");
        let err = parse_model(&text, p()).unwrap_err();
        let Error::Parse { line, message, .. } = err else {
            panic!()
        };
        assert!(message.contains("nowhere"));
        assert_eq!(
            text.lines().nth(line - 1).unwrap().split_whitespace().nth(2),
            Some("nowhere")
        );
        let no_discount: String = serialize_model(&frg_fixture(), None)
            .lines()
            .filter(|l| !l.starts_with("DISCOUNT"))
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(parse_model(&no_discount, p())
            .unwrap_err()
            .to_string()
            .contains("DISCOUNT"));
    }

    #[test]
    fn invalid_model_is_rejected() {
        let text = serialize_model(&frg_fixture(), None).replace("R: m_p_on 0.741", "R: m_p_on 0.741\nR: g 1");
        assert!(matches!(parse_model(&text, p()), Err(Error::Validation(_))));
    }

    #[test]
    fn cassandra_lists_every_entry() {
        let m = frg_fixture();
        let text = export_cassandra(&m);
        let t = text.lines().filter(|l| l.starts_with("T:")).count();
        let nonzero = m.transition.iter().filter(|&&x| x != 0.0).count();
        assert_eq!(t, nonzero);
        assert!(text.contains("R: * : * : m_p_on : * 0.741"));
        assert!(text.starts_with("discount: 0.98\nvalues: reward\n"));
    }

    #[test]
    fn policy_round_trips() {
        let mut policy = AlphaVectorPolicy::new(
            vec![
                AlphaVector {
                    values: vec![0.1, 1.0 / 3.0, -2.5e-17, 4.0, 5.0, 6.0, 7.0, 8.0, 0.0],
                    action: 2,
                },
                AlphaVector {
                    values: vec![1.0; 9],
                    action: 0,
                },
            ],
            0.98,
        )
        .unwrap();
        policy.meta = SolverMeta {
            iterations: 12,
            belief_count: 500,
            residual: 9.5e-5,
            converged: true,
        };
        let text = serialize_policy(&policy, &action_labels(), Some(&ArtifactHeader::new(1, "")));
        assert_eq!(parse_policy(&text, &action_labels(), p()).unwrap(), policy);
    }

    fn small_batch() -> TrajectoryBatch {
        let step = |i: usize| StepRecord {
            step: i,
            config: VisibleConfig::ALL[i % 4],
            action: (i * 3) % 4,
            fires: i as u32,
            features: vec![0.1 * i as f64, -1.0 / 7.0],
        };
        TrajectoryBatch {
            missions: vec![
                Mission {
                    mission_id: "a".into(),
                    participant_id: "p1".into(),
                    score: 12.0,
                    steps: (0..3).map(step).collect(),
                },
                Mission {
                    mission_id: "b".into(),
                    participant_id: "p2".into(),
                    score: 0.5,
                    steps: (0..2).map(step).collect(),
                },
            ],
        }
    }

    #[test]
    fn batch_round_trips() {
        let b = small_batch();
        let text = serialize_batch(&b, &action_labels(), None);
        assert!(text.starts_with("mission_id,participant_id,step,mode,alarm,action,fires,score,f1,f2\n"));
        assert_eq!(parse_batch(&text, &action_labels(), p()).unwrap(), b);
    }

    #[test]
    fn malformed_batch_row_names_its_line() {
        let text = serialize_batch(&small_batch(), &action_labels(), Some(&ArtifactHeader::new(0, "")));
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        lines[4] = lines[4]
            .replace(",manual,", ",sideways,")
            .replace(",auto,", ",sideways,");
        let err = parse_batch(&(lines.join("\n") + "\n"), &action_labels(), p()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 5, .. }), "{err}");
        assert!(err.to_string().starts_with("in.txt:5:"));

        let short = text.replacen(",12,", ",", 1);
        assert!(matches!(
            parse_batch(&short, &action_labels(), p()),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn confusion_round_trips() {
        let c = fixture::confusion_counts();
        let text = serialize_confusion(&c, None);
        assert!(text.starts_with("CONFIG manual on: 113 43 / 71 105\n"));
        assert_eq!(parse_confusion(&text, p()).unwrap(), c);
        let missing: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
        assert!(parse_confusion(&missing, p()).is_err());
    }

    #[test]
    fn report_table_round_trips() {
        let r = PolicyReport {
            name: "pomdp gamma=0.98".into(),
            gamma: Some(0.98),
            n: 40000,
            mean: 23.051234567,
            std: 10.1,
            min: 0.0,
            q25: 9.6,
            median: 24.7,
            q75: 35.4,
            max: 44.46,
            quantile: 0.5,
            var: 24.7,
            selected: true,
        };
        let baseline = PolicyReport {
            name: "random".into(),
            gamma: None,
            selected: false,
            ..r.clone()
        };
        let reports = vec![r, baseline];
        let text = serialize_report_table(&reports, Some(&ArtifactHeader::new(3, "c")));
        assert_eq!(parse_report_table(&text, p()).unwrap(), reports);
        let block = format_report(&reports, None);
        assert!(block.contains("pomdp gamma=0.98  [selected]\n"));
        assert!(block.contains("  VaR_0.5  24.70\n"));
    }

    #[test]
    fn values_round_trip() {
        let v = vec![0.1, 44.46, 1.0 / 3.0, 0.0];
        assert_eq!(
            parse_values(&format_values(&v, Some(&ArtifactHeader::new(0, ""))), p()).unwrap(),
            v
        );
    }

    #[test]
    fn header_hash_is_sha256() {
        assert_eq!(
            sha256_hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let h = ArtifactHeader::new(42, "abc");
        assert_eq!(ArtifactHeader::parse(&h.line()), Some(h));
    }
}
