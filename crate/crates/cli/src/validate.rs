//! `validate`: classify each file by extension and content, then parse,
//! compile and check it.

use std::io::Write;
use std::path::{Path, PathBuf};

use ensemble_broker::BrokerConfig;
use ensemble_core::automata::EaSpec;
use ensemble_core::flow::SecurityLabeling;
use ensemble_core::model::{Schema, ValidationReport};
use ensemble_core::sim::parse_script;
use ensemble_core::text::lex;

use crate::error::{read, CliError};
use crate::offline::compile_policy;
use crate::{Outcome, PolicyStyle};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Schema,
    Broker,
    Automaton,
    Policy(PolicyStyle),
    Script,
    /// Checked against `schema.conf` in the same directory.
    Labels,
}

fn classify(path: &Path, text: &str) -> Option<Kind> {
    let has = |kw: &str| lex(text).iter().any(|d| d.keyword == kw);
    match path.extension()?.to_str()? {
        "ea" => Some(Kind::Automaton),
        "script" => Some(Kind::Script),
        "labels" => Some(Kind::Labels),
        "policy" if has("role") => Some(Kind::Policy(PolicyStyle::Rbac)),
        "policy" => Some(Kind::Policy(PolicyStyle::Hierarchy)),
        "conf" if has("listen") => Some(Kind::Broker),
        "conf" => Some(Kind::Schema),
        _ => None,
    }
}

/// Files under `dir` in name order, descending into subdirectories.
fn walk(dir: &Path, files: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: dir.to_owned(),
        source,
    };
    let mut entries = std::fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(io)?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(&p, files)?;
        } else {
            files.push(p);
        }
    }
    Ok(())
}

fn check(path: &Path, kind: Kind) -> Result<ValidationReport, CliError> {
    let parse = |source| CliError::Parse {
        path: path.to_owned(),
        source,
    };
    match kind {
        Kind::Schema => Ok(Schema::load(path)?.validate()),
        Kind::Broker => BrokerConfig::load(path).map(|_| ValidationReport::default()).map_err(Into::into),
        Kind::Automaton => {
            let spec = EaSpec::parse(&read(path)?).map_err(parse)?;
            spec.compile_open()
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            Ok(ValidationReport::default())
        }
        Kind::Policy(style) => Ok(compile_policy(style, path)?.validate()),
        Kind::Script => {
            parse_script(&read(path)?).map_err(parse)?;
            Ok(ValidationReport::default())
        }
        Kind::Labels => {
            let schema = Schema::load(path.with_file_name("schema.conf"))?;
            SecurityLabeling::parse(&read(path)?, &schema).map_err(parse)?;
            Ok(ValidationReport::default())
        }
    }
}

/// Prints `ok <file>` or one `<file>: <problem>` line per problem. Load
/// errors win over violations when picking the exit code.
pub(crate) fn validate(path: &Path, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let files = if path.is_dir() {
        let mut files = Vec::new();
        walk(path, &mut files)?;
        files
    } else {
        vec![path.to_owned()]
    };
    let mut outcome = Outcome::Clean;
    let mut failed = 0;
    let mut checked = 0;
    for file in &files {
        let text = read(file)?;
        let kind = match classify(file, &text) {
            Some(k) => k,
            // A file named on the command line is a schema unless it says otherwise.
            None if !path.is_dir() => {
                if lex(&text).iter().any(|d| d.keyword == "listen") {
                    Kind::Broker
                } else {
                    Kind::Schema
                }
            }
            None => continue,
        };
        checked += 1;
        match check(file, kind) {
            Ok(report) if report.is_valid() => writeln!(out, "ok {}", file.display())?,
            Ok(report) => {
                outcome = outcome.worst(Outcome::Violations);
                for v in &report.violations {
                    writeln!(out, "{}: {v}", file.display())?;
                }
            }
            Err(e) => {
                failed += 1;
                writeln!(out, "{}: error: {e}", file.display())?;
            }
        }
    }
    if checked == 0 {
        return Err(CliError::Usage(format!("{}: nothing to validate", path.display())));
    }
    if failed > 0 {
        return Err(CliError::Usage(format!("{failed} file(s) failed to load")));
    }
    Ok(outcome)
}
