//! Newline-delimited demonstration files.
//!
//! ```text
//! SQUIRL-DEMOS v1 S=<state width> A=<action width>
//! <task_id>\t<t>\t<state...>\t<action...>
//! ```
//!
//! Reals are written in Rust's shortest round-trip decimal form, so a
//! save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{DemoSet, Source, Trajectory};
use crate::error::{Error, Result};

pub const DEMO_MAGIC: &str = "SQUIRL-DEMOS";
pub const DEMO_VERSION: &str = "v1";

pub fn write_demos<W: Write>(demos: &DemoSet, mut w: W) -> Result<()> {
    writeln!(w, "{DEMO_MAGIC} {DEMO_VERSION} S={} A={}", demos.state_dim, demos.action_dim)?;
    let mut line = String::new();
    for demo in demos.iter() {
        for (t, (s, a)) in demo.states.iter().zip(&demo.actions).enumerate() {
            line.clear();
            write!(line, "{}\t{}", demo.task_id, t).expect("writing to a string");
            for v in s.iter().chain(a) {
                write!(line, "\t{v}").expect("writing to a string");
            }
            writeln!(w, "{line}")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_demos(demos: &DemoSet, path: &Path) -> Result<()> {
    write_demos(demos, BufWriter::new(File::create(path)?))
}

pub fn load_demos(path: &Path) -> Result<DemoSet> {
    read_demos(BufReader::new(File::open(path)?), path)
}

fn parse_dim(field: Option<&str>, key: &str, path: &Path) -> Result<usize> {
    field
        .and_then(|f| f.strip_prefix(key))
        .and_then(|v| v.parse().ok())
        .filter(|&v: &usize| v > 0)
        .ok_or_else(|| Error::Parse {
            path: path.to_owned(),
            line: 1,
            msg: format!("header is missing a positive {key}<int> field"),
        })
}

pub fn read_demos<R: Read>(reader: R, path: &Path) -> Result<DemoSet> {
    let err = |line: usize, msg: String| Error::Parse {
        path: PathBuf::from(path),
        line,
        msg,
    };
    let mut lines = BufReader::new(reader).lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => return Err(err(1, "empty file; expected a header line".into())),
    };
    let mut fields = header.split_whitespace();
    if fields.next() != Some(DEMO_MAGIC) {
        return Err(err(1, format!("not a demo file; expected `{DEMO_MAGIC}` header")));
    }
    let version = fields.next().unwrap_or("");
    if version != DEMO_VERSION {
        return Err(Error::Version {
            expected: DEMO_VERSION.into(),
            found: version.into(),
        });
    }
    let s_dim = parse_dim(fields.next(), "S=", path)?;
    let a_dim = parse_dim(fields.next(), "A=", path)?;

    let mut demos = DemoSet::new(s_dim, a_dim);
    let mut current: Option<Trajectory> = None;
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 + s_dim + a_dim {
            return Err(err(
                lineno,
                format!("expected {} fields, found {}", 2 + s_dim + a_dim, fields.len()),
            ));
        }
        let task_id: usize = fields[0]
            .parse()
            .map_err(|_| err(lineno, format!("bad task id `{}`", fields[0])))?;
        let t: usize = fields[1]
            .parse()
            .map_err(|_| err(lineno, format!("bad time index `{}`", fields[1])))?;
        let values = fields[2..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(lineno, format!("bad real `{f}`")))
            })
            .collect::<Result<Vec<f64>>>()?;

        if current.as_ref().is_some_and(|c| c.task_id != task_id) {
            demos.insert(current.take().expect("checked above"))?;
        }
        let traj = current.get_or_insert_with(|| Trajectory {
            task_id,
            source: Source::Expert,
            states: Vec::new(),
            actions: Vec::new(),
        });
        if t != traj.len() {
            return Err(err(
                lineno,
                format!("time index {t} out of sequence for task {task_id}; expected {}", traj.len()),
            ));
        }
        traj.states.push(values[..s_dim].to_vec());
        traj.actions.push(values[s_dim..].to_vec());
    }
    if let Some(traj) = current {
        demos.insert(traj)?;
    }
    Ok(demos)
}
