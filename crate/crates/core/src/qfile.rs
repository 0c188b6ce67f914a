//! Text persistence for Q-tables.
//!
//! The first line is a tab-separated metadata record; each further line is
//! `state<TAB>action<TAB>value` with the value in 17-significant-digit
//! scientific notation, which reproduces every `f64` exactly. Visit counts
//! live in a sidecar file (`<path>.visits`) with lines `state<TAB>action<TAB>count`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::learner::{QMeta, QTable};
use crate::perception::ScenarioId;

const MAGIC: &str = "roadq-qtable";
const VERSION: u32 = 1;

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

pub fn format_header(meta: &QMeta) -> String {
    format!(
        "{MAGIC}\tversion={VERSION}\tscenario={}\tgeometry={}\talpha={}\tgamma_step={}\tepisodes={}\tsteps_per_episode={}\tseed={}",
        meta.scenario, meta.geometry_hash, meta.alpha, meta.gamma_step, meta.episodes, meta.steps_per_episode, meta.seed
    )
}

pub fn parse_header(line: &str) -> Result<QMeta> {
    let mut fields = line.trim_end_matches(['\r', '\n']).split('\t');
    if fields.next() != Some(MAGIC) {
        return Err(parse_err(1, "not a Q-table file"));
    }
    let mut get = |key: &str| -> Result<String> {
        let field = fields.next().ok_or_else(|| parse_err(1, format!("missing {key}")))?;
        field
            .strip_prefix(key)
            .and_then(|rest| rest.strip_prefix('='))
            .map(str::to_owned)
            .ok_or_else(|| parse_err(1, format!("expected {key}=..., found {field}")))
    };
    fn num<T: std::str::FromStr>(key: &str, s: String) -> Result<T> {
        s.parse().map_err(|_| parse_err(1, format!("bad {key} value {s}")))
    }
    let version: u32 = num("version", get("version")?)?;
    if version != VERSION {
        return Err(parse_err(1, format!("unsupported version {version}")));
    }
    let scenario: ScenarioId = get("scenario")?.parse()?;
    let geometry_hash = get("geometry")?;
    let meta = QMeta {
        scenario,
        geometry_hash,
        alpha: num("alpha", get("alpha")?)?,
        gamma_step: num("gamma_step", get("gamma_step")?)?,
        episodes: num("episodes", get("episodes")?)?,
        steps_per_episode: num("steps_per_episode", get("steps_per_episode")?)?,
        seed: num("seed", get("seed")?)?,
    };
    Ok(meta)
}

/// Writes the table's values (not its visit counts).
pub fn write_table<W: Write>(table: &QTable, cfg: &EnvConfig, out: W) -> Result<()> {
    let codec = cfg.codec()?;
    let space = cfg.action_space();
    let mut out = BufWriter::new(out);
    writeln!(out, "{}", format_header(&table.meta))?;
    for (state, slot, value, _) in table.entries() {
        writeln!(out, "{}\t{}\t{:.16e}", codec.render(state)?, space.action(slot), value)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_visits<W: Write>(table: &QTable, cfg: &EnvConfig, out: W) -> Result<()> {
    let codec = cfg.codec()?;
    let space = cfg.action_space();
    let mut out = BufWriter::new(out);
    for (state, slot, _, visits) in table.entries() {
        writeln!(out, "{}\t{}\t{}", codec.render(state)?, space.action(slot), visits)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads just the metadata line.
pub fn read_meta(path: &Path) -> Result<QMeta> {
    let mut line = String::new();
    BufReader::new(File::open(path)?).read_line(&mut line)?;
    parse_header(&line)
}

/// Reads a table written by [`write_table`]. The file must have been
/// produced for `cfg`: same scenario and geometry hash.
pub fn read_table<R: BufRead>(input: R, cfg: &EnvConfig) -> Result<QTable> {
    let codec = cfg.codec()?;
    let space = cfg.action_space();
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| parse_err(1, "empty file"))??;
    let meta = parse_header(&header)?;
    if meta.scenario != cfg.scenario.id {
        return Err(Error::MetadataMismatch(format!("file holds a {} table, config is {}", meta.scenario, cfg.scenario.id)));
    }
    let hash = cfg.geometry_hash();
    if meta.geometry_hash != hash {
        return Err(Error::MetadataMismatch(format!("file geometry hash {} differs from config hash {hash}", meta.geometry_hash)));
    }
    let mut table = QTable::new(meta, space.slots());
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (state, slot, rest) = split_entry(&line, n, &codec, &space)?;
        let value: f64 = rest.parse().map_err(|_| parse_err(n, format!("bad value {rest}")))?;
        if table.entry(state, slot).is_some() {
            return Err(parse_err(n, "duplicate entry"));
        }
        table.set(state, slot, value);
    }
    Ok(table)
}

/// Adds visit counts from a sidecar file to `table`.
pub fn read_visits<R: BufRead>(input: R, cfg: &EnvConfig, table: &mut QTable) -> Result<()> {
    let codec = cfg.codec()?;
    let space = cfg.action_space();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (state, slot, rest) = split_entry(&line, i + 1, &codec, &space)?;
        let visits: u32 = rest.parse().map_err(|_| parse_err(i + 1, format!("bad count {rest}")))?;
        if table.entry(state, slot).is_none() {
            return Err(parse_err(i + 1, "visit count for a pair the table does not hold"));
        }
        table.set_visits(state, slot, visits);
    }
    Ok(())
}

fn split_entry<'a>(
    line: &'a str,
    n: usize,
    codec: &crate::perception::StateCodec,
    space: &crate::perception::ActionSpace,
) -> Result<(crate::perception::StateKey, usize, &'a str)> {
    let mut parts = line.split('\t');
    let (Some(s), Some(a), Some(v), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(parse_err(n, "expected three tab-separated fields"));
    };
    let state = codec.parse(s).map_err(|e| parse_err(n, e.to_string()))?;
    let action = space.parse(a).map_err(|e| parse_err(n, e.to_string()))?;
    Ok((state, space.slot(action), v))
}

pub fn visits_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".visits");
    PathBuf::from(s)
}

/// Writes `path` and its visit sidecar.
pub fn save(table: &QTable, cfg: &EnvConfig, path: &Path) -> Result<()> {
    write_table(table, cfg, File::create(path)?)?;
    write_visits(table, cfg, File::create(visits_path(path))?)
}

/// Loads `path`, plus visit counts when the sidecar exists.
pub fn load(cfg: &EnvConfig, path: &Path) -> Result<QTable> {
    let mut table = read_table(BufReader::new(File::open(path)?), cfg)?;
    let sidecar = visits_path(path);
    if sidecar.exists() {
        read_visits(BufReader::new(File::open(sidecar)?), cfg, &mut table)?;
    }
    Ok(table)
}
