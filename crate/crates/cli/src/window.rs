//! Per-window input files.
//!
//! Files are named `window_<id>.csv`, UTF-8 with LF line ends and no header.
//! `addition` and `entropy` take one line of `r` comma-separated
//! non-negative integers, `distinctcount` one line of `r` bits, and
//! `eventcorrelation` up to `s` lines of `key,weight`.

use std::path::{Path, PathBuf};

use privagg::protocols::check_boolean;
use privagg::{Event, Field};

use crate::config::{PeerConfig, Protocol};
use crate::error::CliError;

/// One input peer's data for one window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WindowInput {
    Values(Vec<u64>),
    Events(Vec<Event>),
}

/// `window_<id>.csv` files in `dir`, by ascending id.
pub fn list_windows(dir: &Path) -> Result<Vec<(u64, PathBuf)>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if let Some(id) = window_id(&path) {
            out.push((id, path));
        }
    }
    out.sort();
    Ok(out)
}

pub fn window_id(path: &Path) -> Option<u64> {
    let name = path.file_name()?.to_str()?;
    name.strip_prefix("window_")?.strip_suffix(".csv")?.parse().ok()
}

pub fn window_file(dir: &Path, id: u64, ext: &str) -> PathBuf {
    dir.join(format!("window_{id}.{ext}"))
}

fn parse_u64(field: &str, file: &Path, line: usize, column: usize) -> Result<u64, CliError> {
    let t = field.trim();
    if t.is_empty() {
        return Err(CliError::parse(file, line, column, "missing value"));
    }
    t.parse::<u64>().map_err(|_| CliError::parse(file, line, column, format!("{t:?} is not a non-negative integer")))
}

/// Splits a line on commas, yielding each field with its 1-based column.
fn fields(line: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut col = 1;
    line.split(',').map(move |f| {
        let at = col;
        col += f.len() + 1;
        (at, f)
    })
}

pub fn parse_window(protocol: Protocol, text: &str, file: &Path) -> Result<WindowInput, CliError> {
    let lines: Vec<&str> = text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l)).collect();
    match protocol {
        Protocol::EventCorrelation => {
            let mut events = Vec::new();
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let parts: Vec<(usize, &str)> = fields(line).collect();
                if parts.len() != 2 {
                    let col = parts.get(2).map_or(line.len() + 1, |p| p.0);
                    return Err(CliError::parse(file, i + 1, col, "expected key,weight"));
                }
                let key = parse_u64(parts[0].1, file, i + 1, parts[0].0)?;
                let weight = parse_u64(parts[1].1, file, i + 1, parts[1].0)?;
                events.push(Event { key, weight });
            }
            Ok(WindowInput::Events(events))
        }
        _ => {
            let content: Vec<(usize, &str)> =
                lines.iter().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, l)| (i, *l)).collect();
            match content.as_slice() {
                [] => Err(CliError::parse(file, 1, 1, "empty window file")),
                [(i, line)] => {
                    let values =
                        fields(line).map(|(col, f)| parse_u64(f, file, i + 1, col)).collect::<Result<Vec<_>, _>>()?;
                    Ok(WindowInput::Values(values))
                }
                [_, (i, _), ..] => Err(CliError::parse(file, i + 1, 1, "expected a single line of values")),
            }
        }
    }
}

pub fn read_window(protocol: Protocol, file: &Path) -> Result<WindowInput, CliError> {
    let text = std::fs::read_to_string(file).map_err(|e| CliError::io(file, e))?;
    parse_window(protocol, &text, file)
}

/// Local checks an input peer applies before sharing anything.
pub fn validate(
    cfg: &PeerConfig,
    field: &Field,
    peer: usize,
    input: &WindowInput,
    file: &Path,
) -> Result<(), CliError> {
    let protocol = cfg.protocol()?;
    let p = &cfg.params;
    let bad = |msg: String| Err(CliError::Validation(format!("{}: {msg}", file.display())));
    match (protocol, input) {
        (Protocol::EventCorrelation, WindowInput::Events(events)) => {
            if events.len() > p.s {
                return bad(format!("{} events, at most s = {} allowed", events.len(), p.s));
            }
            let corr = cfg.correlation();
            let reserved = corr.reserved_from(field);
            for (i, e) in events.iter().enumerate() {
                if e.key >= reserved {
                    return bad(format!("event {}: key {} is reserved (keys must be below {reserved})", i + 1, e.key));
                }
                if e.weight >= p.w_max {
                    return bad(format!("event {}: weight {} is not below w_max = {}", i + 1, e.weight, p.w_max));
                }
            }
            Ok(())
        }
        (Protocol::EventCorrelation, _) | (_, WindowInput::Events(_)) => bad("input does not fit the protocol".into()),
        (protocol, WindowInput::Values(v)) => {
            if v.len() != p.r {
                return bad(format!("{} values, expected r = {}", v.len(), p.r));
            }
            match protocol {
                Protocol::DistinctCount => check_boolean(peer, v).or_else(|e| bad(e.to_string())),
                Protocol::Entropy => match v.iter().position(|&c| c > p.max_count) {
                    Some(i) => bad(format!("count {} at position {} exceeds max_count = {}", v[i], i + 1, p.max_count)),
                    None => Ok(()),
                },
                _ => match v.iter().position(|&x| x >= field.p()) {
                    Some(i) => bad(format!("value {} at position {} is not below p = {}", v[i], i + 1, field.p())),
                    None => Ok(()),
                },
            }
        }
    }
}

/// The field values an input peer shares: the vector itself, the negated
/// bits for distinct count, or the padded `(key, weight)` pairs.
pub fn to_values(cfg: &PeerConfig, field: &Field, peer: usize, input: &WindowInput) -> Result<Vec<u64>, CliError> {
    Ok(match input {
        WindowInput::Values(v) if cfg.protocol()? == Protocol::DistinctCount => v.iter().map(|&b| 1 - b).collect(),
        WindowInput::Values(v) => v.clone(),
        WindowInput::Events(events) => {
            let padded = cfg.correlation().pad_events(field, peer, events)?;
            padded.iter().flat_map(|e| [e.key, e.weight]).collect()
        }
    })
}

/// What an absent input peer contributes: nothing seen, no events.
pub fn neutral_values(cfg: &PeerConfig, field: &Field, peer: usize) -> Result<Vec<u64>, CliError> {
    Ok(match cfg.protocol()? {
        Protocol::Addition | Protocol::Entropy => vec![0; cfg.params.r],
        Protocol::DistinctCount => vec![1; cfg.params.r],
        Protocol::EventCorrelation => to_values(cfg, field, peer, &WindowInput::Events(Vec::new()))?,
    })
}

/// Number of field values each input peer shares per window.
pub fn shared_len(cfg: &PeerConfig) -> Result<usize, CliError> {
    Ok(match cfg.protocol()? {
        Protocol::EventCorrelation => 2 * cfg.params.s,
        _ => cfg.params.r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f() -> &'static Path {
        Path::new("in/window_3.csv")
    }

    #[test]
    fn value_lines() {
        assert_eq!(parse_window(Protocol::Addition, "1,2,3\n", f()).unwrap(), WindowInput::Values(vec![1, 2, 3]));
        assert_eq!(parse_window(Protocol::Addition, "7", f()).unwrap(), WindowInput::Values(vec![7]));
        match parse_window(Protocol::Addition, "1,x,3\n", f()) {
            Err(CliError::Parse { line: 1, column: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse_window(Protocol::Entropy, "1,2\n3\n", f()) {
            Err(CliError::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(parse_window(Protocol::DistinctCount, "", f()).is_err());
        assert!(parse_window(Protocol::Addition, "-1", f()).is_err());
    }

    #[test]
    fn event_lines() {
        let got = parse_window(Protocol::EventCorrelation, "10,3\n\n11,0\n", f()).unwrap();
        assert_eq!(got, WindowInput::Events(vec![Event { key: 10, weight: 3 }, Event { key: 11, weight: 0 }]));
        assert_eq!(parse_window(Protocol::EventCorrelation, "", f()).unwrap(), WindowInput::Events(vec![]));
        let err = parse_window(Protocol::EventCorrelation, "1,1\n10,\n", f()).unwrap_err();
        match &err {
            CliError::Parse { line: 2, column: 4, .. } => {}
            other => panic!("{other:?}"),
        }
        assert!(err.to_string().starts_with("in/window_3.csv:2:4"));
        assert!(matches!(
            parse_window(Protocol::EventCorrelation, "1,2,3", f()),
            Err(CliError::Parse { column: 5, .. })
        ));
    }

    #[test]
    fn window_names() {
        assert_eq!(window_id(Path::new("/x/window_12.csv")), Some(12));
        assert_eq!(window_id(Path::new("/x/window_12.csv.bak")), None);
        assert_eq!(window_id(Path::new("/x/win_1.csv")), None);
        assert_eq!(window_file(Path::new("o"), 4, "result"), Path::new("o/window_4.result"));
    }
}
