use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{validate_dag, ApplicationDag, TraceError, Violation};

/// Writes one JSON record per line.
pub fn write_trace<W: Write>(mut out: W, apps: &[ApplicationDag]) -> std::io::Result<()> {
    for app in apps {
        serde_json::to_writer(&mut out, app)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_trace(path: &Path, apps: &[ApplicationDag]) -> Result<(), TraceError> {
    let io_err = |source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_trace(BufWriter::new(file), apps).map_err(io_err)
}

/// Parses and validates a trace; the first bad record rejects the whole input.
/// Blank lines are skipped. Output is sorted by arrival time (ties by app id)
/// and every application's stages are ordered by id.
pub fn parse_trace<R: BufRead>(input: R) -> Result<Vec<ApplicationDag>, TraceError> {
    let mut apps = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| TraceError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut app: ApplicationDag = serde_json::from_str(&line).map_err(|e| TraceError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if let Err(violations) = validate_dag(&app) {
            return Err(if violations == [Violation::Cycle] {
                TraceError::Cycle {
                    line: line_no,
                    app_id: app.app_id,
                }
            } else {
                TraceError::Invalid {
                    line: line_no,
                    app_id: app.app_id,
                    violations,
                }
            });
        }
        app.stages.sort_by_key(|s| s.stage_id);
        apps.push(app);
    }
    apps.sort_by(|a, b| a.arrival_time.total_cmp(&b.arrival_time).then(a.app_id.cmp(&b.app_id)));
    Ok(apps)
}

pub fn load_trace(path: &Path) -> Result<Vec<ApplicationDag>, TraceError> {
    let file = File::open(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_trace(BufReader::new(file))
}
