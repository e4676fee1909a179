//! Line-delimited JSON persistence for [`DualPoolMemory`].
//!
//! Record 1 is a header:
//!
//! ```text
//! {"format":"dualpool-memory","version":1,"agent_id":0,"dimension":256,
//!  "router":{...},"e_pool":5,"x_pool":0}
//! ```
//!
//! followed by one record per piece, E-pool first, each in insertion order:
//!
//! ```text
//! {"pool":"e","piece":{"id":"...","context_prototype":"...", ...}}
//! ```
//!
//! Records are numbered from 1 in error messages. The piece counts in the
//! header let a reader detect a truncated file even when it ends on a line
//! boundary.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::{AgentId, DualPoolMemory, MemoryError, MemoryPiece};
use crate::router::RouterState;

pub const STORE_FORMAT: &str = "dualpool-memory";
pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store file not found: {0}")]
    NotFound(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed record {record}: {reason}")]
    Malformed { record: usize, reason: String },
    #[error("record {record}: embedding dimension {actual} does not match store dimension {expected}")]
    DimensionMismatch {
        record: usize,
        expected: usize,
        actual: usize,
    },
    #[error("unsupported store version {found} (this build reads version {STORE_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("record {record}: {source}")]
    Invariant {
        record: usize,
        #[source]
        source: MemoryError,
    },
}

impl StoreError {
    /// 1-based record number the error refers to, when there is one.
    pub fn record(&self) -> Option<usize> {
        match self {
            StoreError::Malformed { record, .. }
            | StoreError::DimensionMismatch { record, .. }
            | StoreError::Invariant { record, .. } => Some(*record),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub format: String,
    pub version: u32,
    pub agent_id: AgentId,
    pub dimension: Option<usize>,
    pub router: RouterState,
    pub e_pool: usize,
    pub x_pool: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolTag {
    E,
    X,
}

#[derive(Serialize)]
struct PieceRecordRef<'a> {
    pool: PoolTag,
    piece: &'a MemoryPiece,
}

#[derive(Deserialize)]
struct PieceRecord {
    pool: PoolTag,
    piece: MemoryPiece,
}

fn io_err(path: &Path, source: io::Error) -> StoreError {
    if source.kind() == io::ErrorKind::NotFound {
        StoreError::NotFound(path.to_path_buf())
    } else {
        StoreError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub fn write_store<W: Write>(memory: &DualPoolMemory, mut out: W) -> io::Result<()> {
    let header = StoreHeader {
        format: STORE_FORMAT.to_string(),
        version: STORE_VERSION,
        agent_id: memory.agent_id(),
        dimension: memory.dimension(),
        router: memory.router,
        e_pool: memory.e_pool().len(),
        x_pool: memory.x_pool().len(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    let records = memory
        .e_pool()
        .iter()
        .map(|piece| PieceRecordRef {
            pool: PoolTag::E,
            piece,
        })
        .chain(memory.x_pool().iter().map(|piece| PieceRecordRef {
            pool: PoolTag::X,
            piece,
        }));
    for record in records {
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_store(memory: &DualPoolMemory, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    write_store(memory, BufWriter::new(file)).map_err(|e| io_err(path, e))
}

fn parse_header(line: &str) -> Result<StoreHeader, StoreError> {
    let header: StoreHeader = serde_json::from_str(line).map_err(|e| StoreError::Malformed {
        record: 1,
        reason: format!("bad header: {e}"),
    })?;
    if header.format != STORE_FORMAT {
        return Err(StoreError::Malformed {
            record: 1,
            reason: format!("unknown format tag {:?}", header.format),
        });
    }
    if header.version != STORE_VERSION {
        return Err(StoreError::UnsupportedVersion {
            found: header.version,
        });
    }
    Ok(header)
}

fn parse_piece(line: &str, record: usize, dimension: Option<usize>) -> Result<PieceRecord, StoreError> {
    let parsed: PieceRecord = serde_json::from_str(line).map_err(|e| StoreError::Malformed {
        record,
        reason: e.to_string(),
    })?;
    if let Some(expected) = dimension {
        let actual = parsed.piece.context_embedding.dimension();
        if actual != expected {
            return Err(StoreError::DimensionMismatch {
                record,
                expected,
                actual,
            });
        }
    }
    Ok(parsed)
}

pub fn read_store<R: BufRead>(input: R) -> Result<DualPoolMemory, StoreError> {
    let mut lines = input.lines();
    let first = match lines.next() {
        Some(line) => line.map_err(|e| StoreError::Malformed {
            record: 1,
            reason: e.to_string(),
        })?,
        None => {
            return Err(StoreError::Malformed {
                record: 1,
                reason: "missing header".into(),
            })
        }
    };
    let header = parse_header(&first)?;
    let expected = header.e_pool + header.x_pool;
    let mut memory = DualPoolMemory::new(header.agent_id, header.router);
    let mut seen = 0usize;
    for (i, line) in lines.enumerate() {
        let record = i + 2;
        let line = line.map_err(|e| StoreError::Malformed {
            record,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = parse_piece(&line, record, header.dimension)?;
        let in_e = seen < header.e_pool;
        match (parsed.pool, in_e) {
            (PoolTag::E, true) => {
                memory
                    .restore_consolidated(parsed.piece)
                    .map_err(|source| StoreError::Invariant { record, source })?;
            }
            (PoolTag::X, false) => memory
                .add_exploratory(parsed.piece)
                .map_err(|source| StoreError::Invariant { record, source })?,
            (tag, _) => {
                return Err(StoreError::Malformed {
                    record,
                    reason: format!("unexpected pool tag {tag:?} at piece {}", seen + 1),
                })
            }
        }
        seen += 1;
        if seen > expected {
            return Err(StoreError::Malformed {
                record,
                reason: format!("header declares {expected} pieces but more follow"),
            });
        }
    }
    if seen != expected {
        return Err(StoreError::Malformed {
            record: seen + 2,
            reason: format!("truncated store: header declares {expected} pieces, found {seen}"),
        });
    }
    memory.router.check_invariants().map_err(|reason| StoreError::Malformed { record: 1, reason })?;
    Ok(memory)
}

pub fn load_store(path: impl AsRef<Path>) -> Result<DualPoolMemory, StoreError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    read_store(BufReader::new(file))
}

/// One problem found by [`validate_store`].
#[derive(Debug, Clone, PartialEq)]
pub struct StoreIssue {
    pub record: usize,
    pub message: String,
}

/// Checks every record and reports all problems instead of stopping at the first.
pub fn validate_store(path: impl AsRef<Path>) -> Result<Vec<StoreIssue>, StoreError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut issues = Vec::new();
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(Ok(line)) => match parse_header(&line) {
            Ok(h) => h,
            Err(e) => {
                issues.push(StoreIssue {
                    record: 1,
                    message: e.to_string(),
                });
                return Ok(issues);
            }
        },
        _ => {
            issues.push(StoreIssue {
                record: 1,
                message: "missing header".into(),
            });
            return Ok(issues);
        }
    };
    if let Err(reason) = header.router.check_invariants() {
        issues.push(StoreIssue { record: 1, message: reason });
    }
    let mut ids = std::collections::HashSet::new();
    let mut count = 0usize;
    for (i, line) in lines.enumerate() {
        let record = i + 2;
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                issues.push(StoreIssue {
                    record,
                    message: e.to_string(),
                });
                continue;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        count += 1;
        match parse_piece(&line, record, header.dimension) {
            Ok(parsed) => {
                if let Err(e) = parsed.piece.validate() {
                    issues.push(StoreIssue {
                        record,
                        message: e.to_string(),
                    });
                }
                if !ids.insert(parsed.piece.id.clone()) {
                    issues.push(StoreIssue {
                        record,
                        message: format!("duplicate piece id {:?}", parsed.piece.id),
                    });
                }
                let want_e = count <= header.e_pool;
                let is_e = parsed.pool == PoolTag::E;
                if want_e != is_e {
                    issues.push(StoreIssue {
                        record,
                        message: format!("pool tag {:?} out of order", parsed.pool),
                    });
                }
                if is_e == (parsed.piece.origin == crate::memory::Origin::Exploratory) {
                    issues.push(StoreIssue {
                        record,
                        message: format!("origin {:?} does not match pool {:?}", parsed.piece.origin, parsed.pool),
                    });
                }
            }
            Err(e) => issues.push(StoreIssue {
                record,
                message: e.to_string(),
            }),
        }
    }
    let expected = header.e_pool + header.x_pool;
    if count != expected {
        issues.push(StoreIssue {
            record: count + 2,
            message: format!("header declares {expected} pieces, found {count}"),
        });
    }
    Ok(issues)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::hash_embed;
    use crate::memory::{ActionType, Assignment, Origin, TrajectoryRecord};

    fn piece(i: usize, origin: Origin) -> MemoryPiece {
        MemoryPiece {
            id: format!("agent-0/t{i}/s1"),
            context_prototype: format!("family words task {i}"),
            context_embedding: hash_embed(&format!("family words task {i} ünïcode"), 64).unwrap(),
            trajectory: TrajectoryRecord {
                action_type: if i.is_multiple_of(2) {
                    ActionType::Decompose
                } else {
                    ActionType::Forward
                },
                payload: format!("payload \"quoted\"\nline {i}"),
                allocation: if i.is_multiple_of(2) {
                    vec![Assignment {
                        subtask: "sub".into(),
                        agent: AgentId(2),
                    }]
                } else {
                    vec![]
                },
                stage_index: 1 + (i % 3) as u32,
            },
            commentary: "because".into(),
            quality: (i % 11) as f64 * 0.9,
            created_at: i as u64,
            origin,
        }
    }

    fn memory(n_e: usize, n_x: usize, w_e: f64) -> DualPoolMemory {
        let e: Vec<_> = (0..n_e).map(|i| piece(i, Origin::Consolidated)).collect();
        let x: Vec<_> = (n_e..n_e + n_x).map(|i| piece(i, Origin::Exploratory)).collect();
        DualPoolMemory::from_parts(AgentId(0), RouterState::default().with_weight(w_e), e, x).unwrap()
    }

    fn round_trip(m: &DualPoolMemory) -> DualPoolMemory {
        let mut buf = Vec::new();
        write_store(m, &mut buf).unwrap();
        read_store(buf.as_slice()).unwrap()
    }

    #[test]
    fn empty_memory_round_trips() {
        let m = DualPoolMemory::new(AgentId(4), RouterState::default());
        assert_eq!(round_trip(&m), m);
    }

    #[test]
    fn fifty_pieces_round_trip() {
        let m = memory(45, 5, 2.5);
        let back = round_trip(&m);
        assert_eq!(back, m);
        assert_eq!(back.router.w_e, 2.5);
    }

    #[test]
    fn truncated_file_is_malformed() {
        let mut buf = Vec::new();
        write_store(&memory(3, 0, 1.0), &mut buf).unwrap();
        let cut = &buf[..buf.len() - 20];
        let err = read_store(cut).unwrap_err();
        assert!(matches!(err, StoreError::Malformed { record: 4, .. }), "{err}");
        // dropping a whole line is caught by the header counts
        let text = String::from_utf8(buf).unwrap();
        let short: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(matches!(read_store(short.as_bytes()), Err(StoreError::Malformed { .. })));
    }

    #[test]
    fn missing_file_has_its_own_kind() {
        let err = load_store("/definitely/not/here.jsonl").unwrap_err();
        assert!(matches!(err, StoreError::NotFound(_)));
    }

    #[test]
    fn dimension_mismatch_has_its_own_kind() {
        let mut buf = Vec::new();
        write_store(&memory(2, 0, 1.0), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("\"dimension\":64", "\"dimension\":32");
        let err = read_store(text.as_bytes()).unwrap_err();
        assert!(matches!(err, StoreError::DimensionMismatch { record: 2, expected: 32, actual: 64 }));
    }

    #[test]
    fn future_versions_are_refused() {
        let mut buf = Vec::new();
        write_store(&memory(0, 0, 1.0), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("\"version\":1", "\"version\":9");
        assert!(matches!(
            read_store(text.as_bytes()),
            Err(StoreError::UnsupportedVersion { found: 9 })
        ));
    }

    #[test]
    fn validate_reports_every_bad_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        save_store(&memory(4, 0, 1.0), &path).unwrap();
        assert!(validate_store(&path).unwrap().is_empty());
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[2] = "{not json".into();
        lines[4] = lines[4].replace("\"quality\":2.7", "\"quality\":12.0");
        std::fs::write(&path, lines.join("\n")).unwrap();
        let issues = validate_store(&path).unwrap();
        let records: Vec<_> = issues.iter().map(|i| i.record).collect();
        assert!(records.contains(&3), "{issues:?}");
        assert!(records.contains(&5), "{issues:?}");
    }
}
