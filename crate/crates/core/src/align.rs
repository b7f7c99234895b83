//! Remaps line-numbered benchmark queries from original to instrumented
//! source coordinates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::LineMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum QueryTask {
    /// Code coverage: is the line executed?
    Ccp,
    /// Program state at a line.
    Psp,
    /// Execution path: which line runs next?
    Epp,
    /// Output prediction; carries no line.
    Op,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineQuery {
    pub task: QueryTask,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    pub payload: String,
}

/// A query tied to the program whose map it should be aligned with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub origin_id: String,
    #[serde(flatten)]
    pub query: LineQuery,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlignError {
    #[error("line {line} is outside the original program (1..={max})")]
    LineOutOfRange { line: usize, max: usize },
    #[error("{0:?} query has no line")]
    MissingLine(QueryTask),
    #[error("query {index}: {source}")]
    At {
        index: usize,
        #[source]
        source: Box<AlignError>,
    },
}

pub fn align(query: &LineQuery, map: &LineMap) -> Result<LineQuery, AlignError> {
    if query.task == QueryTask::Op {
        return Ok(query.clone());
    }
    let line = query.line.ok_or(AlignError::MissingLine(query.task))?;
    let mapped = map.get(line).ok_or(AlignError::LineOutOfRange {
        line,
        max: map.len(),
    })?;
    Ok(LineQuery {
        line: Some(mapped),
        ..query.clone()
    })
}

/// Aligns every query in order; the first failure aborts with its index.
pub fn align_file(queries: &[LineQuery], map: &LineMap) -> Result<Vec<LineQuery>, AlignError> {
    queries
        .iter()
        .enumerate()
        .map(|(index, q)| {
            align(q, map).map_err(|e| AlignError::At {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(task: QueryTask, line: Option<usize>) -> LineQuery {
        LineQuery {
            task,
            line,
            payload: "p".into(),
        }
    }

    #[test]
    fn identity_and_pass_through() {
        let id = LineMap::identity(8);
        assert_eq!(align(&q(QueryTask::Ccp, Some(5)), &id).unwrap(), q(QueryTask::Ccp, Some(5)));
        assert_eq!(align(&q(QueryTask::Op, None), &id).unwrap(), q(QueryTask::Op, None));
        assert_eq!(
            align(&q(QueryTask::Op, Some(99)), &id).unwrap(),
            q(QueryTask::Op, Some(99))
        );
    }

    #[test]
    fn insertions_shift_lines() {
        let mut map = LineMap::identity(6);
        map.insert_line(2);
        map.insert_line(4);
        assert_eq!(align(&q(QueryTask::Psp, Some(5)), &map).unwrap().line, Some(7));
    }

    #[test]
    fn errors_carry_index() {
        let map = LineMap::identity(3);
        assert_eq!(
            align(&q(QueryTask::Epp, Some(4)), &map),
            Err(AlignError::LineOutOfRange { line: 4, max: 3 })
        );
        assert_eq!(
            align(&q(QueryTask::Epp, None), &map),
            Err(AlignError::MissingLine(QueryTask::Epp))
        );
        let err = align_file(&[q(QueryTask::Op, None), q(QueryTask::Ccp, Some(0))], &map).unwrap_err();
        assert!(matches!(err, AlignError::At { index: 1, .. }));
        assert!(align_file(&[], &map).unwrap().is_empty());
    }

    #[test]
    fn wire_format() {
        let r: QueryRecord =
            serde_json::from_str(r#"{"origin_id":"a","task":"CCP","line":3,"payload":"x"}"#).unwrap();
        assert_eq!(r.query.task, QueryTask::Ccp);
        assert_eq!(serde_json::to_string(&q(QueryTask::Op, None)).unwrap(), r#"{"task":"OP","payload":"p"}"#);
    }
}
