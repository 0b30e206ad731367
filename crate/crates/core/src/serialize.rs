//! Text serialization of user tables and the fallback parsing cascade.
//!
//! ```text
//! Columns: charttime, heartrate
//! [Row 1]: charttime is 2180-07-22 16:36:00, heartrate is 83.0
//! [Row 2]: charttime is 2180-09-22 16:43:00, heartrate is 85.0
//! ```
//!
//! Values are not escaped. The key-value parser uses the schema's column
//! names as anchors (`", <next column> is "`), so values may contain commas.

use rand::Rng as _;
use serde::Serialize;

use crate::data::{Schema, UserTable, Value};
use crate::rng::Rng;

pub fn header_line(schema: &Schema) -> String {
    format!("Columns: {}", schema.names().collect::<Vec<_>>().join(", "))
}

/// One `[Row i]: ...` line (no trailing newline); `index` is one-based.
pub fn row_line(schema: &Schema, index: usize, row: &[Value]) -> String {
    let cells: Vec<String> = schema
        .columns
        .iter()
        .zip(row)
        .map(|(c, v)| format!("{} is {}", c.name, v))
        .collect();
    format!("[Row {index}]: {}", cells.join(", "))
}

/// Rows `from..to` (zero-based, half-open), numbered from `from + 1`.
fn rows_text(schema: &Schema, table: &UserTable, from: usize, to: usize) -> String {
    let mut out = String::new();
    for (i, row) in table.rows[from..to].iter().enumerate() {
        out.push_str(&row_line(schema, from + i + 1, row));
        out.push('\n');
    }
    out
}

/// Header line followed by one line per row, each newline-terminated.
pub fn serialize(schema: &Schema, table: &UserTable) -> String {
    let mut out = header_line(schema);
    out.push('\n');
    out.push_str(&rows_text(schema, table, 0, table.len()));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowOutcome {
    KeyValue,
    CsvFallback,
    Infilled,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "row")]
pub enum Termination {
    Complete,
    /// Zero-based index of the first rejected row line.
    EarlyTerminated(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParseReport {
    pub rows: Vec<RowOutcome>,
    pub termination: Termination,
    /// Why the failing row was rejected, if one was.
    pub failure: Option<String>,
}

impl ParseReport {
    pub fn is_complete(&self) -> bool {
        self.termination == Termination::Complete
    }
}

/// Raw cell strings per column; `None` where the column was absent.
type Cells<'a> = Vec<Option<&'a str>>;

fn strip_row_prefix(line: &str) -> Option<&str> {
    let rest = line.strip_prefix("[Row ")?;
    let close = rest.find("]:")?;
    rest[..close].trim().parse::<usize>().ok()?;
    Some(&rest[close + 2..])
}

/// Anchored key-value split. Columns must appear in schema order; static
/// columns may be missing. `None` when the line is not key-value shaped.
fn split_key_value<'a>(schema: &Schema, body: &'a str) -> Option<Cells<'a>> {
    let body = body.trim_start();
    let d = schema.len();
    let mut cells: Cells<'a> = vec![None; d];
    // (column, value start) of each located anchor, in order
    let mut located: Vec<(usize, usize, usize)> = Vec::new(); // (col, anchor start, value start)
    let mut pos = 0;
    for (j, col) in schema.columns.iter().enumerate() {
        let found = if located.is_empty() {
            let key = format!("{} is", col.name);
            body.starts_with(&key).then_some((0, key.len()))
        } else {
            let key = format!(", {} is", col.name);
            body[pos..].find(&key).map(|off| (pos + off, pos + off + key.len()))
        };
        match found {
            Some((start, end)) => {
                // the anchor must end the text or be followed by a space
                let rest = &body[end..];
                if !(rest.is_empty() || rest.starts_with(' ') || rest.starts_with(',')) {
                    if col.static_id {
                        continue;
                    }
                    return None;
                }
                located.push((j, start, end));
                pos = end;
            }
            None if col.static_id => {}
            None => return None,
        }
    }
    for (k, &(j, _, value_start)) in located.iter().enumerate() {
        let value_end = located.get(k + 1).map_or(body.len(), |&(_, s, _)| s);
        let raw = &body[value_start..value_end];
        let raw = raw.strip_prefix(' ').unwrap_or(raw);
        cells[j] = Some(raw.trim_end());
    }
    Some(cells)
}

/// Comma split in schema order: either all columns, or all but the static ones.
fn split_csv<'a>(schema: &Schema, body: &'a str) -> Option<Cells<'a>> {
    let parts: Vec<&str> = body.split(',').map(str::trim).collect();
    let d = schema.len();
    if parts.len() == d {
        return Some(parts.into_iter().map(Some).collect());
    }
    let non_static: Vec<usize> = (0..d).filter(|&j| !schema.columns[j].static_id).collect();
    if non_static.len() < d && parts.len() == non_static.len() {
        let mut cells = vec![None; d];
        for (j, p) in non_static.into_iter().zip(parts) {
            cells[j] = Some(p);
        }
        return Some(cells);
    }
    None
}

enum RowResult {
    Accepted(Vec<Value>, RowOutcome),
    Rejected(String),
}

fn decode_row(schema: &Schema, cells: Cells<'_>, history: &[Vec<Value>], structural: RowOutcome) -> RowResult {
    let mut row = Vec::with_capacity(schema.len());
    let mut infilled = false;
    for (j, (col, cell)) in schema.columns.iter().zip(cells).enumerate() {
        match cell {
            Some(text) => match col.parse_cell(text) {
                Ok(v) => row.push(v),
                Err(reason) => return RowResult::Rejected(format!("column {:?}: {reason}: {text:?}", col.name)),
            },
            None => {
                // Static identifier: propagate the latest known value.
                match history.iter().rev().map(|r| &r[j]).find(|v| !v.is_null()) {
                    Some(v) => {
                        row.push(v.clone());
                        infilled = true;
                    }
                    None => return RowResult::Rejected(format!("column {:?} missing with no history to infill", col.name)),
                }
            }
        }
    }
    RowResult::Accepted(row, if infilled { RowOutcome::Infilled } else { structural })
}

/// Parse one generated row line against the schema and the accepted history.
pub fn parse_row(schema: &Schema, line: &str, history: &[Vec<Value>]) -> (Option<Vec<Value>>, RowOutcome, Option<String>) {
    let body = strip_row_prefix(line.trim()).unwrap_or(line.trim());
    let (cells, outcome) = match split_key_value(schema, body) {
        Some(c) => (c, RowOutcome::KeyValue),
        None => match split_csv(schema, body) {
            Some(c) => (c, RowOutcome::CsvFallback),
            None => return (None, RowOutcome::Failed, Some("neither key-value nor CSV shaped".into())),
        },
    };
    match decode_row(schema, cells, history, outcome) {
        RowResult::Accepted(row, o) => (Some(row), o, None),
        RowResult::Rejected(why) => (None, RowOutcome::Failed, Some(why)),
    }
}

/// Parse serialized text into a table. Parsing stops at the first row that
/// fails validation, keeping the rows accepted so far. `history` seeds the
/// static-identifier infill and is not part of the returned table.
pub fn parse(text: &str, schema: &Schema, history: Option<&UserTable>, user_id: &str) -> (UserTable, ParseReport) {
    let mut context: Vec<Vec<Value>> = history.map(|h| h.rows.clone()).unwrap_or_default();
    let prior = context.len();
    let mut outcomes = Vec::new();
    let mut termination = Termination::Complete;
    let mut failure = None;
    let lines = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .filter(|l| !l.trim_start().starts_with("Columns:"));
    for (i, line) in lines.enumerate() {
        let (row, outcome, why) = parse_row(schema, line, &context);
        outcomes.push(outcome);
        match row {
            Some(r) => context.push(r),
            None => {
                termination = Termination::EarlyTerminated(i);
                failure = why;
                break;
            }
        }
    }
    let rows = context.split_off(prior);
    (
        UserTable::new(user_id, rows),
        ParseReport {
            rows: outcomes,
            termination,
            failure,
        },
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrainingExample {
    pub user_id: String,
    pub context: String,
    pub target: String,
    pub k: usize,
    /// Set when no pool entry fit this table and `k` was drawn uniformly.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub uniform_fallback: bool,
}

/// Split points observed in a corpus: each table of length `T` contributes
/// `1..T`, so longer tables weigh in proportionally.
pub fn split_pool<'a>(tables: impl IntoIterator<Item = &'a UserTable>) -> Vec<usize> {
    tables.into_iter().flat_map(|t| 1..t.len()).collect()
}

const MAX_REJECTIONS: usize = 64;

/// One `(context, target)` example for `table`: `k = 0` with probability
/// `p_start`, otherwise `k` is drawn from `pool` and redrawn until `k < T`.
pub fn make_training_example(
    schema: &Schema,
    table: &UserTable,
    pool: &[usize],
    p_start: f64,
    rng: &mut Rng,
) -> crate::Result<TrainingExample> {
    if !(0.0..=1.0).contains(&p_start) {
        return Err(crate::Error::Invalid(format!("p_start {p_start} not in [0, 1]")));
    }
    let t = table.len();
    if t == 0 {
        return Err(crate::Error::Invalid(format!("user {:?}: empty table", table.user_id)));
    }
    let mut uniform_fallback = false;
    let k = if t == 1 || rng.random::<f64>() < p_start {
        0
    } else if pool.iter().any(|&k| k < t) {
        // bounded rejection sampling, then an exact draw among the valid entries
        let mut drawn = None;
        for _ in 0..MAX_REJECTIONS {
            let k = pool[rng.random_range(0..pool.len())];
            if k < t {
                drawn = Some(k);
                break;
            }
        }
        drawn.unwrap_or_else(|| {
            let valid: Vec<usize> = pool.iter().copied().filter(|&k| k < t).collect();
            valid[rng.random_range(0..valid.len())]
        })
    } else {
        uniform_fallback = true;
        rng.random_range(0..t)
    };
    let mut context = header_line(schema);
    context.push('\n');
    context.push_str(&rows_text(schema, table, 0, k));
    Ok(TrainingExample {
        user_id: table.user_id.clone(),
        context,
        target: rows_text(schema, table, k, t),
        k,
        uniform_fallback,
    })
}
