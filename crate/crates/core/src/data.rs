//! Schemas, typed cells, per-user tables and collections.
//!
//! On disk a collection is one CSV file (`user_id,row_idx,<columns...>`, empty
//! cell = Null) plus a JSON schema sidecar.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";
/// 0000-01-01 00:00:00 UTC.
pub const MIN_TIMESTAMP: i64 = -62_167_219_200;
/// 9999-12-31 23:59:59 UTC.
pub const MAX_TIMESTAMP: i64 = 253_402_300_799;

/// One cell of a table.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Numeric(f64),
    Categorical(String),
    /// Seconds since the Unix epoch, UTC.
    Timestamp(i64),
    Null,
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Numeric(x) => Some(*x),
            Value::Timestamp(t) => Some(*t as f64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Categorical(s) => Some(s),
            _ => None,
        }
    }
}

/// Renders the value as it appears in CSV cells and serialized text.
impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Numeric(x) => write!(f, "{}", format_numeric(*x)),
            Value::Categorical(s) => f.write_str(s),
            Value::Timestamp(t) => f.write_str(&format_timestamp(*t)),
            Value::Null => Ok(()),
        }
    }
}

/// Shortest decimal that parses back to the same `f64`, always with a
/// fractional part or exponent (`83.0`, `0.1`, `1e-7`).
pub fn format_numeric(x: f64) -> String {
    format!("{x:?}")
}

pub fn format_timestamp(secs: i64) -> String {
    match DateTime::from_timestamp(secs, 0) {
        Some(dt) => dt.naive_utc().format(TIMESTAMP_FORMAT).to_string(),
        None => format!("<out-of-range:{secs}>"),
    }
}

/// Strict `YYYY-MM-DD HH:MM:SS` parse with calendar validation.
pub fn parse_timestamp(text: &str) -> Option<i64> {
    let b = text.as_bytes();
    if b.len() != 19 {
        return None;
    }
    for (i, c) in b.iter().enumerate() {
        let ok = match i {
            4 | 7 => *c == b'-',
            10 => *c == b' ',
            13 | 16 => *c == b':',
            _ => c.is_ascii_digit(),
        };
        if !ok {
            return None;
        }
    }
    NaiveDateTime::parse_from_str(text, TIMESTAMP_FORMAT)
        .ok()
        .map(|dt| dt.and_utc().timestamp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Timestamp,
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnKind::Numeric => "numeric",
            ColumnKind::Categorical => "categorical",
            ColumnKind::Timestamp => "timestamp",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
    /// Static identifier columns are infilled from history by the parser.
    #[serde(default, rename = "static", skip_serializing_if = "std::ops::Not::not")]
    pub static_id: bool,
}

impl Column {
    pub fn numeric(name: impl Into<String>) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Numeric,
            categories: None,
            static_id: false,
        }
    }

    pub fn timestamp(name: impl Into<String>) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Timestamp,
            categories: None,
            static_id: false,
        }
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        categories: impl IntoIterator<Item = S>,
    ) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Categorical,
            categories: Some(categories.into_iter().map(Into::into).collect()),
            static_id: false,
        }
    }

    pub fn with_static(mut self) -> Self {
        self.static_id = true;
        self
    }

    pub fn categories(&self) -> &[String] {
        self.categories.as_deref().unwrap_or(&[])
    }

    /// Parse one textual cell; the empty string is Null.
    pub fn parse_cell(&self, text: &str) -> std::result::Result<Value, &'static str> {
        if text.is_empty() {
            return Ok(Value::Null);
        }
        match self.kind {
            ColumnKind::Numeric => match text.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(Value::Numeric(x)),
                Ok(_) => Err("non-finite"),
                Err(_) => Err("non-numeric"),
            },
            ColumnKind::Timestamp => parse_timestamp(text)
                .map(Value::Timestamp)
                .ok_or("invalid timestamp"),
            ColumnKind::Categorical => {
                if self.categories().iter().any(|c| c == text) {
                    Ok(Value::Categorical(text.to_string()))
                } else {
                    Err("unknown category")
                }
            }
        }
    }

    /// Why `value` does not conform to this column, if it doesn't.
    pub fn check(&self, value: &Value) -> Option<&'static str> {
        match (self.kind, value) {
            (_, Value::Null) => None,
            (ColumnKind::Numeric, Value::Numeric(x)) => (!x.is_finite()).then_some("non-finite"),
            (ColumnKind::Numeric, _) => Some("non-numeric"),
            (ColumnKind::Timestamp, Value::Timestamp(t)) => {
                (!(MIN_TIMESTAMP..=MAX_TIMESTAMP).contains(t)).then_some("timestamp out of range")
            }
            (ColumnKind::Timestamp, _) => Some("non-timestamp"),
            (ColumnKind::Categorical, Value::Categorical(s)) => {
                (!self.categories().contains(s)).then_some("unknown category")
            }
            (ColumnKind::Categorical, _) => Some("non-categorical"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<Column>,
}

impl Schema {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let schema = Schema { columns };
        schema.check()?;
        Ok(schema)
    }

    /// Verify the schema invariants: unique non-empty names, categorical
    /// columns with a non-empty category set.
    pub fn check(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for col in &self.columns {
            if col.name.is_empty() {
                return Err(Error::invalid("empty column name"));
            }
            if col.name == "user_id" || col.name == "row_idx" {
                return Err(Error::invalid(format!("reserved column name {:?}", col.name)));
            }
            if !seen.insert(col.name.as_str()) {
                return Err(Error::invalid(format!("duplicate column {:?}", col.name)));
            }
            match col.kind {
                ColumnKind::Categorical => {
                    let cats = col.categories();
                    if cats.is_empty() {
                        return Err(Error::invalid(format!(
                            "categorical column {:?} lists no categories",
                            col.name
                        )));
                    }
                    let mut c = HashSet::new();
                    for cat in cats {
                        if cat.is_empty() || !c.insert(cat) {
                            return Err(Error::invalid(format!(
                                "column {:?}: empty or duplicate category",
                                col.name
                            )));
                        }
                    }
                }
                _ if col.categories.is_some() => {
                    return Err(Error::invalid(format!(
                        "non-categorical column {:?} lists categories",
                        col.name
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    /// Indices of columns of the given kind, in schema order.
    pub fn indices_of(&self, kind: ColumnKind) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind == kind)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let schema: Schema = serde_json::from_str(text)?;
        schema.check()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// One user's ordered trajectory of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct UserTable {
    pub user_id: String,
    pub rows: Vec<Vec<Value>>,
}

impl UserTable {
    pub fn new(user_id: impl Into<String>, rows: Vec<Vec<Value>>) -> Self {
        UserTable {
            user_id: user_id.into(),
            rows,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// The sequence of cells in column `col`, in row order.
    pub fn column(&self, col: usize) -> impl Iterator<Item = &Value> {
        self.rows.iter().map(move |r| &r[col])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Zero-based row index, `None` for table-level problems.
    pub row: Option<usize>,
    pub column: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every cell of `table` against `schema`. Null is allowed anywhere.
pub fn validate_table(schema: &Schema, table: &UserTable) -> ValidationReport {
    let mut violations = Vec::new();
    if table.rows.is_empty() {
        violations.push(Violation {
            row: None,
            column: None,
            reason: "empty table".into(),
        });
    }
    for (r, row) in table.rows.iter().enumerate() {
        if row.len() != schema.len() {
            violations.push(Violation {
                row: Some(r),
                column: None,
                reason: format!("expected {} cells, found {}", schema.len(), row.len()),
            });
            continue;
        }
        for (col, value) in schema.columns.iter().zip(row) {
            if let Some(reason) = col.check(value) {
                violations.push(Violation {
                    row: Some(r),
                    column: Some(col.name.clone()),
                    reason: reason.into(),
                });
            }
        }
    }
    ValidationReport { violations }
}

/// A set of user tables sharing one schema, ordered by user id.
#[derive(Debug, Clone, PartialEq)]
pub struct Collection {
    schema: Schema,
    tables: BTreeMap<String, UserTable>,
}

impl Collection {
    /// Build a collection, rejecting duplicate ids and non-conforming tables.
    pub fn new(schema: Schema, tables: impl IntoIterator<Item = UserTable>) -> Result<Self> {
        schema.check()?;
        let mut map = BTreeMap::new();
        for table in tables {
            let report = validate_table(&schema, &table);
            if let Some(v) = report.violations.first() {
                return Err(Error::invalid(format!(
                    "user {:?}: row {:?} column {:?}: {}",
                    table.user_id, v.row, v.column, v.reason
                )));
            }
            if map.contains_key(&table.user_id) {
                return Err(Error::invalid(format!("duplicate user id {:?}", table.user_id)));
            }
            map.insert(table.user_id.clone(), table);
        }
        Ok(Collection {
            schema,
            tables: map,
        })
    }

    pub fn empty(schema: Schema) -> Self {
        Collection {
            schema,
            tables: BTreeMap::new(),
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn get(&self, user_id: &str) -> Option<&UserTable> {
        self.tables.get(user_id)
    }

    /// Tables in user-id order.
    pub fn tables(&self) -> impl ExactSizeIterator<Item = &UserTable> + Clone {
        self.tables.values()
    }

    pub fn into_tables(self) -> Vec<UserTable> {
        self.tables.into_values().collect()
    }

    /// Total number of rows over all tables.
    pub fn num_rows(&self) -> usize {
        self.tables.values().map(UserTable::len).sum()
    }

    /// Keep only the tables whose id is in `ids`.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Collection {
        let tables = ids
            .into_iter()
            .filter_map(|id| self.tables.get(id).map(|t| (id.to_string(), t.clone())))
            .collect();
        Collection {
            schema: self.schema.clone(),
            tables,
        }
    }

    /// Apply a row-level transform that preserves schema conformance.
    pub(crate) fn map_tables(&self, mut f: impl FnMut(&UserTable) -> UserTable) -> Collection {
        let tables = self
            .tables
            .values()
            .map(|t| {
                let t = f(t);
                (t.user_id.clone(), t)
            })
            .collect();
        Collection {
            schema: self.schema.clone(),
            tables,
        }
    }

    /// Pooled non-Null numeric values of column `col` across all tables.
    pub fn pooled_numeric(&self, col: usize) -> Vec<f64> {
        self.tables
            .values()
            .flat_map(|t| t.column(col).filter_map(Value::as_f64))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["user_id".to_string(), "row_idx".to_string()];
        header.extend(self.schema.names().map(String::from));
        w.write_record(&header)?;
        for table in self.tables.values() {
            for (idx, row) in table.rows.iter().enumerate() {
                let mut record = Vec::with_capacity(row.len() + 2);
                record.push(table.user_id.clone());
                record.push(idx.to_string());
                record.extend(row.iter().map(Value::to_string));
                w.write_record(&record)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(schema: Schema, reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = r.headers()?.clone();
        let expected: Vec<&str> = ["user_id", "row_idx"]
            .into_iter()
            .chain(schema.names())
            .collect();
        if header.iter().collect::<Vec<_>>() != expected {
            return Err(Error::invalid(format!(
                "CSV header {:?} does not match schema {:?}",
                header.iter().collect::<Vec<_>>(),
                expected
            )));
        }
        let mut grouped: BTreeMap<String, BTreeMap<usize, Vec<Value>>> = BTreeMap::new();
        for (line, record) in r.records().enumerate() {
            let record = record?;
            let user = record[0].to_string();
            let idx: usize = record[1].parse().map_err(|_| {
                Error::invalid(format!("record {}: bad row_idx {:?}", line + 1, &record[1]))
            })?;
            let mut row = Vec::with_capacity(schema.len());
            for (col, text) in schema.columns.iter().zip(record.iter().skip(2)) {
                let v = col.parse_cell(text).map_err(|reason| {
                    Error::invalid(format!(
                        "record {} (user {user:?}, row {idx}) column {:?}: {reason}: {text:?}",
                        line + 1,
                        col.name
                    ))
                })?;
                row.push(v);
            }
            if grouped.entry(user.clone()).or_default().insert(idx, row).is_some() {
                return Err(Error::invalid(format!(
                    "user {user:?}: duplicate row_idx {idx}"
                )));
            }
        }
        let tables = grouped
            .into_iter()
            .map(|(id, rows)| UserTable::new(id, rows.into_values().collect()));
        Collection::new(schema, tables)
    }

    pub fn load(csv_path: impl AsRef<Path>, schema: Schema) -> Result<Self> {
        let file = std::fs::File::open(csv_path)?;
        Self::read_csv(schema, std::io::BufReader::new(file))
    }

    pub fn save(&self, csv_path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(csv_path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Counts of tables per length.
pub fn length_histogram(collection: &Collection) -> Result<BTreeMap<usize, usize>> {
    if collection.is_empty() {
        return Err(Error::invalid("length histogram of an empty collection"));
    }
    let mut hist = BTreeMap::new();
    for t in collection.tables() {
        *hist.entry(t.len()).or_insert(0) += 1;
    }
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::new(vec![
            Column::numeric("hr"),
            Column::categorical("pain", ["low", "high"]),
            Column::timestamp("charttime"),
        ])
        .unwrap()
    }

    fn row(hr: f64, pain: &str, ts: &str) -> Vec<Value> {
        vec![
            Value::Numeric(hr),
            Value::Categorical(pain.into()),
            Value::Timestamp(parse_timestamp(ts).unwrap()),
        ]
    }

    #[test]
    fn conforming_table_is_ok() {
        let t = UserTable::new(
            "u1",
            vec![
                row(80.0, "low", "2180-07-22 16:36:00"),
                row(81.5, "high", "2180-07-22 17:36:00"),
                row(79.0, "low", "2180-07-22 18:36:00"),
            ],
        );
        assert!(validate_table(&schema(), &t).is_ok());
    }

    #[test]
    fn text_in_numeric_column_is_reported() {
        let mut t = UserTable::new(
            "u1",
            vec![
                row(80.0, "low", "2180-07-22 16:36:00"),
                row(81.0, "low", "2180-07-22 16:36:00"),
                row(82.0, "low", "2180-07-22 16:36:00"),
            ],
        );
        t.rows[2][0] = Value::Categorical("eighty".into());
        let report = validate_table(&schema(), &t);
        assert_eq!(
            report.violations,
            vec![Violation {
                row: Some(2),
                column: Some("hr".into()),
                reason: "non-numeric".into()
            }]
        );
    }

    #[test]
    fn all_null_is_ok() {
        let t = UserTable::new("u", vec![vec![Value::Null; 3]; 2]);
        assert!(validate_table(&schema(), &t).is_ok());
    }

    #[test]
    fn length_histogram_counts() {
        let s = Schema::new(vec![Column::numeric("x")]).unwrap();
        let mk = |id: &str, n: usize| UserTable::new(id, vec![vec![Value::Numeric(0.0)]; n]);
        let c = Collection::new(s.clone(), [mk("a", 2), mk("b", 2), mk("c", 3)]).unwrap();
        let h = length_histogram(&c).unwrap();
        assert_eq!(h, BTreeMap::from([(2, 2), (3, 1)]));
        let c = Collection::new(s.clone(), [mk("a", 5)]).unwrap();
        assert_eq!(length_histogram(&c).unwrap(), BTreeMap::from([(5, 1)]));
        assert!(length_histogram(&Collection::empty(s)).is_err());
    }

    #[test]
    fn timestamp_parse_is_strict() {
        assert_eq!(
            format_timestamp(parse_timestamp("2180-07-22 16:36:00").unwrap()),
            "2180-07-22 16:36:00"
        );
        for bad in [
            "2180-02-30 00:00:00",
            "2180-7-22 16:36:00",
            "2180-07-22T16:36:00",
            "2180-07-22 24:00:00",
            "2180-07-22 16:36",
            "",
        ] {
            assert_eq!(parse_timestamp(bad), None, "{bad}");
        }
    }

    #[test]
    fn numeric_rendering_matches_text_examples() {
        assert_eq!(format_numeric(83.0), "83.0");
        assert_eq!(format_numeric(-0.8), "-0.8");
        assert_eq!("1e-7".parse::<f64>().unwrap(), 1e-7);
        assert_eq!(format_numeric(1e-7).parse::<f64>().unwrap(), 1e-7);
    }

    #[test]
    fn schema_rejects_duplicates_and_missing_categories() {
        assert!(Schema::new(vec![Column::numeric("a"), Column::numeric("a")]).is_err());
        assert!(Schema::new(vec![Column::numeric("")]).is_err());
        let mut c = Column::categorical("c", ["x"]);
        c.categories = None;
        assert!(Schema::new(vec![c]).is_err());
    }

    #[test]
    fn csv_roundtrip_with_nulls_and_quoting() {
        let s = Schema::new(vec![
            Column::numeric("hr"),
            Column::categorical("note", ["a, b", "plain \"q\""]),
        ])
        .unwrap();
        let c = Collection::new(
            s.clone(),
            [
                UserTable::new(
                    "u2",
                    vec![
                        vec![Value::Numeric(0.1), Value::Categorical("a, b".into())],
                        vec![Value::Null, Value::Categorical("plain \"q\"".into())],
                    ],
                ),
                UserTable::new("u1", vec![vec![Value::Numeric(-3.0), Value::Null]]),
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("user_id,row_idx,hr,note\nu1,0,-3.0,\n"));
        let back = Collection::read_csv(s, buf.as_slice()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn schema_json_shape() {
        let s = Schema::new(vec![
            Column::numeric("x"),
            Column::categorical("c", ["L", "H"]).with_static(),
        ])
        .unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(
            json,
            r#"{"columns":[{"name":"x","kind":"numeric"},{"name":"c","kind":"categorical","categories":["L","H"],"static":true}]}"#
        );
        assert_eq!(Schema::from_json_str(&json).unwrap(), s);
    }
}
