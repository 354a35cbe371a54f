//! Table and corpus data model plus the cell-level perturbation primitives
//! (mask, swap) that every attack builds on.
//!
//! Tables are value-semantic: perturbation ops return a fresh copy and never
//! touch their input, so sweeps at several perturbation levels can all start
//! from the same pristine table.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved cell value marking a masked entity. Victims decide how to
/// consume it; the data model only guarantees it never collides with a
/// real entity surface.
pub const MASK: &str = "[MASK]";

#[derive(Debug, Error)]
pub enum TableError {
    #[error("table {table_id}: header row is empty")]
    NoHeaders { table_id: String },
    #[error("table {table_id}: no body rows")]
    NoRows { table_id: String },
    #[error("table {table_id}: row {row} has {got} cells, expected {expected}")]
    RaggedRow {
        table_id: String,
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("table {table_id}: annotation column {col} out of range (m={m})")]
    AnnotationOutOfRange {
        table_id: String,
        col: usize,
        m: usize,
    },
    #[error("table {table_id}: annotation for column {col} is empty")]
    EmptyAnnotation { table_id: String, col: usize },
    #[error("table {table_id}: annotation for column {col} repeats class {class:?}")]
    DuplicateAnnotationClass {
        table_id: String,
        col: usize,
        class: String,
    },
    #[error("cell reference {cell} out of bounds for table {table_id} ({n} rows, {m} columns)")]
    CellOutOfBounds {
        table_id: String,
        cell: CellRef,
        n: usize,
        m: usize,
    },
    #[error("cell reference {cell} names table {expected} but was applied to {got}")]
    WrongTable {
        cell: CellRef,
        expected: String,
        got: String,
    },
    #[error("column index {col} out of range for table {table_id} (m={m})")]
    ColumnOutOfRange {
        table_id: String,
        col: usize,
        m: usize,
    },
    #[error("cell {cell} is already masked")]
    AlreadyMasked { cell: CellRef },
    #[error("replacement for cell {cell} is empty")]
    EmptyReplacement { cell: CellRef },
    #[error("corpus contains duplicate table id {table_id:?}")]
    DuplicateTableId { table_id: String },
    #[error("line {line}: {source}")]
    Record {
        line: usize,
        #[source]
        source: Box<TableError>,
    },
    #[error("line {line}: malformed table record: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which split a corpus (and anything derived from it) came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitTag::Train => write!(f, "train"),
            SplitTag::Test => write!(f, "test"),
        }
    }
}

/// Reference to one body cell. `row` is 1-based because row 0 is the header
/// row; `row = i` refers to the i-th body row.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellRef {
    pub table_id: String,
    pub row: usize,
    pub col: usize,
}

impl CellRef {
    pub fn new(table_id: impl Into<String>, row: usize, col: usize) -> Self {
        CellRef {
            table_id: table_id.into(),
            row,
            col,
        }
    }
}

impl fmt::Display for CellRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{},{}]", self.table_id, self.row, self.col)
    }
}

/// One entity table: a header row, an n×m grid of entity cells, and
/// per-column multilabel class annotations ordered most-specific first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Table {
    table_id: String,
    headers: Vec<String>,
    /// n rows of m cells each; row 0 of this vec is body row 1.
    rows: Vec<Vec<String>>,
    annotations: BTreeMap<usize, Vec<String>>,
}

impl Table {
    /// Validates every structural invariant before admitting the table.
    pub fn new(
        table_id: impl Into<String>,
        headers: Vec<String>,
        rows: Vec<Vec<String>>,
        annotations: BTreeMap<usize, Vec<String>>,
    ) -> Result<Self, TableError> {
        let table_id = table_id.into();
        let m = headers.len();
        if m == 0 {
            return Err(TableError::NoHeaders { table_id });
        }
        if rows.is_empty() {
            return Err(TableError::NoRows { table_id });
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(TableError::RaggedRow {
                    table_id,
                    row: i + 1,
                    got: row.len(),
                    expected: m,
                });
            }
        }
        for (&col, classes) in &annotations {
            if col >= m {
                return Err(TableError::AnnotationOutOfRange { table_id, col, m });
            }
            if classes.is_empty() {
                return Err(TableError::EmptyAnnotation { table_id, col });
            }
            let mut seen = std::collections::BTreeSet::new();
            for class in classes {
                if !seen.insert(class) {
                    return Err(TableError::DuplicateAnnotationClass {
                        table_id,
                        col,
                        class: class.clone(),
                    });
                }
            }
        }
        Ok(Table {
            table_id,
            headers,
            rows,
            annotations,
        })
    }

    pub fn table_id(&self) -> &str {
        &self.table_id
    }

    pub fn headers(&self) -> &[String] {
        &self.headers
    }

    pub fn header(&self, col: usize) -> Result<&str, TableError> {
        self.headers
            .get(col)
            .map(String::as_str)
            .ok_or_else(|| TableError::ColumnOutOfRange {
                table_id: self.table_id.clone(),
                col,
                m: self.column_count(),
            })
    }

    /// Number of body rows (n).
    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    /// Number of columns (m).
    pub fn column_count(&self) -> usize {
        self.headers.len()
    }

    pub fn annotations(&self) -> &BTreeMap<usize, Vec<String>> {
        &self.annotations
    }

    /// Ordered class list for a column, most-specific class first.
    pub fn annotation(&self, col: usize) -> Option<&[String]> {
        self.annotations.get(&col).map(Vec::as_slice)
    }

    /// The most specific class assigned to a column, when annotated.
    pub fn most_specific_class(&self, col: usize) -> Option<&str> {
        self.annotation(col).map(|classes| classes[0].as_str())
    }

    pub fn cell(&self, cell: &CellRef) -> Result<&str, TableError> {
        if cell.table_id != self.table_id {
            return Err(TableError::WrongTable {
                cell: cell.clone(),
                expected: cell.table_id.clone(),
                got: self.table_id.clone(),
            });
        }
        if cell.row == 0 || cell.row > self.row_count() || cell.col >= self.column_count() {
            return Err(TableError::CellOutOfBounds {
                table_id: self.table_id.clone(),
                cell: cell.clone(),
                n: self.row_count(),
                m: self.column_count(),
            });
        }
        Ok(&self.rows[cell.row - 1][cell.col])
    }

    /// Raw body grid, row-major.
    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    fn set_cell(&mut self, cell: &CellRef, value: String) {
        self.rows[cell.row - 1][cell.col] = value;
    }
}

/// The n body cells of column `col` in row order, paired with their refs.
/// The header is not included; fetch it with [`Table::header`].
pub fn column(table: &Table, col: usize) -> Result<Vec<(CellRef, &str)>, TableError> {
    if col >= table.column_count() {
        return Err(TableError::ColumnOutOfRange {
            table_id: table.table_id().to_string(),
            col,
            m: table.column_count(),
        });
    }
    Ok(table
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            (
                CellRef::new(table.table_id(), i + 1, col),
                row[col].as_str(),
            )
        })
        .collect())
}

/// Copy of `table` with the referenced cell replaced by [`MASK`].
/// Masking an already-masked cell is rejected.
pub fn mask_entity(table: &Table, cell: &CellRef) -> Result<Table, TableError> {
    let current = table.cell(cell)?;
    if current == MASK {
        return Err(TableError::AlreadyMasked { cell: cell.clone() });
    }
    let mut out = table.clone();
    out.set_cell(cell, MASK.to_string());
    Ok(out)
}

/// Copy of `table` with the referenced cell replaced by `replacement`.
/// Every other cell and all headers are bit-identical to the input.
pub fn swap_entity(table: &Table, cell: &CellRef, replacement: &str) -> Result<Table, TableError> {
    table.cell(cell)?;
    if replacement.is_empty() {
        return Err(TableError::EmptyReplacement { cell: cell.clone() });
    }
    let mut out = table.clone();
    out.set_cell(cell, replacement.to_string());
    Ok(out)
}

/// A split-tagged list of tables with unique ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub tables: Vec<Table>,
    pub split_tag: SplitTag,
}

impl Corpus {
    pub fn new(tables: Vec<Table>, split_tag: SplitTag) -> Result<Self, TableError> {
        let mut seen = std::collections::BTreeSet::new();
        for table in &tables {
            if !seen.insert(table.table_id().to_string()) {
                return Err(TableError::DuplicateTableId {
                    table_id: table.table_id().to_string(),
                });
            }
        }
        Ok(Corpus { tables, split_tag })
    }

    pub fn table(&self, table_id: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.table_id() == table_id)
    }

    /// Every (table, column) pair that carries an annotation.
    pub fn annotated_columns(&self) -> Vec<(&Table, usize)> {
        self.tables
            .iter()
            .flat_map(|t| t.annotations().keys().map(move |&col| (t, col)))
            .collect()
    }
}

/// Wire record for one table line. Field names are part of the corpus file
/// format; annotation keys are column indices as strings.
#[derive(Serialize, Deserialize)]
struct TableRecord {
    table_id: String,
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
    annotations: BTreeMap<usize, Vec<String>>,
}

impl From<&Table> for TableRecord {
    fn from(t: &Table) -> Self {
        TableRecord {
            table_id: t.table_id.clone(),
            headers: t.headers.clone(),
            rows: t.rows.clone(),
            annotations: t.annotations.clone(),
        }
    }
}

impl TryFrom<TableRecord> for Table {
    type Error = TableError;

    fn try_from(r: TableRecord) -> Result<Self, TableError> {
        Table::new(r.table_id, r.headers, r.rows, r.annotations)
    }
}

pub(crate) fn table_to_json(table: &Table) -> serde_json::Value {
    serde_json::to_value(TableRecord::from(table)).expect("table serialization cannot fail")
}

pub(crate) fn table_from_json(value: serde_json::Value) -> Result<Table, TableError> {
    let record: TableRecord =
        serde_json::from_value(value).map_err(|e| TableError::MalformedLine {
            line: 0,
            message: e.to_string(),
        })?;
    Table::try_from(record)
}

/// Parses a line-delimited corpus file: one JSON table record per line,
/// UTF-8, blank lines ignored. The first malformed line aborts the parse
/// with a diagnostic naming that line.
pub fn parse_corpus(path: impl AsRef<Path>, split_tag: SplitTag) -> Result<Corpus, TableError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| TableError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut tables = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| TableError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TableRecord =
            serde_json::from_str(&line).map_err(|e| TableError::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
        let table = Table::try_from(record).map_err(|e| TableError::Record {
            line: line_no,
            source: Box::new(e),
        })?;
        tables.push(table);
    }
    Corpus::new(tables, split_tag)
}

/// Writes a corpus in the line-delimited format accepted by [`parse_corpus`].
pub fn serialize_corpus(corpus: &Corpus, mut writer: impl Write) -> std::io::Result<()> {
    for table in &corpus.tables {
        let record = TableRecord::from(table);
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// File-path convenience over [`serialize_corpus`].
pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> std::io::Result<()> {
    let file = std::fs::File::create(path)?;
    let mut buf = std::io::BufWriter::new(file);
    serialize_corpus(corpus, &mut buf)?;
    buf.flush()
}
