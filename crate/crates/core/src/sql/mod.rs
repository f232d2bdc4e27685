//! A small SQL dialect, just large enough for write voting: single-statement
//! INSERT / UPDATE / DELETE / SELECT, AND-joined comparison predicates,
//! scalar literals, and one level of SELECT subquery inside a write.
//!
//! Statements render to a canonical string: uppercase keywords, single
//! spacing, `<>` for inequality, lowercased unquoted identifiers, `''`
//! string escaping. Voting compares those canonical strings byte for byte.

mod lexer;
mod normalize;
mod parser;

pub use normalize::{normalize, NormalizationPolicy, PolicyError};
pub use parser::parse_sql;

use std::fmt;

/// The token substituted for a non-deterministic literal. Not part of the
/// grammar, so no parsed statement can collide with a masked one.
pub const ND_TOKEN: &str = "\u{27E8}ND\u{27E9}"; // ⟨ND⟩

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SqlError {
    #[error("lex error at byte {pos}: {message}")]
    Lex { pos: usize, message: String },
    #[error("parse error at byte {pos}: {message}")]
    Parse { pos: usize, message: String },
    #[error("unsupported construct at byte {pos}: {construct}")]
    Unsupported { pos: usize, construct: String },
}

/// An identifier after canonicalization: unquoted input arrives lowercased,
/// quoted input arrives verbatim.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Ident(pub String);

const KEYWORDS: &[&str] = &[
    "insert", "into", "values", "update", "set", "delete", "from", "select", "where", "and",
    "is", "not", "null",
];

fn is_bare_ident(name: &str) -> bool {
    !name.is_empty()
        && !KEYWORDS.contains(&name)
        && name.chars().next().map(|c| c.is_ascii_lowercase() || c == '_').unwrap_or(false)
        && name.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

impl fmt::Display for Ident {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if is_bare_ident(&self.0) {
            f.write_str(&self.0)
        } else {
            write!(f, "\"{}\"", self.0.replace('"', "\"\""))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Literal {
    String(String),
    Integer(i128),
    /// Lexeme kept as written; honest replicas emit identical text, so no
    /// numeric canonicalization is attempted.
    Float(String),
    Null,
    /// Injected by normalization in place of a non-deterministic literal.
    /// The parser never produces this.
    Masked,
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::String(s) => write!(f, "'{}'", s.replace('\'', "''")),
            Literal::Integer(v) => write!(f, "{v}"),
            Literal::Float(lexeme) => f.write_str(lexeme),
            Literal::Null => f.write_str("NULL"),
            Literal::Masked => f.write_str(ND_TOKEN),
        }
    }
}

/// Column reference, optionally qualified by a table name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnRef {
    pub table: Option<Ident>,
    pub column: Ident,
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(table) = &self.table {
            write!(f, "{table}.{}", self.column)
        } else {
            write!(f, "{}", self.column)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "<>",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operand {
    Literal(Literal),
    Column(ColumnRef),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Literal(l) => write!(f, "{l}"),
            Operand::Column(c) => write!(f, "{c}"),
        }
    }
}

/// One predicate of an AND conjunction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Condition {
    Compare { left: ColumnRef, op: CmpOp, right: Operand },
    IsNull { column: ColumnRef, negated: bool },
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Compare { left, op, right } => write!(f, "{left} {op} {right}"),
            Condition::IsNull { column, negated: false } => write!(f, "{column} IS NULL"),
            Condition::IsNull { column, negated: true } => write!(f, "{column} IS NOT NULL"),
        }
    }
}

fn write_where(f: &mut fmt::Formatter<'_>, conditions: &[Condition]) -> fmt::Result {
    for (i, c) in conditions.iter().enumerate() {
        f.write_str(if i == 0 { " WHERE " } else { " AND " })?;
        write!(f, "{c}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SelectItems {
    Star,
    Items(Vec<SelectItem>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SelectItem {
    Column(ColumnRef),
    Literal(Literal),
}

impl fmt::Display for SelectItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectItem::Column(c) => write!(f, "{c}"),
            SelectItem::Literal(l) => write!(f, "{l}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Select {
    pub items: SelectItems,
    pub from: Option<Ident>,
    pub where_clause: Vec<Condition>,
}

impl fmt::Display for Select {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SELECT ")?;
        match &self.items {
            SelectItems::Star => f.write_str("*")?,
            SelectItems::Items(items) => {
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{item}")?;
                }
            }
        }
        if let Some(from) = &self.from {
            write!(f, " FROM {from}")?;
        }
        write_where(f, &self.where_clause)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InsertSource {
    /// Single-row VALUES list.
    Values(Vec<Literal>),
    /// INSERT ... SELECT, the one permitted subquery level.
    Select(Select),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Insert {
    pub table: Ident,
    /// None when the statement omitted the column list; such statements
    /// parse but cannot be normalized (no column/value correspondence).
    pub columns: Option<Vec<Ident>>,
    pub source: InsertSource,
}

impl fmt::Display for Insert {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "INSERT INTO {}", self.table)?;
        if let Some(columns) = &self.columns {
            f.write_str(" (")?;
            for (i, c) in columns.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{c}")?;
            }
            f.write_str(")")?;
        }
        match &self.source {
            InsertSource::Values(values) => {
                f.write_str(" VALUES (")?;
                for (i, v) in values.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str(")")
            }
            InsertSource::Select(select) => write!(f, " {select}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AssignValue {
    Literal(Literal),
    Subquery(Select),
}

impl fmt::Display for AssignValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AssignValue::Literal(l) => write!(f, "{l}"),
            AssignValue::Subquery(s) => write!(f, "({s})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub column: Ident,
    pub value: AssignValue,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Update {
    pub table: Ident,
    pub assignments: Vec<Assignment>,
    pub where_clause: Vec<Condition>,
}

impl fmt::Display for Update {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "UPDATE {} SET ", self.table)?;
        for (i, a) in self.assignments.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{} = {}", a.column, a.value)?;
        }
        write_where(f, &self.where_clause)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delete {
    pub table: Ident,
    pub where_clause: Vec<Condition>,
}

impl fmt::Display for Delete {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DELETE FROM {}", self.table)?;
        write_where(f, &self.where_clause)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Statement {
    Insert(Insert),
    Update(Update),
    Delete(Delete),
    Select(Select),
}

impl Statement {
    pub fn is_select(&self) -> bool {
        matches!(self, Statement::Select(_))
    }

    /// Canonical text: what voting compares after normalization.
    pub fn unparse(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statement::Insert(s) => write!(f, "{s}"),
            Statement::Update(s) => write!(f, "{s}"),
            Statement::Delete(s) => write!(f, "{s}"),
            Statement::Select(s) => write!(f, "{s}"),
        }
    }
}

/// True when the text's first word is SELECT. Voting uses this to classify
/// read statements without building a tree.
pub fn leads_with_select(text: &str) -> bool {
    let trimmed = text.trim_start();
    let word: String = trimmed.chars().take_while(|c| c.is_ascii_alphabetic()).collect();
    word.eq_ignore_ascii_case("select")
        && trimmed[word.len()..]
            .chars()
            .next()
            .map(|c| !c.is_ascii_alphanumeric() && c != '_')
            .unwrap_or(true)
}
