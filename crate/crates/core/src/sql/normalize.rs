//! Masking of non-deterministic literals ahead of vote comparison.
//!
//! A policy flags (table, column) pairs whose values legitimately differ
//! across honest replicas (timestamps, sequence values). Normalization
//! replaces every literal bound to a flagged column with one fixed token,
//! so honest divergence compares equal while any other difference stays
//! visible.

use std::collections::BTreeSet;
use std::path::Path;

use super::{
    AssignValue, CmpOp, Condition, Ident, InsertSource, Literal, Operand, Select, SelectItem,
    SelectItems, SqlError, Statement,
};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NormalizationPolicy {
    /// Lowercased (table, column) pairs.
    flagged: BTreeSet<(String, String)>,
}

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("cannot read policy file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse policy file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("policy entry {0:?} is not a table section")]
    NotATable(String),
    #[error("unknown key {key:?} in policy section {table:?} (only \"nondeterministic\" is allowed)")]
    UnknownKey { table: String, key: String },
    #[error("policy section {0:?}: \"nondeterministic\" must be a list of column names")]
    NotAStringList(String),
    #[error("duplicate policy entry for {table}.{column}")]
    Duplicate { table: String, column: String },
}

impl NormalizationPolicy {
    pub fn empty() -> NormalizationPolicy {
        NormalizationPolicy::default()
    }

    /// Flags one column. Returns false when the pair was already present.
    pub fn flag(&mut self, table: &str, column: &str) -> bool {
        self.flagged.insert((table.to_lowercase(), column.to_lowercase()))
    }

    pub fn with_flags(entries: &[(&str, &str)]) -> NormalizationPolicy {
        let mut policy = NormalizationPolicy::empty();
        for (table, column) in entries {
            policy.flag(table, column);
        }
        policy
    }

    pub fn is_flagged(&self, table: &Ident, column: &Ident) -> bool {
        self.flagged.contains(&(table.0.to_lowercase(), column.0.to_lowercase()))
    }

    pub fn len(&self) -> usize {
        self.flagged.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flagged.is_empty()
    }

    /// Parses the policy format: one section per table, each holding a
    /// `nondeterministic` list of column names.
    pub fn from_toml_str(text: &str) -> Result<NormalizationPolicy, PolicyError> {
        Self::from_toml_table(&text.parse()?)
    }

    /// Reads an already-parsed policy table, e.g. one embedded as a section
    /// of a larger document.
    pub fn from_toml_table(root: &toml::Table) -> Result<NormalizationPolicy, PolicyError> {
        let mut policy = NormalizationPolicy::empty();
        for (table_name, section) in root {
            let toml::Value::Table(section) = section else {
                return Err(PolicyError::NotATable(table_name.clone()));
            };
            for (key, value) in section {
                if key != "nondeterministic" {
                    return Err(PolicyError::UnknownKey {
                        table: table_name.clone(),
                        key: key.clone(),
                    });
                }
                let toml::Value::Array(columns) = value else {
                    return Err(PolicyError::NotAStringList(table_name.clone()));
                };
                for column in columns {
                    let toml::Value::String(column) = column else {
                        return Err(PolicyError::NotAStringList(table_name.clone()));
                    };
                    if !policy.flag(table_name, column) {
                        return Err(PolicyError::Duplicate {
                            table: table_name.to_lowercase(),
                            column: column.to_lowercase(),
                        });
                    }
                }
            }
        }
        Ok(policy)
    }

    pub fn load(path: &Path) -> Result<NormalizationPolicy, PolicyError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// Renders the statement's canonical text with every policy-flagged literal
/// masked. With an empty policy this is exactly the canonical unparse.
pub fn normalize(statement: &Statement, policy: &NormalizationPolicy) -> Result<String, SqlError> {
    let mut statement = statement.clone();
    mask_statement(&mut statement, policy)?;
    Ok(statement.unparse())
}

fn mask_statement(statement: &mut Statement, policy: &NormalizationPolicy) -> Result<(), SqlError> {
    match statement {
        Statement::Insert(insert) => {
            let Some(columns) = insert.columns.clone() else {
                return Err(SqlError::Unsupported {
                    pos: 0,
                    construct: "INSERT without a column list".into(),
                });
            };
            let table = insert.table.clone();
            match &mut insert.source {
                InsertSource::Values(values) => {
                    for (column, value) in columns.iter().zip(values.iter_mut()) {
                        if policy.is_flagged(&table, column) {
                            *value = Literal::Masked;
                        }
                    }
                }
                InsertSource::Select(select) => {
                    if let SelectItems::Items(items) = &mut select.items {
                        for (column, item) in columns.iter().zip(items.iter_mut()) {
                            if policy.is_flagged(&table, column) {
                                if let SelectItem::Literal(lit) = item {
                                    *lit = Literal::Masked;
                                }
                            }
                        }
                    }
                    mask_select(select, policy);
                }
            }
        }
        Statement::Update(update) => {
            let table = update.table.clone();
            for assignment in &mut update.assignments {
                let flagged = policy.is_flagged(&table, &assignment.column);
                match &mut assignment.value {
                    AssignValue::Literal(lit) => {
                        if flagged {
                            *lit = Literal::Masked;
                        }
                    }
                    AssignValue::Subquery(select) => {
                        // a scalar subquery's single literal item is the
                        // value bound to the assigned column
                        if flagged {
                            if let SelectItems::Items(items) = &mut select.items {
                                if let [SelectItem::Literal(lit)] = items.as_mut_slice() {
                                    *lit = Literal::Masked;
                                }
                            }
                        }
                        mask_select(select, policy);
                    }
                }
            }
            mask_where(&mut update.where_clause, Some(&table), policy);
        }
        Statement::Delete(delete) => {
            let table = delete.table.clone();
            mask_where(&mut delete.where_clause, Some(&table), policy);
        }
        Statement::Select(select) => mask_select(select, policy),
    }
    Ok(())
}

fn mask_select(select: &mut Select, policy: &NormalizationPolicy) {
    let context = select.from.clone();
    mask_where(&mut select.where_clause, context.as_ref(), policy);
}

/// Masks literals in equality comparisons against flagged columns. An
/// unqualified column belongs to the statement's context table; qualified
/// ones carry their own.
fn mask_where(conditions: &mut [Condition], context: Option<&Ident>, policy: &NormalizationPolicy) {
    for condition in conditions {
        if let Condition::Compare { left, op: CmpOp::Eq, right: Operand::Literal(lit) } = condition
        {
            let table = left.table.as_ref().or(context);
            if let Some(table) = table {
                if policy.is_flagged(table, &left.column) {
                    *lit = Literal::Masked;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse_sql;
    use super::*;

    fn norm(text: &str, policy: &NormalizationPolicy) -> String {
        normalize(&parse_sql(text).unwrap(), policy).unwrap()
    }

    fn touched_policy() -> NormalizationPolicy {
        NormalizationPolicy::with_flags(&[("page", "touched")])
    }

    #[test]
    fn flagged_insert_values_compare_equal() {
        let policy = touched_policy();
        let a = norm("INSERT INTO page (id, touched) VALUES (7, '2007-10-01 08:00:00')", &policy);
        let b = norm("INSERT INTO page (id, touched) VALUES (7, '2007-10-01 08:00:03')", &policy);
        assert_eq!(a, b);
        assert_eq!(a, "INSERT INTO page (id, touched) VALUES (7, \u{27E8}ND\u{27E9})");
    }

    #[test]
    fn unflagged_literals_still_differ() {
        let policy = touched_policy();
        let a = norm("UPDATE page SET title = 'x' WHERE id = 7", &policy);
        let b = norm("UPDATE page SET title = 'y' WHERE id = 7", &policy);
        assert_ne!(a, b);
    }

    #[test]
    fn flagged_set_assignment_is_masked() {
        let policy = touched_policy();
        let a = norm("UPDATE page SET touched = '08:00:00' WHERE id = 1", &policy);
        let b = norm("UPDATE page SET touched = '08:00:09' WHERE id = 1", &policy);
        assert_eq!(a, b);
    }

    #[test]
    fn flagged_scalar_subquery_value_is_masked() {
        let policy = touched_policy();
        let a = norm("UPDATE page SET touched = (SELECT '08:00:00') WHERE id = 1", &policy);
        let b = norm("UPDATE page SET touched = (SELECT '08:00:07') WHERE id = 1", &policy);
        assert_eq!(a, b);
        assert!(a.contains("(SELECT \u{27E8}ND\u{27E9})"), "{a}");
    }

    #[test]
    fn subquery_where_uses_its_own_table_context() {
        let policy = NormalizationPolicy::with_flags(&[("clock", "ts")]);
        let a = norm("UPDATE page SET x = (SELECT v FROM clock WHERE ts = '08:00:00')", &policy);
        let b = norm("UPDATE page SET x = (SELECT v FROM clock WHERE ts = '08:00:01')", &policy);
        assert_eq!(a, b);
    }

    #[test]
    fn where_equality_on_flagged_column_is_masked() {
        let policy = touched_policy();
        let a = norm("DELETE FROM page WHERE touched = '08:00:00'", &policy);
        let b = norm("DELETE FROM page WHERE touched = '08:00:05'", &policy);
        assert_eq!(a, b);
    }

    #[test]
    fn non_equality_comparisons_are_not_masked() {
        let policy = touched_policy();
        let a = norm("DELETE FROM page WHERE touched < '08:00:00'", &policy);
        let b = norm("DELETE FROM page WHERE touched < '08:00:05'", &policy);
        assert_ne!(a, b);
    }

    #[test]
    fn qualifier_overrides_context_table() {
        let policy = NormalizationPolicy::with_flags(&[("other", "ts")]);
        let masked = norm("DELETE FROM page WHERE other.ts = '08:00:00'", &policy);
        assert!(masked.contains('\u{27E8}'), "{masked}");
        let unmasked = norm("DELETE FROM page WHERE ts = '08:00:00'", &policy);
        assert!(!unmasked.contains('\u{27E8}'), "{unmasked}");
    }

    #[test]
    fn policy_lookup_is_case_insensitive() {
        let policy = NormalizationPolicy::with_flags(&[("Page", "Touched")]);
        let a = norm("INSERT INTO page (touched) VALUES ('a')", &policy);
        let b = norm("INSERT INTO \"page\" (\"touched\") VALUES ('b')", &policy);
        assert_eq!(a, b);
        // a quoted identifier with different case is canonicalized
        // differently but still matches the policy
        let c = norm("INSERT INTO \"PAGE\" (\"Touched\") VALUES ('c')", &policy);
        assert!(c.contains('\u{27E8}'));
    }

    #[test]
    fn empty_policy_is_plain_canonicalization() {
        let policy = NormalizationPolicy::empty();
        let text = "INSERT INTO page (id, touched) VALUES (7, 'x')";
        assert_eq!(norm(text, &policy), parse_sql(text).unwrap().unparse());
    }

    #[test]
    fn irrelevant_flags_change_nothing() {
        let untouched = "UPDATE page SET title = 'x' WHERE id = 7";
        let policy = NormalizationPolicy::with_flags(&[("page", "touched"), ("other", "title")]);
        assert_eq!(norm(untouched, &policy), parse_sql(untouched).unwrap().unparse());
    }

    #[test]
    fn insert_without_column_list_cannot_normalize() {
        let stmt = parse_sql("INSERT INTO t VALUES (1)").unwrap();
        assert!(matches!(
            normalize(&stmt, &NormalizationPolicy::empty()),
            Err(SqlError::Unsupported { construct, .. })
                if construct == "INSERT without a column list"
        ));
    }

    #[test]
    fn masked_token_cannot_be_spoofed_by_a_string() {
        let policy = touched_policy();
        let masked = norm("UPDATE page SET touched = 'x'", &policy);
        let spoof = norm("UPDATE page SET title = '\u{27E8}ND\u{27E9}'", &policy);
        assert_eq!(masked, "UPDATE page SET touched = \u{27E8}ND\u{27E9}");
        assert_eq!(spoof, "UPDATE page SET title = '\u{27E8}ND\u{27E9}'");
        assert_ne!(masked, spoof);
    }

    #[test]
    fn policy_file_roundtrip() {
        let policy = NormalizationPolicy::from_toml_str(
            "[page]\nnondeterministic = [\"touched\", \"latest\"]\n\n[clock]\nnondeterministic = [\"ts\"]\n",
        )
        .unwrap();
        assert_eq!(policy.len(), 3);
        assert!(policy.is_flagged(&Ident("page".into()), &Ident("latest".into())));
        assert!(!policy.is_flagged(&Ident("page".into()), &Ident("ts".into())));
    }

    #[test]
    fn empty_policy_file_is_valid() {
        assert!(NormalizationPolicy::from_toml_str("").unwrap().is_empty());
    }

    #[test]
    fn duplicate_policy_entries_are_rejected() {
        let err = NormalizationPolicy::from_toml_str(
            "[page]\nnondeterministic = [\"touched\", \"Touched\"]\n",
        );
        assert!(matches!(err, Err(PolicyError::Duplicate { .. })));
    }

    #[test]
    fn unknown_policy_keys_are_rejected() {
        let err =
            NormalizationPolicy::from_toml_str("[page]\nnondeterministic = []\nmode = \"x\"\n");
        assert!(matches!(err, Err(PolicyError::UnknownKey { .. })));
        let err = NormalizationPolicy::from_toml_str("page = 3\n");
        assert!(matches!(err, Err(PolicyError::NotATable(_))));
        let err = NormalizationPolicy::from_toml_str("[page]\nnondeterministic = [3]\n");
        assert!(matches!(err, Err(PolicyError::NotAStringList(_))));
    }
}
