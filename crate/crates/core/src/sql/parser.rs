//! Recursive-descent parser for the SQL subset.

use super::lexer::{lex, Tok, Token};
use super::{
    AssignValue, Assignment, ColumnRef, CmpOp, Condition, Delete, Ident, Insert, InsertSource,
    Literal, Operand, Select, SelectItem, SelectItems, SqlError, Statement, Update, KEYWORDS,
};

/// Constructs we recognize well enough to refuse by name.
const UNSUPPORTED_WORDS: &[(&str, &str)] = &[
    ("or", "OR"),
    ("join", "JOIN"),
    ("inner", "JOIN"),
    ("left", "JOIN"),
    ("right", "JOIN"),
    ("outer", "JOIN"),
    ("cross", "JOIN"),
    ("on", "JOIN"),
    ("order", "ORDER BY"),
    ("group", "GROUP BY"),
    ("having", "HAVING"),
    ("limit", "LIMIT"),
    ("offset", "OFFSET"),
    ("union", "UNION"),
    ("in", "IN"),
    ("like", "LIKE"),
    ("between", "BETWEEN"),
    ("exists", "EXISTS"),
    ("returning", "RETURNING"),
    ("as", "AS"),
    ("distinct", "DISTINCT"),
];

pub fn parse_sql(text: &str) -> Result<Statement, SqlError> {
    let tokens = lex(text)?;
    let mut parser = Parser { tokens: &tokens, pos: 0, src_len: text.len() };
    let statement = parser.statement()?;
    parser.finish()?;
    Ok(statement)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    src_len: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn here(&self) -> usize {
        self.tokens.get(self.pos).map(|t| t.pos).unwrap_or(self.src_len)
    }

    fn advance(&mut self) -> Option<&'a Tok> {
        let tok = self.tokens.get(self.pos).map(|t| &t.tok);
        self.pos += 1;
        tok
    }

    fn error(&self, message: impl Into<String>) -> SqlError {
        SqlError::Parse { pos: self.here(), message: message.into() }
    }

    fn unsupported(&self, construct: impl Into<String>) -> SqlError {
        SqlError::Unsupported { pos: self.here(), construct: construct.into() }
    }

    /// Errors by name when the next token is a construct outside the subset.
    fn reject_known_unsupported(&self) -> Result<(), SqlError> {
        if let Some(Tok::Word(w)) = self.peek() {
            let lower = w.to_ascii_lowercase();
            if let Some((_, name)) = UNSUPPORTED_WORDS.iter().find(|(k, _)| *k == lower) {
                return Err(self.unsupported(*name));
            }
        }
        Ok(())
    }

    fn peek_word(&self, word: &str) -> bool {
        matches!(self.peek(), Some(Tok::Word(w)) if w.eq_ignore_ascii_case(word))
    }

    fn eat_word(&mut self, word: &str) -> bool {
        if self.peek_word(word) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_word(&mut self, word: &str) -> Result<(), SqlError> {
        if self.eat_word(word) {
            Ok(())
        } else {
            Err(self.error(format!("expected {}", word.to_ascii_uppercase())))
        }
    }

    fn expect_tok(&mut self, tok: Tok, what: &str) -> Result<(), SqlError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected {what}")))
        }
    }

    /// Unquoted words fold to lowercase; quoted identifiers are verbatim.
    fn ident(&mut self) -> Result<Ident, SqlError> {
        match self.peek() {
            Some(Tok::Word(w)) => {
                let lower = w.to_ascii_lowercase();
                if KEYWORDS.contains(&lower.as_str()) {
                    return Err(self.error(format!(
                        "expected identifier, found keyword {}",
                        w.to_ascii_uppercase()
                    )));
                }
                self.pos += 1;
                Ok(Ident(lower))
            }
            Some(Tok::Quoted(q)) => {
                let name = q.clone();
                self.pos += 1;
                Ok(Ident(name))
            }
            _ => Err(self.error("expected identifier")),
        }
    }

    fn column_ref(&mut self) -> Result<ColumnRef, SqlError> {
        let first = self.ident()?;
        if self.peek() == Some(&Tok::Dot) {
            self.pos += 1;
            let column = self.ident()?;
            Ok(ColumnRef { table: Some(first), column })
        } else {
            Ok(ColumnRef { table: None, column: first })
        }
    }

    fn at_literal(&self) -> bool {
        matches!(
            self.peek(),
            Some(Tok::Int(_) | Tok::Float(_) | Tok::Str(_) | Tok::Minus)
        ) || self.peek_word("null")
    }

    fn literal(&mut self) -> Result<Literal, SqlError> {
        match self.peek() {
            Some(Tok::Minus) => {
                self.pos += 1;
                match self.advance() {
                    Some(Tok::Int(v)) => Ok(Literal::Integer(-v)),
                    Some(Tok::Float(lexeme)) => Ok(Literal::Float(format!("-{lexeme}"))),
                    _ => {
                        self.pos -= 1;
                        Err(self.error("expected a number after '-'"))
                    }
                }
            }
            Some(Tok::Int(v)) => {
                let v = *v;
                self.pos += 1;
                Ok(Literal::Integer(v))
            }
            Some(Tok::Float(lexeme)) => {
                let lexeme = lexeme.clone();
                self.pos += 1;
                Ok(Literal::Float(lexeme))
            }
            Some(Tok::Str(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(Literal::String(s))
            }
            Some(Tok::Word(w)) if w.eq_ignore_ascii_case("null") => {
                self.pos += 1;
                Ok(Literal::Null)
            }
            _ => Err(self.error("expected a literal")),
        }
    }

    fn statement(&mut self) -> Result<Statement, SqlError> {
        match self.peek() {
            None => Err(self.error("empty statement")),
            Some(Tok::Word(w)) => {
                let lower = w.to_ascii_lowercase();
                match lower.as_str() {
                    "insert" => {
                        self.pos += 1;
                        self.insert().map(Statement::Insert)
                    }
                    "update" => {
                        self.pos += 1;
                        self.update().map(Statement::Update)
                    }
                    "delete" => {
                        self.pos += 1;
                        self.delete().map(Statement::Delete)
                    }
                    "select" => {
                        self.pos += 1;
                        self.select_body().map(Statement::Select)
                    }
                    _ => Err(self.unsupported(w.to_ascii_uppercase())),
                }
            }
            Some(_) => Err(self.error("expected a statement keyword")),
        }
    }

    fn finish(&mut self) -> Result<(), SqlError> {
        if self.peek() == Some(&Tok::Semicolon) {
            self.pos += 1;
        }
        if self.peek().is_some() {
            self.reject_known_unsupported()?;
            if matches!(self.peek(), Some(Tok::Word(_)) | Some(Tok::Semicolon)) {
                return Err(self.unsupported("multiple statements"));
            }
            return Err(self.error("expected end of statement"));
        }
        Ok(())
    }

    fn insert(&mut self) -> Result<Insert, SqlError> {
        self.expect_word("into")?;
        let table = self.ident()?;
        let columns = if self.peek() == Some(&Tok::LParen) {
            self.pos += 1;
            let mut columns = vec![self.ident()?];
            while self.peek() == Some(&Tok::Comma) {
                self.pos += 1;
                columns.push(self.ident()?);
            }
            self.expect_tok(Tok::RParen, "')' after column list")?;
            Some(columns)
        } else {
            None
        };
        if self.eat_word("values") {
            let values_pos = self.here();
            self.expect_tok(Tok::LParen, "'(' after VALUES")?;
            let mut values = vec![self.literal()?];
            while self.peek() == Some(&Tok::Comma) {
                self.pos += 1;
                values.push(self.literal()?);
            }
            self.expect_tok(Tok::RParen, "')' after VALUES list")?;
            if self.peek() == Some(&Tok::Comma) {
                return Err(self.unsupported("multi-row VALUES"));
            }
            if let Some(columns) = &columns {
                if columns.len() != values.len() {
                    return Err(SqlError::Parse {
                        pos: values_pos,
                        message: format!(
                            "{} columns but {} values",
                            columns.len(),
                            values.len()
                        ),
                    });
                }
            }
            Ok(Insert { table, columns, source: InsertSource::Values(values) })
        } else if self.eat_word("select") {
            let select = self.select_body()?;
            Ok(Insert { table, columns, source: InsertSource::Select(select) })
        } else {
            self.reject_known_unsupported()?;
            Err(self.error("expected VALUES or SELECT"))
        }
    }

    fn update(&mut self) -> Result<Update, SqlError> {
        let table = self.ident()?;
        self.expect_word("set")?;
        let mut assignments = vec![self.assignment()?];
        while self.peek() == Some(&Tok::Comma) {
            self.pos += 1;
            assignments.push(self.assignment()?);
        }
        let where_clause = self.where_clause()?;
        Ok(Update { table, assignments, where_clause })
    }

    fn assignment(&mut self) -> Result<Assignment, SqlError> {
        let column = self.ident()?;
        self.expect_tok(Tok::Eq, "'=' in assignment")?;
        let value = if self.peek() == Some(&Tok::LParen) {
            self.pos += 1;
            self.expect_word("select")?;
            let select = self.select_body()?;
            self.reject_known_unsupported()?;
            self.expect_tok(Tok::RParen, "')' after subquery")?;
            AssignValue::Subquery(select)
        } else {
            AssignValue::Literal(self.literal()?)
        };
        Ok(Assignment { column, value })
    }

    fn delete(&mut self) -> Result<Delete, SqlError> {
        self.expect_word("from")?;
        let table = self.ident()?;
        let where_clause = self.where_clause()?;
        Ok(Delete { table, where_clause })
    }

    /// Parses a SELECT after its keyword. This body has no subquery slots,
    /// which is what limits nesting to one level.
    fn select_body(&mut self) -> Result<Select, SqlError> {
        if self.peek_word("distinct") {
            return Err(self.unsupported("DISTINCT"));
        }
        let items = if self.peek() == Some(&Tok::Star) {
            self.pos += 1;
            SelectItems::Star
        } else {
            let mut items = vec![self.select_item()?];
            while self.peek() == Some(&Tok::Comma) {
                self.pos += 1;
                items.push(self.select_item()?);
            }
            SelectItems::Items(items)
        };
        let from = if self.eat_word("from") { Some(self.ident()?) } else { None };
        let where_clause = self.where_clause()?;
        Ok(Select { items, from, where_clause })
    }

    fn select_item(&mut self) -> Result<SelectItem, SqlError> {
        if self.at_literal() {
            Ok(SelectItem::Literal(self.literal()?))
        } else {
            Ok(SelectItem::Column(self.column_ref()?))
        }
    }

    fn where_clause(&mut self) -> Result<Vec<Condition>, SqlError> {
        let mut conditions = Vec::new();
        if self.eat_word("where") {
            conditions.push(self.condition()?);
            while self.eat_word("and") {
                conditions.push(self.condition()?);
            }
        }
        Ok(conditions)
    }

    fn condition(&mut self) -> Result<Condition, SqlError> {
        let left = self.column_ref()?;
        if self.eat_word("is") {
            let negated = self.eat_word("not");
            self.expect_word("null")?;
            return Ok(Condition::IsNull { column: left, negated });
        }
        self.reject_known_unsupported()?;
        let op = match self.peek() {
            Some(Tok::Eq) => CmpOp::Eq,
            Some(Tok::Ne) => CmpOp::Ne,
            Some(Tok::Lt) => CmpOp::Lt,
            Some(Tok::Le) => CmpOp::Le,
            Some(Tok::Gt) => CmpOp::Gt,
            Some(Tok::Ge) => CmpOp::Ge,
            _ => return Err(self.error("expected a comparison operator")),
        };
        self.pos += 1;
        let right = if self.at_literal() {
            Operand::Literal(self.literal()?)
        } else {
            Operand::Column(self.column_ref()?)
        };
        Ok(Condition::Compare { left, op, right })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Statement {
        parse_sql(text).unwrap()
    }

    fn canonical(text: &str) -> String {
        parse(text).unparse()
    }

    #[test]
    fn insert_with_columns_and_values() {
        let stmt = parse("INSERT INTO page (id, touched) VALUES (7, '2007-10-01')");
        let Statement::Insert(insert) = &stmt else { panic!("not an insert") };
        assert_eq!(insert.table, Ident("page".into()));
        assert_eq!(
            insert.columns,
            Some(vec![Ident("id".into()), Ident("touched".into())])
        );
        assert_eq!(
            insert.source,
            InsertSource::Values(vec![
                Literal::Integer(7),
                Literal::String("2007-10-01".into())
            ])
        );
    }

    #[test]
    fn bare_select_parses() {
        assert!(parse("SELECT 1").is_select());
    }

    #[test]
    fn statements_outside_the_subset_are_named() {
        assert_eq!(
            parse_sql("GRANT ALL ON x"),
            Err(SqlError::Unsupported { pos: 0, construct: "GRANT".into() })
        );
        assert!(matches!(
            parse_sql("DROP TABLE page"),
            Err(SqlError::Unsupported { construct, .. }) if construct == "DROP"
        ));
    }

    #[test]
    fn canonical_form_is_stable() {
        let canon = "INSERT INTO page (id, touched) VALUES (7, '2007-10-01')";
        assert_eq!(canonical("insert   into PAGE(id,touched) values(7,'2007-10-01');"), canon);
        assert_eq!(canonical(canon), canon, "canonical text is a fixed point");
    }

    #[test]
    fn inequality_canonicalizes_to_angle_brackets() {
        assert_eq!(
            canonical("DELETE FROM t WHERE a != 1 AND b <> 2"),
            "DELETE FROM t WHERE a <> 1 AND b <> 2"
        );
    }

    #[test]
    fn update_with_subquery_roundtrips() {
        let canon = "UPDATE page SET touched = (SELECT ts FROM clock WHERE site = 1) WHERE id = 7";
        assert_eq!(canonical(canon), canon);
        let Statement::Update(update) = parse(canon) else { panic!() };
        assert!(matches!(update.assignments[0].value, AssignValue::Subquery(_)));
    }

    #[test]
    fn insert_select_roundtrips() {
        let canon = "INSERT INTO archive (id, title) SELECT id, title FROM page WHERE ns = 0";
        assert_eq!(canonical(canon), canon);
    }

    #[test]
    fn insert_without_column_list_parses() {
        let Statement::Insert(insert) = parse("INSERT INTO t VALUES (1, 2)") else { panic!() };
        assert_eq!(insert.columns, None);
        assert_eq!(canonical("INSERT INTO t VALUES (1, 2)"), "INSERT INTO t VALUES (1, 2)");
    }

    #[test]
    fn arity_mismatch_is_a_parse_error() {
        assert!(matches!(
            parse_sql("INSERT INTO t (a, b) VALUES (1)"),
            Err(SqlError::Parse { message, .. }) if message.contains("2 columns but 1 values")
        ));
    }

    #[test]
    fn where_grammar() {
        let canon = "SELECT * FROM page WHERE id >= 10 AND title = 'x' AND ns IS NOT NULL AND old.id IS NULL";
        assert_eq!(canonical(canon), canon);
    }

    #[test]
    fn comparisons_between_columns_parse() {
        assert_eq!(
            canonical("SELECT * FROM t WHERE a = b AND t.c < d"),
            "SELECT * FROM t WHERE a = b AND t.c < d"
        );
    }

    #[test]
    fn negative_and_float_literals() {
        assert_eq!(
            canonical("INSERT INTO t (a, b, c) VALUES (-5, 1.50, -2e3)"),
            "INSERT INTO t (a, b, c) VALUES (-5, 1.50, -2e3)"
        );
    }

    #[test]
    fn null_literal_and_keyword_case() {
        assert_eq!(
            canonical("update t set a = null where b is not null"),
            "UPDATE t SET a = NULL WHERE b IS NOT NULL"
        );
    }

    #[test]
    fn quoted_identifiers_survive() {
        assert_eq!(
            canonical("SELECT \"Weird Col\" FROM \"Page\""),
            "SELECT \"Weird Col\" FROM \"Page\""
        );
        // unquoted folds; quoted-lowercase collapses to bare
        assert_eq!(canonical("SELECT \"page\".\"id\" FROM page"), "SELECT page.id FROM page");
    }

    #[test]
    fn constructs_in_the_refusal_list_are_named() {
        for (text, construct) in [
            ("SELECT * FROM a JOIN b ON a.x = b.x", "JOIN"),
            ("SELECT * FROM t WHERE a = 1 OR b = 2", "OR"),
            ("SELECT * FROM t ORDER BY a", "ORDER BY"),
            ("SELECT * FROM t LIMIT 5", "LIMIT"),
            ("SELECT * FROM t WHERE a IN (1)", "IN"),
            ("SELECT * FROM t WHERE a LIKE 'x%'", "LIKE"),
            ("SELECT DISTINCT a FROM t", "DISTINCT"),
            ("INSERT INTO t (a) VALUES (1), (2)", "multi-row VALUES"),
        ] {
            match parse_sql(text) {
                Err(SqlError::Unsupported { construct: got, .. }) => {
                    assert_eq!(got, construct, "for {text}")
                }
                other => panic!("{text}: expected unsupported {construct}, got {other:?}"),
            }
        }
    }

    #[test]
    fn second_statement_is_rejected() {
        assert!(matches!(
            parse_sql("SELECT 1; SELECT 2"),
            Err(SqlError::Unsupported { construct, .. }) if construct == "multiple statements"
        ));
    }

    #[test]
    fn trailing_semicolon_is_dropped() {
        assert_eq!(canonical("SELECT 1;"), "SELECT 1");
    }

    #[test]
    fn parse_errors_carry_positions() {
        assert!(matches!(parse_sql(""), Err(SqlError::Parse { pos: 0, .. })));
        assert!(matches!(
            parse_sql("INSERT INTO t (a VALUES (1)"),
            Err(SqlError::Parse { pos: 17, .. })
        ));
        assert!(matches!(
            parse_sql("UPDATE t SET WHERE a = 1"),
            Err(SqlError::Parse { message, .. }) if message.contains("keyword WHERE")
        ));
    }

    #[test]
    fn nested_subqueries_are_impossible() {
        // the grammar gives subqueries no slot that could hold another
        assert!(parse_sql("UPDATE t SET a = (SELECT (SELECT 1) FROM x)").is_err());
    }
}
