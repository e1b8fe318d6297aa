//! Embedded SQL recovery.
//!
//! String literals are pulled out of source files, adjacent literals joined
//! across `+` and in-file constants folded in. Anything that cannot be
//! resolved statically becomes the [`FRAGMENT`] placeholder. Candidates that
//! start like a statement are parsed by a small SQL reader into
//! [`SqlStatement`]s, which drive schema inference and per-table access
//! counting.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::lexer::{self, Token, TokenKind};

/// Stands in for any part of a query that could not be resolved statically.
pub const FRAGMENT: &str = "?fragment?";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dialect {
    #[default]
    Generic,
    Sqlite,
    Mysql,
    Postgres,
}

impl Dialect {
    fn quotes(self) -> &'static [(char, char)] {
        match self {
            Dialect::Generic => &[('"', '"'), ('`', '`')],
            Dialect::Sqlite => &[('"', '"'), ('`', '`'), ('[', ']')],
            Dialect::Mysql => &[('`', '`'), ('"', '"')],
            Dialect::Postgres => &[('"', '"')],
        }
    }
}

impl std::str::FromStr for Dialect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "generic" => Ok(Dialect::Generic),
            "sqlite" => Ok(Dialect::Sqlite),
            "mysql" => Ok(Dialect::Mysql),
            "postgres" | "postgresql" => Ok(Dialect::Postgres),
            other => Err(format!("unknown database type `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SqlCandidate {
    pub text: String,
    pub line: u32,
    /// Some part of the text could not be resolved.
    pub has_fragment: bool,
}

fn statement_start() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^(select|insert|update|delete|create\s+table|alter\s+table|drop\s+table)\b").unwrap()
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    /// Constant defined outside the file: `Class.NAME` or a bare `NAME`.
    Ref(String),
    Fragment,
}

/// A string expression of one file whose references to other files are still open.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SqlTemplate {
    pieces: Vec<Piece>,
    pub line: u32,
}

/// What one source file contributes to SQL recovery.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FileSql {
    pub templates: Vec<SqlTemplate>,
    /// String constants with a fully literal value, keyed `Class.NAME`.
    pub constants: Vec<(String, String)>,
}

/// String constants visible project-wide in one snapshot. A name bound to
/// different values in different places resolves to nothing.
#[derive(Debug, Clone, Default)]
pub struct ConstantTable {
    qualified: HashMap<String, Option<String>>,
    simple: HashMap<String, Option<String>>,
}

impl ConstantTable {
    pub fn from_files<'a, I: IntoIterator<Item = &'a FileSql>>(files: I) -> Self {
        let mut table = ConstantTable::default();
        for f in files {
            for (q, v) in &f.constants {
                merge(&mut table.qualified, q, v);
                merge(&mut table.simple, q.rsplit('.').next().unwrap_or(q), v);
            }
        }
        table
    }

    pub fn is_empty(&self) -> bool {
        self.qualified.is_empty()
    }

    fn resolve(&self, name: &str) -> Option<&str> {
        let map = if name.contains('.') { &self.qualified } else { &self.simple };
        map.get(name)?.as_deref()
    }
}

fn merge(map: &mut HashMap<String, Option<String>>, key: &str, value: &str) {
    match map.get_mut(key) {
        Some(slot) => {
            if slot.as_deref() != Some(value) {
                *slot = None;
            }
        }
        None => {
            map.insert(key.to_string(), Some(value.to_string()));
        }
    }
}

impl FileSql {
    /// Statement-like strings after resolving open references against `constants`.
    pub fn candidates(&self, constants: &ConstantTable) -> Vec<SqlCandidate> {
        let mut out = Vec::new();
        for t in &self.templates {
            let mut s = String::new();
            let mut has_fragment = false;
            for p in &t.pieces {
                match p {
                    Piece::Text(x) => s.push_str(x),
                    Piece::Ref(r) => match constants.resolve(r) {
                        Some(v) => s.push_str(v),
                        None => {
                            has_fragment = true;
                            s.push_str(FRAGMENT);
                        }
                    },
                    Piece::Fragment => {
                        has_fragment = true;
                        s.push_str(FRAGMENT);
                    }
                }
            }
            let trimmed = s.trim();
            if statement_start().is_match(trimmed) {
                out.push(SqlCandidate { text: trimmed.to_string(), line: t.line, has_fragment });
            }
        }
        out
    }
}

/// Collects SQL-looking string expressions from Java-family source, using in-file constants only.
pub fn extract_sql_strings(content: &[u8]) -> Vec<SqlCandidate> {
    scan_file(content).candidates(&ConstantTable::default())
}

/// Tokenizes a file once and keeps its string expressions and exported constants.
pub fn scan_file(content: &[u8]) -> FileSql {
    let text = String::from_utf8_lossy(content);
    let tokens = lexer::lex(&text).tokens;
    let mut ctx = Ctx::new(&tokens);
    ctx.fold_constants();

    let mut templates = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let Some((pieces, line, next)) = ctx.concat_chain(i) else {
            i += 1;
            continue;
        };
        i = next.max(i + 1);
        if worth_keeping(&pieces) {
            templates.push(SqlTemplate { pieces, line });
        }
    }

    let mut constants = Vec::new();
    for ((scope, name), pieces) in &ctx.known {
        let Some(scope) = scope else { continue };
        let literal: Option<String> = pieces
            .iter()
            .map(|p| match p {
                Piece::Text(t) => Some(t.as_str()),
                _ => None,
            })
            .collect();
        if let Some(v) = literal {
            constants.push((format!("{}.{}", ctx.scope_names[*scope], name), v));
        }
    }
    constants.sort();
    constants.dedup();
    FileSql { templates, constants }
}

/// Keeps expressions that already read as a statement or that start with an open reference.
fn worth_keeping(pieces: &[Piece]) -> bool {
    let mut s = String::new();
    for p in pieces {
        match p {
            Piece::Text(t) => s.push_str(t),
            Piece::Ref(_) if s.trim().is_empty() => return true,
            _ => s.push_str(FRAGMENT),
        }
    }
    statement_start().is_match(s.trim())
}

enum Lookup<'a> {
    Found(&'a [Piece]),
    /// Defined once in this file but not folded yet.
    Pending,
    Unknown,
}

struct Ctx<'a> {
    tokens: &'a [Token],
    scope_names: Vec<String>,
    scope_parent: Vec<Option<usize>>,
    token_scope: Vec<Option<usize>>,
    /// (scope, name) → value start index, for names assigned exactly once
    defs: HashMap<(Option<usize>, String), usize>,
    known: BTreeMap<(Option<usize>, String), Vec<Piece>>,
}

impl<'a> Ctx<'a> {
    fn new(tokens: &'a [Token]) -> Self {
        let mut scope_names = Vec::new();
        let mut scope_parent = Vec::new();
        let mut token_scope = Vec::with_capacity(tokens.len());
        let mut stack: Vec<(usize, usize)> = Vec::new();
        let mut depth = 0usize;
        let mut pending: Option<String> = None;
        for (i, t) in tokens.iter().enumerate() {
            let current = stack.last().map(|s| s.0);
            if t.kind == TokenKind::Ident
                && matches!(t.text.as_str(), "class" | "interface" | "enum" | "record")
                && !(i > 0 && tokens[i - 1].is_punct("."))
            {
                if let Some(n) = tokens.get(i + 1).filter(|n| n.kind == TokenKind::Ident) {
                    pending = Some(n.text.clone());
                }
            } else if t.is_punct("{") {
                depth += 1;
                if let Some(name) = pending.take() {
                    scope_names.push(name);
                    scope_parent.push(current);
                    stack.push((scope_names.len() - 1, depth));
                }
            } else if t.is_punct("}") {
                if stack.last().is_some_and(|s| s.1 == depth) {
                    stack.pop();
                }
                depth = depth.saturating_sub(1);
            } else if t.is_punct(";") {
                pending = None;
            }
            token_scope.push(current);
        }

        let mut counts: HashMap<(Option<usize>, String), (usize, usize)> = HashMap::new();
        for i in 1..tokens.len().saturating_sub(1) {
            if tokens[i].is_punct("=") && tokens[i - 1].kind == TokenKind::Ident {
                let e = counts.entry((token_scope[i], tokens[i - 1].text.clone())).or_insert((0, i + 1));
                e.0 += 1;
            }
        }
        // a name assigned more than once is not a constant
        let defs = counts.into_iter().filter(|(_, (n, _))| *n == 1).map(|(k, (_, start))| (k, start)).collect();
        Ctx { tokens, scope_names, scope_parent, token_scope, defs, known: BTreeMap::new() }
    }

    fn fold_constants(&mut self) {
        let mut defs: Vec<_> = self.defs.iter().map(|(k, &v)| (k.clone(), v)).collect();
        defs.sort();
        loop {
            let mut progressed = false;
            for (key, start) in &defs {
                if self.known.contains_key(key) {
                    continue;
                }
                let Some((pieces, _, end)) = self.chain(*start, true) else { continue };
                let terminated = self.tokens.get(end).is_some_and(|t| t.is_punct(";") || t.is_punct(","));
                if !terminated || pieces.contains(&Piece::Fragment) {
                    continue;
                }
                self.known.insert(key.clone(), pieces);
                progressed = true;
            }
            if !progressed {
                return;
            }
        }
    }

    fn lookup_in(&self, scope: Option<usize>, name: &str) -> Lookup<'_> {
        let key = (scope, name.to_string());
        match self.known.get(&key) {
            Some(p) => Lookup::Found(p),
            None if self.defs.contains_key(&key) => Lookup::Pending,
            None => Lookup::Unknown,
        }
    }

    fn lookup_unqualified(&self, mut scope: Option<usize>, name: &str) -> Lookup<'_> {
        loop {
            match self.lookup_in(scope, name) {
                Lookup::Unknown => {}
                found => return found,
            }
            match scope {
                Some(s) => scope = self.scope_parent[s],
                None => return Lookup::Unknown,
            }
        }
    }

    fn lookup_qualified(&self, qualifier: &str, name: &str) -> Lookup<'_> {
        let mut hit = Lookup::Unknown;
        let mut hits = 0;
        for (s, n) in self.scope_names.iter().enumerate() {
            if n == qualifier {
                match self.lookup_in(Some(s), name) {
                    Lookup::Unknown => {}
                    l => {
                        hit = l;
                        hits += 1;
                    }
                }
            }
        }
        if hits > 1 {
            Lookup::Unknown
        } else {
            hit
        }
    }

    /// Pieces for the identifier chain `tokens[j..=k]` used as a string operand.
    /// `None` means a same-file constant that is not folded yet.
    fn operand(&self, j: usize, k: usize) -> Option<Vec<Piece>> {
        let name = &self.tokens[k].text;
        let qualifier = (k > j).then(|| self.tokens[k - 2].text.as_str()).filter(|q| *q != "this");
        let lookup = match qualifier {
            Some(q) => self.lookup_qualified(q, name),
            None => self.lookup_unqualified(self.token_scope[k], name),
        };
        match lookup {
            Lookup::Found(p) => Some(p.to_vec()),
            Lookup::Pending => None,
            Lookup::Unknown => Some(vec![match qualifier {
                Some(q) if q.starts_with(|c: char| c.is_ascii_uppercase()) => Piece::Ref(format!("{q}.{name}")),
                None if is_constant_name(name) => Piece::Ref(name.clone()),
                _ => Piece::Fragment,
            }]),
        }
    }

    fn concat_chain(&self, i: usize) -> Option<(Vec<Piece>, u32, usize)> {
        self.chain(i, false)
    }

    /// Parses `operand (+ operand)*` starting at `i`. Returns the pieces, the
    /// line of the first literal and the index after the chain, or `None` when
    /// the chain holds no string literal. While folding, a chain using a
    /// constant that is not folded yet also yields `None`.
    fn chain(&self, i: usize, folding: bool) -> Option<(Vec<Piece>, u32, usize)> {
        let tokens = self.tokens;
        let mut pieces = Vec::new();
        let mut line = None;
        let mut j = i;
        let mut first = true;
        let mut operands = 0;
        loop {
            let t = tokens.get(j)?;
            operands += 1;
            match t.kind {
                TokenKind::Str => {
                    line.get_or_insert(t.line);
                    pieces.push(Piece::Text(t.text.clone()));
                    j += 1;
                }
                TokenKind::Char | TokenKind::Number => {
                    pieces.push(Piece::Text(t.text.clone()));
                    j += 1;
                }
                TokenKind::Ident => {
                    let mut k = j;
                    while tokens.get(k + 1).is_some_and(|t| t.is_punct("."))
                        && tokens.get(k + 2).is_some_and(|t| t.kind == TokenKind::Ident)
                    {
                        k += 2;
                    }
                    let is_call = tokens.get(k + 1).is_some_and(|t| t.is_punct("("));
                    if is_call {
                        // at the head of a chain a call is not an operand: its arguments may hold the literal
                        if first {
                            return None;
                        }
                        k = skip_group(tokens, k + 1)?;
                        while tokens.get(k + 1).is_some_and(|t| t.is_punct(".")) {
                            k += 2;
                            if tokens.get(k + 1).is_some_and(|t| t.is_punct("(")) {
                                k = skip_group(tokens, k + 1)?;
                            }
                        }
                        pieces.push(Piece::Fragment);
                    } else {
                        match self.operand(j, k) {
                            Some(p) => {
                                if p.iter().any(|x| matches!(x, Piece::Text(_))) {
                                    line.get_or_insert(tokens[j].line);
                                }
                                pieces.extend(p);
                            }
                            None if folding => return None,
                            None => pieces.push(Piece::Fragment),
                        }
                    }
                    j = k + 1;
                }
                TokenKind::Punct if t.text == "(" && !first => {
                    pieces.push(Piece::Fragment);
                    j = skip_group(tokens, j)? + 1;
                }
                TokenKind::Punct => {
                    if first {
                        return None;
                    }
                    // dangling `+`: the chain ends before it
                    j -= 1;
                    break;
                }
            }
            first = false;
            if tokens.get(j).is_some_and(|t| t.is_punct("+")) {
                j += 1;
            } else {
                break;
            }
        }
        // a lone name is a use of a constant, not a new expression
        if operands == 1 && tokens[i].kind == TokenKind::Ident && !folding {
            return None;
        }
        if line.is_none() && pieces.iter().any(|p| matches!(p, Piece::Ref(_))) && pieces.iter().any(|p| matches!(p, Piece::Text(_))) {
            line = Some(tokens[i].line);
        }
        line.map(|l| (pieces, l, j))
    }
}

/// `UPPER_SNAKE` names are taken as constants even when defined elsewhere.
fn is_constant_name(name: &str) -> bool {
    name.chars().any(|c| c.is_ascii_uppercase())
        && name.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

/// Index of the `)` matching the `(` at `open`.
fn skip_group(tokens: &[Token], open: usize) -> Option<usize> {
    let mut depth = 0;
    for (k, t) in tokens.iter().enumerate().skip(open) {
        if t.is_punct("(") {
            depth += 1;
        } else if t.is_punct(")") {
            depth -= 1;
            if depth == 0 {
                return Some(k);
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StatementKind {
    CreateTable,
    Select,
    Insert,
    Update,
    Delete,
    AlterTable,
    DropTable,
    Other,
}

impl StatementKind {
    pub fn is_access(self) -> bool {
        matches!(self, StatementKind::Select | StatementKind::Insert | StatementKind::Update | StatementKind::Delete)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub declared_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SqlStatement {
    pub kind: StatementKind,
    pub tables: Vec<String>,
    /// Column definitions for `CREATE TABLE` and `ALTER TABLE ... ADD COLUMN`.
    pub columns: Vec<Column>,
    pub path: String,
    pub line: u32,
    /// Built from a candidate with unresolved parts.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub has_fragment: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum SqlTok {
    Word(String),
    Quoted(String),
    Fragment,
    Sym(char),
}

fn sql_tokens(text: &str, dialect: Dialect) -> Vec<SqlTok> {
    let quotes = dialect.quotes();
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if text_at(&chars, i, FRAGMENT) {
            out.push(SqlTok::Fragment);
            i += FRAGMENT.chars().count();
        } else if c == '-' && chars.get(i + 1) == Some(&'-') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
        } else if c == '\'' {
            // string value: skip ('' escapes a quote)
            i += 1;
            while i < chars.len() {
                if chars[i] == '\'' {
                    if chars.get(i + 1) == Some(&'\'') {
                        i += 2;
                        continue;
                    }
                    break;
                }
                i += 1;
            }
            i += 1;
            out.push(SqlTok::Sym('\''));
        } else if let Some(&(_, close)) = quotes.iter().find(|(open, _)| *open == c) {
            let start = i + 1;
            let mut end = start;
            while end < chars.len() && chars[end] != close {
                end += 1;
            }
            out.push(SqlTok::Quoted(chars[start..end.min(chars.len())].iter().collect()));
            i = end + 1;
        } else if c.is_alphanumeric() || c == '_' || c == '$' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '$') {
                i += 1;
            }
            out.push(SqlTok::Word(chars[start..i].iter().collect()));
        } else {
            out.push(SqlTok::Sym(c));
            i += 1;
        }
    }
    out
}

fn text_at(chars: &[char], i: usize, pat: &str) -> bool {
    pat.chars().enumerate().all(|(k, p)| chars.get(i + k) == Some(&p))
}

struct SqlReader {
    toks: Vec<SqlTok>,
    pos: usize,
}

const RESERVED: &[&str] = &[
    "where", "join", "inner", "left", "right", "outer", "cross", "natural", "full", "on", "using", "group", "order",
    "having", "limit", "offset", "union", "except", "intersect", "set", "values", "as", "select", "from", "into",
    "default", "window",
];

impl SqlReader {
    fn peek(&self) -> Option<&SqlTok> {
        self.toks.get(self.pos)
    }

    fn keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(SqlTok::Word(w)) if w.eq_ignore_ascii_case(kw))
    }

    fn eat(&mut self, kw: &str) -> bool {
        if self.keyword(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_sym(&mut self, c: char) -> bool {
        if self.peek() == Some(&SqlTok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    /// `[schema.]name` → lower-cased last component.
    fn name(&mut self) -> Option<String> {
        let mut last = self.name_part()?;
        while self.peek() == Some(&SqlTok::Sym('.')) {
            self.pos += 1;
            last = self.name_part()?;
        }
        Some(last)
    }

    fn name_part(&mut self) -> Option<String> {
        let n = match self.peek()? {
            SqlTok::Word(w) if !RESERVED.contains(&w.to_ascii_lowercase().as_str()) => w.to_ascii_lowercase(),
            SqlTok::Quoted(q) if !q.is_empty() => q.to_lowercase(),
            SqlTok::Fragment => FRAGMENT.to_string(),
            _ => return None,
        };
        self.pos += 1;
        Some(n)
    }

    fn skip_alias(&mut self) {
        if self.eat("as") {
            self.name_part();
        } else if let Some(SqlTok::Word(w)) = self.peek() {
            if !RESERVED.contains(&w.to_ascii_lowercase().as_str()) {
                self.pos += 1;
            }
        } else if let Some(SqlTok::Quoted(_)) = self.peek() {
            self.pos += 1;
        }
    }
}

pub fn parse_sql(text: &str) -> SqlStatement {
    parse_sql_dialect(text, Dialect::Generic)
}

pub fn parse_sql_dialect(text: &str, dialect: Dialect) -> SqlStatement {
    let mut r = SqlReader { toks: sql_tokens(text, dialect), pos: 0 };
    let (kind, tables, columns) = parse_statement(&mut r).unwrap_or((StatementKind::Other, Vec::new(), Vec::new()));
    let (kind, tables, columns) = if kind != StatementKind::Other && tables.is_empty() {
        (StatementKind::Other, Vec::new(), Vec::new())
    } else {
        (kind, tables, columns)
    };
    SqlStatement {
        kind,
        tables,
        columns,
        path: String::new(),
        line: 0,
        has_fragment: text.contains(FRAGMENT),
    }
}

type Parsed = (StatementKind, Vec<String>, Vec<Column>);

fn parse_statement(r: &mut SqlReader) -> Option<Parsed> {
    if r.eat("select") {
        let tables = from_tables(r);
        return Some((StatementKind::Select, tables, Vec::new()));
    }
    if r.eat("insert") {
        skip_conflict_clause(r);
        if !r.eat("into") {
            return None;
        }
        return Some((StatementKind::Insert, vec![r.name()?], Vec::new()));
    }
    if r.eat("update") {
        skip_conflict_clause(r);
        let t = r.name()?;
        return Some((StatementKind::Update, vec![t], Vec::new()));
    }
    if r.eat("delete") {
        if !r.eat("from") {
            return None;
        }
        return Some((StatementKind::Delete, vec![r.name()?], Vec::new()));
    }
    if r.eat("create") {
        let _ = r.eat("temp") || r.eat("temporary");
        if !r.eat("table") {
            return None;
        }
        skip_if_exists(r);
        let name = r.name()?;
        if !r.eat_sym('(') {
            return None;
        }
        let columns = column_defs(r)?;
        return Some((StatementKind::CreateTable, vec![name], columns));
    }
    if r.eat("alter") {
        if !r.eat("table") {
            return None;
        }
        let name = r.name()?;
        let mut columns = Vec::new();
        if r.eat("add") {
            r.eat("column");
            if r.keyword("constraint") || r.keyword("primary") || r.keyword("unique") || r.keyword("foreign") {
                return Some((StatementKind::AlterTable, vec![name], columns));
            }
            let col = r.name_part()?;
            let declared_type = type_text(r);
            columns.push(Column { name: col, declared_type });
        }
        return Some((StatementKind::AlterTable, vec![name], columns));
    }
    if r.eat("drop") {
        if !r.eat("table") {
            return None;
        }
        skip_if_exists(r);
        return Some((StatementKind::DropTable, vec![r.name()?], Vec::new()));
    }
    None
}

fn skip_conflict_clause(r: &mut SqlReader) {
    if r.eat("or") {
        r.pos += 1;
    }
}

fn skip_if_exists(r: &mut SqlReader) {
    let save = r.pos;
    if r.eat("if") {
        r.eat("not");
        if !r.eat("exists") {
            r.pos = save;
        }
    }
}

/// Tables named after every FROM and JOIN, subqueries included.
fn from_tables(r: &mut SqlReader) -> Vec<String> {
    let mut tables: Vec<String> = Vec::new();
    let push = |t: String, tables: &mut Vec<String>| {
        if !tables.contains(&t) {
            tables.push(t);
        }
    };
    while r.pos < r.toks.len() {
        if r.eat("from") {
            loop {
                if r.peek() == Some(&SqlTok::Sym('(')) {
                    break;
                }
                match r.name() {
                    Some(t) => push(t, &mut tables),
                    None => break,
                }
                r.skip_alias();
                if !r.eat_sym(',') {
                    break;
                }
            }
        } else if r.eat("join") {
            if let Some(t) = r.name() {
                push(t, &mut tables);
                r.skip_alias();
            }
        } else {
            r.pos += 1;
        }
    }
    tables
}

const CONSTRAINT_WORDS: &[&str] = &[
    "primary", "not", "null", "default", "unique", "references", "check", "collate", "autoincrement", "constraint",
    "generated", "on", "auto_increment",
];

/// Column definitions up to the closing parenthesis of `CREATE TABLE (...)`.
fn column_defs(r: &mut SqlReader) -> Option<Vec<Column>> {
    let mut columns: Vec<Column> = Vec::new();
    loop {
        let table_constraint = ["primary", "foreign", "unique", "check", "constraint"].iter().any(|k| r.keyword(k));
        if table_constraint {
            skip_to_comma(r);
        } else {
            let name = r.name_part()?;
            let declared_type = type_text(r);
            skip_to_comma(r);
            if !columns.iter().any(|c| c.name == name) {
                columns.push(Column { name, declared_type });
            }
        }
        if r.eat_sym(',') {
            continue;
        }
        if r.eat_sym(')') {
            return Some(columns);
        }
        return None;
    }
}

/// Type words after a column name, e.g. `VARCHAR(255)` or `DOUBLE PRECISION`.
fn type_text(r: &mut SqlReader) -> String {
    let mut parts: Vec<String> = Vec::new();
    while let Some(t) = r.peek().cloned() {
        match t {
            SqlTok::Word(w) if !CONSTRAINT_WORDS.contains(&w.to_ascii_lowercase().as_str()) => {
                parts.push(w.to_ascii_uppercase());
                r.pos += 1;
            }
            SqlTok::Sym('(') if !parts.is_empty() => {
                let mut args = String::from("(");
                r.pos += 1;
                while let Some(t) = r.peek().cloned() {
                    r.pos += 1;
                    match t {
                        SqlTok::Sym(')') => break,
                        SqlTok::Word(w) => args.push_str(&w),
                        SqlTok::Sym(c) => args.push(c),
                        _ => {}
                    }
                }
                args.push(')');
                if let Some(last) = parts.last_mut() {
                    last.push_str(&args);
                }
            }
            _ => break,
        }
    }
    parts.join(" ")
}

fn skip_to_comma(r: &mut SqlReader) {
    let mut depth = 0;
    while let Some(t) = r.peek().cloned() {
        match t {
            SqlTok::Sym('(') => depth += 1,
            SqlTok::Sym(')') if depth == 0 => return,
            SqlTok::Sym(')') => depth -= 1,
            SqlTok::Sym(',') if depth == 0 => return,
            _ => {}
        }
        r.pos += 1;
    }
}

/// Extracts and parses every embedded statement of one source file.
pub fn statements_in_file(path: &str, content: &[u8], dialect: Dialect) -> Vec<SqlStatement> {
    parse_candidates(path, extract_sql_strings(content), dialect)
}

pub fn parse_candidates(path: &str, candidates: Vec<SqlCandidate>, dialect: Dialect) -> Vec<SqlStatement> {
    candidates
        .into_iter()
        .map(|c| {
            let mut s = parse_sql_dialect(&c.text, dialect);
            s.path = path.to_string();
            s.line = c.line;
            s.has_fragment |= c.has_fragment;
            s
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<Column>,
    /// Ordinal of the first snapshot that defined (or used) the table.
    pub created_at: u32,
    /// Ordinal of the latest drop, cleared by a re-creation.
    pub dropped_at: Option<u32>,
    /// Alive ranges `[from, to)`; `to == None` means alive at the last analyzed commit.
    pub lifetimes: Vec<(u32, Option<u32>)>,
    /// Only referenced by DML so far; no definition seen.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub inferred_by_use: bool,
}

impl TableSchema {
    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn alive_at(&self, ordinal: u32) -> bool {
        self.lifetimes.iter().any(|&(from, to)| ordinal >= from && to.is_none_or(|t| ordinal < t))
    }
}

/// Schema state folded commit by commit.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaState {
    pub tables: BTreeMap<String, TableSchema>,
}

fn usable(name: &str) -> bool {
    !name.contains(FRAGMENT)
}

/// Folds the statements found in one full snapshot into the running schema.
///
/// Within a snapshot, definitions apply first, then added columns, then drops;
/// a table both created and dropped in the same snapshot stays alive (the
/// usual drop-and-recreate upgrade idiom). DML naming an unknown or dropped
/// table materializes it with no known columns.
pub fn infer_schema(statements: &[SqlStatement], previous: &SchemaState, ordinal: u32) -> SchemaState {
    let mut state = previous.clone();
    let usable_stmts = || statements.iter().filter(|s| s.tables.iter().all(|t| usable(t)));

    let mut created: BTreeMap<&str, Vec<Column>> = BTreeMap::new();
    for s in usable_stmts().filter(|s| s.kind == StatementKind::CreateTable && !s.has_fragment) {
        let cols = created.entry(s.tables[0].as_str()).or_default();
        for c in &s.columns {
            if !cols.iter().any(|x| x.name == c.name) {
                cols.push(c.clone());
            }
        }
    }
    for (name, cols) in &created {
        let t = state.tables.entry(name.to_string()).or_insert_with(|| TableSchema {
            name: name.to_string(),
            columns: Vec::new(),
            created_at: ordinal,
            dropped_at: None,
            lifetimes: Vec::new(),
            inferred_by_use: false,
        });
        t.columns = cols.clone();
        t.inferred_by_use = false;
        revive(t, ordinal);
    }

    for s in usable_stmts().filter(|s| s.kind == StatementKind::AlterTable && !s.has_fragment) {
        if let Some(t) = state.tables.get_mut(&s.tables[0]) {
            for c in &s.columns {
                if !t.columns.iter().any(|x| x.name == c.name) {
                    t.columns.push(c.clone());
                }
            }
        }
    }

    for s in usable_stmts().filter(|s| s.kind == StatementKind::DropTable) {
        let name = &s.tables[0];
        if created.contains_key(name.as_str()) {
            continue;
        }
        if let Some(t) = state.tables.get_mut(name) {
            if t.alive_at(ordinal) {
                t.dropped_at = Some(ordinal);
                if let Some(last) = t.lifetimes.last_mut() {
                    last.1 = Some(ordinal);
                }
            }
        }
    }

    for s in usable_stmts().filter(|s| s.kind.is_access()) {
        for name in &s.tables {
            let t = state.tables.entry(name.clone()).or_insert_with(|| TableSchema {
                name: name.clone(),
                columns: Vec::new(),
                created_at: ordinal,
                dropped_at: None,
                lifetimes: Vec::new(),
                inferred_by_use: true,
            });
            if !t.alive_at(ordinal) && t.dropped_at != Some(ordinal) {
                revive(t, ordinal);
            }
        }
    }
    state
}

fn revive(t: &mut TableSchema, ordinal: u32) {
    let alive = t.lifetimes.last().is_some_and(|l| l.1.is_none());
    if !alive {
        t.lifetimes.push((ordinal, None));
        t.dropped_at = None;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AccessKind {
    Select,
    Insert,
    Update,
    Delete,
}

impl AccessKind {
    fn from_statement(k: StatementKind) -> Option<Self> {
        Some(match k {
            StatementKind::Select => AccessKind::Select,
            StatementKind::Insert => AccessKind::Insert,
            StatementKind::Update => AccessKind::Update,
            StatementKind::Delete => AccessKind::Delete,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TableAccess {
    pub table: String,
    /// Accessing artifact id.
    pub artifact: String,
    pub path: String,
    pub line: u32,
    pub kind: AccessKind,
    pub ordinal: u32,
}

/// One access per (statement, table) pair. `artifact_of` maps a source path
/// alive at `ordinal` to its artifact id; statements from unknown paths are skipped.
pub fn count_accesses<F>(statements: &[SqlStatement], ordinal: u32, artifact_of: F) -> (Vec<TableAccess>, BTreeMap<String, u32>)
where
    F: Fn(&str) -> Option<String>,
{
    let mut accesses = Vec::new();
    let mut totals: BTreeMap<String, u32> = BTreeMap::new();
    for s in statements {
        let Some(kind) = AccessKind::from_statement(s.kind) else { continue };
        let Some(artifact) = artifact_of(&s.path) else { continue };
        for table in s.tables.iter().filter(|t| usable(t)) {
            accesses.push(TableAccess {
                table: table.clone(),
                artifact: artifact.clone(),
                path: s.path.clone(),
                line: s.line,
                kind,
                ordinal,
            });
            *totals.entry(table.clone()).or_default() += 1;
        }
    }
    accesses.sort();
    (accesses, totals)
}
