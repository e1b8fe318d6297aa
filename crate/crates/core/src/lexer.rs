//! Tokenizer for Java-family source text.
//!
//! Comments are dropped, string and char literals become single tokens with
//! their decoded contents. Both the source metrics and the embedded SQL
//! extraction work on this token stream, so neither ever sees text that
//! lives inside a comment.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Ident,
    Number,
    Str,
    Char,
    Punct,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    /// Identifier/number/punctuation text, or the decoded literal value.
    pub text: String,
    /// 1-based line of the first character.
    pub line: u32,
    /// 1-based line of the last character (differs from `line` for text blocks).
    pub end_line: u32,
}

impl Token {
    pub fn is_punct(&self, p: &str) -> bool {
        self.kind == TokenKind::Punct && self.text == p
    }

    pub fn is_ident(&self, name: &str) -> bool {
        self.kind == TokenKind::Ident && self.text == name
    }
}

#[derive(Debug, Clone, Default)]
pub struct Lexed {
    pub tokens: Vec<Token>,
    /// Number of physical lines in the input.
    pub line_count: u32,
    /// A block comment or text block ran to end of input.
    pub unterminated: bool,
}

impl Lexed {
    /// Lines (1-based) that carry at least one token.
    pub fn code_lines(&self) -> Vec<bool> {
        let mut lines = vec![false; self.line_count as usize + 2];
        for tok in &self.tokens {
            for l in tok.line..=tok.end_line {
                lines[l as usize] = true;
            }
        }
        lines
    }

    pub fn loc(&self) -> u32 {
        self.code_lines().iter().filter(|&&b| b).count() as u32
    }
}

pub fn lex(src: &str) -> Lexed {
    Lexer::new(src).run()
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
    line: u32,
    out: Lexed,
}

impl Lexer {
    fn new(src: &str) -> Self {
        Lexer { chars: src.chars().collect(), pos: 0, line: 1, out: Lexed::default() }
    }

    fn peek(&self, off: usize) -> Option<char> {
        self.chars.get(self.pos + off).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.get(self.pos).copied()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
        }
        Some(c)
    }

    fn push(&mut self, kind: TokenKind, text: String, line: u32) {
        self.out.tokens.push(Token { kind, text, line, end_line: self.line });
    }

    fn run(mut self) -> Lexed {
        while let Some(c) = self.peek(0) {
            let line = self.line;
            match c {
                '\n' | ' ' | '\t' | '\r' | '\u{c}' => {
                    self.bump();
                }
                '/' if self.peek(1) == Some('/') => {
                    while let Some(c) = self.peek(0) {
                        if c == '\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                '/' if self.peek(1) == Some('*') => {
                    self.pos += 2;
                    loop {
                        match self.peek(0) {
                            None => {
                                self.out.unterminated = true;
                                break;
                            }
                            Some('*') if self.peek(1) == Some('/') => {
                                self.pos += 2;
                                break;
                            }
                            _ => {
                                self.bump();
                            }
                        }
                    }
                }
                '"' if self.peek(1) == Some('"') && self.peek(2) == Some('"') => {
                    self.pos += 3;
                    let text = self.text_block();
                    self.out.tokens.push(Token { kind: TokenKind::Str, text, line, end_line: self.line });
                }
                '"' => {
                    self.bump();
                    let text = self.quoted('"');
                    self.push(TokenKind::Str, text, line);
                }
                '\'' => {
                    self.bump();
                    let text = self.quoted('\'');
                    self.push(TokenKind::Char, text, line);
                }
                c if c.is_alphabetic() || c == '_' || c == '$' => {
                    let mut s = String::new();
                    while let Some(c) = self.peek(0) {
                        if c.is_alphanumeric() || c == '_' || c == '$' {
                            s.push(c);
                            self.pos += 1;
                        } else {
                            break;
                        }
                    }
                    self.push(TokenKind::Ident, s, line);
                }
                c if c.is_ascii_digit() => {
                    let mut s = String::new();
                    while let Some(c) = self.peek(0) {
                        if c.is_alphanumeric() || c == '_' || c == '.' {
                            s.push(c);
                            self.pos += 1;
                        } else {
                            break;
                        }
                    }
                    self.push(TokenKind::Number, s, line);
                }
                _ => {
                    self.pos += 1;
                    let next = self.peek(0);
                    let two = matches!(
                        (c, next),
                        ('+', Some('+' | '='))
                            | ('-', Some('-' | '=' | '>'))
                            | ('=' | '!' | '<' | '>' | '*' | '/' | '%' | '&' | '|' | '^', Some('='))
                            | ('&', Some('&'))
                            | ('|', Some('|'))
                            | (':', Some(':'))
                    );
                    let mut s = c.to_string();
                    if two {
                        s.push(next.unwrap());
                        self.pos += 1;
                    }
                    self.push(TokenKind::Punct, s, line);
                }
            }
        }
        self.out.line_count = self.line;
        if self.chars.last() == Some(&'\n') {
            self.out.line_count -= 1;
        }
        self.out
    }

    /// Reads a single-line literal body after the opening quote.
    fn quoted(&mut self, quote: char) -> String {
        let mut s = String::new();
        while let Some(c) = self.peek(0) {
            match c {
                '\n' => break,
                '\\' => {
                    self.pos += 1;
                    if let Some(e) = self.peek(0) {
                        if e == '\n' {
                            break;
                        }
                        self.pos += 1;
                        s.push(unescape(e));
                    }
                }
                c if c == quote => {
                    self.pos += 1;
                    break;
                }
                c => {
                    self.pos += 1;
                    s.push(c);
                }
            }
        }
        s
    }

    fn text_block(&mut self) -> String {
        let mut s = String::new();
        loop {
            match self.peek(0) {
                None => {
                    self.out.unterminated = true;
                    break;
                }
                Some('"') if self.peek(1) == Some('"') && self.peek(2) == Some('"') => {
                    self.pos += 3;
                    break;
                }
                Some('\\') => {
                    self.bump();
                    if let Some(e) = self.bump() {
                        s.push(unescape(e));
                    }
                }
                Some(_) => {
                    let c = self.bump().unwrap();
                    s.push(c);
                }
            }
        }
        // the opening line break is not part of the value; incidental indentation is stripped
        let body = s.trim_start_matches([' ', '\t']).trim_start_matches('\n');
        let indent = body
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.len() - l.trim_start().len())
            .min()
            .unwrap_or(0);
        body.lines().map(|l| l.get(indent..).unwrap_or("").trim_end()).collect::<Vec<_>>().join("\n")
    }
}

fn unescape(c: char) -> char {
    match c {
        'n' => '\n',
        't' => '\t',
        'r' => '\r',
        'b' => '\u{8}',
        'f' => '\u{c}',
        '0' => '\0',
        other => other,
    }
}

/// Index of the matching close brace for every `{`, or `None` when braces are unbalanced.
pub fn match_braces(tokens: &[Token]) -> Option<Vec<Option<usize>>> {
    let mut matches = vec![None; tokens.len()];
    let mut stack = Vec::new();
    for (i, t) in tokens.iter().enumerate() {
        if t.is_punct("{") {
            stack.push(i);
        } else if t.is_punct("}") {
            let open = stack.pop()?;
            matches[open] = Some(i);
        }
    }
    if stack.is_empty() {
        Some(matches)
    } else {
        None
    }
}
