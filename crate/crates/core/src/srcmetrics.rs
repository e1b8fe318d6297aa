//! Class metrics for Java-family sources.
//!
//! This is a syntactic analyzer: the token stream from [`crate::lexer`] is
//! brace-matched to recover class bodies, and declarations are recognized at
//! member depth (exactly one brace inside a class body).
//!
//! Counting rules:
//! - classes, interfaces, enums and records are all classes; nested ones are
//!   separate entries and their members are not counted by the outer class;
//! - a method is a member-depth declaration with a parenthesized signature
//!   followed by a body brace (constructors included, abstract methods not);
//! - instance variables are member-depth field declarations, one per declarator;
//! - every `for` keyword counts as a loop (enhanced-for included);
//! - lines of code are non-blank lines that are not comment-only. A class owns
//!   the lines carrying its own tokens, from its first modifier to its closing brace.

use serde::{Deserialize, Serialize};

use crate::lexer::{self, Token, TokenKind};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub num_instance_variables: u32,
    pub num_for_loops: u32,
    pub num_methods: u32,
    pub lines_of_code: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedClass {
    pub name: String,
    pub metrics: ClassMetrics,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileSourceMetrics {
    pub classes: Vec<NamedClass>,
    /// Sum of the per-class counts, with `lines_of_code` taken from the whole file.
    pub aggregate: ClassMetrics,
    /// Braces did not balance; no classes were recovered.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degraded: bool,
}

const CLASS_KEYWORDS: [&str; 4] = ["class", "interface", "enum", "record"];

pub fn analyze_source(content: &[u8]) -> FileSourceMetrics {
    let text = String::from_utf8_lossy(content);
    let lexed = lexer::lex(&text);
    let file_loc = lexed.loc();
    let tokens = &lexed.tokens;

    let Some(braces) = lexer::match_braces(tokens) else {
        return FileSourceMetrics {
            classes: Vec::new(),
            aggregate: ClassMetrics { lines_of_code: file_loc, ..Default::default() },
            degraded: true,
        };
    };

    let spans = find_classes(tokens, &braces);
    // innermost class owning each token
    let mut owner: Vec<Option<usize>> = vec![None; tokens.len()];
    for (ci, span) in spans.iter().enumerate() {
        for slot in &mut owner[span.start..=span.close] {
            *slot = Some(ci);
        }
    }

    let mut classes = Vec::with_capacity(spans.len());
    for (ci, span) in spans.iter().enumerate() {
        let mut m = members(tokens, &braces, span);
        m.num_for_loops = owner
            .iter()
            .zip(tokens)
            .filter(|(o, t)| **o == Some(ci) && t.is_ident("for"))
            .count() as u32;
        let mut lines = std::collections::BTreeSet::new();
        for (t, o) in tokens.iter().zip(&owner) {
            if *o == Some(ci) {
                lines.extend(t.line..=t.end_line);
            }
        }
        m.lines_of_code = lines.len() as u32;
        classes.push(NamedClass { name: span.name.clone(), metrics: m });
    }

    let mut aggregate = ClassMetrics { lines_of_code: file_loc, ..Default::default() };
    for c in &classes {
        aggregate.num_instance_variables += c.metrics.num_instance_variables;
        aggregate.num_for_loops += c.metrics.num_for_loops;
        aggregate.num_methods += c.metrics.num_methods;
    }
    FileSourceMetrics { classes, aggregate, degraded: false }
}

#[derive(Debug)]
struct ClassSpan {
    name: String,
    is_enum: bool,
    /// First modifier token of the declaration.
    start: usize,
    open: usize,
    close: usize,
}

fn is_class_decl(tokens: &[Token], i: usize) -> bool {
    let t = &tokens[i];
    if t.kind != TokenKind::Ident || !CLASS_KEYWORDS.contains(&t.text.as_str()) {
        return false;
    }
    if i > 0 && (tokens[i - 1].is_punct(".") || tokens[i - 1].is_punct("::")) {
        return false;
    }
    matches!(tokens.get(i + 1), Some(n) if n.kind == TokenKind::Ident)
}

const MODIFIERS: [&str; 9] =
    ["public", "protected", "private", "static", "final", "abstract", "sealed", "strictfp", "non"];

fn modifiers_start(tokens: &[Token], keyword: usize) -> usize {
    let mut i = keyword;
    while i > 0 {
        let prev = &tokens[i - 1];
        let is_modifier = prev.kind == TokenKind::Ident && MODIFIERS.contains(&prev.text.as_str());
        // `non-sealed` lexes as three tokens
        let is_dash = prev.is_punct("-") && i >= 2 && tokens[i - 2].is_ident("non");
        if is_modifier || is_dash || prev.is_punct("@") {
            i -= 1;
        } else {
            break;
        }
    }
    i
}

fn find_classes(tokens: &[Token], braces: &[Option<usize>]) -> Vec<ClassSpan> {
    let mut spans = Vec::new();
    for i in 0..tokens.len() {
        if !is_class_decl(tokens, i) {
            continue;
        }
        // header runs to the first body brace; a `;` or `=` first means this was not a declaration
        let mut j = i + 2;
        let mut parens = 0i32;
        let open = loop {
            let Some(t) = tokens.get(j) else { break None };
            if t.is_punct("(") {
                parens += 1;
            } else if t.is_punct(")") {
                parens -= 1;
            } else if parens == 0 && (t.is_punct(";") || t.is_punct("=") || t.is_punct("}")) {
                break None;
            } else if parens == 0 && t.is_punct("{") {
                break Some(j);
            }
            j += 1;
        };
        if let Some(open) = open {
            if let Some(close) = braces[open] {
                spans.push(ClassSpan {
                    name: tokens[i + 1].text.clone(),
                    is_enum: tokens[i].text == "enum",
                    start: modifiers_start(tokens, i),
                    open,
                    close,
                });
            }
        }
    }
    spans
}

/// Counts methods and fields declared directly in a class body.
fn members(tokens: &[Token], braces: &[Option<usize>], span: &ClassSpan) -> ClassMetrics {
    let mut m = ClassMetrics::default();
    let mut i = span.open + 1;
    if span.is_enum {
        // skip the constant list
        let mut k = i;
        let mut found = None;
        while k < span.close {
            if tokens[k].is_punct("{") {
                k = braces[k].unwrap_or(k) + 1;
                continue;
            }
            if tokens[k].is_punct(";") {
                found = Some(k);
                break;
            }
            k += 1;
        }
        match found {
            Some(semi) => i = semi + 1,
            None => return m,
        }
    }

    let mut seg_start = i;
    let mut parens = 0i32;
    while i < span.close {
        let t = &tokens[i];
        if t.is_punct("(") {
            parens += 1;
        } else if t.is_punct(")") {
            parens -= 1;
        } else if t.is_punct("{") {
            let close = braces[i].unwrap_or(i);
            if parens == 0 {
                let seg = strip_annotations(&tokens[seg_start..i]);
                if seg.iter().enumerate().any(|(k, _)| is_class_decl(&seg, k)) {
                    seg_start = close + 1;
                } else if has_toplevel_assign(&seg) {
                    // initializer (anonymous class, lambda, array); statement ends at `;`
                } else if is_method_signature(&seg) {
                    m.num_methods += 1;
                    seg_start = close + 1;
                } else {
                    seg_start = close + 1;
                }
            }
            i = close + 1;
            continue;
        } else if t.is_punct(";") && parens == 0 {
            let seg = strip_annotations(&tokens[seg_start..i]);
            if is_field(&seg) {
                m.num_instance_variables += count_declarators(&seg);
            }
            seg_start = i + 1;
        }
        i += 1;
    }
    m
}

/// Drops `@Name`, `@a.b.Name` and `@Name(...)` annotations (but keeps `@interface`).
fn strip_annotations(seg: &[Token]) -> Vec<Token> {
    let mut out = Vec::with_capacity(seg.len());
    let mut i = 0;
    while i < seg.len() {
        if seg[i].is_punct("@") && seg.get(i + 1).is_some_and(|t| t.kind == TokenKind::Ident && t.text != "interface") {
            i += 2;
            while i + 1 < seg.len() && seg[i].is_punct(".") && seg[i + 1].kind == TokenKind::Ident {
                i += 2;
            }
            if seg.get(i).is_some_and(|t| t.is_punct("(")) {
                let mut depth = 0;
                while i < seg.len() {
                    if seg[i].is_punct("(") {
                        depth += 1;
                    } else if seg[i].is_punct(")") {
                        depth -= 1;
                        if depth == 0 {
                            i += 1;
                            break;
                        }
                    }
                    i += 1;
                }
            }
            continue;
        }
        out.push(seg[i].clone());
        i += 1;
    }
    out
}

fn has_toplevel_assign(seg: &[Token]) -> bool {
    let mut parens = 0;
    for t in seg {
        if t.is_punct("(") {
            parens += 1;
        } else if t.is_punct(")") {
            parens -= 1;
        } else if parens == 0 && t.is_punct("=") {
            return true;
        }
    }
    false
}

/// `... name(params) [throws A, B]` with no top-level `=` before the parameter list.
fn is_method_signature(seg: &[Token]) -> bool {
    let Some(open) = seg.iter().position(|t| t.is_punct("(")) else {
        return false;
    };
    if open == 0 || seg[open - 1].kind != TokenKind::Ident {
        return false;
    }
    let mut depth = 0;
    let mut close = None;
    for (k, t) in seg.iter().enumerate().skip(open) {
        if t.is_punct("(") {
            depth += 1;
        } else if t.is_punct(")") {
            depth -= 1;
            if depth == 0 {
                close = Some(k);
                break;
            }
        }
    }
    let Some(close) = close else { return false };
    let rest = &seg[close + 1..];
    rest.is_empty() || rest[0].is_ident("throws") || rest.iter().all(|t| t.is_punct("[") || t.is_punct("]"))
}

fn is_field(seg: &[Token]) -> bool {
    if seg.is_empty() {
        return false;
    }
    let mut parens = 0;
    for t in seg {
        if t.is_punct("=") && parens == 0 {
            return true;
        }
        if t.is_punct("(") {
            // a parameter list before any initializer: abstract or interface method
            return false;
        }
        if t.is_punct(")") {
            parens -= 1;
        }
    }
    // type + name at least
    seg.iter().filter(|t| t.kind == TokenKind::Ident).count() >= 2
}

/// One plus the number of declarator-separating commas.
fn count_declarators(seg: &[Token]) -> u32 {
    let mut count = 1;
    let mut depth = 0i32;
    let mut angle = 0i32;
    let mut in_init = false;
    for t in seg {
        match t.text.as_str() {
            "(" | "[" | "{" if t.kind == TokenKind::Punct => depth += 1,
            ")" | "]" | "}" if t.kind == TokenKind::Punct => depth -= 1,
            "<" if t.kind == TokenKind::Punct && !in_init => angle += 1,
            ">" if t.kind == TokenKind::Punct && !in_init => angle -= 1,
            "=" if t.kind == TokenKind::Punct && depth == 0 => in_init = true,
            "," if t.kind == TokenKind::Punct && depth == 0 && (in_init || angle <= 0) => {
                count += 1;
                in_init = false;
                angle = 0;
            }
            _ => {}
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;

    fn analyze(src: &str) -> FileSourceMetrics {
        analyze_source(src.as_bytes())
    }

    fn only(src: &str) -> ClassMetrics {
        let m = analyze(src);
        assert_eq!(m.classes.len(), 1, "{m:?}");
        m.classes[0].metrics
    }

    #[test]
    fn empty_class() {
        let m = analyze("class A {}");
        assert_eq!(m.classes.len(), 1);
        assert_eq!(m.classes[0].name, "A");
        assert_eq!(
            m.classes[0].metrics,
            ClassMetrics { num_instance_variables: 0, num_for_loops: 0, num_methods: 0, lines_of_code: 1 }
        );
        assert_eq!(m.aggregate.lines_of_code, 1);
    }

    #[test]
    fn fields_methods_and_loops() {
        let src = "\
public class Counter {
    private int a, b;
    private final Map<String, List<Integer>> index = new HashMap<>();

    public Counter() {
        a = 0;
    }

    int sum(int[] xs) {
        int s = 0;
        for (int x : xs) { s += x; }
        return s;
    }

    void reset() throws IOException { b = 0; }
}
";
        let m = only(src);
        assert_eq!(m.num_instance_variables, 3);
        assert_eq!(m.num_methods, 3);
        assert_eq!(m.num_for_loops, 1);
        assert_eq!(m.lines_of_code, 13);
    }

    #[test]
    fn strings_and_comments_do_not_count() {
        let m = only(
            r#"class A {
    // for (;;) {}
    String s = "for class interface";
    /* void f() {} */
}"#,
        );
        assert_eq!(m.num_for_loops, 0);
        assert_eq!(m.num_methods, 0);
        assert_eq!(m.num_instance_variables, 1);
        assert_eq!(m.lines_of_code, 3);
    }

    #[test]
    fn nested_classes_are_separate() {
        let m = analyze(
            "class Outer {
  int x;
  static class Inner {
    int y, z;
    void g() { for (;;) {} }
  }
  void f() {}
}",
        );
        assert_eq!(m.classes.len(), 2);
        let outer = &m.classes[0];
        let inner = &m.classes[1];
        assert_eq!(outer.name, "Outer");
        assert_eq!((outer.metrics.num_instance_variables, outer.metrics.num_methods, outer.metrics.num_for_loops), (1, 1, 0));
        assert_eq!((inner.metrics.num_instance_variables, inner.metrics.num_methods, inner.metrics.num_for_loops), (2, 1, 1));
        assert_eq!(outer.metrics.lines_of_code, 4);
        assert_eq!(inner.metrics.lines_of_code, 4);
        assert_eq!(m.aggregate.num_instance_variables, 3);
        assert_eq!(m.aggregate.lines_of_code, 8);
    }

    #[test]
    fn anonymous_classes_and_lambdas_are_fields() {
        let m = only(
            "class A {
  Runnable r = new Runnable() { public void run() { for (;;) {} } };
  Runnable q = () -> { };
  int[] xs = {1, 2, 3};
  static { init(); }
  { x = 1; }
}",
        );
        assert_eq!(m.num_instance_variables, 3);
        assert_eq!(m.num_methods, 0);
        assert_eq!(m.num_for_loops, 1);
    }

    #[test]
    fn interfaces_enums_annotations() {
        let m = analyze(
            "@Entity(name = \"x\")
public interface Shape {
  double area();
  default int sides() { return 0; }
}
enum Color { RED, GREEN(2) { int v() { return 1; } }, BLUE; private final int code; Color() {} Color(int c) {} }
@interface Marker { String value() default \"\"; }",
        );
        let names: Vec<_> = m.classes.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["Shape", "Color", "Marker"]);
        assert_eq!(m.classes[0].metrics.num_methods, 1);
        assert_eq!(m.classes[0].metrics.num_instance_variables, 0);
        assert_eq!(m.classes[1].metrics.num_methods, 2);
        assert_eq!(m.classes[1].metrics.num_instance_variables, 1);
        assert_eq!(m.classes[2].metrics.num_methods, 0);
    }

    #[test]
    fn annotated_members() {
        let m = only(
            "class A {
  @SuppressWarnings(\"unused\") @Inject private Foo foo;
  @Override public String toString() { return \"\"; }
}",
        );
        assert_eq!(m.num_instance_variables, 1);
        assert_eq!(m.num_methods, 1);
    }

    #[test]
    fn class_literal_is_not_a_class() {
        let m = only("class A { Class<?> k = A.class; void f() { log(A.class); } }");
        assert_eq!((m.num_instance_variables, m.num_methods), (1, 1));
    }

    #[test]
    fn unbalanced_braces_degrade() {
        let m = analyze("class A {\n void f() {\n");
        assert!(m.degraded);
        assert!(m.classes.is_empty());
        assert_eq!(m.aggregate.lines_of_code, 2);
    }

    #[test]
    fn appending_a_method_adds_one() {
        let base = "class A {\n int x;\n void f() {}\n";
        let a = only(&format!("{base}}}"));
        let b = only(&format!("{base} public <T> T g(T t) throws E {{ return t; }}\n}}"));
        assert_eq!(b.num_methods, a.num_methods + 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        const SAMPLE: &str = "class A {
  int a, b;
  String s = \"for\";
  void f() { for (int i = 0; i < 3; i++) {} }
  int g() { return a; }
}
class B { double d; }
";

        proptest! {
            #[test]
            fn comment_lines_change_nothing(at in 0usize..8, line_comment in any::<bool>(), body in "[a-z {}();]{0,20}") {
                let mut lines: Vec<String> = SAMPLE.lines().map(String::from).collect();
                let comment = if line_comment {
                    format!("// {body}")
                } else {
                    format!("/* {} */", body.replace('*', ""))
                };
                lines.insert(at.min(lines.len()), comment);
                let modified = lines.join("\n");
                prop_assert_eq!(analyze(SAMPLE), analyze(&modified));
            }

            #[test]
            fn string_contents_never_count(text in "(for|class|void f\\(\\) \\{|[a-z ;{}])*") {
                let src = format!("class A {{ String s = \"{}\"; }}", text.replace('"', ""));
                let m = only(&src);
                prop_assert_eq!(m.num_for_loops, 0);
                prop_assert_eq!(m.num_methods, 0);
                prop_assert_eq!(m.num_instance_variables, 1);
            }
        }
    }
}
