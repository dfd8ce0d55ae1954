//! A small, total SQL lexer used for token-level query equality and for
//! light structural checks (leading keyword, outermost `ORDER BY`).

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    /// Bare word: keyword or identifier, stored lowercased.
    Word(String),
    /// Quoted identifier (`"x"`, `` `x` ``, `[x]`), content lowercased.
    QuotedIdent(String),
    /// String literal including its quotes, verbatim.
    Str(String),
    /// Blob literal `x'..'`, verbatim.
    Blob(String),
    Number(String),
    Punct(String),
}

impl Token {
    fn render(&self, out: &mut String) {
        match self {
            Token::Word(w) => out.push_str(w),
            Token::QuotedIdent(id) => {
                out.push('"');
                out.push_str(&id.replace('"', "\"\""));
                out.push('"');
            }
            Token::Str(s) | Token::Blob(s) | Token::Number(s) | Token::Punct(s) => out.push_str(s),
        }
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self, Token::Word(x) if x == w)
    }
}

const TWO_CHAR_OPS: [&str; 8] = ["<=", ">=", "<>", "!=", "==", "||", "<<", ">>"];

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$'
}

/// Splits SQL text into tokens. Whitespace and comments are dropped; unknown
/// characters become single-character punctuation tokens.
pub fn tokenize(sql: &str) -> Vec<Token> {
    let chars: Vec<char> = sql.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    let n = chars.len();
    let collect = |from: usize, to: usize| chars[from..to].iter().collect::<String>();

    while i < n {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '-' && i + 1 < n && chars[i + 1] == '-' {
            while i < n && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c == '/' && i + 1 < n && chars[i + 1] == '*' {
            i += 2;
            while i < n && !(chars[i] == '*' && i + 1 < n && chars[i + 1] == '/') {
                i += 1;
            }
            i = (i + 2).min(n);
            continue;
        }
        if (c == 'x' || c == 'X') && i + 1 < n && chars[i + 1] == '\'' {
            let end = scan_quoted(&chars, i + 1, '\'');
            tokens.push(Token::Blob(collect(i, end).to_ascii_lowercase()));
            i = end;
            continue;
        }
        if c == '\'' {
            let end = scan_quoted(&chars, i, '\'');
            tokens.push(Token::Str(collect(i, end)));
            i = end;
            continue;
        }
        if c == '"' || c == '`' || c == '[' {
            let close = match c {
                '[' => ']',
                other => other,
            };
            let end = scan_quoted(&chars, i, close);
            let inner_end = if end > i + 1 && chars[end - 1] == close {
                end - 1
            } else {
                end
            };
            let raw = collect(i + 1, inner_end);
            let content = if close == ']' {
                raw
            } else {
                let doubled: String = [close, close].iter().collect();
                raw.replace(&doubled, &close.to_string())
            };
            tokens.push(Token::QuotedIdent(content.to_ascii_lowercase()));
            i = end;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && i + 1 < n && chars[i + 1].is_ascii_digit()) {
            let start = i;
            if c == '0' && i + 1 < n && (chars[i + 1] == 'x' || chars[i + 1] == 'X') {
                i += 2;
                while i < n && chars[i].is_ascii_hexdigit() {
                    i += 1;
                }
            } else {
                while i < n && chars[i].is_ascii_digit() {
                    i += 1;
                }
                if i < n && chars[i] == '.' {
                    i += 1;
                    while i < n && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < n && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < n && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < n && chars[j].is_ascii_digit() {
                        i = j;
                        while i < n && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
            }
            tokens.push(Token::Number(collect(start, i).to_ascii_lowercase()));
            continue;
        }
        if is_ident_start(c) {
            let start = i;
            while i < n && is_ident_continue(chars[i]) {
                i += 1;
            }
            tokens.push(Token::Word(collect(start, i).to_ascii_lowercase()));
            continue;
        }
        if i + 1 < n {
            let pair: String = [c, chars[i + 1]].iter().collect();
            if TWO_CHAR_OPS.contains(&pair.as_str()) {
                tokens.push(Token::Punct(pair));
                i += 2;
                continue;
            }
        }
        tokens.push(Token::Punct(c.to_string()));
        i += 1;
    }
    tokens
}

/// Returns the index one past the closing quote (or `chars.len()` if the
/// literal is unterminated). Doubled quotes are treated as escapes.
fn scan_quoted(chars: &[char], open: usize, close: char) -> usize {
    let mut i = open + 1;
    while i < chars.len() {
        if chars[i] == close {
            if close != ']' && i + 1 < chars.len() && chars[i + 1] == close {
                i += 2;
                continue;
            }
            return i + 1;
        }
        i += 1;
    }
    chars.len()
}

/// Token-level normal form: case-folded words and identifiers, single spaces
/// between tokens, literals verbatim, comments and trailing semicolons dropped.
pub fn canonicalize_sql(sql: &str) -> String {
    let mut tokens = tokenize(sql);
    while matches!(tokens.last(), Some(Token::Punct(p)) if p == ";") {
        tokens.pop();
    }
    let mut out = String::new();
    for (i, tok) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        tok.render(&mut out);
    }
    out
}

/// True when the outermost query has an `ORDER BY` clause.
pub fn has_outer_order_by(sql: &str) -> bool {
    let tokens = tokenize(sql);
    let mut depth = 0i64;
    for (i, tok) in tokens.iter().enumerate() {
        match tok {
            Token::Punct(p) if p == "(" => depth += 1,
            Token::Punct(p) if p == ")" => depth -= 1,
            Token::Word(w) if w == "order" && depth == 0 && tokens.get(i + 1).is_some_and(|t| t.is_word("by")) => {
                return true;
            }
            _ => {}
        }
    }
    false
}

/// True when the first keyword (after any opening parentheses) is SELECT or WITH.
pub fn starts_with_select(sql: &str) -> bool {
    tokenize(sql)
        .iter()
        .find(|t| !matches!(t, Token::Punct(p) if p == "("))
        .is_some_and(|t| t.is_word("select") || t.is_word("with"))
}
