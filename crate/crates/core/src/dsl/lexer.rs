use super::parser::ParseError;

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Num(f64),
    Str(String),
    Comment(String),
    Punct(&'static str),
    Newline,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Spanned {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

const PUNCT: [&str; 17] = [
    ">=", "<=", "==", "!=", "(", ")", "[", "]", ",", "=", ":", "+", "-", "*", "/", "<", ">",
];

pub(crate) fn lex(src: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut out = Vec::new();
    for (li, line) in src.lines().enumerate() {
        let line_no = li + 1;
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            let at = |tok| Spanned { tok, line: line_no, col };
            if c.is_whitespace() {
                i += 1;
            } else if c == '#' {
                let text: String = chars[i + 1..].iter().collect();
                out.push(at(Tok::Comment(text.trim().to_owned())));
                i = chars.len();
            } else if c == '\'' || c == '"' {
                let mut j = i + 1;
                while j < chars.len() && chars[j] != c {
                    j += 1;
                }
                if j >= chars.len() {
                    return Err(ParseError::syntax(line_no, col, "unterminated string literal"));
                }
                out.push(at(Tok::Str(chars[i + 1..j].iter().collect())));
                i = j + 1;
            } else if c.is_ascii_digit() {
                let mut j = i;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                if j + 1 < chars.len() && chars[j] == '.' && chars[j + 1].is_ascii_digit() {
                    j += 1;
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                }
                if j < chars.len() && (chars[j].is_alphabetic() || chars[j] == '_') {
                    return Err(ParseError::syntax(line_no, j + 1, "malformed number"));
                }
                let text: String = chars[i..j].iter().collect();
                let v: f64 = text
                    .parse()
                    .map_err(|_| ParseError::syntax(line_no, col, "malformed number"))?;
                out.push(at(Tok::Num(v)));
                i = j;
            } else if c.is_alphabetic() || c == '_' {
                let mut j = i;
                while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                out.push(at(Tok::Ident(chars[i..j].iter().collect())));
                i = j;
            } else {
                let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
                match PUNCT.iter().find(|p| rest.starts_with(**p)) {
                    Some(p) => {
                        out.push(at(Tok::Punct(p)));
                        i += p.len();
                    }
                    None => {
                        return Err(ParseError::syntax(line_no, col, format!("unexpected character `{c}`")));
                    }
                }
            }
        }
        out.push(Spanned { tok: Tok::Newline, line: line_no, col: chars.len() + 1 });
    }
    Ok(out)
}
