use std::fmt;

use super::commands::CommandSet;
use super::GrammarError;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Token {
    Command(String),
    Char(char),
    Open,
    Close,
    Sup,
    Sub,
}

impl Token {
    /// Text of a token as written in markup.
    pub fn text(&self) -> String {
        match self {
            Token::Command(c) => c.clone(),
            Token::Char(c) => c.to_string(),
            Token::Open => "{".into(),
            Token::Close => "}".into(),
            Token::Sup => "^".into(),
            Token::Sub => "_".into(),
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

/// Splits markup into tokens. Whitespace is dropped; every backslash command
/// must be present in `commands`.
pub fn tokenize_latex(markup: &str, commands: &CommandSet) -> Result<Vec<Token>, GrammarError> {
    let mut tokens = Vec::new();
    let mut depth = 0usize;
    let mut chars = markup.chars().peekable();
    while let Some(c) = chars.next() {
        let tok = match c {
            c if c.is_whitespace() => continue,
            '{' => {
                depth += 1;
                Token::Open
            }
            '}' => {
                depth = depth.checked_sub(1).ok_or(GrammarError::UnbalancedBraces)?;
                Token::Close
            }
            '^' => Token::Sup,
            '_' => Token::Sub,
            '\\' => {
                let mut name = String::from('\\');
                match chars.peek() {
                    Some(n) if n.is_ascii_alphabetic() => {
                        while let Some(&n) = chars.peek() {
                            if !n.is_ascii_alphabetic() {
                                break;
                            }
                            name.push(n);
                            chars.next();
                        }
                    }
                    Some(&n) if !n.is_whitespace() => {
                        name.push(n);
                        chars.next();
                    }
                    _ => {}
                }
                if !commands.contains(&name) {
                    return Err(GrammarError::UnknownCommand(name));
                }
                Token::Command(name)
            }
            c => Token::Char(c),
        };
        tokens.push(tok);
    }
    if depth != 0 {
        return Err(GrammarError::UnbalancedBraces);
    }
    Ok(tokens)
}

/// Joins tokens back into markup, adding a space only where a letter
/// command would otherwise swallow the following letter.
pub fn tokens_to_markup(tokens: &[Token]) -> String {
    let mut out = String::new();
    let mut prev_letter_command = false;
    for tok in tokens {
        if prev_letter_command {
            if let Token::Char(c) = tok {
                if c.is_ascii_alphabetic() {
                    out.push(' ');
                }
            }
        }
        out.push_str(&tok.text());
        prev_letter_command = matches!(tok, Token::Command(name)
            if name[1..].chars().all(|c| c.is_ascii_alphabetic()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize_latex(s, &CommandSet::default())
            .unwrap()
            .iter()
            .map(Token::text)
            .collect()
    }

    #[test]
    fn splits_scripts() {
        assert_eq!(toks("a^{b}"), ["a", "^", "{", "b", "}"]);
    }

    #[test]
    fn splits_large_operator() {
        assert_eq!(
            toks("\\sum_{i}^{n}a"),
            ["\\sum", "_", "{", "i", "}", "^", "{", "n", "}", "a"]
        );
    }

    #[test]
    fn splits_fraction() {
        assert_eq!(
            toks("\\frac{1}{2}"),
            ["\\frac", "{", "1", "}", "{", "2", "}"]
        );
    }

    #[test]
    fn drops_whitespace_and_reads_symbol_escapes() {
        assert_eq!(toks(" x \\times\ty "), ["x", "\\times", "y"]);
        assert_eq!(toks("\\{a\\}"), ["\\{", "a", "\\}"]);
    }

    #[test]
    fn errors() {
        let c = CommandSet::default();
        assert_eq!(
            tokenize_latex("\\foo{x}", &c),
            Err(GrammarError::UnknownCommand("\\foo".into()))
        );
        assert_eq!(
            tokenize_latex("a^{", &c),
            Err(GrammarError::UnbalancedBraces)
        );
        assert_eq!(
            tokenize_latex("a}{", &c),
            Err(GrammarError::UnbalancedBraces)
        );
        assert!(matches!(
            tokenize_latex("a\\", &c),
            Err(GrammarError::UnknownCommand(_))
        ));
    }

    #[test]
    fn markup_round_trip_keeps_letters_apart() {
        let c = CommandSet::default();
        let t = tokenize_latex("\\alpha b\\times{c}", &c).unwrap();
        let s = tokens_to_markup(&t);
        assert_eq!(s, "\\alpha b\\times{c}");
        assert_eq!(tokenize_latex(&s, &c).unwrap(), t);
    }
}
