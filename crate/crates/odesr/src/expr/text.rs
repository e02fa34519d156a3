//! Textual model format: one infix equation per line,
//!
//! ```text
//! dy1/dt = -1.4 * y1
//! dy2/dt = 1.4 * y1 - 4.2 * y2
//! theta: -1.3999999999999999e0 1.3999999999999999e0 4.2000000000000002e0
//! ```
//!
//! Parameters are inlined as numeric literals (shortest round-trip form);
//! the trailing `theta:` line repeats them with 17 significant digits in
//! slot order. Parsing assigns parameter slots in encounter order, so
//! `deserialize(serialize(m)) == m` for canonical models. Every numeric
//! literal parses to a `Parameter`; printing is structure-preserving
//! (right-nested operands are parenthesized).

use std::fmt::Write as _;

use thiserror::Error;

use super::{ExpressionTree, OdeSystemModel, Symbol};

#[derive(Debug, Error, PartialEq)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

fn err(line: usize, column: usize, message: impl Into<String>) -> ParseError {
    ParseError { line, column, message: message.into() }
}

/// Serializes with default variable names `y1..yD`.
pub fn serialize(model: &OdeSystemModel) -> String {
    let names: Vec<String> = (1..=model.dimension()).map(|i| format!("y{i}")).collect();
    serialize_with_names(model, &names)
}

pub fn serialize_with_names(model: &OdeSystemModel, names: &[String]) -> String {
    assert_eq!(names.len(), model.dimension());
    let mut out = String::new();
    for (tree, name) in model.trees().iter().zip(names) {
        let _ = write!(out, "d{name}/dt = ");
        print_subtree(tree, 0, model.theta(), names, 0, &mut out);
        out.push('\n');
    }
    out.push_str("theta:");
    for v in model.theta() {
        let _ = write!(out, " {v:.16e}");
    }
    out.push('\n');
    out
}

fn precedence(sym: &Symbol) -> u8 {
    match sym {
        Symbol::Add | Symbol::Sub => 1,
        Symbol::Mul | Symbol::Div => 2,
        _ => 3,
    }
}

/// Prints the subtree rooted at `idx`, parenthesizing whenever the node's
/// precedence is below what the context requires. Right operands require one
/// level more than left ones so that left-associative reparsing rebuilds the
/// exact structure.
fn print_subtree(
    tree: &ExpressionTree,
    idx: usize,
    theta: &[f64],
    names: &[String],
    min_prec: u8,
    out: &mut String,
) {
    let sym = tree.symbol_at(idx);
    let prec = precedence(&sym);
    let parens = prec < min_prec;
    if parens {
        out.push('(');
    }
    match sym {
        Symbol::Add | Symbol::Sub | Symbol::Mul | Symbol::Div => {
            let op = match sym {
                Symbol::Add => " + ",
                Symbol::Sub => " - ",
                Symbol::Mul => " * ",
                Symbol::Div => " / ",
                _ => unreachable!(),
            };
            let left = idx + 1;
            let right = left + tree.subtree_len(left);
            print_subtree(tree, left, theta, names, prec, out);
            out.push_str(op);
            print_subtree(tree, right, theta, names, prec + 1, out);
        }
        Symbol::Sin | Symbol::Cos => {
            out.push_str(if matches!(sym, Symbol::Sin) { "sin(" } else { "cos(" });
            print_subtree(tree, idx + 1, theta, names, 0, out);
            out.push(')');
        }
        Symbol::PowConst(c) => {
            out.push_str("pow(");
            print_subtree(tree, idx + 1, theta, names, 0, out);
            let _ = write!(out, ", {c}");
            out.push(')');
        }
        Symbol::Variable(i) => out.push_str(&names[i]),
        Symbol::Parameter(k) => {
            let _ = write!(out, "{}", theta[k]);
        }
        Symbol::Constant(c) => {
            let _ = write!(out, "{c}");
        }
    }
    if parens {
        out.push(')');
    }
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
}

struct Token {
    tok: Tok,
    column: usize,
}

fn tokenize(line: &str, line_no: usize) -> Result<Vec<Token>, ParseError> {
    let mut tokens = Vec::new();
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0usize;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        match c {
            ' ' | '\t' => {
                i += 1;
            }
            '+' => {
                tokens.push(Token { tok: Tok::Plus, column });
                i += 1;
            }
            '-' => {
                tokens.push(Token { tok: Tok::Minus, column });
                i += 1;
            }
            '*' => {
                tokens.push(Token { tok: Tok::Star, column });
                i += 1;
            }
            '/' => {
                tokens.push(Token { tok: Tok::Slash, column });
                i += 1;
            }
            '(' => {
                tokens.push(Token { tok: Tok::LParen, column });
                i += 1;
            }
            ')' => {
                tokens.push(Token { tok: Tok::RParen, column });
                i += 1;
            }
            ',' => {
                tokens.push(Token { tok: Tok::Comma, column });
                i += 1;
            }
            _ if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    i += 1;
                    if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                        i += 1;
                    }
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let value = text
                    .parse::<f64>()
                    .map_err(|_| err(line_no, column, format!("invalid number '{text}'")))?;
                tokens.push(Token { tok: Tok::Number(value), column });
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                tokens.push(Token { tok: Tok::Ident(text), column });
            }
            _ => return Err(err(line_no, column, format!("unexpected character '{c}'"))),
        }
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    line: usize,
    line_len: usize,
    var_names: &'a [String],
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn column(&self) -> usize {
        self.tokens.get(self.pos).map(|t| t.column).unwrap_or(self.line_len + 1)
    }

    fn bump(&mut self) -> Option<&Token> {
        let t = self.tokens.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: &Tok, what: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(t) if t == want => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(err(self.line, self.column(), format!("expected {what}"))),
        }
    }

    // expr := term (('+' | '-') term)*
    fn parse_expr(&mut self, out: &mut Vec<Symbol>, theta: &mut Vec<f64>) -> Result<(), ParseError> {
        let mut lhs = Vec::new();
        self.parse_term(&mut lhs, theta)?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => Symbol::Add,
                Some(Tok::Minus) => Symbol::Sub,
                _ => break,
            };
            self.pos += 1;
            let mut rhs = Vec::new();
            self.parse_term(&mut rhs, theta)?;
            let mut combined = Vec::with_capacity(1 + lhs.len() + rhs.len());
            combined.push(op);
            combined.extend(lhs);
            combined.extend(rhs);
            lhs = combined;
        }
        out.extend(lhs);
        Ok(())
    }

    // term := unary (('*' | '/') unary)*
    fn parse_term(&mut self, out: &mut Vec<Symbol>, theta: &mut Vec<f64>) -> Result<(), ParseError> {
        let mut lhs = Vec::new();
        self.parse_unary(&mut lhs, theta)?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => Symbol::Mul,
                Some(Tok::Slash) => Symbol::Div,
                _ => break,
            };
            self.pos += 1;
            let mut rhs = Vec::new();
            self.parse_unary(&mut rhs, theta)?;
            let mut combined = Vec::with_capacity(1 + lhs.len() + rhs.len());
            combined.push(op);
            combined.extend(lhs);
            combined.extend(rhs);
            lhs = combined;
        }
        out.extend(lhs);
        Ok(())
    }

    // unary := '-' number | atom
    fn parse_unary(&mut self, out: &mut Vec<Symbol>, theta: &mut Vec<f64>) -> Result<(), ParseError> {
        if matches!(self.peek(), Some(Tok::Minus)) {
            let col = self.column();
            self.pos += 1;
            match self.peek() {
                Some(Tok::Number(v)) => {
                    let v = -*v;
                    self.pos += 1;
                    let slot = theta.len();
                    theta.push(v);
                    out.push(Symbol::Parameter(slot));
                    Ok(())
                }
                _ => Err(err(self.line, col, "unary minus is only supported for numeric literals")),
            }
        } else {
            self.parse_atom(out, theta)
        }
    }

    // atom := number | ident | ident '(' args ')' | '(' expr ')'
    fn parse_atom(&mut self, out: &mut Vec<Symbol>, theta: &mut Vec<f64>) -> Result<(), ParseError> {
        let col = self.column();
        match self.bump().map(|t| t.tok.clone()) {
            Some(Tok::Number(v)) => {
                let slot = theta.len();
                theta.push(v);
                out.push(Symbol::Parameter(slot));
                Ok(())
            }
            Some(Tok::LParen) => {
                self.parse_expr(out, theta)?;
                self.expect(&Tok::RParen, "')'")
            }
            Some(Tok::Ident(name)) => {
                if matches!(self.peek(), Some(Tok::LParen)) {
                    self.pos += 1;
                    match name.as_str() {
                        "sin" | "cos" => {
                            out.push(if name == "sin" { Symbol::Sin } else { Symbol::Cos });
                            self.parse_expr(out, theta)?;
                            self.expect(&Tok::RParen, "')'")
                        }
                        "pow" => {
                            // pow(expr, literal-exponent)
                            let mut arg = Vec::new();
                            self.parse_expr(&mut arg, theta)?;
                            self.expect(&Tok::Comma, "','")?;
                            let negative = if matches!(self.peek(), Some(Tok::Minus)) {
                                self.pos += 1;
                                true
                            } else {
                                false
                            };
                            let exp_col = self.column();
                            let exponent = match self.bump().map(|t| t.tok.clone()) {
                                Some(Tok::Number(v)) => {
                                    if negative {
                                        -v
                                    } else {
                                        v
                                    }
                                }
                                _ => {
                                    return Err(err(
                                        self.line,
                                        exp_col,
                                        "pow exponent must be a numeric literal",
                                    ))
                                }
                            };
                            self.expect(&Tok::RParen, "')'")?;
                            out.push(Symbol::PowConst(exponent));
                            out.extend(arg);
                            Ok(())
                        }
                        _ => Err(err(self.line, col, format!("unknown function '{name}'"))),
                    }
                } else {
                    match self.var_names.iter().position(|n| *n == name) {
                        Some(i) => {
                            out.push(Symbol::Variable(i));
                            Ok(())
                        }
                        None => Err(err(self.line, col, format!("unknown identifier '{name}'"))),
                    }
                }
            }
            _ => Err(err(self.line, col, "expected expression")),
        }
    }
}

/// Parses the textual model format. Variable names are defined by the
/// left-hand sides (`d<name>/dt`) in line order; parameter slots are
/// assigned in encounter order; a trailing `theta:` line, when present,
/// overrides the inlined values positionally.
pub fn deserialize(text: &str) -> Result<OdeSystemModel, ParseError> {
    let mut equations: Vec<(usize, String, Vec<Token>)> = Vec::new();
    let mut theta_line: Option<(usize, Vec<f64>)> = None;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end();
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        if let Some(rest) = line.trim_start().strip_prefix("theta:") {
            let mut values = Vec::new();
            for tok in rest.split_whitespace() {
                let v = tok
                    .parse::<f64>()
                    .map_err(|_| err(line_no, 1, format!("invalid theta value '{tok}'")))?;
                values.push(v);
            }
            theta_line = Some((line_no, values));
            continue;
        }
        let eq = line
            .find('=')
            .ok_or_else(|| err(line_no, 1, "expected '<lhs> = <expr>'"))?;
        let (lhs, rhs) = line.split_at(eq);
        let lhs = lhs.trim();
        let name = lhs
            .strip_prefix('d')
            .and_then(|s| s.strip_suffix("/dt"))
            .filter(|s| !s.is_empty())
            .ok_or_else(|| err(line_no, 1, format!("left-hand side '{lhs}' is not of the form d<name>/dt")))?;
        let rhs_offset = eq + 1;
        let mut tokens = tokenize(&rhs[1..], line_no)?;
        for t in tokens.iter_mut() {
            t.column += rhs_offset;
        }
        equations.push((line_no, name.to_string(), tokens));
    }

    if equations.is_empty() {
        return Err(err(1, 1, "no equations found"));
    }
    let var_names: Vec<String> = equations.iter().map(|(_, n, _)| n.clone()).collect();
    for (idx, (line_no, name, _)) in equations.iter().enumerate() {
        if var_names[..idx].contains(name) {
            return Err(err(*line_no, 1, format!("duplicate state variable '{name}'")));
        }
    }

    let mut theta = Vec::new();
    let mut trees = Vec::with_capacity(equations.len());
    for (line_no, _, tokens) in &equations {
        let mut parser = Parser {
            tokens,
            pos: 0,
            line: *line_no,
            line_len: tokens.last().map(|t| t.column).unwrap_or(1),
            var_names: &var_names,
        };
        let mut prefix = Vec::new();
        parser.parse_expr(&mut prefix, &mut theta)?;
        if parser.pos != tokens.len() {
            return Err(err(*line_no, parser.column(), "unexpected trailing input"));
        }
        let tree = ExpressionTree::from_prefix(prefix)
            .map_err(|e| err(*line_no, 1, format!("malformed expression: {e}")))?;
        trees.push(tree);
    }

    if let Some((line_no, values)) = theta_line {
        if values.len() != theta.len() {
            return Err(err(
                line_no,
                1,
                format!("theta lists {} values but the equations use {}", values.len(), theta.len()),
            ));
        }
        theta = values;
    }

    OdeSystemModel::new(trees, theta).map_err(|e| err(1, 1, format!("invalid model: {e}")))
}
