// SPDX-License-Identifier: Apache-2.0
//! ISCAS-89 `.bench` reader and canonical writer.
//!
//! Grammar (one statement per line, `#` starts a comment):
//!
//! ```text
//! INPUT(name)
//! OUTPUT(name)
//! name = KIND(a, b, ...)
//! ```
//!
//! Signals may be referenced before they are defined. `DFF` lines are
//! rejected since only combinational circuits are supported.

use std::collections::HashMap;
use std::fmt::Write as _;

use tpilab_core::netlist::{Gate, GateKind, Netlist, NetlistError};

/// Parse failure with a 1-based source location and the offending token.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BenchError {
    #[error("line {line}, column {column}: syntax error near `{token}`: {message}")]
    Syntax { line: usize, column: usize, token: String, message: &'static str },
    #[error("line {line}, column {column}: unknown gate kind `{token}`")]
    UnknownGateKind { line: usize, column: usize, token: String },
    #[error("line {line}, column {column}: duplicate label `{token}`")]
    DuplicateLabel { line: usize, column: usize, token: String },
    #[error("line {line}, column {column}: undefined signal `{token}`")]
    UndefinedFanin { line: usize, column: usize, token: String },
    #[error("line {line}, column {column}: combinational cycle through `{token}`")]
    CycleDetected { line: usize, column: usize, token: String },
    #[error("line {line}, column {column}: gate `{token}` has {got} fanins")]
    ArityViolation { line: usize, column: usize, token: String, got: usize },
    #[error("line {line}, column {column}: sequential element `{token}`, combinational circuits only")]
    Sequential { line: usize, column: usize, token: String },
}

impl BenchError {
    pub fn line(&self) -> usize {
        match self {
            BenchError::Syntax { line, .. }
            | BenchError::UnknownGateKind { line, .. }
            | BenchError::DuplicateLabel { line, .. }
            | BenchError::UndefinedFanin { line, .. }
            | BenchError::CycleDetected { line, .. }
            | BenchError::ArityViolation { line, .. }
            | BenchError::Sequential { line, .. } => *line,
        }
    }

    pub fn column(&self) -> usize {
        match self {
            BenchError::Syntax { column, .. }
            | BenchError::UnknownGateKind { column, .. }
            | BenchError::DuplicateLabel { column, .. }
            | BenchError::UndefinedFanin { column, .. }
            | BenchError::CycleDetected { column, .. }
            | BenchError::ArityViolation { column, .. }
            | BenchError::Sequential { column, .. } => *column,
        }
    }

    pub fn token(&self) -> &str {
        match self {
            BenchError::Syntax { token, .. }
            | BenchError::UnknownGateKind { token, .. }
            | BenchError::DuplicateLabel { token, .. }
            | BenchError::UndefinedFanin { token, .. }
            | BenchError::CycleDetected { token, .. }
            | BenchError::ArityViolation { token, .. }
            | BenchError::Sequential { token, .. } => token,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Loc {
    line: usize,
    column: usize,
}

#[derive(Debug)]
struct Tok<'a> {
    text: &'a str,
    loc: Loc,
}

#[derive(Debug)]
struct GateDef<'a> {
    name: Tok<'a>,
    kind: GateKind,
    fanins: Vec<Tok<'a>>,
}

fn is_name_byte(b: u8) -> bool {
    !(b.is_ascii_whitespace() || matches!(b, b'(' | b')' | b',' | b'=' | b'#'))
}

/// Byte cursor over one line.
struct Cursor<'a> {
    s: &'a str,
    pos: usize,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        while self.s.as_bytes().get(self.pos).is_some_and(|b| b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn loc(&self) -> Loc {
        Loc { line: self.line, column: self.pos + 1 }
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos >= self.s.len()
    }

    fn rest(&self) -> String {
        self.s[self.pos..].split_whitespace().next().unwrap_or("<end of line>").to_string()
    }

    fn syntax(&self, message: &'static str) -> BenchError {
        let l = self.loc();
        BenchError::Syntax { line: l.line, column: l.column, token: self.rest(), message }
    }

    fn name(&mut self) -> Result<Tok<'a>, BenchError> {
        self.skip_ws();
        let loc = self.loc();
        let start = self.pos;
        while self.s.as_bytes().get(self.pos).is_some_and(|&b| is_name_byte(b)) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.syntax("expected a signal name"));
        }
        Ok(Tok { text: &self.s[start..self.pos], loc })
    }

    fn punct(&mut self, c: u8, message: &'static str) -> Result<(), BenchError> {
        self.skip_ws();
        if self.s.as_bytes().get(self.pos) == Some(&c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.syntax(message))
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.as_bytes().get(self.pos).copied()
    }
}

/// Parses `.bench` text into a validated netlist named `name`.
pub fn parse_bench(text: &str, name: &str) -> Result<Netlist, BenchError> {
    let mut inputs: Vec<Tok> = Vec::new();
    let mut outputs: Vec<Tok> = Vec::new();
    let mut defs: Vec<GateDef> = Vec::new();
    // file order of INPUT lines and gate definitions; true = input
    let mut order: Vec<(bool, usize)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let body = raw.split('#').next().unwrap_or("");
        let mut c = Cursor { s: body, pos: 0, line: i + 1 };
        if c.at_end() {
            continue;
        }
        let head = c.name()?;
        match c.peek() {
            Some(b'(') => {
                c.punct(b'(', "expected `(`")?;
                let sig = c.name()?;
                c.punct(b')', "expected `)`")?;
                if !c.at_end() {
                    return Err(c.syntax("unexpected text after statement"));
                }
                if head.text.eq_ignore_ascii_case("INPUT") {
                    order.push((true, inputs.len()));
                    inputs.push(sig);
                } else if head.text.eq_ignore_ascii_case("OUTPUT") {
                    outputs.push(sig);
                } else {
                    return Err(BenchError::Syntax {
                        line: head.loc.line,
                        column: head.loc.column,
                        token: head.text.to_string(),
                        message: "expected INPUT or OUTPUT",
                    });
                }
            }
            Some(b'=') => {
                c.punct(b'=', "expected `=`")?;
                let kw = c.name()?;
                let kind = match GateKind::from_keyword(kw.text) {
                    Some(GateKind::Input) | None => {
                        let token = kw.text.to_string();
                        let (line, column) = (kw.loc.line, kw.loc.column);
                        return Err(if kw.text.eq_ignore_ascii_case("DFF") {
                            BenchError::Sequential { line, column, token: head.text.to_string() }
                        } else {
                            BenchError::UnknownGateKind { line, column, token }
                        });
                    }
                    Some(k) => k,
                };
                c.punct(b'(', "expected `(` after gate kind")?;
                let mut fanins = Vec::new();
                if c.peek() != Some(b')') {
                    loop {
                        fanins.push(c.name()?);
                        match c.peek() {
                            Some(b',') => c.punct(b',', "expected `,`")?,
                            _ => break,
                        }
                    }
                }
                c.punct(b')', "expected `,` or `)`")?;
                if !c.at_end() {
                    return Err(c.syntax("unexpected text after statement"));
                }
                order.push((false, defs.len()));
                defs.push(GateDef { name: head, kind, fanins });
            }
            _ => return Err(c.syntax("expected `(` or `=`")),
        }
    }

    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut locs: Vec<Loc> = Vec::with_capacity(order.len());
    for (id, &(is_input, k)) in order.iter().enumerate() {
        let tok = if is_input { &inputs[k] } else { &defs[k].name };
        if ids.insert(tok.text, id).is_some() {
            return Err(BenchError::DuplicateLabel {
                line: tok.loc.line,
                column: tok.loc.column,
                token: tok.text.to_string(),
            });
        }
        locs.push(tok.loc);
    }
    let resolve = |t: &Tok| -> Result<usize, BenchError> {
        ids.get(t.text).copied().ok_or_else(|| BenchError::UndefinedFanin {
            line: t.loc.line,
            column: t.loc.column,
            token: t.text.to_string(),
        })
    };
    let mut gates = Vec::with_capacity(order.len());
    for (id, &(is_input, k)) in order.iter().enumerate() {
        if is_input {
            gates.push(Gate { id, label: inputs[k].text.to_string(), kind: GateKind::Input, fanins: vec![] });
        } else {
            let d = &defs[k];
            let fanins = d.fanins.iter().map(resolve).collect::<Result<Vec<_>, _>>()?;
            if !d.kind.arity_ok(fanins.len()) {
                return Err(BenchError::ArityViolation {
                    line: d.name.loc.line,
                    column: d.name.loc.column,
                    token: d.name.text.to_string(),
                    got: fanins.len(),
                });
            }
            gates.push(Gate { id, label: d.name.text.to_string(), kind: d.kind, fanins });
        }
    }
    let pos = outputs.iter().map(resolve).collect::<Result<Vec<_>, _>>()?;
    Netlist::new(name, gates, pos).map_err(|e| match e {
        NetlistError::CycleDetected { gate, label } => {
            BenchError::CycleDetected { line: locs[gate].line, column: locs[gate].column, token: label }
        }
        // every other condition was checked above with a location attached
        other => BenchError::Syntax { line: 0, column: 0, token: other.to_string(), message: "invalid netlist" },
    })
}

/// Canonical text: INPUT lines, OUTPUT lines, then gates in topological order.
pub fn write_bench(n: &Netlist) -> String {
    let mut s = String::new();
    for &i in n.primary_inputs() {
        let _ = writeln!(s, "INPUT({})", n.gate(i).label);
    }
    for &o in n.primary_outputs() {
        let _ = writeln!(s, "OUTPUT({})", n.gate(o).label);
    }
    for id in n.topo_order() {
        let g = n.gate(id);
        if g.kind == GateKind::Input {
            continue;
        }
        let _ = write!(s, "{} = {}(", g.label, g.kind.keyword());
        for (k, &f) in g.fanins.iter().enumerate() {
            if k > 0 {
                s.push_str(", ");
            }
            s.push_str(&n.gate(f).label);
        }
        s.push_str(")\n");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const AND: &str = "INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = AND(a, b)\n";

    #[test]
    fn smallest_circuit() {
        let n = parse_bench(AND, "and").unwrap();
        assert_eq!(n.primary_inputs().len(), 2);
        assert_eq!(n.logic_gate_count(), 1);
        assert_eq!(n.gate(n.primary_outputs()[0]).label, "y");
        assert_eq!(write_bench(&n), AND);
        assert_eq!(write_bench(&n).lines().count(), 4);
    }

    #[test]
    fn undefined_fanin_reports_line() {
        let e = parse_bench("y = AND(a)", "t").unwrap_err();
        assert_eq!(e, BenchError::UndefinedFanin { line: 1, column: 9, token: "a".into() });
        assert_eq!(e.line(), 1);
        assert_eq!(e.token(), "a");
    }

    #[test]
    fn comments_blank_lines_and_forward_references() {
        let text = "# header\n\nOUTPUT(y)  # trailing\ny = nand(t, b)\nINPUT(a)\nt = BUF(a)\nINPUT(b)\n";
        let n = parse_bench(text, "t").unwrap();
        assert_eq!(n.gates().iter().map(|g| g.label.as_str()).collect::<Vec<_>>(), ["y", "a", "t", "b"]);
        assert_eq!(
            write_bench(&n),
            "INPUT(a)\nINPUT(b)\nOUTPUT(y)\nt = BUFF(a)\ny = NAND(t, b)\n"
        );
    }

    #[test]
    fn xor_line() {
        let n = parse_bench("INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = XOR(a, b)\n", "x").unwrap();
        assert!(write_bench(&n).contains("y = XOR(a, b)\n"));
    }

    #[test]
    fn diagnostics() {
        let cases: &[(&str, BenchError)] = &[
            (
                "INPUT(a)\ny = FOO(a, a)",
                BenchError::UnknownGateKind { line: 2, column: 5, token: "FOO".into() },
            ),
            (
                "INPUT(a)\nINPUT(a)",
                BenchError::DuplicateLabel { line: 2, column: 7, token: "a".into() },
            ),
            (
                "INPUT(a)\nx = AND(a, y)\ny = AND(a, x)\nOUTPUT(y)",
                BenchError::CycleDetected { line: 2, column: 1, token: "x".into() },
            ),
            (
                "INPUT(a)\n  y = NOT(a, a)",
                BenchError::ArityViolation { line: 2, column: 3, token: "y".into(), got: 2 },
            ),
            (
                "INPUT(a)\nq = DFF(a)",
                BenchError::Sequential { line: 2, column: 5, token: "q".into() },
            ),
            ("INPUT(a)\nOUTPUT(z)", BenchError::UndefinedFanin { line: 2, column: 8, token: "z".into() }),
        ];
        for (text, want) in cases {
            assert_eq!(&parse_bench(text, "t").unwrap_err(), want, "{text:?}");
        }
        for bad in ["INPUT a", "y = AND(a b)", "y AND(a)", "INPUT(a) x", "FOO(a)", "y = (a)", "="] {
            assert!(matches!(parse_bench(bad, "t"), Err(BenchError::Syntax { line: 1, .. })), "{bad:?}");
        }
    }
}
