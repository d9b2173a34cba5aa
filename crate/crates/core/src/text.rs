//! Text format for instances.
//!
//! ```text
//! gvass dim 2
//! component left {
//!   states p q ;
//!   initial p ; final q ;
//!   rigid { 1:0 } ;
//!   in { 0:3 } unconstrained { } ;
//!   out { } unconstrained { 0 } ;
//!   arc go: p -> q [ -1, 0 ] ;
//! }
//! connect left -> right [ 0, 0 ]
//! ```
//!
//! Arc names are optional (`arc p -> q [..]` is named `a<k>`). The sugar
//! form `vass dim d { states ..; arc ..; from p [..]; to q [..]; }` is a
//! plain reachability query. `#` starts a comment.

use std::collections::{BTreeSet, HashMap};
use std::fmt::{self, Write};

use num_bigint::BigInt;
use num_traits::Signed;
use thiserror::Error;

use crate::decomposition::{vass_to_gvass, Vass};
use crate::model::{Arc, Component, Coord, GVass, PartialVector, StateId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Location {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{at}: {message}")]
pub struct ParseError {
    pub at: Location,
    pub message: String,
}

/// A parsed instance with the location of each component's header.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub gvass: GVass,
    pub locations: Vec<Location>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Word(String),
    Int(BigInt),
    Punct(&'static str),
    End,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Word(w) => write!(f, "`{w}`"),
            Tok::Int(n) => write!(f, "`{n}`"),
            Tok::Punct(p) => write!(f, "`{p}`"),
            Tok::End => f.write_str("end of input"),
        }
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '.' | '@' | '\'')
}

fn lex(src: &str) -> Result<Vec<(Tok, Location)>, ParseError> {
    let mut out = Vec::new();
    for (ln, line) in src.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        let chars: Vec<(usize, char)> = line.char_indices().collect();
        let mut i = 0;
        while i < chars.len() {
            let (byte, c) = chars[i];
            let at = Location { line: ln + 1, col: line[..byte].chars().count() + 1 };
            if c.is_whitespace() {
                i += 1;
            } else if c == '-' && chars.get(i + 1).is_some_and(|&(_, d)| d == '>') {
                out.push((Tok::Punct("->"), at));
                i += 2;
            } else if c == '-' || c.is_ascii_digit() {
                let start = i;
                i += 1;
                while i < chars.len() && chars[i].1.is_ascii_digit() {
                    i += 1;
                }
                let end = chars.get(i).map_or(line.len(), |&(b, _)| b);
                let text = &line[byte..end];
                let n: BigInt = text.parse().map_err(|_| ParseError { at, message: format!("malformed number `{text}`") })?;
                if i < chars.len() && is_word_char(chars[i].1) && start + 1 < i {
                    return Err(ParseError { at, message: "identifiers cannot start with a digit".into() });
                }
                out.push((Tok::Int(n), at));
            } else if is_word_char(c) {
                let start = byte;
                while i < chars.len() && is_word_char(chars[i].1) {
                    i += 1;
                }
                let end = chars.get(i).map_or(line.len(), |&(b, _)| b);
                out.push((Tok::Word(line[start..end].to_string()), at));
            } else {
                let p = match c {
                    '{' => "{",
                    '}' => "}",
                    '[' => "[",
                    ']' => "]",
                    ';' => ";",
                    ':' => ":",
                    ',' => ",",
                    _ => return Err(ParseError { at, message: format!("unexpected character `{c}`") }),
                };
                out.push((Tok::Punct(p), at));
                i += 1;
            }
        }
    }
    let last = Location { line: src.lines().count().max(1), col: src.lines().last().map_or(1, |l| l.chars().count() + 1) };
    out.push((Tok::End, last));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, Location)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn at(&self) -> Location {
        self.toks[self.pos].1
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError { at: self.at(), message: message.into() })
    }

    fn next(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if t != Tok::End {
            self.pos += 1;
        }
        t
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Tok::Word(x) if x == w)
    }

    fn punct(&mut self, p: &str) -> Result<(), ParseError> {
        if self.is_punct(p) {
            self.next();
            Ok(())
        } else {
            self.fail(format!("expected `{p}`, found {}", self.peek()))
        }
    }

    fn keyword(&mut self, w: &str) -> Result<(), ParseError> {
        if self.is_word(w) {
            self.next();
            Ok(())
        } else {
            self.fail(format!("expected `{w}`, found {}", self.peek()))
        }
    }

    fn word(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Word(w) => {
                self.next();
                Ok(w)
            }
            other => self.fail(format!("expected a name, found {other}")),
        }
    }

    fn int(&mut self) -> Result<BigInt, ParseError> {
        match self.peek().clone() {
            Tok::Int(n) => {
                self.next();
                Ok(n)
            }
            other => self.fail(format!("expected a number, found {other}")),
        }
    }

    fn nat(&mut self) -> Result<BigInt, ParseError> {
        let at = self.at();
        let n = self.int()?;
        if n.is_negative() {
            return Err(ParseError { at, message: format!("expected a nonnegative number, found {n}") });
        }
        Ok(n)
    }

    fn coord(&mut self, dim: usize) -> Result<Coord, ParseError> {
        let at = self.at();
        let n = self.nat()?;
        match usize::try_from(&n) {
            Ok(c) if c < dim => Ok(c),
            _ => Err(ParseError { at, message: format!("coordinate {n} out of range for dimension {dim}") }),
        }
    }

    fn vector(&mut self, dim: usize) -> Result<Vec<BigInt>, ParseError> {
        let at = self.at();
        self.punct("[")?;
        let mut v = Vec::new();
        if !self.is_punct("]") {
            v.push(self.int()?);
            while self.is_punct(",") {
                self.next();
                v.push(self.int()?);
            }
        }
        self.punct("]")?;
        if v.len() != dim {
            return Err(ParseError { at, message: format!("vector has {} entries, expected {dim}", v.len()) });
        }
        Ok(v)
    }

    /// `{ c:n, c:n }`
    fn assignment(&mut self, dim: usize) -> Result<PartialVector, ParseError> {
        self.punct("{")?;
        let mut p = PartialVector::new();
        while !self.is_punct("}") {
            if !p.is_empty() {
                self.punct(",")?;
            }
            let at = self.at();
            let c = self.coord(dim)?;
            self.punct(":")?;
            let n = self.nat()?;
            if p.insert(c, n).is_some() {
                return Err(ParseError { at, message: format!("coordinate {c} assigned twice") });
            }
        }
        self.punct("}")?;
        Ok(p)
    }

    /// `{ c c c }` (commas optional)
    fn coord_set(&mut self, dim: usize) -> Result<BTreeSet<Coord>, ParseError> {
        self.punct("{")?;
        let mut s = BTreeSet::new();
        while !self.is_punct("}") {
            if self.is_punct(",") {
                self.next();
                continue;
            }
            let at = self.at();
            let c = self.coord(dim)?;
            if !s.insert(c) {
                return Err(ParseError { at, message: format!("coordinate {c} listed twice") });
            }
        }
        self.punct("}")?;
        Ok(s)
    }

    fn state(&mut self, names: &HashMap<String, usize>) -> Result<StateId, ParseError> {
        let at = self.at();
        let w = self.word()?;
        names.get(&w).map(|&s| StateId(s)).ok_or(ParseError { at, message: format!("unknown state `{w}`") })
    }

    fn states(&mut self) -> Result<(Vec<String>, HashMap<String, usize>), ParseError> {
        self.keyword("states")?;
        let mut states = Vec::new();
        let mut names = HashMap::new();
        while !self.is_punct(";") {
            let at = self.at();
            let w = self.word()?;
            if names.insert(w.clone(), states.len()).is_some() {
                return Err(ParseError { at, message: format!("state `{w}` declared twice") });
            }
            states.push(w);
        }
        if states.is_empty() {
            return self.fail("a component needs at least one state");
        }
        self.punct(";")?;
        Ok((states, names))
    }

    /// `arc [name:] p -> q [ .. ] ;`
    fn arc(&mut self, k: usize, dim: usize, names: &HashMap<String, usize>) -> Result<Arc, ParseError> {
        self.keyword("arc")?;
        let mut name = format!("a{k}");
        if matches!(self.toks.get(self.pos + 1), Some((Tok::Punct(":"), _))) {
            name = self.word()?;
            self.punct(":")?;
        }
        let source = self.state(names)?;
        self.punct("->")?;
        let target = self.state(names)?;
        let effect = self.vector(dim)?;
        self.punct(";")?;
        Ok(Arc::new(name, source, effect, target))
    }

    fn component(&mut self, dim: usize) -> Result<Component, ParseError> {
        self.keyword("component")?;
        let name = self.word()?;
        self.punct("{")?;
        let (states, names) = self.states()?;
        self.keyword("initial")?;
        let initial = self.state(&names)?;
        self.punct(";")?;
        self.keyword("final")?;
        let final_state = self.state(&names)?;
        self.punct(";")?;
        let mut rigid = PartialVector::new();
        if self.is_word("rigid") {
            self.next();
            rigid = self.assignment(dim)?;
            self.punct(";")?;
        }
        let mut sides = Vec::new();
        for kw in ["in", "out"] {
            let at = self.at();
            self.keyword(kw)?;
            let fixed = self.assignment(dim)?;
            self.keyword("unconstrained")?;
            let free = self.coord_set(dim)?;
            self.punct(";")?;
            if let Some(c) = (0..dim).find(|&c| !rigid.contains(c) && !fixed.contains(c) && !free.contains(&c)) {
                return Err(ParseError {
                    at,
                    message: format!("coordinate {c} is neither rigid, constrained nor unconstrained on the `{kw}` side"),
                });
            }
            sides.push((fixed, free));
        }
        let mut arcs = Vec::new();
        while self.is_word("arc") {
            arcs.push(self.arc(arcs.len(), dim, &names)?);
        }
        self.punct("}")?;
        let (output, output_free) = sides.pop().expect("two sides");
        let (input, input_free) = sides.pop().expect("two sides");
        Ok(Component { name, states, arcs, initial, final_state, rigid, input, input_free, output, output_free })
    }

    fn dim(&mut self) -> Result<usize, ParseError> {
        self.keyword("dim")?;
        let at = self.at();
        let n = self.nat()?;
        match usize::try_from(&n) {
            Ok(d) if d > 0 => Ok(d),
            _ => Err(ParseError { at, message: format!("dimension must be a positive integer, found {n}") }),
        }
    }

    fn gvass(&mut self) -> Result<Instance, ParseError> {
        self.keyword("gvass")?;
        let dim = self.dim()?;
        let mut components = Vec::new();
        let mut locations = Vec::new();
        let mut connectors = Vec::new();
        loop {
            if self.is_word("component") {
                if !components.is_empty() && connectors.len() != components.len() {
                    return self.fail("consecutive components must be joined by `connect`");
                }
                locations.push(self.at());
                let c: Component = self.component(dim)?;
                if components.iter().any(|d: &Component| d.name == c.name) {
                    return Err(ParseError { at: *locations.last().expect("pushed"), message: format!("component `{}` declared twice", c.name) });
                }
                components.push(c);
            } else if self.is_word("connect") {
                let at = self.at();
                self.next();
                let from = self.word()?;
                self.punct("->")?;
                let to = self.word()?;
                let z = self.vector(dim)?;
                let k = connectors.len();
                let expected = (components.get(k).map(|c| c.name.as_str()), components.get(k + 1).map(|c| c.name.as_str()));
                if expected.0 != Some(from.as_str()) {
                    return Err(ParseError { at, message: format!("connect must start at component {} in declaration order", k + 1) });
                }
                if expected.1.is_some_and(|n| n != to) {
                    return Err(ParseError { at, message: format!("connect must end at the component declared after `{from}`") });
                }
                connectors.push((to, at, z));
            } else if *self.peek() == Tok::End {
                break;
            } else {
                return self.fail(format!("expected `component` or `connect`, found {}", self.peek()));
            }
        }
        if components.is_empty() {
            return self.fail("no components");
        }
        for (k, (to, at, _)) in connectors.iter().enumerate() {
            if components.get(k + 1).map(|c| &c.name) != Some(to) {
                return Err(ParseError { at: *at, message: format!("connect must end at the component declared after component {}", k + 1) });
            }
        }
        if connectors.len() + 1 != components.len() {
            return self.fail(format!("{} components need {} connect lines", components.len(), components.len() - 1));
        }
        let connectors = connectors.into_iter().map(|(_, _, z)| z).collect();
        Ok(Instance { gvass: GVass { dim, components, connectors }, locations })
    }

    fn vass(&mut self) -> Result<Instance, ParseError> {
        let header = self.at();
        self.keyword("vass")?;
        let dim = self.dim()?;
        self.punct("{")?;
        let (states, names) = self.states()?;
        let mut arcs = Vec::new();
        while self.is_word("arc") {
            arcs.push(self.arc(arcs.len(), dim, &names)?);
        }
        let mut ends = Vec::new();
        for kw in ["from", "to"] {
            self.keyword(kw)?;
            let s = self.state(&names)?;
            let at = self.at();
            let v = self.vector(dim)?;
            if let Some(x) = v.iter().find(|x| x.is_negative()) {
                return Err(ParseError { at, message: format!("configuration has negative entry {x}") });
            }
            self.punct(";")?;
            ends.push((s, v));
        }
        self.punct("}")?;
        if *self.peek() != Tok::End {
            return self.fail(format!("unexpected {} after the instance", self.peek()));
        }
        let vass = Vass { dim, states, arcs };
        let gvass = vass_to_gvass(&vass, (ends[0].0, &ends[0].1), (ends[1].0, &ends[1].1))
            .map_err(|e| ParseError { at: header, message: e.to_string() })?;
        Ok(Instance { gvass, locations: vec![header] })
    }
}

pub fn parse(src: &str) -> Result<Instance, ParseError> {
    let mut p = Parser { toks: lex(src)?, pos: 0 };
    if p.is_word("vass") {
        p.vass()
    } else if p.is_word("gvass") {
        p.gvass()
    } else {
        p.fail(format!("expected `gvass` or `vass`, found {}", p.peek()))
    }
}

fn join<T: fmt::Display>(items: impl IntoIterator<Item = T>, sep: &str) -> String {
    items.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}

fn assignment(p: &PartialVector) -> String {
    if p.is_empty() {
        "{ }".into()
    } else {
        format!("{{ {} }}", join(p.iter().map(|(c, n)| format!("{c}:{n}")), ", "))
    }
}

fn coord_set(s: &BTreeSet<Coord>) -> String {
    if s.is_empty() {
        "{ }".into()
    } else {
        format!("{{ {} }}", join(s, " "))
    }
}

/// Prints in the `gvass` form; `parse(print(g))` gives back `g`.
pub fn print(g: &GVass) -> String {
    let mut out = String::new();
    writeln!(out, "gvass dim {}", g.dim).unwrap();
    for (i, c) in g.components.iter().enumerate() {
        if i > 0 {
            let prev = &g.components[i - 1];
            writeln!(out, "connect {} -> {} [{}]", prev.name, c.name, join(&g.connectors[i - 1], ", ")).unwrap();
        }
        writeln!(out, "component {} {{", c.name).unwrap();
        writeln!(out, "  states {} ;", join(&c.states, " ")).unwrap();
        writeln!(out, "  initial {} ;", c.state_name(c.initial)).unwrap();
        writeln!(out, "  final {} ;", c.state_name(c.final_state)).unwrap();
        if !c.rigid.is_empty() {
            writeln!(out, "  rigid {} ;", assignment(&c.rigid)).unwrap();
        }
        writeln!(out, "  in {} unconstrained {} ;", assignment(&c.input), coord_set(&c.input_free)).unwrap();
        writeln!(out, "  out {} unconstrained {} ;", assignment(&c.output), coord_set(&c.output_free)).unwrap();
        for a in &c.arcs {
            writeln!(
                out,
                "  arc {}: {} -> {} [{}] ;",
                a.name,
                c.state_name(a.source),
                c.state_name(a.target),
                join(&a.effect, ", ")
            )
            .unwrap();
        }
        writeln!(out, "}}").unwrap();
    }
    out
}
