//! Text form of an [`IntProgram`]:
//!
//! ```text
//! fxp 1
//! inputs 1
//! var t0 s32.24
//! var t1 s16.12
//! t0 = in 0
//! t1 = const -1229
//! t2 = (t0 * t1) >> 24
//! t3 = ((t2 << 0) + (t1 << 2)) >> 1
//! t4 = max0(t3) >> 0
//! t5 = fdiv(1 << 30, t4)
//! out 0 = t5
//! ```

use super::{FixedError, FixedFormat, IntInstr, IntProgram};

fn shift_suffix(s: i32) -> String {
    if s >= 0 {
        format!(" >> {s}")
    } else {
        format!(" << {}", -s)
    }
}

pub fn emit(p: &IntProgram) -> String {
    let mut out = format!("fxp 1\ninputs {}\n", p.inputs);
    for (i, f) in p.formats.iter().enumerate() {
        out += &format!("var t{i} {f}\n");
    }
    for (i, ins) in p.instrs.iter().enumerate() {
        let rhs = match ins {
            IntInstr::In(k) => format!("in {k}"),
            IntInstr::Const(c) => format!("const {c}"),
            IntInstr::Add { a, la, b, lb, shift } | IntInstr::Sub { a, la, b, lb, shift } => {
                let op = if matches!(ins, IntInstr::Add { .. }) { '+' } else { '-' };
                format!("((t{a} << {la}) {op} (t{b} << {lb})){}", shift_suffix(*shift))
            }
            IntInstr::Mul { a, b, shift } => format!("(t{a} * t{b}){}", shift_suffix(*shift)),
            IntInstr::Max0 { a, shift } => format!("max0(t{a}){}", shift_suffix(*shift)),
            IntInstr::Recip { a, s } => format!("fdiv(1 << {s}, t{a})"),
        };
        out += &format!("t{i} = {rhs}\n");
    }
    for (k, o) in p.outputs.iter().enumerate() {
        out += &format!("out {k} = t{o}\n");
    }
    out
}

fn tokens(s: &str) -> Vec<String> {
    let mut v = Vec::new();
    let cs: Vec<char> = s.chars().collect();
    let mut i = 0;
    while i < cs.len() {
        let c = cs[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_alphanumeric() || c == '_' || c == '.' {
            let st = i;
            while i < cs.len() && (cs[i].is_ascii_alphanumeric() || cs[i] == '_' || cs[i] == '.') {
                i += 1;
            }
            v.push(cs[st..i].iter().collect());
        } else if (c == '<' || c == '>') && cs.get(i + 1) == Some(&c) {
            v.push(format!("{c}{c}"));
            i += 2;
        } else {
            v.push(c.to_string());
            i += 1;
        }
    }
    v
}

struct Line {
    toks: Vec<String>,
    pos: usize,
    line: usize,
}

impl Line {
    fn err<T>(&self, reason: impl Into<String>) -> Result<T, FixedError> {
        Err(FixedError::Parse {
            line: self.line,
            reason: reason.into(),
        })
    }

    fn next(&mut self) -> Result<String, FixedError> {
        match self.toks.get(self.pos) {
            Some(t) => {
                self.pos += 1;
                Ok(t.clone())
            }
            None => self.err("unexpected end of line"),
        }
    }

    fn expect(&mut self, t: &str) -> Result<(), FixedError> {
        let got = self.next()?;
        if got != t {
            return self.err(format!("expected `{t}`, found `{got}`"));
        }
        Ok(())
    }

    fn num<T: std::str::FromStr>(&mut self) -> Result<T, FixedError> {
        let t = self.next()?;
        t.parse().or_else(|_| self.err(format!("bad number `{t}`")))
    }

    fn temp(&mut self, defined: usize) -> Result<usize, FixedError> {
        let t = self.next()?;
        match t.strip_prefix('t').and_then(|n| n.parse::<usize>().ok()) {
            Some(i) if i < defined => Ok(i),
            Some(i) => self.err(format!("t{i} used before definition")),
            None => self.err(format!("expected a temporary, found `{t}`")),
        }
    }

    fn shift(&mut self) -> Result<i32, FixedError> {
        match self.next()?.as_str() {
            ">>" => self.num(),
            "<<" => Ok(-self.num::<i32>()?),
            t => self.err(format!("expected a shift, found `{t}`")),
        }
    }

    fn done(&self) -> Result<(), FixedError> {
        if self.pos != self.toks.len() {
            return self.err(format!("trailing `{}`", self.toks[self.pos]));
        }
        Ok(())
    }
}

fn parse_format(l: &Line, s: &str) -> Result<FixedFormat, FixedError> {
    let bad = || FixedError::Parse {
        line: l.line,
        reason: format!("bad format `{s}`"),
    };
    let rest = s.strip_prefix('s').ok_or_else(bad)?;
    let (q, pi) = rest.split_once('.').ok_or_else(bad)?;
    let (q, pi): (u32, u32) = (q.parse().map_err(|_| bad())?, pi.parse().map_err(|_| bad())?);
    if q == 0 || q > 64 || pi >= q {
        return Err(bad());
    }
    Ok(FixedFormat::new(q, pi))
}

/// Reads the text produced by [`emit`].
pub fn parse_emitted(text: &str) -> Result<IntProgram, FixedError> {
    let mut p = IntProgram {
        inputs: 0,
        formats: Vec::new(),
        instrs: Vec::new(),
        outputs: Vec::new(),
    };
    let mut saw_header = false;
    for (n, raw) in text.lines().enumerate() {
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut l = Line {
            toks: tokens(body),
            pos: 0,
            line: n + 1,
        };
        if !saw_header {
            l.expect("fxp")?;
            l.expect("1")?;
            l.done()?;
            saw_header = true;
            continue;
        }
        let head = l.next()?;
        match head.as_str() {
            "inputs" => p.inputs = l.num()?,
            "var" => {
                let idx = l.temp(usize::MAX)?;
                if idx != p.formats.len() {
                    return l.err(format!("expected t{}", p.formats.len()));
                }
                let f = l.next()?;
                p.formats.push(parse_format(&l, &f)?);
            }
            "out" => {
                let k: usize = l.num()?;
                if k != p.outputs.len() {
                    return l.err(format!("expected out {}", p.outputs.len()));
                }
                l.expect("=")?;
                p.outputs.push(l.temp(p.instrs.len())?);
            }
            t if t.starts_with('t') => {
                l.pos = 0;
                let idx = l.temp(usize::MAX)?;
                if idx != p.instrs.len() || idx >= p.formats.len() {
                    return l.err(format!("unexpected definition of t{idx}"));
                }
                l.expect("=")?;
                let d = p.instrs.len();
                let first = l.next()?;
                let ins = match first.as_str() {
                    "in" => {
                        let k: usize = l.num()?;
                        if k >= p.inputs {
                            return l.err(format!("input {k} out of range"));
                        }
                        IntInstr::In(k)
                    }
                    "const" => {
                        let neg = l.toks.get(l.pos).map(|t| t == "-").unwrap_or(false);
                        if neg {
                            l.pos += 1;
                        }
                        let v: i128 = l.num()?;
                        IntInstr::Const(if neg { -v } else { v })
                    }
                    "max0" => {
                        l.expect("(")?;
                        let a = l.temp(d)?;
                        l.expect(")")?;
                        IntInstr::Max0 { a, shift: l.shift()? }
                    }
                    "fdiv" => {
                        l.expect("(")?;
                        l.expect("1")?;
                        l.expect("<<")?;
                        let s: u32 = l.num()?;
                        l.expect(",")?;
                        let a = l.temp(d)?;
                        l.expect(")")?;
                        IntInstr::Recip { a, s }
                    }
                    "(" => {
                        if l.toks.get(l.pos).map(|t| t == "(").unwrap_or(false) {
                            l.pos += 1;
                            let a = l.temp(d)?;
                            l.expect("<<")?;
                            let la: u32 = l.num()?;
                            l.expect(")")?;
                            let op = l.next()?;
                            l.expect("(")?;
                            let b = l.temp(d)?;
                            l.expect("<<")?;
                            let lb: u32 = l.num()?;
                            l.expect(")")?;
                            l.expect(")")?;
                            let shift = l.shift()?;
                            match op.as_str() {
                                "+" => IntInstr::Add { a, la, b, lb, shift },
                                "-" => IntInstr::Sub { a, la, b, lb, shift },
                                o => return l.err(format!("unknown operator `{o}`")),
                            }
                        } else {
                            let a = l.temp(d)?;
                            l.expect("*")?;
                            let b = l.temp(d)?;
                            l.expect(")")?;
                            IntInstr::Mul { a, b, shift: l.shift()? }
                        }
                    }
                    o => return l.err(format!("unknown instruction `{o}`")),
                };
                p.instrs.push(ins);
            }
            o => return l.err(format!("unknown line `{o}`")),
        }
        l.done()?;
    }
    if !saw_header {
        return Err(FixedError::Parse {
            line: 0,
            reason: "missing `fxp 1` header".into(),
        });
    }
    if p.instrs.len() != p.formats.len() {
        return Err(FixedError::Parse {
            line: text.lines().count(),
            reason: format!("{} variables but {} definitions", p.formats.len(), p.instrs.len()),
        });
    }
    Ok(p)
}
