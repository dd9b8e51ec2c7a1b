use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Execution, Sample, TaskAdapter, TaskError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Add,
    Sub,
    Mul,
}

impl Op {
    fn apply(self, a: i64, b: i64) -> Option<i64> {
        match self {
            Op::Add => a.checked_add(b),
            Op::Sub => a.checked_sub(b),
            Op::Mul => a.checked_mul(b),
        }
    }

    fn call_name(self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
        }
    }

    fn symbol(self) -> char {
        match self {
            Op::Add => '+',
            Op::Sub => '-',
            Op::Mul => '*',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Expr {
    Num(i64),
    Bin(Op, Box<Expr>, Box<Expr>),
}

impl Expr {
    fn eval(&self) -> Result<i64, String> {
        match self {
            Expr::Num(n) => Ok(*n),
            Expr::Bin(op, a, b) => op.apply(a.eval()?, b.eval()?).ok_or_else(|| "integer overflow".to_string()),
        }
    }

    fn to_calls(&self) -> String {
        match self {
            Expr::Num(n) => n.to_string(),
            Expr::Bin(op, a, b) => format!("{}({}, {})", op.call_name(), a.to_calls(), b.to_calls()),
        }
    }
}

struct Cursor<'a> {
    s: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(s: &'a str) -> Self {
        Self { s: s.as_bytes(), pos: 0 }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn err(&self, msg: impl std::fmt::Display) -> String {
        format!("syntax error at column {}: {msg}", self.pos + 1)
    }

    fn number(&mut self) -> Result<i64, String> {
        self.skip_ws();
        let start = self.pos;
        if self.s.get(self.pos) == Some(&b'-') {
            self.pos += 1;
        }
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.s[start..self.pos]).expect("ascii");
        text.parse().map_err(|_| {
            self.pos = start;
            self.err("expected a number")
        })
    }

    fn ident(&mut self) -> &'a str {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_alphabetic() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.s[start..self.pos]).expect("ascii")
    }

    fn expect(&mut self, c: u8) -> Result<(), String> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected '{}'", c as char)))
        }
    }
}

const CALL_HINT: &str = "the calculator only accepts calls such as add(2, 3), sub(7, 4) and mul(6, 5)";

fn calc_expr(c: &mut Cursor) -> Result<Expr, String> {
    match c.peek() {
        None => Err(c.err("unexpected end of program")),
        Some(b) if b.is_ascii_digit() || b == b'-' => Ok(Expr::Num(c.number()?)),
        Some(b) if b.is_ascii_alphabetic() => {
            let at = c.pos;
            let name = c.ident();
            let op = match name {
                "add" => Op::Add,
                "sub" => Op::Sub,
                "mul" => Op::Mul,
                other => {
                    c.pos = at;
                    return Err(c.err(format!("unknown function '{other}'; {CALL_HINT}")));
                }
            };
            c.expect(b'(')?;
            let a = calc_expr(c)?;
            c.expect(b',')?;
            let b = calc_expr(c)?;
            c.expect(b')')?;
            Ok(Expr::Bin(op, Box::new(a), Box::new(b)))
        }
        Some(b) => Err(c.err(format!("unexpected '{}'", b as char))),
    }
}

/// Evaluate a calculator program: an integer or nested `add`/`sub`/`mul` calls.
pub fn calc_eval(program: &str) -> Result<i64, String> {
    let mut c = Cursor::new(program);
    if c.peek().is_none() {
        return Err("empty program".into());
    }
    let e = calc_expr(&mut c)?;
    match c.peek() {
        None => e.eval(),
        Some(b @ (b'+' | b'-' | b'*' | b'/')) => Err(c.err(format!("infix operator '{}' is not supported; {CALL_HINT}", b as char))),
        Some(b) => Err(c.err(format!("unexpected '{}' after end of expression", b as char))),
    }
}

fn infix_sum(c: &mut Cursor) -> Result<Expr, String> {
    let mut lhs = infix_product(c)?;
    loop {
        let op = match c.peek() {
            Some(b'+') => Op::Add,
            Some(b'-') => Op::Sub,
            _ => return Ok(lhs),
        };
        c.pos += 1;
        lhs = Expr::Bin(op, Box::new(lhs), Box::new(infix_product(c)?));
    }
}

fn infix_product(c: &mut Cursor) -> Result<Expr, String> {
    let mut lhs = infix_atom(c)?;
    while c.peek() == Some(b'*') {
        c.pos += 1;
        lhs = Expr::Bin(Op::Mul, Box::new(lhs), Box::new(infix_atom(c)?));
    }
    Ok(lhs)
}

fn infix_atom(c: &mut Cursor) -> Result<Expr, String> {
    if c.peek() == Some(b'(') {
        c.pos += 1;
        let e = infix_sum(c)?;
        c.expect(b')')?;
        Ok(e)
    } else {
        Ok(Expr::Num(c.number()?))
    }
}

fn parse_infix(expr: &str) -> Result<Expr, String> {
    let mut c = Cursor::new(expr);
    let e = infix_sum(&mut c)?;
    match c.peek() {
        None => Ok(e),
        Some(b) => Err(c.err(format!("unexpected '{}'", b as char))),
    }
}

/// Evaluate an infix expression over `+ - *` and parentheses.
pub fn infix_eval(expr: &str) -> Result<i64, String> {
    parse_infix(expr)?.eval()
}

/// Arithmetic tasks answered by writing a program for a calculator that
/// rejects infix notation. Execution reports whether the program ran and
/// solved the task, which is all the Reflector gets in label-free runs.
#[derive(Debug, Clone)]
pub struct ArithEnv {
    samples: Vec<Sample>,
}

impl ArithEnv {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ops = [Op::Add, Op::Sub, Op::Mul];
        let samples = (0..n_samples)
            .map(|i| {
                let (a, b, c) = (rng.gen_range(2..30), rng.gen_range(2..30), rng.gen_range(2..30));
                let (o1, o2) = (ops[rng.gen_range(0..3)], ops[rng.gen_range(0..3)]);
                let expr = format!("{a} {} {b} {} {c}", o1.symbol(), o2.symbol());
                let value = infix_eval(&expr).expect("generated expression evaluates");
                Sample {
                    id: format!("ar-{:04}", i + 1),
                    query: Self::question(&expr),
                    label: Some(value.to_string()),
                }
            })
            .collect();
        Self { samples }
    }

    pub fn from_samples(samples: Vec<Sample>) -> Self {
        Self { samples }
    }

    pub fn question(expr: &str) -> String {
        format!("Compute {expr} using the calculator.")
    }

    /// The infix expression inside a query produced by [`ArithEnv::question`].
    pub fn expression(query: &str) -> Option<&str> {
        query.strip_prefix("Compute ")?.strip_suffix(" using the calculator.")
    }

    /// The calculator program that solves an infix expression.
    pub fn program_for(expr: &str) -> Result<String, String> {
        Ok(parse_infix(expr)?.to_calls())
    }
}

impl TaskAdapter for ArithEnv {
    fn name(&self) -> &str {
        "arith-env"
    }

    fn samples(&self) -> Vec<Sample> {
        self.samples.clone()
    }

    fn judge(&self, prediction: &str, label: &str) -> bool {
        match (calc_eval(prediction), label.trim().parse::<i64>()) {
            (Ok(v), Ok(want)) => v == want,
            _ => false,
        }
    }

    /// Runs the program and checks it against the task's own expression.
    fn execute(&self, sample_id: &str, query: &str, prediction: &str) -> Result<Option<Execution>, TaskError> {
        let env_err = |message: String| TaskError::Environment {
            sample_id: sample_id.to_string(),
            message,
        };
        let expr = Self::expression(query).ok_or_else(|| env_err(format!("not an arithmetic task: {query:?}")))?;
        let target = infix_eval(expr).map_err(env_err)?;
        let exec = match calc_eval(prediction) {
            Err(e) => Execution {
                success: false,
                log: format!("$ calc {prediction:?}\n{e}"),
            },
            Ok(v) if v == target => Execution {
                success: true,
                log: format!("$ calc {prediction:?}\n{v}\ntask check passed"),
            },
            Ok(v) => Execution {
                success: false,
                log: format!("$ calc {prediction:?}\n{v}\ntask check failed"),
            },
        };
        Ok(Some(exec))
    }

    fn preamble(&self) -> &str {
        "You operate a calculator. Put a single calculator program on the FINAL ANSWER line."
    }
}
