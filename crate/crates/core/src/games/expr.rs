//! Expression trees for custom games.
//!
//! Written as s-expressions over the atoms `x<j>`, `p<j>` and decimal
//! constants:
//!
//! ```text
//! (+ a b ...)   (- a b)   (- a)   (* a b ...)   (/ a b)
//! (tanh a)   (exp a)   (log a)   (sqrt a)   (sq a)
//! (dot a1 .. ak b1 .. bk)        ; Σ a_j b_j
//! ```

use std::fmt;

use crate::autodiff::{Tape, Unary, Var};
use crate::linalg::Mat;
use crate::textfmt::{fmt_f64, parse_f64};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    X(usize),
    P(usize),
    Add(Vec<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Mul(Vec<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Tanh(Box<Expr>),
    Exp(Box<Expr>),
    Log(Box<Expr>),
    Sqrt(Box<Expr>),
    Square(Box<Expr>),
    Dot(Vec<Expr>, Vec<Expr>),
}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr> {
        let tokens = tokenize(text);
        let mut pos = 0;
        let e = parse_tokens(&tokens, &mut pos)?;
        if pos != tokens.len() {
            return Err(Error::parse("expression", format!("trailing input in {text:?}")));
        }
        Ok(e)
    }

    /// Largest `x` and `p` indices referenced, plus one.
    pub fn arity(&self) -> (usize, usize) {
        let mut nx = 0;
        let mut np = 0;
        self.visit(&mut |e| match e {
            Expr::X(j) => nx = nx.max(j + 1),
            Expr::P(j) => np = np.max(j + 1),
            _ => {}
        });
        (nx, np)
    }

    fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Const(_) | Expr::X(_) | Expr::P(_) => {}
            Expr::Add(v) | Expr::Mul(v) => v.iter().for_each(|e| e.visit(f)),
            Expr::Sub(a, b) | Expr::Div(a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Expr::Neg(a) | Expr::Tanh(a) | Expr::Exp(a) | Expr::Log(a) | Expr::Sqrt(a) | Expr::Square(a) => {
                a.visit(f)
            }
            Expr::Dot(a, b) => a.iter().chain(b).for_each(|e| e.visit(f)),
        }
    }

    pub fn eval(&self, x: &[f64], p: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::X(j) => x[*j],
            Expr::P(j) => p[*j],
            Expr::Add(v) => v.iter().map(|e| e.eval(x, p)).sum(),
            Expr::Sub(a, b) => a.eval(x, p) - b.eval(x, p),
            Expr::Neg(a) => -a.eval(x, p),
            Expr::Mul(v) => v.iter().map(|e| e.eval(x, p)).product(),
            Expr::Div(a, b) => a.eval(x, p) / b.eval(x, p),
            Expr::Tanh(a) => a.eval(x, p).tanh(),
            Expr::Exp(a) => a.eval(x, p).exp(),
            Expr::Log(a) => a.eval(x, p).ln(),
            Expr::Sqrt(a) => a.eval(x, p).sqrt(),
            Expr::Square(a) => a.eval(x, p).powi(2),
            Expr::Dot(a, b) => a.iter().zip(b).map(|(u, v)| u.eval(x, p) * v.eval(x, p)).sum(),
        }
    }

    /// Value and gradient with respect to `x` (forward mode).
    pub fn eval_grad(&self, x: &[f64], p: &[f64]) -> (f64, Vec<f64>) {
        let n = x.len();
        let scaled = |g: Vec<f64>, s: f64| -> Vec<f64> { g.into_iter().map(|v| v * s).collect() };
        let combine = |a: &[f64], sa: f64, b: &[f64], sb: f64| -> Vec<f64> {
            a.iter().zip(b).map(|(u, v)| sa * u + sb * v).collect()
        };
        match self {
            Expr::Const(c) => (*c, vec![0.0; n]),
            Expr::X(j) => {
                let mut g = vec![0.0; n];
                g[*j] = 1.0;
                (x[*j], g)
            }
            Expr::P(j) => (p[*j], vec![0.0; n]),
            Expr::Add(v) => {
                let mut val = 0.0;
                let mut g = vec![0.0; n];
                for e in v {
                    let (a, ga) = e.eval_grad(x, p);
                    val += a;
                    g.iter_mut().zip(ga).for_each(|(u, w)| *u += w);
                }
                (val, g)
            }
            Expr::Sub(a, b) => {
                let ((va, ga), (vb, gb)) = (a.eval_grad(x, p), b.eval_grad(x, p));
                (va - vb, combine(&ga, 1.0, &gb, -1.0))
            }
            Expr::Neg(a) => {
                let (v, g) = a.eval_grad(x, p);
                (-v, scaled(g, -1.0))
            }
            Expr::Mul(v) => {
                let mut val = 1.0;
                let mut g = vec![0.0; n];
                for e in v {
                    let (b, gb) = e.eval_grad(x, p);
                    g = combine(&g, b, &gb, val);
                    val *= b;
                }
                (val, g)
            }
            Expr::Div(a, b) => {
                let ((va, ga), (vb, gb)) = (a.eval_grad(x, p), b.eval_grad(x, p));
                (va / vb, combine(&ga, 1.0 / vb, &gb, -va / (vb * vb)))
            }
            Expr::Tanh(a) => {
                let (v, g) = a.eval_grad(x, p);
                let t = v.tanh();
                (t, scaled(g, 1.0 - t * t))
            }
            Expr::Exp(a) => {
                let (v, g) = a.eval_grad(x, p);
                let e = v.exp();
                (e, scaled(g, e))
            }
            Expr::Log(a) => {
                let (v, g) = a.eval_grad(x, p);
                (v.ln(), scaled(g, 1.0 / v))
            }
            Expr::Sqrt(a) => {
                let (v, g) = a.eval_grad(x, p);
                let s = v.sqrt();
                (s, scaled(g, 0.5 / s))
            }
            Expr::Square(a) => {
                let (v, g) = a.eval_grad(x, p);
                (v * v, scaled(g, 2.0 * v))
            }
            Expr::Dot(a, b) => {
                let mut val = 0.0;
                let mut g = vec![0.0; n];
                for (u, w) in a.iter().zip(b) {
                    let ((vu, gu), (vw, gw)) = (u.eval_grad(x, p), w.eval_grad(x, p));
                    val += vu * vw;
                    for k in 0..n {
                        g[k] += vw * gu[k] + vu * gw[k];
                    }
                }
                (val, g)
            }
        }
    }

    /// Batch evaluation on a tape: `x` is `K x n_x`, `p` is `K x n_p`; returns `K x 1`.
    pub fn tape(&self, tape: &mut Tape, x: Var, p: Var) -> Var {
        let k = tape.shape(x).0;
        match self {
            Expr::Const(c) => tape.constant(Mat::from_vec(k, 1, vec![*c; k])),
            Expr::X(j) => tape.col(x, *j),
            Expr::P(j) => tape.col(p, *j),
            Expr::Add(v) => {
                let mut acc = v[0].tape(tape, x, p);
                for e in &v[1..] {
                    let t = e.tape(tape, x, p);
                    acc = tape.add(acc, t);
                }
                acc
            }
            Expr::Sub(a, b) => {
                let (ta, tb) = (a.tape(tape, x, p), b.tape(tape, x, p));
                tape.sub(ta, tb)
            }
            Expr::Neg(a) => {
                let t = a.tape(tape, x, p);
                tape.scale(t, -1.0)
            }
            Expr::Mul(v) => {
                let mut acc = v[0].tape(tape, x, p);
                for e in &v[1..] {
                    let t = e.tape(tape, x, p);
                    acc = tape.mul(acc, t);
                }
                acc
            }
            Expr::Div(a, b) => {
                let (ta, tb) = (a.tape(tape, x, p), b.tape(tape, x, p));
                tape.div(ta, tb)
            }
            Expr::Tanh(a) => self.unary(tape, a, x, p, Unary::Tanh),
            Expr::Exp(a) => self.unary(tape, a, x, p, Unary::Exp),
            Expr::Log(a) => self.unary(tape, a, x, p, Unary::Log),
            Expr::Sqrt(a) => self.unary(tape, a, x, p, Unary::Sqrt),
            Expr::Square(a) => self.unary(tape, a, x, p, Unary::Square),
            Expr::Dot(a, b) => {
                let mut acc: Option<Var> = None;
                for (u, w) in a.iter().zip(b) {
                    let (tu, tw) = (u.tape(tape, x, p), w.tape(tape, x, p));
                    let prod = tape.mul(tu, tw);
                    acc = Some(match acc {
                        Some(s) => tape.add(s, prod),
                        None => prod,
                    });
                }
                acc.unwrap_or_else(|| tape.constant(Mat::zeros(k, 1)))
            }
        }
    }

    fn unary(&self, tape: &mut Tape, a: &Expr, x: Var, p: Var, f: Unary) -> Var {
        let t = a.tape(tape, x, p);
        tape.unary(t, f)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |f: &mut fmt::Formatter<'_>, op: &str, items: &[&Expr]| -> fmt::Result {
            write!(f, "({op}")?;
            for e in items {
                write!(f, " {e}")?;
            }
            write!(f, ")")
        };
        match self {
            Expr::Const(c) => write!(f, "{}", fmt_f64(*c)),
            Expr::X(j) => write!(f, "x{j}"),
            Expr::P(j) => write!(f, "p{j}"),
            Expr::Add(v) => list(f, "+", &v.iter().collect::<Vec<_>>()),
            Expr::Mul(v) => list(f, "*", &v.iter().collect::<Vec<_>>()),
            Expr::Sub(a, b) => list(f, "-", &[a, b]),
            Expr::Div(a, b) => list(f, "/", &[a, b]),
            Expr::Neg(a) => list(f, "-", &[a]),
            Expr::Tanh(a) => list(f, "tanh", &[a]),
            Expr::Exp(a) => list(f, "exp", &[a]),
            Expr::Log(a) => list(f, "log", &[a]),
            Expr::Sqrt(a) => list(f, "sqrt", &[a]),
            Expr::Square(a) => list(f, "sq", &[a]),
            Expr::Dot(a, b) => list(f, "dot", &a.iter().chain(b).collect::<Vec<_>>()),
        }
    }
}

fn tokenize(text: &str) -> Vec<String> {
    text.replace('(', " ( ")
        .replace(')', " ) ")
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn parse_tokens(tokens: &[String], pos: &mut usize) -> Result<Expr> {
    let err = |m: String| Error::parse("expression", m);
    let tok = tokens.get(*pos).ok_or_else(|| err("unexpected end of input".into()))?;
    *pos += 1;
    if tok == ")" {
        return Err(err("unexpected ')'".into()));
    }
    if tok != "(" {
        return parse_atom(tok);
    }
    let op = tokens
        .get(*pos)
        .ok_or_else(|| err("unexpected end of input".into()))?
        .clone();
    *pos += 1;
    let mut args = Vec::new();
    loop {
        match tokens.get(*pos).map(String::as_str) {
            None => return Err(err("missing ')'".into())),
            Some(")") => {
                *pos += 1;
                break;
            }
            _ => args.push(parse_tokens(tokens, pos)?),
        }
    }
    let arity = |want: usize, args: &[Expr]| -> Result<()> {
        if args.len() == want {
            Ok(())
        } else {
            Err(err(format!("({op} ...) takes {want} argument(s), got {}", args.len())))
        }
    };
    let one = |mut args: Vec<Expr>| Box::new(args.remove(0));
    Ok(match op.as_str() {
        "+" | "*" => {
            if args.is_empty() {
                return Err(err(format!("({op}) needs arguments")));
            }
            if op == "+" {
                Expr::Add(args)
            } else {
                Expr::Mul(args)
            }
        }
        "-" if args.len() == 1 => Expr::Neg(one(args)),
        "-" | "/" => {
            arity(2, &args)?;
            let b = Box::new(args.pop().unwrap());
            let a = Box::new(args.pop().unwrap());
            if op == "-" {
                Expr::Sub(a, b)
            } else {
                Expr::Div(a, b)
            }
        }
        "tanh" | "exp" | "log" | "sqrt" | "sq" => {
            arity(1, &args)?;
            let a = one(args);
            match op.as_str() {
                "tanh" => Expr::Tanh(a),
                "exp" => Expr::Exp(a),
                "log" => Expr::Log(a),
                "sqrt" => Expr::Sqrt(a),
                _ => Expr::Square(a),
            }
        }
        "dot" => {
            if args.is_empty() || args.len() % 2 != 0 {
                return Err(err("(dot ...) needs an even, nonzero number of arguments".into()));
            }
            let b = args.split_off(args.len() / 2);
            Expr::Dot(args, b)
        }
        other => return Err(err(format!("unknown operator {other:?}"))),
    })
}

fn parse_atom(tok: &str) -> Result<Expr> {
    let index = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::parse("expression", format!("bad variable {tok:?}")))
    };
    if let Some(rest) = tok.strip_prefix('x') {
        return Ok(Expr::X(index(rest)?));
    }
    if let Some(rest) = tok.strip_prefix('p') {
        return Ok(Expr::P(index(rest)?));
    }
    Ok(Expr::Const(parse_f64(tok, "expression constant")?))
}
