//! Oracles shared by the integration tests. Each one is written against the
//! mathematical definition, independently of the library code it checks.
#![allow(dead_code)]

use gflow_core::groupoid::{FiniteGroupoid, FiniteMorphism};

/// Fixed precedence corpus, evaluated at `x1 = 0.7, x2 = -1.3, x3 = 2.1`.
pub const PARSER_CORPUS: [&str; 32] = [
    "2+3*4",
    "(2+3)*4",
    "2-3-4",
    "2/3/4",
    "2^3^2",
    "-2^2",
    "(-2)^2",
    "2^-1",
    "-x2^2",
    "x1*x2+x3",
    "x1+x2*x3",
    "x1-x2/x3*x1",
    "x1^2+x2^2",
    "-x1*-x2",
    "--x1",
    "2^-x1^2",
    "sin(x1)^2+cos(x1)^2",
    "exp(log(x3))",
    "sqrt(x1^2+x2^2)",
    "abs(x2)*tanh(x1)",
    "min(x1,x2)+max(x1,x3)",
    "bump((x1-1)/2)",
    "bump(x1)*x3^3",
    "tan(x1/2)-x2",
    "1/(1+x1^2)",
    "x3^0.5*x3^1.5",
    "pi*x1^2",
    "-(x1+x2)*(x1-x2)",
    "x1*(x2*(x3+1)-2)/3",
    "2*x1^3-3*x2^2+x3-1",
    "max(min(x1,x2),-x3)^2",
    "1-2+3-4+5*6/7^2",
];

pub const CORPUS_POINT: [f64; 3] = [0.7, -1.3, 2.1];

fn bump(s: f64) -> f64 {
    if s.abs() < 1.0 {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

fn lex(src: &str) -> Vec<Tok> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            out.push(Tok::Num(chars[start..i].iter().collect::<String>().parse().unwrap()));
        } else if c.is_ascii_alphabetic() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else {
            out.push(match c {
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                ',' => Tok::Comma,
                _ => Tok::Op(c),
            });
            i += 1;
        }
    }
    out
}

#[derive(Debug, Clone)]
enum Stack {
    Op(char),
    /// Unary minus.
    Neg,
    Func(String),
    LParen,
}

fn prec(op: &Stack) -> (u8, bool) {
    match op {
        Stack::Op('+') | Stack::Op('-') => (1, false),
        Stack::Op('*') | Stack::Op('/') => (2, false),
        Stack::Neg => (3, true),
        Stack::Op('^') => (4, true),
        _ => (0, false),
    }
}

/// Dijkstra's shunting-yard algorithm to reverse Polish notation, then a stack evaluation.
pub fn shunting_yard(src: &str, x: &[f64]) -> f64 {
    let mut values_out: Vec<Result<f64, Stack>> = Vec::new();
    let mut ops: Vec<Stack> = Vec::new();
    let mut arity: Vec<usize> = Vec::new();
    let mut prev_operand = false;
    for tok in lex(src) {
        match tok {
            Tok::Num(v) => {
                values_out.push(Ok(v));
                prev_operand = true;
            }
            Tok::Ident(name) => {
                if let Some(i) = name.strip_prefix('x').and_then(|d| d.parse::<usize>().ok()) {
                    values_out.push(Ok(x[i - 1]));
                    prev_operand = true;
                } else if name == "pi" {
                    values_out.push(Ok(std::f64::consts::PI));
                    prev_operand = true;
                } else {
                    ops.push(Stack::Func(name));
                    prev_operand = false;
                }
            }
            Tok::Op('-') if !prev_operand => ops.push(Stack::Neg),
            Tok::Op(c) => {
                let incoming = Stack::Op(c);
                let (p, right) = prec(&incoming);
                while let Some(top) = ops.last() {
                    let (q, _) = prec(top);
                    let pops = matches!(top, Stack::Op(_) | Stack::Neg) && (q > p || (q == p && !right));
                    if !pops {
                        break;
                    }
                    values_out.push(Err(ops.pop().unwrap()));
                }
                ops.push(incoming);
                prev_operand = false;
            }
            Tok::LParen => {
                ops.push(Stack::LParen);
                arity.push(1);
                prev_operand = false;
            }
            Tok::Comma => {
                while !matches!(ops.last(), Some(Stack::LParen)) {
                    values_out.push(Err(ops.pop().unwrap()));
                }
                *arity.last_mut().unwrap() += 1;
                prev_operand = false;
            }
            Tok::RParen => {
                while !matches!(ops.last(), Some(Stack::LParen)) {
                    values_out.push(Err(ops.pop().unwrap()));
                }
                ops.pop();
                let n = arity.pop().unwrap();
                if let Some(Stack::Func(f)) = ops.last().cloned() {
                    ops.pop();
                    values_out.push(Err(Stack::Func(format!("{f}/{n}"))));
                }
                prev_operand = true;
            }
        }
    }
    while let Some(op) = ops.pop() {
        values_out.push(Err(op));
    }

    let mut st: Vec<f64> = Vec::new();
    for item in values_out {
        match item {
            Ok(v) => st.push(v),
            Err(Stack::Neg) => {
                let a = st.pop().unwrap();
                st.push(-a);
            }
            Err(Stack::Op(c)) => {
                let b = st.pop().unwrap();
                let a = st.pop().unwrap();
                st.push(match c {
                    '+' => a + b,
                    '-' => a - b,
                    '*' => a * b,
                    '/' => a / b,
                    '^' => a.powf(b),
                    _ => panic!("operator {c}"),
                });
            }
            Err(Stack::Func(sig)) => {
                let (name, n) = sig.split_once('/').unwrap();
                let n: usize = n.parse().unwrap();
                let args: Vec<f64> = st.split_off(st.len() - n);
                st.push(match name {
                    "sin" => args[0].sin(),
                    "cos" => args[0].cos(),
                    "tan" => args[0].tan(),
                    "exp" => args[0].exp(),
                    "log" => args[0].ln(),
                    "sqrt" => args[0].sqrt(),
                    "tanh" => args[0].tanh(),
                    "abs" => args[0].abs(),
                    "bump" => bump(args[0]),
                    "min" => args[0].min(args[1]),
                    "max" => args[0].max(args[1]),
                    _ => panic!("function {name}"),
                });
            }
            Err(other) => panic!("unexpected {other:?}"),
        }
    }
    assert_eq!(st.len(), 1, "malformed corpus entry {src}");
    st[0]
}

/// Counts natural transformations `f ⇒ g` by backtracking over objects,
/// pruning as soon as a naturality square between assigned objects fails.
pub fn count_natural_transformations(
    from: &FiniteGroupoid,
    to: &FiniteGroupoid,
    f: &FiniteMorphism,
    g: &FiniteMorphism,
) -> u64 {
    fn square_ok(from: &FiniteGroupoid, to: &FiniteGroupoid, f: &FiniteMorphism, g: &FiniteMorphism, phi: &[usize], a: usize) -> bool {
        let (x, y) = (from.source(a), from.target(a));
        // f(a) then phi_y equals phi_x then g(a).
        to.compose(f.arrows[a], phi[y]) == to.compose(phi[x], g.arrows[a])
    }
    fn go(
        from: &FiniteGroupoid,
        to: &FiniteGroupoid,
        f: &FiniteMorphism,
        g: &FiniteMorphism,
        phi: &mut Vec<usize>,
    ) -> u64 {
        let x = phi.len();
        if x == from.object_count() {
            return 1;
        }
        let mut total = 0;
        for c in 0..to.arrow_count() {
            if to.source(c) != f.objects[x] || to.target(c) != g.objects[x] {
                continue;
            }
            phi.push(c);
            let ok = (0..from.arrow_count())
                .filter(|&a| from.source(a) <= x && from.target(a) <= x)
                .all(|a| square_ok(from, to, f, g, phi, a));
            if ok {
                total += go(from, to, f, g, phi);
            }
            phi.pop();
        }
        total
    }
    go(from, to, f, g, &mut Vec::new())
}
