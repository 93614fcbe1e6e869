//! Scalar field expressions in the coordinates `x`, `y`, `z`.
//!
//! Arithmetic is always floating point: `1/2` is `0.5`. Available functions
//! are `sin`, `cos`, `exp`, `sqrt` and `abs`, and `pi` is predefined.

use evalexpr::{
    build_operator_tree, ContextWithMutableFunctions, ContextWithMutableVariables, DefaultNumericTypes,
    EvalexprError, Function, HashMapContext, Node, Value,
};

type Ctx = HashMapContext<DefaultNumericTypes>;

const AXES: [&str; 3] = ["x", "y", "z"];

#[derive(Debug, Clone)]
pub struct FieldExpr {
    source: String,
    tree: Node<DefaultNumericTypes>,
}

/// Rewrites every numeric literal as a plain decimal with a fractional part,
/// so that evaluation never falls back to integer arithmetic and exponent
/// notation is accepted.
fn float_literals(src: &str) -> String {
    let chars: Vec<char> = src.chars().collect();
    let mut out = String::with_capacity(src.len() + 8);
    let mut k = 0;
    while k < chars.len() {
        let c = chars[k];
        let in_word = k > 0 && (chars[k - 1].is_alphanumeric() || chars[k - 1] == '_');
        if (c.is_ascii_digit() || (c == '.' && chars.get(k + 1).is_some_and(char::is_ascii_digit))) && !in_word {
            let start = k;
            while k < chars.len() && (chars[k].is_ascii_digit() || chars[k] == '.') {
                k += 1;
            }
            if matches!(chars.get(k), Some('e' | 'E')) {
                let mut j = k + 1;
                if matches!(chars.get(j), Some('+' | '-')) {
                    j += 1;
                }
                if chars.get(j).is_some_and(char::is_ascii_digit) {
                    k = j;
                    while k < chars.len() && chars[k].is_ascii_digit() {
                        k += 1;
                    }
                }
            }
            let literal: String = chars[start..k].iter().collect();
            match literal.parse::<f64>() {
                Ok(v) => {
                    let plain = v.to_string();
                    out.push_str(&plain);
                    if !plain.contains('.') {
                        out.push_str(".0");
                    }
                }
                Err(_) => out.push_str(&literal),
            }
            continue;
        }
        out.push(c);
        k += 1;
    }
    out
}

fn unary(f: fn(f64) -> f64) -> Function<DefaultNumericTypes> {
    Function::new(move |arg: &Value<DefaultNumericTypes>| Ok(Value::Float(f(arg.as_number()?))))
}

fn context(point: &[f64]) -> Result<Ctx, EvalexprError<DefaultNumericTypes>> {
    let mut ctx = Ctx::new();
    ctx.set_value("pi".into(), Value::Float(std::f64::consts::PI))?;
    for (axis, name) in AXES.iter().enumerate().take(point.len()) {
        ctx.set_value((*name).into(), Value::Float(point[axis]))?;
    }
    ctx.set_function("sin".into(), unary(f64::sin))?;
    ctx.set_function("cos".into(), unary(f64::cos))?;
    ctx.set_function("exp".into(), unary(f64::exp))?;
    ctx.set_function("sqrt".into(), unary(f64::sqrt))?;
    ctx.set_function("abs".into(), unary(f64::abs))?;
    Ok(ctx)
}

impl FieldExpr {
    pub fn parse(source: &str) -> Result<Self, String> {
        let tree = build_operator_tree::<DefaultNumericTypes>(&float_literals(source))
            .map_err(|e| format!("cannot parse '{source}': {e}"))?;
        Ok(Self {
            source: source.to_string(),
            tree,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Evaluates at a point with one coordinate per axis.
    pub fn eval(&self, point: &[f64]) -> Result<f64, String> {
        let ctx = context(point).map_err(|e| e.to_string())?;
        self.tree
            .eval_number_with_context(&ctx)
            .map_err(|e| format!("cannot evaluate '{}': {e}", self.source))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn at(src: &str, p: &[f64]) -> f64 {
        FieldExpr::parse(src).unwrap().eval(p).unwrap()
    }

    #[test]
    fn arithmetic_is_floating_point() {
        assert_eq!(at("1/2", &[0.0]), 0.5);
        assert_eq!(at("3", &[0.0]), 3.0);
        assert_eq!(at("1e-3 * 2", &[0.0]), 2e-3);
        assert_eq!(at("2.5E1", &[0.0]), 25.0);
    }

    #[test]
    fn coordinates_and_functions() {
        assert!((at("0.15*(1+cos(2*pi*x))", &[0.25]) - 0.15).abs() < 1e-15);
        assert!((at("sin(2*pi*x)*cos(2*pi*y)", &[0.25, 0.0]) - 1.0).abs() < 1e-15);
        assert_eq!(at("x + 10*y + 100*z", &[1.0, 2.0, 3.0]), 321.0);
        assert_eq!(at("-x^2", &[3.0]), -9.0);
        assert_eq!(at("sqrt(abs(-4)) + exp(0)", &[0.0]), 3.0);
        assert_eq!(at("pi", &[]), PI);
    }

    #[test]
    fn unknown_names_fail() {
        assert!(FieldExpr::parse("y").unwrap().eval(&[0.5]).is_err());
        assert!(FieldExpr::parse("tan(x)").unwrap().eval(&[0.5]).is_err());
        assert!(FieldExpr::parse("(x").is_err());
    }

    #[test]
    fn literal_rewrite_keeps_identifiers() {
        assert_eq!(float_literals("x2 + 3*y1 - 4.5 + 6e2 + 1e-3"), "x2 + 3.0*y1 - 4.5 + 600.0 + 0.001");
    }
}
