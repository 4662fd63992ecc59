use std::fmt;

/// Formula tree over concept atoms.
///
/// `offset` on atoms is the byte position in the source text and is ignored
/// by equality, so trees built by hand compare equal to parsed ones.
#[derive(Debug, Clone)]
pub enum Expr {
    /// `concept=value`, or a bare `concept` (value `None`) for binary concepts.
    Atom {
        concept: String,
        value: Option<String>,
        offset: usize,
    },
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Xor(Box<Expr>, Box<Expr>),
    Implies(Box<Expr>, Box<Expr>),
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        use Expr::*;
        match (self, other) {
            (
                Atom { concept: c1, value: v1, .. },
                Atom { concept: c2, value: v2, .. },
            ) => c1 == c2 && v1 == v2,
            (Not(a), Not(b)) => a == b,
            (And(a1, b1), And(a2, b2))
            | (Or(a1, b1), Or(a2, b2))
            | (Xor(a1, b1), Xor(a2, b2))
            | (Implies(a1, b1), Implies(a2, b2)) => a1 == a2 && b1 == b2,
            _ => false,
        }
    }
}

impl Eq for Expr {}

impl Expr {
    pub fn atom(concept: &str, value: &str) -> Expr {
        Expr::Atom {
            concept: concept.to_string(),
            value: Some(value.to_string()),
            offset: 0,
        }
    }

    pub fn bare(concept: &str) -> Expr {
        Expr::Atom {
            concept: concept.to_string(),
            value: None,
            offset: 0,
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(e: Expr) -> Expr {
        Expr::Not(Box::new(e))
    }

    pub fn and(a: Expr, b: Expr) -> Expr {
        Expr::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Expr, b: Expr) -> Expr {
        Expr::Or(Box::new(a), Box::new(b))
    }

    pub fn xor(a: Expr, b: Expr) -> Expr {
        Expr::Xor(Box::new(a), Box::new(b))
    }

    pub fn implies(a: Expr, b: Expr) -> Expr {
        Expr::Implies(Box::new(a), Box::new(b))
    }

    /// A possibly negated atom.
    pub fn is_literal(&self) -> bool {
        match self {
            Expr::Atom { .. } => true,
            Expr::Not(e) => matches!(**e, Expr::Atom { .. }),
            _ => false,
        }
    }

    /// Tree depth. Literals (negated or not) are leaves of depth 1; a
    /// connective adds one level over its deepest child.
    pub fn depth(&self) -> usize {
        match self {
            Expr::Atom { .. } => 1,
            Expr::Not(e) if matches!(**e, Expr::Atom { .. }) => 1,
            Expr::Not(e) => 1 + e.depth(),
            Expr::And(a, b) | Expr::Or(a, b) | Expr::Xor(a, b) | Expr::Implies(a, b) => {
                1 + a.depth().max(b.depth())
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Implies(..) => 1,
            Expr::Xor(..) => 2,
            Expr::Or(..) => 3,
            Expr::And(..) => 4,
            Expr::Not(_) => 5,
            Expr::Atom { .. } => 6,
        }
    }

    fn write_child(&self, f: &mut fmt::Formatter<'_>, parens: bool) -> fmt::Result {
        if parens {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

/// Canonical text with the minimum parentheses that parse back to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Atom {
                concept,
                value: Some(v),
                ..
            } => write!(f, "{concept}={v}"),
            Expr::Atom { concept, .. } => write!(f, "{concept}"),
            Expr::Not(e) => {
                f.write_str("not ")?;
                e.write_child(f, e.precedence() < 5)
            }
            Expr::And(a, b) | Expr::Or(a, b) | Expr::Xor(a, b) | Expr::Implies(a, b) => {
                let p = self.precedence();
                let (kw, right_assoc) = match self {
                    Expr::And(..) => ("and", false),
                    Expr::Or(..) => ("or", false),
                    Expr::Xor(..) => ("xor", false),
                    _ => ("->", true),
                };
                let lp = a.precedence();
                let rp = b.precedence();
                a.write_child(f, lp < p || (lp == p && right_assoc))?;
                write!(f, " {kw} ")?;
                b.write_child(f, rp < p || (rp == p && !right_assoc))
            }
        }
    }
}

/// A parsed constraint with the text it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintAst {
    pub expr: Expr,
    pub source: String,
}

impl ConstraintAst {
    pub fn new(expr: Expr) -> Self {
        let source = expr.to_string();
        ConstraintAst { expr, source }
    }
}

impl fmt::Display for ConstraintAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.expr.fmt(f)
    }
}
