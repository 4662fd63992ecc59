use std::sync::Arc;

use rayon::prelude::*;

use super::ast::{ConstraintAst, Expr};
use super::parser;
use crate::error::{Error, Result};
use crate::schema::{Schema, SemanticVector};

/// Rows per bit word.
pub(crate) const WORD: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Test { concept: u32, value: u32 },
    Not,
    And,
    Or,
    Xor,
    Implies,
}

/// Number of each node kind in a compiled program.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub tests: usize,
    pub negations: usize,
    pub conjunctions: usize,
    pub disjunctions: usize,
    pub exclusive_ors: usize,
    pub implications: usize,
}

/// A constraint resolved against a schema, evaluated as a postfix program
/// over domain indices.
#[derive(Debug, Clone)]
pub struct CompiledConstraint {
    id: usize,
    source: String,
    ast: Expr,
    ops: Vec<Op>,
    stack_depth: usize,
    domain_sizes: Arc<[u32]>,
}

impl CompiledConstraint {
    /// Ordinal in the knowledge base.
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn expr(&self) -> &Expr {
        &self.ast
    }

    pub fn with_id(mut self, id: usize) -> Self {
        self.id = id;
        self
    }

    pub fn op_counts(&self) -> OpCounts {
        let mut c = OpCounts::default();
        for op in &self.ops {
            match op {
                Op::Test { .. } => c.tests += 1,
                Op::Not => c.negations += 1,
                Op::And => c.conjunctions += 1,
                Op::Or => c.disjunctions += 1,
                Op::Xor => c.exclusive_ors += 1,
                Op::Implies => c.implications += 1,
            }
        }
        c
    }

    pub(crate) fn check(&self, z: &SemanticVector) -> Result<()> {
        if z.0.len() != self.domain_sizes.len() {
            return Err(Error::SchemaMismatch(format!(
                "vector has {} values, constraint compiled for {} concepts",
                z.0.len(),
                self.domain_sizes.len()
            )));
        }
        for (i, (&v, &n)) in z.0.iter().zip(self.domain_sizes.iter()).enumerate() {
            if v >= n {
                return Err(Error::SchemaMismatch(format!(
                    "concept #{i}: value index {v} out of range (domain size {n})"
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn eval_unchecked(&self, z: &[u32]) -> bool {
        let mut stack = [false; 32];
        let mut heap;
        let stack: &mut [bool] = if self.stack_depth <= stack.len() {
            &mut stack
        } else {
            heap = vec![false; self.stack_depth];
            &mut heap
        };
        let mut sp = 0;
        for op in &self.ops {
            match *op {
                Op::Test { concept, value } => {
                    stack[sp] = z[concept as usize] == value;
                    sp += 1;
                }
                Op::Not => stack[sp - 1] = !stack[sp - 1],
                _ => {
                    let b = stack[sp - 1];
                    let a = stack[sp - 2];
                    sp -= 1;
                    stack[sp - 1] = match op {
                        Op::And => a && b,
                        Op::Or => a || b,
                        Op::Xor => a != b,
                        _ => !a || b,
                    };
                }
            }
        }
        stack[0]
    }

    /// Truth bits for up to 64 rows; bit `r` is row `r`. Bits past the end
    /// of `rows` are zero.
    pub(crate) fn eval_word(&self, rows: &[SemanticVector]) -> u64 {
        debug_assert!(rows.len() <= WORD);
        let mut stack = Vec::with_capacity(self.stack_depth);
        for op in &self.ops {
            match *op {
                Op::Test { concept, value } => {
                    let mut w = 0u64;
                    for (r, z) in rows.iter().enumerate() {
                        w |= ((z.0[concept as usize] == value) as u64) << r;
                    }
                    stack.push(w);
                }
                Op::Not => {
                    let top = stack.last_mut().unwrap();
                    *top = !*top;
                }
                _ => {
                    let b = stack.pop().unwrap();
                    let a = stack.last_mut().unwrap();
                    *a = match op {
                        Op::And => *a & b,
                        Op::Or => *a | b,
                        Op::Xor => *a ^ b,
                        _ => !*a | b,
                    };
                }
            }
        }
        let mask = if rows.len() == WORD {
            u64::MAX
        } else {
            (1u64 << rows.len()) - 1
        };
        stack[0] & mask
    }

    /// The true-grounding count, 0 or 1.
    pub fn evaluate(&self, z: &SemanticVector) -> Result<u8> {
        self.check(z)?;
        Ok(self.eval_unchecked(&z.0) as u8)
    }

    /// Same as mapping [`evaluate`](Self::evaluate) over `rows`, in order.
    pub fn evaluate_batch(&self, rows: &[SemanticVector]) -> Result<Vec<u8>> {
        for z in rows {
            self.check(z)?;
        }
        let words: Vec<u64> = rows
            .par_chunks(WORD)
            .map(|chunk| self.eval_word(chunk))
            .collect();
        Ok((0..rows.len())
            .map(|r| ((words[r / WORD] >> (r % WORD)) & 1) as u8)
            .collect())
    }
}

/// Resolves every atom against `schema`.
pub fn compile(ast: &ConstraintAst, schema: &Schema) -> Result<CompiledConstraint> {
    let mut ops = Vec::new();
    emit(&ast.expr, schema, &mut ops)?;
    let mut depth = 0usize;
    let mut max = 0usize;
    for op in &ops {
        match op {
            Op::Test { .. } => depth += 1,
            Op::Not => {}
            _ => depth -= 1,
        }
        max = max.max(depth);
    }
    Ok(CompiledConstraint {
        id: 0,
        source: ast.source.clone(),
        ast: ast.expr.clone(),
        ops,
        stack_depth: max,
        domain_sizes: schema.domain_sizes().into(),
    })
}

fn emit(e: &Expr, schema: &Schema, ops: &mut Vec<Op>) -> Result<()> {
    match e {
        Expr::Atom {
            concept,
            value,
            offset,
        } => {
            let ci = schema.concept_index(concept).ok_or_else(|| Error::Compile {
                offset: *offset,
                message: format!("unknown concept {concept:?}"),
            })?;
            let c = schema.concept(ci);
            let vi = match value {
                Some(v) => c.value_index(v).ok_or_else(|| Error::Compile {
                    offset: *offset,
                    message: format!(
                        "{v:?} is not a value of {concept:?}; valid values: {}",
                        c.domain().join(", ")
                    ),
                })?,
                None if c.is_binary() => 1,
                None => {
                    return Err(Error::Compile {
                        offset: *offset,
                        message: format!(
                            "bare {concept:?} needs a value, concept is not binary (values: {})",
                            c.domain().join(", ")
                        ),
                    })
                }
            };
            ops.push(Op::Test {
                concept: ci as u32,
                value: vi,
            });
        }
        Expr::Not(a) => {
            emit(a, schema, ops)?;
            ops.push(Op::Not);
        }
        Expr::And(a, b) | Expr::Or(a, b) | Expr::Xor(a, b) | Expr::Implies(a, b) => {
            emit(a, schema, ops)?;
            emit(b, schema, ops)?;
            ops.push(match e {
                Expr::And(..) => Op::And,
                Expr::Or(..) => Op::Or,
                Expr::Xor(..) => Op::Xor,
                _ => Op::Implies,
            });
        }
    }
    Ok(())
}

/// Parses and compiles one constraint.
pub fn compile_str(source: &str, schema: &Schema) -> Result<CompiledConstraint> {
    compile(&parser::parse(source)?, schema)
}

/// Parses and compiles a whole knowledge base; ids are ordinals in file order.
pub fn compile_file(text: &str, schema: &Schema) -> Result<Vec<CompiledConstraint>> {
    parser::constraint_lines(text)
        .into_iter()
        .enumerate()
        .map(|(i, line)| {
            parser::parse(&line.text)
                .and_then(|ast| compile(&ast, schema))
                .map(|c| c.with_id(i))
                .map_err(|e| parser::at_line(&line, e))
        })
        .collect()
}

/// Compiles a list of sources, assigning ordinal ids.
pub fn compile_all<S: AsRef<str>>(sources: &[S], schema: &Schema) -> Result<Vec<CompiledConstraint>> {
    sources
        .iter()
        .enumerate()
        .map(|(i, s)| compile_str(s.as_ref(), schema).map(|c| c.with_id(i)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sign_schema() -> Schema {
        Schema::from_json_str(
            r#"{"class":["stop_sign","speed_limit","stop"],"color":["red","blue","white"],
                "shape":["octagon","circle","triangle"],"is_octagon":"binary"}"#,
        )
        .unwrap()
    }

    fn v(s: &Schema, labels: &[&str]) -> SemanticVector {
        SemanticVector::from_labels(s, labels).unwrap()
    }

    #[test]
    fn stop_sign_semantics() {
        let s = sign_schema();
        let c = compile_str("class=stop_sign -> color=red and shape=octagon", &s).unwrap();
        let rows = vec![
            v(&s, &["stop_sign", "red", "octagon", "true"]),
            v(&s, &["speed_limit", "blue", "circle", "false"]),
            v(&s, &["stop_sign", "blue", "octagon", "true"]),
        ];
        let scalar: Vec<u8> = rows.iter().map(|z| c.evaluate(z).unwrap()).collect();
        assert_eq!(scalar, vec![1, 1, 0]);
        assert_eq!(c.evaluate_batch(&rows).unwrap(), vec![1, 1, 0]);
        assert!(c.evaluate_batch(&[]).unwrap().is_empty());
    }

    #[test]
    fn bare_binary_atom() {
        let s = sign_schema();
        let c = compile_str("is_octagon", &s).unwrap();
        assert_eq!(c.evaluate(&v(&s, &["stop", "red", "octagon", "true"])).unwrap(), 1);
        assert_eq!(c.evaluate(&v(&s, &["stop", "red", "octagon", "false"])).unwrap(), 0);
    }

    #[test]
    fn figure_tree_op_counts() {
        let s = sign_schema();
        let c = compile_str("class=stop -> not color=blue and is_octagon", &s).unwrap();
        let n = c.op_counts();
        assert_eq!(
            (n.tests, n.negations, n.conjunctions, n.implications),
            (3, 1, 1, 1)
        );
        assert_eq!(c.expr().depth(), 3);
    }

    #[test]
    fn compile_errors() {
        let s = sign_schema();
        let err = compile_str("color=purple", &s).unwrap_err().to_string();
        assert!(err.contains("red, blue, white"), "{err}");
        assert!(matches!(compile_str("size=big", &s), Err(Error::Compile { .. })));
        assert!(matches!(compile_str("color", &s), Err(Error::Compile { .. })));
        match compile_str("class=stop -> color=pink", &s) {
            Err(Error::Compile { offset, .. }) => assert_eq!(offset, 14),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_mismatch() {
        let s = sign_schema();
        let c = compile_str("is_octagon", &s).unwrap();
        assert!(matches!(c.evaluate(&SemanticVector(vec![0, 0])), Err(Error::SchemaMismatch(_))));
        assert!(matches!(
            c.evaluate(&SemanticVector(vec![0, 0, 0, 2])),
            Err(Error::SchemaMismatch(_))
        ));
        assert!(c.evaluate_batch(&[SemanticVector(vec![9, 0, 0, 0])]).is_err());
    }

    #[test]
    fn file_compile_reports_location() {
        let s = sign_schema();
        let kb = compile_file("is_octagon\n# c\nclass=stop -> not color=blue\n", &s).unwrap();
        assert_eq!(kb.len(), 2);
        assert_eq!(kb[1].id(), 1);
        assert_eq!(kb[1].source(), "class=stop -> not color=blue");
        match compile_file("is_octagon\n  color=pink\n", &s) {
            Err(Error::AtLine { line, column, .. }) => assert_eq!((line, column), (2, 3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn deep_programs_use_heap_stack() {
        let s = Schema::binary(["p"]).unwrap();
        // right-nested implication needs a stack as deep as the chain
        let src = vec!["p"; 40].join(" -> ");
        let c = compile_str(&src, &s).unwrap();
        assert!(c.stack_depth > 32);
        let t = SemanticVector(vec![1]);
        let f = SemanticVector(vec![0]);
        assert_eq!(c.evaluate(&t).unwrap(), 1);
        assert_eq!(c.evaluate(&f).unwrap(), 1);
        assert_eq!(c.evaluate_batch(&[t, f]).unwrap(), vec![1, 1]);
    }
}
