use std::collections::HashMap;
use std::fmt;

use super::{Expr, Op};

/// Evaluation failure at a specific node.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("domain violation in `{node}`: {reason}")]
    Domain { node: String, reason: String },
    #[error("expression uses variable x{index} but only {available} values were supplied")]
    MissingVariable { index: usize, available: usize },
}

#[derive(Debug, Clone, Copy)]
enum Instr {
    Const(f64),
    Var(usize),
    Sum { start: u32, len: u32 },
    Product { start: u32, len: u32 },
    Quotient(u32, u32),
    PowInt(u32, i32),
    Pow(u32, f64),
    Neg(u32),
    Exp(u32),
    Log(u32),
    Sin(u32),
    Cos(u32),
    Sinh(u32),
    Cosh(u32),
}

/// A compiled, multi-output evaluation program.
///
/// Compilation walks the DAG once and merges structurally identical nodes,
/// so each distinct subexpression is computed once per point. Tapes are
/// immutable and may be shared across threads.
#[derive(Clone)]
pub struct Tape {
    instrs: Vec<Instr>,
    operands: Vec<u32>,
    outputs: Vec<u32>,
    sources: Vec<Expr>,
    arity: usize,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("instructions", &self.instrs.len())
            .field("outputs", &self.outputs.len())
            .field("arity", &self.arity)
            .finish()
    }
}

#[derive(PartialEq, Eq, Hash)]
struct Key {
    op: (u8, u64),
    args: Vec<u32>,
}

impl Tape {
    pub fn compile(roots: &[Expr]) -> Tape {
        let mut tape = Tape {
            instrs: Vec::new(),
            operands: Vec::new(),
            outputs: Vec::with_capacity(roots.len()),
            sources: Vec::new(),
            arity: 0,
        };
        let mut by_addr: HashMap<usize, u32> = HashMap::new();
        let mut by_key: HashMap<Key, u32> = HashMap::new();
        for root in roots {
            let slot = tape.lower(root, &mut by_addr, &mut by_key);
            tape.outputs.push(slot);
        }
        tape
    }

    fn lower(
        &mut self,
        root: &Expr,
        by_addr: &mut HashMap<usize, u32>,
        by_key: &mut HashMap<Key, u32>,
    ) -> u32 {
        // Iterative post-order traversal; deep Laplacian iterates would
        // otherwise overflow small thread stacks.
        let mut stack: Vec<(Expr, bool)> = vec![(root.clone(), false)];
        while let Some((e, expanded)) = stack.pop() {
            if by_addr.contains_key(&e.addr()) {
                continue;
            }
            if !expanded {
                stack.push((e.clone(), true));
                for a in e.args().iter().rev() {
                    if !by_addr.contains_key(&a.addr()) {
                        stack.push((a.clone(), false));
                    }
                }
                continue;
            }
            let args: Vec<u32> = e.args().iter().map(|a| by_addr[&a.addr()]).collect();
            let key = Key { op: e.op().key(), args };
            let slot = match by_key.get(&key) {
                Some(&s) => s,
                None => {
                    let s = self.emit(&e, &key.args);
                    by_key.insert(key, s);
                    s
                }
            };
            by_addr.insert(e.addr(), slot);
        }
        by_addr[&root.addr()]
    }

    fn emit(&mut self, e: &Expr, args: &[u32]) -> u32 {
        let instr = match e.op() {
            Op::Const(c) => Instr::Const(c),
            Op::Var(i) => {
                self.arity = self.arity.max(i + 1);
                Instr::Var(i)
            }
            Op::Sum | Op::Product => {
                let start = self.operands.len() as u32;
                self.operands.extend_from_slice(args);
                let len = args.len() as u32;
                if matches!(e.op(), Op::Sum) {
                    Instr::Sum { start, len }
                } else {
                    Instr::Product { start, len }
                }
            }
            Op::Quotient => Instr::Quotient(args[0], args[1]),
            Op::Pow(p) => {
                if p.fract() == 0.0 && p.abs() <= 64.0 {
                    Instr::PowInt(args[0], p as i32)
                } else {
                    Instr::Pow(args[0], p)
                }
            }
            Op::Neg => Instr::Neg(args[0]),
            Op::Exp => Instr::Exp(args[0]),
            Op::Log => Instr::Log(args[0]),
            Op::Sin => Instr::Sin(args[0]),
            Op::Cos => Instr::Cos(args[0]),
            Op::Sinh => Instr::Sinh(args[0]),
            Op::Cosh => Instr::Cosh(args[0]),
        };
        self.instrs.push(instr);
        self.sources.push(e.clone());
        (self.instrs.len() - 1) as u32
    }

    /// Number of instructions (distinct subexpressions).
    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    pub fn outputs(&self) -> usize {
        self.outputs.len()
    }

    /// Number of variables the tape reads.
    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut scratch = Vec::new();
        let mut out = vec![0.0; self.outputs.len()];
        self.eval_into(x, &mut scratch, &mut out)?;
        Ok(out)
    }

    /// Evaluate into `out`, reusing `scratch` between calls.
    pub fn eval_into(&self, x: &[f64], scratch: &mut Vec<f64>, out: &mut [f64]) -> Result<(), EvalError> {
        if x.len() < self.arity {
            return Err(EvalError::MissingVariable { index: self.arity, available: x.len() });
        }
        scratch.clear();
        scratch.reserve(self.instrs.len());
        for (k, instr) in self.instrs.iter().enumerate() {
            let v = |i: u32| scratch[i as usize];
            let value = match *instr {
                Instr::Const(c) => c,
                Instr::Var(i) => x[i],
                Instr::Sum { start, len } => {
                    let ops = &self.operands[start as usize..(start + len) as usize];
                    ops.iter().map(|&i| v(i)).sum()
                }
                Instr::Product { start, len } => {
                    let ops = &self.operands[start as usize..(start + len) as usize];
                    ops.iter().map(|&i| v(i)).product()
                }
                Instr::Quotient(a, b) => {
                    let d = v(b);
                    if d == 0.0 {
                        return Err(self.domain(k, "division by zero"));
                    }
                    v(a) / d
                }
                Instr::PowInt(a, p) => {
                    let base = v(a);
                    if base == 0.0 && p < 0 {
                        return Err(self.domain(k, "zero raised to a negative power"));
                    }
                    base.powi(p)
                }
                Instr::Pow(a, p) => {
                    let base = v(a);
                    if base < 0.0 {
                        return Err(self.domain(k, &format!("negative base {base} with fractional exponent")));
                    }
                    if base == 0.0 && p < 0.0 {
                        return Err(self.domain(k, "zero raised to a negative power"));
                    }
                    base.powf(p)
                }
                Instr::Neg(a) => -v(a),
                Instr::Exp(a) => v(a).exp(),
                Instr::Log(a) => {
                    let arg = v(a);
                    if arg <= 0.0 {
                        return Err(self.domain(k, &format!("logarithm of non-positive value {arg}")));
                    }
                    arg.ln()
                }
                Instr::Sin(a) => v(a).sin(),
                Instr::Cos(a) => v(a).cos(),
                Instr::Sinh(a) => v(a).sinh(),
                Instr::Cosh(a) => v(a).cosh(),
            };
            if !value.is_finite() {
                return Err(self.domain(k, &format!("non-finite result {value}")));
            }
            scratch.push(value);
        }
        for (o, &slot) in out.iter_mut().zip(&self.outputs) {
            *o = scratch[slot as usize];
        }
        Ok(())
    }

    fn domain(&self, k: usize, reason: &str) -> EvalError {
        let mut node = self.sources[k].to_string();
        if node.len() > 120 {
            let mut cut = 117;
            while !node.is_char_boundary(cut) {
                cut -= 1;
            }
            node.truncate(cut);
            node.push_str("...");
        }
        EvalError::Domain { node, reason: reason.to_string() }
    }
}
