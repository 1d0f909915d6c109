//! Reference interpreter: executes programs on concrete arrays and is the
//! ground truth for every semantics-preservation claim.
//!
//! Integer mode is exact (64-bit two's-complement wrap), so legal loop
//! reorderings must produce bit-equal outputs. Float mode exists for realism
//! and is compared with a relative tolerance.
//!
//! Array initialization is bit-exact and independent of loop structure:
//! element `k` of array `name` is derived from
//! `splitmix64(seed ^ fnv1a64(name) ^ splitmix64(k))`, reduced to a small
//! signed value (int mode) or mapped into [-1, 1) (float mode).

use std::collections::HashMap;

use crate::ir::*;
use crate::{fnv1a64, splitmix64};

pub const DEFAULT_ITER_CAP: u64 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Int,
    Float,
}

#[derive(Clone, Debug)]
pub struct ExecutionConfig {
    pub bindings: HashMap<String, i64>,
    pub mode: Mode,
    pub seed: u64,
    pub iter_cap: u64,
}

impl ExecutionConfig {
    pub fn new(bindings: HashMap<String, i64>, mode: Mode, seed: u64) -> Self {
        ExecutionConfig {
            bindings,
            mode,
            seed,
            iter_cap: DEFAULT_ITER_CAP,
        }
    }

    /// Defaults from the program's `param N = ..` declarations, integer mode.
    pub fn defaults(p: &Program, seed: u64) -> Self {
        Self::new(p.default_bindings(), Mode::Int, seed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Buffer {
    Int(Vec<i64>),
    Float(Vec<f64>),
}

impl Buffer {
    pub fn len(&self) -> usize {
        match self {
            Buffer::Int(v) => v.len(),
            Buffer::Float(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, thiserror::Error)]
pub enum InterpError {
    #[error("unbound parameter `{0}`")]
    UnboundParam(String),
    #[error("iteration cap exceeded ({0} iterations)")]
    IterCap(u64),
    #[error("integer division in computation `{0}` (rejected in integer mode)")]
    IntDivision(String),
    #[error("out-of-bounds access in `{comp}` at iteration {iters:?}: {array}[{index}] with extent {extent}")]
    OutOfBounds {
        comp: String,
        iters: Vec<(String, i64)>,
        array: String,
        index: i64,
        extent: i64,
    },
    #[error("bound evaluation failed: {0}")]
    Bound(String),
    #[error("unknown idiom `{0}` in call node")]
    UnknownIdiom(String),
    #[error("idiom call `{0}` is malformed: {1}")]
    BadCall(String, String),
}

/// Deterministic initial value for (seed, array name, flat index).
pub fn init_value(seed: u64, name: &str, index: u64) -> u64 {
    splitmix64(seed ^ fnv1a64(name.as_bytes()) ^ splitmix64(index))
}

fn init_int(seed: u64, name: &str, index: u64) -> i64 {
    (init_value(seed, name, index) % 201) as i64 - 100
}

fn init_float(seed: u64, name: &str, index: u64) -> f64 {
    // 53 uniform bits mapped into [-1, 1).
    let bits = init_value(seed, name, index) >> 11;
    (bits as f64) / (1u64 << 52) as f64 - 1.0
}

struct Machine<'a> {
    program: &'a Program,
    config: &'a ExecutionConfig,
    buffers: HashMap<String, Buffer>,
    dims: HashMap<String, Vec<i64>>,
    env: Vec<(String, i64)>,
    iterations: u64,
}

impl<'a> Machine<'a> {
    fn lookup(&self, var: &str) -> Option<i64> {
        for (name, v) in self.env.iter().rev() {
            if name == var {
                return Some(*v);
            }
        }
        self.config.bindings.get(var).copied()
    }

    fn eval_affine(&self, e: &AffineExpr) -> Result<i64, InterpError> {
        e.eval(&|v| self.lookup(v)).map_err(InterpError::Bound)
    }

    fn eval_bound(&self, b: &Bound) -> Result<i64, InterpError> {
        b.eval(&|v| self.lookup(v)).map_err(InterpError::Bound)
    }

    fn address(&self, comp: &str, acc: &Access) -> Result<usize, InterpError> {
        let dims = &self.dims[&acc.array];
        let mut addr: i64 = 0;
        for (k, e) in acc.index.iter().enumerate() {
            let x = self.eval_affine(e)?;
            if x < 0 || x >= dims[k] {
                return Err(InterpError::OutOfBounds {
                    comp: comp.to_string(),
                    iters: self.env.clone(),
                    array: acc.array.clone(),
                    index: x,
                    extent: dims[k],
                });
            }
            let inner: i64 = dims[k + 1..].iter().product();
            addr += x * inner;
        }
        Ok(addr as usize)
    }

    fn run_body(&mut self, body: &[Stmt]) -> Result<(), InterpError> {
        for s in body {
            match s {
                Stmt::Loop(l) => {
                    let lo = self.eval_affine(&l.lo)?;
                    let hi = self.eval_bound(&l.hi)?;
                    // Execution is sequential; parallel/vector marks are
                    // annotations only.
                    for v in lo..hi {
                        self.env.push((l.iter.clone(), v));
                        let r = self.run_body(&l.body);
                        self.env.pop();
                        r?;
                    }
                }
                Stmt::Comp(c) => {
                    self.iterations += 1;
                    if self.iterations > self.config.iter_cap {
                        return Err(InterpError::IterCap(self.config.iter_cap));
                    }
                    self.exec_comp(c)?;
                }
                Stmt::Call(call) => self.exec_call(call)?,
            }
        }
        Ok(())
    }

    fn exec_comp(&mut self, c: &Computation) -> Result<(), InterpError> {
        match self.config.mode {
            Mode::Int => {
                let mut vals = Vec::with_capacity(c.reads.len());
                for r in &c.reads {
                    let addr = self.address(&c.id, r)?;
                    let v = match &self.buffers[&r.array] {
                        Buffer::Int(b) => b[addr],
                        Buffer::Float(b) => b[addr] as i64,
                    };
                    vals.push(v);
                }
                let v = self.eval_int(&c.expr, &vals, &c.id)?;
                let addr = self.address(&c.id, &c.write)?;
                match self.buffers.get_mut(&c.write.array).unwrap() {
                    Buffer::Int(b) => b[addr] = v,
                    Buffer::Float(b) => b[addr] = v as f64,
                }
            }
            Mode::Float => {
                let mut vals = Vec::with_capacity(c.reads.len());
                for r in &c.reads {
                    let addr = self.address(&c.id, r)?;
                    let v = match &self.buffers[&r.array] {
                        Buffer::Int(b) => b[addr] as f64,
                        Buffer::Float(b) => b[addr],
                    };
                    vals.push(v);
                }
                let v = self.eval_float(&c.expr, &vals);
                let addr = self.address(&c.id, &c.write)?;
                match self.buffers.get_mut(&c.write.array).unwrap() {
                    Buffer::Int(b) => b[addr] = v as i64,
                    Buffer::Float(b) => b[addr] = v,
                }
            }
        }
        Ok(())
    }

    fn eval_int(&self, e: &Expr, reads: &[i64], comp: &str) -> Result<i64, InterpError> {
        Ok(match e {
            Expr::Lit(v) => *v,
            Expr::Read(k) => reads[*k],
            Expr::Iter(v) => self
                .lookup(v)
                .ok_or_else(|| InterpError::Bound(format!("unbound `{v}`")))?,
            Expr::Add(a, b) => self
                .eval_int(a, reads, comp)?
                .wrapping_add(self.eval_int(b, reads, comp)?),
            Expr::Sub(a, b) => self
                .eval_int(a, reads, comp)?
                .wrapping_sub(self.eval_int(b, reads, comp)?),
            Expr::Mul(a, b) => self
                .eval_int(a, reads, comp)?
                .wrapping_mul(self.eval_int(b, reads, comp)?),
            Expr::Div(_, _) => return Err(InterpError::IntDivision(comp.to_string())),
            Expr::Min(a, b) => self
                .eval_int(a, reads, comp)?
                .min(self.eval_int(b, reads, comp)?),
            Expr::Max(a, b) => self
                .eval_int(a, reads, comp)?
                .max(self.eval_int(b, reads, comp)?),
        })
    }

    fn eval_float(&self, e: &Expr, reads: &[f64]) -> f64 {
        match e {
            Expr::Lit(v) => *v as f64,
            Expr::Read(k) => reads[*k],
            Expr::Iter(v) => self.lookup(v).unwrap_or(0) as f64,
            Expr::Add(a, b) => self.eval_float(a, reads) + self.eval_float(b, reads),
            Expr::Sub(a, b) => self.eval_float(a, reads) - self.eval_float(b, reads),
            Expr::Mul(a, b) => self.eval_float(a, reads) * self.eval_float(b, reads),
            Expr::Div(a, b) => self.eval_float(a, reads) / self.eval_float(b, reads),
            Expr::Min(a, b) => self.eval_float(a, reads).min(self.eval_float(b, reads)),
            Expr::Max(a, b) => self.eval_float(a, reads).max(self.eval_float(b, reads)),
        }
    }

    /// Executes the reference definition of a replaced idiom. The loops and
    /// operand roles come from the call node, not from the replaced nest, so
    /// a misdetected idiom shows up as an equivalence failure.
    fn exec_call(&mut self, call: &IdiomCall) -> Result<(), InterpError> {
        let bad = |m: &str| InterpError::BadCall(call.idiom.clone(), m.to_string());
        let reference = match call.idiom.as_str() {
            "gemm" => {
                // C[i,j] += A[i,k] * B[k,j]
                let (c, a, b) = match call.args.as_slice() {
                    [c, a, b] => (c, a, b),
                    _ => return Err(bad("expected 3 operands")),
                };
                let [li, lk, lj] = match call.loops.as_slice() {
                    [x, y, z] => [x, y, z],
                    _ => return Err(bad("expected 3 loops")),
                };
                build_nest(
                    &[li, lj, lk],
                    Computation {
                        id: format!("__{}_ref", call.idiom),
                        write: acc2(c, &li.iter, &lj.iter),
                        reads: vec![
                            acc2(c, &li.iter, &lj.iter),
                            acc2(a, &li.iter, &lk.iter),
                            acc2(b, &lk.iter, &lj.iter),
                        ],
                        expr: acc_expr(),
                    },
                )
            }
            "syrk" => {
                // C[i,j] += A[i,k] * A[j,k], j <= i
                let (c, a) = match call.args.as_slice() {
                    [c, a] => (c, a),
                    _ => return Err(bad("expected 2 operands")),
                };
                let [li, lj, lk] = match call.loops.as_slice() {
                    [x, y, z] => [x, y, z],
                    _ => return Err(bad("expected 3 loops")),
                };
                build_nest(
                    &[li, lj, lk],
                    Computation {
                        id: format!("__{}_ref", call.idiom),
                        write: acc2(c, &li.iter, &lj.iter),
                        reads: vec![
                            acc2(c, &li.iter, &lj.iter),
                            acc2(a, &li.iter, &lk.iter),
                            acc2(a, &lj.iter, &lk.iter),
                        ],
                        expr: acc_expr(),
                    },
                )
            }
            "gemv" => {
                // y[i] += A[i,j] * x[j]
                let (y, a, x) = match call.args.as_slice() {
                    [y, a, x] => (y, a, x),
                    _ => return Err(bad("expected 3 operands")),
                };
                let [li, lj] = match call.loops.as_slice() {
                    [x0, y0] => [x0, y0],
                    _ => return Err(bad("expected 2 loops")),
                };
                build_nest(
                    &[li, lj],
                    Computation {
                        id: format!("__{}_ref", call.idiom),
                        write: acc1(y, &li.iter),
                        reads: vec![
                            acc1(y, &li.iter),
                            acc2(a, &li.iter, &lj.iter),
                            acc1(x, &lj.iter),
                        ],
                        expr: acc_expr(),
                    },
                )
            }
            "dot" => {
                // s[0] += A[i] * B[i]
                let (s, a, b) = match call.args.as_slice() {
                    [s, a, b] => (s, a, b),
                    _ => return Err(bad("expected 3 operands")),
                };
                let [li] = match call.loops.as_slice() {
                    [x] => [x],
                    _ => return Err(bad("expected 1 loop")),
                };
                build_nest(
                    &[li],
                    Computation {
                        id: format!("__{}_ref", call.idiom),
                        write: Access {
                            array: s.clone(),
                            index: vec![AffineExpr::lit(0)],
                        },
                        reads: vec![
                            Access {
                                array: s.clone(),
                                index: vec![AffineExpr::lit(0)],
                            },
                            acc1(a, &li.iter),
                            acc1(b, &li.iter),
                        ],
                        expr: acc_expr(),
                    },
                )
            }
            "axpy" => {
                // y[i] += X[i]  (unit alpha; scaled forms keep their nest)
                let (y, x) = match call.args.as_slice() {
                    [y, x] => (y, x),
                    _ => return Err(bad("expected 2 operands")),
                };
                let [li] = match call.loops.as_slice() {
                    [x0] => [x0],
                    _ => return Err(bad("expected 1 loop")),
                };
                build_nest(
                    &[li],
                    Computation {
                        id: format!("__{}_ref", call.idiom),
                        write: acc1(y, &li.iter),
                        reads: vec![acc1(y, &li.iter), acc1(x, &li.iter)],
                        expr: Expr::Add(Box::new(Expr::Read(0)), Box::new(Expr::Read(1))),
                    },
                )
            }
            other => return Err(InterpError::UnknownIdiom(other.to_string())),
        };
        self.run_body(&[reference])
    }
}

fn acc1(array: &str, i: &str) -> Access {
    Access {
        array: array.to_string(),
        index: vec![AffineExpr::var(i)],
    }
}

fn acc2(array: &str, i: &str, j: &str) -> Access {
    Access {
        array: array.to_string(),
        index: vec![AffineExpr::var(i), AffineExpr::var(j)],
    }
}

/// `acc += r1 * r2` expression shape shared by the BLAS-like references.
fn acc_expr() -> Expr {
    Expr::Add(
        Box::new(Expr::Read(0)),
        Box::new(Expr::Mul(Box::new(Expr::Read(1)), Box::new(Expr::Read(2)))),
    )
}

fn build_nest(loops: &[&CallLoop], comp: Computation) -> Stmt {
    let mut stmt = Stmt::Comp(comp);
    for l in loops.iter().rev() {
        stmt = Stmt::Loop(LoopNode::new(&l.iter, l.lo.clone(), l.hi.clone(), vec![stmt]));
    }
    stmt
}

/// Executes the program and returns all array buffers.
pub fn run(p: &Program, config: &ExecutionConfig) -> Result<HashMap<String, Buffer>, InterpError> {
    let mut buffers = HashMap::new();
    let mut dims = HashMap::new();
    for a in &p.arrays {
        let d = a
            .concrete_dims(&|name| config.bindings.get(name).copied())
            .map_err(|_| InterpError::UnboundParam(a.name.clone()))?;
        let n: i64 = d.iter().product();
        let buf = match (a.elem, config.mode) {
            (ElemKind::Int, _) | (_, Mode::Int) => Buffer::Int(
                (0..n as u64)
                    .map(|k| init_int(config.seed, &a.name, k))
                    .collect(),
            ),
            (ElemKind::Float, Mode::Float) => Buffer::Float(
                (0..n as u64)
                    .map(|k| init_float(config.seed, &a.name, k))
                    .collect(),
            ),
        };
        buffers.insert(a.name.clone(), buf);
        dims.insert(a.name.clone(), d);
    }
    let mut m = Machine {
        program: p,
        config,
        buffers,
        dims,
        env: Vec::new(),
        iterations: 0,
    };
    let _ = m.program;
    m.run_body(&p.body)?;
    Ok(m.buffers)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    Equivalent,
    Mismatch {
        seed: u64,
        array: String,
        index: usize,
        left: String,
        right: String,
    },
}

impl Verdict {
    pub fn is_equivalent(&self) -> bool {
        matches!(self, Verdict::Equivalent)
    }
}

/// Compares two programs over the given configs. Integer mode demands
/// bit-exact buffers; float mode allows elementwise relative error 1e-10.
pub fn equivalent(
    p1: &Program,
    p2: &Program,
    configs: &[ExecutionConfig],
) -> Result<Verdict, InterpError> {
    for config in configs {
        let b1 = run(p1, config)?;
        let b2 = run(p2, config)?;
        for (name, left) in &b1 {
            let right = match b2.get(name) {
                Some(r) => r,
                None => {
                    return Ok(Verdict::Mismatch {
                        seed: config.seed,
                        array: name.clone(),
                        index: 0,
                        left: "present".into(),
                        right: "absent".into(),
                    })
                }
            };
            match (left, right) {
                (Buffer::Int(l), Buffer::Int(r)) => {
                    for (k, (a, b)) in l.iter().zip(r).enumerate() {
                        if a != b {
                            return Ok(Verdict::Mismatch {
                                seed: config.seed,
                                array: name.clone(),
                                index: k,
                                left: a.to_string(),
                                right: b.to_string(),
                            });
                        }
                    }
                }
                (Buffer::Float(l), Buffer::Float(r)) => {
                    for (k, (a, b)) in l.iter().zip(r).enumerate() {
                        let scale = a.abs().max(b.abs()).max(1.0);
                        if (a - b).abs() > 1e-10 * scale {
                            return Ok(Verdict::Mismatch {
                                seed: config.seed,
                                array: name.clone(),
                                index: k,
                                left: a.to_string(),
                                right: b.to_string(),
                            });
                        }
                    }
                }
                _ => {
                    return Ok(Verdict::Mismatch {
                        seed: config.seed,
                        array: name.clone(),
                        index: 0,
                        left: "int".into(),
                        right: "float".into(),
                    })
                }
            }
        }
    }
    Ok(Verdict::Equivalent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse;

    fn cfg(seed: u64) -> ExecutionConfig {
        ExecutionConfig::new(HashMap::new(), Mode::Int, seed)
    }

    #[test]
    fn closed_form_copy() {
        let p = parse("array A[4]; for i in 0..4 { A[i] = i; }").unwrap();
        for seed in [0, 1, 42] {
            let out = run(&p, &cfg(seed)).unwrap();
            assert_eq!(out["A"], Buffer::Int(vec![0, 1, 2, 3]));
        }
    }

    #[test]
    fn gemm_identity_inputs() {
        // Explicit init computations set A = B = identity; C must come out
        // as the identity as well.
        let p = parse(
            "array A[2, 2]; array B[2, 2]; array C[2, 2];\n\
             for i in 0..2 { for j in 0..2 {\n\
               A[i, j] = min(1 - i + j, 1 - j + i);\n\
               B[i, j] = min(1 - i + j, 1 - j + i);\n\
               C[i, j] = 0;\n\
             } }\n\
             for i in 0..2 { for j in 0..2 { for k in 0..2 {\n\
               C[i, j] += A[i, k] * B[k, j];\n\
             } } }",
        )
        .unwrap();
        let out = run(&p, &cfg(9)).unwrap();
        assert_eq!(out["C"], Buffer::Int(vec![1, 0, 0, 1]));
    }

    #[test]
    fn gemm_matches_schoolbook_oracle() {
        let p = parse(
            "param N = 3;\n\
             array A[N, N]; array B[N, N]; array C[N, N];\n\
             for i in 0..N { for j in 0..N { C[i, j] = 0; } }\n\
             for i in 0..N { for j in 0..N { for k in 0..N {\n\
               C[i, j] += A[i, k] * B[k, j];\n\
             } } }",
        )
        .unwrap();
        let config = ExecutionConfig::defaults(&p, 42);
        let out = run(&p, &config).unwrap();
        // Independent schoolbook multiply over the same initial buffers.
        let n = 3usize;
        let a: Vec<i64> = (0..9).map(|k| init_int(42, "A", k)).collect();
        let b: Vec<i64> = (0..9).map(|k| init_int(42, "B", k)).collect();
        let mut c = vec![0i64; 9];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    c[i * n + j] += a[i * n + k] * b[k * n + j];
                }
            }
        }
        assert_eq!(out["C"], Buffer::Int(c));
    }

    #[test]
    fn init_independent_of_execution_order() {
        assert_eq!(init_value(1, "A", 5), init_value(1, "A", 5));
        assert_ne!(init_value(1, "A", 5), init_value(1, "B", 5));
        assert_ne!(init_value(1, "A", 5), init_value(2, "A", 5));
    }

    #[test]
    fn equivalence_of_interchanged_gemm() {
        let ijk = parse(
            "param N = 4; array A[N, N]; array B[N, N]; array C[N, N];\n\
             for i in 0..N { for j in 0..N { for k in 0..N { C[i, j] += A[i, k] * B[k, j]; } } }",
        )
        .unwrap();
        let ikj = parse(
            "param N = 4; array A[N, N]; array B[N, N]; array C[N, N];\n\
             for i in 0..N { for k in 0..N { for j in 0..N { C[i, j] += A[i, k] * B[k, j]; } } }",
        )
        .unwrap();
        let configs: Vec<_> = [1u64, 2, 3]
            .iter()
            .map(|&s| ExecutionConfig::defaults(&ijk, s))
            .collect();
        assert!(equivalent(&ijk, &ikj, &configs).unwrap().is_equivalent());
    }

    #[test]
    fn mismatch_reports_location() {
        let p = parse(
            "param N = 4; array A[N];\n\
             for i in 0..N { A[i] = 1; }",
        )
        .unwrap();
        let q = parse(
            "param N = 4; array A[N];\n\
             for i in 0..N-1 { A[i] = 1; }",
        )
        .unwrap();
        let configs = vec![ExecutionConfig::defaults(&p, 0)];
        match equivalent(&p, &q, &configs).unwrap() {
            Verdict::Mismatch { array, index, .. } => {
                assert_eq!(array, "A");
                assert_eq!(index, 3);
            }
            v => panic!("expected mismatch, got {v:?}"),
        }
    }

    #[test]
    fn out_of_bounds_is_a_hard_error() {
        let p = parse("array A[4]; for i in 0..5 { A[i] = 0; }").unwrap();
        match run(&p, &cfg(0)) {
            Err(InterpError::OutOfBounds { array, index, .. }) => {
                assert_eq!(array, "A");
                assert_eq!(index, 4);
            }
            other => panic!("expected out-of-bounds, got {other:?}"),
        }
    }

    #[test]
    fn integer_division_rejected() {
        let p = parse("array A[4]; array B[4]; for i in 0..4 { A[i] = B[i] / 2; }").unwrap();
        assert!(matches!(run(&p, &cfg(0)), Err(InterpError::IntDivision(_))));
    }

    #[test]
    fn iteration_cap_enforced() {
        let p = parse("param N = 100; array A[N]; for i in 0..N { A[i] = 0; }").unwrap();
        let mut config = ExecutionConfig::defaults(&p, 0);
        config.iter_cap = 10;
        assert!(matches!(run(&p, &config), Err(InterpError::IterCap(10))));
    }

    #[test]
    fn float_mode_runs() {
        let p = parse(
            "param N = 4; array A[N]: float; array B[N]: float;\n\
             for i in 0..N { A[i] = B[i] / 2; }",
        )
        .unwrap();
        let mut config = ExecutionConfig::defaults(&p, 7);
        config.mode = Mode::Float;
        let out = run(&p, &config).unwrap();
        assert!(matches!(out["A"], Buffer::Float(_)));
    }
}
