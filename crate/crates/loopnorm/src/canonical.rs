//! Canonical serialization and fingerprinting of normalized programs.
//!
//! Iterators are renamed `L0, L1, …` in preorder, arrays `A0, A1, …` by
//! first use, and computation labels `S0, S1, …` in preorder, so that any
//! two programs equal up to consistent renaming produce byte-identical
//! canonical text. The fingerprint is FNV-1a 64 over that text and is fixed
//! forever: it must stay bit-exact across runs, platforms, and versions.
//!
//! Literal coefficients and constants in subscripts are never abstracted —
//! they change dependence structure and recipe applicability.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::fnv1a64;
use crate::ir::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MatchMode {
    Exact,
    /// Concrete extents (array dimensions, constant loop extents, parameter
    /// defaults) are masked with `_` so one key covers all sizes.
    ShapeInsensitive,
}

impl std::fmt::Display for MatchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MatchMode::Exact => write!(f, "exact"),
            MatchMode::ShapeInsensitive => write!(f, "shape-insensitive"),
        }
    }
}

impl std::str::FromStr for MatchMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exact" => Ok(MatchMode::Exact),
            "shape-insensitive" => Ok(MatchMode::ShapeInsensitive),
            other => Err(format!("unknown match mode `{other}`")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CanonicalForm {
    pub text: String,
    /// Canonical array name -> extent spellings, in canonical order.
    pub shape: Vec<(String, Vec<String>)>,
    pub fingerprint: u64,
}

struct Renamer {
    iters: HashMap<String, String>,
    arrays: HashMap<String, String>,
    comps: HashMap<String, String>,
}

/// Gives every loop binding site a distinct iterator name (scoped alpha
/// renaming) so that renaming by name is renaming by binding site. Without
/// this, a source that reuses `i` across sibling nests and a variant that
/// uses fresh names everywhere would canonicalize differently.
fn uniquify_iters(p: &Program) -> Program {
    fn fix_affine(e: &AffineExpr, env: &HashMap<String, String>) -> AffineExpr {
        e.rename(env)
    }
    fn fix_bound(b: &Bound, env: &HashMap<String, String>) -> Bound {
        b.rename(env)
    }
    fn fix_expr(e: &Expr, env: &HashMap<String, String>) -> Expr {
        match e {
            Expr::Lit(_) | Expr::Read(_) => e.clone(),
            Expr::Iter(i) => Expr::Iter(env.get(i).cloned().unwrap_or_else(|| i.clone())),
            Expr::Add(a, b) => Expr::Add(Box::new(fix_expr(a, env)), Box::new(fix_expr(b, env))),
            Expr::Sub(a, b) => Expr::Sub(Box::new(fix_expr(a, env)), Box::new(fix_expr(b, env))),
            Expr::Mul(a, b) => Expr::Mul(Box::new(fix_expr(a, env)), Box::new(fix_expr(b, env))),
            Expr::Div(a, b) => Expr::Div(Box::new(fix_expr(a, env)), Box::new(fix_expr(b, env))),
            Expr::Min(a, b) => Expr::Min(Box::new(fix_expr(a, env)), Box::new(fix_expr(b, env))),
            Expr::Max(a, b) => Expr::Max(Box::new(fix_expr(a, env)), Box::new(fix_expr(b, env))),
        }
    }
    fn fix_access(a: &Access, env: &HashMap<String, String>) -> Access {
        Access {
            array: a.array.clone(),
            index: a.index.iter().map(|e| fix_affine(e, env)).collect(),
        }
    }
    fn walk(body: &[Stmt], env: &HashMap<String, String>, counter: &mut usize) -> Vec<Stmt> {
        body.iter()
            .map(|s| match s {
                Stmt::Loop(l) => {
                    let fresh = format!("__c{}", *counter);
                    *counter += 1;
                    let lo = fix_affine(&l.lo, env);
                    let hi = fix_bound(&l.hi, env);
                    let mut inner = env.clone();
                    inner.insert(l.iter.clone(), fresh.clone());
                    Stmt::Loop(LoopNode {
                        iter: fresh,
                        lo,
                        hi,
                        parallel: l.parallel,
                        vectorize: l.vectorize,
                        body: walk(&l.body, &inner, counter),
                    })
                }
                Stmt::Comp(c) => Stmt::Comp(Computation {
                    id: c.id.clone(),
                    write: fix_access(&c.write, env),
                    reads: c.reads.iter().map(|r| fix_access(r, env)).collect(),
                    expr: fix_expr(&c.expr, env),
                }),
                Stmt::Call(c) => {
                    let mut inner = env.clone();
                    let loops = c
                        .loops
                        .iter()
                        .map(|cl| {
                            let fresh = format!("__c{}", *counter);
                            *counter += 1;
                            let lo = fix_affine(&cl.lo, &inner);
                            let hi = fix_bound(&cl.hi, &inner);
                            inner.insert(cl.iter.clone(), fresh.clone());
                            CallLoop {
                                iter: fresh,
                                lo,
                                hi,
                            }
                        })
                        .collect();
                    Stmt::Call(IdiomCall {
                        idiom: c.idiom.clone(),
                        args: c.args.clone(),
                        loops,
                    })
                }
            })
            .collect()
    }
    let mut counter = 0;
    let mut q = p.clone();
    q.body = walk(&p.body, &HashMap::new(), &mut counter);
    q
}

fn build_renamer(p: &Program) -> Renamer {
    let mut r = Renamer {
        iters: HashMap::new(),
        arrays: HashMap::new(),
        comps: HashMap::new(),
    };
    fn visit_access(a: &Access, r: &mut Renamer) {
        let next = r.arrays.len();
        r.arrays
            .entry(a.array.clone())
            .or_insert_with(|| format!("A{next}"));
    }
    fn walk(body: &[Stmt], r: &mut Renamer) {
        for s in body {
            match s {
                Stmt::Loop(l) => {
                    let next = r.iters.len();
                    r.iters
                        .entry(l.iter.clone())
                        .or_insert_with(|| format!("L{next}"));
                    walk(&l.body, r);
                }
                Stmt::Comp(c) => {
                    let next = r.comps.len();
                    r.comps
                        .entry(c.id.clone())
                        .or_insert_with(|| format!("S{next}"));
                    visit_access(&c.write, r);
                    for rd in &c.reads {
                        visit_access(rd, r);
                    }
                }
                Stmt::Call(c) => {
                    for cl in &c.loops {
                        let next = r.iters.len();
                        r.iters
                            .entry(cl.iter.clone())
                            .or_insert_with(|| format!("L{next}"));
                    }
                    for a in &c.args {
                        let next = r.arrays.len();
                        r.arrays
                            .entry(a.clone())
                            .or_insert_with(|| format!("A{next}"));
                    }
                }
            }
        }
    }
    walk(&p.body, &mut r);
    // Arrays never accessed keep a stable name after all used ones.
    for a in &p.arrays {
        let next = r.arrays.len();
        r.arrays
            .entry(a.name.clone())
            .or_insert_with(|| format!("A{next}"));
    }
    r
}

fn fmt_affine(e: &AffineExpr, iters: &HashMap<String, String>) -> String {
    let map: HashMap<String, String> = iters.clone();
    e.rename(&map).to_string()
}

fn fmt_bound(b: &Bound, iters: &HashMap<String, String>, mask: bool) -> String {
    match b {
        Bound::Affine(e) => {
            if mask && e.is_const() {
                "_".to_string()
            } else {
                fmt_affine(e, iters)
            }
        }
        Bound::Min { min } => format!(
            "min({}, {})",
            fmt_bound(&Bound::Affine(min[0].clone()), iters, mask),
            fmt_bound(&Bound::Affine(min[1].clone()), iters, mask)
        ),
        Bound::CeilDiv { ceildiv } => {
            format!("ceildiv({}, {})", fmt_affine(&ceildiv.0, iters), ceildiv.1)
        }
    }
}

fn fmt_expr(e: &Expr, c: &Computation, r: &Renamer, out: &mut String) {
    match e {
        Expr::Lit(v) => {
            let _ = write!(out, "{v}");
        }
        Expr::Iter(i) => {
            let name = r.iters.get(i).cloned().unwrap_or_else(|| i.clone());
            let _ = write!(out, "{name}");
        }
        Expr::Read(k) => {
            let acc = &c.reads[*k];
            let name = r
                .arrays
                .get(&acc.array)
                .cloned()
                .unwrap_or_else(|| acc.array.clone());
            let idx: Vec<String> = acc.index.iter().map(|e| fmt_affine(e, &r.iters)).collect();
            let _ = write!(out, "{name}[{}]", idx.join(", "));
        }
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
            let op = match e {
                Expr::Add(..) => "+",
                Expr::Sub(..) => "-",
                Expr::Mul(..) => "*",
                _ => "/",
            };
            out.push('(');
            fmt_expr(a, c, r, out);
            let _ = write!(out, " {op} ");
            fmt_expr(b, c, r, out);
            out.push(')');
        }
        Expr::Min(a, b) | Expr::Max(a, b) => {
            let op = if matches!(e, Expr::Min(..)) { "min" } else { "max" };
            let _ = write!(out, "{op}(");
            fmt_expr(a, c, r, out);
            out.push_str(", ");
            fmt_expr(b, c, r, out);
            out.push(')');
        }
    }
}

fn write_body(body: &[Stmt], r: &Renamer, mask: bool, indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent);
    for s in body {
        match s {
            Stmt::Loop(l) => {
                let iter = r.iters.get(&l.iter).cloned().unwrap_or_else(|| l.iter.clone());
                let marks = format!(
                    "{}{}",
                    if l.parallel { "parallel " } else { "" },
                    if l.vectorize { "vectorize " } else { "" }
                );
                let _ = writeln!(
                    out,
                    "{pad}{marks}for {iter} in {} .. {} {{",
                    fmt_affine(&l.lo, &r.iters),
                    fmt_bound(&l.hi, &r.iters, mask)
                );
                write_body(&l.body, r, mask, indent + 1, out);
                let _ = writeln!(out, "{pad}}}");
            }
            Stmt::Comp(c) => {
                let id = r.comps.get(&c.id).cloned().unwrap_or_else(|| c.id.clone());
                let arr = r
                    .arrays
                    .get(&c.write.array)
                    .cloned()
                    .unwrap_or_else(|| c.write.array.clone());
                let idx: Vec<String> = c
                    .write
                    .index
                    .iter()
                    .map(|e| fmt_affine(e, &r.iters))
                    .collect();
                let mut rhs = String::new();
                fmt_expr(&c.expr, c, r, &mut rhs);
                let _ = writeln!(out, "{pad}{id}: {arr}[{}] = {rhs}", idx.join(", "));
            }
            Stmt::Call(c) => {
                let args: Vec<String> = c
                    .args
                    .iter()
                    .map(|a| r.arrays.get(a).cloned().unwrap_or_else(|| a.clone()))
                    .collect();
                let loops: Vec<String> = c
                    .loops
                    .iter()
                    .map(|cl| {
                        let iter = r
                            .iters
                            .get(&cl.iter)
                            .cloned()
                            .unwrap_or_else(|| cl.iter.clone());
                        format!(
                            "{iter}:{}..{}",
                            fmt_affine(&cl.lo, &r.iters),
                            fmt_bound(&cl.hi, &r.iters, mask)
                        )
                    })
                    .collect();
                let _ = writeln!(
                    out,
                    "{pad}call {}({}) over [{}]",
                    c.idiom,
                    args.join(", "),
                    loops.join(", ")
                );
            }
        }
    }
}

fn extent_spelling(e: &Extent, mask: bool) -> String {
    match e {
        Extent::Const(v) => {
            if mask {
                "_".to_string()
            } else {
                v.to_string()
            }
        }
        Extent::Param(n) => n.clone(),
    }
}

/// Canonical text of the whole program under `mode`. Deterministic:
/// equal programs under `structurally_equal(rename=true)` produce
/// byte-identical text.
pub fn canonical_text(p: &Program, mode: MatchMode) -> String {
    let mask = mode == MatchMode::ShapeInsensitive;
    let p = &uniquify_iters(p);
    let r = build_renamer(p);
    let mut out = String::new();
    for pd in &p.parameters {
        match (pd.default, mask) {
            (Some(_), true) => {
                let _ = writeln!(out, "param {} = _", pd.name);
            }
            (Some(v), false) => {
                let _ = writeln!(out, "param {} = {v}", pd.name);
            }
            (None, _) => {
                let _ = writeln!(out, "param {}", pd.name);
            }
        }
    }
    // Declarations in canonical (first-use) order.
    let mut decls: Vec<&ArrayDecl> = p.arrays.iter().collect();
    decls.sort_by_key(|d| r.arrays.get(&d.name).cloned().unwrap_or_default());
    for d in decls {
        let name = r.arrays.get(&d.name).cloned().unwrap_or_else(|| d.name.clone());
        let dims: Vec<String> = d.dims.iter().map(|e| extent_spelling(e, mask)).collect();
        let elem = match d.elem {
            ElemKind::Int => "int",
            ElemKind::Float => "float",
        };
        let _ = writeln!(out, "array {name}[{}] {elem}", dims.join(", "));
    }
    write_body(&p.body, &r, mask, 0, &mut out);
    out
}

/// Full canonical form: text, shape table, and fingerprint (exact mode).
pub fn canonicalize(p: &Program) -> CanonicalForm {
    let text = canonical_text(p, MatchMode::Exact);
    let r = build_renamer(p);
    let mut shape: Vec<(String, Vec<String>)> = p
        .arrays
        .iter()
        .map(|d| {
            (
                r.arrays.get(&d.name).cloned().unwrap_or_else(|| d.name.clone()),
                d.dims.iter().map(|e| extent_spelling(e, false)).collect(),
            )
        })
        .collect();
    shape.sort();
    let fingerprint = fnv1a64(text.as_bytes());
    CanonicalForm {
        text,
        shape,
        fingerprint,
    }
}

/// Database lookup key under the given mode.
pub fn match_key(p: &Program, mode: MatchMode) -> u64 {
    fnv1a64(canonical_text(p, mode).as_bytes())
}
