//! The loop-nest intermediate representation: a tree of loops and
//! computations with affine array accesses, plus validation, traversal,
//! structural equality, and the versioned JSON interchange format.
//!
//! All IR values are immutable after construction; transformations build new
//! trees rather than mutating shared state.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Integer-linear expression over loop iterators and symbolic parameters
/// plus a constant. Variables with coefficient 0 are absent from the map.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineExpr {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub terms: BTreeMap<String, i64>,
    #[serde(rename = "const", default, skip_serializing_if = "is_zero")]
    pub constant: i64,
}

fn is_zero(v: &i64) -> bool {
    *v == 0
}

impl AffineExpr {
    pub fn lit(c: i64) -> Self {
        AffineExpr {
            terms: BTreeMap::new(),
            constant: c,
        }
    }

    pub fn var(name: &str) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(name.to_string(), 1);
        AffineExpr { terms, constant: 0 }
    }

    /// Drops zero coefficients, restoring the normalized representation.
    fn normalized(mut self) -> Self {
        self.terms.retain(|_, c| *c != 0);
        self
    }

    pub fn add(&self, other: &AffineExpr) -> Self {
        let mut terms = self.terms.clone();
        for (v, c) in &other.terms {
            *terms.entry(v.clone()).or_insert(0) += c;
        }
        AffineExpr {
            terms,
            constant: self.constant + other.constant,
        }
        .normalized()
    }

    pub fn sub(&self, other: &AffineExpr) -> Self {
        self.add(&other.scale(-1))
    }

    pub fn scale(&self, k: i64) -> Self {
        AffineExpr {
            terms: self.terms.iter().map(|(v, c)| (v.clone(), c * k)).collect(),
            constant: self.constant * k,
        }
        .normalized()
    }

    pub fn plus_const(&self, k: i64) -> Self {
        let mut e = self.clone();
        e.constant += k;
        e
    }

    pub fn is_const(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, var: &str) -> i64 {
        self.terms.get(var).copied().unwrap_or(0)
    }

    pub fn vars(&self) -> impl Iterator<Item = &str> {
        self.terms.keys().map(|s| s.as_str())
    }

    /// Renames variables appearing as keys of `map`; others are untouched.
    pub fn rename(&self, map: &HashMap<String, String>) -> Self {
        let mut terms = BTreeMap::new();
        for (v, c) in &self.terms {
            let name = map.get(v).cloned().unwrap_or_else(|| v.clone());
            *terms.entry(name).or_insert(0) += c;
        }
        AffineExpr {
            terms,
            constant: self.constant,
        }
        .normalized()
    }

    pub fn eval(&self, env: &dyn Fn(&str) -> Option<i64>) -> Result<i64, String> {
        let mut acc = self.constant;
        for (v, c) in &self.terms {
            match env(v) {
                Some(x) => acc += c * x,
                None => return Err(format!("unbound variable `{v}`")),
            }
        }
        Ok(acc)
    }
}

impl fmt::Display for AffineExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (v, c) in &self.terms {
            if first {
                match *c {
                    1 => write!(f, "{v}")?,
                    -1 => write!(f, "-{v}")?,
                    c => write!(f, "{c}*{v}")?,
                }
                first = false;
            } else if *c < 0 {
                if *c == -1 {
                    write!(f, " - {v}")?;
                } else {
                    write!(f, " - {}*{v}", -c)?;
                }
            } else if *c == 1 {
                write!(f, " + {v}")?;
            } else {
                write!(f, " + {c}*{v}")?;
            }
        }
        if first {
            write!(f, "{}", self.constant)?;
        } else if self.constant > 0 {
            write!(f, " + {}", self.constant)?;
        } else if self.constant < 0 {
            write!(f, " - {}", -self.constant)?;
        }
        Ok(())
    }
}

/// Loop upper bound. Plain affine everywhere except tiled loops, which need
/// `min` for remainder guards and `ceildiv` for tile counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bound {
    Min { min: [AffineExpr; 2] },
    CeilDiv { ceildiv: (AffineExpr, i64) },
    Affine(AffineExpr),
}

impl Bound {
    pub fn affine(&self) -> Option<&AffineExpr> {
        match self {
            Bound::Affine(e) => Some(e),
            _ => None,
        }
    }

    pub fn vars(&self) -> Vec<&str> {
        match self {
            Bound::Affine(e) => e.vars().collect(),
            Bound::Min { min } => min.iter().flat_map(|e| e.vars()).collect(),
            Bound::CeilDiv { ceildiv } => ceildiv.0.vars().collect(),
        }
    }

    pub fn rename(&self, map: &HashMap<String, String>) -> Self {
        match self {
            Bound::Affine(e) => Bound::Affine(e.rename(map)),
            Bound::Min { min } => Bound::Min {
                min: [min[0].rename(map), min[1].rename(map)],
            },
            Bound::CeilDiv { ceildiv } => Bound::CeilDiv {
                ceildiv: (ceildiv.0.rename(map), ceildiv.1),
            },
        }
    }

    pub fn eval(&self, env: &dyn Fn(&str) -> Option<i64>) -> Result<i64, String> {
        match self {
            Bound::Affine(e) => e.eval(env),
            Bound::Min { min } => Ok(min[0].eval(env)?.min(min[1].eval(env)?)),
            Bound::CeilDiv { ceildiv } => {
                let n = ceildiv.0.eval(env)?;
                let d = ceildiv.1;
                if d <= 0 {
                    return Err("ceildiv by non-positive constant".into());
                }
                Ok((n + d - 1).div_euclid(d))
            }
        }
    }
}

impl From<AffineExpr> for Bound {
    fn from(e: AffineExpr) -> Self {
        Bound::Affine(e)
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::Affine(e) => write!(f, "{e}"),
            Bound::Min { min } => write!(f, "min({}, {})", min[0], min[1]),
            Bound::CeilDiv { ceildiv } => write!(f, "ceildiv({}, {})", ceildiv.0, ceildiv.1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElemKind {
    #[default]
    Int,
    Float,
}

/// Array extent: a concrete positive integer or a symbolic parameter name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extent {
    Const(i64),
    Param(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayDecl {
    pub name: String,
    pub dims: Vec<Extent>,
    #[serde(default)]
    pub elem: ElemKind,
}

impl ArrayDecl {
    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    /// Concrete extents under the given parameter bindings.
    pub fn concrete_dims(&self, bind: &dyn Fn(&str) -> Option<i64>) -> Result<Vec<i64>, String> {
        self.dims
            .iter()
            .map(|d| match d {
                Extent::Const(c) => Ok(*c),
                Extent::Param(p) => {
                    bind(p).ok_or_else(|| format!("unbound parameter `{p}` in extents of array"))
                }
            })
            .collect()
    }
}

/// Row-major linearized address of an index vector. Address of (x1,..,xd)
/// is the sum of xk times the product of all extents after k.
pub fn linearize(dims: &[i64], idx: &[i64]) -> i64 {
    debug_assert_eq!(dims.len(), idx.len());
    let mut addr = 0;
    for (k, x) in idx.iter().enumerate() {
        let inner: i64 = dims[k + 1..].iter().product();
        addr += x * inner;
    }
    addr
}

/// One array access site: the array name and one affine index per dimension.
/// Whether it is the write or a read is determined by its position in the
/// owning [`Computation`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Access {
    pub array: String,
    pub index: Vec<AffineExpr>,
}

impl Access {
    pub fn rename_iters(&self, map: &HashMap<String, String>) -> Self {
        Access {
            array: self.array.clone(),
            index: self.index.iter().map(|e| e.rename(map)).collect(),
        }
    }
}

impl fmt::Display for Access {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[", self.array)?;
        for (k, e) in self.index.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, "]")
    }
}

/// Opaque arithmetic expression tree. Leaves are integer literals, iterator
/// references, or indices into the owning computation's read list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expr {
    Lit(i64),
    Read(usize),
    Iter(String),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Lit(_) | Expr::Read(_) | Expr::Iter(_) => vec![],
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Min(a, b)
            | Expr::Max(a, b) => vec![a, b],
        }
    }

    pub fn contains_div(&self) -> bool {
        matches!(self, Expr::Div(_, _)) || self.children().iter().any(|c| c.contains_div())
    }

    pub fn rename_iters(&self, map: &HashMap<String, String>) -> Self {
        match self {
            Expr::Lit(c) => Expr::Lit(*c),
            Expr::Read(k) => Expr::Read(*k),
            Expr::Iter(v) => Expr::Iter(map.get(v).cloned().unwrap_or_else(|| v.clone())),
            Expr::Add(a, b) => Expr::Add(
                Box::new(a.rename_iters(map)),
                Box::new(b.rename_iters(map)),
            ),
            Expr::Sub(a, b) => Expr::Sub(
                Box::new(a.rename_iters(map)),
                Box::new(b.rename_iters(map)),
            ),
            Expr::Mul(a, b) => Expr::Mul(
                Box::new(a.rename_iters(map)),
                Box::new(b.rename_iters(map)),
            ),
            Expr::Div(a, b) => Expr::Div(
                Box::new(a.rename_iters(map)),
                Box::new(b.rename_iters(map)),
            ),
            Expr::Min(a, b) => Expr::Min(
                Box::new(a.rename_iters(map)),
                Box::new(b.rename_iters(map)),
            ),
            Expr::Max(a, b) => Expr::Max(
                Box::new(a.rename_iters(map)),
                Box::new(b.rename_iters(map)),
            ),
        }
    }
}

/// A unit of work: exactly one write access, a set of read accesses, and an
/// opaque expression tree over the reads.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Computation {
    pub id: String,
    pub write: Access,
    #[serde(default)]
    pub reads: Vec<Access>,
    pub expr: Expr,
}

impl Computation {
    /// All access sites, write first. Site 0 is the write; site k+1 is
    /// `reads[k]`.
    pub fn sites(&self) -> impl Iterator<Item = (&Access, AccessKind)> {
        std::iter::once((&self.write, AccessKind::Write))
            .chain(self.reads.iter().map(|r| (r, AccessKind::Read)))
    }

    pub fn rename_iters(&self, map: &HashMap<String, String>) -> Self {
        Computation {
            id: self.id.clone(),
            write: self.write.rename_iters(map),
            reads: self.reads.iter().map(|r| r.rename_iters(map)).collect(),
            expr: self.expr.rename_iters(map),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccessKind {
    Read,
    Write,
}

/// One loop of a replaced idiom, kept so the interpreter can execute the
/// idiom's reference definition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallLoop {
    pub iter: String,
    pub lo: AffineExpr,
    pub hi: Bound,
}

/// Opaque library-call node substituted for a matched idiom nest.
/// `args` lists the array operands in the idiom's role order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdiomCall {
    pub idiom: String,
    pub args: Vec<String>,
    pub loops: Vec<CallLoop>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopNode {
    pub iter: String,
    pub lo: AffineExpr,
    pub hi: Bound,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub parallel: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub vectorize: bool,
    pub body: Vec<Stmt>,
}

impl LoopNode {
    pub fn new(iter: &str, lo: AffineExpr, hi: impl Into<Bound>, body: Vec<Stmt>) -> Self {
        LoopNode {
            iter: iter.to_string(),
            lo,
            hi: hi.into(),
            parallel: false,
            vectorize: false,
            body,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stmt {
    Loop(LoopNode),
    Comp(Computation),
    Call(IdiomCall),
}

impl Stmt {
    pub fn as_loop(&self) -> Option<&LoopNode> {
        match self {
            Stmt::Loop(l) => Some(l),
            _ => None,
        }
    }

    /// Renames iterators throughout the subtree, including loop headers,
    /// bounds, subscripts, and idiom-call loop records.
    pub fn rename_iters(&self, map: &HashMap<String, String>) -> Stmt {
        match self {
            Stmt::Loop(l) => Stmt::Loop(LoopNode {
                iter: map.get(&l.iter).cloned().unwrap_or_else(|| l.iter.clone()),
                lo: l.lo.rename(map),
                hi: l.hi.rename(map),
                parallel: l.parallel,
                vectorize: l.vectorize,
                body: l.body.iter().map(|s| s.rename_iters(map)).collect(),
            }),
            Stmt::Comp(c) => Stmt::Comp(c.rename_iters(map)),
            Stmt::Call(c) => Stmt::Call(IdiomCall {
                idiom: c.idiom.clone(),
                args: c.args.clone(),
                loops: c
                    .loops
                    .iter()
                    .map(|cl| CallLoop {
                        iter: map.get(&cl.iter).cloned().unwrap_or_else(|| cl.iter.clone()),
                        lo: cl.lo.rename(map),
                        hi: cl.hi.rename(map),
                    })
                    .collect(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamDecl {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<i64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Program {
    #[serde(default)]
    pub parameters: Vec<ParamDecl>,
    #[serde(default)]
    pub arrays: Vec<ArrayDecl>,
    #[serde(default)]
    pub body: Vec<Stmt>,
}

impl Program {
    pub fn array(&self, name: &str) -> Option<&ArrayDecl> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn param_default(&self, name: &str) -> Option<i64> {
        self.parameters
            .iter()
            .find(|p| p.name == name)
            .and_then(|p| p.default)
    }

    /// Default bindings for all parameters that carry one.
    pub fn default_bindings(&self) -> HashMap<String, i64> {
        self.parameters
            .iter()
            .filter_map(|p| p.default.map(|v| (p.name.clone(), v)))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Interchange format

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProgramDoc {
    version: u32,
    #[serde(default)]
    parameters: Vec<ParamDecl>,
    #[serde(default)]
    arrays: Vec<ArrayDecl>,
    #[serde(default)]
    body: Vec<Stmt>,
}

/// Serializes to the versioned JSON interchange document.
pub fn to_json(p: &Program) -> String {
    let doc = ProgramDoc {
        version: FORMAT_VERSION,
        parameters: p.parameters.clone(),
        arrays: p.arrays.clone(),
        body: p.body.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("program serialization cannot fail")
}

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("malformed document: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("unsupported format version {0} (expected {FORMAT_VERSION})")]
    Version(u32),
    #[error("invalid program: {0}")]
    Invalid(String),
}

/// Parses the interchange document and validates the result.
pub fn from_json(text: &str) -> Result<Program, FormatError> {
    let doc: ProgramDoc = serde_json::from_str(text)?;
    if doc.version != FORMAT_VERSION {
        return Err(FormatError::Version(doc.version));
    }
    let p = Program {
        parameters: doc.parameters,
        arrays: doc.arrays,
        body: doc.body,
    };
    let diags = validate(&p);
    if let Some(d) = diags.first() {
        return Err(FormatError::Invalid(format!("{}: {}", d.path, d.message)));
    }
    Ok(p)
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Checks all IR invariants; returns one diagnostic per violation with a
/// path to the offending node. Empty iff the program is well-formed.
pub fn validate(p: &Program) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut names: HashSet<&str> = HashSet::new();
    for pd in &p.parameters {
        if !names.insert(&pd.name) {
            diags.push(Diagnostic {
                path: format!("parameters.{}", pd.name),
                message: "duplicate name".into(),
            });
        }
        if let Some(v) = pd.default {
            if v < 1 {
                diags.push(Diagnostic {
                    path: format!("parameters.{}", pd.name),
                    message: format!("default binding {v} must be >= 1"),
                });
            }
        }
    }
    for a in &p.arrays {
        if !names.insert(&a.name) {
            diags.push(Diagnostic {
                path: format!("arrays.{}", a.name),
                message: "duplicate name".into(),
            });
        }
        if a.dims.is_empty() {
            diags.push(Diagnostic {
                path: format!("arrays.{}", a.name),
                message: "array has no dimensions".into(),
            });
        }
        for (k, d) in a.dims.iter().enumerate() {
            match d {
                Extent::Const(c) if *c < 1 => diags.push(Diagnostic {
                    path: format!("arrays.{}.dims[{k}]", a.name),
                    message: format!("concrete extent {c} must be >= 1"),
                }),
                Extent::Param(name) if p.parameters.iter().all(|pd| &pd.name != name) => {
                    diags.push(Diagnostic {
                        path: format!("arrays.{}.dims[{k}]", a.name),
                        message: format!("extent references undeclared parameter `{name}`"),
                    })
                }
                _ => {}
            }
        }
    }
    let params: HashSet<&str> = p.parameters.iter().map(|pd| pd.name.as_str()).collect();
    let mut comp_ids: HashSet<&str> = HashSet::new();
    let mut iters: Vec<String> = Vec::new();
    validate_body(p, &p.body, "body", &params, &names, &mut iters, &mut comp_ids, &mut diags);
    diags
}

#[allow(clippy::too_many_arguments)]
fn validate_body<'a>(
    p: &'a Program,
    body: &'a [Stmt],
    path: &str,
    params: &HashSet<&str>,
    globals: &HashSet<&str>,
    iters: &mut Vec<String>,
    comp_ids: &mut HashSet<&'a str>,
    diags: &mut Vec<Diagnostic>,
) {
    for (k, stmt) in body.iter().enumerate() {
        match stmt {
            Stmt::Loop(l) => {
                let lpath = format!("{path}[{k}].loop({})", l.iter);
                if iters.iter().any(|i| i == &l.iter) {
                    diags.push(Diagnostic {
                        path: lpath.clone(),
                        message: format!("iterator `{}` shadows an enclosing iterator", l.iter),
                    });
                }
                if globals.contains(l.iter.as_str()) {
                    diags.push(Diagnostic {
                        path: lpath.clone(),
                        message: format!("iterator `{}` collides with a declared name", l.iter),
                    });
                }
                let visible: HashSet<&str> = iters
                    .iter()
                    .map(|s| s.as_str())
                    .chain(params.iter().copied())
                    .collect();
                for v in l.lo.vars() {
                    if !visible.contains(v) {
                        diags.push(Diagnostic {
                            path: lpath.clone(),
                            message: format!("lower bound references unbound `{v}`"),
                        });
                    }
                }
                for v in l.hi.vars() {
                    if !visible.contains(v) {
                        diags.push(Diagnostic {
                            path: lpath.clone(),
                            message: format!("upper bound references unbound `{v}`"),
                        });
                    }
                }
                iters.push(l.iter.clone());
                validate_body(p, &l.body, &lpath, params, globals, iters, comp_ids, diags);
                iters.pop();
            }
            Stmt::Comp(c) => {
                let cpath = format!("{path}[{k}].comp({})", c.id);
                if !comp_ids.insert(&c.id) {
                    diags.push(Diagnostic {
                        path: cpath.clone(),
                        message: format!("duplicate computation id `{}`", c.id),
                    });
                }
                let visible: HashSet<&str> = iters
                    .iter()
                    .map(|s| s.as_str())
                    .chain(params.iter().copied())
                    .collect();
                for (acc, kind) in c.sites() {
                    let what = match kind {
                        AccessKind::Write => "write",
                        AccessKind::Read => "read",
                    };
                    match p.array(&acc.array) {
                        None => diags.push(Diagnostic {
                            path: cpath.clone(),
                            message: format!("{what} of undeclared array `{}`", acc.array),
                        }),
                        Some(decl) if decl.rank() != acc.index.len() => diags.push(Diagnostic {
                            path: cpath.clone(),
                            message: format!(
                                "rank mismatch: `{}` has rank {} but {what} supplies {} indices",
                                acc.array,
                                decl.rank(),
                                acc.index.len()
                            ),
                        }),
                        _ => {}
                    }
                    for idx in &acc.index {
                        for v in idx.vars() {
                            if !visible.contains(v) {
                                diags.push(Diagnostic {
                                    path: cpath.clone(),
                                    message: format!("{what} index references unbound `{v}`"),
                                });
                            }
                        }
                    }
                }
                validate_expr(&c.expr, c.reads.len(), &visible, &cpath, diags);
            }
            Stmt::Call(call) => {
                let cpath = format!("{path}[{k}].call({})", call.idiom);
                for a in &call.args {
                    if p.array(a).is_none() {
                        diags.push(Diagnostic {
                            path: cpath.clone(),
                            message: format!("call argument `{a}` is not a declared array"),
                        });
                    }
                }
            }
        }
    }
}

fn validate_expr(
    e: &Expr,
    num_reads: usize,
    visible: &HashSet<&str>,
    path: &str,
    diags: &mut Vec<Diagnostic>,
) {
    match e {
        Expr::Read(k) if *k >= num_reads => diags.push(Diagnostic {
            path: path.to_string(),
            message: format!("expression references read #{k} but only {num_reads} declared"),
        }),
        Expr::Iter(v) if !visible.contains(v.as_str()) => diags.push(Diagnostic {
            path: path.to_string(),
            message: format!("expression references unbound `{v}`"),
        }),
        _ => {}
    }
    for c in e.children() {
        validate_expr(c, num_reads, visible, path, diags);
    }
}

// ---------------------------------------------------------------------------
// Traversal

/// Depth-first, left-to-right listing of loop iterators in a nest.
pub fn iterators_in_order(nest: &LoopNode) -> Vec<String> {
    let mut out = vec![nest.iter.clone()];
    for s in &nest.body {
        if let Stmt::Loop(l) = s {
            out.extend(iterators_in_order(l));
        }
    }
    out
}

/// A computation together with its enclosing loop stack (outermost first),
/// its tree path, and its in-order position.
#[derive(Clone)]
pub struct CompSite<'a> {
    pub comp: &'a Computation,
    pub loops: Vec<&'a LoopNode>,
    pub path: Vec<usize>,
    pub order: usize,
}

pub fn collect_comps(p: &Program) -> Vec<CompSite<'_>> {
    let mut out = Vec::new();
    let mut stack = Vec::new();
    let mut path = Vec::new();
    collect_comps_body(&p.body, &mut stack, &mut path, &mut out);
    out
}

fn collect_comps_body<'a>(
    body: &'a [Stmt],
    stack: &mut Vec<&'a LoopNode>,
    path: &mut Vec<usize>,
    out: &mut Vec<CompSite<'a>>,
) {
    for (k, s) in body.iter().enumerate() {
        path.push(k);
        match s {
            Stmt::Loop(l) => {
                stack.push(l);
                collect_comps_body(&l.body, stack, path, out);
                stack.pop();
            }
            Stmt::Comp(c) => {
                let order = out.len();
                out.push(CompSite {
                    comp: c,
                    loops: stack.clone(),
                    path: path.clone(),
                    order,
                });
            }
            Stmt::Call(_) => {}
        }
        path.pop();
    }
}

/// Looks up a statement by tree path.
pub fn stmt_at<'a>(p: &'a Program, path: &[usize]) -> Option<&'a Stmt> {
    let mut body = &p.body;
    let mut stmt = None;
    for &k in path {
        stmt = body.get(k);
        match stmt {
            Some(Stmt::Loop(l)) => body = &l.body,
            Some(_) => body = EMPTY,
            None => return None,
        }
    }
    stmt
}

static EMPTY: &Vec<Stmt> = &Vec::new();

pub fn stmt_at_mut<'a>(p: &'a mut Program, path: &[usize]) -> Option<&'a mut Stmt> {
    let mut body = &mut p.body;
    for (n, &k) in path.iter().enumerate() {
        if n + 1 == path.len() {
            return body.get_mut(k);
        }
        match body.get_mut(k) {
            Some(Stmt::Loop(l)) => body = &mut l.body,
            _ => return None,
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Structural equality

struct EqCtx {
    rename: bool,
    // Bijective array correspondence, built on first use.
    arr_ab: HashMap<String, String>,
    arr_ba: HashMap<String, String>,
    // Scoped iterator correspondence (pushed/popped per loop).
    iter_ab: Vec<(String, String)>,
}

impl EqCtx {
    fn arrays_match(&mut self, a: &str, b: &str) -> bool {
        if !self.rename {
            return a == b;
        }
        match (self.arr_ab.get(a), self.arr_ba.get(b)) {
            (Some(x), Some(y)) => x == b && y == a,
            (None, None) => {
                self.arr_ab.insert(a.to_string(), b.to_string());
                self.arr_ba.insert(b.to_string(), a.to_string());
                true
            }
            _ => false,
        }
    }

    fn vars_match(&self, a: &str, b: &str) -> bool {
        // Innermost binding wins, mirroring shadowing rules.
        for (x, y) in self.iter_ab.iter().rev() {
            if x == a || y == b {
                return x == a && y == b;
            }
        }
        // Free names (parameters) must agree exactly.
        a == b
    }

    fn affine_match(&self, a: &AffineExpr, b: &AffineExpr) -> bool {
        if a.constant != b.constant || a.terms.len() != b.terms.len() {
            return false;
        }
        // Each term of `a` must have a matching term in `b` under the
        // current variable correspondence.
        a.terms.iter().all(|(v, c)| {
            b.terms
                .iter()
                .any(|(w, d)| c == d && self.vars_match(v, w))
        })
    }

    fn bound_match(&self, a: &Bound, b: &Bound) -> bool {
        match (a, b) {
            (Bound::Affine(x), Bound::Affine(y)) => self.affine_match(x, y),
            (Bound::Min { min: x }, Bound::Min { min: y }) => {
                self.affine_match(&x[0], &y[0]) && self.affine_match(&x[1], &y[1])
            }
            (Bound::CeilDiv { ceildiv: x }, Bound::CeilDiv { ceildiv: y }) => {
                x.1 == y.1 && self.affine_match(&x.0, &y.0)
            }
            _ => false,
        }
    }

    fn access_match(&mut self, a: &Access, b: &Access) -> bool {
        self.arrays_match(&a.array, &b.array)
            && a.index.len() == b.index.len()
            && a.index
                .iter()
                .zip(&b.index)
                .all(|(x, y)| self.affine_match(x, y))
    }

    fn expr_match(&self, a: &Expr, b: &Expr) -> bool {
        match (a, b) {
            (Expr::Lit(x), Expr::Lit(y)) => x == y,
            (Expr::Read(x), Expr::Read(y)) => x == y,
            (Expr::Iter(x), Expr::Iter(y)) => self.vars_match(x, y),
            (Expr::Add(..), Expr::Add(..))
            | (Expr::Sub(..), Expr::Sub(..))
            | (Expr::Mul(..), Expr::Mul(..))
            | (Expr::Div(..), Expr::Div(..))
            | (Expr::Min(..), Expr::Min(..))
            | (Expr::Max(..), Expr::Max(..)) => {
                let ca = a.children();
                let cb = b.children();
                ca.iter().zip(&cb).all(|(x, y)| self.expr_match(x, y))
            }
            _ => false,
        }
    }

    fn stmt_match(&mut self, a: &Stmt, b: &Stmt) -> bool {
        match (a, b) {
            (Stmt::Loop(la), Stmt::Loop(lb)) => {
                if !self.rename && la.iter != lb.iter {
                    return false;
                }
                if la.parallel != lb.parallel || la.vectorize != lb.vectorize {
                    return false;
                }
                if !self.affine_match(&la.lo, &lb.lo) || !self.bound_match(&la.hi, &lb.hi) {
                    return false;
                }
                if la.body.len() != lb.body.len() {
                    return false;
                }
                self.iter_ab.push((la.iter.clone(), lb.iter.clone()));
                let ok = la
                    .body
                    .iter()
                    .zip(&lb.body)
                    .all(|(x, y)| self.stmt_match(x, y));
                self.iter_ab.pop();
                ok
            }
            (Stmt::Comp(ca), Stmt::Comp(cb)) => {
                if !self.rename && ca.id != cb.id {
                    return false;
                }
                self.access_match(&ca.write, &cb.write)
                    && ca.reads.len() == cb.reads.len()
                    && ca
                        .reads
                        .iter()
                        .zip(&cb.reads)
                        .all(|(x, y)| {
                            // Borrow split: access_match needs &mut self.
                            let x = x.clone();
                            let y = y.clone();
                            self.access_match(&x, &y)
                        })
                    && self.expr_match(&ca.expr, &cb.expr)
            }
            (Stmt::Call(x), Stmt::Call(y)) => {
                x.idiom == y.idiom
                    && x.args.len() == y.args.len()
                    && x.args
                        .iter()
                        .zip(&y.args)
                        .all(|(a, b)| self.arrays_match(a, b))
                    && x.loops.len() == y.loops.len()
                    && {
                        for (la, lb) in x.loops.iter().zip(&y.loops) {
                            if !self.affine_match(&la.lo, &lb.lo)
                                || !self.bound_match(&la.hi, &lb.hi)
                            {
                                return false;
                            }
                            self.iter_ab.push((la.iter.clone(), lb.iter.clone()));
                        }
                        for _ in &x.loops {
                            self.iter_ab.pop();
                        }
                        true
                    }
            }
            _ => false,
        }
    }
}

/// True iff the trees are identical; with `rename`, identical up to a
/// consistent bijective renaming of iterators and arrays.
pub fn structurally_equal(a: &Program, b: &Program, rename: bool) -> bool {
    if a.parameters != b.parameters {
        return false;
    }
    if a.body.len() != b.body.len() {
        return false;
    }
    let mut ctx = EqCtx {
        rename,
        arr_ab: HashMap::new(),
        arr_ba: HashMap::new(),
        iter_ab: Vec::new(),
    };
    if !rename && a.arrays != b.arrays {
        return false;
    }
    if rename {
        // Shapes must still correspond; the bijection is built at use sites,
        // so here we only require equal counts.
        if a.arrays.len() != b.arrays.len() {
            return false;
        }
    }
    let body_ok = a
        .body
        .iter()
        .zip(&b.body)
        .all(|(x, y)| ctx.stmt_match(x, y));
    if !body_ok {
        return false;
    }
    if rename {
        // Dimensions of corresponding arrays must agree.
        for (x, y) in &ctx.arr_ab {
            let (da, db) = match (a.array(x), b.array(y)) {
                (Some(da), Some(db)) => (da, db),
                _ => return false,
            };
            if da.dims != db.dims || da.elem != db.elem {
                return false;
            }
        }
    }
    true
}

/// Equality on two single nests, wrapped as one-statement programs sharing
/// the arrays of the given programs.
pub fn nests_structurally_equal(pa: &Program, a: &Stmt, pb: &Program, b: &Stmt, rename: bool) -> bool {
    let wrap = |p: &Program, s: &Stmt| Program {
        parameters: p.parameters.clone(),
        arrays: p.arrays.clone(),
        body: vec![s.clone()],
    };
    structurally_equal(&wrap(pa, a), &wrap(pb, b), rename)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse;

    fn gemm_text() -> &'static str {
        "param N = 4;\n\
         array A[N, N]; array B[N, N]; array C[N, N];\n\
         for i in 0..N { for j in 0..N { for k in 0..N {\n\
           C[i, j] += A[i, k] * B[k, j];\n\
         } } }\n"
    }

    #[test]
    fn affine_normalization_drops_zero_coeffs() {
        let e = AffineExpr::var("i").add(&AffineExpr::var("i").scale(-1));
        assert!(e.terms.is_empty());
        assert_eq!(e, AffineExpr::lit(0));
    }

    #[test]
    fn affine_display_round() {
        let e = AffineExpr::var("i").scale(2).add(&AffineExpr::var("j")).plus_const(-1);
        assert_eq!(e.to_string(), "2*i + j - 1");
    }

    #[test]
    fn linearize_matches_brute_force_enumeration() {
        // Oracle: enumerate indices in row-major nesting order; addresses
        // must come out 0,1,2,...
        let dims = [3i64, 4, 5];
        let mut expect = 0;
        for x in 0..dims[0] {
            for y in 0..dims[1] {
                for z in 0..dims[2] {
                    assert_eq!(linearize(&dims, &[x, y, z]), expect);
                    expect += 1;
                }
            }
        }
    }

    #[test]
    fn validate_accepts_gemm() {
        let p = parse(gemm_text()).unwrap();
        assert!(validate(&p).is_empty());
    }

    #[test]
    fn validate_reports_rank_mismatch() {
        let mut p = parse(gemm_text()).unwrap();
        // Truncate the write's index list: A has rank 2, supply 1.
        if let Some(Stmt::Loop(l)) = p.body.get_mut(0) {
            fn first_comp(body: &mut Vec<Stmt>) -> &mut Computation {
                match &mut body[0] {
                    Stmt::Loop(l) => first_comp(&mut l.body),
                    Stmt::Comp(c) => c,
                    _ => panic!(),
                }
            }
            first_comp(&mut l.body).write.index.pop();
        }
        let diags = validate(&p);
        assert!(diags.iter().any(|d| d.message.contains("rank mismatch")));
    }

    #[test]
    fn validate_reports_unbound_iterator() {
        let mut p = parse("array A[8]; for i in 0..8 { A[i] = 0; }").unwrap();
        if let Some(Stmt::Loop(l)) = p.body.get_mut(0) {
            if let Stmt::Comp(c) = &mut l.body[0] {
                c.write.index[0] = AffineExpr::var("q");
            }
        }
        let diags = validate(&p);
        assert!(diags.iter().any(|d| d.message.contains("unbound `q`")));
    }

    #[test]
    fn iterators_in_order_mixed_nest() {
        let p = parse(
            "array A[8]; array B[8, 8];\n\
             for i in 0..8 { A[i] = 0; for j in 0..8 { B[i, j] = 1; } }",
        )
        .unwrap();
        let nest = p.body[0].as_loop().unwrap();
        assert_eq!(iterators_in_order(nest), vec!["i", "j"]);
    }

    #[test]
    fn iterators_in_order_chain() {
        let p = parse(
            "array A[2, 2, 2];\n\
             for i in 0..2 { for j in 0..2 { for k in 0..2 { A[i, j, k] = 0; } } }",
        )
        .unwrap();
        let nest = p.body[0].as_loop().unwrap();
        assert_eq!(iterators_in_order(nest), vec!["i", "j", "k"]);
    }

    #[test]
    fn structural_equality_reflexive_and_alpha() {
        let p = parse(gemm_text()).unwrap();
        assert!(structurally_equal(&p, &p, false));
        let q = parse(
            "param N = 4;\n\
             array A[N, N]; array B[N, N]; array C[N, N];\n\
             for t in 0..N { for j in 0..N { for k in 0..N {\n\
               C[t, j] += A[t, k] * B[k, j];\n\
             } } }\n",
        )
        .unwrap();
        assert!(!structurally_equal(&p, &q, false));
        assert!(structurally_equal(&p, &q, true));
    }

    #[test]
    fn structural_equality_distinguishes_loop_orders() {
        let p = parse(gemm_text()).unwrap();
        let q = parse(
            "param N = 4;\n\
             array A[N, N]; array B[N, N]; array C[N, N];\n\
             for i in 0..N { for k in 0..N { for j in 0..N {\n\
               C[i, j] += A[i, k] * B[k, j];\n\
             } } }\n",
        )
        .unwrap();
        assert!(!structurally_equal(&p, &q, true));
    }

    #[test]
    fn json_round_trip() {
        let p = parse(gemm_text()).unwrap();
        let text = to_json(&p);
        let q = from_json(&text).unwrap();
        assert!(structurally_equal(&p, &q, false));
    }

    #[test]
    fn json_unknown_field_is_error() {
        let p = parse(gemm_text()).unwrap();
        let text = to_json(&p).replace("\"version\": 1,", "\"version\": 1, \"extra\": 2,");
        let err = from_json(&text).unwrap_err();
        assert!(err.to_string().contains("extra"), "got: {err}");
    }

    #[test]
    fn json_truncated_is_error() {
        let p = parse(gemm_text()).unwrap();
        let text = to_json(&p);
        assert!(from_json(&text[..text.len() / 2]).is_err());
    }

    #[test]
    fn json_version_mismatch() {
        let p = parse(gemm_text()).unwrap();
        let text = to_json(&p).replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(from_json(&text), Err(FormatError::Version(9))));
    }
}
