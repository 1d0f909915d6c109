//! Transformation engine and fingerprint-keyed recipe database.
//!
//! Recipes are ordered transformation sequences (interchange, tiling,
//! parallel/vector marks, producer-consumer fusion, idiom replacement)
//! keyed by a canonical fingerprint. Every step re-validates legality at
//! its application point; an illegal step aborts the whole application.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::canonical::{match_key, MatchMode};
use crate::deps::{self, Direction};
use crate::ir::*;
use crate::normalize::{apply_band_permutation, body_at_mut, fresh_name, used_names};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Transform {
    /// Reorder the perfect band rooted at `path` by `perm`.
    Interchange { path: Vec<usize>, perm: Vec<usize> },
    /// Strip-mine the loop at `path` into a tile loop and a point loop
    /// (min-guard remainder handling), then sink the point loop inward
    /// while the interchange stays legal.
    Tile { path: Vec<usize>, size: i64 },
    MarkParallel { path: Vec<usize> },
    MarkVectorize { path: Vec<usize> },
    /// Fuse the nest at `path` with its next sibling; refused unless every
    /// cross edge is a loop-independent one-to-one flow producer→consumer.
    FuseProducerConsumer { path: Vec<usize> },
    /// Replace the first nest matching the named idiom with a call node.
    ReplaceIdiom { idiom: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Recipe {
    pub key: u64,
    pub mode: MatchMode,
    pub steps: Vec<Transform>,
    pub provenance: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ApplyError {
    #[error("recipe key {key:016x} ({mode}) does not match the program")]
    KeyMismatch { key: u64, mode: MatchMode },
    #[error("step {index} illegal: {reason}")]
    IllegalStep { index: usize, reason: String },
}

impl MatchMode {
    fn as_str(self) -> &'static str {
        match self {
            MatchMode::Exact => "exact",
            MatchMode::ShapeInsensitive => "shape-insensitive",
        }
    }
}

impl Serialize for MatchMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for MatchMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Step application

/// Applies the recipe to a normalized program, re-checking legality of
/// every step. Fails with `KeyMismatch` when the program's lookup key does
/// not equal the recipe key under the recipe's mode.
pub fn apply(recipe: &Recipe, p: &Program) -> Result<Program, ApplyError> {
    if match_key(p, recipe.mode) != recipe.key {
        return Err(ApplyError::KeyMismatch {
            key: recipe.key,
            mode: recipe.mode,
        });
    }
    apply_steps(&recipe.steps, p)
}

/// Applies a transformation sequence without a key check.
pub fn apply_steps(steps: &[Transform], p: &Program) -> Result<Program, ApplyError> {
    let mut q = p.clone();
    for (index, step) in steps.iter().enumerate() {
        q = apply_one(step, &q).map_err(|reason| ApplyError::IllegalStep { index, reason })?;
    }
    Ok(q)
}

fn apply_one(step: &Transform, p: &Program) -> Result<Program, String> {
    match step {
        Transform::Interchange { path, perm } => {
            let graph = deps::analyze_static(p);
            match deps::is_permutation_legal(p, &graph, path, perm) {
                Ok(true) => {}
                Ok(false) => return Err("interchange violates a dependence".into()),
                Err(e) => return Err(e.to_string()),
            }
            let mut q = p.clone();
            apply_band_permutation(&mut q, path, perm);
            Ok(q)
        }
        Transform::Tile { path, size } => tile(p, path, *size),
        Transform::MarkParallel { path } => {
            if let Some(carried) = carried_dependence_at(p, path)? {
                return Err(format!("carried dependence {carried} blocks parallel mark"));
            }
            let mut q = p.clone();
            match stmt_at_mut(&mut q, path) {
                Some(Stmt::Loop(l)) => l.parallel = true,
                _ => return Err("no loop at path".into()),
            }
            Ok(q)
        }
        Transform::MarkVectorize { path } => {
            match stmt_at(p, path) {
                Some(Stmt::Loop(l)) => {
                    if l.body.iter().any(|s| matches!(s, Stmt::Loop(_))) {
                        return Err("vectorize mark requires an innermost loop".into());
                    }
                }
                _ => return Err("no loop at path".into()),
            }
            if let Some(carried) = carried_dependence_at(p, path)? {
                return Err(format!("carried dependence {carried} blocks vectorize mark"));
            }
            let mut q = p.clone();
            match stmt_at_mut(&mut q, path) {
                Some(Stmt::Loop(l)) => l.vectorize = true,
                _ => unreachable!(),
            }
            Ok(q)
        }
        Transform::FuseProducerConsumer { path } => {
            if path.is_empty() {
                return Err("empty fusion path".into());
            }
            let (parent, idx) = path.split_at(path.len() - 1);
            let parent = if parent.is_empty() { None } else { Some(parent) };
            try_fuse(p, parent, idx[0], FuseCheck::OneToOneFlow)
        }
        Transform::ReplaceIdiom { idiom } => replace_idiom(p, idiom),
    }
}

/// The id of a computation witnessing a dependence carried at the loop at
/// `path`, if any: a feasible direction vector equal at every outer loop
/// and unequal at this one.
fn carried_dependence_at(p: &Program, path: &[usize]) -> Result<Option<String>, String> {
    match stmt_at(p, path) {
        Some(Stmt::Loop(_)) => {}
        _ => return Err("no loop at path".into()),
    }
    let d = path.len() - 1;
    let graph = deps::analyze_static(p);
    for e in &graph.edges {
        let under = |id: &str| {
            graph
                .comps
                .get(id)
                .map_or(false, |ci| ci.path.len() > d && ci.path[..path.len()] == *path)
        };
        if !under(&e.src) || !under(&e.dst) {
            continue;
        }
        for v in e.feasible_vectors() {
            if v[..d].iter().all(|&s| s == 0) && v[d] != 0 {
                return Ok(Some(e.src.clone()));
            }
        }
    }
    Ok(None)
}

/// Strip-mines the loop at `path` with the given tile size: the new tile
/// loop runs `0 .. ceildiv(hi - lo, size)`; the point loop keeps the
/// original iterator with bounds `lo + size*t .. min(lo + size*t + size,
/// hi)`, so subscripts are untouched and the iteration set is preserved
/// exactly. The point loop then sinks inward while interchange is legal.
fn tile(p: &Program, path: &[usize], size: i64) -> Result<Program, String> {
    if size < 2 {
        return Err("tile size must be >= 2".into());
    }
    let l = match stmt_at(p, path) {
        Some(Stmt::Loop(l)) => l.clone(),
        _ => return Err("no loop at path".into()),
    };
    let hi = match &l.hi {
        Bound::Affine(h) => h.clone(),
        _ => return Err("loop is already tiled or min-bounded".into()),
    };
    let mut q = p.clone();
    let mut used = used_names(&q);
    let tile_iter = fresh_name(&format!("{}t", l.iter), &mut used);

    let extent = hi.sub(&l.lo);
    let point_lo = l.lo.add(&AffineExpr::var(&tile_iter).scale(size));
    let point = LoopNode {
        iter: l.iter.clone(),
        lo: point_lo.clone(),
        hi: Bound::Min {
            min: [point_lo.plus_const(size), hi],
        },
        parallel: false,
        vectorize: false,
        body: l.body.clone(),
    };
    let tile_loop = LoopNode {
        iter: tile_iter,
        lo: AffineExpr::lit(0),
        hi: Bound::CeilDiv {
            ceildiv: (extent, size),
        },
        parallel: l.parallel,
        vectorize: false,
        body: vec![Stmt::Loop(point)],
    };
    *stmt_at_mut(&mut q, path).unwrap() = Stmt::Loop(tile_loop);

    // Sink the point loop inward while the swap with its single child loop
    // is legal.
    let mut point_path = path.to_vec();
    point_path.push(0);
    loop {
        let is_chain = matches!(
            stmt_at(&q, &point_path),
            Some(Stmt::Loop(l)) if matches!(l.body.as_slice(), [Stmt::Loop(_)])
        );
        if !is_chain {
            break;
        }
        let graph = deps::analyze_static(&q);
        match deps::is_permutation_legal(&q, &graph, &point_path, &[1, 0]) {
            Ok(true) => {
                apply_band_permutation(&mut q, &point_path, &[1, 0]);
                point_path.push(0);
            }
            _ => break,
        }
    }
    Ok(q)
}

// ---------------------------------------------------------------------------
// Fusion

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FuseCheck {
    /// Classic legality: no dependence from the second nest's computations
    /// back to the first's in the fused body. Used by the variant generator.
    DirectionPreserving,
    /// Strict producer-consumer rule: at least one cross edge, and every
    /// cross edge is a loop-independent flow from the first nest to the
    /// second with identical subscripts under iterator identification.
    OneToOneFlow,
}

fn comp_ids(body: &[Stmt], out: &mut HashSet<String>) {
    for s in body {
        match s {
            Stmt::Loop(l) => comp_ids(&l.body, out),
            Stmt::Comp(c) => {
                out.insert(c.id.clone());
            }
            Stmt::Call(_) => {}
        }
    }
}

fn subtree_iters(body: &[Stmt], out: &mut HashSet<String>) {
    for s in body {
        if let Stmt::Loop(l) = s {
            out.insert(l.iter.clone());
            subtree_iters(&l.body, out);
        }
    }
}

/// Fuses the loop at child `idx` of the given body with its next sibling.
/// Both must be loops over identical domains. Returns the fused program or
/// an explanation of why fusion is refused.
pub fn try_fuse(
    p: &Program,
    parent: Option<&[usize]>,
    idx: usize,
    check: FuseCheck,
) -> Result<Program, String> {
    let body: &[Stmt] = match parent {
        Some(path) => match stmt_at(p, path) {
            Some(Stmt::Loop(l)) => &l.body,
            _ => return Err("parent path is not a loop".into()),
        },
        None => &p.body,
    };
    if idx + 1 >= body.len() {
        return Err("no adjacent nest to fuse with".into());
    }
    let (l1, l2) = match (&body[idx], &body[idx + 1]) {
        (Stmt::Loop(a), Stmt::Loop(b)) => (a, b),
        _ => return Err("both statements must be loops".into()),
    };
    if l1.lo != l2.lo || l1.hi != l2.hi {
        return Err("iteration domains differ".into());
    }
    let mut inner2 = HashSet::new();
    subtree_iters(&l2.body, &mut inner2);
    if inner2.contains(&l1.iter) {
        return Err("iterator name clash under fusion".into());
    }

    let mut map = std::collections::HashMap::new();
    map.insert(l2.iter.clone(), l1.iter.clone());
    let mut fused_body = l1.body.clone();
    fused_body.extend(l2.body.iter().map(|s| s.rename_iters(&map)));
    let fused = LoopNode {
        iter: l1.iter.clone(),
        lo: l1.lo.clone(),
        hi: l1.hi.clone(),
        parallel: l1.parallel && l2.parallel,
        vectorize: l1.vectorize && l2.vectorize,
        body: fused_body,
    };
    let mut q = p.clone();
    let qbody = body_at_mut(&mut q, parent.unwrap_or(&[])).expect("parent verified");
    qbody.splice(idx..idx + 2, [Stmt::Loop(fused)]);
    if !validate(&q).is_empty() {
        return Err("fusion produces an invalid program".into());
    }

    let mut g1 = HashSet::new();
    let mut g2 = HashSet::new();
    comp_ids(&l1.body, &mut g1);
    comp_ids(&l2.body, &mut g2);
    let graph = deps::analyze_static(&q);
    let mut cross = 0usize;
    for e in &graph.edges {
        let forward = g1.contains(&e.src) && g2.contains(&e.dst);
        let backward = g2.contains(&e.src) && g1.contains(&e.dst);
        if !forward && !backward {
            continue;
        }
        match check {
            FuseCheck::DirectionPreserving => {
                if backward {
                    return Err(format!(
                        "fusion reverses dependence {} -> {}",
                        e.src, e.dst
                    ));
                }
            }
            FuseCheck::OneToOneFlow => {
                cross += 1;
                if backward {
                    return Err(format!(
                        "dependence {} -> {} runs consumer-to-producer",
                        e.src, e.dst
                    ));
                }
                if e.kind != deps::DepKind::Flow {
                    return Err(format!("cross edge {} -> {} is not a flow", e.src, e.dst));
                }
                if e.entries.iter().any(|en| en.direction != Direction::Eq) {
                    return Err(format!(
                        "flow {} -> {} is loop-carried, not one-to-one",
                        e.src, e.dst
                    ));
                }
            }
        }
    }
    if check == FuseCheck::OneToOneFlow {
        if cross == 0 {
            return Err("no producer-consumer relation between the nests".into());
        }
        // One-to-one also demands textually identical subscripts between the
        // producer write and every consumer read of the produced array.
        let sites = collect_comps(&q);
        for src in &sites {
            if !g1.contains(&src.comp.id) {
                continue;
            }
            for dst in &sites {
                if !g2.contains(&dst.comp.id) {
                    continue;
                }
                for r in &dst.comp.reads {
                    if r.array == src.comp.write.array && r.index != src.comp.write.index {
                        return Err(format!(
                            "reads of {} are not one-to-one with the producer",
                            r.array
                        ));
                    }
                }
            }
        }
    }
    Ok(q)
}

// ---------------------------------------------------------------------------
// Idiom detection and replacement

/// Band iterators of a perfect nest along with the chain loops.
fn band_of(s: &Stmt) -> Option<(Vec<&LoopNode>, &Computation)> {
    let mut loops = Vec::new();
    let mut cur = s;
    loop {
        match cur {
            Stmt::Loop(l) => {
                loops.push(l);
                match l.body.as_slice() {
                    [only] => cur = only,
                    _ => return None,
                }
            }
            Stmt::Comp(c) => return Some((loops, c)),
            Stmt::Call(_) => return None,
        }
    }
}

fn single_var<'a>(e: &'a AffineExpr, band: &[&LoopNode]) -> Option<&'a str> {
    if e.constant != 0 || e.terms.len() != 1 {
        return None;
    }
    let (v, &c) = e.terms.iter().next()?;
    if c != 1 {
        return None;
    }
    band.iter().any(|l| l.iter == *v).then(|| v.as_str())
}

fn rectangular(l: &LoopNode, band: &[&LoopNode]) -> bool {
    let band_iter = |v: &str| band.iter().any(|b| b.iter == v);
    !l.lo.vars().any(band_iter) && !l.hi.vars().iter().any(|v| band_iter(v))
}

fn acc_mul_shape(c: &Computation) -> bool {
    c.reads.first().map(|r| r == &c.write).unwrap_or(false)
        && matches!(
            &c.expr,
            Expr::Add(a, b)
                if matches!(a.as_ref(), Expr::Read(0))
                    && matches!(
                        b.as_ref(),
                        Expr::Mul(x, y)
                            if matches!(x.as_ref(), Expr::Read(1))
                                && matches!(y.as_ref(), Expr::Read(2))
                    )
        )
}

/// Matches the nest against the built-in idiom patterns, up to iterator
/// names and band permutation. Returns the idiom name.
pub fn detect_idiom(s: &Stmt) -> Option<&'static str> {
    let (band, c) = band_of(s)?;
    match band.len() {
        3 => detect_rank3(&band, c),
        2 => detect_gemv(&band, c),
        1 => detect_rank1(&band, c),
        _ => None,
    }
}

fn detect_rank3(band: &[&LoopNode], c: &Computation) -> Option<&'static str> {
    if !acc_mul_shape(c) || c.reads.len() != 3 {
        return None;
    }
    let w = &c.write;
    if w.index.len() != 2 {
        return None;
    }
    let a = single_var(&w.index[0], band)?;
    let b = single_var(&w.index[1], band)?;
    if a == b {
        return None;
    }
    let red = band
        .iter()
        .map(|l| l.iter.as_str())
        .find(|&it| it != a && it != b)?;
    // Roles of the multiplied operands: one indexed [a, red], one [red, b]
    // (gemm) or both [x, red] (syrk-shaped self product).
    let r1 = &c.reads[1];
    let r2 = &c.reads[2];
    if r1.index.len() != 2 || r2.index.len() != 2 {
        return None;
    }
    let idx = |acc: &Access| -> Option<(String, String)> {
        Some((
            single_var(&acc.index[0], band)?.to_string(),
            single_var(&acc.index[1], band)?.to_string(),
        ))
    };
    let (p1, q1) = idx(r1)?;
    let (p2, q2) = idx(r2)?;

    // SYRK: C[a,b] += A[a,k] * A[b,k] with the b loop bounded by a.
    if r1.array == r2.array && r1.array != w.array {
        let syrk_roles = (p1 == a && q1 == red && p2 == b && q2 == red)
            || (p1 == b && q1 == red && p2 == a && q2 == red);
        let bl = band.iter().find(|l| l.iter == b)?;
        let triangular = bl.lo.is_const()
            && matches!(&bl.hi, Bound::Affine(h)
                if h.terms.len() == 1 && h.coeff(a) == 1 && h.constant == 1);
        let others_rect = band
            .iter()
            .filter(|l| l.iter != b)
            .all(|l| rectangular(l, band));
        if syrk_roles && triangular && others_rect {
            return Some("syrk");
        }
    }

    // GEMM: C[a,b] += A[a,red] * B[red,b], all bounds rectangular.
    if band.iter().all(|l| rectangular(l, band))
        && r1.array != w.array
        && r2.array != w.array
    {
        let gemm_roles = (p1 == a && q1 == red && p2 == red && q2 == b)
            || (p1 == red && q1 == b && p2 == a && q2 == red);
        if gemm_roles {
            return Some("gemm");
        }
    }
    None
}

fn detect_gemv(band: &[&LoopNode], c: &Computation) -> Option<&'static str> {
    if !acc_mul_shape(c) || c.reads.len() != 3 {
        return None;
    }
    if !band.iter().all(|l| rectangular(l, band)) {
        return None;
    }
    let w = &c.write;
    if w.index.len() != 1 {
        return None;
    }
    let a = single_var(&w.index[0], band)?;
    let b = band
        .iter()
        .map(|l| l.iter.as_str())
        .find(|&it| it != a)?;
    let r1 = &c.reads[1];
    let r2 = &c.reads[2];
    let matvec = |m: &Access, v: &Access| -> bool {
        m.index.len() == 2
            && v.index.len() == 1
            && single_var(&m.index[0], band) == Some(a)
            && single_var(&m.index[1], band) == Some(b)
            && single_var(&v.index[0], band) == Some(b)
            && m.array != w.array
            && v.array != w.array
    };
    (matvec(r1, r2) || matvec(r2, r1)).then_some("gemv")
}

fn detect_rank1(band: &[&LoopNode], c: &Computation) -> Option<&'static str> {
    if !band.iter().all(|l| rectangular(l, band)) {
        return None;
    }
    let i = band[0].iter.as_str();
    let w = &c.write;
    // DOT: s[const] += x[i] * y[i].
    if acc_mul_shape(c)
        && c.reads.len() == 3
        && w.index.iter().all(|e| e.is_const())
        && c.reads[1].index.len() == 1
        && c.reads[2].index.len() == 1
        && single_var(&c.reads[1].index[0], band) == Some(i)
        && single_var(&c.reads[2].index[0], band) == Some(i)
        && c.reads[1].array != w.array
        && c.reads[2].array != w.array
    {
        return Some("dot");
    }
    // AXPY (unit alpha): y[i] = y[i] + x[i].
    if c.reads.len() == 2
        && c.reads[0] == *w
        && w.index.len() == 1
        && single_var(&w.index[0], band) == Some(i)
        && matches!(&c.expr, Expr::Add(l, r)
            if matches!(l.as_ref(), Expr::Read(0)) && matches!(r.as_ref(), Expr::Read(1)))
        && c.reads[1].index.len() == 1
        && single_var(&c.reads[1].index[0], band) == Some(i)
        && c.reads[1].array != w.array
    {
        return Some("axpy");
    }
    None
}

fn call_loop(l: &LoopNode) -> CallLoop {
    CallLoop {
        iter: l.iter.clone(),
        lo: l.lo.clone(),
        hi: l.hi.clone(),
    }
}

/// Builds the call node for a detected idiom: operands in role order and
/// loops in the order the interpreter's reference definitions expect
/// (gemm: [i, k, j]; syrk: [i, j, k]; gemv: [i, j]; dot/axpy: [i]).
fn call_for(s: &Stmt, idiom: &str) -> Option<IdiomCall> {
    let (band, c) = band_of(s)?;
    let by_iter = |name: &str| band.iter().copied().find(|l| l.iter == name);
    match idiom {
        "gemm" | "syrk" => {
            let a = single_var(&c.write.index[0], &band)?.to_string();
            let b = single_var(&c.write.index[1], &band)?.to_string();
            let red = band
                .iter()
                .map(|l| l.iter.clone())
                .find(|it| *it != a && *it != b)?;
            let (li, lj, lk) = (by_iter(&a)?, by_iter(&b)?, by_iter(&red)?);
            if idiom == "syrk" {
                Some(IdiomCall {
                    idiom: "syrk".into(),
                    args: vec![c.write.array.clone(), c.reads[1].array.clone()],
                    loops: vec![call_loop(li), call_loop(lj), call_loop(lk)],
                })
            } else {
                // Identify which read plays A ([a, red]) and which plays B.
                let r1_is_a = single_var(&c.reads[1].index[0], &band) == Some(a.as_str());
                let (ra, rb) = if r1_is_a {
                    (&c.reads[1], &c.reads[2])
                } else {
                    (&c.reads[2], &c.reads[1])
                };
                Some(IdiomCall {
                    idiom: "gemm".into(),
                    args: vec![
                        c.write.array.clone(),
                        ra.array.clone(),
                        rb.array.clone(),
                    ],
                    loops: vec![call_loop(li), call_loop(lk), call_loop(lj)],
                })
            }
        }
        "gemv" => {
            let a = single_var(&c.write.index[0], &band)?.to_string();
            let b = band
                .iter()
                .map(|l| l.iter.clone())
                .find(|it| *it != a)?;
            let r1_is_m = c.reads[1].index.len() == 2;
            let (m, v) = if r1_is_m {
                (&c.reads[1], &c.reads[2])
            } else {
                (&c.reads[2], &c.reads[1])
            };
            Some(IdiomCall {
                idiom: "gemv".into(),
                args: vec![c.write.array.clone(), m.array.clone(), v.array.clone()],
                loops: vec![call_loop(by_iter(&a)?), call_loop(by_iter(&b)?)],
            })
        }
        "dot" => Some(IdiomCall {
            idiom: "dot".into(),
            args: vec![
                c.write.array.clone(),
                c.reads[1].array.clone(),
                c.reads[2].array.clone(),
            ],
            loops: vec![call_loop(band[0])],
        }),
        "axpy" => Some(IdiomCall {
            idiom: "axpy".into(),
            args: vec![c.write.array.clone(), c.reads[1].array.clone()],
            loops: vec![call_loop(band[0])],
        }),
        _ => None,
    }
}

fn replace_idiom(p: &Program, idiom: &str) -> Result<Program, String> {
    fn find(body: &[Stmt], prefix: &mut Vec<usize>, idiom: &str) -> Option<Vec<usize>> {
        for (i, s) in body.iter().enumerate() {
            prefix.push(i);
            if detect_idiom(s) == Some(idiom) {
                let found = prefix.clone();
                prefix.pop();
                return Some(found);
            }
            if let Stmt::Loop(l) = s {
                if let Some(found) = find(&l.body, prefix, idiom) {
                    prefix.pop();
                    return Some(found);
                }
            }
            prefix.pop();
        }
        None
    }
    let path = find(&p.body, &mut Vec::new(), idiom)
        .ok_or_else(|| format!("no nest matches idiom `{idiom}`"))?;
    let call = call_for(stmt_at(p, &path).unwrap(), idiom)
        .ok_or_else(|| format!("idiom `{idiom}` matched but call extraction failed"))?;
    let mut q = p.clone();
    *stmt_at_mut(&mut q, &path).unwrap() = Stmt::Call(call);
    Ok(q)
}

// ---------------------------------------------------------------------------
// Recipe database

pub const DB_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DbEntryDoc {
    key_hex: String,
    mode: MatchMode,
    steps: Vec<Transform>,
    provenance: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DbDoc {
    version: u32,
    entries: Vec<DbEntryDoc>,
}

#[derive(Clone, Debug, Default)]
pub struct RecipeDatabase {
    entries: BTreeMap<u64, Recipe>,
}

#[derive(Debug, thiserror::Error)]
pub enum DbError {
    #[error("duplicate key {0:016x}")]
    DuplicateKey(u64),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed database: {0}")]
    Format(String),
    #[error("unsupported database version {0} (expected {DB_VERSION})")]
    Version(u32),
}

impl RecipeDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, recipe: Recipe) -> Result<(), DbError> {
        if self.entries.contains_key(&recipe.key) {
            return Err(DbError::DuplicateKey(recipe.key));
        }
        self.entries.insert(recipe.key, recipe);
        Ok(())
    }

    /// Seeds the database: each program is keyed under the paired recipe's
    /// mode; the recipe's stored key is overwritten with the program's.
    pub fn seed(&mut self, pairs: &[(Program, Recipe)]) -> Result<(), DbError> {
        for (program, recipe) in pairs {
            let mut r = recipe.clone();
            r.key = match_key(program, r.mode);
            self.insert(r)?;
        }
        Ok(())
    }

    /// Finds the recipe whose key equals the program's lookup key under the
    /// recipe's own mode; exact keys take precedence.
    pub fn lookup(&self, p: &Program) -> Option<&Recipe> {
        for mode in [MatchMode::Exact, MatchMode::ShapeInsensitive] {
            let key = match_key(p, mode);
            if let Some(r) = self.entries.get(&key) {
                if r.mode == mode {
                    return Some(r);
                }
            }
        }
        None
    }

    pub fn recipes(&self) -> impl Iterator<Item = &Recipe> {
        self.entries.values()
    }

    pub fn to_string_pretty(&self) -> String {
        let doc = DbDoc {
            version: DB_VERSION,
            entries: self
                .entries
                .values()
                .map(|r| DbEntryDoc {
                    key_hex: format!("{:016x}", r.key),
                    mode: r.mode,
                    steps: r.steps.clone(),
                    provenance: r.provenance.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("database serializes")
    }

    pub fn from_str(text: &str) -> Result<Self, DbError> {
        let doc: DbDoc = serde_json::from_str(text).map_err(|e| DbError::Format(e.to_string()))?;
        if doc.version != DB_VERSION {
            return Err(DbError::Version(doc.version));
        }
        let mut db = Self::new();
        for e in doc.entries {
            let key = u64::from_str_radix(&e.key_hex, 16)
                .map_err(|_| DbError::Format(format!("bad key_hex `{}`", e.key_hex)))?;
            db.insert(Recipe {
                key,
                mode: e.mode,
                steps: e.steps,
                provenance: e.provenance,
            })?;
        }
        Ok(db)
    }

    pub fn save(&self, path: &Path) -> Result<(), DbError> {
        std::fs::write(path, self.to_string_pretty())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DbError> {
        Self::from_str(&std::fs::read_to_string(path)?)
    }
}

// ---------------------------------------------------------------------------
// C emission

fn c_affine(e: &AffineExpr) -> String {
    e.to_string()
}

fn c_bound(b: &Bound) -> String {
    match b {
        Bound::Affine(e) => c_affine(e),
        Bound::Min { min } => format!("LN_MIN({}, {})", c_affine(&min[0]), c_affine(&min[1])),
        Bound::CeilDiv { ceildiv } => {
            format!("LN_CEILDIV({}, {})", c_affine(&ceildiv.0), ceildiv.1)
        }
    }
}

fn c_expr(e: &Expr, c: &Computation, out: &mut String) {
    use std::fmt::Write as _;
    match e {
        Expr::Lit(v) => {
            let _ = write!(out, "{v}");
        }
        Expr::Iter(i) => {
            let _ = write!(out, "{i}");
        }
        Expr::Read(k) => {
            let acc = &c.reads[*k];
            let _ = write!(out, "{}", acc.array);
            for e in &acc.index {
                let _ = write!(out, "[{}]", c_affine(e));
            }
        }
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
            let op = match e {
                Expr::Add(..) => "+",
                Expr::Sub(..) => "-",
                Expr::Mul(..) => "*",
                _ => "/",
            };
            out.push('(');
            c_expr(a, c, out);
            let _ = write!(out, " {op} ");
            c_expr(b, c, out);
            out.push(')');
        }
        Expr::Min(a, b) | Expr::Max(a, b) => {
            let mac = if matches!(e, Expr::Min(..)) { "LN_MIN" } else { "LN_MAX" };
            let _ = write!(out, "{mac}(");
            c_expr(a, c, out);
            out.push_str(", ");
            c_expr(b, c, out);
            out.push(')');
        }
    }
}

/// Deterministic C99 rendering: VLA parameters with `restrict`, OpenMP
/// pragmas for parallel/vector marks, idiom calls as commented prototypes
/// plus a call stub. The output is for inspection and export; it is not
/// compiled by this toolkit.
pub fn emit_c(p: &Program) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    out.push_str("#include <stdint.h>\n\n");
    out.push_str("#define LN_MIN(a, b) ((a) < (b) ? (a) : (b))\n");
    out.push_str("#define LN_MAX(a, b) ((a) > (b) ? (a) : (b))\n");
    out.push_str("#define LN_CEILDIV(a, b) (((a) + (b) - 1) / (b))\n\n");

    let mut params: Vec<String> = p
        .parameters
        .iter()
        .map(|pd| format!("int64_t {}", pd.name))
        .collect();
    for a in &p.arrays {
        let elem = match a.elem {
            ElemKind::Int => "int64_t",
            ElemKind::Float => "double",
        };
        let mut dims = String::new();
        for (k, d) in a.dims.iter().enumerate() {
            let spell = match d {
                Extent::Const(v) => v.to_string(),
                Extent::Param(n) => n.clone(),
            };
            if k == 0 {
                let _ = write!(dims, "[restrict {spell}]");
            } else {
                let _ = write!(dims, "[{spell}]");
            }
        }
        params.push(format!("{elem} {}{dims}", a.name));
    }
    let _ = writeln!(out, "void kernel({}) {{", params.join(", "));

    fn write_stmts(body: &[Stmt], indent: usize, out: &mut String) {
        use std::fmt::Write as _;
        let pad = "  ".repeat(indent);
        for s in body {
            match s {
                Stmt::Loop(l) => {
                    if l.parallel {
                        let _ = writeln!(out, "{pad}#pragma omp parallel for");
                    }
                    if l.vectorize {
                        let _ = writeln!(out, "{pad}#pragma omp simd");
                    }
                    let _ = writeln!(
                        out,
                        "{pad}for (int64_t {i} = {lo}; {i} < {hi}; ++{i}) {{",
                        i = l.iter,
                        lo = c_affine(&l.lo),
                        hi = c_bound(&l.hi)
                    );
                    write_stmts(&l.body, indent + 1, out);
                    let _ = writeln!(out, "{pad}}}");
                }
                Stmt::Comp(c) => {
                    let mut lhs = c.write.array.clone();
                    for e in &c.write.index {
                        let _ = write!(lhs, "[{}]", c_affine(e));
                    }
                    let mut rhs = String::new();
                    c_expr(&c.expr, c, &mut rhs);
                    let _ = writeln!(out, "{pad}{lhs} = {rhs};");
                }
                Stmt::Call(c) => {
                    let args = c.args.join(", ");
                    let _ = writeln!(
                        out,
                        "{pad}/* extern void cblas_like_{}(...);  loops: {} */",
                        c.idiom,
                        c.loops
                            .iter()
                            .map(|cl| format!("{}={}..{}", cl.iter, c_affine(&cl.lo), c_bound(&cl.hi)))
                            .collect::<Vec<_>>()
                            .join(", ")
                    );
                    let _ = writeln!(out, "{pad}cblas_like_{}({args});", c.idiom);
                }
            }
        }
    }
    write_stmts(&p.body, 1, &mut out);
    out.push_str("}\n");
    out
}
