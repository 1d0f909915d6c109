//! Random generation of semantically equivalent kernel variants by
//! inverse-normalization moves: legal band permutations, legal fusion of
//! adjacent nests, and α-renaming of iterators and arrays.
//!
//! Generation is deterministic per seed. Moves that fail their legality
//! check are skipped, never emitted, so every variant is equivalent to the
//! origin by construction.

use std::collections::HashMap;

use crate::deps;
use crate::ir::*;
use crate::normalize::{self, apply_band_permutation, band_sites, fresh_name, used_names};
use crate::recipes::{try_fuse, FuseCheck};
use crate::Rng;

#[derive(Clone, Debug)]
pub struct Variant {
    pub program: Program,
    /// Origin array name → variant array name (identity unless a renaming
    /// move fired). Needed to compare interpreter outputs across variants.
    pub array_map: HashMap<String, String>,
}

const MOVE_ATTEMPTS: usize = 8;

/// Generates `count` variants of a validated program. Each variant applies
/// a random sequence of 1–5 legal moves.
pub fn generate(p: &Program, seed: u64, count: usize) -> Vec<Variant> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut v = Variant {
            program: p.clone(),
            array_map: p
                .arrays
                .iter()
                .map(|a| (a.name.clone(), a.name.clone()))
                .collect(),
        };
        let n_moves = 1 + rng.below(5);
        for _ in 0..n_moves {
            match rng.below(3) {
                0 => try_permutation_move(&mut v.program, &mut rng),
                1 => try_fusion_move(&mut v.program, &mut rng),
                _ => rename_move(&mut v, &mut rng),
            }
        }
        out.push(v);
    }
    out
}

fn shuffled_perm(m: usize, rng: &mut Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..m).collect();
    for i in (1..m).rev() {
        perm.swap(i, rng.below(i + 1));
    }
    perm
}

fn try_permutation_move(p: &mut Program, rng: &mut Rng) {
    let sites: Vec<_> = band_sites(p)
        .into_iter()
        .filter(|b| b.depth >= 2)
        .collect();
    if sites.is_empty() {
        return;
    }
    for _ in 0..MOVE_ATTEMPTS {
        let b = &sites[rng.below(sites.len())];
        let m = b.depth.min(normalize::PERM_CAP);
        let perm = shuffled_perm(m, rng);
        if perm.iter().enumerate().all(|(i, &o)| i == o) {
            continue;
        }
        let graph = deps::analyze_static(p);
        if let Ok(true) = deps::is_permutation_legal(p, &graph, &b.path, &perm) {
            apply_band_permutation(p, &b.path, &perm);
            return;
        }
    }
}

/// Positions of adjacent loop pairs: (parent loop path or None for the
/// top-level body, index of the first sibling).
fn fusion_sites(p: &Program) -> Vec<(Option<Vec<usize>>, usize)> {
    let mut out = Vec::new();
    fn scan(body: &[Stmt], parent: Option<&[usize]>, out: &mut Vec<(Option<Vec<usize>>, usize)>) {
        for i in 0..body.len() {
            if i + 1 < body.len()
                && matches!(body[i], Stmt::Loop(_))
                && matches!(body[i + 1], Stmt::Loop(_))
            {
                out.push((parent.map(|s| s.to_vec()), i));
            }
            if let Stmt::Loop(l) = &body[i] {
                let mut path = parent.map(|s| s.to_vec()).unwrap_or_default();
                path.push(i);
                scan(&l.body, Some(&path), out);
            }
        }
    }
    scan(&p.body, None, &mut out);
    out
}

fn try_fusion_move(p: &mut Program, rng: &mut Rng) {
    let sites = fusion_sites(p);
    if sites.is_empty() {
        return;
    }
    for _ in 0..MOVE_ATTEMPTS {
        let (parent, idx) = &sites[rng.below(sites.len())];
        if let Ok(q) = try_fuse(p, parent.as_deref(), *idx, FuseCheck::DirectionPreserving) {
            *p = q;
            return;
        }
    }
}

fn rename_move(v: &mut Variant, rng: &mut Rng) {
    let tag = rng.next_u64() % 1000;
    let mut used = used_names(&v.program);

    // Iterators: one fresh name per declared iterator, scoped renames are
    // fine because fresh names are globally unique.
    let mut iter_map = HashMap::new();
    fn collect_iters(body: &[Stmt], out: &mut Vec<String>) {
        for s in body {
            if let Stmt::Loop(l) = s {
                out.push(l.iter.clone());
                collect_iters(&l.body, out);
            }
        }
    }
    let mut iters = Vec::new();
    collect_iters(&v.program.body, &mut iters);
    for it in iters {
        iter_map
            .entry(it.clone())
            .or_insert_with(|| fresh_name(&format!("v{tag}"), &mut used));
    }
    v.program.body = v
        .program
        .body
        .iter()
        .map(|s| s.rename_iters(&iter_map))
        .collect();

    // Arrays: bijective renaming of declarations and accesses.
    let mut array_map = HashMap::new();
    for a in &v.program.arrays {
        array_map.insert(a.name.clone(), fresh_name(&format!("m{tag}"), &mut used));
    }
    rename_arrays(&mut v.program, &array_map);
    for dst in v.array_map.values_mut() {
        if let Some(new) = array_map.get(dst) {
            *dst = new.clone();
        }
    }
}

fn rename_arrays(p: &mut Program, map: &HashMap<String, String>) {
    for a in &mut p.arrays {
        if let Some(n) = map.get(&a.name) {
            a.name = n.clone();
        }
    }
    fn fix_access(acc: &mut Access, map: &HashMap<String, String>) {
        if let Some(n) = map.get(&acc.array) {
            acc.array = n.clone();
        }
    }
    fn walk(body: &mut [Stmt], map: &HashMap<String, String>) {
        for s in body {
            match s {
                Stmt::Loop(l) => walk(&mut l.body, map),
                Stmt::Comp(c) => {
                    fix_access(&mut c.write, map);
                    for r in &mut c.reads {
                        fix_access(r, map);
                    }
                }
                Stmt::Call(c) => {
                    for a in &mut c.args {
                        if let Some(n) = map.get(a) {
                            *a = n.clone();
                        }
                    }
                }
            }
        }
    }
    walk(&mut p.body, map);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::canonicalize;
    use crate::frontend::parse;
    use crate::interp::{self, Buffer, ExecutionConfig, Mode};
    use crate::normalize::{normalize, Metric};

    fn gemm() -> Program {
        parse(
            "param N = 4;\n\
             array A[N, N]; array B[N, N]; array C[N, N];\n\
             for i in 0..N { for k in 0..N { for j in 0..N {\n\
               C[i, j] += A[i, k] * B[k, j];\n\
             } } }",
        )
        .unwrap()
    }

    /// Runs origin and variant, comparing buffers across the array map.
    fn assert_variant_equivalent(origin: &Program, v: &Variant, seed: u64) {
        let c1 = ExecutionConfig {
            bindings: origin.default_bindings(),
            mode: Mode::Int,
            seed,
            iter_cap: interp::DEFAULT_ITER_CAP,
        };
        let b1 = interp::run(origin, &c1).unwrap();
        // Variant buffers are initialized from their own (renamed) array
        // names, so initialize them by the origin's names: run the variant
        // after renaming arrays back.
        let mut back = v.program.clone();
        let inverse: HashMap<String, String> = v
            .array_map
            .iter()
            .map(|(o, n)| (n.clone(), o.clone()))
            .collect();
        rename_arrays(&mut back, &inverse);
        let b2 = interp::run(&back, &c1).unwrap();
        for (name, left) in &b1 {
            let right = &b2[name];
            match (left, right) {
                (Buffer::Int(a), Buffer::Int(b)) => assert_eq!(a, b, "array {name}"),
                _ => panic!("unexpected buffer kinds"),
            }
        }
    }

    #[test]
    fn variants_deterministic_per_seed() {
        let p = gemm();
        let a = generate(&p, 7, 4);
        let b = generate(&p, 7, 4);
        for (x, y) in a.iter().zip(&b) {
            assert!(structurally_equal(&x.program, &y.program, false));
        }
        let c = generate(&p, 8, 4);
        assert!(
            a.iter()
                .zip(&c)
                .any(|(x, y)| !structurally_equal(&x.program, &y.program, false)),
            "different seeds should diverge"
        );
    }

    #[test]
    fn variants_are_interp_equivalent() {
        let p = gemm();
        for v in generate(&p, 1, 5) {
            assert!(validate(&v.program).is_empty());
            assert_variant_equivalent(&p, &v, 42);
        }
    }

    #[test]
    fn variants_converge_after_normalization() {
        let p = gemm();
        let (base, _) = normalize(&p, Metric::Distance);
        let fp = canonicalize(&base).fingerprint;
        for seed in [1u64, 2] {
            for v in generate(&p, seed, 5) {
                let (n, _) = normalize(&v.program, Metric::Distance);
                assert_eq!(
                    canonicalize(&n).fingerprint,
                    fp,
                    "seed {seed} variant diverged:\n{}",
                    crate::frontend::pretty_print(&n)
                );
            }
        }
    }

    #[test]
    fn serialized_nest_limits_moves_to_renames() {
        // Fully serialized dependence chain: no legal permutation or fusion.
        let p = parse(
            "param N = 8; array A[N];\n\
             for i in 1..N { A[i] = A[i-1] + 1; }",
        )
        .unwrap();
        for v in generate(&p, 3, 5) {
            // One loop, one computation, same shape; only names may differ.
            assert!(structurally_equal(&p, &v.program, true));
        }
    }

    #[test]
    fn fission_output_can_fuse_back() {
        // Distribute a producer-consumer loop, then expect some variant of
        // the fissioned form to restore a two-statement body.
        let p = parse(
            "param N = 8; array A[N]; array T[N]; array B[N];\n\
             for i in 0..N { t: T[i] = A[i] + 1; b: B[i] = T[i] * 2; }",
        )
        .unwrap();
        let mut fissioned = p.clone();
        normalize::max_fission(&mut fissioned);
        assert_eq!(fissioned.body.len(), 2);
        let refused = generate(&fissioned, 5, 20);
        assert!(
            refused.iter().any(|v| v.program.body.len() == 1
                && v.program.body[0].as_loop().map(|l| l.body.len()) == Some(2)),
            "no variant fused the nests back"
        );
    }
}
