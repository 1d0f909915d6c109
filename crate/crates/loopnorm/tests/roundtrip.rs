//! Property tests for the surface syntax and JSON interchange round trips,
//! and for renaming-invariance of the canonical fingerprint.

use proptest::prelude::*;

use loopnorm::canonical::canonicalize;
use loopnorm::frontend::{parse, pretty_print};
use loopnorm::ir::{from_json, structurally_equal, to_json, validate, Program};

const ITERS: [&str; 3] = ["i", "j", "k"];

#[derive(Clone, Debug)]
struct Gen {
    depth: usize,
    lo: i64,
    shrink_hi: bool,
    shifts: Vec<i64>,
    scale: i64,
    accumulate: bool,
}

fn gen_strategy() -> impl Strategy<Value = Gen> {
    (
        1..=3usize,
        0..=1i64,
        any::<bool>(),
        proptest::collection::vec(0..=1i64, 3),
        1..=3i64,
        any::<bool>(),
    )
        .prop_map(|(depth, lo, shrink_hi, shifts, scale, accumulate)| Gen {
            depth,
            lo,
            shrink_hi,
            shifts,
            scale,
            accumulate,
        })
}

/// Renders a small but representative kernel: a perfect nest of the chosen
/// depth over one array, with shifted/scaled subscripts on the read side.
fn render(g: &Gen) -> String {
    render_named(g, &ITERS, "A", "B")
}

fn render_named(g: &Gen, all_iters: &[&str; 3], a: &str, b: &str) -> String {
    let iters = &all_iters[..g.depth];
    let hi = if g.shrink_hi { "N-1" } else { "N" };
    let lo = g.lo + 1; // keep shifted reads in range
    let mut out = format!("param N = 6;\narray {a}[8");
    for _ in 1..g.depth {
        out.push_str(", 8");
    }
    out.push_str(&format!("];\narray {b}[8"));
    for _ in 1..g.depth {
        out.push_str(", 8");
    }
    out.push_str("];\n");
    for it in iters {
        out.push_str(&format!("for {it} in {lo}..{hi} {{\n"));
    }
    let widx = iters.join(", ");
    let ridx: Vec<String> = iters
        .iter()
        .enumerate()
        .map(|(d, it)| {
            let shift = g.shifts.get(d).copied().unwrap_or(0);
            if shift == 0 {
                (*it).to_string()
            } else {
                format!("{it}-{shift}")
            }
        })
        .collect();
    let op = if g.accumulate { "+=" } else { "=" };
    out.push_str(&format!(
        "  s: {b}[{widx}] {op} {a}[{}] * {} + {};\n",
        ridx.join(", "),
        g.scale,
        g.lo
    ));
    for _ in iters {
        out.push_str("}\n");
    }
    out
}

fn gen_program(g: &Gen) -> Program {
    let p = parse(&render(g)).unwrap();
    assert!(validate(&p).is_empty(), "generator produced invalid program");
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pretty_print_parse_is_identity(g in gen_strategy()) {
        let p = gen_program(&g);
        let round = parse(&pretty_print(&p)).unwrap();
        prop_assert!(structurally_equal(&p, &round, false));
    }

    #[test]
    fn json_round_trip_is_identity(g in gen_strategy()) {
        let p = gen_program(&g);
        let round = from_json(&to_json(&p)).unwrap();
        prop_assert!(structurally_equal(&p, &round, false));
    }

    #[test]
    fn fingerprint_invariant_under_renaming(g in gen_strategy()) {
        let p = gen_program(&g);
        let renamed = parse(&render_named(&g, &["p", "q", "r"], "XS", "YS")).unwrap();
        prop_assert_eq!(
            canonicalize(&p).fingerprint,
            canonicalize(&renamed).fingerprint
        );
    }

    #[test]
    fn canonical_text_is_deterministic(g in gen_strategy()) {
        let p = gen_program(&g);
        prop_assert_eq!(canonicalize(&p).text, canonicalize(&p.clone()).text);
    }
}
