//! Reward DSL checked against a naive interpreter that shares no code with
//! the library: programs are generated here as plain trees, rendered fully
//! parenthesized, parsed by the library and evaluated by both sides.

use std::collections::HashMap;

use icpl_core::envkit::{EnvId, EnvSpec};
use icpl_core::rewardlang::{diff, parse, CompiledProgram, RewardProgram};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
enum Tree {
    C(f64),
    F(&'static str),
    Un(&'static str, Box<Tree>),
    Bin(char, Box<Tree>, Box<Tree>),
    Fun(&'static str, Box<Tree>, Box<Tree>),
    Clamp(Box<Tree>, f64, f64),
}

const FEATURES: [&str; 7] = ["x", "y", "vx", "vy", "prev_x", "action_l1", "action_sq"];

fn gen_const(rng: &mut ChaCha8Rng) -> f64 {
    let v: f64 = rng.random_range(-5.0..5.0);
    (v * 1000.0).round() / 1000.0
}

fn gen_tree(rng: &mut ChaCha8Rng, depth: usize) -> Tree {
    let leaf = depth == 0 || rng.random_bool(0.3);
    if leaf {
        return if rng.random_bool(0.6) {
            Tree::F(FEATURES[rng.random_range(0..FEATURES.len())])
        } else {
            Tree::C(gen_const(rng))
        };
    }
    let sub = |rng: &mut ChaCha8Rng| Box::new(gen_tree(rng, depth - 1));
    match rng.random_range(0..6) {
        0 => Tree::Un(["-", "abs", "exp", "tanh"][rng.random_range(0..4)], sub(rng)),
        1 | 2 => Tree::Bin(['+', '-', '*', '/'][rng.random_range(0..4)], sub(rng), sub(rng)),
        3 => Tree::Fun(["min", "max"][rng.random_range(0..2)], sub(rng), sub(rng)),
        4 => {
            let a = gen_const(rng);
            let b = gen_const(rng);
            Tree::Clamp(sub(rng), a.min(b), a.max(b))
        }
        _ => Tree::Un("tanh", sub(rng)),
    }
}

fn render(t: &Tree) -> String {
    match t {
        Tree::C(c) => format!("({c:?})"),
        Tree::F(f) => format!("feature({f})"),
        Tree::Un("-", a) => format!("(-{})", render(a)),
        Tree::Un(f, a) => format!("{f}({})", render(a)),
        Tree::Bin(op, a, b) => format!("({} {op} {})", render(a), render(b)),
        Tree::Fun(f, a, b) => format!("{f}({}, {})", render(a), render(b)),
        Tree::Clamp(a, lo, hi) => format!("clamp({}, {lo:?}, {hi:?})", render(a)),
    }
}

fn oracle(t: &Tree, obs: &HashMap<&str, f64>) -> f64 {
    match t {
        Tree::C(c) => *c,
        Tree::F(f) => obs[f],
        Tree::Un(f, a) => {
            let v = oracle(a, obs);
            match *f {
                "-" => -v,
                "abs" => v.abs(),
                "exp" => v.exp(),
                _ => v.tanh(),
            }
        }
        Tree::Bin(op, a, b) => {
            let (x, y) = (oracle(a, obs), oracle(b, obs));
            match op {
                '+' => x + y,
                '-' => x - y,
                '*' => x * y,
                _ => x / y,
            }
        }
        Tree::Fun(f, a, b) => {
            let (x, y) = (oracle(a, obs), oracle(b, obs));
            if x.is_nan() || y.is_nan() {
                f64::NAN
            } else if *f == "min" {
                if x < y { x } else { y }
            } else if x > y {
                x
            } else {
                y
            }
        }
        Tree::Clamp(a, lo, hi) => {
            let v = oracle(a, obs);
            if v.is_nan() {
                v
            } else if v < *lo {
                *lo
            } else if v > *hi {
                *hi
            } else {
                v
            }
        }
    }
}

struct Generated {
    source: String,
    components: Vec<(String, Tree, f64)>,
}

fn gen_program(rng: &mut ChaCha8Rng) -> Generated {
    let n = rng.random_range(1..5);
    let components: Vec<(String, Tree, f64)> = (0..n)
        .map(|i| (format!("c{i}"), gen_tree(rng, 5), gen_const(rng)))
        .collect();
    let mut source = String::new();
    for (name, t, _) in &components {
        source.push_str(&format!("component {name} = {};\n", render(t)));
    }
    let terms: Vec<String> = components
        .iter()
        .enumerate()
        .map(|(i, (name, _, w))| {
            if i == 0 {
                format!("{w:?}*{name}")
            } else if *w < 0.0 {
                format!("- {:?}*{name}", -w)
            } else {
                format!("+ {w:?}*{name}")
            }
        })
        .collect();
    source.push_str(&format!("total = {};", terms.join(" ")));
    Generated { source, components }
}

fn close(a: f64, b: f64) -> bool {
    if a.is_nan() || b.is_nan() {
        return a.is_nan() && b.is_nan();
    }
    if a.is_infinite() || b.is_infinite() {
        return a == b;
    }
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn evaluate_matches_naive_interpreter() {
    let spec = EnvSpec::builtin(EnvId::PointmassRun);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    for _ in 0..1000 {
        let g = gen_program(&mut rng);
        let program = parse(&g.source).unwrap_or_else(|e| panic!("{e}\n{}", g.source));
        let compiled = CompiledProgram::new(&program, &spec).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = spec
                .feature_catalog
                .iter()
                .map(|f| {
                    let (lo, hi) = f.bounds.unwrap();
                    rng.random_range(lo..=hi)
                })
                .collect();
            let obs: HashMap<&str, f64> = FEATURES.iter().copied().zip(x.iter().copied()).collect();
            let mut expected_total = 0.0;
            let mut expected = Vec::new();
            for (_, t, w) in &g.components {
                let v = oracle(t, &obs);
                expected_total += w * v;
                expected.push(v);
            }
            let by_name = program.evaluate(&spec.observation_map(&x)).unwrap();
            let fast = compiled.evaluate(&x);
            for ((name, _, _), e) in g.components.iter().zip(&expected) {
                assert!(close(by_name.components[name], *e), "{}: {} vs {e}", g.source, by_name.components[name]);
                assert!(close(fast.components[name], *e));
            }
            assert!(close(by_name.total, expected_total), "{}", g.source);
            assert!(close(fast.total, expected_total));
            checked += 1;
        }
    }
    assert_eq!(checked, 100_000);
}

fn reparse(p: &RewardProgram) -> RewardProgram {
    parse(&p.unparse()).unwrap_or_else(|e| panic!("{e}\n{}", p.unparse()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn print_parse_fixpoint(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = parse(&gen_program(&mut rng).source).unwrap();
        let q = reparse(&p);
        prop_assert!(p.structurally_eq(&q));
        prop_assert_eq!(q.unparse(), p.unparse());
    }

    #[test]
    fn diff_reconstructs_target(s1 in any::<u64>(), s2 in any::<u64>(), share in 0usize..4) {
        let mut r1 = ChaCha8Rng::seed_from_u64(s1);
        let mut r2 = ChaCha8Rng::seed_from_u64(s2);
        let a = parse(&gen_program(&mut r1).source).unwrap();
        let mut b = parse(&gen_program(&mut r2).source).unwrap();
        // Give some components matching names so changes are exercised.
        for (i, c) in b.components.iter_mut().enumerate() {
            if i < share && i < a.components.len() && i % 2 == 0 {
                c.expr = a.components[i].expr.clone();
            }
        }
        let d = diff(&a, &b);
        prop_assert!(d.apply(&a).structurally_eq(&b));
        prop_assert_eq!(d.is_empty(), a.structurally_eq(&b));
        prop_assert!(diff(&a, &a).is_empty());
        prop_assert_eq!(d.rendered().lines().count(), d.edits.len());
    }
}

#[test]
fn corpus_round_trips_and_validates() {
    let text = include_str!("data/corpus.reward");
    let programs: Vec<&str> = text.split("\n---\n").collect();
    assert_eq!(programs.len(), 50);
    for src in programs {
        let env = src
            .lines()
            .find_map(|l| l.strip_prefix("# env: "))
            .and_then(|e| EnvId::parse(e.trim()))
            .expect("corpus entries name their environment");
        let p = parse(src).unwrap_or_else(|e| panic!("{e}\n{src}"));
        icpl_core::rewardlang::validate(&p, &EnvSpec::builtin(env)).unwrap_or_else(|e| panic!("{e:?}\n{src}"));
        let q = reparse(&p);
        assert!(p.structurally_eq(&q), "{src}");
        assert_eq!(q.unparse(), p.unparse());
        assert_eq!(reparse(&q).unparse(), q.unparse());
    }
}
