//! Executor against a live shim process (the Python test double in
//! `tests/support/shim.py`). Skipped when `python3` is unavailable.

mod support;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use support::{fixture, live_executor};
use trace_forge_core::executor::{ExecError, Executor, ShimStatus, ValueEq};
use trace_forge_core::instrument::{instrument, InstrumentationConfig};
use trace_forge_core::literal;
use trace_forge_core::SourceProgram;

const INPUT: &str = "('6WRtQO', 'zCjWT', 'vTx1cUf', ['WaqT0ZJhh', 'XsdlqJCj'], ['L6r7gxk', 'OBQzEVSE'])";
const ANSWER: &str = "'6wrTqo|zCjWT|x1cUf|Xsdlqjcj|L6R7Gxk,Obqzevse'";

fn program(id: &str, src: &str, entry: &str) -> SourceProgram {
    SourceProgram {
        id: id.into(),
        entry_name: entry.into(),
        source_text: src.into(),
    }
}

#[test]
fn worked_example_end_to_end() {
    let Some(ex) = live_executor(1, 5000) else { return };
    let raw = program("train_12366", &fixture("generate_output.py"), "generate_output");
    let inst = instrument(&raw, &InstrumentationConfig::default()).unwrap();
    let trace = ex.generate_trace(&inst, INPUT).unwrap();
    let lines: Vec<String> = trace.lines().collect();
    assert_eq!(
        lines,
        [
            "swapped_argument: 6wrTqo",
            "base_component: zCjWT",
            "version_component: x1cUf",
            "last_dependency: Xsdlqjcj",
            "joined_packages: L6R7Gxk,Obqzevse",
            "return_val: 6wrTqo|zCjWT|x1cUf|Xsdlqjcj|L6R7Gxk,Obqzevse",
        ]
    );
    assert_eq!(trace.final_value, ANSWER);
    assert!(ex.check_equivalence(&raw, &inst, &[INPUT.to_string()]).unwrap());
    assert!(ex.check_equivalence(&raw, &inst.clone(), &[INPUT.to_string()]).unwrap());
}

#[test]
fn mutated_logic_is_not_equivalent() {
    let Some(ex) = live_executor(1, 5000) else { return };
    let raw = program("p", "def f(x):\n    y = x + 1\n    return y\n", "f");
    let mut inst = instrument(&raw, &InstrumentationConfig::default()).unwrap();
    inst.source_text = inst.source_text.replace("x + 1", "x + 2");
    assert!(!ex.check_equivalence(&raw, &inst, &["(3,)".into()]).unwrap());
    assert!(matches!(
        ex.check_equivalence(&raw, &inst, &[]),
        Err(ExecError::NoInputs)
    ));
}

#[test]
fn loop_accumulator_preserves_behavior_on_random_inputs() {
    let Some(ex) = live_executor(2, 5000) else { return };
    let raw = program(
        "acc",
        "def f(xs, k):\n    total = 0\n    for x in xs:\n        total += x * k\n    return total\n",
        "f",
    );
    let inst = instrument(&raw, &InstrumentationConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inputs: Vec<String> = (0..20)
        .map(|_| {
            let xs: Vec<String> = (0..rng.gen_range(0..6))
                .map(|_| rng.gen_range(-50..50).to_string())
                .collect();
            format!("([{}], {})", xs.join(", "), rng.gen_range(-3..4))
        })
        .collect();
    assert!(ex.check_equivalence(&raw, &inst, &inputs).unwrap());
    let trace = ex.generate_trace(&inst, &inputs[0]).unwrap();
    let names: Vec<&str> = trace.events.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["total", "total", "return_val"]);
}

#[test]
fn branch_selects_single_anchor() {
    let Some(ex) = live_executor(1, 5000) else { return };
    let raw = program(
        "br",
        "def f(x):\n    if x > 0:\n        pos = x\n    else:\n        neg = -x\n    return 0\n",
        "f",
    );
    let mut inst = instrument(&raw, &InstrumentationConfig::default()).unwrap();
    // Drop the return anchor so each trace is exactly the branch event.
    inst.source_text = inst
        .source_text
        .lines()
        .filter(|l| !l.contains("return_val"))
        .map(|l| format!("{l}\n"))
        .collect();
    let a = ex.generate_trace(&inst, "(5,)").unwrap();
    let b = ex.generate_trace(&inst, "(-5,)").unwrap();
    assert_eq!(a.events, vec![("pos".to_string(), "5".to_string())]);
    assert_eq!(b.events, vec![("neg".to_string(), "5".to_string())]);
}

#[test]
fn zero_anchor_program_has_empty_trace() {
    let Some(ex) = live_executor(1, 5000) else { return };
    let p = instrument(
        &program("z", "def f(x):\n    x.append(1)\n", "f"),
        &InstrumentationConfig::default(),
    )
    .unwrap();
    let t = ex.generate_trace(&p, "([],)").unwrap();
    assert_eq!(t.n(), 0);
    assert_eq!(t.final_value, "None");
}

#[test]
fn failures_are_typed_and_pool_recovers() {
    let Some(ex) = live_executor(1, 100) else { return };
    let spin = program("s", "def f():\n    while True:\n        pass\n", "f");
    let err = ex.run(&spin.id, &spin.source_text, "f", "()").unwrap_err();
    assert!(
        matches!(err, ExecError::ExecutionFailed { status: ShimStatus::Timeout, .. }),
        "{err:?}"
    );
    let err = ex.run("e", "def f(x):\n    return 1 // x\n", "f", "(0,)").unwrap_err();
    assert!(matches!(err, ExecError::ExecutionFailed { status: ShimStatus::Exception, .. }));
    let err = ex.run("y", "def f(:\n", "f", "()").unwrap_err();
    assert!(matches!(err, ExecError::ExecutionFailed { status: ShimStatus::SyntaxError, .. }));
    assert!(matches!(
        ex.syntax_check("def f(:\n"),
        Err(ExecError::ExecutionFailed { status: ShimStatus::SyntaxError, .. })
    ));
    assert!(ex.syntax_check("x = 1\n").is_ok());
    let ok = ex.run("k", "def f(x):\n    return x\n", "f", "(4,)").unwrap();
    assert_eq!(ok.return_repr, "4");
}

#[test]
fn multiline_print_is_a_trace_parse_error() {
    let Some(ex) = live_executor(1, 5000) else { return };
    let p = instrument(
        &program("m", "def f(x):\n    s = 'a\\nb'\n    return x\n", "f"),
        &InstrumentationConfig::default(),
    )
    .unwrap();
    assert!(matches!(
        ex.generate_trace(&p, "(1,)"),
        Err(ExecError::TraceParseError { index: 1, .. })
    ));
}

#[test]
fn values_equal_through_shim() {
    let Some(ex) = live_executor(1, 5000) else { return };
    assert!(ex.values_equal("'abc'", "\"abc\""));
    assert!(ex.values_equal("[1, 2]", "[1,2]"));
    assert!(ex.values_equal(&ANSWER[1..ANSWER.len() - 1], ANSWER));
    assert!(!ex.values_equal("'abc'", "'abd'"));
    assert_eq!(ex.canonical("\"abc\""), ex.canonical("'abc'"));
}

#[test]
fn replay_matches_live_for_recorded_runs() {
    let Some(live) = live_executor(2, 5000) else { return };
    let live = live.recording();
    let raw = program("train_12366", &fixture("generate_output.py"), "generate_output");
    let inst = instrument(&raw, &InstrumentationConfig::default()).unwrap();
    let acc = instrument(
        &program("acc", "def f(n):\n    t = 0\n    for i in range(n):\n        t += i\n    return t\n", "f"),
        &InstrumentationConfig::default(),
    )
    .unwrap();
    let mut expected = vec![(inst.clone(), INPUT.to_string(), live.generate_trace(&inst, INPUT).ok())];
    for n in 0..5 {
        let input = format!("({n},)");
        expected.push((acc.clone(), input.clone(), live.generate_trace(&acc, &input).ok()));
    }
    let bad = input_failure(&live, &acc);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fx.jsonl");
    live.take_recorded().save(&path).unwrap();

    let replay = Executor::new(trace_forge_core::executor::ExecutorConfig {
        fixture_path: Some(path),
        ..Default::default()
    })
    .unwrap();
    for (prog, input, trace) in expected {
        assert_eq!(replay.generate_trace(&prog, &input).ok(), trace);
    }
    assert_eq!(input_failure(&replay, &acc), bad);
}

fn input_failure(ex: &Executor, p: &trace_forge_core::InstrumentedProgram) -> String {
    ex.generate_trace(p, "('x',)").unwrap_err().reason()
}

// Random literal text in assorted spellings; sets are excluded because
// CPython prints them in hash order.
fn py_char() -> impl Strategy<Value = char> {
    prop_oneof![
        4 => proptest::char::range(' ', '~'),
        2 => proptest::char::range('\0', '\u{ff}'),
        1 => proptest::char::range('α', 'ω'),
        1 => proptest::char::range('一', '龥'),
        1 => proptest::char::range('😀', '🙏'),
        1 => prop::sample::select(vec!['\u{2028}', '\u{a0}', '\u{200b}', '\u{feff}', '\u{ad}', '\'', '"', '\\']),
    ]
}

fn str_literal() -> impl Strategy<Value = String> {
    (prop::collection::vec(py_char(), 0..8), any::<bool>()).prop_map(|(chars, dq)| {
        let q = if dq { '"' } else { '\'' };
        let mut s = String::new();
        s.push(q);
        for c in chars {
            if c.is_ascii_alphanumeric() || c == ' ' {
                s.push(c);
            } else {
                s.push_str(&format!("\\U{:08x}", c as u32));
            }
        }
        s.push(q);
        s
    })
}

fn float_literal() -> impl Strategy<Value = String> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |f| f.is_finite()).prop_map(|f| format!("{f:e}")),
        (-1000i32..1000, 0u32..4).prop_map(|(m, e)| format!("{m}.{}", "5".repeat(e as usize))),
        (1u32..9, -30i32..30).prop_map(|(m, e)| format!("{m}e{e}")),
    ]
}

fn py_literal() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        any::<i64>().prop_map(|i| i.to_string()),
        "[1-9][0-9]{18,30}",
        float_literal(),
        str_literal(),
        Just("True".to_string()),
        Just("None".to_string()),
        (any::<u8>(), any::<u8>()).prop_map(|(a, b)| format!("b'\\x{a:02x}\\x{b:02x}'")),
    ];
    leaf.prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(|v| format!("[{}]", v.join(","))),
            prop::collection::vec(inner.clone(), 0..4).prop_map(|v| match v.len() {
                1 => format!("({} ,)", v[0]),
                _ => format!("( {} )", v.join(" , ")),
            }),
            prop::collection::vec((str_literal(), inner), 0..4).prop_map(|kv| {
                let body: Vec<String> = kv.iter().map(|(k, v)| format!("{k}:{v}")).collect();
                format!("{{{}}}", body.join(","))
            }),
        ]
    })
}

#[test]
fn offline_canonical_form_matches_interpreter_repr() {
    let Some(ex) = live_executor(1, 5000) else { return };
    let mut runner = TestRunner::new(Config::with_cases(400));
    runner
        .run(&py_literal(), |text| {
            let shim = ex.canonical(&text);
            let offline = literal::canonicalize(&text).ok();
            prop_assert!(shim.is_some(), "shim rejected {text}");
            prop_assert_eq!(offline, shim, "literal {}", text);
            Ok(())
        })
        .unwrap();
}

// Random straight-line, branching and looping programs over four integer
// variables that are all bound before any control flow.
#[derive(Debug, Clone)]
enum St {
    Assign(usize, String),
    Aug(usize, &'static str, String),
    If(String, Vec<St>, Vec<St>),
    For(u8, Vec<St>),
    OneLineIf(String, usize, String),
    Semi(usize, String, usize, String),
    EarlyReturn(String, String),
}

const VARS: [&str; 4] = ["a", "b", "c", "d"];

fn expr() -> impl Strategy<Value = String> {
    let atom = prop_oneof![
        prop::sample::select(VARS.to_vec()).prop_map(str::to_string),
        (-9i32..10).prop_map(|i| i.to_string()),
        Just("x".to_string()),
    ];
    atom.prop_recursive(2, 6, 2, |inner| {
        (inner.clone(), prop::sample::select(vec!["+", "-", "*", "%"]), inner)
            .prop_map(|(l, op, r)| match op {
                "%" => format!("({l} % 7)"),
                _ => format!("({l} {op} {r})"),
            })
    })
}

fn cond() -> impl Strategy<Value = String> {
    (expr(), prop::sample::select(vec!["<", ">", "==", "!="]), expr())
        .prop_map(|(l, op, r)| format!("{l} {op} {r}"))
}

fn stmt() -> impl Strategy<Value = St> {
    let var = 0usize..4;
    let leaf = prop_oneof![
        (var.clone(), expr()).prop_map(|(v, e)| St::Assign(v, e)),
        (var.clone(), prop::sample::select(vec!["+=", "-=", "*="]), expr())
            .prop_map(|(v, op, e)| St::Aug(v, op, format!("({e}) % 101"))),
        (cond(), var.clone(), expr()).prop_map(|(c, v, e)| St::OneLineIf(c, v, e)),
        (var.clone(), expr(), var.clone(), expr()).prop_map(|(v, e, w, f)| St::Semi(v, e, w, f)),
        (cond(), expr()).prop_map(|(c, e)| St::EarlyReturn(c, e)),
    ];
    leaf.prop_recursive(2, 12, 3, |inner| {
        prop_oneof![
            (cond(), prop::collection::vec(inner.clone(), 1..3), prop::collection::vec(inner.clone(), 0..3))
                .prop_map(|(c, t, e)| St::If(c, t, e)),
            (0u8..4, prop::collection::vec(inner, 1..3)).prop_map(|(k, b)| St::For(k, b)),
        ]
    })
}

fn render(stmts: &[St], depth: usize, out: &mut String) {
    let pad = "    ".repeat(depth);
    for s in stmts {
        match s {
            St::Assign(v, e) => out.push_str(&format!("{pad}{} = {e}\n", VARS[*v])),
            St::Aug(v, op, e) => out.push_str(&format!("{pad}{} {op} {e}\n", VARS[*v])),
            St::OneLineIf(c, v, e) => out.push_str(&format!("{pad}if {c}: {} = {e}\n", VARS[*v])),
            St::Semi(v, e, w, f) => {
                out.push_str(&format!("{pad}{} = {e}; {} = {f}\n", VARS[*v], VARS[*w]))
            }
            St::EarlyReturn(c, e) => out.push_str(&format!("{pad}if {c}: return {e}\n")),
            St::If(c, t, e) => {
                out.push_str(&format!("{pad}if {c}:\n"));
                render(t, depth + 1, out);
                if !e.is_empty() {
                    out.push_str(&format!("{pad}else:\n"));
                    render(e, depth + 1, out);
                }
            }
            St::For(k, body) => {
                out.push_str(&format!("{pad}for i in range({k}):\n"));
                render(body, depth + 1, out);
            }
        }
    }
}

fn random_program() -> impl Strategy<Value = String> {
    (prop::collection::vec(stmt(), 1..6), expr()).prop_map(|(body, ret)| {
        let mut src = String::from("def f(x):\n    a = x\n    b = 1\n    c = x * 2\n    d = 0\n");
        render(&body, 1, &mut src);
        src.push_str(&format!("    return {ret}\n"));
        src
    })
}

#[test]
fn instrumentation_preserves_behavior_on_random_programs() {
    let Some(ex) = live_executor(2, 5000) else { return };
    let mut runner = TestRunner::new(Config::with_cases(120));
    let cfg = InstrumentationConfig {
        max_static_anchors: 1000,
        ..Default::default()
    };
    runner
        .run(&random_program(), |src| {
            let raw = program("rand", &src, "f");
            let inst = instrument(&raw, &cfg).map_err(|e| TestCaseError::fail(format!("{e}\n{src}")))?;
            let inputs: Vec<String> = (-4..6).map(|x| format!("({x},)")).collect();
            let same = ex
                .check_equivalence(&raw, &inst, &inputs)
                .map_err(|e| TestCaseError::fail(format!("{e}\n{src}")))?;
            prop_assert!(same, "behavior changed:\n{}\n---\n{}", src, inst.source_text);
            for input in &inputs {
                let trace = ex.generate_trace(&inst, input);
                prop_assert!(trace.is_ok(), "{:?}\n{}", trace, inst.source_text);
            }
            Ok(())
        })
        .unwrap();
}
