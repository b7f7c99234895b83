//! A synthetic program corpus with recorded (replayable) executions.

use trace_forge_core::executor::{source_digest, Executor, FixtureRecord, FixtureStore};
use trace_forge_core::instrument::instrument;
use trace_forge_core::pipeline::{BenchRecord, InputRecord, PipelineConfig};
use trace_forge_core::SourceProgram;

pub const PLANTED: &str = "merge the quick brown fox jumps over the lazy dog twice";

pub struct Corpus {
    pub programs: Vec<SourceProgram>,
    pub inputs: Vec<InputRecord>,
    pub bench: Vec<BenchRecord>,
    pub store: FixtureStore,
}

impl Corpus {
    pub fn executor(&self) -> Executor {
        Executor::replay(self.store.clone())
    }
}

/// `k` chained assignments then `return`; `k == 0` returns an expression.
/// The last assignment is reported by the return anchor, so traces have
/// `max(k, 1)` lines.
pub fn chain_program(id: &str, k: usize, planted: bool) -> (SourceProgram, Vec<(String, String)>, i64, i64) {
    let x = 7i64;
    let mut src = "def f(x):\n".to_string();
    if planted {
        src.push_str(&format!("    # {PLANTED}\n"));
    }
    let mut events = Vec::new();
    let mut value = x;
    if k == 0 {
        src.push_str("    return x * 2\n");
        value = x * 2;
    } else {
        for i in 0..k {
            let prev = if i == 0 { "x".to_string() } else { format!("v{}", i - 1) };
            src.push_str(&format!("    v{i} = {prev} + {}\n", i + 1));
            value += i as i64 + 1;
            if i + 1 < k {
                events.push((format!("v{i}"), value.to_string()));
            }
        }
        src.push_str(&format!("    return v{}\n", k - 1));
    }
    events.push(("return_val".to_string(), value.to_string()));
    let program = SourceProgram {
        id: id.into(),
        entry_name: "f".into(),
        source_text: src,
    };
    (program, events, x, value)
}

/// Sample `i` has an 11-line trace when `i % 5 == 0`, a 1-line trace when
/// `i % 5 == 1`, and otherwise 3 to 6 lines. Sample 2 carries a planted
/// benchmark overlap.
pub fn mixed_corpus(samples: usize, cfg: &PipelineConfig) -> Corpus {
    let icfg = trace_forge_core::instrument::InstrumentationConfig {
        max_static_anchors: cfg.max_static_anchors,
        dropout_rate: cfg.dropout_rate,
        rng_seed: cfg.seed,
        ..Default::default()
    };
    let mut programs = Vec::new();
    let mut inputs = Vec::new();
    let mut records = Vec::new();
    for i in 0..samples {
        let k = match i % 5 {
            0 => 11,
            1 => i % 2,
            _ => 3 + i % 4,
        };
        let id = format!("p{i:03}");
        let (program, events, x, value) = chain_program(&id, k, i == 2);
        let inst = instrument(&program, &icfg).expect("corpus programs instrument");
        assert_eq!(inst.anchors.len(), events.len(), "{id}: anchors vs events");
        let input = format!("({x},)");
        let record = |source: &str, events: Vec<(String, String)>| FixtureRecord {
            origin_id: id.clone(),
            input: input.clone(),
            source_sha256: Some(source_digest(source)),
            events,
            final_value: value.to_string(),
            status: None,
            error_text: None,
            stdout: None,
        };
        records.push(record(&program.source_text, Vec::new()));
        records.push(record(&inst.source_text, events));
        inputs.push(InputRecord { id: id.clone(), input });
        programs.push(program);
    }
    let bench = vec![BenchRecord {
        id: "bench_0".into(),
        text: format!("def g(y):\n    # {PLANTED}\n    return y\n"),
    }];
    Corpus {
        programs,
        inputs,
        bench,
        store: FixtureStore::new(records),
    }
}
