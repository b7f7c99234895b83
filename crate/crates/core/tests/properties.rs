//! Invariants checked over generated inputs.

mod support;

use proptest::collection::vec;
use proptest::prelude::*;

use trace_forge_core::advantage::{self, zscore, GroupRewards};
use trace_forge_core::codec::{self, split_pair, Parsed};
use trace_forge_core::model::{read_jsonl, write_jsonl, TraceRecord};
use trace_forge_core::pipeline::{build, decontaminate, tokenize, NgramIndex, PipelineConfig};
use trace_forge_core::reward::{step_rewards, RewardConfig, RewardVector};
use trace_forge_core::{ExecutionTrace, LineMap, TaskKind};

/// Original line of every instrumented line, built by literal insertion.
fn insertion_oracle(lines: usize, inserts: &[usize]) -> Vec<Option<usize>> {
    let mut file: Vec<Option<usize>> = (1..=lines).map(Some).collect();
    for &at in inserts {
        let at = at.min(file.len() + 1);
        file.insert(at - 1, None);
    }
    file
}

fn apply_inserts(lines: usize, inserts: &[usize]) -> LineMap {
    let mut map = LineMap::identity(lines);
    for (len, &at) in (lines..).zip(inserts) {
        map.insert_line(at.min(len + 1));
    }
    map
}

fn ident() -> impl Strategy<Value = String> {
    "[a-z_][a-z0-9_]{0,8}"
}

fn value() -> impl Strategy<Value = String> {
    "[A-Za-z0-9 ,'|\\[\\]().:-]{0,16}".prop_map(|s| s.trim().to_string())
}

fn trace() -> impl Strategy<Value = ExecutionTrace> {
    (vec((ident(), value()), 0..8), value()).prop_map(|(events, final_value)| ExecutionTrace {
        events,
        final_value,
    })
}

fn group() -> impl Strategy<Value = GroupRewards> {
    (2usize..8, 1usize..8).prop_flat_map(|(g, n)| {
        (vec(vec(0u8..=1, n), g), vec(0u8..=1, g))
            .prop_map(|(step, fin)| GroupRewards::new(step, fin).unwrap())
    })
}

proptest! {
    #[test]
    fn line_map_matches_insertion_oracle(lines in 1usize..30, inserts in vec(1usize..40, 0..12)) {
        let map = apply_inserts(lines, &inserts);
        let file = insertion_oracle(lines, &inserts);
        for orig in 1..=lines {
            let want = file.iter().position(|l| *l == Some(orig)).unwrap() + 1;
            prop_assert_eq!(map.get(orig), Some(want));
        }
        prop_assert!(LineMap::new(map.pairs().to_vec()).is_ok());
    }

    #[test]
    fn line_maps_compose(lines in 1usize..20, a in vec(1usize..30, 0..6), b in vec(1usize..40, 0..6)) {
        let first = apply_inserts(lines, &a);
        let mid_len = lines + a.len();
        let second = apply_inserts(mid_len, &b);
        let both = first.compose(&second).unwrap();
        for orig in 1..=lines {
            prop_assert_eq!(both.get(orig), second.get(first.get(orig).unwrap()));
        }
        prop_assert_eq!(first.compose(&LineMap::identity(mid_len)).unwrap(), first.clone());
        prop_assert_eq!(LineMap::identity(lines).compose(&first).unwrap(), first);
    }

    #[test]
    fn fixing_a_step_never_lowers_reward(t in trace(), wrong in vec(any::<bool>(), 8), fin in 0u8..=1, idx in 0usize..8) {
        let cfg = RewardConfig::default();
        let lines: Vec<String> = t.lines().collect();
        let mut pred: Vec<String> = lines
            .iter()
            .zip(&wrong)
            .map(|(l, &w)| if w { format!("{l}#") } else { l.clone() })
            .collect();
        let before = RewardVector::new(step_rewards(&pred, &t), fin, &cfg);
        if let Some(l) = lines.get(idx) {
            pred[idx] = l.clone();
        }
        let after = RewardVector::new(step_rewards(&pred, &t), fin, &cfg);
        prop_assert!(after.budgeted_total >= before.budgeted_total);
        prop_assert!(after.budgeted_total <= cfg.r_internal_budget + cfg.r_final + 1e-12);
        prop_assert!(before.budgeted_total >= 0.0);
    }

    #[test]
    fn step_matching_is_positional(t in trace(), i in 0usize..8, j in 0usize..8) {
        let lines: Vec<String> = t.lines().collect();
        prop_assume!(i < lines.len() && j < lines.len() && lines[i].trim() != lines[j].trim());
        let mut pred = lines.clone();
        pred.swap(i, j);
        let r = step_rewards(&pred, &t);
        prop_assert_eq!((r[i], r[j]), (0, 0));
        prop_assert_eq!(r.iter().map(|&x| x as usize).sum::<usize>(), lines.len() - 2);
    }

    #[test]
    fn advantages_are_centred_and_bounded(rewards in group(), lambda in 0.0f64..2.0) {
        let adv = advantage::compute(&rewards, lambda, 1e-8).unwrap();
        let g = rewards.g() as f64;
        for i in 0..rewards.n() {
            let mean: f64 = adv.group.iter().map(|r| r[i]).sum::<f64>() / g;
            prop_assert!(mean.abs() < 1e-9);
        }
        let fmean: f64 = adv.final_adv.iter().sum::<f64>() / g;
        prop_assert!(fmean.abs() < 1e-9);
        for (gi, row) in adv.intra.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                prop_assert!((0.0..=2.0).contains(&v));
                if rewards.step()[gi][i] == 0 {
                    prop_assert_eq!(v, 0.0);
                }
                prop_assert!((adv.combined[gi][i] - adv.group[gi][i] - lambda * v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zscore_ignores_affine_rescaling(xs in vec(-5.0f64..5.0, 2..10), a in 0.1f64..10.0, b in -10.0f64..10.0) {
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        prop_assume!(xs.iter().any(|x| (x - mean).abs() > 1e-3));
        let z = zscore(&xs, 0.0).unwrap();
        let scaled: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        let zs = zscore(&scaled, 0.0).unwrap();
        for (u, v) in z.iter().zip(&zs) {
            prop_assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn serialized_targets_round_trip(t in trace(), answer in value(), gt in value(), input_task in any::<bool>()) {
        let task = if input_task { TaskKind::InputPrediction } else { TaskKind::OutputPrediction };
        let text = codec::serialize_target(&t, &answer, task, &gt);
        let Parsed::Valid(parsed) = codec::parse(&text, task).unwrap() else {
            return Err(TestCaseError::fail("target did not validate"));
        };
        let lines: Vec<String> = t.lines().map(|l| l.trim().to_string()).collect();
        prop_assert_eq!(parsed.predicted_states, lines);
        prop_assert_eq!(parsed.answer, answer.trim());
        if input_task {
            prop_assert_eq!(parsed.committed_input.as_deref(), Some(gt.trim()));
        }
    }

    #[test]
    fn parsing_never_panics(text in "(<(/)?(reasoning|print|input|answer)>|[a-z :\n<>/]){0,40}") {
        for task in [TaskKind::OutputPrediction, TaskKind::InputPrediction] {
            if let Ok(p) = codec::parse(&text, task) {
                let _ = p.trajectory();
            }
        }
    }

    #[test]
    fn print_pairs_split_where_joined(name in ident(), value in "[^\n]{0,20}") {
        let pair = split_pair(&format!("{name}: {value}"));
        prop_assert!(pair.well_formed);
        prop_assert_eq!(pair.name, name);
        prop_assert_eq!(pair.value, value);
    }

    #[test]
    fn decontamination_matches_brute_force(
        bench in vec("[a-c ]{0,30}", 1..4),
        samples in vec("[a-c ]{0,30}", 0..10),
        k in 1usize..5,
    ) {
        let index = NgramIndex::new(bench.iter().map(String::as_str), k);
        let grams = |s: &str| -> Vec<String> { tokenize(s).windows(k).map(|w| w.join(" ")).collect() };
        let bench_grams: Vec<String> = bench.iter().flat_map(|b| grams(b)).collect();
        let (kept, removed) = decontaminate(samples.clone(), |s| s.as_str(), &index);
        prop_assert_eq!(kept.len() + removed.len(), samples.len());
        for s in &kept {
            prop_assert!(grams(s).iter().all(|g| !bench_grams.contains(g)));
        }
        for (s, w) in &removed {
            prop_assert!(grams(s).contains(w) && bench_grams.contains(w));
        }
    }

    #[test]
    fn trace_records_survive_jsonl(records in vec((ident(), trace()), 0..5)) {
        let records: Vec<TraceRecord> = records
            .into_iter()
            .map(|(origin_id, trace)| TraceRecord { origin_id, trace })
            .collect();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &records).unwrap();
        let back: Vec<TraceRecord> = read_jsonl(buf.as_slice()).unwrap();
        prop_assert_eq!(back, records);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pipeline_partitions_every_sample(samples in 1usize..30) {
        let cfg = PipelineConfig { max_static_anchors: 12, ..Default::default() };
        let corpus = support::corpus::mixed_corpus(samples, &cfg);
        let out = build(&corpus.programs, &corpus.inputs, &corpus.bench, &cfg, &corpus.executor()).unwrap();
        let mut seen: Vec<String> = out.rejected.iter().map(|r| r.id.clone()).collect();
        for r in out.rl.iter().chain(&out.terminal_only) {
            let (origin, kind) = r.id.rsplit_once(':').unwrap();
            if kind == "output" {
                seen.push(origin.to_string());
            }
        }
        seen.sort();
        let mut want: Vec<String> = corpus.inputs.iter().map(|i| i.id.clone()).collect();
        want.sort();
        prop_assert_eq!(seen, want);
        prop_assert_eq!(out.sft.len(), out.rl.len());
        prop_assert!(out.rl.iter().all(|r| (2..=cfg.max_trace_lines).contains(&r.trace.n())));
    }
}
