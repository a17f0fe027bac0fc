//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line (run with `cargo test --test acceptance -- --nocapture` to see
//! them).

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use qindex::agent::{
    build_agent, compute_targets, margin_loss, AgentConfig, ExplorationSchedule, TargetMode,
    Transition,
};
use qindex::controller::{
    baseline_index_set, resolve_reward_config, run_evaluate, run_online, BaselineStrategy,
    QueryOrder,
};
use qindex::demos::{build_demonstrations, DemoRule};
use qindex::nn::{backward, forward, Activation, NetworkSpec, Params, Pooling};
use qindex::query::{
    build_vocabulary, decode_action, encode_action, tokenize, ActionVec, Aggregation, ComparisonOp,
    Expr, FieldName, IndexDef, Literal, LogicalOp, QueryAst, SortDirection, StateCodec,
    StateTokens, EOS, IDX_ASC,
};
use qindex::sim::{plan, CollectionModel, Environment, IndexSet};
use qindex::workload::{default_schema, gen_workload, AttrType, Attribute, QueryGenConfig, Schema};

fn criterion(n: u32, name: &str, body: impl FnOnce() -> Result<(), String>) {
    match body() {
        Ok(()) => println!("[acceptance] criterion {n:2} ({name}): PASS"),
        Err(msg) => {
            println!("[acceptance] criterion {n:2} ({name}): FAIL - {msg}");
            panic!("criterion {n} ({name}) failed: {msg}");
        }
    }
}

macro_rules! check {
    ($cond:expr, $($arg:tt)+) => {
        match $cond {
            true => {}
            false => return Err(format!($($arg)+)),
        }
    };
}

// ---------------------------------------------------------------------------
// 1. gradient correctness
// ---------------------------------------------------------------------------

fn random_spec(rng: &mut ChaCha8Rng) -> NetworkSpec {
    let heads = rng.gen_range(1..=3);
    let n_hidden = rng.gen_range(0..=2);
    let hidden = (0..n_hidden)
        .map(|_| {
            let size = rng.gen_range(2..=5);
            let act = if rng.gen_bool(0.5) {
                Activation::Relu
            } else {
                Activation::Tanh
            };
            (size, act)
        })
        .collect();
    NetworkSpec {
        vocab_size: rng.gen_range(3..=6),
        embed_dim: rng.gen_range(2..=4),
        hidden,
        heads,
        head_width: 2 * heads + 1,
        input_len: rng.gen_range(3..=6),
        pooling: if rng.gen_bool(0.5) {
            Pooling::MaskedMean
        } else {
            Pooling::Concat
        },
    }
}

#[test]
fn criterion_01_gradient_correctness() {
    criterion(1, "gradient correctness", || {
        let start = Instant::now();
        for seed in 0..22u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = random_spec(&mut rng);
            let mut params = Params::init(&spec, &mut rng);
            for layer in params.hidden.iter_mut().chain(params.heads.iter_mut()) {
                for b in layer.b.iter_mut() {
                    *b = rng.gen_range(-0.1..0.1);
                }
            }
            let used = rng.gen_range(1..=spec.input_len);
            let ids: Vec<u32> = (0..spec.input_len)
                .map(|i| {
                    if i < used {
                        rng.gen_range(1..spec.vocab_size as u32)
                    } else {
                        0
                    }
                })
                .collect();
            let tokens = StateTokens::from_ids(ids);
            let coeffs: Vec<Vec<f64>> = (0..spec.heads)
                .map(|_| {
                    (0..spec.head_width)
                        .map(|_| rng.gen_range(-1.0..1.0))
                        .collect()
                })
                .collect();

            let loss = |params: &Params| -> f64 {
                let (q, _) = forward(&spec, params, &tokens).unwrap();
                q.heads
                    .iter()
                    .zip(&coeffs)
                    .map(|(h, c)| h.iter().zip(c).map(|(a, b)| a * b).sum::<f64>())
                    .sum()
            };

            let (_, cache) = forward(&spec, &params, &tokens).unwrap();
            let analytic = backward(&spec, &params, &cache, &coeffs).unwrap();

            let h = 1e-4;
            let n_tensors = analytic.flatten().len();
            for t in 0..n_tensors {
                let len = analytic.flatten()[t].1.len();
                for i in 0..len {
                    let a = analytic.flatten()[t].1[i];
                    let original = params.flatten()[t].1[i];
                    params.flatten_mut()[t].1[i] = original + h;
                    let up = loss(&params);
                    params.flatten_mut()[t].1[i] = original - h;
                    let down = loss(&params);
                    params.flatten_mut()[t].1[i] = original;
                    let numeric = (up - down) / (2.0 * h);
                    let denom = a.abs().max(numeric.abs());
                    if denom < 1e-5 {
                        continue;
                    }
                    let rel = (a - numeric).abs() / denom;
                    check!(rel < 1e-4, "seed {seed}: relative error {rel}");
                }
            }
        }
        let elapsed = start.elapsed();
        check!(elapsed.as_secs() < 30, "took {elapsed:?}, budget 30 s");
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// 2. target oracle
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_target_oracle() {
    criterion(2, "target oracle", || {
        // 1 head x 3 actions, no hidden layer; Q-values equal head biases
        let cfg = AgentConfig {
            vocab_size: 4,
            state_len: 3,
            max_keys: 1,
            embed_dim: 2,
            hidden: vec![],
            seed: 0,
            ..AgentConfig::default()
        };
        let mut agent = build_agent(cfg).map_err(|e| e.to_string())?;
        agent.load_params(Params::zeros(&agent.network().spec));
        let mut net = agent.network().clone();
        let mut target = agent.target_network().clone();
        net.params.heads[0].b = vec![0.4, -0.2, 0.1];
        target.params.heads[0].b = vec![-1.0, 2.0, 0.5];

        let gamma = 0.9f64;
        let tr = |reward: f64, terminal: bool| Transition {
            state: StateTokens::from_ids(vec![1, 2, 0]),
            action: ActionVec::new(vec![2]),
            reward,
            next_state: StateTokens::from_ids(vec![2, 1, 0]),
            terminal,
            is_demo: false,
        };
        let batch = [tr(-0.5, false), tr(-0.3, true), tr(1.25, false)];
        let refs: Vec<&Transition> = batch.iter().collect();

        // brute-force by hand over the 3 actions: online Q = [0.4, -0.2, 0.1]
        let target_q = [-1.0f64, 2.0, 0.5];
        let argmax_online = 0usize; // 0.4 is the online max
        let max_target = 2.0f64;
        let expect_double: Vec<Vec<f64>> = batch
            .iter()
            .map(|tr| {
                if tr.terminal {
                    vec![tr.reward]
                } else {
                    vec![tr.reward + gamma * target_q[argmax_online]]
                }
            })
            .collect();
        let expect_dqn: Vec<Vec<f64>> = batch
            .iter()
            .map(|tr| {
                if tr.terminal {
                    vec![tr.reward]
                } else {
                    vec![tr.reward + gamma * max_target]
                }
            })
            .collect();

        let double = compute_targets(&refs, &net, &target, gamma, TargetMode::Double);
        let dqn = compute_targets(&refs, &net, &target, gamma, TargetMode::Dqn);
        check!(
            double == expect_double,
            "double targets {double:?} != {expect_double:?}"
        );
        check!(dqn == expect_dqn, "dqn targets {dqn:?} != {expect_dqn:?}");

        // equal nets: the two modes coincide bit-exactly
        let same = compute_targets(&refs, &net, &net, gamma, TargetMode::Double);
        let same_dqn = compute_targets(&refs, &net, &net, gamma, TargetMode::Dqn);
        check!(same == same_dqn, "double != dqn with equal networks");
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// 3. margin loss
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_margin_loss() {
    criterion(3, "margin loss table and properties", || {
        check!(
            margin_loss(&[1.0, 0.0], 0, 0.1) == 0.0,
            "expert dominating case"
        );
        check!(
            (margin_loss(&[0.0, 0.0], 0, 0.1) - 0.1).abs() < 1e-15,
            "tied case"
        );
        check!(
            (margin_loss(&[0.0, 1.0], 0, 0.1) - 1.1).abs() < 1e-15,
            "dominated case"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let len = rng.gen_range(2..=9);
            let q: Vec<f64> = (0..len).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let expert = rng.gen_range(0..len);
            let j = margin_loss(&q, expert, 0.1);
            check!(j >= 0.0, "negative margin loss {j} for {q:?}");
            let shift = rng.gen_range(-10.0..10.0);
            let shifted: Vec<f64> = q.iter().map(|v| v + shift).collect();
            let js = margin_loss(&shifted, expert, 0.1);
            check!((j - js).abs() < 1e-9, "shift variance: {j} vs {js}");
        }
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// 4. action codec
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_action_codec() {
    criterion(4, "action codec round-trip", || {
        let fields: Vec<FieldName> = ["a", "b", "c"].iter().map(|f| (*f).into()).collect();
        let k = 3;
        let mut checked = 0usize;
        for n_attrs in 1..=3usize {
            let attrs = &fields[..n_attrs];
            // every injective key sequence over the attrs, up to k keys
            let mut stack: Vec<Vec<(FieldName, SortDirection)>> = vec![vec![]];
            while let Some(keys) = stack.pop() {
                if !keys.is_empty() {
                    let def = IndexDef::new(keys.clone()).unwrap();
                    let action = encode_action(Some(&def), attrs, k)
                        .map_err(|e| format!("encode failed: {e}"))?;
                    let back = decode_action(&action, attrs);
                    check!(
                        back.as_ref() == Some(&def),
                        "{def} -> {action:?} -> {back:?}"
                    );
                    checked += 1;
                }
                if keys.len() == k.min(n_attrs) {
                    continue;
                }
                for field in attrs {
                    if keys.iter().any(|(f, _)| f == field) {
                        continue;
                    }
                    for dir in [SortDirection::Asc, SortDirection::Desc] {
                        let mut next = keys.clone();
                        next.push((field.clone(), dir));
                        stack.push(next);
                    }
                }
            }
        }
        // 1 attr: 2; 2 attrs: 4+8=12; 3 attrs: 6+24+48=78... per direction choices
        check!(checked == 2 + 12 + 78, "checked {checked} index defs");

        // no-op round-trips too
        let zero = encode_action(None, &fields, k).unwrap();
        check!(decode_action(&zero, &fields).is_none(), "no-op decode");

        // the worked two-attribute example: [3, 0] on [name, age]
        let attrs: Vec<FieldName> = vec!["name".into(), "age".into()];
        let decoded = decode_action(&ActionVec::new(vec![3, 0]), &attrs);
        let expect = IndexDef::new(vec![("age".into(), SortDirection::Asc)]).unwrap();
        check!(
            decoded == Some(expect),
            "positional example decoded {decoded:?}"
        );
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// 5. tokenizer worked example
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_tokenizer_example() {
    criterion(5, "tokenizer worked example", || {
        let schema = Schema::new(vec![
            Attribute::new("name", AttrType::Str, 1000),
            Attribute::new("age", AttrType::Int { lo: 0, hi: 100 }, 100),
        ])
        .unwrap();
        let vocab = build_vocabulary(&schema).unwrap();
        let query = QueryAst {
            expr: Expr::Compare {
                op: ComparisonOp::Eq,
                field: "name".into(),
                value: Literal::Str("Jane".into()),
            },
            agg: Aggregation::Count,
        };
        let index = IndexDef::new(vec![("name".into(), SortDirection::Asc)]).unwrap();
        let state = tokenize(&query, [&index], &vocab, 32);
        let expect = [
            vocab.id("$eq").unwrap(),
            vocab.id("name").unwrap(),
            IDX_ASC,
            vocab.id("count").unwrap(),
            EOS,
        ];
        check!(
            state.ids()[..5] == expect,
            "tokens {:?} != {expect:?}",
            &state.ids()[..5]
        );
        check!(
            state.ids()[5..].iter().all(|&id| id == 0),
            "padding after EOS"
        );
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// 6. planner properties + brute-force oracle
// ---------------------------------------------------------------------------

/// Independent cost model used only by this test: selectivities, candidate
/// costs, and tie-breaks recomputed from the stated rules.
mod oracle {
    use super::*;

    pub struct Instance<'a> {
        pub n: f64,
        pub leaves: Vec<(&'a FieldName, ComparisonOp, f64)>, // field, op, cardinality
        pub sort_keys: &'a [(FieldName, SortDirection)],
    }

    fn leaf_sel(op: ComparisonOp, card: f64) -> f64 {
        match op {
            ComparisonOp::Eq => 1.0 / card,
            ComparisonOp::Nin => (card - 1.0) / card,
            _ => 1.0 / 3.0,
        }
    }

    fn sort_penalty(docs: f64) -> f64 {
        docs * docs.max(2.0).log2()
    }

    pub fn full_scan(inst: &Instance) -> f64 {
        let mut cost = inst.n;
        if !inst.sort_keys.is_empty() {
            cost += sort_penalty(inst.n);
        }
        cost
    }

    fn candidate(inst: &Instance, def: &IndexDef) -> (f64, usize) {
        let pred_fields: Vec<&FieldName> = inst.leaves.iter().map(|(f, _, _)| *f).collect();
        let prefix = def
            .keys()
            .iter()
            .take_while(|(f, _)| pred_fields.contains(&f))
            .count();
        let prefix_fields: Vec<&FieldName> = def.keys()[..prefix].iter().map(|(f, _)| f).collect();
        let covered: Vec<&(&FieldName, ComparisonOp, f64)> = inst
            .leaves
            .iter()
            .filter(|(f, _, _)| prefix_fields.contains(f))
            .collect();
        let floor = 1.0 / inst.n;
        let sel = covered
            .iter()
            .map(|(_, op, card)| leaf_sel(*op, *card))
            .product::<f64>()
            .clamp(floor, 1.0);
        let mut cost = inst.n.max(2.0).log2() + inst.n * sel * 2.0;
        if covered.len() < inst.leaves.len() {
            cost += inst.n * sel * 1.0;
        }
        if !inst.sort_keys.is_empty() && !serves_sort(inst, def) {
            cost += sort_penalty(inst.n * sel);
        }
        (cost, prefix)
    }

    fn serves_sort(inst: &Instance, def: &IndexDef) -> bool {
        let eq_fields: Vec<&FieldName> = inst
            .leaves
            .iter()
            .filter(|(_, op, _)| *op == ComparisonOp::Eq)
            .map(|(f, _, _)| *f)
            .collect();
        let eq_prefix = def
            .keys()
            .iter()
            .take_while(|(f, _)| eq_fields.contains(&f))
            .count();
        if eq_prefix + inst.sort_keys.len() > def.len() {
            return false;
        }
        let run = &def.keys()[eq_prefix..eq_prefix + inst.sort_keys.len()];
        let mut same = true;
        let mut inverted = true;
        for ((kf, kd), (sf, sd)) in run.iter().zip(inst.sort_keys) {
            if kf != sf {
                return false;
            }
            if kd == sd {
                inverted = false;
            } else {
                same = false;
            }
        }
        same || inverted
    }

    /// Exhaustive minimum over all candidates with the stated tie-breaks.
    pub fn best(inst: &Instance, indexes: &[IndexDef]) -> (Option<IndexDef>, f64) {
        let mut best: (
            Option<IndexDef>,
            f64,
            usize,
            Vec<(FieldName, SortDirection)>,
        ) = (None, full_scan(inst), 0, vec![]);
        for def in indexes {
            let (cost, _) = candidate(inst, def);
            let tie = (def.len(), def.keys().to_vec());
            let better = cost < best.1 || (cost == best.1 && (tie.0, &tie.1) < (best.2, &best.3));
            if better {
                best = (Some(def.clone()), cost, tie.0, tie.1);
            }
        }
        (best.0, best.1)
    }
}

#[test]
fn criterion_06_planner_oracle() {
    criterion(6, "planner properties and brute-force oracle", || {
        let start = Instant::now();
        let schema = Schema::new(vec![
            Attribute::new("a", AttrType::Str, 10),
            Attribute::new("b", AttrType::Str, 100),
            Attribute::new("c", AttrType::Str, 1000),
        ])
        .unwrap();
        let coll = CollectionModel::new(1_000_000, schema.clone());
        let cards: BTreeMap<FieldName, f64> = schema
            .attributes()
            .iter()
            .map(|a| (a.name.clone(), a.cardinality as f64))
            .collect();
        let fields: Vec<FieldName> = schema.attributes().iter().map(|a| a.name.clone()).collect();

        // all conjunctions of <= 3 predicates with ops from {eq, gt, nin}
        let ops = [ComparisonOp::Eq, ComparisonOp::Gt, ComparisonOp::Nin];
        let mut exprs: Vec<Vec<(FieldName, ComparisonOp)>> = Vec::new();
        for mask in 1u32..8 {
            let chosen: Vec<&FieldName> = fields
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, f)| f)
                .collect();
            let mut assignments: Vec<Vec<(FieldName, ComparisonOp)>> = vec![vec![]];
            for field in chosen {
                assignments = assignments
                    .into_iter()
                    .flat_map(|prefix| {
                        ops.iter().map(move |op| {
                            let mut next = prefix.clone();
                            next.push((field.clone(), *op));
                            next
                        })
                    })
                    .collect();
            }
            exprs.extend(assignments);
        }
        check!(
            exprs.len() == 63,
            "expected 63 predicate sets, got {}",
            exprs.len()
        );

        // aggregations: count, sort-all-asc, sort-all-desc, mixed directions
        let aggs = |leaves: &[(FieldName, ComparisonOp)]| -> Vec<Aggregation> {
            let mut out = vec![Aggregation::Count];
            let mk = |dirs: Vec<SortDirection>| Aggregation::SortThenLimit {
                keys: leaves
                    .iter()
                    .zip(&dirs)
                    .map(|((f, _), d)| (f.clone(), *d))
                    .collect(),
                limit: 10,
            };
            out.push(mk(vec![SortDirection::Asc; leaves.len()]));
            out.push(mk(vec![SortDirection::Desc; leaves.len()]));
            if leaves.len() >= 2 {
                let mixed: Vec<SortDirection> = (0..leaves.len())
                    .map(|i| {
                        if i % 2 == 0 {
                            SortDirection::Asc
                        } else {
                            SortDirection::Desc
                        }
                    })
                    .collect();
                out.push(mk(mixed));
            }
            out
        };

        // all 1- and 2-key indexes over the three fields
        let mut defs: Vec<IndexDef> = Vec::new();
        for f1 in &fields {
            for d1 in [SortDirection::Asc, SortDirection::Desc] {
                defs.push(IndexDef::new(vec![(f1.clone(), d1)]).unwrap());
                for f2 in &fields {
                    if f2 == f1 {
                        continue;
                    }
                    for d2 in [SortDirection::Asc, SortDirection::Desc] {
                        defs.push(IndexDef::new(vec![(f1.clone(), d1), (f2.clone(), d2)]).unwrap());
                    }
                }
            }
        }
        check!(
            defs.len() == 30,
            "expected 30 index defs, got {}",
            defs.len()
        );

        // index sets of size 0..=3
        let mut sets: Vec<Vec<IndexDef>> = vec![vec![]];
        for i in 0..defs.len() {
            sets.push(vec![defs[i].clone()]);
            for j in i + 1..defs.len() {
                sets.push(vec![defs[i].clone(), defs[j].clone()]);
                for k in j + 1..defs.len() {
                    sets.push(vec![defs[i].clone(), defs[j].clone(), defs[k].clone()]);
                }
            }
        }

        let mut instances = 0usize;
        for leaves in &exprs {
            let exprs_ast: Vec<Expr> = leaves
                .iter()
                .map(|(f, op)| Expr::Compare {
                    op: *op,
                    field: f.clone(),
                    value: Literal::Str("x".into()),
                })
                .collect();
            let expr = if exprs_ast.len() == 1 {
                exprs_ast[0].clone()
            } else {
                Expr::Logical {
                    op: LogicalOp::And,
                    children: exprs_ast,
                }
            };
            for agg in aggs(leaves) {
                let query = QueryAst {
                    expr: expr.clone(),
                    agg,
                };
                let oracle_leaves: Vec<(&FieldName, ComparisonOp, f64)> =
                    leaves.iter().map(|(f, op)| (f, *op, cards[f])).collect();
                let inst = oracle::Instance {
                    n: 1_000_000.0,
                    leaves: oracle_leaves,
                    sort_keys: query.agg.sort_keys(),
                };
                let scan_cost = oracle::full_scan(&inst);
                for set in &sets {
                    let index_set: IndexSet = set.iter().cloned().collect();
                    let got = plan(&query, &index_set, &coll);
                    let (want_chosen, want_cost) = oracle::best(&inst, set);
                    check!(
                        (got.est_cost - want_cost).abs() <= 1e-9 * want_cost.max(1.0),
                        "cost mismatch: {} vs oracle {} for {query:?} over {set:?}",
                        got.est_cost,
                        want_cost
                    );
                    check!(
                        got.chosen == want_chosen,
                        "chosen mismatch: {:?} vs oracle {:?} for {query:?} over {set:?}",
                        got.chosen,
                        want_chosen
                    );
                    check!(
                        got.est_cost <= scan_cost + 1e-9,
                        "full-scan dominance violated"
                    );
                    instances += 1;
                }
            }
        }
        check!(instances > 500_000, "only {instances} instances checked");

        // the named sort-intersection cases
        let two_key: IndexSet = [IndexDef::new(vec![
            ("a".into(), SortDirection::Asc),
            ("b".into(), SortDirection::Desc),
        ])
        .unwrap()]
        .into_iter()
        .collect();
        let sorted_query = |dirs: [SortDirection; 2]| QueryAst {
            expr: Expr::Compare {
                op: ComparisonOp::Gt,
                field: "c".into(),
                value: Literal::Str("x".into()),
            },
            agg: Aggregation::SortThenLimit {
                keys: vec![("a".into(), dirs[0]), ("b".into(), dirs[1])],
                limit: 5,
            },
        };
        use SortDirection::{Asc, Desc};
        check!(
            plan(&sorted_query([Asc, Desc]), &two_key, &coll).sort_served,
            "matching sort pattern must be served"
        );
        check!(
            plan(&sorted_query([Desc, Asc]), &two_key, &coll).sort_served,
            "inverted sort pattern must be served"
        );
        check!(
            !plan(&sorted_query([Asc, Asc]), &two_key, &coll).sort_served,
            "asc/asc sort pattern must not be served"
        );

        let elapsed = start.elapsed();
        check!(elapsed.as_secs() < 60, "took {elapsed:?}, budget 1 min");
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// 7. workload distributions
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_workload_distributions() {
    criterion(7, "workload distributions", || {
        let schema = default_schema();
        let cfg = QueryGenConfig {
            seed: 2024,
            ..QueryGenConfig::default()
        };
        let queries = gen_workload(&schema, &cfg, 10_000).map_err(|e| e.to_string())?;
        let n = queries.len() as f64;

        let mut limit_only = 0.0;
        let mut sort = 0.0;
        let mut count = 0.0;
        let mut attr_counts = [0.0f64; 3];
        for query in &queries {
            match &query.agg {
                Aggregation::Limit(_) => limit_only += 1.0,
                Aggregation::SortThenLimit { .. } => sort += 1.0,
                Aggregation::Count => count += 1.0,
            }
            let attrs = qindex::query::extract_attributes(query).len();
            check!((1..=3).contains(&attrs), "query with {attrs} attributes");
            attr_counts[attrs - 1] += 1.0;
        }
        check!(
            (limit_only / n - 0.10).abs() <= 0.02,
            "limit-only fraction {}",
            limit_only / n
        );
        check!(
            (sort / n - 0.45).abs() <= 0.02,
            "sort fraction {}",
            sort / n
        );
        check!(
            (count / n - 0.45).abs() <= 0.02,
            "count fraction {}",
            count / n
        );
        for (i, c) in attr_counts.iter().enumerate() {
            check!(
                (c / n - 1.0 / 3.0).abs() <= 0.02,
                "attribute count {} fraction {}",
                i + 1,
                c / n
            );
        }
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// 8. pretraining adoption
// ---------------------------------------------------------------------------

fn demo_corpus(codec: &StateCodec, count: usize) -> Vec<Transition> {
    let schema = default_schema();
    let cfg = QueryGenConfig {
        seed: 7,
        ..QueryGenConfig::default()
    };
    let queries = gen_workload(&schema, &cfg, count).unwrap();
    let mut env = Environment::new(CollectionModel::new(1_000_000, schema), 0);
    build_demonstrations(
        &queries,
        DemoRule::Full,
        &mut env,
        codec,
        QueryOrder::Desc,
        Some(20),
        None,
    )
    .transitions
}

#[test]
fn criterion_08_pretraining_adoption() {
    criterion(8, "pretraining adoption accuracy", || {
        let start = Instant::now();
        let schema = default_schema();
        let vocab = build_vocabulary(&schema).unwrap();
        let codec = StateCodec::new(vocab.clone(), 32, 3);
        let transitions = demo_corpus(&codec, 2_000);
        check!(
            transitions.len() == 2_000,
            "demo corpus size {}",
            transitions.len()
        );

        let mut accuracies = Vec::new();
        for seed in [1u64, 2, 3] {
            // batch 32, lr 5e-4, margin 0.1, embedding + one dense-128 layer
            let cfg = AgentConfig {
                vocab_size: vocab.len(),
                seed,
                ..AgentConfig::default()
            };
            let mut agent = build_agent(cfg).map_err(|e| e.to_string())?;
            agent.import_demonstrations(transitions.clone());
            let history = agent.pretrain(2_000, 50, None).map_err(|e| e.to_string())?;
            let best = history.iter().map(|p| p.accuracy).fold(0.0, f64::max);
            accuracies.push(best);
        }
        let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
        check!(
            mean >= 0.70,
            "mean adoption accuracy {mean:.3} over seeds ({accuracies:?})"
        );
        let elapsed = start.elapsed();
        check!(elapsed.as_secs() < 300, "took {elapsed:?}, budget 5 min");
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// 9. end-to-end directional reproduction
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_end_to_end_directional() {
    criterion(9, "end-to-end directional reproduction", || {
        let start = Instant::now();
        let schema = default_schema();
        let vocab = build_vocabulary(&schema).unwrap();
        let codec = StateCodec::new(vocab.clone(), 32, 3);

        let test_queries = gen_workload(
            &schema,
            &QueryGenConfig {
                seed: 99,
                ..QueryGenConfig::default()
            },
            20,
        )
        .map_err(|e| e.to_string())?;
        let coll = CollectionModel::new(1_000_000, schema.clone());
        let reward_cfg = resolve_reward_config(&test_queries, &coll, None, None);
        let demos = demo_corpus(&codec, 2_000);

        // full-rule baseline
        let mut env = Environment::new(coll.clone(), 0);
        let full_set = baseline_index_set(
            BaselineStrategy::Full,
            &mut env,
            &test_queries,
            &codec,
            QueryOrder::Desc,
        );
        let full_report = run_evaluate(
            &mut env,
            &test_queries,
            &full_set,
            5,
            &reward_cfg,
            QueryOrder::Desc,
            json!({}),
        )
        .map_err(|e| e.to_string())?;

        let mut pretrained_best = Vec::new();
        let mut scratch_best = Vec::new();
        let mut sizes = Vec::new();
        let mut latencies = Vec::new();
        for seed in 1..=5u64 {
            // pretrain + online
            let cfg = AgentConfig {
                vocab_size: vocab.len(),
                seed,
                exploration: ExplorationSchedule::pretrained(),
                ..AgentConfig::default()
            };
            let mut pretrainer = build_agent(cfg.clone()).map_err(|e| e.to_string())?;
            pretrainer.import_demonstrations(demos.clone());
            pretrainer
                .pretrain(2_000, 50, Some(0.75))
                .map_err(|e| e.to_string())?;
            // online refinement starts from the serialized parameters with a
            // freshly initialized agent, as the pipeline does
            let pretrained_params = pretrainer.network().params.clone();
            let mut agent = build_agent(cfg).map_err(|e| e.to_string())?;
            agent.load_params(pretrained_params);
            agent.import_demonstrations(demos.clone());
            let mut env = Environment::new(coll.clone(), seed.wrapping_add(1));
            let outcome = run_online(
                &mut agent,
                &mut env,
                &test_queries,
                100,
                &codec,
                &reward_cfg,
                QueryOrder::Desc,
            )
            .map_err(|e| e.to_string())?;
            let report = run_evaluate(
                &mut env,
                &test_queries,
                &outcome.best.indexes,
                5,
                &reward_cfg,
                QueryOrder::Desc,
                json!({}),
            )
            .map_err(|e| e.to_string())?;
            pretrained_best.push(outcome.best.reward);
            sizes.push(report.normalized_index_size);
            latencies.push(report.mean_latency_s);

            // online from scratch
            let cfg = AgentConfig {
                vocab_size: vocab.len(),
                seed,
                exploration: ExplorationSchedule::scratch(),
                ..AgentConfig::default()
            };
            let mut agent = build_agent(cfg).map_err(|e| e.to_string())?;
            let mut env = Environment::new(coll.clone(), seed.wrapping_add(1));
            let outcome = run_online(
                &mut agent,
                &mut env,
                &test_queries,
                100,
                &codec,
                &reward_cfg,
                QueryOrder::Desc,
            )
            .map_err(|e| e.to_string())?;
            scratch_best.push(outcome.best.reward);
        }

        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let pretrained_mean = mean(&pretrained_best);
        let scratch_mean = mean(&scratch_best);
        let size_mean = mean(&sizes);
        let latency_mean = mean(&latencies);

        println!(
            "[acceptance]   best-episode reward: pretrain+online {pretrained_mean:.3}, scratch {scratch_mean:.3}"
        );
        println!(
            "[acceptance]   normalized size {size_mean:.3}, mean latency {latency_mean:.4}s vs full {:.4}s",
            full_report.mean_latency_s
        );

        check!(
            pretrained_mean >= scratch_mean,
            "(a) pretrain+online best {pretrained_mean:.3} < scratch best {scratch_mean:.3}"
        );
        check!(
            size_mean <= 0.9,
            "(b) normalized index size {size_mean:.3} > 0.9"
        );
        check!(
            latency_mean <= full_report.mean_latency_s * 1.05,
            "(c) mean latency {latency_mean:.4} > 1.05 x full {:.4}",
            full_report.mean_latency_s
        );
        let elapsed = start.elapsed();
        check!(elapsed.as_secs() < 1200, "took {elapsed:?}, budget 20 min");
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// 10. pipeline determinism
// ---------------------------------------------------------------------------

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let output = Command::new(env!("CARGO_BIN_EXE_qindex"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !output.status.success() {
        return Err(format!(
            "qindex {args:?} failed: {}",
            String::from_utf8_lossy(&output.stderr)
        ));
    }
    Ok(())
}

fn run_pipeline(dir: &Path) -> Result<(), String> {
    run_cli(
        dir,
        &[
            "gen-workload",
            "--count",
            "40",
            "--seed",
            "7",
            "--out",
            "q.jsonl",
        ],
    )?;
    run_cli(
        dir,
        &[
            "gen-workload",
            "--count",
            "10",
            "--seed",
            "99",
            "--out",
            "test.jsonl",
        ],
    )?;
    run_cli(
        dir,
        &[
            "gen-demos",
            "--queries",
            "q.jsonl",
            "--out",
            "d.jsonl",
            "--rule",
            "full",
            "--seed",
            "0",
        ],
    )?;
    run_cli(
        dir,
        &[
            "pretrain",
            "--demos",
            "d.jsonl",
            "--out-model",
            "pre.bin",
            "--out-curve",
            "acc.csv",
            "--steps",
            "300",
            "--seed",
            "1",
        ],
    )?;
    run_cli(
        dir,
        &[
            "train",
            "--queries",
            "test.jsonl",
            "--model",
            "pre.bin",
            "--demos",
            "d.jsonl",
            "--episodes",
            "10",
            "--out-model",
            "refined.bin",
            "--out-curve",
            "curve.csv",
            "--out-best",
            "best.json",
            "--seed",
            "3",
        ],
    )?;
    run_cli(
        dir,
        &[
            "evaluate",
            "--queries",
            "test.jsonl",
            "--indexes",
            "best.json",
            "--out",
            "report.json",
            "--seed",
            "0",
        ],
    )?;
    run_cli(
        dir,
        &[
            "evaluate",
            "--queries",
            "test.jsonl",
            "--model",
            "refined.bin",
            "--out",
            "model_report.json",
            "--seed",
            "0",
        ],
    )?;
    Ok(())
}

#[test]
fn criterion_10_pipeline_determinism() {
    criterion(10, "pipeline determinism", || {
        let dir_a = tempfile::tempdir().map_err(|e| e.to_string())?;
        let dir_b = tempfile::tempdir().map_err(|e| e.to_string())?;
        run_pipeline(dir_a.path())?;
        run_pipeline(dir_b.path())?;
        for name in [
            "q.jsonl",
            "test.jsonl",
            "d.jsonl",
            "pre.bin",
            "acc.csv",
            "refined.bin",
            "curve.csv",
            "best.json",
            "report.json",
            "model_report.json",
        ] {
            let a = std::fs::read(dir_a.path().join(name)).map_err(|e| format!("{name}: {e}"))?;
            let b = std::fs::read(dir_b.path().join(name)).map_err(|e| format!("{name}: {e}"))?;
            check!(a == b, "{name} differs between identical runs");
        }
        Ok(())
    });
}
