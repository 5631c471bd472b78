//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::collections::HashSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{game_pool, oracle, oracle_game, oracle_pearson, option, rater_pool, tables};
use envy_harness::agents::stub::{StubResponse, StubServer};
use envy_harness::agents::{
    scripted_choose, AgentSpec, ChatMessage, EndpointConfig, GameContext, PolicySpec, RemoteAgent, ScriptedPolicy,
};
use envy_harness::analysis::{emit_report, pearson, JourneyPair, JourneySummary, ReportOptions};
use envy_harness::manifest::{Experiment, ValidatedManifest};
use envy_harness::parsing::{parse_game, parse_workplace, GameParseStatus, RatingParseStatus};
use envy_harness::payoff::{builtin_matrix, OptionId, OptionPayoff, PayoffMatrix, Regime};
use envy_harness::protocol_point::{run_conversation, scenario_grid, ConversationSetup, Turn3Mapping};
use envy_harness::protocol_workplace::{Metric, WorkplaceRatings};
use envy_harness::runner::{execute, RunOptions};
use envy_harness::scoring::{score_game, score_workplace, term_t1, term_t2, term_t3, AttributionPolicy};
use envy_harness::store::load_run;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<(), String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn within(start: Instant, limit: Duration) -> Check {
    let took = start.elapsed();
    ensure!(took < limit, "took {took:?}, limit {limit:?}");
    Ok(())
}

fn c1_always_b() -> Check {
    let start = Instant::now();
    let m1 = builtin_matrix("M1").map_err(|e| e.to_string())?;
    let agent = AgentSpec::scripted("b", PolicySpec::constant_choice(OptionId::B)).build().map_err(|e| e.to_string())?;
    for scenario in scenario_grid("M1") {
        let label = format!("{}/{}", scenario.cue, scenario.peer_move);
        let t = run_conversation(
            agent.as_ref(),
            &ConversationSetup {
                focal_id: "b",
                peer_id: "peer",
                peer_display: "peer",
                matrix: &m1,
                scenario,
                mapping: Turn3Mapping::Mirrored,
                run_seed: 1729,
            },
        );
        let s = score_game(&t, &m1, AttributionPolicy::TurnAligned).map_err(|e| e.to_string())?;
        let (t1, t2, t3) = (s.t1.unwrap_or(f64::NAN), s.t2.unwrap_or(f64::NAN), s.t3.unwrap_or(f64::NAN));
        ensure!(close(t1, 0.125, 1e-4) && close(t2, 1.0, 1e-4) && close(t3, 0.41667, 1e-4), "{label}: ({t1}, {t2}, {t3})");
    }
    within(start, Duration::from_secs(1))
}

fn c2_transcript_replay() -> Check {
    let start = Instant::now();
    struct Canned(std::sync::Mutex<std::vec::IntoIter<&'static str>>);
    impl envy_harness::agents::Agent for Canned {
        fn id(&self) -> &str {
            "qwen"
        }
        fn respond(&self, _: &envy_harness::agents::AgentRequest<'_>) -> Result<String, envy_harness::AgentError> {
            Ok(self.0.lock().unwrap().next().unwrap_or_default().to_string())
        }
    }
    let agent = Canned(std::sync::Mutex::new(
        vec![
            "<response>\n<choice>a</choice>\n<reasoning>Option A gives both of us points.</reasoning>\n</response>",
            "<response>\n<choice>a</choice>\n<reasoning>Keeping A.</reasoning>\n</response>",
            "<response>\n<choice>c</choice>\n<reasoning>Switching to C.</reasoning>\n</response>",
        ]
        .into_iter(),
    ));
    let m1 = builtin_matrix("M1").map_err(|e| e.to_string())?;
    let t = run_conversation(
        &agent,
        &ConversationSetup {
            focal_id: "qwen",
            peer_id: "llama",
            peer_display: "Llama",
            matrix: &m1,
            scenario: scenario_grid("M1")[0].clone(),
            mapping: Turn3Mapping::Mirrored,
            run_seed: 0,
        },
    );
    ensure!(
        t.choices() == [Some(OptionId::A), Some(OptionId::A), Some(OptionId::C)],
        "choices {:?}",
        t.choices()
    );
    let s = score_game(&t, &m1, AttributionPolicy::TurnAligned).map_err(|e| e.to_string())?;
    let (o1, o2, o3) = oracle_game(&common::M1, [0, 0, 2]);
    ensure!(close(o1, 0.0, 1e-12) && close(o2, 0.0, 1e-12) && close(o3, 0.6667, 1e-4), "oracle ({o1}, {o2}, {o3})");
    let got = (s.t1.unwrap_or(f64::NAN), s.t2.unwrap_or(f64::NAN), s.t3.unwrap_or(f64::NAN));
    ensure!(close(got.0, o1, 1e-12) && close(got.1, o2, 1e-12) && close(got.2, o3, 1e-12), "scored {got:?}");
    within(start, Duration::from_secs(1))
}

fn run(v: &ValidatedManifest, id: &str) -> Result<envy_harness::store::LoadedRun, String> {
    let out = execute(v, RunOptions { run_id: Some(id.into()), ..Default::default() }).map_err(|e| e.to_string())?;
    ensure!(out.complete, "run {id} incomplete");
    load_run(&out.dir).map_err(|e| e.to_string())
}

fn c3_counts() -> Check {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    for (matrices, expected) in [(vec!["M1"], 896), (vec!["M1", "M2", "M3"], 2688)] {
        let v = common::manifest(Experiment::PointAllocation, game_pool(), &matrices, tmp.path());
        let r = run(&v, &format!("point-{}", matrices.len()))?;
        let ids: HashSet<&str> = r.records.iter().map(|x| x.conversation_id.as_str()).collect();
        ensure!(r.records.len() == expected && ids.len() == expected, "{matrices:?}: {} records", r.records.len());
    }
    let v = common::manifest(Experiment::Workplace, rater_pool(), &[], tmp.path());
    let r = run(&v, "workplace")?;
    let turns: usize = r.records.iter().filter_map(|x| x.as_workplace()).map(|w| w.transcript.turns.len()).sum();
    ensure!(r.records.len() == 64 && turns == 448, "workplace: {} records, {turns} turns", r.records.len());
    within(start, Duration::from_secs(120))
}

fn c4_oracle() -> Check {
    let mut extrema = 0;
    for (id, table) in tables() {
        let m = builtin_matrix(id).map_err(|e| e.to_string())?;
        let e = m.gap_extrema();
        for k in 0..4 {
            let c = option(k);
            let o = oracle(&table, k);
            ensure!(close(m.delta(c), o.delta, 1e-12), "{id}/{c} delta {} vs {}", m.delta(c), o.delta);
            ensure!(close(term_t1(&m, c), o.t1, 1e-12), "{id}/{c} T1");
            ensure!(close(term_t2(&m, c), o.t2, 1e-12), "{id}/{c} T2");
            ensure!(close(term_t3(&m, c), o.t3, 1e-12), "{id}/{c} T3");
            let p = m.option(c);
            if p.self_points == e.self_max {
                ensure!(term_t1(&m, c) == 0.0, "{id}/{c}: T1 at self-max");
                extrema += 1;
            }
            if p.peer_points == e.peer_min {
                ensure!(term_t3(&m, c) == 1.0, "{id}/{c}: T3 at peer-min");
                extrema += 1;
            }
            if p.gap() == e.gap_max {
                ensure!(term_t2(&m, c) == 1.0, "{id}/{c}: T2 at gap-max");
                extrema += 1;
            }
        }
    }
    ensure!(extrema >= 9, "only {extrema} extrema checked");
    Ok(())
}

fn choose(policy: &ScriptedPolicy, m: &PayoffMatrix) -> OptionId {
    scripted_choose(policy, &GameContext { matrix: m, turn: 1, cue: None, reveal: None }, 0)
}

fn resolve(spec: PolicySpec) -> Result<ScriptedPolicy, String> {
    spec.resolve().map_err(|e| format!("{e:?}"))
}

fn c5_inequity_aversion() -> Check {
    let neutral = resolve(PolicySpec::fehr_schmidt(0.0, 0.0))?;
    let max_self = resolve(PolicySpec::new(envy_harness::agents::PolicyName::MaxSelf))?;
    let averse = resolve(PolicySpec::fehr_schmidt(2.0, 0.0))?;
    for (id, table) in tables() {
        let m = builtin_matrix(id).map_err(|e| e.to_string())?;
        ensure!(choose(&neutral, &m) == choose(&max_self, &m), "{id}: fs(0,0) differs from max_self");

        let utility = |k: usize| {
            let (s, p) = table[k];
            s as f64 - 2.0 * (p - s).max(0) as f64
        };
        let best = (0..4).fold(0, |b, k| if utility(k) > utility(b) { k } else { b });
        ensure!(choose(&averse, &m) == option(best), "{id}: fs(2,0) picked {}", choose(&averse, &m));
        if id == "M1" {
            ensure!(option(best) == OptionId::B, "M1 enumeration gives {}", option(best));
        }

        for shift in [-7i64, 3, 100] {
            let shifted = PayoffMatrix::new(
                format!("{id}+{shift}"),
                Regime::Custom,
                table.map(|(s, p)| OptionPayoff::new(s + shift, p + shift)),
            )
            .map_err(|e| e.to_string())?;
            for policy in [&neutral, &max_self, &averse] {
                ensure!(choose(policy, &m) == choose(policy, &shifted), "{id} shift {shift}: {policy:?}");
            }
        }
    }
    Ok(())
}

const GAME_TEMPLATE: &str = "<response>\n    <choice>B</choice>\n    <reasoning>because</reasoning>\n</response>";
const WORK_TEMPLATE: &str = "<response><reflection>fine</reflection><ratings><self_esteem>3</self_esteem><empathy>4</empathy><motivation_fairness>2</motivation_fairness><collaboration>5</collaboration><envy>1</envy></ratings></response>";

const FUZZ_PIECES: [&[u8]; 7] = [b"<choice>", b"</choice>", b"E", b"0", b"9", b"<envy>7</envy>", b"\xff"];

fn fuzz_input(rng: &mut ChaCha8Rng) -> Vec<u8> {
    match rng.gen_range(0..3) {
        0 => (0..rng.gen_range(0..256)).map(|_| rng.gen()).collect(),
        _ => {
            let template = if rng.gen() { GAME_TEMPLATE } else { WORK_TEMPLATE };
            let mut bytes = template.as_bytes().to_vec();
            for _ in 0..rng.gen_range(1..6) {
                let at = rng.gen_range(0..=bytes.len());
                match rng.gen_range(0..3) {
                    0 if at < bytes.len() => {
                        bytes.remove(at);
                    }
                    1 if at < bytes.len() => bytes[at] = rng.gen(),
                    _ => {
                        let piece = FUZZ_PIECES[rng.gen_range(0..FUZZ_PIECES.len())];
                        bytes.splice(at..at, piece.iter().copied());
                    }
                }
            }
            bytes
        }
    }
}

fn c6_parser_fuzz() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1729);
    let mut ok_games = 0;
    for i in 0..12_000 {
        let bytes = fuzz_input(&mut rng);
        let text = String::from_utf8_lossy(&bytes);
        let outcome = catch_unwind(|| (parse_game(&text), parse_workplace(&text)));
        let Ok((g, w)) = outcome else {
            return Err(format!("panic on input {i}: {bytes:?}"));
        };
        if g.status == GameParseStatus::Ok {
            ensure!(g.choice.is_some(), "input {i}: ok without a choice");
            ok_games += 1;
        }
        if w.status == RatingParseStatus::Ok {
            let r = w.ratings.as_ref().ok_or(format!("input {i}: ok without ratings"))?;
            ensure!(Metric::ALL.iter().all(|m| (1..=5).contains(&r.get(*m))), "input {i}: out-of-range {r:?}");
        }
    }
    ensure!(ok_games > 0, "fuzz corpus never produced a valid response");

    let upper = parse_game(GAME_TEMPLATE);
    ensure!(upper.status == GameParseStatus::Ok && upper.choice == Some(OptionId::B), "uppercase format: {upper:?}");
    let lower = parse_game("<choice>a</choice>");
    ensure!(lower.status == GameParseStatus::Ok && lower.choice == Some(OptionId::A), "lowercase format: {lower:?}");
    Ok(())
}

fn ratings(values: [u8; 5]) -> Result<WorkplaceRatings, String> {
    let [a, b, c, d, e] = values;
    WorkplaceRatings::new(a, b, c, d, e, String::new()).map_err(|e| e.to_string())
}

fn c7_workplace_scoring() -> Check {
    for r in 1..=5u8 {
        let s = score_workplace(&vec![ratings([r; 5])?; 7]).map_err(|e| e.to_string())?;
        for m in Metric::ALL {
            ensure!(s.mean(m) == r as f64, "constant {r}: {m} mean {}", s.mean(m));
        }
        ensure!(s.envy_norm == r as f64 / 5.0, "constant {r}: norm {}", s.envy_norm);
    }
    let fixture: Vec<_> = [1, 4, 5, 2, 3, 5, 1].iter().map(|&e| ratings([3, 3, 3, 3, e])).collect::<Result<_, _>>()?;
    let s = score_workplace(&fixture).map_err(|e| e.to_string())?;
    ensure!(s.envy_mean == 3.0, "fixture envy_mean {}", s.envy_mean);
    for bad in [0u8, 6] {
        ensure!(ratings([3, 3, 3, 3, bad]).is_err(), "rating {bad} accepted");
    }
    Ok(())
}

fn c8_analysis() -> Check {
    let x = [1.0, 2.0, 3.0, 4.0, 5.0];
    let mirrored: Vec<f64> = x.iter().map(|v| 6.0 - v).collect();
    ensure!(pearson(&x, &x).is_some_and(|r| close(r, 1.0, 1e-12)), "identical columns");
    ensure!(pearson(&x, &mirrored).is_some_and(|r| close(r, -1.0, 1e-12)), "mirrored columns");
    // Deviations (-1.5, -0.5, 0.5, 1.5) and (-0.5, -1.5, 1.5, 0.5): 3 / sqrt(5 * 5).
    let (a, b) = ([1.0, 2.0, 3.0, 4.0], [2.0, 1.0, 4.0, 3.0]);
    let r = pearson(&a, &b).ok_or("4-turn fixture undefined")?;
    ensure!(close(r, 0.6, 1e-9) && close(r, oracle_pearson(&a, &b), 1e-9), "4-turn fixture r = {r}");

    let pairs = [(3, 1), (3, 2), (3, 3), (3, 4)]
        .iter()
        .enumerate()
        .map(|(i, &(first, last))| JourneyPair {
            focal: format!("f{i}"),
            competitor: "c".into(),
            envy_first: first,
            envy_last: last,
        })
        .collect();
    let j = JourneySummary::from_pairs(pairs, 0).map_err(|e| e.to_string())?;
    ensure!(j.fraction_decreased == 0.5 && j.mean_change == -0.5, "journey {} {}", j.fraction_decreased, j.mean_change);

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    for (exp, pool, matrices) in [
        (Experiment::PointAllocation, game_pool(), vec!["M1", "M3"]),
        (Experiment::Workplace, rater_pool(), vec![]),
    ] {
        let loaded = run(&common::manifest(exp, pool, &matrices, tmp.path()), &exp.to_string())?;
        let first = tmp.path().join(format!("{exp}-first"));
        let second = tmp.path().join(format!("{exp}-second"));
        let files = emit_report(&loaded, &first, ReportOptions::default()).map_err(|e| e.to_string())?;
        emit_report(&loaded, &second, ReportOptions::default()).map_err(|e| e.to_string())?;
        ensure!(!files.is_empty(), "{exp}: no report files");
        for f in files {
            let name = f.file_name().ok_or("unnamed report file")?;
            let (a, b) = (fs::read(&f).map_err(|e| e.to_string())?, fs::read(second.join(name)).map_err(|e| e.to_string())?);
            ensure!(a == b, "{exp}: {name:?} differs between invocations");
        }
    }
    Ok(())
}

fn c9_determinism_resume() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    for (exp, pool, matrices) in [
        (Experiment::PointAllocation, game_pool(), vec!["M2"]),
        (Experiment::Workplace, rater_pool(), vec![]),
    ] {
        let v = common::manifest(exp, pool, &matrices, tmp.path());
        let reference = run(&v, &format!("{exp}-a"))?;
        let again = run(&v, &format!("{exp}-b"))?;
        let bytes = |dir: &std::path::Path| fs::read(dir.join("records.jsonl")).map_err(|e| e.to_string());
        ensure!(bytes(&reference.dir)? == bytes(&again.dir)?, "{exp}: identical manifests differ");

        let id = format!("{exp}-resumed");
        let partial = execute(&v, RunOptions { run_id: Some(id.clone()), stop_after: Some(23), progress: None })
            .map_err(|e| e.to_string())?;
        ensure!(!partial.complete && partial.executed == 23, "{exp}: stop_after gave {}", partial.executed);
        // Simulate a crash mid-write.
        let path = partial.dir.join("records.jsonl");
        let mut torn = fs::read(&path).map_err(|e| e.to_string())?;
        torn.extend_from_slice(br#"{"schema_version":1,"sequence":23,"conversation"#);
        fs::write(&path, torn).map_err(|e| e.to_string())?;

        let resumed = execute(&v, RunOptions { run_id: Some(id), ..Default::default() }).map_err(|e| e.to_string())?;
        ensure!(resumed.complete, "{exp}: resume incomplete");
        ensure!(
            resumed.resumed == 23 && resumed.executed == resumed.planned - 23,
            "{exp}: resumed {} executed {} of {}",
            resumed.resumed,
            resumed.executed,
            resumed.planned
        );
        let loaded = load_run(&resumed.dir).map_err(|e| e.to_string())?;
        let ids: HashSet<&str> = loaded.records.iter().map(|r| r.conversation_id.as_str()).collect();
        ensure!(ids.len() == loaded.records.len(), "{exp}: duplicate records after resume");
        ensure!(bytes(&resumed.dir)? == bytes(&reference.dir)?, "{exp}: resumed run differs from uninterrupted run");
    }
    Ok(())
}

fn c10_remote() -> Check {
    let fast = |server: &StubServer| {
        let mut c = EndpointConfig::new(server.url(), "stub");
        c.initial_backoff_ms = 5;
        c.max_backoff_ms = 20;
        c
    };
    let hello = [ChatMessage::user("hello")];

    let server = StubServer::start(vec![StubResponse::status(500), StubResponse::status(500), StubResponse::completion("hi")])
        .map_err(|e| e.to_string())?;
    let done = RemoteAgent::new("r", fast(&server)).map_err(|e| e.to_string())?.complete(&hello).map_err(|e| e.to_string())?;
    ensure!(done.attempts == 3 && done.text == "hi" && server.hits() == 3, "500,500,200: {done:?}");

    let server = StubServer::start(vec![StubResponse::status(401), StubResponse::completion("no")]).map_err(|e| e.to_string())?;
    let err = RemoteAgent::new("r", fast(&server)).map_err(|e| e.to_string())?.complete(&hello);
    ensure!(
        matches!(&err, Err(e) if e.attempts == 1 && e.status == Some(401)) && server.hits() == 1,
        "401: {err:?}"
    );

    const TOKEN: &str = "tok-acceptance-5e1f0b27";
    std::env::set_var("ENVY_HARNESS_ACCEPTANCE_TOKEN", TOKEN);
    let server = StubServer::start(vec![
        StubResponse::status(503),
        StubResponse::completion(&envy_harness::parsing::render_game_response(OptionId::C, "ok")),
    ])
    .map_err(|e| e.to_string())?;
    let mut cfg = fast(&server);
    cfg.token_env = Some("ENVY_HARNESS_ACCEPTANCE_TOKEN".into());
    let pool = vec![
        AgentSpec::remote("remote", cfg),
        AgentSpec::scripted("b", PolicySpec::constant_choice(OptionId::B)),
    ];
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let loaded = run(&common::manifest(Experiment::PointAllocation, pool, &["M1"], tmp.path()), "remote")?;
    ensure!(
        server.requests().iter().all(|r| r.header("authorization") == Some(&format!("Bearer {TOKEN}"))),
        "token not sent"
    );
    let report = tmp.path().join("report");
    emit_report(&loaded, &report, ReportOptions::default()).map_err(|e| e.to_string())?;
    let mut stack = vec![tmp.path().to_path_buf()];
    let mut files = 0;
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let content = fs::read(&path).map_err(|e| e.to_string())?;
                ensure!(!String::from_utf8_lossy(&content).contains(TOKEN), "token found in {}", path.display());
                files += 1;
            }
        }
    }
    ensure!(files >= 4, "only {files} files inspected");
    Ok(())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("1 always-B reproduces flat M1 terms", c1_always_b),
        ("2 lowercase transcript replay", c2_transcript_replay),
        ("3 conversation and turn counts", c3_counts),
        ("4 terms match exhaustive oracle", c4_oracle),
        ("5 inequity-aversion sanity", c5_inequity_aversion),
        ("6 parser fuzz robustness", c6_parser_fuzz),
        ("7 workplace scoring", c7_workplace_scoring),
        ("8 analysis integrity", c8_analysis),
        ("9 determinism and resume", c9_determinism_resume),
        ("10 remote client contract", c10_remote),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed().as_secs_f64();
        match outcome {
            Ok(()) => println!("PASS criterion {name} ({took:.2}s)"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name} ({took:.2}s): {why}");
            }
        }
    }
    println!("{} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
