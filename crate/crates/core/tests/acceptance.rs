//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Tolerances are fixed here, not tuned per run.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use aiba::client::{HttpTransport, Transport};
use aiba::protocol::personal_info::{is_forbidden_field, AGE_CAP};
use aiba::protocol::wire::SampleUpload;
use aiba::protocol::*;
use aiba::simulator::{run_scenario, verify_report, ScenarioSpec};
use aiba::storage::{census, sha256_hex, ManifestRow, MANIFEST_NAME};
use chrono::{NaiveDate, TimeDelta, TimeZone, Utc};
use common::*;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uuid::Uuid;

type Verdict = Result<String, String>;

const E2E_WALL_LIMIT: Duration = Duration::from_secs(120);
const FAST_LIMIT: Duration = Duration::from_secs(1);
const RESPONSE_LIMIT: Duration = Duration::from_secs(5);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn guided(lengths: &[usize]) -> RuntimeConfig {
    let lists = lengths
        .iter()
        .enumerate()
        .map(|(li, &n)| PromptList::new((0..n).map(|pi| PromptPair::record(format!("l{li}p{pi}"), 1 + pi as u32)).collect()))
        .collect();
    RuntimeConfig {
        lists,
        mode: RecordingMode::Guided,
        selector_string: "pick".into(),
        ..RuntimeConfig::free_recording(7)
    }
}

fn config_grammar() -> Verdict {
    let started = Instant::now();
    let goldens = golden_configs();
    check(goldens.len() >= 12, || format!("only {} golden documents", goldens.len()))?;
    let mut modes = BTreeSet::new();
    let mut errors = BTreeSet::new();
    for g in &goldens {
        match (&g.expect, parse_runtime_config(g.doc.as_bytes(), 7)) {
            (Expect::Ok { mode, prompts, canonical }, Ok(cfg)) => {
                check(cfg.mode == *mode, || format!("{}: mode {:?}", g.name, cfg.mode))?;
                let lens: Vec<usize> = cfg.lists.iter().map(|l| l.len()).collect();
                check(&lens == prompts, || format!("{}: lists {lens:?}", g.name))?;
                let bytes = cfg.to_canonical_bytes();
                if *canonical {
                    check(bytes == g.doc.as_bytes(), || format!("{}: re-serialization differs", g.name))?;
                }
                check(parse_runtime_config(&bytes, 7).as_ref() == Ok(&cfg), || {
                    format!("{}: canonical form does not parse back", g.name)
                })?;
                modes.insert(format!("{mode:?}"));
            }
            (Expect::Err(kind), Err(e)) => {
                check(err_kind(&e) == *kind, || format!("{}: got {e}", g.name))?;
                errors.insert(format!("{kind:?}"));
            }
            (want, got) => return Err(format!("{}: wanted {want:?}, got {got:?}", g.name)),
        }
    }
    check(modes.len() == 3, || format!("modes covered: {modes:?}"))?;
    check(errors.len() == 5, || format!("error kinds covered: {errors:?}"))?;
    let elapsed = started.elapsed();
    check(elapsed < FAST_LIMIT, || format!("took {elapsed:?}"))?;
    Ok(format!("{} documents, 3 modes, 5 error kinds, {elapsed:.2?}", goldens.len()))
}

fn round_robin() -> Verdict {
    let started = Instant::now();
    for len in 1..=8 {
        let cfg = guided(&[len]);
        let mut session = SessionState::new(hash(1), t0());
        let mut status = LocalConfigStatus::default();
        for k in 0..100 {
            let step = next_prompt(&session, &cfg).map_err(|e| e.to_string())?;
            let want = format!("l0p{}", k % len);
            match step {
                PromptStep::Record { text, .. } if text == want => {}
                other => return Err(format!("L={len} k={k}: {other:?}, wanted {want}")),
            }
            (session, status) = register_recording(&session, &status, &cfg, t0() + TimeDelta::seconds(k as i64));
        }
    }
    let elapsed = started.elapsed();
    check(elapsed < FAST_LIMIT, || format!("took {elapsed:?}"))?;
    Ok(format!("L 1..8 x 100 steps, {elapsed:.2?}"))
}

fn counter_conservation() -> Verdict {
    let cfg = guided(&[3]);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut session = SessionState::new(hash(1), t0());
    let mut status = LocalConfigStatus::default();
    // oracle: plain counts of what was done
    let (mut recordings, mut since_reset, mut resets) = (0u64, 0u64, 0u64);
    for step in 0..10_000i64 {
        if rng.gen_bool(0.8) {
            (session, status) = register_recording(&session, &status, &cfg, t0() + TimeDelta::seconds(step));
            recordings += 1;
            since_reset += 1;
        } else {
            status = reset_counts(&status);
            since_reset = 0;
            resets += 1;
        }
        check(status.total_count + status.current_count == recordings, || {
            format!("step {step}: total+current {} != {recordings}", status.total_count + status.current_count)
        })?;
    }
    check(status.current_count == since_reset, || {
        format!("current {} != {since_reset} since last reset", status.current_count)
    })?;
    Ok(format!("10^4 steps, {recordings} recordings, {resets} resets"))
}

fn upload_truth_table() -> Verdict {
    // (dirty, elapsed > reset_time, last_recording set) -> upload
    const TABLE: [(bool, bool, bool, bool); 8] = [
        (false, false, false, false),
        (false, false, true, false),
        (false, true, false, false),
        (false, true, true, true),
        (true, false, false, true),
        (true, false, true, true),
        (true, true, false, true),
        (true, true, true, true),
    ];
    let reset = 30;
    let mut rows = 0;
    for (dirty, elapsed, recorded, want) in TABLE {
        let status = LocalConfigStatus {
            dirty,
            reset_time: reset,
            last_recording_time: recorded.then(t0),
            ..Default::default()
        };
        // strictly more than reset_time on one side, exactly reset_time on the other
        let now = t0() + TimeDelta::minutes(reset as i64) + if elapsed { TimeDelta::seconds(1) } else { TimeDelta::zero() };
        let got = should_upload_status(&status, now);
        check(got == want, || {
            format!("dirty={dirty} elapsed={elapsed} recorded={recorded}: got {got}")
        })?;
        rows += 1;
    }
    Ok(format!("{rows}/8 rows"))
}

fn pii_guard() -> Verdict {
    let schema = covid_question_set();
    let keys = prop_oneof![
        Just("age".to_string()),
        Just("name".to_string()),
        Just("surname".to_string()),
        Just("Birth_Day".to_string()),
        Just("country".to_string()),
        Just("zip".to_string()),
        Just("fever".to_string()),
        "[a-z_]{1,8}",
    ];
    let values = prop_oneof![
        (-10i64..300).prop_map(AnswerValue::Number),
        (0i64..300).prop_map(|n| AnswerValue::Text(n.to_string())),
        "[a-z+ ]{0,6}".prop_map(AnswerValue::Text),
    ];
    let strategy = prop::collection::btree_map(keys, values, 0..8);
    let config = Config {
        cases: 5000,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    let capped = Arc::new(AtomicUsize::new(0));
    let seen_capped = capped.clone();
    let schema_in = schema.clone();
    runner
        .run(&strategy, move |answers| {
            let Ok(out) = validate_personal_info(&answers, &schema_in) else {
                return Ok(());
            };
            for (k, v) in &out {
                if is_forbidden_field(k) {
                    return Err(TestCaseError::fail(format!("forbidden key {k} in output")));
                }
                let numeric = match v {
                    AnswerValue::Number(n) => Some(*n),
                    AnswerValue::Text(t) => t.trim().parse::<i64>().ok(),
                };
                if k == "age" && numeric.is_some_and(|n| n >= AGE_CAP) {
                    return Err(TestCaseError::fail(format!("age {v:?} passed uncapped")));
                }
                if k == "age" && *v == AnswerValue::Text(AGE_CAP_TOKEN.into()) {
                    seen_capped.fetch_add(1, Ordering::Relaxed);
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    check(capped.load(Ordering::Relaxed) > 0, || "the cap token never appeared".into())?;

    let json = serde_json::to_string(&schema).map_err(|e| e.to_string())?;
    let back: PersonalInfoSchema = serde_json::from_str(&json).map_err(|e| e.to_string())?;
    check(back == schema, || "question set does not round-trip".into())?;
    Ok(format!(
        "5000 maps, cap applied {} times, {} questions round-trip",
        capped.load(Ordering::Relaxed),
        schema.questions.len()
    ))
}

async fn eventual_delivery() -> Verdict {
    let s = start_server(&[], &[]).await;
    let phones = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = ScenarioSpec::new(20, 50, 0.3, 42);
    let report = run_scenario(&spec, &s.url(), phones.path()).await.map_err(|e| e.to_string())?;
    let violations = verify_report(&report, &spec, Some(s.data_root()));
    check(violations.is_empty(), || format!("{} violations, first: {}", violations.len(), violations[0]))?;
    let stored = census(s.data_root()).map_err(|e| e.to_string())?;
    let ids: BTreeSet<Uuid> = stored.iter().map(|(_, x)| x.meta.upload.sample_id).collect();
    check(ids.len() == 1000 && stored.len() == 1000, || {
        format!("{} files for {} distinct ids", stored.len(), ids.len())
    })?;
    let wall = Duration::from_secs_f64(report.wall_time);
    check(wall < E2E_WALL_LIMIT, || format!("wall time {wall:?}"))?;
    Ok(format!(
        "1000 distinct stored, 0 duplicate files, {} phone dirs, wall {:.1}s",
        report.per_phone_counts.len(),
        report.wall_time
    ))
}

async fn duplicate_injection() -> Verdict {
    let s = start_server(&[], &[]).await;
    let phones = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut spec = ScenarioSpec::new(10, 30, 0.5, 42);
    spec.ack_drop_rate = 0.3;
    let report = run_scenario(&spec, &s.url(), phones.path()).await.map_err(|e| e.to_string())?;
    check(report.acks_dropped > 0, || "no acknowledgment was dropped".into())?;
    let mut per_id: HashMap<Uuid, usize> = HashMap::new();
    for (_, x) in census(s.data_root()).map_err(|e| e.to_string())? {
        *per_id.entry(x.meta.upload.sample_id).or_default() += 1;
    }
    let extra = per_id.values().filter(|&&n| n != 1).count();
    check(extra == 0, || format!("{extra} ids stored more than once"))?;
    check(per_id.len() == spec.expected_samples(), || {
        format!("{} of {} ids stored", per_id.len(), spec.expected_samples())
    })?;
    let violations = verify_report(&report, &spec, Some(s.data_root()));
    check(violations.is_empty(), || violations.join("; "))?;
    Ok(format!(
        "{} acks dropped, {} resends answered as duplicates, {} ids stored once each",
        report.acks_dropped,
        report.duplicates_detected_on_server,
        per_id.len()
    ))
}

async fn engine_visibility() -> Verdict {
    let s = start_server(&["1=echo"], &[]).await;
    let t = HttpTransport::new(&s.url());
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut slowest = Duration::ZERO;
    let n = 30;
    for i in 0..n {
        let phone = hash(100 + (i % 5) as u128);
        let mut up = upload(phone, rng.gen::<u128>() | 1, t0() + TimeDelta::seconds(i as i64));
        up.engine_number = 1;
        let sent = Instant::now();
        t.send_sample(&up, Some(&audio(i, 512))).await.map_err(|e| e.to_string())?;
        let id = up.sample_id.to_string();
        loop {
            let r = t.fetch_response(&phone).await.map_err(|e| e.to_string())?;
            if r.and_then(|r| r.text).is_some_and(|text| text.contains(&id)) {
                break;
            }
            check(sent.elapsed() < RESPONSE_LIMIT, || format!("no response for {id} within 5 s"))?;
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
        slowest = slowest.max(sent.elapsed());
    }

    let quiet = hash(999);
    let up = upload(quiet, 1, t0());
    t.send_sample(&up, Some(&audio(1, 64))).await.map_err(|e| e.to_string())?;
    s.server.state().dispatcher().wait_idle().await;
    let status = http()
        .get(format!("{}/response/{quiet}", s.url()))
        .send()
        .await
        .map_err(|e| e.to_string())?
        .status();
    check(status == reqwest::StatusCode::NOT_FOUND, || format!("engine 0 phone got {status}"))?;
    Ok(format!("{n} samples answered, slowest {slowest:.2?}; engine 0 -> 404"))
}

async fn export_round_trip() -> Verdict {
    let s = start_server(&[], &[]).await;
    let t = HttpTransport::new(&s.url());
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let days: Vec<NaiveDate> = (0..3)
        .map(|d| NaiveDate::from_ymd_opt(2026, 2, 27).unwrap() + TimeDelta::days(d))
        .collect();
    let mut sent: BTreeMap<NaiveDate, BTreeMap<Uuid, (SampleUpload, Option<String>)>> = BTreeMap::new();
    for i in 0..50u64 {
        let day = days[i as usize % 3];
        let ms = rng.gen_range(0..86_400_000i64);
        let ts = Utc.from_utc_datetime(&day.and_hms_opt(0, 0, 0).unwrap()) + TimeDelta::milliseconds(ms);
        let mut up = upload(hash(1 + rng.gen_range(0..4)), rng.gen::<u128>() | 1, ts);
        let audio = if i % 10 == 9 {
            up.text_input = Some(format!("written answer {i}"));
            None
        } else {
            Some(audio(i, rng.gen_range(100..4000)))
        };
        t.send_sample(&up, audio.as_ref()).await.map_err(|e| e.to_string())?;
        let digest = audio.as_ref().map(|a| sha256_hex(&a.bytes));
        sent.entry(day).or_default().insert(up.sample_id, (up, digest));
    }

    let mut rows_total = 0;
    for day in &days {
        let resp = http()
            .get(format!("{}/export/{day}", s.url()))
            .send()
            .await
            .map_err(|e| e.to_string())?;
        check(resp.status().is_success(), || format!("{day}: {}", resp.status()))?;
        let bytes = resp.bytes().await.map_err(|e| e.to_string())?;
        let mut zip = zip::ZipArchive::new(std::io::Cursor::new(bytes)).map_err(|e| e.to_string())?;
        let mut manifest = String::new();
        zip.by_name(MANIFEST_NAME)
            .map_err(|e| e.to_string())?
            .read_to_string(&mut manifest)
            .map_err(|e| e.to_string())?;
        let expected = &sent[day];
        let mut seen = BTreeSet::new();
        for line in manifest.lines() {
            let row: ManifestRow = serde_json::from_str(line).map_err(|e| format!("{day}: bad row: {e}"))?;
            let id = row.sidecar.upload.sample_id;
            let (up, digest) = expected.get(&id).ok_or_else(|| format!("{day}: foreign sample {id}"))?;
            check(row.sidecar.upload == *up, || format!("{day}: metadata of {id} differs"))?;
            match (&row.archive_path, digest) {
                (Some(path), Some(want)) => {
                    let mut audio = Vec::new();
                    zip.by_name(path)
                        .map_err(|e| e.to_string())?
                        .read_to_end(&mut audio)
                        .map_err(|e| e.to_string())?;
                    check(sha256_hex(&audio) == *want, || format!("{day}: audio of {id} differs"))?;
                }
                (None, None) => {}
                _ => return Err(format!("{day}: audio presence of {id} differs")),
            }
            seen.insert(id);
        }
        check(seen.len() == expected.len() && manifest.lines().count() == expected.len(), || {
            format!("{day}: {} rows for {} samples", manifest.lines().count(), expected.len())
        })?;
        let audio_entries = zip.len() - 1;
        let want_audio = expected.values().filter(|(_, d)| d.is_some()).count();
        check(audio_entries == want_audio, || format!("{day}: {audio_entries} audio entries"))?;
        rows_total += seen.len();
    }
    check(rows_total == 50, || format!("{rows_total} rows across the days"))?;
    Ok(format!(
        "50 samples over 3 days ({}), audio hashes and metadata match",
        days.iter().map(|d| sent[d].len().to_string()).collect::<Vec<_>>().join("/")
    ))
}

async fn live_config_swap() -> Verdict {
    let s = start_server(&[], &[CONFIG_7]).await;
    let v1 = sha256_hex(CONFIG_7.as_bytes());
    let v2 = sha256_hex(CONFIG_7_V2.as_bytes());
    let phones = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut spec = ScenarioSpec::new(20, 50, 1.0, 42);
    spec.config_number = 7;
    spec.config_refresh_every = Some(1);

    let url = s.url();
    let stop = Arc::new(AtomicBool::new(false));
    let hammer = {
        let stop = stop.clone();
        let url = url.clone();
        tokio::spawn(async move {
            let client = http();
            let mut digests = BTreeSet::new();
            let (mut gets, mut failures) = (0usize, 0usize);
            while !stop.load(Ordering::Relaxed) {
                match client.get(format!("{url}/config/7")).send().await {
                    Ok(r) if r.status().is_success() => match r.bytes().await {
                        Ok(b) => {
                            digests.insert(sha256_hex(&b));
                        }
                        Err(_) => failures += 1,
                    },
                    _ => failures += 1,
                }
                gets += 1;
            }
            (gets, failures, digests)
        })
    };

    let sim = {
        let spec = spec.clone();
        let root = phones.path().to_owned();
        let url = url.clone();
        tokio::spawn(async move { run_scenario(&spec, &url, &root).await })
    };
    // swap once a fifth of the run is stored
    let target = spec.expected_samples() / 5;
    let swap_deadline = Instant::now() + E2E_WALL_LIMIT;
    while census(s.data_root()).map(|c| c.len()).unwrap_or(0) < target {
        check(!sim.is_finished(), || "simulator ended before the swap point".into())?;
        check(Instant::now() < swap_deadline, || "swap point never reached".into())?;
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    let running_at_swap = !sim.is_finished();
    let status = http()
        .post(format!("{url}/admin/config"))
        .body(CONFIG_7_V2)
        .send()
        .await
        .map_err(|e| e.to_string())?
        .status();
    check(status.is_success(), || format!("admin swap answered {status}"))?;

    let report = sim.await.map_err(|e| e.to_string())?.map_err(|e| e.to_string())?;
    stop.store(true, Ordering::Relaxed);
    let (gets, hammer_failures, hammer_digests) = hammer.await.map_err(|e| e.to_string())?;

    check(running_at_swap, || "simulator was not running at swap time".into())?;
    check(report.failed_requests == 0 && report.rejected == 0, || {
        format!("{} failed requests, {} rejected samples", report.failed_requests, report.rejected)
    })?;
    check(hammer_failures == 0, || format!("{hammer_failures} of {gets} direct fetches failed"))?;
    let allowed: BTreeSet<String> = [v1.clone(), v2.clone()].into();
    let served: BTreeSet<String> = report.config_digests.union(&hammer_digests).cloned().collect();
    check(served.is_subset(&allowed), || format!("{} unexpected documents served", served.difference(&allowed).count()))?;
    check(served.contains(&v1) && served.contains(&v2), || "only one version was ever served".into())?;
    let violations = verify_report(&report, &spec, Some(s.data_root()));
    check(violations.is_empty(), || violations.join("; "))?;
    Ok(format!(
        "{} simulator fetches + {gets} direct fetches, 0 failures, both versions seen",
        report.config_fetches
    ))
}

#[tokio::main(flavor = "multi_thread")]
async fn main() {
    let mut results: Vec<(&str, Verdict)> = vec![
        ("config grammar golden vectors", config_grammar()),
        ("round-robin prompt order", round_robin()),
        ("counter conservation", counter_conservation()),
        ("upload trigger truth table", upload_truth_table()),
        ("personal info guard", pii_guard()),
    ];
    results.push(("end-to-end eventual delivery", eventual_delivery().await));
    results.push(("duplicate injection via lost acks", duplicate_injection().await));
    results.push(("engine response visibility", engine_visibility().await));
    results.push(("daily export round trip", export_round_trip().await));
    results.push(("live config swap", live_config_swap().await));

    let mut failed = 0;
    for (i, (name, verdict)) in results.iter().enumerate() {
        match verdict {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
