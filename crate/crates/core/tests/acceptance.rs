//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any fails.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chainprobe::config::replay_pool;
use chainprobe::decompose::{build_pair_index, decompose_chain, PairKey};
use chainprobe::gateway::{
    CompletionRequest, Gateway, GatewayPool, ProviderProfile, RecordingProvider, ScriptedProvider,
};
use chainprobe::human_eval::{select_eval_sample, VoteCount};
use chainprobe::metrics::{
    chain_integrity, descriptive_stats, fleiss_kappa, hamming_distance, integrity_matrix, jaccard_dissimilarity,
    pearson_r, LinkVerdicts, MetricsError,
};
use chainprobe::model::{CEPair, CausalChain, Dataset, Event, ModelRef, ProbeKind, Verdict};
use chainprobe::parser::{parse_generation_output, ParseError, MAX_CHAIN_EVENTS};
use chainprobe::pipeline::{Pipeline, RunConfig, RunSettings};
use chainprobe::probe::VerdictTable;
use chainprobe::prompt::{TemplateId, SLOT_CAUSE, SLOT_EFFECT, SLOT_LINK_CAUSE, SLOT_LINK_EFFECT};
use chainprobe::report::MetricsReport;
use chrono::{DateTime, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::statistics::Statistics;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn model(name: &str) -> ModelRef {
    format!("mock:{name}").parse().expect("model ref")
}

fn event(text: &str) -> Event {
    Event::new(text).expect("event")
}

fn chain_of(id: &str, ce: &str, generator: &ModelRef, texts: &[String]) -> CausalChain {
    CausalChain::new(
        id,
        ce,
        generator.clone(),
        texts.iter().map(|t| event(t)).collect(),
        "",
        BTreeSet::new(),
    )
    .expect("chain")
}

fn fixed_clock() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime")
}

/// Every file of a run directory, by relative path.
fn run_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("read run dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).expect("read file"));
            }
        }
    }
    out
}

fn replay_end_to_end() -> Check {
    let started = Instant::now();
    let input = manifest_dir().join("fixtures/demo_pairs.csv");
    let fixtures = manifest_dir().join("fixtures/demo_replay.jsonl");
    let models = vec![model("alpha"), model("beta")];
    let rt = runtime();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut reference: Option<BTreeMap<String, Vec<u8>>> = None;
    let mut runs = 0;
    for parallel in [1usize, 8] {
        for rep in 0..5 {
            let store = tmp.path().join(format!("p{parallel}-r{rep}"));
            let pool = replay_pool(&fixtures, parallel).map_err(|e| e.to_string())?;
            let config = RunConfig {
                input: input.clone(),
                store_root: store,
                settings: RunSettings::new(models.clone(), models.clone()),
                max_parallel: parallel,
                allow_partial: false,
                run_id: None,
            };
            let pipeline = Pipeline::new(config, Arc::new(pool))
                .map_err(|e| e.to_string())?
                .with_clock(fixed_clock);
            let outcome = rt.block_on(pipeline.run_all()).map_err(|e| e.to_string())?;
            ensure!(!outcome.partial, "run was partial");
            let files = run_files(&pipeline.store().run_dir(pipeline.run_id()));
            for required in ["chains.jsonl", "verdicts.jsonl", "reports/metrics.json", "reports/summary.txt"] {
                ensure!(files.contains_key(required), "missing {required}");
            }
            match &reference {
                None => reference = Some(files),
                Some(r) => {
                    ensure!(
                        r.keys().eq(files.keys()),
                        "file sets differ at concurrency {parallel}, run {rep}"
                    );
                    for (name, bytes) in r {
                        ensure!(&files[name] == bytes, "{name} differs at concurrency {parallel}, run {rep}");
                    }
                }
            }
            runs += 1;
        }
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    let n_files = reference.map_or(0, |r| r.len());
    Ok(format!(
        "{runs} runs at concurrency 1 and 8, {n_files} files byte-identical, {:.2} s",
        elapsed.as_secs_f64()
    ))
}

fn decomposition_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let generator = model("g");
    let vocabulary: Vec<String> = (0..40).map(|i| format!("event {i}")).collect();
    let (mut total_links, mut expected_links) = (0usize, 0usize);
    let mut chains = Vec::new();
    for i in 0..1000 {
        let len = rng.gen_range(3..=40);
        let texts: Vec<String> = (0..len).map(|_| vocabulary.choose(&mut rng).unwrap().clone()).collect();
        let chain = chain_of(&format!("c{i}"), "ce", &generator, &texts);
        let links = decompose_chain(&chain).map_err(|e| e.to_string())?;
        let mut brute = Vec::new();
        for t in 0..texts.len() {
            if t + 1 < texts.len() {
                brute.push((t, texts[t].clone(), texts[t + 1].clone()));
            }
        }
        let got: Vec<_> = links
            .iter()
            .map(|l| (l.position, l.cause_event.text.clone(), l.effect_event.text.clone()))
            .collect();
        ensure!(got == brute, "chain {i} differs from adjacent windows");
        ensure!(links.iter().all(|l| l.chain_id == chain.id), "chain id not propagated");
        total_links += links.len();
        expected_links += len - 1;
        chains.push(chain);
    }
    ensure!(total_links == expected_links, "sum of links {total_links} != {expected_links}");
    let index = build_pair_index(chains.iter());
    ensure!(
        index.occurrence_count() == expected_links,
        "index holds {} occurrences",
        index.occurrence_count()
    );
    Ok(format!("1000 chains, {total_links} links = sum(T-1)"))
}

/// κ as an exact rational, or None when chance agreement is 1.
fn kappa_oracle(table: &[Vec<usize>], n: usize) -> Option<f64> {
    let items = table.len() as i128;
    let n = n as i128;
    let s: i128 = table.iter().flatten().map(|&c| (c * c) as i128).sum();
    let (a, b) = (s - items * n, items * n * (n - 1));
    let k = table[0].len();
    let c: i128 = (0..k)
        .map(|j| {
            let col: i128 = table.iter().map(|row| row[j] as i128).sum();
            col * col
        })
        .sum();
    let d = (items * n) * (items * n);
    if c == d {
        return None;
    }
    Some((a * d - c * b) as f64 / (b * (d - c)) as f64)
}

fn verdict(rng: &mut ChaCha8Rng) -> Verdict {
    *[Verdict::Causal, Verdict::NonCausal, Verdict::Invalid].choose(rng).unwrap()
}

fn metric_oracles() -> Check {
    const INSTANCES: usize = 500;
    let mut rng = ChaCha8Rng::seed_from_u64(23);

    for _ in 0..INSTANCES {
        let universe = rng.gen_range(0..30u32);
        let a: BTreeSet<u32> = (0..universe).filter(|_| rng.gen_bool(0.4)).collect();
        let b: BTreeSet<u32> = (0..universe).filter(|_| rng.gen_bool(0.4)).collect();
        let (mut both, mut either) = (0u32, 0u32);
        for x in 0..universe {
            let (ina, inb) = (a.contains(&x), b.contains(&x));
            both += (ina && inb) as u32;
            either += (ina || inb) as u32;
        }
        let want = if either == 0 { 0.0 } else { (either - both) as f64 / either as f64 };
        let got = jaccard_dissimilarity(&a, &b);
        ensure!(got == want, "jaccard {got} != {want} for {a:?} / {b:?}");
    }

    for _ in 0..INSTANCES {
        let n = rng.gen_range(1..50);
        let x: Vec<Verdict> = (0..n).map(|_| verdict(&mut rng)).collect();
        let y: Vec<Verdict> = (0..n).map(|_| verdict(&mut rng)).collect();
        let mut differ = 0;
        for i in 0..n {
            if x[i] != y[i] {
                differ += 1;
            }
        }
        let got = hamming_distance(&x, &y).map_err(|e| e.to_string())?;
        ensure!(got == differ as f64 / n as f64, "hamming {got} != {differ}/{n}");
    }

    let mut worst_r = 0f64;
    let mut worst_p = 0f64;
    for _ in 0..INSTANCES {
        let n = rng.gen_range(3..80);
        let slope = rng.gen_range(-2.0..2.0);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| slope * v + rng.gen_range(-40.0..40.0)).collect();
        let got = pearson_r(&x, &y).map_err(|e| e.to_string())?;
        let r = x.clone().covariance(y.clone()) / (x.clone().std_dev() * y.clone().std_dev());
        let df = (n - 2) as f64;
        let p = if r.abs() >= 1.0 {
            0.0
        } else {
            let t = r * (df / (1.0 - r * r)).sqrt();
            2.0 * StudentsT::new(0.0, 1.0, df).unwrap().sf(t.abs())
        };
        worst_r = worst_r.max((got.r - r).abs());
        worst_p = worst_p.max((got.p_value - p).abs());
        ensure!((got.r - r).abs() <= 1e-9, "r {} vs {r}", got.r);
        ensure!((got.p_value - p).abs() <= 1e-9, "p {} vs {p} (n={n}, r={r})", got.p_value);
        ensure!(got.significant_at_01 == (got.p_value < 0.01), "significance flag");
    }

    let mut kappas = 0;
    for _ in 0..INSTANCES {
        let items = rng.gen_range(1..50);
        let categories = rng.gen_range(2..6);
        let raters = rng.gen_range(2..9);
        let table: Vec<Vec<usize>> = (0..items)
            .map(|_| {
                let mut row = vec![0; categories];
                for _ in 0..raters {
                    row[rng.gen_range(0..categories)] += 1;
                }
                row
            })
            .collect();
        match (fleiss_kappa(&table, raters), kappa_oracle(&table, raters)) {
            (Ok(k), Some(want)) => {
                ensure!((k.kappa - want).abs() <= 1e-9, "kappa {} vs {want}", k.kappa);
                kappas += 1;
            }
            (Err(MetricsError::DegenerateAgreement), None) => {}
            (got, want) => return Err(format!("kappa {got:?} vs oracle {want:?} on {table:?}")),
        }
    }
    ensure!(kappas >= 100, "only {kappas} non-degenerate kappa instances");

    for _ in 0..INSTANCES {
        let n = rng.gen_range(1..60);
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-1e3..1e3)).collect();
        let got = descriptive_stats(&values).map_err(|e| e.to_string())?;
        let mean = values.clone().mean();
        let std = if n == 1 { 0.0 } else { values.clone().std_dev() };
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
        ensure!(got.total == n, "total {} vs {n}", got.total);
        ensure!(close(got.mean, mean), "mean {} vs {mean}", got.mean);
        ensure!(close(got.std, std), "std {} vs {std}", got.std);
        ensure!(got.min == values.clone().min() && got.max == values.clone().max(), "min/max");
    }

    Ok(format!(
        "{INSTANCES} instances per metric ({kappas} kappa); max |dr| {worst_r:.1e}, max |dp| {worst_p:.1e}"
    ))
}

fn integrity_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let generator = model("g");
    let mut sound = 0;
    for i in 0..1000 {
        let len = rng.gen_range(3..12);
        let texts: Vec<String> = (0..len).map(|t| format!("e{i}-{t}")).collect();
        let chain = chain_of(&format!("c{i}"), "ce", &generator, &texts);
        // Bias towards sound links so both outcomes are common.
        let verdicts: BTreeMap<usize, LinkVerdicts> = (0..len - 1)
            .map(|p| {
                let a1 = if rng.gen_bool(0.85) { Verdict::Causal } else { verdict(&mut rng) };
                let a2 = if rng.gen_bool(0.85) { Verdict::NonCausal } else { verdict(&mut rng) };
                (p, LinkVerdicts { a1, a2 })
            })
            .collect();
        let mut brute = true;
        for link in decompose_chain(&chain).map_err(|e| e.to_string())? {
            let v = verdicts[&link.position];
            brute = brute && v.a1 == Verdict::Causal && v.a2 == Verdict::NonCausal;
        }
        let got = chain_integrity(&chain, &verdicts).map_err(|e| e.to_string())?;
        ensure!(got == brute, "chain {i}: {got} vs {brute}");
        sound += got as usize;
        let mut missing = verdicts.clone();
        missing.remove(&rng.gen_range(0..len - 1));
        ensure!(
            matches!(chain_integrity(&chain, &missing), Err(MetricsError::MissingLinkVerdict { .. })),
            "missing verdict not reported"
        );
    }

    // 2x2: generator g0 has one sound chain of two under e0 and two under e1;
    // generator g1 has none of one under e0 and one of one under e1.
    let (g0, g1, e0, e1) = (model("g0"), model("g1"), model("e0"), model("e1"));
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let c00 = chain_of("g0-a", "ce", &g0, &s(&["a", "b", "c"]));
    let c01 = chain_of("g0-b", "ce", &g0, &s(&["a", "d", "c"]));
    let c10 = chain_of("g1-a", "ce", &g1, &s(&["a", "e", "c"]));
    let mut tables = BTreeMap::new();
    let mut table = |g: &ModelRef, e: &ModelRef, chains: &[&CausalChain], broken: &[&str]| {
        let mut t = VerdictTable::default();
        for chain in chains {
            for link in decompose_chain(chain).unwrap() {
                let key = PairKey::of(&link);
                let bad = broken.contains(&link.cause_event.text.as_str());
                t.insert(key.clone(), ProbeKind::A1_Active, if bad { Verdict::Invalid } else { Verdict::Causal });
                t.insert(key, ProbeKind::A2_ReversedActive, Verdict::NonCausal);
            }
        }
        tables.insert((g.label(), e.label()), t);
    };
    table(&g0, &e0, &[&c00, &c01], &["d"]);
    table(&g0, &e1, &[&c00, &c01], &[]);
    table(&g1, &e0, &[&c10], &["e"]);
    table(&g1, &e1, &[&c10], &[]);
    let matrix = integrity_matrix(
        &[(g0, vec![&c00, &c01]), (g1, vec![&c10])],
        &[e0, e1],
        &tables,
    )
    .map_err(|e| e.to_string())?;
    let cells = [(0, 0, 0.5), (1, 0, 1.0), (0, 1, 0.0), (1, 1, 1.0)];
    for (e, g, want) in cells {
        ensure!(matrix.cell(e, g) == Some(want), "cell e{e} g{g} = {:?}, want {want}", matrix.cell(e, g));
    }
    Ok(format!("1000 randomized chains ({sound} sound) match; 2x2 cells 0.5/1/0/1"))
}

const A3_LINKS: usize = 30;

/// Scripted answers: active probes say yes for every third link, and
/// passive probes flip the active answer on the first `k` links.
fn a3_script(k: usize, links: Vec<(String, String)>) -> impl Fn(&CompletionRequest) -> Result<String, chainprobe::gateway::ProviderError> {
    move |request| {
        let slots = &request.prompt.slots;
        if request.prompt.template_id == TemplateId::Gen {
            let (c, e) = (&slots[SLOT_CAUSE], &slots[SLOT_EFFECT]);
            let chains: Vec<String> = (0..A3_LINKS / 3)
                .map(|i| format!("{c} <step> first {i} <step> second {i} <step> {e}"))
                .collect();
            return Ok(chains.join(" <chain> "));
        }
        let (cause, effect) = (&slots[SLOT_LINK_CAUSE], &slots[SLOT_LINK_EFFECT]);
        let forward = (cause, effect);
        let i = links
            .iter()
            .position(|(a, b)| a == forward.0 && b == forward.1)
            .unwrap_or_else(|| panic!("unscripted link {:?} for {:?}", forward, request.prompt.template_id));
        let active = i % 3 == 0;
        let passive = matches!(request.prompt.template_id, TemplateId::A1P | TemplateId::A2P);
        let yes = if passive && i < k { !active } else { active };
        Ok(if yes { "Yes" } else { "No" }.to_string())
    }
}

fn a3_pipeline_check() -> Check {
    let rt = runtime();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let input = tmp.path().join("pairs.csv");
    std::fs::write(&input, "id,cause,effect\nce1,CO2 emissions,Ocean acidification\n").map_err(|e| e.to_string())?;
    let mut links = Vec::new();
    for i in 0..A3_LINKS / 3 {
        let names = ["CO2 emissions".to_string(), format!("first {i}"), format!("second {i}"), "Ocean acidification".into()];
        for w in names.windows(2) {
            links.push((w[0].clone(), w[1].clone()));
        }
    }
    let mut checked = Vec::new();
    for k in [0, 1, 7, A3_LINKS] {
        let dir = tmp.path().join(format!("k{k}"));
        let fixture = dir.join("fixture.jsonl");
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let models = vec![model("g")];
        let config = |store: &str| RunConfig {
            input: input.clone(),
            store_root: dir.join(store),
            settings: RunSettings::new(models.clone(), models.clone()),
            max_parallel: 4,
            allow_partial: false,
            run_id: None,
        };

        // Record scripted answers, then evaluate from the fixture alone.
        let recorder = RecordingProvider::new(Arc::new(ScriptedProvider::new(a3_script(k, links.clone()))), &fixture)
            .map_err(|e| e.to_string())?;
        let gateway = Gateway::new(ProviderProfile::replay(4), Arc::new(recorder)).map_err(|e| e.to_string())?;
        let recording = Pipeline::new(config("record"), Arc::new(GatewayPool::single(Arc::new(gateway))))
            .map_err(|e| e.to_string())?;
        rt.block_on(recording.run_all()).map_err(|e| e.to_string())?;

        let pool = replay_pool(&fixture, 4).map_err(|e| e.to_string())?;
        let replay = Pipeline::new(config("replay"), Arc::new(pool)).map_err(|e| e.to_string())?;
        rt.block_on(replay.run_all()).map_err(|e| e.to_string())?;
        let path = replay.store().run_dir(replay.run_id()).join("reports/metrics.json");
        let report: MetricsReport =
            serde_json::from_str(&std::fs::read_to_string(path).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;

        let active: HashSet<usize> = (0..A3_LINKS).filter(|i| i % 3 == 0).collect();
        let passive: HashSet<usize> = (0..A3_LINKS).filter(|&i| (i % 3 == 0) != (i < k)).collect();
        let union = active.union(&passive).count();
        let inter = active.intersection(&passive).count();
        let jaccard = if union == 0 { 0.0 } else { (union - inter) as f64 / union as f64 };
        let summary = &report.probing[0];
        ensure!(summary.position.len() == 2, "expected A1 and A2 comparisons");
        for c in &summary.position {
            ensure!(c.n == A3_LINKS, "n = {}", c.n);
            ensure!(
                c.hamming == Some(k as f64 / A3_LINKS as f64),
                "{:?}/{:?}: hamming {:?} != {k}/{A3_LINKS}",
                c.active,
                c.passive,
                c.hamming
            );
            // Reversed probes answer with the same pattern, so both framings share the sets.
            ensure!(c.jaccard == Some(jaccard), "jaccard {:?} != {jaccard}", c.jaccard);
        }
        checked.push(format!("k={k}"));
    }
    Ok(format!("n={A3_LINKS}, {}: hamming = k/n, jaccard from sets", checked.join(" ")))
}

fn parser_corpus() -> Vec<(String, String)> {
    let (c, e) = ("Deforestation", "Nutrient loss in the soils");
    let mut cases: Vec<(String, String)> = Vec::new();
    let mut add = |name: &str, raw: String| cases.push((name.to_string(), raw));
    let ok = format!("{c} <step> loss of tree cover <step> soil erosion <step> {e}");
    add("clean single chain", ok.clone());
    add("clean two chains", format!("{ok} <chain> {c} <step> less leaf litter <step> {e}"));
    add("preamble", format!("Sure! Here are the causal chains:\n{ok}"));
    add("trailing prose", format!("{ok}\n\nThese chains show how deforestation harms soils."));
    add("preamble and trailing prose", format!("Here you go:\n{ok}\nHope this helps!"));
    add("numbered list", format!("1. {ok}\n2. {c} <step> runoff <step> {e}"));
    add("chain labels", format!("Chain 1: {ok}\n<chain>\nChain 2: {c} <step> runoff <step> {e}"));
    add("step labels", format!("Step 1: {c} <step> Step 2: soil erosion <step> Step 3: {e}"));
    add("bulleted list", format!("- {ok}\n- {c} <step> runoff <step> {e}"));
    add("missing head anchor", format!("loss of tree cover <step> soil erosion <step> {e}"));
    add("missing tail anchor", format!("{c} <step> loss of tree cover <step> soil erosion"));
    add("missing both anchors", "loss of tree cover <step> soil erosion <step> runoff".into());
    add("reversed anchors", format!("{e} <step> soil erosion <step> {c}"));
    add("anchors with case and punctuation", format!("deforestation. <step> soil erosion <step> NUTRIENT LOSS IN THE SOILS!"));
    add("doubled step separators", format!("{c} <step><step> soil erosion <step> {e}"));
    add("doubled chain separators", format!("{ok} <chain><chain> {ok}"));
    add("nested separators", format!("{c} <step> <chain> <step> soil erosion <step> {e}"));
    add("separator case and spacing", format!("{c} < STEP > soil erosion <Step> {e} < chain > {ok}"));
    add("closing tags", format!("{c} </step> soil erosion </step> {e}"));
    add("no spaces around separators", format!("{c}<step>soil erosion<step>{e}"));
    add("leading chain separator", format!("<chain> {ok}"));
    add("trailing step separator", format!("{ok} <step>"));
    add("only a chain separator", "<chain>".into());
    add("only a step separator", "<step>".into());
    add("empty output", String::new());
    add("whitespace only", "   \n\t  \n".into());
    add("refusal", "I'm sorry, but I can't help with that request.".into());
    add("arrows instead of tokens", format!("{c} -> soil erosion -> {e}"));
    add("newline chains without chain token", format!("{ok}\n{c} <step> runoff <step> nutrient leaching <step> {e}"));
    add("too short chain", format!("{c} <step> {e}"));
    add("repeated event", format!("{c} <step> erosion <step> erosion <step> {e}"));
    add("markdown emphasis", format!("**{c}** <step> *soil erosion* <step> **{e}**"));
    add("code fence", format!("```\n{ok}\n```"));
    add("json wrapper", format!("{{\"chains\": [\"{ok}\"]}}"));
    add("unfilled template braces", "{E_c} <step> something <step> {E_f}".into());
    add("unicode events", format!("{c} <step> érosion des sols <step> 土壌流出 <step> {e}"));
    add("emoji", format!("{c} <step> 🌳 loss <step> {e}"));
    add("combining characters", format!("{c} <step> soil ero\u{301}sion <step> {e}"));
    add("control characters", format!("{c} <step> soil\u{0} erosion\u{7} <step> {e}"));
    add("crlf line endings", format!("{ok}\r\n<chain>\r\n{c} <step> runoff <step> {e}\r\n"));
    add("tabs around separators", format!("{c}\t<step>\tsoil erosion\t<step>\t{e}"));
    add("html entities", format!("{c} &lt;step&gt; soil erosion &lt;step&gt; {e}"));
    add("very long event", format!("{c} <step> {} <step> {e}", "very ".repeat(2000)));
    add("many empty steps", "<step> ".repeat(1000));
    add("hundred chains", vec![ok.clone(); 100].join(" <chain> "));
    add("quotes in events", format!("\"{c}\" <step> 'soil erosion' <step> \"{e}\""));
    let middle: Vec<String> = (1..=521).map(|i| format!("intermediate event {i}")).collect();
    add("degenerate 523-step chain", format!("{c} <step> {} <step> {e}", middle.join(" <step> ")));
    let longer: Vec<String> = (1..=MAX_CHAIN_EVENTS + 50).map(|i| format!("step {i}")).collect();
    add("chain above the event cap", format!("{c} <step> {} <step> {e}", longer.join(" <step> ")));
    add("looping chain", format!("{c} <step> a <step> b <step> a <step> b <step> {e}"));
    add("mixed framing", format!("Okay.\n1) {ok}\n\n2) {c} <step> runoff\n\nDone."));
    cases
}

fn parser_robustness() -> Check {
    let ce = CEPair::new("ce3", "Deforestation", "Nutrient loss in the soils", Dataset::PolarIs4CAUS)
        .map_err(|e| e.to_string())?;
    let generator = model("g");
    let corpus = parser_corpus();
    ensure!(corpus.len() == 50, "corpus has {} cases", corpus.len());
    let (mut with_chains, mut no_chains) = (0, 0);
    let mut longest = 0;
    for (name, raw) in &corpus {
        let outcome = catch_unwind(AssertUnwindSafe(|| parse_generation_output(raw, &ce, &generator)))
            .map_err(|_| format!("parser panicked on {name:?}"))?;
        match outcome {
            Ok(set) => {
                ensure!(
                    !set.chains.is_empty() || !set.issues.is_empty(),
                    "{name:?}: no chains and no issue"
                );
                with_chains += !set.chains.is_empty() as usize;
                no_chains += set.chains.is_empty() as usize;
                longest = longest.max(set.chains.iter().map(|c| c.len()).max().unwrap_or(0));
                if name.starts_with("degenerate") {
                    ensure!(
                        set.chains.len() == 1 && set.chains[0].len() == 523,
                        "{name:?}: {:?} events",
                        set.chains.iter().map(|c| c.len()).collect::<Vec<_>>()
                    );
                }
            }
            Err(ParseError::NoChainsFound { .. }) => no_chains += 1,
        }
    }
    Ok(format!(
        "50 cases, 0 panics: {with_chains} with chains, {no_chains} reported as issues; longest {longest} events"
    ))
}

struct SynthChain {
    id: String,
    ce: String,
    links: usize,
    maintained: usize,
}

fn selection_oracle(chains: &[SynthChain], total: usize) -> BTreeMap<String, (String, String, usize, usize, usize)> {
    let mut best = BTreeMap::new();
    for m in chains {
        for v in chains {
            if m.ce != v.ce || 2 * m.maintained <= total || 2 * (total - v.maintained) <= total {
                continue;
            }
            let key = (
                std::cmp::Reverse(m.maintained),
                std::cmp::Reverse(total - v.maintained),
                m.links.abs_diff(v.links),
                m.id.clone(),
                v.id.clone(),
            );
            let entry = best.entry(m.ce.clone()).or_insert_with(|| key.clone());
            if key < *entry {
                *entry = key;
            }
        }
    }
    best.into_iter()
        .map(|(ce, (m, v, d, mid, vid))| (ce, (mid, vid, m.0, v.0, d)))
        .collect()
}

fn selection_property() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let generator = model("g");
    let evaluators = 7;
    let mut trials = 0;
    for trial in 0..200 {
        let n_ce = rng.gen_range(18..30);
        let mut synth = Vec::new();
        for ce in 0..n_ce {
            for j in 0..rng.gen_range(1..8) {
                synth.push(SynthChain {
                    id: format!("t{trial}-ce{ce:02}-c{j}"),
                    ce: format!("ce{ce:02}"),
                    links: rng.gen_range(2..9),
                    maintained: rng.gen_range(0..=evaluators),
                });
            }
        }
        let chains: Vec<CausalChain> = synth
            .iter()
            .map(|s| {
                let texts: Vec<String> = (0..=s.links).map(|t| format!("{} {t}", s.id)).collect();
                chain_of(&s.id, &s.ce, &generator, &texts)
            })
            .collect();
        let refs: Vec<&CausalChain> = chains.iter().collect();
        let votes: BTreeMap<String, VoteCount> = synth
            .iter()
            .map(|s| (s.id.clone(), VoteCount { maintained: s.maintained, total: evaluators }))
            .collect();
        let oracle = selection_oracle(&synth, evaluators);
        let samples = match select_eval_sample(&refs, &votes, 18) {
            Ok(s) => s,
            Err(chainprobe::human_eval::HumanEvalError::InsufficientEligiblePairs { found, samples, .. }) => {
                ensure!(found == oracle.len() && found < 18, "found {found}, oracle {}", oracle.len());
                samples
            }
            Err(e) => return Err(e.to_string()),
        };
        for s in &samples {
            let (mid, vid, mv, vv, d) = &oracle[&s.ce_pair_id];
            ensure!(
                (&s.maintained_chain_id, &s.violated_chain_id, s.agreement_scores, s.length_delta)
                    == (mid, vid, (*mv, *vv), *d),
                "trial {trial} {}: got {s:?}, oracle {:?}",
                s.ce_pair_id,
                oracle[&s.ce_pair_id]
            );
        }
        let mut ranked: Vec<_> = oracle.iter().map(|(ce, (_, _, m, v, d))| (std::cmp::Reverse(m + v), *d, ce.clone())).collect();
        ranked.sort();
        let want: Vec<&String> = ranked.iter().take(18).map(|r| &r.2).collect();
        let got: Vec<&String> = samples.iter().map(|s| &s.ce_pair_id).collect();
        ensure!(got == want, "trial {trial}: ranking differs");
        trials += 1;
    }

    // Every CE pair eligible: 18 pairs give 36 distinct chains.
    let mut synth = Vec::new();
    for ce in 0..24 {
        for (j, maintained) in [7, 0, rng.gen_range(0..=7)].into_iter().enumerate() {
            synth.push(SynthChain {
                id: format!("full-ce{ce:02}-c{j}"),
                ce: format!("ce{ce:02}"),
                links: rng.gen_range(2..9),
                maintained,
            });
        }
    }
    let chains: Vec<CausalChain> = synth
        .iter()
        .map(|s| {
            let texts: Vec<String> = (0..=s.links).map(|t| format!("{} {t}", s.id)).collect();
            chain_of(&s.id, &s.ce, &generator, &texts)
        })
        .collect();
    let refs: Vec<&CausalChain> = chains.iter().collect();
    let votes: BTreeMap<String, VoteCount> = synth
        .iter()
        .map(|s| (s.id.clone(), VoteCount { maintained: s.maintained, total: 7 }))
        .collect();
    let samples = select_eval_sample(&refs, &votes, 18).map_err(|e| e.to_string())?;
    let ids: BTreeSet<&String> = samples
        .iter()
        .flat_map(|s| [&s.maintained_chain_id, &s.violated_chain_id])
        .collect();
    ensure!(samples.len() == 18 && ids.len() == 36, "{} samples, {} chains", samples.len(), ids.len());
    Ok(format!("{trials} synthetic vote tables match the brute-force argmax; n_ce=18 -> 36 chains"))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 7] = [
        ("replay end-to-end determinism", replay_end_to_end),
        ("decomposition oracle", decomposition_oracle),
        ("metric oracles", metric_oracles),
        ("integrity oracle", integrity_oracle),
        ("A3 pipeline check", a3_pipeline_check),
        ("parser robustness", parser_robustness),
        ("sample selection", selection_property),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let result = catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
