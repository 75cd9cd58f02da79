//! Metric reports computed from stored run records.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::decompose::PairIndex;
use crate::metrics::{
    chain_link_verdicts, chain_quality_correlations, descriptive_stats, hamming_distance, integrity_matrix,
    jaccard_dissimilarity, pearson_r, yes_rate, Analysis, ChainQualityReport, DescriptiveStats, IntegrityMatrix,
    MetricsError, YesRate,
};
use crate::model::{CEPair, CausalChain, ChainFlag, ModelRef, ProbeKind, Verdict};
use crate::parser::{IssueCode, ParsedChainSet};
use crate::pipeline::{PipelineError, RunSettings, VerdictRecord};
use crate::probe::{ProbeResult, VerdictTable};
use crate::store::Store;

pub struct ReportInputs<'a> {
    pub run_id: &'a str,
    pub settings: &'a RunSettings,
    pub ce_pairs: &'a [CEPair],
    pub chain_sets: &'a BTreeMap<(String, String), ParsedChainSet>,
    pub pairs: &'a BTreeMap<String, PairIndex>,
    pub verdicts: &'a [VerdictRecord],
    /// Drop chains lacking verdicts instead of failing.
    pub allow_incomplete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSummary {
    pub model: ModelRef,
    pub ce_pairs: usize,
    pub ce_pairs_without_chains: usize,
    /// Structurally valid chains.
    pub chains: usize,
    pub structurally_invalid: usize,
    pub anchor_repaired: usize,
    pub with_repeated_events: usize,
    /// Chains that were decomposed and probed.
    pub eligible_chains: usize,
    pub chains_per_ce: Option<DescriptiveStats>,
    pub links_per_chain: Option<DescriptiveStats>,
    /// Per CE pair: chain count vs mean chain length.
    pub chains_vs_length: Analysis,
    pub unique_links: usize,
    pub link_occurrences: usize,
    pub issue_counts: BTreeMap<IssueCode, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionComparison {
    pub active: ProbeKind,
    pub passive: ProbeKind,
    /// Links with both verdicts.
    pub n: usize,
    pub jaccard: Option<f64>,
    pub hamming: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub generator: ModelRef,
    pub evaluator: ModelRef,
    pub yes_rates: Vec<YesRate>,
    pub position: Vec<PositionComparison>,
    pub missing_verdicts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegritySection {
    pub matrix: Option<IntegrityMatrix>,
    /// Chains left out because some verdict was missing.
    pub excluded_chains: usize,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainQualityEntry {
    pub generator: ModelRef,
    pub evaluator: ModelRef,
    pub correlations: ChainQualityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run_id: String,
    pub generators: Vec<GeneratorSummary>,
    pub probing: Vec<ProbeSummary>,
    pub integrity: IntegritySection,
    pub chain_quality: Vec<ChainQualityEntry>,
}

fn as_result(r: &VerdictRecord) -> ProbeResult {
    ProbeResult {
        pair_key: r.pair_key.clone(),
        probe: r.probe,
        evaluator_model: r.evaluator_model.clone(),
        verdict: r.verdict,
        raw_answer: r.raw_answer.clone(),
        cached: false,
    }
}

type CellKey = (String, String);

/// Verdicts per `(generator label, evaluator label)`.
pub fn verdict_tables(verdicts: &[VerdictRecord]) -> BTreeMap<CellKey, VerdictTable> {
    let mut tables: BTreeMap<CellKey, VerdictTable> = BTreeMap::new();
    for r in verdicts {
        tables
            .entry((r.generator_model.label(), r.evaluator_model.label()))
            .or_default()
            .insert(r.pair_key.clone(), r.probe, r.verdict);
    }
    tables
}

fn generator_summary(inputs: &ReportInputs, generator: &ModelRef) -> GeneratorSummary {
    let sets: Vec<&ParsedChainSet> = inputs
        .ce_pairs
        .iter()
        .filter_map(|ce| inputs.chain_sets.get(&(ce.id.clone(), generator.label())))
        .collect();
    let all: Vec<&CausalChain> = sets.iter().flat_map(|s| s.chains.iter()).collect();
    let valid: Vec<&CausalChain> = all.iter().copied().filter(|c| c.is_structurally_valid()).collect();
    let per_ce: Vec<f64> = sets.iter().map(|s| s.valid_chains().count() as f64).collect();
    let links: Vec<f64> = valid.iter().map(|c| c.chain_length() as f64).collect();
    let (mut ce_counts, mut ce_means) = (Vec::new(), Vec::new());
    for s in &sets {
        let lens: Vec<usize> = s.valid_chains().map(CausalChain::chain_length).collect();
        if !lens.is_empty() {
            ce_counts.push(lens.len() as f64);
            ce_means.push(lens.iter().sum::<usize>() as f64 / lens.len() as f64);
        }
    }
    let chains_vs_length = match pearson_r(&ce_counts, &ce_means) {
        Ok(result) => Analysis::Computed { result },
        Err(e) => Analysis::Unavailable {
            code: e.code().into(),
            reason: e.to_string(),
        },
    };
    let mut issue_counts = BTreeMap::new();
    for issue in sets.iter().flat_map(|s| s.issues.iter()) {
        *issue_counts.entry(issue.code).or_insert(0) += 1;
    }
    let index = inputs.pairs.get(&generator.label());
    GeneratorSummary {
        model: generator.clone(),
        ce_pairs: sets.len(),
        ce_pairs_without_chains: per_ce.iter().filter(|&&n| n == 0.0).count(),
        chains: valid.len(),
        structurally_invalid: all.len() - valid.len(),
        anchor_repaired: valid.iter().filter(|c| c.is_anchor_repaired()).count(),
        with_repeated_events: valid.iter().filter(|c| c.has_flag(ChainFlag::ContainsRepeatedEvent)).count(),
        eligible_chains: valid.iter().filter(|c| inputs.settings.is_eligible(c)).count(),
        chains_per_ce: descriptive_stats(&per_ce).ok(),
        links_per_chain: descriptive_stats(&links).ok(),
        chains_vs_length,
        unique_links: index.map_or(0, PairIndex::unique_count),
        link_occurrences: index.map_or(0, PairIndex::occurrence_count),
        issue_counts,
    }
}

fn probe_summary(
    inputs: &ReportInputs,
    generator: &ModelRef,
    evaluator: &ModelRef,
    records: &[&VerdictRecord],
    table: &VerdictTable,
) -> ProbeSummary {
    let probes = &inputs.settings.probes;
    let mut yes_rates = Vec::new();
    for &kind in probes {
        let results: Vec<ProbeResult> = records.iter().filter(|r| r.probe == kind).map(|r| as_result(r)).collect();
        if let Ok(rate) = yes_rate(&results) {
            yes_rates.push(rate);
        }
    }
    let index = inputs.pairs.get(&generator.label());
    let keys: Vec<_> = index.map(|i| i.records().iter().map(|r| r.key.clone()).collect()).unwrap_or_default();
    let mut position = Vec::new();
    for (active, passive) in [
        (ProbeKind::A1_Active, ProbeKind::A1_Passive),
        (ProbeKind::A2_ReversedActive, ProbeKind::A2_ReversedPassive),
    ] {
        if !(probes.contains(&active) && probes.contains(&passive)) {
            continue;
        }
        let (mut va, mut vp) = (Vec::new(), Vec::new());
        let (mut ya, mut yp) = (BTreeSet::new(), BTreeSet::new());
        for key in &keys {
            if let (Some(a), Some(p)) = (table.get(key, active), table.get(key, passive)) {
                va.push(a);
                vp.push(p);
                if a == Verdict::Causal {
                    ya.insert(key.clone());
                }
                if p == Verdict::Causal {
                    yp.insert(key.clone());
                }
            }
        }
        position.push(PositionComparison {
            active,
            passive,
            n: va.len(),
            jaccard: (!va.is_empty()).then(|| jaccard_dissimilarity(&ya, &yp)),
            hamming: hamming_distance(&va, &vp).ok(),
        });
    }
    let missing_verdicts = keys.len() * probes.len()
        - keys
            .iter()
            .map(|k| probes.iter().filter(|&&p| table.get(k, p).is_some()).count())
            .sum::<usize>();
    ProbeSummary {
        generator: generator.clone(),
        evaluator: evaluator.clone(),
        yes_rates,
        position,
        missing_verdicts,
    }
}

pub fn build_report(inputs: &ReportInputs) -> Result<MetricsReport, MetricsError> {
    let settings = inputs.settings;
    let mut by_cell: BTreeMap<CellKey, Vec<&VerdictRecord>> = BTreeMap::new();
    for r in inputs.verdicts {
        by_cell
            .entry((r.generator_model.label(), r.evaluator_model.label()))
            .or_default()
            .push(r);
    }
    let tables = verdict_tables(inputs.verdicts);
    let empty = VerdictTable::default();

    let generators: Vec<GeneratorSummary> = settings.generators.iter().map(|g| generator_summary(inputs, g)).collect();

    let mut probing = Vec::new();
    for g in &settings.generators {
        for e in &settings.evaluators {
            let key = (g.label(), e.label());
            let records = by_cell.get(&key).map(Vec::as_slice).unwrap_or(&[]);
            probing.push(probe_summary(inputs, g, e, records, tables.get(&key).unwrap_or(&empty)));
        }
    }

    let eligible: Vec<(ModelRef, Vec<&CausalChain>)> = settings
        .generators
        .iter()
        .map(|g| {
            let chains = inputs
                .ce_pairs
                .iter()
                .filter_map(|ce| inputs.chain_sets.get(&(ce.id.clone(), g.label())))
                .flat_map(|s| s.chains.iter())
                .filter(|c| settings.is_eligible(c))
                .collect();
            (g.clone(), chains)
        })
        .collect();

    let has_integrity_probes =
        settings.probes.contains(&ProbeKind::A1_Active) && settings.probes.contains(&ProbeKind::A2_ReversedActive);
    let mut integrity = IntegritySection {
        matrix: None,
        excluded_chains: 0,
        note: None,
    };
    let mut chain_quality = Vec::new();
    if !has_integrity_probes {
        integrity.note = Some("integrity needs both A1_Active and A2_ReversedActive probes".into());
    } else {
        // Chains with complete verdicts under every evaluator.
        let covered: Vec<(ModelRef, Vec<&CausalChain>)> = eligible
            .iter()
            .map(|(g, chains)| {
                let keep: Vec<&CausalChain> = chains
                    .iter()
                    .copied()
                    .filter(|c| {
                        settings.evaluators.iter().all(|e| {
                            let t = tables.get(&(g.label(), e.label())).unwrap_or(&empty);
                            chain_link_verdicts(c, t).is_ok()
                        })
                    })
                    .collect();
                (g.clone(), keep)
            })
            .collect();
        let excluded: usize = eligible.iter().zip(&covered).map(|((_, a), (_, b))| a.len() - b.len()).sum();
        let chains = if inputs.allow_incomplete { &covered } else { &eligible };
        integrity.matrix = Some(integrity_matrix(chains, &settings.evaluators, &tables)?);
        if inputs.allow_incomplete {
            integrity.excluded_chains = excluded;
        }

        for (g, gen_chains) in chains {
            let mut groups: Vec<(String, Vec<&CausalChain>)> = Vec::new();
            for ce in inputs.ce_pairs {
                let members: Vec<&CausalChain> =
                    gen_chains.iter().copied().filter(|c| c.ce_pair_id == ce.id).collect();
                groups.push((ce.id.clone(), members));
            }
            for e in &settings.evaluators {
                let table = tables.get(&(g.label(), e.label())).unwrap_or(&empty);
                chain_quality.push(ChainQualityEntry {
                    generator: g.clone(),
                    evaluator: e.clone(),
                    correlations: chain_quality_correlations(&groups, table)?,
                });
            }
        }
    }

    Ok(MetricsReport {
        run_id: inputs.run_id.to_string(),
        generators,
        probing,
        integrity,
        chain_quality,
    })
}

fn table(header: Vec<String>, rows: Vec<Vec<String>>) -> String {
    let ncol = header.len();
    let mut widths = vec![0; ncol];
    for row in std::iter::once(&header).chain(rows.iter()) {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let line = |row: &Vec<String>| {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{c:<w$}", w = widths[i]))
            .collect();
        cells.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(&header);
    for row in &rows {
        out.push_str(&line(row));
    }
    out
}

fn num(v: f64) -> String {
    format!("{v:.2}")
}

fn rate(v: f64) -> String {
    format!("{v:.4}")
}

fn opt<T>(v: Option<T>, f: impl Fn(T) -> String) -> String {
    v.map(f).unwrap_or_else(|| "/".into())
}

/// `r` with a trailing `*` when significant at .01, or `/` when not computable.
fn corr(a: &Analysis) -> String {
    match a.result() {
        Some(r) => format!("{:.2}{}", r.r, if r.significant_at_01 { "*" } else { "" }),
        None => "/".into(),
    }
}

fn stats_rows(label: &str, stats: Vec<Option<DescriptiveStats>>) -> Vec<Vec<String>> {
    let field = |name: &str, f: fn(&DescriptiveStats) -> f64| {
        let mut row = vec![format!(" -- {name}")];
        row.extend(stats.iter().map(|s| opt(s.as_ref(), |s| num(f(s)))));
        row
    };
    vec![
        vec![label.to_string()],
        field("mean", |s| s.mean),
        field("std", |s| s.std),
        field("min", |s| s.min),
        field("max", |s| s.max),
    ]
}

/// Plain-text tables for a report.
pub fn render_text(report: &MetricsReport) -> String {
    let mut out = format!("Run {}\n\nGeneration\n", report.run_id);
    let gens = &report.generators;
    let mut header = vec![String::new()];
    header.extend(gens.iter().map(|g| g.model.label()));
    let count_row = |label: &str, f: fn(&GeneratorSummary) -> usize| {
        let mut row = vec![label.to_string()];
        row.extend(gens.iter().map(|g| f(g).to_string()));
        row
    };
    let mut rows = vec![
        count_row("# CE pairs", |g| g.ce_pairs),
        count_row("# chains", |g| g.chains),
    ];
    rows.extend(stats_rows("Chains per CE", gens.iter().map(|g| g.chains_per_ce).collect()));
    let mut r_row = vec!["Pearson's r".to_string()];
    r_row.extend(gens.iter().map(|g| corr(&g.chains_vs_length)));
    rows.push(r_row);
    rows.extend(stats_rows("Links per chain", gens.iter().map(|g| g.links_per_chain).collect()));
    rows.push(count_row("# unique links", |g| g.unique_links));
    rows.push(count_row("# link occurrences", |g| g.link_occurrences));
    rows.push(count_row("# anchor-repaired", |g| g.anchor_repaired));
    rows.push(count_row("# repeated events", |g| g.with_repeated_events));
    rows.push(count_row("# invalid", |g| g.structurally_invalid));
    rows.push(count_row("# without chains", |g| g.ce_pairs_without_chains));
    out.push_str(&table(header, rows));

    let kinds: Vec<ProbeKind> = {
        let set: BTreeSet<ProbeKind> = report
            .probing
            .iter()
            .flat_map(|p| p.yes_rates.iter().map(|y| y.probe))
            .collect();
        ProbeKind::ALL.into_iter().filter(|k| set.contains(k)).collect()
    };
    out.push_str("\nYes-rates\n");
    let mut header = vec!["generator".to_string(), "evaluator".to_string()];
    header.extend(kinds.iter().map(|k| k.as_str().to_string()));
    header.push("missing".into());
    let rows = report
        .probing
        .iter()
        .map(|p| {
            let mut row = vec![p.generator.label(), p.evaluator.label()];
            row.extend(kinds.iter().map(|k| {
                opt(p.yes_rates.iter().find(|y| y.probe == *k), |y| rate(y.rate))
            }));
            row.push(p.missing_verdicts.to_string());
            row
        })
        .collect();
    out.push_str(&table(header, rows));

    out.push_str("\nPosition heuristics\n");
    let header = ["generator", "evaluator", "active", "passive", "n", "jaccard", "hamming"]
        .map(String::from)
        .to_vec();
    let rows = report
        .probing
        .iter()
        .flat_map(|p| {
            p.position.iter().map(move |c| {
                vec![
                    p.generator.label(),
                    p.evaluator.label(),
                    c.active.as_str().to_string(),
                    c.passive.as_str().to_string(),
                    c.n.to_string(),
                    opt(c.jaccard, rate),
                    opt(c.hamming, rate),
                ]
            })
        })
        .collect();
    out.push_str(&table(header, rows));

    out.push_str("\nIntegrity (rows: evaluators, columns: generators)\n");
    match &report.integrity.matrix {
        Some(m) => {
            let mut header = vec![String::new()];
            header.extend(m.generators.iter().map(ModelRef::label));
            let rows = m
                .evaluators
                .iter()
                .enumerate()
                .map(|(ei, e)| {
                    let mut row = vec![e.label()];
                    row.extend((0..m.generators.len()).map(|gi| opt(m.cell(ei, gi), rate)));
                    row
                })
                .collect();
            out.push_str(&table(header, rows));
            if report.integrity.excluded_chains > 0 {
                out.push_str(&format!(
                    "{} chains without complete verdicts were left out\n",
                    report.integrity.excluded_chains
                ));
            }
        }
        None => out.push_str(&format!("{}\n", report.integrity.note.as_deref().unwrap_or("not computed"))),
    }

    if !report.chain_quality.is_empty() {
        out.push_str("\nChain quality correlations (r, * for p < .01)\n");
        let header = [
            "generator",
            "evaluator",
            "len~A1",
            "len~A2",
            "chains~A1",
            "chains~A2",
            "chains~len",
        ]
        .map(String::from)
        .to_vec();
        let rows = report
            .chain_quality
            .iter()
            .map(|c| {
                let q = &c.correlations;
                vec![
                    c.generator.label(),
                    c.evaluator.label(),
                    corr(&q.length_vs_causal_a1),
                    corr(&q.length_vs_causal_a2),
                    corr(&q.chains_vs_causal_a1),
                    corr(&q.chains_vs_causal_a2),
                    corr(&q.chains_vs_mean_length),
                ]
            })
            .collect();
        out.push_str(&table(header, rows));
    }
    out
}

/// Long-format CSV of every correlation analysis.
pub fn correlations_csv(report: &MetricsReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["generator", "evaluator", "analysis", "status", "r", "p_value", "n", "significant_at_01"])
        .expect("in-memory write");
    let mut emit = |g: &str, e: &str, name: &str, a: &Analysis| {
        let row: Vec<String> = match a {
            Analysis::Computed { result } => vec![
                g.into(),
                e.into(),
                name.into(),
                "computed".into(),
                result.r.to_string(),
                result.p_value.to_string(),
                result.n.to_string(),
                result.significant_at_01.to_string(),
            ],
            Analysis::Unavailable { code, .. } => {
                vec![g.into(), e.into(), name.into(), code.clone(), String::new(), String::new(), String::new(), String::new()]
            }
        };
        w.write_record(row).expect("in-memory write");
    };
    for g in &report.generators {
        emit(&g.model.label(), "", "chains_vs_length", &g.chains_vs_length);
    }
    for c in &report.chain_quality {
        let (g, e) = (c.generator.label(), c.evaluator.label());
        let q = &c.correlations;
        emit(&g, &e, "length_vs_causal_a1", &q.length_vs_causal_a1);
        emit(&g, &e, "length_vs_causal_a2", &q.length_vs_causal_a2);
        emit(&g, &e, "chains_vs_causal_a1", &q.chains_vs_causal_a1);
        emit(&g, &e, "chains_vs_causal_a2", &q.chains_vs_causal_a2);
        emit(&g, &e, "chains_vs_mean_length", &q.chains_vs_mean_length);
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 csv")
}

pub const REPORT_FILES: [&str; 4] = ["metrics.json", "summary.txt", "integrity_matrix.csv", "correlations.csv"];

/// Writes all report files; returns their names.
pub fn write_reports(store: &Store, run_id: &str, report: &MetricsReport) -> Result<Vec<String>, PipelineError> {
    let json = serde_json::to_string_pretty(report).expect("report serializes") + "\n";
    let matrix = report.integrity.matrix.as_ref().map(IntegrityMatrix::to_csv).unwrap_or_default();
    let contents = [json, render_text(report), matrix, correlations_csv(report)];
    for (name, body) in REPORT_FILES.iter().zip(contents) {
        store.write_report(run_id, name, &body)?;
    }
    Ok(REPORT_FILES.iter().map(|s| s.to_string()).collect())
}
