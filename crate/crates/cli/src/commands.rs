use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::bail;
use gaussq_core::eval::{entity_distances, evaluate, rank_by_distance, EvalConfig, MetricMode};
use gaussq_core::kg::{split_paths, KnowledgeGraph, Split, SplitMask};
use gaussq_core::query::{compile, QueryType, parse_query, read_workload, sample_queries, write_workload, SampleOptions};
use gaussq_core::synthetic::{planted_hierarchy, SyntheticConfig};
use gaussq_core::trainer::{init_table, load_checkpoint, save_checkpoint, train, Checkpoint};
use serde_json::json;

use crate::args::*;
use crate::config::{self, parse_types};
use crate::viz::{project, write_csv, VizItem};

pub struct RunContext {
    pub data_dir: PathBuf,
}

impl RunContext {
    /// Relative paths are taken relative to the data directory.
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.data_dir.join(p)
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| gaussq_core::Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    Ok(())
}

/// Writes `<output>.receipt.json` recording how the output was produced.
fn write_receipt(output: &Path, receipt: serde_json::Value) -> anyhow::Result<()> {
    let path = with_suffix(output, ".receipt.json");
    log::info!("resolved run: {receipt}");
    let text = serde_json::to_string_pretty(&receipt)?;
    fs::write(&path, text + "\n").map_err(|e| gaussq_core::Error::Io { path, source: e })?;
    Ok(())
}

fn load_graph(path: &Path) -> anyhow::Result<KnowledgeGraph> {
    Ok(KnowledgeGraph::load_snapshot(path)?)
}

fn load_ckpt(path: &Path) -> anyhow::Result<Checkpoint> {
    Ok(load_checkpoint(path)?)
}

/// A graph with the checkpoint's vocabulary and no edges, enough to resolve
/// names and validate workload ids.
fn vocab_graph(ck: &Checkpoint) -> anyhow::Result<KnowledgeGraph> {
    Ok(KnowledgeGraph::from_triples(
        ck.entities.clone(),
        ck.relations.clone(),
        Default::default(),
    )?)
}

pub fn ingest(ctx: &RunContext, a: &IngestArgs) -> anyhow::Result<()> {
    let paths: Vec<(Split, PathBuf)> = match &a.dir {
        Some(dir) => {
            let dir = ctx.path(dir);
            let found = split_paths(&dir);
            if found.is_empty() {
                bail!(gaussq_core::Error::Io {
                    path: dir.clone(),
                    source: std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        "no train.txt, valid.txt or test.txt in this directory"
                    ),
                });
            }
            found
        }
        None => {
            let mut v = Vec::new();
            for (split, p) in [(Split::Train, &a.train), (Split::Valid, &a.valid), (Split::Test, &a.test)] {
                if let Some(p) = p {
                    v.push((split, ctx.path(p)));
                }
            }
            if v.is_empty() {
                bail!(gaussq_core::Error::InvalidParameter(
                    "give --dir or at least one of --train/--valid/--test".into()
                ));
            }
            v
        }
    };
    let refs: Vec<(Split, &Path)> = paths.iter().map(|(s, p)| (*s, p.as_path())).collect();
    let kg = KnowledgeGraph::ingest_tsv(&refs)?;
    let out = ctx.path(&a.out);
    create_parent(&out)?;
    kg.save_snapshot(&out)?;
    let stats = kg.stats();
    println!("{stats}");
    for split in Split::ALL {
        let s = kg.split_stats(split);
        println!(
            "{}: lines={} triples={} duplicates={}",
            split.name(),
            s.lines,
            s.triples,
            s.duplicates
        );
    }
    write_receipt(
        &out,
        json!({
            "command": "ingest",
            "inputs": paths.iter().map(|(s, p)| json!({"split": s.name(), "path": p})).collect::<Vec<_>>(),
            "output": out,
            "stats": stats,
        }),
    )
}

pub fn synth(ctx: &RunContext, a: &SynthArgs) -> anyhow::Result<()> {
    let config = SyntheticConfig {
        num_entities: a.entities,
        num_relations: a.relations,
        group_size: a.group_size,
        seed: a.seed,
        ..Default::default()
    };
    let kg = planted_hierarchy(&config)?;
    let out = ctx.path(&a.out);
    create_parent(&out)?;
    kg.save_snapshot(&out)?;
    println!("{}", kg.stats());
    write_receipt(
        &out,
        json!({
            "command": "synth",
            "entities": a.entities,
            "relations": a.relations,
            "group_size": a.group_size,
            "valid_fraction": config.valid_fraction,
            "test_fraction": config.test_fraction,
            "seed": a.seed,
            "output": out,
        }),
    )
}

pub fn sample(ctx: &RunContext, a: &SampleArgs) -> anyhow::Result<()> {
    let graph = ctx.path(&a.graph);
    let kg = load_graph(&graph)?;
    let types = parse_types(&a.types)?;
    let mut options = match a.split {
        SplitArg::Train => SampleOptions::train(),
        SplitArg::Valid => SampleOptions::held_out(SplitMask::TRAIN_VALID, SplitMask::TRAIN),
        SplitArg::Test => SampleOptions::held_out(SplitMask::ALL, SplitMask::TRAIN_VALID),
    };
    options.max_answers = a.max_answers;
    let mut all = Vec::new();
    for &t in &types {
        match sample_queries(&kg, t, a.count, a.seed, &options) {
            Ok(samples) => {
                println!("{t}: {} queries", samples.len());
                all.extend(samples);
            }
            // one impossible shape should not sink a multi-type request
            Err(e @ gaussq_core::Error::Unsatisfiable { .. }) if types.len() > 1 => {
                log::warn!("skipping {t}: {e}");
            }
            Err(e) => return Err(e.into()),
        }
    }
    if all.is_empty() {
        bail!(gaussq_core::Error::InvalidParameter(
            "no requested query type could be sampled from this graph".into()
        ));
    }
    let out = ctx.path(&a.out);
    create_parent(&out)?;
    write_workload(&out, &all, &kg)?;
    write_receipt(
        &out,
        json!({
            "command": "sample",
            "graph": graph,
            "types": types,
            "count": a.count,
            "seed": a.seed,
            "split": format!("{:?}", a.split).to_lowercase(),
            "max_answers": a.max_answers,
            "output": out,
        }),
    )
}

pub fn train_cmd(ctx: &RunContext, a: &TrainArgs) -> anyhow::Result<()> {
    let mut resolved = config::resolve(&a.hyper, a.hyper.config.as_ref().map(|p| ctx.path(p)).as_deref())?;
    let graph = ctx.path(&a.graph);
    let kg = load_graph(&graph)?;
    let queries = ctx.path(&a.queries);
    let train_set = read_workload(&queries, &kg)?;
    if resolved.source("query_types") == config::Source::Default {
        // without an explicit list, train on whatever types the workload has
        let present: BTreeSet<QueryType> = train_set.iter().map(|s| s.query_type).collect();
        resolved.config.query_types = present.into_iter().collect();
    }
    resolved.log();
    let config = resolved.config.clone();
    let valid_path = a.valid_queries.as_ref().map(|p| ctx.path(p));
    let valid_set = match &valid_path {
        Some(p) => read_workload(p, &kg)?,
        None => Vec::new(),
    };
    let out = ctx.path(&a.out);
    create_parent(&out)?;
    let metrics_path = a
        .metrics_log
        .as_ref()
        .map(|p| ctx.path(p))
        .unwrap_or_else(|| with_suffix(&out, ".metrics.jsonl"));
    create_parent(&metrics_path)?;
    let file = File::create(&metrics_path).map_err(|e| gaussq_core::Error::Io {
        path: metrics_path.clone(),
        source: e,
    })?;
    let mut log_writer = BufWriter::new(file);
    let mut write_error = None;

    let table = init_table(&config, kg.num_entities(), kg.num_relations())?;
    let outcome = train(&config, table, &train_set, &valid_set, |m| {
        let line = serde_json::to_string(m).expect("metrics serialize");
        if let Err(e) = writeln!(log_writer, "{line}").and_then(|_| log_writer.flush()) {
            write_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_error {
        bail!(gaussq_core::Error::Io {
            path: metrics_path,
            source: e
        });
    }
    let histogram: Vec<String> = outcome
        .type_histogram
        .iter()
        .map(|(t, n)| format!("{t}={n}"))
        .collect();
    println!("type histogram: {}", histogram.join(" "));
    println!(
        "epochs run: {} (best {}{})",
        outcome.metrics.len(),
        outcome.best_epoch,
        if outcome.stopped_early { ", stopped early" } else { "" }
    );
    save_checkpoint(
        &out,
        &Checkpoint {
            config: config.clone(),
            table: outcome.table,
            entities: kg.entities().clone(),
            relations: kg.relations().clone(),
        },
    )?;
    println!("wrote {}", out.display());
    write_receipt(
        &out,
        json!({
            "command": "train",
            "graph": graph,
            "queries": queries,
            "valid_queries": valid_path,
            "metrics_log": metrics_path,
            "output": out,
            "config": resolved.config,
            "sources": resolved.sources.iter().map(|(f, s)| json!({"field": f, "source": s})).collect::<Vec<_>>(),
            "type_histogram": outcome.type_histogram,
            "best_epoch": outcome.best_epoch,
        }),
    )
}

pub fn eval_cmd(ctx: &RunContext, a: &EvalArgs) -> anyhow::Result<()> {
    let ck_path = ctx.path(&a.checkpoint);
    let ck = load_ckpt(&ck_path)?;
    let kg = match &a.graph {
        Some(g) => {
            let kg = load_graph(&ctx.path(g))?;
            ck.check_graph(&kg)?;
            kg
        }
        None => vocab_graph(&ck)?,
    };
    let queries = ctx.path(&a.queries);
    let samples = read_workload(&queries, &kg)?;
    if samples.is_empty() {
        bail!(gaussq_core::Error::InvalidParameter(format!(
            "{} holds no queries",
            queries.display()
        )));
    }
    let config = EvalConfig {
        mode: if a.filtered_metrics {
            MetricMode::Filtered
        } else {
            MetricMode::Precision
        },
        threads: a.threads,
    };
    let report = evaluate(&ck.table, &samples, &config)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(prefix) = &a.out {
        let prefix = ctx.path(prefix);
        create_parent(&prefix)?;
        let json_path = with_suffix(&prefix, ".json");
        let txt_path = with_suffix(&prefix, ".txt");
        fs::write(&json_path, serde_json::to_string_pretty(&report.to_json())? + "\n")
            .map_err(|e| gaussq_core::Error::Io { path: json_path.clone(), source: e })?;
        fs::write(&txt_path, &text).map_err(|e| gaussq_core::Error::Io { path: txt_path.clone(), source: e })?;
        write_receipt(
            &prefix,
            json!({
                "command": "eval",
                "checkpoint": ck_path,
                "queries": queries,
                "metrics": if a.filtered_metrics { "filtered" } else { "precision" },
                "threads": a.threads,
                "outputs": [json_path, txt_path],
            }),
        )?;
    }
    Ok(())
}

pub fn answer(ctx: &RunContext, a: &AnswerArgs) -> anyhow::Result<()> {
    let ck_path = ctx.path(&a.checkpoint);
    let ck = load_ckpt(&ck_path)?;
    if a.top_k == 0 {
        bail!(gaussq_core::Error::InvalidParameter("--top-k must be at least 1".into()));
    }
    let dag = parse_query(&a.query, &ck.entities, &ck.relations)?;
    let n = ck.table.num_entities();
    let k = if a.top_k > n {
        log::warn!("--top-k {} exceeds the {n} entities; showing all", a.top_k);
        n
    } else {
        a.top_k
    };
    log::info!(
        "answer: checkpoint={} query={:?} top_k={k}",
        ck_path.display(),
        a.query
    );
    let distances = entity_distances(&dag, &ck.table)?;
    let ranked = rank_by_distance(&distances, &[]);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (i, &e) in ranked.iter().take(k).enumerate() {
        writeln!(
            out,
            "{}\t{}\t{:.6}",
            i + 1,
            ck.entities.name(e).unwrap_or("?"),
            distances[e]
        )?;
    }
    Ok(())
}

pub fn export_viz(ctx: &RunContext, a: &ExportVizArgs) -> anyhow::Result<()> {
    let ck_path = ctx.path(&a.checkpoint);
    let ck = load_ckpt(&ck_path)?;
    let mut items = Vec::new();
    for name in &a.entities {
        let id = ck.entities.id(name).ok_or_else(|| gaussq_core::Error::UnknownName {
            kind: "entity",
            name: name.clone(),
        })?;
        let g = ck.table.entity(id)?;
        items.push(VizItem {
            name: name.clone(),
            kind: "entity",
            component: 0,
            weight: 1.0,
            mean: g.mean().clone(),
            precision: g.precision(),
        });
    }
    for text in &a.queries {
        let dag = parse_query(text, &ck.entities, &ck.relations)?;
        let mixture = compile(&dag, &ck.table)?;
        for (i, (c, w)) in mixture.iter().enumerate() {
            items.push(VizItem {
                name: text.clone(),
                kind: "query",
                component: i,
                weight: w,
                mean: c.mean().clone(),
                precision: c.precision(),
            });
        }
    }
    let projection = project(&items)?;
    let out = ctx.path(&a.out);
    create_parent(&out)?;
    let csv_path = with_suffix(&out, ".csv");
    let json_path = with_suffix(&out, ".json");
    write_csv(&csv_path, &projection)?;
    fs::write(&json_path, serde_json::to_string_pretty(&projection)? + "\n")
        .map_err(|e| gaussq_core::Error::Io { path: json_path.clone(), source: e })?;
    println!("{} rows -> {}, {}", projection.rows.len(), csv_path.display(), json_path.display());
    write_receipt(
        &out,
        json!({
            "command": "export-viz",
            "checkpoint": ck_path,
            "entities": a.entities,
            "queries": a.queries,
            "outputs": [csv_path, json_path],
        }),
    )
}

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    let ctx = RunContext {
        data_dir: cli.data_dir.clone(),
    };
    match &cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::Synth(a) => synth(&ctx, a),
        Command::Sample(a) => sample(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Eval(a) => eval_cmd(&ctx, a),
        Command::Answer(a) => answer(&ctx, a),
        Command::ExportViz(a) => export_viz(&ctx, a),
    }
}
