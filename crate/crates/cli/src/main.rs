//! Command-line driver for the recommendation pipeline.
//!
//! Subcommands:
//! - `train`: ingest, cluster, train, write checkpoint + CSV artifacts
//! - `eval`:  load a checkpoint, rebuild the split, write the report CSV
//! - `stats`: relation frequency and virtual-relation exposure CSVs
//!
//! Exit codes: 0 ok, 1 config error, 2 data error, 3 numeric error.

mod config;

use std::fs;
use std::io::Write;
use std::path::Path;

use kgrec::error::{Error, Result};
use kgrec::eval::{self, EvalSets};
use kgrec::graph::BipartiteGraph;
use kgrec::ingest::{self, IdMaps, SplitDataset};
use kgrec::model::{self, AlignedBipartite, ModelConfig};
use kgrec::params::{load_checkpoint, save_checkpoint, Checkpoint};
use kgrec::train::{self, fdcheck, PartitionMode};
use kgrec::vrkg::{self, exposure_counts, partition_graph, RelationAssignment};

use config::{Ablation, RunConfig};

const USAGE: &str = "\
usage: kgrec <command> [--flag value ...]

commands:
  train   --interactions FILE --kg FILE [--out DIR] [options]
  eval    --checkpoint FILE --interactions FILE --kg FILE
          [--manifest FILE | --seed N] [--cutoffs 1,5,10,20] [--out DIR]
  stats   --kg FILE [--checkpoint FILE] [--out DIR]

common flags:
  --config FILE         key = value config file (flags override it)
  --seed N              split/init/training seed        (default 42)
  --out DIR             output directory                (default out)
  --threads N           rayon thread count              (default: all cores)
  --ablation MODE       none | k1 | per-relation | custom-k
  --k N                 virtual relation count          (default 3)
  --layers N            propagation layers L            (default 2)
  --iterations N        smoothing iterations Q          (default 3)
  --cluster-strategy S  entity-grounded | static
  --dim N --lr X --lambda X --batch-size N --epochs N --eval-every N
  --cutoffs LIST --ratio X --stratified-split --patience N
  --verified            run the gradient check before training
  --dump-layers         dump per-layer embedding matrices after training
";

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn run(args: &[String]) -> Result<()> {
    let Some(command) = args.first() else {
        eprintln!("{USAGE}");
        return Err(Error::Config("missing command".into()));
    };
    let cfg = config::from_args(&args[1..])?;
    if let Some(threads) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match command.as_str() {
        "train" => cmd_train(&cfg),
        "eval" => cmd_eval(&cfg),
        "stats" => cmd_stats(&cfg),
        other => {
            eprintln!("{USAGE}");
            Err(Error::Config(format!("unknown command '{other}'")))
        }
    }
}

struct Ingested {
    split: SplitDataset,
    kg: kgrec::graph::KnowledgeGraph,
    align: Vec<u32>,
}

fn ingest_dataset(cfg: &RunConfig) -> Result<Ingested> {
    let interactions_path = cfg
        .interactions
        .as_ref()
        .ok_or_else(|| Error::Config("--interactions is required".into()))?;
    let kg_path = cfg
        .kg
        .as_ref()
        .ok_or_else(|| Error::Config("--kg is required".into()))?;
    let (interactions, mut maps) = ingest::load_interactions(interactions_path)?;
    let kg = ingest::load_triples(kg_path, &mut maps)?;
    let split = if cfg.stratified_split {
        ingest::split_stratified(&interactions, cfg.seed, cfg.ratio)?
    } else {
        ingest::split(&interactions, cfg.seed, cfg.ratio)?
    };
    let align = maps.item_to_entity();
    Ok(Ingested { split, kg, align })
}

/// Ablation-resolved (K, partition mode).
fn resolve_ablation(cfg: &RunConfig, closed_relations: u32) -> (usize, PartitionMode) {
    match cfg.ablation {
        Ablation::None | Ablation::CustomK => {
            (cfg.k, PartitionMode::Clustered(cfg.cluster_strategy))
        }
        Ablation::K1 => (1, PartitionMode::SingleGraph),
        Ablation::PerRelation => (closed_relations as usize, PartitionMode::PerRelation),
    }
}

fn manifest_entries(
    cfg: &RunConfig,
    data: &Ingested,
    effective_k: usize,
) -> Result<Vec<(String, String)>> {
    let interactions_path = cfg.interactions.as_ref().unwrap();
    let kg_path = cfg.kg.as_ref().unwrap();
    let mut entries: Vec<(String, String)> = Vec::new();
    let mut push = |k: &str, v: String| entries.push((k.to_string(), v));
    push("interactions", interactions_path.display().to_string());
    push(
        "interactions-hash",
        format!("fnv1a64:{:016x}", ingest::fnv1a64_file(interactions_path)?),
    );
    push("kg", kg_path.display().to_string());
    push(
        "kg-hash",
        format!("fnv1a64:{:016x}", ingest::fnv1a64_file(kg_path)?),
    );
    push("seed", cfg.seed.to_string());
    push("ratio", cfg.ratio.to_string());
    push("stratified-split", cfg.stratified_split.to_string());
    push("users", data.split.train.user_count.to_string());
    push("items", data.split.train.item_count.to_string());
    push(
        "interactions-count",
        (data.split.train.pairs.len() + data.split.test.pairs.len()).to_string(),
    );
    push("train-pairs", data.split.train.pairs.len().to_string());
    push("test-pairs", data.split.test.pairs.len().to_string());
    push("entities", data.kg.entity_count().to_string());
    push(
        "relations-canonical",
        data.kg.canonical_relation_count().to_string(),
    );
    push("relations-closed", data.kg.relation_count().to_string());
    push("triples-closed", data.kg.triples().len().to_string());
    push("ablation", cfg.ablation.as_str().to_string());
    push("k", effective_k.to_string());
    push("layers", cfg.layers.to_string());
    push("iterations", cfg.iterations.to_string());
    push("dim", cfg.dim.to_string());
    push("cluster-strategy", cfg.cluster_strategy.to_string());
    push(
        "bipartite-item-update",
        cfg.bipartite_item_update.to_string(),
    );
    push("lr", cfg.lr.to_string());
    push("lambda", cfg.lambda.to_string());
    push("batch-size", cfg.batch_size.to_string());
    push("epochs", cfg.epochs.to_string());
    push("eval-every", cfg.eval_every.to_string());
    push(
        "cutoffs",
        cfg.cutoffs
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    Ok(entries)
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    cfg.validate_common()?;
    if cfg.verified {
        let outcome = fdcheck::verify()?;
        println!(
            "gradient check passed: {} coordinates, worst relative error {:.3e}",
            outcome.checked, outcome.worst_rel
        );
    }
    let data = ingest_dataset(cfg)?;
    let (effective_k, mode) = resolve_ablation(cfg, data.kg.relation_count());
    let model_cfg = cfg.model_config(effective_k);
    model_cfg.validate()?;
    let train_cfg = cfg.train_config();

    println!(
        "training: {} users, {} items, {} entities, {} relations ({} canonical), \
         {} train / {} test pairs, K={effective_k}, L={}, Q={}, d={}",
        data.split.train.user_count,
        data.split.train.item_count,
        data.kg.entity_count(),
        data.kg.relation_count(),
        data.kg.canonical_relation_count(),
        data.split.train.pairs.len(),
        data.split.test.pairs.len(),
        model_cfg.layers,
        model_cfg.iterations,
        model_cfg.dim,
    );
    let outcome = train::train(
        &data.split,
        &data.kg,
        &data.align,
        mode,
        &model_cfg,
        &train_cfg,
        &cfg.cutoffs,
    )?;

    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    save_checkpoint(cfg.out.join("checkpoint.bin"), &outcome.checkpoint)?;
    train::write_training_log(cfg.out.join("training_log.csv"), &outcome.history)?;
    ingest::write_manifest(
        cfg.out.join("manifest.txt"),
        &manifest_entries(cfg, &data, effective_k)?,
    )?;
    if let Some(report) = outcome.history.last().and_then(|r| r.metrics.as_ref()) {
        eval::write_report_csv(cfg.out.join("report.csv"), report)?;
        for row in &report.rows {
            println!(
                "@{:<3} recall {:.4}  ndcg {:.4}  hr {:.4}  precision {:.4}",
                row.cutoff, row.recall, row.ndcg, row.hr, row.precision
            );
        }
        if report.cold_users > 0 {
            println!(
                "note: {} of {} evaluated users had no training interactions",
                report.cold_users, report.users_evaluated
            );
        }
    }
    if cfg.dump_layers {
        let bipartite = BipartiteGraph::build(
            &data.split.train.pairs,
            data.split.train.user_count,
            data.split.train.item_count,
        )?;
        let aligned = AlignedBipartite::build(&bipartite, &data.align, data.kg.entity_count());
        let snapshot = model::forward(
            &outcome.checkpoint.params,
            &outcome.partition,
            &aligned,
            &model_cfg,
        );
        snapshot.dump_layers(&cfg.out)?;
    }
    println!("wrote {}", cfg.out.display());
    Ok(())
}

/// Re-applies the split- and model-affecting keys a training manifest
/// recorded, so an eval reproduces the run it came from.
fn apply_manifest_overrides(cfg: &mut RunConfig) -> Result<()> {
    let Some(path) = cfg.manifest.clone() else {
        return Ok(());
    };
    for (key, value) in ingest::read_manifest(&path)? {
        if matches!(
            key.as_str(),
            "seed" | "stratified-split" | "ratio" | "bipartite-item-update"
        ) {
            cfg.apply(&key, &value)?;
        }
    }
    Ok(())
}

fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let checkpoint_path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("--checkpoint is required".into()))?;
    let ckpt: Checkpoint = load_checkpoint(checkpoint_path)?;
    let mut cfg = cfg.clone();
    apply_manifest_overrides(&mut cfg)?;
    cfg.validate_common()?;
    let data = ingest_dataset(&cfg)?;

    let p = &ckpt.params;
    if p.user_emb.rows() != data.split.train.user_count as usize {
        return Err(Error::DimensionMismatch(format!(
            "checkpoint has {} users, dataset has {}",
            p.user_emb.rows(),
            data.split.train.user_count
        )));
    }
    if p.entity_emb.rows() != data.kg.entity_count() as usize {
        return Err(Error::DimensionMismatch(format!(
            "checkpoint has {} entities, graph has {}",
            p.entity_emb.rows(),
            data.kg.entity_count()
        )));
    }
    if p.relation_feat.rows() != data.kg.relation_count() as usize {
        return Err(Error::DimensionMismatch(format!(
            "checkpoint has {} relations, graph has {}",
            p.relation_feat.rows(),
            data.kg.relation_count()
        )));
    }

    let assignment = RelationAssignment::from_assign(ckpt.assignment.clone(), p.k());
    let partition = partition_graph(&data.kg, &assignment);
    let bipartite = BipartiteGraph::build(
        &data.split.train.pairs,
        data.split.train.user_count,
        data.split.train.item_count,
    )?;
    let aligned = AlignedBipartite::build(&bipartite, &data.align, data.kg.entity_count());
    let sets = EvalSets::from_split(&data.split);
    let model_cfg = ModelConfig {
        layers: ckpt.layers,
        iterations: ckpt.iterations,
        k: p.k(),
        dim: p.dim(),
        bipartite_item_update: cfg.bipartite_item_update,
    };
    let report = eval::evaluate(
        p,
        &partition,
        &aligned,
        &data.align,
        &sets,
        &cfg.cutoffs,
        &model_cfg,
    );
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    eval::write_report_csv(cfg.out.join("report.csv"), &report)?;
    for row in &report.rows {
        println!(
            "@{:<3} recall {:.4}  ndcg {:.4}  hr {:.4}  precision {:.4}",
            row.cutoff, row.recall, row.ndcg, row.hr, row.precision
        );
    }
    println!(
        "evaluated {} users ({} cold); wrote {}",
        report.users_evaluated,
        report.cold_users,
        cfg.out.join("report.csv").display()
    );
    Ok(())
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(file, "{header}").map_err(|e| Error::io(path, e))?;
    for row in rows {
        writeln!(file, "{row}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn cmd_stats(cfg: &RunConfig) -> Result<()> {
    let kg_path = cfg
        .kg
        .as_ref()
        .ok_or_else(|| Error::Config("--kg is required".into()))?;
    let mut maps = IdMaps::default();
    let kg = ingest::load_triples(kg_path, &mut maps)?;
    let canonical = kg.canonical_relation_count() as usize;
    let counts = kg.relation_counts();
    let canonical_counts = &counts[..canonical];

    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let histogram = vrkg::relation_histogram(canonical_counts);
    write_csv(
        &cfg.out.join("relation_histogram.csv"),
        "exposure_count,num_relations",
        &histogram
            .iter()
            .map(|(count, relations)| format!("{count},{relations}"))
            .collect::<Vec<_>>(),
    )?;
    println!(
        "{} canonical relations over {} triples; histogram written",
        canonical,
        canonical_counts.iter().sum::<usize>()
    );

    if let Some(checkpoint_path) = &cfg.checkpoint {
        let ckpt = load_checkpoint(checkpoint_path)?;
        if ckpt.assignment.len() != kg.relation_count() as usize {
            return Err(Error::DimensionMismatch(format!(
                "checkpoint assignment covers {} relations, graph has {}",
                ckpt.assignment.len(),
                kg.relation_count()
            )));
        }
        write_csv(
            &cfg.out.join("relation_assignments.csv"),
            "relation_id,canonical_count,assigned_virtual_relation",
            &(0..canonical)
                .map(|p| format!("{p},{},{}", canonical_counts[p], ckpt.assignment[p]))
                .collect::<Vec<_>>(),
        )?;
        let assignment = RelationAssignment::from_assign(ckpt.assignment.clone(), ckpt.params.k());
        let partition = partition_graph(&kg, &assignment);
        let exposures = exposure_counts(&partition);
        write_csv(
            &cfg.out.join("vrkg_exposure.csv"),
            "virtual_relation,exposure_count",
            &exposures
                .iter()
                .enumerate()
                .map(|(k, count)| format!("{k},{count}"))
                .collect::<Vec<_>>(),
        )?;
        println!(
            "virtual relation exposure: {:?} (sum {})",
            exposures,
            exposures.iter().sum::<usize>()
        );
    }
    println!("wrote {}", cfg.out.display());
    Ok(())
}
