use std::fs;
use std::path::{Path, PathBuf};

use adanas::data::{augment, load_dataset, Dataset, Split, TaskType, Vocab};
use adanas::engine::{
    enumerate_and_rank, evaluate, resume_search, search, train_child, SearchState, TrainedModel,
};
use adanas::losses::{build_cost_table, cost_report};
use adanas::space::ChildGraph;
use adanas::teacher::{synthetic_teacher, write_teacher, SyntheticSpec, Teacher};
use adanas::{Error, Result};
use serde::Serialize;

use crate::config::{RunConfig, Stage};
use crate::{Command, Overrides};

pub fn run(command: &Command, flags: &Overrides) -> Result<()> {
    let stage = match command {
        Command::GenData { .. } => Stage::Gen,
        Command::ProbeTrain => Stage::Probes,
        Command::Search | Command::Derive | Command::CostReport { .. } => Stage::Search,
        Command::Train | Command::Eval { .. } | Command::Enumerate => Stage::Train,
    };
    let mut cfg = RunConfig::resolve(flags.config.as_deref(), flags, stage)?;
    match command {
        Command::GenData { kind, size, vocab_size } => {
            if let Some(k) = kind {
                cfg.gen.kind = k.parse()?;
            }
            if let Some(s) = size {
                cfg.gen.size = *s;
            }
            if let Some(v) = vocab_size {
                cfg.gen.vocab_size = *v;
            }
            gen_data(cfg)
        }
        Command::ProbeTrain => probe_train(&cfg),
        Command::Search => run_search(&cfg, flags.checkpoint.as_deref()),
        Command::Derive => derive(&cfg, flags.checkpoint.as_deref()),
        Command::Train => train(&cfg, flags.child.as_deref()),
        Command::Eval { split } => eval(&cfg, flags.child.as_deref(), split),
        Command::CostReport { vocab_size, num_classes } => {
            cost(&cfg, flags.child.as_deref(), *vocab_size, *num_classes)
        }
        Command::Enumerate => enumerate(&cfg),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn require<'a>(path: Option<&'a Path>, flag: &str) -> Result<&'a Path> {
    path.ok_or_else(|| Error::Config(format!("this command needs --{flag}")))
}

fn dataset(cfg: &RunConfig) -> Result<Dataset> {
    let path = cfg
        .dataset
        .as_deref()
        .ok_or_else(|| Error::Config("no dataset: pass --dataset or set `dataset`".into()))?;
    let task = match cfg.task_type {
        Some(t) => t,
        None => {
            let text = fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            let header = text.lines().next().unwrap_or_default();
            if header.split('\t').any(|c| c.trim() == "text_b") {
                TaskType::TextPair
            } else {
                TaskType::SingleText
            }
        }
    };
    let ds = load_dataset(path, task, cfg.num_classes)?;
    log::info!("{}: {} examples, {} classes, {}", path.display(), ds.examples.len(), ds.num_classes, task);
    Ok(ds)
}

/// The configured teacher with its probes, or `None` when no teacher is
/// configured. A synthetic teacher is written to the output directory first
/// so its probes are cached like any other teacher file.
fn teacher(cfg: &RunConfig, ds: &Dataset) -> Result<Option<Teacher>> {
    let path: PathBuf = match (&cfg.teacher, &cfg.synthetic_teacher) {
        (Some(p), _) => p.clone(),
        (None, Some(spec)) => {
            let view = synthetic_teacher(ds, &SyntheticSpec::parse(spec)?)?;
            fs::create_dir_all(&cfg.out)?;
            let p = cfg.out.join("teacher.jsonl");
            write_teacher(&view, &p)?;
            p
        }
        (None, None) => return Ok(None),
    };
    Teacher::load_with_probes(&path, ds, &cfg.probes).map(Some)
}

fn gen_data(mut cfg: RunConfig) -> Result<()> {
    let mut ds = cfg.gen.spec().generate()?;
    if cfg.gen.augment_prob > 0.0 {
        ds = augment(&ds, cfg.gen.augment_prob, cfg.gen.augment_copies, cfg.gen.seed)?;
    }
    fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join("dataset.tsv");
    ds.save_tsv(&path)?;
    cfg.dataset = Some(path.clone());
    cfg.task_type = Some(ds.task_type);
    cfg.num_classes = Some(ds.num_classes);
    cfg.echo()?;
    println!("{}: {} examples of {}", path.display(), ds.examples.len(), cfg.gen.kind);
    Ok(())
}

#[derive(Serialize)]
struct ProbeReport<'a> {
    teacher_hash: String,
    depth: usize,
    hidden: usize,
    train_accuracy: &'a [f64],
    dev_accuracy: &'a [Option<f64>],
}

fn probe_train(cfg: &RunConfig) -> Result<()> {
    let ds = dataset(cfg)?;
    let t = teacher(cfg, &ds)?
        .ok_or_else(|| Error::Config("probe-train needs --teacher or --synthetic-teacher".into()))?;
    cfg.echo()?;
    let p = t.probes();
    t.save_probes(&cfg.out.join("probes.json"))?;
    write_json(
        &cfg.out.join("probe_report.json"),
        &ProbeReport {
            teacher_hash: t.view().content_hash(),
            depth: t.depth(),
            hidden: p.hidden,
            train_accuracy: &p.train_accuracy,
            dev_accuracy: &p.dev_accuracy,
        },
    )?;
    for (j, (tr, dev)) in p.train_accuracy.iter().zip(&p.dev_accuracy).enumerate() {
        match dev {
            Some(d) => println!("layer {:>2}: train {:.4} dev {:.4}", j + 1, tr, d),
            None => println!("layer {:>2}: train {:.4}", j + 1, tr),
        }
    }
    Ok(())
}

fn run_search(cfg: &RunConfig, resume_from: Option<&Path>) -> Result<()> {
    let ds = dataset(cfg)?;
    let t = if cfg.search.gamma > 0.0 { teacher(cfg, &ds)? } else { None };
    fs::create_dir_all(&cfg.out)?;
    let ckpt = cfg.out.join("checkpoint.bin");
    let outcome = match resume_from {
        Some(p) => {
            let state = SearchState::load(p)?;
            if state.config != cfg.search {
                log::warn!("resuming with the settings stored in {}", p.display());
            }
            log::info!("resuming {} after epoch {}", p.display(), state.epoch);
            resume_search(state, &ds, t.as_ref(), Some(&ckpt))?
        }
        None => search(&cfg.search, &ds, t.as_ref(), Some(&ckpt))?,
    };
    cfg.echo()?;
    outcome.child.save(&cfg.out.join("child.json"))?;
    fs::write(cfg.out.join("search_report.jsonl"), outcome.report.to_jsonl())?;
    log::info!("search took {:.1}s", outcome.elapsed.as_secs_f64());
    println!("{}", outcome.child.encoding());
    Ok(())
}

fn derive(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    let state = SearchState::load(require(checkpoint, "checkpoint")?)?;
    let child = state.derive()?;
    fs::create_dir_all(&cfg.out)?;
    child.save(&cfg.out.join("child.json"))?;
    println!("{}", child.encoding());
    Ok(())
}

fn train(cfg: &RunConfig, child: Option<&Path>) -> Result<()> {
    let child = ChildGraph::load(require(child, "child")?)?;
    let ds = dataset(cfg)?;
    let t = if cfg.train.gamma > 0.0 { teacher(cfg, &ds)? } else { None };
    let trained = train_child(&child, &ds, t.as_ref(), &cfg.train)?;
    cfg.echo()?;
    child.save(&cfg.out.join("child.json"))?;
    trained.model.save(&cfg.out.join("model.json"))?;
    write_json(&cfg.out.join("train_report.json"), &trained.report)?;
    println!(
        "{}: best dev accuracy {:.4} at epoch {}",
        trained.report.child, trained.report.best_dev_accuracy, trained.report.best_epoch
    );
    Ok(())
}

fn eval(cfg: &RunConfig, model: Option<&Path>, split: &str) -> Result<()> {
    let split = match split {
        "train" => Split::Train,
        "dev" => Split::Dev,
        other => return Err(Error::Config(format!("unknown split `{other}`; use train or dev"))),
    };
    let model = TrainedModel::load(require(model, "child")?)?;
    let ds = dataset(cfg)?;
    let ev = evaluate(&model, &ds, split)?;
    fs::create_dir_all(&cfg.out)?;
    write_json(&cfg.out.join(format!("eval_{}.json", split.as_str())), &ev)?;
    println!("{} accuracy {:.4} ({}/{})", split.as_str(), ev.accuracy, ev.correct, ev.examples);
    Ok(())
}

fn cost(cfg: &RunConfig, child: Option<&Path>, vocab_size: Option<usize>, num_classes: Option<usize>) -> Result<()> {
    let child = ChildGraph::load(require(child, "child")?)?;
    let (vocab, classes) = match (&cfg.dataset, vocab_size) {
        (Some(_), _) => {
            let ds = dataset(cfg)?;
            (Vocab::build(&ds, cfg.search.max_len).len(), ds.num_classes)
        }
        (None, Some(v)) => (v, num_classes.or(cfg.num_classes).unwrap_or(2)),
        (None, None) => return Err(Error::Config("cost-report needs --dataset or --vocab-size".into())),
    };
    let table = build_cost_table(child.embed_dim, cfg.search.max_len)?;
    let report = cost_report(&table, Some(&child), vocab, classes, cfg.search.k_max.max(child.k));
    fs::create_dir_all(&cfg.out)?;
    write_json(&cfg.out.join("cost_report.json"), &report)?;
    if let Some(c) = &report.child {
        let p = &c.params;
        println!("child {}", c.child);
        println!(
            "params {} (embedding {}, operations {}, summaries {}, head {}; probes used only in training {})",
            c.total_params, p.embedding, p.operations, p.summaries, p.head, p.training_only
        );
        println!("flops {} per example at length {}", c.total_flops, table.seq_len);
        println!("efficiency loss {:.6}", c.efficiency_loss);
    }
    println!("reference structures (task, layers, parameters, speedup):");
    for r in &report.reference {
        println!("  {} {} {} {}", r.task, r.k, r.params, r.speedup);
    }
    Ok(())
}

fn enumerate(cfg: &RunConfig) -> Result<()> {
    let ds = dataset(cfg)?;
    let t = if cfg.train.gamma > 0.0 { teacher(cfg, &ds)? } else { None };
    let (space, _) = cfg.search.space(&ds);
    let ranked = enumerate_and_rank(&space, &ds, t.as_ref(), &cfg.train, cfg.workers)?;
    cfg.echo()?;
    write_json(&cfg.out.join("ranking.json"), &ranked)?;
    for r in &ranked {
        println!("{:>3} {:.6} {:.4} {}", r.rank, r.dev_loss, r.dev_accuracy, r.encoding);
    }
    Ok(())
}
