use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use amodal_core::data::{build_corpus, procedural_meshes, Corpus, LoadedObject, Split};
use amodal_core::experiment::{
    ablation_csv, ablation_table, evaluate_model, generate, AblationRow, EvalConfig, Variant,
};
use amodal_core::flow::{load_checkpoint, parse_hash, save_checkpoint, TrainSet, Trainer};
use amodal_core::geometry::{VoxelGrid, GRID_RESOLUTION};
use amodal_core::metrics::{evaluate_pairs, voxel_surface_mesh, EvalPair};

use crate::config::RunConfig;
use crate::exit::{CliError, CliResult};
use crate::Common;

pub const CHECKPOINT_FILE: &str = "checkpoint.agck";
pub const TRAIN_LOG: &str = "train.ndjson";

fn load_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.resolve_seed(common.seed)?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

pub fn gen_data(common: &Common, out: &Path, meshes: Option<usize>, views: Option<usize>) -> CliResult<()> {
    let mut cfg = load_config(common)?;
    if let Some(n) = meshes {
        cfg.data.meshes = n;
    }
    if let Some(v) = views {
        cfg.data.views_per_mesh = v;
    }
    cfg.validate()?;
    create_dir(out)?;
    let sources = procedural_meshes(cfg.data.meshes, &cfg.data, cfg.seed)?;
    let manifest = build_corpus(&sources, &cfg.data, cfg.seed, out)?;
    cfg.write_resolved(out)?;
    let views: usize = manifest.objects.iter().map(|o| o.views.len()).sum();
    println!(
        "corpus {}: {} objects, {} views, {} skipped, manifest {}",
        out.display(),
        manifest.objects.len(),
        views,
        manifest.skipped.len(),
        manifest.hash()
    );
    Ok(())
}

fn corpus_hash(corpus: &Corpus) -> CliResult<[u8; 32]> {
    Ok(parse_hash(&corpus.hash)?)
}

fn train_to(
    trainer: &mut Trainer,
    data: &TrainSet,
    until: u64,
    out: &Path,
    checkpoint_every: u64,
    append_log: bool,
) -> CliResult<Vec<f64>> {
    let log_path = out.join(TRAIN_LOG);
    let mut log = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append_log)
        .truncate(!append_log)
        .open(&log_path)
        .map_err(|e| CliError::io(format!("cannot open {}: {e}", log_path.display())))?;
    let mut losses = Vec::new();
    while trainer.step < until {
        let next = if checkpoint_every > 0 {
            ((trainer.step / checkpoint_every + 1) * checkpoint_every).min(until)
        } else {
            until
        };
        let logs = trainer.run(data, next, Some(&mut log as &mut dyn Write))?;
        losses.extend(logs.iter().map(|l| l.loss));
        if checkpoint_every > 0 && trainer.step % checkpoint_every == 0 {
            save_checkpoint(trainer, &out.join(format!("checkpoint-{:06}.agck", trainer.step)))?;
        }
    }
    save_checkpoint(trainer, &out.join(CHECKPOINT_FILE))?;
    Ok(losses)
}

fn report_losses(losses: &[f64]) {
    if losses.is_empty() {
        println!("nothing to train");
        return;
    }
    let w = losses.len().min(100);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    println!(
        "final loss {:.6} (mean of last {w}: {:.6}; first {w}: {:.6})",
        losses[losses.len() - 1],
        mean(&losses[losses.len() - w..]),
        mean(&losses[..w])
    );
}

pub fn train(
    common: &Common,
    corpus_dir: &Path,
    out: &Path,
    resume: Option<&Path>,
    steps: Option<usize>,
    checkpoint_every: u64,
) -> CliResult<()> {
    let mut cfg = load_config(common)?;
    if let Some(s) = steps {
        cfg.train.steps = s;
        cfg.train.epochs = None;
    }
    cfg.validate()?;
    let corpus = Corpus::load(corpus_dir)?;
    let hash = corpus_hash(&corpus)?;
    let mut trainer = match resume {
        Some(path) => {
            let mut t = load_checkpoint(path, Some(&hash))?;
            if let Some(s) = steps {
                t.config.steps = s;
                t.config.epochs = None;
            }
            cfg.model = t.model.config.clone();
            cfg.train = t.config.clone();
            t
        }
        None => Trainer::new(cfg.model.clone(), cfg.train.clone(), hash)?,
    };
    create_dir(out)?;
    cfg.write_resolved(out)?;
    let data = TrainSet::from_corpus(&corpus, &trainer.model.config)?;
    let until = trainer.total_steps(&data) as u64;
    println!(
        "training {} parameters on {} objects from step {} to {until}",
        trainer.model.store.numel(),
        data.len(),
        trainer.step
    );
    let losses = train_to(&mut trainer, &data, until, out, checkpoint_every, resume.is_some())?;
    report_losses(&losses);
    println!("checkpoint {}", out.join(CHECKPOINT_FILE).display());
    Ok(())
}

pub struct SampleArgs {
    pub checkpoint: PathBuf,
    pub corpus: PathBuf,
    pub out: PathBuf,
    pub views: Option<usize>,
    pub steps: Option<usize>,
    pub cfg_scale: Option<f64>,
    pub baseline_sequential: bool,
    pub split: String,
    pub obj: bool,
}

fn select_split<'a>(corpus: &'a Corpus, split: &str) -> CliResult<Vec<&'a LoadedObject>> {
    let filter = match split {
        "train" => Some(Split::Train),
        "test" => Some(Split::Test),
        "all" => None,
        other => {
            return Err(CliError::config(format!(
                "unknown split {other}; use train, test or all"
            )))
        }
    };
    Ok(corpus
        .objects
        .iter()
        .filter(|o| filter.map_or(true, |s| o.split == s))
        .collect())
}

pub fn sample(common: &Common, args: &SampleArgs) -> CliResult<()> {
    let mut cfg = load_config(common)?;
    if let Some(s) = args.steps {
        cfg.sample.steps = s;
    }
    if let Some(s) = args.cfg_scale {
        cfg.sample.cfg_scale = s;
    }
    if let Some(v) = args.views {
        cfg.eval.views = v;
    }
    cfg.validate()?;
    let corpus = Corpus::load(&args.corpus)?;
    let trainer = load_checkpoint(&args.checkpoint, Some(&corpus_hash(&corpus)?))?;
    cfg.model = trainer.model.config.clone();
    cfg.train = trainer.config.clone();
    let (objects, unusable): (Vec<_>, Vec<_>) = select_split(&corpus, &args.split)?
        .into_iter()
        .partition(|o| !o.views.is_empty());
    for o in &unusable {
        println!("{}: skipped, no usable view", o.id);
    }
    if objects.is_empty() {
        return Err(CliError::data(format!("split {} has no objects", args.split)));
    }
    let k = cfg.eval.views;
    let short: Vec<String> = objects
        .iter()
        .filter(|o| o.views.len() < k)
        .map(|o| format!("{} ({})", o.id, o.views.len()))
        .collect();
    if !short.is_empty() {
        return Err(CliError::config(format!(
            "{k} views requested but these objects have fewer: {}",
            short.join(", ")
        )));
    }
    let dirs = ["generated", "conditioning", "reference"].map(|d| args.out.join(d));
    for d in &dirs {
        create_dir(d)?;
    }
    cfg.write_resolved(&args.out)?;
    let mut traces = BTreeMap::new();
    for (i, o) in objects.iter().enumerate() {
        let g = generate(
            &trainer.model,
            o,
            i as u64,
            k,
            args.baseline_sequential,
            &cfg.sample,
            cfg.eval.seed,
            &cfg.eval.outlier,
        )?;
        g.grid.save(&dirs[0].join(format!("{}.vox", o.id)))?;
        g.conditioning.save(&dirs[1].join(format!("{}.vox", o.id)))?;
        o.target.save(&dirs[2].join(format!("{}.vox", o.id)))?;
        if args.obj && !g.grid.is_empty() {
            voxel_surface_mesh(&g.grid)?.save_obj(&dirs[0].join(format!("{}.obj", o.id)))?;
        }
        if args.baseline_sequential {
            traces.insert(o.id.clone(), g.trace);
        }
        println!("{}: {} voxels", o.id, g.grid.count());
    }
    if args.baseline_sequential {
        let text = serde_json::to_string_pretty(&traces).expect("trace serializes") + "\n";
        write_file(&args.out.join("trace.json"), text)?;
    }
    Ok(())
}

fn vox_ids(dir: &Path) -> CliResult<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(format!("cannot list {}: {e}", dir.display())))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(format!("cannot list {}: {e}", dir.display())))?;
        let path = entry.path();
        if path.extension().is_some_and(|x| x == "vox") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn eval(
    common: &Common,
    generated: &Path,
    reference: &Path,
    conditioning: Option<&Path>,
    report: &Path,
    csv: Option<&Path>,
    dilate: bool,
) -> CliResult<()> {
    let mut cfg = load_config(common)?;
    cfg.eval.dilate_recall |= dilate;
    cfg.validate()?;
    let ref_ids = vox_ids(reference)?;
    let gen_ids = vox_ids(generated)?;
    let missing: Vec<&String> = ref_ids
        .iter()
        .filter(|id| !gen_ids.contains(id))
        .chain(gen_ids.iter().filter(|id| !ref_ids.contains(id)))
        .collect();
    if !missing.is_empty() {
        return Err(CliError::data(format!(
            "unpaired objects: {}",
            missing.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        )));
    }
    if ref_ids.is_empty() {
        return Err(CliError::data(format!("no .vox files in {}", reference.display())));
    }
    let mut pairs = Vec::with_capacity(ref_ids.len());
    for id in &ref_ids {
        let file = format!("{id}.vox");
        let cond = match conditioning {
            Some(dir) => {
                let p = dir.join(&file);
                if !p.exists() {
                    return Err(CliError::data(format!("missing conditioning grid {}", p.display())));
                }
                VoxelGrid::load(&p)?
            }
            None => VoxelGrid::new(GRID_RESOLUTION),
        };
        pairs.push(EvalPair {
            id: id.clone(),
            generated: VoxelGrid::load(&generated.join(&file))?,
            target: VoxelGrid::load(&reference.join(&file))?,
            conditioning: cond,
        });
    }
    let result = evaluate_pairs(&pairs, &cfg.eval.points, cfg.eval.dilate_recall)?;
    if let Some(parent) = report.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
        cfg.write_resolved(parent)?;
    }
    write_file(report, result.to_json())?;
    if let Some(path) = csv {
        write_file(path, result.to_csv())?;
    }
    let a = &result.aggregate;
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
    println!(
        "n {} chamfer {} recall {} iou {} mmd {}‰ cov {:.3}",
        a.n,
        fmt(a.chamfer_mean),
        fmt(a.recall_mean),
        fmt(a.iou_mean),
        fmt(a.mmd_permille),
        a.cov
    );
    Ok(())
}

fn parse_variants(list: Option<&str>) -> CliResult<Vec<Variant>> {
    match list {
        None => Ok(Variant::ALL.to_vec()),
        Some(s) => s
            .split(',')
            .map(|v| Variant::parse(v.trim()).map_err(CliError::from_core))
            .collect(),
    }
}

pub fn ablate(
    common: &Common,
    corpus_dir: &Path,
    out: &Path,
    variants: Option<&str>,
    steps: Option<usize>,
    view_sweep: usize,
) -> CliResult<()> {
    let mut cfg = load_config(common)?;
    if let Some(s) = steps {
        cfg.train.steps = s;
        cfg.train.epochs = None;
    }
    cfg.validate()?;
    let variants = parse_variants(variants)?;
    let corpus = Corpus::load(corpus_dir)?;
    let hash = corpus_hash(&corpus)?;
    create_dir(out)?;
    cfg.write_resolved(out)?;
    let test: Vec<&LoadedObject> = corpus.split(Split::Test).collect();
    if test.is_empty() {
        return Err(CliError::data("corpus has no test objects; raise data.test_fraction"));
    }
    let mut rows = Vec::new();
    for v in variants {
        let dir = out.join(v.name());
        create_dir(&dir)?;
        let ckpt = dir.join(CHECKPOINT_FILE);
        let trainer = if ckpt.exists() {
            println!("{}: reusing {}", v.name(), ckpt.display());
            load_checkpoint(&ckpt, Some(&hash))?
        } else {
            let (m, t) = v.configure(&cfg.model, &cfg.train);
            let mut trainer = Trainer::new(m, t, hash)?;
            let data = TrainSet::from_corpus(&corpus, &trainer.model.config)?;
            let until = trainer.total_steps(&data) as u64;
            println!("{}: training {until} steps", v.name());
            let losses = train_to(&mut trainer, &data, until, &dir, 0, false)?;
            report_losses(&losses);
            trainer
        };
        let report = evaluate_model(
            &trainer.model,
            test.iter().copied(),
            v.sequential(),
            &cfg.sample,
            &cfg.eval,
        )?;
        write_file(&dir.join("report.json"), report.to_json())?;
        rows.push(AblationRow::from_report(v.name(), &report));
        if v == Variant::Full {
            for k in 1..=view_sweep {
                let ec = EvalConfig { views: k, ..cfg.eval };
                let r = evaluate_model(&trainer.model, test.iter().copied(), false, &cfg.sample, &ec)?;
                rows.push(AblationRow::from_report(&format!("full@{k}"), &r));
            }
        }
    }
    let table = ablation_table(&rows);
    write_file(&out.join("ablation.csv"), ablation_csv(&rows))?;
    write_file(&out.join("ablation.txt"), &table)?;
    print!("{table}");
    Ok(())
}
