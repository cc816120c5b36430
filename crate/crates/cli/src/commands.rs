use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use pxm4::analysis::{
    self, export_embeddings, parse_layers, pooled_sentences, recall_at_k, read_probe_tsv, write_centroids_tsv,
    write_probe_csv, write_retrieval_csv, ProbeConfig, ProbeDataset, RetrievalRow, RECALL_K,
};
use pxm4::data::{self, parse_conllu, read_bio, read_cls_tsv, read_corpus, subsample, toy, CorpusRecord};
use pxm4::metrics::{write_metric_csv, MetricRow};
use pxm4::model::{ModelConfig, PixelModel};
use pxm4::render::{write_patch_file, RenderConfig, Renderer};
use pxm4::train::{
    finetune_lr_grid, pretrain, write_trace_csv, EvalCadence, FinetuneConfig, FinetunedModel, PretrainConfig, Task,
    TaskData, DEFAULT_LR_GRID,
};

use crate::{
    Cli, CliError, Command, EvaluateArgs, ExportArgs, FinetuneArgs, ModelArgs, PretrainArgs, ProbeArgs, RenderArgs,
    RetrieveArgs, SubsampleArgs,
};

pub const DEFAULT_SUBSAMPLE_SIZES: [usize; 4] = [1024, 2048, 4096, 8192];
const DEFAULT_OUT: &str = "pxm4-out";

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Render(a) => render(cli, a),
        Command::Pretrain(a) => pretrain_cmd(cli, a),
        Command::Finetune(a) => finetune_cmd(cli, a),
        Command::Evaluate(a) => evaluate(cli, a),
        Command::Probe(a) => probe(cli, a),
        Command::Retrieve(a) => retrieve(cli, a),
        Command::ExportEmbeddings(a) => export(cli, a),
        Command::Subsample(a) => subsample_cmd(cli, a),
    }
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))
}

/// Prints the dry-run plan to stdout.
fn plan(cmd: &str, outputs: &[PathBuf]) {
    println!("dry run: {cmd}");
    for o in outputs {
        println!("  would write {}", o.display());
    }
}

fn preset(name: &str) -> Result<ModelConfig, CliError> {
    ModelConfig::preset(name).ok_or_else(|| CliError::Usage(format!("unknown preset `{name}`")))
}

/// Loads the checkpoint, or builds a fresh preset model deep enough for
/// `min_layers`.
fn encoder(m: &ModelArgs, min_layers: usize, seed: u64) -> Result<PixelModel<f32>, CliError> {
    if let Some(path) = &m.model {
        return Ok(PixelModel::load(path)?);
    }
    let mut cfg = preset(&m.preset)?;
    if cfg.num_layers < min_layers {
        cfg.num_layers = min_layers;
    }
    log::warn!(
        "no --model given; using a randomly initialised `{}` encoder with {} layers",
        m.preset,
        cfg.num_layers
    );
    Ok(PixelModel::new(cfg, seed)?)
}

/// Layer list plus the depth it needs (`None` = every layer of the model).
fn layer_request(spec: &str) -> Result<Option<Vec<usize>>, CliError> {
    if spec == "all" {
        return Ok(None);
    }
    parse_layers(spec).map(Some).map_err(|e| CliError::Usage(e.to_string()))
}

fn resolve_layers(req: Option<Vec<usize>>, model: &PixelModel<f32>) -> Vec<usize> {
    req.unwrap_or_else(|| (0..=model.config().num_layers).collect())
}

fn model_with_layers(m: &ModelArgs, spec: &str, seed: u64) -> Result<(PixelModel<f32>, Vec<usize>), CliError> {
    let req = layer_request(spec)?;
    let need = req.as_ref().and_then(|l| l.iter().max().copied()).unwrap_or(0);
    let model = encoder(m, need, seed)?;
    let layers = resolve_layers(req, &model);
    Ok((model, layers))
}

fn render(cli: &Cli, a: &RenderArgs) -> Result<(), CliError> {
    let out = cli
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("render needs --out <file>".into()))?;
    let lines: Vec<String> = open(&a.input)?
        .lines()
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|l| !l.trim().is_empty())
        .collect();
    let r = Renderer::new(RenderConfig::default().with_max_patches(a.max_patches))?;
    if cli.dry_run {
        plan(&format!("render {} lines", lines.len()), &[out]);
        return Ok(());
    }
    let seqs: Vec<_> = lines.iter().map(|l| r.render_text(l)).collect();
    let truncated: usize = seqs.iter().map(|s| s.truncated_words).sum();
    if truncated > 0 {
        log::warn!("{truncated} words did not fit into {} patches", a.max_patches);
    }
    let mut w = create(&out)?;
    write_patch_file(&mut w, &seqs)?;
    w.flush()?;
    log::info!("rendered {} sequences to {}", seqs.len(), out.display());
    Ok(())
}

fn pretrain_cmd(cli: &Cli, a: &PretrainArgs) -> Result<(), CliError> {
    let corpus = match &a.corpus {
        Some(p) => read_corpus(open(p)?)?,
        None => {
            log::warn!("no --corpus given; using the built-in 8-sentence toy corpus");
            toy::smoke_corpus()
        }
    };
    let mut cfg = if a.model.preset == "smoke" && a.model.model.is_none() {
        PretrainConfig::smoke()
    } else {
        PretrainConfig::default()
    };
    cfg.seed = cli.seed;
    cfg.steps = a.steps.unwrap_or(cfg.steps);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.optim.peak_lr = a.lr.unwrap_or(cfg.optim.peak_lr);
    cfg.optim.warmup_steps = a.warmup.unwrap_or(cfg.optim.warmup_steps).min(cfg.steps);
    if a.grad_clip.is_some() {
        cfg.optim.grad_clip = a.grad_clip;
    }
    let dir = out_dir(cli);
    cfg.checkpoint_every = a.checkpoint_every;
    if a.checkpoint_every > 0 {
        cfg.checkpoint_dir = Some(dir.join("checkpoints"));
    }
    let mut model = encoder(&a.model, 0, cli.seed)?;
    log::info!("pretrain config: {cfg:?}");
    let outputs = [dir.join("model.pxck"), dir.join("pretrain_trace.csv")];
    if cli.dry_run {
        plan(
            &format!("pretrain {} steps on {} sentences", cfg.steps, corpus.len()),
            &outputs,
        );
        return Ok(());
    }
    std::fs::create_dir_all(&dir)?;
    let out = pretrain(&mut model, &corpus, &cfg)?;
    if !model.params().all_finite() {
        return Err(CliError::Numeric("pretraining produced non-finite weights".into()));
    }
    if out.skipped_steps > 0 {
        log::warn!("{} steps skipped on non-finite gradients", out.skipped_steps);
    }
    if let (Some(first), Some(last)) = (out.losses.first(), out.losses.last()) {
        log::info!("loss {first:.4} -> {last:.4} over {} steps", out.losses.len());
    }
    model.save(&outputs[0])?;
    write_trace_csv(create(&outputs[1])?, &out.trace)?;
    Ok(())
}

fn load_task_data(task: Task, path: &Path) -> Result<TaskData, CliError> {
    if path.as_os_str() == "toy" {
        return Ok(match task {
            Task::Cls => TaskData::Cls(toy::classification()),
            Task::Udp => TaskData::Udp(toy::treebank()),
            Task::Ner => TaskData::Ner(toy::ner()),
        });
    }
    let r = open(path)?;
    Ok(match task {
        Task::Cls => TaskData::Cls(read_cls_tsv(r)?),
        Task::Udp => TaskData::Udp(parse_conllu(r)?),
        Task::Ner => {
            let f = read_bio(r)?;
            if f.repairs > 0 {
                log::warn!("{}: repaired {} ill-formed BIO tags", path.display(), f.repairs);
            }
            TaskData::Ner(f.examples)
        }
    })
}

fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    if s == "default" {
        return Ok(DEFAULT_LR_GRID.to_vec());
    }
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| CliError::Usage(format!("bad learning rate `{x}`"))))
        .collect()
}

fn finetune_cmd(cli: &Cli, a: &FinetuneArgs) -> Result<(), CliError> {
    let train = load_task_data(a.task, &a.data)?;
    let val = match &a.val {
        Some(p) => load_task_data(a.task, p)?,
        None => {
            log::warn!("no --val given; selecting on the training data");
            train.clone()
        }
    };
    let test = a.test.as_deref().map(|p| load_task_data(a.task, p)).transpose()?;
    let mut cfg = FinetuneConfig::for_task(a.task);
    cfg.seed = cli.seed;
    cfg.max_steps = a.max_steps.unwrap_or(cfg.max_steps);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.patience = a.patience.unwrap_or(cfg.patience);
    cfg.dropout = a.dropout.unwrap_or(cfg.dropout);
    cfg.warmup_steps = a.warmup.unwrap_or(cfg.warmup_steps).min(cfg.max_steps);
    if let Some(n) = a.eval_every {
        cfg.eval = EvalCadence::Steps(n);
    }
    let grid = match (a.lr, &a.lr_grid) {
        (Some(lr), _) => vec![lr],
        (None, Some(g)) => parse_grid(g)?,
        (None, None) => vec![cfg.lr],
    };
    cfg.validate()?;
    let enc = encoder(&a.model, 0, cli.seed)?;
    let dir = out_dir(cli);
    let outputs = [
        dir.join("finetuned.pxck"),
        dir.join("finetune_trace.csv"),
        dir.join("metrics.csv"),
    ];
    if cli.dry_run {
        plan(
            &format!(
                "finetune {} on {} train / {} val examples, lr grid {grid:?}",
                a.task,
                train.len(),
                val.len()
            ),
            &outputs,
        );
        return Ok(());
    }
    let (lr, out, summary) = finetune_lr_grid(&enc, &train, &val, &cfg, &grid)?;
    for (l, m) in &summary {
        log::info!("lr {l:e}: best validation {} {m:.4}", a.task.metric_name());
    }
    log::info!(
        "selected lr {lr:e}; best step {} of {} (early stop: {})",
        out.best_step,
        out.steps_run,
        out.stopped_early
    );
    let mut rows = vec![metric_row(a.task, &a.lang, cli.seed, "val", a.task.metric_name(), out.best_metric)];
    if let Some(test) = &test {
        for (name, v) in out.model.evaluate(test)? {
            rows.push(metric_row(a.task, &a.lang, cli.seed, "test", name, v));
        }
    }
    std::fs::create_dir_all(&dir)?;
    out.model.save(&outputs[0])?;
    write_trace_csv(create(&outputs[1])?, &out.trace)?;
    write_metric_csv(create(&outputs[2])?, &rows)?;
    for r in &rows {
        println!("{}\t{:.6}", r.metric, r.value);
    }
    Ok(())
}

fn metric_row(task: Task, lang: &str, seed: u64, split: &str, metric: &str, value: f64) -> MetricRow {
    MetricRow {
        task: task.name().to_string(),
        lang: lang.to_string(),
        seed,
        metric: format!("{split}_{metric}"),
        value,
    }
}

fn evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<(), CliError> {
    let model = FinetunedModel::<f32>::load(&a.model)?;
    let data = load_task_data(model.task, &a.data)?;
    let out = out_dir(cli).join("metrics.csv");
    if cli.dry_run {
        plan(&format!("evaluate {} on {} examples", model.task, data.len()), &[out]);
        return Ok(());
    }
    let rows: Vec<MetricRow> = model
        .evaluate(&data)?
        .into_iter()
        .map(|(name, v)| metric_row(model.task, &a.lang, cli.seed, "eval", name, v))
        .collect();
    write_metric_csv(create(&out)?, &rows)?;
    for r in &rows {
        println!("{}\t{:.6}", r.metric, r.value);
    }
    Ok(())
}

fn probe(cli: &Cli, a: &ProbeArgs) -> Result<(), CliError> {
    let split = |names: &[&str]| -> Result<Vec<(String, String)>, CliError> {
        for n in names {
            let p = a.data.join(n);
            if p.exists() {
                return Ok(read_probe_tsv(open(&p)?)?);
            }
        }
        Err(CliError::Data(format!("{} lacks {}", a.data.display(), names.join(" or "))))
    };
    let data = ProbeDataset {
        task: a.task.clone().unwrap_or_else(|| {
            a.data
                .file_name()
                .map_or_else(|| "probe".into(), |n| n.to_string_lossy().into_owned())
        }),
        lang: a.lang.clone(),
        train: split(&["train.tsv"])?,
        val: split(&["val.tsv", "dev.tsv"])?,
        test: split(&["test.tsv"])?,
    };
    let (model, layers) = model_with_layers(&a.model, &a.layers, cli.seed)?;
    let mut cfg = ProbeConfig {
        seed: cli.seed,
        ..ProbeConfig::default()
    };
    cfg.steps = a.steps.unwrap_or(cfg.steps);
    cfg.lr = a.lr.unwrap_or(cfg.lr);
    let out = out_dir(cli).join("probe.csv");
    if cli.dry_run {
        plan(
            &format!(
                "probe {}/{} at layers {layers:?} ({} / {} / {} words)",
                data.task,
                data.lang,
                data.train.len(),
                data.val.len(),
                data.test.len()
            ),
            &[out],
        );
        return Ok(());
    }
    let rows = analysis::probe_layerwise(&model, &data, &layers, &RenderConfig::default(), &cfg)?;
    write_probe_csv(create(&out)?, &rows)?;
    Ok(())
}

/// Line-aligned sentences per language.
fn parallel_side(dir: Option<&Path>, lang: &str) -> Result<Vec<String>, CliError> {
    match dir {
        None => toy::parallel_side(lang).ok_or_else(|| {
            CliError::Usage(format!(
                "language `{lang}` not in the built-in parallel set ({})",
                toy::PARALLEL_LANGS.join(", ")
            ))
        }),
        Some(d) => Ok(open(&d.join(format!("{lang}.txt")))?
            .lines()
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .filter(|l| !l.trim().is_empty())
            .collect()),
    }
}

fn parse_pairs(s: &str) -> Result<Vec<(String, String)>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .split_once('-')
                .filter(|(a, b)| !a.is_empty() && !b.is_empty())
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .ok_or_else(|| CliError::Usage(format!("bad language pair `{p}`, expected src-tgt")))
        })
        .collect()
}

fn retrieve(cli: &Cli, a: &RetrieveArgs) -> Result<(), CliError> {
    let pairs = parse_pairs(&a.pairs)?;
    let mut langs: Vec<&str> = Vec::new();
    for (s, t) in &pairs {
        for l in [s, t] {
            if !langs.contains(&l.as_str()) {
                langs.push(l);
            }
        }
    }
    let texts: Vec<(&str, Vec<String>)> = langs
        .iter()
        .map(|&l| Ok((l, parallel_side(a.parallel.as_deref(), l)?)))
        .collect::<Result<_, CliError>>()?;
    for (s, t) in &pairs {
        let n = |l: &str| texts.iter().find(|(x, _)| *x == l).map_or(0, |(_, v)| v.len());
        if n(s) != n(t) {
            return Err(CliError::Data(format!("{s} has {} sentences but {t} has {}", n(s), n(t))));
        }
    }
    let (model, layers) = model_with_layers(&a.model, &a.layers, cli.seed)?;
    let out = out_dir(cli).join("retrieval.csv");
    if cli.dry_run {
        plan(
            &format!("retrieve {} pairs at {} layers", pairs.len(), layers.len()),
            &[out],
        );
        return Ok(());
    }
    // unit vectors per language, [layer][sentence]
    let mut unit: Vec<(&str, Vec<Vec<Vec<f64>>>)> = Vec::new();
    for (l, sents) in &texts {
        let pooled = pooled_sentences(&model, &RenderConfig::default(), sents, &layers)?;
        let per_layer = (0..layers.len())
            .map(|li| {
                pooled
                    .iter()
                    .enumerate()
                    .map(|(i, v)| analysis::l2_normalize(&v[li], i))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        unit.push((l, per_layer));
    }
    let get = |l: &str| &unit.iter().find(|(x, _)| *x == l).expect("embedded above").1;
    let mut rows = Vec::new();
    for (s, t) in &pairs {
        for (li, &layer) in layers.iter().enumerate() {
            let r = recall_at_k(&get(s)[li], &get(t)[li], RECALL_K)?;
            rows.push(RetrievalRow {
                lang_pair: format!("{s}-{t}"),
                layer,
                recall_at_5: r,
            });
        }
    }
    write_retrieval_csv(create(&out)?, &rows)?;
    log::info!("wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}

fn export(cli: &Cli, a: &ExportArgs) -> Result<(), CliError> {
    let records: Vec<CorpusRecord> = match &a.corpus {
        Some(p) => read_corpus(open(p)?)?,
        None => toy::PARALLEL_LANGS
            .iter()
            .flat_map(|l| {
                toy::parallel_side(l)
                    .unwrap_or_default()
                    .into_iter()
                    .map(move |t| CorpusRecord::new(t, *l))
            })
            .collect(),
    };
    let (model, layers) = model_with_layers(&a.model, &a.layers, cli.seed)?;
    let dir = out_dir(cli);
    let outputs = [dir.join("embeddings.tsv"), dir.join("centroids.tsv")];
    if cli.dry_run {
        plan(
            &format!("embed {} sentences at {} layers", records.len(), layers.len()),
            &outputs,
        );
        return Ok(());
    }
    let pairs: Vec<(String, String)> = records.into_iter().map(|r| (r.lang, r.text)).collect();
    let emb = analysis::embed_corpus(&model, &RenderConfig::default(), &pairs, &layers)?;
    std::fs::create_dir_all(&dir)?;
    export_embeddings(&outputs[0], &emb)?;
    let mut centroids = Vec::new();
    for &l in &layers {
        for (lang, c) in analysis::centroids_at_layer(&emb, l)? {
            centroids.push((lang, l, c));
        }
    }
    write_centroids_tsv(create(&outputs[1])?, &centroids)?;
    log::info!("exported {} embeddings", emb.len());
    Ok(())
}

fn is_block_format(path: &Path, explicit: Option<&str>) -> Result<bool, CliError> {
    match explicit {
        Some("blocks") => Ok(true),
        Some("lines") => Ok(false),
        Some(f) => Err(CliError::Usage(format!("unknown format `{f}`, expected lines or blocks"))),
        None => Ok(matches!(
            path.extension().and_then(|e| e.to_str()),
            Some("conllu" | "bio" | "conll")
        )),
    }
}

/// Items of a file: single lines, or blank-line separated blocks.
fn read_items(path: &Path, blocks: bool) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if !blocks {
        return Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect());
    }
    let mut items = Vec::new();
    let mut cur = String::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !cur.is_empty() {
                items.push(std::mem::take(&mut cur));
            }
        } else {
            cur.push_str(line);
            cur.push('\n');
        }
    }
    if !cur.is_empty() {
        items.push(cur);
    }
    Ok(items)
}

fn subsample_cmd(cli: &Cli, a: &SubsampleArgs) -> Result<(), CliError> {
    let sizes: Vec<usize> = a
        .sizes
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| CliError::Usage(format!("bad size `{s}`"))))
        .collect::<Result<_, _>>()?;
    let blocks = is_block_format(&a.input, a.format.as_deref())?;
    let items = read_items(&a.input, blocks)?;
    if let Some(&too_big) = sizes.iter().find(|&&s| s > items.len()) {
        return Err(data::DataError::Size {
            requested: too_big,
            available: items.len(),
        }
        .into());
    }
    let stem = a.input.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned());
    let ext = a.input.extension().map_or_else(String::new, |e| format!(".{}", e.to_string_lossy()));
    let dir = out_dir(cli);
    let mut outputs = Vec::new();
    for &size in &sizes {
        for i in 0..a.seeds {
            let seed = cli.seed + i;
            outputs.push((dir.join(format!("{stem}.n{size}.s{seed}{ext}")), size, seed));
        }
    }
    if cli.dry_run {
        let paths: Vec<PathBuf> = outputs.iter().map(|o| o.0.clone()).collect();
        plan(&format!("subsample {} items into {} subsets", items.len(), paths.len()), &paths);
        return Ok(());
    }
    for (path, size, seed) in &outputs {
        let subset = subsample(&items, *size, *seed)?;
        let mut w = create(path)?;
        // blocks keep their trailing newline, so this also restores the separator line
        for item in &subset {
            writeln!(w, "{item}")?;
        }
        w.flush()?;
    }
    log::info!("wrote {} subsets to {}", outputs.len(), dir.display());
    Ok(())
}
