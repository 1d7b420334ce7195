use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use trajgpt::bench::run_bench;
use trajgpt::datagen::{generate_cohort, read_dataset, split, write_dataset, GeneratorSpec, IrregularSequence};
use trajgpt::inference::{
    cut_targets, evaluate, forecast_patient, marginal_frequencies, risk_trajectory, sequence_embedding, EvalProtocol,
    EvalReport, ForecastRecord,
};
use trajgpt::model::{
    decode_header, encode_checkpoint_with, load_checkpoint, masked_nll_loss, train, AdamState, Example, ModelConfig,
    ModelParams, TrainConfig,
};
use trajgpt::numerics::top_k;
use trajgpt::sra::SraForm;
use trajgpt::{Error, Precision, Result, Scalar};

use crate::config::{InferenceMode, Loaded};
use crate::output::{ensure_dir, meta, sha256_bytes, sha256_file, write_atomic, write_report, JsonLines};

pub struct Ctx {
    pub loaded: Loaded,
    pub inference: InferenceMode,
    pub out_override: Option<PathBuf>,
}

impl Ctx {
    fn meta(&self, command: &str) -> Value {
        meta(command, &self.loaded.hash)
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.out_override.clone().unwrap_or_else(|| self.loaded.out_dir());
        ensure_dir(&dir)?;
        Ok(dir)
    }

    fn checkpoint_path(&self) -> Result<PathBuf> {
        Ok(match &self.loaded.config.checkpoint {
            Some(p) => self.loaded.resolve(p),
            None => self.out_dir()?.join("model.ckpt"),
        })
    }

    fn split_path(&self, name: &str) -> PathBuf {
        self.loaded.data_dir().join(format!("{name}.jsonl"))
    }

    fn read_split(&self, name: &str) -> Result<Vec<IrregularSequence>> {
        read_dataset(self.split_path(name))
    }

    fn read_split_if_present(&self, name: &str) -> Result<Option<Vec<IrregularSequence>>> {
        let p = self.split_path(name);
        if p.exists() {
            read_dataset(p).map(Some)
        } else {
            Ok(None)
        }
    }

    fn spec(&self) -> Result<Option<GeneratorSpec>> {
        self.loaded.spec_path().map(GeneratorSpec::load).transpose()
    }

    fn require(&self, path: &Path, what: &str) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(Error::Io {
                path: path.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, format!("{what} not found")),
            })
        }
    }
}

#[derive(Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    config_hash: String,
    spec_sha256: String,
    seed: u64,
    patients: usize,
    min_len: usize,
    max_len: usize,
    split: [f64; 3],
    files: Vec<ManifestFile>,
}

#[derive(Serialize)]
struct ManifestFile {
    name: String,
    records: usize,
    sha256: String,
}

pub fn generate(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.loaded.config;
    let spec_path = ctx.loaded.spec_path().ok_or_else(|| Error::Contract("generate needs `data.spec`".into()))?;
    ctx.require(&spec_path, "generator spec")?;
    let seed = ctx.loaded.seed()?;
    let spec = GeneratorSpec::load(&spec_path)?;
    let d = &cfg.data;
    let dir = ctx.out_override.clone().unwrap_or_else(|| ctx.loaded.data_dir());
    ensure_dir(&dir)?;
    let cohort = generate_cohort(&spec, d.patients, d.min_len, d.max_len, seed)?;
    let (tr, va, te) = split(&cohort, (d.split[0], d.split[1], d.split[2]), seed)?;
    let mut files = Vec::new();
    for (name, part) in [("train", &tr), ("valid", &va), ("test", &te)] {
        let path = dir.join(format!("{name}.jsonl"));
        write_dataset(part, &path)?;
        files.push(ManifestFile { name: format!("{name}.jsonl"), records: part.len(), sha256: sha256_file(&path)? });
    }
    let manifest = Manifest {
        tool: "trajgpt",
        version: crate::output::VERSION,
        config_hash: ctx.loaded.hash.clone(),
        spec_sha256: sha256_bytes(spec.to_toml().as_bytes()),
        seed,
        patients: d.patients,
        min_len: d.min_len,
        max_len: d.max_len,
        split: d.split,
        files,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))? + "\n";
    let path = dir.join("manifest.json");
    std::fs::write(&path, &text).map_err(|e| Error::Io { path: path.clone(), source: e })?;
    println!(
        "wrote {} / {} / {} patients to {} (manifest {})",
        tr.len(),
        va.len(),
        te.len(),
        dir.display(),
        sha256_bytes(text.as_bytes())
    );
    Ok(())
}

fn examples(seqs: &[IrregularSequence], cfg: &ModelConfig, max_len: Option<usize>) -> Result<Vec<Example>> {
    seqs.iter()
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.validate(Some(cfg.vocab_size))?;
            Example::from_sequence(s, max_len)
        })
        .collect()
}

/// Mean next-token cross-entropy per target token.
fn mean_nll<T: Scalar>(params: &ModelParams<T>, data: &[Example]) -> Result<Option<f64>> {
    let (mut total, mut count) = (0.0, 0usize);
    for ex in data {
        let logits = trajgpt::model::forward(params, &ex.tokens, &ex.times, SraForm::Parallel)?;
        let n = ex.targets.iter().filter(|&&y| y != params.config.pad_id()).count();
        if n > 0 {
            total += masked_nll_loss(&logits, &ex.targets, Some(params.config.pad_id()))?.as_f64() * n as f64;
            count += n;
        }
    }
    Ok((count > 0).then(|| total / count as f64))
}

/// Trains `cfg` to `tc.steps`, resuming from `ckpt` when it exists, and
/// leaves the final state in `ckpt`.
fn train_to_checkpoint<T: Scalar>(
    cfg: &ModelConfig,
    tc: &TrainConfig,
    data: &[Example],
    ckpt: &Path,
    every: u64,
    prov: &Value,
    log: Option<&Path>,
) -> Result<ModelParams<T>> {
    let (mut params, mut adam) = if ckpt.exists() {
        let ck = load_checkpoint::<T>(ckpt)?;
        if ck.header.config != *cfg {
            return Err(Error::Contract(format!("{} was trained with a different model config", ckpt.display())));
        }
        if ck.header.seed != tc.seed {
            return Err(Error::Contract(format!(
                "{} was trained with seed {}, not {}",
                ckpt.display(),
                ck.header.seed,
                tc.seed
            )));
        }
        let adam = ck
            .optimizer
            .ok_or_else(|| Error::Contract(format!("{} holds no optimizer state to resume from", ckpt.display())))?;
        if adam.step > tc.steps {
            return Err(Error::Contract(format!("{} is already at step {} > {}", ckpt.display(), adam.step, tc.steps)));
        }
        if adam.step > 0 {
            eprintln!("resuming {} from step {}", ckpt.display(), adam.step);
        }
        (ck.params, adam)
    } else {
        let p = ModelParams::<T>::init(cfg, tc.seed)?;
        let a = AdamState::new(p.num_params());
        (p, a)
    };
    let start = adam.step;
    let mut log = match log {
        Some(path) => Some(JsonLines::reopen(path, prov, |v| v["step"].as_u64().is_some_and(|s| s <= start))?),
        None => None,
    };
    write_atomic(ckpt, &encode_checkpoint_with(&params, Some(&adam), tc.seed, Some(prov.clone())))?;
    let mut failure = None;
    let result = train(&mut params, &mut adam, data, tc, |stats, p, a| {
        if let Some(log) = log.as_mut() {
            log.write(stats)?;
        }
        if every > 0 && stats.step % every == 0 {
            // lines up to this step must survive a kill, or a resume would lose them
            if let Some(log) = log.as_mut() {
                log.flush()?;
            }
            write_atomic(ckpt, &encode_checkpoint_with(p, Some(a), tc.seed, Some(prov.clone())))?;
        }
        if stats.step % 100 == 0 {
            eprintln!("step {:>6}  loss {:.4}  nll {:.4}", stats.step, stats.loss, stats.nll);
        }
        Ok(())
    });
    if let Err(e) = result {
        failure = Some(e);
    }
    if let Some(log) = log {
        log.finish()?;
    }
    if let Some(e) = failure {
        return Err(e);
    }
    write_atomic(ckpt, &encode_checkpoint_with(&params, Some(&adam), tc.seed, Some(prov.clone())))?;
    Ok(params)
}

#[derive(Serialize)]
struct PretrainReport {
    steps: u64,
    seed: u64,
    precision: Precision,
    checkpoint: PathBuf,
    checkpoint_sha256: String,
    valid_nll: Option<f64>,
    unigram_entropy: Option<f64>,
    below_unigram: Option<bool>,
}

pub fn pretrain(ctx: &Ctx) -> Result<()> {
    let seed = ctx.loaded.seed()?;
    let cfg = ctx.loaded.config.model.build()?;
    let tc = ctx.loaded.config.train.build(seed)?;
    ctx.require(&ctx.split_path("train"), "training split")?;
    match cfg.precision {
        Precision::Single => pretrain_as::<f32>(ctx, &cfg, &tc),
        Precision::Double => pretrain_as::<f64>(ctx, &cfg, &tc),
    }
}

fn pretrain_as<T: Scalar>(ctx: &Ctx, cfg: &ModelConfig, tc: &TrainConfig) -> Result<()> {
    let out = ctx.out_dir()?;
    let ckpt = ctx.checkpoint_path()?;
    let train_data = examples(&ctx.read_split("train")?, cfg, tc.max_len)?;
    let valid = ctx.read_split_if_present("valid")?.unwrap_or_default();
    let valid_data = examples(&valid, cfg, tc.max_len)?;
    let m = ctx.meta("pretrain");
    let every = ctx.loaded.config.train.checkpoint_every;
    let params = train_to_checkpoint::<T>(cfg, tc, &train_data, &ckpt, every, &m, Some(&out.join("loss.jsonl")))?;
    let valid_nll = mean_nll(&params, &valid_data)?;
    let unigram_entropy = ctx.spec()?.map(|s| s.unigram_entropy());
    let report = PretrainReport {
        steps: tc.steps,
        seed: tc.seed,
        precision: cfg.precision,
        checkpoint: ckpt.clone(),
        checkpoint_sha256: sha256_file(&ckpt)?,
        valid_nll,
        unigram_entropy,
        below_unigram: valid_nll.zip(unigram_entropy).map(|(v, u)| v < u),
    };
    write_report(&out.join("pretrain_report.json"), &m, &report)?;
    println!(
        "trained {} steps; validation nll {}; unigram entropy {}",
        tc.steps,
        valid_nll.map_or("n/a".into(), |v| format!("{v:.4}")),
        unigram_entropy.map_or("n/a".into(), |v| format!("{v:.4}"))
    );
    Ok(())
}

fn checkpoint_precision(ctx: &Ctx, requested: Option<Precision>) -> Result<(PathBuf, Precision)> {
    let path = ctx.checkpoint_path()?;
    ctx.require(&path, "checkpoint")?;
    let bytes = std::fs::read(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
    let header = decode_header(&bytes)?;
    Ok((path, requested.unwrap_or(header.precision)))
}

fn load_params<T: Scalar>(path: &Path) -> Result<ModelParams<T>> {
    Ok(load_checkpoint::<T>(path)?.params)
}

macro_rules! with_precision {
    ($prec:expr, $f:ident ( $($arg:expr),* )) => {
        match $prec {
            Precision::Single => $f::<f32>($($arg),*),
            Precision::Double => $f::<f64>($($arg),*),
        }
    };
}

fn print_recall(name: &str, r: Option<&trajgpt::inference::RecallReport>) {
    match r {
        Some(r) => {
            let cells: Vec<String> = r.recall.iter().map(|(k, v)| format!("@{k} {v:.4}")).collect();
            println!("{name:<16} {:>6} targets  {}", r.targets, cells.join("  "));
        }
        None => println!("{name:<16} not applicable"),
    }
}

pub fn evaluate_cmd(ctx: &Ctx, requested: Option<Precision>) -> Result<()> {
    ctx.require(&ctx.split_path("test"), "test split")?;
    let (path, prec) = checkpoint_precision(ctx, requested)?;
    with_precision!(prec, evaluate_as(ctx, &path))
}

fn evaluate_as<T: Scalar>(ctx: &Ctx, ckpt: &Path) -> Result<()> {
    let params = load_params::<T>(ckpt)?;
    let protocol = ctx.loaded.config.eval.build();
    protocol.validate(params.config.vocab_size)?;
    let test = ctx.read_split("test")?;
    let spec = ctx.spec()?;
    if let Some(s) = &spec {
        if s.vocab_size != params.config.vocab_size {
            return Err(Error::Contract(format!(
                "spec vocab {} differs from model vocab {}",
                s.vocab_size, params.config.vocab_size
            )));
        }
    }
    let marginal = ctx.read_split_if_present("train")?.map(|tr| marginal_frequencies(&tr, params.config.vocab_size));
    let (report, records) = evaluate(&params, &test, &protocol, spec.as_ref(), marginal.as_deref())?;
    let out = ctx.out_dir()?;
    let m = ctx.meta("evaluate");
    write_report(&out.join("eval_report.json"), &m, &report)?;
    let mut lines = JsonLines::create(&out.join("forecasts.jsonl"), &m)?;
    for r in &records {
        lines.write(r)?;
    }
    lines.finish()?;
    print_eval(&report);
    Ok(())
}

fn print_eval(report: &EvalReport) {
    println!("{} patients, absorb mode {:?}", report.patients, report.protocol.absorb);
    print_recall("time_specific", report.time_specific.as_ref());
    print_recall("auto_regressive", Some(&report.auto_regressive));
    if let Some(b) = &report.bayes {
        print_recall("bayes", Some(b));
    }
    if let Some(m) = &report.marginal {
        print_recall("marginal", Some(m));
    }
}

pub fn forecast_cmd(ctx: &Ctx, requested: Option<Precision>) -> Result<()> {
    ctx.require(&ctx.split_path("test"), "test split")?;
    let (path, prec) = checkpoint_precision(ctx, requested)?;
    with_precision!(prec, forecast_as(ctx, &path))
}

fn forecast_as<T: Scalar>(ctx: &Ctx, ckpt: &Path) -> Result<()> {
    let params = load_params::<T>(ckpt)?;
    let protocol: EvalProtocol = ctx.loaded.config.eval.build();
    protocol.validate(params.config.vocab_size)?;
    if ctx.inference == InferenceMode::Time && !params.config.supports_time_specific() {
        return Err(Error::Contract("this model has no time-specific inference; use --inference auto".into()));
    }
    let k = protocol.ks.iter().copied().max().expect("validated");
    let out = ctx.out_dir()?;
    let mut lines = JsonLines::create(&out.join("forecast.jsonl"), &ctx.meta("forecast"))?;
    let mut n = 0;
    for seq in ctx.read_split("test")? {
        let Some((_, targets)) = cut_targets(&seq, &protocol) else {
            continue;
        };
        let fc = forecast_patient(&params, &seq, targets.clone(), &protocol)?;
        let (mode, rows) = match ctx.inference {
            InferenceMode::Time => ("time_specific", fc.time_specific.expect("supported")),
            InferenceMode::Auto => ("auto_regressive", fc.auto_regressive),
        };
        let truth = seq.tokens[targets.clone()].to_vec();
        let topk: Vec<Vec<usize>> = rows.iter().map(|r| top_k(r, k)).collect();
        let hits = topk.iter().zip(&truth).filter(|(t, y)| t.contains(y)).count();
        lines.write(&ForecastRecord {
            id: seq.id.clone(),
            mode: mode.into(),
            target_times: seq.times[targets].to_vec(),
            recall: hits as f64 / truth.len() as f64,
            topk,
            truth,
        })?;
        n += 1;
    }
    lines.finish()?;
    println!("wrote {n} forecasts to {}", out.join("forecast.jsonl").display());
    Ok(())
}

pub fn risk_cmd(ctx: &Ctx, requested: Option<Precision>) -> Result<()> {
    ctx.require(&ctx.split_path("test"), "test split")?;
    let (path, prec) = checkpoint_precision(ctx, requested)?;
    with_precision!(prec, risk_as(ctx, &path))
}

/// Evenly spaced grid from `before` years ahead of the first observation
/// to `after` years past the last.
pub fn risk_grid(seq: &IrregularSequence, step: f64, before: f64, after: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && before >= 0.0 && after >= 0.0) {
        return Err(Error::Contract("risk grid needs step > 0 and non-negative margins".into()));
    }
    let lo = seq.times[0] - before;
    let hi = seq.times[seq.len() - 1] + after;
    let n = ((hi - lo) / step).floor() as usize;
    Ok((0..=n).map(|i| lo + i as f64 * step).collect())
}

fn risk_as<T: Scalar>(ctx: &Ctx, ckpt: &Path) -> Result<()> {
    let params = load_params::<T>(ckpt)?;
    let rs = &ctx.loaded.config.risk;
    let code = match rs.code {
        Some(c) => c,
        None => ctx
            .spec()?
            .and_then(|s| s.comorbidity_boosts.first().map(|b| b.boosted))
            .ok_or_else(|| Error::Contract("set `risk.code` (no spec boost to default to)".into()))?,
    };
    let gap_mode = ctx.loaded.config.eval.build().gap_mode;
    let out = ctx.out_dir()?;
    let mut lines = JsonLines::create(&out.join("risk.jsonl"), &ctx.meta("risk"))?;
    let test = ctx.read_split("test")?;
    let take = rs.patients.unwrap_or(test.len());
    let mut n = 0;
    for seq in test.iter().filter(|s| !s.is_empty()).take(take) {
        let grid = risk_grid(seq, rs.step, rs.before, rs.after)?;
        let traj = risk_trajectory(&params, seq, code, &grid, gap_mode)?;
        let mut v = serde_json::to_value(&traj).map_err(|e| Error::Format(e.to_string()))?;
        v["id"] = json!(seq.id);
        lines.write(&v)?;
        n += 1;
    }
    lines.finish()?;
    println!("wrote {n} risk trajectories for code {code} to {}", out.join("risk.jsonl").display());
    Ok(())
}

pub fn embed_cmd(ctx: &Ctx, requested: Option<Precision>) -> Result<()> {
    ctx.require(&ctx.split_path("test"), "test split")?;
    let (path, prec) = checkpoint_precision(ctx, requested)?;
    with_precision!(prec, embed_as(ctx, &path))
}

fn embed_as<T: Scalar>(ctx: &Ctx, ckpt: &Path) -> Result<()> {
    let params = load_params::<T>(ckpt)?;
    let es = &ctx.loaded.config.embed;
    let out = ctx.out_dir()?;
    let mut lines = JsonLines::create(&out.join("embeddings.jsonl"), &ctx.meta("embed"))?;
    let (mut n, mut skipped) = (0, 0);
    for seq in ctx.read_split("test")? {
        let mut cut = es.truncate_at.unwrap_or(seq.len()).min(seq.len());
        if let Some(code) = es.truncate_before_code {
            if let Some(i) = seq.tokens.iter().position(|&c| c == code) {
                cut = cut.min(i);
            }
        }
        if cut == 0 {
            skipped += 1;
            continue;
        }
        let e = sequence_embedding(&params, &seq, cut)?;
        lines.write(&json!({ "id": seq.id, "truncate_at": cut, "embedding": e, "labels": seq.labels }))?;
        n += 1;
    }
    lines.finish()?;
    println!("wrote {n} embeddings ({skipped} skipped with nothing before the cut)");
    Ok(())
}

#[derive(Serialize)]
struct ModeCell {
    per_seed: Vec<f64>,
    median: f64,
}

#[derive(Serialize)]
struct AblationRow {
    variant: &'static str,
    /// `None` where the variant has no time-specific inference.
    time_specific: Option<ModeCell>,
    auto_regressive: ModeCell,
}

#[derive(Serialize)]
struct AblationTable {
    k: usize,
    seeds: Vec<u64>,
    steps: u64,
    rows: Vec<AblationRow>,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn ablate(ctx: &Ctx) -> Result<()> {
    let base = ctx.loaded.config.model.build()?;
    match base.precision {
        Precision::Single => ablate_as::<f32>(ctx, &base),
        Precision::Double => ablate_as::<f64>(ctx, &base),
    }
}

fn ablate_as<T: Scalar>(ctx: &Ctx, base: &ModelConfig) -> Result<()> {
    let ab = &ctx.loaded.config.ablate;
    if ab.seeds.is_empty() || ab.variants.is_empty() {
        return Err(Error::Contract("ablate needs at least one seed and one variant".into()));
    }
    ctx.require(&ctx.split_path("train"), "training split")?;
    ctx.require(&ctx.split_path("test"), "test split")?;
    let mut protocol = ctx.loaded.config.eval.build();
    if !protocol.ks.contains(&ab.k) {
        protocol.ks.push(ab.k);
    }
    protocol.validate(base.vocab_size)?;
    let train_seqs = ctx.read_split("train")?;
    let test = ctx.read_split("test")?;
    let out = ctx.out_dir()?.join("ablate");
    ensure_dir(&out)?;
    let mut rows = Vec::new();
    let mut steps = 0;
    for &variant in &ab.variants {
        let cfg = variant.apply(base);
        let (mut ts, mut ar) = (Vec::new(), Vec::new());
        for &seed in &ab.seeds {
            let tc = ctx.loaded.config.train.build(seed)?;
            steps = tc.steps;
            let data = examples(&train_seqs, &cfg, tc.max_len)?;
            eprintln!("== {} seed {seed}", variant.name());
            let ckpt = out.join(format!("{}_seed{seed}.ckpt", variant.name()));
            let params = train_to_checkpoint::<T>(&cfg, &tc, &data, &ckpt, 0, &ctx.meta("ablate"), None)?;
            let (report, _) = evaluate(&params, &test, &protocol, None, None)?;
            if let Some(r) = &report.time_specific {
                ts.push(r.recall[&ab.k]);
            }
            ar.push(report.auto_regressive.recall[&ab.k]);
        }
        let cell = |v: Vec<f64>| ModeCell { median: median(&v), per_seed: v };
        rows.push(AblationRow {
            variant: variant.name(),
            time_specific: cfg.supports_time_specific().then(|| cell(ts)),
            auto_regressive: cell(ar),
        });
    }
    let table = AblationTable { k: ab.k, seeds: ab.seeds.clone(), steps, rows };
    let m = ctx.meta("ablate");
    write_report(&ctx.out_dir()?.join("ablation.json"), &m, &table)?;
    let mut md = format!(
        "<!-- trajgpt {} config {} -->\n\n| variant | time-specific @{k} | auto-regressive @{k} |\n|---|---|---|\n",
        crate::output::VERSION,
        ctx.loaded.hash,
        k = ab.k
    );
    for r in &table.rows {
        let ts = r.time_specific.as_ref().map_or("—".to_string(), |c| format!("{:.4}", c.median));
        md.push_str(&format!("| {} | {} | {:.4} |\n", r.variant, ts, r.auto_regressive.median));
    }
    let path = ctx.out_dir()?.join("ablation.md");
    std::fs::write(&path, &md).map_err(|e| Error::Io { path, source: e })?;
    print!("{md}");
    Ok(())
}

pub fn bench(ctx: &Ctx) -> Result<()> {
    let mut cfg = ctx.loaded.config.bench.clone().unwrap_or_default();
    if let Some(s) = ctx.loaded.config.seed {
        cfg.seed = s;
    }
    let report = run_bench(&cfg)?;
    let ratios: Vec<Value> = trajgpt::bench::Kernel::ALL
        .iter()
        .map(|&k| json!({ "kernel": k, "doubling": report.doubling_ratios(k) }))
        .collect();
    let full = json!({ "report": report, "ratios": ratios, "query_ratio": report.query_ratio() });
    write_report(&ctx.out_dir()?.join("bench_report.json"), &ctx.meta("bench"), &full)?;
    for row in &report.train_step {
        println!("{:<14} N={:<5} {:.4}s", format!("{:?}", row.kernel), row.n, row.seconds);
    }
    for r in &ratios {
        println!("{r}");
    }
    for q in &report.query {
        println!("query after {:>5} events: {:.2}µs", q.history, q.seconds_per_query * 1e6);
    }
    Ok(())
}
