use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use termforge_core::adapters::{adapt_corpus, read_records, AdapterConfig};
use termforge_core::agent_protocol::PromptTemplate;
use termforge_core::filters::{
    complete_only, corpus_stats, decontaminate, embedded_reports, ngram_index, quality_filter, success_only,
    ByteEstimator, DecontamConfig, QualityRules, StatsConfig, SuccessThreshold,
};
use termforge_core::orchestrator::{
    aggregate_eval, load_tasks, run_campaign, scores_from_trajectories, CampaignConfig, ModelSpec, ScoreMode,
};
use termforge_core::rollout::{run_tests_with, HistoryMode, ModelClient, VerifyConfig};
use termforge_core::session::{ScriptSource, SessionConfig};
use termforge_core::sft_export::{
    apply_length_policy, build_mixture, trajectory_to_sample, write_jsonl, ExportError, LengthPolicy, MixtureSpec,
    DEFAULT_MAX_TOKENS,
};
use termforge_core::task_model::{parse_task_dir, validate_corpus, TaskSpec, INSTRUCTION_FILE};
use termforge_core::taskgen::{generate_seed_tasks, generate_skill_tasks, DomainRegistry, GenerateConfig, SeedRecord};

use crate::input::{create, read_lines, read_trajectories, string_fields, write_trajectories, ConfigSource};
use crate::{
    AdaptArgs, Cli, Command, DecontamArgs, EvalArgs, ExportArgs, FilterArgs, GenerateArgs, GenerateKind, RolloutArgs,
    StatsArgs, ValidateArgs, VerifyArgs,
};

pub fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = ConfigSource::load(cli.config.as_deref())?;
    match cli.command {
        Command::Validate(a) => validate(a),
        Command::Adapt(a) => adapt(a, cfg),
        Command::Generate(a) => generate(a, cfg),
        Command::Rollout(a) => rollout(a, &mut cfg),
        Command::Verify(a) => verify(a, cfg),
        Command::Decontaminate(a) => decontam(a, cfg),
        Command::Filter(a) => filter(a, cfg),
        Command::Stats(a) => stats(a, cfg),
        Command::Export(a) => export(a, cfg),
        Command::Eval(a) => eval(a, cfg),
    }
}

fn print_json(v: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn task_dirs(path: &Path) -> Result<Vec<PathBuf>> {
    if path.join(INSTRUCTION_FILE).is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(path)
        .with_context(|| format!("reading {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn validate(a: ValidateArgs) -> Result<ExitCode> {
    let mut tasks: Vec<TaskSpec> = Vec::new();
    let mut bad = 0usize;
    let mut seen = 0usize;
    for path in &a.paths {
        for dir in task_dirs(path)? {
            seen += 1;
            match parse_task_dir(&dir) {
                Ok(t) => tasks.push(t),
                Err(e) => {
                    bad += 1;
                    println!("FAIL {}: {e}", dir.display());
                }
            }
        }
    }
    let violations = validate_corpus(&tasks);
    for t in &tasks {
        let mine: Vec<_> = violations.iter().filter(|(id, _)| id == &t.id).map(|(_, v)| v).collect();
        if mine.is_empty() {
            println!("ok   {}", t.id);
        } else {
            bad += 1;
            for v in mine {
                println!("FAIL {}: {}: {}", t.id, v.field(), serde_json::to_string(v)?);
            }
        }
    }
    println!("{seen} task(s), {bad} invalid");
    Ok(if bad == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn adapt(a: AdaptArgs, mut cfg: ConfigSource) -> Result<ExitCode> {
    cfg.set_opt("image_ref", a.image_ref);
    let config: AdapterConfig = cfg.parse()?;
    let file = fs::File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    fs::create_dir_all(&a.out)?;
    let summary = adapt_corpus(read_records(BufReader::new(file)), &a.out, &config);
    print_json(&summary)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Deserialize)]
struct GenerateFile {
    #[serde(flatten)]
    generate: GenerateConfig,
    model: Option<ModelSpec>,
    registry: Option<PathBuf>,
    image_ref: Option<String>,
}

fn model_from(spec: Option<ModelSpec>, mock: Option<&Path>, cfg: &ConfigSource) -> Result<std::sync::Arc<dyn ModelClient>> {
    let spec = match (mock, spec) {
        (Some(p), _) => ModelSpec::Mock { path: p.to_path_buf() },
        (None, Some(ModelSpec::Mock { path })) => ModelSpec::Mock { path: cfg.resolve(&path) },
        (None, Some(s)) => s,
        (None, None) => bail!("no model configured; set `model` in the config or pass --mock"),
    };
    Ok(spec.build()?)
}

fn generate(a: GenerateArgs, mut cfg: ConfigSource) -> Result<ExitCode> {
    cfg.set_opt("count", a.count);
    cfg.set_opt("seed", a.seed);
    cfg.set_opt("workers", a.workers);
    cfg.set_opt("domains", a.domains.clone());
    cfg.set_opt("image_ref", a.image_ref.clone());
    let file: GenerateFile = cfg.parse()?;
    let model = model_from(file.model.clone(), a.mock.as_deref(), &cfg)?;
    fs::create_dir_all(&a.out)?;
    let summary = match a.kind {
        GenerateKind::Skill => {
            let registry = match a.registry.clone().or_else(|| file.registry.as_ref().map(|p| cfg.resolve(p))) {
                Some(p) => DomainRegistry::load(&p)?,
                None => DomainRegistry::builtin(),
            };
            generate_skill_tasks(&registry, model.as_ref(), &file.generate, &a.out)?
        }
        GenerateKind::Seed => {
            let Some(input) = &a.input else {
                bail!("seed generation needs --input <seeds.jsonl>");
            };
            let seeds = read_lines(input)?
                .iter()
                .enumerate()
                .map(|(i, l)| serde_json::from_str::<SeedRecord>(l).with_context(|| format!("seed line {}", i + 1)))
                .collect::<Result<Vec<_>>>()?;
            generate_seed_tasks(&seeds, model.as_ref(), file.image_ref.as_deref(), file.generate.workers, &a.out)
        }
    };
    print_json(&summary)?;
    Ok(ExitCode::SUCCESS)
}

fn rollout(a: RolloutArgs, cfg: &mut ConfigSource) -> Result<ExitCode> {
    cfg.set_path("tasks_dir", a.tasks.as_deref())?;
    cfg.set_path("output_dir", a.out.as_deref())?;
    cfg.set_opt("workers", a.workers);
    cfg.set_opt("trials_per_task", a.trials);
    cfg.set_opt("seed", a.seed);
    cfg.set_opt("max_new_episodes", a.max_new_episodes);
    if let Some(p) = &a.mock {
        let p = std::path::absolute(p)?;
        cfg.set("model", json!({"kind": "mock", "path": p}));
    }
    if let Some(p) = &a.script {
        let p = std::path::absolute(p)?;
        let session = cfg.value.entry("session").or_insert_with(|| json!({}));
        if let Value::Object(m) = session {
            m.insert("backend".into(), json!("scripted"));
            m.insert("script".into(), json!(p));
        }
    }
    let mut config: CampaignConfig = cfg.parse()?;
    config.resolve_paths(&cfg.base_dir);
    if let Some(ScriptSource::Path(p)) = &mut config.session.script {
        *p = cfg.resolve(p);
    }
    let report = run_campaign(&config)?;
    print_json(&report)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct VerifyFile {
    session: SessionConfig,
    verify: VerifyConfig,
    apply_solution: bool,
}

fn verify(a: VerifyArgs, mut cfg: ConfigSource) -> Result<ExitCode> {
    if a.apply_solution {
        cfg.set("apply_solution", true);
    }
    let mut file: VerifyFile = cfg.parse()?;
    if let Some(p) = &a.script {
        file.session.backend = termforge_core::session::BackendKind::Scripted;
        file.session.script = Some(ScriptSource::Path(p.clone()));
    } else if let Some(ScriptSource::Path(p)) = &mut file.session.script {
        *p = cfg.resolve(p);
    }
    let (tasks, invalid) = load_tasks(&a.tasks)?;
    for (id, why) in &invalid {
        eprintln!("skipping invalid task {id}: {why}");
    }
    let mut lines = Vec::new();
    let (mut passed, mut failed, mut errors) = (0, 0, 0);
    for task in &tasks {
        let line = match run_tests_with(task, &file.session, &file.verify, file.apply_solution) {
            Ok(r) => {
                if r.all_passed() {
                    passed += 1
                } else {
                    failed += 1
                }
                json!({"task_id": task.id, "report": r})
            }
            Err(e) => {
                errors += 1;
                json!({"task_id": task.id, "error": e.to_string()})
            }
        };
        lines.push(serde_json::to_string(&line)?);
    }
    match &a.out {
        Some(p) => {
            let mut w = create(p)?;
            for l in &lines {
                writeln!(w, "{l}")?;
            }
            w.flush()?;
        }
        None => lines.iter().for_each(|l| println!("{l}")),
    }
    eprintln!("{passed} passed, {failed} failed, {errors} error(s)");
    Ok(ExitCode::SUCCESS)
}

#[derive(Deserialize)]
#[serde(default)]
struct DecontamFile {
    #[serde(flatten)]
    decontam: DecontamConfig,
    id_field: String,
    text_field: String,
}

impl Default for DecontamFile {
    fn default() -> Self {
        Self {
            decontam: DecontamConfig::default(),
            id_field: "id".into(),
            text_field: "prompt".into(),
        }
    }
}

fn task_texts(task: &TaskSpec) -> Vec<String> {
    let mut out = vec![task.instruction.clone()];
    let sets = [Some(&task.environment), task.solution.as_ref(), Some(&task.tests)];
    for set in sets.into_iter().flatten() {
        out.extend(set.iter().filter_map(|f| String::from_utf8(f.content.clone()).ok()));
    }
    out
}

fn benchmark_texts(path: &Path) -> Result<Vec<String>> {
    if path.is_dir() {
        let mut out = Vec::new();
        for dir in task_dirs(path)? {
            out.extend(task_texts(&parse_task_dir(&dir)?));
        }
        return Ok(out);
    }
    let mut out = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        match serde_json::from_str::<Value>(line) {
            Ok(v) => string_fields(&v, &mut out),
            Err(e) => bail!("{}: line {}: {e}", path.display(), i + 1),
        }
    }
    Ok(out)
}

fn decontam(a: DecontamArgs, mut cfg: ConfigSource) -> Result<ExitCode> {
    cfg.set_opt("n", a.n);
    let file: DecontamFile = cfg.parse()?;
    if file.decontam.n == 0 {
        bail!("n must be at least 1");
    }
    let index = ngram_index(&benchmark_texts(&a.benchmark)?, &file.decontam);
    let mut records = Vec::new();
    for (i, line) in read_lines(&a.input)?.into_iter().enumerate() {
        let v: Value = serde_json::from_str(&line).with_context(|| format!("{}: line {}", a.input.display(), i + 1))?;
        let id = match v.get(&file.id_field) {
            Some(Value::String(s)) => s.clone(),
            Some(other) => other.to_string(),
            None => format!("line {}", i + 1),
        };
        let Some(text) = v.get(&file.text_field).and_then(Value::as_str).map(str::to_string) else {
            bail!("{}: line {}: no string field `{}`", a.input.display(), i + 1, file.text_field);
        };
        records.push((id, text, line));
    }
    let total = records.len();
    let result = decontaminate(records, &index, |r| r.0.clone(), |r| r.1.clone());
    let mut w = create(&a.out)?;
    for (_, _, line) in &result.kept {
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    if let Some(p) = &a.report {
        let mut w = create(p)?;
        for r in &result.report {
            writeln!(w, "{}", serde_json::to_string(r)?)?;
        }
        w.flush()?;
    }
    print_json(&json!({
        "input": total,
        "kept": result.kept.len(),
        "removed": result.removed.len(),
        "n": file.decontam.n,
        "index_windows": index.len(),
    }))?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct FilterFile {
    complete_only: bool,
    success_only: bool,
    quality: bool,
    threshold: Option<f64>,
    patterns: Option<PathBuf>,
}

fn filter(a: FilterArgs, mut cfg: ConfigSource) -> Result<ExitCode> {
    for (flag, key) in [(a.complete_only, "complete_only"), (a.success_only, "success_only"), (a.quality, "quality")] {
        if flag {
            cfg.set(key, true);
        }
    }
    cfg.set_opt("threshold", a.threshold);
    let mut file: FilterFile = cfg.parse()?;
    if let Some(p) = a.patterns {
        file.patterns = Some(p);
    } else if let Some(p) = &file.patterns {
        file.patterns = Some(cfg.resolve(p));
    }
    let mut trajs = read_trajectories(&a.input)?;
    let mut counts = serde_json::Map::new();
    counts.insert("input".into(), json!(trajs.len()));
    if file.complete_only {
        trajs = complete_only(trajs);
        counts.insert("complete_only".into(), json!(trajs.len()));
    }
    if file.success_only {
        let threshold = match file.threshold {
            Some(t) => SuccessThreshold::from_f64(t).context("threshold must be finite")?,
            None => SuccessThreshold::default(),
        };
        let reports = embedded_reports(&trajs);
        trajs = success_only(trajs, &reports, &threshold)?;
        counts.insert("success_only".into(), json!(trajs.len()));
    }
    if file.quality {
        let rules = match &file.patterns {
            Some(p) => QualityRules::from_pattern_text(&fs::read_to_string(p)?, true)?,
            None => QualityRules::default(),
        };
        trajs.retain(|t| quality_filter(t, &rules).keep);
        counts.insert("quality".into(), json!(trajs.len()));
    }
    write_trajectories(&a.out, &trajs)?;
    print_json(&counts)?;
    Ok(ExitCode::SUCCESS)
}

fn load_template(path: Option<&PathBuf>, cfg: &ConfigSource) -> Result<PromptTemplate> {
    match path {
        None => Ok(PromptTemplate::terminus()),
        Some(p) => Ok(PromptTemplate::new(fs::read_to_string(cfg.resolve(p))?)?),
    }
}

#[derive(Deserialize)]
#[serde(default)]
struct StatsFile {
    #[serde(flatten)]
    stats: StatsConfig,
    bytes_per_token: usize,
    template: Option<PathBuf>,
}

impl Default for StatsFile {
    fn default() -> Self {
        Self {
            stats: StatsConfig::default(),
            bytes_per_token: 4,
            template: None,
        }
    }
}

fn stats(a: StatsArgs, mut cfg: ConfigSource) -> Result<ExitCode> {
    cfg.set_opt("token_bin_width", a.token_bin_width);
    let file: StatsFile = cfg.parse()?;
    let template = load_template(file.template.as_ref(), &cfg)?;
    let trajs = read_trajectories(&a.input)?;
    let estimator = ByteEstimator {
        bytes_per_token: file.bytes_per_token,
    };
    let s = corpus_stats(&trajs, &template, &estimator, &file.stats);
    if a.json {
        print_json(&s)?;
    } else {
        print!("{}", s.to_text());
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Deserialize)]
#[serde(default)]
struct ExportFile {
    max_len: usize,
    policy: LengthPolicy,
    history_mode: Option<HistoryMode>,
    bytes_per_token: usize,
    template: Option<PathBuf>,
    seed: u64,
}

impl Default for ExportFile {
    fn default() -> Self {
        Self {
            max_len: DEFAULT_MAX_TOKENS,
            policy: LengthPolicy::Drop,
            history_mode: None,
            bytes_per_token: 4,
            template: None,
            seed: 0,
        }
    }
}

fn export(a: ExportArgs, mut cfg: ConfigSource) -> Result<ExitCode> {
    cfg.set_opt("max_len", a.max_len);
    cfg.set_opt("policy", a.policy);
    cfg.set_opt("seed", a.seed);
    let file: ExportFile = cfg.parse()?;
    if let Some(spec_path) = &a.mixture {
        let text = fs::read_to_string(spec_path).with_context(|| format!("reading {}", spec_path.display()))?;
        let mut spec: MixtureSpec = serde_json::from_str(&text)?;
        let base = spec_path.parent().unwrap_or(Path::new("."));
        for p in &mut spec.parts {
            if p.path.is_relative() {
                p.path = base.join(&p.path);
            }
        }
        let samples = build_mixture(&spec, file.seed)?;
        let n = write_jsonl(&samples, create(&a.out)?)?;
        print_json(&json!({"written": n, "strategy": spec.strategy}))?;
        return Ok(ExitCode::SUCCESS);
    }
    let Some(input) = &a.input else {
        bail!("export needs --input <trajectories> or --mixture <spec>");
    };
    let template = load_template(file.template.as_ref(), &cfg)?;
    let estimator = ByteEstimator {
        bytes_per_token: file.bytes_per_token,
    };
    let trajs = read_trajectories(input)?;
    let mut samples = Vec::new();
    let mut empty = 0;
    for t in &trajs {
        match trajectory_to_sample(t, &template, file.history_mode.unwrap_or(t.history_mode), &estimator) {
            Ok(s) => samples.push(s),
            Err(ExportError::EmptyTrajectory { .. }) => empty += 1,
            Err(e) => return Err(e.into()),
        }
    }
    let converted = samples.len();
    let samples = apply_length_policy(samples, file.max_len, file.policy, &estimator);
    let n = write_jsonl(&samples, create(&a.out)?)?;
    print_json(&json!({
        "trajectories": trajs.len(),
        "empty": empty,
        "converted": converted,
        "written": n,
        "max_len": file.max_len,
        "policy": file.policy,
    }))?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Deserialize)]
#[serde(default)]
struct EvalFile {
    mode: ScoreMode,
    missing_as_failure: bool,
}

impl Default for EvalFile {
    fn default() -> Self {
        Self {
            mode: ScoreMode::Pass,
            missing_as_failure: true,
        }
    }
}

fn eval(a: EvalArgs, mut cfg: ConfigSource) -> Result<ExitCode> {
    cfg.set_opt("mode", a.mode);
    let file: EvalFile = cfg.parse()?;
    let trajs = read_trajectories(&a.input)?;
    let scores: BTreeMap<(String, u32), f64> = scores_from_trajectories(&trajs, file.mode, file.missing_as_failure);
    let summary = aggregate_eval(&scores)?;
    println!("{summary}");
    if let Some(p) = &a.out {
        let mut w = create(p)?;
        writeln!(w, "{}", serde_json::to_string_pretty(&summary)?)?;
        w.flush()?;
    }
    Ok(ExitCode::SUCCESS)
}
