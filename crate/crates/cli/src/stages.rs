//! One function per pipeline stage. Each reads its declared inputs, writes
//! its declared outputs (only when their content changes) and returns the
//! summary printed as the command's last line.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context as _};
use chrono::{DateTime, TimeZone, Utc};
use serde_json::{json, Map, Value};
use streetsafe_core::embedding::{load_embeddings, remote::EmbeddingClient, EmbeddingMatrix};
use streetsafe_core::evaluation::{
    ablation_to_csv, compare_rankings, compute_report, k_ablation, predict_held_out, split_anchor, Scores,
};
use streetsafe_core::geo::{classify, export_geojson, quantile_bins, SafetyCategory};
use streetsafe_core::judges::mllm::{MllmClient, MllmJudge};
use streetsafe_core::judges::runner::pending_pairs;
use streetsafe_core::judges::synthetic::{latent_to_csv, load_latent};
use streetsafe_core::judges::{run_plan, Judge, PromptTemplate, RunOptions, SequenceClock, SyntheticJudge};
use streetsafe_core::knn::{load_scores, locate, score_corpus, scores_to_csv, AnchorIndex, ScoringOptions};
use streetsafe_core::model::{load_manifest, manifest_to_string, read_judgments, sample_anchor};
use streetsafe_core::synth::{generate_city, CityConfig};
use streetsafe_core::tournament::{aggregate_judges, build_plan, tally_by_judge, PairingPlan, ScoreTable};
use streetsafe_core::{AnchorSet, Corpus, Judgment, SafetyCriteria};

use crate::config::RunConfig;

pub type Summary = Map<String, Value>;

fn summary(command: &str) -> Summary {
    let mut m = Map::new();
    m.insert("command".into(), json!(command));
    m
}

/// Writes `contents` unless the file already holds exactly that. Returns
/// whether anything was written.
pub fn write_artifact(path: &Path, contents: &[u8]) -> anyhow::Result<bool> {
    if std::fs::read(path).is_ok_and(|old| old == contents) {
        return Ok(false);
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("replacing {}", path.display()))?;
    Ok(true)
}

/// Fails with the command that produces `path` when it is missing.
pub fn require(path: &Path, producer: &str) -> anyhow::Result<()> {
    if !path.exists() {
        bail!("{} not found; create it with `streetsafe {producer}`", path.display());
    }
    Ok(())
}

fn manifest(cfg: &RunConfig) -> anyhow::Result<Corpus> {
    let p = cfg.path(&cfg.paths.manifest);
    require(&p, "ingest")?;
    Ok(load_manifest(&p)?)
}

fn plan(cfg: &RunConfig) -> anyhow::Result<PairingPlan> {
    let p = cfg.path(&cfg.paths.plan);
    require(&p, "plan")?;
    Ok(PairingPlan::load(&p)?)
}

fn embeddings(cfg: &RunConfig) -> anyhow::Result<EmbeddingMatrix> {
    let p = cfg.path(&cfg.paths.embeddings);
    require(&p, "embed")?;
    Ok(load_embeddings(&p)?)
}

fn anchor_scores(cfg: &RunConfig) -> anyhow::Result<ScoreTable> {
    let p = cfg.path(&cfg.paths.anchor_scores);
    require(&p, "tally")?;
    Ok(ScoreTable::load(&p)?)
}

fn display(p: &Path) -> Value {
    json!(p.display().to_string())
}

pub fn ingest(cfg: &RunConfig, input: &Path) -> anyhow::Result<Summary> {
    let corpus = load_manifest(input)?;
    let out = cfg.path(&cfg.paths.manifest);
    let written = write_artifact(&out, manifest_to_string(&corpus).as_bytes())?;
    let mut s = summary("ingest");
    s.insert("records".into(), json!(corpus.len()));
    s.insert("points".into(), json!(corpus.points().len()));
    s.insert("manifest".into(), display(&out));
    s.insert("written".into(), json!(written));
    Ok(s)
}

pub fn generate_city_stage(cfg: &RunConfig, city: &CityConfig, seed: u64) -> anyhow::Result<Summary> {
    let c = generate_city(city, seed)?;
    let m = cfg.path(&cfg.paths.manifest);
    let e = cfg.path(&cfg.paths.embeddings);
    let l = cfg.path(&cfg.paths.latent);
    write_artifact(&m, manifest_to_string(&c.corpus).as_bytes())?;
    write_artifact(&e, &c.embeddings.to_binary())?;
    write_artifact(&l, latent_to_csv(&c.latent).as_bytes())?;
    let mut s = summary("generate-city");
    s.insert("seed".into(), json!(seed));
    s.insert("points".into(), json!(city.points));
    s.insert("images".into(), json!(c.corpus.len()));
    s.insert("dim".into(), json!(c.embeddings.dim()));
    s.insert("manifest".into(), display(&m));
    s.insert("embeddings".into(), display(&e));
    s.insert("latent".into(), display(&l));
    Ok(s)
}

pub fn sample_anchor_stage(cfg: &RunConfig, seed: u64) -> anyhow::Result<Summary> {
    let corpus = manifest(cfg)?;
    let anchor = sample_anchor(&corpus, cfg.anchor_size, seed)?;
    let out = cfg.path(&cfg.paths.anchor);
    let written = write_artifact(&out, anchor.to_text().as_bytes())?;
    let mut s = summary("sample-anchor");
    s.insert("seed".into(), json!(seed));
    s.insert("size".into(), json!(anchor.len()));
    s.insert("anchor".into(), display(&out));
    s.insert("written".into(), json!(written));
    Ok(s)
}

pub fn plan_stage(cfg: &RunConfig, seed: u64, force: bool) -> anyhow::Result<Summary> {
    let ap = cfg.path(&cfg.paths.anchor);
    require(&ap, "sample-anchor")?;
    let anchor = AnchorSet::load(&ap)?;
    let plan = build_plan(&anchor, cfg.opponents, seed)?;
    let out = cfg.path(&cfg.paths.plan);
    let text = plan.to_json();
    let log = cfg.path(&cfg.paths.judgments);
    let replaces = std::fs::read(&out).is_ok_and(|old| old != text.as_bytes());
    if replaces && !force && !read_judgments(&log)?.is_empty() {
        bail!(
            "{} already holds a different plan and {} has judgments for it; pass --force or use a fresh --dir",
            out.display(),
            log.display()
        );
    }
    let written = write_artifact(&out, text.as_bytes())?;
    let mut s = summary("plan");
    s.insert("seed".into(), json!(seed));
    s.insert("items".into(), json!(anchor.len()));
    s.insert("opponents".into(), json!(cfg.opponents));
    s.insert("pairs".into(), json!(plan.len()));
    s.insert("plan".into(), display(&out));
    s.insert("written".into(), json!(written));
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum JudgeChoice {
    Synthetic,
    Mllm,
}

#[derive(Debug, Clone)]
pub struct RankArgs {
    pub judge: JudgeChoice,
    pub judge_id: Option<String>,
    pub limit: Option<usize>,
    pub seed: u64,
}

/// Timestamps of synthetic runs: the i-th judgment of a judge is stamped
/// `SYNTHETIC_EPOCH + i` seconds, so resumed logs match uninterrupted ones.
pub fn synthetic_epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).single().expect("valid date")
}

pub fn rank(cfg: &RunConfig, args: &RankArgs) -> anyhow::Result<Summary> {
    let plan = plan(cfg)?;
    let log = cfg.path(&cfg.paths.judgments);
    cfg.judge.validate()?;
    let judge: Box<dyn Judge> = match args.judge {
        JudgeChoice::Synthetic => {
            let lp = cfg.path(&cfg.paths.latent);
            require(&lp, "generate-city")?;
            Box::new(SyntheticJudge {
                judge_id: args.judge_id.clone().unwrap_or_else(|| "synthetic".into()),
                latent: load_latent(&lp)?,
                noise: cfg.judge.noise,
                uncomparable_rate: cfg.judge.uncomparable_rate,
                seed: args.seed,
            })
        }
        JudgeChoice::Mllm => {
            let client = MllmClient::from_config(&cfg.judge)?;
            let corpus = manifest(cfg)?;
            let prompt = PromptTemplate::new(criteria(cfg)?);
            let id = args.judge_id.clone().unwrap_or_else(|| cfg.judge.model.clone());
            Box::new(MllmJudge::new(id, client, prompt, &corpus))
        }
    };
    let existing = read_judgments(&log)?;
    let done = plan.len() - pending_pairs(&plan, judge.judge_id(), &existing).len();
    drop(existing);
    let (mut seq, mut sys);
    let clock: &mut dyn streetsafe_core::judges::Clock = match args.judge {
        JudgeChoice::Synthetic => {
            seq = SequenceClock::new(
                synthetic_epoch() + chrono::Duration::seconds(done as i64),
                chrono::Duration::seconds(1),
            );
            &mut seq
        }
        JudgeChoice::Mllm => {
            sys = streetsafe_core::judges::SystemClock;
            &mut sys
        }
    };
    let rationale_log = (args.judge == JudgeChoice::Mllm).then(|| cfg.path(&cfg.paths.rationales));
    let started = Instant::now();
    let r = run_plan(
        &plan,
        judge.as_ref(),
        &log,
        RunOptions {
            concurrency_limit: cfg.judge.concurrency_limit,
            limit: args.limit,
            flush_every: 256,
            clock,
            rationale_log,
        },
    )?;
    let mut s = summary("rank");
    s.insert("judge".into(), json!(judge.judge_id()));
    s.insert("seed".into(), json!(args.seed));
    s.insert("total".into(), json!(r.total));
    s.insert("already_done".into(), json!(r.already_done));
    s.insert("appended".into(), json!(r.appended));
    s.insert("remaining".into(), json!(r.total - r.already_done - r.appended));
    s.insert("parse_failures".into(), json!(r.parse_failures));
    s.insert("judgments".into(), display(&log));
    s.insert("elapsed_ms".into(), json!(started.elapsed().as_millis() as u64));
    Ok(s)
}

fn criteria(cfg: &RunConfig) -> anyhow::Result<SafetyCriteria> {
    Ok(match &cfg.service.criteria {
        Some(p) => SafetyCriteria::load(p)?,
        None => SafetyCriteria::default(),
    })
}

pub fn serve_annotate(cfg: &RunConfig) -> anyhow::Result<()> {
    use streetsafe_service::{Annotator, Assignment};
    let plan = plan(cfg)?;
    let mp = cfg.path(&cfg.paths.manifest);
    let images = if mp.exists() {
        load_manifest(&mp)?.records().iter().map(|r| (r.key(), r.image_ref.clone())).collect()
    } else {
        log::warn!("{} not found; images will not be served", mp.display());
        BTreeMap::new()
    };
    let assignment = if cfg.service.independent_plans { Assignment::Independent } else { Assignment::SharedShuffled };
    let votes = cfg.path(&cfg.paths.votes);
    let pairs = plan.len();
    let annotator = Annotator::open(plan, assignment, criteria(cfg)?, images, &votes)?;
    let judges = annotator.judges().len();
    let addr: SocketAddr = format!("{}:{}", cfg.service.bind, cfg.service.port)
        .parse()
        .with_context(|| format!("bad bind address {}:{}", cfg.service.bind, cfg.service.port))?;
    let listener = std::net::TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
    let mut s = summary("serve-annotate");
    s.insert("url".into(), json!(format!("http://{}", listener.local_addr()?)));
    s.insert("pairs".into(), json!(pairs));
    s.insert("resumed_judges".into(), json!(judges));
    s.insert("votes".into(), display(&votes));
    println!("{}", Value::Object(s));
    use std::io::Write as _;
    std::io::stdout().flush()?;
    let app = streetsafe_service::router(Arc::new(annotator), cfg.service.static_dir.clone());
    streetsafe_service::http::serve_forever(app, listener)?;
    Ok(())
}

/// Logs to tally: the explicit list, else the judge log plus the human vote
/// log when it exists.
pub fn tally_stage(cfg: &RunConfig, logs: &[PathBuf], judges: &[String]) -> anyhow::Result<Summary> {
    let logs: Vec<PathBuf> = if logs.is_empty() {
        let mut v = vec![cfg.path(&cfg.paths.judgments)];
        let votes = cfg.path(&cfg.paths.votes);
        if votes.exists() {
            v.push(votes);
        }
        v
    } else {
        logs.to_vec()
    };
    let mut all: Vec<Judgment> = Vec::new();
    for l in &logs {
        require(l, "rank` or `streetsafe serve-annotate")?;
        all.extend(read_judgments(l)?);
    }
    if !judges.is_empty() {
        all.retain(|j| judges.contains(&j.judge_id));
    }
    if all.is_empty() {
        bail!("no judgments to tally in {}", logs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "));
    }
    let plan_path = cfg.path(&cfg.paths.plan);
    let keys = if plan_path.exists() { Some(PairingPlan::load(&plan_path)?.keys()) } else { None };
    let per_judge = tally_by_judge(&all, keys.as_deref());
    let table = aggregate_judges(&per_judge.values().cloned().collect::<Vec<_>>())?;
    let out = cfg.path(&cfg.paths.anchor_scores);
    let written = write_artifact(&out, table.to_csv().as_bytes())?;
    let mut s = summary("tally");
    s.insert("judges".into(), json!(per_judge.len()));
    s.insert("judgments".into(), json!(all.len()));
    s.insert("items".into(), json!(table.len()));
    s.insert("scores".into(), display(&out));
    s.insert("written".into(), json!(written));
    Ok(s)
}

pub enum EmbedSource {
    File(PathBuf),
    Endpoint(String),
}

pub fn embed(cfg: &RunConfig, source: &EmbedSource) -> anyhow::Result<Summary> {
    let corpus = manifest(cfg)?;
    let out = cfg.path(&cfg.paths.embeddings);
    let mut s = summary("embed");
    let m = match source {
        EmbedSource::File(f) => {
            let m = load_embeddings(f)?;
            let missing: Vec<String> = corpus.keys().filter(|k| !m.contains(k)).map(|k| k.to_string()).collect();
            if !missing.is_empty() {
                bail!(
                    "{} has no vector for {} manifest images (first: {})",
                    f.display(),
                    missing.len(),
                    missing[0]
                );
            }
            let m = m.subset(|k| corpus.get(k).is_some());
            let written = write_artifact(&out, &m.to_binary())?;
            s.insert("source".into(), display(f));
            s.insert("written".into(), json!(written));
            m
        }
        EmbedSource::Endpoint(url) => {
            let key = std::env::var(&cfg.judge.api_key_env).ok().filter(|k| !k.is_empty());
            let client = EmbeddingClient::new(url.clone(), cfg.embed.batch_size, cfg.embed.concurrency, key)?;
            let images: Vec<_> = corpus.records().iter().map(|r| (r.key(), r.image_ref.clone())).collect();
            if let Some(parent) = out.parent() {
                std::fs::create_dir_all(parent).ok();
            }
            let (m, stats) = client.fetch(&images, &out)?;
            s.insert("source".into(), json!(url));
            s.insert("requests".into(), json!(stats.requests));
            s.insert("cached".into(), json!(stats.cached));
            s.insert("fetched".into(), json!(stats.fetched));
            m
        }
    };
    s.insert("vectors".into(), json!(m.len()));
    s.insert("dim".into(), json!(m.dim()));
    s.insert("embeddings".into(), display(&out));
    Ok(s)
}

pub fn score_city(cfg: &RunConfig, include_self: bool) -> anyhow::Result<Summary> {
    let corpus = manifest(cfg)?;
    let table = anchor_scores(cfg)?;
    let emb = embeddings(cfg)?;
    let index = AnchorIndex::new(&emb, &table.normalized())?;
    let city = emb.subset(|k| corpus.get(k).is_some());
    let opts = ScoringOptions { k: cfg.k, exclude_self: !include_self };
    let scores = score_corpus(&city, &index, opts)?;
    let located = locate(scores, &corpus.points())?;
    let out = cfg.path(&cfg.paths.city_scores);
    let written = write_artifact(&out, scores_to_csv(&located).as_bytes())?;
    let incomplete = located.iter().filter(|p| !p.score.missing_headings().is_empty()).count();
    let mut s = summary("score-city");
    s.insert("k".into(), json!(cfg.k));
    s.insert("anchors".into(), json!(index.len()));
    s.insert("points".into(), json!(located.len()));
    s.insert("points_missing_headings".into(), json!(incomplete));
    s.insert("scores".into(), display(&out));
    s.insert("written".into(), json!(written));
    Ok(s)
}

fn latent_correlation(table: &ScoreTable, latent: Option<&Path>) -> anyhow::Result<Option<f64>> {
    let Some(lp) = latent else { return Ok(None) };
    require(lp, "generate-city")?;
    let latent = load_latent(lp)?;
    let scores = table.normalized();
    let truth: Scores = scores
        .keys()
        .map(|k| latent.get(k).map(|v| (k.clone(), *v)).with_context(|| format!("no latent value for {k}")))
        .collect::<anyhow::Result<_>>()?;
    Ok(Some(compare_rankings(&scores, &truth)?))
}

pub fn evaluate(cfg: &RunConfig, seed: u64, latent: Option<&Path>) -> anyhow::Result<Summary> {
    let table = anchor_scores(cfg)?;
    let emb = embeddings(cfg)?;
    let (train, eval) = split_anchor(&table.normalized(), cfg.train_fraction, seed)?;
    let predicted = predict_held_out(&emb, &train, &eval, cfg.k)?;
    let report = compute_report(&eval, &predicted)?;
    let spearman = latent_correlation(&table, latent)?;
    let mut csv = report.to_csv();
    if let Some(rho) = spearman {
        csv.push_str(&format!("spearman_latent,{rho}\n"));
    }
    let out = cfg.path(&cfg.paths.report);
    let text_out = cfg.path(&cfg.paths.report_text);
    write_artifact(&out, csv.as_bytes())?;
    write_artifact(&text_out, report.to_text(&format!("anchor hold-out, K={}", cfg.k)).as_bytes())?;
    let mut s = summary("evaluate");
    s.insert("seed".into(), json!(seed));
    s.insert("k".into(), json!(cfg.k));
    s.insert("train".into(), json!(train.len()));
    s.insert("held_out".into(), json!(eval.len()));
    s.insert("mae".into(), json!(report.mae));
    s.insert("mae_std".into(), json!(report.mae_std));
    s.insert("r2".into(), report.r2.map_or(Value::Null, |r| json!(r)));
    if let Some(rho) = spearman {
        s.insert("spearman_latent".into(), json!(rho));
    }
    s.insert("report".into(), display(&out));
    Ok(s)
}

pub fn ablate_k(cfg: &RunConfig, seed: u64, k_max: usize) -> anyhow::Result<Summary> {
    if k_max == 0 {
        bail!("--k-max must be at least 1");
    }
    let table = anchor_scores(cfg)?;
    let emb = embeddings(cfg)?;
    let (train, eval) = split_anchor(&table.normalized(), cfg.train_fraction, seed)?;
    let ks: Vec<usize> = (1..=k_max).collect();
    let rows = k_ablation(&emb, &train, &eval, &ks)?;
    let out = cfg.path(&cfg.paths.ablation);
    let written = write_artifact(&out, ablation_to_csv(&rows).as_bytes())?;
    let best = rows
        .iter()
        .filter_map(|r| r.r2.map(|v| (r.k, v)))
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
    let mut s = summary("ablate-k");
    s.insert("seed".into(), json!(seed));
    s.insert("rows".into(), json!(rows.len()));
    s.insert("r2_k1".into(), rows[0].r2.map_or(Value::Null, |r| json!(r)));
    if let Some((k, r2)) = best {
        s.insert("best_k".into(), json!(k));
        s.insert("best_r2".into(), json!(r2));
    }
    s.insert("ablation".into(), display(&out));
    s.insert("written".into(), json!(written));
    Ok(s)
}

pub fn export_map(cfg: &RunConfig, bins: usize) -> anyhow::Result<Summary> {
    let sp = cfg.path(&cfg.paths.city_scores);
    require(&sp, "score-city")?;
    let points = load_scores(&sp)?;
    let q = if bins >= 2 {
        Some(quantile_bins(points.iter().map(|p| (p.score.point_id.as_str(), p.score.combined)), bins)?)
    } else {
        None
    };
    let text = export_geojson(&points, q.as_ref())?;
    let out = cfg.path(&cfg.paths.map);
    let written = write_artifact(&out, text.as_bytes())?;
    let mut counts: BTreeMap<SafetyCategory, usize> = BTreeMap::new();
    for p in &points {
        *counts.entry(classify(p.score.combined)?).or_default() += 1;
    }
    let mut s = summary("export-map");
    s.insert("features".into(), json!(points.len()));
    for c in [SafetyCategory::Dangerous, SafetyCategory::Neutral, SafetyCategory::Safe] {
        s.insert(c.label().into(), json!(counts.get(&c).copied().unwrap_or(0)));
    }
    if let Some(q) = &q {
        s.insert("bin_edges".into(), json!(q.edges));
    }
    s.insert("map".into(), display(&out));
    s.insert("written".into(), json!(written));
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct DemoArgs {
    pub seed: u64,
    pub city: CityConfig,
    pub bins: usize,
}

/// The whole synthetic pipeline, stage by stage, in `cfg.paths.dir`.
pub fn demo(cfg: &RunConfig, args: &DemoArgs) -> anyhow::Result<Summary> {
    let started = Instant::now();
    let seed = args.seed;
    let mut stages = Vec::new();
    stages.push(generate_city_stage(cfg, &args.city, seed)?);
    stages.push(sample_anchor_stage(cfg, seed)?);
    stages.push(plan_stage(cfg, seed, false)?);
    let rank_args = RankArgs { judge: JudgeChoice::Synthetic, judge_id: None, limit: None, seed };
    stages.push(rank(cfg, &rank_args)?);
    let only_synthetic = vec![cfg.path(&cfg.paths.judgments)];
    stages.push(tally_stage(cfg, &only_synthetic, &[])?);
    stages.push(score_city(cfg, false)?);
    let latent = cfg.path(&cfg.paths.latent);
    let eval = evaluate(cfg, seed, Some(&latent))?;
    let abl = ablate_k(cfg, seed, 10)?;
    stages.push(eval.clone());
    stages.push(abl.clone());
    stages.push(export_map(cfg, args.bins)?);
    for st in &stages {
        log::info!("{}", Value::Object(st.clone()));
    }
    let mut s = summary("demo");
    s.insert("seed".into(), json!(seed));
    s.insert("points".into(), json!(args.city.points));
    s.insert("anchors".into(), json!(cfg.anchor_size));
    s.insert("pairs".into(), stages[2]["pairs"].clone());
    s.insert("spearman_latent".into(), eval["spearman_latent"].clone());
    s.insert("r2".into(), eval["r2"].clone());
    s.insert("mae".into(), eval["mae"].clone());
    s.insert("best_k".into(), abl.get("best_k").cloned().unwrap_or(Value::Null));
    s.insert("dir".into(), display(&cfg.paths.dir));
    s.insert("elapsed_ms".into(), json!(started.elapsed().as_millis() as u64));
    Ok(s)
}
