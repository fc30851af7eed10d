//! Subcommand implementations. Each returns the text printed to stdout.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use smartpilot_core::datagen::{gen_assembly, gen_corpus, gen_forecast, write_replay, AssemblyMetadata, GoldQuestion};
use smartpilot_core::foresight::{
    chronological_split, comparison_table, evaluate, improvement, read_forecast_file, train_forecaster,
    write_forecast_file, ForecastComparison, ForecastModel, ForecastSeries, StructuredFeatures,
};
use smartpilot_core::infoguide::{
    answer, build_index, load_manuals, Answer, AnswerStatus, GeneratorClient, InfoIndex, KeywordSet, TcpGeneratorClient,
};
use smartpilot_core::ontology::{load_ontology_file, ProcessOntology};
use smartpilot_core::predictx::{
    evaluate_variant, read_dataset, run_ablation, split_indices, train_fusion, write_dataset, AssemblySample,
    FusionModel, FusionVariant,
};
use smartpilot_runtime::server::{bind, load_facility, serve, AppState, FacilityRequest};
use smartpilot_runtime::{
    ingest, Facility, ForesightAgent, Hub, Pipeline, PipelineConfig, PredictxAgent, ProductForecaster, Rate, Source,
};

use crate::cli::{Agent, Command};
use crate::config::Settings;
use crate::layout::*;
use crate::{invalid, runtime, CliError};

type Result<T> = std::result::Result<T, CliError>;

const GENERATOR_TIMEOUT: Duration = Duration::from_secs(10);

pub fn run(command: &Command, agent: Option<Agent>, s: &Settings) -> Result<String> {
    match command {
        Command::Gen => gen(s),
        Command::Train => match agent {
            Some(Agent::Predictx) => train_predictx(s),
            Some(Agent::Foresight) => train_foresight(s),
            Some(Agent::Infoguide) => Err(invalid("infoguide has no trained model; use `eval --agent infoguide`")),
            None => Err(invalid("train needs --agent predictx|foresight")),
        },
        Command::Ablate => ablate(s),
        Command::Eval => match agent {
            Some(Agent::Predictx) => eval_predictx(s),
            Some(Agent::Foresight) => eval_foresight(s),
            Some(Agent::Infoguide) => eval_infoguide(s),
            None => Err(invalid("eval needs --agent predictx|foresight|infoguide")),
        },
        Command::Serve => serve_cmd(s),
        Command::Replay => replay(s),
        Command::Ask { query } => ask(query, s),
    }
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// Relative path to SHA-256 of every file under `root`, in path order.
fn digest_tree(root: &Path) -> Result<BTreeMap<String, String>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> std::io::Result<()> {
        for e in fs::read_dir(dir)? {
            let p = e?.path();
            if p.is_dir() {
                walk(root, &p, out)?;
            } else {
                let rel = p.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
                let d = Sha256::digest(fs::read(&p)?);
                out.insert(rel, d.iter().map(|b| format!("{b:02x}")).collect());
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out).map_err(runtime)?;
    Ok(out)
}

fn gen(s: &Settings) -> Result<String> {
    let out = s.out.clone().unwrap_or_else(|| s.data.clone());
    let d = gen_assembly(&s.assembly).map_err(runtime)?;
    write_dataset(out.join(ASSEMBLY), &d.samples, &d.metadata.channels).map_err(runtime)?;
    d.ontology.save(out.join(ONTOLOGY)).map_err(runtime)?;
    write_replay(out.join(REPLAY), &d, &s.assembly.facility_id).map_err(runtime)?;
    let (products, fmeta) = gen_forecast(&s.forecast).map_err(runtime)?;
    let pairs: Vec<_> = products.into_iter().map(|p| (p.series, p.features)).collect();
    write_forecast_file(out.join(FORECAST), &pairs).map_err(runtime)?;
    let corpus = gen_corpus(&s.corpus).map_err(runtime)?;
    corpus.write(out.join(CORPUS)).map_err(runtime)?;
    write(&out.join(METADATA), &pretty(&json!({ "assembly": d.metadata, "forecast": fmeta })))?;
    // The manifest is written last and lists everything before it.
    let _ = fs::remove_file(out.join(MANIFEST));
    let files = digest_tree(&out)?;
    let manifest = json!({ "seed": s.seed, "config_hash": s.hash(), "files": files });
    write(&out.join(MANIFEST), &pretty(&manifest))?;
    Ok(format!(
        "wrote {} samples, {} product series, {} manuals and {} gold questions to {}\n",
        d.samples.len(),
        pairs.len(),
        corpus.manuals.len(),
        corpus.gold.len(),
        out.display()
    ))
}

fn load_assembly(s: &Settings) -> Result<(Vec<AssemblySample>, ProcessOntology)> {
    let (samples, _) = read_dataset(s.data.join(ASSEMBLY)).map_err(runtime)?;
    let onto = load_ontology_file(s.ontology_path()).map_err(|e| runtime(format!("{}: {e}", s.ontology_path().display())))?;
    Ok((samples, onto))
}

fn fusion_variant(s: &Settings) -> Result<FusionVariant> {
    s.variant.as_deref().unwrap_or("P3").parse().map_err(invalid)
}

fn predictx_model_path(s: &Settings, v: FusionVariant) -> PathBuf {
    s.models_dir().join(format!("predictx-{v}.json"))
}

/// `(train, test)` under the same split `ablate` uses.
fn split(samples: &[AssemblySample], seed: u64) -> (Vec<&AssemblySample>, Vec<&AssemblySample>) {
    let (tr, te) = split_indices(samples.len(), seed);
    (tr.iter().map(|&i| &samples[i]).collect(), te.iter().map(|&i| &samples[i]).collect())
}

fn train_predictx(s: &Settings) -> Result<String> {
    let v = fusion_variant(s)?;
    let (samples, onto) = load_assembly(s)?;
    let (train, test) = split(&samples, s.predictx.seed);
    let start = Instant::now();
    let model = train_fusion(v, &train, &onto, &s.predictx).map_err(runtime)?;
    let m = evaluate_variant(&model, &test, false).map_err(runtime)?;
    let path = predictx_model_path(s, v);
    fs::create_dir_all(s.models_dir()).map_err(runtime)?;
    model.save(&path).map_err(runtime)?;
    log::info!("trained {v} in {:.1} s", start.elapsed().as_secs_f64());
    Ok(format!(
        "{v}: test accuracy {:.4}, weighted f1 {:.4} ({} train / {} test); saved {}\n",
        m.accuracy,
        m.f1,
        train.len(),
        test.len(),
        path.display()
    ))
}

fn kil_flags(s: &Settings) -> Result<Vec<bool>> {
    match s.variant.as_deref().map(str::to_ascii_lowercase).as_deref() {
        None => Ok(vec![false, true]),
        Some("kil") => Ok(vec![true]),
        Some("base") => Ok(vec![false]),
        Some(other) => Err(invalid(format!("foresight variant must be kil or base, got '{other}'"))),
    }
}

fn foresight_dir(s: &Settings, kil: bool) -> PathBuf {
    s.models_dir().join(if kil { "foresight-kil" } else { "foresight-base" })
}

fn load_series(s: &Settings) -> Result<Vec<(ForecastSeries, StructuredFeatures)>> {
    let path = s.data.join(FORECAST);
    read_forecast_file(&path).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

type Split = ((ForecastSeries, StructuredFeatures), (ForecastSeries, StructuredFeatures));

fn forecast_split(s: &Settings, series: &ForecastSeries, feats: &StructuredFeatures) -> Split {
    chronological_split(series, feats, s.forecast_train_fraction, s.foresight.lookback)
}

fn train_foresight(s: &Settings) -> Result<String> {
    let flags = kil_flags(s)?;
    let mut out = String::new();
    for (series, feats) in load_series(s)? {
        let ((trs, trf), (tes, tef)) = forecast_split(s, &series, &feats);
        for &kil in &flags {
            let m = train_forecaster(&trs, &trf, kil, &s.foresight).map_err(runtime)?;
            let r = evaluate(&m, &tes, &tef).map_err(runtime)?;
            let path = foresight_dir(s, kil).join(format!("{}.json", series.product_id));
            fs::create_dir_all(foresight_dir(s, kil)).map_err(runtime)?;
            m.save(&path).map_err(runtime)?;
            out += &format!(
                "{} {}: test mae {:.4} rmse {:.4}; saved {}\n",
                series.product_id,
                if kil { "kil" } else { "base" },
                r.mae,
                r.rmse,
                path.display()
            );
        }
    }
    Ok(out)
}

fn ablate(s: &Settings) -> Result<String> {
    let (samples, onto) = load_assembly(s)?;
    let start = Instant::now();
    let report = run_ablation(&samples, &onto, &s.predictx).map_err(runtime)?;
    log::info!("ablation finished in {:.1} s", start.elapsed().as_secs_f64());
    let dir = s.reports_dir();
    let table = report.to_table();
    write(&dir.join("ablation.tsv"), &table)?;
    write(&dir.join("ablation.json"), &pretty(&report))?;
    Ok(table)
}

fn eval_predictx(s: &Settings) -> Result<String> {
    let v = fusion_variant(s)?;
    let path = predictx_model_path(s, v);
    let model = FusionModel::load(&path).map_err(|e| runtime(format!("{}: {e} (run `train --agent predictx` first)", path.display())))?;
    let (samples, _) = load_assembly(s)?;
    let (_, test) = split(&samples, s.predictx.seed);
    let m = evaluate_variant(&model, &test, false).map_err(runtime)?;
    let text = pretty(&json!({ "variant": v.to_string(), "metrics": m }));
    write(&s.reports_dir().join(format!("eval-predictx-{v}.json")), &text)?;
    Ok(text)
}

fn load_forecaster(s: &Settings, kil: bool, product: &str) -> Result<ForecastModel> {
    let path = foresight_dir(s, kil).join(format!("{product}.json"));
    ForecastModel::load(&path).map_err(|e| runtime(format!("{}: {e} (run `train --agent foresight` first)", path.display())))
}

fn eval_foresight(s: &Settings) -> Result<String> {
    let mut rows = Vec::new();
    for (series, feats) in load_series(s)? {
        let (_, (tes, tef)) = forecast_split(s, &series, &feats);
        let base = evaluate(&load_forecaster(s, false, &series.product_id)?, &tes, &tef).map_err(runtime)?;
        let kil = evaluate(&load_forecaster(s, true, &series.product_id)?, &tes, &tef).map_err(runtime)?;
        rows.push(ForecastComparison {
            product_id: series.product_id.clone(),
            improvement: improvement(&base.aggregate(), &kil.aggregate()),
            base,
            kil,
        });
    }
    let table = comparison_table(&rows);
    write(&s.reports_dir().join("forecast.tsv"), &table)?;
    write(&s.reports_dir().join("forecast.json"), &pretty(&rows))?;
    Ok(table)
}

fn generator(s: &Settings) -> Result<Option<Arc<dyn GeneratorClient>>> {
    match &s.generator {
        None => Ok(None),
        Some(addr) => {
            let c = TcpGeneratorClient::new(addr.as_str(), GENERATOR_TIMEOUT).map_err(invalid)?;
            Ok(Some(Arc::new(c)))
        }
    }
}

fn keywords(s: &Settings) -> Result<KeywordSet> {
    read_json(&s.data.join(CORPUS).join(KEYWORDS))
}

fn local_index(s: &Settings, client: Option<&dyn GeneratorClient>) -> Result<(InfoIndex, usize)> {
    let dir = s.data.join(CORPUS).join(MANUALS);
    let manuals = load_manuals(&dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    let index = build_index(&manuals, &keywords(s)?, client, &s.infoguide).map_err(runtime)?;
    Ok((index, manuals.len()))
}

#[derive(Deserialize)]
struct GoldFile {
    gold: Vec<GoldQuestion>,
    out_of_domain: Vec<String>,
}

#[derive(Serialize)]
struct InfoGuideEval {
    contexts: usize,
    hit_rate: f64,
    refusal_rate: f64,
    answered_rate: f64,
    mean_latency_ms: f64,
    max_latency_ms: f64,
    misses: Vec<String>,
}

fn eval_infoguide(s: &Settings) -> Result<String> {
    let client = generator(s)?;
    let (index, _) = local_index(s, client.as_deref())?;
    let gold: GoldFile = read_json(&s.data.join(CORPUS).join(GOLD))?;
    let ask = |q: &str| answer(q, &index, &s.infoguide, client.as_deref(), None);
    let mut latencies = Vec::new();
    let (mut hits, mut answered, mut misses) = (0, 0, Vec::new());
    for g in &gold.gold {
        let a = ask(&g.question);
        latencies.push(a.latency_ms);
        if a.contexts.iter().any(|c| c.chunk_id == g.chunk_id) {
            hits += 1;
        } else {
            misses.push(g.question.clone());
        }
        answered += usize::from(a.status == AnswerStatus::Answered);
    }
    let mut refused = 0;
    for q in &gold.out_of_domain {
        let a = ask(q);
        latencies.push(a.latency_ms);
        refused += usize::from(a.status == AnswerStatus::Refused);
    }
    let rate = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let report = InfoGuideEval {
        contexts: index.len(),
        hit_rate: rate(hits, gold.gold.len()),
        refusal_rate: rate(refused, gold.out_of_domain.len()),
        answered_rate: rate(answered, gold.gold.len()),
        mean_latency_ms: latencies.iter().sum::<f64>() / latencies.len().max(1) as f64,
        max_latency_ms: latencies.iter().copied().fold(0.0, f64::max),
        misses,
    };
    let text = pretty(&report);
    write(&s.reports_dir().join("eval-infoguide.json"), &text)?;
    Ok(text)
}

fn channels(s: &Settings) -> Result<Vec<String>> {
    #[derive(Deserialize)]
    struct Meta {
        assembly: AssemblyMetadata,
    }
    let meta: Meta = read_json(&s.data.join(METADATA))?;
    Ok(meta.assembly.channels)
}

fn predictx_agent(s: &Settings) -> Result<PredictxAgent> {
    let v = fusion_variant(s)?;
    let path = predictx_model_path(s, v);
    let model = FusionModel::load(&path).map_err(|e| runtime(format!("{}: {e} (run `train --agent predictx` first)", path.display())))?;
    PredictxAgent::new(Arc::new(model), channels(s)?).map_err(runtime)
}

/// KIL forecasters walking each product's held-out periods. Empty when no
/// forecaster has been trained.
fn foresight_agent(s: &Settings) -> Result<ForesightAgent> {
    if !foresight_dir(s, true).is_dir() {
        log::warn!("no trained forecasters in {}; forecasting is off", foresight_dir(s, true).display());
        return Ok(ForesightAgent::default());
    }
    let mut products = Vec::new();
    for (series, feats) in load_series(s)? {
        let model = load_forecaster(s, true, &series.product_id)?;
        let (train, _) = forecast_split(s, &series, &feats);
        let start = train.0.values.len();
        products.push(ProductForecaster::new(model, series, feats, start).map_err(runtime)?);
    }
    Ok(ForesightAgent { products })
}

fn pipeline_config(s: &Settings) -> PipelineConfig {
    PipelineConfig {
        buffer: s.runtime.buffer,
        insight_window: s.runtime.insight_window,
        insight_threshold: s.runtime.insight_threshold,
    }
}

fn rate(s: &Settings, default: Rate) -> Result<Rate> {
    s.rate.as_deref().map_or(Ok(default), |r| r.parse().map_err(invalid))
}

fn facility_name(s: &Settings) -> String {
    s.facility.clone().unwrap_or_else(|| s.assembly.facility_id.clone())
}

#[derive(Serialize)]
struct ReplayReport {
    frames: usize,
    updates: usize,
    malformed: usize,
    predictions: usize,
    insights: usize,
    forecasts: usize,
    skipped_frames: usize,
    dropped: u64,
    elapsed_ms: f64,
    frames_per_second: f64,
    log: PathBuf,
}

fn replay(s: &Settings) -> Result<String> {
    let rate = rate(s, Rate::Unlimited)?;
    let onto = load_ontology_file(s.ontology_path()).map_err(runtime)?;
    let hub = Arc::new(Hub::new(
        Facility {
            name: facility_name(s),
            ontology: Arc::new(onto),
            index: Arc::new(InfoIndex::empty(s.infoguide.embedding_dim)),
            manuals: 0,
        },
        s.runtime.recent,
    ));
    let log_path = s.reports_dir().join(PREDICTIONS);
    fs::create_dir_all(s.reports_dir()).map_err(runtime)?;
    let file = fs::File::create(&log_path).map_err(|e| runtime(format!("{}: {e}", log_path.display())))?;
    let (predictx, foresight) = (predictx_agent(s)?, foresight_agent(s)?);
    let start = Instant::now();
    let p = Pipeline::start(predictx, foresight, hub, &pipeline_config(s), Some(Box::new(BufWriter::new(file))))
        .map_err(runtime)?;
    let replay = s.data.join(REPLAY);
    let ingested = ingest(Source::Replay(&replay), rate, p.bus());
    let stats = p.join().map_err(runtime)?;
    let ingested = ingested.map_err(runtime)?;
    let secs = start.elapsed().as_secs_f64();
    Ok(pretty(&ReplayReport {
        frames: ingested.frames,
        updates: ingested.updates,
        malformed: ingested.malformed,
        predictions: stats.predictions,
        insights: stats.insights,
        forecasts: stats.forecasts,
        skipped_frames: stats.skipped_frames,
        dropped: stats.dropped,
        elapsed_ms: secs * 1e3,
        frames_per_second: ingested.frames as f64 / secs.max(1e-9),
        log: log_path,
    }))
}

fn serve_cmd(s: &Settings) -> Result<String> {
    let client = generator(s)?;
    let keywords = keywords(s)?;
    let req = FacilityRequest {
        name: facility_name(s),
        manuals_dir: s.data.join(CORPUS).join(MANUALS),
        ontology_path: s.ontology_path(),
    };
    let facility = load_facility(&req, &keywords, &s.infoguide, client.as_deref()).map_err(runtime)?;
    let hub = Arc::new(Hub::new(facility, s.runtime.recent));
    let (predictx, foresight) = (predictx_agent(s)?, foresight_agent(s)?);
    let source = match (&s.runtime.tag_server, &s.rate) {
        (Some(addr), None) => StreamSource::Socket(addr.clone()),
        _ => StreamSource::Replay(s.data.join(REPLAY), rate(s, Rate::Times(1.0))?),
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(runtime)?;
    let addr = SocketAddr::from(([0, 0, 0, 0], s.serve_port()));
    let listener = rt.block_on(bind(addr)).map_err(runtime)?;
    log::info!("listening on http://{}", listener.local_addr().map_err(runtime)?);
    let state = AppState::new(hub.clone(), keywords, s.infoguide.clone(), client);
    let p = Pipeline::start(predictx, foresight, hub, &pipeline_config(s), None).map_err(runtime)?;
    std::thread::spawn(move || {
        let r = match &source {
            StreamSource::Replay(path, rate) => ingest(Source::Replay(path), *rate, p.bus()),
            StreamSource::Socket(addr) => ingest(Source::Socket(addr), Rate::Unlimited, p.bus()),
        };
        match (r, p.join()) {
            (Ok(i), Ok(stats)) => log::info!("stream ended after {} frames: {stats:?}", i.frames),
            (Err(e), _) | (_, Err(e)) => log::error!("stream stopped: {e}"),
        }
    });
    rt.block_on(async {
        tokio::select! {
            r = serve(listener, state) => r.map_err(runtime),
            _ = tokio::signal::ctrl_c() => {
                log::info!("interrupted; shutting down");
                Ok(())
            }
        }
    })?;
    Ok(String::new())
}

enum StreamSource {
    Replay(PathBuf, Rate),
    Socket(String),
}

fn render_answer(a: &Answer) -> String {
    match a.status {
        AnswerStatus::Refused => {
            "No answer: the question is not covered by the indexed manuals.\n".to_string()
        }
        AnswerStatus::Answered => {
            let mut out = a.text.clone().unwrap_or_default() + "\n";
            if !a.contexts.is_empty() {
                let ids: Vec<&str> = a.contexts.iter().map(|c| c.chunk_id.as_str()).collect();
                out += &format!("sources: {}\n", ids.join(", "));
            }
            out
        }
    }
}

fn ask(query: &str, s: &Settings) -> Result<String> {
    if query.trim().is_empty() {
        return Err(invalid("the question is empty"));
    }
    let a = match s.port {
        Some(port) => {
            let url = format!("http://127.0.0.1:{port}/api/ask");
            let r = reqwest::blocking::Client::new()
                .post(&url)
                .json(&json!({ "query": query }))
                .send()
                .map_err(|e| runtime(format!("{url}: {e}")))?;
            let status = r.status();
            if !status.is_success() {
                let body = r.text().unwrap_or_default();
                return Err(runtime(format!("{url}: {status}: {body}")));
            }
            r.json::<Answer>().map_err(|e| runtime(format!("{url}: {e}")))?
        }
        None => {
            let client = generator(s)?;
            let (index, _) = local_index(s, client.as_deref())?;
            answer(query, &index, &s.infoguide, client.as_deref(), None)
        }
    };
    log::info!("answered in {:.1} ms", a.latency_ms);
    Ok(render_answer(&a))
}
