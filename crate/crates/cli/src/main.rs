use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use streetsafe_cli::config::RunConfig;
use streetsafe_cli::stages::{self, DemoArgs, EmbedSource, JudgeChoice, RankArgs};
use streetsafe_core::synth::CityConfig;

/// Street-view safety scoring: pairwise tournament over an anchor set,
/// then K-NN propagation through image embeddings.
#[derive(Parser)]
#[command(name = "streetsafe", version)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory holding the pipeline artifacts.
    #[arg(long, global = true)]
    dir: Option<PathBuf>,
    /// Seed for every stochastic stage. When omitted one is chosen and printed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a point manifest and copy it into the run directory.
    Ingest {
        /// Line-delimited manifest: {point_id, heading, lat, lon, image}.
        input: PathBuf,
    },
    /// Write a synthetic city: manifest, embeddings and latent safety.
    GenerateCity(CityArgs),
    /// Draw the anchor set from the manifest.
    SampleAnchor {
        #[arg(long)]
        size: Option<usize>,
    },
    /// Draw the pairing plan: every anchor against N random others.
    Plan {
        #[arg(long, short = 'n')]
        opponents: Option<usize>,
        /// Replace a plan that already has judgments logged against it.
        #[arg(long)]
        force: bool,
    },
    /// Judge the plan, appending to the judgment log. Resumes where a previous run stopped.
    Rank(RankCli),
    /// Serve pairs to human annotators over HTTP.
    ServeAnnotate {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        bind: Option<String>,
        /// Directory with the annotation UI bundle, served at /.
        #[arg(long)]
        static_dir: Option<PathBuf>,
        /// Guidelines JSON {safe: [...], dangerous: [...]}; defaults to the built-in list.
        #[arg(long)]
        criteria: Option<PathBuf>,
        /// Draw a separate plan for each annotator.
        #[arg(long)]
        independent_plans: bool,
    },
    /// Turn judgment logs into the 0-10 anchor score table.
    Tally {
        /// Judgment logs to read (repeatable). Defaults to the rank log plus the vote log when present.
        #[arg(long = "log")]
        logs: Vec<PathBuf>,
        /// Only count these judges (repeatable).
        #[arg(long = "judge")]
        judges: Vec<String>,
    },
    /// Import embeddings from a file or fetch them from an endpoint.
    Embed {
        #[arg(long, conflicts_with = "endpoint", required_unless_present = "endpoint")]
        file: Option<PathBuf>,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        concurrency: Option<usize>,
    },
    /// Score every manifest point from its K nearest anchors.
    ScoreCity {
        #[arg(long, short = 'k')]
        k: Option<usize>,
        /// Let an anchor image count as its own neighbour.
        #[arg(long)]
        include_self: bool,
    },
    /// Hold out part of the anchors and report MAE and R² of their K-NN predictions.
    Evaluate {
        #[arg(long, short = 'k')]
        k: Option<usize>,
        #[arg(long)]
        train_fraction: Option<f64>,
        /// Latent safety CSV; adds the tournament's rank correlation with it.
        #[arg(long)]
        latent: Option<PathBuf>,
    },
    /// Hold-out R² and MAE for K = 1..k-max.
    AblateK {
        #[arg(long, default_value_t = 10)]
        k_max: usize,
        #[arg(long)]
        train_fraction: Option<f64>,
    },
    /// Write the scored points as a GeoJSON FeatureCollection.
    ExportMap {
        /// Quantile bins added as a `bin` property; 0 leaves them out.
        #[arg(long, default_value_t = 4)]
        bins: usize,
    },
    /// Run the whole pipeline on a synthetic city.
    Demo {
        #[command(flatten)]
        city: CityArgs,
        #[arg(long)]
        anchors: Option<usize>,
        #[arg(long, short = 'n')]
        opponents: Option<usize>,
        #[arg(long, short = 'k')]
        k: Option<usize>,
    },
    /// Run a mock chat-completions endpoint.
    MockMllm {
        #[arg(long, default_value_t = 8090)]
        port: u16,
        /// Scripted replies, handed out in turn (repeatable).
        #[arg(long = "reply")]
        replies: Vec<String>,
    },
    /// Run a mock embedding endpoint.
    MockEmbed {
        #[arg(long, default_value_t = 8091)]
        port: u16,
        #[arg(long, default_value_t = 64)]
        dim: usize,
    },
}

#[derive(Args, Clone)]
struct CityArgs {
    #[arg(long, default_value_t = 5000)]
    points: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Per-image feature noise.
    #[arg(long, default_value_t = 0.1)]
    feature_noise: f64,
}

impl CityArgs {
    fn city(&self) -> CityConfig {
        CityConfig { points: self.points, dim: self.dim, feature_noise: self.feature_noise, ..CityConfig::default() }
    }
}

#[derive(Args)]
struct RankCli {
    #[arg(long, value_enum)]
    judge: JudgeChoice,
    /// Judge id written to the log (default: "synthetic" or the model name).
    #[arg(long)]
    judge_id: Option<String>,
    /// Stop after this many new judgments.
    #[arg(long)]
    limit: Option<usize>,
    /// Chat-completions URL for the MLLM judge.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Synthetic judge: probability of picking the less safe image.
    #[arg(long)]
    noise: Option<f64>,
    /// Synthetic judge: probability of answering C.
    #[arg(long)]
    uncomparable_rate: Option<f64>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    max_retries: Option<u32>,
}

fn pick_seed(explicit: Option<u64>) -> u64 {
    explicit.unwrap_or_else(|| {
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0);
        let seed = streetsafe_core::rng::derive_seed(nanos ^ u64::from(std::process::id()), &["cli"]) % 1_000_000_007;
        eprintln!("no --seed given; using --seed {seed}");
        seed
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = cli.dir {
        cfg.paths.dir = d;
    }
    let seed_arg = cli.seed.or(cfg.seed);
    let summary = match cli.command {
        Command::Ingest { input } => stages::ingest(&cfg, &input)?,
        Command::GenerateCity(c) => stages::generate_city_stage(&cfg, &c.city(), pick_seed(seed_arg))?,
        Command::SampleAnchor { size } => {
            if let Some(s) = size {
                cfg.anchor_size = s;
            }
            stages::sample_anchor_stage(&cfg, pick_seed(seed_arg))?
        }
        Command::Plan { opponents, force } => {
            if let Some(n) = opponents {
                cfg.opponents = n;
            }
            stages::plan_stage(&cfg, pick_seed(seed_arg), force)?
        }
        Command::Rank(r) => {
            let j = &mut cfg.judge;
            j.endpoint = r.endpoint.or(j.endpoint.take());
            if let Some(v) = r.model {
                j.model = v;
            }
            if let Some(v) = r.temperature {
                j.temperature = v;
            }
            if let Some(v) = r.noise {
                j.noise = v;
            }
            if let Some(v) = r.uncomparable_rate {
                j.uncomparable_rate = v;
            }
            if let Some(v) = r.concurrency {
                j.concurrency_limit = v;
            }
            if let Some(v) = r.max_retries {
                j.max_retries = v;
            }
            // a noiseless synthetic judge draws nothing, so no seed is needed
            let stochastic = r.judge == JudgeChoice::Synthetic && (j.noise > 0.0 || j.uncomparable_rate > 0.0);
            let seed = if stochastic { pick_seed(seed_arg) } else { seed_arg.unwrap_or(0) };
            stages::rank(&cfg, &RankArgs { judge: r.judge, judge_id: r.judge_id, limit: r.limit, seed })?
        }
        Command::ServeAnnotate { port, bind, static_dir, criteria, independent_plans } => {
            let s = &mut cfg.service;
            if let Some(p) = port {
                s.port = p;
            }
            if let Some(b) = bind {
                s.bind = b;
            }
            s.static_dir = static_dir.or(s.static_dir.take());
            s.criteria = criteria.or(s.criteria.take());
            s.independent_plans |= independent_plans;
            return stages::serve_annotate(&cfg);
        }
        Command::Tally { logs, judges } => stages::tally_stage(&cfg, &logs, &judges)?,
        Command::Embed { file, endpoint, batch_size, concurrency } => {
            if let Some(b) = batch_size {
                cfg.embed.batch_size = b;
            }
            if let Some(c) = concurrency {
                cfg.embed.concurrency = c;
            }
            let source = match (file, endpoint.or(cfg.embed.endpoint.clone())) {
                (Some(f), _) => EmbedSource::File(f),
                (None, Some(e)) => EmbedSource::Endpoint(e),
                (None, None) => anyhow::bail!("embed needs --file or --endpoint"),
            };
            stages::embed(&cfg, &source)?
        }
        Command::ScoreCity { k, include_self } => {
            if let Some(k) = k {
                cfg.k = k;
            }
            stages::score_city(&cfg, include_self)?
        }
        Command::Evaluate { k, train_fraction, latent } => {
            if let Some(k) = k {
                cfg.k = k;
            }
            if let Some(f) = train_fraction {
                cfg.train_fraction = f;
            }
            stages::evaluate(&cfg, pick_seed(seed_arg), latent.as_deref())?
        }
        Command::AblateK { k_max, train_fraction } => {
            if let Some(f) = train_fraction {
                cfg.train_fraction = f;
            }
            stages::ablate_k(&cfg, pick_seed(seed_arg), k_max)?
        }
        Command::ExportMap { bins } => stages::export_map(&cfg, bins)?,
        Command::Demo { city, anchors, opponents, k } => {
            if let Some(a) = anchors {
                cfg.anchor_size = a;
            }
            if let Some(n) = opponents {
                cfg.opponents = n;
            }
            if let Some(k) = k {
                cfg.k = k;
            }
            stages::demo(&cfg, &DemoArgs { seed: pick_seed(seed_arg), city: city.city(), bins: 4 })?
        }
        Command::MockMllm { port, replies } => {
            use streetsafe_service::mock::{MockChat, MockChatConfig, CHAT_PATH};
            let mut mc = MockChatConfig { record: false, ..MockChatConfig::default() };
            if !replies.is_empty() {
                mc.replies = replies;
            }
            let addr = SocketAddr::from(([127, 0, 0, 1], port));
            println!("{}", serde_json::json!({ "command": "mock-mllm", "url": format!("http://{addr}{CHAT_PATH}") }));
            streetsafe_service::http::serve_forever(MockChat::new(mc).router(), std::net::TcpListener::bind(addr)?)?;
            return Ok(());
        }
        Command::MockEmbed { port, dim } => {
            use streetsafe_service::mock::{MockEmbed, EMBED_PATH};
            let addr = SocketAddr::from(([127, 0, 0, 1], port));
            println!("{}", serde_json::json!({ "command": "mock-embed", "url": format!("http://{addr}{EMBED_PATH}") }));
            streetsafe_service::http::serve_forever(MockEmbed::new(dim, Default::default()).router(), std::net::TcpListener::bind(addr)?)?;
            return Ok(());
        }
    };
    println!("{}", serde_json::Value::Object(summary));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
