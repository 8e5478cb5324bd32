use std::collections::BTreeMap;
use std::path::PathBuf;

use streetsafe_core::embedding::remote::EmbeddingClient;
use streetsafe_core::judges::mllm::{mllm_verdict, MllmClient, MllmJudge};
use streetsafe_core::judges::{run_plan, JudgeConfig, PromptTemplate, RunOptions, SequenceClock};
use streetsafe_core::model::{read_judgments, Heading};
use streetsafe_core::tournament::build_plan;
use streetsafe_core::{AnchorSet, Choice, Corpus, ImageKey, SviRecord};
use streetsafe_service::mock::{MockChat, MockChatConfig, MockEmbed, CHAT_PATH, EMBED_PATH};
use streetsafe_service::spawn;

fn config(url: String) -> JudgeConfig {
    JudgeConfig {
        endpoint: Some(url),
        backoff_base_ms: 1,
        api_key_env: "STREETSAFE_TEST_UNSET_KEY".into(),
        ..JudgeConfig::default()
    }
}

fn chat(cfg: MockChatConfig) -> (MockChat, streetsafe_service::ServerHandle) {
    let mock = MockChat::new(cfg);
    let server = spawn(mock.router(), "127.0.0.1:0".parse().unwrap()).unwrap();
    (mock, server)
}

#[test]
fn throttling_is_retried() {
    let (mock, server) = chat(MockChatConfig { failures: vec![429, 503], ..MockChatConfig::default() });
    let client = MllmClient::from_config(&config(format!("{}{CHAT_PATH}", server.url()))).unwrap();
    let v = mllm_verdict(&client, &PromptTemplate::default(), b"l", b"r").unwrap();
    assert_eq!(v.choice, Choice::Left);
    assert_eq!(mock.request_count(), 3);
}

#[test]
fn persistent_throttling_surfaces_request_id() {
    let (_mock, server) = chat(MockChatConfig { failures: vec![429; 5], ..MockChatConfig::default() });
    let client = MllmClient::from_config(&config(format!("{}{CHAT_PATH}", server.url()))).unwrap();
    let err = mllm_verdict(&client, &PromptTemplate::default(), b"l", b"r").unwrap_err().to_string();
    assert!(err.contains("429"), "{err}");
    assert!(err.contains("mock-2"), "{err}");
}

#[test]
fn unparseable_replies_degrade_to_uncomparable() {
    let (mock, server) = chat(MockChatConfig { replies: vec!["the weather is nice".into()], ..MockChatConfig::default() });
    let client = MllmClient::from_config(&config(format!("{}{CHAT_PATH}", server.url()))).unwrap();
    let v = mllm_verdict(&client, &PromptTemplate::default(), b"l", b"r").unwrap();
    assert_eq!(v.choice, Choice::Uncomparable);
    assert!(v.parse_failed);
    assert_eq!(mock.request_count(), 3);
}

#[test]
fn bearer_token_comes_from_named_variable() {
    let (mock, server) = chat(MockChatConfig::default());
    std::env::set_var("STREETSAFE_TEST_KEY_SET", "sekrit");
    let cfg = JudgeConfig { api_key_env: "STREETSAFE_TEST_KEY_SET".into(), ..config(format!("{}{CHAT_PATH}", server.url())) };
    let client = MllmClient::from_config(&cfg).unwrap();
    mllm_verdict(&client, &PromptTemplate::default(), b"l", b"r").unwrap();
    assert_eq!(mock.authorization_headers(), vec![Some("Bearer sekrit".to_string())]);
}

fn image_corpus(dir: &std::path::Path, n: usize) -> Corpus {
    let records = (0..n)
        .map(|i| {
            let path: PathBuf = dir.join(format!("{i}.jpg"));
            std::fs::write(&path, [0xff, 0xd8, 0xff, (i % 256) as u8]).unwrap();
            SviRecord {
                point_id: format!("a{i:04}"),
                heading: Heading::North,
                lat: 30.6,
                lon: 104.0,
                image_ref: path.display().to_string(),
            }
        })
        .collect();
    Corpus::new(records).unwrap()
}

#[test]
fn forty_thousand_pairs_against_the_mock() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = image_corpus(dir.path(), 1000);
    let anchor = AnchorSet::new(corpus.keys().collect()).unwrap();
    let plan = build_plan(&anchor, 40, 1).unwrap();
    assert_eq!(plan.len(), 40_000);

    let replies = vec!["Choice: A: First Image.".into(), "B: Second Image".into(), "C: Unable to compare.".into()];
    let (mock, server) = chat(MockChatConfig { replies, record: false, ..MockChatConfig::default() });
    let client = MllmClient::from_config(&config(format!("{}{CHAT_PATH}", server.url()))).unwrap();
    let judge = MllmJudge::new("gpt-4o", client, PromptTemplate::default(), &corpus);
    let log = dir.path().join("judgments.jsonl");
    let mut clock = SequenceClock::new(chrono::DateTime::UNIX_EPOCH, chrono::Duration::seconds(1));
    let summary = run_plan(
        &plan,
        &judge,
        &log,
        RunOptions { concurrency_limit: 4, limit: None, flush_every: 1000, clock: &mut clock, rationale_log: None },
    )
    .unwrap();
    assert_eq!(summary.appended, 40_000);
    assert_eq!(mock.request_count(), 40_000);
    let judged = read_judgments(&log).unwrap();
    assert_eq!(judged.len(), 40_000);
    for c in [Choice::Left, Choice::Right, Choice::Uncomparable] {
        assert!(judged.iter().any(|j| j.choice == c));
    }
}

#[test]
fn embedding_mock_fills_and_reuses_cache() {
    let dir = tempfile::tempdir().unwrap();
    let mut table = BTreeMap::new();
    table.insert("img/0".to_string(), vec![3.0f32, 4.0, 0.0]);
    let mock = MockEmbed::new(3, table);
    let server = spawn(mock.router(), "127.0.0.1:0".parse().unwrap()).unwrap();
    let client = EmbeddingClient::new(format!("{}{EMBED_PATH}", server.url()), 2, 2, None).unwrap();
    let images: Vec<(ImageKey, String)> =
        (0..5).map(|i| (ImageKey::new(format!("p{i}"), Heading::South), format!("img/{i}"))).collect();
    let cache = dir.path().join("emb.bin");

    let (m, stats) = client.fetch(&images, &cache).unwrap();
    assert_eq!((stats.requests, stats.fetched, stats.cached), (3, 5, 0));
    assert_eq!(m.len(), 5);
    assert_eq!(m.get(&images[0].0).unwrap(), &[0.6, 0.8, 0.0]);

    let (again, stats) = client.fetch(&images, &cache).unwrap();
    assert_eq!((stats.requests, stats.fetched, stats.cached), (0, 0, 5));
    assert_eq!(again, m);
    assert_eq!(mock.request_count(), 3);
}
