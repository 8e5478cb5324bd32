use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde_json::{json, Value};
use streetsafe_core::model::{read_judgments, Heading};
use streetsafe_core::tournament::{build_plan, PairingPlan};
use streetsafe_core::{AnchorSet, ImageKey, SafetyCriteria};
use streetsafe_service::{router, spawn, Annotator, Assignment, ServerHandle};

fn plan(items: usize, opponents: usize) -> PairingPlan {
    let keys: Vec<ImageKey> = (0..items).map(|i| ImageKey::new(format!("a{i:03}"), Heading::East)).collect();
    build_plan(&AnchorSet::new(keys).unwrap(), opponents, 3).unwrap()
}

fn start(plan: PairingPlan, dir: &Path, images: BTreeMap<ImageKey, String>, assignment: Assignment) -> ServerHandle {
    let a = Annotator::open(plan, assignment, SafetyCriteria::default(), images, &dir.join("votes.jsonl")).unwrap();
    let app = router(Arc::new(a), Some(dir.join("www")));
    spawn(app, "127.0.0.1:0".parse().unwrap()).unwrap()
}

struct Client {
    agent: ureq::Agent,
    base: String,
}

impl Client {
    fn new(server: &ServerHandle) -> Self {
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Client { agent, base: server.url() }
    }

    fn get(&self, path: &str) -> (u16, Value) {
        let mut r = self.agent.get(&format!("{}{path}", self.base)).call().unwrap();
        let status = r.status().as_u16();
        let text = r.body_mut().read_to_string().unwrap();
        (status, if text.is_empty() { Value::Null } else { serde_json::from_str(&text).unwrap_or(Value::String(text)) })
    }

    fn vote(&self, judge: &str, pair: &str, choice: &str) -> (u16, Value) {
        let mut r = self
            .agent
            .post(&format!("{}/api/vote", self.base))
            .send_json(json!({ "judge_id": judge, "pair_id": pair, "choice": choice }))
            .unwrap();
        let status = r.status().as_u16();
        (status, r.body_mut().read_json().unwrap_or(Value::Null))
    }

    fn session(&self) -> String {
        self.get("/api/session").1["judge_id"].as_str().unwrap().to_string()
    }

    /// Votes through the judge's whole assignment; returns the number of pairs served.
    fn drain(&self, judge: &str, choice: &str) -> usize {
        let mut n = 0;
        loop {
            let (status, p) = self.get(&format!("/api/pair?judge={judge}"));
            if status == 204 {
                return n;
            }
            assert_eq!(status, 200, "{p}");
            assert_ne!(p["left"]["key"], p["right"]["key"]);
            assert_eq!(self.vote(judge, p["pair_id"].as_str().unwrap(), choice).0, 200);
            n += 1;
        }
    }
}

#[test]
fn three_judges_fill_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(plan(10, 2), dir.path(), BTreeMap::new(), Assignment::SharedShuffled);
    let c = Client::new(&server);
    let judges: Vec<String> = (0..3).map(|_| c.session()).collect();
    assert_ne!(judges[0], judges[1]);
    let (status, p) = c.get(&format!("/api/progress?judge={}", judges[0]));
    assert_eq!(status, 200);
    assert_eq!(p, json!({ "done": 0, "total": 20 }));
    for (j, choice) in judges.iter().zip(["A", "B", "C"]) {
        assert_eq!(c.drain(j, choice), 20);
    }
    let log = read_judgments(dir.path().join("votes.jsonl")).unwrap();
    assert_eq!(log.len(), 60);
    for j in &judges {
        assert_eq!(log.iter().filter(|x| &x.judge_id == j).count(), 20);
        assert_eq!(c.get(&format!("/api/progress?judge={j}")).1, json!({ "done": 20, "total": 20 }));
    }
}

#[test]
fn pair_payload_and_vote_errors() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(plan(10, 2), dir.path(), BTreeMap::new(), Assignment::SharedShuffled);
    let c = Client::new(&server);
    let j = c.session();
    let (_, p) = c.get(&format!("/api/pair?judge={j}"));
    assert_eq!(p["progress"], json!({ "done": 0, "total": 20 }));
    assert_eq!(p["question"], "Which place looks safer?");
    let key = p["left"]["key"].as_str().unwrap();
    assert_eq!(p["left"]["image"], format!("/api/image/{}", key.replace('#', "%23")));
    let pid = p["pair_id"].as_str().unwrap();

    assert_eq!(c.vote(&j, pid, "X").0, 400);
    assert_eq!(c.vote(&j, "12345", "A").0, 404);
    assert_eq!(c.vote("stranger", pid, "A").0, 404);
    assert_eq!(c.get("/api/pair?judge=stranger").0, 404);

    let (status, body) = c.vote(&j, pid, "A");
    assert_eq!(status, 200);
    assert_eq!(body["ok"], true);
    let (status, body) = c.vote(&j, pid, "B");
    assert_eq!(status, 409, "{body}");
    assert_eq!(read_judgments(dir.path().join("votes.jsonl")).unwrap().len(), 1);
    assert_eq!(c.get(&format!("/api/progress?judge={j}")).1["done"], 1);
}

#[test]
fn restart_resumes_from_log() {
    let dir = tempfile::tempdir().unwrap();
    let p = plan(10, 2);
    let server = start(p.clone(), dir.path(), BTreeMap::new(), Assignment::SharedShuffled);
    let c = Client::new(&server);
    let j = c.session();
    for _ in 0..7 {
        let (_, pair) = c.get(&format!("/api/pair?judge={j}"));
        c.vote(&j, pair["pair_id"].as_str().unwrap(), "A");
    }
    // served but never voted: must come back after the restart
    let (_, pending) = c.get(&format!("/api/pair?judge={j}"));
    server.stop();

    let server = start(p, dir.path(), BTreeMap::new(), Assignment::SharedShuffled);
    let c = Client::new(&server);
    assert_eq!(c.get(&format!("/api/progress?judge={j}")).1, json!({ "done": 7, "total": 20 }));
    let (_, again) = c.get(&format!("/api/pair?judge={j}"));
    assert_eq!(again["pair_id"], pending["pair_id"]);
    assert_eq!(again["left"], pending["left"]);
    c.vote(&j, again["pair_id"].as_str().unwrap(), "B");
    assert_eq!(c.drain(&j, "C"), 12);
    assert_eq!(read_judgments(dir.path().join("votes.jsonl")).unwrap().len(), 20);
}

#[test]
fn ten_thousand_serves_never_pair_an_image_with_itself() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(plan(100, 10), dir.path(), BTreeMap::new(), Assignment::Independent);
    let c = Client::new(&server);
    let mut served = 0;
    for _ in 0..10 {
        let j = c.session();
        served += c.drain(&j, "A");
    }
    assert_eq!(served, 10_000);
    let log = read_judgments(dir.path().join("votes.jsonl")).unwrap();
    assert_eq!(log.len(), 10_000);
    assert!(log.iter().all(|j| j.left != j.right));
}

#[test]
fn guidelines_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(plan(5, 2), dir.path(), BTreeMap::new(), Assignment::SharedShuffled);
    let c = Client::new(&server);
    let (status, g) = c.get("/api/guidelines");
    assert_eq!(status, 200);
    let back: SafetyCriteria = serde_json::from_value(g.clone()).unwrap();
    assert_eq!(back, SafetyCriteria::default());
    assert!(g["dangerous"].as_array().unwrap().iter().any(|l| l == "Buildings that are damaged or abandoned"));
}

#[test]
fn empty_criteria_refuse_to_start() {
    let dir = tempfile::tempdir().unwrap();
    let empty = SafetyCriteria { safe: vec![], dangerous: vec![] };
    let r = Annotator::open(plan(5, 2), Assignment::SharedShuffled, empty, BTreeMap::new(), &dir.path().join("v.jsonl"));
    assert!(r.is_err());
}

#[test]
fn images_and_static_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("www")).unwrap();
    std::fs::write(dir.path().join("www/index.html"), "<html>ui</html>").unwrap();
    let png = dir.path().join("x.png");
    std::fs::write(&png, [0x89, b'P', b'N', b'G', 0, 1]).unwrap();
    let p = plan(5, 2);
    let keys = p.keys();
    let mut images = BTreeMap::new();
    images.insert(keys[0].clone(), png.display().to_string());
    images.insert(keys[1].clone(), "https://example.invalid/img.jpg".to_string());
    let server = start(p, dir.path(), images, Assignment::SharedShuffled);

    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).max_redirects(0).build().into();
    let url = |k: &ImageKey| format!("{}{}", server.url(), streetsafe_service::http::image_path(k));
    let mut r = agent.get(&url(&keys[0])).call().unwrap();
    assert_eq!(r.status(), 200);
    assert_eq!(r.headers()["content-type"], "image/png");
    assert_eq!(r.body_mut().read_to_vec().unwrap(), vec![0x89, b'P', b'N', b'G', 0, 1]);
    let r = agent.get(&url(&keys[1])).call().unwrap();
    assert_eq!(r.status(), 307);
    assert_eq!(r.headers()["location"], "https://example.invalid/img.jpg");
    assert_eq!(agent.get(&url(&keys[2])).call().unwrap().status(), 404);

    let mut r = agent.get(&format!("{}/", server.url())).call().unwrap();
    assert_eq!(r.status(), 200);
    assert_eq!(r.body_mut().read_to_string().unwrap(), "<html>ui</html>");
}
