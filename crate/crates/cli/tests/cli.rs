use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use morphcheck_core::adapters::{HttpPort, LexiconSentiment, ModelPort, RetryPolicy};
use morphcheck_core::probe::LinearProbe;
use morphcheck_core::relations::parse_dot;
use morphcheck_core::{predicted_class, Span, ViewRequest};
use serde_json::{json, Value};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").canonicalize().unwrap()
}

fn morphcheck(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_morphcheck"))
        .args(args)
        .current_dir(dir)
        .env_remove("MORPHCHECK_MODEL_URL")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn preset(name: &str) -> Value {
    let o = morphcheck(&fixtures(), &["preset", name]);
    assert!(o.status.success());
    serde_json::from_str(&stdout(&o)).unwrap()
}

/// Writes `config` into `dir` with data paths pointing at the fixtures.
fn write_config(dir: &Path, name: &str, mut config: Value) -> PathBuf {
    let fx = fixtures();
    let abs = |v: &mut Value| {
        if let Some(s) = v.as_str() {
            *v = json!(fx.join(s).to_str().unwrap());
        }
    };
    for key in ["path", "contexts", "insertions"] {
        if let Some(v) = config["data"].get_mut(key) {
            abs(v);
        }
    }
    if let Some(langs) = config["data"].get_mut("languages").and_then(Value::as_array_mut) {
        for l in langs {
            abs(&mut l["path"]);
        }
    }
    for key in ["lexicon", "taxonomy"] {
        if let Some(v) = config["model"].get_mut(key) {
            abs(v);
        }
    }
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn rows(report: &Value, grouping: &str) -> Vec<Value> {
    report["reports"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["grouping"] == grouping)
        .unwrap_or_else(|| panic!("no {grouping} report"))["rows"]
        .as_array()
        .unwrap()
        .clone()
}

#[test]
fn systematicity_preset_reports_six_sorted_rows() {
    let o = morphcheck(&fixtures(), &["run", "--preset", "systematicity-sentiment", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let by_t = rows(&report, "by_transformation");
    assert_eq!(by_t.len(), 6);
    let p: Vec<f64> = by_t.iter().map(|r| r["violation_proportion"].as_f64().unwrap()).collect();
    assert!(p.windows(2).all(|w| w[0] >= w[1]), "{p:?}");
    assert!(p[0] > 0.0);
    assert_eq!(report["totals"]["violated"].as_u64().unwrap() + report["totals"]["satisfied"].as_u64().unwrap() + report["totals"]["vacuous"].as_u64().unwrap(), 6 * 50 * 49);
    assert_eq!(rows(&report, "by_source_input").len(), 50);
}

#[test]
fn closed_taxonomy_has_no_transitivity_violations() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset("transitivity-lexical");
    let open = write_config(dir.path(), "open.json", cfg.clone());
    let o = morphcheck(dir.path(), &["run", "--config", open.to_str().unwrap(), "--format", "json"]);
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(rows(&report, "by_language").iter().any(|r| r["violated"].as_u64().unwrap() > 0));

    cfg["model"]["transitive_closure"] = json!(true);
    let closed = write_config(dir.path(), "closed.json", cfg);
    let o = morphcheck(dir.path(), &["run", "--config", closed.to_str().unwrap(), "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let by_lang = rows(&report, "by_language");
    assert_eq!(by_lang.len(), 2);
    for r in &by_lang {
        assert_eq!(r["violated"], 0, "{r}");
        assert!(r["satisfied"].as_u64().unwrap() > 0, "{r}");
    }
}

const VALENCE: &str = "good\t1.0\nawful\t-3.0\n";

/// Ten reviews; appending "Awful." flips the predicted class of exactly one.
fn budget_fixture(dir: &Path) -> PathBuf {
    let mut texts: Vec<String> = (0..9).map(|i| format!("good good good good film {i}")).collect();
    texts.push("good film".into());
    std::fs::write(dir.join("ten.txt"), texts.join("\n") + "\n").unwrap();
    std::fs::write(dir.join("valence.tsv"), VALENCE).unwrap();
    let cfg = json!({
        "data": {"kind": "texts", "path": "ten.txt"},
        "model": {"kind": "lexicon_sentiment", "lexicon": "valence.tsv"},
        "relations": [{
            "class": "single_input",
            "transform": {"kind": "concat_sentence", "text": "Awful.", "position": "end"},
            "property": {"eq": [0, 1]}
        }],
        "enumeration": {"shape": "singles"}
    });
    let path = dir.join("budget.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn budget_gate_sets_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = budget_fixture(dir.path());

    // Reference rate, computed directly from the stub.
    let port = LexiconSentiment::from_tsv(VALENCE.as_bytes(), false).unwrap();
    let text = std::fs::read_to_string(dir.path().join("ten.txt")).unwrap();
    let class = |t: &str| predicted_class(&port.score_batch(&[t], &[ViewRequest::Softmax]).unwrap()[0][0]).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let flips = lines.iter().filter(|t| class(t) != class(&format!("{t} Awful."))).count();
    assert_eq!((flips, lines.len()), (1, 10));

    let c = cfg.to_str().unwrap();
    let o = morphcheck(dir.path(), &["run", "--config", c, "--budget", "0.05"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["violation_proportion"], 0.1);
    assert!(stderr(&o).contains("exceeded"));
    assert_eq!(morphcheck(dir.path(), &["run", "--config", c, "--budget", "0.15"]).status.code(), Some(0));
    assert_eq!(morphcheck(dir.path(), &["run", "--config", c, "--budget", "0.1"]).status.code(), Some(0));
    assert_eq!(morphcheck(dir.path(), &["run", "--config", c]).status.code(), Some(0));
    assert_eq!(morphcheck(dir.path(), &["run", "--config", c, "--budget", "1.5"]).status.code(), Some(1));
}

fn config_error(cfg: Value) -> String {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("ten.txt"), "good\nawful\n").unwrap();
    std::fs::write(dir.path().join("valence.tsv"), VALENCE).unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let o = morphcheck(dir.path(), &["run", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    stderr(&o)
}

#[test]
fn config_errors_name_the_field() {
    let base = json!({
        "data": {"kind": "texts", "path": "ten.txt"},
        "model": {"kind": "lexicon_sentiment", "lexicon": "valence.tsv"},
        "scores": {"s_pos": {"kind": "softmax_component", "index": 1}},
        "relations": [{
            "class": "pairwise_systematicity",
            "transform": {"kind": "concat_sentence", "text": "Thank you.", "position": "start"},
            "premise": {"ord": {"score": "s_pos", "a": 0, "b": 1}},
            "hypothesis": {"ord": {"score": "s_pos", "a": 0, "b": 1}},
            "connective": "implies"
        }],
        "enumeration": {"shape": "ordered_pairs"}
    });
    let with = |f: &dyn Fn(&mut Value)| {
        let mut c = base.clone();
        f(&mut c);
        config_error(c)
    };
    let e = with(&|c| c["relations"][0]["hypothesis"]["ord"]["score"] = json!("s_neg"));
    assert!(e.contains("/relations/0/hypothesis/ord/score") && e.contains("s_neg"), "{e}");
    let e = with(&|c| c["enumeration"]["shape"] = json!("ordered_triplets"));
    assert!(e.contains("/enumeration/shape"), "{e}");
    let e = with(&|c| {
        c["relations"][0].as_object_mut().unwrap().remove("class");
    });
    assert!(e.contains("/relations/0") && e.contains("class"), "{e}");
    let e = with(&|c| {
        c["enumeration"].as_object_mut().unwrap().remove("shape");
    });
    assert!(e.contains("/enumeration") && e.contains("shape"), "{e}");
    let e = with(&|c| c["data"]["path"] = json!("missing.txt"));
    assert!(e.contains("/data/path"), "{e}");
    let e = with(&|c| c["model"]["lexicon"] = json!("missing.tsv"));
    assert!(e.contains("/model/lexicon"), "{e}");
    let e = with(&|c| c["relations"][0]["premise"] = json!({"eq": [0, 3]}));
    assert!(e.contains("/relations/0"), "{e}");
    let e = with(&|c| c["budget"] = json!(-0.5));
    assert!(e.contains("/budget"), "{e}");
}

#[test]
fn reports_are_identical_across_runs_and_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.json", preset("compositionality-nli"));
    let c = cfg.to_str().unwrap();
    let mut outputs = Vec::new();
    for workers in ["1", "3", "1"] {
        let cases = dir.path().join(format!("cases-{}.jsonl", outputs.len()));
        let o = morphcheck(
            dir.path(),
            &["run", "--config", c, "--seed", "7", "--workers", workers, "--format", "csv", "--emit-cases", cases.to_str().unwrap()],
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        outputs.push((stdout(&o), std::fs::read_to_string(cases).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
    let other = morphcheck(dir.path(), &["run", "--config", c, "--seed", "8", "--format", "csv"]);
    assert_ne!(stdout(&other), outputs[0].0, "the seed drives the probe split");
}

#[test]
fn case_stream_has_one_line_per_case() {
    let dir = tempfile::tempdir().unwrap();
    let cases = dir.path().join("cases.jsonl");
    let o = morphcheck(
        &fixtures(),
        &["run", "--preset", "systematicity-sentiment", "--format", "json", "--emit-cases", cases.to_str().unwrap()],
    );
    assert!(o.status.success());
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let text = std::fs::read_to_string(cases).unwrap();
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 14700);
    let violated = lines.iter().filter(|l| l["verdict"] == "violated").count() as u64;
    assert_eq!(violated, report["totals"]["violated"].as_u64().unwrap());
    assert_eq!(lines[0]["tuple"].as_array().unwrap().len(), 2);
}

#[test]
fn several_formats_go_to_sibling_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.txt");
    let o = morphcheck(
        &fixtures(),
        &["run", "--preset", "transitivity-lexical", "--format", "json", "--format", "csv", "--format", "md", "--out", out.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.starts_with("grouping,key,violation_proportion"));
    assert!(std::fs::read_to_string(dir.path().join("report.md")).unwrap().contains("| en/synonymy"));
    let _: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
}

#[test]
fn model_url_from_environment() {
    let lex = LexiconSentiment::load(&fixtures().join("valence.tsv"), true).unwrap();
    let server = morphcheck_server::spawn(morphcheck_server::router(morphcheck_server::Backend::port(lex)), "127.0.0.1:0".parse().unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset("systematicity-sentiment");
    let local = write_config(dir.path(), "local.json", cfg.clone());
    cfg.as_object_mut().unwrap().remove("model");
    let no_model_cfg = write_config(dir.path(), "remote.json", cfg);

    let expected = morphcheck(dir.path(), &["run", "--config", local.to_str().unwrap(), "--format", "json"]);
    assert!(expected.status.success());
    let expected = stdout(&expected);
    let o = morphcheck(dir.path(), &["run", "--config", no_model_cfg.to_str().unwrap(), "--format", "json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("MORPHCHECK_MODEL_URL"));
    let o = Command::new(env!("CARGO_BIN_EXE_morphcheck"))
        .args(["run", "--config", no_model_cfg.to_str().unwrap(), "--format", "json"])
        .env("MORPHCHECK_MODEL_URL", server.url())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), expected);
}

#[test]
fn count_command() {
    let dir = fixtures();
    let count = |args: &[&str]| stdout(&morphcheck(&dir, &[&["count"], args].concat())).trim().to_string();
    assert_eq!(count(&["--shape", "ordered_pairs", "--k", "10605"]), "112455420");
    assert_eq!(count(&["--shape", "unordered_pairs", "--k", "292"]), "42486");
    assert_eq!(count(&["--shape", "ordered_triplets", "--k", "3"]), "6");
    assert_eq!(count(&["--shape", "singles", "--k", "4", "--allow-self"]), "4");
    assert_eq!(count(&["--shape", "ordered_pairs", "--k", "100", "--sample", "50"]), "50");
    assert!(!morphcheck(&dir, &["count", "--shape", "pairs", "--k", "3"]).status.success());
}

#[test]
fn graph_command_census() {
    let dir = fixtures();
    let expected = [
        ("single_input", [1, 1, 2]),
        ("pairwise_systematicity", [2, 2, 4]),
        ("pairwise_compositionality", [2, 0, 4]),
        ("three_way_transitivity", [3, 3, 3]),
    ];
    for (class, [grey, white, squares]) in expected {
        let o = morphcheck(&dir, &["graph", "--class", class]);
        assert!(o.status.success(), "{}", stderr(&o));
        let g = parse_dot(&stdout(&o)).unwrap();
        let has = |a: &std::collections::BTreeMap<String, String>, k: &str, v: &str| a.get(k).map(String::as_str) == Some(v);
        let filled = g.nodes.values().filter(|a| has(a, "shape", "circle") && has(a, "fillcolor", "lightgray")).count();
        let plain = g.nodes.values().filter(|a| has(a, "shape", "circle") && !a.contains_key("fillcolor")).count();
        let sq = g.nodes.values().filter(|a| has(a, "shape", "square")).count();
        assert_eq!([filled, plain, sq], [grey, white, squares], "{class}");
    }
    let o = morphcheck(&dir, &["graph", "--preset", "systematicity-sentiment", "--relation", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).matches("digraph").count(), 1);
    let all = morphcheck(&dir, &["graph", "--preset", "systematicity-sentiment"]);
    assert_eq!(stdout(&all).matches("digraph").count(), 6);
    assert!(!morphcheck(&dir, &["graph", "--class", "four_way"]).status.success());
}

#[test]
fn probe_train_command() {
    let dir = tempfile::tempdir().unwrap();
    let examples = dir.path().join("ex.jsonl");
    let mut lines = String::new();
    for i in 0..40 {
        let label = i % 2;
        let s = if label == 1 { 1.0 } else { -1.0 };
        let jitter = (i as f64 * 0.37).sin() * 0.3;
        lines += &format!("{}\n", json!({"z": [s + jitter, s - jitter, jitter], "label": label}));
    }
    std::fs::write(&examples, lines).unwrap();
    let out = dir.path().join("probe.json");
    let o = morphcheck(dir.path(), &["probe", "train", "--examples", examples.to_str().unwrap(), "--out", out.to_str().unwrap(), "--epochs", "300"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("accuracy 1.0000"));
    let probe = LinearProbe::load(&out).unwrap();
    assert_eq!(probe.dim, 3);
    assert_eq!(probe.meta.epochs, 300);

    std::fs::write(&examples, "{\"z\": [1.0], \"label\": 3}\n").unwrap();
    assert_eq!(
        morphcheck(dir.path(), &["probe", "train", "--examples", examples.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.code(),
        Some(1)
    );
}

#[test]
fn serve_stub_echo_mode() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_morphcheck"))
        .args(["serve-stub", "--echo", "--port", "0", "--hidden-dim", "6", "--classes", "a,b,c"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").unwrap().to_string();
    let port = HttpPort::connect(&url, RetryPolicy { backoff: vec![] }, 1).unwrap();
    let out = port
        .score_batch(&["a b"], &[ViewRequest::Hidden { layer: -1, spans: vec![Span::new(0, 1), Span::new(2, 3)] }, ViewRequest::Softmax])
        .unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(out[0][0].values(), &[0.0; 12]);
    assert_eq!(out[0][1].values(), &[1.0 / 3.0; 3]);
}

#[test]
fn serve_stub_serves_a_configured_stub() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_morphcheck"))
        .args(["serve-stub", "--preset", "systematicity-sentiment", "--port", "0"])
        .current_dir(fixtures())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").unwrap().to_string();
    let remote = HttpPort::connect(&url, RetryPolicy { backoff: vec![] }, 1).map(|p| {
        p.score_batch(&["a happy film", "it rained"], &[ViewRequest::Softmax]).unwrap()
    });
    child.kill().unwrap();
    child.wait().unwrap();
    let local = LexiconSentiment::load(&fixtures().join("valence.tsv"), true).unwrap();
    assert_eq!(remote.unwrap(), local.score_batch(&["a happy film", "it rained"], &[ViewRequest::Softmax]).unwrap());
}

#[test]
fn presets_and_schema_agree() {
    let schema: Value = serde_json::from_str(&stdout(&morphcheck(&fixtures(), &["schema"]))).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let names = stdout(&morphcheck(&fixtures(), &["preset"]));
    assert_eq!(names.lines().count(), 3);
    for name in names.lines() {
        let cfg = preset(name);
        let errors: Vec<String> = validator.iter_errors(&cfg).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{name}: {errors:?}");
    }
    let mut bad = preset("systematicity-sentiment");
    bad["relations"][0]["connective"] = json!("sometimes");
    assert!(!validator.is_valid(&bad));
    let mut bad = preset("transitivity-lexical");
    bad["enumeration"].as_object_mut().unwrap().remove("shape");
    assert!(!validator.is_valid(&bad));
}
