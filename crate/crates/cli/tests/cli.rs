use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use partgroup::pipeline::Manifest;
use partgroup_service::{router, AppState, ServiceConfig};
use serde_json::Value;
use tower::ServiceExt;

fn partgroup(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_partgroup"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = partgroup(args);
    assert!(
        out.status.success(),
        "partgroup {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generated benchmark with `count` meshes: pinecone_0, fence_1, plant_2, ...
fn genbench(dir: &Path, count: usize) -> PathBuf {
    let out = dir.join("bench");
    ok(&["genbench", "--out", s(&out), "--count", &count.to_string(), "--seed", "3"]);
    out
}

#[test]
fn help_lists_defaults() {
    let cases: &[(&str, &[&str])] = &[
        ("run", &["--resolution", "[default: 512]", "[default: 16]", "[default: 64]", "--space", "--head", "--jobs"]),
        ("segment", &["--out"]),
        ("dedup", &["[default: 64]", "--histogram-tol", "--scale-tol", "--vertex-tol"]),
        ("views", &["[default: 512]", "[default: 0.3]", "--part"]),
        ("embed", &["[default: isolated,context,full]", "--external"]),
        ("train", &["[default: 0.00001]", "[default: 256]", "[default: 0.07]", "[default: 20000]", "[default: 8]", "[default: 100]", "[default: 5]"]),
        ("query", &["--lambda", "--part", "--index-dir", "[default: x]"]),
        ("rank", &["--part", "--index-dir"]),
        ("eval", &["--benchmark", "--index-dir", "--val-meshes", "[default: 5]", "[default: 200]", "[default: macro]"]),
        ("genbench", &["[default: 10]"]),
        ("serve", &["[default: 8080]", "PARTGROUP_DATA_DIR", "[default: builtin]", "--head"]),
    ];
    for (cmd, needles) in cases {
        let help = ok(&[cmd, "--help"]);
        for n in *needles {
            assert!(help.contains(n), "`{cmd} --help` lacks {n}:\n{help}");
        }
    }
}

#[test]
fn segment_and_dedup_on_generated_fence() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = genbench(tmp.path(), 2);
    let fence = bench.join("fence_1.obj");
    let snap: Value = serde_json::from_str(&ok(&["segment", s(&fence)])).unwrap();
    assert_eq!(snap["parts"].as_array().unwrap().len(), 10);
    let groups: Value = serde_json::from_str(&ok(&["dedup", s(&fence)])).unwrap();
    let members: usize = groups.as_array().unwrap().iter().map(|g| g["members"].as_array().unwrap().len()).sum();
    assert_eq!(members, 10);

    let listed: Value = serde_json::from_str(&std::fs::read_to_string(bench.join("benchmark.json")).unwrap()).unwrap();
    assert_eq!(listed.as_array().unwrap().len(), 2);
    assert_eq!(listed[1]["mesh"], "fence_1.obj");
}

#[test]
fn run_query_rank_and_service_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = genbench(tmp.path(), 2);
    let fence = bench.join("fence_1.obj");
    let out = tmp.path().join("fence");
    let printed = ok(&["run", s(&fence), "--out", s(&out), "--resolution", "64", "--save-views", "--rankings"]);
    assert!(printed.starts_with("10 parts"), "{printed}");
    let manifest: Manifest = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let summary = manifest.summary.unwrap();
    assert_eq!(summary.parts, 10);
    assert_eq!(summary.embedding_bytes, summary.exemplars * 1152 * 4);
    assert!(manifest.files.contains_key("rankings.json"));
    assert!(manifest.files.keys().any(|k| k.starts_with("views/")));

    // Rank: every other part once, distances ascending.
    let csv = ok(&["rank", "--index-dir", s(&out), "--part", "2"]);
    let rows: Vec<(u32, f64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    assert_eq!(csv.lines().next(), Some("rank,part_id,distance"));
    assert_eq!(rows.len(), 9);
    assert!(rows.windows(2).all(|w| w[0].1 <= w[1].1));
    assert!(rows.iter().all(|r| r.0 != 2));

    // The service computes its own artifacts for the same bytes at the same
    // resolution; the query responses must be byte-identical.
    let rt = tokio::runtime::Runtime::new().unwrap();
    let data = tmp.path().join("service");
    let cases = [(vec!["0"], "0"), (vec!["1", "9"], "5.5"), (vec!["3", "4"], "30"), (vec!["7"], "1000000")];
    let service_out: Vec<String> = rt.block_on(async {
        let mut cfg = ServiceConfig::new(&data);
        cfg.resolution = 64;
        let app = router(AppState::new(cfg));
        let send = |req: Request<Body>| {
            let app = app.clone();
            async move {
                let resp = app.oneshot(req).await.unwrap();
                resp.into_body().collect().await.unwrap().to_bytes().to_vec()
            }
        };
        let created: Value = serde_json::from_slice(
            &send(Request::post("/meshes").body(Body::from(std::fs::read(&fence).unwrap())).unwrap()).await,
        )
        .unwrap();
        let id = created["mesh_id"].as_str().unwrap().to_string();
        let start = Instant::now();
        loop {
            let st: Value =
                serde_json::from_slice(&send(Request::get(format!("/meshes/{id}")).body(Body::empty()).unwrap()).await).unwrap();
            if st["status"] == "ready" {
                break;
            }
            assert_eq!(st["status"], "ingesting", "{st}");
            assert!(start.elapsed() < Duration::from_secs(120));
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
        let mut outs = Vec::new();
        for (parts, lambda) in &cases {
            let body = format!("{{\"query_part_ids\":[{}],\"lambda\":{lambda}}}", parts.join(","));
            let req = Request::post(format!("/meshes/{id}/query"))
                .header("content-type", "application/json")
                .body(Body::from(body))
                .unwrap();
            outs.push(String::from_utf8(send(req).await).unwrap());
        }
        outs
    });
    for ((parts, lambda), served) in cases.iter().zip(service_out) {
        let mut args = vec!["query", "--index-dir", s(&out), "--lambda", lambda];
        for p in parts {
            args.extend(["--part", p]);
        }
        assert_eq!(ok(&args).trim_end(), served, "query {parts:?} λ={lambda}");
    }
}

#[test]
fn space_z_without_head_fails_before_compute() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = genbench(tmp.path(), 2);
    let out = tmp.path().join("z");
    let res = partgroup(&["run", s(&bench.join("fence_1.obj")), "--out", s(&out), "--space", "z"]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("configuration error"));
    let manifest: Manifest = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.failed_stage.as_deref(), Some("load"));
    assert!(manifest.files.is_empty());
    assert!(!out.join("mesh.json").exists());
}

#[test]
fn views_and_external_embeddings() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = genbench(tmp.path(), 2);
    let fence = bench.join("fence_1.obj");

    let views = tmp.path().join("views");
    ok(&["views", s(&fence), "--out", s(&views), "--part", "0", "--part", "3", "--resolution", "32"]);
    for p in ["0", "3"] {
        for r in ["isolated", "context", "full"] {
            let png = std::fs::read(views.join(p).join(format!("{r}.png"))).unwrap();
            assert_eq!(&png[..4], b"\x89PNG");
        }
    }
    assert!(!partgroup(&["views", s(&fence), "--out", s(&views), "--part", "10"]).status.success());

    // An embedding store written by `embed` reproduces the rendered run.
    let store = tmp.path().join("store");
    ok(&["embed", s(&fence), "--out", s(&store), "--resolution", "48"]);
    let rendered = tmp.path().join("rendered");
    let external = tmp.path().join("external");
    ok(&["run", s(&fence), "--out", s(&rendered), "--resolution", "48"]);
    ok(&["run", s(&fence), "--out", s(&external), "--external", s(&store)]);
    for f in ["embeddings.bin", "embeddings.json", "groups.json"] {
        assert_eq!(
            std::fs::read(rendered.join(f)).unwrap(),
            std::fs::read(external.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn train_then_query_in_z_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = genbench(tmp.path(), 3);
    let ckpt = tmp.path().join("head.bin");
    let log = tmp.path().join("loss.csv");
    let printed = ok(&[
        "train", "--synthetic", "3", "--synthetic-seed", "9", "--steps", "5", "--batch-size", "16",
        "--resolution", "32", "--lr", "1e-4", "--out", s(&ckpt), "--log", s(&log), "--jobs", "2",
    ]);
    assert!(printed.starts_with("loss "), "{printed}");
    let csv = std::fs::read_to_string(&log).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert_eq!(csv.lines().next(), Some("step,loss"));

    let index = tmp.path().join("index");
    for name in ["pinecone_0", "fence_1", "plant_2"] {
        ok(&[
            "run", s(&bench.join(format!("{name}.obj"))), "--out", s(&index.join(name)), "--resolution", "32",
        ]);
    }
    let z: Value = serde_json::from_str(&ok(&[
        "query", "--index-dir", s(&index.join("fence_1")), "--part", "1", "--lambda", "0.5", "--space", "z",
        "--head", s(&ckpt),
    ]))
    .unwrap();
    assert!(z["selected"].as_array().unwrap().iter().any(|s| s["part_id"] == 1));

    let report_path = tmp.path().join("metrics.json");
    let line = ok(&[
        "eval", "--benchmark", s(&bench.join("benchmark.json")), "--index-dir", s(&index), "--val-meshes", "1",
        "--out", s(&report_path),
    ]);
    assert!(line.starts_with("AUC-PR "), "{line}");
    let report: Value = serde_json::from_slice(&std::fs::read(&report_path).unwrap()).unwrap();
    for k in ["AUC PR", "mAP", "F1", "R-Prec"] {
        let v = report["metrics"][k].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{k} = {v}");
    }
    let bad = partgroup(&[
        "eval", "--benchmark", s(&bench.join("benchmark.json")), "--index-dir", s(&index), "--val-meshes", "3",
    ]);
    assert!(!bad.status.success());
}
