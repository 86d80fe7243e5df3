//! The `geps` binary against a live local cluster: outputs and exit codes.

mod common;

use common::*;
use geps_cli::exit;
use geps_core::catalog::Catalog;
use geps_core::FragmentFile;
use std::net::TcpListener;
use std::process::Output;
use std::time::Duration;
use tokio::process::Command;

async fn geps(gateway: &str, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geps"))
        .arg("--gateway")
        .arg(gateway)
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .await
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn ingest_submit_status_fetch() {
    let c = cluster(2, Duration::ZERO).await;
    let gw = c.gateway_url();
    let out = geps(
        &gw,
        &["ingest", "--events", "500", "--fragments", "4", "--replication", "2"],
    )
    .await;
    assert_eq!(code(&out), exit::OK, "{out:?}");
    let ds = stdout(&out).trim().to_owned();

    let out = geps(
        &gw,
        &["submit", "--dataset", &ds, "--filter", "bx>1000&levr<100", "--wait"],
    )
    .await;
    assert_eq!(code(&out), exit::OK, "{out:?}");
    let table = stdout(&out);
    assert!(table.starts_with("Job ID"), "{table}");
    assert!(
        table.contains("Finished") && table.contains("bx>1000&levr<100"),
        "{table}"
    );

    let out = geps(&gw, &["--json", "status"]).await;
    let rows: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rows[0]["status"], "Finished");
    let job_id = rows[0]["job_id"].to_string();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("result.geb");
    let out = geps(&gw, &["fetch", &job_id, "--out", path.to_str().unwrap()]).await;
    assert_eq!(code(&out), exit::OK, "{out:?}");
    let f = FragmentFile::decode(&std::fs::read(&path).unwrap()).unwrap();
    assert_eq!(f.meta.dataset_id.to_string(), ds);

    let out = geps(&gw, &["nodes"]).await;
    assert_eq!(code(&out), exit::OK);
    assert!(stdout(&out).contains("node0") && stdout(&out).contains("node1"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn failures_map_to_exit_codes() {
    let c = cluster(2, Duration::ZERO).await;
    let gw = c.gateway_url();
    let data = load(&c.client(), 1, 200, 2, 1).await;
    let ds = data.report.dataset_id.to_string();

    let out = geps(&gw, &["submit", "--dataset", &ds, "--filter", "bx>"]).await;
    assert_eq!(code(&out), exit::REJECTED, "{out:?}");
    let out = geps(&gw, &["submit", "--dataset", "99", "--filter", "bx>1"]).await;
    assert_eq!(code(&out), exit::REJECTED);
    let out = geps(&gw, &["status", "4242"]).await;
    assert_eq!(code(&out), exit::NOT_FOUND);
    let out = geps(&gw, &["fetch", "4242", "--out", "/dev/null"]).await;
    assert_eq!(code(&out), exit::NOT_FOUND);
    let out = geps(&gw, &["nodes", "nobody"]).await;
    assert_eq!(code(&out), exit::NOT_FOUND);

    // a result damaged on disk is caught by its checksum
    let job_id = submit(
        &c.client(),
        geps_core::catalog::Target::All,
        "bx>0",
        data.report.dataset_id,
        None,
    )
    .await;
    finish(&c.client(), job_id).await;
    let path = c.catalog_dir().join(Catalog::result_rel_path(job_id));
    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&path, &bytes).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("r.geb");
    let out = geps(&gw, &["fetch", &job_id.to_string(), "--out", target.to_str().unwrap()]).await;
    assert_eq!(code(&out), exit::CHECKSUM, "{out:?}");
    assert!(!target.exists());
}

#[tokio::test]
async fn startup_failures() {
    let closed = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        format!("http://{}", l.local_addr().unwrap())
    };
    assert_eq!(code(&geps(&closed, &["status"]).await), exit::NETWORK);
    assert_eq!(code(&geps(&closed, &["frobnicate"]).await), exit::USAGE);
    assert_eq!(code(&geps(&closed, &["submit", "--filter", "bx>1"]).await), exit::USAGE);

    let busy = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = busy.local_addr().unwrap().port().to_string();
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("agent");
    let out = geps(
        &closed,
        &[
            "agent",
            "--name",
            "a",
            "--bind",
            "127.0.0.1",
            "--port",
            &port,
            "--data-dir",
            data_dir.to_str().unwrap(),
        ],
    )
    .await;
    assert_eq!(code(&out), exit::PORT_IN_USE, "{out:?}");

    let file = dir.path().join("plain-file");
    std::fs::write(&file, b"x").unwrap();
    let catalog = file.join("catalog");
    let out = geps(
        &closed,
        &["jse", "--catalog", catalog.to_str().unwrap(), "--listen", "127.0.0.1:0"],
    )
    .await;
    assert_eq!(code(&out), exit::CATALOG_UNAVAILABLE, "{out:?}");
    let out = geps(&closed, &["jse", "--listen", "127.0.0.1:0"]).await;
    assert_eq!(code(&out), exit::USAGE, "{out:?}");
}
