use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::process::{Command, Output, Stdio};

fn csiblt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csiblt")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn reconcile_in_process() {
    let o = csiblt(&["reconcile", "--n", "50", "--k", "2", "--d", "6", "--seed", "3", "--protocol", "naive"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("scalars_sent=50"));

    let o = csiblt(&["reconcile", "--n", "40", "--k", "3", "--d", "4", "--seed", "1", "--protocol", "cs-iblt"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("success=true"));

    let o = csiblt(&[
        "reconcile", "--n", "40", "--k", "3", "--d", "4", "--seed", "1", "--protocol", "cs-iblt", "--transport", "tcp",
    ]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn usage_errors_exit_2() {
    let cases: [&[&str]; 5] = [
        &["reconcile", "--n", "10", "--k", "2", "--d", "11", "--seed", "0", "--protocol", "naive"],
        &["reconcile", "--n", "10", "--k", "2", "--d", "1", "--seed", "0", "--protocol", "polynomial"],
        &["bench", "--n", "300", "--k", "2", "--d-min", "1", "--d-max", "2", "--d-step", "1", "--trials", "1", "--protocols", "naive", "--out", "x.csv"],
        &["reconcile", "--n", "10", "--k", "2", "--d", "1", "--seed", "0", "--protocol", "naive", "--transport", "tcp"],
        &["frobnicate"],
    ];
    for args in cases {
        assert_eq!(csiblt(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn bench_then_plot() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    let svg = dir.path().join("sweep.svg");
    let o = csiblt(&[
        "bench", "--n", "30", "--k", "2", "--d-min", "2", "--d-max", "10", "--d-step", "4", "--trials", "2",
        "--protocols", "cs-iblt,iblt-guess,naive", "--out", csv.to_str().unwrap(), "--jobs", "1",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "protocol,n,k,d,trial,scalars_sent,rows_used,rounds,success,wall_ms");
    assert_eq!(lines.len(), 1 + 3 * 3 * 2);

    let o = csiblt(&["plot", "--in", csv.to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let first = std::fs::read(&svg).unwrap();
    assert_eq!(String::from_utf8_lossy(&first).matches("<polyline").count(), 3);
    csiblt(&["plot", "--in", csv.to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    assert_eq!(std::fs::read(&svg).unwrap(), first);

    std::fs::write(&csv, "garbage\n1\n").unwrap();
    let o = csiblt(&["plot", "--in", csv.to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn two_processes_over_tcp() {
    let common = ["reconcile", "--n", "60", "--k", "3", "--d", "8", "--seed", "11", "--protocol", "cs-iblt"];
    let mut receiver = Command::new(env!("CARGO_BIN_EXE_csiblt"))
        .args(common)
        .args(["--listen", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut out = BufReader::new(receiver.stdout.take().unwrap());
    let mut line = String::new();
    out.read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening=").unwrap().to_string();

    let sender = csiblt(&[&common[..], &["--connect", &addr]].concat());
    assert_eq!(sender.status.code(), Some(0), "{}", stdout(&sender));
    assert!(stdout(&sender).contains("Done"));

    let mut rest = String::new();
    out.read_line(&mut rest).unwrap();
    assert!(receiver.wait().unwrap().success());
    assert!(rest.contains("role=receiver") && rest.contains("success=true"), "{rest}");
}

#[test]
fn unreachable_peer_exits_3() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let o = csiblt(&[
        "reconcile", "--n", "10", "--k", "2", "--d", "2", "--seed", "0", "--protocol", "cs-iblt", "--connect",
        &port.to_string(),
    ]);
    assert_eq!(o.status.code(), Some(3));
}
