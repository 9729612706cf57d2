use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

const SCENARIO: &str = "\
seed 5
route 192.0.2.0/24 64500
route 2a00:1::/32 64500
country 64500 DE
ptr 192.0.2.1 a.example
ptr 192.0.2.2 b.example
aaaa a.example 2a00:1::1
aaaa b.example 2a00:1::2
a a.example 192.0.2.1
a b.example 192.0.2.2
echo 2a00:1::1 all
tcp 2a00:1::1 443 accept
";

fn ptrsweep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptrsweep")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(ptrsweep(&[]).status.code(), Some(1));
    assert_eq!(ptrsweep(&["sweep-ptr", "--bogus"]).status.code(), Some(1));
    assert_eq!(ptrsweep(&["probe", "--ports", "80,http"]).status.code(), Some(1));
    assert_eq!(ptrsweep(&["--help"]).status.code(), Some(0));
}

#[test]
fn pair_before_sweep_a_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let o = ptrsweep(&["pair", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sweep-a"), "{}", stderr(&o));
}

#[test]
fn simnet_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.in");
    fs::write(&scenario, SCENARIO).unwrap();
    let out = dir.path().join("run");
    let args = ["simnet", "run", "--scenario", s(&scenario), "--out", s(&out), "--ports", "443"];
    let o = ptrsweep(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("report: complete"), "{stdout}");
    let report = fs::read_to_string(out.join("report.json")).unwrap();
    assert!(report.contains("\"icmp_responsive\": 1"), "{report}");
    let again = ptrsweep(&args);
    assert!(String::from_utf8_lossy(&again.stdout).contains("report: already complete"));

    let bad = dir.path().join("bad.in");
    fs::write(&bad, "aaaa x\n").unwrap();
    let o = ptrsweep(&["simnet", "run", "--scenario", s(&bad), "--out", s(&dir.path().join("r2"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
}

#[test]
fn staged_run_over_loopback_resolver() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.in");
    fs::write(&scenario, SCENARIO).unwrap();
    let mut server = Command::new(env!("CARGO_BIN_EXE_ptrsweep"))
        .args(["simnet", "serve", "--scenario", s(&scenario), "--listen", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("serving on ").unwrap().to_string();

    let routes = dir.path().join("routes.txt");
    fs::write(&routes, "192.0.2.0/24\t64500\n2a00:1::/32\t64500\n").unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, format!("resolver = {addr}\ndns_timeout_ms = 2000\n")).unwrap();
    let out = dir.path().join("run");
    let common = ["--out", s(&out), "--config", s(&cfg)];
    let step = |stage: &str, extra: &[&str]| {
        let mut args = vec![stage];
        args.extend(common);
        args.extend(extra);
        let o = ptrsweep(&args);
        assert_eq!(o.status.code(), Some(0), "{stage}: {}", stderr(&o));
        String::from_utf8_lossy(&o.stdout).into_owned()
    };
    let ptr = step("sweep-ptr", &["--routes", s(&routes)]);
    assert!(ptr.contains("category_noerror = 2"), "{ptr}");
    assert!(ptr.contains("queries = 256"), "{ptr}");
    step("sweep-aaaa", &[]);
    step("sweep-a", &[]);
    step("classify", &[]);
    let pair = step("pair", &[]);
    assert!(pair.contains("pairs = 2"), "{pair}");
    assert_eq!(fs::read_to_string(out.join("pairs.csv")).unwrap().lines().count(), 3);
    server.kill().unwrap();
    let _ = server.wait();

    // Excluding the only AS leaves nothing to probe, so no packets leave the host.
    let excl = dir.path().join("asns.txt");
    fs::write(&excl, "AS64500\n").unwrap();
    let pairs = out.join("pairs.csv");
    let probe = step("probe", &["--pairs", s(&pairs), "--exclude", s(&excl), "--seed", "7"]);
    assert!(probe.contains("targets = 0"), "{probe}");
    assert!(probe.contains("skipped_excluded = 4"), "{probe}");
    let report = step("report", &[]);
    assert!(report.contains("icmp_targets = 0"), "{report}");

    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    for stage in ["sweep-ptr", "sweep-aaaa", "sweep-a", "classify", "pair", "probe", "report"] {
        assert!(manifest.contains(&format!("\"{stage}\"")), "{stage}");
    }
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "pace = not-a-number\n").unwrap();
    let o = ptrsweep(&["probe", "--out", s(dir.path()), "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    // With the flag given the config value is never consulted; the run then
    // stops on the missing classify stage.
    let o = ptrsweep(&["probe", "--out", s(dir.path()), "--config", s(&cfg), "--pace", "1000"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("classify"));
}
