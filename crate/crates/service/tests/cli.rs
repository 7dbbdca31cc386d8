use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

struct Cli {
    dir: tempfile::TempDir,
}

impl Cli {
    fn new() -> Self {
        Cli { dir: tempfile::tempdir().unwrap() }
    }

    fn data(&self) -> PathBuf {
        self.dir.path().join("data")
    }

    fn run(&self, args: &[&str]) -> Output {
        self.run_with(args, "")
    }

    fn run_with(&self, args: &[&str], stdin: &str) -> Output {
        let mut child = Command::new(env!("CARGO_BIN_EXE_flowcq"))
            .arg("--data-dir")
            .arg(self.data())
            .args(args)
            .env_remove("FLOWCQ_DATA_DIR")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
        child.wait_with_output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }
}

fn fixture_arg(name: &str) -> String {
    fixture(name).to_string_lossy().into_owned()
}

#[test]
fn state_persists_between_invocations() {
    let cli = Cli::new();
    let d = cli.ok(&["deploy", &fixture_arg("case_management.dcr.xml")]);
    assert!(d.starts_with("model 3 version 1 (dcr,"), "{d}");
    assert_eq!(cli.ok(&["start", "3"]).trim(), "1");
    assert_eq!(cli.ok(&["enabled", "1"]), "Create Case\n");
    let sent = cli.ok(&["send", "1", "Create Case"]);
    assert!(sent.starts_with("3,1,Create Case, completed, {}, "), "{sent}");
    assert_eq!(cli.ok(&["enabled", "1"]), "Lock case\nClose Case\nSchedule Meeting\nUpload document\n");
    assert!(cli.ok(&["state", "1"]).lines().count() >= 8);
    assert_eq!(cli.ok(&["cases"]), "1 model=3 version=1 running\n");
    let log = cli.ok(&["log", "--case", "1"]);
    assert_eq!(log.lines().count(), 2);
    let nd = cli.ok(&["log", "--format", "ndjson"]);
    assert!(nd.lines().all(|l| l.starts_with("{\"pmID\":3,")));
}

#[test]
fn exit_codes() {
    let cli = Cli::new();
    let out = cli.run(&["send", "9", "A"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not found"));
    assert_eq!(cli.run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(cli.run(&["start", "3", "novalue"]).status.code(), Some(1));
    assert_eq!(cli.run(&["--help"]).status.code(), Some(0));

    let model = cli.dir.path().join("fault.bpmn");
    std::fs::write(
        &model,
        r#"<definitions xmlns="http://www.omg.org/spec/BPMN/20100524/MODEL"><process id="p" modelId="4" version="1">
<startEvent id="SE"/><userTask id="T"/><exclusiveGateway id="XS"/><endEvent id="E1"/><endEvent id="E2"/>
<sequenceFlow id="f1" sourceRef="SE" targetRef="T"/><sequenceFlow id="f2" sourceRef="T" targetRef="XS"/>
<sequenceFlow id="f3" sourceRef="XS" targetRef="E1"><conditionExpression>n / d &gt; 1</conditionExpression></sequenceFlow>
<sequenceFlow id="f4" sourceRef="XS" targetRef="E2"><conditionExpression>n / d &lt;= 1</conditionExpression></sequenceFlow>
</process></definitions>"#,
    )
    .unwrap();
    cli.ok(&["deploy", &model.to_string_lossy()]);
    cli.ok(&["start", "4", "n=1", "d=0"]);
    let out = cli.run(&["send", "1", "T"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(cli.ok(&["cases"]), "1 model=4 version=1 faulted\n");
}

/// Splits the sample log into executed nodes and offer lines.
fn rhythm(text: &str) -> Vec<String> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| match l.trim_start().strip_prefix("Available tasks are:") {
            Some(rest) => format!("offer:{}", rest.trim()),
            None => format!("event:{}", l.split(',').take(4).map(str::trim).collect::<Vec<_>>().join(",")),
        })
        .collect()
}

#[test]
fn run_interactive_follows_the_sample_session() {
    let cli = Cli::new();
    let want = std::fs::read_to_string(fixture("expected/case_management_dcr.log")).unwrap();
    let choices: Vec<String> = want
        .lines()
        .filter(|l| l.starts_with("3,1,"))
        .map(|l| l.split(',').nth(2).unwrap().trim().to_string())
        .collect();
    // a wrong pick is re-prompted, numbers pick by position
    let mut input = String::from("Nonsense\n1\n\n");
    for c in &choices[1..] {
        input.push_str(&format!("{c}\n\n"));
    }
    let out = cli.run_with(&["run-interactive", &fixture_arg("case_management.dcr.xml")], &input);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let got = String::from_utf8(out.stdout).unwrap();
    let mut expected = vec!["offer:Create Case".to_string()];
    expected.extend(rhythm(&want));
    assert_eq!(rhythm(&got), expected, "{got}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("not offered"));
    assert_eq!(cli.ok(&["cases"]), "1 model=3 version=1 completed\n");
}

#[test]
fn run_interactive_reads_payloads() {
    let cli = Cli::new();
    cli.ok(&["deploy", &fixture_arg("running_example.bpmn")]);
    let input = "A\nneedB=true\nB\n\nC\n\nD\n\nE\nagain=false\n";
    let out = cli.run_with(&["run-interactive", "2", "needB=false", "again=false"], input);
    let got = String::from_utf8(out.stdout.clone()).unwrap();
    assert!(out.status.success(), "{got}{}", String::from_utf8_lossy(&out.stderr));
    assert!(got.contains("2,1,A, completed, {needB=true;}"), "{got}");
    assert!(got.contains("2,1,AS-1, completed, {again=false; needB=true;}"), "{got}");
    assert!(got.contains("\tAvailable tasks are: B, C, D\n"), "{got}");
    assert!(got.trim_end().ends_with("Available tasks are: None"), "{got}");
}

#[test]
fn replay_reports_final_statuses() {
    let cli = Cli::new();
    cli.ok(&["deploy", &fixture_arg("and_interleave.bpmn")]);
    cli.ok(&["start", "1"]);
    cli.ok(&["start", "1"]);
    cli.ok(&["send", "1", "A"]);
    cli.ok(&["send", "1", "B"]);
    let from_dir = cli.ok(&["replay", &cli.data().to_string_lossy()]);
    assert!(from_dir.contains("case 1: completed\ncase 2: running\n"), "{from_dir}");
    assert!(from_dir.contains("log reproduced"), "{from_dir}");

    let export = cli.dir.path().join("export.ndjson");
    std::fs::write(&export, cli.ok(&["log", "--format", "ndjson"])).unwrap();
    let from_file = Cli::new().ok(&["replay", &export.to_string_lossy(), "--model", &fixture_arg("and_interleave.bpmn")]);
    assert_eq!(from_file, from_dir);
}

#[test]
fn serve_answers_over_tcp() {
    use std::io::{BufRead, BufReader, Read};
    let cli = Cli::new();
    cli.ok(&["deploy", &fixture_arg("case_management.dcr.xml")]);
    let mut child = Command::new(env!("CARGO_BIN_EXE_flowcq"))
        .arg("--data-dir")
        .arg(cli.data())
        .args(["serve", "--addr", "127.0.0.1:0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect("listen banner").to_string();
    let mut conn = std::net::TcpStream::connect(&addr).unwrap();
    write!(conn, "GET /models HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    conn.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains("\"model\":3"), "{resp}");
}
