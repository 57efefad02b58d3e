mod common;

use std::fs;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use hl7_portal::client::PortalClient;

fn client(port: u16) -> PortalClient {
    let c = PortalClient::connect("127.0.0.1", port, Duration::from_secs(2)).unwrap();
    c.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    c
}

fn use_sample(c: &mut PortalClient, mock_port: u16, lang: &str) -> String {
    assert_eq!(
        c.send(&format!("conectare(127.0.0.1, {mock_port}, demo, demo);"))
            .unwrap(),
        "OK"
    );
    c.send(&format!("utilizarePacient({SAMPLE_CNP}, {lang});"))
        .unwrap()
}

#[test]
fn language_switch_within_session() {
    let dir = tempfile::tempdir().unwrap();
    let mock = start_mock(&fixture("sample.fixture"), &[]);
    let portal = start_portal("simopac", &languages_dir(), &dir.path().join("log"), &[]);
    let mut c = client(portal.port());
    assert_eq!(use_sample(&mut c, mock.port(), "en"), "OK");
    assert_eq!(c.send("getDriversLicenseNumber();").unwrap(), "NOK");
    assert_eq!(c.send("ultimaEroare();").unwrap(), "Not present");
    assert_eq!(
        c.send(&format!("usePatient({SAMPLE_CNP}, ro);")).unwrap(),
        "OK"
    );
    assert_eq!(c.send("getBirthPlace();").unwrap(), "Suceava");
    // the last error outlives later successes and keeps its original text
    assert_eq!(c.send("getLastError();").unwrap(), "Not present");
}

#[test]
fn errors_are_reported_and_session_survives() {
    let dir = tempfile::tempdir().unwrap();
    let mock = start_mock(&fixture("sample.fixture"), &[]);
    let portal = start_portal("simopac", &languages_dir(), &dir.path().join("log"), &[]);
    let mut c = client(portal.port());
    assert_eq!(c.send("nume();").unwrap(), "NOK");
    assert_eq!(c.send("frobnicate();").unwrap(), "NOK");
    assert_eq!(c.send("nume(").unwrap(), "NOK");
    assert_eq!(c.send("utilizarePacient(1);").unwrap(), "NOK");
    assert_eq!(use_sample(&mut c, mock.port(), "xx"), "NOK");
    assert_eq!(
        c.send("ultimaEroare();").unwrap(),
        "HL7 files not found! Please choose another language!"
    );
    assert_eq!(
        c.send("utilizarePacient(9999999999999, ro);").unwrap(),
        "NOK"
    );
    assert_eq!(c.send("ultimaEroare();").unwrap(), "Nu exista date.");
    assert_eq!(
        c.send(&format!("utilizarePacient({SAMPLE_CNP}, ro);"))
            .unwrap(),
        "OK"
    );
    assert_eq!(c.send("nume();").unwrap(), "C. Marius");
}

#[test]
fn wrong_credentials_are_rejected_upstream() {
    let dir = tempfile::tempdir().unwrap();
    let mock = start_mock(
        &fixture("sample.fixture"),
        &["--user", "demo", "--password", "demo"],
    );
    let portal = start_portal("simopac", &languages_dir(), &dir.path().join("log"), &[]);
    let mut c = client(portal.port());
    assert_eq!(
        c.send(&format!(
            "conectare(127.0.0.1, {}, demo, nope);",
            mock.port()
        ))
        .unwrap(),
        "OK"
    );
    assert_eq!(
        c.send(&format!("utilizarePacient({SAMPLE_CNP}, ro);"))
            .unwrap(),
        "NOK"
    );
    assert_eq!(c.send("nume();").unwrap(), "NOK");
}

#[test]
fn logout_closes_and_is_logged() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log");
    let portal = start_portal("simopac", &languages_dir(), &log, &[]);
    let mut c = client(portal.port());
    assert_eq!(c.send("deconectare();").unwrap(), "OK");
    assert!(c.read_reply().is_err());
    let deadline = Instant::now() + Duration::from_secs(5);
    while !read_log(&log).iter().any(|r| r.direction == "DISCONNECT") {
        assert!(Instant::now() < deadline, "no DISCONNECT record");
        std::thread::sleep(Duration::from_millis(10));
    }
    let dirs: Vec<_> = read_log(&log).into_iter().map(|r| r.direction).collect();
    assert_eq!(dirs, ["CONNECT", "RECV", "SEND", "DISCONNECT"]);
}

#[test]
fn clients_over_the_limit_are_turned_away() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log");
    let portal = start_portal("simopac", &languages_dir(), &log, &["--max-clients", "1"]);
    let mut first = client(portal.port());
    assert_eq!(first.send("ultimaEroare();").unwrap(), "None");
    let mut second = client(portal.port());
    assert_eq!(second.read_reply().unwrap(), "NOK");
    assert!(second.read_reply().is_err());
    drop(first);
    let deadline = Instant::now() + Duration::from_secs(5);
    loop {
        let mut third = client(portal.port());
        if third
            .send("ultimaEroare();")
            .map(|r| r == "None")
            .unwrap_or(false)
        {
            break;
        }
        assert!(Instant::now() < deadline, "slot never freed");
        std::thread::sleep(Duration::from_millis(20));
    }
    assert!(read_log(&log)
        .iter()
        .any(|r| r.direction == "DIAG" && r.text.contains("rejected")));
}

#[cfg(unix)]
#[test]
fn sighup_reloads_languages() {
    let dir = tempfile::tempdir().unwrap();
    let langs = dir.path().join("languages");
    fs::create_dir(&langs).unwrap();
    for e in fs::read_dir(languages_dir()).unwrap() {
        let e = e.unwrap();
        fs::copy(e.path(), langs.join(e.file_name())).unwrap();
    }
    let mock = start_mock(&fixture("sample.fixture"), &[]);
    let portal = start_portal("simopac", &langs, &dir.path().join("log"), &[]);
    let mut c = client(portal.port());
    assert_eq!(use_sample(&mut c, mock.port(), "de"), "NOK");

    let mut registry = fs::read_to_string(langs.join("languages.txt")).unwrap();
    registry.push_str("Deutsch (de)\n");
    fs::write(langs.join("languages.txt"), registry).unwrap();
    fs::write(
        langs.join("-files not found-.de"),
        "HL7-Dateien nicht gefunden!",
    )
    .unwrap();
    fs::write(langs.join("-none-.de"), "Keine").unwrap();
    fs::write(langs.join("-not present-.de"), "Nicht vorhanden").unwrap();
    let status = Command::new("kill")
        .args(["-HUP", &portal.pid().to_string()])
        .status()
        .unwrap();
    assert!(status.success());

    let deadline = Instant::now() + Duration::from_secs(5);
    while c
        .send(&format!("utilizarePacient({SAMPLE_CNP}, de);"))
        .unwrap()
        != "OK"
    {
        assert!(Instant::now() < deadline, "de never became available");
        std::thread::sleep(Duration::from_millis(20));
    }
    assert_eq!(c.send("serieCarteIdentitate();").unwrap(), "NOK");
    assert_eq!(c.send("ultimaEroare();").unwrap(), "Nicht vorhanden");
}

#[test]
fn client_script_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mock = start_mock(&fixture("sample.fixture"), &[]);
    let portal = start_portal("simopac", &languages_dir(), &dir.path().join("log"), &[]);
    let script = dir.path().join("session.txt");
    fs::write(
        &script,
        format!("# example\nconectare(127.0.0.1, {}, demo, demo);\nutilizarePacient({SAMPLE_CNP}, ro);\n\nnume();\nserieCarteIdentitate();\n", mock.port()),
    )
    .unwrap();
    let run = |strict: bool| {
        let mut cmd = Command::new(CLIENT_BIN);
        cmd.args(["--port", &portal.port().to_string(), "--script"])
            .arg(&script);
        if strict {
            cmd.arg("--strict");
        }
        cmd.output().unwrap()
    };
    let out = run(false);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(replies(&text), ["OK", "OK", "C. Marius", "NOK"]);
    assert!(text.starts_with("conectare(127.0.0.1, "));
    assert_eq!(run(true).status.code(), Some(1));

    let closed = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let out = run_client(closed, &["nume();".to_string()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn interactive_client_prints_replies_only() {
    use std::io::Write;
    let dir = tempfile::tempdir().unwrap();
    let portal = start_portal("simopac", &languages_dir(), &dir.path().join("log"), &[]);
    let mut child = Command::new(CLIENT_BIN)
        .args(["--port", &portal.port().to_string()])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"getLastError();\nnume();\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "None\nNOK\n");
}

#[test]
fn portal_refuses_missing_languages() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(PORTAL_BIN)
        .args(["--port", "0", "--languages-dir"])
        .arg(dir.path())
        .arg("--log-file")
        .arg(dir.path().join("log"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = Command::new(PORTAL_BIN)
        .args(["--port", "0", "--mapping", "nosuch.map", "--languages-dir"])
        .arg(languages_dir())
        .arg("--log-file")
        .arg(dir.path().join("log"))
        .output()
        .unwrap();
    assert!(!out.status.success());
}
